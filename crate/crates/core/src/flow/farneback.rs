//! Coarse-to-fine dense displacement from polynomial expansion matching.

use serde::{Deserialize, Serialize};

use super::expansion::{polynomial_expansion, PolyExpansion};
use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowParams {
    /// Pyramid levels at scale 0.5; coarse levels smaller than the window are
    /// dropped.
    pub levels: usize,
    pub window: usize,
    pub sigma: f64,
    pub iterations: usize,
    pub avg_window: usize,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            levels: 3,
            window: 7,
            sigma: 1.5,
            iterations: 3,
            avg_window: 11,
        }
    }
}

/// Displacement `(u, v)` in pixels from the first frame to the second: a
/// point at `p` in the first frame is found at `p + (u, v)` in the second.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    pub rows: usize,
    pub cols: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl FlowField {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            u: vec![0.0; rows * cols],
            v: vec![0.0; rows * cols],
        }
    }

    pub fn max_magnitude(&self) -> f64 {
        self.u.iter().zip(&self.v).map(|(u, v)| u.hypot(*v)).fold(0.0, f64::max)
    }
}

/// Bilinear read of a row-major grid with indices clamped to the border.
fn sample_clamped(grid: &[f64], rows: usize, cols: usize, y: f64, x: f64) -> f64 {
    let y = y.clamp(0.0, (rows - 1) as f64);
    let x = x.clamp(0.0, (cols - 1) as f64);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(rows - 1), (x0 + 1).min(cols - 1));
    let (fy, fx) = (y - y0 as f64, x - x0 as f64);
    let at = |r: usize, c: usize| grid[r * cols + c];
    (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x1)) + fy * ((1.0 - fx) * at(y1, x0) + fx * at(y1, x1))
}

/// Certainty-weighted 5-tap binomial blur followed by 2x decimation.
fn pyr_down(img: &Image) -> Image {
    const K: [f64; 5] = [1.0, 4.0, 6.0, 4.0, 1.0];
    let (rows, cols) = (img.rows().div_ceil(2), img.cols().div_ceil(2));
    Image::from_fn(rows, cols, |r, c| {
        let (mut acc, mut w) = (0.0, 0.0);
        for (i, ky) in K.iter().enumerate() {
            for (j, kx) in K.iter().enumerate() {
                let (y, x) = (2 * r as i64 + i as i64 - 2, 2 * c as i64 + j as i64 - 2);
                if let Some(v) = img.get_signed(y, x) {
                    if v != 0.0 {
                        acc += ky * kx * v;
                        w += ky * kx;
                    }
                }
            }
        }
        if w > 0.0 {
            acc / w
        } else {
            0.0
        }
    })
}

/// Separable box sum of size `n` with truncation at the borders.
fn box_sum(data: &[f64], rows: usize, cols: usize, n: usize) -> Vec<f64> {
    let h = n / 2;
    let mut tmp = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let lo = c.saturating_sub(h);
            let hi = (c + h).min(cols - 1);
            tmp[r * cols + c] = data[r * cols + lo..=r * cols + hi].iter().sum();
        }
    }
    let mut out = vec![0.0; rows * cols];
    for c in 0..cols {
        for r in 0..rows {
            let lo = r.saturating_sub(h);
            let hi = (r + h).min(rows - 1);
            out[r * cols + c] = (lo..=hi).map(|k| tmp[k * cols + c]).sum();
        }
    }
    out
}

/// One refinement: builds the per-pixel matching system around the current
/// estimate, averages it over the window and solves for the displacement.
fn refine(e1: &PolyExpansion, e2: &PolyExpansion, flow: &mut FlowField, avg_window: usize) {
    let (rows, cols) = (e1.rows, e1.cols);
    let n = rows * cols;
    let mut sys = vec![vec![0.0; n]; 5];
    let sample2 = |k: usize, y: f64, x: f64| sample_coeff(e2, k, y, x);
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            if e1.certainty[i] == 0.0 {
                continue;
            }
            let (du, dv) = (flow.u[i], flow.v[i]);
            let (x2, y2) = (c as f64 + du, r as f64 + dv);
            if x2 < 0.0 || y2 < 0.0 || x2 > (cols - 1) as f64 || y2 > (rows - 1) as f64 {
                continue;
            }
            let w = sample_clamped(&e2.certainty, rows, cols, y2, x2);
            if w <= 0.0 {
                continue;
            }
            let k1 = &e1.coeffs[i];
            let a11 = 0.5 * (k1[3] + sample2(3, y2, x2));
            let a22 = 0.5 * (k1[4] + sample2(4, y2, x2));
            let a12 = 0.25 * (k1[5] + sample2(5, y2, x2));
            let db1 = -0.5 * (sample2(1, y2, x2) - k1[1]) + a11 * du + a12 * dv;
            let db2 = -0.5 * (sample2(2, y2, x2) - k1[2]) + a12 * du + a22 * dv;
            // A'A and A'db for the symmetric 2x2 A.
            sys[0][i] = w * (a11 * a11 + a12 * a12);
            sys[1][i] = w * (a11 * a12 + a12 * a22);
            sys[2][i] = w * (a12 * a12 + a22 * a22);
            sys[3][i] = w * (a11 * db1 + a12 * db2);
            sys[4][i] = w * (a12 * db1 + a22 * db2);
        }
    }
    let sums: Vec<Vec<f64>> = sys.iter().map(|s| box_sum(s, rows, cols, avg_window)).collect();
    for i in 0..n {
        let (g11, g12, g22, h1, h2) = (sums[0][i], sums[1][i], sums[2][i], sums[3][i], sums[4][i]);
        let det = g11 * g22 - g12 * g12;
        let scale = (g11 + g22) * (g11 + g22);
        if !(det > 1e-9 * scale) || !(scale > 0.0) {
            continue;
        }
        flow.u[i] = (g22 * h1 - g12 * h2) / det;
        flow.v[i] = (g11 * h2 - g12 * h1) / det;
    }
}

fn sample_coeff(e: &PolyExpansion, k: usize, y: f64, x: f64) -> f64 {
    let (rows, cols) = (e.rows, e.cols);
    let y = y.clamp(0.0, (rows - 1) as f64);
    let x = x.clamp(0.0, (cols - 1) as f64);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(rows - 1), (x0 + 1).min(cols - 1));
    let (fy, fx) = (y - y0 as f64, x - x0 as f64);
    let at = |r: usize, c: usize| e.coeffs[r * cols + c][k];
    (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x1)) + fy * ((1.0 - fx) * at(y1, x0) + fx * at(y1, x1))
}

fn upsample_flow(coarse: &FlowField, rows: usize, cols: usize) -> FlowField {
    let mut out = FlowField::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            let (y, x) = ((r as f64 + 0.5) / 2.0 - 0.5, (c as f64 + 0.5) / 2.0 - 0.5);
            out.u[r * cols + c] = 2.0 * sample_clamped(&coarse.u, coarse.rows, coarse.cols, y, x);
            out.v[r * cols + c] = 2.0 * sample_clamped(&coarse.v, coarse.rows, coarse.cols, y, x);
        }
    }
    out
}

/// Dense flow from `prev` to `next`. Frames should hold values in `[0, 1]`
/// with 0 marking invalid pixels.
pub fn farneback_flow(prev: &Image, next: &Image, params: &FlowParams) -> Result<FlowField> {
    if (prev.rows(), prev.cols()) != (next.rows(), next.cols()) {
        return Err(Error::ShapeMismatch {
            what: "flow frames",
            expected: format!("{}x{}", prev.rows(), prev.cols()),
            found: format!("{}x{}", next.rows(), next.cols()),
        });
    }
    if params.levels == 0 || params.iterations == 0 || params.avg_window == 0 {
        return Err(Error::InvalidArgument(format!("flow needs at least one level, iteration and averaging tap: {params:?}")));
    }
    let mut pyramid = vec![(prev.clone(), next.clone())];
    while pyramid.len() < params.levels {
        let (a, b) = pyramid.last().expect("non-empty");
        let (a, b) = (pyr_down(a), pyr_down(b));
        if a.rows() < params.window || a.cols() < params.window {
            break;
        }
        pyramid.push((a, b));
    }
    let mut flow: Option<FlowField> = None;
    for (a, b) in pyramid.iter().rev() {
        let e1 = polynomial_expansion(a, params.window, params.sigma)?;
        let e2 = polynomial_expansion(b, params.window, params.sigma)?;
        let mut f = match flow {
            Some(coarse) => upsample_flow(&coarse, a.rows(), a.cols()),
            None => FlowField::zeros(a.rows(), a.cols()),
        };
        for _ in 0..params.iterations {
            refine(&e1, &e2, &mut f, params.avg_window);
        }
        flow = Some(f);
    }
    let flow = flow.expect("at least one level");
    if flow.u.iter().chain(&flow.v).any(|x| !x.is_finite()) {
        return Err(Error::Numeric("non-finite optical flow".into()));
    }
    Ok(flow)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn texture(rows: usize, cols: usize, shift: (f64, f64), phase: f64) -> Image {
        Image::from_fn(rows, cols, |r, c| {
            let (x, y) = (c as f64 - shift.0, r as f64 - shift.1);
            0.55 + 0.15 * (0.31 * x + 0.17 * y + phase).sin()
                + 0.12 * (0.23 * y - 0.11 * x + 1.3 * phase).cos()
                + 0.08 * (0.19 * x + 0.29 * y + 0.4).sin() * (0.13 * y + phase).cos()
        })
    }

    fn interior_mean(f: &FlowField, margin: usize) -> (f64, f64) {
        let (mut u, mut v, mut n) = (0.0, 0.0, 0.0);
        for r in margin..f.rows - margin {
            for c in margin..f.cols - margin {
                u += f.u[r * f.cols + c];
                v += f.v[r * f.cols + c];
                n += 1.0;
            }
        }
        (u / n, v / n)
    }

    #[test]
    fn identical_frames_give_zero_flow() {
        let a = texture(64, 64, (0.0, 0.0), 0.3);
        let f = farneback_flow(&a, &a, &FlowParams::default()).unwrap();
        assert!(f.max_magnitude() < 1e-3);
    }

    #[test]
    fn recovers_a_two_pixel_shift() {
        let a = texture(64, 64, (0.0, 0.0), 0.0);
        let b = texture(64, 64, (2.0, 0.0), 0.0);
        let f = farneback_flow(&a, &b, &FlowParams::default()).unwrap();
        let (u, v) = interior_mean(&f, 8);
        assert!((u - 2.0).abs() < 0.25 && v.abs() < 0.25, "({u}, {v})");
    }

    #[test]
    fn forward_backward_consistency() {
        let a = texture(64, 64, (0.0, 0.0), 1.0);
        let b = texture(64, 64, (1.5, -1.0), 1.0);
        let p = FlowParams::default();
        let fwd = interior_mean(&farneback_flow(&a, &b, &p).unwrap(), 8);
        let bwd = interior_mean(&farneback_flow(&b, &a, &p).unwrap(), 8);
        assert!((fwd.0 + bwd.0).abs() < 0.3 && (fwd.1 + bwd.1).abs() < 0.3, "{fwd:?} {bwd:?}");
    }

    #[test]
    fn holes_stay_finite_and_deterministic() {
        let mut a = texture(48, 40, (0.0, 0.0), 0.0);
        let mut b = texture(48, 40, (1.0, 1.0), 0.0);
        for r in 10..20 {
            for c in 5..30 {
                a.set(r, c, 0.0);
                b.set(r + 3, c, 0.0);
            }
        }
        let f = farneback_flow(&a, &b, &FlowParams::default()).unwrap();
        assert!(f.u.iter().chain(&f.v).all(|x| x.is_finite()));
        assert_eq!(f, farneback_flow(&a, &b, &FlowParams::default()).unwrap());
        let blank = Image::zeros(48, 40);
        assert_eq!(farneback_flow(&blank, &blank, &FlowParams::default()).unwrap().max_magnitude(), 0.0);
    }

    #[test]
    fn shape_mismatch() {
        assert!(farneback_flow(&Image::zeros(20, 20), &Image::zeros(20, 21), &FlowParams::default()).is_err());
    }
}
