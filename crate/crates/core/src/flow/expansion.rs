//! Per-pixel quadratic fit `f(p) ~ p'Ap + b'p + c` in local coordinates
//! `p = (dx, dy)`, weighted by a Gaussian applicability and by certainty
//! (zero pixels and out-of-frame pixels count for nothing).

use nalgebra::{Matrix2, Matrix6, Vector2, Vector6};

use crate::error::{Error, Result};
use crate::image::Image;

/// Coefficients of every pixel plus a 0/1 certainty (0 where the local fit
/// was not possible or the pixel itself is invalid).
#[derive(Clone, Debug, PartialEq)]
pub struct PolyExpansion {
    pub rows: usize,
    pub cols: usize,
    /// `[c, bx, by, axx, ayy, axy2]` where `axy2 = 2 * A[0][1]`.
    pub coeffs: Vec<[f64; 6]>,
    pub certainty: Vec<f64>,
}

impl PolyExpansion {
    pub fn a(&self, i: usize) -> Matrix2<f64> {
        let k = &self.coeffs[i];
        Matrix2::new(k[3], k[5] / 2.0, k[5] / 2.0, k[4])
    }

    pub fn b(&self, i: usize) -> Vector2<f64> {
        Vector2::new(self.coeffs[i][1], self.coeffs[i][2])
    }

    pub fn c(&self, i: usize) -> f64 {
        self.coeffs[i][0]
    }
}

fn basis(dx: f64, dy: f64) -> Vector6<f64> {
    Vector6::new(1.0, dx, dy, dx * dx, dy * dy, dx * dy)
}

pub fn polynomial_expansion(frame: &Image, window: usize, sigma: f64) -> Result<PolyExpansion> {
    if window < 3 || window.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("expansion window must be odd and >= 3, got {window}")));
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("applicability sigma must be positive, got {sigma}")));
    }
    let (rows, cols) = (frame.rows(), frame.cols());
    if rows < window || cols < window {
        return Err(Error::ShapeMismatch {
            what: "polynomial expansion",
            expected: format!("frame at least {window}x{window}"),
            found: format!("{rows}x{cols}"),
        });
    }
    let h = (window / 2) as i64;
    let mut taps = Vec::with_capacity(window * window);
    for dy in -h..=h {
        for dx in -h..=h {
            let a = (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp();
            taps.push((dx, dy, a, basis(dx as f64, dy as f64)));
        }
    }
    let full_g: Matrix6<f64> = taps.iter().map(|(_, _, a, b)| *a * b * b.transpose()).sum();
    let full_inv = full_g.try_inverse().expect("full applicability Gram matrix is invertible");

    let mut coeffs = vec![[0.0; 6]; rows * cols];
    let mut certainty = vec![0.0; rows * cols];
    for r in 0..rows as i64 {
        for c in 0..cols as i64 {
            let idx = (r as usize) * cols + c as usize;
            if frame.get(r as usize, c as usize) == 0.0 {
                continue;
            }
            let mut rhs = Vector6::zeros();
            let mut complete = true;
            for (dx, dy, a, b) in &taps {
                match frame.get_signed(r + dy, c + dx) {
                    Some(v) if v != 0.0 => rhs += *a * v * b,
                    _ => complete = false,
                }
            }
            let sol = if complete {
                Some(full_inv * rhs)
            } else {
                let mut g = Matrix6::zeros();
                for (dx, dy, a, b) in &taps {
                    if matches!(frame.get_signed(r + dy, c + dx), Some(v) if v != 0.0) {
                        g += *a * b * b.transpose();
                    }
                }
                g.cholesky().map(|ch| ch.solve(&rhs))
            };
            if let Some(s) = sol {
                if s.iter().all(|v| v.is_finite()) {
                    coeffs[idx] = [s[0], s[1], s[2], s[3], s[4], s[5]];
                    certainty[idx] = 1.0;
                }
            }
        }
    }
    Ok(PolyExpansion {
        rows,
        cols,
        coeffs,
        certainty,
    })
}
