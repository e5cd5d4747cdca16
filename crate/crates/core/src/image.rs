//! Single-channel row-major `f64` image. Depth images hold millimeters with
//! 0 marking a missing measurement.

use depthpose_tensor::Tensor;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                what: "image",
                expected: format!("{rows} x {cols} = {} values (non-empty)", rows * cols),
                found: format!("{} values", data.len()),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        assert!(rows > 0 && cols > 0, "image dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(rows > 0 && cols > 0, "image dimensions must be positive");
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    /// `None` outside the image.
    pub fn get_signed(&self, r: i64, c: i64) -> Option<f64> {
        if r < 0 || c < 0 || r >= self.rows as i64 || c >= self.cols as i64 {
            None
        } else {
            Some(self.get(r as usize, c as usize))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0.0).count()
    }

    /// `[1, rows, cols]` tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[1, self.rows, self.cols], self.data.clone()).expect("image shape is valid")
    }

    /// Accepts `[rows, cols]` or `[1, rows, cols]`.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match *t.shape() {
            [r, c] | [1, r, c] => Image::new(r, c, t.data().to_vec()),
            _ => Err(Error::ShapeMismatch {
                what: "image tensor",
                expected: "[rows, cols] or [1, rows, cols]".into(),
                found: format!("{:?}", t.shape()),
            }),
        }
    }

    /// Bilinear sample at fractional pixel indices (`(r, c)` is the center of
    /// pixel `r, c`). Out-of-frame neighbors are skipped; with `skip_zeros`, so are
    /// zero-valued ones. Remaining weights are renormalized; 0 if none remain.
    pub fn sample_bilinear(&self, y: f64, x: f64, skip_zeros: bool) -> f64 {
        let (y0, x0) = (y.floor(), x.floor());
        let (fy, fx) = (y - y0, x - x0);
        let (y0, x0) = (y0 as i64, x0 as i64);
        let mut acc = 0.0;
        let mut wsum = 0.0;
        for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
            for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
                let w = wy * wx;
                if w <= 0.0 {
                    continue;
                }
                match self.get_signed(y0 + dy, x0 + dx) {
                    Some(v) if !(skip_zeros && v == 0.0) => {
                        acc += w * v;
                        wsum += w;
                    }
                    _ => {}
                }
            }
        }
        if wsum <= 1e-9 {
            0.0
        } else {
            acc / wsum
        }
    }
}
