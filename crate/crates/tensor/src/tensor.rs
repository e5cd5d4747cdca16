use serde::{Deserialize, Serialize};

use crate::error::{Result, TensorError};

/// Dense row-major array of `f64` with an explicit shape.
///
/// Images use channels-rows-cols layout. Layers operate on one sample at a
/// time, so a batch dimension only appears in caller-side containers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.len() > 4 || shape.contains(&0) {
        return Err(TensorError::InvalidShape(shape.to_vec()));
    }
    Ok(shape.iter().product())
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let expected = check_shape(shape)?;
        if data.len() != expected {
            return Err(TensorError::LengthMismatch {
                shape: shape.to_vec(),
                expected,
                found: data.len(),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = check_shape(shape).expect("invalid tensor shape");
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n = check_shape(shape).expect("invalid tensor shape");
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn zeros_like(other: &Tensor) -> Self {
        Self::zeros(&other.shape)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Self::new(shape, self.data)
    }

    /// `(channels, rows, cols)` of an order-3 tensor.
    pub fn chw(&self, op: &'static str) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(TensorError::RankMismatch {
                op,
                expected: 3,
                found: self.shape.clone(),
            }),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `self += alpha * other`; shapes must hold the same number of values.
    pub fn add_scaled(&mut self, other: &Tensor, alpha: f64) -> Result<()> {
        if self.data.len() != other.data.len() {
            return Err(TensorError::LengthMismatch {
                shape: self.shape.clone(),
                expected: self.data.len(),
                found: other.data.len(),
            });
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }

    /// Stacks order-3 tensors with equal spatial size along the channel axis.
    pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
        let (_, h, w) = parts
            .first()
            .ok_or_else(|| TensorError::InvalidShape(vec![]))?
            .chw("concat")?;
        let mut channels = 0;
        let mut data = Vec::new();
        for p in parts {
            let (c, ph, pw) = p.chw("concat")?;
            if ph != h {
                return Err(TensorError::DimensionMismatch {
                    op: "concat",
                    axis: "rows",
                    expected: h,
                    found: ph,
                });
            }
            if pw != w {
                return Err(TensorError::DimensionMismatch {
                    op: "concat",
                    axis: "cols",
                    expected: w,
                    found: pw,
                });
            }
            channels += c;
            data.extend_from_slice(&p.data);
        }
        Tensor::new(&[channels, h, w], data)
    }

    /// Inverse of [`Tensor::concat_channels`].
    pub fn split_channels(&self, counts: &[usize]) -> Result<Vec<Tensor>> {
        let (c, h, w) = self.chw("split")?;
        let total: usize = counts.iter().sum();
        if total != c {
            return Err(TensorError::DimensionMismatch {
                op: "split",
                axis: "channels",
                expected: c,
                found: total,
            });
        }
        let mut out = Vec::with_capacity(counts.len());
        let mut offset = 0;
        for &n in counts {
            let len = n * h * w;
            out.push(Tensor::new(&[n, h, w], self.data[offset..offset + len].to_vec())?);
            offset += len;
        }
        Ok(out)
    }
}
