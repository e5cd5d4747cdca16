//! Masked reconstruction loss, weighted angle loss and the Gaussian prior.

use depthpose_tensor::Tensor;

use crate::error::{Error, Result};

pub const MASK_ALPHA: f64 = 3.5;
pub const MASK_BETA: f64 = 2.5;
/// `(pitch, roll, yaw)` weights; yaw counts most.
pub const ANGLE_WEIGHTS: [f64; 3] = [0.2, 0.35, 0.45];

/// Unnormalized bivariate Gaussian centered at `(R/2, C/2)` with standard
/// deviations `R/alpha` and `C/beta`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMask {
    rows: usize,
    cols: usize,
    alpha: f64,
    beta: f64,
    weights: Vec<f64>,
}

impl GaussianMask {
    pub fn new(rows: usize, cols: usize, alpha: f64, beta: f64) -> Result<Self> {
        if rows < 2 || cols < 2 {
            return Err(Error::InvalidArgument(format!("mask needs at least 2x2, got {rows}x{cols}")));
        }
        if !(alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite()) {
            return Err(Error::InvalidArgument(format!("mask shape parameters must be positive, got {alpha}, {beta}")));
        }
        let (sr, sc) = (rows as f64 / alpha, cols as f64 / beta);
        let (mr, mc) = (rows as f64 / 2.0, cols as f64 / 2.0);
        let mut weights = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            let a = (i as f64 - mr) / sr;
            for j in 0..cols {
                let b = (j as f64 - mc) / sc;
                weights.push((-0.5 * (a * a + b * b)).exp());
            }
        }
        Ok(Self {
            rows,
            cols,
            alpha,
            beta,
            weights,
        })
    }

    /// 64x64 with the default shape parameters.
    pub fn face() -> Self {
        Self::new(64, 64, MASK_ALPHA, MASK_BETA).expect("valid constants")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.cols + j]
    }
}

/// `1/(RC) * sum(w * (pred - target)^2)` and its gradient with respect to
/// `pred`. Any tensor layout holding `R*C` values is accepted; the gradient
/// has the shape of `pred`.
pub fn ffd_loss(pred: &Tensor, target: &Tensor, mask: &GaussianMask) -> Result<(f64, Tensor)> {
    let n = mask.rows * mask.cols;
    if pred.len() != n || target.len() != n {
        return Err(Error::ShapeMismatch {
            what: "masked reconstruction loss",
            expected: format!("{} x {} values", mask.rows, mask.cols),
            found: format!("pred {:?}, target {:?}", pred.shape(), target.shape()),
        });
    }
    let inv = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut grad = Tensor::zeros_like(pred);
    for (((g, &p), &t), &w) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()).zip(&mask.weights) {
        let d = p - t;
        loss += d * d * w;
        *g = 2.0 * d * w * inv;
    }
    Ok((loss * inv, grad))
}

/// `sum_i |w_i * (pred_i - target_i)|` with subgradient `w_i * sign(residual)`,
/// zero at a zero residual.
pub fn weighted_l2(pred: &Tensor, target: &[f64], weights: &[f64; 3]) -> Result<(f64, Tensor)> {
    if pred.len() != 3 || target.len() != 3 {
        return Err(Error::ShapeMismatch {
            what: "weighted angle loss",
            expected: "3 angles".into(),
            found: format!("pred {:?}, target len {}", pred.shape(), target.len()),
        });
    }
    let mut loss = 0.0;
    let mut grad = Tensor::zeros_like(pred);
    for (i, g) in grad.data_mut().iter_mut().enumerate() {
        let r = pred.data()[i] - target[i];
        loss += (weights[i] * r).abs();
        *g = if r == 0.0 { 0.0 } else { weights[i].abs() * r.signum() };
    }
    Ok((loss, grad))
}

/// Plain squared error `sum (pred - target)^2`.
pub fn l2_loss(pred: &Tensor, target: &[f64]) -> Result<(f64, Tensor)> {
    if pred.len() != target.len() {
        return Err(Error::ShapeMismatch {
            what: "l2 loss",
            expected: format!("{} values", target.len()),
            found: format!("{:?}", pred.shape()),
        });
    }
    let mut loss = 0.0;
    let mut grad = Tensor::zeros_like(pred);
    for ((g, &p), &t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target) {
        let d = p - t;
        loss += d * d;
        *g = 2.0 * d;
    }
    Ok((loss, grad))
}
