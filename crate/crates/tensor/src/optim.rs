//! Plain SGD with a step-halving schedule, and Adadelta.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TensorError};
use crate::network::{Gradients, ModelState};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptimizerKind {
    Sgd,
    Adadelta,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    /// Initial step size for SGD; a constant multiplier on the Adadelta update.
    pub learning_rate: f64,
    /// SGD halves its step every this many epochs (0 disables the schedule).
    pub halve_every_epochs: u32,
    pub adadelta_rho: f64,
    pub adadelta_eps: f64,
    pub minibatch_size: usize,
}

impl OptimizerConfig {
    /// SGD starting at 0.1, halved every 15 epochs, minibatch 32.
    pub fn sgd() -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            learning_rate: 0.1,
            halve_every_epochs: 15,
            adadelta_rho: 0.95,
            adadelta_eps: 1e-6,
            minibatch_size: 32,
        }
    }

    /// Adadelta with rho 0.95, eps 1e-6, unit multiplier, minibatch 32.
    pub fn adadelta() -> Self {
        Self {
            kind: OptimizerKind::Adadelta,
            learning_rate: 1.0,
            ..Self::sgd()
        }
    }

    pub fn with_minibatch(mut self, size: usize) -> Self {
        self.minibatch_size = size;
        self
    }

    pub fn with_learning_rate(mut self, lr: f64) -> Self {
        self.learning_rate = lr;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TensorError::InvalidConfig(m.to_string()));
        // Zero is accepted so a frozen run can be expressed as a config.
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(self.adadelta_rho > 0.0 && self.adadelta_rho < 1.0) {
            return bad("adadelta_rho must lie in (0, 1)");
        }
        if !(self.adadelta_eps > 0.0 && self.adadelta_eps.is_finite()) {
            return bad("adadelta_eps must be positive");
        }
        if self.minibatch_size == 0 {
            return bad("minibatch_size must be at least 1");
        }
        Ok(())
    }

    /// `lr0 * 2^-floor(epoch / halve_every_epochs)`.
    pub fn learning_rate_at(&self, epoch: u32) -> f64 {
        match self.kind {
            OptimizerKind::Adadelta => self.learning_rate,
            OptimizerKind::Sgd if self.halve_every_epochs == 0 => self.learning_rate,
            OptimizerKind::Sgd => {
                let halvings = (epoch / self.halve_every_epochs).min(1074) as i32;
                self.learning_rate * 2f64.powi(-halvings)
            }
        }
    }
}

fn grad_for<'a>(grads: &'a Gradients, key: &crate::ParamKey, param: &Tensor) -> Result<&'a Tensor> {
    let g = grads
        .get(key)
        .ok_or_else(|| TensorError::MissingGradient(key.to_string()))?;
    if g.shape() != param.shape() {
        return Err(TensorError::LengthMismatch {
            shape: param.shape().to_vec(),
            expected: param.len(),
            found: g.len(),
        });
    }
    Ok(g)
}

/// `p <- p - lr(epoch) * g` for every parameter.
pub fn sgd_step(state: &mut ModelState, grads: &Gradients, config: &OptimizerConfig, epoch: u32) -> Result<()> {
    config.validate()?;
    let lr = config.learning_rate_at(epoch);
    for (key, p) in state.params.iter() {
        grad_for(grads, key, p)?;
    }
    for (key, p) in state.params.iter_mut() {
        p.add_scaled(&grads.0[key], -lr)?;
    }
    Ok(())
}

/// One Adadelta update. Slot 0 holds the running mean of squared gradients,
/// slot 1 the running mean of squared updates.
pub fn adadelta_step(state: &mut ModelState, grads: &Gradients, config: &OptimizerConfig) -> Result<()> {
    config.validate()?;
    let (rho, eps, lr) = (config.adadelta_rho, config.adadelta_eps, config.learning_rate);
    for (key, p) in state.params.iter() {
        grad_for(grads, key, p)?;
    }
    for (key, p) in state.params.iter_mut() {
        let g = &grads.0[key];
        let slots = state
            .slots
            .entry(*key)
            .or_insert_with(|| vec![Tensor::zeros_like(p), Tensor::zeros_like(p)]);
        if slots.len() != 2 {
            *slots = vec![Tensor::zeros_like(p), Tensor::zeros_like(p)];
        }
        let (sq_grad, rest) = slots.split_at_mut(1);
        let (sq_grad, sq_update) = (sq_grad[0].data_mut(), rest[0].data_mut());
        for (((w, &gi), v), u) in p.data_mut().iter_mut().zip(g.data()).zip(sq_grad).zip(sq_update) {
            *v = rho * *v + (1.0 - rho) * gi * gi;
            let delta = ((*u + eps).sqrt() / (*v + eps).sqrt()) * gi;
            *u = rho * *u + (1.0 - rho) * delta * delta;
            *w -= lr * delta;
        }
    }
    Ok(())
}

/// Dispatches on `config.kind`.
pub fn step(state: &mut ModelState, grads: &Gradients, config: &OptimizerConfig, epoch: u32) -> Result<()> {
    match config.kind {
        OptimizerKind::Sgd => sgd_step(state, grads, config, epoch),
        OptimizerKind::Adadelta => adadelta_step(state, grads, config),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::ParamKey;

    fn single(value: f64) -> ModelState {
        let mut s = ModelState::default();
        s.params.insert(ParamKey::weight(0), Tensor::full(&[1], value));
        s
    }

    fn grad(value: f64) -> Gradients {
        let mut g = Gradients::default();
        g.0.insert(ParamKey::weight(0), Tensor::full(&[1], value));
        g
    }

    #[test]
    fn sgd_schedule_values() {
        let cfg = OptimizerConfig::sgd();
        assert_eq!(cfg.learning_rate_at(0), 0.1);
        assert_eq!(cfg.learning_rate_at(14), 0.1);
        assert_eq!(cfg.learning_rate_at(15), 0.05);
        assert_eq!(cfg.learning_rate_at(30), 0.025);
        assert_eq!(cfg.learning_rate_at(45), 0.0125);
    }

    #[test]
    fn sgd_schedule_is_non_increasing() {
        let cfg = OptimizerConfig::sgd();
        for e in 0..200 {
            assert!(cfg.learning_rate_at(e + 1) <= cfg.learning_rate_at(e));
        }
    }

    #[test]
    fn sgd_zero_gradient_keeps_params() {
        let mut s = single(0.3);
        sgd_step(&mut s, &grad(0.0), &OptimizerConfig::sgd(), 0).unwrap();
        assert_eq!(s.params[&ParamKey::weight(0)].data(), &[0.3]);
    }

    #[test]
    fn sgd_update_uses_scheduled_rate() {
        let mut s = single(1.0);
        sgd_step(&mut s, &grad(2.0), &OptimizerConfig::sgd(), 15).unwrap();
        assert!((s.params[&ParamKey::weight(0)].data()[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut s = single(1.0);
        let err = sgd_step(&mut s, &Gradients::default(), &OptimizerConfig::sgd(), 0).unwrap_err();
        assert!(matches!(err, TensorError::MissingGradient(k) if k == "0.weight"));
        assert!(adadelta_step(&mut s, &Gradients::default(), &OptimizerConfig::adadelta()).is_err());
    }

    #[test]
    fn adadelta_zero_gradient_keeps_params() {
        let mut s = single(-0.7);
        adadelta_step(&mut s, &grad(0.0), &OptimizerConfig::adadelta()).unwrap();
        assert_eq!(s.params[&ParamKey::weight(0)].data(), &[-0.7]);
    }

    #[test]
    fn adadelta_first_step_closed_form() {
        let cfg = OptimizerConfig::adadelta();
        for g in [1e-3, 0.5, -3.0] {
            let mut s = single(0.0);
            adadelta_step(&mut s, &grad(g), &cfg).unwrap();
            let (rho, eps) = (cfg.adadelta_rho, cfg.adadelta_eps);
            let expected = -(eps / ((1.0 - rho) * g * g + eps)).sqrt() * g;
            let got = s.params[&ParamKey::weight(0)].data()[0];
            assert!((got - expected).abs() <= 1e-15 * expected.abs().max(1e-300), "{got} vs {expected}");
            assert_eq!(s.slots[&ParamKey::weight(0)].len(), 2);
        }
    }

    #[test]
    fn config_validation() {
        assert!(OptimizerConfig::sgd().validate().is_ok());
        assert!(OptimizerConfig::sgd().with_learning_rate(-1.0).validate().is_err());
        assert!(OptimizerConfig::sgd().with_minibatch(0).validate().is_err());
        let mut c = OptimizerConfig::adadelta();
        c.adadelta_rho = 1.0;
        assert!(c.validate().is_err());
    }
}
