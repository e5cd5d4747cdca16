//! Central finite-difference checks of [`backward`](crate::backward).
//!
//! The scalar probed is `sum(w * f(x))` for a fixed random `w`, so every
//! output contributes. Dropout layers run in training mode with an RNG that is
//! reseeded before every forward pass, which keeps the mask fixed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::network::{Mode, Network, ParamKey};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    pub step: f64,
    /// Entries probed per parameter tensor; larger tensors are subsampled.
    pub max_entries: usize,
    /// Magnitudes below this are compared absolutely.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            max_entries: 24,
            floor: 1e-6,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// Location of the worst entry, e.g. `3.weight[17]` or `input[4]`.
    pub worst: String,
}

impl GradCheckReport {
    fn record(&mut self, what: impl FnOnce() -> String, analytic: f64, numeric: f64, floor: f64) {
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor);
        self.checked += 1;
        if rel > self.max_rel_error || self.worst.is_empty() {
            self.max_rel_error = self.max_rel_error.max(rel);
            self.worst = what();
        }
    }

    pub fn merge(&mut self, other: &GradCheckReport) {
        self.checked += other.checked;
        if other.max_rel_error > self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst.clone();
        }
    }
}

fn probe(net: &Network, input: &Tensor, weights: &Tensor, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (y, _) = net.forward(input, Mode::Train(&mut rng))?;
    Ok(y.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum())
}

fn entries(len: usize, max: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if len <= max {
        (0..len).collect()
    } else {
        (0..max).map(|_| rng.gen_range(0..len)).collect()
    }
}

/// Compares analytic parameter and input gradients with central differences.
pub fn check_network(net: &Network, input: &Tensor, seed: u64, cfg: GradCheckConfig) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out_shape = net.spec.output_shape()?;
    let weights = Tensor::from_fn(&out_shape, |_| rng.gen_range(-1.0..1.0));
    let dropout_seed = seed ^ 0x5eed;

    let mut mrng = ChaCha8Rng::seed_from_u64(dropout_seed);
    let (_, tape) = net.forward(input, Mode::Train(&mut mrng))?;
    let back = net.backward(tape, &weights, true)?;

    let h = cfg.step;
    let mut report = GradCheckReport::default();
    let mut probe_net = net.clone();
    let keys: Vec<ParamKey> = net.state.params.keys().cloned().collect();
    for key in keys {
        let analytic = back.params.get(&key).expect("gradient for every parameter").clone();
        for idx in entries(analytic.len(), cfg.max_entries, &mut rng) {
            let orig = net.state.params[&key].data()[idx];
            let param = probe_net.state.params.get_mut(&key).expect("parameter");
            param.data_mut()[idx] = orig + h;
            let plus = probe(&probe_net, input, &weights, dropout_seed)?;
            let param = probe_net.state.params.get_mut(&key).expect("parameter");
            param.data_mut()[idx] = orig - h;
            let minus = probe(&probe_net, input, &weights, dropout_seed)?;
            probe_net.state.params.get_mut(&key).expect("parameter").data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            report.record(|| format!("{key}[{idx}]"), analytic.data()[idx], numeric, cfg.floor);
        }
    }

    let analytic = back.input.expect("input gradient requested");
    let mut x = input.clone();
    for idx in entries(input.len(), cfg.max_entries, &mut rng) {
        let orig = input.data()[idx];
        x.data_mut()[idx] = orig + h;
        let plus = probe(net, &x, &weights, dropout_seed)?;
        x.data_mut()[idx] = orig - h;
        let minus = probe(net, &x, &weights, dropout_seed)?;
        x.data_mut()[idx] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        report.record(|| format!("input[{idx}]"), analytic.data()[idx], numeric, cfg.floor);
    }
    Ok(report)
}
