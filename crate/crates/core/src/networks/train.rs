//! Minibatch training shared by every network.
//!
//! Per-sample gradients are computed in parallel groups of `jobs` samples and
//! summed strictly in sample order, so results do not depend on `jobs`.
//! Dropout masks come from a generator keyed by (seed, epoch, sample index).

use std::fmt::Write as _;
use std::path::Path;

use depthpose_tensor::optim;
use depthpose_tensor::{Gradients, Mode, ModelState, Network, OptimizerConfig, Tensor};
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ffd_loss, l2_loss, weighted_l2, GaussianMask, ANGLE_WEIGHTS};
use crate::seed::derive_seed;

/// Adadelta eps used for the face reconstruction net.
pub const FFD_ADADELTA_EPS: f64 = 1e-12;
/// Step multiplier applied on top of the Adadelta update for that net.
pub const FFD_ADADELTA_MULTIPLIER: f64 = 300.0;

#[derive(Clone, Debug, PartialEq)]
pub enum Loss {
    WeightedL2([f64; 3]),
    L2,
    Masked(GaussianMask),
}

impl Loss {
    pub fn angles() -> Self {
        Loss::WeightedL2(ANGLE_WEIGHTS)
    }

    pub fn eval(&self, pred: &Tensor, target: &[f64]) -> Result<(f64, Tensor)> {
        match self {
            Loss::WeightedL2(w) => weighted_l2(pred, target, w),
            Loss::L2 => l2_loss(pred, target),
            Loss::Masked(mask) => {
                let t = Tensor::new(&[target.len()], target.to_vec())?;
                ffd_loss(pred, &t, mask)
            }
        }
    }
}

/// A model with one or more trainable parameter sets.
pub trait Trainable: Sync {
    type Input: Sync;

    /// Loss of one sample and the gradient for each parameter set, in the
    /// order of [`Trainable::states_mut`].
    fn sample_grad(&self, input: &Self::Input, target: &[f64], loss: &Loss, rng: &mut dyn RngCore)
        -> Result<(f64, Vec<Gradients>)>;

    fn states_mut(&mut self) -> Vec<&mut ModelState>;
}

impl Trainable for Network {
    type Input = Tensor;

    fn sample_grad(&self, input: &Tensor, target: &[f64], loss: &Loss, rng: &mut dyn RngCore) -> Result<(f64, Vec<Gradients>)> {
        let (y, tape) = self.forward(input, Mode::Train(rng))?;
        let (l, g) = loss.eval(&y, target)?;
        let back = self.backward(tape, &g, false)?;
        Ok((l, vec![back.params]))
    }

    fn states_mut(&mut self) -> Vec<&mut ModelState> {
        vec![&mut self.state]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: u32,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    pub jobs: usize,
}

impl TrainConfig {
    /// SGD with minibatch 32; branches, locnet and the shoulder net.
    pub fn sgd(epochs: u32) -> Self {
        Self {
            epochs,
            optimizer: OptimizerConfig::sgd(),
            seed: 0,
            jobs: 1,
        }
    }

    /// Adadelta with minibatch 32; the face reconstruction net.
    ///
    /// The masked loss averages over every pixel, so squared gradients sit
    /// far below the usual eps of 1e-6 and the update degenerates to unit-step
    /// SGD. A tiny eps keeps the gradient-normalized regime; the multiplier
    /// restores a useful initial step size.
    pub fn ffd(epochs: u32) -> Self {
        let mut optimizer = OptimizerConfig::adadelta().with_learning_rate(FFD_ADADELTA_MULTIPLIER);
        optimizer.adadelta_eps = FFD_ADADELTA_EPS;
        Self {
            optimizer,
            ..Self::sgd(epochs)
        }
    }

    /// SGD with minibatch 128; the fused head.
    pub fn poseidon(epochs: u32) -> Self {
        Self {
            optimizer: OptimizerConfig::sgd().with_minibatch(128),
            ..Self::sgd(epochs)
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_jobs(mut self, jobs: usize) -> Self {
        self.jobs = jobs;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: u32,
    /// Mean per-sample loss seen during the epoch.
    pub loss: f64,
    pub learning_rate: f64,
}

pub fn log_to_csv(log: &[EpochLog]) -> String {
    let mut s = String::from("epoch,loss,learning_rate\n");
    for e in log {
        writeln!(s, "{},{},{}", e.epoch, e.loss, e.learning_rate).expect("string write");
    }
    s
}

pub fn write_log_csv(path: &Path, log: &[EpochLog]) -> Result<()> {
    std::fs::write(path, log_to_csv(log)).map_err(|e| Error::file(path, e))
}

fn sample_rng(seed: u64, epoch: u32, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("dropout/{epoch}/{index}")))
}

fn batch_grad<M: Trainable>(
    model: &M,
    inputs: &[M::Input],
    targets: &[Vec<f64>],
    batch: &[usize],
    loss: &Loss,
    cfg: &TrainConfig,
    epoch: u32,
    pool: &rayon::ThreadPool,
) -> Result<(f64, Vec<Gradients>)> {
    use rayon::prelude::*;
    let mut total = 0.0;
    let mut acc: Option<Vec<Gradients>> = None;
    for group in batch.chunks(cfg.jobs) {
        let results: Vec<Result<(f64, Vec<Gradients>)>> = pool.install(|| {
            group
                .par_iter()
                .map(|&i| {
                    let mut rng = sample_rng(cfg.seed, epoch, i);
                    model.sample_grad(&inputs[i], &targets[i], loss, &mut rng)
                })
                .collect()
        });
        for r in results {
            let (l, g) = r?;
            if !l.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss {l} in epoch {epoch}")));
            }
            total += l;
            match acc.as_mut() {
                None => acc = Some(g),
                Some(a) => {
                    for (ai, gi) in a.iter_mut().zip(&g) {
                        ai.accumulate(gi)?;
                    }
                }
            }
        }
    }
    let mut grads = acc.expect("batches are non-empty");
    let inv = 1.0 / batch.len() as f64;
    for g in &mut grads {
        g.scale(inv);
        if !g.is_finite() {
            return Err(Error::Numeric(format!("non-finite gradient in epoch {epoch}")));
        }
    }
    Ok((total, grads))
}

/// Trains `model` in place and returns the per-epoch loss trace. Batch
/// gradients and the reported loss are means over samples.
pub fn train<M: Trainable>(
    model: &mut M,
    inputs: &[M::Input],
    targets: &[Vec<f64>],
    loss: &Loss,
    cfg: &TrainConfig,
) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    if inputs.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if inputs.len() != targets.len() {
        return Err(Error::ShapeMismatch {
            what: "training targets",
            expected: inputs.len().to_string(),
            found: targets.len().to_string(),
        });
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let mut log = Vec::with_capacity(cfg.epochs as usize);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut shuffle = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("shuffle/{epoch}")));
        order.shuffle(&mut shuffle);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.optimizer.minibatch_size) {
            let (l, grads) = batch_grad(model, inputs, targets, batch, loss, cfg, epoch, &pool)?;
            epoch_loss += l;
            for (state, g) in model.states_mut().into_iter().zip(&grads) {
                optim::step(state, g, &cfg.optimizer, epoch)?;
            }
        }
        log.push(EpochLog {
            epoch,
            loss: epoch_loss / inputs.len() as f64,
            learning_rate: cfg.optimizer.learning_rate_at(epoch),
        });
    }
    Ok(log)
}

/// Mean loss in inference mode.
pub fn evaluate_loss(net: &Network, inputs: &[Tensor], targets: &[Vec<f64>], loss: &Loss) -> Result<f64> {
    if inputs.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let mut total = 0.0;
    for (x, t) in inputs.iter().zip(targets) {
        total += loss.eval(&net.infer(x)?, t)?.0;
    }
    Ok(total / inputs.len() as f64)
}
