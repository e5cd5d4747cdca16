//! The fused three-stream pose regressor.
//!
//! Pre-trained branches are cut after their last convolution; their feature
//! maps are fused and fed to a fresh dense head. Only the fusion filters and
//! the head are trained afterwards.

use depthpose_tensor::{Checkpoint, Gradients, Mode, ModelState, Network, NetworkSpec, Tape, Tensor};
use rand::RngCore;
use sha2::{Digest, Sha256};

use super::arch::{branch_feature_layers, head_layers};
use super::fusion::{FusionKind, FusionPlan, FusionTape};
use super::train::{train, EpochLog, Loss, TrainConfig, Trainable};
use crate::error::{Error, Result};
use crate::geometry::{angle_denormalize, angle_normalize, AngleScales, PoseAngles, EULER_CONVENTION};

/// Checkpoint names of the (depth, face, motion) streams.
pub const BRANCH_NAMES: [&str; 3] = ["branch-depth", "branch-ffd", "branch-motion"];
pub const HEAD_NAME: &str = "head";
pub const HEAD_HIDDEN: [usize; 2] = [128, 84];
pub const HEAD_DROPOUT: f64 = 0.5;

/// Keeps the first `layers` layers of a network and their parameters.
pub fn truncate_network(net: &Network, layers: usize, name: &str) -> Result<Network> {
    let spec = net.spec.truncated(layers, name);
    let state = ModelState {
        params: net
            .state
            .params
            .iter()
            .filter(|(k, _)| k.layer < layers)
            .map(|(k, v)| (*k, v.clone()))
            .collect(),
        slots: Default::default(),
    };
    Ok(Network::from_parts(spec, state)?)
}

/// Fusion filters plus the dense head; the trainable part of the trident.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionHead {
    pub plan: FusionPlan,
    pub convs: Vec<Network>,
    pub head: Network,
}

pub struct FusionHeadTape {
    fusion: FusionTape,
    head: Tape,
}

impl FusionHead {
    pub fn new(plan: FusionPlan, hidden: &[usize], dropout: f64, seed: u64) -> Result<Self> {
        let convs = plan
            .conv_specs()?
            .into_iter()
            .enumerate()
            .map(|(i, s)| Network::new(s, seed.wrapping_add(1 + i as u64)))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let spec = NetworkSpec::new(HEAD_NAME, &plan.output_shape(), head_layers(hidden, dropout))?;
        let head = Network::new(spec, seed)?;
        Ok(Self { plan, convs, head })
    }

    pub fn infer(&self, features: &[Tensor; 3]) -> Result<Tensor> {
        let fused = self.plan.infer(features, &self.convs)?;
        Ok(self.head.infer(&fused)?)
    }

    pub fn forward(&self, features: &[Tensor; 3], mode: Mode<'_>) -> Result<(Tensor, FusionHeadTape)> {
        let (fused, fusion) = self.plan.forward(features, &self.convs)?;
        let (y, head) = self.head.forward(&fused, mode)?;
        Ok((y, FusionHeadTape { fusion, head }))
    }

    /// Gradients of the filters then the head, and of the three feature maps.
    pub fn backward(&self, tape: FusionHeadTape, grad: &Tensor) -> Result<(Vec<Gradients>, [Tensor; 3])> {
        let hb = self.head.backward(tape.head, grad, true)?;
        let fb = self
            .plan
            .backward(tape.fusion, &hb.input.expect("input gradient requested"), &self.convs)?;
        let mut grads = fb.convs;
        grads.push(hb.params);
        Ok((grads, fb.inputs))
    }
}

impl Trainable for FusionHead {
    type Input = [Tensor; 3];

    fn sample_grad(&self, input: &[Tensor; 3], target: &[f64], loss: &Loss, rng: &mut dyn RngCore) -> Result<(f64, Vec<Gradients>)> {
        let (y, tape) = self.forward(input, Mode::Train(rng))?;
        let (l, g) = loss.eval(&y, target)?;
        Ok((l, self.backward(tape, &g)?.0))
    }

    fn states_mut(&mut self) -> Vec<&mut ModelState> {
        let mut s: Vec<&mut ModelState> = self.convs.iter_mut().map(|n| &mut n.state).collect();
        s.push(&mut self.head.state);
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TridentModel {
    /// Truncated (depth, face, motion) feature extractors.
    pub branches: [Network; 3],
    pub fusion: FusionHead,
    pub scales: AngleScales,
}

/// Cuts the three trained branches at their convolutional output and attaches
/// a freshly initialized fusion head. The inputs are not modified.
pub fn assemble_poseidon(branches: [&Network; 3], kind: FusionKind, scales: AngleScales, seed: u64) -> Result<TridentModel> {
    let cut: Vec<Network> = branches
        .iter()
        .zip(BRANCH_NAMES)
        .map(|(b, name)| truncate_network(b, branch_feature_layers(&b.spec), name))
        .collect::<Result<_>>()?;
    let shapes: Vec<Vec<usize>> = cut.iter().map(|n| n.spec.output_shape()).collect::<std::result::Result<_, _>>()?;
    let plan = FusionPlan::new(kind, [&shapes[0], &shapes[1], &shapes[2]])?;
    let fusion = FusionHead::new(plan, &HEAD_HIDDEN, HEAD_DROPOUT, seed)?;
    let branches: [Network; 3] = cut.try_into().expect("three branches");
    Ok(TridentModel {
        branches,
        fusion,
        scales,
    })
}

impl TridentModel {
    pub fn kind(&self) -> FusionKind {
        self.fusion.plan.kind
    }

    pub fn features(&self, inputs: &[Tensor; 3]) -> Result<[Tensor; 3]> {
        Ok([
            self.branches[0].infer(&inputs[0])?,
            self.branches[1].infer(&inputs[1])?,
            self.branches[2].infer(&inputs[2])?,
        ])
    }

    /// Normalized `[pitch, roll, yaw]` in `(-1, 1)`.
    pub fn infer(&self, inputs: &[Tensor; 3]) -> Result<Tensor> {
        self.fusion.infer(&self.features(inputs)?)
    }

    pub fn predict(&self, inputs: &[Tensor; 3]) -> Result<PoseAngles> {
        let y = self.infer(inputs)?;
        Ok(angle_denormalize(y.data(), &self.scales))
    }

    /// Loss and gradients of every parameter set (three branches, filters,
    /// head) for one sample, with dropout off.
    pub fn full_gradient(&self, inputs: &[Tensor; 3], target: &[f64], loss: &Loss) -> Result<(f64, Vec<Gradients>)> {
        let mut tapes = Vec::new();
        let mut feats = Vec::new();
        for (b, x) in self.branches.iter().zip(inputs) {
            let (f, t) = b.forward(x, Mode::Infer)?;
            feats.push(f);
            tapes.push(t);
        }
        let feats: [Tensor; 3] = feats.try_into().expect("three features");
        let (y, tape) = self.fusion.forward(&feats, Mode::Infer)?;
        let (l, g) = loss.eval(&y, target)?;
        let (head_grads, feat_grads) = self.fusion.backward(tape, &g)?;
        let mut grads = Vec::new();
        for ((b, t), g) in self.branches.iter().zip(tapes).zip(&feat_grads) {
            grads.push(b.backward(t, g, false)?.params);
        }
        grads.extend(head_grads);
        Ok((l, grads))
    }

    /// Mutable access in the order used by [`TridentModel::full_gradient`].
    pub fn all_networks_mut(&mut self) -> Vec<&mut Network> {
        let mut v: Vec<&mut Network> = self.branches.iter_mut().collect();
        v.extend(self.fusion.convs.iter_mut());
        v.push(&mut self.fusion.head);
        v
    }

    /// SHA-256 over the branch parameters, for freezing checks.
    pub fn branch_digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for b in &self.branches {
            for (k, t) in &b.state.params {
                h.update(k.to_string().as_bytes());
                for v in t.data() {
                    h.update(v.to_le_bytes());
                }
            }
        }
        h.finalize().into()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new()
            .with_meta("fusion", self.kind().name())
            .with_meta("angle_scales", self.scales.to_meta())
            .with_meta("euler_convention", EULER_CONVENTION);
        for (b, name) in self.branches.iter().zip(BRANCH_NAMES) {
            ck = ck.with_network(name, b.clone());
        }
        for (i, c) in self.fusion.convs.iter().enumerate() {
            ck = ck.with_network(format!("fusion-{i}"), c.clone());
        }
        ck.with_network(HEAD_NAME, self.fusion.head.clone())
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let kind: FusionKind = ck.meta("fusion")?.parse()?;
        let scales = AngleScales::from_meta(ck.meta("angle_scales")?)?;
        let branches = [
            ck.network(BRANCH_NAMES[0])?.clone(),
            ck.network(BRANCH_NAMES[1])?.clone(),
            ck.network(BRANCH_NAMES[2])?.clone(),
        ];
        let shapes: Vec<Vec<usize>> = branches.iter().map(|n| n.spec.output_shape()).collect::<std::result::Result<_, _>>()?;
        let plan = FusionPlan::new(kind, [&shapes[0], &shapes[1], &shapes[2]])?;
        let convs = (0..plan.conv_channels().len())
            .map(|i| ck.network(&format!("fusion-{i}")).cloned())
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let head = ck.network(HEAD_NAME)?.clone();
        if head.spec.input_shape != plan.output_shape() {
            return Err(Error::Checkpoint(format!(
                "head expects {:?}, fusion yields {:?}",
                head.spec.input_shape,
                plan.output_shape()
            )));
        }
        Ok(Self {
            branches,
            fusion: FusionHead { plan, convs, head },
            scales,
        })
    }
}

/// Trains the fusion filters and head on the frozen branch features.
pub fn train_poseidon(
    model: &mut TridentModel,
    inputs: &[[Tensor; 3]],
    poses: &[PoseAngles],
    cfg: &TrainConfig,
) -> Result<Vec<EpochLog>> {
    let features: Vec<[Tensor; 3]> = inputs.iter().map(|x| model.features(x)).collect::<Result<_>>()?;
    let targets: Vec<Vec<f64>> = poses.iter().map(|p| angle_normalize(*p, &model.scales).values.to_vec()).collect();
    train(&mut model.fusion, &features, &targets, &Loss::angles(), cfg)
}
