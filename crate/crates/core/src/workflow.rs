//! Training targets over a dataset, their checkpoints and prerequisites.
//!
//! Order is enforced through prerequisites: the face network before the
//! face branch, all three branches (and the face network) before the fused
//! model.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use depthpose_tensor::{Checkpoint, Network, OptimizerConfig, Tensor};
use serde::{Deserialize, Serialize};

use crate::data::{apply_transform, draw_transform, AugmentConfig, Dataset, Sample};
use crate::error::{Error, Result};
use crate::geometry::{angle_normalize, AngleScales, GaussianMask, PoseAngles, EULER_CONVENTION, MASK_ALPHA, MASK_BETA};
use crate::networks::{
    assemble_poseidon, build_branch_net, build_ffd_net, build_locnet, train, train_poseidon, EpochLog, FusionKind,
    Loss, TrainConfig, TridentModel,
};
use crate::pipeline::{
    branch_input, frame_inputs, gray_target, locnet_input, locnet_target, shoulder_input, trident_inputs,
    BranchEstimator, BranchStream, LocnetLocator, PipelineConfig, TridentEstimator,
};
use crate::seed::derive_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TrainTarget {
    Locnet,
    Ffd,
    BranchDepth,
    BranchFfd,
    BranchMotion,
    Poseidon,
    Shoulder,
}

impl TrainTarget {
    pub const ALL: [TrainTarget; 7] = [
        TrainTarget::Locnet,
        TrainTarget::Ffd,
        TrainTarget::BranchDepth,
        TrainTarget::BranchFfd,
        TrainTarget::BranchMotion,
        TrainTarget::Poseidon,
        TrainTarget::Shoulder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TrainTarget::Locnet => "locnet",
            TrainTarget::Ffd => "ffd",
            TrainTarget::BranchDepth => "branch-depth",
            TrainTarget::BranchFfd => "branch-ffd",
            TrainTarget::BranchMotion => "branch-motion",
            TrainTarget::Poseidon => "poseidon",
            TrainTarget::Shoulder => "shoulder",
        }
    }

    /// Checkpoints that must exist before this target can be trained.
    pub fn prerequisites(self) -> &'static [TrainTarget] {
        match self {
            TrainTarget::BranchFfd => &[TrainTarget::Ffd],
            TrainTarget::Poseidon => &[
                TrainTarget::BranchDepth,
                TrainTarget::BranchFfd,
                TrainTarget::BranchMotion,
                TrainTarget::Ffd,
            ],
            _ => &[],
        }
    }

    pub fn stream(self) -> Option<BranchStream> {
        match self {
            TrainTarget::BranchDepth => Some(BranchStream::Depth),
            TrainTarget::BranchFfd => Some(BranchStream::Face),
            TrainTarget::BranchMotion => Some(BranchStream::Motion),
            _ => None,
        }
    }

    /// SGD with minibatch 32 everywhere except Adadelta for the face network
    /// and minibatch 128 for the fused head.
    pub fn default_train_config(self, epochs: u32) -> TrainConfig {
        match self {
            TrainTarget::Ffd => TrainConfig::ffd(epochs),
            TrainTarget::Poseidon => TrainConfig::poseidon(epochs),
            _ => TrainConfig::sgd(epochs),
        }
    }
}

impl fmt::Display for TrainTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TrainTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown training target `{s}`")))
    }
}

pub fn checkpoint_path(dir: &Path, target: TrainTarget) -> PathBuf {
    dir.join(format!("{}.ckpt", target.name()))
}

pub fn log_path(dir: &Path, target: TrainTarget) -> PathBuf {
    dir.join(format!("{}.log.csv", target.name()))
}

/// Network name inside every single-network checkpoint.
pub const NET_NAME: &str = "net";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSettings {
    pub epochs: u32,
    /// Replaces the target's default optimizer when set.
    pub optimizer: Option<OptimizerConfig>,
    pub seed: u64,
    pub jobs: usize,
    pub augment: AugmentConfig,
    /// Augmented copies per sample, in addition to the original.
    pub augment_copies: usize,
    pub fusion: FusionKind,
    pub pipeline: PipelineConfig,
    pub config_hash: String,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            epochs: 30,
            optimizer: None,
            seed: 0,
            jobs: 1,
            augment: AugmentConfig::default(),
            augment_copies: 0,
            fusion: FusionKind::ConvThenConcat,
            pipeline: PipelineConfig::default(),
            config_hash: String::new(),
        }
    }
}

impl TrainSettings {
    pub fn train_config(&self, target: TrainTarget) -> TrainConfig {
        let mut cfg = target.default_train_config(self.epochs).with_seed(self.seed).with_jobs(self.jobs);
        if let Some(opt) = &self.optimizer {
            cfg.optimizer = opt.clone();
        }
        cfg
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub target: TrainTarget,
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
}

impl TrainOutcome {
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
        let path = checkpoint_path(dir, self.target);
        self.checkpoint
            .save(&path)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        crate::networks::write_log_csv(&log_path(dir, self.target), &self.log)
    }
}

/// Loaded prerequisite checkpoints, keyed by target.
pub type Prerequisites = BTreeMap<TrainTarget, Checkpoint>;

pub fn load_checkpoint(dir: &Path, target: TrainTarget) -> Result<Checkpoint> {
    let path = checkpoint_path(dir, target);
    if !path.exists() {
        return Err(Error::MissingPrerequisite(vec![path.display().to_string()]));
    }
    Checkpoint::load(&path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
}

/// Loads every prerequisite of `target` from `dir`, naming all missing ones.
pub fn load_prerequisites(dir: &Path, target: TrainTarget) -> Result<Prerequisites> {
    let missing: Vec<String> = target
        .prerequisites()
        .iter()
        .map(|&t| checkpoint_path(dir, t))
        .filter(|p| !p.exists())
        .map(|p| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingPrerequisite(missing));
    }
    target
        .prerequisites()
        .iter()
        .map(|&t| Ok((t, load_checkpoint(dir, t)?)))
        .collect()
}

fn prerequisite(pre: &Prerequisites, target: TrainTarget) -> Result<&Checkpoint> {
    pre.get(&target)
        .ok_or_else(|| Error::MissingPrerequisite(vec![format!("{}.ckpt", target.name())]))
}

/// The single network of a per-target checkpoint.
pub fn checkpoint_net(ck: &Checkpoint) -> Result<Network> {
    Ok(ck.network(NET_NAME)?.clone())
}

pub fn checkpoint_scales(ck: &Checkpoint) -> Result<AngleScales> {
    AngleScales::from_meta(ck.meta("angle_scales")?)
}

/// Refuses checkpoints written under a different angle convention.
pub fn check_convention(ck: &Checkpoint, dataset: &Dataset) -> Result<()> {
    let found = ck.meta("euler_convention")?;
    if found != dataset.meta.euler_convention {
        return Err(Error::Checkpoint(format!(
            "checkpoint angle convention `{found}` differs from the dataset's `{}`",
            dataset.meta.euler_convention
        )));
    }
    Ok(())
}

/// A training frame and its predecessor, possibly augmented together.
struct Example {
    sample: Sample,
    previous: Option<Sample>,
}

fn examples(dataset: &Dataset, ids: &[String], settings: &TrainSettings) -> Result<Vec<Example>> {
    if ids.is_empty() {
        return Err(Error::Empty("training split"));
    }
    let mut out = Vec::new();
    for s in dataset.select(ids)? {
        let prev = dataset.previous(s);
        out.push(Example {
            sample: s.clone(),
            previous: prev.cloned(),
        });
        for k in 0..settings.augment_copies {
            let t = draw_transform(s, &settings.augment, derive_seed(settings.seed, &format!("augment/{}/{k}", s.id)));
            out.push(Example {
                sample: apply_transform(s, &t),
                previous: prev.map(|p| apply_transform(p, &t)),
            });
        }
    }
    Ok(out)
}

fn base_checkpoint(target: TrainTarget, settings: &TrainSettings) -> Checkpoint {
    let mut ck = Checkpoint::new()
        .with_meta("target", target.name())
        .with_meta("euler_convention", EULER_CONVENTION)
        .with_meta("config_hash", settings.config_hash.clone())
        .with_meta("seed", settings.seed.to_string());
    ck.epoch = settings.epochs;
    ck
}

fn normalized(poses: &[PoseAngles], scales: &AngleScales) -> Vec<Vec<f64>> {
    poses.iter().map(|p| angle_normalize(*p, scales).values.to_vec()).collect()
}

/// Trains one target on `ids`. Initialization, shuffling, dropout and
/// augmentation all derive from `settings.seed`.
pub fn train_target(
    target: TrainTarget,
    dataset: &Dataset,
    ids: &[String],
    pre: &Prerequisites,
    settings: &TrainSettings,
) -> Result<TrainOutcome> {
    let cfg = settings.train_config(target);
    let init = derive_seed(settings.seed, &format!("init/{}", target.name()));
    let pc = &settings.pipeline;
    let ex = examples(dataset, ids, settings)?;
    let mut ck = base_checkpoint(target, settings);
    let frame = |e: &Example| frame_inputs(&e.sample, e.previous.as_ref(), e.sample.head_center, None, pc);
    let log = match target {
        TrainTarget::Locnet => {
            let mut net = Network::new(build_locnet(), init)?;
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for e in &ex {
                xs.push(locnet_input(&e.sample.depth, pc)?);
                ys.push(locnet_target(e.sample.head_center, e.sample.depth.rows(), e.sample.depth.cols()).to_vec());
            }
            let log = train(&mut net, &xs, &ys, &Loss::L2, &cfg)?;
            ck = ck.with_network(NET_NAME, net);
            log
        }
        TrainTarget::Ffd => {
            let mut net = Network::new(build_ffd_net(), init)?;
            let mask = GaussianMask::new(pc.crop_size, pc.crop_size, MASK_ALPHA, MASK_BETA)?;
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for e in &ex {
                let f = frame(e)?;
                ys.push(gray_target(&e.sample, &f.bbox, pc.crop_size)?);
                xs.push(f.depth);
            }
            let log = train(&mut net, &xs, &ys, &Loss::Masked(mask), &cfg)?;
            ck = ck.with_network(NET_NAME, net);
            log
        }
        TrainTarget::BranchDepth | TrainTarget::BranchFfd | TrainTarget::BranchMotion => {
            let stream = target.stream().expect("branch target");
            let ffd = match stream {
                BranchStream::Face => Some(checkpoint_net(prerequisite(pre, TrainTarget::Ffd)?)?),
                _ => None,
            };
            let channels = if stream == BranchStream::Motion { 2 } else { 1 };
            let mut net = Network::new(build_branch_net(channels), init)?;
            let mut xs: Vec<Tensor> = Vec::new();
            let mut poses = Vec::new();
            for e in &ex {
                xs.push(branch_input(stream, &frame(e)?, ffd.as_ref())?);
                poses.push(e.sample.pose);
            }
            let scales = AngleScales::from_max_abs(&poses);
            let log = train(&mut net, &xs, &normalized(&poses, &scales), &Loss::angles(), &cfg)?;
            ck = ck.with_network(NET_NAME, net).with_meta("angle_scales", scales.to_meta());
            log
        }
        TrainTarget::Shoulder => {
            let mut net = Network::new(build_branch_net(1), init)?;
            let mut xs = Vec::new();
            let mut poses = Vec::new();
            for e in &ex {
                let ann = e.sample.shoulder.as_ref().ok_or_else(|| Error::InvalidSample {
                    id: e.sample.id.clone(),
                    message: "no shoulder annotation".into(),
                })?;
                xs.push(shoulder_input(&e.sample, e.sample.head_center, pc)?);
                poses.push(ann.pose);
            }
            let scales = AngleScales::from_max_abs(&poses);
            let log = train(&mut net, &xs, &normalized(&poses, &scales), &Loss::angles(), &cfg)?;
            ck = ck.with_network(NET_NAME, net).with_meta("angle_scales", scales.to_meta());
            log
        }
        TrainTarget::Poseidon => {
            let nets = [TrainTarget::BranchDepth, TrainTarget::BranchFfd, TrainTarget::BranchMotion]
                .map(|t| prerequisite(pre, t).and_then(checkpoint_net));
            let [d, f, m] = nets;
            let (d, f, m) = (d?, f?, m?);
            let ffd = checkpoint_net(prerequisite(pre, TrainTarget::Ffd)?)?;
            let scales = checkpoint_scales(prerequisite(pre, TrainTarget::BranchDepth)?)?;
            let mut model = assemble_poseidon([&d, &f, &m], settings.fusion, scales, init)?;
            let mut xs = Vec::new();
            let mut poses = Vec::new();
            for e in &ex {
                xs.push(trident_inputs(&frame(e)?, &ffd)?);
                poses.push(e.sample.pose);
            }
            let log = train_poseidon(&mut model, &xs, &poses, &cfg)?;
            let mut trident = model.to_checkpoint();
            trident.metadata.extend(ck.metadata);
            trident.epoch = ck.epoch;
            ck = trident;
            log
        }
    };
    Ok(TrainOutcome {
        target,
        checkpoint: ck,
        log,
    })
}

pub fn load_trident(dir: &Path, pipeline: &PipelineConfig) -> Result<TridentEstimator> {
    let model = TridentModel::from_checkpoint(&load_checkpoint(dir, TrainTarget::Poseidon)?)?;
    let ffd = checkpoint_net(&load_checkpoint(dir, TrainTarget::Ffd)?)?;
    Ok(TridentEstimator {
        model,
        ffd,
        config: pipeline.clone(),
    })
}

pub fn load_branch(dir: &Path, target: TrainTarget, pipeline: &PipelineConfig) -> Result<BranchEstimator> {
    let stream = target
        .stream()
        .ok_or_else(|| Error::Config(format!("`{target}` is not a pose branch")))?;
    let ck = load_checkpoint(dir, target)?;
    let ffd = match stream {
        BranchStream::Face => Some(checkpoint_net(&load_checkpoint(dir, TrainTarget::Ffd)?)?),
        _ => None,
    };
    Ok(BranchEstimator {
        net: checkpoint_net(&ck)?,
        scales: checkpoint_scales(&ck)?,
        stream,
        ffd,
        config: pipeline.clone(),
    })
}

pub fn load_locator(dir: &Path, pipeline: &PipelineConfig) -> Result<LocnetLocator> {
    Ok(LocnetLocator {
        net: checkpoint_net(&load_checkpoint(dir, TrainTarget::Locnet)?)?,
        config: pipeline.clone(),
    })
}
