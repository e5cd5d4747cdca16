//! Runs an estimator over a list of frames.

use depthpose_tensor::Network;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::occlusion::{occlusion_mask, OcclusionExtent, OcclusionKind};
use super::stats::{angle_error, localization_error, stats_from_errors, ErrorStats, MeanStd};
use crate::data::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::geometry::{angle_denormalize, AngleScales, PoseAngles};
use crate::pipeline::{shoulder_input, HeadLocator, HeadPoseEstimator, PipelineConfig};
use crate::seed::derive_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOptions {
    pub occlusion: Option<OcclusionKind>,
    pub extent: OcclusionExtent,
    /// Seeds the per-frame draw of random occlusions.
    pub seed: u64,
    pub jobs: usize,
    /// Side of the head crop the masks are built for.
    pub crop_size: usize,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        Self {
            occlusion: None,
            extent: OcclusionExtent::default(),
            seed: 0,
            jobs: 1,
            crop_size: PipelineConfig::default().crop_size,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub id: String,
    pub truth: PoseAngles,
    pub pred: PoseAngles,
    /// Absolute `[pitch, roll, yaw]` errors in degrees.
    pub error: [f64; 3],
    /// Center used for cropping.
    pub center: (f64, f64),
    pub true_center: (f64, f64),
    pub occlusion: Option<OcclusionKind>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub stats: ErrorStats,
    /// Present when centers came from a locator rather than annotations.
    pub localization: Option<MeanStd>,
    pub records: Vec<FrameRecord>,
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    if jobs == 0 {
        return Err(Error::Config("jobs must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn summarize(records: Vec<FrameRecord>, located: bool) -> Result<Experiment> {
    let errors: Vec<[f64; 3]> = records.iter().map(|r| r.error).collect();
    let stats = stats_from_errors(&errors)?;
    let localization = if located {
        let p: Vec<_> = records.iter().map(|r| r.center).collect();
        let t: Vec<_> = records.iter().map(|r| r.true_center).collect();
        Some(localization_error(&p, &t)?)
    } else {
        None
    };
    Ok(Experiment {
        stats,
        localization,
        records,
    })
}

fn selected<'a>(dataset: &'a Dataset, ids: &[String]) -> Result<Vec<&'a Sample>> {
    if ids.is_empty() {
        return Err(Error::Empty("evaluation split"));
    }
    dataset.select(ids)
}

/// Head pose over `ids`. Centers come from `locator`, or from the annotations
/// when it is `None`. Records keep the order of `ids`.
pub fn run_experiment(
    estimator: &dyn HeadPoseEstimator,
    locator: Option<&dyn HeadLocator>,
    dataset: &Dataset,
    ids: &[String],
    options: &ExperimentOptions,
) -> Result<Experiment> {
    let samples = selected(dataset, ids)?;
    let pool = pool(options.jobs)?;
    let records: Vec<Result<FrameRecord>> = pool.install(|| {
        samples
            .par_iter()
            .map(|s| {
                let center = match locator {
                    Some(l) => l.locate(s)?,
                    None => s.head_center,
                };
                let occlusion = options
                    .occlusion
                    .map(|k| k.resolve(derive_seed(options.seed, &format!("occlusion/{}", s.id))));
                let mask = match occlusion {
                    Some(k) => Some(occlusion_mask(k, options.crop_size, options.crop_size, options.extent)?),
                    None => None,
                };
                let pred = estimator.estimate(s, dataset.previous(s), center, mask.as_ref())?;
                if !pred.is_finite() {
                    return Err(Error::Numeric(format!("non-finite prediction for `{}`", s.id)));
                }
                Ok(FrameRecord {
                    id: s.id.clone(),
                    truth: s.pose,
                    pred,
                    error: angle_error(&pred, &s.pose),
                    center,
                    true_center: s.head_center,
                    occlusion,
                })
            })
            .collect()
    });
    summarize(records.into_iter().collect::<Result<_>>()?, locator.is_some())
}

/// Shoulder pose over `ids`, against the torso annotations.
pub fn run_shoulder_experiment(
    net: &Network,
    scales: &AngleScales,
    locator: Option<&dyn HeadLocator>,
    dataset: &Dataset,
    ids: &[String],
    config: &PipelineConfig,
    jobs: usize,
) -> Result<Experiment> {
    let samples = selected(dataset, ids)?;
    let pool = pool(jobs)?;
    let records: Vec<Result<FrameRecord>> = pool.install(|| {
        samples
            .par_iter()
            .map(|s| {
                let truth = s
                    .shoulder
                    .as_ref()
                    .ok_or_else(|| Error::InvalidSample {
                        id: s.id.clone(),
                        message: "no shoulder annotation".into(),
                    })?
                    .pose;
                let center = match locator {
                    Some(l) => l.locate(s)?,
                    None => s.head_center,
                };
                let y = net.infer(&shoulder_input(s, center, config)?)?;
                let pred = angle_denormalize(y.data(), scales);
                Ok(FrameRecord {
                    id: s.id.clone(),
                    truth,
                    pred,
                    error: angle_error(&pred, &truth),
                    center,
                    true_center: s.head_center,
                    occlusion: None,
                })
            })
            .collect()
    });
    summarize(records.into_iter().collect::<Result<_>>()?, locator.is_some())
}
