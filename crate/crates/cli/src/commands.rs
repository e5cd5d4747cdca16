use std::fs;
use std::path::{Path, PathBuf};

use depthpose::data::{
    biwi, crop_resize, load_canonical_dataset, make_split, pgm, preprocess, synth_dataset, write_canonical,
    AugmentConfig, Dataset, DatasetSplit, SplitRule, SynthConfig,
};
use depthpose::eval::{
    emit_report, parse_report, records_to_jsonl, report_to_table, run_experiment, run_shoulder_experiment,
    Experiment, ExperimentOptions, OcclusionExtent, OcclusionKind, ReportEntry,
};
use depthpose::flow::{farneback_flow, normalize_depth_for_flow, write_flow_dump};
use depthpose::geometry::{AngleScales, BoundingBox};
use depthpose::image::Image;
use depthpose::networks::FusionKind;
use depthpose::pipeline::{reconstruct_face, HeadLocator, HeadPoseEstimator, PipelineConfig};
use depthpose::workflow::{
    check_convention, checkpoint_net, checkpoint_path, checkpoint_scales, load_branch, load_checkpoint,
    load_locator, load_prerequisites, load_trident, log_path, train_target, TrainSettings, TrainTarget,
};
use depthpose::{Error, Result};
use depthpose_tensor::{Network, OptimizerConfig, OptimizerKind};

use crate::config::RunConfig;

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let out: PathBuf = cfg.require("out")?;
    fs::create_dir_all(&out).map_err(|e| Error::file(&out, e))?;
    Ok(out)
}

/// UTC time as `YYYYMMDDTHHMMSSZ`, taken from `SOURCE_DATE_EPOCH` when set so
/// that reruns can reproduce file names too.
pub fn timestamp() -> Result<String> {
    let secs = match std::env::var("SOURCE_DATE_EPOCH") {
        Ok(v) => v
            .trim()
            .parse::<i64>()
            .map_err(|_| Error::Config(format!("SOURCE_DATE_EPOCH `{v}` is not an integer")))?,
        Err(_) => chrono::Utc::now().timestamp(),
    };
    let t = chrono::DateTime::from_timestamp(secs, 0)
        .ok_or_else(|| Error::Config(format!("timestamp {secs} out of range")))?;
    Ok(t.format("%Y%m%dT%H%M%SZ").to_string())
}

fn pipeline(cfg: &RunConfig) -> Result<PipelineConfig> {
    Ok(PipelineConfig {
        lo_pct: cfg.require("lo_pct")?,
        hi_pct: cfg.require("hi_pct")?,
        flow_clip: cfg.require("flow_clip")?,
        ..PipelineConfig::default()
    })
}

fn split(cfg: &RunConfig, dataset: &Dataset) -> Result<DatasetSplit> {
    let rule: SplitRule = cfg.require::<String>("split")?.parse()?;
    make_split(dataset, &rule)
}

pub fn synth(cfg: &RunConfig) -> Result<String> {
    let [lo, hi] = cfg.list::<2>("depth_range")?;
    let config = SynthConfig {
        count: cfg.require("count")?,
        sequences: cfg.require("sequences")?,
        seed: cfg.require("seed")?,
        head_range: cfg.list::<3>("head_range")?,
        shoulder_range: cfg.list::<3>("shoulder_range")?,
        step_deg: cfg.require("step_deg")?,
        depth_range: (lo, hi),
        lateral_mm: cfg.require("lateral_mm")?,
        torso: cfg.require("torso")?,
        ..SynthConfig::default()
    };
    let mut dataset = synth_dataset(&config)?;
    dataset.meta.source = format!("synth config_hash={}", cfg.hash());
    let out = out_dir(cfg)?;
    write_canonical(&dataset, &out)?;
    cfg.dump(&out.join("synth.conf"))?;
    Ok(format!("wrote {} synthetic samples to {}", dataset.len(), out.display()))
}

pub fn convert_biwi(cfg: &RunConfig) -> Result<String> {
    let input = cfg.existing_path("input")?;
    let mut dataset = biwi::convert_biwi(&input)?;
    dataset.meta.source = format!("biwi config_hash={}", cfg.hash());
    let out = out_dir(cfg)?;
    write_canonical(&dataset, &out)?;
    cfg.dump(&out.join("convert-biwi.conf"))?;
    Ok(format!("converted {} frames to {}", dataset.len(), out.display()))
}

/// The target's default optimizer with any configured fields applied; every
/// field is written back so the dumped config shows what actually ran.
fn resolve_optimizer(cfg: &mut RunConfig, target: TrainTarget, epochs: u32) -> Result<OptimizerConfig> {
    let mut opt = match cfg.get::<String>("optimizer")?.as_deref() {
        None => target.default_train_config(epochs).optimizer,
        Some("sgd") => OptimizerConfig::sgd(),
        Some("adadelta") => OptimizerConfig::adadelta(),
        Some(other) => return Err(Error::Config(format!("unknown optimizer `{other}` (sgd or adadelta)"))),
    };
    if let Some(v) = cfg.get("learning_rate")? {
        opt.learning_rate = v;
    }
    if let Some(v) = cfg.get("halve_every_epochs")? {
        opt.halve_every_epochs = v;
    }
    if let Some(v) = cfg.get("minibatch")? {
        opt.minibatch_size = v;
    }
    if let Some(v) = cfg.get("adadelta_rho")? {
        opt.adadelta_rho = v;
    }
    if let Some(v) = cfg.get("adadelta_eps")? {
        opt.adadelta_eps = v;
    }
    opt.validate()?;
    let kind = match opt.kind {
        OptimizerKind::Sgd => "sgd",
        OptimizerKind::Adadelta => "adadelta",
    };
    cfg.set("optimizer", kind)?;
    cfg.set("learning_rate", opt.learning_rate.to_string())?;
    cfg.set("halve_every_epochs", opt.halve_every_epochs.to_string())?;
    cfg.set("minibatch", opt.minibatch_size.to_string())?;
    cfg.set("adadelta_rho", opt.adadelta_rho.to_string())?;
    cfg.set("adadelta_eps", opt.adadelta_eps.to_string())?;
    Ok(opt)
}

pub fn train(cfg: &mut RunConfig, target: TrainTarget) -> Result<String> {
    let dataset = load_canonical_dataset(&cfg.existing_path("dataset")?)?;
    let ids = split(cfg, &dataset)?.train;
    let epochs: u32 = cfg.require("epochs")?;
    let optimizer = resolve_optimizer(cfg, target, epochs)?;
    let [zlo, zhi] = cfg.list::<2>("augment_zoom")?;
    let settings = TrainSettings {
        epochs,
        optimizer: Some(optimizer),
        seed: cfg.require("seed")?,
        jobs: cfg.require("jobs")?,
        augment: AugmentConfig {
            max_translation: cfg.require("augment_translation")?,
            jitter_mm: cfg.require("augment_jitter_mm")?,
            zoom: (zlo, zhi),
        },
        augment_copies: cfg.require("augment_copies")?,
        fusion: cfg.require::<String>("fusion")?.parse::<FusionKind>()?,
        pipeline: pipeline(cfg)?,
        config_hash: cfg.hash(),
    };
    let out = out_dir(cfg)?;
    let pre = load_prerequisites(&out, target)?;
    for ck in pre.values() {
        check_convention(ck, &dataset)?;
    }
    let outcome = train_target(target, &dataset, &ids, &pre, &settings)?;
    outcome.save(&out)?;
    cfg.dump(&out.join(format!("{}.conf", target.name())))?;
    let last = outcome
        .log
        .last()
        .map(|l| format!(", final loss {:.6} at lr {}", l.loss, l.learning_rate))
        .unwrap_or_default();
    Ok(format!(
        "trained {target} on {} frames for {epochs} epochs{last}\ncheckpoint {}\nlog {}",
        ids.len(),
        checkpoint_path(&out, target).display(),
        log_path(&out, target).display()
    ))
}

enum Model {
    Head(Box<dyn HeadPoseEstimator>, String),
    Shoulder(Network, AngleScales),
}

fn load_model(cfg: &RunConfig, dir: &Path, dataset: &Dataset, pc: &PipelineConfig) -> Result<Model> {
    let name: String = cfg.require("model")?;
    let target: TrainTarget = name.parse()?;
    let mut used = vec![target];
    let model = match target {
        TrainTarget::Poseidon => {
            used.push(TrainTarget::Ffd);
            Model::Head(Box::new(load_trident(dir, pc)?), name)
        }
        TrainTarget::BranchDepth | TrainTarget::BranchMotion => Model::Head(Box::new(load_branch(dir, target, pc)?), name),
        TrainTarget::BranchFfd => {
            used.push(TrainTarget::Ffd);
            Model::Head(Box::new(load_branch(dir, target, pc)?), name)
        }
        TrainTarget::Shoulder => {
            let ck = load_checkpoint(dir, target)?;
            Model::Shoulder(checkpoint_net(&ck)?, checkpoint_scales(&ck)?)
        }
        other => return Err(Error::Config(format!("`{other}` does not estimate a pose"))),
    };
    for t in used {
        check_convention(&load_checkpoint(dir, t)?, dataset)?;
    }
    Ok(model)
}

fn occlusions(cfg: &RunConfig) -> Result<Vec<Option<OcclusionKind>>> {
    let raw: String = cfg.require("occlusion")?;
    Ok(match raw.as_str() {
        "none" => vec![None],
        "all" => std::iter::once(None)
            .chain(OcclusionKind::FIXED.into_iter().map(Some))
            .chain(std::iter::once(Some(OcclusionKind::Random)))
            .collect(),
        other => vec![Some(other.parse::<OcclusionKind>()?)],
    })
}

pub fn eval(cfg: &RunConfig) -> Result<String> {
    let dataset = load_canonical_dataset(&cfg.existing_path("dataset")?)?;
    let dir = cfg.existing_path("checkpoints")?;
    let pc = pipeline(cfg)?;
    let sp = split(cfg, &dataset)?;
    // Without a held-out part the whole dataset is evaluated.
    let ids = if sp.test.is_empty() { sp.train.clone() } else { sp.test.clone() };
    let center: String = cfg.require("center")?;
    let locator = match center.as_str() {
        "gt" => None,
        "locnet" => {
            check_convention(&load_checkpoint(&dir, TrainTarget::Locnet)?, &dataset)?;
            Some(load_locator(&dir, &pc)?)
        }
        other => return Err(Error::Config(format!("center must be `gt` or `locnet`, got `{other}`"))),
    };
    let locator_ref = locator.as_ref().map(|l| l as &dyn HeadLocator);
    let model = load_model(cfg, &dir, &dataset, &pc)?;
    let seed: u64 = cfg.require("seed")?;
    let jobs: usize = cfg.require("jobs")?;
    let hash = cfg.hash();

    let mut entries = Vec::new();
    let mut records = String::new();
    let split_name = sp.rule.to_string();
    let mut run = |name: &str, occ: Option<OcclusionKind>, exp: Experiment| -> Result<()> {
        let occ_name = occ.map_or("none".to_string(), |k| k.to_string());
        entries.push(ReportEntry::new(name, &hash, seed, &split_name, &center, &occ_name, &exp));
        records.push_str(&records_to_jsonl(&exp.records)?);
        Ok(())
    };
    match &model {
        Model::Head(estimator, name) => {
            for occ in occlusions(cfg)? {
                let options = ExperimentOptions {
                    occlusion: occ,
                    extent: OcclusionExtent(cfg.require("occlusion_extent")?),
                    seed,
                    jobs,
                    crop_size: pc.crop_size,
                };
                run(name, occ, run_experiment(estimator.as_ref(), locator_ref, &dataset, &ids, &options)?)?;
            }
        }
        Model::Shoulder(net, scales) => {
            if occlusions(cfg)? != [None] {
                return Err(Error::Config("occlusion is only defined for head models".into()));
            }
            let exp = run_shoulder_experiment(net, scales, locator_ref, &dataset, &ids, &pc, jobs)?;
            run("shoulder", None, exp)?;
        }
    }

    let out = out_dir(cfg)?;
    let stamp = timestamp()?;
    let files = emit_report(&out, &entries, &hash, &stamp)?;
    let stem = format!("report-{}-{stamp}", cfg.short_hash());
    let rec_path = out.join(format!("{stem}.records.jsonl"));
    fs::write(&rec_path, records).map_err(|e| Error::file(&rec_path, e))?;
    cfg.dump(&out.join(format!("{stem}.conf")))?;
    Ok(format!(
        "{}\nreport {}\ntable {}\nrecords {}",
        report_to_table(&entries).trim_end(),
        files.jsonl.display(),
        files.table.display(),
        rec_path.display()
    ))
}

fn full_frame(img: &Image) -> BoundingBox {
    BoundingBox {
        center_x: img.cols() as f64 / 2.0,
        center_y: img.rows() as f64 / 2.0,
        width: img.cols() as f64,
        height: img.rows() as f64,
    }
}

pub fn reconstruct(cfg: &RunConfig, input: &Path, output: &Path) -> Result<String> {
    let dir = cfg.existing_path("checkpoints")?;
    let pc = pipeline(cfg)?;
    let ffd = checkpoint_net(&load_checkpoint(&dir, TrainTarget::Ffd)?)?;
    let (depth, _) = pgm::read(input)?;
    let size = pc.crop_size;
    let crop = if (depth.rows(), depth.cols()) == (size, size) {
        depth
    } else {
        crop_resize(&depth, &full_frame(&depth), size, size, true)
    };
    let face = reconstruct_face(&ffd, &preprocess(&crop, pc.lo_pct, pc.hi_pct)?)?;
    let tag = format!("config_hash={}", cfg.hash());
    pgm::write_commented(output, &face, 255, Some(&tag))?;
    cfg.dump(&sidecar(output))?;
    Ok(format!("wrote {}x{} face to {}", face.rows(), face.cols(), output.display()))
}

fn sidecar(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".conf");
    output.with_file_name(name)
}

fn median_valid(img: &Image) -> Result<f64> {
    let mut v: Vec<f64> = img.data().iter().copied().filter(|&x| x > 0.0).collect();
    if v.is_empty() {
        return Err(Error::Data("first depth image has no valid pixels".into()));
    }
    v.sort_by(f64::total_cmp);
    Ok(v[v.len() / 2])
}

pub fn flow(cfg: &RunConfig, prev: &Path, next: &Path, output: &Path) -> Result<String> {
    let pc = pipeline(cfg)?;
    let (a, _) = pgm::read(prev)?;
    let (b, _) = pgm::read(next)?;
    let center = median_valid(&a)?;
    let field = farneback_flow(&normalize_depth_for_flow(&a, center), &normalize_depth_for_flow(&b, center), &pc.flow)?;
    if let Some(dir) = output.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    }
    write_flow_dump(output, &field, Some(&format!("config_hash={}", cfg.hash())))?;
    cfg.dump(&sidecar(output))?;
    let n = field.u.len() as f64;
    let mean = field.u.iter().zip(&field.v).map(|(u, v)| u.hypot(*v)).sum::<f64>() / n;
    Ok(format!("wrote {}x{} flow to {} (mean magnitude {mean:.4} px)", field.rows, field.cols, output.display()))
}

/// Merges report files into one table, written under `out` when set.
pub fn report(cfg: &RunConfig, inputs: &[PathBuf]) -> Result<String> {
    if inputs.is_empty() {
        return Err(Error::Config("report needs at least one report file".into()));
    }
    let mut entries = Vec::new();
    for p in inputs {
        let text = fs::read_to_string(p).map_err(|e| Error::file(p, e))?;
        entries.extend(parse_report(&text)?);
    }
    let table = report_to_table(&entries);
    if cfg.raw("out").is_some() {
        let out = out_dir(cfg)?;
        let path = out.join(format!("summary-{}.txt", cfg.short_hash()));
        fs::write(&path, &table).map_err(|e| Error::file(&path, e))?;
        cfg.dump(&out.join(format!("summary-{}.conf", cfg.short_hash())))?;
    }
    Ok(table.trim_end().to_string())
}
