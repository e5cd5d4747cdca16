//! `index.jsonl` plus graymap images: the on-disk dataset format.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::pgm;
use super::sample::{Sample, SampleFiles, SampleKey, ShoulderAnnotation};
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, PoseAngles, EULER_CONVENTION};

pub const INDEX_FILE: &str = "index.jsonl";
pub const META_FILE: &str = "dataset.json";
pub const DEPTH_MAXVAL: u16 = 65535;
pub const GRAY_MAXVAL: u16 = 255;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ShoulderRecord {
    lsx: f64,
    lsy: f64,
    lsz: f64,
    rsx: f64,
    rsy: f64,
    rsz: f64,
    sbx: f64,
    sby: f64,
    sbz: f64,
    s_pitch: f64,
    s_roll: f64,
    s_yaw: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    depth: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gray: Option<String>,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    d_mm: f64,
    pitch: f64,
    roll: f64,
    yaw: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    shoulder: Option<ShoulderRecord>,
}

/// Dataset-level metadata stored next to the index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub euler_convention: String,
    #[serde(default)]
    pub source: String,
}

impl Default for DatasetMeta {
    fn default() -> Self {
        Self {
            euler_convention: EULER_CONVENTION.to_string(),
            source: String::new(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    by_id: BTreeMap<String, usize>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, meta: DatasetMeta) -> Result<Self> {
        let mut by_id = BTreeMap::new();
        for (i, s) in samples.iter().enumerate() {
            s.validate()?;
            if by_id.insert(s.id.clone(), i).is_some() {
                return Err(Error::InvalidSample {
                    id: s.id.clone(),
                    message: "duplicate id".into(),
                });
            }
        }
        Ok(Self { samples, by_id, meta })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Sample> {
        self.by_id.get(id).map(|&i| &self.samples[i])
    }

    /// The preceding frame of the same sequence, if present.
    pub fn previous(&self, sample: &Sample) -> Option<&Sample> {
        let prev = SampleKey::parse(&sample.id)?.previous()?;
        self.get(&prev.id())
    }

    /// Samples with the given ids, in the given order.
    pub fn select(&self, ids: &[String]) -> Result<Vec<&Sample>> {
        ids.iter()
            .map(|id| self.get(id).ok_or_else(|| Error::Data(format!("unknown sample id `{id}`"))))
            .collect()
    }
}

fn record_to_sample(root: &Path, rec: Record) -> Result<Sample> {
    let (depth, _) = pgm::read(&root.join(&rec.depth))?;
    let gray = match &rec.gray {
        Some(g) => Some(pgm::read(&root.join(g))?.0),
        None => None,
    };
    let intrinsics = CameraIntrinsics::new(rec.fx, rec.fy).map_err(|e| Error::InvalidSample {
        id: rec.id.clone(),
        message: e.to_string(),
    })?;
    let shoulder = rec.shoulder.map(|s| ShoulderAnnotation {
        left: Vector3::new(s.lsx, s.lsy, s.lsz),
        right: Vector3::new(s.rsx, s.rsy, s.rsz),
        spine_base: Vector3::new(s.sbx, s.sby, s.sbz),
        pose: PoseAngles::new(s.s_pitch, s.s_roll, s.s_yaw),
    });
    let sample = Sample {
        files: Some(SampleFiles {
            depth: rec.depth,
            gray: rec.gray,
        }),
        id: rec.id,
        depth,
        gray,
        intrinsics,
        head_center: (rec.cx, rec.cy),
        head_depth: rec.d_mm,
        pose: PoseAngles::new(rec.pitch, rec.roll, rec.yaw),
        shoulder,
    };
    sample.validate()?;
    Ok(sample)
}

fn sample_files(s: &Sample) -> SampleFiles {
    s.files.clone().unwrap_or_else(|| SampleFiles {
        depth: format!("depth/{}.pgm", s.id),
        gray: s.gray.as_ref().map(|_| format!("gray/{}.pgm", s.id)),
    })
}

fn sample_to_record(s: &Sample, files: &SampleFiles) -> Record {
    Record {
        id: s.id.clone(),
        depth: files.depth.clone(),
        gray: s.gray.as_ref().and(files.gray.clone()),
        fx: s.intrinsics.fx,
        fy: s.intrinsics.fy,
        cx: s.head_center.0,
        cy: s.head_center.1,
        d_mm: s.head_depth,
        pitch: s.pose.pitch,
        roll: s.pose.roll,
        yaw: s.pose.yaw,
        shoulder: s.shoulder.map(|a| ShoulderRecord {
            lsx: a.left.x,
            lsy: a.left.y,
            lsz: a.left.z,
            rsx: a.right.x,
            rsy: a.right.y,
            rsz: a.right.z,
            sbx: a.spine_base.x,
            sby: a.spine_base.y,
            sbz: a.spine_base.z,
            s_pitch: a.pose.pitch,
            s_roll: a.pose.roll,
            s_yaw: a.pose.yaw,
        }),
    }
}

/// Reads `root/index.jsonl` and every referenced image. Blank lines are
/// skipped; a missing `dataset.json` means the default convention.
pub fn load_canonical_dataset(root: &Path) -> Result<Dataset> {
    let index = root.join(INDEX_FILE);
    let file = fs::File::open(&index).map_err(|e| Error::file(&index, e))?;
    let mut samples = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::file(&index, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
            path: index.clone(),
            line: i + 1,
            message: e.to_string(),
        })?;
        samples.push(record_to_sample(root, rec)?);
    }
    let meta_path = root.join(META_FILE);
    let meta = if meta_path.exists() {
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::file(&meta_path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", meta_path.display())))?
    } else {
        DatasetMeta::default()
    };
    Dataset::new(samples, meta)
}

/// Writes the index, metadata and images under `root`, creating it if needed.
pub fn write_canonical(dataset: &Dataset, root: &Path) -> Result<()> {
    fs::create_dir_all(root).map_err(|e| Error::file(root, e))?;
    let mut index = Vec::new();
    for s in dataset.samples() {
        let files = sample_files(s);
        pgm::write(&root.join(&files.depth), &s.depth, DEPTH_MAXVAL)?;
        if let (Some(g), Some(path)) = (&s.gray, &files.gray) {
            pgm::write(&root.join(path), g, GRAY_MAXVAL)?;
        }
        serde_json::to_writer(&mut index, &sample_to_record(s, &files)).map_err(|e| Error::Data(e.to_string()))?;
        index.write_all(b"\n")?;
    }
    let index_path = root.join(INDEX_FILE);
    fs::write(&index_path, index).map_err(|e| Error::file(&index_path, e))?;
    let meta_path = root.join(META_FILE);
    let meta = serde_json::to_string_pretty(&dataset.meta).map_err(|e| Error::Data(e.to_string()))?;
    fs::write(&meta_path, meta + "\n").map_err(|e| Error::file(&meta_path, e))
}
