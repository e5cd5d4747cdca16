//! Machine-readable and tabular experiment reports.
//!
//! Report contents never include timestamps, so identical runs give identical
//! bytes; the timestamp only appears in file names.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::experiment::{Experiment, FrameRecord};
use super::stats::{ErrorStats, MeanStd, ACCURACY_THRESHOLD_DEG};
use crate::error::{Error, Result};
use crate::geometry::EULER_CONVENTION;

pub const STD_NOTE: &str = "population standard deviation";

/// Hex SHA-256 of a configuration's canonical text.
pub fn config_hash(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

/// One line of the machine-readable report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub name: String,
    pub config_hash: String,
    pub seed: u64,
    pub split: String,
    pub center: String,
    pub occlusion: String,
    pub euler_convention: String,
    pub std: String,
    pub accuracy_threshold_deg: f64,
    pub stats: ErrorStats,
    pub localization: Option<MeanStd>,
}

impl ReportEntry {
    pub fn new(name: &str, config_hash: &str, seed: u64, split: &str, center: &str, occlusion: &str, exp: &Experiment) -> Self {
        Self {
            name: name.to_string(),
            config_hash: config_hash.to_string(),
            seed,
            split: split.to_string(),
            center: center.to_string(),
            occlusion: occlusion.to_string(),
            euler_convention: EULER_CONVENTION.to_string(),
            std: STD_NOTE.to_string(),
            accuracy_threshold_deg: ACCURACY_THRESHOLD_DEG,
            stats: exp.stats,
            localization: exp.localization,
        }
    }
}

pub fn report_to_jsonl(entries: &[ReportEntry]) -> Result<String> {
    let mut s = String::new();
    for e in entries {
        s.push_str(&serde_json::to_string(e).map_err(|e| Error::Data(format!("report: {e}")))?);
        s.push('\n');
    }
    Ok(s)
}

pub fn parse_report(text: &str) -> Result<Vec<ReportEntry>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::MalformedRecord {
                path: PathBuf::from("<report>"),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

fn pm(m: &MeanStd) -> String {
    format!("{:.1} ± {:.1}", m.mean, m.std)
}

/// Aligned plain-text table: one row per experiment with per-angle error,
/// frame accuracy, per-angle accuracies and localization error.
pub fn report_to_table(entries: &[ReportEntry]) -> String {
    let mut s = String::new();
    writeln!(s, "# angles: {EULER_CONVENTION}").unwrap();
    writeln!(s, "# errors: mean ± {STD_NOTE}, degrees").unwrap();
    writeln!(
        s,
        "# accuracy: fraction of frames with all three errors below {ACCURACY_THRESHOLD_DEG} degrees; per-angle fractions in brackets"
    )
    .unwrap();
    if let Some(e) = entries.first() {
        writeln!(s, "# config {} seed {}", e.config_hash, e.seed).unwrap();
    }
    let header = ["experiment", "split", "center", "occlusion", "pitch", "roll", "yaw", "acc", "acc p/r/y", "loc px", "frames"];
    let rows: Vec<Vec<String>> = entries
        .iter()
        .map(|e| {
            vec![
                e.name.clone(),
                e.split.clone(),
                e.center.clone(),
                e.occlusion.clone(),
                pm(&e.stats.pitch),
                pm(&e.stats.roll),
                pm(&e.stats.yaw),
                format!("{:.3}", e.stats.accuracy),
                format!(
                    "[{:.3} {:.3} {:.3}]",
                    e.stats.angle_accuracy[0], e.stats.angle_accuracy[1], e.stats.angle_accuracy[2]
                ),
                e.localization.as_ref().map_or("-".into(), pm),
                e.stats.n_frames.to_string(),
            ]
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|k| rows.iter().map(|r| r[k].chars().count()).chain([header[k].len()]).max().unwrap())
        .collect();
    let line = |cells: Vec<String>| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        padded.join("  ").trim_end().to_string()
    };
    writeln!(s, "{}", line(header.iter().map(|h| h.to_string()).collect())).unwrap();
    for r in rows {
        writeln!(s, "{}", line(r)).unwrap();
    }
    s
}

pub fn records_to_jsonl(records: &[FrameRecord]) -> Result<String> {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r).map_err(|e| Error::Data(format!("records: {e}")))?);
        s.push('\n');
    }
    Ok(s)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportFiles {
    pub jsonl: PathBuf,
    pub table: PathBuf,
}

/// Writes `report-<hash12>-<stamp>.jsonl` and `.txt` under `dir`.
pub fn emit_report(dir: &Path, entries: &[ReportEntry], config_hash: &str, stamp: &str) -> Result<ReportFiles> {
    std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    let short = &config_hash[..config_hash.len().min(12)];
    let base = format!("report-{short}-{stamp}");
    let files = ReportFiles {
        jsonl: dir.join(format!("{base}.jsonl")),
        table: dir.join(format!("{base}.txt")),
    };
    std::fs::write(&files.jsonl, report_to_jsonl(entries)?).map_err(|e| Error::file(&files.jsonl, e))?;
    std::fs::write(&files.table, report_to_table(entries)).map_err(|e| Error::file(&files.table, e))?;
    Ok(files)
}
