//! Plain-text `key = value` run configuration with command line overrides.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use depthpose::eval::config_hash;
use depthpose::{Error, Result};

/// Every accepted key with its default (`None`: unset unless given).
const KEYS: &[(&str, Option<&str>)] = &[
    ("adadelta_eps", None),
    ("adadelta_rho", None),
    ("augment_copies", Some("0")),
    ("augment_jitter_mm", Some("4")),
    ("augment_translation", Some("8")),
    ("augment_zoom", Some("0.9,1.1")),
    ("center", Some("gt")),
    ("checkpoints", None),
    ("count", Some("0")),
    ("dataset", None),
    ("depth_range", Some("850,1250")),
    ("epochs", Some("30")),
    ("flow_clip", Some("8")),
    ("fusion", Some("conv-concat")),
    ("halve_every_epochs", None),
    ("head_range", Some("100,70,125")),
    ("hi_pct", Some("98")),
    ("input", None),
    ("jobs", Some("1")),
    ("lateral_mm", Some("60")),
    ("learning_rate", None),
    ("lo_pct", Some("2")),
    ("minibatch", None),
    ("model", Some("poseidon")),
    ("occlusion", Some("none")),
    ("occlusion_extent", Some("0.4")),
    ("optimizer", None),
    ("out", None),
    ("seed", Some("0")),
    ("sequences", Some("24")),
    ("shoulder_range", Some("20,15,35")),
    ("split", Some("none")),
    ("step_deg", Some("4")),
    ("torso", Some("true")),
];

/// Keys that name locations or worker counts; they never change results and
/// are left out of the config hash.
const UNHASHED: &[&str] = &["checkpoints", "dataset", "input", "jobs", "out"];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn defaults() -> Self {
        let values = KEYS
            .iter()
            .filter_map(|(k, v)| v.map(|v| (k.to_string(), v.to_string())))
            .collect();
        Self { values }
    }

    /// Defaults overlaid with the file's assignments. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::defaults();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{}:{}: expected `key = value`", path.display(), i + 1)))?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("{}:{}: {e}", path.display(), i + 1)))?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        if !KEYS.iter().any(|(k, _)| *k == key) {
            return Err(Error::Config(format!("unknown key `{key}`")));
        }
        self.values.insert(key.to_string(), value.into());
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn set_assignment(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not `key=value`")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.raw(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|_| Error::Config(format!("`{key} = {v}` has the wrong type")))
            })
            .transpose()
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?.ok_or_else(|| Error::Config(format!("`{key}` must be set")))
    }

    /// Comma-separated numbers of a fixed count.
    pub fn list<const N: usize>(&self, key: &str) -> Result<[f64; N]> {
        let raw: String = self.require(key)?;
        let parts: Vec<f64> = raw
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Config(format!("`{key} = {raw}` must be comma-separated numbers")))?;
        parts
            .try_into()
            .map_err(|_| Error::Config(format!("`{key} = {raw}` needs exactly {N} values")))
    }

    /// A directory or file that has to exist already.
    pub fn existing_path(&self, key: &str) -> Result<PathBuf> {
        let p: PathBuf = self.require(key)?;
        if !p.exists() {
            return Err(Error::Config(format!("`{key}`: {} does not exist", p.display())));
        }
        Ok(p)
    }

    /// Sorted `key = value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.values {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn hash(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.values.iter().filter(|(k, _)| !UNHASHED.contains(&k.as_str())) {
            let _ = writeln!(s, "{k} = {v}");
        }
        config_hash(&s)
    }

    pub fn short_hash(&self) -> String {
        self.hash()[..12].to_string()
    }

    pub fn dump(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
        }
        let text = format!("# config_hash = {}\n{}", self.hash(), self.to_text());
        std::fs::write(path, text).map_err(|e| Error::file(path, e))
    }
}
