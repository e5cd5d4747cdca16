//! Train/test partitions by sequence or subject.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::canonical::Dataset;
use super::sample::SampleKey;
use crate::error::{Error, Result};

pub const BIWI_TEST_SEQUENCES: [u32; 2] = [11, 12];
pub const PANDORA_TEST_SUBJECTS: [u32; 4] = [10, 14, 16, 20];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitRule {
    /// Everything is training data.
    None,
    TestSequences(Vec<u32>),
    TestSubjects(Vec<u32>),
}

impl SplitRule {
    pub fn biwi() -> Self {
        SplitRule::TestSequences(BIWI_TEST_SEQUENCES.to_vec())
    }

    pub fn pandora() -> Self {
        SplitRule::TestSubjects(PANDORA_TEST_SUBJECTS.to_vec())
    }
}

impl fmt::Display for SplitRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |v: &[u32]| v.iter().map(u32::to_string).collect::<Vec<_>>().join(",");
        match self {
            SplitRule::None => f.write_str("none"),
            SplitRule::TestSequences(v) => write!(f, "sequences:{}", join(v)),
            SplitRule::TestSubjects(v) => write!(f, "subjects:{}", join(v)),
        }
    }
}

impl FromStr for SplitRule {
    type Err = Error;

    /// `none`, `biwi`, `pandora`, `sequences:1,2` or `subjects:3,4`.
    fn from_str(s: &str) -> Result<Self> {
        let list = |v: &str| -> Result<Vec<u32>> {
            v.split(',')
                .map(|x| x.trim().parse::<u32>().map_err(|_| Error::Config(format!("bad id `{x}` in split rule `{s}`"))))
                .collect()
        };
        match s.trim() {
            "" | "none" => Ok(SplitRule::None),
            "biwi" => Ok(SplitRule::biwi()),
            "pandora" => Ok(SplitRule::pandora()),
            other => match other.split_once(':') {
                Some(("sequences", v)) => Ok(SplitRule::TestSequences(list(v)?)),
                Some(("subjects", v)) => Ok(SplitRule::TestSubjects(list(v)?)),
                _ => Err(Error::Config(format!("unknown split rule `{s}`"))),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub rule: String,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// Partitions in dataset order. Every id named by the rule must occur.
pub fn make_split(dataset: &Dataset, rule: &SplitRule) -> Result<DatasetSplit> {
    let (named, by_subject): (&[u32], bool) = match rule {
        SplitRule::None => {
            return Ok(DatasetSplit {
                rule: rule.to_string(),
                train: dataset.samples().iter().map(|s| s.id.clone()).collect(),
                test: Vec::new(),
            })
        }
        SplitRule::TestSequences(v) => (v, false),
        SplitRule::TestSubjects(v) => (v, true),
    };
    let wanted: BTreeSet<u32> = named.iter().copied().collect();
    let mut seen = BTreeSet::new();
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for s in dataset.samples() {
        let key = SampleKey::parse(&s.id)
            .ok_or_else(|| Error::Data(format!("sample id `{}` has no subject/sequence fields", s.id)))?;
        let group = if by_subject { key.subject } else { key.sequence };
        if wanted.contains(&group) {
            seen.insert(group);
            test.push(s.id.clone());
        } else {
            train.push(s.id.clone());
        }
    }
    let missing: Vec<String> = wanted.difference(&seen).map(u32::to_string).collect();
    if !missing.is_empty() {
        return Err(Error::Data(format!(
            "split rule `{rule}` names {} not present in the dataset: {}",
            if by_subject { "subjects" } else { "sequences" },
            missing.join(", ")
        )));
    }
    Ok(DatasetSplit {
        rule: rule.to_string(),
        train,
        test,
    })
}
