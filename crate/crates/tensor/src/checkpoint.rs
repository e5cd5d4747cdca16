//! Versioned binary container for one or more networks.
//!
//! Layout:
//!
//! ```text
//! magic      8 bytes   "DPOSECKP"
//! version    u32 LE
//! header_len u64 LE
//! header     UTF-8 JSON: epoch, metadata, and per network its spec plus a
//!            directory of tensors (key, slot, shape) in storage order
//! payload    each tensor's values as row-major f64 LE, in directory order
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TensorError};
use crate::network::{ModelState, Network, NetworkSpec, ParamKey};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"DPOSECKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedNetwork {
    pub name: String,
    pub network: Network,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub epoch: u32,
    pub metadata: BTreeMap<String, String>,
    pub networks: Vec<NamedNetwork>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    key: String,
    /// `None` for the parameter itself, `Some(i)` for optimizer slot `i`.
    slot: Option<usize>,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct NetworkEntry {
    name: String,
    spec: NetworkSpec,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    epoch: u32,
    metadata: BTreeMap<String, String>,
    networks: Vec<NetworkEntry>,
}

fn corrupt(msg: impl Into<String>) -> TensorError {
    TensorError::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_network(mut self, name: impl Into<String>, network: Network) -> Self {
        self.networks.push(NamedNetwork {
            name: name.into(),
            network,
        });
        self
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.metadata.insert(key.into(), value.into());
        self
    }

    pub fn network(&self, name: &str) -> Result<&Network> {
        self.networks
            .iter()
            .find(|n| n.name == name)
            .map(|n| &n.network)
            .ok_or_else(|| corrupt(format!("no network named `{name}`")))
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.metadata
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| corrupt(format!("missing metadata key `{key}`")))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let mut payload: Vec<&Tensor> = Vec::new();
        let mut networks = Vec::with_capacity(self.networks.len());
        for named in &self.networks {
            let state = &named.network.state;
            let mut tensors = Vec::new();
            for (key, t) in &state.params {
                tensors.push(TensorEntry {
                    key: key.to_string(),
                    slot: None,
                    shape: t.shape().to_vec(),
                });
                payload.push(t);
            }
            for (key, slots) in &state.slots {
                for (i, t) in slots.iter().enumerate() {
                    tensors.push(TensorEntry {
                        key: key.to_string(),
                        slot: Some(i),
                        shape: t.shape().to_vec(),
                    });
                    payload.push(t);
                }
            }
            networks.push(NetworkEntry {
                name: named.name.clone(),
                spec: named.network.spec.clone(),
                tensors,
            });
        }
        let header = serde_json::to_vec(&Header {
            epoch: self.epoch,
            metadata: self.metadata.clone(),
            networks,
        })
        .map_err(|e| corrupt(e.to_string()))?;

        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        for t in payload {
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(corrupt("bad magic; not a checkpoint file"));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != FORMAT_VERSION {
            return Err(corrupt(format!("unsupported format version {version}")));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let header_len = u64::from_le_bytes(b8) as usize;
        let mut header = vec![0u8; header_len];
        r.read_exact(&mut header)?;
        let header: Header = serde_json::from_slice(&header).map_err(|e| corrupt(format!("header: {e}")))?;

        let mut networks = Vec::with_capacity(header.networks.len());
        for entry in header.networks {
            let mut state = ModelState::default();
            for te in entry.tensors {
                let key: ParamKey = te.key.parse()?;
                let n: usize = te.shape.iter().product();
                let mut bytes = vec![0u8; n * 8];
                r.read_exact(&mut bytes)?;
                let data = bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                    .collect();
                let t = Tensor::new(&te.shape, data)?;
                match te.slot {
                    None => {
                        state.params.insert(key, t);
                    }
                    Some(i) => {
                        let slots = state.slots.entry(key).or_default();
                        if slots.len() != i {
                            return Err(corrupt(format!("slot {i} of {key} out of order")));
                        }
                        slots.push(t);
                    }
                }
            }
            let network = Network::from_parts(entry.spec, state)?;
            networks.push(NamedNetwork {
                name: entry.name,
                network,
            });
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(corrupt("trailing bytes after payload"));
        }
        Ok(Self {
            epoch: header.epoch,
            metadata: header.metadata,
            networks,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = fs::File::create(path)?;
        self.write_to(BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = fs::File::open(path)?;
        Self::read_from(BufReader::new(f))
    }
}
