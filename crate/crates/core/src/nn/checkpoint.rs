//! Binary checkpoint layout:
//!
//! ```text
//! magic      8 bytes   "CHAINCK1"
//! length     u64 LE    byte length of the manifest
//! manifest   JSON      {"version":1,"tensors":[{"name","shape","offset"}],"extra":...}
//! data       f64 LE    tensors back to back; offsets count bytes from here
//! ```
//!
//! `extra` carries caller state (training counters, seeds) and may be null.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{NnError, ParameterSet, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CHAINCK1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    tensors: Vec<Entry>,
    #[serde(default)]
    extra: Value,
}

impl ParameterSet {
    pub fn write_to<W: Write>(&self, mut w: W, extra: &Value) -> Result<()> {
        let mut offset = 0u64;
        let tensors = self
            .names
            .iter()
            .zip(&self.tensors)
            .map(|(name, t)| {
                let e = Entry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    offset,
                };
                offset += 8 * t.numel() as u64;
                e
            })
            .collect();
        let manifest = Manifest {
            version: CHECKPOINT_VERSION,
            tensors,
            extra: extra.clone(),
        };
        let json = serde_json::to_vec(&manifest).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        for t in &self.tensors {
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<(ParameterSet, Value)> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(NnError::Checkpoint("bad magic".into()));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let len = u64::from_le_bytes(len);
        let mut json = vec![0u8; usize::try_from(len).map_err(|_| bad("manifest length"))?];
        r.read_exact(&mut json)?;
        let manifest: Manifest =
            serde_json::from_slice(&json).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        if manifest.version != CHECKPOINT_VERSION {
            return Err(NnError::Checkpoint(format!(
                "unsupported version {}",
                manifest.version
            )));
        }
        let mut data = Vec::new();
        r.read_to_end(&mut data)?;

        let mut params = ParameterSet::new();
        let mut expected_offset = 0u64;
        for e in manifest.tensors {
            if e.offset != expected_offset {
                return Err(bad(&format!("{}: offset {} not contiguous", e.name, e.offset)));
            }
            let n: usize = e.shape.iter().product();
            let start = e.offset as usize;
            let end = start + 8 * n;
            let bytes = data
                .get(start..end)
                .ok_or_else(|| bad(&format!("{}: data truncated", e.name)))?;
            let values = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            params.add(e.name, Tensor::new(e.shape, values)?)?;
            expected_offset = end as u64;
        }
        if expected_offset as usize != data.len() {
            return Err(bad("trailing bytes after last tensor"));
        }
        Ok((params, manifest.extra))
    }

    pub fn save(&self, path: &Path, extra: &Value) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?), extra)
    }

    pub fn load(path: &Path) -> Result<(ParameterSet, Value)> {
        ParameterSet::read_from(BufReader::new(File::open(path)?))
    }
}

fn bad(msg: &str) -> NnError {
    NnError::Checkpoint(msg.to_string())
}
