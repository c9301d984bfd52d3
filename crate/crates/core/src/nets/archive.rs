//! Flat little-endian `f64` tensor archive with a JSON manifest.
//!
//! A checkpoint `<stem>` is two files: `<stem>.bin` holding the concatenated
//! tensor bytes and `<stem>.json` describing them:
//!
//! ```json
//! {"format":"metadyn-tensors","version":1,"endianness":"little","dtype":"f64",
//!  "tensors":[{"name":"w_gates","shape":[256,68],"offset":0,"nbytes":139264}],
//!  "meta":{}}
//! ```

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{LstmParams, TensorRef};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const FORMAT: &str = "metadyn-tensors";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub nbytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub endianness: String,
    pub dtype: String,
    pub tensors: Vec<TensorEntry>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Archive {
    pub tensors: Vec<NamedTensor>,
    pub meta: serde_json::Value,
}

impl Archive {
    pub fn get(&self, name: &str) -> Result<&NamedTensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Archive(format!("missing tensor `{name}`")))
    }
}

/// Tensors named `prefix + name`, e.g. `net0/` + `w_gates`.
pub fn encode<'a>(
    groups: impl IntoIterator<Item = (String, Vec<TensorRef<'a>>)>,
    meta: serde_json::Value,
) -> (String, Vec<u8>) {
    let mut bytes = Vec::new();
    let mut entries = Vec::new();
    for (prefix, tensors) in groups {
        for t in tensors {
            let offset = bytes.len() as u64;
            for v in t.data {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            entries.push(TensorEntry {
                name: format!("{prefix}{}", t.name),
                shape: t.shape,
                offset,
                nbytes: (t.data.len() * 8) as u64,
            });
        }
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        endianness: "little".into(),
        dtype: "f64".into(),
        tensors: entries,
        meta,
    };
    (
        serde_json::to_string_pretty(&manifest).expect("manifest serialises"),
        bytes,
    )
}

/// Parse and validate an archive. Rejects anything inconsistent rather than
/// reading out of bounds.
pub fn decode(manifest: &str, bytes: &[u8]) -> Result<Archive> {
    let m: Manifest = serde_json::from_str(manifest)?;
    if m.format != FORMAT {
        return Err(Error::Archive(format!("unknown format `{}`", m.format)));
    }
    if m.version != VERSION {
        return Err(Error::Archive(format!("unsupported version {}", m.version)));
    }
    if m.endianness != "little" || m.dtype != "f64" {
        return Err(Error::Archive(format!(
            "expected little-endian f64, got {} {}",
            m.endianness, m.dtype
        )));
    }
    let mut seen = HashSet::new();
    let mut tensors = Vec::with_capacity(m.tensors.len());
    for e in &m.tensors {
        if !seen.insert(e.name.as_str()) {
            return Err(Error::Archive(format!("duplicate tensor `{}`", e.name)));
        }
        let count = e
            .shape
            .iter()
            .try_fold(1usize, |acc, d| acc.checked_mul(*d))
            .ok_or_else(|| Error::Archive(format!("`{}`: shape overflows", e.name)))?;
        if count.checked_mul(8).map(|n| n as u64) != Some(e.nbytes) {
            return Err(Error::Archive(format!("`{}`: nbytes does not match shape", e.name)));
        }
        let end = e
            .offset
            .checked_add(e.nbytes)
            .filter(|end| *end <= bytes.len() as u64)
            .ok_or_else(|| Error::Archive(format!("`{}`: extends past end of data", e.name)))?;
        let slice = &bytes[e.offset as usize..end as usize];
        let data: Vec<f64> = slice
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Archive(format!("`{}`: non-finite value", e.name)));
        }
        tensors.push(NamedTensor {
            name: e.name.clone(),
            shape: e.shape.clone(),
            data,
        });
    }
    Ok(Archive { tensors, meta: m.meta })
}

fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("json"), stem.with_extension("bin"))
}

pub fn write(stem: &Path, manifest: &str, bytes: &[u8]) -> Result<()> {
    let (json, bin) = paths(stem);
    if let Some(dir) = stem.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(bin, bytes)?;
    fs::write(json, manifest)?;
    Ok(())
}

pub fn read(stem: &Path) -> Result<Archive> {
    let (json, bin) = paths(stem);
    decode(&fs::read_to_string(json)?, &fs::read(bin)?)
}

fn matrix(t: &NamedTensor, rows: usize, cols: usize) -> Result<Matrix> {
    if t.shape != [rows, cols] {
        return Err(Error::Archive(format!(
            "`{}` has shape {:?}, expected [{rows}, {cols}]",
            t.name, t.shape
        )));
    }
    Matrix::from_vec(rows, cols, t.data.clone())
}

fn vector(t: &NamedTensor, len: usize) -> Result<Vec<f64>> {
    if t.shape != [len] {
        return Err(Error::Archive(format!(
            "`{}` has shape {:?}, expected [{len}]",
            t.name, t.shape
        )));
    }
    Ok(t.data.clone())
}

impl LstmParams {
    /// Rebuild from tensors stored under `prefix`.
    pub fn from_archive(archive: &Archive, prefix: &str) -> Result<Self> {
        let w_gates = archive.get(&format!("{prefix}w_gates"))?;
        let w_out = archive.get(&format!("{prefix}w_out"))?;
        let (g_rows, g_cols) = match w_gates.shape.as_slice() {
            [r, c] => (*r, *c),
            _ => return Err(Error::Archive("w_gates must be 2-D".into())),
        };
        if g_rows == 0 || g_rows % 4 != 0 {
            return Err(Error::Archive("w_gates rows must be a positive multiple of 4".into()));
        }
        let hidden = g_rows / 4;
        if g_cols <= hidden {
            return Err(Error::Archive("w_gates has no input columns".into()));
        }
        let input = g_cols - hidden;
        let output = match w_out.shape.as_slice() {
            [o, _] => *o,
            _ => return Err(Error::Archive("w_out must be 2-D".into())),
        };
        let p = LstmParams {
            input_size: input,
            hidden_size: hidden,
            output_size: output,
            w_gates: matrix(w_gates, 4 * hidden, input + hidden)?,
            b_gates: vector(archive.get(&format!("{prefix}b_gates"))?, 4 * hidden)?,
            w_out: matrix(w_out, output, hidden)?,
            b_out: vector(archive.get(&format!("{prefix}b_out"))?, output)?,
        };
        p.check_shapes()?;
        Ok(p)
    }
}
