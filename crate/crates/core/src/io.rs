//! File formats: binary volumes, JSON token files and JSON configs.
//!
//! Volume layout (all integers little-endian):
//!
//! | offset | size        | field                                   |
//! |--------|-------------|-----------------------------------------|
//! | 0      | 8           | magic `UMCFVOL1`                        |
//! | 8      | 4           | version (`u32`, = 1)                    |
//! | 12     | 4           | ndim (`u32`, 3 or 4)                    |
//! | 16     | 8 * ndim    | dims (`u64`): H, W, D[, C]              |
//! | ..     | 4           | dtype (`u32`, 1 = float32 LE)           |
//! | ..     | 4 * product | payload, x fastest, then y, z, channel  |
//!
//! Values are stored as `f32`; writing a grid rounds each value to the
//! nearest `f32`, so reading a written grid back and writing it again
//! reproduces the file byte for byte.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, UmcfError};
use crate::fusion::FusionConfig;
use crate::tokens::{project_embeddings, Modality, PhraseEmbedding, TokenSet};
use crate::field::VoxelGrid;

pub const VOLUME_MAGIC: &[u8; 8] = b"UMCFVOL1";
pub const VOLUME_VERSION: u32 = 1;
pub const DTYPE_F32: u32 = 1;

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| UmcfError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|source| UmcfError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn encode_volume(grid: &VoxelGrid) -> Result<Vec<u8>> {
    let [h, w, d] = grid.dims();
    let c = grid.channels();
    let dims: Vec<u64> = if c == 1 {
        vec![h as u64, w as u64, d as u64]
    } else {
        vec![h as u64, w as u64, d as u64, c as u64]
    };
    let mut out = Vec::with_capacity(24 + 8 * dims.len() + 4 * grid.data().len());
    out.extend_from_slice(VOLUME_MAGIC);
    out.extend_from_slice(&VOLUME_VERSION.to_le_bytes());
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for d in &dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    out.extend_from_slice(&DTYPE_F32.to_le_bytes());
    for (i, &v) in grid.data().iter().enumerate() {
        let f = v as f32;
        if !f.is_finite() {
            return Err(UmcfError::invalid(format!(
                "value {v} at flat index {i} does not fit in float32"
            )));
        }
        out.extend_from_slice(&f.to_le_bytes());
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(UmcfError::format(
                self.bytes.len() as u64,
                format!("file ends inside {what}"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_volume(bytes: &[u8]) -> Result<VoxelGrid> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(8, "magic")? != VOLUME_MAGIC {
        return Err(UmcfError::format(0, "bad magic, expected UMCFVOL1"));
    }
    let version = cur.u32("version")?;
    if version != VOLUME_VERSION {
        return Err(UmcfError::format(8, format!("unsupported version {version}")));
    }
    let ndim = cur.u32("ndim")?;
    if ndim != 3 && ndim != 4 {
        return Err(UmcfError::format(12, format!("ndim must be 3 or 4, got {ndim}")));
    }
    let mut dims = Vec::with_capacity(ndim as usize);
    for i in 0..ndim as usize {
        let offset = cur.pos as u64;
        let d = cur.u64("dims")?;
        let d = usize::try_from(d)
            .ok()
            .filter(|&d| d > 0)
            .ok_or_else(|| UmcfError::format(offset, format!("invalid extent {d} for axis {i}")))?;
        dims.push(d);
    }
    let dtype_offset = cur.pos as u64;
    let dtype = cur.u32("dtype")?;
    if dtype != DTYPE_F32 {
        return Err(UmcfError::format(dtype_offset, format!("unsupported dtype code {dtype}")));
    }
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .and_then(|n| n.checked_mul(4).map(|_| n))
        .ok_or_else(|| UmcfError::format(16, "dims overflow"))?;
    let payload_start = cur.pos;
    let available = bytes.len() - payload_start;
    if available < count * 4 {
        return Err(UmcfError::format(
            bytes.len() as u64,
            format!(
                "truncated payload: {} of {} floats present",
                available / 4,
                count
            ),
        ));
    }
    if available > count * 4 {
        return Err(UmcfError::format(
            (payload_start + count * 4) as u64,
            "trailing bytes after payload",
        ));
    }
    let mut data = Vec::with_capacity(count);
    for i in 0..count {
        let at = payload_start + 4 * i;
        let f = f32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
        if !f.is_finite() {
            return Err(UmcfError::format(at as u64, "non-finite value"));
        }
        data.push(f as f64);
    }
    let channels = if ndim == 4 { dims[3] } else { 1 };
    VoxelGrid::new([dims[0], dims[1], dims[2]], channels, data)
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<VoxelGrid> {
    decode_volume(&read_file(path.as_ref())?)
}

pub fn write_volume(path: impl AsRef<Path>, grid: &VoxelGrid) -> Result<()> {
    write_file(path.as_ref(), &encode_volume(grid)?)
}

/// One token in a token file: either a ready vector (`values`) or the word
/// vectors of a phrase (`words`), which are mean-pooled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenEntry {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub words: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenFile {
    pub dim: usize,
    pub modality: Modality,
    pub tokens: Vec<TokenEntry>,
}

impl TokenFile {
    pub fn from_json(text: &str) -> Result<Self> {
        let file: TokenFile = serde_json::from_str(text)
            .map_err(|e| UmcfError::format(0, format!("token file: {e}")))?;
        file.validate()?;
        Ok(file)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("token file serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(UmcfError::invalid("token file dim must be >= 1"));
        }
        let mut seen = HashSet::new();
        for t in &self.tokens {
            if !seen.insert(t.label.as_str()) {
                return Err(UmcfError::invalid(format!("duplicate token label {:?}", t.label)));
            }
            let vectors: Vec<&Vec<f64>> = match (&t.values, &t.words) {
                (Some(v), None) => vec![v],
                (None, Some(w)) if !w.is_empty() => w.iter().collect(),
                _ => {
                    return Err(UmcfError::invalid(format!(
                        "token {:?} needs exactly one of \"values\" or non-empty \"words\"",
                        t.label
                    )))
                }
            };
            if let Some(v) = vectors.iter().find(|v| v.len() != self.dim) {
                return Err(UmcfError::mismatch(format!(
                    "token {:?} has a vector of dim {}, file dim is {}",
                    t.label,
                    v.len(),
                    self.dim
                )));
            }
        }
        Ok(())
    }

    /// Pools phrases, projects to `expected_dim` when the file's dim differs,
    /// normalizes and computes the prototype.
    pub fn to_token_set(&self, expected_dim: usize, seed: u64) -> Result<TokenSet> {
        self.validate()?;
        let pooled = self
            .tokens
            .iter()
            .map(|t| {
                let words = match (&t.values, &t.words) {
                    (Some(v), _) => vec![v.clone()],
                    (_, Some(w)) => w.clone(),
                    _ => unreachable!("validated"),
                };
                PhraseEmbedding {
                    phrase: t.label.clone(),
                    word_vectors: words,
                }
                .pooled()
            })
            .collect::<Result<Vec<_>>>()?;
        let vectors = if self.dim == expected_dim {
            pooled
        } else {
            project_embeddings(&pooled, expected_dim, seed)?.vectors
        };
        let labels = self.tokens.iter().map(|t| t.label.clone()).collect();
        TokenSet::from_vectors(self.modality, expected_dim, &vectors, labels)
    }
}

pub fn read_token_file(path: impl AsRef<Path>) -> Result<TokenFile> {
    let bytes = read_file(path.as_ref())?;
    let text = String::from_utf8(bytes).map_err(|e| UmcfError::format(e.utf8_error().valid_up_to() as u64, "token file is not UTF-8"))?;
    TokenFile::from_json(&text)
}

pub fn write_token_file(path: impl AsRef<Path>, file: &TokenFile) -> Result<()> {
    write_file(path.as_ref(), file.to_json().as_bytes())
}

pub fn read_tokens(path: impl AsRef<Path>, expected_dim: usize, seed: u64) -> Result<TokenSet> {
    read_token_file(path)?.to_token_set(expected_dim, seed)
}

pub fn read_config(path: impl AsRef<Path>) -> Result<FusionConfig> {
    let bytes = read_file(path.as_ref())?;
    let text = String::from_utf8(bytes).map_err(|_| UmcfError::config("config file is not UTF-8"))?;
    FusionConfig::from_json(&text)
}

pub fn write_config(path: impl AsRef<Path>, cfg: &FusionConfig) -> Result<()> {
    write_file(path.as_ref(), cfg.to_json().as_bytes())
}
