//! Binary model container shared by the generator and the understanding model.
//!
//! Layout, all integers little-endian:
//! `MAGIC | version u32 | kind u8 | header_len u64 | header JSON |
//!  n_arrays u32 | { name_len u32 | name | ndim u32 | dims u64* | values f64* }*`.
//! The header carries the model configuration and vocabularies; loading
//! rebuilds the layout from it and checks every array name and shape.

use std::path::{Path, PathBuf};

use nlgrl_core::corpus::TokenVocabulary;
use nlgrl_core::nn::nlu::{NluConfig, NluLabels};
use nlgrl_core::nn::policy::PolicyConfig;
use nlgrl_core::nn::{ModelError, Params};
use nlgrl_core::{NluModel, PolicyModel};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{write_atomic, IoError};

pub const MAGIC: &[u8; 8] = b"NLGRLCKP";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum ModelKind {
    Policy = 1,
    Nlu = 2,
}

impl ModelKind {
    fn from_byte(b: u8) -> Option<Self> {
        match b {
            1 => Some(ModelKind::Policy),
            2 => Some(ModelKind::Nlu),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("{}: not a checkpoint (bad magic bytes)", .0.display())]
    BadMagic(PathBuf),
    #[error("{}: unsupported checkpoint version {found} (expected {VERSION})", path.display())]
    Version { path: PathBuf, found: u32 },
    #[error("{}: checkpoint holds a {found:?} model, expected {expected:?}", path.display())]
    WrongKind { path: PathBuf, expected: ModelKind, found: Option<ModelKind> },
    #[error("{}: truncated at byte {at}", path.display())]
    Truncated { path: PathBuf, at: usize },
    #[error("{}: bad header: {message}", path.display())]
    Header { path: PathBuf, message: String },
    #[error("{}: {source}", path.display())]
    Model { path: PathBuf, source: ModelError },
}

#[derive(Serialize, Deserialize)]
struct PolicyHeader {
    config: PolicyConfig,
    vocab: TokenVocabulary,
}

#[derive(Serialize, Deserialize)]
struct NluHeader {
    config: NluConfig,
    vocab: TokenVocabulary,
    labels: NluLabels,
}

fn encode<H: Serialize>(kind: ModelKind, header: &H, params: &Params) -> Vec<u8> {
    let header = serde_json::to_vec(header).expect("serializable");
    let mut out = Vec::with_capacity(64 + header.len() + 8 * params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(kind as u8);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    let arrays: Vec<_> = params.named().collect();
    out.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
    for (name, shape, values) in arrays {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| CheckpointError::Truncated { path: self.path.to_path_buf(), at: self.at })?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn len(&mut self, n: u64) -> Result<usize, CheckpointError> {
        usize::try_from(n).map_err(|_| CheckpointError::Truncated { path: self.path.to_path_buf(), at: self.at })
    }
}

type Arrays = Vec<(String, Vec<usize>, Vec<f64>)>;

fn decode<'a>(path: &'a Path, bytes: &'a [u8], kind: ModelKind) -> Result<(&'a [u8], Arrays), CheckpointError> {
    let mut r = Reader { bytes, at: 0, path };
    if r.take(MAGIC.len()).ok() != Some(MAGIC.as_slice()) {
        return Err(CheckpointError::BadMagic(path.to_path_buf()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::Version { path: path.to_path_buf(), found: version });
    }
    let found = r.take(1)?[0];
    if found != kind as u8 {
        return Err(CheckpointError::WrongKind { path: path.to_path_buf(), expected: kind, found: ModelKind::from_byte(found) });
    }
    let n = r.u64()?;
    let n = r.len(n)?;
    let header = r.take(n)?;
    let count = r.u32()?;
    let mut arrays = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let n = r.u32()? as usize;
        let name = String::from_utf8(r.take(n)?.to_vec())
            .map_err(|_| CheckpointError::Header { path: path.to_path_buf(), message: "array name is not UTF-8".into() })?;
        let ndim = r.u32()?;
        let mut shape = Vec::with_capacity(ndim as usize);
        for _ in 0..ndim {
            let d = r.u64()?;
            shape.push(r.len(d)?);
        }
        let count = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).and_then(|c| c.checked_mul(8));
        let count = count.ok_or_else(|| CheckpointError::Truncated { path: path.to_path_buf(), at: r.at })?;
        let values = r.take(count)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        arrays.push((name, shape, values));
    }
    if r.at != bytes.len() {
        return Err(CheckpointError::Header { path: path.to_path_buf(), message: format!("{} trailing bytes", bytes.len() - r.at) });
    }
    Ok((header, arrays))
}

fn header<T: serde::de::DeserializeOwned>(path: &Path, bytes: &[u8]) -> Result<T, CheckpointError> {
    serde_json::from_slice(bytes).map_err(|e| CheckpointError::Header { path: path.to_path_buf(), message: e.to_string() })
}

fn fill(path: &Path, params: &mut Params, arrays: &Arrays) -> Result<(), CheckpointError> {
    params
        .load_named(arrays.iter().map(|(n, s, v)| (n.as_str(), s.as_slice(), v.as_slice())))
        .map_err(|source| CheckpointError::Model { path: path.to_path_buf(), source })
}

pub fn policy_bytes(model: &PolicyModel) -> Vec<u8> {
    encode(ModelKind::Policy, &PolicyHeader { config: model.config, vocab: model.vocab.clone() }, &model.params)
}

pub fn nlu_bytes(model: &NluModel) -> Vec<u8> {
    let h = NluHeader { config: model.config, vocab: model.vocab.clone(), labels: model.labels.clone() };
    encode(ModelKind::Nlu, &h, &model.params)
}

pub fn policy_from_bytes(path: &Path, bytes: &[u8]) -> Result<PolicyModel, CheckpointError> {
    let (h, arrays) = decode(path, bytes, ModelKind::Policy)?;
    let h: PolicyHeader = header(path, h)?;
    let mut m = PolicyModel::empty(h.config, h.vocab).map_err(|source| CheckpointError::Model { path: path.to_path_buf(), source })?;
    fill(path, &mut m.params, &arrays)?;
    Ok(m)
}

pub fn nlu_from_bytes(path: &Path, bytes: &[u8]) -> Result<NluModel, CheckpointError> {
    let (h, arrays) = decode(path, bytes, ModelKind::Nlu)?;
    let h: NluHeader = header(path, h)?;
    let mut m = NluModel::empty(h.config, h.vocab, h.labels).map_err(|source| CheckpointError::Model { path: path.to_path_buf(), source })?;
    fill(path, &mut m.params, &arrays)?;
    Ok(m)
}

fn read(path: &Path) -> Result<Vec<u8>, CheckpointError> {
    std::fs::read(path).map_err(|source| IoError::Io { path: path.to_path_buf(), source }.into())
}

pub fn save_policy(model: &PolicyModel, path: &Path) -> Result<(), CheckpointError> {
    Ok(write_atomic(path, &policy_bytes(model))?)
}

pub fn load_policy(path: &Path) -> Result<PolicyModel, CheckpointError> {
    policy_from_bytes(path, &read(path)?)
}

pub fn save_nlu(model: &NluModel, path: &Path) -> Result<(), CheckpointError> {
    Ok(write_atomic(path, &nlu_bytes(model))?)
}

pub fn load_nlu(path: &Path) -> Result<NluModel, CheckpointError> {
    nlu_from_bytes(path, &read(path)?)
}
