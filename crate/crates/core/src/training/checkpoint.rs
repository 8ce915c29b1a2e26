//! Binary checkpoint format, little-endian throughout:
//!
//! ```text
//! magic      8 bytes  "SIGNETCK"
//! version    u32
//! header     u64 length + JSON (model config, dims, epoch, seed, optimizer step, names)
//! tensors    for every parameter, then every first moment, then every second
//!            moment: rows u64, cols u64, rows*cols f64
//! checksum   SHA-256 of all preceding bytes
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{Adam, ModelState};
use crate::model::{ModelConfig, ModelError, Signet};
use crate::numerics::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SIGNETCK";
pub const CHECKPOINT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    Incompatible { found: u32, expected: u32 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    node_dim: usize,
    dual_dim: usize,
    epoch: usize,
    seed: u64,
    step: u64,
    names: Vec<String>,
}

fn push_tensor(buf: &mut Vec<u8>, t: &Tensor) {
    buf.extend_from_slice(&(t.rows() as u64).to_le_bytes());
    buf.extend_from_slice(&(t.cols() as u64).to_le_bytes());
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serializes a state to bytes.
pub fn encode(state: &ModelState) -> Vec<u8> {
    let model = &state.model;
    let header = Header {
        model: model.config().clone(),
        node_dim: model.node_dim(),
        dual_dim: model.dual_dim(),
        epoch: state.epoch,
        seed: state.seed,
        step: state.optimizer.step,
        names: model.params().names().to_vec(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    let tensors = model
        .params()
        .tensors()
        .iter()
        .chain(&state.optimizer.m)
        .chain(&state.optimizer.v);
    for t in tensors {
        push_tensor(&mut buf, t);
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| CheckpointError::Corrupt(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn tensor(&mut self) -> Result<Tensor, CheckpointError> {
        let rows = self.u64()? as usize;
        let cols = self.u64()? as usize;
        let len = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| CheckpointError::Corrupt("tensor size overflows".into()))?;
        let raw = self.take(len)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Tensor::new(rows, cols, data).map_err(|e| CheckpointError::Corrupt(e.to_string()))
    }
}

/// Parses bytes produced by [`encode`]. Nothing is returned unless the whole
/// file checks out.
pub fn decode(bytes: &[u8]) -> Result<ModelState, CheckpointError> {
    if bytes.len() < CHECKPOINT_MAGIC.len() + 4 + 8 + DIGEST_LEN {
        return Err(CheckpointError::Corrupt(format!(
            "file is only {} bytes",
            bytes.len()
        )));
    }
    if &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(CheckpointError::Corrupt("bad magic".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(CheckpointError::Corrupt("checksum mismatch".into()));
    }
    let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Incompatible {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let mut r = Reader {
        bytes: body,
        pos: 12,
    };
    let header_len = r.u64()? as usize;
    let header: Header = serde_json::from_slice(r.take(header_len)?)
        .map_err(|e| CheckpointError::Corrupt(format!("header: {e}")))?;
    let mut model = Signet::new(header.model, header.node_dim, header.dual_dim, header.seed)?;
    let n = model.params().len();
    if header.names.len() != n {
        return Err(CheckpointError::Corrupt(format!(
            "header lists {} tensors, model has {n}",
            header.names.len()
        )));
    }
    let mut read = |count: usize| {
        (0..count)
            .map(|_| r.tensor())
            .collect::<Result<Vec<_>, _>>()
    };
    let params = read(n)?;
    let m = read(n)?;
    let v = read(n)?;
    if r.pos != body.len() {
        return Err(CheckpointError::Corrupt("trailing bytes".into()));
    }
    for (a, b) in params.iter().zip(m.iter().zip(&v)) {
        if a.shape() != b.0.shape() || a.shape() != b.1.shape() {
            return Err(CheckpointError::Corrupt(
                "moment shapes differ from parameters".into(),
            ));
        }
    }
    model.load_params(header.names.into_iter().zip(params).collect())?;
    let mut optimizer = Adam::new(model.params().tensors());
    optimizer.step = header.step;
    optimizer.m = m;
    optimizer.v = v;
    Ok(ModelState {
        model,
        optimizer,
        epoch: header.epoch,
        seed: header.seed,
    })
}

/// Writes the state atomically (temporary file, then rename).
pub fn save_checkpoint(state: &ModelState, path: &Path) -> Result<(), CheckpointError> {
    let io = |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(io)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(&encode(state)).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelState, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode(&bytes)
}
