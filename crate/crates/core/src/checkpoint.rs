//! Single-file model checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes   "MCLSTMCK"
//! version      u32       FORMAT_VERSION
//! header_len   u64
//! header       JSON      { config, vocabulary, meta, tensors: [{name, len}] }
//! payload      f64 LE    every tensor, in ModelParams::tensors() order
//! checksum     u32       CRC-32 (IEEE) of every preceding byte
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, ModelParams};

pub const MAGIC: &[u8; 8] = b"MCLSTMCK";
pub const FORMAT_VERSION: u32 = 1;

/// Bookkeeping stored next to the weights.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub epoch: usize,
    pub valid_perplexity: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocabulary: Vocabulary,
    meta: CheckpointMeta,
    tensors: Vec<TensorEntry>,
}

/// Everything a checkpoint restores.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model,
    pub vocabulary: Vocabulary,
    pub meta: CheckpointMeta,
}

pub fn encode(model: &Model, vocab: &Vocabulary, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    if vocab.len() != model.config.vocab_size {
        return Err(Error::InvalidArgument(format!(
            "vocabulary has {} tokens, model expects {}",
            vocab.len(),
            model.config.vocab_size
        )));
    }
    let tensors = model.params.tensors();
    let header = Header {
        config: model.config.clone(),
        vocabulary: vocab.clone(),
        meta: meta.clone(),
        tensors: model
            .params
            .tensor_names()
            .into_iter()
            .zip(&tensors)
            .map(|(name, t)| TensorEntry { name, len: t.len() })
            .collect(),
    };
    let header = serde_json::to_vec(&header)
        .map_err(|e| Error::InvalidArgument(format!("cannot serialize header: {e}")))?;
    let payload_len: usize = tensors.iter().map(|t| t.len() * 8).sum();

    let mut out = Vec::with_capacity(8 + 4 + 8 + header.len() + payload_len + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for t in &tensors {
        for v in *t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CheckpointCorrupt(msg.into())
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(corrupt(format!("truncated while reading {what}")));
    }
    let (head, tail) = bytes.split_at(n);
    *bytes = tail;
    Ok(head)
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut rest = bytes;
    if take(&mut rest, 8, "magic")? != MAGIC {
        return Err(corrupt("not a checkpoint file (bad magic)"));
    }
    let version = u32::from_le_bytes(take(&mut rest, 4, "version")?.try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    if bytes.len() < 4 {
        return Err(corrupt("truncated checksum"));
    }
    let (body, crc) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(crc.try_into().unwrap()) {
        return Err(corrupt("checksum mismatch"));
    }
    let mut rest = &body[12..];
    let header_len = u64::from_le_bytes(take(&mut rest, 8, "header length")?.try_into().unwrap());
    let header_len = usize::try_from(header_len).map_err(|_| corrupt("header length overflow"))?;
    let header: Header = serde_json::from_slice(take(&mut rest, header_len, "header")?)
        .map_err(|e| corrupt(format!("bad header: {e}")))?;

    let mut params = ModelParams::zeros(&header.config)
        .map_err(|e| corrupt(format!("stored config is invalid: {e}")))?;
    let names = params.tensor_names();
    if names.len() != header.tensors.len() {
        return Err(corrupt("tensor table does not match config"));
    }
    for ((slot, entry), name) in params
        .tensors_mut()
        .into_iter()
        .zip(&header.tensors)
        .zip(&names)
    {
        if entry.name != *name || entry.len != slot.len() {
            return Err(corrupt(format!(
                "tensor {} ({}) does not match expected {name} ({})",
                entry.name,
                entry.len,
                slot.len()
            )));
        }
        let raw = take(&mut rest, slot.len() * 8, "tensor payload")?;
        for (v, chunk) in slot.iter_mut().zip(raw.chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    if !rest.is_empty() {
        return Err(corrupt(format!("{} trailing bytes", rest.len())));
    }
    if header.vocabulary.len() != header.config.vocab_size {
        return Err(corrupt("vocabulary size does not match config"));
    }
    let model = Model::from_parts(header.config, params).map_err(|e| corrupt(e.to_string()))?;
    Ok(Checkpoint {
        model,
        vocabulary: header.vocabulary,
        meta: header.meta,
    })
}

/// Writes the checkpoint through a temporary sibling file and a rename.
pub fn save_checkpoint(
    path: &Path,
    model: &Model,
    vocab: &Vocabulary,
    meta: &CheckpointMeta,
) -> Result<()> {
    let bytes = encode(model, vocab, meta)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::CheckpointMissing(path.to_path_buf()),
        _ => Error::io(path, e),
    })?;
    decode(&bytes)
}
