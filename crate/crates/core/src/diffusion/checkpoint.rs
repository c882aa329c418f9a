//! Model checkpoints: `MFCK`, a little-endian u32 header length, a JSON
//! header, then every parameter as little-endian f32 in declaration order
//! (network first, then the token embedding table if any).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::codec::LatentStats;
use super::prompt::PromptEncoder;
use super::train::{ImageModel, TextModel};
use super::unet::{UNetArch, UNetModel};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MFCK";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Text,
    Image,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub kind: ModelKind,
    pub arch: UNetArch,
    pub schedule_steps: usize,
    pub stats: LatentStats,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab: Option<Vec<String>>,
    pub n_params: usize,
}

/// Either network, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub enum Checkpoint {
    Text(TextModel),
    Image(ImageModel),
}

fn encode_checkpoint(header: &CheckpointHeader, blocks: &[&[f64]]) -> Vec<u8> {
    let json = serde_json::to_vec(header).expect("header serializes");
    let n: usize = blocks.iter().map(|b| b.len()).sum();
    let mut out = Vec::with_capacity(8 + json.len() + 4 * n);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for v in blocks.iter().flat_map(|b| b.iter()) {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn encode_text_model(m: &TextModel) -> Vec<u8> {
    let header = CheckpointHeader {
        kind: ModelKind::Text,
        arch: *m.unet.arch(),
        schedule_steps: m.schedule_steps,
        stats: m.stats.clone(),
        seed: m.seed,
        vocab: Some(m.prompts.vocab().to_vec()),
        n_params: m.unet.n_params(),
    };
    encode_checkpoint(&header, &[m.unet.params(), m.prompts.table()])
}

pub fn encode_image_model(m: &ImageModel) -> Vec<u8> {
    let header = CheckpointHeader {
        kind: ModelKind::Image,
        arch: *m.unet.arch(),
        schedule_steps: m.schedule_steps,
        stats: m.stats.clone(),
        seed: m.seed,
        vocab: None,
        n_params: m.unet.n_params(),
    };
    encode_checkpoint(&header, &[m.unet.params()])
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 8 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a model checkpoint".into()));
    }
    let hlen = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let body = bytes
        .get(8..8 + hlen)
        .ok_or_else(|| Error::Format("checkpoint header truncated".into()))?;
    let header: CheckpointHeader =
        serde_json::from_slice(body).map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
    let payload = &bytes[8 + hlen..];
    if !payload.len().is_multiple_of(4) {
        return Err(Error::Format("checkpoint payload is not whole f32 values".into()));
    }
    let values: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    if values.len() < header.n_params {
        return Err(Error::Format("checkpoint payload truncated".into()));
    }
    let (net, rest) = values.split_at(header.n_params);
    let unet = UNetModel::from_params(header.arch, net.to_vec())?;
    match header.kind {
        ModelKind::Text => {
            let vocab = header
                .vocab
                .ok_or_else(|| Error::Format("text checkpoint without vocabulary".into()))?;
            let dim = header
                .arch
                .cond_dim
                .ok_or_else(|| Error::Format("text checkpoint without prompt width".into()))?;
            let prompts = PromptEncoder::from_table(vocab, dim, rest.to_vec())?;
            Ok(Checkpoint::Text(TextModel {
                unet,
                prompts,
                stats: header.stats,
                schedule_steps: header.schedule_steps,
                seed: header.seed,
            }))
        }
        ModelKind::Image => {
            if !rest.is_empty() {
                return Err(Error::Format("trailing data in image checkpoint".into()));
            }
            Ok(Checkpoint::Image(ImageModel {
                unet,
                stats: header.stats,
                schedule_steps: header.schedule_steps,
                seed: header.seed,
            }))
        }
    }
}

pub fn save_text_model(m: &TextModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_text_model(m)).map_err(|e| Error::io(path, e))
}

pub fn save_image_model(m: &ImageModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_image_model(m)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    decode_checkpoint(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn load_text_model(path: impl AsRef<Path>) -> Result<TextModel> {
    match load_checkpoint(path)? {
        Checkpoint::Text(m) => Ok(m),
        Checkpoint::Image(_) => Err(Error::Format("expected a text-model checkpoint".into())),
    }
}

pub fn load_image_model(path: impl AsRef<Path>) -> Result<ImageModel> {
    match load_checkpoint(path)? {
        Checkpoint::Image(m) => Ok(m),
        Checkpoint::Text(_) => Err(Error::Format("expected an image-model checkpoint".into())),
    }
}
