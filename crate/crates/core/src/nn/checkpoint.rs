//! Checkpoint file layout (all integers little-endian):
//!
//! ```text
//! offset  size  content
//! 0       5     magic "WSEG1"
//! 5       8     u64 header length L
//! 13      L     UTF-8 JSON header (CheckpointHeader)
//! 13+L    4*P   f32 parameter values, concatenated in header order
//! ```
//!
//! `P` is the sum of the element counts of the header's parameter shapes.
//! The header carries the SHA-256 of the payload, so flipped bits are caught
//! on load as well as truncation.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{bail, Error, Result};
use crate::unet::{build_unet, Stage, UNet, UNetConfig};

pub const MAGIC: &[u8; 5] = b"WSEG1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// What the network was trained to produce: `texture`, a pretext kind, or `wrinkles`.
    pub task: String,
    pub epoch: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub arch: UNetConfig,
    pub stage: Stage,
    pub task: String,
    pub epoch: usize,
    pub seed: u64,
    pub params: Vec<ParamEntry>,
    pub payload_sha256: String,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn checkpoint_bytes(model: &UNet<f32>, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    let params = model.graph().params();
    let total: usize = params.iter().map(|p| p.len()).sum();
    let mut payload = Vec::with_capacity(4 * total);
    for p in &params {
        for v in &p.value {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = CheckpointHeader {
        arch: *model.config(),
        stage: model.stage(),
        task: meta.task.clone(),
        epoch: meta.epoch,
        seed: meta.seed,
        params: params
            .iter()
            .map(|p| ParamEntry {
                name: p.name.clone(),
                shape: p.shape.clone(),
            })
            .collect(),
        payload_sha256: hex(&Sha256::digest(&payload)),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(13 + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<(UNet<f32>, CheckpointHeader)> {
    if bytes.len() < 13 || &bytes[..5] != MAGIC {
        bail!(Format, "missing WSEG1 magic");
    }
    let hlen = u64::from_le_bytes(bytes[5..13].try_into().expect("8 bytes")) as usize;
    let Some(json) = bytes.get(13..13usize.saturating_add(hlen)) else {
        bail!(Corrupt, "header length {hlen} exceeds file size {}", bytes.len());
    };
    let header: CheckpointHeader = serde_json::from_slice(json)
        .map_err(|e| Error::Corrupt(format!("unreadable header: {e}")))?;
    let payload = &bytes[13 + hlen..];
    let total: usize = header.params.iter().map(|p| p.shape.iter().product::<usize>()).sum();
    if payload.len() != 4 * total {
        bail!(
            Corrupt,
            "payload is {} bytes, header shapes need {}",
            payload.len(),
            4 * total
        );
    }
    if hex(&Sha256::digest(payload)) != header.payload_sha256 {
        bail!(Corrupt, "payload checksum mismatch");
    }
    let mut model = build_unet::<f32>(&header.arch)?;
    {
        let mut params = model.graph_mut().params_mut();
        if params.len() != header.params.len() {
            bail!(
                Corrupt,
                "header lists {} tensors, architecture has {}",
                header.params.len(),
                params.len()
            );
        }
        let mut floats = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
        for (p, entry) in params.iter_mut().zip(&header.params) {
            if p.name != entry.name || p.shape != entry.shape {
                bail!(
                    Corrupt,
                    "header entry {} {:?} does not match architecture tensor {} {:?}",
                    entry.name,
                    entry.shape,
                    p.name,
                    p.shape
                );
            }
            for v in p.value.iter_mut() {
                *v = floats.next().expect("payload length checked");
            }
        }
    }
    model.set_stage(header.stage);
    Ok((model, header))
}

pub fn save_checkpoint(model: &UNet<f32>, meta: &CheckpointMeta, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, checkpoint_bytes(model, meta)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(UNet<f32>, CheckpointHeader)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_bytes(&bytes)
}

/// Short content hash used to identify a checkpoint in reports.
pub fn checkpoint_id(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes)[..8])
}
