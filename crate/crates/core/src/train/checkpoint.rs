//! Checkpoint serialization: a one-line JSON header describing each head,
//! followed by the raw little-endian `f64` parameters of every head in order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::train::head::{Architecture, HeadCore, Pooling, ProjectionHead};
use crate::train::HeadPair;

/// Format tag written into every checkpoint header.
pub const CHECKPOINT_FORMAT: &str = "egoleak-ckpt-v1";

/// Kinds of checkpoint payloads.
pub const KIND_EMBED_PAIR: &str = "embed-pair";
pub const KIND_CLASSIFIER: &str = "classifier";

/// Shape of one serialized head, enough to rebuild it before loading params.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub role: String,
    pub architecture: String,
    pub pooling: String,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub param_count: usize,
}

impl HeadSpec {
    /// Describe an existing head under the given role.
    pub fn of(role: &str, core: &HeadCore) -> Self {
        HeadSpec {
            role: role.to_string(),
            architecture: core.architecture().as_str().to_string(),
            pooling: core.pooling().as_str().to_string(),
            input_dim: core.input_dim(),
            hidden_dim: core.hidden_dim(),
            output_dim: core.output_dim(),
            param_count: core.param_count(),
        }
    }

    /// Rebuild a zero-initialized head matching this spec.
    pub fn build(&self) -> Result<HeadCore> {
        let arch: Architecture = self.architecture.parse()?;
        let pooling: Pooling = self.pooling.parse()?;
        let core = HeadCore::new(arch, pooling, self.input_dim, self.hidden_dim, self.output_dim)?;
        if core.param_count() != self.param_count {
            return Err(Error::MalformedCheckpoint(format!(
                "head '{}' declares {} parameters but its shape implies {}",
                self.role,
                self.param_count,
                core.param_count()
            )));
        }
        Ok(core)
    }
}

/// Header line of a checkpoint file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub kind: String,
    pub step: u64,
    pub heads: Vec<HeadSpec>,
    /// Attribute name, present only for classifier checkpoints.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribute: Option<String>,
    /// Class labels in prediction-index order, classifier checkpoints only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<Vec<String>>,
}

/// Write a header plus one parameter blob per head.
pub fn write_checkpoint(path: &Path, header: &CheckpointHeader, blobs: &[&[f64]]) -> Result<()> {
    if header.heads.len() != blobs.len() {
        return Err(Error::InvalidInput(format!(
            "{} head specs but {} parameter blobs",
            header.heads.len(),
            blobs.len()
        )));
    }
    for (spec, blob) in header.heads.iter().zip(blobs) {
        if spec.param_count != blob.len() {
            return Err(Error::InvalidInput(format!(
                "head '{}' declares {} parameters, blob has {}",
                spec.role,
                spec.param_count,
                blob.len()
            )));
        }
    }
    let mut bytes = serde_json::to_vec(header)?;
    bytes.push(b'\n');
    for blob in blobs {
        for &p in *blob {
            bytes.extend_from_slice(&p.to_le_bytes());
        }
    }
    fs::write(path, bytes)?;
    Ok(())
}

/// Read a checkpoint back as its header and per-head parameter blobs.
pub fn read_checkpoint(path: &Path) -> Result<(CheckpointHeader, Vec<Vec<f64>>)> {
    let bytes = fs::read(path)?;
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::MalformedCheckpoint("missing header line".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[..newline])
        .map_err(|e| Error::MalformedCheckpoint(format!("bad header: {e}")))?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(Error::MalformedCheckpoint(format!(
            "unsupported format '{}'",
            header.format
        )));
    }

    let expected: usize = header.heads.iter().map(|h| h.param_count).sum();
    let body = &bytes[newline + 1..];
    if body.len() != expected * 8 {
        return Err(Error::MalformedCheckpoint(format!(
            "expected {} parameter bytes, found {}",
            expected * 8,
            body.len()
        )));
    }

    let mut blobs = Vec::with_capacity(header.heads.len());
    let mut offset = 0;
    for spec in &header.heads {
        let mut blob = Vec::with_capacity(spec.param_count);
        for _ in 0..spec.param_count {
            let mut raw = [0u8; 8];
            raw.copy_from_slice(&body[offset..offset + 8]);
            blob.push(f64::from_le_bytes(raw));
            offset += 8;
        }
        blobs.push(blob);
    }
    Ok((header, blobs))
}

/// Persist a trained ego/exo head pair.
pub fn save_head_pair(path: &Path, pair: &HeadPair) -> Result<()> {
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.to_string(),
        kind: KIND_EMBED_PAIR.to_string(),
        step: pair.step,
        heads: vec![
            HeadSpec::of("ego", pair.ego.core()),
            HeadSpec::of("exo", pair.exo.core()),
        ],
        attribute: None,
        classes: None,
    };
    write_checkpoint(path, &header, &[pair.ego.core().params(), pair.exo.core().params()])
}

/// Load an ego/exo head pair written by [`save_head_pair`].
pub fn load_head_pair(path: &Path) -> Result<HeadPair> {
    let (header, blobs) = read_checkpoint(path)?;
    if header.kind != KIND_EMBED_PAIR {
        return Err(Error::MalformedCheckpoint(format!(
            "expected an embed-pair checkpoint, found kind '{}'",
            header.kind
        )));
    }
    if header.heads.len() != 2 || header.heads[0].role != "ego" || header.heads[1].role != "exo" {
        return Err(Error::MalformedCheckpoint(
            "embed-pair checkpoints must hold exactly an ego head then an exo head".into(),
        ));
    }
    let mut blobs = blobs.into_iter();
    let mut ego = header.heads[0].build()?;
    ego.set_params(blobs.next().expect("two blobs validated"))?;
    let mut exo = header.heads[1].build()?;
    exo.set_params(blobs.next().expect("two blobs validated"))?;
    Ok(HeadPair {
        ego: ProjectionHead::from_core(ego),
        exo: ProjectionHead::from_core(exo),
        step: header.step,
    })
}
