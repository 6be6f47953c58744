//! Single-file checkpoints: little-endian f32 tensors in a safetensors
//! archive, with a JSON manifest stored under the `manifest` metadata key.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use safetensors::tensor::{Dtype, SafeTensors, TensorView};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Decoder, Encoder, MbcnnArch, Model, NetConfig, ParamSet, QNet};
use crate::error::{Error, Result};
use crate::records::Task;

pub const CHECKPOINT_FORMAT: &str = "cci-checkpoint/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub task: Task,
    pub d: usize,
    pub seed: u64,
    /// SHA-256 of the training configuration JSON.
    pub config_hash: String,
    /// Training mode label (`baseline`, `cci`, `augment`, ...).
    pub mode: String,
    pub net: NetConfig,
    pub arch: MbcnnArch,
    pub decoder_hidden: usize,
    pub qnet_hidden: usize,
}

impl CheckpointManifest {
    pub fn for_model(model: &Model, seed: u64, config_json: &str, mode: &str) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            task: model.task,
            d: model.latent_dim(),
            seed,
            config_hash: hex::encode(Sha256::digest(config_json.as_bytes())),
            mode: mode.into(),
            net: model.net.clone(),
            arch: model.encoder.arch().clone(),
            decoder_hidden: model.decoder.hidden,
            qnet_hidden: model.qnet.hidden,
        }
    }
}

fn to_f32_bytes(data: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(data.len() * 4);
    for v in data {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &Model, manifest: &CheckpointManifest) -> Result<()> {
    let path = path.as_ref();
    let groups = [model.encoder.params(), model.decoder.params(), model.qnet.params()];
    let owned: Vec<(String, Vec<usize>, Vec<u8>)> = groups
        .iter()
        .flat_map(|g| g.tensors.iter())
        .map(|t| (t.name.clone(), t.shape.clone(), to_f32_bytes(&t.data)))
        .collect();
    let views = owned
        .iter()
        .map(|(name, shape, bytes)| {
            TensorView::new(Dtype::F32, shape.clone(), bytes)
                .map(|v| (name.clone(), v))
                .map_err(|e| Error::Checkpoint(e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest_json = serde_json::to_string(manifest).expect("manifest serializes");
    let meta = Some(HashMap::from([("manifest".to_string(), manifest_json)]));
    let bytes = safetensors::tensor::serialize(views, &meta).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn fill(template: &ParamSet, st: &SafeTensors<'_>) -> Result<ParamSet> {
    let mut out = template.clone();
    for t in &mut out.tensors {
        let view = st
            .tensor(&t.name)
            .map_err(|e| Error::Checkpoint(format!("tensor `{}`: {e}", t.name)))?;
        if view.dtype() != Dtype::F32 || view.shape() != t.shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "tensor `{}` has shape {:?}/{:?}, expected {:?} f32",
                t.name,
                view.shape(),
                view.dtype(),
                t.shape
            )));
        }
        t.data = view
            .data()
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
    }
    Ok(out)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Model, CheckpointManifest)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (_, meta) = SafeTensors::read_metadata(&bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let manifest_json = meta
        .metadata()
        .as_ref()
        .and_then(|m| m.get("manifest"))
        .ok_or_else(|| Error::Checkpoint(format!("{} has no manifest", path.display())))?;
    let manifest: CheckpointManifest =
        serde_json::from_str(manifest_json).map_err(|e| Error::Checkpoint(format!("manifest: {e}")))?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint(format!("unsupported format `{}`", manifest.format)));
    }
    let st = SafeTensors::deserialize(&bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;

    let template = Model::init_with_arch(
        manifest.task,
        manifest.arch.clone(),
        &NetConfig {
            qnet_hidden: Some(manifest.qnet_hidden),
            decoder_hidden: manifest.decoder_hidden,
            ..manifest.net.clone()
        },
        0,
    )?;
    let encoder = super::Mbcnn::from_params(
        manifest.arch.clone(),
        manifest.task.frame_ms(),
        fill(template.encoder.params(), &st)?,
    )?;
    let decoder = Decoder::from_params(
        manifest.d,
        manifest.decoder_hidden,
        manifest.task.classes(),
        fill(template.decoder.params(), &st)?,
    )?;
    let qnet = QNet::from_params(manifest.d, manifest.qnet_hidden, fill(template.qnet.params(), &st)?)?;
    Ok((
        Model {
            task: manifest.task,
            net: manifest.net.clone(),
            encoder,
            decoder,
            qnet,
        },
        manifest,
    ))
}
