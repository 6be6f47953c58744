//! Encoder, decoder and q-network with explicit backward passes.

mod adam;
mod checkpoint;
mod heads;
mod mbcnn;
pub mod ops;
mod params;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::records::Task;

pub use adam::Adam;
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest};
pub use heads::{ConditionalGaussian, Decoder, DecoderCache, QNet, QNetCache, LOGVAR_CLAMP};
pub use mbcnn::{ConvSpec, Encoder, Mbcnn, MbcnnArch, MbcnnCache};
pub use params::{ParamSet, Tensor};

/// Encoder output: `frames × dim`, row-major by frame.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentSequence {
    pub values: Vec<f64>,
    pub frames: usize,
    pub dim: usize,
    pub frame_ms: f64,
}

impl LatentSequence {
    pub fn frame(&self, t: usize) -> &[f64] {
        &self.values[t * self.dim..(t + 1) * self.dim]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Per-frame class probabilities, `frames × classes`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameProbs {
    pub values: Vec<f64>,
    pub frames: usize,
    pub classes: usize,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl FrameProbs {
    pub fn from_logits(logits: &[f64], frames: usize, classes: usize) -> Self {
        let values = if classes == 1 {
            logits.iter().map(|&l| sigmoid(l)).collect()
        } else {
            let mut out = Vec::with_capacity(logits.len());
            for row in logits.chunks(classes) {
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = row.iter().map(|l| (l - m).exp()).collect();
                let s: f64 = exps.iter().sum();
                out.extend(exps.iter().map(|e| e / s));
            }
            out
        };
        Self { values, frames, classes }
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.classes..(t + 1) * self.classes]
    }

    /// Hard per-frame label: threshold 0.5 for one class, argmax otherwise
    /// (ties toward the lower index).
    pub fn hard_labels(&self) -> Vec<u8> {
        (0..self.frames)
            .map(|t| {
                let r = self.row(t);
                if self.classes == 1 {
                    u8::from(r[0] > 0.5)
                } else {
                    argmax(r) as u8
                }
            })
            .collect()
    }
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Width knobs for the network. `width_divisor = 1` is the tabulated MBCNN.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub width_divisor: usize,
    pub decoder_hidden: usize,
    /// Hidden width of the q-network; `None` means the latent dimension.
    pub qnet_hidden: Option<usize>,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            width_divisor: 1,
            decoder_hidden: 64,
            qnet_hidden: None,
        }
    }
}

impl NetConfig {
    pub fn encoder_arch(&self, task: Task) -> MbcnnArch {
        MbcnnArch::for_task(task).with_width_divisor(self.width_divisor)
    }
}

/// Encoder, decoder and q-network for one task.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub task: Task,
    pub net: NetConfig,
    pub encoder: Mbcnn,
    pub decoder: Decoder,
    pub qnet: QNet,
}

impl Model {
    /// Builds and initializes all three parameter groups, deterministic per seed.
    pub fn init(task: Task, net: &NetConfig, seed: u64) -> Result<Self> {
        Self::init_with_arch(task, net.encoder_arch(task), net, seed)
    }

    pub fn init_with_arch(task: Task, arch: MbcnnArch, net: &NetConfig, seed: u64) -> Result<Self> {
        let d = arch.latent_dim;
        let encoder = Mbcnn::init(arch, task.frame_ms(), seed)?;
        let decoder = Decoder::init(d, net.decoder_hidden, task.classes(), seed.wrapping_add(1));
        let qnet = QNet::init(d, net.qnet_hidden.unwrap_or(d), seed.wrapping_add(2));
        Ok(Self {
            task,
            net: net.clone(),
            encoder,
            decoder,
            qnet,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.latent_dim()
    }

    pub fn encode(&self, x: &[f64]) -> Result<LatentSequence> {
        self.encoder.encode(x)
    }

    pub fn predict(&self, x: &[f64]) -> Result<FrameProbs> {
        self.decoder.decode(&self.encode(x)?)
    }

    /// Fingerprint of every parameter group.
    pub fn fingerprint(&self) -> String {
        format!(
            "{}:{}:{}",
            self.encoder.params().fingerprint(),
            self.decoder.params().fingerprint(),
            self.qnet.params().fingerprint()
        )
    }

    pub fn check_task(&self, task: Task) -> Result<()> {
        if self.task != task {
            return Err(Error::TaskMismatch {
                expected: self.task.to_string(),
                found: task.to_string(),
            });
        }
        Ok(())
    }
}

/// Full-size networks for `task` with default head widths.
pub fn init_params(task: Task, seed: u64) -> Result<(Mbcnn, Decoder, QNet)> {
    let m = Model::init(task, &NetConfig::default(), seed)?;
    Ok((m.encoder, m.decoder, m.qnet))
}
