//! Multi-branch dilated 1-D CNN encoder.
//!
//! Each branch is a sequence of stages; a stage is a stack of same-padded
//! ReLU convolutions followed by instance normalization and 2× max pooling.
//! Branch outputs are concatenated along channels and projected to the
//! latent dimension by a linear 1×1 convolution.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ops::{self, ConvGeom};
use super::{LatentSequence, ParamSet};
use crate::error::{Error, Result};
use crate::records::Task;

/// `Conv1D(kernel, channels, dilation, relu)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub kernel: usize,
    pub channels: usize,
    pub dilation: usize,
}

const fn conv(kernel: usize, channels: usize, dilation: usize) -> ConvSpec {
    ConvSpec {
        kernel,
        channels,
        dilation,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MbcnnArch {
    pub input_len: usize,
    /// `branches[b][stage][layer]`.
    pub branches: Vec<Vec<Vec<ConvSpec>>>,
    pub latent_dim: usize,
}

impl MbcnnArch {
    /// Architecture for 2500-sample ECG episodes (625 × 192 latent).
    pub fn qrs() -> Self {
        let b1 = vec![
            vec![conv(11, 16, 1), conv(7, 32, 1), conv(7, 32, 1)],
            vec![conv(5, 64, 1), conv(5, 64, 1), conv(5, 64, 1)],
        ];
        let b2 = vec![
            vec![conv(11, 16, 2), conv(7, 32, 2), conv(7, 32, 4)],
            vec![conv(5, 64, 8), conv(5, 64, 8), conv(5, 64, 8)],
        ];
        let b3 = vec![
            vec![conv(11, 16, 4), conv(7, 32, 4), conv(7, 32, 8)],
            vec![conv(5, 64, 16), conv(5, 64, 32), conv(5, 64, 64)],
        ];
        Self {
            input_len: 2500,
            branches: vec![b1, b2, b3],
            latent_dim: 192,
        }
    }

    /// Architecture for 4000-sample heart-sound episodes (250 × 192 latent).
    pub fn heartsound() -> Self {
        // Every stage repeats one conv three times; only dilations differ per branch.
        let branch = |dil: [usize; 4]| -> Vec<Vec<ConvSpec>> {
            vec![
                vec![conv(11, 8, dil[0]); 3],
                vec![conv(7, 16, dil[1]); 3],
                vec![conv(5, 32, dil[2]); 3],
                vec![conv(3, 64, dil[3]); 3],
            ]
        };
        Self {
            input_len: 4000,
            branches: vec![branch([1, 1, 1, 1]), branch([2, 4, 8, 16]), branch([4, 8, 16, 32])],
            latent_dim: 192,
        }
    }

    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Qrs => Self::qrs(),
            Task::Heartsound => Self::heartsound(),
        }
    }

    /// Divides every channel count and the latent dimension by `divisor`.
    pub fn with_width_divisor(mut self, divisor: usize) -> Self {
        let divisor = divisor.max(1);
        for branch in &mut self.branches {
            for stage in branch {
                for c in stage {
                    c.channels = (c.channels / divisor).max(1);
                }
            }
        }
        self.latent_dim = (self.latent_dim / divisor).max(1);
        self
    }

    pub fn stages(&self) -> usize {
        self.branches.first().map_or(0, |b| b.len())
    }

    /// Total temporal downsampling factor (samples per latent frame).
    pub fn downsample(&self) -> usize {
        1 << self.stages()
    }

    pub fn frames(&self) -> usize {
        let mut len = self.input_len;
        for _ in 0..self.stages() {
            len /= 2;
        }
        len
    }

    fn branch_out_channels(&self, b: usize) -> usize {
        self.branches[b]
            .last()
            .and_then(|s| s.last())
            .map_or(1, |c| c.channels)
    }

    pub fn concat_channels(&self) -> usize {
        (0..self.branches.len()).map(|b| self.branch_out_channels(b)).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let stages = self.stages();
        if self.branches.is_empty() || stages == 0 {
            return Err(Error::InvalidArgument("encoder needs at least one branch and stage".into()));
        }
        for (b, branch) in self.branches.iter().enumerate() {
            if branch.len() != stages {
                return Err(Error::InvalidArgument(format!(
                    "branch {b} has {} stages, expected {stages}",
                    branch.len()
                )));
            }
            for stage in branch {
                if stage.is_empty() || stage.iter().any(|c| c.kernel == 0 || c.channels == 0 || c.dilation == 0) {
                    return Err(Error::InvalidArgument(format!("branch {b} has an empty or zero-sized layer")));
                }
            }
        }
        if self.input_len % self.downsample() != 0 {
            return Err(Error::InvalidArgument(format!(
                "input length {} not divisible by downsample factor {}",
                self.input_len,
                self.downsample()
            )));
        }
        Ok(())
    }
}

/// Encoder interface: signal → `T × d` latent sequence, with a backward pass
/// so alternative backbones can be trained by the same driver.
pub trait Encoder: Send + Sync {
    type Cache: Send + Sync;

    fn input_len(&self) -> usize;
    fn latent_dim(&self) -> usize;
    fn downsample(&self) -> usize;
    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;
    fn forward(&self, x: &[f64]) -> Result<(LatentSequence, Self::Cache)>;
    /// Gradient w.r.t. parameters given `dz` shaped like the latent values.
    fn backward(&self, cache: &Self::Cache, dz: &[f64]) -> ParamSet;

    fn encode(&self, x: &[f64]) -> Result<LatentSequence> {
        Ok(self.forward(x)?.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mbcnn {
    arch: MbcnnArch,
    params: ParamSet,
    frame_ms: f64,
    /// `(weight, bias)` indices per branch / stage / layer.
    layers: Vec<Vec<Vec<(usize, usize)>>>,
    proj: (usize, usize),
}

struct StageCache {
    len: usize,
    /// Stage input followed by the output of every conv.
    acts: Vec<Vec<f64>>,
    channels: Vec<usize>,
    norm_out: Vec<f64>,
    inv_std: Vec<f64>,
    pool_arg: Vec<bool>,
}

pub struct MbcnnCache {
    branches: Vec<Vec<StageCache>>,
    concat: Vec<f64>,
}

impl Mbcnn {
    /// Fan-in scaled initialization (He for ReLU layers, LeCun for the
    /// linear projection), deterministic per seed.
    pub fn init(arch: MbcnnArch, frame_ms: f64, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let mut layers = Vec::new();
        for (b, branch) in arch.branches.iter().enumerate() {
            let mut cin = 1;
            let mut bl = Vec::new();
            for (s, stage) in branch.iter().enumerate() {
                let mut sl = Vec::new();
                for (l, c) in stage.iter().enumerate() {
                    let std = (2.0 / (cin * c.kernel) as f64).sqrt();
                    let w = params.add_normal(format!("enc.b{b}.s{s}.c{l}.w"), vec![c.channels, cin, c.kernel], std, &mut rng);
                    let bias = params.add_zeros(format!("enc.b{b}.s{s}.c{l}.b"), vec![c.channels]);
                    sl.push((w, bias));
                    cin = c.channels;
                }
                bl.push(sl);
            }
            layers.push(bl);
        }
        let cc = arch.concat_channels();
        let pw = params.add_normal("enc.proj.w", vec![arch.latent_dim, cc, 1], (1.0 / cc as f64).sqrt(), &mut rng);
        let pb = params.add_zeros("enc.proj.b", vec![arch.latent_dim]);
        Ok(Self {
            arch,
            params,
            frame_ms,
            layers,
            proj: (pw, pb),
        })
    }

    /// Rebuilds an encoder around existing parameters (e.g. from a checkpoint).
    pub fn from_params(arch: MbcnnArch, frame_ms: f64, params: ParamSet) -> Result<Self> {
        let template = Self::init(arch, frame_ms, 0)?;
        if template.params.len() != params.len()
            || template
                .params
                .tensors
                .iter()
                .zip(&params.tensors)
                .any(|(a, b)| a.name != b.name || a.shape != b.shape)
        {
            return Err(Error::ShapeMismatch("encoder parameters do not match the architecture".into()));
        }
        Ok(Self { params, ..template })
    }

    pub fn arch(&self) -> &MbcnnArch {
        &self.arch
    }

    pub fn frame_ms(&self) -> f64 {
        self.frame_ms
    }
}

impl Encoder for Mbcnn {
    type Cache = MbcnnCache;

    fn input_len(&self) -> usize {
        self.arch.input_len
    }

    fn latent_dim(&self) -> usize {
        self.arch.latent_dim
    }

    fn downsample(&self) -> usize {
        self.arch.downsample()
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn forward(&self, x: &[f64]) -> Result<(LatentSequence, MbcnnCache)> {
        if x.len() != self.arch.input_len {
            return Err(Error::ShapeMismatch(format!(
                "encoder expects {} samples, got {}",
                self.arch.input_len,
                x.len()
            )));
        }
        let frames = self.arch.frames();
        let mut branch_caches = Vec::with_capacity(self.arch.branches.len());
        let mut concat = Vec::with_capacity(self.arch.concat_channels() * frames);
        for (b, branch) in self.arch.branches.iter().enumerate() {
            let mut h = x.to_vec();
            let mut cin = 1;
            let mut len = x.len();
            let mut stages = Vec::with_capacity(branch.len());
            for (s, stage) in branch.iter().enumerate() {
                let mut acts = vec![h];
                let mut channels = vec![cin];
                for (l, c) in stage.iter().enumerate() {
                    let (wi, bi) = self.layers[b][s][l];
                    let g = ConvGeom {
                        cin,
                        cout: c.channels,
                        kernel: c.kernel,
                        dilation: c.dilation,
                        len,
                    };
                    let y = ops::conv1d_forward(&g, acts.last().expect("nonempty"), self.params.get(wi), self.params.get(bi), true);
                    acts.push(y);
                    channels.push(c.channels);
                    cin = c.channels;
                }
                let (norm_out, inv_std) = ops::instance_norm_forward(acts.last().expect("nonempty"), cin, len);
                let (pooled, pool_arg) = ops::maxpool2_forward(&norm_out, cin, len);
                stages.push(StageCache {
                    len,
                    acts,
                    channels,
                    norm_out,
                    inv_std,
                    pool_arg,
                });
                h = pooled;
                len /= 2;
            }
            debug_assert_eq!(len, frames);
            concat.extend_from_slice(&h);
            branch_caches.push(stages);
        }
        let cc = self.arch.concat_channels();
        let d = self.arch.latent_dim;
        let g = ConvGeom {
            cin: cc,
            cout: d,
            kernel: 1,
            dilation: 1,
            len: frames,
        };
        let z_cm = ops::conv1d_forward(&g, &concat, self.params.get(self.proj.0), self.params.get(self.proj.1), false);
        let mut values = vec![0.0; frames * d];
        for c in 0..d {
            for t in 0..frames {
                values[t * d + c] = z_cm[c * frames + t];
            }
        }
        Ok((
            LatentSequence {
                values,
                frames,
                dim: d,
                frame_ms: self.frame_ms,
            },
            MbcnnCache {
                branches: branch_caches,
                concat,
            },
        ))
    }

    fn backward(&self, cache: &MbcnnCache, dz: &[f64]) -> ParamSet {
        let mut grads = self.params.zeros_like();
        let frames = self.arch.frames();
        let d = self.arch.latent_dim;
        let cc = self.arch.concat_channels();
        let mut dz_cm = vec![0.0; d * frames];
        for t in 0..frames {
            for c in 0..d {
                dz_cm[c * frames + t] = dz[t * d + c];
            }
        }
        let g = ConvGeom {
            cin: cc,
            cout: d,
            kernel: 1,
            dilation: 1,
            len: frames,
        };
        let (pw, pb) = self.proj;
        let (mut dw, mut db) = (vec![0.0; grads.get(pw).len()], vec![0.0; d]);
        let dconcat = ops::conv1d_backward(&g, &cache.concat, self.params.get(pw), &[], &mut dz_cm, false, &mut dw, &mut db, true)
            .expect("dx requested");
        grads.get_mut(pw).copy_from_slice(&dw);
        grads.get_mut(pb).copy_from_slice(&db);

        let mut offset = 0;
        for (b, branch) in self.arch.branches.iter().enumerate() {
            let cout = self.arch.branch_out_channels(b);
            let mut dh = dconcat[offset * frames..(offset + cout) * frames].to_vec();
            offset += cout;
            for (s, stage) in branch.iter().enumerate().rev() {
                let sc = &cache.branches[b][s];
                let c_last = *sc.channels.last().expect("nonempty");
                let dnorm = ops::maxpool2_backward(&sc.pool_arg, &dh, c_last, sc.len);
                let mut dy = ops::instance_norm_backward(&sc.norm_out, &sc.inv_std, &dnorm, c_last, sc.len);
                for l in (0..stage.len()).rev() {
                    let (wi, bi) = self.layers[b][s][l];
                    let g = ConvGeom {
                        cin: sc.channels[l],
                        cout: sc.channels[l + 1],
                        kernel: stage[l].kernel,
                        dilation: stage[l].dilation,
                        len: sc.len,
                    };
                    let need_dx = !(s == 0 && l == 0);
                    let mut dw = vec![0.0; grads.get(wi).len()];
                    let mut db = vec![0.0; grads.get(bi).len()];
                    let dx = ops::conv1d_backward(
                        &g,
                        &sc.acts[l],
                        self.params.get(wi),
                        &sc.acts[l + 1],
                        &mut dy,
                        true,
                        &mut dw,
                        &mut db,
                        need_dx,
                    );
                    grads.get_mut(wi).copy_from_slice(&dw);
                    grads.get_mut(bi).copy_from_slice(&db);
                    if let Some(dx) = dx {
                        dy = dx;
                    }
                }
                dh = dy;
            }
        }
        grads
    }
}
