//! Per-frame decoder and the variational q-network.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ops;
use super::{FrameProbs, LatentSequence, ParamSet};
use crate::error::{Error, Result};

/// Two-layer dense block applied independently to every frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoder {
    pub input_dim: usize,
    pub hidden: usize,
    pub classes: usize,
    params: ParamSet,
}

pub struct DecoderCache {
    input: Vec<f64>,
    hidden: Vec<f64>,
    rows: usize,
}

impl Decoder {
    pub fn init(input_dim: usize, hidden: usize, classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        params.add_normal("dec.fc1.w", vec![hidden, input_dim], (2.0 / input_dim as f64).sqrt(), &mut rng);
        params.add_zeros("dec.fc1.b", vec![hidden]);
        params.add_normal("dec.fc2.w", vec![classes, hidden], 0.1 / (hidden as f64).sqrt(), &mut rng);
        params.add_zeros("dec.fc2.b", vec![classes]);
        Self {
            input_dim,
            hidden,
            classes,
            params,
        }
    }

    pub fn from_params(input_dim: usize, hidden: usize, classes: usize, params: ParamSet) -> Result<Self> {
        let t = Self::init(input_dim, hidden, classes, 0);
        check_layout(&t.params, &params, "decoder")?;
        Ok(Self { params, ..t })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Per-frame logits (`T × classes`) with the cache for backward.
    pub fn forward_logits(&self, z: &LatentSequence) -> Result<(Vec<f64>, DecoderCache)> {
        if z.dim != self.input_dim {
            return Err(Error::ShapeMismatch(format!(
                "decoder expects {}-dim frames, got {}",
                self.input_dim, z.dim
            )));
        }
        let rows = z.frames;
        let p = &self.params;
        let hidden = ops::dense_forward(&z.values, rows, self.input_dim, p.get(0), p.get(1), self.hidden, true);
        let logits = ops::dense_forward(&hidden, rows, self.hidden, p.get(2), p.get(3), self.classes, false);
        Ok((
            logits,
            DecoderCache {
                input: z.values.clone(),
                hidden,
                rows,
            },
        ))
    }

    /// Sigmoid (one class) or softmax (several classes) frame probabilities.
    pub fn decode(&self, z: &LatentSequence) -> Result<FrameProbs> {
        let (logits, _) = self.forward_logits(z)?;
        Ok(FrameProbs::from_logits(&logits, z.frames, self.classes))
    }

    /// Returns parameter gradients and the gradient w.r.t. the latent values.
    pub fn backward(&self, cache: &DecoderCache, dlogits: &[f64]) -> (ParamSet, Vec<f64>) {
        let p = &self.params;
        let mut g = p.zeros_like();
        let mut dl = dlogits.to_vec();
        let (mut w2, mut b2) = (vec![0.0; g.get(2).len()], vec![0.0; self.classes]);
        let mut dh = ops::dense_backward(
            &cache.hidden,
            cache.rows,
            self.hidden,
            p.get(2),
            self.classes,
            &[],
            &mut dl,
            false,
            &mut w2,
            &mut b2,
            true,
        )
        .expect("dx requested");
        let (mut w1, mut b1) = (vec![0.0; g.get(0).len()], vec![0.0; self.hidden]);
        let dz = ops::dense_backward(
            &cache.input,
            cache.rows,
            self.input_dim,
            p.get(0),
            self.hidden,
            &cache.hidden,
            &mut dh,
            true,
            &mut w1,
            &mut b1,
            true,
        )
        .expect("dx requested");
        g.get_mut(0).copy_from_slice(&w1);
        g.get_mut(1).copy_from_slice(&b1);
        g.get_mut(2).copy_from_slice(&w2);
        g.get_mut(3).copy_from_slice(&b2);
        (g, dz)
    }
}

/// Bound on the log-variance pre-activation of the q-network.
pub const LOGVAR_CLAMP: f64 = 7.0;

/// Diagonal Gaussian `q(z | z_do) = N(μ(z_do), σ²(z_do))`: two ReLU hidden
/// layers, a linear mean head and an exponentiated, clamped log-variance head.
#[derive(Clone, Debug, PartialEq)]
pub struct QNet {
    pub dim: usize,
    pub hidden: usize,
    params: ParamSet,
}

pub struct QNetCache {
    input: Vec<f64>,
    h1: Vec<f64>,
    h2: Vec<f64>,
    logvar_raw: Vec<f64>,
    var: Vec<f64>,
    rows: usize,
}

/// Conditional diagonal Gaussian used by the variational MI estimator.
pub trait ConditionalGaussian {
    fn dim(&self) -> usize;
    /// Means and variances for each row of `inputs` (`rows × dim`).
    fn mean_var(&self, inputs: &[f64], rows: usize) -> (Vec<f64>, Vec<f64>);
}

impl QNet {
    /// Variance head starts at zero so σ² = 1 after initialization.
    pub fn init(dim: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        params.add_normal("q.fc1.w", vec![hidden, dim], (2.0 / dim as f64).sqrt(), &mut rng);
        params.add_zeros("q.fc1.b", vec![hidden]);
        params.add_normal("q.fc2.w", vec![hidden, hidden], (2.0 / hidden as f64).sqrt(), &mut rng);
        params.add_zeros("q.fc2.b", vec![hidden]);
        params.add_normal("q.mu.w", vec![dim, hidden], (1.0 / hidden as f64).sqrt(), &mut rng);
        params.add_zeros("q.mu.b", vec![dim]);
        params.add_zeros("q.logvar.w", vec![dim, hidden]);
        params.add_zeros("q.logvar.b", vec![dim]);
        Self { dim, hidden, params }
    }

    pub fn from_params(dim: usize, hidden: usize, params: ParamSet) -> Result<Self> {
        let t = Self::init(dim, hidden, 0);
        check_layout(&t.params, &params, "q-network")?;
        Ok(Self { params, ..t })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// `(μ, σ²)` for a single conditioning vector.
    pub fn forward_one(&self, z_do: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if z_do.len() != self.dim {
            return Err(Error::ShapeMismatch(format!(
                "q-network expects {}-dim input, got {}",
                self.dim,
                z_do.len()
            )));
        }
        let (mu, var, _) = self.forward(z_do, 1);
        Ok((mu, var))
    }

    /// Batched forward over `rows × dim` inputs.
    pub fn forward(&self, inputs: &[f64], rows: usize) -> (Vec<f64>, Vec<f64>, QNetCache) {
        let p = &self.params;
        let (d, h) = (self.dim, self.hidden);
        let h1 = ops::dense_forward(inputs, rows, d, p.get(0), p.get(1), h, true);
        let h2 = ops::dense_forward(&h1, rows, h, p.get(2), p.get(3), h, true);
        let mu = ops::dense_forward(&h2, rows, h, p.get(4), p.get(5), d, false);
        let logvar_raw = ops::dense_forward(&h2, rows, h, p.get(6), p.get(7), d, false);
        let var: Vec<f64> = logvar_raw
            .iter()
            .map(|v| v.clamp(-LOGVAR_CLAMP, LOGVAR_CLAMP).exp())
            .collect();
        (
            mu,
            var.clone(),
            QNetCache {
                input: inputs.to_vec(),
                h1,
                h2,
                logvar_raw,
                var,
                rows,
            },
        )
    }

    /// Gradients given `dμ` and `dσ²`; returns parameter and input gradients.
    pub fn backward(&self, cache: &QNetCache, dmu: &[f64], dvar: &[f64]) -> (ParamSet, Vec<f64>) {
        let p = &self.params;
        let (d, h, rows) = (self.dim, self.hidden, cache.rows);
        let mut g = p.zeros_like();
        let mut bufs: Vec<Vec<f64>> = g.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect();
        let [w1, b1, w2, b2, wmu, bmu, wlv, blv] = &mut bufs[..] else {
            unreachable!("q-network has eight tensors")
        };

        let mut dlv: Vec<f64> = (0..rows * d)
            .map(|k| {
                let raw = cache.logvar_raw[k];
                if raw.abs() > LOGVAR_CLAMP {
                    0.0
                } else {
                    dvar[k] * cache.var[k]
                }
            })
            .collect();
        let mut dmu = dmu.to_vec();
        let dh2_mu = ops::dense_backward(&cache.h2, rows, h, p.get(4), d, &[], &mut dmu, false, wmu, bmu, true)
            .expect("dx requested");
        let dh2_lv = ops::dense_backward(&cache.h2, rows, h, p.get(6), d, &[], &mut dlv, false, wlv, blv, true)
            .expect("dx requested");
        let mut dh2: Vec<f64> = dh2_mu.iter().zip(&dh2_lv).map(|(a, b)| a + b).collect();
        let mut dh1 = ops::dense_backward(&cache.h1, rows, h, p.get(2), h, &cache.h2, &mut dh2, true, w2, b2, true)
            .expect("dx requested");
        let dinput = ops::dense_backward(&cache.input, rows, d, p.get(0), h, &cache.h1, &mut dh1, true, w1, b1, true)
            .expect("dx requested");
        for (t, buf) in g.tensors.iter_mut().zip(bufs) {
            t.data = buf;
        }
        (g, dinput)
    }
}

impl ConditionalGaussian for QNet {
    fn dim(&self) -> usize {
        self.dim
    }

    fn mean_var(&self, inputs: &[f64], rows: usize) -> (Vec<f64>, Vec<f64>) {
        let (mu, var, _) = self.forward(inputs, rows);
        (mu, var)
    }
}

fn check_layout(template: &ParamSet, params: &ParamSet, what: &str) -> Result<()> {
    let ok = template.len() == params.len()
        && template
            .tensors
            .iter()
            .zip(&params.tensors)
            .all(|(a, b)| a.name == b.name && a.shape == b.shape);
    if ok {
        Ok(())
    } else {
        Err(Error::ShapeMismatch(format!("{what} parameters do not match the architecture")))
    }
}
