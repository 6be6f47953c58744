//! Loss terms: segmentation cross-entropy, cosine alignment of untouched
//! frames, the Gaussian variational likelihood and the contrastive
//! log-ratio MI upper bound across original / intervened frames.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{sigmoid, ConditionalGaussian, FrameProbs, ParamSet, QNet};

pub const DEFAULT_LAMBDA1: f64 = 0.1;
pub const DEFAULT_LAMBDA2: f64 = 1.0;

const PROB_FLOOR: f64 = 1e-12;

/// Mean cross-entropy of frame probabilities against integer labels.
pub fn seg_loss(probs: &FrameProbs, labels: &[u8]) -> Result<f64> {
    if labels.len() != probs.frames || probs.values.len() != probs.frames * probs.classes {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {} frames",
            labels.len(),
            probs.frames
        )));
    }
    if let Some(p) = probs.values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidArgument(format!("probability {p} outside [0, 1]")));
    }
    let mut total = 0.0;
    for (t, &y) in labels.iter().enumerate() {
        let row = probs.row(t);
        total -= if probs.classes == 1 {
            if y > 1 {
                return Err(Error::InvalidArgument(format!("binary label {y}")));
            }
            let p = if y == 1 { row[0] } else { 1.0 - row[0] };
            p.max(PROB_FLOOR).ln()
        } else {
            let p = *row
                .get(y as usize)
                .ok_or_else(|| Error::InvalidArgument(format!("label {y} out of range")))?;
            p.max(PROB_FLOOR).ln()
        };
    }
    Ok(total / labels.len().max(1) as f64)
}

/// Cross-entropy from logits with its gradient (both averaged over frames).
pub fn seg_loss_from_logits(logits: &[f64], labels: &[u8], classes: usize) -> (f64, Vec<f64>) {
    let frames = labels.len();
    let scale = 1.0 / frames.max(1) as f64;
    let mut grad = vec![0.0; logits.len()];
    let mut loss = 0.0;
    if classes == 1 {
        for t in 0..frames {
            let l = logits[t];
            let y = labels[t] as f64;
            // softplus(l) − y·l, written stably
            loss += l.max(0.0) - y * l + (-l.abs()).exp().ln_1p();
            grad[t] = (sigmoid(l) - y) * scale;
        }
    } else {
        for t in 0..frames {
            let row = &logits[t * classes..(t + 1) * classes];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            let y = labels[t] as usize;
            loss += lse - row[y];
            for c in 0..classes {
                let p = (row[c] - lse).exp();
                grad[t * classes + c] = (p - f64::from(u8::from(c == y))) * scale;
            }
        }
    }
    (loss * scale, grad)
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Cosine similarity; scale invariant, in `[−1, 1]`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    Ok(cosine_with_grad(a, b)?.0)
}

/// Cosine similarity and its gradients w.r.t. `a` and `b`.
pub fn cosine_with_grad(a: &[f64], b: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!("{} vs {} dims", a.len(), b.len())));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::UndefinedSimilarity);
    }
    let dotp: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let cos = (dotp / (na * nb)).clamp(-1.0, 1.0);
    let da = a
        .iter()
        .zip(b)
        .map(|(x, y)| y / (na * nb) - cos * x / (na * na))
        .collect();
    let db = a
        .iter()
        .zip(b)
        .map(|(x, y)| x / (na * nb) - cos * y / (nb * nb))
        .collect();
    Ok((cos, da, db))
}

/// Diagonal Gaussian log-density `Σ_j −½ln(2πσ²_j) − (z_j−μ_j)²/(2σ²_j)`.
pub fn gaussian_loglik(z: &[f64], mu: &[f64], var: &[f64]) -> Result<f64> {
    if z.len() != mu.len() || z.len() != var.len() {
        return Err(Error::ShapeMismatch(format!(
            "z/μ/σ² dims {}/{}/{}",
            z.len(),
            mu.len(),
            var.len()
        )));
    }
    if let Some(v) = var.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::InvalidArgument(format!("non-positive variance {v}")));
    }
    Ok(loglik_unchecked(z, mu, var))
}

#[inline]
fn loglik_unchecked(z: &[f64], mu: &[f64], var: &[f64]) -> f64 {
    let mut s = 0.0;
    for j in 0..z.len() {
        let r = z[j] - mu[j];
        s += -0.5 * (2.0 * PI * var[j]).ln() - r * r / (2.0 * var[j]);
    }
    s
}

/// `n` samples × `frames` covered frames of paired latent vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct PairBatch {
    pub n: usize,
    pub frames: usize,
    pub dim: usize,
    /// Original latents, `n × frames × dim`.
    pub z: Vec<f64>,
    /// Intervened latents at the same positions.
    pub z_do: Vec<f64>,
}

impl PairBatch {
    pub fn new(n: usize, frames: usize, dim: usize, z: Vec<f64>, z_do: Vec<f64>) -> Result<Self> {
        if z.len() != n * frames * dim || z_do.len() != z.len() {
            return Err(Error::ShapeMismatch(format!(
                "pair batch {n}×{frames}×{dim} with {} / {} values",
                z.len(),
                z_do.len()
            )));
        }
        Ok(Self {
            n,
            frames,
            dim,
            z,
            z_do,
        })
    }

    /// One frame per sample, as for plain (z, z_do) pairs.
    pub fn from_pairs(pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<Self> {
        let dim = pairs.first().map_or(0, |p| p.0.len());
        let z = pairs.iter().flat_map(|p| p.0.iter().copied()).collect();
        let z_do = pairs.iter().flat_map(|p| p.1.iter().copied()).collect();
        Self::new(pairs.len(), 1, dim, z, z_do)
    }

    pub fn rows(&self) -> usize {
        self.n * self.frames
    }

    fn z_at(&self, i: usize, f: usize) -> &[f64] {
        let o = (i * self.frames + f) * self.dim;
        &self.z[o..o + self.dim]
    }
}

/// Mean log-likelihood of each `z` under `q(· | z_do)`.
pub fn qnet_ll<Q: ConditionalGaussian>(q: &Q, pairs: &PairBatch) -> Result<f64> {
    if pairs.rows() == 0 {
        return Err(Error::InvalidArgument("empty pair batch".into()));
    }
    if q.dim() != pairs.dim {
        return Err(Error::ShapeMismatch(format!("q dim {} vs pairs dim {}", q.dim(), pairs.dim)));
    }
    let (mu, var) = q.mean_var(&pairs.z_do, pairs.rows());
    let d = pairs.dim;
    let mut total = 0.0;
    for r in 0..pairs.rows() {
        let s = r * d..(r + 1) * d;
        total += gaussian_loglik(&pairs.z[s.clone()], &mu[s.clone()], &var[s])?;
    }
    Ok(total / pairs.rows() as f64)
}

/// [`qnet_ll`] and its gradient w.r.t. the q-network parameters.
pub fn qnet_ll_grad(q: &QNet, pairs: &PairBatch) -> Result<(f64, ParamSet)> {
    if pairs.rows() == 0 {
        return Err(Error::InvalidArgument("empty pair batch".into()));
    }
    let rows = pairs.rows();
    let (mu, var, cache) = q.forward(&pairs.z_do, rows);
    let scale = 1.0 / rows as f64;
    let mut ll = 0.0;
    let mut dmu = vec![0.0; mu.len()];
    let mut dvar = vec![0.0; var.len()];
    for k in 0..mu.len() {
        let r = pairs.z[k] - mu[k];
        let v = var[k];
        ll += -0.5 * (2.0 * PI * v).ln() - r * r / (2.0 * v);
        dmu[k] = r / v * scale;
        dvar[k] = (-0.5 / v + r * r / (2.0 * v * v)) * scale;
    }
    let (grads, _) = q.backward(&cache, &dmu, &dvar);
    Ok((ll * scale, grads))
}

/// Draws one negative index per sample, uniformly over all samples.
pub fn sample_negatives<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// Variational contrastive log-ratio MI upper bound with sampled negatives.
pub fn vcci<Q: ConditionalGaussian, R: Rng + ?Sized>(q: &Q, pairs: &PairBatch, rng: &mut R) -> f64 {
    let negatives = sample_negatives(pairs.n, rng);
    vcci_with_negatives(q, pairs, &negatives)
}

/// Mean over samples `i` and covered frames `τ` of
/// `log q(z_iτ | z_do_iτ) − log q(z_{k_i}τ | z_do_iτ)`.
pub fn vcci_with_negatives<Q: ConditionalGaussian>(q: &Q, pairs: &PairBatch, negatives: &[usize]) -> f64 {
    let rows = pairs.rows();
    if rows == 0 {
        return 0.0;
    }
    let (mu, var) = q.mean_var(&pairs.z_do, rows);
    let d = pairs.dim;
    let mut total = 0.0;
    for i in 0..pairs.n {
        let k = negatives[i];
        for f in 0..pairs.frames {
            let r = (i * pairs.frames + f) * d;
            let (m, v) = (&mu[r..r + d], &var[r..r + d]);
            total += loglik_unchecked(pairs.z_at(i, f), m, v) - loglik_unchecked(pairs.z_at(k, f), m, v);
        }
    }
    total / rows as f64
}

/// Mean of `log q(pos_r | cond_r) − log q(neg_r | cond_r)` over rows, for a
/// frozen q-network, with gradients w.r.t. `pos`, `neg` and `cond`.
pub fn contrast_grad(q: &QNet, pos: &[f64], neg: &[f64], cond: &[f64]) -> (f64, Vec<f64>, Vec<f64>, Vec<f64>) {
    let d = q.dim;
    let rows = cond.len() / d.max(1);
    if rows == 0 {
        return (0.0, vec![0.0; pos.len()], vec![0.0; neg.len()], vec![0.0; cond.len()]);
    }
    let (mu, var, cache) = q.forward(cond, rows);
    let scale = 1.0 / rows as f64;
    let mut dpos = vec![0.0; pos.len()];
    let mut dneg = vec![0.0; neg.len()];
    let mut dmu = vec![0.0; mu.len()];
    let mut dvar = vec![0.0; var.len()];
    let mut total = 0.0;
    for k in 0..mu.len() {
        let (m, v) = (mu[k], var[k]);
        let rp = pos[k] - m;
        let rn = neg[k] - m;
        total += (rn * rn - rp * rp) / (2.0 * v);
        dpos[k] = -rp / v * scale;
        dneg[k] = rn / v * scale;
        dmu[k] = (rp - rn) / v * scale;
        dvar[k] = (rp * rp - rn * rn) / (2.0 * v * v) * scale;
    }
    let (_, dcond) = q.backward(&cache, &dmu, &dvar);
    (total * scale, dpos, dneg, dcond)
}

/// [`vcci_with_negatives`] for a frozen q-network, with gradients w.r.t. the
/// original latents (`dz`) and the intervened latents (`dz_do`).
pub fn vcci_grad(q: &QNet, pairs: &PairBatch, negatives: &[usize]) -> (f64, Vec<f64>, Vec<f64>) {
    let d = pairs.dim;
    let mut neg = Vec::with_capacity(pairs.z.len());
    for &k in negatives.iter().take(pairs.n) {
        for f in 0..pairs.frames {
            neg.extend_from_slice(pairs.z_at(k, f));
        }
    }
    let (value, dpos, dneg, dz_do) = contrast_grad(q, &pairs.z, &neg, &pairs.z_do);
    let mut dz = dpos;
    for (i, &k) in negatives.iter().take(pairs.n).enumerate() {
        for f in 0..pairs.frames {
            let src = (i * pairs.frames + f) * d;
            let dst = (k * pairs.frames + f) * d;
            for j in 0..d {
                dz[dst + j] += dneg[src + j];
            }
        }
    }
    (value, dz, dz_do)
}

/// The composite objective and its parts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_seg: f64,
    pub i_vcci: f64,
    pub l_sim: f64,
    pub total: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

/// `total = l_seg + λ1·i_vcci − λ2·l_sim`.
pub fn total_loss(l_seg: f64, i_vcci: f64, l_sim: f64, lambda1: f64, lambda2: f64) -> LossBreakdown {
    LossBreakdown {
        l_seg,
        i_vcci,
        l_sim,
        total: l_seg + lambda1 * i_vcci - lambda2 * l_sim,
        lambda1,
        lambda2,
    }
}
