//! Training driver: baseline, contrastive causal intervention and
//! intervention-augmented modes, k-fold splitting, early stopping.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intervene::{apply_do, InterventionKind, InterventionSpec};
use crate::nn::{
    save_checkpoint, Adam, CheckpointManifest, DecoderCache, Encoder, LatentSequence, MbcnnCache, Model, NetConfig,
    ParamSet,
};
use crate::objective::{contrast_grad, cosine_with_grad, qnet_ll_grad, seg_loss_from_logits, total_loss, LossBreakdown, PairBatch};
use crate::records::Episode;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    #[default]
    Baseline,
    Cci,
    Augment,
}

impl TrainMode {
    pub fn name(self) -> &'static str {
        match self {
            TrainMode::Baseline => "baseline",
            TrainMode::Cci => "cci",
            TrainMode::Augment => "augment",
        }
    }
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(TrainMode::Baseline),
            "cci" => Ok(TrainMode::Cci),
            "augment" => Ok(TrainMode::Augment),
            other => Err(Error::InvalidArgument(format!("unknown training mode `{other}`"))),
        }
    }
}

/// Intervention starts sampled per episode per step: a count, or every valid start.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "serde_json::Value", into = "serde_json::Value")]
pub enum FramesPerStep {
    Count(usize),
    Exhaustive,
}

impl TryFrom<serde_json::Value> for FramesPerStep {
    type Error = String;

    fn try_from(v: serde_json::Value) -> std::result::Result<Self, String> {
        match &v {
            serde_json::Value::String(s) if s == "exhaustive" => Ok(FramesPerStep::Exhaustive),
            serde_json::Value::Number(n) => n
                .as_u64()
                .filter(|&n| n >= 1)
                .map(|n| FramesPerStep::Count(n as usize))
                .ok_or_else(|| format!("frames_per_step must be a positive integer, got {n}")),
            other => Err(format!("frames_per_step must be an integer or \"exhaustive\", got {other}")),
        }
    }
}

impl From<FramesPerStep> for serde_json::Value {
    fn from(f: FramesPerStep) -> Self {
        match f {
            FramesPerStep::Count(n) => n.into(),
            FramesPerStep::Exhaustive => "exhaustive".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// q-network learning rate.
    pub alpha: f64,
    /// Encoder / decoder learning rate.
    pub beta: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub batch_n: usize,
    pub frames_per_step: FramesPerStep,
    pub intervention_kinds: Vec<InterventionKind>,
    /// Frames covered by one intervention.
    pub intervention_w: usize,
    pub epochs_max: usize,
    pub patience: usize,
    pub folds: usize,
    pub seed: u64,
    pub mode: TrainMode,
    pub encoder_gets_seg_grad: bool,
    pub net: NetConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-3,
            beta: 1e-3,
            lambda1: crate::objective::DEFAULT_LAMBDA1,
            lambda2: crate::objective::DEFAULT_LAMBDA2,
            batch_n: 8,
            frames_per_step: FramesPerStep::Count(1),
            intervention_kinds: InterventionKind::ALL.to_vec(),
            intervention_w: 20,
            epochs_max: 100,
            patience: 20,
            folds: 5,
            seed: 0,
            mode: TrainMode::Baseline,
            encoder_gets_seg_grad: true,
            net: NetConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.alpha > 0.0) || !(self.beta > 0.0) {
            return bad(format!("learning rates must be positive (alpha {}, beta {})", self.alpha, self.beta));
        }
        if !(self.lambda1 >= 0.0) || !(self.lambda2 >= 0.0) {
            return bad(format!("lambdas must be non-negative ({}, {})", self.lambda1, self.lambda2));
        }
        if self.batch_n == 0 || (self.mode == TrainMode::Cci && self.batch_n < 2) {
            return bad(format!("batch_n {} too small for mode {}", self.batch_n, self.mode.name()));
        }
        if self.patience < 1 {
            return bad("patience must be at least 1".into());
        }
        if self.folds < 2 {
            return bad(format!("folds must be at least 2, got {}", self.folds));
        }
        if self.intervention_w == 0 {
            return bad("intervention_w must be positive".into());
        }
        if self.mode == TrainMode::Cci && self.intervention_kinds.is_empty() {
            return bad("cci mode needs at least one intervention kind".into());
        }
        if self.net.width_divisor == 0 {
            return bad("width_divisor must be positive".into());
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::InvalidArgument(format!("train config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    fn kinds(&self) -> Vec<InterventionKind> {
        let mut kinds = Vec::new();
        for k in &self.intervention_kinds {
            if !kinds.contains(k) {
                kinds.push(*k);
            }
        }
        kinds
    }
}

/// Grouped k-fold split: returns `(train, val)` episode indices per fold.
///
/// Episodes sharing a `source_id` always land in the same fold. Groups are
/// shuffled by `seed`, then assigned largest first to the currently smallest
/// fold.
pub fn kfold_split(episodes: &[Episode], folds: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if folds < 2 {
        return Err(Error::InvalidArgument(format!("folds must be at least 2, got {folds}")));
    }
    if episodes.len() < folds {
        return Err(Error::InvalidArgument(format!(
            "too few episodes: {} for {folds} folds",
            episodes.len()
        )));
    }
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, e) in episodes.iter().enumerate() {
        groups.entry(e.source_id.as_str()).or_default().push(i);
    }
    if groups.len() < folds {
        return Err(Error::InvalidArgument(format!(
            "too few source records: {} for {folds} folds",
            groups.len()
        )));
    }
    let mut groups: Vec<Vec<usize>> = groups.into_values().collect();
    groups.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    groups.sort_by_key(|g| std::cmp::Reverse(g.len()));
    let mut val: Vec<Vec<usize>> = vec![Vec::new(); folds];
    for g in groups {
        let target = (0..folds).min_by_key(|&f| (val[f].len(), f)).expect("folds ≥ 2");
        val[target].extend(g);
    }
    Ok(val
        .into_iter()
        .map(|mut v| {
            v.sort_unstable();
            let train = (0..episodes.len()).filter(|i| v.binary_search(i).is_err()).collect();
            (train, v)
        })
        .collect())
}

/// Losses of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss: LossBreakdown,
    /// q-network log-likelihood before its update (0 outside cci mode).
    pub l_q: f64,
}

/// Per-epoch means of the step losses plus the validation metric.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_seg: f64,
    pub i_vcci: f64,
    pub l_sim: f64,
    pub l_q: f64,
    pub total: f64,
    /// Frame accuracy on the validation episodes.
    pub val_metric: f64,
    /// Episodes visited during the epoch.
    pub visited: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub steps: Vec<StepRecord>,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,l_seg,i_vcci,l_sim,val_metric\n");
        for e in &self.epochs {
            let _ = writeln!(out, "{},{},{},{},{}", e.epoch, e.l_seg, e.i_vcci, e.l_sim, e.val_metric);
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Intervention starts and negative indices for one step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StepPlan {
    /// `[episode][slot]` start frame.
    pub taus: Vec<Vec<usize>>,
    /// `[episode][slot]` negative sample index within the batch.
    pub negatives: Vec<Vec<usize>>,
}

impl StepPlan {
    pub fn sample<R: Rng + ?Sized>(n: usize, frames: usize, cfg: &TrainConfig, rng: &mut R) -> Result<Self> {
        let w = cfg.intervention_w;
        if w > frames {
            return Err(Error::InvalidArgument(format!(
                "intervention of {w} frames does not fit {frames} frames"
            )));
        }
        let starts = frames - w + 1;
        let mut taus = Vec::with_capacity(n);
        let mut negatives = Vec::with_capacity(n);
        for _ in 0..n {
            let t: Vec<usize> = match cfg.frames_per_step {
                FramesPerStep::Count(m) => (0..m).map(|_| rng.random_range(0..starts)).collect(),
                FramesPerStep::Exhaustive => (0..starts).collect(),
            };
            negatives.push(t.iter().map(|_| rng.random_range(0..n)).collect());
            taus.push(t);
        }
        Ok(Self { taus, negatives })
    }
}

struct Variant {
    z: LatentSequence,
    cache: MbcnnCache,
}

struct EpisodeForward {
    z: LatentSequence,
    cache: MbcnnCache,
    l_seg: f64,
    dec_grads: ParamSet,
    dz_seg: Vec<f64>,
    /// `slot × kinds.len() + kind`.
    variants: Vec<Variant>,
}

fn seg_forward(model: &Model, ep: &Episode, scale: f64) -> Result<(LatentSequence, MbcnnCache, f64, ParamSet, Vec<f64>)> {
    let (z, cache) = model.encoder.forward(&ep.signal)?;
    let (logits, dcache): (Vec<f64>, DecoderCache) = model.decoder.forward_logits(&z)?;
    let (l, mut dlogits) = seg_loss_from_logits(&logits, &ep.frame_labels, model.decoder.classes);
    dlogits.iter_mut().for_each(|g| *g *= scale);
    let (dec_grads, dz) = model.decoder.backward(&dcache, &dlogits);
    Ok((z, cache, l, dec_grads, dz))
}

fn forward_batch(
    model: &Model,
    batch: &[&Episode],
    plan: Option<&StepPlan>,
    cfg: &TrainConfig,
) -> Result<Vec<EpisodeForward>> {
    let kinds = cfg.kinds();
    let scale = 1.0 / batch.len() as f64;
    batch
        .par_iter()
        .enumerate()
        .map(|(i, ep)| {
            let (z, cache, l_seg, dec_grads, dz_seg) = seg_forward(model, ep, scale)?;
            let mut variants = Vec::new();
            if let Some(plan) = plan {
                for &tau in &plan.taus[i] {
                    for &kind in &kinds {
                        let spec = InterventionSpec {
                            kind,
                            target_frame: tau,
                            frames_covered: cfg.intervention_w,
                            frame_len_samples: ep.frame_len_samples,
                        };
                        let (z, cache) = model.encoder.forward(&apply_do(&ep.signal, &spec)?)?;
                        variants.push(Variant { z, cache });
                    }
                }
            }
            Ok(EpisodeForward {
                z,
                cache,
                l_seg,
                dec_grads,
                dz_seg,
                variants,
            })
        })
        .collect()
}

/// Covered-frame `(z, z_do)` pairs of every slot and kind, for fitting q.
fn covered_pairs(fwd: &[EpisodeForward], plan: &StepPlan, cfg: &TrainConfig) -> Result<PairBatch> {
    let k = cfg.kinds().len();
    let d = fwd[0].z.dim;
    let (mut z, mut z_do) = (Vec::new(), Vec::new());
    for (i, e) in fwd.iter().enumerate() {
        for (s, &tau) in plan.taus[i].iter().enumerate() {
            for kind in 0..k {
                let v = &e.variants[s * k + kind];
                for f in tau..tau + cfg.intervention_w {
                    z.extend_from_slice(e.z.frame(f));
                    z_do.extend_from_slice(v.z.frame(f));
                }
            }
        }
    }
    let rows = z.len() / d;
    PairBatch::new(rows, 1, d, z, z_do)
}

/// Composite objective value and gradients for a fixed plan and frozen q.
///
/// Returns the loss breakdown, encoder gradients of
/// `[seg]·l_seg + λ1·i_vcci − λ2·l_sim`, and decoder gradients of `l_seg`.
fn backward_batch(
    model: &Model,
    fwd: &[EpisodeForward],
    plan: Option<&StepPlan>,
    cfg: &TrainConfig,
) -> (LossBreakdown, ParamSet, ParamSet) {
    let n = fwd.len();
    let l_seg = fwd.iter().map(|e| e.l_seg).sum::<f64>() / n as f64;
    let mut dz: Vec<Vec<f64>> = fwd
        .iter()
        .map(|e| {
            if cfg.encoder_gets_seg_grad {
                e.dz_seg.clone()
            } else {
                vec![0.0; e.dz_seg.len()]
            }
        })
        .collect();
    let mut dz_do: Vec<Vec<Vec<f64>>> = fwd
        .iter()
        .map(|e| e.variants.iter().map(|v| vec![0.0; v.z.values.len()]).collect())
        .collect();
    let (mut i_vcci, mut l_sim) = (0.0, 0.0);
    let contrastive = plan.is_some() && (cfg.lambda1 != 0.0 || cfg.lambda2 != 0.0);

    if let Some(plan) = plan {
        let kinds = cfg.kinds().len();
        let d = fwd[0].z.dim;
        let w = cfg.intervention_w;
        let kscale = 1.0 / kinds as f64;
        for kind in 0..kinds {
            let (mut pos, mut neg, mut cond) = (Vec::new(), Vec::new(), Vec::new());
            let mut index = Vec::new();
            for (i, e) in fwd.iter().enumerate() {
                for (s, &tau) in plan.taus[i].iter().enumerate() {
                    let kn = plan.negatives[i][s];
                    let v = &e.variants[s * kinds + kind];
                    for f in tau..tau + w {
                        pos.extend_from_slice(e.z.frame(f));
                        neg.extend_from_slice(fwd[kn].z.frame(f));
                        cond.extend_from_slice(v.z.frame(f));
                        index.push((i, s, f, kn));
                    }
                }
            }
            let (u, dpos, dneg, dcond) = contrast_grad(&model.qnet, &pos, &neg, &cond);
            i_vcci += u * kscale;
            if contrastive && cfg.lambda1 != 0.0 {
                let c = cfg.lambda1 * kscale;
                for (r, &(i, s, f, kn)) in index.iter().enumerate() {
                    let row = r * d..(r + 1) * d;
                    let at = f * d..(f + 1) * d;
                    for (dst, g) in dz[i][at.clone()].iter_mut().zip(&dpos[row.clone()]) {
                        *dst += c * g;
                    }
                    for (dst, g) in dz[kn][at.clone()].iter_mut().zip(&dneg[row.clone()]) {
                        *dst += c * g;
                    }
                    for (dst, g) in dz_do[i][s * kinds + kind][at].iter_mut().zip(&dcond[row]) {
                        *dst += c * g;
                    }
                }
            }

            let mut sims = Vec::new();
            for (i, e) in fwd.iter().enumerate() {
                for (s, &tau) in plan.taus[i].iter().enumerate() {
                    let v = &e.variants[s * kinds + kind];
                    for f in (0..e.z.frames).filter(|f| !(tau..tau + w).contains(f)) {
                        if let Ok(r) = cosine_with_grad(e.z.frame(f), v.z.frame(f)) {
                            sims.push((i, s, f, r));
                        }
                    }
                }
            }
            if !sims.is_empty() {
                let m = sims.len() as f64;
                l_sim += sims.iter().map(|s| s.3 .0).sum::<f64>() / m * kscale;
                if contrastive && cfg.lambda2 != 0.0 {
                    let c = -cfg.lambda2 * kscale / m;
                    for (i, s, f, (_, da, db)) in &sims {
                        let at = f * d..(f + 1) * d;
                        for (dst, g) in dz[*i][at.clone()].iter_mut().zip(da) {
                            *dst += c * g;
                        }
                        for (dst, g) in dz_do[*i][s * kinds + kind][at].iter_mut().zip(db) {
                            *dst += c * g;
                        }
                    }
                }
            }
        }
    }

    let enc_parts: Vec<ParamSet> = fwd
        .par_iter()
        .zip(dz.par_iter())
        .zip(dz_do.par_iter())
        .map(|((e, dz), dz_do)| {
            let mut g = model.encoder.backward(&e.cache, dz);
            if contrastive {
                for (v, dv) in e.variants.iter().zip(dz_do) {
                    g.accumulate(&model.encoder.backward(&v.cache, dv));
                }
            }
            g
        })
        .collect();
    let mut enc = model.encoder.params().zeros_like();
    for g in &enc_parts {
        enc.accumulate(g);
    }
    let mut dec = model.decoder.params().zeros_like();
    for e in fwd {
        dec.accumulate(&e.dec_grads);
    }
    (total_loss(l_seg, i_vcci, l_sim, cfg.lambda1, cfg.lambda2), enc, dec)
}

/// Composite objective and its gradients for a batch under a fixed plan,
/// with the q-network frozen. Used for gradient verification.
pub fn composite_gradients(
    model: &Model,
    batch: &[&Episode],
    plan: &StepPlan,
    cfg: &TrainConfig,
) -> Result<(LossBreakdown, ParamSet, ParamSet)> {
    let fwd = forward_batch(model, batch, Some(plan), cfg)?;
    Ok(backward_batch(model, &fwd, Some(plan), cfg))
}

struct Optimizers {
    enc: Adam,
    dec: Adam,
    q: Adam,
}

fn check_finite(loss: &LossBreakdown, l_q: f64, epoch: usize, step: usize) -> Result<()> {
    if [loss.l_seg, loss.i_vcci, loss.l_sim, loss.total, l_q].iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Divergence {
            epoch,
            step,
            detail: format!(
                "l_seg {} i_vcci {} l_sim {} total {} l_q {}",
                loss.l_seg, loss.i_vcci, loss.l_sim, loss.total, l_q
            ),
        })
    }
}

fn train_step<R: Rng>(
    model: &mut Model,
    opt: &mut Optimizers,
    batch: &[&Episode],
    cfg: &TrainConfig,
    do_rng: &mut R,
    epoch: usize,
    step: usize,
) -> Result<StepRecord> {
    let plan = if cfg.mode == TrainMode::Cci {
        Some(StepPlan::sample(batch.len(), batch[0].frames(), cfg, do_rng)?)
    } else {
        None
    };
    let fwd = forward_batch(model, batch, plan.as_ref(), cfg)?;
    let mut l_q = 0.0;
    if let Some(plan) = &plan {
        let pairs = covered_pairs(&fwd, plan, cfg)?;
        let (ll, mut gq) = qnet_ll_grad(&model.qnet, &pairs)?;
        l_q = ll;
        gq.scale(-1.0);
        opt.q.step(model.qnet.params_mut(), &gq);
    }
    let (loss, genc, gdec) = backward_batch(model, &fwd, plan.as_ref(), cfg);
    check_finite(&loss, l_q, epoch, step)?;
    opt.enc.step(model.encoder.params_mut(), &genc);
    opt.dec.step(model.decoder.params_mut(), &gdec);
    if !(model.encoder.params().is_finite() && model.decoder.params().is_finite() && model.qnet.params().is_finite()) {
        return Err(Error::Divergence {
            epoch,
            step,
            detail: "non-finite parameters after update".into(),
        });
    }
    Ok(StepRecord { epoch, step, loss, l_q })
}

/// Fraction of frames whose hard prediction equals the label.
pub fn frame_accuracy(model: &Model, episodes: &[Episode]) -> Result<f64> {
    let counts: Vec<(usize, usize)> = episodes
        .par_iter()
        .map(|ep| {
            let pred = model.predict(&ep.signal)?.hard_labels();
            let hits = pred.iter().zip(&ep.frame_labels).filter(|(a, b)| a == b).count();
            Ok((hits, ep.frame_labels.len()))
        })
        .collect::<Result<_>>()?;
    let (hits, total) = counts.iter().fold((0, 0), |a, c| (a.0 + c.0, a.1 + c.1));
    Ok(if total == 0 { 0.0 } else { hits as f64 / total as f64 })
}

fn check_episodes(model: &Model, episodes: &[Episode]) -> Result<()> {
    for ep in episodes {
        model.check_task(ep.task)?;
        if ep.signal.len() != model.encoder.input_len() {
            return Err(Error::ShapeMismatch(format!(
                "episode of {} samples for an encoder expecting {}",
                ep.signal.len(),
                model.encoder.input_len()
            )));
        }
        if ep.frame_len_samples != model.encoder.downsample() || ep.frames() * ep.frame_len_samples != ep.signal.len() {
            return Err(Error::ShapeMismatch(format!(
                "episode frames of {} samples do not match the encoder downsampling {}",
                ep.frame_len_samples,
                model.encoder.downsample()
            )));
        }
    }
    Ok(())
}

fn augmented_stream<R: Rng>(train: &[Episode], cfg: &TrainConfig, rng: &mut R) -> Result<Vec<Episode>> {
    let kinds = cfg.kinds();
    let mut stream = train.to_vec();
    if kinds.is_empty() {
        return Ok(stream);
    }
    for ep in train {
        let frames = ep.frames();
        if cfg.intervention_w > frames {
            return Err(Error::InvalidArgument(format!(
                "intervention of {} frames does not fit {frames} frames",
                cfg.intervention_w
            )));
        }
        let kind = kinds[rng.random_range(0..kinds.len())];
        let spec = InterventionSpec {
            kind,
            target_frame: rng.random_range(0..frames - cfg.intervention_w + 1),
            frames_covered: cfg.intervention_w,
            frame_len_samples: ep.frame_len_samples,
        };
        stream.push(Episode {
            signal: apply_do(&ep.signal, &spec)?,
            ..ep.clone()
        });
    }
    Ok(stream)
}

/// Trains `model` in the mode selected by `cfg`.
///
/// Each epoch shuffles the training stream and steps through it in batches
/// of `batch_n`. Training stops after `patience` epochs without a strict
/// improvement of validation frame accuracy (training accuracy when `val` is
/// empty); the best parameters are returned.
pub fn train_model(mut model: Model, cfg: &TrainConfig, train: &[Episode], val: &[Episode]) -> Result<(Model, History)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    check_episodes(&model, train)?;
    check_episodes(&model, val)?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(1);
    let mut do_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    do_rng.set_stream(2);
    let mut opt = Optimizers {
        enc: Adam::new(model.encoder.params(), cfg.beta),
        dec: Adam::new(model.decoder.params(), cfg.beta),
        q: Adam::new(model.qnet.params(), cfg.alpha),
    };
    let mut history = History::default();
    let mut best: Option<(f64, usize, Model)> = None;
    let mut step = 0;
    for epoch in 1..=cfg.epochs_max {
        let stream = match cfg.mode {
            TrainMode::Augment => augmented_stream(train, cfg, &mut do_rng)?,
            _ => train.to_vec(),
        };
        let mut order: Vec<usize> = (0..stream.len()).collect();
        order.shuffle(&mut shuffle_rng);
        let first = history.steps.len();
        for chunk in order.chunks(cfg.batch_n) {
            step += 1;
            let batch: Vec<&Episode> = chunk.iter().map(|&i| &stream[i]).collect();
            history
                .steps
                .push(train_step(&mut model, &mut opt, &batch, cfg, &mut do_rng, epoch, step)?);
        }
        let steps = &history.steps[first..];
        let mean = |f: &dyn Fn(&StepRecord) -> f64| steps.iter().map(f).sum::<f64>() / steps.len() as f64;
        let val_metric = frame_accuracy(&model, if val.is_empty() { train } else { val })?;
        history.epochs.push(EpochRecord {
            epoch,
            l_seg: mean(&|s| s.loss.l_seg),
            i_vcci: mean(&|s| s.loss.i_vcci),
            l_sim: mean(&|s| s.loss.l_sim),
            l_q: mean(&|s| s.l_q),
            total: mean(&|s| s.loss.total),
            val_metric,
            visited: stream.len(),
        });
        match &best {
            Some((b, _, _)) if val_metric <= *b => {}
            _ => best = Some((val_metric, epoch, model.clone())),
        }
        let best_epoch = best.as_ref().map_or(epoch, |b| b.1);
        if epoch - best_epoch >= cfg.patience {
            history.stopped_early = true;
            break;
        }
    }
    if let Some((_, epoch, m)) = best {
        history.best_epoch = Some(epoch);
        model = m;
    }
    Ok((model, history))
}

fn task_of(train: &[Episode]) -> Result<crate::records::Task> {
    train
        .first()
        .map(|e| e.task)
        .ok_or_else(|| Error::InvalidArgument("empty training set".into()))
}

/// Initializes a network from `cfg.net` and `cfg.seed` and trains it.
pub fn train(cfg: &TrainConfig, train: &[Episode], val: &[Episode]) -> Result<(Model, History)> {
    let model = Model::init(task_of(train)?, &cfg.net, cfg.seed)?;
    train_model(model, cfg, train, val)
}

pub fn train_baseline(cfg: &TrainConfig, train_eps: &[Episode], val_eps: &[Episode]) -> Result<(Model, History)> {
    train(&TrainConfig { mode: TrainMode::Baseline, ..cfg.clone() }, train_eps, val_eps)
}

pub fn train_cci(cfg: &TrainConfig, train_eps: &[Episode], val_eps: &[Episode]) -> Result<(Model, History)> {
    train(&TrainConfig { mode: TrainMode::Cci, ..cfg.clone() }, train_eps, val_eps)
}

pub fn train_augment(cfg: &TrainConfig, train_eps: &[Episode], val_eps: &[Episode]) -> Result<(Model, History)> {
    train(&TrainConfig { mode: TrainMode::Augment, ..cfg.clone() }, train_eps, val_eps)
}

#[derive(Clone, Debug)]
pub struct FoldOutcome {
    pub fold: usize,
    pub model: Model,
    pub history: History,
    pub val_ids: Vec<usize>,
    pub checkpoint: Option<PathBuf>,
}

/// Trains one model per fold; with `out_dir`, writes `fold{k}.safetensors`
/// and `fold{k}_history.csv` there.
pub fn cross_validate(cfg: &TrainConfig, episodes: &[Episode], out_dir: Option<&Path>) -> Result<Vec<FoldOutcome>> {
    cfg.validate()?;
    let split = kfold_split(episodes, cfg.folds, cfg.seed)?;
    let task = task_of(episodes)?;
    let config_json = serde_json::to_string(cfg).expect("config serializes");
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut out = Vec::with_capacity(split.len());
    for (fold, (tr, va)) in split.into_iter().enumerate() {
        let seed = cfg.seed.wrapping_add(fold as u64);
        let fold_cfg = TrainConfig { seed, ..cfg.clone() };
        let train_eps: Vec<Episode> = tr.iter().map(|&i| episodes[i].clone()).collect();
        let val_eps: Vec<Episode> = va.iter().map(|&i| episodes[i].clone()).collect();
        let model = Model::init(task, &cfg.net, seed)?;
        let (model, history) = train_model(model, &fold_cfg, &train_eps, &val_eps)?;
        let checkpoint = match out_dir {
            Some(dir) => {
                let path = dir.join(format!("fold{fold}.safetensors"));
                let manifest = CheckpointManifest::for_model(&model, seed, &config_json, cfg.mode.name());
                save_checkpoint(&path, &model, &manifest)?;
                history.write_csv(dir.join(format!("fold{fold}_history.csv")))?;
                Some(path)
            }
            None => None,
        };
        out.push(FoldOutcome {
            fold,
            model,
            history,
            val_ids: va,
            checkpoint,
        });
    }
    Ok(out)
}
