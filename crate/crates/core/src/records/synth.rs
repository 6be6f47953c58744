//! Synthetic ECG-like and PCG-like records with exact ground truth.
//!
//! ECG beats are sums of Gaussian bumps (P, Q, R, S, T). PCG cycles are
//! damped-sinusoid bursts for S1/S2 over a low-amplitude noise floor.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Annotation, HeartState, SignalRecord, Task};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub duration_s: f64,
    pub fs_hz: f64,
    pub mean_hr_bpm: f64,
    /// Standard deviation of the instantaneous heart rate.
    pub hr_std_bpm: f64,
    pub p_amp: f64,
    pub qrs_amp: f64,
    pub t_amp: f64,
    /// Standard deviation of the R bump, in seconds.
    pub qrs_width_s: f64,
    /// Per-beat amplitude jitter (relative).
    pub amp_jitter: f64,
    /// Fraction of beats whose QRS is inverted.
    pub inverted_fraction: f64,
    /// P waves follow their own rhythm instead of preceding each QRS.
    pub decoupled_p: bool,
    pub atrial_rate_bpm: f64,
    pub noise_std: f64,
    pub baseline_wander_amp: f64,
    pub id: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self::ecg()
    }
}

impl SynthConfig {
    pub fn ecg() -> Self {
        Self {
            duration_s: 60.0,
            fs_hz: 250.0,
            mean_hr_bpm: 72.0,
            hr_std_bpm: 3.0,
            p_amp: 0.15,
            qrs_amp: 1.0,
            t_amp: 0.3,
            qrs_width_s: 0.012,
            amp_jitter: 0.1,
            inverted_fraction: 0.0,
            decoupled_p: false,
            atrial_rate_bpm: 95.0,
            noise_std: 0.02,
            baseline_wander_amp: 0.05,
            id: "synth".into(),
        }
    }

    pub fn pcg() -> Self {
        Self {
            duration_s: 20.0,
            fs_hz: 800.0,
            mean_hr_bpm: 75.0,
            hr_std_bpm: 3.0,
            noise_std: 0.02,
            baseline_wander_amp: 0.0,
            ..Self::ecg()
        }
    }

    fn check(&self) -> Result<()> {
        for (name, v) in [
            ("duration_s", self.duration_s),
            ("fs_hz", self.fs_hz),
            ("mean_hr_bpm", self.mean_hr_bpm),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} = {v} must be positive")));
            }
        }
        if !(0.0..=1.0).contains(&self.inverted_fraction) {
            return Err(Error::InvalidArgument(format!(
                "inverted_fraction = {} not in [0, 1]",
                self.inverted_fraction
            )));
        }
        Ok(())
    }

    fn n_samples(&self) -> usize {
        (self.duration_s * self.fs_hz).round() as usize
    }
}

fn gaussian(t: f64, center: f64, sd: f64) -> f64 {
    let u = (t - center) / sd;
    (-0.5 * u * u).exp()
}

/// Adds `amp · exp(−(t−c)²/2sd²)` to `out` over ±5 sd around `center`.
fn add_bump(out: &mut [f64], fs: f64, center: f64, sd: f64, amp: f64) {
    let lo = ((center - 5.0 * sd) * fs).floor().max(0.0) as usize;
    let hi = (((center + 5.0 * sd) * fs).ceil().max(0.0) as usize).min(out.len());
    for (i, v) in out.iter_mut().enumerate().take(hi).skip(lo) {
        *v += amp * gaussian(i as f64 / fs, center, sd);
    }
}

fn rr_interval(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> f64 {
    let hr = if cfg.hr_std_bpm > 0.0 {
        Normal::new(cfg.mean_hr_bpm, cfg.hr_std_bpm)
            .expect("positive std")
            .sample(rng)
    } else {
        cfg.mean_hr_bpm
    };
    (60.0 / hr.clamp(20.0, 200.0)).max(0.3)
}

fn add_noise_floor(out: &mut [f64], rng: &mut ChaCha8Rng, cfg: &SynthConfig) {
    if cfg.baseline_wander_amp > 0.0 {
        let f = 0.15 + 0.2 * rng.random::<f64>();
        let phase = 2.0 * PI * rng.random::<f64>();
        for (i, v) in out.iter_mut().enumerate() {
            *v += cfg.baseline_wander_amp * (2.0 * PI * f * i as f64 / cfg.fs_hz + phase).sin();
        }
    }
    if cfg.noise_std > 0.0 {
        let normal = Normal::new(0.0, cfg.noise_std).expect("positive std");
        for v in out.iter_mut() {
            *v += normal.sample(rng);
        }
    }
}

/// Generates a single-lead ECG-like record with one `beat` per QRS center.
pub fn synth_ecg(cfg: &SynthConfig, seed: u64) -> Result<SignalRecord> {
    cfg.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fs = cfg.fs_hz;
    let n = cfg.n_samples();
    let mut x = vec![0.0; n];
    let mut annotations = Vec::new();

    let mut t = rng.random::<f64>() * rr_interval(&mut rng, cfg);
    while t < cfg.duration_s {
        let rr = rr_interval(&mut rng, cfg);
        let jitter = 1.0 + cfg.amp_jitter * (2.0 * rng.random::<f64>() - 1.0);
        let sign = if rng.random::<f64>() < cfg.inverted_fraction {
            -1.0
        } else {
            1.0
        };
        let amp = cfg.qrs_amp * jitter * sign;
        add_bump(&mut x, fs, t - 0.025, 0.008, -0.12 * amp);
        add_bump(&mut x, fs, t, cfg.qrs_width_s, amp);
        add_bump(&mut x, fs, t + 0.028, 0.009, -0.22 * amp);
        add_bump(&mut x, fs, t + 0.26 * rr.sqrt(), 0.05, cfg.t_amp * jitter);
        if !cfg.decoupled_p {
            add_bump(&mut x, fs, t - 0.16, 0.025, cfg.p_amp * jitter);
        }
        let idx = (t * fs).round() as usize;
        if idx < n {
            annotations.push(Annotation::new(idx, "beat"));
        }
        t += rr;
    }

    if cfg.decoupled_p {
        let pp = 60.0 / cfg.atrial_rate_bpm.max(1.0);
        let mut tp = rng.random::<f64>() * pp;
        while tp < cfg.duration_s {
            add_bump(&mut x, fs, tp, 0.025, cfg.p_amp);
            tp += pp * (1.0 + 0.02 * (2.0 * rng.random::<f64>() - 1.0));
        }
    }
    add_noise_floor(&mut x, &mut rng, cfg);

    let record = SignalRecord {
        id: cfg.id.clone(),
        task: Task::Qrs,
        fs_hz: fs,
        samples: x.into_iter().map(|v| v as f32).collect(),
        annotations,
    };
    record.validate()?;
    Ok(record)
}

fn add_burst(out: &mut [f64], fs: f64, onset: f64, dur: f64, freq: f64, amp: f64) {
    let lo = (onset * fs).ceil().max(0.0) as usize;
    let hi = (((onset + dur) * fs).floor().max(0.0) as usize).min(out.len());
    for (i, v) in out.iter_mut().enumerate().take(hi).skip(lo) {
        let u = (i as f64 / fs - onset) / dur;
        let envelope = (PI * u).sin().powi(2) * (-2.0 * u).exp();
        *v += amp * envelope * (2.0 * PI * freq * (i as f64 / fs - onset)).sin();
    }
}

/// Generates a PCG-like record whose annotations tile it with the four
/// heart-sound states in cycle order.
pub fn synth_pcg(cfg: &SynthConfig, seed: u64) -> Result<SignalRecord> {
    cfg.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fs = cfg.fs_hz;
    let n = cfg.n_samples();
    let mut x = vec![0.0; n];
    let mut annotations: Vec<Annotation> = Vec::new();

    let push_onset = |t: f64, state: HeartState, annotations: &mut Vec<Annotation>| {
        let idx = (t * fs).round();
        if idx >= n as f64 {
            return;
        }
        let idx = idx.max(0.0) as usize;
        match annotations.last_mut() {
            Some(last) if last.sample_index >= idx => {
                // Segment onset collapsed onto the previous one (only possible at 0).
                last.label = state.name().to_string();
            }
            _ => annotations.push(Annotation::new(idx, state.name())),
        }
    };

    let first_rr = rr_interval(&mut rng, cfg);
    let mut t = -rng.random::<f64>() * first_rr;
    let mut rr = first_rr;
    while t < cfg.duration_s {
        let jitter = 1.0 + cfg.amp_jitter * (2.0 * rng.random::<f64>() - 1.0);
        let s1 = 0.12;
        let systole = (0.35 * rr - s1).max(0.1);
        let s2 = 0.10;
        let diastole = (rr - s1 - systole - s2).max(0.1);
        let cycle = [
            (HeartState::S1, s1),
            (HeartState::Systole, systole),
            (HeartState::S2, s2),
            (HeartState::Diastole, diastole),
        ];
        let mut onset = t;
        for (state, dur) in cycle {
            if onset + dur > 0.0 {
                push_onset(onset.max(0.0), state, &mut annotations);
            }
            match state {
                HeartState::S1 => add_burst(&mut x, fs, onset, dur, 45.0, 1.0 * jitter),
                HeartState::S2 => add_burst(&mut x, fs, onset, dur, 65.0, 0.6 * jitter),
                _ => {}
            }
            onset += dur;
        }
        t = onset;
        rr = rr_interval(&mut rng, cfg);
    }
    add_noise_floor(&mut x, &mut rng, cfg);

    let record = SignalRecord {
        id: cfg.id.clone(),
        task: Task::Heartsound,
        fs_hz: fs,
        samples: x.into_iter().map(|v| v as f32).collect(),
        annotations,
    };
    record.validate()?;
    Ok(record)
}
