//! Filtering, resampling, denoising and noise mixing.
//!
//! Every filter here is length preserving.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::records::SignalRecord;

/// Second-order section, normalized so `a0 = 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    fn lowpass(fs: f64, f0: f64, q: f64) -> Self {
        let w0 = 2.0 * PI * f0 / fs;
        let (sin, cos) = w0.sin_cos();
        let alpha = sin / (2.0 * q);
        let a0 = 1.0 + alpha;
        let b1 = (1.0 - cos) / a0;
        Self {
            b: [b1 / 2.0, b1, b1 / 2.0],
            a: [1.0, -2.0 * cos / a0, (1.0 - alpha) / a0],
        }
    }

    fn highpass(fs: f64, f0: f64, q: f64) -> Self {
        let w0 = 2.0 * PI * f0 / fs;
        let (sin, cos) = w0.sin_cos();
        let alpha = sin / (2.0 * q);
        let a0 = 1.0 + alpha;
        let b1 = (1.0 + cos) / a0;
        Self {
            b: [b1 / 2.0, -b1, b1 / 2.0],
            a: [1.0, -2.0 * cos / a0, (1.0 - alpha) / a0],
        }
    }

    fn dc_gain(&self) -> f64 {
        self.b.iter().sum::<f64>() / self.a.iter().sum::<f64>()
    }

    /// Direct-form II transposed, starting in the steady state for a
    /// constant input equal to `x[0]`.
    fn run(&self, x: &mut [f64]) {
        let Some(&u) = x.first() else { return };
        let [b0, b1, b2] = self.b;
        let [_, a1, a2] = self.a;
        let y_ss = self.dc_gain() * u;
        let mut s2 = b2 * u - a2 * y_ss;
        let mut s1 = y_ss - b0 * u;
        for v in x.iter_mut() {
            let xin = *v;
            let y = b0 * xin + s1;
            s1 = b1 * xin - a1 * y + s2;
            s2 = b2 * xin - a2 * y;
            *v = y;
        }
    }
}

/// Butterworth quality factors of the biquad sections of an order-4 filter.
const BUTTER4_Q: [f64; 2] = [0.541_196_100_146_197, 1.306_562_964_876_376_5];

/// Sections of a 4th-order Butterworth high-pass at `lo` cascaded with a
/// 4th-order Butterworth low-pass at `hi`.
pub fn bandpass_sections(fs_hz: f64, lo_hz: f64, hi_hz: f64) -> Result<Vec<Biquad>> {
    if !(lo_hz > 0.0 && lo_hz < hi_hz && hi_hz < fs_hz / 2.0) {
        return Err(Error::InvalidBand(format!(
            "need 0 < lo < hi < fs/2, got lo={lo_hz}, hi={hi_hz}, fs={fs_hz}"
        )));
    }
    let mut sos: Vec<Biquad> = BUTTER4_Q.iter().map(|&q| Biquad::highpass(fs_hz, lo_hz, q)).collect();
    sos.extend(BUTTER4_Q.iter().map(|&q| Biquad::lowpass(fs_hz, hi_hz, q)));
    Ok(sos)
}

/// Zero-phase application of a section cascade with odd-extension padding.
pub fn sosfiltfilt(sos: &[Biquad], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let pad = (3 * (2 * sos.len() + 1)).min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    for i in (1..=pad).rev() {
        ext.push(2.0 * x[0] - x[i]);
    }
    ext.extend_from_slice(x);
    for i in 1..=pad {
        ext.push(2.0 * x[n - 1] - x[n - 1 - i]);
    }
    for s in sos {
        s.run(&mut ext);
    }
    ext.reverse();
    for s in sos {
        s.run(&mut ext);
    }
    ext.reverse();
    ext[pad..pad + n].to_vec()
}

/// Zero-phase Butterworth band-pass.
pub fn bandpass(x: &[f64], fs_hz: f64, lo_hz: f64, hi_hz: f64) -> Result<Vec<f64>> {
    let sos = bandpass_sections(fs_hz, lo_hz, hi_hz)?;
    Ok(sosfiltfilt(&sos, x))
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Mean subtraction.
pub fn zero_center(x: &[f64]) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::InvalidArgument("zero_center of an empty sequence".into()));
    }
    let m = mean(x);
    Ok(x.iter().map(|v| v - m).collect())
}

/// Zero mean, unit population standard deviation. Constant input maps to zeros.
pub fn standardize(x: &[f64]) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    let m = mean(x);
    let var = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64;
    let sd = var.sqrt();
    if sd <= 1e-12 * (1.0 + m.abs()) {
        return vec![0.0; x.len()];
    }
    x.iter().map(|v| (v - m) / sd).collect()
}

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

const RESAMPLE_ZERO_CROSSINGS: f64 = 32.0;
const RESAMPLE_KAISER_BETA: f64 = 10.0;
const RESAMPLE_ROLLOFF: f64 = 0.9;

/// Band-limited resampling with a Kaiser-windowed sinc kernel.
///
/// The kernel cutoff sits at `0.9 · min(fs_in, fs_out) / 2`, which doubles as
/// the anti-alias filter when downsampling. Output length is
/// `round(n · fs_out / fs_in)`; samples beyond the ends are mirrored.
pub fn resample(x: &[f64], fs_in: f64, fs_out: f64) -> Result<Vec<f64>> {
    if !(fs_in > 0.0 && fs_out > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sampling rates must be positive (got {fs_in} -> {fs_out})"
        )));
    }
    if fs_in == fs_out || x.is_empty() {
        return Ok(x.to_vec());
    }
    let n = x.len() as isize;
    let n_out = (x.len() as f64 * fs_out / fs_in).round() as usize;
    // Cutoff in cycles per input sample.
    let fc = RESAMPLE_ROLLOFF * 0.5 * fs_in.min(fs_out) / fs_in;
    let half_width = RESAMPLE_ZERO_CROSSINGS / (2.0 * fc);
    let i0_beta = bessel_i0(RESAMPLE_KAISER_BETA);
    let mirror = |i: isize| -> f64 {
        let mut j = i;
        if n == 1 {
            return x[0];
        }
        let period = 2 * (n - 1);
        j = j.rem_euclid(period);
        if j >= n {
            j = period - j;
        }
        x[j as usize]
    };
    let step = fs_in / fs_out;
    let out = (0..n_out)
        .map(|k| {
            let t = k as f64 * step;
            let lo = (t - half_width).ceil() as isize;
            let hi = (t + half_width).floor() as isize;
            let mut acc = 0.0;
            for i in lo..=hi {
                let u = t - i as f64;
                let r = u / half_width;
                let w = bessel_i0(RESAMPLE_KAISER_BETA * (1.0 - r * r).max(0.0).sqrt()) / i0_beta;
                let arg = 2.0 * fc * u;
                let sinc = if arg.abs() < 1e-12 {
                    1.0
                } else {
                    (PI * arg).sin() / (PI * arg)
                };
                acc += mirror(i) * 2.0 * fc * sinc * w;
            }
            acc
        })
        .collect();
    Ok(out)
}

/// Classical local Wiener filter with the noise variance estimated as the
/// mean of the local variances.
pub fn wiener_local(x: &[f64], window_samples: usize) -> Result<Vec<f64>> {
    wiener_local_with(x, window_samples, None)
}

/// Local Wiener filter with an optional explicit noise variance.
///
/// `y_t = m_t + max(σ²_t − ν², 0) / σ²_t · (x_t − m_t)` with centered moving
/// statistics (windows truncated at the edges).
pub fn wiener_local_with(x: &[f64], window_samples: usize, noise_var: Option<f64>) -> Result<Vec<f64>> {
    if window_samples < 3 || window_samples % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "Wiener window must be odd and >= 3, got {window_samples}"
        )));
    }
    if window_samples > x.len() {
        return Err(Error::InvalidArgument(format!(
            "Wiener window {window_samples} larger than signal of {} samples",
            x.len()
        )));
    }
    let n = x.len();
    let half = window_samples / 2;
    let mut prefix = vec![0.0; n + 1];
    let mut prefix_sq = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + x[i];
        prefix_sq[i + 1] = prefix_sq[i] + x[i] * x[i];
    }
    let mut means = Vec::with_capacity(n);
    let mut vars = Vec::with_capacity(n);
    for t in 0..n {
        let lo = t.saturating_sub(half);
        let hi = (t + half + 1).min(n);
        let cnt = (hi - lo) as f64;
        let m = (prefix[hi] - prefix[lo]) / cnt;
        let v = ((prefix_sq[hi] - prefix_sq[lo]) / cnt - m * m).max(0.0);
        means.push(m);
        vars.push(v);
    }
    let nu2 = noise_var.unwrap_or_else(|| mean(&vars));
    Ok((0..n)
        .map(|t| {
            let (m, v) = (means[t], vars[t]);
            if v <= 0.0 {
                m
            } else {
                m + (v - nu2).max(0.0) / v * (x[t] - m)
            }
        })
        .collect())
}

/// White Gaussian noise passed through [`bandpass`].
pub fn make_inband_gaussian(fs_hz: f64, band_lo: f64, band_hi: f64, n: usize, seed: u64) -> Result<Vec<f64>> {
    let sos = bandpass_sections(fs_hz, band_lo, band_hi)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let white: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    Ok(sosfiltfilt(&sos, &white))
}

/// Mean square.
pub fn power(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// Scale `c` such that `signal + c·noise` has the requested SNR.
pub fn snr_scale(signal_power: f64, noise_power: f64, snr_db: f64) -> f64 {
    (signal_power / (noise_power * 10f64.powf(snr_db / 10.0))).sqrt()
}

/// `noise` repeated (or truncated) to `n` samples, starting at `offset`.
pub fn tile(noise: &[f64], n: usize, offset: usize) -> Vec<f64> {
    (0..n).map(|i| noise[(offset + i) % noise.len()]).collect()
}

/// Adds `noise` (tiled to the signal length) scaled to reach `snr_db`.
pub fn mix_at_snr(signal: &[f64], noise: &[f64], snr_db: f64) -> Result<Vec<f64>> {
    if noise.is_empty() {
        return Err(Error::ZeroPowerNoise);
    }
    let tiled = tile(noise, signal.len(), 0);
    let ps = power(signal);
    let pn = power(&tiled);
    if !(pn > 0.0) {
        return Err(Error::ZeroPowerNoise);
    }
    if !(ps > 0.0) {
        return Err(Error::ZeroPowerSignal);
    }
    let c = snr_scale(ps, pn, snr_db);
    Ok(signal.iter().zip(&tiled).map(|(s, v)| s + c * v).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Bw,
    Ma,
    Em,
    GaussianInband,
    Lung,
    CustomRecord,
}

impl NoiseKind {
    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::Bw => "bw",
            NoiseKind::Ma => "ma",
            NoiseKind::Em => "em",
            NoiseKind::GaussianInband => "gaussian_inband",
            NoiseKind::Lung => "lung",
            NoiseKind::CustomRecord => "custom_record",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "bw" => NoiseKind::Bw,
            "ma" => NoiseKind::Ma,
            "em" => NoiseKind::Em,
            "gaussian_inband" | "gaussian" => NoiseKind::GaussianInband,
            "lung" => NoiseKind::Lung,
            "custom_record" | "custom" => NoiseKind::CustomRecord,
            other => return Err(Error::InvalidArgument(format!("unknown noise kind `{other}`"))),
        })
    }

    pub fn is_recorded(self) -> bool {
        self != NoiseKind::GaussianInband
    }
}

/// A noise source and the SNR it is mixed at.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub snr_db: f64,
    pub seed: u64,
    pub band: Option<(f64, f64)>,
    pub source: Option<SignalRecord>,
}

impl NoiseSpec {
    pub fn gaussian_inband(lo: f64, hi: f64, snr_db: f64, seed: u64) -> Self {
        Self {
            kind: NoiseKind::GaussianInband,
            snr_db,
            seed,
            band: Some((lo, hi)),
            source: None,
        }
    }

    pub fn recorded(kind: NoiseKind, source: SignalRecord, snr_db: f64, seed: u64) -> Self {
        Self {
            kind,
            snr_db,
            seed,
            band: None,
            source: Some(source),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind.is_recorded() && self.source.is_none() {
            return Err(Error::InvalidArgument(format!(
                "noise kind {} requires a source record",
                self.kind.name()
            )));
        }
        if self.kind == NoiseKind::GaussianInband && self.band.is_none() {
            return Err(Error::InvalidArgument("gaussian_inband noise requires a band".into()));
        }
        Ok(())
    }

    /// Produces `n` noise samples at `fs_hz`, seeded by `seed`.
    pub fn generate(&self, fs_hz: f64, n: usize, seed: u64) -> Result<Vec<f64>> {
        self.validate()?;
        match (&self.source, self.band) {
            (Some(src), _) => {
                let raw = resample(&src.samples_f64(), src.fs_hz, fs_hz)?;
                if raw.is_empty() {
                    return Err(Error::ZeroPowerNoise);
                }
                let offset = {
                    use rand::Rng;
                    ChaCha8Rng::seed_from_u64(seed).random_range(0..raw.len())
                };
                Ok(tile(&raw, n, offset))
            }
            (None, Some((lo, hi))) => make_inband_gaussian(fs_hz, lo, hi, n, seed),
            (None, None) => unreachable!("validated"),
        }
    }
}
