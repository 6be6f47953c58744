//! Frame-level do-operations on episode signals.
//!
//! `ZeroRhythm` erases the target window (intervention on the rhythm
//! attribute); `InvertMorph` negates it (intervention on the morphology
//! attribute). Samples outside the window are never touched.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterventionKind {
    ZeroRhythm,
    InvertMorph,
}

impl InterventionKind {
    pub const ALL: [InterventionKind; 2] = [InterventionKind::ZeroRhythm, InterventionKind::InvertMorph];
}

impl fmt::Display for InterventionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InterventionKind::ZeroRhythm => "zero_rhythm",
            InterventionKind::InvertMorph => "invert_morph",
        })
    }
}

impl FromStr for InterventionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero_rhythm" | "ar" => Ok(InterventionKind::ZeroRhythm),
            "invert_morph" | "am" => Ok(InterventionKind::InvertMorph),
            other => Err(Error::InvalidArgument(format!("unknown intervention `{other}`"))),
        }
    }
}

/// Which attribute is intervened, and on which contiguous frames.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterventionSpec {
    pub kind: InterventionKind,
    pub target_frame: usize,
    pub frames_covered: usize,
    pub frame_len_samples: usize,
}

impl InterventionSpec {
    pub fn frames(&self) -> std::ops::Range<usize> {
        self.target_frame..self.target_frame + self.frames_covered
    }

    pub fn samples(&self) -> std::ops::Range<usize> {
        self.target_frame * self.frame_len_samples
            ..(self.target_frame + self.frames_covered) * self.frame_len_samples
    }
}

/// Binary frame mask: 0 on `[tau, tau + w)`, 1 elsewhere.
pub fn build_mask(frames: usize, tau: usize, w: usize) -> Result<Vec<u8>> {
    if w == 0 || tau >= frames || tau + w > frames {
        return Err(Error::InvalidArgument(format!(
            "intervention window [{tau}, {}) not within [0, {frames})",
            tau + w
        )));
    }
    Ok((0..frames).map(|f| u8::from(!(tau..tau + w).contains(&f))).collect())
}

/// Applies the do-operation described by `spec` to an episode signal.
pub fn apply_do(x: &[f64], spec: &InterventionSpec) -> Result<Vec<f64>> {
    let mut y = x.to_vec();
    apply_do_in_place(&mut y, spec)?;
    Ok(y)
}

pub fn apply_do_in_place(x: &mut [f64], spec: &InterventionSpec) -> Result<()> {
    if spec.frame_len_samples == 0 || x.len() % spec.frame_len_samples != 0 {
        return Err(Error::ShapeMismatch(format!(
            "signal of {} samples is not a whole number of {}-sample frames",
            x.len(),
            spec.frame_len_samples
        )));
    }
    let frames = x.len() / spec.frame_len_samples;
    build_mask(frames, spec.target_frame, spec.frames_covered)?;
    let window = &mut x[spec.samples()];
    match spec.kind {
        InterventionKind::ZeroRhythm => window.fill(0.0),
        InterventionKind::InvertMorph => window.iter_mut().for_each(|v| *v = -*v),
    }
    Ok(())
}
