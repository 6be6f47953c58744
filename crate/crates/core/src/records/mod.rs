//! Signal records, episodes and per-frame label derivation.

mod io;
mod synth;

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{list_records, load_record, save_record};
pub use synth::{synth_ecg, synth_pcg, SynthConfig};

/// Default half width of the QRS target region around an annotated R-peak.
pub const QRS_HALF_WIDTH_MS: f64 = 75.0;

/// Segmentation task a record belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Qrs,
    Heartsound,
}

impl Task {
    /// Sampling rate every episode of this task is brought to.
    pub fn target_fs(self) -> f64 {
        match self {
            Task::Qrs => 250.0,
            Task::Heartsound => 800.0,
        }
    }

    pub fn episode_seconds(self) -> f64 {
        match self {
            Task::Qrs => 10.0,
            Task::Heartsound => 5.0,
        }
    }

    pub fn episode_len(self) -> usize {
        (self.target_fs() * self.episode_seconds()).round() as usize
    }

    /// Samples per latent frame (total temporal downsampling of the encoder).
    pub fn frame_len(self) -> usize {
        match self {
            Task::Qrs => 4,
            Task::Heartsound => 16,
        }
    }

    pub fn frames(self) -> usize {
        self.episode_len() / self.frame_len()
    }

    pub fn frame_ms(self) -> f64 {
        1000.0 * self.frame_len() as f64 / self.target_fs()
    }

    /// Decoder output width: one sigmoid unit or four softmax states.
    pub fn classes(self) -> usize {
        match self {
            Task::Qrs => 1,
            Task::Heartsound => 4,
        }
    }

    /// Number of distinct frame label values.
    pub fn label_count(self) -> usize {
        match self {
            Task::Qrs => 2,
            Task::Heartsound => 4,
        }
    }

    pub fn grace_ms(self) -> f64 {
        match self {
            Task::Qrs => 150.0,
            Task::Heartsound => 100.0,
        }
    }

    pub fn annotation_kind(self) -> &'static str {
        match self {
            Task::Qrs => "beat",
            Task::Heartsound => "segment",
        }
    }

    pub fn allowed_labels(self) -> &'static [&'static str] {
        match self {
            Task::Qrs => &["beat"],
            Task::Heartsound => &HeartState::NAMES,
        }
    }

    /// Human readable name of a frame label value.
    pub fn label_name(self, label: u8) -> &'static str {
        match self {
            Task::Qrs => {
                if label == 0 {
                    "background"
                } else {
                    "qrs"
                }
            }
            Task::Heartsound => HeartState::NAMES[label as usize],
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Qrs => "qrs",
            Task::Heartsound => "heartsound",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "qrs" => Ok(Task::Qrs),
            "heartsound" | "hs" | "pcg" => Ok(Task::Heartsound),
            other => Err(Error::InvalidArgument(format!("unknown task `{other}`"))),
        }
    }
}

/// The four heart-sound states, in cardiac-cycle order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum HeartState {
    S1 = 0,
    Systole = 1,
    S2 = 2,
    Diastole = 3,
}

impl HeartState {
    pub const NAMES: [&'static str; 4] = ["S1", "systole", "S2", "diastole"];
    pub const ALL: [HeartState; 4] = [
        HeartState::S1,
        HeartState::Systole,
        HeartState::S2,
        HeartState::Diastole,
    ];

    pub fn name(self) -> &'static str {
        Self::NAMES[self as usize]
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::NAMES
            .iter()
            .position(|n| *n == name)
            .map(|i| Self::ALL[i])
    }

    pub fn next(self) -> Self {
        Self::ALL[(self as usize + 1) % 4]
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub sample_index: usize,
    pub label: String,
}

impl Annotation {
    pub fn new(sample_index: usize, label: impl Into<String>) -> Self {
        Self {
            sample_index,
            label: label.into(),
        }
    }
}

/// One single-channel sampled signal with its annotations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalRecord {
    pub id: String,
    pub task: Task,
    pub fs_hz: f64,
    pub samples: Vec<f32>,
    pub annotations: Vec<Annotation>,
}

impl SignalRecord {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.fs_hz
    }

    pub fn samples_f64(&self) -> Vec<f64> {
        self.samples.iter().map(|&v| v as f64).collect()
    }

    /// Checks every record invariant.
    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() || self.id.contains(['/', '\\']) {
            return Err(Error::InvalidRecord {
                field: "id",
                detail: format!("`{}` is not a usable file stem", self.id),
            });
        }
        if !(self.fs_hz > 0.0 && self.fs_hz.is_finite()) {
            return Err(Error::InvalidRecord {
                field: "fs_hz",
                detail: format!("{} must be positive", self.fs_hz),
            });
        }
        if let Some(i) = self.samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidRecord {
                field: "samples",
                detail: format!("non-finite value at index {i}"),
            });
        }
        let n = self.samples.len();
        let allowed = self.task.allowed_labels();
        let mut prev: Option<usize> = None;
        for a in &self.annotations {
            if a.sample_index >= n {
                return Err(Error::AnnotationOutOfRange(format!(
                    "index {} not in [0, {n})",
                    a.sample_index
                )));
            }
            if let Some(p) = prev {
                if a.sample_index <= p {
                    return Err(Error::InvalidRecord {
                        field: "annotations",
                        detail: format!(
                            "indices not strictly increasing ({p} then {})",
                            a.sample_index
                        ),
                    });
                }
            }
            prev = Some(a.sample_index);
            if !allowed.contains(&a.label.as_str()) {
                return Err(Error::InvalidRecord {
                    field: "annotations",
                    detail: format!("label `{}` not valid for task {}", a.label, self.task),
                });
            }
        }
        if self.task == Task::Heartsound && !self.annotations.is_empty() {
            if self.annotations[0].sample_index != 0 {
                return Err(Error::InvalidRecord {
                    field: "annotations",
                    detail: "heart-sound segments must start at sample 0".into(),
                });
            }
            for w in self.annotations.windows(2) {
                let a = HeartState::from_name(&w[0].label).expect("validated above");
                let b = HeartState::from_name(&w[1].label).expect("validated above");
                if a.next() != b {
                    return Err(Error::InvalidRecord {
                        field: "annotations",
                        detail: format!(
                            "state {} at {} is not followed by {}",
                            a.name(),
                            w[0].sample_index,
                            a.next().name()
                        ),
                    });
                }
            }
        }
        Ok(())
    }
}

/// A fixed-length window with per-frame labels at latent resolution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub task: Task,
    pub signal: Vec<f64>,
    pub frame_labels: Vec<u8>,
    pub frame_len_samples: usize,
    pub source_id: String,
    pub offset_samples: usize,
}

impl Episode {
    pub fn frames(&self) -> usize {
        self.frame_labels.len()
    }
}

/// Cuts a record into consecutive non-overlapping episodes and labels them.
///
/// The trailing remainder shorter than one episode is dropped. Sample values
/// are copied as-is; any preprocessing happens before this call.
pub fn slice_episodes(record: &SignalRecord, episode_seconds: f64) -> Result<Vec<Episode>> {
    slice_episodes_with(record, episode_seconds, QRS_HALF_WIDTH_MS)
}

pub fn slice_episodes_with(
    record: &SignalRecord,
    episode_seconds: f64,
    qrs_half_width_ms: f64,
) -> Result<Vec<Episode>> {
    if !(episode_seconds > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "episode length {episode_seconds} s must be positive"
        )));
    }
    let len = (episode_seconds * record.fs_hz).round() as usize;
    let frame_len = record.task.frame_len();
    if len == 0 || len % frame_len != 0 {
        return Err(Error::InvalidArgument(format!(
            "episode of {len} samples is not a multiple of the {frame_len}-sample frame"
        )));
    }
    let count = record.samples.len() / len;
    (0..count)
        .map(|k| {
            let start = k * len;
            let window = start..start + len;
            let frame_labels = labelize(
                window.clone(),
                &record.annotations,
                record.task,
                record.fs_hz,
                frame_len,
                qrs_half_width_ms,
            )?;
            Ok(Episode {
                task: record.task,
                signal: record.samples[window].iter().map(|&v| v as f64).collect(),
                frame_labels,
                frame_len_samples: frame_len,
                source_id: record.id.clone(),
                offset_samples: start,
            })
        })
        .collect()
}

/// Derives one label per frame of `window` from point or segment annotations.
///
/// Frame `f` has center `start + f·frame_len + (frame_len − 1)/2`. For QRS a
/// frame is 1 iff its center lies within `qrs_half_width_ms` of a beat; for
/// heart sound it takes the state of the segment containing its center.
pub fn labelize(
    window: Range<usize>,
    annotations: &[Annotation],
    task: Task,
    fs_hz: f64,
    frame_len: usize,
    qrs_half_width_ms: f64,
) -> Result<Vec<u8>> {
    if frame_len == 0 || window.len() % frame_len != 0 {
        return Err(Error::InvalidArgument(format!(
            "window of {} samples is not a whole number of {frame_len}-sample frames",
            window.len()
        )));
    }
    let frames = window.len() / frame_len;
    let center = |f: usize| window.start as f64 + (f * frame_len) as f64 + (frame_len as f64 - 1.0) / 2.0;
    match task {
        Task::Qrs => {
            let half = qrs_half_width_ms * fs_hz / 1000.0;
            let beats: Vec<f64> = annotations
                .iter()
                .map(|a| a.sample_index as f64)
                .filter(|&b| b >= window.start as f64 - half - frame_len as f64 && b <= window.end as f64 + half + frame_len as f64)
                .collect();
            Ok((0..frames)
                .map(|f| {
                    let c = center(f);
                    u8::from(beats.iter().any(|&b| (c - b).abs() <= half))
                })
                .collect())
        }
        Task::Heartsound => {
            let covered = annotations
                .first()
                .is_some_and(|a| a.sample_index <= window.start);
            if !covered {
                return Err(Error::InvalidArgument(format!(
                    "window starting at {} is not covered by heart-sound segments",
                    window.start
                )));
            }
            let mut labels = Vec::with_capacity(frames);
            let mut seg = 0usize;
            for f in 0..frames {
                let c = center(f);
                while seg + 1 < annotations.len() && annotations[seg + 1].sample_index as f64 <= c {
                    seg += 1;
                }
                let state = HeartState::from_name(&annotations[seg].label).ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "`{}` is not a heart-sound state",
                        annotations[seg].label
                    ))
                })?;
                labels.push(state as u8);
            }
            Ok(labels)
        }
    }
}
