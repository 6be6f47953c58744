//! Task pipelines from raw records to labeled episodes.
//!
//! QRS: band-pass 0.5–50 Hz at the native rate, resample to 250 Hz, slice
//! 10 s episodes, then mean removal and standardization per episode.
//! Heart sound: resample to 800 Hz, local Wiener filter, slice 5 s episodes,
//! standardize per episode.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsp;
use crate::error::{Error, Result};
use crate::records::{slice_episodes_with, Annotation, Episode, SignalRecord, Task, QRS_HALF_WIDTH_MS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub qrs_band_hz: (f64, f64),
    /// Odd window of the local Wiener filter, in samples at 800 Hz.
    pub wiener_window: usize,
    pub qrs_half_width_ms: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            qrs_band_hz: (0.5, 50.0),
            wiener_window: 41,
            qrs_half_width_ms: QRS_HALF_WIDTH_MS,
        }
    }
}

/// Filtering and resampling up to (but excluding) slicing.
pub fn condition_signal(task: Task, x: &[f64], fs_hz: f64, cfg: &PreprocessConfig) -> Result<Vec<f64>> {
    match task {
        Task::Qrs => {
            let (lo, hi) = cfg.qrs_band_hz;
            let y = dsp::bandpass(x, fs_hz, lo, hi)?;
            dsp::resample(&y, fs_hz, task.target_fs())
        }
        Task::Heartsound => {
            let y = dsp::resample(x, fs_hz, task.target_fs())?;
            dsp::wiener_local(&y, cfg.wiener_window)
        }
    }
}

/// Maps annotation indices to a new rate, keeping them strictly increasing
/// and below `n_out`.
pub fn rescale_annotations(annotations: &[Annotation], fs_in: f64, fs_out: f64, n_out: usize) -> Vec<Annotation> {
    let mut out: Vec<Annotation> = Vec::with_capacity(annotations.len());
    for a in annotations {
        let idx = ((a.sample_index as f64 * fs_out / fs_in).round() as usize).min(n_out.saturating_sub(1));
        match out.last_mut() {
            Some(last) if last.sample_index >= idx => {
                // Segment boundaries collapsing onto one sample keep the later state.
                if last.sample_index == idx {
                    last.label = a.label.clone();
                }
            }
            _ => out.push(Annotation::new(idx, a.label.clone())),
        }
    }
    out
}

/// Record at the task's target rate, filtered, with rescaled annotations.
pub fn condition_record(record: &SignalRecord, cfg: &PreprocessConfig) -> Result<(Vec<f64>, Vec<Annotation>)> {
    let y = condition_signal(record.task, &record.samples_f64(), record.fs_hz, cfg)?;
    let anns = rescale_annotations(&record.annotations, record.fs_hz, record.task.target_fs(), y.len());
    Ok((y, anns))
}

fn normalize_episode(task: Task, x: &[f64]) -> Result<Vec<f64>> {
    match task {
        Task::Qrs => Ok(dsp::standardize(&dsp::zero_center(x)?)),
        Task::Heartsound => Ok(dsp::standardize(x)),
    }
}

pub fn preprocess_record(record: &SignalRecord) -> Result<Vec<Episode>> {
    preprocess_record_with(record, &PreprocessConfig::default())
}

pub fn preprocess_record_with(record: &SignalRecord, cfg: &PreprocessConfig) -> Result<Vec<Episode>> {
    Ok(preprocess_record_annotated(record, cfg)?.0)
}

/// Episodes plus the record's annotations at the task's target rate.
pub fn preprocess_record_annotated(record: &SignalRecord, cfg: &PreprocessConfig) -> Result<(Vec<Episode>, Vec<Annotation>)> {
    record.validate()?;
    let task = record.task;
    let (y, annotations) = condition_record(record, cfg)?;
    let conditioned = SignalRecord {
        id: record.id.clone(),
        task,
        fs_hz: task.target_fs(),
        samples: y.iter().map(|&v| v as f32).collect(),
        annotations,
    };
    let mut episodes = slice_episodes_with(&conditioned, task.episode_seconds(), cfg.qrs_half_width_ms)?;
    for ep in &mut episodes {
        let window = &y[ep.offset_samples..ep.offset_samples + ep.signal.len()];
        ep.signal = normalize_episode(task, window)?;
    }
    Ok((episodes, conditioned.annotations))
}

/// Preprocesses every record (in parallel) and concatenates the episodes in
/// record order.
pub fn preprocess_records(records: &[SignalRecord], cfg: &PreprocessConfig) -> Result<Vec<Episode>> {
    if records.is_empty() {
        return Err(Error::NoRecords);
    }
    let task = records[0].task;
    if let Some(r) = records.iter().find(|r| r.task != task) {
        return Err(Error::TaskMismatch {
            expected: task.to_string(),
            found: r.task.to_string(),
        });
    }
    let parts: Vec<Vec<Episode>> = records.par_iter().map(|r| preprocess_record_with(r, cfg)).collect::<Result<_>>()?;
    Ok(parts.into_iter().flatten().collect())
}
