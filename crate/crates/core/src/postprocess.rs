//! Frame probabilities to events: QRS beat locations and heart-sound onsets.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{argmax, FrameProbs};
use crate::records::{Annotation, HeartState};

pub const QRS_THRESHOLD: f64 = 0.5;
pub const REFRACTORY_MS: f64 = 200.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time_ms: f64,
    pub label: String,
}

/// Events in strictly increasing time order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EventList {
    pub events: Vec<Event>,
}

impl EventList {
    pub fn new(events: Vec<Event>) -> Result<Self> {
        if let Some(w) = events.windows(2).find(|w| !(w[1].time_ms > w[0].time_ms)) {
            return Err(Error::Unsorted(format!(
                "{} ms followed by {} ms",
                w[0].time_ms, w[1].time_ms
            )));
        }
        Ok(Self { events })
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.events.iter().map(|e| e.time_ms).collect()
    }

    /// Shifts every event by `offset_ms`.
    pub fn shifted(&self, offset_ms: f64) -> Self {
        Self {
            events: self
                .events
                .iter()
                .map(|e| Event {
                    time_ms: e.time_ms + offset_ms,
                    label: e.label.clone(),
                })
                .collect(),
        }
    }

    /// Annotations at `fs_hz` (times rounded to the nearest sample; events
    /// collapsing onto an earlier sample are dropped).
    pub fn to_annotations(&self, fs_hz: f64) -> Vec<Annotation> {
        let mut out: Vec<Annotation> = Vec::with_capacity(self.events.len());
        for e in &self.events {
            let idx = (e.time_ms * fs_hz / 1000.0).round().max(0.0) as usize;
            if out.last().is_none_or(|a| a.sample_index < idx) {
                out.push(Annotation::new(idx, e.label.clone()));
            }
        }
        out
    }

    /// `.ann` text: one `sample_index<TAB>label` line per event.
    pub fn to_ann(&self, fs_hz: f64) -> String {
        let mut s = String::new();
        for a in self.to_annotations(fs_hz) {
            let _ = writeln!(s, "{}\t{}", a.sample_index, a.label);
        }
        s
    }
}

/// Runs of consecutive frames with `p > threshold`, as `[start, end)`.
pub fn candidate_runs(p: &[f64], threshold: f64) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut start = None;
    for (t, &v) in p.iter().enumerate() {
        match (v > threshold, start) {
            (true, None) => start = Some(t),
            (false, Some(s)) => {
                runs.push((s, t));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        runs.push((s, p.len()));
    }
    runs
}

/// Beat locations from single-class frame probabilities.
pub fn qrs_decisions(probs: &FrameProbs, frame_ms: f64) -> EventList {
    qrs_decisions_with(probs, frame_ms, QRS_THRESHOLD, REFRACTORY_MS)
}

/// Each run above `threshold` yields a beat at its probability-weighted
/// centroid (frame index × `frame_ms`). While two beats are closer than
/// `refractory_ms`, the closest pair loses its member with the smaller
/// summed probability (the later one on ties).
pub fn qrs_decisions_with(probs: &FrameProbs, frame_ms: f64, threshold: f64, refractory_ms: f64) -> EventList {
    let p: Vec<f64> = (0..probs.frames).map(|t| probs.row(t)[0]).collect();
    let mut beats: Vec<(f64, f64)> = candidate_runs(&p, threshold)
        .into_iter()
        .map(|(s, e)| {
            let mass: f64 = p[s..e].iter().sum();
            let centroid = (s..e).map(|t| t as f64 * p[t]).sum::<f64>() / mass;
            (centroid * frame_ms, mass)
        })
        .collect();
    loop {
        let closest = beats
            .windows(2)
            .enumerate()
            .map(|(i, w)| (i, w[1].0 - w[0].0))
            .filter(|&(_, gap)| gap < refractory_ms)
            .min_by(|a, b| a.1.total_cmp(&b.1));
        let Some((i, _)) = closest else { break };
        let drop = if beats[i].1 < beats[i + 1].1 { i } else { i + 1 };
        beats.remove(drop);
    }
    EventList {
        events: beats
            .into_iter()
            .map(|(time_ms, _)| Event {
                time_ms,
                label: "beat".into(),
            })
            .collect(),
    }
}

/// Heart-sound state onsets: an event at frame 0 and wherever the per-frame
/// argmax state changes.
pub fn hs_onsets(probs: &FrameProbs, frame_ms: f64) -> EventList {
    let mut events = Vec::new();
    let mut prev = None;
    for t in 0..probs.frames {
        let s = argmax(probs.row(t));
        if prev != Some(s) {
            events.push(Event {
                time_ms: t as f64 * frame_ms,
                label: HeartState::NAMES[s.min(3)].into(),
            });
            prev = Some(s);
        }
    }
    EventList { events }
}

/// Inverse of [`hs_onsets`]: per-frame state indices over `frames` frames.
pub fn reconstruct_states(onsets: &EventList, frames: usize, frame_ms: f64) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(frames);
    let mut k = 0;
    for t in 0..frames {
        let time = t as f64 * frame_ms;
        while k + 1 < onsets.events.len() && onsets.events[k + 1].time_ms <= time + 1e-9 {
            k += 1;
        }
        let e = onsets
            .events
            .get(k)
            .ok_or_else(|| Error::InvalidArgument("no onsets to reconstruct from".into()))?;
        let state = HeartState::from_name(&e.label)
            .ok_or_else(|| Error::InvalidArgument(format!("`{}` is not a heart-sound state", e.label)))?;
        out.push(state as u8);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binary(p: Vec<f64>) -> FrameProbs {
        FrameProbs {
            frames: p.len(),
            values: p,
            classes: 1,
        }
    }

    fn onehot(states: &[usize]) -> FrameProbs {
        let mut values = vec![0.0; states.len() * 4];
        for (t, &s) in states.iter().enumerate() {
            values[t * 4 + s] = 1.0;
        }
        FrameProbs {
            values,
            frames: states.len(),
            classes: 4,
        }
    }

    #[test]
    fn below_threshold_is_empty() {
        assert!(qrs_decisions(&binary(vec![0.5; 100]), 16.0).is_empty());
    }

    #[test]
    fn rectangular_bumps() {
        let mut p = vec![0.1; 625];
        for t in 97..=103 {
            p[t] = 0.9;
        }
        for t in 297..=303 {
            p[t] = 0.9;
        }
        let ev = qrs_decisions(&binary(p), 16.0);
        let t = ev.times();
        assert_eq!(t.len(), 2);
        assert!((t[0] - 1600.0).abs() < 1e-9 && (t[1] - 4800.0).abs() < 1e-9);
    }

    #[test]
    fn close_bumps_suppressed() {
        let mut p = vec![0.0; 100];
        p[10] = 0.9;
        p[11] = 0.9;
        p[19] = 0.8;
        let ev = qrs_decisions(&binary(p), 16.0);
        assert_eq!(ev.len(), 1);
        assert!((ev.events[0].time_ms - 10.5 * 16.0).abs() < 1e-9);
    }

    #[test]
    fn onsets_at_transitions() {
        let ev = hs_onsets(&onehot(&[0, 0, 1, 1, 2, 3]), 20.0);
        assert_eq!(ev.times(), vec![0.0, 40.0, 80.0, 100.0]);
        let labels: Vec<&str> = ev.events.iter().map(|e| e.label.as_str()).collect();
        assert_eq!(labels, ["S1", "systole", "S2", "diastole"]);
        assert_eq!(reconstruct_states(&ev, 6, 20.0).unwrap(), vec![0, 0, 1, 1, 2, 3]);
        assert_eq!(hs_onsets(&onehot(&[2; 9]), 20.0).len(), 1);
    }

    #[test]
    fn ann_serialization() {
        let ev = EventList::new(vec![
            Event { time_ms: 1000.0, label: "beat".into() },
            Event { time_ms: 1802.0, label: "beat".into() },
        ])
        .unwrap();
        assert_eq!(ev.to_ann(250.0), "250\tbeat\n451\tbeat\n");
        assert!(EventList::new(vec![ev.events[1].clone(), ev.events[0].clone()]).is_err());
    }
}
