//! Grace-period event matching and Se / P+ / Er / F1 metrics.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Model;
use crate::postprocess::{hs_onsets, qrs_decisions_with, Event, EventList, QRS_THRESHOLD, REFRACTORY_MS};
use crate::preprocess::{preprocess_record_annotated, PreprocessConfig};
use crate::records::{Annotation, Episode, SignalRecord, Task};

/// Matched / unmatched event counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Counts {
    pub fn add(self, o: Counts) -> Counts {
        Counts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    /// Percentages; `None` when the denominator is zero.
    pub se: Option<f64>,
    pub ppr: Option<f64>,
    pub er: Option<f64>,
    pub f1: Option<f64>,
    pub grace_ms: f64,
    pub scope: String,
}

fn pct(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| 100.0 * num as f64 / den as f64)
}

pub fn metrics_from_counts(tp: u64, fp: u64, fn_: u64, grace_ms: f64) -> MetricsReport {
    let se = pct(tp, tp + fn_);
    let ppr = pct(tp, tp + fp);
    let f1 = match (se, ppr) {
        (Some(s), Some(p)) if s + p > 0.0 => Some(2.0 * s * p / (s + p)),
        _ => None,
    };
    MetricsReport {
        tp,
        fp,
        fn_,
        se,
        ppr,
        er: pct(fp + fn_, tp + fp + fn_),
        f1,
        grace_ms,
        scope: String::new(),
    }
}

impl MetricsReport {
    pub fn from_counts(c: Counts, grace_ms: f64, scope: impl Into<String>) -> Self {
        Self {
            scope: scope.into(),
            ..metrics_from_counts(c.tp, c.fp, c.fn_, grace_ms)
        }
    }

    pub fn counts(&self) -> Counts {
        Counts {
            tp: self.tp,
            fp: self.fp,
            fn_: self.fn_,
        }
    }
}

/// Two decimals, or empty when undefined.
pub fn fmt2(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.2}")).unwrap_or_default()
}

fn check_sorted(events: &[Event], which: &str) -> Result<()> {
    match events.windows(2).find(|w| w[1].time_ms < w[0].time_ms) {
        Some(w) => Err(Error::Unsorted(format!(
            "{which} events: {} ms before {} ms",
            w[1].time_ms, w[0].time_ms
        ))),
        None => Ok(()),
    }
}

/// Greedy in-order matching of sorted times within `grace_ms`.
pub fn match_times(reference: &[f64], pred: &[f64], grace_ms: f64) -> Counts {
    let (mut i, mut j, mut tp) = (0, 0, 0u64);
    while i < reference.len() && j < pred.len() {
        let (r, p) = (reference[i], pred[j]);
        if (r - p).abs() <= grace_ms {
            tp += 1;
            i += 1;
            j += 1;
        } else if p < r {
            j += 1;
        } else {
            i += 1;
        }
    }
    Counts {
        tp,
        fp: pred.len() as u64 - tp,
        fn_: reference.len() as u64 - tp,
    }
}

/// One-to-one matching per label within `grace_ms`.
pub fn match_events(reference: &EventList, pred: &EventList, grace_ms: f64) -> Result<Counts> {
    check_sorted(&reference.events, "reference")?;
    check_sorted(&pred.events, "predicted")?;
    let mut by_label: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for e in &reference.events {
        by_label.entry(&e.label).or_default().0.push(e.time_ms);
    }
    for e in &pred.events {
        by_label.entry(&e.label).or_default().1.push(e.time_ms);
    }
    Ok(by_label
        .values()
        .map(|(r, p)| match_times(r, p, grace_ms))
        .fold(Counts::default(), Counts::add))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub preprocess: PreprocessConfig,
    pub qrs_threshold: f64,
    pub refractory_ms: f64,
    /// Overrides the task's grace period.
    pub grace_ms: Option<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            preprocess: PreprocessConfig::default(),
            qrs_threshold: QRS_THRESHOLD,
            refractory_ms: REFRACTORY_MS,
            grace_ms: None,
        }
    }
}

/// Reference events of one episode, in ms from the episode start. Heart
/// sound includes the state in force at the window start.
pub fn reference_events(ep: &Episode, annotations: &[Annotation], fs_hz: f64) -> EventList {
    let start = ep.offset_samples;
    let end = start + ep.signal.len();
    let to_ms = |idx: usize| (idx - start) as f64 * 1000.0 / fs_hz;
    let mut events = Vec::new();
    match ep.task {
        Task::Qrs => {
            for a in annotations.iter().filter(|a| (start..end).contains(&a.sample_index)) {
                events.push(Event {
                    time_ms: to_ms(a.sample_index),
                    label: a.label.clone(),
                });
            }
        }
        Task::Heartsound => {
            if let Some(first) = annotations.iter().rev().find(|a| a.sample_index <= start) {
                events.push(Event {
                    time_ms: 0.0,
                    label: first.label.clone(),
                });
            }
            for a in annotations.iter().filter(|a| a.sample_index > start && a.sample_index < end) {
                events.push(Event {
                    time_ms: to_ms(a.sample_index),
                    label: a.label.clone(),
                });
            }
        }
    }
    EventList { events }
}

/// Predicted events of one episode, in ms from the episode start.
pub fn predict_events(model: &Model, ep: &Episode, cfg: &EvalConfig) -> Result<EventList> {
    let probs = model.predict(&ep.signal)?;
    let frame_ms = ep.task.frame_ms();
    Ok(match ep.task {
        Task::Qrs => qrs_decisions_with(&probs, frame_ms, cfg.qrs_threshold, cfg.refractory_ms),
        Task::Heartsound => hs_onsets(&probs, frame_ms),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub aggregate: MetricsReport,
    pub per_record: Vec<MetricsReport>,
}

fn evaluate_record(model: &Model, record: &SignalRecord, cfg: &EvalConfig, grace: f64) -> Result<Counts> {
    let (episodes, annotations) = preprocess_record_annotated(record, &cfg.preprocess)?;
    let fs = record.task.target_fs();
    let parts: Vec<Counts> = episodes
        .par_iter()
        .map(|ep| {
            let pred = predict_events(model, ep, cfg)?;
            match_events(&reference_events(ep, &annotations, fs), &pred, grace)
        })
        .collect::<Result<_>>()?;
    Ok(parts.into_iter().fold(Counts::default(), Counts::add))
}

/// Preprocess → encode → decode → postprocess → match, with counts pooled
/// over records before computing ratios.
pub fn evaluate_records(model: &Model, records: &[SignalRecord], task: Task, cfg: &EvalConfig) -> Result<EvalOutcome> {
    if records.is_empty() {
        return Err(Error::NoRecords);
    }
    model.check_task(task)?;
    if let Some(r) = records.iter().find(|r| r.task != task) {
        return Err(Error::TaskMismatch {
            expected: task.to_string(),
            found: r.task.to_string(),
        });
    }
    let grace = cfg.grace_ms.unwrap_or(task.grace_ms());
    let counts: Vec<Counts> = records
        .par_iter()
        .map(|r| evaluate_record(model, r, cfg, grace))
        .collect::<Result<_>>()?;
    let per_record: Vec<MetricsReport> = records
        .iter()
        .zip(&counts)
        .map(|(r, c)| MetricsReport::from_counts(*c, grace, r.id.clone()))
        .collect();
    let total = counts.iter().copied().fold(Counts::default(), Counts::add);
    Ok(EvalOutcome {
        aggregate: MetricsReport::from_counts(total, grace, "all"),
        per_record,
    })
}

pub const CSV_HEADER: &str = "scope,tp,fp,fn,se,ppr,er,f1,grace_ms";

pub fn reports_csv(reports: &[MetricsReport]) -> String {
    let mut s = format!("{CSV_HEADER}\n");
    for r in reports {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.scope,
            r.tp,
            r.fp,
            r.fn_,
            fmt2(r.se),
            fmt2(r.ppr),
            fmt2(r.er),
            fmt2(r.f1),
            r.grace_ms
        );
    }
    s
}

/// Aligned plain-text table.
pub fn reports_table(reports: &[MetricsReport]) -> String {
    let cell = |v: Option<f64>| v.map(|v| format!("{v:.2}")).unwrap_or_else(|| "n/a".into());
    let rows: Vec<[String; 8]> = reports
        .iter()
        .map(|r| {
            [
                r.scope.clone(),
                r.tp.to_string(),
                r.fp.to_string(),
                r.fn_.to_string(),
                cell(r.se),
                cell(r.ppr),
                cell(r.er),
                cell(r.f1),
            ]
        })
        .collect();
    let header = ["scope", "TP", "FP", "FN", "Se", "P+", "Er", "F1"];
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in &rows {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let mut s = String::new();
    let line = |cells: Vec<&str>, s: &mut String| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        let _ = writeln!(s, "{}", parts.join("  ").trim_end());
    };
    line(header.to_vec(), &mut s);
    for row in &rows {
        line(row.iter().map(String::as_str).collect(), &mut s);
    }
    s
}
