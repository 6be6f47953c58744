//! Noise stress: contaminate raw records over a grid of noise kinds and SNRs,
//! evaluate every model, and summarize Er as mean ± std across models.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsp::{mix_at_snr, NoiseSpec};
use crate::error::{Error, Result};
use crate::eval::{evaluate_records, fmt2, EvalConfig};
use crate::nn::Model;
use crate::plot::{line_plot_svg, Series};
use crate::records::{SignalRecord, Task};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NstRow {
    /// `clean` for the uncontaminated control row.
    pub noise_kind: String,
    pub snr_db: Option<f64>,
    pub er_mean: Option<f64>,
    pub er_std: Option<f64>,
    pub n_models: usize,
    /// Er of each model, in model order.
    pub er_per_model: Vec<Option<f64>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NstTable {
    pub rows: Vec<NstRow>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NstConfig {
    pub eval: EvalConfig,
    /// Base seed for noise realizations.
    pub seed: u64,
}

/// Mean and sample standard deviation of the defined values.
pub fn mean_std(values: &[Option<f64>]) -> (Option<f64>, Option<f64>) {
    let v: Vec<f64> = values.iter().flatten().copied().collect();
    if v.is_empty() {
        return (None, None);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let s = (v.len() > 1).then(|| (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)).sqrt());
    (Some(m), s)
}

/// Seed of the noise realization for one record; shared across SNR levels
/// so only the mixing scale changes along the grid.
pub fn noise_seed(base: u64, spec_seed: u64, record_index: usize) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(spec_seed.wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add(record_index as u64)
}

/// Adds `spec` noise to every record at `snr_db` (global mixing per record).
pub fn contaminate(records: &[SignalRecord], spec: &NoiseSpec, snr_db: f64, base_seed: u64) -> Result<Vec<SignalRecord>> {
    spec.validate()?;
    records
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            let x = r.samples_f64();
            let noise = spec.generate(r.fs_hz, x.len(), noise_seed(base_seed, spec.seed, i))?;
            let y = mix_at_snr(&x, &noise, snr_db)?;
            Ok(SignalRecord {
                samples: y.iter().map(|&v| v as f32).collect(),
                ..r.clone()
            })
        })
        .collect()
}

fn row(models: &[Model], records: &[SignalRecord], task: Task, cfg: &EvalConfig, kind: &str, snr: Option<f64>) -> Result<NstRow> {
    let er_per_model = models
        .iter()
        .map(|m| Ok(evaluate_records(m, records, task, cfg)?.aggregate.er))
        .collect::<Result<Vec<_>>>()?;
    let (er_mean, er_std) = mean_std(&er_per_model);
    Ok(NstRow {
        noise_kind: kind.into(),
        snr_db: snr,
        er_mean,
        er_std,
        n_models: models.len(),
        er_per_model,
    })
}

/// A clean control row, then one row per (noise spec, SNR) in grid order.
pub fn run_noise_stress(
    models: &[Model],
    records: &[SignalRecord],
    noise_specs: &[NoiseSpec],
    snr_grid_db: &[f64],
    cfg: &NstConfig,
) -> Result<NstTable> {
    if models.is_empty() {
        return Err(Error::InvalidArgument("noise stress needs at least one model".into()));
    }
    let task = records.first().ok_or(Error::NoRecords)?.task;
    for spec in noise_specs {
        spec.validate()?;
    }
    let mut rows = vec![row(models, records, task, &cfg.eval, "clean", None)?];
    for spec in noise_specs {
        for &snr in snr_grid_db {
            let noisy = contaminate(records, spec, snr, cfg.seed)?;
            rows.push(row(models, &noisy, task, &cfg.eval, spec.kind.name(), Some(snr))?);
        }
    }
    Ok(NstTable { rows })
}

impl NstTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("noise_kind,snr_db,er_mean,er_std,n_models\n");
        for r in &self.rows {
            let snr = r.snr_db.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(s, "{},{},{},{},{}", r.noise_kind, snr, fmt2(r.er_mean), fmt2(r.er_std), r.n_models);
        }
        s
    }

    /// Rows of one noise kind with a defined mean, sorted by SNR.
    pub fn curve(&self, kind: &str) -> Vec<(f64, f64, Option<f64>)> {
        let mut pts: Vec<(f64, f64, Option<f64>)> = self
            .rows
            .iter()
            .filter(|r| r.noise_kind == kind)
            .filter_map(|r| Some((r.snr_db?, r.er_mean?, r.er_std)))
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        pts
    }

    pub fn noise_kinds(&self) -> Vec<String> {
        let mut kinds: Vec<String> = Vec::new();
        for r in self.rows.iter().filter(|r| r.snr_db.is_some()) {
            if !kinds.contains(&r.noise_kind) {
                kinds.push(r.noise_kind.clone());
            }
        }
        kinds
    }

    pub fn row(&self, kind: &str, snr_db: f64) -> Option<&NstRow> {
        self.rows.iter().find(|r| r.noise_kind == kind && r.snr_db == Some(snr_db))
    }
}

/// Er-vs-SNR plot for one noise kind, one series per labeled table.
pub fn nst_plot_svg(kind: &str, tables: &[(String, NstTable)]) -> String {
    let series: Vec<Series> = tables
        .iter()
        .map(|(name, t)| Series {
            name: name.clone(),
            points: t.curve(kind),
        })
        .collect();
    line_plot_svg(&format!("Noise stress: {kind}"), "SNR (dB)", "Er (%)", &series)
}

/// Writes `nst_<label>.csv` per table and `nst_<kind>.svg` per noise kind.
pub fn write_nst_outputs(dir: &Path, tables: &[(String, NstTable)]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut kinds: Vec<String> = Vec::new();
    for (label, table) in tables {
        let path = dir.join(format!("nst_{label}.csv"));
        std::fs::write(&path, table.to_csv()).map_err(|e| Error::io(&path, e))?;
        for k in table.noise_kinds() {
            if !kinds.contains(&k) {
                kinds.push(k);
            }
        }
    }
    for k in kinds {
        let path = dir.join(format!("nst_{k}.svg"));
        std::fs::write(&path, nst_plot_svg(&k, tables)).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
