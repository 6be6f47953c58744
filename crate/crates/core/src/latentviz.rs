//! Latent density maps: pool encoder frames by ground-truth state, project to
//! the unit circle and estimate a planar Gaussian KDE.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Model;
use crate::plot::{contact_sheet, heatmap_image, save_png};
use crate::records::{Episode, Task};

pub const GRID_EXTENT: f64 = 1.2;
pub const DEFAULT_RESOLUTION: usize = 256;
pub const BANDWIDTH_FLOOR: f64 = 1e-3;

/// Pooling interval in milliseconds.
pub fn grouping_interval_ms(task: Task) -> f64 {
    match task {
        Task::Qrs => 16.0,
        Task::Heartsound => 100.0,
    }
}

/// Latent frames per pooled group.
pub fn group_frames(task: Task) -> usize {
    (grouping_interval_ms(task) / task.frame_ms()).round().max(1.0) as usize
}

/// State name → pooled latent vectors. Groups are non-overlapping runs of
/// [`group_frames`] frames, averaged and keyed by their majority label
/// (lowest label on ties); a trailing partial group is dropped.
pub fn collect_state_frames(model: &Model, episodes: &[Episode], task: Task) -> Result<BTreeMap<String, Vec<Vec<f64>>>> {
    model.check_task(task)?;
    let g = group_frames(task);
    let per_episode: Vec<Vec<(u8, Vec<f64>)>> = episodes
        .par_iter()
        .map(|ep| {
            if ep.task != task {
                return Err(Error::TaskMismatch {
                    expected: task.to_string(),
                    found: ep.task.to_string(),
                });
            }
            let z = model.encode(&ep.signal)?;
            if ep.frame_labels.len() != z.frames {
                return Err(Error::InvalidArgument(format!(
                    "episode {}@{} is unlabeled ({} labels for {} frames)",
                    ep.source_id,
                    ep.offset_samples,
                    ep.frame_labels.len(),
                    z.frames
                )));
            }
            let mut out = Vec::with_capacity(z.frames / g);
            for start in (0..z.frames / g).map(|k| k * g) {
                let mut v = vec![0.0; z.dim];
                let mut votes = [0usize; 256];
                for t in start..start + g {
                    for (a, b) in v.iter_mut().zip(z.frame(t)) {
                        *a += b / g as f64;
                    }
                    votes[ep.frame_labels[t] as usize] += 1;
                }
                let label = (0..256).max_by(|&a, &b| votes[a].cmp(&votes[b]).then(b.cmp(&a))).unwrap_or(0) as u8;
                out.push((label, v));
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut map: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
    for (label, v) in per_episode.into_iter().flatten() {
        map.entry(task.label_name(label).to_string()).or_default().push(v);
    }
    Ok(map)
}

/// Principal axes fitted on a set of vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct Pca2 {
    pub mean: Vec<f64>,
    /// Two unit components, largest-magnitude loading positive.
    pub components: [Vec<f64>; 2],
}

impl Pca2 {
    pub fn fit(vectors: &[Vec<f64>]) -> Result<Self> {
        if vectors.len() < 3 {
            return Err(Error::InvalidArgument(format!("PCA needs at least 3 vectors, got {}", vectors.len())));
        }
        let d = vectors[0].len();
        if d < 2 || vectors.iter().any(|v| v.len() != d) {
            return Err(Error::ShapeMismatch("vectors must share a dimension of at least 2".into()));
        }
        let n = vectors.len() as f64;
        let mut mean = vec![0.0; d];
        for v in vectors {
            for (m, x) in mean.iter_mut().zip(v) {
                *m += x / n;
            }
        }
        let centered = DMatrix::from_fn(vectors.len(), d, |i, j| vectors[i][j] - mean[j]);
        let cov = centered.transpose() * &centered / (n - 1.0);
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let component = |k: usize| {
            let mut c: Vec<f64> = eig.eigenvectors.column(order[k]).iter().copied().collect();
            let lead = c.iter().copied().fold(0.0, |acc: f64, x| if x.abs() > acc.abs() { x } else { acc });
            if lead < 0.0 {
                c.iter_mut().for_each(|x| *x = -*x);
            }
            c
        };
        Ok(Self {
            mean,
            components: [component(0), component(1)],
        })
    }

    pub fn transform(&self, v: &[f64]) -> [f64; 2] {
        let mut out = [0.0; 2];
        for (o, c) in out.iter_mut().zip(&self.components) {
            *o = v.iter().zip(&self.mean).zip(c).map(|((x, m), w)| (x - m) * w).sum();
        }
        out
    }
}

/// Points on the unit circle plus the number of inputs dropped because they
/// projected onto the origin.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitProjection {
    pub points: Vec<[f64; 2]>,
    pub dropped: usize,
}

fn normalize_all(pca: &Pca2, vectors: &[Vec<f64>]) -> UnitProjection {
    let mut points = Vec::with_capacity(vectors.len());
    let mut dropped = 0;
    for v in vectors {
        let [a, b] = pca.transform(v);
        let r = a.hypot(b);
        if r > 1e-12 {
            points.push([a / r, b / r]);
        } else {
            dropped += 1;
        }
    }
    UnitProjection { points, dropped }
}

pub fn project_unit_2d(vectors: &[Vec<f64>]) -> Result<UnitProjection> {
    let pca = Pca2::fit(vectors)?;
    Ok(normalize_all(&pca, vectors))
}

/// Gaussian product-kernel density on a square grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityMap {
    pub resolution: usize,
    pub extent: f64,
    pub bandwidth: [f64; 2],
    /// `resolution × resolution`, row = y index, column = x index.
    pub density: Vec<f64>,
}

impl DensityMap {
    pub fn axis(&self) -> Vec<f64> {
        linspace(-self.extent, self.extent, self.resolution)
    }

    pub fn cell_area(&self) -> f64 {
        let step = 2.0 * self.extent / (self.resolution - 1) as f64;
        step * step
    }

    /// Riemann sum over the grid.
    pub fn mass(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.cell_area()
    }

    /// Long format `x,y,density`.
    pub fn to_csv(&self) -> String {
        let axis = self.axis();
        let mut s = String::from("x,y,density\n");
        for (r, y) in axis.iter().enumerate() {
            for (c, x) in axis.iter().enumerate() {
                let _ = writeln!(s, "{x:.6},{y:.6},{:.6e}", self.density[r * self.resolution + c]);
            }
        }
        s
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Scott's-rule bandwidths `n^(-1/6) σ_j` (sample std), floored.
pub fn scott_bandwidth(points: &[[f64; 2]]) -> Result<[f64; 2]> {
    if points.len() < 2 {
        return Err(Error::InvalidArgument(format!("KDE needs at least 2 points, got {}", points.len())));
    }
    let n = points.len() as f64;
    let factor = n.powf(-1.0 / 6.0);
    let mut h = [0.0; 2];
    for (j, hj) in h.iter_mut().enumerate() {
        let m = points.iter().map(|p| p[j]).sum::<f64>() / n;
        let var = points.iter().map(|p| (p[j] - m).powi(2)).sum::<f64>() / (n - 1.0);
        *hj = (factor * var.sqrt()).max(BANDWIDTH_FLOOR);
    }
    Ok(h)
}

pub fn kde_scott(points: &[[f64; 2]], resolution: usize) -> Result<DensityMap> {
    if resolution < 2 {
        return Err(Error::InvalidArgument("grid resolution must be at least 2".into()));
    }
    let bandwidth = scott_bandwidth(points)?;
    let axis = linspace(-GRID_EXTENT, GRID_EXTENT, resolution);
    // Separable kernel: density = Ky · Kxᵀ / n.
    let kernel = |j: usize| {
        let h = bandwidth[j];
        let norm = 1.0 / (h * (2.0 * std::f64::consts::PI).sqrt());
        DMatrix::from_fn(resolution, points.len(), |g, i| {
            let u = (axis[g] - points[i][j]) / h;
            norm * (-0.5 * u * u).exp()
        })
    };
    let kx = kernel(0);
    let ky = kernel(1);
    let grid = ky * kx.transpose() / points.len() as f64;
    let density = (0..resolution * resolution)
        .map(|k| grid[(k / resolution, k % resolution)].max(0.0))
        .collect();
    Ok(DensityMap {
        resolution,
        extent: GRID_EXTENT,
        bandwidth,
        density,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VizConfig {
    pub resolution: usize,
    /// Per-state cap on points fed to the KDE (seeded subsample).
    pub max_points: usize,
    pub seed: u64,
}

impl Default for VizConfig {
    fn default() -> Self {
        Self {
            resolution: DEFAULT_RESOLUTION,
            max_points: 4000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StateDensity {
    pub state: String,
    pub n_points: usize,
    pub dropped: usize,
    pub map: DensityMap,
}

/// One PCA over all states pooled, then a KDE per state (states with fewer
/// than 2 points are skipped).
pub fn state_densities(model: &Model, episodes: &[Episode], cfg: &VizConfig) -> Result<Vec<StateDensity>> {
    let frames = collect_state_frames(model, episodes, model.task)?;
    let pooled: Vec<Vec<f64>> = frames.values().flatten().cloned().collect();
    let pca = Pca2::fit(&pooled)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::new();
    for (state, vectors) in &frames {
        let proj = normalize_all(&pca, vectors);
        let mut points = proj.points;
        if cfg.max_points > 0 && points.len() > cfg.max_points {
            let mut idx = sample(&mut rng, points.len(), cfg.max_points).into_vec();
            idx.sort_unstable();
            points = idx.into_iter().map(|i| points[i]).collect();
        }
        if points.len() < 2 {
            continue;
        }
        out.push(StateDensity {
            state: state.clone(),
            n_points: points.len(),
            dropped: proj.dropped,
            map: kde_scott(&points, cfg.resolution)?,
        });
    }
    Ok(out)
}

/// `density_<state>.csv` and `.png` per state plus `density_sheet.png`.
pub fn write_densities(dir: &Path, densities: &[StateDensity]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut images = Vec::new();
    for d in densities {
        let csv = dir.join(format!("density_{}.csv", d.state));
        std::fs::write(&csv, d.map.to_csv()).map_err(|e| Error::io(&csv, e))?;
        let img = heatmap_image(&d.map.density, d.map.resolution, d.map.resolution);
        save_png(&img, dir.join(format!("density_{}.png", d.state)))?;
        images.push(img);
    }
    save_png(&contact_sheet(&images, 8), dir.join("density_sheet.png"))
}
