//! `cci` command line.

use std::fs;
use std::io::{BufRead, BufReader, Write as _};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;

use crate::dsp::{NoiseKind, NoiseSpec};
use crate::error::{Error, Result};
use crate::eval::{evaluate_records, reports_csv, reports_table, EvalConfig};
use crate::intervene::InterventionKind;
use crate::latentviz::{state_densities, write_densities, VizConfig};
use crate::nn::{load_checkpoint, save_checkpoint, CheckpointManifest, Model};
use crate::nst::{run_noise_stress, write_nst_outputs, NstConfig, NstTable};
use crate::preprocess::{preprocess_records, PreprocessConfig};
use crate::records::{list_records, load_record, save_record, synth_ecg, synth_pcg, Episode, SignalRecord, SynthConfig, Task};
use crate::train::{cross_validate, train, TrainConfig, TrainMode};

#[derive(Debug, Parser)]
#[command(name = "cci", version, about = "Quasi-periodic signal segmentation with contrastive causal intervention")]
struct Cli {
    /// Seed for every random stream (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON configuration for the subcommand.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic records.
    Synth {
        #[arg(long, value_enum)]
        task: TaskArg,
        #[arg(long)]
        n: usize,
        /// Record length in seconds.
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        fs: Option<f64>,
    },
    /// Run the task pipeline and write `episodes.jsonl`.
    Preprocess {
        #[arg(long)]
        records: PathBuf,
    },
    /// Train a model (or one per fold).
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long, value_enum)]
        attr: Option<AttrArg>,
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Train one model on every episode instead of cross-validating.
        #[arg(long)]
        single: bool,
    },
    /// Evaluate a checkpoint on records.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        records: PathBuf,
    },
    /// Noise stress over an SNR grid.
    Nst {
        /// Checkpoints; grouped into series by their training mode.
        #[arg(long, required = true, num_args = 1..)]
        checkpoint: Vec<PathBuf>,
        #[arg(long)]
        records: PathBuf,
        #[arg(long, num_args = 1.., default_values_t = vec!["gaussian_inband".to_string()])]
        noise: Vec<String>,
        /// Record supplying recorded noise (required for non-Gaussian kinds).
        #[arg(long)]
        noise_source: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 5.0, 10.0, 15.0, 20.0, 25.0])]
        snr: Vec<f64>,
        /// Band of the in-band Gaussian noise, `LO,HI` in Hz.
        #[arg(long, value_delimiter = ',', num_args = 2)]
        band: Option<Vec<f64>>,
    },
    /// Latent density maps per state.
    Viz {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
    },
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
struct DataArgs {
    /// Directory of raw records.
    #[arg(long)]
    records: Option<PathBuf>,
    /// `episodes.jsonl` written by `preprocess`.
    #[arg(long)]
    episodes: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TaskArg {
    Qrs,
    Heartsound,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Qrs => Task::Qrs,
            TaskArg::Heartsound => Task::Heartsound,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Baseline,
    Cci,
    Augment,
}

impl From<ModeArg> for TrainMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Baseline => TrainMode::Baseline,
            ModeArg::Cci => TrainMode::Cci,
            ModeArg::Augment => TrainMode::Augment,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AttrArg {
    Am,
    Ar,
    Both,
}

impl AttrArg {
    fn kinds(self) -> Vec<InterventionKind> {
        match self {
            AttrArg::Am => vec![InterventionKind::InvertMorph],
            AttrArg::Ar => vec![InterventionKind::ZeroRhythm],
            AttrArg::Both => InterventionKind::ALL.to_vec(),
        }
    }
}

/// Parses `argv` (program name first) and runs the subcommand. Returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        what: "config",
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

fn load_records_dir(dir: &Path) -> Result<Vec<SignalRecord>> {
    let paths = list_records(dir)?;
    if paths.is_empty() {
        return Err(Error::NoRecords);
    }
    paths.iter().map(load_record).collect()
}

pub fn write_episodes(path: &Path, episodes: &[Episode]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for ep in episodes {
        let line = serde_json::to_string(ep).expect("episode serializes");
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
    }
    f.flush().map_err(|e| Error::io(path, e))
}

pub fn read_episodes(path: &Path) -> Result<Vec<Episode>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            what: "episode",
            path: path.to_path_buf(),
            detail: format!("line {}: {e}", i + 1),
        })?);
    }
    Ok(out)
}

fn load_episodes(data: &DataArgs, pre: &PreprocessConfig) -> Result<Vec<Episode>> {
    match (&data.records, &data.episodes) {
        (Some(dir), _) => preprocess_records(&load_records_dir(dir)?, pre),
        (None, Some(path)) => read_episodes(path),
        (None, None) => Err(Error::InvalidArgument("pass --records or --episodes".into())),
    }
}

fn create_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Default band for in-band Gaussian noise.
fn default_band(task: Task) -> (f64, f64) {
    match task {
        Task::Qrs => (0.5, 50.0),
        Task::Heartsound => (25.0, 400.0),
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let out = cli.out.as_path();
    let config = cli.config.as_deref();
    match cli.command {
        Command::Synth { task, n, duration, fs } => {
            let task = Task::from(task);
            let mut cfg: SynthConfig = match config {
                Some(_) => read_config(config)?,
                None if task == Task::Heartsound => SynthConfig::pcg(),
                None => SynthConfig::ecg(),
            };
            if let Some(d) = duration {
                cfg.duration_s = d;
            }
            if let Some(f) = fs {
                cfg.fs_hz = f;
            }
            let seed = cli.seed.unwrap_or(0);
            create_out(out)?;
            for i in 0..n {
                let rcfg = SynthConfig {
                    id: format!("{task}_{i:04}"),
                    ..cfg.clone()
                };
                let s = seed.wrapping_add(i as u64);
                let rec = match task {
                    Task::Qrs => synth_ecg(&rcfg, s)?,
                    Task::Heartsound => synth_pcg(&rcfg, s)?,
                };
                save_record(&rec, out)?;
            }
            println!("wrote {n} records to {}", out.display());
        }
        Command::Preprocess { records } => {
            let ecfg: EvalConfig = read_config(config)?;
            let eps = preprocess_records(&load_records_dir(&records)?, &ecfg.preprocess)?;
            create_out(out)?;
            let path = out.join("episodes.jsonl");
            write_episodes(&path, &eps)?;
            println!("wrote {} episodes to {}", eps.len(), path.display());
        }
        Command::Train {
            data,
            mode,
            attr,
            folds,
            epochs,
            single,
        } => {
            let mut cfg: TrainConfig = read_config(config)?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            if let Some(m) = mode {
                cfg.mode = m.into();
            }
            if let Some(a) = attr {
                cfg.intervention_kinds = a.kinds();
            }
            if let Some(k) = folds {
                cfg.folds = k;
            }
            if let Some(e) = epochs {
                cfg.epochs_max = e;
            }
            let eps = load_episodes(&data, &PreprocessConfig::default())?;
            create_out(out)?;
            let json = cfg.to_json();
            write_file(&out.join("train_config.json"), &json)?;
            if single {
                let (model, history) = train(&cfg, &eps, &[])?;
                let manifest = CheckpointManifest::for_model(&model, cfg.seed, &json, cfg.mode.name());
                save_checkpoint(out.join("model.safetensors"), &model, &manifest)?;
                history.write_csv(out.join("history.csv"))?;
                println!("trained {} epochs; best epoch {:?}", history.epochs.len(), history.best_epoch);
            } else {
                let outcomes = cross_validate(&cfg, &eps, Some(out))?;
                for o in &outcomes {
                    println!("fold {}: best epoch {:?}", o.fold, o.history.best_epoch);
                }
            }
        }
        Command::Eval { checkpoint, records } => {
            let ecfg: EvalConfig = read_config(config)?;
            let (model, _) = load_checkpoint(&checkpoint)?;
            let recs = load_records_dir(&records)?;
            let outcome = evaluate_records(&model, &recs, model.task, &ecfg)?;
            let mut reports = outcome.per_record.clone();
            reports.push(outcome.aggregate.clone());
            create_out(out)?;
            write_file(&out.join("metrics.csv"), &reports_csv(&reports))?;
            print!("{}", reports_table(&reports));
        }
        Command::Nst {
            checkpoint,
            records,
            noise,
            noise_source,
            snr,
            band,
        } => {
            let eval: EvalConfig = read_config(config)?;
            let ncfg = NstConfig {
                eval,
                seed: cli.seed.unwrap_or(0),
            };
            let mut groups: Vec<(String, Vec<Model>)> = Vec::new();
            for path in &checkpoint {
                let (model, manifest) = load_checkpoint(path)?;
                match groups.iter_mut().find(|(m, _)| *m == manifest.mode) {
                    Some((_, models)) => models.push(model),
                    None => groups.push((manifest.mode, vec![model])),
                }
            }
            let task = groups[0].1[0].task;
            let recs = load_records_dir(&records)?;
            let source = noise_source.as_deref().map(load_record).transpose()?;
            let band = match band.as_deref() {
                Some([lo, hi]) => (*lo, *hi),
                _ => default_band(task),
            };
            let specs = noise
                .iter()
                .map(|n| {
                    let kind = NoiseKind::parse(n)?;
                    Ok(if kind.is_recorded() {
                        let src = source.clone().ok_or_else(|| {
                            Error::InvalidArgument(format!("noise kind {} requires --noise-source", kind.name()))
                        })?;
                        NoiseSpec::recorded(kind, src, 0.0, 0)
                    } else {
                        NoiseSpec::gaussian_inband(band.0, band.1, 0.0, 0)
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let tables = groups
                .iter()
                .map(|(mode, models)| Ok((mode.clone(), run_noise_stress(models, &recs, &specs, &snr, &ncfg)?)))
                .collect::<Result<Vec<(String, NstTable)>>>()?;
            write_nst_outputs(out, &tables)?;
            for (mode, t) in &tables {
                println!("[{mode}]");
                print!("{}", t.to_csv());
            }
        }
        Command::Viz { checkpoint, data } => {
            let vcfg = VizConfig {
                seed: cli.seed.unwrap_or(0),
                ..read_config(config)?
            };
            let (model, _) = load_checkpoint(&checkpoint)?;
            let eps = load_episodes(&data, &PreprocessConfig::default())?;
            let densities = state_densities(&model, &eps, &vcfg)?;
            write_densities(out, &densities)?;
            for d in &densities {
                println!("{}: {} points ({} dropped)", d.state, d.n_points, d.dropped);
            }
        }
    }
    Ok(())
}
