//! Command-line front end. Every pipeline stage runs standalone on files.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::baselines::{halrtc_reconstruct, idw_reconstruct, HalrtcConfig, IdwConfig};
use crate::error::{Error, Result};
use crate::experiment::{run_sweep, write_sweep_outputs, ExperimentConfig, SceneRef};
use crate::io::{load_grid, load_samples, save_grid, save_samples, write_grid_csv};
use crate::metrics::{LocatedSource, MetricsReport};
use crate::mmpld::{detect_source_count, MmpldConfig};
use crate::plfit::{fit_pl_params, reconstruct_grid, PlFitConfig, PlFitJson, PlObjective};
use crate::sampler::{draw_samples, SamplingPlan};
use crate::scene::{Point3, Scene, TruthSource};
use crate::sfla::{estimate_parameters, reference_eta, FitnessDomain, SflaConfig, SourceEstimate};
use crate::synthgen::{generate_truth_grid, UrbanPlParams};

#[derive(Debug, Parser)]
#[command(name = "specmap", version, about = "3D spectrum map reconstruction from sparse RSS samples")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a ground-truth grid for a scene.
    Generate(GenerateArgs),
    /// Draw random samples from a grid.
    Sample(SampleArgs),
    /// Count radiation sources in a sample set.
    Detect(DetectArgs),
    /// Estimate source locations and powers.
    Estimate(EstimateArgs),
    /// Learn path-loss parameters from samples and estimated sources.
    Fit(FitArgs),
    /// Build a full grid from a model or a baseline method.
    Reconstruct(ReconstructArgs),
    /// Compare a reconstruction against a truth grid.
    Evaluate(EvaluateArgs),
    /// Run an experiment sweep from a JSON config.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct SceneArg {
    /// Scene JSON file, or `table1:K` for a bundled campus scene.
    #[arg(long)]
    pub scene: String,
}

impl SceneArg {
    pub fn load(&self) -> Result<Scene> {
        let r = match self.scene.strip_prefix("table1:") {
            Some(k) => SceneRef::Table1(k.parse().map_err(|_| Error::invalid(format!("bad scene {}", self.scene)))?),
            None => SceneRef::File(PathBuf::from(&self.scene)),
        };
        Ok(r.load(None)?.1)
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub scene: SceneArg,
    #[arg(long, default_value_t = 2.5)]
    pub a: f64,
    #[arg(long, default_value_t = -0.1, allow_hyphen_values = true)]
    pub b: f64,
    #[arg(long, default_value_t = 4.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Binary grid output.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional CSV copy of the grid.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub grid: PathBuf,
    #[arg(long)]
    pub rate: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Sample CSV output.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional binary grid holding only the observed cells.
    #[arg(long)]
    pub observed: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(long)]
    pub samples: PathBuf,
    #[arg(long, default_value_t = 100.0)]
    pub frequency: f64,
    #[arg(long)]
    pub sigma1: Option<f64>,
    #[arg(long)]
    pub sigma2: Option<f64>,
    #[arg(long)]
    pub k_max: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub samples: PathBuf,
    /// Source count; detected from the samples when omitted.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value_t = 100.0)]
    pub frequency: f64,
    #[arg(long, default_value_t = 2.5)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub population: usize,
    #[arg(long, default_value_t = 20)]
    pub memeplexes: usize,
    #[arg(long, default_value_t = 10)]
    pub local_iters: usize,
    #[arg(long, default_value_t = 500)]
    pub global_iters: usize,
    /// Residuals in dB instead of mW.
    #[arg(long)]
    pub db: bool,
    /// Evaluate fitness on at most this many samples.
    #[arg(long)]
    pub max_fitness_samples: Option<usize>,
    /// JSON output with raw estimates and reference-power sources.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional fitness trace CSV (iteration, best_fitness).
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ObjectiveArg {
    Aggregate,
    SourceSum,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub samples: PathBuf,
    /// Output of `estimate`, or a JSON list of `{position, power_watts}`.
    #[arg(long)]
    pub sources: PathBuf,
    #[arg(long, default_value_t = 100.0)]
    pub frequency: f64,
    #[arg(long, value_enum, default_value_t = ObjectiveArg::Aggregate)]
    pub objective: ObjectiveArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReconMethod {
    Slpm,
    Fspm,
    Idw,
    Halrtc,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    #[arg(long, value_enum)]
    pub method: ReconMethod,
    /// Scene whose grid geometry the output uses (SLPM, FSPM, IDW).
    #[arg(long)]
    pub scene: Option<String>,
    #[arg(long)]
    pub sources: Option<PathBuf>,
    /// Fit JSON from `fit` (SLPM).
    #[arg(long)]
    pub fit: Option<PathBuf>,
    /// Sample CSV (IDW).
    #[arg(long)]
    pub samples: Option<PathBuf>,
    /// Observed grid dump (HaLRTC).
    #[arg(long)]
    pub observed: Option<PathBuf>,
    #[arg(long, default_value_t = 100.0)]
    pub frequency: f64,
    /// Add seeded shadow draws to a model-based map.
    #[arg(long)]
    pub shadow_seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub estimate: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    #[command(flatten)]
    pub scene: SceneArg,
    /// Estimated sources for localization and strength errors.
    #[arg(long)]
    pub sources: Option<PathBuf>,
    #[arg(long, default_value_t = -90.0, allow_hyphen_values = true)]
    pub threshold: f64,
    /// JSON output; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Run-log CSV the report is appended to as one row.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// What `estimate` writes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateFile {
    pub k: usize,
    pub alpha: f64,
    pub frequency_mhz: f64,
    pub fitness: f64,
    pub estimates: Vec<SourceEstimate>,
    /// Same sources with powers for the log-distance reference loss coefficient.
    pub sources: Vec<TruthSource>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum SourcesFile {
    Estimate(EstimateFile),
    Plain(Vec<TruthSource>),
}

pub fn load_sources(path: &Path) -> Result<Vec<TruthSource>> {
    let text = std::fs::read_to_string(path)?;
    Ok(match serde_json::from_str::<SourcesFile>(&text)? {
        SourcesFile::Estimate(e) => e.sources,
        SourcesFile::Plain(s) => s,
    })
}

fn append_log_row(path: &Path, report: &MetricsReport) -> Result<()> {
    let fresh = std::fs::metadata(path).map_or(true, |m| m.len() == 0);
    let file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    w.serialize(report)?;
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn need<T>(v: Option<T>, flag: &str) -> Result<T> {
    v.ok_or_else(|| Error::invalid(format!("--{flag} is required for this method")))
}

#[derive(Debug, Serialize)]
struct DetectOutput {
    k: usize,
    degenerate: bool,
    centers: Vec<Point3>,
    criterion: Vec<(usize, f64)>,
}

fn run_command(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Generate(a) => {
            let scene = a.scene.load()?;
            let params = UrbanPlParams::new(a.a, a.b, a.sigma, scene.frequency_mhz)?;
            let grid = generate_truth_grid(&scene, &params, a.seed)?;
            save_grid(&grid, &a.out)?;
            if let Some(p) = a.csv {
                write_grid_csv(&grid, std::fs::File::create(p)?)?;
            }
        }
        Command::Sample(a) => {
            let grid = load_grid(&a.grid)?;
            let draw = draw_samples(&grid, &SamplingPlan::new(a.rate, a.seed)?)?;
            save_samples(&draw.samples, &a.out)?;
            if let Some(p) = a.observed {
                save_grid(&draw.observed, p)?;
            }
        }
        Command::Detect(a) => {
            let samples = load_samples(&a.samples)?;
            let mut cfg = MmpldConfig::default();
            cfg.sigma1 = a.sigma1.unwrap_or(cfg.sigma1);
            cfg.sigma2 = a.sigma2.unwrap_or(cfg.sigma2);
            cfg.k_max = a.k_max.unwrap_or(cfg.k_max);
            let d = detect_source_count(&samples, a.frequency, &cfg)?;
            let out = DetectOutput {
                k: d.k,
                degenerate: d.degenerate,
                centers: d.state.centers.iter().map(|&c| d.samples[c].position).collect(),
                criterion: d.criterion_trace(),
            };
            println!("{}", serde_json::to_string_pretty(&out)?);
        }
        Command::Estimate(a) => {
            let samples = load_samples(&a.samples)?;
            let detection = detect_source_count(&samples, a.frequency, &MmpldConfig::default())?;
            let centers: Vec<Point3> = detection.state.centers.iter().map(|&c| detection.samples[c].position).collect();
            let k = a.k.unwrap_or(detection.k);
            let cfg = SflaConfig {
                population: a.population,
                memeplexes: a.memeplexes,
                local_iters: a.local_iters,
                global_iters: a.global_iters,
                alpha: a.alpha,
                seed: a.seed,
                domain: if a.db { FitnessDomain::Db } else { FitnessDomain::Linear },
                max_fitness_samples: a.max_fitness_samples,
                init_hints: centers,
                ..SflaConfig::default()
            };
            let res = estimate_parameters(&samples, k, &cfg)?;
            let eta = reference_eta(a.frequency, a.alpha);
            let sources = res
                .sources
                .iter()
                .map(|s| {
                    let r = s.with_reference_eta(eta);
                    TruthSource::new(r.position, r.power_watts)
                })
                .collect::<Result<Vec<_>>>()?;
            if let Some(p) = a.trace {
                let mut w = csv::Writer::from_path(p)?;
                w.write_record(["iteration", "best_fitness"])?;
                for (i, f) in res.trace.iter().enumerate() {
                    w.write_record([i.to_string(), f.to_string()])?;
                }
                w.flush()?;
            }
            write_json(
                &a.out,
                &EstimateFile {
                    k,
                    alpha: a.alpha,
                    frequency_mhz: a.frequency,
                    fitness: res.fitness,
                    estimates: res.sources,
                    sources,
                },
            )?;
        }
        Command::Fit(a) => {
            let samples = load_samples(&a.samples)?;
            let sources = load_sources(&a.sources)?;
            let cfg = PlFitConfig {
                objective: match a.objective {
                    ObjectiveArg::Aggregate => PlObjective::Aggregate,
                    ObjectiveArg::SourceSum => PlObjective::SourceSum,
                },
                ..PlFitConfig::default()
            };
            let fit = fit_pl_params(&samples, &sources, a.frequency, &cfg)?;
            write_json(&a.out, &PlFitJson::from(&fit))?;
        }
        Command::Reconstruct(a) => {
            let grid = match a.method {
                ReconMethod::Halrtc => {
                    let observed = load_grid(need(a.observed.as_ref(), "observed")?)?;
                    halrtc_reconstruct(&observed, &HalrtcConfig::default())?.grid
                }
                method => {
                    let scene = SceneArg { scene: need(a.scene.clone(), "scene")? }.load()?;
                    match method {
                        ReconMethod::Idw => {
                            let samples = load_samples(need(a.samples.as_ref(), "samples")?)?;
                            idw_reconstruct(&samples, &scene.grid, &IdwConfig::default())?
                        }
                        ReconMethod::Fspm => {
                            let sources = load_sources(need(a.sources.as_ref(), "sources")?)?;
                            let params = UrbanPlParams::free_space(a.frequency);
                            reconstruct_grid(&scene.grid, &sources, &params, a.shadow_seed)?
                        }
                        _ => {
                            let sources = load_sources(need(a.sources.as_ref(), "sources")?)?;
                            let fit: PlFitJson = serde_json::from_str(&std::fs::read_to_string(need(a.fit.as_ref(), "fit")?)?)?;
                            let params = UrbanPlParams::new(fit.a, fit.b, fit.sigma_db, a.frequency)?;
                            reconstruct_grid(&scene.grid, &sources, &params, a.shadow_seed)?
                        }
                    }
                }
            };
            save_grid(&grid, &a.out)?;
            if let Some(p) = a.csv {
                write_grid_csv(&grid, std::fs::File::create(p)?)?;
            }
        }
        Command::Evaluate(a) => {
            let est = load_grid(&a.estimate)?;
            let truth = load_grid(&a.truth)?;
            let scene = a.scene.load()?;
            let truth_sources = LocatedSource::from_truth(&scene.sources)?;
            let est_sources = a.sources.as_deref().map(load_sources).transpose()?.map(|s| LocatedSource::from_truth(&s)).transpose()?;
            let report = MetricsReport::evaluate(&est, &truth, &truth_sources, est_sources.as_deref(), a.threshold)?;
            match a.out {
                Some(p) => write_json(&p, &report)?,
                None => println!("{}", serde_json::to_string_pretty(&report)?),
            }
            if let Some(p) = a.log {
                append_log_row(&p, &report)?;
            }
        }
        Command::Sweep(a) => {
            let config = ExperimentConfig::load(&a.config)?;
            let outcome = run_sweep(&config)?;
            write_sweep_outputs(&config, &outcome, &a.out)?;
            eprintln!("{} rows, {} failed", outcome.rows.len(), outcome.failures());
            return Ok(outcome.exit_code());
        }
    }
    Ok(0)
}

/// Parses `args` and runs the command. Exit codes: 0 success, 1 configuration
/// or usage error, 2 runtime failure, 3 partial sweep failure.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run_command(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config { .. } | Error::InvalidArgument(_) => 1,
                _ => 2,
            }
        }
    }
}
