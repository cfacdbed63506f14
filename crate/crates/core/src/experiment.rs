//! End-to-end runs: truth generation, sampling, reconstruction by each method,
//! evaluation, and sweeps over methods, sampling rates, seeds and scenes.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{halrtc_reconstruct, idw_reconstruct, HalrtcConfig, IdwConfig};
use crate::error::{Error, Result};
use crate::metrics::{zone_curve, LocatedSource, MetricsReport};
use crate::mmpld::{detect_source_count, MmpldConfig};
use crate::plfit::{fit_pl_params, reconstruct_grid, PlFitConfig, PlFitResult};
use crate::sampler::{draw_samples, SampleDraw, SamplingPlan};
use crate::scene::{Point3, Scene, SpectrumGrid, TruthSource};
use crate::sfla::{estimate_parameters, reference_eta, SflaConfig, SflaResult};
use crate::synthgen::{generate_truth_grid, table1_scene, UrbanPlParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "SLPM")]
    Slpm,
    #[serde(rename = "FSPM")]
    Fspm,
    #[serde(rename = "IDW")]
    Idw,
    #[serde(rename = "HaLRTC")]
    Halrtc,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Slpm, Method::Fspm, Method::Idw, Method::Halrtc];

    pub fn name(self) -> &'static str {
        match self {
            Method::Slpm => "SLPM",
            Method::Fspm => "FSPM",
            Method::Idw => "IDW",
            Method::Halrtc => "HaLRTC",
        }
    }

    pub fn is_model_driven(self) -> bool {
        matches!(self, Method::Slpm | Method::Fspm)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown method {s:?}; expected SLPM, FSPM, IDW or HaLRTC")))
    }
}

/// Where a scene comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SceneRef {
    /// One of the bundled campus scenes with `k` sources.
    Table1(usize),
    /// A scene JSON file, relative paths resolved against the config file.
    File(PathBuf),
}

impl SceneRef {
    pub fn load(&self, base: Option<&Path>) -> Result<(String, Scene)> {
        match self {
            SceneRef::Table1(k) => Ok((format!("table1_k{k}"), table1_scene(*k)?)),
            SceneRef::File(p) => {
                let path = match base {
                    Some(b) if p.is_relative() => b.join(p),
                    _ => p.clone(),
                };
                let label = path.file_stem().map_or_else(|| "scene".into(), |s| s.to_string_lossy().into_owned());
                Ok((label, Scene::load(&path)?))
            }
        }
    }
}

/// Truth propagation parameters; the carrier comes from the scene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TruthModel {
    pub a: f64,
    pub b: f64,
    pub sigma_db: f64,
}

impl Default for TruthModel {
    fn default() -> Self {
        let p = UrbanPlParams::default_truth(100.0);
        Self {
            a: p.a,
            b: p.b,
            sigma_db: p.sigma_db,
        }
    }
}

impl TruthModel {
    pub fn params(&self, frequency_mhz: f64) -> Result<UrbanPlParams> {
        UrbanPlParams::new(self.a, self.b, self.sigma_db, frequency_mhz)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricSettings {
    /// Zone threshold τ in dBm.
    pub threshold_dbm: f64,
    /// Extra thresholds for the CDZR/FAZR curve; empty disables it.
    pub tau_curve: Vec<f64>,
}

impl Default for MetricSettings {
    fn default() -> Self {
        Self {
            threshold_dbm: -90.0,
            tau_curve: Vec::new(),
        }
    }
}

/// Knobs of the model-driven knowledge extraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineSettings {
    /// Seed SFLA's initial population around the detected cluster centers.
    pub hint_with_centers: bool,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        Self { hint_with_centers: true }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSettings {
    /// Write reconstructed grids as binary dumps next to the CSVs.
    pub dump_grids: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenes: Vec<SceneRef>,
    #[serde(default)]
    pub truth: TruthModel,
    pub rates: Vec<f64>,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub metrics: MetricSettings,
    #[serde(default)]
    pub mmpld: MmpldConfig,
    #[serde(default)]
    pub sfla: SflaConfig,
    #[serde(default)]
    pub plfit: PlFitConfig,
    #[serde(default)]
    pub idw: IdwConfig,
    #[serde(default)]
    pub halrtc: HalrtcConfig,
    #[serde(default)]
    pub pipeline: PipelineSettings,
    #[serde(default)]
    pub output: OutputSettings,
    /// Directory that relative scene paths resolve against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

fn line_of(text: &str, key: &str) -> Option<usize> {
    let needle = format!("\"{key}\"");
    text.lines().position(|l| l.contains(&needle)).map(|i| i + 1)
}

impl ExperimentConfig {
    /// A configuration with library defaults for every stage.
    pub fn new(scenes: Vec<SceneRef>, rates: Vec<f64>, methods: Vec<Method>, seeds: Vec<u64>) -> Self {
        Self {
            scenes,
            truth: TruthModel::default(),
            rates,
            methods,
            seeds,
            metrics: MetricSettings::default(),
            mmpld: MmpldConfig::default(),
            sfla: SflaConfig::default(),
            plfit: PlFitConfig::default(),
            idw: IdwConfig::default(),
            halrtc: HalrtcConfig::default(),
            pipeline: PipelineSettings::default(),
            output: OutputSettings::default(),
            base_dir: None,
        }
    }

    /// Parses and validates; errors carry the offending line where possible.
    pub fn from_json(text: &str) -> Result<Self> {
        let config: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config {
            line: Some(e.line()),
            message: e.to_string(),
        })?;
        config.validate().map_err(|e| match e {
            Error::Config { line: None, message } => {
                let key = message.split('`').nth(1).unwrap_or("");
                Error::Config {
                    line: line_of(text, key),
                    message,
                }
            }
            other => other,
        })?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
            line: None,
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        let mut config = Self::from_json(&text)?;
        config.base_dir = path.parent().map(Path::to_path_buf);
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, what: String| Error::Config {
            line: None,
            message: format!("`{key}`: {what}"),
        };
        if self.scenes.is_empty() {
            return Err(bad("scenes", "at least one scene is required".into()));
        }
        if self.rates.is_empty() || self.rates.iter().any(|r| !(*r > 0.0 && *r <= 1.0)) {
            return Err(bad("rates", "rates must be non-empty and lie in (0, 1]".into()));
        }
        if self.methods.is_empty() {
            return Err(bad("methods", "at least one method is required".into()));
        }
        if self.seeds.is_empty() {
            return Err(bad("seeds", "at least one seed is required".into()));
        }
        self.truth
            .params(100.0)
            .map_err(|e| bad("truth", e.to_string()))?;
        self.mmpld.validate().map_err(|e| bad("mmpld", e.to_string()))?;
        self.sfla.validate().map_err(|e| bad("sfla", e.to_string()))?;
        self.plfit.validate().map_err(|e| bad("plfit", e.to_string()))?;
        self.idw.validate().map_err(|e| bad("idw", e.to_string()))?;
        self.halrtc.validate().map_err(|e| bad("halrtc", e.to_string()))?;
        if !self.metrics.threshold_dbm.is_finite() {
            return Err(bad("metrics", "threshold must be finite".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical))
    }
}

/// Seed of the sampling stage for a run seed.
pub fn sampling_seed(seed: u64) -> u64 {
    seed ^ 0x9e37_79b9_7f4a_7c15
}

/// Source count, locations and powers extracted from samples.
#[derive(Debug, Clone)]
pub struct Knowledge {
    pub k: usize,
    pub centers: Vec<Point3>,
    pub sfla: SflaResult,
    /// SFLA sources with powers expressed for the log-distance reference loss
    /// coefficient at the SFLA exponent.
    pub sources: Vec<TruthSource>,
}

pub fn extract_knowledge(
    draw: &SampleDraw,
    frequency_mhz: f64,
    config: &ExperimentConfig,
    seed: u64,
) -> Result<Knowledge> {
    let detection = detect_source_count(&draw.samples, frequency_mhz, &config.mmpld)
        .map_err(|e| e.with_context("source count detection"))?;
    let centers: Vec<Point3> = detection.state.centers.iter().map(|&c| detection.samples[c].position).collect();
    let mut sfla_cfg = config.sfla.clone();
    sfla_cfg.seed = sfla_cfg.seed.wrapping_add(seed);
    if config.pipeline.hint_with_centers {
        sfla_cfg.init_hints = centers.clone();
    }
    let sfla = estimate_parameters(&draw.samples, detection.k, &sfla_cfg)
        .map_err(|e| e.with_context("source parameter estimation"))?;
    let eta_ref = reference_eta(frequency_mhz, sfla_cfg.alpha);
    let sources = sfla
        .sources
        .iter()
        .map(|s| {
            let r = s.with_reference_eta(eta_ref);
            TruthSource::new(r.position, r.power_watts)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Knowledge {
        k: detection.k,
        centers,
        sfla,
        sources,
    })
}

/// Result of one method on one `(scene, rate, seed)`.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub grid: SpectrumGrid,
    pub report: MetricsReport,
    pub fit: Option<PlFitResult>,
    pub tau_curve: Vec<(f64, f64, f64)>,
}

/// Shared inputs of every method for one `(scene, rate, seed)`.
pub struct RunContext<'a> {
    pub config: &'a ExperimentConfig,
    pub scene: &'a Scene,
    pub truth: SpectrumGrid,
    pub draw: SampleDraw,
    pub seed: u64,
    knowledge: Option<Result<Knowledge>>,
}

impl<'a> RunContext<'a> {
    pub fn new(config: &'a ExperimentConfig, scene: &'a Scene, rate: f64, seed: u64) -> Result<Self> {
        let params = config.truth.params(scene.frequency_mhz)?;
        let truth = generate_truth_grid(scene, &params, seed).map_err(|e| e.with_context("truth generation"))?;
        let draw = draw_samples(&truth, &SamplingPlan::new(rate, sampling_seed(seed))?)
            .map_err(|e| e.with_context("sampling"))?;
        Ok(Self {
            config,
            scene,
            truth,
            draw,
            seed,
            knowledge: None,
        })
    }

    /// Knowledge extraction runs once and is shared by SLPM and FSPM.
    pub fn knowledge(&mut self) -> Result<&Knowledge> {
        if self.knowledge.is_none() {
            self.knowledge = Some(extract_knowledge(&self.draw, self.scene.frequency_mhz, self.config, self.seed));
        }
        match self.knowledge.as_ref().expect("just filled") {
            Ok(k) => Ok(k),
            Err(e) => Err(Error::Degenerate(format!("knowledge extraction failed: {e}"))),
        }
    }

    pub fn run(&mut self, method: Method) -> Result<RunOutput> {
        let spec = *self.truth.spec();
        let f = self.scene.frequency_mhz;
        let (grid, fit, est_sources) = match method {
            Method::Slpm => {
                let plfit = self.config.plfit;
                let k = self.knowledge()?;
                let sources = k.sources.clone();
                let fit = fit_pl_params(&self.draw.samples, &sources, f, &plfit)
                    .map_err(|e| e.with_context("path-loss fit"))?;
                let grid = reconstruct_grid(&spec, &sources, &fit.params, None)?;
                (grid, Some(fit), Some(sources))
            }
            Method::Fspm => {
                let sources = self.knowledge()?.sources.clone();
                let grid = reconstruct_grid(&spec, &sources, &UrbanPlParams::free_space(f), None)?;
                (grid, None, Some(sources))
            }
            Method::Idw => (idw_reconstruct(&self.draw.samples, &spec, &self.config.idw)?, None, None),
            Method::Halrtc => (halrtc_reconstruct(&self.draw.observed, &self.config.halrtc)?.grid, None, None),
        };
        let truth_sources = LocatedSource::from_truth(&self.scene.sources)?;
        let est = est_sources.as_deref().map(LocatedSource::from_truth).transpose()?;
        let tau = self.config.metrics.threshold_dbm;
        let report = MetricsReport::evaluate(&grid, &self.truth, &truth_sources, est.as_deref(), tau)?;
        let positions: Vec<Point3> = self.scene.sources.iter().map(|s| s.position).collect();
        let tau_curve = if self.config.metrics.tau_curve.is_empty() {
            Vec::new()
        } else {
            zone_curve(&grid, &self.truth, &positions, &self.config.metrics.tau_curve)?
        };
        Ok(RunOutput {
            grid,
            report,
            fit,
            tau_curve,
        })
    }
}

/// One method on one `(scene, rate, seed)` from scratch.
pub fn run_pipeline(config: &ExperimentConfig, scene: &Scene, method: Method, rate: f64, seed: u64) -> Result<RunOutput> {
    RunContext::new(config, scene, rate, seed)?
        .run(method)
        .map_err(|e| e.with_context(format!("{method} at rate {rate}, seed {seed}")))
}

/// One row of `results.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scene: String,
    pub k_true: usize,
    pub method: Method,
    pub rate: f64,
    pub seed: u64,
    pub status: String,
    pub k_est: Option<usize>,
    pub detect_success: Option<bool>,
    pub rmse: Option<f64>,
    pub rms_db: Option<f64>,
    pub threshold_dbm: f64,
    pub cdzr: Option<f64>,
    pub fazr: Option<f64>,
    pub cdzr_skipped: Option<usize>,
    pub fazr_skipped: Option<usize>,
    pub loc_e: Option<f64>,
    pub ss_e: Option<f64>,
    pub fit_a: Option<f64>,
    pub fit_b: Option<f64>,
    pub fit_sigma_db: Option<f64>,
    pub sfla_fitness: Option<f64>,
    pub error: String,
    pub config_hash: String,
    pub wall_ms: u64,
}

/// Per `(scene, method, rate)` mean and sample standard deviation over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub scene: String,
    pub k_true: usize,
    pub method: Method,
    pub rate: f64,
    pub runs: usize,
    pub failures: usize,
    pub rmse_mean: Option<f64>,
    pub rmse_std: Option<f64>,
    pub rms_db_mean: Option<f64>,
    pub rms_db_std: Option<f64>,
    pub cdzr_mean: Option<f64>,
    pub cdzr_std: Option<f64>,
    pub fazr_mean: Option<f64>,
    pub fazr_std: Option<f64>,
    pub loc_e_mean: Option<f64>,
    pub loc_e_std: Option<f64>,
    pub ss_e_mean: Option<f64>,
    pub ss_e_std: Option<f64>,
    pub detect_rate: Option<f64>,
}

/// Mean CDZR/FAZR over seeds at one threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauRow {
    pub scene: String,
    pub method: Method,
    pub rate: f64,
    pub threshold_dbm: f64,
    pub cdzr_mean: f64,
    pub fazr_mean: f64,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub rows: Vec<ResultRow>,
    pub aggregates: Vec<AggregateRow>,
    pub tau_rows: Vec<TauRow>,
    /// Reconstructed grids by `(scene, method, rate, seed)` when dumping is enabled.
    pub grids: Vec<((String, Method, f64, u64), SpectrumGrid)>,
}

impl SweepOutcome {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.status != "ok").count()
    }

    /// 0 all ok, 2 every run failed, 3 some failed.
    pub fn exit_code(&self) -> i32 {
        match self.failures() {
            0 => 0,
            n if n == self.rows.len() => 2,
            _ => 3,
        }
    }
}

fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (Some(mean), Some(std))
}

struct GroupResult {
    rows: Vec<ResultRow>,
    curves: Vec<(Method, Vec<(f64, f64, f64)>)>,
    grids: Vec<((String, Method, f64, u64), SpectrumGrid)>,
}

fn failed_row(label: &str, k_true: usize, method: Method, rate: f64, seed: u64, tau: f64, hash: &str, e: &Error) -> ResultRow {
    ResultRow {
        scene: label.to_string(),
        k_true,
        method,
        rate,
        seed,
        status: "failed".into(),
        k_est: None,
        detect_success: None,
        rmse: None,
        rms_db: None,
        threshold_dbm: tau,
        cdzr: None,
        fazr: None,
        cdzr_skipped: None,
        fazr_skipped: None,
        loc_e: None,
        ss_e: None,
        fit_a: None,
        fit_b: None,
        fit_sigma_db: None,
        sfla_fitness: None,
        error: e.to_string(),
        config_hash: hash.to_string(),
        wall_ms: 0,
    }
}

fn run_group(config: &ExperimentConfig, label: &str, scene: &Scene, rate: f64, seed: u64, hash: &str) -> GroupResult {
    let k_true = scene.sources.len();
    let tau = config.metrics.threshold_dbm;
    let mut out = GroupResult {
        rows: Vec::new(),
        curves: Vec::new(),
        grids: Vec::new(),
    };
    let start = Instant::now();
    let mut ctx = match RunContext::new(config, scene, rate, seed) {
        Ok(c) => c,
        Err(e) => {
            for &m in &config.methods {
                out.rows.push(failed_row(label, k_true, m, rate, seed, tau, hash, &e));
            }
            return out;
        }
    };
    let shared_ms = start.elapsed().as_millis() as u64;
    for &method in &config.methods {
        let t = Instant::now();
        let result = ctx.run(method);
        let wall_ms = shared_ms + t.elapsed().as_millis() as u64;
        match result {
            Ok(run) => {
                let r = &run.report;
                let sfla_fitness = if method.is_model_driven() {
                    ctx.knowledge().ok().map(|k| k.sfla.fitness)
                } else {
                    None
                };
                out.rows.push(ResultRow {
                    scene: label.to_string(),
                    k_true,
                    method,
                    rate,
                    seed,
                    status: "ok".into(),
                    k_est: r.k_est,
                    detect_success: r.detect_success,
                    rmse: Some(r.rmse),
                    rms_db: Some(r.rms_db),
                    threshold_dbm: tau,
                    cdzr: Some(r.cdzr),
                    fazr: Some(r.fazr),
                    cdzr_skipped: Some(r.cdzr_skipped),
                    fazr_skipped: Some(r.fazr_skipped),
                    loc_e: r.loc_e,
                    ss_e: r.ss_e,
                    fit_a: run.fit.map(|f| f.params.a),
                    fit_b: run.fit.map(|f| f.params.b),
                    fit_sigma_db: run.fit.map(|f| f.params.sigma_db),
                    sfla_fitness,
                    error: String::new(),
                    config_hash: hash.to_string(),
                    wall_ms,
                });
                out.curves.push((method, run.tau_curve));
                if config.output.dump_grids {
                    out.grids.push(((label.to_string(), method, rate, seed), run.grid));
                }
            }
            Err(e) => {
                let mut row = failed_row(label, k_true, method, rate, seed, tau, hash, &e);
                row.wall_ms = wall_ms;
                out.rows.push(row);
            }
        }
    }
    out
}

/// Every `(scene, method, rate, seed)` combination. Failures are recorded per row
/// and the sweep carries on. Rows come back ordered by scene, method, rate, seed.
pub fn run_sweep(config: &ExperimentConfig) -> Result<SweepOutcome> {
    config.validate()?;
    let hash = config.hash();
    let scenes = config
        .scenes
        .iter()
        .map(|s| s.load(config.base_dir.as_deref()))
        .collect::<Result<Vec<_>>>()?;
    let mut jobs = Vec::new();
    for (si, _) in scenes.iter().enumerate() {
        for (ri, _) in config.rates.iter().enumerate() {
            for (ki, _) in config.seeds.iter().enumerate() {
                jobs.push((si, ri, ki));
            }
        }
    }
    let groups: Vec<((usize, usize, usize), GroupResult)> = jobs
        .into_par_iter()
        .map(|(si, ri, ki)| {
            let (label, scene) = &scenes[si];
            ((si, ri, ki), run_group(config, label, scene, config.rates[ri], config.seeds[ki], &hash))
        })
        .collect();

    let method_pos = |m: Method| config.methods.iter().position(|&x| x == m).unwrap_or(usize::MAX);
    let mut keyed_rows = Vec::new();
    let mut curves: BTreeMap<(usize, usize, usize), Vec<Vec<(f64, f64, f64)>>> = BTreeMap::new();
    let mut grids = Vec::new();
    for ((si, ri, ki), g) in groups {
        for row in g.rows {
            keyed_rows.push(((si, method_pos(row.method), ri, ki), row));
        }
        for (m, c) in g.curves {
            if !c.is_empty() {
                curves.entry((si, method_pos(m), ri)).or_default().push(c);
            }
        }
        grids.extend(g.grids);
    }
    keyed_rows.sort_by_key(|(k, _)| *k);
    let rows: Vec<ResultRow> = keyed_rows.into_iter().map(|(_, r)| r).collect();

    let mut aggregates = Vec::new();
    for (si, (label, scene)) in scenes.iter().enumerate() {
        for &method in &config.methods {
            for &rate in &config.rates {
                let sel: Vec<&ResultRow> = rows
                    .iter()
                    .filter(|r| r.scene == *label && r.method == method && r.rate == rate)
                    .collect();
                let pick = |f: fn(&ResultRow) -> Option<f64>| -> Vec<f64> { sel.iter().filter_map(|r| f(r)).collect() };
                let (rmse_mean, rmse_std) = mean_std(&pick(|r| r.rmse));
                let (rms_db_mean, rms_db_std) = mean_std(&pick(|r| r.rms_db));
                let (cdzr_mean, cdzr_std) = mean_std(&pick(|r| r.cdzr));
                let (fazr_mean, fazr_std) = mean_std(&pick(|r| r.fazr));
                let (loc_e_mean, loc_e_std) = mean_std(&pick(|r| r.loc_e));
                let (ss_e_mean, ss_e_std) = mean_std(&pick(|r| r.ss_e));
                let det: Vec<f64> = sel.iter().filter_map(|r| r.detect_success.map(|b| b as u8 as f64)).collect();
                aggregates.push(AggregateRow {
                    scene: label.clone(),
                    k_true: scene.sources.len(),
                    method,
                    rate,
                    runs: sel.len(),
                    failures: sel.iter().filter(|r| r.status != "ok").count(),
                    rmse_mean,
                    rmse_std,
                    rms_db_mean,
                    rms_db_std,
                    cdzr_mean,
                    cdzr_std,
                    fazr_mean,
                    fazr_std,
                    loc_e_mean,
                    loc_e_std,
                    ss_e_mean,
                    ss_e_std,
                    detect_rate: mean_std(&det).0,
                });
                let _ = si;
            }
        }
    }

    let mut tau_rows = Vec::new();
    for ((si, mi, ri), runs) in curves {
        let n = runs.len() as f64;
        for (t, &tau) in config.metrics.tau_curve.iter().enumerate() {
            tau_rows.push(TauRow {
                scene: scenes[si].0.clone(),
                method: config.methods[mi],
                rate: config.rates[ri],
                threshold_dbm: tau,
                cdzr_mean: runs.iter().map(|c| c[t].1).sum::<f64>() / n,
                fazr_mean: runs.iter().map(|c| c[t].2).sum::<f64>() / n,
            });
        }
    }

    Ok(SweepOutcome {
        rows,
        aggregates,
        tau_rows,
        grids,
    })
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

type Pick = fn(&AggregateRow) -> (Option<f64>, Option<f64>);

/// Wide figure table: `group, x`, then `<method>_mean, <method>_std` per method.
fn figure_csv(
    path: &Path,
    aggregates: &[AggregateRow],
    methods: &[Method],
    group: fn(&AggregateRow) -> String,
    x: fn(&AggregateRow) -> f64,
    series: &[(&str, Pick)],
    group_name: &str,
    x_name: &str,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec![group_name.to_string(), x_name.to_string()];
    for m in methods {
        for (suffix, _) in series {
            let tag = if suffix.is_empty() { String::new() } else { format!("_{suffix}") };
            header.push(format!("{m}{tag}_mean"));
            header.push(format!("{m}{tag}_std"));
        }
    }
    w.write_record(&header)?;
    let mut keys: Vec<(String, f64)> = Vec::new();
    for a in aggregates {
        let k = (group(a), x(a));
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let fmt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for (g, xv) in keys {
        let mut rec = vec![g.clone(), xv.to_string()];
        for &m in methods {
            let a = aggregates.iter().find(|a| a.method == m && group(a) == g && x(a) == xv);
            for (_, pick) in series {
                let (mean, std) = a.map(pick).unwrap_or((None, None));
                rec.push(fmt(mean));
                rec.push(fmt(std));
            }
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `results.csv`, `aggregates.csv`, `fig4.csv` … `fig10.csv`,
/// `tau_curve.csv` (when thresholds are configured) and `manifest.json`.
pub fn write_sweep_outputs(config: &ExperimentConfig, outcome: &SweepOutcome, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    write_csv(&dir.join("results.csv"), &outcome.rows)?;
    write_csv(&dir.join("aggregates.csv"), &outcome.aggregates)?;
    if !outcome.tau_rows.is_empty() {
        write_csv(&dir.join("tau_curve.csv"), &outcome.tau_rows)?;
    }
    let ms = &config.methods;
    let by_scene: fn(&AggregateRow) -> String = |a| a.scene.clone();
    let by_rate: fn(&AggregateRow) -> f64 = |a| a.rate;
    let a = &outcome.aggregates;
    figure_csv(&dir.join("fig4.csv"), a, ms, by_scene, by_rate, &[("", |a| (a.rmse_mean, a.rmse_std))], "scene", "rate")?;
    figure_csv(
        &dir.join("fig5.csv"),
        a,
        ms,
        |a| a.rate.to_string(),
        |a| a.k_true as f64,
        &[("", |a| (a.rmse_mean, a.rmse_std))],
        "rate",
        "k",
    )?;
    figure_csv(
        &dir.join("fig6.csv"),
        a,
        ms,
        by_scene,
        by_rate,
        &[("cdzr", |a| (a.cdzr_mean, a.cdzr_std)), ("fazr", |a| (a.fazr_mean, a.fazr_std))],
        "scene",
        "rate",
    )?;
    let model: Vec<Method> = ms.iter().copied().filter(|m| m.is_model_driven()).collect();
    figure_csv(&dir.join("fig7.csv"), a, &model, by_scene, by_rate, &[("", |a| (a.loc_e_mean, a.loc_e_std))], "scene", "rate")?;
    figure_csv(&dir.join("fig8.csv"), a, &model, by_scene, by_rate, &[("", |a| (a.ss_e_mean, a.ss_e_std))], "scene", "rate")?;
    figure_csv(&dir.join("fig9.csv"), a, ms, by_scene, by_rate, &[("", |a| (a.rms_db_mean, a.rms_db_std))], "scene", "rate")?;
    figure_csv(&dir.join("fig10.csv"), a, &model, by_scene, by_rate, &[("", |a| (a.detect_rate, None))], "scene", "rate")?;
    let manifest = serde_json::json!({
        "config_hash": config.hash(),
        "rows": outcome.rows.len(),
        "failures": outcome.failures(),
        "config": config,
    });
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    for ((scene, method, rate, seed), grid) in &outcome.grids {
        let name = format!("grid_{scene}_{method}_r{rate}_s{seed}.bin");
        crate::io::save_grid(grid, dir.join(name))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::GridSpec;

    fn toy_scene() -> Scene {
        Scene {
            grid: GridSpec::new([0.0; 3], [100.0, 100.0, 25.0], [20, 20, 5]).unwrap(),
            sources: vec![TruthSource::new([47.3, 61.8, 7.0], 1.0).unwrap()],
            frequency_mhz: 100.0,
        }
    }

    fn toy_config() -> ExperimentConfig {
        let mut c = ExperimentConfig::new(vec![SceneRef::Table1(3)], vec![1.0], Method::ALL.to_vec(), vec![0]);
        c.truth = TruthModel { a: 2.5, b: -0.1, sigma_db: 0.0 };
        c.mmpld.k_max = 1;
        c.sfla.global_iters = 200;
        c
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(serde_json::from_str::<Method>(&json).unwrap(), m);
        }
        assert!("kriging".parse::<Method>().is_err());
        let text = r#"{"scenes": [{"table1": 3}], "rates": [0.2], "methods": ["SLPM", "Kriging"], "seeds": [0]}"#;
        assert!(matches!(ExperimentConfig::from_json(text), Err(Error::Config { line: Some(1), .. })));
    }

    #[test]
    fn config_errors_point_at_lines() {
        let text = "{\n  \"scenes\": [{\"table1\": 3}],\n  \"rates\": [0.2, 1.5],\n  \"methods\": [\"IDW\"],\n  \"seeds\": [0]\n}";
        match ExperimentConfig::from_json(text) {
            Err(Error::Config { line, message }) => {
                assert_eq!(line, Some(3), "{message}");
            }
            other => panic!("expected config error, got {other:?}"),
        }
        let text = "{\n  \"scenes\": [{\"table1\": 3}],\n  \"rates\": [0.2],\n  \"methods\": [\"IDW\"],\n  \"seeds\": [0],\n  \"colour\": 1\n}";
        assert!(matches!(ExperimentConfig::from_json(text), Err(Error::Config { line: Some(6), .. })));
        let ok = "{\"scenes\": [{\"table1\": 2}], \"rates\": [0.2], \"methods\": [\"IDW\"], \"seeds\": [0]}";
        let c = ExperimentConfig::from_json(ok).unwrap();
        assert_eq!(c.hash(), ExperimentConfig::from_json(ok).unwrap().hash());
    }

    #[test]
    fn idw_full_rate_is_exact_and_slpm_beats_fspm() {
        let config = toy_config();
        let scene = toy_scene();
        let idw = run_pipeline(&config, &scene, Method::Idw, 1.0, 0).unwrap();
        assert_eq!(idw.report.rmse, 0.0);
        let mut ctx = RunContext::new(&config, &scene, 1.0, 0).unwrap();
        let slpm = ctx.run(Method::Slpm).unwrap();
        let fspm = ctx.run(Method::Fspm).unwrap();
        assert!(slpm.report.rmse < fspm.report.rmse, "{} vs {}", slpm.report.rmse, fspm.report.rmse);
        assert_eq!(slpm.report.k_est, Some(1));
    }
}
