//! Self-learning of the urban path-loss parameters `A`, `B`, `σ` from samples and
//! estimated sources, and map reconstruction from the learned model.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{distance, GridSpec, Point3, Sample, SpectrumGrid, TruthSource};
use crate::synthgen::{render_grid, UrbanPlParams, MIN_DISTANCE_M, MIN_HEIGHT_M};

/// `10 log10(Σ_j P_j[mW]) - P_r[dBm]`.
pub fn measured_pl_db(sample: &Sample, sources: &[TruthSource]) -> Result<f64> {
    let total: f64 = sources.iter().map(|s| s.power_watts * 1e3).sum();
    if !(total > 0.0) {
        return Err(Error::Degenerate("estimated sources carry no power".into()));
    }
    Ok(10.0 * total.log10() - sample.rss_dbm)
}

/// Sum over sources of the deterministic urban loss at `position`.
pub fn theoretical_pl_db(position: &Point3, sources: &[TruthSource], params: &UrbanPlParams) -> f64 {
    sources
        .iter()
        .map(|s| params.mean_loss_db(distance(&s.position, position), position[2]))
        .sum()
}

/// Loss predicted for the combined field: total power over predicted combined RSS.
/// Equals [`theoretical_pl_db`] for one source.
pub fn aggregate_pl_db(position: &Point3, sources: &[TruthSource], params: &UrbanPlParams) -> f64 {
    let mut total = 0.0;
    let mut received = 0.0;
    for s in sources {
        let p = s.power_watts * 1e3;
        let loss = params.mean_loss_db(distance(&s.position, position), position[2]);
        total += p;
        received += p * 10f64.powf(-loss / 10.0);
    }
    10.0 * (total / received).log10()
}

/// Which theoretical loss the fit compares against the measured loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PlObjective {
    /// [`aggregate_pl_db`].
    #[default]
    Aggregate,
    /// [`theoretical_pl_db`], the per-source sum.
    SourceSum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlFitConfig {
    pub init_a: f64,
    pub init_b: f64,
    pub a_bounds: (f64, f64),
    pub b_bounds: (f64, f64),
    pub starts: usize,
    pub max_iters: usize,
    /// Simplex spread in objective value below which a start has converged.
    pub tol: f64,
    pub objective: PlObjective,
}

impl Default for PlFitConfig {
    fn default() -> Self {
        Self {
            init_a: 2.0,
            init_b: 0.0,
            a_bounds: (0.1, 10.0),
            b_bounds: (-2.0, 2.0),
            starts: 8,
            max_iters: 400,
            tol: 1e-10,
            objective: PlObjective::Aggregate,
        }
    }
}

impl PlFitConfig {
    pub fn validate(&self) -> Result<()> {
        let (a0, a1) = self.a_bounds;
        let (b0, b1) = self.b_bounds;
        if !(a0 > 0.0 && a0 < a1 && b0 < b1 && a1.is_finite() && b0.is_finite() && b1.is_finite()) {
            return Err(Error::invalid("A bounds must be positive and ordered, B bounds ordered"));
        }
        if self.starts == 0 || self.max_iters == 0 {
            return Err(Error::invalid("starts and max_iters must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlFitResult {
    pub params: UrbanPlParams,
    /// `‖L_theo - L_real‖₂` at `params`, dB.
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Exported form of a fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlFitJson {
    #[serde(rename = "A")]
    pub a: f64,
    #[serde(rename = "B")]
    pub b: f64,
    pub sigma_db: f64,
    pub residual_norm: f64,
}

impl From<&PlFitResult> for PlFitJson {
    fn from(r: &PlFitResult) -> Self {
        Self {
            a: r.params.a,
            b: r.params.b,
            sigma_db: r.params.sigma_db,
            residual_norm: r.residual_norm,
        }
    }
}

/// Precomputed regressors: `log10 d_ij[km]` per source, `h_i`, measured loss.
struct Design {
    log_d: Vec<f64>,
    ln_height: Vec<f64>,
    powers_mw: Vec<f64>,
    total_dbm: f64,
    measured: Vec<f64>,
    freq_term: f64,
    objective: PlObjective,
}

impl Design {
    fn predicted(&self, i: usize, a: f64, b: f64) -> f64 {
        let k = self.powers_mw.len();
        let n = a * (b * self.ln_height[i]).exp();
        let row = &self.log_d[i * k..(i + 1) * k];
        match self.objective {
            PlObjective::SourceSum => row.iter().map(|ld| self.freq_term + 10.0 * n * ld).sum(),
            PlObjective::Aggregate => {
                // 10 log10(ΣP / ΣP 10^(-L/10)) with L = F + 10 n log10 d
                let received: f64 = row
                    .iter()
                    .zip(&self.powers_mw)
                    .map(|(ld, p)| p * (-n * ld * std::f64::consts::LN_10).exp())
                    .sum();
                self.total_dbm + self.freq_term - 10.0 * received.log10()
            }
        }
    }

    fn residuals(&self, a: f64, b: f64) -> impl Iterator<Item = f64> + '_ {
        (0..self.measured.len()).map(move |i| self.predicted(i, a, b) - self.measured[i])
    }

    fn objective(&self, a: f64, b: f64) -> f64 {
        self.residuals(a, b).map(|r| r * r).sum::<f64>().sqrt()
    }
}

struct Simplex {
    best: [f64; 2],
    value: f64,
    iterations: usize,
    converged: bool,
}

/// Nelder-Mead in two dimensions with every vertex projected into the box.
fn nelder_mead(
    f: &dyn Fn([f64; 2]) -> f64,
    start: [f64; 2],
    lo: [f64; 2],
    hi: [f64; 2],
    max_iters: usize,
    tol: f64,
) -> Simplex {
    let project = |p: [f64; 2]| [p[0].clamp(lo[0], hi[0]), p[1].clamp(lo[1], hi[1])];
    let step = [0.1 * (hi[0] - lo[0]), 0.1 * (hi[1] - lo[1])];
    let x0 = project(start);
    let mut x1 = project([x0[0] + step[0], x0[1]]);
    if x1 == x0 {
        x1 = project([x0[0] - step[0], x0[1]]);
    }
    let mut x2 = project([x0[0], x0[1] + step[1]]);
    if x2 == x0 {
        x2 = project([x0[0], x0[1] - step[1]]);
    }
    let mut v: Vec<([f64; 2], f64)> = [x0, x1, x2].iter().map(|&p| (p, f(p))).collect();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iters {
        v.sort_by(|a, b| a.1.total_cmp(&b.1));
        if (v[2].1 - v[0].1).abs() <= tol * (1.0 + v[0].1.abs()) {
            converged = true;
            break;
        }
        iterations += 1;
        let c = [(v[0].0[0] + v[1].0[0]) / 2.0, (v[0].0[1] + v[1].0[1]) / 2.0];
        let along = |t: f64| project([c[0] + t * (v[2].0[0] - c[0]), c[1] + t * (v[2].0[1] - c[1])]);
        let xr = along(-1.0);
        let fr = f(xr);
        if fr < v[0].1 {
            let xe = along(-2.0);
            let fe = f(xe);
            v[2] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < v[1].1 {
            v[2] = (xr, fr);
        } else {
            let xc = if fr < v[2].1 { along(-0.5) } else { along(0.5) };
            let fc = f(xc);
            if fc < v[2].1.min(fr) {
                v[2] = (xc, fc);
            } else {
                let b = v[0].0;
                for vert in v.iter_mut().skip(1) {
                    let p = [(b[0] + vert.0[0]) / 2.0, (b[1] + vert.0[1]) / 2.0];
                    *vert = (p, f(p));
                }
            }
        }
    }
    v.sort_by(|a, b| a.1.total_cmp(&b.1));
    Simplex {
        best: v[0].0,
        value: v[0].1,
        iterations,
        converged,
    }
}

/// Start points: the configured initial guess, then a fixed low-discrepancy
/// spread over the bounds.
fn start_points(config: &PlFitConfig) -> Vec<[f64; 2]> {
    let (a0, a1) = config.a_bounds;
    let (b0, b1) = config.b_bounds;
    let mut starts = vec![[config.init_a, config.init_b]];
    let golden = 0.618_033_988_749_895;
    for s in 1..config.starts {
        let u = (s as f64 * golden).fract();
        let w = (s as f64 + 0.5) / config.starts as f64;
        starts.push([a0 + u * (a1 - a0), b0 + w * (b1 - b0)]);
    }
    starts
}

/// Least-squares fit of `(A, B)` to the measured loss of `samples`; `σ̂` is the
/// standard deviation of the final residuals.
pub fn fit_pl_params(
    samples: &[Sample],
    sources: &[TruthSource],
    frequency_mhz: f64,
    config: &PlFitConfig,
) -> Result<PlFitResult> {
    config.validate()?;
    if samples.len() < 3 {
        return Err(Error::invalid(format!("need at least 3 samples to fit, got {}", samples.len())));
    }
    if sources.is_empty() {
        return Err(Error::Empty("sources"));
    }
    let powers_mw: Vec<f64> = sources.iter().map(|s| s.power_watts * 1e3).collect();
    let measured = samples
        .iter()
        .map(|s| measured_pl_db(s, sources))
        .collect::<Result<Vec<_>>>()?;
    let log_d: Vec<f64> = samples
        .iter()
        .flat_map(|s| {
            sources
                .iter()
                .map(move |src| (distance(&src.position, &s.position).max(MIN_DISTANCE_M) / 1000.0).log10())
        })
        .collect();
    let k = sources.len();
    let spread = {
        let row_sum: Vec<f64> = log_d.chunks(k).map(|r| r.iter().sum()).collect();
        let mean = row_sum.iter().sum::<f64>() / row_sum.len() as f64;
        row_sum.iter().map(|x| (x - mean).powi(2)).sum::<f64>()
    };
    if spread <= 1e-18 {
        return Err(Error::Degenerate("samples show no distance spread; A and B are not identifiable".into()));
    }
    let design = Design {
        log_d,
        ln_height: samples.iter().map(|s| s.position[2].max(MIN_HEIGHT_M).ln()).collect(),
        total_dbm: 10.0 * powers_mw.iter().sum::<f64>().log10(),
        powers_mw,
        measured,
        freq_term: UrbanPlParams::free_space(frequency_mhz).frequency_term_db(),
        objective: config.objective,
    };
    let lo = [config.a_bounds.0, config.b_bounds.0];
    let hi = [config.a_bounds.1, config.b_bounds.1];
    let objective = |p: [f64; 2]| design.objective(p[0], p[1]);
    let runs: Vec<Simplex> = start_points(config)
        .into_par_iter()
        .map(|s| nelder_mead(&objective, s, lo, hi, config.max_iters, config.tol))
        .collect();
    let best = runs
        .iter()
        .min_by(|a, b| a.value.total_cmp(&b.value))
        .expect("at least one start");
    let [a, b] = best.best;
    let residuals: Vec<f64> = design.residuals(a, b).collect();
    let mean = residuals.iter().sum::<f64>() / residuals.len() as f64;
    let sigma = (residuals.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / residuals.len() as f64).sqrt();
    Ok(PlFitResult {
        params: UrbanPlParams::new(a, b, sigma, frequency_mhz)?,
        residual_norm: best.value,
        iterations: runs.iter().map(|r| r.iterations).sum(),
        converged: best.converged,
    })
}

/// Objective value of `(a, b)`; exposed so callers can compare against the fit.
pub fn pl_objective(
    samples: &[Sample],
    sources: &[TruthSource],
    params: &UrbanPlParams,
    objective: PlObjective,
) -> Result<f64> {
    let mut acc = 0.0;
    for s in samples {
        let theo = match objective {
            PlObjective::SourceSum => theoretical_pl_db(&s.position, sources, params),
            PlObjective::Aggregate => aggregate_pl_db(&s.position, sources, params),
        };
        acc += (theo - measured_pl_db(s, sources)?).powi(2);
    }
    Ok(acc.sqrt())
}

/// Full map from sources and loss parameters. Without a seed this is the
/// expectation map (no shadowing); with one, shadow draws follow `params.sigma_db`.
pub fn reconstruct_grid(
    spec: &GridSpec,
    sources: &[TruthSource],
    params: &UrbanPlParams,
    shadow_seed: Option<u64>,
) -> Result<SpectrumGrid> {
    render_grid(spec, sources, params, shadow_seed)
}

/// Mean received power in mW at `position`, handy when checking single cells.
pub fn expected_rss_mw(position: &Point3, sources: &[TruthSource], params: &UrbanPlParams) -> f64 {
    sources
        .iter()
        .map(|s| {
            s.power_watts * 1e3
                * 10f64.powf(-params.mean_loss_db(distance(&s.position, position), position[2]) / 10.0)
        })
        .sum()
}
