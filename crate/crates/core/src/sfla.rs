//! Joint estimation of source locations, powers and loss coefficients with the
//! shuffled frog leaping algorithm.
//!
//! Each frog carries `K` source parameter blocks. The received power model is
//! `P̂_i = Σ_j η_j P_j d_ij^-α` in mW with distances in meters, and the fitness is
//! the Euclidean norm of the residual against the measured powers.
//!
//! Genome layout, five genes per source: `[log10 η, x, y, z, P (W)]`. Keeping η in
//! log space makes the uniform initialization log-uniform over its range.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{dbm_to_mw, distance, mw_to_dbm, Point3, Sample};
use crate::synthgen::MIN_DISTANCE_M;

pub const GENES_PER_SOURCE: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceEstimate {
    pub eta: f64,
    pub position: Point3,
    pub power_watts: f64,
}

impl SourceEstimate {
    pub fn power_mw(&self) -> f64 {
        self.power_watts * 1e3
    }

    pub fn power_dbm(&self) -> Result<f64> {
        mw_to_dbm(self.power_mw())
    }

    /// `η P` in mW, the only combination the received-power model can identify.
    pub fn amplitude_mw(&self) -> f64 {
        self.eta * self.power_mw()
    }

    /// Same amplitude expressed with `eta_ref` as loss coefficient.
    pub fn with_reference_eta(&self, eta_ref: f64) -> Self {
        Self {
            eta: eta_ref,
            position: self.position,
            power_watts: self.amplitude_mw() / eta_ref / 1e3,
        }
    }

    fn to_genes(self) -> [f64; GENES_PER_SOURCE] {
        [
            self.eta.max(f64::MIN_POSITIVE).log10(),
            self.position[0],
            self.position[1],
            self.position[2],
            self.power_watts,
        ]
    }

    fn from_genes(g: &[f64]) -> Self {
        Self {
            eta: 10f64.powf(g[0]),
            position: [g[1], g[2], g[3]],
            power_watts: g[4],
        }
    }
}

/// Loss coefficient that makes `η P d^-α` match the log-distance model
/// `32.4 + 20 log10 f + 10 α log10(d_km)` at carrier `f_mhz`.
pub fn reference_eta(f_mhz: f64, alpha: f64) -> f64 {
    10f64.powf((30.0 * alpha - 32.4 - 20.0 * f_mhz.log10()) / 10.0)
}

/// Received power predicted by `sources` at `position`, in mW.
pub fn predicted_rss_mw(sources: &[SourceEstimate], position: &Point3, alpha: f64) -> f64 {
    sources
        .iter()
        .map(|s| s.eta * s.power_mw() * distance(&s.position, position).max(MIN_DISTANCE_M).powf(-alpha))
        .sum()
}

/// `sqrt(Σ_i (P_i - P̂_i)²)`, both in mW.
pub fn fitness_of(sources: &[SourceEstimate], samples: &[Sample], alpha: f64) -> f64 {
    samples
        .iter()
        .map(|s| {
            let r = dbm_to_mw(s.rss_dbm) - predicted_rss_mw(sources, &s.position, alpha);
            r * r
        })
        .sum::<f64>()
        .sqrt()
}

/// Residual domain of the fitness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FitnessDomain {
    /// Residuals in mW.
    #[default]
    Linear,
    /// Residuals in dB.
    Db,
}

/// Axis-aligned box in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionBox {
    pub lower: Point3,
    pub upper: Point3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SflaConfig {
    pub population: usize,
    pub memeplexes: usize,
    pub local_iters: usize,
    pub global_iters: usize,
    /// Relative improvement of the best fitness below which a patience window counts as stalled.
    pub tol: f64,
    pub patience: usize,
    /// Minimum step magnitude per gene `[log10 η, x, y, z, P]`.
    pub step_min: [f64; GENES_PER_SOURCE],
    /// Maximum step magnitude per gene; `None` uses a quarter of each search width.
    pub step_max: Option<[f64; GENES_PER_SOURCE]>,
    pub eta_range: (f64, f64),
    /// Location search box; `None` falls back to the bounding box of the samples.
    pub position_box: Option<PositionBox>,
    pub power_max_watts: f64,
    pub alpha: f64,
    pub seed: u64,
    pub domain: FitnessDomain,
    /// Caps the samples entering the fitness. The strongest `strong_fraction`
    /// of the cap is always kept; the rest is a seeded uniform draw from the
    /// remainder.
    pub max_fitness_samples: Option<usize>,
    pub strong_fraction: f64,
    /// Location hints, e.g. cluster centers from source-count detection. When
    /// present, `hint_fraction` of the initial frogs place their sources around
    /// the hints instead of uniformly in the box.
    pub init_hints: Vec<Point3>,
    pub hint_fraction: f64,
    /// Standard deviation of the jitter around a hint, meters.
    pub hint_spread_m: f64,
}

impl Default for SflaConfig {
    fn default() -> Self {
        Self {
            population: 200,
            memeplexes: 20,
            local_iters: 10,
            global_iters: 500,
            tol: 1e-6,
            patience: 50,
            step_min: [0.0; GENES_PER_SOURCE],
            step_max: None,
            eta_range: (1e-6, 1e2),
            position_box: None,
            power_max_watts: 10.0,
            alpha: 2.5,
            seed: 0,
            domain: FitnessDomain::Linear,
            max_fitness_samples: None,
            strong_fraction: 0.0,
            init_hints: Vec::new(),
            hint_fraction: 0.5,
            hint_spread_m: 10.0,
        }
    }
}

impl SflaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.memeplexes < 1 || self.population < self.memeplexes {
            return Err(Error::invalid(format!(
                "need population >= memeplexes >= 1, got P={} M={}",
                self.population, self.memeplexes
            )));
        }
        if self.local_iters < 1 || self.global_iters < 1 {
            return Err(Error::invalid("local and global iteration counts must be >= 1"));
        }
        let (lo, hi) = self.eta_range;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::invalid(format!("eta range ({lo}, {hi}) is empty or non-positive")));
        }
        if !(self.power_max_watts >= 0.0) {
            return Err(Error::invalid("power_max_watts must be >= 0"));
        }
        if let Some(b) = &self.position_box {
            if (0..3).any(|a| !(b.lower[a] <= b.upper[a])) {
                return Err(Error::invalid("position box is empty"));
            }
        }
        if self.step_min.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::invalid("step_min must be non-negative"));
        }
        if let Some(max) = &self.step_max {
            if max.iter().zip(&self.step_min).any(|(hi, lo)| !(hi >= lo)) {
                return Err(Error::invalid("step_min must not exceed step_max"));
            }
        }
        if !(0.0..=1.0).contains(&self.hint_fraction) || !(self.hint_spread_m >= 0.0) {
            return Err(Error::invalid("hint_fraction must lie in [0, 1] and hint_spread_m be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.strong_fraction) {
            return Err(Error::invalid("strong_fraction must lie in [0, 1]"));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::invalid("alpha must be positive"));
        }
        Ok(())
    }
}

/// One candidate solution.
#[derive(Debug, Clone, PartialEq)]
pub struct Frog {
    pub genome: Vec<f64>,
    pub fitness: f64,
}

impl Frog {
    pub fn sources(&self) -> Vec<SourceEstimate> {
        self.genome
            .chunks(GENES_PER_SOURCE)
            .map(SourceEstimate::from_genes)
            .collect()
    }
}

/// Which move replaced the worst frog of a memeplex.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeapOutcome {
    TowardMemeplexBest,
    TowardGlobalBest,
    Replaced,
}

/// Search space, step bounds and the data the fitness is measured against.
#[derive(Debug, Clone)]
pub struct Problem {
    lower: Vec<f64>,
    upper: Vec<f64>,
    step_min: Vec<f64>,
    step_max: Vec<f64>,
    positions: Vec<Point3>,
    measured: Vec<f64>,
    alpha: f64,
    domain: FitnessDomain,
}

impl Problem {
    pub fn new(samples: &[Sample], k: usize, config: &SflaConfig) -> Result<Self> {
        config.validate()?;
        if samples.is_empty() {
            return Err(Error::Empty("samples"));
        }
        if k < 1 {
            return Err(Error::invalid("source count must be >= 1"));
        }
        let pbox = config.position_box.unwrap_or_else(|| sample_box(samples));
        let lo1 = [
            config.eta_range.0.log10(),
            pbox.lower[0],
            pbox.lower[1],
            pbox.lower[2],
            0.0,
        ];
        let hi1 = [
            config.eta_range.1.log10(),
            pbox.upper[0],
            pbox.upper[1],
            pbox.upper[2],
            config.power_max_watts,
        ];
        let smax1: [f64; GENES_PER_SOURCE] = config
            .step_max
            .unwrap_or_else(|| std::array::from_fn(|d| 0.25 * (hi1[d] - lo1[d])));
        let rep = |a: &[f64; GENES_PER_SOURCE]| -> Vec<f64> { a.iter().copied().cycle().take(k * GENES_PER_SOURCE).collect() };
        let (positions, measured) = samples
            .iter()
            .map(|s| {
                let m = match config.domain {
                    FitnessDomain::Linear => dbm_to_mw(s.rss_dbm),
                    FitnessDomain::Db => s.rss_dbm,
                };
                (s.position, m)
            })
            .unzip();
        Ok(Self {
            lower: rep(&lo1),
            upper: rep(&hi1),
            step_min: rep(&config.step_min),
            step_max: rep(&smax1),
            positions,
            measured,
            alpha: config.alpha,
            domain: config.domain,
        })
    }

    pub fn dims(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, genome: &[f64]) -> bool {
        genome
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(g, (lo, hi))| g >= lo && g <= hi)
    }

    pub fn fitness(&self, genome: &[f64]) -> f64 {
        let k = genome.len() / GENES_PER_SOURCE;
        // amplitude ηP in mW and position per source
        let mut amp = Vec::with_capacity(k);
        for g in genome.chunks(GENES_PER_SOURCE) {
            amp.push((10f64.powf(g[0]) * g[4] * 1e3, [g[1], g[2], g[3]]));
        }
        let half_alpha = -0.5 * self.alpha;
        let inverse_square = self.alpha == 2.0;
        let min_d2 = MIN_DISTANCE_M * MIN_DISTANCE_M;
        let mut acc = 0.0;
        for (p, &m) in self.positions.iter().zip(&self.measured) {
            let mut pred = 0.0;
            for (a, s) in &amp {
                let dx = p[0] - s[0];
                let dy = p[1] - s[1];
                let dz = p[2] - s[2];
                let d2 = (dx * dx + dy * dy + dz * dz).max(min_d2);
                pred += if inverse_square { a / d2 } else { a * d2.powf(half_alpha) };
            }
            let r = match self.domain {
                FitnessDomain::Linear => m - pred,
                FitnessDomain::Db => m - 10.0 * pred.max(1e-300).log10(),
            };
            acc += r * r;
        }
        acc.sqrt()
    }

    pub fn random_frog<R: Rng>(&self, rng: &mut R) -> Frog {
        let genome: Vec<f64> = self
            .lower
            .iter()
            .zip(&self.upper)
            .map(|(&lo, &hi)| if hi > lo { rng.random_range(lo..=hi) } else { lo })
            .collect();
        let fitness = self.fitness(&genome);
        Frog { genome, fitness }
    }

    /// A frog whose source `j` sits near `hints[(j + offset) % hints.len()]`.
    pub fn hinted_frog<R: Rng>(&self, hints: &[Point3], offset: usize, spread: f64, rng: &mut R) -> Frog {
        let mut frog = self.random_frog(rng);
        if hints.is_empty() {
            return frog;
        }
        let jitter = Normal::new(0.0, spread.max(f64::MIN_POSITIVE)).expect("spread is finite");
        for (j, block) in frog.genome.chunks_mut(GENES_PER_SOURCE).enumerate() {
            let hint = hints[(j + offset) % hints.len()];
            for a in 0..3 {
                let d = j * GENES_PER_SOURCE + 1 + a;
                block[1 + a] = (hint[a] + jitter.sample(rng)).clamp(self.lower[d], self.upper[d]);
            }
        }
        frog.fitness = self.fitness(&frog.genome);
        frog
    }

    /// `from + clip(λ (toward - from))`, projected into the search box.
    pub fn leap(&self, from: &[f64], toward: &[f64], lambda: f64) -> Vec<f64> {
        (0..from.len())
            .map(|d| {
                let raw = lambda * (toward[d] - from[d]);
                let mag = raw.abs();
                let step = if mag == 0.0 {
                    0.0
                } else {
                    raw.signum() * mag.clamp(self.step_min[d], self.step_max[d])
                };
                (from[d] + step).clamp(self.lower[d], self.upper[d])
            })
            .collect()
    }

    /// One update of the worst frog in `memeplex`.
    pub fn leap_worst<R: Rng>(
        &self,
        memeplex: &mut [Frog],
        global_best: &Frog,
        rng: &mut R,
    ) -> LeapOutcome {
        let (best, worst) = extremes(memeplex);
        let lambda: f64 = rng.random();
        let candidate = self.leap(&memeplex[worst].genome, &memeplex[best].genome, lambda);
        let fit = self.fitness(&candidate);
        if fit < memeplex[worst].fitness {
            memeplex[worst] = Frog {
                genome: candidate,
                fitness: fit,
            };
            return LeapOutcome::TowardMemeplexBest;
        }
        let lambda: f64 = rng.random();
        let candidate = self.leap(&memeplex[worst].genome, &global_best.genome, lambda);
        let fit = self.fitness(&candidate);
        if fit < memeplex[worst].fitness {
            memeplex[worst] = Frog {
                genome: candidate,
                fitness: fit,
            };
            return LeapOutcome::TowardGlobalBest;
        }
        memeplex[worst] = self.random_frog(rng);
        LeapOutcome::Replaced
    }
}

fn sample_box(samples: &[Sample]) -> PositionBox {
    let mut lower = [f64::INFINITY; 3];
    let mut upper = [f64::NEG_INFINITY; 3];
    for s in samples {
        for a in 0..3 {
            lower[a] = lower[a].min(s.position[a]);
            upper[a] = upper[a].max(s.position[a]);
        }
    }
    PositionBox { lower, upper }
}

/// Indices of the best and worst frog; ties resolve to the lowest index.
fn extremes(frogs: &[Frog]) -> (usize, usize) {
    let mut best = 0;
    let mut worst = 0;
    for (i, f) in frogs.iter().enumerate() {
        if f.fitness < frogs[best].fitness {
            best = i;
        }
        if f.fitness > frogs[worst].fitness {
            worst = i;
        }
    }
    (best, worst)
}

/// Round-robin deal of ranks into `m` groups: rank 1 → group 1, …, rank m+1 → group 1.
/// Returns rank indices (0-based) per group.
pub fn partition_memeplexes(population: usize, m: usize) -> Result<Vec<Vec<usize>>> {
    if m == 0 || m > population {
        return Err(Error::invalid(format!(
            "cannot split {population} frogs into {m} memeplexes"
        )));
    }
    let mut groups = vec![Vec::with_capacity(population.div_ceil(m)); m];
    for rank in 0..population {
        groups[rank % m].push(rank);
    }
    Ok(groups)
}

/// `local_iters` leaps on one memeplex, keeping `global_best` current.
pub fn local_step<R: Rng>(
    problem: &Problem,
    memeplex: &mut [Frog],
    global_best: &mut Frog,
    rng: &mut R,
    local_iters: usize,
) -> Vec<LeapOutcome> {
    let mut outcomes = Vec::with_capacity(local_iters);
    if memeplex.is_empty() {
        return outcomes;
    }
    for _ in 0..local_iters {
        outcomes.push(problem.leap_worst(memeplex, global_best, rng));
        for f in memeplex.iter() {
            if f.fitness < global_best.fitness {
                *global_best = f.clone();
            }
        }
    }
    outcomes
}

#[derive(Debug, Clone)]
pub struct SflaResult {
    /// Sorted by descending power, then position.
    pub sources: Vec<SourceEstimate>,
    /// Fitness of `sources` over every input sample.
    pub fitness: f64,
    /// Best fitness after initialization and after each global iteration.
    pub trace: Vec<f64>,
    pub iterations: usize,
}

fn fitness_subset(samples: &[Sample], cap: Option<usize>, strong_fraction: f64, seed: u64) -> Vec<Sample> {
    let cap = match cap {
        Some(c) if c < samples.len() => c.max(1),
        _ => return samples.to_vec(),
    };
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| samples[b].rss_dbm.total_cmp(&samples[a].rss_dbm).then(a.cmp(&b)));
    let strong = ((cap as f64 * strong_fraction).ceil() as usize).min(cap);
    let mut keep: Vec<usize> = order[..strong].to_vec();
    let rest = &order[strong..];
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_f00d);
    let picked = rand::seq::index::sample(&mut rng, rest.len(), cap - strong);
    keep.extend(picked.iter().map(|i| rest[i]));
    keep.sort_unstable();
    keep.into_iter().map(|i| samples[i]).collect()
}

fn sort_sources(sources: &mut [SourceEstimate]) {
    sources.sort_by(|a, b| {
        b.power_watts
            .total_cmp(&a.power_watts)
            .then_with(|| a.position[0].total_cmp(&b.position[0]))
            .then_with(|| a.position[1].total_cmp(&b.position[1]))
            .then_with(|| a.position[2].total_cmp(&b.position[2]))
    });
}

/// Best `k`-source parameter set for `samples`.
pub fn estimate_parameters(samples: &[Sample], k: usize, config: &SflaConfig) -> Result<SflaResult> {
    let fit_samples = fitness_subset(samples, config.max_fitness_samples, config.strong_fraction, config.seed);
    let problem = Problem::new(&fit_samples, k, config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let hinted = if config.init_hints.is_empty() {
        0
    } else {
        (config.hint_fraction * config.population as f64).round() as usize
    };
    let mut population: Vec<Frog> = (0..config.population)
        .map(|s| {
            if s < hinted {
                problem.hinted_frog(&config.init_hints, s, config.hint_spread_m, &mut rng)
            } else {
                problem.random_frog(&mut rng)
            }
        })
        .collect();
    let mut best = population
        .iter()
        .min_by(|a, b| a.fitness.total_cmp(&b.fitness))
        .cloned()
        .expect("population is non-empty");
    let mut trace = vec![best.fitness];
    let groups = partition_memeplexes(config.population, config.memeplexes)?;
    let mut iterations = 0;

    for it in 0..config.global_iters {
        population.sort_by(|a, b| a.fitness.total_cmp(&b.fitness));
        let mut slots: Vec<Option<Frog>> = population.into_iter().map(Some).collect();
        let mut shuffled = Vec::with_capacity(slots.len());
        for group in &groups {
            let mut memeplex: Vec<Frog> = group.iter().map(|&r| slots[r].take().expect("ranks are disjoint")).collect();
            local_step(&problem, &mut memeplex, &mut best, &mut rng, config.local_iters);
            shuffled.extend(memeplex);
        }
        population = shuffled;
        trace.push(best.fitness);
        iterations = it + 1;

        if iterations > config.patience {
            let then = trace[iterations - config.patience];
            if then - best.fitness <= config.tol * then.abs().max(f64::MIN_POSITIVE) {
                break;
            }
        }
    }

    let mut sources = best.sources();
    sort_sources(&mut sources);
    let fitness = match config.domain {
        FitnessDomain::Linear => fitness_of(&sources, samples, config.alpha),
        FitnessDomain::Db => {
            let full = Problem::new(samples, k, config)?;
            let genome: Vec<f64> = sources.iter().flat_map(|s| s.to_genes()).collect();
            full.fitness(&genome)
        }
    };
    Ok(SflaResult {
        sources,
        fitness,
        trace,
        iterations,
    })
}
