//! Acceptance suite. Each criterion prints one `PASS`/`FAIL` line with its
//! measurement and wall time; the process exits non-zero when any criterion
//! fails.
//!
//! ```text
//! cargo test --release --test acceptance
//! cargo test --release --test acceptance -- 1 3 7   # a subset
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use ndarray::Array3;
use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use specmap::baselines::{halrtc_reconstruct, HalrtcConfig};
use specmap::experiment::{run_sweep, sampling_seed, write_sweep_outputs, ExperimentConfig, Method, SweepOutcome};
use specmap::metrics::{cdzr_fazr, detection_success_rate, loc_error, rmse, zone_partition, LocatedSource};
use specmap::mmpld::{pld_vector, ClusteringState};
use specmap::plfit::{fit_pl_params, reconstruct_grid, PlFitConfig};
use specmap::sampler::{draw_samples, SamplingPlan};
use specmap::scene::{distance, GridSpec, Sample, Scene, SpectrumGrid, TruthSource};
use specmap::sfla::{estimate_parameters, fitness_of, reference_eta, SflaConfig, SourceEstimate};
use specmap::synthgen::{generate_truth_grid, table1_scene, UrbanPlParams};

type Check = Result<(bool, String), String>;

fn data(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(rel)
}

fn load_config(name: &str) -> Result<ExperimentConfig, String> {
    ExperimentConfig::load(data(&format!("configs/{name}"))).map_err(|e| e.to_string())
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// 1. MMPLD bookkeeping against a brute-force recomputation.
fn mmpld_bookkeeping() -> Check {
    let f = 100.0;
    let free_space = |a: &Sample, b: &Sample| 32.4 + 20.0 * f64::log10(f) + 20.0 * (distance(&a.position, &b.position).max(1.0) / 1000.0).log10();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut checked = 0usize;
    for _ in 0..200 {
        let n = rng.random_range(6..=100);
        let samples: Vec<Sample> = (0..n)
            .map(|_| Sample {
                position: [rng.random_range(0.0..500.0), rng.random_range(-450.0..50.0), rng.random_range(1.0..100.0)],
                rss_dbm: rng.random_range(-120.0..20.0),
            })
            .collect();
        let first = (0..n).fold(0, |b, i| if samples[i].rss_dbm > samples[b].rss_dbm { i } else { b });
        let mut st = ClusteringState::new(first, pld_vector(&samples, first, f).map_err(err)?, (0.0, 0.0)).map_err(err)?;
        while st.k() < 5 {
            let c = st.select_next_center().map_err(err)?;
            st.update_and_assign(c, pld_vector(&samples, c, f).map_err(err)?).map_err(err)?;
            for i in 0..n {
                let (d, m) = match st.centers.iter().position(|&c| c == i) {
                    Some(m) => (0.0, m),
                    None => st.centers.iter().enumerate().fold((f64::INFINITY, 0), |(bd, bm), (m, &c)| {
                        let delta = (free_space(&samples[c], &samples[i]) - (samples[c].rss_dbm - samples[i].rss_dbm).abs()).abs();
                        if delta < bd {
                            (delta, m)
                        } else {
                            (bd, bm)
                        }
                    }),
                };
                if st.d_min[i] != d || st.assignment[i] != m {
                    return Ok((false, format!("sample {i} of {n}: d_min {} vs {d}, class {} vs {m}", st.d_min[i], st.assignment[i])));
                }
                checked += 1;
            }
        }
    }
    Ok((true, format!("{checked} (sample, step) pairs match exactly over 200 random sets")))
}

// 2. SFLA fitness versus an exhaustive grid-search oracle.
fn sfla_oracle() -> Check {
    let alpha = 2.0;
    let scene = Scene {
        grid: GridSpec::new([0.0; 3], [100.0, 100.0, 10.0], [20, 20, 5]).map_err(err)?,
        sources: vec![TruthSource::new([47.3, 61.8, 2.0], 1.0).map_err(err)?],
        frequency_mhz: 100.0,
    };
    let truth = generate_truth_grid(&scene, &UrbanPlParams::new(alpha, 0.0, 0.0, 100.0).map_err(err)?, 0).map_err(err)?;
    let eta = reference_eta(100.0, alpha);
    let powers: Vec<f64> = (0..10).map(|i| 10f64.powf(-1.0 + 2.0 * i as f64 / 9.0)).collect();
    let cells: Vec<_> = scene.grid.indices().map(|c| scene.grid.cell_center(c)).collect::<Result<_, _>>().map_err(err)?;

    let mut wins = 0;
    let mut detail = Vec::new();
    for seed in 0..10u64 {
        let draw = draw_samples(&truth, &SamplingPlan::new(0.1, seed).map_err(err)?).map_err(err)?;
        assert_eq!(draw.samples.len(), 200);
        let oracle = cells
            .iter()
            .flat_map(|&position| powers.iter().map(move |&power_watts| SourceEstimate { eta, position, power_watts }))
            .map(|s| fitness_of(&[s], &draw.samples, alpha))
            .fold(f64::INFINITY, f64::min);
        let config = SflaConfig { alpha, seed, ..SflaConfig::default() };
        let found = estimate_parameters(&draw.samples, 1, &config).map_err(err)?;
        wins += usize::from(found.fitness <= oracle);
        detail.push(format!("{:.2e}/{:.2e}", found.fitness, oracle));
    }
    Ok((wins >= 9, format!("SFLA <= oracle in {wins}/10 seeds (sfla/oracle: {})", detail.join(" "))))
}

// 3. Path-loss fit round trip with known sources.
fn plfit_round_trip() -> Check {
    let scene = table1_scene(3).map_err(err)?;
    let params = UrbanPlParams::new(2.5, -0.1, 0.0, scene.frequency_mhz).map_err(err)?;
    let truth = generate_truth_grid(&scene, &params, 0).map_err(err)?;
    let draw = draw_samples(&truth, &SamplingPlan::new(0.2, 0).map_err(err)?).map_err(err)?;
    let fit = fit_pl_params(&draw.samples, &scene.sources, scene.frequency_mhz, &PlFitConfig::default()).map_err(err)?;
    let rel_a = ((fit.params.a - 2.5) / 2.5).abs();
    let rel_b = ((fit.params.b + 0.1) / 0.1).abs();
    let rebuilt = reconstruct_grid(&scene.grid, &scene.sources, &fit.params, None).map_err(err)?;
    let max_err = rebuilt.values().iter().zip(truth.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok((
        rel_a <= 0.01 && rel_b <= 0.01 && max_err <= 1e-3,
        format!("A={:.5} ({:.1e} rel) B={:.5} ({:.1e} rel), max map error {max_err:.1e} dB", fit.params.a, rel_a, fit.params.b, rel_b),
    ))
}

fn rmse_means(outcome: &SweepOutcome) -> BTreeMap<(Method, usize, u64), f64> {
    outcome
        .aggregates
        .iter()
        .filter_map(|a| a.rmse_mean.map(|m| ((a.method, a.k_true, (a.rate * 1000.0).round() as u64), m)))
        .collect()
}

/// Counts adjacent increases; returns (violations, all within tolerance).
fn increases(seq: &[f64], rel_tol: f64) -> (usize, bool) {
    let ups: Vec<f64> = seq.windows(2).filter(|w| w[1] > w[0]).map(|w| (w[1] - w[0]) / w[0]).collect();
    (ups.len(), ups.iter().all(|&u| u <= rel_tol))
}

// 4. Rate sweep trend and method ordering.
fn rate_trend(outcome: &SweepOutcome, config: &ExperimentConfig) -> Check {
    if outcome.failures() > 0 {
        return Ok((false, format!("{} failed rows", outcome.failures())));
    }
    let means = rmse_means(outcome);
    let mut ok = true;
    let mut parts = Vec::new();
    for &m in &config.methods {
        let seq: Vec<f64> = config.rates.iter().filter_map(|r| means.get(&(m, 3, (r * 1000.0).round() as u64)).copied()).collect();
        let (ups, small) = increases(&seq, 0.05);
        let fine = if m.is_model_driven() { ups == 0 || (ups == 1 && small) } else { ups == 0 };
        ok &= fine && seq.len() == config.rates.len();
        parts.push(format!("{m} [{}]{}", seq.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join(" "), if fine { "" } else { " not monotone" }));
    }
    let at = |m| means.get(&(m, 3, 200)).copied().unwrap_or(f64::NAN);
    let (s, f, i, h) = (at(Method::Slpm), at(Method::Fspm), at(Method::Idw), at(Method::Halrtc));
    let slpm_fspm = s <= f;
    let fspm_base = f <= i.max(h);
    ok &= slpm_fspm && fspm_base;
    parts.push(format!(
        "r=0.2: SLPM {s:.3} <= FSPM {f:.3} {}; FSPM <= max(IDW {i:.3}, HaLRTC {h:.3}) {}",
        if slpm_fspm { "holds" } else { "violated" },
        if fspm_base { "holds" } else { "violated" }
    ));
    Ok((ok, parts.join("; ")))
}

// 5. Source-count trend at r = 0.2.
fn source_trend() -> Check {
    let config = load_config("fig5_source_sweep.json")?;
    let outcome = run_sweep(&config).map_err(err)?;
    if outcome.failures() > 0 {
        return Ok((false, format!("{} failed rows", outcome.failures())));
    }
    let means = rmse_means(&outcome);
    let mut ok = true;
    let mut parts = Vec::new();
    for m in [Method::Slpm, Method::Fspm] {
        let seq: Vec<f64> = [2, 3, 4].iter().filter_map(|&k| means.get(&(m, k, 200)).copied()).collect();
        let fine = seq.len() == 3 && seq.windows(2).all(|w| w[1] >= w[0]);
        ok &= fine;
        parts.push(format!("{m} K=2,3,4: [{}]{}", seq.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join(" "), if fine { "" } else { " decreases" }));
    }
    Ok((ok, parts.join("; ")))
}

// 6. Detection success rate with the shipped detection config.
fn detection_rate() -> Check {
    let config = load_config("fig10_detection.json")?;
    let (label, scene) = config.scenes[0].load(config.base_dir.as_deref()).map_err(err)?;
    let params = config.truth.params(scene.frequency_mhz).map_err(err)?;
    if params.sigma_db > 2.0 {
        return Ok((false, format!("shipped config uses sigma {} dB", params.sigma_db)));
    }
    let k_true = scene.sources.len();
    let mut ok = true;
    let mut parts = Vec::new();
    for &rate in &config.rates {
        let mut trials = Vec::new();
        for &seed in &config.seeds {
            let truth = generate_truth_grid(&scene, &params, seed).map_err(err)?;
            let draw = draw_samples(&truth, &SamplingPlan::new(rate, sampling_seed(seed)).map_err(err)?).map_err(err)?;
            let det = specmap::mmpld::detect_source_count(&draw.samples, scene.frequency_mhz, &config.mmpld).map_err(err)?;
            trials.push((det.k, k_true));
        }
        let success = detection_success_rate(&trials).map_err(err)?;
        ok &= success >= 0.7;
        parts.push(format!("r={rate}: {success:.1}"));
    }
    Ok((ok, format!("{label}, sigma {} dB, {} seeds: {}", params.sigma_db, config.seeds.len(), parts.join(" "))))
}

fn random_grid(rng: &mut ChaCha8Rng, spec: &GridSpec) -> SpectrumGrid {
    let (nx, ny, nz) = spec.shape();
    let values = Array3::from_shape_fn((nx, ny, nz), |_| rng.random_range(-110.0..0.0));
    SpectrumGrid::from_values(*spec, values).expect("shape matches")
}

// 7. Metric identities as properties.
fn metric_identities() -> Check {
    let mut runner = TestRunner::new(PropConfig { cases: 128, ..PropConfig::default() });
    let strategy = (any::<u64>(), 2usize..7, 1usize..5, -100.0f64..-10.0);
    let result = runner.run(&strategy, |(seed, n, k, tau)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = GridSpec::new([0.0; 3], [50.0, 50.0, 20.0], [n, n + 1, 3]).unwrap();
        let g = random_grid(&mut rng, &spec);
        prop_assert_eq!(rmse(&g, &g).unwrap(), 0.0);

        let sources: Vec<LocatedSource> = (0..k)
            .map(|_| LocatedSource {
                position: [rng.random_range(0.0..50.0), rng.random_range(0.0..50.0), rng.random_range(0.0..20.0)],
                power_dbm: rng.random_range(0.0..40.0),
            })
            .collect();
        let positions: Vec<_> = sources.iter().map(|s| s.position).collect();
        let zones = zone_partition(&g, &positions, tau).unwrap();
        let cmp = cdzr_fazr(&zones, &zones).unwrap();
        prop_assert!((cmp.cdzr - (k - cmp.cdzr_skipped.len()) as f64).abs() < 1e-12);
        prop_assert_eq!(cmp.fazr, 0.0);

        let mut shuffled = sources.clone();
        shuffled.rotate_left(seed as usize % k);
        shuffled.swap(0, k - 1);
        let est: Vec<LocatedSource> = sources
            .iter()
            .map(|s| LocatedSource { position: [s.position[0] + 3.0, s.position[1], s.position[2]], ..*s })
            .collect();
        let a = loc_error(&est, &sources).unwrap();
        let b = loc_error(&est, &shuffled).unwrap();
        prop_assert!((a - b).abs() < 1e-9, "{} vs {}", a, b);
        Ok(())
    });
    match result {
        Ok(()) => Ok((true, "rmse(g,g)=0, perfect CDZR=K-skipped and FAZR=0, LOC_E permutation invariant over 128 cases".into())),
        Err(e) => Ok((false, e.to_string())),
    }
}

// 8. HaLRTC on a rank-1 tensor with half the entries observed.
fn halrtc_rank_one() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (a, b, c): (Vec<f64>, Vec<f64>, Vec<f64>) = (
        (0..20).map(|_| rng.random_range(0.5..1.5)).collect(),
        (0..20).map(|_| rng.random_range(0.5..1.5)).collect(),
        (0..10).map(|_| rng.random_range(0.5..1.5)).collect(),
    );
    let full = Array3::from_shape_fn((20, 20, 10), |(i, j, k)| a[i] * b[j] * c[k]);
    let mask = Array3::from_shape_fn((20, 20, 10), |_| rng.random_bool(0.5));
    let spec = GridSpec::new([0.0; 3], [20.0, 20.0, 10.0], [20, 20, 10]).map_err(err)?;
    let observed = SpectrumGrid::with_mask(spec, full.clone(), mask.clone()).map_err(err)?;
    let out = halrtc_reconstruct(&observed, &HalrtcConfig::default()).map_err(err)?;
    let diff = (out.grid.values() - &full).mapv(|x| x * x).sum().sqrt();
    let rel = diff / full.mapv(|x| x * x).sum().sqrt();
    let exact = out.grid.values().iter().zip(full.iter()).zip(mask.iter()).all(|((x, y), &m)| !m || x == y);
    Ok((
        rel <= 1e-3 && exact,
        format!("relative error {rel:.2e} after {} iterations, observed entries exact: {exact}", out.iterations),
    ))
}

fn strip_wall_time(csv_text: &str) -> String {
    let mut lines = csv_text.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
    let wall = header.iter().position(|h| *h == "wall_ms");
    let keep = |line: &str| -> String {
        line.split(',').enumerate().filter(|(i, _)| Some(*i) != wall).map(|(_, v)| v).collect::<Vec<_>>().join(",")
    };
    std::iter::once(keep(&header.join(","))).chain(lines.map(keep)).collect::<Vec<_>>().join("\n")
}

fn metric_files(dir: &Path) -> Result<BTreeMap<String, String>, String> {
    let mut files = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(err)? {
        let path = entry.map_err(err)?.path();
        if path.extension().is_some_and(|e| e == "csv") {
            let name = path.file_name().unwrap().to_string_lossy().into_owned();
            files.insert(name, strip_wall_time(&std::fs::read_to_string(&path).map_err(err)?));
        }
    }
    Ok(files)
}

// 9. Two runs of one sweep config produce byte-identical metric CSVs.
fn determinism() -> Check {
    let config = load_config("smoke.json")?;
    let tmp = tempfile::tempdir().map_err(err)?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let outcome = run_sweep(&config).map_err(err)?;
        write_sweep_outputs(&config, &outcome, dir).map_err(err)?;
    }
    let (fa, fb) = (metric_files(&a)?, metric_files(&b)?);
    let differing: Vec<&String> = fa.keys().filter(|k| fa.get(*k) != fb.get(*k)).collect();
    let ok = differing.is_empty() && fa.len() == fb.len();
    Ok((
        ok,
        if ok { format!("{} CSV files identical excluding wall_ms", fa.len()) } else { format!("differing: {differing:?}") },
    ))
}

struct Report {
    failed: Vec<u32>,
}

impl Report {
    fn record(&mut self, id: u32, name: &str, budget: Duration, start: Instant, check: Check) {
        let elapsed = start.elapsed();
        let (pass, detail) = match check {
            Ok((pass, detail)) => (pass && elapsed <= budget, detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            self.failed.push(id);
        }
        let status = if pass { "PASS" } else { "FAIL" };
        println!("criterion {id} {status} {name} ({:.1} s of {} s): {detail}", elapsed.as_secs_f64(), budget.as_secs());
    }
}

fn main() {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let run = |id: u32| wanted.is_empty() || wanted.contains(&id);
    let mut report = Report { failed: Vec::new() };
    let secs = Duration::from_secs;

    if run(1) {
        let t = Instant::now();
        report.record(1, "mmpld brute-force bookkeeping", secs(1), t, mmpld_bookkeeping());
    }
    if run(2) {
        let t = Instant::now();
        report.record(2, "sfla vs grid-search oracle", secs(60), t, sfla_oracle());
    }
    if run(3) {
        let t = Instant::now();
        report.record(3, "path-loss fit round trip", secs(10), t, plfit_round_trip());
    }
    if run(4) {
        let t = Instant::now();
        let check = load_config("fig4_rate_sweep.json")
            .and_then(|c| run_sweep(&c).map(|o| (c, o)).map_err(err))
            .and_then(|(c, o)| rate_trend(&o, &c));
        report.record(4, "rate sweep trend and ordering", secs(15 * 60), t, check);
    }
    if run(5) {
        let t = Instant::now();
        report.record(5, "source-count trend", secs(15 * 60), t, source_trend());
    }
    if run(6) {
        let t = Instant::now();
        report.record(6, "detection success rate", secs(20 * 60), t, detection_rate());
    }
    if run(7) {
        let t = Instant::now();
        report.record(7, "metric identities", secs(5), t, metric_identities());
    }
    if run(8) {
        let t = Instant::now();
        report.record(8, "HaLRTC rank-1 recovery", secs(30), t, halrtc_rank_one());
    }
    if run(9) {
        let t = Instant::now();
        report.record(9, "sweep determinism", secs(5 * 60), t, determinism());
    }

    if report.failed.is_empty() {
        println!("acceptance: all selected criteria pass");
    } else {
        println!("acceptance: failing criteria {:?}", report.failed);
        std::process::exit(1);
    }
}
