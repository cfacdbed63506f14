//! Locates sources with the shuffled frog leaping search and compares the
//! estimates with the scene truth.
//!
//! ```text
//! cargo run --release --example localize_sources
//! ```

use specmap::mmpld::{detect_source_count, MmpldConfig};
use specmap::sampler::{draw_samples, SamplingPlan};
use specmap::scene::distance;
use specmap::sfla::{estimate_parameters, reference_eta, FitnessDomain, SflaConfig};
use specmap::synthgen::{generate_truth_grid, table1_scene, UrbanPlParams};

fn main() -> specmap::Result<()> {
    let scene = table1_scene(3)?;
    let truth = generate_truth_grid(&scene, &UrbanPlParams::default_truth(scene.frequency_mhz), 3)?;
    let draw = draw_samples(&truth, &SamplingPlan::new(0.2, 3)?)?;

    let det = detect_source_count(&draw.samples, scene.frequency_mhz, &MmpldConfig::default())?;
    let config = SflaConfig {
        alpha: 2.0,
        domain: FitnessDomain::Db,
        max_fitness_samples: Some(5000),
        hint_fraction: 1.0,
        init_hints: det.state.centers.iter().map(|&c| det.samples[c].position).collect(),
        seed: 11,
        ..SflaConfig::default()
    };
    let result = estimate_parameters(&draw.samples, det.k, &config)?;
    println!(
        "k={} fitness {:.3} after {} shuffles",
        det.k, result.fitness, result.iterations
    );

    let eta = reference_eta(scene.frequency_mhz, config.alpha);
    for est in &result.sources {
        let est = est.with_reference_eta(eta);
        let nearest = scene
            .sources
            .iter()
            .map(|t| distance(&t.position, &est.position))
            .fold(f64::INFINITY, f64::min);
        println!(
            "estimate {:?} m, {:.1} dBm, {nearest:.1} m from the nearest true source",
            est.position.map(|x| x.round()),
            est.power_dbm()?
        );
    }
    Ok(())
}
