//! Learns the urban path-loss parameters from samples of a noise-free map
//! with known sources, then rebuilds the full map from the fitted model.
//!
//! ```text
//! cargo run --release --example fit_path_loss
//! ```

use specmap::plfit::{fit_pl_params, reconstruct_grid, PlFitConfig};
use specmap::sampler::{draw_samples, SamplingPlan};
use specmap::synthgen::{generate_truth_grid, table1_scene, UrbanPlParams};

fn main() -> specmap::Result<()> {
    let scene = table1_scene(2)?;
    let truth_params = UrbanPlParams::new(2.5, -0.1, 0.0, scene.frequency_mhz)?;
    let truth = generate_truth_grid(&scene, &truth_params, 0)?;
    let draw = draw_samples(&truth, &SamplingPlan::new(0.1, 5)?)?;

    let fit = fit_pl_params(&draw.samples, &scene.sources, scene.frequency_mhz, &PlFitConfig::default())?;
    println!(
        "A={:.5} B={:.5} sigma={:.2e} dB ({} iterations, converged {})",
        fit.params.a, fit.params.b, fit.params.sigma_db, fit.iterations, fit.converged
    );

    let rebuilt = reconstruct_grid(&scene.grid, &scene.sources, &fit.params, None)?;
    let worst = rebuilt
        .values()
        .iter()
        .zip(truth.values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!("max reconstruction error {worst:.2e} dB");
    Ok(())
}
