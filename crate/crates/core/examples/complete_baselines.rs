//! Fills a sparsely observed map with the two data-driven baselines:
//! inverse distance weighting and low-rank tensor completion.
//!
//! ```text
//! cargo run --release --example complete_baselines -- [RATE]
//! ```

use std::time::Instant;

use specmap::baselines::{halrtc_reconstruct, idw_reconstruct, HalrtcConfig, IdwConfig};
use specmap::metrics::{rms_db_error, rmse};
use specmap::sampler::{draw_samples, SamplingPlan};
use specmap::synthgen::{generate_truth_grid, table1_scene, UrbanPlParams};

fn main() -> specmap::Result<()> {
    let rate: f64 = std::env::args().nth(1).map_or(Ok(0.2), |s| s.parse()).expect("rate must be a number");
    let scene = table1_scene(3)?;
    let truth = generate_truth_grid(&scene, &UrbanPlParams::default_truth(scene.frequency_mhz), 0)?;
    let draw = draw_samples(&truth, &SamplingPlan::new(rate, 0)?)?;

    let t = Instant::now();
    let idw = idw_reconstruct(&draw.samples, truth.spec(), &IdwConfig::default())?;
    println!(
        "IDW     rmse {:.4}  rms {:.2} dB  {:?}",
        rmse(&idw, &truth)?,
        rms_db_error(&idw, &truth)?,
        t.elapsed()
    );

    let t = Instant::now();
    let out = halrtc_reconstruct(&draw.observed, &HalrtcConfig::default())?;
    println!(
        "HaLRTC  rmse {:.4}  rms {:.2} dB  {:?}, {} iterations, converged {}",
        rmse(&out.grid, &truth)?,
        rms_db_error(&out.grid, &truth)?,
        t.elapsed(),
        out.iterations,
        out.converged
    );
    Ok(())
}
