//! Draws uniform samples from a truth map at several rates and shows how the
//! observed-cell mask and the sample list line up.
//!
//! ```text
//! cargo run --release --example sample_grid
//! ```

use specmap::sampler::{draw_samples, SamplingPlan};
use specmap::synthgen::{generate_truth_grid, table1_scene, UrbanPlParams};

fn main() -> specmap::Result<()> {
    let scene = table1_scene(3)?;
    let truth = generate_truth_grid(&scene, &UrbanPlParams::default_truth(scene.frequency_mhz), 1)?;

    for rate in [0.1, 0.2, 0.3, 0.4, 0.5] {
        let plan = SamplingPlan::new(rate, 42)?;
        let draw = draw_samples(&truth, &plan)?;
        let mean = draw.samples.iter().map(|s| s.rss_dbm).sum::<f64>() / draw.samples.len() as f64;
        println!(
            "r={rate:.1}: {} samples ({} cells masked), mean RSS {mean:.2} dBm",
            draw.samples.len(),
            draw.observed.observed_count()
        );
    }

    let again = draw_samples(&truth, &SamplingPlan::new(0.2, 42)?)?;
    let first = &again.samples[0];
    println!("first sample at {:?}: {:.2} dBm", first.position, first.rss_dbm);
    Ok(())
}
