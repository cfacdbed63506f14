//! Counts radiation sources with max-min path-loss-difference clustering and
//! prints the criterion trace next to the chosen centers.
//!
//! ```text
//! cargo run --release --example detect_sources -- [K] [RATE]
//! ```

use specmap::mmpld::{detect_source_count, MmpldConfig};
use specmap::sampler::{draw_samples, SamplingPlan};
use specmap::synthgen::{generate_truth_grid, table1_scene, UrbanPlParams};

fn main() -> specmap::Result<()> {
    let mut args = std::env::args().skip(1);
    let k: usize = args.next().map_or(Ok(3), |s| s.parse()).expect("K must be an integer");
    let rate: f64 = args.next().map_or(Ok(0.3), |s| s.parse()).expect("rate must be a number");

    let scene = table1_scene(k)?;
    let params = UrbanPlParams::new(2.5, -0.1, 2.0, scene.frequency_mhz)?;
    let config = MmpldConfig::default();

    let mut hits = 0;
    for seed in 0..10 {
        let truth = generate_truth_grid(&scene, &params, seed)?;
        let draw = draw_samples(&truth, &SamplingPlan::new(rate, seed)?)?;
        let det = detect_source_count(&draw.samples, scene.frequency_mhz, &config)?;
        hits += usize::from(det.k == k);
        if seed == 0 {
            for (n, w) in det.criterion_trace() {
                println!("criterion at {n} centers: {w:.4}");
            }
            for &c in &det.state.centers {
                println!("center {:?}", det.samples[c].position);
            }
        }
        println!("seed {seed}: detected {} (true {k})", det.k);
    }
    println!("success rate {:.1}", hits as f64 / 10.0);
    Ok(())
}
