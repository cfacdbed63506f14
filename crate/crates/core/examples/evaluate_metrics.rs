//! Scores a reconstruction against the truth: relative error, zone ratios
//! over a threshold sweep, and localization errors under optimal matching.
//!
//! ```text
//! cargo run --release --example evaluate_metrics
//! ```

use specmap::metrics::{zone_curve, LocatedSource, MetricsReport};
use specmap::plfit::reconstruct_grid;
use specmap::scene::TruthSource;
use specmap::synthgen::{generate_truth_grid, table1_scene, UrbanPlParams};

fn main() -> specmap::Result<()> {
    let scene = table1_scene(3)?;
    let truth = generate_truth_grid(&scene, &UrbanPlParams::default_truth(scene.frequency_mhz), 0)?;

    // A deliberately imperfect estimate: free-space model, sources nudged by 10 m.
    let nudged: Vec<TruthSource> = scene
        .sources
        .iter()
        .map(|s| TruthSource::new([s.position[0] + 10.0, s.position[1], s.position[2]], s.power_watts))
        .collect::<specmap::Result<_>>()?;
    let est = reconstruct_grid(&scene.grid, &nudged, &UrbanPlParams::free_space(scene.frequency_mhz), None)?;

    let truth_src = LocatedSource::from_truth(&scene.sources)?;
    let est_src = LocatedSource::from_truth(&nudged)?;
    let report = MetricsReport::evaluate(&est, &truth, &truth_src, Some(&est_src), -20.0)?;
    println!("{}", serde_json::to_string_pretty(&report)?);

    let positions: Vec<_> = scene.sources.iter().map(|s| s.position).collect();
    for (tau, cdzr, fazr) in zone_curve(&est, &truth, &positions, &[-30.0, -25.0, -20.0, -15.0])? {
        println!("tau {tau:>6.1} dBm: CDZR {cdzr:.3} FAZR {fazr:.3}");
    }
    Ok(())
}
