//! Runs an experiment sweep from a JSON config and writes the result tables.
//! Without arguments a small two-rate, two-seed sweep over all methods runs.
//!
//! ```text
//! cargo run --release --example run_sweep -- [CONFIG.json] [OUT_DIR]
//! ```

use std::path::PathBuf;

use specmap::experiment::{run_sweep, write_sweep_outputs, ExperimentConfig, Method, SceneRef};
use specmap::sfla::FitnessDomain;

fn main() -> specmap::Result<()> {
    let mut args = std::env::args().skip(1);
    let config = match args.next() {
        Some(path) => ExperimentConfig::load(path)?,
        None => {
            let mut c = ExperimentConfig::new(vec![SceneRef::Table1(3)], vec![0.2, 0.4], Method::ALL.to_vec(), vec![0, 1]);
            c.sfla.alpha = 2.0;
            c.sfla.domain = FitnessDomain::Db;
            c.sfla.max_fitness_samples = Some(5000);
            c.sfla.hint_fraction = 1.0;
            c.metrics.threshold_dbm = -20.0;
            c
        }
    };
    let out = PathBuf::from(args.next().unwrap_or_else(|| "target/examples-out/sweep".into()));

    let outcome = run_sweep(&config)?;
    write_sweep_outputs(&config, &outcome, &out)?;
    for a in &outcome.aggregates {
        println!(
            "{} {:<6} r={:.1}  rmse {:.4} ± {:.4}",
            a.scene,
            a.method,
            a.rate,
            a.rmse_mean.unwrap_or(f64::NAN),
            a.rmse_std.unwrap_or(f64::NAN)
        );
    }
    println!("{} failed rows; tables in {}", outcome.failures(), out.display());
    Ok(())
}
