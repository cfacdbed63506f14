//! Renders the shadowed ground-truth map of a bundled campus scene and writes
//! the scene JSON, the binary grid and a CSV dump.
//!
//! ```text
//! cargo run --release --example synthesize_scene -- [K] [OUT_DIR]
//! ```

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use specmap::io::{save_grid, write_grid_csv};
use specmap::synthgen::{generate_truth_grid, table1_scene, UrbanPlParams};

fn main() -> specmap::Result<()> {
    let mut args = std::env::args().skip(1);
    let k: usize = args.next().map_or(Ok(3), |s| s.parse()).expect("K must be 2, 3 or 4");
    let out = PathBuf::from(args.next().unwrap_or_else(|| "target/examples-out".into()));
    std::fs::create_dir_all(&out)?;

    let scene = table1_scene(k)?;
    let params = UrbanPlParams::default_truth(scene.frequency_mhz);
    let truth = generate_truth_grid(&scene, &params, 7)?;

    scene.save(out.join(format!("table1_k{k}.json")))?;
    save_grid(&truth, out.join("truth.grid"))?;
    write_grid_csv(&truth, BufWriter::new(File::create(out.join("truth.csv"))?))?;

    let (nx, ny, nz) = truth.spec().shape();
    let v = truth.values();
    let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    println!("scene table1_k{k}: {} sources, grid {nx}x{ny}x{nz}", scene.sources.len());
    for (i, s) in scene.sources.iter().enumerate() {
        println!("  source {i}: {:?} m, {:.1} dBm", s.position, s.power_dbm()?);
    }
    println!("RSS range {lo:.1} .. {hi:.1} dBm, exponent at 2 m {:.2}", params.exponent_at(2.0));
    println!("wrote {}", out.display());
    Ok(())
}
