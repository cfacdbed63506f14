//! File formats for grids and sample sets.
//!
//! Binary grid dump, all little endian:
//!
//! ```text
//! offset  size  field
//! 0       8     magic "SPECGRD1"
//! 8       24    counts N1, N2, N3 (u64)
//! 32      24    origin x, y, z (f64, meters)
//! 56      24    extent x, y, z (f64, meters)
//! 80      8*N   rss_dbm (f64), row-major with k fastest; NaN marks an unobserved cell
//! ```
//!
//! Grid CSV has columns `i,j,k,x,y,z,rss_dbm` and lists observed cells only.
//! Sample CSV has columns `x,y,z,rss_dbm`.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{GridSpec, Sample, SpectrumGrid};

pub const GRID_MAGIC: &[u8; 8] = b"SPECGRD1";
const HEADER_LEN: usize = 80;

pub fn write_grid_binary<W: Write>(grid: &SpectrumGrid, mut w: W) -> Result<()> {
    let spec = grid.spec();
    let mut buf = Vec::with_capacity(HEADER_LEN + 8 * spec.len());
    buf.extend_from_slice(GRID_MAGIC);
    for c in spec.counts() {
        buf.extend_from_slice(&(c as u64).to_le_bytes());
    }
    for v in spec.origin().iter().chain(spec.extent().iter()) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for (v, &m) in grid.values().iter().zip(grid.mask().iter()) {
        let v = if m { *v } else { f64::NAN };
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_grid_binary<R: Read>(mut r: R) -> Result<SpectrumGrid> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < HEADER_LEN || &bytes[..8] != GRID_MAGIC {
        return Err(Error::invalid("not a grid dump (bad magic or short header)"));
    }
    let u64_at = |off: usize| u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
    let f64_at = |off: usize| f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
    let counts = [u64_at(8) as usize, u64_at(16) as usize, u64_at(24) as usize];
    let origin = [f64_at(32), f64_at(40), f64_at(48)];
    let extent = [f64_at(56), f64_at(64), f64_at(72)];
    let spec = GridSpec::new(origin, extent, counts)?;
    let n = spec.len();
    if bytes.len() != HEADER_LEN + 8 * n {
        return Err(Error::invalid(format!(
            "grid dump holds {} payload bytes, expected {}",
            bytes.len() - HEADER_LEN,
            8 * n
        )));
    }
    let values: Vec<f64> = (0..n).map(|l| f64_at(HEADER_LEN + 8 * l)).collect();
    let mask: Vec<bool> = values.iter().map(|v| !v.is_nan()).collect();
    let values = Array3::from_shape_vec(spec.shape(), values).expect("length checked");
    let mask = Array3::from_shape_vec(spec.shape(), mask).expect("length checked");
    SpectrumGrid::with_mask(spec, values, mask)
}

pub fn save_grid(grid: &SpectrumGrid, path: impl AsRef<Path>) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_grid_binary(grid, std::io::BufWriter::new(f))
}

pub fn load_grid(path: impl AsRef<Path>) -> Result<SpectrumGrid> {
    let f = std::fs::File::open(path)?;
    read_grid_binary(std::io::BufReader::new(f))
}

#[derive(Debug, Serialize, Deserialize)]
struct GridRow {
    i: usize,
    j: usize,
    k: usize,
    x: f64,
    y: f64,
    z: f64,
    rss_dbm: f64,
}

pub fn write_grid_csv<W: Write>(grid: &SpectrumGrid, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let spec = grid.spec();
    for idx in spec.indices() {
        if let Some(rss_dbm) = grid.get(idx) {
            let [x, y, z] = spec.center_unchecked(idx);
            wtr.serialize(GridRow {
                i: idx.0,
                j: idx.1,
                k: idx.2,
                x,
                y,
                z,
                rss_dbm,
            })?;
        }
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleRow {
    x: f64,
    y: f64,
    z: f64,
    rss_dbm: f64,
}

pub fn write_samples_csv<W: Write>(samples: &[Sample], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for s in samples {
        wtr.serialize(SampleRow {
            x: s.position[0],
            y: s.position[1],
            z: s.position[2],
            rss_dbm: s.rss_dbm,
        })?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_samples_csv<R: Read>(r: R) -> Result<Vec<Sample>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let row: SampleRow = row?;
        if !row.rss_dbm.is_finite() {
            return Err(Error::invalid(format!("non-finite rss in sample row {}", out.len() + 1)));
        }
        out.push(Sample {
            position: [row.x, row.y, row.z],
            rss_dbm: row.rss_dbm,
        });
    }
    Ok(out)
}

pub fn save_samples(samples: &[Sample], path: impl AsRef<Path>) -> Result<()> {
    write_samples_csv(samples, std::fs::File::create(path)?)
}

pub fn load_samples(path: impl AsRef<Path>) -> Result<Vec<Sample>> {
    read_samples_csv(std::fs::File::open(path)?)
}
