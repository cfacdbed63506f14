//! Region-of-interest grid, spectrum tensor, sources, samples and power units.
//!
//! RSS is stored in dBm everywhere. Linear milliwatts only appear transiently
//! when powers from several sources have to be summed.

use std::path::Path;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in meters, `[x, y, z]`.
pub type Point3 = [f64; 3];

/// Cell index `(i, j, k)` along x, y and z.
pub type CellIndex = (usize, usize, usize);

pub fn distance(a: &Point3, b: &Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// `10^(p/10)`.
pub fn dbm_to_mw(p_dbm: f64) -> f64 {
    10f64.powf(p_dbm / 10.0)
}

pub fn mw_to_dbm(p_mw: f64) -> Result<f64> {
    if p_mw > 0.0 && p_mw.is_finite() {
        Ok(10.0 * p_mw.log10())
    } else {
        Err(Error::NonPositivePower(p_mw))
    }
}

pub fn watts_to_dbm(p_watts: f64) -> Result<f64> {
    mw_to_dbm(p_watts * 1e3)
}

/// Sums several received powers given in dBm and returns the total in dBm.
pub fn combine_rss_dbm(parts: &[f64]) -> Result<f64> {
    if parts.is_empty() {
        return Err(Error::Empty("rss parts"));
    }
    if let Some(bad) = parts.iter().find(|p| !p.is_finite()) {
        return Err(Error::invalid(format!("non-finite rss part {bad}")));
    }
    mw_to_dbm(parts.iter().map(|&p| dbm_to_mw(p)).sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGridSpec", into = "RawGridSpec")]
pub struct GridSpec {
    origin: Point3,
    extent: Point3,
    counts: [usize; 3],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGridSpec {
    origin: Point3,
    extent: Point3,
    counts: [usize; 3],
}

impl TryFrom<RawGridSpec> for GridSpec {
    type Error = Error;

    fn try_from(raw: RawGridSpec) -> Result<Self> {
        GridSpec::new(raw.origin, raw.extent, raw.counts)
    }
}

impl From<GridSpec> for RawGridSpec {
    fn from(spec: GridSpec) -> Self {
        RawGridSpec {
            origin: spec.origin,
            extent: spec.extent,
            counts: spec.counts,
        }
    }
}

impl GridSpec {
    pub fn new(origin: Point3, extent: Point3, counts: [usize; 3]) -> Result<Self> {
        if counts.contains(&0) {
            return Err(Error::InvalidGrid(format!("counts must be >= 1, got {counts:?}")));
        }
        if extent.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
            return Err(Error::InvalidGrid(format!(
                "extent must be strictly positive, got {extent:?}"
            )));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidGrid(format!("non-finite origin {origin:?}")));
        }
        Ok(Self {
            origin,
            extent,
            counts,
        })
    }

    /// The 500 m x 500 m x 100 m campus volume discretized into 100 x 100 x 10 cells.
    pub fn campus() -> Self {
        Self::new([0.0, -450.0, 0.0], [500.0, 500.0, 100.0], [100, 100, 10])
            .expect("static grid is valid")
    }

    pub fn origin(&self) -> Point3 {
        self.origin
    }

    pub fn extent(&self) -> Point3 {
        self.extent
    }

    pub fn counts(&self) -> [usize; 3] {
        self.counts
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.counts[0], self.counts[1], self.counts[2])
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cell_size(&self) -> Point3 {
        [
            self.extent[0] / self.counts[0] as f64,
            self.extent[1] / self.counts[1] as f64,
            self.extent[2] / self.counts[2] as f64,
        ]
    }

    /// Upper corner of the bounding box.
    pub fn upper(&self) -> Point3 {
        [
            self.origin[0] + self.extent[0],
            self.origin[1] + self.extent[1],
            self.origin[2] + self.extent[2],
        ]
    }

    pub fn contains(&self, p: &Point3) -> bool {
        let hi = self.upper();
        (0..3).all(|a| p[a] >= self.origin[a] && p[a] <= hi[a])
    }

    pub fn cell_center(&self, index: CellIndex) -> Result<Point3> {
        let (i, j, k) = index;
        if i >= self.counts[0] || j >= self.counts[1] || k >= self.counts[2] {
            return Err(Error::IndexOutOfRange(i, j, k));
        }
        Ok(self.center_unchecked(index))
    }

    pub(crate) fn center_unchecked(&self, (i, j, k): CellIndex) -> Point3 {
        let cs = self.cell_size();
        [
            self.origin[0] + (i as f64 + 0.5) * cs[0],
            self.origin[1] + (j as f64 + 0.5) * cs[1],
            self.origin[2] + (k as f64 + 0.5) * cs[2],
        ]
    }

    /// Cell containing `p`; points on the upper boundary map to the last cell.
    pub fn nearest_cell(&self, p: &Point3) -> Option<CellIndex> {
        if !self.contains(p) {
            return None;
        }
        let cs = self.cell_size();
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let f = ((p[a] - self.origin[a]) / cs[a]).floor();
            idx[a] = (f.max(0.0) as usize).min(self.counts[a] - 1);
        }
        Some((idx[0], idx[1], idx[2]))
    }

    /// Row-major linear index, `k` fastest.
    pub fn linear_index(&self, (i, j, k): CellIndex) -> usize {
        (i * self.counts[1] + j) * self.counts[2] + k
    }

    pub fn unravel(&self, linear: usize) -> CellIndex {
        let k = linear % self.counts[2];
        let rest = linear / self.counts[2];
        (rest / self.counts[1], rest % self.counts[1], k)
    }

    /// All cell indices in row-major order.
    pub fn indices(&self) -> impl Iterator<Item = CellIndex> + '_ {
        (0..self.len()).map(|l| self.unravel(l))
    }
}

/// The discretized spectrum tensor with its observation mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumGrid {
    spec: GridSpec,
    values: Array3<f64>,
    mask: Array3<bool>,
}

impl SpectrumGrid {
    /// A grid with every cell unobserved (values NaN).
    pub fn unobserved(spec: GridSpec) -> Self {
        Self {
            spec,
            values: Array3::from_elem(spec.shape(), f64::NAN),
            mask: Array3::from_elem(spec.shape(), false),
        }
    }

    /// A fully observed grid.
    pub fn from_values(spec: GridSpec, values: Array3<f64>) -> Result<Self> {
        let mask = Array3::from_elem(spec.shape(), true);
        Self::with_mask(spec, values, mask)
    }

    pub fn with_mask(spec: GridSpec, values: Array3<f64>, mask: Array3<bool>) -> Result<Self> {
        if values.dim() != spec.shape() || mask.dim() != spec.shape() {
            return Err(Error::InvalidGrid(format!(
                "array shape {:?} / mask {:?} does not match counts {:?}",
                values.dim(),
                mask.dim(),
                spec.counts()
            )));
        }
        if values
            .iter()
            .zip(mask.iter())
            .any(|(v, &m)| m && !v.is_finite())
        {
            return Err(Error::InvalidGrid("observed cell holds a non-finite value".into()));
        }
        Ok(Self { spec, values, mask })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &Array3<f64> {
        &self.values
    }

    pub fn mask(&self) -> &Array3<bool> {
        &self.mask
    }

    pub fn get(&self, (i, j, k): CellIndex) -> Option<f64> {
        if self.mask[[i, j, k]] {
            Some(self.values[[i, j, k]])
        } else {
            None
        }
    }

    pub fn set(&mut self, (i, j, k): CellIndex, rss_dbm: f64) -> Result<()> {
        if !rss_dbm.is_finite() {
            return Err(Error::invalid(format!("non-finite rss {rss_dbm}")));
        }
        self.values[[i, j, k]] = rss_dbm;
        self.mask[[i, j, k]] = true;
        Ok(())
    }

    pub fn observed_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_fully_observed(&self) -> bool {
        self.mask.iter().all(|&m| m)
    }

    /// Observed cells as samples located at their cell centers.
    pub fn observed_samples(&self) -> Vec<Sample> {
        self.spec
            .indices()
            .filter_map(|idx| {
                self.get(idx).map(|rss| Sample {
                    position: self.spec.center_unchecked(idx),
                    rss_dbm: rss,
                })
            })
            .collect()
    }

    pub fn into_parts(self) -> (GridSpec, Array3<f64>, Array3<bool>) {
        (self.spec, self.values, self.mask)
    }
}

/// One measured `(position, rss)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub position: Point3,
    pub rss_dbm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthSource {
    pub position: Point3,
    pub power_watts: f64,
}

impl TruthSource {
    pub fn new(position: Point3, power_watts: f64) -> Result<Self> {
        if !(power_watts >= 0.0 && power_watts.is_finite()) {
            return Err(Error::invalid(format!("source power {power_watts} W must be >= 0")));
        }
        Ok(Self {
            position,
            power_watts,
        })
    }

    pub fn power_dbm(&self) -> Result<f64> {
        watts_to_dbm(self.power_watts)
    }
}

/// Grid, radiation sources and carrier frequency of one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    pub grid: GridSpec,
    pub sources: Vec<TruthSource>,
    pub frequency_mhz: f64,
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        if !(self.frequency_mhz > 0.0 && self.frequency_mhz.is_finite()) {
            return Err(Error::invalid(format!(
                "frequency {} MHz must be positive",
                self.frequency_mhz
            )));
        }
        for s in &self.sources {
            TruthSource::new(s.position, s.power_watts)?;
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let scene: Scene = serde_json::from_str(text)?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::from(e).with_context(format!("reading {}", path.display())))?;
        Self::from_json(&text).map_err(|e| e.with_context(format!("parsing {}", path.display())))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}
