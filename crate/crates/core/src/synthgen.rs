//! Synthetic ground truth from the parametric urban path-loss model.
//!
//! `L = 32.4 + 20 log10(f[MHz]) + 10 (A h^B) log10(d[km]) + shadow`, where `h` is the
//! receiver height above ground. Shadow fading is drawn i.i.d. per (cell, source).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{
    combine_rss_dbm, distance, watts_to_dbm, GridSpec, Point3, Scene, SpectrumGrid, TruthSource,
};

/// Distances below this are treated as this (meters).
pub const MIN_DISTANCE_M: f64 = 1.0;
/// Receiver heights below this are treated as this (meters).
pub const MIN_HEIGHT_M: f64 = 1.0;
/// Free-space constant for `f` in MHz and `d` in km.
pub const FREE_SPACE_CONSTANT_DB: f64 = 32.4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UrbanPlParams {
    pub a: f64,
    pub b: f64,
    pub sigma_db: f64,
    pub frequency_mhz: f64,
}

impl UrbanPlParams {
    pub fn new(a: f64, b: f64, sigma_db: f64, frequency_mhz: f64) -> Result<Self> {
        let p = Self {
            a,
            b,
            sigma_db,
            frequency_mhz,
        };
        p.validate()?;
        Ok(p)
    }

    /// Default truth parameters at the given carrier.
    pub fn default_truth(frequency_mhz: f64) -> Self {
        Self {
            a: 2.5,
            b: -0.1,
            sigma_db: 4.0,
            frequency_mhz,
        }
    }

    /// The free-space model: exponent 2 at every height, no shadowing.
    pub fn free_space(frequency_mhz: f64) -> Self {
        Self {
            a: 2.0,
            b: 0.0,
            sigma_db: 0.0,
            frequency_mhz,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_db >= 0.0 && self.sigma_db.is_finite()) {
            return Err(Error::invalid(format!("sigma_db {} must be >= 0", self.sigma_db)));
        }
        if !(self.frequency_mhz > 0.0 && self.frequency_mhz.is_finite()) {
            return Err(Error::invalid(format!(
                "frequency {} MHz must be positive",
                self.frequency_mhz
            )));
        }
        // A h^B > 0 for every h iff A > 0.
        if !(self.a > 0.0 && self.a.is_finite() && self.b.is_finite()) {
            return Err(Error::invalid(format!(
                "A = {} must be positive and B = {} finite",
                self.a, self.b
            )));
        }
        Ok(())
    }

    /// Effective distance exponent `A h^B` at receiver height `h` (clamped).
    pub fn exponent_at(&self, height_m: f64) -> f64 {
        self.a * height_m.max(MIN_HEIGHT_M).powf(self.b)
    }

    pub fn frequency_term_db(&self) -> f64 {
        FREE_SPACE_CONSTANT_DB + 20.0 * self.frequency_mhz.log10()
    }

    /// Deterministic loss for an already clamped distance.
    pub(crate) fn mean_loss_db(&self, distance_m: f64, height_m: f64) -> f64 {
        let d_km = distance_m.max(MIN_DISTANCE_M) / 1000.0;
        self.frequency_term_db() + 10.0 * self.exponent_at(height_m) * d_km.log10()
    }
}

pub fn urban_path_loss_db(
    params: &UrbanPlParams,
    tx: &Point3,
    rx: &Point3,
    shadow_db: f64,
) -> Result<f64> {
    let h = rx[2];
    if !(h > 0.0) {
        return Err(Error::invalid(format!("receiver height {h} m must be positive")));
    }
    let d = distance(tx, rx).max(MIN_DISTANCE_M);
    if !(d > 0.0 && d.is_finite()) {
        return Err(Error::invalid(format!("distance {d} m is not usable")));
    }
    Ok(params.mean_loss_db(d, h) + shadow_db)
}

fn source_powers_dbm(sources: &[TruthSource]) -> Result<Vec<(Point3, f64)>> {
    if sources.is_empty() {
        return Err(Error::Empty("sources"));
    }
    let active: Vec<(Point3, f64)> = sources
        .iter()
        .filter(|s| s.power_watts > 0.0)
        .map(|s| Ok((s.position, watts_to_dbm(s.power_watts)?)))
        .collect::<Result<_>>()?;
    if active.is_empty() {
        return Err(Error::Degenerate("every source has zero power".into()));
    }
    Ok(active)
}

/// Per-cell RNG stream: the same cell always sees the same draws, whatever the
/// evaluation order.
pub(crate) fn cell_rng(seed: u64, linear_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(linear_index as u64);
    rng
}

/// Combined RSS (dBm) at every cell center, optionally with shadow draws.
pub(crate) fn render_grid(
    spec: &GridSpec,
    sources: &[TruthSource],
    params: &UrbanPlParams,
    shadow_seed: Option<u64>,
) -> Result<SpectrumGrid> {
    params.validate()?;
    let active = source_powers_dbm(sources)?;
    let normal = Normal::new(0.0, params.sigma_db).map_err(|e| Error::invalid(e.to_string()))?;
    let values: Vec<f64> = (0..spec.len())
        .into_par_iter()
        .map(|l| {
            let center = spec.center_unchecked(spec.unravel(l));
            let mut rng = shadow_seed.map(|s| cell_rng(s, l));
            let mut total_mw = 0.0;
            for (pos, p_dbm) in &active {
                let shadow = match rng.as_mut() {
                    Some(r) if params.sigma_db > 0.0 => normal.sample(r),
                    _ => 0.0,
                };
                let loss = params.mean_loss_db(distance(pos, &center), center[2]) + shadow;
                total_mw += 10f64.powf((p_dbm - loss) / 10.0);
            }
            10.0 * total_mw.log10()
        })
        .collect();
    let values = ndarray::Array3::from_shape_vec(spec.shape(), values).expect("one value per cell");
    SpectrumGrid::from_values(*spec, values)
}

/// Ground-truth spectrum tensor for `scene`. Identical seeds give bit-identical grids.
pub fn generate_truth_grid(
    scene: &Scene,
    params: &UrbanPlParams,
    seed: u64,
) -> Result<SpectrumGrid> {
    scene.validate()?;
    render_grid(&scene.grid, &scene.sources, params, Some(seed))
}

/// Single-cell truth value, used by tests as a slow independent route.
pub fn rss_at(
    sources: &[TruthSource],
    params: &UrbanPlParams,
    rx: &Point3,
    shadows_db: &[f64],
) -> Result<f64> {
    let active = source_powers_dbm(sources)?;
    let parts = active
        .iter()
        .enumerate()
        .map(|(j, (pos, p))| {
            let shadow = shadows_db.get(j).copied().unwrap_or(0.0);
            Ok(p - urban_path_loss_db(params, pos, rx, shadow)?)
        })
        .collect::<Result<Vec<_>>>()?;
    combine_rss_dbm(&parts)
}

/// Source layouts with 2, 3 or 4 transmitters of 1 W at 100 MHz on the campus grid.
pub fn table1_scene(k: usize) -> Result<Scene> {
    let positions: &[Point3] = match k {
        2 => &[[310.0, -239.0, 2.0], [235.0, -105.0, 2.0]],
        3 => &[[345.0, -365.0, 33.77], [205.0, -265.0, 2.0], [245.0, -95.0, 2.0]],
        4 => &[
            [330.0, -370.0, 33.77],
            [400.0, -140.0, 23.3],
            [185.0, -255.0, 2.0],
            [245.0, -85.0, 2.0],
        ],
        _ => return Err(Error::invalid(format!("table scenes exist for k in 2..=4, got {k}"))),
    };
    Ok(Scene {
        grid: GridSpec::campus(),
        sources: positions
            .iter()
            .map(|&p| TruthSource {
                position: p,
                power_watts: 1.0,
            })
            .collect(),
        frequency_mhz: 100.0,
    })
}
