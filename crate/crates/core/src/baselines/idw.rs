use ndarray::Array3;
use rayon::prelude::*;
use rstar::primitives::GeomWithData;
use rstar::RTree;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{GridSpec, Sample, SpectrumGrid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdwConfig {
    pub power_exponent: f64,
    pub neighbor_count: usize,
}

impl Default for IdwConfig {
    fn default() -> Self {
        Self {
            power_exponent: 2.0,
            neighbor_count: 8,
        }
    }
}

impl IdwConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.power_exponent > 0.0 && self.power_exponent.is_finite()) || self.neighbor_count == 0 {
            return Err(Error::invalid("IDW needs p > 0 and k >= 1"));
        }
        Ok(())
    }
}

/// Every cell is the `d^-p` weighted mean (dBm) of its `k` nearest samples; a
/// cell that coincides with a sample takes its value exactly.
pub fn idw_reconstruct(samples: &[Sample], spec: &GridSpec, config: &IdwConfig) -> Result<SpectrumGrid> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::Empty("samples"));
    }
    let points: Vec<GeomWithData<[f64; 3], f64>> =
        samples.iter().map(|s| GeomWithData::new(s.position, s.rss_dbm)).collect();
    let tree = RTree::bulk_load(points);
    let half_p = 0.5 * config.power_exponent;
    let values: Vec<f64> = (0..spec.len())
        .into_par_iter()
        .map(|l| {
            let c = spec.center_unchecked(spec.unravel(l));
            let mut num = 0.0;
            let mut den = 0.0;
            for (nb, d2) in tree.nearest_neighbor_iter_with_distance_2(c).take(config.neighbor_count) {
                if d2 == 0.0 {
                    return nb.data;
                }
                let w = d2.powf(-half_p);
                num += w * nb.data;
                den += w;
            }
            num / den
        })
        .collect();
    SpectrumGrid::from_values(*spec, Array3::from_shape_vec(spec.shape(), values).expect("one value per cell"))
}
