//! Random observation of a truth grid at a given sampling rate.

use ndarray::Array3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{Sample, SpectrumGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingStrategy {
    #[default]
    UniformRandom,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub rate: f64,
    pub seed: u64,
    #[serde(default)]
    pub strategy: SamplingStrategy,
}

impl SamplingPlan {
    pub fn new(rate: f64, seed: u64) -> Result<Self> {
        let plan = Self {
            rate,
            seed,
            strategy: SamplingStrategy::UniformRandom,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rate > 0.0 && self.rate <= 1.0) {
            return Err(Error::invalid(format!("sampling rate {} must lie in (0, 1]", self.rate)));
        }
        Ok(())
    }

    /// `round_half_even(rate * total)`.
    pub fn sample_count(&self, total: usize) -> usize {
        round_half_even(self.rate * total as f64) as usize
    }
}

fn round_half_even(x: f64) -> f64 {
    let r = x.round();
    if (x - x.trunc()).abs() == 0.5 && r % 2.0 != 0.0 {
        r - x.signum()
    } else {
        r
    }
}

/// Observed samples plus a grid that keeps only the sampled cells.
#[derive(Debug, Clone)]
pub struct SampleDraw {
    pub samples: Vec<Sample>,
    pub observed: SpectrumGrid,
}

impl SampleDraw {
    pub fn mask(&self) -> &Array3<bool> {
        self.observed.mask()
    }
}

/// Draws distinct cells uniformly without replacement. Samples come back in
/// row-major cell order and sit at the cell centers.
pub fn draw_samples(truth: &SpectrumGrid, plan: &SamplingPlan) -> Result<SampleDraw> {
    plan.validate()?;
    if !truth.is_fully_observed() {
        return Err(Error::invalid("truth grid must be fully observed"));
    }
    let spec = *truth.spec();
    let total = spec.len();
    let n = plan.sample_count(total).min(total);
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let mut picked = rand::seq::index::sample(&mut rng, total, n).into_vec();
    picked.sort_unstable();

    let mut observed = SpectrumGrid::unobserved(spec);
    let mut samples = Vec::with_capacity(n);
    for l in picked {
        let idx = spec.unravel(l);
        let rss = truth.get(idx).expect("fully observed");
        observed.set(idx, rss)?;
        samples.push(Sample {
            position: spec.center_unchecked(idx),
            rss_dbm: rss,
        });
    }
    Ok(SampleDraw { samples, observed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::GridSpec;
    use std::collections::HashSet;

    fn ramp(spec: GridSpec) -> SpectrumGrid {
        let values = Array3::from_shape_fn(spec.shape(), |(i, j, k)| {
            -(i as f64) - 0.01 * j as f64 - 1e-4 * k as f64
        });
        SpectrumGrid::from_values(spec, values).unwrap()
    }

    #[test]
    fn full_rate_observes_everything() {
        let g = ramp(GridSpec::new([0.0; 3], [8.0, 6.0, 4.0], [4, 3, 2]).unwrap());
        let d = draw_samples(&g, &SamplingPlan::new(1.0, 3).unwrap()).unwrap();
        assert_eq!(d.samples.len(), 24);
        assert!(d.observed.is_fully_observed());
    }

    #[test]
    fn campus_count() {
        let g = ramp(GridSpec::campus());
        let d = draw_samples(&g, &SamplingPlan::new(0.2, 11).unwrap()).unwrap();
        assert_eq!(d.samples.len(), 20_000);
        assert_eq!(d.observed.observed_count(), 20_000);
    }

    #[test]
    fn deterministic_distinct_and_exact() {
        let spec = GridSpec::new([0.0; 3], [20.0, 20.0, 10.0], [10, 10, 5]).unwrap();
        let g = ramp(spec);
        let plan = SamplingPlan::new(0.37, 42).unwrap();
        let a = draw_samples(&g, &plan).unwrap();
        let b = draw_samples(&g, &plan).unwrap();
        assert_eq!(a.samples, b.samples);
        let cells: HashSet<_> = a
            .samples
            .iter()
            .map(|s| spec.nearest_cell(&s.position).unwrap())
            .collect();
        assert_eq!(cells.len(), a.samples.len());
        for s in &a.samples {
            let idx = spec.nearest_cell(&s.position).unwrap();
            assert_eq!(g.get(idx), Some(s.rss_dbm));
            assert_eq!(spec.cell_center(idx).unwrap(), s.position);
        }
        let c = draw_samples(&g, &SamplingPlan::new(0.37, 43).unwrap()).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn rate_validation() {
        assert!(SamplingPlan::new(0.0, 0).is_err());
        assert!(SamplingPlan::new(1.0001, 0).is_err());
        assert!(SamplingPlan::new(f64::NAN, 0).is_err());
    }

    #[test]
    fn half_even_rounding() {
        let plan = SamplingPlan::new(0.5, 0).unwrap();
        assert_eq!(plan.sample_count(5), 2);
        assert_eq!(plan.sample_count(7), 4);
        assert_eq!(plan.sample_count(10), 5);
        assert_eq!(SamplingPlan::new(0.25, 0).unwrap().sample_count(10), 2);
    }
}
