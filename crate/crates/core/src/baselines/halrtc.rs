use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::SpectrumGrid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HalrtcConfig {
    pub mode_weights: [f64; 3],
    pub rho: f64,
    /// Multiplier applied to `rho` after every iteration.
    pub rho_growth: f64,
    pub max_iters: usize,
    /// Bound on `‖X_t - X_{t-1}‖_F / ‖X_{t-1}‖_F`.
    pub tol: f64,
}

impl Default for HalrtcConfig {
    fn default() -> Self {
        Self {
            mode_weights: [1.0 / 3.0; 3],
            rho: 1e-4,
            rho_growth: 1.1,
            max_iters: 500,
            tol: 1e-6,
        }
    }
}

impl HalrtcConfig {
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.mode_weights.iter().sum();
        if self.mode_weights.iter().any(|w| !(*w >= 0.0)) || (sum - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("mode weights must be nonnegative and sum to 1"));
        }
        if !(self.rho > 0.0) || !(self.rho_growth >= 1.0) || self.max_iters == 0 || !(self.tol > 0.0) {
            return Err(Error::invalid("HaLRTC needs rho > 0, growth >= 1, max_iters >= 1, tol > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct HalrtcOutcome {
    pub grid: SpectrumGrid,
    pub iterations: usize,
    /// Relative change of the last iteration.
    pub last_change: f64,
    pub converged: bool,
    /// Weighted nuclear-norm objective after each iteration.
    pub objective: Vec<f64>,
}

/// Mode-`n` unfolding: rows follow axis `n`, columns the remaining axes in order.
fn unfold(x: &Array3<f64>, mode: usize) -> DMatrix<f64> {
    let order = match mode {
        0 => [0, 1, 2],
        1 => [1, 0, 2],
        _ => [2, 0, 1],
    };
    let p = x.view().permuted_axes(order);
    let (r, a, b) = p.dim();
    DMatrix::from_fn(r, a * b, |i, c| p[[i, c / b, c % b]])
}

fn fold(m: &DMatrix<f64>, mode: usize, shape: (usize, usize, usize)) -> Array3<f64> {
    Array3::from_shape_fn(shape, |(i, j, k)| {
        let (row, a, b, bn) = match mode {
            0 => (i, j, k, shape.2),
            1 => (j, i, k, shape.2),
            _ => (k, i, j, shape.1),
        };
        m[(row, a * bn + b)]
    })
}

/// Singular value thresholding through the eigen-decomposition of the smaller Gram matrix.
fn shrink(a: &DMatrix<f64>, tau: f64) -> (DMatrix<f64>, f64) {
    let wide = a.nrows() <= a.ncols();
    let gram = if wide { a * a.transpose() } else { a.transpose() * a };
    let eig = SymmetricEigen::new(gram);
    let mut nuclear = 0.0;
    let factors: Vec<f64> = eig
        .eigenvalues
        .iter()
        .map(|&l| {
            let s = l.max(0.0).sqrt();
            let kept = (s - tau).max(0.0);
            nuclear += kept;
            if s > 0.0 { kept / s } else { 0.0 }
        })
        .collect();
    let v = &eig.eigenvectors;
    let scaled = DMatrix::from_fn(v.nrows(), v.ncols(), |i, j| v[(i, j)] * factors[j]);
    let proj = scaled * v.transpose();
    let out = if wide { proj * a } else { a * proj };
    (out, nuclear)
}

fn nuclear_norm(a: &DMatrix<f64>) -> f64 {
    let gram = if a.nrows() <= a.ncols() { a * a.transpose() } else { a.transpose() * a };
    SymmetricEigen::new(gram).eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum()
}

/// `Σ_n w_n ‖X_(n)‖_*`.
pub fn nuclear_objective(x: &Array3<f64>, weights: &[f64; 3]) -> f64 {
    (0..3).map(|n| weights[n] * nuclear_norm(&unfold(x, n))).sum()
}

/// Completes the unobserved cells of `observed` by minimizing the weighted sum of
/// mode-unfolding nuclear norms with the observed cells held fixed (ADMM).
pub fn halrtc_reconstruct(observed: &SpectrumGrid, config: &HalrtcConfig) -> Result<HalrtcOutcome> {
    config.validate()?;
    let n_obs = observed.observed_count();
    if n_obs == 0 {
        return Err(Error::Empty("observed cells"));
    }
    let spec = *observed.spec();
    let mask = observed.mask().clone();
    let shape = spec.shape();
    let mean = observed
        .values()
        .iter()
        .zip(mask.iter())
        .filter(|(_, &m)| m)
        .map(|(v, _)| *v)
        .sum::<f64>()
        / n_obs as f64;
    let mut x = Array3::from_shape_fn(shape, |idx| if mask[idx] { observed.values()[idx] } else { mean });
    let mut y = vec![Array3::<f64>::zeros(shape); 3];
    let mut rho = config.rho;
    let mut iterations = 0;
    let mut last_change = f64::INFINITY;
    let mut converged = false;
    let mut objective = Vec::new();

    while iterations < config.max_iters {
        iterations += 1;
        let mut ms = Vec::with_capacity(3);
        // While the threshold still exceeds every singular value the iterate does not
        // move; such iterations never count as convergence.
        let mut active = true;
        for (n, (yn, &w)) in y.iter().zip(&config.mode_weights).enumerate() {
            let target = &x + &(yn / rho);
            let (m, kept) = shrink(&unfold(&target, n), w / rho);
            active &= kept > 0.0 || w == 0.0;
            ms.push(fold(&m, n, shape));
        }
        let mut next = x.clone();
        ndarray::Zip::indexed(&mut next).for_each(|idx, v| {
            if !mask[idx] {
                *v = (0..3).map(|n| ms[n][idx] - y[n][idx] / rho).sum::<f64>() / 3.0;
            }
        });
        for n in 0..3 {
            y[n] = &y[n] - &((&ms[n] - &next) * rho);
        }
        rho *= config.rho_growth;
        let diff = (&next - &x).mapv(|d| d * d).sum().sqrt();
        let base = x.mapv(|d| d * d).sum().sqrt().max(f64::MIN_POSITIVE);
        last_change = diff / base;
        x = next;
        objective.push(nuclear_objective(&x, &config.mode_weights));
        if active && last_change <= config.tol {
            converged = true;
            break;
        }
    }
    let grid = SpectrumGrid::from_values(spec, x)?;
    Ok(HalrtcOutcome {
        grid,
        iterations,
        last_change,
        converged,
        objective,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::GridSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rank_one(shape: (usize, usize, usize)) -> Array3<f64> {
        Array3::from_shape_fn(shape, |(i, j, k)| {
            (1.0 + 0.1 * i as f64) * (2.0 - 0.05 * j as f64) * (0.5 + (k as f64 * 0.7).sin().abs())
        })
    }

    fn masked(truth: &Array3<f64>, rate: f64, seed: u64) -> SpectrumGrid {
        let (a, b, c) = truth.dim();
        let spec = GridSpec::new([0.0; 3], [a as f64, b as f64, c as f64], [a, b, c]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask = truth.mapv(|_| rng.random::<f64>() < rate);
        SpectrumGrid::with_mask(spec, truth.clone(), mask).unwrap()
    }

    #[test]
    fn unfold_fold_round_trip() {
        let x = Array3::from_shape_fn((3, 4, 5), |(i, j, k)| (i * 100 + j * 10 + k) as f64);
        for n in 0..3 {
            let m = unfold(&x, n);
            assert_eq!(m.nrows(), [3, 4, 5][n]);
            assert_eq!(fold(&m, n, x.dim()), x);
        }
    }

    #[test]
    fn shrink_matches_svd() {
        let a = DMatrix::from_fn(4, 7, |i, j| ((i * 7 + j) as f64).sin());
        for tau in [0.0, 0.3, 1.0] {
            let (got, _) = shrink(&a, tau);
            let svd = a.clone().svd(true, true);
            let s = svd.singular_values.map(|s| (s - tau).max(0.0));
            let want = svd.u.unwrap() * DMatrix::from_diagonal(&s) * svd.v_t.unwrap();
            assert!((got - want).norm() < 1e-8);
            let (got_t, _) = shrink(&a.transpose(), tau);
            let svd_t = a.transpose().svd(true, true);
            let s_t = svd_t.singular_values.map(|s| (s - tau).max(0.0));
            let want_t = svd_t.u.unwrap() * DMatrix::from_diagonal(&s_t) * svd_t.v_t.unwrap();
            assert!((got_t - want_t).norm() < 1e-8);
        }
    }

    #[test]
    fn fully_observed_is_fixed_point() {
        let truth = rank_one((6, 5, 4));
        let g = masked(&truth, 2.0, 0);
        let out = halrtc_reconstruct(&g, &HalrtcConfig::default()).unwrap();
        assert_eq!(out.grid.values(), &truth);
    }

    #[test]
    fn rank_one_recovery() {
        let truth = rank_one((20, 20, 10));
        let g = masked(&truth, 0.5, 3);
        let out = halrtc_reconstruct(&g, &HalrtcConfig::default()).unwrap();
        let err = (out.grid.values() - &truth).mapv(|d| d * d).sum().sqrt() / truth.mapv(|d| d * d).sum().sqrt();
        assert!(err <= 1e-3, "relative error {err}");
        for idx in g.spec().indices() {
            if let Some(v) = g.get(idx) {
                assert_eq!(out.grid.get(idx), Some(v));
            }
        }
        if out.converged {
            assert!(out.last_change <= HalrtcConfig::default().tol);
        }
        assert!(out.objective[1..].windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9)));
    }

    #[test]
    fn guards() {
        let spec = GridSpec::new([0.0; 3], [1.0; 3], [2, 2, 2]).unwrap();
        assert!(halrtc_reconstruct(&SpectrumGrid::unobserved(spec), &HalrtcConfig::default()).is_err());
        let bad = HalrtcConfig { mode_weights: [0.5, 0.5, 0.5], ..HalrtcConfig::default() };
        assert!(bad.validate().is_err());
    }
}
