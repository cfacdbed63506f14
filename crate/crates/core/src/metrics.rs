//! Evaluation quantities: RSS recovery error, zone detection ratios, source
//! localization and strength errors, detection success rate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{dbm_to_mw, distance, Point3, SpectrumGrid, TruthSource};

fn paired_values<'a>(est: &'a SpectrumGrid, truth: &'a SpectrumGrid) -> Result<impl Iterator<Item = (f64, f64)> + 'a> {
    if est.spec() != truth.spec() {
        return Err(Error::invalid("estimate and truth grids differ in geometry"));
    }
    if !est.is_fully_observed() || !truth.is_fully_observed() {
        return Err(Error::invalid("metrics need fully observed grids"));
    }
    Ok(est.values().iter().copied().zip(truth.values().iter().copied()))
}

/// `(1/N) Σ |(P_est - P_real) / P_real|` over every cell, powers in mW.
pub fn rmse(est: &SpectrumGrid, truth: &SpectrumGrid) -> Result<f64> {
    let mut acc = 0.0;
    let mut n = 0usize;
    for (e, t) in paired_values(est, truth)? {
        let t_mw = dbm_to_mw(t);
        if t_mw == 0.0 {
            return Err(Error::invalid("truth power is zero in a cell"));
        }
        acc += ((dbm_to_mw(e) - t_mw) / t_mw).abs();
        n += 1;
    }
    Ok(acc / n as f64)
}

/// Root mean square of the dB difference over every cell.
pub fn rms_db_error(est: &SpectrumGrid, truth: &SpectrumGrid) -> Result<f64> {
    let mut acc = 0.0;
    let mut n = 0usize;
    for (e, t) in paired_values(est, truth)? {
        acc += (e - t) * (e - t);
        n += 1;
    }
    Ok((acc / n as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ZoneLabel {
    /// Forbidden in truth and estimate.
    Cd1,
    /// Permitted in truth and estimate.
    Cd0,
    /// Permitted in truth, forbidden in the estimate.
    Fa0,
    /// Forbidden in truth, permitted in the estimate.
    Md1,
}

/// Forbidden/permitted flags of one grid with every cell attributed to its
/// nearest source.
#[derive(Debug, Clone, PartialEq)]
pub struct ZonePartition {
    pub threshold_dbm: f64,
    pub source_count: usize,
    pub owner: Vec<usize>,
    pub forbidden: Vec<bool>,
}

/// A cell is forbidden when its RSS exceeds `threshold_dbm`; it belongs to the
/// region of the nearest of `sources` (lowest index on ties).
pub fn zone_partition(grid: &SpectrumGrid, sources: &[Point3], threshold_dbm: f64) -> Result<ZonePartition> {
    if sources.is_empty() {
        return Err(Error::Empty("sources"));
    }
    if !grid.is_fully_observed() {
        return Err(Error::invalid("zone partition needs a fully observed grid"));
    }
    let spec = grid.spec();
    let mut owner = Vec::with_capacity(spec.len());
    let mut forbidden = Vec::with_capacity(spec.len());
    for (idx, &v) in spec.indices().zip(grid.values().iter()) {
        let c = spec.center_unchecked(idx);
        let mut best = 0;
        for (j, s) in sources.iter().enumerate().skip(1) {
            if distance(s, &c) < distance(&sources[best], &c) {
                best = j;
            }
        }
        owner.push(best);
        forbidden.push(v > threshold_dbm);
    }
    Ok(ZonePartition {
        threshold_dbm,
        source_count: sources.len(),
        owner,
        forbidden,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ZoneCounts {
    pub cd1: usize,
    pub cd0: usize,
    pub fa0: usize,
    pub md1: usize,
}

impl ZoneCounts {
    /// `S(Z1_CD) / (S(Z1_CD) + S(Z1_MD))`; `None` when the truth has no forbidden cell.
    pub fn cdzr(&self) -> Option<f64> {
        let d = self.cd1 + self.md1;
        (d > 0).then(|| self.cd1 as f64 / d as f64)
    }

    /// `S(Z0_FA) / (S(Z0_FA) + S(Z0_CD))`; `None` when the truth has no permitted cell.
    pub fn fazr(&self) -> Option<f64> {
        let d = self.fa0 + self.cd0;
        (d > 0).then(|| self.fa0 as f64 / d as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZoneComparison {
    pub labels: Vec<ZoneLabel>,
    pub per_source: Vec<ZoneCounts>,
    /// Sum over sources of the defined per-source ratios.
    pub cdzr: f64,
    pub fazr: f64,
    /// Sources whose ratio was undefined and left out of the sum.
    pub cdzr_skipped: Vec<usize>,
    pub fazr_skipped: Vec<usize>,
}

pub fn label(truth_forbidden: bool, est_forbidden: bool) -> ZoneLabel {
    match (truth_forbidden, est_forbidden) {
        (true, true) => ZoneLabel::Cd1,
        (false, false) => ZoneLabel::Cd0,
        (false, true) => ZoneLabel::Fa0,
        (true, false) => ZoneLabel::Md1,
    }
}

/// Labels every cell and totals the per-source detection and false-alarm ratios.
/// Cell ownership comes from the truth partition.
pub fn cdzr_fazr(est: &ZonePartition, truth: &ZonePartition) -> Result<ZoneComparison> {
    if est.forbidden.len() != truth.forbidden.len() {
        return Err(Error::invalid("zone partitions cover different grids"));
    }
    let k = truth.source_count;
    let mut per_source = vec![ZoneCounts::default(); k];
    let mut labels = Vec::with_capacity(truth.owner.len());
    for ((&o, &t), &e) in truth.owner.iter().zip(&truth.forbidden).zip(&est.forbidden) {
        let l = label(t, e);
        let c = &mut per_source[o];
        match l {
            ZoneLabel::Cd1 => c.cd1 += 1,
            ZoneLabel::Cd0 => c.cd0 += 1,
            ZoneLabel::Fa0 => c.fa0 += 1,
            ZoneLabel::Md1 => c.md1 += 1,
        }
        labels.push(l);
    }
    let mut out = ZoneComparison {
        labels,
        per_source: per_source.clone(),
        cdzr: 0.0,
        fazr: 0.0,
        cdzr_skipped: Vec::new(),
        fazr_skipped: Vec::new(),
    };
    for (j, c) in per_source.iter().enumerate() {
        match c.cdzr() {
            Some(v) => out.cdzr += v,
            None => out.cdzr_skipped.push(j),
        }
        match c.fazr() {
            Some(v) => out.fazr += v,
            None => out.fazr_skipped.push(j),
        }
    }
    Ok(out)
}

/// Pairs `(est_index, truth_index)` with the minimum total distance; covers
/// `min(est, truth)` pairs. Exhaustive over injective maps.
pub fn optimal_assignment(est: &[Point3], truth: &[Point3]) -> Result<Vec<(usize, usize)>> {
    if est.is_empty() || truth.is_empty() {
        return Err(Error::Empty("source list"));
    }
    let flip = est.len() > truth.len();
    let (small, large) = if flip { (truth, est) } else { (est, truth) };
    if large.len() > 12 {
        return Err(Error::invalid("assignment limited to 12 sources"));
    }
    let cost: Vec<Vec<f64>> = small.iter().map(|a| large.iter().map(|b| distance(a, b)).collect()).collect();

    fn search(
        row: usize,
        cost: &[Vec<f64>],
        used: &mut Vec<bool>,
        current: &mut Vec<usize>,
        acc: f64,
        best: &mut (f64, Vec<usize>),
    ) {
        if acc >= best.0 {
            return;
        }
        if row == cost.len() {
            *best = (acc, current.clone());
            return;
        }
        for c in 0..used.len() {
            if !used[c] {
                used[c] = true;
                current.push(c);
                search(row + 1, cost, used, current, acc + cost[row][c], best);
                current.pop();
                used[c] = false;
            }
        }
    }

    let mut best = (f64::INFINITY, Vec::new());
    search(0, &cost, &mut vec![false; large.len()], &mut Vec::new(), 0.0, &mut best);
    Ok(best
        .1
        .into_iter()
        .enumerate()
        .map(|(s, l)| if flip { (l, s) } else { (s, l) })
        .collect())
}

/// A located source with its strength in dBm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocatedSource {
    pub position: Point3,
    pub power_dbm: f64,
}

impl LocatedSource {
    pub fn from_truth(sources: &[TruthSource]) -> Result<Vec<Self>> {
        sources
            .iter()
            .map(|s| {
                Ok(Self {
                    position: s.position,
                    power_dbm: s.power_dbm()?,
                })
            })
            .collect()
    }
}

fn positions(s: &[LocatedSource]) -> Vec<Point3> {
    s.iter().map(|x| x.position).collect()
}

/// Mean distance between matched estimate and truth positions.
pub fn loc_error(est: &[LocatedSource], truth: &[LocatedSource]) -> Result<f64> {
    let pairs = optimal_assignment(&positions(est), &positions(truth))?;
    let total: f64 = pairs.iter().map(|&(e, t)| distance(&est[e].position, &truth[t].position)).sum();
    Ok(total / pairs.len() as f64)
}

/// Mean absolute dBm difference between matched sources.
pub fn ss_error(est: &[LocatedSource], truth: &[LocatedSource]) -> Result<f64> {
    let pairs = optimal_assignment(&positions(est), &positions(truth))?;
    let total: f64 = pairs.iter().map(|&(e, t)| (est[e].power_dbm - truth[t].power_dbm).abs()).sum();
    Ok(total / pairs.len() as f64)
}

/// Fraction of `(k_est, k_true)` trials with `k_est == k_true`.
pub fn detection_success_rate(trials: &[(usize, usize)]) -> Result<f64> {
    if trials.is_empty() {
        return Err(Error::Empty("trials"));
    }
    Ok(trials.iter().filter(|(e, t)| e == t).count() as f64 / trials.len() as f64)
}

/// Metrics for one reconstruction run. Source-level fields are empty for
/// methods that do not estimate sources.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rmse: f64,
    pub rms_db: f64,
    pub threshold_dbm: f64,
    pub cdzr: f64,
    pub fazr: f64,
    pub cdzr_skipped: usize,
    pub fazr_skipped: usize,
    pub k_true: usize,
    pub k_est: Option<usize>,
    pub detect_success: Option<bool>,
    pub loc_e: Option<f64>,
    pub ss_e: Option<f64>,
}

impl MetricsReport {
    pub fn evaluate(
        est: &SpectrumGrid,
        truth: &SpectrumGrid,
        truth_sources: &[LocatedSource],
        est_sources: Option<&[LocatedSource]>,
        threshold_dbm: f64,
    ) -> Result<Self> {
        let tp = positions(truth_sources);
        let zt = zone_partition(truth, &tp, threshold_dbm)?;
        let ze = zone_partition(est, &tp, threshold_dbm)?;
        let zones = cdzr_fazr(&ze, &zt)?;
        let (k_est, loc_e, ss_e) = match est_sources {
            Some(e) if !e.is_empty() => (
                Some(e.len()),
                Some(loc_error(e, truth_sources)?),
                Some(ss_error(e, truth_sources)?),
            ),
            Some(_) => (Some(0), None, None),
            None => (None, None, None),
        };
        Ok(Self {
            rmse: rmse(est, truth)?,
            rms_db: rms_db_error(est, truth)?,
            threshold_dbm,
            cdzr: zones.cdzr,
            fazr: zones.fazr,
            cdzr_skipped: zones.cdzr_skipped.len(),
            fazr_skipped: zones.fazr_skipped.len(),
            k_true: truth_sources.len(),
            k_est,
            detect_success: k_est.map(|k| k == truth_sources.len()),
            loc_e,
            ss_e,
        })
    }
}

/// Zone ratios of `est` against `truth` over a range of thresholds.
pub fn zone_curve(
    est: &SpectrumGrid,
    truth: &SpectrumGrid,
    sources: &[Point3],
    thresholds: &[f64],
) -> Result<Vec<(f64, f64, f64)>> {
    thresholds
        .iter()
        .map(|&t| {
            let z = cdzr_fazr(&zone_partition(est, sources, t)?, &zone_partition(truth, sources, t)?)?;
            Ok((t, z.cdzr, z.fazr))
        })
        .collect()
}
