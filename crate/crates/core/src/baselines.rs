//! Comparison models: the kernel without geography, a KDE over the series'
//! own prior offenses, summed distance to prior offenses, and the
//! background KDE alone over a tunable window.

use serde::{Deserialize, Serialize};

use crate::background::{gaussian_kernel_sums, normalize, BackgroundField};
use crate::error::{Error, Result};
use crate::geo_grid::{GeoGrid, Xy};
use crate::kernel::KernelParams;
use crate::risk::PriorHit;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaselineSpec {
    AblationKernel { c: f64, d: f64 },
    SeriesKde { bandwidth_cells: f64 },
    NearestNeighbor,
    BackgroundWindow { window_days: f64, bandwidth_cells: f64 },
}

impl BaselineSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")))
            }
        };
        match *self {
            BaselineSpec::AblationKernel { c, d } => positive("c", c).and(positive("d", d)),
            BaselineSpec::SeriesKde { bandwidth_cells } => positive("bandwidth_cells", bandwidth_cells),
            BaselineSpec::NearestNeighbor => Ok(()),
            BaselineSpec::BackgroundWindow { window_days, bandwidth_cells } => {
                positive("window_days", window_days).and(positive("bandwidth_cells", bandwidth_cells))
            }
        }
    }
}

/// Kernel parameters equivalent to the ablation kernel.
pub fn ablation_params(c: f64, d: f64, n_features: usize) -> KernelParams {
    let mut beta = vec![0.0; n_features + 1];
    beta[0] = 1.0;
    KernelParams { c, d, beta }
}

/// `mu_l + sum_i 1 / ((t - t_i + c)^2 (ds + d)^2)`.
pub fn ablation_risk(
    grid: &GeoGrid,
    c: f64,
    d: f64,
    background: &BackgroundField,
    priors: &[PriorHit],
    t: f64,
    l: usize,
) -> Result<f64> {
    BaselineSpec::AblationKernel { c, d }.validate()?;
    let mu = background.value(l)?;
    let mut sum = 0.0;
    for p in priors {
        grid.check_cell(p.cell)?;
        if !(p.time < t) {
            return Err(Error::InvalidParameter(format!("prior at {} is not before {t}", p.time)));
        }
        let a = t - p.time + c;
        let b = grid.center_distance_km(l, p.cell) + d;
        sum += 1.0 / (a * a * b * b);
    }
    Ok(mu + sum)
}

pub fn ablation_risk_map(
    grid: &GeoGrid,
    c: f64,
    d: f64,
    background: &BackgroundField,
    priors: &[PriorHit],
    t: f64,
) -> Result<Vec<f64>> {
    (0..grid.n_cells()).map(|l| ablation_risk(grid, c, d, background, priors, t, l)).collect()
}

/// Normalized Gaussian KDE over the prior offenses' projected locations.
pub fn series_kde_map(grid: &GeoGrid, priors: &[Xy], bandwidth_m: f64) -> Result<Vec<f64>> {
    if priors.is_empty() {
        return Err(Error::EmptyPrior("series KDE needs prior offenses"));
    }
    if !(bandwidth_m > 0.0) {
        return Err(Error::InvalidParameter(format!("bandwidth must be positive, got {bandwidth_m}")));
    }
    let sums = gaussian_kernel_sums(grid, priors.iter().copied(), bandwidth_m);
    Ok(normalize(&sums).unwrap_or_else(|| vec![1.0 / grid.n_cells() as f64; grid.n_cells()]))
}

pub fn series_kde_risk(grid: &GeoGrid, priors: &[Xy], bandwidth_m: f64, l: usize) -> Result<f64> {
    grid.check_cell(l)?;
    Ok(series_kde_map(grid, priors, bandwidth_m)?[l])
}

/// `-sum_i |center_l - s_i|` in kilometers; larger is riskier.
pub fn nearest_neighbor_map(grid: &GeoGrid, priors: &[Xy]) -> Result<Vec<f64>> {
    if priors.is_empty() {
        return Err(Error::EmptyPrior("nearest-neighbor score needs prior offenses"));
    }
    Ok(grid
        .centers()
        .iter()
        .map(|c| -priors.iter().map(|p| c.distance(p)).sum::<f64>() / 1000.0)
        .collect())
}

pub fn nearest_neighbor_risk(grid: &GeoGrid, priors: &[Xy], l: usize) -> Result<f64> {
    grid.check_cell(l)?;
    Ok(nearest_neighbor_map(grid, priors)?[l])
}

/// Outcome of a candidate search.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Tuned<P> {
    pub best: P,
    pub best_score: f64,
    /// `(candidate, score)` in ascending candidate order.
    pub scores: Vec<(P, f64)>,
}

/// Picks the candidate with the lowest score (mean normalized rank on the
/// validation cases). Ties go to the smallest candidate.
pub fn tune_baseline<P, F>(candidates: &[P], mut score: F) -> Result<Tuned<P>>
where
    P: Clone + PartialOrd,
    F: FnMut(&P) -> Result<f64>,
{
    if candidates.is_empty() {
        return Err(Error::InvalidParameter("no tuning candidates".into()));
    }
    let mut sorted = candidates.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let mut scores = Vec::with_capacity(sorted.len());
    let mut best: Option<(P, f64)> = None;
    for cand in sorted {
        let s = score(&cand)?;
        if best.as_ref().map_or(true, |(_, b)| s < *b) {
            best = Some((cand.clone(), s));
        }
        scores.push((cand, s));
    }
    let (best, best_score) = best.expect("candidates is nonempty");
    Ok(Tuned { best, best_score, scores })
}
