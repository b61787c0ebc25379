//! Per-cell risk: background plus the kernels triggered by a series' prior
//! offenses, and ranking of the true cell within a risk map.

use std::io::Write;

use serde_json::json;

use crate::background::BackgroundField;
use crate::error::{Error, Result};
use crate::geo_grid::{FeatureMatrix, GeoGrid};
use crate::kernel::{accumulate_grad, eval_raw, KernelOptions, KernelParams};

/// A prior offense as the kernel sees it: quantized to its cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorHit {
    pub cell: usize,
    pub time: f64,
}

/// Grid, standardized features and kernel options shared by every risk
/// evaluation at one resolution.
#[derive(Debug, Clone, Copy)]
pub struct TriggerModel<'a> {
    grid: &'a GeoGrid,
    features: &'a FeatureMatrix,
    options: KernelOptions,
}

impl<'a> TriggerModel<'a> {
    pub fn new(grid: &'a GeoGrid, features: &'a FeatureMatrix, options: KernelOptions) -> Result<Self> {
        if features.n_cells() != grid.n_cells() {
            return Err(Error::DimensionMismatch {
                expected: grid.n_cells(),
                found: features.n_cells(),
                context: "feature rows vs. grid cells".into(),
            });
        }
        Ok(Self { grid, features, options })
    }

    pub fn grid(&self) -> &'a GeoGrid {
        self.grid
    }

    pub fn features(&self) -> &'a FeatureMatrix {
        self.features
    }

    pub fn options(&self) -> KernelOptions {
        self.options
    }

    pub fn check_params(&self, params: &KernelParams) -> Result<()> {
        params.validate()?;
        if params.n_features() != self.features.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.features.dim(),
                found: params.n_features(),
                context: "kernel weights vs. feature columns".into(),
            });
        }
        Ok(())
    }

    fn check_priors(&self, priors: &[PriorHit], t: f64) -> Result<()> {
        for p in priors {
            self.grid.check_cell(p.cell)?;
            if !(p.time < t) {
                return Err(Error::InvalidParameter(format!(
                    "prior crime at time {} is not before evaluation time {t}",
                    p.time
                )));
            }
        }
        Ok(())
    }

    fn fill_diff(&self, l: usize, prior_cell: usize, buf: &mut [f64]) {
        let (cand, prior) = (self.features.row(l), self.features.row(prior_cell));
        for ((b, x), y) in buf.iter_mut().zip(cand).zip(prior) {
            *b = self.options.diff_mode.apply(*x, *y);
        }
    }

    /// Sum of kernels triggered at cell `l` by `priors`. Inputs are assumed
    /// validated.
    pub(crate) fn triggered(&self, params: &KernelParams, priors: &[PriorHit], t: f64, l: usize, buf: &mut Vec<f64>) -> f64 {
        buf.resize(self.features.dim(), 0.0);
        let mut sum = 0.0;
        for p in priors {
            self.fill_diff(l, p.cell, buf);
            let ds = self.grid.center_distance_km(l, p.cell);
            sum += eval_raw(params, ds, t - p.time, buf, self.options.clamp);
        }
        sum
    }

    /// Adds `scale * d(triggered)/d(theta)` into `grad`; returns the
    /// triggered sum.
    pub(crate) fn triggered_grad(
        &self,
        params: &KernelParams,
        priors: &[PriorHit],
        t: f64,
        l: usize,
        scale: f64,
        grad: &mut [f64],
        buf: &mut Vec<f64>,
    ) -> f64 {
        buf.resize(self.features.dim(), 0.0);
        let mut sum = 0.0;
        for p in priors {
            self.fill_diff(l, p.cell, buf);
            let ds = self.grid.center_distance_km(l, p.cell);
            sum += accumulate_grad(params, ds, t - p.time, buf, self.options.clamp, scale, grad);
        }
        sum
    }

    /// `mu_l + sum_i kappa(ds(l, g_i), t - t_i, dw(l, g_i))`.
    pub fn risk_cell(
        &self,
        background: &BackgroundField,
        params: &KernelParams,
        priors: &[PriorHit],
        t: f64,
        l: usize,
    ) -> Result<f64> {
        self.check_params(params)?;
        self.check_priors(priors, t)?;
        let mu = background.value(l)?;
        Ok(mu + self.triggered(params, priors, t, l, &mut Vec::new()))
    }

    pub fn risk_map(
        &self,
        background: &BackgroundField,
        params: &KernelParams,
        priors: &[PriorHit],
        t: f64,
    ) -> Result<RiskMap> {
        self.check_params(params)?;
        self.check_priors(priors, t)?;
        if background.n_cells() != self.grid.n_cells() {
            return Err(Error::DimensionMismatch {
                expected: self.grid.n_cells(),
                found: background.n_cells(),
                context: "background cells".into(),
            });
        }
        let mut buf = Vec::new();
        let values = background
            .values()
            .iter()
            .enumerate()
            .map(|(l, mu)| mu + self.triggered(params, priors, t, l, &mut buf))
            .collect::<Vec<_>>();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("risk map value".into()));
        }
        Ok(RiskMap { time: t, values })
    }
}

/// Risk of every cell for one series at one evaluation time.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskMap {
    pub time: f64,
    pub values: Vec<f64>,
}

impl RiskMap {
    pub fn rank_of(&self, l_true: usize) -> Result<usize> {
        rank_true_cell(&self.values, l_true)
    }

    /// Writes `row,col,center_lat,center_lon,risk`.
    pub fn write_csv<W: Write>(&self, grid: &GeoGrid, out: W) -> Result<()> {
        write_risk_csv(grid, &self.values, out)
    }

    pub fn to_geojson(&self, grid: &GeoGrid) -> serde_json::Value {
        risk_geojson(grid, &self.values)
    }
}

pub fn write_risk_csv<W: Write>(grid: &GeoGrid, values: &[f64], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["row", "col", "center_lat", "center_lon", "risk"])?;
    for (l, r) in values.iter().enumerate() {
        let (row, col) = grid.row_col(l);
        let c = grid.center_geo(l);
        w.write_record([
            row.to_string(),
            col.to_string(),
            c.lat.to_string(),
            c.lon.to_string(),
            r.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Grid cells as a polygon FeatureCollection with a `risk` property.
pub fn risk_geojson(grid: &GeoGrid, values: &[f64]) -> serde_json::Value {
    let features: Vec<_> = values
        .iter()
        .enumerate()
        .map(|(l, r)| {
            let (row, col) = grid.row_col(l);
            let ring = grid.cell_ring_geo(l);
            let mut coords: Vec<_> = ring.iter().map(|p| json!([p.lon, p.lat])).collect();
            coords.push(json!([ring[0].lon, ring[0].lat]));
            json!({
                "type": "Feature",
                "properties": { "row": row, "col": col, "risk": r },
                "geometry": { "type": "Polygon", "coordinates": [coords] },
            })
        })
        .collect();
    json!({ "type": "FeatureCollection", "features": features })
}

/// 1-based rank of `l_true`; every other cell with risk greater than or
/// equal to the true cell's counts against it.
pub fn rank_true_cell(values: &[f64], l_true: usize) -> Result<usize> {
    let r_true = *values
        .get(l_true)
        .ok_or(Error::CellOutOfRange { cell: l_true, cells: values.len() })?;
    let ahead = values
        .iter()
        .enumerate()
        .filter(|&(l, r)| l != l_true && *r >= r_true)
        .count();
    Ok(1 + ahead)
}
