//! Cohort-wide background risk: a Gaussian KDE over a trailing window of
//! events, evaluated at cell centers and normalized to sum to one.

use std::io::Write;

use crate::error::{Error, Result};
use crate::geo_grid::{GeoGrid, Xy};

pub const DEFAULT_WINDOW_DAYS: f64 = 730.0;
pub const DEFAULT_BANDWIDTH_CELLS: f64 = 2.0;

/// A historical event reduced to what the KDE needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventPoint {
    pub xy: Xy,
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundField {
    values: Vec<f64>,
    intensity: Vec<f64>,
    time: f64,
    window_days: f64,
    bandwidth_m: f64,
    n_events: usize,
}

impl BackgroundField {
    /// Normalized per-cell values.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Unnormalized kernel sums.
    pub fn intensity(&self) -> &[f64] {
        &self.intensity
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn window_days(&self) -> f64 {
        self.window_days
    }

    pub fn bandwidth_m(&self) -> f64 {
        self.bandwidth_m
    }

    /// Events that fell inside the window.
    pub fn n_events(&self) -> usize {
        self.n_events
    }

    pub fn n_cells(&self) -> usize {
        self.values.len()
    }

    pub fn value(&self, l: usize) -> Result<f64> {
        self.values
            .get(l)
            .copied()
            .ok_or(Error::CellOutOfRange { cell: l, cells: self.values.len() })
    }

    /// A uniform field, used when the window holds no events.
    pub fn uniform(n_cells: usize, time: f64, window_days: f64, bandwidth_m: f64) -> Self {
        let u = 1.0 / n_cells as f64;
        Self {
            values: vec![u; n_cells],
            intensity: vec![0.0; n_cells],
            time,
            window_days,
            bandwidth_m,
            n_events: 0,
        }
    }

    /// Writes `row,col,mu`.
    pub fn write_csv<W: Write>(&self, grid: &GeoGrid, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["row", "col", "mu"])?;
        for (l, mu) in self.values.iter().enumerate() {
            let (row, col) = grid.row_col(l);
            w.write_record([row.to_string(), col.to_string(), mu.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Unnormalized isotropic Gaussian kernel sums at every cell center.
///
/// Cell centers form a tensor grid, so each point contributes an outer
/// product of a row profile and a column profile.
pub fn gaussian_kernel_sums(grid: &GeoGrid, points: impl IntoIterator<Item = Xy>, bandwidth_m: f64) -> Vec<f64> {
    let (u, v) = (grid.u(), grid.v());
    let xs: Vec<f64> = (0..u).map(|c| grid.center(grid.index(0, c)).x).collect();
    let ys: Vec<f64> = (0..v).map(|r| grid.center(grid.index(r, 0)).y).collect();
    let inv = 1.0 / (2.0 * bandwidth_m * bandwidth_m);
    let mut out = vec![0.0; u * v];
    let mut col_profile = vec![0.0; u];
    for p in points {
        for (b, x) in col_profile.iter_mut().zip(&xs) {
            *b = (-(x - p.x).powi(2) * inv).exp();
        }
        for (r, y) in ys.iter().enumerate() {
            let a = (-(y - p.y).powi(2) * inv).exp();
            if a == 0.0 {
                continue;
            }
            let row = &mut out[r * u..(r + 1) * u];
            for (o, b) in row.iter_mut().zip(&col_profile) {
                *o += a * b;
            }
        }
    }
    out
}

/// Divides by the total; `None` when every entry is zero.
pub(crate) fn normalize(raw: &[f64]) -> Option<Vec<f64>> {
    let total: f64 = raw.iter().sum();
    (total > 0.0).then(|| raw.iter().map(|x| x / total).collect())
}

/// Fits the background at time `t` from events with `t - window <= time < t`.
pub fn fit_background(
    grid: &GeoGrid,
    events: &[EventPoint],
    t: f64,
    window_days: f64,
    bandwidth_m: f64,
) -> Result<BackgroundField> {
    if !(window_days > 0.0) || !(bandwidth_m > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "background window ({window_days}) and bandwidth ({bandwidth_m}) must be positive"
        )));
    }
    if !t.is_finite() {
        return Err(Error::NonFinite("background evaluation time".into()));
    }
    let start = t - window_days;
    let in_window: Vec<Xy> = events
        .iter()
        .filter(|e| e.time >= start && e.time < t)
        .map(|e| e.xy)
        .collect();
    let n = grid.n_cells();
    if in_window.is_empty() {
        return Ok(BackgroundField::uniform(n, t, window_days, bandwidth_m));
    }
    let intensity = gaussian_kernel_sums(grid, in_window.iter().copied(), bandwidth_m);
    let Some(values) = normalize(&intensity) else {
        log::warn!("background kernel sums underflowed; falling back to uniform");
        return Ok(BackgroundField::uniform(n, t, window_days, bandwidth_m));
    };
    Ok(BackgroundField {
        values,
        intensity,
        time: t,
        window_days,
        bandwidth_m,
        n_events: in_window.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo_grid::GeoPoint;

    fn grid() -> GeoGrid {
        GeoGrid::new(GeoPoint::new(42.0, -71.1), GeoPoint::new(42.01, -71.09), 10, 10).unwrap()
    }

    fn at_cell(grid: &GeoGrid, l: usize, time: f64) -> EventPoint {
        EventPoint { xy: grid.center(l), time }
    }

    #[test]
    fn single_event_mode_is_its_cell() {
        let g = grid();
        let f = fit_background(&g, &[at_cell(&g, 37, 5.0)], 10.0, 730.0, 150.0).unwrap();
        let argmax = (0..g.n_cells()).max_by(|&a, &b| f.values()[a].total_cmp(&f.values()[b])).unwrap();
        assert_eq!(argmax, 37);
        assert_eq!(f.value(37).unwrap(), f.values().iter().cloned().fold(f64::MIN, f64::max));
    }

    #[test]
    fn empty_window_is_uniform() {
        let g = grid();
        let f = fit_background(&g, &[at_cell(&g, 3, 50.0)], 10.0, 730.0, 150.0).unwrap();
        assert!(f.values().iter().all(|&v| v == 0.01));
        assert_eq!(f.value(42).unwrap(), 0.01);
        assert!(matches!(f.value(100), Err(Error::CellOutOfRange { .. })));
    }

    #[test]
    fn window_is_half_open() {
        let g = grid();
        let events = [at_cell(&g, 0, 10.0), at_cell(&g, 99, 10.0 - 30.0)];
        let f = fit_background(&g, &events, 10.0, 30.0, 100.0).unwrap();
        assert_eq!(f.n_events(), 1);
        assert!(f.values()[99] > f.values()[0]);
    }

    #[test]
    fn adding_event_never_lowers_its_cell_intensity() {
        let g = grid();
        let base = [at_cell(&g, 10, 1.0), at_cell(&g, 55, 2.0)];
        let a = fit_background(&g, &base, 5.0, 730.0, 200.0).unwrap();
        let mut more = base.to_vec();
        more.push(at_cell(&g, 55, 3.0));
        let b = fit_background(&g, &more, 5.0, 730.0, 200.0).unwrap();
        assert!(b.intensity()[55] >= a.intensity()[55]);
    }

    #[test]
    fn rejects_non_positive_parameters() {
        let g = grid();
        assert!(fit_background(&g, &[], 1.0, 0.0, 10.0).is_err());
        assert!(fit_background(&g, &[], 1.0, 10.0, -1.0).is_err());
    }
}
