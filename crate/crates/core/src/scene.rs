//! Everything tied to one grid resolution: the grid, its standardized
//! feature matrix and the event history used for background fits.

use serde::{Deserialize, Serialize};

use crate::background::{fit_background, BackgroundField, EventPoint, DEFAULT_BANDWIDTH_CELLS, DEFAULT_WINDOW_DAYS};
use crate::error::{Error, Result};
use crate::events::{CrimeInstance, EventStore};
use crate::geo_grid::{FeatureMatrix, GeoGrid};
use crate::risk::PriorHit;

/// Trailing window and bandwidth of a background KDE. The bandwidth is in
/// cell sides so one setting carries across resolutions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackgroundSpec {
    pub window_days: f64,
    pub bandwidth_cells: f64,
}

impl Default for BackgroundSpec {
    fn default() -> Self {
        Self { window_days: DEFAULT_WINDOW_DAYS, bandwidth_cells: DEFAULT_BANDWIDTH_CELLS }
    }
}

impl BackgroundSpec {
    pub fn bandwidth_m(&self, grid: &GeoGrid) -> f64 {
        self.bandwidth_cells * grid.cell_side_m()
    }
}

#[derive(Debug, Clone)]
struct HistoryEvent {
    id: String,
    point: EventPoint,
}

#[derive(Debug, Clone)]
pub struct Scene {
    grid: GeoGrid,
    features: FeatureMatrix,
    history: Vec<HistoryEvent>,
}

impl Scene {
    /// `features` are standardized here; passing an already standardized
    /// matrix is harmless.
    pub fn new(grid: GeoGrid, features: &FeatureMatrix, history: &EventStore) -> Result<Self> {
        if features.n_cells() != grid.n_cells() {
            return Err(Error::DimensionMismatch {
                expected: grid.n_cells(),
                found: features.n_cells(),
                context: "feature rows vs. grid cells".into(),
            });
        }
        let history = history
            .crimes()
            .iter()
            .map(|c| HistoryEvent { id: c.id.clone(), point: EventPoint { xy: grid.project(&c.location), time: c.time } })
            .collect();
        Ok(Self { features: features.standardized(), grid, history })
    }

    pub fn grid(&self) -> &GeoGrid {
        &self.grid
    }

    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    /// Background at `t`, leaving out the crime being predicted.
    pub fn background_at(&self, t: f64, spec: &BackgroundSpec, exclude_id: Option<&str>) -> Result<BackgroundField> {
        let start = t - spec.window_days;
        // history is sorted by time, so the window is a contiguous slice
        let lo = self.history.partition_point(|e| e.point.time < start);
        let hi = self.history.partition_point(|e| e.point.time < t);
        let points: Vec<EventPoint> = self.history[lo..hi]
            .iter()
            .filter(|e| Some(e.id.as_str()) != exclude_id)
            .map(|e| e.point)
            .collect();
        fit_background(&self.grid, &points, t, spec.window_days, spec.bandwidth_m(&self.grid))
    }

    pub fn prior_hits(&self, priors: &[CrimeInstance]) -> Result<Vec<PriorHit>> {
        priors
            .iter()
            .map(|c| Ok(PriorHit { cell: self.grid.locate(&c.location)?, time: c.time }))
            .collect()
    }
}
