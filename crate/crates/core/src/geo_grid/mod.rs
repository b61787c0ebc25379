//! Regular grid over the region of interest.
//!
//! All metric work happens in a local equirectangular projection about the
//! bounding-box center, so cells that are evenly spaced in degrees are also
//! evenly spaced in meters. Cells are indexed row-major with row 0 at the
//! southern edge and column 0 at the western edge: `l = row * u + col`.

mod features;
mod polygon;

pub use features::{
    aggregate_features, parse_land_use, parse_stations, AggregatedFeatures, FeatureMatrix,
    FeatureSchema, LandUseRecord, RejectedRecord,
};
pub use polygon::{polygon_cell_overlap, polygon_area_m2, Polygon};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }
}

/// Projected coordinates in meters relative to the grid's projection origin.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Xy {
    pub x: f64,
    pub y: f64,
}

impl Xy {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Xy) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Bounding box in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub min: GeoPoint,
    pub max: GeoPoint,
}

impl BBox {
    pub fn new(min: GeoPoint, max: GeoPoint) -> Result<Self> {
        let finite = [min.lat, min.lon, max.lat, max.lon].iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidGeometry("bounding box has non-finite corners".into()));
        }
        if !(max.lat > min.lat) || !(max.lon > min.lon) {
            return Err(Error::InvalidGeometry(format!(
                "bounding box ({}, {})-({}, {}) has zero or negative extent",
                min.lat, min.lon, max.lat, max.lon
            )));
        }
        if min.lat < -90.0 || max.lat > 90.0 {
            return Err(Error::InvalidGeometry("latitude outside [-90, 90]".into()));
        }
        Ok(Self { min, max })
    }

    pub fn center(&self) -> GeoPoint {
        GeoPoint::new(
            0.5 * (self.min.lat + self.max.lat),
            0.5 * (self.min.lon + self.max.lon),
        )
    }

    pub fn contains(&self, p: &GeoPoint) -> bool {
        p.lat >= self.min.lat && p.lat <= self.max.lat && p.lon >= self.min.lon && p.lon <= self.max.lon
    }
}

/// A `u x v` discretization of a bounding box; `u` columns along longitude,
/// `v` rows along latitude.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoGrid {
    bbox: BBox,
    u: usize,
    v: usize,
    origin: GeoPoint,
    meters_per_deg_lon: f64,
    meters_per_deg_lat: f64,
    centers: Vec<Xy>,
}

impl GeoGrid {
    pub fn new(bbox_min: GeoPoint, bbox_max: GeoPoint, u: usize, v: usize) -> Result<Self> {
        let bbox = BBox::new(bbox_min, bbox_max)?;
        Self::from_bbox(bbox, u, v)
    }

    pub fn from_bbox(bbox: BBox, u: usize, v: usize) -> Result<Self> {
        if u == 0 || v == 0 {
            return Err(Error::InvalidGeometry(format!("grid needs u, v >= 1 (got {u}x{v})")));
        }
        let origin = bbox.center();
        let meters_per_deg_lat = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
        let meters_per_deg_lon = meters_per_deg_lat * origin.lat.to_radians().cos();
        let mut grid = Self {
            bbox,
            u,
            v,
            origin,
            meters_per_deg_lon,
            meters_per_deg_lat,
            centers: Vec::new(),
        };
        grid.centers = (0..u * v).map(|l| grid.project(&grid.center_geo(l))).collect();
        Ok(grid)
    }

    /// Chooses the factorization `u * v = cells` whose cells are closest to
    /// square in projected meters.
    pub fn with_cell_count(bbox: BBox, cells: usize) -> Result<Self> {
        if cells == 0 {
            return Err(Error::InvalidGeometry("cell count must be >= 1".into()));
        }
        let probe = Self::from_bbox(bbox, 1, 1)?;
        let (width, height) = (probe.width_m(), probe.height_m());
        let mut best: Option<(f64, usize, usize)> = None;
        for u in 1..=cells {
            if cells % u != 0 {
                continue;
            }
            let v = cells / u;
            let aspect = ((width / u as f64) / (height / v as f64)).ln().abs();
            if best.map_or(true, |(a, _, _)| aspect < a) {
                best = Some((aspect, u, v));
            }
        }
        let (_, u, v) = best.expect("at least the 1 x cells factorization exists");
        Self::from_bbox(bbox, u, v)
    }

    pub fn bbox(&self) -> &BBox {
        &self.bbox
    }

    pub fn u(&self) -> usize {
        self.u
    }

    pub fn v(&self) -> usize {
        self.v
    }

    pub fn origin(&self) -> GeoPoint {
        self.origin
    }

    pub fn n_cells(&self) -> usize {
        self.u * self.v
    }

    pub fn width_m(&self) -> f64 {
        (self.bbox.max.lon - self.bbox.min.lon) * self.meters_per_deg_lon
    }

    pub fn height_m(&self) -> f64 {
        (self.bbox.max.lat - self.bbox.min.lat) * self.meters_per_deg_lat
    }

    pub fn cell_width_m(&self) -> f64 {
        self.width_m() / self.u as f64
    }

    pub fn cell_height_m(&self) -> f64 {
        self.height_m() / self.v as f64
    }

    /// Geometric mean of the cell width and height.
    pub fn cell_side_m(&self) -> f64 {
        (self.cell_width_m() * self.cell_height_m()).sqrt()
    }

    fn cell_deg(&self) -> (f64, f64) {
        (
            (self.bbox.max.lat - self.bbox.min.lat) / self.v as f64,
            (self.bbox.max.lon - self.bbox.min.lon) / self.u as f64,
        )
    }

    pub fn project(&self, p: &GeoPoint) -> Xy {
        Xy::new(
            (p.lon - self.origin.lon) * self.meters_per_deg_lon,
            (p.lat - self.origin.lat) * self.meters_per_deg_lat,
        )
    }

    pub fn unproject(&self, xy: &Xy) -> GeoPoint {
        GeoPoint::new(
            self.origin.lat + xy.y / self.meters_per_deg_lat,
            self.origin.lon + xy.x / self.meters_per_deg_lon,
        )
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.u + col
    }

    pub fn row_col(&self, l: usize) -> (usize, usize) {
        (l / self.u, l % self.u)
    }

    pub fn check_cell(&self, l: usize) -> Result<()> {
        if l < self.n_cells() {
            Ok(())
        } else {
            Err(Error::CellOutOfRange { cell: l, cells: self.n_cells() })
        }
    }

    /// Cell containing `p`. A point on an interior edge belongs to the
    /// lower-indexed cell; the bbox edges belong to the adjacent cells.
    pub fn locate(&self, p: &GeoPoint) -> Result<usize> {
        if !p.lat.is_finite() || !p.lon.is_finite() || !self.bbox.contains(p) {
            return Err(Error::OutOfRegion { lat: p.lat, lon: p.lon });
        }
        let (dlat, dlon) = self.cell_deg();
        let col = edge_index((p.lon - self.bbox.min.lon) / dlon, self.u);
        let row = edge_index((p.lat - self.bbox.min.lat) / dlat, self.v);
        Ok(self.index(row, col))
    }

    pub fn center_geo(&self, l: usize) -> GeoPoint {
        let (row, col) = self.row_col(l);
        let (dlat, dlon) = self.cell_deg();
        GeoPoint::new(
            self.bbox.min.lat + (row as f64 + 0.5) * dlat,
            self.bbox.min.lon + (col as f64 + 0.5) * dlon,
        )
    }

    /// Projected cell center in meters.
    pub fn center(&self, l: usize) -> Xy {
        self.centers[l]
    }

    pub fn centers(&self) -> &[Xy] {
        &self.centers
    }

    /// Distance between two cell centers in kilometers.
    pub fn center_distance_km(&self, a: usize, b: usize) -> f64 {
        self.centers[a].distance(&self.centers[b]) / 1000.0
    }

    /// Cell bounds in projected meters as `(min, max)`.
    pub fn cell_rect_m(&self, l: usize) -> (Xy, Xy) {
        let (row, col) = self.row_col(l);
        let (dlat, dlon) = self.cell_deg();
        let sw = GeoPoint::new(
            self.bbox.min.lat + row as f64 * dlat,
            self.bbox.min.lon + col as f64 * dlon,
        );
        let ne = GeoPoint::new(
            self.bbox.min.lat + (row + 1) as f64 * dlat,
            self.bbox.min.lon + (col + 1) as f64 * dlon,
        );
        (self.project(&sw), self.project(&ne))
    }

    /// Cell corners in degrees, counter-clockwise from the south-west corner.
    pub fn cell_ring_geo(&self, l: usize) -> [GeoPoint; 4] {
        let (row, col) = self.row_col(l);
        let (dlat, dlon) = self.cell_deg();
        let lat0 = self.bbox.min.lat + row as f64 * dlat;
        let lon0 = self.bbox.min.lon + col as f64 * dlon;
        [
            GeoPoint::new(lat0, lon0),
            GeoPoint::new(lat0, lon0 + dlon),
            GeoPoint::new(lat0 + dlat, lon0 + dlon),
            GeoPoint::new(lat0 + dlat, lon0),
        ]
    }

    /// Inclusive column/row ranges of cells touched by a projected rectangle,
    /// clamped to the grid. `None` when the rectangle misses the grid.
    pub(crate) fn cell_span(&self, min: Xy, max: Xy) -> Option<(usize, usize, usize, usize)> {
        let (gmin, gmax) = (self.project(&self.bbox.min), self.project(&self.bbox.max));
        if max.x < gmin.x || min.x > gmax.x || max.y < gmin.y || min.y > gmax.y {
            return None;
        }
        let (cw, ch) = (self.cell_width_m(), self.cell_height_m());
        let clamp = |v: f64, n: usize| (v.max(0.0) as usize).min(n - 1);
        let c0 = clamp(((min.x - gmin.x) / cw).floor(), self.u);
        let c1 = clamp(((max.x - gmin.x) / cw).floor(), self.u);
        let r0 = clamp(((min.y - gmin.y) / ch).floor(), self.v);
        let r1 = clamp(((max.y - gmin.y) / ch).floor(), self.v);
        Some((c0, c1, r0, r1))
    }
}

fn edge_index(frac: f64, n: usize) -> usize {
    let idx = frac.ceil() as i64 - 1;
    idx.clamp(0, n as i64 - 1) as usize
}
