//! Per-cell geographic features: land-use areas, fractional building counts,
//! residential asset value and distance to the nearest transit station.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::polygon::{polygon_cell_overlap, Polygon};
use super::{polygon_area_m2, GeoGrid, GeoPoint};
use crate::error::{Error, Result};

/// Which land-use subtypes become features, and which of them carry an
/// asset value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSchema {
    pub subtypes: Vec<String>,
    pub residential: Vec<String>,
}

impl Default for FeatureSchema {
    fn default() -> Self {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect();
        Self {
            subtypes: s(&[
                "open_space",
                "single_family",
                "two_family",
                "commercial",
                "apartment",
                "transportation",
            ]),
            residential: s(&["single_family", "two_family", "apartment"]),
        }
    }
}

impl FeatureSchema {
    fn position(&self, subtype: &str) -> Option<usize> {
        self.subtypes.iter().position(|s| s == subtype)
    }

    fn is_residential(&self, subtype: &str) -> bool {
        self.residential.iter().any(|s| s == subtype)
    }

    /// Column names in output order.
    pub fn feature_names(&self, with_stations: bool) -> Vec<String> {
        let mut names: Vec<String> = self.subtypes.iter().map(|s| format!("area_{s}")).collect();
        names.extend(self.subtypes.iter().map(|s| format!("count_{s}")));
        names.push("asset_value".into());
        if with_stations {
            names.push("station_distance".into());
        }
        names
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandUseRecord {
    pub polygon: Polygon,
    pub subtype: String,
    pub asset_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RejectedRecord {
    pub index: usize,
    pub reason: String,
}

/// Dense `cells x J` feature matrix, row-major by cell.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    names: Vec<String>,
    n_cells: usize,
    values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(names: Vec<String>, n_cells: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != names.len() * n_cells {
            return Err(Error::DimensionMismatch {
                expected: names.len() * n_cells,
                found: values.len(),
                context: "feature matrix values".into(),
            });
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("feature value at flat index {bad}")));
        }
        Ok(Self { names, n_cells, values })
    }

    /// A matrix with no feature columns (J = 0).
    pub fn empty(n_cells: usize) -> Self {
        Self { names: Vec::new(), n_cells, values: Vec::new() }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn row(&self, l: usize) -> &[f64] {
        let j = self.dim();
        &self.values[l * j..(l + 1) * j]
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        let dim = self.dim();
        (0..self.n_cells).map(move |l| self.values[l * dim + j])
    }

    /// Z-scores every column across cells (population variance). Columns with
    /// no spread map to 0.
    pub fn standardized(&self) -> Self {
        let dim = self.dim();
        let n = self.n_cells as f64;
        let mut values = self.values.clone();
        for j in 0..dim {
            let mean = self.column(j).sum::<f64>() / n;
            let var = self.column(j).map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            let flat = sd <= 1e-12 * mean.abs().max(1.0);
            for l in 0..self.n_cells {
                let x = &mut values[l * dim + j];
                *x = if flat { 0.0 } else { (*x - mean) / sd };
            }
        }
        Self { names: self.names.clone(), n_cells: self.n_cells, values }
    }

    /// Nearest-cell resampling onto another grid: each target cell takes the
    /// row of the source cell containing its center.
    pub fn resample(&self, from: &GeoGrid, to: &GeoGrid) -> Result<Self> {
        if from.n_cells() != self.n_cells {
            return Err(Error::DimensionMismatch {
                expected: self.n_cells,
                found: from.n_cells(),
                context: "source grid cells".into(),
            });
        }
        let mut values = Vec::with_capacity(to.n_cells() * self.dim());
        for l in 0..to.n_cells() {
            let src = from.locate(&to.center_geo(l))?;
            values.extend_from_slice(self.row(src));
        }
        Self::new(self.names.clone(), to.n_cells(), values)
    }

    /// Writes `row,col,<names...>`, one line per cell in index order.
    pub fn write_csv<W: Write>(&self, grid: &GeoGrid, out: W) -> Result<()> {
        self.check_grid(grid)?;
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["row".to_string(), "col".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        for l in 0..self.n_cells {
            let (row, col) = grid.row_col(l);
            let mut rec = vec![row.to_string(), col.to_string()];
            rec.extend(self.row(l).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the CSV written by [`FeatureMatrix::write_csv`]; every cell of
    /// `grid` must appear exactly once.
    pub fn read_csv<R: Read>(grid: &GeoGrid, input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        if header.len() < 2 || &header[0] != "row" || &header[1] != "col" {
            return Err(Error::Parse("feature CSV header must start with row,col".into()));
        }
        let names: Vec<String> = header.iter().skip(2).map(String::from).collect();
        let dim = names.len();
        let mut values = vec![f64::NAN; grid.n_cells() * dim];
        let mut seen = vec![false; grid.n_cells()];
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let parse_idx = |k: usize| -> Result<usize> {
                rec.get(k)
                    .and_then(|s| s.trim().parse().ok())
                    .ok_or_else(|| Error::Parse(format!("feature CSV line {}: bad row/col", i + 2)))
            };
            let (row, col) = (parse_idx(0)?, parse_idx(1)?);
            if row >= grid.v() || col >= grid.u() {
                return Err(Error::Parse(format!(
                    "feature CSV line {}: cell ({row}, {col}) outside {}x{} grid",
                    i + 2,
                    grid.u(),
                    grid.v()
                )));
            }
            let l = grid.index(row, col);
            if std::mem::replace(&mut seen[l], true) {
                return Err(Error::Parse(format!("feature CSV line {}: duplicate cell", i + 2)));
            }
            if rec.len() != dim + 2 {
                return Err(Error::Parse(format!("feature CSV line {}: wrong field count", i + 2)));
            }
            for j in 0..dim {
                values[l * dim + j] = rec[j + 2]
                    .trim()
                    .parse()
                    .map_err(|_| Error::Parse(format!("feature CSV line {}: bad number", i + 2)))?;
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            let (row, col) = grid.row_col(missing);
            return Err(Error::Parse(format!("feature CSV is missing cell ({row}, {col})")));
        }
        Self::new(names, grid.n_cells(), values)
    }

    fn check_grid(&self, grid: &GeoGrid) -> Result<()> {
        if grid.n_cells() != self.n_cells {
            return Err(Error::DimensionMismatch {
                expected: self.n_cells,
                found: grid.n_cells(),
                context: "grid cells".into(),
            });
        }
        Ok(())
    }
}

/// Raw (unstandardized) features plus the records that were skipped.
#[derive(Debug, Clone)]
pub struct AggregatedFeatures {
    pub matrix: FeatureMatrix,
    pub rejected: Vec<RejectedRecord>,
}

/// Sums land-use overlap into per-cell features. Records whose subtype is not
/// in the schema are skipped and reported. When `stations` is empty the
/// station-distance column is omitted.
pub fn aggregate_features(
    grid: &GeoGrid,
    records: &[LandUseRecord],
    stations: &[GeoPoint],
    schema: &FeatureSchema,
) -> AggregatedFeatures {
    let k = schema.subtypes.len();
    let names = schema.feature_names(!stations.is_empty());
    let dim = names.len();
    let n = grid.n_cells();
    let mut values = vec![0.0; n * dim];
    let mut rejected = Vec::new();

    for (index, rec) in records.iter().enumerate() {
        let Some(s) = schema.position(&rec.subtype) else {
            rejected.push(RejectedRecord {
                index,
                reason: format!("unknown subtype '{}'", rec.subtype),
            });
            continue;
        };
        let area = polygon_area_m2(grid, &rec.polygon);
        let asset = if schema.is_residential(&rec.subtype) {
            rec.asset_value.unwrap_or(0.0)
        } else {
            0.0
        };
        for (l, frac) in polygon_cell_overlap(grid, &rec.polygon) {
            let row = &mut values[l * dim..(l + 1) * dim];
            row[s] += frac * area;
            row[k + s] += frac;
            row[2 * k] += frac * asset;
        }
    }
    if !rejected.is_empty() {
        log::warn!("{} land-use records rejected", rejected.len());
    }

    if !stations.is_empty() {
        let projected: Vec<_> = stations.iter().map(|p| grid.project(p)).collect();
        for l in 0..n {
            let c = grid.center(l);
            let d = projected.iter().map(|s| c.distance(s)).fold(f64::INFINITY, f64::min);
            values[l * dim + dim - 1] = d;
        }
    }

    let matrix = FeatureMatrix::new(names, n, values).expect("aggregated features are finite");
    AggregatedFeatures { matrix, rejected }
}

fn parse_ring(v: &Value) -> Result<Vec<GeoPoint>> {
    let arr = v
        .as_array()
        .ok_or_else(|| Error::Parse("polygon ring is not an array".into()))?;
    arr.iter()
        .map(|pos| {
            let p = pos.as_array().filter(|p| p.len() >= 2);
            match p.map(|p| (p[0].as_f64(), p[1].as_f64())) {
                Some((Some(lon), Some(lat))) => Ok(GeoPoint::new(lat, lon)),
                _ => Err(Error::Parse("invalid GeoJSON position".into())),
            }
        })
        .collect()
}

fn features_of(doc: &Value) -> Result<&Vec<Value>> {
    if doc.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(Error::Parse("expected a GeoJSON FeatureCollection".into()));
    }
    doc.get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Parse("FeatureCollection has no features array".into()))
}

/// Parses a land-use FeatureCollection of `Polygon` features carrying a
/// `subtype` string and an optional `asset_value` number. Polygons with holes
/// and other geometry types are errors.
pub fn parse_land_use(geojson: &str) -> Result<Vec<LandUseRecord>> {
    let doc: Value = serde_json::from_str(geojson)?;
    let mut out = Vec::new();
    for (i, feat) in features_of(&doc)?.iter().enumerate() {
        let geom = feat
            .get("geometry")
            .ok_or_else(|| Error::Parse(format!("feature {i} has no geometry")))?;
        match geom.get("type").and_then(Value::as_str) {
            Some("Polygon") => {}
            other => {
                return Err(Error::InvalidGeometry(format!(
                    "feature {i}: unsupported geometry type {other:?}"
                )))
            }
        }
        let rings = geom
            .get("coordinates")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Parse(format!("feature {i} has no coordinates")))?;
        if rings.len() != 1 {
            return Err(Error::InvalidGeometry(format!(
                "feature {i}: polygons with holes are not supported"
            )));
        }
        let polygon = Polygon::new(parse_ring(&rings[0])?)
            .map_err(|e| Error::InvalidGeometry(format!("feature {i}: {e}")))?;
        let props = feat.get("properties");
        let subtype = props
            .and_then(|p| p.get("subtype"))
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Parse(format!("feature {i} has no string 'subtype'")))?
            .to_string();
        let asset_value = match props.and_then(|p| p.get("asset_value")) {
            None | Some(Value::Null) => None,
            Some(v) => {
                let a = v
                    .as_f64()
                    .ok_or_else(|| Error::Parse(format!("feature {i}: asset_value is not a number")))?;
                if !(a >= 0.0) || !a.is_finite() {
                    return Err(Error::Parse(format!("feature {i}: asset_value must be >= 0")));
                }
                Some(a)
            }
        };
        out.push(LandUseRecord { polygon, subtype, asset_value });
    }
    Ok(out)
}

/// Parses transit stations from a FeatureCollection of `Point` or
/// `MultiPoint` features.
pub fn parse_stations(geojson: &str) -> Result<Vec<GeoPoint>> {
    let doc: Value = serde_json::from_str(geojson)?;
    let mut out = Vec::new();
    for (i, feat) in features_of(&doc)?.iter().enumerate() {
        let geom = feat
            .get("geometry")
            .ok_or_else(|| Error::Parse(format!("station {i} has no geometry")))?;
        let coords = geom.get("coordinates").cloned().unwrap_or(Value::Null);
        match geom.get("type").and_then(Value::as_str) {
            Some("Point") => out.extend(parse_ring(&Value::Array(vec![coords]))?),
            Some("MultiPoint") => out.extend(parse_ring(&coords)?),
            other => {
                return Err(Error::Parse(format!("station {i}: unsupported geometry {other:?}")))
            }
        }
    }
    Ok(out)
}
