//! Crime events, series views and the train/test protocol.

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo_grid::{GeoGrid, GeoPoint};

/// Days after the most recent prior offense at which the next hit is scored.
pub const PREDICTION_LAG_DAYS: f64 = 1.0;

/// One located, timestamped offense. `series == 0` marks a singleton.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrimeInstance {
    pub id: String,
    pub location: GeoPoint,
    /// Fractional days since 1970-01-01T00:00:00Z.
    pub time: f64,
    pub series: u32,
    /// Cell under the grid the store was built with.
    pub cell: usize,
}

/// An unvalidated events-CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRow {
    pub id: String,
    pub series: i64,
    pub lat: f64,
    pub lon: f64,
    pub timestamp: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    /// 1-based data row (the header is not counted).
    pub row: usize,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub store: EventStore,
    pub rejections: Vec<Rejection>,
}

/// All crimes, sorted by `(time, id)`, with a per-series index.
#[derive(Debug, Clone, PartialEq)]
pub struct EventStore {
    crimes: Vec<CrimeInstance>,
    series: BTreeMap<u32, Vec<usize>>,
}

fn chrono_order(a: &CrimeInstance, b: &CrimeInstance) -> std::cmp::Ordering {
    a.time.total_cmp(&b.time).then_with(|| a.id.cmp(&b.id))
}

impl EventStore {
    /// Builds a store from already-validated crimes. Ids must be unique.
    pub fn from_crimes(mut crimes: Vec<CrimeInstance>) -> Result<Self> {
        let mut ids = HashSet::with_capacity(crimes.len());
        for c in &crimes {
            if !c.time.is_finite() {
                return Err(Error::NonFinite(format!("time of crime {}", c.id)));
            }
            if !ids.insert(c.id.as_str()) {
                return Err(Error::InvalidParameter(format!("duplicate crime id {}", c.id)));
            }
        }
        crimes.sort_by(chrono_order);
        let mut series: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, c) in crimes.iter().enumerate() {
            if c.series > 0 {
                series.entry(c.series).or_default().push(i);
            }
        }
        Ok(Self { crimes, series })
    }

    pub fn crimes(&self) -> &[CrimeInstance] {
        &self.crimes
    }

    pub fn len(&self) -> usize {
        self.crimes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.crimes.is_empty()
    }

    /// Number of distinct series (P).
    pub fn n_series(&self) -> usize {
        self.series.len()
    }

    pub fn series_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.series.keys().copied()
    }

    /// Crimes of series `p` in chronological order (empty for unknown `p`).
    pub fn series(&self, p: u32) -> Vec<&CrimeInstance> {
        self.series
            .get(&p)
            .map(|idx| idx.iter().map(|&i| &self.crimes[i]).collect())
            .unwrap_or_default()
    }

    pub fn singletons(&self) -> impl Iterator<Item = &CrimeInstance> {
        self.crimes.iter().filter(|c| c.series == 0)
    }

    /// Same crimes with cells recomputed under `grid`.
    pub fn regrid(&self, grid: &GeoGrid) -> Result<Self> {
        let crimes = self
            .crimes
            .iter()
            .map(|c| Ok(CrimeInstance { cell: grid.locate(&c.location)?, ..c.clone() }))
            .collect::<Result<Vec<_>>>()?;
        Self::from_crimes(crimes)
    }

    /// Adds held-out crimes back into a store.
    pub fn merge(&self, extra: &[CrimeInstance]) -> Result<Self> {
        let mut all = self.crimes.clone();
        all.extend(extra.iter().cloned());
        Self::from_crimes(all)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["id", "series", "lat", "lon", "timestamp"])?;
        for c in &self.crimes {
            w.write_record([
                c.id.clone(),
                c.series.to_string(),
                c.location.lat.to_string(),
                c.location.lon.to_string(),
                c.time.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Parses a timestamp as fractional epoch days, or as an ISO-8601 date or
/// date-time (UTC when no offset is given).
pub fn parse_timestamp(s: &str) -> Option<f64> {
    let s = s.trim();
    if let Ok(days) = s.parse::<f64>() {
        return days.is_finite().then_some(days);
    }
    let secs = if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        dt.timestamp_millis() as f64 / 1000.0
    } else if let Ok(dt) = NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S%.f") {
        dt.and_utc().timestamp_millis() as f64 / 1000.0
    } else if let Ok(dt) = NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S%.f") {
        dt.and_utc().timestamp_millis() as f64 / 1000.0
    } else if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        d.and_hms_opt(0, 0, 0)?.and_utc().timestamp() as f64
    } else {
        return None;
    };
    Some(secs / 86_400.0)
}

/// Validates rows against the region and builds a store. Bad rows are
/// skipped and reported; later duplicates of an id are rejected.
pub fn ingest_events(rows: impl IntoIterator<Item = EventRow>, grid: &GeoGrid) -> Ingested {
    let mut crimes = Vec::new();
    let mut rejections = Vec::new();
    let mut ids = HashSet::new();
    for (i, row) in rows.into_iter().enumerate() {
        match validate_row(&row, grid, &ids) {
            Ok(c) => {
                ids.insert(c.id.clone());
                crimes.push(c);
            }
            Err(reason) => rejections.push(Rejection { row: i + 1, reason }),
        }
    }
    if !rejections.is_empty() {
        log::warn!("{} event rows rejected", rejections.len());
    }
    let store = EventStore::from_crimes(crimes).expect("rows were validated");
    Ingested { store, rejections }
}

fn validate_row(row: &EventRow, grid: &GeoGrid, ids: &HashSet<String>) -> std::result::Result<CrimeInstance, String> {
    let id = row.id.trim();
    if id.is_empty() {
        return Err("empty id".into());
    }
    if ids.contains(id) {
        return Err(format!("duplicate id {id}"));
    }
    let series = u32::try_from(row.series).map_err(|_| format!("invalid series label {}", row.series))?;
    let time = parse_timestamp(&row.timestamp).ok_or_else(|| format!("unparseable timestamp '{}'", row.timestamp))?;
    let location = GeoPoint::new(row.lat, row.lon);
    let cell = grid
        .locate(&location)
        .map_err(|_| format!("location ({}, {}) outside region", row.lat, row.lon))?;
    Ok(CrimeInstance { id: id.to_string(), location, time, series, cell })
}

/// Reads an events CSV (`id,series,lat,lon,timestamp`). Rows that fail to
/// parse become rejections rather than errors.
pub fn read_events_csv<R: Read>(input: R, grid: &GeoGrid) -> Result<Ingested> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header = r.headers()?.clone();
    let expected = ["id", "series", "lat", "lon", "timestamp"];
    if header.len() != expected.len() || header.iter().zip(expected).any(|(a, b)| a != b) {
        return Err(Error::Parse(format!(
            "events CSV header must be {}, got {}",
            expected.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut rows = Vec::new();
    let mut parse_failures = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let parsed = rec
            .map_err(|e| e.to_string())
            .and_then(|rec| rec.deserialize::<EventRow>(Some(&header)).map_err(|e| e.to_string()));
        match parsed {
            Ok(row) => rows.push((i + 1, row)),
            Err(reason) => parse_failures.push(Rejection { row: i + 1, reason: format!("unparseable row: {reason}") }),
        }
    }
    let row_numbers: Vec<usize> = rows.iter().map(|(n, _)| *n).collect();
    let mut ingested = ingest_events(rows.into_iter().map(|(_, r)| r), grid);
    for rej in &mut ingested.rejections {
        rej.row = row_numbers[rej.row - 1];
    }
    ingested.rejections.extend(parse_failures);
    ingested.rejections.sort_by_key(|r| r.row);
    Ok(ingested)
}

/// Writes rejections as JSON lines.
pub fn write_rejections<W: Write>(rejections: &[Rejection], mut out: W) -> Result<()> {
    for r in rejections {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Result of holding out the chronologically last crime of every series.
#[derive(Debug, Clone)]
pub struct Split {
    pub train: EventStore,
    pub tests: Vec<CrimeInstance>,
    /// Series with a single crime; they stay entirely in `train`.
    pub excluded_series: Vec<u32>,
}

pub fn split_train_test(store: &EventStore) -> Split {
    let mut held = HashSet::new();
    let mut tests = Vec::new();
    let mut excluded_series = Vec::new();
    for (&p, idx) in &store.series {
        if idx.len() < 2 {
            excluded_series.push(p);
            continue;
        }
        let last = *idx.last().unwrap();
        held.insert(last);
        tests.push(store.crimes[last].clone());
    }
    if !excluded_series.is_empty() {
        log::warn!("{} single-crime series excluded from testing", excluded_series.len());
    }
    let train = store
        .crimes
        .iter()
        .enumerate()
        .filter(|(i, _)| !held.contains(i))
        .map(|(_, c)| c.clone())
        .collect();
    Split {
        train: EventStore::from_crimes(train).expect("subset of a valid store"),
        tests,
        excluded_series,
    }
}

/// One day after the latest prior offense.
pub fn prediction_time(prior_times: impl IntoIterator<Item = f64>) -> Result<f64> {
    prior_times
        .into_iter()
        .fold(None, |acc: Option<f64>, t| Some(acc.map_or(t, |a| a.max(t))))
        .map(|t| t + PREDICTION_LAG_DAYS)
        .ok_or(Error::EmptyPrior("no prediction time without prior crimes"))
}

/// Crimes of the same series strictly earlier than `target`.
pub fn strict_priors<'a>(series: &[&'a CrimeInstance], target: &CrimeInstance) -> Vec<&'a CrimeInstance> {
    series.iter().copied().filter(|c| c.time < target.time).collect()
}
