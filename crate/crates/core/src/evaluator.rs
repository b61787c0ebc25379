//! Test protocol: build each case's risk map at its prediction time, rank
//! the true cell and summarize normalized ranks per model and resolution.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::baselines::{ablation_risk_map, nearest_neighbor_map, series_kde_map};
use crate::error::{Error, Result};
use crate::events::{prediction_time, CrimeInstance, EventStore, Split};
use crate::geo_grid::GeoPoint;
use crate::kernel::{KernelOptions, KernelParams};
use crate::risk::{rank_true_cell, TriggerModel};
use crate::scene::{BackgroundSpec, Scene};

/// Everything a model may look at when scoring one case.
#[derive(Debug, Clone, Copy)]
pub struct Query<'a> {
    pub series: u32,
    pub priors: &'a [CrimeInstance],
    pub time: f64,
    /// Id of the crime being predicted, kept out of background fits.
    pub target_id: &'a str,
}

pub trait Predictor {
    fn name(&self) -> &str;
    /// Risk for every cell of `scene`'s grid; larger means riskier.
    fn risk(&self, scene: &Scene, query: &Query<'_>) -> Result<Vec<f64>>;
    fn params_json(&self) -> Value;
}

/// The trained self-exciting model, or its ablation when `params` carries
/// `beta = (1, 0, ...)`.
#[derive(Debug, Clone)]
pub struct SelfExciting {
    pub name: String,
    pub params: KernelParams,
    pub options: KernelOptions,
    pub background: BackgroundSpec,
}

impl Predictor for SelfExciting {
    fn name(&self) -> &str {
        &self.name
    }

    fn risk(&self, scene: &Scene, q: &Query<'_>) -> Result<Vec<f64>> {
        let model = TriggerModel::new(scene.grid(), scene.features(), self.options)?;
        let bg = scene.background_at(q.time, &self.background, Some(q.target_id))?;
        let priors = scene.prior_hits(q.priors)?;
        Ok(model.risk_map(&bg, &self.params, &priors, q.time)?.values)
    }

    fn params_json(&self) -> Value {
        json!({
            "c": self.params.c,
            "d": self.params.d,
            "beta": self.params.beta,
            "background": self.background,
        })
    }
}

/// Kernel numerator fixed to 1; independent of the feature matrix.
#[derive(Debug, Clone)]
pub struct AblationKernel {
    pub c: f64,
    pub d: f64,
    pub background: BackgroundSpec,
}

impl Predictor for AblationKernel {
    fn name(&self) -> &str {
        "ablation_kernel"
    }

    fn risk(&self, scene: &Scene, q: &Query<'_>) -> Result<Vec<f64>> {
        let bg = scene.background_at(q.time, &self.background, Some(q.target_id))?;
        let priors = scene.prior_hits(q.priors)?;
        ablation_risk_map(scene.grid(), self.c, self.d, &bg, &priors, q.time)
    }

    fn params_json(&self) -> Value {
        json!({ "c": self.c, "d": self.d, "background": self.background })
    }
}

#[derive(Debug, Clone)]
pub struct SeriesKde {
    pub bandwidth_cells: f64,
}

impl Predictor for SeriesKde {
    fn name(&self) -> &str {
        "series_kde"
    }

    fn risk(&self, scene: &Scene, q: &Query<'_>) -> Result<Vec<f64>> {
        let grid = scene.grid();
        let xy: Vec<_> = q.priors.iter().map(|c| grid.project(&c.location)).collect();
        series_kde_map(grid, &xy, self.bandwidth_cells * grid.cell_side_m())
    }

    fn params_json(&self) -> Value {
        json!({ "bandwidth_cells": self.bandwidth_cells })
    }
}

#[derive(Debug, Clone, Default)]
pub struct NearestNeighbor;

impl Predictor for NearestNeighbor {
    fn name(&self) -> &str {
        "nearest_neighbor"
    }

    fn risk(&self, scene: &Scene, q: &Query<'_>) -> Result<Vec<f64>> {
        let grid = scene.grid();
        let xy: Vec<_> = q.priors.iter().map(|c| grid.project(&c.location)).collect();
        nearest_neighbor_map(grid, &xy)
    }

    fn params_json(&self) -> Value {
        json!({})
    }
}

/// Background KDE alone over a tuned trailing window.
#[derive(Debug, Clone)]
pub struct BackgroundWindow {
    pub spec: BackgroundSpec,
}

impl Predictor for BackgroundWindow {
    fn name(&self) -> &str {
        "background_window"
    }

    fn risk(&self, scene: &Scene, q: &Query<'_>) -> Result<Vec<f64>> {
        Ok(scene.background_at(q.time, &self.spec, Some(q.target_id))?.values().to_vec())
    }

    fn params_json(&self) -> Value {
        json!({ "window_days": self.spec.window_days, "bandwidth_cells": self.spec.bandwidth_cells })
    }
}

/// Knows the answers: risk 1 in the true cell, 0 elsewhere.
#[derive(Debug, Clone, Default)]
pub struct PerfectOracle {
    truth: BTreeMap<String, GeoPoint>,
}

impl PerfectOracle {
    pub fn new(cases: &[EvalCase]) -> Self {
        Self { truth: cases.iter().map(|c| (c.truth.id.clone(), c.truth.location)).collect() }
    }
}

impl Predictor for PerfectOracle {
    fn name(&self) -> &str {
        "oracle"
    }

    fn risk(&self, scene: &Scene, q: &Query<'_>) -> Result<Vec<f64>> {
        let loc = self
            .truth
            .get(q.target_id)
            .ok_or_else(|| Error::InvalidParameter(format!("oracle has no answer for crime {}", q.target_id)))?;
        let mut out = vec![0.0; scene.grid().n_cells()];
        out[scene.grid().locate(loc)?] = 1.0;
        Ok(out)
    }

    fn params_json(&self) -> Value {
        json!({})
    }
}

/// A held-out crime and the earlier crimes of its series the model may use.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalCase {
    pub series: u32,
    pub priors: Vec<CrimeInstance>,
    pub truth: CrimeInstance,
}

/// The last crime of every series, with that series' training crimes as
/// priors. Cases without priors are skipped with a warning.
pub fn test_cases(split: &Split) -> Vec<EvalCase> {
    let mut out = Vec::new();
    for truth in &split.tests {
        let priors: Vec<CrimeInstance> = split.train.series(truth.series).into_iter().cloned().collect();
        if priors.is_empty() {
            log::warn!("series {} has no training crimes; skipped", truth.series);
            continue;
        }
        out.push(EvalCase { series: truth.series, priors, truth: truth.clone() });
    }
    out.sort_by_key(|c| c.series);
    out
}

/// The second-to-last crime of every series, i.e. the last crime of the
/// training store, predicted from the crimes before it.
pub fn validation_cases(train: &EventStore) -> Vec<EvalCase> {
    let mut out = Vec::new();
    for p in train.series_ids() {
        let crimes = train.series(p);
        if crimes.len() < 2 {
            continue;
        }
        let (truth, priors) = crimes.split_last().expect("at least two crimes");
        out.push(EvalCase {
            series: p,
            priors: priors.iter().map(|c| (*c).clone()).collect(),
            truth: (*truth).clone(),
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub series: u32,
    pub cells: usize,
    pub rank: usize,
    pub normalized_rank: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: Option<f64>,
    pub median: Option<f64>,
    pub q1: Option<f64>,
    pub q3: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let q = |p: f64| (n > 0).then(|| quantile(&v, p));
        Self {
            n,
            mean: (n > 0).then(|| v.iter().sum::<f64>() / n as f64),
            median: q(0.5),
            q1: q(0.25),
            q3: q(0.75),
            min: v.first().copied(),
            max: v.last().copied(),
        }
    }
}

/// Linear interpolation between order statistics of sorted `v`.
fn quantile(v: &[f64], p: f64) -> f64 {
    let pos = p * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub resolution: usize,
    pub tuned_params: Value,
    pub summary: Summary,
    pub cases: Vec<CaseRecord>,
}

impl EvalReport {
    pub fn normalized_ranks(&self) -> Vec<f64> {
        self.cases.iter().map(|c| c.normalized_rank).collect()
    }
}

/// Ranks the true cell of one case under `model`.
pub fn score_case(model: &dyn Predictor, scene: &Scene, case: &EvalCase) -> Result<CaseRecord> {
    let time = prediction_time(case.priors.iter().map(|c| c.time))?;
    let query = Query { series: case.series, priors: &case.priors, time, target_id: &case.truth.id };
    let risk = model.risk(scene, &query)?;
    let cells = scene.grid().n_cells();
    if risk.len() != cells {
        return Err(Error::DimensionMismatch { expected: cells, found: risk.len(), context: format!("{} risk map", model.name()) });
    }
    if risk.iter().any(|r| !r.is_finite()) {
        return Err(Error::NonFinite(format!("{} risk for series {}", model.name(), case.series)));
    }
    let rank = rank_true_cell(&risk, scene.grid().locate(&case.truth.location)?)?;
    Ok(CaseRecord { series: case.series, cells, rank, normalized_rank: rank as f64 / cells as f64 })
}

pub fn evaluate(model: &dyn Predictor, cases: &[EvalCase], scene: &Scene) -> Result<EvalReport> {
    let mut records = Vec::with_capacity(cases.len());
    for case in cases {
        if case.priors.is_empty() {
            log::warn!("series {} has no prior crimes; skipped", case.series);
            continue;
        }
        records.push(score_case(model, scene, case)?);
    }
    let ranks: Vec<f64> = records.iter().map(|r| r.normalized_rank).collect();
    Ok(EvalReport {
        model: model.name().to_string(),
        resolution: scene.grid().n_cells(),
        tuned_params: model.params_json(),
        summary: Summary::of(&ranks),
        cases: records,
    })
}

/// Mean normalized rank, used as the tuning score.
pub fn mean_normalized_rank(model: &dyn Predictor, cases: &[EvalCase], scene: &Scene) -> Result<f64> {
    let report = evaluate(model, cases, scene)?;
    report
        .summary
        .mean
        .ok_or_else(|| Error::InvalidParameter("no cases to score".into()))
}

pub const REPORT_JSON: &str = "report.json";
pub const RANKS_CSV: &str = "ranks.csv";

pub fn write_report_json<W: Write>(reports: &[EvalReport], mut out: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, &json!({ "reports": reports }))?;
    out.write_all(b"\n")?;
    Ok(())
}

/// One row per case: `model,resolution,series,rank,cells,normalized_rank`.
pub fn write_ranks_csv<W: Write>(reports: &[EvalReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["model", "resolution", "series", "rank", "cells", "normalized_rank"])?;
    for r in reports {
        for c in &r.cases {
            w.write_record([
                r.model.clone(),
                r.resolution.to_string(),
                c.series.to_string(),
                c.rank.to_string(),
                c.cells.to_string(),
                c.normalized_rank.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct RankRow {
    pub model: String,
    pub resolution: usize,
    pub series: u32,
    pub rank: usize,
    pub cells: usize,
    pub normalized_rank: f64,
}

pub fn read_ranks_csv<R: Read>(input: R) -> Result<Vec<RankRow>> {
    let mut rows = Vec::new();
    for row in csv::Reader::from_reader(input).deserialize() {
        rows.push(row?);
    }
    Ok(rows)
}

/// Writes `report.json` and `ranks.csv` under `dir`; returns their paths.
pub fn emit_report(reports: &[EvalReport], dir: &Path) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir)?;
    let json_path = dir.join(REPORT_JSON);
    let csv_path = dir.join(RANKS_CSV);
    write_report_json(reports, fs::File::create(&json_path)?)?;
    write_ranks_csv(reports, fs::File::create(&csv_path)?)?;
    Ok((json_path, csv_path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_quartiles() {
        let s = Summary::of(&[0.4, 0.1, 0.3, 0.2]);
        assert_eq!(s.n, 4);
        assert!((s.mean.unwrap() - 0.25).abs() < 1e-15);
        assert!((s.median.unwrap() - 0.25).abs() < 1e-15);
        assert!((s.q1.unwrap() - 0.175).abs() < 1e-15);
        assert!((s.q3.unwrap() - 0.325).abs() < 1e-15);
        assert_eq!(s.min, Some(0.1));
        assert_eq!(s.max, Some(0.4));
        let empty = Summary::of(&[]);
        assert_eq!(empty.n, 0);
        assert!(empty.mean.is_none());
    }

    #[test]
    fn empty_report_set_is_valid_json() {
        let mut buf = Vec::new();
        write_report_json(&[], &mut buf).unwrap();
        let v: Value = serde_json::from_slice(&buf).unwrap();
        assert_eq!(v["reports"].as_array().unwrap().len(), 0);
    }
}
