//! End-to-end runs at one or several resolutions: features, training,
//! baseline tuning and evaluation, with every artifact kept in memory so
//! callers decide what to write.

use serde::Serialize;
use serde_json::{json, Value};

use crate::baselines::{tune_baseline, Tuned};
use crate::config::{BaselineConfig, RunConfig};
use crate::error::{Error, Result};
use crate::evaluator::{
    evaluate, mean_normalized_rank, test_cases, validation_cases, AblationKernel, BackgroundWindow, EvalCase,
    EvalReport, NearestNeighbor, PerfectOracle, Predictor, SelfExciting, SeriesKde,
};
use crate::events::{split_train_test, EventStore, Split};
use crate::geo_grid::{aggregate_features, FeatureMatrix, FeatureSchema, GeoGrid, GeoPoint, LandUseRecord};
use crate::kernel::{KernelFile, KernelOptions, KernelParams};
use crate::risk::TriggerModel;
use crate::scene::{BackgroundSpec, Scene};
use crate::synth::SyntheticCity;
use crate::trainer::{train, LogEntry, TrainConfig, TrainingSet, Variant};

pub const SELF_EXCITING: &str = "self_exciting";

/// Where per-cell features come from at a given grid.
#[derive(Debug, Clone)]
pub enum FeatureSource {
    None,
    /// A matrix on a fixed grid, resampled by nearest cell elsewhere.
    Gridded { grid: GeoGrid, matrix: FeatureMatrix },
    /// Land-use polygons, re-aggregated at every grid.
    LandUse { records: Vec<LandUseRecord>, stations: Vec<GeoPoint>, schema: FeatureSchema },
    /// Analytic synthetic fields, sampled at every grid.
    Synthetic(Box<SyntheticCity>),
}

impl FeatureSource {
    pub fn features_at(&self, grid: &GeoGrid) -> Result<FeatureMatrix> {
        match self {
            FeatureSource::None => Ok(FeatureMatrix::empty(grid.n_cells())),
            FeatureSource::Gridded { grid: from, matrix } => {
                if from == grid {
                    Ok(matrix.clone())
                } else {
                    matrix.resample(from, grid)
                }
            }
            FeatureSource::LandUse { records, stations, schema } => {
                let agg = aggregate_features(grid, records, stations, schema);
                if !agg.rejected.is_empty() {
                    log::warn!("{} land-use records skipped", agg.rejected.len());
                }
                Ok(agg.matrix)
            }
            FeatureSource::Synthetic(city) => city.features_for(grid),
        }
    }
}

/// Everything fixed at one resolution.
pub struct Resolution {
    pub scene: Scene,
    pub split: Split,
    pub tests: Vec<EvalCase>,
    pub validation: Vec<EvalCase>,
}

impl Resolution {
    pub fn new(grid: GeoGrid, features: &FeatureMatrix, store: &EventStore) -> Result<Self> {
        let store = store.regrid(&grid)?;
        let scene = Scene::new(grid, features, &store)?;
        let split = split_train_test(&store);
        let tests = test_cases(&split);
        let validation = validation_cases(&split.train);
        Ok(Self { scene, split, tests, validation })
    }

    pub fn cells(&self) -> usize {
        self.scene.grid().n_cells()
    }
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub params: KernelParams,
    pub log: Vec<LogEntry>,
}

/// Fits the kernel on the training crimes of `res`.
pub fn train_variant(
    res: &Resolution,
    config: &TrainConfig,
    variant: Variant,
    options: KernelOptions,
    background: &BackgroundSpec,
) -> Result<Trained> {
    let set = TrainingSet::build(&res.scene, &res.split.train, background)?;
    let model = TriggerModel::new(res.scene.grid(), res.scene.features(), options)?;
    let config = TrainConfig { variant, ..config.clone() };
    log::info!(
        "training {:?} on {} targets at {} cells",
        variant,
        set.n_targets(),
        res.cells()
    );
    let out = train(&config, &model, &set)?;
    Ok(Trained { params: out.params, log: out.log })
}

#[derive(Debug, Clone, Serialize)]
pub struct TunedBaselines {
    pub resolution: usize,
    pub series_kde_bandwidth_cells: f64,
    pub background_window_days: f64,
    pub background_bandwidth_cells: f64,
    pub series_kde_scores: Vec<(f64, f64)>,
    pub background_scores: Vec<((f64, f64), f64)>,
}

/// Picks baseline parameters by mean normalized rank on the validation
/// cases (second-to-last crime of each series).
pub fn tune_baselines(res: &Resolution, config: &BaselineConfig) -> Result<TunedBaselines> {
    if res.validation.is_empty() {
        return Err(Error::InvalidParameter("no validation cases: every series needs three crimes".into()));
    }
    let kde: Tuned<f64> = tune_baseline(&config.bandwidth_candidates, |&bw| {
        mean_normalized_rank(&SeriesKde { bandwidth_cells: bw }, &res.validation, &res.scene)
    })?;
    let pairs: Vec<(f64, f64)> = config
        .window_candidates
        .iter()
        .flat_map(|&w| config.bandwidth_candidates.iter().map(move |&b| (w, b)))
        .collect();
    let bg: Tuned<(f64, f64)> = tune_baseline(&pairs, |&(w, b)| {
        let model = BackgroundWindow { spec: BackgroundSpec { window_days: w, bandwidth_cells: b } };
        mean_normalized_rank(&model, &res.validation, &res.scene)
    })?;
    Ok(TunedBaselines {
        resolution: res.cells(),
        series_kde_bandwidth_cells: kde.best,
        background_window_days: bg.best.0,
        background_bandwidth_cells: bg.best.1,
        series_kde_scores: kde.scores,
        background_scores: bg.scores,
    })
}

/// Artifacts of one resolution.
pub struct ResolutionRun {
    pub resolution: usize,
    pub grid: GeoGrid,
    pub feature_names: Vec<String>,
    pub full: Trained,
    pub ablation: Trained,
    pub tuned: TunedBaselines,
    pub reports: Vec<EvalReport>,
}

impl ResolutionRun {
    pub fn kernel_file(&self, options: KernelOptions) -> Result<KernelFile> {
        KernelFile::new(&self.full.params, &self.feature_names, options)
    }

    pub fn ablation_file(&self, options: KernelOptions) -> Result<KernelFile> {
        KernelFile::new(&self.ablation.params, &self.feature_names, options)
    }

    pub fn report(&self, model: &str) -> Option<&EvalReport> {
        self.reports.iter().find(|r| r.model == model)
    }
}

/// Trains both kernels, tunes the baselines and evaluates every model on
/// the held-out last crimes. `pretrained` replaces the full-model fit.
pub fn run_resolution(
    res: &Resolution,
    config: &RunConfig,
    pretrained: Option<KernelParams>,
) -> Result<ResolutionRun> {
    let full = match pretrained {
        Some(params) => Trained { params, log: Vec::new() },
        None => train_variant(res, &config.train, Variant::Full, config.kernel, &config.background)?,
    };
    let ablation = train_variant(res, &config.train, Variant::Ablation, config.kernel, &config.background)?;
    let tuned = tune_baselines(res, &config.baselines)?;

    let mut models: Vec<Box<dyn Predictor>> = vec![
        Box::new(SelfExciting {
            name: SELF_EXCITING.into(),
            params: full.params.clone(),
            options: config.kernel,
            background: config.background,
        }),
        Box::new(AblationKernel { c: ablation.params.c, d: ablation.params.d, background: config.background }),
        Box::new(SeriesKde { bandwidth_cells: tuned.series_kde_bandwidth_cells }),
        Box::new(NearestNeighbor),
        Box::new(BackgroundWindow {
            spec: BackgroundSpec {
                window_days: tuned.background_window_days,
                bandwidth_cells: tuned.background_bandwidth_cells,
            },
        }),
    ];
    if config.baselines.include_oracle {
        models.push(Box::new(PerfectOracle::new(&res.tests)));
    }
    let reports = models
        .iter()
        .map(|m| evaluate(m.as_ref(), &res.tests, &res.scene))
        .collect::<Result<Vec<_>>>()?;
    for r in &reports {
        log::info!("{} @ {} cells: mean normalized rank {:?}", r.model, r.resolution, r.summary.mean);
    }
    Ok(ResolutionRun {
        resolution: res.cells(),
        grid: res.scene.grid().clone(),
        feature_names: res.scene.features().names().to_vec(),
        full,
        ablation,
        tuned,
        reports,
    })
}

/// Runs every configured resolution, rebuilding features, background and
/// kernel fits at each.
pub fn resolution_sweep(config: &RunConfig, store: &EventStore, features: &FeatureSource) -> Result<Vec<ResolutionRun>> {
    config.validate()?;
    let mut runs = Vec::new();
    for grid in config.resolution_grids()? {
        let matrix = features.features_at(&grid)?;
        let res = Resolution::new(grid, &matrix, store)?;
        runs.push(run_resolution(&res, config, None)?);
    }
    Ok(runs)
}

/// Tuned parameters of every resolution, keyed by cell count.
pub fn tuned_summary(runs: &[ResolutionRun]) -> Value {
    let items: Vec<Value> = runs
        .iter()
        .map(|r| {
            json!({
                "resolution": r.resolution,
                "ablation_kernel": { "c": r.ablation.params.c, "d": r.ablation.params.d },
                "series_kde": { "bandwidth_cells": r.tuned.series_kde_bandwidth_cells },
                "background_window": {
                    "window_days": r.tuned.background_window_days,
                    "bandwidth_cells": r.tuned.background_bandwidth_cells,
                },
            })
        })
        .collect();
    json!({ "resolutions": items })
}
