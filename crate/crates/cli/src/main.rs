use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use serial_risk::config::{GridSpec, RunConfig};
use serial_risk::evaluator::{emit_report, EvalReport};
use serial_risk::events::{prediction_time, read_events_csv, write_rejections, EventStore, Ingested};
use serial_risk::geo_grid::{aggregate_features, parse_land_use, parse_stations, FeatureMatrix, GeoGrid};
use serial_risk::kernel::KernelFile;
use serial_risk::pipeline::{
    resolution_sweep, run_resolution, train_variant, tune_baselines, tuned_summary, FeatureSource, Resolution,
};
use serial_risk::risk::{risk_geojson, write_risk_csv, TriggerModel};
use serial_risk::synth::{gen_city, gen_events_and_series, write_dataset, EVENTS_CSV, FEATURES_CSV};
use serial_risk::trainer::{write_log, Variant};
use serial_risk::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "serial-risk", version, about = "Risk maps for the next offense of a crime series")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Grid cell count; repeat for a sweep.
    #[arg(long, global = true)]
    resolution: Vec<usize>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Land-use polygons (and stations) to a per-cell feature CSV.
    Featurize,
    /// Validate an events CSV and report the train/test split.
    Ingest,
    /// Fit the kernel on the training split.
    Train,
    /// Risk map for the next offense of one series.
    Predict {
        #[arg(long)]
        series: u32,
        /// Kernel JSON; defaults to theta.json in the output directory.
        #[arg(long)]
        theta: Option<PathBuf>,
    },
    /// Train, tune and score every model at every resolution.
    Evaluate {
        /// Use this kernel instead of retraining (single resolution only).
        #[arg(long)]
        theta: Option<PathBuf>,
        /// Also score the answer-key model.
        #[arg(long)]
        oracle: bool,
    },
    /// Write a synthetic dataset plus a config that runs on it.
    Synth {
        /// Zero the true kernel's feature weights.
        #[arg(long)]
        without_geography: bool,
    },
    /// Pick baseline parameters on the validation split.
    TuneBaselines,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let doc = json!({ "error": { "kind": e.kind(), "message": e.to_string() } });
            eprintln!("{doc}");
            ExitCode::FAILURE
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    if !cli.resolution.is_empty() {
        cfg.resolutions = cli.resolution.clone();
    }
    if let Some(dir) = &cli.output_dir {
        cfg.output_dir = dir.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn required<'a>(path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| Error::InvalidConfig(format!("missing paths.{key}")))
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn open(path: &Path) -> Result<fs::File> {
    fs::File::open(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn load_events(cfg: &RunConfig, grid: &GeoGrid) -> Result<Ingested> {
    read_events_csv(open(required(&cfg.paths.events, "events")?)?, grid)
}

fn feature_source(cfg: &RunConfig, base: &GeoGrid) -> Result<FeatureSource> {
    if let Some(path) = &cfg.paths.features {
        let matrix = FeatureMatrix::read_csv(base, open(path)?)?;
        return Ok(FeatureSource::Gridded { grid: base.clone(), matrix });
    }
    if let Some(path) = &cfg.paths.land_use {
        let records = parse_land_use(&read_to_string(path)?)?;
        let stations = match &cfg.paths.stations {
            Some(p) => parse_stations(&read_to_string(p)?)?,
            None => Vec::new(),
        };
        return Ok(FeatureSource::LandUse { records, stations, schema: cfg.features.clone() });
    }
    log::warn!("no feature source configured; the kernel has no feature terms");
    Ok(FeatureSource::None)
}

fn single_grid(cfg: &RunConfig) -> Result<GeoGrid> {
    let mut grids = cfg.resolution_grids()?;
    if grids.len() != 1 {
        return Err(Error::InvalidConfig("this command takes a single resolution".into()));
    }
    Ok(grids.remove(0))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    let out = cfg.output_dir.clone();
    match cli.command {
        Command::Featurize => featurize(&cfg, &out),
        Command::Ingest => ingest(&cfg, &out),
        Command::Train => train(&cfg, &out),
        Command::Predict { series, theta } => predict(&cfg, &out, series, theta),
        Command::Evaluate { theta, oracle } => evaluate(cfg, &out, theta, oracle),
        Command::Synth { without_geography } => synth(&cfg, &out, without_geography),
        Command::TuneBaselines => tune(&cfg, &out),
    }
}

fn featurize(cfg: &RunConfig, out: &Path) -> Result<()> {
    let records = parse_land_use(&read_to_string(required(&cfg.paths.land_use, "land_use")?)?)?;
    let stations = match &cfg.paths.stations {
        Some(p) => parse_stations(&read_to_string(p)?)?,
        None => Vec::new(),
    };
    let grids = cfg.resolution_grids()?;
    let aggregated: Vec<_> = grids
        .iter()
        .map(|g| aggregate_features(g, &records, &stations, &cfg.features))
        .collect();
    fs::create_dir_all(out)?;
    for (grid, agg) in grids.iter().zip(&aggregated) {
        let name = if grids.len() == 1 { "features".to_string() } else { format!("features_{}", grid.n_cells()) };
        agg.matrix.write_csv(grid, fs::File::create(out.join(format!("{name}.csv")))?)?;
        let mut rejected = Vec::new();
        for r in &agg.rejected {
            serde_json::to_writer(&mut rejected, &json!({ "index": r.index, "reason": r.reason }))?;
            rejected.push(b'\n');
        }
        fs::write(out.join(format!("{name}_rejected.jsonl")), rejected)?;
    }
    Ok(())
}

fn ingest(cfg: &RunConfig, out: &Path) -> Result<()> {
    let grid = cfg.base_grid()?;
    let ingested = load_events(cfg, &grid)?;
    let split = serial_risk::events::split_train_test(&ingested.store);
    let summary = json!({
        "crimes": ingested.store.len(),
        "rejected_rows": ingested.rejections.len(),
        "series": ingested.store.n_series(),
        "singletons": ingested.store.singletons().count(),
        "train_crimes": split.train.len(),
        "test_crimes": split.tests.iter().map(|c| &c.id).collect::<Vec<_>>(),
        "excluded_series": split.excluded_series,
    });
    fs::create_dir_all(out)?;
    ingested.store.write_csv(fs::File::create(out.join("events_clean.csv"))?)?;
    write_rejections(&ingested.rejections, fs::File::create(out.join("rejections.jsonl"))?)?;
    write_json(&out.join("split.json"), &summary)
}

fn resolution_for(cfg: &RunConfig, grid: GeoGrid) -> Result<(Resolution, EventStore)> {
    let base = cfg.base_grid()?;
    let store = load_events(cfg, &base)?.store;
    let features = feature_source(cfg, &base)?.features_at(&grid)?;
    Ok((Resolution::new(grid, &features, &store)?, store))
}

fn train(cfg: &RunConfig, out: &Path) -> Result<()> {
    let (res, _) = resolution_for(cfg, single_grid(cfg)?)?;
    let fit = train_variant(&res, &cfg.train, Variant::Full, cfg.kernel, &cfg.background)?;
    let file = KernelFile::new(&fit.params, res.scene.features().names(), cfg.kernel)?;
    fs::create_dir_all(out)?;
    fs::write(out.join("theta.json"), file.to_json()?)?;
    write_log(&fit.log, fs::File::create(out.join("train_log.jsonl"))?)
}

fn load_theta(path: &Path, features: &FeatureMatrix) -> Result<KernelFile> {
    let file = KernelFile::from_json(&read_to_string(path)?)?;
    if file.feature_names != features.names() {
        return Err(Error::DimensionMismatch {
            expected: features.dim(),
            found: file.feature_names.len(),
            context: format!("kernel in {} was trained on features {:?}", path.display(), file.feature_names),
        });
    }
    Ok(file)
}

fn predict(cfg: &RunConfig, out: &Path, series: u32, theta: Option<PathBuf>) -> Result<()> {
    let (res, store) = resolution_for(cfg, single_grid(cfg)?)?;
    let crimes = store.series(series);
    if series == 0 || crimes.is_empty() {
        return Err(Error::UnknownSeries(series));
    }
    let theta_path = theta.unwrap_or_else(|| out.join("theta.json"));
    let file = load_theta(&theta_path, res.scene.features())?;
    let priors: Vec<_> = crimes.into_iter().cloned().collect();
    let t = prediction_time(priors.iter().map(|c| c.time))?;
    let scene = &res.scene;
    let model = TriggerModel::new(scene.grid(), scene.features(), file.options)?;
    let bg = scene.background_at(t, &cfg.background, None)?;
    let map = model.risk_map(&bg, &file.params()?, &scene.prior_hits(&priors)?, t)?;
    fs::create_dir_all(out)?;
    write_risk_csv(scene.grid(), &map.values, fs::File::create(out.join(format!("risk_{series}.csv")))?)?;
    write_json(&out.join(format!("risk_{series}.geojson")), &risk_geojson(scene.grid(), &map.values))
}

fn evaluate(mut cfg: RunConfig, out: &Path, theta: Option<PathBuf>, oracle: bool) -> Result<()> {
    cfg.baselines.include_oracle |= oracle;
    let base = cfg.base_grid()?;
    let store = load_events(&cfg, &base)?.store;
    let features = feature_source(&cfg, &base)?;
    let runs = match theta {
        Some(path) => {
            let grid = single_grid(&cfg)?;
            let matrix = features.features_at(&grid)?;
            let params = load_theta(&path, &matrix)?.params()?;
            let res = Resolution::new(grid, &matrix, &store)?;
            vec![run_resolution(&res, &cfg, Some(params))?]
        }
        None => resolution_sweep(&cfg, &store, &features)?,
    };
    let reports: Vec<EvalReport> = runs.iter().flat_map(|r| r.reports.iter().cloned()).collect();
    let kernels = runs
        .iter()
        .map(|r| Ok((r.resolution, r.kernel_file(cfg.kernel)?.to_json()?)))
        .collect::<Result<Vec<_>>>()?;
    emit_report(&reports, out)?;
    for (cells, json) in kernels {
        fs::write(out.join(format!("theta_{cells}.json")), json)?;
    }
    write_json(&out.join("tuned.json"), &tuned_summary(&runs))
}

fn synth(cfg: &RunConfig, out: &Path, without_geography: bool) -> Result<()> {
    let spec = if without_geography { cfg.synth.clone().without_geography() } else { cfg.synth.clone() };
    let city = gen_city(&spec)?;
    let store = gen_events_and_series(&spec, &city)?;
    let mut run = cfg.clone();
    run.synth = spec.clone();
    run.output_dir = PathBuf::from(".");
    run.grid = Some(GridSpec::of(&city.grid));
    run.paths.events = Some(PathBuf::from(EVENTS_CSV));
    run.paths.features = Some(PathBuf::from(FEATURES_CSV));
    run.paths.land_use = None;
    run.paths.stations = None;
    let toml = run.to_toml()?;
    write_dataset(out, &spec, &city, &store)?;
    fs::write(out.join("config.toml"), toml)?;
    Ok(())
}

fn tune(cfg: &RunConfig, out: &Path) -> Result<()> {
    let base = cfg.base_grid()?;
    let store = load_events(cfg, &base)?.store;
    let features = feature_source(cfg, &base)?;
    let mut tuned = Vec::new();
    for grid in cfg.resolution_grids()? {
        let matrix = features.features_at(&grid)?;
        let res = Resolution::new(grid, &matrix, &store)?;
        tuned.push(serde_json::to_value(tune_baselines(&res, &cfg.baselines)?)?);
    }
    fs::create_dir_all(out)?;
    write_json(&out.join("tuned_baselines.json"), &json!({ "resolutions": tuned }))
}
