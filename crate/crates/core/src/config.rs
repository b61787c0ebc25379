//! Run configuration: a TOML file whose relative paths resolve against the
//! file's own directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo_grid::{BBox, FeatureSchema, GeoGrid, GeoPoint};
use crate::kernel::KernelOptions;
use crate::scene::BackgroundSpec;
use crate::synth::SynthSpec;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub events: Option<PathBuf>,
    /// Gridded features on the `[grid]` grid, as written by `featurize`.
    pub features: Option<PathBuf>,
    pub land_use: Option<PathBuf>,
    pub stations: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub min_lat: f64,
    pub min_lon: f64,
    pub max_lat: f64,
    pub max_lon: f64,
    pub cols: usize,
    pub rows: usize,
}

impl GridSpec {
    pub fn bbox(&self) -> Result<BBox> {
        BBox::new(GeoPoint::new(self.min_lat, self.min_lon), GeoPoint::new(self.max_lat, self.max_lon))
    }

    pub fn grid(&self) -> Result<GeoGrid> {
        GeoGrid::from_bbox(self.bbox()?, self.cols, self.rows)
    }

    pub fn of(grid: &GeoGrid) -> Self {
        let b = grid.bbox();
        Self {
            min_lat: b.min.lat,
            min_lon: b.min.lon,
            max_lat: b.max.lat,
            max_lon: b.max.lon,
            cols: grid.u(),
            rows: grid.v(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    /// Candidate trailing windows for the background-only model, days.
    pub window_candidates: Vec<f64>,
    /// Candidate KDE bandwidths, in cell sides.
    pub bandwidth_candidates: Vec<f64>,
    /// Score the answer-key model alongside the others.
    pub include_oracle: bool,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            window_candidates: vec![30.0, 90.0, 180.0, 365.0, 730.0],
            bandwidth_candidates: vec![0.5, 1.0, 2.0, 4.0],
            include_oracle: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    /// Cell counts to evaluate at; empty means the `[grid]` grid only.
    pub resolutions: Vec<usize>,
    pub paths: Paths,
    pub grid: Option<GridSpec>,
    pub background: BackgroundSpec,
    pub kernel: KernelOptions,
    pub features: FeatureSchema,
    pub train: TrainConfig,
    pub baselines: BaselineConfig,
    pub synth: SynthSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("out"),
            resolutions: Vec::new(),
            paths: Paths::default(),
            grid: None,
            background: BackgroundSpec::default(),
            kernel: KernelOptions::default(),
            features: FeatureSchema::default(),
            train: TrainConfig::default(),
            baselines: BaselineConfig::default(),
            synth: SynthSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    /// Reads `path`, resolving relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_toml(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(p) = p {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        };
        fix(&mut self.paths.events);
        fix(&mut self.paths.features);
        fix(&mut self.paths.land_use);
        fix(&mut self.paths.stations);
        if self.output_dir.is_relative() {
            self.output_dir = base.join(&self.output_dir);
        }
    }

    /// Sets the training and generation seeds together.
    pub fn set_seed(&mut self, seed: u64) {
        self.train.seed = seed;
        self.synth.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if !(self.background.window_days > 0.0) || !(self.background.bandwidth_cells > 0.0) {
            return Err(Error::InvalidConfig("background window and bandwidth must be positive".into()));
        }
        if let Some(g) = &self.grid {
            g.grid()?;
        }
        if self.resolutions.contains(&0) {
            return Err(Error::InvalidConfig("resolutions must be >= 1 cell".into()));
        }
        let b = &self.baselines;
        if b.window_candidates.is_empty() || b.bandwidth_candidates.is_empty() {
            return Err(Error::InvalidConfig("baseline candidate lists must be nonempty".into()));
        }
        if b.window_candidates.iter().chain(&b.bandwidth_candidates).any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidConfig("baseline candidates must be positive".into()));
        }
        Ok(())
    }

    pub fn base_grid(&self) -> Result<GeoGrid> {
        self.grid
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("missing [grid] section".into()))?
            .grid()
    }

    /// One grid per requested resolution over the `[grid]` bounding box.
    pub fn resolution_grids(&self) -> Result<Vec<GeoGrid>> {
        let base = self.base_grid()?;
        if self.resolutions.is_empty() {
            return Ok(vec![base]);
        }
        self.resolutions
            .iter()
            .map(|&n| {
                if n == base.n_cells() {
                    Ok(base.clone())
                } else {
                    GeoGrid::with_cell_count(*base.bbox(), n)
                }
            })
            .collect()
    }
}
