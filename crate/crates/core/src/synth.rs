//! Synthetic cities with known ground truth: smooth random feature fields,
//! background events from a hotspot mixture, and crime series grown hit by
//! hit from a softmax over the true risk map.

use std::fs;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::background::EventPoint;
use crate::error::{Error, Result};
use crate::events::{CrimeInstance, EventStore, PREDICTION_LAG_DAYS};
use crate::geo_grid::{BBox, FeatureMatrix, GeoGrid, GeoPoint, Xy};
use crate::kernel::{KernelFile, KernelOptions, KernelParams};
use crate::risk::{PriorHit, TriggerModel};
use crate::scene::BackgroundSpec;

// substream ids for ChaCha8Rng::set_stream
const STREAM_CITY: u64 = 0;
const STREAM_BACKGROUND: u64 = 1;
const STREAM_SERIES: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    pub bbox: BBox,
    pub cols: usize,
    pub rows: usize,
    pub n_features: usize,
    /// Cosine terms per feature field.
    pub waves_per_field: usize,
    /// Shortest and longest wavelength as fractions of the larger side.
    pub wavelength_frac: (f64, f64),
    pub n_background: usize,
    pub n_hotspots: usize,
    /// Hotspot standard deviation as a fraction of the larger side.
    pub hotspot_sigma_frac: f64,
    /// Share of background events spread uniformly over the region.
    pub uniform_share: f64,
    /// Epoch day of the first background event.
    pub start_day: f64,
    pub span_days: f64,
    pub n_series: usize,
    pub series_length: usize,
    pub theta_true: KernelParams,
    pub kernel: KernelOptions,
    pub background: BackgroundSpec,
    pub temperature: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 1,
            bbox: BBox { min: GeoPoint::new(42.360, -71.140), max: GeoPoint::new(42.390, -71.100) },
            cols: 30,
            rows: 30,
            n_features: 4,
            waves_per_field: 6,
            wavelength_frac: (0.3, 1.2),
            n_background: 2000,
            n_hotspots: 5,
            hotspot_sigma_frac: 0.08,
            uniform_share: 0.2,
            start_day: 15_706.0,
            span_days: 1500.0,
            n_series: 40,
            series_length: 6,
            theta_true: KernelParams { c: 1.0, d: 1.0, beta: vec![1.0, 1.0, -0.75, 0.5, 0.0] },
            kernel: KernelOptions::default(),
            background: BackgroundSpec::default(),
            temperature: 0.05,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        BBox::new(self.bbox.min, self.bbox.max)?;
        let counts = [
            ("cols", self.cols),
            ("rows", self.rows),
            ("waves_per_field", self.waves_per_field),
            ("n_background", self.n_background),
            ("n_hotspots", self.n_hotspots),
            ("n_series", self.n_series),
            ("series_length", self.series_length),
        ];
        for (name, n) in counts {
            if n == 0 {
                return Err(Error::InvalidConfig(format!("synth.{name} must be >= 1")));
            }
        }
        let positive = [
            ("temperature", self.temperature),
            ("hotspot_sigma_frac", self.hotspot_sigma_frac),
            ("span_days", self.span_days),
            ("wavelength_frac.0", self.wavelength_frac.0),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("synth.{name} must be positive, got {v}")));
            }
        }
        if self.wavelength_frac.1 < self.wavelength_frac.0 {
            return Err(Error::InvalidConfig("synth.wavelength_frac must be (shortest, longest)".into()));
        }
        if !(0.0..=1.0).contains(&self.uniform_share) {
            return Err(Error::InvalidConfig("synth.uniform_share must be in [0, 1]".into()));
        }
        if !self.start_day.is_finite() {
            return Err(Error::InvalidConfig("synth.start_day must be finite".into()));
        }
        let needed = (self.series_length as f64) * PREDICTION_LAG_DAYS;
        if self.span_days <= needed {
            return Err(Error::InvalidConfig("synth.span_days too short for the series length".into()));
        }
        self.theta_true.validate()?;
        if self.theta_true.n_features() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                found: self.theta_true.n_features(),
                context: "synth.theta_true feature weights".into(),
            });
        }
        if self.background.window_days <= 0.0 || self.background.bandwidth_cells <= 0.0 {
            return Err(Error::InvalidConfig("synth.background values must be positive".into()));
        }
        Ok(())
    }

    /// The same spec with every feature weight of the true kernel zeroed.
    pub fn without_geography(mut self) -> Self {
        for b in self.theta_true.beta.iter_mut().skip(1) {
            *b = 0.0;
        }
        self
    }

    pub fn grid(&self) -> Result<GeoGrid> {
        GeoGrid::from_bbox(self.bbox, self.cols, self.rows)
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// A sum of plane waves in projected meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierField {
    /// `(kx, ky, phase)`; wave numbers in radians per meter.
    pub waves: Vec<(f64, f64, f64)>,
}

impl FourierField {
    pub fn eval(&self, p: &Xy) -> f64 {
        self.waves.iter().map(|(kx, ky, ph)| (kx * p.x + ky * p.y + ph).cos()).sum()
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCity {
    pub grid: GeoGrid,
    pub fields: Vec<FourierField>,
    /// Standardized fields at the grid's cell centers.
    pub features: FeatureMatrix,
    /// Hotspot centers in projected meters.
    pub hotspots: Vec<Xy>,
}

pub fn feature_names(n: usize) -> Vec<String> {
    (1..=n).map(|j| format!("field_{j}")).collect()
}

impl SyntheticCity {
    /// The city's feature fields sampled at the centers of another grid
    /// over the same region, then standardized.
    pub fn features_for(&self, grid: &GeoGrid) -> Result<FeatureMatrix> {
        let mut values = Vec::with_capacity(grid.n_cells() * self.fields.len());
        for l in 0..grid.n_cells() {
            // evaluate in the city grid's frame so every resolution sees the same field
            let p = self.grid.project(&grid.center_geo(l));
            values.extend(self.fields.iter().map(|f| f.eval(&p)));
        }
        Ok(FeatureMatrix::new(feature_names(self.fields.len()), grid.n_cells(), values)?.standardized())
    }
}

pub fn gen_city(spec: &SynthSpec) -> Result<SyntheticCity> {
    spec.validate()?;
    let grid = spec.grid()?;
    let mut rng = stream(spec.seed, STREAM_CITY);
    let side = grid.width_m().max(grid.height_m());
    let (lo, hi) = spec.wavelength_frac;
    let fields = (0..spec.n_features)
        .map(|_| FourierField {
            waves: (0..spec.waves_per_field)
                .map(|_| {
                    let wavelength = side * rng.random_range(lo..=hi);
                    let k = std::f64::consts::TAU / wavelength;
                    let angle = rng.random_range(0.0..std::f64::consts::TAU);
                    let phase = rng.random_range(0.0..std::f64::consts::TAU);
                    (k * angle.cos(), k * angle.sin(), phase)
                })
                .collect(),
        })
        .collect();
    let hotspots = (0..spec.n_hotspots).map(|_| random_point(&grid, &mut rng)).collect();
    let mut city = SyntheticCity { features: FeatureMatrix::empty(grid.n_cells()), grid, fields, hotspots };
    city.features = city.features_for(&city.grid)?;
    Ok(city)
}

/// A point strictly inside the grid, uniform over its area.
fn random_point<R: Rng + ?Sized>(grid: &GeoGrid, rng: &mut R) -> Xy {
    let (w, h) = (grid.width_m(), grid.height_m());
    let fx: f64 = rng.random_range(1e-6..1.0 - 1e-6);
    let fy: f64 = rng.random_range(1e-6..1.0 - 1e-6);
    Xy::new((fx - 0.5) * w, (fy - 0.5) * h)
}

/// A point strictly inside cell `l`.
fn point_in_cell<R: Rng + ?Sized>(grid: &GeoGrid, l: usize, rng: &mut R) -> Xy {
    let (lo, hi) = grid.cell_rect_m(l);
    let fx: f64 = rng.random_range(0.01..0.99);
    let fy: f64 = rng.random_range(0.01..0.99);
    Xy::new(lo.x + fx * (hi.x - lo.x), lo.y + fy * (hi.y - lo.y))
}

/// `softmax(risk / temperature)`, shifted by the maximum for stability.
pub fn choice_probabilities(risk: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidParameter(format!("temperature must be positive, got {temperature}")));
    }
    if risk.is_empty() || risk.iter().any(|r| !r.is_finite()) {
        return Err(Error::NonFinite("risk values for choice probabilities".into()));
    }
    let max = risk.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = risk.iter().map(|r| ((r - max) / temperature).exp()).collect();
    let total: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / total).collect())
}

fn draw<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> Result<usize> {
    let dist = WeightedIndex::new(probs).map_err(|e| Error::InvalidParameter(format!("choice weights: {e}")))?;
    Ok(dist.sample(rng))
}

fn crime(grid: &GeoGrid, id: String, xy: Xy, time: f64, series: u32) -> Result<CrimeInstance> {
    let location = grid.unproject(&xy);
    let cell = grid.locate(&location)?;
    Ok(CrimeInstance { id, location, time, series, cell })
}

fn background_events(spec: &SynthSpec, city: &SyntheticCity) -> Result<Vec<CrimeInstance>> {
    let grid = &city.grid;
    let mut rng = stream(spec.seed, STREAM_BACKGROUND);
    let sigma = spec.hotspot_sigma_frac * grid.width_m().max(grid.height_m());
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let (hw, hh) = (0.5 * grid.width_m(), 0.5 * grid.height_m());
    let mut out = Vec::with_capacity(spec.n_background);
    for i in 0..spec.n_background {
        let xy = if rng.random_bool(spec.uniform_share) {
            random_point(grid, &mut rng)
        } else {
            let h = city.hotspots[rng.random_range(0..city.hotspots.len())];
            loop {
                let p = Xy::new(h.x + normal.sample(&mut rng), h.y + normal.sample(&mut rng));
                if p.x.abs() < hw && p.y.abs() < hh {
                    break p;
                }
            }
        };
        let time = spec.start_day + rng.random_range(0.0..spec.span_days);
        out.push(crime(grid, format!("bg{i:05}"), xy, time, 0)?);
    }
    Ok(out)
}

/// Background events plus `n_series` series. The first hit of a series is
/// drawn from the background field; each later hit one day after the
/// previous one from the softmax of the true risk map.
pub fn gen_events_and_series(spec: &SynthSpec, city: &SyntheticCity) -> Result<EventStore> {
    spec.validate()?;
    let grid = &city.grid;
    let background = background_events(spec, city)?;
    let history: Vec<EventPoint> = background
        .iter()
        .map(|c| EventPoint { xy: grid.project(&c.location), time: c.time })
        .collect();
    let model = TriggerModel::new(grid, &city.features, spec.kernel)?;
    model.check_params(&spec.theta_true)?;
    let bandwidth = spec.background.bandwidth_m(grid);
    let last_start = spec.start_day + spec.span_days - spec.series_length as f64 * PREDICTION_LAG_DAYS;
    // series start once a full window of background history exists when possible
    let first_start = (spec.start_day + spec.background.window_days).min(last_start);

    let mut crimes = background;
    for p in 1..=spec.n_series as u32 {
        let mut rng = stream(spec.seed, STREAM_SERIES + p as u64);
        let mut t = rng.random_range(first_start..=last_start);
        let mut hits: Vec<PriorHit> = Vec::new();
        for k in 0..spec.series_length {
            let bg = crate::background::fit_background(grid, &history, t, spec.background.window_days, bandwidth)?;
            let cell = if hits.is_empty() {
                draw(bg.values(), &mut rng)?
            } else {
                let risk = model.risk_map(&bg, &spec.theta_true, &hits, t)?;
                draw(&choice_probabilities(&risk.values, spec.temperature)?, &mut rng)?
            };
            let xy = point_in_cell(grid, cell, &mut rng);
            let c = crime(grid, format!("s{p:03}_{k}"), xy, t, p)?;
            hits.push(PriorHit { cell: c.cell, time: t });
            crimes.push(c);
            t += PREDICTION_LAG_DAYS;
        }
    }
    EventStore::from_crimes(crimes)
}

pub const EVENTS_CSV: &str = "events.csv";
pub const FEATURES_CSV: &str = "features.csv";
pub const THETA_TRUE_JSON: &str = "theta_true.json";
pub const SPEC_TOML: &str = "synth.toml";

/// Writes the events CSV, the feature CSV at the city grid, the true
/// kernel and the spec used.
pub fn write_dataset(dir: &Path, spec: &SynthSpec, city: &SyntheticCity, store: &EventStore) -> Result<()> {
    fs::create_dir_all(dir)?;
    store.write_csv(fs::File::create(dir.join(EVENTS_CSV))?)?;
    city.features.write_csv(&city.grid, fs::File::create(dir.join(FEATURES_CSV))?)?;
    let theta = KernelFile::new(&spec.theta_true, city.features.names(), spec.kernel)?;
    fs::write(dir.join(THETA_TRUE_JSON), theta.to_json()?)?;
    let toml = toml::to_string(spec).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    fs::write(dir.join(SPEC_TOML), toml)?;
    Ok(())
}
