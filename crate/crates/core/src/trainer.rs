//! Learning the kernel parameters by pairwise ranking.
//!
//! For every training crime with at least one earlier crime in its series,
//! every other cell `l` contributes the hinge `max(0, r_l - r_true)`; the
//! feature weights carry an l2 penalty. Training is stochastic subgradient
//! descent with momentum over sampled `(series, crime, cell)` triples,
//! followed by projection of `c` and `d` onto their floors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::background::BackgroundField;
use crate::error::{Error, Result};
use crate::events::{prediction_time, strict_priors, EventStore};
use crate::kernel::{KernelParams, DEFAULT_OFFSET_FLOOR, IDX_BETA0, IDX_C, IDX_D};
use crate::risk::{PriorHit, TriggerModel};
use crate::scene::{BackgroundSpec, Scene};

/// Which parameters are learned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// `c`, `d` and all of beta.
    #[default]
    Full,
    /// Numerator pinned to 1: only `c` and `d` move.
    Ablation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub lambda_beta: f64,
    pub iterations: u64,
    pub seed: u64,
    pub floor_c: f64,
    pub floor_d: f64,
    pub init_c: f64,
    pub init_d: f64,
    pub init_beta0: f64,
    /// Iterations between log entries; 0 disables the log.
    pub log_every: u64,
    pub variant: Variant,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            lambda_beta: 0.01,
            iterations: 50_000,
            seed: 0,
            floor_c: DEFAULT_OFFSET_FLOOR,
            floor_d: DEFAULT_OFFSET_FLOOR,
            init_c: 1.0,
            init_d: 1.0,
            init_beta0: 1.0,
            log_every: 1_000,
            variant: Variant::Full,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConfig(what.to_string()));
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate must be > 0");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        if !(self.lambda_beta >= 0.0) || !self.lambda_beta.is_finite() {
            return bad("lambda_beta must be >= 0");
        }
        if !(self.floor_c > 0.0) || !(self.floor_d > 0.0) {
            return bad("projection floors must be > 0");
        }
        if !(self.init_c > 0.0) || !(self.init_d > 0.0) || !self.init_beta0.is_finite() {
            return bad("initial c, d must be > 0 and beta0 finite");
        }
        Ok(())
    }

    /// Starting point: `c`, `d`, `b0` from the config, feature weights 0.
    pub fn initial_params(&self, n_features: usize) -> KernelParams {
        let mut p = KernelParams::initial(n_features);
        p.c = self.init_c.max(self.floor_c);
        p.d = self.init_d.max(self.floor_d);
        p.beta[0] = match self.variant {
            Variant::Full => self.init_beta0,
            Variant::Ablation => 1.0,
        };
        p
    }

    fn trainable(&self, index: usize) -> bool {
        match self.variant {
            Variant::Full => true,
            Variant::Ablation => index == IDX_C || index == IDX_D,
        }
    }
}

/// A crime the objective ranks: its cell, the time it is scored at and the
/// earlier crimes of its series.
#[derive(Debug, Clone)]
pub struct TrainingTarget {
    pub series: u32,
    pub crime_id: String,
    pub cell: usize,
    pub time: f64,
    pub priors: Vec<PriorHit>,
    pub background: BackgroundField,
}

/// Training targets grouped by series. Only series with at least one
/// eligible crime appear.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    groups: Vec<Vec<TrainingTarget>>,
    n_cells: usize,
}

impl TrainingSet {
    pub fn new(groups: Vec<Vec<TrainingTarget>>, n_cells: usize) -> Result<Self> {
        let groups: Vec<_> = groups.into_iter().filter(|g| !g.is_empty()).collect();
        for t in groups.iter().flatten() {
            if t.priors.is_empty() {
                return Err(Error::EmptyPrior("training target without prior crimes"));
            }
            if t.cell >= n_cells || t.background.n_cells() != n_cells {
                return Err(Error::DimensionMismatch {
                    expected: n_cells,
                    found: t.background.n_cells(),
                    context: format!("training target {}", t.crime_id),
                });
            }
        }
        Ok(Self { groups, n_cells })
    }

    /// Every crime after the first in each series of `train`, scored one
    /// day after its latest strictly earlier crime.
    pub fn build(scene: &Scene, train: &EventStore, background: &BackgroundSpec) -> Result<Self> {
        let mut groups = Vec::new();
        for p in train.series_ids() {
            let crimes = train.series(p);
            let mut group = Vec::new();
            for target in &crimes {
                let priors = strict_priors(&crimes, target);
                if priors.is_empty() {
                    continue;
                }
                let time = prediction_time(priors.iter().map(|c| c.time))?;
                let prior_hits: Vec<_> = priors.iter().map(|c| (*c).clone()).collect();
                group.push(TrainingTarget {
                    series: p,
                    crime_id: target.id.clone(),
                    cell: scene.grid().locate(&target.location)?,
                    time,
                    priors: scene.prior_hits(&prior_hits)?,
                    background: scene.background_at(time, background, Some(&target.id))?,
                });
            }
            groups.push(group);
        }
        Self::new(groups, scene.grid().n_cells())
    }

    pub fn groups(&self) -> &[Vec<TrainingTarget>] {
        &self.groups
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn n_targets(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }

    /// Number of hinge terms in the full objective.
    pub fn epoch_size(&self) -> usize {
        self.n_targets() * self.n_cells.saturating_sub(1)
    }

    /// Factor that makes a sampled hinge gradient an unbiased estimate of
    /// the full hinge gradient divided by [`TrainingSet::epoch_size`].
    pub fn importance_weight(&self, group: usize) -> f64 {
        (self.groups.len() * self.groups[group].len()) as f64 / self.n_targets() as f64
    }
}

pub fn hinge_loss(r_l: f64, r_star: f64) -> f64 {
    (r_l - r_star).max(0.0)
}

/// Exact objective: every hinge term plus `lambda * |beta_{1..J}|^2`.
pub fn full_objective(model: &TriggerModel<'_>, set: &TrainingSet, params: &KernelParams, lambda_beta: f64) -> Result<f64> {
    model.check_params(params)?;
    let mut buf = Vec::new();
    let mut total = 0.0;
    for target in set.groups.iter().flatten() {
        let risk = |l: usize, buf: &mut Vec<f64>| {
            target.background.values()[l] + model.triggered(params, &target.priors, target.time, l, buf)
        };
        let r_star = risk(target.cell, &mut buf);
        for l in (0..set.n_cells).filter(|&l| l != target.cell) {
            total += hinge_loss(risk(l, &mut buf), r_star);
        }
    }
    Ok(total + lambda_beta * params.beta[1..].iter().map(|b| b * b).sum::<f64>())
}

/// Subgradient of [`full_objective`] (zero at hinge kinks).
pub fn full_objective_gradient(
    model: &TriggerModel<'_>,
    set: &TrainingSet,
    params: &KernelParams,
    lambda_beta: f64,
) -> Result<Vec<f64>> {
    model.check_params(params)?;
    let mut grad = vec![0.0; params.n_params()];
    let mut buf = Vec::new();
    for target in set.groups.iter().flatten() {
        for l in (0..set.n_cells).filter(|&l| l != target.cell) {
            hinge_term_grad(model, target, params, l, 1.0, &mut grad, &mut buf);
        }
    }
    for j in 1..params.beta.len() {
        grad[IDX_BETA0 + j] += 2.0 * lambda_beta * params.beta[j];
    }
    Ok(grad)
}

/// Adds `scale * d hinge / d theta` for one `(target, l)` pair; returns the
/// hinge value.
fn hinge_term_grad(
    model: &TriggerModel<'_>,
    target: &TrainingTarget,
    params: &KernelParams,
    l: usize,
    scale: f64,
    grad: &mut [f64],
    buf: &mut Vec<f64>,
) -> f64 {
    let mu = target.background.values();
    let r_l = mu[l] + model.triggered(params, &target.priors, target.time, l, buf);
    let r_star = mu[target.cell] + model.triggered(params, &target.priors, target.time, target.cell, buf);
    let loss = hinge_loss(r_l, r_star);
    if loss > 0.0 {
        model.triggered_grad(params, &target.priors, target.time, l, scale, grad, buf);
        model.triggered_grad(params, &target.priors, target.time, target.cell, -scale, grad, buf);
    }
    loss
}

/// Indices of a sampled hinge term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triple {
    pub group: usize,
    pub target: usize,
    pub cell: usize,
}

/// Series uniformly, then an eligible crime of it uniformly, then a cell
/// other than the crime's own uniformly.
pub fn sample_triple<R: Rng + ?Sized>(rng: &mut R, set: &TrainingSet) -> Result<Triple> {
    if set.groups.is_empty() {
        return Err(Error::NoEligibleCrime);
    }
    if set.n_cells < 2 {
        return Err(Error::InvalidParameter("ranking needs at least two cells".into()));
    }
    let group = rng.random_range(0..set.groups.len());
    let target = rng.random_range(0..set.groups[group].len());
    let truth = set.groups[group][target].cell;
    let mut cell = rng.random_range(0..set.n_cells - 1);
    if cell >= truth {
        cell += 1;
    }
    Ok(Triple { group, target, cell })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: KernelParams,
    pub velocity: Vec<f64>,
    pub iteration: u64,
    /// Exponential moving average of the sampled hinge loss.
    pub loss_ma: f64,
}

impl TrainState {
    pub fn new(params: KernelParams) -> Self {
        let velocity = vec![0.0; params.n_params()];
        Self { params, velocity, iteration: 0, loss_ma: 0.0 }
    }
}

const LOSS_MA_DECAY: f64 = 0.99;

/// Importance-weighted hinge gradient of one triple plus its share of the
/// penalty gradient. Averaged over the sampling distribution this is the
/// full objective gradient divided by [`TrainingSet::epoch_size`].
pub fn sampled_gradient(
    model: &TriggerModel<'_>,
    set: &TrainingSet,
    params: &KernelParams,
    triple: Triple,
    lambda_beta: f64,
) -> Result<(f64, Vec<f64>)> {
    let target = set
        .groups
        .get(triple.group)
        .and_then(|g| g.get(triple.target))
        .ok_or_else(|| Error::InvalidParameter(format!("triple {triple:?} out of range")))?;
    if triple.cell >= set.n_cells {
        return Err(Error::CellOutOfRange { cell: triple.cell, cells: set.n_cells });
    }
    let mut grad = vec![0.0; params.n_params()];
    let mut buf = Vec::new();
    let weight = set.importance_weight(triple.group);
    let loss = hinge_term_grad(model, target, params, triple.cell, weight, &mut grad, &mut buf);
    let reg = 2.0 * lambda_beta / set.epoch_size().max(1) as f64;
    for j in 1..params.beta.len() {
        grad[IDX_BETA0 + j] += reg * params.beta[j];
    }
    Ok((loss, grad))
}

/// One momentum step on a sampled triple. Returns the sampled hinge loss.
pub fn sgd_step(
    state: &mut TrainState,
    config: &TrainConfig,
    triple: Triple,
    model: &TriggerModel<'_>,
    set: &TrainingSet,
) -> Result<f64> {
    let params = &state.params;
    let (loss, grad) = sampled_gradient(model, set, params, triple, config.lambda_beta)?;
    if let Some(k) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient {
            iteration: state.iteration,
            detail: format!("component {k} of the gradient is {} at {:?}", grad[k], params),
        });
    }

    let mut theta = params.to_vec();
    for (k, ((v, g), th)) in state.velocity.iter_mut().zip(&grad).zip(theta.iter_mut()).enumerate() {
        if !config.trainable(k) {
            *v = 0.0;
            continue;
        }
        *v = config.momentum * *v - config.learning_rate * g;
        *th += *v;
    }
    theta[IDX_C] = theta[IDX_C].max(config.floor_c);
    theta[IDX_D] = theta[IDX_D].max(config.floor_d);
    state.params = KernelParams::from_slice(&theta).map_err(|e| Error::NonFiniteGradient {
        iteration: state.iteration,
        detail: e.to_string(),
    })?;

    state.loss_ma = if state.iteration == 0 {
        loss
    } else {
        LOSS_MA_DECAY * state.loss_ma + (1.0 - LOSS_MA_DECAY) * loss
    };
    state.iteration += 1;
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub iter: u64,
    pub sampled_loss_ma: f64,
    pub c: f64,
    pub d: f64,
    pub beta_norm: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: KernelParams,
    pub log: Vec<LogEntry>,
}

/// Runs `config.iterations` steps from the configured initialization.
pub fn train(config: &TrainConfig, model: &TriggerModel<'_>, set: &TrainingSet) -> Result<TrainOutcome> {
    let init = config.initial_params(model.features().dim());
    train_from(config, model, set, init)
}

pub fn train_from(
    config: &TrainConfig,
    model: &TriggerModel<'_>,
    set: &TrainingSet,
    init: KernelParams,
) -> Result<TrainOutcome> {
    config.validate()?;
    model.check_params(&init)?;
    if set.groups.is_empty() {
        return Err(Error::NoEligibleCrime);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = TrainState::new(init);
    let mut log = Vec::new();
    for _ in 0..config.iterations {
        let triple = sample_triple(&mut rng, set)?;
        sgd_step(&mut state, config, triple, model, set)?;
        if config.log_every > 0 && state.iteration % config.log_every == 0 {
            let entry = LogEntry {
                iter: state.iteration,
                sampled_loss_ma: state.loss_ma,
                c: state.params.c,
                d: state.params.d,
                beta_norm: state.params.beta.iter().map(|b| b * b).sum::<f64>().sqrt(),
            };
            log::debug!(
                "iter {} loss_ma {:.6e} c {:.4} d {:.4} |beta| {:.4}",
                entry.iter,
                entry.sampled_loss_ma,
                entry.c,
                entry.d,
                entry.beta_norm
            );
            log.push(entry);
        }
    }
    Ok(TrainOutcome { params: state.params, log })
}

/// Writes the training log as JSON lines.
pub fn write_log<W: std::io::Write>(log: &[LogEntry], mut out: W) -> Result<()> {
    for e in log {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
