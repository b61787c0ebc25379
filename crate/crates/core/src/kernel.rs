//! The triggering kernel
//!
//! ```text
//! kappa(ds, dt, dw) = (b0 + sum_j b_j dw_j) / ((dt + c)^2 (ds + d)^2)
//! ```
//!
//! with `dt` in days, `ds` in kilometers and `dw` the difference of
//! standardized cell features. Parameters are laid out as a flat vector
//! `[c, d, b0, b1, .., bJ]` whenever gradients are involved.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of `c` in the flat parameter layout.
pub const IDX_C: usize = 0;
/// Index of `d` in the flat parameter layout.
pub const IDX_D: usize = 1;
/// Index of the intercept `b0` in the flat parameter layout.
pub const IDX_BETA0: usize = 2;

/// Default lower bound for `c` and `d`.
pub const DEFAULT_OFFSET_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    /// Temporal offset in days.
    pub c: f64,
    /// Spatial offset in kilometers.
    pub d: f64,
    /// Intercept followed by one weight per feature.
    pub beta: Vec<f64>,
}

impl KernelParams {
    pub fn new(c: f64, d: f64, beta: Vec<f64>) -> Result<Self> {
        let p = Self { c, d, beta };
        p.validate()?;
        Ok(p)
    }

    /// `c = d = 1`, `b0 = 1`, feature weights zero.
    pub fn initial(n_features: usize) -> Self {
        let mut beta = vec![0.0; n_features + 1];
        beta[0] = 1.0;
        Self { c: 1.0, d: 1.0, beta }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beta.is_empty() {
            return Err(Error::InvalidParameter("beta needs at least the intercept".into()));
        }
        if !self.c.is_finite() || !self.d.is_finite() || self.beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite("kernel parameters".into()));
        }
        if self.c <= 0.0 || self.d <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "kernel offsets must be positive (c = {}, d = {})",
                self.c, self.d
            )));
        }
        Ok(())
    }

    /// J, the number of feature weights.
    pub fn n_features(&self) -> usize {
        self.beta.len() - 1
    }

    pub fn n_params(&self) -> usize {
        self.beta.len() + 2
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_params());
        v.push(self.c);
        v.push(self.d);
        v.extend_from_slice(&self.beta);
        v
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() < 3 {
            return Err(Error::DimensionMismatch {
                expected: 3,
                found: v.len(),
                context: "flat kernel parameters (at least c, d, b0)".into(),
            });
        }
        Self::new(v[IDX_C], v[IDX_D], v[IDX_BETA0..].to_vec())
    }

    /// Clamps the offsets onto their floors.
    pub fn project(&mut self, floor_c: f64, floor_d: f64) {
        self.c = self.c.max(floor_c);
        self.d = self.d.max(floor_d);
    }

    /// Euclidean norm of the feature weights (intercept excluded).
    pub fn feature_weight_norm(&self) -> f64 {
        self.beta[1..].iter().map(|b| b * b).sum::<f64>().sqrt()
    }
}

/// How feature differences are formed between a candidate cell and a prior
/// crime's cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffMode {
    /// `w_l - w_g`, as in the risk formula.
    #[default]
    Signed,
    /// `|w_l - w_g|`, symmetric in the two cells.
    Absolute,
}

impl DiffMode {
    #[inline]
    pub fn apply(self, candidate: f64, prior: f64) -> f64 {
        match self {
            DiffMode::Signed => candidate - prior,
            DiffMode::Absolute => (candidate - prior).abs(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct KernelOptions {
    #[serde(default)]
    pub diff_mode: DiffMode,
    /// Replace negative kernel values by zero (with zero subgradient there).
    #[serde(default)]
    pub clamp: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct TriggerInput<'a> {
    /// Spatial distance, km.
    pub ds: f64,
    /// Temporal gap, days.
    pub dt: f64,
    /// Feature difference vector.
    pub dw: &'a [f64],
}

impl TriggerInput<'_> {
    fn validate(&self, params: &KernelParams) -> Result<()> {
        if self.dw.len() != params.n_features() {
            return Err(Error::DimensionMismatch {
                expected: params.n_features(),
                found: self.dw.len(),
                context: "feature difference vs. kernel weights".into(),
            });
        }
        if !self.ds.is_finite() || !self.dt.is_finite() || self.dw.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("kernel input".into()));
        }
        if self.ds < 0.0 || self.dt < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "kernel distances must be nonnegative (ds = {}, dt = {})",
                self.ds, self.dt
            )));
        }
        Ok(())
    }
}

#[inline]
fn numerator(beta: &[f64], dw: &[f64]) -> f64 {
    beta[0] + beta[1..].iter().zip(dw).map(|(b, w)| b * w).sum::<f64>()
}

/// Kernel value without input validation.
#[inline]
pub(crate) fn eval_raw(params: &KernelParams, ds: f64, dt: f64, dw: &[f64], clamp: bool) -> f64 {
    let a = dt + params.c;
    let b = ds + params.d;
    let k = numerator(&params.beta, dw) / (a * a * b * b);
    if clamp {
        k.max(0.0)
    } else {
        k
    }
}

/// Adds `scale * grad(kappa)` into `grad` (flat layout) and returns kappa.
#[inline]
pub(crate) fn accumulate_grad(
    params: &KernelParams,
    ds: f64,
    dt: f64,
    dw: &[f64],
    clamp: bool,
    scale: f64,
    grad: &mut [f64],
) -> f64 {
    let a = dt + params.c;
    let b = ds + params.d;
    let n = numerator(&params.beta, dw);
    let inv_d = 1.0 / (a * a * b * b);
    let k = n * inv_d;
    if clamp && k <= 0.0 {
        return 0.0;
    }
    grad[IDX_C] += scale * (-2.0 * k / a);
    grad[IDX_D] += scale * (-2.0 * k / b);
    grad[IDX_BETA0] += scale * inv_d;
    for (g, w) in grad[IDX_BETA0 + 1..].iter_mut().zip(dw) {
        *g += scale * w * inv_d;
    }
    k
}

pub fn kernel_eval(params: &KernelParams, input: &TriggerInput<'_>, options: &KernelOptions) -> Result<f64> {
    params.validate()?;
    input.validate(params)?;
    Ok(eval_raw(params, input.ds, input.dt, input.dw, options.clamp))
}

/// Gradient with respect to `[c, d, b0, .., bJ]`.
pub fn kernel_grad(params: &KernelParams, input: &TriggerInput<'_>, options: &KernelOptions) -> Result<Vec<f64>> {
    params.validate()?;
    input.validate(params)?;
    let mut g = vec![0.0; params.n_params()];
    accumulate_grad(params, input.ds, input.dt, input.dw, options.clamp, 1.0, &mut g);
    Ok(g)
}

/// On-disk form of a trained kernel, carrying the feature schema it was
/// trained against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelFile {
    pub c: f64,
    pub d: f64,
    pub beta: Vec<f64>,
    pub feature_names: Vec<String>,
    #[serde(default)]
    pub options: KernelOptions,
}

impl KernelFile {
    pub fn new(params: &KernelParams, feature_names: &[String], options: KernelOptions) -> Result<Self> {
        if feature_names.len() != params.n_features() {
            return Err(Error::DimensionMismatch {
                expected: params.n_features(),
                found: feature_names.len(),
                context: "feature names vs. kernel weights".into(),
            });
        }
        Ok(Self {
            c: params.c,
            d: params.d,
            beta: params.beta.clone(),
            feature_names: feature_names.to_vec(),
            options,
        })
    }

    pub fn params(&self) -> Result<KernelParams> {
        let p = KernelParams::new(self.c, self.d, self.beta.clone())?;
        if p.n_features() != self.feature_names.len() {
            return Err(Error::DimensionMismatch {
                expected: self.feature_names.len(),
                found: p.n_features(),
                context: "kernel weights vs. feature names".into(),
            });
        }
        Ok(p)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: Self = serde_json::from_str(s)?;
        f.params()?;
        Ok(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PLAIN: KernelOptions = KernelOptions { diff_mode: DiffMode::Signed, clamp: false };

    fn eval(p: &KernelParams, ds: f64, dt: f64, dw: &[f64]) -> f64 {
        kernel_eval(p, &TriggerInput { ds, dt, dw }, &PLAIN).unwrap()
    }

    #[test]
    fn direct_substitution() {
        let p = KernelParams::new(1.0, 1.0, vec![1.0]).unwrap();
        assert_eq!(eval(&p, 0.0, 0.0, &[]), 1.0);
        let p = KernelParams::new(1.0, 1.0, vec![1.0, 2.0]).unwrap();
        assert_eq!(eval(&p, 1.0, 1.0, &[0.5]), 0.125);
    }

    #[test]
    fn temporal_ratio() {
        let p = KernelParams::new(1.0, 0.3, vec![0.7, -0.2]).unwrap();
        let a = eval(&p, 0.4, 1.0, &[0.9]);
        let b = eval(&p, 0.4, 3.0, &[0.9]);
        assert!((b / a - 0.25).abs() < 1e-15);
    }

    #[test]
    fn zero_numerator_kills_offset_gradients() {
        let p = KernelParams::new(1.3, 0.7, vec![0.0, 0.0]).unwrap();
        let g = kernel_grad(&p, &TriggerInput { ds: 0.5, dt: 2.0, dw: &[0.3] }, &PLAIN).unwrap();
        let d = (2.0f64 + 1.3).powi(2) * (0.5f64 + 0.7).powi(2);
        assert_eq!(g[IDX_C], 0.0);
        assert_eq!(g[IDX_D], 0.0);
        assert!((g[IDX_BETA0] - 1.0 / d).abs() < 1e-15);
    }

    #[test]
    fn unit_offset_gradients() {
        let p = KernelParams::new(1.0, 1.0, vec![1.0]).unwrap();
        let g = kernel_grad(&p, &TriggerInput { ds: 0.0, dt: 0.0, dw: &[] }, &PLAIN).unwrap();
        assert_eq!(g, vec![-2.0, -2.0, 1.0]);
    }

    #[test]
    fn clamp_zeroes_negative_values_and_gradient() {
        let p = KernelParams::new(1.0, 1.0, vec![-1.0]).unwrap();
        let opts = KernelOptions { clamp: true, ..PLAIN };
        let input = TriggerInput { ds: 0.0, dt: 0.0, dw: &[] };
        assert_eq!(kernel_eval(&p, &input, &opts).unwrap(), 0.0);
        assert!(kernel_grad(&p, &input, &opts).unwrap().iter().all(|g| *g == 0.0));
        assert_eq!(eval(&p, 0.0, 0.0, &[]), -1.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = KernelParams::initial(1);
        assert!(matches!(
            kernel_eval(&p, &TriggerInput { ds: f64::NAN, dt: 1.0, dw: &[0.0] }, &PLAIN),
            Err(Error::NonFinite(_))
        ));
        assert!(matches!(
            kernel_eval(&p, &TriggerInput { ds: 0.0, dt: 1.0, dw: &[] }, &PLAIN),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(KernelParams::new(f64::INFINITY, 1.0, vec![1.0]).is_err());
    }

    #[test]
    fn flat_layout_round_trip() {
        let p = KernelParams::new(0.5, 0.25, vec![1.0, -2.0, 3.0]).unwrap();
        assert_eq!(p.to_vec(), vec![0.5, 0.25, 1.0, -2.0, 3.0]);
        assert_eq!(KernelParams::from_slice(&p.to_vec()).unwrap(), p);
    }

    #[test]
    fn projection_floors_offsets() {
        let mut p = KernelParams { c: -0.2, d: 0.0005, beta: vec![1.0] };
        p.project(1e-3, 1e-3);
        assert_eq!((p.c, p.d), (1e-3, 1e-3));
    }

    #[test]
    fn kernel_file_json() {
        let p = KernelParams::new(0.5, 0.25, vec![1.0, -2.0]).unwrap();
        let f = KernelFile::new(&p, &["area_x".into()], KernelOptions::default()).unwrap();
        let back = KernelFile::from_json(&f.to_json().unwrap()).unwrap();
        assert_eq!(back, f);
        assert!(KernelFile::new(&p, &[], KernelOptions::default()).is_err());
    }
}
