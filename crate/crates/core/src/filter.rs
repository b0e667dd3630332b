//! The BMFLC filter family.
//!
//! A band `[lower, upper)` is split into `L` uniformly spaced frequencies
//! `ν_r = lower + r·(upper − lower)/L`, `r = 0..L`. The model output is
//!
//! ```text
//! y(t) = Σ_r w_r sin(2πν_r t) + w_{r+L} cos(2πν_r t)
//! ```
//!
//! and the weights follow one of four update rules, each with a forgetting
//! factor `λ` on the previous weights:
//!
//! ```text
//! LMS     w_k ← λ w_k + 2η g_k e
//! Damped  w_k ← λ w_k + η g_k e / (1 + exp(−k_dmp (|w_k| − x_dmp)))
//! RLS     μ = P g / (λ_rls + gᵀP g)      P ← (P − μ gᵀP) / λ_rls
//! Kalman  μ = P g / (gᵀP g + R)          P ← (I − μ gᵀ) P + Q
//!                                        w ← λ w + μ e
//! ```

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("invalid frequency band [{lower}, {upper}): need 0 < lower < upper")]
    InvalidBand { lower: f64, upper: f64 },
    #[error("frequency grid must contain at least one frequency")]
    EmptyGrid,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("invalid step-size parameter `{name}` = {value}")]
    InvalidParam { name: &'static str, value: f64 },
    #[error("filter diverged at step {step}")]
    Diverged { step: u64 },
}

pub type Result<T> = std::result::Result<T, FilterError>;

/// Uniform frequency grid over `[lower, upper)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyGrid {
    lower: f64,
    upper: f64,
    freqs: Vec<f64>,
}

impl FrequencyGrid {
    pub fn new(lower: f64, upper: f64, len: usize) -> Result<Self> {
        if !(lower > 0.0 && upper > lower && upper.is_finite()) {
            return Err(FilterError::InvalidBand { lower, upper });
        }
        if len == 0 {
            return Err(FilterError::EmptyGrid);
        }
        let spacing = (upper - lower) / len as f64;
        let freqs = (0..len).map(|r| lower + r as f64 * spacing).collect();
        Ok(Self { lower, upper, freqs })
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn spacing(&self) -> f64 {
        (self.upper - self.lower) / self.freqs.len() as f64
    }

    /// Number of grid frequencies `L`; the model has `2L` weights.
    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    /// Writes `[sin(2πν_0 t) … sin(2πν_{L-1} t), cos(2πν_0 t) … cos(2πν_{L-1} t)]`.
    pub fn fill_basis(&self, t: f64, out: &mut [f64]) {
        let len = self.freqs.len();
        debug_assert_eq!(out.len(), 2 * len);
        let (sines, cosines) = out.split_at_mut(len);
        for ((nu, s), c) in self.freqs.iter().zip(sines).zip(cosines) {
            let (sn, cs) = (TAU * nu * t).sin_cos();
            *s = sn;
            *c = cs;
        }
    }

    pub fn basis(&self, t: f64) -> BasisVector {
        let mut values = vec![0.0; 2 * self.freqs.len()];
        self.fill_basis(t, &mut values);
        BasisVector { values, t }
    }
}

/// Sin/cos basis evaluated at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisVector {
    pub values: Vec<f64>,
    pub t: f64,
}

impl BasisVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Lms,
    Damped,
    Rls,
    Kalman,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Lms, Variant::Damped, Variant::Rls, Variant::Kalman];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Lms => "lms",
            Variant::Damped => "damped",
            Variant::Rls => "rls",
            Variant::Kalman => "kalman",
        }
    }

    pub fn uses_covariance(self) -> bool {
        matches!(self, Variant::Rls | Variant::Kalman)
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "lms" | "original" => Ok(Variant::Lms),
            "damped" => Ok(Variant::Damped),
            "rls" => Ok(Variant::Rls),
            "kalman" | "kf" => Ok(Variant::Kalman),
            other => Err(format!("unknown variant `{other}`")),
        }
    }
}

/// Step-size settings. Only the fields belonging to `variant` are read.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepSizeParams {
    pub variant: Variant,
    /// Learning rate η (LMS and damped).
    pub eta: f64,
    /// Forgetting factor λ applied to the weights, all variants.
    pub lambda: f64,
    /// Logistic steepness.
    pub k_dmp: f64,
    /// Logistic midpoint, in weight units.
    pub x_dmp: f64,
    pub lambda_rls: f64,
    /// Measurement-noise variance of the Kalman variant.
    pub r_kf: f64,
    /// Diagonal magnitude of the Kalman state-noise covariance.
    pub q_kf_scale: f64,
    /// Initial covariance diagonal.
    pub p0: f64,
}

impl Default for StepSizeParams {
    fn default() -> Self {
        Self {
            variant: Variant::Damped,
            eta: 1.0e-3,
            lambda: 0.9999,
            k_dmp: 1000.0,
            x_dmp: 0.001,
            lambda_rls: 0.9999,
            r_kf: 1.0e4,
            q_kf_scale: 1.0e-6,
            p0: 1.0,
        }
    }
}

impl StepSizeParams {
    /// Defaults for `variant`, chosen for the closed-loop testbed with its
    /// default controller (`K_ff = 100`).
    pub fn for_variant(variant: Variant) -> Self {
        let base = Self { variant, ..Self::default() };
        match variant {
            Variant::Lms => Self { eta: 1.5e-4, ..base },
            Variant::Rls => Self { p0: 1.0e-4, ..base },
            Variant::Damped | Variant::Kalman => base,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |name: &'static str, value: f64, ok: bool| {
            if ok && value.is_finite() {
                Ok(())
            } else {
                Err(FilterError::InvalidParam { name, value })
            }
        };
        check("lambda", self.lambda, self.lambda > 0.0 && self.lambda <= 1.0)?;
        match self.variant {
            Variant::Lms => check("eta", self.eta, self.eta > 0.0),
            Variant::Damped => {
                check("eta", self.eta, self.eta > 0.0)?;
                check("k_dmp", self.k_dmp, self.k_dmp > 0.0)?;
                check("x_dmp", self.x_dmp, true)
            }
            Variant::Rls => {
                check("lambda_rls", self.lambda_rls, self.lambda_rls > 0.0 && self.lambda_rls <= 1.0)?;
                check("p0", self.p0, self.p0 > 0.0)
            }
            Variant::Kalman => {
                check("r_kf", self.r_kf, self.r_kf > 0.0)?;
                check("q_kf_scale", self.q_kf_scale, self.q_kf_scale >= 0.0)?;
                check("p0", self.p0, self.p0 > 0.0)
            }
        }
    }
}

/// Band, grid size and step-size settings of one filter instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub lower: f64,
    pub upper: f64,
    pub len: usize,
    pub step: StepSizeParams,
}

impl FilterConfig {
    pub fn new(lower: f64, upper: f64, len: usize, step: StepSizeParams) -> Self {
        Self { lower, upper, len, step }
    }

    pub fn grid(&self) -> Result<FrequencyGrid> {
        FrequencyGrid::new(self.lower, self.upper, self.len)
    }
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self::new(6.0, 10.0, 100, StepSizeParams::default())
    }
}

/// Learned weights, covariance (RLS/Kalman only, row-major `2L × 2L`) and
/// the step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterState {
    pub weights: Vec<f64>,
    pub covariance: Option<Vec<f64>>,
    pub iter: u64,
    pub t: f64,
    #[serde(skip)]
    gain: Vec<f64>,
}

impl FilterState {
    /// Zero weights; `P = p0·I` when the variant needs a covariance.
    pub fn new(grid_len: usize, params: &StepSizeParams) -> Self {
        let n = 2 * grid_len;
        let covariance = params.variant.uses_covariance().then(|| {
            let mut p = vec![0.0; n * n];
            for i in 0..n {
                p[i * n + i] = params.p0;
            }
            p
        });
        Self { weights: vec![0.0; n], covariance, iter: 0, t: 0.0, gain: vec![0.0; n] }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// Gain vector `μ` of the latest RLS/Kalman step.
    pub fn gain(&self) -> &[f64] {
        &self.gain
    }

    fn check_dim(&self, g: &[f64]) -> Result<()> {
        if g.len() != self.weights.len() {
            return Err(FilterError::DimensionMismatch { expected: self.weights.len(), actual: g.len() });
        }
        Ok(())
    }

    fn finish(&mut self, finite: bool) -> Result<()> {
        self.iter += 1;
        if finite {
            Ok(())
        } else {
            Err(FilterError::Diverged { step: self.iter })
        }
    }
}

/// `wᵀg`.
pub fn predict(state: &FilterState, g: &[f64]) -> Result<f64> {
    state.check_dim(g)?;
    Ok(dot(&state.weights, g))
}

#[inline]
/// Dot product with four independent accumulators so the loop vectorises.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (a4, b4) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = a4.remainder().iter().zip(b4.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in a4.zip(b4) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Logistic damping factor `1 / (1 + exp(−k (|w| − x)))`.
#[inline]
pub fn damping_factor(weight: f64, k_dmp: f64, x_dmp: f64) -> f64 {
    1.0 / (1.0 + (-k_dmp * (weight.abs() - x_dmp)).exp())
}

pub fn step_lms(state: &mut FilterState, g: &[f64], e: f64, p: &StepSizeParams) -> Result<()> {
    state.check_dim(g)?;
    let lambda = p.lambda;
    let gain = 2.0 * p.eta * e;
    let mut finite = true;
    for (w, gk) in state.weights.iter_mut().zip(g) {
        *w = *w * lambda + gain * gk;
        finite &= w.is_finite();
    }
    state.finish(finite)
}

pub fn step_damped(state: &mut FilterState, g: &[f64], e: f64, p: &StepSizeParams) -> Result<()> {
    state.check_dim(g)?;
    let lambda = p.lambda;
    let scaled = p.eta * e;
    let mut finite = true;
    for (w, gk) in state.weights.iter_mut().zip(g) {
        let mu = scaled * gk * damping_factor(*w, p.k_dmp, p.x_dmp);
        *w = *w * lambda + mu;
        finite &= w.is_finite();
    }
    state.finish(finite)
}

/// Computes `u = P g` into the gain buffer and returns `gᵀP g`.
fn covariance_times_basis(state: &mut FilterState, g: &[f64]) -> f64 {
    let n = state.weights.len();
    let p = state.covariance.as_ref().expect("covariance present for RLS/Kalman");
    for (row, u) in p.chunks_exact(n).zip(state.gain.iter_mut()) {
        *u = dot(row, g);
    }
    dot(g, &state.gain)
}

/// Applies `P ← scale·(P − μ uᵀ) + q·I` where `u = P g` and `μ = u / denom`.
///
/// `P` stays exactly symmetric: entry `(i, j)` subtracts `u_i u_j / denom`.
fn update_covariance(state: &mut FilterState, denom: f64, scale: f64, q: f64) -> bool {
    let n = state.weights.len();
    let u = &state.gain;
    let p = state.covariance.as_mut().expect("covariance present for RLS/Kalman");
    // A non-finite entry poisons the running sum, which is cheaper to check
    // than every element.
    let mut acc = [0.0; 4];
    for (i, row) in p.chunks_exact_mut(n).enumerate() {
        let mu_i = u[i] / denom;
        let mut rows = row.chunks_exact_mut(4);
        let mut us = u.chunks_exact(4);
        for (r4, u4) in (&mut rows).zip(&mut us) {
            for k in 0..4 {
                let v = scale * (r4[k] - mu_i * u4[k]);
                r4[k] = v;
                acc[k] += v;
            }
        }
        for (pij, uj) in rows.into_remainder().iter_mut().zip(us.remainder()) {
            *pij = scale * (*pij - mu_i * uj);
            acc[0] += *pij;
        }
        row[i] += q;
    }
    let row_sums = acc.iter().sum::<f64>() + q;
    row_sums.is_finite()
}

fn apply_gain(state: &mut FilterState, denom: f64, e: f64, lambda: f64) -> bool {
    let mut finite = true;
    for (w, u) in state.weights.iter_mut().zip(state.gain.iter_mut()) {
        *u /= denom;
        *w = *w * lambda + *u * e;
        finite &= w.is_finite();
    }
    finite
}

pub fn step_rls(state: &mut FilterState, g: &[f64], e: f64, p: &StepSizeParams) -> Result<()> {
    state.check_dim(g)?;
    let denom = p.lambda_rls + covariance_times_basis(state, g);
    if !denom.is_finite() {
        return state.finish(false);
    }
    let finite_p = update_covariance(state, denom, 1.0 / p.lambda_rls, 0.0);
    let finite_w = apply_gain(state, denom, e, p.lambda);
    state.finish(finite_p && finite_w)
}

pub fn step_kalman(state: &mut FilterState, g: &[f64], e: f64, p: &StepSizeParams) -> Result<()> {
    state.check_dim(g)?;
    let denom = covariance_times_basis(state, g) + p.r_kf;
    if !denom.is_finite() {
        return state.finish(false);
    }
    let finite_p = update_covariance(state, denom, 1.0, p.q_kf_scale);
    let finite_w = apply_gain(state, denom, e, p.lambda);
    state.finish(finite_p && finite_w)
}

/// Dispatches to the update rule selected by `p.variant`.
pub fn step(state: &mut FilterState, g: &[f64], e: f64, p: &StepSizeParams) -> Result<()> {
    match p.variant {
        Variant::Lms => step_lms(state, g, e, p),
        Variant::Damped => step_damped(state, g, e, p),
        Variant::Rls => step_rls(state, g, e, p),
        Variant::Kalman => step_kalman(state, g, e, p),
    }
}

/// `f_ff = K_ff · y_vib`.
#[inline]
pub fn feedforward_force(y_vib: f64, k_ff: f64) -> f64 {
    k_ff * y_vib
}

/// A filter instance: grid, settings, state and a basis buffer.
#[derive(Debug, Clone)]
pub struct Bmflc {
    config: FilterConfig,
    grid: FrequencyGrid,
    state: FilterState,
    basis: Vec<f64>,
}

impl Bmflc {
    pub fn new(config: FilterConfig) -> Result<Self> {
        config.step.validate()?;
        let grid = config.grid()?;
        let state = FilterState::new(grid.len(), &config.step);
        let basis = vec![0.0; 2 * grid.len()];
        Ok(Self { config, grid, state, basis })
    }

    pub fn config(&self) -> &FilterConfig {
        &self.config
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    pub fn state(&self) -> &FilterState {
        &self.state
    }

    /// Evaluates the basis at `t` and returns the model output there. The
    /// basis is kept for the following [`Bmflc::update`].
    pub fn predict_at(&mut self, t: f64) -> f64 {
        self.grid.fill_basis(t, &mut self.basis);
        self.state.t = t;
        dot(&self.state.weights, &self.basis)
    }

    /// Updates the weights with error `e` against the last evaluated basis.
    pub fn update(&mut self, e: f64) -> Result<()> {
        step(&mut self.state, &self.basis, e, &self.config.step)
    }
}
