//! Step-size parameter search.
//!
//! Each free parameter is searched in a transformed coordinate: positive
//! scales (`η`, `k_dmp`, `R_kf`, `Q_kf`, `p0`) in log-space, `λ_rls` as
//! `ln(1 − λ_rls)`, `x_dmp` linearly. Per-motion optima are averaged in
//! those coordinates and projected back into the box.
//!
//! The Kalman variant keeps `p0` fixed: scaling `P`, `R_kf` and `Q_kf`
//! together leaves its gain unchanged, so only two of the three are free.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filter::{FilterConfig, StepSizeParams, Variant};
use crate::plant::{simulate_sr, SimConfig};
use crate::synth::MotionSpec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TuneError {
    #[error("need at least {need} motions, got {got}")]
    NotEnoughMotions { need: usize, got: usize },
    #[error("no free parameters to tune")]
    NoFreeParams,
    #[error("optimisation diverged on every evaluation for motion seed {seed}")]
    Diverged { seed: u64 },
    #[error("invalid box for `{0}`")]
    InvalidBox(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmOptions {
    pub max_evals: Option<usize>,
    /// Stop when every vertex is within `xtol_rel · max(1, |x_best|∞)` of the best.
    pub xtol_rel: f64,
    /// Also stop when the objective spread across the simplex is below
    /// `ftol` while every vertex is within `ftol_xtol` of the best.
    pub ftol: f64,
    pub ftol_xtol: f64,
    /// Relative perturbation of each coordinate for the initial simplex.
    pub initial_step: f64,
}

impl Default for NmOptions {
    fn default() -> Self {
        Self { max_evals: None, xtol_rel: 1e-6, ftol: 0.0, ftol_xtol: 0.0, initial_step: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NmResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    pub converged: bool,
}

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

/// Nelder-Mead minimisation. Non-finite objective values count as `+∞`.
pub fn nelder_mead<F>(mut objective: F, x0: &[f64], opts: &NmOptions) -> NmResult
where
    F: FnMut(&[f64]) -> f64,
{
    let dim = x0.len();
    if dim == 0 {
        let f = objective(x0);
        return NmResult { x: Vec::new(), f: if f.is_nan() { f64::INFINITY } else { f }, evals: 1, converged: true };
    }
    let max_evals = opts.max_evals.unwrap_or(200 * dim.max(1));
    let evals = std::cell::Cell::new(0usize);
    let mut eval = |x: &[f64]| {
        evals.set(evals.get() + 1);
        let v = objective(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    let f0 = eval(x0);
    simplex.push((x0.to_vec(), f0));
    for i in 0..dim {
        let mut x = x0.to_vec();
        x[i] = if x[i] != 0.0 { x[i] * (1.0 + opts.initial_step) } else { 0.00025 };
        let f = eval(&x);
        simplex.push((x, f));
    }

    let mut converged = false;
    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = &simplex[0];
        let scale = best.0.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let diameter = simplex[1..]
            .iter()
            .flat_map(|(x, _)| x.iter().zip(&best.0).map(|(a, b)| (a - b).abs()))
            .fold(0.0f64, f64::max);
        let fspread = simplex[dim].1 - best.1;
        let loose = opts.ftol > 0.0 && fspread.is_finite() && fspread <= opts.ftol && diameter <= opts.ftol_xtol;
        if diameter <= opts.xtol_rel * scale || loose {
            converged = true;
            break;
        }
        if evals.get() >= max_evals {
            break;
        }

        let centroid: Vec<f64> =
            (0..dim).map(|j| simplex[..dim].iter().map(|(x, _)| x[j]).sum::<f64>() / dim as f64).collect();
        let along = |coef: f64, from: &[f64]| -> Vec<f64> {
            centroid.iter().zip(from).map(|(c, w)| c + coef * (c - w)).collect()
        };
        let worst = simplex[dim].0.clone();
        let (f_best, f_second, f_worst) = (simplex[0].1, simplex[dim - 1].1, simplex[dim].1);

        let xr = along(REFLECT, &worst);
        let fr = eval(&xr);
        if fr < f_best {
            let xe = along(REFLECT * EXPAND, &worst);
            let fe = eval(&xe);
            simplex[dim] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < f_second {
            simplex[dim] = (xr, fr);
        } else {
            let outside = fr < f_worst;
            let xc = if outside { along(REFLECT * CONTRACT, &worst) } else { along(-CONTRACT, &worst) };
            let fc = eval(&xc);
            if (outside && fc <= fr) || (!outside && fc < f_worst) {
                simplex[dim] = (xc, fc);
            } else {
                let anchor = simplex[0].0.clone();
                for vertex in simplex.iter_mut().skip(1) {
                    let x: Vec<f64> = anchor.iter().zip(&vertex.0).map(|(b, v)| b + SHRINK * (v - b)).collect();
                    let f = eval(&x);
                    *vertex = (x, f);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, f) = simplex.swap_remove(0);
    NmResult { x, f, evals: evals.get(), converged }
}

/// Step-size parameter that can be tuned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Param {
    Eta,
    KDmp,
    XDmp,
    LambdaRls,
    RKf,
    QKfScale,
    P0,
}

impl Param {
    pub fn name(self) -> &'static str {
        match self {
            Param::Eta => "eta",
            Param::KDmp => "k_dmp",
            Param::XDmp => "x_dmp",
            Param::LambdaRls => "lambda_rls",
            Param::RKf => "r_kf",
            Param::QKfScale => "q_kf_scale",
            Param::P0 => "p0",
        }
    }

    pub fn get(self, p: &StepSizeParams) -> f64 {
        match self {
            Param::Eta => p.eta,
            Param::KDmp => p.k_dmp,
            Param::XDmp => p.x_dmp,
            Param::LambdaRls => p.lambda_rls,
            Param::RKf => p.r_kf,
            Param::QKfScale => p.q_kf_scale,
            Param::P0 => p.p0,
        }
    }

    pub fn set(self, p: &mut StepSizeParams, v: f64) {
        match self {
            Param::Eta => p.eta = v,
            Param::KDmp => p.k_dmp = v,
            Param::XDmp => p.x_dmp = v,
            Param::LambdaRls => p.lambda_rls = v,
            Param::RKf => p.r_kf = v,
            Param::QKfScale => p.q_kf_scale = v,
            Param::P0 => p.p0 = v,
        }
    }

    fn to_search(self, v: f64) -> f64 {
        match self {
            Param::XDmp => v,
            Param::LambdaRls => (1.0 - v).ln(),
            _ => v.ln(),
        }
    }

    fn from_search(self, u: f64) -> f64 {
        match self {
            Param::XDmp => u,
            Param::LambdaRls => 1.0 - u.exp(),
            _ => u.exp(),
        }
    }
}

/// A free parameter with its box in natural units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreeParam {
    pub param: Param,
    pub lower: f64,
    pub upper: f64,
}

impl FreeParam {
    pub fn new(param: Param, lower: f64, upper: f64) -> Self {
        Self { param, lower, upper }
    }

    /// Box in search coordinates, ordered low to high.
    fn search_box(&self) -> (f64, f64) {
        let (a, b) = (self.param.to_search(self.lower), self.param.to_search(self.upper));
        (a.min(b), a.max(b))
    }

    fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.lower, self.upper)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneProblem {
    pub base: FilterConfig,
    pub sim: SimConfig,
    pub free: Vec<FreeParam>,
    pub options: NmOptions,
}

impl TuneProblem {
    /// Default free parameters and boxes for `variant`; `base` supplies the
    /// fixed band, grid size, forgetting factor and the starting point.
    pub fn for_variant(variant: Variant, base: FilterConfig, sim: SimConfig) -> Self {
        let free = match variant {
            Variant::Lms => vec![FreeParam::new(Param::Eta, 1e-12, 1e-2)],
            Variant::Damped => vec![
                FreeParam::new(Param::Eta, 1e-12, 1e-1),
                FreeParam::new(Param::KDmp, 1e-2, 1e6),
                FreeParam::new(Param::XDmp, -1.0, 1.0),
            ],
            Variant::Rls => {
                vec![FreeParam::new(Param::LambdaRls, 0.9, 1.0 - 1e-12), FreeParam::new(Param::P0, 1e-12, 1e2)]
            }
            Variant::Kalman => vec![FreeParam::new(Param::RKf, 1e-12, 1e6), FreeParam::new(Param::QKfScale, 1e-16, 1.0)],
        };
        let base = FilterConfig { step: StepSizeParams { variant, ..base.step }, ..base };
        let options = NmOptions::default();
        Self { base, sim, free, options }
    }

    pub fn variant(&self) -> Variant {
        self.base.step.variant
    }

    pub fn validate(&self) -> Result<(), TuneError> {
        if self.free.is_empty() {
            return Err(TuneError::NoFreeParams);
        }
        for f in &self.free {
            let (a, b) = f.search_box();
            if !(f.lower < f.upper && a.is_finite() && b.is_finite()) {
                return Err(TuneError::InvalidBox(f.param.name()));
            }
        }
        Ok(())
    }

    fn start(&self) -> Vec<f64> {
        self.free.iter().map(|f| f.param.to_search(f.clamp(f.param.get(&self.base.step)))).collect()
    }

    /// Step-size parameters at search coordinates `u`, or `None` outside the box.
    pub fn params_at(&self, u: &[f64]) -> Option<StepSizeParams> {
        let mut step = self.base.step;
        for (f, &ui) in self.free.iter().zip(u) {
            let (a, b) = f.search_box();
            if !(ui >= a && ui <= b) {
                return None;
            }
            f.param.set(&mut step, f.param.from_search(ui));
        }
        Some(step)
    }

    /// `−SR` of one run; divergence and out-of-box points score `+∞`.
    pub fn objective(&self, motion: &MotionSpec, u: &[f64]) -> f64 {
        let Some(step) = self.params_at(u) else { return f64::INFINITY };
        match simulate_sr(motion, FilterConfig { step, ..self.base }, &self.sim) {
            Ok(Some(sr)) => -sr,
            _ => f64::INFINITY,
        }
    }

    /// Optimises the free parameters on a single motion.
    pub fn tune_motion(&self, motion: &MotionSpec) -> Result<MotionOptimum, TuneError> {
        self.validate()?;
        let result = nelder_mead(|u| self.objective(motion, u), &self.start(), &self.options);
        if !result.f.is_finite() {
            return Err(TuneError::Diverged { seed: motion.seed });
        }
        let params = self.params_at(&result.x).expect("finite optimum lies inside the box");
        Ok(MotionOptimum { seed: motion.seed, search: result.x, params, f_best: result.f, evals: result.evals })
    }

    /// Tunes on the first five motions in parallel and averages the optima.
    ///
    /// With `exclude_failed`, motions whose search never produced a finite
    /// score are dropped from the average instead of failing the call.
    pub fn tune_general_params(&self, motions: &[MotionSpec], exclude_failed: bool) -> Result<GeneralParams, TuneError> {
        const TUNING_MOTIONS: usize = 5;
        if motions.len() < TUNING_MOTIONS {
            return Err(TuneError::NotEnoughMotions { need: TUNING_MOTIONS, got: motions.len() });
        }
        self.validate()?;
        let results: Vec<Result<MotionOptimum, TuneError>> =
            motions[..TUNING_MOTIONS].par_iter().map(|m| self.tune_motion(m)).collect();
        let mut per_motion = Vec::with_capacity(TUNING_MOTIONS);
        let mut excluded = Vec::new();
        for r in results {
            match r {
                Ok(opt) => per_motion.push(opt),
                Err(TuneError::Diverged { seed }) if exclude_failed => excluded.push(seed),
                Err(e) => return Err(e),
            }
        }
        if per_motion.is_empty() {
            return Err(TuneError::Diverged { seed: excluded[0] });
        }
        let optima: Vec<Vec<f64>> = per_motion.iter().map(|o| o.search.clone()).collect();
        let params = self.average(&optima);
        Ok(GeneralParams { params, per_motion, excluded })
    }

    /// Element-wise mean of search-space points, projected into the box.
    pub fn average(&self, points: &[Vec<f64>]) -> StepSizeParams {
        let mut step = self.base.step;
        for (j, f) in self.free.iter().enumerate() {
            let mean = points.iter().map(|p| p[j]).sum::<f64>() / points.len() as f64;
            let (a, b) = f.search_box();
            f.param.set(&mut step, f.clamp(f.param.from_search(mean.clamp(a, b))));
        }
        step
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionOptimum {
    pub seed: u64,
    pub search: Vec<f64>,
    pub params: StepSizeParams,
    pub f_best: f64,
    pub evals: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralParams {
    pub params: StepSizeParams,
    pub per_motion: Vec<MotionOptimum>,
    pub excluded: Vec<u64>,
}
