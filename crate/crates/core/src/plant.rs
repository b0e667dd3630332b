//! Closed-loop mass-spring-damper testbed.
//!
//! Per tick of length `dt`:
//!
//! 1. read `x_des`, `ẋ_des` from the voluntary motion (scaled into plant units),
//! 2. `e_pos = x_des − x`, `e_vel = ẋ_des − ẋ`,
//! 3. `f_imp = K_k e_pos + K_b e_vel`,
//! 4. `y_vib = wᵀg(t)`, `f_ff = K_ff y_vib`,
//! 5. filter update with `e = e_vel`,
//! 6. advance the plant under `f_imp + f_ff − f_ν + f_n`.
//!
//! The vibration force is signed along the tracking error: it enters the
//! plant negated, so that `e_vel` carries `+f_ν` and a filter that drives
//! `e_vel` to zero ends with `f_ff ≈ f_ν`.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filter::{feedforward_force, Bmflc, FilterConfig, FilterError};
use crate::metrics;
use crate::synth::MotionSpec;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error("plant state became non-finite at step {step}")]
    PlantDiverged { step: u64 },
    #[error("invalid simulation setting: {0}")]
    InvalidConfig(String),
    #[error("csv export failed: {0}")]
    Csv(#[from] csv::Error),
}

impl SimError {
    /// Step index of a divergence abort, if this is one.
    pub fn divergence_step(&self) -> Option<u64> {
        match self {
            SimError::Filter(FilterError::Diverged { step }) | SimError::PlantDiverged { step } => Some(*step),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantParams {
    pub mass: f64,
    pub stiffness: f64,
    pub damping: f64,
    pub dt: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self { mass: 3.6, stiffness: 400.0, damping: 100.0, dt: 0.001 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerParams {
    pub k_k: f64,
    pub k_b: f64,
    pub k_ff: f64,
}

impl Default for ControllerParams {
    fn default() -> Self {
        Self { k_k: 400.0, k_b: 16.0, k_ff: 100.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlantState {
    pub x: f64,
    pub v: f64,
    pub t: f64,
}

impl PlantState {
    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.v.is_finite()
    }

    /// Kinetic plus spring energy.
    pub fn energy(&self, p: &PlantParams) -> f64 {
        0.5 * p.mass * self.v * self.v + 0.5 * p.stiffness * self.x * self.x
    }
}

/// `f_imp = K_k e_pos + K_b e_vel`.
#[inline]
pub fn impedance_force(e_pos: f64, e_vel: f64, c: &ControllerParams) -> f64 {
    c.k_k * e_pos + c.k_b * e_vel
}

/// One semi-implicit Euler step of `m ẍ + b ẋ + k x = force`.
#[inline]
pub fn plant_step(s: PlantState, force: f64, p: &PlantParams) -> PlantState {
    let acc = (force - p.damping * s.v - p.stiffness * s.x) / p.mass;
    let v = s.v + p.dt * acc;
    PlantState { x: s.x + p.dt * v, v, t: s.t + p.dt }
}

/// Plant, controller and run length of one simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub plant: PlantParams,
    pub controller: ControllerParams,
    pub duration: f64,
    /// Leading seconds excluded from the suppression rate.
    pub sr_skip: f64,
    /// Conversion from reference-trajectory units to plant position units.
    /// Voluntary amplitudes are expressed in centimetres while the plant
    /// works in metres, hence the default of 0.01.
    pub reference_scale: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { plant: PlantParams::default(), controller: ControllerParams::default(), duration: 24.5, sr_skip: 0.0, reference_scale: 0.01 }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let p = &self.plant;
        let c = &self.controller;
        if !(p.mass > 0.0 && p.dt > 0.0 && p.stiffness >= 0.0 && p.damping >= 0.0) {
            return Err(SimError::InvalidConfig("need mass > 0, dt > 0".into()));
        }
        if !(c.k_k >= 0.0 && c.k_b >= 0.0 && c.k_ff.is_finite()) {
            return Err(SimError::InvalidConfig("need K_k, K_b >= 0".into()));
        }
        if !(self.reference_scale.is_finite() && self.reference_scale >= 0.0) {
            return Err(SimError::InvalidConfig("need a finite reference_scale >= 0".into()));
        }
        if !(self.duration > 0.0 && self.sr_skip >= 0.0 && self.sr_skip < self.duration) {
            return Err(SimError::InvalidConfig("need duration > 0 and 0 <= sr_skip < duration".into()));
        }
        Ok(())
    }

    pub fn ticks(&self) -> usize {
        (self.duration / self.plant.dt).round() as usize
    }

    fn skip_ticks(&self) -> usize {
        (self.sr_skip / self.plant.dt).round() as usize
    }
}

/// Everything logged in one tick.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Tick {
    pub t: f64,
    pub x_des: f64,
    pub x: f64,
    pub e_pos: f64,
    pub e_vel: f64,
    pub f_nu: f64,
    pub f_n: f64,
    pub f_imp: f64,
    pub f_ff: f64,
    pub y_vib: f64,
}

/// Steps a motion, a filter and the plant together.
pub struct Simulation<'a> {
    spec: &'a MotionSpec,
    filter: Bmflc,
    config: SimConfig,
    state: PlantState,
    noise: rand_chacha::ChaCha8Rng,
    step: u64,
}

impl<'a> Simulation<'a> {
    /// The plant starts at the quasi-static equilibrium of the reference:
    /// `x = K_k x_des / (k + K_k)` and likewise for the velocity.
    pub fn new(spec: &'a MotionSpec, filter: FilterConfig, config: SimConfig) -> Result<Self, SimError> {
        config.validate()?;
        let filter = Bmflc::new(filter)?;
        let (x_des, xdot_des) = spec.reference(0.0);
        let (x_des, xdot_des) = (x_des * config.reference_scale, xdot_des * config.reference_scale);
        let ratio = config.controller.k_k / (config.plant.stiffness + config.controller.k_k).max(f64::MIN_POSITIVE);
        let state = PlantState { x: ratio * x_des, v: ratio * xdot_des, t: 0.0 };
        Ok(Self { spec, filter, config, state, noise: spec.noise_rng(), step: 0 })
    }

    pub fn filter(&self) -> &Bmflc {
        &self.filter
    }

    pub fn plant(&self) -> PlantState {
        self.state
    }

    pub fn tick(&mut self) -> Result<Tick, SimError> {
        let c = &self.config.controller;
        let t = self.step as f64 * self.config.plant.dt;
        let sample = self.spec.evaluate(t, &mut self.noise);
        let scale = self.config.reference_scale;
        let (x_des, xdot_des) = (sample.x_r * scale, sample.xdot_r * scale);
        let e_pos = x_des - self.state.x;
        let e_vel = xdot_des - self.state.v;
        let f_imp = impedance_force(e_pos, e_vel, c);
        let y_vib = self.filter.predict_at(t);
        let f_ff = feedforward_force(y_vib, c.k_ff);
        self.filter.update(e_vel)?;
        let force = f_imp + f_ff - sample.f_nu + sample.f_n;
        self.state = plant_step(self.state, force, &self.config.plant);
        self.step += 1;
        if !self.state.is_finite() {
            return Err(SimError::PlantDiverged { step: self.step });
        }
        Ok(Tick { t, x_des, x: self.state.x, e_pos, e_vel, f_nu: sample.f_nu, f_n: sample.f_n, f_imp, f_ff, y_vib })
    }
}

/// Per-tick time series of one closed-loop run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentRecord {
    pub t: Vec<f64>,
    pub x_des: Vec<f64>,
    pub x: Vec<f64>,
    pub e_pos: Vec<f64>,
    pub e_vel: Vec<f64>,
    pub f_nu: Vec<f64>,
    pub f_n: Vec<f64>,
    pub f_imp: Vec<f64>,
    pub f_ff: Vec<f64>,
    pub y_vib: Vec<f64>,
    /// Wall time of each tick in nanoseconds.
    pub step_ns: Vec<u64>,
    /// Suppression rate over the scored window; `None` when the vibration
    /// has no power there.
    pub sr: Option<f64>,
}

pub const RECORD_COLUMNS: [&str; 11] =
    ["t", "x_des", "x", "e_pos", "e_vel", "f_nu", "f_n", "f_imp", "f_ff", "y_vib", "step_ns"];

impl ExperimentRecord {
    fn with_capacity(n: usize) -> Self {
        let v = || Vec::with_capacity(n);
        Self {
            t: v(),
            x_des: v(),
            x: v(),
            e_pos: v(),
            e_vel: v(),
            f_nu: v(),
            f_n: v(),
            f_imp: v(),
            f_ff: v(),
            y_vib: v(),
            step_ns: Vec::with_capacity(n),
            sr: None,
        }
    }

    fn push(&mut self, tick: &Tick, ns: u64) {
        self.t.push(tick.t);
        self.x_des.push(tick.x_des);
        self.x.push(tick.x);
        self.e_pos.push(tick.e_pos);
        self.e_vel.push(tick.e_vel);
        self.f_nu.push(tick.f_nu);
        self.f_n.push(tick.f_n);
        self.f_imp.push(tick.f_imp);
        self.f_ff.push(tick.f_ff);
        self.y_vib.push(tick.y_vib);
        self.step_ns.push(ns);
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Suppression rate over the ticks from `start` on.
    pub fn suppression_rate_from(&self, start: usize) -> Option<f64> {
        let start = start.min(self.len());
        metrics::suppression_rate(&self.f_nu[start..], &self.f_ff[start..]).ok().flatten()
    }

    /// Writes the record with a header row, columns in [`RECORD_COLUMNS`] order.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), SimError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(RECORD_COLUMNS)?;
        for i in 0..self.len() {
            let row = [
                self.t[i],
                self.x_des[i],
                self.x[i],
                self.e_pos[i],
                self.e_vel[i],
                self.f_nu[i],
                self.f_n[i],
                self.f_imp[i],
                self.f_ff[i],
                self.y_vib[i],
            ];
            let mut fields: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            fields.push(self.step_ns[i].to_string());
            w.write_record(&fields)?;
        }
        w.flush().map_err(|e| SimError::Csv(e.into()))?;
        Ok(())
    }
}

/// Runs a full closed-loop simulation and records every tick.
pub fn run_closed_loop(spec: &MotionSpec, filter: FilterConfig, config: &SimConfig) -> Result<ExperimentRecord, SimError> {
    let mut sim = Simulation::new(spec, filter, *config)?;
    let n = config.ticks();
    let mut record = ExperimentRecord::with_capacity(n);
    for _ in 0..n {
        let start = Instant::now();
        let tick = sim.tick()?;
        let ns = start.elapsed().as_nanos() as u64;
        record.push(&tick, ns);
    }
    record.sr = record.suppression_rate_from(config.skip_ticks());
    Ok(record)
}

/// Suppression rate of a run without keeping the time series.
pub fn simulate_sr(spec: &MotionSpec, filter: FilterConfig, config: &SimConfig) -> Result<Option<f64>, SimError> {
    let mut sim = Simulation::new(spec, filter, *config)?;
    let skip = config.skip_ticks();
    let (mut residual, mut power) = (0.0, 0.0);
    for i in 0..config.ticks() {
        let tick = sim.tick()?;
        if i >= skip {
            let d = tick.f_nu - tick.f_ff;
            residual += d * d;
            power += tick.f_nu * tick.f_nu;
        }
    }
    Ok(metrics::sr_from_sums(residual, power))
}
