//! Procedural voluntary trajectories and drifting multi-frequency vibration.
//!
//! A motion is a sum of sinusoids. The number of components, their
//! frequencies, phases and amplitudes are drawn from the laws in
//! [`SynthParams`]; component `k` (0-based) has amplitude mean
//! `ξ_total / b_N · (b_N − k)`. At `drift_start` every vibration component
//! crossfades linearly over `drift_duration` into a new component at
//! `ν' ~ N(ν, s_ν)` with the same amplitude and a fresh phase.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid synthesis parameter: {0}")]
    InvalidParams(String),
    #[error("motion already has a drift assigned")]
    AlreadyDrifted,
}

/// Frequency distribution of the sampled components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrequencyLaw {
    /// `ν ~ U(a_ν, b_ν)`
    Uniform,
    /// `ν ~ Exp(mean = (b_ν − a_ν)/5) + a_ν`, favouring low frequencies.
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthParams {
    pub a_nu: f64,
    pub b_nu: f64,
    pub a_n: usize,
    pub b_n: usize,
    pub xi_total: f64,
    /// Amplitude spread; each component uses `s_xi / N_ν` as its std-dev.
    pub s_xi: f64,
    /// Std-dev of the drifted frequency around the original one.
    pub s_nu: f64,
    pub a_phi: f64,
    pub b_phi: f64,
    pub frequency_law: FrequencyLaw,
}

impl SynthParams {
    /// 1–3 components in 6–10 Hz, total amplitude 0.6.
    pub fn vibration_default() -> Self {
        Self {
            a_nu: 6.0,
            b_nu: 10.0,
            a_n: 1,
            b_n: 3,
            xi_total: 0.6,
            s_xi: 0.05,
            s_nu: 0.5,
            a_phi: 0.0,
            b_phi: TAU,
            frequency_law: FrequencyLaw::Uniform,
        }
    }

    /// 7–10 components in 0.01–0.3 Hz, total amplitude 10.
    pub fn voluntary_default() -> Self {
        Self {
            a_nu: 0.01,
            b_nu: 0.3,
            a_n: 7,
            b_n: 10,
            xi_total: 10.0,
            s_xi: 0.3,
            s_nu: 0.0,
            a_phi: 0.0,
            b_phi: TAU,
            frequency_law: FrequencyLaw::Exponential,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |msg: &str| Err(SynthError::InvalidParams(msg.to_string()));
        if !(self.a_nu > 0.0 && self.a_nu < self.b_nu) {
            return bad("need 0 < a_nu < b_nu");
        }
        if self.a_n == 0 || self.a_n > self.b_n {
            return bad("need 1 <= a_n <= b_n");
        }
        if !(self.xi_total >= 0.0 && self.s_xi >= 0.0 && self.s_nu >= 0.0) {
            return bad("amplitudes and std-devs must be non-negative");
        }
        if !(self.a_phi >= 0.0 && self.a_phi < self.b_phi && self.b_phi <= TAU) {
            return bad("need 0 <= a_phi < b_phi <= 2π");
        }
        Ok(())
    }

    /// Mean amplitude of component `k` (0-based).
    pub fn amplitude_mean(&self, k: usize) -> f64 {
        self.xi_total / self.b_n as f64 * (self.b_n as f64 - k as f64)
    }
}

/// Drifted replacement of a vibration component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Drift {
    pub nu: f64,
    pub phi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SineComponent {
    pub nu: f64,
    pub phi: f64,
    pub xi: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<Drift>,
}

impl SineComponent {
    pub fn new(nu: f64, phi: f64, xi: f64) -> Self {
        Self { nu, phi, xi, drift: None }
    }

    fn value(&self, t: f64) -> f64 {
        self.xi * (TAU * self.nu * t + self.phi).sin()
    }

    fn derivative(&self, t: f64) -> f64 {
        self.xi * TAU * self.nu * (TAU * self.nu * t + self.phi).cos()
    }
}

/// Draws the components of one signal.
pub fn sample_spec<R: Rng + ?Sized>(p: &SynthParams, rng: &mut R) -> Vec<SineComponent> {
    let count = rng.gen_range(p.a_n..=p.b_n);
    let amp_std = p.s_xi / count as f64;
    let exp = Exp::new(5.0 / (p.b_nu - p.a_nu)).expect("positive rate");
    (0..count)
        .map(|k| {
            let nu = match p.frequency_law {
                FrequencyLaw::Uniform => rng.gen_range(p.a_nu..p.b_nu),
                FrequencyLaw::Exponential => p.a_nu + exp.sample(rng),
            };
            let phi = rng.gen_range(p.a_phi..p.b_phi);
            let xi = Normal::new(p.amplitude_mean(k), amp_std).expect("finite std-dev").sample(rng).max(0.0);
            SineComponent::new(nu, phi, xi)
        })
        .collect()
}

/// Generative description of one synthetic motion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionSpec {
    pub seed: u64,
    pub drift_start: f64,
    pub drift_duration: f64,
    /// Std-dev of the per-tick force noise.
    pub s_n: f64,
    pub voluntary: Vec<SineComponent>,
    pub vibration: Vec<SineComponent>,
}

/// Values of a motion at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionSample {
    pub x_r: f64,
    pub xdot_r: f64,
    pub f_nu: f64,
    pub f_n: f64,
}

impl MotionSpec {
    pub fn is_drifted(&self) -> bool {
        self.vibration.iter().any(|c| c.drift.is_some())
    }

    /// Crossfade position in `[0, 1]`: 0 before the drift, 1 after it.
    fn drift_progress(&self, t: f64) -> f64 {
        ((t - self.drift_start) / self.drift_duration).clamp(0.0, 1.0)
    }

    /// Voluntary reference position and its analytic derivative.
    pub fn reference(&self, t: f64) -> (f64, f64) {
        self.voluntary
            .iter()
            .fold((0.0, 0.0), |(x, v), c| (x + c.value(t), v + c.derivative(t)))
    }

    /// Deterministic vibration force.
    pub fn vibration_force(&self, t: f64) -> f64 {
        let s = self.drift_progress(t);
        self.vibration
            .iter()
            .map(|c| match c.drift {
                None => c.value(t),
                Some(d) => {
                    let new = SineComponent::new(d.nu, d.phi, c.xi);
                    (1.0 - s) * c.value(t) + s * new.value(t)
                }
            })
            .sum()
    }

    /// Reference, vibration and a fresh noise draw at `t`.
    pub fn evaluate<R: Rng + ?Sized>(&self, t: f64, rng: &mut R) -> MotionSample {
        let (x_r, xdot_r) = self.reference(t);
        MotionSample { x_r, xdot_r, f_nu: self.vibration_force(t), f_n: self.noise(rng) }
    }

    fn noise<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.s_n > 0.0 {
            self.s_n * rng.sample::<f64, _>(rand_distr::StandardNormal)
        } else {
            0.0
        }
    }

    /// Seeded generator for the force noise of this motion.
    pub fn noise_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(NOISE_STREAM);
        rng
    }
}

const NOISE_STREAM: u64 = 1;

/// Assigns drifted frequencies to every vibration component.
pub fn apply_drift<R: Rng + ?Sized>(
    spec: &MotionSpec,
    p: &SynthParams,
    rng: &mut R,
) -> Result<MotionSpec, SynthError> {
    if spec.is_drifted() {
        return Err(SynthError::AlreadyDrifted);
    }
    let mut out = spec.clone();
    for c in &mut out.vibration {
        let nu = if p.s_nu > 0.0 {
            Normal::new(c.nu, p.s_nu).expect("finite std-dev").sample(rng).abs()
        } else {
            c.nu
        };
        let phi = rng.gen_range(p.a_phi..p.b_phi);
        c.drift = Some(Drift { nu, phi });
    }
    Ok(out)
}

/// Everything needed to generate a motion from a seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionParams {
    pub vibration: SynthParams,
    pub voluntary: SynthParams,
    pub s_n: f64,
    pub drift_start: f64,
    pub drift_duration: f64,
}

impl Default for MotionParams {
    fn default() -> Self {
        Self {
            vibration: SynthParams::vibration_default(),
            voluntary: SynthParams::voluntary_default(),
            s_n: 0.001,
            drift_start: 12.25,
            drift_duration: 0.5,
        }
    }
}

impl MotionParams {
    pub fn validate(&self) -> Result<(), SynthError> {
        self.vibration.validate()?;
        self.voluntary.validate()?;
        if !(self.s_n >= 0.0 && self.drift_duration > 0.0 && self.drift_start >= 0.0) {
            return Err(SynthError::InvalidParams("need s_n >= 0, drift_duration > 0".into()));
        }
        Ok(())
    }

    /// Samples voluntary motion, vibration and drift from `seed`.
    pub fn generate(&self, seed: u64) -> Result<MotionSpec, SynthError> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let voluntary = sample_spec(&self.voluntary, &mut rng);
        let vibration = sample_spec(&self.vibration, &mut rng);
        let spec = MotionSpec {
            seed,
            drift_start: self.drift_start,
            drift_duration: self.drift_duration,
            s_n: self.s_n,
            voluntary,
            vibration,
        };
        apply_drift(&spec, &self.vibration, &mut rng)
    }
}
