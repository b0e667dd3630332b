//! Scoring: suppression rate, band-passed error power, magnitude spectra and
//! update-step timing.

mod butterworth;
mod timing;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use thiserror::Error;

pub use butterworth::{filtfilt, BandPass, Biquad};
pub use timing::{time_step_sizes, TimingStats};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("series is too short: {len} samples, need more than {min}")]
    TooShort { len: usize, min: usize },
    #[error("band [{low}, {high}] Hz is invalid for sample rate {fs} Hz")]
    InvalidBand { low: f64, high: f64, fs: f64 },
}

/// `SR = 1 − Σ(f_ν − f_ff)² / Σ f_ν²`.
///
/// Returns `Ok(None)` when the vibration has zero power, so "not
/// applicable" stays distinct from a rate of zero.
pub fn suppression_rate(f_nu: &[f64], f_ff: &[f64]) -> Result<Option<f64>, MetricsError> {
    if f_nu.len() != f_ff.len() {
        return Err(MetricsError::LengthMismatch(f_nu.len(), f_ff.len()));
    }
    if f_nu.is_empty() {
        return Err(MetricsError::TooShort { len: 0, min: 0 });
    }
    let (residual, power) = f_nu.iter().zip(f_ff).fold((0.0, 0.0), |(r, p), (v, f)| {
        let d = v - f;
        (r + d * d, p + v * v)
    });
    Ok(sr_from_sums(residual, power))
}

pub(crate) fn sr_from_sums(residual: f64, power: f64) -> Option<f64> {
    (power > 0.0).then(|| 1.0 - residual / power)
}

/// Mean square of `series` after zero-phase band-passing to `[low, high]`.
///
/// The filter is a 4th-order Butterworth band-pass (four second-order
/// sections) run forward and backward.
pub fn bandpass_mse(series: &[f64], fs: f64, low: f64, high: f64) -> Result<f64, MetricsError> {
    let filter = BandPass::butterworth(4, low, high, fs)?;
    let filtered = filter.filtfilt(series)?;
    Ok(filtered.iter().map(|v| v * v).sum::<f64>() / filtered.len() as f64)
}

/// Single-sided amplitude spectrum. A sinusoid of amplitude `A` shows up
/// with magnitude `A` at its bin; the DC and Nyquist bins are not doubled.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub freq: Vec<f64>,
    pub magnitude: Vec<f64>,
}

impl Spectrum {
    /// `(frequency, magnitude)` of the largest bin.
    pub fn peak(&self) -> (f64, f64) {
        self.peak_in(f64::NEG_INFINITY, f64::INFINITY)
    }

    /// Largest bin with frequency in `[low, high]`.
    pub fn peak_in(&self, low: f64, high: f64) -> (f64, f64) {
        self.freq
            .iter()
            .zip(&self.magnitude)
            .filter(|(f, _)| **f >= low && **f <= high)
            .fold((f64::NAN, f64::NEG_INFINITY), |best, (&f, &m)| if m > best.1 { (f, m) } else { best })
    }

    /// Magnitude of the bin closest to `freq`.
    pub fn at(&self, freq: f64) -> f64 {
        let step = self.freq.get(1).copied().unwrap_or(1.0);
        let idx = ((freq / step).round() as usize).min(self.magnitude.len() - 1);
        self.magnitude[idx]
    }

    pub fn resolution(&self) -> f64 {
        self.freq.get(1).copied().unwrap_or(0.0)
    }
}

/// Full complex DFT of a real series.
pub fn dft(series: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = series.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    buf
}

pub fn dft_magnitude(series: &[f64], fs: f64) -> Result<Spectrum, MetricsError> {
    let n = series.len();
    if n < 2 {
        return Err(MetricsError::TooShort { len: n, min: 1 });
    }
    let full = dft(series);
    let half = n / 2;
    let nf = n as f64;
    let (freq, magnitude) = (0..=half)
        .map(|k| {
            let edge = k == 0 || (n % 2 == 0 && k == half);
            let scale = if edge { 1.0 } else { 2.0 };
            (k as f64 * fs / nf, scale * full[k].norm() / nf)
        })
        .unzip();
    Ok(Spectrum { freq, magnitude })
}

/// `Σ x²` recovered from a [`Spectrum`] of an `n`-sample series.
pub fn spectrum_energy(spectrum: &Spectrum, n: usize) -> f64 {
    let last = spectrum.magnitude.len() - 1;
    let per_sample: f64 = spectrum
        .magnitude
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let edge = k == 0 || (n % 2 == 0 && k == last);
            if edge {
                m * m
            } else {
                m * m / 2.0
            }
        })
        .sum();
    per_sample * n as f64
}

#[cfg(test)]
fn sine(freq: f64, fs: f64, n: usize) -> Vec<f64> {
    use std::f64::consts::PI;
    (0..n).map(|i| (2.0 * PI * freq * i as f64 / fs).sin()).collect()
}
