//! Butterworth band-pass design as cascaded second-order sections, with
//! forward-backward (zero-phase) filtering.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;

use super::MetricsError;

/// Second-order section `(b0 + b1 z⁻¹ + b2 z⁻²) / (1 + a1 z⁻¹ + a2 z⁻²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    /// Transposed direct-form II state reached after a long unit-step input.
    fn step_state(&self) -> [f64; 2] {
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        let dc = (b0 + b1 + b2) / (1.0 + a1 + a2);
        let z2 = b2 - a2 * dc;
        let z1 = b1 - a1 * dc + z2;
        [z1, z2]
    }

    fn dc_gain(&self) -> f64 {
        self.b.iter().sum::<f64>() / (1.0 + self.a[0] + self.a[1])
    }

    fn run(&self, data: &mut [f64], mut z: [f64; 2]) {
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        for x in data.iter_mut() {
            let input = *x;
            let y = b0 * input + z[0];
            z[0] = b1 * input - a1 * y + z[1];
            z[1] = b2 * input - a2 * y;
            *x = y;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandPass {
    sections: Vec<Biquad>,
}

impl BandPass {
    /// Digital Butterworth band-pass from an `order`-pole low-pass prototype
    /// (`order` sections, `2·order` poles), bilinear transform with
    /// pre-warped edges. `order` must be even.
    pub fn butterworth(order: usize, low: f64, high: f64, fs: f64) -> Result<Self, MetricsError> {
        let nyquist = fs / 2.0;
        if !(order > 0 && order % 2 == 0 && low > 0.0 && low < high && high < nyquist) {
            return Err(MetricsError::InvalidBand { low, high, fs });
        }
        let warp = |f: f64| 2.0 * fs * (PI * f / fs).tan();
        let (w1, w2) = (warp(low), warp(high));
        let w0_sq = w1 * w2;
        let bw = w2 - w1;
        let two_fs = Complex64::new(2.0 * fs, 0.0);

        let mut analog_poles = Vec::with_capacity(2 * order);
        for k in 0..order {
            let theta = PI * (2 * k + order + 1) as f64 / (2 * order) as f64;
            let lp = Complex64::from_polar(1.0, theta);
            let scaled = lp * bw;
            let root = (scaled * scaled - 4.0 * w0_sq).sqrt();
            analog_poles.push((scaled + root) / 2.0);
            analog_poles.push((scaled - root) / 2.0);
        }

        // order zeros at s = 0 map to z = 1, the remaining order zeros at
        // infinity map to z = −1.
        let mut gain = Complex64::new(bw.powi(order as i32), 0.0) * two_fs.powi(order as i32);
        for p in &analog_poles {
            gain /= two_fs - p;
        }
        let gain = gain.re;

        let sections: Vec<Biquad> = analog_poles
            .iter()
            .map(|p| (two_fs + p) / (two_fs - p))
            .filter(|z| z.im > 0.0)
            .enumerate()
            .map(|(i, z)| {
                let g = if i == 0 { gain } else { 1.0 };
                Biquad { b: [g, 0.0, -g], a: [-2.0 * z.re, z.norm_sqr()] }
            })
            .collect();
        debug_assert_eq!(sections.len(), order);
        Ok(Self { sections })
    }

    pub fn sections(&self) -> &[Biquad] {
        &self.sections
    }

    /// Number of samples mirrored at each end before filtering: three times
    /// the filter order.
    pub fn pad_len(&self) -> usize {
        3 * 2 * self.sections.len()
    }

    /// Causal single pass with states initialised for a constant input equal
    /// to the first sample.
    pub fn filter(&self, data: &mut [f64]) {
        let Some(&first) = data.first() else { return };
        let mut level = first;
        for s in &self.sections {
            let [z1, z2] = s.step_state();
            s.run(data, [z1 * level, z2 * level]);
            level *= s.dc_gain();
        }
    }

    pub fn filtfilt(&self, series: &[f64]) -> Result<Vec<f64>, MetricsError> {
        filtfilt(self, series)
    }

    /// Complex frequency response at `freq` Hz.
    pub fn response(&self, freq: f64, fs: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -2.0 * PI * freq / fs);
        let z2 = z1 * z1;
        self.sections.iter().fold(Complex64::new(1.0, 0.0), |acc, s| {
            acc * (s.b[0] + z1 * s.b[1] + z2 * s.b[2]) / (1.0 + z1 * s.a[0] + z2 * s.a[1])
        })
    }
}

/// Zero-phase filtering: odd reflection padding, forward pass, backward pass.
pub fn filtfilt(filter: &BandPass, series: &[f64]) -> Result<Vec<f64>, MetricsError> {
    let pad = filter.pad_len();
    let n = series.len();
    if n <= pad {
        return Err(MetricsError::TooShort { len: n, min: pad });
    }
    let (first, last) = (series[0], series[n - 1]);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * first - series[i]));
    ext.extend_from_slice(series);
    ext.extend((1..=pad).map(|i| 2.0 * last - series[n - 1 - i]));

    filter.filter(&mut ext);
    ext.reverse();
    filter.filter(&mut ext);
    ext.reverse();
    Ok(ext[pad..pad + n].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_gain_at_geometric_center() {
        let bp = BandPass::butterworth(4, 3.0, 100.0, 1000.0).unwrap();
        // Pre-warped centre frequency.
        let w0 = ((PI * 3.0 / 1000.0).tan() * (PI * 100.0 / 1000.0).tan()).sqrt();
        let center = w0.atan() * 1000.0 / PI;
        assert!((bp.response(center, 1000.0).norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn half_power_at_edges() {
        let bp = BandPass::butterworth(4, 3.0, 100.0, 1000.0).unwrap();
        for edge in [3.0, 100.0] {
            let g = bp.response(edge, 1000.0).norm();
            assert!((g - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-9, "{edge}: {g}");
        }
    }

    #[test]
    fn sections_are_stable() {
        let bp = BandPass::butterworth(4, 3.0, 100.0, 1000.0).unwrap();
        for s in bp.sections() {
            // |pole|² = a2 < 1 for a complex pair.
            assert!(s.a[1] < 1.0 && s.a[1] > 0.0);
        }
    }

    #[test]
    fn short_series_rejected() {
        let bp = BandPass::butterworth(4, 3.0, 100.0, 1000.0).unwrap();
        assert!(bp.filtfilt(&[1.0; 10]).is_err());
    }
}
