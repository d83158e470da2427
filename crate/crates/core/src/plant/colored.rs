//! Coloured Gaussian noise generators.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{AncError, Result};

/// Spectral shape of a broadband noise process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseShape {
    White,
    /// `1/f` between the two corners, flat below `corner_lo_hz`, and an extra
    /// `rolloff_order` one-pole low-pass sections at `corner_hi_hz`.
    Pink {
        corner_lo_hz: f64,
        corner_hi_hz: f64,
        rolloff_order: u32,
    },
}

impl NoiseShape {
    pub fn validate(&self, sample_rate_hz: f64) -> Result<()> {
        if let NoiseShape::Pink {
            corner_lo_hz,
            corner_hi_hz,
            rolloff_order,
        } = *self
        {
            if !(corner_lo_hz > 0.0 && corner_lo_hz < corner_hi_hz && corner_hi_hz < sample_rate_hz / 2.0) {
                return Err(AncError::config(format!(
                    "pink corners must satisfy 0 < {corner_lo_hz} < {corner_hi_hz} < Nyquist"
                )));
            }
            if rolloff_order > 8 {
                return Err(AncError::config("rolloff_order above 8 is not supported"));
            }
        }
        Ok(())
    }
}

fn pole(corner_hz: f64, sample_rate_hz: f64) -> f64 {
    (-2.0 * PI * corner_hz / sample_rate_hz).exp()
}

/// Sum of squares of the impulse response of `1/(1 - a z^-1)` followed by
/// `order` sections of `(1-b)/(1 - b z^-1)`.
fn cascade_energy(a: f64, b: f64, order: usize) -> f64 {
    let mut states = vec![0.0; order + 1];
    let mut energy = 0.0;
    let mut input = 1.0;
    let slowest = a.max(if order > 0 { b } else { 0.0 });
    let min_len = (30.0 / (1.0 - slowest).max(1e-12)) as usize;
    let mut n = 0usize;
    loop {
        states[0] = a * states[0] + input;
        input = 0.0;
        for k in 1..=order {
            states[k] = b * states[k] + (1.0 - b) * states[k - 1];
        }
        let y = states[order];
        energy += y * y;
        n += 1;
        if n > min_len && y * y < energy * 1e-16 {
            break;
        }
    }
    energy
}

/// Unit-variance-scaled Gaussian process with a [`NoiseShape`] spectrum.
#[derive(Debug, Clone)]
pub struct ShapedNoise {
    sigma: f64,
    rng: ChaCha8Rng,
    poles: Vec<f64>,
    innovation: Vec<f64>,
    sections: Vec<f64>,
    rolloff_pole: f64,
    rolloff: Vec<f64>,
    scale: f64,
}

impl ShapedNoise {
    pub fn new(shape: NoiseShape, sigma: f64, sample_rate_hz: f64, mut rng: ChaCha8Rng) -> Result<Self> {
        shape.validate(sample_rate_hz)?;
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(AncError::config(format!("noise sigma must be non-negative, got {sigma}")));
        }
        match shape {
            NoiseShape::White => Ok(Self {
                sigma,
                rng,
                poles: Vec::new(),
                innovation: Vec::new(),
                sections: Vec::new(),
                rolloff_pole: 0.0,
                rolloff: Vec::new(),
                scale: 1.0,
            }),
            NoiseShape::Pink {
                corner_lo_hz,
                corner_hi_hz,
                rolloff_order,
            } => {
                // Equal-variance Lorentzians spaced two per decade sum to 1/f.
                let decades = (corner_hi_hz / corner_lo_hz).log10();
                let count = ((2.0 * decades).ceil() as usize + 1).max(2);
                let poles: Vec<f64> = (0..count)
                    .map(|k| {
                        let f = corner_lo_hz * (corner_hi_hz / corner_lo_hz).powf(k as f64 / (count - 1) as f64);
                        pole(f, sample_rate_hz)
                    })
                    .collect();
                let innovation: Vec<f64> = poles.iter().map(|a| (1.0 - a * a).sqrt()).collect();
                let order = rolloff_order as usize;
                let b = pole(corner_hi_hz, sample_rate_hz);
                let variance: f64 = poles
                    .iter()
                    .zip(&innovation)
                    .map(|(a, g)| g * g * cascade_energy(*a, b, order))
                    .sum();
                // Start every section in its stationary distribution.
                let sections: Vec<f64> = (0..count).map(|_| rng.sample(StandardNormal)).collect();
                let start: f64 = sections.iter().sum();
                Ok(Self {
                    sigma,
                    rng,
                    poles,
                    innovation,
                    sections,
                    rolloff_pole: b,
                    rolloff: vec![start; order],
                    scale: 1.0 / variance.sqrt(),
                })
            }
        }
    }

    pub fn next_sample(&mut self) -> f64 {
        if self.poles.is_empty() {
            let z: f64 = self.rng.sample(StandardNormal);
            return self.sigma * z;
        }
        let mut sum = 0.0;
        for ((s, a), g) in self.sections.iter_mut().zip(&self.poles).zip(&self.innovation) {
            let z: f64 = self.rng.sample(StandardNormal);
            *s = a * *s + g * z;
            sum += *s;
        }
        let b = self.rolloff_pole;
        let mut v = sum;
        for r in self.rolloff.iter_mut() {
            *r = b * *r + (1.0 - b) * v;
            v = *r;
        }
        self.sigma * self.scale * v
    }
}

/// Random-phase narrowband process: a carrier whose complex envelope is a
/// first-order Gauss-Markov process, giving a Lorentzian line of half-width
/// `bandwidth_hz`. Mean power is `amplitude² / 2`, as for a sine.
#[derive(Debug, Clone)]
pub struct NarrowbandNoise {
    amplitude: f64,
    omega: f64,
    rho: f64,
    innovation: f64,
    envelope: (f64, f64),
    rng: ChaCha8Rng,
    n: u64,
}

impl NarrowbandNoise {
    pub fn new(frequency_hz: f64, bandwidth_hz: f64, amplitude: f64, sample_rate_hz: f64, mut rng: ChaCha8Rng) -> Result<Self> {
        if !(bandwidth_hz > 0.0 && bandwidth_hz.is_finite()) {
            return Err(AncError::config("narrowband bandwidth must be positive"));
        }
        let rho = pole(bandwidth_hz, sample_rate_hz);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Ok(Self {
            amplitude,
            omega: 2.0 * PI * frequency_hz / sample_rate_hz,
            rho,
            innovation: (1.0 - rho * rho).sqrt() * h,
            envelope: (re * h, im * h),
            rng,
            n: 0,
        })
    }

    pub fn next_sample(&mut self) -> f64 {
        let zr: f64 = self.rng.sample(StandardNormal);
        let zi: f64 = self.rng.sample(StandardNormal);
        self.envelope.0 = self.rho * self.envelope.0 + self.innovation * zr;
        self.envelope.1 = self.rho * self.envelope.1 + self.innovation * zi;
        let phase = self.omega * self.n as f64;
        self.n += 1;
        // E|z|² = 1, so Re{z e^{jωn}} has power 1/2.
        self.amplitude * (self.envelope.0 * phase.cos() - self.envelope.1 * phase.sin())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use crate::signal::{welch_psd, SampleBuffer, WelchParams};

    #[test]
    fn pink_variance_matches_sigma() {
        let shape = NoiseShape::Pink {
            corner_lo_hz: 5.0,
            corner_hi_hz: 500.0,
            rolloff_order: 2,
        };
        let mut g = ShapedNoise::new(shape, 3.0, 5000.0, stream_rng(4, 0)).unwrap();
        let n = 400_000;
        let v: f64 = (0..n).map(|_| g.next_sample().powi(2)).sum::<f64>() / n as f64;
        assert!((v.sqrt() / 3.0 - 1.0).abs() < 0.05, "{}", v.sqrt());
    }

    #[test]
    fn white_shape_is_scaled_normal() {
        let mut g = ShapedNoise::new(NoiseShape::White, 2.0, 5000.0, stream_rng(1, 0)).unwrap();
        let n = 100_000;
        let v: f64 = (0..n).map(|_| g.next_sample().powi(2)).sum::<f64>() / n as f64;
        assert!((v / 4.0 - 1.0).abs() < 0.02);
    }

    #[test]
    fn cascade_energy_of_plain_ar1() {
        let a: f64 = 0.9;
        assert!((cascade_energy(a, 0.0, 0) - 1.0 / (1.0 - a * a)).abs() < 1e-9);
    }

    #[test]
    fn narrowband_power_and_peak() {
        let fs = 5000.0;
        let mut g = NarrowbandNoise::new(50.0, 0.5, 10.0, fs, stream_rng(2, 0)).unwrap();
        let x: Vec<f64> = (0..600_000).map(|_| g.next_sample()).collect();
        let p = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
        assert!((p / 50.0 - 1.0).abs() < 0.15, "{p}");
        let psd = welch_psd(&SampleBuffer::new(x, fs).unwrap(), &WelchParams::default()).unwrap();
        let peak = psd
            .iter()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap()
            .0;
        assert!((peak - 50.0).abs() < 1.3);
    }

    #[test]
    fn rejects_bad_corners() {
        let s = NoiseShape::Pink {
            corner_lo_hz: 10.0,
            corner_hi_hz: 1.0,
            rolloff_order: 0,
        };
        assert!(ShapedNoise::new(s, 1.0, 5000.0, stream_rng(0, 0)).is_err());
    }
}
