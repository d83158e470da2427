use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{DelayLine, FirFilter, SampleBuffer};
use crate::error::{AncError, Result};
use crate::rng::stream_rng;

const BAND_LIMIT_TAPS: usize = 101;

/// Seeded Gaussian white-noise generator description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WhiteNoiseSource {
    pub sigma: f64,
    pub seed: u64,
    #[serde(default)]
    pub band_limit_hz: Option<f64>,
}

impl WhiteNoiseSource {
    pub fn new(sigma: f64, seed: u64) -> Self {
        Self {
            sigma,
            seed,
            band_limit_hz: None,
        }
    }

    pub fn band_limited(mut self, cutoff_hz: f64) -> Self {
        self.band_limit_hz = Some(cutoff_hz);
        self
    }

    /// Sample-by-sample generator at the given rate.
    pub fn stream(&self, sample_rate_hz: f64) -> Result<NoiseStream> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(AncError::invalid(format!(
                "noise sigma must be positive, got {}",
                self.sigma
            )));
        }
        let shaper = match self.band_limit_hz {
            None => None,
            Some(fc) => {
                let lp = FirFilter::lowpass(BAND_LIMIT_TAPS, fc, sample_rate_hz)?;
                // Unit energy keeps the output variance at sigma^2.
                let norm = lp.energy().sqrt();
                let taps = lp.scaled(1.0 / norm);
                let mut line = DelayLine::new(taps.taps());
                let mut rng = stream_rng(self.seed, 0);
                // Prime the line so the first output is already stationary.
                for _ in 0..taps.taps() - 1 {
                    line.push(StandardNormal.sample(&mut rng));
                }
                return Ok(NoiseStream {
                    sigma: self.sigma,
                    rng,
                    shaper: Some((taps, line)),
                });
            }
        };
        Ok(NoiseStream {
            sigma: self.sigma,
            rng: stream_rng(self.seed, 0),
            shaper,
        })
    }
}

#[derive(Debug, Clone)]
pub struct NoiseStream {
    sigma: f64,
    rng: ChaCha8Rng,
    shaper: Option<(FirFilter, DelayLine)>,
}

impl NoiseStream {
    pub fn next_sample(&mut self) -> f64 {
        let g: f64 = StandardNormal.sample(&mut self.rng);
        match &mut self.shaper {
            None => self.sigma * g,
            Some((taps, line)) => {
                line.push(g);
                self.sigma * line.dot(taps.coefficients())
            }
        }
    }
}

impl Iterator for NoiseStream {
    type Item = f64;
    fn next(&mut self) -> Option<f64> {
        Some(self.next_sample())
    }
}

pub fn generate_white_noise(
    source: &WhiteNoiseSource,
    n_samples: usize,
    sample_rate_hz: f64,
) -> Result<SampleBuffer> {
    if n_samples == 0 {
        return Err(AncError::invalid("white noise needs at least one sample"));
    }
    let stream = source.stream(sample_rate_hz)?;
    SampleBuffer::new(stream.take(n_samples).collect(), sample_rate_hz)
}
