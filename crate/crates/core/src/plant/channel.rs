use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::Quantizer;
use crate::adaptive::ResponsePlant;
use crate::error::{AncError, Result};
use crate::signal::{DelayLine, FirFilter};

/// Hardware chain from controller output to error-sensor reading on one axis:
/// DAC, current source and coil, sensor, anti-alias filter and ADC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    /// Volts per DAC unit.
    pub dac_gain: f64,
    /// Drives are clipped to `±dac_range` units.
    pub dac_range: f64,
    /// Current source and coil response, nT per volt.
    pub actuator_fir: Vec<f64>,
    pub aa_taps: usize,
    pub aa_cutoff_hz: f64,
    pub extra_delay_samples: usize,
    /// Error-sensor noise standard deviation, nT.
    pub sensor_noise_nt: f64,
    pub adc_bits: u32,
    pub adc_range_nt: f64,
    pub quantize: bool,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            dac_gain: 1.0,
            dac_range: 1000.0,
            actuator_fir: vec![70.0, 30.0],
            aa_taps: 63,
            aa_cutoff_hz: 1000.0,
            extra_delay_samples: 5,
            sensor_noise_nt: 0.01,
            adc_bits: 16,
            adc_range_nt: 5000.0,
            quantize: true,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self, sample_rate_hz: f64) -> Result<()> {
        if !(self.dac_gain.is_finite() && self.dac_gain != 0.0) {
            return Err(AncError::config("dac_gain must be finite and non-zero"));
        }
        if !(self.dac_range > 0.0 && self.dac_range.is_finite()) {
            return Err(AncError::config("dac_range must be positive"));
        }
        if self.sensor_noise_nt < 0.0 || !self.sensor_noise_nt.is_finite() {
            return Err(AncError::config("sensor_noise_nt must be non-negative"));
        }
        FirFilter::new(self.actuator_fir.clone()).map_err(|e| AncError::config(format!("actuator_fir: {e}")))?;
        FirFilter::lowpass(self.aa_taps, self.aa_cutoff_hz, sample_rate_hz)
            .map_err(|e| AncError::config(format!("anti-alias filter: {e}")))?;
        Quantizer::new(self.adc_bits, self.adc_range_nt).map_err(|e| AncError::config(e.to_string()))?;
        Ok(())
    }

    pub fn anti_alias(&self, sample_rate_hz: f64) -> Result<FirFilter> {
        FirFilter::lowpass(self.aa_taps, self.aa_cutoff_hz, sample_rate_hz)
    }

    /// Composite drive-to-field impulse response (nT per DAC unit).
    pub fn impulse_response(&self, sample_rate_hz: f64) -> Result<FirFilter> {
        let actuator = FirFilter::new(self.actuator_fir.clone())?.scaled(self.dac_gain);
        Ok(FirFilter::delay(self.extra_delay_samples)
            .then(&actuator)
            .then(&self.anti_alias(sample_rate_hz)?))
    }

    /// Nominal group delay in samples: `(L-1)/2` for the symmetric anti-alias
    /// stage, the centroid of the actuator response, and the extra delay.
    pub fn group_delay_samples(&self) -> f64 {
        let sum: f64 = self.actuator_fir.iter().sum();
        let centroid = if sum != 0.0 {
            self.actuator_fir
                .iter()
                .enumerate()
                .map(|(i, c)| i as f64 * c)
                .sum::<f64>()
                / sum
        } else {
            0.0
        };
        (self.aa_taps as f64 - 1.0) / 2.0 + centroid + self.extra_delay_samples as f64
    }

    pub fn quantizer(&self) -> Result<Option<Quantizer>> {
        if self.quantize {
            Ok(Some(Quantizer::new(self.adc_bits, self.adc_range_nt)?))
        } else {
            Ok(None)
        }
    }

    /// One-sided noise density at the sensor output, nT²/Hz.
    pub fn noise_floor_psd(&self, sample_rate_hz: f64) -> Result<f64> {
        let q = self.quantizer()?.map_or(0.0, |q| q.noise_power());
        Ok(2.0 * (self.sensor_noise_nt.powi(2) + q) / sample_rate_hz)
    }
}

/// Running state of one secondary-path channel.
#[derive(Debug, Clone)]
pub struct SecondaryPathChannel {
    response: Vec<f64>,
    history: DelayLine,
    dac_range: f64,
    noise_sigma: f64,
    rng: ChaCha8Rng,
    quantizer: Option<Quantizer>,
    saturated: bool,
}

impl SecondaryPathChannel {
    pub fn new(config: &ChannelConfig, sample_rate_hz: f64, rng: ChaCha8Rng) -> Result<Self> {
        config.validate(sample_rate_hz)?;
        let response = config.impulse_response(sample_rate_hz)?.coefficients().to_vec();
        Ok(Self {
            history: DelayLine::new(response.len()),
            response,
            dac_range: config.dac_range,
            noise_sigma: config.sensor_noise_nt,
            rng,
            quantizer: config.quantizer()?,
            saturated: false,
        })
    }

    pub fn response(&self) -> &[f64] {
        &self.response
    }

    pub fn quantizer(&self) -> Option<&Quantizer> {
        self.quantizer.as_ref()
    }

    /// True once any drive or reading has been clipped.
    pub fn saturated(&self) -> bool {
        self.saturated
    }

    pub fn clear_saturation(&mut self) {
        self.saturated = false;
    }

    fn clip(&mut self, drive: f64) -> f64 {
        if drive.abs() > self.dac_range {
            self.saturated = true;
            drive.signum() * self.dac_range
        } else {
            drive
        }
    }

    /// Field the channel produces at the current tick from past drives only,
    /// i.e. before this tick's drive is applied.
    pub fn pending_field(&self) -> f64 {
        crate::signal::dot(&self.response[1..], self.history.as_slice())
    }

    /// Apply this tick's drive and advance one sample.
    pub fn apply(&mut self, drive: f64) {
        let d = self.clip(drive);
        self.history.push(d);
    }

    /// Apply `drive` and return the noiseless field including it.
    pub fn field_step(&mut self, drive: f64) -> f64 {
        self.apply(drive);
        crate::signal::dot(&self.response, self.history.as_slice())
    }

    /// Add sensor noise to a field value and pass it through the ADC.
    pub fn read(&mut self, field_nt: f64) -> f64 {
        let noisy = if self.noise_sigma > 0.0 {
            let z: f64 = self.rng.sample(StandardNormal);
            field_nt + self.noise_sigma * z
        } else {
            field_nt
        };
        match &self.quantizer {
            Some(q) => {
                let (v, sat) = q.quantize(noisy);
                self.saturated |= sat;
                v
            }
            None => noisy,
        }
    }

    /// Drive in, error-sensor reading out, for an isolated channel.
    pub fn plant_step(&mut self, drive: f64) -> f64 {
        let f = self.field_step(drive);
        self.read(f)
    }

    pub fn reset(&mut self) {
        self.history.clear();
        self.saturated = false;
    }
}

impl ResponsePlant for SecondaryPathChannel {
    fn respond(&mut self, drive: f64) -> f64 {
        self.plant_step(drive)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    fn quiet() -> ChannelConfig {
        ChannelConfig {
            sensor_noise_nt: 0.0,
            quantize: false,
            ..ChannelConfig::default()
        }
    }

    #[test]
    fn zero_drive_is_silent() {
        let mut c = SecondaryPathChannel::new(&ChannelConfig { sensor_noise_nt: 0.0, ..Default::default() }, 5000.0, stream_rng(0, 0)).unwrap();
        for _ in 0..500 {
            assert_eq!(c.plant_step(0.0), 0.0);
        }
    }

    #[test]
    fn impulse_gives_composite_response() {
        let cfg = quiet();
        let mut c = SecondaryPathChannel::new(&cfg, 5000.0, stream_rng(0, 0)).unwrap();
        // Polynomial product of the configured stages, written out here.
        let aa = FirFilter::lowpass(63, 1000.0, 5000.0).unwrap();
        let mut truth = vec![0.0; 5 + 2 + 63 - 1];
        for (i, a) in [70.0, 30.0].iter().enumerate() {
            for (j, h) in aa.coefficients().iter().enumerate() {
                truth[5 + i + j] += a * h;
            }
        }
        let out: Vec<f64> = (0..truth.len() + 10)
            .map(|n| c.plant_step(if n == 0 { 1.0 } else { 0.0 }))
            .collect();
        for (n, y) in out.iter().enumerate() {
            let t = truth.get(n).copied().unwrap_or(0.0);
            assert!((y - t).abs() < 1e-12, "tap {n}: {y} vs {t}");
        }
        assert_eq!(c.response().len(), 69);
    }

    #[test]
    fn pending_field_excludes_current_drive() {
        let mut c = SecondaryPathChannel::new(&quiet(), 5000.0, stream_rng(0, 0)).unwrap();
        let mut d = c.clone();
        for n in 0..200 {
            let drive = ((n * 7) % 11) as f64 - 5.0;
            let before = c.pending_field();
            c.apply(drive);
            let direct = d.field_step(drive);
            // Extra delay makes the first taps zero.
            assert!((before - direct).abs() < 1e-9);
        }
    }

    #[test]
    fn dac_clips_and_flags() {
        let mut c = SecondaryPathChannel::new(&quiet(), 5000.0, stream_rng(0, 0)).unwrap();
        c.plant_step(5000.0);
        assert!(c.saturated());
        c.clear_saturation();
        c.plant_step(999.0);
        assert!(!c.saturated());
    }

    #[test]
    fn group_delay_of_default_channel() {
        let g = ChannelConfig::default().group_delay_samples();
        assert!((g - 36.3).abs() < 1e-12);
    }
}
