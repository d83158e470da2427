use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{AmbientSample, ChannelConfig, EnvironmentConfig, NoiseEnvironment, Quantizer, SecondaryPathChannel};
use crate::error::{AncError, Result};
use crate::rng::{derive_seed, stream_rng};
use crate::signal::DelayLine;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceSensorConfig {
    pub noise_nt: f64,
    pub adc_bits: u32,
    pub adc_range_nt: f64,
    pub quantize: bool,
}

impl Default for ReferenceSensorConfig {
    fn default() -> Self {
        Self {
            noise_nt: 0.01,
            adc_bits: 24,
            adc_range_nt: 100_000.0,
            quantize: true,
        }
    }
}

impl ReferenceSensorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_nt >= 0.0 && self.noise_nt.is_finite()) {
            return Err(AncError::config("reference noise_nt must be non-negative"));
        }
        Quantizer::new(self.adc_bits, self.adc_range_nt).map_err(|e| AncError::config(e.to_string()))?;
        Ok(())
    }

    /// One-sided PSD of sensor noise plus quantisation noise, nT²/Hz.
    pub fn noise_floor_psd(&self, sample_rate_hz: f64) -> Result<f64> {
        let q = if self.quantize {
            Quantizer::new(self.adc_bits, self.adc_range_nt)?.noise_power()
        } else {
            0.0
        };
        Ok(2.0 * (self.noise_nt.powi(2) + q) / sample_rate_hz)
    }
}

/// One tick's worth of sensor data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorReading {
    pub error_sensor_nt: [f64; 3],
    pub reference_sensor_nt: [f64; 3],
    pub tick: u64,
}

#[derive(Debug, Clone)]
struct Pending {
    reading: SensorReading,
}

/// The full 3-axis test rig advanced in lockstep: environment, three
/// secondary-path channels, cross-talk, echo and both sensor triplets.
///
/// Each tick is [`Rig::observe`] (sensors read the field produced by past
/// drives) followed by [`Rig::actuate`] (this tick's drives are applied).
/// Channels must have at least one sample of extra delay so that the reading
/// of a tick never depends on the drive chosen from it.
#[derive(Debug, Clone)]
pub struct Rig {
    env: NoiseEnvironment,
    channels: [SecondaryPathChannel; 3],
    crosstalk: [[f64; 3]; 3],
    echo: f64,
    primary: Option<(Vec<f64>, [DelayLine; 3])>,
    ref_noise: f64,
    ref_quantizer: Option<Quantizer>,
    ref_rng: ChaCha8Rng,
    ref_saturated: bool,
    pending: Option<Pending>,
    tick: u64,
    sample_rate_hz: f64,
}

impl Rig {
    pub fn new(
        environment: &EnvironmentConfig,
        channels: &[ChannelConfig; 3],
        reference: &ReferenceSensorConfig,
        sample_rate_hz: f64,
        seed: u64,
    ) -> Result<Self> {
        reference.validate()?;
        for (i, c) in channels.iter().enumerate() {
            if c.extra_delay_samples == 0 {
                return Err(AncError::config(format!(
                    "channel {i}: the closed-loop rig needs extra_delay_samples >= 1"
                )));
            }
        }
        let env = NoiseEnvironment::new(environment, sample_rate_hz, derive_seed(seed, "environment"))?;
        let sensor_seed = derive_seed(seed, "error-sensor");
        let mk = |i: usize| SecondaryPathChannel::new(&channels[i], sample_rate_hz, stream_rng(sensor_seed, i as u64));
        let primary = environment.primary_path.as_ref().map(|p| {
            let n = p.len();
            (p.clone(), [DelayLine::new(n), DelayLine::new(n), DelayLine::new(n)])
        });
        Ok(Self {
            env,
            channels: [mk(0)?, mk(1)?, mk(2)?],
            crosstalk: environment.crosstalk,
            echo: environment.echo_coupling,
            primary,
            ref_noise: reference.noise_nt,
            ref_quantizer: if reference.quantize {
                Some(Quantizer::new(reference.adc_bits, reference.adc_range_nt)?)
            } else {
                None
            },
            ref_rng: stream_rng(derive_seed(seed, "reference-sensor"), 0),
            ref_saturated: false,
            pending: None,
            tick: 0,
            sample_rate_hz,
        })
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn channel(&self, axis: usize) -> &SecondaryPathChannel {
        &self.channels[axis]
    }

    /// Per-axis flag: any drive or error reading clipped so far.
    pub fn saturated(&self) -> [bool; 3] {
        [0, 1, 2].map(|i| self.channels[i].saturated())
    }

    pub fn reference_saturated(&self) -> bool {
        self.ref_saturated
    }

    pub fn clear_saturation(&mut self) {
        for c in &mut self.channels {
            c.clear_saturation();
        }
        self.ref_saturated = false;
    }

    fn read_tick(&mut self) -> SensorReading {
        let AmbientSample {
            field_nt,
            contamination_nt,
        } = self.env.step();
        let generated = [0, 1, 2].map(|i| self.channels[i].pending_field());
        let at_error = match self.primary.as_mut() {
            Some((taps, lines)) => [0, 1, 2].map(|i| {
                lines[i].push(field_nt[i]);
                lines[i].dot(taps)
            }),
            None => field_nt,
        };
        let mut error = [0.0; 3];
        for i in 0..3 {
            let leak: f64 = (0..3).map(|j| self.crosstalk[i][j] * generated[j]).sum();
            error[i] = self.channels[i].read(at_error[i] + leak);
        }
        let mut reference = [0.0; 3];
        for i in 0..3 {
            let mut v = field_nt[i] + self.echo * generated[i] + contamination_nt[i];
            if self.ref_noise > 0.0 {
                let z: f64 = self.ref_rng.sample(StandardNormal);
                v += self.ref_noise * z;
            }
            if let Some(q) = &self.ref_quantizer {
                let (qv, sat) = q.quantize(v);
                self.ref_saturated |= sat;
                v = qv;
            }
            reference[i] = v;
        }
        SensorReading {
            error_sensor_nt: error,
            reference_sensor_nt: reference,
            tick: self.tick,
        }
    }

    /// Sensor reading for the current tick. Repeated calls before
    /// [`Rig::actuate`] return the same reading.
    pub fn observe(&mut self) -> SensorReading {
        if let Some(p) = &self.pending {
            return p.reading;
        }
        let reading = self.read_tick();
        self.pending = Some(Pending { reading });
        reading
    }

    /// Apply this tick's drives (DAC units) and advance the clock.
    pub fn actuate(&mut self, drives: [f64; 3]) {
        if self.pending.is_none() {
            self.observe();
        }
        for (c, d) in self.channels.iter_mut().zip(drives) {
            c.apply(d);
        }
        self.pending = None;
        self.tick += 1;
    }

    /// Apply `drives` and return the reading of the same tick.
    pub fn sense(&mut self, drives: [f64; 3]) -> SensorReading {
        let r = self.observe();
        self.actuate(drives);
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::environment::identity;

    fn ideal_channels() -> [ChannelConfig; 3] {
        let c = ChannelConfig {
            sensor_noise_nt: 0.0,
            quantize: false,
            ..Default::default()
        };
        [c.clone(), c.clone(), c]
    }

    fn ideal_reference() -> ReferenceSensorConfig {
        ReferenceSensorConfig {
            noise_nt: 0.0,
            quantize: false,
            ..Default::default()
        }
    }

    #[test]
    fn quiet_reference_equals_ambient() {
        let env = EnvironmentConfig {
            echo_coupling: 0.0,
            ..Default::default()
        };
        let mut rig = Rig::new(&env, &ideal_channels(), &ideal_reference(), 5000.0, 9).unwrap();
        let mut amb = NoiseEnvironment::new(&env, 5000.0, derive_seed(9, "environment")).unwrap();
        for _ in 0..1000 {
            let r = rig.sense([0.0; 3]);
            assert_eq!(r.reference_sensor_nt, amb.step().field_nt);
        }
    }

    #[test]
    fn echo_scales_generated_field() {
        let env = EnvironmentConfig {
            echo_coupling: 0.3,
            crosstalk: identity(),
            ..EnvironmentConfig::dc_only([0.0; 3])
        };
        let mut rig = Rig::new(&env, &ideal_channels(), &ideal_reference(), 5000.0, 1).unwrap();
        for n in 0..300 {
            let d = if n % 17 < 8 { 1.0 } else { -0.5 };
            let r = rig.sense([d, 0.0, 0.0]);
            assert!((r.reference_sensor_nt[0] - 0.3 * r.error_sensor_nt[0]).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_zero_delay_channel() {
        let mut ch = ideal_channels();
        ch[1].extra_delay_samples = 0;
        assert!(Rig::new(&EnvironmentConfig::default(), &ch, &ideal_reference(), 5000.0, 0).is_err());
    }

    #[test]
    fn observe_is_idempotent_within_a_tick() {
        let mut rig = Rig::new(
            &EnvironmentConfig::default(),
            &[ChannelConfig::default(), ChannelConfig::default(), ChannelConfig::default()],
            &ReferenceSensorConfig::default(),
            5000.0,
            2,
        )
        .unwrap();
        let a = rig.observe();
        let b = rig.observe();
        assert_eq!(a, b);
        rig.actuate([0.0; 3]);
        assert_eq!(rig.observe().tick, 1);
    }
}
