use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use super::colored::{NarrowbandNoise, NoiseShape, ShapedNoise};
use crate::error::{AncError, Result};
use crate::rng::stream_rng;

pub const AXES: [&str; 3] = ["x", "y", "z"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToneConfig {
    pub frequency_hz: f64,
    /// Peak amplitude per axis, nT.
    pub amplitude_nt: [f64; 3],
    #[serde(default)]
    pub phase_rad: [f64; 3],
    /// Fractional amplitude change per second.
    #[serde(default)]
    pub drift_per_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BroadbandConfig {
    pub sigma_nt: [f64; 3],
    pub shape: NoiseShape,
    /// White component sharing the same source across axes, nT.
    pub wideband_sigma_nt: [f64; 3],
    /// 0 means all axes see one common source, 1 means independent sources.
    pub axis_independence: f64,
}

impl Default for BroadbandConfig {
    fn default() -> Self {
        Self {
            sigma_nt: [452.548, 84.853, 254.558],
            shape: NoiseShape::Pink {
                corner_lo_hz: 0.02,
                corner_hi_hz: 0.1,
                rolloff_order: 2,
            },
            wideband_sigma_nt: [9.051, 1.697, 5.091],
            axis_independence: 0.0,
        }
    }
}

/// The ambient field and how it reaches the two sensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvironmentConfig {
    pub dc_field_nt: [f64; 3],
    pub tones: Vec<ToneConfig>,
    pub broadband: BroadbandConfig,
    /// Leakage of each axis's generated field into the other error sensors.
    pub crosstalk: [[f64; 3]; 3],
    /// Fraction of the generated field seen by the reference sensor.
    pub echo_coupling: f64,
    /// White noise added at the reference sensor only, nT.
    pub reference_contamination_sigma_nt: f64,
    /// Scale of an independent realisation of the ambient AC field added at
    /// the reference sensor only. Tones are replaced by narrowband lines.
    pub contamination_level: f64,
    pub contamination_bandwidth_hz: f64,
    /// FIR applied to the ambient field before the error sensor. Identity when absent.
    pub primary_path: Option<Vec<f64>>,
}

impl Default for EnvironmentConfig {
    fn default() -> Self {
        let s = SQRT_2;
        Self {
            dc_field_nt: [48000.0, 5000.0, 20000.0],
            tones: vec![
                ToneConfig {
                    frequency_hz: 50.0,
                    amplitude_nt: [640.0 * s, 120.0 * s, 360.0 * s],
                    phase_rad: [0.0, 2.0 * PI / 3.0, 4.0 * PI / 3.0],
                    drift_per_s: 0.0,
                },
                ToneConfig {
                    frequency_hz: 150.0,
                    amplitude_nt: [160.0 * s, 30.0 * s, 90.0 * s],
                    phase_rad: [0.5, 1.7, 2.9],
                    drift_per_s: 0.0,
                },
            ],
            broadband: BroadbandConfig::default(),
            crosstalk: [[1.0, 0.05, -0.05], [0.05, 1.0, 0.05], [-0.05, 0.05, 1.0]],
            echo_coupling: 0.02,
            reference_contamination_sigma_nt: 0.0,
            contamination_level: 0.0,
            contamination_bandwidth_hz: 2.0,
            primary_path: None,
        }
    }
}

impl EnvironmentConfig {
    /// Earth field only.
    pub fn dc_only(dc_field_nt: [f64; 3]) -> Self {
        Self {
            dc_field_nt,
            tones: Vec::new(),
            broadband: BroadbandConfig {
                sigma_nt: [0.0; 3],
                wideband_sigma_nt: [0.0; 3],
                ..Default::default()
            },
            crosstalk: identity(),
            echo_coupling: 0.0,
            ..Default::default()
        }
    }

    /// Same DC, coupling and sensors, but no AC field and no contamination.
    pub fn static_part(&self) -> Self {
        Self {
            tones: Vec::new(),
            broadband: BroadbandConfig {
                sigma_nt: [0.0; 3],
                wideband_sigma_nt: [0.0; 3],
                ..self.broadband.clone()
            },
            contamination_level: 0.0,
            reference_contamination_sigma_nt: 0.0,
            ..self.clone()
        }
    }

    pub fn validate(&self, sample_rate_hz: f64) -> Result<()> {
        let nyquist = sample_rate_hz / 2.0;
        for (i, row) in self.crosstalk.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                if i == j && *v != 1.0 {
                    return Err(AncError::config(format!("crosstalk diagonal must be 1, got {v} at ({i},{i})")));
                }
                if i != j && !(v.abs() < 1.0) {
                    return Err(AncError::config(format!("crosstalk off-diagonal |{v}| must be below 1")));
                }
            }
        }
        if !(0.0..1.0).contains(&self.echo_coupling) {
            return Err(AncError::config(format!(
                "echo_coupling must lie in [0, 1), got {}",
                self.echo_coupling
            )));
        }
        for t in &self.tones {
            if !(t.frequency_hz > 0.0 && t.frequency_hz < nyquist) {
                return Err(AncError::config(format!("tone at {} Hz is outside (0, Nyquist)", t.frequency_hz)));
            }
            if t.amplitude_nt.iter().chain(&t.phase_rad).any(|v| !v.is_finite()) || !t.drift_per_s.is_finite() {
                return Err(AncError::config("tone parameters must be finite"));
            }
        }
        if self
            .broadband
            .sigma_nt
            .iter()
            .chain(&self.broadband.wideband_sigma_nt)
            .any(|s| !(*s >= 0.0 && s.is_finite()))
        {
            return Err(AncError::config("broadband sigma must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.broadband.axis_independence) {
            return Err(AncError::config("axis_independence must lie in [0, 1]"));
        }
        self.broadband.shape.validate(sample_rate_hz)?;
        if !(self.contamination_level >= 0.0 && self.contamination_level.is_finite()) {
            return Err(AncError::config("contamination_level must be non-negative"));
        }
        if !(self.reference_contamination_sigma_nt >= 0.0 && self.reference_contamination_sigma_nt.is_finite()) {
            return Err(AncError::config("reference_contamination_sigma_nt must be non-negative"));
        }
        if !(self.contamination_bandwidth_hz > 0.0 && self.contamination_bandwidth_hz < nyquist) {
            return Err(AncError::config("contamination_bandwidth_hz must lie in (0, Nyquist)"));
        }
        if let Some(p) = &self.primary_path {
            if p.is_empty() || p.iter().any(|c| !c.is_finite()) {
                return Err(AncError::config("primary_path must be a non-empty list of finite taps"));
            }
        }
        if self.dc_field_nt.iter().any(|v| !v.is_finite()) {
            return Err(AncError::config("dc_field_nt must be finite"));
        }
        Ok(())
    }
}

pub fn identity() -> [[f64; 3]; 3] {
    [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
}

/// Ambient field and reference-only contamination at one tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmbientSample {
    pub field_nt: [f64; 3],
    pub contamination_nt: [f64; 3],
}

#[derive(Debug, Clone)]
struct Contamination {
    level: f64,
    lines: Vec<[NarrowbandNoise; 3]>,
    broadband: [ShapedNoise; 3],
    wideband: [ShapedNoise; 3],
    white_sigma: f64,
    white: [ShapedNoise; 3],
}

/// Deterministic 3-axis ambient field generator. Every random component
/// draws from its own counter-based stream, so changing one component's
/// settings leaves the others' realisations untouched.
#[derive(Debug, Clone)]
pub struct NoiseEnvironment {
    config: EnvironmentConfig,
    sample_rate_hz: f64,
    common: ShapedNoise,
    wideband: ShapedNoise,
    own: Option<[ShapedNoise; 3]>,
    contamination: Option<Contamination>,
    tick: u64,
}

impl NoiseEnvironment {
    pub fn new(config: &EnvironmentConfig, sample_rate_hz: f64, seed: u64) -> Result<Self> {
        config.validate(sample_rate_hz)?;
        let fs = sample_rate_hz;
        let shape = config.broadband.shape;
        let common = ShapedNoise::new(shape, 1.0, fs, stream_rng(seed, 1))?;
        let wideband = ShapedNoise::new(NoiseShape::White, 1.0, fs, stream_rng(seed, 5))?;
        let own = if config.broadband.axis_independence > 0.0 {
            Some([
                ShapedNoise::new(shape, 1.0, fs, stream_rng(seed, 2))?,
                ShapedNoise::new(shape, 1.0, fs, stream_rng(seed, 3))?,
                ShapedNoise::new(shape, 1.0, fs, stream_rng(seed, 4))?,
            ])
        } else {
            None
        };
        let contamination = if config.contamination_level > 0.0 || config.reference_contamination_sigma_nt > 0.0 {
            let mut lines = Vec::new();
            for (t, tone) in config.tones.iter().enumerate() {
                let mk = |axis: usize| {
                    NarrowbandNoise::new(
                        tone.frequency_hz,
                        config.contamination_bandwidth_hz,
                        tone.amplitude_nt[axis],
                        fs,
                        stream_rng(seed, 100 + 3 * t as u64 + axis as u64),
                    )
                };
                lines.push([mk(0)?, mk(1)?, mk(2)?]);
            }
            let bb = |axis: usize| {
                ShapedNoise::new(shape, config.broadband.sigma_nt[axis], fs, stream_rng(seed, 10 + axis as u64))
            };
            let wb = |axis: usize| {
                ShapedNoise::new(
                    NoiseShape::White,
                    config.broadband.wideband_sigma_nt[axis],
                    fs,
                    stream_rng(seed, 30 + axis as u64),
                )
            };
            let white = |axis: usize| ShapedNoise::new(NoiseShape::White, 1.0, fs, stream_rng(seed, 20 + axis as u64));
            Some(Contamination {
                level: config.contamination_level,
                lines,
                broadband: [bb(0)?, bb(1)?, bb(2)?],
                wideband: [wb(0)?, wb(1)?, wb(2)?],
                white_sigma: config.reference_contamination_sigma_nt,
                white: [white(0)?, white(1)?, white(2)?],
            })
        } else {
            None
        };
        Ok(Self {
            config: config.clone(),
            sample_rate_hz,
            common,
            wideband,
            own,
            contamination,
            tick: 0,
        })
    }

    pub fn config(&self) -> &EnvironmentConfig {
        &self.config
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    /// Deterministic part of the field (DC plus tones) at `tick`.
    pub fn deterministic_field(&self, tick: u64) -> [f64; 3] {
        let t = tick as f64 / self.sample_rate_hz;
        let mut out = self.config.dc_field_nt;
        for tone in &self.config.tones {
            let scale = 1.0 + tone.drift_per_s * t;
            let arg = 2.0 * PI * tone.frequency_hz * t;
            for (axis, o) in out.iter_mut().enumerate() {
                *o += scale * tone.amplitude_nt[axis] * (arg + tone.phase_rad[axis]).sin();
            }
        }
        out
    }

    /// Advance one tick.
    pub fn step(&mut self) -> AmbientSample {
        let mut field = self.deterministic_field(self.tick);
        let bb = &self.config.broadband;
        let c = self.common.next_sample();
        let w = self.wideband.next_sample();
        let ind = bb.axis_independence;
        let (wc, wo) = ((1.0 - ind).sqrt(), ind.sqrt());
        for axis in 0..3 {
            let own = self.own.as_mut().map_or(0.0, |o| o[axis].next_sample());
            field[axis] += bb.sigma_nt[axis] * (wc * c + wo * own) + bb.wideband_sigma_nt[axis] * w;
        }
        let mut contamination = [0.0; 3];
        if let Some(k) = self.contamination.as_mut() {
            for (axis, out) in contamination.iter_mut().enumerate() {
                let mut v = 0.0;
                if k.level > 0.0 {
                    for line in k.lines.iter_mut() {
                        v += line[axis].next_sample();
                    }
                    v += k.broadband[axis].next_sample();
                    v += k.wideband[axis].next_sample();
                    v *= k.level;
                }
                if k.white_sigma > 0.0 {
                    v += k.white_sigma * k.white[axis].next_sample();
                }
                *out = v;
            }
        }
        self.tick += 1;
        AmbientSample {
            field_nt: field,
            contamination_nt: contamination,
        }
    }
}
