use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::control::{PidGains, PrenullConfig};
use crate::error::{AncError, Result};
use crate::plant::{ChannelConfig, EnvironmentConfig, ReferenceSensorConfig};
use crate::signal::WelchParams;

/// Prefix of environment variables that override config values.
pub const ENV_PREFIX: &str = "ANC_";
/// Separator between path segments in override names; `.` is accepted too.
pub const ENV_SEPARATOR: &str = "__";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AmbientMode {
    /// Earth field and sensor noise only.
    Static,
    /// The full ambient field including AC components.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        ["x", "y", "z"][self as usize]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpStageConfig {
    pub ambient: AmbientMode,
    /// Standard deviation of the white-noise drive, DAC units.
    pub drive_sigma: f64,
    pub calibration_s: f64,
    pub dc_threshold_nt: f64,
}

impl Default for SpStageConfig {
    fn default() -> Self {
        Self {
            ambient: AmbientMode::Static,
            drive_sigma: 5.0,
            calibration_s: 1.0,
            dc_threshold_nt: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AncStageConfig {
    /// Window used to measure the filtered-reference power before adapting.
    pub calibration_s: f64,
    pub phase1_max_s: f64,
    pub convergence_window_s: f64,
    pub convergence_tolerance: f64,
    /// A window whose error RMS exceeds this multiple of the uncontrolled
    /// error RMS is treated as divergence.
    pub divergence_ratio: f64,
}

impl Default for AncStageConfig {
    fn default() -> Self {
        Self {
            calibration_s: 1.0,
            phase1_max_s: 30.0,
            convergence_window_s: 1.0,
            convergence_tolerance: 0.05,
            divergence_ratio: 20.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PidConfig {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// DAC units.
    pub output_limit: f64,
}

impl Default for PidConfig {
    fn default() -> Self {
        Self {
            kp: 0.0,
            ki: 0.2,
            kd: 0.0,
            output_limit: 1000.0,
        }
    }
}

impl PidConfig {
    pub fn gains(&self, sample_rate_hz: f64) -> Result<PidGains> {
        PidGains::new(self.kp, self.ki, self.kd, self.output_limit, 1.0 / sample_rate_hz)
            .map_err(|e| AncError::config(format!("pid: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoherenceScanConfig {
    pub levels: Vec<f64>,
    pub axis: Axis,
    pub mu_anc_safety: f64,
    /// Adaptation time before the analysis window.
    pub settle_s: f64,
    pub analysis_s: f64,
    pub band_hz: [f64; 2],
    /// Frequency whose coherence and suppression are tabulated per level.
    pub probe_hz: f64,
    pub min_segments: usize,
    /// A bin is analysed only if the uncontrolled error PSD exceeds the
    /// sensor floor by this factor.
    pub floor_ratio: f64,
}

impl Default for CoherenceScanConfig {
    fn default() -> Self {
        Self {
            levels: vec![0.0, 0.33, 1.0, 3.0],
            axis: Axis::X,
            mu_anc_safety: 2e-4,
            settle_s: 30.0,
            analysis_s: 30.0,
            band_hz: [0.0, 1000.0],
            probe_hz: 50.0,
            min_segments: 32,
            floor_ratio: 100.0,
        }
    }
}

/// Everything that defines a run. Every field has a default; unknown keys
/// are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub sample_rate_hz: f64,
    /// Length of both the secondary-path model and the anti-noise filter.
    pub taps: usize,
    pub duration_sp_s: f64,
    pub duration_anc_s: f64,
    /// Trailing part of each stage used for the report.
    pub analysis_s: f64,
    pub mu_sp_safety: f64,
    pub mu_anc_safety: f64,
    pub report_bands: Vec<[f64; 2]>,
    pub sp: SpStageConfig,
    pub anc: AncStageConfig,
    pub prenull: PrenullConfig,
    pub pid: PidConfig,
    pub welch: WelchParams,
    pub environment: EnvironmentConfig,
    pub channels: [ChannelConfig; 3],
    pub reference_sensor: ReferenceSensorConfig,
    pub coherence: CoherenceScanConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            sample_rate_hz: 5000.0,
            taps: 128,
            duration_sp_s: 20.0,
            duration_anc_s: 60.0,
            analysis_s: 30.0,
            mu_sp_safety: 0.1,
            mu_anc_safety: 0.005,
            report_bands: vec![[0.0, 1000.0], [0.0, 150.0]],
            sp: SpStageConfig::default(),
            anc: AncStageConfig::default(),
            prenull: PrenullConfig::default(),
            pid: PidConfig::default(),
            welch: WelchParams::default(),
            environment: EnvironmentConfig::default(),
            channels: Default::default(),
            reference_sensor: ReferenceSensorConfig::default(),
            coherence: CoherenceScanConfig::default(),
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(AncError::config(format!("{name} must be positive, got {v}")))
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let fs = self.sample_rate_hz;
        positive("sample_rate_hz", fs)?;
        positive("duration_sp_s", self.duration_sp_s)?;
        positive("duration_anc_s", self.duration_anc_s)?;
        positive("analysis_s", self.analysis_s)?;
        positive("mu_sp_safety", self.mu_sp_safety)?;
        positive("mu_anc_safety", self.mu_anc_safety)?;
        positive("sp.drive_sigma", self.sp.drive_sigma)?;
        positive("sp.calibration_s", self.sp.calibration_s)?;
        positive("sp.dc_threshold_nt", self.sp.dc_threshold_nt)?;
        positive("anc.calibration_s", self.anc.calibration_s)?;
        positive("anc.phase1_max_s", self.anc.phase1_max_s)?;
        positive("anc.convergence_window_s", self.anc.convergence_window_s)?;
        positive("anc.convergence_tolerance", self.anc.convergence_tolerance)?;
        positive("anc.divergence_ratio", self.anc.divergence_ratio)?;
        positive("coherence.mu_anc_safety", self.coherence.mu_anc_safety)?;
        positive("coherence.settle_s", self.coherence.settle_s)?;
        positive("coherence.analysis_s", self.coherence.analysis_s)?;
        if self.taps == 0 {
            return Err(AncError::config("taps must be at least 1"));
        }
        if self.analysis_s > self.duration_anc_s {
            return Err(AncError::config("analysis_s cannot exceed duration_anc_s"));
        }
        let nyq = fs / 2.0;
        for band in self.report_bands.iter().chain(std::iter::once(&self.coherence.band_hz)) {
            if !(band[0] >= 0.0 && band[0] < band[1] && band[1] <= nyq) {
                return Err(AncError::config(format!(
                    "band [{}, {}] Hz must satisfy 0 <= lo < hi <= {nyq}",
                    band[0], band[1]
                )));
            }
        }
        if !(self.coherence.probe_hz > 0.0 && self.coherence.probe_hz < nyq) {
            return Err(AncError::config("coherence.probe_hz must lie in (0, Nyquist)"));
        }
        if self.coherence.levels.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(AncError::config("contamination levels must be non-negative"));
        }
        self.welch.validate().map_err(|e| AncError::config(format!("welch: {e}")))?;
        let analysis_len = (self.analysis_s * fs) as usize;
        if self.welch.segment_count(analysis_len) < 2 {
            return Err(AncError::config("analysis window holds fewer than two Welch segments"));
        }
        self.environment.validate(fs)?;
        for (i, c) in self.channels.iter().enumerate() {
            c.validate(fs).map_err(|e| AncError::config(format!("channels[{i}]: {e}")))?;
            if c.extra_delay_samples == 0 {
                return Err(AncError::config(format!("channels[{i}].extra_delay_samples must be at least 1")));
            }
        }
        self.reference_sensor.validate()?;
        self.prenull.validate()?;
        self.pid.gains(fs)?;
        Ok(())
    }

    /// Parse TOML text over the defaults, apply `ANC_` overrides and validate.
    pub fn from_toml_with_overrides<I>(text: &str, overrides: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut merged = toml::Value::try_from(ExperimentConfig::default())
            .map_err(|e| AncError::config(format!("serialising defaults: {e}")))?;
        let user: toml::Value = toml::from_str::<toml::Table>(text)
            .map(toml::Value::Table)
            .map_err(|e| AncError::config(format!("parse error: {e}")))?;
        merge(&mut merged, user);
        for (key, value) in overrides {
            if let Some(path) = key.strip_prefix(ENV_PREFIX) {
                apply_override(&mut merged, path, &value)?;
            }
        }
        let cfg: ExperimentConfig = merged
            .try_into()
            .map_err(|e: toml::de::Error| AncError::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_toml_with_overrides(text, std::iter::empty())
    }

    /// Load from `path` (defaults when `None`) with overrides from the process environment.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| AncError::config(format!("cannot read config file {}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::from_toml_with_overrides(&text, std::env::vars()).map_err(|e| match (e, path) {
            (AncError::Config(m), Some(p)) => AncError::Config(format!("{}: {m}", p.display())),
            (e, _) => e,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| AncError::config(e.to_string()))
    }

    /// SHA-256 of the canonical JSON serialisation.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serialises");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn gains(&self) -> Result<PidGains> {
        self.pid.gains(self.sample_rate_hz)
    }

    pub fn samples(&self, seconds: f64) -> usize {
        (seconds * self.sample_rate_hz).round() as usize
    }
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(existing) => merge(existing, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

fn parse_scalar(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// `path` is a `__`-separated, case-insensitive key path; numeric segments
/// index arrays.
fn apply_override(root: &mut toml::Value, path: &str, raw: &str) -> Result<()> {
    let segments: Vec<String> = path
        .split(ENV_SEPARATOR)
        .flat_map(|s| s.split('.'))
        .map(|s| s.to_ascii_lowercase())
        .collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(AncError::config(format!("malformed override {ENV_PREFIX}{path}")));
    }
    let mut node = root;
    for (i, seg) in segments.iter().enumerate() {
        let last = i + 1 == segments.len();
        node = match node {
            toml::Value::Table(t) => {
                if last {
                    t.insert(seg.clone(), parse_scalar(raw));
                    return Ok(());
                }
                t.entry(seg.clone())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            }
            toml::Value::Array(a) => {
                let idx: usize = seg
                    .parse()
                    .map_err(|_| AncError::config(format!("override {ENV_PREFIX}{path}: '{seg}' is not an index")))?;
                let len = a.len();
                let slot = a.get_mut(idx).ok_or_else(|| {
                    AncError::config(format!("override {ENV_PREFIX}{path}: index {idx} out of range ({len})"))
                })?;
                if last {
                    *slot = parse_scalar(raw);
                    return Ok(());
                }
                slot
            }
            _ => {
                return Err(AncError::config(format!(
                    "override {ENV_PREFIX}{path}: '{seg}' is not inside a table"
                )))
            }
        };
    }
    Ok(())
}
