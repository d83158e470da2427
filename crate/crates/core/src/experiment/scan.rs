use std::f64::consts::PI;

use log::info;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::stages::{build_rig, filtered_reference_power, warm_up, AncLoop, Recorder, StageStreams};
use crate::adaptive::{stability_bound, FxLms, SecondaryPathModel};
use crate::control::PrenullResult;
use crate::error::{AncError, Result};
use crate::plant::EnvironmentConfig;
use crate::signal::{
    cancellation_ceiling_db, coherence, welch_psd, SampleBuffer, WelchParams, Window, CANCELLATION_CEILING_DB,
};

/// Rig label shared by every scan level, so all levels see the same ambient.
pub const SCAN_RIG: &str = "scan";

/// Bins inside the Hann main lobe around DC see per-segment level changes of
/// the slow drift and are never treated as reliable.
pub const DC_LOBE_BINS: usize = 2;

/// Allowed excess of achieved suppression over the coherence ceiling.
pub const CEILING_TOLERANCE_DB: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanBin {
    pub frequency_hz: f64,
    pub gamma_sq: f64,
    pub alpha_db: f64,
    pub achieved_db: f64,
    pub reliable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub level: f64,
    /// Mean coherence over the scan band.
    pub mean_gamma_sq: f64,
    pub probe_gamma_sq: f64,
    pub probe_alpha_db: f64,
    pub probe_achieved_db: f64,
    pub reliable_bins: usize,
    /// Reliable bins where achieved exceeds the ceiling by more than the tolerance.
    pub violations: usize,
    pub bins: Vec<ScanBin>,
}

impl ScanPoint {
    pub fn ceiling_holds(&self) -> bool {
        self.violations == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceScan {
    pub axis: String,
    pub probe_hz: f64,
    pub band_hz: [f64; 2],
    pub points: Vec<ScanPoint>,
}

/// DTFT of a length-`n` periodic Hann window at `offset_hz` from a bin centre.
pub fn hann_kernel(offset_hz: f64, n: usize, sample_rate_hz: f64) -> Complex64 {
    let dirichlet = |w: f64| {
        let half = 0.5 * w;
        let s = half.sin();
        let mag = if s.abs() < 1e-12 {
            // Limit at multiples of 2π; the sign follows the (n - 1) phase wrap.
            let k = (w / (2.0 * PI)).round();
            let sign = if (k as i64 * (n as i64 - 1)) % 2 == 0 { 1.0 } else { -1.0 };
            sign * n as f64
        } else {
            (n as f64 * half).sin() / s
        };
        Complex64::from_polar(1.0, -half * (n as f64 - 1.0)) * mag
    };
    let w = 2.0 * PI * offset_hz / sample_rate_hz;
    let step = 2.0 * PI / n as f64;
    dirichlet(w) * 0.5 - dirichlet(w - step) * 0.25 - dirichlet(w + step) * 0.25
}

/// Expected Welch PSD value at a bin for a Lorentzian line of mean power
/// `power` and half-width `half_width_hz` centred `offset_hz` from the bin.
fn lorentzian_bin_psd(power: f64, half_width_hz: f64, offset_hz: f64, n: usize, fs: f64, sum_w2: f64) -> f64 {
    // f - f0 = b tan(θ) turns the Lorentzian into a uniform density on (-π/2, π/2).
    let steps = 200_000;
    let h = PI / steps as f64;
    let mut acc = 0.0;
    for i in 0..steps {
        let theta = -PI / 2.0 + (i as f64 + 0.5) * h;
        acc += hann_kernel(offset_hz + half_width_hz * theta.tan(), n, fs).norm_sqr();
    }
    let two_sided = 0.5 * power * acc * h / PI;
    2.0 * two_sided / (fs * sum_w2)
}

/// Contamination level that makes the expected raw-stage coherence between
/// reference and error equal `gamma_sq` at the bin nearest `freq_hz`.
pub fn contamination_for_coherence(config: &ExperimentConfig, axis: usize, freq_hz: f64, gamma_sq: f64) -> Result<f64> {
    if !(gamma_sq > 0.0 && gamma_sq < 1.0) {
        return Err(AncError::invalid(format!("target coherence {gamma_sq} must lie in (0, 1)")));
    }
    if config.welch.window != Window::Hann {
        return Err(AncError::invalid("contamination calibration assumes a Hann window"));
    }
    let fs = config.sample_rate_hz;
    let n = config.welch.segment_len;
    let sum_w2: f64 = Window::Hann.coefficients(n).iter().map(|w| w * w).sum();
    let bin_hz = fs / n as f64;
    let f_k = (freq_hz / bin_hz).round() * bin_hz;
    let env = &config.environment;
    let wideband = 2.0 * env.broadband.wideband_sigma_nt[axis].powi(2) / fs;
    let mut signal = wideband;
    let mut line = wideband;
    for tone in &env.tones {
        let a = tone.amplitude_nt[axis];
        let offset = tone.frequency_hz - f_k;
        signal += 2.0 * 0.25 * a * a * hann_kernel(offset, n, fs).norm_sqr() / (fs * sum_w2);
        line += lorentzian_bin_psd(0.5 * a * a, env.contamination_bandwidth_hz, offset, n, fs, sum_w2);
    }
    let n_err = config.channels[axis].noise_floor_psd(fs)?;
    let n_ref = config.reference_sensor.noise_floor_psd(fs)?;
    // γ² = S² / ((S + L²K + N_ref)(S + N_err)), solved for L².
    let l2 = (signal * signal / (gamma_sq * (signal + n_err)) - signal - n_ref) / line;
    if !(l2 > 0.0) {
        return Err(AncError::invalid(format!(
            "coherence {gamma_sq} at {freq_hz} Hz is unreachable: sensor noise alone limits it"
        )));
    }
    Ok(l2.sqrt())
}

fn scan_environment(config: &ExperimentConfig, level: f64) -> EnvironmentConfig {
    EnvironmentConfig {
        contamination_level: level,
        ..config.environment.clone()
    }
}

fn record(config: &ExperimentConfig, lp: &mut Option<AncLoop>, env: &EnvironmentConfig, prenull: &PrenullResult, n: usize) -> Result<StageStreams> {
    let mut rig = build_rig(config, env, SCAN_RIG)?;
    warm_up(&mut rig, prenull.offsets);
    let mut rec = Recorder::with_capacity(n);
    for _ in 0..n {
        match lp.as_mut() {
            Some(l) => {
                let (e, r) = l.tick(&mut rig)?;
                rec.push(e, r);
            }
            None => {
                let r = rig.sense(prenull.offsets);
                rec.push(r.error_sensor_nt, r.reference_sensor_nt);
            }
        }
    }
    rec.finish(config.sample_rate_hz)
}

/// For each contamination level, an uncontrolled run (for the coherence
/// ceiling) and a cold-started 3-axis ANC run with a slow step size, paired
/// on the same ambient realisation.
pub fn coherence_scan(
    config: &ExperimentConfig,
    models: &[SecondaryPathModel; 3],
    prenull: &PrenullResult,
    levels: &[f64],
) -> Result<CoherenceScan> {
    config.validate()?;
    if levels.is_empty() {
        return Err(AncError::config("coherence scan needs at least one contamination level"));
    }
    if let Some(l) = levels.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
        return Err(AncError::config(format!("contamination level {l} must be non-negative")));
    }
    let sc = &config.coherence;
    let axis = sc.axis.index();
    let fs = config.sample_rate_hz;
    let settle = config.samples(sc.settle_s);
    let total = settle + config.samples(sc.analysis_s);
    let calib = config.samples(config.anc.calibration_s).max(1);
    let welch: WelchParams = config.welch.clone();
    let floor = config.channels[axis].noise_floor_psd(fs)?;
    let mut points = Vec::with_capacity(levels.len());
    for &level in levels {
        let env = scan_environment(config, level);
        let raw = record(config, &mut None, &env, prenull, total)?;
        let mut mu = [0.0; 3];
        let mut raw_rms = [0.0; 3];
        for i in 0..3 {
            let head = raw.reference[i].slice(0, calib.min(total))?;
            let p = filtered_reference_power(&head, prenull.reference_baseline_nt[i], &models[i])?;
            mu[i] = sc.mu_anc_safety * stability_bound(config.taps, p)?;
            raw_rms[i] = raw.error[i].rms();
        }
        let filters = [0, 1, 2].map(|i| FxLms::new(config.taps, &models[i], mu[i]));
        let [f0, f1, f2] = filters;
        let mut lp = Some(AncLoop {
            filters: [Some(f0?), Some(f1?), Some(f2?)],
            baseline: prenull.reference_baseline_nt,
            offsets: prenull.offsets,
            raw_rms,
            ratio: config.anc.divergence_ratio,
            window: config.samples(config.anc.convergence_window_s).max(1),
            acc: [0.0; 3],
            clipped: [0; 3],
            frozen: 0,
            count: 0,
            context: format!("coherence scan, level {level}"),
        });
        let anc = record(config, &mut lp, &env, prenull, total)?;

        // The reference carries the Earth field; compare fluctuations only.
        let tail = |b: &SampleBuffer| -> Result<SampleBuffer> {
            let t = b.slice(settle, total)?;
            let m = t.mean();
            SampleBuffer::new(t.samples().iter().map(|v| v - m).collect(), fs)
        };
        let raw_e = tail(&raw.error[axis])?;
        let raw_r = tail(&raw.reference[axis])?;
        let anc_e = tail(&anc.error[axis])?;
        let coh = coherence(&raw_r, &raw_e, &welch)?;
        let before = welch_psd(&raw_e, &welch)?;
        let after = welch_psd(&anc_e, &welch)?;
        let segments_ok = coh.segment_count() >= sc.min_segments;
        let mut bins = Vec::new();
        for (k, (f, g)) in coh.iter().enumerate() {
            if f < sc.band_hz[0] || f > sc.band_hz[1] {
                continue;
            }
            let alpha = cancellation_ceiling_db(g, CANCELLATION_CEILING_DB);
            let (b, a) = (before.values()[k], after.values()[k]);
            let achieved = 10.0 * (b.max(f64::MIN_POSITIVE) / a.max(f64::MIN_POSITIVE)).log10();
            let reliable = segments_ok && k >= DC_LOBE_BINS && alpha < CANCELLATION_CEILING_DB && b >= sc.floor_ratio * floor;
            bins.push(ScanBin {
                frequency_hz: f,
                gamma_sq: g,
                alpha_db: alpha,
                achieved_db: achieved,
                reliable,
            });
        }
        let probe = coh.nearest_bin(sc.probe_hz);
        let probe_bin = bins
            .iter()
            .find(|b| b.frequency_hz == coh.frequencies()[probe])
            .cloned()
            .ok_or_else(|| AncError::config("coherence.probe_hz lies outside coherence.band_hz"))?;
        let mean_gamma_sq = bins.iter().map(|b| b.gamma_sq).sum::<f64>() / bins.len().max(1) as f64;
        let reliable_bins = bins.iter().filter(|b| b.reliable).count();
        let violations = bins
            .iter()
            .filter(|b| b.reliable && b.achieved_db > b.alpha_db + CEILING_TOLERANCE_DB)
            .count();
        info!(
            "level {level}: gamma^2 at {} Hz = {:.4}, ceiling {:.2} dB, achieved {:.2} dB, {violations} violations",
            sc.probe_hz, probe_bin.gamma_sq, probe_bin.alpha_db, probe_bin.achieved_db
        );
        points.push(ScanPoint {
            level,
            mean_gamma_sq,
            probe_gamma_sq: probe_bin.gamma_sq,
            probe_alpha_db: probe_bin.alpha_db,
            probe_achieved_db: probe_bin.achieved_db,
            reliable_bins,
            violations,
            bins,
        });
    }
    Ok(CoherenceScan {
        axis: sc.axis.name().to_string(),
        probe_hz: sc.probe_hz,
        band_hz: sc.band_hz,
        points,
    })
}
