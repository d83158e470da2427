use std::fmt;

use log::{debug, info, warn};
use serde::{Deserialize, Serialize};

use super::config::{AmbientMode, Axis, ExperimentConfig};
use crate::adaptive::{
    calibrate_drive_power, estimate_secondary_path, relative_l2, stability_bound, ConvergenceMonitor, FxLms,
    IdentificationParams, SecondaryPathModel, DIVERGENCE_NORM,
};
use crate::control::{dc_prenull, Pid, PrenullResult};
use crate::error::{AncError, Result};
use crate::plant::{EnvironmentConfig, Rig};
use crate::rng::derive_seed;
use crate::signal::{fir_apply, SampleBuffer, WhiteNoiseSource};

/// Rig labels; each gets its own derived seed.
pub const SP_RIG: &str = "sp";
pub const TRAINING_RIG: &str = "training";
pub const MAIN_RIG: &str = "main";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Raw,
    Pid,
    Anc,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Raw, Stage::Pid, Stage::Anc];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Raw => "raw",
            Stage::Pid => "pid",
            Stage::Anc => "anc",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "raw" | "noise" => Ok(Stage::Raw),
            "pid" => Ok(Stage::Pid),
            "anc" => Ok(Stage::Anc),
            other => Err(AncError::config(format!("unknown stage '{other}' (expected raw, pid or anc)"))),
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Error- and reference-sensor recordings, one buffer per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct StageStreams {
    pub error: [SampleBuffer; 3],
    pub reference: [SampleBuffer; 3],
}

pub(super) struct Recorder {
    error: [Vec<f64>; 3],
    reference: [Vec<f64>; 3],
}

impl Recorder {
    pub(super) fn with_capacity(n: usize) -> Self {
        let v = || Vec::with_capacity(n);
        Self {
            error: [v(), v(), v()],
            reference: [v(), v(), v()],
        }
    }

    pub(super) fn push(&mut self, error: [f64; 3], reference: [f64; 3]) {
        for i in 0..3 {
            self.error[i].push(error[i]);
            self.reference[i].push(reference[i]);
        }
    }

    pub(super) fn finish(self, fs: f64) -> Result<StageStreams> {
        let [e0, e1, e2] = self.error;
        let [r0, r1, r2] = self.reference;
        Ok(StageStreams {
            error: [SampleBuffer::new(e0, fs)?, SampleBuffer::new(e1, fs)?, SampleBuffer::new(e2, fs)?],
            reference: [SampleBuffer::new(r0, fs)?, SampleBuffer::new(r1, fs)?, SampleBuffer::new(r2, fs)?],
        })
    }
}

pub fn build_rig(config: &ExperimentConfig, environment: &EnvironmentConfig, label: &str) -> Result<Rig> {
    Rig::new(
        environment,
        &config.channels,
        &config.reference_sensor,
        config.sample_rate_hz,
        derive_seed(config.seed, label),
    )
}

/// The rig shared by the raw, PID and ANC stages, warmed up at the offsets.
pub fn main_rig(config: &ExperimentConfig, prenull: &PrenullResult) -> Result<Rig> {
    let mut rig = build_rig(config, &config.environment, MAIN_RIG)?;
    warm_up(&mut rig, prenull.offsets);
    Ok(rig)
}

fn sp_environment(config: &ExperimentConfig) -> EnvironmentConfig {
    match config.sp.ambient {
        AmbientMode::Static => config.environment.static_part(),
        AmbientMode::Full => config.environment.clone(),
    }
}

/// Hold `drives` until every channel has flushed its start-up transient,
/// then clear the saturation flags.
pub fn warm_up(rig: &mut Rig, drives: [f64; 3]) {
    let ticks = (0..3).map(|i| rig.channel(i).response().len()).max().unwrap_or(0) + 1;
    for _ in 0..ticks {
        rig.sense(drives);
    }
    rig.clear_saturation();
}

/// Pre-null on the identification rig; returns the rig ready for identification.
pub fn prenull_stage(config: &ExperimentConfig) -> Result<(Rig, PrenullResult)> {
    let mut rig = build_rig(config, &sp_environment(config), SP_RIG)?;
    let result = dc_prenull(&mut rig, &config.gains()?, &config.prenull)?;
    info!(
        "pre-null settled after {:.2} s, offsets {:?}",
        result.settle_time_s, result.offsets
    );
    Ok((rig, result))
}

#[derive(Debug, Clone)]
pub struct SpStageResult {
    pub models: [SecondaryPathModel; 3],
    pub prenull: PrenullResult,
    /// True composite impulse response of each channel.
    pub truth: [Vec<f64>; 3],
}

impl SpStageResult {
    pub fn relative_errors(&self) -> [f64; 3] {
        [0, 1, 2].map(|i| self.models[i].relative_error(&self.truth[i]))
    }
}

/// DC pre-null, then white-noise identification of each axis in turn with
/// the other axes held at their offsets.
pub fn run_sp_stage(config: &ExperimentConfig) -> Result<SpStageResult> {
    config.validate()?;
    let fs = config.sample_rate_hz;
    let (mut rig, prenull) = prenull_stage(config)?;
    let mut models = Vec::with_capacity(3);
    for axis in Axis::ALL {
        let i = axis.index();
        let noise = WhiteNoiseSource::new(
            config.sp.drive_sigma,
            derive_seed(config.seed, &format!("sp-drive-{}", axis.name())),
        );
        let p_y = calibrate_drive_power(&noise, fs, config.sp.calibration_s)?;
        let mu = config.mu_sp_safety * stability_bound(config.taps, p_y)?;
        let mut params = IdentificationParams::new(config.taps, mu, config.duration_sp_s, fs);
        params.dc_threshold = config.sp.dc_threshold_nt;
        let offsets = prenull.offsets;
        let rig_ref = &mut rig;
        let mut plant = move |y: f64| {
            let mut d = offsets;
            d[i] += y;
            rig_ref.sense(d).error_sensor_nt[i]
        };
        let model = estimate_secondary_path(&mut plant, &noise, &params)
            .map_err(|e| e.with_context(&format!("secondary-path estimation, axis {}", axis.name())))?;
        if model.elevated_residual {
            warn!(
                "axis {}: residual/output power {:.2e} suggests the path is longer than {} taps",
                axis.name(),
                model.residual_ratio(),
                config.taps
            );
        }
        info!(
            "axis {}: model identified (mu_sp = {mu:.3e}, peak tap {})",
            axis.name(),
            model.peak_tap()
        );
        models.push(model);
    }
    let truth = [0, 1, 2].map(|i| {
        config.channels[i]
            .impulse_response(fs)
            .map(|f| f.coefficients().to_vec())
    });
    let [t0, t1, t2] = truth;
    let models: [SecondaryPathModel; 3] = models.try_into().expect("three axes");
    Ok(SpStageResult {
        models,
        prenull,
        truth: [t0?, t1?, t2?],
    })
}

/// Subtract the reference baseline and measure the power of the reference
/// after the path model.
pub fn filtered_reference_power(reference: &SampleBuffer, baseline: f64, model: &SecondaryPathModel) -> Result<f64> {
    let centred = SampleBuffer::new(
        reference.samples().iter().map(|v| v - baseline).collect(),
        reference.sample_rate_hz(),
    )?;
    Ok(fir_apply(model.filter(), &centred)?.power())
}

/// Per-axis anti-noise loops sharing one rig.
pub(super) struct AncLoop {
    pub(super) filters: [Option<FxLms>; 3],
    pub(super) baseline: [f64; 3],
    pub(super) offsets: [f64; 3],
    pub(super) raw_rms: [f64; 3],
    pub(super) ratio: f64,
    pub(super) window: usize,
    pub(super) acc: [f64; 3],
    /// Error samples on the ADC rail in the current window.
    pub(super) clipped: [usize; 3],
    /// Ticks left during which the filters run without adapting.
    pub(super) frozen: usize,
    pub(super) count: usize,
    pub(super) context: String,
}

impl AncLoop {
    pub(super) fn tick(&mut self, rig: &mut Rig) -> Result<([f64; 3], [f64; 3])> {
        let r = rig.observe();
        let step = r.tick;
        let mut drives = self.offsets;
        let adapt = self.frozen == 0;
        self.frozen = self.frozen.saturating_sub(1);
        for i in 0..3 {
            if let Some(f) = self.filters[i].as_mut() {
                f.filter_reference(r.reference_sensor_nt[i] - self.baseline[i]);
                let y = f.compute_antinoise();
                if adapt {
                    f.update(r.error_sensor_nt[i]).map_err(|e| self.divergence(e, i, step))?;
                }
                drives[i] += y;
                self.acc[i] += r.error_sensor_nt[i].powi(2);
                if let Some(q) = rig.channel(i).quantizer() {
                    if r.error_sensor_nt[i].abs() >= q.range() - 1.5 * q.step() {
                        self.clipped[i] += 1;
                    }
                }
            }
        }
        rig.actuate(drives);
        self.count += 1;
        if self.count == self.window {
            for i in 0..3 {
                if let Some(f) = &self.filters[i] {
                    f.check(DIVERGENCE_NORM).map_err(|e| self.divergence(e, i, step))?;
                    let rms = (self.acc[i] / self.window as f64).sqrt();
                    let reason = if rms > self.ratio * self.raw_rms[i] {
                        Some(format!(
                            "error RMS {rms:.3e} nT exceeds {}x the uncontrolled {:.3e} nT",
                            self.ratio, self.raw_rms[i]
                        ))
                    } else if 2 * self.clipped[i] > self.window {
                        Some(format!(
                            "error sensor clipped on {} of the last {} samples",
                            self.clipped[i], self.window
                        ))
                    } else {
                        None
                    };
                    if let Some(reason) = reason {
                        return Err(AncError::Divergence {
                            context: format!("{}, axis {}", self.context, Axis::ALL[i].name()),
                            step,
                            reason,
                        });
                    }
                }
            }
            self.acc = [0.0; 3];
            self.clipped = [0; 3];
            self.count = 0;
        }
        Ok((r.error_sensor_nt, r.reference_sensor_nt))
    }

    fn divergence(&self, e: AncError, axis: usize, step: u64) -> AncError {
        match e {
            AncError::Divergence { reason, .. } => AncError::Divergence {
                context: format!("{}, axis {}", self.context, Axis::ALL[axis].name()),
                step,
                reason,
            },
            other => other,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Phase1Axis {
    /// Error and reference of the active axis while adapting.
    pub error: SampleBuffer,
    pub reference: SampleBuffer,
    pub converged_after_s: Option<f64>,
    pub weights: Vec<f64>,
    pub mu: f64,
    pub uncontrolled_rms_nt: f64,
}

#[derive(Debug, Clone)]
pub struct AncStageResult {
    pub phase1: [Phase1Axis; 3],
    pub phase2: StageStreams,
    /// Filters when every axis had settled again under simultaneous control.
    pub weights_reconverged: Option<[Vec<f64>; 3]>,
    pub reconverged_after_s: Option<f64>,
    /// Filters at the end of the recording.
    pub weights_phase2: [Vec<f64>; 3],
    pub saturated: [bool; 3],
}

impl AncStageResult {
    /// Relative L2 change of each axis' filter from phase 1 to re-convergence
    /// (or to the end of phase 2 if it never settled).
    pub fn weight_drift(&self) -> [f64; 3] {
        let w = self.weights_reconverged.as_ref().unwrap_or(&self.weights_phase2);
        [0, 1, 2].map(|i| relative_l2(&w[i], &self.phase1[i].weights))
    }
}

/// Ticks for a freshly started filter's output to fill its own history and
/// reach the error sensor.
pub(super) fn settle_ticks(rig: &Rig, taps: usize) -> usize {
    (0..3).map(|i| rig.channel(i).response().len()).max().unwrap_or(0) + taps
}

/// Phase 1: each axis alone on a training rig until its error settles.
/// Phase 2: all axes together on the main rig, warm-started with the phase-1
/// filters, which run frozen until their output has reached the sensors.
pub fn run_anc_stage(
    config: &ExperimentConfig,
    models: &[SecondaryPathModel; 3],
    prenull: &PrenullResult,
) -> Result<AncStageResult> {
    config.validate()?;
    for m in models {
        if m.taps() == 0 {
            return Err(AncError::invalid("empty secondary-path model"));
        }
    }
    let fs = config.sample_rate_hz;
    let window = config.samples(config.anc.convergence_window_s).max(1);
    let calib = config.samples(config.anc.calibration_s).max(1);
    let max_ticks = config.samples(config.anc.phase1_max_s);

    let mut training = build_rig(config, &config.environment, TRAINING_RIG)?;
    warm_up(&mut training, prenull.offsets);
    let mut phase1 = Vec::with_capacity(3);
    for axis in Axis::ALL {
        let i = axis.index();
        let mut refs = Vec::with_capacity(calib);
        let mut errs = Vec::with_capacity(calib);
        for _ in 0..calib {
            let r = training.sense(prenull.offsets);
            refs.push(r.reference_sensor_nt[i]);
            errs.push(r.error_sensor_nt[i]);
        }
        let p_xf = filtered_reference_power(&SampleBuffer::new(refs, fs)?, prenull.reference_baseline_nt[i], &models[i])?;
        let raw_rms = SampleBuffer::new(errs, fs)?.rms();
        let mu = config.mu_anc_safety * stability_bound(config.taps, p_xf)?;
        debug!("phase 1 axis {}: P_x' = {p_xf:.3e}, mu = {mu:.3e}", axis.name());
        let mut filters: [Option<FxLms>; 3] = [None, None, None];
        filters[i] = Some(FxLms::new(config.taps, &models[i], mu)?);
        let mut raw = [0.0; 3];
        raw[i] = raw_rms;
        let mut lp = AncLoop {
            filters,
            baseline: prenull.reference_baseline_nt,
            offsets: prenull.offsets,
            raw_rms: raw,
            ratio: config.anc.divergence_ratio,
            window,
            acc: [0.0; 3],
            clipped: [0; 3],
            frozen: 0,
            count: 0,
            context: "ANC phase 1".into(),
        };
        let mut monitor = ConvergenceMonitor::new(window, config.anc.convergence_tolerance);
        let mut err = Vec::new();
        let mut refs = Vec::new();
        let mut converged = None;
        for n in 0..max_ticks {
            let (e, r) = lp.tick(&mut training)?;
            err.push(e[i]);
            refs.push(r[i]);
            if monitor.push(e[i]) {
                converged = Some((n + 1) as f64 / fs);
                break;
            }
        }
        match converged {
            Some(t) => info!("phase 1 axis {} converged after {t:.1} s", axis.name()),
            None => warn!(
                "phase 1 axis {} did not settle within {} s",
                axis.name(),
                config.anc.phase1_max_s
            ),
        }
        let weights = lp.filters[i].as_ref().expect("active filter").weights().to_vec();
        phase1.push(Phase1Axis {
            error: SampleBuffer::new(err, fs)?,
            reference: SampleBuffer::new(refs, fs)?,
            converged_after_s: converged,
            weights,
            mu,
            uncontrolled_rms_nt: raw_rms,
        });
    }
    let phase1: [Phase1Axis; 3] = phase1.try_into().expect("three axes");

    let mut main = main_rig(config, prenull)?;
    let filters = [0, 1, 2].map(|i| FxLms::with_weights(phase1[i].weights.clone(), &models[i], phase1[i].mu));
    let [f0, f1, f2] = filters;
    let mut lp = AncLoop {
        filters: [Some(f0?), Some(f1?), Some(f2?)],
        baseline: prenull.reference_baseline_nt,
        offsets: prenull.offsets,
        raw_rms: [0, 1, 2].map(|i| phase1[i].uncontrolled_rms_nt),
        ratio: config.anc.divergence_ratio,
        window,
        acc: [0.0; 3],
        clipped: [0; 3],
        frozen: settle_ticks(&main, config.taps),
        count: 0,
        context: "ANC phase 2".into(),
    };
    let n = config.samples(config.duration_anc_s);
    let mut rec = Recorder::with_capacity(n);
    let mut monitors = [0; 3].map(|_| ConvergenceMonitor::new(window, config.anc.convergence_tolerance));
    let weights = |lp: &AncLoop| [0, 1, 2].map(|i| lp.filters[i].as_ref().expect("filter").weights().to_vec());
    let mut weights_reconverged = None;
    let mut reconverged_after_s = None;
    for k in 0..n {
        let (e, r) = lp.tick(&mut main)?;
        rec.push(e, r);
        let settled = (0..3).fold(true, |all, i| monitors[i].push(e[i]) && all);
        if settled && weights_reconverged.is_none() {
            weights_reconverged = Some(weights(&lp));
            reconverged_after_s = Some((k + 1) as f64 / fs);
            info!("phase 2 re-converged after {:.1} s", (k + 1) as f64 / fs);
        }
    }
    Ok(AncStageResult {
        phase1,
        phase2: rec.finish(fs)?,
        weights_reconverged,
        reconverged_after_s,
        weights_phase2: weights(&lp),
        saturated: main.saturated(),
    })
}

/// Ambient field with the DC offsets held and no control.
pub fn run_raw_stage(config: &ExperimentConfig, prenull: &PrenullResult) -> Result<StageStreams> {
    config.validate()?;
    let mut rig = main_rig(config, prenull)?;
    let n = config.samples(config.duration_anc_s);
    let mut rec = Recorder::with_capacity(n);
    for _ in 0..n {
        let r = rig.sense(prenull.offsets);
        rec.push(r.error_sensor_nt, r.reference_sensor_nt);
    }
    rec.finish(config.sample_rate_hz)
}

/// Closed-loop PID on every axis on top of the DC offsets.
pub fn run_pid_baseline(config: &ExperimentConfig, prenull: &PrenullResult) -> Result<StageStreams> {
    config.validate()?;
    let gains = config.gains()?;
    let mut rig = main_rig(config, prenull)?;
    let mut pids = [Pid::new(gains)?, Pid::new(gains)?, Pid::new(gains)?];
    let n = config.samples(config.duration_anc_s);
    let window = config.samples(config.anc.convergence_window_s).max(1);
    let mut rec = Recorder::with_capacity(n);
    let mut acc = [0.0; 3];
    let mut first: Option<[f64; 3]> = None;
    for k in 0..n {
        let r = rig.observe();
        let mut drives = prenull.offsets;
        for i in 0..3 {
            let e = r.error_sensor_nt[i];
            drives[i] += pids[i].step(-e)?;
            acc[i] += e * e;
        }
        rig.actuate(drives);
        rec.push(r.error_sensor_nt, r.reference_sensor_nt);
        if (k + 1) % window == 0 {
            let rms = acc.map(|a| (a / window as f64).sqrt());
            match first {
                None => first = Some(rms),
                Some(f) => {
                    for i in 0..3 {
                        if rms[i] > config.anc.divergence_ratio * f[i].max(1e-9) {
                            return Err(AncError::Divergence {
                                context: format!("PID baseline, axis {}", Axis::ALL[i].name()),
                                step: k as u64,
                                reason: format!("error RMS grew from {:.3e} to {:.3e} nT", f[i], rms[i]),
                            });
                        }
                    }
                }
            }
            acc = [0.0; 3];
        }
    }
    rec.finish(config.sample_rate_hz)
}
