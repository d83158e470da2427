use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};

use super::config::{Axis, ExperimentConfig};
use super::output::{load_prenull, model_file_name, RunDirectory, PRENULL_FILE};
use super::report::{build_report, coherence_csv, spectra_csv, trace_csv, RecordedStreams, RunReport};
use super::scan::{coherence_scan, CoherenceScan};
use super::stages::{
    prenull_stage, run_anc_stage, run_pid_baseline, run_raw_stage, run_sp_stage, SpStageResult, Stage,
};
use crate::adaptive::SecondaryPathModel;
use crate::control::PrenullResult;
use crate::error::{AncError, Result};
use crate::signal::sig9;

/// Length of the time traces written by `run`.
pub const TRACE_SECONDS: f64 = 1.0;

/// `tap` then estimated and true coefficients per axis.
pub fn sp_taps_csv(result: &SpStageResult) -> String {
    let mut s = String::from("tap");
    for a in Axis::ALL {
        let _ = write!(s, ",estimated_{0},true_{0}", a.name());
    }
    s.push('\n');
    let len = (0..3)
        .map(|i| result.models[i].taps().max(result.truth[i].len()))
        .max()
        .unwrap_or(0);
    for k in 0..len {
        let _ = write!(s, "{k}");
        for i in 0..3 {
            let est = result.models[i].coefficients().get(k).copied().unwrap_or(0.0);
            let truth = result.truth[i].get(k).copied().unwrap_or(0.0);
            let _ = write!(s, ",{},{}", sig9(est), sig9(truth));
        }
        s.push('\n');
    }
    s
}

/// Identify the three secondary paths and write models, pre-null offsets,
/// `sp_taps.csv` and the manifest into `out`.
pub fn sp_estimate(config: &ExperimentConfig, out: &Path) -> Result<SpStageResult> {
    let result = run_sp_stage(config)?;
    let mut dir = RunDirectory::create(out, config)?;
    write_models(&mut dir, &result)?;
    dir.finish("sp-estimate", &[], Some(&result.prenull), Some(&result.models))?;
    Ok(result)
}

fn write_models(dir: &mut RunDirectory, result: &SpStageResult) -> Result<()> {
    for a in Axis::ALL {
        dir.write_model(a, &result.models[a.index()])?;
    }
    dir.write_prenull(&result.prenull)?;
    dir.write_csv("sp_taps.csv", &sp_taps_csv(result))
}

/// Models and, when present, the pre-null result saved next to them.
pub fn load_models(dir: &Path) -> Result<([SecondaryPathModel; 3], Option<PrenullResult>)> {
    let load = |a: Axis| {
        let p = dir.join(model_file_name(a));
        if !p.is_file() {
            return Err(AncError::config(format!(
                "no secondary-path model at {} (run sp-estimate first or pass --estimate-first)",
                p.display()
            )));
        }
        SecondaryPathModel::load(&p)
    };
    let models = [load(Axis::X)?, load(Axis::Y)?, load(Axis::Z)?];
    let p = dir.join(PRENULL_FILE);
    let prenull = if p.is_file() { Some(load_prenull(&p)?) } else { None };
    Ok((models, prenull))
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub stages: Vec<Stage>,
    pub estimate_first: bool,
    /// Where to find models when not estimating; defaults to the output directory.
    pub models_dir: Option<PathBuf>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            stages: Stage::ALL.to_vec(),
            estimate_first: true,
            models_dir: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub streams: RecordedStreams,
    pub models: Option<[SecondaryPathModel; 3]>,
    pub prenull: PrenullResult,
    pub weight_drift: Option<[f64; 3]>,
}

fn models_and_prenull(
    config: &ExperimentConfig,
    out: &mut RunDirectory,
    estimate: bool,
    models_dir: Option<&Path>,
    need_models: bool,
) -> Result<(Option<[SecondaryPathModel; 3]>, PrenullResult)> {
    if estimate {
        let r = run_sp_stage(config)?;
        write_models(out, &r)?;
        return Ok((Some(r.models), r.prenull));
    }
    if need_models {
        let dir = models_dir.map(Path::to_path_buf).unwrap_or_else(|| out.root().to_path_buf());
        let (models, prenull) = load_models(&dir)?;
        for m in &models {
            if m.sample_rate_hz != config.sample_rate_hz {
                return Err(AncError::Mismatch(format!(
                    "model sampled at {} Hz, config at {} Hz",
                    m.sample_rate_hz, config.sample_rate_hz
                )));
            }
        }
        let prenull = match prenull {
            Some(p) => p,
            None => prenull_stage(config)?.1,
        };
        return Ok((Some(models), prenull));
    }
    Ok((None, prenull_stage(config)?.1))
}

/// Raw, PID and ANC stages as requested, then the report and plot data.
pub fn run(config: &ExperimentConfig, out: &Path, options: &RunOptions) -> Result<RunOutcome> {
    config.validate()?;
    let mut stages = options.stages.clone();
    stages.sort();
    stages.dedup();
    if stages.is_empty() {
        return Err(AncError::config("no stages requested"));
    }
    let mut dir = RunDirectory::create(out, config)?;
    let need_models = stages.contains(&Stage::Anc);
    let (models, prenull) = models_and_prenull(
        config,
        &mut dir,
        options.estimate_first,
        options.models_dir.as_deref(),
        need_models,
    )?;

    let mut streams = RecordedStreams::default();
    let mut weight_drift = None;
    for &stage in &stages {
        info!("stage {stage}");
        match stage {
            Stage::Raw => streams.raw = Some(run_raw_stage(config, &prenull)?),
            Stage::Pid => streams.pid = Some(run_pid_baseline(config, &prenull)?),
            Stage::Anc => {
                let models = models.as_ref().expect("models loaded for the ANC stage");
                let r = run_anc_stage(config, models, &prenull)?;
                if r.saturated.iter().any(|s| *s) {
                    warn!("actuator saturated during ANC: {:?}", r.saturated);
                }
                weight_drift = Some(r.weight_drift());
                for a in Axis::ALL {
                    let p = &r.phase1[a.index()];
                    dir.write_stream(&format!("streams/anc_phase1_error_{}.ancb", a.name()), &p.error)?;
                    dir.write_stream(&format!("streams/anc_phase1_reference_{}.ancb", a.name()), &p.reference)?;
                }
                streams.anc_phase1_error = Some(r.phase1.map(|p| p.error));
                streams.anc = Some(r.phase2);
            }
        }
        let s = streams.get(stage).expect("stage just recorded");
        for a in Axis::ALL {
            dir.write_stream(&format!("streams/{stage}_error_{}.ancb", a.name()), &s.error[a.index()])?;
            dir.write_stream(&format!("streams/{stage}_reference_{}.ancb", a.name()), &s.reference[a.index()])?;
        }
    }

    let report = build_report(&streams, config, &stages)?;
    dir.write_csv("report.csv", &report.to_csv())?;
    dir.write_text("report.json", &(report.to_json()? + "\n"))?;
    if let Some(c) = &report.coherence {
        dir.write_csv("coherence.csv", &coherence_csv(c))?;
    }
    for a in Axis::ALL {
        dir.write_csv(&format!("spectra_{}.csv", a.name()), &spectra_csv(&streams, config, &stages, a)?)?;
        dir.write_csv(&format!("trace_{}.csv", a.name()), &trace_csv(&streams, &stages, a, TRACE_SECONDS)?)?;
    }
    dir.finish("run", &stages, Some(&prenull), models.as_ref())?;
    Ok(RunOutcome {
        report,
        streams,
        models,
        prenull,
        weight_drift,
    })
}

/// One row per contamination level.
pub fn scan_table_csv(scan: &CoherenceScan) -> String {
    let mut s = String::from(
        "level,mean_gamma_sq,probe_hz,probe_gamma_sq,probe_alpha_db,probe_achieved_db,reliable_bins,violations\n",
    );
    for p in &scan.points {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            sig9(p.level),
            sig9(p.mean_gamma_sq),
            scan.probe_hz,
            sig9(p.probe_gamma_sq),
            sig9(p.probe_alpha_db),
            sig9(p.probe_achieved_db),
            p.reliable_bins,
            p.violations
        );
    }
    s
}

/// Every bin of every level.
pub fn scan_bins_csv(scan: &CoherenceScan) -> String {
    let mut s = String::from("level,frequency_hz,gamma_sq,alpha_db,achieved_db,reliable\n");
    for p in &scan.points {
        for b in &p.bins {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                sig9(p.level),
                sig9(b.frequency_hz),
                sig9(b.gamma_sq),
                sig9(b.alpha_db),
                sig9(b.achieved_db),
                b.reliable
            );
        }
    }
    s
}

/// Coherence scan over `levels` (the config's levels when `None`).
pub fn coherence(
    config: &ExperimentConfig,
    out: &Path,
    levels: Option<&[f64]>,
    estimate_first: bool,
    models_dir: Option<&Path>,
) -> Result<CoherenceScan> {
    config.validate()?;
    let levels = levels.unwrap_or(&config.coherence.levels);
    if levels.is_empty() {
        return Err(AncError::config("coherence scan needs at least one contamination level"));
    }
    let mut dir = RunDirectory::create(out, config)?;
    let (models, prenull) = models_and_prenull(config, &mut dir, estimate_first, models_dir, true)?;
    let models = models.expect("models requested");
    let scan = coherence_scan(config, &models, &prenull, levels)?;
    dir.write_csv("coherence_scan.csv", &scan_table_csv(&scan))?;
    dir.write_csv("coherence.csv", &scan_bins_csv(&scan))?;
    let json = serde_json::to_string_pretty(&scan).map_err(|e| AncError::Format(e.to_string()))?;
    dir.write_text("coherence_scan.json", &(json + "\n"))?;
    dir.finish("coherence", &[], Some(&prenull), Some(&models))?;
    Ok(scan)
}
