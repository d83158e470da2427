use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::config::{Axis, ExperimentConfig};
use super::stages::{Stage, StageStreams};
use crate::adaptive::convergence_time;
use crate::error::{AncError, Result};
use crate::signal::{
    cancellation_ceiling_db, coherence, field_rms_to_larmor_hz, sig9, welch_psd, SampleBuffer, SpectrumEstimate,
    CANCELLATION_CEILING_DB, CESIUM_HZ_PER_NT,
};

/// Line frequencies whose suppression is tabulated.
pub const REPORT_TONES_HZ: [f64; 2] = [50.0, 150.0];

/// A suppression figure, or a lower bound when the controlled level sits
/// within twice the sensor noise floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "db", rename_all = "snake_case")]
pub enum Suppression {
    Value(f64),
    AtLeast(f64),
}

impl Suppression {
    /// `before` and `after` are amplitudes (RMS or ASD) on the same scale as `floor`.
    pub fn from_amplitudes(before: f64, after: f64, floor: f64) -> Suppression {
        if after < 2.0 * floor {
            Suppression::AtLeast(20.0 * (before / (2.0 * floor)).log10())
        } else {
            Suppression::Value(20.0 * (before / after).log10())
        }
    }

    pub fn db(&self) -> f64 {
        match *self {
            Suppression::Value(v) | Suppression::AtLeast(v) => v,
        }
    }

    /// The figure itself, or the bound it is known to exceed.
    pub fn lower_bound_db(&self) -> f64 {
        self.db()
    }

    pub fn is_bound(&self) -> bool {
        matches!(self, Suppression::AtLeast(_))
    }

    pub fn to_csv(&self) -> String {
        match *self {
            Suppression::Value(v) => sig9(v),
            Suppression::AtLeast(v) => format!(">={}", sig9(v)),
        }
    }
}

/// Everything a run recorded. Phase-1 buffers hold the active axis only.
#[derive(Debug, Clone, Default)]
pub struct RecordedStreams {
    pub raw: Option<StageStreams>,
    pub pid: Option<StageStreams>,
    pub anc: Option<StageStreams>,
    pub anc_phase1_error: Option<[SampleBuffer; 3]>,
}

impl RecordedStreams {
    pub fn get(&self, stage: Stage) -> Option<&StageStreams> {
        match stage {
            Stage::Raw => self.raw.as_ref(),
            Stage::Pid => self.pid.as_ref(),
            Stage::Anc => self.anc.as_ref(),
        }
    }

    pub fn set(&mut self, stage: Stage, streams: StageStreams) {
        match stage {
            Stage::Raw => self.raw = Some(streams),
            Stage::Pid => self.pid = Some(streams),
            Stage::Anc => self.anc = Some(streams),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub axis: String,
    pub stage: Stage,
    pub band_lo_hz: f64,
    pub band_hi_hz: f64,
    pub rms_nt: f64,
    pub rms_larmor_hz: f64,
    /// Band RMS suppression relative to the raw stage.
    pub band_suppression_db: Option<Suppression>,
    pub supp_50hz_db: Option<Suppression>,
    pub supp_150hz_db: Option<Suppression>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToneRow {
    pub axis: String,
    pub stage: Stage,
    pub frequency_hz: f64,
    /// Amplitude spectral density at the nearest bin, nT/√Hz.
    pub asd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub axis: String,
    pub phase1_s: Option<f64>,
    pub phase2_s: Option<f64>,
}

/// Reference/error coherence of the uncontrolled stage and its ceiling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceTable {
    pub frequencies_hz: Vec<f64>,
    pub gamma_sq: [Vec<f64>; 3],
    pub alpha_db: [Vec<f64>; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config_hash: String,
    pub seed: u64,
    pub analysis_s: f64,
    pub stages: Vec<Stage>,
    pub rows: Vec<ReportRow>,
    pub tones: Vec<ToneRow>,
    pub convergence: Vec<ConvergenceRow>,
    pub coherence: Option<CoherenceTable>,
}

impl RunReport {
    pub fn row(&self, axis: Axis, stage: Stage, band: [f64; 2]) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.axis == axis.name() && r.stage == stage && r.band_lo_hz == band[0] && r.band_hi_hz == band[1])
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("axis,stage,band_lo_hz,band_hi_hz,rms_nt,rms_larmor_hz,supp_50hz_db,supp_150hz_db\n");
        let opt = |v: &Option<Suppression>| v.map(|s| s.to_csv()).unwrap_or_default();
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.axis,
                r.stage,
                r.band_lo_hz,
                r.band_hi_hz,
                sig9(r.rms_nt),
                sig9(r.rms_larmor_hz),
                opt(&r.supp_50hz_db),
                opt(&r.supp_150hz_db)
            );
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| AncError::Format(e.to_string()))
    }
}

/// The trailing analysis window of a stream.
pub fn analysis_window(buffer: &SampleBuffer, config: &ExperimentConfig) -> SampleBuffer {
    buffer.tail(config.samples(config.analysis_s))
}

fn centred(b: &SampleBuffer) -> Result<SampleBuffer> {
    let m = b.mean();
    SampleBuffer::new(b.samples().iter().map(|v| v - m).collect(), b.sample_rate_hz())
}

/// Error-sensor PSD of each axis over the analysis window.
pub fn error_psd(streams: &StageStreams, config: &ExperimentConfig) -> Result<[SpectrumEstimate; 3]> {
    let f = |i: usize| welch_psd(&analysis_window(&streams.error[i], config), &config.welch);
    Ok([f(0)?, f(1)?, f(2)?])
}

/// Reduce recorded streams to the report. Pure: the same streams and config
/// always give the same report.
pub fn build_report(streams: &RecordedStreams, config: &ExperimentConfig, stages: &[Stage]) -> Result<RunReport> {
    let mut stages: Vec<Stage> = stages.to_vec();
    stages.sort();
    stages.dedup();
    if stages.is_empty() {
        return Err(AncError::config("no stages requested"));
    }
    let fs = config.sample_rate_hz;
    let mut psds = Vec::with_capacity(stages.len());
    for &stage in &stages {
        let s = streams
            .get(stage)
            .ok_or_else(|| AncError::MissingStage(format!("no recorded streams for stage '{stage}'")))?;
        for b in s.error.iter().chain(&s.reference) {
            if b.sample_rate_hz() != fs {
                return Err(AncError::Mismatch(format!(
                    "stage '{stage}' recorded at {} Hz, config says {fs} Hz",
                    b.sample_rate_hz()
                )));
            }
        }
        psds.push((stage, error_psd(s, config)?));
    }
    let raw_psd = psds.iter().find(|(s, _)| *s == Stage::Raw).map(|(_, p)| p.clone());
    let floors: Vec<f64> = config
        .channels
        .iter()
        .map(|c| c.noise_floor_psd(fs))
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    let mut tones = Vec::new();
    for axis in Axis::ALL {
        let i = axis.index();
        let floor_asd = floors[i].sqrt();
        for (stage, psd) in &psds {
            let tone_supp = |f: f64| {
                raw_psd.as_ref().filter(|_| *stage != Stage::Raw).map(|raw| {
                    Suppression::from_amplitudes(raw[i].value_at(f).sqrt(), psd[i].value_at(f).sqrt(), floor_asd)
                })
            };
            for band in &config.report_bands {
                let rms = psd[i].band_integral(band[0], band[1]).max(0.0).sqrt();
                let band_supp = raw_psd.as_ref().filter(|_| *stage != Stage::Raw).map(|raw| {
                    let before = raw[i].band_integral(band[0], band[1]).max(0.0).sqrt();
                    let floor_rms = (floors[i] * (band[1] - band[0])).sqrt();
                    Suppression::from_amplitudes(before, rms, floor_rms)
                });
                rows.push(ReportRow {
                    axis: axis.name().to_string(),
                    stage: *stage,
                    band_lo_hz: band[0],
                    band_hi_hz: band[1],
                    rms_nt: rms,
                    rms_larmor_hz: field_rms_to_larmor_hz(rms, CESIUM_HZ_PER_NT)?,
                    band_suppression_db: band_supp,
                    supp_50hz_db: tone_supp(REPORT_TONES_HZ[0]),
                    supp_150hz_db: tone_supp(REPORT_TONES_HZ[1]),
                });
            }
            for f in REPORT_TONES_HZ {
                tones.push(ToneRow {
                    axis: axis.name().to_string(),
                    stage: *stage,
                    frequency_hz: psd[i].frequencies()[psd[i].nearest_bin(f)],
                    asd: psd[i].value_at(f).sqrt(),
                });
            }
        }
    }

    let mut convergence = Vec::new();
    if let Some(anc) = stages.contains(&Stage::Anc).then(|| streams.anc.as_ref()).flatten() {
        let (w, tol) = (config.anc.convergence_window_s, config.anc.convergence_tolerance);
        for axis in Axis::ALL {
            let i = axis.index();
            let phase1_s = match &streams.anc_phase1_error {
                Some(p) if p[i].duration_s() >= 2.0 * w => convergence_time(&p[i], w, tol)?,
                _ => None,
            };
            let phase2_s = if anc.error[i].duration_s() >= 2.0 * w {
                convergence_time(&anc.error[i], w, tol)?
            } else {
                None
            };
            convergence.push(ConvergenceRow {
                axis: axis.name().to_string(),
                phase1_s,
                phase2_s,
            });
        }
    }

    let coherence_table = match streams.raw.as_ref().filter(|_| stages.contains(&Stage::Raw)) {
        Some(raw) => {
            let mut gamma_sq: [Vec<f64>; 3] = Default::default();
            let mut alpha_db: [Vec<f64>; 3] = Default::default();
            let mut frequencies_hz = Vec::new();
            for i in 0..3 {
                let r = centred(&analysis_window(&raw.reference[i], config))?;
                let e = centred(&analysis_window(&raw.error[i], config))?;
                let coh = coherence(&r, &e, &config.welch)?;
                frequencies_hz = coh.frequencies().to_vec();
                alpha_db[i] = coh
                    .values()
                    .iter()
                    .map(|g| cancellation_ceiling_db(*g, CANCELLATION_CEILING_DB))
                    .collect();
                gamma_sq[i] = coh.values().to_vec();
            }
            Some(CoherenceTable {
                frequencies_hz,
                gamma_sq,
                alpha_db,
            })
        }
        None => None,
    };

    Ok(RunReport {
        config_hash: config.hash(),
        seed: config.seed,
        analysis_s: config.analysis_s,
        stages,
        rows,
        tones,
        convergence,
        coherence: coherence_table,
    })
}

/// `frequency_hz` then one ASD column per stage, for one axis.
pub fn spectra_csv(streams: &RecordedStreams, config: &ExperimentConfig, stages: &[Stage], axis: Axis) -> Result<String> {
    let mut cols = Vec::new();
    for &stage in stages {
        if let Some(s) = streams.get(stage) {
            let psd = welch_psd(&analysis_window(&s.error[axis.index()], config), &config.welch)?;
            cols.push((stage, psd.sqrt()));
        }
    }
    let mut out = String::from("frequency_hz");
    for (stage, _) in &cols {
        let _ = write!(out, ",asd_{stage}_nt_per_rthz");
    }
    out.push('\n');
    if let Some((_, first)) = cols.first() {
        for (k, f) in first.frequencies().iter().enumerate() {
            out.push_str(&sig9(*f));
            for (_, c) in &cols {
                let _ = write!(out, ",{}", sig9(c.values()[k]));
            }
            out.push('\n');
        }
    }
    Ok(out)
}

/// The final `seconds` of each stage's error stream for one axis.
pub fn trace_csv(streams: &RecordedStreams, stages: &[Stage], axis: Axis, seconds: f64) -> Result<String> {
    let mut cols = Vec::new();
    for &stage in stages {
        if let Some(s) = streams.get(stage) {
            let b = &s.error[axis.index()];
            let n = (seconds * b.sample_rate_hz()).round() as usize;
            cols.push((stage, b.tail(n)));
        }
    }
    let mut out = String::from("time_s");
    for (stage, _) in &cols {
        let _ = write!(out, ",{stage}_nt");
    }
    out.push('\n');
    let len = cols.iter().map(|(_, b)| b.len()).min().unwrap_or(0);
    if let Some((_, first)) = cols.first() {
        let dt = 1.0 / first.sample_rate_hz();
        for k in 0..len {
            out.push_str(&sig9(k as f64 * dt));
            for (_, b) in &cols {
                let _ = write!(out, ",{}", sig9(b.samples()[b.len() - len + k]));
            }
            out.push('\n');
        }
    }
    Ok(out)
}

/// Long-format per-axis coherence: `frequency_hz,gamma_sq_x,alpha_db_x,...`.
pub fn coherence_csv(table: &CoherenceTable) -> String {
    let mut out = String::from("frequency_hz");
    for axis in Axis::ALL {
        let _ = write!(out, ",gamma_sq_{0},alpha_db_{0}", axis.name());
    }
    out.push('\n');
    for (k, f) in table.frequencies_hz.iter().enumerate() {
        out.push_str(&sig9(*f));
        for i in 0..3 {
            let _ = write!(out, ",{},{}", sig9(table.gamma_sq[i][k]), sig9(table.alpha_db[i][k]));
        }
        out.push('\n');
    }
    out
}
