use serde::{Deserialize, Serialize};

use super::{Pid, PidGains};
use crate::error::{AncError, Result};
use crate::plant::Rig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrenullConfig {
    /// Largest tolerated moving-average error, nT.
    pub threshold_nt: f64,
    pub average_s: f64,
    /// How long the average must stay under the threshold.
    pub hold_s: f64,
    pub timeout_s: f64,
}

impl Default for PrenullConfig {
    fn default() -> Self {
        Self {
            threshold_nt: 5.0,
            average_s: 0.1,
            hold_s: 1.0,
            timeout_s: 30.0,
        }
    }
}

impl PrenullConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("threshold_nt", self.threshold_nt),
            ("average_s", self.average_s),
            ("hold_s", self.hold_s),
            ("timeout_s", self.timeout_s),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(AncError::config(format!("prenull.{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Frozen DC drives plus what the sensors read while they were measured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrenullResult {
    pub offsets: [f64; 3],
    /// Mean reference reading over the hold period: the static field the
    /// reference sensor sees.
    pub reference_baseline_nt: [f64; 3],
    pub residual_mean_nt: [f64; 3],
    pub settle_time_s: f64,
}

impl PrenullResult {
    pub fn zero() -> Self {
        Self {
            offsets: [0.0; 3],
            reference_baseline_nt: [0.0; 3],
            residual_mean_nt: [0.0; 3],
            settle_time_s: 0.0,
        }
    }
}

/// Run three PID loops on the error sensors until every axis' moving-average
/// error stays below the threshold for the hold time, then return the mean
/// drive over that hold period.
pub fn dc_prenull(rig: &mut Rig, gains: &PidGains, config: &PrenullConfig) -> Result<PrenullResult> {
    config.validate()?;
    let fs = rig.sample_rate_hz();
    let avg_len = ((config.average_s * fs).round() as usize).max(1);
    let hold_len = ((config.hold_s * fs).round() as usize).max(1);
    let timeout = (config.timeout_s * fs).round() as u64;
    let mut pids = [Pid::new(*gains)?, Pid::new(*gains)?, Pid::new(*gains)?];

    let mut window = vec![[0.0; 3]; avg_len];
    let mut window_sum = [0.0; 3];
    let mut filled = 0usize;
    // Per-tick history of drives and reference readings over the hold period.
    let mut drives_hist = vec![[0.0; 3]; hold_len];
    let mut ref_hist = vec![[0.0; 3]; hold_len];
    let mut err_hist = vec![[0.0; 3]; hold_len];
    let mut settled = 0usize;

    for n in 0..timeout {
        let r = rig.observe();
        let mut drives = [0.0; 3];
        for axis in 0..3 {
            let e = r.error_sensor_nt[axis];
            drives[axis] = pids[axis].step(-e).map_err(|err| AncError::Degenerate(format!("pre-null: {err}")))?;
            let slot = &mut window[n as usize % avg_len];
            window_sum[axis] += e - slot[axis];
            slot[axis] = e;
        }
        filled = (filled + 1).min(avg_len);
        rig.actuate(drives);

        let h = n as usize % hold_len;
        drives_hist[h] = drives;
        ref_hist[h] = r.reference_sensor_nt;
        err_hist[h] = r.error_sensor_nt;

        let means = window_sum.map(|s| s / avg_len as f64);
        if filled == avg_len && means.iter().all(|m| m.abs() < config.threshold_nt) {
            settled += 1;
        } else {
            settled = 0;
        }
        if settled >= hold_len {
            let mean_of = |hist: &[[f64; 3]]| {
                let mut m = [0.0; 3];
                for row in hist {
                    for i in 0..3 {
                        m[i] += row[i];
                    }
                }
                m.map(|v| v / hist.len() as f64)
            };
            return Ok(PrenullResult {
                offsets: mean_of(&drives_hist),
                reference_baseline_nt: mean_of(&ref_hist),
                residual_mean_nt: mean_of(&err_hist),
                settle_time_s: (n + 1) as f64 / fs,
            });
        }
    }
    Err(AncError::PrenullTimeout {
        timeout_s: config.timeout_s,
        final_mean_nt: window_sum.map(|s| s / avg_len as f64),
        saturated: pids.iter().any(|p| p.at_limit()),
    })
}
