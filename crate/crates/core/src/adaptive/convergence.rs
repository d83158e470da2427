use crate::error::{AncError, Result};
use crate::signal::SampleBuffer;

/// Consecutive stable window pairs required before declaring steady state.
pub const STABLE_PAIRS: usize = 3;

/// RMS of consecutive non-overlapping windows.
pub fn window_rms(history: &[f64], window: usize) -> Vec<f64> {
    history
        .chunks_exact(window)
        .map(|c| (c.iter().map(|v| v * v).sum::<f64>() / window as f64).sqrt())
        .collect()
}

fn stable(a: f64, b: f64, rel_tolerance: f64) -> bool {
    if a == 0.0 {
        return b == 0.0;
    }
    (b / a - 1.0).abs() < rel_tolerance
}

fn window_len(history: &SampleBuffer, window_s: f64) -> Result<usize> {
    let w = (window_s * history.sample_rate_hz()).round() as usize;
    if w == 0 {
        return Err(AncError::invalid("convergence window shorter than one sample"));
    }
    if history.len() < 2 * w {
        return Err(AncError::invalid(format!(
            "history of {} samples covers fewer than two {window_s} s windows",
            history.len()
        )));
    }
    Ok(w)
}

/// True when the most recent windows show a steady error level: the RMS of
/// each window differs from the previous one by less than `rel_tolerance`
/// for three consecutive windows.
pub fn detect_convergence(history: &SampleBuffer, window_s: f64, rel_tolerance: f64) -> Result<bool> {
    let w = window_len(history, window_s)?;
    let rms = window_rms(history.samples(), w);
    if rms.len() < STABLE_PAIRS + 1 {
        return Ok(false);
    }
    Ok(rms[rms.len() - STABLE_PAIRS - 1..]
        .windows(2)
        .all(|p| stable(p[0], p[1], rel_tolerance)))
}

/// Time (end of the last window of the first stable run) at which the error
/// first settled, if it did.
pub fn convergence_time(history: &SampleBuffer, window_s: f64, rel_tolerance: f64) -> Result<Option<f64>> {
    let w = window_len(history, window_s)?;
    let mut monitor = ConvergenceMonitor::new(w, rel_tolerance);
    for (n, e) in history.samples().iter().enumerate() {
        if monitor.push(*e) {
            return Ok(Some((n + 1) as f64 / history.sample_rate_hz()));
        }
    }
    Ok(None)
}

/// Streaming form of [`detect_convergence`] for use inside a control loop.
#[derive(Debug, Clone)]
pub struct ConvergenceMonitor {
    window: usize,
    rel_tolerance: f64,
    acc: f64,
    count: usize,
    last_rms: Option<f64>,
    stable_run: usize,
}

impl ConvergenceMonitor {
    pub fn new(window: usize, rel_tolerance: f64) -> Self {
        Self {
            window: window.max(1),
            rel_tolerance,
            acc: 0.0,
            count: 0,
            last_rms: None,
            stable_run: 0,
        }
    }

    /// Feed one error sample; true once the steady-state condition holds.
    pub fn push(&mut self, e: f64) -> bool {
        self.acc += e * e;
        self.count += 1;
        if self.count < self.window {
            return self.converged();
        }
        let rms = (self.acc / self.window as f64).sqrt();
        self.acc = 0.0;
        self.count = 0;
        if let Some(prev) = self.last_rms {
            if stable(prev, rms, self.rel_tolerance) {
                self.stable_run += 1;
            } else {
                self.stable_run = 0;
            }
        }
        self.last_rms = Some(rms);
        self.converged()
    }

    pub fn converged(&self) -> bool {
        self.stable_run >= STABLE_PAIRS
    }

    pub fn last_rms(&self) -> Option<f64> {
        self.last_rms
    }
}
