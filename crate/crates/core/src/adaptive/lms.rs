use crate::error::{AncError, Result};
use crate::signal::DelayLine;

/// Coefficient L2 norm beyond which an adaptive filter is declared divergent.
pub const DIVERGENCE_NORM: f64 = 1e6;

/// FIR filter with adaptable coefficients and its own input delay line.
#[derive(Debug, Clone)]
pub struct AdaptiveFir {
    coefficients: Vec<f64>,
    delay_line: DelayLine,
    mu: f64,
}

impl AdaptiveFir {
    /// Zero-initialised filter.
    pub fn new(taps: usize, mu: f64) -> Result<Self> {
        if taps == 0 {
            return Err(AncError::invalid("adaptive filter needs at least one tap"));
        }
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(AncError::invalid(format!("step size must be positive, got {mu}")));
        }
        Ok(Self {
            coefficients: vec![0.0; taps],
            delay_line: DelayLine::new(taps),
            mu,
        })
    }

    pub fn with_coefficients(coefficients: Vec<f64>, mu: f64) -> Result<Self> {
        let mut f = Self::new(coefficients.len(), mu)?;
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(AncError::invalid("coefficients must be finite"));
        }
        f.coefficients = coefficients;
        Ok(f)
    }

    pub fn taps(&self) -> usize {
        self.coefficients.len()
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn delay_line(&self) -> &[f64] {
        self.delay_line.as_slice()
    }

    /// Shift a new input sample into the delay line.
    pub fn push(&mut self, input: f64) {
        self.delay_line.push(input);
    }

    /// Filter output for the current delay line, `Σ c_i y(n-i)`.
    pub fn predict(&self) -> f64 {
        self.delay_line.dot(&self.coefficients)
    }

    /// LMS step `c_i += μ e' y(n-i)`. The delay line is not touched.
    pub fn update(&mut self, error: f64) -> Result<()> {
        if !error.is_finite() {
            return Err(AncError::Divergence {
                context: String::new(),
                step: 0,
                reason: format!("non-finite error {error}"),
            });
        }
        let g = self.mu * error;
        for (c, y) in self.coefficients.iter_mut().zip(self.delay_line.as_slice()) {
            *c += g * y;
        }
        Ok(())
    }

    pub fn norm(&self) -> f64 {
        self.coefficients.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    /// Divergence check: non-finite coefficients or norm above `limit`.
    pub fn check(&self, step: u64, limit: f64) -> Result<()> {
        let n = self.norm();
        if !n.is_finite() {
            return Err(AncError::Divergence {
                context: String::new(),
                step,
                reason: "non-finite coefficient".into(),
            });
        }
        if n > limit {
            return Err(AncError::Divergence {
                context: String::new(),
                step,
                reason: format!("coefficient norm {n:.3e} exceeds {limit:.1e}"),
            });
        }
        Ok(())
    }
}

/// Upper step-size bound `1 / (M P)` for an `M`-tap LMS filter driven by a
/// signal of power `P`.
pub fn stability_bound(taps: usize, signal_power: f64) -> Result<f64> {
    if taps == 0 {
        return Err(AncError::invalid("tap count must be positive"));
    }
    if !(signal_power > 0.0 && signal_power.is_finite()) {
        return Err(AncError::invalid(format!(
            "signal power must be positive, got {signal_power}"
        )));
    }
    Ok(1.0 / (taps as f64 * signal_power))
}
