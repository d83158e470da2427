use serde::{Deserialize, Serialize};

use crate::error::{AncError, Result};

/// Mid-tread ADC model: rounds to the nearest code and clips at full scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantizer {
    bits: u32,
    range: f64,
    step: f64,
}

impl Quantizer {
    /// `bits`-bit converter spanning `±range`.
    pub fn new(bits: u32, range: f64) -> Result<Self> {
        if !(8..=32).contains(&bits) {
            return Err(AncError::invalid(format!("ADC bits must be in 8..=32, got {bits}")));
        }
        if !(range > 0.0 && range.is_finite()) {
            return Err(AncError::invalid(format!("ADC range must be positive, got {range}")));
        }
        Ok(Self {
            bits,
            range,
            step: 2.0 * range / 2f64.powi(bits as i32),
        })
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn range(&self) -> f64 {
        self.range
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    /// Quantized value and whether it was clipped.
    pub fn quantize(&self, v: f64) -> (f64, bool) {
        let max_code = 2f64.powi(self.bits as i32 - 1) - 1.0;
        let min_code = -2f64.powi(self.bits as i32 - 1);
        let code = (v / self.step).round();
        if code > max_code {
            (max_code * self.step, true)
        } else if code < min_code {
            (min_code * self.step, true)
        } else {
            (code * self.step, false)
        }
    }

    /// Variance of the rounding error for in-range signals.
    pub fn noise_power(&self) -> f64 {
        self.step * self.step / 12.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn step_size() {
        let q = Quantizer::new(16, 100.0).unwrap();
        assert!((q.step() - 200.0 / 65536.0).abs() < 1e-18);
        assert!((q.step() - 0.00305).abs() < 1e-5);
    }

    #[test]
    fn mid_tread_zero() {
        let q = Quantizer::new(8, 1.0).unwrap();
        assert_eq!(q.quantize(0.0), (0.0, false));
        assert_eq!(q.quantize(0.4 * q.step()), (0.0, false));
    }

    #[test]
    fn clips_and_flags() {
        let q = Quantizer::new(8, 1.0).unwrap();
        let (v, sat) = q.quantize(5.0);
        assert!(sat);
        assert!((v - (1.0 - q.step())).abs() < 1e-15);
        let (v, sat) = q.quantize(-5.0);
        assert!(sat);
        assert_eq!(v, -1.0);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(Quantizer::new(4, 1.0).is_err());
        assert!(Quantizer::new(16, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn error_within_half_step(bits in 8u32..24, range in 1.0f64..1e5, frac in -0.99f64..0.99) {
            let q = Quantizer::new(bits, range).unwrap();
            let v = frac * range;
            let (out, sat) = q.quantize(v);
            prop_assert!(!sat);
            prop_assert!((out - v).abs() <= q.step() / 2.0 * (1.0 + 1e-12));
        }
    }
}
