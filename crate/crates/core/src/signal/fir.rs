use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::SampleBuffer;
use crate::error::{AncError, Result};

/// Fixed-coefficient FIR filter.
///
/// Applied at rate `f_s`, an `M`-tap filter resolves frequencies down to
/// `f_s / M`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FirFilter {
    coefficients: Vec<f64>,
}

impl FirFilter {
    pub fn new(coefficients: Vec<f64>) -> Result<Self> {
        if coefficients.is_empty() {
            return Err(AncError::invalid("FIR filter needs at least one tap"));
        }
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(AncError::invalid("FIR coefficients must be finite"));
        }
        Ok(Self { coefficients })
    }

    pub fn identity() -> Self {
        Self {
            coefficients: vec![1.0],
        }
    }

    /// Pure `k`-sample delay.
    pub fn delay(k: usize) -> Self {
        let mut coefficients = vec![0.0; k + 1];
        coefficients[k] = 1.0;
        Self { coefficients }
    }

    /// Hamming-windowed sinc low-pass with unity DC gain.
    pub fn lowpass(taps: usize, cutoff_hz: f64, sample_rate_hz: f64) -> Result<Self> {
        if taps == 0 {
            return Err(AncError::invalid("low-pass needs at least one tap"));
        }
        if !(cutoff_hz > 0.0 && cutoff_hz < sample_rate_hz / 2.0) {
            return Err(AncError::invalid(format!(
                "cutoff {cutoff_hz} Hz must lie in (0, {}) Hz",
                sample_rate_hz / 2.0
            )));
        }
        let fc = cutoff_hz / sample_rate_hz;
        let mid = (taps as f64 - 1.0) / 2.0;
        let mut h: Vec<f64> = (0..taps)
            .map(|i| {
                let t = i as f64 - mid;
                let sinc = if t == 0.0 {
                    2.0 * fc
                } else {
                    (2.0 * PI * fc * t).sin() / (PI * t)
                };
                let window = if taps == 1 {
                    1.0
                } else {
                    0.54 - 0.46 * (2.0 * PI * i as f64 / (taps as f64 - 1.0)).cos()
                };
                sinc * window
            })
            .collect();
        let dc: f64 = h.iter().sum();
        h.iter_mut().for_each(|c| *c /= dc);
        Self::new(h)
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn taps(&self) -> usize {
        self.coefficients.len()
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            coefficients: self.coefficients.iter().map(|c| c * gain).collect(),
        }
    }

    /// Series connection: the filter equal to applying `self` then `other`.
    pub fn then(&self, other: &FirFilter) -> FirFilter {
        FirFilter {
            coefficients: convolve(&self.coefficients, &other.coefficients),
        }
    }

    pub fn dc_gain(&self) -> f64 {
        self.coefficients.iter().sum()
    }

    pub fn energy(&self) -> f64 {
        self.coefficients.iter().map(|c| c * c).sum()
    }

    /// Frequency resolution at the given sample rate.
    pub fn resolution_hz(&self, sample_rate_hz: f64) -> f64 {
        sample_rate_hz / self.taps() as f64
    }
}

impl TryFrom<Vec<f64>> for FirFilter {
    type Error = AncError;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        FirFilter::new(v)
    }
}

impl From<FirFilter> for Vec<f64> {
    fn from(f: FirFilter) -> Self {
        f.coefficients
    }
}

/// Full linear convolution of two sequences (length `a + b - 1`).
pub fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Filter `input` from a zero initial state; output has the input's length.
pub fn fir_apply(filter: &FirFilter, input: &SampleBuffer) -> Result<SampleBuffer> {
    if input.is_empty() {
        return Err(AncError::Degenerate("cannot filter an empty signal".into()));
    }
    let x = input.samples();
    let h = filter.coefficients();
    let out: Vec<f64> = (0..x.len())
        .map(|n| {
            let kmax = h.len().min(n + 1);
            h[..kmax]
                .iter()
                .enumerate()
                .map(|(i, c)| c * x[n - i])
                .sum()
        })
        .collect();
    SampleBuffer::new(out, input.sample_rate_hz())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn buf(v: &[f64]) -> SampleBuffer {
        SampleBuffer::new(v.to_vec(), 1000.0).unwrap()
    }

    // Independent oracle: y[n] = sum_k x[k] h[n-k] over all valid k.
    fn direct_double_sum(h: &[f64], x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; x.len()];
        for n in 0..x.len() {
            for k in 0..=n {
                let j = n - k;
                if j < h.len() {
                    y[n] += x[k] * h[j];
                }
            }
        }
        y
    }

    #[test]
    fn identity_filter() {
        let y = fir_apply(&FirFilter::identity(), &buf(&[3.0, -2.0, 5.0])).unwrap();
        assert_eq!(y.samples(), &[3.0, -2.0, 5.0]);
    }

    #[test]
    fn unit_delay() {
        let f = FirFilter::new(vec![0.0, 1.0]).unwrap();
        let y = fir_apply(&f, &buf(&[1.0, 0.0, 0.0])).unwrap();
        assert_eq!(y.samples(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn empty_input_is_degenerate() {
        let e = SampleBuffer::new(vec![], 10.0).unwrap();
        assert!(matches!(
            fir_apply(&FirFilter::identity(), &e),
            Err(AncError::Degenerate(_))
        ));
    }

    #[test]
    fn matches_double_sum_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = fir_apply(&FirFilter::new(h.clone()).unwrap(), &buf(&x)).unwrap();
        let oracle = direct_double_sum(&h, &x);
        for (a, b) in y.samples().iter().zip(&oracle) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn lowpass_is_symmetric_with_unit_dc() {
        let f = FirFilter::lowpass(63, 1000.0, 5000.0).unwrap();
        assert_eq!(f.taps(), 63);
        assert!((f.dc_gain() - 1.0).abs() < 1e-12);
        let c = f.coefficients();
        for i in 0..63 {
            assert!((c[i] - c[62 - i]).abs() < 1e-15);
        }
        let peak = c
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(peak, 31);
        assert!((f.resolution_hz(5000.0) - 5000.0 / 63.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_filters() {
        assert!(FirFilter::new(vec![]).is_err());
        assert!(FirFilter::new(vec![f64::NAN]).is_err());
        assert!(FirFilter::lowpass(10, 3000.0, 5000.0).is_err());
    }

    proptest! {
        #[test]
        fn linearity(
            h in prop::collection::vec(-1.0f64..1.0, 1..10),
            xy in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..50),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
        ) {
            let f = FirFilter::new(h).unwrap();
            let x: Vec<f64> = xy.iter().map(|p| p.0).collect();
            let y: Vec<f64> = xy.iter().map(|p| p.1).collect();
            let mix: Vec<f64> = xy.iter().map(|p| a * p.0 + b * p.1).collect();
            let lhs = fir_apply(&f, &buf(&mix)).unwrap();
            let fx = fir_apply(&f, &buf(&x)).unwrap();
            let fy = fir_apply(&f, &buf(&y)).unwrap();
            for i in 0..mix.len() {
                let rhs = a * fx.samples()[i] + b * fy.samples()[i];
                prop_assert!((lhs.samples()[i] - rhs).abs() < 1e-9);
            }
        }

        #[test]
        fn cascade_equals_coefficient_product(
            f in prop::collection::vec(-1.0f64..1.0, 1..6),
            g in prop::collection::vec(-1.0f64..1.0, 1..6),
            x in prop::collection::vec(-5.0f64..5.0, 1..40),
        ) {
            // Polynomial multiplication written out independently of `convolve`.
            let mut prod = vec![0.0; f.len() + g.len() - 1];
            for (i, fi) in f.iter().enumerate() {
                for (j, gj) in g.iter().enumerate() {
                    prod[i + j] += fi * gj;
                }
            }
            let ff = FirFilter::new(f).unwrap();
            let gf = FirFilter::new(g).unwrap();
            let two_step = fir_apply(&gf, &fir_apply(&ff, &buf(&x)).unwrap()).unwrap();
            let one_step = fir_apply(&FirFilter::new(prod).unwrap(), &buf(&x)).unwrap();
            let via_then = fir_apply(&ff.then(&gf), &buf(&x)).unwrap();
            for i in 0..x.len() {
                prop_assert!((two_step.samples()[i] - one_step.samples()[i]).abs() < 1e-9);
                prop_assert!((via_then.samples()[i] - one_step.samples()[i]).abs() < 1e-9);
            }
        }
    }
}
