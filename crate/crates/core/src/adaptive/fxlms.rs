//! Filtered-x LMS anti-noise engine.
//!
//! Per sample the caller runs, in order: [`FxLms::filter_reference`] with the
//! new reference reading, [`FxLms::compute_antinoise`] to get the actuator
//! drive, and, once the error sensor has been read, [`FxLms::update`].

use super::identify::SecondaryPathModel;
use super::lms::DIVERGENCE_NORM;
use crate::error::{AncError, Result};
use crate::signal::DelayLine;

#[derive(Debug, Clone)]
pub struct FxLms {
    w: Vec<f64>,
    model: Vec<f64>,
    x_history: DelayLine,
    xf_history: DelayLine,
    mu: f64,
    // -1 for the correct update; +1 only exists to test the sign.
    sign: f64,
    steps: u64,
}

impl FxLms {
    /// Zero-initialised `taps`-coefficient filter with frozen path model.
    pub fn new(taps: usize, model: &SecondaryPathModel, mu: f64) -> Result<Self> {
        Self::with_weights(vec![0.0; taps], model, mu)
    }

    pub fn with_weights(weights: Vec<f64>, model: &SecondaryPathModel, mu: f64) -> Result<Self> {
        if weights.is_empty() {
            return Err(AncError::invalid("anti-noise filter needs at least one tap"));
        }
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(AncError::invalid(format!("step size must be positive, got {mu}")));
        }
        let taps = weights.len();
        let model = model.coefficients().to_vec();
        Ok(Self {
            x_history: DelayLine::new(taps.max(model.len())),
            xf_history: DelayLine::new(taps),
            w: weights,
            model,
            mu,
            sign: -1.0,
            steps: 0,
        })
    }

    pub fn taps(&self) -> usize {
        self.w.len()
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn set_mu(&mut self, mu: f64) {
        self.mu = mu;
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    /// `x(n-i)` for `i < taps`.
    pub fn x_history(&self) -> &[f64] {
        &self.x_history.as_slice()[..self.w.len()]
    }

    /// `x'(n-i)` for `i < taps`.
    pub fn filtered_history(&self) -> &[f64] {
        self.xf_history.as_slice()
    }

    /// Push `x(n)` and return `x'(n) = Σ c(i) x(n-i)`.
    pub fn filter_reference(&mut self, x: f64) -> f64 {
        self.x_history.push(x);
        let xf = crate::signal::dot(&self.model, self.x_history.as_slice());
        self.xf_history.push(xf);
        xf
    }

    /// Anti-noise drive `y(n) = Σ w_i x(n-i)`.
    pub fn compute_antinoise(&self) -> f64 {
        crate::signal::dot(&self.w, self.x_history.as_slice())
    }

    /// `w_i -= μ e(n) x'(n-i)`.
    pub fn update(&mut self, error: f64) -> Result<()> {
        let step = self.steps;
        self.steps += 1;
        if !error.is_finite() {
            return Err(AncError::Divergence {
                context: String::new(),
                step,
                reason: format!("non-finite error sample {error}"),
            });
        }
        let g = self.sign * self.mu * error;
        for (w, xf) in self.w.iter_mut().zip(self.xf_history.as_slice()) {
            *w += g * xf;
        }
        Ok(())
    }

    pub fn norm(&self) -> f64 {
        self.w.iter().map(|w| w * w).sum::<f64>().sqrt()
    }

    pub fn check(&self, limit: f64) -> Result<()> {
        let n = self.norm();
        if !n.is_finite() || n > limit {
            return Err(AncError::Divergence {
                context: String::new(),
                step: self.steps,
                reason: format!("anti-noise coefficient norm {n:.3e} exceeds {limit:.1e}"),
            });
        }
        Ok(())
    }

    pub fn check_default(&self) -> Result<()> {
        self.check(DIVERGENCE_NORM)
    }

    /// Clear both delay lines, keeping the weights.
    pub fn reset_history(&mut self) {
        self.x_history.clear();
        self.xf_history.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adaptive::stability_bound;
    use crate::signal::{fir_apply, FirFilter, SampleBuffer};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn model(c: &[f64]) -> SecondaryPathModel {
        SecondaryPathModel::from_coefficients(c.to_vec(), 5000.0).unwrap()
    }

    #[test]
    fn identity_path_passes_reference() {
        let mut f = FxLms::new(4, &model(&[1.0]), 0.1).unwrap();
        for x in [0.5, -1.0, 3.0] {
            assert_eq!(f.filter_reference(x), x);
        }
    }

    #[test]
    fn delay_path_delays_impulse() {
        let mut f = FxLms::new(4, &model(&[0.0, 1.0]), 0.1).unwrap();
        let out: Vec<f64> = [1.0, 0.0, 0.0, 0.0]
            .iter()
            .map(|x| f.filter_reference(*x))
            .collect();
        assert_eq!(out, vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn filtered_reference_matches_batch_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let c: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let xs: Vec<f64> = (0..300).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut f = FxLms::new(8, &model(&c), 0.01).unwrap();
        let stream: Vec<f64> = xs.iter().map(|x| f.filter_reference(*x)).collect();
        let batch = fir_apply(
            &FirFilter::new(c).unwrap(),
            &SampleBuffer::new(xs, 5000.0).unwrap(),
        )
        .unwrap();
        for (a, b) in stream.iter().zip(batch.samples()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn silent_before_adaptation() {
        let mut f = FxLms::new(8, &model(&[1.0]), 0.1).unwrap();
        f.filter_reference(5.0);
        assert_eq!(f.compute_antinoise(), 0.0);
    }

    #[test]
    fn antinoise_matches_dot_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut f = FxLms::with_weights(w.clone(), &model(&[1.0]), 0.1).unwrap();
        let xs: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        for x in &xs {
            f.filter_reference(*x);
        }
        let oracle: f64 = (0..6).map(|i| w[i] * xs[5 - i]).sum();
        assert!((f.compute_antinoise() - oracle).abs() < 1e-15);
    }

    #[test]
    fn sign_inversion_cancels_identity_plant() {
        let mut f = FxLms::with_weights(vec![-1.0], &model(&[1.0]), 0.1).unwrap();
        for n in 0..50 {
            let ambient = (n as f64 * 0.3).sin();
            f.filter_reference(ambient);
            let y = f.compute_antinoise();
            let e = ambient + y;
            assert_eq!(e, 0.0);
            f.update(e).unwrap();
        }
        assert_eq!(f.weights(), &[-1.0]);
    }

    #[test]
    fn single_tap_update_substitution() {
        let mut f = FxLms::new(1, &model(&[1.0]), 0.1).unwrap();
        f.filter_reference(1.0);
        f.update(2.0).unwrap();
        assert!((f.weights()[0] + 0.2).abs() < 1e-15);
        f.update(0.0).unwrap();
        assert!((f.weights()[0] + 0.2).abs() < 1e-15);
    }

    #[test]
    fn multi_tap_update_oracle() {
        let mut f = FxLms::with_weights(vec![0.1, 0.2, 0.3], &model(&[0.5, 0.25]), 0.05).unwrap();
        for x in [1.0, -2.0, 0.5] {
            f.filter_reference(x);
        }
        let xf = f.filtered_history().to_vec();
        let before = f.weights().to_vec();
        f.update(1.5).unwrap();
        for i in 0..3 {
            assert!((f.weights()[i] - (before[i] - 0.05 * 1.5 * xf[i])).abs() <= 1e-15);
        }
    }

    #[test]
    fn non_finite_error_diverges() {
        let mut f = FxLms::new(2, &model(&[1.0]), 0.1).unwrap();
        assert!(matches!(f.update(f64::INFINITY), Err(AncError::Divergence { .. })));
    }

    /// Run a 50 Hz tone through an identity plant; return per-second error power.
    fn tonal_run(sign: f64, seconds: usize) -> Result<Vec<f64>> {
        let fs = 5000.0;
        let taps = 32;
        let amp = 1.0;
        // x' equals x for the identity path, so its power is the tone power.
        let mu = 0.1 * stability_bound(taps, amp * amp / 2.0).unwrap();
        let mut f = FxLms::new(taps, &model(&[1.0]), mu).unwrap();
        f.sign = sign;
        let mut powers = Vec::new();
        let mut acc = 0.0;
        for n in 0..seconds * 5000 {
            let d = amp * (2.0 * PI * 50.0 * n as f64 / fs).sin();
            f.filter_reference(d);
            let y = f.compute_antinoise();
            let e = d + y;
            f.update(e)?;
            f.check_default()?;
            acc += e * e;
            if (n + 1) % 5000 == 0 {
                powers.push(acc / 5000.0);
                acc = 0.0;
            }
        }
        Ok(powers)
    }

    #[test]
    fn tone_converges_monotonically() {
        let p = tonal_run(-1.0, 10).unwrap();
        for w in p.windows(2) {
            assert!(w[1] <= w[0] || w[1] < p[0] * 1e-5, "{p:?}");
        }
        assert!(p.last().unwrap() / p[0] < 1e-5, "{p:?}");
    }

    #[test]
    fn flipped_sign_diverges() {
        let r = tonal_run(1.0, 10);
        assert!(matches!(r, Err(AncError::Divergence { .. })), "{r:?}");
    }

    #[test]
    fn filtered_history_stays_consistent() {
        // Fuzzed run: at every step x' history equals C applied to x history.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut f = FxLms::new(8, &model(&c), 0.001).unwrap();
        let mut xs = Vec::new();
        for _ in 0..200 {
            let x = rng.random_range(-1.0..1.0);
            xs.push(x);
            f.filter_reference(x);
            let e = rng.random_range(-1.0..1.0);
            f.update(e).unwrap();
            let n = xs.len();
            for i in 0..8.min(n) {
                let k = n - 1 - i;
                let expect: f64 = (0..c.len())
                    .filter(|j| *j <= k)
                    .map(|j| c[j] * xs[k - j])
                    .sum();
                assert!((f.filtered_history()[i] - expect).abs() < 1e-12);
            }
        }
    }
}
