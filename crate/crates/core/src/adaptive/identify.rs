//! Secondary-path identification: drive the plant with white noise, run an
//! LMS filter on the same noise and freeze its coefficients.

use std::fmt::Write as _;
use std::path::Path;

use serde::Deserialize;

use super::lms::{AdaptiveFir, DIVERGENCE_NORM};
use crate::error::{AncError, Result};
use crate::signal::{FirFilter, WhiteNoiseSource};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Residual-to-output power ratio above which a model is flagged as not
/// capturing the path (typically an impulse response longer than the filter).
pub const ELEVATED_RESIDUAL_RATIO: f64 = 1e-3;

/// Anything that turns a drive sample into a sensor sample, one tick at a time.
pub trait ResponsePlant {
    /// Apply `drive` at the current tick and return the sensor reading for it.
    fn respond(&mut self, drive: f64) -> f64;
}

impl<F: FnMut(f64) -> f64> ResponsePlant for F {
    fn respond(&mut self, drive: f64) -> f64 {
        self(drive)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentificationParams {
    pub taps: usize,
    pub mu: f64,
    pub duration_s: f64,
    pub sample_rate_hz: f64,
    /// Block length for the DC check and the residual-power window.
    pub window_s: f64,
    /// Largest tolerated mean of the sensor reading, in sensor units.
    pub dc_threshold: f64,
    pub divergence_norm: f64,
}

impl IdentificationParams {
    pub fn new(taps: usize, mu: f64, duration_s: f64, sample_rate_hz: f64) -> Self {
        Self {
            taps,
            mu,
            duration_s,
            sample_rate_hz,
            window_s: 1.0,
            dc_threshold: 5.0,
            divergence_norm: DIVERGENCE_NORM,
        }
    }
}

/// Mean power of the first `window_s` seconds of the noise stream.
pub fn calibrate_drive_power(
    noise: &WhiteNoiseSource,
    sample_rate_hz: f64,
    window_s: f64,
) -> Result<f64> {
    let n = ((window_s * sample_rate_hz).round() as usize).max(1);
    let stream = noise.stream(sample_rate_hz)?;
    Ok(stream.take(n).map(|v| v * v).sum::<f64>() / n as f64)
}

/// Frozen estimate of the secondary path.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondaryPathModel {
    coefficients: FirFilter,
    pub sample_rate_hz: f64,
    pub mu_sp: f64,
    pub duration_s: f64,
    /// Mean `e'²` over the final window.
    pub residual_power: f64,
    /// Mean `e²` over the final window.
    pub output_power: f64,
    pub elevated_residual: bool,
}

impl SecondaryPathModel {
    pub fn from_coefficients(coefficients: Vec<f64>, sample_rate_hz: f64) -> Result<Self> {
        Ok(Self {
            coefficients: FirFilter::new(coefficients)?,
            sample_rate_hz,
            mu_sp: 0.0,
            duration_s: 0.0,
            residual_power: 0.0,
            output_power: 0.0,
            elevated_residual: false,
        })
    }

    pub fn coefficients(&self) -> &[f64] {
        self.coefficients.coefficients()
    }

    pub fn filter(&self) -> &FirFilter {
        &self.coefficients
    }

    pub fn taps(&self) -> usize {
        self.coefficients.taps()
    }

    pub fn residual_ratio(&self) -> f64 {
        if self.output_power > 0.0 {
            self.residual_power / self.output_power
        } else {
            0.0
        }
    }

    /// Relative L2 distance to a reference response; the shorter of the two
    /// is zero-padded.
    pub fn relative_error(&self, truth: &[f64]) -> f64 {
        relative_l2(self.coefficients(), truth)
    }

    /// Tap holding the largest-magnitude coefficient.
    pub fn peak_tap(&self) -> usize {
        self.coefficients()
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }

    /// Text form. Coefficients carry 17 significant digits so a reload is exact.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "version = {MODEL_FORMAT_VERSION}");
        let _ = writeln!(s, "sample_rate_hz = {}", f17(self.sample_rate_hz));
        let _ = writeln!(s, "M = {}", self.taps());
        let _ = writeln!(s, "mu_sp = {}", f17(self.mu_sp));
        let _ = writeln!(s, "duration_s = {}", f17(self.duration_s));
        let _ = writeln!(s, "residual_power = {}", f17(self.residual_power));
        let _ = writeln!(s, "output_power = {}", f17(self.output_power));
        let _ = writeln!(s, "elevated_residual = {}", self.elevated_residual);
        s.push_str("coefficients = [\n");
        for c in self.coefficients() {
            let _ = writeln!(s, "    {},", f17(*c));
        }
        s.push_str("]\n");
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Doc {
            version: u32,
            sample_rate_hz: f64,
            #[serde(rename = "M")]
            m: usize,
            mu_sp: f64,
            duration_s: f64,
            residual_power: f64,
            output_power: f64,
            elevated_residual: bool,
            coefficients: Vec<f64>,
        }
        let doc: Doc = toml::from_str(text).map_err(|e| AncError::Format(e.to_string()))?;
        if doc.version != MODEL_FORMAT_VERSION {
            return Err(AncError::Format(format!(
                "unsupported model version {}",
                doc.version
            )));
        }
        if doc.m != doc.coefficients.len() {
            return Err(AncError::Format(format!(
                "M = {} but {} coefficients listed",
                doc.m,
                doc.coefficients.len()
            )));
        }
        Ok(Self {
            coefficients: FirFilter::new(doc.coefficients)?,
            sample_rate_hz: doc.sample_rate_hz,
            mu_sp: doc.mu_sp,
            duration_s: doc.duration_s,
            residual_power: doc.residual_power,
            output_power: doc.output_power,
            elevated_residual: doc.elevated_residual,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

fn f17(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn relative_l2(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().max(b.len());
    let at = |v: &[f64], i: usize| v.get(i).copied().unwrap_or(0.0);
    let diff: f64 = (0..n).map(|i| (at(a, i) - at(b, i)).powi(2)).sum();
    let norm: f64 = b.iter().map(|v| v * v).sum();
    (diff / norm).sqrt()
}

/// Identify the plant's impulse response with LMS.
///
/// Each tick: draw `y(n)`, read `e(n)` from the plant, form `r(n)` from the
/// model, update with `e'(n) = e(n) - r(n)`. The step size is used as given;
/// callers pick it relative to [`super::stability_bound`].
pub fn estimate_secondary_path<P: ResponsePlant + ?Sized>(
    plant: &mut P,
    noise: &WhiteNoiseSource,
    params: &IdentificationParams,
) -> Result<SecondaryPathModel> {
    if !(params.duration_s > 0.0) {
        return Err(AncError::invalid("identification duration must be positive"));
    }
    let fs = params.sample_rate_hz;
    let total = (params.duration_s * fs).round() as u64;
    let window = ((params.window_s * fs).round() as u64).clamp(1, total.max(1));
    let mut filter = AdaptiveFir::new(params.taps, params.mu)?;
    let mut stream = noise.stream(fs)?;

    let (mut e_sum, mut e_sq_sum) = (0.0, 0.0);
    let (mut tail_res, mut tail_out) = (0.0, 0.0);
    let tail_start = total - window;

    for n in 0..total {
        let y = stream.next_sample();
        filter.push(y);
        let e = plant.respond(y);
        let r = filter.predict();
        let residual = e - r;
        filter
            .update(residual)
            .map_err(|err| match err {
                AncError::Divergence { reason, .. } => AncError::Divergence {
                    context: String::new(),
                    step: n,
                    reason,
                },
                other => other,
            })?;
        filter.check(n, params.divergence_norm)?;

        e_sum += e;
        e_sq_sum += e * e;
        let count = (n + 1) as f64;
        if (n + 1) % window == 0 {
            let mean = e_sum / count;
            let std = (e_sq_sum / count - mean * mean).max(0.0).sqrt();
            // Five standard errors of the mean on top of the fixed threshold.
            let threshold = params.dc_threshold + 5.0 * std / count.sqrt();
            if mean.abs() > threshold {
                return Err(AncError::UnnulledDc { mean, threshold });
            }
        }
        if n >= tail_start {
            tail_res += residual * residual;
            tail_out += e * e;
        }
    }

    let residual_power = tail_res / window as f64;
    let output_power = tail_out / window as f64;
    let elevated_residual =
        output_power > 0.0 && residual_power / output_power > ELEVATED_RESIDUAL_RATIO;
    Ok(SecondaryPathModel {
        coefficients: FirFilter::new(filter.coefficients().to_vec())?,
        sample_rate_hz: fs,
        mu_sp: params.mu,
        duration_s: params.duration_s,
        residual_power,
        output_power,
        elevated_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adaptive::stability_bound;
    use crate::signal::DelayLine;

    const FS: f64 = 5000.0;

    /// Noise-free FIR plant.
    fn fir_plant(h: Vec<f64>) -> impl FnMut(f64) -> f64 {
        let mut line = DelayLine::new(h.len());
        move |d| {
            line.push(d);
            line.dot(&h)
        }
    }

    fn params(taps: usize, sigma: f64, safety: f64, seconds: f64) -> IdentificationParams {
        let mu = safety * stability_bound(taps, sigma * sigma).unwrap();
        IdentificationParams::new(taps, mu, seconds, FS)
    }

    /// Ordinary least squares on the same drive/response record, solved with
    /// normal equations and Gaussian elimination.
    fn least_squares(h: &[f64], taps: usize, seed: u64, n: usize) -> Vec<f64> {
        let ys: Vec<f64> = WhiteNoiseSource::new(1.0, seed)
            .stream(FS)
            .unwrap()
            .take(n)
            .collect();
        let mut plant = fir_plant(h.to_vec());
        let es: Vec<f64> = ys.iter().map(|y| plant(*y)).collect();
        let lag = |k: usize, i: usize| if k >= i { ys[k - i] } else { 0.0 };
        let mut a = vec![vec![0.0; taps + 1]; taps];
        for k in 0..n {
            for i in 0..taps {
                let yi = lag(k, i);
                for j in 0..taps {
                    a[i][j] += yi * lag(k, j);
                }
                a[i][taps] += yi * es[k];
            }
        }
        for col in 0..taps {
            let piv = (col..taps)
                .max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs()))
                .unwrap();
            a.swap(col, piv);
            for row in 0..taps {
                if row != col {
                    let f = a[row][col] / a[col][col];
                    for k in col..=taps {
                        a[row][k] -= f * a[col][k];
                    }
                }
            }
        }
        (0..taps).map(|i| a[i][taps] / a[i][i]).collect()
    }

    #[test]
    fn recovers_known_fir() {
        let truth = vec![0.2, 1.0, 0.5, -0.1];
        let mut plant = fir_plant(truth.clone());
        let noise = WhiteNoiseSource::new(1.0, 17);
        let model = estimate_secondary_path(&mut plant, &noise, &params(8, 1.0, 0.1, 20.0)).unwrap();
        assert!(model.relative_error(&truth) < 1e-3, "{}", model.relative_error(&truth));
        let ls = least_squares(&truth, 8, 17, 4000);
        assert!(relative_l2(&ls, &truth) < 1e-9);
        assert!(relative_l2(model.coefficients(), &ls) < 1e-3);
        assert!(!model.elevated_residual);
    }

    #[test]
    fn pure_delay_plant() {
        let k = 6;
        let mut plant = fir_plant(FirFilter::delay(k).coefficients().to_vec());
        let noise = WhiteNoiseSource::new(1.0, 2);
        let model = estimate_secondary_path(&mut plant, &noise, &params(16, 1.0, 0.1, 5.0)).unwrap();
        let c = model.coefficients();
        assert!((c[k] - 1.0).abs() < 0.01);
        for (i, v) in c.iter().enumerate() {
            if i != k {
                assert!(v.abs() < 0.01, "tap {i} = {v}");
            }
        }
    }

    #[test]
    fn ideal_lowpass_gives_centred_sinc() {
        let m = 63;
        let lp = FirFilter::lowpass(m, 1000.0, FS).unwrap();
        let mut plant = fir_plant(lp.coefficients().to_vec());
        let noise = WhiteNoiseSource::new(1.0, 4);
        let model = estimate_secondary_path(&mut plant, &noise, &params(m, 1.0, 0.1, 20.0)).unwrap();
        assert_eq!(model.peak_tap(), (m - 1) / 2);
        // Sinc shape: side lobes alternate in sign around the centre.
        let c = model.coefficients();
        assert!(c[31] > 0.0 && c[31 + 3] < 0.0 && c[31 - 3] < 0.0);
        assert!(model.relative_error(lp.coefficients()) < 1e-2);
    }

    #[test]
    fn ten_times_bound_diverges() {
        for seed in 0..3 {
            let mut plant = fir_plant(vec![0.2, 1.0, 0.5, -0.1]);
            let noise = WhiteNoiseSource::new(1.0, seed);
            let err = estimate_secondary_path(&mut plant, &noise, &params(32, 1.0, 10.0, 20.0))
                .unwrap_err();
            match err {
                AncError::Divergence { step, .. } => assert!(step < 100_000),
                other => panic!("{other:?}"),
            }
        }
    }

    #[test]
    fn dc_offset_is_rejected() {
        let mut inner = fir_plant(vec![1.0]);
        let mut plant = move |d: f64| inner(d) + 50.0;
        let noise = WhiteNoiseSource::new(1.0, 1);
        let err = estimate_secondary_path(&mut plant, &noise, &params(4, 1.0, 0.1, 3.0)).unwrap_err();
        assert!(matches!(err, AncError::UnnulledDc { .. }), "{err:?}");
    }

    #[test]
    fn truncated_path_is_flagged() {
        // Response longer than the filter: the tail cannot be represented.
        let mut h = vec![0.0; 40];
        h[2] = 1.0;
        h[30] = 0.5;
        let tail_energy = 0.25;
        let mut plant = fir_plant(h.clone());
        let noise = WhiteNoiseSource::new(1.0, 8);
        let model = estimate_secondary_path(&mut plant, &noise, &params(16, 1.0, 0.1, 10.0)).unwrap();
        assert!(model.elevated_residual);
        // The unexplained power is the tail energy times the drive power.
        assert!((model.residual_power / tail_energy - 1.0).abs() < 0.15);
    }

    #[test]
    fn text_round_trip_is_exact() {
        let mut m = SecondaryPathModel::from_coefficients(
            vec![0.1, -1.0 / 3.0, std::f64::consts::PI * 1e-7, 12345.678901234567],
            5000.0,
        )
        .unwrap();
        m.mu_sp = 1.0 / 7.0;
        m.duration_s = 20.0;
        m.residual_power = 2.5e-9;
        m.output_power = 81000.123;
        let text = m.to_text();
        assert!(text.contains("M = 4"));
        let back = SecondaryPathModel::from_text(&text).unwrap();
        assert_eq!(back, m);
        for (a, b) in back.coefficients().iter().zip(m.coefficients()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn text_rejects_inconsistent_documents() {
        let m = SecondaryPathModel::from_coefficients(vec![1.0, 2.0], 10.0).unwrap();
        let text = m.to_text().replace("M = 2", "M = 3");
        assert!(SecondaryPathModel::from_text(&text).is_err());
        let text = m.to_text().replace("version = 1", "version = 9");
        assert!(SecondaryPathModel::from_text(&text).is_err());
        assert!(SecondaryPathModel::from_text("garbage").is_err());
    }
}
