//! Welch-averaged auto and cross spectra, coherence, and the cancellation
//! ceiling implied by coherence.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::SampleBuffer;
use crate::error::{AncError, Result};

/// Auto-spectrum bins below this are treated as empty when forming coherence.
pub const ZERO_POWER_FLOOR: f64 = 1e-30;
/// Reported cancellation ceiling for perfectly coherent bins, in dB.
pub const CANCELLATION_CEILING_DB: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Hann,
    Rectangular,
}

impl Window {
    /// Periodic form, as used for spectral averaging.
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; len],
            Window::Hann => (0..len)
                .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WelchParams {
    pub segment_len: usize,
    pub overlap: f64,
    pub window: Window,
}

impl Default for WelchParams {
    fn default() -> Self {
        Self {
            segment_len: 4096,
            overlap: 0.5,
            window: Window::Hann,
        }
    }
}

impl WelchParams {
    pub fn new(segment_len: usize, overlap: f64, window: Window) -> Self {
        Self {
            segment_len,
            overlap,
            window,
        }
    }

    fn step(&self) -> usize {
        ((self.segment_len as f64 * (1.0 - self.overlap)).round() as usize).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.segment_len < 2 {
            return Err(AncError::invalid("Welch segment length must be at least 2"));
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(AncError::invalid(format!(
                "overlap fraction {} outside [0, 1)",
                self.overlap
            )));
        }
        Ok(())
    }

    pub fn segment_count(&self, signal_len: usize) -> usize {
        if signal_len < self.segment_len {
            0
        } else {
            (signal_len - self.segment_len) / self.step() + 1
        }
    }
}

/// One-sided frequency-binned estimate. Values are `f64` for auto-spectra,
/// coherence and cancellation ceilings; `Complex64` for cross-spectra.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumEstimate<T = f64> {
    frequencies: Vec<f64>,
    values: Vec<T>,
    bin_width_hz: f64,
    segment_count: usize,
}

impl<T: Copy> SpectrumEstimate<T> {
    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn bin_width_hz(&self) -> f64 {
        self.bin_width_hz
    }

    pub fn segment_count(&self) -> usize {
        self.segment_count
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, T)> + '_ {
        self.frequencies.iter().copied().zip(self.values.iter().copied())
    }

    /// Index of the bin whose centre is closest to `freq_hz`.
    pub fn nearest_bin(&self, freq_hz: f64) -> usize {
        let k = (freq_hz / self.bin_width_hz).round().max(0.0) as usize;
        k.min(self.values.len() - 1)
    }

    pub fn value_at(&self, freq_hz: f64) -> T {
        self.values[self.nearest_bin(freq_hz)]
    }

    fn map<U>(&self, f: impl Fn(T) -> U) -> SpectrumEstimate<U> {
        SpectrumEstimate {
            frequencies: self.frequencies.clone(),
            values: self.values.iter().map(|v| f(*v)).collect(),
            bin_width_hz: self.bin_width_hz,
            segment_count: self.segment_count,
        }
    }
}

impl SpectrumEstimate<f64> {
    /// Sum of `value * bin_width` over bins with centre in `[f_lo, f_hi]`.
    pub fn band_integral(&self, f_lo: f64, f_hi: f64) -> f64 {
        self.iter()
            .filter(|(f, _)| *f >= f_lo && *f <= f_hi)
            .map(|(_, v)| v * self.bin_width_hz)
            .sum()
    }

    pub fn total_integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.bin_width_hz
    }

    /// Amplitude spectral density (square root of each bin).
    pub fn sqrt(&self) -> SpectrumEstimate<f64> {
        self.map(|v| v.max(0.0).sqrt())
    }
}

/// Windowed FFT of every segment, one-sided bins only.
fn segment_spectra(x: &SampleBuffer, params: &WelchParams) -> Result<(Vec<Vec<Complex64>>, f64)> {
    params.validate()?;
    let len = params.segment_len;
    if x.len() < len {
        return Err(AncError::invalid(format!(
            "segment length {len} exceeds signal length {}",
            x.len()
        )));
    }
    let window = params.window.coefficients(len);
    let win_power: f64 = window.iter().map(|w| w * w).sum();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(len);
    let n_bins = len / 2 + 1;
    let step = params.step();
    let samples = x.samples();
    let mut out = Vec::with_capacity(params.segment_count(x.len()));
    let mut start = 0;
    while start + len <= samples.len() {
        let mut buf: Vec<Complex64> = samples[start..start + len]
            .iter()
            .zip(&window)
            .map(|(s, w)| Complex64::new(s * w, 0.0))
            .collect();
        fft.process(&mut buf);
        buf.truncate(n_bins);
        out.push(buf);
        start += step;
    }
    Ok((out, win_power))
}

fn averaged_cross(
    xs: &[Vec<Complex64>],
    ys: &[Vec<Complex64>],
    win_power: f64,
    sample_rate_hz: f64,
    segment_len: usize,
) -> SpectrumEstimate<Complex64> {
    let n_bins = xs[0].len();
    let k = xs.len() as f64;
    let scale = 1.0 / (sample_rate_hz * win_power * k);
    let nyquist_bin = if segment_len % 2 == 0 { Some(n_bins - 1) } else { None };
    let values = (0..n_bins)
        .map(|b| {
            let acc: Complex64 = xs.iter().zip(ys).map(|(x, y)| x[b].conj() * y[b]).sum();
            let one_sided = if b == 0 || Some(b) == nyquist_bin { 1.0 } else { 2.0 };
            acc * (scale * one_sided)
        })
        .collect();
    let bin_width_hz = sample_rate_hz / segment_len as f64;
    SpectrumEstimate {
        frequencies: (0..n_bins).map(|b| b as f64 * bin_width_hz).collect(),
        values,
        bin_width_hz,
        segment_count: xs.len(),
    }
}

fn check_pair(x: &SampleBuffer, y: &SampleBuffer) -> Result<()> {
    if x.len() != y.len() {
        return Err(AncError::Mismatch(format!(
            "lengths differ: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.sample_rate_hz() != y.sample_rate_hz() {
        return Err(AncError::Mismatch(format!(
            "sample rates differ: {} vs {}",
            x.sample_rate_hz(),
            y.sample_rate_hz()
        )));
    }
    Ok(())
}

/// One-sided power spectral density (units²/Hz). No detrending: a constant
/// input shows up in the DC bin.
pub fn welch_psd(x: &SampleBuffer, params: &WelchParams) -> Result<SpectrumEstimate<f64>> {
    let (segs, wp) = segment_spectra(x, params)?;
    let c = averaged_cross(&segs, &segs, wp, x.sample_rate_hz(), params.segment_len);
    Ok(c.map(|v| v.re.max(0.0)))
}

/// Cross spectral density `E[conj(X) Y]`, segmented exactly like [`welch_psd`].
pub fn cross_psd(
    x: &SampleBuffer,
    y: &SampleBuffer,
    params: &WelchParams,
) -> Result<SpectrumEstimate<Complex64>> {
    check_pair(x, y)?;
    let (xs, wp) = segment_spectra(x, params)?;
    let (ys, _) = segment_spectra(y, params)?;
    Ok(averaged_cross(&xs, &ys, wp, x.sample_rate_hz(), params.segment_len))
}

/// Magnitude-squared coherence in `[0, 1]`; bins where either auto-spectrum
/// is empty report 0.
pub fn coherence(
    x: &SampleBuffer,
    y: &SampleBuffer,
    params: &WelchParams,
) -> Result<SpectrumEstimate<f64>> {
    check_pair(x, y)?;
    let (xs, wp) = segment_spectra(x, params)?;
    if xs.len() < 2 {
        return Err(AncError::invalid(
            "coherence needs at least two segments (a single segment is identically 1)",
        ));
    }
    let (ys, _) = segment_spectra(y, params)?;
    let rate = x.sample_rate_hz();
    let sxy = averaged_cross(&xs, &ys, wp, rate, params.segment_len);
    let sxx = averaged_cross(&xs, &xs, wp, rate, params.segment_len);
    let syy = averaged_cross(&ys, &ys, wp, rate, params.segment_len);
    let values = sxy
        .values
        .iter()
        .zip(sxx.values.iter().zip(&syy.values))
        .map(|(c, (a, b))| {
            let (a, b) = (a.re, b.re);
            if a < ZERO_POWER_FLOOR || b < ZERO_POWER_FLOOR {
                0.0
            } else {
                (c.norm_sqr() / (a * b)).clamp(0.0, 1.0)
            }
        })
        .collect();
    Ok(SpectrumEstimate {
        frequencies: sxy.frequencies,
        values,
        bin_width_hz: sxy.bin_width_hz,
        segment_count: sxy.segment_count,
    })
}

/// Largest cancellation a linear canceller can reach per bin given the
/// coherence: `-10 log10(1 - γ²)`, capped at [`CANCELLATION_CEILING_DB`].
pub fn max_cancellation_db(coh: &SpectrumEstimate<f64>) -> Result<SpectrumEstimate<f64>> {
    max_cancellation_db_capped(coh, CANCELLATION_CEILING_DB)
}

pub fn max_cancellation_db_capped(
    coh: &SpectrumEstimate<f64>,
    ceiling_db: f64,
) -> Result<SpectrumEstimate<f64>> {
    if let Some((f, g)) = coh.iter().find(|(_, g)| !(0.0..=1.0).contains(g)) {
        return Err(AncError::invalid(format!(
            "coherence {g} at {f} Hz outside [0, 1]"
        )));
    }
    Ok(coh.map(|g| cancellation_ceiling_db(g, ceiling_db)))
}

pub fn cancellation_ceiling_db(gamma_sq: f64, ceiling_db: f64) -> f64 {
    if gamma_sq >= 1.0 {
        ceiling_db
    } else {
        (-10.0 * (1.0 - gamma_sq).log10()).min(ceiling_db)
    }
}

/// RMS within `[f_lo, f_hi]`: square root of the integrated PSD.
pub fn rms_in_band(x: &SampleBuffer, f_lo: f64, f_hi: f64, params: &WelchParams) -> Result<f64> {
    let nyq = x.sample_rate_hz() / 2.0;
    if !(f_lo >= 0.0 && f_lo < f_hi && f_hi <= nyq) {
        return Err(AncError::invalid(format!(
            "band [{f_lo}, {f_hi}] Hz invalid for Nyquist {nyq} Hz"
        )));
    }
    let psd = welch_psd(x, params)?;
    Ok(psd.band_integral(f_lo, f_hi).max(0.0).sqrt())
}
