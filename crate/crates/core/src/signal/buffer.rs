use std::io::{Read, Write};

use crate::error::{AncError, Result};

/// Magic bytes at the start of every binary stream file.
pub const STREAM_MAGIC: [u8; 4] = *b"ANCB";
/// Current binary stream format version.
pub const STREAM_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

/// A finite run of real samples taken at a fixed rate.
///
/// Construction rejects non-positive rates and non-finite samples, so every
/// buffer handed to the spectral and filtering routines is well formed.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBuffer {
    samples: Vec<f64>,
    sample_rate_hz: f64,
}

impl SampleBuffer {
    pub fn new(samples: Vec<f64>, sample_rate_hz: f64) -> Result<Self> {
        if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
            return Err(AncError::invalid(format!(
                "sample rate must be positive and finite, got {sample_rate_hz}"
            )));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(AncError::Degenerate(format!(
                "sample {i} is not finite ({})",
                samples[i]
            )));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn zeros(len: usize, sample_rate_hz: f64) -> Result<Self> {
        Self::new(vec![0.0; len], sample_rate_hz)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz
    }

    pub fn mean(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }

    /// Mean of the squared samples.
    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64
    }

    pub fn rms(&self) -> f64 {
        self.power().sqrt()
    }

    /// The trailing `n` samples (or all of them when shorter).
    pub fn tail(&self, n: usize) -> SampleBuffer {
        let start = self.samples.len().saturating_sub(n);
        SampleBuffer {
            samples: self.samples[start..].to_vec(),
            sample_rate_hz: self.sample_rate_hz,
        }
    }

    pub fn slice(&self, start: usize, end: usize) -> Result<SampleBuffer> {
        if start > end || end > self.samples.len() {
            return Err(AncError::invalid(format!(
                "slice {start}..{end} out of range for length {}",
                self.samples.len()
            )));
        }
        Ok(SampleBuffer {
            samples: self.samples[start..end].to_vec(),
            sample_rate_hz: self.sample_rate_hz,
        })
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header = [0u8; HEADER_LEN];
        header[..4].copy_from_slice(&STREAM_MAGIC);
        header[4..8].copy_from_slice(&STREAM_VERSION.to_le_bytes());
        header[8..16].copy_from_slice(&self.sample_rate_hz.to_le_bytes());
        w.write_all(&header)?;
        let mut body = Vec::with_capacity(self.samples.len() * 8);
        for s in &self.samples {
            body.extend_from_slice(&s.to_le_bytes());
        }
        w.write_all(&body)?;
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() < HEADER_LEN {
            return Err(AncError::Format("stream shorter than header".into()));
        }
        if bytes[..4] != STREAM_MAGIC {
            return Err(AncError::Format("bad stream magic".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != STREAM_VERSION {
            return Err(AncError::Format(format!(
                "unsupported stream version {version}"
            )));
        }
        let rate = f64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let body = &bytes[HEADER_LEN..];
        if body.len() % 8 != 0 {
            return Err(AncError::Format(format!(
                "stream body length {} is not a multiple of 8",
                body.len()
            )));
        }
        let samples = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(samples, rate)
    }

    /// Two-column `time_s,value` CSV with 9 significant digits.
    /// `comment`, when given, is written first as a `# ` line.
    pub fn write_csv<W: Write>(&self, mut w: W, comment: Option<&str>) -> Result<()> {
        if let Some(c) = comment {
            writeln!(w, "# {c}")?;
        }
        writeln!(w, "time_s,value")?;
        let dt = 1.0 / self.sample_rate_hz;
        for (i, s) in self.samples.iter().enumerate() {
            writeln!(w, "{},{}", sig9(i as f64 * dt), sig9(*s))?;
        }
        Ok(())
    }
}

/// Format with 9 significant digits in scientific notation.
pub fn sig9(v: f64) -> String {
    format!("{v:.8e}")
}
