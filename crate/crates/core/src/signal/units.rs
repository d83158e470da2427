use crate::error::{AncError, Result};

/// Caesium gyromagnetic ratio: 350 kHz/G = 3.5 Hz/nT.
pub const CESIUM_HZ_PER_NT: f64 = 3.5;

/// RMS amplitude suppression in dB.
pub fn suppression_db(before_rms: f64, after_rms: f64) -> Result<f64> {
    if !(before_rms > 0.0 && after_rms > 0.0) {
        return Err(AncError::invalid(format!(
            "suppression needs positive RMS values, got {before_rms} and {after_rms}"
        )));
    }
    Ok(20.0 * (before_rms / after_rms).log10())
}

/// Field RMS expressed as the Larmor frequency spread it causes.
pub fn field_rms_to_larmor_hz(rms_nt: f64, gamma_hz_per_nt: f64) -> Result<f64> {
    if rms_nt < 0.0 || gamma_hz_per_nt < 0.0 || !rms_nt.is_finite() {
        return Err(AncError::invalid(format!(
            "Larmor conversion needs non-negative inputs, got {rms_nt} nT and {gamma_hz_per_nt} Hz/nT"
        )));
    }
    Ok(rms_nt * gamma_hz_per_nt)
}
