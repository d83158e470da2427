//! Signal primitives shared by every stage: sample buffers, FIR filtering,
//! seeded white noise and Welch spectral estimation.

mod buffer;
mod delay;
mod fir;
pub mod noise;
pub mod spectrum;
mod units;

pub use buffer::{sig9, SampleBuffer, STREAM_MAGIC, STREAM_VERSION};
pub use delay::{dot, DelayLine};
pub use fir::{convolve, fir_apply, FirFilter};
pub use noise::{generate_white_noise, NoiseStream, WhiteNoiseSource};
pub use spectrum::{
    cancellation_ceiling_db, coherence, cross_psd, max_cancellation_db,
    max_cancellation_db_capped, rms_in_band, welch_psd, SpectrumEstimate, WelchParams, Window,
    CANCELLATION_CEILING_DB,
};
pub use units::{field_rms_to_larmor_hz, suppression_db, CESIUM_HZ_PER_NT};
