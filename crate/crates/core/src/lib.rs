//! Active noise control for three-axis magnetic fields.
//!
//! The crate is layered bottom-up:
//!
//! * [`signal`]: sample buffers, FIR filtering, seeded noise, Welch spectra,
//!   coherence and the cancellation ceiling it implies.
//! * [`adaptive`]: LMS secondary-path identification and the filtered-x LMS
//!   anti-noise engine.
//! * [`plant`]: deterministic simulation of the coil/sensor chain and the
//!   ambient three-axis field.
//! * [`control`]: discrete PID used for DC pre-nulling and as a baseline.
//! * [`experiment`]: the staged procedure (pre-null, identification, ANC),
//!   reports and the coherence scan.

pub mod adaptive;
pub mod control;
pub mod error;
pub mod experiment;
pub mod plant;
pub mod rng;
pub mod signal;

pub use error::{AncError, Result};
