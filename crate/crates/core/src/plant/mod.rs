//! Simulated hardware: secondary-path channels, the ambient field and the
//! 3-axis rig that ties them to the error and reference sensors.

mod channel;
mod colored;
mod environment;
mod quantizer;
mod rig;

pub use channel::{ChannelConfig, SecondaryPathChannel};
pub use colored::{NarrowbandNoise, NoiseShape, ShapedNoise};
pub use environment::{
    identity as identity_crosstalk, AmbientSample, BroadbandConfig, EnvironmentConfig, NoiseEnvironment, ToneConfig,
    AXES,
};
pub use quantizer::Quantizer;
pub use rig::{ReferenceSensorConfig, Rig, SensorReading};
