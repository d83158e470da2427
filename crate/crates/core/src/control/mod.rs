//! Discrete PID control: the DC pre-null stage and the comparison baseline.

mod pid;
mod prenull;

pub use pid::{pid_step, Pid, PidGains, PidState};
pub use prenull::{dc_prenull, PrenullConfig, PrenullResult};
