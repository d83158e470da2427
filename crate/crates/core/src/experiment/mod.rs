mod commands;
mod config;
mod output;
mod report;
mod scan;
mod stages;

pub use commands::*;
pub use config::*;
pub use output::*;
pub use report::*;
pub use scan::*;
pub use stages::*;
