//! Experiment harness around the `ris-access` simulator: config parsing,
//! seeded sweep execution, and chart rendering.

pub mod config;
pub mod experiment;
pub mod plot;

/// Environment variable overriding the output directory (lower precedence
/// than the `--out` flag, higher than the config file).
pub const OUT_DIR_ENV: &str = "RIS_ACCESS_OUT";
