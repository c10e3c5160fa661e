//! Library side of the `safe-marl` command: run directories and manifests,
//! config loading, and SVG plotting of training logs.

pub mod config;
pub mod plot;
pub mod run;

/// Output root used when `--out` is not given.
pub const OUT_ROOT_VAR: &str = "SAFE_MARL_OUT";

/// Recorded in every manifest.
pub const CODE_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));
