//! Command-line pipeline: prepare, pretrain, attack, train, eval and plot
//! stages over a seeded configuration.

pub mod config;
pub mod error;
pub mod plot;
pub mod stages;

pub use config::{parse_kinds, Overrides, PipelineConfig};
pub use error::CliError;
pub use stages::{attack, eval, plot as plot_stage, prepare, pretrain, run_all, train, PlotInputs, StageManifest};
