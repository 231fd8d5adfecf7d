//! Network architecture: blocks, configuration, presets and the builder.

pub mod blocks;
pub mod config;
pub mod model;
pub mod params;
pub mod plan;
pub mod presets;

pub use config::{width_schedule, ModelConfig, Phase, StageConfig};
pub use model::Model;
pub use params::{ParamKind, ParamStore, Pass};
pub use presets::preset;
