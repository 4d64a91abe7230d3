//! Heavy / medium / light cascade variants and their configuration.

pub mod config;
pub mod net;

pub use config::{ModelConfig, Variant};
pub use net::{build_model, Csrnet, ForwardOutput, StageOutputs, StageTap};
