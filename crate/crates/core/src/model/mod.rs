//! The dehazing network: configuration, parameters, forward/backward passes.

mod block;
mod config;
mod network;
mod params;
mod plan;

pub use block::{residual_block, residual_block_backward, BlockGrads, BlockWeights};
pub use config::PFFNetConfig;
pub use network::{
    backward, decoder_forward, encoder_forward, forward, predict, transform_forward, ForwardTrace,
};
pub use params::{block_name, layers, param_count, Layer, LayerKind, ParamStore};
pub use plan::{shape_plan, PlanEntry, ShapePlan};
