//! Decoder-style transformer language model with causal and masked variants.

mod checkpoint;
mod config;
mod transformer;

pub use checkpoint::{Checkpoint, CheckpointHeader, FORMAT_VERSION};
pub use config::{interpolated_lr, PositionKind, Preset, Task, TransformerConfig};
pub use transformer::{ForwardPass, ModelState, LAYER_NORM_EPS};
