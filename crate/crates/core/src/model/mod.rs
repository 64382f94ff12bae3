//! U-Net surrogate: configuration, forward and reverse passes, checkpoints.

pub mod checkpoint;
pub mod kernels;
mod unet;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, ProblemInfo};
pub use unet::{param_count, ForwardCache, LayerKind, LayerSpec, UNet, UNetConfig};
