//! The MPIF-Res2Net classifier: channel-split bottlenecks whose per-group
//! transform is either a plain 3×3 conv or the two-branch dilated fusion
//! module, an SE gate per bottleneck and an angular-margin head.
//!
//! Parameters live in a [`ParamStore`]; every forward pass opens a
//! [`Session`] that owns the autograd tape, so a built [`Network`] can be
//! shared across threads for evaluation.

mod bottleneck;
mod checkpoint;
mod config;
mod layers;
mod mpif;
mod network;
mod params;

use thiserror::Error;

use crate::autograd::TensorError;

pub use bottleneck::{BlockSpec, Bottleneck};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, Checkpoint, Dtype, ParamBlob, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{BlockKind, HeadConfig, HeadKind, NetworkConfig};
pub use layers::{BatchNorm, Conv, Linear, SeBlock};
pub use mpif::{
    channel_weights, mpif_branch, mpif_forward, mpif_fuse, mpif_scale_forward, res2net_scale_forward,
    scale_forward, split_channels, stage_scale_forward, MpifModule, MpifTrace, MpifWeights, BRANCH_DILATIONS,
};
pub use network::{angle_linear, build_network, ForwardOutput, Network};
pub use params::{BnId, Param, ParamId, ParamStore, RunningStats, Session};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid network config: {0}")]
    Config(String),
    #[error("input shape {got:?} does not match {expected}")]
    InputShape { expected: String, got: Vec<usize> },
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint does not match network: {0}")]
    Mismatch(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;
