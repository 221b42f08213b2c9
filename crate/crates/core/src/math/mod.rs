//! Dense arrays, batched matrix products, seeded random streams, parameter
//! initialization and the Adam optimizer.

mod array;
mod dense;
pub mod gemm;
mod optim;
mod rng;

pub use array::{affine, RealArray};
pub use dense::{init_linear, Activation, Linear, Mlp, MlpCache, MlpGrads};
pub use optim::{
    adam_step, clip_global_norm, global_norm, soft_update, Adam, AdamConfig, AdamState, ParamBlocks,
};
pub use rng::{RngStream, StreamId};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MathError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {block}")]
    NonFinite { block: String },
}
