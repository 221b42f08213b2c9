//! Population-coded spiking actor networks with intra-layer connections,
//! surrogate-gradient training under TD3, and neuromorphic energy auditing.

pub mod actor;
pub mod checkpoint;
pub mod coding;
pub mod energy;
pub mod envs;
pub mod gradcheck;
pub mod grad;
pub mod math;
pub mod neurons;
pub mod td3;
