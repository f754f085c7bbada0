//! Arrays, reverse-mode differentiation and optimization.

mod array;
pub mod checkpoint;
mod gemm;
mod graph;
pub mod gradcheck;
mod kernels;
mod optim;
mod params;

pub use array::DiffArray;
pub use gemm::{gemm, MatRef};
pub use graph::{Graph, Mode, RunningStats, Var, BN_EPSILON, BN_MOMENTUM};
pub use kernels::{conv3d_forward, max_pool3d_forward};
pub use optim::{AdamConfig, AdamState};
pub use params::{ParamId, ParamStore, Parameter};
