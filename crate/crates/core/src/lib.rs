//! Taylor-series parameter packages for transformer feed-forward blocks.
//!
//! A block `y = W·Act(V·x + b) + c` is converted into a package that keeps
//! `V` and replaces the down-projection of selected intermediate columns by
//! Taylor coefficient tensors `Θ_{i,n} = W_i ⊙ Act⁽ⁿ⁾(z0 + b)/n!`. The
//! package evaluates the block without `W`, `b` or `c` for those columns,
//! costs roughly `N` times the multiply-accumulates of the plain block on
//! them, and converges to the plain output as the order `N` grows.
//!
//! Pipeline:
//!
//! 1. [`calibration`]: stream inputs, track per-column extrema of `V·x`,
//!    pick the expansion point `z0` and the `K` narrowest columns.
//! 2. [`taylor::transform`]: build the [`TaylorPackage`].
//! 3. [`taylor::taylor_forward`] / [`TaylorPackage::predict`]: run it.
//!
//! [`bench`] measures fidelity and slowdown, [`attack`] tries to recover the
//! withheld weights, and [`container`]/[`persist`] define the on-disk format.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the scalar for the common cases. The file format is `f64`.

pub mod activation;
pub mod attack;
pub mod bench;
pub mod calibration;
pub mod container;
pub mod error;
pub mod flops;
pub mod linalg;
pub mod mlp;
pub mod persist;
pub mod scalar;
pub mod synthetic;
pub mod taylor;
pub mod vectors;

pub use activation::{ActivationKind, DerivativeTable, MAX_ORDER};
pub use attack::{AttackKind, AttackReport, Initialization, ToyTask, ToyTaskConfig, TrainConfig};
pub use bench::{BenchResult, LatencyResult};
pub use calibration::{CalibrationStats, ProtectionPlan};
pub use container::{ContainerError, Tensor, TensorContainer};
pub use error::{Error, Result};
pub use flops::{BlockShape, CountMode, FlopBreakdown};
pub use linalg::Matrix;
pub use mlp::{ForwardTrace, Gradients, MlpWeights};
pub use scalar::Scalar;
pub use taylor::{TaylorForwardTrace, TaylorPackage};

pub type MatrixF64 = Matrix<f64>;
pub type MatrixF32 = Matrix<f32>;
pub type MlpWeightsF64 = MlpWeights<f64>;
pub type MlpWeightsF32 = MlpWeights<f32>;
pub type TaylorPackageF64 = TaylorPackage<f64>;
pub type TaylorPackageF32 = TaylorPackage<f32>;
pub type CalibrationStatsF64 = CalibrationStats<f64>;
pub type CalibrationStatsF32 = CalibrationStats<f32>;
pub type ProtectionPlanF64 = ProtectionPlan<f64>;
pub type ProtectionPlanF32 = ProtectionPlan<f32>;
pub type ToyTaskF64 = ToyTask<f64>;
