//! Learned and finite-difference Green's functions for 2D
//! reaction-diffusion operators on rectangles, and a Green's-representation
//! boundary value solver built on top of them.
//!
//! Numerical kernels are generic over [`Scalar`] (`f32` or `f64`); grids
//! and fields are always `f64`.

pub mod error;
pub mod expr;
pub mod greensolver;
pub mod grid;
pub mod io;
pub mod losses;
pub mod model;
pub mod operator;
pub mod optim;
pub mod scalar;
pub mod source;
pub mod trainer;

pub use error::{Error, Result};
pub use expr::Expr;
pub use greensolver::{
    boundary_normal_flux, evaluate_bvp, evaluate_case, simpson_weights_1d, solve_bvp, Bvp, CaseReport, Edge, GreenProvider,
    LearnedProvider, QuadratureRule, ReferenceProvider, REFERENCE_SIGMA_FACTOR,
};
pub use grid::{l2_error, l2_norm, Field, Grid, RectDomain};
pub use io::{read_field, write_field};
pub use losses::{
    jacobi_target, loss_data, loss_jacobi, loss_residual, sample_loss, update_k, KScheduleState, KStrategy, LossKind,
};
pub use model::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, ProblemInfo, UNet, UNetConfig};
pub use operator::{CoefficientSpec, DirectSolver, JacobiMode, JacobiOutcome, StencilCoeffs};
pub use optim::{Adam, AdamConfig};
pub use scalar::Scalar;
pub use source::{
    build_input, gaussian_source, Dataset, DatasetSpec, InputTensor, InputVariant, ReferenceSolver, SourceConfig,
    SourceSample,
};
pub use trainer::{train, train_from, validate, CheckpointSink, EpochRecord, TrainConfig, TrainHistory, TrainOutcome};

pub type UNetF32 = UNet<f32>;
pub type UNetF64 = UNet<f64>;
pub type AdamF32 = Adam<f32>;
pub type AdamF64 = Adam<f64>;
