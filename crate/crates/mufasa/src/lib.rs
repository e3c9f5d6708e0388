pub mod acquisition;
pub mod baselines;
pub mod error;
pub mod kernel;
pub mod linalg;
pub mod lvgp;
pub mod optim;
pub mod planner;
pub mod preposterior;
pub mod problems;
pub mod qmc;
pub mod scalar;
pub mod seed;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Fitted model over `f64`.
pub type Model = lvgp::FittedLvgp<f64>;
/// Fitted model over `f32`.
pub type ModelF32 = lvgp::FittedLvgp<f32>;
pub type Training = lvgp::TrainingSet<f64>;
