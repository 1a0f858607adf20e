//! Numerical laboratory for limit theorems of integral functionals of
//! Gaussian processes: chaos expansions, covariance models, limiting
//! constants, exact path samplers and Monte Carlo statistics.

pub mod asymptotics;
pub mod error;
pub mod experiment;
pub mod functionals;
pub mod hermite;
pub mod mcstats;
pub mod models;
pub mod quadrature;
pub mod rng;
pub mod sampler;

pub use asymptotics::{Regime, RegimeReport};
pub use error::{Error, Result};
pub use experiment::{ExperimentConfig, Summary};
pub use functionals::{FunctionalKind, FunctionalResult};
pub use hermite::{HermiteExpansion, MalliavinOp};
pub use mcstats::{EnsembleConfig, FluctuationEnsemble};
pub use models::{Model, SelfSimilarModel, StationaryModel};
pub use sampler::{GridPath, PathSampler, SamplerPlan};
