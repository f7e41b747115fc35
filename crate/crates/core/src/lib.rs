//! Sharp approximations for the first `k` steps of a multivariate i.i.d.
//! random walk conditioned on its final sum, or on the final value of an
//! additive statistic `U = u(X)`.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`]: light-tailed base laws with analytic cumulant generating
//!   functions, samplers and cumulant tensors up to order 4.
//! * [`tilt`]: the Newton solver for `m(t) = alpha` and the tilted law.
//! * [`edgeworth`]: tensor Hermite polynomials and the order-4 Edgeworth density.
//! * [`trajectory`]: the recursive approximating density `g` and the exact
//!   Gaussian conditional oracle.
//! * [`sampler`]: acceptance-rejection and Metropolis step samplers.
//! * [`krule`]: the Monte-Carlo rule for choosing the run length `k`.
//! * [`apps`]: importance sampling for rare events, the ABC oracle and
//!   total-variation checks.
//! * [`schema`]: JSON formats for models, conditioning specs and trajectories.

pub mod apps;
pub mod edgeworth;
pub mod error;
pub mod krule;
pub mod linalg;
pub mod model;
pub mod sampler;
pub mod schema;
pub mod stats;
pub mod tilt;
pub mod trajectory;

pub use apps::{AbcSample, Direction, Event, IsConfig, IsEstimate};
pub use error::{Error, Result};
pub use linalg::{Matrix, Tensor, Vector};
pub use model::{CumulantModel, CustomLaw, HalfSpace, ScalarFamily, TiltDomain, UMap};
pub use krule::{KRuleConfig, KRuleReport, RatioConvention};
pub use sampler::{McmcConfig, SampledTrajectory, SamplerConfig, SamplingMethod};
pub use schema::{LoadedSpec, TrajectoryRecord};
pub use tilt::{SolveOptions, TiltSolution};
pub use trajectory::{
    CenterRule, ConditioningSpec, FirstStepRule, GOptions, Mode, NormalizationMethod,
    NormalizationOptions, StepKernel, StepMeanRule, Trajectory,
};
