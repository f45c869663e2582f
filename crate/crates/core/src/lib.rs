//! Bayesian user-activity detection for cell-free massive random access.
//!
//! * [`simkit`] simulates deployments and received pilot signals.
//! * [`mapdet`] and [`ghvi`] detect active users without knowing the
//!   large-scale gains or the noise power: by MAP block-coordinate ascent
//!   and by mean-field variational inference under a generalized
//!   hyperbolic prior.
//! * [`covbase`] is the classical covariance-fitting detector, which needs
//!   both.
//! * [`specfun`] holds the Bessel-K / GIG machinery the priors rely on.
//!
//! Everything is generic over the real scalar ([`Real`], implemented for
//! `f32` and `f64`); the aliases below fix it to `f64`.

// `!(x > 0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod covbase;
pub mod error;
pub mod ghvi;
pub mod linalg;
pub mod mapdet;
pub mod model;
pub mod scalar;
pub mod simkit;
pub mod specfun;

pub use error::{Error, Result};
pub use model::{decide, Hyper, SolverOptions};
pub use scalar::{Cx, Real};

pub type Complex = Cx<f64>;
pub type Matrix = linalg::CMatrix<f64>;
pub type Scenario = simkit::Scenario<f64>;
pub type ChannelRealization = simkit::ChannelRealization<f64>;
pub type PilotMatrix = simkit::PilotMatrix<f64>;
pub type ReceivedSignals = simkit::ReceivedSignals<f64>;
pub type GigParams = specfun::GigParams<f64>;
pub type GammaParams = specfun::GammaParams<f64>;
pub type GhHyper = specfun::GhHyper<f64>;
pub type PriorHyper = model::Hyper<f64>;
pub type MapState = mapdet::MapState<f64>;
pub type MapOutcome = mapdet::MapOutcome<f64>;
pub type VariationalState = ghvi::VariationalState<f64>;
pub type Moments = ghvi::Moments<f64>;
pub type GhviOutcome = ghvi::GhviOutcome<f64>;
pub type CovKnowledge = covbase::CovKnowledge<f64>;
pub type CovState = covbase::CovState<f64>;
pub type CovOutcome = covbase::CovOutcome<f64>;
