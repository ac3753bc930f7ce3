//! Optimal allocation and maximal net present value for portfolios of
//! projects with stochastic cash flows, under a budget constraint and an
//! investment-concentration cap.
//!
//! Two thermodynamic-limit results are provided: the quenched maximal NPV
//! per project (optimize after the noise is realized, then average) and the
//! annealed bound (optimize the expected NPV). The finite-N optimum is
//! available in closed form and through an independent projected-ascent
//! solver, and the [`sampling`] and [`experiments`] modules drive Monte Carlo
//! checks of the large-N limit.
//!
//! The numeric modules are generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the scalar to `f64`, which is what the sampling and
//! experiment layers use.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod discounting;
mod error;
pub mod experiments;
pub mod npv;
pub mod optimizer;
pub mod replica;
pub mod sampling;
mod scalar;

pub use error::{Error, Result};
pub use scalar::{compensated_sum, mean_and_variance, Scalar};

pub type Market = discounting::MarketSpec<f64>;
pub type Discounts = discounting::DiscountFactors<f64>;
pub type Ensemble = npv::ProjectEnsemble<f64>;
pub type CashFlows = npv::CashFlowMatrix<f64>;
pub type Allocation = optimizer::Allocation<f64>;
pub type HStats = optimizer::EmpiricalHStats<f64>;
pub type Moments = replica::MomentSet<f64>;
pub type Replica = replica::ReplicaResult<f64>;
