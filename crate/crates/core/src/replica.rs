//! Closed-form large-N results: the quenched maximal NPV per project `κ`,
//! the annealed bound `κ_OR`, the order parameters `(k, θ)`, the internal
//! rates where either quantity crosses zero, and the sign-region map.
//!
//! With `<h> = -1 + A1<c> + <λ>(1+r)^-T` and
//! `Var h = A2<c²v> + V`, where `V = <(A1(c - <c>) + (λ - <λ>)(1+r)^-T)²>`:
//!
//! - `κ_OR = m <h>`
//! - `κ = m <h> + sqrt(τ - m²) sqrt(Var h)`

use std::fmt;

use serde::Serialize;

use crate::discounting::{DiscountFactors, MarketSpec};
use crate::npv::ProjectEnsemble;
use crate::scalar::covariance;
use crate::{mean_and_variance, Error, Result, Scalar};

/// Population moments of the project parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentSet<T> {
    pub mean_c: T,
    pub mean_lambda: T,
    /// `<c² v>`.
    pub mean_c2v: T,
    pub var_c: T,
    pub var_lambda: T,
    pub cov_c_lambda: T,
}

impl<T: Scalar> MomentSet<T> {
    pub fn new(mean_c: T, mean_lambda: T, mean_c2v: T, var_c: T, var_lambda: T, cov_c_lambda: T) -> Result<Self> {
        let moments = Self { mean_c, mean_lambda, mean_c2v, var_c, var_lambda, cov_c_lambda };
        moments.validate()?;
        Ok(moments)
    }

    /// Moments of a deterministic ensemble where every project is identical.
    pub fn point(coupon: T, attenuation: T, variance: T) -> Result<Self> {
        Self::new(coupon, attenuation, coupon * coupon * variance, T::zero(), T::zero(), T::zero())
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [self.mean_c, self.mean_lambda, self.mean_c2v, self.var_c, self.var_lambda, self.cov_c_lambda];
        if fields.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("moments must be finite".into()));
        }
        if self.var_c < T::zero() || self.var_lambda < T::zero() || self.mean_c2v < T::zero() {
            return Err(Error::Domain("variances and <c²v> must be non-negative".into()));
        }
        let bound = (self.var_c * self.var_lambda).sqrt();
        if self.cov_c_lambda.abs() > bound * (T::one() + T::of(1e-12)) + T::epsilon() * T::epsilon() {
            return Err(Error::Domain(format!(
                "covariance {} violates Cauchy-Schwarz bound {bound}",
                self.cov_c_lambda
            )));
        }
        Ok(())
    }

    /// Empirical moments of an ensemble.
    pub fn from_ensemble(ensemble: &ProjectEnsemble<T>) -> Self {
        let c = ensemble.coupon();
        let l = ensemble.attenuation();
        let (mean_c, var_c) = mean_and_variance(c).expect("ensembles are non-empty");
        let (mean_lambda, var_lambda) = mean_and_variance(l).expect("ensembles are non-empty");
        let c2v: Vec<T> = c.iter().zip(ensemble.variance()).map(|(&c, &v)| c * c * v).collect();
        let (mean_c2v, _) = mean_and_variance(&c2v).expect("ensembles are non-empty");
        let cov = covariance(c, mean_c, l, mean_lambda);
        // Rounding can push the sample covariance a hair past the bound.
        let bound = (var_c * var_lambda).sqrt();
        Self { mean_c, mean_lambda, mean_c2v, var_c, var_lambda, cov_c_lambda: cov.max(-bound).min(bound) }
    }
}

/// All closed-form outputs for one `(moments, market)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReplicaResult<T> {
    pub kappa: T,
    pub kappa_or: T,
    /// `None` when `τ = m²` or `Var h = 0`.
    pub theta: Option<T>,
    pub k: Option<T>,
    pub v_term: T,
    pub mean_h: T,
    pub var_h: T,
}

fn composite_variance_with<T: Scalar>(moments: &MomentSet<T>, f: &DiscountFactors<T>) -> T {
    let v = f.a1 * f.a1 * moments.var_c
        + f.terminal * f.terminal * moments.var_lambda
        + T::of(2.0) * f.a1 * f.terminal * moments.cov_c_lambda;
    v.max(T::zero())
}

fn mean_h_with<T: Scalar>(moments: &MomentSet<T>, f: &DiscountFactors<T>) -> T {
    -T::one() + f.a1 * moments.mean_c + moments.mean_lambda * f.terminal
}

fn var_h_with<T: Scalar>(moments: &MomentSet<T>, f: &DiscountFactors<T>) -> T {
    f.a2 * moments.mean_c2v + composite_variance_with(moments, f)
}

/// `V`, the cross-project variance of the noise-free unit payoff.
pub fn composite_variance<T: Scalar>(moments: &MomentSet<T>, market: &MarketSpec<T>) -> T {
    composite_variance_with(moments, &market.factors())
}

/// `<h>`.
pub fn mean_unit_return<T: Scalar>(moments: &MomentSet<T>, market: &MarketSpec<T>) -> T {
    mean_h_with(moments, &market.factors())
}

/// `<h²> - <h>² = A2 <c²v> + V`.
pub fn unit_return_variance<T: Scalar>(moments: &MomentSet<T>, market: &MarketSpec<T>) -> T {
    var_h_with(moments, &market.factors())
}

/// Quenched maximal NPV per project.
pub fn kappa_quenched<T: Scalar>(moments: &MomentSet<T>, market: &MarketSpec<T>) -> T {
    let f = market.factors();
    market.budget * mean_h_with(moments, &f) + market.concentration_slack().sqrt() * var_h_with(moments, &f).sqrt()
}

/// Annealed maximal expected NPV per project; depends on neither `v` nor `τ`.
pub fn kappa_annealed<T: Scalar>(moments: &MomentSet<T>, market: &MarketSpec<T>) -> T {
    market.budget * mean_unit_return(moments, market)
}

/// `(θ, k)` with `θ = sqrt(Var h / (τ - m²))` and `k = θ m - <h>`.
pub fn order_parameters<T: Scalar>(moments: &MomentSet<T>, market: &MarketSpec<T>) -> Result<(T, T)> {
    let f = market.factors();
    let slack = market.concentration_slack();
    let var_h = var_h_with(moments, &f);
    if slack <= T::zero() {
        return Err(Error::Degenerate("order parameters undefined at tau = m²".into()));
    }
    if var_h <= T::zero() {
        return Err(Error::Degenerate("order parameters undefined for zero dispersion of h".into()));
    }
    let theta = (var_h / slack).sqrt();
    Ok((theta, theta * market.budget - mean_h_with(moments, &f)))
}

pub fn analyze<T: Scalar>(moments: &MomentSet<T>, market: &MarketSpec<T>) -> ReplicaResult<T> {
    let f = market.factors();
    let mean_h = mean_h_with(moments, &f);
    let var_h = var_h_with(moments, &f);
    let (theta, k) = match order_parameters(moments, market) {
        Ok((theta, k)) => (Some(theta), Some(k)),
        Err(_) => (None, None),
    };
    ReplicaResult {
        kappa: kappa_quenched(moments, market),
        kappa_or: kappa_annealed(moments, market),
        theta,
        k,
        v_term: composite_variance_with(moments, &f),
        mean_h,
        var_h,
    }
}

/// Which maximal NPV an internal rate refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RateKind {
    Quenched,
    Annealed,
}

impl RateKind {
    fn name(self) -> &'static str {
        match self {
            RateKind::Quenched => "quenched",
            RateKind::Annealed => "annealed",
        }
    }
}

/// Maximal NPV per unit budget at rate `r`; the budget cancels from the sign.
pub fn normalized_kappa<T: Scalar>(kind: RateKind, moments: &MomentSet<T>, rate: T, maturity: u32, tau_norm: T) -> Result<T> {
    let f = DiscountFactors::compute(rate, maturity)?;
    let mean_h = mean_h_with(moments, &f);
    Ok(match kind {
        RateKind::Annealed => mean_h,
        RateKind::Quenched => mean_h + (tau_norm - T::one()).max(T::zero()).sqrt() * var_h_with(moments, &f).sqrt(),
    })
}

const RATE_FLOOR: f64 = 1e-6;
const RATE_CEILING: f64 = 1e6;
const RATE_TOL: f64 = 1e-12;
const KAPPA_TOL: f64 = 1e-10;

/// Interest rate at which the quenched or annealed maximal NPV is zero.
///
/// The root is bracketed in `(1e-6, r_max)`, growing the upper end
/// geometrically up to `1e6`, then refined by bisection.
pub fn internal_rate<T: Scalar>(
    kind: RateKind,
    moments: &MomentSet<T>,
    maturity: u32,
    tau_norm: T,
    bracket_hint: Option<(T, T)>,
) -> Result<T> {
    let no_root = |reason: String| Error::NoRoot { kind: kind.name(), maturity: Some(maturity), reason };
    if !(tau_norm >= T::one()) {
        return Err(Error::Domain(format!("tau_norm must be >= 1, got {tau_norm}")));
    }
    let f = |r: T| normalized_kappa(kind, moments, r, maturity, tau_norm);

    let floor = T::of(RATE_FLOOR);
    let ceiling = T::of(RATE_CEILING);
    let (mut lo, mut hi) = match bracket_hint {
        Some((a, b)) if a > T::zero() && b > a => (a.max(floor), b.min(ceiling)),
        _ => (floor, T::one()),
    };
    if f(lo)? <= T::zero() {
        lo = floor;
        if f(lo)? <= T::zero() {
            return Err(no_root(format!("maximal NPV is already non-positive at r = {RATE_FLOOR:e}")));
        }
    }
    while f(hi)? >= T::zero() {
        if hi >= ceiling {
            return Err(no_root(format!("maximal NPV stays non-negative up to r = {RATE_CEILING:e}")));
        }
        lo = hi;
        hi = (hi * T::of(2.0)).min(ceiling);
    }

    let rate_tol = T::of(RATE_TOL);
    let kappa_tol = T::of(KAPPA_TOL).max(T::of(16.0) * T::epsilon());
    for _ in 0..500 {
        let mid = lo + (hi - lo) / T::of(2.0);
        if mid <= lo || mid >= hi {
            return Ok(mid);
        }
        let value = f(mid)?;
        if value == T::zero() || (hi - lo <= rate_tol && value.abs() < kappa_tol) {
            return Ok(mid);
        }
        if value > T::zero() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo + (hi - lo) / T::of(2.0))
}

/// Sign pattern of `(κ, κ_OR)` at one `(r, T)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Region {
    /// `κ > 0` and `κ_OR > 0`.
    A,
    /// `κ > 0` while `κ_OR <= 0`: the annealed bound misjudges a profitable portfolio.
    B,
    /// `κ <= 0` and `κ_OR <= 0`.
    C,
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Region::A => "a",
            Region::B => "b",
            Region::C => "c",
        })
    }
}

/// Exact zeros count as non-positive.
pub fn classify_region<T: Scalar>(rate: T, maturity: u32, moments: &MomentSet<T>, tau_norm: T) -> Result<Region> {
    let quenched = normalized_kappa(RateKind::Quenched, moments, rate, maturity, tau_norm)?;
    let annealed = normalized_kappa(RateKind::Annealed, moments, rate, maturity, tau_norm)?;
    match (quenched > T::zero(), annealed > T::zero()) {
        (true, true) => Ok(Region::A),
        (true, false) => Ok(Region::B),
        (false, false) => Ok(Region::C),
        (false, true) => Err(Error::Invariant(format!(
            "kappa = {quenched} <= 0 < kappa_or = {annealed} at r = {rate}, T = {maturity}"
        ))),
    }
}
