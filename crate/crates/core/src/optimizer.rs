//! Finite-N maximization of `Σ h_i w_i` over the feasible set
//! `D = { w : Σ w_i = N m, Σ w_i² <= N τ }`.
//!
//! [`solve_allocation`] uses the stationarity conditions directly:
//! `w_i = (k + h_i) / θ` with `θ = sqrt(Var h / (τ - m²))` and
//! `k = θ m - <h>`. [`oracle_allocation`] reaches the same optimum by
//! projected ascent, where each projection onto `D` is found by bisecting
//! on the ball multiplier, and recovers `(k, θ)` by regression afterwards.

use crate::npv::{unit_returns, CashFlowMatrix, ProjectEnsemble};
use crate::discounting::MarketSpec;
use crate::{compensated_sum, mean_and_variance, Error, Result, Scalar};

/// An investment vector together with its Lagrange parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation<T> {
    pub w: Vec<T>,
    /// Budget multiplier.
    pub k: T,
    /// Concentration multiplier; `0` whenever it is not identifiable.
    pub theta: T,
    /// Whether `Σ w_i² = N τ` at the returned point.
    pub binding: bool,
}

impl<T: Scalar> Allocation<T> {
    /// `(1/N) Σ w_i h_i`.
    pub fn objective_per_project(&self, h: &[T]) -> T {
        compensated_sum(self.w.iter().zip(h).map(|(&w, &h)| w * h)) / T::of_usize(self.w.len())
    }

    /// `|Σ w_i - N m| / (N m)`.
    pub fn budget_residual(&self, market: &MarketSpec<T>) -> T {
        let target = T::of_usize(self.w.len()) * market.budget;
        (compensated_sum(self.w.iter().copied()) - target).abs() / target
    }

    /// `Σ w_i² / (N τ) - 1`; non-positive when the cap holds.
    pub fn concentration_residual(&self, market: &MarketSpec<T>) -> T {
        let cap = T::of_usize(self.w.len()) * market.tau;
        compensated_sum(self.w.iter().map(|&w| w * w)) / cap - T::one()
    }

    /// `max_i |h_i - θ w_i + k|`.
    pub fn kkt_residual(&self, h: &[T]) -> T {
        self.w
            .iter()
            .zip(h)
            .map(|(&w, &h)| (h - self.theta * w + self.k).abs())
            .fold(T::zero(), T::max)
    }

    /// Checks the feasibility invariants of `D` at relative tolerance `1e-9`.
    pub fn check_feasible(&self, market: &MarketSpec<T>) -> Result<()> {
        let tol = T::of(1e-9).max(T::of(64.0) * T::epsilon());
        let budget = self.budget_residual(market);
        let conc = self.concentration_residual(market);
        if !(budget <= tol) {
            return Err(Error::Invariant(format!("budget residual {budget} exceeds {tol}")));
        }
        if !(conc <= tol) || (self.binding && !(conc.abs() <= tol)) {
            return Err(Error::Invariant(format!("concentration residual {conc} (binding={})", self.binding)));
        }
        if !(self.theta >= T::zero()) {
            return Err(Error::Invariant(format!("negative concentration multiplier {}", self.theta)));
        }
        Ok(())
    }
}

/// Realized unit returns with their population mean and variance.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalHStats<T> {
    pub h: Vec<T>,
    pub mean_h: T,
    pub var_h: T,
}

impl<T: Scalar> EmpiricalHStats<T> {
    /// True when the dispersion of `h` is indistinguishable from rounding
    /// noise, in which case every feasible point is optimal.
    pub fn is_degenerate(&self) -> bool {
        let scale = self.h.iter().fold(T::zero(), |acc, x| acc.max(x.abs()));
        self.var_h <= T::zero() || self.var_h.sqrt() <= T::of(32.0) * T::epsilon() * scale
    }

    pub fn std_h(&self) -> T {
        self.var_h.sqrt()
    }
}

pub fn h_stats<T: Scalar>(h: Vec<T>) -> Result<EmpiricalHStats<T>> {
    if let Some(x) = h.iter().find(|x| !x.is_finite()) {
        return Err(Error::Domain(format!("unit return {x} is not finite")));
    }
    let (mean_h, var_h) =
        mean_and_variance(&h).ok_or_else(|| Error::Domain("empty unit-return vector".into()))?;
    Ok(EmpiricalHStats { h, mean_h, var_h })
}

/// Closed-form maximizer of `Σ h_i w_i` over `D`.
///
/// With zero dispersion the minimum-norm feasible point `w = m·1` is returned
/// with `binding = false`. With `τ = m²` the feasible set is the single point
/// `m·1` and `binding = true`. In both cases `θ` is reported as `0` and
/// `k = -<h>`.
pub fn solve_allocation<T: Scalar>(stats: &EmpiricalHStats<T>, market: &MarketSpec<T>) -> Allocation<T> {
    let n = stats.h.len();
    let m = market.budget;
    let slack = market.concentration_slack();
    let flat = |binding| Allocation { w: vec![m; n], k: -stats.mean_h, theta: T::zero(), binding };
    if slack == T::zero() {
        return flat(true);
    }
    if stats.is_degenerate() {
        return flat(false);
    }
    let radius = slack.sqrt();
    let sigma = stats.std_h();
    let theta = sigma / radius;
    let k = theta * m - stats.mean_h;
    let w = stats.h.iter().map(|&h| m + radius * (h - stats.mean_h) / sigma).collect();
    Allocation { w, k, theta, binding: true }
}

/// Iteration controls for [`oracle_allocation`].
#[derive(Debug, Clone, Copy)]
pub struct OracleConfig {
    pub max_iterations: usize,
    /// Relative width at which the multiplier bisection stops.
    pub bisection_tol: f64,
    /// Target for `max |h - θ w + k|`, relative to `max(1, max |h|)`.
    pub kkt_tol: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { max_iterations: 100_000, bisection_tol: 1e-12, kkt_tol: 1e-10 }
    }
}

/// Euclidean projection of `y` onto `D`.
///
/// Stationarity of the projection problem gives `w = (y + k e)/(1 + μ)` with
/// the budget fixing `k`; `μ >= 0` is found by bisection on `Σ w² = N τ`.
fn project_onto_feasible<T: Scalar>(y: &[T], budget: T, cap: T, tol: T) -> Vec<T> {
    let n = T::of_usize(y.len());
    let mean = compensated_sum(y.iter().copied()) / n;
    let at = |mu: T| -> Vec<T> { y.iter().map(|&v| budget + (v - mean) / (T::one() + mu)).collect() };
    let sq_norm = |w: &[T]| compensated_sum(w.iter().map(|&x| x * x));

    let inside = at(T::zero());
    if sq_norm(&inside) <= cap {
        return inside;
    }
    let (mut lo, mut hi) = (T::zero(), T::one());
    while sq_norm(&at(hi)) > cap {
        lo = hi;
        hi *= T::of(2.0);
        if !hi.is_finite() {
            break;
        }
    }
    for _ in 0..400 {
        if hi - lo <= tol * (T::one() + hi) {
            break;
        }
        let mid = lo + (hi - lo) / T::of(2.0);
        if mid <= lo || mid >= hi {
            break;
        }
        if sq_norm(&at(mid)) > cap {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(hi)
}

/// Least-squares fit of `h ≈ θ w - k`, returning `(θ, k, max residual)`.
fn fit_multipliers<T: Scalar>(w: &[T], h: &[T]) -> (T, T, T) {
    let n = T::of_usize(w.len());
    let w_bar = compensated_sum(w.iter().copied()) / n;
    let h_bar = compensated_sum(h.iter().copied()) / n;
    let sxy = compensated_sum(w.iter().zip(h).map(|(&a, &b)| (a - w_bar) * (b - h_bar)));
    let sxx = compensated_sum(w.iter().map(|&a| (a - w_bar) * (a - w_bar)));
    let theta = if sxx > T::zero() { sxy / sxx } else { T::zero() };
    let k = theta * w_bar - h_bar;
    let residual = w
        .iter()
        .zip(h)
        .map(|(&wi, &hi)| (hi - theta * wi + k).abs())
        .fold(T::zero(), T::max);
    (theta, k, residual)
}

/// Independent numeric maximizer of `Σ h_i w_i` over `D` (projected ascent).
pub fn oracle_allocation<T: Scalar>(h: &[T], market: &MarketSpec<T>) -> Result<Allocation<T>> {
    oracle_allocation_with(h, market, OracleConfig::default())
}

pub fn oracle_allocation_with<T: Scalar>(h: &[T], market: &MarketSpec<T>, config: OracleConfig) -> Result<Allocation<T>> {
    if h.is_empty() {
        return Err(Error::Domain("empty unit-return vector".into()));
    }
    let n = T::of_usize(h.len());
    let m = market.budget;
    let cap = n * market.tau;
    let mean_h = compensated_sum(h.iter().copied()) / n;
    let mut w = vec![m; h.len()];

    if market.concentration_slack() == T::zero() {
        return Ok(Allocation { w, k: -mean_h, theta: T::zero(), binding: true });
    }
    let h_norm = compensated_sum(h.iter().map(|&x| x * x)).sqrt();
    let g_norm = compensated_sum(h.iter().map(|&x| (x - mean_h) * (x - mean_h))).sqrt();
    if g_norm <= T::of(32.0) * T::epsilon() * h_norm {
        return Ok(Allocation { w, k: -mean_h, theta: T::zero(), binding: false });
    }

    let scale = T::one().max(h.iter().fold(T::zero(), |acc, x| acc.max(x.abs())));
    let kkt_tol = T::of(config.kkt_tol).max(T::of(64.0) * T::epsilon()) * scale;
    let bisection_tol = T::of(config.bisection_tol).max(T::of(4.0) * T::epsilon());
    // Only the component of h along the hyperplane moves the iterate.
    let step = T::of(10.0) * cap.sqrt() / g_norm;
    let on_sphere = cap * (T::one() - T::of(1e-9).max(T::of(64.0) * T::epsilon()));
    let mut residual = T::infinity();
    for _ in 0..config.max_iterations {
        let ascent: Vec<T> = w.iter().zip(h).map(|(&wi, &hi)| wi + step * hi).collect();
        w = project_onto_feasible(&ascent, m, cap, bisection_tol);
        let (theta, k, r) = fit_multipliers(&w, h);
        let binding = compensated_sum(w.iter().map(|&x| x * x)) >= on_sphere;
        // stationarity, dual feasibility and complementary slackness
        residual = if theta < T::zero() || (!binding && theta * cap.sqrt() >= kkt_tol) { T::infinity() } else { r };
        if residual < kkt_tol {
            return Ok(Allocation { w, k, theta, binding });
        }
    }
    Err(Error::NonConvergence { iterations: config.max_iterations, residual: residual.to_f64_lossy() })
}

/// Finite-N maximal NPV per project, `(1/N) max_{w ∈ D} H(w | X)`.
pub fn max_npv_per_project<T: Scalar>(
    ensemble: &ProjectEnsemble<T>,
    noise: &CashFlowMatrix<T>,
    market: &MarketSpec<T>,
) -> Result<T> {
    let stats = h_stats(unit_returns(ensemble, noise, market)?)?;
    Ok(optimal_value(&stats, market))
}

/// `m <h> + sqrt(τ - m²) sqrt(Var h)`, the value attained by [`solve_allocation`].
pub fn optimal_value<T: Scalar>(stats: &EmpiricalHStats<T>, market: &MarketSpec<T>) -> T {
    let spread = if stats.is_degenerate() { T::zero() } else { stats.std_h() };
    market.budget * stats.mean_h + market.concentration_slack().sqrt() * spread
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::npv::total_npv;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn market(m: f64, tau: f64) -> MarketSpec<f64> {
        MarketSpec::new(0.1, 3, m, tau).unwrap()
    }

    /// Textbook two-pass moments, kept separate from the library path.
    fn two_pass(h: &[f64]) -> (f64, f64) {
        let n = h.len() as f64;
        let mean = h.iter().sum::<f64>() / n;
        (mean, h.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n)
    }

    #[test]
    fn stats_small_cases() {
        let s = h_stats(vec![1.0, 1.0, 1.0]).unwrap();
        assert_eq!((s.mean_h, s.var_h), (1.0, 0.0));
        let s = h_stats(vec![0.0, 2.0]).unwrap();
        assert_eq!((s.mean_h, s.var_h), (1.0, 1.0));
        assert!(h_stats(Vec::<f64>::new()).is_err());
        assert!(h_stats(vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn stats_match_two_pass_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h: Vec<f64> = (0..1000).map(|_| rng.gen_range(-1.0..2.0)).collect();
        let (mean, var) = two_pass(&h);
        let s = h_stats(h.clone()).unwrap();
        assert_relative_eq!(s.mean_h, mean, max_relative = 1e-12);
        assert_relative_eq!(s.var_h, var, max_relative = 1e-12);
        let raw = h.iter().map(|x| x * x).sum::<f64>() / 1000.0 - mean * mean;
        assert_relative_eq!(s.var_h, raw, max_relative = 1e-12);
    }

    #[test]
    fn collapsed_ball_returns_budget_point() {
        let stats = h_stats(vec![-0.3, 0.1, 0.5]).unwrap();
        let a = solve_allocation(&stats, &market(2.0, 4.0));
        assert_eq!(a.w, vec![2.0; 3]);
        assert!(a.binding);
        assert_relative_eq!(a.objective_per_project(&stats.h), 2.0 * stats.mean_h, max_relative = 1e-15);
        a.check_feasible(&market(2.0, 4.0)).unwrap();
    }

    #[test]
    fn constant_returns_tie_break() {
        let stats = h_stats(vec![0.25; 5]).unwrap();
        let a = solve_allocation(&stats, &market(1.0, 3.0));
        assert_eq!(a.w, vec![1.0; 5]);
        assert_eq!(a.theta, 0.0);
        assert!(!a.binding);
        assert_eq!(a.kkt_residual(&stats.h), 0.0);
        a.check_feasible(&market(1.0, 3.0)).unwrap();

        let o = oracle_allocation(&stats.h, &market(1.0, 3.0)).unwrap();
        assert_eq!(o.w, vec![1.0; 5]);
    }

    #[test]
    fn two_project_hand_optimum() {
        // On w1 + w2 = 2, w1² + w2² <= 4 the objective w2 peaks at (0, 2).
        let h = vec![0.0, 1.0];
        let mk = market(1.0, 2.0);
        let closed = solve_allocation(&h_stats(h.clone()).unwrap(), &mk);
        let oracle = oracle_allocation(&h, &mk).unwrap();
        for a in [&closed, &oracle] {
            assert!((a.w[0] - 0.0).abs() < 1e-9 && (a.w[1] - 2.0).abs() < 1e-9, "{:?}", a.w);
            a.check_feasible(&mk).unwrap();
        }
    }

    #[test]
    fn three_project_oracle_cross_check() {
        let h = vec![-0.1, 0.0, 0.4];
        let mk = market(1.0, 3.0);
        let stats = h_stats(h.clone()).unwrap();
        let closed = solve_allocation(&stats, &mk);
        let oracle = oracle_allocation(&h, &mk).unwrap();
        assert!((closed.objective_per_project(&h) - oracle.objective_per_project(&h)).abs() < 1e-8);
        assert!((closed.objective_per_project(&h) - optimal_value(&stats, &mk)).abs() < 1e-12);
        assert!(closed.kkt_residual(&h) < 1e-12);
        assert!(oracle.kkt_residual(&h) < 1e-10);
        assert_relative_eq!(closed.theta, oracle.theta, max_relative = 1e-8);
    }

    #[test]
    fn random_fifty_project_equivalence() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let h: Vec<f64> = (0..50).map(|_| rng.gen_range(-0.5..0.8)).collect();
        let mk = market(1.5, 1.5 * 1.5 * 2.7);
        let closed = solve_allocation(&h_stats(h.clone()).unwrap(), &mk);
        let oracle = oracle_allocation(&h, &mk).unwrap();
        assert!((closed.objective_per_project(&h) - oracle.objective_per_project(&h)).abs() < 1e-8);
        closed.check_feasible(&mk).unwrap();
        oracle.check_feasible(&mk).unwrap();
        assert!(closed.binding && oracle.binding);
    }

    #[test]
    fn oracle_handles_low_dispersion_pairs() {
        // Two projects whose returns differ by far less than their mean:
        // any pair of points is fit exactly by an affine map, so the oracle
        // must also insist on the cap binding before it stops.
        let h: Vec<f64> = vec![-0.45939808984193636, -0.4704807609743945];
        let mk = MarketSpec::with_tau_norm(0.55, 2, 3.4976934732089076, 1.3848353797711823).unwrap();
        let closed = solve_allocation(&h_stats(h.clone()).unwrap(), &mk);
        let oracle = oracle_allocation(&h, &mk).unwrap();
        assert!(oracle.binding);
        assert!((closed.objective_per_project(&h) - oracle.objective_per_project(&h)).abs() < 1e-8);
    }

    #[test]
    fn oracle_reports_non_convergence() {
        let h = vec![0.0, 1.0, 3.0];
        let cfg = OracleConfig { max_iterations: 0, ..OracleConfig::default() };
        assert!(matches!(oracle_allocation_with(&h, &market(1.0, 2.0), cfg), Err(Error::NonConvergence { .. })));
    }

    #[test]
    fn identical_zero_noise_projects() {
        let n = 17;
        let ens = ProjectEnsemble::uniform(n, 0.3, 0.9, 0.0).unwrap();
        let mk = MarketSpec::new(0.05, 10, 1.0, 3.0).unwrap();
        let kappa = max_npv_per_project(&ens, &CashFlowMatrix::zeros(n, 10), &mk).unwrap();
        let h = crate::npv::realized_unit_return(0.3, 0.9, &[0.0; 10], &mk).unwrap();
        assert_eq!(kappa, h);
    }

    #[test]
    fn tiny_instance_end_to_end() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (n, t) = (5, 2);
        let ens = ProjectEnsemble::new(
            (0..n).map(|_| rng.gen_range(0.0..1.0)).collect(),
            (0..n).map(|_| rng.gen_range(0.0..2.0)).collect(),
            vec![1.0; n],
        )
        .unwrap();
        let x = CashFlowMatrix::from_rows(n, t, (0..n * t).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let mk = MarketSpec::new(0.2, t as u32, 1.0, 2.0).unwrap();
        let h = unit_returns(&ens, &x, &mk).unwrap();
        let oracle = oracle_allocation(&h, &mk).unwrap();
        let via_npv = total_npv(&oracle.w, &ens, &x, &mk).unwrap() / n as f64;
        assert!((max_npv_per_project(&ens, &x, &mk).unwrap() - via_npv).abs() < 1e-9);
    }

    #[test]
    fn single_precision_closed_form() {
        let h = vec![0.1f32, -0.2, 0.4, 0.05];
        let mk = MarketSpec::new(0.1f32, 3, 1.0, 2.0).unwrap();
        let a = solve_allocation(&h_stats(h.clone()).unwrap(), &mk);
        a.check_feasible(&mk).unwrap();
        assert!(a.budget_residual(&mk) < 1e-6 && a.concentration_residual(&mk).abs() < 1e-6);
        let o = oracle_allocation(&h, &mk).unwrap();
        assert!((a.objective_per_project(&h) - o.objective_per_project(&h)).abs() < 1e-5);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn closed_form_invariants(h in proptest::collection::vec(-1.0f64..1.0, 2..60),
                                  m in 0.1f64..5.0, tau_norm in 1.01f64..6.0) {
            let mk = MarketSpec::with_tau_norm(0.1, 3, m, tau_norm).unwrap();
            let stats = h_stats(h.clone()).unwrap();
            prop_assume!(!stats.is_degenerate());
            let a = solve_allocation(&stats, &mk);
            a.check_feasible(&mk).unwrap();
            prop_assert!(a.kkt_residual(&h) < 1e-8);
            prop_assert!((a.objective_per_project(&h) - optimal_value(&stats, &mk)).abs() < 1e-10 * m.max(1.0));

            // a larger ball never lowers the optimum
            let wider = MarketSpec::with_tau_norm(0.1, 3, m, tau_norm * 1.3).unwrap();
            prop_assert!(optimal_value(&stats, &wider) >= optimal_value(&stats, &mk));
        }
    }
}
