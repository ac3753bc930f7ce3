//! Discount-factor algebra: the annuity factors `A1 = Σ (1+r)^-t`,
//! `A2 = Σ (1+r)^-2t` over `t = 1..=T`, and the per-unit payoff
//! `B = c·A1 + λ·(1+r)^-T`.

use serde::Serialize;

use crate::{Error, Result, Scalar};

/// Below this rate the closed forms lose precision to `0/0`; the factors are
/// summed term by term instead.
const DIRECT_SUM_BELOW: f64 = 1e-8;

/// Market-wide parameters shared by every project.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MarketSpec<T> {
    /// Interest rate per period, `r > 0`.
    pub rate: T,
    /// Maturity in whole periods, `T >= 1`.
    pub maturity: u32,
    /// Initial budget per project, `m > 0`.
    pub budget: T,
    /// Concentration cap `τ`, with `Σ w_i² <= N τ` and `τ >= m²`.
    pub tau: T,
}

impl<T: Scalar> MarketSpec<T> {
    pub fn new(rate: T, maturity: u32, budget: T, tau: T) -> Result<Self> {
        check_rate(rate, maturity)?;
        if !(budget > T::zero()) || !budget.is_finite() {
            return Err(Error::Domain(format!("budget must be positive, got {budget}")));
        }
        // (a·m)² and a²·τ can round differently; tolerate a few ulps.
        let floor = budget * budget * (T::one() - T::of(8.0) * T::epsilon());
        if !(tau >= floor) || !tau.is_finite() {
            return Err(Error::Domain(format!(
                "concentration cap tau={tau} is below budget² = {}",
                budget * budget
            )));
        }
        Ok(Self { rate, maturity, budget, tau })
    }

    /// Builds the market from the budget-normalized cap `τ' = τ / m²`.
    pub fn with_tau_norm(rate: T, maturity: u32, budget: T, tau_norm: T) -> Result<Self> {
        if !(tau_norm >= T::one()) {
            return Err(Error::Domain(format!("tau_norm must be >= 1, got {tau_norm}")));
        }
        Self::new(rate, maturity, budget, tau_norm * budget * budget)
    }

    pub fn tau_norm(&self) -> T {
        self.tau / (self.budget * self.budget)
    }

    /// `τ - m²`, clamped at zero.
    pub fn concentration_slack(&self) -> T {
        (self.tau - self.budget * self.budget).max(T::zero())
    }

    pub fn factors(&self) -> DiscountFactors<T> {
        DiscountFactors::compute(self.rate, self.maturity)
            .expect("market rate and maturity validated at construction")
    }

    /// Same market with the budget and cap rescaled as `(a·m, a²·τ)`.
    pub fn scaled(&self, a: T) -> Result<Self> {
        Self::new(self.rate, self.maturity, a * self.budget, a * a * self.tau)
    }
}

/// Precomputed discount factors for one `(r, T)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscountFactors<T> {
    pub a1: T,
    pub a2: T,
    /// `(1+r)^-T`.
    pub terminal: T,
}

impl<T: Scalar> DiscountFactors<T> {
    pub fn compute(rate: T, maturity: u32) -> Result<Self> {
        Ok(Self {
            a1: annuity_factor(rate, maturity)?,
            a2: squared_annuity_factor(rate, maturity)?,
            terminal: discount(rate, maturity),
        })
    }

    /// `B = c·A1 + λ·(1+r)^-T` without revalidating inputs.
    pub fn unit_payoff(&self, coupon: T, attenuation: T) -> T {
        coupon * self.a1 + attenuation * self.terminal
    }
}

fn check_rate<T: Scalar>(rate: T, maturity: u32) -> Result<()> {
    if !(rate > T::zero()) || !rate.is_finite() {
        return Err(Error::Domain(format!("interest rate must be positive, got {rate}")));
    }
    if maturity < 1 {
        return Err(Error::Domain("maturity must be at least one period".into()));
    }
    Ok(())
}

/// `(1+r)^-t`.
pub fn discount<T: Scalar>(rate: T, periods: u32) -> T {
    (-T::from_u32(periods).unwrap() * rate.ln_1p()).exp()
}

fn direct_sum<T: Scalar>(rate: T, maturity: u32, power: u32) -> T {
    (1..=maturity).map(|t| discount(rate, power * t)).sum()
}

/// `A1 = (1 - (1+r)^-T) / r`.
pub fn annuity_factor<T: Scalar>(rate: T, maturity: u32) -> Result<T> {
    check_rate(rate, maturity)?;
    if rate < T::of(DIRECT_SUM_BELOW) {
        return Ok(direct_sum(rate, maturity, 1));
    }
    let t = T::from_u32(maturity).unwrap();
    Ok(-(-t * rate.ln_1p()).exp_m1() / rate)
}

/// `A2 = (1 - (1+r)^-2T) / (r² + 2r)`.
pub fn squared_annuity_factor<T: Scalar>(rate: T, maturity: u32) -> Result<T> {
    check_rate(rate, maturity)?;
    if rate < T::of(DIRECT_SUM_BELOW) {
        return Ok(direct_sum(rate, maturity, 2));
    }
    let two_t = T::of(2.0) * T::from_u32(maturity).unwrap();
    Ok(-(-two_t * rate.ln_1p()).exp_m1() / (rate * (rate + T::of(2.0))))
}

/// Present value per unit invested of the coupon stream plus the terminal
/// divestment, `B = c·A1 + λ·(1+r)^-T`.
pub fn unit_terminal_payoff<T: Scalar>(coupon: T, attenuation: T, rate: T, maturity: u32) -> Result<T> {
    if !(coupon >= T::zero()) || !(attenuation >= T::zero()) {
        return Err(Error::Domain(format!(
            "coupon ({coupon}) and attenuation ({attenuation}) must be non-negative"
        )));
    }
    Ok(DiscountFactors::compute(rate, maturity)?.unit_payoff(coupon, attenuation))
}
