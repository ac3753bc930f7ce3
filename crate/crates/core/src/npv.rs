//! Realized net present value of projects for one draw of cash-flow noise.
//!
//! A unit invested in project `i` returns
//! `h_i = -1 + c_i Σ_t (1 + x_it)(1+r)^-t + λ_i (1+r)^-T`, so the NPV of an
//! investment `w_i` is `w_i · h_i` and the portfolio NPV is `Σ w_i h_i`.
//! Investments may be negative.

use serde::{Deserialize, Serialize};

use crate::discounting::{discount, MarketSpec};
use crate::{compensated_sum, Error, Result, Scalar};

/// Per-project parameters: coupon rate, attenuation rate, noise variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectEnsemble<T> {
    coupon: Vec<T>,
    attenuation: Vec<T>,
    variance: Vec<T>,
}

impl<T: Scalar> ProjectEnsemble<T> {
    pub fn new(coupon: Vec<T>, attenuation: Vec<T>, variance: Vec<T>) -> Result<Self> {
        let n = coupon.len();
        if n == 0 {
            return Err(Error::Domain("an ensemble needs at least one project".into()));
        }
        for (what, len) in [("attenuation", attenuation.len()), ("variance", variance.len())] {
            if len != n {
                return Err(Error::Dimension { what, expected: n, actual: len });
            }
        }
        for (name, values) in [("coupon", &coupon), ("attenuation", &attenuation), ("variance", &variance)] {
            if let Some((i, x)) = values.iter().enumerate().find(|(_, x)| !(**x >= T::zero()) || !x.is_finite()) {
                return Err(Error::Domain(format!("{name}[{i}] = {x} must be finite and non-negative")));
            }
        }
        Ok(Self { coupon, attenuation, variance })
    }

    /// `n` copies of the same project.
    pub fn uniform(n: usize, coupon: T, attenuation: T, variance: T) -> Result<Self> {
        Self::new(vec![coupon; n], vec![attenuation; n], vec![variance; n])
    }

    pub fn len(&self) -> usize {
        self.coupon.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coupon.is_empty()
    }

    pub fn coupon(&self) -> &[T] {
        &self.coupon
    }

    pub fn attenuation(&self) -> &[T] {
        &self.attenuation
    }

    pub fn variance(&self) -> &[T] {
        &self.variance
    }
}

/// Realized noise `x_it`, stored row-major with one row per project.
#[derive(Debug, Clone, PartialEq)]
pub struct CashFlowMatrix<T> {
    data: Vec<T>,
    projects: usize,
    periods: usize,
}

impl<T: Scalar> CashFlowMatrix<T> {
    pub fn from_rows(projects: usize, periods: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != projects * periods {
            return Err(Error::Dimension {
                what: "cash-flow matrix entries",
                expected: projects * periods,
                actual: data.len(),
            });
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("cash-flow noise must be finite".into()));
        }
        Ok(Self { data, projects, periods })
    }

    pub fn zeros(projects: usize, periods: usize) -> Self {
        Self { data: vec![T::zero(); projects * periods], projects, periods }
    }

    pub fn projects(&self) -> usize {
        self.projects
    }

    pub fn periods(&self) -> usize {
        self.periods
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.periods..(i + 1) * self.periods]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks_exact(self.periods.max(1)).take(self.projects)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }
}

fn check_row<T>(x_row: &[T], maturity: u32) -> Result<()> {
    if x_row.len() != maturity as usize {
        return Err(Error::Dimension {
            what: "noise row length vs maturity",
            expected: maturity as usize,
            actual: x_row.len(),
        });
    }
    Ok(())
}

/// Discounted return per unit invested, `h`.
pub fn realized_unit_return<T: Scalar>(coupon: T, attenuation: T, x_row: &[T], market: &MarketSpec<T>) -> Result<T> {
    check_row(x_row, market.maturity)?;
    let rate = market.rate;
    let coupons = compensated_sum(
        x_row
            .iter()
            .enumerate()
            .map(|(t, &x)| (T::one() + x) * discount(rate, t as u32 + 1)),
    );
    Ok(-T::one() + coupon * coupons + attenuation * discount(rate, market.maturity))
}

/// NPV of investing `w` in one project. Exactly `w · h`.
pub fn npv_single<T: Scalar>(w: T, coupon: T, attenuation: T, x_row: &[T], market: &MarketSpec<T>) -> Result<T> {
    Ok(w * realized_unit_return(coupon, attenuation, x_row, market)?)
}

fn check_dimensions<T: Scalar>(ensemble: &ProjectEnsemble<T>, noise: &CashFlowMatrix<T>, market: &MarketSpec<T>) -> Result<()> {
    if noise.projects() != ensemble.len() {
        return Err(Error::Dimension {
            what: "noise rows vs projects",
            expected: ensemble.len(),
            actual: noise.projects(),
        });
    }
    if noise.periods() != market.maturity as usize {
        return Err(Error::Dimension {
            what: "noise columns vs maturity",
            expected: market.maturity as usize,
            actual: noise.periods(),
        });
    }
    Ok(())
}

/// `h_i` for every project.
pub fn unit_returns<T: Scalar>(ensemble: &ProjectEnsemble<T>, noise: &CashFlowMatrix<T>, market: &MarketSpec<T>) -> Result<Vec<T>> {
    check_dimensions(ensemble, noise, market)?;
    // Discount powers are shared by every row.
    let factors: Vec<T> = (1..=market.maturity).map(|t| discount(market.rate, t)).collect();
    let terminal = discount(market.rate, market.maturity);
    Ok(ensemble
        .coupon()
        .iter()
        .zip(ensemble.attenuation())
        .zip(noise.rows())
        .map(|((&c, &l), row)| {
            let coupons = compensated_sum(row.iter().zip(&factors).map(|(&x, &d)| (T::one() + x) * d));
            -T::one() + c * coupons + l * terminal
        })
        .collect())
}

/// Portfolio NPV `H(w | X) = Σ_i w_i h_i`.
pub fn total_npv<T: Scalar>(
    w: &[T],
    ensemble: &ProjectEnsemble<T>,
    noise: &CashFlowMatrix<T>,
    market: &MarketSpec<T>,
) -> Result<T> {
    if w.len() != ensemble.len() {
        return Err(Error::Dimension { what: "allocation vs projects", expected: ensemble.len(), actual: w.len() });
    }
    let h = unit_returns(ensemble, noise, market)?;
    Ok(compensated_sum(w.iter().zip(&h).map(|(&wi, &hi)| wi * hi)))
}
