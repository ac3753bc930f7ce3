//! Scalar abstraction shared by the closed-form and optimizer code.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point type the numeric modules are generic over: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` literal.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).expect("count representable")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Neumaier compensated sum.
pub fn compensated_sum<T: Scalar, I: IntoIterator<Item = T>>(values: I) -> T {
    let mut sum = T::zero();
    let mut carry = T::zero();
    for x in values {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            carry += (sum - t) + x;
        } else {
            carry += (x - t) + sum;
        }
        sum = t;
    }
    sum + carry
}

/// Population mean and variance (divisor `n`), computed around the first
/// element as a shift so that a constant slice yields exactly that constant
/// and exactly zero variance.
pub fn mean_and_variance<T: Scalar>(values: &[T]) -> Option<(T, T)> {
    let first = *values.first()?;
    let n = T::of_usize(values.len());
    let mean = first + compensated_sum(values.iter().map(|&x| x - first)) / n;
    let var = compensated_sum(values.iter().map(|&x| (x - mean) * (x - mean))) / n;
    Some((mean, var))
}

/// Population covariance of two equal-length slices around known means.
pub(crate) fn covariance<T: Scalar>(a: &[T], mean_a: T, b: &[T], mean_b: T) -> T {
    debug_assert_eq!(a.len(), b.len());
    let n = T::of_usize(a.len());
    compensated_sum(a.iter().zip(b).map(|(&x, &y)| (x - mean_a) * (y - mean_b))) / n
}
