use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::str::FromStr;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating point scalar the toolkit computes in: `f32` or `f64`.
///
/// `Display` must print the shortest decimal that parses back to the same
/// value, which holds for both primitive float types.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + FromStr
    + Sum
    + Debug
    + Display
    + Default
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Lossless conversion from a literal used in kernels (0.5, 1e-12, ...).
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable in scalar type")
    }

    /// Ratio of two counts.
    fn ratio(num: usize, den: usize) -> Self {
        Self::lit(num as f64) / Self::lit(den as f64)
    }

    /// Clamp margin that keeps `ln` finite inside entropy evaluation.
    fn log_clamp() -> Self;
}

impl Scalar for f64 {
    fn log_clamp() -> Self {
        1e-12
    }
}

impl Scalar for f32 {
    // 1 - 1e-12 rounds to 1.0 in single precision.
    fn log_clamp() -> Self {
        1e-7
    }
}

/// Unweighted mean of the defined entries; `None` when nothing is defined.
pub fn mean_defined<T: Scalar>(values: impl IntoIterator<Item = Option<T>>) -> Option<T> {
    let mut sum = T::zero();
    let mut n = 0usize;
    for v in values.into_iter().flatten() {
        sum = sum + v;
        n += 1;
    }
    (n > 0).then(|| sum / T::lit(n as f64))
}
