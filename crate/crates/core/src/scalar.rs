//! Floating-point abstraction shared by the embedding, noise and decoding math.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::str::FromStr;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real scalar used for embedding coordinates and logits.
///
/// Implemented for `f32` and `f64`. Randomness is always drawn in `f64` and
/// narrowed, so both widths consume the RNG stream identically.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + FromStr + Debug + Display + Sum + Send + Sync + 'static
{
    fn of(value: f64) -> Self {
        Self::from_f64(value).expect("f64 narrows to every Scalar")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("every Scalar widens to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Squared Euclidean distance, accumulated left to right.
pub fn squared_distance<F: Scalar>(a: &[F], b: &[F]) -> F {
    a.iter()
        .zip(b)
        .fold(F::zero(), |acc, (&x, &y)| {
            let d = x - y;
            acc + d * d
        })
}

pub fn l2_norm<F: Scalar>(v: &[F]) -> F {
    v.iter().fold(F::zero(), |acc, &x| acc + x * x).sqrt()
}
