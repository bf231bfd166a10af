//! Scalar abstraction for the pooling math.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::Float;

/// Floating-point scalar the pooling functions are generic over.
pub trait Scalar: Float + Sum<Self> + Debug + Display + Send + Sync + 'static {
    /// Lossy conversion from a literal. Panics only for values outside the
    /// target type's range, which none of the constants used here are.
    fn lit(value: f64) -> Self {
        Self::from(value).expect("literal representable in scalar type")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
