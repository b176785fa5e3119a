//! Scalar abstraction for the pointwise matrix calculus and the
//! manufactured solution, so the same formulas run at f32 and f64.

use std::fmt::{Debug, Display};

/// Floating point scalar: f32 or f64.
pub trait Real:
    num_traits::Float + num_traits::FloatConst + num_traits::NumAssign + Copy + Debug + Display + 'static
{
    /// Lossy conversion from a literal constant.
    fn of(x: f64) -> Self;
}

impl Real for f64 {
    #[inline]
    fn of(x: f64) -> Self {
        x
    }
}

impl Real for f32 {
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }
}
