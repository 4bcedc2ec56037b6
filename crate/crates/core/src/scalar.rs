//! Scalar abstraction for the numeric core.
//!
//! Every estimation routine in this crate is generic over [`Scalar`] so the
//! same code runs in `f32` or `f64`. The crate root exports `f64` aliases for
//! the common types; tolerances quoted in the documentation assume `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar usable throughout the estimation stack.
pub trait Scalar:
    Float + NumAssign + FromPrimitive + ToPrimitive + Sum<Self> + Display + Debug + Send + Sync + 'static
{
    /// Lossy conversion from `f64`; total for any finite input.
    fn of_f64(v: f64) -> Self {
        Self::from(v).expect("f64 converts to every supported scalar")
    }

    /// Widening conversion to `f64` for reporting and formatting.
    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).expect("every supported scalar widens to f64")
    }

    /// Conversion from a count. Exact for the sizes that occur here.
    fn of_usize(v: usize) -> Self {
        Self::from(v).expect("usize converts to every supported scalar")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
