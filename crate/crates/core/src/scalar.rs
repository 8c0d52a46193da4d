//! Scalar abstraction shared by the numeric core.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive};

/// Floating-point type the scoring math is generic over (`f32` or `f64`).
pub trait Scalar:
    Float + FromPrimitive + Default + Debug + Display + Send + Sync + 'static
{
    /// Converts an `f64` constant or config value into `Self`.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 value representable in scalar type")
    }

    /// Widens to `f64` for reporting and serialization.
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Largest representable value strictly below one.
    fn below_one() -> Self {
        Self::one() - Self::epsilon() / (Self::one() + Self::one())
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
