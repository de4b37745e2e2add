//! Scalar abstraction shared by the numerical modules.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real scalar usable by the sensitivity, control, stability and simulation code.
///
/// Implemented for `f32` and `f64`. Everything that needs an eigen or singular
/// value decomposition goes through nalgebra, hence the `RealField` bound.
pub trait Scalar:
    RealField + Copy + FromPrimitive + ToPrimitive + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` literal.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }

    /// Lossy conversion to `f64`, used for reporting.
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn from_usize_lossy(v: usize) -> Self {
        Self::from_usize(v).expect("usize representable")
    }

    /// Unit round-off of the type.
    fn machine_eps() -> Self {
        Self::default_epsilon()
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
