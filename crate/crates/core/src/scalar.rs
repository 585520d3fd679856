use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;
use std::str::FromStr;

use num_traits::{Float, FromPrimitive, NumAssign};

/// Floating-point element type for every model tensor: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + NumAssign + Sum + Debug + Display + LowerExp + FromStr + Default + Send + Sync + 'static
{
    /// Significant decimal digits needed for an exact text round trip.
    const DIGITS: usize;
    const NAME: &'static str;

    /// Converts an `f64` constant. Panics only on values the type cannot hold.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("scalar literal out of range")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {
    const DIGITS: usize = 9;
    const NAME: &'static str = "f32";
}

impl Scalar for f64 {
    const DIGITS: usize = 17;
    const NAME: &'static str = "f64";
}
