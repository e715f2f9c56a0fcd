//! Scalar abstraction shared by every numerical module.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating-point type the simulator is generic over (`f32` or `f64`).
pub trait Real:
    Float
    + NumAssign
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Converts an `f64` literal. Never fails for the supported types.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn two() -> Self {
        Self::lit(2.0)
    }

    #[inline]
    fn half() -> Self {
        Self::lit(0.5)
    }
}

impl<T> Real for T where
    T: Float
        + NumAssign
        + FloatConst
        + FromPrimitive
        + ToPrimitive
        + Default
        + Debug
        + Display
        + Sum
        + AddAssign
        + SubAssign
        + MulAssign
        + DivAssign
        + Send
        + Sync
        + Serialize
        + DeserializeOwned
        + 'static
{
}

/// 2π for the chosen scalar type.
#[inline]
pub fn tau<T: Real>() -> T {
    T::TAU()
}

/// Converts a cyclic frequency in Hz to an angular frequency in rad/s.
#[inline]
pub fn hz_to_angular<T: Real>(hz: T) -> T {
    hz * tau::<T>()
}

/// Converts an angular frequency in rad/s to a cyclic frequency in Hz.
#[inline]
pub fn angular_to_hz<T: Real>(w: T) -> T {
    w / tau::<T>()
}

pub const GAUSS_PER_TESLA: f64 = 1.0e4;

#[inline]
pub fn gauss_to_tesla<T: Real>(g: T) -> T {
    g / T::lit(GAUSS_PER_TESLA)
}

#[inline]
pub fn tesla_to_gauss<T: Real>(b: T) -> T {
    b * T::lit(GAUSS_PER_TESLA)
}
