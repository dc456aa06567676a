//! Scalar abstraction: the optics and training math is generic over the
//! floating-point type, with `f64` as the acceptance-grade default and
//! `f32` as an opt-in speed mode.

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;

pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + rustfft::FftNum
    + Display
    + Debug
    + Send
    + Sync
    + 'static
{
    /// Lossless-enough conversion from f64 for config constants.
    fn from_f64c(v: f64) -> Self {
        Self::from_f64(v).expect("f64 constant representable")
    }
    fn to_f64c(self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }
    fn two_pi() -> Self {
        Self::PI() + Self::PI()
    }
    /// One standard-normal draw in this precision.
    fn std_normal<G: rand::Rng + ?Sized>(rng: &mut G) -> Self;
}

impl Real for f32 {
    fn std_normal<G: rand::Rng + ?Sized>(rng: &mut G) -> Self {
        rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng)
    }
}

impl Real for f64 {
    fn std_normal<G: rand::Rng + ?Sized>(rng: &mut G) -> Self {
        rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng)
    }
}
