//! Floating-point element abstraction for the attention paths.
//!
//! Everything analytic (rope, spectrum, decay, repetition) runs in f64; the
//! attention kernels are generic so the 32-bit mode can be checked against
//! the 64-bit oracle at its own tolerance.

use std::fmt;
use std::iter::Sum;

use ndarray::LinalgScalar;
use num_traits::{Float, FromPrimitive, NumCast};

pub trait Real:
    Float + FromPrimitive + LinalgScalar + Sum<Self> + Send + Sync + fmt::Debug + fmt::Display + 'static
{
    fn of(x: f64) -> Self {
        <Self as NumCast>::from(x).expect("f64 converts to element type")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("element converts to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}
