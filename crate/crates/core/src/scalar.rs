//! Scalar abstraction for the math core.
//!
//! Losses, the encoder, the trainer and the evaluation statistics are generic
//! over [`Scalar`] so the same code runs in f32 or f64. Gradient checks and
//! the training pipeline instantiate f64 (see the aliases at the crate root).

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

pub trait Scalar:
    Float
    + NumAssign
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Debug
    + Display
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Lossless-enough conversion from f64 for constants and config values.
    fn from_f64_c(v: f64) -> Self {
        Self::from_f64(v).expect("f64 constant representable in scalar type")
    }

    fn to_f64_c(self) -> f64 {
        self.to_f64().expect("scalar representable as f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
