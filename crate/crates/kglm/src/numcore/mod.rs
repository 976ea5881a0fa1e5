//! Minimal dense-tensor arithmetic with reverse-mode differentiation.
//!
//! Everything downstream (the encoder, both losses, the trainer) builds on
//! this module. The design is a classic Wengert tape: forward ops execute
//! eagerly and record themselves; [`Tape::backward`] replays the recording in
//! reverse. Tensors are row-major and generic over [`Scalar`] so the same
//! code path runs in `f32` for training and in `f64` for finite-difference
//! gradient checks.

mod gradcheck;
mod kernels;
pub mod parallel;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use tape::{Gradients, Tape, ValueId};
pub use tensor::Tensor;

/// Exposed for benchmarks: the matmul kernel under the current parallel
/// setting.
pub fn bench_matmul_dispatch(a: &[f32], b: &[f32], m: usize, k: usize, n: usize, out: &mut [f32]) {
    kernels::matmul(a, b, m, k, n, out);
}

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::AddAssign;

/// Floating-point element type for all tensor math.
///
/// Training runs at `f32`; gradient checks instantiate the identical code at
/// `f64` so that central differences are not drowned by rounding.
pub trait Scalar:
    num_traits::Float + AddAssign + Sum + Send + Sync + Debug + Display + Default + 'static
{
    fn from_f32(x: f32) -> Self;
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn to_f32(self) -> f32 {
        self.to_f64() as f32
    }
    fn from_usize(n: usize) -> Self {
        Self::from_f64(n as f64)
    }
}

impl Scalar for f32 {
    fn from_f32(x: f32) -> Self {
        x
    }
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f32(x: f32) -> Self {
        x as f64
    }
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
}
