//! Floating-point abstraction used by the network, optimizer and tensor kernels.
//!
//! Geometry, stencils and fields are always `f64`. The network may run in
//! `f32` for training throughput and in `f64` for gradient verification, so
//! everything under [`crate::model`] and [`crate::optim`] is generic over
//! [`Scalar`].

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, NumAssign};

pub trait Scalar:
    Float + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Tag written into checkpoints.
    const DTYPE: &'static str;
    const BYTES: usize;

    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn to_le_bytes_vec(self, out: &mut Vec<u8>);
    fn from_le_slice(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";
    const BYTES: usize = 4;

    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn to_le_bytes_vec(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn from_le_slice(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";
    const BYTES: usize = 8;

    #[inline]
    fn of(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
    fn to_le_bytes_vec(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn from_le_slice(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}
