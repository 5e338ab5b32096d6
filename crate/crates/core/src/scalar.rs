//! Scalar abstraction for the numeric kernels.

use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Real scalar usable everywhere in the crate: `f32` or `f64`.
///
/// The bound set is the union of what the FFT backend, the RNG plumbing and
/// plain arithmetic need. `fromf`/`tof` are lossy-by-design conversions used
/// at precision boundaries (file I/O is always f64, internals may be f32).
pub trait Real:
    num_traits::Float
    + num_traits::FloatConst
    + num_traits::NumAssign
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + rustfft::FftNum
    + Sum<Self>
    + Display
    + Debug
    + Send
    + Sync
    + 'static
{
    fn fromf(x: f64) -> Self {
        num_traits::FromPrimitive::from_f64(x).expect("f64 -> Real conversion")
    }

    fn tof(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("Real -> f64 conversion")
    }
}

impl Real for f32 {}
impl Real for f64 {}
