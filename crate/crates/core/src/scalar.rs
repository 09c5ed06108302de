//! Scalar abstraction shared by every numeric module.
//!
//! All math in the crate is written against [`Real`], which is implemented
//! for `f32` and `f64`. Channel algebra and gradient checks run in `f64`;
//! network training defaults to `f32`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar usable throughout the crate.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Dtype code of the real type in the binary tensor format.
    const REAL_CODE: u32;
    /// Dtype code of the matching complex type in the binary tensor format.
    const COMPLEX_CODE: u32;
    /// Size of one value in bytes.
    const BYTES: usize;

    /// Lossy conversion from `f64`; used for constants.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite conversion to f64")
    }

    fn write_le(self, out: &mut Vec<u8>);

    /// Reads one value from the first `BYTES` bytes of `bytes`.
    fn read_le(bytes: &[u8]) -> Self;
}

impl Real for f32 {
    const REAL_CODE: u32 = 1;
    const COMPLEX_CODE: u32 = 3;
    const BYTES: usize = 4;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().expect("4 bytes"))
    }
}

impl Real for f64 {
    const REAL_CODE: u32 = 2;
    const COMPLEX_CODE: u32 = 4;
    const BYTES: usize = 8;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"))
    }
}
