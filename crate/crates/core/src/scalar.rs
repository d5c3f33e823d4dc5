//! Floating-point abstraction shared by every numeric module.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Real scalar the core math is written against (`f32` or `f64`).
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Name written into persisted documents.
    const NAME: &'static str;

    /// Lossy conversion from an `f64` literal or config value.
    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is representable in every Scalar")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar is convertible to f64")
    }

    #[inline]
    fn of_usize(v: usize) -> Self {
        Self::of(v as f64)
    }
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";
}

/// Mean of squared differences over the coordinates selected by `keep`.
/// Returns `None` when nothing is selected.
pub(crate) fn masked_mse<S: Scalar>(
    a: &[S],
    b: &[S],
    keep: impl Fn(usize) -> bool,
) -> Option<S> {
    let mut acc = S::zero();
    let mut n = 0usize;
    for (i, (&x, &y)) in a.iter().zip(b).enumerate() {
        if keep(i) {
            let d = x - y;
            acc += d * d;
            n += 1;
        }
    }
    (n > 0).then(|| acc / S::of_usize(n))
}
