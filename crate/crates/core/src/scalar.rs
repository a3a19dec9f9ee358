//! Scalar abstraction shared by the linear-algebra modules.

use std::fmt::{Debug, Display, LowerExp};

use nalgebra::{ComplexField, DMatrix, RealField};
use num_complex::Complex;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real floating point type the exact engine is generic over (`f32` or `f64`).
///
/// Combinatorial weights are always carried as `f64` logarithms; only the
/// matrix work is parameterized.
pub trait Real:
    RealField + Copy + FromPrimitive + ToPrimitive + Debug + Display + LowerExp + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` literal.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("finite real")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Complex scalar over `T`.
pub type C<T> = Complex<T>;

/// Dense complex matrix over `T`.
pub type CMat<T> = DMatrix<Complex<T>>;

pub(crate) fn c<T: Real>(re: T) -> C<T> {
    Complex::new(re, T::zero())
}

/// Largest elementwise modulus of `a - b`.
pub fn max_abs_diff<T: Real>(a: &CMat<T>, b: &CMat<T>) -> T {
    assert_eq!(a.shape(), b.shape(), "shape mismatch");
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).modulus())
        .fold(T::zero(), |m, d| if d > m { d } else { m })
}

/// Largest elementwise modulus.
pub fn max_abs<T: Real>(a: &CMat<T>) -> T {
    a.iter()
        .map(|x| x.modulus())
        .fold(T::zero(), |m, d| if d > m { d } else { m })
}

/// Hermiticity defect `max |A - A†|`.
pub fn hermiticity_defect<T: Real>(a: &CMat<T>) -> T {
    max_abs_diff(a, &a.adjoint())
}
