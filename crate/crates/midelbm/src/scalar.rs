use num_traits::{FromPrimitive, ToPrimitive};

/// Scalar type for the numeric kernels. Implemented by `f32` and `f64`.
///
/// `nalgebra::RealField` supplies the transcendental functions and ordering;
/// the `num-traits` conversions bridge to literal constants and the `f64`
/// file formats.
pub trait Real:
    nalgebra::RealField + Copy + Default + FromPrimitive + ToPrimitive + Send + Sync + 'static
{
}

impl<T> Real for T where
    T: nalgebra::RealField + Copy + Default + FromPrimitive + ToPrimitive + Send + Sync + 'static
{
}

/// Converts an `f64` constant into the working scalar type.
#[inline]
pub fn real<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("f64 constant must convert to the scalar type")
}
