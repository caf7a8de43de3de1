use nalgebra::RealField;
use num_traits::ToPrimitive;

/// Floating-point scalar the numerical core is written against.
///
/// Everything goes through nalgebra's `RealField` so the same code runs on
/// `f32` and `f64`. Special functions without a generic form (erf) are
/// evaluated in `f64` and converted back.
pub trait Real: RealField + Copy + ToPrimitive {
    /// Converts an `f64` literal.
    #[inline(always)]
    fn c(v: f64) -> Self {
        nalgebra::convert(v)
    }

    /// Converts a count or index.
    #[inline(always)]
    fn n(v: usize) -> Self {
        nalgebra::convert(v as f64)
    }

    #[inline(always)]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline(always)]
    fn erf(self) -> Self {
        Self::c(libm::erf(self.to_f64_lossy()))
    }

    #[inline(always)]
    fn finite(self) -> bool {
        self.to_f64_lossy().is_finite()
    }
}

impl Real for f32 {}
impl Real for f64 {}
