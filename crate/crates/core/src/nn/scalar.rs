//! Float abstraction so the same network code runs in 32-bit (training,
//! inference) and 64-bit (gradient checking) precision.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

pub trait Scalar:
    Copy
    + Clone
    + Debug
    + PartialOrd
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    const ZERO: Self;
    const ONE: Self;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn from_f32(v: f32) -> Self;
    fn to_f32(self) -> f32;

    fn exp(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn tanh(self) -> Self;
    fn is_finite(self) -> bool;

    /// Numerically stable logistic function.
    fn sigmoid(self) -> Self {
        if self >= Self::ZERO {
            Self::ONE / (Self::ONE + (-self).exp())
        } else {
            let e = self.exp();
            e / (Self::ONE + e)
        }
    }

    /// General matrix multiply C = alpha·A·B + beta·C with explicit strides,
    /// dispatching to the f32/f64 gemm backend.
    ///
    /// # Safety
    /// Pointers must reference buffers valid for the given dimensions and
    /// strides; C must not alias A or B.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Scalar for f32 {
    const ZERO: f32 = 0.0;
    const ONE: f32 = 1.0;

    fn from_f64(v: f64) -> f32 {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn from_f32(v: f32) -> f32 {
        v
    }
    fn to_f32(self) -> f32 {
        self
    }
    fn exp(self) -> f32 {
        f32::exp(self)
    }
    fn sqrt(self) -> f32 {
        f32::sqrt(self)
    }
    fn abs(self) -> f32 {
        f32::abs(self)
    }
    // Via exp: the libm f32 tanh is an order of magnitude slower and the
    // gate loops are hot.
    fn tanh(self) -> f32 {
        let t = 1.0 - 2.0 / ((2.0 * self.abs()).exp() + 1.0);
        if self < 0.0 {
            -t
        } else {
            t
        }
    }
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    const ZERO: f64 = 0.0;
    const ONE: f64 = 1.0;

    fn from_f64(v: f64) -> f64 {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn from_f32(v: f32) -> f64 {
        v as f64
    }
    fn to_f32(self) -> f32 {
        self as f32
    }
    fn exp(self) -> f64 {
        f64::exp(self)
    }
    fn sqrt(self) -> f64 {
        f64::sqrt(self)
    }
    fn abs(self) -> f64 {
        f64::abs(self)
    }
    fn tanh(self) -> f64 {
        f64::tanh(self)
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_tanh_matches_reference() {
        for i in -400..=400 {
            let x = i as f32 * 0.05;
            let got = Scalar::tanh(x);
            let want = (x as f64).tanh() as f32;
            assert!((got - want).abs() < 3e-7, "tanh({x}): {got} vs {want}");
        }
        assert_eq!(Scalar::tanh(100.0f32), 1.0);
        assert_eq!(Scalar::tanh(-100.0f32), -1.0);
        assert_eq!(Scalar::tanh(0.0f32), 0.0);
    }

    #[test]
    fn sigmoid_stable_at_extremes() {
        assert!((Scalar::sigmoid(0.0f64) - 0.5).abs() < 1e-15);
        assert!(Scalar::sigmoid(-200.0f32) >= 0.0);
        assert!(Scalar::sigmoid(200.0f32) <= 1.0);
        assert!((Scalar::sigmoid(3.0f64) - 1.0 / (1.0 + (-3.0f64).exp())).abs() < 1e-15);
        assert!((Scalar::sigmoid(-3.0f64) - 1.0 / (1.0 + 3.0f64.exp())).abs() < 1e-15);
    }
}
