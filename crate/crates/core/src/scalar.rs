//! Scalar abstraction shared by the network, the surrogate surfaces and the
//! force-loss machinery.
//!
//! Everything numeric is written against [`Real`], a thin extension of
//! [`num_traits::Float`]. Parameters are always stored as `f64`; `lift`
//! brings them into the working scalar. [`Dual`] carries one forward-mode
//! tangent alongside the value, which is how the force term of the loss gets
//! exact parameter gradients: running the reverse pass in dual arithmetic
//! with a position tangent `u` yields `∂/∂θ (u · ∇ₓE)` in the tangent part.

use std::cmp::Ordering;
use std::fmt::{self, Debug, Display};
use std::iter::Sum;
use std::num::FpCategory;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Rem, RemAssign, Sub, SubAssign};

use num_traits::{Float, FloatConst, Num, NumCast, One, ToPrimitive, Zero};

/// Working scalar for model and potential evaluation.
pub trait Real:
    Float
    + FloatConst
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Embeds an `f64` constant.
    fn lift(x: f64) -> Self;
    /// Real part as `f64`, dropping any tangent.
    fn value(self) -> f64;
    /// Multiplication by an `f64` constant.
    #[inline(always)]
    fn scale(self, w: f64) -> Self {
        self * Self::lift(w)
    }
}

impl Real for f64 {
    #[inline(always)]
    fn lift(x: f64) -> Self {
        x
    }
    #[inline(always)]
    fn value(self) -> f64 {
        self
    }
}

impl Real for f32 {
    #[inline(always)]
    fn lift(x: f64) -> Self {
        x as f32
    }
    #[inline(always)]
    fn value(self) -> f64 {
        self as f64
    }
}

/// Dual number `re + eps·ε` with `ε² = 0`.
#[derive(Clone, Copy, Default, PartialEq)]
pub struct Dual<T> {
    pub re: T,
    pub eps: T,
}

impl<T: Real> Dual<T> {
    #[inline(always)]
    pub fn new(re: T, eps: T) -> Self {
        Dual { re, eps }
    }

    #[inline(always)]
    pub fn constant(re: T) -> Self {
        Dual { re, eps: T::zero() }
    }

    /// Applies a scalar function given its value and derivative at `re`.
    #[inline(always)]
    fn chain(self, f: T, df: T) -> Self {
        Dual { re: f, eps: self.eps * df }
    }
}

impl<T: Real> Debug for Dual<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Dual({:?}, {:?})", self.re, self.eps)
    }
}

impl<T: Real> Display for Dual<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}+{}ε", self.re, self.eps)
    }
}

impl<T: Real> PartialOrd for Dual<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        self.re.partial_cmp(&other.re)
    }
}

impl<T: Real> Add for Dual<T> {
    type Output = Self;
    #[inline(always)]
    fn add(self, o: Self) -> Self {
        Dual { re: self.re + o.re, eps: self.eps + o.eps }
    }
}

impl<T: Real> Sub for Dual<T> {
    type Output = Self;
    #[inline(always)]
    fn sub(self, o: Self) -> Self {
        Dual { re: self.re - o.re, eps: self.eps - o.eps }
    }
}

impl<T: Real> Mul for Dual<T> {
    type Output = Self;
    #[inline(always)]
    fn mul(self, o: Self) -> Self {
        Dual { re: self.re * o.re, eps: self.re * o.eps + self.eps * o.re }
    }
}

impl<T: Real> Div for Dual<T> {
    type Output = Self;
    #[inline(always)]
    fn div(self, o: Self) -> Self {
        let inv = T::one() / o.re;
        let re = self.re * inv;
        Dual { re, eps: (self.eps - re * o.eps) * inv }
    }
}

impl<T: Real> Rem for Dual<T> {
    type Output = Self;
    fn rem(self, o: Self) -> Self {
        // x mod y = x - y·trunc(x/y); trunc is locally constant.
        let q = (self.re / o.re).trunc();
        Dual { re: self.re % o.re, eps: self.eps - o.eps * q }
    }
}

impl<T: Real> Neg for Dual<T> {
    type Output = Self;
    #[inline(always)]
    fn neg(self) -> Self {
        Dual { re: -self.re, eps: -self.eps }
    }
}

macro_rules! assign_ops {
    ($($tr:ident $m:ident $op:tt),*) => {$(
        impl<T: Real> $tr for Dual<T> {
            #[inline(always)]
            fn $m(&mut self, o: Self) {
                *self = *self $op o;
            }
        }
    )*};
}
assign_ops!(AddAssign add_assign +, SubAssign sub_assign -, MulAssign mul_assign *, DivAssign div_assign /, RemAssign rem_assign %);

impl<T: Real> Sum for Dual<T> {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::zero(), |a, b| a + b)
    }
}

impl<T: Real> Zero for Dual<T> {
    fn zero() -> Self {
        Dual::constant(T::zero())
    }
    fn is_zero(&self) -> bool {
        self.re.is_zero() && self.eps.is_zero()
    }
}

impl<T: Real> One for Dual<T> {
    fn one() -> Self {
        Dual::constant(T::one())
    }
}

impl<T: Real> Num for Dual<T> {
    type FromStrRadixErr = T::FromStrRadixErr;
    fn from_str_radix(s: &str, radix: u32) -> Result<Self, Self::FromStrRadixErr> {
        T::from_str_radix(s, radix).map(Dual::constant)
    }
}

impl<T: Real> ToPrimitive for Dual<T> {
    fn to_i64(&self) -> Option<i64> {
        self.re.to_i64()
    }
    fn to_u64(&self) -> Option<u64> {
        self.re.to_u64()
    }
    fn to_f64(&self) -> Option<f64> {
        self.re.to_f64()
    }
}

impl<T: Real> NumCast for Dual<T> {
    fn from<N: ToPrimitive>(n: N) -> Option<Self> {
        T::from(n).map(Dual::constant)
    }
}

impl<T: Real> FloatConst for Dual<T> {
    fn E() -> Self { Dual::constant(T::E()) }
    fn FRAC_1_PI() -> Self { Dual::constant(T::FRAC_1_PI()) }
    fn FRAC_1_SQRT_2() -> Self { Dual::constant(T::FRAC_1_SQRT_2()) }
    fn FRAC_2_PI() -> Self { Dual::constant(T::FRAC_2_PI()) }
    fn FRAC_2_SQRT_PI() -> Self { Dual::constant(T::FRAC_2_SQRT_PI()) }
    fn FRAC_PI_2() -> Self { Dual::constant(T::FRAC_PI_2()) }
    fn FRAC_PI_3() -> Self { Dual::constant(T::FRAC_PI_3()) }
    fn FRAC_PI_4() -> Self { Dual::constant(T::FRAC_PI_4()) }
    fn FRAC_PI_6() -> Self { Dual::constant(T::FRAC_PI_6()) }
    fn FRAC_PI_8() -> Self { Dual::constant(T::FRAC_PI_8()) }
    fn LN_10() -> Self { Dual::constant(T::LN_10()) }
    fn LN_2() -> Self { Dual::constant(T::LN_2()) }
    fn LOG10_E() -> Self { Dual::constant(T::LOG10_E()) }
    fn LOG2_E() -> Self { Dual::constant(T::LOG2_E()) }
    fn PI() -> Self { Dual::constant(T::PI()) }
    fn SQRT_2() -> Self { Dual::constant(T::SQRT_2()) }
}

impl<T: Real> Float for Dual<T> {
    fn nan() -> Self { Dual::constant(T::nan()) }
    fn infinity() -> Self { Dual::constant(T::infinity()) }
    fn neg_infinity() -> Self { Dual::constant(T::neg_infinity()) }
    fn neg_zero() -> Self { Dual::constant(T::neg_zero()) }
    fn min_value() -> Self { Dual::constant(T::min_value()) }
    fn min_positive_value() -> Self { Dual::constant(T::min_positive_value()) }
    fn max_value() -> Self { Dual::constant(T::max_value()) }
    fn is_nan(self) -> bool { self.re.is_nan() || self.eps.is_nan() }
    fn is_infinite(self) -> bool { self.re.is_infinite() || self.eps.is_infinite() }
    fn is_finite(self) -> bool { self.re.is_finite() && self.eps.is_finite() }
    fn is_normal(self) -> bool { self.re.is_normal() }
    fn classify(self) -> FpCategory { self.re.classify() }
    fn floor(self) -> Self { Dual::constant(self.re.floor()) }
    fn ceil(self) -> Self { Dual::constant(self.re.ceil()) }
    fn round(self) -> Self { Dual::constant(self.re.round()) }
    fn trunc(self) -> Self { Dual::constant(self.re.trunc()) }
    fn fract(self) -> Self { Dual { re: self.re.fract(), eps: self.eps } }
    fn abs(self) -> Self {
        if self.re.is_sign_negative() { -self } else { self }
    }
    fn signum(self) -> Self { Dual::constant(self.re.signum()) }
    fn is_sign_positive(self) -> bool { self.re.is_sign_positive() }
    fn is_sign_negative(self) -> bool { self.re.is_sign_negative() }
    fn mul_add(self, a: Self, b: Self) -> Self { self * a + b }
    fn recip(self) -> Self { Self::one() / self }
    fn powi(self, n: i32) -> Self {
        if n == 0 {
            return Self::one();
        }
        let pm1 = self.re.powi(n - 1);
        Dual { re: pm1 * self.re, eps: self.eps * T::lift(n as f64) * pm1 }
    }
    fn powf(self, n: Self) -> Self {
        if n.eps.is_zero() {
            let pm1 = self.re.powf(n.re - T::one());
            return Dual { re: pm1 * self.re, eps: self.eps * n.re * pm1 };
        }
        (n * self.ln()).exp()
    }
    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        self.chain(s, T::lift(0.5) / s)
    }
    fn exp(self) -> Self {
        let e = self.re.exp();
        self.chain(e, e)
    }
    fn exp2(self) -> Self {
        let e = self.re.exp2();
        self.chain(e, e * T::LN_2())
    }
    fn ln(self) -> Self { self.chain(self.re.ln(), self.re.recip()) }
    fn log(self, base: Self) -> Self { self.ln() / base.ln() }
    fn log2(self) -> Self { self.chain(self.re.log2(), (self.re * T::LN_2()).recip()) }
    fn log10(self) -> Self { self.chain(self.re.log10(), (self.re * T::LN_10()).recip()) }
    fn max(self, o: Self) -> Self { if o.re > self.re { o } else { self } }
    fn min(self, o: Self) -> Self { if o.re < self.re { o } else { self } }
    #[allow(deprecated)]
    fn abs_sub(self, o: Self) -> Self {
        if self.re > o.re { self - o } else { Self::zero() }
    }
    fn cbrt(self) -> Self {
        let c = self.re.cbrt();
        self.chain(c, (T::lift(3.0) * c * c).recip())
    }
    fn hypot(self, o: Self) -> Self { (self * self + o * o).sqrt() }
    fn sin(self) -> Self { self.chain(self.re.sin(), self.re.cos()) }
    fn cos(self) -> Self { self.chain(self.re.cos(), -self.re.sin()) }
    fn tan(self) -> Self {
        let t = self.re.tan();
        self.chain(t, T::one() + t * t)
    }
    fn asin(self) -> Self {
        self.chain(self.re.asin(), (T::one() - self.re * self.re).sqrt().recip())
    }
    fn acos(self) -> Self {
        self.chain(self.re.acos(), -(T::one() - self.re * self.re).sqrt().recip())
    }
    fn atan(self) -> Self {
        self.chain(self.re.atan(), (T::one() + self.re * self.re).recip())
    }
    fn atan2(self, o: Self) -> Self {
        let r2 = self.re * self.re + o.re * o.re;
        Dual {
            re: self.re.atan2(o.re),
            eps: (o.re * self.eps - self.re * o.eps) / r2,
        }
    }
    fn sin_cos(self) -> (Self, Self) { (self.sin(), self.cos()) }
    fn exp_m1(self) -> Self { self.chain(self.re.exp_m1(), self.re.exp()) }
    fn ln_1p(self) -> Self { self.chain(self.re.ln_1p(), (T::one() + self.re).recip()) }
    fn sinh(self) -> Self { self.chain(self.re.sinh(), self.re.cosh()) }
    fn cosh(self) -> Self { self.chain(self.re.cosh(), self.re.sinh()) }
    fn tanh(self) -> Self {
        let t = self.re.tanh();
        self.chain(t, T::one() - t * t)
    }
    fn asinh(self) -> Self {
        self.chain(self.re.asinh(), (self.re * self.re + T::one()).sqrt().recip())
    }
    fn acosh(self) -> Self {
        self.chain(self.re.acosh(), (self.re * self.re - T::one()).sqrt().recip())
    }
    fn atanh(self) -> Self {
        self.chain(self.re.atanh(), (T::one() - self.re * self.re).recip())
    }
    fn integer_decode(self) -> (u64, i16, i8) { self.re.integer_decode() }
}

impl<T: Real> Real for Dual<T> {
    #[inline(always)]
    fn lift(x: f64) -> Self {
        Dual::constant(T::lift(x))
    }
    #[inline(always)]
    fn value(self) -> f64 {
        self.re.value()
    }
    #[inline(always)]
    fn scale(self, w: f64) -> Self {
        Dual { re: self.re.scale(w), eps: self.eps.scale(w) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(re: f64, eps: f64) -> Dual<f64> {
        Dual::new(re, eps)
    }

    #[test]
    fn product_and_quotient_rules() {
        let x = d(3.0, 1.0);
        let y = x * x * x;
        assert_eq!(y.re, 27.0);
        assert_eq!(y.eps, 27.0);
        let q = d(1.0, 0.0) / x;
        assert!((q.eps + 1.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn transcendental_derivatives_match_finite_differences() {
        let fns: Vec<(&str, fn(Dual<f64>) -> Dual<f64>)> = vec![
            ("exp", |x| x.exp()),
            ("ln", |x| x.ln()),
            ("sqrt", |x| x.sqrt()),
            ("sin", |x| x.sin()),
            ("cos", |x| x.cos()),
            ("tanh", |x| x.tanh()),
            ("acos", |x| (x * Dual::lift(0.3)).acos()),
            ("powi", |x| x.powi(-3)),
            ("ln_1p", |x| x.ln_1p()),
        ];
        let x0 = 0.7;
        let h = 1e-6;
        for (name, f) in fns {
            let ad = f(d(x0, 1.0)).eps;
            let fd = (f(d(x0 + h, 0.0)).re - f(d(x0 - h, 0.0)).re) / (2.0 * h);
            assert!((ad - fd).abs() < 1e-7 * (1.0 + fd.abs()), "{name}: {ad} vs {fd}");
        }
    }

    #[test]
    fn nested_dual_gives_second_derivative() {
        // f(x) = x^4 at x = 2: f'' = 12 x^2 = 48
        let x: Dual<Dual<f64>> = Dual::new(Dual::new(2.0, 1.0), Dual::new(1.0, 0.0));
        let y = x.powi(4);
        assert_eq!(y.eps.eps, 48.0);
    }
}
