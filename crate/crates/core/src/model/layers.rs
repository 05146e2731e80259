//! Elementwise and dense building blocks of the network, generic over the
//! working scalar. Weights are `f64`, row-major `[out][in]`.

use crate::scalar::Real;

/// `ln(0.5·eˣ + 0.5)`, evaluated as `max(x,0) + ln(1 + e^{−|x|}) − ln 2`.
#[inline]
pub fn shifted_softplus<T: Real>(x: T) -> T {
    let zero = T::zero();
    x.max(zero) + (-x.abs()).exp().ln_1p() - T::LN_2()
}

/// Derivative of [`shifted_softplus`]: the logistic sigmoid.
#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    let one = T::one();
    if x >= T::zero() {
        one / (one + (-x).exp())
    } else {
        let e = x.exp();
        e / (one + e)
    }
}

/// Gaussian expansion `exp(−γ(d − μ_k)²)` with centers evenly spaced on
/// `[0, cutoff]` and `γ = 1/(2·width²)`. Also returns `d/dd` of each element.
pub fn rbf_expand_with_derivative<T: Real>(d: T, n_rbf: usize, cutoff: f64, width: f64, out: &mut [T], dout: &mut [T]) {
    let gamma = 1.0 / (2.0 * width * width);
    let spacing = if n_rbf > 1 { cutoff / (n_rbf - 1) as f64 } else { 0.0 };
    for k in 0..n_rbf {
        let diff = d - T::lift(k as f64 * spacing);
        let e = (diff * diff).scale(-gamma).exp();
        out[k] = e;
        dout[k] = (diff * e).scale(-2.0 * gamma);
    }
}

pub fn rbf_expand(d: f64, n_rbf: usize, cutoff: f64, width: f64) -> Vec<f64> {
    let mut out = vec![0.0; n_rbf];
    let mut dout = vec![0.0; n_rbf];
    rbf_expand_with_derivative(d, n_rbf, cutoff, width, &mut out, &mut dout);
    out
}

/// Cosine cutoff `0.5·(cos(πd/rc) + 1)` for `d < rc`, else 0; with derivative.
#[inline]
pub fn cosine_cutoff<T: Real>(d: T, cutoff: f64) -> (T, T) {
    if d.value() >= cutoff {
        return (T::zero(), T::zero());
    }
    let a = d.scale(std::f64::consts::PI / cutoff);
    let half = T::lift(0.5);
    (half * (a.cos() + T::one()), a.sin().scale(-0.5 * std::f64::consts::PI / cutoff))
}

#[inline]
pub(crate) fn dot<T: Real>(w: &[f64], x: &[T]) -> T {
    debug_assert_eq!(w.len(), x.len());
    let mut acc = [T::zero(); 4];
    let wc = w.chunks_exact(4);
    let xc = x.chunks_exact(4);
    let (wr, xr) = (wc.remainder(), xc.remainder());
    for (wq, xq) in wc.zip(xc) {
        acc[0] += xq[0].scale(wq[0]);
        acc[1] += xq[1].scale(wq[1]);
        acc[2] += xq[2].scale(wq[2]);
        acc[3] += xq[3].scale(wq[3]);
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (a, b) in wr.iter().zip(xr) {
        s += b.scale(*a);
    }
    s
}

/// `y = W x + b`.
#[inline]
pub(crate) fn affine<T: Real>(w: &[f64], b: Option<&[f64]>, x: &[T], y: &mut [T]) {
    let n_in = x.len();
    for (o, yo) in y.iter_mut().enumerate() {
        let row = &w[o * n_in..(o + 1) * n_in];
        let bias = b.map_or(0.0, |b| b[o]);
        *yo = dot(row, x) + T::lift(bias);
    }
}

/// `dx += Wᵀ dy`.
#[inline]
pub(crate) fn affine_transpose_acc<T: Real>(w: &[f64], dy: &[T], dx: &mut [T]) {
    let n_in = dx.len();
    for (o, &g) in dy.iter().enumerate() {
        let row = &w[o * n_in..(o + 1) * n_in];
        for (d, &wi) in dx.iter_mut().zip(row) {
            *d += g.scale(wi);
        }
    }
}

/// `G += dy ⊗ x`.
#[inline]
pub(crate) fn outer_acc<T: Real>(g: &mut [T], dy: &[T], x: &[T]) {
    let n_in = x.len();
    for (o, &d) in dy.iter().enumerate() {
        let row = &mut g[o * n_in..(o + 1) * n_in];
        for (gi, &xi) in row.iter_mut().zip(x) {
            *gi += d * xi;
        }
    }
}

#[inline]
pub(crate) fn add_acc<T: Real>(g: &mut [T], d: &[T]) {
    for (a, &b) in g.iter_mut().zip(d) {
        *a += b;
    }
}
