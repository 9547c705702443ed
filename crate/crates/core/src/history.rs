//! Read access to ℂⁿ-valued functions of time with one-sided limits.
//!
//! Functionals act on segments `s ↦ v(t + s)`. Rather than materialising
//! every segment, they read the underlying function through this trait with
//! an offset, which is also how the solver exposes its partially computed
//! trajectory.

use crate::poly::Poly;
use num_complex::Complex64;

/// Which value to read at a point: the left limit, the stored pointwise
/// value, or the right limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Left,
    At,
    Right,
}

/// Absolute tolerance (scaled by `max(1, |t|)`) under which two times are
/// the same point.
pub const TIME_EPS: f64 = 1e-12;

pub fn same_time(a: f64, b: f64) -> bool {
    (a - b).abs() <= TIME_EPS * a.abs().max(b.abs()).max(1.0)
}

pub trait History {
    fn dim(&self) -> usize;

    fn domain(&self) -> (f64, f64);

    /// Component `k` at time `t`. At a domain endpoint the missing one-sided
    /// limit falls back to the pointwise value.
    fn value_at(&self, k: usize, t: f64, side: Side) -> Complex64;

    /// `∫_{lo}^{hi} density(u - origin) · v_k(u) du`.
    fn integrate_poly(&self, k: usize, density: &Poly, origin: f64, lo: f64, hi: f64) -> Complex64;

    fn vector_at(&self, t: f64, side: Side) -> Vec<Complex64> {
        (0..self.dim()).map(|k| self.value_at(k, t, side)).collect()
    }
}

/// Max-norm on ℂⁿ.
pub fn max_norm(v: &[Complex64]) -> f64 {
    v.iter().fold(0.0_f64, |m, z| m.max(z.norm()))
}

/// Integral of `(a0 + slope·(u - c0)) · density(u - origin)` over `[lo, hi]`,
/// given the antiderivatives `p0 = ∫ density` and `p1 = ∫ x·density`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn linear_times_poly(
    a0: Complex64,
    c0: f64,
    slope: Complex64,
    p0: &Poly,
    p1: &Poly,
    origin: f64,
    lo: f64,
    hi: f64,
) -> Complex64 {
    let (x0, x1) = (lo - origin, hi - origin);
    let base = a0 - slope * (c0 - origin);
    base * (p0.eval(x1) - p0.eval(x0)) + slope * (p1.eval(x1) - p1.eval(x0))
}

/// Antiderivatives of `density` and of `x · density`.
pub(crate) fn moment_antiderivatives(density: &Poly) -> (Poly, Poly) {
    let x = Poly::from_real(&[0.0, 1.0]);
    (density.antiderivative(), (&x * density).antiderivative())
}
