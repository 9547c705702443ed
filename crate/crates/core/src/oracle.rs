//! Closed-form method of steps for point-delay problems with
//! piecewise-polynomial data.
//!
//! With `L = Σ A_i δ_{-τ_i}` and `R = Σ B_i δ_{-σ_i}`, the integrated equation
//! reads
//!
//! ```text
//! v(t) = Σ A_i v(t - τ_i) + C + ∫_0^t (Σ B_i v(s - σ_i) + q(s)) ds.
//! ```
//!
//! Once the time axis is cut at every point that can be reached from a
//! breakpoint of the data by adding delays, every delayed argument on the
//! current interval lies inside a single earlier polynomial piece, so each
//! interval is one polynomial obtained by shifting, adding and integrating
//! coefficient vectors. The only error is rounding.
//!
//! This module shares no code with the numerical solver beyond the
//! measure and polynomial types; it exists to produce reference values.

use crate::error::{Error, Result};
use crate::history::same_time;
use crate::measures::FunctionalMatrix;
use crate::poly::Poly;
use crate::pwfun::{Piece, PiecewiseFn};
use num_complex::Complex64;
use std::fmt;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Piecewise polynomial ℂⁿ-valued function with pointwise values stored at
/// breakpoints. Piece `i` is written in the local variable `t - breaks[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolicPiecewise {
    n: usize,
    breaks: Vec<f64>,
    polys: Vec<Vec<Poly>>,
    values: Vec<Vec<Complex64>>,
}

impl SymbolicPiecewise {
    /// Pointwise values default to the right limit, and to the left limit at
    /// the last breakpoint.
    pub fn new(breaks: Vec<f64>, polys: Vec<Vec<Poly>>, values: Option<Vec<Vec<Complex64>>>) -> Result<Self> {
        if breaks.len() < 2 || polys.len() + 1 != breaks.len() {
            return Err(Error::InvalidFunction(
                "need at least one piece and one more breakpoint than pieces".into(),
            ));
        }
        if breaks.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidFunction("breakpoints must increase".into()));
        }
        let n = polys[0].len();
        if n == 0 || polys.iter().any(|p| p.len() != n) {
            return Err(Error::InvalidFunction("inconsistent dimension".into()));
        }
        let values = match values {
            Some(v) => {
                if v.len() != breaks.len() || v.iter().any(|x| x.len() != n) {
                    return Err(Error::InvalidFunction("one value per breakpoint required".into()));
                }
                v
            }
            None => {
                let m = polys.len();
                (0..breaks.len())
                    .map(|i| {
                        if i < m {
                            polys[i].iter().map(|p| p.eval(0.0)).collect()
                        } else {
                            polys[m - 1].iter().map(|p| p.eval(breaks[m] - breaks[m - 1])).collect()
                        }
                    })
                    .collect()
            }
        };
        Ok(Self {
            n,
            breaks,
            polys,
            values,
        })
    }

    pub fn constant(value: Vec<Complex64>, a: f64, b: f64) -> Result<Self> {
        let polys = value.iter().map(|&c| Poly::constant(c)).collect();
        Self::new(vec![a, b], vec![polys], None)
    }

    /// Zero on `[-h, 0)` and `e_j` at `0`.
    pub fn fundamental_datum(n: usize, j: usize, h: f64) -> Result<Self> {
        let mut e = vec![ZERO; n];
        e[j] = Complex64::new(1.0, 0.0);
        Self::new(vec![-h, 0.0], vec![vec![Poly::zero(); n]], Some(vec![vec![ZERO; n], e]))
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.breaks[0], *self.breaks.last().unwrap())
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breaks
    }

    pub fn pieces(&self) -> &[Vec<Poly>] {
        &self.polys
    }

    pub fn values(&self) -> &[Vec<Complex64>] {
        &self.values
    }

    fn piece_of(&self, t: f64) -> usize {
        let i = self.breaks.partition_point(|&b| b <= t);
        i.saturating_sub(1).min(self.polys.len() - 1)
    }

    fn break_index(&self, t: f64) -> Option<usize> {
        let i = self.breaks.partition_point(|&b| b < t);
        [i, i.wrapping_sub(1)]
            .into_iter()
            .find(|&j| j < self.breaks.len() && same_time(self.breaks[j], t))
    }

    fn check(&self, t: f64) -> Result<()> {
        let (a, b) = self.domain();
        if (t < a && !same_time(t, a)) || (t > b && !same_time(t, b)) {
            return Err(Error::OutOfDomain { t, a, b });
        }
        Ok(())
    }

    fn piece_eval(&self, i: usize, t: f64) -> Vec<Complex64> {
        self.polys[i].iter().map(|p| p.eval(t - self.breaks[i])).collect()
    }

    pub fn eval(&self, t: f64) -> Result<Vec<Complex64>> {
        self.check(t)?;
        if let Some(i) = self.break_index(t) {
            return Ok(self.values[i].clone());
        }
        Ok(self.piece_eval(self.piece_of(t), t))
    }

    pub fn left_limit(&self, t: f64) -> Result<Vec<Complex64>> {
        self.check(t)?;
        match self.break_index(t) {
            Some(0) => Ok(self.values[0].clone()),
            Some(i) => Ok(self.piece_eval(i - 1, self.breaks[i])),
            None => self.eval(t),
        }
    }

    pub fn right_limit(&self, t: f64) -> Result<Vec<Complex64>> {
        self.check(t)?;
        match self.break_index(t) {
            Some(i) if i == self.polys.len() => Ok(self.values[i].clone()),
            Some(i) => Ok(self.piece_eval(i, self.breaks[i])),
            None => self.eval(t),
        }
    }

    /// `(t, v(t) - v(t⁻), v(t⁺) - v(t))` at every breakpoint where either
    /// difference exceeds `threshold`.
    pub fn jumps(&self, threshold: f64) -> Vec<(f64, Vec<Complex64>, Vec<Complex64>)> {
        let mut out = Vec::new();
        for (i, &t) in self.breaks.iter().enumerate() {
            let at = &self.values[i];
            let left = if i == 0 { at.clone() } else { self.piece_eval(i - 1, t) };
            let right = if i == self.polys.len() {
                at.clone()
            } else {
                self.piece_eval(i, t)
            };
            let dl: Vec<Complex64> = at.iter().zip(&left).map(|(a, b)| a - b).collect();
            let dr: Vec<Complex64> = right.iter().zip(at).map(|(a, b)| a - b).collect();
            if dl.iter().chain(&dr).any(|z| z.norm() > threshold) {
                out.push((t, dl, dr));
            }
        }
        out
    }

    pub fn to_piecewise(&self) -> Result<PiecewiseFn> {
        let pieces = self.polys.iter().map(|p| Piece::Poly(p.clone())).collect();
        let values = self.values.iter().flatten().copied().collect();
        PiecewiseFn::new(self.n, self.breaks.clone(), pieces, Some(values))
    }
}

impl fmt::Display for SymbolicPiecewise {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, polys) in self.polys.iter().enumerate() {
            let (a, b) = (self.breaks[i], self.breaks[i + 1]);
            writeln!(f, "[{a}, {b}] in powers of (t - {a}):")?;
            for (k, p) in polys.iter().enumerate() {
                let terms: Vec<String> = p
                    .coeffs()
                    .iter()
                    .map(|c| {
                        if c.im == 0.0 {
                            format!("{}", c.re)
                        } else {
                            format!("{c}")
                        }
                    })
                    .collect();
                writeln!(f, "  v{}: [{}]", k + 1, terms.join(", "))?;
            }
        }
        Ok(())
    }
}

fn matvec_poly(m: &[Complex64], v: &[Poly]) -> Vec<Poly> {
    let n = v.len();
    (0..n)
        .map(|r| {
            (0..n).fold(Poly::zero(), |acc, c| {
                if m[r * n + c] == ZERO {
                    acc
                } else {
                    &acc + &v[c].scale(m[r * n + c])
                }
            })
        })
        .collect()
}

fn matvec(m: &[Complex64], v: &[Complex64]) -> Vec<Complex64> {
    let n = v.len();
    (0..n).map(|r| (0..n).map(|c| m[r * n + c] * v[c]).sum()).collect()
}

fn atoms_of(m: &FunctionalMatrix) -> Result<Vec<(f64, Vec<Complex64>)>> {
    if !m.is_atomic() {
        return Err(Error::UnsupportedMeasure);
    }
    Ok(m.atom_matrices())
}

/// Exact solution of the point-delay problem on `[-h, T]`.
pub fn oracle_solve(
    l: &FunctionalMatrix,
    r: &FunctionalMatrix,
    phi: &SymbolicPiecewise,
    q: Option<&SymbolicPiecewise>,
    t_end: f64,
) -> Result<SymbolicPiecewise> {
    let n = l.dim();
    let h = l.horizon();
    let l_atoms = atoms_of(l)?;
    let r_atoms = atoms_of(r)?;
    l.strict_delay_margin()?;
    if phi.dim() != n || r.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: if phi.dim() != n { phi.dim() } else { r.dim() },
        });
    }
    let (a, b) = phi.domain();
    if !same_time(a, -h) || !same_time(b, 0.0) {
        return Err(Error::DomainMismatch(format!(
            "datum on [{a}, {b}], expected [-{h}, 0]"
        )));
    }
    let min_delay = l_atoms
        .iter()
        .chain(&r_atoms)
        .map(|(d, _)| *d)
        .fold(f64::INFINITY, f64::min);
    if min_delay < 1e-6 {
        return Err(Error::Precondition(
            "closed-form stepping needs every point delay to be positive".into(),
        ));
    }
    if t_end <= 0.0 {
        return Ok(phi.clone());
    }
    if let Some(q) = q {
        let (qa, qb) = q.domain();
        if !same_time(qa, 0.0) || (qb < t_end && !same_time(qb, t_end)) || q.dim() != n {
            return Err(Error::DomainMismatch("forcing must cover [0, T]".into()));
        }
    }

    // Cut points on [0, T].
    let delays: Vec<f64> = l_atoms.iter().chain(&r_atoms).map(|(d, _)| *d).collect();
    let mut seeds: Vec<f64> = phi
        .breaks
        .iter()
        .copied()
        .filter(|&t| t > -h && !same_time(t, -h))
        .collect();
    if min_delay.is_finite() {
        let mut k = 0.0;
        while k * min_delay <= t_end {
            seeds.push(k * min_delay);
            k += 1.0;
        }
    }
    if let Some(q) = q {
        seeds.extend(q.breaks.iter().copied().filter(|&t| t < t_end));
    }
    seeds.push(0.0);
    let mut cuts = closure(&seeds, &delays, t_end);
    cuts.retain(|&t| t > 0.0 && !same_time(t, 0.0));
    cuts.insert(0, 0.0);
    if !same_time(*cuts.last().unwrap(), t_end) {
        cuts.push(t_end);
    }
    *cuts.last_mut().unwrap() = t_end;

    let mut out = phi.clone();
    let lphi0: Vec<Complex64> = l_atoms.iter().fold(vec![ZERO; n], |acc, (tau, m)| {
        let v = matvec(m, &out.eval(-tau).unwrap());
        acc.iter().zip(&v).map(|(a, b)| a + b).collect()
    });
    let c: Vec<Complex64> = out
        .values
        .last()
        .unwrap()
        .iter()
        .zip(&lphi0)
        .map(|(a, b)| a - b)
        .collect();
    let mut w_start = vec![ZERO; n];

    for win in cuts.windows(2) {
        let (t0, t1) = (win[0], win[1]);
        let mid = 0.5 * (t0 + t1);
        let delayed = |tau: f64, out: &SymbolicPiecewise| -> Vec<Poly> {
            let j = out.piece_of(mid - tau);
            out.polys[j].iter().map(|p| p.shift(t0 - tau - out.breaks[j])).collect()
        };
        // Integrand of W on this interval, in powers of (t - t0).
        let mut rate: Vec<Poly> = vec![Poly::zero(); n];
        for (sigma, m) in &r_atoms {
            let d = matvec_poly(m, &delayed(*sigma, &out));
            rate = rate.iter().zip(&d).map(|(a, b)| a + b).collect();
        }
        if let Some(q) = q {
            let j = q.piece_of(mid);
            for (r, qk) in rate.iter_mut().zip(&q.polys[j]) {
                *r = &*r + &qk.shift(t0 - q.breaks[j]);
            }
        }
        let mut piece: Vec<Poly> = rate
            .iter()
            .zip(&w_start)
            .zip(&c)
            .map(|((p, &w), &ck)| &p.antiderivative() + &Poly::constant(w + ck))
            .collect();
        for (tau, m) in &l_atoms {
            let d = matvec_poly(m, &delayed(*tau, &out));
            piece = piece.iter().zip(&d).map(|(a, b)| a + b).collect();
        }
        let w_end: Vec<Complex64> = rate
            .iter()
            .zip(&w_start)
            .map(|(p, &w)| w + p.integral(0.0, t1 - t0))
            .collect();

        // Pointwise value at t1 reads stored values of the delayed terms.
        let mut v1: Vec<Complex64> = c.iter().zip(&w_end).map(|(a, b)| a + b).collect();
        let last_idx = out.polys.len();
        out.breaks.push(t1);
        out.polys.push(piece);
        out.values.push(vec![ZERO; n]);
        for (tau, m) in &l_atoms {
            let x = out.eval(t1 - tau)?;
            let d = matvec(m, &x);
            for k in 0..n {
                v1[k] += d[k];
            }
        }
        out.values[last_idx + 1] = v1;
        w_start = w_end;
    }
    Ok(out)
}

/// Columns of the fundamental solution.
pub fn oracle_fundamental(l: &FunctionalMatrix, r: &FunctionalMatrix, t_end: f64) -> Result<Vec<SymbolicPiecewise>> {
    let n = l.dim();
    (0..n)
        .map(|j| {
            let datum = SymbolicPiecewise::fundamental_datum(n, j, l.horizon())?;
            oracle_solve(l, r, &datum, None, t_end)
        })
        .collect()
}

/// `∫_0^t X(t - s) q(s) ds` by exact integration of polynomial products.
pub fn oracle_convolve(x: &[SymbolicPiecewise], q: &SymbolicPiecewise, t: f64) -> Result<Vec<Complex64>> {
    let n = x.len();
    if q.dim() != n || x.iter().any(|c| c.dim() != n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: q.dim(),
        });
    }
    if t <= 0.0 {
        return Ok(vec![ZERO; n]);
    }
    let mut cuts: Vec<f64> = vec![0.0, t];
    for col in x {
        cuts.extend(col.breaks.iter().map(|&b| t - b).filter(|&s| s > 0.0 && s < t));
    }
    cuts.extend(q.breaks.iter().copied().filter(|&s| s > 0.0 && s < t));
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|a, b| same_time(*a, *b));
    let mut out = vec![ZERO; n];
    for win in cuts.windows(2) {
        let (s0, s1) = (win[0], win[1]);
        let mid = 0.5 * (s0 + s1);
        let qj = q.piece_of(mid);
        for (j, col) in x.iter().enumerate() {
            let xi = col.piece_of(t - mid);
            let qpoly = q.polys[qj][j].shift(s0 - q.breaks[qj]);
            let c = t - s0 - col.breaks[xi];
            for (k, out_k) in out.iter_mut().enumerate() {
                let xpoly = col.polys[xi][k].reflect().shift(-c);
                *out_k += (&xpoly * &qpoly).integral(0.0, s1 - s0);
            }
        }
    }
    Ok(out)
}

fn closure(seeds: &[f64], delays: &[f64], t_end: f64) -> Vec<f64> {
    let mut pts: Vec<f64> = seeds.iter().copied().filter(|&s| s <= t_end).collect();
    pts.sort_by(f64::total_cmp);
    pts.dedup_by(|a, b| same_time(*a, *b));
    let mut i = 0;
    while i < pts.len() {
        let p = pts[i];
        for &d in delays {
            let nxt = p + d;
            if nxt > t_end && !same_time(nxt, t_end) {
                continue;
            }
            let at = pts.partition_point(|&x| x < nxt);
            let dup = (at < pts.len() && same_time(pts[at], nxt)) || (at > 0 && same_time(pts[at - 1], nxt));
            if !dup {
                pts.insert(at, nxt);
            }
        }
        i += 1;
    }
    pts
}
