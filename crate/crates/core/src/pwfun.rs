//! Bounded piecewise-smooth ℂⁿ-valued functions with explicit values at
//! breakpoints.
//!
//! Between consecutive breakpoints a function is either a polynomial per
//! component or a linear interpolant of samples. Every piece extends
//! continuously to its closed interval, so discontinuities can only occur at
//! breakpoints, where the left limit, the stored value and the right limit
//! may all differ.
//!
//! Default breakpoint values follow the right-continuous convention: the
//! value is the right limit, except at the right end of the domain where it
//! is the left limit. [`PiecewiseFn::with_value`] overrides a value anywhere.

use crate::error::{Error, Result};
use crate::history::{linear_times_poly, max_norm, moment_antiderivatives, same_time, History, Side};
use crate::poly::Poly;
use num_complex::Complex64;
use std::io;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Pieces hold their own local representation on the closed interval
/// between two breakpoints.
#[derive(Debug, Clone, PartialEq)]
pub enum Piece {
    /// One polynomial per component in the local variable `t - left`.
    Poly(Vec<Poly>),
    /// Linear interpolation of samples. `times` starts at the left breakpoint
    /// and ends at the right one; `values` is flat with stride `n`.
    Sampled { times: Vec<f64>, values: Vec<Complex64> },
}

impl Piece {
    fn eval(&self, n: usize, left: f64, k: usize, t: f64) -> Complex64 {
        match self {
            Piece::Poly(polys) => polys[k].eval(t - left),
            Piece::Sampled { times, values } => {
                let i = times.partition_point(|&s| s <= t);
                if i == 0 {
                    return values[k];
                }
                if i >= times.len() {
                    return values[(times.len() - 1) * n + k];
                }
                let (t0, t1) = (times[i - 1], times[i]);
                let (v0, v1) = (values[(i - 1) * n + k], values[i * n + k]);
                if t1 == t0 {
                    return v1;
                }
                v0 + (v1 - v0) * ((t - t0) / (t1 - t0))
            }
        }
    }

    fn left_end(&self, k: usize) -> Complex64 {
        match self {
            Piece::Poly(polys) => polys[k].eval(0.0),
            Piece::Sampled { values, .. } => values[k],
        }
    }

    fn right_end(&self, n: usize, left: f64, right: f64, k: usize) -> Complex64 {
        match self {
            Piece::Poly(polys) => polys[k].eval(right - left),
            Piece::Sampled { times, values } => values[(times.len() - 1) * n + k],
        }
    }

    /// Restriction to `[lo, hi] ⊆ [left, right]`, expressed relative to `lo`.
    fn restrict(&self, n: usize, left: f64, lo: f64, hi: f64) -> Piece {
        match self {
            Piece::Poly(polys) => Piece::Poly(polys.iter().map(|p| p.shift(lo - left)).collect()),
            Piece::Sampled { times, .. } => {
                let mut ts = vec![lo];
                ts.extend(
                    times
                        .iter()
                        .copied()
                        .filter(|&s| s > lo && s < hi && !same_time(s, lo) && !same_time(s, hi)),
                );
                ts.push(hi);
                let mut vals = Vec::with_capacity(ts.len() * n);
                for &s in &ts {
                    for k in 0..n {
                        vals.push(self.eval(n, left, k, s));
                    }
                }
                Piece::Sampled {
                    times: ts,
                    values: vals,
                }
            }
        }
    }

    fn sample_times(&self, left: f64, right: f64, poly_samples: usize) -> Vec<f64> {
        match self {
            Piece::Sampled { times, .. } => times.clone(),
            Piece::Poly(_) => {
                let m = poly_samples.max(1);
                (0..=m)
                    .map(|i| {
                        if i == m {
                            right
                        } else {
                            left + (right - left) * i as f64 / m as f64
                        }
                    })
                    .collect()
            }
        }
    }
}

/// Value triple at a sample node.
#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub t: f64,
    pub left: Vec<Complex64>,
    pub at: Vec<Complex64>,
    pub right: Vec<Complex64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseFn {
    n: usize,
    breaks: Vec<f64>,
    pieces: Vec<Piece>,
    values: Vec<Complex64>,
}

impl PiecewiseFn {
    /// Builds a function from breakpoints and pieces. `values`, when given,
    /// holds the pointwise value at every breakpoint (flat, stride `n`);
    /// otherwise the right-continuous default applies.
    pub fn new(n: usize, breaks: Vec<f64>, pieces: Vec<Piece>, values: Option<Vec<Complex64>>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidFunction("dimension must be positive".into()));
        }
        if breaks.len() < 2 {
            return Err(Error::InvalidFunction("need at least two breakpoints".into()));
        }
        if breaks.iter().any(|b| !b.is_finite()) || breaks.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidFunction(
                "breakpoints must be finite and strictly increasing".into(),
            ));
        }
        if pieces.len() != breaks.len() - 1 {
            return Err(Error::InvalidFunction(format!(
                "{} pieces for {} breakpoints",
                pieces.len(),
                breaks.len()
            )));
        }
        for (i, p) in pieces.iter().enumerate() {
            match p {
                Piece::Poly(polys) => {
                    if polys.len() != n {
                        return Err(Error::DimensionMismatch {
                            expected: n,
                            got: polys.len(),
                        });
                    }
                    if polys.iter().flat_map(|p| p.coeffs()).any(|c| !c.is_finite()) {
                        return Err(Error::InvalidFunction("non-finite coefficient".into()));
                    }
                }
                Piece::Sampled { times, values } => {
                    let (l, r) = (breaks[i], breaks[i + 1]);
                    if times.len() < 2
                        || values.len() != times.len() * n
                        || !same_time(times[0], l)
                        || !same_time(*times.last().unwrap(), r)
                        || times.windows(2).any(|w| w[1] <= w[0])
                    {
                        return Err(Error::InvalidFunction(format!(
                            "sampled piece {i} does not span [{l}, {r}] with increasing times"
                        )));
                    }
                    if values.iter().any(|c| !c.is_finite()) {
                        return Err(Error::InvalidFunction("non-finite sample".into()));
                    }
                }
            }
        }
        let values = match values {
            Some(v) => {
                if v.len() != breaks.len() * n {
                    return Err(Error::InvalidFunction(
                        "one value per breakpoint and component required".into(),
                    ));
                }
                v
            }
            None => {
                let last = pieces.len() - 1;
                let mut v = Vec::with_capacity(breaks.len() * n);
                for i in 0..breaks.len() {
                    for k in 0..n {
                        v.push(if i <= last {
                            pieces[i].left_end(k)
                        } else {
                            pieces[last].right_end(n, breaks[last], breaks[last + 1], k)
                        });
                    }
                }
                v
            }
        };
        Ok(Self {
            n,
            breaks,
            pieces,
            values,
        })
    }

    /// Polynomial pieces, `polys[i][k]` being component `k` on piece `i`.
    pub fn from_polys(breaks: Vec<f64>, polys: Vec<Vec<Poly>>) -> Result<Self> {
        let n = polys.first().map_or(0, |p| p.len());
        Self::new(n, breaks, polys.into_iter().map(Piece::Poly).collect(), None)
    }

    /// Scalar function with one polynomial per piece.
    pub fn scalar(breaks: Vec<f64>, polys: Vec<Poly>) -> Result<Self> {
        Self::from_polys(breaks, polys.into_iter().map(|p| vec![p]).collect())
    }

    pub fn constant(value: Vec<Complex64>, a: f64, b: f64) -> Result<Self> {
        let polys = value.iter().map(|&c| Poly::constant(c)).collect();
        Self::from_polys(vec![a, b], vec![polys])
    }

    pub fn zeros(n: usize, a: f64, b: f64) -> Result<Self> {
        Self::constant(vec![ZERO; n], a, b)
    }

    /// The datum `0` on `[-h, 0)` with value `e_j` at `0`.
    pub fn fundamental_datum(n: usize, j: usize, h: f64) -> Result<Self> {
        if j >= n {
            return Err(Error::DimensionMismatch { expected: n, got: j });
        }
        let mut e = vec![ZERO; n];
        e[j] = Complex64::new(1.0, 0.0);
        Self::zeros(n, -h, 0.0)?.with_value(0.0, e)
    }

    /// Sets the pointwise value at `t`, inserting a breakpoint if needed.
    pub fn with_value(mut self, t: f64, value: Vec<Complex64>) -> Result<Self> {
        if value.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: value.len(),
            });
        }
        let i = match self.break_index(t) {
            Some(i) => i,
            None => {
                let (a, b) = self.domain();
                if t < a || t > b {
                    return Err(Error::OutOfDomain { t, a, b });
                }
                self.insert_break(t)
            }
        };
        self.values[i * self.n..(i + 1) * self.n].copy_from_slice(&value);
        Ok(self)
    }

    fn insert_break(&mut self, t: f64) -> usize {
        let p = self.piece_index(t);
        let (l, r) = (self.breaks[p], self.breaks[p + 1]);
        let lo = self.pieces[p].restrict(self.n, l, l, t);
        let hi = self.pieces[p].restrict(self.n, l, t, r);
        let v: Vec<Complex64> = (0..self.n).map(|k| self.pieces[p].eval(self.n, l, k, t)).collect();
        self.pieces.splice(p..=p, [lo, hi]);
        self.breaks.insert(p + 1, t);
        let at = (p + 1) * self.n;
        self.values.splice(at..at, v);
        p + 1
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

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    pub fn break_value(&self, i: usize) -> &[Complex64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    fn break_index(&self, t: f64) -> Option<usize> {
        let i = self.breaks.partition_point(|&b| b < t);
        if i < self.breaks.len() && same_time(self.breaks[i], t) {
            Some(i)
        } else if i > 0 && same_time(self.breaks[i - 1], t) {
            Some(i - 1)
        } else {
            None
        }
    }

    /// Index of the piece whose open interval contains `t` (clamped).
    fn piece_index(&self, t: f64) -> usize {
        self.breaks
            .partition_point(|&b| b <= t)
            .saturating_sub(1)
            .min(self.pieces.len() - 1)
    }

    fn check_domain(&self, t: f64) -> Result<()> {
        let (a, b) = self.domain();
        if (t < a && !same_time(t, a)) || (t > b && !same_time(t, b)) || !t.is_finite() {
            return Err(Error::OutOfDomain { t, a, b });
        }
        Ok(())
    }

    /// Pointwise value; stored value at breakpoints.
    pub fn eval(&self, t: f64) -> Result<Vec<Complex64>> {
        self.check_domain(t)?;
        Ok(self.vector_at(t, Side::At))
    }

    pub fn left_limit(&self, t: f64) -> Result<Vec<Complex64>> {
        self.check_domain(t)?;
        Ok(self.vector_at(t, Side::Left))
    }

    pub fn right_limit(&self, t: f64) -> Result<Vec<Complex64>> {
        self.check_domain(t)?;
        Ok(self.vector_at(t, Side::Right))
    }

    /// Restriction to `[lo, hi]`, keeping pointwise values at the new ends.
    pub fn restrict(&self, lo: f64, hi: f64) -> Result<Self> {
        self.check_domain(lo)?;
        self.check_domain(hi)?;
        if hi <= lo || same_time(lo, hi) {
            return Err(Error::DomainMismatch(format!("empty restriction [{lo}, {hi}]")));
        }
        let n = self.n;
        let lo_i = self.break_index(lo);
        let hi_i = self.break_index(hi);
        let lo = lo_i.map_or(lo, |i| self.breaks[i]);
        let hi = hi_i.map_or(hi, |i| self.breaks[i]);
        let mut breaks = vec![lo];
        breaks.extend(
            self.breaks
                .iter()
                .copied()
                .filter(|&b| b > lo && b < hi && !same_time(b, lo) && !same_time(b, hi)),
        );
        breaks.push(hi);
        let mut pieces = Vec::with_capacity(breaks.len() - 1);
        for w in breaks.windows(2) {
            let mid = 0.5 * (w[0] + w[1]);
            let p = self.piece_index(mid);
            let l = self.breaks[p];
            if same_time(w[0], l) && same_time(w[1], self.breaks[p + 1]) {
                pieces.push(self.pieces[p].clone());
            } else {
                pieces.push(self.pieces[p].restrict(n, l, w[0], w[1]));
            }
        }
        let mut values = Vec::with_capacity(breaks.len() * n);
        for &b in &breaks {
            values.extend(self.vector_at(b, Side::At));
        }
        Self::new(n, breaks, pieces, Some(values))
    }

    /// Shifts the time axis: the result `g` satisfies `g(s) = self(s + offset)`.
    pub fn shifted(&self, offset: f64) -> Self {
        let pieces = self
            .pieces
            .iter()
            .map(|p| match p {
                Piece::Poly(_) => p.clone(),
                Piece::Sampled { times, values } => Piece::Sampled {
                    times: times.iter().map(|t| t - offset).collect(),
                    values: values.clone(),
                },
            })
            .collect();
        Self {
            n: self.n,
            breaks: self.breaks.iter().map(|b| b - offset).collect(),
            pieces,
            values: self.values.clone(),
        }
    }

    /// The segment `s ↦ v(t + s)` on `[-h, 0]`.
    pub fn segment(&self, t: f64, h: f64) -> Result<Self> {
        let mut seg = self.restrict(t - h, t)?.shifted(t);
        // Pin the ends exactly so that domain checks downstream are bitwise.
        seg.breaks[0] = -h;
        *seg.breaks.last_mut().unwrap() = 0.0;
        if let Some(Piece::Sampled { times, .. }) = seg.pieces.first_mut() {
            times[0] = -h;
        }
        if let Some(Piece::Sampled { times, .. }) = seg.pieces.last_mut() {
            *times.last_mut().unwrap() = 0.0;
        }
        Ok(seg)
    }

    /// Joins `self` on `[a, c]` with `other` on `[c, b]`; the value at `c` is
    /// taken from `other`.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.n != other.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: other.n,
            });
        }
        let (_, c) = self.domain();
        let (c2, _) = other.domain();
        if !same_time(c, c2) {
            return Err(Error::DomainMismatch(format!(
                "left part ends at {c}, right part starts at {c2}"
            )));
        }
        let mut breaks = self.breaks.clone();
        breaks.extend_from_slice(&other.breaks[1..]);
        let mut pieces = self.pieces.clone();
        let mut tail = other.pieces.clone();
        if let Some(Piece::Sampled { times, .. }) = tail.first_mut() {
            times[0] = c;
        }
        pieces.extend(tail);
        let mut values = self.values[..self.values.len() - self.n].to_vec();
        values.extend_from_slice(&other.values);
        Self::new(self.n, breaks, pieces, Some(values))
    }

    /// Extends a function on `[-h, 0]` by its value at `0` up to `t_end`.
    pub fn continue_const(&self, t_end: f64) -> Result<Self> {
        if t_end <= 0.0 {
            return Err(Error::Precondition(format!(
                "continuation horizon must be positive, got {t_end}"
            )));
        }
        let (_, b) = self.domain();
        let v0 = self.vector_at(b, Side::At);
        self.concat(&Self::constant(v0, b, t_end)?)
    }

    /// Continuous approximation: next to each one-sided discontinuity the
    /// function is replaced on a window of width `1/m` by the line joining it
    /// to the value at the breakpoint.
    pub fn approximate_by_continuous(&self, m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::GapTooSmall { m, gap: 0.0 });
        }
        let n = self.n;
        let w = 1.0 / m as f64;
        let nb = self.breaks.len();
        let differs = |a: &[Complex64], b: &[Complex64]| a.iter().zip(b).any(|(x, y)| x != y);
        let left_jump: Vec<bool> = (0..nb)
            .map(|i| i > 0 && differs(&self.vector_at(self.breaks[i], Side::Left), self.break_value(i)))
            .collect();
        let right_jump: Vec<bool> = (0..nb)
            .map(|i| i + 1 < nb && differs(&self.vector_at(self.breaks[i], Side::Right), self.break_value(i)))
            .collect();

        let mut breaks = vec![self.breaks[0]];
        let mut pieces = Vec::new();
        let mut values = self.break_value(0).to_vec();
        let line = |from: &[Complex64], to: &[Complex64]| {
            Piece::Poly(
                from.iter()
                    .zip(to)
                    .map(|(&a, &b)| Poly::new(vec![a, (b - a) / w]))
                    .collect(),
            )
        };
        for p in 0..self.pieces.len() {
            let (l, r) = (self.breaks[p], self.breaks[p + 1]);
            let need = w * (right_jump[p] as u8 + left_jump[p + 1] as u8) as f64;
            if need > 0.0 && need >= r - l {
                return Err(Error::GapTooSmall { m, gap: r - l });
            }
            let start = if right_jump[p] { l + w } else { l };
            let end = if left_jump[p + 1] { r - w } else { r };
            if right_jump[p] {
                let v = self.vector_at(start, Side::At);
                pieces.push(line(self.break_value(p), &v));
                breaks.push(start);
                values.extend_from_slice(&v);
            }
            pieces.push(if start == l && end == r {
                self.pieces[p].clone()
            } else {
                self.pieces[p].restrict(n, l, start, end)
            });
            if left_jump[p + 1] {
                let v = self.vector_at(end, Side::At);
                breaks.push(end);
                values.extend_from_slice(&v);
                pieces.push(line(&v, self.break_value(p + 1)));
            }
            breaks.push(r);
            values.extend_from_slice(self.break_value(p + 1));
        }
        Self::new(n, breaks, pieces, Some(values))
    }

    /// `sup_t |v(t)|` with the max-norm on ℂⁿ.
    ///
    /// Exact for sampled and piecewise-linear pieces. Higher-degree
    /// polynomial pieces are scanned on 256 points per piece and every local
    /// maximum is refined by golden-section search.
    pub fn sup_norm(&self) -> f64 {
        let mut sup = self.values.chunks(self.n).map(max_norm).fold(0.0, f64::max);
        for (p, piece) in self.pieces.iter().enumerate() {
            let (l, r) = (self.breaks[p], self.breaks[p + 1]);
            match piece {
                Piece::Sampled { values, .. } => {
                    sup = values.iter().fold(sup, |m, z| m.max(z.norm()));
                }
                Piece::Poly(polys) => {
                    for poly in polys {
                        sup = sup.max(poly_sup(poly, r - l));
                    }
                }
            }
        }
        sup
    }

    /// `a·f + b·g` on a common domain; the breakpoints are merged.
    pub fn linear_combination(a: Complex64, f: &Self, b: Complex64, g: &Self) -> Result<Self> {
        if f.n != g.n {
            return Err(Error::DimensionMismatch {
                expected: f.n,
                got: g.n,
            });
        }
        let (fa, fb) = f.domain();
        let (ga, gb) = g.domain();
        if !same_time(fa, ga) || !same_time(fb, gb) {
            return Err(Error::DomainMismatch(format!("[{fa}, {fb}] vs [{ga}, {gb}]")));
        }
        let n = f.n;
        let breaks = merge_times(&f.breaks, &g.breaks);
        let mut pieces = Vec::with_capacity(breaks.len() - 1);
        for w in breaks.windows(2) {
            let (l, r) = (w[0], w[1]);
            let mid = 0.5 * (l + r);
            let (pf, pg) = (f.piece_index(mid), g.piece_index(mid));
            let rf = f.pieces[pf].restrict(n, f.breaks[pf], l, r);
            let rg = g.pieces[pg].restrict(n, g.breaks[pg], l, r);
            pieces.push(match (&rf, &rg) {
                (Piece::Poly(x), Piece::Poly(y)) => {
                    Piece::Poly(x.iter().zip(y).map(|(x, y)| &x.scale(a) + &y.scale(b)).collect())
                }
                _ => {
                    let times = merge_times(&rf.sample_times(l, r, 1), &rg.sample_times(l, r, 1));
                    let mut values = Vec::with_capacity(times.len() * n);
                    for &t in &times {
                        for k in 0..n {
                            values.push(a * rf.eval(n, l, k, t) + b * rg.eval(n, l, k, t));
                        }
                    }
                    Piece::Sampled { times, values }
                }
            });
        }
        let mut values = Vec::with_capacity(breaks.len() * n);
        for &t in &breaks {
            let x = f.vector_at(t, Side::At);
            let y = g.vector_at(t, Side::At);
            values.extend(x.iter().zip(&y).map(|(&x, &y)| a * x + b * y));
        }
        Self::new(n, breaks, pieces, Some(values))
    }

    pub fn scale(&self, s: Complex64) -> Self {
        let pieces = self
            .pieces
            .iter()
            .map(|p| match p {
                Piece::Poly(polys) => Piece::Poly(polys.iter().map(|q| q.scale(s)).collect()),
                Piece::Sampled { times, values } => Piece::Sampled {
                    times: times.clone(),
                    values: values.iter().map(|&v| v * s).collect(),
                },
            })
            .collect();
        Self {
            n: self.n,
            breaks: self.breaks.clone(),
            pieces,
            values: self.values.iter().map(|&v| v * s).collect(),
        }
    }

    /// Component `k` as a scalar function.
    pub fn component(&self, k: usize) -> Result<Self> {
        if k >= self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: k,
            });
        }
        let n = self.n;
        let pieces = self
            .pieces
            .iter()
            .map(|p| match p {
                Piece::Poly(polys) => Piece::Poly(vec![polys[k].clone()]),
                Piece::Sampled { times, values } => Piece::Sampled {
                    times: times.clone(),
                    values: values.iter().skip(k).step_by(n).copied().collect(),
                },
            })
            .collect();
        let values = self.values.iter().skip(k).step_by(n).copied().collect();
        Self::new(1, self.breaks.clone(), pieces, Some(values))
    }

    /// Breakpoints where the left limit or the right limit differs from the
    /// stored value by more than `threshold` (max-norm). Returns
    /// `(t, value - left limit)`.
    pub fn jumps(&self, threshold: f64) -> Vec<(f64, Vec<Complex64>)> {
        let mut out = Vec::new();
        for (i, &t) in self.breaks.iter().enumerate() {
            let at = self.break_value(i);
            let l = self.vector_at(t, Side::Left);
            let r = self.vector_at(t, Side::Right);
            let dl: Vec<Complex64> = at.iter().zip(&l).map(|(a, b)| a - b).collect();
            let dr: Vec<Complex64> = r.iter().zip(at).map(|(a, b)| a - b).collect();
            if max_norm(&dl) > threshold || max_norm(&dr) > threshold {
                out.push((t, dl));
            }
        }
        out
    }

    /// Every sample node with its left limit, value and right limit.
    /// Polynomial pieces contribute `poly_samples` equal subintervals.
    pub fn nodes(&self, poly_samples: usize) -> Vec<Node> {
        let mut out = Vec::new();
        for (p, piece) in self.pieces.iter().enumerate() {
            let (l, r) = (self.breaks[p], self.breaks[p + 1]);
            let ts = piece.sample_times(l, r, poly_samples);
            let last = ts.len() - 1;
            let skip_first = p > 0;
            for (i, &t) in ts.iter().enumerate() {
                if i == 0 && skip_first {
                    continue;
                }
                if i == 0 || i == last {
                    let t = if i == 0 { l } else { r };
                    out.push(Node {
                        t,
                        left: self.vector_at(t, Side::Left),
                        at: self.vector_at(t, Side::At),
                        right: self.vector_at(t, Side::Right),
                    });
                } else {
                    let v: Vec<Complex64> = (0..self.n).map(|k| piece.eval(self.n, l, k, t)).collect();
                    out.push(Node {
                        t,
                        left: v.clone(),
                        at: v.clone(),
                        right: v,
                    });
                }
            }
        }
        out
    }

    /// Writes `t,kind,re1,im1,...` rows. Breakpoints whose one-sided limits
    /// differ from the value by more than `jump_tol` get an extra `left`
    /// row before (or `right` row after) the `value` row.
    pub fn write_csv<W: io::Write>(&self, out: W, poly_samples: usize, jump_tol: f64) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string(), "kind".to_string()];
        for k in 1..=self.n {
            header.push(format!("re{k}"));
            header.push(format!("im{k}"));
        }
        w.write_record(&header)?;
        let mut row = |t: f64, kind: &str, v: &[Complex64]| -> csv::Result<()> {
            let mut rec = vec![format!("{t}"), kind.to_string()];
            for z in v {
                rec.push(format!("{}", z.re));
                rec.push(format!("{}", z.im));
            }
            w.write_record(&rec)
        };
        let nodes = self.nodes(poly_samples);
        let diff = |a: &[Complex64], b: &[Complex64]| a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).norm()));
        let (a, b) = self.domain();
        for node in &nodes {
            if node.t != a && diff(&node.left, &node.at) > jump_tol {
                row(node.t, "left", &node.left)?;
            }
            row(node.t, "value", &node.at)?;
            if node.t != b && diff(&node.right, &node.at) > jump_tol {
                row(node.t, "right", &node.right)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Rebuilds a sampled function from [`write_csv`](Self::write_csv)
    /// output. Times carrying a `left` or `right` row become breakpoints.
    pub fn read_csv<R: io::Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let bad = |e: String| Error::InvalidFunction(format!("csv: {e}"));
        let headers = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
        if headers.len() < 4 || headers.len() % 2 != 0 {
            return Err(bad("unexpected header".into()));
        }
        let n = (headers.len() - 2) / 2;
        struct Row {
            t: f64,
            left: Option<Vec<Complex64>>,
            at: Vec<Complex64>,
            right: Option<Vec<Complex64>>,
        }
        let mut rows: Vec<Row> = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            let num = |i: usize| -> Result<f64> {
                rec.get(i)
                    .ok_or_else(|| bad("short row".into()))?
                    .parse::<f64>()
                    .map_err(|e| bad(e.to_string()))
            };
            let t = num(0)?;
            let v = (0..n)
                .map(|k| Ok(Complex64::new(num(2 + 2 * k)?, num(3 + 2 * k)?)))
                .collect::<Result<Vec<_>>>()?;
            let kind = rec.get(1).unwrap_or("");
            match kind {
                "left" => rows.push(Row {
                    t,
                    left: Some(v.clone()),
                    at: v,
                    right: None,
                }),
                "value" => match rows.last_mut() {
                    Some(r) if r.t == t && r.left.is_some() => r.at = v,
                    _ => rows.push(Row {
                        t,
                        left: None,
                        at: v,
                        right: None,
                    }),
                },
                "right" => match rows.last_mut() {
                    Some(r) if r.t == t => r.right = Some(v),
                    _ => return Err(bad(format!("right row at {t} without value row"))),
                },
                other => return Err(bad(format!("unknown row kind {other:?}"))),
            }
        }
        if rows.len() < 2 {
            return Err(bad("need at least two rows".into()));
        }
        let last = rows.len() - 1;
        let mut breaks = Vec::new();
        let mut pieces = Vec::new();
        let mut values = Vec::new();
        let mut times: Vec<f64> = Vec::new();
        let mut samples: Vec<Complex64> = Vec::new();
        for (i, r) in rows.iter().enumerate() {
            let is_break = i == 0 || i == last || r.left.is_some() || r.right.is_some();
            if !is_break {
                times.push(r.t);
                samples.extend_from_slice(&r.at);
                continue;
            }
            if i > 0 {
                times.push(r.t);
                samples.extend_from_slice(r.left.as_ref().unwrap_or(&r.at));
                pieces.push(Piece::Sampled {
                    times: std::mem::take(&mut times),
                    values: std::mem::take(&mut samples),
                });
            }
            breaks.push(r.t);
            values.extend_from_slice(&r.at);
            times.push(r.t);
            samples.extend_from_slice(r.right.as_ref().unwrap_or(&r.at));
        }
        Self::new(n, breaks, pieces, Some(values))
    }
}

impl History for PiecewiseFn {
    fn dim(&self) -> usize {
        self.n
    }

    fn domain(&self) -> (f64, f64) {
        PiecewiseFn::domain(self)
    }

    fn value_at(&self, k: usize, t: f64, side: Side) -> Complex64 {
        let n = self.n;
        if let Some(i) = self.break_index(t) {
            let last = self.breaks.len() - 1;
            return match side {
                Side::Left if i > 0 => self.pieces[i - 1].right_end(n, self.breaks[i - 1], self.breaks[i], k),
                Side::Right if i < last => self.pieces[i].left_end(k),
                _ => self.values[i * n + k],
            };
        }
        debug_assert!(
            self.check_domain(t).is_ok(),
            "read at {t} outside {:?}",
            PiecewiseFn::domain(self)
        );
        let p = self.piece_index(t);
        self.pieces[p].eval(n, self.breaks[p], k, t)
    }

    fn integrate_poly(&self, k: usize, density: &Poly, origin: f64, lo: f64, hi: f64) -> Complex64 {
        if hi <= lo || density.is_zero() {
            return ZERO;
        }
        let n = self.n;
        let mut moments: Option<(Poly, Poly)> = None;
        let mut acc = ZERO;
        let first = self.piece_index(lo);
        for p in first..self.pieces.len() {
            let (l, r) = (self.breaks[p], self.breaks[p + 1]);
            if l >= hi {
                break;
            }
            let (a, b) = (lo.max(l), hi.min(r));
            if b <= a {
                continue;
            }
            match &self.pieces[p] {
                Piece::Poly(polys) => {
                    let f = polys[k].shift(origin - l);
                    acc += (&f * density).integral(a - origin, b - origin);
                }
                Piece::Sampled { times, values } => {
                    let (p0, p1) = moments.get_or_insert_with(|| moment_antiderivatives(density));
                    let mut i = times.partition_point(|&s| s <= a).saturating_sub(1);
                    while i + 1 < times.len() && times[i] < b {
                        let (t0, t1) = (times[i], times[i + 1]);
                        let (c0, c1) = (a.max(t0), b.min(t1));
                        if c1 > c0 {
                            let (v0, v1) = (values[i * n + k], values[(i + 1) * n + k]);
                            let slope = (v1 - v0) / (t1 - t0);
                            acc += linear_times_poly(v0, t0, slope, p0, p1, origin, c0, c1);
                        }
                        i += 1;
                    }
                }
            }
        }
        acc
    }
}

/// Union of two sorted time lists, merging points within tolerance.
pub(crate) fn merge_times(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut all: Vec<f64> = a.iter().chain(b).copied().collect();
    all.sort_by(f64::total_cmp);
    let mut out: Vec<f64> = Vec::with_capacity(all.len());
    for t in all {
        match out.last() {
            Some(&last) if same_time(last, t) => {}
            _ => out.push(t),
        }
    }
    out
}

fn poly_sup(p: &Poly, len: f64) -> f64 {
    let f = |x: f64| p.eval(x).norm();
    if p.degree() <= 1 {
        return f(0.0).max(f(len));
    }
    const SCAN: usize = 256;
    let xs: Vec<f64> = (0..=SCAN).map(|i| len * i as f64 / SCAN as f64).collect();
    let ys: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    let mut best = ys.iter().copied().fold(0.0, f64::max);
    for i in 1..SCAN {
        if ys[i] >= ys[i - 1] && ys[i] >= ys[i + 1] {
            best = best.max(golden_max(&f, xs[i - 1], xs[i + 1]));
        }
    }
    best
}

fn golden_max<F: Fn(f64) -> f64>(f: &F, mut a: f64, mut b: f64) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..80 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    fc.max(fd)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn scalar_poly(a: f64, b: f64, coeffs: &[f64]) -> PiecewiseFn {
        PiecewiseFn::scalar(vec![a, b], vec![Poly::from_real(coeffs)]).unwrap()
    }

    #[test]
    fn eval_fundamental_datum() {
        let f = PiecewiseFn::fundamental_datum(1, 0, 1.0).unwrap();
        assert_eq!(f.eval(0.0).unwrap(), vec![c(1.0)]);
        assert_eq!(f.eval(-0.25).unwrap(), vec![c(0.0)]);
        assert_eq!(f.left_limit(0.0).unwrap(), vec![c(0.0)]);
        assert!(matches!(f.eval(0.5), Err(Error::OutOfDomain { .. })));
    }

    #[test]
    fn eval_quadratic() {
        let f = scalar_poly(-1.0, 0.0, &[0.0, 0.0, 1.0]);
        assert!((f.eval(-0.5).unwrap()[0] - c(0.25)).norm() < 1e-15);
    }

    #[test]
    fn default_values_are_right_continuous() {
        let f = PiecewiseFn::scalar(
            vec![-1.0, -0.5, 0.0],
            vec![Poly::from_real(&[1.0]), Poly::from_real(&[2.0, 4.0])],
        )
        .unwrap();
        assert_eq!(f.eval(-0.5).unwrap()[0], c(2.0));
        assert_eq!(f.left_limit(-0.5).unwrap()[0], c(1.0));
        // right end: left limit
        assert_eq!(f.eval(0.0).unwrap()[0], c(4.0));
    }

    #[test]
    fn segment_of_constant_is_constant() {
        let v = PiecewiseFn::constant(vec![c(3.0)], -1.0, 4.0).unwrap();
        let s = v.segment(2.3, 1.0).unwrap();
        assert_eq!(s.domain(), (-1.0, 0.0));
        for &t in &[-1.0, -0.3, 0.0] {
            assert_eq!(s.eval(t).unwrap(), vec![c(3.0)]);
        }
    }

    #[test]
    fn segment_keeps_interior_jump() {
        let v = PiecewiseFn::zeros(1, -1.0, 0.0)
            .unwrap()
            .with_value(0.0, vec![c(1.0)])
            .unwrap()
            .continue_const(2.0)
            .unwrap();
        let s = v.segment(0.5, 1.0).unwrap();
        assert_eq!(s.eval(-0.75).unwrap()[0], c(0.0));
        assert_eq!(s.eval(-0.5).unwrap()[0], c(1.0));
        assert_eq!(s.left_limit(-0.5).unwrap()[0], c(0.0));
        assert_eq!(s.eval(0.0).unwrap()[0], c(1.0));
    }

    #[test]
    fn concat_examples() {
        let one = |a, b| PiecewiseFn::constant(vec![c(1.0)], a, b).unwrap();
        let joined = one(-1.0, 0.0).concat(&one(0.0, 1.0)).unwrap();
        for &t in &[-1.0, -0.1, 0.0, 0.7, 1.0] {
            assert_eq!(joined.eval(t).unwrap()[0], c(1.0));
        }
        let step = PiecewiseFn::zeros(1, -1.0, 0.0)
            .unwrap()
            .concat(&one(0.0, 1.0))
            .unwrap();
        assert_eq!(step.eval(0.0).unwrap()[0], c(1.0));
        assert_eq!(step.left_limit(0.0).unwrap()[0], c(0.0));
        assert!(matches!(
            one(-1.0, 0.0).concat(&one(0.5, 1.0)),
            Err(Error::DomainMismatch(_))
        ));
    }

    #[test]
    fn continue_const_fundamental() {
        let f = PiecewiseFn::fundamental_datum(1, 0, 1.0)
            .unwrap()
            .continue_const(3.0)
            .unwrap();
        assert_eq!(f.eval(-0.5).unwrap()[0], c(0.0));
        assert_eq!(f.eval(0.0).unwrap()[0], c(1.0));
        assert_eq!(f.eval(3.0).unwrap()[0], c(1.0));
        assert!(f.continue_const(0.0).is_err());
    }

    #[test]
    fn mollified_fundamental_datum() {
        let f = PiecewiseFn::fundamental_datum(1, 0, 1.0).unwrap();
        let g = f.approximate_by_continuous(4).unwrap();
        assert_eq!(g.eval(-0.5).unwrap()[0], c(0.0));
        assert_eq!(g.eval(-0.25).unwrap()[0], c(0.0));
        assert!((g.eval(-0.125).unwrap()[0] - c(0.5)).norm() < 1e-15);
        assert_eq!(g.eval(0.0).unwrap()[0], c(1.0));
        assert!(g.jumps(0.0).is_empty());
        assert!(matches!(f.approximate_by_continuous(1), Err(Error::GapTooSmall { .. })));
    }

    #[test]
    fn mollification_leaves_continuous_functions() {
        let f = scalar_poly(-1.0, 0.0, &[0.3, -1.0, 2.0]);
        assert_eq!(f.approximate_by_continuous(7).unwrap(), f);
    }

    #[test]
    fn sup_norm_examples() {
        assert_eq!(scalar_poly(-1.0, 0.0, &[0.0, 1.0]).sup_norm(), 1.0);
        assert_eq!(PiecewiseFn::fundamental_datum(2, 1, 1.0).unwrap().sup_norm(), 1.0);
        // t² + t written in the local variable x = t + 1
        let q = scalar_poly(-1.0, 0.0, &[0.0, -1.0, 1.0]);
        // dense-grid oracle
        let dense = (0..=100_000)
            .map(|i| {
                let t = -1.0 + i as f64 / 100_000.0;
                (t * t + t).abs()
            })
            .fold(0.0, f64::max);
        assert!((q.sup_norm() - dense).abs() < 1e-9);
        assert!((q.sup_norm() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn linear_combination_of_polys_is_exact() {
        let f = scalar_poly(-1.0, 0.0, &[1.0, 2.0]);
        let g = PiecewiseFn::fundamental_datum(1, 0, 1.0).unwrap();
        let h = PiecewiseFn::linear_combination(c(2.0), &f, c(-1.0), &g).unwrap();
        // f(t) = 1 + 2(t + 1)
        assert_eq!(h.eval(0.0).unwrap()[0], c(5.0));
        assert_eq!(h.left_limit(0.0).unwrap()[0], c(6.0));
        assert_eq!(h.eval(-0.5).unwrap()[0], c(4.0));
        assert!(matches!(h.pieces()[0], Piece::Poly(_)));
    }

    #[test]
    fn integrate_poly_against_sampled_is_exact_for_linear_data() {
        let f = PiecewiseFn::new(
            1,
            vec![-1.0, 0.0],
            vec![Piece::Sampled {
                times: vec![-1.0, -0.7, -0.2, 0.0],
                values: vec![c(-1.0), c(-0.7), c(-0.2), c(0.0)],
            }],
            None,
        )
        .unwrap();
        // ∫_{-1}^{0} t · (1 + (t+1)) dt with density 1 + x on x = t + 1
        let density = Poly::from_real(&[1.0, 1.0]);
        let got = f.integrate_poly(0, &density, -1.0, -1.0, 0.0);
        let exact = Poly::from_real(&[0.0, 2.0, 1.0]).integral(-1.0, 0.0);
        assert!((got - exact).norm() < 1e-14);
    }

    #[test]
    fn csv_round_trip_with_jump() {
        let f = PiecewiseFn::fundamental_datum(1, 0, 1.0)
            .unwrap()
            .continue_const(1.0)
            .unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf, 4, 1e-12).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("0,left,0,0\n0,value,1,0\n"));
        let g = PiecewiseFn::read_csv(buf.as_slice()).unwrap();
        for node in f.nodes(4) {
            assert_eq!(g.eval(node.t).unwrap(), node.at);
            assert_eq!(g.left_limit(node.t).unwrap(), node.left);
        }
    }
}
