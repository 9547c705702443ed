//! Variation of constants: `w^φ(t) = v^φ(t) + ∫_0^t X(t - s) q(s) ds`, growth
//! estimates for the fundamental solution, and the commutation identity
//! between functionals and convolution-type integrals.

use crate::error::{Error, Result};
use crate::history::{max_norm, same_time, History, Side};
use crate::measures::ComplexMeasure;
use crate::poly::Poly;
use crate::pwfun::{merge_times, Piece, PiecewiseFn};
use crate::solver::{
    fundamental_solution, solve_homogeneous, solve_inhomogeneous, FundamentalSolution, Problem, Solution, SolverConfig,
};
use num_complex::Complex64;
use serde::Serialize;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Node values of one column, read once so that the convolution does not
/// search for every quadrature point.
struct ColumnNodes {
    times: Vec<f64>,
    left: Vec<Vec<Complex64>>,
    right: Vec<Vec<Complex64>>,
}

impl ColumnNodes {
    fn new(col: &Solution) -> Self {
        let times = col.grid.clone();
        let left = times.iter().map(|&u| col.y.vector_at(u, Side::Left)).collect();
        let right = times.iter().map(|&u| col.y.vector_at(u, Side::Right)).collect();
        Self { times, left, right }
    }
}

/// `p(t) = ∫_0^t X(t - s) q(s) ds` at every time of `grid`.
///
/// The quadrature nodes in `u = t - s` are the nodes of `X` (which contain
/// every jump time of `X`) together with `t - b` for the breakpoints `b` of
/// `q`. On each cell the trapezoid rule uses the one-sided values of `X`
/// from inside the cell, so jumps never fall inside a cell.
pub fn convolve_fundamental(x: &FundamentalSolution, q: &PiecewiseFn, grid: &[f64]) -> Result<PiecewiseFn> {
    let n = x.dim();
    if q.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: q.dim(),
        });
    }
    let t_max = grid.iter().copied().fold(0.0, f64::max);
    if !(t_max > 0.0) {
        return Err(Error::Precondition("output grid must reach past 0".into()));
    }
    let t_x = x.horizon();
    let (qa, qb) = q.domain();
    if t_max > t_x && !same_time(t_max, t_x) {
        return Err(Error::HorizonMismatch(format!(
            "fundamental solution ends at {t_x}, output grid at {t_max}"
        )));
    }
    if !same_time(qa, 0.0) || (t_max > qb && !same_time(t_max, qb)) {
        return Err(Error::HorizonMismatch(format!(
            "forcing on [{qa}, {qb}] does not cover [0, {t_max}]"
        )));
    }
    if let Some((t, _)) = q.jumps(1e-12).first() {
        return Err(Error::Precondition(format!("forcing is discontinuous at {t}")));
    }
    let grid = merge_times(&[0.0], grid);
    let cols: Vec<ColumnNodes> = x.columns.iter().map(ColumnNodes::new).collect();
    let q_breaks: Vec<f64> = q.breakpoints().to_vec();

    let one_time = |t: f64| -> Vec<Complex64> { convolve_at(x, &cols, q, &q_breaks, t) };
    let values: Vec<Vec<Complex64>> = {
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            grid.par_iter().map(|&t| one_time(t)).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            grid.iter().map(|&t| one_time(t)).collect()
        }
    };

    check_continuity(x, &cols, q, &grid, &values)?;

    let flat: Vec<Complex64> = values.into_iter().flatten().collect();
    let t_end = *grid.last().unwrap();
    PiecewiseFn::new(
        n,
        vec![0.0, t_end],
        vec![Piece::Sampled {
            times: grid,
            values: flat,
        }],
        None,
    )
}

fn convolve_at(
    x: &FundamentalSolution,
    cols: &[ColumnNodes],
    q: &PiecewiseFn,
    q_breaks: &[f64],
    t: f64,
) -> Vec<Complex64> {
    let n = cols.len();
    let mut out = vec![ZERO; n];
    if t <= 0.0 {
        return out;
    }
    // Every column shares the node set except for rounding-level
    // differences, so each column is integrated on its own nodes.
    for (j, col) in cols.iter().enumerate() {
        let mut us: Vec<(f64, Option<usize>)> = col
            .times
            .iter()
            .enumerate()
            .take_while(|(_, &u)| u < t && !same_time(u, t))
            .map(|(i, &u)| (u, Some(i)))
            .collect();
        for &b in q_breaks {
            let u = t - b;
            if u > 0.0 && u < t && !us.iter().any(|&(v, _)| same_time(v, u)) {
                us.push((u, None));
            }
        }
        us.push((t, col.times.iter().position(|&u| same_time(u, t))));
        us.sort_by(|a, b| a.0.total_cmp(&b.0));

        let value = |(u, idx): (f64, Option<usize>), side: Side| -> Vec<Complex64> {
            match idx {
                Some(i) => match side {
                    Side::Left => col.left[i].clone(),
                    _ => col.right[i].clone(),
                },
                None => x.columns[j].y.vector_at(u, side),
            }
        };
        for w in us.windows(2) {
            let (u0, u1) = (w[0].0, w[1].0);
            let x0 = value(w[0], Side::Right);
            let x1 = value(w[1], Side::Left);
            let q0 = q.value_at(j, t - u0, Side::At);
            let q1 = q.value_at(j, t - u1, Side::At);
            let half = 0.5 * (u1 - u0);
            for k in 0..n {
                out[k] += half * (x0[k] * q0 + x1[k] * q1);
            }
        }
    }
    out
}

/// `|p(t₂) - p(t₁)| ≤ n·sup|q|·Δt·(sup|X| + Σ|jumps of X| + t₁·Lip)`, with a
/// factor two for quadrature error.
fn check_continuity(
    x: &FundamentalSolution,
    cols: &[ColumnNodes],
    q: &PiecewiseFn,
    grid: &[f64],
    values: &[Vec<Complex64>],
) -> Result<()> {
    let n = x.dim() as f64;
    let q_sup = q.sup_norm();
    let mut x_sup: f64 = 0.0;
    let mut lip: f64 = 0.0;
    for col in cols {
        for i in 0..col.times.len() {
            x_sup = x_sup.max(max_norm(&col.left[i])).max(max_norm(&col.right[i]));
            if i + 1 < col.times.len() {
                let dt = col.times[i + 1] - col.times[i];
                let d: Vec<Complex64> = col.left[i + 1].iter().zip(&col.right[i]).map(|(a, b)| a - b).collect();
                lip = lip.max(max_norm(&d) / dt);
            }
        }
    }
    let jump_sum: f64 = x
        .ledger
        .iter()
        .skip(1)
        .map(|(_, m)| m.iter().fold(0.0_f64, |a, z| a.max(z.norm())))
        .sum();
    for i in 1..grid.len() {
        let dt = grid[i] - grid[i - 1];
        let d: Vec<Complex64> = values[i].iter().zip(&values[i - 1]).map(|(a, b)| a - b).collect();
        let bound = 2.0 * n * q_sup * dt * (x_sup + jump_sum + grid[i - 1] * lip) + 1e-12;
        if max_norm(&d) > bound {
            return Err(Error::BoundViolated {
                what: "continuity of the convolution".into(),
                t: grid[i],
                lhs: max_norm(&d),
                rhs: bound,
            });
        }
    }
    Ok(())
}

/// Both paths to the inhomogeneous solution.
#[derive(Debug, Clone)]
pub struct VariationOfConstants {
    /// `v + p` on the nodes of `v`.
    pub w: PiecewiseFn,
    pub v: Solution,
    pub p: PiecewiseFn,
    pub x: FundamentalSolution,
}

pub fn variation_of_constants(problem: &Problem, cfg: &SolverConfig) -> Result<VariationOfConstants> {
    let q = problem
        .forcing()
        .ok_or_else(|| Error::Precondition("problem has no forcing term".into()))?;
    let t_end = problem.horizon();
    if !(t_end > 0.0) {
        return Err(Error::Precondition("horizon must be positive".into()));
    }
    let v = solve_homogeneous(problem, cfg)?;
    let x = fundamental_solution(problem.l(), problem.r(), t_end, cfg)?;
    let p = convolve_fundamental(&x, q, &v.grid)?;
    let v_tail = v.y.restrict(0.0, t_end)?;
    let one = Complex64::new(1.0, 0.0);
    let w = PiecewiseFn::linear_combination(one, &v_tail, one, &p)?;
    Ok(VariationOfConstants { w, v, p, x })
}

/// Largest difference between the direct inhomogeneous solve and `v + p`
/// over all node times of both, reading every one-sided value.
#[derive(Debug, Clone, Serialize)]
pub struct TwoPathComparison {
    pub sup_diff: f64,
    pub at: f64,
}

pub fn compare_two_paths(
    problem: &Problem,
    cfg: &SolverConfig,
) -> Result<(TwoPathComparison, VariationOfConstants, Solution)> {
    let voc = variation_of_constants(problem, cfg)?;
    let direct = solve_inhomogeneous(problem, cfg)?;
    let times = merge_times(&direct.grid, &voc.v.grid);
    let mut sup_diff: f64 = 0.0;
    let mut at = 0.0;
    for &t in &times {
        for side in [Side::Left, Side::At, Side::Right] {
            // w lives on [0, T]; the left limit at 0 belongs to the datum.
            if side == Side::Left && same_time(t, 0.0) {
                continue;
            }
            let a = direct.y.vector_at(t, side);
            let b = voc.w.vector_at(t, side);
            let d = a.iter().zip(&b).fold(0.0_f64, |m, (x, y)| m.max((x - y).norm()));
            if d > sup_diff {
                sup_diff = d;
                at = t;
            }
        }
    }
    Ok((TwoPathComparison { sup_diff, at }, voc, direct))
}

/// `|X(t)| ≤ c e^{γt}` fitted on `[t_lo, t_hi]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthEstimate {
    pub c: f64,
    pub gamma: f64,
    pub window: (f64, f64),
    /// Root mean square of the log-linear fit residuals.
    pub residual: f64,
}

/// Margin applied on top of the smallest admissible `c`.
pub const GROWTH_INFLATION: f64 = 1.05;

fn column_norm_samples(x: &FundamentalSolution, lo: f64, hi: f64) -> Vec<(f64, f64)> {
    let times = x.columns.iter().fold(Vec::new(), |acc, c| merge_times(&acc, &c.grid));
    times
        .into_iter()
        .filter(|&t| (t >= lo || same_time(t, lo)) && (t <= hi || same_time(t, hi)))
        .map(|t| {
            let m = [Side::Left, Side::At, Side::Right]
                .into_iter()
                .map(|s| x.norm_at(t, s))
                .fold(0.0, f64::max);
            (t, m)
        })
        .collect()
}

/// Least-squares fit of `log max_j |X_j(t)|` against `t` on the window
/// (default: `[min(1, T/10), T]`). The constant is then raised so that the
/// bound holds with a 5% margin at every node of `[0, t_hi]`, including the
/// transient left out of the fit.
pub fn growth_fit(x: &FundamentalSolution, window: Option<(f64, f64)>) -> Result<GrowthEstimate> {
    let t_end = x.horizon();
    let (lo, hi) = window.unwrap_or(((t_end / 10.0).min(1.0), t_end));
    if !(hi > lo && lo >= 0.0) || hi > t_end && !same_time(hi, t_end) {
        return Err(Error::Precondition(format!(
            "growth window [{lo}, {hi}] must be a nonempty part of [0, {t_end}]"
        )));
    }
    let samples = column_norm_samples(x, lo, hi);
    if samples.iter().all(|&(_, m)| m == 0.0) {
        return Err(Error::AllZero);
    }
    let pts: Vec<(f64, f64)> = samples.iter().map(|&(t, m)| (t, (m + 1e-300).ln())).collect();
    let k = pts.len() as f64;
    let (mt, my) = pts.iter().fold((0.0, 0.0), |(a, b), &(t, y)| (a + t / k, b + y / k));
    let stt: f64 = pts.iter().map(|&(t, _)| (t - mt).powi(2)).sum();
    let sty: f64 = pts.iter().map(|&(t, y)| (t - mt) * (y - my)).sum();
    let gamma = if stt > 0.0 { sty / stt } else { 0.0 };
    let intercept = my - gamma * mt;
    let residual = (pts
        .iter()
        .map(|&(t, y)| (y - intercept - gamma * t).powi(2))
        .sum::<f64>()
        / k)
        .sqrt();
    let est = GrowthEstimate {
        c: intercept.exp(),
        gamma,
        window: (lo, hi),
        residual,
    };
    let all = column_norm_samples(x, 0.0, hi);
    Ok(est.covering(&all))
}

impl GrowthEstimate {
    /// Raises `c` so that `m ≤ c e^{γt} / 1.05` at every sample `(t, m)`.
    pub fn covering(mut self, samples: &[(f64, f64)]) -> Self {
        let need = samples
            .iter()
            .map(|&(t, m)| m * (-self.gamma * t).exp())
            .fold(0.0, f64::max);
        self.c = self.c.max(GROWTH_INFLATION * need);
        self
    }

    /// Also cover a trajectory scaled by `1/scale`, e.g. a homogeneous
    /// solution divided by the norm of its datum.
    pub fn covering_trajectory(self, y: &PiecewiseFn, scale: f64) -> Self {
        if scale == 0.0 {
            return self;
        }
        let samples: Vec<(f64, f64)> = y
            .nodes(8)
            .into_iter()
            .filter(|nd| nd.t >= 0.0)
            .map(|nd| {
                let m = max_norm(&nd.left).max(max_norm(&nd.at)).max(max_norm(&nd.right));
                (nd.t, m / scale)
            })
            .collect();
        self.covering(&samples)
    }

    pub fn bound(&self, t: f64) -> f64 {
        self.c * (self.gamma * t).exp()
    }

    /// `c (e^{γt}|φ| + n ∫_0^t e^{γ(t-s)} |q(s)| ds)` at increasing `times`
    /// starting at 0, with the integral accumulated by the trapezoid rule.
    pub fn forced_bound(&self, n: usize, q: Option<&PiecewiseFn>, phi_norm: f64, times: &[f64]) -> Vec<f64> {
        let q_abs = |s: f64| q.map_or(0.0, |q| max_norm(&q.vector_at(s, Side::At)));
        let mut integral = 0.0;
        let mut prev: Option<f64> = None;
        times
            .iter()
            .map(|&t| {
                if let Some(p) = prev {
                    let dt = t - p;
                    let decay = (self.gamma * dt).exp();
                    integral = decay * integral + 0.5 * dt * (decay * q_abs(p) + q_abs(t));
                }
                prev = Some(t);
                self.c * ((self.gamma * t).exp() * phi_norm + n as f64 * integral)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GrowthReport {
    /// Smallest `bound - |X(t)|` over the grid.
    pub x_margin: f64,
    pub x_margin_at: f64,
    /// Smallest `rhs - |w(t)|` for the inhomogeneous estimate.
    pub w_margin: f64,
    pub w_margin_at: f64,
}

/// Checks `|X_j(t)| ≤ c e^{γt}` on the nodes of `X` and
/// `|w(t)| ≤ c (e^{γt}|φ| + n ∫_0^t e^{γ(t-s)} |q(s)| ds)` on the nodes of `w`.
pub fn check_growth_bounds(
    est: &GrowthEstimate,
    x: &FundamentalSolution,
    w: &PiecewiseFn,
    q: Option<&PiecewiseFn>,
    phi_norm: f64,
) -> Result<GrowthReport> {
    let (_, hi) = est.window;
    let mut report = GrowthReport {
        x_margin: f64::INFINITY,
        x_margin_at: 0.0,
        w_margin: f64::INFINITY,
        w_margin_at: 0.0,
    };
    for (t, m) in column_norm_samples(x, 0.0, hi) {
        let margin = est.bound(t) - m;
        if margin < report.x_margin {
            report.x_margin = margin;
            report.x_margin_at = t;
        }
    }
    if report.x_margin < 0.0 {
        let t = report.x_margin_at;
        return Err(Error::BoundViolated {
            what: "fundamental solution growth".into(),
            t,
            lhs: est.bound(t) - report.x_margin,
            rhs: est.bound(t),
        });
    }

    let nodes: Vec<_> = w
        .nodes(8)
        .into_iter()
        .filter(|nd| nd.t >= 0.0 && nd.t <= hi + 1e-12)
        .collect();
    let times: Vec<f64> = nodes.iter().map(|nd| nd.t).collect();
    let rhs_all = est.forced_bound(x.dim(), q, phi_norm, &times);
    for (nd, rhs) in nodes.iter().zip(rhs_all) {
        let lhs = max_norm(&nd.left).max(max_norm(&nd.at)).max(max_norm(&nd.right));
        if rhs - lhs < report.w_margin {
            report.w_margin = rhs - lhs;
            report.w_margin_at = nd.t;
        }
        if lhs > rhs {
            return Err(Error::BoundViolated {
                what: "inhomogeneous growth".into(),
                t: nd.t,
                lhs,
                rhs,
            });
        }
    }
    Ok(report)
}

/// Which form of the commutation identity to test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CommutationVariant {
    /// `λ g_t = ∫_a^t λ(q(s) f_{t-s+a}) ds` with
    /// `g(τ) = ∫_a^τ q(s) f(τ - s + a) ds`.
    Convolution,
    /// `q ≡ 1`: `λ z_t = ∫_a^t λ f_s ds` with `z(τ) = ∫_a^τ f`.
    RunningIntegral,
}

#[derive(Debug, Clone)]
pub struct CommutationInput<'a> {
    /// A `1 × n` functional on `[-h, 0]`.
    pub lambda: &'a [ComplexMeasure],
    pub h: f64,
    /// Defined on `[a - h, b]` and zero on `[a - h, a)`.
    pub f: &'a PiecewiseFn,
    /// Continuous scalar weight on `[a, b]`; `None` means `q ≡ 1`.
    pub q: Option<&'a PiecewiseFn>,
    pub a: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommutationResult {
    pub lhs: Complex64,
    pub rhs: Complex64,
    pub diff: f64,
}

/// Cell boundaries on `[lo, hi]` with spacing at most `1/grid_n`, refining
/// the given split points.
fn refine(lo: f64, hi: f64, splits: &[f64], grid_n: usize) -> Vec<f64> {
    let mut pts = vec![lo, hi];
    pts.extend(splits.iter().copied().filter(|&s| s > lo && s < hi));
    let pts = merge_times(&pts, &[]);
    let mut out = vec![lo];
    for w in pts.windows(2) {
        let m = ((w[1] - w[0]) * grid_n as f64).ceil().max(1.0) as usize;
        for i in 1..=m {
            out.push(if i == m {
                w[1]
            } else {
                w[0] + (w[1] - w[0]) * i as f64 / m as f64
            });
        }
    }
    out
}

fn apply_row<H: History + ?Sized>(lambda: &[ComplexMeasure], hist: &H, t: f64, side: Side) -> Complex64 {
    lambda
        .iter()
        .enumerate()
        .map(|(k, mu)| mu.integrate_shifted(hist, k, t, side))
        .sum()
}

pub fn commutation_check(
    input: &CommutationInput<'_>,
    t: f64,
    grid_n: usize,
    variant: CommutationVariant,
) -> Result<CommutationResult> {
    let CommutationInput { lambda, h, f, q, a } = *input;
    let n = f.dim();
    if lambda.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: lambda.len(),
        });
    }
    if grid_n == 0 {
        return Err(Error::InvalidConfig("grid_n must be positive".into()));
    }
    let (fa, fb) = f.domain();
    if !same_time(fa, a - h) || !(t > a) || (t > fb && !same_time(t, fb)) {
        return Err(Error::Precondition(format!(
            "need f on [a - h, b] with a < t ≤ b; got f on [{fa}, {fb}], a = {a}, t = {t}"
        )));
    }
    let vanishes = f
        .nodes(4)
        .iter()
        .filter(|nd| nd.t < a && !same_time(nd.t, a))
        .all(|nd| nd.at.iter().chain(&nd.right).chain(&nd.left).all(|z| *z == ZERO))
        && f.vector_at(a, Side::Left).iter().all(|z| *z == ZERO);
    if !vanishes {
        return Err(Error::Precondition("f must vanish on [a - h, a)".into()));
    }
    if let Some(q) = q {
        if q.dim() != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: q.dim(),
            });
        }
        if variant == CommutationVariant::RunningIntegral {
            return Err(Error::Precondition("the running-integral form has q ≡ 1".into()));
        }
        if !q.jumps(1e-12).is_empty() {
            return Err(Error::Precondition("q must be continuous".into()));
        }
    }
    let q_at = |s: f64| q.map_or(Complex64::new(1.0, 0.0), |q| q.value_at(0, s, Side::At));
    let f_breaks: Vec<f64> = f.breakpoints().iter().copied().filter(|&b| b >= a).collect();
    let q_breaks: Vec<f64> = q.map_or(vec![], |q| q.breakpoints().to_vec());

    // Delays at which λ reads its argument non-smoothly.
    let mut reads: Vec<f64> = vec![0.0];
    for mu in lambda {
        reads.extend(mu.atoms().iter().map(|at| -at.at));
        for d in mu.density_pieces() {
            reads.push(-d.from);
            reads.push(-d.to);
        }
    }

    // Left side: g on [t - h, t], zero before a.
    let lo = (t - h).max(a);
    let g_nodes = refine(lo, t, &f_breaks, grid_n);
    let one = Poly::constant(Complex64::new(1.0, 0.0));
    let g_val = |tau: f64| -> Vec<Complex64> {
        if tau <= a {
            return vec![ZERO; n];
        }
        match variant {
            CommutationVariant::RunningIntegral => (0..n).map(|k| f.integrate_poly(k, &one, 0.0, a, tau)).collect(),
            CommutationVariant::Convolution => {
                let mut splits: Vec<f64> = f_breaks.iter().map(|&b| tau + a - b).collect();
                splits.extend(q_breaks.iter().copied());
                let s = refine(a, tau, &splits, grid_n);
                let mut acc = vec![ZERO; n];
                for w in s.windows(2) {
                    let (s0, s1) = (w[0], w[1]);
                    // s increasing means the argument of f decreases.
                    let f0 = f.vector_at(tau - s0 + a, Side::Left);
                    let f1 = f.vector_at(tau - s1 + a, Side::Right);
                    let (q0, q1) = (q_at(s0), q_at(s1));
                    for k in 0..n {
                        acc[k] += 0.5 * (s1 - s0) * (q0 * f0[k] + q1 * f1[k]);
                    }
                }
                acc
            }
        }
    };
    let mut g_times = Vec::new();
    let mut g_vals = Vec::new();
    if t - h < a && !same_time(t - h, a) {
        g_times.push(t - h);
        g_vals.extend(vec![ZERO; n]);
    }
    for &tau in &g_nodes {
        g_times.push(tau);
        g_vals.extend(g_val(tau));
    }
    let g = PiecewiseFn::new(
        n,
        vec![t - h, t],
        vec![Piece::Sampled {
            times: g_times,
            values: g_vals,
        }],
        None,
    )?;
    let lhs = apply_row(lambda, &g, t, Side::At);

    // Right side: trapezoid in s, split where λ reads a jump of f.
    let mut splits = Vec::new();
    for &b in &f_breaks {
        for &r in &reads {
            splits.push(t + a - b - r);
        }
    }
    splits.extend(q_breaks.iter().copied());
    let s_nodes = refine(a, t, &splits, grid_n);
    let mut rhs = ZERO;
    for w in s_nodes.windows(2) {
        let (s0, s1) = (w[0], w[1]);
        let v0 = q_at(s0) * apply_row(lambda, f, t - s0 + a, Side::Left);
        let v1 = q_at(s1) * apply_row(lambda, f, t - s1 + a, Side::Right);
        rhs += 0.5 * (s1 - s0) * (v0 + v1);
    }
    Ok(CommutationResult {
        lhs,
        rhs,
        diff: (lhs - rhs).norm(),
    })
}

/// Observed order `log2(e_k / e_{k+1})` averaged over successive halvings.
pub fn observed_order(errors: &[f64]) -> f64 {
    let orders: Vec<f64> = errors
        .windows(2)
        .filter(|w| w[0] > 0.0 && w[1] > 0.0)
        .map(|w| (w[0] / w[1]).log2())
        .collect();
    if orders.is_empty() {
        return f64::NAN;
    }
    orders.iter().sum::<f64>() / orders.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::FunctionalMatrix;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn atom(at: f64, w: f64) -> FunctionalMatrix {
        FunctionalMatrix::scalar(1.0, ComplexMeasure::atom(at, c(w))).unwrap()
    }

    #[test]
    fn convolution_of_identity_kernel() {
        let z = FunctionalMatrix::zeros(1, 1.0).unwrap();
        let cfg = SolverConfig::default().with_grid_n(64);
        let x = fundamental_solution(&z, &z, 2.0, &cfg).unwrap();
        let one = PiecewiseFn::constant(vec![c(1.0)], 0.0, 2.0).unwrap();
        let p = convolve_fundamental(&x, &one, &x.columns[0].grid).unwrap();
        for &t in &[0.0, 0.5, 1.25, 2.0] {
            assert!((p.eval(t).unwrap()[0] - c(t)).norm() < 1e-13);
        }
        let zero = PiecewiseFn::zeros(1, 0.0, 2.0).unwrap();
        let p0 = convolve_fundamental(&x, &zero, &x.columns[0].grid).unwrap();
        assert_eq!(p0.sup_norm(), 0.0);
    }

    #[test]
    fn convolution_of_neutral_kernel() {
        // ∫_0^2 X = 1 + ∫_1^2 (1.5 + (u - 1)) du = 3
        let cfg = SolverConfig::default().with_grid_n(256);
        let x = fundamental_solution(&atom(-1.0, 0.5), &atom(-1.0, 1.0), 2.0, &cfg).unwrap();
        let one = PiecewiseFn::constant(vec![c(1.0)], 0.0, 2.0).unwrap();
        let p = convolve_fundamental(&x, &one, &x.columns[0].grid).unwrap();
        assert!((p.eval(2.0).unwrap()[0] - c(3.0)).norm() < 1e-12);
        assert!(convolve_fundamental(&x, &one, &[0.0, 3.0]).is_err());
    }

    #[test]
    fn growth_of_constant_kernel() {
        let z = FunctionalMatrix::zeros(1, 1.0).unwrap();
        let x = fundamental_solution(&z, &z, 5.0, &SolverConfig::default().with_grid_n(32)).unwrap();
        let est = growth_fit(&x, None).unwrap();
        assert!(est.gamma.abs() < 1e-9);
        assert!((est.c - 1.05).abs() < 1e-9);
        assert!(est.residual < 1e-9);
    }

    #[test]
    fn growth_of_retarded_kernel_is_positive() {
        let z = FunctionalMatrix::zeros(1, 1.0).unwrap();
        let x = fundamental_solution(&z, &atom(-1.0, 1.0), 5.0, &SolverConfig::default().with_grid_n(64)).unwrap();
        let est = growth_fit(&x, Some((0.0, 5.0))).unwrap();
        assert!(est.gamma > 0.0);
    }

    #[test]
    fn commutation_trivial_cases() {
        let lam = [ComplexMeasure::atom(0.0, c(1.0))];
        let step = PiecewiseFn::fundamental_datum(1, 0, 1.0)
            .unwrap()
            .concat(&PiecewiseFn::constant(vec![c(1.0)], 0.0, 2.0).unwrap())
            .unwrap();
        let input = CommutationInput {
            lambda: &lam,
            h: 1.0,
            f: &step,
            q: None,
            a: 0.0,
        };
        let r = commutation_check(&input, 1.5, 64, CommutationVariant::Convolution).unwrap();
        assert!((r.lhs - c(1.5)).norm() < 1e-13);
        assert!(r.diff < 1e-13);
        let zero = PiecewiseFn::zeros(1, -1.0, 2.0).unwrap();
        let input = CommutationInput { f: &zero, ..input };
        let r = commutation_check(&input, 1.5, 64, CommutationVariant::RunningIntegral).unwrap();
        assert_eq!((r.lhs, r.rhs), (ZERO, ZERO));
    }

    #[test]
    fn commutation_refuses_nonvanishing_f() {
        let lam = [ComplexMeasure::atom(0.0, c(1.0))];
        let f = PiecewiseFn::constant(vec![c(1.0)], -1.0, 2.0).unwrap();
        let input = CommutationInput {
            lambda: &lam,
            h: 1.0,
            f: &f,
            q: None,
            a: 0.0,
        };
        assert!(commutation_check(&input, 1.0, 16, CommutationVariant::Convolution).is_err());
    }

    #[test]
    fn order_estimate() {
        assert!((observed_order(&[1e-2, 2.5e-3, 6.25e-4]) - 2.0).abs() < 1e-12);
        assert!(observed_order(&[0.0, 0.0]).is_nan());
    }
}
