//! Method of steps for the integrated neutral equation
//!
//! ```text
//! y(t) - L y_t = φ(0) - Lφ + ∫_0^t R y_s ds + ∫_0^t q(s) ds,   y_0 = φ,
//! ```
//!
//! with an inner Picard iteration on every step of length `t0 ≤ Δ/2`.
//!
//! The time grid is the union of a uniform grid, the times where `y` can
//! jump (breakpoints of `φ` carried forward by the point delays of `L`) and
//! the times where `y` can have a kink (jump times shifted by the delays of
//! `R` and by density edges, again carried forward by `L`). Nodes that may
//! carry a jump store the left limit, the value and the right limit
//! separately. Between nodes the solution is linearly interpolated, and the
//! integral of `s ↦ R y_s` is a composite trapezoid rule that uses the
//! one-sided values at every node, so no quadrature cell straddles a jump.

use crate::error::{Error, Result};
use crate::history::{linear_times_poly, max_norm, moment_antiderivatives, same_time, History, Side};
use crate::measures::FunctionalMatrix;
use crate::poly::Poly;
use crate::pwfun::{merge_times, Piece, PiecewiseFn};
use num_complex::Complex64;
use serde::Serialize;
use std::cmp::Reverse;
use std::collections::BinaryHeap;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Delays shorter than this are not propagated: a shift by (almost) zero
/// reproduces the point itself.
const MIN_SHIFT: f64 = 1e-9;

/// A linear autonomous neutral problem with data on `[-h, 0]`.
#[derive(Debug, Clone)]
pub struct Problem {
    l: FunctionalMatrix,
    r: FunctionalMatrix,
    delta: f64,
    phi: PiecewiseFn,
    q: Option<PiecewiseFn>,
    t_end: f64,
}

impl Problem {
    pub fn new(l: FunctionalMatrix, r: FunctionalMatrix, phi: PiecewiseFn, t_end: f64) -> Result<Self> {
        let n = l.dim();
        if r.dim() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: r.dim(),
            });
        }
        if phi.dim() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: phi.dim(),
            });
        }
        let h = l.horizon();
        if r.horizon() != h {
            return Err(Error::DomainMismatch(format!(
                "L lives on [-{h}, 0] but R on [-{}, 0]",
                r.horizon()
            )));
        }
        let (a, b) = phi.domain();
        if !same_time(a, -h) || !same_time(b, 0.0) {
            return Err(Error::DomainMismatch(format!(
                "initial datum on [{a}, {b}], expected [-{h}, 0]"
            )));
        }
        if !t_end.is_finite() {
            return Err(Error::Precondition("final time must be finite".into()));
        }
        let delta = l.strict_delay_margin()?;
        Ok(Self {
            l,
            r,
            delta,
            phi,
            q: None,
            t_end,
        })
    }

    /// Adds a continuous forcing term on `[0, T]`.
    pub fn with_forcing(mut self, q: PiecewiseFn) -> Result<Self> {
        if q.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: q.dim(),
            });
        }
        let (a, b) = q.domain();
        if !same_time(a, 0.0) || b < self.t_end && !same_time(b, self.t_end) {
            return Err(Error::DomainMismatch(format!(
                "forcing on [{a}, {b}] must cover [0, {}]",
                self.t_end
            )));
        }
        if let Some((t, _)) = q.jumps(1e-12).first() {
            return Err(Error::Precondition(format!("forcing is discontinuous at {t}")));
        }
        self.q = Some(q);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.l.dim()
    }

    pub fn h(&self) -> f64 {
        self.l.horizon()
    }

    pub fn l(&self) -> &FunctionalMatrix {
        &self.l
    }

    pub fn r(&self) -> &FunctionalMatrix {
        &self.r
    }

    pub fn phi(&self) -> &PiecewiseFn {
        &self.phi
    }

    pub fn forcing(&self) -> Option<&PiecewiseFn> {
        self.q.as_ref()
    }

    pub fn horizon(&self) -> f64 {
        self.t_end
    }

    /// Strict-delay margin `Δ` of `L`.
    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn delta_e(&self) -> f64 {
        0.5 * self.delta
    }

    pub fn with_phi(&self, phi: PiecewiseFn) -> Result<Self> {
        let mut p = Self::new(self.l.clone(), self.r.clone(), phi, self.t_end)?;
        p.q = self.q.clone();
        Ok(p)
    }

    pub fn without_forcing(&self) -> Self {
        Self {
            q: None,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverConfig {
    /// Uniform grid points per unit time.
    pub grid_n: usize,
    /// Step length; `None` picks `min(Δ/2, ρ/|R|)`.
    pub t0: Option<f64>,
    pub picard_tol: f64,
    pub picard_max_iter: usize,
    /// Target contraction factor for the default step length.
    pub rho: f64,
    /// Solve fundamental-solution columns concurrently.
    pub parallel_columns: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            grid_n: 512,
            t0: None,
            picard_tol: 1e-10,
            picard_max_iter: 200,
            rho: 0.5,
            parallel_columns: true,
        }
    }
}

impl SolverConfig {
    pub fn with_grid_n(mut self, grid_n: usize) -> Self {
        self.grid_n = grid_n;
        self
    }

    pub fn with_t0(mut self, t0: f64) -> Self {
        self.t0 = Some(t0);
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.picard_tol = tol;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.grid_n == 0 {
            return Err(Error::InvalidConfig("grid_n must be positive".into()));
        }
        if !(self.picard_tol >= 0.0) {
            return Err(Error::InvalidConfig("picard_tol must be non-negative".into()));
        }
        if self.picard_max_iter == 0 {
            return Err(Error::InvalidConfig("picard_max_iter must be positive".into()));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::InvalidConfig("rho must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// The step length used for `p`, checked against `t0 ≤ Δ/2` and
    /// `t0·|R| < 1`.
    pub fn step_length(&self, p: &Problem) -> Result<f64> {
        self.validate()?;
        let r_norm = p.r.operator_norm();
        let t0 = match self.t0 {
            Some(t0) => t0,
            None if r_norm > 0.0 => p.delta_e().min(self.rho / r_norm),
            None => p.delta_e(),
        };
        if !(t0 > 0.0) {
            return Err(Error::InvalidConfig(format!("step length {t0} must be positive")));
        }
        if t0 > p.delta_e() * (1.0 + 1e-12) {
            return Err(Error::InvalidConfig(format!(
                "step length {t0} exceeds Δ/2 = {}",
                p.delta_e()
            )));
        }
        if t0 * r_norm >= 1.0 {
            return Err(Error::InvalidConfig(format!(
                "t0·|R| = {} is not a contraction",
                t0 * r_norm
            )));
        }
        Ok(t0)
    }
}

/// A-priori bounds evaluated on a homogeneous run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsReport {
    pub phi_norm: f64,
    /// `(1 + |L| + t0|R|(1 + 2|L|)) / (1 - t0|R|)`.
    pub c0: f64,
    /// `c0 + |L|`.
    pub c1: f64,
    /// `sup |y(t) - L y_t|` over the first step.
    pub first_step_sup_w: f64,
    pub first_step_ok: bool,
    /// Largest `sup_{[-h,t]} |y| / (c(t)|φ|)` over the grid, with
    /// `c(t) = Σ_{k ≤ ⌈t/t0⌉} c1^k`.
    pub worst_global_ratio: f64,
    pub global_ok: bool,
}

impl BoundsReport {
    pub fn ok(&self) -> bool {
        self.first_step_ok && self.global_ok
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    /// The solution on `[-h, T]`.
    pub y: PiecewiseFn,
    /// Times in `[0, T]` where `y` may jump.
    pub jump_times: Vec<f64>,
    /// Times in `(0, T]` where `y` may lose smoothness without jumping.
    pub kink_times: Vec<f64>,
    /// Node times in `[0, T]`.
    pub grid: Vec<f64>,
    /// Picard iterations per step.
    pub picard_iters: Vec<usize>,
    /// Largest observed ratio of successive Picard changes per step.
    pub contraction: Vec<f64>,
    pub t0: f64,
    pub delta: f64,
    pub delta_e: f64,
    pub r_norm: f64,
    pub l_norm: f64,
    pub config: SolverConfig,
    /// Present for runs without forcing.
    pub bounds: Option<BoundsReport>,
}

impl Solution {
    pub fn horizon(&self) -> f64 {
        self.y.domain().1
    }

    /// All breakpoints of `y` in `[0, T]`.
    pub fn breakpoints_used(&self) -> Vec<f64> {
        self.y.breakpoints().iter().copied().filter(|&t| t >= 0.0).collect()
    }
}

/// Closure of `seed ∩ (-∞, T]` under `b ↦ b + τ` for every delay `τ`,
/// truncated at `T`.
pub fn propagate_breakpoints(seed: &[f64], delays: &[f64], t_end: f64) -> Vec<f64> {
    let delays: Vec<f64> = delays.iter().copied().filter(|&d| d > MIN_SHIFT).collect();
    let mut heap: BinaryHeap<Reverse<OrdF64>> = seed
        .iter()
        .filter(|&&s| s <= t_end || same_time(s, t_end))
        .map(|&s| Reverse(OrdF64(s)))
        .collect();
    let mut out: Vec<f64> = Vec::new();
    while let Some(Reverse(OrdF64(p))) = heap.pop() {
        if matches!(out.last(), Some(&last) if same_time(last, p)) {
            continue;
        }
        out.push(p);
        for &d in &delays {
            let next = p + d;
            if next <= t_end || same_time(next, t_end) {
                heap.push(Reverse(OrdF64(next)));
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct OrdF64(f64);

impl Eq for OrdF64 {}

impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum NodeKind {
    Jump,
    Kink,
    Grid,
}

/// Grid construction shared by fresh solves and restarts.
struct GridPlan {
    times: Vec<f64>,
    kinds: Vec<NodeKind>,
    jumps: Vec<f64>,
    kinks: Vec<f64>,
}

fn plan_grid(p: &Problem, grid_n: usize, grid_origin: f64) -> GridPlan {
    let t_end = p.t_end;
    let h = p.h();
    let mut seeds: Vec<f64> = p
        .phi
        .breakpoints()
        .iter()
        .copied()
        .filter(|&b| b > -h && !same_time(b, -h))
        .collect();
    seeds.push(0.0);
    let l_delays = p.l.atom_delays();
    let jump_closure = propagate_breakpoints(&seeds, &l_delays, t_end);

    let mut shifts = p.r.atom_delays();
    shifts.extend(p.r.density_edge_delays());
    shifts.extend(p.l.density_edge_delays());
    shifts.retain(|&d| d > MIN_SHIFT);
    let mut kink_seeds: Vec<f64> = jump_closure
        .iter()
        .flat_map(|&b| shifts.iter().map(move |&d| b + d))
        .filter(|&t| t > 0.0)
        .collect();
    if let Some(q) = &p.q {
        kink_seeds.extend(q.breakpoints().iter().copied().filter(|&t| t > 0.0));
    }
    let mut kinks = propagate_breakpoints(&kink_seeds, &l_delays, t_end);
    let jumps: Vec<f64> = jump_closure
        .into_iter()
        .filter(|&t| t >= 0.0 || same_time(t, 0.0))
        .collect();
    kinks.retain(|&t| t > 0.0 && !jumps.iter().any(|&j| same_time(j, t)));

    let mut cand: Vec<(f64, NodeKind)> = Vec::new();
    cand.extend(jumps.iter().map(|&t| (t, NodeKind::Jump)));
    cand.extend(kinks.iter().map(|&t| (t, NodeKind::Kink)));
    let step = 1.0 / grid_n as f64;
    let k0 = (-grid_origin * grid_n as f64).ceil() as i64;
    let mut k = k0;
    loop {
        let t = grid_origin + k as f64 * step;
        if t > t_end {
            break;
        }
        if t >= 0.0 {
            cand.push((t, NodeKind::Grid));
        }
        k += 1;
    }
    let (times, kinds) = merge_candidates(cand, t_end);
    GridPlan {
        times,
        kinds,
        jumps,
        kinks,
    }
}

/// Restart grid: the tail of an earlier grid shifted to start at 0. The
/// earlier jump and kink sets are closed under the neutral delays, so they
/// already contain every breakpoint the restarted problem can produce.
fn plan_given(p: &Problem, sol: &Solution, t_r: f64) -> GridPlan {
    let t_end = p.t_end;
    let shift = |ts: &[f64]| -> Vec<f64> {
        ts.iter()
            .map(|&t| t - t_r)
            .filter(|&t| (t > 0.0 || same_time(t + t_r, t_r)) && (t <= t_end || same_time(t, t_end)))
            .map(|t| t.max(0.0))
            .collect()
    };
    let mut jumps = shift(&sol.jump_times);
    if jumps.first().is_none_or(|&t| t > 0.0) {
        jumps.insert(0, 0.0);
    }
    let mut kinks = shift(&sol.kink_times);
    kinks.retain(|&t| t > 0.0 && !jumps.iter().any(|&j| same_time(j, t)));
    let mut cand: Vec<(f64, NodeKind)> = Vec::new();
    cand.extend(jumps.iter().map(|&t| (t, NodeKind::Jump)));
    cand.extend(kinks.iter().map(|&t| (t, NodeKind::Kink)));
    cand.extend(shift(&sol.grid).into_iter().map(|t| (t, NodeKind::Grid)));
    let (times, kinds) = merge_candidates(cand, t_end);
    GridPlan {
        times,
        kinds,
        jumps,
        kinks,
    }
}

/// Sorts candidate nodes, merges coincident ones (the lower kind wins) and
/// pins the end points.
fn merge_candidates(mut cand: Vec<(f64, NodeKind)>, t_end: f64) -> (Vec<f64>, Vec<NodeKind>) {
    cand.push((t_end, NodeKind::Kink));
    cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut times: Vec<f64> = Vec::with_capacity(cand.len());
    let mut kinds: Vec<NodeKind> = Vec::with_capacity(cand.len());
    for (t, kind) in cand {
        if let Some(&last) = times.last() {
            if same_time(last, t) {
                let i = kinds.len() - 1;
                if kind < kinds[i] {
                    kinds[i] = kind;
                    times[i] = t;
                }
                continue;
            }
        }
        times.push(t);
        kinds.push(kind);
    }
    times[0] = 0.0;
    kinds[0] = NodeKind::Jump;
    *times.last_mut().unwrap() = t_end;
    if kinds.last() == Some(&NodeKind::Grid) {
        *kinds.last_mut().unwrap() = NodeKind::Kink;
    }
    (times, kinds)
}

/// The trajectory under construction: `φ` on `[-h, 0)` and node values on
/// `[0, T]`.
struct Trace<'a> {
    n: usize,
    phi: &'a PiecewiseFn,
    times: Vec<f64>,
    left: Vec<Complex64>,
    at: Vec<Complex64>,
    right: Vec<Complex64>,
}

impl Trace<'_> {
    fn locate(&self, t: f64) -> std::result::Result<usize, usize> {
        let i = self.times.partition_point(|&s| s < t);
        if i < self.times.len() && same_time(self.times[i], t) {
            Ok(i)
        } else if i > 0 && same_time(self.times[i - 1], t) {
            Ok(i - 1)
        } else {
            Err(i)
        }
    }

    fn node(&self, i: usize, side: Side) -> &[Complex64] {
        let s = i * self.n..(i + 1) * self.n;
        match side {
            Side::Left => &self.left[s],
            Side::At => &self.at[s],
            Side::Right => &self.right[s],
        }
    }

    fn set(&mut self, i: usize, side: Side, v: &[Complex64]) {
        let s = i * self.n..(i + 1) * self.n;
        match side {
            Side::Left => self.left[s].copy_from_slice(v),
            Side::At => self.at[s].copy_from_slice(v),
            Side::Right => self.right[s].copy_from_slice(v),
        }
    }
}

impl History for Trace<'_> {
    fn dim(&self) -> usize {
        self.n
    }

    fn domain(&self) -> (f64, f64) {
        (self.phi.domain().0, *self.times.last().unwrap())
    }

    fn value_at(&self, k: usize, t: f64, side: Side) -> Complex64 {
        if t < 0.0 && !same_time(t, 0.0) {
            return self.phi.value_at(k, t, side);
        }
        let n = self.n;
        match self.locate(t) {
            Ok(i) => self.node(i, side)[k],
            Err(i) => {
                let i = i.min(self.times.len() - 1).max(1);
                let (t0, t1) = (self.times[i - 1], self.times[i]);
                let (v0, v1) = (self.right[(i - 1) * n + k], self.left[i * n + k]);
                v0 + (v1 - v0) * ((t - t0) / (t1 - t0))
            }
        }
    }

    fn integrate_poly(&self, k: usize, density: &Poly, origin: f64, lo: f64, hi: f64) -> Complex64 {
        if hi <= lo || density.is_zero() {
            return ZERO;
        }
        let mut acc = ZERO;
        if lo < 0.0 {
            acc += self.phi.integrate_poly(k, density, origin, lo, hi.min(0.0));
        }
        if hi > 0.0 {
            let n = self.n;
            let a = lo.max(0.0);
            let (p0, p1) = moment_antiderivatives(density);
            let mut i = self.times.partition_point(|&s| s <= a).saturating_sub(1);
            while i + 1 < self.times.len() && self.times[i] < hi {
                let (t0, t1) = (self.times[i], self.times[i + 1]);
                let (c0, c1) = (a.max(t0), hi.min(t1));
                if c1 > c0 {
                    let (v0, v1) = (self.right[i * n + k], self.left[(i + 1) * n + k]);
                    let slope = (v1 - v0) / (t1 - t0);
                    acc += linear_times_poly(v0, t0, slope, &p0, &p1, origin, c0, c1);
                }
                i += 1;
            }
        }
        acc
    }
}

const SIDES: [Side; 3] = [Side::Left, Side::At, Side::Right];

fn add_into(acc: &mut [Complex64], x: &[Complex64]) {
    for (a, b) in acc.iter_mut().zip(x) {
        *a += b;
    }
}

/// Where the nodes of a run come from.
enum Grid<'a> {
    /// Uniform nodes at `origin + k / grid_n` plus the propagated breakpoints.
    Fresh { origin: f64 },
    /// The tail of an earlier solution's grid from `t_r` on.
    Restart { sol: &'a Solution, t_r: f64 },
}

/// Runs the method of steps on the nodes described by `grid`.
fn run(p: &Problem, cfg: &SolverConfig, with_forcing: bool, grid: Grid<'_>) -> Result<Solution> {
    let t0 = cfg.step_length(p)?;
    let n = p.dim();
    let r_norm = p.r.operator_norm();
    let l_norm = p.l.operator_norm();
    let forcing = if with_forcing { p.q.as_ref() } else { None };
    let t_end = p.t_end;
    let phi_norm = p.phi.sup_norm();

    if t_end <= 0.0 || same_time(t_end, 0.0) {
        return Ok(Solution {
            y: p.phi.clone(),
            jump_times: vec![],
            kink_times: vec![],
            grid: vec![],
            picard_iters: vec![],
            contraction: vec![],
            t0,
            delta: p.delta,
            delta_e: p.delta_e(),
            r_norm,
            l_norm,
            config: cfg.clone(),
            bounds: None,
        });
    }

    let unforced;
    let planned = match forcing {
        Some(_) => p,
        None => {
            unforced = p.without_forcing();
            &unforced
        }
    };
    let plan = match grid {
        Grid::Fresh { origin } => plan_grid(planned, cfg.grid_n, origin),
        Grid::Restart { sol, t_r } => plan_given(planned, sol, t_r),
    };
    let m = plan.times.len();
    let mut tr = Trace {
        n,
        phi: &p.phi,
        times: plan.times.clone(),
        left: vec![ZERO; m * n],
        at: vec![ZERO; m * n],
        right: vec![ZERO; m * n],
    };

    // w(0) = φ(0) - Lφ is the constant of integration.
    let phi0 = p.phi.vector_at(0.0, Side::At);
    let l_phi = p.l.apply_at(&p.phi, 0.0, Side::At);
    let c: Vec<Complex64> = phi0.iter().zip(&l_phi).map(|(a, b)| a - b).collect();

    let qint: Vec<Complex64> = match forcing {
        None => vec![ZERO; m * n],
        Some(q) => {
            let mut out = vec![ZERO; m * n];
            for i in 1..m {
                let dt = tr.times[i] - tr.times[i - 1];
                for k in 0..n {
                    let a = q.value_at(k, tr.times[i - 1], Side::Right);
                    let b = q.value_at(k, tr.times[i], Side::Left);
                    out[i * n + k] = out[(i - 1) * n + k] + 0.5 * dt * (a + b);
                }
            }
            out
        }
    };

    // Node 0: left limit and value come from φ; the right limit from the
    // equation.
    tr.set(0, Side::Left, &p.phi.vector_at(0.0, Side::Left));
    tr.set(0, Side::At, &phi0);
    let mut y0r = p.l.apply_at(&tr, 0.0, Side::Right);
    add_into(&mut y0r, &c);
    tr.set(0, Side::Right, &y0r);

    let mut cum = vec![ZERO; m * n];
    let mut r_right0 = p.r.apply_at(&tr, 0.0, Side::Right);
    let mut picard_iters = Vec::new();
    let mut contraction = Vec::new();
    let mut scale = phi_norm.max(max_norm(&y0r));

    let mut start = 0usize;
    let mut step = 0usize;
    while start + 1 < m {
        let step_end = (step as f64 + 1.0) * t0;
        let mut end = start + 1;
        while end + 1 < m && (tr.times[end + 1] <= step_end || same_time(tr.times[end + 1], step_end)) {
            end += 1;
        }
        if tr.times[end] < step_end && !same_time(tr.times[end], step_end) && end + 1 == m {
            // last (shortened) step
        }
        let idx = start + 1..=end;
        let count = end - start;

        // Neutral part: only reads already computed history.
        let mut lpart = vec![ZERO; count * 3 * n];
        for (off, i) in idx.clone().enumerate() {
            let t = tr.times[i];
            for (s, &side) in SIDES.iter().enumerate() {
                if plan.kinds[i] != NodeKind::Jump && side != Side::At {
                    continue;
                }
                let v = p.l.apply_at(&tr, t, side);
                lpart[(off * 3 + s) * n..(off * 3 + s + 1) * n].copy_from_slice(&v);
            }
            if plan.kinds[i] != NodeKind::Jump {
                let at: Vec<Complex64> = lpart[(off * 3 + 1) * n..(off * 3 + 2) * n].to_vec();
                lpart[(off * 3) * n..(off * 3 + 1) * n].copy_from_slice(&at);
                lpart[(off * 3 + 2) * n..(off * 3 + 3) * n].copy_from_slice(&at);
            }
        }

        // Initial iterate: constant continuation of the last known value.
        let last: Vec<Complex64> = tr.node(start, Side::Right).to_vec();
        for i in idx.clone() {
            for side in SIDES {
                tr.set(i, side, &last);
            }
        }

        let mut iters = 0usize;
        let mut prev_change = f64::INFINITY;
        let mut worst_ratio: f64 = 0.0;
        loop {
            iters += 1;
            let mut r_prev = r_right0.clone();
            let mut new_vals = vec![ZERO; count * 3 * n];
            let mut r_right_last = r_right0.clone();
            for (off, i) in idx.clone().enumerate() {
                let t = tr.times[i];
                let r_left = p.r.apply_at(&tr, t, Side::Left);
                let dt = t - tr.times[i - 1];
                for k in 0..n {
                    cum[i * n + k] = cum[(i - 1) * n + k] + 0.5 * dt * (r_prev[k] + r_left[k]);
                }
                let r_right = if plan.kinds[i] == NodeKind::Grid {
                    r_left
                } else {
                    p.r.apply_at(&tr, t, Side::Right)
                };
                for s in 0..3 {
                    for k in 0..n {
                        new_vals[(off * 3 + s) * n + k] =
                            lpart[(off * 3 + s) * n + k] + c[k] + cum[i * n + k] + qint[i * n + k];
                    }
                }
                r_prev = r_right.clone();
                r_right_last = r_right;
            }
            let mut change: f64 = 0.0;
            for (off, i) in idx.clone().enumerate() {
                for (s, &side) in SIDES.iter().enumerate() {
                    let v = &new_vals[(off * 3 + s) * n..(off * 3 + s + 1) * n];
                    let old = tr.node(i, side);
                    for k in 0..n {
                        change = change.max((v[k] - old[k]).norm());
                    }
                    scale = scale.max(max_norm(v));
                    tr.set(i, side, v);
                }
            }
            let floor = 64.0 * f64::EPSILON * scale.max(1.0);
            if prev_change.is_finite() && prev_change > 1e3 * floor {
                worst_ratio = worst_ratio.max(change / prev_change);
            }
            if change <= cfg.picard_tol || change <= floor {
                r_right0 = r_right_last;
                break;
            }
            if iters >= cfg.picard_max_iter {
                return Err(Error::PicardDiverged {
                    step,
                    iterations: iters,
                    last_change: change,
                    factor: t0 * r_norm,
                });
            }
            prev_change = change;
        }
        picard_iters.push(iters);
        contraction.push(worst_ratio);
        start = end;
        step += 1;
    }

    let y_tail = assemble(&tr, &plan)?;
    let y = p.phi.concat(&y_tail)?;

    let bounds = if forcing.is_none() {
        Some(bounds_report(&tr, &c, &cum, t0, l_norm, r_norm, phi_norm))
    } else {
        None
    };

    Ok(Solution {
        y,
        jump_times: plan.jumps,
        kink_times: plan.kinks,
        grid: plan.times,
        picard_iters,
        contraction,
        t0,
        delta: p.delta,
        delta_e: p.delta_e(),
        r_norm,
        l_norm,
        config: cfg.clone(),
        bounds,
    })
}

/// Sampled representation of the node values; jump and kink nodes become
/// breakpoints.
fn assemble(tr: &Trace<'_>, plan: &GridPlan) -> Result<PiecewiseFn> {
    let n = tr.n;
    let mut breaks = vec![0.0];
    let mut values: Vec<Complex64> = tr.node(0, Side::At).to_vec();
    let mut pieces = Vec::new();
    let mut times = vec![0.0];
    let mut samples: Vec<Complex64> = tr.node(0, Side::Right).to_vec();
    let m = tr.times.len();
    for i in 1..m {
        let t = tr.times[i];
        if plan.kinds[i] == NodeKind::Grid && i + 1 < m {
            times.push(t);
            samples.extend_from_slice(tr.node(i, Side::At));
            continue;
        }
        times.push(t);
        samples.extend_from_slice(tr.node(i, Side::Left));
        pieces.push(Piece::Sampled {
            times: std::mem::take(&mut times),
            values: std::mem::take(&mut samples),
        });
        breaks.push(t);
        values.extend_from_slice(tr.node(i, Side::At));
        times.push(t);
        samples.extend_from_slice(tr.node(i, Side::Right));
    }
    PiecewiseFn::new(n, breaks, pieces, Some(values))
}

fn bounds_report(
    tr: &Trace<'_>,
    c: &[Complex64],
    cum: &[Complex64],
    t0: f64,
    l_norm: f64,
    r_norm: f64,
    phi_norm: f64,
) -> BoundsReport {
    let n = tr.n;
    let q = t0 * r_norm;
    let c0 = (1.0 + l_norm + q * (1.0 + 2.0 * l_norm)) / (1.0 - q);
    let c1 = c0 + l_norm;
    let slack = 1e-12 * (1.0 + phi_norm);

    let mut first_step_sup_w = max_norm(c);
    for (i, &t) in tr.times.iter().enumerate() {
        if t > t0 && !same_time(t, t0) {
            break;
        }
        let w: Vec<Complex64> = (0..n).map(|k| c[k] + cum[i * n + k]).collect();
        first_step_sup_w = first_step_sup_w.max(max_norm(&w));
    }

    let mut running = phi_norm;
    let mut worst: f64 = 0.0;
    let mut global_ok = true;
    for (i, &t) in tr.times.iter().enumerate() {
        for side in SIDES {
            running = running.max(max_norm(tr.node(i, side)));
        }
        let steps = (t / t0 * (1.0 - 1e-12)).ceil().max(0.0) as i32;
        let ct: f64 = (0..=steps).map(|k| c1.powi(k)).sum();
        let bound = ct * phi_norm;
        if running > bound + slack {
            global_ok = false;
        }
        if bound > 0.0 {
            worst = worst.max(running / bound);
        } else if running > 0.0 {
            worst = f64::INFINITY;
        }
    }
    BoundsReport {
        phi_norm,
        c0,
        c1,
        first_step_sup_w,
        first_step_ok: first_step_sup_w <= c0 * phi_norm + slack,
        worst_global_ratio: worst,
        global_ok,
    }
}

/// Solves the homogeneous problem (any forcing in `p` is ignored).
pub fn solve_homogeneous(p: &Problem, cfg: &SolverConfig) -> Result<Solution> {
    run(p, cfg, false, Grid::Fresh { origin: 0.0 })
}

/// Solves with the forcing term of `p`.
pub fn solve_inhomogeneous(p: &Problem, cfg: &SolverConfig) -> Result<Solution> {
    if p.q.is_none() {
        return Err(Error::Precondition("problem has no forcing term".into()));
    }
    run(p, cfg, true, Grid::Fresh { origin: 0.0 })
}

/// The fundamental solution: column `j` starts from the datum that vanishes
/// on `[-h, 0)` with value `e_j` at `0`.
#[derive(Debug, Clone)]
pub struct FundamentalSolution {
    pub columns: Vec<Solution>,
    /// `(t, J)` with `J = X(t) - X(t⁻)` row-major; the entry at `0` is the
    /// identity.
    pub ledger: Vec<(f64, Vec<Complex64>)>,
}

impl FundamentalSolution {
    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    pub fn horizon(&self) -> f64 {
        self.columns[0].horizon()
    }

    /// `X(t)` row-major; entry `(k, j)` is component `k` of column `j`.
    pub fn matrix_at(&self, t: f64, side: Side) -> Vec<Complex64> {
        let n = self.dim();
        let mut out = vec![ZERO; n * n];
        for (j, col) in self.columns.iter().enumerate() {
            for k in 0..n {
                out[k * n + j] = col.y.value_at(k, t, side);
            }
        }
        out
    }

    /// Max over columns of the max-norm of `X_j(t)`.
    pub fn norm_at(&self, t: f64, side: Side) -> f64 {
        self.columns
            .iter()
            .map(|c| max_norm(&c.y.vector_at(t, side)))
            .fold(0.0, f64::max)
    }
}

pub fn fundamental_solution(
    l: &FunctionalMatrix,
    r: &FunctionalMatrix,
    t_end: f64,
    cfg: &SolverConfig,
) -> Result<FundamentalSolution> {
    let n = l.dim();
    let h = l.horizon();
    let solve_col = |j: usize| -> Result<Solution> {
        let datum = PiecewiseFn::fundamental_datum(n, j, h)?;
        let p = Problem::new(l.clone(), r.clone(), datum, t_end)?;
        solve_homogeneous(&p, cfg)
    };
    let columns: Vec<Solution> = {
        #[cfg(feature = "parallel")]
        {
            if cfg.parallel_columns && n > 1 {
                use rayon::prelude::*;
                (0..n).into_par_iter().map(solve_col).collect::<Result<_>>()?
            } else {
                (0..n).map(solve_col).collect::<Result<_>>()?
            }
        }
        #[cfg(not(feature = "parallel"))]
        {
            (0..n).map(solve_col).collect::<Result<_>>()?
        }
    };
    let mut ledger = Vec::new();
    for t in propagate_breakpoints(&[0.0], &l.atom_delays(), t_end) {
        let mut jump = vec![ZERO; n * n];
        for (j, col) in columns.iter().enumerate() {
            for k in 0..n {
                jump[k * n + j] = col.y.value_at(k, t, Side::At) - col.y.value_at(k, t, Side::Left);
            }
        }
        ledger.push((t, jump));
    }
    Ok(FundamentalSolution { columns, ledger })
}

/// `w(t) = y(t) - L y_t` on `[0, T]`, evaluated from the stored solution
/// independently of the stepping.
#[derive(Debug, Clone)]
pub struct SmoothedPart {
    pub w: PiecewiseFn,
    /// Largest one-sided jump of `w` at a breakpoint in `[0, T]`.
    pub max_jump: f64,
    pub max_jump_at: f64,
}

pub fn smoothed_part(sol: &Solution, p: &Problem) -> Result<SmoothedPart> {
    let n = p.dim();
    let t_end = sol.horizon();
    if t_end <= 0.0 {
        let w0: Vec<Complex64> = {
            let phi0 = p.phi.vector_at(0.0, Side::At);
            let lphi = p.l.apply(&p.phi)?;
            phi0.iter().zip(&lphi).map(|(a, b)| a - b).collect()
        };
        return Ok(SmoothedPart {
            w: PiecewiseFn::constant(w0, 0.0, 1.0)?,
            max_jump: 0.0,
            max_jump_at: 0.0,
        });
    }
    let tail = sol.y.restrict(0.0, t_end)?;
    let nodes = tail.nodes(1);
    let breaks = tail.breakpoints();
    let w_of = |t: f64, side: Side| -> Vec<Complex64> {
        let y = sol.y.vector_at(t, side);
        let ly = p.l.apply_at(&sol.y, t, side);
        y.iter().zip(&ly).map(|(a, b)| a - b).collect()
    };
    let mut out_breaks = Vec::new();
    let mut values = Vec::new();
    let mut pieces = Vec::new();
    let mut times = Vec::new();
    let mut samples = Vec::new();
    let mut max_jump: f64 = 0.0;
    let mut max_jump_at = 0.0;
    let mut bi = 0usize;
    for node in &nodes {
        let t = node.t;
        let is_break = bi < breaks.len() && same_time(breaks[bi], t);
        if !is_break {
            times.push(t);
            samples.extend(w_of(t, Side::At));
            continue;
        }
        bi += 1;
        let at = w_of(t, Side::At);
        let left = if out_breaks.is_empty() {
            at.clone()
        } else {
            w_of(t, Side::Left)
        };
        let right = w_of(t, Side::Right);
        let diff = |a: &[Complex64], b: &[Complex64]| a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).norm()));
        let jump = diff(&left, &at).max(if same_time(t, t_end) { 0.0 } else { diff(&right, &at) });
        if jump > max_jump {
            max_jump = jump;
            max_jump_at = t;
        }
        if !out_breaks.is_empty() {
            times.push(t);
            samples.extend(left);
            pieces.push(Piece::Sampled {
                times: std::mem::take(&mut times),
                values: std::mem::take(&mut samples),
            });
        }
        out_breaks.push(t);
        values.extend(at);
        times.push(t);
        samples.extend(right);
    }
    let w = PiecewiseFn::new(n, out_breaks, pieces, Some(values))?;
    Ok(SmoothedPart {
        w,
        max_jump,
        max_jump_at,
    })
}

/// Result of restarting a solution from one of its own segments.
#[derive(Debug, Clone)]
pub struct Restart {
    /// Solution of the restarted problem on `[-h, T - t_r]`.
    pub solution: Solution,
    /// Largest difference to the shifted tail of the original solution
    /// over the restarted grid (all one-sided values).
    pub discrepancy: f64,
}

pub fn semigroup_restart(sol: &Solution, t_r: f64, p: &Problem, cfg: &SolverConfig) -> Result<Restart> {
    let t_end = sol.horizon();
    if !(t_r >= 0.0 && t_r < t_end) {
        return Err(Error::Precondition(format!("restart time {t_r} outside [0, {t_end})")));
    }
    let Some(&t_r) = sol.grid.iter().find(|&&g| same_time(g, t_r)) else {
        return Err(Error::Precondition(format!("restart time {t_r} is not a grid node")));
    };
    let h = p.h();
    let datum = sol.y.segment(t_r, h)?;
    let mut restarted = Problem::new(p.l.clone(), p.r.clone(), datum, t_end - t_r)?;
    if let Some(q) = &p.q {
        restarted = restarted.with_forcing(q.restrict(t_r, t_end)?.shifted(t_r))?;
    }
    let with_forcing = restarted.q.is_some();
    let solution = run(&restarted, cfg, with_forcing, Grid::Restart { sol, t_r })?;
    let mut discrepancy: f64 = 0.0;
    for &s in &solution.grid {
        for side in SIDES {
            let a = solution.y.vector_at(s, side);
            let b = sol.y.vector_at((s + t_r).min(t_end), side);
            for k in 0..a.len() {
                discrepancy = discrepancy.max((a[k] - b[k]).norm());
            }
        }
    }
    Ok(Restart { solution, discrepancy })
}

/// Evaluates `y` on a common list of times; used for comparing solutions
/// computed on different grids.
pub fn sample_on(y: &PiecewiseFn, times: &[f64], side: Side) -> Vec<Vec<Complex64>> {
    times.iter().map(|&t| y.vector_at(t, side)).collect()
}

/// Union of node times of several solutions.
pub fn common_grid(sols: &[&Solution]) -> Vec<f64> {
    sols.iter().fold(Vec::new(), |acc, s| merge_times(&acc, &s.grid))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::ComplexMeasure;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn atom(h: f64, at: f64, w: f64) -> FunctionalMatrix {
        FunctionalMatrix::scalar(h, ComplexMeasure::atom(at, c(w))).unwrap()
    }

    #[test]
    fn propagate_examples() {
        assert_eq!(propagate_breakpoints(&[0.0], &[1.0], 3.5), vec![0.0, 1.0, 2.0, 3.0]);
        let got = propagate_breakpoints(&[-0.5, 0.0], &[1.0, 1.5], 3.0);
        assert_eq!(got, vec![-0.5, 0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0]);
        assert_eq!(propagate_breakpoints(&[0.0, 0.25], &[], 3.0), vec![0.0, 0.25]);
    }

    #[test]
    fn propagate_matches_brute_force_enumeration() {
        let seeds = [-0.3, 0.0, 0.15];
        let delays = [0.7, 1.1];
        let t_end = 4.0;
        let mut brute: Vec<f64> = Vec::new();
        for &s in &seeds {
            for i in 0..10 {
                for j in 0..10 {
                    let t = s + i as f64 * delays[0] + j as f64 * delays[1];
                    if t <= t_end + 1e-12 {
                        brute.push(t);
                    }
                }
            }
        }
        let brute = merge_times(&brute, &[]);
        let got = propagate_breakpoints(&seeds, &delays, t_end);
        assert_eq!(got.len(), brute.len());
        for (a, b) in got.iter().zip(&brute) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn trivial_equation_keeps_constant() {
        let z = FunctionalMatrix::zeros(1, 1.0).unwrap();
        let phi = PiecewiseFn::constant(vec![c(2.5)], -1.0, 0.0).unwrap();
        let p = Problem::new(z.clone(), z, phi, 3.0).unwrap();
        let sol = solve_homogeneous(&p, &SolverConfig::default()).unwrap();
        for &t in &[-1.0, -0.2, 0.0, 1.3, 3.0] {
            assert_eq!(sol.y.eval(t).unwrap(), vec![c(2.5)]);
        }
        assert!(sol.bounds.unwrap().ok());
    }

    #[test]
    fn retarded_example() {
        let p = Problem::new(
            FunctionalMatrix::zeros(1, 1.0).unwrap(),
            atom(1.0, -1.0, -1.0),
            PiecewiseFn::constant(vec![c(1.0)], -1.0, 0.0).unwrap(),
            2.0,
        )
        .unwrap();
        let sol = solve_homogeneous(&p, &SolverConfig::default()).unwrap();
        assert!(sol.y.eval(1.0).unwrap()[0].norm() < 1e-12);
        assert!((sol.y.eval(2.0).unwrap()[0] - c(-0.5)).norm() < 1e-12);
    }

    #[test]
    fn neutral_example() {
        let p = Problem::new(
            atom(1.0, -1.0, 0.5),
            atom(1.0, -1.0, 1.0),
            PiecewiseFn::constant(vec![c(1.0)], -1.0, 0.0).unwrap(),
            2.0,
        )
        .unwrap();
        let sol = solve_homogeneous(&p, &SolverConfig::default()).unwrap();
        assert!((sol.y.eval(1.0).unwrap()[0] - c(2.0)).norm() < 1e-12);
        assert!((sol.y.eval(2.0).unwrap()[0] - c(4.0)).norm() < 1e-12);
        assert!(sol.picard_iters.iter().all(|&k| k <= 3));
    }

    #[test]
    fn fundamental_scalar_neutral() {
        let x = fundamental_solution(
            &atom(1.0, -1.0, 0.5),
            &atom(1.0, -1.0, 1.0),
            2.0,
            &SolverConfig::default(),
        )
        .unwrap();
        let y = &x.columns[0].y;
        assert_eq!(y.eval(-0.5).unwrap()[0], c(0.0));
        assert_eq!(y.left_limit(0.0).unwrap()[0], c(0.0));
        assert_eq!(y.eval(0.0).unwrap()[0], c(1.0));
        assert!((y.eval(1.0).unwrap()[0] - c(1.5)).norm() < 1e-12);
        assert!((y.eval(1.5).unwrap()[0] - c(2.0)).norm() < 1e-12);
        assert!((y.left_limit(2.0).unwrap()[0] - c(2.5)).norm() < 1e-12);
        let (t, j) = &x.ledger[1];
        assert_eq!(*t, 1.0);
        assert!((j[0] - c(0.5)).norm() < 1e-12);
    }

    #[test]
    fn staircase_without_r() {
        let a = 0.6;
        let x = fundamental_solution(
            &atom(1.0, -1.0, a),
            &FunctionalMatrix::zeros(1, 1.0).unwrap(),
            4.0,
            &SolverConfig::default().with_grid_n(64),
        )
        .unwrap();
        for (k, (t, jump)) in x.ledger.iter().enumerate() {
            assert_eq!(*t, k as f64);
            assert!((jump[0].re - a.powi(k as i32)).abs() < 1e-12);
        }
    }

    #[test]
    fn pure_integration_of_forcing() {
        let z = FunctionalMatrix::zeros(1, 1.0).unwrap();
        let phi = PiecewiseFn::zeros(1, -1.0, 0.0).unwrap();
        let q = PiecewiseFn::constant(vec![c(1.0)], 0.0, 2.0).unwrap();
        let p = Problem::new(z.clone(), z, phi, 2.0).unwrap().with_forcing(q).unwrap();
        let sol = solve_inhomogeneous(&p, &SolverConfig::default()).unwrap();
        for &t in &[0.0, 0.3, 1.0, 2.0] {
            assert!((sol.y.eval(t).unwrap()[0] - c(t)).norm() < 1e-13);
        }
        assert!(solve_inhomogeneous(&p.without_forcing(), &SolverConfig::default()).is_err());
    }

    #[test]
    fn smoothed_part_is_continuous_across_neutral_jump() {
        let l = atom(1.0, -1.0, 0.5);
        let r = atom(1.0, -1.0, 1.0);
        let x = fundamental_solution(&l, &r, 3.0, &SolverConfig::default()).unwrap();
        let datum = PiecewiseFn::fundamental_datum(1, 0, 1.0).unwrap();
        let p = Problem::new(l, r, datum, 3.0).unwrap();
        let sp = smoothed_part(&x.columns[0], &p).unwrap();
        assert!(sp.max_jump < 1e-12, "max jump {}", sp.max_jump);
        assert!((sp.w.left_limit(1.0).unwrap()[0] - c(1.0)).norm() < 1e-12);
        assert!((sp.w.eval(1.0).unwrap()[0] - c(1.0)).norm() < 1e-12);
    }

    #[test]
    fn step_length_rules() {
        let p = Problem::new(
            atom(1.0, -1.0, 0.5),
            atom(1.0, -1.0, 4.0),
            PiecewiseFn::constant(vec![c(1.0)], -1.0, 0.0).unwrap(),
            1.0,
        )
        .unwrap();
        assert_eq!(SolverConfig::default().step_length(&p).unwrap(), 0.125);
        assert!(SolverConfig::default().with_t0(0.6).step_length(&p).is_err());
        assert!(SolverConfig::default().with_t0(0.25).step_length(&p).is_err());
    }

    #[test]
    fn not_strictly_delayed_is_refused() {
        let err = Problem::new(
            atom(1.0, 0.0, 0.5),
            FunctionalMatrix::zeros(1, 1.0).unwrap(),
            PiecewiseFn::constant(vec![c(1.0)], -1.0, 0.0).unwrap(),
            1.0,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NotStrictlyDelayed { .. }));
    }

    #[test]
    fn degenerate_horizon_returns_datum() {
        let phi = PiecewiseFn::constant(vec![c(1.0)], -1.0, 0.0).unwrap();
        let z = FunctionalMatrix::zeros(1, 1.0).unwrap();
        let p = Problem::new(z.clone(), z, phi.clone(), 0.0).unwrap();
        assert_eq!(solve_homogeneous(&p, &SolverConfig::default()).unwrap().y, phi);
    }

    #[test]
    fn restart_at_zero_is_exact() {
        let p = Problem::new(
            atom(1.0, -1.0, 0.5),
            atom(1.0, -1.0, 1.0),
            PiecewiseFn::constant(vec![c(1.0)], -1.0, 0.0).unwrap(),
            3.0,
        )
        .unwrap();
        let cfg = SolverConfig::default();
        let sol = solve_homogeneous(&p, &cfg).unwrap();
        let r0 = semigroup_restart(&sol, 0.0, &p, &cfg).unwrap();
        assert!(r0.discrepancy < 1e-13);
        let r1 = semigroup_restart(&sol, 1.0, &p, &cfg).unwrap();
        assert!((r1.solution.y.eval(1.0).unwrap()[0] - c(4.0)).norm() < 1e-6);
        assert!(r1.discrepancy < 1e-10, "{}", r1.discrepancy);
        assert!(semigroup_restart(&sol, 1.0 + 1e-5, &p, &cfg).is_err());
    }
}
