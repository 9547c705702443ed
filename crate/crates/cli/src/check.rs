//! Property suites run by `ndde check` against a scenario.

use clap::ValueEnum;
use ndde::oracle::{oracle_solve, SymbolicPiecewise};
use ndde::voc::{
    check_growth_bounds, commutation_check, compare_two_paths, growth_fit, observed_order, CommutationInput,
    CommutationVariant,
};
use ndde::{
    fundamental_solution, max_norm, semigroup_restart, smoothed_part, solve_homogeneous, Complex64, ComplexMeasure,
    History, Piece, PiecewiseFn, Poly, Problem, Side, Solution, SolverConfig,
};

use crate::output::solve;
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    /// Solutions depend linearly on the datum.
    Linearity,
    /// Restarting from a segment reproduces the tail.
    Restart,
    /// First-step and global a-priori bounds.
    Bounds,
    /// The neutral functional ignores data supported near zero.
    StrictDelay,
    /// The smoothed part `y - L y_t` is continuous.
    Smoothed,
    /// Functionals commute with convolution integrals.
    Commutation,
    /// Variation of constants agrees with the direct inhomogeneous solve.
    Voc,
    /// Exponential growth bounds with fitted constants.
    Growth,
    /// Mollified data give converging solutions.
    Dependence,
    /// Agreement with the exact solution for atom-only problems.
    Oracle,
}

impl Suite {
    pub const ALL: [Suite; 10] = [
        Suite::Linearity,
        Suite::Restart,
        Suite::Bounds,
        Suite::StrictDelay,
        Suite::Smoothed,
        Suite::Commutation,
        Suite::Voc,
        Suite::Growth,
        Suite::Dependence,
        Suite::Oracle,
    ];

    pub fn name(self) -> String {
        self.to_possible_value()
            .map(|v| v.get_name().to_string())
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    Skip,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub suite: Suite,
    pub status: Status,
    pub detail: String,
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = match self.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skip => "SKIP",
        };
        write!(f, "{tag} {}: {}", self.suite.name(), self.detail)
    }
}

fn verdict(ok: bool, detail: String) -> (Status, String) {
    (if ok { Status::Pass } else { Status::Fail }, detail)
}

fn skip(why: &str) -> (Status, String) {
    (Status::Skip, why.to_string())
}

type Check = Result<(Status, String), CliError>;

/// Shared state for one scenario.
struct Ctx<'a> {
    p: &'a Problem,
    cfg: &'a SolverConfig,
    sol: Solution,
}

/// Runs the selected suites. A suite that errors counts as a failure, and
/// so does every suite when the scenario cannot be solved at all.
pub fn run_suites(p: &Problem, cfg: &SolverConfig, suites: &[Suite]) -> Vec<Outcome> {
    let sol = match solve(p, cfg) {
        Ok(sol) => sol,
        Err(e) => {
            return suites
                .iter()
                .map(|&suite| Outcome {
                    suite,
                    status: Status::Fail,
                    detail: format!("solve failed: {e}"),
                })
                .collect()
        }
    };
    let ctx = Ctx { p, cfg, sol };
    suites
        .iter()
        .map(|&suite| {
            let res = match suite {
                Suite::Linearity => linearity(&ctx),
                Suite::Restart => restart(&ctx),
                Suite::Bounds => bounds(&ctx),
                Suite::StrictDelay => strict_delay(&ctx),
                Suite::Smoothed => smoothed(&ctx),
                Suite::Commutation => commutation(&ctx),
                Suite::Voc => two_path(&ctx),
                Suite::Growth => growth(&ctx),
                Suite::Dependence => dependence(&ctx),
                Suite::Oracle => oracle(&ctx),
            };
            let (status, detail) = res.unwrap_or_else(|e| (Status::Fail, format!("error: {e}")));
            Outcome { suite, status, detail }
        })
        .collect()
}

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Largest difference over the nodes of `grid`, all one-sided values.
fn node_diff(grid: &[f64], a: &PiecewiseFn, b: &PiecewiseFn) -> (f64, f64) {
    let mut diff: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for &t in grid {
        for side in [Side::Left, Side::At, Side::Right] {
            let (u, v) = (a.vector_at(t, side), b.vector_at(t, side));
            scale = scale.max(max_norm(&u)).max(max_norm(&v));
            diff = diff.max(u.iter().zip(&v).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max));
        }
    }
    (diff, scale)
}

fn linearity(ctx: &Ctx<'_>) -> Check {
    let p = ctx.p.without_forcing();
    let n = p.dim();
    let phi = p.phi();
    // A second datum on the same breakpoints, not a multiple of the first.
    let polys = (0..phi.breakpoints().len() - 1)
        .map(|k| {
            (0..n)
                .map(|j| Poly::new(vec![c(0.3 + 0.1 * k as f64, -0.2 * j as f64), c(-0.5, 0.25)]))
                .collect()
        })
        .collect();
    let g = PiecewiseFn::from_polys(phi.breakpoints().to_vec(), polys)?.with_value(0.0, vec![c(0.7, -0.1); n])?;
    let (a, b) = (c(0.7, -0.2), c(-1.3, 0.4));
    let combo = PiecewiseFn::linear_combination(a, phi, b, &g)?;
    let sf = solve_homogeneous(&p, ctx.cfg)?;
    let sg = solve_homogeneous(&p.with_phi(g)?, ctx.cfg)?;
    let sc = solve_homogeneous(&p.with_phi(combo)?, ctx.cfg)?;
    let expect = PiecewiseFn::linear_combination(a, &sf.y, b, &sg.y)?;
    let (diff, scale) = node_diff(&sc.grid, &sc.y, &expect);
    let rel = diff / scale.max(1e-300);
    Ok(verdict(rel <= 1e-10, format!("relative deviation {rel:.2e} (≤ 1e-10)")))
}

fn restart(ctx: &Ctx<'_>) -> Check {
    let t_end = ctx.p.horizon();
    if t_end <= 0.0 {
        return Ok(skip("empty horizon"));
    }
    let mid = ctx
        .sol
        .grid
        .iter()
        .copied()
        .min_by(|a, b| (a - 0.5 * t_end).abs().total_cmp(&(b - 0.5 * t_end).abs()))
        .unwrap_or(0.0);
    let mut worst: f64 = 0.0;
    for t_r in [0.0, mid] {
        worst = worst.max(semigroup_restart(&ctx.sol, t_r, ctx.p, ctx.cfg)?.discrepancy);
    }
    let limit = 5.0 * ctx.cfg.picard_tol;
    Ok(verdict(
        worst <= limit,
        format!("restarts at 0 and {mid}: discrepancy {worst:.2e} (≤ {limit:.1e})"),
    ))
}

fn bounds(ctx: &Ctx<'_>) -> Check {
    let p = ctx.p.without_forcing();
    let mut runs = vec![solve_homogeneous(&p, ctx.cfg)?];
    runs.extend(fundamental_solution(p.l(), p.r(), p.horizon(), ctx.cfg)?.columns);
    let mut ok = true;
    let (mut first, mut global): (f64, f64) = (0.0, 0.0);
    let mut c0 = 0.0;
    for b in runs.iter().filter_map(|s| s.bounds.as_ref()) {
        ok &= b.ok();
        c0 = b.c0;
        if b.phi_norm > 0.0 {
            first = first.max(b.first_step_sup_w / (b.c0 * b.phi_norm));
        }
        global = global.max(b.worst_global_ratio);
    }
    Ok(verdict(
        ok,
        format!(
            "{} runs, c0 = {c0:.4}; worst sup|w|/(c0|φ|) = {first:.3}, worst sup|y|/(c(t)|φ|) = {global:.3} (≤ 1)",
            runs.len()
        ),
    ))
}

fn strict_delay(ctx: &Ctx<'_>) -> Check {
    let p = ctx.p;
    let (n, h) = (p.dim(), p.h());
    let de = p.delta_e();
    let mut worst: f64 = 0.0;
    for j in 0..n {
        let step = PiecewiseFn::fundamental_datum(n, j, h)?;
        worst = worst.max(max_norm(&p.l().apply(&step)?));
        let inner = (0..n)
            .map(|k| Poly::new(vec![c(1.0, 0.5 * k as f64), c(-2.0, 1.0), c(3.0, 0.0)]))
            .collect();
        let near_zero = PiecewiseFn::from_polys(vec![-h, -de, 0.0], vec![vec![Poly::zero(); n], inner])?
            .with_value(-de, vec![c(0.0, 0.0); n])?
            .with_value(0.0, vec![c(-1.0, 2.0); n])?;
        worst = worst.max(max_norm(&p.l().apply(&near_zero)?));
    }
    Ok(verdict(
        worst <= 1e-14,
        format!("max |Lψ| = {worst:.2e} for ψ supported in (-{de}, 0] (≤ 1e-14)"),
    ))
}

fn smoothed(ctx: &Ctx<'_>) -> Check {
    let sm = smoothed_part(&ctx.sol, ctx.p)?;
    let limit = 10.0 * ctx.cfg.picard_tol;
    Ok(verdict(
        sm.max_jump <= limit,
        format!("max jump {:.2e} at t = {} (≤ {limit:.1e})", sm.max_jump, sm.max_jump_at),
    ))
}

fn commutation(ctx: &Ctx<'_>) -> Check {
    let p = ctx.p;
    let (n, h, t_end) = (p.dim(), p.h(), p.horizon());
    if t_end <= 0.0 {
        return Ok(skip("empty horizon"));
    }
    // The first rows of L and R together exercise atoms and densities alike.
    let lambda = p
        .l()
        .row(0)
        .iter()
        .zip(p.r().row(0))
        .map(|(a, b)| a.plus(&b))
        .collect::<ndde::Result<Vec<ComplexMeasure>>>()?;
    let f = PiecewiseFn::fundamental_datum(n, 0, h)?.concat(&PiecewiseFn::constant(
        (0..n).map(|k| c(1.0 / (k + 1) as f64, 0.0)).collect(),
        0.0,
        t_end,
    )?)?;
    let base = CommutationInput {
        lambda: &lambda,
        h,
        f: &f,
        q: None,
        a: 0.0,
    };
    let t = 0.85 * t_end;
    let d_conv = commutation_check(&base, t, 1024, CommutationVariant::Convolution)?.diff;
    let d_run = commutation_check(&base, t, 1024, CommutationVariant::RunningIntegral)?.diff;
    let q = PiecewiseFn::scalar(vec![0.0, t_end], vec![Poly::from_real(&[1.0, 0.8, -0.3])])?;
    let smooth = CommutationInput {
        q: Some(&q),
        ..base.clone()
    };
    let errs = [256, 512, 1024, 2048]
        .iter()
        .map(|&g| Ok(commutation_check(&smooth, t, g, CommutationVariant::Convolution)?.diff))
        .collect::<Result<Vec<f64>, CliError>>()?;
    let close = d_conv <= 1e-8 && d_run <= 1e-8;
    let detail = format!("|lhs-rhs| = {d_conv:.2e} (convolution), {d_run:.2e} (running integral) at t = {t} (≤ 1e-8)");
    // Quadrature that is exact up to rounding has no observable order.
    if errs.iter().all(|&e| e <= 1e-12) {
        return Ok(verdict(close, format!("{detail}; smooth weight exact to rounding")));
    }
    let order = observed_order(&errs);
    Ok(verdict(
        close && order >= 1.8,
        format!("{detail}; order {order:.2} (≥ 1.8)"),
    ))
}

fn two_path(ctx: &Ctx<'_>) -> Check {
    if ctx.p.forcing().is_none() {
        return Ok(skip("scenario has no forcing term"));
    }
    if ctx.p.horizon() <= 0.0 {
        return Ok(skip("empty horizon"));
    }
    let (cmp, voc, _) = compare_two_paths(ctx.p, ctx.cfg)?;
    let p0 = max_norm(&voc.p.vector_at(0.0, Side::At));
    Ok(verdict(
        cmp.sup_diff <= 1e-4 && p0 == 0.0,
        format!(
            "sup |y - (v + p)| = {:.2e} at t = {} (≤ 1e-4); |p(0)| = {p0:e}",
            cmp.sup_diff, cmp.at
        ),
    ))
}

fn growth(ctx: &Ctx<'_>) -> Check {
    let p = ctx.p;
    let t_end = p.horizon();
    if t_end <= 0.0 {
        return Ok(skip("empty horizon"));
    }
    let phi_norm = p.phi().sup_norm();
    let (x, v, w) = if p.forcing().is_some() {
        let (_, voc, _) = compare_two_paths(p, ctx.cfg)?;
        (voc.x, voc.v, voc.w)
    } else {
        let x = fundamental_solution(p.l(), p.r(), t_end, ctx.cfg)?;
        let v = solve_homogeneous(p, ctx.cfg)?;
        let w = v.y.restrict(0.0, t_end)?;
        (x, v, w)
    };
    let est = growth_fit(&x, Some((0.0, t_end)))?.covering_trajectory(&v.y, phi_norm);
    Ok(match check_growth_bounds(&est, &x, &w, p.forcing(), phi_norm) {
        Ok(r) => verdict(
            true,
            format!(
                "c = {:.3}, γ = {:.3}; margins {:.3e} (X) and {:.3e} (y) ≥ 0",
                est.c, est.gamma, r.x_margin, r.w_margin
            ),
        ),
        Err(e) => verdict(false, format!("c = {:.3}, γ = {:.3}: {e}", est.c, est.gamma)),
    })
}

fn dependence(ctx: &Ctx<'_>) -> Check {
    let p = ctx.p.without_forcing();
    let (n, h, t_end) = (p.dim(), p.h(), p.horizon());
    if t_end <= 0.0 {
        return Ok(skip("empty horizon"));
    }
    let datum = PiecewiseFn::fundamental_datum(n, 0, h)?;
    let x = solve_homogeneous(&p.with_phi(datum.clone())?, ctx.cfg)?;
    // Sample in the second half of the horizon, away from the jump set.
    let mut cands: Vec<(f64, f64)> = (32..64)
        .map(|i| {
            let t = t_end * i as f64 / 64.0;
            let gap = x
                .jump_times
                .iter()
                .map(|&j| (t - j).abs())
                .fold(f64::INFINITY, f64::min);
            (gap, t)
        })
        .collect();
    cands.sort_by(|a, b| b.0.total_cmp(&a.0));
    let times: Vec<f64> = cands.iter().take(2).map(|&(_, t)| t).collect();
    let ms = [4usize, 16, 64, 256];
    let mut errs = Vec::new();
    for &m in &ms {
        let ym = solve_homogeneous(&p.with_phi(datum.approximate_by_continuous(m)?)?, ctx.cfg)?;
        let mut e: f64 = 0.0;
        for &t in &times {
            let (a, b) = (ym.y.eval(t)?, x.y.eval(t)?);
            e = e.max(a.iter().zip(&b).map(|(u, v)| (u - v).norm()).fold(0.0, f64::max));
        }
        errs.push(e);
    }
    let settled = errs[1..].iter().all(|&e| e <= 1e-12);
    let decreasing = settled || (errs[1] > errs[2] && errs[2] > errs[3]);
    Ok(verdict(
        decreasing && errs[3] <= 1e-2,
        format!(
            "errors at m = 4, 16, 64, 256: {:.2e}, {:.2e}, {:.2e}, {:.2e} at t = {:?}; decreasing from 16: {decreasing}; last ≤ 1e-2",
            errs[0], errs[1], errs[2], errs[3], times
        ),
    ))
}

fn symbolic(f: &PiecewiseFn) -> Option<SymbolicPiecewise> {
    let polys = f
        .pieces()
        .iter()
        .map(|piece| match piece {
            Piece::Poly(p) => Some(p.clone()),
            Piece::Sampled { .. } => None,
        })
        .collect::<Option<Vec<_>>>()?;
    let values = (0..f.breakpoints().len()).map(|i| f.break_value(i).to_vec()).collect();
    SymbolicPiecewise::new(f.breakpoints().to_vec(), polys, Some(values)).ok()
}

fn oracle(ctx: &Ctx<'_>) -> Check {
    let p = ctx.p;
    if !(p.l().is_atomic() && p.r().is_atomic()) {
        return Ok(skip("the exact solver handles point delays only"));
    }
    let Some(phi) = symbolic(p.phi()) else {
        return Ok(skip("datum is not piecewise polynomial"));
    };
    let q = p.forcing().and_then(symbolic);
    let exact = match oracle_solve(p.l(), p.r(), &phi, q.as_ref(), p.horizon()) {
        Ok(e) => e,
        Err(ndde::Error::Precondition(why)) => return Ok(skip(&why)),
        Err(e) => return Err(e.into()),
    };
    let t_end = p.horizon();
    let mut worst: f64 = 0.0;
    for i in 0..=300 {
        let t = t_end * i as f64 / 300.0;
        let (a, b) = (ctx.sol.y.eval(t)?, exact.eval(t)?);
        worst = worst.max(a.iter().zip(&b).map(|(u, v)| (u - v).norm()).fold(0.0, f64::max));
    }
    Ok(verdict(
        worst <= 1e-4,
        format!("max deviation {worst:.2e} over 301 times in [0, {t_end}] (≤ 1e-4)"),
    ))
}
