//! Files written by `solve`, `fundamental` and `voc`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndde::voc::{check_growth_bounds, compare_two_paths, growth_fit, GrowthReport, TwoPathComparison};
use ndde::{
    fundamental_solution, smoothed_part, solve_homogeneous, solve_inhomogeneous, BoundsReport, History, PiecewiseFn,
    Problem, Side, Solution, SolverConfig,
};
use serde::Serialize;

use crate::CliError;

/// Polynomial pieces (the datum) are written at this many subintervals.
pub const POLY_SAMPLES: usize = 16;

#[derive(Debug, Clone, Serialize)]
pub struct PicardStats {
    pub steps: usize,
    pub min_iterations: usize,
    pub max_iterations: usize,
    pub mean_iterations: f64,
    /// Largest observed ratio of successive changes.
    pub worst_ratio: f64,
    /// `t0 |R|`, the guaranteed contraction factor.
    pub factor: f64,
}

impl PicardStats {
    pub fn of(sol: &Solution) -> Self {
        let it = &sol.picard_iters;
        PicardStats {
            steps: it.len(),
            min_iterations: it.iter().copied().min().unwrap_or(0),
            max_iterations: it.iter().copied().max().unwrap_or(0),
            mean_iterations: if it.is_empty() {
                0.0
            } else {
                it.iter().sum::<usize>() as f64 / it.len() as f64
            },
            worst_ratio: sol.contraction.iter().copied().fold(0.0, f64::max),
            factor: sol.t0 * sol.r_norm,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SmoothedReport {
    pub max_jump: f64,
    pub at: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub command: &'static str,
    pub n: usize,
    pub t_end: f64,
    pub t0: f64,
    pub delta: f64,
    pub delta_e: f64,
    pub l_norm: f64,
    pub r_norm: f64,
    pub forced: bool,
    pub config: SolverConfig,
    pub nodes: usize,
    pub jump_times: Vec<f64>,
    pub picard: PicardStats,
    /// Present for homogeneous runs.
    pub bounds: Option<BoundsReport>,
    pub smoothed: SmoothedReport,
}

impl RunReport {
    fn new(command: &'static str, sol: &Solution, p: &Problem) -> Result<Self, CliError> {
        let sm = smoothed_part(sol, p)?;
        Ok(RunReport {
            command,
            n: p.dim(),
            t_end: p.horizon(),
            t0: sol.t0,
            delta: sol.delta,
            delta_e: sol.delta_e,
            l_norm: sol.l_norm,
            r_norm: sol.r_norm,
            forced: p.forcing().is_some(),
            config: sol.config.clone(),
            nodes: sol.grid.len(),
            jump_times: sol.jump_times.clone(),
            picard: PicardStats::of(sol),
            bounds: sol.bounds.clone(),
            smoothed: SmoothedReport {
                max_jump: sm.max_jump,
                at: sm.max_jump_at,
            },
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LedgerEntry {
    pub t: f64,
    /// `X(t) - X(t⁻)` row-major as `[re, im]` pairs.
    pub jump: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FundamentalReport {
    pub command: &'static str,
    pub n: usize,
    pub t_end: f64,
    pub columns: Vec<RunReport>,
    pub ledger: Vec<LedgerEntry>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GrowthSummary {
    pub c: f64,
    pub gamma: f64,
    pub window: (f64, f64),
    pub report: Option<GrowthReport>,
    /// Set when the fitted constants fail one of the inequalities.
    pub violation: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct VocReport {
    pub command: &'static str,
    pub homogeneous: RunReport,
    pub two_path: TwoPathComparison,
    pub growth: GrowthSummary,
}

pub fn write_csv(path: &Path, y: &PiecewiseFn) -> Result<(), CliError> {
    let file = BufWriter::new(File::create(path)?);
    y.write_csv(file, POLY_SAMPLES, 0.0)
        .map_err(|e| CliError::Run(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut file = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut file, value).map_err(|e| CliError::Run(e.to_string()))?;
    writeln!(file)?;
    file.flush()?;
    Ok(())
}

/// Homogeneous solve, or inhomogeneous when the problem has a forcing term.
pub fn solve(p: &Problem, cfg: &SolverConfig) -> Result<Solution, CliError> {
    Ok(match p.forcing() {
        Some(_) => solve_inhomogeneous(p, cfg)?,
        None => solve_homogeneous(p, cfg)?,
    })
}

/// Writes `solution.csv` and `report.json`; returns the written paths.
pub fn cmd_solve(p: &Problem, cfg: &SolverConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    fs::create_dir_all(out)?;
    let sol = solve(p, cfg)?;
    let csv = out.join("solution.csv");
    write_csv(&csv, &sol.y)?;
    let report = out.join("report.json");
    write_json(&report, &RunReport::new("solve", &sol, p)?)?;
    Ok(vec![csv, report])
}

/// Writes `column_<j>.csv` for every column (numbered from 1) and a report
/// with the jump ledger.
pub fn cmd_fundamental(p: &Problem, cfg: &SolverConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    fs::create_dir_all(out)?;
    let x = fundamental_solution(p.l(), p.r(), p.horizon(), cfg)?;
    let mut paths = Vec::new();
    let mut columns = Vec::new();
    for (j, col) in x.columns.iter().enumerate() {
        let path = out.join(format!("column_{}.csv", j + 1));
        write_csv(&path, &col.y)?;
        paths.push(path);
        let datum = PiecewiseFn::fundamental_datum(p.dim(), j, p.h())?;
        columns.push(RunReport::new(
            "fundamental",
            col,
            &p.without_forcing().with_phi(datum)?,
        )?);
    }
    let ledger = x
        .ledger
        .iter()
        .map(|(t, jump)| LedgerEntry {
            t: *t,
            jump: jump.iter().map(|z| [z.re, z.im]).collect(),
        })
        .collect();
    let report = out.join("report.json");
    write_json(
        &report,
        &FundamentalReport {
            command: "fundamental",
            n: p.dim(),
            t_end: p.horizon(),
            columns,
            ledger,
        },
    )?;
    paths.push(report);
    Ok(paths)
}

/// Writes `voc.csv` with `v`, `p`, `w = v + p` and the growth bound on the
/// nodes of `v`, and a report with the two-path comparison.
pub fn cmd_voc(p: &Problem, cfg: &SolverConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let Some(q) = p.forcing() else {
        return Err(CliError::Parse(
            "invalid scenario key `q`: the voc command needs a forcing term".into(),
        ));
    };
    fs::create_dir_all(out)?;
    let (two_path, voc, _) = compare_two_paths(p, cfg)?;
    let phi_norm = p.phi().sup_norm();
    let est = growth_fit(&voc.x, Some((0.0, p.horizon())))?.covering_trajectory(&voc.v.y, phi_norm);
    let (report, violation) = match check_growth_bounds(&est, &voc.x, &voc.w, Some(q), phi_norm) {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e.to_string())),
    };

    let n = p.dim();
    let times = voc.v.grid.clone();
    let rhs = est.forced_bound(n, Some(q), phi_norm, &times);
    let path = out.join("voc.csv");
    let mut file = BufWriter::new(File::create(&path)?);
    let mut header = vec!["t".to_string(), "kind".to_string()];
    for name in ["v", "p", "w"] {
        for k in 1..=n {
            header.push(format!("{name}_re{k}"));
            header.push(format!("{name}_im{k}"));
        }
    }
    header.push("bound_rhs".into());
    writeln!(file, "{}", header.join(","))?;
    for (&t, b) in times.iter().zip(&rhs) {
        let row = |side: Side| -> Vec<String> {
            let mut out = Vec::new();
            for f in [&voc.v.y, &voc.p, &voc.w] {
                for z in f.vector_at(t, side) {
                    out.push(format!("{}", z.re));
                    out.push(format!("{}", z.im));
                }
            }
            out
        };
        let at = row(Side::At);
        if t > 0.0 {
            let left = row(Side::Left);
            if left != at {
                writeln!(file, "{t},left,{},{b}", left.join(","))?;
            }
        }
        writeln!(file, "{t},value,{},{b}", at.join(","))?;
    }
    file.flush()?;

    let report_path = out.join("report.json");
    let report = VocReport {
        command: "voc",
        homogeneous: RunReport::new("voc", &voc.v, &p.without_forcing())?,
        two_path,
        growth: GrowthSummary {
            c: est.c,
            gamma: est.gamma,
            window: est.window,
            report,
            violation,
        },
    };
    write_json(&report_path, &report)?;
    Ok(vec![path, report_path])
}
