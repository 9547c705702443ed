//! Scenario files in TOML.
//!
//! ```toml
//! n = 1
//! h = 1.0
//! t_end = 3.0
//!
//! [[L]]
//! atoms = [{ at = -1.0, re = 0.5 }]
//!
//! [[R]]
//! row = 0
//! col = 0
//! atoms = [{ at = -1.0, re = 1.0, im = 0.0 }]
//! densities = [{ from = -1.0, to = -0.5, coeffs_re = [0.2, 0.1] }]
//!
//! [phi]
//! pieces = [{ from = -1.0, to = 0.0, coeffs_re = [[1.0]] }]
//! values = [{ t = 0.0, re = [2.0] }]
//!
//! [q]
//! pieces = [{ from = 0.0, to = 3.0, coeffs_re = [[1.0]] }]
//!
//! [solver]
//! grid_n = 512
//! ```
//!
//! Polynomial coefficients are in ascending order in the local variable
//! `t - from`. Matrix entries are indexed from 0 and default to zero; `row`
//! and `col` may be omitted for scalar problems. Imaginary parts default to
//! zero.

use std::path::Path;

use ndde::{
    same_time, Atom, Complex64, ComplexMeasure, DensityPiece, FunctionalMatrix, PiecewiseFn, Poly, Problem,
    SolverConfig,
};
use serde::Deserialize;

use crate::{CliError, Overrides};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub n: usize,
    pub h: f64,
    pub t_end: f64,
    #[serde(rename = "L", default)]
    pub l: Vec<EntrySpec>,
    #[serde(rename = "R", default)]
    pub r: Vec<EntrySpec>,
    pub phi: FunctionSpec,
    #[serde(default)]
    pub q: Option<FunctionSpec>,
    #[serde(default)]
    pub solver: SolverSpec,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntrySpec {
    #[serde(default)]
    pub row: usize,
    #[serde(default)]
    pub col: usize,
    #[serde(default)]
    pub atoms: Vec<AtomSpec>,
    #[serde(default)]
    pub densities: Vec<DensitySpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomSpec {
    pub at: f64,
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensitySpec {
    pub from: f64,
    pub to: f64,
    pub coeffs_re: Vec<f64>,
    #[serde(default)]
    pub coeffs_im: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionSpec {
    pub pieces: Vec<PieceSpec>,
    /// Pointwise values at breakpoints that differ from the right limit.
    #[serde(default)]
    pub values: Vec<ValueSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PieceSpec {
    pub from: f64,
    pub to: f64,
    /// One coefficient list per component.
    pub coeffs_re: Vec<Vec<f64>>,
    #[serde(default)]
    pub coeffs_im: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValueSpec {
    pub t: f64,
    pub re: Vec<f64>,
    #[serde(default)]
    pub im: Vec<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    pub grid_n: Option<usize>,
    pub t0: Option<f64>,
    pub tol: Option<f64>,
    pub parallel_columns: Option<bool>,
}

fn bad(key: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Parse(format!("invalid scenario key `{key}`: {msg}"))
}

fn complex_list(re: &[f64], im: &[f64]) -> Vec<Complex64> {
    (0..re.len().max(im.len()))
        .map(|i| Complex64::new(re.get(i).copied().unwrap_or(0.0), im.get(i).copied().unwrap_or(0.0)))
        .collect()
}

impl Scenario {
    pub fn from_toml(src: &str) -> Result<Self, CliError> {
        let de = toml::Deserializer::parse(src).map_err(|e| CliError::Parse(e.to_string()))?;
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            bad(&path, e.into_inner())
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let src = std::fs::read_to_string(path)
            .map_err(|e| CliError::Parse(format!("cannot read scenario {}: {e}", path.display())))?;
        Self::from_toml(&src)
    }

    fn matrix(&self, key: &str, specs: &[EntrySpec]) -> Result<FunctionalMatrix, CliError> {
        let n = self.n;
        let mut entries = vec![ComplexMeasure::zero(); n * n];
        let mut seen = vec![false; n * n];
        for (i, e) in specs.iter().enumerate() {
            if e.row >= n {
                return Err(bad(
                    &format!("{key}[{i}].row"),
                    format!("{} is not below n = {n}", e.row),
                ));
            }
            if e.col >= n {
                return Err(bad(
                    &format!("{key}[{i}].col"),
                    format!("{} is not below n = {n}", e.col),
                ));
            }
            let k = e.row * n + e.col;
            if std::mem::replace(&mut seen[k], true) {
                return Err(bad(
                    &format!("{key}[{i}]"),
                    format!("entry ({}, {}) given twice", e.row, e.col),
                ));
            }
            let atoms = e
                .atoms
                .iter()
                .map(|a| Atom {
                    at: a.at,
                    weight: Complex64::new(a.re, a.im),
                })
                .collect();
            let density = e
                .densities
                .iter()
                .map(|d| DensityPiece {
                    from: d.from,
                    to: d.to,
                    poly: Poly::new(complex_list(&d.coeffs_re, &d.coeffs_im)),
                })
                .collect();
            let mu = ComplexMeasure::new(atoms, density).map_err(|err| bad(&format!("{key}[{i}]"), err))?;
            // Validates the support against the horizon entry by entry.
            FunctionalMatrix::scalar(self.h, mu.clone()).map_err(|err| bad(&format!("{key}[{i}]"), err))?;
            entries[k] = mu;
        }
        FunctionalMatrix::new(n, self.h, entries).map_err(|err| bad(key, err))
    }

    fn function(&self, key: &str, spec: &FunctionSpec, lo: f64, hi: f64) -> Result<PiecewiseFn, CliError> {
        let n = self.n;
        if spec.pieces.is_empty() {
            return Err(bad(&format!("{key}.pieces"), "no pieces"));
        }
        let mut breaks = vec![lo];
        let mut polys = Vec::with_capacity(spec.pieces.len());
        for (i, p) in spec.pieces.iter().enumerate() {
            let at = |field: &str| format!("{key}.pieces[{i}].{field}");
            let expected = *breaks.last().unwrap();
            if !same_time(p.from, expected) {
                return Err(bad(
                    &at("from"),
                    format!("pieces must tile [{lo}, {hi}]; expected {expected}"),
                ));
            }
            if p.to <= p.from || p.to.is_nan() {
                return Err(bad(&at("to"), format!("{} does not exceed from = {}", p.to, p.from)));
            }
            if p.coeffs_re.len() != n {
                return Err(bad(
                    &at("coeffs_re"),
                    format!("{} components for n = {n}", p.coeffs_re.len()),
                ));
            }
            if !p.coeffs_im.is_empty() && p.coeffs_im.len() != n {
                return Err(bad(
                    &at("coeffs_im"),
                    format!("{} components for n = {n}", p.coeffs_im.len()),
                ));
            }
            polys.push(
                (0..n)
                    .map(|k| {
                        let im = p.coeffs_im.get(k).map_or(&[][..], Vec::as_slice);
                        Poly::new(complex_list(&p.coeffs_re[k], im))
                    })
                    .collect(),
            );
            breaks.push(p.to);
        }
        if !same_time(*breaks.last().unwrap(), hi) {
            return Err(bad(
                &format!("{key}.pieces[{}].to", spec.pieces.len() - 1),
                format!("pieces must tile [{lo}, {hi}]"),
            ));
        }
        *breaks.last_mut().unwrap() = hi;
        let mut f = PiecewiseFn::from_polys(breaks, polys).map_err(|err| bad(&format!("{key}.pieces"), err))?;
        for (i, v) in spec.values.iter().enumerate() {
            let at = format!("{key}.values[{i}]");
            if v.re.len() != n || (!v.im.is_empty() && v.im.len() != n) {
                return Err(bad(&at, format!("value needs {n} components")));
            }
            if !f.breakpoints().iter().any(|&b| same_time(b, v.t)) {
                return Err(bad(&format!("{at}.t"), format!("{} is not a breakpoint", v.t)));
            }
            f = f
                .with_value(v.t, complex_list(&v.re, &v.im))
                .map_err(|err| bad(&at, err))?;
        }
        Ok(f)
    }

    /// Builds the problem. Malformed entries are reported by key; a neutral
    /// functional that is not strictly delayed has its own error.
    pub fn problem(&self) -> Result<Problem, CliError> {
        if self.n == 0 {
            return Err(bad("n", "must be positive"));
        }
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(bad("h", "must be positive and finite"));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(bad("t_end", "must be non-negative and finite"));
        }
        let l = self.matrix("L", &self.l)?;
        let r = self.matrix("R", &self.r)?;
        let phi = self.function("phi", &self.phi, -self.h, 0.0)?;
        let p = Problem::new(l, r, phi, self.t_end).map_err(|err| match err {
            ndde::Error::NotStrictlyDelayed { .. } => CliError::from(err),
            err => bad("phi", err),
        })?;
        match &self.q {
            None => Ok(p),
            Some(q) if self.t_end > 0.0 => {
                let q = self.function("q", q, 0.0, self.t_end)?;
                p.with_forcing(q).map_err(|err| bad("q", err))
            }
            Some(_) => Err(bad("q", "forcing needs a positive t_end")),
        }
    }

    /// Defaults, then the `[solver]` table, then `overrides`.
    pub fn solver_config(&self, overrides: &Overrides) -> SolverConfig {
        let mut cfg = SolverConfig::default();
        let s = &self.solver;
        if let Some(g) = overrides.grid_n.or(s.grid_n) {
            cfg.grid_n = g;
        }
        if let Some(t0) = overrides.t0.or(s.t0) {
            cfg.t0 = Some(t0);
        }
        if let Some(tol) = overrides.tol.or(s.tol) {
            cfg.picard_tol = tol;
        }
        if let Some(pc) = overrides.parallel_columns.or(s.parallel_columns) {
            cfg.parallel_columns = pc;
        }
        cfg
    }
}
