//! Complex Borel measures on `[-h, 0]` made of point masses and polynomial
//! densities, and matrices of them acting on ℂⁿ-valued functions.
//!
//! Integration against a point mass reads the stored pointwise value of the
//! integrand, so a functional built from these measures acts on
//! discontinuous data exactly as its extension to bounded Borel functions
//! does.

use crate::error::{Error, Result};
use crate::history::{History, Side};
use crate::poly::Poly;
use crate::pwfun::PiecewiseFn;
use crate::quad;
use num_complex::Complex64;

/// Highest polynomial degree accepted for a density piece.
pub const MAX_DENSITY_DEGREE: usize = 8;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atom {
    pub at: f64,
    pub weight: Complex64,
}

/// Density `poly(t - from)` on `[from, to]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityPiece {
    pub from: f64,
    pub to: f64,
    pub poly: Poly,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ComplexMeasure {
    atoms: Vec<Atom>,
    density: Vec<DensityPiece>,
}

impl ComplexMeasure {
    pub fn new(mut atoms: Vec<Atom>, mut density: Vec<DensityPiece>) -> Result<Self> {
        atoms.sort_by(|a, b| a.at.total_cmp(&b.at));
        if atoms.iter().any(|a| !a.at.is_finite() || !a.weight.is_finite()) {
            return Err(Error::InvalidMeasure("non-finite atom".into()));
        }
        if atoms.windows(2).any(|w| w[0].at == w[1].at) {
            return Err(Error::InvalidMeasure("atom locations must be distinct".into()));
        }
        density.sort_by(|a, b| a.from.total_cmp(&b.from));
        for d in &density {
            if !(d.from.is_finite() && d.to.is_finite() && d.from < d.to) {
                return Err(Error::InvalidMeasure(format!(
                    "density interval [{}, {}] is empty or not finite",
                    d.from, d.to
                )));
            }
            if d.poly.degree() > MAX_DENSITY_DEGREE {
                return Err(Error::InvalidMeasure(format!(
                    "density degree {} exceeds {MAX_DENSITY_DEGREE}",
                    d.poly.degree()
                )));
            }
        }
        if density.windows(2).any(|w| w[1].from < w[0].to) {
            return Err(Error::InvalidMeasure("density intervals overlap".into()));
        }
        Ok(Self { atoms, density })
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn atom(at: f64, weight: Complex64) -> Self {
        Self {
            atoms: vec![Atom { at, weight }],
            density: Vec::new(),
        }
    }

    pub fn density(from: f64, to: f64, poly: Poly) -> Result<Self> {
        Self::new(Vec::new(), vec![DensityPiece { from, to, poly }])
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn density_pieces(&self) -> &[DensityPiece] {
        &self.density
    }

    pub fn is_zero(&self) -> bool {
        self.atoms.iter().all(|a| a.weight == ZERO) && self.density.iter().all(|d| d.poly.is_zero())
    }

    pub fn is_atomic(&self) -> bool {
        self.density.iter().all(|d| d.poly.is_zero())
    }

    /// Sum of two measures, merging atoms at equal locations.
    pub fn plus(&self, other: &Self) -> Result<Self> {
        let mut atoms = self.atoms.clone();
        for a in &other.atoms {
            match atoms.iter_mut().find(|b| b.at == a.at) {
                Some(b) => b.weight += a.weight,
                None => atoms.push(*a),
            }
        }
        let mut density = self.density.clone();
        density.extend(other.density.iter().cloned());
        Self::new(atoms, density)
    }

    /// Smallest closed interval containing all atoms and density pieces.
    pub fn support_hull(&self) -> Option<(f64, f64)> {
        let pts = self
            .atoms
            .iter()
            .filter(|a| a.weight != ZERO)
            .map(|a| (a.at, a.at))
            .chain(
                self.density
                    .iter()
                    .filter(|d| !d.poly.is_zero())
                    .map(|d| (d.from, d.to)),
            );
        pts.fold(None, |acc, (lo, hi)| match acc {
            None => Some((lo, hi)),
            Some((a, b)) => Some((f64::min(a, lo), f64::max(b, hi))),
        })
    }

    /// `|μ|(I) = Σ|aᵢ| + Σ ∫|density|`.
    pub fn total_variation(&self) -> f64 {
        let atoms: f64 = self.atoms.iter().map(|a| a.weight.norm()).sum();
        let dens: f64 = self
            .density
            .iter()
            .map(|d| match d.poly.degree() {
                0 => d.poly.eval(0.0).norm() * (d.to - d.from),
                _ => quad::integrate(|x| d.poly.eval(x).norm(), 0.0, d.to - d.from, 1e-13, 1e-300),
            })
            .sum();
        atoms + dens
    }

    /// `∫ v_k(t + s) dμ(s)`, reading one-sided limits at atoms when `side`
    /// asks for them.
    pub fn integrate_shifted<H: History + ?Sized>(&self, hist: &H, k: usize, t: f64, side: Side) -> Complex64 {
        let mut acc = ZERO;
        for a in &self.atoms {
            if a.weight != ZERO {
                acc += a.weight * hist.value_at(k, t + a.at, side);
            }
        }
        for d in &self.density {
            acc += hist.integrate_poly(k, &d.poly, t + d.from, t + d.from, t + d.to);
        }
        acc
    }

    /// `∫ f dμ` for a scalar piecewise function whose domain covers the
    /// support of the measure.
    pub fn integrate(&self, f: &PiecewiseFn) -> Result<Complex64> {
        if f.dim() != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: f.dim(),
            });
        }
        if let Some((lo, hi)) = self.support_hull() {
            let (a, b) = f.domain();
            if lo < a || hi > b {
                return Err(Error::DomainMismatch(format!(
                    "integrand on [{a}, {b}] does not cover the support [{lo}, {hi}]"
                )));
            }
        }
        Ok(self.integrate_shifted(f, 0, 0.0, Side::At))
    }
}

/// `n × n` matrix of measures on `[-h, 0]`; entry `(j, k)` maps input
/// component `k` to output component `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalMatrix {
    n: usize,
    h: f64,
    entries: Vec<ComplexMeasure>,
}

impl FunctionalMatrix {
    pub fn new(n: usize, h: f64, entries: Vec<ComplexMeasure>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidMeasure("dimension must be positive".into()));
        }
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::InvalidMeasure(format!("horizon h = {h} must be positive")));
        }
        if entries.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                got: entries.len(),
            });
        }
        for (idx, m) in entries.iter().enumerate() {
            let outside =
                m.atoms.iter().any(|a| a.at < -h || a.at > 0.0) || m.density.iter().any(|d| d.from < -h || d.to > 0.0);
            if outside {
                return Err(Error::InvalidMeasure(format!(
                    "entry ({}, {}) has support outside [-{h}, 0]",
                    idx / n,
                    idx % n
                )));
            }
        }
        Ok(Self { n, h, entries })
    }

    pub fn zeros(n: usize, h: f64) -> Result<Self> {
        Self::new(n, h, vec![ComplexMeasure::zero(); n * n])
    }

    pub fn scalar(h: f64, mu: ComplexMeasure) -> Result<Self> {
        Self::new(1, h, vec![mu])
    }

    /// Diagonal matrix with the same measure in every diagonal entry.
    pub fn diagonal(n: usize, h: f64, mu: ComplexMeasure) -> Result<Self> {
        let entries = (0..n * n)
            .map(|i| {
                if i / n == i % n {
                    mu.clone()
                } else {
                    ComplexMeasure::zero()
                }
            })
            .collect();
        Self::new(n, h, entries)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn horizon(&self) -> f64 {
        self.h
    }

    pub fn entry(&self, j: usize, k: usize) -> &ComplexMeasure {
        &self.entries[j * self.n + k]
    }

    pub fn entries(&self) -> &[ComplexMeasure] {
        &self.entries
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(ComplexMeasure::is_zero)
    }

    pub fn is_atomic(&self) -> bool {
        self.entries.iter().all(ComplexMeasure::is_atomic)
    }

    /// Matrix with all entries multiplied by `s`.
    pub fn scaled(&self, s: Complex64) -> Self {
        let entries = self
            .entries
            .iter()
            .map(|m| ComplexMeasure {
                atoms: m
                    .atoms
                    .iter()
                    .map(|a| Atom {
                        at: a.at,
                        weight: a.weight * s,
                    })
                    .collect(),
                density: m
                    .density
                    .iter()
                    .map(|d| DensityPiece {
                        from: d.from,
                        to: d.to,
                        poly: d.poly.scale(s),
                    })
                    .collect(),
            })
            .collect();
        Self {
            n: self.n,
            h: self.h,
            entries,
        }
    }

    /// Row `j` as a `1 × n` functional: a scalar-valued map on ℂⁿ data.
    pub fn row(&self, j: usize) -> Vec<ComplexMeasure> {
        self.entries[j * self.n..(j + 1) * self.n].to_vec()
    }

    /// `Λ v_t`: component `j` is `Σ_k ∫ v_k(t + s) dμ_{jk}(s)`.
    pub fn apply_at<H: History + ?Sized>(&self, hist: &H, t: f64, side: Side) -> Vec<Complex64> {
        let n = self.n;
        (0..n)
            .map(|j| {
                (0..n)
                    .map(|k| self.entries[j * n + k].integrate_shifted(hist, k, t, side))
                    .sum()
            })
            .collect()
    }

    /// `Λφ` for `φ` on `[-h, 0]`; on discontinuous data this is the extended
    /// functional.
    pub fn apply(&self, phi: &PiecewiseFn) -> Result<Vec<Complex64>> {
        if phi.dim() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: phi.dim(),
            });
        }
        let (a, b) = phi.domain();
        if !crate::history::same_time(a, -self.h) || !crate::history::same_time(b, 0.0) {
            return Err(Error::DomainMismatch(format!(
                "argument on [{a}, {b}], expected [-{}, 0]",
                self.h
            )));
        }
        Ok(self.apply_at(phi, 0.0, Side::At))
    }

    /// Operator norm for the max-norm on ℂⁿ: the largest row sum of total
    /// variations.
    pub fn operator_norm(&self) -> f64 {
        (0..self.n)
            .map(|j| (0..self.n).map(|k| self.entry(j, k).total_variation()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Largest `Δ` such that the functional ignores its argument on
    /// `(-Δ, 0]`, clamped below `h`.
    pub fn strict_delay_margin(&self) -> Result<f64> {
        let sup = self
            .entries
            .iter()
            .filter_map(ComplexMeasure::support_hull)
            .map(|(_, hi)| hi)
            .fold(f64::NEG_INFINITY, f64::max);
        if sup >= 0.0 {
            return Err(Error::NotStrictlyDelayed { support_sup: sup });
        }
        Ok((-sup).min(self.h * (1.0 - 1e-9)))
    }

    /// Distinct positive delays `-τ` of all atoms with nonzero weight,
    /// ascending.
    pub fn atom_delays(&self) -> Vec<f64> {
        let mut d: Vec<f64> = self
            .entries
            .iter()
            .flat_map(|m| m.atoms.iter().filter(|a| a.weight != ZERO).map(|a| -a.at))
            .collect();
        d.sort_by(f64::total_cmp);
        d.dedup();
        d
    }

    /// Distinct positive distances `-e` of all density endpoints.
    pub fn density_edge_delays(&self) -> Vec<f64> {
        let mut d: Vec<f64> = self
            .entries
            .iter()
            .flat_map(|m| {
                m.density
                    .iter()
                    .filter(|p| !p.poly.is_zero())
                    .flat_map(|p| [-p.from, -p.to])
            })
            .collect();
        d.sort_by(f64::total_cmp);
        d.dedup();
        d
    }

    /// Atoms grouped by delay: `(τ, A)` with `A` the row-major `n × n`
    /// weight matrix of all atoms located at `-τ`.
    pub fn atom_matrices(&self) -> Vec<(f64, Vec<Complex64>)> {
        let n = self.n;
        self.atom_delays()
            .into_iter()
            .map(|tau| {
                let mut m = vec![ZERO; n * n];
                for (idx, e) in self.entries.iter().enumerate() {
                    for a in &e.atoms {
                        if -a.at == tau {
                            m[idx] += a.weight;
                        }
                    }
                }
                (tau, m)
            })
            .collect()
    }
}
