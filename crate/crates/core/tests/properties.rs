use ndde::{
    fundamental_solution, max_norm, propagate_breakpoints, semigroup_restart, smoothed_part, solve_homogeneous, Atom,
    Complex64, ComplexMeasure, DensityPiece, FunctionalMatrix, History, PiecewiseFn, Poly, Problem, Side, SolverConfig,
};
use proptest::prelude::*;

fn cz() -> impl Strategy<Value = Complex64> {
    (-1.0..1.0f64, -1.0..1.0f64).prop_map(|(a, b)| Complex64::new(a, b))
}

fn poly(max_deg: usize) -> impl Strategy<Value = Poly> {
    prop::collection::vec(cz(), 1..=max_deg + 1).prop_map(Poly::new)
}

/// Measure on `[-1, -margin]` with up to three atoms and two density pieces.
fn measure(margin: f64) -> impl Strategy<Value = ComplexMeasure> {
    measure_sized(margin, 3, 2)
}

fn measure_sized(margin: f64, max_atoms: usize, max_pieces: usize) -> impl Strategy<Value = ComplexMeasure> {
    let atoms = prop::collection::vec((-1.0..=-margin, cz()), 0..=max_atoms);
    let dens = prop::collection::vec((-1.0..=-margin, -1.0..=-margin, poly(3)), 0..=max_pieces);
    (atoms, dens).prop_map(move |(atoms, dens)| {
        let mut seen: Vec<f64> = Vec::new();
        let atoms = atoms
            .into_iter()
            .filter(|(at, _)| {
                let fresh = !seen.contains(at);
                seen.push(*at);
                fresh
            })
            .map(|(at, weight)| Atom { at, weight })
            .collect();
        // Disjoint pieces: split [-1, -margin] in two halves.
        let mid = 0.5 * (-1.0 - margin);
        let density = dens
            .into_iter()
            .enumerate()
            .filter_map(|(i, (a, b, poly))| {
                let (lo, hi) = if i == 0 { (-1.0, mid) } else { (mid, -margin) };
                let (a, b) = (
                    lo + (hi - lo) * (a + 1.0) / (1.0 - margin),
                    lo + (hi - lo) * (b + 1.0) / (1.0 - margin),
                );
                let (from, to) = (a.min(b).max(lo), a.max(b).min(hi));
                (to - from > 1e-6).then_some(DensityPiece { from, to, poly })
            })
            .collect();
        ComplexMeasure::new(atoms, density).unwrap()
    })
}

fn matrix(n: usize, margin: f64) -> impl Strategy<Value = FunctionalMatrix> {
    prop::collection::vec(measure(margin), n * n).prop_map(move |e| FunctionalMatrix::new(n, 1.0, e).unwrap())
}

/// One atom and one density piece per entry at most.
fn sparse_matrix(n: usize, margin: f64) -> impl Strategy<Value = FunctionalMatrix> {
    prop::collection::vec(measure_sized(margin, 1, 1), n * n)
        .prop_map(move |e| FunctionalMatrix::new(n, 1.0, e).unwrap())
}

/// Piecewise polynomial on `[-1, 0]` with random breakpoints and random
/// pointwise values at some of them.
fn function(n: usize) -> impl Strategy<Value = PiecewiseFn> {
    (
        prop::collection::btree_set(1u32..100, 0..4),
        prop::collection::vec(prop::collection::vec(poly(2), n), 5),
        prop::collection::vec(prop::option::of(prop::collection::vec(cz(), n)), 6),
    )
        .prop_map(move |(cuts, polys, overrides)| {
            let mut breaks = vec![-1.0];
            breaks.extend(cuts.iter().map(|&k| -1.0 + k as f64 / 100.0));
            breaks.push(0.0);
            let m = breaks.len() - 1;
            let mut f = PiecewiseFn::from_polys(breaks.clone(), polys[..m].to_vec()).unwrap();
            for (t, v) in breaks.iter().zip(overrides) {
                if let Some(v) = v {
                    f = f.with_value(*t, v).unwrap();
                }
            }
            f
        })
}

fn rel_close(a: &[Complex64], b: &[Complex64], rel: f64) -> bool {
    let scale = max_norm(a).max(max_norm(b)).max(1e-300);
    a.iter().zip(b).all(|(x, y)| (x - y).norm() <= rel * scale)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn apply_is_bounded_by_operator_norm(l in matrix(2, 0.0), f in function(2)) {
        let v = l.apply(&f).unwrap();
        let bound = l.operator_norm() * f.sup_norm();
        prop_assert!(max_norm(&v) <= bound * (1.0 + 1e-9) + 1e-14, "{} > {}", max_norm(&v), bound);
    }

    #[test]
    fn apply_is_linear(l in matrix(2, 0.0), f in function(2), g in function(2), a in cz(), b in cz()) {
        let combo = PiecewiseFn::linear_combination(a, &f, b, &g).unwrap();
        let lhs = l.apply(&combo).unwrap();
        let (lf, lg) = (l.apply(&f).unwrap(), l.apply(&g).unwrap());
        let rhs: Vec<Complex64> = lf.iter().zip(&lg).map(|(x, y)| a * x + b * y).collect();
        let scale = max_norm(&lf).max(max_norm(&lg)).max(1.0);
        for (x, y) in lhs.iter().zip(&rhs) {
            prop_assert!((x - y).norm() <= 1e-12 * scale);
        }
    }

    #[test]
    fn strictly_delayed_functional_ignores_recent_data(
        delta in 0.05..0.95f64,
        l in matrix(2, 0.0),
        inner in prop::collection::vec(poly(3), 2),
        at0 in prop::collection::vec(cz(), 2),
    ) {
        // Squeeze the support of l into [-1, -delta].
        let entries = l
            .entries()
            .iter()
            .map(|m| {
                let squeeze = |s: f64| -1.0 + (s + 1.0) * (1.0 - delta);
                let atoms = m.atoms().iter().map(|a| Atom { at: squeeze(a.at), weight: a.weight }).collect();
                let dens = m
                    .density_pieces()
                    .iter()
                    .map(|d| DensityPiece { from: squeeze(d.from), to: squeeze(d.to), poly: d.poly.clone() })
                    .collect();
                ComplexMeasure::new(atoms, dens).unwrap()
            })
            .collect();
        let l = FunctionalMatrix::new(2, 1.0, entries).unwrap();
        let de = 0.5 * l.strict_delay_margin().unwrap();
        let phi = PiecewiseFn::from_polys(vec![-1.0, -de, 0.0], vec![vec![Poly::zero(); 2], inner])
            .unwrap()
            .with_value(-de, vec![Complex64::new(0.0, 0.0); 2])
            .unwrap()
            .with_value(0.0, at0)
            .unwrap();
        prop_assert!(max_norm(&l.apply(&phi).unwrap()) <= 1e-14);
    }

    #[test]
    fn total_variation_dominates_partition_sums(mu in measure(0.0), cuts in prop::collection::vec(-1.0..0.0f64, 0..20)) {
        let mut edges = cuts;
        edges.push(-1.0);
        edges.push(0.0);
        edges.sort_by(f64::total_cmp);
        edges.dedup();
        let tv = mu.total_variation();
        let sum: f64 = edges.windows(2).map(|w| mass(&mu, w[0], w[1]).norm()).sum();
        prop_assert!(sum <= tv * (1.0 + 1e-12) + 1e-14);
    }

    #[test]
    fn mollified_data_stay_bounded_and_converge(f in function(1), m in 1usize..400) {
        if let Ok(g) = f.approximate_by_continuous(m) {
            prop_assert!(g.sup_norm() <= f.sup_norm() * (1.0 + 1e-12) + 1e-15);
            let w = 1.0 / m as f64;
            let breaks = f.breakpoints();
            for &b in breaks {
                prop_assert_eq!(g.eval(b).unwrap(), f.eval(b).unwrap());
            }
            for i in 0..=200 {
                let t = -1.0 + i as f64 / 200.0;
                let dist = breaks.iter().map(|&b| (b - t).abs()).fold(f64::INFINITY, f64::min);
                if dist > w * (1.0 + 1e-9) {
                    let (a, b) = (g.eval(t).unwrap(), f.eval(t).unwrap());
                    prop_assert!(rel_close(&a, &b, 1e-12), "t = {}", t);
                }
            }
        }
    }

    #[test]
    fn restrict_and_concat_round_trip(f in function(2), cut in 1u32..100) {
        let c = -1.0 + cut as f64 / 100.0;
        let back = f.restrict(-1.0, c).unwrap().concat(&f.restrict(c, 0.0).unwrap()).unwrap();
        for i in 0..=100 {
            let t = -1.0 + i as f64 / 100.0;
            for side in [Side::Left, Side::At, Side::Right] {
                let (a, b) = (back.vector_at(t, side), f.vector_at(t, side));
                prop_assert!(rel_close(&a, &b, 1e-13), "t = {}", t);
            }
        }
    }

    #[test]
    fn csv_round_trip(f in function(2)) {
        let mut buf = Vec::new();
        f.write_csv(&mut buf, 16, 1e-12).unwrap();
        let g = PiecewiseFn::read_csv(buf.as_slice()).unwrap();
        for node in f.nodes(16) {
            prop_assert!(rel_close(&g.vector_at(node.t, Side::At), &node.at, 1e-12));
            prop_assert!(rel_close(&g.vector_at(node.t, Side::Left), &node.left, 1e-12));
        }
    }

    #[test]
    fn propagated_breakpoints_are_closed(seed in prop::collection::vec(-1.0..0.0f64, 1..4), delays in prop::collection::vec(0.3..1.0f64, 1..3)) {
        let pts = propagate_breakpoints(&seed, &delays, 3.0);
        prop_assert!(pts.windows(2).all(|w| w[1] > w[0]));
        for &p in &pts {
            for &d in &delays {
                if p + d <= 3.0 - 1e-9 {
                    prop_assert!(pts.iter().any(|&q| (q - p - d).abs() <= 1e-11 * (1.0 + q.abs())));
                }
            }
        }
    }
}

/// `μ([lo, hi))`, closed on the right when `hi = 0`.
fn mass(mu: &ComplexMeasure, lo: f64, hi: f64) -> Complex64 {
    let closed = hi == 0.0;
    let mut acc: Complex64 = mu
        .atoms()
        .iter()
        .filter(|a| a.at >= lo && (a.at < hi || (closed && a.at == hi)))
        .map(|a| a.weight)
        .sum();
    for d in mu.density_pieces() {
        let (a, b) = (d.from.max(lo), d.to.min(hi));
        if b > a {
            acc += d.poly.integral(a - d.from, b - d.from);
        }
    }
    acc
}

fn scalar(at: f64, w: f64) -> FunctionalMatrix {
    FunctionalMatrix::scalar(1.0, ComplexMeasure::atom(at, Complex64::new(w, 0.0))).unwrap()
}

#[test]
fn mollifier_convergence_of_functionals() {
    // Atoms at the breakpoints and linear densities: the error is a cubic
    // polynomial in the window width 1/m, so three Richardson steps over
    // m = 4, 16, 64, 256 recover the limit up to rounding.
    let b = -1.0;
    let mu = ComplexMeasure::new(
        vec![
            Atom {
                at: -2.0,
                weight: Complex64::new(0.3, -0.2),
            },
            Atom {
                at: b,
                weight: Complex64::new(-0.7, 0.1),
            },
            Atom {
                at: 0.0,
                weight: Complex64::new(0.4, 0.0),
            },
        ],
        vec![
            DensityPiece {
                from: -2.0,
                to: b,
                poly: Poly::from_real(&[0.5, -1.2]),
            },
            DensityPiece {
                from: b,
                to: 0.0,
                poly: Poly::new(vec![Complex64::new(-0.3, 0.6), Complex64::new(2.0, 0.0)]),
            },
        ],
    )
    .unwrap();
    let l = FunctionalMatrix::scalar(2.0, mu).unwrap();
    let phi = PiecewiseFn::scalar(
        vec![-2.0, b, 0.0],
        vec![Poly::from_real(&[1.0, 0.5]), Poly::from_real(&[-2.0, 1.5])],
    )
    .unwrap()
    .with_value(b, vec![Complex64::new(0.25, 0.0)])
    .unwrap()
    .with_value(0.0, vec![Complex64::new(3.0, 0.0)])
    .unwrap();
    let exact = l.apply(&phi).unwrap()[0];
    let ms = [4usize, 16, 64, 256];
    let vals: Vec<Complex64> = ms
        .iter()
        .map(|&m| l.apply(&phi.approximate_by_continuous(m).unwrap()).unwrap()[0])
        .collect();
    let errs: Vec<f64> = vals.iter().map(|v| (v - exact).norm()).collect();
    assert!(errs[1] > errs[2] && errs[2] > errs[3], "{errs:?}");
    let mut level = vals.clone();
    for k in 1..=3 {
        let r = 4f64.powi(k);
        level = level.windows(2).map(|w| (r * w[1] - w[0]) / (r - 1.0)).collect();
    }
    assert!((level[0] - exact).norm() <= 1e-6, "{:e}", (level[0] - exact).norm());
}

#[test]
fn picard_ratio_stays_below_contraction_factor() {
    // R reads the current step through an atom at 0 and a density near 0.
    let r = FunctionalMatrix::scalar(
        1.0,
        ComplexMeasure::new(
            vec![
                Atom {
                    at: 0.0,
                    weight: Complex64::new(-1.5, 0.5),
                },
                Atom {
                    at: -1.0,
                    weight: Complex64::new(0.7, 0.0),
                },
            ],
            vec![DensityPiece {
                from: -0.3,
                to: 0.0,
                poly: Poly::from_real(&[1.0, 2.0]),
            }],
        )
        .unwrap(),
    )
    .unwrap();
    let l = scalar(-0.8, 0.6);
    let phi = PiecewiseFn::constant(vec![Complex64::new(1.0, -1.0)], -1.0, 0.0).unwrap();
    let p = Problem::new(l, r, phi, 4.0).unwrap();
    for rho in [0.2, 0.5, 0.8] {
        let cfg = SolverConfig {
            rho,
            ..SolverConfig::default().with_grid_n(256)
        };
        let sol = solve_homogeneous(&p, &cfg).unwrap();
        let factor = sol.t0 * sol.r_norm;
        assert!(sol.t0 <= sol.delta_e && factor <= rho + 1e-12);
        let worst = sol.contraction.iter().copied().fold(0.0, f64::max);
        assert!(worst <= factor + 0.05, "rho {rho}: observed {worst}, factor {factor}");
        assert!(sol.picard_iters.iter().all(|&k| k >= 2));
        assert!(sol.bounds.unwrap().ok());
    }
}

#[test]
fn smoothed_part_is_continuous_with_densities() {
    let l = FunctionalMatrix::new(
        2,
        1.0,
        vec![
            ComplexMeasure::new(
                vec![Atom {
                    at: -0.7,
                    weight: Complex64::new(0.5, 0.2),
                }],
                vec![DensityPiece {
                    from: -1.0,
                    to: -0.5,
                    poly: Poly::from_real(&[0.3, 0.3]),
                }],
            )
            .unwrap(),
            ComplexMeasure::atom(-1.0, Complex64::new(-0.3, 0.0)),
            ComplexMeasure::zero(),
            ComplexMeasure::atom(-0.55, Complex64::new(0.4, -0.4)),
        ],
    )
    .unwrap();
    let r = FunctionalMatrix::new(
        2,
        1.0,
        vec![
            ComplexMeasure::density(-0.4, 0.0, Poly::from_real(&[-1.0])).unwrap(),
            ComplexMeasure::atom(-0.25, Complex64::new(0.5, 0.0)),
            ComplexMeasure::atom(0.0, Complex64::new(-0.2, 0.0)),
            ComplexMeasure::zero(),
        ],
    )
    .unwrap();
    let x = fundamental_solution(&l, &r, 3.0, &SolverConfig::default().with_grid_n(128)).unwrap();
    for (j, col) in x.columns.iter().enumerate() {
        let datum = PiecewiseFn::fundamental_datum(2, j, 1.0).unwrap();
        // The neutral functional ignores the fundamental datum.
        assert!(l.apply(&datum).unwrap().iter().all(|z| *z == Complex64::new(0.0, 0.0)));
        let p = Problem::new(l.clone(), r.clone(), datum, 3.0).unwrap();
        let sp = smoothed_part(col, &p).unwrap();
        assert!(
            sp.max_jump <= 1e-9,
            "column {j}: {:e} at {}",
            sp.max_jump,
            sp.max_jump_at
        );
        assert!(col.bounds.as_ref().unwrap().ok());
        let rs = semigroup_restart(col, 1.0, &p, &SolverConfig::default().with_grid_n(128)).unwrap();
        assert!(rs.discrepancy <= 5e-10, "restart {:e}", rs.discrepancy);
    }
    assert!(x.ledger.len() > 3);
}

#[test]
fn serial_and_parallel_columns_agree() {
    let l = FunctionalMatrix::new(
        2,
        1.0,
        vec![
            ComplexMeasure::atom(-0.6, Complex64::new(0.5, 0.0)),
            ComplexMeasure::zero(),
            ComplexMeasure::atom(-1.0, Complex64::new(0.2, 0.1)),
            ComplexMeasure::zero(),
        ],
    )
    .unwrap();
    let r = FunctionalMatrix::diagonal(2, 1.0, ComplexMeasure::atom(-0.5, Complex64::new(-1.0, 0.0))).unwrap();
    let base = SolverConfig::default().with_grid_n(64);
    let par = fundamental_solution(
        &l,
        &r,
        2.0,
        &SolverConfig {
            parallel_columns: true,
            ..base.clone()
        },
    )
    .unwrap();
    let ser = fundamental_solution(
        &l,
        &r,
        2.0,
        &SolverConfig {
            parallel_columns: false,
            ..base
        },
    )
    .unwrap();
    for (a, b) in par.columns.iter().zip(&ser.columns) {
        assert_eq!(a.y, b.y);
    }
    assert_eq!(par.ledger, ser.ledger);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn solutions_are_linear_in_the_datum(
        l in sparse_matrix(2, 0.3),
        r in sparse_matrix(2, 0.0),
        f in function(2),
        a in cz(), b in cz(),
        g_polys in prop::collection::vec(prop::collection::vec(poly(2), 2), 5),
    ) {
        // g shares the breakpoints of f so both solves use the same grid.
        let m = f.breakpoints().len() - 1;
        let g = PiecewiseFn::from_polys(f.breakpoints().to_vec(), g_polys[..m].to_vec()).unwrap();
        let cfg = SolverConfig::default().with_grid_n(64);
        let p = Problem::new(l, r, f.clone(), 2.0).unwrap();
        let sf = solve_homogeneous(&p, &cfg).unwrap();
        let sg = solve_homogeneous(&p.with_phi(g.clone()).unwrap(), &cfg).unwrap();
        let combo = PiecewiseFn::linear_combination(a, &f, b, &g).unwrap();
        let sc = solve_homogeneous(&p.with_phi(combo).unwrap(), &cfg).unwrap();
        prop_assert_eq!(&sc.grid, &sf.grid);
        let mut scale: f64 = 1e-300;
        let mut diff: f64 = 0.0;
        for &t in &sc.grid {
            for side in [Side::Left, Side::At, Side::Right] {
                let (y, yf, yg) = (sc.y.vector_at(t, side), sf.y.vector_at(t, side), sg.y.vector_at(t, side));
                for k in 0..2 {
                    diff = diff.max((y[k] - (a * yf[k] + b * yg[k])).norm());
                    scale = scale.max((a * yf[k]).norm()).max((b * yg[k]).norm());
                }
            }
        }
        prop_assert!(diff <= 1e-10 * scale, "relative {:e}", diff / scale);
        prop_assert!(sf.bounds.unwrap().ok());
    }
}
