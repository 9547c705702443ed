use ndde::oracle::{oracle_convolve, oracle_fundamental, oracle_solve, SymbolicPiecewise};
use ndde::voc::convolve_fundamental;
use ndde::{
    fundamental_solution, solve_homogeneous, solve_inhomogeneous, Atom, Complex64, ComplexMeasure, FunctionalMatrix,
    PiecewiseFn, Poly, Problem, SolverConfig,
};
use proptest::prelude::*;

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

fn atom(at: f64, w: f64) -> FunctionalMatrix {
    FunctionalMatrix::scalar(1.0, ComplexMeasure::atom(at, c(w))).unwrap()
}

/// Forward Euler on `v(t) = a v(t-1) + C + W(t)`, `W' = b v(t-1)`, `φ ≡ 1`,
/// with `1/dt` steps per unit delay.
fn euler(a: f64, b: f64, steps_per_unit: usize, t_end: f64) -> Vec<f64> {
    let k = steps_per_unit;
    let dt = 1.0 / k as f64;
    let total = (t_end * k as f64).round() as usize;
    // index i ↔ time (i - k)·dt; the datum occupies indices 0..=k
    let mut v = vec![1.0; k + 1 + total];
    let c0 = 1.0 - a;
    let mut w = 0.0;
    for i in 1..=total {
        w += dt * b * v[i - 1];
        v[k + i] = a * v[i] + c0 + w;
    }
    v
}

#[test]
fn oracle_agrees_with_euler_on_canonical_problems() {
    let k = 100_000;
    let phi = SymbolicPiecewise::constant(vec![c(1.0)], -1.0, 0.0).unwrap();
    for (a, b) in [(0.0, -1.0), (0.5, 1.0)] {
        let l = if a == 0.0 {
            FunctionalMatrix::zeros(1, 1.0).unwrap()
        } else {
            atom(-1.0, a)
        };
        let v = oracle_solve(&l, &atom(-1.0, b), &phi, None, 3.0).unwrap();
        let e = euler(a, b, k, 3.0);
        let mut worst: f64 = 0.0;
        for i in (0..=3 * k).step_by(997) {
            let t = i as f64 / k as f64;
            // Euler samples are right-continuous at the neutral jumps.
            let exact = v.right_limit(t).unwrap()[0].re;
            worst = worst.max((exact - e[k + i]).abs());
        }
        assert!(worst <= 1e-4, "a = {a}, b = {b}: {worst:e}");
    }
}

#[test]
fn oracle_smoothed_part_is_continuous() {
    let l = FunctionalMatrix::new(
        2,
        1.0,
        vec![
            ComplexMeasure::atom(-1.0, c(0.5)),
            ComplexMeasure::atom(-0.6, Complex64::new(0.1, 0.3)),
            ComplexMeasure::zero(),
            ComplexMeasure::atom(-0.75, c(-0.4)),
        ],
    )
    .unwrap();
    let r = FunctionalMatrix::new(
        2,
        1.0,
        vec![
            ComplexMeasure::atom(-0.5, c(1.0)),
            ComplexMeasure::zero(),
            ComplexMeasure::atom(-0.9, c(0.7)),
            ComplexMeasure::atom(-0.5, c(-0.2)),
        ],
    )
    .unwrap();
    let cols = oracle_fundamental(&l, &r, 4.0).unwrap();
    let atoms = l.atom_matrices();
    for col in &cols {
        assert!(col.jumps(1e-12).len() > 2);
        for &t in col.breakpoints().iter().filter(|&&t| t > 0.0 && t < 4.0) {
            let w = |side: i32| -> Vec<Complex64> {
                let read = |s: f64| match side {
                    -1 => col.left_limit(s).unwrap(),
                    0 => col.eval(s).unwrap(),
                    _ => col.right_limit(s).unwrap(),
                };
                let mut out = read(t);
                for (tau, m) in &atoms {
                    let d = read(t - tau);
                    for r in 0..2 {
                        out[r] -= m[2 * r] * d[0] + m[2 * r + 1] * d[1];
                    }
                }
                out
            };
            let (wl, w0, wr) = (w(-1), w(0), w(1));
            for k in 0..2 {
                assert!((wl[k] - w0[k]).norm() <= 1e-12, "t = {t}");
                assert!((wr[k] - w0[k]).norm() <= 1e-12, "t = {t}");
            }
        }
    }
}

#[test]
fn solver_fundamental_matches_oracle_staircase() {
    let a = -0.8;
    let l = atom(-1.0, a);
    let r = FunctionalMatrix::zeros(1, 1.0).unwrap();
    let x = fundamental_solution(&l, &r, 6.0, &SolverConfig::default().with_grid_n(32)).unwrap();
    let o = oracle_fundamental(&l, &r, 6.0).unwrap();
    for (t, jump) in &x.ledger {
        let expect = a.powi(t.round() as i32);
        assert!((jump[0].re - expect).abs() < 1e-13);
        assert!((o[0].eval(*t).unwrap()[0] - x.columns[0].y.eval(*t).unwrap()[0]).norm() < 1e-13);
    }
}

#[test]
fn convolution_matches_oracle() {
    let l = atom(-1.0, 0.5);
    let r = atom(-1.0, 1.0);
    let cfg = SolverConfig::default().with_grid_n(1024);
    let x = fundamental_solution(&l, &r, 3.0, &cfg).unwrap();
    let ox = oracle_fundamental(&l, &r, 3.0).unwrap();
    let coeffs = [0.3, -1.0, 0.4];
    let q = PiecewiseFn::scalar(vec![0.0, 3.0], vec![Poly::from_real(&coeffs)]).unwrap();
    let oq = SymbolicPiecewise::new(vec![0.0, 3.0], vec![vec![Poly::from_real(&coeffs)]], None).unwrap();
    let grid: Vec<f64> = (0..=30).map(|i| i as f64 / 10.0).collect();
    let p = convolve_fundamental(&x, &q, &grid).unwrap();
    for &t in &grid {
        let exact = oracle_convolve(&ox, &oq, t).unwrap()[0];
        assert!((p.eval(t).unwrap()[0] - exact).norm() < 1e-5, "t = {t}");
    }
    // ∫_0^2 X(u) du with q ≡ 1
    let one = SymbolicPiecewise::constant(vec![c(1.0)], 0.0, 3.0).unwrap();
    assert!((oracle_convolve(&ox, &one, 2.0).unwrap()[0] - c(3.0)).norm() < 1e-14);
}

fn scalar_atoms(pairs: &[(f64, Complex64)]) -> FunctionalMatrix {
    let atoms = pairs.iter().map(|&(at, weight)| Atom { at, weight }).collect();
    FunctionalMatrix::scalar(1.0, ComplexMeasure::new(atoms, vec![]).unwrap()).unwrap()
}

fn weight() -> impl Strategy<Value = Complex64> {
    (-1.0..1.0f64, -1.0..1.0f64).prop_map(|(a, b)| Complex64::new(a, b) * 0.5)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn solver_matches_oracle_on_point_delays(
        l1 in 0.5..0.75f64, l2 in 0.76..1.0f64,
        r1 in 0.5..1.0f64,
        wl1 in weight(), wl2 in weight(), wr1 in weight(), wr0 in weight(),
        jump_at in -0.9..-0.1f64, left in weight(), right in weight(), at0 in weight(),
        q0 in weight(), q1 in weight(),
    ) {
        let l = scalar_atoms(&[(-l2, wl2), (-l1, wl1)]);
        let r = scalar_atoms(&[(-r1, wr1 * 2.0), (-1.0, wr0)]);
        let breaks = vec![-1.0, jump_at, 0.0];
        let values = vec![vec![left], vec![right], vec![at0]];
        let pieces = vec![vec![Poly::constant(left)], vec![Poly::constant(right)]];
        let sphi = SymbolicPiecewise::new(breaks.clone(), pieces.clone(), Some(values)).unwrap();
        let phi = PiecewiseFn::from_polys(breaks, pieces).unwrap().with_value(0.0, vec![at0]).unwrap();
        let qp = Poly::new(vec![q0, q1]);
        let q = PiecewiseFn::from_polys(vec![0.0, 3.0], vec![vec![qp.clone()]]).unwrap();
        let sq = SymbolicPiecewise::new(vec![0.0, 3.0], vec![vec![qp]], None).unwrap();

        let p = Problem::new(l.clone(), r.clone(), phi, 3.0).unwrap().with_forcing(q).unwrap();
        let cfg = SolverConfig::default().with_grid_n(256);
        let sol = solve_inhomogeneous(&p, &cfg).unwrap();
        let exact = oracle_solve(&l, &r, &sphi, Some(&sq), 3.0).unwrap();
        let hom = solve_homogeneous(&p, &cfg).unwrap();
        let exact_hom = oracle_solve(&l, &r, &sphi, None, 3.0).unwrap();
        for i in 0..=300 {
            let t = i as f64 / 100.0;
            let d = (sol.y.eval(t).unwrap()[0] - exact.eval(t).unwrap()[0]).norm();
            prop_assert!(d < 1e-4, "forced: t = {}, diff {:e}", t, d);
            let d = (hom.y.eval(t).unwrap()[0] - exact_hom.eval(t).unwrap()[0]).norm();
            prop_assert!(d < 1e-4, "homogeneous: t = {}, diff {:e}", t, d);
        }
        // Jumps sit exactly on the propagated times and have the exact size.
        for (t, dl, _) in exact_hom.jumps(1e-9) {
            if t > 0.0 {
                let j = hom.y.eval(t).unwrap()[0] - hom.y.left_limit(t).unwrap()[0];
                prop_assert!((j - dl[0]).norm() < 1e-4, "jump at {}", t);
            }
        }
    }
}
