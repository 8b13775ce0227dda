//! Property tests: multilinear forms, winding index, rescaling.

use gmaslov::maslovbox::{shelf_path, Shelf};
use gmaslov::multilinear::{omega1_eval, omega1_reference, omega2_eval, omega2_stacked, omega2_via_difference, psi_rho, stack_frames, BlockLambdaMatrix};
use gmaslov::problems::{builtin_catalog, load_problem};
use gmaslov::winding::{detect_crossings, winding_index, winding_via_squared_form, PathSamples};
use gmaslov::Error;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn mat(n: usize, m: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-2.0f64..2.0, n * m).prop_map(move |v| DMatrix::from_vec(n, m, v))
}

/// (G, H, A1, A2) with G n x m, H n x (n - m).
fn frames() -> impl Strategy<Value = (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    (2usize..=5)
        .prop_flat_map(|n| (Just(n), 1..n))
        .prop_flat_map(|(n, m)| (mat(n, m), mat(n, n - m), mat(n, n), mat(n, n)))
}

fn block(a1: &DMatrix<f64>, a2: &DMatrix<f64>) -> BlockLambdaMatrix {
    BlockLambdaMatrix::new(0.0, 1.0, a1, a2).unwrap()
}

fn close(a: f64, b: f64, scale: f64) -> bool {
    (a - b).abs() <= 1e-9 * (1.0 + scale)
}

fn scale_of(g: &DMatrix<f64>, h: &DMatrix<f64>, a: &DMatrix<f64>) -> f64 {
    let c: f64 = g.column_iter().chain(h.column_iter()).map(|c| c.norm()).product();
    c * (1.0 + a.norm())
}

proptest! {
    #[test]
    fn omega1_matches_full_determinant((g, h, _a1, _a2) in frames()) {
        let f = stack_frames(&g, &h).unwrap();
        let direct = omega1_eval(&g, &h).unwrap();
        let reference = omega1_reference(&f).unwrap();
        prop_assert!(close(direct, reference, scale_of(&g, &h, &DMatrix::zeros(1, 1))));
    }

    #[test]
    fn block_reduction_agrees((g, h, a1, a2) in frames()) {
        let at = block(&a1, &a2);
        let f = stack_frames(&g, &h).unwrap();
        let w = omega2_eval(&g, &h, &at).unwrap();
        let via_d = omega2_via_difference(&g, &h, at.difference()).unwrap();
        let reference = omega2_stacked(&f, &at.dense(), true).unwrap();
        let s = scale_of(&g, &h, &at.dense());
        prop_assert!(close(w, via_d, s), "{w} vs {via_d}");
        prop_assert!(close(w, reference, s), "{w} vs {reference}");
    }

    #[test]
    fn swapping_columns_negates((g, h, a1, a2) in frames(), i in 0usize..8, j in 0usize..8) {
        let at = block(&a1, &a2);
        let n = g.nrows();
        let (i, j) = (i % n, j % n);
        prop_assume!(i != j);
        // Swap inside the combined column list [G | H].
        let mut both = DMatrix::zeros(n, n);
        both.view_mut((0, 0), (n, g.ncols())).copy_from(&g);
        both.view_mut((0, g.ncols()), (n, h.ncols())).copy_from(&h);
        both.swap_columns(i, j);
        let g2 = both.columns(0, g.ncols()).into_owned();
        let h2 = both.columns(g.ncols(), h.ncols()).into_owned();
        // omega2 pairs G columns with A1 and H columns with A2, so only swaps within a block negate it.
        let same_block = (i < g.ncols()) == (j < g.ncols());
        let s = scale_of(&g, &h, &at.dense());
        prop_assert!(close(omega1_eval(&g2, &h2).unwrap(), -omega1_eval(&g, &h).unwrap(), s));
        if same_block {
            prop_assert!(close(omega2_eval(&g2, &h2, &at).unwrap(), -omega2_eval(&g, &h, &at).unwrap(), s));
        }
    }

    #[test]
    fn multilinear_in_a_column((g, h, a1, a2) in frames(), c in -3.0f64..3.0, v in prop::collection::vec(-2.0f64..2.0, 5)) {
        let at = block(&a1, &a2);
        let n = g.nrows();
        let extra = DMatrix::from_iterator(n, 1, v.into_iter().take(n));
        let mut gs = g.clone();
        gs.set_column(0, &(g.column(0) * c + extra.column(0)));
        let mut ge = g.clone();
        ge.set_column(0, &extra.column(0));
        let s = scale_of(&g, &h, &at.dense()) * (1.0 + c.abs() + extra.norm());
        let lhs1 = omega1_eval(&gs, &h).unwrap();
        let rhs1 = c * omega1_eval(&g, &h).unwrap() + omega1_eval(&ge, &h).unwrap();
        prop_assert!(close(lhs1, rhs1, s));
        let lhs2 = omega2_eval(&gs, &h, &at).unwrap();
        let rhs2 = c * omega2_eval(&g, &h, &at).unwrap() + omega2_eval(&ge, &h, &at).unwrap();
        prop_assert!(close(lhs2, rhs2, s));
    }

    #[test]
    fn basis_change_keeps_psi((g, h, a1, a2) in frames(), mv in prop::collection::vec(-2.0f64..2.0, 25)) {
        let at = block(&a1, &a2);
        let m = g.ncols();
        let mm = DMatrix::from_iterator(m, m, mv.into_iter().take(m * m));
        let det = mm.determinant();
        prop_assume!(det.abs() > 0.1);
        let Ok(base) = psi_rho(&g, &h, &at) else { return Ok(()) };
        prop_assume!(base.d > 1e-3);
        let moved = psi_rho(&(&g * &mm), &h, &at).unwrap();
        let sg = det.signum();
        let tol = 1e-7 * (1.0 + base.psi2.abs());
        prop_assert!((moved.psi1 - sg * base.psi1).abs() < tol, "{} vs {}", moved.psi1, base.psi1);
        prop_assert!((moved.psi2 - sg * base.psi2).abs() < tol, "{} vs {}", moved.psi2, base.psi2);
        prop_assert!((moved.rho - base.rho).abs() < tol * (1.0 + base.rho));
    }
}

/// Smooth random path (psi1, psi2) on [0, 1].
#[derive(Debug, Clone)]
struct Trig {
    a: Vec<(f64, f64, f64)>,
    b: Vec<(f64, f64, f64)>,
}

impl Trig {
    fn eval(&self, t: f64) -> (f64, f64) {
        let f = |c: &[(f64, f64, f64)]| c.iter().map(|&(amp, k, ph)| amp * (k * t + ph).sin()).sum::<f64>();
        (f(&self.a), 0.3 + f(&self.b))
    }

    fn path(&self, nodes: usize) -> PathSamples {
        let ts: Vec<f64> = (0..nodes).map(|i| i as f64 / (nodes - 1) as f64).collect();
        let vals: Vec<(f64, f64)> = ts.iter().map(|&t| self.eval(t)).collect();
        PathSamples::from_psi(ts, &vals).unwrap()
    }
}

fn trig() -> impl Strategy<Value = Trig> {
    let term = (0.2f64..1.0, 1.0f64..25.0, 0.0f64..6.3);
    (prop::collection::vec(term.clone(), 1..4), prop::collection::vec(term, 1..4)).prop_map(|(a, b)| Trig { a, b })
}

/// Transversal, invariant, no zero at a node: usable for exact index identities.
fn usable(p: &PathSamples) -> bool {
    let (_, r) = p.min_rho();
    if r < 1e-4 {
        return false;
    }
    match detect_crossings(p) {
        Ok(recs) => recs.iter().all(|r| !r.tangential && r.node_lo + 1 == r.node_hi),
        Err(_) => false,
    }
}

/// Every step turns (psi1, psi2) by less than pi/4, so the squared form's phase unwraps.
fn resolved(p: &PathSamples) -> bool {
    p.values.windows(2).all(|w| {
        let (a, b) = (&w[0], &w[1]);
        let cross = a.psi1 * b.psi2 - a.psi2 * b.psi1;
        let dot = a.psi1 * b.psi1 + a.psi2 * b.psi2;
        cross.atan2(dot).abs() < std::f64::consts::FRAC_PI_4
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn winding_additivity_and_reversal(tr in trig(), cut in 0.05f64..0.95) {
        let p = tr.path(801);
        prop_assume!(usable(&p));
        let (whole, _) = winding_index(&p).unwrap();
        let b = (cut * 800.0) as usize;
        prop_assume!(p.values[b].psi1.abs() > 1e-6);
        let (left, _) = winding_index(&p.slice(0, b)).unwrap();
        let (right, _) = winding_index(&p.slice(b, 800)).unwrap();
        prop_assert_eq!(whole, left + right);
        let ends_clear = p.values[0].psi1.abs() > 1e-6 && p.values[800].psi1.abs() > 1e-6;
        if ends_clear {
            let (rev, _) = winding_index(&p.reversed()).unwrap();
            prop_assert_eq!(rev, -whole);
            if resolved(&p) {
                prop_assert_eq!(winding_via_squared_form(&p).unwrap(), whole);
            }
        }
    }

    #[test]
    fn refinement_keeps_index(tr in trig()) {
        let coarse = tr.path(801);
        let fine = tr.path(1601);
        prop_assume!(usable(&coarse) && usable(&fine) && coarse.min_rho().1 > 1e-6);
        prop_assume!(coarse.values[0].psi1.abs() > 1e-6 && coarse.values[800].psi1.abs() > 1e-6);
        prop_assert_eq!(winding_index(&coarse).unwrap().0, winding_index(&fine).unwrap().0);
    }
}

#[test]
fn simultaneous_zero_is_an_error_not_a_count() {
    let ts: Vec<f64> = (0..11).map(|i| i as f64 / 10.0).collect();
    let vals: Vec<(f64, f64)> = ts.iter().map(|&t| (t - 0.5, t - 0.5)).collect();
    let p = PathSamples::from_psi(ts, &vals).unwrap();
    assert!(matches!(winding_index(&p), Err(Error::InvarianceViolation { node: 5, .. })));
}

/// Rescaled and unrescaled propagation give the same crossing set on every
/// catalog left shelf where unscaled integration stays finite.
#[test]
fn rescaling_keeps_crossings() {
    for name in ["example1", "example2", "harmonic-dirichlet", "harmonic-neumann"] {
        let p = load_problem(&builtin_catalog(name).unwrap()).unwrap();
        let on = detect_crossings(&shelf_path(&p, Shelf::Left).unwrap()).unwrap();
        let off = detect_crossings(&shelf_path(&p.clone().with_rescale(false), Shelf::Left).unwrap()).unwrap();
        assert_eq!(on.len(), off.len(), "{name}");
        for (a, b) in on.iter().zip(&off) {
            assert!((a.t_star - b.t_star).abs() < 1e-8, "{name}: {} vs {}", a.t_star, b.t_star);
            assert_eq!(a.contribution, b.contribution);
        }
    }
}
