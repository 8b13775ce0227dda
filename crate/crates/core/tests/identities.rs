//! The omega1' identity at random interior nodes, and the crossing monotonicity audit.

mod common;

use gmaslov::maslovbox::monotonicity_audit;
use gmaslov::problems::CATALOG;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

#[test]
fn omega1_derivative_identity_on_catalog() {
    let mut rng = StdRng::seed_from_u64(7);
    for name in CATALOG {
        let p = common::catalog(name);
        for _ in 0..100 {
            let x = rng.random_range(0.01..0.99);
            let l = rng.random_range(p.lambda1..p.lambda2);
            let (fd, rhs, size) = common::omega1_identity(&p, x, l);
            let rel = (fd - rhs).abs() / size.max(1e-300);
            assert!(rel <= 1e-5, "{name} at x = {x}, lambda = {l}: fd {fd} vs {rhs} (rel {rel:e})");
        }
    }
}

#[test]
fn audit_ratios_are_one_at_left_crossings() {
    for name in ["example1", "example2", "harmonic-dirichlet", "harmonic-neumann"] {
        let p = common::catalog(name);
        let audit = monotonicity_audit(&p).unwrap();
        assert!(!audit.is_empty(), "{name} has left-shelf crossings");
        for a in audit {
            assert!((0.999..=1.001).contains(&a.ratio), "{name}: ratio {} at x = {}", a.ratio, a.x);
            assert!(a.ok);
        }
    }
}
