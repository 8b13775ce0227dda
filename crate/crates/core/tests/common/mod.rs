#![allow(dead_code)]

use gmaslov::maslovbox::SpectralProblem;
use gmaslov::multilinear::{omega1_eval, omega2_eval};
use gmaslov::propagation::{propagate_to, steps_for};
use gmaslov::{load_problem, builtin_catalog};
use nalgebra::DMatrix;

pub fn catalog(name: &str) -> SpectralProblem {
    load_problem(&builtin_catalog(name).unwrap()).unwrap()
}

/// (finite-difference omega1', tr(A) omega1 + (l2 - l)/(l2 - l1) omega2, size of the right-hand terms)
/// at an interior box point, with a five-point stencil on locally integrated frames.
pub fn omega1_identity(p: &SpectralProblem, x: f64, lambda: f64) -> (f64, f64, f64) {
    let field = p.field.as_ref();
    let at = p.a_tilde().unwrap();
    let g = propagate_to(field, p.p.matrix(), 0.0, x, steps_for(x, p.x_step()), lambda, true).unwrap().0;
    let hp = p.h_path().unwrap();
    let k = ((x / p.x_step()).round() as usize).min(p.x_steps);
    let h = if hp.xs[k] == x {
        hp.frames[k].clone()
    } else {
        propagate_to(field, &hp.frames[k], hp.xs[k], x, 4, p.lambda2, false).unwrap().0
    };
    let step = 1e-3;
    let shifted = |f: &DMatrix<f64>, l: f64, dx: f64| propagate_to(field, f, x, x + dx, 16, l, false).unwrap().0;
    let w1 = |dx: f64| omega1_eval(&shifted(&g, lambda, dx), &shifted(&h, p.lambda2, dx)).unwrap();
    let fd = (-w1(2.0 * step) + 8.0 * w1(step) - 8.0 * w1(-step) + w1(-2.0 * step)) / (12.0 * step);
    let tr = field.eval(x, lambda).unwrap().trace();
    let c = (p.lambda2 - lambda) / (p.lambda2 - p.lambda1);
    let (a, b) = (tr * omega1_eval(&g, &h).unwrap(), c * omega2_eval(&g, &h, &at).unwrap());
    (fd, a + b, a.abs() + b.abs())
}
