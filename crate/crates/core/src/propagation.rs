//! Coefficient fields A(x; lambda) and fixed-step RK4 frame propagation.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::problems::Expression;

/// A(x; lambda) on [0, 1] x [lambda1, lambda2].
pub trait CoefficientField: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    fn eval(&self, x: f64, lambda: f64) -> Result<DMatrix<f64>>;

    /// Assumption (B) holds by construction (companion structure).
    fn structural_b(&self) -> bool {
        false
    }

    /// A depends affinely on lambda.
    fn affine_in_lambda(&self) -> bool {
        false
    }

    fn higher_order(&self) -> Option<&HigherOrderField> {
        None
    }
}

/// Companion matrix of the scalar problem with coefficients alpha_0..alpha_n
/// (already evaluated at x) and scalings kappa_2..kappa_{n-1}.
pub fn companion_higher_order(alphas: &[f64], kappas: &[f64], lambda: f64) -> Result<DMatrix<f64>> {
    let n = alphas.len().checked_sub(1).filter(|&n| n >= 2).ok_or_else(|| {
        Error::InvalidInput("need alpha_0..alpha_n with n >= 2".into())
    })?;
    let an = alphas[n];
    if !(an > 0.0) {
        return Err(Error::DegenerateLeading { x: f64::NAN, value: an });
    }
    // kappa_1 = 1, kappa_2..kappa_{n-1} from input, kappa_n replaced by alpha_n(x).
    if kappas.len() < n - 2 {
        return Err(Error::InvalidInput(format!("need {} kappas for n = {n}", n - 2)));
    }
    let mut k = Vec::with_capacity(n);
    k.push(1.0);
    k.extend_from_slice(&kappas[..n - 2]);
    k.push(an);
    if k.iter().any(|&v| v == 0.0 || !v.is_finite()) {
        return Err(Error::InvalidInput("kappas must be finite and nonzero".into()));
    }
    let mut a = DMatrix::zeros(n, n);
    for j in 0..n - 1 {
        a[(j, j + 1)] = k[j] / k[j + 1];
    }
    a[(n - 1, 0)] = lambda - alphas[0];
    for j in 1..n {
        a[(n - 1, j)] = -alphas[j] / k[j];
    }
    Ok(a)
}

/// [[0, B^-1], [V - lambda I, W B^-1]] for diagonal B.
pub fn companion_second_order(b: &[f64], v: &DMatrix<f64>, w: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    let l = b.len();
    if l == 0 || v.shape() != (l, l) || w.shape() != (l, l) {
        return Err(Error::InvalidInput(format!("B, V, W must all be {l} x {l}")));
    }
    if b.iter().any(|&bi| bi == 0.0 || !bi.is_finite()) {
        return Err(Error::InvalidInput("B is singular".into()));
    }
    let mut a = DMatrix::zeros(2 * l, 2 * l);
    for i in 0..l {
        a[(i, l + i)] = 1.0 / b[i];
        for j in 0..l {
            a[(l + i, j)] = v[(i, j)];
            a[(l + i, l + j)] = w[(i, j)] / b[j];
        }
        a[(l + i, i)] -= lambda;
    }
    Ok(a)
}

fn eval_grid(exprs: &[Vec<Expression>], x: f64) -> Result<DMatrix<f64>> {
    let n = exprs.len();
    let mut m = DMatrix::zeros(n, n);
    for (i, row) in exprs.iter().enumerate() {
        for (j, e) in row.iter().enumerate() {
            m[(i, j)] = e.eval(x)?;
        }
    }
    Ok(m)
}

#[derive(Debug, Clone)]
pub struct HigherOrderField {
    pub alphas: Vec<Expression>,
    pub kappas: Vec<f64>,
}

impl HigherOrderField {
    pub fn new(alphas: Vec<Expression>, kappas: Vec<f64>) -> Result<Self> {
        let field = HigherOrderField { alphas, kappas };
        companion_higher_order(&vec![1.0; field.alphas.len()], &field.kappas, 0.0)?;
        Ok(field)
    }

    pub fn order(&self) -> usize {
        self.alphas.len() - 1
    }

    pub fn alpha_values(&self, x: f64) -> Result<Vec<f64>> {
        self.alphas.iter().map(|a| a.eval(x)).collect()
    }

    /// kappa_j for 1-based j in 1..=n-1 (kappa_1 = 1).
    pub fn kappa(&self, j: usize) -> f64 {
        if j <= 1 {
            1.0
        } else {
            self.kappas[j - 2]
        }
    }
}

impl CoefficientField for HigherOrderField {
    fn dim(&self) -> usize {
        self.order()
    }

    fn eval(&self, x: f64, lambda: f64) -> Result<DMatrix<f64>> {
        let alphas = self.alpha_values(x)?;
        companion_higher_order(&alphas, &self.kappas, lambda).map_err(|e| match e {
            Error::DegenerateLeading { value, .. } => Error::DegenerateLeading { x, value },
            other => other,
        })
    }

    fn structural_b(&self) -> bool {
        true
    }

    fn affine_in_lambda(&self) -> bool {
        true
    }

    fn higher_order(&self) -> Option<&HigherOrderField> {
        Some(self)
    }
}

#[derive(Debug, Clone)]
pub struct SecondOrderField {
    pub b: Vec<f64>,
    pub v: Vec<Vec<Expression>>,
    pub w: Vec<Vec<Expression>>,
}

impl SecondOrderField {
    pub fn new(b: Vec<f64>, v: Vec<Vec<Expression>>, w: Vec<Vec<Expression>>) -> Result<Self> {
        let l = b.len();
        let square = |m: &Vec<Vec<Expression>>| m.len() == l && m.iter().all(|r| r.len() == l);
        if l == 0 || !square(&v) || !square(&w) {
            return Err(Error::InvalidInput(format!("V and W must be {l} x {l}")));
        }
        if b.iter().any(|&bi| !(bi > 0.0)) {
            return Err(Error::InvalidInput("B must have positive diagonal entries".into()));
        }
        Ok(SecondOrderField { b, v, w })
    }
}

impl CoefficientField for SecondOrderField {
    fn dim(&self) -> usize {
        2 * self.b.len()
    }

    fn eval(&self, x: f64, lambda: f64) -> Result<DMatrix<f64>> {
        companion_second_order(&self.b, &eval_grid(&self.v, x)?, &eval_grid(&self.w, x)?, lambda)
    }

    fn structural_b(&self) -> bool {
        true
    }

    fn affine_in_lambda(&self) -> bool {
        true
    }
}

/// A(x; lambda) = A0(x) + lambda * A1 with constant A1.
#[derive(Debug, Clone)]
pub struct GeneralField {
    pub a: Vec<Vec<Expression>>,
    pub a_lambda: DMatrix<f64>,
}

impl GeneralField {
    pub fn new(a: Vec<Vec<Expression>>, a_lambda: DMatrix<f64>) -> Result<Self> {
        let n = a.len();
        if n == 0 || a.iter().any(|r| r.len() != n) || a_lambda.shape() != (n, n) {
            return Err(Error::InvalidInput(format!("A and A_lambda must both be {n} x {n}")));
        }
        Ok(GeneralField { a, a_lambda })
    }
}

impl CoefficientField for GeneralField {
    fn dim(&self) -> usize {
        self.a.len()
    }

    fn eval(&self, x: f64, lambda: f64) -> Result<DMatrix<f64>> {
        Ok(eval_grid(&self.a, x)? + &self.a_lambda * lambda)
    }

    fn structural_b(&self) -> bool {
        // lambda-linear part with zero diagonal: diagonal is lambda-free and
        // off-diagonal lambda-differences are x-free.
        self.a_lambda.diagonal().iter().all(|&v| v == 0.0)
    }

    fn affine_in_lambda(&self) -> bool {
        true
    }
}

/// Closure-backed field, mainly for tests and synthetic problems.
pub struct FnField<F> {
    n: usize,
    f: F,
    structural_b: bool,
    affine: bool,
}

impl<F> FnField<F>
where
    F: Fn(f64, f64) -> DMatrix<f64> + Send + Sync,
{
    pub fn new(n: usize, f: F) -> Self {
        FnField { n, f, structural_b: false, affine: false }
    }

    /// Declare assumption (B) and affine lambda dependence.
    pub fn with_structure(mut self, structural_b: bool, affine: bool) -> Self {
        self.structural_b = structural_b;
        self.affine = affine;
        self
    }
}

impl<F> fmt::Debug for FnField<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FnField(n = {})", self.n)
    }
}

impl<F> CoefficientField for FnField<F>
where
    F: Fn(f64, f64) -> DMatrix<f64> + Send + Sync,
{
    fn dim(&self) -> usize {
        self.n
    }

    fn eval(&self, x: f64, lambda: f64) -> Result<DMatrix<f64>> {
        let a = (self.f)(x, lambda);
        if a.shape() != (self.n, self.n) {
            return Err(Error::InvalidInput(format!("field returned a {:?} matrix", a.shape())));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp { x, lambda });
        }
        Ok(a)
    }

    fn structural_b(&self) -> bool {
        self.structural_b
    }

    fn affine_in_lambda(&self) -> bool {
        self.affine
    }
}

/// Sampled check of assumption (B): a_ii is lambda-free and a_ij(x; l) - a_ij(x; l2)
/// does not depend on x.
pub fn check_assumption_b(field: &dyn CoefficientField, lambda1: f64, lambda2: f64) -> Result<bool> {
    const XS: usize = 16;
    const LS: usize = 4;
    let n = field.dim();
    let ref2: Vec<DMatrix<f64>> = (0..=XS).map(|i| field.eval(i as f64 / XS as f64, lambda2)).collect::<Result<_>>()?;
    for li in 0..LS {
        let lambda = lambda1 + (lambda2 - lambda1) * li as f64 / LS as f64;
        let mut first_diff: Option<DMatrix<f64>> = None;
        for (xi, a2) in ref2.iter().enumerate() {
            let a = field.eval(xi as f64 / XS as f64, lambda)?;
            let diff = &a - a2;
            let scale = 1.0 + a.amax().max(a2.amax());
            for i in 0..n {
                if diff[(i, i)].abs() > 1e-12 * scale {
                    return Ok(false);
                }
            }
            match &first_diff {
                None => first_diff = Some(diff),
                Some(d0) => {
                    if (&diff - d0).amax() > 1e-12 * scale {
                        return Ok(false);
                    }
                }
            }
        }
    }
    Ok(true)
}

/// Frames on a uniform x grid; `xs` is always increasing.
#[derive(Debug, Clone)]
pub struct FramePath {
    pub lambda: f64,
    pub xs: Vec<f64>,
    pub frames: Vec<DMatrix<f64>>,
    /// log of the positive factor removed by column rescaling, per node;
    /// the true frame volume is exp(scale_log) times the stored one.
    pub scale_log: Vec<f64>,
    /// Initialized at the right end (x = 1) and integrated toward x = 0.
    pub backward: bool,
}

impl FramePath {
    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn frame(&self, k: usize) -> &DMatrix<f64> {
        &self.frames[k]
    }

    pub fn step(&self) -> f64 {
        (self.xs[self.xs.len() - 1] - self.xs[0]) / (self.xs.len() - 1) as f64
    }
}

/// Single RK4 step; `a0`, `ah`, `a1` are A at x, x + h/2, x + h.
fn rk4_step(f: &DMatrix<f64>, a0: &DMatrix<f64>, ah: &DMatrix<f64>, a1: &DMatrix<f64>, h: f64) -> DMatrix<f64> {
    let k1 = a0 * f;
    let k2 = ah * (f + &k1 * (0.5 * h));
    let k3 = ah * (f + &k2 * (0.5 * h));
    let k4 = a1 * (f + &k3 * h);
    f + (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0)
}

fn normalize_columns(f: &mut DMatrix<f64>) -> f64 {
    let mut log = 0.0;
    for mut c in f.column_iter_mut() {
        let norm = c.norm();
        if norm > 0.0 && norm.is_finite() {
            c /= norm;
            log += norm.ln();
        }
    }
    log
}

const OVERFLOW_GUARD: f64 = 1e150;

/// Streams RK4 from `from_x` to `to_x`, calling `visit(k, x, frame, scale_log)` at every node.
pub fn propagate_with<V>(
    field: &dyn CoefficientField,
    init: &DMatrix<f64>,
    from_x: f64,
    to_x: f64,
    steps: usize,
    lambda: f64,
    rescale: bool,
    mut visit: V,
) -> Result<()>
where
    V: FnMut(usize, f64, &DMatrix<f64>, f64) -> Result<()>,
{
    if steps == 0 || from_x == to_x || !from_x.is_finite() || !to_x.is_finite() {
        return Err(Error::InvalidInput("propagation needs steps > 0 and distinct finite endpoints".into()));
    }
    if init.nrows() != field.dim() {
        return Err(Error::InvalidInput(format!(
            "initial frame has {} rows, field has dimension {}",
            init.nrows(),
            field.dim()
        )));
    }
    let h = (to_x - from_x) / steps as f64;
    let node = |k: usize| if k == steps { to_x } else { from_x + h * k as f64 };
    let mut f = init.clone();
    let mut log = 0.0;
    visit(0, from_x, &f, log)?;
    let mut a0 = field.eval(from_x, lambda)?;
    for k in 0..steps {
        let x = node(k);
        let x1 = node(k + 1);
        let ah = field.eval(x + 0.5 * h, lambda)?;
        let a1 = field.eval(x1, lambda)?;
        f = rk4_step(&f, &a0, &ah, &a1, h);
        if rescale {
            log += normalize_columns(&mut f);
        }
        if f.iter().any(|v| !v.is_finite() || v.abs() > OVERFLOW_GUARD) {
            return Err(Error::BlowUp { x: x1, lambda });
        }
        visit(k + 1, x1, &f, log)?;
        a0 = a1;
    }
    Ok(())
}

/// RK4 on F' = A(x; lambda) F over `steps` uniform intervals, storing every node.
pub fn integrate_frame(
    field: &dyn CoefficientField,
    init: &DMatrix<f64>,
    from_x: f64,
    to_x: f64,
    steps: usize,
    lambda: f64,
    rescale: bool,
) -> Result<FramePath> {
    let mut xs = Vec::with_capacity(steps + 1);
    let mut frames = Vec::with_capacity(steps + 1);
    let mut scale_log = Vec::with_capacity(steps + 1);
    propagate_with(field, init, from_x, to_x, steps, lambda, rescale, |_, x, f, s| {
        xs.push(x);
        frames.push(f.clone());
        scale_log.push(s);
        Ok(())
    })?;
    let backward = to_x < from_x;
    if backward {
        xs.reverse();
        frames.reverse();
        scale_log.reverse();
    }
    Ok(FramePath { lambda, xs, frames, scale_log, backward })
}

/// Endpoint only: (frame at to_x, accumulated scale log).
pub fn propagate_to(
    field: &dyn CoefficientField,
    init: &DMatrix<f64>,
    from_x: f64,
    to_x: f64,
    steps: usize,
    lambda: f64,
    rescale: bool,
) -> Result<(DMatrix<f64>, f64)> {
    let mut out = (init.clone(), 0.0);
    propagate_with(field, init, from_x, to_x, steps, lambda, rescale, |k, _, f, s| {
        if k == steps {
            out = (f.clone(), s);
        }
        Ok(())
    })?;
    Ok(out)
}

/// Number of uniform steps for a sub-interval so the step does not exceed `max_step`.
pub fn steps_for(span: f64, max_step: f64) -> usize {
    ((span.abs() / max_step).ceil() as usize).max(1)
}

pub type SharedField = Arc<dyn CoefficientField>;

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn harmonic() -> FnField<impl Fn(f64, f64) -> DMatrix<f64> + Send + Sync> {
        FnField::new(2, |_, l| DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -l, 0.0])).with_structure(true, true)
    }

    #[test]
    fn example_one_companion_row() {
        let a = companion_higher_order(&[-0.3, 0.0, 10.0, 60.0], &[10.0], -1.0).unwrap();
        assert!((a[(2, 0)] + 0.7).abs() < 1e-15);
        assert_eq!(a[(2, 1)], 0.0);
        assert!((a[(2, 2)] + 1.0 / 6.0).abs() < 1e-15);
        assert!((a[(0, 1)] - 0.1).abs() < 1e-15);
        assert!((a[(1, 2)] - 10.0 / 60.0).abs() < 1e-15);
    }

    #[test]
    fn second_order_trivial() {
        let z = DMatrix::zeros(2, 2);
        let a = companion_second_order(&[1.0, 1.0], &z, &z, 1.0).unwrap();
        let mut want = DMatrix::zeros(4, 4);
        want[(0, 2)] = 1.0;
        want[(1, 3)] = 1.0;
        want[(2, 0)] = -1.0;
        want[(3, 1)] = -1.0;
        assert_eq!(a, want);
        assert!(companion_second_order(&[0.0], &DMatrix::zeros(1, 1), &DMatrix::zeros(1, 1), 0.0).is_err());
    }

    #[test]
    fn leading_coefficient_must_be_positive() {
        assert!(matches!(companion_higher_order(&[0.0, 0.0, -1.0], &[], 0.0), Err(Error::DegenerateLeading { .. })));
        let a = companion_higher_order(&[0.0, 0.0, 1.0], &[], 2.0).unwrap();
        assert_eq!(a, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 0.0]));
    }

    #[test]
    fn harmonic_closed_form() {
        let field = harmonic();
        let init = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let path = integrate_frame(&field, &init, 0.0, 1.0, 1000, PI * PI, false).unwrap();
        for (x, f) in path.xs.iter().zip(&path.frames) {
            assert!((f[0] - (PI * x).sin() / PI).abs() < 1e-8);
            assert!((f[1] - (PI * x).cos()).abs() < 1e-8);
        }
    }

    #[test]
    fn constant_field_keeps_frame() {
        let field = FnField::new(3, |_, _| DMatrix::zeros(3, 3));
        let init = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let path = integrate_frame(&field, &init, 1.0, 0.0, 10, 0.0, true).unwrap();
        assert!(path.backward);
        assert!(path.frames.iter().all(|f| *f == init));
        assert!(path.xs.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn blow_up_is_reported() {
        let field = FnField::new(1, |_, _| DMatrix::from_element(1, 1, 1e6));
        let init = DMatrix::from_element(1, 1, 1.0);
        assert!(matches!(integrate_frame(&field, &init, 0.0, 1.0, 10, 0.0, false), Err(Error::BlowUp { .. })));
        assert!(integrate_frame(&field, &init, 0.0, 1.0, 10, 0.0, true).is_ok());
    }
}
