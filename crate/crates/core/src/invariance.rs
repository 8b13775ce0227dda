//! Invariance: the constants of the rho' estimate and its certificate, full-box
//! rho scans, and local classification of interior loss points.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::maslovbox::{local_frame, SpectralProblem};
use crate::multilinear::{determinant, omega2_via_difference, psi_rho, volume_ratio, BlockLambdaMatrix, OmegaPairValue};
use crate::propagation::{propagate_to, propagate_with, steps_for, FramePath};

/// rho below this at a refined point is a loss of invariance.
pub const LOSS_TOL: f64 = 1e-9;
/// Grid local minima of rho below this are refined even without a sign pattern.
pub const CANDIDATE_RHO: f64 = 1e-3;
/// Default rounds of 10x local refinement around a loss candidate.
pub const DEFAULT_REFINE_ROUNDS: usize = 2;

#[derive(Debug, Clone, Serialize)]
pub struct BcConditions {
    /// Integral of (lambda2 - alpha_0) over [0, 1].
    pub integral: f64,
    pub det_shifted: f64,
    pub det_first_row: f64,
    /// At least one determinant is nonzero.
    pub satisfied: bool,
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, Serialize)]
pub struct InvarianceReport {
    pub C_a: f64,
    pub C_A: f64,
    pub c_g: f64,
    /// "exact" (m = 1) or "measured" (grid minimum).
    pub c_g_source: String,
    pub c_h: f64,
    /// Bound m! C_A / c_g^2.
    pub C_g: f64,
    pub C_g_measured: f64,
    pub C_h: f64,
    pub C_d: f64,
    pub C_d_measured: f64,
    pub delta: f64,
    /// "hadamard-bound" (higher-order) or "grid-max".
    pub delta_source: String,
    pub delta_measured: f64,
    pub C: f64,
    pub rho0: f64,
    pub margin: f64,
    pub certified: bool,
    pub bc_conditions: Option<BcConditions>,
    pub grid_min_rho: f64,
}

/// Per-node data of H(.; lambda2) shared by every lambda column.
struct HNodes {
    path: FramePath,
    a2: Vec<DMatrix<f64>>,
    c_h: f64,
    big_c_h: f64,
    /// (1/2) tr(Gram^{-1} Gram') of H, per node.
    log_rate: Vec<f64>,
}

/// (1/2) tr(Gram^{-1} Gram') for a frame F with F' = A F; equals d'/d.
fn volume_log_rate(f: &DMatrix<f64>, a: &DMatrix<f64>) -> f64 {
    let af = a * f;
    let gram = f.transpose() * f;
    let dgram = af.transpose() * f + f.transpose() * &af;
    match gram.clone().cholesky() {
        Some(ch) => 0.5 * ch.solve(&dgram).trace(),
        None => f64::NAN,
    }
}

fn h_nodes(problem: &SpectralProblem) -> Result<HNodes> {
    let path = problem.h_path()?;
    let a2: Vec<DMatrix<f64>> = path.xs.iter().map(|&x| problem.field.eval(x, problem.lambda2)).collect::<Result<_>>()?;
    let mut c_h = f64::INFINITY;
    let mut big_c_h: f64 = 0.0;
    let mut log_rate = Vec::with_capacity(path.len());
    for (h, a) in path.frames.iter().zip(&a2) {
        c_h = c_h.min(volume_ratio(h)?);
        let r = volume_log_rate(h, a);
        big_c_h = big_c_h.max(r.abs());
        log_rate.push(r);
    }
    Ok(HNodes { path, a2, c_h, big_c_h, log_rate })
}

/// d/dx omega2 along (G, H) with G' = A G, H' = A2 H, exactly via multilinearity.
pub fn omega2_derivative(g: &DMatrix<f64>, h: &DMatrix<f64>, a: &DMatrix<f64>, a2: &DMatrix<f64>, diff: &DMatrix<f64>) -> Result<f64> {
    let mut total = 0.0;
    let mut gw = g.clone();
    for k in 0..g.ncols() {
        gw.set_column(k, &(a * g.column(k)));
        total += omega2_via_difference(&gw, h, diff)?;
        gw.set_column(k, &g.column(k));
    }
    let mut hw = h.clone();
    for j in 0..h.ncols() {
        hw.set_column(j, &(a2 * h.column(j)));
        total += omega2_via_difference(g, &hw, diff)?;
        hw.set_column(j, &h.column(j));
    }
    Ok(total)
}

/// Aggregates of one lambda column of the box.
#[derive(Debug, Clone)]
struct ColumnStats {
    c_g_min: f64,
    c_g_rate_max: f64,
    c_d_max: f64,
    delta_max: f64,
    min_rho: f64,
    argmin_x: usize,
    psi1: Vec<f64>,
    psi2: Vec<f64>,
    rho: Vec<f64>,
}

fn column(problem: &SpectralProblem, hn: &HNodes, at: &BlockLambdaMatrix, lambda: f64, keep: bool) -> Result<ColumnStats> {
    let field = problem.field.as_ref();
    let n_nodes = problem.x_steps + 1;
    let mut st = ColumnStats {
        c_g_min: f64::INFINITY,
        c_g_rate_max: 0.0,
        c_d_max: 0.0,
        delta_max: 0.0,
        min_rho: f64::INFINITY,
        argmin_x: 0,
        psi1: Vec::with_capacity(if keep { n_nodes } else { 0 }),
        psi2: Vec::with_capacity(if keep { n_nodes } else { 0 }),
        rho: Vec::with_capacity(if keep { n_nodes } else { 0 }),
    };
    let diff = at.difference();
    let m = problem.m();
    propagate_with(field, problem.p.matrix(), 0.0, 1.0, problem.x_steps, lambda, problem.rescale, |k, x, g, _| {
        let h = &hn.path.frames[k];
        let a = field.eval(x, lambda)?;
        let v = psi_rho(g, h, at)?;
        let ratio = if m == 1 { 1.0 } else { volume_ratio(g)? };
        st.c_g_min = st.c_g_min.min(ratio);
        let rate = volume_log_rate(g, &a);
        st.c_g_rate_max = st.c_g_rate_max.max(rate.abs());
        st.c_d_max = st.c_d_max.max((rate + hn.log_rate[k]).abs());
        let dw2 = omega2_derivative(g, h, &a, &hn.a2[k], diff)?;
        st.delta_max = st.delta_max.max((dw2 / v.d).abs());
        if v.rho < st.min_rho {
            st.min_rho = v.rho;
            st.argmin_x = k;
        }
        if keep {
            st.psi1.push(v.psi1);
            st.psi2.push(v.psi2);
            st.rho.push(v.rho);
        }
        Ok(())
    })?;
    Ok(st)
}

/// psi values on the full (lambda, x) grid, rows indexed by lambda.
#[derive(Debug, Clone, Serialize)]
pub struct BoxGrid {
    pub lambdas: Vec<f64>,
    pub xs: Vec<f64>,
    pub psi1: Vec<Vec<f64>>,
    pub psi2: Vec<Vec<f64>>,
    pub rho: Vec<Vec<f64>>,
}

struct Sweep {
    grid: BoxGrid,
    c_g_min: f64,
    c_g_rate_max: f64,
    c_d_max: f64,
    delta_max: f64,
    min_rho: f64,
    argmin: (usize, usize),
}

fn sweep(problem: &SpectralProblem, hn: &HNodes, at: &BlockLambdaMatrix, keep: bool) -> Result<Sweep> {
    let lambdas = problem.lambda_grid();
    let cols: Vec<ColumnStats> = lambdas.par_iter().map(|&l| column(problem, hn, at, l, keep)).collect::<Result<_>>()?;
    let mut out = Sweep {
        grid: BoxGrid { lambdas, xs: hn.path.xs.clone(), psi1: vec![], psi2: vec![], rho: vec![] },
        c_g_min: f64::INFINITY,
        c_g_rate_max: 0.0,
        c_d_max: 0.0,
        delta_max: 0.0,
        min_rho: f64::INFINITY,
        argmin: (0, 0),
    };
    // Sequential reduction: ties go to the smaller lambda, then the smaller x.
    for (j, c) in cols.into_iter().enumerate() {
        out.c_g_min = out.c_g_min.min(c.c_g_min);
        out.c_g_rate_max = out.c_g_rate_max.max(c.c_g_rate_max);
        out.c_d_max = out.c_d_max.max(c.c_d_max);
        out.delta_max = out.delta_max.max(c.delta_max);
        if c.min_rho < out.min_rho {
            out.min_rho = c.min_rho;
            out.argmin = (j, c.argmin_x);
        }
        if keep {
            out.grid.psi1.push(c.psi1);
            out.grid.psi2.push(c.psi2);
            out.grid.rho.push(c.rho);
        }
    }
    Ok(out)
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// max |tr A| and max ||A||_2 over the grid. For lambda-affine fields the
/// lambda endpoints give the grid maximum exactly (both are convex in lambda).
fn coefficient_maxima(problem: &SpectralProblem) -> Result<(f64, f64)> {
    let lambdas = if problem.field.affine_in_lambda() {
        vec![problem.lambda1, problem.lambda2]
    } else {
        problem.lambda_grid()
    };
    let xs = problem.x_grid();
    let per_x: Vec<(f64, f64)> = xs
        .par_iter()
        .map(|&x| {
            let mut ca: f64 = 0.0;
            let mut cbig: f64 = 0.0;
            for &l in &lambdas {
                let a = problem.field.eval(x, l)?;
                ca = ca.max(a.trace().abs());
                cbig = cbig.max(a.singular_values().max());
            }
            Ok((ca, cbig))
        })
        .collect::<Result<_>>()?;
    Ok(per_x.into_iter().fold((0.0f64, 0.0f64), |(a, b), (c, d)| (a.max(c), b.max(d))))
}

/// (lambda2 - lambda1)/(c_g c_h) * max_x (kappa_{n-1}/alpha_n(x) + 1/kappa_2).
pub fn delta_bound_higher_order(problem: &SpectralProblem, c_g: f64, c_h: f64) -> Result<f64> {
    let ho = problem
        .field
        .higher_order()
        .ok_or_else(|| Error::InvalidInput("the Hadamard delta bound needs a higher-order companion problem".into()))?;
    let n = ho.order();
    let mut worst: f64 = 0.0;
    for x in problem.x_grid() {
        let an = ho.alphas[n].eval(x)?;
        let top = if n >= 3 { ho.kappa(n - 1) / an } else { 1.0 / an };
        let k2 = if n >= 3 { ho.kappa(2) } else { an };
        worst = worst.max(top + 1.0 / k2);
    }
    Ok((problem.lambda2 - problem.lambda1) / (c_g * c_h) * worst)
}

/// The two determinants of the asymptotic-invariance hypothesis for
/// higher-order problems (first row, middle rows, last row blocks of P and Q).
pub fn bc_conditions(problem: &SpectralProblem) -> Result<Option<BcConditions>> {
    let Some(ho) = problem.field.higher_order() else { return Ok(None) };
    let n = problem.n();
    let m = problem.m();
    // Composite Simpson on 1000 intervals.
    let steps = 1000;
    let mut integral = 0.0;
    for i in 0..=steps {
        let x = i as f64 / steps as f64;
        let w = if i == 0 || i == steps { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
        integral += w * (problem.lambda2 - ho.alphas[0].eval(x)?);
    }
    integral /= 3.0 * steps as f64;
    let (p, q) = (problem.p.matrix(), problem.q.matrix());
    let mut shifted = DMatrix::zeros(n, n);
    shifted.view_mut((0, 0), (n, m)).copy_from(p);
    shifted.view_mut((0, m), (n, n - m)).copy_from(q);
    let mut first = shifted.clone();
    for j in 0..n - m {
        shifted[(n - 1, m + j)] = q[(n - 1, j)] - integral * q[(0, j)];
        first[(n - 1, m + j)] = q[(0, j)];
    }
    for j in 0..m {
        first[(n - 1, j)] = 0.0;
    }
    let det_shifted = determinant(&shifted);
    let det_first_row = determinant(&first);
    let satisfied = det_shifted.abs() > 1e-12 || det_first_row.abs() > 1e-12;
    Ok(Some(BcConditions { integral, det_shifted, det_first_row, satisfied }))
}

pub fn constants_report(problem: &SpectralProblem) -> Result<InvarianceReport> {
    Ok(constants_and_sweep(problem, false)?.0)
}

#[allow(non_snake_case)]
fn constants_and_sweep(problem: &SpectralProblem, keep: bool) -> Result<(InvarianceReport, Sweep, HNodes)> {
    let at = problem.a_tilde()?;
    let hn = h_nodes(problem)?;
    let (C_a, C_A) = coefficient_maxima(problem)?;
    let sw = sweep(problem, &hn, &at, keep)?;
    let m = problem.m();
    let (c_g, c_g_source) = if m == 1 { (1.0, "exact") } else { (sw.c_g_min, "measured") };
    let C_g = factorial(m) * C_A / (c_g * c_g);
    let C_h = hn.big_c_h;
    let C_d = C_g + C_h;
    let (delta, delta_source) = if problem.field.higher_order().is_some() {
        (delta_bound_higher_order(problem, c_g, hn.c_h)?, "hadamard-bound")
    } else {
        (sw.delta_max, "grid-max")
    };
    let C = 2.0 * C_d + (2.0 * C_a).max(1.0) + 1.0;
    let rho0 = psi_rho(problem.p.matrix(), &hn.path.frames[0], &at)?.rho;
    let margin = rho0 - delta * delta / (2.0 * C) * (C.exp() - 1.0);
    let report = InvarianceReport {
        C_a,
        C_A,
        c_g,
        c_g_source: c_g_source.into(),
        c_h: hn.c_h,
        C_g,
        C_g_measured: sw.c_g_rate_max,
        C_h,
        C_d,
        C_d_measured: sw.c_d_max,
        delta,
        delta_source: delta_source.into(),
        delta_measured: sw.delta_max,
        C,
        rho0,
        margin,
        certified: margin > 0.0,
        bc_conditions: bc_conditions(problem)?,
        grid_min_rho: sw.min_rho,
    };
    Ok((report, sw, hn))
}

/// An interior zero of rho and its local contribution to m.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossPoint {
    pub x_star: f64,
    pub lambda_star: f64,
    pub rho: f64,
    pub i_minus: Option<usize>,
    pub i_plus: Option<usize>,
    pub local_m: Option<i32>,
    /// Half-height (x) and half-width (lambda) of the classification box.
    pub box_half_x: Option<f64>,
    pub box_half_lambda: Option<f64>,
    pub note: Option<String>,
}

impl LossPoint {
    pub fn new(x_star: f64, lambda_star: f64, rho: f64) -> Self {
        LossPoint { x_star, lambda_star, rho, i_minus: None, i_plus: None, local_m: None, box_half_x: None, box_half_lambda: None, note: None }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RhoScan {
    pub min_rho: f64,
    pub argmin_x: f64,
    pub argmin_lambda: f64,
    pub loss_points: Vec<LossPoint>,
    #[serde(skip)]
    pub grid: Option<BoxGrid>,
}

/// Evaluates psi at points near a fixed base node with fixed step counts, so the
/// discrete map is smooth in (x, lambda).
struct LocalEvaluator<'a> {
    problem: &'a SpectralProblem,
    h: &'a FramePath,
    at: &'a BlockLambdaMatrix,
    g_steps: usize,
    h_node: usize,
    h_steps: usize,
}

impl<'a> LocalEvaluator<'a> {
    fn new(problem: &'a SpectralProblem, h: &'a FramePath, at: &'a BlockLambdaMatrix, x: f64) -> Self {
        let step = problem.x_step();
        let h_node = ((x / step).round() as usize).min(problem.x_steps);
        LocalEvaluator { problem, h, at, g_steps: steps_for(x.max(step), step), h_node, h_steps: 8 }
    }

    fn at_point(&self, x: f64, lambda: f64) -> Result<OmegaPairValue> {
        let field = self.problem.field.as_ref();
        let g = if x > 0.0 {
            propagate_to(field, self.problem.p.matrix(), 0.0, x, self.g_steps, lambda, self.problem.rescale)?.0
        } else {
            self.problem.p.matrix().clone()
        };
        let x0 = self.h.xs[self.h_node];
        let hx = if x == x0 {
            self.h.frames[self.h_node].clone()
        } else {
            propagate_to(field, &self.h.frames[self.h_node], x0, x, self.h_steps, self.problem.lambda2, false)?.0
        };
        psi_rho(&g, &hx, self.at)
    }
}

/// psi1 samples for the classifier.
pub trait Psi1Field {
    fn psi1(&self, x: f64, lambda: f64) -> Result<f64>;

    /// psi1 at fixed lambda for increasing xs.
    fn psi1_along_x(&self, lambda: f64, xs: &[f64]) -> Result<Vec<f64>> {
        xs.iter().map(|&x| self.psi1(x, lambda)).collect()
    }
}

impl<F: Fn(f64, f64) -> f64> Psi1Field for F {
    fn psi1(&self, x: f64, lambda: f64) -> Result<f64> {
        Ok(self(x, lambda))
    }
}

struct ProblemPsi1<'a> {
    problem: &'a SpectralProblem,
    h: &'a FramePath,
    at: &'a BlockLambdaMatrix,
}

impl Psi1Field for ProblemPsi1<'_> {
    fn psi1(&self, x: f64, lambda: f64) -> Result<f64> {
        Ok(self.problem.pair_at(self.h, self.at, x, lambda)?.psi1)
    }

    fn psi1_along_x(&self, lambda: f64, xs: &[f64]) -> Result<Vec<f64>> {
        let p = self.problem;
        let field = p.field.as_ref();
        let step = p.x_step();
        let mut out = Vec::with_capacity(xs.len());
        let x0 = xs[0];
        let (mut g, _) = if x0 > 0.0 {
            propagate_to(field, p.p.matrix(), 0.0, x0, steps_for(x0, step), lambda, true)?
        } else {
            (p.p.matrix().clone(), 0.0)
        };
        let mut hx = local_frame(field, self.h, x0, p.lambda2, step / 8.0)?;
        out.push(psi_rho(&g, &hx, self.at)?.psi1);
        for w in xs.windows(2) {
            if w[1] == w[0] {
                out.push(*out.last().unwrap());
                continue;
            }
            let n = steps_for(w[1] - w[0], step / 4.0);
            g = propagate_to(field, &g, w[0], w[1], n, lambda, true)?.0;
            hx = propagate_to(field, &hx, w[0], w[1], n, p.lambda2, true)?.0;
            out.push(psi_rho(&g, &hx, self.at)?.psi1);
        }
        Ok(out)
    }
}

fn sign_changes(v: &[f64]) -> usize {
    let signs: Vec<f64> = v.iter().filter(|&&a| a != 0.0).map(|a| a.signum()).collect();
    signs.windows(2).filter(|w| w[0] != w[1]).count() + v.iter().filter(|&&a| a == 0.0).count()
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| if i + 1 == n { b } else { a + (b - a) * i as f64 / (n - 1) as f64 }).collect()
}

const SIDE_SAMPLES: usize = 128;
const CLASSIFY_ATTEMPTS: usize = 5;

/// Counts branches of {psi1 = 0} through the box [l* - w, l* + w] x [x* - h, x* + h]:
/// i_minus on the left side below x*, i_plus on the right side above x*.
/// Each attempt doubles h and halves w until no branch leaves through a horizontal side.
pub fn classify_with(
    field: &dyn Psi1Field,
    x_star: f64,
    lambda_star: f64,
    h0: f64,
    w0: f64,
    x_bounds: (f64, f64),
) -> Result<(usize, usize, f64, f64)> {
    let (mut h, mut w) = (h0, w0);
    for _ in 0..CLASSIFY_ATTEMPTS {
        let lo = (x_star - h).max(x_bounds.0);
        let hi = (x_star + h).min(x_bounds.1);
        let lambdas = linspace(lambda_star - w, lambda_star + w, SIDE_SAMPLES / 2);
        let mut clean = true;
        for x in [lo, hi] {
            let vals: Vec<f64> = lambdas.iter().map(|&l| field.psi1(x, l)).collect::<Result<_>>()?;
            if sign_changes(&vals) > 0 {
                clean = false;
                break;
            }
        }
        if clean {
            let below = field.psi1_along_x(lambda_star - w, &linspace(lo, x_star, SIDE_SAMPLES))?;
            let above = field.psi1_along_x(lambda_star + w, &linspace(x_star, hi, SIDE_SAMPLES))?;
            return Ok((sign_changes(&below), sign_changes(&above), h, w));
        }
        h *= 2.0;
        w *= 0.5;
    }
    Err(Error::NeedsFinerGrid {
        t: x_star,
        reason: format!("spectral curves near ({x_star}, {lambda_star}) keep leaving through horizontal sides"),
    })
}

/// Fills i_minus, i_plus and local_m = 2 (i_plus - i_minus). `others` are the
/// remaining loss points; one inside the classification box is an error.
pub fn classify_loss_point(problem: &SpectralProblem, point: &LossPoint, others: &[LossPoint]) -> Result<LossPoint> {
    let at = problem.a_tilde()?;
    let h = problem.h_path()?;
    classify_in(problem, &h, &at, point, others)
}

fn classify_in(problem: &SpectralProblem, h: &FramePath, at: &BlockLambdaMatrix, point: &LossPoint, others: &[LossPoint]) -> Result<LossPoint> {
    let field = ProblemPsi1 { problem, h, at };
    let h0 = 2.0 * problem.x_step();
    let w0 = 2.0 * problem.lambda_step();
    let (i_minus, i_plus, hx, wl) = classify_with(&field, point.x_star, point.lambda_star, h0, w0, (0.0, 1.0))?;
    for o in others {
        if o == point {
            continue;
        }
        if (o.x_star - point.x_star).abs() <= hx && (o.lambda_star - point.lambda_star).abs() <= wl {
            return Err(Error::NeedsFinerGrid {
                t: point.x_star,
                reason: format!("another loss point ({}, {}) lies in the classification box", o.x_star, o.lambda_star),
            });
        }
    }
    let mut out = point.clone();
    out.i_minus = Some(i_minus);
    out.i_plus = Some(i_plus);
    out.local_m = Some(2 * (i_plus as i32 - i_minus as i32));
    out.box_half_x = Some(hx);
    out.box_half_lambda = Some(wl);
    Ok(out)
}

/// Grid cells where both psi1 and psi2 change sign, plus small local minima of rho.
fn loss_candidates(grid: &BoxGrid) -> Vec<(usize, usize)> {
    let nl = grid.lambdas.len();
    let nx = grid.xs.len();
    let mut cands: Vec<(f64, usize, usize)> = Vec::new();
    let changes = |a: &Vec<Vec<f64>>, j: usize, i: usize| {
        let c = [a[j][i], a[j + 1][i], a[j][i + 1], a[j + 1][i + 1]];
        c.iter().any(|&v| v <= 0.0) && c.iter().any(|&v| v >= 0.0)
    };
    for j in 0..nl.saturating_sub(1) {
        for i in 0..nx.saturating_sub(1) {
            if changes(&grid.psi1, j, i) && changes(&grid.psi2, j, i) {
                let (mut best, mut bj, mut bi) = (f64::INFINITY, j, i);
                for (dj, di) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                    if grid.rho[j + dj][i + di] < best {
                        best = grid.rho[j + dj][i + di];
                        bj = j + dj;
                        bi = i + di;
                    }
                }
                cands.push((best, bj, bi));
            }
        }
    }
    for j in 1..nl.saturating_sub(1) {
        for i in 1..nx.saturating_sub(1) {
            let r = grid.rho[j][i];
            if r < CANDIDATE_RHO && (j - 1..=j + 1).all(|a| (i - 1..=i + 1).all(|b| grid.rho[a][b] >= r)) {
                cands.push((r, j, i));
            }
        }
    }
    cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut kept: Vec<(usize, usize)> = Vec::new();
    for (_, j, i) in cands {
        if kept.iter().all(|&(kj, ki)| kj.abs_diff(j) > 3 || ki.abs_diff(i) > 3) {
            kept.push((j, i));
        }
        if kept.len() >= 64 {
            break;
        }
    }
    kept
}

/// Newton on (psi1, psi2) = 0 from (x, lambda) with finite-difference Jacobian.
fn newton_polish(ev: &LocalEvaluator, mut x: f64, mut l: f64, max_dx: f64, max_dl: f64) -> Result<Option<(f64, f64, f64)>> {
    let (x0, l0) = (x, l);
    let f = |x: f64, l: f64| -> Result<(f64, f64)> {
        let v = ev.at_point(x, l)?;
        Ok((v.psi1, v.psi2))
    };
    for _ in 0..40 {
        let (a, b) = f(x, l)?;
        if a.hypot(b) < 1e-14 {
            break;
        }
        let ex = 1e-7;
        let el = 1e-7 * l.abs().max(1.0);
        let (ax, bx) = f(x + ex, l)?;
        let (al, bl) = f(x, l + el)?;
        let j = [[(ax - a) / ex, (al - a) / el], [(bx - b) / ex, (bl - b) / el]];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if det == 0.0 || !det.is_finite() {
            return Ok(None);
        }
        let dx = (a * j[1][1] - b * j[0][1]) / det;
        let dl = (j[0][0] * b - j[1][0] * a) / det;
        x -= dx;
        l -= dl;
        if (x - x0).abs() > max_dx || (l - l0).abs() > max_dl || !(0.0..=1.0).contains(&x) {
            return Ok(None);
        }
        if dx.abs() < 1e-15 && dl.abs() < 1e-15 * l.abs().max(1.0) {
            break;
        }
    }
    Ok(Some((x, l, ev.at_point(x, l)?.rho)))
}

/// Two-stage refinement: `rounds` local grids (each 10x finer, 21 x 21 points), then Newton.
fn refine_candidate(problem: &SpectralProblem, h: &FramePath, at: &BlockLambdaMatrix, x: f64, l: f64, rounds: usize) -> Result<Option<LossPoint>> {
    let (dx, dl) = (problem.x_step(), problem.lambda_step());
    let (mut bx, mut bl) = (x, l);
    let mut best = f64::INFINITY;
    for r in 1..=rounds {
        let sx = dx / 10f64.powi(r as i32);
        let sl = dl / 10f64.powi(r as i32);
        let ev = LocalEvaluator::new(problem, h, at, bx);
        let pts: Vec<(f64, f64)> = (-10..=10)
            .flat_map(|a| (-10..=10).map(move |b| (a, b)))
            .map(|(a, b)| ((bx + a as f64 * sx).clamp(0.0, 1.0), (bl + b as f64 * sl).clamp(problem.lambda1, problem.lambda2)))
            .collect();
        let vals: Vec<f64> = pts.par_iter().map(|&(px, pl)| ev.at_point(px, pl).map(|v| v.rho)).collect::<Result<_>>()?;
        for (p, v) in pts.iter().zip(vals) {
            if v < best {
                best = v;
                bx = p.0;
                bl = p.1;
            }
        }
    }
    let ev = LocalEvaluator::new(problem, h, at, bx);
    let polished = newton_polish(&ev, bx, bl, 3.0 * dx, 3.0 * dl)?;
    let (px, pl, pr) = match polished {
        Some(p) if p.2 <= best.max(LOSS_TOL) => p,
        _ => (bx, bl, ev.at_point(bx, bl)?.rho),
    };
    let interior = px > 0.0 && px < 1.0 && pl > problem.lambda1 && pl < problem.lambda2;
    Ok((pr < LOSS_TOL && interior).then(|| LossPoint::new(px, pl, pr)))
}

/// Full-box rho scan: global minimum, refined loss points, and their classification.
pub fn rho_grid_scan(problem: &SpectralProblem) -> Result<RhoScan> {
    rho_grid_scan_with(problem, DEFAULT_REFINE_ROUNDS)
}

pub fn rho_grid_scan_with(problem: &SpectralProblem, refine_rounds: usize) -> Result<RhoScan> {
    Ok(scan_with_report(problem, refine_rounds)?.1)
}

/// Constants report and full scan from a single sweep of the box.
pub fn scan_with_report(problem: &SpectralProblem, refine_rounds: usize) -> Result<(InvarianceReport, RhoScan)> {
    let (report, sw, hn) = constants_and_sweep(problem, true)?;
    let at = problem.a_tilde()?;
    let grid = sw.grid;
    let cands = loss_candidates(&grid);
    let mut points: Vec<LossPoint> = Vec::new();
    for (j, i) in cands {
        if let Some(p) = refine_candidate(problem, &hn.path, &at, grid.xs[i], grid.lambdas[j], refine_rounds)? {
            let dup = points.iter().any(|q| (q.x_star - p.x_star).abs() < 1e-6 && (q.lambda_star - p.lambda_star).abs() < 1e-6 * p.lambda_star.abs().max(1.0));
            if !dup {
                points.push(p);
            }
        }
    }
    points.sort_by(|a, b| a.lambda_star.total_cmp(&b.lambda_star).then(a.x_star.total_cmp(&b.x_star)));
    let classified = points
        .iter()
        .map(|p| match classify_in(problem, &hn.path, &at, p, &points) {
            Ok(c) => c,
            Err(e) => {
                let mut c = p.clone();
                c.note = Some(e.to_string());
                c
            }
        })
        .collect();
    let (j, i) = sw.argmin;
    let scan = RhoScan {
        min_rho: sw.min_rho,
        argmin_x: grid.xs[i],
        argmin_lambda: grid.lambdas[j],
        loss_points: classified,
        grid: Some(grid),
    };
    Ok((report, scan))
}

/// Just the psi grid (for plots) without constants.
pub fn box_grid(problem: &SpectralProblem) -> Result<BoxGrid> {
    let at = problem.a_tilde()?;
    let hn = h_nodes(problem)?;
    Ok(sweep(problem, &hn, &at, true)?.grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_classification() {
        let fold_right = |x: f64, l: f64| l - 0.3 - (x - 0.5) * (x - 0.5);
        let (im, ip, _, _) = classify_with(&fold_right, 0.5, 0.3, 0.01, 0.01, (0.0, 1.0)).unwrap();
        assert_eq!(2 * (ip as i32 - im as i32), 2);
        let fold_left = |x: f64, l: f64| l - 0.3 + (x - 0.5) * (x - 0.5);
        let (im, ip, _, _) = classify_with(&fold_left, 0.5, 0.3, 0.01, 0.01, (0.0, 1.0)).unwrap();
        assert_eq!((im, ip), (1, 0));
        let line = |x: f64, l: f64| (l - 0.3) - 5.0 * (x - 0.5);
        let (im, ip, _, _) = classify_with(&line, 0.5, 0.3, 0.01, 0.01, (0.0, 1.0)).unwrap();
        assert_eq!((im, ip), (1, 1));
    }
}
