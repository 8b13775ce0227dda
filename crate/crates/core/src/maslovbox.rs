//! The Maslov box [0,1] x [lambda1, lambda2]: shelves, their indices, the
//! renormalized left-shelf count, top-shelf eigenvalues and the lower bound
//! |ind_left + m|.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::multilinear::{omega1_eval, omega2_eval, psi_rho, BlockLambdaMatrix, Frame, OmegaPairValue};
use crate::propagation::{check_assumption_b, integrate_frame, propagate_to, steps_for, CoefficientField, FramePath};
use crate::winding::{detect_crossings, winding_index, CrossingKind, CrossingRecord, PathSamples};

pub const DEFAULT_X_STEPS: usize = 1000;
pub const DEFAULT_LAMBDA_STEPS: usize = 600;
/// |psi1(1; lambda)| below this without a sign change marks a degenerate candidate.
pub const DEGENERATE_TOL: f64 = 1e-7;
/// Allowed deviation of the crossing ratio from 1.
pub const AUDIT_TOL: f64 = 1e-3;

#[derive(Clone)]
pub struct SpectralProblem {
    pub name: String,
    pub field: Arc<dyn CoefficientField>,
    pub p: Frame,
    pub q: Frame,
    pub lambda1: f64,
    pub lambda2: f64,
    pub x_steps: usize,
    pub lambda_steps: usize,
    pub rescale: bool,
}

impl fmt::Debug for SpectralProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpectralProblem")
            .field("name", &self.name)
            .field("n", &self.n())
            .field("m", &self.m())
            .field("lambda", &(self.lambda1, self.lambda2))
            .field("grid", &(self.x_steps, self.lambda_steps))
            .finish()
    }
}

impl SpectralProblem {
    pub fn new(field: Arc<dyn CoefficientField>, p: Frame, q: Frame, lambda1: f64, lambda2: f64) -> Result<Self> {
        let n = field.dim();
        if p.nrows() != n || q.nrows() != n || p.ncols() + q.ncols() != n {
            return Err(Error::InvalidInput(format!(
                "boundary frames {}x{} and {}x{} do not fit dimension {n}",
                p.nrows(),
                p.ncols(),
                q.nrows(),
                q.ncols()
            )));
        }
        let prob = SpectralProblem {
            name: String::from("custom"),
            field,
            p,
            q,
            lambda1,
            lambda2,
            x_steps: DEFAULT_X_STEPS,
            lambda_steps: DEFAULT_LAMBDA_STEPS,
            rescale: true,
        };
        prob.validate()?;
        Ok(prob)
    }

    fn validate(&self) -> Result<()> {
        if !(self.lambda1 < self.lambda2) || !self.lambda1.is_finite() || !self.lambda2.is_finite() {
            return Err(Error::InvalidInput(format!(
                "need finite lambda1 < lambda2, got [{}, {}]",
                self.lambda1, self.lambda2
            )));
        }
        if self.x_steps == 0 || self.lambda_steps == 0 {
            return Err(Error::InvalidInput("grid resolutions must be positive".into()));
        }
        Ok(())
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn with_grid(mut self, x_steps: usize, lambda_steps: usize) -> Result<Self> {
        self.x_steps = x_steps;
        self.lambda_steps = lambda_steps;
        self.validate()?;
        Ok(self)
    }

    pub fn with_lambda(mut self, lambda1: f64, lambda2: f64) -> Result<Self> {
        self.lambda1 = lambda1;
        self.lambda2 = lambda2;
        self.validate()?;
        Ok(self)
    }

    pub fn with_rescale(mut self, rescale: bool) -> Self {
        self.rescale = rescale;
        self
    }

    pub fn n(&self) -> usize {
        self.field.dim()
    }

    pub fn m(&self) -> usize {
        self.p.ncols()
    }

    pub fn x_step(&self) -> f64 {
        1.0 / self.x_steps as f64
    }

    pub fn lambda_step(&self) -> f64 {
        (self.lambda2 - self.lambda1) / self.lambda_steps as f64
    }

    pub fn a_tilde(&self) -> Result<BlockLambdaMatrix> {
        crate::multilinear::build_a_tilde(self.field.as_ref(), self.lambda1, self.lambda2)
    }

    /// lambda_steps + 1 values with exact endpoints.
    pub fn lambda_grid(&self) -> Vec<f64> {
        let h = self.lambda_step();
        (0..=self.lambda_steps)
            .map(|k| if k == self.lambda_steps { self.lambda2 } else { self.lambda1 + h * k as f64 })
            .collect()
    }

    pub fn x_grid(&self) -> Vec<f64> {
        (0..=self.x_steps)
            .map(|k| if k == self.x_steps { 1.0 } else { k as f64 / self.x_steps as f64 })
            .collect()
    }

    /// G(.; lambda) from P at x = 0.
    pub fn g_path(&self, lambda: f64) -> Result<FramePath> {
        integrate_frame(self.field.as_ref(), self.p.matrix(), 0.0, 1.0, self.x_steps, lambda, self.rescale)
    }

    /// H(.; lambda2) from Q at x = 1.
    pub fn h_path(&self) -> Result<FramePath> {
        integrate_frame(self.field.as_ref(), self.q.matrix(), 1.0, 0.0, self.x_steps, self.lambda2, self.rescale)
    }

    /// G(1; lambda) and its scale log.
    pub fn g_end(&self, lambda: f64) -> Result<(DMatrix<f64>, f64)> {
        propagate_to(self.field.as_ref(), self.p.matrix(), 0.0, 1.0, self.x_steps, lambda, self.rescale)
    }

    /// (psi1, psi2) at an arbitrary (x, lambda), propagating G from 0 and H
    /// from the nearest stored node of `h`.
    pub fn pair_at(&self, h: &FramePath, at: &BlockLambdaMatrix, x: f64, lambda: f64) -> Result<OmegaPairValue> {
        let step = self.x_step();
        let g = if x <= 0.0 {
            self.p.matrix().clone()
        } else {
            propagate_to(self.field.as_ref(), self.p.matrix(), 0.0, x, steps_for(x, step), lambda, self.rescale)?.0
        };
        let hx = local_frame(self.field.as_ref(), h, x, self.lambda2, step)?;
        psi_rho(&g, &hx, at)
    }

    pub fn assumption_b(&self) -> Result<bool> {
        if self.field.structural_b() {
            return Ok(true);
        }
        check_assumption_b(self.field.as_ref(), self.lambda1, self.lambda2)
    }
}

/// Frame of `path` carried from its nearest node to `x` (unscaled relative to that node).
pub fn local_frame(field: &dyn CoefficientField, path: &FramePath, x: f64, lambda: f64, max_step: f64) -> Result<DMatrix<f64>> {
    let k = nearest_node(&path.xs, x);
    let x0 = path.xs[k];
    if (x - x0).abs() < 1e-15 {
        return Ok(path.frames[k].clone());
    }
    Ok(propagate_to(field, &path.frames[k], x0, x, steps_for(x - x0, max_step), lambda, false)?.0)
}

fn nearest_node(xs: &[f64], x: f64) -> usize {
    let n = xs.len();
    let h = (xs[n - 1] - xs[0]) / (n - 1) as f64;
    (((x - xs[0]) / h).round().max(0.0) as usize).min(n - 1)
}

/// Pointwise pairing of two frame paths on the same x grid.
pub fn pair_paths(g: &FramePath, h: &FramePath, at: &BlockLambdaMatrix) -> Result<PathSamples> {
    if g.len() != h.len() {
        return Err(Error::InvalidInput("frame paths live on different grids".into()));
    }
    let values = g.frames.iter().zip(&h.frames).map(|(gf, hf)| psi_rho(gf, hf, at)).collect::<Result<Vec<_>>>()?;
    let scale = g.scale_log.iter().zip(&h.scale_log).map(|(a, b)| a + b).collect();
    Ok(PathSamples::new(g.xs.clone(), values)?.with_scale_log(scale))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Shelf {
    Bottom,
    Right,
    Top,
    Left,
}

impl Shelf {
    pub const ALL: [Shelf; 4] = [Shelf::Bottom, Shelf::Right, Shelf::Top, Shelf::Left];

    pub fn name(self) -> &'static str {
        match self {
            Shelf::Bottom => "bottom",
            Shelf::Right => "right",
            Shelf::Top => "top",
            Shelf::Left => "left",
        }
    }
}

impl fmt::Display for Shelf {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Top shelf psi values on the lambda grid (lambda increasing).
fn top_path(problem: &SpectralProblem, at: &BlockLambdaMatrix) -> Result<PathSamples> {
    let lambdas = problem.lambda_grid();
    let q = problem.q.matrix();
    let rows = lambdas
        .par_iter()
        .map(|&l| {
            let (g, s) = problem.g_end(l)?;
            Ok((psi_rho(&g, q, at)?, s))
        })
        .collect::<Result<Vec<_>>>()?;
    let (values, scale): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    Ok(PathSamples::new(lambdas, values)?.with_scale_log(scale))
}

fn bottom_path(problem: &SpectralProblem, h: &FramePath, at: &BlockLambdaMatrix) -> Result<PathSamples> {
    let v = psi_rho(problem.p.matrix(), &h.frames[0], at)?;
    let lambdas = problem.lambda_grid();
    let n = lambdas.len();
    Ok(PathSamples::new(lambdas, vec![v; n])?.with_scale_log(vec![h.scale_log[0]; n]))
}

/// Samples of one shelf, parametrized increasingly (x for left/right, lambda
/// for bottom/top). The box orientation enters through the signs in m.
pub fn shelf_path(problem: &SpectralProblem, shelf: Shelf) -> Result<PathSamples> {
    let at = problem.a_tilde()?;
    let h = problem.h_path()?;
    shelf_path_with(problem, shelf, &h, &at)
}

fn shelf_path_with(problem: &SpectralProblem, shelf: Shelf, h: &FramePath, at: &BlockLambdaMatrix) -> Result<PathSamples> {
    match shelf {
        Shelf::Bottom => bottom_path(problem, h, at),
        Shelf::Right => pair_paths(&problem.g_path(problem.lambda2)?, h, at),
        Shelf::Top => top_path(problem, at),
        Shelf::Left => pair_paths(&problem.g_path(problem.lambda1)?, h, at),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AuditEntry {
    pub x: f64,
    pub ratio: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct EigenvalueScan {
    pub eigenvalues: Vec<f64>,
    /// Near-zeros of psi1(1; .) without a sign change; not refined.
    pub degenerate: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BoxShelves {
    pub bottom: PathSamples,
    pub right: PathSamples,
    pub top: PathSamples,
    pub left: PathSamples,
}

impl BoxShelves {
    pub fn get(&self, shelf: Shelf) -> &PathSamples {
        match shelf {
            Shelf::Bottom => &self.bottom,
            Shelf::Right => &self.right,
            Shelf::Top => &self.top,
            Shelf::Left => &self.left,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MaslovBoxReport {
    pub lambda1: f64,
    pub lambda2: f64,
    pub ind_bottom: i32,
    pub ind_right: i32,
    pub ind_top: i32,
    pub ind_left: i32,
    pub m_frak: i32,
    pub lower_bound: u32,
    pub left_crossings: Vec<f64>,
    pub eigenvalues: Vec<f64>,
    pub degenerate_candidates: Vec<f64>,
    pub monotonicity: Vec<AuditEntry>,
    pub monotonicity_violations: Vec<AuditEntry>,
    pub left_records: Vec<CrossingRecord>,
    pub top_records: Vec<CrossingRecord>,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub shelves: Option<BoxShelves>,
}

pub const EIGEN_TOL: f64 = 1e-10;

pub fn compute_box(problem: &SpectralProblem) -> Result<MaslovBoxReport> {
    let at = problem.a_tilde()?;
    let h = problem.h_path()?;
    let g1 = problem.g_path(problem.lambda1)?;
    let left = pair_paths(&g1, &h, &at)?;
    let right = pair_paths(&problem.g_path(problem.lambda2)?, &h, &at)?;
    let bottom = bottom_path(problem, &h, &at)?;
    let top = top_path(problem, &at)?;

    let index = |path: &PathSamples, shelf: Shelf| winding_index(path).map_err(|e| e.at_place(&format!("{shelf} shelf")));
    let (ind_bottom, _) = index(&bottom, Shelf::Bottom)?;
    let (ind_right, _) = index(&right, Shelf::Right)?;
    let (ind_top, top_records) = index(&top, Shelf::Top)?;
    let (ind_left, left_records) = index(&left, Shelf::Left)?;

    let mut warnings = Vec::new();
    for (shelf, ind) in [(Shelf::Bottom, ind_bottom), (Shelf::Right, ind_right)] {
        if ind != 0 {
            warnings.push(format!("{shelf} shelf index is {ind}, expected 0"));
        }
    }
    if right.values.iter().all(|v| v.psi1.abs() <= crate::winding::ZERO_TOL) {
        warnings.push("lambda2 appears to be an eigenvalue (psi1 vanishes along the right shelf)".into());
    }

    let scan = eigen_from_top(problem, &top, EIGEN_TOL)?;
    let monotonicity = audit_records(problem, &g1, &h, &at, &left_records)?;
    let monotonicity_violations: Vec<AuditEntry> = monotonicity.iter().filter(|a| !a.ok).cloned().collect();
    if !problem.assumption_b()? {
        warnings.push("assumption (B) fails; left-shelf crossings need not be monotone".into());
    }

    let m_frak = ind_bottom + ind_right - ind_top - ind_left;
    let lower_bound = (ind_left + m_frak).unsigned_abs();
    if (lower_bound as usize) > scan.eigenvalues.len() + scan.degenerate.len() {
        warnings.push(format!(
            "lower bound {lower_bound} exceeds the {} localized eigenvalues; refine the lambda grid",
            scan.eigenvalues.len()
        ));
    }
    let left_crossings = left_records.iter().filter(|r| r.t_star > 0.0).map(|r| r.t_star).collect();
    Ok(MaslovBoxReport {
        lambda1: problem.lambda1,
        lambda2: problem.lambda2,
        ind_bottom,
        ind_right,
        ind_top,
        ind_left,
        m_frak,
        lower_bound,
        left_crossings,
        eigenvalues: scan.eigenvalues,
        degenerate_candidates: scan.degenerate,
        monotonicity,
        monotonicity_violations,
        left_records,
        top_records,
        warnings,
        shelves: Some(BoxShelves { bottom, right, top, left }),
    })
}

/// Left-shelf intersections at x in (0, 1]; x = 0 is excluded.
pub fn renormalized_count(problem: &SpectralProblem) -> Result<(usize, Vec<f64>)> {
    if !problem.assumption_b()? {
        return Err(Error::AssumptionB("the renormalized count needs diagonal entries free of lambda and x-independent off-diagonal lambda differences".into()));
    }
    let left = shelf_path(problem, Shelf::Left)?;
    let records = detect_crossings(&left).map_err(|e| e.at_place("left shelf"))?;
    let xs: Vec<f64> = records.iter().filter(|r| r.t_star > 0.0).map(|r| r.t_star).collect();
    Ok((xs.len(), xs))
}

/// Sign changes of psi1(1; .) on the lambda grid refined by bisection to width <= tol.
/// Only the sign of omega1 is used, so this works without invariance on the top shelf.
pub fn localize_eigenvalues_top(problem: &SpectralProblem, tol: f64) -> Result<EigenvalueScan> {
    let at = problem.a_tilde()?;
    let top = top_path(problem, &at)?;
    eigen_from_top(problem, &top, tol)
}

fn eigen_from_top(problem: &SpectralProblem, top: &PathSamples, tol: f64) -> Result<EigenvalueScan> {
    let q = problem.q.matrix();
    let sign_at = |l: f64| -> Result<f64> {
        let (g, _) = problem.g_end(l)?;
        omega1_eval(&g, q)
    };
    let psi: Vec<f64> = top.values.iter().map(|v| v.psi1).collect();
    let ls = &top.ts;
    let n = psi.len();
    let mut out = EigenvalueScan::default();
    for k in 0..n {
        if psi[k] == 0.0 {
            out.eigenvalues.push(ls[k]);
            continue;
        }
        if k + 1 < n && psi[k + 1] != 0.0 && psi[k].signum() != psi[k + 1].signum() {
            let (mut a, mut b) = (ls[k], ls[k + 1]);
            let sa = psi[k].signum();
            while b - a > tol {
                let mid = 0.5 * (a + b);
                let sm = sign_at(mid)?;
                if sm == 0.0 {
                    a = mid;
                    b = mid;
                    break;
                }
                if sm.signum() == sa {
                    a = mid;
                } else {
                    b = mid;
                }
                if mid == a && mid == b {
                    break;
                }
            }
            out.eigenvalues.push(0.5 * (a + b));
        } else if k > 0 && k + 1 < n {
            let (l, c, r) = (psi[k - 1].abs(), psi[k].abs(), psi[k + 1].abs());
            if c < DEGENERATE_TOL && c <= l && c <= r && psi[k - 1].signum() == psi[k + 1].signum() {
                out.degenerate.push(ls[k]);
            }
        }
    }
    Ok(out)
}

/// d/dx of f at x with step h, one-sided near the ends of [lo, hi].
fn derivative(f: &dyn Fn(f64) -> Result<f64>, x: f64, h: f64, lo: f64, hi: f64) -> Result<f64> {
    if x - h >= lo && x + h <= hi {
        Ok((f(x + h)? - f(x - h)?) / (2.0 * h))
    } else if x + 2.0 * h <= hi {
        Ok((-3.0 * f(x)? + 4.0 * f(x + h)? - f(x + 2.0 * h)?) / (2.0 * h))
    } else {
        Ok((3.0 * f(x)? - 4.0 * f(x - h)? + f(x - 2.0 * h)?) / (2.0 * h))
    }
}

/// omega1'/omega2 at a crossing of the pairing (G(.; lambda), H(.; lambda2)), evaluated
/// on frames carried locally (unscaled) from node `k` of the stored paths.
pub fn crossing_ratio(
    problem: &SpectralProblem,
    g: &FramePath,
    h: &FramePath,
    at: &BlockLambdaMatrix,
    x_guess: f64,
) -> Result<(f64, f64)> {
    let field = problem.field.as_ref();
    let step = problem.x_step();
    let k = nearest_node(&g.xs, x_guess);
    let x0 = g.xs[k];
    let fine = step / 16.0;
    let frames_at = |x: f64| -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        if (x - x0).abs() < 1e-15 {
            return Ok((g.frames[k].clone(), h.frames[k].clone()));
        }
        let n = steps_for(x - x0, fine);
        let gx = propagate_to(field, &g.frames[k], x0, x, n, g.lambda, false)?.0;
        let hx = propagate_to(field, &h.frames[k], x0, x, n, h.lambda, false)?.0;
        Ok((gx, hx))
    };
    let w1 = |x: f64| -> Result<f64> {
        let (gx, hx) = frames_at(x)?;
        omega1_eval(&gx, &hx)
    };
    // Secant polish of the crossing location.
    let mut x = x_guess;
    let mut fx = w1(x)?;
    let mut xp = (x + 0.1 * step).min(1.0);
    if xp == x {
        xp = x - 0.1 * step;
    }
    let mut fp = w1(xp)?;
    for _ in 0..6 {
        if fx == fp || fx == 0.0 {
            break;
        }
        let xn = (x - fx * (x - xp) / (fx - fp)).clamp(0.0, 1.0);
        if (xn - x).abs() > 2.0 * step {
            break;
        }
        xp = x;
        fp = fx;
        x = xn;
        fx = w1(x)?;
        if (x - xp).abs() < 1e-14 {
            break;
        }
    }
    let slope = derivative(&w1, x, step, 0.0, 1.0)?;
    let (gx, hx) = frames_at(x)?;
    let w2 = omega2_eval(&gx, &hx, at)?;
    Ok((x, slope / w2))
}

fn audit_records(
    problem: &SpectralProblem,
    g: &FramePath,
    h: &FramePath,
    at: &BlockLambdaMatrix,
    records: &[CrossingRecord],
) -> Result<Vec<AuditEntry>> {
    records
        .iter()
        .filter(|r| r.kind != CrossingKind::Interval)
        .map(|r| {
            let (x, ratio) = crossing_ratio(problem, g, h, at, r.t_star)?;
            Ok(AuditEntry { x, ratio, ok: (ratio - 1.0).abs() <= AUDIT_TOL })
        })
        .collect()
}

/// omega1'/omega2 at every left-shelf crossing; each should be 1 under (B).
pub fn monotonicity_audit(problem: &SpectralProblem) -> Result<Vec<AuditEntry>> {
    let at = problem.a_tilde()?;
    let h = problem.h_path()?;
    let g = problem.g_path(problem.lambda1)?;
    let left = pair_paths(&g, &h, &at)?;
    let records = detect_crossings(&left).map_err(|e| e.at_place("left shelf"))?;
    audit_records(problem, &g, &h, &at, &records)
}
