//! Determinant evaluation of the n-forms omega1/omega2 and the Gram normalizations.
//!
//! Stacked frames F = (G 0; 0 H) live in R^{2n}; omega1(F) = det(F, Dt) with
//! Dt = (-I; I), which collapses to det(U + V) for F = (U; V).

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::propagation::CoefficientField;

/// Relative rank tolerance: d / (product of column norms) must exceed this.
pub const RANK_TOL: f64 = 1e-12;

/// An n x m basis of an m-dimensional subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame(DMatrix<f64>);

impl Frame {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.ncols() == 0 || m.ncols() > m.nrows() {
            return Err(Error::InvalidInput(format!(
                "frame must be n x m with 1 <= m <= n, got {} x {}",
                m.nrows(),
                m.ncols()
            )));
        }
        gram_volume(&m)?;
        Ok(Frame(m))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if n == 0 || rows.iter().any(|r| r.len() != m) {
            return Err(Error::InvalidInput("frame rows must be non-empty and of equal length".into()));
        }
        Frame::new(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn nrows(&self) -> usize {
        self.0.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.0.ncols()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.0.row_iter().map(|r| r.iter().copied().collect()).collect()
    }
}

impl AsRef<DMatrix<f64>> for Frame {
    fn as_ref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// Determinant by LU with partial pivoting.
pub fn determinant(a: &DMatrix<f64>) -> f64 {
    assert_eq!(a.nrows(), a.ncols(), "determinant of a non-square matrix");
    let n = a.nrows();
    let mut lu: Vec<f64> = a.as_slice().to_vec(); // column-major
    let mut det = 1.0;
    for k in 0..n {
        let mut p = k;
        let mut best = lu[k + k * n].abs();
        for i in k + 1..n {
            let v = lu[i + k * n].abs();
            if v > best {
                best = v;
                p = i;
            }
        }
        if best == 0.0 {
            return 0.0;
        }
        if p != k {
            for j in 0..n {
                lu.swap(k + j * n, p + j * n);
            }
            det = -det;
        }
        let pivot = lu[k + k * n];
        det *= pivot;
        for i in k + 1..n {
            let f = lu[i + k * n] / pivot;
            if f != 0.0 {
                for j in k + 1..n {
                    lu[i + j * n] -= f * lu[k + j * n];
                }
            }
        }
    }
    det
}

/// |g_1 ^ ... ^ g_m| = sqrt(det Gram).
pub fn gram_volume(g: &DMatrix<f64>) -> Result<f64> {
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("frame has non-finite entries".into()));
    }
    let norms: f64 = g.column_iter().map(|c| c.norm()).product();
    if norms == 0.0 {
        return Err(Error::RankDeficient("zero column".into()));
    }
    if g.ncols() == 1 {
        return Ok(norms);
    }
    let gram = g.transpose() * g;
    let det = determinant(&gram);
    if !(det > RANK_TOL * RANK_TOL * norms * norms) {
        return Err(Error::RankDeficient(format!(
            "Gram determinant {det:e} vs column-norm product {norms:e}"
        )));
    }
    Ok(det.sqrt())
}

/// Ratio d / (product of column norms), in (0, 1].
pub fn volume_ratio(g: &DMatrix<f64>) -> Result<f64> {
    let norms: f64 = g.column_iter().map(|c| c.norm()).product();
    Ok(gram_volume(g)? / norms)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OmegaPairValue {
    pub omega1: f64,
    pub omega2: f64,
    pub d: f64,
    pub psi1: f64,
    pub psi2: f64,
    pub rho: f64,
}

impl OmegaPairValue {
    pub fn from_parts(omega1: f64, omega2: f64, d: f64) -> Self {
        let psi1 = omega1 / d;
        let psi2 = omega2 / d;
        OmegaPairValue { omega1, omega2, d, psi1, psi2, rho: 0.5 * (psi1 * psi1 + psi2 * psi2) }
    }

    /// Same point with omega and d multiplied by exp(log_scale); psi/rho unchanged.
    pub fn unscaled(&self, log_scale: f64) -> Self {
        let s = log_scale.exp();
        OmegaPairValue { omega1: self.omega1 * s, omega2: self.omega2 * s, d: self.d * s, ..*self }
    }
}

/// blockdiag(At(lambda1), At(lambda2)); At keeps the off-diagonal of A(0; lambda).
#[derive(Debug, Clone, PartialEq)]
pub struct BlockLambdaMatrix {
    pub lambda1: f64,
    pub lambda2: f64,
    pub block1: DMatrix<f64>,
    pub block2: DMatrix<f64>,
    diff: DMatrix<f64>,
}

impl BlockLambdaMatrix {
    pub fn new(lambda1: f64, lambda2: f64, a1: &DMatrix<f64>, a2: &DMatrix<f64>) -> Result<Self> {
        if !a1.is_square() || a1.shape() != a2.shape() {
            return Err(Error::InvalidInput("A-tilde blocks must be square and equal-sized".into()));
        }
        let block1 = offdiagonal_part(a1);
        let block2 = offdiagonal_part(a2);
        let diff = &block2 - &block1;
        Ok(BlockLambdaMatrix { lambda1, lambda2, block1, block2, diff })
    }

    pub fn n(&self) -> usize {
        self.block1.nrows()
    }

    /// The full 2n x 2n block-diagonal matrix.
    pub fn dense(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut m = DMatrix::zeros(2 * n, 2 * n);
        m.view_mut((0, 0), (n, n)).copy_from(&self.block1);
        m.view_mut((n, n), (n, n)).copy_from(&self.block2);
        m
    }

    /// At(lambda2) - At(lambda1).
    pub fn difference(&self) -> &DMatrix<f64> {
        &self.diff
    }
}

pub fn offdiagonal_part(a: &DMatrix<f64>) -> DMatrix<f64> {
    let mut b = a.clone();
    b.fill_diagonal(0.0);
    b
}

pub fn build_a_tilde(field: &dyn CoefficientField, lambda1: f64, lambda2: f64) -> Result<BlockLambdaMatrix> {
    BlockLambdaMatrix::new(lambda1, lambda2, &field.eval(0.0, lambda1)?, &field.eval(0.0, lambda2)?)
}

fn check_pair(g: &DMatrix<f64>, h: &DMatrix<f64>) -> Result<usize> {
    let n = g.nrows();
    if h.nrows() != n || g.ncols() + h.ncols() != n {
        return Err(Error::InvalidInput(format!(
            "frames {}x{} and {}x{} do not pair in dimension {n}",
            g.nrows(),
            g.ncols(),
            h.nrows(),
            h.ncols()
        )));
    }
    Ok(n)
}

fn hstack(g: &DMatrix<f64>, h: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, m) = g.shape();
    let mut out = DMatrix::zeros(n, n);
    out.view_mut((0, 0), (n, m)).copy_from(g);
    out.view_mut((0, m), (n, h.ncols())).copy_from(h);
    out
}

/// det [G H].
pub fn omega1_eval(g: &DMatrix<f64>, h: &DMatrix<f64>) -> Result<f64> {
    check_pair(g, h)?;
    Ok(determinant(&hstack(g, h)))
}

/// Sum over the n columns of [G H], each replaced by its image under the
/// matching A-tilde block: G columns see At(lambda1), H columns see At(lambda2).
pub fn omega2_eval(g: &DMatrix<f64>, h: &DMatrix<f64>, at: &BlockLambdaMatrix) -> Result<f64> {
    let n = check_pair(g, h)?;
    if at.n() != n {
        return Err(Error::InvalidInput(format!("A-tilde has size {} but frames live in R^{n}", at.n())));
    }
    let m = g.ncols();
    let base = hstack(g, h);
    let mut total = 0.0;
    let mut work = base.clone();
    for k in 0..n {
        let block = if k < m { &at.block1 } else { &at.block2 };
        let image = block * base.column(k);
        work.set_column(k, &image);
        total += determinant(&work);
        work.set_column(k, &base.column(k));
    }
    Ok(total)
}

/// omega2 through the difference D = At(lambda2) - At(lambda1) acting on H only.
/// Equal to `omega2_eval` because At has zero trace.
pub fn omega2_via_difference(g: &DMatrix<f64>, h: &DMatrix<f64>, d: &DMatrix<f64>) -> Result<f64> {
    check_pair(g, h)?;
    let m = g.ncols();
    let mut work = hstack(g, h);
    let mut total = 0.0;
    for j in 0..h.ncols() {
        work.set_column(m + j, &(d * h.column(j)));
        total += determinant(&work);
        work.set_column(m + j, &h.column(j));
    }
    Ok(total)
}

/// omega1 of an arbitrary stacked 2n x n frame: det(U + V).
pub fn omega1_stacked(f: &DMatrix<f64>) -> Result<f64> {
    let n = f.ncols();
    if f.nrows() != 2 * n {
        return Err(Error::InvalidInput("stacked frame must be 2n x n".into()));
    }
    Ok(determinant(&(f.rows(0, n) + f.rows(n, n))))
}

/// omega1 through the full 2n x 2n determinant det(F, Dt).
pub fn omega1_reference(f: &DMatrix<f64>) -> Result<f64> {
    let n = f.ncols();
    if f.nrows() != 2 * n {
        return Err(Error::InvalidInput("stacked frame must be 2n x n".into()));
    }
    let mut full = DMatrix::zeros(2 * n, 2 * n);
    full.view_mut((0, 0), (2 * n, n)).copy_from(f);
    for i in 0..n {
        full[(i, n + i)] = -1.0;
        full[(n + i, n + i)] = 1.0;
    }
    Ok(determinant(&full))
}

/// omega2 of an arbitrary stacked frame, applying the dense 2n x 2n matrix column by column.
pub fn omega2_stacked(f: &DMatrix<f64>, block: &DMatrix<f64>, via_reference: bool) -> Result<f64> {
    let n = f.ncols();
    let mut work = f.clone();
    let mut total = 0.0;
    for k in 0..n {
        work.set_column(k, &(block * f.column(k)));
        total += if via_reference { omega1_reference(&work)? } else { omega1_stacked(&work)? };
        work.set_column(k, &f.column(k));
    }
    Ok(total)
}

/// The stacked frame (G 0; 0 H).
pub fn stack_frames(g: &DMatrix<f64>, h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = check_pair(g, h)?;
    let m = g.ncols();
    let mut f = DMatrix::zeros(2 * n, n);
    f.view_mut((0, 0), (n, m)).copy_from(g);
    f.view_mut((n, m), (n, n - m)).copy_from(h);
    Ok(f)
}

pub fn psi_rho(g: &DMatrix<f64>, h: &DMatrix<f64>, at: &BlockLambdaMatrix) -> Result<OmegaPairValue> {
    let omega1 = omega1_eval(g, h)?;
    let omega2 = omega2_eval(g, h, at)?;
    let d = gram_volume(g)? * gram_volume(h)?;
    Ok(OmegaPairValue::from_parts(omega1, omega2, d))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    #[test]
    fn gram_volume_basics() {
        assert_eq!(gram_volume(&DMatrix::identity(2, 2)).unwrap(), 1.0);
        assert_eq!(gram_volume(&col(&[3.0, 4.0])).unwrap(), 5.0);
        let twin = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, 0.5, 0.5]);
        assert!(matches!(gram_volume(&twin), Err(Error::RankDeficient(_))));
        assert!(matches!(gram_volume(&col(&[f64::NAN, 1.0])), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn determinant_matches_nalgebra() {
        let a = DMatrix::from_row_slice(4, 4, &[
            0.0, 2.0, 1.0, 3.0, 1.0, 0.0, 4.0, 1.0, 2.0, 1.0, 0.0, 5.0, 1.0, 1.0, 1.0, 0.0,
        ]);
        assert!((determinant(&a) - a.clone().determinant()).abs() < 1e-12);
        assert_eq!(determinant(&DMatrix::zeros(3, 3)), 0.0);
    }

    #[test]
    fn omega1_examples() {
        assert_eq!(omega1_eval(&col(&[1.0, 0.0]), &col(&[0.0, 1.0])).unwrap(), 1.0);
        let p = col(&[1.0, 0.0, 0.0]);
        let q = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(omega1_eval(&p, &q).unwrap(), 0.0);
        assert!(omega1_eval(&p, &p).is_err());
    }

    #[test]
    fn a_tilde_of_identity_is_zero() {
        let i = DMatrix::identity(3, 3);
        let at = BlockLambdaMatrix::new(0.0, 1.0, &i, &i).unwrap();
        assert_eq!(at.dense(), DMatrix::zeros(6, 6));
    }

    #[test]
    fn psi_rho_identity_frames() {
        let at = BlockLambdaMatrix::new(0.0, 1.0, &DMatrix::zeros(2, 2), &DMatrix::zeros(2, 2)).unwrap();
        let v = psi_rho(&col(&[1.0, 0.0]), &col(&[0.0, 1.0]), &at).unwrap();
        assert_eq!((v.omega1, v.omega2, v.d, v.psi1, v.psi2, v.rho), (1.0, 0.0, 1.0, 1.0, 0.0, 0.5));
    }
}
