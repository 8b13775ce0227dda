//! Generalized Maslov index of a sampled path from its (psi1, psi2) sequence.
//!
//! The point p(t) on the circle sits at (-1, 0) exactly when psi1 = 0. With
//! r = psi1 / psi2 the rotation is counterclockwise when r increases. Counting:
//! arriving at (-1, 0) from r < 0 adds +1, departing into r < 0 adds -1. A
//! transversal counterclockwise crossing therefore counts +1, a clockwise one
//! -1, and a touch-and-return counts 0. Left endpoints only see the departure,
//! right endpoints only the arrival.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::multilinear::OmegaPairValue;

/// |psi1| at or below this is a numeric zero.
pub const ZERO_TOL: f64 = 1e-9;
/// rho at or below this violates invariance.
pub const RHO_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathSamples {
    pub ts: Vec<f64>,
    pub values: Vec<OmegaPairValue>,
    /// Log of the positive factor removed from omega1, omega2 and d by frame
    /// rescaling, per node (zero when unknown).
    pub scale_log: Vec<f64>,
}

impl PathSamples {
    pub fn new(ts: Vec<f64>, values: Vec<OmegaPairValue>) -> Result<Self> {
        if ts.is_empty() || ts.len() != values.len() {
            return Err(Error::InvalidInput(format!(
                "path needs equal, nonzero numbers of parameters ({}) and values ({})",
                ts.len(),
                values.len()
            )));
        }
        if ts.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput("path parameters must be strictly increasing".into()));
        }
        let scale_log = vec![0.0; ts.len()];
        Ok(PathSamples { ts, values, scale_log })
    }

    pub fn with_scale_log(mut self, scale_log: Vec<f64>) -> Self {
        assert_eq!(scale_log.len(), self.ts.len(), "scale log length");
        self.scale_log = scale_log;
        self
    }

    /// Node k with omega1, omega2, d restored to the unscaled frames.
    pub fn unscaled(&self, k: usize) -> OmegaPairValue {
        self.values[k].unscaled(self.scale_log[k])
    }

    /// Path from raw (psi1, psi2) pairs with d = 1.
    pub fn from_psi(ts: Vec<f64>, psi: &[(f64, f64)]) -> Result<Self> {
        let values = psi.iter().map(|&(a, b)| OmegaPairValue::from_parts(a, b, 1.0)).collect();
        PathSamples::new(ts, values)
    }

    pub fn len(&self) -> usize {
        self.ts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ts.is_empty()
    }

    /// Traverse backwards; parameters are mirrored (t -> -t) to stay increasing.
    pub fn reversed(&self) -> Self {
        PathSamples {
            ts: self.ts.iter().rev().map(|t| -t).collect(),
            values: self.values.iter().rev().copied().collect(),
            scale_log: self.scale_log.iter().rev().copied().collect(),
        }
    }

    /// Sub-path over nodes lo..=hi.
    pub fn slice(&self, lo: usize, hi: usize) -> Self {
        PathSamples {
            ts: self.ts[lo..=hi].to_vec(),
            values: self.values[lo..=hi].to_vec(),
            scale_log: self.scale_log[lo..=hi].to_vec(),
        }
    }

    /// (index, value) of the smallest rho.
    pub fn min_rho(&self) -> (usize, f64) {
        self.values
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, v)| if v.rho < acc.1 { (i, v.rho) } else { acc })
    }

    /// First node with rho <= RHO_TOL, as an error.
    pub fn check_invariance(&self) -> Result<()> {
        match self.values.iter().position(|v| !(v.rho > RHO_TOL)) {
            None => Ok(()),
            Some(k) => Err(Error::InvarianceViolation {
                place: "path".into(),
                node: k,
                t: self.ts[k],
                rho: self.values[k].rho,
            }),
        }
    }
}

/// Unit vector of the two-branch formula.
pub fn p_point(v: &OmegaPairValue) -> Result<(f64, f64)> {
    let r = v.omega1.hypot(v.omega2);
    if !(r > 0.0) || !(v.rho > 0.0) {
        return Err(Error::InvarianceViolation { place: "point".into(), node: 0, t: f64::NAN, rho: v.rho });
    }
    let (a, b) = (v.omega2 / r, v.omega1 / r);
    Ok(if v.omega2 <= 0.0 { (a, b) } else { (-a, -b) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CrossingKind {
    Interior,
    LeftEndpoint,
    RightEndpoint,
    Interval,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossingRecord {
    pub t_star: f64,
    /// Last parameter of an interval record.
    pub t_end: Option<f64>,
    pub kind: CrossingKind,
    pub direction: i8,
    pub contribution: i32,
    /// Zero of psi1 that does not change the side (touch); reported for review.
    pub tangential: bool,
    /// Bracketing node indices.
    pub node_lo: usize,
    pub node_hi: usize,
}

fn is_zero(v: &OmegaPairValue) -> bool {
    v.psi1.abs() <= ZERO_TOL
}

/// Sign of r = psi1/psi2 at a node, if usable.
fn r_sign(v: &OmegaPairValue) -> Option<f64> {
    if is_zero(v) || v.psi2 == 0.0 {
        None
    } else {
        Some((v.psi1 * v.psi2).signum())
    }
}

/// Nearest usable r-sign strictly before `lo` / after `hi`, never crossing another zero.
fn side_sign(path: &PathSamples, lo: usize, hi: usize, before: bool) -> Option<Option<f64>> {
    let v = &path.values;
    if before {
        let mut k = lo;
        while k > 0 {
            k -= 1;
            if is_zero(&v[k]) {
                return Some(None);
            }
            if let Some(s) = r_sign(&v[k]) {
                return Some(Some(s));
            }
        }
        None
    } else {
        let mut k = hi;
        while k + 1 < v.len() {
            k += 1;
            if is_zero(&v[k]) {
                return Some(None);
            }
            if let Some(s) = r_sign(&v[k]) {
                return Some(Some(s));
            }
        }
        None
    }
}

fn contribution(before: Option<f64>, after: Option<f64>) -> i32 {
    let arrive = matches!(before, Some(s) if s < 0.0) as i32;
    let depart = matches!(after, Some(s) if s < 0.0) as i32;
    arrive - depart
}

/// Sign of r' at a record: centered where both sides exist, one-sided otherwise.
fn direction_of(path: &PathSamples, rec: &CrossingRecord) -> Result<i8> {
    let v = &path.values;
    let n = v.len();
    let r = |k: usize| v[k].psi1 / v[k].psi2;
    let usable = |k: usize| v[k].psi2 != 0.0 && v[k].psi2.is_finite();
    let (lo, hi) = (rec.node_lo, rec.node_hi);
    let left = if is_zero(&v[lo]) { lo.checked_sub(1) } else { Some(lo) };
    let right = if is_zero(&v[hi]) { (hi + 1 < n).then_some(hi + 1) } else { Some(hi) };
    let left = left.filter(|&k| usable(k));
    let right = right.filter(|&k| usable(k));
    let slope = match (left, right) {
        (Some(a), Some(b)) if a != b => (r(b) - r(a)) / (path.ts[b] - path.ts[a]),
        (None, Some(b)) if usable(hi) && b != hi => (r(b) - r(hi)) / (path.ts[b] - path.ts[hi]),
        (Some(a), None) if usable(lo) && a != lo => (r(lo) - r(a)) / (path.ts[lo] - path.ts[a]),
        _ => {
            return Err(Error::NeedsFinerGrid {
                t: rec.t_star,
                reason: "no usable neighbor to estimate the rotation direction".into(),
            })
        }
    };
    if !slope.is_finite() {
        return Err(Error::NeedsFinerGrid { t: rec.t_star, reason: "direction estimate is not finite".into() });
    }
    Ok(if slope > 0.0 {
        1
    } else if slope < 0.0 {
        -1
    } else {
        0
    })
}

/// All zeros of psi1 along the path, classified and weighted.
pub fn detect_crossings(path: &PathSamples) -> Result<Vec<CrossingRecord>> {
    path.check_invariance()?;
    let v = &path.values;
    let n = v.len();
    let last = n - 1;
    let mut out = Vec::new();
    let mut k = 0;
    while k < n {
        if is_zero(&v[k]) {
            let start = k;
            while k + 1 < n && is_zero(&v[k + 1]) {
                k += 1;
            }
            let end = k;
            let before = if start == 0 { None } else { side_sign(path, start, end, true).flatten() };
            let after = if end == last { None } else { side_sign(path, start, end, false).flatten() };
            let at_left = start == 0;
            let at_right = end == last;
            let kind = if end > start {
                CrossingKind::Interval
            } else if at_left {
                CrossingKind::LeftEndpoint
            } else if at_right {
                CrossingKind::RightEndpoint
            } else {
                CrossingKind::Interior
            };
            let contrib = contribution(if at_left { None } else { before }, if at_right { None } else { after });
            let mut rec = CrossingRecord {
                t_star: path.ts[start],
                t_end: (end > start).then(|| path.ts[end]),
                kind,
                direction: 0,
                contribution: contrib,
                tangential: false,
                node_lo: start,
                node_hi: end,
            };
            rec.direction = match kind {
                CrossingKind::Interval => contrib.signum() as i8,
                _ if n == 1 => 0,
                _ => direction_of(path, &rec)?,
            };
            rec.tangential = kind == CrossingKind::Interior
                && matches!((before, after), (Some(a), Some(b)) if a == b);
            if rec.tangential {
                rec.direction = 0;
            }
            out.push(rec);
            k += 1;
            continue;
        }
        if k + 1 < n && !is_zero(&v[k + 1]) && v[k].psi1.signum() != v[k + 1].psi1.signum() {
            let (a, b) = (&v[k], &v[k + 1]);
            if a.psi2.signum() != b.psi2.signum() {
                return Err(Error::NeedsFinerGrid {
                    t: path.ts[k],
                    reason: "psi1 and psi2 both change sign in one grid interval".into(),
                });
            }
            let w = a.psi1 / (a.psi1 - b.psi1);
            let t_star = path.ts[k] + w * (path.ts[k + 1] - path.ts[k]);
            let psi2 = a.psi2 + w * (b.psi2 - a.psi2);
            let rho = 0.5 * psi2 * psi2;
            if !(rho > RHO_TOL) {
                return Err(Error::InvarianceViolation { place: "path".into(), node: k, t: t_star, rho });
            }
            let before = r_sign(a);
            let after = r_sign(b);
            let mut rec = CrossingRecord {
                t_star,
                t_end: None,
                kind: CrossingKind::Interior,
                direction: 0,
                contribution: contribution(before, after),
                tangential: false,
                node_lo: k,
                node_hi: k + 1,
            };
            rec.direction = direction_of(path, &rec)?;
            out.push(rec);
        }
        k += 1;
    }
    Ok(out)
}

pub fn crossing_direction(path: &PathSamples, record: &CrossingRecord) -> Result<i8> {
    if record.node_hi >= path.len() || record.node_lo > record.node_hi {
        return Err(Error::InvalidInput("crossing record does not belong to this path".into()));
    }
    direction_of(path, record)
}

pub fn winding_index(path: &PathSamples) -> Result<(i32, Vec<CrossingRecord>)> {
    let records = detect_crossings(path)?;
    Ok((records.iter().map(|r| r.contribution).sum(), records))
}

/// Independent count through the squared complex form z = ((w1 - i w2)/|.|)^2:
/// unwraps arg z along the samples and counts net passages through odd multiples
/// of pi (z crossing the negative real axis). Needs |d arg z| < pi per step.
pub fn winding_via_squared_form(path: &PathSamples) -> Result<i32> {
    path.check_invariance()?;
    let z = |v: &OmegaPairValue| {
        let r = v.psi1.hypot(v.psi2);
        let (c, s) = (v.psi1 / r, -v.psi2 / r);
        (c * c - s * s, 2.0 * c * s)
    };
    let mut prev = z(&path.values[0]);
    let start = prev.1.atan2(prev.0);
    let mut phase = start;
    for v in &path.values[1..] {
        let cur = z(v);
        // arg(cur / prev), principal value.
        phase += (cur.1 * prev.0 - cur.0 * prev.1).atan2(cur.0 * prev.0 + cur.1 * prev.1);
        prev = cur;
    }
    let sheet = |phi: f64| ((phi + std::f64::consts::PI) / std::f64::consts::TAU).floor() as i32;
    Ok(sheet(phase) - sheet(start))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear(f: impl Fn(f64) -> (f64, f64), n: usize) -> PathSamples {
        let ts: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let psi: Vec<(f64, f64)> = ts.iter().map(|&t| f(t)).collect();
        PathSamples::from_psi(ts, &psi).unwrap()
    }

    #[test]
    fn p_point_examples() {
        let p = |a, b| p_point(&OmegaPairValue::from_parts(a, b, 1.0)).unwrap();
        assert_eq!(p(0.0, -1.0), (-1.0, 0.0));
        assert_eq!(p(0.0, 1.0), (-1.0, -0.0));
        assert_eq!(p(1.0, 0.0), (0.0, 1.0));
        assert!(p_point(&OmegaPairValue::from_parts(0.0, 0.0, 1.0)).is_err());
    }

    #[test]
    fn single_counterclockwise_crossing() {
        let path = linear(|t| (t - 0.5, 1.0), 101);
        let (ind, recs) = winding_index(&path).unwrap();
        assert_eq!(ind, 1);
        assert_eq!(recs.len(), 1);
        assert!((recs[0].t_star - 0.5).abs() < 1e-12);
        assert_eq!(recs[0].direction, 1);
    }

    #[test]
    fn single_clockwise_crossing() {
        let path = linear(|t| (0.5 - t, 1.0), 100);
        let (ind, recs) = winding_index(&path).unwrap();
        assert_eq!(ind, -1);
        assert_eq!(recs[0].direction, -1);
        assert_eq!(recs[0].kind, CrossingKind::Interior);
    }

    #[test]
    fn no_zeros() {
        let path = linear(|_| (1.0, 0.3), 10);
        assert_eq!(winding_index(&path).unwrap(), (0, vec![]));
    }

    #[test]
    fn endpoint_rules() {
        // Leaves (-1,0) counterclockwise at t=0: departure into r > 0 counts 0.
        assert_eq!(winding_index(&linear(|t| (t, 1.0), 11)).unwrap().0, 0);
        // Leaves clockwise: -1.
        assert_eq!(winding_index(&linear(|t| (-t, 1.0), 11)).unwrap().0, -1);
        // Arrives counterclockwise at t=1: +1.
        assert_eq!(winding_index(&linear(|t| (t - 1.0, 1.0), 11)).unwrap().0, 1);
        // Arrives clockwise: 0.
        assert_eq!(winding_index(&linear(|t| (1.0 - t, 1.0), 11)).unwrap().0, 0);
    }

    #[test]
    fn tangential_touch_counts_zero() {
        let path = linear(|t| (-(t - 0.5) * (t - 0.5), 1.0), 101);
        let (ind, recs) = winding_index(&path).unwrap();
        assert_eq!(ind, 0);
        assert!(recs[0].tangential);
        assert_eq!(recs[0].direction, 0);
    }

    #[test]
    fn interval_record() {
        let path = linear(|t| (if (0.3..=0.6).contains(&t) { 0.0 } else { t - 0.45 }, 1.0), 101);
        let (ind, recs) = winding_index(&path).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].kind, CrossingKind::Interval);
        assert_eq!(ind, 1);
    }

    #[test]
    fn simultaneous_sign_change_needs_finer_grid() {
        let path = PathSamples::from_psi(vec![0.0, 1.0], &[(1.0, 1.0), (-1.0, -1.0)]).unwrap();
        assert!(matches!(detect_crossings(&path), Err(Error::NeedsFinerGrid { .. })));
    }

    #[test]
    fn invariance_violation_reports_node() {
        let path = PathSamples::from_psi(vec![0.0, 1.0, 2.0], &[(1.0, 1.0), (0.0, 0.0), (1.0, 1.0)]).unwrap();
        match detect_crossings(&path) {
            Err(Error::InvarianceViolation { node, .. }) => assert_eq!(node, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn squared_form_agrees() {
        let path = linear(|t| ((6.0 * t + 0.3).sin(), (6.0 * t).cos() + 0.2), 400);
        assert_eq!(winding_via_squared_form(&path).unwrap(), winding_index(&path).unwrap().0);
    }
}
