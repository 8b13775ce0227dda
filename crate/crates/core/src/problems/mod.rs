//! Declarative problem construction: expressions, JSON configs, the built-in catalog.

mod expr;

use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use expr::{eval_expression, parse_expression, BinOp, Expression, Func};

use crate::error::{Error, Result};
use crate::maslovbox::{SpectralProblem, DEFAULT_LAMBDA_STEPS, DEFAULT_X_STEPS};
use crate::multilinear::Frame;
use crate::propagation::{CoefficientField, GeneralField, HigherOrderField, SecondOrderField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    HigherOrder,
    SecondOrder,
    General,
}

/// Boundary frame: explicit rows, a preset name, or a Robin graph (I; Phi).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FrameSpec {
    Preset(String),
    Matrix(Vec<Vec<f64>>),
    Robin { robin: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub kind: ProblemKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alphas: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappas: Option<Vec<f64>>,
    #[serde(rename = "B", default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<f64>>,
    #[serde(rename = "V", default, skip_serializing_if = "Option::is_none")]
    pub v: Option<Vec<Vec<String>>>,
    #[serde(rename = "W", default, skip_serializing_if = "Option::is_none")]
    pub w: Option<Vec<Vec<String>>>,
    #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<Vec<String>>>,
    #[serde(rename = "A_lambda", default, skip_serializing_if = "Option::is_none")]
    pub a_lambda: Option<Vec<Vec<f64>>>,
    #[serde(rename = "P")]
    pub p: FrameSpec,
    #[serde(rename = "Q")]
    pub q: FrameSpec,
    pub lambda: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_steps: Option<usize>,
}

impl ProblemConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        ProblemConfig::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

fn parse_all(what: &str, rows: &[Vec<String>]) -> Result<Vec<Vec<Expression>>> {
    rows.iter()
        .enumerate()
        .map(|(i, r)| {
            r.iter()
                .enumerate()
                .map(|(j, s)| {
                    parse_expression(s).map_err(|e| Error::InvalidInput(format!("{what}[{i}][{j}] = {s:?}: {e}")))
                })
                .collect()
        })
        .collect()
}

fn require<T: Clone>(v: &Option<T>, key: &str, kind: &str) -> Result<T> {
    v.clone().ok_or_else(|| Error::InvalidInput(format!("{kind} problems need \"{key}\"")))
}

/// Frame with `cols` columns in R^n.
fn resolve_frame(spec: &FrameSpec, n: usize, cols: Option<usize>, side: &str) -> Result<Frame> {
    let bad = |msg: String| Error::InvalidInput(format!("{side}: {msg}"));
    let m = match spec {
        FrameSpec::Matrix(rows) => {
            if rows.len() != n {
                return Err(bad(format!("expected {n} rows, got {}", rows.len())));
            }
            return Frame::from_rows(rows).map_err(|e| bad(e.to_string()));
        }
        FrameSpec::Preset(name) => {
            let k = cols.ok_or_else(|| bad(format!("preset {name:?} needs the subspace dimension (set \"m\")")))?;
            if k == 0 || k > n {
                return Err(bad(format!("dimension {k} does not fit R^{n}")));
            }
            match name.as_str() {
                "neumann" => DMatrix::from_fn(n, k, |i, j| (i == j) as u8 as f64),
                "dirichlet" => DMatrix::from_fn(n, k, |i, j| (i == n - k + j) as u8 as f64),
                other => return Err(bad(format!("unknown preset {other:?} (dirichlet, neumann, or {{\"robin\": matrix}})"))),
            }
        }
        FrameSpec::Robin { robin } => {
            let k = robin.first().map_or(0, Vec::len);
            if robin.len() + k != n || robin.iter().any(|r| r.len() != k) {
                return Err(bad(format!("robin matrix must be {} x {k}", n.saturating_sub(k))));
            }
            DMatrix::from_fn(n, k, |i, j| if i < k { (i == j) as u8 as f64 } else { robin[i - k][j] })
        }
    };
    Frame::new(m).map_err(|e| bad(e.to_string()))
}

fn spec_cols(spec: &FrameSpec) -> Option<usize> {
    match spec {
        FrameSpec::Matrix(rows) => rows.first().map(Vec::len),
        FrameSpec::Robin { robin } => robin.first().map(Vec::len),
        FrameSpec::Preset(_) => None,
    }
}

pub fn load_problem(config: &ProblemConfig) -> Result<SpectralProblem> {
    let (field, default_m): (Arc<dyn CoefficientField>, Option<usize>) = match config.kind {
        ProblemKind::HigherOrder => {
            let alphas = parse_all("alphas", &[require(&config.alphas, "alphas", "higher-order")?])?.remove(0);
            let n = alphas.len().saturating_sub(1);
            if let Some(cn) = config.n {
                if cn != n {
                    return Err(Error::InvalidInput(format!("n = {cn} but {} alphas given", alphas.len())));
                }
            }
            if n < 2 {
                return Err(Error::InvalidInput("higher-order problems need alpha_0..alpha_n with n >= 2".into()));
            }
            let kappas = config.kappas.clone().unwrap_or_default();
            if kappas.len() < n - 2 || kappas.len() > n - 1 {
                return Err(Error::InvalidInput(format!("n = {n} needs kappa_2..kappa_{{n-1}} ({} values), optionally followed by kappa_n", n - 2)));
            }
            let field = HigherOrderField::new(alphas, kappas)?;
            for i in 0..=1000 {
                let x = i as f64 / 1000.0;
                let an = field.alphas[n].eval(x)?;
                if !(an > 0.0) {
                    return Err(Error::DegenerateLeading { x, value: an });
                }
            }
            (Arc::new(field), None)
        }
        ProblemKind::SecondOrder => {
            let b = require(&config.b, "B", "second-order")?;
            if let Some(l) = config.l {
                if l != b.len() {
                    return Err(Error::InvalidInput(format!("l = {l} but B has {} entries", b.len())));
                }
            }
            let v = parse_all("V", &require(&config.v, "V", "second-order")?)?;
            let w = parse_all("W", &require(&config.w, "W", "second-order")?)?;
            let l = b.len();
            (Arc::new(SecondOrderField::new(b, v, w)?), Some(l))
        }
        ProblemKind::General => {
            let a = parse_all("A", &require(&config.a, "A", "general")?)?;
            let n = a.len();
            let al = match &config.a_lambda {
                Some(rows) => {
                    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                        return Err(Error::InvalidInput(format!("A_lambda must be {n} x {n}")));
                    }
                    DMatrix::from_fn(n, n, |i, j| rows[i][j])
                }
                None => DMatrix::zeros(n, n),
            };
            (Arc::new(GeneralField::new(a, al)?), None)
        }
    };
    let n = field.dim();
    if let Some(cn) = config.n {
        if cn != n {
            return Err(Error::InvalidInput(format!("n = {cn} does not match the coefficient dimension {n}")));
        }
    }
    let m = config.m.or_else(|| spec_cols(&config.p)).or_else(|| spec_cols(&config.q).map(|k| n.saturating_sub(k))).or(default_m);
    let p = resolve_frame(&config.p, n, m, "P")?;
    let q = resolve_frame(&config.q, n, m.map(|m| n.saturating_sub(m)), "Q")?;
    if let Some(m) = config.m {
        if p.ncols() != m {
            return Err(Error::InvalidInput(format!("m = {m} but P has {} columns", p.ncols())));
        }
    }
    let prob = SpectralProblem::new(field, p, q, config.lambda[0], config.lambda[1])?
        .with_grid(config.x_steps.unwrap_or(DEFAULT_X_STEPS), config.lambda_steps.unwrap_or(DEFAULT_LAMBDA_STEPS))?;
    Ok(prob.with_name(config.name.clone().unwrap_or_else(|| "custom".into())))
}

pub const CATALOG: [&str; 5] = ["example1", "example2", "example3", "harmonic-dirichlet", "harmonic-neumann"];

fn strings(rows: &[&[&str]]) -> Vec<Vec<String>> {
    rows.iter().map(|r| r.iter().map(|s| s.to_string()).collect()).collect()
}

fn second_order(name: &str, w: &[&[&str]], lambda: [f64; 2]) -> ProblemConfig {
    ProblemConfig {
        name: Some(name.into()),
        kind: ProblemKind::SecondOrder,
        n: None,
        l: Some(2),
        m: Some(2),
        alphas: None,
        kappas: None,
        b: Some(vec![1.0, 1.0]),
        v: Some(strings(&[&["10*sin(10*x)*cos(10*x)", "25*sin(10*x)"], &["x*(1-x)", "10*cos(10*x)"]])),
        w: Some(strings(w)),
        a: None,
        a_lambda: None,
        p: FrameSpec::Preset("neumann".into()),
        q: FrameSpec::Preset("neumann".into()),
        lambda,
        x_steps: Some(DEFAULT_X_STEPS),
        lambda_steps: Some(DEFAULT_LAMBDA_STEPS),
    }
}

fn harmonic(name: &str, preset: &str, lambda: [f64; 2]) -> ProblemConfig {
    ProblemConfig {
        name: Some(name.into()),
        kind: ProblemKind::SecondOrder,
        n: None,
        l: Some(1),
        m: Some(1),
        alphas: None,
        kappas: None,
        b: Some(vec![1.0]),
        v: Some(strings(&[&["0"]])),
        w: Some(strings(&[&["0"]])),
        a: None,
        a_lambda: None,
        p: FrameSpec::Preset(preset.into()),
        q: FrameSpec::Preset(preset.into()),
        lambda,
        x_steps: Some(2000),
        lambda_steps: Some(DEFAULT_LAMBDA_STEPS),
    }
}

pub fn builtin_catalog(name: &str) -> Result<ProblemConfig> {
    Ok(match name {
        "example1" => ProblemConfig {
            name: Some(name.into()),
            kind: ProblemKind::HigherOrder,
            n: Some(3),
            l: None,
            m: Some(1),
            alphas: Some([".2*cos(10*x) - .5*cos(x/10)", "2*sin(5*x)", "10", "60"].map(String::from).to_vec()),
            kappas: Some(vec![10.0, 60.0]),
            b: None,
            v: None,
            w: None,
            a: None,
            a_lambda: None,
            p: FrameSpec::Matrix(vec![vec![1.0], vec![0.0], vec![0.0]]),
            q: FrameSpec::Matrix(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 0.0]]),
            lambda: [-1.0, 0.0],
            x_steps: Some(DEFAULT_X_STEPS),
            lambda_steps: Some(DEFAULT_LAMBDA_STEPS),
        },
        "example2" => second_order(name, &[&["5*x*(1-x)", "0"], &["0", "5*x*(1-x)"]], [-5.0, 1.0]),
        "example3" => second_order(name, &[&["5*x*(1-x)", "10*sin(10*x)"], &["10*cos(10*x)", "5*x*(1-x)"]], [-5.0, 1.0]),
        "harmonic-dirichlet" => harmonic(name, "dirichlet", [0.0, 50.0]),
        "harmonic-neumann" => harmonic(name, "neumann", [-1.0, 50.0]),
        other => {
            return Err(Error::InvalidInput(format!("unknown catalog problem {other:?}; known: {}", CATALOG.join(", "))))
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_loads() {
        for name in CATALOG {
            let p = load_problem(&builtin_catalog(name).unwrap()).unwrap();
            assert_eq!(p.name, name);
            assert!(p.assumption_b().unwrap());
        }
        assert!(builtin_catalog("nope").is_err());
    }

    #[test]
    fn example1_shape() {
        let p = load_problem(&builtin_catalog("example1").unwrap()).unwrap();
        assert_eq!((p.n(), p.m()), (3, 1));
        let a = p.field.eval(0.0, -1.0).unwrap();
        assert!((a[(2, 0)] + 0.7).abs() < 1e-15);
    }

    #[test]
    fn presets() {
        let d = resolve_frame(&FrameSpec::Preset("dirichlet".into()), 2, Some(1), "P").unwrap();
        assert_eq!(d.matrix().as_slice(), &[0.0, 1.0]);
        let nm = resolve_frame(&FrameSpec::Preset("neumann".into()), 4, Some(2), "P").unwrap();
        assert_eq!(nm.matrix()[(0, 0)], 1.0);
        assert_eq!(nm.matrix()[(1, 1)], 1.0);
        let r = resolve_frame(&FrameSpec::Robin { robin: vec![vec![2.0]] }, 2, None, "P").unwrap();
        assert_eq!(r.matrix().as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn config_errors() {
        let mut c = builtin_catalog("example1").unwrap();
        c.q = FrameSpec::Matrix(vec![vec![1.0], vec![0.0], vec![0.0]]);
        assert!(load_problem(&c).is_err());
        let mut c = builtin_catalog("example2").unwrap();
        c.lambda = [1.0, 1.0];
        assert!(load_problem(&c).is_err());
        let mut c = builtin_catalog("example1").unwrap();
        c.alphas.as_mut().unwrap()[3] = "x - 0.5".into();
        assert!(matches!(load_problem(&c), Err(Error::DegenerateLeading { .. })));
        assert!(ProblemConfig::from_json(r#"{"kind":"general","A":[["0"]],"P":"neumann","Q":"neumann","lambda":[0,1],"bogus":1}"#).is_err());
    }

    #[test]
    fn json_round_trip() {
        for name in CATALOG {
            let c = builtin_catalog(name).unwrap();
            assert_eq!(ProblemConfig::from_json(&c.to_json()).unwrap(), c);
        }
    }
}
