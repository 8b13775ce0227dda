//! Command-line front end. Every command prints a few headline lines and the
//! full summary JSON; with `--out DIR` it also writes CSV, SVG and summary.json.

pub mod svg;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::invariance::{box_grid, constants_report, scan_with_report, BoxGrid, DEFAULT_REFINE_ROUNDS};
use crate::maslovbox::{compute_box, monotonicity_audit, renormalized_count, shelf_path, Shelf, SpectralProblem};
use crate::problems::{builtin_catalog, load_problem, ProblemConfig, CATALOG};
use crate::winding::PathSamples;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INVARIANCE: i32 = 2;
pub const EXIT_BLOWUP: i32 = 3;

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvarianceViolation { .. } => EXIT_INVARIANCE,
            Error::BlowUp { .. } => EXIT_BLOWUP,
            _ => EXIT_USAGE,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "gmaslov", version, about = "Generalized Maslov index and renormalized oscillation counts")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Config JSON path or a catalog name.
    pub config: String,
    #[arg(long)]
    pub x_steps: Option<usize>,
    #[arg(long)]
    pub lambda_steps: Option<usize>,
    /// Override the spectral interval.
    #[arg(long, num_args = 2, value_names = ["L1", "L2"], allow_negative_numbers = true)]
    pub lambda: Option<Vec<f64>>,
    /// Integrate without per-step column normalization.
    #[arg(long)]
    pub no_rescale: bool,
    /// Directory for CSV, SVG and summary.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Maslov box: shelf indices, lower bound, eigenvalues, spectral-curve figure.
    Box(RunArgs),
    /// Invariance constants and certificate; `--scan` adds the full rho grid.
    Invariance {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        scan: bool,
        /// Rounds of 10x local refinement around loss candidates.
        #[arg(long, default_value_t = DEFAULT_REFINE_ROUNDS)]
        refine: usize,
    },
    /// Renormalized count on the left shelf and the monotonicity audit.
    LeftShelf(RunArgs),
    /// List catalog problems, or print one as config JSON.
    Catalog { name: Option<String> },
}

pub fn resolve_config(arg: &str) -> Result<ProblemConfig> {
    let path = Path::new(arg);
    if path.is_file() {
        let mut cfg = ProblemConfig::from_file(path)?;
        if cfg.name.is_none() {
            cfg.name = path.file_stem().map(|s| s.to_string_lossy().into_owned());
        }
        return Ok(cfg);
    }
    if CATALOG.contains(&arg) {
        return builtin_catalog(arg);
    }
    Err(Error::Io(std::io::Error::new(std::io::ErrorKind::NotFound, format!("no config file or catalog entry `{arg}`"))))
}

pub fn build_problem(args: &RunArgs) -> Result<SpectralProblem> {
    let mut cfg = resolve_config(&args.config)?;
    if let Some(x) = args.x_steps {
        cfg.x_steps = Some(x);
    }
    if let Some(l) = args.lambda_steps {
        cfg.lambda_steps = Some(l);
    }
    if let Some(l) = &args.lambda {
        cfg.lambda = [l[0], l[1]];
    }
    Ok(load_problem(&cfg)?.with_rescale(!args.no_rescale))
}

/// `param,omega1,omega2,psi1,psi2,rho` with 17 significant digits; omega values unscaled.
pub fn shelf_csv(path: &PathSamples, descending: bool) -> String {
    let mut out = String::from("param,omega1,omega2,psi1,psi2,rho\n");
    let mut idx: Vec<usize> = (0..path.len()).collect();
    if descending {
        idx.reverse();
    }
    for k in idx {
        let v = path.unscaled(k);
        let _ = writeln!(out, "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}", path.ts[k], v.omega1, v.omega2, v.psi1, v.psi2, v.rho);
    }
    out
}

pub fn grid_csv(grid: &BoxGrid) -> String {
    let mut out = String::from("lambda,x,psi1,psi2,rho\n");
    for (j, &l) in grid.lambdas.iter().enumerate() {
        for (i, &x) in grid.xs.iter().enumerate() {
            let _ = writeln!(out, "{l:.16e},{x:.16e},{:.16e},{:.16e},{:.16e}", grid.psi1[j][i], grid.psi2[j][i], grid.rho[j][i]);
        }
    }
    out
}

struct Artifacts {
    files: Vec<(String, String)>,
}

impl Artifacts {
    fn new() -> Self {
        Artifacts { files: Vec::new() }
    }
    fn add(&mut self, name: &str, body: String) {
        self.files.push((name.to_string(), body));
    }
    fn write(&self, dir: &Path, summary: &Value) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, body) in &self.files {
            std::fs::write(dir.join(name), body)?;
        }
        std::fs::write(dir.join("summary.json"), pretty(summary))?;
        Ok(())
    }
}

fn pretty(v: &Value) -> String {
    serde_json::to_string_pretty(v).expect("summary serializes") + "\n"
}

fn problem_header(p: &SpectralProblem) -> Value {
    json!({
        "problem": p.name,
        "n": p.n(),
        "m": p.m(),
        "lambda1": p.lambda1,
        "lambda2": p.lambda2,
        "x_steps": p.x_steps,
        "lambda_steps": p.lambda_steps,
        "rescale": p.rescale,
    })
}

fn cmd_box(args: &RunArgs, out: &mut dyn Write) -> Result<(Value, Artifacts)> {
    let problem = build_problem(args)?;
    let report = compute_box(&problem)?;
    let mut lines = vec![
        format!("problem {} on [{}, {}]", problem.name, problem.lambda1, problem.lambda2),
        format!(
            "ind bottom {} right {} top {} left {}",
            report.ind_bottom, report.ind_right, report.ind_top, report.ind_left
        ),
        format!("m_frak {} lower_bound {}", report.m_frak, report.lower_bound),
        format!("eigenvalues {:?}", report.eigenvalues),
        format!("left crossings {:?}", report.left_crossings),
    ];
    lines.extend(report.warnings.iter().map(|w| format!("warning: {w}")));
    for l in &lines {
        writeln!(out, "{l}")?;
    }
    let mut arts = Artifacts::new();
    if args.out.is_some() {
        let shelves = report.shelves.as_ref().expect("compute_box keeps shelves");
        for s in Shelf::ALL {
            arts.add(&format!("shelf_{}.csv", s.name()), shelf_csv(shelves.get(s), s == Shelf::Top));
        }
        let grid = box_grid(&problem)?;
        let marks = svg::Marks { eigenvalues: report.eigenvalues.clone(), left_crossings: report.left_crossings.clone(), loss_points: vec![] };
        arts.add("box.svg", svg::box_figure(&grid, &marks, &format!("{}: spectral curves", problem.name)));
    }
    let summary = json!({ "command": "box", "setup": problem_header(&problem), "box": report });
    Ok((summary, arts))
}

fn cmd_invariance(args: &RunArgs, scan: bool, refine: usize, out: &mut dyn Write) -> Result<(Value, Artifacts)> {
    let problem = build_problem(args)?;
    let mut arts = Artifacts::new();
    let (report, scan_v) = if scan {
        let (report, s) = scan_with_report(&problem, refine)?;
        if args.out.is_some() {
            let grid = s.grid.as_ref().expect("scan keeps its grid");
            arts.add("rho_grid.csv", grid_csv(grid));
            let marks = svg::Marks { loss_points: s.loss_points.iter().map(|p| (p.x_star, p.lambda_star)).collect(), ..Default::default() };
            arts.add("rho.svg", svg::rho_heatmap(grid, &marks, &format!("{}: rho", problem.name)));
            arts.add("box.svg", svg::box_figure(grid, &marks, &format!("{}: spectral curves", problem.name)));
        }
        (report, Some(s))
    } else {
        (constants_report(&problem)?, None)
    };
    writeln!(out, "problem {} on [{}, {}]", problem.name, problem.lambda1, problem.lambda2)?;
    writeln!(
        out,
        "C_a {} C_A {} c_g {} c_h {} C_g {} C_h {} C_d {}",
        report.C_a, report.C_A, report.c_g, report.c_h, report.C_g, report.C_h, report.C_d
    )?;
    writeln!(out, "delta {} ({}) C {} rho0 {}", report.delta, report.delta_source, report.C, report.rho0)?;
    writeln!(out, "margin {} certified {}", report.margin, report.certified)?;
    if let Some(bc) = &report.bc_conditions {
        writeln!(out, "bc determinants {} {} satisfied {}", bc.det_shifted, bc.det_first_row, bc.satisfied)?;
    }
    if let Some(s) = &scan_v {
        writeln!(out, "min rho {} at x {} lambda {}", s.min_rho, s.argmin_x, s.argmin_lambda)?;
        for p in &s.loss_points {
            writeln!(out, "loss point x {} lambda {} rho {:e} local_m {:?}", p.x_star, p.lambda_star, p.rho, p.local_m)?;
        }
        let total: i32 = s.loss_points.iter().filter_map(|p| p.local_m).sum();
        writeln!(out, "loss points {} total local_m {}", s.loss_points.len(), total)?;
    }
    let mut summary = json!({ "command": "invariance", "setup": problem_header(&problem), "constants": report });
    if let Some(s) = scan_v {
        let total: i32 = s.loss_points.iter().filter_map(|p| p.local_m).sum();
        summary["scan"] = serde_json::to_value(&s)?;
        summary["scan"]["total_local_m"] = json!(total);
    }
    Ok((summary, arts))
}

fn cmd_left_shelf(args: &RunArgs, out: &mut dyn Write) -> Result<(Value, Artifacts)> {
    let problem = build_problem(args)?;
    let (count, crossings) = renormalized_count(&problem)?;
    let audit = monotonicity_audit(&problem)?;
    writeln!(out, "problem {} at lambda1 = {}", problem.name, problem.lambda1)?;
    writeln!(out, "renormalized count {count}")?;
    writeln!(out, "crossings {crossings:?}")?;
    for a in &audit {
        writeln!(out, "audit x {} ratio {} ok {}", a.x, a.ratio, a.ok)?;
    }
    let mut arts = Artifacts::new();
    if args.out.is_some() {
        arts.add("shelf_left.csv", shelf_csv(&shelf_path(&problem, Shelf::Left)?, false));
    }
    let summary = json!({
        "command": "left-shelf",
        "setup": problem_header(&problem),
        "count": count,
        "crossings": crossings,
        "audit": audit,
    });
    Ok((summary, arts))
}

fn cmd_catalog(name: Option<&str>, out: &mut dyn Write) -> Result<()> {
    match name {
        None => {
            for n in CATALOG {
                writeln!(out, "{n}")?;
            }
        }
        Some(n) => writeln!(out, "{}", builtin_catalog(n)?.to_json())?,
    }
    Ok(())
}

fn dispatch(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let (summary, arts, dir) = match &cli.command {
        Command::Box(a) => {
            let (s, f) = cmd_box(a, out)?;
            (s, f, a.out.clone())
        }
        Command::Invariance { run, scan, refine } => {
            let (s, f) = cmd_invariance(run, *scan, *refine, out)?;
            (s, f, run.out.clone())
        }
        Command::LeftShelf(a) => {
            let (s, f) = cmd_left_shelf(a, out)?;
            (s, f, a.out.clone())
        }
        Command::Catalog { name } => return cmd_catalog(name.as_deref(), out),
    };
    write!(out, "{}", pretty(&summary))?;
    if let Some(dir) = dir {
        arts.write(&dir, &summary)?;
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let shown = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{shown}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{shown}");
                    EXIT_USAGE
                }
            };
        }
    };
    match dispatch(&cli, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
