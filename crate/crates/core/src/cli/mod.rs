//! The `repcost` command line tool.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 numerical failure
//! (divergence or a failed verification check), 3 IO error.
//!
//! CSV outputs (numbers in `{:.16e}`):
//!
//! * `spectrum.csv`: `k,s_k`
//! * `mv.csv`: `q,mv_q`
//! * `grid.csv`: `x1,x2,f`
//! * verification: `check,index,depth,lower,value,upper,pass`, asserting
//!   `lower ≤ value ≤ upper` up to a relative `1e-6`
//! * `phi`: `depth,phi`

pub mod config;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::analysis::{
    active_subspace, estimate_grad_matrix, eval_grid, mv_bound_check, spectrum_report, BoxSampler,
    DEFAULT_EPS_REL, DEFAULT_SAMPLES,
};
use crate::error::{Error, Result};
use crate::experiment::{gen_teacher, mv_csv, run_experiment, spectrum_csv, MV_EXPONENTS};
use crate::linalg::Matrix;
use crate::network::format::{fmt_num, parse_matrix, parse_net, write_matrix, write_net};
use crate::network::{DeepNet, TwoLayerNet};
use crate::penalty::{cost_dominates_phi, depth_preference_check, phi_l, sandwich_check, PhiOptions};
use crate::rng::SeededRng;
pub use config::Config;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;
pub const EXIT_IO: i32 = 3;

pub const VERIFY_HEADER: &str = "check,index,depth,lower,value,upper,pass";

#[derive(Debug, Parser)]
#[command(name = "repcost", version, about = "Representation costs of ReLU networks with linear layers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a rank-r teacher network and its V matrix.
    Teacher(TeacherArgs),
    /// Run the teacher-student pipeline from a config file.
    Train(TrainArgs),
    /// Gradient spectrum, mixed variation and active subspace of a network.
    Analyze(AnalyzeArgs),
    /// Run the bound checks over a random ensemble.
    Verify(VerifyArgs),
    /// Evaluate the penalty of a matrix file.
    Phi(PhiArgs),
}

#[derive(Debug, Args)]
pub struct TeacherArgs {
    #[arg(long)]
    pub d: usize,
    #[arg(long = "K", visible_alias = "k")]
    pub k: usize,
    #[arg(long)]
    pub r: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Network file; defaults to `teacher.txt`.
    #[arg(long, default_value = "teacher.txt")]
    pub out: PathBuf,
    /// V sidecar; defaults to `<out>.v`.
    #[arg(long)]
    pub v_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Override a config entry, `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub net: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Sampling box `[−h, h]^d`.
    #[arg(long, default_value_t = 0.5)]
    pub halfwidth: f64,
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Dimension of the exported active subspace.
    #[arg(long, default_value_t = 1)]
    pub rank: usize,
    #[arg(long, default_value_t = DEFAULT_EPS_REL)]
    pub eps_rel: f64,
    /// Also export `f` on a `grid × grid` lattice over the box (2-D nets only).
    #[arg(long)]
    pub grid: Option<usize>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    #[arg(long, default_value_t = 6)]
    pub rows: usize,
    #[arg(long, default_value_t = 4)]
    pub cols: usize,
    #[arg(long, value_delimiter = ',', default_value = "3,4,6")]
    pub depths: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Gradient samples for the mixed-variation check.
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    pub n_grad: usize,
    /// Replace the first penalty value with one above its upper bound.
    #[arg(long)]
    pub self_test: bool,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Optional config file for the solver keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PhiArgs {
    #[arg(long)]
    pub matrix: PathBuf,
    #[arg(long)]
    pub depth: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn exit_code(err: &Error) -> i32 {
    match err.root() {
        Error::Io { .. } => EXIT_IO,
        Error::Divergence { .. } => EXIT_NUMERICAL,
        _ => EXIT_USAGE,
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return exit_code(&e);
    }
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("REPCOST_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|n| *n > 0).ok_or_else(|| Error::Config {
        key: "REPCOST_THREADS".into(),
        msg: format!("expected a positive integer, got `{raw}`"),
    })?;
    // A pool may already exist when called twice in one process.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn run(command: Command) -> Result<i32> {
    match command {
        Command::Teacher(a) => cmd_teacher(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Analyze(a) => cmd_analyze(&a),
        Command::Verify(a) => cmd_verify(&a),
        Command::Phi(a) => cmd_phi(&a),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, body: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn cmd_teacher(a: &TeacherArgs) -> Result<i32> {
    let t = gen_teacher(a.d, a.k, a.r, a.seed)?;
    let v_out = a.v_out.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".v");
        PathBuf::from(p)
    });
    write(&a.out, &write_net(&t.net().to_deep()))?;
    write(&v_out, &write_matrix(&t.v))?;
    Ok(EXIT_OK)
}

fn cmd_train(a: &TrainArgs) -> Result<i32> {
    let mut cfg = Config::parse(&read(&a.config)?)?;
    for o in &a.overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| Error::Config {
            key: o.clone(),
            msg: "override must look like key=value".into(),
        })?;
        cfg.set(k.trim(), v)?;
    }
    let report = run_experiment(&cfg.experiment)?;
    report.persist(&a.out)?;
    for (k, v) in report.summary() {
        println!("{k} = {v}");
    }
    Ok(EXIT_OK)
}

fn cmd_analyze(a: &AnalyzeArgs) -> Result<i32> {
    let net = parse_net(&read(&a.net)?)?;
    let two = net.collapse();
    let sampler = BoxSampler::new(a.halfwidth);
    let g = estimate_grad_matrix(&two, &sampler, a.n, a.seed)?;
    let rep = spectrum_report(&g, a.eps_rel, &MV_EXPONENTS)?;
    let sub = active_subspace(&g, a.rank)?;
    if sub.degenerate {
        eprintln!("warning: s_{} is negligible; trailing subspace directions are arbitrary", a.rank);
    }
    write(&a.out.join("spectrum.csv"), &spectrum_csv(&rep))?;
    write(&a.out.join("mv.csv"), &mv_csv(&rep))?;
    write(&a.out.join("subspace.txt"), &write_matrix(&sub.v_hat))?;
    if let Some(res) = a.grid {
        let grid = eval_grid(&net, -a.halfwidth, a.halfwidth, res)?;
        let mut csv = String::from("x1,x2,f\n");
        for [x1, x2, f] in grid {
            let _ = writeln!(csv, "{},{},{}", fmt_num(x1), fmt_num(x2), fmt_num(f));
        }
        write(&a.out.join("grid.csv"), &csv)?;
    }
    println!("effective_rank = {}", rep.effective_rank);
    Ok(EXIT_OK)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckRow {
    pub check: &'static str,
    pub index: usize,
    pub depth: usize,
    pub lower: f64,
    pub value: f64,
    pub upper: f64,
    pub pass: bool,
}

impl CheckRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.check,
            self.index,
            self.depth,
            fmt_num(self.lower),
            fmt_num(self.value),
            fmt_num(self.upper),
            self.pass
        )
    }
}

#[derive(Debug, Clone)]
pub struct EnsembleSpec {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub depths: Vec<usize>,
    pub seed: u64,
    pub n_grad: usize,
    pub self_test: bool,
}

/// Random two-layer net of `K = rows` units on `d = cols` inputs for member `i`.
fn ensemble_net(spec: &EnsembleSpec, i: usize) -> Result<TwoLayerNet> {
    let mut rng = SeededRng::derived(spec.seed.wrapping_add(i as u64), "verify-ensemble");
    let w = Matrix::gaussian(spec.rows, spec.cols, &mut rng);
    let a = (0..spec.rows).map(|_| rng.normal()).collect();
    let b = (0..spec.rows).map(|_| 0.5 * rng.normal()).collect();
    TwoLayerNet::new(w, a, b, 0.0)
}

fn ensemble_deep(spec: &EnsembleSpec, i: usize, depth: usize) -> Result<DeepNet> {
    let mut rng = SeededRng::derived(spec.seed.wrapping_add(i as u64), "verify-deep");
    let mut layers = Vec::with_capacity(depth - 1);
    let mut fan_in = spec.cols;
    for _ in 0..depth - 1 {
        layers.push(Matrix::gaussian(spec.rows, fan_in, &mut rng).scaled(1.0 / (fan_in as f64).sqrt()));
        fan_in = spec.rows;
    }
    let a = (0..spec.rows).map(|_| rng.normal()).collect();
    DeepNet::new(layers, a, vec![0.0; spec.rows], 0.0)
}

fn member_rows(spec: &EnsembleSpec, i: usize, opts: &PhiOptions) -> Result<Vec<CheckRow>> {
    let net = ensemble_net(spec, i)?;
    let m = net.end_matrix();
    let sampler = BoxSampler::new(0.5);
    let mut rows = Vec::new();
    for &depth in &spec.depths {
        let mut s = sandwich_check(&m, depth, opts)?;
        if spec.self_test && i == 0 && rows.is_empty() {
            s = s.with_tampered_phi(2.0 * s.upper + 1.0);
        }
        rows.push(CheckRow {
            check: "sandwich",
            index: i,
            depth,
            lower: s.lower_2l.max(s.lower_phi2),
            value: s.phi,
            upper: s.upper,
            pass: s.holds,
        });
        let mv = mv_bound_check(&net, depth, &sampler, spec.n_grad, spec.seed.wrapping_add(i as u64), opts)?;
        rows.push(CheckRow {
            check: "mixed_variation",
            index: i,
            depth,
            lower: 0.0,
            value: mv.mv,
            upper: crate::analysis::MV_SLACK * mv.phi_pow,
            pass: mv.holds,
        });
        let c = cost_dominates_phi(&ensemble_deep(spec, i, depth)?, opts)?;
        rows.push(CheckRow {
            check: "cost_dominates_phi",
            index: i,
            depth,
            lower: 0.0,
            value: c.phi,
            upper: c.cost,
            pass: c.holds,
        });
    }
    Ok(rows)
}

/// Rank-1 `M_low` with `Φ_2 = 10` against `I_3`.
pub fn depth_preference_pair() -> (Matrix, Matrix) {
    (
        Matrix::from_diag(&[10.0, 0.0, 0.0]),
        Matrix::identity(3),
    )
}

pub fn verify_ensemble(spec: &EnsembleSpec, opts: &PhiOptions) -> Result<Vec<CheckRow>> {
    for &depth in &spec.depths {
        if depth < 2 {
            return Err(Error::param(format!("depths must be at least 2, got {depth}")));
        }
    }
    if spec.count == 0 {
        return Ok(Vec::new());
    }
    let per_member: Vec<Vec<CheckRow>> = (0..spec.count)
        .into_par_iter()
        .map(|i| member_rows(spec, i, opts))
        .collect::<Result<_>>()?;
    let mut rows: Vec<CheckRow> = per_member.into_iter().flatten().collect();
    let (low, high) = depth_preference_pair();
    let dp = depth_preference_check(&low, &high, &(2..=16).collect::<Vec<_>>(), opts)?;
    let flip = dp.flip.map_or(f64::INFINITY, |l| l as f64);
    rows.push(CheckRow {
        check: "depth_preference",
        index: 0,
        depth: dp.flip.unwrap_or(0),
        lower: 2.0,
        value: flip,
        upper: dp.l0_bound,
        pass: flip <= dp.l0_bound,
    });
    Ok(rows)
}

pub fn verify_csv(rows: &[CheckRow]) -> String {
    let mut out = format!("{VERIFY_HEADER}\n");
    for r in rows {
        out.push_str(&r.to_csv());
        out.push('\n');
    }
    out
}

fn cmd_verify(a: &VerifyArgs) -> Result<i32> {
    let opts = match &a.config {
        Some(p) => Config::parse(&read(p)?)?.phi,
        None => PhiOptions::default(),
    };
    let spec = EnsembleSpec {
        count: a.count,
        rows: a.rows,
        cols: a.cols,
        depths: a.depths.clone(),
        seed: a.seed,
        n_grad: a.n_grad,
        self_test: a.self_test,
    };
    let rows = verify_ensemble(&spec, &opts)?;
    let csv = verify_csv(&rows);
    match &a.out {
        Some(p) => write(p, &csv)?,
        None => print!("{csv}"),
    }
    let failed = rows.iter().filter(|r| !r.pass).count();
    eprintln!("{} checks, {failed} failed", rows.len());
    Ok(if failed == 0 { EXIT_OK } else { EXIT_NUMERICAL })
}

fn cmd_phi(a: &PhiArgs) -> Result<i32> {
    let m = parse_matrix(&read(&a.matrix)?)?;
    let opts = PhiOptions {
        seed: a.seed,
        ..PhiOptions::default()
    };
    let res = phi_l(&m, a.depth, &opts)?;
    let csv = format!("depth,phi\n{},{}\n", a.depth, fmt_num(res.value));
    match &a.out {
        Some(p) => write(p, &csv)?,
        None => print!("{csv}"),
    }
    Ok(EXIT_OK)
}
