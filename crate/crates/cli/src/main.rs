//! `logimix` command-line front end.
//!
//! Every command reads its inputs from files, writes its outputs atomically
//! and echoes the seed into any JSON report. Exit codes: 0 on success, 1 for
//! invalid input or arguments, 2 for numerical failures (including a fit that
//! did not converge or a Gram quadrature that did not settle).

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use logimix::estimation::em_fit;
use logimix::identifiability::{
    collapse_pair, find_separating_offsets, gram_min_eigenvalue, identifiability_trial, mixture_equality_test,
    probe_open_problem, vandermonde_check, GramSpec, GridSpec, Scenario,
};
use logimix::mixture::{load_model, mixture_cdf, mixture_pdf, model_to_json, row_log_densities, sample_mixture};
use logimix::{Dataset, Error, FitConfig, MixtureModel};
use serde_json::{json, Value};

#[derive(Debug, Parser)]
#[command(name = "logimix", version, about = "Mixtures of multivariate logistic distributions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw rows from a mixture model.
    Sample(SampleArgs),
    /// Per-row log densities and total log-likelihood of a dataset.
    Eval(EvalArgs),
    /// Fit a mixture by EM.
    Fit(FitArgs),
    /// Numerical identifiability checks.
    CheckId(CheckIdArgs),
    /// Merge two coordinates of a shared-scale mixture.
    Collapse(CollapseArgs),
    /// Search for near-coincident mixtures with per-component scales.
    ProbeOpen(ProbeArgs),
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Also write the generating component index of every row.
    #[arg(long)]
    labels: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write an (x, pdf, cdf) grid for a univariate model.
    #[arg(long)]
    emit_plot_data: Option<PathBuf>,
    #[arg(long, default_value_t = 401)]
    plot_points: usize,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    /// Number of components.
    #[arg(long)]
    s: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    report: PathBuf,
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-8)]
    rel_tol: f64,
    #[arg(long, default_value_t = 5)]
    restarts: usize,
    #[arg(long, default_value_t = 50)]
    m_step_iters: usize,
    #[arg(long, default_value_t = 1e-10)]
    m_step_tol: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Gram,
    Vandermonde,
    Equality,
    Trial,
}

#[derive(Debug, Args)]
struct CheckIdArgs {
    #[arg(long, value_enum)]
    mode: Mode,
    /// Model whose components are checked (gram), or the first model (equality).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Second model (equality).
    #[arg(long)]
    other: Option<PathBuf>,
    /// Comma-separated locations (vandermonde).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    mus: Vec<f64>,
    /// Comma-separated scales (vandermonde).
    #[arg(long, value_delimiter = ',')]
    sigmas: Vec<f64>,
    #[arg(long, default_value_t = 64)]
    nodes: usize,
    #[arg(long, default_value_t = 41)]
    grid_points: usize,
    #[arg(long, default_value_t = 10.0)]
    grid_span: f64,
    #[arg(long, default_value_t = 1e-9)]
    dist_tol: f64,
    #[arg(long, default_value_t = 1e-6)]
    param_tol: f64,
    /// Dimension (trial).
    #[arg(long)]
    p: Option<usize>,
    /// Components per model (trial).
    #[arg(long)]
    s: Option<usize>,
    /// All components of a trial share one scale vector (trial).
    #[arg(long)]
    shared_scale: bool,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report path; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CollapseArgs {
    #[arg(long)]
    model: PathBuf,
    /// Zero-based coordinate pair `a,b`.
    #[arg(long, value_delimiter = ',', num_args = 1)]
    coords: Vec<usize>,
    /// Offsets `ya,yb`; searched for with `--seed` when omitted.
    #[arg(long, value_delimiter = ',', num_args = 1, allow_hyphen_values = true)]
    offsets: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ProbeArgs {
    #[arg(long)]
    p: usize,
    #[arg(long)]
    s: usize,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-10)]
    near_tol: f64,
    #[arg(long)]
    out: PathBuf,
}

/// Failure with its exit code.
#[derive(Debug)]
enum Failure {
    Invalid(String),
    Numerical(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Numerical(_) => Failure::Numerical(e.to_string()),
            other => Failure::Invalid(other.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

fn invalid(msg: impl Into<String>) -> Failure {
    Failure::Invalid(msg.into())
}

fn read_model(path: &Path) -> Result<MixtureModel, Failure> {
    let file = File::open(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    load_model(BufReader::new(file)).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn read_data(path: &Path) -> Result<Dataset, Failure> {
    let file = File::open(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    Dataset::read_csv(BufReader::new(file)).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

/// Writes through a temporary file in the destination directory, then renames.
fn write_atomic(path: &Path, contents: &[u8]) -> Outcome {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let fail = |e: std::io::Error| invalid(format!("{}: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(fail)?;
    tmp.write_all(contents).map_err(fail)?;
    tmp.as_file().sync_all().map_err(fail)?;
    // temporary files are created private; give the result ordinary permissions
    let permissions = match std::fs::metadata(path) {
        Ok(meta) => meta.permissions(),
        Err(_) => default_permissions(tmp.as_file()).map_err(fail)?,
    };
    tmp.as_file().set_permissions(permissions).map_err(fail)?;
    tmp.persist(path).map_err(|e| fail(e.error))?;
    Ok(())
}

#[cfg(unix)]
fn default_permissions(_: &File) -> std::io::Result<std::fs::Permissions> {
    use std::os::unix::fs::PermissionsExt;
    Ok(std::fs::Permissions::from_mode(0o644))
}

#[cfg(not(unix))]
fn default_permissions(file: &File) -> std::io::Result<std::fs::Permissions> {
    Ok(file.metadata()?.permissions())
}

/// JSON report with `seed` added at the top level.
fn report_json<T: serde::Serialize>(report: &T, seed: u64) -> Result<String, Failure> {
    let mut value = serde_json::to_value(report).map_err(|e| Failure::Invalid(e.to_string()))?;
    if let Value::Object(map) = &mut value {
        map.insert("seed".into(), json!(seed));
    }
    Ok(logimix::json::to_string(&value)?)
}

fn emit(out: Option<&Path>, text: &str) -> Outcome {
    match out {
        Some(path) => write_atomic(path, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn sample(args: SampleArgs) -> Outcome {
    let model = read_model(&args.model)?;
    if args.n == 0 {
        return Err(invalid("--n must be at least 1"));
    }
    let (data, labels) = sample_mixture(&model, args.n, args.seed)?;
    let header: Vec<String> = (1..=model.p()).map(|k| format!("x{k}")).collect();
    let mut buf = Vec::new();
    data.write_csv(&mut buf, Some(&header.join(",")))?;
    write_atomic(&args.out, &buf)?;
    if let Some(path) = &args.labels {
        let mut text = String::from("# component\n");
        for l in labels {
            writeln!(text, "{l}").expect("writing to a String cannot fail");
        }
        write_atomic(path, text.as_bytes())?;
    }
    Ok(())
}

fn eval(args: EvalArgs) -> Outcome {
    let model = read_model(&args.model)?;
    let data = read_data(&args.data)?;
    if data.p() != model.p() {
        return Err(invalid(format!(
            "data has {} columns but the model has p = {}",
            data.p(),
            model.p()
        )));
    }
    if args.emit_plot_data.is_some() && model.p() != 1 {
        return Err(invalid("--emit-plot-data needs a univariate model"));
    }
    let log_densities = row_log_densities(&data, &model)?;
    let total = logimix::numeric::pairwise_sum(&log_densities);
    let report = json!({
        "n": data.n(),
        "p": data.p(),
        "total_loglik": total,
        "mean_log_density": total / data.n() as f64,
        "log_densities": log_densities,
    });
    write_atomic(&args.out, report_json(&report, args.seed)?.as_bytes())?;
    if let Some(path) = &args.emit_plot_data {
        if args.plot_points < 2 {
            return Err(invalid("--plot-points must be at least 2"));
        }
        let grid = GridSpec {
            points_per_axis: args.plot_points,
            span: 10.0,
        }
        .axes(&[&model]);
        let mut text = String::from("# x,pdf,cdf\n");
        for &x in &grid[0] {
            let (pdf, cdf) = (mixture_pdf(&[x], &model)?, mixture_cdf(&[x], &model)?);
            writeln!(text, "{x:e},{pdf:e},{cdf:e}").expect("writing to a String cannot fail");
        }
        write_atomic(path, text.as_bytes())?;
    }
    Ok(())
}

fn fit(args: FitArgs) -> Outcome {
    let data = read_data(&args.data)?;
    let config = FitConfig {
        s: args.s,
        max_iter: args.max_iter,
        rel_tol: args.rel_tol,
        n_restarts: args.restarts,
        seed: args.seed,
        m_step_iters: args.m_step_iters,
        m_step_tol: args.m_step_tol,
    };
    config.validate()?;
    let result = em_fit(&data, &config)?;
    write_atomic(&args.out, model_to_json(&result.model)?.as_bytes())?;
    write_atomic(&args.report, logimix::json::to_string(&result.report())?.as_bytes())?;
    if !result.converged {
        return Err(Failure::Numerical(format!(
            "EM did not converge within {} iterations",
            args.max_iter
        )));
    }
    Ok(())
}

fn check_id(args: CheckIdArgs) -> Outcome {
    let out = args.out.as_deref();
    match args.mode {
        Mode::Gram => {
            let path = args
                .model
                .as_ref()
                .ok_or_else(|| invalid("--mode gram needs --model"))?;
            let model = read_model(path)?;
            let spec = GramSpec {
                nodes_per_axis: args.nodes,
                ..GramSpec::default()
            };
            let report = gram_min_eigenvalue(model.components(), &spec)?;
            emit(out, &report_json(&report, args.seed)?)?;
            if !report.converged {
                return Err(Failure::Numerical(
                    "Gram quadrature did not converge under node doubling".into(),
                ));
            }
            Ok(())
        }
        Mode::Vandermonde => {
            if args.mus.is_empty() {
                return Err(invalid("--mode vandermonde needs --mus and --sigmas"));
            }
            let report = vandermonde_check(&args.mus, &args.sigmas)?;
            emit(out, &report_json(&report, args.seed)?)
        }
        Mode::Equality => {
            let (Some(a), Some(b)) = (&args.model, &args.other) else {
                return Err(invalid("--mode equality needs --model and --other"));
            };
            let (m1, m2) = (read_model(a)?, read_model(b)?);
            let grid = GridSpec {
                points_per_axis: args.grid_points,
                span: args.grid_span,
            };
            let report = mixture_equality_test(&m1, &m2, &grid, args.dist_tol, args.param_tol)?;
            emit(out, &report_json(&report, args.seed)?)
        }
        Mode::Trial => {
            let (Some(p), Some(s)) = (args.p, args.s) else {
                return Err(invalid("--mode trial needs --p and --s"));
            };
            let outcome = identifiability_trial(
                Scenario {
                    p,
                    s,
                    shared_scale: args.shared_scale,
                },
                args.seed,
                args.trials,
            )?;
            emit(out, &report_json(&outcome, args.seed)?)
        }
    }
}

fn collapse(args: CollapseArgs) -> Outcome {
    let model = read_model(&args.model)?;
    let [a, b] = args.coords[..] else {
        return Err(invalid("--coords takes two indices a,b"));
    };
    let (y_a, y_b) = match args.offsets.as_deref() {
        Some(&[y_a, y_b]) => (y_a, y_b),
        Some(_) => return Err(invalid("--offsets takes two values ya,yb")),
        None => find_separating_offsets(model.components(), (a, b), args.seed)?,
    };
    let collapsed = collapse_pair(&model, (a, b), y_a, y_b)?;
    write_atomic(&args.out, model_to_json(&collapsed)?.as_bytes())
}

fn probe(args: ProbeArgs) -> Outcome {
    let report = probe_open_problem(args.p, args.s, args.trials, args.seed, args.near_tol)?;
    write_atomic(&args.out, logimix::json::to_string(&report)?.as_bytes())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.command {
        Command::Sample(a) => sample(a),
        Command::Eval(a) => eval(a),
        Command::Fit(a) => fit(a),
        Command::CheckId(a) => check_id(a),
        Command::Collapse(a) => collapse(a),
        Command::ProbeOpen(a) => probe(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(2)
        }
    }
}
