//! Command-line surface: `run`, `check`, `qp-solve` and `--batch`.
//!
//! Every command returns an [`Outcome`] instead of printing, so the binary is
//! a thin wrapper and tests can drive the commands in-process.
//!
//! Exit codes: 0 all enabled monitors pass, 1 invariant violation,
//! 2 parse or configuration error, 3 numerical abort.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::adaptive::{bounds_for_gray, iterative_rescaling, AdaptiveOptions, BoundSource, BoundSolver};
use crate::check::check;
use crate::error::Error;
use crate::report::{num, render_check, trajectory_csv, RunReport};
use crate::scenario::{QpInstance, Scenario};
use crate::sim::integrate;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVARIANT: i32 = 1;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Scenario files picked up by `--batch`.
pub const SCENARIO_EXTENSION: &str = "scn";

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Outcome {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl Outcome {
    fn failure(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            stdout: String::new(),
            stderr: message.into(),
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Infeasible(_) | Error::NoConvergence { .. } | Error::Numerical(_) => EXIT_NUMERICAL,
        _ => EXIT_PARSE,
    }
}

fn read(path: &Path) -> Result<String, Outcome> {
    std::fs::read_to_string(path).map_err(|e| {
        Outcome::failure(EXIT_PARSE, format!("{}: cannot read: {e}", path.display()))
    })
}

fn fail(path: &Path, e: &Error) -> Outcome {
    Outcome::failure(exit_code(e), format!("{}: {e}", path.display()))
}

fn load(path: &Path, overrides: &[String]) -> Result<Scenario, Outcome> {
    let text = read(path)?;
    Scenario::parse(&text, overrides).map_err(|e| fail(path, &e))
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scenario".into())
}

/// Simulates a scenario and writes `<stem>.csv`, `<stem>.report.txt` and
/// `<stem>.check.txt` into `out_dir` (the current directory when absent).
pub fn run_file(path: &Path, out_dir: Option<&Path>, overrides: &[String]) -> Outcome {
    let scenario = match load(path, overrides) {
        Ok(s) => s,
        Err(o) => return o,
    };
    let result = (|| {
        let sys = scenario.closed_loop()?;
        let policy = scenario.policy()?;
        let checked = check(&sys, &policy, Some(&scenario.x0), scenario.interior_options())?;
        let tr = integrate(&sys, &policy, &scenario.initial_state(), &scenario.sim)?;
        let report = RunReport::build(&scenario, &sys, &tr);
        let csv = trajectory_csv(&tr, sys.graph.vertex_count(), sys.graph.edge_count());
        Ok::<_, Error>((report, render_check(&checked, &sys.graph), csv))
    })();
    let (report, check_text, csv) = match result {
        Ok(r) => r,
        Err(e) => return fail(path, &e),
    };

    let dir = out_dir.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    let name = stem(path);
    let report_text = report.render();
    let writes = [
        (format!("{name}.csv"), &csv),
        (format!("{name}.report.txt"), &report_text),
        (format!("{name}.check.txt"), &check_text),
    ];
    if let Err(e) = std::fs::create_dir_all(&dir) {
        return Outcome::failure(EXIT_PARSE, format!("{}: cannot create: {e}", dir.display()));
    }
    for (file, body) in writes {
        let target = dir.join(file);
        if let Err(e) = std::fs::write(&target, body) {
            return Outcome::failure(EXIT_PARSE, format!("{}: cannot write: {e}", target.display()));
        }
    }
    Outcome {
        code: if report.passed() { EXIT_OK } else { EXIT_INVARIANT },
        stdout: report_text,
        stderr: String::new(),
    }
}

/// Static analysis only, no simulation.
pub fn check_file(path: &Path, overrides: &[String]) -> Outcome {
    let scenario = match load(path, overrides) {
        Ok(s) => s,
        Err(o) => return o,
    };
    let result = (|| {
        let sys = scenario.closed_loop()?;
        let policy = scenario.policy()?;
        let r = check(&sys, &policy, Some(&scenario.x0), scenario.interior_options())?;
        Ok::<_, Error>(render_check(&r, &sys.graph))
    })();
    match result {
        Ok(text) => Outcome {
            code: EXIT_OK,
            stdout: text,
            stderr: String::new(),
        },
        Err(e) => fail(path, &e),
    }
}

fn on_edges(v: &[f64], edges: &[usize]) -> String {
    edges.iter().map(|&j| num(v[j])).collect::<Vec<_>>().join(" ")
}

/// Solves one bound computation both ways and prints the comparison.
pub fn qp_solve_file(path: &Path) -> Outcome {
    let text = match read(path) {
        Ok(t) => t,
        Err(o) => return o,
    };
    let inst = match QpInstance::parse(&text) {
        Ok(i) => i,
        Err(e) => return fail(path, &e),
    };
    let g = match inst.graph.build() {
        Ok(g) => g,
        Err(e) => return fail(path, &e),
    };
    let opts = AdaptiveOptions {
        classifier: inst.classifier,
        solver: BoundSolver::Qp,
        rescale_tol: inst.rescale_tol,
        rescale_max_iter: inst.rescale_max_iter,
    };
    let gray = inst.gray_mask();
    let bounds = match bounds_for_gray(&g, &gray, &inst.mu, None, &opts) {
        Ok(b) => b,
        Err(e) => return fail(path, &e),
    };
    let cls = &bounds.classification;
    let mut o = String::new();
    let one = |v: &[usize]| v.iter().map(|i| (i + 1).to_string()).collect::<Vec<_>>().join(" ");
    let _ = writeln!(o, "gray = {}", one(&cls.gray));
    let _ = writeln!(o, "black1 = {}", one(&cls.black1));
    let _ = writeln!(o, "black2 = {}", one(&cls.black2));
    let _ = writeln!(o, "e_b_out = {}", one(&cls.e_b_out));
    if bounds.source == BoundSource::Unbounded {
        let _ = writeln!(o, "unconstrained: no black vertices, phi_plus = inf on every edge");
        return Outcome {
            code: EXIT_OK,
            stdout: o,
            stderr: String::new(),
        };
    }
    let balance = |phi: &[f64]| {
        cls.black
            .iter()
            .map(|&i| g.vertex_balance(i, phi).abs())
            .fold(0.0_f64, f64::max)
    };
    let source = match bounds.source {
        BoundSource::Qp => "qp",
        BoundSource::IterativeFallback => "iterative_fallback (balance constraints inconsistent)",
        BoundSource::ShrinkFallback => "iterative_fallback (qp solution grows or reverses a flow)",
        BoundSource::Iterative => "iterative",
        BoundSource::Unbounded => "unbounded",
    };
    let _ = writeln!(o, "qp.source = {source}");
    let _ = writeln!(o, "qp.phi_star = {}", on_edges(&bounds.phi_star, &cls.e_b_out));
    let _ = writeln!(o, "qp.kkt_residual = {}", num(bounds.kkt_residual));
    let _ = writeln!(o, "qp.balance_residual = {}", num(balance(&bounds.phi_star)));
    let _ = writeln!(o, "qp.shrinks = {}", bounds.shrinks);
    let phi_plus: Vec<String> = bounds.phi_plus.iter().map(|&v| num(v)).collect();
    let _ = writeln!(o, "phi_plus = {}", phi_plus.join(" "));
    match iterative_rescaling(&g, &inst.mu, cls, inst.rescale_tol, inst.rescale_max_iter) {
        Ok(r) => {
            let deviation = cls
                .e_b_out
                .iter()
                .map(|&j| (r.flows[j] - bounds.phi_star[j]).abs())
                .fold(0.0_f64, f64::max);
            let _ = writeln!(o, "iterative.phi = {}", on_edges(&r.flows, &cls.e_b_out));
            let _ = writeln!(o, "iterative.iterations = {}", r.iterations);
            let _ = writeln!(o, "iterative.balance_residual = {}", num(balance(&r.flows)));
            let _ = writeln!(o, "deviation = {}", num(deviation));
            Outcome {
                code: EXIT_OK,
                stdout: o,
                stderr: String::new(),
            }
        }
        Err(e) => Outcome {
            code: exit_code(&e),
            stdout: o,
            stderr: format!("{}: {e}", path.display()),
        },
    }
}

/// Runs every `*.scn` file in `dir` concurrently, one isolated run each.
pub fn batch(dir: &Path, out_dir: Option<&Path>, overrides: &[String]) -> Outcome {
    let mut files: Vec<PathBuf> = match std::fs::read_dir(dir) {
        Ok(rd) => rd
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == SCENARIO_EXTENSION))
            .collect(),
        Err(e) => return Outcome::failure(EXIT_PARSE, format!("{}: cannot list: {e}", dir.display())),
    };
    files.sort();
    let outcomes: Vec<Outcome> = std::thread::scope(|scope| {
        let handles: Vec<_> = files
            .iter()
            .map(|f| scope.spawn(move || run_file(f, out_dir, overrides)))
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Outcome::failure(EXIT_NUMERICAL, "run panicked"))
            })
            .collect()
    });
    let mut out = Outcome::default();
    for (f, o) in files.iter().zip(&outcomes) {
        let _ = writeln!(out.stdout, "{} = {}", f.display(), o.code);
        if !o.stderr.is_empty() {
            let _ = writeln!(out.stderr, "{}", o.stderr.trim_end());
        }
        out.code = out.code.max(o.code);
    }
    out
}

#[derive(Debug, Parser)]
#[command(name = "flownet", version, about = "Distribution networks under PI control with adaptive flow bounds")]
pub struct Args {
    /// run every *.scn scenario in this directory in parallel
    #[arg(long, value_name = "DIR")]
    pub batch: Option<PathBuf>,
    /// output directory for batch runs
    #[arg(short, long, value_name = "DIR")]
    pub output: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// simulate a scenario and write trajectory, run report and check report
    Run {
        file: PathBuf,
        #[arg(short, long, value_name = "DIR")]
        output: Option<PathBuf>,
        /// override a scenario value, e.g. --set sim.t_end=5
        #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
        set: Vec<String>,
    },
    /// analyse graph and bounds without simulating
    Check {
        file: PathBuf,
        #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
        set: Vec<String>,
    },
    /// compute adaptive bounds for one instance by QP and by rescaling
    QpSolve { file: PathBuf },
}

pub fn main_with<I, T>(args: I) -> Outcome
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(args) {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_PARSE } else { EXIT_OK };
            let text = e.render().to_string();
            return if code == EXIT_OK {
                Outcome {
                    code,
                    stdout: text,
                    stderr: String::new(),
                }
            } else {
                Outcome::failure(code, text)
            };
        }
    };
    match (args.batch, args.command) {
        (Some(dir), None) => batch(&dir, args.output.as_deref(), &[]),
        (None, Some(Command::Run { file, output, set })) => {
            run_file(&file, output.as_deref().or(args.output.as_deref()), &set)
        }
        (None, Some(Command::Check { file, set })) => check_file(&file, &set),
        (None, Some(Command::QpSolve { file })) => qp_solve_file(&file),
        (Some(_), Some(_)) => Outcome::failure(EXIT_PARSE, "--batch cannot be combined with a command"),
        (None, None) => Outcome::failure(EXIT_PARSE, "expected a command or --batch <dir>; see --help"),
    }
}
