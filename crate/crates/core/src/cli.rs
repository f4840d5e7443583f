//! Command-line front end. Exit codes: 0 success, 1 usage, 2 invalid
//! problem or input, 3 solver did not converge, 4 a check failed.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use crate::convergence::{run_convergence, ConvergenceOptions};
use crate::dpp::{solve_dpp, SolveError, ValueField};
use crate::expr::{parse, Expr};
use crate::game::{Strategy, TugOfWar};
use crate::geometry::{check_domain_hypothesis, GridDomain, HypothesisMode, NodeClass, Point};
use crate::problem::{load_problem, ProblemFile};
use crate::verify::{comparison_sweep, default_gradient_floor, residual_report, Side};

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_NO_CONVERGENCE: i32 = 3;
pub const EXIT_CHECK_FAILED: i32 = 4;

#[derive(Parser, Debug)]
#[command(name = "tugwar", version, about = "Tug-of-war game values for the mixed infinity Laplacian")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Problem JSON file.
    problem: PathBuf,
    /// Output directory (created if missing).
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the dynamic programming principle; writes field.csv and solve.json.
    Solve(Common),
    /// Monte Carlo estimate of the game value at a point; writes estimate.json.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Starting point `x` or `x,y`; snapped to the nearest node.
        #[arg(long, value_parser = parse_point)]
        at: Point,
        #[arg(long, default_value_t = 100_000)]
        episodes: usize,
        #[arg(long, default_value_t = 10_000_000)]
        step_cap: usize,
        /// greedy-max, greedy-min, uniform-random or fixed:VX,VY.
        #[arg(long, default_value = "greedy-max")]
        player_one: String,
        #[arg(long, default_value = "greedy-min")]
        player_two: String,
        /// Overrides the problem seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the first episode as CSV to this file.
        #[arg(long)]
        dump_episode: Option<PathBuf>,
    },
    /// Residuals and comparison sweeps; writes verify.json.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Check this field CSV instead of solving.
        #[arg(long)]
        field: Option<PathBuf>,
        /// Finite-difference spacing (default: epsilon).
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long, default_value_t = 500)]
        trials: usize,
        /// KEY=LIMIT with KEY one of interior, neumann, dirichlet,
        /// comparison, dpp; exit 4 when the value exceeds LIMIT.
        #[arg(long = "fail-on", value_parser = parse_threshold)]
        fail_on: Vec<(FailKey, f64)>,
    },
    /// Refinement study; writes converge.json.
    Converge {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u32).range(2..=12))]
        levels: u32,
        /// Exact solution to measure errors against.
        #[arg(long)]
        exact: Option<String>,
        /// Record wall-clock times (breaks byte reproducibility).
        #[arg(long)]
        timing: bool,
    },
    /// Check the geometric hypothesis on the discretized domain.
    Hypothesis {
        problem: PathBuf,
        #[arg(long, default_value = "strict", value_parser = parse_mode)]
        mode: HypothesisMode,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FailKey {
    Interior,
    Neumann,
    Dirichlet,
    Comparison,
    Dpp,
}

fn parse_point(s: &str) -> Result<Point, String> {
    let parts: Vec<&str> = s.split(',').collect();
    let num = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}"));
    match parts.as_slice() {
        [x] => Ok([num(x)?, 0.0]),
        [x, y] => Ok([num(x)?, num(y)?]),
        _ => Err("expected x or x,y".into()),
    }
}

fn parse_threshold(s: &str) -> Result<(FailKey, f64), String> {
    let (k, v) = s.split_once('=').ok_or("expected KEY=LIMIT")?;
    let key = match k {
        "interior" => FailKey::Interior,
        "neumann" => FailKey::Neumann,
        "dirichlet" => FailKey::Dirichlet,
        "comparison" => FailKey::Comparison,
        "dpp" => FailKey::Dpp,
        other => return Err(format!("unknown key {other:?}")),
    };
    let limit = v.parse::<f64>().map_err(|e| format!("{v:?}: {e}"))?;
    Ok((key, limit))
}

fn parse_mode(s: &str) -> Result<HypothesisMode, String> {
    match s {
        "strict" => Ok(HypothesisMode::Strict),
        "flat-ok" => Ok(HypothesisMode::FlatOk),
        _ => Err("expected strict or flat-ok".into()),
    }
}

/// Failure carrying an exit code and a message for stderr.
struct Exit(i32, String);

type Outcome = Result<i32, Exit>;

fn invalid(e: impl std::fmt::Display) -> Exit {
    Exit(EXIT_INVALID, e.to_string())
}

fn solve_failure(e: SolveError) -> Exit {
    match e {
        SolveError::NoConvergence { .. } => Exit(EXIT_NO_CONVERGENCE, e.to_string()),
        _ => invalid(e),
    }
}

/// Sorted-key pretty JSON followed by a newline.
fn to_json<T: Serialize>(v: &T) -> String {
    let value: Value = serde_json::to_value(v).expect("report serializes");
    let mut s = serde_json::to_string_pretty(&value).expect("value serializes");
    s.push('\n');
    s
}

fn write_file(path: &Path, contents: &str) -> Result<(), Exit> {
    fs::write(path, contents).map_err(|e| invalid(format!("writing {}: {e}", path.display())))
}

fn out_dir(dir: &Path) -> Result<(), Exit> {
    fs::create_dir_all(dir).map_err(|e| invalid(format!("creating {}: {e}", dir.display())))
}

fn load(path: &Path) -> Result<(ProblemFile, Arc<GridDomain>), Exit> {
    let p = load_problem(path).map_err(invalid)?;
    let g = p.grid().map_err(invalid)?;
    Ok((p, g))
}

fn solve(p: &ProblemFile, g: &Arc<GridDomain>) -> Result<ValueField, Exit> {
    solve_dpp(g, &p.payoff, &p.solver_config()).map_err(solve_failure)
}

fn class_counts(g: &GridDomain) -> Value {
    let count = |c| g.ids_with(c).count();
    json!({
        "interior": count(NodeClass::Interior),
        "dirichlet": count(NodeClass::Dirichlet),
        "neumann": count(NodeClass::Neumann),
        "exterior": count(NodeClass::Exterior),
    })
}

fn cmd_solve(c: &Common) -> Outcome {
    let (p, g) = load(&c.problem)?;
    let u = solve(&p, &g)?;
    out_dir(&c.out)?;
    let path = c.out.join("field.csv");
    let file = File::create(&path).map_err(|e| invalid(format!("writing {}: {e}", path.display())))?;
    u.write_csv(BufWriter::new(file)).map_err(invalid)?;
    let cfg = p.solver_config();
    let active: Vec<f64> = g.active_ids().map(|n| u.value(n)).collect();
    let report = json!({
        "epsilon": p.epsilon,
        "h": p.h,
        "iterations": u.iterations,
        "final_residual": u.final_residual,
        "tol": cfg.tol,
        "sweep": cfg.sweep,
        "init": cfg.init,
        "nodes": class_counts(&g),
        "min_value": active.iter().cloned().fold(f64::INFINITY, f64::min),
        "max_value": active.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    });
    write_file(&c.out.join("solve.json"), &to_json(&report))?;
    Ok(0)
}

fn strategy<'a>(spec: &str, u: &'a ValueField) -> Result<Strategy<'a>, Exit> {
    match spec {
        "greedy-max" => Ok(Strategy::GreedyMax(u)),
        "greedy-min" => Ok(Strategy::GreedyMin(u)),
        "uniform-random" => Ok(Strategy::UniformRandom),
        _ => {
            let v = spec
                .strip_prefix("fixed:")
                .and_then(|v| parse_point(v).ok())
                .ok_or_else(|| Exit(EXIT_USAGE, format!("unknown strategy {spec:?}")))?;
            let n = v[0].hypot(v[1]);
            if !(n > 0.0 && n.is_finite()) {
                return Err(Exit(EXIT_USAGE, "fixed direction must be nonzero".into()));
            }
            Ok(Strategy::FixedDirection([v[0] / n, v[1] / n]))
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    c: &Common,
    at: Point,
    episodes: usize,
    step_cap: usize,
    one: &str,
    two: &str,
    seed: Option<u64>,
    dump: Option<&Path>,
) -> Outcome {
    let (p, g) = load(&c.problem)?;
    let seed = seed.unwrap_or(p.seed);
    let x0 = g
        .nearest_node(at)
        .filter(|&n| g.class(n).is_active())
        .ok_or_else(|| invalid(format!("{at:?} is not near an active node")))?;
    let u = solve(&p, &g)?;
    let (s_one, s_two) = (strategy(one, &u)?, strategy(two, &u)?);
    let game = TugOfWar::new(Arc::clone(&g), &p.payoff, p.epsilon).map_err(invalid)?;
    let est = game.estimate_value(x0, &s_one, &s_two, step_cap, episodes, seed).map_err(invalid)?;
    out_dir(&c.out)?;
    let mut report = serde_json::to_value(&est).expect("estimate serializes");
    let extra = json!({
        "start": g.point(x0),
        "dpp_value": u.value(x0),
        "player_one": one,
        "player_two": two,
    });
    report.as_object_mut().expect("object").extend(extra.as_object().expect("object").clone());
    write_file(&c.out.join("estimate.json"), &to_json(&report))?;
    if let Some(path) = dump {
        let ep = game.simulate(x0, &s_one, &s_two, step_cap, seed).map_err(invalid)?;
        let file = File::create(path).map_err(|e| invalid(format!("writing {}: {e}", path.display())))?;
        ep.write_csv(&g, Some(&u), BufWriter::new(file)).map_err(invalid)?;
    }
    Ok(0)
}

fn cmd_verify(c: &Common, field: Option<&Path>, delta: Option<f64>, trials: usize, fail_on: &[(FailKey, f64)]) -> Outcome {
    let (p, g) = load(&c.problem)?;
    let u = match field {
        Some(path) => {
            let file = File::open(path).map_err(|e| invalid(format!("reading {}: {e}", path.display())))?;
            ValueField::read_csv(Arc::clone(&g), p.epsilon, file).map_err(invalid)?
        }
        None => solve(&p, &g)?,
    };
    let dpp = crate::dpp::dpp_residual_field(&u).map_err(invalid)?;
    let dpp_residual = dpp.iter().map(|(_, r)| r.abs()).fold(0.0, f64::max);
    let floor = default_gradient_floor(&g, &p.payoff).map_err(invalid)?;
    let residuals = residual_report(&u, &p.payoff, delta.unwrap_or(p.epsilon), floor).map_err(invalid)?;
    let above = comparison_sweep(&u, Side::Above, trials, p.seed);
    let below = comparison_sweep(&u, Side::Below, trials, p.seed);
    let comparison_failures = above.failures.len() + below.failures.len();

    let mut exceeded = Vec::new();
    for &(key, limit) in fail_on {
        let (name, value) = match key {
            FailKey::Interior => ("interior", residuals.interior_linf_residual),
            FailKey::Neumann => ("neumann", residuals.neumann_linf_residual),
            FailKey::Dirichlet => ("dirichlet", residuals.dirichlet_linf_error),
            FailKey::Comparison => ("comparison", comparison_failures as f64),
            FailKey::Dpp => ("dpp", dpp_residual),
        };
        if value > limit {
            exceeded.push(json!({"key": name, "limit": limit, "value": value}));
        }
    }
    let report = json!({
        "dpp_residual": dpp_residual,
        "residuals": residuals,
        "comparison_above": above,
        "comparison_below": below,
        "comparison_failures": comparison_failures,
        "exceeded": exceeded,
    });
    out_dir(&c.out)?;
    write_file(&c.out.join("verify.json"), &to_json(&report))?;
    if exceeded.is_empty() {
        Ok(0)
    } else {
        Err(Exit(EXIT_CHECK_FAILED, format!("thresholds exceeded: {}", Value::from(exceeded))))
    }
}

fn cmd_converge(c: &Common, levels: u32, exact: Option<&str>, timing: bool) -> Outcome {
    let p = load_problem(&c.problem).map_err(invalid)?;
    let exact: Option<Expr> = exact.map(parse).transpose().map_err(|e| invalid(format!("--exact: {e}")))?;
    let report = run_convergence(&p, exact.as_ref(), ConvergenceOptions { n_levels: levels as usize, timed: timing });
    out_dir(&c.out)?;
    write_file(&c.out.join("converge.json"), &to_json(&report))?;
    match &report.failed_level {
        Some(f) if f.error.starts_with("no convergence") => Err(Exit(EXIT_NO_CONVERGENCE, f.error.clone())),
        Some(f) => Err(invalid(&f.error)),
        None => Ok(0),
    }
}

fn cmd_hypothesis(problem: &Path, mode: HypothesisMode, out: Option<&Path>) -> Outcome {
    let (_, g) = load(problem)?;
    let report = check_domain_hypothesis(&g, mode).map_err(invalid)?;
    let text = to_json(&report);
    print!("{text}");
    if let Some(dir) = out {
        out_dir(dir)?;
        write_file(&dir.join("hypothesis.json"), &text)?;
    }
    if report.holds {
        Ok(0)
    } else {
        Err(Exit(EXIT_CHECK_FAILED, format!("hypothesis fails in {mode:?} mode")))
    }
}

/// Runs the CLI on `argv` (including the program name) and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    let outcome = match &cli.command {
        Command::Solve(c) => cmd_solve(c),
        Command::Simulate { common, at, episodes, step_cap, player_one, player_two, seed, dump_episode } => {
            cmd_simulate(common, *at, *episodes, *step_cap, player_one, player_two, *seed, dump_episode.as_deref())
        }
        Command::Verify { common, field, delta, trials, fail_on } => {
            cmd_verify(common, field.as_deref(), *delta, *trials, fail_on)
        }
        Command::Converge { common, levels, exact, timing } => cmd_converge(common, *levels, exact.as_deref(), *timing),
        Command::Hypothesis { problem, mode, out } => cmd_hypothesis(problem, *mode, out.as_deref()),
    };
    match outcome {
        Ok(code) => code,
        Err(Exit(code, msg)) => {
            eprintln!("tugwar: {msg}");
            code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn problems(name: &str) -> String {
        format!("{}/problems/{name}", env!("CARGO_MANIFEST_DIR"))
    }

    fn run_args(args: &[&str]) -> i32 {
        let mut argv = vec!["tugwar"];
        argv.extend_from_slice(args);
        run(argv)
    }

    fn write_problem(dir: &Path, name: &str, edit: impl Fn(String) -> String) -> String {
        let text = edit(fs::read_to_string(problems("square.json")).unwrap());
        let path = dir.join(name);
        fs::write(&path, text).unwrap();
        path.to_string_lossy().into_owned()
    }

    #[test]
    fn solve_writes_field_and_report() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        assert_eq!(run_args(&["solve", &problems("square.json"), "-o", out.to_str().unwrap()]), 0);
        let csv = fs::read_to_string(out.join("field.csv")).unwrap();
        assert!(csv.starts_with("x,y,class,value\n"));
        let report: Value = serde_json::from_str(&fs::read_to_string(out.join("solve.json")).unwrap()).unwrap();
        assert!(report["final_residual"].as_f64().unwrap() <= 2e-10);
        assert_eq!(report["nodes"]["dirichlet"], 34);
    }

    #[test]
    fn exit_codes() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        let out = out.to_str().unwrap();
        assert_eq!(run_args(&["solve"]), EXIT_USAGE);
        assert_eq!(run_args(&["frobnicate"]), EXIT_USAGE);
        assert_eq!(run_args(&["--help"]), 0);
        assert_eq!(run_args(&["solve", "/nonexistent/problem.json", "-o", out]), EXIT_INVALID);
        let small_eps = write_problem(dir.path(), "eps.json", |t| t.replace("\"epsilon\": 0.25", "\"epsilon\": 0.1"));
        assert_eq!(run_args(&["solve", &small_eps, "-o", out]), EXIT_INVALID);
        let capped = write_problem(dir.path(), "cap.json", |t| {
            t.replace("\"seed\": 1", "\"seed\": 1, \"solver\": {\"max_iters\": 2, \"init\": \"zero\"}")
        });
        assert_eq!(run_args(&["solve", &capped, "-o", out]), EXIT_NO_CONVERGENCE);
        assert_eq!(run_args(&["verify", &problems("square.json"), "-o", out, "--trials", "10", "--fail-on", "bogus=1"]), EXIT_USAGE);
        assert_eq!(run_args(&["hypothesis", &problems("l_shape.json"), "--mode", "strict"]), EXIT_CHECK_FAILED);
        assert_eq!(run_args(&["hypothesis", &problems("disk.json"), "--mode", "strict"]), 0);
        assert_eq!(run_args(&["simulate", &problems("square.json"), "-o", out, "--at", "5,5"]), EXIT_INVALID);
    }

    #[test]
    fn verify_thresholds() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        let out = out.to_str().unwrap();
        let sq = problems("square.json");
        assert_eq!(run_args(&["verify", &sq, "-o", out, "--trials", "20", "--fail-on", "interior=1e-3"]), 0);
        assert_eq!(run_args(&["verify", &sq, "-o", out, "--trials", "20", "--fail-on", "interior=1e-12"]), EXIT_CHECK_FAILED);
        let report: Value = serde_json::from_str(&fs::read_to_string(Path::new(out).join("verify.json")).unwrap()).unwrap();
        assert_eq!(report["exceeded"][0]["key"], "interior");
    }

    #[test]
    fn reloaded_field_verifies_identically() {
        let dir = tempfile::tempdir().unwrap();
        let sq = problems("square.json");
        let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
        assert_eq!(run_args(&["solve", &sq, "-o", a.to_str().unwrap()]), 0);
        assert_eq!(run_args(&["verify", &sq, "-o", b.to_str().unwrap(), "--trials", "50"]), 0);
        let field = a.join("field.csv");
        assert_eq!(run_args(&["verify", &sq, "-o", c.to_str().unwrap(), "--trials", "50", "--field", field.to_str().unwrap()]), 0);
        assert_eq!(fs::read(b.join("verify.json")).unwrap(), fs::read(c.join("verify.json")).unwrap());
    }

    #[test]
    fn simulate_and_converge_reports() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        let o = out.to_str().unwrap();
        let dump = dir.path().join("episode.csv");
        let code = run_args(&[
            "simulate", &problems("square.json"), "-o", o, "--at", "0.5,0.5", "--episodes", "500",
            "--player-one", "fixed:1,0", "--dump-episode", dump.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        let est: Value = serde_json::from_str(&fs::read_to_string(out.join("estimate.json")).unwrap()).unwrap();
        for key in ["mean", "std_error", "n", "truncated_fraction", "seed"] {
            assert!(est.get(key).is_some(), "{key}");
        }
        assert_eq!(est["seed"], 1);
        assert!(fs::read_to_string(dump).unwrap().starts_with("step,toss,x,y,value\n"));

        assert_eq!(run_args(&["converge", &problems("neumann_line.json"), "-o", o, "--levels", "2", "--exact", "1"]), 0);
        let text = fs::read_to_string(out.join("converge.json")).unwrap();
        assert!(!text.contains("wall_time"));
        let report: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(report["levels"].as_array().unwrap().len(), 2);
    }

    #[test]
    fn reports_have_sorted_keys() {
        let text = to_json(&json!({"b": 1, "a": {"d": 2, "c": 3}}));
        assert_eq!(text, "{\n  \"a\": {\n    \"c\": 3,\n    \"d\": 2\n  },\n  \"b\": 1\n}\n");
    }
}
