//! The `loadbal` command-line front end.
//!
//! Exit codes: 0 success, 1 failed `check`, 2 input error, 3 non-convergence.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use log::{debug, info};
use serde::Serialize;
use serde_json::Value;

use crate::config::{set_numeric_path, ConfigError, ScenarioConfig};
use crate::error::Error;
use crate::flows::synthesize_flows;
use crate::kkt::{
    solve, verify_optimality, KktReport, OptimalSolution, Regime, SolverConfig, KKT_TOL,
};
use crate::network::{FlowMatrix, Network, NodeRole};
use crate::oracle::{
    brute_force_optimum, compare_solutions, ComparisonReport, OracleConfig, OracleResult,
};
use crate::sim::{
    simulate_baseline, simulate_dynamic, simulate_static, Policy, SimConfig, SimReport, Thresholds,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NON_CONVERGENCE: i32 = 3;

pub const SOLVE_CSV_HEADER: &str = "node_id,role,beta,phi,marginal_delay";
pub const SIMULATE_CSV_HEADER: &str = "policy,seed,jobs,mean_response,ci_halfwidth,transfers";
pub const SWEEP_CSV_HEADER: &str = "param_value,alpha,lambda,mean_response,roles";

#[derive(Debug, Parser)]
#[command(
    name = "loadbal",
    version,
    about = "Optimal static load allocation for heterogeneous systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve for the optimal allocation.
    Solve(SolveArgs),
    /// Brute-force optimum for small networks (at most 5 nodes).
    Oracle(OracleArgs),
    /// Solve, run the oracle and fail if the solver is beaten.
    Check(OracleArgs),
    /// Discrete-event simulation of a routing policy.
    Simulate(SimulateArgs),
    /// Tabulate the solution while one numeric config field varies.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, clap::Args)]
struct SolveArgs {
    file: PathBuf,
    /// Overrides both the alpha and lambda tolerances.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Debug, clap::Args)]
struct OracleArgs {
    file: PathBuf,
    /// Grid points per axis.
    #[arg(long, default_value_t = OracleConfig::default().grid)]
    grid: usize,
    /// Window-halving refinement rounds.
    #[arg(long, default_value_t = OracleConfig::default().refine_rounds)]
    refine: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
struct SimulateArgs {
    file: PathBuf,
    #[arg(long)]
    policy: Option<String>,
    #[arg(long)]
    jobs: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Independent runs with seeds `seed, seed+1, ...`.
    #[arg(long, default_value_t = 1)]
    replications: u64,
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    /// Dynamic threshold `low`; defaults to the optimal sink price.
    #[arg(long)]
    low: Option<f64>,
    /// Dynamic threshold `high` (`inf` disables transfers); defaults to the
    /// optimal source price.
    #[arg(long)]
    high: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
struct SweepArgs {
    file: PathBuf,
    /// Numeric field, e.g. `comm.params.t` or `nodes[0].arrival_rate`.
    #[arg(long)]
    param: String,
    #[arg(long, allow_negative_numbers = true)]
    from: f64,
    #[arg(long, allow_negative_numbers = true)]
    to: f64,
    #[arg(long)]
    steps: usize,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::input(format!("invalid config: {e}"))
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NonConvergence { .. } => EXIT_NON_CONVERGENCE,
            Error::Imbalanced { .. } | Error::NoSolution(_) => EXIT_CHECK_FAILED,
            _ => EXIT_INPUT,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type CmdResult = Result<i32, Failure>;

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("LOADBAL_LOG", "error"))
        .format_timestamp(None)
        .try_init();

    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Solve(a) => cmd_solve(&a),
        Command::Oracle(a) => cmd_oracle(&a, false),
        Command::Check(a) => cmd_oracle(&a, true),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Sweep(a) => cmd_sweep(&a),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn load(path: &Path) -> Result<ScenarioConfig, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::input(format!("cannot read {}: {e}", path.display())))?;
    Ok(ScenarioConfig::from_json_str(&text)?)
}

fn write_out(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents)
        .map_err(|e| Failure::input(format!("cannot write {}: {e}", path.display())))
}

fn solver_config(cfg: &ScenarioConfig, tol: Option<f64>) -> Result<SolverConfig, Failure> {
    let mut solver = cfg.solver_config()?;
    if let Some(t) = tol {
        solver.alpha_tol = t;
        solver.lambda_tol = t;
        solver.validate()?;
    }
    Ok(solver)
}

/// Solution plus whether it converged; non-convergence yields the best iterate.
fn solve_or_best(net: &Network, cfg: &SolverConfig) -> Result<(OptimalSolution, bool), Failure> {
    match solve(net, cfg) {
        Ok(s) => Ok((s, true)),
        Err(Error::NonConvergence { best, iterations }) => {
            info!("solver stopped after {iterations} iterations without converging");
            Ok((*best, false))
        }
        Err(e) => Err(e.into()),
    }
}

#[derive(Serialize)]
struct NodeRow {
    id: String,
    role: NodeRole,
    beta: f64,
    phi: f64,
    marginal_delay: f64,
}

#[derive(Serialize)]
struct SolveReport {
    converged: bool,
    nodes: Vec<NodeRow>,
    alpha: f64,
    lambda: f64,
    comm_price: f64,
    mean_response_time: f64,
    objective: f64,
    regime: Regime,
    iterations: usize,
    flow: Option<FlowMatrix>,
    kkt: KktReport,
}

fn solve_report(net: &Network, sol: &OptimalSolution, converged: bool) -> SolveReport {
    let nodes = net
        .nodes()
        .iter()
        .zip(&sol.allocation.beta)
        .zip(&sol.partition.roles)
        .map(|((node, &beta), &role)| NodeRow {
            id: node.id.clone(),
            role,
            beta,
            phi: node.arrival_rate,
            marginal_delay: node
                .delay
                .marginal_node_delay(beta)
                .unwrap_or(f64::INFINITY),
        })
        .collect();
    SolveReport {
        converged,
        nodes,
        alpha: sol.alpha,
        lambda: sol.allocation.lambda,
        comm_price: sol.comm_price,
        mean_response_time: sol.mean_response_time(net),
        objective: sol.objective,
        regime: sol.regime,
        iterations: sol.iterations,
        flow: synthesize_flows(net, &sol.partition, &sol.allocation.beta).ok(),
        kkt: verify_optimality(net, sol, KKT_TOL),
    }
}

fn solve_table(report: &SolveReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<12} {:<14} {:>14} {:>14} {:>16}",
        "node", "role", "beta", "phi", "marginal_delay"
    );
    for r in &report.nodes {
        let _ = writeln!(
            s,
            "{:<12} {:<14} {:>14.8} {:>14.8} {:>16.8}",
            r.id,
            r.role.to_string(),
            r.beta,
            r.phi,
            r.marginal_delay
        );
    }
    let _ = writeln!(s, "alpha               {:.10}", report.alpha);
    let _ = writeln!(s, "lambda              {:.10}", report.lambda);
    let _ = writeln!(s, "comm_price          {:.10}", report.comm_price);
    let _ = writeln!(s, "mean_response_time  {:.10}", report.mean_response_time);
    let _ = writeln!(
        s,
        "optimality          {} (worst residual {:.3e})",
        if report.kkt.holds() {
            "verified"
        } else {
            "NOT verified"
        },
        report.kkt.worst()
    );
    s
}

fn solve_csv(report: &SolveReport) -> String {
    let mut s = String::from(SOLVE_CSV_HEADER);
    s.push('\n');
    for r in &report.nodes {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.id, r.role, r.beta, r.phi, r.marginal_delay
        );
    }
    s
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

fn cmd_solve(args: &SolveArgs) -> CmdResult {
    let cfg = load(&args.file)?;
    let net = cfg.to_network()?;
    let solver = solver_config(&cfg, args.tol)?;
    let (sol, converged) = solve_or_best(&net, &solver)?;
    let report = solve_report(&net, &sol, converged);
    print!("{}", solve_table(&report));
    if let Some(path) = &args.out {
        let body = match args.format {
            Format::Json => to_json(&report),
            Format::Csv => solve_csv(&report),
        };
        write_out(path, &body)?;
    }
    if converged {
        Ok(EXIT_OK)
    } else {
        eprintln!("error: solver did not converge; best iterate shown");
        Ok(EXIT_NON_CONVERGENCE)
    }
}

#[derive(Serialize)]
struct OracleReport<'a> {
    grid: usize,
    refine_rounds: usize,
    oracle: &'a OracleResult,
    solver_objective: f64,
    solver_converged: bool,
    comparison: &'a ComparisonReport,
}

fn cmd_oracle(args: &OracleArgs, check: bool) -> CmdResult {
    let cfg = load(&args.file)?;
    let net = cfg.to_network()?;
    let ocfg = OracleConfig {
        grid: args.grid,
        refine_rounds: args.refine,
    };
    let oracle = brute_force_optimum(&net, &ocfg)?;
    let (sol, converged) = solve_or_best(&net, &cfg.solver_config()?)?;
    let comparison = compare_solutions(&sol, &oracle, &net);
    debug!("oracle used {} evaluations", oracle.evaluations);

    println!("oracle objective   {:.10}", oracle.objective);
    println!("solver objective   {:.10}", sol.objective);
    println!("objective gap      {:.3e}", comparison.objective_gap);
    println!(
        "oracle beta        [{}]",
        oracle
            .allocation
            .beta
            .iter()
            .map(|b| format!("{b:.8}"))
            .collect::<Vec<_>>()
            .join(", ")
    );
    println!("roles agree        {}", comparison.roles_agree);

    if let Some(path) = &args.out {
        let report = OracleReport {
            grid: ocfg.grid,
            refine_rounds: ocfg.refine_rounds,
            oracle: &oracle,
            solver_objective: sol.objective,
            solver_converged: converged,
            comparison: &comparison,
        };
        write_out(path, &to_json(&report))?;
    }
    if !converged {
        eprintln!("error: solver did not converge");
        return Ok(EXIT_NON_CONVERGENCE);
    }
    if check && !comparison.pass {
        eprintln!(
            "check failed: oracle beats solver by {:.3e}",
            comparison.objective_gap
        );
        return Ok(EXIT_CHECK_FAILED);
    }
    if check {
        println!("check passed");
    }
    Ok(EXIT_OK)
}

fn format_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn simulate_one(
    net: &Network,
    policy: Policy,
    flow: Option<&FlowMatrix>,
    thresholds: Option<Thresholds>,
    cfg: &SimConfig,
) -> crate::Result<SimReport> {
    match policy {
        Policy::StaticOptimal => {
            simulate_static(net, flow.expect("static policy needs a flow"), cfg)
        }
        Policy::DynamicThreshold => simulate_dynamic(
            net,
            thresholds.expect("dynamic policy needs thresholds"),
            cfg,
        ),
        _ => simulate_baseline(net, cfg),
    }
}

fn cmd_simulate(args: &SimulateArgs) -> CmdResult {
    let cfg = load(&args.file)?;
    let net = cfg.to_network()?;
    let mut sim = cfg.sim_config()?;
    if let Some(p) = &args.policy {
        sim.policy = p.parse().map_err(Failure::input)?;
    }
    if let Some(j) = args.jobs {
        sim.total_jobs = j;
    }
    if let Some(s) = args.seed {
        sim.seed = s;
    }
    sim.validate()?;
    if args.replications == 0 {
        return Err(Failure::input("--replications must be at least 1"));
    }

    let needs_solution = match sim.policy {
        Policy::StaticOptimal => true,
        Policy::DynamicThreshold => args.low.is_none() || args.high.is_none(),
        _ => false,
    };
    let mut flow = None;
    let mut thresholds = None;
    if needs_solution {
        let (sol, converged) = solve_or_best(&net, &cfg.solver_config()?)?;
        if !converged {
            eprintln!("error: solver did not converge");
            return Ok(EXIT_NON_CONVERGENCE);
        }
        flow = Some(synthesize_flows(
            &net,
            &sol.partition,
            &sol.allocation.beta,
        )?);
        thresholds = Some(Thresholds {
            low: args.low.unwrap_or(sol.alpha),
            high: args.high.unwrap_or(sol.alpha + sol.comm_price),
        });
    } else if let (Some(low), Some(high)) = (args.low, args.high) {
        thresholds = Some(Thresholds { low, high });
    }

    let configs: Vec<SimConfig> = (0..args.replications)
        .map(|k| SimConfig {
            seed: sim.seed.wrapping_add(k),
            ..sim
        })
        .collect();
    let run = |c: &SimConfig| simulate_one(&net, sim.policy, flow.as_ref(), thresholds, c);
    let reports: Vec<crate::Result<SimReport>> = if args.parallel > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(args.parallel)
            .build()
            .map_err(|e| Failure::input(format!("cannot start {} threads: {e}", args.parallel)))?;
        pool.install(|| configs.par_iter().map(run).collect())
    } else {
        configs.iter().map(run).collect()
    };
    let reports = reports.into_iter().collect::<crate::Result<Vec<_>>>()?;

    let mut csv = String::from(SIMULATE_CSV_HEADER);
    csv.push('\n');
    for r in &reports {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            r.policy,
            r.seed,
            r.jobs,
            r.mean_response_time,
            format_opt(r.ci_halfwidth),
            r.transfer_count
        );
    }
    match &args.out {
        Some(path) => {
            write_out(path, &csv)?;
            for r in &reports {
                println!(
                    "{} seed {}: mean response {:.6} (±{}) over {} jobs, {} transfers",
                    r.policy,
                    r.seed,
                    r.mean_response_time,
                    r.ci_halfwidth
                        .map(|c| format!("{c:.6}"))
                        .unwrap_or_else(|| "n/a".into()),
                    r.measured_jobs,
                    r.transfer_count
                );
            }
        }
        None => print!("{csv}"),
    }
    Ok(EXIT_OK)
}

enum SweepRow {
    Solved {
        value: f64,
        alpha: f64,
        lambda: f64,
        mean_response: f64,
        roles: String,
        converged: bool,
    },
    Unstable {
        value: f64,
    },
}

fn sweep_step(doc: &Value, args: &SweepArgs, value: f64) -> Result<SweepRow, Failure> {
    let mut doc = doc.clone();
    set_numeric_path(&mut doc, &args.param, value)?;
    let cfg = ScenarioConfig::from_value(doc)?;
    if !cfg.is_stable() {
        return Ok(SweepRow::Unstable { value });
    }
    let net = cfg.to_network()?;
    let (sol, converged) = solve_or_best(&net, &solver_config(&cfg, args.tol)?)?;
    Ok(SweepRow::Solved {
        value,
        alpha: sol.alpha,
        lambda: sol.allocation.lambda,
        mean_response: sol.mean_response_time(&net),
        roles: sol.partition.compact(),
        converged,
    })
}

fn cmd_sweep(args: &SweepArgs) -> CmdResult {
    let text = fs::read_to_string(&args.file)
        .map_err(|e| Failure::input(format!("cannot read {}: {e}", args.file.display())))?;
    // Validate the whole document once before editing it.
    ScenarioConfig::from_json_str(&text)?;
    let doc: Value = serde_json::from_str(&text).map_err(|e| Failure::input(e.to_string()))?;
    if args.steps == 0 {
        return Err(Failure::input("--steps must be at least 1"));
    }
    if !(args.from.is_finite() && args.to.is_finite()) {
        return Err(Failure::input("--from and --to must be finite"));
    }
    set_numeric_path(&mut doc.clone(), &args.param, args.from)?;

    let values: Vec<f64> = (0..args.steps)
        .map(|k| {
            if args.steps == 1 {
                args.from
            } else if k + 1 == args.steps {
                args.to
            } else {
                args.from + (args.to - args.from) * k as f64 / (args.steps - 1) as f64
            }
        })
        .collect();
    let step = |v: &f64| sweep_step(&doc, args, *v);
    let rows: Vec<Result<SweepRow, Failure>> = if args.parallel > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(args.parallel)
            .build()
            .map_err(|e| Failure::input(format!("cannot start {} threads: {e}", args.parallel)))?;
        pool.install(|| values.par_iter().map(step).collect())
    } else {
        values.iter().map(step).collect()
    };
    let rows = rows.into_iter().collect::<Result<Vec<_>, _>>()?;

    let mut csv = String::from(SWEEP_CSV_HEADER);
    csv.push('\n');
    let mut all_converged = true;
    for row in &rows {
        match row {
            SweepRow::Solved {
                value,
                alpha,
                lambda,
                mean_response,
                roles,
                converged,
            } => {
                all_converged &= converged;
                let _ = writeln!(csv, "{value},{alpha},{lambda},{mean_response},\"{roles}\"");
            }
            SweepRow::Unstable { value } => {
                let _ = writeln!(csv, "{value},,,,unstable");
            }
        }
    }
    match &args.out {
        Some(path) => {
            write_out(path, &csv)?;
            println!("{} rows written to {}", rows.len(), path.display());
        }
        None => print!("{csv}"),
    }
    if all_converged {
        Ok(EXIT_OK)
    } else {
        eprintln!("error: solver did not converge at every step");
        Ok(EXIT_NON_CONVERGENCE)
    }
}
