//! `ssp`: generate, solve, and run stochastic-shortest-path instances.
//!
//! Exit codes: 0 success; 1 file or parse problems; 2 violated model
//! assumptions (improper policies, episodes that never terminate);
//! 3 convergence or tolerance failures; 4 bad flags or parameters.

use std::fmt;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use ssp_core::diagnostics::{summarize_run, DiagnosticsError};
use ssp_core::dp::{self, ValueVector};
use ssp_core::instances::{self, GenError, InstanceIoError, InstanceSpec, RandomProperSpec};
use ssp_core::mdp::SspMdp;
use ssp_core::opi::{self, EvalMethod, OpiConfig, OpiError, StepSchedule};

/// Largest sup-norm gap tolerated between the two exact solvers.
const SOLVER_AGREEMENT_TOL: f64 = 1e-8;

#[derive(Parser)]
#[command(
    name = "ssp",
    version,
    about = "Stochastic shortest path toolkit: instance generation, exact solving, \
             and simulation-based optimistic policy iteration"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a benchmark instance and write it as JSON.
    Gen(GenArgs),
    /// Solve an instance exactly by value iteration and policy iteration.
    Solve(SolveArgs),
    /// Run simulation-based optimistic policy iteration on an instance.
    Run(RunArgs),
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum KindArg {
    Chain,
    Random,
    Grid,
}

#[derive(Parser)]
struct GenArgs {
    #[arg(long, value_enum)]
    kind: KindArg,
    /// Chain length (chain only).
    #[arg(long)]
    length: Option<usize>,
    /// Number of states (random only).
    #[arg(long)]
    n: Option<usize>,
    /// Actions per state (random only).
    #[arg(long, default_value_t = 3)]
    actions: usize,
    /// Minimum per-row termination probability (random only).
    #[arg(long, default_value_t = 0.05)]
    eta: f64,
    /// Lower cost bound (random only).
    #[arg(long, default_value_t = 0.5)]
    cost_lo: f64,
    /// Upper cost bound (random only).
    #[arg(long, default_value_t = 1.5)]
    cost_hi: f64,
    /// Generator seed (random only).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Grid rows (grid only).
    #[arg(long)]
    rows: Option<usize>,
    /// Grid columns (grid only).
    #[arg(long)]
    cols: Option<usize>,
    /// Probability that a move slips sideways (grid only).
    #[arg(long, default_value_t = 0.2)]
    slip: f64,
    /// Per-step cost (chain and grid).
    #[arg(long, default_value_t = 1.0)]
    cost: f64,
    /// Output path for the instance JSON.
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Parser)]
struct SolveArgs {
    /// Instance JSON to solve.
    instance: PathBuf,
    /// Value-iteration convergence tolerance.
    #[arg(long, default_value_t = dp::DEFAULT_VI_TOL)]
    tol: f64,
    /// Value-iteration iteration cap.
    #[arg(long, default_value_t = dp::DEFAULT_MAX_ITER)]
    max_iter: usize,
    /// Write the solution here instead of stdout.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum MethodArg {
    /// Monte Carlo evaluation: episode costs.
    Mc,
    /// Temporal-difference evaluation: requires --lambda.
    Td,
}

#[derive(Parser)]
struct RunArgs {
    /// Instance JSON to run on.
    instance: PathBuf,
    #[arg(long, value_enum)]
    method: MethodArg,
    /// Geometric weight of the td method, in [0, 1).
    #[arg(long)]
    lambda: Option<f64>,
    /// Number of sweeps.
    #[arg(long, default_value_t = 10_000)]
    iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Step-size schedule a,b,p for gamma_t = a / (b + t + 1)^p.
    #[arg(long, default_value = "1,0,1")]
    gamma: String,
    /// Per-episode step cutoff; exceeding it aborts the run.
    #[arg(long, default_value_t = opi::DEFAULT_CUTOFF)]
    cutoff: usize,
    /// Record a log row every this many sweeps.
    #[arg(long, default_value_t = opi::DEFAULT_RECORD_EVERY)]
    record_every: usize,
    /// Fraction of the log treated as its tail in the summary.
    #[arg(long, default_value_t = 0.1)]
    tail: f64,
    /// Require the final oracle distance to be at most this.
    #[arg(long)]
    tol: Option<f64>,
    /// Prefix for the .csv and .summary.json outputs.
    #[arg(short, long, default_value = "run")]
    out: PathBuf,
}

#[derive(Debug)]
struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn assumption(message: impl Into<String>) -> Self {
        CliError { code: 2, message: message.into() }
    }

    fn convergence(message: impl Into<String>) -> Self {
        CliError { code: 3, message: message.into() }
    }

    fn flags(message: impl Into<String>) -> Self {
        CliError { code: 4, message: message.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<InstanceIoError> for CliError {
    fn from(e: InstanceIoError) -> Self {
        CliError { code: 1, message: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError { code: 1, message: e.to_string() }
    }
}

impl From<GenError> for CliError {
    fn from(e: GenError) -> Self {
        let code = match e {
            GenError::InvalidSpec(_) => 4,
            GenError::NotAllProper(_) => 2,
        };
        CliError { code, message: e.to_string() }
    }
}

impl From<dp::DpError> for CliError {
    fn from(e: dp::DpError) -> Self {
        use dp::DpError::*;
        let code = match e {
            Model(_) => 1,
            ImproperPolicy(_) | NotAllProper(_) => 2,
            SingularSystem | MaxIterExceeded { .. } | NonpositiveWeight(_) => 3,
            TooLarge { .. } => 4,
        };
        CliError { code, message: e.to_string() }
    }
}

impl From<OpiError> for CliError {
    fn from(e: OpiError) -> Self {
        use OpiError::*;
        let code = match e {
            InvalidSchedule(_) | InvalidConfig(_) => 4,
            TruncatedEpisode { .. } | NotAllProper(_) | Sim(_) => 2,
            Model(_) => 1,
        };
        CliError { code, message: e.to_string() }
    }
}

impl From<DiagnosticsError> for CliError {
    fn from(e: DiagnosticsError) -> Self {
        let code = match e {
            DiagnosticsError::InvalidTailFraction(_) => 4,
            _ => 3,
        };
        CliError { code, message: e.to_string() }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests also land here; keep them exit 0.
            let code = if e.use_stderr() { 4 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Solve(args) => cmd_solve(args),
        Command::Run(args) => cmd_run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}

fn build_spec(args: &GenArgs) -> Result<InstanceSpec, CliError> {
    let require = |value: Option<usize>, flag: &str, kind: &str| {
        value.ok_or_else(|| CliError::flags(format!("--kind {kind} requires --{flag}")))
    };
    match args.kind {
        KindArg::Chain => Ok(InstanceSpec::Chain {
            length: require(args.length, "length", "chain")?,
            step_cost: args.cost,
        }),
        KindArg::Random => Ok(InstanceSpec::RandomProper(RandomProperSpec {
            n: require(args.n, "n", "random")?,
            actions_per_state: args.actions,
            min_term_prob: args.eta,
            cost_range: (args.cost_lo, args.cost_hi),
            seed: args.seed,
        })),
        KindArg::Grid => Ok(InstanceSpec::Gridworld {
            rows: require(args.rows, "rows", "grid")?,
            cols: require(args.cols, "cols", "grid")?,
            slip: args.slip,
            step_cost: args.cost,
        }),
    }
}

fn cmd_gen(args: GenArgs) -> Result<(), CliError> {
    let spec = build_spec(&args)?;
    let mdp = spec.generate()?;
    instances::save_mdp(&mdp, &args.out)?;
    let actions: usize = (1..=mdp.n()).map(|s| mdp.actions(s).len()).sum();
    println!(
        "wrote {}: {} states, {} actions, every policy proper",
        args.out.display(),
        mdp.n(),
        actions
    );
    Ok(())
}

#[derive(Serialize)]
struct ContractionOutput<'a> {
    xi: &'a [f64],
    beta: f64,
}

#[derive(Serialize)]
struct SolveOutput<'a> {
    optimal_value: &'a [f64],
    optimal_policy: &'a [u32],
    vi_iterations: usize,
    vi_residual: f64,
    pi_sweeps: usize,
    /// Sup distance between the two solvers' values.
    solver_gap: f64,
    contraction: ContractionOutput<'a>,
}

struct ExactSolve {
    value: ValueVector,
    policy: ssp_core::Policy,
    vi_iterations: usize,
    vi_residual: f64,
    pi_sweeps: usize,
    gap: f64,
}

/// Solves by both exact routes and cross-checks them. The reported value
/// is policy iteration's, which is exact up to the linear solver.
fn solve_exact(mdp: &SspMdp, tol: f64, max_iter: usize) -> Result<ExactSolve, CliError> {
    if let Some(witness) = mdp.trap_witness() {
        return Err(CliError::assumption(format!(
            "not every policy is proper; trap states {:?}",
            witness.states()
        )));
    }
    let zeros = ValueVector::zeros(mdp.n());
    let vi = dp::value_iteration(mdp, &zeros, tol, max_iter)?;
    let pi = dp::policy_iteration(mdp, &dp::greedy_policy(mdp, &zeros))?;
    let gap = vi.value.sup_distance(&pi.value);
    if gap > SOLVER_AGREEMENT_TOL {
        return Err(CliError::convergence(format!(
            "value iteration and policy iteration disagree by {gap:e} \
             (allowed {SOLVER_AGREEMENT_TOL:e}); solutions are unreliable"
        )));
    }
    Ok(ExactSolve {
        value: pi.value,
        policy: pi.policy,
        vi_iterations: vi.iterations,
        vi_residual: vi.residual,
        pi_sweeps: pi.sweeps,
        gap,
    })
}

fn cmd_solve(args: SolveArgs) -> Result<(), CliError> {
    if !args.tol.is_finite() || args.tol <= 0.0 {
        return Err(CliError::flags(format!("--tol must be positive, got {}", args.tol)));
    }
    let mdp = instances::load_mdp(&args.instance)?;
    let solve = solve_exact(&mdp, args.tol, args.max_iter)?;
    let certificate = dp::contraction_certificate(&mdp)?;
    let output = SolveOutput {
        optimal_value: solve.value.values(),
        optimal_policy: solve.policy.choices(),
        vi_iterations: solve.vi_iterations,
        vi_residual: solve.vi_residual,
        pi_sweeps: solve.pi_sweeps,
        solver_gap: solve.gap,
        contraction: ContractionOutput { xi: &certificate.xi, beta: certificate.beta },
    };
    let json = to_pretty_json(&output);
    match &args.out {
        Some(path) => {
            fs::write(path, json)?;
            println!(
                "wrote {}: {} states solved, solver gap {:e}, contraction modulus {}",
                path.display(),
                mdp.n(),
                solve.gap,
                certificate.beta
            );
        }
        None => print!("{json}"),
    }
    Ok(())
}

#[derive(Serialize)]
struct OracleOutput<'a> {
    value: &'a [f64],
    vi_iterations: usize,
    pi_sweeps: usize,
    solver_gap: f64,
}

#[derive(Serialize)]
struct RunOutput<'a> {
    config: &'a OpiConfig,
    summary: &'a ssp_core::RunSummary,
    final_value: &'a [f64],
    final_policy: &'a [u32],
    /// Exact solution, present when the model is small enough to solve.
    oracle: Option<OracleOutput<'a>>,
}

fn thread_pool_from_env() -> Result<Option<rayon::ThreadPool>, CliError> {
    let raw = match std::env::var("SSP_OPI_THREADS") {
        Err(_) => return Ok(None),
        Ok(raw) => raw,
    };
    let raw = raw.trim();
    if raw.is_empty() {
        return Ok(None);
    }
    let threads: usize = raw.parse().map_err(|_| {
        CliError::flags(format!("SSP_OPI_THREADS must be a nonnegative integer, got {raw:?}"))
    })?;
    if threads == 0 {
        return Ok(None);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::flags(format!("cannot build a {threads}-thread pool: {e}")))?;
    Ok(Some(pool))
}

fn cmd_run(args: RunArgs) -> Result<(), CliError> {
    let method = match (args.method, args.lambda) {
        (MethodArg::Mc, None) => EvalMethod::MonteCarlo,
        (MethodArg::Mc, Some(_)) => {
            return Err(CliError::flags("--lambda applies only to --method td"));
        }
        (MethodArg::Td, Some(lambda)) => EvalMethod::TdLambda { lambda },
        (MethodArg::Td, None) => {
            return Err(CliError::flags("--method td requires --lambda"));
        }
    };
    let schedule = parse_schedule(&args.gamma)?;
    let config = OpiConfig {
        method,
        schedule,
        iterations: args.iters,
        seed: args.seed,
        cutoff: args.cutoff,
        record_every: args.record_every,
    };
    config.validate()?;

    let mdp = instances::load_mdp(&args.instance)?;
    if let Some(witness) = mdp.trap_witness() {
        return Err(CliError::assumption(format!(
            "not every policy is proper; trap states {:?}",
            witness.states()
        )));
    }

    // Small models get an exact oracle so the log can track true error.
    let oracle = if mdp.n() <= dp::DENSE_SOLVE_LIMIT {
        Some(solve_exact(&mdp, dp::DEFAULT_VI_TOL, dp::DEFAULT_MAX_ITER)?)
    } else {
        None
    };

    let pool = thread_pool_from_env()?;
    let oracle_value = oracle.as_ref().map(|o| &o.value);
    let log = match &pool {
        Some(pool) => pool.install(|| opi::run(&mdp, &config, oracle_value)),
        None => opi::run(&mdp, &config, oracle_value),
    }?;
    let summary = summarize_run(&log, args.tail)?;

    let csv_path = PathBuf::from(format!("{}.csv", args.out.display()));
    let summary_path = PathBuf::from(format!("{}.summary.json", args.out.display()));
    fs::write(&csv_path, log.to_csv())?;
    let output = RunOutput {
        config: &config,
        summary: &summary,
        final_value: log.final_value.values(),
        final_policy: log.final_policy.choices(),
        oracle: oracle.as_ref().map(|o| OracleOutput {
            value: o.value.values(),
            vi_iterations: o.vi_iterations,
            pi_sweeps: o.pi_sweeps,
            solver_gap: o.gap,
        }),
    };
    fs::write(&summary_path, to_pretty_json(&output))?;

    let final_error = match summary.final_error {
        Some(e) => format!("{e:.6}"),
        None => "n/a (no oracle)".to_string(),
    };
    println!("wrote {} and {}", csv_path.display(), summary_path.display());
    println!(
        "final_error={final_error} max_tail_c_t={:.6} policy_switches={} max_sup_value={:.6}",
        summary.max_tail_residual, summary.policy_switches, summary.max_sup_value
    );

    if let Some(tol) = args.tol {
        match summary.final_error {
            Some(error) if error <= tol => {}
            Some(error) => {
                return Err(CliError::convergence(format!(
                    "final error {error} exceeds --tol {tol}"
                )));
            }
            None => {
                return Err(CliError::flags(
                    "--tol requires an exact oracle, but the model is too large to solve",
                ));
            }
        }
    }
    Ok(())
}

fn parse_schedule(text: &str) -> Result<StepSchedule, CliError> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    let bad = || CliError::flags(format!("--gamma expects three numbers a,b,p, got {text:?}"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let mut values = [0.0; 3];
    for (slot, part) in values.iter_mut().zip(&parts) {
        *slot = part.parse().map_err(|_| bad())?;
    }
    Ok(StepSchedule::polynomial(values[0], values[1], values[2])?)
}

fn to_pretty_json<T: Serialize>(value: &T) -> String {
    let mut json = serde_json::to_string_pretty(value).expect("output structs serialize");
    json.push('\n');
    json
}
