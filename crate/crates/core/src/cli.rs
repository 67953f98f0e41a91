//! Command-line front end. Every subcommand writes one machine-readable
//! document (JSON, or CSV for the convergence table) and returns an exit
//! code: 0 on success, 1 when a computation fails, 2 for bad usage.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::ergodicity::{
    brute_force_transient, check_spin_ergodicity, classify_transient, SpinErgodicityReport, TransientCase,
    MAX_BRUTE_FORCE_PLAYERS,
};
use crate::error::{Error, Result};
use crate::kernels::{Params, Pattern};
use crate::montecarlo::{
    convergence_table, default_burn_in, simulate_pattern, simulate_ring_spin, ConvergenceOptions, ConvergenceTable,
    GameMode, RingConfig, RingEstimate, SimConfig, SimResult,
};
use crate::profit::{self, ExactOptions, Formula, Method, SolverDiagnostics};

pub const EXIT_OK: i32 = 0;
pub const EXIT_COMPUTE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Name of the environment variable holding the default worker count.
pub const THREADS_ENV: &str = "PARRONDO_THREADS";

/// Header of the convergence CSV.
pub const CONVERGENCE_HEADER: &str = "N,mu_pattern,mu_mixed,gap";
/// Header of the optional ring footer in the convergence CSV.
pub const RING_FOOTER_HEADER: &str = "ring_estimate,ring_se";

const MIN_N: usize = 3;
const MAX_N: usize = profit::MAX_EXACT_PLAYERS;

#[derive(Parser, Debug)]
#[command(name = "parrondo", version, about = "Exact and Monte Carlo analysis of cooperative Parrondo games on a ring")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Exact mean profit from the stationary distribution.
    Exact(ExactArgs),
    /// Simulate the games turn by turn.
    Simulate(SimulateArgs),
    /// Transient set of the pattern chains and spin-system ergodicity checks.
    Classify(ClassifyArgs),
    /// Pattern versus mixture gap over a range of ring sizes.
    Convergence(ConvergenceArgs),
    /// Large-ring estimate of the infinite-lattice mean profit.
    Spin(SpinArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Args, Debug)]
pub struct OutputArgs {
    /// Output format; CSV is only available for tabular output.
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Write to this file instead of stdout.
    #[arg(long, short = 'o')]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[group(required = true, multiple = false)]
pub struct ModeArgs {
    /// Periodic schedule `r,s`: r plays of A, then s plays of B.
    #[arg(long, value_parser = parse_pattern)]
    pub pattern: Option<Pattern>,
    /// Random mixture: game A with this probability each turn.
    #[arg(long, value_parser = parse_gamma)]
    pub gamma: Option<f64>,
    /// Game B only.
    #[arg(long)]
    pub pure_b: bool,
}

impl ModeArgs {
    fn mode(&self) -> GameMode {
        match (self.pattern, self.gamma) {
            (Some(p), _) => GameMode::Pattern(p),
            (None, Some(g)) => GameMode::Mixed(g),
            _ => GameMode::PureB,
        }
    }
}

#[derive(Args, Debug)]
pub struct ExactArgs {
    #[arg(long, value_parser = parse_n)]
    pub n: usize,
    /// Biases `p0,p1,p2,p3`.
    #[arg(long, value_parser = parse_params)]
    pub p: Params,
    #[command(flatten)]
    pub mode: ModeArgs,
    /// Stationary solver.
    #[arg(long, default_value = "auto", value_parser = parse_method)]
    pub method: Method,
    /// Profit formula for pattern mode.
    #[arg(long, default_value = "all", value_parser = parse_formula)]
    pub formula: Formula,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long, value_parser = parse_n)]
    pub n: usize,
    #[arg(long, value_parser = parse_params)]
    pub p: Params,
    #[command(flatten)]
    pub mode: ModeArgs,
    /// Games per replica, burn-in included.
    #[arg(long, default_value_t = 1_000_000)]
    pub turns: u64,
    /// Games discarded at the start of each replica [default: max(10^4, 100 N)].
    #[arg(long)]
    pub burn_in: Option<u64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u64).range(1..))]
    pub replicas: u64,
    /// Starting state as a binary string, player 1 first [default: all zeros].
    #[arg(long)]
    pub initial: Option<String>,
    /// Number of running-mean checkpoints to report.
    #[arg(long, default_value_t = 0)]
    pub trace: usize,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Args, Debug)]
pub struct ClassifyArgs {
    #[arg(long, value_parser = parse_n)]
    pub n: usize,
    #[arg(long, value_parser = parse_params)]
    pub p: Params,
    /// Compare against the support-graph oracle (N <= 12).
    #[arg(long)]
    pub verify: bool,
    /// Pattern whose chain the oracle analyses.
    #[arg(long, default_value = "1,1", value_parser = parse_pattern)]
    pub pattern: Pattern,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Args, Debug)]
pub struct ConvergenceArgs {
    /// Ring sizes as `start:stop:step` (inclusive) or a single N.
    #[arg(long, value_parser = parse_n_range)]
    pub n: NRange,
    #[arg(long, value_parser = parse_params)]
    pub p: Params,
    #[arg(long, value_parser = parse_pattern)]
    pub pattern: Pattern,
    #[arg(long, default_value = "auto", value_parser = parse_method)]
    pub method: Method,
    /// Append a large-ring estimate of the common limit.
    #[arg(long)]
    pub with_ring: bool,
    #[arg(long, default_value_t = 512)]
    pub ring: usize,
    #[arg(long, default_value_t = 20_000)]
    pub sweeps: u64,
    /// Sweeps discarded before measuring [default: sweeps / 10].
    #[arg(long)]
    pub burn_in_sweeps: Option<u64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u64).range(1..))]
    pub replicas: u64,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Args, Debug)]
pub struct SpinArgs {
    /// Base biases `p0,p1,p2,p3`.
    #[arg(long, value_parser = parse_params)]
    pub p: Params,
    /// Mix with game A at this weight; game B alone if omitted.
    #[arg(long, value_parser = parse_gamma)]
    pub gamma: Option<f64>,
    #[arg(long, default_value_t = 256)]
    pub ring: usize,
    #[arg(long, default_value_t = 10_000)]
    pub sweeps: u64,
    /// Sweeps discarded before measuring [default: sweeps / 10].
    #[arg(long)]
    pub burn_in_sweeps: Option<u64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u64).range(1..))]
    pub replicas: u64,
    #[command(flatten)]
    pub out: OutputArgs,
}

/// Inclusive range of ring sizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NRange {
    pub start: usize,
    pub stop: usize,
    pub step: usize,
}

impl NRange {
    pub fn values(&self) -> Vec<usize> {
        (self.start..=self.stop).step_by(self.step).collect()
    }
}

fn parse_n(s: &str) -> std::result::Result<usize, String> {
    let n: usize = s.trim().parse().map_err(|_| format!("`{s}` is not a ring size"))?;
    if !(MIN_N..=MAX_N).contains(&n) {
        return Err(format!("N = {n} is outside {MIN_N}..={MAX_N}"));
    }
    Ok(n)
}

pub fn parse_n_range(s: &str) -> std::result::Result<NRange, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let (start, stop, step) = match parts.as_slice() {
        [n] => {
            let n = parse_n(n)?;
            (n, n, 1)
        }
        [a, b] => (parse_n(a)?, parse_n(b)?, 1),
        [a, b, c] => {
            let step: usize = c.trim().parse().map_err(|_| format!("`{c}` is not a step"))?;
            (parse_n(a)?, parse_n(b)?, step)
        }
        _ => return Err(format!("`{s}` is not of the form start:stop:step")),
    };
    if step == 0 {
        return Err("step must be positive".into());
    }
    if start > stop {
        return Err(format!("empty range {start}:{stop}"));
    }
    Ok(NRange { start, stop, step })
}

fn parse_params(s: &str) -> std::result::Result<Params, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_pattern(s: &str) -> std::result::Result<Pattern, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_formula(s: &str) -> std::result::Result<Formula, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_gamma(s: &str) -> std::result::Result<f64, String> {
    let g: f64 = s.trim().parse().map_err(|_| format!("`{s}` is not a number"))?;
    if !(g > 0.0 && g < 1.0) {
        return Err(format!("gamma = {g} must lie strictly between 0 and 1"));
    }
    Ok(g)
}

/// Summary of the transient set shared by the exact and classify reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransientSummary {
    pub case: TransientCase,
    pub exception: bool,
    pub label: String,
    pub size: usize,
    /// Bit masks with player `i` in bit `i - 1`.
    pub states: Vec<u32>,
    /// The same states as binary strings, player 1 first.
    pub binary: Vec<String>,
}

impl TransientSummary {
    fn compute(n: usize, params: Params) -> Result<Self> {
        let t = classify_transient(n, params)?;
        Ok(TransientSummary {
            case: t.case,
            exception: t.exception,
            label: t.label(),
            size: t.states.len(),
            states: t.states.iter().map(|x| x.bits()).collect(),
            binary: t.states.iter().map(|x| x.to_string()).collect(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactReport {
    pub n: usize,
    pub params: Params,
    pub mode: GameMode,
    pub mu: f64,
    pub per_formula: std::collections::BTreeMap<String, f64>,
    /// Mean profit of game B alone at the same `N` and biases.
    pub mu_b: f64,
    pub diagnostics: SolverDiagnostics,
    pub transient: TransientSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifyReport {
    pub n: usize,
    pub params: Params,
    pub transient: TransientSummary,
    pub spin_conditions: SpinErgodicityReport,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub oracle: Option<OracleCheck>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleCheck {
    pub pattern: Pattern,
    pub agreement: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub oracle_states: Option<Vec<u32>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulateReport {
    pub n: usize,
    pub params: Params,
    pub mode: GameMode,
    pub turns: u64,
    pub burn_in: u64,
    pub seed: u64,
    pub initial: String,
    #[serde(flatten)]
    pub result: SimResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpinReport {
    pub params: Params,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub gamma: Option<f64>,
    /// Biases actually driving the dynamics.
    pub dynamics: Params,
    pub payoff: [f64; 4],
    pub burn_in_sweeps: u64,
    pub seed: u64,
    pub estimate: RingEstimate,
}

#[derive(Serialize)]
struct ErrorDoc<'a> {
    error: ErrorBody<'a>,
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    kind: &'a str,
    message: String,
}

enum Failure {
    Usage(String),
    Compute(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(msg) => Failure::Usage(msg),
            other => Failure::Compute(other),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Usage(format!("cannot write output: {e}"))
    }
}

struct Output {
    body: String,
    /// Exit code to use after a successful write.
    code: i32,
}

fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types always serialize");
    s.push('\n');
    s
}

fn json_only(out: &OutputArgs) -> std::result::Result<(), Failure> {
    match out.format {
        Some(Format::Csv) => Err(Failure::Usage("CSV output is only available for `convergence`".into())),
        _ => Ok(()),
    }
}

fn cmd_exact(a: &ExactArgs) -> std::result::Result<Output, Failure> {
    json_only(&a.out)?;
    let opts = ExactOptions::with_method(a.method);
    let mode = a.mode.mode();
    let report = match mode {
        GameMode::Pattern(pat) => profit::mu_pattern_with(a.n, a.p, pat, a.formula, &opts)?,
        GameMode::Mixed(g) => profit::mu_mixed_with(a.n, a.p, g, &opts)?,
        GameMode::PureB => profit::mu_b_with(a.n, a.p, &opts)?,
    };
    let mu_b = match mode {
        GameMode::PureB => report.mu,
        _ => profit::mu_b_with(a.n, a.p, &opts)?.mu,
    };
    let doc = ExactReport {
        n: a.n,
        params: a.p,
        mode,
        mu: report.mu,
        per_formula: report.per_formula,
        mu_b,
        diagnostics: report.diagnostics,
        transient: TransientSummary::compute(a.n, a.p)?,
    };
    Ok(Output { body: json(&doc), code: EXIT_OK })
}

fn cmd_classify(a: &ClassifyArgs) -> std::result::Result<Output, Failure> {
    json_only(&a.out)?;
    if a.verify && a.n > MAX_BRUTE_FORCE_PLAYERS {
        return Err(Failure::Usage(format!("--verify needs N <= {MAX_BRUTE_FORCE_PLAYERS}")));
    }
    let transient = TransientSummary::compute(a.n, a.p)?;
    let oracle = a.verify.then(|| match brute_force_transient(a.n, a.p, a.pattern) {
        Ok(set) => {
            let states: Vec<u32> = set.iter().map(|x| x.bits()).collect();
            OracleCheck {
                pattern: a.pattern,
                agreement: states == transient.states,
                oracle_states: Some(states),
                error: None,
            }
        }
        Err(e) => OracleCheck { pattern: a.pattern, agreement: false, oracle_states: None, error: Some(e.to_string()) },
    });
    let doc = ClassifyReport {
        n: a.n,
        params: a.p,
        transient,
        spin_conditions: check_spin_ergodicity(a.p),
        oracle,
    };
    Ok(Output { body: json(&doc), code: EXIT_OK })
}

fn cmd_simulate(a: &SimulateArgs) -> std::result::Result<Output, Failure> {
    json_only(&a.out)?;
    let mut cfg = SimConfig::new(a.n, a.p, a.mode.mode(), a.turns, a.seed);
    cfg.burn_in = a.burn_in.unwrap_or_else(|| default_burn_in(a.n));
    cfg.replicas = a.replicas as usize;
    cfg.trace_points = a.trace;
    if let Some(init) = &a.initial {
        let x: crate::kernels::StateIndex = init.parse()?;
        if x.n() != a.n {
            return Err(Failure::Usage(format!("initial state {init:?} has {} players, expected {}", x.n(), a.n)));
        }
        cfg.initial = x.bits();
    }
    let result = simulate_pattern(&cfg)?;
    let initial = crate::kernels::StateIndex::new(cfg.initial, a.n)?.to_string();
    let doc = SimulateReport {
        n: a.n,
        params: a.p,
        mode: cfg.mode,
        turns: cfg.turns,
        burn_in: cfg.burn_in,
        seed: cfg.seed,
        initial,
        result,
    };
    Ok(Output { body: json(&doc), code: EXIT_OK })
}

fn cmd_spin(a: &SpinArgs) -> std::result::Result<Output, Failure> {
    json_only(&a.out)?;
    let burn = a.burn_in_sweeps.unwrap_or(a.sweeps / 10);
    let replicas = a.replicas as usize;
    let cfg = match a.gamma {
        Some(g) => RingConfig::for_mixture(a.p, g, a.ring, a.sweeps, burn, a.seed, replicas)?,
        None => RingConfig::new(a.p, a.ring, a.sweeps, burn, a.seed, replicas),
    };
    let estimate = simulate_ring_spin(&cfg)?;
    let doc = SpinReport {
        params: a.p,
        gamma: a.gamma,
        dynamics: cfg.params,
        payoff: cfg.payoff,
        burn_in_sweeps: burn,
        seed: a.seed,
        estimate,
    };
    Ok(Output { body: json(&doc), code: EXIT_OK })
}

/// Renders the table as CSV: the fixed header, one row per `N`, and when a
/// ring estimate is present a footer header plus its values.
pub fn convergence_csv(table: &ConvergenceTable) -> String {
    let mut s = String::new();
    s.push_str(CONVERGENCE_HEADER);
    s.push('\n');
    for row in &table.rows {
        s.push_str(&format!("{},{},{},{}\n", row.n, row.mu_pattern, row.mu_mixed, row.gap));
    }
    if let Some(ring) = &table.ring {
        s.push_str(RING_FOOTER_HEADER);
        s.push('\n');
        s.push_str(&format!("{},{}\n", ring.mu_limit, ring.std_error));
    }
    s
}

fn cmd_convergence(a: &ConvergenceArgs) -> std::result::Result<Output, Failure> {
    let opts = ConvergenceOptions {
        exact: ExactOptions::with_method(a.method),
        ring: a
            .with_ring
            .then(|| (a.ring, a.sweeps, a.burn_in_sweeps.unwrap_or(a.sweeps / 10), a.seed, a.replicas as usize)),
    };
    let table = convergence_table(a.p, a.pattern, &a.n.values(), &opts)?;
    let code = if table.any_failed() { EXIT_COMPUTE } else { EXIT_OK };
    let body = match a.out.format.unwrap_or(Format::Csv) {
        Format::Csv => convergence_csv(&table),
        Format::Json => json(&table),
    };
    Ok(Output { body, code })
}

fn write_output(path: Option<&PathBuf>, body: &str, stdout: &mut dyn Write) -> io::Result<()> {
    match path {
        Some(p) => File::create(p)?.write_all(body.as_bytes()),
        None => stdout.write_all(body.as_bytes()),
    }
}

fn error_doc(kind: &str, message: String) -> String {
    json(&ErrorDoc { error: ErrorBody { kind, message } })
}

/// Parses `args` (program name first), runs the subcommand, and writes the
/// document to `stdout` or the `--output` file. Errors go to `stderr` as a
/// JSON `{"error": {"kind", "message"}}` object. Returns the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { stderr.write_all(text.as_bytes()) } else { stdout.write_all(text.as_bytes()) };
            return code;
        }
    };
    let (result, path) = match &cli.command {
        Command::Exact(a) => (cmd_exact(a), a.out.output.as_ref()),
        Command::Simulate(a) => (cmd_simulate(a), a.out.output.as_ref()),
        Command::Classify(a) => (cmd_classify(a), a.out.output.as_ref()),
        Command::Convergence(a) => (cmd_convergence(a), a.out.output.as_ref()),
        Command::Spin(a) => (cmd_spin(a), a.out.output.as_ref()),
    };
    let outcome = result.and_then(|out| {
        write_output(path, &out.body, stdout)?;
        Ok(out.code)
    });
    match outcome {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            let _ = stderr.write_all(error_doc("usage", msg).as_bytes());
            EXIT_USAGE
        }
        Err(Failure::Compute(e)) => {
            let _ = stderr.write_all(error_doc(e.kind(), e.to_string()).as_bytes());
            EXIT_COMPUTE
        }
    }
}
