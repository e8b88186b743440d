//! `cupid`: solve, identify, estimate and test matching markets from the
//! command line.

mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use report::Report;

#[derive(Parser, Debug)]
#[command(name = "cupid", version, about = "Separable transferable-utility matching markets")]
struct Cli {
    /// error, warn, info, debug or trace; defaults to $CUPID_LOG, then warn.
    #[arg(long, global = true)]
    log_level: Option<log::LevelFilter>,

    /// Leave wall-time fields out of report.json and CSV outputs.
    #[arg(long, global = true)]
    no_timings: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compute the equilibrium matching of a market.
    Solve(SolveArgs),
    /// Recover the surplus and utilities from an observed matching.
    Identify(IdentifyArgs),
    /// Fit a parametric surplus to household counts.
    Estimate(EstimateArgs),
    /// Bootstrap specification test of a parametric surplus.
    Test(TestArgs),
    /// Draw a benchmark market and a household sample from it.
    Simulate(SimulateArgs),
    /// Time the equilibrium solvers on random logit markets.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
pub struct SolveArgs {
    #[arg(long)]
    pub phi: PathBuf,
    #[arg(long)]
    pub margins: PathBuf,
    /// Heterogeneity of the men's groups; logit when absent.
    #[arg(long)]
    pub model_men: Option<PathBuf>,
    #[arg(long)]
    pub model_women: Option<PathBuf>,
    /// auto, ipfp, minemax, choosiow_f or lp_discrete.
    #[arg(long, default_value = "auto")]
    pub method: String,
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
    #[arg(long, default_value_t = 100_000)]
    pub max_iter: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct IdentifyArgs {
    #[arg(long)]
    pub matching: PathBuf,
    #[arg(long)]
    pub margins: PathBuf,
    #[arg(long)]
    pub model_men: Option<PathBuf>,
    #[arg(long)]
    pub model_women: Option<PathBuf>,
    /// Pseudo-count added to every cell; zero keeps empty cells forbidden.
    #[arg(long, default_value_t = 0.0)]
    pub smoothing: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EstimateArgs {
    /// Household counts, `x,y,count` rows.
    #[arg(long)]
    pub data: PathBuf,
    /// Optional margins; they must have the shape of the counts.
    #[arg(long)]
    pub margins: Option<PathBuf>,
    #[arg(long)]
    pub spec: PathBuf,
    /// mm, mle or md.
    #[arg(long, default_value = "mm")]
    pub estimator: String,
    /// Minimum-distance weighting: efficient or identity.
    #[arg(long, default_value = "efficient")]
    pub weighting: String,
    /// Bootstrap replications for standard errors; none when zero.
    #[arg(long, default_value_t = 0)]
    pub boot: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TestArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub margins: Option<PathBuf>,
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long, default_value_t = 199)]
    pub boot: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub households: u64,
    /// Heterogeneity of every group on both sides; logit when absent.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "100")]
    pub sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub seeds: Vec<u64>,
    #[arg(long, value_delimiter = ',', default_value = "ipfp,minemax,choosiow_f")]
    pub methods: Vec<String>,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub agreement: f64,
    /// Parallel cells; timings are only taken with one job.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub out: PathBuf,
}

fn init_logging(level: Option<log::LevelFilter>) {
    let mut builder = env_logger::Builder::from_env(env_logger::Env::new().filter_or("CUPID_LOG", "warn"));
    if let Some(l) = level {
        builder.filter_level(l);
    }
    builder.format_timestamp(None).init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    init_logging(cli.log_level);
    let (name, out) = match &cli.command {
        Command::Solve(a) => ("solve", a.out.clone()),
        Command::Identify(a) => ("identify", a.out.clone()),
        Command::Estimate(a) => ("estimate", a.out.clone()),
        Command::Test(a) => ("test", a.out.clone()),
        Command::Simulate(a) => ("simulate", a.out.clone()),
        Command::Bench(a) => ("bench", a.out.clone()),
    };
    let mut report = Report::new(name, &out, cli.no_timings);
    let result = report.prepare().and_then(|_| match &cli.command {
        Command::Solve(a) => commands::solve(a, &mut report),
        Command::Identify(a) => commands::identify(a, &mut report),
        Command::Estimate(a) => commands::estimate(a, &mut report),
        Command::Test(a) => commands::test(a, &mut report),
        Command::Simulate(a) => commands::simulate(a, &mut report),
        Command::Bench(a) => commands::bench(a, &mut report),
    });
    let code = match &result {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {f}");
            f.exit_code()
        }
    };
    if let Err(e) = report.finish(result.err()) {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    ExitCode::from(code)
}
