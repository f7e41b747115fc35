mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "condwalk", version, about = "Sample and evaluate conditioned random walk approximations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw trajectories from g and write them as JSONL.
    Sample(SampleArgs),
    /// Evaluate log g on trajectories read from JSONL.
    Logpdf(LogpdfArgs),
    /// Sweep k and write the relative-error table as CSV.
    SelectK(SelectKArgs),
    /// Importance-sampling estimate of a rare-event probability.
    Estimate(EstimateArgs),
    /// Compare g against the ABC rejection oracle by total variation.
    Validate(ValidateArgs),
    /// Edgeworth sup-error against the exact exponential sum density.
    EdgeworthCheck(EdgeworthArgs),
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Output file; standard output when omitted. The run manifest is
    /// written next to it as `<out>.manifest.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Random seed; a fresh one is drawn and recorded when omitted.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
}

#[derive(Args, Debug, Clone)]
pub struct GFlags {
    /// Use `(target - partial)/(n - 1)` as the step mean.
    #[arg(long)]
    pub compat_mi: bool,
    /// Centre the Gaussian factor at `target/n` instead of the step mean.
    #[arg(long)]
    pub compat_center: bool,
    /// Use the tilted law at `target/n` as the first-step density.
    #[arg(long)]
    pub compat_g0: bool,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    #[arg(long)]
    pub spec: PathBuf,
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub g: GFlags,
    #[arg(long, default_value_t = 1000)]
    pub count: usize,
    #[arg(long, value_enum, default_value_t = MethodArg::Auto)]
    pub method: MethodArg,
    /// Skip the evaluation of log g (faster; `log_g` is written as null).
    #[arg(long)]
    pub no_density: bool,
}

#[derive(Args, Debug)]
pub struct LogpdfArgs {
    #[arg(long)]
    pub spec: PathBuf,
    /// Trajectory JSONL, as written by `sample`.
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub g: GFlags,
}

#[derive(Args, Debug)]
pub struct SelectKArgs {
    #[arg(long)]
    pub spec: PathBuf,
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub g: GFlags,
    /// Comma-separated candidate values of k.
    #[arg(long, value_delimiter = ',', required = true)]
    pub grid: Vec<usize>,
    /// Monte-Carlo prefixes per k.
    #[arg(long = "L", default_value_t = 1000)]
    pub l: usize,
    #[arg(long, default_value_t = 0.05)]
    pub delta: f64,
    #[arg(long, value_enum, default_value_t = ConventionArg::Consistent)]
    pub convention: ConventionArg,
}

#[derive(Args, Debug)]
pub struct EstimateArgs {
    /// Spec giving the model, the map u and n; its target and k are ignored.
    #[arg(long)]
    pub spec: PathBuf,
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub g: GFlags,
    /// Comma-separated thresholds for `U_{1,n}/n`, one per coordinate.
    #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
    pub threshold: Vec<f64>,
    #[arg(long, value_enum, default_value_t = DirectionArg::Above)]
    pub direction: DirectionArg,
    #[arg(long, default_value_t = 10_000)]
    pub budget: usize,
    /// Steps drawn from g; defaults to n/2.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, value_enum, default_value_t = MethodArg::Auto)]
    pub method: MethodArg,
}

#[derive(Args, Debug)]
pub struct ValidateArgs {
    #[arg(long)]
    pub spec: PathBuf,
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub g: GFlags,
    /// Trajectories drawn from g.
    #[arg(long, default_value_t = 10_000)]
    pub count: usize,
    /// Walks proposed by the ABC oracle.
    #[arg(long, default_value_t = 1_000_000)]
    pub budget: usize,
    /// ABC tolerance on the sup-norm of the mean; tuned by a pilot run when omitted.
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
    #[arg(long, value_enum, default_value_t = MethodArg::Auto)]
    pub method: MethodArg,
}

#[derive(Args, Debug)]
pub struct EdgeworthArgs {
    #[command(flatten)]
    pub common: Common,
    /// Comma-separated values of n.
    #[arg(long, value_delimiter = ',', default_value = "5,10,20,40")]
    pub grid: Vec<usize>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum MethodArg {
    Auto,
    Ar,
    Mcmc,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum ConventionArg {
    Consistent,
    Displayed,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum DirectionArg {
    Above,
    Below,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Sample(a) => commands::sample(a),
        Command::Logpdf(a) => commands::logpdf(a),
        Command::SelectK(a) => commands::select_k(a),
        Command::Estimate(a) => commands::estimate(a),
        Command::Validate(a) => commands::validate(a),
        Command::EdgeworthCheck(a) => commands::edgeworth_check(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
