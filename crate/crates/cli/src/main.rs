use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use wyf::{cmd_certify_as3, cmd_rates, report_error, run_batch, Command, Config};

#[derive(Parser)]
#[command(name = "wyf", version, about = "Weighted Yamabe flow experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Integrate the flow; writes trajectory.csv, snapshots.csv, summary.json.
    Flow(RunArgs),
    /// Spectrum of the linearized operator; writes spectrum.json.
    Spectrum(RunArgs),
    /// Reduced functional, order and leading tensor; writes reduction.json.
    Reduce(RunArgs),
    /// Slow solution by contraction; writes slowflow.csv and fit.json.
    Slowmodel(RunArgs),
    /// Rate and Łojasiewicz fits of a flow CSV; writes fit.json.
    Rates(RatesArgs),
    /// Cubic-term certificate for M x CP^n2.
    #[command(name = "certify-as3")]
    CertifyAs3(As3Args),
}

#[derive(Args)]
struct RunArgs {
    /// Config file, or a directory of configs.
    #[arg(short = 'c', long)]
    config: PathBuf,
    #[arg(short = 'o', long, default_value = "out")]
    out: PathBuf,
    /// Parallel runs when --config is a directory.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Overrides the seed of the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RatesArgs {
    /// Flow trajectory CSV.
    #[arg(short = 'i', long)]
    input: PathBuf,
    /// Optional config supplying the `rates` section.
    #[arg(short = 'c', long)]
    config: Option<PathBuf>,
    #[arg(short = 'o', long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct As3Args {
    #[arg(long)]
    n1: usize,
    #[arg(long)]
    n2: usize,
    #[arg(long)]
    m: f64,
    #[arg(long)]
    base_volume: f64,
    /// Integral of v^3 against the weighted measure of M.
    #[arg(long, allow_hyphen_values = true)]
    v3: f64,
    /// Also write certificate.json here.
    #[arg(short = 'o', long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Cmd::Flow(a) => run_batch(Command::Flow, &a.config, &a.out, a.seed, a.jobs),
        Cmd::Spectrum(a) => run_batch(Command::Spectrum, &a.config, &a.out, a.seed, a.jobs),
        Cmd::Reduce(a) => run_batch(Command::Reduce, &a.config, &a.out, a.seed, a.jobs),
        Cmd::Slowmodel(a) => run_batch(Command::Slowmodel, &a.config, &a.out, a.seed, a.jobs),
        Cmd::Rates(a) => {
            let res = a
                .config
                .as_deref()
                .map(|p| Config::load(p).and_then(|c| c.resolve(a.seed)))
                .transpose()
                .and_then(|cfg| cmd_rates(&a.input, cfg.as_ref(), &a.out));
            match res {
                Ok(_) => 0,
                Err(e) => {
                    eprintln!("wyf rates: {e}");
                    report_error(&e, &a.out)
                }
            }
        }
        Cmd::CertifyAs3(a) => match cmd_certify_as3(a.n1, a.n2, a.m, a.base_volume, a.v3, a.out.as_deref()) {
            Ok(text) => {
                print!("{text}");
                0
            }
            Err(e) => {
                eprintln!("wyf certify-as3: {e}");
                match &a.out {
                    Some(dir) => report_error(&e, dir),
                    None => e.exit_code(),
                }
            }
        },
    };
    ExitCode::from(code as u8)
}
