use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use entlink::tagfile::TagFileError;
use serde_json::json;

mod analyze;
mod estimate;
mod output;
mod plan;
mod scenario;
mod simulate;
mod sweep;

/// Exit code for unreadable or malformed tag files.
pub const EXIT_BAD_TAG_FILE: u8 = 3;
pub const EXIT_FAILURE: u8 = 1;

#[derive(Parser)]
#[command(name = "entlink", version, about = "WDM entanglement-distribution link simulator")]
struct Cli {
    /// TOML scenario file: `name`, `preset` and a `[config]` table of overrides.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for files.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Stdout format; `sweep` defaults to csv, the rest to json.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Print a conjugate channel plan.
    Plan(plan::PlanArgs),
    /// Analytic visibility, QBER and loss limits.
    Estimate(estimate::EstimateArgs),
    /// Simulate tag streams and write them to disk.
    Simulate(simulate::SimulateArgs),
    /// Count coincidences and fit fringes in tag files.
    Analyze(analyze::AnalyzeArgs),
    /// Visibility and rates versus mean pair number.
    Sweep(sweep::SweepArgs),
}

/// Scenario selection shared by the commands that model a link.
#[derive(Args, Clone, Default)]
pub struct ScenarioArgs {
    /// back_to_back, km150 or custom.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub nbar: Option<f64>,
    /// Simulated seconds (per phase point when scanning).
    #[arg(long)]
    pub duration: Option<f64>,
    /// Use the first N channel pairs of the plan.
    #[arg(long)]
    pub pairs: Option<usize>,
    /// Loss added to each arm, dB.
    #[arg(long)]
    pub extra_loss_db: Option<f64>,
}

pub struct Globals {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
}

impl Globals {
    pub fn format_or(&self, default: Format) -> Format {
        self.format.unwrap_or(default)
    }
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("ENTLINK_THREADS") {
        let n: usize = v.parse().map_err(|_| anyhow::anyhow!("ENTLINK_THREADS must be a positive integer, got {v:?}"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    configure_threads()?;
    let g = Globals { config: cli.config, seed: cli.seed, out: cli.out, format: cli.format };
    match cli.command {
        Command::Plan(a) => plan::run(&g, &a),
        Command::Estimate(a) => estimate::run(&g, &a),
        Command::Simulate(a) => simulate::run(&g, &a),
        Command::Analyze(a) => analyze::run(&g, &a),
        Command::Sweep(a) => sweep::run(&g, &a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let bad_file = e.chain().any(|c| c.downcast_ref::<TagFileError>().is_some());
            let (kind, code) = if bad_file { ("tag_file", EXIT_BAD_TAG_FILE) } else { ("failure", EXIT_FAILURE) };
            let causes: Vec<String> = e.chain().map(ToString::to_string).collect();
            eprintln!("{}", json!({ "error": { "kind": kind, "message": format!("{e:#}"), "causes": causes } }));
            ExitCode::from(code)
        }
    }
}
