//! `tdprobe`: run reference agents, generate or ingest activations, train
//! sparse autoencoders, analyze and intervene, and assemble a report.
//!
//! Exit codes: 0 success, 2 config error, 3 dependency error, 4 numerical
//! failure, 1 anything else.

mod commands;
mod config;
mod error;
mod io;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "tdprobe", version, about = "TD-signal probing pipeline")]
struct Cli {
    /// Output directory holding every artifact and the manifest.
    #[arg(long, global = true, env = "TDPROBE_OUT", default_value = "tdprobe-out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate agents and log trajectories plus their signal traces.
    RunAgent(RunAgentArgs),
    /// Generate synthetic activations with planted signals.
    GenSynth(ConfigArg),
    /// Train a sparse autoencoder on an activation container.
    TrainSae(TrainSaeArgs),
    /// Analyses over activations, latents and signals.
    #[command(subcommand)]
    Analyze(Analyze),
    /// Apply lesion or clamp edits and measure their effects.
    Intervene(ConfigArg),
    /// Fit behavioral models to trajectory logs.
    FitBehavior(ConfigArg),
    /// Assemble a markdown summary of every recorded table.
    Report(ReportArgs),
    /// Print the JSON schema of the config files.
    Schema,
}

#[derive(Debug, Args)]
struct ConfigArg {
    #[arg(long)]
    config: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum TaskArg {
    TwoStep,
    GridWorld,
    Graph,
}

impl From<TaskArg> for tdprobe_core::TaskKind {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::TwoStep => tdprobe_core::TaskKind::TwoStep,
            TaskArg::GridWorld => tdprobe_core::TaskKind::GridWorld,
            TaskArg::Graph => tdprobe_core::TaskKind::Graph,
        }
    }
}

#[derive(Debug, Args)]
struct RunAgentArgs {
    /// Config file; `--task` alone runs the task defaults.
    #[arg(long, required_unless_present = "task")]
    config: Option<PathBuf>,
    #[arg(long, value_enum, conflicts_with = "config")]
    task: Option<TaskArg>,
    /// Overrides the number of runs.
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct TrainSaeArgs {
    /// Activation container.
    #[arg(long)]
    input: String,
    /// SAE training config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "sae")]
    name: String,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub(crate) enum SignArg {
    Signed,
    Absolute,
}

impl From<SignArg> for tdprobe_core::analysis::CorrSign {
    fn from(s: SignArg) -> Self {
        match s {
            SignArg::Signed => tdprobe_core::analysis::CorrSign::Signed,
            SignArg::Absolute => tdprobe_core::analysis::CorrSign::Absolute,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Analyze {
    /// Max latent-signal correlation per block, with permutation nulls.
    Corr(CorrArgs),
    /// Pairwise linear CKA between activation containers.
    Cka(CkaArgs),
    /// SMACOF embedding of row-wise cosine dissimilarities.
    Mds(MdsArgs),
    /// Leave-one-run-out bottleneck decoding on graph walks.
    Decode(DecodeArgs),
    /// Count of latents with non-zero variance.
    L0(L0Args),
}

#[derive(Debug, Args)]
pub(crate) struct CorrArgs {
    /// `BLOCK:SAE:ACTIVATIONS`, repeatable.
    #[arg(long = "layer", required = true)]
    pub(crate) layers: Vec<String>,
    /// `NAME=PATH` of a signal container, repeatable.
    #[arg(long = "signal", required = true)]
    pub(crate) signals: Vec<String>,
    #[arg(long, value_enum, default_value = "absolute")]
    pub(crate) sign: SignArg,
    #[arg(long, default_value_t = 0.5)]
    pub(crate) smooth_sigma: f64,
    #[arg(long, default_value_t = 1000)]
    pub(crate) n_perm: usize,
    #[arg(long, default_value_t = 0)]
    pub(crate) seed: u64,
    #[arg(long, default_value = "corr")]
    pub(crate) name: String,
}

#[derive(Debug, Args)]
pub(crate) struct CkaArgs {
    /// Activation containers (at least two), compared pairwise.
    #[arg(long = "input", required = true, num_args = 1)]
    pub(crate) inputs: Vec<String>,
    #[arg(long)]
    pub(crate) no_center: bool,
    #[arg(long, default_value = "cka")]
    pub(crate) name: String,
}

#[derive(Debug, Args)]
pub(crate) struct MdsArgs {
    /// Representation rows.
    #[arg(long)]
    pub(crate) input: String,
    /// Trajectory aligned with the rows; embeds each state's last encounter.
    #[arg(long)]
    pub(crate) states: Option<String>,
    #[arg(long, default_value_t = 2)]
    pub(crate) dims: usize,
    #[arg(long, default_value_t = 0)]
    pub(crate) seed: u64,
    #[arg(long)]
    pub(crate) classical_init: bool,
    #[arg(long, default_value = "mds")]
    pub(crate) name: String,
}

#[derive(Debug, Args)]
pub(crate) struct DecodeArgs {
    /// `TRAJECTORY:FEATURES`, one per run (at least two).
    #[arg(long = "run", required = true)]
    pub(crate) runs: Vec<String>,
    /// Also decode with labels shuffled within each run using this seed.
    #[arg(long)]
    pub(crate) shuffle_seed: Option<u64>,
    #[arg(long, default_value = "decode")]
    pub(crate) name: String,
}

#[derive(Debug, Args)]
pub(crate) struct L0Args {
    #[arg(long)]
    pub(crate) sae: String,
    #[arg(long = "input", required = true)]
    pub(crate) inputs: Vec<String>,
    #[arg(long, default_value = "l0")]
    pub(crate) name: String,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Minimum max-correlation for the planted-recovery verdict.
    #[arg(long, default_value_t = 0.8)]
    recovery_threshold: f64,
    /// Rows shown per table.
    #[arg(long, default_value_t = 40)]
    max_rows: usize,
}

fn dispatch(cli: Cli) -> error::Result<()> {
    let out = cli.out;
    match cli.command {
        Command::RunAgent(a) => commands::run_agent::run(&out, a.config.as_deref(), a.task.map(Into::into), a.runs, a.seed),
        Command::GenSynth(a) => commands::synth::run(&out, &a.config),
        Command::TrainSae(a) => commands::train::run(&out, &a.input, a.config.as_deref(), &a.name),
        Command::Analyze(Analyze::Corr(a)) => commands::analyze::corr(&out, &a),
        Command::Analyze(Analyze::Cka(a)) => commands::analyze::cka(&out, &a),
        Command::Analyze(Analyze::Mds(a)) => commands::analyze::mds(&out, &a),
        Command::Analyze(Analyze::Decode(a)) => commands::analyze::decode(&out, &a),
        Command::Analyze(Analyze::L0(a)) => commands::analyze::l0(&out, &a),
        Command::Intervene(a) => commands::intervene::run(&out, &a.config),
        Command::FitBehavior(a) => commands::behavior::run(&out, &a.config),
        Command::Report(a) => commands::report::run(&out, a.recovery_threshold, a.max_rows),
        Command::Schema => {
            print!("{}", config::SCHEMA);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tdprobe: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
