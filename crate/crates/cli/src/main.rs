mod commands;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use seugnn_core::dataset::SplitSpec;
use seugnn_core::models::Arch;

use error::{CliError, EXIT_VALIDATION};

/// SEU fault-simulation outcome prediction with spatio-temporal GNNs.
#[derive(Debug, Parser)]
#[command(name = "seugnn", version)]
struct Cli {
    /// Worker threads for campaigns and grid searches (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse and validate a netlist.
    NetlistCheck(NetlistCheckArgs),
    /// Generate a synthetic sequential circuit.
    GenCircuit(GenCircuitArgs),
    /// Generate a random primary-input stimulus.
    GenStimulus(GenStimulusArgs),
    /// Run an SEU campaign; writes labels and the golden VCD.
    Faultsim(FaultsimArgs),
    /// Build a dataset directory from a netlist, VCD and labels.
    BuildDataset(BuildDatasetArgs),
    /// Train one model on a dataset.
    Train(TrainArgs),
    /// Grid-search graph distance and window size, repeated over seeds.
    Tune(TuneArgs),
    /// Predict every (flip-flop, injection time) cell with a checkpoint.
    Predict(PredictArgs),
    /// Aggregate the reports of several runs.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct NetlistCheckArgs {
    #[arg(long)]
    pub netlist: PathBuf,
    /// Also write the summary as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenCircuitArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub n_ff: usize,
    /// Fewest gates in each flip-flop's input cone.
    #[arg(long, default_value_t = 1)]
    pub cone_min: usize,
    #[arg(long, default_value_t = 4)]
    pub cone_max: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenStimulusArgs {
    #[arg(long)]
    pub netlist: PathBuf,
    #[arg(long)]
    pub cycles: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FaultsimArgs {
    #[arg(long)]
    pub netlist: PathBuf,
    /// Stimulus JSON; without it a random one of `--cycles` cycles is drawn from `--seed`.
    #[arg(long, required_unless_present = "cycles")]
    pub stimulus: Option<PathBuf>,
    #[arg(long, conflicts_with = "stimulus")]
    pub cycles: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Injection cycles, e.g. `1-40` or `1,5,10-12`.
    #[arg(long)]
    pub times: String,
    /// Output labels JSON.
    #[arg(long)]
    pub labels: PathBuf,
    /// Output golden VCD.
    #[arg(long)]
    pub vcd: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct WaveArgs {
    #[arg(long)]
    pub vcd: PathBuf,
    /// JSON map from netlist flip-flop names to hierarchical VCD names.
    #[arg(long)]
    pub name_map: Option<PathBuf>,
    /// Hierarchical clock name (default: `<circuit>.<clock net>`).
    #[arg(long)]
    pub clock: Option<String>,
    /// Sample this many time units after each rising clock edge.
    #[arg(long, default_value_t = 0)]
    pub sample_offset: u64,
}

#[derive(Debug, Args)]
pub struct BuildDatasetArgs {
    #[arg(long)]
    pub netlist: PathBuf,
    #[command(flatten)]
    pub wave: WaveArgs,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long, default_value_t = 6)]
    pub max_distance: usize,
    #[arg(long)]
    pub time_win_size: usize,
    #[arg(long, default_value_t = SplitSpec::default())]
    pub split: SplitSpec,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Add reverse edges to the flip-flop graph.
    #[arg(long)]
    pub undirected: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value_t = Arch::Astgcn)]
    pub arch: Arch,
    #[arg(long, default_value_t = 16)]
    pub hidden: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 20)]
    pub patience: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[arg(long)]
    pub netlist: PathBuf,
    #[command(flatten)]
    pub wave: WaveArgs,
    #[arg(long)]
    pub labels: PathBuf,
    /// Base configuration (JSON); the flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub arch: Option<Arch>,
    /// Seeds of the repeated runs, e.g. `0-9`.
    #[arg(long, default_value = "0")]
    pub seeds: String,
    #[arg(long)]
    pub split: Option<SplitSpec>,
    /// Candidate graph distances, e.g. `0,2,4,6,10`.
    #[arg(long)]
    pub max_distances: Option<String>,
    /// Candidate window sizes, e.g. `5,10,20,40,60`.
    #[arg(long)]
    pub time_wins: Option<String>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub undirected: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Checkpoint directory, or a train/tune output directory holding one.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Netlist of a different test case of the same circuit.
    #[arg(long, requires_all = ["vcd", "labels"])]
    pub netlist: Option<PathBuf>,
    #[arg(long, requires = "netlist")]
    pub vcd: Option<PathBuf>,
    #[arg(long, requires = "netlist")]
    pub labels: Option<PathBuf>,
    #[arg(long, requires = "vcd")]
    pub name_map: Option<PathBuf>,
    #[arg(long, requires = "vcd")]
    pub clock: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub sample_offset: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Output directories of `train` or `tune`.
    #[arg(required = true)]
    pub runs: Vec<PathBuf>,
    /// Also write the aggregate as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::validation("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::runtime(e.to_string()))?;
    }
    match cli.command {
        Command::NetlistCheck(a) => commands::netlist_check(&a),
        Command::GenCircuit(a) => commands::gen_circuit(&a),
        Command::GenStimulus(a) => commands::gen_stimulus(&a),
        Command::Faultsim(a) => commands::faultsim(&a),
        Command::BuildDataset(a) => commands::build_dataset(&a),
        Command::Train(a) => commands::train(&a),
        Command::Tune(a) => commands::tune(&a),
        Command::Predict(a) => commands::predict(&a),
        Command::Report(a) => commands::report(&a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_VALIDATION)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
