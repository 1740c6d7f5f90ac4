//! `dfa-bisim`: sampling, exact metrics, encoder training, evaluation and
//! downstream RL from the command line.
//!
//! Exit status is 0 on success, 1 for invalid input or configuration and
//! 2 when an internal invariant fails.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "dfa-bisim", version, about = "Bisimulation metrics and embeddings for DFA-conditioned RL")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a corpus of task DFAs (one JSON record per line).
    Sample(SampleArgs),
    /// Enumerate the DFA space of a corpus and solve the exact metric.
    Metric(MetricArgs),
    /// Train an encoder on the DFA space of a corpus.
    Train(TrainArgs),
    /// Distance heatmap and separation report for a checkpoint.
    Eval(EvalArgs),
    /// Q-learning on a gridworld product, conditioned on DFA ids or
    /// embedding keys.
    Policy(PolicyArgs),
    /// Count ε-suboptimal Q-learning steps across training budgets.
    Pac(PacArgs),
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Kind {
    Reach,
    ReachAvoid,
    Rad,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Mode {
    Tabular,
    MessagePassing,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum ConditioningArg {
    DfaId,
    EmbeddingKey,
}

#[derive(Args)]
pub struct SampleArgs {
    /// JSON config file; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub kind: Option<Kind>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub alphabet_size: Option<usize>,
    /// State-count distribution: `geometric:P:BOUND` or `uniform:LO:HI`.
    #[arg(long)]
    pub states: Option<String>,
}

#[derive(Args)]
pub struct MetricArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Needed when the corpus is empty.
    #[arg(long)]
    pub alphabet_size: Option<usize>,
    #[arg(long)]
    pub max_states: Option<usize>,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Checkpoint path; curves go to `<out>.curves.csv`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub alphabet_size: Option<usize>,
    #[arg(long)]
    pub max_states: Option<usize>,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Evaluation corpora; repeat the flag for several.
    #[arg(long = "corpus", required = true)]
    pub corpora: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1e-8)]
    pub threshold: f64,
}

#[derive(Args)]
pub struct PolicyArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Gridworld JSON; the built-in 5×5 grid when absent.
    #[arg(long)]
    pub gridworld: Option<PathBuf>,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ConditioningArg::DfaId)]
    pub conditioning: ConditioningArg,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct PacArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub gridworld: Option<PathBuf>,
    /// Corpus holding the task.
    #[arg(long)]
    pub task: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub task_index: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Comma-separated pre-training budgets in steps.
    #[arg(long, value_delimiter = ',')]
    pub budgets: Option<Vec<usize>>,
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Sample(a) => commands::sample(a),
        Command::Metric(a) => commands::metric(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Policy(a) => commands::policy(a),
        Command::Pac(a) => commands::pac(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
