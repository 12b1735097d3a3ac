//! `mmc` — pipeline driver for multi-party conversation speaker
//! identification.
//!
//! Every subcommand is deterministic given its flags and seed; `--print-config`
//! echoes the fully resolved configuration as JSON before running.

mod report;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Parser, Serialize)]
#[command(name = "mmc", version, about = "Multi-party conversation speaker identification pipeline")]
pub struct Cli {
    /// Echo the fully resolved configuration as JSON before running.
    #[arg(long, global = true)]
    pub print_config: bool,
    /// Worker threads for per-session stages (1 = serial, 0 = all cores).
    /// Output ordering does not depend on this.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Serialize)]
pub enum Command {
    /// Validate a session file and optionally re-save it normalized.
    Ingest(IngestArgs),
    /// Link per-frame face detections into cleaned face tracks.
    Tracks(TracksArgs),
    /// Label face tracks against a prototype bank.
    Label(LabelArgs),
    /// Select dialogue sessions from turn streams with a sliding window.
    Sessions(SessionsArgs),
    /// Remove a random fraction of labelled face tracks.
    Noisy(NoisyArgs),
    /// Train the pairwise same-speaker head on embedding files.
    TrainHead(TrainHeadArgs),
    /// Identify speakers by solving the reward assignment problem.
    Solve(SolveArgs),
    /// Evaluate accuracy across a grid of reward weights.
    SweepAlpha(SweepAlphaArgs),
    /// Response-selection evaluation tools.
    #[command(subcommand)]
    RespondEval(RespondEvalCommand),
    /// Generate a synthetic corpus with planted ground truth.
    Synth(SynthArgs),
    /// Print corpus statistics.
    Stats(StatsArgs),
    /// Render accuracy tables and sweep series files from result records.
    Report(ReportArgs),
}

#[derive(Args, Serialize)]
pub struct IngestArgs {
    /// Line-delimited session file.
    #[arg(long)]
    pub input: PathBuf,
    /// Re-save the validated sessions here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Enforce a maximum frame gap inside tracks.
    #[arg(long)]
    pub max_track_gap: Option<usize>,
    /// Require all labels and speakers to come from this roster file.
    #[arg(long)]
    pub roster: Option<PathBuf>,
}

#[derive(Args, Serialize)]
pub struct TracksArgs {
    /// Line-delimited detection file (one frame per line).
    #[arg(long)]
    pub detections: PathBuf,
    /// Output track file.
    #[arg(long)]
    pub out: PathBuf,
    /// Minimum IoU linking a detection to an open track.
    #[arg(long, default_value_t = mmc_core::tracks::DEFAULT_IOU_LINK_THRESHOLD)]
    pub iou_threshold: f64,
    /// Maximum frame gap bridged when linking.
    #[arg(long, default_value_t = mmc_core::tracks::DEFAULT_MAX_GAP)]
    pub max_gap: usize,
    /// Tracks shorter than this are dropped.
    #[arg(long, default_value_t = mmc_core::tracks::DEFAULT_MIN_TRACK_LEN)]
    pub min_len: usize,
}

#[derive(Args, Serialize)]
pub struct LabelArgs {
    /// Track file to label (observations need embeddings).
    #[arg(long)]
    pub tracks: PathBuf,
    /// Prototype bank in the score-table container.
    #[arg(long)]
    pub prototypes: PathBuf,
    /// Output track file; unlabelled tracks are discarded unless
    /// --keep-unlabelled is set.
    #[arg(long)]
    pub out: PathBuf,
    /// Minimum pooled similarity for accepting a label.
    #[arg(long, default_value_t = mmc_core::labeler::DEFAULT_LABEL_THRESHOLD)]
    pub threshold: f64,
    /// Number of largest similarities pooled per character.
    #[arg(long, default_value_t = mmc_core::labeler::DEFAULT_TOP_K)]
    pub top_k: usize,
    #[arg(long)]
    pub keep_unlabelled: bool,
}

#[derive(Args, Serialize)]
pub struct SessionsArgs {
    /// Turn streams in the session schema, one stream per line.
    #[arg(long)]
    pub input: PathBuf,
    /// Roster file, one character name per line.
    #[arg(long)]
    pub roster: PathBuf,
    /// Output session file.
    #[arg(long)]
    pub out: PathBuf,
    /// Turns per session window.
    #[arg(long, default_value_t = 5)]
    pub window_size: usize,
    /// Maximum inter-turn gap inside a session, in seconds.
    #[arg(long, default_value_t = mmc_core::sessions::DEFAULT_MAX_GAP_SECONDS)]
    pub max_gap_seconds: f64,
}

#[derive(Args, Serialize)]
pub struct NoisyArgs {
    /// Session file to degrade.
    #[arg(long)]
    pub input: PathBuf,
    /// Output session file.
    #[arg(long)]
    pub out: PathBuf,
    /// Fraction of labelled tracks removed per session.
    #[arg(long, default_value_t = mmc_core::sessions::DEFAULT_NOISE_FRACTION)]
    pub noise_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Serialize)]
pub struct TrainHeadArgs {
    /// Session file supplying gold speakers.
    #[arg(long)]
    pub sessions: PathBuf,
    /// Per-session utterance embeddings (score tables, one line per session).
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Where to write the trained parameters (JSON).
    #[arg(long)]
    pub params_out: PathBuf,
    /// Optional per-epoch loss trace (TSV).
    #[arg(long)]
    pub trace_out: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    pub hidden: usize,
    #[arg(long, default_value_t = 0.5)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 300)]
    pub epochs: usize,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// sgd or adam.
    #[arg(long, default_value = "sgd")]
    pub optimizer: String,
}

#[derive(Args, Serialize)]
#[command(group = clap::ArgGroup::new("psim_source").required(true).multiple(false))]
pub struct SolveArgs {
    /// Session file to identify speakers for.
    #[arg(long)]
    pub sessions: PathBuf,
    /// Similarity score tables aligned line-by-line with the sessions.
    #[arg(long, group = "psim_source")]
    pub psim: Option<PathBuf>,
    /// Trained head parameters; similarities are computed from --embeddings.
    #[arg(long, group = "psim_source", requires = "embeddings")]
    pub params: Option<PathBuf>,
    /// Use ground-truth speakers as the similarity source.
    #[arg(long, group = "psim_source")]
    pub text_oracle: bool,
    /// Per-session utterance embeddings, required with --params.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// External per-track speaking probabilities to apply first.
    #[arg(long)]
    pub m1_scores: Option<PathBuf>,
    /// Weight of the vision reward.
    #[arg(long, default_value_t = mmc_core::solver::DEFAULT_ALPHA_FRAME)]
    pub alpha: f64,
    /// exact, bnb, or local.
    #[arg(long, default_value = "bnb")]
    pub solver: String,
    /// Assignment-count budget for the exact solver.
    #[arg(long, default_value_t = mmc_core::solver::DEFAULT_BUDGET)]
    pub budget: u64,
    /// Local-search iteration cap.
    #[arg(long, default_value_t = 100)]
    pub iterations: usize,
    /// Local-search restarts.
    #[arg(long, default_value_t = 8)]
    pub restarts: usize,
    /// Roster file for sessions without any labelled face.
    #[arg(long)]
    pub fallback_roster: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Per-session assignments (line-delimited JSON).
    #[arg(long)]
    pub assignments_out: Option<PathBuf>,
    /// Accuracy record consumable by `mmc report`.
    #[arg(long)]
    pub result_out: Option<PathBuf>,
    /// Label used in reports.
    #[arg(long, default_value = "solve")]
    pub label: String,
}

#[derive(Args, Serialize)]
#[command(group = clap::ArgGroup::new("psim_source").required(true).multiple(false))]
pub struct SweepAlphaArgs {
    #[arg(long)]
    pub sessions: PathBuf,
    #[arg(long, group = "psim_source")]
    pub psim: Option<PathBuf>,
    #[arg(long, group = "psim_source", requires = "embeddings")]
    pub params: Option<PathBuf>,
    #[arg(long, group = "psim_source")]
    pub text_oracle: bool,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub m1_scores: Option<PathBuf>,
    /// Comma-separated alpha values.
    #[arg(long, value_delimiter = ',', default_value = "0.0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0")]
    pub grid: Vec<f64>,
    /// Evaluate on a seeded held-out fraction instead of all sessions.
    #[arg(long, default_value_t = 0.0)]
    pub holdout_fraction: f64,
    #[arg(long, default_value = "bnb")]
    pub solver: String,
    #[arg(long, default_value_t = mmc_core::solver::DEFAULT_BUDGET)]
    pub budget: u64,
    #[arg(long, default_value_t = 100)]
    pub iterations: usize,
    #[arg(long, default_value_t = 8)]
    pub restarts: usize,
    #[arg(long)]
    pub fallback_roster: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Sweep record consumable by `mmc report`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value = "alpha-sweep")]
    pub label: String,
}

#[derive(Subcommand, Serialize)]
pub enum RespondEvalCommand {
    /// Build response-selection candidate lists.
    Build(RespondBuildArgs),
    /// Perturb speaker names in an evaluation session file.
    Perturb(RespondPerturbArgs),
    /// Apply lowest-score selection to externally computed scores.
    Select(RespondSelectArgs),
}

#[derive(Args, Serialize)]
pub struct RespondBuildArgs {
    #[arg(long)]
    pub sessions: PathBuf,
    /// Output candidate file (line-delimited JSON).
    #[arg(long)]
    pub out: PathBuf,
    /// Negative responses sampled per item.
    #[arg(long, default_value_t = mmc_core::respond::DEFAULT_NEGATIVES)]
    pub negatives: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Serialize)]
pub struct RespondPerturbArgs {
    #[arg(long)]
    pub sessions: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// random, random_history, or shuffled.
    #[arg(long)]
    pub mode: String,
    /// Roster file covering every session speaker.
    #[arg(long)]
    pub roster: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Serialize)]
pub struct RespondSelectArgs {
    /// Candidate file produced by `respond-eval build`.
    #[arg(long)]
    pub candidates: PathBuf,
    /// Score table: one row per item, one column per candidate.
    #[arg(long)]
    pub scores: PathBuf,
    /// Chosen index per item (JSON array).
    #[arg(long)]
    pub choices_out: Option<PathBuf>,
    /// Accuracy record consumable by `mmc report`.
    #[arg(long)]
    pub result_out: Option<PathBuf>,
    #[arg(long, default_value = "response-selection")]
    pub label: String,
}

#[derive(Args, Serialize)]
pub struct SynthArgs {
    /// Directory for the generated corpus files.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub sessions: usize,
    /// Turns per session (5 or 8).
    #[arg(long, default_value_t = 5)]
    pub turns: usize,
    #[arg(long, default_value_t = 6)]
    pub roster_size: usize,
    #[arg(long, default_value_t = 3)]
    pub cast_size: usize,
    #[arg(long, default_value_t = 0.9)]
    pub p_face_present: f64,
    #[arg(long, default_value_t = 0.5)]
    pub p_background_face: f64,
    #[arg(long, default_value_t = 0.8)]
    pub p_vision_correct: f64,
    #[arg(long, default_value_t = 0.3)]
    pub sim_noise: f64,
    #[arg(long, default_value_t = 16)]
    pub embedding_dim: usize,
    #[arg(long, default_value_t = 0.25)]
    pub embedding_spread: f64,
    #[arg(long, default_value_t = 0.3)]
    pub name_mention_prob: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Serialize)]
pub struct StatsArgs {
    #[arg(long)]
    pub sessions: PathBuf,
    /// Frames per second used for track durations.
    #[arg(long, default_value_t = 25.0)]
    pub fps: f64,
    /// Emit JSON instead of the text table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Serialize)]
pub struct ReportArgs {
    /// Result record files written by solve / sweep-alpha / respond-eval.
    #[arg(long, num_args = 1.., required = true)]
    pub inputs: Vec<PathBuf>,
    /// Directory for report.txt and per-sweep TSV series files.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.print_config {
        match serde_json::to_string_pretty(&cli) {
            Ok(json) => println!("{json}"),
            Err(err) => {
                eprintln!("error: cannot render config: {err}");
                return ExitCode::from(1);
            }
        }
    }
    match run::execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

/// Distinct exit codes per error category: 2 usage (from clap), 3 I/O,
/// 4 malformed data, 5 invariant/precondition, 6 budget or divergence,
/// 1 anything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    use mmc_core::Error;
    match err.downcast_ref::<Error>() {
        Some(Error::Io { .. }) => 3,
        Some(Error::Parse { .. }) => 4,
        Some(Error::Invariant { .. } | Error::InvalidInput(_) | Error::Shape(_)) => 5,
        Some(Error::BudgetExceeded { .. } | Error::Divergence { .. }) => 6,
        None => 1,
    }
}
