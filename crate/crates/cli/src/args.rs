use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use stage_core::aemtd::SplicePolicy;
use stage_core::eval::Setting;
use stage_core::FillPolicy;

#[derive(Debug, Parser)]
#[command(name = "stage", about = "Multi-stage funnel classification", disable_version_flag = true)]
pub struct Cli {
    /// Seed for every random choice of the run.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,

    /// JSON file with flag values; command-line flags take precedence.
    #[arg(long, global = true, value_name = "JSON")]
    pub config: Option<PathBuf>,

    /// Print the version and the model file format version.
    #[arg(long, action = ArgAction::Version)]
    pub version: Option<bool>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Encode a raw funnel CSV (one-hot, standardisation) and write it back.
    Ingest(IngestArgs),
    /// Generate a synthetic funnel dataset and its schema.
    Synth(SynthArgs),
    /// Train the adversarial encoder / multi-task decoder.
    TrainAemtd(TrainAemtdArgs),
    /// Complete every row's unobserved features with a trained encoder.
    Complete(CompleteArgs),
    /// Train the multi-label classifier on completed data.
    TrainMlssl(TrainMlsslArgs),
    /// Train a reference classifier.
    Baseline(BaselineArgs),
    /// Per-stage predictions from a trained classifier.
    Predict(PredictArgs),
    /// Run an experiment plan and write report.csv and manifest.json.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct EncodingArgs {
    /// Schema JSON describing stages and columns.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Columns to one-hot encode, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub onehot: Vec<String>,
    /// Standardise continuous columns with statistics of the input rows.
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    pub standardize: bool,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub encoding: EncodingArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Where to write the expanded schema [default: <out>.schema.json].
    #[arg(long)]
    pub schema_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 1000)]
    pub n0: usize,
    /// Number of decision stages.
    #[arg(long, default_value_t = 3)]
    pub stages: usize,
    /// Noise added to each later-stage feature.
    #[arg(long, default_value_t = 0.1)]
    pub noise_sigma: f64,
    /// Fraction of survival decisions swapped at random.
    #[arg(long, default_value_t = 0.0)]
    pub label_noise: f64,
    /// Share of the last stage that passes it.
    #[arg(long, default_value_t = 0.5)]
    pub final_pass_rate: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Where to write the schema [default: <out>.schema.json].
    #[arg(long)]
    pub schema_out: Option<PathBuf>,
    /// Optional CSV with every feature of every row, unobserved ones included.
    #[arg(long)]
    pub truth_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SgdArgs {
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    /// Minibatch size.
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    /// Epochs without validation improvement before stopping (0 = never).
    #[arg(long, default_value_t = 20)]
    pub patience: usize,
}

#[derive(Debug, Args)]
pub struct TrainAemtdArgs {
    /// Raw funnel CSV.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub encoding: EncodingArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub sgd: SgdArgs,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    #[arg(long, default_value_t = 16)]
    pub embedding_dim: usize,
    #[arg(long, default_value_t = 1.0)]
    pub rec_weight: f64,
    #[arg(long, default_value_t = 1.0)]
    pub fn_weight: f64,
    #[arg(long, default_value_t = 1.0)]
    pub gan_weight: f64,
    /// Discriminator updates per minibatch.
    #[arg(long, default_value_t = 3)]
    pub discriminator_steps: usize,
    /// Discriminator learning rate as a multiple of --lr.
    #[arg(long, default_value_t = 10.0)]
    pub discriminator_lr_scale: f64,
    #[arg(long, default_value_t = 0.1)]
    pub validation_fraction: f64,
    /// Optional CSV of per-epoch objectives.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompleteArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Raw funnel CSV in the layout the model was trained on.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// `paper` replaces observed cells with reconstructions; `keep` leaves them.
    #[arg(long, default_value = "paper")]
    pub splice: SplicePolicy,
    /// Also write the label matrix implied by the data.
    #[arg(long)]
    pub labels_out: Option<PathBuf>,
    /// `propagate` or `mask`: how stages after a rejection are labelled.
    #[arg(long, default_value = "propagate")]
    pub fill_policy: FillPolicy,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum GraphModeArg {
    PerBatch,
    Global,
}

#[derive(Debug, Args)]
pub struct TrainMlsslArgs {
    /// Completed CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Label CSV (`__row_id`, `stage_1..stage_S` over 1/0/-1); derived
    /// from the data when absent.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Weight penalty.
    #[arg(long, default_value_t = 0.5)]
    pub lambda: f64,
    /// Neighbours per row in the similarity graph.
    #[arg(long, default_value_t = 20)]
    pub knn: usize,
    /// Neighbour whose distance sets each row's kernel width.
    #[arg(long, default_value_t = 5)]
    pub hnn: usize,
    /// Skip unknown labels in the label-consistency term.
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    pub mask_missing: bool,
    #[arg(long, default_value_t = 1.0)]
    pub w_lc: f64,
    #[arg(long, default_value_t = 1.0)]
    pub w_sls: f64,
    #[arg(long, default_value_t = 1.0)]
    pub w_tc: f64,
    #[arg(long, value_enum, default_value_t = GraphModeArg::PerBatch)]
    pub graph_mode: GraphModeArg,
    #[arg(long, default_value = "propagate")]
    pub fill_policy: FillPolicy,
    #[command(flatten)]
    pub sgd: SgdArgs,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.1)]
    pub validation_fraction: f64,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    /// n-mbt (raw data), aemtd-mbt or aemtd-imc (completed data).
    #[arg(long)]
    pub setting: Setting,
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub encoding: EncodingArgs,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long, default_value = "propagate")]
    pub fill_policy: FillPolicy,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.001)]
    pub l2: f64,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    /// Initial step size; later steps decay with the L2 weight.
    #[arg(long, default_value_t = 1.0)]
    pub lr: f64,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Classifier from train-mlssl or baseline.
    #[arg(long)]
    pub clf: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub plan: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads (0 = one per core).
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}
