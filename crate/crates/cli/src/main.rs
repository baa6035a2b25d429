//! `inva`: generate simulated data, train and evaluate models, run experiment
//! plans, check gradients, and time training.
//!
//! Progress goes to standard error; results and the echoed configuration go
//! to standard output. Usage errors exit with status 2, failed runs with 1.
//! `INVA_WORKERS` caps the number of concurrent training runs.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use inva_core::harness::{Method, TrainingConfig};
use inva_core::inva::GradientRouting;
use inva_core::neuralnet::SgdConfig;

#[derive(Parser, Debug)]
#[command(name = "inva", version, about = "Integrative variational autoencoder for image-on-image regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a polynomial scenario and write it as a dataset directory
    GenData(GenDataArgs),
    /// Fit one method on a dataset and write a checkpoint plus loss trace
    Train(TrainArgs),
    /// Compute test MSPE of a checkpoint on a dataset
    Eval(EvalArgs),
    /// Compare InVA with its two ablations on a simulated scenario
    Ablate(AblateArgs),
    /// Execute a JSON experiment plan
    RunPlan(RunPlanArgs),
    /// Finite-difference check of every model's gradients on toy configurations
    Gradcheck(GradcheckArgs),
    /// Time training across subject counts and image sizes
    Bench(BenchArgs),
    /// Aggregate results CSVs into per-scenario, per-method statistics
    Summarize(SummarizeArgs),
}

#[derive(Args, Debug, Clone)]
struct ScenarioArgs {
    /// Number of training subjects (the test set has round(0.2 n) more)
    #[arg(long, default_value_t = 100)]
    n: usize,
    /// Image side length; each image has d^3 cells
    #[arg(long, default_value_t = 2)]
    d: usize,
    /// Polynomial order of the outcome model
    #[arg(long, default_value_t = 2)]
    order: usize,
    /// Outcome noise standard deviation
    #[arg(long, default_value_t = 0.1)]
    sigma: f64,
    /// Number of input images per subject
    #[arg(long, default_value_t = 2)]
    modalities: usize,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum RoutingArg {
    /// Backpropagate the total loss into every network
    Joint,
    /// Prediction loss reaches only the predictor
    Split,
}

#[derive(Args, Debug, Clone)]
struct ModelArgs {
    /// Training epochs
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    /// Minibatch size
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    /// SGD learning rate
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// SGD momentum in [0, 1)
    #[arg(long, default_value_t = 0.0)]
    momentum: f64,
    /// Hidden-layer widths of every network, comma separated
    #[arg(long, value_delimiter = ',', default_value = "32,32")]
    hidden: Vec<usize>,
    /// Shallow latent dimension p [default: largest image dimension]
    #[arg(long)]
    shallow_dim: Option<usize>,
    /// Deep latent dimension q [default: ceil(p/2)]
    #[arg(long)]
    deep_dim: Option<usize>,
    /// Latent dimension of the VAE baselines and the no-shared ablation [default: p]
    #[arg(long)]
    vae_latent_dim: Option<usize>,
    /// Latent dimension of the no-image-specific ablation [default: p+q+1]
    #[arg(long)]
    shared_latent_dim: Option<usize>,
    /// Gradient routing of the prediction loss
    #[arg(long, value_enum, default_value = "joint")]
    routing: RoutingArg,
}

impl ModelArgs {
    fn training_config(&self) -> TrainingConfig {
        TrainingConfig {
            sgd: SgdConfig {
                learning_rate: self.lr,
                momentum: self.momentum,
                batch_size: self.batch_size,
                epochs: self.epochs,
            },
            hidden: self.hidden.clone(),
            shallow_dim: self.shallow_dim,
            deep_dim: self.deep_dim,
            vae_latent_dim: self.vae_latent_dim,
            shared_latent_dim: self.shared_latent_dim,
            routing: match self.routing {
                RoutingArg::Joint => GradientRouting::Joint,
                RoutingArg::Split => GradientRouting::Split,
            },
            ..TrainingConfig::default()
        }
    }
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Seed of coefficients, inputs and noise
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output dataset directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset directory
    #[arg(long)]
    data: PathBuf,
    /// Method to train
    #[arg(long, default_value = "inva", value_parser = parse_method)]
    method: Method,
    /// Seed of initialization, minibatch order and noise (and the 80/20 split
    /// of datasets without a recorded split)
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Checkpoint path
    #[arg(long)]
    out: PathBuf,
    /// Loss-trace CSV path [default: <out>.loss.csv]
    #[arg(long)]
    loss_trace: Option<PathBuf>,
    /// Z-score inputs by training statistics; pass it to `eval` too
    #[arg(long)]
    standardize: bool,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Dataset directory
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint written by `train`
    #[arg(long)]
    checkpoint: PathBuf,
    /// Seed of the 80/20 split for datasets without a recorded split
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Z-score inputs by training statistics, as in `train --standardize`
    #[arg(long)]
    standardize: bool,
    /// Debug: zero every predictor weight and bias before evaluating
    #[arg(long)]
    zero_predictor: bool,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Repetitions per method
    #[arg(long, default_value_t = 5)]
    repetitions: usize,
    /// Plan seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for results.csv, summary.csv and boxplot.csv
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args, Debug)]
struct RunPlanArgs {
    /// JSON plan file
    #[arg(long)]
    plan: PathBuf,
    /// Override the plan seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override the plan output directory
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// Seed of toy models, inputs and noise
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Maximum allowed relative error
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Training-set sizes, comma separated
    #[arg(long, value_delimiter = ',', default_value = "100,300,600,900,1200")]
    n_list: Vec<usize>,
    /// Image side lengths, comma separated
    #[arg(long, value_delimiter = ',', default_value = "3")]
    d_list: Vec<usize>,
    /// Method to time
    #[arg(long, default_value = "inva", value_parser = parse_method)]
    method: Method,
    /// Timings per cell; the fastest is reported
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    /// Seed of data and models
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the timing table to this CSV
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args, Debug)]
struct SummarizeArgs {
    /// Results CSVs written by run-plan or ablate
    #[arg(long, required = true, num_args = 1..)]
    results: Vec<PathBuf>,
    /// Directory for summary.csv and boxplot.csv
    #[arg(long)]
    out: Option<PathBuf>,
    /// Accepted for uniformity; summarizing is deterministic
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: inva_core::Error| e.to_string())
}

/// Error chain joined by `: `, skipping causes already quoted by their parent.
fn render(e: &anyhow::Error) -> String {
    let mut out = e.to_string();
    let mut last = out.clone();
    for cause in e.chain().skip(1) {
        let msg = cause.to_string();
        if !last.contains(&msg) {
            out.push_str(": ");
            out.push_str(&msg);
        }
        last = msg;
    }
    out
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match commands::run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", render(&e));
            match e.downcast_ref::<inva_core::Error>() {
                Some(inva_core::Error::InvalidConfig(_) | inva_core::Error::InvalidArgument(_)) => {
                    ExitCode::from(2)
                }
                _ => ExitCode::FAILURE,
            }
        }
    }
}
