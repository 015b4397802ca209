//! Command-line harness: dataset generation, training, invariance evaluation,
//! verification reports and curve export.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub mod commands;
pub mod plot;
pub mod provenance;

/// Environment variable that overrides every `--seed` flag.
pub const SEED_ENV: &str = "IDGNN_SEED";

#[derive(Debug, Parser)]
#[command(name = "idgnn", version, about = "GNNs with random node identifiers and invariance regularization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the isInTriangle node-classification datasets.
    GenIstriangle(GenIsTriangleArgs),
    /// Generate 1-WL-indistinguishable cycle pairs for graph classification.
    GenWlhard(GenWlHardArgs),
    /// Train one model per seed and write records, metrics and checkpoints.
    Train(TrainArgs),
    /// Estimate the invariance ratio of a trained checkpoint.
    EvalInvariance(EvalInvarianceArgs),
    /// Check the identifier-matching triangle network against brute force.
    VerifyTheorem3(VerifyTheorem3Args),
    /// Check that generated pairs defeat 1-WL and identifier-free GNNs.
    VerifyWl(VerifyWlArgs),
    /// Plot accuracy and invariance curves from a metrics CSV.
    ExportCurves(ExportCurvesArgs),
}

#[derive(Debug, Args)]
pub struct GenIsTriangleArgs {
    /// Training graphs (a fraction is held out for validation).
    #[arg(long, default_value_t = 100)]
    pub graphs: usize,
    /// Nodes per graph.
    #[arg(long, default_value_t = 100)]
    pub nodes: usize,
    /// Attachment parameter for training and interpolation graphs.
    #[arg(long, default_value_t = 2)]
    pub m_train: usize,
    /// Attachment parameter for extrapolation graphs.
    #[arg(long, default_value_t = 3)]
    pub m_extrap: usize,
    /// Graphs in each of the two test sets.
    #[arg(long, default_value_t = 20)]
    pub test_graphs: usize,
    /// Labeled nodes per split.
    #[arg(long, default_value_t = 500)]
    pub labeled: usize,
    /// Fraction of training graphs used for validation.
    #[arg(long, default_value_t = 0.2)]
    pub valid_fraction: f64,
    /// Generator seed (overridden by IDGNN_SEED).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenWlHardArgs {
    /// Number of graph pairs.
    #[arg(long, default_value_t = 100)]
    pub pairs: usize,
    /// Candidate node counts 2k, comma separated; each must be even and >= 6.
    #[arg(long, value_delimiter = ',', default_value = "6,8")]
    pub sizes: Vec<usize>,
    /// Generator seed (overridden by IDGNN_SEED).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training config JSON; omitted fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset JSONL with its split sidecar.
    #[arg(long)]
    pub data: PathBuf,
    /// Extra evaluation set as NAME=FILE; every graph of FILE is evaluated.
    #[arg(long = "extra-test", value_parser = parse_named_path)]
    pub extra_test: Vec<(String, PathBuf)>,
    /// Dataset name recorded in metrics (default: file stem of --data).
    #[arg(long)]
    pub name: Option<String>,
    /// Train a single seed instead of the config's seed list (overridden by IDGNN_SEED).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads across seeds.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalInvarianceArgs {
    /// Model checkpoint JSON.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset JSONL with its split sidecar.
    #[arg(long)]
    pub data: PathBuf,
    /// Split to evaluate: train, valid, test or all.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Identifier resamples per example.
    #[arg(long, default_value_t = 200)]
    pub k: usize,
    /// Resampling seed (overridden by IDGNN_SEED).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyTheorem3Args {
    /// Random BA graphs to check.
    #[arg(long, default_value_t = 100)]
    pub graphs: usize,
    /// Largest graph size; sizes are drawn uniformly from m + 2 up to this.
    #[arg(long, default_value_t = 50)]
    pub nodes: usize,
    /// BA attachment parameter.
    #[arg(long, default_value_t = 2)]
    pub m: usize,
    /// Identifier resamples per graph.
    #[arg(long, default_value_t = 50)]
    pub resamples: usize,
    /// Seed (overridden by IDGNN_SEED).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Optional output directory for the JSON report.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyWlArgs {
    /// Number of graph pairs.
    #[arg(long, default_value_t = 100)]
    pub pairs: usize,
    /// Candidate node counts 2k, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "6,8")]
    pub sizes: Vec<usize>,
    /// Hidden width of the randomly initialized GIN.
    #[arg(long, default_value_t = 32)]
    pub hidden: usize,
    /// Layers of the randomly initialized GIN.
    #[arg(long, default_value_t = 3)]
    pub layers: usize,
    /// Seed (overridden by IDGNN_SEED).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Optional output directory for the JSON report.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportCurvesArgs {
    /// Metrics CSV written by `train`.
    #[arg(long)]
    pub metrics: PathBuf,
    /// Split whose curves are plotted.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_named_path(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => Ok((name.to_string(), PathBuf::from(path))),
        _ => Err(format!("expected NAME=FILE, got {s:?}")),
    }
}

/// Bad invocation detected after argument parsing; exits with status 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

/// A verification report found a counterexample.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct VerificationFailed(pub String);

fn error_kind(err: &anyhow::Error) -> &'static str {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<idgnn::Error>() {
            return e.kind();
        }
        if cause.is::<VerificationFailed>() {
            return "verification";
        }
        if cause.is::<std::io::Error>() {
            return "io";
        }
        if cause.is::<serde_json::Error>() {
            return "json";
        }
        if cause.is::<csv::Error>() {
            return "csv";
        }
    }
    "runtime"
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit status: 0 on success, 1 on runtime failure, 2 on usage
/// errors. Failures print one `error: kind=... msg=...` line to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => 0,
        Err(err) => {
            let msg = format!("{err:#}").replace('\n', " ");
            if err.is::<UsageError>() {
                eprintln!("error: kind=usage msg={msg}");
                2
            } else {
                eprintln!("error: kind={} msg={msg}", error_kind(&err));
                1
            }
        }
    }
}
