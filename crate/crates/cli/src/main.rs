mod commands;
mod lock;
mod plots;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mlspvqa::eval::Preset;
use mlspvqa::features::FrameSampling;
use mlspvqa::nn::HeadKind;

/// No-reference video quality assessment with multi-level spatially pooled
/// (MLSP) deep features.
#[derive(Parser, Debug)]
#[command(name = "mlspvqa", version)]
struct Cli {
    /// More log output (-v info, -vv debug); RUST_LOG overrides
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    /// Worker threads (default: one per core)
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Cut the middle five seconds of raw videos to 960x540 H.264 (needs ffmpeg)
    Preprocess(PreprocessArgs),
    /// Extract per-frame MLSP features for every video of a manifest
    Extract(ExtractArgs),
    /// Train one head on a manifest and save it
    Train(TrainArgs),
    /// Score a manifest with a saved head
    Eval(EvalArgs),
    /// Intra-dataset protocol over random train/validation/test splits
    Intra(IntraArgs),
    /// Cross-dataset protocol: train on one manifest, test on others
    Cross(CrossArgs),
    /// Coverage curves between content feature sets
    Coverage(CoverageArgs),
    /// Fit the SOS hypothesis parameter from per-video votes
    SosFit(SosFitArgs),
    /// Split a vote budget into videos per precision level
    BudgetPlan(BudgetArgs),
    /// Label-noise grid over train and validation vote counts
    NoiseGrid(NoiseGridArgs),
}

#[derive(Args, Debug)]
pub struct OutArgs {
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct FeaturesArgs {
    /// Directory of per-video feature archives
    #[arg(long, env = "MLSPVQA_CACHE", value_name = "DIR")]
    pub features_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct HeadArgs {
    /// Head architecture
    #[arg(long, default_value = "ff")]
    pub head: HeadKind,
    /// Training settings: konvid1k, qualcomm, cvd2014, vqc or proposed
    #[arg(long, default_value = "konvid1k")]
    pub preset: Preset,
    /// Top-level seed for every random stream
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Override the preset learning rate
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Override the preset batch size
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Override the preset sequence length of recurrent heads
    #[arg(long, value_name = "T")]
    pub sequence_length: Option<usize>,
    #[arg(long, default_value_t = 250)]
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping
    #[arg(long, default_value_t = 25)]
    pub patience: usize,
    /// Prepared inputs above this size are read from disk per batch
    #[arg(long, default_value_t = 4096, value_name = "MIB")]
    pub memory_limit_mib: usize,
}

#[derive(Args, Debug)]
pub struct PreprocessArgs {
    /// Raw video files
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args, Debug)]
pub struct ExtractArgs {
    /// Manifest CSV whose media_path column names clips or frame directories
    #[arg(long)]
    pub manifest: PathBuf,
    /// Backbone descriptor file
    #[arg(long, value_name = "FILE")]
    pub backbone: PathBuf,
    /// Frames per video: all, fixed:N or stride:K[:OFFSET], optionally ,cycle
    #[arg(long, default_value = "all")]
    pub sampling: FrameSampling,
    /// Also write the content vectors of all videos as one point set
    #[arg(long)]
    pub content: bool,
    /// Run a seeded random projection in place of the network (dry runs)
    #[arg(long, value_name = "SEED")]
    pub stub_seed: Option<u64>,
    /// Keep archives that already exist
    #[arg(long)]
    pub skip_existing: bool,
    /// Directory receiving the feature archives
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    pub features: FeaturesArgs,
    #[command(flatten)]
    pub head: HeadArgs,
    /// Fraction of the manifest held out for early stopping
    #[arg(long, default_value_t = 0.2)]
    pub val_fraction: f64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Saved head file
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    pub features: FeaturesArgs,
    /// Also report RMSE per value of this group tag
    #[arg(long, value_name = "TAG")]
    pub group: Option<String>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args, Debug)]
pub struct IntraArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    pub features: FeaturesArgs,
    #[command(flatten)]
    pub head: HeadArgs,
    /// Number of random splits
    #[arg(long, default_value_t = 100, value_name = "N")]
    pub splits: usize,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args, Debug)]
pub struct CrossArgs {
    /// Training manifest
    #[arg(long)]
    pub manifest: PathBuf,
    /// Manifest providing the validation subset
    #[arg(long)]
    pub val_manifest: PathBuf,
    /// Fraction of the validation manifest used for early stopping
    #[arg(long, default_value_t = 0.5)]
    pub val_fraction: f64,
    /// Test manifests
    #[arg(long = "test-manifest", value_name = "PATH")]
    pub test_manifests: Vec<PathBuf>,
    /// Repetitions with different seeds
    #[arg(long, default_value_t = 10)]
    pub repeats: usize,
    #[command(flatten)]
    pub features: FeaturesArgs,
    #[command(flatten)]
    pub head: HeadArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args, Debug)]
pub struct CoverageArgs {
    /// Point-set archives, one per dataset (at least two)
    #[arg(long, num_args = 2.., required = true, value_name = "FILE")]
    pub sets: Vec<PathBuf>,
    /// Number of thresholds in the curve grid
    #[arg(long, default_value_t = mlspvqa::coverage::DEFAULT_GRID)]
    pub grid: usize,
    /// Also draw coverage.svg
    #[arg(long)]
    pub plot: bool,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args, Debug)]
pub struct SosFitArgs {
    /// Manifest with a votes column
    #[arg(long, required_unless_present = "votes")]
    pub manifest: Option<PathBuf>,
    /// Vote table CSV (video_id,rater_id,vote)
    #[arg(long, value_name = "FILE")]
    pub votes: Option<PathBuf>,
    /// Also draw sos.svg
    #[arg(long)]
    pub plot: bool,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args, Debug)]
pub struct BudgetArgs {
    /// Total number of votes
    #[arg(long)]
    pub budget: usize,
    /// Votes per video, comma separated
    #[arg(long, value_delimiter = ',', required = true)]
    pub precisions: Vec<usize>,
    /// Write budget.csv here as well as printing it
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct NoiseGridArgs {
    /// Vote table CSV (video_id,rater_id,vote)
    #[arg(long, value_name = "FILE")]
    pub votes: PathBuf,
    /// Training vote counts
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,7,14,26,50")]
    pub train_v: Vec<usize>,
    /// Validation vote counts
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,7,14,26,50")]
    pub val_v: Vec<usize>,
    /// Votes per video held out for the test MOS
    #[arg(long, default_value_t = 50)]
    pub test_votes: usize,
    #[arg(long, default_value_t = 10)]
    pub repeats: usize,
    /// Train heads on every cell using features from this directory
    #[arg(long, value_name = "DIR")]
    pub features_dir: Option<PathBuf>,
    #[command(flatten)]
    pub head: HeadArgs,
    /// Also draw noise_grid.svg
    #[arg(long)]
    pub plot: bool,
    #[command(flatten)]
    pub out: OutArgs,
}

/// 2 for bad input (including missing input files), 3 for anything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    let validation = err.chain().any(|e| match e.downcast_ref::<mlspvqa::Error>() {
        Some(mlspvqa::Error::Io { source, .. }) => source.kind() == std::io::ErrorKind::NotFound,
        Some(e) => e.is_validation(),
        None => false,
    });
    if validation {
        2
    } else {
        3
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    if let Some(n) = cli.jobs {
        if n == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} worker threads: {e}");
            return ExitCode::from(3);
        }
    }

    let result = match cli.command {
        Command::Preprocess(a) => commands::preprocess(a),
        Command::Extract(a) => commands::extract(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Intra(a) => commands::intra(a),
        Command::Cross(a) => commands::cross(a),
        Command::Coverage(a) => commands::coverage(a),
        Command::SosFit(a) => commands::sos_fit(a),
        Command::BudgetPlan(a) => commands::budget_plan(a),
        Command::NoiseGrid(a) => commands::noise_grid(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
