use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use molspectra::pipeline::Scale;

#[derive(Debug, Parser)]
#[command(name = "molspectra", version, about = "Spectrum-aware 3D molecular pre-training")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with linked structures and spectra.
    GenData(GenDataArgs),
    /// Run stage 1 (denoising) or stage 2 (denoising, reconstruction, contrast).
    Pretrain(PretrainArgs),
    /// Finite-difference check of every loss on a two-molecule toy model.
    Gradcheck(GradcheckArgs),
    /// Compare the optimal denoiser of a two-point mixture with its scaled score.
    VerifyEquivalence(EquivalenceArgs),
    /// Write structure and spectrum embeddings of every record.
    Encode(EncodeArgs),
    /// Export the attention weights of one molecule as CSV.
    DumpAttention(DumpAttentionArgs),
    /// Top-1 structure/spectra retrieval accuracy.
    EvalRetrieval(EvalRetrievalArgs),
    /// Run one ablation sweep and write its results CSV.
    Ablate(AblateArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ScaleArg {
    /// d=32, 2 layers, 4 heads, 120-point spectra, P=12, D=6, batch 16
    Desk,
    /// d=256, 3 layers, 16 heads, 601/3501/3501-point spectra, P=20, D=10, batch 128
    Full,
}

impl From<ScaleArg> for Scale {
    fn from(s: ScaleArg) -> Self {
        match s {
            ScaleArg::Desk => Scale::Desk,
            ScaleArg::Full => Scale::Full,
        }
    }
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// JSON file with any of the keys below; flags win
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of molecules
    #[arg(long)]
    pub n: Option<usize>,
    /// Random seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Spectrum grid preset [default: full]
    #[arg(long, value_enum)]
    pub scale: Option<ScaleArg>,
    /// Generator threads [default: 1]
    #[arg(long)]
    pub workers: Option<usize>,
    /// Output JSON-lines file
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Training settings shared by `pretrain` and `ablate`.
#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON file mirroring the resolved config; flags win
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model and grid preset [default: full]
    #[arg(long, value_enum)]
    pub scale: Option<ScaleArg>,
    /// Training steps [default: 300 in stage 1, 500 in stage 2]
    #[arg(long)]
    pub steps: Option<u64>,
    /// Molecules per step [default: 128; desk scale: 16]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Gradient descent step size [default: 0.001]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Bound on the global gradient norm [default: none]
    #[arg(long)]
    pub clip: Option<f64>,
    /// Random seed for initialisation, batches, noise and masks [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Coordinate noise scale in Å [default: 0.04]
    #[arg(long)]
    pub noise: Option<f64>,
    /// Weight of the denoising loss [default: 1.0]
    #[arg(long)]
    pub beta_denoising: Option<f64>,
    /// Weight of the masked patch reconstruction loss [default: 1.0; must be 0 in stage 1]
    #[arg(long)]
    pub beta_mpr: Option<f64>,
    /// Weight of the contrastive loss [default: 1.0; must be 0 in stage 1]
    #[arg(long)]
    pub beta_contrast: Option<f64>,
    /// Contrastive temperature [default: 1.0]
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Fraction of patches masked per spectrum, α [default: 0.10]
    #[arg(long)]
    pub mask_ratio: Option<f64>,
    /// Patch length P for every spectrum [default: 20; desk scale: 12]
    #[arg(long)]
    pub patch_len: Option<usize>,
    /// Patch stride D for every spectrum [default: 10; desk scale: 6]
    #[arg(long)]
    pub stride: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    /// Training stage
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub stage: u8,
    /// Dataset (JSON lines)
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Starting checkpoint: required for stage 2 (a stage-1 output or a stage-2 checkpoint to resume)
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Output checkpoint
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-step loss CSV
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed of the toy model and molecules [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Finite-difference step [default: 1e-5]
    #[arg(long)]
    pub eps: Option<f64>,
    /// Largest accepted relative error [default: 1e-4]
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// JSON report
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EquivalenceArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Noise scale τ [default: 1.0]
    #[arg(long)]
    pub tau: Option<f64>,
    /// Evaluation grid start:end:step [default: -2:2:0.1]
    #[arg(long, allow_hyphen_values = true)]
    pub grid: Option<String>,
    /// Samples for the fitted regressor, 0 to skip it [default: 100000]
    #[arg(long)]
    pub samples: Option<usize>,
    /// Sampling seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// CSV report
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Trained checkpoint
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Dataset (JSON lines)
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output JSON lines with `id`, `z_x` and, for stage-2 models, `z_s`
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DumpAttentionArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Stage-2 checkpoint
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Dataset (JSON lines)
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Record to encode [default: 0]
    #[arg(long)]
    pub index: Option<usize>,
    /// Output CSV; a `.json` sidecar with token offsets is written next to it
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalRetrievalArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Stage-2 checkpoint
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Evaluation dataset (JSON lines)
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Molecules per retrieval batch [default: 8]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Seed of the batch order [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON report
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Sweep: patch-stride, mask-ratio, objectives or modality
    #[arg(long)]
    pub table: Option<String>,
    /// Training dataset (JSON lines)
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Retrieval evaluation dataset (JSON lines)
    #[arg(long)]
    pub holdout: Option<PathBuf>,
    /// Stage-1 checkpoint every variant starts from
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Results CSV
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Retrieval batch size [default: 8]
    #[arg(long)]
    pub eval_batch: Option<usize>,
    #[command(flatten)]
    pub train: TrainArgs,
}
