use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use persplens::persp_loss::{DEFAULT_LAMBDA, DEFAULT_N_ANGLES, DEFAULT_STEP};
use persplens::vp_tools::DEFAULT_TOL_REAL;
use persplens::{PerspLossConfig, Reduction};

/// Seed used by every command when `--seed` is not given.
pub const DEFAULT_SEED: u64 = 20_240_917;

#[derive(Debug, Parser)]
#[command(name = "persplens", version, about = "Perspective-consistency loss for images")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score an image against a reference under annotated vanishing points.
    Score(ScoreArgs),
    /// Compare the analytic gradient with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Generate a synthetic corpus of accurate and distorted wireframe renders.
    Gen(GenArgs),
    /// Gradient descent on the pixels of an image toward a reference.
    Optimize(OptimizeArgs),
    /// Check that annotated segment families are concurrent.
    Check(CheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReductionArg {
    L2,
    Sum,
}

#[derive(Debug, Clone, Args)]
pub struct LossArgs {
    /// Rays swept per vanishing point.
    #[arg(long, default_value_t = DEFAULT_N_ANGLES)]
    pub n_angles: usize,
    /// Quadrature step along each ray, in pixels.
    #[arg(long, default_value_t = DEFAULT_STEP)]
    pub step: f64,
    #[arg(long, value_enum, default_value_t = ReductionArg::L2)]
    pub reduction: ReductionArg,
    /// Divide each profile entry by its clipped ray length.
    #[arg(long)]
    pub normalize_length: bool,
    /// Weight of the perspective term in the composite loss.
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    pub lambda: f64,
}

impl LossArgs {
    pub fn config(&self) -> PerspLossConfig<f64> {
        PerspLossConfig {
            n_angles: self.n_angles,
            step: self.step,
            reduction: match self.reduction {
                ReductionArg::L2 => Reduction::L2OverAngles,
                ReductionArg::Sum => Reduction::SumPerAngle,
            },
            normalize_by_length: self.normalize_length,
        }
    }
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    pub image: PathBuf,
    pub reference: PathBuf,
    pub annotations: PathBuf,
    #[command(flatten)]
    pub loss: LossArgs,
    /// Base loss to combine with the perspective term (prints the composite).
    #[arg(long)]
    pub base_loss: Option<f64>,
    /// Append a CSV record to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Side length of the random square images (at most 32).
    #[arg(long, default_value_t = 12)]
    pub size: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Number of random vanishing points.
    #[arg(long, default_value_t = 1)]
    pub vps: usize,
    /// Finite-difference step.
    #[arg(long, default_value_t = 1e-3)]
    pub h: f64,
    /// Number of largest-magnitude gradient entries compared.
    #[arg(long, default_value_t = 50)]
    pub top: usize,
    /// Rays per vanishing point. Fewer than the scoring default: every extra
    /// ray adds quadrature terms near zero, and pixels touching those are
    /// excluded from the comparison.
    #[arg(long, default_value_t = GRADCHECK_N_ANGLES)]
    pub n_angles: usize,
    #[arg(long, default_value_t = DEFAULT_STEP)]
    pub step: f64,
    #[arg(long, value_enum, default_value_t = ReductionArg::L2)]
    pub reduction: ReductionArg,
    #[arg(long)]
    pub normalize_length: bool,
}

/// Default `--n-angles` of `gradcheck`.
pub const GRADCHECK_N_ANGLES: usize = 8;

impl GradcheckArgs {
    pub fn config(&self) -> PerspLossConfig<f64> {
        LossArgs {
            n_angles: self.n_angles,
            step: self.step,
            reduction: self.reduction,
            normalize_length: self.normalize_length,
            lambda: DEFAULT_LAMBDA,
        }
        .config()
    }
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Number of scenes.
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long, default_value_t = 128)]
    pub width: usize,
    #[arg(long, default_value_t = 128)]
    pub height: usize,
    /// Focal length in pixels; defaults to the image width.
    #[arg(long)]
    pub focal: Option<f64>,
    /// Boxes per scene; drawn uniformly from 1..=3 when omitted.
    #[arg(long)]
    pub boxes: Option<usize>,
    /// Bow amplitude of the distorted render, in pixels.
    #[arg(long, default_value_t = 2.0)]
    pub bow: f64,
    /// Per-family translation of the distorted render, in pixels.
    #[arg(long, default_value_t = 0.0)]
    pub jitter: f64,
    /// Annotated vanishing points must lie within this many image diagonals
    /// of the centre.
    #[arg(long, default_value_t = 4.0)]
    pub vp_range: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    pub init: PathBuf,
    pub reference: PathBuf,
    pub annotations: PathBuf,
    #[arg(long, default_value_t = 500)]
    pub steps: usize,
    /// Learning rate; tuned over a fixed grid when omitted.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Write every k-th intermediate image.
    #[arg(long, default_value_t = 0)]
    pub snapshots: usize,
    #[command(flatten)]
    pub loss: LossArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    pub annotations: PathBuf,
    /// Largest allowed RMS distance (px) from a family's lines to its VP.
    #[arg(long, default_value_t = DEFAULT_TOL_REAL)]
    pub tol: f64,
}
