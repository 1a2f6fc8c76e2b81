use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::bench::Impl;
use crate::verify::Fault;

#[derive(Debug, Parser)]
#[command(
    name = "sgconv",
    version,
    about = "Structured global convolution: verification, benchmarks, kernel dumps, training and ablations",
    args_override_self = true
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Seed for parameters, data and batching.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, global = true, default_value = "sgconv-out")]
    pub out: PathBuf,
    /// Floating-point precision (f32 is only accepted by `bench`).
    #[arg(long, global = true, value_enum, default_value_t = Precision::F64)]
    pub precision: Precision,
    /// File of `key = value` lines used as default flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for batch-parallel work (not used by `bench`).
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the invariant suites; exits non-zero on any failure.
    #[command(args_override_self = true)]
    Verify(VerifyArgs),
    /// Time direct, FFT and quadratic-score baselines across lengths.
    #[command(args_override_self = true)]
    Bench(BenchArgs),
    /// Initialize a kernel and write it as CSV.
    #[command(args_override_self = true)]
    DumpKernel(DumpArgs),
    /// Train a model on a synthetic task.
    #[command(args_override_self = true)]
    Train(TrainArgs),
    /// Sweep decay exponent and scale dimension.
    #[command(args_override_self = true)]
    Ablate(AblateArgs),
}

pub const SUBCOMMANDS: &[&str] = &["verify", "bench", "dump-kernel", "train", "ablate"];

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    /// Run only these suites.
    #[arg(long, value_delimiter = ',')]
    pub filter: Vec<String>,
    /// Corrupt a component to check that the suites catch it.
    #[arg(long, value_enum, hide = true)]
    pub inject_fault: Option<Fault>,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    /// Sequence lengths, strictly ascending.
    #[arg(long, value_delimiter = ',', default_values_t = crate::bench::BenchConfig::default_lengths())]
    pub lengths: Vec<usize>,
    #[arg(long, default_value_t = 128)]
    pub channels: usize,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    /// Batch for the score baseline (defaults to --batch).
    #[arg(long)]
    pub attn_batch: Option<usize>,
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
    /// Skip direct convolution above this length.
    #[arg(long, default_value_t = 8192)]
    pub direct_cap: usize,
    /// Smallest length included in the slope fit.
    #[arg(long, default_value_t = 1024)]
    pub fit_min_len: usize,
    /// Implementations to time.
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = Impl::ALL.to_vec())]
    pub impls: Vec<Impl>,
    /// Scale dimension of the SGConv kernel.
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Concat,
    Disentangled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitArg {
    Gaussian,
    Cosine,
}

#[derive(Debug, Clone, Args)]
pub struct KernelArgs {
    /// Scale dimension d.
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    /// Per-scale decay (concat mode).
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    /// Position-decay exponent (disentangled mode).
    #[arg(long, default_value_t = 1.0)]
    pub t: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::Concat)]
    pub mode: ModeArg,
    #[arg(long, value_enum, default_value_t = InitArg::Gaussian)]
    pub init: InitArg,
    /// Standard deviation of the Gaussian init.
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
}

#[derive(Debug, Clone, Args)]
pub struct DumpArgs {
    /// Kernel length L.
    #[arg(long, default_value_t = 4096)]
    pub len: usize,
    #[arg(long, default_value_t = 1)]
    pub channels: usize,
    #[command(flatten)]
    pub kernel: KernelArgs,
    /// Output file name inside --out.
    #[arg(long, default_value = "kernel.csv")]
    pub file: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    FirstTokenRecall,
    AddingProblem,
    SparseMajority,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReadoutArg {
    /// Last position for first-token-recall, mean otherwise.
    Auto,
    Mean,
    Last,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ActivationArg {
    Gelu,
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Args)]
pub struct TaskArgs {
    #[arg(long, value_enum, default_value_t = TaskArg::FirstTokenRecall)]
    pub task: TaskArg,
    /// Sequence length.
    #[arg(long, default_value_t = 1024)]
    pub len: usize,
    /// Classes (first-token-recall); sparse-majority is always binary.
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    /// Flagged positions in sparse-majority (odd).
    #[arg(long, default_value_t = 5)]
    pub votes: usize,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long, default_value_t = 16)]
    pub channels: usize,
    #[arg(long, default_value_t = 1)]
    pub depth: usize,
    #[command(flatten)]
    pub kernel: KernelArgs,
    #[arg(long, value_enum, default_value_t = ActivationArg::Gelu)]
    pub activation: ActivationArg,
    #[arg(long, value_enum, default_value_t = ReadoutArg::Auto)]
    pub readout: ReadoutArg,
}

#[derive(Debug, Clone, Args)]
pub struct OptimArgs {
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    #[arg(long = "batch", default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Adam)]
    pub optimizer: OptimizerArg,
    #[arg(long, default_value_t = 0.9)]
    pub beta1: f64,
    #[arg(long, default_value_t = 0.999)]
    pub beta2: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub adam_eps: f64,
    /// SGD momentum.
    #[arg(long, default_value_t = 0.0)]
    pub momentum: f64,
    #[arg(long, default_value_t = 100)]
    pub eval_every: usize,
    #[arg(long, default_value_t = 256)]
    pub eval_size: usize,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub task: TaskArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    /// Continue from a checkpoint; its model configuration is used.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub task: TaskArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    /// Decay exponents swept at --t-sweep-dim.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.5, 1.0, 2.0])]
    pub t_sweep: Vec<f64>,
    #[arg(long, default_value_t = 8)]
    pub t_sweep_dim: usize,
    /// Scale dimensions swept at --d-sweep-t.
    #[arg(long, value_delimiter = ',', default_values_t = vec![1, 8, 64])]
    pub d_sweep: Vec<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub d_sweep_t: f64,
    /// Number of seeds, starting at --seed.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
}
