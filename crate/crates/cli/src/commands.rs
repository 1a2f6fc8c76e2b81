use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sgconv::kernelgen::{init_params, KernelConfig};
use sgconv::model::{
    ablate_decay, checkpoint_bytes, read_checkpoint, summarize, train, train_model, Activation, AblationPoint,
    LogEntry, ModelConfig, OptimizerKind, Readout, TrainConfig,
};
use sgconv::tasks::{TaskKind, TaskSpec};
use sgconv::{build_kernel, InitScheme, KernelMode};

use crate::args::*;
use crate::bench::{records_csv, run_bench, summarize_records, BenchConfig};
use crate::error::CliError;
use crate::io::write_atomic;
use crate::verify::run_suites;

pub struct Outcome {
    /// Human-readable summary for stdout.
    pub report: String,
    pub files: Vec<PathBuf>,
}

fn require_f64(global: &GlobalArgs, command: &str) -> Result<(), CliError> {
    if global.precision != Precision::F64 {
        return Err(CliError::usage(format!("{command} runs in f64 only; f32 is accepted by bench")));
    }
    Ok(())
}

fn write(out: &Path, name: &str, bytes: &[u8], files: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let path = out.join(name);
    write_atomic(&path, bytes)?;
    files.push(path);
    Ok(())
}

pub fn verify(global: &GlobalArgs, args: &VerifyArgs) -> Result<Outcome, CliError> {
    require_f64(global, "verify")?;
    let results = run_suites(&args.filter, args.inject_fault).map_err(CliError::Usage)?;
    let mut report = String::new();
    for r in &results {
        writeln!(report, "{}", r.report_line()).expect("string write");
    }
    let failed = results.iter().filter(|r| !r.ok()).count();
    writeln!(report, "{} suites, {} failed", results.len(), failed).expect("string write");
    let mut files = Vec::new();
    write(&global.out, "verify.txt", report.as_bytes(), &mut files)?;
    if failed > 0 {
        return Err(CliError::Failed(report));
    }
    Ok(Outcome { report, files })
}

pub fn bench(global: &GlobalArgs, args: &BenchArgs) -> Result<Outcome, CliError> {
    let cfg = BenchConfig {
        lengths: args.lengths.clone(),
        channels: args.channels,
        batch: args.batch,
        attn_batch: args.attn_batch.unwrap_or(args.batch),
        reps: args.reps,
        direct_cap: args.direct_cap,
        fit_min_len: args.fit_min_len,
        impls: args.impls.clone(),
        scale_dim: args.dim,
        seed: global.seed,
    };
    let mut progress = |imp: crate::bench::Impl, l: usize| eprintln!("bench {} L={l}", imp.name());
    let (records, summary) = match global.precision {
        Precision::F32 => {
            let r = run_bench::<f32>(&cfg, &mut progress)?;
            let s = summarize_records::<f32>(&cfg, &r, "f32");
            (r, s)
        }
        Precision::F64 => {
            let r = run_bench::<f64>(&cfg, &mut progress)?;
            let s = summarize_records::<f64>(&cfg, &r, "f64");
            (r, s)
        }
    };
    let csv = records_csv(&records);
    let mut files = Vec::new();
    write(&global.out, "bench.csv", csv.as_bytes(), &mut files)?;
    let json = serde_json::to_string_pretty(&summary)?;
    write(&global.out, "bench_summary.json", json.as_bytes(), &mut files)?;
    let mut report = csv;
    for (name, s) in &summary.impls {
        match s.slope {
            Some(v) => writeln!(report, "slope {name}: {v:.3}"),
            None => writeln!(report, "slope {name}: n/a"),
        }
        .expect("string write");
    }
    Ok(Outcome { report, files })
}

fn kernel_config(k: &KernelArgs, seq_len: usize, channels: usize, seed: u64) -> KernelConfig {
    KernelConfig {
        decay_alpha: k.alpha,
        decay_t: k.t,
        mode: match k.mode {
            ModeArg::Concat => KernelMode::Concat,
            ModeArg::Disentangled => KernelMode::Disentangled,
        },
        init: match k.init {
            InitArg::Gaussian => InitScheme::Gaussian { sigma: k.sigma },
            InitArg::Cosine => InitScheme::Cosine,
        },
        seed,
        ..KernelConfig::new(seq_len, k.dim, channels)
    }
}

/// `channel,position,value` rows, values in scientific notation with nine
/// significant digits.
pub fn kernel_csv(values: &[f64], channels: usize, seq_len: usize) -> String {
    let mut out = String::with_capacity(24 * values.len() + 32);
    out.push_str("channel,position,value\n");
    for h in 0..channels {
        for (p, v) in values[h * seq_len..(h + 1) * seq_len].iter().enumerate() {
            writeln!(out, "{h},{p},{v:.8e}").expect("string write");
        }
    }
    out
}

pub fn dump_kernel(global: &GlobalArgs, args: &DumpArgs) -> Result<Outcome, CliError> {
    require_f64(global, "dump-kernel")?;
    let cfg = kernel_config(&args.kernel, args.len, args.channels, global.seed);
    cfg.validate()?;
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(global.seed);
    let params = init_params(&cfg, &mut rng)?;
    let kernel = build_kernel(&params, &cfg, None)?;
    let mut files = Vec::new();
    write(&global.out, &args.file, kernel_csv(&kernel.values, cfg.channels, cfg.seq_len).as_bytes(), &mut files)?;
    let report = format!(
        "kernel L={} d={} scales={} channels={} params/channel={}\n",
        cfg.seq_len,
        cfg.scale_dim,
        cfg.num_scales(),
        cfg.channels,
        cfg.params_per_channel()
    );
    Ok(Outcome { report, files })
}

fn task_spec(t: &TaskArgs, seed: u64) -> TaskSpec {
    let kind = match t.task {
        TaskArg::FirstTokenRecall => TaskKind::FirstTokenRecall,
        TaskArg::AddingProblem => TaskKind::AddingProblem,
        TaskArg::SparseMajority => TaskKind::SparseMajority,
    };
    TaskSpec {
        classes: if kind == TaskKind::FirstTokenRecall { t.classes } else { 2 },
        votes: t.votes,
        seed,
        ..TaskSpec::new(kind, t.len)
    }
}

fn model_config(m: &ModelArgs, task: &TaskSpec, seed: u64) -> ModelConfig {
    ModelConfig {
        input: task.input_spec(),
        channels: m.channels,
        seq_len: task.seq_len,
        depth: m.depth,
        kernel: kernel_config(&m.kernel, task.seq_len, m.channels, seed),
        activation: match m.activation {
            ActivationArg::Gelu => Activation::Gelu,
            ActivationArg::Relu => Activation::Relu,
        },
        readout: match (m.readout, task.kind) {
            (ReadoutArg::Mean, _) => Readout::Mean,
            (ReadoutArg::Last, _) => Readout::Last,
            (ReadoutArg::Auto, TaskKind::FirstTokenRecall) => Readout::Last,
            (ReadoutArg::Auto, _) => Readout::Mean,
        },
        outputs: task.output_dim(),
        objective: task.objective(),
        seed,
    }
}

fn train_config(o: &OptimArgs, seed: u64) -> TrainConfig {
    TrainConfig {
        steps: o.steps,
        batch_size: o.batch_size,
        learning_rate: o.lr,
        optimizer: match o.optimizer {
            OptimizerArg::Adam => OptimizerKind::Adam {
                beta1: o.beta1,
                beta2: o.beta2,
                eps: o.adam_eps,
            },
            OptimizerArg::Sgd => OptimizerKind::Sgd { momentum: o.momentum },
        },
        seed,
        eval_every: o.eval_every,
        eval_size: o.eval_size,
    }
}

/// One JSON object per line.
pub fn log_jsonl(log: &[LogEntry]) -> Result<String, CliError> {
    let mut out = String::new();
    for entry in log {
        out.push_str(&serde_json::to_string(entry)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn train_cmd(global: &GlobalArgs, args: &TrainArgs) -> Result<Outcome, CliError> {
    require_f64(global, "train")?;
    let task = task_spec(&args.task, global.seed);
    let tc = train_config(&args.optim, global.seed);
    let outcome = match &args.resume {
        Some(path) => {
            let file = std::fs::File::open(path)
                .map_err(|e| CliError::usage(format!("cannot open checkpoint {}: {e}", path.display())))?;
            let model = read_checkpoint(std::io::BufReader::new(file))?;
            train_model(&task, model, &tc)?
        }
        None => train(&task, &model_config(&args.model, &task, global.seed), &tc)?,
    };
    let mut files = Vec::new();
    write(&global.out, "log.jsonl", log_jsonl(&outcome.log)?.as_bytes(), &mut files)?;
    write(&global.out, "model.ckpt", &checkpoint_bytes(&outcome.model), &mut files)?;
    let first = &outcome.log[0];
    let last = outcome.final_entry();
    let report = format!(
        "step {} loss {:.4} acc {:.3} -> step {} loss {:.4} acc {:.3}\n",
        first.step, first.loss, first.acc, last.step, last.loss, last.acc
    );
    Ok(Outcome { report, files })
}

pub fn ablate(global: &GlobalArgs, args: &AblateArgs) -> Result<Outcome, CliError> {
    require_f64(global, "ablate")?;
    if args.seeds == 0 {
        return Err(CliError::usage("--seeds must be >= 1"));
    }
    let task = task_spec(&args.task, global.seed);
    let mut model = model_config(&args.model, &task, global.seed);
    model.kernel.mode = KernelMode::Disentangled;
    let mut grid: Vec<AblationPoint> = args.t_sweep.iter().map(|&t| AblationPoint { t, d: args.t_sweep_dim }).collect();
    grid.extend(args.d_sweep.iter().map(|&d| AblationPoint { t: args.d_sweep_t, d }));
    if let Some(p) = grid.iter().find(|p| p.d == 0 || p.d > task.seq_len || p.t < 0.0 || !p.t.is_finite()) {
        return Err(CliError::usage(format!("invalid grid point t={} d={} for L={}", p.t, p.d, task.seq_len)));
    }
    let seeds: Vec<u64> = (0..args.seeds).map(|i| global.seed + i).collect();
    let rows = ablate_decay(&task, &grid, &model, &train_config(&args.optim, global.seed), &seeds)?;

    let mut csv = String::from("t,d,accuracy,seed\n");
    for r in &rows {
        writeln!(csv, "{},{},{:.6},{}", r.t, r.d, r.accuracy, r.seed).expect("string write");
    }
    let mut means = String::from("t,d,mean_accuracy,runs\n");
    for s in summarize(&rows) {
        writeln!(means, "{},{},{:.6},{}", s.t, s.d, s.mean_accuracy, s.runs).expect("string write");
    }
    let mut files = Vec::new();
    write(&global.out, "ablation.csv", csv.as_bytes(), &mut files)?;
    write(&global.out, "ablation_summary.csv", means.as_bytes(), &mut files)?;
    Ok(Outcome { report: means, files })
}
