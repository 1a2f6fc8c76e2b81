mod common;

use common::*;
use rand::seq::SliceRandom;
use rand::Rng;
use sgconv::model::{
    ablate_decay, block_forward, checkpoint_bytes, classifier_forward, read_checkpoint, train, Activation,
    AblationPoint, BlockConfig, BlockParams, Model, ModelConfig, Optimizer, OptimizerKind, Readout, TrainConfig,
};
use sgconv::tasks::{gen_batch, gen_indexed_batch, Batch, InputSpec, Inputs, Labels, Objective, TaskKind, TaskSpec};
use sgconv::{ConvPlan, KernelConfig, KernelMode, Tensor3};

fn model_config(task: &TaskSpec, channels: usize, depth: usize, scale_dim: usize) -> ModelConfig {
    ModelConfig {
        input: task.input_spec(),
        channels,
        seq_len: task.seq_len,
        depth,
        kernel: KernelConfig::new(task.seq_len, scale_dim, channels),
        activation: Activation::Gelu,
        readout: Readout::Mean,
        outputs: task.output_dim(),
        objective: task.objective(),
        seed: 1,
    }
}

fn fd_error(model: &Model, batch: &Batch) -> f64 {
    let (_, grads) = model.loss_and_grad(batch).unwrap();
    let point = model.state.flat_params();
    let mut probe = model.clone();
    sgconv::grad::fd_check_flat(
        |w| {
            probe.state.set_flat_params(w).unwrap();
            probe.loss(batch).unwrap()
        },
        &point,
        &grads.flatten(),
        1e-5,
    )
    .unwrap()
    .max_rel_error
}

#[test]
fn classifier_gradient_matches_finite_differences() {
    let task = TaskSpec::new(TaskKind::FirstTokenRecall, 32);
    for readout in [Readout::Mean, Readout::Last] {
        for mode in [KernelMode::Concat, KernelMode::Disentangled] {
            let mut cfg = model_config(&task, 4, 2, 4);
            cfg.readout = readout;
            cfg.kernel.mode = mode;
            let mut model = Model::new(cfg).unwrap();
            // move the head off its tiny init so every path carries signal
            let mut r = rng(3);
            model.state.head_weight.iter_mut().for_each(|w| *w = r.random_range(-1.0..1.0));
            let batch = gen_indexed_batch(&task, 5, 0).unwrap();
            let err = fd_error(&model, &batch);
            assert!(err <= 1e-4, "{readout:?} {mode:?}: {err:e}");
        }
    }
}

#[test]
fn regression_gradient_matches_finite_differences() {
    let task = TaskSpec::new(TaskKind::AddingProblem, 32);
    let mut cfg = model_config(&task, 4, 2, 4);
    cfg.activation = Activation::Gelu;
    let mut model = Model::new(cfg).unwrap();
    let mut r = rng(4);
    model.state.head_weight.iter_mut().for_each(|w| *w = r.random_range(-1.0..1.0));
    let batch = gen_indexed_batch(&task, 3, 0).unwrap();
    assert!(fd_error(&model, &batch) <= 1e-4);
}

#[test]
fn one_small_step_decreases_loss() {
    let task = TaskSpec::new(TaskKind::FirstTokenRecall, 64);
    for seed in 0..20 {
        let mut cfg = model_config(&task, 8, 2, 4);
        cfg.seed = seed;
        let mut model = Model::new(cfg).unwrap();
        let batch = gen_indexed_batch(&TaskSpec { seed, ..task.clone() }, 16, 0).unwrap();
        let (before, grads) = model.loss_and_grad(&batch).unwrap();
        let mut opt = Optimizer::new(OptimizerKind::Sgd { momentum: 0.0 }, 1e-4).unwrap();
        opt.step(model.state.trainable_mut(), grads.tensors());
        let after = model.loss(&batch).unwrap();
        assert!(after < before, "seed {seed}: {before} -> {after}");
    }
}

#[test]
fn batch_rows_are_independent() {
    let task = TaskSpec::new(TaskKind::SparseMajority, 128);
    let model = Model::new(model_config(&task, 6, 2, 8)).unwrap();
    let batch = gen_indexed_batch(&task, 8, 0).unwrap();
    let all = classifier_forward(&batch.inputs, &model).unwrap();
    let o = task.output_dim();
    for b in 0..8 {
        let one = classifier_forward(&batch.inputs.slice(b, b + 1), &model).unwrap();
        assert!(max_abs_diff(&one, &all[b * o..(b + 1) * o]) <= 1e-12);
    }
}

#[test]
fn untrained_cross_entropy_is_chance() {
    for classes in [2, 4, 10] {
        let task = TaskSpec {
            classes,
            ..TaskSpec::new(TaskKind::FirstTokenRecall, 64)
        };
        let model = Model::new(model_config(&task, 8, 2, 8)).unwrap();
        let batch = gen_indexed_batch(&task, 200, 0).unwrap();
        let loss = model.loss(&batch).unwrap();
        let chance = (classes as f64).ln();
        assert!((loss - chance).abs() <= 0.1 * chance, "C={classes}: {loss} vs {chance}");
    }
}

#[test]
fn forward_is_deterministic() {
    let task = TaskSpec::new(TaskKind::FirstTokenRecall, 100);
    let cfg = model_config(&task, 4, 3, 5);
    let batch = gen_indexed_batch(&task, 9, 2).unwrap();
    let a = Model::new(cfg.clone()).unwrap().logits(&batch.inputs).unwrap();
    let b = Model::new(cfg).unwrap().logits(&batch.inputs).unwrap();
    assert_eq!(a, b);
}

#[test]
fn gradients_do_not_depend_on_thread_count() {
    let task = TaskSpec::new(TaskKind::FirstTokenRecall, 64);
    let model = Model::new(model_config(&task, 4, 2, 4)).unwrap();
    let batch = gen_indexed_batch(&task, 37, 0).unwrap();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| model.loss_and_grad(&batch).unwrap())
    };
    let (l1, g1) = run(1);
    let (l4, g4) = run(4);
    assert_eq!(l1, l4);
    assert_eq!(g1, g4);
}

#[test]
fn out_of_range_tokens_are_rejected() {
    let task = TaskSpec::new(TaskKind::FirstTokenRecall, 16);
    let model = Model::new(model_config(&task, 4, 1, 4)).unwrap();
    let inputs = Inputs::Tokens { batch: 1, len: 16, ids: vec![8; 16] };
    assert!(classifier_forward(&inputs, &model).is_err());
}

fn block_setup(l: usize, h: usize, seed: u64) -> (BlockConfig, BlockParams, Tensor3<f64>, ConvPlan<f64>) {
    let config = BlockConfig {
        channels: h,
        seq_len: l,
        kernel: KernelConfig {
            seed,
            ..KernelConfig::new(l, 4, h)
        },
        mix_dim: h,
        activation: Activation::Gelu,
    };
    let mut r = rng(seed);
    let mut params = BlockParams::init(&config, &mut r).unwrap();
    params.norm_scale.iter_mut().for_each(|v| *v = r.random_range(0.5..1.5));
    params.norm_bias.iter_mut().for_each(|v| *v = r.random_range(-0.5..0.5));
    params.mix_bias.iter_mut().for_each(|v| *v = r.random_range(-0.5..0.5));
    let x = Tensor3::from_vec([3, h, l], random_vec(&mut r, 3 * h * l)).unwrap();
    (config, params, x, ConvPlan::new(l).unwrap())
}

#[test]
fn block_matches_reference_composition() {
    let (l, h) = (64, 5);
    let (config, params, x, plan) = block_setup(l, h, 7);
    let y = block_forward(&x, &params, &config, &plan).unwrap();
    let kernel = kernel_ref(&params.kernel, &config.kernel);
    let gelu = |v: f64| 0.5 * v * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (v + 0.044715 * v * v * v)).tanh());
    for b in 0..3 {
        // layer norm over channels at each position
        let mut normed = vec![vec![0.0; l]; h];
        for p in 0..l {
            let col: Vec<f64> = (0..h).map(|c| x.get(b, c, p)).collect();
            let mean = col.iter().sum::<f64>() / h as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / h as f64;
            for c in 0..h {
                normed[c][p] = (col[c] - mean) / (var + 1e-5).sqrt() * params.norm_scale[c] + params.norm_bias[c];
            }
        }
        let act: Vec<Vec<f64>> = (0..h)
            .map(|c| causal_conv_ref(&normed[c], &kernel[c]).into_iter().map(gelu).collect())
            .collect();
        for o in 0..h {
            for p in 0..l {
                let mixed: f64 = (0..h).map(|i| params.mix_weight[o * h + i] * act[i][p]).sum::<f64>() + params.mix_bias[o];
                let want = x.get(b, o, p) + mixed;
                assert!((y.get(b, o, p) - want).abs() <= 1e-10 * want.abs().max(1.0));
            }
        }
    }
}

#[test]
fn zero_mix_stack_is_identity() {
    let (l, h) = (48, 4);
    let (config, params, x, plan) = block_setup(l, h, 2);
    let mut y = x.clone();
    for depth in 0..12 {
        let mut p = params.clone();
        p.kernel.weights.iter_mut().for_each(|w| *w *= 1.0 + depth as f64);
        p.mix_weight.fill(0.0);
        p.mix_bias.fill(0.0);
        y = block_forward(&y, &p, &config, &plan).unwrap();
    }
    assert_eq!(y, x);
}

#[test]
fn block_is_batch_equivariant() {
    let (config, params, x, plan) = block_setup(32, 3, 5);
    let y = block_forward(&x, &params, &config, &plan).unwrap();
    let order = [2usize, 0, 1];
    let permuted = Tensor3::from_fn(x.shape(), |b, c, p| x.get(order[b], c, p));
    let yp = block_forward(&permuted, &params, &config, &plan).unwrap();
    for (b, &src) in order.iter().enumerate() {
        assert_eq!(yp.sample(b), y.sample(src));
    }
}

fn small_train(steps: usize, lr: f64) -> TrainConfig {
    TrainConfig {
        steps,
        batch_size: 8,
        learning_rate: lr,
        eval_every: 5,
        eval_size: 32,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_learning_rate_gives_flat_loss() {
    let task = TaskSpec::new(TaskKind::FirstTokenRecall, 32);
    let cfg = model_config(&task, 4, 1, 4);
    let out = train(&task, &cfg, &small_train(20, 0.0)).unwrap();
    assert_eq!(out.log.len(), 5);
    assert!(out.log.iter().all(|e| e.loss == out.log[0].loss));
    assert_eq!(out.model.state, Model::new(cfg).unwrap().state);
}

#[test]
fn training_is_reproducible() {
    let task = TaskSpec::new(TaskKind::AddingProblem, 32);
    let cfg = model_config(&task, 4, 2, 4);
    let a = train(&task, &cfg, &small_train(15, 1e-2)).unwrap();
    let b = train(&task, &cfg, &small_train(15, 1e-2)).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.model.state, b.model.state);
}

#[test]
fn training_reduces_loss_on_easy_task() {
    let task = TaskSpec::new(TaskKind::FirstTokenRecall, 16);
    let mut cfg = model_config(&task, 8, 1, 4);
    cfg.readout = Readout::Last;
    cfg.kernel.decay_alpha = 0.9;
    let tc = TrainConfig {
        batch_size: 16,
        eval_every: 50,
        eval_size: 64,
        ..small_train(250, 1e-2)
    };
    let out = train(&task, &cfg, &tc).unwrap();
    assert!(out.final_entry().loss < 0.5 * out.log[0].loss, "{:?}", out.log);
}

#[test]
fn divergence_is_reported() {
    let task = TaskSpec::new(TaskKind::AddingProblem, 16);
    let cfg = model_config(&task, 4, 1, 4);
    let mut tc = small_train(50, 1e6);
    tc.optimizer = OptimizerKind::Sgd { momentum: 0.0 };
    match train(&task, &cfg, &tc) {
        Err(sgconv::Error::Diverged { .. }) => {}
        other => panic!("expected divergence, got {:?}", other.map(|o| o.log)),
    }
}

#[test]
fn train_rejects_mismatched_model() {
    let task = TaskSpec::new(TaskKind::FirstTokenRecall, 32);
    let other = TaskSpec::new(TaskKind::AddingProblem, 32);
    assert!(train(&task, &model_config(&other, 4, 1, 4), &small_train(1, 1e-3)).is_err());
    let mut tc = small_train(1, 1e-3);
    tc.steps = 0;
    assert!(train(&task, &model_config(&task, 4, 1, 4), &tc).is_err());
}

#[test]
fn checkpoint_round_trip_reproduces_logits() {
    let task = TaskSpec::new(TaskKind::FirstTokenRecall, 32);
    let mut cfg = model_config(&task, 4, 2, 4);
    cfg.kernel.init = sgconv::InitScheme::Cosine;
    let trained = train(&task, &cfg, &small_train(10, 1e-2)).unwrap().model;
    let restored = read_checkpoint(&checkpoint_bytes(&trained)[..]).unwrap();
    assert_eq!(restored.config, trained.config);
    assert_eq!(restored.state, trained.state);
    let batch = gen_indexed_batch(&task, 6, 99).unwrap();
    assert_eq!(restored.logits(&batch.inputs).unwrap(), trained.logits(&batch.inputs).unwrap());
}

#[test]
fn ablation_grid_rows() {
    let task = TaskSpec::new(TaskKind::FirstTokenRecall, 32);
    let mut cfg = model_config(&task, 4, 1, 8);
    cfg.kernel.mode = KernelMode::Disentangled;
    let tc = small_train(3, 1e-3);
    let one = ablate_decay(&task, &[AblationPoint { t: 1.0, d: 8 }], &cfg, &tc, &[0]).unwrap();
    assert_eq!(one.len(), 1);
    let grid = [AblationPoint { t: 0.0, d: 8 }, AblationPoint { t: 1.0, d: 8 }, AblationPoint { t: 1.0, d: 8 }];
    let rows = ablate_decay(&task, &grid, &cfg, &tc, &[0, 1]).unwrap();
    assert_eq!(rows.len(), 6);
    assert_eq!(rows[1].accuracy, rows[2].accuracy);
    assert_eq!(rows[1].accuracy, one[0].accuracy);

    cfg.kernel.mode = KernelMode::Concat;
    assert!(ablate_decay(&task, &grid, &cfg, &tc, &[0]).is_err());
}

#[test]
fn optimizer_moves_against_gradient() {
    for kind in [OptimizerKind::default(), OptimizerKind::Sgd { momentum: 0.9 }] {
        let mut opt = Optimizer::new(kind, 0.1).unwrap();
        let mut p = vec![1.0, -1.0];
        for _ in 0..3 {
            let g = p.clone();
            opt.step(vec![&mut p[..]], vec![&g[..]]);
        }
        assert!(p[0] < 1.0 && p[1] > -1.0);
    }
}

#[test]
fn labels_shuffle_keeps_chance_loss() {
    // labels unrelated to the input: an untrained model is still at chance
    let task = TaskSpec::new(TaskKind::FirstTokenRecall, 32);
    let model = Model::new(model_config(&task, 4, 1, 4)).unwrap();
    let mut batch = gen_batch(&task, 400, &mut rng(1)).unwrap();
    if let Labels::Classes(c) = &mut batch.labels {
        c.shuffle(&mut rng(2));
    }
    let loss = model.loss(&batch).unwrap();
    assert!((loss - 4f64.ln()).abs() < 0.1 * 4f64.ln());
    assert_eq!(model.config.input, InputSpec::Tokens { vocab: 8 });
    assert_eq!(model.config.objective, Objective::CrossEntropy);
}
