//! Fixed-seed invariant suites behind `sgconv verify`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sgconv::fftconv::depthwise_conv;
use sgconv::grad::{depthwise_conv_adjoint, fd_check_flat};
use sgconv::kernelgen::{init_kernel, init_params_seeded, position_decay, raw_kernel};
use sgconv::model::{
    block_forward, checkpoint_bytes, read_checkpoint, train, Activation, BlockConfig, BlockParams, Model, ModelConfig,
    Optimizer, OptimizerKind, Readout, TrainConfig,
};
use sgconv::tasks::{derive_label, gen_indexed_batch, Label, Labels, TaskKind, TaskSpec};
use sgconv::{
    build_kernel, causal_conv_direct, causal_conv_fft, conv_adjoint, kernel_param_grad, num_scales, sub_kernel_len,
    upsample_adjoint, upsample_linear, ConvPlan, InitScheme, KernelConfig, KernelMode, ScaleParams, Tensor3,
};

/// Deliberate defects for checking that the suites notice them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Fault {
    /// Off-by-one in the kernel gradient of the convolution adjoint.
    ConvAdjoint,
}

type Check = fn(&Ctx) -> Result<(), String>;

pub struct Suite {
    pub name: &'static str,
    checks: &'static [(&'static str, Check)],
}

pub struct Ctx {
    fault: Option<Fault>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: usize,
    pub failures: Vec<String>,
}

impl SuiteResult {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn report_line(&self) -> String {
        let total = self.passed + self.failures.len();
        if self.ok() {
            format!("PASS {:<10} {}/{} checks", self.name, self.passed, total)
        } else {
            let mut s = format!("FAIL {:<10} {}/{} checks", self.name, self.passed, total);
            for f in &self.failures {
                s.push_str("\n     - ");
                s.push_str(f);
            }
            s
        }
    }
}

pub const SUITES: &[Suite] = &[
    Suite {
        name: "kernelgen",
        checks: &[
            ("scale arithmetic", kernelgen_arithmetic),
            ("upsampling", kernelgen_upsample),
            ("loop oracle", kernelgen_oracle),
            ("unit norm at init", kernelgen_norm),
            ("decay structure", kernelgen_decay),
        ],
    },
    Suite {
        name: "fftconv",
        checks: &[
            ("direct examples", fft_examples),
            ("fft vs direct", fft_agreement),
            ("linearity and causality", fft_linear_causal),
            ("plan reuse", fft_plan_reuse),
        ],
    },
    Suite {
        name: "grad",
        checks: &[
            ("conv adjoint identities", grad_conv_identities),
            ("upsample adjoint", grad_upsample),
            ("kernel gradient vs fd", grad_kernel_fd),
            ("end-to-end vs fd", grad_end_to_end),
        ],
    },
    Suite {
        name: "model",
        checks: &[
            ("zero-mix identity", model_identity),
            ("classifier gradient vs fd", model_fd),
            ("batch independence", model_batch_independence),
            ("small step descends", model_descent),
        ],
    },
    Suite {
        name: "tasks",
        checks: &[
            ("labels re-derive", tasks_labels),
            ("class balance", tasks_balance),
            ("determinism", tasks_determinism),
        ],
    },
    Suite {
        name: "checkpoint",
        checks: &[("round trip", checkpoint_round_trip), ("corruption rejected", checkpoint_corrupt)],
    },
    Suite {
        name: "train",
        checks: &[("zero lr is flat", train_flat), ("reproducible", train_reproducible)],
    },
];

pub fn suite_names() -> Vec<&'static str> {
    SUITES.iter().map(|s| s.name).collect()
}

/// Runs the suites whose names are in `filter` (all when empty).
pub fn run_suites(filter: &[String], fault: Option<Fault>) -> Result<Vec<SuiteResult>, String> {
    if let Some(bad) = filter.iter().find(|f| !SUITES.iter().any(|s| s.name == f.as_str())) {
        return Err(format!("unknown suite {bad:?}; available: {}", suite_names().join(", ")));
    }
    let ctx = Ctx { fault };
    Ok(SUITES
        .iter()
        .filter(|s| filter.is_empty() || filter.iter().any(|f| f == s.name))
        .map(|s| {
            let mut res = SuiteResult {
                name: s.name,
                passed: 0,
                failures: Vec::new(),
            };
            for (label, check) in s.checks {
                let outcome = std::panic::catch_unwind(|| check(&ctx))
                    .unwrap_or_else(|_| Err("panicked".to_string()));
                match outcome {
                    Ok(()) => res.passed += 1,
                    Err(e) => res.failures.push(format!("{label}: {e}")),
                }
            }
            res
        })
        .collect())
}

// helpers

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rand_vec(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(what: &str, err: f64, tol: f64) -> Result<(), String> {
    ensure(err <= tol, || format!("{what}: error {err:.3e} exceeds {tol:.0e}"))
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

/// `|⟨a,b⟩ − ⟨c,d⟩| / Σ|aᵢbᵢ|`.
fn inner_gap(a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> f64 {
    let scale: f64 = a.iter().zip(b).map(|(x, y)| (x * y).abs()).sum();
    (dot(a, b) - dot(c, d)).abs() / scale
}

fn upsample_oracle(w: &[f64], len: usize) -> Vec<f64> {
    let d = w.len();
    if d == 1 {
        return vec![w[0]; len];
    }
    (0..len)
        .map(|j| {
            let x = j as f64 * (d - 1) as f64 / (len - 1) as f64;
            let lo = (x.floor() as usize).min(d - 2);
            let f = x - lo as f64;
            w[lo] * (1.0 - f) + w[lo + 1] * f
        })
        .collect()
}

fn kernel_oracle(p: &ScaleParams, cfg: &KernelConfig, h: usize) -> Vec<f64> {
    let mut out = Vec::new();
    let mut i = 0;
    while out.len() < cfg.seq_len {
        let len = if i == 0 { cfg.scale_dim } else { cfg.scale_dim << (i - 1) };
        let a = match cfg.mode {
            KernelMode::Concat => p.channel_alpha[h].powi(i as i32),
            KernelMode::Disentangled => 1.0,
        };
        out.extend(upsample_oracle(p.scale(h, i), len).into_iter().map(|v| a * v));
        i += 1;
    }
    out.truncate(cfg.seq_len);
    if cfg.mode == KernelMode::Disentangled {
        out.iter_mut().enumerate().for_each(|(n, v)| *v *= ((n + 1) as f64).powf(-cfg.decay_t));
    }
    let z = out.iter().map(|v| v * v).sum::<f64>().sqrt();
    out.iter().map(|v| v / z).collect()
}

fn random_params(cfg: &KernelConfig, seed: u64) -> ScaleParams {
    let mut p = ScaleParams::zeros(cfg).expect("valid config");
    let mut r = rng(seed);
    p.weights.iter_mut().for_each(|w| *w = r.random_range(-1.0..1.0));
    p
}

fn conv_adjoint_checked(
    ctx: &Ctx,
    x: &[f64],
    k: &[f64],
    dy: &[f64],
    plan: &ConvPlan<f64>,
) -> Result<(Vec<f64>, Vec<f64>), String> {
    let (dx, mut dk) = conv_adjoint(x, k, dy, plan).map_err(e)?;
    if ctx.fault == Some(Fault::ConvAdjoint) && dk.len() > 1 {
        dk[0] += dk[1];
    }
    Ok((dx, dk))
}

fn depthwise_adjoint_checked(
    ctx: &Ctx,
    x: &Tensor3<f64>,
    k: &[f64],
    dy: &Tensor3<f64>,
    plan: &ConvPlan<f64>,
) -> Result<(Tensor3<f64>, Vec<f64>), String> {
    let (dx, mut dk) = depthwise_conv_adjoint(x, k, dy, plan).map_err(e)?;
    if ctx.fault == Some(Fault::ConvAdjoint) {
        let l = x.len();
        for row in dk.chunks_exact_mut(l).filter(|_| l > 1) {
            row[0] += row[1];
        }
    }
    Ok((dx, dk))
}

// kernelgen

fn kernelgen_arithmetic(_: &Ctx) -> Result<(), String> {
    for (l, d, n) in [(16, 2, 4), (1024, 8, 8), (8, 8, 1), (16384, 64, 9), (100, 8, 5)] {
        let got = num_scales(l, d).map_err(e)?;
        ensure(got == n, || format!("num_scales({l}, {d}) = {got}, expected {n}"))?;
    }
    ensure(num_scales(4, 8).is_err() && num_scales(4, 0).is_err(), || "invalid (L, d) accepted".into())?;
    for (i, d, want) in [(0, 4, 4), (1, 4, 4), (3, 4, 16)] {
        ensure(sub_kernel_len(i, d) == want, || format!("sub_kernel_len({i}, {d}) != {want}"))?;
    }
    for d in [1, 3, 8, 64] {
        for e in 0..=10 {
            let l = d << e;
            let total: usize = (0..num_scales(l, d).map_err(self::e)?).map(|i| sub_kernel_len(i, d)).sum();
            ensure(total == l, || format!("scales of (L={l}, d={d}) cover {total}"))?;
        }
    }
    Ok(())
}

fn kernelgen_upsample(_: &Ctx) -> Result<(), String> {
    let got = upsample_linear(&[0.0, 1.0], 4).map_err(e)?;
    within("[0,1] -> 4", max_diff(&got, &[0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]), 1e-15)?;
    ensure(upsample_linear(&[5.0, 7.0, 9.0], 3).map_err(e)? == [5.0, 7.0, 9.0], || "identity".into())?;
    ensure(upsample_linear(&[3.0], 4).map_err(e)? == [3.0; 4], || "constant".into())?;
    ensure(upsample_linear(&[1.0, 2.0], 1).is_err(), || "shrinking accepted".into())?;
    let mut r = rng(1);
    for d in 1..=16 {
        for len in (d..=64).step_by(3) {
            let w = rand_vec(&mut r, d);
            within("upsample oracle", max_diff(&upsample_linear(&w, len).map_err(e)?, &upsample_oracle(&w, len)), 1e-14)?;
        }
    }
    Ok(())
}

fn kernelgen_oracle(_: &Ctx) -> Result<(), String> {
    let cases = [
        KernelConfig::new(1024, 8, 2),
        KernelConfig {
            mode: KernelMode::Disentangled,
            decay_t: 2.0,
            ..KernelConfig::new(256, 8, 2)
        },
        KernelConfig {
            init: InitScheme::Cosine,
            ..KernelConfig::new(300, 7, 3)
        },
    ];
    for (i, cfg) in cases.iter().enumerate() {
        let p = if cfg.init == InitScheme::Cosine { init_params_seeded(cfg).map_err(e)? } else { random_params(cfg, i as u64) };
        let k = build_kernel(&p, cfg, None).map_err(e)?;
        for h in 0..cfg.channels {
            within("kernel vs loop oracle", max_diff(k.channel(h), &kernel_oracle(&p, cfg, h)), 1e-12)?;
        }
    }
    let c = KernelConfig {
        decay_alpha: 1.0,
        ..KernelConfig::new(512, 8, 2)
    };
    let dis = KernelConfig {
        mode: KernelMode::Disentangled,
        decay_t: 0.0,
        ..c.clone()
    };
    let p = random_params(&c, 9);
    ensure(build_kernel(&p, &c, None).map_err(e)?.values == build_kernel(&p, &dis, None).map_err(e)?.values, || {
        "alpha=1 concat differs from t=0 disentangled".into()
    })
}

fn kernelgen_norm(_: &Ctx) -> Result<(), String> {
    let mut r = rng(2);
    for i in 0..200u64 {
        let l = r.random_range(1..=2048);
        let d = r.random_range(1..=l.min(64));
        let cfg = KernelConfig {
            mode: if i % 2 == 0 { KernelMode::Concat } else { KernelMode::Disentangled },
            init: if i % 4 < 2 { InitScheme::Gaussian { sigma: 1.0 } } else { InitScheme::Cosine },
            decay_alpha: r.random_range(0.1..=1.0),
            decay_t: r.random_range(0.0..3.0),
            seed: i,
            ..KernelConfig::new(l, d, 2)
        };
        let (_, k) = init_kernel(&cfg).map_err(e)?;
        for h in 0..cfg.channels {
            within("channel norm - 1", (k.channel_norm(h) - 1.0).abs(), 1e-6)?;
        }
    }
    Ok(())
}

fn kernelgen_decay(_: &Ctx) -> Result<(), String> {
    let cfg = KernelConfig::new(1000, 7, 3);
    let p = random_params(&cfg, 3);
    let raw = raw_kernel(&p, &cfg).map_err(e)?;
    for h in 0..cfg.channels {
        let mut start = 0;
        for i in 0..p.num_scales {
            let end = (start + sub_kernel_len(i, 7)).min(cfg.seq_len);
            let bound = p.channel_alpha[h].powi(i as i32) * max_abs(p.scale(h, i));
            ensure(max_abs(&raw[h * 1000 + start..h * 1000 + end]) <= bound * (1.0 + 1e-15), || {
                format!("scale {i} of channel {h} exceeds alpha^i max|w|")
            })?;
            start = end;
        }
    }
    let decay = position_decay(500, 1.5);
    ensure(decay.windows(2).all(|w| w[1] <= w[0]), || "position decay increases".into())?;
    within("decay(t=1, L=4)", max_diff(&position_decay(4, 1.0), &[1.0, 0.5, 1.0 / 3.0, 0.25]), 1e-16)
}

// fftconv

fn fft_examples(_: &Ctx) -> Result<(), String> {
    ensure(causal_conv_direct(&[1.0, 2.0, 3.0], &[1.0, 0.0, 0.0]).map_err(e)? == [1.0, 2.0, 3.0], || "identity kernel".into())?;
    ensure(causal_conv_direct(&[0.0, 0.0, 1.0], &[2.0, 3.0, 4.0]).map_err(e)? == [0.0, 0.0, 2.0], || "late impulse".into())?;
    ensure(causal_conv_direct(&[1.0, 1.0], &[1.0, 1.0]).map_err(e)? == [1.0, 2.0], || "[1,1]*[1,1]".into())?;
    let plan = ConvPlan::new(4).map_err(e)?;
    let k = [0.5, -1.0, 2.0, 3.0];
    within("impulse", max_diff(&causal_conv_fft(&[1.0, 0.0, 0.0, 0.0], &k, &plan).map_err(e)?, &k), 1e-14)?;
    ensure(causal_conv_fft(&[0.0; 3], &[0.0; 3], &plan).is_err(), || "length mismatch accepted".into())
}

fn fft_agreement(_: &Ctx) -> Result<(), String> {
    let mut r = rng(3);
    for l in [16, 64, 256, 1024] {
        let plan = ConvPlan::new(l).map_err(e)?;
        for _ in 0..50 {
            let (x, k) = (rand_vec(&mut r, l), rand_vec(&mut r, l));
            let want = causal_conv_direct(&x, &k).map_err(e)?;
            let got = causal_conv_fft(&x, &k, &plan).map_err(e)?;
            within(&format!("relative error at L={l}"), max_diff(&got, &want) / max_abs(&want), 1e-10)?;
        }
    }
    Ok(())
}

fn fft_linear_causal(_: &Ctx) -> Result<(), String> {
    let l = 200;
    let plan = ConvPlan::new(l).map_err(e)?;
    let mut r = rng(4);
    let (x1, x2, k) = (rand_vec(&mut r, l), rand_vec(&mut r, l), rand_vec(&mut r, l));
    let mix: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| 2.0 * a - 0.5 * b).collect();
    let y1 = causal_conv_fft(&x1, &k, &plan).map_err(e)?;
    let y2 = causal_conv_fft(&x2, &k, &plan).map_err(e)?;
    let want: Vec<f64> = y1.iter().zip(&y2).map(|(a, b)| 2.0 * a - 0.5 * b).collect();
    let got = causal_conv_fft(&mix, &k, &plan).map_err(e)?;
    within("linearity", max_diff(&got, &want) / max_abs(&want), 1e-12)?;
    for n in [0, 57, 150] {
        let mut cut = x1.clone();
        cut[n + 1..].iter_mut().for_each(|v| *v = 1e3);
        let y = causal_conv_fft(&cut, &k, &plan).map_err(e)?;
        within(&format!("causality at n={n}"), max_diff(&y[..=n], &y1[..=n]), 1e-8)?;
    }
    Ok(())
}

fn fft_plan_reuse(_: &Ctx) -> Result<(), String> {
    let l = 300;
    let shared = ConvPlan::new(l).map_err(e)?;
    let mut r = rng(5);
    for _ in 0..100 {
        let (x, k) = (rand_vec(&mut r, l), rand_vec(&mut r, l));
        let a = causal_conv_fft(&x, &k, &shared).map_err(e)?;
        let b = causal_conv_fft(&x, &k, &ConvPlan::new(l).map_err(e)?).map_err(e)?;
        ensure(a == b, || "shared plan differs from fresh plan".into())?;
    }
    Ok(())
}

// grad

fn grad_conv_identities(ctx: &Ctx) -> Result<(), String> {
    let mut r = rng(6);
    for l in [2, 7, 64, 256, 1000] {
        let plan = ConvPlan::new(l).map_err(e)?;
        for _ in 0..5 {
            let [x, k, dy, u, v] = [0; 5].map(|_| rand_vec(&mut r, l));
            let (dx, dk) = conv_adjoint_checked(ctx, &x, &k, &dy, &plan)?;
            let cu = causal_conv_fft(&u, &k, &plan).map_err(e)?;
            within(&format!("<conv(u,k),dy> vs <u,dx> at L={l}"), inner_gap(&cu, &dy, &u, &dx), 1e-10)?;
            let cv = causal_conv_fft(&x, &v, &plan).map_err(e)?;
            within(&format!("<conv(x,v),dy> vs <v,dk> at L={l}"), inner_gap(&cv, &dy, &v, &dk), 1e-10)?;
        }
    }
    let plan = ConvPlan::new(2).map_err(e)?;
    let (_, dk) = conv_adjoint_checked(ctx, &[1.0, 2.0], &[0.0, 0.0], &[0.0, 1.0], &plan)?;
    within("dk example", max_diff(&dk, &[2.0, 1.0]), 1e-14)
}

fn grad_upsample(_: &Ctx) -> Result<(), String> {
    let mut r = rng(7);
    for d in 1..=16 {
        for len in d..=64 {
            let g = rand_vec(&mut r, len);
            let want: Vec<f64> = (0..d)
                .map(|c| {
                    let mut unit = vec![0.0; d];
                    unit[c] = 1.0;
                    dot(&upsample_oracle(&unit, len), &g)
                })
                .collect();
            within(&format!("Uᵀg at d={d} l={len}"), max_diff(&upsample_adjoint(&g, d).map_err(e)?, &want), 1e-13)?;
        }
    }
    Ok(())
}

fn grad_kernel_fd(_: &Ctx) -> Result<(), String> {
    for mode in [KernelMode::Concat, KernelMode::Disentangled] {
        let cfg = KernelConfig {
            mode,
            seed: 4,
            ..KernelConfig::new(256, 8, 2)
        };
        let p = init_params_seeded(&cfg).map_err(e)?;
        let z = build_kernel(&p, &cfg, None).map_err(e)?.normalizer;
        let target = rand_vec(&mut rng(8), 512);
        let loss = |w: &[f64]| {
            let mut q = p.clone();
            q.weights.copy_from_slice(w);
            let k = build_kernel(&q, &cfg, Some(&z)).expect("valid params");
            0.5 * k.values.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
        };
        let k = build_kernel(&p, &cfg, Some(&z)).map_err(e)?;
        let dk: Vec<f64> = k.values.iter().zip(&target).map(|(a, b)| a - b).collect();
        let g = kernel_param_grad(&dk, &p, &cfg, &z).map_err(e)?;
        let report = fd_check_flat(loss, &p.weights, &g.d_weights, 1e-5).map_err(e)?;
        within(&format!("{mode:?} kernel gradient"), report.max_rel_error, 1e-5)?;
    }
    Ok(())
}

fn grad_end_to_end(ctx: &Ctx) -> Result<(), String> {
    for mode in [KernelMode::Concat, KernelMode::Disentangled] {
        let (b, h, l) = (2, 2, 128);
        let cfg = KernelConfig {
            mode,
            seed: 5,
            ..KernelConfig::new(l, 8, h)
        };
        let p = init_params_seeded(&cfg).map_err(e)?;
        let z = build_kernel(&p, &cfg, None).map_err(e)?.normalizer;
        let mut r = rng(9);
        let x = Tensor3::from_vec([b, h, l], rand_vec(&mut r, b * h * l)).map_err(e)?;
        let (readout, target) = (rand_vec(&mut r, h), rand_vec(&mut r, b));
        let plan = ConvPlan::new(l).map_err(e)?;
        let outputs = |w: &[f64]| -> (Tensor3<f64>, Vec<f64>) {
            let mut q = p.clone();
            q.weights.copy_from_slice(w);
            let k = build_kernel(&q, &cfg, Some(&z)).expect("valid params");
            let y = depthwise_conv(&x, &k.values, &plan).expect("shapes match");
            let out = (0..b)
                .map(|bi| (0..h).map(|c| readout[c] * y.row(bi, c).iter().sum::<f64>() / l as f64).sum())
                .collect();
            (y, out)
        };
        let loss = |w: &[f64]| outputs(w).1.iter().zip(&target).map(|(o, t)| (o - t).powi(2)).sum::<f64>();
        let (_, out) = outputs(&p.weights);
        let dy = Tensor3::from_fn([b, h, l], |bi, c, _| 2.0 * (out[bi] - target[bi]) * readout[c] / l as f64);
        let k = build_kernel(&p, &cfg, Some(&z)).map_err(e)?;
        let (_, dk) = depthwise_adjoint_checked(ctx, &x, &k.values, &dy, &plan)?;
        let g = kernel_param_grad(&dk, &p, &cfg, &z).map_err(e)?;
        let report = fd_check_flat(loss, &p.weights, &g.d_weights, 1e-5).map_err(e)?;
        within(&format!("{mode:?} conv+pool+readout gradient"), report.max_rel_error, 1e-5)?;
    }
    Ok(())
}

// model

fn tiny_model(task: &TaskSpec, seed: u64) -> Result<Model, String> {
    Model::new(ModelConfig {
        input: task.input_spec(),
        channels: 4,
        seq_len: task.seq_len,
        depth: 2,
        kernel: KernelConfig::new(task.seq_len, 4, 4),
        activation: Activation::Gelu,
        readout: Readout::Mean,
        outputs: task.output_dim(),
        objective: task.objective(),
        seed,
    })
    .map_err(e)
}

fn model_identity(_: &Ctx) -> Result<(), String> {
    let (h, l) = (4, 32);
    let cfg = BlockConfig {
        channels: h,
        seq_len: l,
        kernel: KernelConfig::new(l, 4, h),
        mix_dim: h,
        activation: Activation::Gelu,
    };
    let mut p = BlockParams::init(&cfg, &mut rng(10)).map_err(e)?;
    p.mix_weight.fill(0.0);
    p.mix_bias.fill(0.0);
    let plan = ConvPlan::new(l).map_err(e)?;
    let x = Tensor3::from_vec([2, h, l], rand_vec(&mut rng(11), 2 * h * l)).map_err(e)?;
    let mut y = x.clone();
    for _ in 0..8 {
        y = block_forward(&y, &p, &cfg, &plan).map_err(e)?;
    }
    ensure(y == x, || "zero-mix stack changed its input".into())
}

fn model_fd(_: &Ctx) -> Result<(), String> {
    let task = TaskSpec::new(TaskKind::FirstTokenRecall, 32);
    let mut model = tiny_model(&task, 1)?;
    let mut r = rng(12);
    model.state.head_weight.iter_mut().for_each(|w| *w = r.random_range(-1.0..1.0));
    let batch = gen_indexed_batch(&task, 4, 0).map_err(e)?;
    let (_, grads) = model.loss_and_grad(&batch).map_err(e)?;
    let mut probe = model.clone();
    let report = fd_check_flat(
        |w| {
            probe.state.set_flat_params(w).expect("same length");
            probe.loss(&batch).expect("valid batch")
        },
        &model.state.flat_params(),
        &grads.flatten(),
        1e-5,
    )
    .map_err(e)?;
    within("classifier gradient", report.max_rel_error, 1e-4)
}

fn model_batch_independence(_: &Ctx) -> Result<(), String> {
    let task = TaskSpec::new(TaskKind::SparseMajority, 64);
    let model = tiny_model(&task, 2)?;
    let batch = gen_indexed_batch(&task, 8, 0).map_err(e)?;
    let all = model.logits(&batch.inputs).map_err(e)?;
    for b in 0..8 {
        let one = model.logits(&batch.inputs.slice(b, b + 1)).map_err(e)?;
        within("B=1 vs B=8 logits", max_diff(&one, &all[2 * b..2 * b + 2]), 1e-12)?;
    }
    Ok(())
}

fn model_descent(_: &Ctx) -> Result<(), String> {
    let task = TaskSpec::new(TaskKind::FirstTokenRecall, 32);
    for seed in 0..5 {
        let mut model = tiny_model(&task, seed)?;
        let batch = gen_indexed_batch(&TaskSpec { seed, ..task.clone() }, 8, 0).map_err(e)?;
        let (before, g) = model.loss_and_grad(&batch).map_err(e)?;
        let mut opt = Optimizer::new(OptimizerKind::Sgd { momentum: 0.0 }, 1e-4).map_err(e)?;
        opt.step(model.state.trainable_mut(), g.tensors());
        let after = model.loss(&batch).map_err(e)?;
        ensure(after < before, || format!("seed {seed}: loss {before} -> {after}"))?;
    }
    Ok(())
}

// tasks

fn tasks_labels(_: &Ctx) -> Result<(), String> {
    for kind in [TaskKind::FirstTokenRecall, TaskKind::AddingProblem, TaskKind::SparseMajority] {
        let spec = TaskSpec::new(kind, 64);
        let batch = gen_indexed_batch(&spec, 64, 1).map_err(e)?;
        for b in 0..64 {
            let ok = match (derive_label(&spec, &batch.inputs, b), &batch.labels) {
                (Some(Label::Class(c)), Labels::Classes(v)) => v[b] == c,
                (Some(Label::Value(x)), Labels::Values(v)) => v[b] == x,
                _ => false,
            };
            ensure(ok, || format!("{kind:?} sample {b} label does not re-derive"))?;
        }
    }
    Ok(())
}

fn tasks_balance(_: &Ctx) -> Result<(), String> {
    let spec = TaskSpec::new(TaskKind::FirstTokenRecall, 4);
    let n = 10_000;
    let Labels::Classes(labels) = gen_indexed_batch(&spec, n, 0).map_err(e)?.labels else {
        return Err("recall labels are not classes".into());
    };
    let p = 1.0 / spec.classes as f64;
    let sigma = (n as f64 * p * (1.0 - p)).sqrt();
    for c in 0..spec.classes {
        let count = labels.iter().filter(|&&l| l == c).count() as f64;
        ensure((count - n as f64 * p).abs() <= 5.0 * sigma, || format!("class {c} count {count}"))?;
    }
    Ok(())
}

fn tasks_determinism(_: &Ctx) -> Result<(), String> {
    let spec = TaskSpec::new(TaskKind::AddingProblem, 50);
    ensure(gen_indexed_batch(&spec, 4, 2).map_err(e)? == gen_indexed_batch(&spec, 4, 2).map_err(e)?, || {
        "same seed gave different batches".into()
    })
}

// checkpoint

fn checkpoint_round_trip(_: &Ctx) -> Result<(), String> {
    let task = TaskSpec::new(TaskKind::FirstTokenRecall, 32);
    let model = tiny_model(&task, 3)?;
    let bytes = checkpoint_bytes(&model);
    let back = read_checkpoint(&bytes[..]).map_err(e)?;
    let batch = gen_indexed_batch(&task, 4, 0).map_err(e)?;
    ensure(back.state == model.state, || "state changed".into())?;
    ensure(back.logits(&batch.inputs).map_err(e)? == model.logits(&batch.inputs).map_err(e)?, || {
        "logits changed".into()
    })?;
    ensure(checkpoint_bytes(&back) == bytes, || "re-serialization differs".into())
}

fn checkpoint_corrupt(_: &Ctx) -> Result<(), String> {
    let task = TaskSpec::new(TaskKind::FirstTokenRecall, 16);
    let bytes = checkpoint_bytes(&tiny_model(&task, 4)?);
    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    ensure(read_checkpoint(&bad_magic[..]).is_err(), || "bad magic accepted".into())?;
    ensure(read_checkpoint(&bytes[..bytes.len() - 1]).is_err(), || "truncated file accepted".into())?;
    let mut long = bytes.clone();
    long.push(0);
    ensure(read_checkpoint(&long[..]).is_err(), || "trailing bytes accepted".into())
}

// train

fn tiny_train(steps: usize, lr: f64) -> TrainConfig {
    TrainConfig {
        steps,
        batch_size: 4,
        learning_rate: lr,
        eval_every: 2,
        eval_size: 8,
        ..TrainConfig::default()
    }
}

fn train_flat(_: &Ctx) -> Result<(), String> {
    let task = TaskSpec::new(TaskKind::FirstTokenRecall, 16);
    let cfg = tiny_model(&task, 5)?.config;
    let out = train(&task, &cfg, &tiny_train(6, 0.0)).map_err(e)?;
    ensure(out.log.iter().all(|r| r.loss == out.log[0].loss), || "loss moved with lr = 0".into())
}

fn train_reproducible(_: &Ctx) -> Result<(), String> {
    let task = TaskSpec::new(TaskKind::AddingProblem, 16);
    let cfg = tiny_model(&task, 6)?.config;
    let a = train(&task, &cfg, &tiny_train(6, 1e-2)).map_err(e)?;
    let b = train(&task, &cfg, &tiny_train(6, 1e-2)).map_err(e)?;
    ensure(a.log == b.log && a.model.state == b.model.state, || "two runs differ".into())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn at_least_six_suites() {
        assert!(SUITES.len() >= 6);
    }

    #[test]
    fn unknown_filter_is_rejected() {
        assert!(run_suites(&["nope".into()], None).is_err());
    }

    #[test]
    fn fault_is_detected_by_grad_suite() {
        let clean = run_suites(&["grad".into()], None).unwrap();
        assert!(clean[0].ok(), "{}", clean[0].report_line());
        let faulty = run_suites(&["grad".into()], Some(Fault::ConvAdjoint)).unwrap();
        assert!(!faulty[0].ok());
    }
}
