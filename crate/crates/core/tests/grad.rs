mod common;

use common::*;
use rand::Rng;
use sgconv::fftconv::depthwise_conv;
use sgconv::grad::{depthwise_conv_adjoint, fd_check_flat};
use sgconv::{
    build_kernel, causal_conv_fft, conv_adjoint, finite_diff_check, kernel_param_grad, upsample_adjoint,
    upsample_linear, ConvPlan, InitScheme, KernelConfig, KernelMode, ScaleParams, Tensor3,
};

/// `|⟨a,b⟩ − ⟨c,d⟩|` relative to `Σ|aᵢbᵢ|`, the natural scale of the sum.
fn inner_product_gap(lhs: (&[f64], &[f64]), rhs: (&[f64], &[f64])) -> f64 {
    let scale: f64 = lhs.0.iter().zip(lhs.1).map(|(a, b)| (a * b).abs()).sum();
    (dot(lhs.0, lhs.1) - dot(rhs.0, rhs.1)).abs() / scale
}

#[test]
fn conv_adjoint_examples() {
    let plan = ConvPlan::new(2).unwrap();
    let (_, dk) = conv_adjoint(&[1.0, 2.0], &[0.0, 0.0], &[0.0, 1.0], &plan).unwrap();
    assert!(max_abs_diff(&dk, &[2.0, 1.0]) < 1e-14);
    let plan = ConvPlan::new(9).unwrap();
    let (dx, dk) = conv_adjoint(&[1.0; 9], &[1.0; 9], &[0.0; 9], &plan).unwrap();
    assert!(max_abs(&dx) == 0.0 && max_abs(&dk) == 0.0);
}

#[test]
fn conv_adjoint_matches_definition() {
    let l = 97;
    let plan = ConvPlan::new(l).unwrap();
    let mut r = rng(1);
    let (x, k, dy) = (random_vec(&mut r, l), random_vec(&mut r, l), random_vec(&mut r, l));
    let (dx, dk) = conv_adjoint(&x, &k, &dy, &plan).unwrap();
    let dx_ref: Vec<f64> = (0..l).map(|n| (0..l - n).map(|m| k[m] * dy[n + m]).sum()).collect();
    let dk_ref: Vec<f64> = (0..l).map(|m| (m..l).map(|n| dy[n] * x[n - m]).sum()).collect();
    assert!(max_abs_diff(&dx, &dx_ref) <= 1e-12 * max_abs(&dx_ref));
    assert!(max_abs_diff(&dk, &dk_ref) <= 1e-12 * max_abs(&dk_ref));
}

#[test]
fn conv_adjoint_inner_product_identities() {
    for l in [1, 2, 7, 64, 256, 1000, 4096] {
        let plan = ConvPlan::new(l).unwrap();
        let mut r = rng(l as u64);
        for _ in 0..10 {
            let (x, k, dy, u, v) = (
                random_vec(&mut r, l),
                random_vec(&mut r, l),
                random_vec(&mut r, l),
                random_vec(&mut r, l),
                random_vec(&mut r, l),
            );
            let (dx, dk) = conv_adjoint(&x, &k, &dy, &plan).unwrap();
            let conv_u = causal_conv_fft(&u, &k, &plan).unwrap();
            assert!(inner_product_gap((&conv_u, &dy), (&u, &dx)) <= 1e-10, "dx at L={l}");
            let conv_v = causal_conv_fft(&x, &v, &plan).unwrap();
            assert!(inner_product_gap((&conv_v, &dy), (&v, &dk)) <= 1e-10, "dk at L={l}");
        }
    }
}

#[test]
fn conv_adjoint_matches_finite_differences() {
    let l = 256;
    let plan = ConvPlan::new(l).unwrap();
    let mut r = rng(2);
    let (x, k, dy) = (random_vec(&mut r, l), random_vec(&mut r, l), random_vec(&mut r, l));
    let (dx, dk) = conv_adjoint(&x, &k, &dy, &plan).unwrap();
    let rx = fd_check_flat(|p| dot(&causal_conv_ref(p, &k), &dy), &x, &dx, 1e-5).unwrap();
    assert!(rx.max_rel_error <= 1e-6, "{rx:?}");
    let rk = fd_check_flat(|p| dot(&causal_conv_ref(&x, p), &dy), &k, &dk, 1e-5).unwrap();
    assert!(rk.max_rel_error <= 1e-6, "{rk:?}");
}

#[test]
fn depthwise_adjoint_inner_products() {
    let (b, h, l) = (3, 4, 300);
    let plan = ConvPlan::new(l).unwrap();
    let mut r = rng(3);
    let x = Tensor3::from_vec([b, h, l], random_vec(&mut r, b * h * l)).unwrap();
    let u = Tensor3::from_vec([b, h, l], random_vec(&mut r, b * h * l)).unwrap();
    let dy = Tensor3::from_vec([b, h, l], random_vec(&mut r, b * h * l)).unwrap();
    let k = random_vec(&mut r, h * l);
    let v = random_vec(&mut r, h * l);
    let (dx, dk) = depthwise_conv_adjoint(&x, &k, &dy, &plan).unwrap();
    let yu = depthwise_conv(&u, &k, &plan).unwrap();
    assert!(inner_product_gap((yu.data(), dy.data()), (u.data(), dx.data())) <= 1e-10);
    let yv = depthwise_conv(&x, &v, &plan).unwrap();
    assert!(inner_product_gap((yv.data(), dy.data()), (&v, &dk)) <= 1e-10);
}

#[test]
fn upsample_adjoint_is_dense_transpose() {
    let mut r = rng(4);
    for d in 1..=16 {
        for len in d..=64 {
            let g = random_vec(&mut r, len);
            let m = upsample_matrix(d, len);
            let want: Vec<f64> = (0..d).map(|c| (0..len).map(|j| m[j][c] * g[j]).sum()).collect();
            let got = upsample_adjoint(&g, d).unwrap();
            assert!(max_abs_diff(&got, &want) <= 1e-13, "d={d} len={len}");
        }
    }
}

#[test]
fn upsample_adjoint_examples() {
    let g = [1.0, -2.0, 0.5, 4.0];
    assert_eq!(upsample_adjoint(&g, 4).unwrap(), g.to_vec());
    assert!((upsample_adjoint(&g, 1).unwrap()[0] - 3.5).abs() < 1e-15);
    assert!(upsample_adjoint(&g, 5).is_err());
    let mut r = rng(5);
    let w = random_vec(&mut r, 8);
    let up = upsample_linear(&w, 32).unwrap();
    let g = random_vec(&mut r, 32);
    let back = upsample_adjoint(&g, 8).unwrap();
    assert!(inner_product_gap((&up, &g), (&w, &back)) <= 1e-14);
}

fn quadratic_fd(cfg: &KernelConfig, params: &ScaleParams) -> f64 {
    let z = build_kernel(params, cfg, None).unwrap().normalizer;
    let mut r = rng(99);
    let target = random_vec(&mut r, cfg.channels * cfg.seq_len);
    let loss = |p: &ScaleParams| {
        let k = build_kernel(p, cfg, Some(&z)).unwrap();
        0.5 * k.values.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
    };
    let k = build_kernel(params, cfg, Some(&z)).unwrap();
    let dk: Vec<f64> = k.values.iter().zip(&target).map(|(a, b)| a - b).collect();
    let grad = kernel_param_grad(&dk, params, cfg, &z).unwrap();
    finite_diff_check(loss, params, &grad, 1e-5).unwrap().max_rel_error
}

#[test]
fn kernel_param_grad_matches_finite_differences() {
    for mode in [KernelMode::Concat, KernelMode::Disentangled] {
        for init in [InitScheme::Gaussian { sigma: 1.0 }, InitScheme::Cosine] {
            let cfg = KernelConfig {
                mode,
                init,
                decay_t: 1.0,
                seed: 3,
                ..KernelConfig::new(256, 8, 3)
            };
            let params = sgconv::kernelgen::init_params_seeded(&cfg).unwrap();
            let err = quadratic_fd(&cfg, &params);
            assert!(err <= 1e-5, "{mode:?} {init:?}: {err:e}");
        }
    }
}

#[test]
fn kernel_param_grad_with_truncation() {
    for mode in [KernelMode::Concat, KernelMode::Disentangled] {
        let cfg = KernelConfig {
            mode,
            decay_t: 0.7,
            decay_alpha: 0.6,
            ..KernelConfig::new(300, 7, 2)
        };
        let params = random_params(&cfg, 8);
        assert!(quadratic_fd(&cfg, &params) <= 1e-5);
    }
}

#[test]
fn kernel_param_grad_examples() {
    let cfg = KernelConfig::new(64, 8, 2);
    let params = random_params(&cfg, 1);
    let z = [2.0, 4.0];
    let zero = kernel_param_grad(&vec![0.0; 128], &params, &cfg, &z).unwrap();
    assert!(zero.d_weights.iter().all(|&v| v == 0.0));
    assert!(kernel_param_grad(&vec![0.0; 128], &params, &cfg, &z[..1]).is_err());
    assert!(kernel_param_grad(&vec![0.0; 127], &params, &cfg, &z).is_err());

    let single = KernelConfig::new(8, 8, 2);
    let params = random_params(&single, 2);
    let dk: Vec<f64> = (0..16).map(|i| i as f64 - 3.0).collect();
    let g = kernel_param_grad(&dk, &params, &single, &z).unwrap();
    let want: Vec<f64> = dk.iter().enumerate().map(|(i, v)| v / z[i / 8]).collect();
    assert!(max_abs_diff(&g.d_weights, &want) < 1e-15);
}

#[test]
fn frozen_normalizer_is_not_differentiated() {
    // With Z frozen the kernel is linear in the weights, so doubling the
    // weights doubles the kernel and the gradient ignores Z's dependence.
    let cfg = KernelConfig::new(128, 4, 2);
    let params = random_params(&cfg, 6);
    let k = build_kernel(&params, &cfg, None).unwrap();
    let mut doubled = params.clone();
    doubled.weights.iter_mut().for_each(|w| *w *= 2.0);
    let k2 = build_kernel(&doubled, &cfg, Some(&k.normalizer)).unwrap();
    let twice: Vec<f64> = k.values.iter().map(|v| 2.0 * v).collect();
    assert!(max_abs_diff(&k2.values, &twice) <= 1e-15 * 2.0 * max_abs(&k.values) * 8.0);
    let dk = random_vec(&mut rng(7), 256);
    let g1 = kernel_param_grad(&dk, &params, &cfg, &k.normalizer).unwrap();
    let g2 = kernel_param_grad(&dk, &doubled, &cfg, &k.normalizer).unwrap();
    assert_eq!(g1.d_weights, g2.d_weights);
}

/// Loss through kernel build, depthwise convolution, mean pooling and a
/// linear readout, with a squared error against a fixed target.
struct Pipeline {
    cfg: KernelConfig,
    z: Vec<f64>,
    x: Tensor3<f64>,
    readout: Vec<f64>,
    target: Vec<f64>,
    plan: ConvPlan<f64>,
}

impl Pipeline {
    fn new(cfg: KernelConfig, batch: usize, seed: u64) -> (Self, ScaleParams) {
        let params = sgconv::kernelgen::init_params_seeded(&cfg).unwrap();
        let z = build_kernel(&params, &cfg, None).unwrap().normalizer;
        let mut r = rng(seed);
        let (h, l) = (cfg.channels, cfg.seq_len);
        let x = Tensor3::from_vec([batch, h, l], random_vec(&mut r, batch * h * l)).unwrap();
        let readout = random_vec(&mut r, h);
        let target = random_vec(&mut r, batch);
        let plan = ConvPlan::new(l).unwrap();
        (Self { cfg, z, x, readout, target, plan }, params)
    }

    fn outputs(&self, p: &ScaleParams) -> (Tensor3<f64>, Vec<f64>) {
        let k = build_kernel(p, &self.cfg, Some(&self.z)).unwrap();
        let y = depthwise_conv(&self.x, &k.values, &self.plan).unwrap();
        let [b, h, l] = y.shape();
        let out = (0..b)
            .map(|bi| (0..h).map(|c| self.readout[c] * y.row(bi, c).iter().sum::<f64>() / l as f64).sum())
            .collect();
        (y, out)
    }

    fn loss(&self, p: &ScaleParams) -> f64 {
        let (_, out) = self.outputs(p);
        out.iter().zip(&self.target).map(|(o, t)| (o - t) * (o - t)).sum::<f64>()
    }

    fn grad(&self, p: &ScaleParams) -> Vec<f64> {
        let (y, out) = self.outputs(p);
        let [b, h, l] = y.shape();
        let dy = Tensor3::from_fn([b, h, l], |bi, c, _| 2.0 * (out[bi] - self.target[bi]) * self.readout[c] / l as f64);
        let k = build_kernel(p, &self.cfg, Some(&self.z)).unwrap();
        let (_, dk) = depthwise_conv_adjoint(&self.x, &k.values, &dy, &self.plan).unwrap();
        kernel_param_grad(&dk, p, &self.cfg, &self.z).unwrap().d_weights
    }
}

#[test]
fn end_to_end_gradient_matches_finite_differences() {
    for (mode, l, d) in [
        (KernelMode::Concat, 512, 8),
        (KernelMode::Disentangled, 512, 8),
        (KernelMode::Concat, 200, 3),
        (KernelMode::Disentangled, 64, 64),
    ] {
        let cfg = KernelConfig {
            mode,
            seed: l as u64,
            ..KernelConfig::new(l, d, 3)
        };
        let (pipe, params) = Pipeline::new(cfg, 2, 10);
        let grad = pipe.grad(&params);
        let mut probe = params.clone();
        let report = fd_check_flat(
            |w| {
                probe.weights.copy_from_slice(w);
                pipe.loss(&probe)
            },
            &params.weights,
            &grad,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error <= 1e-5, "{mode:?} L={l} d={d}: {report:?}");
    }
}

#[test]
fn finite_diff_check_contract() {
    let cfg = KernelConfig::new(64, 4, 2);
    let params = random_params(&cfg, 3);
    let z = build_kernel(&params, &cfg, None).unwrap().normalizer;
    // linear loss: sum of kernel entries
    let linear = |p: &ScaleParams| build_kernel(p, &cfg, Some(&z)).unwrap().values.iter().sum::<f64>();
    let grad = kernel_param_grad(&vec![1.0; 128], &params, &cfg, &z).unwrap();
    let report = finite_diff_check(linear, &params, &grad, 1e-5).unwrap();
    assert!(report.max_rel_error <= 1e-9, "{report:?}");
    assert_eq!(report.checked, params.weights.len());

    let quad = |p: &ScaleParams| 0.5 * build_kernel(p, &cfg, Some(&z)).unwrap().values.iter().map(|v| v * v).sum::<f64>();
    let k = build_kernel(&params, &cfg, Some(&z)).unwrap();
    let grad = kernel_param_grad(&k.values, &params, &cfg, &z).unwrap();
    assert!(finite_diff_check(quad, &params, &grad, 1e-5).unwrap().max_rel_error <= 1e-6);
    assert!(finite_diff_check(quad, &params, &grad, 0.0).is_err());
}

#[test]
fn finite_diff_check_samples_large_vectors() {
    let n = 5000;
    let mut r = rng(11);
    let p = random_vec(&mut r, n);
    // separable cubic, evaluated so each coordinate's roundoff stays local
    let loss = |w: &[f64]| w.iter().zip(&p).map(|(v, q)| (v - q) * v * v).sum::<f64>();
    let grad: Vec<f64> = p.iter().map(|v| v * v).collect();
    let report = fd_check_flat(loss, &p, &grad, 1e-5).unwrap();
    assert!(report.checked >= 200 && report.checked < n);
    assert!(report.max_rel_error <= 1e-4, "{report:?}");
    let mut wrong = grad.clone();
    wrong.iter_mut().for_each(|v| *v += r.random_range(0.5..1.0));
    assert!(fd_check_flat(loss, &p, &wrong, 1e-5).unwrap().max_rel_error > 0.1);
}
