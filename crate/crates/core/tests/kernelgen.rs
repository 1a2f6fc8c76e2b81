mod common;

use common::*;
use proptest::prelude::*;
use sgconv::kernelgen::{init_params_seeded, position_decay, raw_kernel};
use sgconv::{
    build_kernel, build_kernel_concat, build_kernel_disentangled, init_params, num_scales, sub_kernel_len,
    upsample_linear, InitScheme, KernelConfig, KernelMode,
};

fn concat_cfg(l: usize, d: usize, h: usize) -> KernelConfig {
    KernelConfig::new(l, d, h)
}

fn disentangled_cfg(l: usize, d: usize, h: usize, t: f64) -> KernelConfig {
    KernelConfig {
        mode: KernelMode::Disentangled,
        decay_t: t,
        ..KernelConfig::new(l, d, h)
    }
}

#[test]
fn concat_matches_loop_reference() {
    let cfg = concat_cfg(1024, 8, 3);
    let params = random_params(&cfg, 11);
    let k = build_kernel_concat(&params, &cfg, None).unwrap();
    for (h, want) in kernel_ref(&params, &cfg).iter().enumerate() {
        assert!(max_abs_diff(k.channel(h), want) <= 1e-12, "channel {h}");
    }
}

#[test]
fn concat_matches_reference_with_per_channel_alpha() {
    let cfg = KernelConfig {
        init: InitScheme::Cosine,
        seed: 5,
        ..concat_cfg(300, 6, 4)
    };
    let params = init_params_seeded(&cfg).unwrap();
    assert!(params.channel_alpha.windows(2).any(|w| w[0] != w[1]));
    let k = build_kernel(&params, &cfg, None).unwrap();
    for (h, want) in kernel_ref(&params, &cfg).iter().enumerate() {
        assert!(max_abs_diff(k.channel(h), want) <= 1e-12);
    }
}

#[test]
fn disentangled_matches_loop_reference() {
    let cfg = disentangled_cfg(256, 8, 2, 2.0);
    let params = random_params(&cfg, 12);
    let k = build_kernel_disentangled(&params, &cfg, None).unwrap();
    for (h, want) in kernel_ref(&params, &cfg).iter().enumerate() {
        assert!(max_abs_diff(k.channel(h), want) <= 1e-12);
    }
}

#[test]
fn truncated_kernels_match_reference() {
    for (l, d) in [(100, 8), (1000, 3), (17, 16), (5, 1)] {
        for cfg in [concat_cfg(l, d, 2), disentangled_cfg(l, d, 2, 0.5)] {
            let params = random_params(&cfg, l as u64);
            let k = build_kernel(&params, &cfg, None).unwrap();
            for (h, want) in kernel_ref(&params, &cfg).iter().enumerate() {
                assert!(max_abs_diff(k.channel(h), want) <= 1e-12, "L={l} d={d} {:?}", cfg.mode);
            }
        }
    }
}

#[test]
fn unit_alpha_concat_equals_undecayed_disentangled() {
    let c = KernelConfig {
        decay_alpha: 1.0,
        ..concat_cfg(512, 8, 3)
    };
    let d = disentangled_cfg(512, 8, 3, 0.0);
    let params = random_params(&c, 3);
    let a = build_kernel_concat(&params, &c, None).unwrap();
    let b = build_kernel_disentangled(&params, &d, None).unwrap();
    assert_eq!(a.values, b.values);
    assert_eq!(a.normalizer, b.normalizer);
}

#[test]
fn builders_are_pure() {
    for cfg in [concat_cfg(777, 5, 3), disentangled_cfg(777, 5, 3, 1.5)] {
        let params = random_params(&cfg, 9);
        let a = build_kernel(&params, &cfg, None).unwrap();
        let b = build_kernel(&params, &cfg, None).unwrap();
        assert_eq!(a, b);
        let c = build_kernel(&params, &cfg, Some(&a.normalizer)).unwrap();
        assert_eq!(a.values, c.values);
    }
}

#[test]
fn concat_raw_magnitude_bounded_per_scale() {
    let cfg = concat_cfg(1000, 7, 3);
    let params = random_params(&cfg, 21);
    let raw = raw_kernel(&params, &cfg).unwrap();
    for h in 0..cfg.channels {
        let row = &raw[h * cfg.seq_len..(h + 1) * cfg.seq_len];
        let mut start = 0;
        for i in 0..params.num_scales {
            let end = (start + sub_kernel_len(i, cfg.scale_dim)).min(cfg.seq_len);
            let bound = params.channel_alpha[h].powi(i as i32) * max_abs(params.scale(h, i));
            assert!(max_abs(&row[start..end]) <= bound * (1.0 + 1e-15));
            start = end;
        }
        assert_eq!(start, cfg.seq_len);
    }
}

#[test]
fn concat_scale_weights_strictly_decrease() {
    for alpha in [0.1, 0.5, 0.99] {
        let cfg = KernelConfig {
            decay_alpha: alpha,
            ..concat_cfg(4096, 4, 1)
        };
        let params = random_params(&cfg, 1);
        let k = build_kernel(&params, &cfg, None).unwrap();
        let z = k.normalizer[0];
        let weights: Vec<f64> = (0..cfg.num_scales()).map(|i| alpha.powi(i as i32) / z).collect();
        assert!(weights.windows(2).all(|w| w[0] > w[1]));
    }
}

#[test]
fn position_decay_is_inverse_power_and_non_increasing() {
    assert_eq!(position_decay(4, 1.0), vec![1.0, 0.5, 1.0 / 3.0, 0.25]);
    assert!(position_decay(64, 0.0).iter().all(|&v| v == 1.0));
    for t in [0.0, 0.3, 1.0, 2.5] {
        let decay = position_decay(2000, t);
        for (p, v) in decay.iter().enumerate() {
            assert!((v - ((p + 1) as f64).powf(-t)).abs() <= 1e-15);
        }
        assert!(decay.windows(2).all(|w| w[1] <= w[0]));
    }
}

#[test]
fn upsample_matches_float_reference() {
    let mut r = rng(4);
    for d in 1..=16 {
        for len in d..=64 {
            let w = random_vec(&mut r, d);
            let got = upsample_linear(&w, len).unwrap();
            assert!(max_abs_diff(&got, &upsample_ref(&w, len)) <= 1e-14, "d={d} len={len}");
        }
    }
}

#[test]
fn upsample_examples() {
    let got = upsample_linear(&[0.0, 1.0], 4).unwrap();
    assert!(max_abs_diff(&got, &[0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]) < 1e-15);
    assert_eq!(upsample_linear(&[5.0, 7.0, 9.0], 3).unwrap(), vec![5.0, 7.0, 9.0]);
    assert_eq!(upsample_linear(&[3.0], 4).unwrap(), vec![3.0; 4]);
    assert!(upsample_linear(&[1.0, 2.0, 3.0], 2).is_err());
}

#[test]
fn parameter_count_is_logarithmic() {
    let cfg = concat_cfg(16384, 64, 1);
    assert_eq!(cfg.num_scales(), 9);
    assert_eq!(cfg.params_per_channel(), 576);
    let mut prev = f64::INFINITY;
    let mut l = 256;
    while l <= 16384 {
        let ratio = (num_scales(l, 8).unwrap() * 8) as f64 / l as f64;
        assert!(ratio < prev);
        prev = ratio;
        l *= 2;
    }
}

#[test]
fn gaussian_init_mean_within_three_sigma() {
    let cfg = concat_cfg(1 << 17, 1 << 17, 1);
    let params = init_params(&cfg, &mut rng(77)).unwrap();
    let n = params.weights.len() as f64;
    assert!(n >= 1e5);
    let mean = params.weights.iter().sum::<f64>() / n;
    assert!(mean.abs() <= 3.0 / n.sqrt(), "mean {mean}");
}

#[test]
fn cosine_zero_frequency_is_constant() {
    let w = sgconv::kernelgen::cosine_wave(0.0, 9);
    assert!(w.iter().all(|&v| v == 1.0));
}

#[test]
fn cosine_init_draws_alpha_in_range() {
    let cfg = KernelConfig {
        init: InitScheme::Cosine,
        ..concat_cfg(2048, 16, 64)
    };
    let params = init_params(&cfg, &mut rng(8)).unwrap();
    assert!(params.channel_alpha.iter().all(|&a| (1.0 / 3.0..=1.0).contains(&a)));
    for h in 0..cfg.channels {
        let first = params.scale(h, 0);
        for i in 1..params.num_scales {
            assert_eq!(params.scale(h, i), first);
        }
    }
}

#[test]
fn init_is_deterministic() {
    let cfg = KernelConfig {
        seed: 42,
        ..concat_cfg(4096, 32, 4)
    };
    assert_eq!(init_params_seeded(&cfg).unwrap(), init_params_seeded(&cfg).unwrap());
}

fn arb_config() -> impl Strategy<Value = KernelConfig> {
    (1usize..=2048, 0.0f64..1.0, 1usize..=3, 0u8..4, 0.05f64..=1.0, 0.0f64..3.0, any::<u64>()).prop_map(
        |(l, dfrac, h, variant, alpha, t, seed)| {
            let d = 1 + ((l - 1) as f64 * dfrac * dfrac) as usize;
            KernelConfig {
                decay_alpha: alpha,
                decay_t: t,
                mode: if variant & 1 == 0 { KernelMode::Concat } else { KernelMode::Disentangled },
                init: if variant & 2 == 0 { InitScheme::Gaussian { sigma: 1.0 } } else { InitScheme::Cosine },
                seed,
                ..KernelConfig::new(l, d, h)
            }
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn unit_norm_after_init(cfg in arb_config()) {
        let (_, k) = sgconv::kernelgen::init_kernel(&cfg).unwrap();
        for h in 0..cfg.channels {
            prop_assert!((k.channel_norm(h) - 1.0).abs() <= 1e-6);
        }
        prop_assert!(k.values.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn kernels_match_reference(cfg in arb_config(), seed in any::<u64>()) {
        let params = random_params(&cfg, seed);
        let k = build_kernel(&params, &cfg, None).unwrap();
        for (h, want) in kernel_ref(&params, &cfg).iter().enumerate() {
            prop_assert!(max_abs_diff(k.channel(h), want) <= 1e-11);
        }
    }

    #[test]
    fn power_of_two_ratios_cover_exactly(d in 1usize..=64, e in 0u32..=10) {
        let l = d << e;
        let n = num_scales(l, d).unwrap();
        prop_assert_eq!((0..n).map(|i| sub_kernel_len(i, d)).sum::<usize>(), l);
        prop_assert_eq!(n * d, d * (e as usize + 1));
    }

    #[test]
    fn scales_cover_but_do_not_overshoot_by_a_scale(l in 1usize..100_000, dfrac in 0.0f64..1.0) {
        let d = 1 + ((l - 1) as f64 * dfrac) as usize;
        let n = num_scales(l, d).unwrap();
        let total: usize = (0..n).map(|i| sub_kernel_len(i, d)).sum();
        prop_assert!(total >= l);
        let without_last: usize = (0..n - 1).map(|i| sub_kernel_len(i, d)).sum();
        prop_assert!(n == 1 || without_last < l);
    }
}

#[test]
fn random_draws_differ_between_seeds() {
    let a = random_params(&concat_cfg(64, 4, 1), 1);
    let b = random_params(&concat_cfg(64, 4, 1), 2);
    assert_ne!(a.weights, b.weights);
}
