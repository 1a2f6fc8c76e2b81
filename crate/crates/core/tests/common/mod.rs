//! Loop-based reference implementations used as test oracles. They follow
//! the textbook definitions directly and share no code with the crate.
#![allow(dead_code)]

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sgconv::{KernelConfig, KernelMode, ScaleParams};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Align-corners linear interpolation evaluated in floating point.
pub fn upsample_ref(w: &[f64], len: usize) -> Vec<f64> {
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

/// Dense `len × d` interpolation matrix, column `c` = upsampled unit vector.
pub fn upsample_matrix(d: usize, len: usize) -> Vec<Vec<f64>> {
    let columns: Vec<Vec<f64>> = (0..d)
        .map(|c| {
            let mut e = vec![0.0; d];
            e[c] = 1.0;
            upsample_ref(&e, len)
        })
        .collect();
    (0..len).map(|j| columns.iter().map(|col| col[j]).collect()).collect()
}

/// Unnormalized kernel for one channel, built scale by scale.
pub fn raw_kernel_ref(params: &ScaleParams, cfg: &KernelConfig, channel: usize) -> Vec<f64> {
    let (l, d) = (cfg.seq_len, cfg.scale_dim);
    let mut out = Vec::new();
    let mut i = 0;
    while out.len() < l {
        let len = if i == 0 { d } else { d << (i - 1) };
        let weight = match cfg.mode {
            KernelMode::Concat => params.channel_alpha[channel].powi(i as i32),
            KernelMode::Disentangled => 1.0,
        };
        for v in upsample_ref(params.scale(channel, i), len) {
            out.push(weight * v);
        }
        i += 1;
    }
    out.truncate(l);
    if cfg.mode == KernelMode::Disentangled {
        for (p, v) in out.iter_mut().enumerate() {
            *v *= ((p + 1) as f64).powf(-cfg.decay_t);
        }
    }
    out
}

pub fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn kernel_ref(params: &ScaleParams, cfg: &KernelConfig) -> Vec<Vec<f64>> {
    (0..cfg.channels)
        .map(|h| {
            let raw = raw_kernel_ref(params, cfg, h);
            let z = l2(&raw);
            raw.iter().map(|v| v / z).collect()
        })
        .collect()
}

pub fn causal_conv_ref(x: &[f64], k: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|n| (0..=n).map(|m| k[m] * x[n - m]).sum())
        .collect()
}

pub fn random_params(cfg: &KernelConfig, seed: u64) -> ScaleParams {
    let mut p = ScaleParams::zeros(cfg).unwrap();
    let mut r = rng(seed);
    p.weights.iter_mut().for_each(|w| *w = r.random_range(-1.0..1.0));
    p
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
