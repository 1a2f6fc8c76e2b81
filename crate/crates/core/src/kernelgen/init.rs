use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{InitScheme, KernelConfig, KernelMode, ScaleParams};
use crate::error::{Error, Result};

/// Lower end of the per-channel decay range used with cosine initialization.
pub const COSINE_ALPHA_MIN: f64 = 1.0 / 3.0;
pub const COSINE_ALPHA_MAX: f64 = 1.0;

/// Samples `cos(2π f x)` at `d` evenly spaced points of `[0, 1]`.
pub fn cosine_wave(freq: f64, d: usize) -> Vec<f64> {
    (0..d)
        .map(|j| {
            let x = if d > 1 { j as f64 / (d - 1) as f64 } else { 0.0 };
            (2.0 * std::f64::consts::PI * freq * x).cos()
        })
        .collect()
}

/// Draws the per-channel cosine frequency, log-uniform in `[1, d/2]`.
fn cosine_frequency<R: Rng + ?Sized>(d: usize, rng: &mut R) -> f64 {
    let hi = d as f64 / 2.0;
    if hi <= 1.0 {
        return 1.0;
    }
    let u: f64 = rng.random();
    (u * hi.ln()).exp()
}

/// Initializes scale parameters for `config`, consuming randomness from `rng`.
pub fn init_params<R: Rng + ?Sized>(config: &KernelConfig, rng: &mut R) -> Result<ScaleParams> {
    config.validate()?;
    let mut params = ScaleParams::zeros(config)?;
    let d = config.scale_dim;
    match config.init {
        InitScheme::Gaussian { sigma } => {
            if !(sigma.is_finite() && sigma > 0.0) {
                return Err(Error::InvalidConfig(format!("gaussian sigma must be positive, got {sigma}")));
            }
            let normal = Normal::new(0.0, sigma)
                .map_err(|e| Error::InvalidConfig(format!("gaussian init: {e}")))?;
            for w in params.weights.iter_mut() {
                *w = normal.sample(rng);
            }
        }
        InitScheme::Cosine => {
            for h in 0..config.channels {
                let freq = cosine_frequency(d, rng);
                let wave = cosine_wave(freq, d);
                for i in 0..params.num_scales {
                    params.scale_mut(h, i).copy_from_slice(&wave);
                }
                if config.mode == KernelMode::Concat {
                    params.channel_alpha[h] = rng.random_range(COSINE_ALPHA_MIN..=COSINE_ALPHA_MAX);
                }
            }
        }
    }
    Ok(params)
}

/// Deterministic initialization seeded from `config.seed`.
pub fn init_params_seeded(config: &KernelConfig) -> Result<ScaleParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    init_params(config, &mut rng)
}
