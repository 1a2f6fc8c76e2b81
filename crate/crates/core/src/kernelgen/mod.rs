//! Multiscale kernel construction.
//!
//! A channel's kernel is the concatenation of sub-kernels `k_0 ‖ k_1 ‖ …`
//! where `k_i` is the `d` parameters of scale `i` linearly interpolated to
//! `d · 2^max(i-1, 0)` samples. Two weighting schemes are provided:
//!
//! * [`KernelMode::Concat`]: scale `i` is multiplied by `αⁱ`.
//! * [`KernelMode::Disentangled`]: sub-kernels are left unweighted and the
//!   whole kernel is multiplied position-wise by `p⁻ᵗ` (1-indexed `p`), so
//!   the decay speed no longer depends on `d`.
//!
//! In both cases the result is divided by a per-channel constant `Z`, the L2
//! norm of the raw kernel at initialization, which stays frozen afterwards.

mod init;
mod upsample;

pub use init::{cosine_wave, init_params, init_params_seeded, COSINE_ALPHA_MAX, COSINE_ALPHA_MIN};
pub(crate) use upsample::stencil;
pub use upsample::upsample_linear;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelMode {
    Concat,
    Disentangled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    Gaussian { sigma: f64 },
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub seq_len: usize,
    pub scale_dim: usize,
    pub decay_alpha: f64,
    pub decay_t: f64,
    pub channels: usize,
    pub mode: KernelMode,
    pub init: InitScheme,
    pub seed: u64,
}

impl KernelConfig {
    /// Concat mode, `α = 1/2`, `t = 1`, unit-variance Gaussian init, seed 0.
    pub fn new(seq_len: usize, scale_dim: usize, channels: usize) -> Self {
        Self {
            seq_len,
            scale_dim,
            decay_alpha: 0.5,
            decay_t: 1.0,
            channels,
            mode: KernelMode::Concat,
            init: InitScheme::Gaussian { sigma: 1.0 },
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seq_len == 0 {
            return Err(Error::InvalidConfig("seq_len must be positive".into()));
        }
        if self.scale_dim == 0 || self.scale_dim > self.seq_len {
            return Err(Error::InvalidConfig(format!(
                "scale_dim must be in 1..={}, got {}",
                self.seq_len, self.scale_dim
            )));
        }
        if self.channels == 0 {
            return Err(Error::InvalidConfig("channels must be positive".into()));
        }
        if !(self.decay_alpha > 0.0 && self.decay_alpha <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "decay_alpha must be in (0, 1], got {}",
                self.decay_alpha
            )));
        }
        if !(self.decay_t >= 0.0 && self.decay_t.is_finite()) {
            return Err(Error::InvalidConfig(format!("decay_t must be >= 0, got {}", self.decay_t)));
        }
        Ok(())
    }

    pub fn num_scales(&self) -> usize {
        num_scales(self.seq_len, self.scale_dim).expect("validated config")
    }

    /// Learnable parameters per channel, `N · d`.
    pub fn params_per_channel(&self) -> usize {
        self.num_scales() * self.scale_dim
    }
}

/// Number of scales needed so that the concatenated sub-kernels cover `L`:
/// `ceil(log2(L/d)) + 1`.
pub fn num_scales(seq_len: usize, scale_dim: usize) -> Result<usize> {
    if scale_dim == 0 || scale_dim > seq_len {
        return Err(Error::InvalidArgument(format!(
            "scale dimension {scale_dim} must be in 1..={seq_len}"
        )));
    }
    // Coverage of N scales is d · 2^(N-1).
    let mut extra = 0;
    while scale_dim << extra < seq_len {
        extra += 1;
    }
    Ok(extra + 1)
}

/// Length of sub-kernel `i`: `2^max(i-1, 0) · d`.
pub fn sub_kernel_len(scale: usize, scale_dim: usize) -> usize {
    scale_dim << scale.saturating_sub(1)
}

/// First kernel position covered by scale `i`.
pub(crate) fn scale_offset(scale: usize, scale_dim: usize) -> usize {
    if scale == 0 {
        0
    } else {
        scale_dim << (scale - 1)
    }
}

/// Learnable sub-kernel parameters `w_i` for every channel, plus each
/// channel's (fixed) decay coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleParams {
    pub channels: usize,
    pub num_scales: usize,
    pub scale_dim: usize,
    /// `channels × num_scales × scale_dim`, row-major.
    pub weights: Vec<f64>,
    /// Per-channel `α`; only read in concat mode. Not trained.
    pub channel_alpha: Vec<f64>,
}

impl ScaleParams {
    pub fn zeros(config: &KernelConfig) -> Result<Self> {
        config.validate()?;
        let num_scales = config.num_scales();
        Ok(Self {
            channels: config.channels,
            num_scales,
            scale_dim: config.scale_dim,
            weights: vec![0.0; config.channels * num_scales * config.scale_dim],
            channel_alpha: vec![config.decay_alpha; config.channels],
        })
    }

    pub fn scale(&self, channel: usize, scale: usize) -> &[f64] {
        let start = (channel * self.num_scales + scale) * self.scale_dim;
        &self.weights[start..start + self.scale_dim]
    }

    pub fn scale_mut(&mut self, channel: usize, scale: usize) -> &mut [f64] {
        let start = (channel * self.num_scales + scale) * self.scale_dim;
        &mut self.weights[start..start + self.scale_dim]
    }

    pub fn channel(&self, channel: usize) -> &[f64] {
        let n = self.num_scales * self.scale_dim;
        &self.weights[channel * n..(channel + 1) * n]
    }

    pub fn check_shape(&self, config: &KernelConfig) -> Result<()> {
        config.validate()?;
        let expected = (config.channels, config.num_scales(), config.scale_dim);
        let actual = (self.channels, self.num_scales, self.scale_dim);
        if expected != actual {
            return Err(Error::shape(
                "scale params (channels, scales, dim)",
                format!("{expected:?}"),
                format!("{actual:?}"),
            ));
        }
        if self.weights.len() != expected.0 * expected.1 * expected.2 {
            return Err(Error::shape(
                "scale params weights",
                expected.0 * expected.1 * expected.2,
                self.weights.len(),
            ));
        }
        if self.channel_alpha.len() != config.channels {
            return Err(Error::shape("scale params channel_alpha", config.channels, self.channel_alpha.len()));
        }
        if let Some(bad) = self.weights.iter().find(|w| !w.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite kernel parameter {bad}")));
        }
        Ok(())
    }
}

/// An assembled `channels × seq_len` kernel and the normalizers it was
/// divided by.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterializedKernel {
    pub channels: usize,
    pub seq_len: usize,
    pub values: Vec<f64>,
    pub normalizer: Vec<f64>,
}

impl MaterializedKernel {
    pub fn channel(&self, h: usize) -> &[f64] {
        &self.values[h * self.seq_len..(h + 1) * self.seq_len]
    }

    pub fn channel_norm(&self, h: usize) -> f64 {
        l2_norm(self.channel(h))
    }
}

fn l2_norm(v: &[f64]) -> f64 {
    // Scaled accumulation keeps tiny or huge kernels from under/overflowing.
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return scale;
    }
    scale * v.iter().map(|x| (x / scale) * (x / scale)).sum::<f64>().sqrt()
}

/// The normalizer `Z` of a raw kernel: its L2 norm.
pub fn compute_normalizer(raw_kernel: &[f64]) -> Result<f64> {
    if let Some(bad) = raw_kernel.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite kernel value {bad}")));
    }
    let z = l2_norm(raw_kernel);
    if z == 0.0 {
        return Err(Error::ZeroKernel);
    }
    Ok(z)
}

/// Position-wise decay `[1⁻ᵗ, 2⁻ᵗ, …, L⁻ᵗ]`.
pub fn position_decay(seq_len: usize, t: f64) -> Vec<f64> {
    (1..=seq_len).map(|p| (p as f64).powf(-t)).collect()
}

/// Concatenated, truncated sub-kernels of one channel, each scaled by
/// `weight(i)`, written into `out` (length `L`).
fn assemble_channel(params: &ScaleParams, h: usize, seq_len: usize, weight: impl Fn(usize) -> f64, out: &mut [f64]) {
    let d = params.scale_dim;
    for i in 0..params.num_scales {
        let start = scale_offset(i, d);
        if start >= seq_len {
            break;
        }
        let full = sub_kernel_len(i, d);
        let end = (start + full).min(seq_len);
        let seg = &mut out[start..end];
        upsample::upsample_prefix_into(params.scale(h, i), full, seg);
        let a = weight(i);
        if a != 1.0 {
            seg.iter_mut().for_each(|v| *v *= a);
        }
    }
}

/// The unnormalized `channels × seq_len` kernel for either mode.
pub fn raw_kernel(params: &ScaleParams, config: &KernelConfig) -> Result<Vec<f64>> {
    params.check_shape(config)?;
    let l = config.seq_len;
    let mut out = vec![0.0; config.channels * l];
    let decay = match config.mode {
        KernelMode::Disentangled => Some(position_decay(l, config.decay_t)),
        KernelMode::Concat => None,
    };
    for (h, row) in out.chunks_exact_mut(l).enumerate() {
        match &decay {
            None => {
                let alpha = params.channel_alpha[h];
                assemble_channel(params, h, l, |i| alpha.powi(i as i32), row);
            }
            Some(decay) => {
                assemble_channel(params, h, l, |_| 1.0, row);
                row.iter_mut().zip(decay).for_each(|(v, s)| *v *= s);
            }
        }
    }
    Ok(out)
}

fn normalize(raw: Vec<f64>, config: &KernelConfig, normalizer: Option<&[f64]>) -> Result<MaterializedKernel> {
    let l = config.seq_len;
    let normalizer = match normalizer {
        Some(z) => {
            if z.len() != config.channels {
                return Err(Error::shape("normalizer", config.channels, z.len()));
            }
            if let Some(bad) = z.iter().find(|z| !(z.is_finite() && **z > 0.0)) {
                return Err(Error::InvalidArgument(format!("normalizer must be positive, got {bad}")));
            }
            z.to_vec()
        }
        None => raw.chunks_exact(l).map(compute_normalizer).collect::<Result<Vec<_>>>()?,
    };
    let mut values = raw;
    for (row, z) in values.chunks_exact_mut(l).zip(&normalizer) {
        let inv = 1.0 / z;
        row.iter_mut().for_each(|v| *v *= inv);
    }
    Ok(MaterializedKernel {
        channels: config.channels,
        seq_len: l,
        values,
        normalizer,
    })
}

fn require_mode(config: &KernelConfig, mode: KernelMode) -> Result<()> {
    if config.mode != mode {
        return Err(Error::InvalidConfig(format!("expected {mode:?} mode, config has {:?}", config.mode)));
    }
    Ok(())
}

/// Builds a concat-mode kernel. With `normalizer = None` the per-channel `Z`
/// is computed from the raw kernel (initialization); otherwise the supplied
/// frozen values are used.
pub fn build_kernel_concat(
    params: &ScaleParams,
    config: &KernelConfig,
    normalizer: Option<&[f64]>,
) -> Result<MaterializedKernel> {
    require_mode(config, KernelMode::Concat)?;
    normalize(raw_kernel(params, config)?, config, normalizer)
}

/// Builds a disentangled-mode kernel; see [`build_kernel_concat`] for
/// `normalizer`.
pub fn build_kernel_disentangled(
    params: &ScaleParams,
    config: &KernelConfig,
    normalizer: Option<&[f64]>,
) -> Result<MaterializedKernel> {
    require_mode(config, KernelMode::Disentangled)?;
    normalize(raw_kernel(params, config)?, config, normalizer)
}

pub fn build_kernel(
    params: &ScaleParams,
    config: &KernelConfig,
    normalizer: Option<&[f64]>,
) -> Result<MaterializedKernel> {
    normalize(raw_kernel(params, config)?, config, normalizer)
}

/// Initializes parameters from `config.seed` and builds the unit-norm kernel,
/// fixing `Z`.
pub fn init_kernel(config: &KernelConfig) -> Result<(ScaleParams, MaterializedKernel)> {
    let params = init_params_seeded(config)?;
    let kernel = build_kernel(&params, config, None)?;
    Ok((params, kernel))
}
