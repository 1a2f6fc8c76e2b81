//! Pre-norm residual block: `y = x + Mix(act(SGConv(LayerNorm(x))))`.
//!
//! LayerNorm runs over channels at each position, SGConv is the causal
//! depthwise global convolution with a kernel rebuilt from the current scale
//! parameters on every forward pass, and Mix is a position-independent
//! `H → H` affine map.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fftconv::{depthwise_conv, ConvPlan};
use crate::grad::{depthwise_conv_adjoint, kernel_param_grad};
use crate::kernelgen::{build_kernel, init_params, KernelConfig, ScaleParams};
use crate::tensor::Tensor3;

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Gelu,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Gelu => {
                let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
                0.5 * x * (1.0 + t)
            }
        }
    }

    #[inline]
    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Gelu => {
                let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
            }
        }
    }
}

// tanh approximation of GELU
const GELU_C: f64 = 0.797_884_560_802_865_4;
const GELU_K: f64 = 0.044_715;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockConfig {
    pub channels: usize,
    pub seq_len: usize,
    pub kernel: KernelConfig,
    /// Output width of the mixing map; must equal `channels` for the residual.
    pub mix_dim: usize,
    pub activation: Activation,
}

impl BlockConfig {
    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        if self.kernel.seq_len != self.seq_len || self.kernel.channels != self.channels {
            return Err(Error::InvalidConfig(format!(
                "block kernel is {}×{} but block is {}×{}",
                self.kernel.channels, self.kernel.seq_len, self.channels, self.seq_len
            )));
        }
        if self.mix_dim != self.channels {
            return Err(Error::InvalidConfig(format!(
                "mix_dim {} must equal channels {} (residual connection)",
                self.mix_dim, self.channels
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub kernel: ScaleParams,
    /// Frozen per-channel `Z`.
    pub normalizer: Vec<f64>,
    pub norm_scale: Vec<f64>,
    pub norm_bias: Vec<f64>,
    /// `H_out × H_in`.
    pub mix_weight: Vec<f64>,
    pub mix_bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockGrads {
    pub kernel: Vec<f64>,
    pub norm_scale: Vec<f64>,
    pub norm_bias: Vec<f64>,
    pub mix_weight: Vec<f64>,
    pub mix_bias: Vec<f64>,
}

impl BlockGrads {
    pub fn zeros_like(p: &BlockParams) -> Self {
        Self {
            kernel: vec![0.0; p.kernel.weights.len()],
            norm_scale: vec![0.0; p.norm_scale.len()],
            norm_bias: vec![0.0; p.norm_bias.len()],
            mix_weight: vec![0.0; p.mix_weight.len()],
            mix_bias: vec![0.0; p.mix_bias.len()],
        }
    }

    pub fn tensors(&self) -> [&[f64]; 5] {
        [&self.kernel, &self.norm_scale, &self.norm_bias, &self.mix_weight, &self.mix_bias]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 5] {
        [
            &mut self.kernel,
            &mut self.norm_scale,
            &mut self.norm_bias,
            &mut self.mix_weight,
            &mut self.mix_bias,
        ]
    }
}

impl BlockParams {
    /// Kernel from `config.kernel.seed` (with `Z` fixed here), identity
    /// LayerNorm, and `N(0, 1/H)` mixing weights drawn from `rng`.
    pub fn init<R: Rng + ?Sized>(config: &BlockConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let h = config.channels;
        let kernel = {
            let mut krng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(config.kernel.seed);
            init_params(&config.kernel, &mut krng)?
        };
        let normalizer = build_kernel(&kernel, &config.kernel, None)?.normalizer;
        let normal = Normal::new(0.0, 1.0 / (h as f64).sqrt()).expect("valid std");
        Ok(Self {
            kernel,
            normalizer,
            norm_scale: vec![1.0; h],
            norm_bias: vec![0.0; h],
            mix_weight: (0..h * h).map(|_| normal.sample(rng)).collect(),
            mix_bias: vec![0.0; h],
        })
    }

    /// Trainable tensors in declaration order.
    pub fn trainable(&self) -> [&[f64]; 5] {
        [&self.kernel.weights, &self.norm_scale, &self.norm_bias, &self.mix_weight, &self.mix_bias]
    }

    pub fn trainable_mut(&mut self) -> [&mut [f64]; 5] {
        [
            &mut self.kernel.weights,
            &mut self.norm_scale,
            &mut self.norm_bias,
            &mut self.mix_weight,
            &mut self.mix_bias,
        ]
    }

    /// Every stored tensor, frozen buffers included, in declaration order.
    pub fn all_tensors(&self) -> [&[f64]; 7] {
        [
            &self.kernel.weights,
            &self.kernel.channel_alpha,
            &self.normalizer,
            &self.norm_scale,
            &self.norm_bias,
            &self.mix_weight,
            &self.mix_bias,
        ]
    }

    pub fn all_tensors_mut(&mut self) -> [&mut [f64]; 7] {
        [
            &mut self.kernel.weights,
            &mut self.kernel.channel_alpha,
            &mut self.normalizer,
            &mut self.norm_scale,
            &mut self.norm_bias,
            &mut self.mix_weight,
            &mut self.mix_bias,
        ]
    }

    pub fn check_shape(&self, config: &BlockConfig) -> Result<()> {
        self.kernel.check_shape(&config.kernel)?;
        let h = config.channels;
        for (what, len, want) in [
            ("normalizer", self.normalizer.len(), h),
            ("norm_scale", self.norm_scale.len(), h),
            ("norm_bias", self.norm_bias.len(), h),
            ("mix_weight", self.mix_weight.len(), h * h),
            ("mix_bias", self.mix_bias.len(), h),
        ] {
            if len != want {
                return Err(Error::shape(what, want, len));
            }
        }
        Ok(())
    }

    /// Current normalized kernel, `H × L`.
    pub fn kernel_values(&self, config: &BlockConfig) -> Result<Vec<f64>> {
        Ok(build_kernel(&self.kernel, &config.kernel, Some(&self.normalizer))?.values)
    }
}

/// Intermediates kept for the backward pass.
#[derive(Debug, Clone)]
pub struct BlockCache {
    rstd: Vec<f64>,
    xhat: Tensor3<f64>,
    normed: Tensor3<f64>,
    kernel: Vec<f64>,
    pre_act: Tensor3<f64>,
    act: Tensor3<f64>,
}

fn layer_norm(x: &Tensor3<f64>, p: &BlockParams) -> (Vec<f64>, Tensor3<f64>, Tensor3<f64>) {
    let [b, h, l] = x.shape();
    let mut rstd = vec![0.0; b * l];
    let mut xhat = Tensor3::zeros(x.shape());
    let mut normed = Tensor3::zeros(x.shape());
    let mut mean = vec![0.0; l];
    let mut var = vec![0.0; l];
    for bi in 0..b {
        mean.fill(0.0);
        var.fill(0.0);
        for c in 0..h {
            mean.iter_mut().zip(x.row(bi, c)).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= h as f64);
        for c in 0..h {
            var.iter_mut()
                .zip(x.row(bi, c))
                .zip(&mean)
                .for_each(|((s, v), m)| *s += (v - m) * (v - m));
        }
        let r = &mut rstd[bi * l..(bi + 1) * l];
        r.iter_mut().zip(&var).for_each(|(r, v)| *r = 1.0 / (v / h as f64 + LN_EPS).sqrt());
        for c in 0..h {
            let (g, beta) = (p.norm_scale[c], p.norm_bias[c]);
            let xr = x.row(bi, c);
            let xh = xhat.row_mut(bi, c);
            for i in 0..l {
                xh[i] = (xr[i] - mean[i]) * r[i];
            }
            let xh = xhat.row(bi, c);
            normed.row_mut(bi, c).iter_mut().zip(xh).for_each(|(o, v)| *o = g * v + beta);
        }
    }
    (rstd, xhat, normed)
}

/// `out[b] += W · a[b] + bias` over channels, per position.
fn mix_into(a: &Tensor3<f64>, p: &BlockParams, out: &mut Tensor3<f64>) {
    let [b, h, _] = a.shape();
    for bi in 0..b {
        for o in 0..h {
            let bias = p.mix_bias[o];
            out.row_mut(bi, o).iter_mut().for_each(|v| *v += bias);
            for i in 0..h {
                let w = p.mix_weight[o * h + i];
                if w == 0.0 {
                    continue;
                }
                let src = a.row(bi, i);
                out.row_mut(bi, o).iter_mut().zip(src).for_each(|(v, s)| *v += w * s);
            }
        }
    }
}

fn check_input(x: &Tensor3<f64>, config: &BlockConfig, plan: &ConvPlan<f64>) -> Result<()> {
    if x.channels() != config.channels || x.len() != config.seq_len {
        return Err(Error::shape(
            "block input (H, L)",
            format!("({}, {})", config.channels, config.seq_len),
            format!("({}, {})", x.channels(), x.len()),
        ));
    }
    if plan.seq_len() != config.seq_len {
        return Err(Error::shape("block plan length", config.seq_len, plan.seq_len()));
    }
    Ok(())
}

pub fn block_forward_cached(
    x: &Tensor3<f64>,
    params: &BlockParams,
    config: &BlockConfig,
    plan: &ConvPlan<f64>,
) -> Result<(Tensor3<f64>, BlockCache)> {
    check_input(x, config, plan)?;
    let kernel = params.kernel_values(config)?;
    let (rstd, xhat, normed) = layer_norm(x, params);
    let pre_act = depthwise_conv(&normed, &kernel, plan)?;
    let mut act = pre_act.clone();
    act.data_mut().iter_mut().for_each(|v| *v = config.activation.apply(*v));
    let mut y = x.clone();
    mix_into(&act, params, &mut y);
    Ok((
        y,
        BlockCache {
            rstd,
            xhat,
            normed,
            kernel,
            pre_act,
            act,
        },
    ))
}

pub fn block_forward(x: &Tensor3<f64>, params: &BlockParams, config: &BlockConfig, plan: &ConvPlan<f64>) -> Result<Tensor3<f64>> {
    block_forward_cached(x, params, config, plan).map(|(y, _)| y)
}

/// Backpropagates `dy` through the block. Parameter gradients are added
/// into `grads`; the input gradient is returned.
pub fn block_backward(
    dy: &Tensor3<f64>,
    cache: &BlockCache,
    params: &BlockParams,
    config: &BlockConfig,
    plan: &ConvPlan<f64>,
    grads: &mut BlockGrads,
) -> Result<Tensor3<f64>> {
    let [b, h, l] = dy.shape();

    // Mix
    let mut d_act = Tensor3::zeros(dy.shape());
    for bi in 0..b {
        for o in 0..h {
            let g = dy.row(bi, o);
            grads.mix_bias[o] += g.iter().sum::<f64>();
            for i in 0..h {
                let a = cache.act.row(bi, i);
                grads.mix_weight[o * h + i] += g.iter().zip(a).map(|(g, a)| g * a).sum::<f64>();
                let w = params.mix_weight[o * h + i];
                d_act.row_mut(bi, i).iter_mut().zip(g).for_each(|(d, g)| *d += w * g);
            }
        }
    }

    // Activation
    let act = config.activation;
    d_act
        .data_mut()
        .iter_mut()
        .zip(cache.pre_act.data())
        .for_each(|(d, z)| *d *= act.derivative(*z));

    // Convolution and kernel construction
    let (d_normed, dk) = depthwise_conv_adjoint(&cache.normed, &cache.kernel, &d_act, plan)?;
    let kg = kernel_param_grad(&dk, &params.kernel, &config.kernel, &params.normalizer)?;
    grads.kernel.iter_mut().zip(&kg.d_weights).for_each(|(g, d)| *g += d);

    // LayerNorm
    let mut dx = dy.clone();
    let mut sum_g = vec![0.0; l];
    let mut sum_gx = vec![0.0; l];
    for bi in 0..b {
        sum_g.fill(0.0);
        sum_gx.fill(0.0);
        for c in 0..h {
            let dn = d_normed.row(bi, c);
            let xh = cache.xhat.row(bi, c);
            let gamma = params.norm_scale[c];
            grads.norm_scale[c] += dn.iter().zip(xh).map(|(d, x)| d * x).sum::<f64>();
            grads.norm_bias[c] += dn.iter().sum::<f64>();
            for i in 0..l {
                let g = dn[i] * gamma;
                sum_g[i] += g;
                sum_gx[i] += g * xh[i];
            }
        }
        let r = &cache.rstd[bi * l..(bi + 1) * l];
        let inv_h = 1.0 / h as f64;
        for c in 0..h {
            let gamma = params.norm_scale[c];
            let dn = d_normed.row(bi, c);
            let xh = cache.xhat.row(bi, c);
            let out = dx.row_mut(bi, c);
            for i in 0..l {
                let g = dn[i] * gamma;
                out[i] += r[i] * (g - inv_h * sum_g[i] - xh[i] * inv_h * sum_gx[i]);
            }
        }
    }
    Ok(dx)
}
