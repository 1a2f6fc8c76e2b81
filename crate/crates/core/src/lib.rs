//! Structured global convolution (SGConv).
//!
//! A global depthwise convolution whose length-`L` kernel is assembled from
//! `N = ceil(log2(L/d)) + 1` sub-kernels, each upsampled from only `d`
//! learnable values and weighted by a geometric decay. The crate covers
//! kernel construction ([`kernelgen`]), O(L log L) causal convolution
//! ([`fftconv`]), hand-written adjoints ([`grad`]), a small residual model
//! with a training loop ([`model`]) and synthetic long-range tasks
//! ([`tasks`]).

pub mod error;
pub mod fftconv;
pub mod grad;
pub mod kernelgen;
pub mod model;
pub mod tasks;
pub mod tensor;

pub use error::{Error, Result};
pub use fftconv::{causal_conv_direct, causal_conv_fft, depthwise_conv_batch, ConvPlan};
pub use grad::{conv_adjoint, finite_diff_check, kernel_param_grad, upsample_adjoint, GradBundle};
pub use kernelgen::{
    build_kernel, build_kernel_concat, build_kernel_disentangled, compute_normalizer, init_params,
    num_scales, sub_kernel_len, upsample_linear, InitScheme, KernelConfig, KernelMode,
    MaterializedKernel, ScaleParams,
};
pub use tensor::Tensor3;
