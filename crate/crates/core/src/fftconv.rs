//! Causal depthwise convolution of length-`L` signals with length-`L`
//! kernels.
//!
//! The FFT path zero-pads both operands to `M`, the smallest power of two
//! `≥ 2L`, so the circular product of spectra equals the linear convolution
//! on the first `L` outputs. [`causal_conv_direct`] is the definitional
//! O(L²) sum and serves as the reference.

use std::iter::Sum;
use std::sync::Arc;

use realfft::num_complex::Complex;
use realfft::num_traits::{Float, FromPrimitive};
use realfft::{ComplexToReal, FftNum, RealFftPlanner, RealToComplex};

use crate::error::{Error, Result};
use crate::kernelgen::MaterializedKernel;
use crate::tensor::Tensor3;

/// Floating-point element type accepted by the convolution routines.
pub trait Scalar: FftNum + Float + FromPrimitive + Default + Sum + Send + Sync {}

impl<T> Scalar for T where T: FftNum + Float + FromPrimitive + Default + Sum + Send + Sync {}

/// Reusable FFT plans for one sequence length. Immutable after creation and
/// shareable across threads; per-call state lives in [`ConvScratch`].
#[derive(Clone)]
pub struct ConvPlan<T: Scalar> {
    seq_len: usize,
    fft_size: usize,
    forward: Arc<dyn RealToComplex<T>>,
    inverse: Arc<dyn ComplexToReal<T>>,
}

impl<T: Scalar> std::fmt::Debug for ConvPlan<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ConvPlan")
            .field("seq_len", &self.seq_len)
            .field("fft_size", &self.fft_size)
            .finish()
    }
}

/// Caller-owned buffers for one in-flight convolution.
pub struct ConvScratch<T> {
    time: Vec<T>,
    freq: Vec<Complex<T>>,
    work: Vec<Complex<T>>,
}

impl<T: Scalar> ConvPlan<T> {
    pub fn new(seq_len: usize) -> Result<Self> {
        if seq_len == 0 {
            return Err(Error::InvalidArgument("sequence length must be positive".into()));
        }
        let fft_size = (2 * seq_len).next_power_of_two();
        let mut planner = RealFftPlanner::<T>::new();
        Ok(Self {
            seq_len,
            fft_size,
            forward: planner.plan_fft_forward(fft_size),
            inverse: planner.plan_fft_inverse(fft_size),
        })
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn fft_size(&self) -> usize {
        self.fft_size
    }

    /// Number of complex bins in a half spectrum, `M/2 + 1`.
    pub fn spectrum_len(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn make_scratch(&self) -> ConvScratch<T> {
        let work = self
            .forward
            .get_scratch_len()
            .max(self.inverse.get_scratch_len());
        ConvScratch {
            time: vec![T::zero(); self.fft_size],
            freq: vec![Complex::default(); self.spectrum_len()],
            work: vec![Complex::default(); work],
        }
    }

    /// Bytes held by one [`ConvScratch`] for this plan.
    pub fn scratch_bytes(&self) -> usize {
        let c = std::mem::size_of::<Complex<T>>();
        let work = self
            .forward
            .get_scratch_len()
            .max(self.inverse.get_scratch_len());
        self.fft_size * std::mem::size_of::<T>() + (self.spectrum_len() + work) * c
    }

    fn check_len(&self, what: &'static str, len: usize) -> Result<()> {
        if len != self.seq_len {
            return Err(Error::shape(what, self.seq_len, len));
        }
        Ok(())
    }

    /// Half spectrum of `signal` zero-padded to the FFT size.
    pub fn forward_spectrum(&self, signal: &[T], out: &mut [Complex<T>], scratch: &mut ConvScratch<T>) -> Result<()> {
        self.check_len("forward_spectrum input", signal.len())?;
        if out.len() != self.spectrum_len() {
            return Err(Error::shape("forward_spectrum output", self.spectrum_len(), out.len()));
        }
        scratch.time[..self.seq_len].copy_from_slice(signal);
        scratch.time[self.seq_len..].fill(T::zero());
        self.forward
            .process_with_scratch(&mut scratch.time, out, &mut scratch.work)
            .map_err(|e| Error::Fft(e.to_string()))
    }

    /// Inverse transform of `spectrum` (consumed as scratch), keeping the
    /// first `L` samples, normalized.
    pub fn inverse_truncated(
        &self,
        spectrum: &mut [Complex<T>],
        out: &mut [T],
        scratch: &mut ConvScratch<T>,
    ) -> Result<()> {
        self.check_len("inverse output", out.len())?;
        if spectrum.len() != self.spectrum_len() {
            return Err(Error::shape("inverse spectrum", self.spectrum_len(), spectrum.len()));
        }
        // DC and Nyquist bins of a real signal are real.
        spectrum[0].im = T::zero();
        spectrum[self.spectrum_len() - 1].im = T::zero();
        self.inverse
            .process_with_scratch(spectrum, &mut scratch.time, &mut scratch.work)
            .map_err(|e| Error::Fft(e.to_string()))?;
        let scale = T::one() / T::from_usize(self.fft_size).expect("fft size fits in T");
        for (o, t) in out.iter_mut().zip(&scratch.time) {
            *o = *t * scale;
        }
        Ok(())
    }

    /// `out = causal_conv(x, k)` where `k_spec` is the precomputed kernel
    /// spectrum.
    pub fn conv_with_spectrum(
        &self,
        x: &[T],
        k_spec: &[Complex<T>],
        out: &mut [T],
        scratch: &mut ConvScratch<T>,
    ) -> Result<()> {
        let mut freq = std::mem::take(&mut scratch.freq);
        let res = self.forward_spectrum(x, &mut freq, scratch).and_then(|_| {
            for (f, k) in freq.iter_mut().zip(k_spec) {
                *f = *f * *k;
            }
            self.inverse_truncated(&mut freq, out, scratch)
        });
        scratch.freq = freq;
        res
    }
}

/// Spectra of all channels of a kernel, computed once and reused across a
/// batch.
#[derive(Debug, Clone)]
pub struct KernelSpectra<T> {
    pub channels: usize,
    pub bins: usize,
    pub data: Vec<Complex<T>>,
}

impl<T: Scalar> KernelSpectra<T> {
    pub fn new(kernel_values: &[T], channels: usize, plan: &ConvPlan<T>) -> Result<Self> {
        let l = plan.seq_len();
        if kernel_values.len() != channels * l {
            return Err(Error::shape("kernel values", channels * l, kernel_values.len()));
        }
        let bins = plan.spectrum_len();
        let mut data = vec![Complex::default(); channels * bins];
        let mut scratch = plan.make_scratch();
        for (k, spec) in kernel_values.chunks_exact(l).zip(data.chunks_exact_mut(bins)) {
            plan.forward_spectrum(k, spec, &mut scratch)?;
        }
        Ok(Self { channels, bins, data })
    }

    pub fn channel(&self, h: usize) -> &[Complex<T>] {
        &self.data[h * self.bins..(h + 1) * self.bins]
    }
}

/// `y[n] = Σ_{m=0..=n} k[m]·x[n−m]`, by the definitional double loop.
pub fn causal_conv_direct<T: Scalar>(x: &[T], k: &[T]) -> Result<Vec<T>> {
    if x.len() != k.len() {
        return Err(Error::shape("causal_conv_direct kernel", x.len(), k.len()));
    }
    let l = x.len();
    let mut y = vec![T::zero(); l];
    for n in 0..l {
        let mut acc = T::zero();
        for m in 0..=n {
            acc = acc + k[m] * x[n - m];
        }
        y[n] = acc;
    }
    Ok(y)
}

/// Causal convolution through the FFT plan, O(L log L).
pub fn causal_conv_fft<T: Scalar>(x: &[T], k: &[T], plan: &ConvPlan<T>) -> Result<Vec<T>> {
    plan.check_len("causal_conv_fft input", x.len())?;
    plan.check_len("causal_conv_fft kernel", k.len())?;
    let mut scratch = plan.make_scratch();
    let mut k_spec = vec![Complex::default(); plan.spectrum_len()];
    plan.forward_spectrum(k, &mut k_spec, &mut scratch)?;
    let mut y = vec![T::zero(); x.len()];
    plan.conv_with_spectrum(x, &k_spec, &mut y, &mut scratch)?;
    Ok(y)
}

/// Convolves every `(b, h)` row of `x` with kernel channel `h` given as raw
/// `H × L` values in `T`.
pub fn depthwise_conv<T: Scalar>(x: &Tensor3<T>, kernel_values: &[T], plan: &ConvPlan<T>) -> Result<Tensor3<T>> {
    let [_, h, l] = x.shape();
    plan.check_len("depthwise_conv input", l)?;
    let spectra = KernelSpectra::new(kernel_values, h, plan)?;
    let mut out = Tensor3::zeros(x.shape());
    depthwise_conv_into(x, &spectra, plan, &mut out)?;
    Ok(out)
}

/// Like [`depthwise_conv`] but with precomputed spectra and a caller-owned
/// output buffer.
pub fn depthwise_conv_into<T: Scalar>(
    x: &Tensor3<T>,
    spectra: &KernelSpectra<T>,
    plan: &ConvPlan<T>,
    out: &mut Tensor3<T>,
) -> Result<()> {
    let [b, h, l] = x.shape();
    plan.check_len("depthwise_conv input", l)?;
    if spectra.channels != h {
        return Err(Error::shape("depthwise_conv kernel channels", h, spectra.channels));
    }
    if out.shape() != x.shape() {
        return Err(Error::shape("depthwise_conv output", format!("{:?}", x.shape()), format!("{:?}", out.shape())));
    }
    let mut scratch = plan.make_scratch();
    for bi in 0..b {
        for hi in 0..h {
            plan.conv_with_spectrum(x.row(bi, hi), spectra.channel(hi), out.row_mut(bi, hi), &mut scratch)?;
        }
    }
    Ok(())
}

/// Batched depthwise convolution with a materialized kernel. Kernel spectra
/// are computed once per call.
pub fn depthwise_conv_batch<T: Scalar>(
    x: &Tensor3<T>,
    kernel: &MaterializedKernel,
    plan: &ConvPlan<T>,
) -> Result<Tensor3<T>> {
    if kernel.channels != x.channels() {
        return Err(Error::shape("depthwise_conv_batch channels", kernel.channels, x.channels()));
    }
    if kernel.seq_len != x.len() {
        return Err(Error::shape("depthwise_conv_batch kernel length", x.len(), kernel.seq_len));
    }
    let values: Vec<T> = kernel
        .values
        .iter()
        .map(|&v| T::from_f64(v).expect("kernel value representable"))
        .collect();
    depthwise_conv(x, &values, plan)
}
