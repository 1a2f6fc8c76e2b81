//! Reverse-mode adjoints for the kernel construction and convolution
//! pipeline, and a central finite-difference checker.
//!
//! The normalizer `Z` is a constant here: it was fixed when the kernel was
//! initialized and receives no gradient.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use realfft::num_complex::Complex;

use crate::error::{Error, Result};
use crate::fftconv::{ConvPlan, KernelSpectra, Scalar};
use crate::kernelgen::{position_decay, scale_offset, stencil, sub_kernel_len, KernelConfig, KernelMode, ScaleParams};
use crate::tensor::Tensor3;

/// Gradients shaped like the forward quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBundle {
    /// Same layout as [`ScaleParams::weights`].
    pub d_weights: Vec<f64>,
    pub d_input: Option<Tensor3<f64>>,
}

impl GradBundle {
    pub fn is_finite(&self) -> bool {
        self.d_weights.iter().all(|v| v.is_finite())
            && self
                .d_input
                .as_ref()
                .is_none_or(|t| t.data().iter().all(|v| v.is_finite()))
    }
}

/// Adjoint of `y = causal_conv(x, k)` given `dy`:
/// `dx[n] = Σ_{n+m<L} k[m]·dy[n+m]`, `dk[m] = Σ_{n≥m} dy[n]·x[n−m]`,
/// both as FFT cross-correlations.
pub fn conv_adjoint<T: Scalar>(x: &[T], k: &[T], dy: &[T], plan: &ConvPlan<T>) -> Result<(Vec<T>, Vec<T>)> {
    let l = plan.seq_len();
    for (what, len) in [("conv_adjoint x", x.len()), ("conv_adjoint k", k.len()), ("conv_adjoint dy", dy.len())] {
        if len != l {
            return Err(Error::shape(what, l, len));
        }
    }
    let bins = plan.spectrum_len();
    let mut scratch = plan.make_scratch();
    let mut dy_spec = vec![Complex::default(); bins];
    let mut other = vec![Complex::default(); bins];
    plan.forward_spectrum(dy, &mut dy_spec, &mut scratch)?;

    let mut dx = vec![T::zero(); l];
    plan.forward_spectrum(k, &mut other, &mut scratch)?;
    correlate_in_place(&mut other, &dy_spec);
    plan.inverse_truncated(&mut other, &mut dx, &mut scratch)?;

    let mut dk = vec![T::zero(); l];
    plan.forward_spectrum(x, &mut other, &mut scratch)?;
    correlate_in_place(&mut other, &dy_spec);
    plan.inverse_truncated(&mut other, &mut dk, &mut scratch)?;
    Ok((dx, dk))
}

/// `a ← conj(a)·b`
fn correlate_in_place<T: Scalar>(a: &mut [Complex<T>], b: &[Complex<T>]) {
    for (a, b) in a.iter_mut().zip(b) {
        *a = a.conj() * *b;
    }
}

/// Adjoint of the batched depthwise convolution `y[b,h] = x[b,h] * k[h]`.
/// Returns `(dx, dk)` with `dk` summed over the batch (`H × L`).
pub fn depthwise_conv_adjoint<T: Scalar>(
    x: &Tensor3<T>,
    kernel_values: &[T],
    dy: &Tensor3<T>,
    plan: &ConvPlan<T>,
) -> Result<(Tensor3<T>, Vec<T>)> {
    let [b, h, l] = x.shape();
    if dy.shape() != x.shape() {
        return Err(Error::shape("depthwise_conv_adjoint dy", format!("{:?}", x.shape()), format!("{:?}", dy.shape())));
    }
    let spectra = KernelSpectra::new(kernel_values, h, plan)?;
    let bins = plan.spectrum_len();
    let mut scratch = plan.make_scratch();
    let mut dy_spec = vec![Complex::default(); bins];
    let mut work = vec![Complex::default(); bins];
    // per-channel Σ_b conj(X_b)·DY_b, inverted once at the end
    let mut dk_acc = vec![Complex::<T>::default(); h * bins];
    let mut dx = Tensor3::zeros(x.shape());
    for bi in 0..b {
        for hi in 0..h {
            plan.forward_spectrum(dy.row(bi, hi), &mut dy_spec, &mut scratch)?;

            for ((w, k), g) in work.iter_mut().zip(spectra.channel(hi)).zip(&dy_spec) {
                *w = k.conj() * *g;
            }
            plan.inverse_truncated(&mut work, dx.row_mut(bi, hi), &mut scratch)?;

            plan.forward_spectrum(x.row(bi, hi), &mut work, &mut scratch)?;
            let acc = &mut dk_acc[hi * bins..(hi + 1) * bins];
            for ((a, xs), g) in acc.iter_mut().zip(&work).zip(&dy_spec) {
                *a = *a + xs.conj() * *g;
            }
        }
    }
    let mut dk = vec![T::zero(); h * l];
    for (acc, out) in dk_acc.chunks_exact_mut(bins).zip(dk.chunks_exact_mut(l)) {
        plan.inverse_truncated(acc, out, &mut scratch)?;
    }
    Ok((dx, dk))
}

/// Transpose of [`upsample_linear`](crate::kernelgen::upsample_linear):
/// scatters each entry of `g` onto its two source knots with the forward
/// interpolation weights.
pub fn upsample_adjoint(g: &[f64], d: usize) -> Result<Vec<f64>> {
    if d == 0 || g.len() < d {
        return Err(Error::InvalidArgument(format!(
            "upsample adjoint needs 1 <= d <= l, got d = {d}, l = {}",
            g.len()
        )));
    }
    let mut out = vec![0.0; d];
    upsample_prefix_adjoint(g, g.len(), &mut out);
    Ok(out)
}

/// Adds the adjoint of a truncated upsampling (first `g.len()` of
/// `full_len` samples) into `out`. Truncated positions contribute nothing.
fn upsample_prefix_adjoint(g: &[f64], full_len: usize, out: &mut [f64]) {
    let d = out.len();
    for (j, &gj) in g.iter().enumerate() {
        let (lo, hi, a, b) = stencil(j, d, full_len);
        out[lo] += a * gj;
        if b != 0.0 {
            out[hi] += b * gj;
        }
    }
}

/// Pulls a kernel gradient `dk` (`H × L`, gradient with respect to the
/// normalized kernel) back to the scale parameters, undoing in turn the
/// division by the frozen `Z`, the decay weighting, truncation,
/// concatenation and upsampling.
pub fn kernel_param_grad(
    dk: &[f64],
    params: &ScaleParams,
    config: &KernelConfig,
    normalizer: &[f64],
) -> Result<GradBundle> {
    params.check_shape(config)?;
    let (h, l, d) = (config.channels, config.seq_len, config.scale_dim);
    if dk.len() != h * l {
        return Err(Error::shape("kernel_param_grad dk", h * l, dk.len()));
    }
    if normalizer.len() != h {
        return Err(Error::shape("kernel_param_grad normalizer", h, normalizer.len()));
    }
    let decay = match config.mode {
        KernelMode::Disentangled => Some(position_decay(l, config.decay_t)),
        KernelMode::Concat => None,
    };
    let mut d_weights = vec![0.0; params.weights.len()];
    let per_channel = params.num_scales * d;
    let mut raw = vec![0.0; l];
    for c in 0..h {
        let inv_z = 1.0 / normalizer[c];
        let g = &dk[c * l..(c + 1) * l];
        match &decay {
            Some(decay) => raw.iter_mut().zip(g).zip(decay).for_each(|((r, g), s)| *r = g * inv_z * s),
            None => raw.iter_mut().zip(g).for_each(|(r, g)| *r = g * inv_z),
        }
        let out = &mut d_weights[c * per_channel..(c + 1) * per_channel];
        for i in 0..params.num_scales {
            let start = scale_offset(i, d);
            if start >= l {
                break;
            }
            let full = sub_kernel_len(i, d);
            let end = (start + full).min(l);
            let w_grad = &mut out[i * d..(i + 1) * d];
            upsample_prefix_adjoint(&raw[start..end], full, w_grad);
            if decay.is_none() {
                let a = params.channel_alpha[c].powi(i as i32);
                w_grad.iter_mut().for_each(|v| *v *= a);
            }
        }
    }
    Ok(GradBundle { d_weights, d_input: None })
}

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub checked: usize,
}

/// Coordinates checked when the parameter vector is larger than this.
pub const FD_SAMPLE: usize = 256;

const FD_ABS_FLOOR: f64 = 1e-8;

/// Compares `analytic` with central differences of `loss_fn` at `point`.
/// The step for coordinate `i` is `eps · max(1, |pᵢ|)`. Relative error
/// falls back to absolute error when both values are below `1e-8`.
pub fn fd_check_flat<F>(mut loss_fn: F, point: &[f64], analytic: &[f64], eps: f64) -> Result<FdReport>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidArgument(format!("finite-difference step must be positive, got {eps}")));
    }
    if point.len() != analytic.len() {
        return Err(Error::shape("finite_diff_check gradient", point.len(), analytic.len()));
    }
    let n = point.len();
    let coords: Vec<usize> = if n <= FD_SAMPLE {
        (0..n).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_f00d);
        let mut idx = rand::seq::index::sample(&mut rng, n, FD_SAMPLE).into_vec();
        idx.sort_unstable();
        idx
    };
    let mut p = point.to_vec();
    let mut report = FdReport {
        max_rel_error: 0.0,
        worst_index: 0,
        checked: coords.len(),
    };
    for &i in &coords {
        let orig = p[i];
        let step = eps * orig.abs().max(1.0);
        p[i] = orig + step;
        let plus = loss_fn(&p);
        p[i] = orig - step;
        let minus = loss_fn(&p);
        p[i] = orig;
        let numeric = (plus - minus) / (2.0 * step);
        let diff = (numeric - analytic[i]).abs();
        let mag = numeric.abs().max(analytic[i].abs());
        let err = if mag < FD_ABS_FLOOR { diff } else { diff / mag };
        if !err.is_finite() {
            report.max_rel_error = f64::INFINITY;
            report.worst_index = i;
            return Ok(report);
        }
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_index = i;
        }
    }
    Ok(report)
}

/// [`fd_check_flat`] over the weights of `params`.
pub fn finite_diff_check<F>(mut loss_fn: F, params: &ScaleParams, analytic: &GradBundle, eps: f64) -> Result<FdReport>
where
    F: FnMut(&ScaleParams) -> f64,
{
    let mut probe = params.clone();
    fd_check_flat(
        |w| {
            probe.weights.copy_from_slice(w);
            loss_fn(&probe)
        },
        &params.weights,
        &analytic.d_weights,
        eps,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernelgen::upsample_linear;

    #[test]
    fn conv_adjoint_small_example() {
        let plan = ConvPlan::<f64>::new(2).unwrap();
        let (_, dk) = conv_adjoint(&[1.0, 2.0], &[0.3, 0.7], &[0.0, 1.0], &plan).unwrap();
        assert!((dk[0] - 2.0).abs() < 1e-14);
        assert!((dk[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn conv_adjoint_zero_dy() {
        let plan = ConvPlan::<f64>::new(5).unwrap();
        let (dx, dk) = conv_adjoint(&[1.0; 5], &[2.0; 5], &[0.0; 5], &plan).unwrap();
        assert!(dx.iter().chain(&dk).all(|&v| v == 0.0));
    }

    #[test]
    fn upsample_adjoint_edge_cases() {
        let g = [1.0, -2.0, 3.5];
        assert_eq!(upsample_adjoint(&g, 3).unwrap(), g.to_vec());
        assert_eq!(upsample_adjoint(&g, 1).unwrap(), vec![2.5]);
        assert!(upsample_adjoint(&g, 4).is_err());
        assert!(upsample_adjoint(&g, 0).is_err());
    }

    #[test]
    fn upsample_adjoint_is_transpose_by_inner_product() {
        let w = [0.3, -1.1, 2.0, 0.7];
        let g: Vec<f64> = (0..13).map(|i| (i as f64 * 0.37).sin()).collect();
        let lhs: f64 = upsample_linear(&w, 13).unwrap().iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = upsample_adjoint(&g, 4).unwrap().iter().zip(&w).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn single_scale_grad_is_scaled_dk() {
        let config = KernelConfig::new(8, 8, 2);
        let mut params = ScaleParams::zeros(&config).unwrap();
        params.weights.iter_mut().enumerate().for_each(|(i, w)| *w = i as f64);
        let dk: Vec<f64> = (0..16).map(|i| (i as f64) - 3.0).collect();
        let z = [2.0, 4.0];
        let g = kernel_param_grad(&dk, &params, &config, &z).unwrap();
        for c in 0..2 {
            for j in 0..8 {
                assert_eq!(g.d_weights[c * 8 + j], dk[c * 8 + j] / z[c]);
            }
        }
    }

    #[test]
    fn zero_dk_gives_zero_grad() {
        let config = KernelConfig::new(64, 4, 3);
        let params = ScaleParams::zeros(&config).unwrap();
        let g = kernel_param_grad(&vec![0.0; 192], &params, &config, &[1.0; 3]).unwrap();
        assert!(g.d_weights.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn missing_normalizer_rejected() {
        let config = KernelConfig::new(64, 4, 3);
        let params = ScaleParams::zeros(&config).unwrap();
        assert!(kernel_param_grad(&vec![0.0; 192], &params, &config, &[]).is_err());
    }

    #[test]
    fn fd_check_rejects_bad_eps() {
        let config = KernelConfig::new(4, 2, 1);
        let params = ScaleParams::zeros(&config).unwrap();
        let g = GradBundle {
            d_weights: vec![0.0; 4],
            d_input: None,
        };
        assert!(finite_diff_check(|_| 0.0, &params, &g, 0.0).is_err());
        assert!(finite_diff_check(|_| 0.0, &params, &g, -1.0).is_err());
    }

    #[test]
    fn fd_check_linear_loss_is_exact() {
        let config = KernelConfig::new(4, 2, 1);
        let mut params = ScaleParams::zeros(&config).unwrap();
        params.weights = vec![0.5, -0.25, 2.0, 1.0];
        let coef = [1.0, 2.0, -3.0, 0.5];
        let g = GradBundle {
            d_weights: coef.to_vec(),
            d_input: None,
        };
        let rep = finite_diff_check(
            |p| p.weights.iter().zip(coef).map(|(w, c)| w * c).sum(),
            &params,
            &g,
            1e-5,
        )
        .unwrap();
        assert!(rep.max_rel_error < 1e-9, "{rep:?}");
    }
}
