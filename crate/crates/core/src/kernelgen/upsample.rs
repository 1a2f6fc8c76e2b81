use crate::error::{Error, Result};

/// Interpolation stencil for output position `j` when stretching `src_len`
/// knots onto `dst_len` positions with aligned endpoints.
///
/// Returns `(lo, hi, w_lo, w_hi)` such that the output equals
/// `w_lo * src[lo] + w_hi * src[hi]`. The source coordinate is computed in
/// exact integer arithmetic so that `src_len == dst_len` yields the identity.
#[inline]
pub(crate) fn stencil(j: usize, src_len: usize, dst_len: usize) -> (usize, usize, f64, f64) {
    if src_len == 1 || dst_len == 1 {
        return (0, 0, 1.0, 0.0);
    }
    let num = j * (src_len - 1);
    let den = dst_len - 1;
    let lo = num / den;
    let rem = num % den;
    if rem == 0 {
        return (lo, lo, 1.0, 0.0);
    }
    let frac = rem as f64 / den as f64;
    (lo, lo + 1, 1.0 - frac, frac)
}

/// Align-corners linear interpolation of `w` to `target_len` samples.
pub fn upsample_linear(w: &[f64], target_len: usize) -> Result<Vec<f64>> {
    if w.is_empty() {
        return Err(Error::InvalidArgument("cannot upsample an empty vector".into()));
    }
    if target_len < w.len() {
        return Err(Error::InvalidArgument(format!(
            "upsample target length {target_len} is shorter than source length {}",
            w.len()
        )));
    }
    let mut out = vec![0.0; target_len];
    upsample_into(w, &mut out);
    Ok(out)
}

/// Writes the first `out.len()` samples of the upsampling of `w` to
/// `full_len` positions. Used for the truncated last scale.
pub(crate) fn upsample_prefix_into(w: &[f64], full_len: usize, out: &mut [f64]) {
    debug_assert!(out.len() <= full_len);
    for (j, o) in out.iter_mut().enumerate() {
        let (lo, hi, a, b) = stencil(j, w.len(), full_len);
        *o = a * w[lo] + b * w[hi];
    }
}

pub(crate) fn upsample_into(w: &[f64], out: &mut [f64]) {
    let n = out.len();
    upsample_prefix_into(w, n, out)
}
