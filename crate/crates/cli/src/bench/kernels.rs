//! Hand-tiled CPU kernels for the timing baselines. Each body is compiled
//! three times (AVX-512, AVX2+FMA, portable) and chosen at runtime.

use sgconv::fftconv::Scalar;

/// Output positions produced per pass of the direct convolution.
pub const DIRECT_TILE: usize = 256;
/// Rows of the score panel held in registers.
pub const SCORE_ROWS: usize = 6;

/// Floating types the benchmark kernels run on. `SCORE_COLS` is the
/// register-block width of the score microkernel (four vector registers).
pub trait BenchFloat: Scalar + Copy {
    const SCORE_COLS: usize;
    fn madd<const FUSED: bool>(a: Self, b: Self, c: Self) -> Self;
    fn direct_row(x: &[Self], k: &[Self], y: &mut [Self], padded: &mut Vec<Self>);
    fn score_panels(a: &[Self], b: &[Self], h: usize, rows: usize, cols: usize, panel: &mut [Self]) -> Self;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Isa {
    Avx512,
    Avx2,
    Portable,
}

fn isa() -> Isa {
    #[cfg(target_arch = "x86_64")]
    {
        if std::is_x86_feature_detected!("avx512f") && std::is_x86_feature_detected!("fma") {
            return Isa::Avx512;
        }
        if std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma") {
            return Isa::Avx2;
        }
    }
    Isa::Portable
}

/// `y[n] = Σ_{m≤n} k[m]·x[n−m]` over tiles of [`DIRECT_TILE`] outputs.
/// `padded` holds `x` with `DIRECT_TILE` zeros on both sides so every tile
/// reads a full-width window.
#[inline(always)]
fn direct_body<T: BenchFloat, const FUSED: bool>(x: &[T], k: &[T], y: &mut [T], padded: &mut Vec<T>) {
    const W: usize = DIRECT_TILE;
    let l = x.len();
    padded.clear();
    padded.resize(l + 2 * W, T::zero());
    padded[W..W + l].copy_from_slice(x);
    let mut start = 0;
    while start < l {
        let tile = W.min(l - start);
        let mut acc = [T::zero(); W];
        for (m, &km) in k.iter().enumerate().take(start + tile) {
            // window begins at x[start − m], which sits at padded[W + start − m]
            let base = W + start - m;
            let xs: &[T; W] = padded[base..base + W].try_into().expect("window width");
            for t in 0..W {
                acc[t] = T::madd::<FUSED>(km, xs[t], acc[t]);
            }
        }
        y[start..start + tile].copy_from_slice(&acc[..tile]);
        start += tile;
    }
}

/// Score panels `S = Aᵀ·B` for one sample. `a` is packed as row blocks of
/// [`SCORE_ROWS`] (`[block][channel][row]`), `b` as column blocks of
/// `C` (`[block][channel][col]`); both are zero-padded to whole blocks.
/// Each row panel is written to `panel` and folded into a checksum so the
/// work cannot be elided.
#[inline(always)]
fn score_body<T: BenchFloat, const C: usize, const FUSED: bool>(
    a: &[T],
    b: &[T],
    h: usize,
    rows: usize,
    cols: usize,
    panel: &mut [T],
) -> T {
    const R: usize = SCORE_ROWS;
    let (row_blocks, col_blocks) = (rows / R, cols / C);
    let mut checksum = T::zero();
    for ib in 0..row_blocks {
        let ap = &a[ib * h * R..(ib + 1) * h * R];
        for jb in 0..col_blocks {
            let bp = &b[jb * h * C..(jb + 1) * h * C];
            let mut acc = [[T::zero(); C]; R];
            for c in 0..h {
                let av: &[T; R] = ap[c * R..c * R + R].try_into().expect("row block");
                let bv: &[T; C] = bp[c * C..c * C + C].try_into().expect("col block");
                for r in 0..R {
                    for q in 0..C {
                        acc[r][q] = T::madd::<FUSED>(av[r], bv[q], acc[r][q]);
                    }
                }
            }
            for (r, row) in acc.iter().enumerate() {
                panel[r * cols + jb * C..r * cols + jb * C + C].copy_from_slice(row);
            }
        }
        checksum = checksum + panel[ib % R * cols + ib % cols];
    }
    checksum
}

macro_rules! bench_float {
    ($t:ty, $cols:expr, $avx512_direct:ident, $avx2_direct:ident, $avx512_score:ident, $avx2_score:ident) => {
        #[cfg(target_arch = "x86_64")]
        #[target_feature(enable = "avx512f,avx2,fma")]
        unsafe fn $avx512_direct(x: &[$t], k: &[$t], y: &mut [$t], p: &mut Vec<$t>) {
            direct_body::<$t, true>(x, k, y, p)
        }

        #[cfg(target_arch = "x86_64")]
        #[target_feature(enable = "avx2,fma")]
        unsafe fn $avx2_direct(x: &[$t], k: &[$t], y: &mut [$t], p: &mut Vec<$t>) {
            direct_body::<$t, true>(x, k, y, p)
        }

        #[cfg(target_arch = "x86_64")]
        #[target_feature(enable = "avx512f,avx2,fma")]
        unsafe fn $avx512_score(a: &[$t], b: &[$t], h: usize, rows: usize, cols: usize, panel: &mut [$t]) -> $t {
            score_body::<$t, $cols, true>(a, b, h, rows, cols, panel)
        }

        #[cfg(target_arch = "x86_64")]
        #[target_feature(enable = "avx2,fma")]
        unsafe fn $avx2_score(a: &[$t], b: &[$t], h: usize, rows: usize, cols: usize, panel: &mut [$t]) -> $t {
            score_body::<$t, $cols, true>(a, b, h, rows, cols, panel)
        }

        impl BenchFloat for $t {
            const SCORE_COLS: usize = $cols;

            #[inline(always)]
            fn madd<const FUSED: bool>(a: Self, b: Self, c: Self) -> Self {
                if FUSED {
                    a.mul_add(b, c)
                } else {
                    a * b + c
                }
            }

            fn direct_row(x: &[Self], k: &[Self], y: &mut [Self], padded: &mut Vec<Self>) {
                assert!(x.len() == k.len() && x.len() == y.len(), "direct_row length mismatch");
                match isa() {
                    // SAFETY: the required CPU features were detected at runtime.
                    #[cfg(target_arch = "x86_64")]
                    Isa::Avx512 => unsafe { $avx512_direct(x, k, y, padded) },
                    #[cfg(target_arch = "x86_64")]
                    Isa::Avx2 => unsafe { $avx2_direct(x, k, y, padded) },
                    _ => direct_body::<$t, false>(x, k, y, padded),
                }
            }

            fn score_panels(a: &[Self], b: &[Self], h: usize, rows: usize, cols: usize, panel: &mut [Self]) -> Self {
                assert!(rows % SCORE_ROWS == 0 && cols % $cols == 0, "unpadded score operands");
                assert!(a.len() >= rows * h && b.len() >= cols * h && panel.len() >= SCORE_ROWS * cols);
                match isa() {
                    // SAFETY: the required CPU features were detected at runtime.
                    #[cfg(target_arch = "x86_64")]
                    Isa::Avx512 => unsafe { $avx512_score(a, b, h, rows, cols, panel) },
                    #[cfg(target_arch = "x86_64")]
                    Isa::Avx2 => unsafe { $avx2_score(a, b, h, rows, cols, panel) },
                    _ => score_body::<$t, $cols, false>(a, b, h, rows, cols, panel),
                }
            }
        }
    };
}

bench_float!(f32, 64, direct_avx512_f32, direct_avx2_f32, score_avx512_f32, score_avx2_f32);
bench_float!(f64, 32, direct_avx512_f64, direct_avx2_f64, score_avx512_f64, score_avx2_f64);

/// Rounds `n` up to a multiple of `block`.
pub fn padded_len(n: usize, block: usize) -> usize {
    n.div_ceil(block) * block
}

/// Packs a channel-major `H × L` sample into `[block][channel][lane]`
/// panels of width `block`, zero-padding the tail.
pub fn pack_panels<T: BenchFloat>(x: &[T], h: usize, l: usize, block: usize, out: &mut Vec<T>) {
    let lp = padded_len(l, block);
    out.clear();
    out.resize(lp * h, T::zero());
    for blk in 0..lp / block {
        for c in 0..h {
            let dst = &mut out[(blk * h + c) * block..(blk * h + c + 1) * block];
            let lo = blk * block;
            let hi = (lo + block).min(l);
            if lo < hi {
                dst[..hi - lo].copy_from_slice(&x[c * l + lo..c * l + hi]);
            }
        }
    }
}

/// `xᵀx` score matrix for one `H × L` sample, computed panel by panel.
/// Returns the checksum from [`BenchFloat::score_panels`].
pub fn attention_scores<T: BenchFloat>(x: &[T], h: usize, l: usize, ws: &mut ScoreWorkspace<T>) -> T {
    let rows = padded_len(l, SCORE_ROWS);
    let cols = padded_len(l, T::SCORE_COLS);
    pack_panels(x, h, l, SCORE_ROWS, &mut ws.row_panels);
    pack_panels(x, h, l, T::SCORE_COLS, &mut ws.col_panels);
    ws.panel.resize(SCORE_ROWS * cols, T::zero());
    T::score_panels(&ws.row_panels, &ws.col_panels, h, rows, cols, &mut ws.panel)
}

#[derive(Debug, Default)]
pub struct ScoreWorkspace<T> {
    row_panels: Vec<T>,
    col_panels: Vec<T>,
    panel: Vec<T>,
}

impl<T> ScoreWorkspace<T> {
    pub fn new() -> Self {
        Self {
            row_panels: Vec::new(),
            col_panels: Vec::new(),
            panel: Vec::new(),
        }
    }

    /// Bytes this workspace holds for a sample of `h × l`.
    pub fn bytes_for(h: usize, l: usize) -> usize
    where
        T: BenchFloat,
    {
        let rows = padded_len(l, SCORE_ROWS);
        let cols = padded_len(l, T::SCORE_COLS);
        (rows * h + cols * h + SCORE_ROWS * cols) * std::mem::size_of::<T>()
    }
}
