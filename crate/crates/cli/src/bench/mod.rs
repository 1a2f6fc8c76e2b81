//! Timing harness for direct convolution, FFT convolution and the quadratic
//! score baseline.

pub mod kernels;

use std::collections::BTreeMap;
use std::time::Instant;

use serde::Serialize;
use sgconv::fftconv::{depthwise_conv_batch, ConvPlan};
use sgconv::kernelgen::{build_kernel, init_params_seeded, KernelConfig};
use sgconv::Tensor3;

use crate::error::CliError;
use kernels::{attention_scores, BenchFloat, ScoreWorkspace, DIRECT_TILE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Impl {
    ConvDirect,
    ConvFft,
    AttnQuadratic,
}

impl Impl {
    pub const ALL: [Impl; 3] = [Impl::ConvDirect, Impl::ConvFft, Impl::AttnQuadratic];

    pub fn name(self) -> &'static str {
        match self {
            Impl::ConvDirect => "conv_direct",
            Impl::ConvFft => "conv_fft",
            Impl::AttnQuadratic => "attn_quadratic",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRecord {
    #[serde(rename = "impl")]
    pub implementation: Impl,
    pub seq_len: usize,
    pub channels: usize,
    pub batch: usize,
    pub median_ms: f64,
    pub p10_ms: f64,
    pub p90_ms: f64,
    pub reps: usize,
}

pub const CSV_HEADER: &str = "impl,seq_len,channels,batch,median_ms,p10_ms,p90_ms,reps";

impl BenchRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.6},{:.6},{:.6},{}",
            self.implementation.name(),
            self.seq_len,
            self.channels,
            self.batch,
            self.median_ms,
            self.p10_ms,
            self.p90_ms,
            self.reps
        )
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub lengths: Vec<usize>,
    pub channels: usize,
    pub batch: usize,
    /// Batch for the score baseline; defaults to `batch`.
    pub attn_batch: usize,
    pub reps: usize,
    /// Direct convolution is skipped above this length.
    pub direct_cap: usize,
    /// Lengths below this are excluded from the slope fit.
    pub fit_min_len: usize,
    pub impls: Vec<Impl>,
    /// Scale dimension of the SGConv kernel.
    pub scale_dim: usize,
    pub seed: u64,
}

impl BenchConfig {
    pub fn default_lengths() -> Vec<usize> {
        (8..=14).map(|e| 1usize << e).collect()
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.reps < 5 {
            return Err(CliError::usage(format!("--reps must be >= 5, got {}", self.reps)));
        }
        if self.lengths.is_empty() {
            return Err(CliError::usage("no lengths given"));
        }
        if self.lengths.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CliError::usage(format!("lengths must be strictly ascending, got {:?}", self.lengths)));
        }
        if self.lengths[0] == 0 || self.channels == 0 || self.batch == 0 || self.attn_batch == 0 {
            return Err(CliError::usage("lengths, channels and batch sizes must be positive"));
        }
        if self.impls.is_empty() {
            return Err(CliError::usage("no implementations selected"));
        }
        Ok(())
    }

    fn batch_for(&self, imp: Impl) -> usize {
        match imp {
            Impl::AttnQuadratic => self.attn_batch,
            _ => self.batch,
        }
    }
}

/// Workspace bytes allocated by each path beyond its input and output,
/// computed from the buffer sizes rather than measured.
pub fn workspace_bytes<T: BenchFloat>(imp: Impl, channels: usize, seq_len: usize) -> usize {
    let s = std::mem::size_of::<T>();
    match imp {
        // kernel plus one zero-padded input row
        Impl::ConvDirect => (channels * seq_len + seq_len + 2 * DIRECT_TILE) * s,
        Impl::ConvFft => {
            let plan = ConvPlan::<T>::new(seq_len).expect("valid length");
            // f64 kernel before conversion, converted kernel, spectra, scratch
            channels * seq_len * (8 + s) + channels * plan.spectrum_len() * 2 * s + plan.scratch_bytes()
        }
        Impl::AttnQuadratic => ScoreWorkspace::<T>::bytes_for(channels, seq_len),
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    // linear interpolation between closest ranks
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn summarize(imp: Impl, cfg: &BenchConfig, seq_len: usize, mut times_ms: Vec<f64>) -> BenchRecord {
    times_ms.sort_by(f64::total_cmp);
    BenchRecord {
        implementation: imp,
        seq_len,
        channels: cfg.channels,
        batch: cfg.batch_for(imp),
        median_ms: quantile(&times_ms, 0.5),
        p10_ms: quantile(&times_ms, 0.1),
        p90_ms: quantile(&times_ms, 0.9),
        reps: times_ms.len(),
    }
}

struct Workload<T> {
    kernel_cfg: KernelConfig,
    params: sgconv::ScaleParams,
    x: Tensor3<T>,
}

impl<T: BenchFloat> Workload<T> {
    fn new(cfg: &BenchConfig, batch: usize, seq_len: usize) -> Result<Self, CliError> {
        let kernel_cfg = KernelConfig {
            seed: cfg.seed,
            ..KernelConfig::new(seq_len, cfg.scale_dim.min(seq_len), cfg.channels)
        };
        let params = init_params_seeded(&kernel_cfg)?;
        let mut state = cfg.seed ^ seq_len as u64;
        let x = Tensor3::from_fn([batch, cfg.channels, seq_len], |_, _, _| {
            // xorshift keeps input generation cheap at large sizes
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            T::from_f64((state >> 11) as f64 / (1u64 << 53) as f64 - 0.5).expect("representable")
        });
        Ok(Self { kernel_cfg, params, x })
    }

    fn run(&self, imp: Impl, plan: &ConvPlan<T>) -> Result<f64, CliError> {
        let [b, h, l] = self.x.shape();
        let checksum = match imp {
            Impl::ConvFft => {
                let kernel = build_kernel(&self.params, &self.kernel_cfg, None)?;
                let y = depthwise_conv_batch(&self.x, &kernel, plan)?;
                y.data()[y.data().len() - 1].to_f64().unwrap_or(0.0)
            }
            Impl::ConvDirect => {
                let kernel = build_kernel(&self.params, &self.kernel_cfg, None)?;
                let values: Vec<T> = kernel.values.iter().map(|&v| T::from_f64(v).expect("representable")).collect();
                let mut padded = Vec::with_capacity(l + 2 * DIRECT_TILE);
                let mut y = vec![T::zero(); l];
                let mut sum = 0.0;
                for bi in 0..b {
                    for c in 0..h {
                        T::direct_row(self.x.row(bi, c), &values[c * l..(c + 1) * l], &mut y, &mut padded);
                        sum += y[l - 1].to_f64().unwrap_or(0.0);
                    }
                }
                sum
            }
            Impl::AttnQuadratic => {
                let mut ws = ScoreWorkspace::new();
                (0..b)
                    .map(|bi| attention_scores(self.x.sample(bi), h, l, &mut ws).to_f64().unwrap_or(0.0))
                    .sum()
            }
        };
        Ok(std::hint::black_box(checksum))
    }
}

/// Progress callback: `(impl, seq_len)` before each measurement.
pub type Progress<'a> = &'a mut dyn FnMut(Impl, usize);

pub fn run_bench<T: BenchFloat>(cfg: &BenchConfig, progress: Progress<'_>) -> Result<Vec<BenchRecord>, CliError> {
    cfg.validate()?;
    let mut records = Vec::new();
    for &imp in &cfg.impls {
        for &l in &cfg.lengths {
            if imp == Impl::ConvDirect && l > cfg.direct_cap {
                continue;
            }
            progress(imp, l);
            let plan = ConvPlan::<T>::new(l)?;
            // warm-up: one untimed pass on a single sample
            Workload::<T>::new(cfg, 1, l)?.run(imp, &plan)?;
            let work = Workload::<T>::new(cfg, cfg.batch_for(imp), l)?;
            let mut times = Vec::with_capacity(cfg.reps);
            for _ in 0..cfg.reps {
                let t = Instant::now();
                work.run(imp, &plan)?;
                times.push(t.elapsed().as_secs_f64() * 1e3);
            }
            records.push(summarize(imp, cfg, l, times));
        }
    }
    Ok(records)
}

/// Least-squares slope of `log(median_ms)` against `log(seq_len)`.
pub fn loglog_slope(points: &[(usize, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let xs: Vec<f64> = points.iter().map(|(l, _)| (*l as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|(_, t)| t.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[derive(Debug, Clone, Serialize)]
pub struct ImplSummary {
    /// `None` when fewer than two lengths fall in the fit range.
    pub slope: Option<f64>,
    pub fit_lengths: Vec<usize>,
    pub workspace_bytes: BTreeMap<usize, usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchSummary {
    pub precision: &'static str,
    pub channels: usize,
    pub batch: usize,
    pub attn_batch: usize,
    pub reps: usize,
    pub fit_min_len: usize,
    pub impls: BTreeMap<&'static str, ImplSummary>,
}

pub fn summarize_records<T: BenchFloat>(cfg: &BenchConfig, records: &[BenchRecord], precision: &'static str) -> BenchSummary {
    let mut impls = BTreeMap::new();
    for &imp in &cfg.impls {
        let mine: Vec<&BenchRecord> = records.iter().filter(|r| r.implementation == imp).collect();
        let fit: Vec<(usize, f64)> = mine
            .iter()
            .filter(|r| r.seq_len >= cfg.fit_min_len)
            .map(|r| (r.seq_len, r.median_ms))
            .collect();
        impls.insert(
            imp.name(),
            ImplSummary {
                slope: loglog_slope(&fit),
                fit_lengths: fit.iter().map(|p| p.0).collect(),
                workspace_bytes: mine
                    .iter()
                    .map(|r| (r.seq_len, workspace_bytes::<T>(imp, cfg.channels, r.seq_len)))
                    .collect(),
            },
        );
    }
    BenchSummary {
        precision,
        channels: cfg.channels,
        batch: cfg.batch,
        attn_batch: cfg.attn_batch,
        reps: cfg.reps,
        fit_min_len: cfg.fit_min_len,
        impls,
    }
}

pub fn records_csv(records: &[BenchRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}
