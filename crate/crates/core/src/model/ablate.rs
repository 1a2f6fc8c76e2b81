use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::classifier::ModelConfig;
use super::train::{train, TrainConfig};
use crate::error::{Error, Result};
use crate::kernelgen::KernelMode;
use crate::tasks::TaskSpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationPoint {
    pub t: f64,
    pub d: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub t: f64,
    pub d: usize,
    pub accuracy: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub t: f64,
    pub d: usize,
    pub mean_accuracy: f64,
    pub runs: usize,
}

/// Decay sweep `t ∈ {0, 0.5, 1, 2}` at `d = 8`, then dimension sweep
/// `d ∈ {1, 8, 64}` at `t = 1`.
pub fn default_grid() -> Vec<AblationPoint> {
    let mut grid: Vec<_> = [0.0, 0.5, 1.0, 2.0].iter().map(|&t| AblationPoint { t, d: 8 }).collect();
    grid.extend([1, 8, 64].iter().map(|&d| AblationPoint { t: 1.0, d }));
    grid
}

/// Trains one disentangled-mode model per `(grid point, seed)` and reports
/// the final evaluation accuracy. Every grid point sees the same seeds for
/// data, initialization and batching. Repeated points are trained once.
pub fn ablate_decay(
    task: &TaskSpec,
    grid: &[AblationPoint],
    base: &ModelConfig,
    train_cfg: &TrainConfig,
    seeds: &[u64],
) -> Result<Vec<AblationRow>> {
    if base.kernel.mode != KernelMode::Disentangled {
        return Err(Error::InvalidConfig("decay ablation requires the disentangled kernel".into()));
    }
    if grid.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidConfig("ablation needs at least one grid point and one seed".into()));
    }
    let mut done: BTreeMap<(u64, usize, u64), f64> = BTreeMap::new();
    let mut rows = Vec::with_capacity(grid.len() * seeds.len());
    for &seed in seeds {
        for p in grid {
            let key = (p.t.to_bits(), p.d, seed);
            let accuracy = match done.get(&key) {
                Some(&a) => a,
                None => {
                    let mut model = base.clone();
                    model.kernel.decay_t = p.t;
                    model.kernel.scale_dim = p.d;
                    model.seed = seed;
                    let task = TaskSpec { seed, ..task.clone() };
                    let cfg = TrainConfig { seed, ..train_cfg.clone() };
                    let a = train(&task, &model, &cfg)?.final_entry().acc;
                    done.insert(key, a);
                    a
                }
            };
            rows.push(AblationRow {
                t: p.t,
                d: p.d,
                accuracy,
                seed,
            });
        }
    }
    Ok(rows)
}

/// Mean accuracy per distinct `(t, d)`, in first-appearance order.
pub fn summarize(rows: &[AblationRow]) -> Vec<AblationSummary> {
    let mut out: Vec<AblationSummary> = Vec::new();
    for r in rows {
        match out.iter_mut().find(|s| s.t == r.t && s.d == r.d) {
            Some(s) => {
                s.mean_accuracy += r.accuracy;
                s.runs += 1;
            }
            None => out.push(AblationSummary {
                t: r.t,
                d: r.d,
                mean_accuracy: r.accuracy,
                runs: 1,
            }),
        }
    }
    for s in &mut out {
        s.mean_accuracy /= s.runs as f64;
    }
    out
}
