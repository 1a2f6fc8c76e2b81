//! Synthetic long-range tasks.
//!
//! * `first_token_recall`: token 0 is a class symbol in `0..C`, every other
//!   position is a distractor from the disjoint noise alphabet `C..2C`; the
//!   label is the class of token 0.
//! * `adding_problem`: two input channels, uniform values in `[0, 1)` and a
//!   0/1 marker that flags exactly two positions; the target is the sum of
//!   the two flagged values.
//! * `sparse_majority`: `k` (odd) flagged positions carry a vote token for
//!   −1 or +1, the rest are noise tokens; the label is `1` iff the votes sum
//!   to a positive number.

use std::io::Write;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    FirstTokenRecall,
    AddingProblem,
    SparseMajority,
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "first_token_recall" => Ok(Self::FirstTokenRecall),
            "adding_problem" => Ok(Self::AddingProblem),
            "sparse_majority" => Ok(Self::SparseMajority),
            _ => Err(Error::InvalidArgument(format!("unknown task {s:?}"))),
        }
    }
}

/// Vote tokens for `sparse_majority`.
pub const VOTE_NEG: usize = 0;
pub const VOTE_POS: usize = 1;
/// Number of distinct noise symbols in `sparse_majority`.
pub const MAJORITY_NOISE: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub seq_len: usize,
    /// Class count (`first_token_recall`, `sparse_majority`); unused by the
    /// regression task beyond validation.
    pub classes: usize,
    /// Flagged positions in `sparse_majority`.
    pub votes: usize,
    pub seed: u64,
}

/// What the model consumes for a task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputSpec {
    Tokens { vocab: usize },
    Signals { dims: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    CrossEntropy,
    MeanSquared,
}

impl TaskSpec {
    pub fn new(kind: TaskKind, seq_len: usize) -> Self {
        Self {
            kind,
            seq_len,
            classes: match kind {
                TaskKind::FirstTokenRecall => 4,
                _ => 2,
            },
            votes: 5,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seq_len < 2 {
            return Err(Error::InvalidConfig(format!("task seq_len must be >= 2, got {}", self.seq_len)));
        }
        if self.classes < 2 {
            return Err(Error::InvalidConfig(format!("task classes must be >= 2, got {}", self.classes)));
        }
        if self.kind == TaskKind::SparseMajority {
            if self.classes != 2 {
                return Err(Error::InvalidConfig("sparse_majority is a two-class task".into()));
            }
            if self.votes.is_multiple_of(2) || self.votes > self.seq_len {
                return Err(Error::InvalidConfig(format!(
                    "sparse_majority needs an odd vote count <= seq_len, got {}",
                    self.votes
                )));
            }
        }
        Ok(())
    }

    pub fn input_spec(&self) -> InputSpec {
        match self.kind {
            TaskKind::FirstTokenRecall => InputSpec::Tokens { vocab: 2 * self.classes },
            TaskKind::SparseMajority => InputSpec::Tokens { vocab: 2 + MAJORITY_NOISE },
            TaskKind::AddingProblem => InputSpec::Signals { dims: 2 },
        }
    }

    pub fn objective(&self) -> Objective {
        match self.kind {
            TaskKind::AddingProblem => Objective::MeanSquared,
            _ => Objective::CrossEntropy,
        }
    }

    /// Width of the model output: class logits, or one regression value.
    pub fn output_dim(&self) -> usize {
        match self.kind {
            TaskKind::AddingProblem => 1,
            _ => self.classes,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Inputs {
    /// `batch × len` token ids, row-major.
    Tokens { batch: usize, len: usize, ids: Vec<usize> },
    /// `batch × dims × len` real-valued channels.
    Signals(Tensor3<f64>),
}

impl Inputs {
    pub fn batch(&self) -> usize {
        match self {
            Inputs::Tokens { batch, .. } => *batch,
            Inputs::Signals(t) => t.batch(),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Inputs::Tokens { len, .. } => *len,
            Inputs::Signals(t) => t.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.batch() == 0
    }

    /// Rows `start..end` as a new batch.
    pub fn slice(&self, start: usize, end: usize) -> Inputs {
        match self {
            Inputs::Tokens { len, ids, .. } => Inputs::Tokens {
                batch: end - start,
                len: *len,
                ids: ids[start * len..end * len].to_vec(),
            },
            Inputs::Signals(t) => {
                let [_, c, l] = t.shape();
                let data = t.data()[start * c * l..end * c * l].to_vec();
                Inputs::Signals(Tensor3::from_vec([end - start, c, l], data).expect("slice shape"))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    Classes(Vec<usize>),
    Values(Vec<f64>),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Classes(v) => v.len(),
            Labels::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn slice(&self, start: usize, end: usize) -> Labels {
        match self {
            Labels::Classes(v) => Labels::Classes(v[start..end].to_vec()),
            Labels::Values(v) => Labels::Values(v[start..end].to_vec()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Inputs,
    pub labels: Labels,
}

impl Batch {
    pub fn slice(&self, start: usize, end: usize) -> Batch {
        Batch {
            inputs: self.inputs.slice(start, end),
            labels: self.labels.slice(start, end),
        }
    }
}

/// Draws `batch` samples of `spec` from `rng`.
pub fn gen_batch<R: Rng + ?Sized>(spec: &TaskSpec, batch: usize, rng: &mut R) -> Result<Batch> {
    spec.validate()?;
    let l = spec.seq_len;
    match spec.kind {
        TaskKind::FirstTokenRecall => {
            let c = spec.classes;
            let mut ids = Vec::with_capacity(batch * l);
            let mut labels = Vec::with_capacity(batch);
            for _ in 0..batch {
                let class = rng.random_range(0..c);
                labels.push(class);
                ids.push(class);
                ids.extend((1..l).map(|_| c + rng.random_range(0..c)));
            }
            Ok(Batch {
                inputs: Inputs::Tokens { batch, len: l, ids },
                labels: Labels::Classes(labels),
            })
        }
        TaskKind::SparseMajority => {
            let mut ids = Vec::with_capacity(batch * l);
            let mut labels = Vec::with_capacity(batch);
            for _ in 0..batch {
                let start = ids.len();
                ids.extend((0..l).map(|_| 2 + rng.random_range(0..MAJORITY_NOISE)));
                let mut total = 0i64;
                for p in sample(rng, l, spec.votes) {
                    let positive = rng.random_bool(0.5);
                    ids[start + p] = if positive { VOTE_POS } else { VOTE_NEG };
                    total += if positive { 1 } else { -1 };
                }
                labels.push(usize::from(total > 0));
            }
            Ok(Batch {
                inputs: Inputs::Tokens { batch, len: l, ids },
                labels: Labels::Classes(labels),
            })
        }
        TaskKind::AddingProblem => {
            let mut x = Tensor3::zeros([batch, 2, l]);
            let mut labels = Vec::with_capacity(batch);
            for b in 0..batch {
                for v in x.row_mut(b, 0) {
                    *v = rng.random::<f64>();
                }
                let flagged = sample(rng, l, 2);
                let mut sum = 0.0;
                for p in flagged {
                    x.row_mut(b, 1)[p] = 1.0;
                    sum += x.row(b, 0)[p];
                }
                labels.push(sum);
            }
            Ok(Batch {
                inputs: Inputs::Signals(x),
                labels: Labels::Values(labels),
            })
        }
    }
}

/// The `index`-th batch of a deterministic stream keyed by `spec.seed`.
pub fn gen_indexed_batch(spec: &TaskSpec, batch: usize, index: u64) -> Result<Batch> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index);
    gen_batch(spec, batch, &mut rng)
}

/// Label value re-derived from one sample's inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Label {
    Class(usize),
    Value(f64),
}

/// Recomputes the label of sample `b` from its inputs alone. Returns `None`
/// if the sample is malformed for the task.
pub fn derive_label(spec: &TaskSpec, inputs: &Inputs, b: usize) -> Option<Label> {
    match (spec.kind, inputs) {
        (TaskKind::FirstTokenRecall, Inputs::Tokens { len, ids, .. }) => {
            let row = &ids[b * len..(b + 1) * len];
            let c = spec.classes;
            let distractors_ok = row[1..].iter().all(|&t| (c..2 * c).contains(&t));
            (row[0] < c && distractors_ok).then_some(Label::Class(row[0]))
        }
        (TaskKind::SparseMajority, Inputs::Tokens { len, ids, .. }) => {
            let row = &ids[b * len..(b + 1) * len];
            let mut votes = 0usize;
            let mut total = 0i64;
            for &t in row {
                match t {
                    VOTE_NEG => {
                        votes += 1;
                        total -= 1
                    }
                    VOTE_POS => {
                        votes += 1;
                        total += 1
                    }
                    t if t < 2 + MAJORITY_NOISE => {}
                    _ => return None,
                }
            }
            (votes == spec.votes).then_some(Label::Class(usize::from(total > 0)))
        }
        (TaskKind::AddingProblem, Inputs::Signals(x)) => {
            let values = x.row(b, 0);
            let markers = x.row(b, 1);
            if markers.iter().filter(|&&m| m == 1.0).count() != 2 || markers.iter().any(|&m| m != 0.0 && m != 1.0) {
                return None;
            }
            Some(Label::Value(
                values.iter().zip(markers).filter(|(_, &m)| m == 1.0).map(|(v, _)| v).sum(),
            ))
        }
        _ => None,
    }
}

/// Writes one JSON object per sample: `{"input": [...], "label": ...}`.
/// Signal inputs are written as `[value, marker]` pairs per position.
pub fn dump_jsonl<W: Write>(batch: &Batch, mut out: W) -> Result<()> {
    for b in 0..batch.inputs.batch() {
        let input = match &batch.inputs {
            Inputs::Tokens { len, ids, .. } => serde_json::json!(ids[b * len..(b + 1) * len]),
            Inputs::Signals(x) => {
                let pairs: Vec<Vec<f64>> = (0..x.len()).map(|p| (0..x.channels()).map(|c| x.get(b, c, p)).collect()).collect();
                serde_json::json!(pairs)
            }
        };
        let label = match &batch.labels {
            Labels::Classes(v) => serde_json::json!(v[b]),
            Labels::Values(v) => serde_json::json!(v[b]),
        };
        serde_json::to_writer(&mut out, &serde_json::json!({ "input": input, "label": label }))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
