use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::block::{block_backward, block_forward_cached, Activation, BlockCache, BlockConfig, BlockGrads, BlockParams};
use crate::error::{Error, Result};
use crate::fftconv::ConvPlan;
use crate::kernelgen::KernelConfig;
use crate::tasks::{Batch, InputSpec, Inputs, Labels, Objective};
use crate::tensor::Tensor3;

/// Regression predictions within this distance of the target count as
/// correct.
pub const REGRESSION_TOLERANCE: f64 = 0.04;

/// Samples per independently processed chunk in [`Model::loss_and_grad`].
/// Chunk sums are combined in a fixed order, so results do not depend on
/// the number of worker threads.
pub const MICRO_BATCH: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    Mean,
    Last,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input: InputSpec,
    pub channels: usize,
    pub seq_len: usize,
    pub depth: usize,
    /// Template for every block's kernel; `channels`/`seq_len` must match
    /// and the seed is re-derived per block.
    pub kernel: KernelConfig,
    pub activation: Activation,
    pub readout: Readout,
    pub outputs: usize,
    pub objective: Objective,
    pub seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::InvalidConfig("model depth must be >= 1".into()));
        }
        if self.outputs == 0 {
            return Err(Error::InvalidConfig("model needs at least one output".into()));
        }
        if self.objective == Objective::MeanSquared && self.outputs != 1 {
            return Err(Error::InvalidConfig("mean-squared objective needs exactly one output".into()));
        }
        if self.objective == Objective::CrossEntropy && self.outputs < 2 {
            return Err(Error::InvalidConfig("cross-entropy objective needs >= 2 classes".into()));
        }
        match self.input {
            InputSpec::Tokens { vocab: 0 } | InputSpec::Signals { dims: 0 } => {
                return Err(Error::InvalidConfig("empty input vocabulary/dimension".into()))
            }
            _ => {}
        }
        self.block_config(0).validate()
    }

    pub fn block_config(&self, index: usize) -> BlockConfig {
        let seed = self
            .seed
            .wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        BlockConfig {
            channels: self.channels,
            seq_len: self.seq_len,
            kernel: KernelConfig {
                seq_len: self.seq_len,
                channels: self.channels,
                seed,
                ..self.kernel.clone()
            },
            mix_dim: self.channels,
            activation: self.activation,
        }
    }

    fn embed_len(&self) -> usize {
        match self.input {
            InputSpec::Tokens { vocab } => vocab * self.channels,
            InputSpec::Signals { dims } => dims * self.channels,
        }
    }
}

/// All model parameters. Token embeddings are `vocab × H`; signal
/// projections are `H × dims`. The head is `outputs × H`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub embed: Vec<f64>,
    pub embed_bias: Vec<f64>,
    pub blocks: Vec<BlockParams>,
    pub head_weight: Vec<f64>,
    pub head_bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub embed: Vec<f64>,
    pub embed_bias: Vec<f64>,
    pub blocks: Vec<BlockGrads>,
    pub head_weight: Vec<f64>,
    pub head_bias: Vec<f64>,
}

impl ModelState {
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let h = config.channels;
        let embed_std = match config.input {
            InputSpec::Tokens { .. } => 1.0,
            InputSpec::Signals { dims } => 1.0 / (dims as f64).sqrt(),
        };
        let normal = Normal::new(0.0, embed_std).expect("valid std");
        let embed = (0..config.embed_len()).map(|_| normal.sample(&mut rng)).collect();
        let blocks = (0..config.depth)
            .map(|i| BlockParams::init(&config.block_config(i), &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let head = Normal::new(0.0, 0.01).expect("valid std");
        let head_weight = (0..config.outputs * h).map(|_| head.sample(&mut rng)).collect();
        Ok(Self {
            embed,
            embed_bias: vec![0.0; h],
            blocks,
            head_weight,
            head_bias: vec![0.0; config.outputs],
        })
    }

    /// Trainable tensors in declaration order.
    pub fn trainable(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = vec![&self.embed, &self.embed_bias];
        for b in &self.blocks {
            v.extend(b.trainable());
        }
        v.push(&self.head_weight);
        v.push(&self.head_bias);
        v
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = vec![&mut self.embed, &mut self.embed_bias];
        for b in &mut self.blocks {
            v.extend(b.trainable_mut());
        }
        v.push(&mut self.head_weight);
        v.push(&mut self.head_bias);
        v
    }

    /// Every stored tensor, frozen kernel buffers included, in declaration
    /// order. This is the checkpoint layout.
    pub fn all_tensors(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = vec![&self.embed, &self.embed_bias];
        for b in &self.blocks {
            v.extend(b.all_tensors());
        }
        v.push(&self.head_weight);
        v.push(&self.head_bias);
        v
    }

    pub fn all_tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = vec![&mut self.embed, &mut self.embed_bias];
        for b in &mut self.blocks {
            v.extend(b.all_tensors_mut());
        }
        v.push(&mut self.head_weight);
        v.push(&mut self.head_bias);
        v
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.trainable().concat()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        let total: usize = self.trainable().iter().map(|t| t.len()).sum();
        if flat.len() != total {
            return Err(Error::shape("flat parameter vector", total, flat.len()));
        }
        let mut off = 0;
        for t in self.trainable_mut() {
            let n = t.len();
            t.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    pub fn check_shape(&self, config: &ModelConfig) -> Result<()> {
        let h = config.channels;
        for (what, len, want) in [
            ("embed", self.embed.len(), config.embed_len()),
            ("embed_bias", self.embed_bias.len(), h),
            ("blocks", self.blocks.len(), config.depth),
            ("head_weight", self.head_weight.len(), config.outputs * h),
            ("head_bias", self.head_bias.len(), config.outputs),
        ] {
            if len != want {
                return Err(Error::shape(what, want, len));
            }
        }
        for (i, b) in self.blocks.iter().enumerate() {
            b.check_shape(&config.block_config(i))?;
        }
        Ok(())
    }
}

impl ModelGrads {
    pub fn zeros_like(state: &ModelState) -> Self {
        Self {
            embed: vec![0.0; state.embed.len()],
            embed_bias: vec![0.0; state.embed_bias.len()],
            blocks: state.blocks.iter().map(BlockGrads::zeros_like).collect(),
            head_weight: vec![0.0; state.head_weight.len()],
            head_bias: vec![0.0; state.head_bias.len()],
        }
    }

    /// Same order as [`ModelState::trainable`].
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = vec![&self.embed, &self.embed_bias];
        for b in &self.blocks {
            v.extend(b.tensors());
        }
        v.push(&self.head_weight);
        v.push(&self.head_bias);
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = vec![&mut self.embed, &mut self.embed_bias];
        for b in &mut self.blocks {
            v.extend(b.tensors_mut());
        }
        v.push(&mut self.head_weight);
        v.push(&mut self.head_bias);
        v
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    fn add_assign(&mut self, other: &ModelGrads) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.iter_mut().zip(b).for_each(|(a, b)| *a += b);
        }
    }

    fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalStats {
    pub loss: f64,
    pub accuracy: f64,
}

/// A configured model with its parameters and FFT plan.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub state: ModelState,
    plan: ConvPlan<f64>,
}

struct ForwardTrace {
    embedded: Tensor3<f64>,
    caches: Vec<BlockCache>,
    features: Tensor3<f64>,
    pooled: Vec<f64>,
    outputs: Vec<f64>,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        let state = ModelState::init(&config)?;
        Self::from_state(config, state)
    }

    pub fn from_state(config: ModelConfig, state: ModelState) -> Result<Self> {
        config.validate()?;
        state.check_shape(&config)?;
        let plan = ConvPlan::new(config.seq_len)?;
        Ok(Self { config, state, plan })
    }

    pub fn plan(&self) -> &ConvPlan<f64> {
        &self.plan
    }

    fn embed(&self, inputs: &Inputs) -> Result<Tensor3<f64>> {
        let (h, l) = (self.config.channels, self.config.seq_len);
        if inputs.len() != l {
            return Err(Error::shape("input length", l, inputs.len()));
        }
        let s = &self.state;
        match (self.config.input, inputs) {
            (InputSpec::Tokens { vocab }, Inputs::Tokens { batch, ids, .. }) => {
                if let Some(&bad) = ids.iter().find(|&&t| t >= vocab) {
                    return Err(Error::InvalidArgument(format!("token id {bad} out of range for vocabulary {vocab}")));
                }
                let mut x = Tensor3::zeros([*batch, h, l]);
                for b in 0..*batch {
                    let row = &ids[b * l..(b + 1) * l];
                    for c in 0..h {
                        let bias = s.embed_bias[c];
                        x.row_mut(b, c)
                            .iter_mut()
                            .zip(row)
                            .for_each(|(v, &t)| *v = s.embed[t * h + c] + bias);
                    }
                }
                Ok(x)
            }
            (InputSpec::Signals { dims }, Inputs::Signals(sig)) => {
                if sig.channels() != dims {
                    return Err(Error::shape("signal dims", dims, sig.channels()));
                }
                let mut x = Tensor3::zeros([sig.batch(), h, l]);
                for b in 0..sig.batch() {
                    for c in 0..h {
                        let bias = s.embed_bias[c];
                        let out = x.row_mut(b, c);
                        out.fill(bias);
                        for j in 0..dims {
                            let w = s.embed[c * dims + j];
                            out.iter_mut().zip(sig.row(b, j)).for_each(|(o, v)| *o += w * v);
                        }
                    }
                }
                Ok(x)
            }
            _ => Err(Error::InvalidArgument("input kind does not match model input spec".into())),
        }
    }

    fn forward_trace(&self, inputs: &Inputs) -> Result<ForwardTrace> {
        let embedded = self.embed(inputs)?;
        let mut caches = Vec::with_capacity(self.config.depth);
        let mut x = embedded.clone();
        for (i, p) in self.state.blocks.iter().enumerate() {
            let (y, cache) = block_forward_cached(&x, p, &self.config.block_config(i), &self.plan)?;
            caches.push(cache);
            x = y;
        }
        let [b, h, l] = x.shape();
        let mut pooled = vec![0.0; b * h];
        for bi in 0..b {
            for c in 0..h {
                let row = x.row(bi, c);
                pooled[bi * h + c] = match self.config.readout {
                    Readout::Mean => row.iter().sum::<f64>() / l as f64,
                    Readout::Last => row[l - 1],
                };
            }
        }
        let o = self.config.outputs;
        let s = &self.state;
        let mut outputs = vec![0.0; b * o];
        for bi in 0..b {
            let p = &pooled[bi * h..(bi + 1) * h];
            for k in 0..o {
                let w = &s.head_weight[k * h..(k + 1) * h];
                outputs[bi * o + k] = s.head_bias[k] + w.iter().zip(p).map(|(w, p)| w * p).sum::<f64>();
            }
        }
        Ok(ForwardTrace {
            embedded,
            caches,
            features: x,
            pooled,
            outputs,
        })
    }

    /// `batch × outputs` logits (or regression outputs).
    pub fn logits(&self, inputs: &Inputs) -> Result<Vec<f64>> {
        Ok(self.forward_trace(inputs)?.outputs)
    }

    fn check_labels(&self, inputs: &Inputs, labels: &Labels) -> Result<()> {
        if labels.len() != inputs.batch() {
            return Err(Error::shape("labels", inputs.batch(), labels.len()));
        }
        match (self.config.objective, labels) {
            (Objective::CrossEntropy, Labels::Classes(c)) => {
                if let Some(&bad) = c.iter().find(|&&c| c >= self.config.outputs) {
                    return Err(Error::InvalidArgument(format!("class label {bad} out of range")));
                }
                Ok(())
            }
            (Objective::MeanSquared, Labels::Values(_)) => Ok(()),
            _ => Err(Error::InvalidArgument("label kind does not match objective".into())),
        }
    }

    /// Summed per-sample loss and its gradient with respect to the outputs.
    fn loss_terms(&self, outputs: &[f64], labels: &Labels) -> (f64, Vec<f64>, usize) {
        let o = self.config.outputs;
        let mut total = 0.0;
        let mut correct = 0;
        let mut d_out = vec![0.0; outputs.len()];
        match labels {
            Labels::Classes(classes) => {
                for (b, &y) in classes.iter().enumerate() {
                    let z = &outputs[b * o..(b + 1) * o];
                    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let sum_exp: f64 = z.iter().map(|v| (v - max).exp()).sum();
                    total += max + sum_exp.ln() - z[y];
                    for k in 0..o {
                        d_out[b * o + k] = (z[k] - max).exp() / sum_exp - f64::from(u8::from(k == y));
                    }
                    let argmax = (0..o).fold(0, |best, k| if z[k] > z[best] { k } else { best });
                    correct += usize::from(argmax == y);
                }
            }
            Labels::Values(values) => {
                for (b, &y) in values.iter().enumerate() {
                    let e = outputs[b] - y;
                    total += e * e;
                    d_out[b] = 2.0 * e;
                    correct += usize::from(e.abs() < REGRESSION_TOLERANCE);
                }
            }
        }
        (total, d_out, correct)
    }

    pub fn evaluate(&self, batch: &Batch) -> Result<EvalStats> {
        self.check_labels(&batch.inputs, &batch.labels)?;
        let n = batch.inputs.batch();
        if n == 0 {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let outputs = self.logits(&batch.inputs)?;
        let (total, _, correct) = self.loss_terms(&outputs, &batch.labels);
        Ok(EvalStats {
            loss: total / n as f64,
            accuracy: correct as f64 / n as f64,
        })
    }

    /// Mean loss over the batch.
    pub fn loss(&self, batch: &Batch) -> Result<f64> {
        Ok(self.evaluate(batch)?.loss)
    }

    fn chunk_loss_and_grad(&self, batch: &Batch) -> Result<(f64, ModelGrads)> {
        let trace = self.forward_trace(&batch.inputs)?;
        let (total, d_out, _) = self.loss_terms(&trace.outputs, &batch.labels);
        let (h, l, o) = (self.config.channels, self.config.seq_len, self.config.outputs);
        let nb = batch.inputs.batch();
        let s = &self.state;
        let mut g = ModelGrads::zeros_like(s);

        // head and readout
        let mut d_feat = Tensor3::zeros(trace.features.shape());
        for b in 0..nb {
            let p = &trace.pooled[b * h..(b + 1) * h];
            let mut d_pool = vec![0.0; h];
            for k in 0..o {
                let d = d_out[b * o + k];
                g.head_bias[k] += d;
                for c in 0..h {
                    g.head_weight[k * h + c] += d * p[c];
                    d_pool[c] += d * s.head_weight[k * h + c];
                }
            }
            for c in 0..h {
                let row = d_feat.row_mut(b, c);
                match self.config.readout {
                    Readout::Mean => row.fill(d_pool[c] / l as f64),
                    Readout::Last => row[l - 1] = d_pool[c],
                }
            }
        }

        let mut dx = d_feat;
        for i in (0..self.config.depth).rev() {
            dx = block_backward(
                &dx,
                &trace.caches[i],
                &s.blocks[i],
                &self.config.block_config(i),
                &self.plan,
                &mut g.blocks[i],
            )?;
        }

        // embedding
        for c in 0..h {
            g.embed_bias[c] += (0..nb).map(|b| dx.row(b, c).iter().sum::<f64>()).sum::<f64>();
        }
        match &batch.inputs {
            Inputs::Tokens { ids, .. } => {
                for b in 0..nb {
                    let row = &ids[b * l..(b + 1) * l];
                    for c in 0..h {
                        for (&t, d) in row.iter().zip(dx.row(b, c)) {
                            g.embed[t * h + c] += d;
                        }
                    }
                }
            }
            Inputs::Signals(sig) => {
                let dims = sig.channels();
                for b in 0..nb {
                    for c in 0..h {
                        let d = dx.row(b, c);
                        for j in 0..dims {
                            g.embed[c * dims + j] += d.iter().zip(sig.row(b, j)).map(|(d, v)| d * v).sum::<f64>();
                        }
                    }
                }
            }
        }
        debug_assert_eq!(trace.embedded.shape(), dx.shape());
        Ok((total, g))
    }

    /// Mean loss over the batch and its gradient with respect to every
    /// trainable parameter.
    pub fn loss_and_grad(&self, batch: &Batch) -> Result<(f64, ModelGrads)> {
        self.check_labels(&batch.inputs, &batch.labels)?;
        let n = batch.inputs.batch();
        if n == 0 {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let starts: Vec<usize> = (0..n).step_by(MICRO_BATCH).collect();
        let parts = starts
            .par_iter()
            .map(|&s| self.chunk_loss_and_grad(&batch.slice(s, (s + MICRO_BATCH).min(n))))
            .collect::<Vec<_>>();
        let mut total = 0.0;
        let mut grads: Option<ModelGrads> = None;
        for part in parts {
            let (loss, g) = part?;
            total += loss;
            match grads.as_mut() {
                None => grads = Some(g),
                Some(acc) => acc.add_assign(&g),
            }
        }
        let mut grads = grads.expect("non-empty batch");
        let inv = 1.0 / n as f64;
        grads.scale(inv);
        Ok((total * inv, grads))
    }
}

/// Logits of a token classifier.
pub fn classifier_forward(tokens: &Inputs, model: &Model) -> Result<Vec<f64>> {
    model.logits(tokens)
}
