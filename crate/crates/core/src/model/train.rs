use serde::{Deserialize, Serialize};

use super::classifier::{EvalStats, Model, ModelConfig};
use super::optim::{Optimizer, OptimizerKind};
use crate::error::{Error, Result};
use crate::tasks::{gen_indexed_batch, Batch, TaskSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    /// Mixed with the task seed to key the training and evaluation streams.
    pub seed: u64,
    pub eval_every: usize,
    pub eval_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 32,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::default(),
            seed: 0,
            eval_every: 100,
            eval_size: 256,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidConfig("steps must be >= 1".into()));
        }
        if self.batch_size == 0 || self.eval_size == 0 || self.eval_every == 0 {
            return Err(Error::InvalidConfig("batch_size, eval_size and eval_every must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning rate must be >= 0, got {}", self.learning_rate)));
        }
        Ok(())
    }
}

/// One evaluation point. `loss`/`acc` are measured on the fixed evaluation
/// set; `train_loss` is the mean minibatch loss since the previous entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: usize,
    pub loss: f64,
    pub acc: f64,
    pub train_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: Vec<LogEntry>,
    pub model: Model,
}

impl TrainOutcome {
    pub fn final_entry(&self) -> &LogEntry {
        self.log.last().expect("log has at least the initial entry")
    }
}

const EVAL_STREAM: u64 = u64::MAX;

fn data_spec(task: &TaskSpec, cfg: &TrainConfig) -> TaskSpec {
    TaskSpec {
        seed: task.seed ^ cfg.seed.rotate_left(17),
        ..task.clone()
    }
}

/// The fixed evaluation set used by [`train`].
pub fn eval_set(task: &TaskSpec, cfg: &TrainConfig) -> Result<Batch> {
    gen_indexed_batch(&data_spec(task, cfg), cfg.eval_size, EVAL_STREAM)
}

/// Evaluates in chunks of `chunk` samples and averages.
pub fn evaluate_chunked(model: &Model, batch: &Batch, chunk: usize) -> Result<EvalStats> {
    let n = batch.inputs.batch();
    let (mut loss, mut acc) = (0.0, 0.0);
    for s in (0..n).step_by(chunk.max(1)) {
        let e = (s + chunk).min(n);
        let st = model.evaluate(&batch.slice(s, e))?;
        loss += st.loss * (e - s) as f64;
        acc += st.accuracy * (e - s) as f64;
    }
    Ok(EvalStats {
        loss: loss / n as f64,
        accuracy: acc / n as f64,
    })
}

fn check_compatible(task: &TaskSpec, config: &ModelConfig) -> Result<()> {
    task.validate()?;
    if config.input != task.input_spec()
        || config.outputs != task.output_dim()
        || config.objective != task.objective()
        || config.seq_len != task.seq_len
    {
        return Err(Error::InvalidConfig(format!(
            "model (input {:?}, outputs {}, {:?}, L={}) does not fit task {:?} (input {:?}, outputs {}, {:?}, L={})",
            config.input,
            config.outputs,
            config.objective,
            config.seq_len,
            task.kind,
            task.input_spec(),
            task.output_dim(),
            task.objective(),
            task.seq_len
        )));
    }
    Ok(())
}

/// Initializes a model from `model_cfg` and trains it on `task`.
pub fn train(task: &TaskSpec, model_cfg: &ModelConfig, train_cfg: &TrainConfig) -> Result<TrainOutcome> {
    check_compatible(task, model_cfg)?;
    train_model(task, Model::new(model_cfg.clone())?, train_cfg)
}

/// Continues training an existing model. Optimizer state starts fresh.
pub fn train_model(task: &TaskSpec, mut model: Model, cfg: &TrainConfig) -> Result<TrainOutcome> {
    check_compatible(task, &model.config)?;
    cfg.validate()?;
    let spec = data_spec(task, cfg);
    let eval = eval_set(task, cfg)?;
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate)?;

    let initial = evaluate_chunked(&model, &eval, cfg.batch_size)?;
    let mut log = vec![LogEntry {
        step: 0,
        loss: initial.loss,
        acc: initial.accuracy,
        train_loss: None,
    }];
    let (mut window_loss, mut window_n) = (0.0, 0usize);
    for step in 1..=cfg.steps {
        let batch = gen_indexed_batch(&spec, cfg.batch_size, step as u64)?;
        let (loss, grads) = model.loss_and_grad(&batch)?;
        if !loss.is_finite() || !grads.is_finite() {
            return Err(Error::Diverged { step, loss });
        }
        window_loss += loss;
        window_n += 1;
        opt.step(model.state.trainable_mut(), grads.tensors());

        if step % cfg.eval_every == 0 || step == cfg.steps {
            let st = evaluate_chunked(&model, &eval, cfg.batch_size)?;
            if !st.loss.is_finite() {
                return Err(Error::Diverged { step, loss: st.loss });
            }
            log.push(LogEntry {
                step,
                loss: st.loss,
                acc: st.accuracy,
                train_loss: Some(window_loss / window_n as f64),
            });
            window_loss = 0.0;
            window_n = 0;
        }
    }
    Ok(TrainOutcome { log, model })
}
