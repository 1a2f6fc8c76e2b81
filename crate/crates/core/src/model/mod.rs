//! A minimal SGConv sequence model: token embedding or input projection,
//! a stack of residual SGConv blocks, pooling, and an affine head, trained
//! with hand-written gradients.

mod ablate;
mod block;
mod checkpoint;
mod classifier;
mod optim;
mod train;

pub use ablate::{ablate_decay, default_grid, summarize, AblationPoint, AblationRow, AblationSummary};
pub use block::{
    block_backward, block_forward, block_forward_cached, Activation, BlockCache, BlockConfig, BlockGrads, BlockParams,
};
pub use checkpoint::{checkpoint_bytes, read_checkpoint, write_checkpoint, MAGIC, VERSION};
pub use classifier::{
    classifier_forward, EvalStats, Model, ModelConfig, ModelGrads, ModelState, Readout, MICRO_BATCH,
    REGRESSION_TOLERANCE,
};
pub use optim::{Optimizer, OptimizerKind};
pub use train::{eval_set, evaluate_chunked, train, train_model, LogEntry, TrainConfig, TrainOutcome};
