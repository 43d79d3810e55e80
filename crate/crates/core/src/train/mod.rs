//! Condition-aware minibatches, losses, learning-rate control and training.

mod loss;
mod mcs;
mod sampler;
mod schedule;
mod trainer;

pub use loss::{
    condition_loss, logmse, white_box_components, ConditionWeights, FinetunePreset, LossNodes, LossWeights,
    PreparedEntry,
};
pub use mcs::{McsMode, MinibatchConditionSplit};
pub use sampler::{excerpt_len, make_entry, sample_minibatch, supports, TrainEntry};
pub use schedule::{EpochDecision, LrController, StopReason, TrainSchedule};
pub use trainer::{
    history_csv, parse_history, EpochRecord, TrainConfig, TrainOutcome, Trainer, BEST_CHECKPOINT, HISTORY_FILE,
    LAST_CHECKPOINT,
};
