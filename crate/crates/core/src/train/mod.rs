//! RMSProp training with a plateau learning-rate decay, checkpointing and
//! per-epoch CSV logs.

mod checkpoint;
mod optim;
mod run;
mod schedule;

pub use checkpoint::{
    encode_checkpoint, entry_names, load_checkpoint, read_checkpoint_spec, save_checkpoint, Checkpoint,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use optim::{rmsprop_step, RmsProp, StepReport, RMS_ALPHA, RMS_EPS};
pub use run::{
    check_dataset, evaluate, log_csv, train, EpochLog, TrainConfig, TrainOutcome, CHECKPOINT_FILE, LOG_FILE,
    LOG_HEADER,
};
pub use schedule::{lr_schedule, TrainState, LR_DECAYED, LR_INITIAL, MIN_IMPROVEMENT, PATIENCE};
