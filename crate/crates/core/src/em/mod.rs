//! EM training: posterior enumeration, the Q function, generalized M-steps
//! with momentum SGD, and the exact / non-overlapping / local block schedules.

mod blocks;
mod optim;
mod posterior;
mod trainer;

pub use blocks::{local_window, partition_blocks, sample_local_blocks, BlockSpec, LOCAL_BLOCKS, LOCAL_WIDTH};
pub use optim::sgd_momentum_update;
pub use posterior::{
    enumerate_configs, enumerate_posterior, posterior_with_grad, q_value, q_value_and_grad, q_value_per_config,
    Enumeration, PosteriorTable, DEFAULT_MAX_EXACT_N,
};
pub use trainer::{
    cem_impute, gem_step, indicator_recovery, label_accuracy, marginal_log_likelihood, select_learning_rate, train,
    train_exact_em, train_local_bootstrap, train_nonoverlap, EpochRecord, GemOutcome, GemSettings, LrChoice, Strategy,
    TrainConfig, TrainOutcome, TrainingSet, LR_GRID, MAX_HALVINGS, Q_SLACK,
};
