//! Offline pretraining and the online actor/learner loop.

pub mod buffers;
pub mod offline;
pub mod online;
pub mod train;

pub use buffers::{ParameterBuffer, ReplayBuffer, SnapshotInfo, Transition, DEFAULT_REPLAY_CAPACITY};
pub use offline::{
    build_offline_dataset, load_dataset, observed_normal_std, offline_labels, save_dataset, DatasetSpec,
    LabelConfig, OfflineSample,
};
pub use online::{online_step, run_async, run_sync, GraspRecord, OnlineConfig, OnlineRun, SceneSource, StepOutcome};
pub use train::{
    actor_regression_grad, actor_sample_grad, critic_sample_grad, learner_update, pretrain, MemberTrainer,
    TrainConfig, UpdateStats,
};
