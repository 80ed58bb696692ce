//! Single-task, multi-task, Oracle and readout-fitting loops, the adaptive
//! learning-rate schedule, and the surrogate neural-response pipeline.

mod config;
mod engine;
mod optim;
mod responses;
mod schedule;
mod teacher;

pub use config::{BatchRatio, TaskOptim, TrainConfig};
pub use engine::{
    accumulate_gradients, apply_bn, consistency_penalty, fit_readout_on_frozen_trunk,
    generate_surrogate_responses, metrics_jsonl, oracle_batch, oracle_gradients, oracle_phase1,
    oracle_phase2,
    train_mtl, train_oracle, train_single_task, BnObservation, ClassBatch, EpochRecord,
    NeuralBatch, NeuralLoss, NeuralPairs, OracleBatch, StepGradients, StepSpec, Task, Teacher,
    TrainData, TrainOutcome,
};
pub use optim::{add_grads, GradMap, Optimizer, OptimizerKind};
pub use responses::{digest_bytes, shuffle_responses, NeuralResponseSet, RESPONSE_SET_VERSION};
pub use schedule::{lr_schedule_step, ScheduleAction, ScheduleConfig, ScheduleState};
pub use teacher::{elu_plus_one, GaborBank, GaborCell};
