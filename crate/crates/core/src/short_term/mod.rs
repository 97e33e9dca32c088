//! Single-task deep Q-learning.

pub mod dqn;
pub mod qnet;
pub mod replay;

pub use dqn::{
    argmax, dqn_loss, select_action, taken_action_loss, td_target, td_targets, train_stm,
    DqnLearner, StmConfig, StmEval, StmOutcome,
};
pub use qnet::{QFunction, QNetwork, DEFAULT_HIDDEN, HIDDEN_SLOPE};
pub use replay::{ReplayBuffer, Transition};
