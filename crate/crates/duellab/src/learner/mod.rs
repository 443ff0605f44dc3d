//! Self-play learning machinery: the policy/value network and the PUCT
//! Monte Carlo tree search that turns its outputs into move probabilities.

pub mod mcts;
pub mod net;

pub use mcts::{Evaluator, Mcts, NetEvaluator, SearchNode, UniformEvaluator};
pub use net::{net_train, Example, Mode, NetConfig, NetError, PolicyValueNet, TrainHyper};
