//! PUCT Monte Carlo tree search over the experiment-selection game.
//!
//! Each worker owns its own `Mcts` and search tree; the network it consults
//! is an immutable snapshot, so searches parallelize without locks. The
//! search itself is deterministic: ties in the selection rule break toward
//! the lowest action index, and all randomness (if any) lives in the
//! evaluator and in how the caller samples from the returned policy.

use std::collections::HashMap;

use thiserror::Error;

use crate::game::{self, ActionMask, GameConfig, GameError, GameState};
use crate::learner::net::{NetError, PolicyValueNet};
use crate::num::Float;

/// Keeps the exploration term nonzero at a freshly expanded node so the
/// priors decide the first descent.
const EXPLORE_EPS: f64 = 1.0e-8;

#[derive(Debug, Error)]
pub enum MctsError {
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Net(#[from] NetError),
}

/// Source of priors and state values during search.
pub trait Evaluator<T: Float> {
    /// Priors over the full action alphabet (zero on illegal entries) plus a
    /// value estimate, for a non-terminal state.
    fn evaluate(&self, cfg: &GameConfig, state: &GameState) -> Result<(Vec<T>, T), MctsError>;

    /// Value estimate alone. Must accept terminal states, which carry no
    /// legal actions; search leaves that end the game are scored this way.
    fn value_of(&self, cfg: &GameConfig, state: &GameState) -> Result<T, MctsError>;
}

impl<T: Float, E: Evaluator<T>> Evaluator<T> for &E {
    fn evaluate(&self, cfg: &GameConfig, state: &GameState) -> Result<(Vec<T>, T), MctsError> {
        (**self).evaluate(cfg, state)
    }

    fn value_of(&self, cfg: &GameConfig, state: &GameState) -> Result<T, MctsError> {
        (**self).value_of(cfg, state)
    }
}

/// Evaluator backed by a policy/value network snapshot.
pub struct NetEvaluator<'a, T> {
    net: &'a PolicyValueNet<T>,
}

impl<'a, T: Float> NetEvaluator<'a, T> {
    pub fn new(net: &'a PolicyValueNet<T>) -> Self {
        NetEvaluator { net }
    }
}

impl<T: Float> Evaluator<T> for NetEvaluator<'_, T> {
    fn evaluate(&self, cfg: &GameConfig, state: &GameState) -> Result<(Vec<T>, T), MctsError> {
        let legal = game::legal_actions(cfg, state)?;
        let x = game::encode_state::<T>(cfg, state);
        Ok(self.net.forward(&x, &legal)?)
    }

    fn value_of(&self, cfg: &GameConfig, state: &GameState) -> Result<T, MctsError> {
        Ok(self.net.value(&game::encode_state::<T>(cfg, state))?)
    }
}

/// Flat priors over legal actions, zero value everywhere. Handy baseline:
/// equivalent to a zero-weight network.
pub struct UniformEvaluator;

impl<T: Float> Evaluator<T> for UniformEvaluator {
    fn evaluate(&self, cfg: &GameConfig, state: &GameState) -> Result<(Vec<T>, T), MctsError> {
        let legal = game::legal_actions(cfg, state)?;
        let k = legal.iter().filter(|&&l| l).count();
        let w = T::one() / T::from_usize(k).expect("legal count fits in T");
        let p = legal
            .iter()
            .map(|&l| if l { w } else { T::zero() })
            .collect();
        Ok((p, T::zero()))
    }

    fn value_of(&self, _cfg: &GameConfig, _state: &GameState) -> Result<T, MctsError> {
        Ok(T::zero())
    }
}

/// Per-state edge statistics: visit counts, accumulated value, priors, and
/// the legality mask they were computed under.
#[derive(Debug, Clone)]
pub struct SearchNode<T> {
    pub n: Vec<u32>,
    pub w: Vec<T>,
    pub p: Vec<T>,
    pub legal: ActionMask,
}

impl<T> SearchNode<T> {
    /// Total simulations routed through this node's edges.
    pub fn visits(&self) -> u32 {
        self.n.iter().sum()
    }
}

/// The search driver. Holds the transposition-free game tree as a map from
/// state to node, so repeated `policy` calls on the same root reuse earlier
/// work.
pub struct Mcts<T, E> {
    eval: E,
    c_puct: T,
    nodes: HashMap<GameState, SearchNode<T>>,
}

impl<T: Float, E: Evaluator<T>> Mcts<T, E> {
    pub fn new(eval: E) -> Self {
        Self::with_c_puct(eval, T::one())
    }

    pub fn with_c_puct(eval: E, c_puct: T) -> Self {
        Mcts {
            eval,
            c_puct,
            nodes: HashMap::new(),
        }
    }

    pub fn node(&self, state: &GameState) -> Option<&SearchNode<T>> {
        self.nodes.get(state)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drop the accumulated tree (e.g. between episodes with a fresh net).
    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    /// Run `sims` simulations from `root` and return the visit-count policy
    /// ` pi(a) proportional to n(a)^(1/tau)` over the action alphabet.
    ///
    /// The root is expanded up front if unseen; that expansion is not
    /// counted, so the root's edge visits sum to exactly `sims` on a fresh
    /// tree. With `sims == 0` the policy is read from whatever counts the
    /// tree already holds.
    pub fn policy(
        &mut self,
        cfg: &GameConfig,
        root: &GameState,
        sims: usize,
        tau: T,
    ) -> Result<Vec<T>, MctsError> {
        debug_assert!(tau > T::zero(), "temperature must be positive");
        if !self.nodes.contains_key(root) {
            self.expand(cfg, root)?;
        }
        for _ in 0..sims {
            self.simulate(cfg, root)?;
        }
        let node = &self.nodes[root];
        Ok(counts_to_policy(node, tau))
    }

    /// One select-expand-evaluate-backup pass.
    fn simulate(&mut self, cfg: &GameConfig, root: &GameState) -> Result<(), MctsError> {
        let mut path: Vec<(GameState, usize)> = Vec::new();
        let mut state = root.clone();
        let value = loop {
            if game::is_terminal(cfg, &state) {
                break self.eval.value_of(cfg, &state)?;
            }
            if !self.nodes.contains_key(&state) {
                break self.expand(cfg, &state)?;
            }
            let node = &self.nodes[&state];
            let a = select(node, self.c_puct);
            path.push((state.clone(), a));
            state = game::apply_action(cfg, &state, a + 1)?;
        };
        for (s, a) in path {
            let node = self.nodes.get_mut(&s).expect("path states are expanded");
            node.n[a] += 1;
            node.w[a] += value;
        }
        Ok(())
    }

    /// Insert a leaf node with priors from the evaluator; returns the leaf
    /// value to back up.
    fn expand(&mut self, cfg: &GameConfig, state: &GameState) -> Result<T, MctsError> {
        let (p, v) = self.eval.evaluate(cfg, state)?;
        let legal = game::legal_actions(cfg, state)?;
        let k = cfg.n_action();
        debug_assert_eq!(p.len(), k);
        self.nodes.insert(
            state.clone(),
            SearchNode {
                n: vec![0; k],
                w: vec![T::zero(); k],
                p,
                legal,
            },
        );
        Ok(v)
    }
}

/// Pick the edge maximizing `Q + c_puct * P * sqrt(sum N) / (1 + N)`.
/// Unvisited edges count as Q = 0; ties break to the lowest index.
fn select<T: Float>(node: &SearchNode<T>, c_puct: T) -> usize {
    let total = T::from_u32(node.visits()).expect("visit count fits in T");
    let sqrt_total = (total + T::lit(EXPLORE_EPS)).sqrt();
    let mut best = usize::MAX;
    let mut best_score = T::neg_infinity();
    for a in 0..node.n.len() {
        if !node.legal[a] {
            continue;
        }
        let n_a = T::from_u32(node.n[a]).expect("visit count fits in T");
        let q = if node.n[a] > 0 {
            node.w[a] / n_a
        } else {
            T::zero()
        };
        let score = q + c_puct * node.p[a] * sqrt_total / (T::one() + n_a);
        if score > best_score {
            best = a;
            best_score = score;
        }
    }
    debug_assert_ne!(best, usize::MAX, "no legal action at an expanded node");
    best
}

/// Normalize visit counts at temperature `tau`. Counts are scaled by the
/// maximum before exponentiation so small temperatures cannot overflow. A
/// node with no visits yet falls back to uniform over its legal actions.
fn counts_to_policy<T: Float>(node: &SearchNode<T>, tau: T) -> Vec<T> {
    let n_max = node.n.iter().copied().max().unwrap_or(0);
    let mut pi = vec![T::zero(); node.n.len()];
    if n_max == 0 {
        let k = node.legal.iter().filter(|&&l| l).count();
        let w = T::one() / T::from_usize(k).expect("legal count fits in T");
        for (out, &l) in pi.iter_mut().zip(&node.legal) {
            if l {
                *out = w;
            }
        }
        return pi;
    }
    let inv_tau = T::one() / tau;
    let scale = T::from_u32(n_max).expect("visit count fits in T");
    let mut sum = T::zero();
    for a in 0..pi.len() {
        if node.legal[a] && node.n[a] > 0 {
            let frac = T::from_u32(node.n[a]).expect("visit count fits in T") / scale;
            pi[a] = frac.powf(inv_tau);
            sum += pi[a];
        }
    }
    for v in &mut pi {
        *v /= sum;
    }
    pi
}
