//! Turn-based experiment-selection game over a decision tree.
//!
//! Each agent plays a solitaire episode: it decides, slot by slot, whether to
//! open another experiment path (`continue`) or finish (`stop`), and fills
//! each opened path with one choice per tree level. The struct-of-arrays
//! state mirrors what the policy/value network consumes:
//!
//! * `s1[r]` — slot flags: 0 undecided, 1 continue, 2 stop;
//! * `s2[r][l]` — 1-based choice index at level `l` of path `r`, 0 undecided.
//!
//! Moves fill `s1[0]`, then row 0 left to right, then `s1[1]`, and so on.
//! Actions are 1-based over a shared alphabet of size [`GameConfig::n_action`]
//! (the widest level, at least 2 to host continue/stop).

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::Float;
use crate::tree::{DecisionTree, ExperimentSpec, TreeError};

#[derive(Debug, Error)]
pub enum GameError {
    #[error("state is terminal")]
    Terminal,
    #[error("state is not terminal")]
    NotTerminal,
    #[error("action {action} is illegal here")]
    IllegalAction { action: usize },
    #[error(transparent)]
    Tree(#[from] TreeError),
}

/// Which agent a state or trajectory belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Protagonist,
    Adversary,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Protagonist, Side::Adversary];
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Side::Protagonist => write!(f, "protagonist"),
            Side::Adversary => write!(f, "adversary"),
        }
    }
}

/// Shared game setup: the tree plus per-side path capacity.
#[derive(Debug, Clone)]
pub struct GameConfig {
    pub tree: Arc<DecisionTree>,
    pub max_paths_protagonist: usize,
    pub max_paths_adversary: usize,
}

impl GameConfig {
    pub fn new(tree: Arc<DecisionTree>, max_paths_protagonist: usize, max_paths_adversary: usize) -> Self {
        assert!(max_paths_protagonist >= 1 && max_paths_adversary >= 1);
        Self {
            tree,
            max_paths_protagonist,
            max_paths_adversary,
        }
    }

    /// Same capacity for both sides.
    pub fn symmetric(tree: Arc<DecisionTree>, max_paths: usize) -> Self {
        Self::new(tree, max_paths, max_paths)
    }

    pub fn max_paths(&self, side: Side) -> usize {
        match side {
            Side::Protagonist => self.max_paths_protagonist,
            Side::Adversary => self.max_paths_adversary,
        }
    }

    /// Size of the shared action alphabet: the widest level, with a floor of
    /// 2 so the continue/stop moves always fit.
    pub fn n_action(&self) -> usize {
        self.tree.max_choices().max(2)
    }

    /// Length of the flat network encoding for `side`.
    pub fn encoded_len(&self, side: Side) -> usize {
        self.max_paths(side) * (1 + self.tree.depth())
    }
}

/// Boolean mask over the action alphabet; index `a - 1` answers for action `a`.
pub type ActionMask = Vec<bool>;

/// Where the next move lands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cursor {
    /// Continue/stop decision for path `row`.
    Slot { row: usize },
    /// Tree choice at `level` of path `row`.
    Level { row: usize, level: usize },
    /// No moves left.
    Terminal,
}

/// Game state for one side. Plain data: hashable for search-tree reuse and
/// serializable for episode logs.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GameState {
    pub side: Side,
    /// Slot flags, one per path: 0 undecided, 1 continue, 2 stop.
    pub s1: Vec<u8>,
    /// Row-major `max_paths x depth` choice matrix, entries 1-based, 0 undecided.
    pub s2: Vec<u8>,
}

/// Fresh state: everything undecided.
pub fn initial_state(cfg: &GameConfig, side: Side) -> GameState {
    GameState {
        side,
        s1: vec![0; cfg.max_paths(side)],
        s2: vec![0; cfg.max_paths(side) * cfg.tree.depth()],
    }
}

/// Locate the next undecided entry. Scans paths in order; within a path the
/// slot flag precedes the level choices.
pub fn cursor(cfg: &GameConfig, state: &GameState) -> Cursor {
    let depth = cfg.tree.depth();
    for row in 0..state.s1.len() {
        match state.s1[row] {
            0 => return Cursor::Slot { row },
            2 => return Cursor::Terminal,
            _ => {}
        }
        for level in 0..depth {
            if state.s2[row * depth + level] == 0 {
                return Cursor::Level { row, level };
            }
        }
    }
    Cursor::Terminal
}

pub fn is_terminal(cfg: &GameConfig, state: &GameState) -> bool {
    cursor(cfg, state) == Cursor::Terminal
}

/// Legal actions at the current cursor.
///
/// Slot moves: `1` (continue) always, `2` (stop) except at the first path,
/// which is forced open so every episode selects at least one experiment.
/// Level moves: the tree's admissible choices under the path's prefix.
pub fn legal_actions(cfg: &GameConfig, state: &GameState) -> Result<ActionMask, GameError> {
    let mut mask = vec![false; cfg.n_action()];
    match cursor(cfg, state) {
        Cursor::Terminal => return Err(GameError::Terminal),
        Cursor::Slot { row } => {
            mask[0] = true;
            if row > 0 {
                mask[1] = true;
            }
        }
        Cursor::Level { row, level } => {
            let prefix = row_prefix(cfg, state, row, level);
            let vertex = cfg.tree.descend(&prefix)?;
            for ci in cfg.tree.legal_choices(vertex)? {
                mask[ci] = true;
            }
        }
    }
    Ok(mask)
}

/// Apply a 1-based action, returning the successor state.
pub fn apply_action(
    cfg: &GameConfig,
    state: &GameState,
    action: usize,
) -> Result<GameState, GameError> {
    let mask = legal_actions(cfg, state)?;
    if action == 0 || action > mask.len() || !mask[action - 1] {
        return Err(GameError::IllegalAction { action });
    }
    let mut next = state.clone();
    match cursor(cfg, state) {
        Cursor::Slot { row } => next.s1[row] = action as u8,
        Cursor::Level { row, level } => next.s2[row * cfg.tree.depth() + level] = action as u8,
        Cursor::Terminal => unreachable!("legal_actions already rejected terminal states"),
    }
    Ok(next)
}

/// Flat encoding for the network: `[s1 | s2]`, every entry divided by the
/// action-alphabet size so the input stays in [0, 1].
pub fn encode_state<T: Float>(cfg: &GameConfig, state: &GameState) -> Vec<T> {
    let scale = T::one() / T::from_usize(cfg.n_action()).expect("action count fits in T");
    state
        .s1
        .iter()
        .chain(state.s2.iter())
        .map(|&v| T::from_u8(v).expect("entry fits in T") * scale)
        .collect()
}

/// Decisions taken so far in `row` (choice indices, 0-based), up to `level`.
fn row_prefix(cfg: &GameConfig, state: &GameState, row: usize, level: usize) -> Vec<usize> {
    let depth = cfg.tree.depth();
    (0..level)
        .map(|l| state.s2[row * depth + l] as usize - 1)
        .collect()
}

/// The experiments a terminal state selected, one per opened path, in path
/// order. Duplicate leaves are kept: a selection is a multiset.
pub fn selected_experiments(
    cfg: &GameConfig,
    state: &GameState,
) -> Result<Vec<ExperimentSpec>, GameError> {
    if !is_terminal(cfg, state) {
        return Err(GameError::NotTerminal);
    }
    let depth = cfg.tree.depth();
    let mut specs = Vec::new();
    for row in 0..state.s1.len() {
        if state.s1[row] != 1 {
            break;
        }
        let decisions: Vec<usize> = (0..depth)
            .map(|l| state.s2[row * depth + l] as usize - 1)
            .collect();
        let leaf = cfg.tree.descend(&decisions)?;
        specs.push(cfg.tree.experiment(leaf)?);
    }
    Ok(specs)
}

/// Canonical key for a selection: sorted leaf labels joined with `|`.
/// Identifies a protagonist strategy independent of path order.
pub fn strategy_key(specs: &[ExperimentSpec]) -> String {
    let mut labels: Vec<&str> = specs.iter().map(|s| s.label.as_str()).collect();
    labels.sort_unstable();
    labels.join("|")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bulk_cfg() -> GameConfig {
        GameConfig::symmetric(Arc::new(DecisionTree::builtin("bulk").unwrap()), 5)
    }

    #[test]
    fn initial_state_shape() {
        let cfg = bulk_cfg();
        let s = initial_state(&cfg, Side::Protagonist);
        assert_eq!(s.s1, vec![0; 5]);
        assert_eq!(s.s2.len(), 30);
        assert_eq!(cfg.n_action(), 3);
        assert_eq!(cfg.encoded_len(Side::Protagonist), 35);
    }

    #[test]
    fn per_side_capacity() {
        let cfg = GameConfig::new(
            Arc::new(DecisionTree::builtin("interface").unwrap()),
            15,
            10,
        );
        assert_eq!(initial_state(&cfg, Side::Protagonist).s1.len(), 15);
        assert_eq!(initial_state(&cfg, Side::Adversary).s1.len(), 10);
        assert_eq!(cfg.n_action(), 6);
        assert_eq!(cfg.encoded_len(Side::Protagonist), 15 * 7);
    }

    #[test]
    fn first_slot_is_forced_open() {
        let cfg = bulk_cfg();
        let s = initial_state(&cfg, Side::Protagonist);
        assert_eq!(legal_actions(&cfg, &s).unwrap(), vec![true, false, false]);
        assert!(matches!(
            apply_action(&cfg, &s, 2),
            Err(GameError::IllegalAction { action: 2 })
        ));
    }

    #[test]
    fn full_first_row_reaches_known_leaf() {
        // 300kPa, 0.55, DTC, 3%, 0%, 5% as 1-based actions.
        let cfg = bulk_cfg();
        let mut s = initial_state(&cfg, Side::Protagonist);
        for a in [1, 1, 2, 1, 1, 2, 3] {
            s = apply_action(&cfg, &s, a).unwrap();
        }
        assert_eq!(s.s1, vec![1, 0, 0, 0, 0]);
        assert_eq!(&s.s2[..6], &[1, 2, 1, 1, 2, 3]);
        assert_eq!(cursor(&cfg, &s), Cursor::Slot { row: 1 });
        // Stopping at the second slot ends the episode with one experiment.
        let t = apply_action(&cfg, &s, 2).unwrap();
        assert!(is_terminal(&cfg, &t));
        let specs = selected_experiments(&cfg, &t).unwrap();
        assert_eq!(specs.len(), 1);
        assert_eq!(specs[0].label, "300kPa_0.55_DTC_3%_0%_5%");
    }

    #[test]
    fn type_level_allows_all_three_choices() {
        let cfg = bulk_cfg();
        let mut s = initial_state(&cfg, Side::Protagonist);
        for a in [1, 1, 2] {
            s = apply_action(&cfg, &s, a).unwrap();
        }
        assert_eq!(cursor(&cfg, &s), Cursor::Level { row: 0, level: 2 });
        assert_eq!(legal_actions(&cfg, &s).unwrap(), vec![true, true, true]);
    }

    #[test]
    fn restrictions_shape_the_mask() {
        let cfg = bulk_cfg();
        let mut s = initial_state(&cfg, Side::Protagonist);
        for a in [1, 1, 2, 1, 1] {
            s = apply_action(&cfg, &s, a).unwrap();
        }
        // Unload level under a 3% load: NaN or 0%, never 3%.
        assert_eq!(legal_actions(&cfg, &s).unwrap(), vec![true, true, false]);
    }

    #[test]
    fn capacity_exhaustion_terminates_without_stop() {
        let tree = Arc::new(DecisionTree::builtin("toy").unwrap());
        let cfg = GameConfig::symmetric(tree, 1);
        let mut s = initial_state(&cfg, Side::Adversary);
        for a in [1, 1, 1, 2] {
            s = apply_action(&cfg, &s, a).unwrap();
        }
        assert!(is_terminal(&cfg, &s));
        let specs = selected_experiments(&cfg, &s).unwrap();
        assert_eq!(specs[0].label, "300kPa_DTC_3%");
        assert!(matches!(
            legal_actions(&cfg, &s),
            Err(GameError::Terminal)
        ));
    }

    #[test]
    fn encoding_divides_by_action_count() {
        let cfg = bulk_cfg();
        let mut s = initial_state(&cfg, Side::Protagonist);
        for a in [1, 3] {
            s = apply_action(&cfg, &s, a).unwrap();
        }
        let x: Vec<f64> = encode_state(&cfg, &s);
        assert_eq!(x.len(), 35);
        assert_eq!(x[0], 1.0 / 3.0);
        assert_eq!(x[5], 1.0); // 500kPa is choice 3 of 3
        assert!(x.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn strategy_key_sorts_labels() {
        let cfg = bulk_cfg();
        let tree = &cfg.tree;
        let a = tree.experiment(tree.leaves()[5]).unwrap();
        let b = tree.experiment(tree.leaves()[0]).unwrap();
        let key = strategy_key(&[a.clone(), b.clone()]);
        assert_eq!(key, format!("{}|{}", b.label, a.label));
    }

    #[test]
    fn selected_experiments_requires_terminal() {
        let cfg = bulk_cfg();
        let s = initial_state(&cfg, Side::Protagonist);
        assert!(matches!(
            selected_experiments(&cfg, &s),
            Err(GameError::NotTerminal)
        ));
    }

    /// Random legal playouts: shared invariants of the move protocol.
    fn random_playout(cfg: &GameConfig, side: Side, seed: u64) -> (GameState, usize) {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut s = initial_state(cfg, side);
        let mut moves = 0;
        while !is_terminal(cfg, &s) {
            let mask = legal_actions(cfg, &s).unwrap();
            let legal: Vec<usize> = mask
                .iter()
                .enumerate()
                .filter_map(|(i, &ok)| ok.then_some(i + 1))
                .collect();
            assert!(!legal.is_empty());
            let a = legal[rng.random_range(0..legal.len())];
            let next = apply_action(cfg, &s, a).unwrap();
            let changed = next
                .s1
                .iter()
                .zip(&s.s1)
                .filter(|(a, b)| a != b)
                .count()
                + next.s2.iter().zip(&s.s2).filter(|(a, b)| a != b).count();
            assert_eq!(changed, 1, "each move decides exactly one entry");
            s = next;
            moves += 1;
        }
        (s, moves)
    }

    proptest! {
        #[test]
        fn playouts_terminate_with_valid_selections(seed in 0u64..500) {
            let cfg = bulk_cfg();
            let (s, moves) = random_playout(&cfg, Side::Protagonist, seed);
            let max_moves = cfg.max_paths(Side::Protagonist) * (1 + cfg.tree.depth());
            prop_assert!(moves <= max_moves);
            let specs = selected_experiments(&cfg, &s).unwrap();
            prop_assert!(!specs.is_empty());
            prop_assert!(specs.len() <= cfg.max_paths(Side::Protagonist));
            for spec in &specs {
                // every selection is a real leaf of the tree
                prop_assert!(cfg.tree.leaf_by_label(&spec.label).is_ok());
            }
            let enc: Vec<f64> = encode_state(&cfg, &s);
            prop_assert!(enc.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }

        #[test]
        fn playouts_replay_deterministically(seed in 0u64..100) {
            let cfg = bulk_cfg();
            let (a, _) = random_playout(&cfg, Side::Adversary, seed);
            let (b, _) = random_playout(&cfg, Side::Adversary, seed);
            prop_assert_eq!(a, b);
        }
    }
}
