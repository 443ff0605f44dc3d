//! Exhaustive sequential-equilibrium oracle for small games. Every
//! protagonist strategy (a set of distinct leaves, one to `max_paths` of
//! them) is calibrated through the real pipeline; every adversary strategy
//! is scored against it; the adversary's best response is the minimum SCORE,
//! and the equilibrium is the protagonist strategy maximizing its reward
//! under that response. Pair counts beyond the configured cap are refused up
//! front rather than ground through.

use num_bigint::BigUint;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::scoring::protagonist_reward;
use crate::tree::{DecisionTree, ExperimentSpec};
use crate::Real;

use super::pipeline::{Pipeline, PipelineCaches};
use super::train::thread_pool;
use super::{DriverError, GameSetup};

/// Rewards this close to the maximum join the equilibrium tie set.
pub const EQUILIBRIUM_TIE_TOL: Real = 1e-12;

/// One protagonist strategy with the adversary's best response to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NashEntry {
    pub protagonist: Vec<String>,
    pub strategy_key: String,
    pub calibrated: bool,
    pub e1ns_protagonist: Option<Real>,
    pub score_protagonist: Real,
    pub best_response: Vec<String>,
    pub best_response_key: String,
    pub e1ns_adversary: Option<Real>,
    pub score_adversary: Real,
    pub reward_protagonist: Real,
    pub reward_adversary: Real,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NashReport {
    /// One entry per protagonist strategy, in enumeration order (strategy
    /// size ascending, lexicographic over leaf positions within a size).
    pub entries: Vec<NashEntry>,
    /// Indices of all entries within [`EQUILIBRIUM_TIE_TOL`] of the best
    /// protagonist reward, ascending.
    pub equilibrium: Vec<usize>,
    pub equilibrium_reward: Real,
}

impl NashReport {
    /// First equilibrium entry (deterministic representative).
    pub fn best(&self) -> &NashEntry {
        &self.entries[self.equilibrium[0]]
    }
}

/// Solve the game exhaustively. Honors `nash_pair_cap`, `max_paths_*`,
/// `workers`, and the mandatory test set of the setup's config; shares
/// episode caches, so a training run's work is reused when available.
pub fn brute_force_nash(
    setup: &GameSetup,
    caches: &PipelineCaches,
) -> Result<NashReport, DriverError> {
    let cfg = &setup.cfg;
    let pairs = setup.tree.combination_count(cfg.max_paths_protagonist)
        * setup.tree.combination_count(cfg.max_paths_adversary);
    if pairs > BigUint::from(cfg.nash_pair_cap) {
        return Err(DriverError::CapExceeded {
            pairs: pairs.to_string(),
            cap: cfg.nash_pair_cap,
        });
    }

    let protagonist_strategies =
        strategy_specs(&setup.tree, cfg.max_paths_protagonist)?;
    let adversary_strategies = strategy_specs(&setup.tree, cfg.max_paths_adversary)?;

    let pool = thread_pool(cfg.workers)?;
    let entries: Result<Vec<NashEntry>, DriverError> = pool.install(|| {
        protagonist_strategies
            .par_iter()
            .map(|sp| Ok(respond(setup, caches, sp, &adversary_strategies)))
            .collect()
    });
    let entries = entries?;

    let best = entries
        .iter()
        .map(|e| e.reward_protagonist)
        .fold(Real::NEG_INFINITY, Real::max);
    let equilibrium: Vec<usize> = entries
        .iter()
        .enumerate()
        .filter(|(_, e)| best - e.reward_protagonist <= EQUILIBRIUM_TIE_TOL)
        .map(|(i, _)| i)
        .collect();
    Ok(NashReport {
        entries,
        equilibrium,
        equilibrium_reward: best,
    })
}

/// Calibrate one protagonist strategy and play every adversary strategy
/// against it. Best response by strict SCORE minimum, first strategy wins
/// ties.
fn respond(
    setup: &GameSetup,
    caches: &PipelineCaches,
    sp: &[ExperimentSpec],
    adversary_strategies: &[Vec<ExperimentSpec>],
) -> NashEntry {
    let pipeline = Pipeline::new(setup, caches);
    let calib = pipeline.protagonist_outcome(sp);

    let mut br = 0usize;
    let mut br_score = Real::INFINITY;
    let mut br_e1ns = None;
    for (j, sa) in adversary_strategies.iter().enumerate() {
        let (e1ns, score) = pipeline.adversary_outcome(&calib, sa);
        if score < br_score {
            br = j;
            br_score = score;
            br_e1ns = e1ns;
        }
    }
    let response = &adversary_strategies[br];

    // One-shot analogue of the training-time reward: the decay sees the best
    // response's fit index (worst case when even that is unavailable).
    let min_e_ns = Some(br_e1ns.unwrap_or(setup.cfg.e_min_ns));
    let reward_protagonist = protagonist_reward(calib.score, min_e_ns, &setup.score);

    NashEntry {
        protagonist: sp.iter().map(|s| s.label.clone()).collect(),
        strategy_key: calib.key.clone(),
        calibrated: calib.calibrated,
        e1ns_protagonist: calib.e1ns,
        score_protagonist: calib.score,
        best_response: response.iter().map(|s| s.label.clone()).collect(),
        best_response_key: crate::game::strategy_key(response),
        e1ns_adversary: br_e1ns,
        score_adversary: br_score,
        reward_protagonist,
        reward_adversary: -br_score,
    }
}

/// All strategies for one side: distinct-leaf sets of size 1..=`max_paths`,
/// sizes ascending, lexicographic over leaf positions within a size.
pub fn strategy_specs(
    tree: &DecisionTree,
    max_paths: usize,
) -> Result<Vec<Vec<ExperimentSpec>>, DriverError> {
    let leaves = tree.leaves();
    let mut out = Vec::new();
    for k in 1..=max_paths.min(leaves.len()) {
        for combo in combinations(leaves.len(), k) {
            out.push(
                combo
                    .iter()
                    .map(|&i| Ok(tree.experiment(leaves[i])?))
                    .collect::<Result<Vec<_>, DriverError>>()?,
            );
        }
    }
    Ok(out)
}

/// k-subsets of 0..n in lexicographic order.
fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k == 0 || k > n {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        // Rightmost position that can still advance.
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if idx[i] != i + n - k {
                break;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driver::RunConfig;

    fn toy_setup(oracle: &str) -> GameSetup {
        let mut cfg = RunConfig::preset("toy").unwrap();
        cfg.oracle = oracle.into();
        cfg.calib_max_iters = 25;
        GameSetup::new(cfg).unwrap()
    }

    #[test]
    fn combination_enumeration_matches_the_tree_count() {
        let setup = toy_setup("dp-self");
        let ones = strategy_specs(&setup.tree, 1).unwrap();
        assert_eq!(ones.len(), 8);
        let twos = strategy_specs(&setup.tree, 2).unwrap();
        assert_eq!(
            BigUint::from(twos.len() as u64),
            setup.tree.combination_count(2)
        );
        // Sizes ascending, lexicographic within a size.
        assert_eq!(twos[0].len(), 1);
        assert_eq!(twos[8].len(), 2);
        assert_eq!(twos[8][0].label, ones[0][0].label);
        assert_eq!(twos[8][1].label, ones[1][0].label);
        assert_eq!(combinations(4, 2), vec![
            vec![0, 1], vec![0, 2], vec![0, 3], vec![1, 2], vec![1, 3], vec![2, 3],
        ]);
    }

    #[test]
    fn self_oracle_game_has_a_full_tie_set_at_the_reward_ceiling() {
        // Truth inside the model class and the start at the table guess:
        // every strategy calibrates exactly, no attack lands, and all
        // protagonist strategies tie at reward 1.
        let setup = toy_setup("dp-self");
        let caches = PipelineCaches::new();
        let report = brute_force_nash(&setup, &caches).unwrap();
        assert_eq!(report.entries.len(), 8);
        assert_eq!(report.equilibrium_reward, 1.0);
        assert_eq!(report.equilibrium, (0..8).collect::<Vec<_>>());
        for e in &report.entries {
            assert!(e.calibrated);
            assert_eq!(e.score_protagonist, 1.0);
            assert_eq!(e.score_adversary, 1.0);
            assert_eq!(e.e1ns_adversary, Some(1.0));
        }
    }

    #[test]
    fn mismatch_game_finds_a_damaging_response() {
        // SANISAND truth, Drucker-Prager candidate: no calibration is exact,
        // and the best response hurts more than the calibration fit.
        let setup = toy_setup("ss-self");
        let caches = PipelineCaches::new();
        let report = brute_force_nash(&setup, &caches).unwrap();
        assert_eq!(report.entries.len(), 8);
        assert!(report.equilibrium_reward < 1.0);
        let best = report.best();
        assert!(best.calibrated);
        assert!(best.score_adversary <= best.score_protagonist);
        assert!(!report.equilibrium.is_empty());
        // A second solve over warm caches reproduces the report exactly.
        let again = brute_force_nash(&setup, &caches).unwrap();
        assert_eq!(report, again);
    }

    #[test]
    fn pair_cap_refuses_oversized_games() {
        let mut cfg = RunConfig::preset("toy").unwrap();
        cfg.nash_pair_cap = 10;
        let setup = GameSetup::new(cfg).unwrap();
        let err = brute_force_nash(&setup, &PipelineCaches::new()).unwrap_err();
        match err {
            DriverError::CapExceeded { pairs, cap } => {
                assert_eq!(pairs, "64");
                assert_eq!(cap, 10);
            }
            other => panic!("unexpected error {other}"),
        }
    }
}
