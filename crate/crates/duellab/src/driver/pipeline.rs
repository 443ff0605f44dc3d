//! One episode end to end: both agents play their selection games to
//! terminal states, the protagonist's experiments are run on the oracle and
//! calibrated, the adversary's experiments (plus any mandatory test set) are
//! predicted by the fitted model, and everything is scored.
//!
//! All heavy work funnels through [`PipelineCaches`]: oracle responses are
//! keyed by leaf label, calibrations by the protagonist's strategy key, and
//! model predictions by (strategy key, leaf label). Each cached computation
//! is a pure function of its key, so concurrent workers may race to fill an
//! entry without affecting any result.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calib::{calibrate_with, CalibrateOptions, CalibrationProblem, LmOptions};
use crate::game::{self, GameState, Side};
use crate::lab::{compile_program, run_experiment, ResponseOracle, ResponseSeries};
use crate::learner::mcts::{Mcts, NetEvaluator};
use crate::learner::net::PolicyValueNet;
use crate::scoring::{adversary_reward, pooled_score, protagonist_reward, FeatureScaler, WinLabel};
use crate::tree::ExperimentSpec;
use crate::Real;

use super::{fnv1a, mix_seed, DriverError, GameSetup};

const SEED_TAG_PROTAGONIST: u64 = 1;
const SEED_TAG_ADVERSARY: u64 = 2;

/// Worst-case score, recorded when a pipeline stage cannot produce one.
pub const SENTINEL_SCORE: Real = -1.0;

/// One decision: the search policy over the action alphabet and the 1-based
/// action actually taken.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoveRecord {
    pub action: usize,
    pub pi: Vec<Real>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub side: Side,
    pub moves: Vec<MoveRecord>,
}

impl Trajectory {
    pub fn actions(&self) -> Vec<usize> {
        self.moves.iter().map(|m| m.action).collect()
    }
}

/// Everything about one played episode. Trajectories replay deterministically
/// from the initial states, so states are not stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub iteration: usize,
    pub episode: usize,
    /// True when the protagonist replayed the best-so-far strategy instead
    /// of sampling from search.
    pub elite: bool,
    pub protagonist: Trajectory,
    pub adversary: Trajectory,
    /// Selected leaf labels in path order.
    pub protagonist_labels: Vec<String>,
    pub adversary_labels: Vec<String>,
    pub strategy_key: String,
    pub adversary_key: String,
    pub calibrated: bool,
    pub params: Vec<Real>,
    pub e1ns_protagonist: Option<Real>,
    pub score_protagonist: Real,
    pub e1ns_adversary: Option<Real>,
    pub score_adversary: Real,
    /// History minimum of the adversary-prediction fit index at play time
    /// (iteration-start snapshot; episodes within an iteration share it).
    pub min_e_ns_at_play: Option<Real>,
    pub reward_protagonist: Real,
    pub reward_adversary: Real,
    /// Binarized outcomes as of the iteration that logged this record.
    pub win_protagonist: Option<WinLabel>,
    pub win_adversary: Option<WinLabel>,
}

type SharedSeries = Arc<Result<ResponseSeries<Real>, String>>;

/// Calibration outcome reduced to what the rest of an episode needs.
#[derive(Debug, Clone)]
pub struct CalibSummary {
    pub key: String,
    pub params: Vec<Real>,
    pub scaler: FeatureScaler<Real>,
    pub calibrated: bool,
    /// Pooled fit index over the full calibration curves.
    pub e1ns: Option<Real>,
    /// Calibration score; [`SENTINEL_SCORE`] when the fit failed.
    pub score: Real,
    pub failure: Option<String>,
}

impl CalibSummary {
    fn failed(key: &str, params: Vec<Real>, scaler: FeatureScaler<Real>, why: String) -> Self {
        CalibSummary {
            key: key.to_string(),
            params,
            scaler,
            calibrated: false,
            e1ns: None,
            score: SENTINEL_SCORE,
            failure: Some(why),
        }
    }
}

#[derive(Default)]
pub struct PipelineCaches {
    responses: Mutex<HashMap<String, SharedSeries>>,
    calibrations: Mutex<HashMap<String, Arc<CalibSummary>>>,
    predictions: Mutex<HashMap<(String, String), SharedSeries>>,
}

impl PipelineCaches {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn counts(&self) -> (usize, usize, usize) {
        (
            self.responses.lock().unwrap().len(),
            self.calibrations.lock().unwrap().len(),
            self.predictions.lock().unwrap().len(),
        )
    }
}

/// Cache-backed access to the oracle, the calibrator, and model predictions.
pub struct Pipeline<'a> {
    pub setup: &'a GameSetup,
    pub caches: &'a PipelineCaches,
}

impl<'a> Pipeline<'a> {
    pub fn new(setup: &'a GameSetup, caches: &'a PipelineCaches) -> Self {
        Pipeline { setup, caches }
    }

    /// Ground-truth response for one experiment.
    pub fn oracle_response(&self, spec: &ExperimentSpec) -> SharedSeries {
        if let Some(hit) = self.caches.responses.lock().unwrap().get(&spec.label) {
            return Arc::clone(hit);
        }
        let computed = Arc::new(
            self.setup
                .oracle
                .run(&self.setup.tree, spec)
                .map_err(|e| e.to_string()),
        );
        Arc::clone(
            self.caches
                .responses
                .lock()
                .unwrap()
                .entry(spec.label.clone())
                .or_insert(computed),
        )
    }

    /// Calibrate the candidate against this experiment selection. Failures
    /// of any stage collapse into a sentinel summary rather than an error.
    pub fn protagonist_outcome(&self, specs: &[ExperimentSpec]) -> Arc<CalibSummary> {
        let key = game::strategy_key(specs);
        if let Some(hit) = self.caches.calibrations.lock().unwrap().get(&key) {
            return Arc::clone(hit);
        }
        let computed = Arc::new(self.calibrate_fresh(&key, specs));
        Arc::clone(
            self.caches
                .calibrations
                .lock()
                .unwrap()
                .entry(key)
                .or_insert(computed),
        )
    }

    fn calibrate_fresh(&self, key: &str, specs: &[ExperimentSpec]) -> CalibSummary {
        let model = self.setup.cfg.model;
        let guess: Vec<Real> = model.param_specs::<Real>().iter().map(|s| s.guess).collect();
        let fallback_scaler = FeatureScaler::identity(crate::lab::N_FEATURES);

        // Canonical experiment order: the calibration must be a pure
        // function of the strategy key, not of the path order played.
        let mut sorted: Vec<&ExperimentSpec> = specs.iter().collect();
        sorted.sort_by(|a, b| a.label.cmp(&b.label));

        let mut experiments = Vec::with_capacity(sorted.len());
        for spec in sorted {
            let program = match compile_program::<Real>(&self.setup.tree, spec) {
                Ok(p) => p,
                Err(e) => {
                    return CalibSummary::failed(key, guess, fallback_scaler, e.to_string())
                }
            };
            match self.oracle_response(spec).as_ref() {
                Ok(series) => experiments.push((program, series.clone())),
                Err(e) => {
                    return CalibSummary::failed(key, guess, fallback_scaler, e.clone())
                }
            }
        }

        let problem = CalibrationProblem::new(model, experiments);
        let opts = CalibrateOptions {
            lm: LmOptions {
                max_iters: self.setup.cfg.calib_max_iters,
                ..LmOptions::default()
            },
            restarts: self.setup.cfg.calib_restarts,
            seed: fnv1a(key),
        };
        let report = match calibrate_with(&problem, &opts) {
            Ok(r) => r,
            Err(e) => {
                return CalibSummary::failed(key, guess, fallback_scaler, e.to_string())
            }
        };
        if !report.succeeded() {
            return CalibSummary::failed(
                key,
                report.params,
                report.scaler,
                "fitted model cannot replay a calibration experiment".into(),
            );
        }

        let mut model_feats = Vec::new();
        let mut data_feats = Vec::new();
        for (pred, (_, series)) in report.predictions.iter().zip(&problem.experiments) {
            model_feats.extend(pred.as_ref().expect("succeeded() checked").features());
            data_feats.extend(series.features());
        }
        match pooled_score(&report.scaler, &model_feats, &data_feats, 1, &self.setup.score) {
            Ok((e1ns, score)) => CalibSummary {
                key: key.to_string(),
                params: report.params,
                scaler: report.scaler,
                calibrated: true,
                e1ns: Some(e1ns),
                score,
                failure: None,
            },
            Err(e) => CalibSummary::failed(key, report.params, report.scaler, e.to_string()),
        }
    }

    /// Fitted-model prediction of one experiment.
    pub fn prediction(&self, calib: &CalibSummary, spec: &ExperimentSpec) -> SharedSeries {
        let cache_key = (calib.key.clone(), spec.label.clone());
        if let Some(hit) = self.caches.predictions.lock().unwrap().get(&cache_key) {
            return Arc::clone(hit);
        }
        let computed = Arc::new(
            compile_program::<Real>(&self.setup.tree, spec)
                .map_err(|e| e.to_string())
                .and_then(|program| {
                    let material = self.setup.cfg.model.material(&calib.params);
                    run_experiment(&material, &program).map_err(|e| e.to_string())
                }),
        );
        Arc::clone(
            self.caches
                .predictions
                .lock()
                .unwrap()
                .entry(cache_key)
                .or_insert(computed),
        )
    }

    /// Pooled fit of the calibrated model over the adversary's experiments
    /// plus the run's mandatory test set. Any failure (no calibrated model,
    /// unreplayable prediction, missing data) counts fully against the
    /// model: the score collapses to the sentinel worst case.
    pub fn adversary_outcome(
        &self,
        calib: &CalibSummary,
        selected: &[ExperimentSpec],
    ) -> (Option<Real>, Real) {
        if !calib.calibrated {
            return (None, SENTINEL_SCORE);
        }
        let mut pool: Vec<&ExperimentSpec> =
            selected.iter().chain(self.setup.mandatory.iter()).collect();
        pool.sort_by(|a, b| a.label.cmp(&b.label));

        let mut model_feats = Vec::new();
        let mut data_feats = Vec::new();
        for spec in pool {
            let data_arc = self.oracle_response(spec);
            let data = match data_arc.as_ref() {
                Ok(d) => d.features(),
                Err(_) => return (None, SENTINEL_SCORE),
            };
            let pred_arc = self.prediction(calib, spec);
            let pred = match pred_arc.as_ref() {
                Ok(p) => p.features(),
                Err(_) => return (None, SENTINEL_SCORE),
            };
            if pred.len() != data.len() {
                return (None, SENTINEL_SCORE);
            }
            model_feats.extend(pred);
            data_feats.extend(data);
        }
        match pooled_score(&calib.scaler, &model_feats, &data_feats, 1, &self.setup.score) {
            Ok((e1ns, score)) => (Some(e1ns), score),
            Err(_) => (None, SENTINEL_SCORE),
        }
    }
}

/// Shared context for one iteration's episodes: immutable net snapshots and
/// the iteration-start history state.
pub struct EpisodeCtx<'a> {
    pub setup: &'a GameSetup,
    pub caches: &'a PipelineCaches,
    pub net_protagonist: &'a PolicyValueNet<Real>,
    pub net_adversary: &'a PolicyValueNet<Real>,
    pub tau: Real,
    /// History minimum of the adversary-prediction fit index at iteration
    /// start.
    pub min_e_ns: Option<Real>,
    /// When set, the protagonist replays these actions instead of searching.
    pub elite_script: Option<&'a [usize]>,
}

/// Play one episode. The per-side rng streams derive from the run seed and
/// (iteration, episode) alone, so scheduling cannot shift them.
pub fn play_episode(
    ctx: &EpisodeCtx<'_>,
    iteration: usize,
    episode: usize,
) -> Result<EpisodeRecord, DriverError> {
    let seed = ctx.setup.cfg.seed;
    let (traj_p, state_p) = match ctx.elite_script {
        Some(script) => scripted_trajectory(ctx.setup, Side::Protagonist, script)?,
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[
                seed,
                iteration as u64,
                episode as u64,
                SEED_TAG_PROTAGONIST,
            ]));
            search_trajectory(ctx.setup, ctx.net_protagonist, Side::Protagonist, ctx.tau, &mut rng)?
        }
    };
    let mut rng_a = ChaCha8Rng::seed_from_u64(mix_seed(&[
        seed,
        iteration as u64,
        episode as u64,
        SEED_TAG_ADVERSARY,
    ]));
    let (traj_a, state_a) =
        search_trajectory(ctx.setup, ctx.net_adversary, Side::Adversary, ctx.tau, &mut rng_a)?;
    evaluate_terminals(
        ctx.setup,
        ctx.caches,
        traj_p,
        &state_p,
        traj_a,
        &state_a,
        iteration,
        episode,
        ctx.elite_script.is_some(),
        ctx.min_e_ns,
    )
}

/// Re-run a logged episode's pipeline from its recorded actions. Scores and
/// rewards are recomputed from scratch (fresh or shared caches both work);
/// win labels are not, since binarization depends on later history.
pub fn replay_episode(
    setup: &GameSetup,
    caches: &PipelineCaches,
    record: &EpisodeRecord,
) -> Result<EpisodeRecord, DriverError> {
    let state_p = walk(setup, Side::Protagonist, &record.protagonist.actions())?;
    let state_a = walk(setup, Side::Adversary, &record.adversary.actions())?;
    evaluate_terminals(
        setup,
        caches,
        record.protagonist.clone(),
        &state_p,
        record.adversary.clone(),
        &state_a,
        record.iteration,
        record.episode,
        record.elite,
        record.min_e_ns_at_play,
    )
}

/// Search-guided play to a terminal state. One private search tree per
/// trajectory; policies come from the shared net snapshot.
fn search_trajectory(
    setup: &GameSetup,
    net: &PolicyValueNet<Real>,
    side: Side,
    tau: Real,
    rng: &mut ChaCha8Rng,
) -> Result<(Trajectory, GameState), DriverError> {
    let gcfg = &setup.game;
    let mut mcts = Mcts::with_c_puct(NetEvaluator::new(net), setup.cfg.c_puct);
    let mut state = game::initial_state(gcfg, side);
    let mut moves = Vec::new();
    while !game::is_terminal(gcfg, &state) {
        let pi = mcts.policy(gcfg, &state, setup.cfg.num_mcts_sims, tau)?;
        let a = sample_action(&pi, rng);
        moves.push(MoveRecord {
            action: a + 1,
            pi,
        });
        state = game::apply_action(gcfg, &state, a + 1)?;
    }
    Ok((Trajectory { side, moves }, state))
}

/// Forced replay of a known-good action script, recorded with one-hot
/// policies so the moves train the net toward the script.
fn scripted_trajectory(
    setup: &GameSetup,
    side: Side,
    actions: &[usize],
) -> Result<(Trajectory, GameState), DriverError> {
    let gcfg = &setup.game;
    let n = gcfg.n_action();
    let mut state = game::initial_state(gcfg, side);
    let mut moves = Vec::with_capacity(actions.len());
    for &action in actions {
        let mut pi = vec![0.0; n];
        pi[action - 1] = 1.0;
        moves.push(MoveRecord { action, pi });
        state = game::apply_action(gcfg, &state, action)?;
    }
    if !game::is_terminal(gcfg, &state) {
        return Err(DriverError::Config(
            "action script does not reach a terminal state".into(),
        ));
    }
    Ok((Trajectory { side, moves }, state))
}

fn walk(setup: &GameSetup, side: Side, actions: &[usize]) -> Result<GameState, DriverError> {
    let mut state = game::initial_state(&setup.game, side);
    for &action in actions {
        state = game::apply_action(&setup.game, &state, action)?;
    }
    Ok(state)
}

/// Inverse-cdf draw over the policy. Zero-probability entries can never be
/// picked; rounding shortfalls fall back to the last positive entry.
fn sample_action(pi: &[Real], rng: &mut ChaCha8Rng) -> usize {
    let u: Real = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in pi.iter().enumerate() {
        if p > 0.0 {
            last = i;
            acc += p;
            if u < acc {
                return i;
            }
        }
    }
    last
}

#[allow(clippy::too_many_arguments)]
fn evaluate_terminals(
    setup: &GameSetup,
    caches: &PipelineCaches,
    protagonist: Trajectory,
    state_p: &GameState,
    adversary: Trajectory,
    state_a: &GameState,
    iteration: usize,
    episode: usize,
    elite: bool,
    min_e_ns: Option<Real>,
) -> Result<EpisodeRecord, DriverError> {
    let pipeline = Pipeline::new(setup, caches);
    let specs_p = game::selected_experiments(&setup.game, state_p)?;
    let specs_a = game::selected_experiments(&setup.game, state_a)?;
    let strategy_key = game::strategy_key(&specs_p);
    let adversary_key = game::strategy_key(&specs_a);

    let calib = pipeline.protagonist_outcome(&specs_p);
    let (e1ns_adversary, score_adversary) = pipeline.adversary_outcome(&calib, &specs_a);
    let reward_protagonist = protagonist_reward(calib.score, min_e_ns, &setup.score);
    let reward_adversary = adversary_reward(score_adversary);

    Ok(EpisodeRecord {
        iteration,
        episode,
        elite,
        protagonist,
        adversary,
        protagonist_labels: specs_p.iter().map(|s| s.label.clone()).collect(),
        adversary_labels: specs_a.iter().map(|s| s.label.clone()).collect(),
        strategy_key,
        adversary_key,
        calibrated: calib.calibrated,
        params: calib.params.clone(),
        e1ns_protagonist: calib.e1ns,
        score_protagonist: calib.score,
        e1ns_adversary,
        score_adversary,
        min_e_ns_at_play: min_e_ns,
        reward_protagonist,
        reward_adversary,
        win_protagonist: None,
        win_adversary: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driver::RunConfig;
    use crate::learner::net::NetConfig;

    /// Toy preset with a chosen oracle; the candidate stays Drucker-Prager,
    /// so `dp-self` is a round trip and `ss-self` a mismatch game.
    fn toy_setup(oracle: &str, calib_max_iters: usize) -> GameSetup {
        let mut cfg = RunConfig::preset("toy").unwrap();
        cfg.oracle = oracle.into();
        cfg.calib_max_iters = calib_max_iters;
        cfg.num_mcts_sims = 8;
        GameSetup::new(cfg).unwrap()
    }

    fn small_net(setup: &GameSetup, side: Side, seed: u64) -> PolicyValueNet<Real> {
        let dropout = match side {
            Side::Protagonist => setup.cfg.dropout_protagonist,
            Side::Adversary => setup.cfg.dropout_adversary,
        };
        PolicyValueNet::new(
            NetConfig {
                input: setup.encoded_len(side),
                hidden: 16,
                actions: setup.game.n_action(),
                dropout,
            },
            seed,
        )
    }

    /// Slot-continue, then the first choice at every level of the toy tree.
    const FIRST_LEAF_SCRIPT: [usize; 4] = [1, 1, 1, 1];

    #[test]
    fn self_oracle_round_trip_defends_and_survives_the_same_attack() {
        let setup = toy_setup("dp-self", 200);
        let caches = PipelineCaches::new();
        let (tp, sp) =
            scripted_trajectory(&setup, Side::Protagonist, &FIRST_LEAF_SCRIPT).unwrap();
        let (ta, sa) = scripted_trajectory(&setup, Side::Adversary, &FIRST_LEAF_SCRIPT).unwrap();
        let rec =
            evaluate_terminals(&setup, &caches, tp, &sp, ta, &sa, 0, 0, false, None).unwrap();
        // Truth is inside the model class and equals the table guess, so the
        // fit is exact and the attack on the same leaf cannot land.
        assert!(rec.calibrated);
        assert!(rec.score_protagonist > 0.9999, "{}", rec.score_protagonist);
        assert!(rec.score_adversary > 0.9999, "{}", rec.score_adversary);
        assert_eq!(rec.reward_protagonist, rec.score_protagonist);
        assert_eq!(rec.reward_adversary, -rec.score_adversary);
        assert_eq!(rec.strategy_key, rec.adversary_key);
        assert_eq!(rec.protagonist_labels.len(), 1);
    }

    #[test]
    fn played_episode_replays_bit_for_bit_on_fresh_caches() {
        let setup = toy_setup("ss-self", 25);
        let caches = PipelineCaches::new();
        let net_p = small_net(&setup, Side::Protagonist, 11);
        let net_a = small_net(&setup, Side::Adversary, 12);
        let ctx = EpisodeCtx {
            setup: &setup,
            caches: &caches,
            net_protagonist: &net_p,
            net_adversary: &net_a,
            tau: 1.0,
            min_e_ns: Some(0.4),
            elite_script: None,
        };
        let rec = play_episode(&ctx, 3, 7).unwrap();

        let fresh = PipelineCaches::new();
        let again = replay_episode(&setup, &fresh, &rec).unwrap();
        assert_eq!(
            rec.score_protagonist.to_bits(),
            again.score_protagonist.to_bits()
        );
        assert_eq!(
            rec.score_adversary.to_bits(),
            again.score_adversary.to_bits()
        );
        assert_eq!(
            rec.reward_protagonist.to_bits(),
            again.reward_protagonist.to_bits()
        );
        assert_eq!(
            rec.reward_adversary.to_bits(),
            again.reward_adversary.to_bits()
        );
        assert_eq!(rec.e1ns_protagonist.map(Real::to_bits), again.e1ns_protagonist.map(Real::to_bits));
        assert_eq!(rec.e1ns_adversary.map(Real::to_bits), again.e1ns_adversary.map(Real::to_bits));
        assert_eq!(rec.strategy_key, again.strategy_key);
        assert_eq!(rec.adversary_key, again.adversary_key);
        assert_eq!(rec.params, again.params);
    }

    #[test]
    fn identical_seeds_reproduce_the_same_episode() {
        let setup = toy_setup("dp-self", 200);
        let caches = PipelineCaches::new();
        let net_p = small_net(&setup, Side::Protagonist, 1);
        let net_a = small_net(&setup, Side::Adversary, 2);
        let ctx = EpisodeCtx {
            setup: &setup,
            caches: &caches,
            net_protagonist: &net_p,
            net_adversary: &net_a,
            tau: 1.0,
            min_e_ns: None,
            elite_script: None,
        };
        let a = play_episode(&ctx, 0, 4).unwrap();
        let b = play_episode(&ctx, 0, 4).unwrap();
        assert_eq!(a, b);
        let c = play_episode(&ctx, 0, 5).unwrap();
        assert!(c.protagonist != a.protagonist || c.adversary != a.adversary);
    }

    #[test]
    fn failed_calibration_collapses_to_sentinels() {
        let setup = toy_setup("dp-self", 200);
        let caches = PipelineCaches::new();
        let pipeline = Pipeline::new(&setup, &caches);
        let broken = CalibSummary::failed(
            "whatever",
            vec![0.0; 7],
            FeatureScaler::identity(crate::lab::N_FEATURES),
            "synthetic".into(),
        );
        let spec = crate::driver::spec_by_label(&setup.tree, "300kPa_DTC_1%").unwrap();
        let (e1ns, score) = pipeline.adversary_outcome(&broken, &[spec]);
        assert_eq!(e1ns, None);
        assert_eq!(score, SENTINEL_SCORE);
        assert_eq!(adversary_reward(score), 1.0);
        assert_eq!(protagonist_reward(SENTINEL_SCORE, None, &setup.score), -1.0);
    }

    #[test]
    fn caches_deduplicate_oracle_and_calibration_work() {
        let setup = toy_setup("dp-self", 200);
        let caches = PipelineCaches::new();
        let pipeline = Pipeline::new(&setup, &caches);
        let spec = crate::driver::spec_by_label(&setup.tree, "300kPa_DTC_1%").unwrap();
        let a = pipeline.oracle_response(&spec);
        let b = pipeline.oracle_response(&spec);
        assert!(Arc::ptr_eq(&a, &b));
        let c1 = pipeline.protagonist_outcome(std::slice::from_ref(&spec));
        let c2 = pipeline.protagonist_outcome(std::slice::from_ref(&spec));
        assert!(Arc::ptr_eq(&c1, &c2));
        assert_eq!(caches.counts().0, 1);
        assert_eq!(caches.counts().1, 1);
    }

    #[test]
    fn sampling_respects_the_policy_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pi = vec![0.0, 0.9, 0.0, 0.1];
        let mut counts = [0usize; 4];
        for _ in 0..200 {
            counts[sample_action(&pi, &mut rng)] += 1;
        }
        assert_eq!(counts[0], 0);
        assert_eq!(counts[2], 0);
        assert!(counts[1] > 150, "{counts:?}");

        // Degenerate one-hot policies are deterministic.
        let one_hot = vec![0.0, 0.0, 1.0];
        assert_eq!(sample_action(&one_hot, &mut rng), 2);
    }

    #[test]
    fn scripts_must_reach_terminal_states() {
        let setup = toy_setup("dp-self", 200);
        let err = scripted_trajectory(&setup, Side::Protagonist, &[1, 1]).unwrap_err();
        assert!(matches!(err, DriverError::Config(_)));
        let err = scripted_trajectory(&setup, Side::Protagonist, &[2]).unwrap_err();
        assert!(matches!(err, DriverError::Game(_)));
    }
}
