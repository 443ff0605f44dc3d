//! The self-play training loop. Each iteration fans the configured number of
//! episodes out over a worker pool against frozen net snapshots, folds the
//! outcomes into the reward history, retrains both nets on a sliding window
//! of past iterations, and writes artifacts. After the last training
//! iteration one extra evaluation pass runs at the sharpened test
//! temperature; its modal strategies are the run's converged pair.
//!
//! Workers only share the episode caches (internally locked) and immutable
//! snapshots; everything stateful happens between iterations on one thread.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::game::{self, Side};
use crate::learner::net::{net_train, Example, NetConfig, PolicyValueNet, TrainHyper};
use crate::scoring::RewardHistory;
use crate::Real;

use super::pipeline::{play_episode, EpisodeCtx, EpisodeRecord, PipelineCaches, Trajectory};
use super::{io_err, mix_seed, DriverError, GameSetup, RunConfig};

const SEED_TAG_NET_PROTAGONIST: u64 = 3;
const SEED_TAG_NET_ADVERSARY: u64 = 4;
const SEED_TAG_TRAIN_PROTAGONIST: u64 = 5;
const SEED_TAG_TRAIN_ADVERSARY: u64 = 6;

/// One converged strategy: its key, the leaf labels behind it, and how often
/// the final evaluation pass played it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub key: String,
    pub labels: Vec<String>,
    pub frequency: Real,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FinalReport {
    pub config: RunConfig,
    /// Training iterations completed (the final evaluation pass is extra).
    pub iterations: usize,
    pub converged_protagonist: StrategySummary,
    pub converged_adversary: StrategySummary,
    /// Mean rewards over the final evaluation pass.
    pub mean_reward_protagonist: Real,
    pub mean_reward_adversary: Real,
    /// Running minimum of the adversary-prediction fit index, whole run.
    pub min_e_ns: Option<Real>,
}

pub struct RunArtifacts {
    pub dir: PathBuf,
    pub report: FinalReport,
}

/// Train both agents from scratch. Artifacts land in
/// `<out_dir>/<name>/iter_<k>/` (episode log, score table, both checkpoints;
/// `iter_<num_iters>` holds the final evaluation pass) plus a top-level
/// `final_report.json`. Identical configs reproduce identical artifacts.
pub fn run_training(cfg: &RunConfig) -> Result<RunArtifacts, DriverError> {
    let setup = GameSetup::new(cfg.clone())?;
    let dir = PathBuf::from(&cfg.out_dir).join(&cfg.name);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;

    let pool = thread_pool(cfg.workers)?;
    let caches = PipelineCaches::new();
    let mut history = RewardHistory::<Real>::new();
    let (mut net_p, mut net_a) = initial_nets(&setup);

    // Per-iteration records, binarized at log time; training re-binarizes
    // its window against the latest history.
    let mut past: Vec<Vec<EpisodeRecord>> = Vec::new();
    let mut elite: Option<(Vec<usize>, Real)> = None;

    for k in 0..cfg.num_iters {
        let records = run_iteration(
            &setup, &caches, &pool, &net_p, &net_a, &history, k, cfg.tau_train, &elite,
        )?;
        push_history(&mut history, &records);
        update_elite(&mut elite, &records);
        let labeled = binarized(&setup, &history, records);
        past.push(labeled);

        let window = &past[lookback_range(k, cfg.i_lookback)];
        train_nets(&setup, &history, window, &mut net_p, &mut net_a, k)?;
        write_iteration(&dir, k, past.last().unwrap(), &net_p, &net_a)?;
    }

    // Final evaluation pass: sharpened temperature, no further training.
    let k = cfg.num_iters;
    let records = run_iteration(
        &setup, &caches, &pool, &net_p, &net_a, &history, k, cfg.tau_test, &elite,
    )?;
    push_history(&mut history, &records);
    let labeled = binarized(&setup, &history, records);
    write_iteration(&dir, k, &labeled, &net_p, &net_a)?;

    let report = FinalReport {
        config: cfg.clone(),
        iterations: cfg.num_iters,
        converged_protagonist: modal_strategy(&labeled, |r| (&r.strategy_key, &r.protagonist_labels)),
        converged_adversary: modal_strategy(&labeled, |r| (&r.adversary_key, &r.adversary_labels)),
        mean_reward_protagonist: mean(labeled.iter().map(|r| r.reward_protagonist)),
        mean_reward_adversary: mean(labeled.iter().map(|r| r.reward_adversary)),
        min_e_ns: history.min_e_ns(),
    };
    let path = dir.join("final_report.json");
    fs::write(&path, serde_json::to_string_pretty(&report)?).map_err(io_err(&path))?;
    Ok(RunArtifacts { dir, report })
}

/// Play one iteration's episodes concurrently against frozen snapshots.
/// Exposed for throughput measurements.
pub fn run_episode_batch(
    setup: &GameSetup,
    caches: &PipelineCaches,
    net_p: &PolicyValueNet<Real>,
    net_a: &PolicyValueNet<Real>,
    iteration: usize,
    workers: usize,
) -> Result<Vec<EpisodeRecord>, DriverError> {
    let pool = thread_pool(workers)?;
    run_iteration(
        setup,
        caches,
        &pool,
        net_p,
        net_a,
        &RewardHistory::new(),
        iteration,
        setup.cfg.tau_train,
        &None,
    )
}

#[allow(clippy::too_many_arguments)]
fn run_iteration(
    setup: &GameSetup,
    caches: &PipelineCaches,
    pool: &rayon::ThreadPool,
    net_p: &PolicyValueNet<Real>,
    net_a: &PolicyValueNet<Real>,
    history: &RewardHistory<Real>,
    iteration: usize,
    tau: Real,
    elite: &Option<(Vec<usize>, Real)>,
) -> Result<Vec<EpisodeRecord>, DriverError> {
    let cfg = &setup.cfg;
    // Iteration-start snapshot; every episode in the fan-out sees the same
    // history state no matter when it runs.
    let min_e_ns = history.min_e_ns();
    let n_elite = match elite {
        Some(_) => (cfg.elite_fraction * cfg.num_episodes as Real).ceil() as usize,
        None => 0,
    };
    pool.install(|| {
        (0..cfg.num_episodes)
            .into_par_iter()
            .map(|episode| {
                let script = if episode < n_elite {
                    elite.as_ref().map(|(actions, _)| actions.as_slice())
                } else {
                    None
                };
                let ctx = EpisodeCtx {
                    setup,
                    caches,
                    net_protagonist: net_p,
                    net_adversary: net_a,
                    tau,
                    min_e_ns,
                    elite_script: script,
                };
                play_episode(&ctx, iteration, episode)
            })
            .collect()
    })
}

pub(crate) fn thread_pool(workers: usize) -> Result<rayon::ThreadPool, DriverError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if workers > 0 {
        builder = builder.num_threads(workers);
    }
    builder
        .build()
        .map_err(|e| DriverError::Config(format!("worker pool: {e}")))
}

/// Freshly seeded nets, exactly as a new training run starts out.
pub fn initial_nets(setup: &GameSetup) -> (PolicyValueNet<Real>, PolicyValueNet<Real>) {
    let seed = setup.cfg.seed;
    (
        PolicyValueNet::new(
            net_config(setup, Side::Protagonist),
            mix_seed(&[seed, SEED_TAG_NET_PROTAGONIST]),
        ),
        PolicyValueNet::new(
            net_config(setup, Side::Adversary),
            mix_seed(&[seed, SEED_TAG_NET_ADVERSARY]),
        ),
    )
}

fn net_config(setup: &GameSetup, side: Side) -> NetConfig {
    NetConfig {
        input: setup.encoded_len(side),
        hidden: setup.cfg.hidden,
        actions: setup.game.n_action(),
        dropout: match side {
            Side::Protagonist => setup.cfg.dropout_protagonist,
            Side::Adversary => setup.cfg.dropout_adversary,
        },
    }
}

fn push_history(history: &mut RewardHistory<Real>, records: &[EpisodeRecord]) {
    let rewards = records.iter().map(|r| r.reward_protagonist).collect();
    let scores = records
        .iter()
        .map(|r| (r.strategy_key.clone(), r.score_adversary))
        .collect();
    // Episodes without an adversary fit index surface as NaN, which the
    // running minimum ignores.
    let e_ns: Vec<Real> = records
        .iter()
        .map(|r| r.e1ns_adversary.unwrap_or(Real::NAN))
        .collect();
    history.push_iteration(rewards, scores, &e_ns);
}

/// Best-so-far protagonist strategy by observed reward; strict improvement
/// keeps the earliest winner, so the elite is deterministic.
fn update_elite(elite: &mut Option<(Vec<usize>, Real)>, records: &[EpisodeRecord]) {
    for r in records {
        let better = match elite {
            Some((_, best)) => r.reward_protagonist > *best,
            None => true,
        };
        if better {
            *elite = Some((r.protagonist.actions(), r.reward_protagonist));
        }
    }
}

fn binarized(
    setup: &GameSetup,
    history: &RewardHistory<Real>,
    records: Vec<EpisodeRecord>,
) -> Vec<EpisodeRecord> {
    records
        .into_iter()
        .map(|mut r| {
            r.win_protagonist = Some(history.binarize_protagonist(r.reward_protagonist, &setup.score));
            r.win_adversary =
                Some(history.binarize_adversary(&r.strategy_key, r.score_adversary, &setup.score));
            r
        })
        .collect()
}

/// Iterations feeding training after iteration `k` completes.
pub fn lookback_range(k: usize, i_lookback: usize) -> std::ops::RangeInclusive<usize> {
    k.saturating_sub(i_lookback)..=k
}

fn train_nets(
    setup: &GameSetup,
    history: &RewardHistory<Real>,
    window: &[Vec<EpisodeRecord>],
    net_p: &mut PolicyValueNet<Real>,
    net_a: &mut PolicyValueNet<Real>,
    k: usize,
) -> Result<(), DriverError> {
    let (ex_p, ex_a) = training_examples(setup, history, window.iter().flatten())?;
    let cfg = &setup.cfg;
    let hyper = |tag: u64| TrainHyper {
        lr: cfg.lr,
        batch_size: cfg.batch_size,
        epochs: cfg.epochs,
        seed: mix_seed(&[cfg.seed, tag, k as u64]),
    };
    net_train(net_p, &ex_p, &hyper(SEED_TAG_TRAIN_PROTAGONIST))?;
    net_train(net_a, &ex_a, &hyper(SEED_TAG_TRAIN_ADVERSARY))?;
    Ok(())
}

/// Rebuild (state, policy, outcome) examples for both nets by replaying each
/// record's actions. Outcomes are re-binarized against the current history,
/// so old episodes keep teaching under today's thresholds.
fn training_examples<'a>(
    setup: &GameSetup,
    history: &RewardHistory<Real>,
    records: impl Iterator<Item = &'a EpisodeRecord>,
) -> Result<(Vec<Example<Real>>, Vec<Example<Real>>), DriverError> {
    let mut ex_p = Vec::new();
    let mut ex_a = Vec::new();
    for r in records {
        let z_p = Real::from(history.binarize_protagonist(r.reward_protagonist, &setup.score));
        let z_a = Real::from(history.binarize_adversary(
            &r.strategy_key,
            r.score_adversary,
            &setup.score,
        ));
        examples_from(&mut ex_p, setup, &r.protagonist, z_p)?;
        examples_from(&mut ex_a, setup, &r.adversary, z_a)?;
    }
    Ok((ex_p, ex_a))
}

fn examples_from(
    out: &mut Vec<Example<Real>>,
    setup: &GameSetup,
    traj: &Trajectory,
    z: Real,
) -> Result<(), DriverError> {
    let gcfg = &setup.game;
    let mut state = game::initial_state(gcfg, traj.side);
    for m in &traj.moves {
        out.push(Example {
            state: game::encode_state(gcfg, &state),
            pi: m.pi.clone(),
            legal: game::legal_actions(gcfg, &state)?,
            z,
        });
        state = game::apply_action(gcfg, &state, m.action)?;
    }
    Ok(())
}

fn write_iteration(
    dir: &Path,
    k: usize,
    records: &[EpisodeRecord],
    net_p: &PolicyValueNet<Real>,
    net_a: &PolicyValueNet<Real>,
) -> Result<(), DriverError> {
    let iter_dir = dir.join(format!("iter_{k}"));
    fs::create_dir_all(&iter_dir).map_err(io_err(&iter_dir))?;

    let mut jsonl = String::new();
    for r in records {
        jsonl.push_str(&serde_json::to_string(r)?);
        jsonl.push('\n');
    }
    let path = iter_dir.join("episodes.jsonl");
    fs::write(&path, jsonl).map_err(io_err(&path))?;

    let path = iter_dir.join("scores.csv");
    fs::write(&path, scores_csv(records)).map_err(io_err(&path))?;

    net_p.save(iter_dir.join("ckpt_protagonist"))?;
    net_a.save(iter_dir.join("ckpt_adversary"))?;
    Ok(())
}

/// Two rows per episode, one per side. Floats print in shortest round-trip
/// form; a missing fit index prints as an empty field.
pub fn scores_csv(records: &[EpisodeRecord]) -> String {
    fn opt(v: Option<Real>) -> String {
        v.map(|x| x.to_string()).unwrap_or_default()
    }
    let mut csv = String::from("iteration,episode,side,e1_ns,score,reward,win\n");
    for r in records {
        let win_p = opt(r.win_protagonist.map(Real::from));
        let win_a = opt(r.win_adversary.map(Real::from));
        csv.push_str(&format!(
            "{},{},protagonist,{},{},{},{}\n",
            r.iteration,
            r.episode,
            opt(r.e1ns_protagonist),
            r.score_protagonist,
            r.reward_protagonist,
            win_p,
        ));
        csv.push_str(&format!(
            "{},{},adversary,{},{},{},{}\n",
            r.iteration,
            r.episode,
            opt(r.e1ns_adversary),
            r.score_adversary,
            r.reward_adversary,
            win_a,
        ));
    }
    csv
}

/// Most frequently played strategy; ties go to the earliest episode.
fn modal_strategy<'a, F>(records: &'a [EpisodeRecord], select: F) -> StrategySummary
where
    F: Fn(&'a EpisodeRecord) -> (&'a String, &'a Vec<String>),
{
    let mut order: Vec<(&String, &Vec<String>, usize)> = Vec::new();
    for r in records {
        let (key, labels) = select(r);
        match order.iter_mut().find(|(k, _, _)| *k == key) {
            Some(entry) => entry.2 += 1,
            None => order.push((key, labels, 1)),
        }
    }
    let best = order
        .iter()
        .max_by_key(|(_, _, n)| *n)
        .expect("at least one episode per iteration");
    StrategySummary {
        key: best.0.clone(),
        labels: best.1.clone(),
        frequency: best.2 as Real / records.len() as Real,
    }
}

fn mean(values: impl Iterator<Item = Real>) -> Real {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values {
        sum += v;
        n += 1;
    }
    sum / n as Real
}
