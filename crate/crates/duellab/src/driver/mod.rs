//! Orchestration: self-play training iterations, the exhaustive equilibrium
//! oracle, and the value-map dump. Everything below here is plumbing around
//! the game/lab/calib/scoring/learner modules; the driver itself runs at
//! [`crate::Real`] precision.

pub mod nash;
pub mod pipeline;
pub mod qdump;
pub mod train;

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calib::{CalibError, ModelKind};
use crate::game::{GameConfig, GameError, Side};
use crate::lab::{oracle_by_name, LabError, MaterialOracle};
use crate::learner::mcts::MctsError;
use crate::learner::net::NetError;
use crate::scoring::{ScoreConfig, ScoreError};
use crate::tree::{DecisionTree, ExperimentSpec, TreeError};
use crate::Real;

pub use nash::{brute_force_nash, NashEntry, NashReport};
pub use pipeline::{
    play_episode, replay_episode, EpisodeCtx, EpisodeRecord, MoveRecord, PipelineCaches,
    Trajectory,
};
pub use qdump::dump_qvalues;
pub use train::{run_episode_batch, run_training, FinalReport, RunArtifacts, StrategySummary};

#[derive(Debug, Error)]
pub enum DriverError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Lab(#[from] LabError),
    #[error(transparent)]
    Calib(#[from] CalibError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Mcts(#[from] MctsError),
    #[error("{pairs} strategy pairs exceed the enumeration cap of {cap}")]
    CapExceeded { pairs: String, cap: u64 },
    #[error("io at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("config file: {0}")]
    TomlParse(#[from] toml::de::Error),
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> DriverError {
    let path = path.into();
    move |source| DriverError::Io { path, source }
}

/// Every knob of one run. Serializable so a run can be launched from a TOML
/// file and echoed back into its final report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Run name; artifacts land in `<out_dir>/<name>/`.
    pub name: String,
    /// Built-in tree name, or a path to a tree TOML file.
    pub tree: String,
    /// Ground-truth oracle id (see [`oracle_by_name`]).
    pub oracle: String,
    /// Candidate model under calibration.
    pub model: ModelKind,
    pub num_iters: usize,
    pub num_episodes: usize,
    pub num_mcts_sims: usize,
    pub alpha_score: Real,
    pub alpha_range: Real,
    /// Training window: iteration `k` trains on iterations `k - i_lookback ..= k`.
    pub i_lookback: usize,
    pub tau_train: Real,
    pub tau_test: Real,
    pub max_paths_protagonist: usize,
    pub max_paths_adversary: usize,
    pub e_max_ns: Real,
    pub e_min_ns: Real,
    pub c_puct: Real,
    pub seed: u64,
    /// Worker threads for the episode fan-out; 0 uses all cores.
    pub workers: usize,
    /// Fraction of each iteration's episodes that replay the best-so-far
    /// protagonist strategy instead of sampling. 0 disables.
    pub elite_fraction: Real,
    /// Leaf labels always added to the adversary's prediction test set.
    pub mandatory: Vec<String>,
    pub hidden: usize,
    pub dropout_protagonist: f64,
    pub dropout_adversary: f64,
    pub lr: Real,
    pub batch_size: usize,
    pub epochs: usize,
    pub calib_restarts: usize,
    pub calib_max_iters: usize,
    pub nash_pair_cap: u64,
    pub out_dir: String,
}

impl Default for RunConfig {
    /// The published bulk-tree Drucker-Prager game settings.
    fn default() -> Self {
        RunConfig {
            name: "bulk-dp".into(),
            tree: "bulk".into(),
            oracle: "dp-self".into(),
            model: ModelKind::DruckerPrager,
            num_iters: 10,
            num_episodes: 50,
            num_mcts_sims: 50,
            alpha_score: 0.0,
            alpha_range: 0.2,
            i_lookback: 4,
            tau_train: 1.0,
            tau_test: 0.1,
            max_paths_protagonist: 5,
            max_paths_adversary: 5,
            e_max_ns: 1.0,
            e_min_ns: -1.0,
            c_puct: 1.0,
            seed: 0,
            workers: 0,
            elite_fraction: 0.0,
            mandatory: Vec::new(),
            hidden: 256,
            dropout_protagonist: 0.5,
            dropout_adversary: 0.25,
            lr: 1.0e-3,
            batch_size: 64,
            epochs: 10,
            calib_restarts: 0,
            calib_max_iters: 200,
            nash_pair_cap: 10_000,
            out_dir: "runs".into(),
        }
    }
}

impl RunConfig {
    /// Named presets. `bulk-dp` and `bulk-sanisand` mirror the published
    /// game settings; `toy` is a desk-scale mismatch game (truth outside the
    /// candidate's model class) that finishes in well under a minute.
    pub fn preset(name: &str) -> Result<RunConfig, DriverError> {
        match name {
            "bulk-dp" => Ok(RunConfig::default()),
            "bulk-sanisand" => Ok(RunConfig {
                name: "bulk-sanisand".into(),
                oracle: "ss-self".into(),
                model: ModelKind::Sanisand,
                num_episodes: 40,
                alpha_score: 1.0,
                // Unload-reload experiments every calibrated candidate must
                // predict, spread over pressures, densities, and test types.
                mandatory: vec![
                    "300kPa_0.60_DTC_3%_0%_5%".into(),
                    "300kPa_0.55_TTC_5%_0%_5%".into(),
                    "400kPa_0.55_DTE_5%_3%_5%".into(),
                    "400kPa_0.60_DTC_5%_3%_5%".into(),
                    "500kPa_0.60_TTC_3%_0%_3%".into(),
                ],
                ..RunConfig::default()
            }),
            "toy" => Ok(RunConfig {
                name: "toy".into(),
                tree: "toy".into(),
                oracle: "ss-self".into(),
                model: ModelKind::DruckerPrager,
                num_iters: 6,
                num_episodes: 20,
                num_mcts_sims: 25,
                max_paths_protagonist: 1,
                max_paths_adversary: 1,
                calib_max_iters: 60,
                ..RunConfig::default()
            }),
            other => Err(DriverError::Config(format!("unknown preset {other:?}"))),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<RunConfig, DriverError> {
        Ok(toml::from_str(text)?)
    }

    pub fn from_path(path: impl Into<PathBuf>) -> Result<RunConfig, DriverError> {
        let path = path.into();
        let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), DriverError> {
        let counts = [
            ("num_iters", self.num_iters),
            ("num_episodes", self.num_episodes),
            ("num_mcts_sims", self.num_mcts_sims),
            ("i_lookback", self.i_lookback),
            ("max_paths_protagonist", self.max_paths_protagonist),
            ("max_paths_adversary", self.max_paths_adversary),
            ("hidden", self.hidden),
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("calib_max_iters", self.calib_max_iters),
        ];
        for (what, n) in counts {
            if n == 0 {
                return Err(DriverError::Config(format!("{what} must be at least 1")));
            }
        }
        let fractions = [
            ("alpha_range", self.alpha_range),
            ("elite_fraction", self.elite_fraction),
            ("dropout_protagonist", self.dropout_protagonist),
            ("dropout_adversary", self.dropout_adversary),
        ];
        for (what, f) in fractions {
            if !(0.0..=1.0).contains(&f) {
                return Err(DriverError::Config(format!("{what} must lie in [0, 1]")));
            }
        }
        for (what, tau) in [("tau_train", self.tau_train), ("tau_test", self.tau_test)] {
            if !(tau > 0.0) {
                return Err(DriverError::Config(format!("{what} must be positive")));
            }
        }
        if !(self.alpha_score >= 0.0) {
            return Err(DriverError::Config("alpha_score must be >= 0".into()));
        }
        if !(self.lr > 0.0) {
            return Err(DriverError::Config("lr must be positive".into()));
        }
        if !(self.e_max_ns > self.e_min_ns) {
            return Err(DriverError::Config(
                "e_max_ns must exceed e_min_ns".into(),
            ));
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(DriverError::Config(
                "name must be a non-empty path component".into(),
            ));
        }
        Ok(())
    }

    pub fn score_config(&self) -> ScoreConfig<Real> {
        ScoreConfig {
            e_max_ns: self.e_max_ns,
            e_min_ns: self.e_min_ns,
            alpha_score: self.alpha_score,
            alpha_range: self.alpha_range,
        }
    }
}

/// A validated run: the tree, both per-side game configs, the score system,
/// the oracle, and the resolved mandatory test experiments.
pub struct GameSetup {
    pub cfg: RunConfig,
    pub tree: Arc<DecisionTree>,
    /// One config serves both sides; states carry their own [`Side`].
    pub game: GameConfig,
    pub score: ScoreConfig<Real>,
    pub oracle: MaterialOracle<Real>,
    pub mandatory: Vec<ExperimentSpec>,
}

impl GameSetup {
    pub fn new(cfg: RunConfig) -> Result<Self, DriverError> {
        cfg.validate()?;
        let score = cfg.score_config();
        score.validate()?;
        let tree = Arc::new(load_tree(&cfg.tree)?);
        let game = GameConfig::new(
            Arc::clone(&tree),
            cfg.max_paths_protagonist,
            cfg.max_paths_adversary,
        );
        let oracle = oracle_by_name::<Real>(&cfg.oracle)?;
        let mandatory = cfg
            .mandatory
            .iter()
            .map(|label| spec_by_label(&tree, label))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(GameSetup {
            cfg,
            tree,
            game,
            score,
            oracle,
            mandatory,
        })
    }

    /// Network input width for one side's encoded states.
    pub fn encoded_len(&self, side: Side) -> usize {
        self.game.encoded_len(side)
    }
}

/// Built-in tree name, else a filesystem path to a tree TOML.
pub fn load_tree(name: &str) -> Result<DecisionTree, DriverError> {
    match DecisionTree::builtin(name) {
        Ok(tree) => Ok(tree),
        Err(TreeError::UnknownBuiltin { .. }) if name.contains('.') || name.contains('/') => {
            let text =
                std::fs::read_to_string(name).map_err(io_err(PathBuf::from(name)))?;
            Ok(DecisionTree::from_toml(&text)?)
        }
        Err(e) => Err(e.into()),
    }
}

/// Find the leaf with this label.
pub fn spec_by_label(tree: &DecisionTree, label: &str) -> Result<ExperimentSpec, DriverError> {
    for &leaf in tree.leaves() {
        if tree.vertex(leaf).label == label {
            return Ok(tree.experiment(leaf)?);
        }
    }
    Err(DriverError::Config(format!(
        "no leaf labelled {label:?} in tree {:?}",
        tree.name()
    )))
}

/// Cheap stateless hash chain used to derive independent rng streams from
/// the run seed plus structural coordinates (iteration, episode, side tag).
pub(crate) fn mix_seed(parts: &[u64]) -> u64 {
    let mut acc = 0x243F_6A88_85A3_08D3; // arbitrary non-zero start
    for &p in parts {
        acc = splitmix64(acc ^ p);
    }
    acc
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable 64-bit FNV-1a, used to give cached calibrations a seed that is a
/// pure function of the strategy key (so results never depend on which
/// worker computes an entry first).
pub(crate) fn fnv1a(text: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in text.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
