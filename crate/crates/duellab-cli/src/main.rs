//! Command-line front end. Every subcommand is a thin wrapper over the
//! library: configs load from TOML (or a named preset), results print as
//! JSON on stdout, progress notes go to stderr.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use duellab::calib::{calibrate_with, CalibrateOptions, CalibrationProblem, LmOptions, ModelKind};
use duellab::driver::{
    brute_force_nash, dump_qvalues, load_tree, play_episode, spec_by_label,
    train::initial_nets, EpisodeCtx, GameSetup, PipelineCaches, RunConfig,
};
use duellab::game::Side;
use duellab::lab::{compile_program, ResponseSeries};
use duellab::learner::net::PolicyValueNet;
use duellab::Real;

#[derive(Parser)]
#[command(name = "duellab", version, about = "Adversarial experiment selection games")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train both agents by self-play and write run artifacts.
    Train(ConfigArgs),
    /// Play competitive episodes, printing one episode record per line.
    Play(PlayArgs),
    /// Print a tree's size, strategy counts, and leaf labels as CSV.
    EnumerateTree(EnumerateArgs),
    /// Fit a model to measured response curves from CSV files.
    Calibrate(CalibrateArgs),
    /// Solve a small game exhaustively and print the equilibrium report.
    NashOracle(ConfigArgs),
    /// Print the value head over every first-path prefix of the tree.
    DumpQvalues(DumpArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Run config TOML file.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in config: bulk-dp, bulk-sanisand, or toy.
    #[arg(long)]
    preset: Option<String>,
    /// Override the run seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the run name.
    #[arg(long)]
    name: Option<String>,
    /// Override the artifacts directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Override worker thread count (0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => RunConfig::from_path(path)
                .with_context(|| format!("loading config {}", path.display()))?,
            (None, Some(preset)) => RunConfig::preset(preset)?,
            (None, None) => bail!("pass --config <file> or --preset <name>"),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(name) = &self.name {
            cfg.name = name.clone();
        }
        if let Some(dir) = &self.out_dir {
            cfg.out_dir = dir.to_string_lossy().into_owned();
        }
        if let Some(workers) = self.workers {
            cfg.workers = workers;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct PlayArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Protagonist checkpoint; a freshly seeded net when omitted.
    #[arg(long)]
    ckpt_protagonist: Option<PathBuf>,
    /// Adversary checkpoint; a freshly seeded net when omitted.
    #[arg(long)]
    ckpt_adversary: Option<PathBuf>,
    /// Number of episodes.
    #[arg(long, default_value_t = 1)]
    episodes: usize,
    /// Search temperature; the config's tau_test when omitted.
    #[arg(long)]
    tau: Option<Real>,
}

#[derive(Args)]
struct EnumerateArgs {
    /// Built-in tree name or a tree TOML path.
    #[arg(long, default_value = "bulk")]
    tree: String,
    /// Largest strategy size to count.
    #[arg(long, default_value_t = 5)]
    max_paths: usize,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Built-in tree name or a tree TOML path.
    #[arg(long, default_value = "bulk")]
    tree: String,
    /// Candidate model: drucker-prager or sanisand.
    #[arg(long)]
    model: String,
    /// LABEL=FILE pair: a leaf label plus its measured response CSV, on the
    /// lab's record grid. Repeat for multiple experiments.
    #[arg(long = "experiment", value_name = "LABEL=FILE", required = true)]
    experiments: Vec<String>,
    /// Solver iteration budget per stage.
    #[arg(long, default_value_t = 200)]
    max_iters: usize,
    /// Extra random restarts; best fit wins.
    #[arg(long, default_value_t = 0)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct DumpArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Checkpoint to evaluate; a freshly seeded net when omitted.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Whose game the states follow: protagonist or adversary.
    #[arg(long, default_value = "protagonist")]
    side: String,
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Train(args) => train(&args),
        Cmd::Play(args) => play(&args),
        Cmd::EnumerateTree(args) => enumerate_tree(&args),
        Cmd::Calibrate(args) => calibrate(&args),
        Cmd::NashOracle(args) => nash_oracle(&args),
        Cmd::DumpQvalues(args) => dump(&args),
    }
}

fn train(args: &ConfigArgs) -> Result<()> {
    let cfg = args.load()?;
    eprintln!(
        "training {} for {} iterations x {} episodes",
        cfg.name, cfg.num_iters, cfg.num_episodes
    );
    let arts = duellab::driver::run_training(&cfg)?;
    eprintln!("artifacts in {}", arts.dir.display());
    println!("{}", serde_json::to_string_pretty(&arts.report)?);
    Ok(())
}

fn play(args: &PlayArgs) -> Result<()> {
    let cfg = args.config.load()?;
    let tau = args.tau.unwrap_or(cfg.tau_test);
    let setup = GameSetup::new(cfg)?;
    let (fresh_p, fresh_a) = initial_nets(&setup);
    let net_p = load_net(&setup, Side::Protagonist, args.ckpt_protagonist.as_deref(), fresh_p)?;
    let net_a = load_net(&setup, Side::Adversary, args.ckpt_adversary.as_deref(), fresh_a)?;

    let caches = PipelineCaches::new();
    let ctx = EpisodeCtx {
        setup: &setup,
        caches: &caches,
        net_protagonist: &net_p,
        net_adversary: &net_a,
        tau,
        min_e_ns: None,
        elite_script: None,
    };
    // Tagged past the training iterations so seeds never collide with them.
    for episode in 0..args.episodes {
        let record = play_episode(&ctx, setup.cfg.num_iters, episode)?;
        println!("{}", serde_json::to_string(&record)?);
    }
    Ok(())
}

fn load_net(
    setup: &GameSetup,
    side: Side,
    ckpt: Option<&Path>,
    fresh: PolicyValueNet<Real>,
) -> Result<PolicyValueNet<Real>> {
    let Some(path) = ckpt else {
        return Ok(fresh);
    };
    let net = PolicyValueNet::<Real>::load(path)
        .with_context(|| format!("loading checkpoint {}", path.display()))?;
    let cfg = net.config();
    if cfg.input != setup.encoded_len(side) || cfg.actions != setup.game.n_action() {
        bail!(
            "checkpoint {} has shape {}x{}, the {side:?} game needs {}x{}",
            path.display(),
            cfg.input,
            cfg.actions,
            setup.encoded_len(side),
            setup.game.n_action(),
        );
    }
    Ok(net)
}

fn enumerate_tree(args: &EnumerateArgs) -> Result<()> {
    let tree = load_tree(&args.tree)?;
    println!("key,value");
    println!("tree,{}", tree.name());
    println!("vertices,{}", tree.vertex_count());
    println!("leaves,{}", tree.leaf_count());
    for k in 1..=args.max_paths {
        println!("strategies_up_to_{k},{}", tree.combination_count(k));
    }
    for &leaf in tree.leaves() {
        println!("leaf,{}", tree.vertex(leaf).label);
    }
    Ok(())
}

fn calibrate(args: &CalibrateArgs) -> Result<()> {
    let model = match args.model.as_str() {
        "drucker-prager" => ModelKind::DruckerPrager,
        "sanisand" => ModelKind::Sanisand,
        other => bail!("unknown model {other:?}; pick drucker-prager or sanisand"),
    };
    let tree = load_tree(&args.tree)?;

    let mut experiments = Vec::new();
    let mut labels = Vec::new();
    for pair in &args.experiments {
        let (label, file) = pair
            .split_once('=')
            .with_context(|| format!("expected LABEL=FILE, got {pair:?}"))?;
        let spec = spec_by_label(&tree, label)?;
        let program = compile_program::<Real>(&tree, &spec)?;
        let text = std::fs::read_to_string(file)
            .with_context(|| format!("reading {file}"))?;
        let series = ResponseSeries::<Real>::from_csv_str(&text)
            .with_context(|| format!("parsing {file}"))?;
        experiments.push((program, series));
        labels.push(label.to_string());
    }

    let problem = CalibrationProblem::new(model, experiments);
    let opts = CalibrateOptions {
        lm: LmOptions {
            max_iters: args.max_iters,
            ..LmOptions::default()
        },
        restarts: args.restarts,
        seed: args.seed,
    };
    let report = calibrate_with(&problem, &opts)?;

    let named: Vec<serde_json::Value> = model
        .param_specs::<Real>()
        .iter()
        .zip(&report.params)
        .map(|(spec, value)| serde_json::json!({ "name": spec.name, "value": value }))
        .collect();
    let e_ns: Vec<serde_json::Value> = labels
        .iter()
        .zip(&report.e_ns)
        .map(|(label, e)| serde_json::json!({ "experiment": label, "e_ns": e }))
        .collect();
    let out = serde_json::json!({
        "model": model.name(),
        "objective": report.objective,
        "params": named,
        "e_ns": e_ns,
        "stage1": report.stage1,
        "stage2": report.stage2,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn nash_oracle(args: &ConfigArgs) -> Result<()> {
    let setup = GameSetup::new(args.load()?)?;
    let report = brute_force_nash(&setup, &PipelineCaches::new())?;
    eprintln!(
        "{} protagonist strategies, equilibrium reward {}",
        report.entries.len(),
        report.equilibrium_reward
    );
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn dump(args: &DumpArgs) -> Result<()> {
    let side = match args.side.as_str() {
        "protagonist" => Side::Protagonist,
        "adversary" => Side::Adversary,
        other => bail!("unknown side {other:?}; pick protagonist or adversary"),
    };
    let setup = GameSetup::new(args.config.load()?)?;
    let (fresh_p, fresh_a) = initial_nets(&setup);
    let fresh = match side {
        Side::Protagonist => fresh_p,
        Side::Adversary => fresh_a,
    };
    let net = load_net(&setup, side, args.ckpt.as_deref(), fresh)?;
    let map = dump_qvalues(&setup, &net, side)?;
    println!("{}", serde_json::to_string_pretty(&map)?);
    Ok(())
}
