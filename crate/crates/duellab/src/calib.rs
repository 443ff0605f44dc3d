//! Candidate-model calibration.
//!
//! Fits constitutive-model parameters to selected experiment data by
//! bounded nonlinear least squares on the standardized feature residuals
//! (the same pooled scaling the game scores use). The fit is staged: the
//! elastic parameters are calibrated on the first three records of every
//! experiment, then frozen while the remaining parameters are fit on the
//! full curves.
//!
//! The solver is a plain Levenberg-Marquardt loop with a finite-difference
//! Jacobian. Bounds are enforced through a smooth sine transform
//! `x = lo + (hi - lo) (sin u + 1) / 2`, so the iterates can never leave
//! the box and boundary optima show up as vanishing transformed gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lab::{run_experiment, LoadingProgram, ResponseSeries, Segment, N_FEATURES};
use crate::materials::{DpParams, Material, ParamSpec, SsParams};
use crate::num::Float;
use crate::scoring::{ns_index, FeatureScaler};

/// Residual value standing in for every data point of an experiment whose
/// replay failed under trial parameters. Large enough that failing regions
/// repel the search, finite so the search survives them.
const PENALTY: f64 = 1.0e3;

#[derive(Debug, Error)]
pub enum CalibError {
    #[error("calibration problem has no experiments")]
    EmptyProblem,
    #[error("experiment {experiment} has {len} records, need at least 3")]
    TooFewRecords { experiment: usize, len: usize },
    #[error("experiment {experiment}: response length {len} does not match its program ({expected})")]
    GridMismatch {
        experiment: usize,
        len: usize,
        expected: usize,
    },
    #[error("experiment {experiment}: first segment shorter than two record increments")]
    ShortFirstSegment { experiment: usize },
    #[error("invalid bounds or guess: {0}")]
    BadBounds(String),
    #[error("residuals are not finite at the initial guess")]
    NonFiniteResidual,
}

/// Which constitutive model the candidate is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    DruckerPrager,
    Sanisand,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::DruckerPrager => "drucker-prager",
            ModelKind::Sanisand => "sanisand",
        }
    }

    pub fn n_params(self) -> usize {
        match self {
            ModelKind::DruckerPrager => DpParams::<f64>::N_PARAMS,
            ModelKind::Sanisand => SsParams::<f64>::N_PARAMS,
        }
    }

    /// Leading parameters fit in the elastic stage (G0, nu for both models).
    pub fn n_elastic(self) -> usize {
        match self {
            ModelKind::DruckerPrager => DpParams::<f64>::N_ELASTIC,
            ModelKind::Sanisand => SsParams::<f64>::N_ELASTIC,
        }
    }

    pub fn param_specs<T: Float>(self) -> Vec<ParamSpec<T>> {
        match self {
            ModelKind::DruckerPrager => DpParams::specs().to_vec(),
            ModelKind::Sanisand => SsParams::specs().to_vec(),
        }
    }

    pub fn material<T: Float>(self, params: &[T]) -> Material<T> {
        match self {
            ModelKind::DruckerPrager => Material::DruckerPrager(DpParams::from_slice(params)),
            ModelKind::Sanisand => Material::Sanisand(SsParams::from_slice(params)),
        }
    }
}

/// One calibration task: a candidate model and the experiments (program plus
/// observed response) it must reproduce.
#[derive(Debug, Clone)]
pub struct CalibrationProblem<T> {
    pub model: ModelKind,
    pub experiments: Vec<(LoadingProgram<T>, ResponseSeries<T>)>,
    pub guess: Vec<T>,
    pub lower: Vec<T>,
    pub upper: Vec<T>,
    /// Parameters excluded from both stages (kept at the guess).
    pub frozen: Vec<bool>,
}

impl<T: Float> CalibrationProblem<T> {
    /// Problem with the model's published guess and bounds, nothing frozen.
    pub fn new(
        model: ModelKind,
        experiments: Vec<(LoadingProgram<T>, ResponseSeries<T>)>,
    ) -> Self {
        let specs = model.param_specs::<T>();
        CalibrationProblem {
            model,
            experiments,
            guess: specs.iter().map(|s| s.guess).collect(),
            lower: specs.iter().map(|s| s.lower).collect(),
            upper: specs.iter().map(|s| s.upper).collect(),
            frozen: vec![false; specs.len()],
        }
    }

    pub fn validate(&self) -> Result<(), CalibError> {
        if self.experiments.is_empty() {
            return Err(CalibError::EmptyProblem);
        }
        for (k, (program, series)) in self.experiments.iter().enumerate() {
            if series.len() < 3 {
                return Err(CalibError::TooFewRecords {
                    experiment: k,
                    len: series.len(),
                });
            }
            let expected = expected_records(program);
            if series.len() != expected {
                return Err(CalibError::GridMismatch {
                    experiment: k,
                    len: series.len(),
                    expected,
                });
            }
            let first = &program.segments[0];
            if first.target.abs() < T::lit(2.0) * program.record_increment {
                return Err(CalibError::ShortFirstSegment { experiment: k });
            }
        }
        let n = self.model.n_params();
        if self.guess.len() != n
            || self.lower.len() != n
            || self.upper.len() != n
            || self.frozen.len() != n
        {
            return Err(CalibError::BadBounds(format!(
                "expected {n} entries in guess/lower/upper/frozen"
            )));
        }
        check_box(&self.guess, &self.lower, &self.upper)?;
        Ok(())
    }
}

fn check_box<T: Float>(x0: &[T], lower: &[T], upper: &[T]) -> Result<(), CalibError> {
    for i in 0..x0.len() {
        if !(lower[i] < upper[i]) {
            return Err(CalibError::BadBounds(format!(
                "lower[{i}] = {} must be below upper[{i}] = {}",
                lower[i], upper[i]
            )));
        }
        if x0[i] < lower[i] || x0[i] > upper[i] {
            return Err(CalibError::BadBounds(format!(
                "guess[{i}] = {} outside [{}, {}]",
                x0[i], lower[i], upper[i]
            )));
        }
    }
    Ok(())
}

/// Records a program will produce (initial point plus one per increment).
fn expected_records<T: Float>(program: &LoadingProgram<T>) -> usize {
    let mut total = 1;
    let mut position = T::zero();
    for segment in &program.segments {
        let steps = ((segment.target - position) / program.record_increment)
            .abs()
            .round()
            .as_f64() as usize;
        total += steps;
        position = segment.target;
    }
    total
}

/// Levenberg-Marquardt knobs.
#[derive(Debug, Clone, Copy)]
pub struct LmOptions<T> {
    pub max_iters: usize,
    /// Stationarity target on the transformed-space gradient infinity norm.
    pub gtol: T,
    pub lambda0: T,
    /// Relative finite-difference step per transformed parameter.
    pub fd_rel: T,
}

impl<T: Float> Default for LmOptions<T> {
    fn default() -> Self {
        LmOptions {
            // Tighter than the 1e-6 stationarity contract on purpose: the
            // round-trip fit bars (Nash-Sutcliffe >= 0.999) need the last
            // factor of residual decrease that a 1e-6 stop would leave out.
            max_iters: 200,
            gtol: T::lit(1.0e-9),
            lambda0: T::lit(1.0e-3),
            fd_rel: T::lit(1.0e-6),
        }
    }
}

/// Solver result. `converged` means the stationarity target was met;
/// otherwise the iteration cap was reached (the best point is still
/// returned and its objective never exceeds the starting one).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LmOutcome<T> {
    pub x: Vec<T>,
    /// Sum of squared residuals at `x`.
    pub objective: T,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimize `sum residual(x)^2` over the box `[lower, upper]`.
pub fn lm_minimize<T: Float, F>(
    mut residual: F,
    x0: &[T],
    lower: &[T],
    upper: &[T],
    opts: &LmOptions<T>,
) -> Result<LmOutcome<T>, CalibError>
where
    F: FnMut(&[T]) -> Vec<T>,
{
    let n = x0.len();
    if lower.len() != n || upper.len() != n {
        return Err(CalibError::BadBounds("bound lengths differ from x0".into()));
    }
    check_box(x0, lower, upper)?;

    let half = T::lit(0.5);
    let to_x = |u: &[T]| -> Vec<T> {
        u.iter()
            .enumerate()
            .map(|(i, &ui)| lower[i] + (upper[i] - lower[i]) * (ui.sin() + T::one()) * half)
            .collect()
    };
    let mut u: Vec<T> = (0..n)
        .map(|i| {
            let t = T::lit(2.0) * (x0[i] - lower[i]) / (upper[i] - lower[i]) - T::one();
            t.max(-T::one()).min(T::one()).asin()
        })
        .collect();

    let mut r = residual(&to_x(&u));
    if r.is_empty() || r.iter().any(|v| !v.is_finite()) {
        return Err(CalibError::NonFiniteResidual);
    }
    let m = r.len();
    let ssq = |r: &[T]| r.iter().map(|&v| v * v).sum::<T>();
    let mut obj = ssq(&r);
    let mut lambda = opts.lambda0;
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..opts.max_iters {
        iterations += 1;
        // Forward-difference Jacobian, column per transformed parameter.
        let mut jac = vec![vec![T::zero(); n]; m];
        for j in 0..n {
            let du = opts.fd_rel * u[j].abs().max(T::one());
            let mut up = u.clone();
            up[j] += du;
            let rp = residual(&to_x(&up));
            if rp.len() != m {
                return Err(CalibError::NonFiniteResidual);
            }
            for i in 0..m {
                jac[i][j] = (rp[i] - r[i]) / du;
            }
        }
        let mut grad = vec![T::zero(); n];
        for i in 0..m {
            for j in 0..n {
                grad[j] += jac[i][j] * r[i];
            }
        }
        let gmax = grad.iter().fold(T::zero(), |a, &g| a.max(g.abs()));
        if gmax <= opts.gtol {
            converged = true;
            break;
        }
        let mut a = vec![vec![T::zero(); n]; n];
        for i in 0..m {
            for p in 0..n {
                for q in p..n {
                    a[p][q] += jac[i][p] * jac[i][q];
                }
            }
        }
        for p in 0..n {
            for q in 0..p {
                a[p][q] = a[q][p];
            }
        }
        let diag: Vec<T> = (0..n).map(|i| a[i][i].max(T::lit(1.0e-12))).collect();

        let mut accepted = false;
        for _ in 0..30 {
            let mut damped = a.clone();
            for i in 0..n {
                damped[i][i] += lambda * diag[i];
            }
            let rhs: Vec<T> = grad.iter().map(|&g| -g).collect();
            let Some(delta) = solve_spd(&damped, &rhs) else {
                lambda *= T::lit(10.0);
                continue;
            };
            let u_try: Vec<T> = u.iter().zip(&delta).map(|(&a, &d)| a + d).collect();
            let r_try = residual(&to_x(&u_try));
            let obj_try = if r_try.len() == m && r_try.iter().all(|v| v.is_finite()) {
                ssq(&r_try)
            } else {
                T::infinity()
            };
            if obj_try < obj {
                u = u_try;
                r = r_try;
                obj = obj_try;
                lambda = (lambda / T::lit(3.0)).max(T::lit(1.0e-12));
                accepted = true;
                break;
            }
            lambda *= T::lit(10.0);
            if lambda > T::lit(1.0e14) {
                break;
            }
        }
        if !accepted {
            // No decrease possible at any damping: numerically stationary.
            break;
        }
    }

    Ok(LmOutcome {
        x: to_x(&u),
        objective: obj,
        iterations,
        converged,
    })
}

/// Solve `A x = b` for symmetric positive definite `A` (Cholesky), falling
/// back to Gaussian elimination with partial pivoting if the factorization
/// breaks down. Systems here are at most 14 x 14.
fn solve_spd<T: Float>(a: &[Vec<T>], b: &[T]) -> Option<Vec<T>> {
    let n = b.len();
    let mut l = vec![vec![T::zero(); n]; n];
    let mut ok = true;
    'chol: for i in 0..n {
        for j in 0..=i {
            let mut s = a[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if s <= T::zero() {
                    ok = false;
                    break 'chol;
                }
                l[i][j] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    if ok {
        let mut y = vec![T::zero(); n];
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= l[i][k] * y[k];
            }
            y[i] = s / l[i][i];
        }
        let mut x = vec![T::zero(); n];
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= l[k][i] * x[k];
            }
            x[i] = s / l[i][i];
        }
        return Some(x);
    }
    gauss_solve(a.to_vec(), b.to_vec())
}

fn gauss_solve<T: Float>(mut a: Vec<Vec<T>>, mut b: Vec<T>) -> Option<Vec<T>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| {
            a[i][col]
                .abs()
                .partial_cmp(&a[j][col].abs())
                .unwrap_or(std::cmp::Ordering::Equal)
        })?;
        if a[pivot][col].abs() == T::zero() {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                let v = a[col][k];
                a[row][k] -= f * v;
            }
            let v = b[col];
            b[row] -= f * v;
        }
    }
    let mut x = vec![T::zero(); n];
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= a[i][k] * x[k];
        }
        x[i] = s / a[i][i];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Per-stage solver summary for the calibration report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LmSummary {
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
    /// False when the stage had no free parameters and was skipped.
    pub ran: bool,
}

impl LmSummary {
    fn skipped() -> Self {
        LmSummary {
            iterations: 0,
            converged: true,
            objective: f64::NAN,
            ran: false,
        }
    }

    fn from_outcome<T: Float>(o: &LmOutcome<T>) -> Self {
        LmSummary {
            iterations: o.iterations,
            converged: o.converged,
            objective: o.objective.as_f64(),
            ran: true,
        }
    }
}

/// Calibration output: fitted parameters, the scaler the residuals used
/// (reused downstream so adversary scores are comparable), the model
/// replay of every calibration experiment, and per-experiment fit indices.
/// A `None` prediction marks an experiment the fitted model cannot replay.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationReport<T> {
    pub model: ModelKind,
    pub params: Vec<T>,
    /// Scaled MSE over the full calibration curves at `params`.
    pub objective: T,
    pub scaler: FeatureScaler<T>,
    pub predictions: Vec<Option<ResponseSeries<T>>>,
    /// Pooled Nash-Sutcliffe index (j = 1, standardized features) per
    /// experiment; `None` when the replay failed.
    pub e_ns: Vec<Option<T>>,
    pub stage1: LmSummary,
    pub stage2: LmSummary,
}

impl<T: Float> CalibrationReport<T> {
    /// True when every calibration experiment replays under the fitted
    /// parameters.
    pub fn succeeded(&self) -> bool {
        self.predictions.iter().all(Option::is_some)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CalibrateOptions<T> {
    pub lm: LmOptions<T>,
    /// Extra random in-bounds starts beyond the table guess; best final
    /// objective wins.
    pub restarts: usize,
    pub seed: u64,
}

impl<T: Float> Default for CalibrateOptions<T> {
    fn default() -> Self {
        CalibrateOptions {
            lm: LmOptions::default(),
            restarts: 0,
            seed: 0,
        }
    }
}

pub fn calibrate<T: Float>(
    problem: &CalibrationProblem<T>,
) -> Result<CalibrationReport<T>, CalibError> {
    calibrate_with(problem, &CalibrateOptions::default())
}

pub fn calibrate_with<T: Float>(
    problem: &CalibrationProblem<T>,
    opts: &CalibrateOptions<T>,
) -> Result<CalibrationReport<T>, CalibError> {
    problem.validate()?;

    // One scaler over the pooled full calibration data; both stages and all
    // downstream scoring standardize with it.
    let mut pooled = Vec::new();
    for (_, series) in &problem.experiments {
        pooled.extend(series.features());
    }
    let scaler =
        FeatureScaler::fit(N_FEATURES, &pooled).map_err(|_| CalibError::EmptyProblem)?;

    let stages = StagePrograms::build(problem, &scaler);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<(Vec<T>, T, LmSummary, LmSummary)> = None;
    for start in 0..=opts.restarts {
        let x0 = if start == 0 {
            problem.guess.clone()
        } else {
            random_start(problem, &mut rng)
        };
        let (params, s1, s2) = run_stages(problem, &stages, x0, &opts.lm)?;
        let objective = stages.objective(problem, &params, Stage::Full);
        if best.as_ref().map_or(true, |b| objective < b.1) {
            best = Some((params, objective, s1, s2));
        }
    }
    let (params, objective, stage1, stage2) = best.expect("at least the table-guess start ran");

    let material = problem.model.material(&params);
    let mut predictions = Vec::with_capacity(problem.experiments.len());
    let mut e_ns = Vec::with_capacity(problem.experiments.len());
    for (k, (program, _)) in problem.experiments.iter().enumerate() {
        match run_experiment(&material, program) {
            Ok(series) => {
                let e = scaler
                    .transformed(&series.features())
                    .ok()
                    .and_then(|m| ns_index(&m, &stages.scaled_full[k], 1).ok());
                predictions.push(Some(series));
                e_ns.push(e);
            }
            Err(_) => {
                predictions.push(None);
                e_ns.push(None);
            }
        }
    }

    Ok(CalibrationReport {
        model: problem.model,
        params,
        objective,
        scaler: scaler.clone(),
        predictions,
        e_ns,
        stage1,
        stage2,
    })
}

fn random_start<T: Float>(problem: &CalibrationProblem<T>, rng: &mut ChaCha8Rng) -> Vec<T> {
    (0..problem.guess.len())
        .map(|i| {
            if problem.frozen[i] {
                problem.guess[i]
            } else {
                let t = T::lit(rng.random::<f64>());
                problem.lower[i] + (problem.upper[i] - problem.lower[i]) * t
            }
        })
        .collect()
}

#[derive(Clone, Copy, PartialEq)]
enum Stage {
    /// First three records of every experiment.
    Elastic,
    /// Full curves.
    Full,
}

/// Precompiled programs and standardized data targets for both stages.
struct StagePrograms<T> {
    truncated: Vec<LoadingProgram<T>>,
    scaled_first3: Vec<Vec<T>>,
    scaled_full: Vec<Vec<T>>,
    scaler: FeatureScaler<T>,
}

impl<T: Float> StagePrograms<T> {
    fn build(problem: &CalibrationProblem<T>, scaler: &FeatureScaler<T>) -> Self {
        let mut truncated = Vec::new();
        let mut scaled_first3 = Vec::new();
        let mut scaled_full = Vec::new();
        for (program, series) in &problem.experiments {
            let first = program.segments[0];
            let two_steps = T::lit(f64::from(first.direction))
                * T::lit(2.0)
                * program.record_increment;
            truncated.push(LoadingProgram {
                segments: vec![Segment {
                    target: two_steps,
                    direction: first.direction,
                }],
                ..program.clone()
            });
            let feats = series.features();
            scaled_first3.push(
                scaler
                    .transformed(&feats[..3 * N_FEATURES])
                    .expect("feature width is fixed"),
            );
            scaled_full.push(scaler.transformed(&feats).expect("feature width is fixed"));
        }
        StagePrograms {
            truncated,
            scaled_first3,
            scaled_full,
            scaler: scaler.clone(),
        }
    }

    fn targets(&self, stage: Stage) -> &[Vec<T>] {
        match stage {
            Stage::Elastic => &self.scaled_first3,
            Stage::Full => &self.scaled_full,
        }
    }

    /// Standardized residual vector at full parameters `x`, scaled by
    /// `1/sqrt(N)` so its square sum is the scaled MSE. Replay failures and
    /// grid mismatches contribute the penalty on every affected point.
    fn residual(&self, problem: &CalibrationProblem<T>, x: &[T], stage: Stage) -> Vec<T> {
        let targets = self.targets(stage);
        let total: usize = targets.iter().map(Vec::len).sum();
        let norm = T::one() / T::from_usize(total).expect("point count fits in T").sqrt();
        let material = problem.model.material(x);
        let mut out = Vec::with_capacity(total);
        for (k, (program, _)) in problem.experiments.iter().enumerate() {
            let prog = match stage {
                Stage::Elastic => &self.truncated[k],
                Stage::Full => program,
            };
            let target = &targets[k];
            let pred = run_experiment(&material, prog)
                .ok()
                .map(|s| s.features())
                .filter(|f| f.len() == target.len())
                .and_then(|mut f| self.scaler.transform(&mut f).ok().map(|_| f));
            match pred {
                Some(feats) => {
                    out.extend(feats.iter().zip(target).map(|(&m, &d)| (m - d) * norm))
                }
                None => out.extend(std::iter::repeat(T::lit(PENALTY) * norm).take(target.len())),
            }
        }
        out
    }

    fn objective(&self, problem: &CalibrationProblem<T>, x: &[T], stage: Stage) -> T {
        self.residual(problem, x, stage)
            .iter()
            .map(|&v| v * v)
            .sum()
    }
}

/// Stage 1 (elastic parameters on truncated curves), then stage 2 (the
/// remaining free parameters on full curves with stage-1 results frozen).
fn run_stages<T: Float>(
    problem: &CalibrationProblem<T>,
    stages: &StagePrograms<T>,
    start: Vec<T>,
    lm: &LmOptions<T>,
) -> Result<(Vec<T>, LmSummary, LmSummary), CalibError> {
    let n = problem.model.n_params();
    let n_elastic = problem.model.n_elastic();
    let mut params = start;

    let fit_stage = |params: &mut Vec<T>, free: Vec<usize>, stage: Stage| {
        if free.is_empty() {
            return Ok(LmSummary::skipped());
        }
        let template = params.clone();
        let x0: Vec<T> = free.iter().map(|&i| template[i]).collect();
        let lower: Vec<T> = free.iter().map(|&i| problem.lower[i]).collect();
        let upper: Vec<T> = free.iter().map(|&i| problem.upper[i]).collect();
        let residual = |xr: &[T]| {
            let mut full = template.clone();
            for (slot, &i) in free.iter().enumerate() {
                full[i] = xr[slot];
            }
            stages.residual(problem, &full, stage)
        };
        let outcome = lm_minimize(residual, &x0, &lower, &upper, lm)?;
        for (slot, &i) in free.iter().enumerate() {
            params[i] = outcome.x[slot];
        }
        Ok(LmSummary::from_outcome(&outcome))
    };

    let elastic_free: Vec<usize> = (0..n_elastic).filter(|&i| !problem.frozen[i]).collect();
    let s1 = fit_stage(&mut params, elastic_free, Stage::Elastic)?;
    let plastic_free: Vec<usize> = (n_elastic..n).filter(|&i| !problem.frozen[i]).collect();
    let s2 = fit_stage(&mut params, plastic_free, Stage::Full)?;
    Ok((params, s1, s2))
}
