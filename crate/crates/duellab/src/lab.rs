//! Virtual triaxial laboratory.
//!
//! Turns a decision-tree leaf into a [`LoadingProgram`] (initial sample,
//! stress-ratio condition, strain schedule) and drives a constitutive model
//! through it under mixed control: the axial strain is prescribed in fixed
//! recording increments while the lateral strains are solved so the held
//! stress components stay on target. Loading is along principal axes, so
//! every tensor in here is diagonal and shear components are identically
//! zero.
//!
//! Responses from a frozen "oracle" material double as ground-truth data;
//! both agents consume the same [`ResponseSeries`] records.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::materials::{Constitutive, DpParams, Material, MaterialError, SsParams};
use crate::num::Float;
use crate::tensor::Sym3;
use crate::tree::{DecisionTree, ExperimentSpec, LevelRole};

/// Relative (to `|p0|`) tolerance on held-stress residuals. Chosen well under
/// the 1e-3 contract but above the jitter floor of adaptively substepped
/// materials, where the response is only piecewise smooth in the increment.
const NEWTON_TOL_REL: f64 = 1.0e-6;
/// Finite-difference probe on lateral strain increments. Large enough that
/// the stress signal dominates integrator noise, small enough that curvature
/// over the probe is irrelevant.
const FD_STEP: f64 = 1.0e-7;
const MAX_NEWTON_ITERS: usize = 40;
/// Fallback residual bound, relative to `|p0|`, for records where the
/// constitutive response is discontinuous across the hold target (bounding
/// surface models re-anchor their hardening at load reversals, which moves
/// the stress by a finite amount however small the lateral trial change).
/// No iterate can beat the jump there; the best one is accepted as long as
/// it stays inside the published 1e-3 drive contract. Residuals are measured
/// against the run-initial stress, so one loose record does not drift the
/// following ones.
const STALL_TOL_REL: f64 = 9.0e-4;
/// Axial strain per recorded step.
pub const RECORD_INCREMENT: f64 = 1.0e-4;
/// Features per record in the flat view: (p, q, eps_v).
pub const N_FEATURES: usize = 3;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("level '{level}' has no program meaning for label '{label}'")]
    UnknownLabel { level: String, label: String },
    #[error("tree has no '{0}' level, cannot compile a loading program")]
    MissingRole(&'static str),
    #[error("invalid strain schedule: {0}")]
    InvalidSegments(String),
    #[error("stress constraints did not converge at record {record}")]
    Constraint { record: usize },
    #[error("material failed at record {record}: {source}")]
    Material {
        record: usize,
        source: MaterialError,
    },
    #[error("unknown oracle '{0}'")]
    UnknownOracle(String),
    #[error("malformed response csv: {0}")]
    Csv(String),
}

/// Drained triaxial test variants. The variant fixes the intermediate stress
/// ratio b = (s22 - s33)/(s11 - s33) and the sign of the driven axial strain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TestType {
    /// Compression: b = 0, axial strain decreasing.
    Dtc,
    /// Extension: b = 1, axial strain increasing.
    Dte,
    /// True triaxial at b = 0.5, axial strain decreasing.
    Ttc,
}

impl TestType {
    pub fn from_label(label: &str) -> Option<TestType> {
        match label {
            "DTC" => Some(TestType::Dtc),
            "DTE" => Some(TestType::Dte),
            "TTC" => Some(TestType::Ttc),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TestType::Dtc => "DTC",
            TestType::Dte => "DTE",
            TestType::Ttc => "TTC",
        }
    }

    /// Sign of the driven axial strain rate during loading.
    pub fn direction<T: Float>(self) -> T {
        match self {
            TestType::Dte => T::one(),
            TestType::Dtc | TestType::Ttc => -T::one(),
        }
    }

    pub fn stress_ratio<T: Float>(self) -> T {
        match self {
            TestType::Dtc => T::zero(),
            TestType::Dte => T::one(),
            TestType::Ttc => T::lit(0.5),
        }
    }
}

/// One leg of the strain schedule: drive the axial strain to `target`
/// (signed, absolute position) moving in `direction`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment<T> {
    pub target: T,
    /// +1 or -1; consecutive segments alternate.
    pub direction: i8,
}

/// Compiled experiment: initial sample, stress condition, strain schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadingProgram<T> {
    pub test: TestType,
    /// Initial mean stress, kPa (compression negative).
    pub p0: T,
    /// Initial void ratio.
    pub e0: T,
    /// Intermediate stress ratio held during the run.
    pub b: T,
    pub segments: Vec<Segment<T>>,
    pub record_increment: T,
}

/// Initial DEM-style samples: (pressure label, void-ratio label) to
/// (p0 kPa, e0 after isotropic compression).
fn sample_table(p0_label: &str, e0_label: &str) -> Option<(f64, f64)> {
    Some(match (p0_label, e0_label) {
        ("300kPa", "0.60") => (-300.0, 0.5955),
        ("300kPa", "0.55") => (-300.0, 0.5554),
        ("400kPa", "0.60") => (-400.0, 0.5936),
        ("400kPa", "0.55") => (-400.0, 0.5538),
        ("500kPa", "0.60") => (-500.0, 0.5917),
        ("500kPa", "0.55") => (-500.0, 0.5521),
        _ => return None,
    })
}

/// Compile a tree leaf into a runnable program. Level roles drive the
/// interpretation; levels without a role are ignored. Trees without a
/// void-ratio level fall back to the dense "0.55" sample column. A NaN
/// stage target ends the schedule.
pub fn compile_program<T: Float>(
    tree: &DecisionTree,
    spec: &ExperimentSpec,
) -> Result<LoadingProgram<T>, LabError> {
    let mut p0_label: Option<(usize, &str)> = None;
    let mut e0_label: Option<&str> = None;
    let mut test: Option<TestType> = None;
    let mut targets: Vec<f64> = Vec::new();
    let mut truncated = false;

    for (i, level) in tree.levels().iter().enumerate() {
        let label = tree.spec_label(spec, i);
        match level.role {
            Some(LevelRole::SamplePressure) => p0_label = Some((i, label)),
            Some(LevelRole::SampleVoidRatio) => e0_label = Some(label),
            Some(LevelRole::TestType) => {
                test = Some(TestType::from_label(label).ok_or_else(|| {
                    LabError::UnknownLabel {
                        level: level.name.clone(),
                        label: label.to_string(),
                    }
                })?);
            }
            Some(
                LevelRole::LoadTarget | LevelRole::UnloadTarget | LevelRole::ReloadTarget,
            ) => {
                let payload = tree.spec_payload(spec, i);
                if payload.is_nan() {
                    truncated = true;
                } else if truncated {
                    return Err(LabError::InvalidSegments(format!(
                        "stage '{label}' follows an absent stage"
                    )));
                } else {
                    targets.push(payload.value().ok_or_else(|| LabError::UnknownLabel {
                        level: level.name.clone(),
                        label: label.to_string(),
                    })?);
                }
            }
            None => {}
        }
    }

    let (p0_level, p0_label) = p0_label.ok_or(LabError::MissingRole("sample-pressure"))?;
    let e0_label = e0_label.unwrap_or("0.55");
    let test = test.ok_or(LabError::MissingRole("test-type"))?;
    let (p0, e0) = sample_table(p0_label, e0_label).ok_or_else(|| LabError::UnknownLabel {
        level: tree.levels()[p0_level].name.clone(),
        label: format!("({p0_label}, {e0_label})"),
    })?;

    // Targets are |eps11| magnitudes; the test type supplies the sign.
    let load_dir: f64 = test.direction();
    let mut segments = Vec::with_capacity(targets.len());
    let mut position = 0.0;
    let mut prev_dir = 0i8;
    for magnitude in targets {
        let target = load_dir * magnitude;
        let dir = match target.partial_cmp(&position) {
            Some(std::cmp::Ordering::Greater) => 1i8,
            Some(std::cmp::Ordering::Less) => -1i8,
            _ => {
                return Err(LabError::InvalidSegments(format!(
                    "zero-length segment at target {target}"
                )))
            }
        };
        if dir == prev_dir {
            return Err(LabError::InvalidSegments(
                "consecutive segments do not alternate direction".into(),
            ));
        }
        segments.push(Segment {
            target: T::lit(target),
            direction: dir,
        });
        position = target;
        prev_dir = dir;
    }

    Ok(LoadingProgram {
        test,
        p0: T::lit(p0),
        e0: T::lit(e0),
        b: test.stress_ratio(),
        segments,
        record_increment: T::lit(RECORD_INCREMENT),
    })
}

/// Recorded response of one experiment. One row per axial strain increment,
/// plus the initial state; all columns share the same length.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ResponseSeries<T> {
    pub axial_strain: Vec<T>,
    /// Mean stress, kPa (compression negative).
    pub p: Vec<T>,
    /// Deviatoric stress invariant, kPa (non-negative).
    pub q: Vec<T>,
    /// Volumetric strain.
    pub eps_v: Vec<T>,
}

impl<T: Float> ResponseSeries<T> {
    pub fn len(&self) -> usize {
        self.axial_strain.len()
    }

    pub fn is_empty(&self) -> bool {
        self.axial_strain.is_empty()
    }

    fn push(&mut self, eps11: T, sig: Sym3<T>, eps_v: T) {
        self.axial_strain.push(eps11);
        self.p.push(sig.mean());
        self.q.push(crate::materials::deviatoric_q(sig));
        self.eps_v.push(eps_v);
    }

    /// Flat row-major feature view, [`N_FEATURES`] entries per record:
    /// (p, q, eps_v). The axial strain is the abscissa, not a feature.
    pub fn features(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(N_FEATURES * self.len());
        for i in 0..self.len() {
            out.push(self.p[i]);
            out.push(self.q[i]);
            out.push(self.eps_v[i]);
        }
        out
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<(), LabError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["eps11", "p", "q", "eps_v"])
            .map_err(|e| LabError::Csv(e.to_string()))?;
        for i in 0..self.len() {
            w.serialize((self.axial_strain[i], self.p[i], self.q[i], self.eps_v[i]))
                .map_err(|e| LabError::Csv(e.to_string()))?;
        }
        w.flush().map_err(|e| LabError::Csv(e.to_string()))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String, LabError> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| LabError::Csv(e.to_string()))
    }

    pub fn from_csv_str(text: &str) -> Result<Self, LabError> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let mut out = ResponseSeries::default();
        for row in reader.deserialize::<(T, T, T, T)>() {
            let (eps11, p, q, eps_v) = row.map_err(|e| LabError::Csv(e.to_string()))?;
            out.axial_strain.push(eps11);
            out.p.push(p);
            out.q.push(q);
            out.eps_v.push(eps_v);
        }
        Ok(out)
    }
}

/// Which stress components the lateral Newton solve holds, relative to the
/// stress at the start of the run.
#[derive(Clone, Copy)]
enum Constraint<T> {
    /// DTC/DTE: s22 and s33 stay at their initial values.
    HoldLateral,
    /// TTC: s33 stays put and s22 - s22(0) = b * (s11 - s11(0)).
    Proportional { b: T },
}

struct StepContext<T> {
    constraint: Constraint<T>,
    /// Stress at the start of the run; every record is solved against it, so
    /// residuals cannot accumulate across records.
    anchor: Sym3<T>,
    tol: T,
    /// Residual accepted when the Newton iteration stalls on a response
    /// discontinuity; see [`STALL_TOL_REL`].
    accept: T,
}

impl<T: Float> StepContext<T> {
    fn residual(&self, sig: Sym3<T>) -> [T; 2] {
        match self.constraint {
            Constraint::HoldLateral => [sig.yy - self.anchor.yy, sig.zz - self.anchor.zz],
            Constraint::Proportional { b } => [
                (sig.yy - self.anchor.yy) - b * (sig.xx - self.anchor.xx),
                sig.zz - self.anchor.zz,
            ],
        }
    }
}

/// Outcome of one lateral solve: converged to the Newton tolerance, or the
/// best iterate found when the residual cannot be driven lower.
enum Solve<S, T> {
    Tight(S, [T; 2]),
    Loose { state: S, x: [T; 2], norm: T },
}

/// Solve the lateral strain increments for one axial increment `d11` by
/// Newton iteration with a finite-difference Jacobian. Returns the stepped
/// state and the solution (warm start for the next step).
fn solve_laterals<T: Float, C: Constitutive<T>>(
    material: &C,
    base: &C::State,
    d11: T,
    ctx: &StepContext<T>,
    x0: [T; 2],
) -> Result<Solve<C::State, T>, MaterialError> {
    let probe = |x: [T; 2]| -> Result<(C::State, [T; 2]), MaterialError> {
        let mut state = base.clone();
        material.step(&mut state, Sym3::diag(d11, x[0], x[1]))?;
        let r = ctx.residual(material.stress(&state));
        Ok((state, r))
    };

    let h = T::lit(FD_STEP);
    let mut x = x0;
    let (mut state, mut r) = probe(x)?;
    for _ in 0..MAX_NEWTON_ITERS {
        let norm = r[0].abs().max(r[1].abs());
        if norm < ctx.tol {
            return Ok(Solve::Tight(state, x));
        }
        let mut jac = [[T::zero(); 2]; 2];
        for col in 0..2 {
            let mut xp = x;
            xp[col] += h;
            let (_, rp) = probe(xp)?;
            jac[0][col] = (rp[0] - r[0]) / h;
            jac[1][col] = (rp[1] - r[1]) / h;
        }
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        if det == T::zero() || !det.is_finite() {
            break;
        }
        let dx0 = (r[0] * jac[1][1] - r[1] * jac[0][1]) / det;
        let dx1 = (r[1] * jac[0][0] - r[0] * jac[1][0]) / det;

        // The local slope jumps where plastic flow switches on, so a full
        // step can overshoot and cycle. Backtrack until the residual
        // actually shrinks; a trial that fails inside the material is
        // treated as an overshoot and damped the same way.
        let mut scale = T::one();
        let mut accepted = false;
        for _ in 0..8 {
            let cand = [x[0] - scale * dx0, x[1] - scale * dx1];
            if cand[0].is_finite() && cand[1].is_finite() {
                if let Ok((cs, cr)) = probe(cand) {
                    if cr[0].abs().max(cr[1].abs()) < norm {
                        x = cand;
                        state = cs;
                        r = cr;
                        accepted = true;
                        break;
                    }
                }
            }
            scale = scale * T::lit(0.5);
        }
        if !accepted {
            break;
        }
    }
    let norm = r[0].abs().max(r[1].abs());
    Ok(Solve::Loose { state, x, norm })
}

/// One record step. The full-increment solve is tried first; if it only
/// stalls (or fails inside the material), the increment is retried as two
/// half steps against the same run-anchored holds, since a yield-surface
/// crossing often resolves once it sits at a step boundary. A stalled
/// iterate is accepted as long as its residual stays inside the drive
/// contract; see [`STALL_TOL_REL`].
fn record_step<T: Float, C: Constitutive<T>>(
    material: &C,
    state: &C::State,
    d11: T,
    ctx: &StepContext<T>,
    warm: [T; 2],
    record: usize,
) -> Result<(C::State, [T; 2]), LabError> {
    fn admit<S, T: Float>(solve: Solve<S, T>, accept: T) -> Option<(S, [T; 2])> {
        match solve {
            Solve::Tight(state, x) => Some((state, x)),
            Solve::Loose { state, x, norm } if norm < accept => Some((state, x)),
            Solve::Loose { .. } => None,
        }
    }

    let mut seen_err = None;
    let full = match solve_laterals(material, state, d11, ctx, warm) {
        Ok(Solve::Tight(next, x)) => return Ok((next, x)),
        Ok(loose) => Some(loose),
        Err(e) => {
            seen_err = Some(e);
            None
        }
    };

    let half = d11 * T::lit(0.5);
    let half_warm = [warm[0] * T::lit(0.5), warm[1] * T::lit(0.5)];
    match solve_laterals(material, state, half, ctx, half_warm) {
        Ok(solve) => {
            if let Some((mid, x_mid)) = admit(solve, ctx.accept) {
                match solve_laterals(material, &mid, half, ctx, x_mid) {
                    Ok(solve) => {
                        if let Some((end, x_end)) = admit(solve, ctx.accept) {
                            return Ok((end, [x_mid[0] + x_end[0], x_mid[1] + x_end[1]]));
                        }
                    }
                    Err(e) => seen_err = Some(e),
                }
            }
        }
        Err(e) => seen_err = Some(e),
    }

    // Last resort: the full-step iterate, if it stayed inside the contract.
    if let Some(solve) = full {
        if let Some((next, x)) = admit(solve, ctx.accept) {
            return Ok((next, x));
        }
    }
    Err(match seen_err {
        Some(source) => LabError::Material { record, source },
        None => LabError::Constraint { record },
    })
}

/// Run a compiled program on a material. The axial strain is driven to each
/// segment target in steps of `record_increment` (positions computed by
/// multiplication so reversal points are hit exactly); one record is
/// appended per step, after the lateral solve.
pub fn run_experiment<T: Float, C: Constitutive<T>>(
    material: &C,
    program: &LoadingProgram<T>,
) -> Result<ResponseSeries<T>, LabError> {
    Ok(run_experiment_traced(material, program)?.0)
}

/// Like [`run_experiment`], additionally returning the full stress tensor at
/// every record so control quality (held lateral components, the TTC stress
/// ratio) can be audited from outside.
pub fn run_experiment_traced<T: Float, C: Constitutive<T>>(
    material: &C,
    program: &LoadingProgram<T>,
) -> Result<(ResponseSeries<T>, Vec<Sym3<T>>), LabError> {
    let mut state = material
        .initial_state(program.p0, program.e0)
        .map_err(|source| LabError::Material { record: 0, source })?;

    let mut series = ResponseSeries::default();
    let mut stresses = Vec::new();
    let eps_v0 = material.strain(&state).trace();
    series.push(T::zero(), material.stress(&state), eps_v0);
    stresses.push(material.stress(&state));

    // Every record is solved against the run-initial stress, so hold
    // residuals cannot accumulate: a record accepted at the stall bound is
    // pulled back toward the anchor by the next one.
    let ctx = StepContext {
        constraint: match program.test {
            TestType::Dtc | TestType::Dte => Constraint::HoldLateral,
            TestType::Ttc => Constraint::Proportional { b: program.b },
        },
        anchor: material.stress(&state),
        tol: T::lit(NEWTON_TOL_REL) * program.p0.abs(),
        accept: T::lit(STALL_TOL_REL) * program.p0.abs(),
    };

    let mut position = T::zero();
    let mut warm = [T::zero(); 2];
    for segment in &program.segments {
        let distance = segment.target - position;
        let steps = (distance / program.record_increment)
            .abs()
            .round()
            .as_f64() as usize;
        let mut prev = position;
        for k in 1..=steps {
            // Planned grid, not accumulation: the last point is the target.
            let planned = position
                + distance * (T::from_usize(k).unwrap() / T::from_usize(steps).unwrap());
            let d11 = planned - prev;
            let record = series.len();
            let (next, x) = record_step(material, &state, d11, &ctx, warm, record)?;
            state = next;
            warm = x;
            series.push(planned, material.stress(&state), material.strain(&state).trace());
            stresses.push(material.stress(&state));
            prev = planned;
        }
        position = segment.target;
    }
    Ok((series, stresses))
}

/// Ground-truth generator: any experiment selection in, response data out.
/// Implementations must be deterministic; the driver caches responses by
/// `(id, leaf label)`.
pub trait ResponseOracle<T: Float>: Send + Sync {
    /// Stable identifier, used as the cache key prefix.
    fn id(&self) -> &str;
    fn run(&self, tree: &DecisionTree, spec: &ExperimentSpec) -> Result<ResponseSeries<T>, LabError>;
}

/// Oracle backed by a constitutive model at frozen parameters.
#[derive(Debug, Clone)]
pub struct MaterialOracle<T> {
    id: String,
    material: Material<T>,
}

impl<T: Float> MaterialOracle<T> {
    pub fn new(id: impl Into<String>, material: Material<T>) -> Self {
        MaterialOracle {
            id: id.into(),
            material,
        }
    }

    pub fn material(&self) -> &Material<T> {
        &self.material
    }
}

impl<T: Float> ResponseOracle<T> for MaterialOracle<T> {
    fn id(&self) -> &str {
        &self.id
    }

    fn run(&self, tree: &DecisionTree, spec: &ExperimentSpec) -> Result<ResponseSeries<T>, LabError> {
        let program = compile_program(tree, spec)?;
        run_experiment(&self.material, &program)
    }
}

/// Built-in oracles: each model at its reference parameter set, used as a
/// noise-free stand-in for a physical laboratory.
pub fn oracle_by_name<T: Float>(name: &str) -> Result<MaterialOracle<T>, LabError> {
    let material = match name {
        "dp-self" => Material::DruckerPrager(DpParams::reference()),
        "ss-self" => Material::Sanisand(SsParams::reference()),
        _ => return Err(LabError::UnknownOracle(name.to_string())),
    };
    Ok(MaterialOracle::new(name, material))
}
