//! Seeded experiment driver: generate an instance, certify it, recover the
//! initial state and compare the error against the certified bound.
//!
//! Every trial draws its randomness from streams derived from
//! `(master seed, trial index)`, so results do not depend on how trials are
//! scheduled across workers.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::certify::{
    delta_for_certificate, observability_horizon, recovery_constants, recovery_error_bound, recovery_horizon,
    Certificate, Horizon, Violation,
};
use crate::error::{Error, Result};
use crate::linalg::spectral_norm;
use crate::model::{weight_condition_number, DynamicalSystem, MeasurementModel, SparseProblem};
use crate::ode::{flow, IntegrationConfig};
use crate::recover::{recover_initial_state, SolverConfig};
use crate::rip::{rip_balancing_scale, RipMethod, DEFAULT_EXACT_BUDGET};

/// Fraction of the smaller certified horizon used when `time` is `"auto"`.
pub const AUTO_TIME_FRACTION: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SystemFamily {
    Zero,
    Linear,
    Affine,
    TanhSaturated,
}

/// Gaussian system matrix `scale · G / √m` drawn from its own seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomSystem {
    pub family: SystemFamily,
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemSpec {
    Explicit(DynamicalSystem),
    Random(RandomSystem),
}

impl SystemSpec {
    pub fn build(&self, dim: usize) -> Result<DynamicalSystem> {
        match self {
            SystemSpec::Explicit(sys) => {
                if sys.dim() != dim {
                    return Err(Error::Shape(format!(
                        "system dimension {} does not match matrix columns {dim}",
                        sys.dim()
                    )));
                }
                Ok(sys.clone())
            }
            SystemSpec::Random(spec) => {
                if !(spec.scale >= 0.0) {
                    return Err(Error::Domain(format!("system scale {} must be >= 0", spec.scale)));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
                let factor = spec.scale / (dim as f64).sqrt();
                let gauss = |rng: &mut ChaCha8Rng| factor * rng.sample::<f64, _>(StandardNormal);
                match spec.family {
                    SystemFamily::Zero => DynamicalSystem::zero(dim),
                    SystemFamily::Linear => {
                        let m = row_major(dim, dim, || gauss(&mut rng));
                        DynamicalSystem::linear(m)
                    }
                    SystemFamily::TanhSaturated => {
                        let m = row_major(dim, dim, || gauss(&mut rng));
                        DynamicalSystem::tanh_saturated(m)
                    }
                    SystemFamily::Affine => {
                        let m = row_major(dim, dim, || gauss(&mut rng));
                        let c = DVector::from_fn(dim, |_, _| gauss(&mut rng));
                        DynamicalSystem::affine(m, c)
                    }
                }
            }
        }
    }
}

fn row_major(n: usize, m: usize, mut draw: impl FnMut() -> f64) -> DMatrix<f64> {
    let data: Vec<f64> = (0..n * m).map(|_| draw()).collect();
    DMatrix::from_row_slice(n, m, &data)
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Ensemble {
    #[default]
    Gaussian,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixSpec {
    pub n: usize,
    pub m: usize,
    #[serde(default)]
    pub ensemble: Ensemble,
    #[serde(default = "one")]
    pub scale: f64,
    /// Rescale each draw so its Gram spectrum over `2s`-supports is centred on 1.
    #[serde(default)]
    pub balance: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Magnitudes {
    /// `±1`.
    #[default]
    Unit,
    /// `±U[0.5, 1.5]`.
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SignalSpec {
    #[serde(default)]
    pub magnitudes: Magnitudes,
}

/// Observation time: fixed, or `"auto"` for a fraction of the certified horizons.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TimeSpec {
    Auto,
    Fixed(f64),
}

impl Serialize for TimeSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match *self {
            TimeSpec::Auto => s.serialize_str("auto"),
            TimeSpec::Fixed(t) => s.serialize_f64(t),
        }
    }
}

impl<'de> Deserialize<'de> for TimeSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(t) => Ok(TimeSpec::Fixed(t)),
            Repr::Str(s) if s == "auto" => Ok(TimeSpec::Auto),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("time must be a number or \"auto\", got {s:?}"))),
        }
    }
}

fn default_time() -> TimeSpec {
    TimeSpec::Auto
}

fn default_budget() -> u128 {
    DEFAULT_EXACT_BUDGET
}

fn default_bound_tol() -> f64 {
    1e-6
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub trials: usize,
    pub system: SystemSpec,
    pub matrix: MatrixSpec,
    pub sparsity: usize,
    #[serde(default)]
    pub signal: SignalSpec,
    #[serde(default)]
    pub noise: f64,
    #[serde(default = "default_time")]
    pub time: TimeSpec,
    /// Objective weights; unit weights when absent.
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub integration: IntegrationConfig,
    /// Largest number of supports enumerated for an exact isometry constant.
    #[serde(default = "default_budget")]
    pub rip_budget: u128,
    /// Slack in `error ≤ bound + tol`.
    #[serde(default = "default_bound_tol")]
    pub bound_tolerance: f64,
    /// Record wall-clock time per trial. Off by default so reports are reproducible byte for byte.
    #[serde(default)]
    pub timing: bool,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, msg: String| Err(Error::Parse(format!("field `{name}`: {msg}")));
        if self.trials == 0 {
            return field("trials", "must be at least 1".into());
        }
        if self.matrix.n == 0 || self.matrix.m == 0 {
            return field("matrix", "n and m must be at least 1".into());
        }
        if !(self.matrix.scale > 0.0) {
            return field("matrix.scale", format!("{} must be positive", self.matrix.scale));
        }
        if self.sparsity == 0 || self.sparsity > self.matrix.m {
            return field("sparsity", format!("{} must lie in 1..={}", self.sparsity, self.matrix.m));
        }
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return field("noise", format!("{} must be >= 0", self.noise));
        }
        if let TimeSpec::Fixed(t) = self.time {
            if !(t > 0.0) || !t.is_finite() {
                return field("time", format!("{t} must be positive"));
            }
        }
        if let Some(w) = &self.weights {
            if w.len() != self.matrix.m {
                return field("weights", format!("has {} entries, expected {}", w.len(), self.matrix.m));
            }
            if w.iter().any(|v| !(*v > 0.0)) {
                return field("weights", "entries must be strictly positive".into());
            }
        }
        if !(self.bound_tolerance >= 0.0) {
            return field("bound_tolerance", "must be >= 0".into());
        }
        self.solver.validate().or_else(|e| field("solver", e.to_string()))?;
        self.integration.validate().or_else(|e| field("integration", e.to_string()))?;
        self.system.build(self.matrix.m).map(|_| ()).or_else(|e| field("system", e.to_string()))
    }

    pub fn weight_vector(&self) -> DVector<f64> {
        match &self.weights {
            Some(w) => DVector::from_vec(w.clone()),
            None => DVector::from_element(self.matrix.m, 1.0),
        }
    }
}

/// Scheduling options that do not change results.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunOptions {
    pub workers: usize,
    /// Run the solver on trials whose certificate is infeasible.
    pub force: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { workers: 1, force: false }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of stream `stream` for trial `index`.
pub fn derive_seed(master: u64, index: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(master ^ splitmix64(index)) ^ stream)
}

const STREAM_MATRIX: u64 = 1;
const STREAM_SIGNAL: u64 = 2;
const STREAM_NOISE: u64 = 3;

/// `n × m` matrix with i.i.d. `N(0, (scale/√n)²)` entries, filled row by row
/// from a ChaCha8 stream seeded with `seed`.
pub fn gen_gaussian_matrix(n: usize, m: usize, seed: u64, scale: f64) -> Result<DMatrix<f64>> {
    if n == 0 || m == 0 {
        return Err(Error::Domain("matrix dimensions must be at least 1".into()));
    }
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::Domain(format!("scale {scale} must be positive")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sd = scale / (n as f64).sqrt();
    Ok(row_major(n, m, || sd * rng.sample::<f64, _>(StandardNormal)))
}

/// Uniformly random direction scaled to norm exactly `eps`.
pub fn noise_on_sphere(n: usize, eps: f64, rng: &mut ChaCha8Rng) -> DVector<f64> {
    if eps == 0.0 {
        return DVector::zeros(n);
    }
    loop {
        let g = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = g.norm();
        if norm > 0.0 {
            return g * (eps / norm);
        }
    }
}

/// Everything generated for one trial before recovery.
#[derive(Clone, Debug)]
pub struct TrialInstance {
    pub index: usize,
    pub matrix: DMatrix<f64>,
    pub x0: DVector<f64>,
    pub support: Vec<usize>,
    pub noise: DVector<f64>,
    pub time: f64,
    pub observation: DVector<f64>,
    pub certificate: Certificate,
    pub delta_method: RipMethod,
}

impl TrialInstance {
    pub fn problem(&self, system: &DynamicalSystem, cfg: &ExperimentConfig) -> Result<SparseProblem> {
        let mm = MeasurementModel::new(self.matrix.clone(), self.time, cfg.noise, cfg.weight_vector())?;
        SparseProblem::new(system.clone(), mm, self.observation.clone(), cfg.sparsity)
    }
}

fn auto_time(observability: Horizon, recovery: Horizon) -> f64 {
    let finite: Vec<f64> = [observability, recovery]
        .iter()
        .filter_map(|h| match h {
            Horizon::Finite(v) => Some(*v),
            _ => None,
        })
        .collect();
    match finite.iter().copied().reduce(f64::min) {
        Some(h) => AUTO_TIME_FRACTION * h,
        None => 1.0,
    }
}

/// Generates and certifies trial `index`.
pub fn build_trial_instance(cfg: &ExperimentConfig, system: &DynamicalSystem, index: usize) -> Result<TrialInstance> {
    let (n, m, s) = (cfg.matrix.n, cfg.matrix.m, cfg.sparsity);
    let idx = index as u64;
    let mut matrix = gen_gaussian_matrix(n, m, derive_seed(cfg.seed, idx, STREAM_MATRIX), cfg.matrix.scale)?;
    if cfg.matrix.balance {
        if let Ok(c) = rip_balancing_scale(&matrix, (2 * s).min(m), cfg.rip_budget) {
            matrix *= c;
        }
    }

    let weights = cfg.weight_vector();
    let tau = weight_condition_number(&weights)?;
    let rip = delta_for_certificate(&matrix, s, cfg.rip_budget)?;
    let op_norm = spectral_norm(&matrix);
    let lipschitz = system.lipschitz();
    let time = match cfg.time {
        TimeSpec::Fixed(t) => t,
        TimeSpec::Auto => auto_time(
            observability_horizon(lipschitz, rip.delta, op_norm)?,
            recovery_horizon(lipschitz, rip.delta, tau, op_norm)?,
        ),
    };
    let certificate = recovery_constants(rip.delta, tau, lipschitz, time, op_norm)?;

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, idx, STREAM_SIGNAL));
    let mut support = rand::seq::index::sample(&mut rng, m, s).into_vec();
    support.sort_unstable();
    let mut x0 = DVector::zeros(m);
    for &i in &support {
        let magnitude = match cfg.signal.magnitudes {
            Magnitudes::Unit => 1.0,
            Magnitudes::Uniform => rng.random_range(0.5..1.5),
        };
        x0[i] = if rng.random_bool(0.5) { magnitude } else { -magnitude };
    }
    let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, idx, STREAM_NOISE));
    let noise = noise_on_sphere(n, cfg.noise, &mut noise_rng);
    let observation = &matrix * flow(system, &x0, time, cfg.integration)? + &noise;

    Ok(TrialInstance { index, matrix, x0, support, noise, time, observation, certificate, delta_method: rip.method })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub feasible: bool,
    pub reasons: Vec<Violation>,
    pub s: usize,
    pub n: usize,
    pub m: usize,
    #[serde(rename = "T")]
    pub time: f64,
    pub eps: f64,
    pub support: Vec<usize>,
    pub values: Vec<f64>,
    pub delta_2s: f64,
    pub delta_method: RipMethod,
    pub c0: Option<f64>,
    pub c1: Option<f64>,
    pub observability_horizon: Horizon,
    pub recovery_horizon: Horizon,
    pub error_l2: Option<f64>,
    pub bound: Option<f64>,
    pub bound_satisfied: Option<bool>,
    pub residual: Option<f64>,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    pub wall_ms: f64,
    /// Solver failure message, if any.
    pub note: Option<String>,
}

/// Runs the full pipeline for trial `index`.
pub fn run_trial(cfg: &ExperimentConfig, system: &DynamicalSystem, index: usize, force: bool) -> Result<TrialRecord> {
    let started = Instant::now();
    let inst = build_trial_instance(cfg, system, index)?;
    let cert = &inst.certificate;
    let mut record = TrialRecord {
        trial: index,
        feasible: cert.feasible,
        reasons: cert.reasons.clone(),
        s: cfg.sparsity,
        n: cfg.matrix.n,
        m: cfg.matrix.m,
        time: inst.time,
        eps: cfg.noise,
        support: inst.support.clone(),
        values: inst.support.iter().map(|&i| inst.x0[i]).collect(),
        delta_2s: cert.delta_2s,
        delta_method: inst.delta_method,
        c0: cert.c0,
        c1: cert.c1,
        observability_horizon: cert.observability_horizon,
        recovery_horizon: cert.recovery_horizon,
        error_l2: None,
        bound: None,
        bound_satisfied: None,
        residual: None,
        iterations: None,
        converged: None,
        wall_ms: 0.0,
        note: None,
    };
    if cert.feasible || force {
        let problem = inst.problem(system, cfg)?;
        match recover_initial_state(&problem, cfg.integration, &cfg.solver) {
            Ok(out) => {
                let error = (&out.estimate - &inst.x0).norm();
                record.error_l2 = Some(error);
                record.residual = Some(out.residual);
                record.iterations = Some(out.iterations);
                record.converged = Some(out.converged);
                if cert.feasible {
                    let bound = recovery_error_bound(cert, &inst.x0, cfg.sparsity, cfg.noise)?;
                    record.bound = Some(bound);
                    record.bound_satisfied = Some(error <= bound + cfg.bound_tolerance);
                }
            }
            Err(e) => {
                record.note = Some(e.to_string());
                if cert.feasible {
                    record.bound_satisfied = Some(false);
                }
            }
        }
    }
    if cfg.timing {
        record.wall_ms = started.elapsed().as_secs_f64() * 1e3;
    }
    Ok(record)
}

/// Runs all trials on a pool of `opts.workers` threads; records come back in trial order.
pub fn run_experiment(cfg: &ExperimentConfig, opts: RunOptions) -> Result<Vec<TrialRecord>> {
    cfg.validate()?;
    let system = cfg.system.build(cfg.matrix.m)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.max(1))
        .build()
        .map_err(|e| Error::Domain(format!("cannot build worker pool: {e}")))?;
    pool.install(|| (0..cfg.trials).into_par_iter().map(|i| run_trial(cfg, &system, i, opts.force)).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

pub const CSV_COLUMNS: [&str; 13] = [
    "trial",
    "feasible",
    "s",
    "n",
    "m",
    "T",
    "eps",
    "error_l2",
    "bound",
    "bound_satisfied",
    "residual",
    "iterations",
    "wall_ms",
];

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(ToString::to_string).unwrap_or_default()
}

pub fn write_csv<W: Write>(records: &[TrialRecord], mut out: W) -> Result<()> {
    writeln!(out, "{}", CSV_COLUMNS.join(","))?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.trial,
            r.feasible,
            r.s,
            r.n,
            r.m,
            r.time,
            r.eps,
            opt(&r.error_l2),
            opt(&r.bound),
            opt(&r.bound_satisfied),
            opt(&r.residual),
            opt(&r.iterations),
            r.wall_ms
        )?;
    }
    Ok(())
}

/// Aggregate line printed after a report is written.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReportSummary {
    pub trials: usize,
    pub feasible: usize,
    pub mean_error: Option<f64>,
    /// `max error / max(bound, tol)` over feasible trials.
    pub max_error_bound_ratio: Option<f64>,
    /// Every feasible trial satisfied its bound.
    pub all_bounds_hold: bool,
}

impl ReportSummary {
    pub fn from_records(records: &[TrialRecord], tolerance: f64) -> Self {
        let errors: Vec<f64> = records.iter().filter_map(|r| r.error_l2).collect();
        let mean_error = (!errors.is_empty()).then(|| errors.iter().sum::<f64>() / errors.len() as f64);
        let max_error_bound_ratio = records
            .iter()
            .filter(|r| r.feasible)
            .filter_map(|r| Some(r.error_l2? / r.bound?.max(tolerance)))
            .reduce(f64::max);
        Self {
            trials: records.len(),
            feasible: records.iter().filter(|r| r.feasible).count(),
            mean_error,
            max_error_bound_ratio,
            all_bounds_hold: records.iter().filter(|r| r.feasible).all(|r| r.bound_satisfied == Some(true)),
        }
    }

    pub fn footer(&self) -> String {
        format!(
            "trials={} feasible={} mean_error={} max_error_bound_ratio={} bounds_hold={}",
            self.trials,
            self.feasible,
            opt(&self.mean_error),
            opt(&self.max_error_bound_ratio),
            self.all_bounds_hold
        )
    }
}

/// Writes the records to `path`; the summary is returned for the caller to print.
pub fn emit_report(
    records: &[TrialRecord],
    format: ReportFormat,
    path: &Path,
    tolerance: f64,
) -> Result<ReportSummary> {
    if records.is_empty() {
        return Err(Error::Domain("no records to report".into()));
    }
    let file = std::fs::File::create(path)?;
    let mut out = std::io::BufWriter::new(file);
    match format {
        ReportFormat::Csv => write_csv(records, &mut out)?,
        ReportFormat::Json => {
            serde_json::to_writer_pretty(&mut out, records)?;
            writeln!(out)?;
        }
    }
    out.flush()?;
    Ok(ReportSummary::from_records(records, tolerance))
}
