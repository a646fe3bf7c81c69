//! Executable observability and recovery certificates.
//!
//! The observability horizon guarantees that two distinct `s`-sparse initial
//! states produce distinct measurements. The recovery certificate carries the
//! constants of the error bound
//! `‖x* − x⁰‖₂ ≤ C0 s^{-1/2} ‖x⁰ − x⁰_s‖₁ + C1 ε`
//! together with the conditions under which it holds.

use std::f64::consts::SQRT_2;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg::{binomial, check_len, spectral_norm};
use crate::model::{best_s_term, weight_condition_number, DynamicalSystem};
use crate::ode::{flow, IntegrationConfig};
use crate::rip::{coherence_upper_bound, rip_constant_exact, RipMethod, RipReport};

/// Upper limit on the observation time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Horizon {
    Finite(f64),
    /// Any `T > 0` is admissible (the flow is the identity).
    Unbounded,
    /// The isometry constant is too large for any horizon to exist.
    NotCertifiable,
}

impl Horizon {
    /// Whether `t` lies strictly below the horizon.
    pub fn admits(&self, t: f64) -> bool {
        match *self {
            Horizon::Finite(h) => t < h,
            Horizon::Unbounded => true,
            Horizon::NotCertifiable => false,
        }
    }

    /// `Some(+inf)` for an unbounded horizon, `None` when not certifiable.
    pub fn value(&self) -> Option<f64> {
        match *self {
            Horizon::Finite(h) => Some(h),
            Horizon::Unbounded => Some(f64::INFINITY),
            Horizon::NotCertifiable => None,
        }
    }
}

impl Serialize for Horizon {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match *self {
            Horizon::Finite(h) => s.serialize_f64(h),
            Horizon::Unbounded => s.serialize_str("inf"),
            Horizon::NotCertifiable => s.serialize_str("not-certifiable"),
        }
    }
}

impl<'de> Deserialize<'de> for Horizon {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(h) => Ok(Horizon::Finite(h)),
            Repr::Str(s) if s == "inf" => Ok(Horizon::Unbounded),
            Repr::Str(s) if s == "not-certifiable" => Ok(Horizon::NotCertifiable),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("unknown horizon {s:?}"))),
        }
    }
}

/// Machine-readable reasons a certificate is infeasible.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Violation {
    DeltaCondition,
    HorizonExceeded,
    DenominatorNonpositive,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Violation::DeltaCondition => "delta-condition",
            Violation::HorizonExceeded => "horizon-exceeded",
            Violation::DenominatorNonpositive => "denominator-nonpositive",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    /// Observability horizon: below it, sparse initial states are determined by `b`.
    pub observability_horizon: Horizon,
    /// Horizon of the recovery error bound.
    pub recovery_horizon: Horizon,
    pub delta_2s: f64,
    pub tau: f64,
    pub op_norm: f64,
    pub lipschitz: f64,
    pub time: f64,
    /// `M = e^{LT} − 1`.
    pub growth: f64,
    pub alpha: Option<f64>,
    pub rho: Option<f64>,
    /// `D = 1 − ρτ − ½ α (1 + τ) M ‖A‖`.
    pub denominator: Option<f64>,
    pub c0: Option<f64>,
    pub c1: Option<f64>,
    pub feasible: bool,
    pub reasons: Vec<Violation>,
}

fn check_nonneg(name: &str, v: f64) -> Result<()> {
    if !(v >= 0.0) {
        return Err(Error::Domain(format!("{name} = {v} must be >= 0")));
    }
    Ok(())
}

fn check_op_norm(op_norm: f64) -> Result<()> {
    if !(op_norm > 0.0) || !op_norm.is_finite() {
        return Err(Error::Domain(format!("operator norm {op_norm} must be positive")));
    }
    Ok(())
}

/// `(1/L) ln(1 + √(1 − δ_2s) / ‖A‖)`.
pub fn observability_horizon(lipschitz: f64, delta_2s: f64, op_norm: f64) -> Result<Horizon> {
    check_op_norm(op_norm)?;
    check_nonneg("delta_2s", delta_2s)?;
    check_nonneg("lipschitz", lipschitz)?;
    if delta_2s >= 1.0 {
        return Ok(Horizon::NotCertifiable);
    }
    if lipschitz == 0.0 {
        return Ok(Horizon::Unbounded);
    }
    Ok(Horizon::Finite(((1.0 - delta_2s).sqrt() / op_norm).ln_1p() / lipschitz))
}

/// Largest `δ_2s` admitted by the recovery bound, `(1 + τ√2)^{-1}`.
pub fn delta_threshold(tau: f64) -> f64 {
    1.0 / (1.0 + tau * SQRT_2)
}

/// `(1/L) ln(1 + (1 − δ(1 + τ√2)) / ((1 + τ) ‖A‖ √(1 + δ)))`.
pub fn recovery_horizon(lipschitz: f64, delta_2s: f64, tau: f64, op_norm: f64) -> Result<Horizon> {
    check_op_norm(op_norm)?;
    check_nonneg("delta_2s", delta_2s)?;
    check_nonneg("lipschitz", lipschitz)?;
    if !(delta_2s < delta_threshold(tau)) {
        return Ok(Horizon::NotCertifiable);
    }
    if lipschitz == 0.0 {
        return Ok(Horizon::Unbounded);
    }
    let slack = 1.0 - delta_2s * (1.0 + tau * SQRT_2);
    let arg = slack / ((1.0 + tau) * op_norm * (1.0 + delta_2s).sqrt());
    Ok(Horizon::Finite(arg.ln_1p() / lipschitz))
}

/// Evaluates every constant of the recovery bound at `(δ_2s, τ, L, T, ‖A‖)`.
pub fn recovery_constants(delta_2s: f64, tau: f64, lipschitz: f64, time: f64, op_norm: f64) -> Result<Certificate> {
    if !(tau >= 1.0) || !tau.is_finite() {
        return Err(Error::Domain(format!("weight condition number {tau} must be >= 1")));
    }
    if !(time > 0.0) || !time.is_finite() {
        return Err(Error::Domain(format!("time {time} must be positive")));
    }
    check_op_norm(op_norm)?;
    check_nonneg("delta_2s", delta_2s)?;
    check_nonneg("lipschitz", lipschitz)?;

    let growth = (lipschitz * time).exp_m1();
    let mut cert = Certificate {
        observability_horizon: observability_horizon(lipschitz, delta_2s, op_norm)?,
        recovery_horizon: recovery_horizon(lipschitz, delta_2s, tau, op_norm)?,
        delta_2s,
        tau,
        op_norm,
        lipschitz,
        time,
        growth,
        alpha: None,
        rho: None,
        denominator: None,
        c0: None,
        c1: None,
        feasible: false,
        reasons: Vec::new(),
    };
    if !(delta_2s < delta_threshold(tau)) {
        cert.reasons.push(Violation::DeltaCondition);
    }
    if delta_2s >= 1.0 {
        return Ok(cert);
    }

    let alpha = 2.0 * (1.0 + delta_2s).sqrt() / (1.0 - delta_2s);
    let rho = SQRT_2 * delta_2s / (1.0 - delta_2s);
    let denominator = 1.0 - rho * tau - 0.5 * alpha * (1.0 + tau) * growth * op_norm;
    cert.alpha = Some(alpha);
    cert.rho = Some(rho);
    cert.denominator = Some(denominator);
    cert.c0 = Some(2.0 * tau * (rho + 1.0) / denominator);
    cert.c1 = Some(alpha * (1.0 + tau) / denominator);

    if matches!(cert.recovery_horizon, Horizon::Finite(h) if time >= h) {
        cert.reasons.push(Violation::HorizonExceeded);
    }
    if !(denominator > 0.0) {
        cert.reasons.push(Violation::DenominatorNonpositive);
    }
    cert.feasible = cert.reasons.is_empty();
    Ok(cert)
}

/// `C0 s^{-1/2} ‖x⁰ − x⁰_s‖₁ + C1 ε` for a feasible certificate.
pub fn recovery_error_bound(cert: &Certificate, x0: &DVector<f64>, s: usize, eps: f64) -> Result<f64> {
    if !cert.feasible {
        return Err(Error::Uncertified(cert.reasons.iter().map(ToString::to_string).collect()));
    }
    if s == 0 {
        return Err(Error::Domain("sparsity must be at least 1".into()));
    }
    check_nonneg("eps", eps)?;
    let (c0, c1) = match (cert.c0, cert.c1) {
        (Some(c0), Some(c1)) => (c0, c1),
        _ => return Err(Error::Uncertified(vec!["constants missing".into()])),
    };
    let tail = (x0 - best_s_term(x0, s)?).lp_norm(1);
    Ok(c0 * tail / (s as f64).sqrt() + c1 * eps)
}

/// Separation of two trajectories as seen through `A` at time `T`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Distinguishability {
    /// `‖A x₂(T) − A x₁(T)‖₂` from integration.
    pub measured: f64,
    /// `(√(1 − δ_2s) − M ‖A‖) ‖x₂⁰ − x₁⁰‖₂`; absent when `δ_2s ≥ 1`.
    pub guaranteed: Option<f64>,
}

/// Compares the measured terminal separation with the lower bound implied
/// by the isometry constant and the Gronwall estimate.
pub fn distinguishability_gap(
    a: &DMatrix<f64>,
    system: &DynamicalSystem,
    x1_0: &DVector<f64>,
    x2_0: &DVector<f64>,
    time: f64,
    delta_2s: f64,
    cfg: IntegrationConfig,
) -> Result<Distinguishability> {
    check_len("x1_0", x1_0, system.dim())?;
    check_len("x2_0", x2_0, system.dim())?;
    if a.ncols() != system.dim() {
        return Err(Error::Shape(format!("matrix has {} columns, system dimension is {}", a.ncols(), system.dim())));
    }
    if x1_0 == x2_0 {
        return Err(Error::Domain("initial states must differ".into()));
    }
    check_nonneg("delta_2s", delta_2s)?;
    let x1 = flow(system, x1_0, time, cfg)?;
    let x2 = flow(system, x2_0, time, cfg)?;
    let measured = (a * (x2 - x1)).norm();
    let guaranteed = (delta_2s < 1.0).then(|| {
        let growth = (system.lipschitz() * time).exp_m1();
        ((1.0 - delta_2s).sqrt() - growth * spectral_norm(a)) * (x2_0 - x1_0).norm()
    });
    Ok(Distinguishability { measured, guaranteed })
}

/// Isometry constant of order `2s` used by the certificates: exact when the
/// enumeration fits the budget, otherwise the coherence upper bound.
pub fn delta_for_certificate(a: &DMatrix<f64>, s: usize, budget: u128) -> Result<RipReport> {
    let order = (2 * s).min(a.ncols());
    if binomial(a.ncols(), order) <= budget {
        rip_constant_exact(a, order, budget)
    } else {
        Ok(RipReport {
            sparsity: order,
            delta: coherence_upper_bound(a, order)?,
            method: RipMethod::CoherenceUpper,
            supports_examined: 0,
        })
    }
}

/// Full certificate for a concrete instance.
pub fn certify_instance(
    a: &DMatrix<f64>,
    system: &DynamicalSystem,
    s: usize,
    weights: &DVector<f64>,
    time: f64,
    budget: u128,
) -> Result<(Certificate, RipReport)> {
    if a.ncols() != system.dim() {
        return Err(Error::Shape(format!("matrix has {} columns, system dimension is {}", a.ncols(), system.dim())));
    }
    check_len("weights", weights, a.ncols())?;
    let rip = delta_for_certificate(a, s, budget)?;
    let tau = weight_condition_number(weights)?;
    let cert = recovery_constants(rip.delta, tau, system.lipschitz(), time, spectral_norm(a))?;
    Ok((cert, rip))
}
