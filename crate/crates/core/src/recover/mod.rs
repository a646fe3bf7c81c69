//! Initial-state recovery: weighted ℓ1 minimization over the flow map and a
//! brute-force ℓ0 oracle for small instances.

mod bpdn;
mod oracle;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use bpdn::solve_weighted_bpdn;
pub use oracle::{l0_oracle, DEFAULT_ORACLE_BUDGET};

use crate::error::{Error, Result};
use crate::model::{weighted_l1_norm, RecoveryOutcome, SparseProblem};
use crate::ode::{flow, flow_with_jacobian, IntegrationConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Cap on linearization rounds.
    pub outer_max_iter: usize,
    /// Stop once the accepted step norm drops below this.
    pub outer_tol: f64,
    pub inner_max_iter: usize,
    pub inner_tol: f64,
    /// Initial ADMM penalty.
    pub penalty: f64,
    /// Slack allowed between the achieved residual and the noise radius.
    pub residual_match_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            outer_max_iter: 30,
            outer_tol: 1e-8,
            inner_max_iter: 5000,
            inner_tol: 1e-9,
            penalty: 1.0,
            residual_match_tol: 1e-6,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let tols = [
            ("outer_tol", self.outer_tol),
            ("inner_tol", self.inner_tol),
            ("penalty", self.penalty),
            ("residual_match_tol", self.residual_match_tol),
        ];
        if let Some((name, v)) = tols.iter().find(|(_, v)| !(*v > 0.0)) {
            return Err(Error::Domain(format!("{name} = {v} must be positive")));
        }
        if self.outer_max_iter == 0 || self.inner_max_iter == 0 {
            return Err(Error::Domain("iteration caps must be at least 1".into()));
        }
        Ok(())
    }
}

pub(crate) fn terminal_residual(problem: &SparseProblem, x0: &DVector<f64>, cfg: IntegrationConfig) -> Result<f64> {
    let mm = problem.measurement();
    let xt = flow(problem.system(), x0, mm.time(), cfg)?;
    Ok((problem.observation() - mm.matrix() * xt).norm())
}

/// Sequential linearization of the flow map around the current iterate,
/// each round solving a weighted BPDN and accepting a damped step that does
/// not increase the true residual beyond the noise radius.
pub fn recover_initial_state(
    problem: &SparseProblem,
    icfg: IntegrationConfig,
    scfg: &SolverConfig,
) -> Result<RecoveryOutcome> {
    scfg.validate()?;
    icfg.validate()?;
    let mm = problem.measurement();
    let a: &DMatrix<f64> = mm.matrix();
    let b = problem.observation();
    let w = mm.weights();
    let eps = mm.noise_radius();
    let system = problem.system();
    let m = system.dim();
    let accept_level = eps + scfg.residual_match_tol;

    let mut x = DVector::<f64>::zeros(m);
    let mut residual = terminal_residual(problem, &x, icfg)?;
    let mut iterations = 0;
    let mut stalled = true;

    for _ in 0..scfg.outer_max_iter {
        let (xt, jac) = flow_with_jacobian(system, &x, mm.time(), icfg)?;
        let phi = a * jac;
        let offset = a * xt - &phi * &x;
        let candidate = solve_weighted_bpdn(&phi, &offset, b, w, eps, scfg)?;
        iterations += 1;

        if system.is_affine_in_state() {
            // the linearization is the flow map itself
            x = candidate;
            residual = terminal_residual(problem, &x, icfg)?;
            stalled = false;
            break;
        }

        let step = candidate - &x;
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial = &x + &step * scale;
            let r = terminal_residual(problem, &trial, icfg)?;
            if r <= residual.max(accept_level) {
                accepted = Some((trial, r));
                break;
            }
            scale *= 0.5;
        }
        let Some((next, r)) = accepted else {
            stalled = true;
            break;
        };
        let moved = (&next - &x).norm();
        x = next;
        residual = r;
        if moved < scfg.outer_tol {
            stalled = false;
            break;
        }
    }

    let converged = !stalled && residual <= accept_level;
    Ok(RecoveryOutcome { weighted_l1: weighted_l1_norm(&x, w)?, estimate: x, residual, iterations, converged })
}
