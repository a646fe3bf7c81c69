use itertools::Itertools;
use nalgebra::DVector;
use rayon::prelude::*;

use super::{terminal_residual, SolverConfig};
use crate::error::{Error, Result};
use crate::linalg::binomial;
use crate::model::{weighted_l1_norm, RecoveryOutcome, SparseProblem};
use crate::ode::{flow_with_jacobian, IntegrationConfig};

pub const DEFAULT_ORACLE_BUDGET: u128 = 100_000;

const GN_MAX_ITER: usize = 50;

fn embed(values: &DVector<f64>, support: &[usize], m: usize) -> DVector<f64> {
    let mut x = DVector::zeros(m);
    for (v, &i) in values.iter().zip(support) {
        x[i] = *v;
    }
    x
}

/// Damped Gauss–Newton for `min_z ‖b − A·flow_T(embed(z, S))‖₂`.
fn restricted_least_squares(
    problem: &SparseProblem,
    support: &[usize],
    icfg: IntegrationConfig,
    scfg: &SolverConfig,
) -> Result<(DVector<f64>, f64)> {
    let m = problem.system().dim();
    let mm = problem.measurement();
    let mut z = DVector::<f64>::zeros(support.len());
    let mut x = embed(&z, support, m);
    let mut residual = terminal_residual(problem, &x, icfg)?;
    if support.is_empty() {
        return Ok((x, residual));
    }
    let rounds = if problem.system().is_affine_in_state() { 1 } else { GN_MAX_ITER };
    for _ in 0..rounds {
        let (xt, jac) = flow_with_jacobian(problem.system(), &x, mm.time(), icfg)?;
        let r = problem.observation() - mm.matrix() * xt;
        let j = mm.matrix() * jac.select_columns(support);
        let Ok(dz) = j.svd(true, true).solve(&r, 1e-14) else {
            break;
        };
        let mut scale = 1.0;
        let mut improved = false;
        for _ in 0..40 {
            let trial_z = &z + &dz * scale;
            let trial_x = embed(&trial_z, support, m);
            let trial_r = terminal_residual(problem, &trial_x, icfg)?;
            if trial_r <= residual {
                z = trial_z;
                x = trial_x;
                residual = trial_r;
                improved = true;
                break;
            }
            scale *= 0.5;
        }
        if !improved || (&dz * scale).norm() <= scfg.outer_tol * (1.0 + z.norm()) {
            break;
        }
    }
    Ok((x, residual))
}

/// Sparsest initial state consistent with the observation, found by
/// enumerating supports of size `0..=s` in lexicographic order.
///
/// Among feasible points of the smallest size, the smaller residual wins and
/// then the lexicographically first support. If nothing is feasible the
/// overall best candidate is returned with `converged = false`.
pub fn l0_oracle(
    problem: &SparseProblem,
    icfg: IntegrationConfig,
    scfg: &SolverConfig,
    budget: u128,
) -> Result<RecoveryOutcome> {
    scfg.validate()?;
    icfg.validate()?;
    let m = problem.system().dim();
    let s = problem.sparsity();
    let required: u128 = (0..=s).map(|k| binomial(m, k)).sum();
    if required > budget {
        return Err(Error::BudgetExceeded { required, budget });
    }
    let feasible_level = problem.measurement().noise_radius() + scfg.residual_match_tol;
    let weights = problem.measurement().weights();

    let mut best: Option<(DVector<f64>, f64)> = None;
    let mut examined = 0;
    for k in 0..=s {
        let supports: Vec<Vec<usize>> = (0..m).combinations(k).collect();
        examined += supports.len();
        let fits = supports
            .par_iter()
            .map(|support| restricted_least_squares(problem, support, icfg, scfg))
            .collect::<Result<Vec<_>>>()?;
        let mut feasible: Option<(DVector<f64>, f64)> = None;
        for (x, r) in fits {
            if r <= feasible_level && feasible.as_ref().is_none_or(|(_, fr)| r < *fr) {
                feasible = Some((x.clone(), r));
            }
            if best.as_ref().is_none_or(|(_, br)| r < *br) {
                best = Some((x, r));
            }
        }
        if let Some((x, r)) = feasible {
            return Ok(RecoveryOutcome {
                weighted_l1: weighted_l1_norm(&x, weights)?,
                estimate: x,
                residual: r,
                iterations: examined,
                converged: true,
            });
        }
    }
    let (x, r) = best.expect("the empty support is always examined");
    Ok(RecoveryOutcome {
        weighted_l1: weighted_l1_norm(&x, weights)?,
        estimate: x,
        residual: r,
        iterations: examined,
        converged: false,
    })
}
