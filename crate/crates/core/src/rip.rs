//! Restricted isometry constants: exact enumeration over supports, cheap
//! lower/upper bounds, the spectral norm, and the disjoint-support
//! inner-product inequality.

use itertools::Itertools;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{binomial, check_len, serde_inf};

pub const DEFAULT_EXACT_BUDGET: u128 = 2_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RipMethod {
    Exact,
    MonteCarloLower,
    CoherenceUpper,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RipReport {
    pub sparsity: usize,
    #[serde(with = "serde_inf")]
    pub delta: f64,
    pub method: RipMethod,
    pub supports_examined: u128,
}

/// Extreme eigenvalues of `A_Sᵀ A_S` over a family of supports.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GramExtremes {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub supports: u128,
}

impl GramExtremes {
    /// `max(λ_max − 1, 1 − λ_min)`, floored at zero.
    pub fn deviation(&self) -> f64 {
        (self.lambda_max - 1.0).max(1.0 - self.lambda_min).max(0.0)
    }
}

/// Largest singular value by power iteration on `AᵀA`, stopped once the
/// Rayleigh quotient changes by less than `tol` relative.
pub fn operator_norm(a: &DMatrix<f64>, tol: f64) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("tolerance {tol} must be positive")));
    }
    let m = a.ncols();
    if m == 0 || a.iter().all(|v| *v == 0.0) {
        return Ok(0.0);
    }
    // fixed, non-symmetric start so no singular direction is missed generically
    let mut v = DVector::from_fn(m, |i, _| 1.0 + 0.5 * ((i + 1) as f64 * 0.7548776662).fract());
    v.normalize_mut();
    let gram = a.transpose() * a;
    let mut lambda = 0.0_f64;
    for _ in 0..200_000 {
        let w = &gram * &v;
        let next = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 {
            break;
        }
        v = w / norm;
        if (next - lambda).abs() <= tol * next.abs() {
            lambda = next;
            break;
        }
        lambda = next;
    }
    // Rayleigh quotient at the final vector
    let av = a * &v;
    Ok(av.norm().max(lambda.max(0.0).sqrt()))
}

fn gram_extremes_on(a: &DMatrix<f64>, support: &[usize]) -> (f64, f64) {
    let sub = a.select_columns(support);
    let gram = sub.transpose() * &sub;
    if support.len() == 1 {
        return (gram[(0, 0)], gram[(0, 0)]);
    }
    let eig = SymmetricEigen::new(gram);
    let lo = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

fn check_sparsity(a: &DMatrix<f64>, s: usize) -> Result<()> {
    if s == 0 || s > a.ncols() {
        return Err(Error::Domain(format!("sparsity {s} must lie in 1..={}", a.ncols())));
    }
    Ok(())
}

/// Extreme Gram eigenvalues over every support of size `s`, enumerated
/// lexicographically and reduced in parallel.
pub fn gram_extremes(a: &DMatrix<f64>, s: usize, budget: u128) -> Result<GramExtremes> {
    check_sparsity(a, s)?;
    let required = binomial(a.ncols(), s);
    if required > budget {
        return Err(Error::BudgetExceeded { required, budget });
    }
    let (lambda_min, lambda_max) = (0..a.ncols())
        .combinations(s)
        .par_bridge()
        .map(|support| gram_extremes_on(a, &support))
        .reduce(|| (f64::INFINITY, f64::NEG_INFINITY), |x, y| (x.0.min(y.0), x.1.max(y.1)));
    Ok(GramExtremes { lambda_min, lambda_max, supports: required })
}

/// `δ_s` by enumerating all `C(m, s)` supports.
pub fn rip_constant_exact(a: &DMatrix<f64>, s: usize, budget: u128) -> Result<RipReport> {
    let ext = gram_extremes(a, s, budget)?;
    Ok(RipReport { sparsity: s, delta: ext.deviation(), method: RipMethod::Exact, supports_examined: ext.supports })
}

/// Scale `c` minimizing `δ_s(cA)`: it maps the Gram spectrum range
/// `[λ_min, λ_max]` symmetrically around 1.
pub fn rip_balancing_scale(a: &DMatrix<f64>, s: usize, budget: u128) -> Result<f64> {
    let ext = gram_extremes(a, s, budget)?;
    let sum = ext.lambda_min + ext.lambda_max;
    if !(sum > 0.0) {
        return Err(Error::Domain("matrix has a zero column submatrix".into()));
    }
    Ok((2.0 / sum).sqrt())
}

/// Maximum absolute inner product between distinct normalized columns.
pub fn mutual_coherence(a: &DMatrix<f64>) -> f64 {
    let norms: Vec<f64> = a.column_iter().map(|c| c.norm()).collect();
    let mut mu = 0.0_f64;
    for i in 0..a.ncols() {
        for j in (i + 1)..a.ncols() {
            if norms[i] == 0.0 || norms[j] == 0.0 {
                continue;
            }
            mu = mu.max(a.column(i).dot(&a.column(j)).abs() / (norms[i] * norms[j]));
        }
    }
    mu
}

/// Gershgorin bound `max_j |‖a_j‖² − 1| + (s − 1) max_{i≠j} |⟨a_i, a_j⟩|`,
/// which equals `(s − 1)μ` when the columns have unit norm.
pub fn coherence_upper_bound(a: &DMatrix<f64>, s: usize) -> Result<f64> {
    check_sparsity(a, s)?;
    let gram = a.transpose() * a;
    let m = a.ncols();
    let mut diag_dev = 0.0_f64;
    let mut off = 0.0_f64;
    for i in 0..m {
        diag_dev = diag_dev.max((gram[(i, i)] - 1.0).abs());
        for j in (i + 1)..m {
            off = off.max(gram[(i, j)].abs());
        }
    }
    Ok(diag_dev + (s as f64 - 1.0) * off)
}

/// Monte-Carlo lower bound over `samples` uniformly drawn supports and the
/// coherence upper bound. Supports are drawn sequentially from one seeded
/// stream, so more samples extend the same sequence.
pub fn rip_constant_bounds(a: &DMatrix<f64>, s: usize, samples: usize, seed: u64) -> Result<(RipReport, RipReport)> {
    check_sparsity(a, s)?;
    if samples == 0 {
        return Err(Error::Domain("at least one sample is required".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lower = 0.0_f64;
    for _ in 0..samples {
        let mut support = rand::seq::index::sample(&mut rng, a.ncols(), s).into_vec();
        support.sort_unstable();
        let (lo, hi) = gram_extremes_on(a, &support);
        lower = lower.max((hi - 1.0).max(1.0 - lo));
    }
    let lower = RipReport {
        sparsity: s,
        delta: lower.max(0.0),
        method: RipMethod::MonteCarloLower,
        supports_examined: samples as u128,
    };
    let upper = RipReport {
        sparsity: s,
        delta: coherence_upper_bound(a, s)?,
        method: RipMethod::CoherenceUpper,
        supports_examined: 0,
    };
    Ok((lower, upper))
}

/// `δ ‖x‖₂ ‖x′‖₂ − |⟨Ax, Ax′⟩|` for `x`, `x′` with disjoint supports.
pub fn disjoint_inner_product_margin(a: &DMatrix<f64>, x: &DVector<f64>, xp: &DVector<f64>, delta: f64) -> Result<f64> {
    check_len("x", x, a.ncols())?;
    check_len("x'", xp, a.ncols())?;
    if let Some(i) = (0..x.len()).find(|&i| x[i] != 0.0 && xp[i] != 0.0) {
        return Err(Error::Domain(format!("supports overlap at index {i}")));
    }
    let inner = (a * x).dot(&(a * xp));
    Ok(delta * x.norm() * xp.norm() - inner.abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    #[test]
    fn operator_norm_examples() {
        assert!((operator_norm(&DMatrix::identity(3, 3), 1e-12).unwrap() - 1.0).abs() < 1e-12);
        let r = operator_norm(&dmatrix![1.0, 1.0], 1e-12).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(operator_norm(&DMatrix::zeros(2, 3), 1e-9).unwrap(), 0.0);
        assert!(operator_norm(&DMatrix::identity(2, 2), 0.0).is_err());
    }

    #[test]
    fn exact_delta_examples() {
        for m in 1..=5 {
            for s in 1..=m {
                let r = rip_constant_exact(&DMatrix::identity(m, m), s, DEFAULT_EXACT_BUDGET).unwrap();
                assert_eq!(r.delta, 0.0);
                assert_eq!(r.supports_examined, binomial(m, s));
            }
        }
        let r = rip_constant_exact(&(DMatrix::identity(2, 2) * 2.0), 1, DEFAULT_EXACT_BUDGET).unwrap();
        assert_eq!(r.delta, 3.0);
        let r = rip_constant_exact(&dmatrix![1.0, 1.0], 2, DEFAULT_EXACT_BUDGET).unwrap();
        assert!((r.delta - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exact_refuses_over_budget() {
        let a = DMatrix::identity(30, 30);
        assert!(matches!(rip_constant_exact(&a, 15, 1000), Err(Error::BudgetExceeded { .. })));
        assert!(matches!(rip_constant_exact(&a, 0, 1000), Err(Error::Domain(_))));
    }

    #[test]
    fn bounds_on_identity_are_zero() {
        let (lo, hi) = rip_constant_bounds(&DMatrix::identity(4, 4), 2, 50, 1).unwrap();
        assert_eq!(lo.delta, 0.0);
        assert_eq!(hi.delta, 0.0);
        assert_eq!(lo.method, RipMethod::MonteCarloLower);
        assert_eq!(hi.method, RipMethod::CoherenceUpper);
    }

    #[test]
    fn margin_examples() {
        let a = DMatrix::identity(4, 4);
        let e1 = dvector![1.0, 0.0, 0.0, 0.0];
        let e2 = dvector![0.0, 1.0, 0.0, 0.0];
        assert_eq!(disjoint_inner_product_margin(&a, &e1, &e2, 0.0).unwrap(), 0.0);
        let z = DVector::zeros(4);
        assert_eq!(disjoint_inner_product_margin(&a, &z, &e2, 0.3).unwrap(), 0.0);
        assert!(matches!(disjoint_inner_product_margin(&a, &e1, &e1, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn balancing_scale_centres_spectrum() {
        let a = dmatrix![2.0, 0.0; 0.0, 1.0];
        let c = rip_balancing_scale(&a, 1, DEFAULT_EXACT_BUDGET).unwrap();
        let r = rip_constant_exact(&(a * c), 1, DEFAULT_EXACT_BUDGET).unwrap();
        assert!((r.delta - 0.6).abs() < 1e-12);
    }

    #[test]
    fn report_json_uses_inf_sentinel() {
        let r =
            RipReport { sparsity: 2, delta: f64::INFINITY, method: RipMethod::CoherenceUpper, supports_examined: 0 };
        let s = serde_json::to_string(&r).unwrap();
        assert!(s.contains(r#""delta":"inf""#));
        assert!(s.contains("coherence-upper"));
    }
}
