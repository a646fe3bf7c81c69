//! Weighted basis pursuit denoising
//! `min Σ wᵢ|xᵢ|  s.t.  ‖y − Φx‖₂ ≤ ε` with `y = b − offset`.
//!
//! ADMM on the splitting `x ∈ C`, `z` weighted-ℓ1, `x = z`, where `C` is the
//! residual ball. The projection onto `C` is exact: in the SVD basis of `Φ`
//! it reduces to a scalar secular equation for the multiplier. A final
//! support-restricted polish recovers the exact minimizer whenever the
//! iterates have identified the right support.

use nalgebra::{DMatrix, DVector};

use super::SolverConfig;
use crate::error::{Error, Result};
use crate::linalg::check_len;
use crate::model::weighted_l1_norm;

/// Soft threshold; values exactly at the threshold map to zero.
pub(crate) fn soft_threshold(v: f64, kappa: f64) -> f64 {
    if v > kappa {
        v - kappa
    } else if v < -kappa {
        v + kappa
    } else {
        0.0
    }
}

/// Euclidean projection onto `{x : ‖Φx − y‖₂ ≤ radius}`.
struct BallProjector {
    v: DMatrix<f64>,
    sigma: DVector<f64>,
    y_hat: DVector<f64>,
    /// `radius² − r⊥²`, the part of the ball left for the range of `Φ`.
    slack_sq: f64,
    affine: bool,
}

impl BallProjector {
    fn residual_sq_in_range(&self, g: &DVector<f64>, mu: f64) -> f64 {
        g.iter()
            .zip(self.sigma.iter())
            .map(|(g, s)| {
                let q = g / (1.0 + mu * s * s);
                q * q
            })
            .sum()
    }

    fn project(&self, p: &DVector<f64>) -> DVector<f64> {
        let pv = self.v.tr_mul(p);
        let target_v = if self.affine {
            self.y_hat.component_div(&self.sigma)
        } else {
            let g = self.sigma.component_mul(&pv) - &self.y_hat;
            if self.residual_sq_in_range(&g, 0.0) <= self.slack_sq {
                return p.clone();
            }
            let mu = self.multiplier(&g);
            DVector::from_fn(pv.len(), |i, _| {
                let s = self.sigma[i];
                (pv[i] + mu * s * self.y_hat[i]) / (1.0 + mu * s * s)
            })
        };
        p + &self.v * (target_v - pv)
    }

    /// Root of `Σ gᵢ²/(1 + μσᵢ²)² = slack²` by safeguarded Newton on
    /// `1/‖·‖ − 1/slack`, which is close to linear in `μ`.
    fn multiplier(&self, g: &DVector<f64>) -> f64 {
        let target = self.slack_sq.sqrt();
        let psi = |mu: f64| -> (f64, f64) {
            let mut f = 0.0;
            let mut df = 0.0;
            for (g, s) in g.iter().zip(self.sigma.iter()) {
                let d = 1.0 + mu * s * s;
                f += g * g / (d * d);
                df += -2.0 * g * g * s * s / (d * d * d);
            }
            let norm = f.sqrt();
            (1.0 / norm - 1.0 / target, -0.5 * df / (f * norm))
        };
        let mut lo = 0.0;
        let mut hi = 1.0;
        while psi(hi).0 < 0.0 && hi < 1e300 {
            lo = hi;
            hi *= 4.0;
        }
        let mut mu = lo;
        for _ in 0..200 {
            let (val, der) = psi(mu);
            if val.abs() <= 1e-15 / target {
                break;
            }
            if val < 0.0 {
                lo = mu;
            } else {
                hi = mu;
            }
            let newton = mu - val / der;
            mu = if der > 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
            if hi - lo <= 1e-16 * hi {
                break;
            }
        }
        mu
    }
}

fn weighted_obj(x: &DVector<f64>, w: &DVector<f64>) -> f64 {
    x.iter().zip(w.iter()).map(|(x, w)| w * x.abs()).sum()
}

/// Minimizer of `Σ wᵢ|xᵢ|` subject to `‖(b − offset) − Φx‖₂ ≤ ε`.
pub fn solve_weighted_bpdn(
    phi: &DMatrix<f64>,
    offset: &DVector<f64>,
    b: &DVector<f64>,
    w: &DVector<f64>,
    eps: f64,
    cfg: &SolverConfig,
) -> Result<DVector<f64>> {
    cfg.validate()?;
    let (n, m) = phi.shape();
    check_len("offset", offset, n)?;
    check_len("observation", b, n)?;
    check_len("weights", w, m)?;
    weighted_l1_norm(&DVector::zeros(m), w)?;
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(Error::Domain(format!("noise radius {eps} must be >= 0")));
    }
    let y = b - offset;

    let svd = phi.clone().svd(true, true);
    let u_full = svd.u.expect("requested U");
    let vt_full = svd.v_t.expect("requested V^T");
    let smax = svd.singular_values.max();
    let cutoff = smax * 1e-12 * n.max(m) as f64;
    let keep: Vec<usize> = (0..svd.singular_values.len()).filter(|&i| svd.singular_values[i] > cutoff).collect();
    let u = u_full.select_columns(&keep);
    let v = vt_full.select_rows(&keep).transpose();
    let sigma = DVector::from_iterator(keep.len(), keep.iter().map(|&i| svd.singular_values[i]));
    let y_hat = u.tr_mul(&y);
    let r_perp = (&y - &u * &y_hat).norm();

    if r_perp > eps + cfg.residual_match_tol {
        return Err(Error::Infeasible { min_residual: r_perp, eps });
    }
    let radius = eps.max(r_perp);
    if y.norm() <= radius {
        return Ok(DVector::zeros(m));
    }
    let slack_sq = radius * radius - r_perp * r_perp;
    let affine = slack_sq.sqrt() <= 1e-14 * (1.0 + y.norm()) || keep.is_empty();
    let proj = BallProjector { v, sigma, y_hat, slack_sq, affine };

    // ADMM with residual balancing of the penalty
    let mut rho = cfg.penalty;
    let mut z = DVector::<f64>::zeros(m);
    let mut u_dual = DVector::<f64>::zeros(m);
    let scale_m = (m as f64).sqrt();
    for it in 0..cfg.inner_max_iter {
        let x = proj.project(&(&z - &u_dual));
        let z_old = z.clone();
        let shifted = &x + &u_dual;
        z = DVector::from_fn(m, |i, _| soft_threshold(shifted[i], w[i] / rho));
        u_dual += &x - &z;
        let r_pri = (&x - &z).norm();
        let r_dual = rho * (&z - &z_old).norm();
        let tol_pri = cfg.inner_tol * (scale_m + x.norm().max(z.norm()));
        let tol_dual = cfg.inner_tol * (scale_m + rho * u_dual.norm());
        if r_pri <= tol_pri && r_dual <= tol_dual {
            break;
        }
        if it % 10 == 9 {
            if r_pri > 10.0 * r_dual {
                rho *= 2.0;
                u_dual /= 2.0;
            } else if r_dual > 10.0 * r_pri {
                rho /= 2.0;
                u_dual *= 2.0;
            }
        }
    }

    let feasible = proj.project(&z);
    let baseline = weighted_obj(&feasible, w);
    let check = |cand: &DVector<f64>| -> bool {
        let res = (phi * cand - &y).norm();
        res <= radius + cfg.residual_match_tol && weighted_obj(cand, w) <= baseline * (1.0 + 1e-12) + 1e-15
    };
    if let Some(polished) = polish(phi, &y, w, &z, radius, affine) {
        if check(&polished) {
            return Ok(polished);
        }
    }
    if let Some(polished) = polish(phi, &y, w, &feasible, radius, affine) {
        if check(&polished) {
            return Ok(polished);
        }
    }
    Ok(feasible)
}

/// Re-solves on the support of `guess` with its sign pattern fixed.
fn polish(
    phi: &DMatrix<f64>,
    y: &DVector<f64>,
    w: &DVector<f64>,
    guess: &DVector<f64>,
    radius: f64,
    affine: bool,
) -> Option<DVector<f64>> {
    let peak = guess.amax();
    if peak == 0.0 {
        return None;
    }
    let support: Vec<usize> = (0..guess.len()).filter(|&i| guess[i].abs() > 1e-7 * peak).collect();
    if support.len() > phi.nrows() {
        return None;
    }
    let sub = phi.select_columns(&support);
    let gram = sub.tr_mul(&sub);
    let chol = gram.cholesky()?;
    let a = chol.solve(&sub.tr_mul(y));
    let values = if affine {
        a
    } else {
        let signed_w = DVector::from_iterator(support.len(), support.iter().map(|&i| w[i] * guess[i].signum()));
        let c = chol.solve(&signed_w);
        let base = (y - &sub * &a).norm_squared();
        let pc = (&sub * &c).norm_squared();
        let room = radius * radius - base;
        if room < 0.0 || pc == 0.0 {
            return None;
        }
        let t = (room / pc).sqrt();
        a - c * t
    };
    if values.iter().zip(&support).any(|(v, &i)| v.signum() != guess[i].signum()) {
        return None;
    }
    let mut out = DVector::zeros(guess.len());
    for (v, &i) in values.iter().zip(&support) {
        out[i] = *v;
    }
    Some(out)
}
