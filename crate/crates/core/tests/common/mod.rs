//! Independent numerical oracles shared by the integration tests. None of
//! these call into nalgebra's decompositions.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sparobs::model::DynamicalSystem;

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn jacobi_eigenvalues(s: &DMatrix<f64>) -> Vec<f64> {
    let n = s.nrows();
    let mut a: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| s[(i, j)]).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        let scale: f64 = (0..n).map(|i| a[i][i] * a[i][i]).sum::<f64>().max(1e-300);
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for row in a.iter_mut() {
                    let (akp, akq) = (row[p], row[q]);
                    row[p] = c * akp - sn * akq;
                    row[q] = sn * akp + c * akq;
                }
                let (top, bottom) = a.split_at_mut(q);
                for (ap, aq) in top[p].iter_mut().zip(bottom[0].iter_mut()) {
                    let (apk, aqk) = (*ap, *aq);
                    *ap = c * apk - sn * aqk;
                    *aq = sn * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Singular values by one-sided (Hestenes) Jacobi orthogonalization, descending.
pub fn jacobi_singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    let (n, m) = a.shape();
    // work on the orientation with fewer columns
    let mut cols: Vec<Vec<f64>> = if m <= n {
        (0..m).map(|j| (0..n).map(|i| a[(i, j)]).collect()).collect()
    } else {
        (0..n).map(|i| (0..m).map(|j| a[(i, j)]).collect()).collect()
    };
    let k = cols.len();
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
    for _sweep in 0..100 {
        let mut rotated = false;
        for p in 0..k {
            for q in p + 1..k {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (left, right) = cols.split_at_mut(q);
                for (x, y) in left[p].iter_mut().zip(right[0].iter_mut()) {
                    let (xp, yq) = (*x, *y);
                    *x = c * xp - s * yq;
                    *y = s * xp + c * yq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv: Vec<f64> = cols.iter().map(|c| dot(c, c).sqrt()).collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// `e^A` by scaling and squaring with a degree-20 Taylor polynomial.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let norm1 = (0..n).map(|j| a.column(j).abs().sum()).fold(0.0, f64::max);
    let squarings = if norm1 > 0.5 { (norm1 / 0.5).log2().ceil() as i32 } else { 0 };
    let scaled = a / 2f64.powi(squarings);
    let mut result = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for k in 1..=20 {
        term = &term * &scaled / k as f64;
        result += &term;
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

/// Central-difference Jacobian of `f` at `x`.
pub fn fd_jacobian(f: impl Fn(&DVector<f64>) -> DVector<f64>, x: &DVector<f64>, h: f64) -> DMatrix<f64> {
    let m = x.len();
    let n = f(x).len();
    let mut j = DMatrix::zeros(n, m);
    for k in 0..m {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[k] += h;
        xm[k] -= h;
        j.set_column(k, &((f(&xp) - f(&xm)) / (2.0 * h)));
    }
    j
}

/// δ_s by enumerating supports and Jacobi-diagonalizing each Gram block.
pub fn rip_oracle(a: &DMatrix<f64>, s: usize) -> f64 {
    let mut delta = 0.0_f64;
    for support in itertools::Itertools::combinations(0..a.ncols(), s) {
        let sub = a.select_columns(&support);
        let ev = jacobi_eigenvalues(&(sub.transpose() * sub));
        delta = delta.max(ev[ev.len() - 1] - 1.0).max(1.0 - ev[0]);
    }
    delta
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, n: usize, m: usize, sd: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, m, |_, _| sd * rng.sample::<f64, _>(StandardNormal))
}

pub fn gaussian_vector(rng: &mut ChaCha8Rng, m: usize, sd: f64) -> DVector<f64> {
    DVector::from_fn(m, |_, _| sd * rng.sample::<f64, _>(StandardNormal))
}

/// Random `s`-sparse vector with entries of magnitude in `[0.5, 1.5]`.
pub fn sparse_vector(rng: &mut ChaCha8Rng, m: usize, s: usize) -> DVector<f64> {
    let mut x = DVector::zeros(m);
    for i in rand::seq::index::sample(rng, m, s) {
        let v: f64 = rng.random_range(0.5..1.5);
        x[i] = if rng.random_bool(0.5) { v } else { -v };
    }
    x
}

/// One member of each catalog family, with system matrices of norm about `scale`.
pub fn catalog(m: usize, seed: u64, scale: f64) -> Vec<(&'static str, DynamicalSystem)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sd = scale / (m as f64).sqrt();
    let lin = gaussian_matrix(&mut rng, m, m, sd);
    let aff = gaussian_matrix(&mut rng, m, m, sd);
    let off = gaussian_vector(&mut rng, m, 1.0);
    let tanh = gaussian_matrix(&mut rng, m, m, sd);
    vec![
        ("zero", DynamicalSystem::zero(m).unwrap()),
        ("linear", DynamicalSystem::linear(lin).unwrap()),
        ("affine", DynamicalSystem::affine(aff, off).unwrap()),
        ("tanh-saturated", DynamicalSystem::tanh_saturated(tanh).unwrap()),
    ]
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Seeded-by-default proptest settings without on-disk regression files.
pub fn proptest_config(cases: u32) -> proptest::test_runner::Config {
    proptest::test_runner::Config { cases, failure_persistence: None, ..Default::default() }
}
