//! Domain types: the ODE right-hand-side catalog, the measurement model and
//! the sparse recovery problem, plus the vector primitives built on them.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{check_len, serde_rows, serde_vec, spectral_norm};

/// Right-hand side `f(t, x)` of an autonomous system, drawn from a fixed catalog
/// whose Lipschitz constants are known in closed form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Rhs {
    /// `f = 0`.
    Zero,
    /// `f(x) = M x`.
    Linear {
        #[serde(with = "serde_rows")]
        matrix: DMatrix<f64>,
    },
    /// `f(x) = M x + c`.
    Affine {
        #[serde(with = "serde_rows")]
        matrix: DMatrix<f64>,
        #[serde(with = "serde_vec")]
        offset: DVector<f64>,
    },
    /// `f(x) = tanh(M x)`, applied componentwise.
    TanhSaturated {
        #[serde(with = "serde_rows")]
        matrix: DMatrix<f64>,
    },
}

impl Rhs {
    fn matrix(&self) -> Option<&DMatrix<f64>> {
        match self {
            Rhs::Zero => None,
            Rhs::Linear { matrix } | Rhs::Affine { matrix, .. } | Rhs::TanhSaturated { matrix } => Some(matrix),
        }
    }

    fn analytic_lipschitz(&self) -> f64 {
        self.matrix().map_or(0.0, spectral_norm)
    }
}

#[derive(Deserialize)]
struct RawSystem {
    dim: usize,
    rhs: Rhs,
    #[serde(default)]
    lipschitz: Option<f64>,
}

/// An IVP right-hand side together with a global Lipschitz bound in `x`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSystem")]
pub struct DynamicalSystem {
    dim: usize,
    rhs: Rhs,
    lipschitz: f64,
}

impl TryFrom<RawSystem> for DynamicalSystem {
    type Error = Error;

    fn try_from(raw: RawSystem) -> Result<Self> {
        let sys = Self::new(raw.dim, raw.rhs)?;
        match raw.lipschitz {
            Some(l) => sys.with_lipschitz(l),
            None => Ok(sys),
        }
    }
}

impl DynamicalSystem {
    /// Validates shapes and attaches the analytic Lipschitz constant.
    pub fn new(dim: usize, rhs: Rhs) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Domain("system dimension must be at least 1".into()));
        }
        if let Some(m) = rhs.matrix() {
            if m.nrows() != dim || m.ncols() != dim {
                return Err(Error::Shape(format!("rhs matrix is {}x{}, expected {dim}x{dim}", m.nrows(), m.ncols())));
            }
        }
        if let Rhs::Affine { offset, .. } = &rhs {
            check_len("affine offset", offset, dim)?;
            if offset.iter().any(|v| !v.is_finite()) {
                return Err(Error::Domain("affine offset has non-finite entries".into()));
            }
        }
        let lipschitz = rhs.analytic_lipschitz();
        Ok(Self { dim, rhs, lipschitz })
    }

    pub fn zero(dim: usize) -> Result<Self> {
        Self::new(dim, Rhs::Zero)
    }

    pub fn linear(matrix: DMatrix<f64>) -> Result<Self> {
        Self::new(matrix.nrows(), Rhs::Linear { matrix })
    }

    pub fn affine(matrix: DMatrix<f64>, offset: DVector<f64>) -> Result<Self> {
        Self::new(matrix.nrows(), Rhs::Affine { matrix, offset })
    }

    pub fn tanh_saturated(matrix: DMatrix<f64>) -> Result<Self> {
        Self::new(matrix.nrows(), Rhs::TanhSaturated { matrix })
    }

    /// Replaces the stored bound with a looser one. Bounds below the analytic
    /// constant would not be valid and are rejected.
    pub fn with_lipschitz(mut self, lipschitz: f64) -> Result<Self> {
        let analytic = self.rhs.analytic_lipschitz();
        if !(lipschitz >= 0.0) || !lipschitz.is_finite() {
            return Err(Error::Domain(format!("lipschitz bound {lipschitz} must be finite and >= 0")));
        }
        if lipschitz < analytic * (1.0 - 1e-12) {
            return Err(Error::Domain(format!(
                "lipschitz bound {lipschitz} is below the analytic constant {analytic}"
            )));
        }
        self.lipschitz = lipschitz;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rhs(&self) -> &Rhs {
        &self.rhs
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    /// True when the flow map is affine in the initial state, so one
    /// linearization captures it exactly.
    pub fn is_affine_in_state(&self) -> bool {
        !matches!(self.rhs, Rhs::TanhSaturated { .. })
    }

    pub fn eval_rhs(&self, t: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("state", x, self.dim)?;
        let mut out = vec![0.0; self.dim];
        self.rhs_into(t, x.as_slice(), &mut out);
        Ok(DVector::from_vec(out))
    }

    /// Unchecked evaluation into a caller buffer; `x` and `out` must have length `dim`.
    pub(crate) fn rhs_into(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        match &self.rhs {
            Rhs::Zero => out.iter_mut().for_each(|o| *o = 0.0),
            Rhs::Linear { matrix } => matvec(matrix, x, out),
            Rhs::Affine { matrix, offset } => {
                matvec(matrix, x, out);
                out.iter_mut().zip(offset.iter()).for_each(|(o, c)| *o += c);
            }
            Rhs::TanhSaturated { matrix } => {
                matvec(matrix, x, out);
                out.iter_mut().for_each(|o| *o = o.tanh());
            }
        }
    }

    /// `∂f/∂x` at `x`, written column-major into `out` (`dim * dim` entries).
    pub(crate) fn jacobian_into(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        let m = self.dim;
        match &self.rhs {
            Rhs::Zero => out.iter_mut().for_each(|o| *o = 0.0),
            Rhs::Linear { matrix } | Rhs::Affine { matrix, .. } => {
                out.copy_from_slice(matrix.as_slice());
            }
            Rhs::TanhSaturated { matrix } => {
                let mut z = vec![0.0; m];
                matvec(matrix, x, &mut z);
                let sech2: Vec<f64> = z.iter().map(|v| 1.0 - v.tanh().powi(2)).collect();
                for j in 0..m {
                    for i in 0..m {
                        out[j * m + i] = sech2[i] * matrix[(i, j)];
                    }
                }
            }
        }
    }
}

fn matvec(a: &DMatrix<f64>, x: &[f64], out: &mut [f64]) {
    let n = a.nrows();
    out.iter_mut().for_each(|o| *o = 0.0);
    for (j, &xj) in x.iter().enumerate() {
        if xj == 0.0 {
            continue;
        }
        let col = &a.as_slice()[j * n..(j + 1) * n];
        out.iter_mut().zip(col).for_each(|(o, a)| *o += a * xj);
    }
}

/// Analytic Lipschitz constant of the system: `0` for the zero field,
/// `‖M‖₂` otherwise (tanh is 1-Lipschitz componentwise).
pub fn lipschitz_bound(system: &DynamicalSystem) -> f64 {
    system.lipschitz()
}

fn check_weights(w: &DVector<f64>) -> Result<()> {
    if w.is_empty() {
        return Err(Error::Shape("weight vector is empty".into()));
    }
    if let Some((i, v)) = w.iter().enumerate().find(|(_, v)| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::Domain(format!("weight {i} = {v} is not strictly positive")));
    }
    Ok(())
}

/// `Σ wᵢ |xᵢ|`.
pub fn weighted_l1_norm(x: &DVector<f64>, w: &DVector<f64>) -> Result<f64> {
    check_len("vector", x, w.len())?;
    check_weights(w)?;
    Ok(x.iter().zip(w.iter()).map(|(x, w)| w * x.abs()).sum())
}

/// Keeps the `s` largest-magnitude entries of `x`; ties keep the lower index.
pub fn best_s_term(x: &DVector<f64>, s: usize) -> Result<DVector<f64>> {
    if s > x.len() {
        return Err(Error::Domain(format!("sparsity {s} exceeds dimension {}", x.len())));
    }
    let mut order: Vec<usize> = (0..x.len()).collect();
    // stable sort keeps lower indices first among equal magnitudes
    order.sort_by(|&i, &j| x[j].abs().total_cmp(&x[i].abs()));
    let mut out = DVector::zeros(x.len());
    for &i in order.iter().take(s) {
        out[i] = x[i];
    }
    Ok(out)
}

/// `max wᵢ / min wᵢ`, the condition number of `diag(w)`.
pub fn weight_condition_number(w: &DVector<f64>) -> Result<f64> {
    check_weights(w)?;
    Ok(w.max() / w.min())
}

#[derive(Deserialize)]
struct RawMeasurement {
    #[serde(with = "serde_rows")]
    matrix: DMatrix<f64>,
    time: f64,
    #[serde(default)]
    noise_radius: f64,
    #[serde(default)]
    weights: Option<Vec<f64>>,
}

/// Terminal-time measurement `b = A x(T) + e` with `‖e‖₂ ≤ ε`, and the
/// weights of the recovery objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMeasurement")]
pub struct MeasurementModel {
    #[serde(with = "serde_rows")]
    matrix: DMatrix<f64>,
    time: f64,
    noise_radius: f64,
    #[serde(with = "serde_vec")]
    weights: DVector<f64>,
}

impl TryFrom<RawMeasurement> for MeasurementModel {
    type Error = Error;

    fn try_from(raw: RawMeasurement) -> Result<Self> {
        let weights =
            raw.weights.map(DVector::from_vec).unwrap_or_else(|| DVector::from_element(raw.matrix.ncols(), 1.0));
        Self::new(raw.matrix, raw.time, raw.noise_radius, weights)
    }
}

impl MeasurementModel {
    pub fn new(matrix: DMatrix<f64>, time: f64, noise_radius: f64, weights: DVector<f64>) -> Result<Self> {
        if matrix.nrows() == 0 || matrix.ncols() == 0 {
            return Err(Error::Shape("measurement matrix must be non-empty".into()));
        }
        if !(time > 0.0) || !time.is_finite() {
            return Err(Error::Domain(format!("observation time {time} must be positive")));
        }
        if !(noise_radius >= 0.0) || !noise_radius.is_finite() {
            return Err(Error::Domain(format!("noise radius {noise_radius} must be >= 0")));
        }
        check_len("weights", &weights, matrix.ncols())?;
        check_weights(&weights)?;
        Ok(Self { matrix, time, noise_radius, weights })
    }

    /// Unit weights.
    pub fn unweighted(matrix: DMatrix<f64>, time: f64, noise_radius: f64) -> Result<Self> {
        let m = matrix.ncols();
        Self::new(matrix, time, noise_radius, DVector::from_element(m, 1.0))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn noise_radius(&self) -> f64 {
        self.noise_radius
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }
}

#[derive(Deserialize)]
struct RawProblem {
    system: DynamicalSystem,
    measurement: MeasurementModel,
    observation: Vec<f64>,
    sparsity: usize,
}

/// Observation `b` of an unknown sparse initial state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawProblem")]
pub struct SparseProblem {
    system: DynamicalSystem,
    measurement: MeasurementModel,
    #[serde(with = "serde_vec")]
    observation: DVector<f64>,
    sparsity: usize,
}

impl TryFrom<RawProblem> for SparseProblem {
    type Error = Error;

    fn try_from(raw: RawProblem) -> Result<Self> {
        Self::new(raw.system, raw.measurement, DVector::from_vec(raw.observation), raw.sparsity)
    }
}

impl SparseProblem {
    pub fn new(
        system: DynamicalSystem,
        measurement: MeasurementModel,
        observation: DVector<f64>,
        sparsity: usize,
    ) -> Result<Self> {
        if measurement.cols() != system.dim() {
            return Err(Error::Shape(format!(
                "measurement matrix has {} columns, system dimension is {}",
                measurement.cols(),
                system.dim()
            )));
        }
        check_len("observation", &observation, measurement.rows())?;
        if sparsity == 0 || sparsity > system.dim() {
            return Err(Error::Domain(format!("sparsity {sparsity} must lie in 1..={}", system.dim())));
        }
        Ok(Self { system, measurement, observation, sparsity })
    }

    pub fn system(&self) -> &DynamicalSystem {
        &self.system
    }

    pub fn measurement(&self) -> &MeasurementModel {
        &self.measurement
    }

    pub fn observation(&self) -> &DVector<f64> {
        &self.observation
    }

    pub fn sparsity(&self) -> usize {
        self.sparsity
    }
}

/// Result of a recovery run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryOutcome {
    #[serde(with = "serde_vec")]
    pub estimate: DVector<f64>,
    /// `‖b − A·x(T)‖₂` for the flow started at `estimate`.
    pub residual: f64,
    pub weighted_l1: f64,
    pub iterations: usize,
    pub converged: bool,
}
