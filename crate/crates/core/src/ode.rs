//! Forward integration of `ẋ = f(t, x)`, flow-map sensitivities through the
//! variational equation, and the Gronwall growth envelope.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::check_len;
use crate::model::DynamicalSystem;

pub const DEFAULT_STEPS: usize = 256;

/// Integrator selection.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum IntegrationConfig {
    /// Classical fourth-order Runge–Kutta with `steps` equal steps over `[0, T]`.
    Rk4 { steps: usize },
    /// Dormand–Prince 5(4) with mixed absolute/relative error control.
    Rk45 { tolerance: f64 },
}

impl Default for IntegrationConfig {
    fn default() -> Self {
        IntegrationConfig::Rk4 { steps: DEFAULT_STEPS }
    }
}

impl IntegrationConfig {
    pub fn validate(&self) -> Result<()> {
        match *self {
            IntegrationConfig::Rk4 { steps: 0 } => Err(Error::Domain("step count must be at least 1".into())),
            IntegrationConfig::Rk45 { tolerance } if !(tolerance > 0.0) => {
                Err(Error::Domain(format!("tolerance {tolerance} must be positive")))
            }
            _ => Ok(()),
        }
    }
}

/// Sampled solution `x(t)` on `[0, T]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory always holds the initial state")
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trajectory always holds t = 0")
    }

    /// Writes `t,x_1,..,x_m` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let m = self.states.first().map_or(0, |s| s.len());
        let header: Vec<String> = std::iter::once("t".to_string()).chain((1..=m).map(|i| format!("x_{i}"))).collect();
        writeln!(out, "{}", header.join(","))?;
        for (t, x) in self.times.iter().zip(&self.states) {
            let row: Vec<String> = std::iter::once(t.to_string()).chain(x.iter().map(|v| v.to_string())).collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

// Butcher tableau for Dormand–Prince 5(4).
const DP_C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const DP_B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const DP_B4: [f64; 7] =
    [5179.0 / 57600.0, 0.0, 7571.0 / 16695.0, 393.0 / 640.0, -92097.0 / 339200.0, 187.0 / 2100.0, 1.0 / 40.0];

fn check_finite(t: f64, y: &[f64]) -> Result<()> {
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { time: t, detail: format!("component {i} became {}", y[i]) });
    }
    Ok(())
}

/// Integrates the flat system `y' = rhs(t, y)` and calls `record` after every accepted step.
fn solve<F, R>(mut rhs: F, y0: &[f64], t_final: f64, cfg: IntegrationConfig, mut record: R) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64], &mut [f64]),
    R: FnMut(f64, &[f64]),
{
    cfg.validate()?;
    if !(t_final > 0.0) || !t_final.is_finite() {
        return Err(Error::Domain(format!("final time {t_final} must be positive")));
    }
    let dim = y0.len();
    let mut y = y0.to_vec();
    record(0.0, &y);
    match cfg {
        IntegrationConfig::Rk4 { steps } => {
            let h = t_final / steps as f64;
            let mut k = vec![vec![0.0; dim]; 4];
            let mut tmp = vec![0.0; dim];
            for step in 0..steps {
                let t = step as f64 * h;
                rhs(t, &y, &mut k[0]);
                for i in 0..dim {
                    tmp[i] = y[i] + 0.5 * h * k[0][i];
                }
                rhs(t + 0.5 * h, &tmp, &mut k[1]);
                for i in 0..dim {
                    tmp[i] = y[i] + 0.5 * h * k[1][i];
                }
                rhs(t + 0.5 * h, &tmp, &mut k[2]);
                for i in 0..dim {
                    tmp[i] = y[i] + h * k[2][i];
                }
                rhs(t + h, &tmp, &mut k[3]);
                for i in 0..dim {
                    y[i] += h / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]);
                }
                let t_next = if step + 1 == steps { t_final } else { (step + 1) as f64 * h };
                check_finite(t_next, &y)?;
                record(t_next, &y);
            }
        }
        IntegrationConfig::Rk45 { tolerance } => {
            let mut k = vec![vec![0.0; dim]; 7];
            let mut tmp = vec![0.0; dim];
            let mut y5 = vec![0.0; dim];
            let mut t = 0.0;
            let mut h = (t_final * 1e-2).min(0.1 * t_final);
            let h_min = t_final * 1e-14;
            while t < t_final {
                if t + h > t_final {
                    h = t_final - t;
                }
                rhs(t, &y, &mut k[0]);
                for s in 1..7 {
                    for i in 0..dim {
                        let mut acc = y[i];
                        for (j, a) in DP_A[s].iter().take(s).enumerate() {
                            acc += h * a * k[j][i];
                        }
                        tmp[i] = acc;
                    }
                    rhs(t + DP_C[s] * h, &tmp, &mut k[s]);
                }
                let mut err = 0.0_f64;
                for i in 0..dim {
                    let mut hi = 0.0;
                    let mut lo = 0.0;
                    for s in 0..7 {
                        hi += DP_B5[s] * k[s][i];
                        lo += DP_B4[s] * k[s][i];
                    }
                    y5[i] = y[i] + h * hi;
                    let scale = tolerance * (1.0 + y[i].abs().max(y5[i].abs()));
                    err = err.max((h * (hi - lo)).abs() / scale);
                }
                if !err.is_finite() {
                    check_finite(t + h, &y5)?;
                    return Err(Error::NonFinite { time: t + h, detail: "error estimate overflowed".into() });
                }
                if err <= 1.0 {
                    t = if (t_final - (t + h)).abs() <= h_min { t_final } else { t + h };
                    y.copy_from_slice(&y5);
                    check_finite(t, &y)?;
                    record(t, &y);
                }
                let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                h *= factor;
                if h < h_min && t < t_final {
                    return Err(Error::NonFinite { time: t, detail: "step size underflow".into() });
                }
            }
        }
    }
    Ok(y)
}

/// Solves the IVP `x(0) = x0` up to time `t_final`.
pub fn integrate(
    system: &DynamicalSystem,
    x0: &DVector<f64>,
    t_final: f64,
    cfg: IntegrationConfig,
) -> Result<Trajectory> {
    check_len("initial state", x0, system.dim())?;
    let mut times = Vec::new();
    let mut states = Vec::new();
    solve(
        |t, y, dy| system.rhs_into(t, y, dy),
        x0.as_slice(),
        t_final,
        cfg,
        |t, y| {
            times.push(t);
            states.push(DVector::from_column_slice(y));
        },
    )?;
    Ok(Trajectory { times, states })
}

/// Final state `x(T)` without storing the trajectory.
pub fn flow(system: &DynamicalSystem, x0: &DVector<f64>, t_final: f64, cfg: IntegrationConfig) -> Result<DVector<f64>> {
    check_len("initial state", x0, system.dim())?;
    let y = solve(|t, y, dy| system.rhs_into(t, y, dy), x0.as_slice(), t_final, cfg, |_, _| {})?;
    Ok(DVector::from_vec(y))
}

/// `x(T)` together with `Φ(T) = ∂x(T)/∂x0`, obtained by integrating
/// `Φ' = J(x) Φ`, `Φ(0) = I` alongside the state.
pub fn flow_with_jacobian(
    system: &DynamicalSystem,
    x0: &DVector<f64>,
    t_final: f64,
    cfg: IntegrationConfig,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let m = system.dim();
    check_len("initial state", x0, m)?;
    let mut y0 = vec![0.0; m + m * m];
    y0[..m].copy_from_slice(x0.as_slice());
    for i in 0..m {
        y0[m + i * m + i] = 1.0;
    }
    let mut jac = vec![0.0; m * m];
    let y = solve(
        |t, y, dy| {
            let (x, phi) = y.split_at(m);
            let (dx, dphi) = dy.split_at_mut(m);
            system.rhs_into(t, x, dx);
            system.jacobian_into(t, x, &mut jac);
            // dphi = J * phi, all column-major
            for c in 0..m {
                let phi_col = &phi[c * m..(c + 1) * m];
                let out = &mut dphi[c * m..(c + 1) * m];
                out.iter_mut().for_each(|o| *o = 0.0);
                for (k, &p) in phi_col.iter().enumerate() {
                    if p == 0.0 {
                        continue;
                    }
                    let jcol = &jac[k * m..(k + 1) * m];
                    out.iter_mut().zip(jcol).for_each(|(o, j)| *o += j * p);
                }
            }
        },
        &y0,
        t_final,
        cfg,
        |_, _| {},
    )?;
    let state = DVector::from_column_slice(&y[..m]);
    let phi = DMatrix::from_column_slice(m, m, &y[m..]);
    Ok((state, phi))
}

/// Sensitivity of the flow map at `x0`.
pub fn flow_jacobian(
    system: &DynamicalSystem,
    x0: &DVector<f64>,
    t_final: f64,
    cfg: IntegrationConfig,
) -> Result<DMatrix<f64>> {
    flow_with_jacobian(system, x0, t_final, cfg).map(|(_, phi)| phi)
}

/// `gap0 · e^{L t}`, the Gronwall bound on the separation of two trajectories.
pub fn gronwall_envelope(lipschitz: f64, gap0: f64, t: f64) -> Result<f64> {
    if !(lipschitz >= 0.0) || !(gap0 >= 0.0) || !(t >= 0.0) {
        return Err(Error::Domain(format!("gronwall envelope needs L, gap0, t >= 0 (got {lipschitz}, {gap0}, {t})")));
    }
    if gap0 == 0.0 {
        return Ok(0.0);
    }
    Ok(gap0 * (lipschitz * t).exp())
}
