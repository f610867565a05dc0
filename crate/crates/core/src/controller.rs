//! Modal integral controllers with leakage and a double roll-off pole.
//!
//! Each observable mode `k` gets the scalar controller
//! `c_k(s) = K_I(k)/(s + A_I(k)) · 1/(s/p + 1)²` acting on `(Uᵀz)_k`, and the
//! result is mapped back to actuators through `Q`. With a unit static plant
//! the modal loop gain is `√λ_k·c_k(s)`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plant_sim::{PlantModel, StateSpace};
use crate::robustness::phi_b_value;
use crate::sensing_model::MeasurementMap;
use crate::spectral::ModalDecomposition;

/// Default roll-off pole, 20 Hz in rad/s.
pub const DEFAULT_ROLLOFF: f64 = 2.0 * std::f64::consts::PI * 20.0;

pub fn hz_to_rad(f: f64) -> f64 {
    2.0 * std::f64::consts::PI * f
}

/// Gains of the modal tuning schedule, all in rad/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuningConfig {
    /// Closed-loop gain `K_I√λ` targeted on well observable modes.
    pub k0: f64,
    /// Cap on `K_I` for poorly observable modes.
    pub k1: f64,
    /// Every worst-case closed-loop pole must sit left of `−p0`.
    pub p0: f64,
    pub epsilon: f64,
    pub rolloff: Option<f64>,
}

impl Default for TuningConfig {
    fn default() -> Self {
        Self {
            k0: 14.4,
            k1: 5.7,
            p0: hz_to_rad(0.1),
            epsilon: 0.01,
            rolloff: Some(DEFAULT_ROLLOFF),
        }
    }
}

impl TuningConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [("k0", self.k0), ("k1", self.k1), ("p0", self.p0)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be nonnegative, got {}",
                self.epsilon
            )));
        }
        if let Some(p) = self.rolloff {
            if !(p > 0.0 && p.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "roll-off pole must be positive, got {p}"
                )));
            }
        }
        Ok(())
    }
}

/// Diagonal controller in the modal basis of a decomposition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModalController {
    k_i: Vec<f64>,
    a_i: Vec<f64>,
    rolloff: Option<f64>,
    basis: ModalDecomposition,
}

impl ModalController {
    pub fn new(
        basis: &ModalDecomposition,
        k_i: Vec<f64>,
        a_i: Vec<f64>,
        rolloff: Option<f64>,
    ) -> Result<Self> {
        let n = basis.n_modes();
        if k_i.len() != n || a_i.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "expected {n} gains and leakages, got {} and {}",
                k_i.len(),
                a_i.len()
            )));
        }
        if let Some(k) = (basis.n0()..n).find(|&k| k_i[k] != 0.0) {
            return Err(Error::InvalidArgument(format!(
                "mode {k} is unobservable but has gain {}",
                k_i[k]
            )));
        }
        if let Some(k) = (0..n).find(|&k| !(a_i[k] >= 0.0) || !k_i[k].is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "mode {k}: leakage {} / gain {} not admissible",
                a_i[k], k_i[k]
            )));
        }
        if let Some(p) = rolloff {
            if !(p > 0.0 && p.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "roll-off pole must be positive, got {p}"
                )));
            }
        }
        Ok(Self {
            k_i,
            a_i,
            rolloff,
            basis: basis.clone(),
        })
    }

    /// Same closed-loop gain `k0` on every observable mode, no leakage.
    pub fn uniform(basis: &ModalDecomposition, k0: f64, rolloff: Option<f64>) -> Result<Self> {
        let n = basis.n_modes();
        let k_i = (0..n)
            .map(|k| {
                if basis.is_observable(k) {
                    k0 / basis.sigma()[k]
                } else {
                    0.0
                }
            })
            .collect();
        Self::new(basis, k_i, vec![0.0; n], rolloff)
    }

    pub fn k_i(&self) -> &[f64] {
        &self.k_i
    }

    pub fn a_i(&self) -> &[f64] {
        &self.a_i
    }

    pub fn rolloff(&self) -> Option<f64> {
        self.rolloff
    }

    pub fn basis(&self) -> &ModalDecomposition {
        &self.basis
    }

    /// Modes with nonzero gain; only these carry controller states.
    pub fn active_modes(&self) -> Vec<usize> {
        (0..self.basis.n0())
            .filter(|&k| self.k_i[k] != 0.0)
            .collect()
    }

    pub fn states_per_mode(&self) -> usize {
        if self.rolloff.is_some() {
            3
        } else {
            1
        }
    }

    pub fn n_states(&self) -> usize {
        self.active_modes().len() * self.states_per_mode()
    }

    /// `c_k(s)` without the minus sign of the feedback.
    pub fn modal_transfer(&self, k: usize, s: Complex64) -> Complex64 {
        let mut c = self.k_i[k] / (s + self.a_i[k]);
        if let Some(p) = self.rolloff {
            let r = s / p + 1.0;
            c /= r * r;
        }
        c
    }

    /// Slow pole `−(A_I + K_I√λ(1+φ))` of mode `k` under a static unit
    /// plant with modal error `φ`.
    pub fn slow_pole(&self, k: usize, phi: f64) -> f64 {
        -(self.a_i[k] + self.k_i[k] * self.basis.sigma()[k] * (1.0 + phi))
    }

    /// State-space realization from `z` (length `N_z`) to `u` (length `N_y`).
    /// Per mode the states are the leaky integrator then, with roll-off, two
    /// first-order lags; `u = −Q·x_last`.
    pub fn state_space(&self) -> StateSpace {
        let u = self.basis.u();
        let q = self.basis.q();
        let (nz, ny) = u.shape();
        let per = self.states_per_mode();
        let n = self.n_states();
        let mut a = DMatrix::zeros(n, n);
        let mut b = DMatrix::zeros(n, nz);
        let mut c = DMatrix::zeros(ny, n);
        for (slot, k) in self.active_modes().into_iter().enumerate() {
            let base = slot * per;
            a[(base, base)] = -self.a_i[k];
            b.row_mut(base)
                .copy_from(&(u.column(k).transpose() * self.k_i[k]));
            if let Some(p) = self.rolloff {
                a[(base + 1, base)] = p;
                a[(base + 1, base + 1)] = -p;
                a[(base + 2, base + 1)] = p;
                a[(base + 2, base + 2)] = -p;
            }
            c.column_mut(base + per - 1).copy_from(&(-q.column(k)));
        }
        StateSpace {
            a,
            b,
            c,
            d: DMatrix::zeros(ny, nz),
        }
    }
}

/// Modal schedule: `K_I = min(K_0/√λ_k, K_1)` and
/// `A_I = max(0, p_0 − K_I√λ_k(1+φ_k))`; unobservable modes get nothing.
/// `phi[k]` is the worst-case modal error of observable mode `k`.
pub fn tune_modal(
    decomp: &ModalDecomposition,
    config: &TuningConfig,
    phi: &[f64],
) -> Result<ModalController> {
    config.validate()?;
    let n0 = decomp.n0();
    if n0 == 0 {
        return Err(Error::InvalidSize("no observable modes to tune".into()));
    }
    if phi.len() < n0 {
        return Err(Error::DimensionMismatch(format!(
            "need {n0} modal errors, got {}",
            phi.len()
        )));
    }
    if let Some(k) = (0..n0).find(|&k| !(phi[k] <= 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "worst-case modal error must be nonpositive, mode {k} has {}",
            phi[k]
        )));
    }
    let n = decomp.n_modes();
    let mut k_i = vec![0.0; n];
    let mut a_i = vec![0.0; n];
    for k in 0..n0 {
        let s = decomp.sigma()[k];
        k_i[k] = (config.k0 / s).min(config.k1);
        a_i[k] = (config.p0 - k_i[k] * s * (1.0 + phi[k])).max(0.0);
    }
    ModalController::new(decomp, k_i, a_i, config.rolloff)
}

/// Worst-case modal errors at `config.epsilon`, then [`tune_modal`].
pub fn tune_modal_worst_case(
    map: &MeasurementMap,
    decomp: &ModalDecomposition,
    config: &TuningConfig,
) -> Result<(ModalController, Vec<f64>)> {
    config.validate()?;
    let phi: Vec<f64> = (0..decomp.n0())
        .into_par_iter()
        .map(|b| phi_b_value(map, decomp, b, config.epsilon))
        .collect::<Result<_>>()?;
    Ok((tune_modal(decomp, config, &phi)?, phi))
}

/// `1/(1 + √λ K_I/A_I)`, the static rejection of a mode under a unit plant.
pub fn dc_sensitivity_scalar(sqrt_lambda: f64, k_i: f64, a_i: f64) -> f64 {
    if k_i == 0.0 || sqrt_lambda == 0.0 {
        1.0
    } else if a_i == 0.0 {
        0.0
    } else {
        (1.0 / (1.0 + sqrt_lambda * k_i / a_i)).abs()
    }
}

/// Per-mode `|S(0)|`; unobservable modes are not rejected at all.
pub fn dc_sensitivity(controller: &ModalController) -> Vec<f64> {
    let basis = controller.basis();
    (0..basis.n_modes())
        .map(|k| {
            if basis.is_observable(k) {
                dc_sensitivity_scalar(basis.sigma()[k], controller.k_i()[k], controller.a_i()[k])
            } else {
                1.0
            }
        })
        .collect()
}

/// Per-mode sensitivity and complementary sensitivity on a frequency grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SensitivityResponse {
    pub omega: Vec<f64>,
    /// `s[k][i]` is `S_k(iω_i)`.
    pub s: Vec<Vec<Complex64>>,
    pub t: Vec<Vec<Complex64>>,
}

/// Scalar loops `K_k = G(iω)·√λ_k·c_k(iω)`. Needs a plant that is the same
/// scalar on every output, otherwise the modes do not decouple.
pub fn sensitivity_response(
    controller: &ModalController,
    plant: &PlantModel,
    omega: &[f64],
) -> Result<SensitivityResponse> {
    let basis = controller.basis();
    let n = basis.n_modes();
    let mut s_all = Vec::with_capacity(n);
    let mut t_all = Vec::with_capacity(n);
    for k in 0..n {
        let mut s_k = Vec::with_capacity(omega.len());
        let mut t_k = Vec::with_capacity(omega.len());
        for &w in omega {
            let s = Complex64::new(0.0, w);
            let loop_gain = if basis.is_observable(k) {
                plant.scalar_response(s)? * basis.sigma()[k] * controller.modal_transfer(k, s)
            } else {
                Complex64::new(0.0, 0.0)
            };
            let sens = 1.0 / (1.0 + loop_gain);
            s_k.push(sens);
            t_k.push(loop_gain / (1.0 + loop_gain));
        }
        s_all.push(s_k);
        t_all.push(t_k);
    }
    Ok(SensitivityResponse {
        omega: omega.to_vec(),
        s: s_all,
        t: t_all,
    })
}

/// `k, lambda, K_I, A_I, phi_k, dc_sensitivity` with `k` from 1; `phi_k`
/// is empty for modes without a value.
pub fn write_tuning_csv<W: std::io::Write>(
    controller: &ModalController,
    phi: &[f64],
    w: W,
) -> Result<()> {
    let basis = controller.basis();
    let dc = dc_sensitivity(controller);
    let rows = (0..basis.n_modes()).map(|k| {
        (
            k + 1,
            basis.lambda(k),
            controller.k_i()[k],
            controller.a_i()[k],
            phi.get(k).copied(),
            dc[k],
        )
    });
    crate::export::write_csv(
        w,
        &["k", "lambda", "K_I", "A_I", "phi_k", "dc_sensitivity"],
        rows,
    )
}

/// Modal coordinates `Qᵀy`.
pub fn modal_coordinates(basis: &ModalDecomposition, y: &DVector<f64>) -> DVector<f64> {
    basis.q().transpose() * y
}
