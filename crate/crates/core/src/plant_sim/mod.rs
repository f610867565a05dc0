//! Plant models, closed-loop assembly and time-domain simulation.
//!
//! The loop is `y = G(u + d)`, `z = (B + Δ)y + n`, `u = −C z`. Assembled
//! systems take the stacked input `[d; n]` and produce `[y; u; z]`.

mod disturbance;
mod simulate;
mod spectrum;

pub use disturbance::{
    wind_field, DisturbanceModel, StaticOffsets, WindGenerator, WindModel, WindSeries,
};
pub use simulate::{
    read_trace_binary, simulate, write_trace_binary, write_trace_csv, ChannelSet, SimulationConfig,
    SimulationTrace,
};
pub use spectrum::{
    modal_signal, psd, rejection_ratio, rms_metric, write_psd_csv, Psd, PsdParams, PsdScaling,
    RejectionRatio, RmsSelection,
};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::controller::ModalController;
use crate::error::{Error, Result};
use crate::sensing_model::MeasurementMap;

/// `ẋ = A x + B w`, `v = C x + D w`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSpace {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

impl StateSpace {
    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.c.nrows()
    }
}

/// Dynamics shared by every subsystem; the full plant is block diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PlantModel {
    /// `y = gain·(u + d)`, no dynamics.
    Static { gain: f64 },
    /// `J ÿ + b_a ẏ + k_a y = k (u + d)` per subsystem.
    Segment {
        /// Rows of the `N × N` inertia matrix.
        inertia: Vec<Vec<f64>>,
        stiffness: f64,
        damping: f64,
        input_gain: f64,
    },
    /// `m ÿ + c ẏ = u + d` per output.
    Vehicle { mass: f64, drag: f64 },
}

impl PlantModel {
    /// Unit-inertia segment resonating at `resonance_hz` with the given
    /// damping ratio, unit static gain.
    pub fn segment(block_size: usize, resonance_hz: f64, damping_ratio: f64) -> Self {
        let w = 2.0 * std::f64::consts::PI * resonance_hz;
        let k_a = w * w;
        let inertia = (0..block_size)
            .map(|i| {
                (0..block_size)
                    .map(|j| if i == j { 1.0 } else { 0.0 })
                    .collect()
            })
            .collect();
        PlantModel::Segment {
            inertia,
            stiffness: k_a,
            damping: 2.0 * damping_ratio * w,
            input_gain: k_a,
        }
    }

    /// 50 Hz, 1 % damping.
    pub fn segment_default(block_size: usize) -> Self {
        Self::segment(block_size, 50.0, 0.01)
    }

    pub fn vehicle_default() -> Self {
        PlantModel::Vehicle {
            mass: 1.0,
            drag: 0.1,
        }
    }

    fn inertia_matrix(&self, block_size: usize) -> Result<DMatrix<f64>> {
        let PlantModel::Segment { inertia, .. } = self else {
            unreachable!("only segments have inertia")
        };
        if inertia.len() != block_size || inertia.iter().any(|r| r.len() != block_size) {
            return Err(Error::DimensionMismatch(format!(
                "inertia must be {block_size}x{block_size}"
            )));
        }
        Ok(DMatrix::from_fn(block_size, block_size, |i, j| {
            inertia[i][j]
        }))
    }

    pub fn validate(&self, block_size: usize) -> Result<()> {
        match self {
            PlantModel::Static { gain } => {
                if !gain.is_finite() || *gain == 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "static gain must be finite and nonzero, got {gain}"
                    )));
                }
            }
            PlantModel::Segment {
                stiffness,
                damping,
                input_gain,
                ..
            } => {
                let j = self.inertia_matrix(block_size)?;
                if (&j - j.transpose()).amax() > 1e-12 * j.amax() || j.clone().cholesky().is_none()
                {
                    return Err(Error::InvalidArgument(
                        "inertia must be symmetric positive definite".into(),
                    ));
                }
                for (name, v) in [
                    ("stiffness", stiffness),
                    ("damping", damping),
                    ("input gain", input_gain),
                ] {
                    if !(*v > 0.0 && v.is_finite()) {
                        return Err(Error::InvalidArgument(format!(
                            "{name} must be positive, got {v}"
                        )));
                    }
                }
            }
            PlantModel::Vehicle { mass, drag } => {
                if !(*mass > 0.0 && *drag >= 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "vehicle needs mass > 0 and drag >= 0, got {mass}, {drag}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn states_per_output(&self) -> usize {
        match self {
            PlantModel::Static { .. } => 0,
            _ => 2,
        }
    }

    /// Realization of the whole plant for `n_subsystems` blocks of size
    /// `block_size`; states are all positions, then all velocities.
    pub fn state_space(&self, n_subsystems: usize, block_size: usize) -> Result<StateSpace> {
        self.validate(block_size)?;
        let ny = n_subsystems * block_size;
        match self {
            PlantModel::Static { gain } => Ok(StateSpace {
                a: DMatrix::zeros(0, 0),
                b: DMatrix::zeros(0, ny),
                c: DMatrix::zeros(ny, 0),
                d: DMatrix::identity(ny, ny) * *gain,
            }),
            PlantModel::Segment {
                stiffness,
                damping,
                input_gain,
                ..
            } => {
                let j_inv = self
                    .inertia_matrix(block_size)?
                    .try_inverse()
                    .ok_or_else(|| Error::Singular("inertia matrix".into()))?;
                let mut a = DMatrix::zeros(2 * ny, 2 * ny);
                let mut b = DMatrix::zeros(2 * ny, ny);
                for i in 0..ny {
                    a[(i, ny + i)] = 1.0;
                }
                for s in 0..n_subsystems {
                    let o = s * block_size;
                    let mut acc = a.view_mut((ny + o, o), (block_size, block_size));
                    acc.copy_from(&(&j_inv * -*stiffness));
                    let mut damp = a.view_mut((ny + o, ny + o), (block_size, block_size));
                    damp.copy_from(&(&j_inv * -*damping));
                    b.view_mut((ny + o, o), (block_size, block_size))
                        .copy_from(&(&j_inv * *input_gain));
                }
                let mut c = DMatrix::zeros(ny, 2 * ny);
                c.view_mut((0, 0), (ny, ny)).fill_with_identity();
                Ok(StateSpace {
                    a,
                    b,
                    c,
                    d: DMatrix::zeros(ny, ny),
                })
            }
            PlantModel::Vehicle { mass, drag } => {
                let mut a = DMatrix::zeros(2 * ny, 2 * ny);
                let mut b = DMatrix::zeros(2 * ny, ny);
                for i in 0..ny {
                    a[(i, ny + i)] = 1.0;
                    a[(ny + i, ny + i)] = -drag / mass;
                    b[(ny + i, i)] = 1.0 / mass;
                }
                let mut c = DMatrix::zeros(ny, 2 * ny);
                c.view_mut((0, 0), (ny, ny)).fill_with_identity();
                Ok(StateSpace {
                    a,
                    b,
                    c,
                    d: DMatrix::zeros(ny, ny),
                })
            }
        }
    }

    /// Frequency response when the plant acts as the same scalar on every
    /// output; anything else does not decouple in a modal basis.
    pub fn scalar_response(&self, s: Complex64) -> Result<Complex64> {
        match self {
            PlantModel::Static { gain } => Ok(Complex64::new(*gain, 0.0)),
            PlantModel::Segment {
                inertia,
                stiffness,
                damping,
                input_gain,
            } => {
                let j = inertia
                    .first()
                    .and_then(|r| r.first())
                    .copied()
                    .unwrap_or(0.0);
                let scalar = inertia.iter().enumerate().all(|(i, row)| {
                    row.iter()
                        .enumerate()
                        .all(|(k, v)| if i == k { *v == j } else { *v == 0.0 })
                });
                if !scalar {
                    return Err(Error::UnsupportedStructure(
                        "segment inertia is not a multiple of the identity; modes do not decouple"
                            .into(),
                    ));
                }
                Ok(*input_gain / (s * s * j + s * *damping + *stiffness))
            }
            PlantModel::Vehicle { mass, drag } => Ok(1.0 / (s * s * *mass + s * *drag)),
        }
    }
}

/// Plant, sensing and (optionally) controller wired together.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClosedLoop {
    pub system: StateSpace,
    pub n_plant_states: usize,
    pub n_controller_states: usize,
    pub n_y: usize,
    pub n_z: usize,
}

impl ClosedLoop {
    /// Offsets of the `y`, `u` and `z` blocks in the output vector.
    pub fn output_offsets(&self) -> (usize, usize, usize) {
        (0, self.n_y, 2 * self.n_y)
    }

    pub fn n_inputs(&self) -> usize {
        self.n_y + self.n_z
    }

    /// Eigenvalues of the state matrix, sorted by real part, largest first.
    pub fn poles(&self) -> Result<Vec<Complex64>> {
        let mut poles = eigenvalues(&self.system.a)?;
        poles.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
        Ok(poles)
    }
}

/// Eigenvalues of a real square matrix. nalgebra's real Schur iteration
/// can stall at machine-epsilon deflation on clustered spectra, so the
/// deflation tolerance is relaxed step by step; each result must reproduce
/// the trace.
pub fn eigenvalues(a: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    let n = a.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let trace = a.trace();
    let scale = a.norm().max(f64::MIN_POSITIVE);
    for eps in [4.0 * f64::EPSILON, 1e-14, 1e-13, 1e-12] {
        let Some(schur) = nalgebra::linalg::Schur::try_new(a.clone(), eps, 200 * n.max(10)) else {
            continue;
        };
        let ev: Vec<Complex64> = schur.complex_eigenvalues().iter().copied().collect();
        let sum: f64 = ev.iter().map(|z| z.re).sum();
        if (sum - trace).abs() <= 1e-8 * scale * n as f64 {
            return Ok(ev);
        }
    }
    Err(Error::Numeric {
        message: "Schur decomposition of the closed-loop matrix did not converge".into(),
        condition: f64::NAN,
    })
}

/// Connects `plant`, the sensing map `B + Δ` and `controller` (`None` for
/// open loop). The controller must be strictly proper, which every
/// [`ModalController`] is.
pub fn assemble_closed_loop(
    plant: &PlantModel,
    controller: Option<&ModalController>,
    map: &MeasurementMap,
    delta: Option<&DMatrix<f64>>,
) -> Result<ClosedLoop> {
    let ny = map.n_outputs();
    let nz = map.n_sensors();
    let mut bd = map.matrix().clone();
    if let Some(delta) = delta {
        if delta.shape() != bd.shape() {
            return Err(Error::DimensionMismatch(format!(
                "error matrix is {}x{}, map is {nz}x{ny}",
                delta.nrows(),
                delta.ncols()
            )));
        }
        bd += delta;
    }
    let p = plant.state_space(map.n_subsystems(), map.block_size())?;
    let k = match controller {
        Some(c) => {
            let ss = c.state_space();
            if ss.b.ncols() != nz || ss.c.nrows() != ny {
                return Err(Error::DimensionMismatch(format!(
                    "controller maps {} sensors to {} outputs, loop has {nz} and {ny}",
                    ss.b.ncols(),
                    ss.c.nrows()
                )));
            }
            ss
        }
        None => StateSpace {
            a: DMatrix::zeros(0, 0),
            b: DMatrix::zeros(0, nz),
            c: DMatrix::zeros(ny, 0),
            d: DMatrix::zeros(ny, nz),
        },
    };
    let (np, nk) = (p.n_states(), k.n_states());
    let n = np + nk;

    let bd_cp = &bd * &p.c;
    let bd_dp = &bd * &p.d;
    let dp_ck = &p.d * &k.c;

    let mut a = DMatrix::zeros(n, n);
    a.view_mut((0, 0), (np, np)).copy_from(&p.a);
    a.view_mut((0, np), (np, nk)).copy_from(&(&p.b * &k.c));
    a.view_mut((np, 0), (nk, np)).copy_from(&(&k.b * &bd_cp));
    a.view_mut((np, np), (nk, nk))
        .copy_from(&(&k.a + &k.b * &bd * &dp_ck));

    let mut b = DMatrix::zeros(n, ny + nz);
    b.view_mut((0, 0), (np, ny)).copy_from(&p.b);
    b.view_mut((np, 0), (nk, ny)).copy_from(&(&k.b * &bd_dp));
    b.view_mut((np, ny), (nk, nz)).copy_from(&k.b);

    let mut c = DMatrix::zeros(2 * ny + nz, n);
    let mut d = DMatrix::zeros(2 * ny + nz, ny + nz);
    c.view_mut((0, 0), (ny, np)).copy_from(&p.c);
    c.view_mut((0, np), (ny, nk)).copy_from(&dp_ck);
    d.view_mut((0, 0), (ny, ny)).copy_from(&p.d);
    c.view_mut((ny, np), (ny, nk)).copy_from(&k.c);
    c.view_mut((2 * ny, 0), (nz, np)).copy_from(&bd_cp);
    c.view_mut((2 * ny, np), (nz, nk))
        .copy_from(&(&bd * &dp_ck));
    d.view_mut((2 * ny, 0), (nz, ny)).copy_from(&bd_dp);
    d.view_mut((2 * ny, ny), (nz, nz)).fill_with_identity();

    Ok(ClosedLoop {
        system: StateSpace { a, b, c, d },
        n_plant_states: np,
        n_controller_states: nk,
        n_y: ny,
        n_z: nz,
    })
}
