//! Static offsets and spatially correlated low-frequency wind.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sensing_model::SpatialStructure;

pub(crate) const STREAM_OFFSETS: u64 = 0;
pub(crate) const STREAM_WIND: u64 = 1;
pub(crate) const STREAM_NOISE: u64 = 2;

/// Diagonal jitter added when the correlation kernel is numerically singular.
pub const KERNEL_JITTER: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StaticOffsets {
    None,
    /// Independent `N(0, scale²)` per output, drawn once.
    Gaussian {
        scale: f64,
    },
    /// Given offsets, one per output.
    Fixed {
        values: Vec<f64>,
    },
}

/// First-order low-pass in time, `exp(−dist/ℓ_c)` correlation in space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindModel {
    /// In units of subsystem spacing.
    pub correlation_length: f64,
    pub cutoff_hz: f64,
    /// Stationary RMS per output.
    pub rms: f64,
}

impl Default for WindModel {
    fn default() -> Self {
        Self {
            correlation_length: 5.0,
            cutoff_hz: 0.1,
            rms: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceModel {
    pub offsets: StaticOffsets,
    pub wind: Option<WindModel>,
}

impl Default for DisturbanceModel {
    fn default() -> Self {
        Self {
            offsets: StaticOffsets::Gaussian { scale: 1e-3 },
            wind: Some(WindModel::default()),
        }
    }
}

impl DisturbanceModel {
    pub fn none() -> Self {
        Self {
            offsets: StaticOffsets::None,
            wind: None,
        }
    }

    pub(crate) fn draw_offsets(&self, n_outputs: usize, seed: u64) -> Result<DVector<f64>> {
        match &self.offsets {
            StaticOffsets::None => Ok(DVector::zeros(n_outputs)),
            StaticOffsets::Gaussian { scale } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(STREAM_OFFSETS);
                Ok(DVector::from_fn(n_outputs, |_, _| {
                    scale * rng.sample::<f64, _>(StandardNormal)
                }))
            }
            StaticOffsets::Fixed { values } => {
                if values.len() != n_outputs {
                    return Err(Error::DimensionMismatch(format!(
                        "{} fixed offsets for {n_outputs} outputs",
                        values.len()
                    )));
                }
                Ok(DVector::from_column_slice(values))
            }
        }
    }
}

/// Lower Cholesky factor of `exp(−dist/ℓ_c)`; the flag reports whether the
/// diagonal jitter was needed.
pub fn correlation_factor(
    structure: &SpatialStructure,
    correlation_length: f64,
) -> Result<(DMatrix<f64>, bool)> {
    if !(correlation_length > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "correlation length must be positive, got {correlation_length}"
        )));
    }
    let m = structure.len();
    let kernel = DMatrix::from_fn(m, m, |i, j| {
        (-structure.distance(i, j) / correlation_length).exp()
    });
    if let Some(ch) = kernel.clone().cholesky() {
        return Ok((ch.unpack(), false));
    }
    let jittered = kernel + DMatrix::identity(m, m) * KERNEL_JITTER;
    match jittered.cholesky() {
        Some(ch) => Ok((ch.unpack(), true)),
        None => Err(Error::Numeric {
            message: "wind correlation kernel is not positive definite even after jitter".into(),
            condition: f64::INFINITY,
        }),
    }
}

/// Step-by-step wind generator: an exact AR(1) discretization of the
/// low-pass, started from its stationary distribution. Each of the `N`
/// outputs of a subsystem sees its own independent field.
#[derive(Debug, Clone)]
pub struct WindGenerator {
    factor: DMatrix<f64>,
    block_size: usize,
    decay: f64,
    drive: f64,
    rms: f64,
    state: DVector<f64>,
    rng: ChaCha8Rng,
    regularized: bool,
}

impl WindGenerator {
    pub fn new(
        structure: &SpatialStructure,
        block_size: usize,
        model: &WindModel,
        dt: f64,
        seed: u64,
    ) -> Result<Self> {
        if !(model.cutoff_hz > 0.0 && model.rms >= 0.0 && dt > 0.0) {
            return Err(Error::InvalidArgument(
                "wind needs cutoff > 0, rms >= 0 and dt > 0".into(),
            ));
        }
        let (factor, regularized) = correlation_factor(structure, model.correlation_length)?;
        let decay = (-2.0 * std::f64::consts::PI * model.cutoff_hz * dt).exp();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(STREAM_WIND);
        let mut g = Self {
            factor,
            block_size,
            decay,
            drive: (1.0 - decay * decay).sqrt(),
            rms: model.rms,
            state: DVector::zeros(structure.len() * block_size),
            rng,
            regularized,
        };
        g.state = g.innovation();
        Ok(g)
    }

    fn innovation(&mut self) -> DVector<f64> {
        let m = self.factor.nrows();
        let n = self.block_size;
        let mut out = DVector::zeros(m * n);
        for i in 0..n {
            let xi = DVector::from_fn(m, |_, _| self.rng.sample::<f64, _>(StandardNormal));
            let field = &self.factor * xi;
            for k in 0..m {
                out[k * n + i] = self.rms * field[k];
            }
        }
        out
    }

    pub fn regularized(&self) -> bool {
        self.regularized
    }

    pub fn current(&self) -> &DVector<f64> {
        &self.state
    }

    pub fn advance(&mut self) {
        let innovation = self.innovation();
        self.state *= self.decay;
        self.state.axpy(self.drive, &innovation, 1.0);
    }
}

/// Wind series, one column per subsystem.
#[derive(Debug, Clone)]
pub struct WindSeries {
    pub dt: f64,
    pub values: DMatrix<f64>,
    pub regularized: bool,
}

/// `round(T/dt)` samples of a scalar wind field over the subsystems.
pub fn wind_field(
    structure: &SpatialStructure,
    correlation_length: f64,
    cutoff_hz: f64,
    rms: f64,
    dt: f64,
    horizon: f64,
    seed: u64,
) -> Result<WindSeries> {
    let model = WindModel {
        correlation_length,
        cutoff_hz,
        rms,
    };
    let mut gen = WindGenerator::new(structure, 1, &model, dt, seed)?;
    let steps = (horizon / dt).round() as usize;
    let mut values = DMatrix::zeros(steps, structure.len());
    for t in 0..steps {
        values.row_mut(t).copy_from(&gen.current().transpose());
        gen.advance();
    }
    Ok(WindSeries {
        dt,
        values,
        regularized: gen.regularized(),
    })
}
