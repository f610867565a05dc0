//! Lattice-invariant controllers and edge-sensor estimators for segmented
//! mirrors in axial hex coordinates.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plant_sim::eigenvalues;
use crate::sensing_model::{build_hex_mirror, SegmentGeometry, FORWARD_NEIGHBOURS};

/// `K*(ξ) = k_α + k_β cos ξ₁ + k_γ cos ξ₂ + k_δ cos(ξ₁ − ξ₂)` and the same
/// series for the integrator leakage `A*(ξ)`; each coefficient is `d × d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LtsiController {
    k: [DMatrix<f64>; 4],
    a: [DMatrix<f64>; 4],
    rolloff: Option<f64>,
}

fn cosine_basis(xi: &[f64]) -> Result<[f64; 4]> {
    match xi {
        [x] => Ok([1.0, x.cos(), 0.0, 0.0]),
        [x, y] => Ok([1.0, x.cos(), y.cos(), (x - y).cos()]),
        _ => Err(Error::DimensionMismatch(format!(
            "frequency must have 1 or 2 components, got {}",
            xi.len()
        ))),
    }
}

impl LtsiController {
    pub fn new(k: [DMatrix<f64>; 4], a: [DMatrix<f64>; 4], rolloff: Option<f64>) -> Result<Self> {
        let d = k[0].nrows();
        if k.iter().chain(&a).any(|m| m.nrows() != d || m.ncols() != d) {
            return Err(Error::DimensionMismatch(format!(
                "all coefficients must be {d}x{d}"
            )));
        }
        if let Some(p) = rolloff {
            if !(p > 0.0 && p.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "roll-off pole must be positive, got {p}"
                )));
            }
        }
        Ok(Self { k, a, rolloff })
    }

    /// Same gain and leakage on every channel, no neighbour terms.
    pub fn decentralized(d: usize, k: f64, a: f64, rolloff: Option<f64>) -> Result<Self> {
        let z = DMatrix::zeros(d, d);
        let id = DMatrix::identity(d, d);
        Self::new(
            [&id * k, z.clone(), z.clone(), z.clone()],
            [&id * a, z.clone(), z.clone(), z],
            rolloff,
        )
    }

    pub fn channels(&self) -> usize {
        self.k[0].nrows()
    }

    pub fn gain_coefficients(&self) -> &[DMatrix<f64>; 4] {
        &self.k
    }

    pub fn leakage_coefficients(&self) -> &[DMatrix<f64>; 4] {
        &self.a
    }

    pub fn rolloff(&self) -> Option<f64> {
        self.rolloff
    }
}

/// `(K*(ξ), A*(ξ))`. A 1-D frequency drops the `γ`, `δ` terms, which must
/// then be zero.
pub fn ltsi_eval(ctrl: &LtsiController, xi: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let basis = cosine_basis(xi)?;
    if xi.len() == 1
        && ctrl.k[2..]
            .iter()
            .chain(&ctrl.a[2..])
            .any(|m| m.iter().any(|v| *v != 0.0))
    {
        return Err(Error::InvalidArgument(
            "1-D frequency with nonzero second-axis coefficients".into(),
        ));
    }
    let d = ctrl.channels();
    let mut k = DMatrix::zeros(d, d);
    let mut a = DMatrix::zeros(d, d);
    for (i, w) in basis.iter().enumerate() {
        k += &ctrl.k[i] * *w;
        a += &ctrl.a[i] * *w;
    }
    Ok((k, a))
}

/// Desired per-channel gain and leakage at one grid frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LtsiTarget {
    pub xi: Vec<f64>,
    pub k: Vec<f64>,
    pub a: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LtsiFit {
    pub controller: LtsiController,
    /// RMS misfit of the gain series over the grid.
    pub residual_k: f64,
    /// RMS misfit of the unclamped leakage series.
    pub residual_a: f64,
    /// RMS misfit after lifting `a_α` so the leakage is non-negative.
    pub residual_a_clamped: f64,
    /// Amount added to `a_α` per channel.
    pub clamp_shift: Vec<f64>,
}

/// Least-squares fit of the four-term cosine series, channel by channel,
/// to targets on the full `M₁ × M₂` grid (or a 1-D ring, two terms). Each
/// axis needs at least 4 points for the terms to be separable. Fitted
/// leakage that dips below zero is lifted by a constant so it stays
/// non-negative at every grid frequency.
pub fn ltsi_fit(sizes: &[usize], targets: &[LtsiTarget], rolloff: Option<f64>) -> Result<LtsiFit> {
    if sizes.is_empty() || sizes.len() > 2 {
        return Err(Error::DimensionMismatch(format!(
            "lattice must be 1-D or 2-D, got {}-D",
            sizes.len()
        )));
    }
    if let Some(m) = sizes.iter().find(|m| **m < 4) {
        return Err(Error::Underdetermined(format!(
            "axis with {m} points; the cosine series needs at least 4"
        )));
    }
    let n: usize = sizes.iter().product();
    if targets.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} targets for a grid of {n}",
            targets.len()
        )));
    }
    let d = targets[0].k.len();
    if d == 0
        || targets
            .iter()
            .any(|t| t.k.len() != d || t.a.len() != d || t.xi.len() != sizes.len())
    {
        return Err(Error::DimensionMismatch(
            "targets must share channel count and dimension".into(),
        ));
    }
    let terms = if sizes.len() == 1 { 2 } else { 4 };
    let mut design = DMatrix::zeros(n, terms);
    for (row, t) in targets.iter().enumerate() {
        let b = cosine_basis(&t.xi)?;
        for c in 0..terms {
            design[(row, c)] = b[c];
        }
    }
    let svd = design.clone().svd(true, true);
    let solve = |rhs: DVector<f64>| -> Result<DVector<f64>> {
        svd.solve(&rhs, 1e-12).map_err(|e| Error::Numeric {
            message: e.to_string(),
            condition: f64::NAN,
        })
    };
    let rms = |fit: &DVector<f64>, rhs: &DVector<f64>| {
        ((&design * fit - rhs).norm_squared() / n as f64).sqrt()
    };

    let mut k = std::array::from_fn(|_| DMatrix::zeros(d, d));
    let mut a = std::array::from_fn(|_| DMatrix::<f64>::zeros(d, d));
    let (mut rk, mut ra, mut rc) = (0.0, 0.0, 0.0);
    let mut clamp_shift = vec![0.0; d];
    for ch in 0..d {
        let tk = DVector::from_iterator(n, targets.iter().map(|t| t.k[ch]));
        let ta = DVector::from_iterator(n, targets.iter().map(|t| t.a[ch]));
        let ck = solve(tk.clone())?;
        let mut ca = solve(ta.clone())?;
        rk += rms(&ck, &tk).powi(2);
        ra += rms(&ca, &ta).powi(2);
        let lowest = (&design * &ca).min();
        if lowest < 0.0 {
            clamp_shift[ch] = -lowest;
            ca[0] -= lowest;
        }
        rc += rms(&ca, &ta).powi(2);
        for c in 0..terms {
            k[c][(ch, ch)] = ck[c];
            a[c][(ch, ch)] = ca[c];
        }
    }
    let df = d as f64;
    Ok(LtsiFit {
        controller: LtsiController::new(k, a, rolloff)?,
        residual_k: (rk / df).sqrt(),
        residual_a: (ra / df).sqrt(),
        residual_a_clamped: (rc / df).sqrt(),
        clamp_shift,
    })
}

/// Least-squares estimate of one segment's outputs from its own edge
/// sensors, treating the neighbours as fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalEstimator {
    pub segment: usize,
    pub sensors: Vec<usize>,
    /// Sensor readings per unit output of `segment` (`n_sensors × 3`).
    pub local: DMatrix<f64>,
    /// Pseudo-inverse of `local`.
    pub gain: DMatrix<f64>,
}

impl LocalEstimator {
    /// Estimate from the full sensor vector.
    pub fn estimate(&self, z: &DVector<f64>) -> DVector<f64> {
        let zl = DVector::from_iterator(self.sensors.len(), self.sensors.iter().map(|s| z[*s]));
        &self.gain * zl
    }
}

fn own_weights(geometry: &SegmentGeometry, sensor: usize, k: usize) -> [f64; 3] {
    let s = &geometry.sensors[sensor];
    if s.plus == k {
        s.plus_weights
    } else if s.minus == k {
        s.minus_weights.map(|w| -w)
    } else {
        [0.0; 3]
    }
}

pub fn local_estimator(geometry: &SegmentGeometry, k: usize) -> Result<LocalEstimator> {
    if k >= geometry.n_segments() {
        return Err(Error::InvalidArgument(format!("segment {k} out of range")));
    }
    let sensors = geometry.sensors_of(k);
    if sensors.len() < 3 {
        return Err(Error::RankDeficient(format!(
            "segment {k} has {} sensors, 3 are needed",
            sensors.len()
        )));
    }
    let local = DMatrix::from_fn(sensors.len(), 3, |i, j| {
        own_weights(geometry, sensors[i], k)[j]
    });
    let svd = local.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if svd.singular_values.min() <= 1e-10 * smax {
        return Err(Error::RankDeficient(format!(
            "sensors of segment {k} do not determine its three outputs"
        )));
    }
    let gain = svd
        .pseudo_inverse(1e-10 * smax)
        .map_err(|e| Error::Numeric {
            message: e.to_string(),
            condition: f64::NAN,
        })?;
    Ok(LocalEstimator {
        segment: k,
        sensors,
        local,
        gain,
    })
}

/// Coefficients of the estimator symbol `H(ξ) = Σ_o H_o e^{i oᵀξ}`, one
/// `3 × 3` block per axial offset (the segment itself and its six
/// neighbours).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorTemplate {
    pub blocks: Vec<([i32; 2], DMatrix<f64>)>,
}

/// Template of an interior segment. The estimator gain is built from the
/// nominal sensors; the readings it is applied to are `B + βε|B|`
/// (`beta_epsilon = βε`, zero for the nominal symbol).
pub fn hex_estimator_template(
    edge_length: f64,
    sensor_offset: f64,
    beta_epsilon: f64,
) -> Result<EstimatorTemplate> {
    let mirror = build_hex_mirror(2, 0, edge_length, sensor_offset)?;
    let g = &mirror.geometry;
    let centre = g
        .find([0, 0])
        .ok_or_else(|| Error::InvalidGeometry("no central segment".into()))?;
    let est = local_estimator(g, centre)?;
    let mut offsets = vec![[0, 0]];
    for [q, r] in FORWARD_NEIGHBOURS {
        offsets.push([q, r]);
        offsets.push([-q, -r]);
    }
    let mut blocks = Vec::with_capacity(offsets.len());
    for o in offsets {
        let seg = g
            .find(o)
            .ok_or_else(|| Error::InvalidGeometry(format!("neighbour {o:?} missing")))?;
        let readings = DMatrix::from_fn(est.sensors.len(), 3, |i, j| {
            let w = own_weights(g, est.sensors[i], seg)[j];
            w + beta_epsilon * w.abs()
        });
        blocks.push((o, &est.gain * readings));
    }
    Ok(EstimatorTemplate { blocks })
}

pub fn estimator_symbol(template: &EstimatorTemplate, xi: &[f64]) -> Result<DMatrix<Complex64>> {
    let [x1, x2] = match xi {
        [a, b] => [*a, *b],
        _ => {
            return Err(Error::DimensionMismatch(
                "hex symbol needs a 2-D frequency".into(),
            ))
        }
    };
    let mut h = DMatrix::zeros(3, 3);
    for (o, block) in &template.blocks {
        let phase = Complex64::from_polar(1.0, o[0] as f64 * x1 + o[1] as f64 * x2);
        h += block.map(|v| Complex64::new(v, 0.0)) * phase;
    }
    Ok(h)
}

/// Closed-loop poles per frequency for a static plant `y = u + d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LtsiVerification {
    pub xi: Vec<Vec<f64>>,
    /// Largest real part over the nominal and every uncertain symbol.
    pub max_real: Vec<f64>,
    pub worst: f64,
    pub stable: bool,
}

fn complex_loop(
    ctrl: &LtsiController,
    h: &DMatrix<Complex64>,
    xi: &[f64],
) -> Result<DMatrix<Complex64>> {
    let (k, a) = ltsi_eval(ctrl, xi)?;
    let d = ctrl.channels();
    if h.nrows() != d || h.ncols() != d {
        return Err(Error::DimensionMismatch(format!(
            "symbol is {}x{}, controller has {d} channels",
            h.nrows(),
            h.ncols()
        )));
    }
    let kc = k.map(|v| Complex64::new(v, 0.0));
    let ac = a.map(|v| Complex64::new(v, 0.0));
    let kh = &kc * h;
    Ok(match ctrl.rolloff {
        None => -(ac + kh),
        Some(p) => {
            let id = DMatrix::<Complex64>::identity(d, d);
            let pc = Complex64::new(p, 0.0);
            let mut m = DMatrix::zeros(3 * d, 3 * d);
            m.view_mut((0, 0), (d, d)).copy_from(&(-ac));
            m.view_mut((0, 2 * d), (d, d)).copy_from(&(-kh));
            for blk in 1..3 {
                m.view_mut((blk * d, (blk - 1) * d), (d, d))
                    .copy_from(&(&id * pc));
                m.view_mut((blk * d, blk * d), (d, d))
                    .copy_from(&(&id * -pc));
            }
            m
        }
    })
}

/// Largest real part among the eigenvalues of a complex matrix, through
/// the real form `[[X, −Y], [Y, X]]` whose spectrum is `eig ∪ conj(eig)`.
fn max_real_eigenvalue(m: &DMatrix<Complex64>) -> Result<f64> {
    let n = m.nrows();
    let mut r = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let v = m[(i, j)];
            r[(i, j)] = v.re;
            r[(i + n, j + n)] = v.re;
            r[(i, j + n)] = -v.im;
            r[(i + n, j)] = v.im;
        }
    }
    Ok(eigenvalues(&r)?
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Checks every frequency in `grid` against the nominal symbol and each
/// uncertain one.
pub fn ltsi_verify(
    ctrl: &LtsiController,
    symbols: &[EstimatorTemplate],
    grid: &[Vec<f64>],
) -> Result<LtsiVerification> {
    use rayon::prelude::*;
    if symbols.is_empty() {
        return Err(Error::InvalidArgument(
            "no estimator symbols to check".into(),
        ));
    }
    let max_real: Vec<f64> = grid
        .par_iter()
        .map(|xi| {
            let mut worst = f64::NEG_INFINITY;
            for t in symbols {
                let h = estimator_symbol(t, xi)?;
                worst = worst.max(max_real_eigenvalue(&complex_loop(ctrl, &h, xi)?)?);
            }
            Ok(worst)
        })
        .collect::<Result<_>>()?;
    let worst = max_real.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(LtsiVerification {
        xi: grid.to_vec(),
        max_real,
        worst,
        stable: worst < 0.0,
    })
}

/// `[I + K_ξ(0)]⁻¹` for a finite loop gain at DC.
pub fn si_dc_sensitivity(loop_dc: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
    let n = loop_dc.nrows();
    if loop_dc.ncols() != n {
        return Err(Error::DimensionMismatch(
            "DC loop gain must be square".into(),
        ));
    }
    (DMatrix::identity(n, n) + loop_dc)
        .try_inverse()
        .ok_or_else(|| Error::Singular("I + K(0) is not invertible".into()))
}

/// DC sensitivity of the lattice loop at `ξ`, `I − (A + KH)⁻¹KH`. This is
/// `[I + A⁻¹KH]⁻¹` when the leakage is invertible and stays finite for a
/// pure integrator, where it is zero.
pub fn ltsi_dc_sensitivity(
    ctrl: &LtsiController,
    h: &DMatrix<Complex64>,
    xi: &[f64],
) -> Result<DMatrix<Complex64>> {
    let (k, a) = ltsi_eval(ctrl, xi)?;
    let d = ctrl.channels();
    let kh = k.map(|v| Complex64::new(v, 0.0)) * h;
    let m = a.map(|v| Complex64::new(v, 0.0)) + &kh;
    let inv = m
        .try_inverse()
        .ok_or_else(|| Error::Singular("A + KH is not invertible at this frequency".into()))?;
    Ok(DMatrix::identity(d, d) - inv * kh)
}
