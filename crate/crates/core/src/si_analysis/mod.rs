//! Closed forms for spatially invariant systems on a torus.
//!
//! Subsystems sit on a `M_1 × … × M_γ` periodic lattice and every subsystem
//! `k` compares itself with `k + l` for each offset `l` of a stencil. Spatial
//! Fourier modes then decouple the loop, one scalar (or `d × d`) system per
//! frequency `ξ`.

mod ltsi;
mod zone;

pub use ltsi::{
    estimator_symbol, hex_estimator_template, local_estimator, ltsi_dc_sensitivity, ltsi_eval,
    ltsi_fit, ltsi_verify, si_dc_sensitivity, EstimatorTemplate, LocalEstimator, LtsiController,
    LtsiFit, LtsiTarget, LtsiVerification,
};
pub use zone::{nyquist_clearance, Clearance, ExclusionZone, ZoneGeometry};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sensing_model::{MeasurementMap, SensorSpec};

const GRID_TOL: f64 = 1e-9;

/// Lattice sizes and the sensor offsets seen from one subsystem. Each
/// offset is listed once; `−l` is implied.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SIStencil {
    sizes: Vec<usize>,
    offsets: Vec<Vec<i64>>,
}

impl SIStencil {
    pub fn new(sizes: Vec<usize>, offsets: Vec<Vec<i64>>) -> Result<Self> {
        if sizes.is_empty() || sizes.contains(&0) {
            return Err(Error::InvalidSize(format!(
                "lattice sizes must be positive, got {sizes:?}"
            )));
        }
        if offsets.is_empty() {
            return Err(Error::InvalidArgument(
                "stencil needs at least one offset".into(),
            ));
        }
        for (i, l) in offsets.iter().enumerate() {
            if l.len() != sizes.len() {
                return Err(Error::DimensionMismatch(format!(
                    "offset {l:?} does not match a {}-D lattice",
                    sizes.len()
                )));
            }
            if l.iter().all(|v| *v == 0) {
                return Err(Error::InvalidArgument(
                    "zero offset compares a subsystem with itself".into(),
                ));
            }
            let neg: Vec<i64> = l.iter().map(|v| -v).collect();
            if offsets[..i].iter().any(|o| *o == *l || *o == neg) {
                return Err(Error::InvalidArgument(format!(
                    "offset {l:?} is listed twice (±l count once)"
                )));
            }
        }
        Ok(Self { sizes, offsets })
    }

    /// Nearest-neighbour ring of `m` subsystems.
    pub fn ring(m: usize) -> Result<Self> {
        Self::new(vec![m], vec![vec![1]])
    }

    /// Hexagonal lattice in axial coordinates, six neighbours each.
    pub fn hex(m1: usize, m2: usize) -> Result<Self> {
        Self::new(vec![m1, m2], vec![vec![1, 0], vec![0, 1], vec![1, -1]])
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn offsets(&self) -> &[Vec<i64>] {
        &self.offsets
    }

    pub fn dimension(&self) -> usize {
        self.sizes.len()
    }

    /// Sensors touching one subsystem, `D = 2|𝓛|`.
    pub fn sensors_per_node(&self) -> usize {
        2 * self.offsets.len()
    }

    /// Largest `|l_a|` over the stencil.
    pub fn reach(&self) -> usize {
        self.offsets
            .iter()
            .flatten()
            .map(|v| v.unsigned_abs() as usize)
            .max()
            .unwrap_or(0)
    }

    pub fn n_nodes(&self) -> usize {
        self.sizes.iter().product()
    }

    /// Grid frequency `2π·k_j/M_j` per axis.
    pub fn frequency(&self, k: &[usize]) -> Vec<f64> {
        k.iter()
            .zip(&self.sizes)
            .map(|(k, m)| 2.0 * std::f64::consts::PI * *k as f64 / *m as f64)
            .collect()
    }

    /// Every grid index, last axis fastest.
    pub fn grid(&self) -> Vec<Vec<usize>> {
        let mut out = vec![vec![]];
        for &m in &self.sizes {
            out = out
                .into_iter()
                .flat_map(|p| (0..m).map(move |k| [p.clone(), vec![k]].concat()))
                .collect();
        }
        out
    }

    fn check_on_grid(&self, xi: &[f64]) -> Result<()> {
        if xi.len() != self.sizes.len() {
            return Err(Error::DimensionMismatch(format!(
                "{}-D frequency on a {}-D lattice",
                xi.len(),
                self.sizes.len()
            )));
        }
        for (axis, (x, m)) in xi.iter().zip(&self.sizes).enumerate() {
            let k = x * *m as f64 / (2.0 * std::f64::consts::PI);
            if (k - k.round()).abs() > GRID_TOL * (*m as f64).max(1.0) {
                return Err(Error::OffGrid {
                    axis,
                    value: *x,
                    size: *m,
                });
            }
        }
        Ok(())
    }

    fn half_phases(&self, xi: &[f64]) -> Vec<f64> {
        self.offsets
            .iter()
            .map(|l| 0.5 * l.iter().zip(xi).map(|(a, x)| *a as f64 * x).sum::<f64>())
            .collect()
    }

    /// Node index of lattice coordinates, last axis fastest.
    pub fn node(&self, coords: &[i64]) -> usize {
        let mut idx = 0;
        for (c, m) in coords.iter().zip(&self.sizes) {
            idx = idx * m + c.rem_euclid(*m as i64) as usize;
        }
        idx
    }

    /// The torus's own sensing map: for every node `k` and offset `l`, one
    /// unit sensor reading `y_{k+l} − y_k`.
    pub fn measurement_map(&self) -> Result<MeasurementMap> {
        let mut specs: Vec<SensorSpec> = Vec::new();
        for k in self.grid() {
            let coords: Vec<i64> = k.iter().map(|v| *v as i64).collect();
            let from = self.node(&coords);
            for l in &self.offsets {
                let to: Vec<i64> = coords.iter().zip(l).map(|(c, d)| c + d).collect();
                specs.push(SensorSpec {
                    plus: self.node(&to),
                    plus_weights: vec![1.0],
                    minus: from,
                    minus_weights: vec![1.0],
                });
            }
        }
        MeasurementMap::from_sensors(self.n_nodes(), 1, &specs)
    }
}

/// `2·Σ_l sin²(lᵀξ/2)`, the modal noise gain denominator with each `±l`
/// pair counted once.
pub fn lambda_xi(stencil: &SIStencil, xi: &[f64]) -> Result<f64> {
    stencil.check_on_grid(xi)?;
    Ok(2.0
        * stencil
            .half_phases(xi)
            .iter()
            .map(|h| h.sin().powi(2))
            .sum::<f64>())
}

/// `4·Σ_l sin²(lᵀξ/2)`, the eigenvalue of the torus Laplacian `BᵀB`.
pub fn circulant_lambda(stencil: &SIStencil, xi: &[f64]) -> Result<f64> {
    Ok(2.0 * lambda_xi(stencil, xi)?)
}

/// Circulant eigenvalue over the closed form; the same constant at every
/// nonzero frequency.
pub fn lambda_convention_ratio(stencil: &SIStencil) -> Result<f64> {
    let grid = stencil.grid();
    let k = grid
        .iter()
        .find(|k| k.iter().any(|v| *v != 0))
        .ok_or_else(|| Error::InvalidSize("lattice has a single node".into()))?;
    let xi = stencil.frequency(k);
    Ok(circulant_lambda(stencil, &xi)? / lambda_xi(stencil, &xi)?)
}

/// Lower bound on the number of frequencies whose noise variance is at
/// least `σ²/c²`: `Π_j (2·floor(c·M_j/(√(2D)·γ·ρ'·π)) + 1)`.
pub fn noise_floor_count(c: f64, stencil: &SIStencil, reach: usize) -> Result<u64> {
    if !(c > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "c must be positive, got {c}"
        )));
    }
    if reach == 0 {
        return Err(Error::InvalidArgument("reach must be at least 1".into()));
    }
    let d = stencil.sensors_per_node() as f64;
    let gamma = stencil.dimension() as f64;
    let denom = (2.0 * d).sqrt() * gamma * reach as f64 * std::f64::consts::PI;
    Ok(stencil
        .sizes
        .iter()
        .map(|m| 2 * (c * *m as f64 / denom).floor() as u64 + 1)
        .product())
}

/// Largest modal error a spatially invariant error of relative size `ε`
/// can cause at `ξ`: `iε·Σ sin·cos / Σ sin²` (the `sin²·i/tan` form with the
/// tangent cancelled, so short-range modes give exactly the limit 0).
pub fn phi_bar(stencil: &SIStencil, epsilon: f64, xi: &[f64]) -> Result<Complex64> {
    stencil.check_on_grid(xi)?;
    let h = stencil.half_phases(xi);
    let den: f64 = h.iter().map(|v| v.sin().powi(2)).sum();
    if den <= 1e-24 * h.len() as f64 {
        return Err(Error::UndefinedMode);
    }
    let num: f64 = h.iter().map(|v| v.sin() * v.cos()).sum();
    Ok(Complex64::new(0.0, epsilon * num / den))
}

/// One row of a frequency sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub xi: Vec<f64>,
    pub lambda_xi: f64,
    /// `None` at the zero frequency, where the modal error is undefined.
    pub abs_phi_bar: Option<f64>,
    pub theta: Option<f64>,
    pub crosses_imag_axis: Option<bool>,
}

/// Per-frequency noise gain, modal error and margin-zone crossing.
pub fn si_sweep(
    stencil: &SIStencil,
    epsilon: f64,
    gain_margin: f64,
    phase_margin: f64,
) -> Result<Vec<SweepRow>> {
    use rayon::prelude::*;
    stencil
        .grid()
        .par_iter()
        .map(|k| {
            let xi = stencil.frequency(k);
            let lambda = lambda_xi(stencil, &xi)?;
            let (abs_phi_bar, theta, crosses) = match phi_bar(stencil, epsilon, &xi) {
                Ok(p) => {
                    let zone = ExclusionZone::new(p.norm(), gain_margin, phase_margin)?;
                    (
                        Some(p.norm()),
                        Some(zone.theta()),
                        Some(zone.crosses_imag_axis()),
                    )
                }
                Err(Error::UndefinedMode) => (None, None, None),
                Err(e) => return Err(e),
            };
            Ok(SweepRow {
                xi,
                lambda_xi: lambda,
                abs_phi_bar,
                theta,
                crosses_imag_axis: crosses,
            })
        })
        .collect()
}

/// `xi_1, xi_2, lambda_xi, abs_phi_bar, theta, zone_crosses_imag_axis`;
/// `xi_2` is empty on a 1-D lattice.
pub fn write_sweep_csv<W: std::io::Write>(rows: &[SweepRow], w: W) -> Result<()> {
    let records = rows.iter().map(|r| {
        (
            r.xi[0],
            r.xi.get(1).copied(),
            r.lambda_xi,
            r.abs_phi_bar,
            r.theta,
            r.crosses_imag_axis.map(u8::from),
        )
    });
    crate::export::write_csv(
        w,
        &[
            "xi_1",
            "xi_2",
            "lambda_xi",
            "abs_phi_bar",
            "theta",
            "zone_crosses_imag_axis",
        ],
        records,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{decompose, DEFAULT_RANK_TOL};
    use std::f64::consts::PI;

    #[test]
    fn stencil_validation() {
        assert!(SIStencil::new(vec![10], vec![vec![1], vec![-1]]).is_err());
        assert!(SIStencil::new(vec![10], vec![vec![0]]).is_err());
        assert!(SIStencil::new(vec![10, 10], vec![vec![1]]).is_err());
        let h = SIStencil::hex(6, 6).unwrap();
        assert_eq!(h.sensors_per_node(), 6);
        assert_eq!(h.reach(), 1);
        assert_eq!(h.grid().len(), 36);
    }

    #[test]
    fn lambda_values() {
        let s = SIStencil::ring(8).unwrap();
        assert_eq!(lambda_xi(&s, &[0.0]).unwrap(), 0.0);
        assert!((lambda_xi(&s, &[PI]).unwrap() - 2.0).abs() < 1e-12);
        assert!((circulant_lambda(&s, &[PI]).unwrap() - 4.0).abs() < 1e-12);
        assert!(matches!(
            lambda_xi(&s, &[0.3]),
            Err(Error::OffGrid { axis: 0, .. })
        ));
        let big = SIStencil::ring(10_000).unwrap();
        let xi = 2.0 * PI / 10_000.0;
        let l = lambda_xi(&big, &[xi]).unwrap();
        assert!((l / (2.0 * (PI / 10_000.0).powi(2)) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn closed_form_matches_torus_spectrum_up_to_a_constant() {
        for stencil in [SIStencil::ring(12).unwrap(), SIStencil::hex(5, 4).unwrap()] {
            let map = stencil.measurement_map().unwrap();
            let d = decompose(&map, DEFAULT_RANK_TOL).unwrap();
            let mut from_matrix = d.lambdas();
            from_matrix.sort_by(f64::total_cmp);
            let mut closed: Vec<f64> = stencil
                .grid()
                .iter()
                .map(|k| circulant_lambda(&stencil, &stencil.frequency(k)).unwrap())
                .collect();
            closed.sort_by(f64::total_cmp);
            for (a, b) in from_matrix.iter().zip(&closed) {
                assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
            let ratio = lambda_convention_ratio(&stencil).unwrap();
            assert!((ratio - 2.0).abs() < 1e-12);
            for k in stencil.grid().iter().filter(|k| k.iter().any(|v| *v != 0)) {
                let xi = stencil.frequency(k);
                let r =
                    circulant_lambda(&stencil, &xi).unwrap() / lambda_xi(&stencil, &xi).unwrap();
                if lambda_xi(&stencil, &xi).unwrap() > 1e-12 {
                    assert!((r - ratio).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn noise_floor_count_examples() {
        let s = SIStencil::ring(100).unwrap();
        assert_eq!(noise_floor_count(0.5, &s, 1).unwrap(), 15);
        assert_eq!(noise_floor_count(0.01, &s, 1).unwrap(), 1);
        let mut prev = 0;
        for m in [10, 50, 100, 500, 1000] {
            let w = noise_floor_count(0.3, &SIStencil::ring(m).unwrap(), 1).unwrap();
            assert!(w >= prev);
            prev = w;
        }
    }

    #[test]
    fn noise_floor_count_is_a_lower_bound() {
        for (stencil, c) in [
            (SIStencil::ring(200).unwrap(), 0.3),
            (SIStencil::hex(40, 40).unwrap(), 0.4),
        ] {
            let w = noise_floor_count(c, &stencil, stencil.reach()).unwrap();
            let count = stencil
                .grid()
                .iter()
                .filter(|k| lambda_xi(&stencil, &stencil.frequency(k)).unwrap() <= c * c)
                .count() as u64;
            assert!(count >= w, "{count} < {w}");
        }
    }

    #[test]
    fn phi_bar_values() {
        let s = SIStencil::ring(100).unwrap();
        let xi = 2.0 * PI / 100.0;
        let p = phi_bar(&s, 0.05, &[xi]).unwrap();
        assert_eq!(p.re, 0.0);
        assert!((p.im - 0.05 / (xi / 2.0).tan()).abs() < 1e-12);
        assert!((p.norm() - 1.5914).abs() < 1e-3);
        let s8 = SIStencil::ring(8).unwrap();
        assert!(phi_bar(&s8, 0.05, &[PI]).unwrap().norm() < 1e-15);
        assert!(matches!(
            phi_bar(&s8, 0.05, &[0.0]),
            Err(Error::UndefinedMode)
        ));
        let mut prev = 0.0;
        for m in [10, 20, 50, 100, 1000] {
            let v = phi_bar(&SIStencil::ring(m).unwrap(), 0.05, &[2.0 * PI / m as f64])
                .unwrap()
                .norm();
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn phi_bar_is_imaginary_on_hex_lattice() {
        let s = SIStencil::hex(9, 7).unwrap();
        for k in s.grid().iter().skip(1) {
            let p = phi_bar(&s, 0.025, &s.frequency(k)).unwrap();
            assert_eq!(p.re, 0.0);
        }
    }

    #[test]
    fn sweep_csv_rows() {
        let s = SIStencil::ring(4).unwrap();
        let rows = si_sweep(&s, 0.05, 2.0, PI / 4.0).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows[0].abs_phi_bar.is_none());
        let mut buf = Vec::new();
        write_sweep_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "xi_1,xi_2,lambda_xi,abs_phi_bar,theta,zone_crosses_imag_axis"
        );
        assert_eq!(lines[1], "0.0,,0.0,,,");
    }
}
