//! Errors in the measurement model and how they feed back into the modes.
//!
//! A sensing error `Δ` (same shape as `B`) turns the true loop into one with
//! `B + Δ` in place of `B`. Seen in modal coordinates this is the operator
//! `Φ = Λ^{-1/2}·Uᵀ·Δ·Q`; a diagonal entry `Φ_bb < −1` flips the sign of the
//! feedback on mode `b` and the loop cannot be stable.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controller::ModalController;
use crate::error::{Error, Result};
use crate::plant_sim::{assemble_closed_loop, PlantModel};
use crate::sensing_model::MeasurementMap;
use crate::spectral::ModalDecomposition;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UncertaintyMode {
    /// Every entry of `Δ` varies independently within its bound.
    IndependentEntries,
    /// The same error pattern repeats on every translate of the lattice.
    SpatiallyInvariant,
    /// Rows of `Δ` additionally sum to zero, so the perturbed map still
    /// measures relative quantities.
    SymmetryPreserving,
}

/// `|Δ_kl| ≤ ε·|B_kl|` entrywise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintySpec {
    pub epsilon: f64,
    pub mode: UncertaintyMode,
}

impl UncertaintySpec {
    pub fn new(epsilon: f64, mode: UncertaintyMode) -> Result<Self> {
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "relative bound must be finite and nonnegative, got {epsilon}"
            )));
        }
        Ok(Self { epsilon, mode })
    }

    /// Whether `delta` lies in the admissible set. Spatial invariance is not
    /// checked here: a generic map carries no lattice to translate along.
    pub fn admits(&self, map: &MeasurementMap, delta: &DMatrix<f64>) -> bool {
        let b = map.matrix();
        if delta.shape() != b.shape() {
            return false;
        }
        let slack = 1e-12 * b.amax().max(1.0);
        let bounded = delta
            .iter()
            .zip(b.iter())
            .all(|(d, b)| d.abs() <= self.epsilon * b.abs() + slack);
        if !bounded {
            return false;
        }
        match self.mode {
            UncertaintyMode::SymmetryPreserving => symmetry_residual(delta).amax() <= slack,
            _ => true,
        }
    }

    /// Random admissible error. Independent entries are uniform on
    /// `[−ε|B_kl|, ε|B_kl|]`; the symmetry-preserving draw scales each row of
    /// `B` by a uniform factor in `[−ε, ε]`.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        map: &MeasurementMap,
        rng: &mut R,
    ) -> Result<DMatrix<f64>> {
        let b = map.matrix();
        let eps = self.epsilon;
        match self.mode {
            UncertaintyMode::IndependentEntries => Ok(b.map(|v| {
                if v == 0.0 || eps == 0.0 {
                    0.0
                } else {
                    rng.random_range(-eps..=eps) * v.abs()
                }
            })),
            UncertaintyMode::SymmetryPreserving => {
                let mut delta = b.clone();
                for mut row in delta.row_iter_mut() {
                    let c = if eps == 0.0 {
                        0.0
                    } else {
                        rng.random_range(-eps..=eps)
                    };
                    row.scale_mut(c);
                }
                Ok(delta)
            }
            UncertaintyMode::SpatiallyInvariant => Err(Error::UnsupportedStructure(
                "spatially invariant errors are sampled on the lattice symbol, not on a finite map"
                    .into(),
            )),
        }
    }
}

fn check_observable(decomp: &ModalDecomposition, b: usize) -> Result<()> {
    if b < decomp.n0() {
        Ok(())
    } else if b < decomp.n_modes() {
        Err(Error::InfiniteSensitivity(b))
    } else {
        Err(Error::InvalidMode {
            mode: b,
            n0: decomp.n0(),
        })
    }
}

/// `f64::signum` with the convention `sign(0) = +1`.
fn sign(x: f64) -> f64 {
    if x < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Admissible error that drives `Φ_bb` as negative as possible:
/// `Δ_kl = −sign(U_kb)·sign(Q_lb)·ε·|B_kl|`. Modes are 0-based.
pub fn worst_case_delta(
    map: &MeasurementMap,
    decomp: &ModalDecomposition,
    b: usize,
    epsilon: f64,
) -> Result<DMatrix<f64>> {
    if b >= decomp.n0() {
        return Err(Error::InvalidMode {
            mode: b,
            n0: decomp.n0(),
        });
    }
    if !(epsilon >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "relative bound must be nonnegative, got {epsilon}"
        )));
    }
    let bm = map.matrix();
    let (u, q) = (decomp.u(), decomp.q());
    Ok(DMatrix::from_fn(bm.nrows(), bm.ncols(), |k, l| {
        let v = bm[(k, l)];
        if v == 0.0 {
            0.0
        } else {
            -sign(u[(k, b)]) * sign(q[(l, b)]) * epsilon * v.abs()
        }
    }))
}

/// `Φ = Λ^{-1/2}·Uᵀ·Δ·Q` on the observable rows; rows of unobservable modes
/// are zero.
pub fn phi_matrix(decomp: &ModalDecomposition, delta: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (nz, ny) = decomp.u().shape();
    if delta.shape() != (nz, ny) {
        return Err(Error::DimensionMismatch(format!(
            "error matrix is {}x{}, measurement map is {nz}x{ny}",
            delta.nrows(),
            delta.ncols()
        )));
    }
    let n0 = decomp.n0();
    let top = decomp.u().columns(0, n0).transpose() * delta * decomp.q();
    let mut phi = DMatrix::zeros(ny, ny);
    for k in 0..n0 {
        phi.row_mut(k).copy_from(&(top.row(k) / decomp.sigma()[k]));
    }
    Ok(phi)
}

/// `Φ` through the other factorization, `Λ⁻¹·Qᵀ·Bᵀ·Δ·Q`, for cross-checks.
pub fn phi_matrix_via_laplacian(
    map: &MeasurementMap,
    decomp: &ModalDecomposition,
    delta: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    if delta.shape() != map.matrix().shape() {
        return Err(Error::DimensionMismatch(
            "error matrix and measurement map differ in shape".into(),
        ));
    }
    let n0 = decomp.n0();
    let ny = decomp.n_modes();
    let top = decomp.q().columns(0, n0).transpose() * map.matrix().transpose() * delta * decomp.q();
    let mut phi = DMatrix::zeros(ny, ny);
    for k in 0..n0 {
        phi.row_mut(k).copy_from(&(top.row(k) / decomp.lambda(k)));
    }
    Ok(phi)
}

/// Closed form of `Φ_bb` under [`worst_case_delta`]:
/// `−(ε/√λ_b)·Σ_kl |B_kl|·|U_kb|·|Q_lb|`.
pub fn phi_b_value(
    map: &MeasurementMap,
    decomp: &ModalDecomposition,
    b: usize,
    epsilon: f64,
) -> Result<f64> {
    check_observable(decomp, b)?;
    let bm = map.matrix();
    let (u, q) = (decomp.u(), decomp.q());
    let mut sum = 0.0;
    for l in 0..bm.ncols() {
        let ql = q[(l, b)].abs();
        for k in 0..bm.nrows() {
            sum += bm[(k, l)].abs() * u[(k, b)].abs() * ql;
        }
    }
    Ok(-epsilon / decomp.sigma()[b] * sum)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhiSweepRow {
    pub mode: usize,
    pub lambda: f64,
    pub phi: f64,
}

/// `φ_b` for every observable mode.
pub fn phi_sweep(
    map: &MeasurementMap,
    decomp: &ModalDecomposition,
    epsilon: f64,
) -> Result<Vec<PhiSweepRow>> {
    (0..decomp.n0())
        .into_par_iter()
        .map(|b| {
            Ok(PhiSweepRow {
                mode: b,
                lambda: decomp.lambda(b),
                phi: phi_b_value(map, decomp, b, epsilon)?,
            })
        })
        .collect()
}

/// `b, lambda_b, phi_b` with `b` counted from 1.
pub fn write_phi_sweep_csv<W: std::io::Write>(rows: &[PhiSweepRow], w: W) -> Result<()> {
    crate::export::write_csv(
        w,
        &["b", "lambda_b", "phi_b"],
        rows.iter().map(|r| (r.mode + 1, r.lambda, r.phi)),
    )
}

/// How much of row `b` of `Φ` sits on the diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhiDominance {
    pub diagonal: f64,
    pub off_diagonal_row_sum: f64,
    pub off_diagonal_col_sum: f64,
}

pub fn phi_dominance(phi: &DMatrix<f64>, b: usize) -> PhiDominance {
    let row: f64 = (0..phi.ncols())
        .filter(|&j| j != b)
        .map(|j| phi[(b, j)].abs())
        .sum();
    let col: f64 = (0..phi.nrows())
        .filter(|&i| i != b)
        .map(|i| phi[(i, b)].abs())
        .sum();
    PhiDominance {
        diagonal: phi[(b, b)],
        off_diagonal_row_sum: row,
        off_diagonal_col_sum: col,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InstabilityVerdict {
    NotRobustlyStable,
    /// The test says nothing; this is not a robustness certificate.
    Inconclusive,
}

/// Instability certificate: with `ε_b` bounding every entry of the inverse
/// loop gain, `ε_b < 1/N_0` and `|φ_b| > 1 + N_0·ε_b` rule out robust
/// stability.
pub fn instability_check(eps_b: f64, n0: usize, phi_b: f64) -> InstabilityVerdict {
    let n = n0 as f64;
    if eps_b < 1.0 / n && phi_b.abs() > 1.0 + n * eps_b {
        InstabilityVerdict::NotRobustlyStable
    } else {
        InstabilityVerdict::Inconclusive
    }
}

/// Row sums `Σ_l Δ_kl`; zero iff the perturbed map is still relative.
pub fn symmetry_residual(delta: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(delta.nrows(), delta.row_iter().map(|r| r.sum()))
}

/// Poles of the loop whose true sensing map is `B + Δ` while the controller
/// was designed on `B`, sorted by decreasing real part.
pub fn closed_loop_poles(
    plant: &PlantModel,
    controller: &ModalController,
    map: &MeasurementMap,
    delta: &DMatrix<f64>,
) -> Result<Vec<num_complex::Complex64>> {
    assemble_closed_loop(plant, Some(controller), map, Some(delta))?.poles()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensing_model::{build_chain, build_hex_mirror};
    use crate::spectral::{decompose, DEFAULT_RANK_TOL};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn chain(m: usize) -> (MeasurementMap, ModalDecomposition) {
        let (_, map) = build_chain(m).unwrap();
        let d = decompose(&map, DEFAULT_RANK_TOL).unwrap();
        (map, d)
    }

    #[test]
    fn zero_epsilon_gives_zero_error() {
        let (map, d) = chain(3);
        let delta = worst_case_delta(&map, &d, 1, 0.0).unwrap();
        assert_eq!(delta.amax(), 0.0);
        assert_eq!(phi_matrix(&d, &delta).unwrap().amax(), 0.0);
        assert_eq!(phi_b_value(&map, &d, 1, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn chain_three_closed_form_matches_phi() {
        let (map, d) = chain(3);
        let b = 1;
        assert!((d.lambda(b) - 1.0).abs() < 1e-12);
        let delta = worst_case_delta(&map, &d, b, 0.1).unwrap();
        let phi = phi_matrix(&d, &delta).unwrap();
        let direct: f64 = {
            let (u, q, bm) = (d.u(), d.q(), map.matrix());
            let mut s = 0.0;
            for k in 0..bm.nrows() {
                for l in 0..bm.ncols() {
                    s += bm[(k, l)].abs() * u[(k, b)].abs() * q[(l, b)].abs();
                }
            }
            -0.1 * s
        };
        assert!((phi[(b, b)] - direct).abs() < 1e-10);
        assert!((phi_b_value(&map, &d, b, 0.1).unwrap() - phi[(b, b)]).abs() < 1e-10);
        assert!(phi[(b, b)] < 0.0);
    }

    #[test]
    fn two_routes_to_phi_agree() {
        let mirror = build_hex_mirror(3, 0, 0.7, 0.25).unwrap();
        let d = decompose(&mirror.map, DEFAULT_RANK_TOL).unwrap();
        let delta = worst_case_delta(&mirror.map, &d, d.n0() - 1, 0.01).unwrap();
        let a = phi_matrix(&d, &delta).unwrap();
        let b = phi_matrix_via_laplacian(&mirror.map, &d, &delta).unwrap();
        assert!((a - b).amax() < 1e-9);
    }

    #[test]
    fn sign_flip_leaves_phi_bb_unchanged() {
        let (map, d) = chain(6);
        let flipped = d.with_flipped_mode(2);
        let a = phi_b_value(&map, &d, 2, 0.05).unwrap();
        let b = phi_b_value(&map, &flipped, 2, 0.05).unwrap();
        assert!((a - b).abs() < 1e-14);
        let da = worst_case_delta(&map, &d, 2, 0.05).unwrap();
        let db = worst_case_delta(&map, &flipped, 2, 0.05).unwrap();
        let pa = phi_matrix(&d, &da).unwrap()[(2, 2)];
        let pb = phi_matrix(&flipped, &db).unwrap()[(2, 2)];
        assert!((pa - pb).abs() < 1e-12);
    }

    #[test]
    fn gain_error_is_benign() {
        let (map, d) = chain(7);
        let phi = phi_matrix(&d, &(map.matrix() * 0.03)).unwrap();
        for i in 0..d.n_modes() {
            for j in 0..d.n_modes() {
                let want = if i == j && i < d.n0() { 0.03 } else { 0.0 };
                assert!((phi[(i, j)] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn worst_case_is_maximal_among_random_errors() {
        let mirror = build_hex_mirror(3, 0, 0.7, 0.25).unwrap();
        let d = decompose(&mirror.map, DEFAULT_RANK_TOL).unwrap();
        let spec = UncertaintySpec::new(0.01, UncertaintyMode::IndependentEntries).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for b in [0, d.n0() / 2, d.n0() - 1] {
            let worst = phi_b_value(&mirror.map, &d, b, 0.01).unwrap();
            assert!(spec.admits(
                &mirror.map,
                &worst_case_delta(&mirror.map, &d, b, 0.01).unwrap()
            ));
            for _ in 0..100 {
                let delta = spec.sample(&mirror.map, &mut rng).unwrap();
                assert!(spec.admits(&mirror.map, &delta));
                assert!(phi_matrix(&d, &delta).unwrap()[(b, b)] >= worst - 1e-12);
            }
        }
    }

    #[test]
    fn weak_modes_are_more_sensitive() {
        let mirror = build_hex_mirror(5, 0, 0.7, 0.25).unwrap();
        let d = decompose(&mirror.map, DEFAULT_RANK_TOL).unwrap();
        let first = phi_b_value(&mirror.map, &d, 0, 0.01).unwrap();
        let last = phi_b_value(&mirror.map, &d, d.n0() - 1, 0.01).unwrap();
        assert!(last < 0.0 && first < 0.0);
        assert!(last.abs() >= first.abs());
    }

    #[test]
    fn mode_errors() {
        let (map, d) = chain(4);
        assert!(matches!(
            phi_b_value(&map, &d, 3, 0.1),
            Err(Error::InfiniteSensitivity(3))
        ));
        assert!(matches!(
            phi_b_value(&map, &d, 9, 0.1),
            Err(Error::InvalidMode { .. })
        ));
        assert!(matches!(
            worst_case_delta(&map, &d, 3, 0.1),
            Err(Error::InvalidMode { .. })
        ));
        assert!(phi_matrix(&d, &DMatrix::zeros(2, 4)).is_err());
    }

    #[test]
    fn instability_check_gates() {
        assert_eq!(instability_check(0.1, 2, -1.5), InstabilityVerdict::NotRobustlyStable);
        assert_eq!(instability_check(0.1, 2, -0.5), InstabilityVerdict::Inconclusive);
        for phi in [-100.0, -2.0, 5.0] {
            assert_eq!(instability_check(0.15, 10, phi), InstabilityVerdict::Inconclusive);
        }
    }

    #[test]
    fn symmetry_residuals() {
        let (map, d) = chain(3);
        assert!(symmetry_residual(&(map.matrix() * 0.1)).amax() < 1e-15);
        assert_eq!(symmetry_residual(&DMatrix::zeros(2, 3)).amax(), 0.0);
        let delta = worst_case_delta(&map, &d, 1, 0.1).unwrap();
        assert!(symmetry_residual(&delta).amax() > 1e-3);
        let sym = UncertaintySpec::new(0.1, UncertaintyMode::SymmetryPreserving).unwrap();
        assert!(!sym.admits(&map, &delta));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(sym.admits(&map, &sym.sample(&map, &mut rng).unwrap()));
    }

    #[test]
    fn sweep_csv() {
        let (map, d) = chain(4);
        let rows = phi_sweep(&map, &d, 0.01).unwrap();
        assert_eq!(rows.len(), 3);
        let mut buf = Vec::new();
        write_phi_sweep_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("b,lambda_b,phi_b\n1,"));
    }

    #[test]
    fn sign_flip_shows_up_as_an_unstable_pole() {
        let map = build_hex_mirror(3, 0, 1.0, 0.25).unwrap().map;
        let d = decompose(&map, DEFAULT_RANK_TOL).unwrap();
        let b = d.n0() - 1;
        let eps = 2.0 / phi_b_value(&map, &d, b, 1.0).unwrap().abs();
        assert!((phi_b_value(&map, &d, b, eps).unwrap() + 2.0).abs() < 1e-12);
        let plant = PlantModel::Static { gain: 1.0 };
        let ctrl = ModalController::uniform(&d, 2.0, None).unwrap();
        let nominal = closed_loop_poles(
            &plant,
            &ctrl,
            &map,
            &DMatrix::zeros(map.n_sensors(), map.n_outputs()),
        )
        .unwrap();
        assert!(nominal[0].re < 0.0);
        let bad = worst_case_delta(&map, &d, b, eps).unwrap();
        let poles = closed_loop_poles(&plant, &ctrl, &map, &bad).unwrap();
        assert!(poles[0].re > 0.0, "{:?}", poles[0]);
    }
}
