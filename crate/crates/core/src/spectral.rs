//! Modal decomposition of a measurement map and what it implies for noise.
//!
//! The singular value decomposition `B = U·diag(σ)·Qᵀ` gives the modal basis
//! `Q` (eigenvectors of `L = BᵀB`) and the observability spectrum
//! `λ_k = σ_k²`. Sensor noise of variance `σ_n²` reaches mode `k` with
//! variance `σ_n²/λ_k`, so weakly observable modes are noise-dominated.

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sensing_model::{MeasurementMap, SpatialStructure};

/// Default relative threshold separating zero from nonzero singular values.
pub const DEFAULT_RANK_TOL: f64 = 1e-9;

/// `B = U·diag(σ)·Qᵀ`, singular values in descending order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModalDecomposition {
    u: DMatrix<f64>,
    q: DMatrix<f64>,
    sigma: DVector<f64>,
    n0: usize,
    rank_tol: f64,
}

impl ModalDecomposition {
    /// Left factor, `N_z × N_y`. Columns of observable modes are
    /// orthonormal; when `N_z < N_y` the trailing columns cannot be.
    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }

    /// Orthogonal modal basis, one mode per column.
    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn sigma(&self) -> &DVector<f64> {
        &self.sigma
    }

    pub fn lambda(&self, k: usize) -> f64 {
        self.sigma[k] * self.sigma[k]
    }

    pub fn lambdas(&self) -> Vec<f64> {
        self.sigma.iter().map(|s| s * s).collect()
    }

    /// Number of observable modes; modes `0..n0` have nonzero σ.
    pub fn n0(&self) -> usize {
        self.n0
    }

    pub fn n_modes(&self) -> usize {
        self.sigma.len()
    }

    pub fn rank_tol(&self) -> f64 {
        self.rank_tol
    }

    pub fn is_observable(&self, k: usize) -> bool {
        k < self.n0
    }

    /// `U·diag(σ)·Qᵀ`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut us = self.u.clone();
        for (k, s) in self.sigma.iter().enumerate() {
            us.column_mut(k).scale_mut(*s);
        }
        us * self.q.transpose()
    }

    /// Copy with mode `k`'s singular vectors negated (same factorization).
    pub fn with_flipped_mode(&self, k: usize) -> Self {
        let mut out = self.clone();
        out.u.column_mut(k).neg_mut();
        out.q.column_mut(k).neg_mut();
        out
    }

    /// `L = Q·Λ·Qᵀ`.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let mut ql = self.q.clone();
        for k in 0..self.n_modes() {
            ql.column_mut(k).scale_mut(self.lambda(k));
        }
        ql * self.q.transpose()
    }
}

/// Singular value decomposition of `B`, sorted by decreasing σ.
pub fn decompose(map: &MeasurementMap, rank_tol: f64) -> Result<ModalDecomposition> {
    if !(rank_tol > 0.0 && rank_tol < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "rank tolerance must lie in (0, 1), got {rank_tol}"
        )));
    }
    let b = map.matrix();
    let (nz, ny) = b.shape();
    if ny == 0 {
        return Err(Error::InvalidSize("measurement map has no outputs".into()));
    }
    // Pad to square so the SVD returns a full right basis.
    let padded = if nz < ny {
        let mut p = DMatrix::zeros(ny, ny);
        p.view_mut((0, 0), (nz, ny)).copy_from(b);
        p
    } else {
        b.clone()
    };
    let max_iter = 200 * ny.max(10);
    // nalgebra's own default; a tighter eps can stall the iteration.
    let eps = 5.0 * f64::EPSILON;
    let svd = SVD::try_new(padded, true, true, eps, max_iter).ok_or_else(|| Error::Numeric {
        message: format!("SVD of the {nz}x{ny} measurement map did not converge"),
        condition: condition_estimate(b),
    })?;
    let u_full = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v requested");
    let mut order: Vec<usize> = (0..ny).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));

    let mut u = DMatrix::zeros(nz, ny);
    let mut q = DMatrix::zeros(ny, ny);
    let mut sigma = DVector::zeros(ny);
    for (dst, &src) in order.iter().enumerate() {
        sigma[dst] = svd.singular_values[src];
        q.set_column(dst, &v_t.row(src).transpose());
        u.set_column(dst, &u_full.column(src).rows(0, nz));
    }
    let top = sigma[0];
    let n0 = if top > 0.0 {
        sigma.iter().take_while(|s| **s >= rank_tol * top).count()
    } else {
        0
    };
    let decomp = ModalDecomposition {
        u,
        q,
        sigma,
        n0,
        rank_tol,
    };
    let err = (decomp.reconstruct() - b).amax();
    if err > 1e-8 * top.max(f64::MIN_POSITIVE) {
        return Err(Error::Numeric {
            message: format!("SVD reconstruction error {err:e} is too large"),
            condition: condition_estimate(b),
        });
    }
    Ok(decomp)
}

fn condition_estimate(b: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(b.transpose() * b).eigenvalues;
    let max = eig.iter().cloned().fold(0.0, f64::max);
    let min = eig
        .iter()
        .cloned()
        .filter(|v| *v > 0.0)
        .fold(f64::INFINITY, f64::min);
    (max / min).sqrt()
}

/// Per-mode variance `σ²/λ_k` of the rescaled sensor noise; unobservable
/// modes get `f64::INFINITY`.
pub fn noise_gain(decomp: &ModalDecomposition, noise_std: f64) -> Vec<f64> {
    let var = noise_std * noise_std;
    (0..decomp.n_modes())
        .map(|k| {
            if decomp.is_observable(k) {
                var / decomp.lambda(k)
            } else {
                f64::INFINITY
            }
        })
        .collect()
}

const NOISE_CHUNK: usize = 4096;

/// Monte-Carlo estimate of the modal noise variances: draws i.i.d. sensor
/// noise `n ~ N(0, σ²I)`, maps it through `Λ⁻¹QᵀBᵀ` and returns the
/// empirical variance of each observable mode.
///
/// Chunks of samples draw from independent ChaCha streams keyed by
/// `(seed, chunk)`, so the result does not depend on the thread count.
pub fn sample_noise_modal(
    map: &MeasurementMap,
    decomp: &ModalDecomposition,
    noise_std: f64,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if n_samples < 1000 {
        return Err(Error::InvalidArgument(format!(
            "at least 1000 samples required, got {n_samples}"
        )));
    }
    if !(noise_std >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise std must be nonnegative, got {noise_std}"
        )));
    }
    let n0 = decomp.n0();
    let nz = map.n_sensors();
    let mut proj = decomp.q().columns(0, n0).transpose() * map.matrix().transpose();
    for k in 0..n0 {
        proj.row_mut(k).scale_mut(1.0 / decomp.lambda(k));
    }
    let n_chunks = n_samples.div_ceil(NOISE_CHUNK);
    let partial: Vec<(DVector<f64>, DVector<f64>)> = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(chunk as u64);
            let count = NOISE_CHUNK.min(n_samples - chunk * NOISE_CHUNK);
            let mut sum = DVector::zeros(n0);
            let mut sumsq = DVector::zeros(n0);
            let mut noise = DVector::zeros(nz);
            for _ in 0..count {
                for v in noise.iter_mut() {
                    let z: f64 = rng.sample(StandardNormal);
                    *v = noise_std * z;
                }
                let nu = &proj * &noise;
                sum += &nu;
                sumsq += nu.component_mul(&nu);
            }
            (sum, sumsq)
        })
        .collect();
    let mut sum = DVector::zeros(n0);
    let mut sumsq = DVector::zeros(n0);
    for (s, sq) in &partial {
        sum += s;
        sumsq += sq;
    }
    let n = n_samples as f64;
    Ok((0..n0)
        .map(|k| ((sumsq[k] - sum[k] * sum[k] / n) / (n - 1.0)).max(0.0))
        .collect())
}

/// Observable modes with `λ_k < c·λ_1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenCensus {
    pub threshold: f64,
    pub lambda_1: f64,
    pub count: usize,
    /// Mode indices (descending-λ order) below the threshold.
    pub indices: Vec<usize>,
    pub zero_modes: usize,
}

pub fn small_eigen_census(decomp: &ModalDecomposition, c: f64) -> Result<EigenCensus> {
    if !(c > 0.0 && c < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "census threshold must lie in (0, 1), got {c}"
        )));
    }
    let lambda_1 = decomp.lambda(0);
    let indices: Vec<usize> = (0..decomp.n0())
        .filter(|&k| decomp.lambda(k) < c * lambda_1)
        .collect();
    Ok(EigenCensus {
        threshold: c,
        lambda_1,
        count: indices.len(),
        indices,
        zero_modes: decomp.n_modes() - decomp.n0(),
    })
}

/// Orthonormal, poorly observable configurations built from a Walsh code.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WalshCertificate {
    /// Subsystem indices of each group, in slab order.
    pub groups: Vec<Vec<usize>>,
    /// Sign of each group for each code row (Sylvester–Hadamard order).
    pub codes: Vec<Vec<i8>>,
    pub vectors: Vec<DVector<f64>>,
    /// `‖B y_i‖` per vector.
    pub residuals: Vec<f64>,
    /// `N_c · max_i ‖B y_i‖`.
    pub bound: f64,
}

/// Rows of the `n × n` Sylvester–Hadamard matrix (`n` a power of two).
pub fn hadamard(n: usize) -> Vec<Vec<i8>> {
    let mut h = vec![vec![1i8]];
    while h.len() < n {
        let m = h.len();
        let mut next = vec![vec![0i8; 2 * m]; 2 * m];
        for i in 0..m {
            for j in 0..m {
                next[i][j] = h[i][j];
                next[i][j + m] = h[i][j];
                next[i + m][j] = h[i][j];
                next[i + m][j + m] = -h[i][j];
            }
        }
        h = next;
    }
    h
}

/// Splits the subsystems into `n_groups` slabs (sorted by first spatial
/// coordinate, ties broken by the next ones) and builds one configuration
/// per Walsh code row, `±1/√N_y` on every output of a group.
pub fn walsh_poorly_observable(
    structure: &SpatialStructure,
    map: &MeasurementMap,
    n_groups: usize,
) -> Result<WalshCertificate> {
    let m = map.n_subsystems();
    if structure.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "structure has {} subsystems, map has {m}",
            structure.len()
        )));
    }
    if n_groups == 0 || !n_groups.is_power_of_two() || n_groups > m {
        return Err(Error::InvalidArgument(format!(
            "group count must be a power of two no larger than {m}, got {n_groups}"
        )));
    }
    if !m.is_multiple_of(n_groups) {
        return Err(Error::Partition {
            subsystems: m,
            groups: n_groups,
        });
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        let (pa, pb) = (structure.position(a), structure.position(b));
        pa.iter()
            .zip(pb)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let per_group = m / n_groups;
    let groups: Vec<Vec<usize>> = order.chunks(per_group).map(|c| c.to_vec()).collect();
    let codes = hadamard(n_groups);
    let n = map.block_size();
    let ny = map.n_outputs();
    let amp = 1.0 / (ny as f64).sqrt();
    let vectors: Vec<DVector<f64>> = codes
        .iter()
        .map(|code| {
            let mut y = DVector::zeros(ny);
            for (g, members) in groups.iter().enumerate() {
                for &k in members {
                    for i in 0..n {
                        y[k * n + i] = code[g] as f64 * amp;
                    }
                }
            }
            y
        })
        .collect();
    let residuals: Vec<f64> = vectors.iter().map(|y| (map.matrix() * y).norm()).collect();
    let bound = n_groups as f64 * residuals.iter().cloned().fold(0.0, f64::max);
    Ok(WalshCertificate {
        groups,
        codes,
        vectors,
        residuals,
        bound,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalshVerification {
    pub passed: bool,
    pub bound: f64,
    /// Eigenvalues of `L` at or below the certificate bound.
    pub count_below: usize,
    pub required: usize,
    /// The `N_c`-th smallest eigenvalue of `L`.
    pub kth_smallest: f64,
    /// Largest eigenvalue of `YᵀLY`; Courant–Fischer puts the `N_c`-th
    /// smallest eigenvalue of `L` below it.
    pub rayleigh_bound: f64,
}

/// Checks the spectrum really holds `N_c` eigenvalues below the bound.
pub fn verify_walsh_bound(
    cert: &WalshCertificate,
    decomp: &ModalDecomposition,
) -> Result<WalshVerification> {
    let nc = cert.vectors.len();
    let ny = decomp.n_modes();
    if cert.vectors.iter().any(|v| v.len() != ny) {
        return Err(Error::DimensionMismatch(
            "certificate and decomposition disagree on N_y".into(),
        ));
    }
    let mut lambdas = decomp.lambdas();
    lambdas.sort_by(f64::total_cmp);
    let slack = decomp.rank_tol() * decomp.lambda(0);
    let count_below = lambdas.iter().filter(|l| **l <= cert.bound + slack).count();
    let kth_smallest = lambdas[nc - 1];

    let mut y = DMatrix::zeros(ny, nc);
    for (i, v) in cert.vectors.iter().enumerate() {
        y.set_column(i, v);
    }
    let mut proj = decomp.q().transpose() * y;
    for k in 0..ny {
        proj.row_mut(k).scale_mut(decomp.sigma()[k]);
    }
    let gram = proj.transpose() * proj;
    let rayleigh_bound = SymmetricEigen::new(gram).eigenvalues.max();
    let passed = count_below >= nc && kth_smallest <= rayleigh_bound + slack;
    Ok(WalshVerification {
        passed,
        bound: cert.bound,
        count_below,
        required: nc,
        kth_smallest,
        rayleigh_bound,
    })
}

/// `k, sigma, lambda, noise_variance` per mode, `k` counted from 1.
pub fn write_spectrum_csv<W: std::io::Write>(
    decomp: &ModalDecomposition,
    noise_std: f64,
    w: W,
) -> Result<()> {
    let gains = noise_gain(decomp, noise_std);
    let rows =
        (0..decomp.n_modes()).map(|k| (k + 1, decomp.sigma()[k], decomp.lambda(k), gains[k]));
    crate::export::write_csv(w, &["k", "sigma", "lambda", "noise_variance"], rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensing_model::{build_chain, build_hex_mirror, build_ring, laplacian};
    use std::f64::consts::PI;

    fn chain_lambdas(m: usize) -> Vec<f64> {
        let mut l: Vec<f64> = (0..m)
            .map(|k| 2.0 - 2.0 * (k as f64 * PI / m as f64).cos())
            .collect();
        l.sort_by(|a, b| b.total_cmp(a));
        l
    }

    #[test]
    fn chain_of_three() {
        let (_, map) = build_chain(3).unwrap();
        let d = decompose(&map, DEFAULT_RANK_TOL).unwrap();
        for (got, want) in d.lambdas().iter().zip([3.0, 1.0, 0.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert_eq!(d.n0(), 2);
    }

    #[test]
    fn ring_of_four() {
        let (_, map) = build_ring(4).unwrap();
        let d = decompose(&map, DEFAULT_RANK_TOL).unwrap();
        for (got, want) in d.lambdas().iter().zip([4.0, 2.0, 2.0, 0.0]) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
        assert_eq!(d.n0(), 3);
    }

    #[test]
    fn factorization_invariants() {
        let mirror = build_hex_mirror(3, 0, 0.7, 0.25).unwrap();
        for map in [build_chain(17).unwrap().1, mirror.map] {
            let d = decompose(&map, DEFAULT_RANK_TOL).unwrap();
            let err = (d.reconstruct() - map.matrix()).amax();
            assert!(err <= 1e-9 * d.sigma()[0], "reconstruction error {err}");
            let qtq = d.q().transpose() * d.q();
            assert!((qtq - DMatrix::identity(d.n_modes(), d.n_modes())).amax() < 1e-9);
            let uo = d.u().columns(0, d.n0());
            let utu = uo.transpose() * uo;
            assert!((utu - DMatrix::identity(d.n0(), d.n0())).amax() < 1e-9);
            assert!(d.sigma().as_slice().windows(2).all(|w| w[0] >= w[1]));
            let l = laplacian(&map);
            assert!((d.laplacian() - l).amax() < 1e-9 * d.lambda(0));
        }
    }

    #[test]
    fn tall_map_has_orthonormal_u() {
        let mirror = build_hex_mirror(3, 0, 0.7, 0.25).unwrap();
        let d = decompose(&mirror.map, DEFAULT_RANK_TOL).unwrap();
        assert!(mirror.map.n_sensors() >= mirror.map.n_outputs());
        let utu = d.u().transpose() * d.u();
        assert!((utu - DMatrix::identity(d.n_modes(), d.n_modes())).amax() < 1e-9);
        assert_eq!(d.n0(), d.n_modes() - 4);
    }

    #[test]
    fn chain_spectrum_closed_form() {
        for m in [3, 10, 100] {
            let (_, map) = build_chain(m).unwrap();
            let d = decompose(&map, DEFAULT_RANK_TOL).unwrap();
            for (got, want) in d.lambdas().iter().zip(chain_lambdas(m)) {
                assert!((got - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn noise_gain_values() {
        let (_, map) = build_ring(4).unwrap();
        let d = decompose(&map, DEFAULT_RANK_TOL).unwrap();
        let g = noise_gain(&d, 1.0);
        assert!((g[0] - 0.25).abs() < 1e-12);
        assert!(g[3].is_infinite());
        let (_, map) = build_chain(10).unwrap();
        let d = decompose(&map, DEFAULT_RANK_TOL).unwrap();
        let g = noise_gain(&d, 1.0);
        let want = 1.0 / (2.0 - 2.0 * (PI / 10.0).cos());
        assert!((g[d.n0() - 1] - want).abs() < 1e-9);
        assert!((g[d.n0() - 1] - 10.21).abs() < 0.01);
    }

    #[test]
    fn monte_carlo_noise_matches_closed_form() {
        let (_, map) = build_chain(5).unwrap();
        let d = decompose(&map, DEFAULT_RANK_TOL).unwrap();
        let emp = sample_noise_modal(&map, &d, 1.0, 100_000, 7).unwrap();
        let analytic = noise_gain(&d, 1.0);
        for (e, a) in emp.iter().zip(&analytic) {
            assert!((e / a - 1.0).abs() < 0.05, "{e} vs {a}");
        }
    }

    #[test]
    fn monte_carlo_zero_noise_and_determinism() {
        let (_, map) = build_chain(5).unwrap();
        let d = decompose(&map, DEFAULT_RANK_TOL).unwrap();
        let zero = sample_noise_modal(&map, &d, 0.0, 5000, 1).unwrap();
        assert!(zero.iter().all(|v| *v == 0.0));
        let a = sample_noise_modal(&map, &d, 1.0, 10_000, 3).unwrap();
        let b = sample_noise_modal(&map, &d, 1.0, 10_000, 3).unwrap();
        assert_eq!(a, b);
        assert!(sample_noise_modal(&map, &d, 1.0, 999, 3).is_err());
    }

    #[test]
    fn census_on_long_chain() {
        let (_, map) = build_chain(100).unwrap();
        let d = decompose(&map, DEFAULT_RANK_TOL).unwrap();
        let c = small_eigen_census(&d, 0.01).unwrap();
        assert_eq!(c.count, 6);
        assert_eq!(c.zero_modes, 1);
        assert_eq!(c.indices, (93..99).collect::<Vec<_>>());
        let near_one = small_eigen_census(&d, 1.0 - 1e-12).unwrap();
        let at_top = (0..d.n0()).filter(|&k| d.lambda(k) >= d.lambda(0)).count();
        assert_eq!(near_one.count, d.n0() - at_top);
        assert!(small_eigen_census(&d, 1.0).is_err());
    }

    #[test]
    fn spectrum_csv_layout() {
        let (_, map) = build_chain(3).unwrap();
        let d = decompose(&map, DEFAULT_RANK_TOL).unwrap();
        let mut buf = Vec::new();
        write_spectrum_csv(&d, 1.0, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "k,sigma,lambda,noise_variance");
        assert_eq!(lines.len(), 4);
        assert!(lines[3].starts_with("3,") && lines[3].ends_with(",inf"));
    }

    #[test]
    fn hadamard_rows_are_orthogonal() {
        let h = hadamard(8);
        for i in 0..8 {
            for j in 0..8 {
                let dot: i32 = h[i]
                    .iter()
                    .zip(&h[j])
                    .map(|(a, b)| (*a as i32) * (*b as i32))
                    .sum();
                assert_eq!(dot, if i == j { 8 } else { 0 });
            }
        }
    }

    #[test]
    fn walsh_chain_of_twenty() {
        let (s, map) = build_chain(20).unwrap();
        let cert = walsh_poorly_observable(&s, &map, 4).unwrap();
        assert_eq!(cert.groups[1], vec![5, 6, 7, 8, 9]);
        // Sylvester order: ++++, +-+-, ++--, +--+
        assert_eq!(cert.residuals[0], 0.0);
        assert!((cert.residuals[2] - 2.0 / 20f64.sqrt()).abs() < 1e-12);
        assert!((cert.residuals[1] - (12.0f64 / 20.0).sqrt()).abs() < 1e-12);
        let z = map.matrix() * &cert.vectors[2];
        let active: Vec<usize> = (0..z.len()).filter(|&i| z[i] != 0.0).collect();
        assert_eq!(active, vec![9]);
        let d = decompose(&map, DEFAULT_RANK_TOL).unwrap();
        assert!(verify_walsh_bound(&cert, &d).unwrap().passed);
    }

    #[test]
    fn walsh_single_group_is_the_nullspace() {
        let (s, map) = build_ring(6).unwrap();
        let cert = walsh_poorly_observable(&s, &map, 1).unwrap();
        assert!(cert.bound < 1e-12);
        let d = decompose(&map, DEFAULT_RANK_TOL).unwrap();
        assert!(verify_walsh_bound(&cert, &d).unwrap().passed);
    }

    #[test]
    fn walsh_partition_errors() {
        let (s, map) = build_chain(10).unwrap();
        assert!(matches!(
            walsh_poorly_observable(&s, &map, 4),
            Err(Error::Partition { .. })
        ));
        assert!(walsh_poorly_observable(&s, &map, 3).is_err());
        assert!(walsh_poorly_observable(&s, &map, 16).is_err());
    }

    #[test]
    fn walsh_on_hex_with_hole() {
        let mirror = build_hex_mirror(4, 1, 0.7, 0.25).unwrap();
        let cert = walsh_poorly_observable(&mirror.structure, &mirror.map, 4).unwrap();
        for (i, a) in cert.vectors.iter().enumerate() {
            for (j, b) in cert.vectors.iter().enumerate() {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((a.dot(b) - want).abs() < 1e-10);
            }
        }
        let d = decompose(&mirror.map, DEFAULT_RANK_TOL).unwrap();
        assert!(verify_walsh_bound(&cert, &d).unwrap().passed);
    }
}
