use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use relsense::controller::dc_sensitivity_scalar;
use relsense::export::{read_coo, write_coo};
use relsense::robustness::{
    phi_b_value, phi_matrix, worst_case_delta, UncertaintyMode, UncertaintySpec,
};
use relsense::sensing_model::{build_chain, build_ring, laplacian};
use relsense::si_analysis::{
    lambda_xi, ltsi_eval, ltsi_fit, noise_floor_count, phi_bar, ExclusionZone, LtsiTarget,
    SIStencil,
};
use relsense::spectral::{decompose, DEFAULT_RANK_TOL};

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 48,
        ..ProptestConfig::default()
    }
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn decomposition_reconstructs_and_orders(m in 2usize..40, ring in any::<bool>()) {
        let (_, map) = if ring && m >= 3 { build_ring(m).unwrap() } else { build_chain(m).unwrap() };
        let d = decompose(&map, DEFAULT_RANK_TOL).unwrap();
        prop_assert!((d.reconstruct() - map.matrix()).amax() < 1e-10);
        let l = d.lambdas();
        prop_assert!(l.windows(2).all(|w| w[0] >= w[1] - 1e-12));
        prop_assert!(l.iter().all(|v| *v >= 0.0));
        prop_assert_eq!(d.n0(), m - 1);
        let lap = laplacian(&map);
        for r in 0..lap.nrows() {
            prop_assert!(lap.row(r).sum().abs() < 1e-12);
        }
    }

    #[test]
    fn worst_case_is_admissible_and_dominant(m in 3usize..25, seed in any::<u64>(), eps in 0.001f64..0.2) {
        let (_, map) = build_chain(m).unwrap();
        let d = decompose(&map, DEFAULT_RANK_TOL).unwrap();
        let spec = UncertaintySpec::new(eps, UncertaintyMode::IndependentEntries).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let random = phi_matrix(&d, &spec.sample(&map, &mut rng).unwrap()).unwrap();
        for b in 0..d.n0() {
            let delta = worst_case_delta(&map, &d, b, eps).unwrap();
            prop_assert!(spec.admits(&map, &delta));
            let pb = phi_b_value(&map, &d, b, eps).unwrap();
            prop_assert!(pb <= 0.0);
            prop_assert!(random[(b, b)] >= pb - 1e-12);
            let half = phi_b_value(&map, &d, b, eps / 2.0).unwrap();
            prop_assert!((2.0 * half - pb).abs() < 1e-12 * pb.abs().max(1.0));
        }
    }

    #[test]
    fn noise_floor_count_never_exceeds_the_census(m in 8usize..400, c in 0.05f64..0.9) {
        let s = SIStencil::ring(m).unwrap();
        let w = noise_floor_count(c, &s, 1).unwrap();
        let census = s.grid().iter().filter(|k| lambda_xi(&s, &s.frequency(k)).unwrap() <= c * c).count() as u64;
        prop_assert!(census >= w);
    }

    #[test]
    fn phi_bar_grows_with_ring_size(m in 4usize..2000, extra in 1usize..500, eps in 0.001f64..0.1) {
        let small = phi_bar(&SIStencil::ring(m).unwrap(), eps, &[2.0 * PI / m as f64]).unwrap().norm();
        let n = m + extra;
        let large = phi_bar(&SIStencil::ring(n).unwrap(), eps, &[2.0 * PI / n as f64]).unwrap().norm();
        prop_assert!(large > small);
    }

    #[test]
    fn zone_distance_is_consistent(
        phi in 0.0f64..5.0,
        gm in 1.0f64..4.0,
        pm in 0.0f64..1.2,
        re in -3.0f64..2.0,
        im in -2.0f64..2.0,
        beta in -1.0f64..1.0,
    ) {
        let zone = ExclusionZone::new(phi, gm, pm).unwrap();
        let p = zone.arc_point(beta);
        prop_assert!(zone.contains(p));
        prop_assert!((((p - zone.center()).norm()) - 0.5).abs() < 1e-12);
        let z = Complex64::new(re, im);
        let dz = zone.distance(z);
        prop_assert!(dz >= 0.0);
        prop_assert_eq!(dz == 0.0, zone.contains(z));
        prop_assert!(dz <= (z - p).norm() + 1e-9);
        let shifted = z + Complex64::new(0.01, -0.02);
        prop_assert!((zone.distance(shifted) - dz).abs() <= (shifted - z).norm() + 1e-6);
    }

    #[test]
    fn dc_sensitivity_is_a_fraction_and_falls_with_gain(s in 1e-4f64..3.0, k in 0.01f64..50.0, a in 0.01f64..5.0) {
        let lo = dc_sensitivity_scalar(s, k, a);
        let hi = dc_sensitivity_scalar(s, 2.0 * k, a);
        prop_assert!(lo > 0.0 && lo < 1.0);
        prop_assert!(hi < lo);
    }

    #[test]
    fn ltsi_fit_recovers_random_series(c in prop::array::uniform4(-2.0f64..2.0), m1 in 4usize..9, m2 in 4usize..9) {
        let s = SIStencil::hex(m1, m2).unwrap();
        let targets: Vec<LtsiTarget> = s.grid().iter().map(|k| {
            let x = s.frequency(k);
            let v = c[0] + c[1] * x[0].cos() + c[2] * x[1].cos() + c[3] * (x[0] - x[1]).cos();
            LtsiTarget { xi: x, k: vec![v], a: vec![v] }
        }).collect();
        let fit = ltsi_fit(s.sizes(), &targets, None).unwrap();
        prop_assert!(fit.residual_k < 1e-10);
        for t in &targets {
            let (_, a) = ltsi_eval(&fit.controller, &t.xi).unwrap();
            prop_assert!(a[(0, 0)] >= -1e-10);
        }
    }

    #[test]
    fn coo_round_trip(rows in 1usize..8, cols in 1usize..8, seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = DMatrix::from_fn(rows, cols, |_, _| if rng.random_bool(0.4) { rng.random_range(-1e3..1e3) } else { 0.0 });
        let mut buf = Vec::new();
        write_coo(&m, &mut buf).unwrap();
        prop_assert_eq!(read_coo(&buf[..]).unwrap(), m);
    }
}
