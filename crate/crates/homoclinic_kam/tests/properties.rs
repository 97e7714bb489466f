//! Invariants checked over randomized inputs.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Vector2};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use homoclinic_kam::center_dynamics::{partial_quotients, rotation_number, CenterMap};
use homoclinic_kam::cli_io::parse_config_str;
use homoclinic_kam::model_zoo::{build_local_map, random_symplectic, LocalModelParams, MapModel};
use homoclinic_kam::scattering::{genericity_of_matrix, genericity_residual, GenericityClass};
use homoclinic_kam::sigma_analysis::{is_simple, shoelace_area};
use homoclinic_kam::symplectic_core::{
    check_symplectic_block_identities, rotation, symplectic_inverse, symplectic_residual, Jacobian4, Mat4, PhasePoint, SmoothMap4,
};

fn point(r: f64) -> impl Strategy<Value = PhasePoint> {
    (-r..r, -r..r, -r..r, -r..r).prop_map(|(x, y, u, v)| PhasePoint::new(x, y, u, v))
}

fn unimodular() -> impl Strategy<Value = Matrix2<f64>> {
    (0.3f64..3.0, 0.0..2.0 * PI, 0.0..2.0 * PI)
        .prop_map(|(s, a, b)| rotation(a) * Matrix2::new(s, 0.0, 0.0, 1.0 / s) * rotation(b))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn random_symplectic_matrices_preserve_omega(seed in any::<u64>(), scale in 0.01f64..1.0) {
        let m = random_symplectic(&mut ChaCha8Rng::seed_from_u64(seed), scale);
        prop_assert!(symplectic_residual(&m) <= 1e-10);
        prop_assert!((symplectic_inverse(&m) * m - Mat4::identity()).amax() <= 1e-10);
    }

    #[test]
    fn local_map_is_symplectic(p in point(1.0)) {
        let f = build_local_map(LocalModelParams::demo()).unwrap();
        let j = Jacobian4(f.jacobian_at(&p));
        prop_assert!(j.symplectic_residual() <= 1e-10);
        prop_assert!(check_symplectic_block_identities(&j, 1e-10).pass);
    }

    #[test]
    fn local_map_inverse_round_trip(p in point(0.5)) {
        let f = build_local_map(LocalModelParams::demo()).unwrap();
        let back = f.inverse_eval(&f.eval(&p)).unwrap();
        prop_assert!(back.dist(&p) <= 1e-12);
    }

    #[test]
    fn global_map_round_trip(p in point(0.2)) {
        let model = MapModel::demo();
        let q = PhasePoint::new(p.x, model.spec().y1 + p.y, p.u, p.v);
        let back = model.global.inverse_eval(&model.global.eval(&q)).unwrap();
        prop_assert!(back.dist(&q) <= 1e-13);
    }

    #[test]
    fn genericity_roots_are_roots(a in unimodular()) {
        let r = genericity_of_matrix(&a);
        match r.class {
            GenericityClass::Generic => {
                prop_assert_eq!(r.roots.len(), 4);
                for t in &r.roots {
                    prop_assert!(genericity_residual(&a, *t).abs() <= 1e-10);
                }
            }
            GenericityClass::DegenerateRotation => prop_assert!((a.transpose() * a - Matrix2::identity()).amax() <= 1e-10),
            GenericityClass::NearDegenerate => {}
        }
    }

    #[test]
    fn roots_come_in_antipodal_pairs(a in unimodular()) {
        let r = genericity_of_matrix(&a);
        if r.class == GenericityClass::Generic {
            for k in 0..2 {
                prop_assert!((r.roots[k + 2] - r.roots[k] - PI).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn twist_rotation_number_matches_amplitude(r in 0.05f64..0.5, alpha in 0.3f64..2.5) {
        let cm = CenterMap::twist(alpha, 0.1);
        let est = rotation_number(&cm, Vector2::new(r, 0.0), 2048).unwrap();
        prop_assert!((est.value - (alpha + 0.1 * r * r)).abs() <= 1e-9);
    }

    #[test]
    fn rationals_show_a_huge_quotient_early(p in 1u64..200, q in 2u64..200) {
        let x = (p % q) as f64 / q as f64;
        let depth = 2 * (64 - q.leading_zeros() as usize) + 4;
        let pq = partial_quotients(x, depth);
        prop_assert!(pq.iter().any(|a| *a >= 1_000_000), "{:?}", pq);
    }

    #[test]
    fn polygon_area_is_rigid(th in 0.0..2.0 * PI, shift in 0usize..50, dx in -1.0f64..1.0) {
        let pts: Vec<Vector2<f64>> = (0..50)
            .map(|k| {
                let t = 2.0 * PI * k as f64 / 50.0;
                Vector2::new(2.0 * t.cos(), t.sin())
            })
            .collect();
        let base = shoelace_area(&pts);
        let rot = rotation(th);
        let mut moved: Vec<Vector2<f64>> = pts.iter().map(|p| rot * p + Vector2::new(dx, 0.0)).collect();
        moved.rotate_left(shift);
        prop_assert!(is_simple(&moved));
        prop_assert!((shoelace_area(&moved) - base).abs() <= 1e-12);
    }

    #[test]
    fn config_echo_reparses(mu in 0.1f64..0.9, nu in 0.01f64..0.5, n in 3usize..12) {
        let text = format!("model.mu = {mu}\nmodel.nu = {nu}\nanalysis.N = {n}\n");
        let cfg = parse_config_str(&text).unwrap();
        let again = parse_config_str(&cfg.echo_text()).unwrap();
        prop_assert_eq!(cfg.params, again.params);
        prop_assert_eq!(cfg.m, again.m);
        prop_assert_eq!(cfg.n, again.n);
    }
}
