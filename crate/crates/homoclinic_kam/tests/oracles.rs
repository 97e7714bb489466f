//! Cross-module oracles with closed-form expected values.

use std::f64::consts::PI;

use nalgebra::Matrix2;

use homoclinic_kam::center_dynamics::{analyze_action, find_periodic_orbits, CenterMap, KamCriteria, OrbitClass, Verdict};
use homoclinic_kam::cli_io::{demo_config_text, parse_config, parse_config_str, run_pipeline_until, stages_through, Stage, StageStatus};
use homoclinic_kam::homoclinic::assemble_homoclinic_orbit;
use homoclinic_kam::model_zoo::{build_model, coupling_shear, default_global_matrix, GlobalMapSpec, LocalModelParams, MapModel};
use homoclinic_kam::scattering::{build_scattering_map, check_genericity, GenericityClass};
use homoclinic_kam::Error;

#[test]
fn integrable_kam_curve_is_a_circle_of_the_action_radius() {
    let cm = CenterMap::twist(1.0, 0.1);
    for action in [0.25, 0.5, 1.0] {
        let c = analyze_action(&cm, action, &KamCriteria::default());
        let r = cm.radius_of_action(action);
        assert!(c.closeness <= 1e-12, "{}", c.closeness);
        assert!((c.rotation_number - (1.0 + 0.1 * r * r)).abs() <= 1e-9);
        for k in 0..8 {
            assert!((c.radius(k as f64 * PI / 4.0) - r).abs() <= 1e-12);
        }
    }
}

#[test]
fn resonant_action_is_not_quasiperiodic() {
    // Rotation number 2π/5 sits on the 1:5 resonance of the twist.
    let nu = 1.0;
    let cm = CenterMap { epsilon: 1.0, ..CenterMap::twist(1.0, nu) };
    let r2 = (2.0 * PI / 5.0 - 1.0) / nu;
    let c = analyze_action(&cm, r2 / 2.0, &KamCriteria::default());
    assert_ne!(c.verdict, Verdict::Quasiperiodic, "{:?}", c.partial_quotients);
}

#[test]
fn kicked_twist_resonance_zone_has_birkhoff_pair() {
    let cm = CenterMap::kicked_twist(1.0, 1.0, 0.05, 5);
    let r_res = (2.0 * PI / 5.0 - 1.0f64).sqrt();
    let scan = find_periodic_orbits(&cm, 1, 5, 0.9 * r_res, 1.1 * r_res);
    let ell = scan.orbits.iter().filter(|o| o.class == OrbitClass::Elliptic).count();
    let hyp = scan.orbits.iter().filter(|o| o.class == OrbitClass::Hyperbolic).count();
    assert!(ell >= 1 && ell == hyp);
}

#[test]
fn coupling_shear_leaves_scattering_unimodular_and_generic() {
    let b = Matrix2::new(1.5, 0.0, 0.0, 1.0 / 1.5);
    let m = default_global_matrix(1.0, &b, 0.0) * coupling_shear(0.2);
    let model = build_model(LocalModelParams::demo(), GlobalMapSpec { m, ..GlobalMapSpec::demo() }, 0.3).unwrap();
    let orbit = assemble_homoclinic_orbit(&model, 60).unwrap();
    let s = build_scattering_map(&model, &orbit, 6, None).unwrap();
    assert!(s.det_residual <= 1e-8);
    assert_eq!(check_genericity(&s).class, GenericityClass::Generic);
}

#[test]
fn demo_scattering_is_the_center_block() {
    let model = MapModel::demo();
    let orbit = assemble_homoclinic_orbit(&model, 60).unwrap();
    let s = build_scattering_map(&model, &orbit, 4, None).unwrap();
    assert!((s.a - Matrix2::new(1.5, 0.0, 0.0, 1.0 / 1.5)).amax() <= 1e-12, "{}", s.a);
}

#[test]
fn bearings_match_scattering_roots() {
    let cfg = parse_config_str(demo_config_text()).unwrap();
    let (report, halted) = run_pipeline_until(&cfg, &Stage::ALL);
    assert!(halted.is_none());
    let roots = &report.genericity.as_ref().unwrap().roots;
    let t0 = (4.0f64 / 13.0).sqrt().acos();
    for (r, e) in roots.iter().zip([t0, PI - t0, PI + t0, 2.0 * PI - t0]) {
        assert!((r - e).abs() <= 1e-9);
    }
    for rep in &report.intersections {
        assert_eq!(rep.count(), 4);
        let mut bearings: Vec<f64> = rep.crossings.iter().map(|c| c.bearing.rem_euclid(2.0 * PI)).collect();
        bearings.sort_by(f64::total_cmp);
        for (b, r) in bearings.iter().zip(roots) {
            assert!((b - r).abs() <= 0.1, "{b} vs {r}");
        }
    }
}

#[test]
fn strong_resonance_halts_at_fixed_point() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/strong_resonance.conf");
    let cfg = parse_config(std::path::Path::new(path)).unwrap();
    let (report, halted) = run_pipeline_until(&cfg, &Stage::ALL);
    let err = halted.expect("must halt");
    assert!(matches!(&err, Error::Stage { stage, .. } if stage == "fixed-point"), "{err}");
    assert!(matches!(err.root(), Error::StrongResonance { .. }));
    assert_eq!(report.status(Stage::Build), StageStatus::Ok);
    assert_eq!(report.status(Stage::Homoclinic), StageStatus::Skipped);
}

#[test]
fn kam_scan_skips_the_homoclinic_stages() {
    let cfg = parse_config_str(demo_config_text()).unwrap();
    let (report, halted) = run_pipeline_until(&cfg, &stages_through(Stage::KamScan));
    assert!(halted.is_none());
    assert_eq!(report.status(Stage::Scattering), StageStatus::Skipped);
    assert_eq!(report.kam.len(), 8);
}

#[test]
fn missing_config_file_is_io_error() {
    let err = parse_config(std::path::Path::new("/nonexistent/hkam.conf")).unwrap_err();
    assert!(!err.is_certificate_failure());
}
