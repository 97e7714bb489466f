//! Acceptance suite: one PASS/FAIL line per criterion, with runtime budget.

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::{Matrix2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use homoclinic_kam::center_dynamics::{annulus_grid, solve_fiber, CenterMap, FiberChart, Tilt};
use homoclinic_kam::cli_io::{demo_config_text, parse_config_str, run_pipeline_until, stages_through, RunConfig, Stage};
use homoclinic_kam::fixed_point_analysis::{classify_spectrum, enumerate_resonances, extract_normal_form, NormalFormCoeffs};
use homoclinic_kam::homoclinic::{assemble_homoclinic_orbit, Side};
use homoclinic_kam::model_zoo::{
    build_local_map, build_model, default_global_matrix, random_symplectic, GlobalMapSpec, LocalModelParams, MapModel, PolyShear, TruncatedNormalForm,
};
use homoclinic_kam::poly::Poly4;
use homoclinic_kam::scattering::{
    build_scattering_map, check_transversality, genericity_of_matrix, linearize_along_orbit, operator_lipschitz, scattering_from_sequence,
    solve_bvp, stepwise_residual, synthetic_sequence, verify_linearity, BvpBoundaryData, Direction, GenericityClass,
};
use homoclinic_kam::symplectic_core::{
    check_symplectic_block_identities, rotation, symplectic_inverse, Composition, Jacobian4, LinearMap, PhasePoint, SmoothMap4,
};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: String) -> Outcome {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn random_point<R: Rng>(rng: &mut R, r: f64) -> PhasePoint {
    PhasePoint::new(rng.gen_range(-r..r), rng.gen_range(-r..r), rng.gen_range(-r..r), rng.gen_range(-r..r))
}

fn c1_symplecticity() -> Outcome {
    let model = MapModel::demo();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let h = model.params().h;
    let (mut symp, mut blocks): (f64, f64) = (0.0, 0.0);
    for _ in 0..1000 {
        let p = random_point(&mut rng, h);
        for jac in [model.local.jacobian_at(&p), model.global.jacobian_at(&p)] {
            let j = Jacobian4(jac);
            symp = symp.max(j.symplectic_residual());
            let b = check_symplectic_block_identities(&j, 1e-10);
            blocks = blocks.max(b.ac_symmetry).max(b.bd_symmetry).max(b.unimodularity);
        }
    }
    ensure(symp <= 1e-10 && blocks <= 1e-10, format!("max symplectic residual {symp:.2e}, block identities {blocks:.2e}"))
}

fn c2_bvp() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let seq = synthetic_sequence(0.5, 1.0, 80, 2.0, 0.7, &mut rng).map_err(|e| e.to_string())?;
    let threshold = (0..40)
        .find(|&n| (n..40).all(|m| operator_lipschitz(&seq, Direction::Forward, m as i64, 30) < 1.0))
        .ok_or("no contraction threshold below 40")?;
    let mut worst: f64 = 0.0;
    let mut lip: f64 = 0.0;
    for k in 0..20 {
        let data = BvpBoundaryData {
            direction: if k % 2 == 0 { Direction::Forward } else { Direction::Backward },
            n: threshold + rng.gen_range(0..8),
            hyperbolic: rng.gen_range(-1.0..1.0),
            chi: Vector2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
        };
        let sol = solve_bvp(&seq, &data, 40).map_err(|e| e.to_string())?;
        worst = worst.max(stepwise_residual(&seq, &sol));
        lip = lip.max(sol.lipschitz);
    }
    ensure(worst <= 1e-10 && lip < 1.0, format!("threshold N = {threshold}, stepwise residual {worst:.2e}, Lipschitz {lip:.3}"))
}

fn c3_linearity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = MapModel::demo();
    let orbit = assemble_homoclinic_orbit(&model, 60).map_err(|e| e.to_string())?;
    let demo = linearize_along_orbit(&model, &orbit).map_err(|e| e.to_string())?;
    let synth = synthetic_sequence(0.5, 1.0, 80, 0.5, 0.8, &mut rng).map_err(|e| e.to_string())?;
    let a = verify_linearity(&demo, 4, 40, 100, &mut rng).map_err(|e| e.to_string())?;
    let b = verify_linearity(&synth, 8, 60, 100, &mut rng).map_err(|e| e.to_string())?;
    let v = a.max_violation().max(b.max_violation());
    ensure(v <= 1e-10, format!("max violation {v:.2e} over 2×100 samples"))
}

fn c4_scattering() -> Outcome {
    let model = MapModel::demo();
    let orbit = assemble_homoclinic_orbit(&model, 80).map_err(|e| e.to_string())?;
    let ns = [4usize, 6, 8, 10, 12, 14, 16];
    let mut mats = Vec::new();
    let mut det: f64 = 0.0;
    for &n in &ns {
        let s = build_scattering_map(&model, &orbit, n, None).map_err(|e| e.to_string())?;
        det = det.max(s.det_residual);
        mats.push(s.a);
    }
    let floor = 1e-12;
    // Least-squares geometric rate of the successive differences above the
    // round-off floor; a sequence already at the floor counts as converged.
    let cauchy = |mats: &[Matrix2<f64>]| -> (bool, f64, Vec<f64>) {
        let d: Vec<f64> = mats.windows(2).map(|w| (w[1] - w[0]).amax()).collect();
        let pts: Vec<(f64, f64)> = d.iter().enumerate().filter(|(_, x)| **x > floor).map(|(k, x)| (k as f64, x.ln())).collect();
        if pts.len() < 2 {
            return (true, 0.0, d);
        }
        let n = pts.len() as f64;
        let (mk, ml) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
        let slope = pts.iter().map(|p| (p.0 - mk) * (p.1 - ml)).sum::<f64>() / pts.iter().map(|p| (p.0 - mk).powi(2)).sum::<f64>();
        let ratio = slope.exp();
        (ratio <= 0.9, ratio, d)
    };
    let (demo_ok, _, demo_d) = cauchy(&mats);
    let a = mats[mats.len() - 1];
    let rotation_gap = (a.transpose() * a - Matrix2::identity()).amax();

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let seq = synthetic_sequence(0.5, 1.0, 80, 0.5, 0.7, &mut rng).map_err(|e| e.to_string())?;
    let mut smats = Vec::new();
    for &n in &ns {
        let s = scattering_from_sequence(&seq, n, 50, -1).map_err(|e| e.to_string())?;
        det = det.max(s.det_residual);
        smats.push(s.a);
    }
    let (syn_ok, syn_rate, syn_d) = cauchy(&smats);
    let ratios: Vec<String> = syn_d.windows(2).map(|p| format!("{:.2}", p[1] / p[0])).collect();
    ensure(
        det <= 1e-8 && demo_ok && syn_ok && rotation_gap > 1e-3,
        format!(
            "|det A − 1| ≤ {det:.1e}; demo max step {:.1e}; coupled sequence fitted ratio {syn_rate:.2} (steps [{}]); |AᵀA − I| = {rotation_gap:.3}",
            demo_d.iter().cloned().fold(0.0, f64::max),
            ratios.join(", ")
        ),
    )
}

fn c5_genericity() -> Outcome {
    let d = genericity_of_matrix(&Matrix2::new(1.5, 0.0, 0.0, 2.0 / 3.0));
    let t0 = (4.0f64 / 13.0).sqrt().acos();
    let expected = [t0, PI - t0, PI + t0, 2.0 * PI - t0];
    let root_err = if d.roots.len() == 4 {
        d.roots.iter().zip(expected).map(|(r, e)| (r - e).abs()).fold(0.0, f64::max)
    } else {
        f64::INFINITY
    };
    let mut rot_max: f64 = 0.0;
    let mut all_degenerate = true;
    for k in 0..16 {
        let r = genericity_of_matrix(&rotation(0.41 * k as f64));
        rot_max = rot_max.max(r.max_abs_residual);
        all_degenerate &= r.class == GenericityClass::DegenerateRotation;
    }
    ensure(
        d.class == GenericityClass::Generic && root_err <= 1e-9 && rot_max <= 1e-12 && all_degenerate,
        format!("root error {root_err:.1e}; rotations max |ρ| {rot_max:.1e}"),
    )
}

fn c6_transversality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let b = Matrix2::new(1.5, 0.0, 0.0, 1.0 / 1.5);
    let mut models = vec![MapModel::demo()];
    let mut attempts = 0;
    while models.len() < 11 && attempts < 200 {
        attempts += 1;
        let m = default_global_matrix(1.0, &b, 0.0) * random_symplectic(&mut rng, 0.3);
        if let Ok(model) = build_model(LocalModelParams::demo(), GlobalMapSpec { m, ..GlobalMapSpec::demo() }, 0.3) {
            models.push(model);
        }
    }
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for model in &models {
        let orbit = assemble_homoclinic_orbit(model, 60).map_err(|e| e.to_string())?;
        let t = check_transversality(model, &orbit, 4).map_err(|e| e.to_string())?;
        worst = worst.max(t.identity_error / (1.0 + t.d11 * t.d11));
        checked += 1;
    }
    ensure(checked == 11 && worst <= 1e-8, format!("{checked} models, max |Δ − d11²|/(1 + d11²) = {worst:.2e}"))
}

fn demo_config() -> RunConfig {
    parse_config_str(demo_config_text()).expect("demo config")
}

fn c7_equal_action() -> Outcome {
    let mut msgs = Vec::new();
    let mut ok = true;
    for (eps, tol) in [(0.0, 1e-6), (1e-3, 1e-4)] {
        let mut cfg = demo_config();
        cfg.params.eps_pert = eps;
        let (report, halted) = run_pipeline_until(&cfg, &stages_through(Stage::SigmaTraces));
        if let Some(e) = halted {
            return Err(format!("ε_pert = {eps}: {e}"));
        }
        let gap = report.traces.iter().map(|t| t.relative_area_gap()).fold(0.0, f64::max);
        ok &= !report.traces.is_empty() && gap <= tol;
        msgs.push(format!("ε_pert = {eps}: {} curves, max gap {gap:.1e}", report.traces.len()));
    }
    ensure(ok, msgs.join("; "))
}

fn c8_end_to_end() -> Outcome {
    let cfg = demo_config();
    let (report, halted) = run_pipeline_until(&cfg, &Stage::ALL);
    if let Some(e) = halted {
        return Err(e.to_string());
    }
    let g = report.genericity.as_ref().ok_or("no genericity report")?;
    let mut ok = g.class == GenericityClass::Generic && !report.intersections.is_empty();
    let mut min_angle = f64::INFINITY;
    let mut max_bearing_err: f64 = 0.0;
    for r in &report.intersections {
        ok &= r.count() == 4 && r.all_matched;
        for c in &r.crossings {
            min_angle = min_angle.min(c.angle);
            ok &= c.angle >= 1e-3;
            match c.matched_root {
                Some(root) => {
                    let d = (c.bearing - root).rem_euclid(2.0 * PI);
                    max_bearing_err = max_bearing_err.max(d.min(2.0 * PI - d));
                }
                None => ok = false,
            }
        }
    }
    ok &= max_bearing_err <= 0.1;

    let mut id = demo_config();
    id.m = default_global_matrix(1.0, &Matrix2::identity(), 0.0);
    id.params.eps_pert = 0.0;
    let (idr, halted) = run_pipeline_until(&id, &Stage::ALL);
    if let Some(e) = halted {
        return Err(format!("identity B: {e}"));
    }
    let degenerate = idr.genericity.as_ref().map(|g| g.class) == Some(GenericityClass::DegenerateRotation);
    let coincide = !idr.intersections.is_empty() && idr.intersections.iter().all(|r| r.degenerate_overlap);
    ensure(
        ok && degenerate && coincide,
        format!(
            "{} curves × 4 crossings, min angle {min_angle:.3}, max bearing error {max_bearing_err:.1e}; identity B: {} with coinciding traces = {coincide}",
            report.intersections.len(),
            idr.genericity.map(|g| g.class.label()).unwrap_or("none")
        ),
    )
}

fn c9_fibers() -> Outcome {
    let model = MapModel::demo();
    let eps = CenterMap::twist(1.0, 0.1).epsilon;
    let radii: Vec<f64> = annulus_grid(1.0, 4).iter().map(|i| eps * (2.0 * i).sqrt()).collect();
    let tilt = Tilt { offset: Vector2::new(0.2, -0.1), linear: Matrix2::new(0.3, 0.1, -0.2, 0.4) };
    let (mut oracle, mut alpha, mut rho, mut tau, mut fen): (f64, f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut count = 0;
    for side in [Side::Stable, Side::Unstable] {
        for tilted in [false, true] {
            let chart = FiberChart { tilt: if tilted { Some(tilt) } else { None }, ..FiberChart::for_model(&model, side) };
            for &r in &radii {
                for k in 0..4 {
                    let th = 0.3 + k as f64 * PI / 2.0;
                    let base = Vector2::new(r * th.cos(), r * th.sin());
                    let f = solve_fiber(&chart, 0.5, 1.0, base, 80).map_err(|e| e.to_string())?;
                    oracle = oracle.max(f.oracle_error);
                    alpha = alpha.max(f.alpha_star);
                    rho = rho.max(f.rho_star);
                    tau = tau.max(f.tau_star);
                    fen = fen.max(f.fenichel_residual);
                    count += 1;
                }
            }
        }
    }
    ensure(
        oracle <= 1e-8 && alpha < 1.0 && rho < 1.0 && tau < 0.5 && fen <= 1e-8,
        format!("{count} fibres: oracle {oracle:.1e}, α* {alpha:.3}, ρ* {rho:.3}, τ* {tau:.3}, Fenichel {fen:.1e}"),
    )
}

fn coeff_gap(a: &NormalFormCoeffs, b: &NormalFormCoeffs) -> f64 {
    (a.a - b.a).abs().max((a.b - b.b).abs()).max((a.nu - b.nu).abs()).max((a.kappa - b.kappa).abs())
}

fn normal_form_of(map: &dyn SmoothMap4) -> Result<NormalFormCoeffs, String> {
    let s = classify_spectrum(&map.jacobian_at(&PhasePoint::origin())).map_err(|e| e.to_string())?;
    extract_normal_form(map, &s).map_err(|e| e.to_string())
}

fn c10_normal_form() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut recovery: f64 = 0.0;
    let mut invariance: f64 = 0.0;
    let literal = TruncatedNormalForm { mu: 0.5, alpha: 1.0, a: 0.3, b: -0.2, nu: 0.1, kappa: 0.05 };
    let nf = normal_form_of(&literal)?;
    recovery = recovery.max((nf.a - 0.3).abs()).max((nf.b + 0.2).abs()).max((nf.nu - 0.1).abs()).max((nf.kappa - 0.05).abs());
    for _ in 0..4 {
        let b = rng.gen_range(-0.3..0.3);
        let p = LocalModelParams {
            a: rng.gen_range(-0.3..0.3),
            b,
            nu: rng.gen_range(0.05..0.3),
            kappa: -2.0 * b,
            ..LocalModelParams::demo()
        };
        let f = build_local_map(p).map_err(|e| e.to_string())?;
        let nf = normal_form_of(&f)?;
        recovery = recovery.max((nf.a - p.a).abs()).max((nf.b - p.b).abs()).max((nf.nu - p.nu).abs()).max((nf.kappa - p.kappa).abs());

        let lin = random_symplectic(&mut rng, 0.3);
        let mut w = Poly4::zero();
        w.add_term([3, 0, 0, 0], rng.gen_range(-0.2..0.2));
        w.add_term([1, 0, 2, 0], rng.gen_range(-0.2..0.2));
        w.add_term([0, 0, 3, 0], rng.gen_range(-0.2..0.2));
        let shear = PolyShear { w: w.clone(), on_positions: false };
        let unshear = PolyShear { w: w.scale(-1.0), on_positions: false };
        let g = Composition::new(vec![
            Arc::new(shear),
            Arc::new(LinearMap::new(lin, "conjugator")),
            Arc::new(f.clone()),
            Arc::new(LinearMap::new(symplectic_inverse(&lin), "inverse conjugator")),
            Arc::new(unshear),
        ]);
        invariance = invariance.max(coeff_gap(&normal_form_of(&g)?, &nf));
    }
    let res = enumerate_resonances(1.0, 3);
    let expected: std::collections::BTreeSet<String> =
        ["x²y", "x(u²+v²)", "xy²", "y(u²+v²)", "xyu", "xyv", "u(u²+v²)", "v(u²+v²)"].iter().map(|s| s.to_string()).collect();
    let set_ok = res.real_monomials(3) == expected && res.real_monomials(2).is_empty();
    ensure(
        recovery <= 1e-8 && invariance <= 1e-6 && set_ok,
        format!("recovery {recovery:.1e}, conjugation invariance {invariance:.1e}, resonant set exact = {set_ok}"),
    )
}

fn main() {
    let criteria: [(&str, Duration, fn() -> Outcome); 10] = [
        ("1 symplecticity", Duration::from_secs(5), c1_symplecticity),
        ("2 bvp oracle", Duration::from_secs(10), c2_bvp),
        ("3 linearity", Duration::from_secs(10), c3_linearity),
        ("4 scattering", Duration::from_secs(30), c4_scattering),
        ("5 genericity roots", Duration::from_secs(1), c5_genericity),
        ("6 transversality identity", Duration::from_secs(5), c6_transversality),
        ("7 equal action", Duration::from_secs(120), c7_equal_action),
        ("8 four transverse orbits", Duration::from_secs(300), c8_end_to_end),
        ("9 fibre certificates", Duration::from_secs(60), c9_fibers),
        ("10 normal form", Duration::from_secs(30), c10_normal_form),
    ];
    let mut failures = 0;
    for (name, budget, run) in criteria {
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let in_time = elapsed <= budget;
        let (pass, detail) = match outcome {
            Ok(d) => (in_time, d),
            Err(d) => (false, d),
        };
        if !pass {
            failures += 1;
        }
        println!(
            "{} criterion {name}: {detail} [{:.2} s / {} s]",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    println!("{} of 10 criteria pass", 10 - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
