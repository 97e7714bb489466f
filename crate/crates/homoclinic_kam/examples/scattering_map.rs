//! Scattering map of the center plane along the homoclinic orbit, its
//! stabilization in N and the transversality determinant.

use homoclinic_kam::homoclinic::assemble_homoclinic_orbit;
use homoclinic_kam::model_zoo::{build_model, coupling_shear, default_global_matrix, GlobalMapSpec, LocalModelParams};
use homoclinic_kam::scattering::{build_scattering_map, check_transversality, scattering_from_sequence, synthetic_sequence};
use nalgebra::Matrix2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let b = Matrix2::new(1.5, 0.0, 0.0, 1.0 / 1.5);
    let m = default_global_matrix(1.0, &b, 0.0) * coupling_shear(0.2);
    let model = build_model(LocalModelParams::demo(), GlobalMapSpec { m, ..GlobalMapSpec::demo() }, 0.3).expect("model");
    let orbit = assemble_homoclinic_orbit(&model, 80).expect("orbit");
    for n in [4, 8, 12, 16] {
        let s = build_scattering_map(&model, &orbit, n, None).expect("scattering map");
        println!(
            "N = {n:2}  T = {:2}  A = [{:+.12} {:+.12}; {:+.12} {:+.12}]  |det A − 1| = {:.1e}  Lipschitz {:.3}",
            s.truncation, s.a[(0, 0)], s.a[(0, 1)], s.a[(1, 0)], s.a[(1, 1)], s.det_residual, s.max_lipschitz
        );
    }
    println!("linearization with coupling decaying like 0.7^|n|:");
    let seq = synthetic_sequence(0.5, 1.0, 80, 0.5, 0.7, &mut ChaCha8Rng::seed_from_u64(4)).expect("sequence");
    let mut prev: Option<Matrix2<f64>> = None;
    for n in (4..=16).step_by(2) {
        let s = scattering_from_sequence(&seq, n, 50, -1).expect("scattering map");
        let step = prev.map(|p| (s.a - p).amax()).unwrap_or(f64::NAN);
        println!("N = {n:2}  A = [{:+.10} {:+.10}; {:+.10} {:+.10}]  |A_N − A_(N−2)| = {step:.2e}", s.a[(0, 0)], s.a[(0, 1)], s.a[(1, 0)], s.a[(1, 1)]);
        prev = Some(s.a);
    }
    let t = check_transversality(&model, &orbit, 4).expect("transversality");
    println!("d11 = {:.6}, direct determinant = {:.6}, |Δ − d11²| = {:.1e}, pass = {}", t.d11, t.direct_determinant, t.identity_error, t.pass);
}
