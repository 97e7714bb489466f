//! Recovers the third-order normal-form coefficients of a saddle-center map and
//! lists the resonant cubic monomials.

use homoclinic_kam::fixed_point_analysis::{classify_spectrum, enumerate_resonances, extract_normal_form};
use homoclinic_kam::model_zoo::{build_local_map, LocalModelParams};
use homoclinic_kam::symplectic_core::{PhasePoint, SmoothMap4};

fn main() {
    let params = LocalModelParams { a: 0.3, b: -0.2, nu: 0.1, kappa: 0.4, ..LocalModelParams::demo() };
    let map = build_local_map(params).expect("valid parameters");
    let spectrum = classify_spectrum(&map.jacobian_at(&PhasePoint::origin())).expect("1-elliptic");
    println!("multipliers: μ = {:.12}, α = {:.12}", spectrum.mu, spectrum.alpha);
    let nf = extract_normal_form(&map, &spectrum).expect("normal form");
    println!("a  = {:+.10} (built with {:+})", nf.a, params.a);
    println!("b  = {:+.10} (built with {:+})", nf.b, params.b);
    println!("ν  = {:+.10} (built with {:+})", nf.nu, params.nu);
    println!("κ  = {:+.10} (built with {:+})", nf.kappa, params.kappa);
    println!("reduction residual {:.2e}, twist certified: {}", nf.residual, nf.twist_certified());
    let res = enumerate_resonances(spectrum.alpha, 3);
    println!("resonant cubic monomials: {:?}", res.real_monomials(3));
    println!("strong resonance present: {}", res.has_strong());
}
