//! Roots of |A(cos θ, sin θ)|² = 1 for a few unimodular matrices.

use homoclinic_kam::scattering::genericity_of_matrix;
use homoclinic_kam::symplectic_core::rotation;
use nalgebra::Matrix2;

fn main() {
    let cases = [
        ("diag(3/2, 2/3)", Matrix2::new(1.5, 0.0, 0.0, 2.0 / 3.0)),
        ("rotation(0.7)", rotation(0.7)),
        ("shear", Matrix2::new(1.0, 0.5, 0.0, 1.0)),
        ("rotated hyperbolic", rotation(0.4) * Matrix2::new(2.0, 0.0, 0.0, 0.5) * rotation(-1.1)),
        ("near rotation", rotation(0.3) * Matrix2::new(1.0 + 1e-9, 0.0, 0.0, 1.0 / (1.0 + 1e-9))),
    ];
    for (name, a) in cases {
        let r = genericity_of_matrix(&a);
        let roots: Vec<String> = r.roots.iter().map(|t| format!("{t:.6}")).collect();
        println!("{name:20} {:20} roots [{}] min angle {:.3e}", r.class.label(), roots.join(", "), r.min_angle);
    }
}
