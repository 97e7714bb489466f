//! Stable and unstable fibres over points of the center manifold with their
//! contraction certificates.

use homoclinic_kam::center_dynamics::{solve_fiber, FiberChart, Tilt};
use homoclinic_kam::homoclinic::Side;
use homoclinic_kam::model_zoo::MapModel;
use nalgebra::{Matrix2, Vector2};

fn main() {
    let model = MapModel::demo();
    let tilt = Tilt { offset: Vector2::new(0.2, -0.1), linear: Matrix2::new(0.3, 0.1, -0.2, 0.4) };
    for side in [Side::Unstable, Side::Stable] {
        for tilted in [false, true] {
            let chart = FiberChart { tilt: tilted.then_some(tilt), ..FiberChart::for_model(&model, side) };
            let base = Vector2::new(0.1, 0.05);
            let f = solve_fiber(&chart, 0.5, 1.0, base, 80).expect("fibre");
            println!(
                "{:8} tilted={tilted:5}  slope ({:+.6}, {:+.6})  α* {:.3}  ρ* {:.3}  τ* {:.3}  oracle {:.1e}  Fenichel {:.1e}  certified {}",
                side.label(),
                f.direction()[0],
                f.direction()[1],
                f.alpha_star,
                f.rho_star,
                f.tau_star,
                f.oracle_error,
                f.fenichel_residual,
                f.certified()
            );
        }
    }
}
