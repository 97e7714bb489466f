//! Assembles the homoclinic orbit of the demo model and writes it as CSV.

use homoclinic_kam::homoclinic::{assemble_homoclinic_orbit, continue_manifold_curve, Side};
use homoclinic_kam::model_zoo::MapModel;

fn main() {
    let model = MapModel::demo();
    let orbit = assemble_homoclinic_orbit(&model, 40).expect("orbit");
    println!("anchor q₋ = {:?}", orbit.point(orbit.gluing_index));
    println!("anchor q₊ = {:?}", orbit.point(orbit.gluing_index + 1));
    println!("decay rate {:.6} (forward fit {:.6}, backward fit {:.6})", orbit.decay_rate(), orbit.forward_fit.rate, orbit.backward_fit.rate);
    println!("max step residual {:.2e}", orbit.step_residual);
    for side in [Side::Unstable, Side::Stable] {
        let c = continue_manifold_curve(&model, side, 1.0).expect("manifold");
        println!("{} curve: {} samples, tangent error {:.1e}, off-axis {:.1e}", side.label(), c.points.len(), c.tangent_error, c.off_axis);
    }
    println!("n,x,y,u,v");
    for n in orbit.indices().filter(|n| n.abs() <= 6) {
        let p = orbit.point(n);
        println!("{n},{:.6e},{:.6e},{:.6e},{:.6e}", p.x, p.y, p.u, p.v);
    }
}
