//! Traces of one KAM cylinder pair on the homoclinic disk, their enclosed
//! actions and their transverse crossings.

use homoclinic_kam::center_dynamics::{analyze_action, restrict_to_center, KamCriteria};
use homoclinic_kam::homoclinic::{assemble_homoclinic_orbit, Side};
use homoclinic_kam::model_zoo::MapModel;
use homoclinic_kam::scattering::build_scattering_map;
use homoclinic_kam::sigma_analysis::{build_sigma_disk, count_transverse_intersections, enclosed_action, trace_manifold_on_sigma};

fn main() {
    let model = MapModel::demo();
    let orbit = assemble_homoclinic_orbit(&model, 60).expect("orbit");
    let cm = restrict_to_center(&model).expect("center map");
    let gamma = analyze_action(&cm, 0.5, &KamCriteria::default());
    println!("KAM curve I = 0.5: {}, rotation number {:.10}", gamma.verdict.label(), gamma.rotation_number);
    let disk = build_sigma_disk(&model, &orbit, 0.27).expect("Σ disk");
    println!("Σ interpolation error {:.1e}, quadratic bound {:.1e}", disk.interpolation_error, disk.quadratic_bound);
    let ws = trace_manifold_on_sigma(&model, &cm, &disk, &gamma, Side::Stable, 256).expect("stable trace");
    let wu = trace_manifold_on_sigma(&model, &cm, &disk, &gamma, Side::Unstable, 256).expect("unstable trace");
    println!("areas: stable {:.12}, unstable {:.12}", enclosed_action(&ws).unwrap(), enclosed_action(&wu).unwrap());
    let s = build_scattering_map(&model, &orbit, 4, None).expect("scattering");
    let rep = count_transverse_intersections(&ws, &wu, &s).expect("intersections");
    println!("{} crossings (predicted {:?})", rep.count(), rep.predicted_count);
    for c in &rep.crossings {
        println!("  at ({:+.6}, {:+.6}) angle {:.4} bearing {:.4} matched root {:?}", c.point[0], c.point[1], c.angle, c.bearing, c.matched_root);
    }
}
