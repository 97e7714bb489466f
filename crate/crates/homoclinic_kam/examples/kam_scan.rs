//! KAM scan of the center map restricted from the demo model.

use homoclinic_kam::center_dynamics::{annulus_grid, detect_kam_curves, restrict_to_center, KamCriteria};
use homoclinic_kam::model_zoo::MapModel;

fn main() {
    let model = MapModel::demo();
    let cm = restrict_to_center(&model).expect("center restriction");
    println!("center map area defect {:.1e}", cm.area_defect);
    let curves = detect_kam_curves(&cm, &annulus_grid(1.0, 8), &KamCriteria::default());
    println!("I,rotation_number,verdict,invariance_residual,partial_quotients");
    for c in &curves {
        println!("{:.4},{:.12},{},{:.1e},{:?}", c.action, c.rotation_number, c.verdict.label(), c.invariance_residual, c.partial_quotients);
    }
}
