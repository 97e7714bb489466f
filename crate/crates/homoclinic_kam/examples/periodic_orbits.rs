//! Birkhoff periodic orbits of a kicked twist map in the 1:5 resonance zone.

use std::f64::consts::PI;

use homoclinic_kam::center_dynamics::{find_periodic_orbits, CenterMap};

fn main() {
    let cm = CenterMap::kicked_twist(1.0, 1.0, 0.05, 5);
    let r_res = (2.0 * PI / 5.0 - 1.0f64).sqrt();
    let scan = find_periodic_orbits(&cm, 1, 5, 0.9 * r_res, 1.1 * r_res);
    println!("resonant radius {r_res:.6}; {} orbits, {} failed seeds", scan.orbits.len(), scan.failed_seeds);
    for o in &scan.orbits {
        let p = o.points[0];
        println!("{:?}  start ({:+.6}, {:+.6})  trace {:+.6}  residual {:.1e}", o.class, p[0], p[1], o.trace, o.residual);
    }
    let flat = find_periodic_orbits(&CenterMap::twist(1.0, 1.0), 1, 5, 0.9 * r_res, 1.1 * r_res);
    println!("unkicked twist: degenerate family = {}", flat.degenerate_family);
}
