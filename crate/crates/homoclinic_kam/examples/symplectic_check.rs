//! Symplecticity of the local and global maps of the demo model at random points.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use homoclinic_kam::model_zoo::MapModel;
use homoclinic_kam::symplectic_core::{check_symplectic_block_identities, Jacobian4, PhasePoint, SmoothMap4};

fn main() {
    let model = MapModel::demo();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (mut local, mut global, mut blocks): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..1000 {
        let p = PhasePoint::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let jl = Jacobian4(model.local.jacobian_at(&p));
        let jg = Jacobian4(model.global.jacobian_at(&p));
        local = local.max(jl.symplectic_residual());
        global = global.max(jg.symplectic_residual());
        let b = check_symplectic_block_identities(&jg, 1e-10);
        blocks = blocks.max(b.ac_symmetry).max(b.bd_symmetry).max(b.unimodularity);
    }
    println!("local map   max |JᵀΩJ − Ω| = {local:.3e}");
    println!("global map  max |JᵀΩJ − Ω| = {global:.3e}");
    println!("block identities of the global Jacobian: {blocks:.3e}");
}
