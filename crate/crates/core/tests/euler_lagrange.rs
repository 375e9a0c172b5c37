//! The implemented continuity and phase rates are the exact variations of
//! the discrete action, term by term and in combination.

mod common;

use madelung::fields::{Grid, PhysicsParams, PotentialSpec};
use madelung::model::{Couplings, Model};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn each_coupling_alone() {
    let grid = Grid::line(128, 12.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let params = PhysicsParams::default();
    for k in 0..6 {
        let mut c = [0.0; 6];
        c[k] = 0.05;
        let model = Model::new(&grid, params.clone(), Couplings::from_array(c)).unwrap();
        let state = common::random_smooth_state(&grid, &mut rng);
        let (s, r) = common::euler_lagrange_mismatch(&model, &state);
        assert!(s < 1e-6 && r < 1e-6, "c{}: continuity {s:e}, phase {r:e}", k + 1);
    }
}

#[test]
fn random_couplings_with_potential() {
    let grid = Grid::line(128, 12.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let params = PhysicsParams::new(0.7, 1.3, PotentialSpec::Harmonic { omega: vec![0.4] }).unwrap();
    for _ in 0..3 {
        let c: [f64; 6] = std::array::from_fn(|_| rng.gen_range(-0.1..0.1));
        let model = Model::new(&grid, params.clone(), Couplings::from_array(c)).unwrap();
        let state = common::random_smooth_state(&grid, &mut rng);
        let (s, r) = common::euler_lagrange_mismatch(&model, &state);
        assert!(s < 1e-6 && r < 1e-6, "{c:?}: continuity {s:e}, phase {r:e}");
    }
}
