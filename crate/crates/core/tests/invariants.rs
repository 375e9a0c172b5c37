//! Property tests for the discrete operators and the model's structural
//! invariants.

mod common;

use std::f64::consts::PI;

use madelung::calculus::{self, StencilConfig};
use madelung::fields::{self, Grid, HydroState, PhysicsParams};
use madelung::model::{Couplings, Model};
use madelung::separability;
use madelung::symmetry::{self, BoostSpec};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn stencils() -> impl Strategy<Value = StencilConfig> {
    prop_oneof![Just(StencilConfig::SECOND), Just(StencilConfig::FOURTH)]
}

fn periodic_field(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0..1.0f64, n)
}

fn couplings() -> impl Strategy<Value = Couplings> {
    prop::array::uniform6(-0.2..0.2f64).prop_map(Couplings::from_array)
}

fn smooth_state(seed: u64, n: usize, length: f64) -> HydroState {
    let grid = Grid::line(n, length).unwrap();
    common::random_smooth_state(&grid, &mut ChaCha8Rng::seed_from_u64(seed))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn wavefunction_round_trip(seed in any::<u64>(), winding in -3i64..=3) {
        let mut s = smooth_state(seed, 64, 9.0);
        s.k0 = vec![winding as f64 * s.grid.fundamental_wavevector()[0]];
        let (re, im) = fields::to_wavefunction(&s);
        let back = fields::from_wavefunction_with_background(&re, &im, &s.grid, &s.k0).unwrap();
        prop_assert!(common::linf(&back.amplitude, &s.amplitude) < 1e-12);
        for (a, b) in back.total_phase().iter().zip(s.total_phase()) {
            let d = (a - b).rem_euclid(2.0 * PI);
            prop_assert!(d.min(2.0 * PI - d) < 1e-10);
        }
    }

    #[test]
    fn normalization(seed in any::<u64>(), factor in 0.01..100.0f64) {
        let mut s = smooth_state(seed, 48, 5.0);
        s.amplitude.iter_mut().for_each(|r| *r *= factor);
        fields::normalize(&mut s).unwrap();
        prop_assert!((fields::norm(&s) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn first_derivative_is_antisymmetric(f in periodic_field(40), g in periodic_field(40), cfg in stencils()) {
        let grid = Grid::line(40, 7.0).unwrap();
        let lhs = calculus::inner(&f, &calculus::derivative(&g, &grid, 0, cfg), &grid);
        let rhs = -calculus::inner(&calculus::derivative(&f, &grid, 0, cfg), &g, &grid);
        prop_assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn laplacian_is_symmetric_and_conservative(f in periodic_field(36), g in periodic_field(36), cfg in stencils()) {
        let grid = Grid::new(vec![6, 6], vec![3.0, 4.0]).unwrap();
        let lf = calculus::laplacian(&f, &grid, cfg);
        let lg = calculus::laplacian(&g, &grid, cfg);
        prop_assert!((calculus::inner(&f, &lg, &grid) - calculus::inner(&lf, &g, &grid)).abs() < 1e-10);
        prop_assert!(calculus::integrate(&lf, &grid).abs() < 1e-11);
        prop_assert!(calculus::integrate(&calculus::div_grad(&f, &grid, cfg), &grid).abs() < 1e-11);
    }

    #[test]
    fn sources_are_scale_free_and_hamiltonian_is_not(seed in any::<u64>(), c in couplings()) {
        let s = smooth_state(seed, 64, 8.0);
        let model = Model::new(&s.grid, PhysicsParams::default(), c).unwrap();
        let h_i = model.h_i(&s);
        let h_r = model.h_r(&s);
        let (re, im) = model.nonlinear_hamiltonian(&s);
        let density = model.coupling_density(&model.derived(&s));
        let tol = |f: &[f64]| 1e-9 * (1.0 + common::max_abs(f));
        for lambda in [0.5, 2.0, 10.0] {
            let mut scaled = s.clone();
            scaled.amplitude.iter_mut().for_each(|r| *r *= lambda);
            prop_assert!(common::linf(&h_i, &model.h_i(&scaled)) < tol(&h_i), "h_I, λ = {}", lambda);
            prop_assert!(common::linf(&h_r, &model.h_r(&scaled)) < tol(&h_r), "h_R, λ = {}", lambda);
            let d2 = model.coupling_density(&model.derived(&scaled));
            prop_assert!(common::linf(&density, &d2) < tol(&density));
            // H'_NL = h / 2R² is homogeneous of degree -2, unlike the linear terms.
            let (re2, im2) = model.nonlinear_hamiltonian(&scaled);
            let k = lambda * lambda;
            let re2: Vec<f64> = re2.iter().map(|v| v * k).collect();
            let im2: Vec<f64> = im2.iter().map(|v| v * k).collect();
            prop_assert!(common::linf(&re, &re2) < tol(&re), "Re H', λ = {}", lambda);
            prop_assert!(common::linf(&im, &im2) < tol(&im), "Im H', λ = {}", lambda);
        }
    }

    #[test]
    fn continuity_source_integrates_to_zero(seed in any::<u64>(), c in couplings()) {
        let s = smooth_state(seed, 64, 8.0);
        let model = Model::new(&s.grid, PhysicsParams::default(), c).unwrap();
        let h_i = model.h_i(&s);
        prop_assert!(calculus::integrate(&h_i, &s.grid).abs() < 1e-10 * (1.0 + common::max_abs(&h_i)));
    }

    #[test]
    fn sources_are_boost_invariant(seed in any::<u64>(), c in couplings(), winding in -4i64..=4) {
        prop_assume!(winding != 0);
        let s = smooth_state(seed, 64, 8.0);
        let p = PhysicsParams::default();
        let model = Model::new(&s.grid, p.clone(), c).unwrap();
        let spec = BoostSpec::from_winding(&[winding], &s.grid, &p).unwrap();
        prop_assert!(symmetry::source_invariance(&model, &s, &spec).unwrap() < 1e-10);
    }

    #[test]
    fn products_are_uncorrelated(a in any::<u64>(), b in any::<u64>()) {
        let s1 = smooth_state(a, 24, 6.0);
        let s2 = smooth_state(b, 20, 5.0);
        let joint = separability::tensor_product(&s1, &s2).unwrap();
        prop_assert!(separability::correlation_metric(&joint) < 1e-12);
    }
}
