//! Evolution against analytic solutions and exact symmetries.

mod common;

use std::f64::consts::PI;

use madelung::dynamics::{self, IntegratorConfig};
use madelung::fields::{self, Grid, HydroState, PhysicsParams};
use madelung::model::{Couplings, Model};

/// Complex conjugate of `Ψ`, restarted at `t = 0`.
fn conjugate(s: &HydroState) -> HydroState {
    let residual = s.phase_residual.iter().map(|r| s.omega0 * s.t - r).collect();
    let k0 = s.k0.iter().map(|k| -k).collect();
    HydroState::with_background(s.grid.clone(), s.amplitude.clone(), residual, k0, -s.omega0, 0.0).unwrap()
}

fn wavefunction_distance(a: &HydroState, b: &HydroState) -> f64 {
    let (ar, ai) = fields::to_wavefunction(a);
    let (br, bi) = fields::to_wavefunction(b);
    common::linf(&ar, &br).max(common::linf(&ai, &bi))
}

/// Evolve for `t`, conjugate, evolve for `t` again and conjugate back.
fn reversal_error(c: Couplings) -> f64 {
    let grid = Grid::line(128, 32.0).unwrap();
    let initial = common::gaussian(&grid, 2.0, 0.0, 0.05, 2);
    let model = Model::new(&grid, PhysicsParams::default(), c).unwrap();
    let bound = dynamics::stability_bound(&model, &initial);
    let cfg = IntegratorConfig::new(0.5).with_dt((0.25 * bound).min(2e-4));
    let there = dynamics::evolve(&model, &initial, &cfg).unwrap();
    let back = dynamics::evolve(&model, &conjugate(there.last().unwrap()), &cfg).unwrap();
    let mut returned = conjugate(back.last().unwrap());
    returned.t = initial.t;
    wavefunction_distance(&returned, &initial)
}

#[test]
fn time_reversal_holds_without_c2_c3() {
    let err = reversal_error(Couplings::from_array([0.01, 0.0, 0.0, 0.01, -0.01, 0.01]));
    assert!(err < 1e-9, "return error {err:e}");
}

#[test]
fn c3_breaks_time_reversal() {
    let symmetric = reversal_error(Couplings::from_array([0.01, 0.0, 0.0, 0.0, 0.0, 0.0]));
    let broken = reversal_error(Couplings::from_array([0.01, 0.0, 0.01, 0.0, 0.0, 0.0]));
    assert!(broken > 1e4 * symmetric.max(1e-14), "{broken:e} vs {symmetric:e}");
}

#[test]
fn free_packet_matches_analytic_spreading() {
    let (sigma, winding, t) = (2.0f64, 2, 1.0);
    let grid = Grid::line(256, 40.0).unwrap();
    let initial = common::gaussian(&grid, sigma, 0.0, 0.0, winding);
    let k = initial.k0[0];
    let model = Model::new(&grid, PhysicsParams::default(), Couplings::LINEAR).unwrap();
    let traj = dynamics::evolve(&model, &initial, &IntegratorConfig::new(t).every(1000, 50)).unwrap();
    // ħ = m = 1: the centre moves at k and the density variance grows as
    // σ²(1 + (t/2σ²)²).
    let var = sigma * sigma * (1.0 + (t / (2.0 * sigma * sigma)).powi(2));
    let expected = grid.sample(|x| {
        let d = (x[0] - k * t + 20.0).rem_euclid(40.0) - 20.0;
        (-d * d / (2.0 * var)).exp() / (2.0 * PI * var).sqrt()
    });
    let err = common::linf(&traj.last().unwrap().density(), &expected);
    assert!(err < 1e-6, "density error {err:e}");
    let e0 = traj.diagnostics[0].e_ft;
    let drift = traj.diagnostics.iter().fold(0.0f64, |m, d| m.max((d.e_ft - e0).abs() / e0));
    assert!(drift < 1e-6, "e_ft drift {drift:e}");
}

/// With `c2 ≠ 0` a mode of symbol `Λ` on a uniform background grows at
/// `sqrt(a² − b²)`, `a = c2 Λ_L²/(2ħρ₀)`, `b = ħΛ_DD/2m`, whenever `a > b`.
#[test]
fn c2_short_waves_grow_at_the_linearized_rate() {
    // A coarse grid keeps rounding noise in faster modes from overtaking.
    let (n, length, mode, c2) = (16, 16.0, 4usize, 0.05);
    let grid = Grid::line(n, length).unwrap();
    let h = grid.spacing(0);
    let theta = 2.0 * PI * mode as f64 / n as f64;
    let lam_l = (30.0 - 32.0 * theta.cos() + 2.0 * (2.0 * theta).cos()) / (12.0 * h * h);
    let lam_dd = ((8.0 * theta.sin() - (2.0 * theta).sin()) / (6.0 * h)).powi(2);
    let rho0 = 1.0 / length;
    let r0 = rho0.sqrt();
    let (a, b) = (c2 * lam_l * lam_l / (2.0 * rho0), 0.5 * lam_dd);
    assert!(a > b);
    let rate = (a * a - b * b).sqrt();
    // Growing eigenvector: (rate − a) r = b R₀ s.
    let eps = 1e-7;
    let shape = grid.sample(|x| (2.0 * PI * mode as f64 * x[0] / length).sin());
    let amp = shape.iter().map(|v| r0 + eps * v).collect();
    let phase = shape.iter().map(|v| eps * v * (rate - a) / (b * r0)).collect();
    let initial = HydroState::new(grid.clone(), amp, phase).unwrap();
    let model = Model::new(&grid, PhysicsParams::default(), Couplings::from_array([0.0, c2, 0.0, 0.0, 0.0, 0.0])).unwrap();
    let t = 2.0 / rate;
    let last = dynamics::evolve(&model, &initial, &IntegratorConfig::new(t)).unwrap().last().unwrap().clone();
    let project = |s: &HydroState| {
        s.amplitude.iter().zip(&shape).map(|(r, v)| (r - r0) * v).sum::<f64>()
    };
    let measured = (project(&last) / project(&initial)).ln() / t;
    assert!((measured / rate - 1.0).abs() < 1e-3, "measured {measured}, predicted {rate}");
}

#[test]
fn nonlinear_norm_is_conserved_in_two_dimensions() {
    let grid = Grid::new(vec![32, 32], vec![16.0, 16.0]).unwrap();
    let amp = grid.sample(|x| (0.02 + (-(x[0] * x[0] + x[1] * x[1]) / 4.0).exp()).sqrt());
    let phase = grid.sample(|x| 0.5 * (2.0 * PI * x[0] / 16.0).sin() * (2.0 * PI * x[1] / 16.0).cos());
    let mut initial = HydroState::new(grid.clone(), amp, phase).unwrap();
    fields::normalize(&mut initial).unwrap();
    let c = Couplings::from_array([0.01, 0.0, 0.0, 0.01, 0.0, 0.0]);
    let model = Model::new(&grid, PhysicsParams::default(), c).unwrap();
    let traj = dynamics::evolve(&model, &initial, &IntegratorConfig::new(0.2)).unwrap();
    for d in &traj.diagnostics {
        assert!((d.norm - 1.0).abs() < 1e-10, "norm {} at t = {}", d.norm, d.t);
    }
}
