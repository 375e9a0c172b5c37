//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use madelung::fields::{self, Field, Grid, HydroState};
use madelung::model::Model;
use madelung::dynamics;
use rand::Rng;

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Normalized Gaussian density of standard deviation `sigma` on a pedestal
/// that is `pedestal` times the peak density, with `winding` background
/// wavelengths across the box.
pub fn gaussian(grid: &Grid, sigma: f64, centre: f64, pedestal: f64, winding: i64) -> HydroState {
    let amp = grid.sample(|x| (pedestal + (-(x[0] - centre).powi(2) / (2.0 * sigma * sigma)).exp()).sqrt());
    let k = winding as f64 * grid.fundamental_wavevector()[0];
    let mut s = HydroState::with_background(grid.clone(), amp, vec![0.0; grid.len()], vec![k], 0.0, 0.0).unwrap();
    fields::normalize(&mut s).unwrap();
    s
}

/// Smooth strictly positive random amplitude with a random periodic phase
/// built from the first four Fourier modes.
pub fn random_smooth_state<R: Rng>(grid: &Grid, rng: &mut R) -> HydroState {
    let l = grid.lengths()[0];
    let modes = |rng: &mut R, scale: f64| -> Vec<(f64, f64)> {
        (1..=4).map(|_| (scale * rng.gen_range(-1.0..1.0), rng.gen_range(0.0..2.0 * PI))).collect()
    };
    let ra = modes(rng, 0.15);
    let sa = modes(rng, 0.8);
    let series = |c: &[(f64, f64)], x: f64| -> f64 {
        c.iter()
            .enumerate()
            .map(|(n, (a, p))| a * (2.0 * PI * (n + 1) as f64 * x / l + p).sin())
            .sum()
    };
    let amp = grid.sample(|x| 1.0 + series(&ra, x[0]));
    let phase = grid.sample(|x| series(&sa, x[0]));
    let winding = rng.gen_range(-2i64..=2);
    let k = winding as f64 * grid.fundamental_wavevector()[0];
    HydroState::with_background(grid.clone(), amp, phase, vec![k], 0.0, 0.0).unwrap()
}

/// Fourth-order central difference of the discrete spatial action with
/// respect to one nodal value of `R` (`amplitude == true`) or `S`.
pub fn action_derivative(model: &Model, state: &HydroState, i: usize, amplitude: bool, eps: f64) -> f64 {
    let zero: Field = vec![0.0; state.grid.len()];
    let eval = |delta: f64| {
        let mut s = state.clone();
        if amplitude {
            s.amplitude[i] += delta;
        } else {
            s.phase_residual[i] += delta;
        }
        model.spatial_action(&s, Some(&zero))
    };
    (eval(-2.0 * eps) - 8.0 * eval(-eps) + 8.0 * eval(eps) - eval(2.0 * eps)) / (12.0 * eps)
}

/// Largest relative mismatch between the action derivatives and the
/// implemented rates:
/// `−∂A/∂S_i / (ħh) = ∂ρ/∂t` and `∂A/∂R_i / h = 2ħR ∂S/∂t`.
pub fn euler_lagrange_mismatch(model: &Model, state: &HydroState) -> (f64, f64) {
    let rates = dynamics::rhs(model, state).unwrap();
    let h = state.grid.cell_volume();
    let hbar = model.hbar();
    let n = state.grid.len();
    let from_s: Field = (0..n).map(|i| -action_derivative(model, state, i, false, 1e-4) / (hbar * h)).collect();
    let from_r: Field = (0..n).map(|i| action_derivative(model, state, i, true, 1e-4) / h).collect();
    let expect_r: Field = (0..n)
        .map(|i| 2.0 * hbar * state.amplitude[i] * rates.d_phase_dt[i])
        .collect();
    let rel = |a: &[f64], b: &[f64]| linf(a, b) / max_abs(b).max(1e-300);
    (rel(&from_s, &rates.d_rho_dt), rel(&from_r, &expect_r))
}
