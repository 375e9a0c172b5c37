//! Each nonlinear source term against an independent spectral evaluation
//! of the closed-form expressions on a smooth periodic state. The finite
//! difference result must converge to the oracle at fourth order.

mod common;

use std::f64::consts::PI;

use madelung::fields::{Grid, HydroState, PhysicsParams};
use madelung::model::{Couplings, Model};
use num_complex::Complex64;
use rustfft::FftPlanner;

const LENGTH: f64 = 10.0;

/// Spectral first derivative of a periodic sample.
fn d(f: &[f64]) -> Vec<f64> {
    let n = f.len();
    let mut planner = FftPlanner::new();
    let mut buf: Vec<Complex64> = f.iter().map(|v| Complex64::new(*v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    for (j, c) in buf.iter_mut().enumerate() {
        let m = if j <= n / 2 { j as f64 } else { j as f64 - n as f64 };
        let k = if j == n / 2 { 0.0 } else { 2.0 * PI * m / LENGTH };
        *c *= Complex64::new(0.0, k) / n as f64;
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|c| c.re).collect()
}

fn lap(f: &[f64]) -> Vec<f64> {
    d(&d(f))
}

fn zip(a: &[f64], b: &[f64], op: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| op(*x, *y)).collect()
}

fn state(n: usize) -> HydroState {
    let grid = Grid::line(n, LENGTH).unwrap();
    let k = 2.0 * PI / LENGTH;
    let r = grid.sample(|x| 1.0 + 0.2 * (k * x[0]).cos() + 0.1 * (2.0 * k * x[0] + 0.3).sin());
    let s = grid.sample(|x| 0.5 * (k * x[0]).sin() + 0.2 * (3.0 * k * x[0]).cos());
    HydroState::new(grid, r, s).unwrap()
}

/// `h_I = c1 ΔΔS·2 + c2 Δ(ΔR/R) + c3 Δ(∇R/R)²` evaluated spectrally.
fn oracle_h_i(c: &Couplings, s: &HydroState) -> Vec<f64> {
    let (r, ph) = (&s.amplitude, &s.phase_residual);
    let p = zip(&lap(r), r, |a, b| a / b);
    let q: Vec<f64> = zip(&d(r), r, |a, b| (a / b).powi(2));
    let t1 = lap(&lap(ph));
    let t2 = lap(&p);
    let t3 = lap(&q);
    (0..r.len()).map(|i| 2.0 * c.c1 * t1[i] + c.c2 * t2[i] + c.c3 * t3[i]).collect()
}

/// `h_R = R·{…}` with the braces of the stated amplitude equation, the
/// leading `c2` term taken with unit weight.
fn oracle_h_r(c: &Couplings, s: &HydroState) -> Vec<f64> {
    let (r, ph) = (&s.amplitude, &s.phase_residual);
    let n = r.len();
    let dr = d(r);
    let lr = lap(r);
    let ls = lap(ph);
    let g: Vec<f64> = zip(&dr, r, |a, b| a / b);
    let p: Vec<f64> = zip(&lr, r, |a, b| a / b);

    let a2 = lap(&zip(&ls, r, |a, b| a / b));
    let a4 = lap(&(0..n).map(|i| lr[i] / (r[i] * r[i])).collect::<Vec<_>>());
    let a5 = lap(&(0..n).map(|i| g[i] * g[i] / r[i]).collect::<Vec<_>>());
    let flux: Vec<f64> = (0..n)
        .map(|i| {
            2.0 * c.c3 * ls[i] * dr[i] / (r[i] * r[i])
                + 2.0 * c.c5 * lr[i] * dr[i] / r[i].powi(3)
                + 4.0 * c.c6 * g[i].powi(3) / r[i]
        })
        .collect();
    let div = d(&flux);
    (0..n)
        .map(|i| {
            let local = c.c2 * ls[i] * p[i]
                + 2.0 * c.c3 * ls[i] * g[i] * g[i]
                + 2.0 * c.c4 * p[i] * p[i]
                + 3.0 * c.c5 * p[i] * g[i] * g[i]
                + 4.0 * c.c6 * g[i].powi(4);
            let brace = c.c2 * a2[i] + 2.0 * c.c4 * a4[i] + c.c5 * a5[i] - div[i] - local / r[i];
            r[i] * brace
        })
        .collect()
}

fn relative_errors(c: Couplings, n: usize) -> (f64, f64) {
    let s = state(n);
    let model = Model::new(&s.grid, PhysicsParams::default(), c).unwrap();
    let (hi, hr) = (model.h_i(&s), model.h_r(&s));
    let (oi, or) = (oracle_h_i(&c, &s), oracle_h_r(&c, &s));
    let rel = |a: &[f64], b: &[f64]| {
        let scale = common::max_abs(b);
        if scale == 0.0 {
            common::max_abs(a)
        } else {
            common::linf(a, b) / scale
        }
    };
    (rel(&hi, &oi), rel(&hr, &or))
}

#[test]
fn per_term_goldens_converge_at_fourth_order() {
    for k in 0..6 {
        let mut c = [0.0; 6];
        c[k] = 1.0;
        let c = Couplings::from_array(c);
        let (i_coarse, r_coarse) = relative_errors(c, 128);
        let (i_fine, r_fine) = relative_errors(c, 256);
        assert!(i_fine < 3e-5 && r_fine < 3e-5, "c{}: h_I {i_fine:e}, h_R {r_fine:e}", k + 1);
        for (name, coarse, fine) in [("h_I", i_coarse, i_fine), ("h_R", r_coarse, r_fine)] {
            if coarse > 1e-11 {
                let ratio = coarse / fine;
                assert!(ratio > 14.0, "c{} {name}: refinement ratio {ratio}", k + 1);
            }
        }
    }
}

#[test]
fn stated_c2_weight_disagrees() {
    // Doubling the leading c2 term moves h_R far outside discretization error.
    let c = Couplings::from_array([0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    let s = state(256);
    let model = Model::new(&s.grid, PhysicsParams::default(), c).unwrap();
    let ours = model.h_r(&s);
    let extra: Vec<f64> = {
        let ls = lap(&s.phase_residual);
        let a2 = lap(&zip(&ls, &s.amplitude, |a, b| a / b));
        (0..s.grid.len()).map(|i| s.amplitude[i] * a2[i]).collect()
    };
    let stated: Vec<f64> = oracle_h_r(&c, &s).iter().zip(&extra).map(|(a, b)| a + b).collect();
    assert!(common::linf(&ours, &stated) / common::max_abs(&stated) > 1e-2);
}
