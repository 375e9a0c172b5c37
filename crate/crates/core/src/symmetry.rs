//! Galilean boosts acting on the affine phase background, and the
//! commuting-diagram invariance harness.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::dynamics::{self, IntegratorConfig};
use crate::error::{Error, Result};
use crate::fields::{Grid, HydroState, PhysicsParams};
use crate::model::{Couplings, Model};

/// A frame velocity whose phase `exp(−i m v·x/ħ)` is periodic on the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostSpec {
    velocity: Vec<f64>,
}

impl BoostSpec {
    pub fn new(velocity: Vec<f64>, grid: &Grid, params: &PhysicsParams) -> Result<Self> {
        if velocity.len() != grid.dim() {
            return Err(Error::ShapeMismatch {
                expected: grid.dim(),
                actual: velocity.len(),
            });
        }
        for (axis, (&v, &l)) in velocity.iter().zip(grid.lengths()).enumerate() {
            let winding = params.mass * v * l / (2.0 * PI * params.hbar);
            if !v.is_finite() || (winding - winding.round()).abs() > 1e-9 {
                return Err(Error::InvalidParameter {
                    name: "boost.velocity",
                    reason: format!(
                        "m·v·L/ħ must be a multiple of 2π on axis {axis} (got {:.6}·2π)",
                        winding
                    ),
                });
            }
        }
        Ok(BoostSpec { velocity })
    }

    /// Velocity with `m·v·L/ħ = 2π·winding` on each axis.
    pub fn from_winding(winding: &[i64], grid: &Grid, params: &PhysicsParams) -> Result<Self> {
        let velocity = winding
            .iter()
            .zip(grid.lengths())
            .map(|(&n, &l)| 2.0 * PI * n as f64 * params.hbar / (params.mass * l))
            .collect();
        BoostSpec::new(velocity, grid, params)
    }

    pub fn velocity(&self) -> &[f64] {
        &self.velocity
    }

    pub fn is_identity(&self) -> bool {
        self.velocity.iter().all(|v| *v == 0.0)
    }
}

/// Transform to the frame moving with `spec.velocity`, frames coinciding at
/// `state.t`: `S′ = S − m v·x′/ħ − m v²(t − t_b)/2ħ`, `R` unchanged.
pub fn boost(state: &HydroState, spec: &BoostSpec, params: &PhysicsParams) -> Result<HydroState> {
    if spec.velocity.len() != state.grid.dim() {
        return Err(Error::ShapeMismatch {
            expected: state.grid.dim(),
            actual: spec.velocity.len(),
        });
    }
    let (hbar, mass) = (params.hbar, params.mass);
    let v = &spec.velocity;
    let k0_dot_v: f64 = state.k0.iter().zip(v).map(|(k, v)| k * v).sum();
    let v2: f64 = v.iter().map(|v| v * v).sum();
    let omega0 = state.omega0 - k0_dot_v + mass * v2 / (2.0 * hbar);
    let k0 = state.k0.iter().zip(v).map(|(k, v)| k - mass * v / hbar).collect();
    let shift = (omega0 - state.omega0) * state.t;
    let mut out = state.clone();
    out.k0 = k0;
    out.omega0 = omega0;
    out.phase_residual.iter_mut().for_each(|s| *s += shift);
    Ok(out)
}

/// Result of the commuting-diagram comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    /// Max of the density and phase-gradient deviations.
    pub deviation: f64,
    pub density_deviation: f64,
    pub gradient_deviation: f64,
    pub checkpoints: Vec<f64>,
    pub dt: f64,
}

/// Smallest positive time after which the frame shift `v·t` is a whole
/// number of cells on every axis.
fn cell_period(grid: &Grid, v: &[f64]) -> Result<f64> {
    let (axis, _) = v
        .iter()
        .enumerate()
        .map(|(a, v)| (a, v.abs() / grid.spacing(a)))
        .fold((0, 0.0), |best, cur| if cur.1 > best.1 { cur } else { best });
    let tau = grid.spacing(axis) / v[axis].abs();
    for (a, v) in v.iter().enumerate() {
        let cells = v * tau / grid.spacing(a);
        if (cells - cells.round()).abs() > 1e-9 {
            return Err(Error::Unsupported(format!(
                "frame shift is not a whole number of cells on axis {a}"
            )));
        }
    }
    Ok(tau)
}

fn roll(field: &[f64], grid: &Grid, cells: &[i64]) -> Vec<f64> {
    (0..grid.len())
        .map(|flat| {
            let idx: Vec<usize> = grid
                .unravel(flat)
                .iter()
                .zip(grid.shape())
                .zip(cells)
                .map(|((&i, &n), &c)| (i as i64 + c).rem_euclid(n as i64) as usize)
                .collect();
            field[grid.ravel(&idx)]
        })
        .collect()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Compare [evolve, then boost] with [boost, then evolve] at checkpoints
/// `T = j·τ` where the frame shift `v·T` is a whole number of cells, so the
/// lab-frame state is compared after an exact integer roll.
///
/// `cfg.t_final` bounds the last checkpoint; at least one is required.
pub fn invariance_test(
    initial: &HydroState,
    spec: &BoostSpec,
    params: &PhysicsParams,
    couplings: Couplings,
    cfg: &IntegratorConfig,
) -> Result<InvarianceReport> {
    if !params.potential.is_free() {
        return Err(Error::Unsupported("the invariance harness requires V = 0".into()));
    }
    if spec.is_identity() {
        return Err(Error::InvalidParameter {
            name: "boost.velocity",
            reason: "a zero velocity leaves nothing to compare".into(),
        });
    }
    let grid = &initial.grid;
    let model = Model::new(grid, params.clone(), couplings)?;
    let v = spec.velocity();
    let tau = cell_period(grid, v)?;
    let count = (cfg.t_final / tau + 1e-9).floor() as usize;
    if count == 0 {
        return Err(Error::InvalidParameter {
            name: "integrator.t_final",
            reason: format!("shorter than the first whole-cell checkpoint {tau}"),
        });
    }
    let mut lab = initial.clone();
    lab.t = 0.0;
    let mut moving = boost(&lab, spec, params)?;

    let bound = dynamics::stability_bound(&model, &lab).min(dynamics::stability_bound(&model, &moving));
    let segment = IntegratorConfig {
        t_final: tau,
        ..cfg.clone()
    };
    let (steps, dt) = segment.schedule(bound)?;

    let mut report = InvarianceReport {
        deviation: 0.0,
        density_deviation: 0.0,
        gradient_deviation: 0.0,
        checkpoints: Vec::with_capacity(count),
        dt,
    };
    for j in 1..=count {
        for _ in 0..steps {
            lab = dynamics::step(&model, &lab, dt)?;
            moving = dynamics::step(&model, &moving, dt)?;
        }
        let t = j as f64 * tau;
        let cells: Vec<i64> = v
            .iter()
            .enumerate()
            .map(|(a, v)| (v * t / grid.spacing(a)).round() as i64)
            .collect();
        let rho_lab = roll(&lab.density(), grid, &cells);
        report.density_deviation = report.density_deviation.max(max_diff(&moving.density(), &rho_lab));
        let grad_lab = lab.phase_gradient(model.stencil);
        let grad_moving = moving.phase_gradient(model.stencil);
        for a in 0..grid.dim() {
            let shifted: Vec<f64> = roll(&grad_lab[a], grid, &cells)
                .iter()
                .map(|g| g - params.mass * v[a] / params.hbar)
                .collect();
            report.gradient_deviation = report.gradient_deviation.max(max_diff(&grad_moving[a], &shifted));
        }
        report.checkpoints.push(t);
    }
    report.deviation = report.density_deviation.max(report.gradient_deviation);
    Ok(report)
}

/// L∞ change of `h_I` and `h_R` under a boost at the state's own time,
/// relative to `max(1, max|h|)`.
pub fn source_invariance(model: &Model, state: &HydroState, spec: &BoostSpec) -> Result<f64> {
    let boosted = boost(state, spec, &model.params)?;
    let (h_i, h_r) = (model.h_i(state), model.h_r(state));
    let scale = h_i.iter().chain(&h_r).fold(1.0, |m: f64, v| m.max(v.abs()));
    let hi = max_diff(&h_i, &model.h_i(&boosted));
    let hr = max_diff(&h_r, &model.h_r(&boosted));
    Ok(hi.max(hr) / scale)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Grid {
        Grid::line(64, 10.0).unwrap()
    }

    #[test]
    fn incompatible_velocity_is_rejected() {
        let p = PhysicsParams::default();
        assert!(BoostSpec::new(vec![0.1], &grid(), &p).is_err());
        assert!(BoostSpec::new(vec![2.0 * PI / 10.0 * 3.0], &grid(), &p).is_ok());
        assert!(BoostSpec::new(vec![0.0, 0.0], &grid(), &p).is_err());
    }

    #[test]
    fn zero_velocity_is_identity() {
        let p = PhysicsParams::default();
        let g = grid();
        let mut s = HydroState::new(g.clone(), g.sample(|x| 1.0 + 0.1 * x[0].cos()), g.sample(|x| (x[0] * 0.6283).sin())).unwrap();
        s.t = 0.7;
        s.omega0 = 0.3;
        let b = BoostSpec::new(vec![0.0], &g, &p).unwrap();
        assert_eq!(boost(&s, &b, &p).unwrap(), s);
    }

    #[test]
    fn plane_wave_momentum_shift() {
        let p = PhysicsParams::new(0.5, 2.0, Default::default()).unwrap();
        let g = grid();
        let k = 4.0 * 2.0 * PI / 10.0;
        let s = HydroState::with_background(g.clone(), vec![1.0; 64], vec![0.0; 64], vec![k], 0.5 * k * k / 4.0, 0.0).unwrap();
        let b = BoostSpec::from_winding(&[1], &g, &p).unwrap();
        let out = boost(&s, &b, &p).unwrap();
        let k1 = k - 2.0 * b.velocity()[0] / 0.5;
        assert!((out.k0[0] - k1).abs() < 1e-12);
        // Still a free plane wave: ω = ħk²/2m.
        assert!((out.omega0 - 0.5 * k1 * k1 / 4.0).abs() < 1e-12);
    }

    #[test]
    fn double_boost_is_identity_up_to_phase() {
        let p = PhysicsParams::default();
        let g = grid();
        let mut s = HydroState::new(g.clone(), g.sample(|x| 1.0 + 0.1 * x[0].cos()), g.sample(|x| (x[0] * 0.6283).sin())).unwrap();
        s.t = 1.3;
        let b = BoostSpec::from_winding(&[2], &g, &p).unwrap();
        let back = BoostSpec::new(vec![-b.velocity()[0]], &g, &p).unwrap();
        let out = boost(&boost(&s, &b, &p).unwrap(), &back, &p).unwrap();
        assert!((out.k0[0] - s.k0[0]).abs() < 1e-12);
        let a = s.total_phase();
        let c = out.total_phase();
        let offset = c[0] - a[0];
        assert!(a.iter().zip(&c).all(|(a, c)| (c - a - offset).abs() < 1e-12));
        assert_eq!(out.amplitude, s.amplitude);
    }

    #[test]
    fn sources_are_boost_invariant() {
        let p = PhysicsParams::default();
        let g = grid();
        let s = HydroState::new(g.clone(), g.sample(|x| 1.0 + 0.3 * (x[0] * 0.6283).cos()), g.sample(|x| (x[0] * 0.6283).sin())).unwrap();
        let m = Model::new(&g, p.clone(), Couplings::from_array([0.1, 0.02, 0.03, 0.04, 0.05, 0.06])).unwrap();
        let b = BoostSpec::from_winding(&[3], &g, &p).unwrap();
        assert!(source_invariance(&m, &s, &b).unwrap() < 1e-10);
    }
}
