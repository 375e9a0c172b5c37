//! Time evolution of the coupled `(ρ, S)` system and the linear split-step
//! reference evolver.

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::calculus;
use crate::error::{Error, Result};
use crate::fields::{self, Field, HydroState, PhysicsParams};
use crate::model::{Couplings, Model};
use crate::observables::{self, DiagnosticsRecord};
use crate::spectral::{self, Spectral};

/// RK4 stability limit on the imaginary axis (2√2).
const RK4_IMAGINARY_LIMIT: f64 = 2.828;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema, Default)]
pub enum Scheme {
    #[default]
    #[serde(rename = "rk4", alias = "RK4")]
    Rk4,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    #[serde(default)]
    pub scheme: Scheme,
    /// Fixed step; derived from the stability bound when absent.
    #[serde(default)]
    pub dt: Option<f64>,
    pub t_final: f64,
    #[serde(default = "default_stability_factor")]
    pub stability_factor: f64,
    #[serde(default = "default_every")]
    pub snapshot_every: usize,
    #[serde(default = "default_every")]
    pub diagnostics_every: usize,
}

fn default_stability_factor() -> f64 {
    0.5
}

fn default_every() -> usize {
    10
}

impl IntegratorConfig {
    pub fn new(t_final: f64) -> Self {
        IntegratorConfig {
            scheme: Scheme::Rk4,
            dt: None,
            t_final,
            stability_factor: default_stability_factor(),
            snapshot_every: default_every(),
            diagnostics_every: default_every(),
        }
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = Some(dt);
        self
    }

    pub fn every(mut self, snapshots: usize, diagnostics: usize) -> Self {
        self.snapshot_every = snapshots;
        self.diagnostics_every = diagnostics;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &'static str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidParameter {
                    name,
                    reason: format!("must be positive (got {v})"),
                })
            }
        };
        positive("integrator.t_final", self.t_final)?;
        positive("integrator.stability_factor", self.stability_factor)?;
        if let Some(dt) = self.dt {
            positive("integrator.dt", dt)?;
        }
        if self.snapshot_every == 0 || self.diagnostics_every == 0 {
            return Err(Error::InvalidParameter {
                name: "integrator.snapshot_every",
                reason: "cadences must be at least one step".into(),
            });
        }
        Ok(())
    }

    /// Step count and uniform step size reaching `t_final` exactly.
    pub fn schedule(&self, bound: f64) -> Result<(usize, f64)> {
        self.validate()?;
        let limit = self.stability_factor * bound;
        let dt = match self.dt {
            Some(dt) if dt > limit => return Err(Error::StepTooLarge { dt, bound: limit }),
            Some(dt) => dt,
            None => limit,
        };
        let steps = (self.t_final / dt - 1e-9).ceil().max(1.0) as usize;
        Ok((steps, self.t_final / steps as f64))
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Trajectory {
    pub snapshots: Vec<HydroState>,
    pub diagnostics: Vec<DiagnosticsRecord>,
}

impl Trajectory {
    pub fn last(&self) -> Option<&HydroState> {
        self.snapshots.last()
    }
}

/// Time derivatives of the density and of the total phase.
#[derive(Debug, Clone)]
pub struct Rates {
    pub d_rho_dt: Field,
    pub d_phase_dt: Field,
}

fn check_finite(field: &[f64], term: &'static str, t: f64) -> Result<()> {
    if field.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { term, t })
    }
}

/// Continuity and phase equations:
///
/// `∂ρ/∂t = [−(ħ²/m)∇·(ρ∇S) + h_I]/ħ`,
/// `∂S/∂t = (ħ/2m)(ΔR/R − (∇S)²) − V/ħ − h_R/(2ħR²)`.
pub fn rhs(model: &Model, state: &HydroState) -> Result<Rates> {
    let g = &state.grid;
    let cfg = model.stencil;
    let (hbar, mass) = (model.hbar(), model.mass());
    let t = state.t;
    let d = model.derived(state);
    let n = g.len();

    let flux: Vec<Field> = d
        .grad_s
        .iter()
        .map(|gs| gs.iter().zip(&state.amplitude).map(|(s, r)| r * r * s).collect())
        .collect();
    let transport = calculus::divergence(&flux, g, cfg);
    check_finite(&transport, "kinetic flux", t)?;
    let h_i = model.h_i_from(&d);
    check_finite(&h_i, "h_I", t)?;
    let h_r = model.h_r_from(&state.amplitude, &d);
    check_finite(&h_r, "h_R", t)?;

    let grad_s2 = calculus::squared_magnitude(&d.grad_s);
    let quantum: Field = (0..n).map(|i| d.div_grad_r[i] / d.clamped[i]).collect();
    check_finite(&quantum, "quantum potential", t)?;

    let v = model.potential();
    let d_rho_dt = (0..n)
        .map(|i| (-(hbar * hbar / mass) * transport[i] + h_i[i]) / hbar)
        .collect();
    let d_phase_dt = (0..n)
        .map(|i| {
            hbar / (2.0 * mass) * (quantum[i] - grad_s2[i])
                - v[i] / hbar
                - h_r[i] / (2.0 * hbar * d.clamped[i] * d.clamped[i])
        })
        .collect();
    Ok(Rates {
        d_rho_dt,
        d_phase_dt,
    })
}

/// Largest explicit RK4 step for which every linearized mode stays inside
/// the stability region, estimated from the stencil spectral radii, the
/// local flow speed and the smallest density.
pub fn stability_bound(model: &Model, state: &HydroState) -> f64 {
    let g = &state.grid;
    let cfg = model.stencil;
    let (hbar, mass) = (model.hbar(), model.mass());
    let lam_dd: f64 = g
        .spacings()
        .iter()
        .map(|h| cfg.first_derivative_spectral_radius() / (h * h))
        .sum();
    let lam_l: f64 = g
        .spacings()
        .iter()
        .map(|h| cfg.laplacian_spectral_radius() / (h * h))
        .sum();
    let speed = calculus::squared_magnitude(&state.phase_gradient(cfg))
        .into_iter()
        .fold(0.0, f64::max)
        .sqrt()
        * hbar
        / mass;
    let mut omega = hbar * lam_dd / (2.0 * mass) + speed * lam_dd.sqrt();

    let c = model.couplings;
    if !c.is_linear() {
        let floor = state.amplitude_floor();
        let rho_min = state
            .amplitude
            .iter()
            .fold(f64::INFINITY, |m, r| m.min(r.max(floor)))
            .powi(2);
        let dispersive = 0.5 * c.c1.abs() + c.c2.abs() + c.c3.abs() + c.c4.abs() + c.c5.abs() + c.c6.abs();
        omega += (dispersive * lam_l * lam_l * lam_dd / (mass * rho_min)).sqrt();
        // Phase-side and amplitude-side stiffness multiply: ħω ≥ sqrt(a_S a_R).
        let a_s = (c.c1.abs() + 0.5 * c.c2.abs()) * lam_l * lam_l / rho_min;
        let a_r = (0.5 * c.c2.abs() + c.c3.abs() + c.c4.abs() + c.c5.abs() + c.c6.abs()) * lam_l * lam_l / rho_min;
        omega += (a_s * a_r).sqrt() / hbar;
        omega += (c.c2.abs() + c.c3.abs()) * lam_l * lam_l / (2.0 * hbar * rho_min);
    }
    RK4_IMAGINARY_LIMIT / omega
}

/// Evolution variables of one RK4 stage.
struct Stage {
    rho: Field,
    residual: Field,
    background: f64,
}

fn stage_rates(model: &Model, base: &HydroState, rho: &[f64], residual: &[f64], t: f64) -> Result<Stage> {
    let mut s = base.with_density(rho);
    s.phase_residual = residual.to_vec();
    s.t = t;
    let r = rhs(model, &s)?;
    let mean = r.d_phase_dt.iter().sum::<f64>() / r.d_phase_dt.len() as f64;
    Ok(Stage {
        rho: r.d_rho_dt,
        residual: r.d_phase_dt.into_iter().map(|v| v - mean).collect(),
        background: mean,
    })
}

fn axpy(base: &[f64], k: &[f64], a: f64) -> Field {
    base.iter().zip(k).map(|(b, k)| b + a * k).collect()
}

/// One classical RK4 step of `(ρ, S)`.
///
/// The spatial mean of `∂S/∂t` is carried by the background term so the
/// residual stays bounded.
pub fn step(model: &Model, state: &HydroState, dt: f64) -> Result<HydroState> {
    if dt == 0.0 {
        return Ok(state.clone());
    }
    let rho0 = state.density();
    let s0 = &state.phase_residual;
    let t = state.t;

    let k1 = stage_rates(model, state, &rho0, s0, t)?;
    let k2 = stage_rates(model, state, &axpy(&rho0, &k1.rho, dt / 2.0), &axpy(s0, &k1.residual, dt / 2.0), t + dt / 2.0)?;
    let k3 = stage_rates(model, state, &axpy(&rho0, &k2.rho, dt / 2.0), &axpy(s0, &k2.residual, dt / 2.0), t + dt / 2.0)?;
    let k4 = stage_rates(model, state, &axpy(&rho0, &k3.rho, dt), &axpy(s0, &k3.residual, dt), t + dt)?;

    let combine = |base: &[f64], a: &[f64], b: &[f64], c: &[f64], d: &[f64]| -> Field {
        (0..base.len())
            .map(|i| base[i] + dt / 6.0 * (a[i] + 2.0 * b[i] + 2.0 * c[i] + d[i]))
            .collect()
    };
    let rho = combine(&rho0, &k1.rho, &k2.rho, &k3.rho, &k4.rho);
    let mut residual = combine(s0, &k1.residual, &k2.residual, &k3.residual, &k4.residual);
    let d_background = dt / 6.0 * (k1.background + 2.0 * k2.background + 2.0 * k3.background + k4.background);

    let t_new = t + dt;
    let background = -state.omega0 * t + d_background;
    let mut omega0 = state.omega0;
    if t_new.abs() > 1e-12 * dt.abs() {
        omega0 = -background / t_new;
    } else {
        residual.iter_mut().for_each(|s| *s += background);
    }

    let mut next = state.with_density(&rho);
    next.phase_residual = residual;
    next.omega0 = omega0;
    next.t = t_new;
    check_finite(&next.phase_residual, "phase residual", t_new)?;
    check_finite(&next.amplitude, "density", t_new)?;

    let (n0, n1) = (fields::norm(state), fields::norm(&next));
    if (n1 - n0).abs() > 0.01 * n0 {
        return Err(Error::Unstable {
            t: t_new,
            reason: format!("norm changed from {n0} to {n1} in one step"),
        });
    }
    Ok(next)
}

/// Integrate to `t_final`, calling `observe(step_index, state)` on every
/// step (including step 0 and the final step).
pub fn evolve_with<F>(model: &Model, initial: &HydroState, cfg: &IntegratorConfig, mut observe: F) -> Result<HydroState>
where
    F: FnMut(usize, usize, &HydroState) -> Result<()>,
{
    let bound = stability_bound(model, initial);
    let (steps, dt) = cfg.schedule(bound)?;
    let mut state = initial.clone();
    observe(0, steps, &state)?;
    for i in 1..=steps {
        state = step(model, &state, dt)?;
        observe(i, steps, &state)?;
    }
    Ok(state)
}

/// Integrate and collect snapshots and diagnostics at the configured cadence.
pub fn evolve(model: &Model, initial: &HydroState, cfg: &IntegratorConfig) -> Result<Trajectory> {
    let mut traj = Trajectory::default();
    evolve_with(model, initial, cfg, |i, steps, s| {
        if i.is_multiple_of(cfg.snapshot_every) || i == steps {
            traj.snapshots.push(s.clone());
        }
        if i.is_multiple_of(cfg.diagnostics_every) || i == steps {
            traj.diagnostics.push(observables::diagnostics(model, s)?);
        }
        Ok(())
    })?;
    Ok(traj)
}

/// Strang split-step Fourier evolution of the linear Schrödinger equation.
///
/// Independent of the finite-difference machinery; used as the oracle for
/// the `c = 0` limit. Requires a grid-periodic background wavevector.
pub fn linear_reference_evolve(initial: &HydroState, params: &PhysicsParams, cfg: &IntegratorConfig) -> Result<Trajectory> {
    cfg.validate()?;
    let grid = &initial.grid;
    let sp = Spectral::new(grid);
    let v = params.potential.sample(grid, params.mass)?;
    let dt_target = cfg.dt.unwrap_or(0.01);
    let steps = (cfg.t_final / dt_target - 1e-9).ceil().max(1.0) as usize;
    let dt = cfg.t_final / steps as f64;
    let (hbar, mass) = (params.hbar, params.mass);
    let half_potential: Vec<num_complex::Complex64> = v
        .iter()
        .map(|v| num_complex::Complex64::from_polar(1.0, -v * dt / (2.0 * hbar)))
        .collect();

    let model = Model::new(grid, params.clone(), Couplings::LINEAR)?;
    let mut psi = spectral::wavefunction(initial)?;
    let mut traj = Trajectory::default();
    let record = |psi: &[num_complex::Complex64], t: f64, traj: &mut Trajectory, i: usize| -> Result<()> {
        let state = spectral::state_from_wavefunction(psi, grid, &initial.k0, t)?;
        if i.is_multiple_of(cfg.diagnostics_every) || i == steps {
            traj.diagnostics.push(observables::diagnostics(&model, &state)?);
        }
        if i.is_multiple_of(cfg.snapshot_every) || i == steps {
            traj.snapshots.push(state);
        }
        Ok(())
    };
    record(&psi, initial.t, &mut traj, 0)?;
    for i in 1..=steps {
        psi.iter_mut().zip(&half_potential).for_each(|(p, h)| *p *= h);
        sp.kinetic_step(&mut psi, hbar, mass, dt);
        psi.iter_mut().zip(&half_potential).for_each(|(p, h)| *p *= h);
        record(&psi, initial.t + i as f64 * dt, &mut traj, i)?;
    }
    Ok(traj)
}
