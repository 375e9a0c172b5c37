//! Two one-dimensional subsystems on their joint configuration space:
//! factorization under evolution, and the cubic contrast pair.

use num_complex::Complex64;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::calculus;
use crate::dynamics::{self, IntegratorConfig};
use crate::error::{Error, Result};
use crate::fields::{self, Field, Grid, HydroState, PhysicsParams, PotentialSpec};
use crate::model::{Couplings, Model};
use crate::observables;
use crate::spectral::{self, Spectral};

/// A state on `grid1 × grid2`; axis 0 belongs to subsystem 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    pub grid1: Grid,
    pub grid2: Grid,
    pub state: HydroState,
}

impl JointState {
    pub fn new(grid1: Grid, grid2: Grid, state: HydroState) -> Result<Self> {
        let joint = joint_grid(&grid1, &grid2)?;
        if joint != state.grid {
            return Err(Error::InvalidGrid("joint state grid is not grid1 × grid2".into()));
        }
        Ok(JointState { grid1, grid2, state })
    }

    /// Marginal densities `ρ₁(x₁) = ∫ρ dx₂` and `ρ₂(x₂) = ∫ρ dx₁`.
    pub fn marginals(&self) -> (Field, Field) {
        let (n1, n2) = (self.grid1.len(), self.grid2.len());
        let (h1, h2) = (self.grid1.spacing(0), self.grid2.spacing(0));
        let rho = self.state.density();
        let mut m1 = vec![0.0; n1];
        let mut m2 = vec![0.0; n2];
        for i in 0..n1 {
            for j in 0..n2 {
                let v = rho[i * n2 + j];
                m1[i] += v * h2;
                m2[j] += v * h1;
            }
        }
        (m1, m2)
    }
}

fn joint_grid(grid1: &Grid, grid2: &Grid) -> Result<Grid> {
    if grid1.dim() != 1 || grid2.dim() != 1 {
        return Err(Error::Unsupported("subsystems must be one-dimensional".into()));
    }
    Grid::new(
        vec![grid1.shape()[0], grid2.shape()[0]],
        vec![grid1.lengths()[0], grid2.lengths()[0]],
    )
}

/// `R = R₁ ⊗ R₂`, `S = S₁ + S₂`.
pub fn tensor_product(a: &HydroState, b: &HydroState) -> Result<JointState> {
    let grid = joint_grid(&a.grid, &b.grid)?;
    if a.t != b.t {
        return Err(Error::InvalidState(format!("factor times differ: {} vs {}", a.t, b.t)));
    }
    let n2 = b.grid.len();
    let amplitude = (0..grid.len()).map(|f| a.amplitude[f / n2] * b.amplitude[f % n2]).collect();
    let residual = (0..grid.len())
        .map(|f| a.phase_residual[f / n2] + b.phase_residual[f % n2])
        .collect();
    let state = HydroState::with_background(
        grid,
        amplitude,
        residual,
        vec![a.k0[0], b.k0[0]],
        a.omega0 + b.omega0,
        a.t,
    )?;
    Ok(JointState {
        grid1: a.grid.clone(),
        grid2: b.grid.clone(),
        state,
    })
}

/// `‖ρ − ρ₁ρ₂/N‖₂ / ‖ρ‖₂` with `N` the joint norm; zero iff `ρ` factorizes.
pub fn correlation_metric(joint: &JointState) -> f64 {
    correlation_of_density(&joint.state.density(), &joint.grid1, &joint.grid2)
}

fn correlation_of_density(rho: &[f64], grid1: &Grid, grid2: &Grid) -> f64 {
    let (n1, n2) = (grid1.len(), grid2.len());
    let (h1, h2) = (grid1.spacing(0), grid2.spacing(0));
    let mut m1 = vec![0.0; n1];
    let mut m2 = vec![0.0; n2];
    for i in 0..n1 {
        for j in 0..n2 {
            m1[i] += rho[i * n2 + j] * h2;
            m2[j] += rho[i * n2 + j] * h1;
        }
    }
    let norm: f64 = m1.iter().sum::<f64>() * h1;
    let (mut diff, mut total) = (0.0, 0.0);
    for i in 0..n1 {
        for j in 0..n2 {
            let r = rho[i * n2 + j];
            diff += (r - m1[i] * m2[j] / norm).powi(2);
            total += r * r;
        }
    }
    if total == 0.0 { 0.0 } else { (diff / total).sqrt() }
}

/// Joint physics from per-subsystem parameters: equal `ħ` and `m`,
/// additive potential.
pub fn joint_params(p1: &PhysicsParams, p2: &PhysicsParams) -> Result<PhysicsParams> {
    if p1.hbar != p2.hbar || p1.mass != p2.mass {
        return Err(Error::Unsupported("subsystems must share ħ and mass".into()));
    }
    let potential = if p1.potential.is_free() && p2.potential.is_free() {
        PotentialSpec::Free
    } else {
        PotentialSpec::Additive {
            parts: vec![p1.potential.clone(), p2.potential.clone()],
        }
    };
    PhysicsParams::new(p1.hbar, p1.mass, potential)
}

/// One row of a correlation-versus-time curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSample {
    pub t: f64,
    pub correlation: f64,
    pub joint_norm: f64,
    pub e_ft_joint: f64,
}

pub fn correlation_csv(samples: &[CorrelationSample]) -> String {
    let mut out = String::from("t,correlation,joint_norm,e_ft_joint\n");
    for s in samples {
        out.push_str(&format!("{},{},{},{}\n", s.t, s.correlation, s.joint_norm, s.e_ft_joint));
    }
    out
}

/// Joint evolution result.
#[derive(Debug, Clone)]
pub struct JointRun {
    pub final_state: JointState,
    pub samples: Vec<CorrelationSample>,
}

/// Evolve the joint hydrodynamic system with the full configuration-space
/// operators, sampling the correlation metric at the diagnostics cadence.
pub fn joint_evolve(
    initial: &JointState,
    p1: &PhysicsParams,
    p2: &PhysicsParams,
    couplings: Couplings,
    cfg: &IntegratorConfig,
) -> Result<JointRun> {
    let params = joint_params(p1, p2)?;
    let model = Model::new(&initial.state.grid, params, couplings)?;
    let mut samples = Vec::new();
    let final_state = dynamics::evolve_with(&model, &initial.state, cfg, |i, steps, s| {
        if i % cfg.diagnostics_every == 0 || i == steps {
            samples.push(CorrelationSample {
                t: s.t,
                correlation: correlation_of_density(&s.density(), &initial.grid1, &initial.grid2),
                joint_norm: fields::norm(s),
                e_ft_joint: observables::e_ft(&model, s),
            });
        }
        Ok(())
    })?;
    Ok(JointRun {
        final_state: JointState {
            grid1: initial.grid1.clone(),
            grid2: initial.grid2.clone(),
            state: final_state,
        },
        samples,
    })
}

/// L∞ distance between a joint density and the product of two factor
/// densities evolved independently.
pub fn product_deviation(joint: &JointState, a: &HydroState, b: &HydroState) -> f64 {
    let rho = joint.state.density();
    let (ra, rb) = (a.density(), b.density());
    let n2 = rb.len();
    rho.iter()
        .enumerate()
        .fold(0.0, |m, (f, r)| m.max((r - ra[f / n2] * rb[f % n2]).abs()))
}

/// Cubic nonlinearity used by the split-step contrast runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum CubicVariant {
    /// Potential `g(ρ₁(x₁) + ρ₂(x₂))` built from the marginals; weakly
    /// separable.
    Marginal,
    /// Potential `g|Ψ(x₁, x₂)|²` on the joint space.
    Joint,
}

/// Strang split-step evolution of a joint wavefunction under a cubic
/// nonlinearity of strength `g`, sampling the correlation metric every
/// `sample_every` steps.
pub fn cubic_evolve(
    initial: &JointState,
    params: &PhysicsParams,
    variant: CubicVariant,
    g: f64,
    t_final: f64,
    dt: f64,
    sample_every: usize,
) -> Result<Vec<CorrelationSample>> {
    if !(dt > 0.0 && t_final > 0.0) || sample_every == 0 {
        return Err(Error::InvalidParameter {
            name: "integrator.dt",
            reason: "step, duration and cadence must be positive".into(),
        });
    }
    let grid = &initial.state.grid;
    let sp = Spectral::new(grid);
    let (g1, g2) = (&initial.grid1, &initial.grid2);
    let (n2, h1, h2) = (g2.len(), g1.spacing(0), g2.spacing(0));
    let (hbar, mass) = (params.hbar, params.mass);
    let potential = params.potential.sample(grid, mass)?;
    let steps = (t_final / dt - 1e-9).ceil().max(1.0) as usize;
    let dt = t_final / steps as f64;

    let nonlinear = |psi: &mut [Complex64], tau: f64| {
        let rho: Vec<f64> = psi.iter().map(|c| c.norm_sqr()).collect();
        let field: Vec<f64> = match variant {
            CubicVariant::Joint => rho,
            CubicVariant::Marginal => {
                let mut m1 = vec![0.0; g1.len()];
                let mut m2 = vec![0.0; n2];
                for (f, r) in rho.iter().enumerate() {
                    m1[f / n2] += r * h2;
                    m2[f % n2] += r * h1;
                }
                (0..rho.len()).map(|f| m1[f / n2] + m2[f % n2]).collect()
            }
        };
        for ((p, n), v) in psi.iter_mut().zip(&field).zip(&potential) {
            *p *= Complex64::from_polar(1.0, -(g * n + v) * tau / hbar);
        }
    };

    let mut psi = spectral::wavefunction(&initial.state)?;
    let sample = |psi: &[Complex64], t: f64| {
        let rho: Vec<f64> = psi.iter().map(|c| c.norm_sqr()).collect();
        CorrelationSample {
            t,
            correlation: correlation_of_density(&rho, g1, g2),
            joint_norm: calculus::integrate(&rho, grid),
            e_ft_joint: f64::NAN,
        }
    };
    let mut samples = vec![sample(&psi, initial.state.t)];
    for i in 1..=steps {
        nonlinear(&mut psi, dt / 2.0);
        sp.kinetic_step(&mut psi, hbar, mass, dt);
        nonlinear(&mut psi, dt / 2.0);
        if psi.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::NonFinite {
                term: "cubic split-step",
                t: initial.state.t + i as f64 * dt,
            });
        }
        if i % sample_every == 0 || i == steps {
            samples.push(sample(&psi, initial.state.t + i as f64 * dt));
        }
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn gaussian(g: &Grid, sigma: f64, x0: f64) -> HydroState {
        let n = (2.0 * PI * sigma * sigma).powf(-0.25);
        let amp = g.sample(|x| n * (-(x[0] - x0).powi(2) / (4.0 * sigma * sigma)).exp());
        HydroState::new(g.clone(), amp, vec![0.0; g.len()]).unwrap()
    }

    #[test]
    fn product_norm_and_marginals() {
        let g1 = Grid::line(64, 20.0).unwrap();
        let g2 = Grid::line(48, 16.0).unwrap();
        let a = gaussian(&g1, 1.0, -1.0);
        let b = gaussian(&g2, 1.5, 2.0);
        let j = tensor_product(&a, &b).unwrap();
        assert!((fields::norm(&j.state) - fields::norm(&a) * fields::norm(&b)).abs() < 1e-12);
        let (m1, m2) = j.marginals();
        let (ra, rb) = (a.density(), b.density());
        let nb = fields::norm(&b);
        let na = fields::norm(&a);
        assert!(m1.iter().zip(&ra).all(|(m, r)| (m - r * nb).abs() < 1e-12));
        assert!(m2.iter().zip(&rb).all(|(m, r)| (m - r * na).abs() < 1e-12));
        assert!(correlation_metric(&j) < 1e-12);
    }

    #[test]
    fn anticorrelated_four_by_four() {
        // Mass on the two off-diagonal corners only.
        let g = Grid::line(5, 5.0).unwrap();
        let grid = joint_grid(&g, &g).unwrap();
        let mut amp = vec![0.0; 25];
        amp[1 * 5 + 3] = 1.0;
        amp[3 * 5 + 1] = 1.0;
        let s = HydroState::new(grid, amp, vec![0.0; 25]).unwrap();
        let j = JointState::new(g.clone(), g, s).unwrap();
        // ρ₁ρ₂/N puts 1/2 on each of the four corners (1,1),(1,3),(3,1),(3,3):
        // diff² = 2·(1/2)² + 2·(1/2)², ‖ρ‖² = 2.
        assert!((correlation_metric(&j) - 0.5f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn metric_is_symmetric_under_relabeling() {
        let g = Grid::line(16, 8.0).unwrap();
        let grid = joint_grid(&g, &g).unwrap();
        let amp: Vec<f64> = (0..256).map(|f| 1.0 + ((f * 7) % 11) as f64).collect();
        let swapped: Vec<f64> = (0..256).map(|f| amp[(f % 16) * 16 + f / 16]).collect();
        let a = JointState::new(g.clone(), g.clone(), HydroState::new(grid.clone(), amp, vec![0.0; 256]).unwrap()).unwrap();
        let b = JointState::new(g.clone(), g, HydroState::new(grid, swapped, vec![0.0; 256]).unwrap()).unwrap();
        assert!((correlation_metric(&a) - correlation_metric(&b)).abs() < 1e-14);
    }

    #[test]
    fn marginal_cubic_keeps_products() {
        let g = Grid::line(32, 16.0).unwrap();
        let a = gaussian(&g, 1.0, -1.0);
        let b = gaussian(&g, 1.5, 1.0);
        let j = tensor_product(&a, &b).unwrap();
        let p = PhysicsParams::default();
        let sep = cubic_evolve(&j, &p, CubicVariant::Marginal, 1.0, 0.5, 0.01, 10).unwrap();
        assert!(sep.iter().all(|s| s.correlation < 1e-10));
        let joint = cubic_evolve(&j, &p, CubicVariant::Joint, 1.0, 0.5, 0.01, 10).unwrap();
        assert!(joint.last().unwrap().correlation > 1e-4);
    }
}
