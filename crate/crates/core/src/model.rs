//! The extended Lagrangian density and the nonlinear source terms `h_I`,
//! `h_R` it induces in the continuity and phase equations.
//!
//! `h_I` and `h_R` are the exact variational derivatives of the discretized
//! action built from the same stencils, so the discrete field equations are
//! the Euler–Lagrange equations of the discrete Lagrangian.

use serde::{Deserialize, Serialize};

use crate::calculus::{self, StencilConfig};
use crate::error::Result;
use crate::fields::{Field, Grid, HydroState, PhysicsParams, VectorField};

/// Note attached to run summaries describing how `c1` relates to the
/// single-constant modification `γ/2 (ΔS)²`.
pub const GAMMA_CONVENTION: &str = "Lagrangian term −c1 (ΔS)² with Euler-Lagrange source \
     2 c1 ΔΔS; the single-constant form (γ/2)(ΔS)² corresponds to γ = 2 c1";

/// Coefficients of the six Galilean-invariant terms built from `ΔS`,
/// `ΔR/R` and `∇R/R`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Couplings {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
    pub c6: f64,
}

impl Couplings {
    pub const LINEAR: Couplings = Couplings {
        c1: 0.0,
        c2: 0.0,
        c3: 0.0,
        c4: 0.0,
        c5: 0.0,
        c6: 0.0,
    };

    pub fn from_array(c: [f64; 6]) -> Self {
        Couplings {
            c1: c[0],
            c2: c[1],
            c3: c[2],
            c4: c[3],
            c5: c[4],
            c6: c[5],
        }
    }

    pub fn as_array(&self) -> [f64; 6] {
        [self.c1, self.c2, self.c3, self.c4, self.c5, self.c6]
    }

    /// The original one-constant modification.
    pub fn original(c1: f64) -> Self {
        Couplings { c1, ..Couplings::LINEAR }
    }

    pub fn is_linear(&self) -> bool {
        self.as_array().iter().all(|&c| c == 0.0)
    }

    /// `c2 = c3 = 0`: stationary states survive arbitrary potentials and the
    /// free equation is time-reversal invariant.
    pub fn is_stationary_friendly(&self) -> bool {
        self.c2 == 0.0 && self.c3 == 0.0
    }

    /// Only `c1` may be nonzero.
    pub fn is_original(&self) -> bool {
        self.as_array()[1..].iter().all(|&c| c == 0.0)
    }

    /// `γ` of the one-constant form `(γ/2)(ΔS)²` equivalent to this `c1`.
    pub fn gamma_equivalent(&self) -> f64 {
        2.0 * self.c1
    }

    pub fn max_abs(&self) -> f64 {
        self.as_array().iter().fold(0.0, |m, c| m.max(c.abs()))
    }

    pub fn needs_phase_terms(&self) -> bool {
        self.c1 != 0.0 || self.c2 != 0.0 || self.c3 != 0.0
    }

    pub fn needs_amplitude_terms(&self) -> bool {
        !self.is_original()
    }
}

/// Map the logarithmic parametrisation `b1..b6` onto `c1..c6`.
///
/// Obtained by expanding `∇ln aR² = 2∇R/R` and
/// `Δln aR² = 2ΔR/R − 2(∇R/R)²`. The `(∇ ln aR²)⁴` term contributes
/// `16 b6 (∇R/R)⁴`, hence the `−16 b6` in `c6`.
pub fn couplings_from_b(b: [f64; 6]) -> Couplings {
    let [b1, b2, b3, b4, b5, b6] = b;
    Couplings {
        c1: -b1,
        c2: -2.0 * b2,
        c3: 2.0 * b2 - 4.0 * b3,
        c4: -4.0 * b4,
        c5: 8.0 * b4 - 8.0 * b5,
        c6: 8.0 * b5 - 4.0 * b4 - 16.0 * b6,
    }
}

/// Fields shared by the Lagrangian, `h_I`, `h_R` and the energies.
#[derive(Debug, Clone)]
pub struct Derived {
    /// `R` clamped at the amplitude floor.
    pub clamped: Field,
    /// `∇R`.
    pub grad_r: VectorField,
    /// `∇·∇R` from the first-derivative stencil.
    pub div_grad_r: Field,
    /// Compact-stencil `ΔR`.
    pub lap_r: Field,
    /// `∇S` including the background wavevector.
    pub grad_s: VectorField,
    /// `ΔS`.
    pub lap_s: Field,
    /// `ΔR/R`.
    pub p: Field,
    /// `∇R/R`.
    pub u: VectorField,
    /// `(∇R/R)²`.
    pub q: Field,
}

/// Physics parameters and couplings bound to a grid, with the potential
/// sampled once.
#[derive(Debug, Clone)]
pub struct Model {
    pub grid: Grid,
    pub params: PhysicsParams,
    pub couplings: Couplings,
    pub stencil: StencilConfig,
    potential: Field,
}

impl Model {
    pub fn new(grid: &Grid, params: PhysicsParams, couplings: Couplings) -> Result<Self> {
        params.validate()?;
        let potential = params.potential.sample(grid, params.mass)?;
        Ok(Model {
            grid: grid.clone(),
            params,
            couplings,
            stencil: StencilConfig::default(),
            potential,
        })
    }

    pub fn with_stencil(mut self, stencil: StencilConfig) -> Self {
        self.stencil = stencil;
        self
    }

    pub fn with_couplings(&self, couplings: Couplings) -> Self {
        Model {
            couplings,
            ..self.clone()
        }
    }

    pub fn potential(&self) -> &[f64] {
        &self.potential
    }

    pub fn hbar(&self) -> f64 {
        self.params.hbar
    }

    pub fn mass(&self) -> f64 {
        self.params.mass
    }

    pub fn derived(&self, state: &HydroState) -> Derived {
        let g = &state.grid;
        let cfg = self.stencil;
        let clamped = state.clamped_amplitude();
        let grad_r = calculus::gradient(&state.amplitude, g, cfg);
        let div_grad_r = calculus::divergence(&grad_r, g, cfg);
        let lap_r = calculus::laplacian(&state.amplitude, g, cfg);
        let grad_s = state.phase_gradient(cfg);
        let lap_s = calculus::laplacian(&state.phase_residual, g, cfg);
        let p: Field = lap_r.iter().zip(&clamped).map(|(l, r)| l / r).collect();
        let u: VectorField = grad_r
            .iter()
            .map(|c| c.iter().zip(&clamped).map(|(d, r)| d / r).collect())
            .collect();
        let q = calculus::squared_magnitude(&u);
        Derived {
            clamped,
            grad_r,
            div_grad_r,
            lap_r,
            grad_s,
            lap_s,
            p,
            u,
            q,
        }
    }

    /// `h_I = 2c1 ΔΔS + c2 Δ(ΔR/R) + c3 Δ(∇R/R)²`.
    pub fn h_i(&self, state: &HydroState) -> Field {
        self.h_i_from(&self.derived(state))
    }

    pub fn h_i_from(&self, d: &Derived) -> Field {
        let c = self.couplings;
        if !c.needs_phase_terms() {
            return vec![0.0; d.p.len()];
        }
        let source: Field = (0..d.p.len())
            .map(|i| 2.0 * c.c1 * d.lap_s[i] + c.c2 * d.p[i] + c.c3 * d.q[i])
            .collect();
        calculus::laplacian(&source, &self.grid, self.stencil)
    }

    /// `h_R = R²·H_R`, the amplitude-equation source.
    pub fn h_r(&self, state: &HydroState) -> Field {
        self.h_r_from(&state.amplitude, &self.derived(state))
    }

    pub fn h_r_from(&self, amplitude: &[f64], d: &Derived) -> Field {
        let c = self.couplings;
        let n = d.p.len();
        if !c.needs_amplitude_terms() {
            return vec![0.0; n];
        }
        let (g, cfg) = (&self.grid, self.stencil);
        // ∂/∂p and ∂/∂q of c2 s p + c3 s q + c4 p² + c5 p q + c6 q².
        let t_p: Field = (0..n)
            .map(|i| c.c2 * d.lap_s[i] + 2.0 * c.c4 * d.p[i] + c.c5 * d.q[i])
            .collect();
        let t_q: Field = (0..n)
            .map(|i| c.c3 * d.lap_s[i] + c.c5 * d.p[i] + 2.0 * c.c6 * d.q[i])
            .collect();
        let scalar: Field = t_p.iter().zip(&d.clamped).map(|(t, r)| t / r).collect();
        let lap_term = calculus::laplacian(&scalar, g, cfg);
        let flux: VectorField = d
            .u
            .iter()
            .map(|uk| {
                (0..n)
                    .map(|i| 2.0 * t_q[i] * uk[i] / d.clamped[i])
                    .collect()
            })
            .collect();
        let div_term = calculus::divergence(&flux, g, cfg);
        (0..n)
            .map(|i| {
                amplitude[i] * (lap_term[i] - div_term[i]) - t_p[i] * d.p[i] - 2.0 * t_q[i] * d.q[i]
            })
            .collect()
    }

    /// Pointwise nonlinear part `c1(ΔS)² + … + c6(∇R/R)⁴` (enters the
    /// Lagrangian with a minus sign and the field energy with a plus sign).
    pub fn coupling_density(&self, d: &Derived) -> Field {
        let c = self.couplings;
        (0..d.p.len())
            .map(|i| {
                let (s, p, q) = (d.lap_s[i], d.p[i], d.q[i]);
                c.c1 * s * s + c.c2 * s * p + c.c3 * s * q + c.c4 * p * p + c.c5 * p * q + c.c6 * q * q
            })
            .collect()
    }

    /// Per-coupling split of [`Model::coupling_density`], one field per `c_k`.
    pub fn coupling_terms(&self, d: &Derived) -> [Field; 6] {
        let c = self.couplings.as_array();
        let n = d.p.len();
        let mut out: [Field; 6] = Default::default();
        for (k, term) in out.iter_mut().enumerate() {
            *term = (0..n)
                .map(|i| {
                    let (s, p, q) = (d.lap_s[i], d.p[i], d.q[i]);
                    let monomial = match k {
                        0 => s * s,
                        1 => s * p,
                        2 => s * q,
                        3 => p * p,
                        4 => p * q,
                        _ => q * q,
                    };
                    c[k] * monomial
                })
                .collect();
        }
        out
    }

    /// Linear energy density `(ħ²/2m)[(∇R)² + R²(∇S)²] + V R²`.
    pub fn linear_energy_density(&self, state: &HydroState, d: &Derived) -> Field {
        let k = self.hbar().powi(2) / (2.0 * self.mass());
        let grad_r2 = calculus::squared_magnitude(&d.grad_r);
        let grad_s2 = calculus::squared_magnitude(&d.grad_s);
        (0..grad_r2.len())
            .map(|i| {
                let rho = state.amplitude[i].powi(2);
                k * (grad_r2[i] + rho * grad_s2[i]) + self.potential[i] * rho
            })
            .collect()
    }

    /// Lagrangian density of the extended model.
    ///
    /// `phase_rate` is `∂S/∂t`; when absent only the background `−ω0` is used.
    pub fn lagrangian_density(&self, state: &HydroState, phase_rate: Option<&[f64]>) -> Field {
        let d = self.derived(state);
        let linear = self.linear_energy_density(state, &d);
        let nonlinear = self.coupling_density(&d);
        let hbar = self.hbar();
        (0..linear.len())
            .map(|i| {
                let s_t = phase_rate.map_or(-state.omega0, |r| r[i]);
                -(hbar * state.amplitude[i].powi(2) * s_t + linear[i]) - nonlinear[i]
            })
            .collect()
    }

    /// Discrete action density integrated over the grid at fixed time.
    pub fn spatial_action(&self, state: &HydroState, phase_rate: Option<&[f64]>) -> f64 {
        calculus::integrate(&self.lagrangian_density(state, phase_rate), &state.grid)
    }

    /// `H′_NL = ½H_R + (i/2)H_I` as (real, imaginary) fields.
    pub fn nonlinear_hamiltonian(&self, state: &HydroState) -> (Field, Field) {
        let d = self.derived(state);
        let h_i = self.h_i_from(&d);
        let h_r = self.h_r_from(&state.amplitude, &d);
        let re = h_r.iter().zip(&d.clamped).map(|(h, r)| 0.5 * h / (r * r)).collect();
        let im = h_i.iter().zip(&d.clamped).map(|(h, r)| 0.5 * h / (r * r)).collect();
        (re, im)
    }

    /// Probability current `(ħ²/m)R²∇S − ∇[2c1 ΔS + c2 ΔR/R + c3 (∇R/R)²]`.
    pub fn current(&self, state: &HydroState) -> VectorField {
        let d = self.derived(state);
        let k = self.hbar().powi(2) / self.mass();
        let c = self.couplings;
        let mut j: VectorField = d
            .grad_s
            .iter()
            .map(|gs| {
                gs.iter()
                    .zip(&state.amplitude)
                    .map(|(g, r)| k * r * r * g)
                    .collect()
            })
            .collect();
        if c.needs_phase_terms() {
            let source: Field = (0..d.p.len())
                .map(|i| 2.0 * c.c1 * d.lap_s[i] + c.c2 * d.p[i] + c.c3 * d.q[i])
                .collect();
            for (jk, gk) in j.iter_mut().zip(calculus::gradient(&source, &self.grid, self.stencil)) {
                jk.iter_mut().zip(gk).for_each(|(a, b)| *a -= b);
            }
        }
        j
    }
}
