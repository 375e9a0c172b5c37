//! Energy functionals and expectation values, with the Ehrenfest integrals
//! they feed into the per-step diagnostics record.

use std::f64::consts::PI;

use num_complex::{Complex64, ComplexFloat};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::calculus;
use crate::dynamics;
use crate::error::{Error, Result};
use crate::fields::{self, Field, Grid, HydroState, PhysicsParams, VectorField};
use crate::model::{Couplings, Model};

/// One row of the diagnostics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub norm: f64,
    pub e_qm_real: f64,
    pub e_qm_imag: f64,
    pub e_ft: f64,
    pub position_mean: Vec<f64>,
    pub momentum_mean: Vec<f64>,
    pub i1: Vec<f64>,
    pub i2: Vec<f64>,
    /// Imaginary gradient-integral part of `I₂`; zero on a torus.
    pub i2_gradient_term: Vec<f64>,
    /// Boundary flux picked up by `d⟨r⟩/dt` where the minimum-image
    /// coordinate jumps.
    pub seam_flux: Vec<f64>,
    /// L∞ of `∂ρ/∂t + ∇·j/ħ` with `j` the model current.
    pub continuity_residual: f64,
    /// `m d⟨r⟩/dt − ⟨p⟩ − I₁` from the instantaneous rates.
    pub ehrenfest_residual_r: Vec<f64>,
    /// `d⟨p⟩/dt + ⟨∇V⟩ − I₂` from the instantaneous rates.
    pub ehrenfest_residual_p: Vec<f64>,
}

/// `E_QM = ∫[(ħ²/2m)((∇R)² + R²(∇S)²) + VR² + ½h_R + (i/2)h_I]`.
pub fn e_qm(model: &Model, state: &HydroState) -> Complex64 {
    let d = model.derived(state);
    let linear = calculus::integrate(&model.linear_energy_density(state, &d), &state.grid);
    let h_r = calculus::integrate(&model.h_r_from(&state.amplitude, &d), &state.grid);
    let h_i = calculus::integrate(&model.h_i_from(&d), &state.grid);
    Complex64::new(linear + 0.5 * h_r, 0.5 * h_i)
}

/// Field-theoretic energy: linear density plus the six coupling terms.
pub fn e_ft(model: &Model, state: &HydroState) -> f64 {
    let d = model.derived(state);
    let linear = model.linear_energy_density(state, &d);
    let nonlinear = model.coupling_density(&d);
    let total: Field = linear.iter().zip(&nonlinear).map(|(a, b)| a + b).collect();
    calculus::integrate(&total, &state.grid)
}

/// Circular-mean density centroid on each axis.
pub fn centroid(state: &HydroState) -> Vec<f64> {
    let g = &state.grid;
    let rho = state.density();
    (0..g.dim())
        .map(|axis| {
            let kx = 2.0 * PI / g.lengths()[axis];
            let phasor: Complex64 = g
                .coordinate_field(axis)
                .iter()
                .zip(&rho)
                .map(|(x, r)| Complex64::from_polar(*r, kx * x))
                .sum();
            if phasor.abs() > 0.0 { phasor.arg() / kx } else { 0.0 }
        })
        .collect()
}

/// Coordinates unwrapped so each axis spans `[c − L/2, c + L/2)`.
pub fn coordinates_about(grid: &Grid, centre: &[f64]) -> VectorField {
    (0..grid.dim())
        .map(|axis| {
            let (c, length) = (centre[axis], grid.lengths()[axis]);
            grid.coordinate_field(axis)
                .iter()
                .map(|x| c + (x - c + 0.5 * length).rem_euclid(length) - 0.5 * length)
                .collect()
        })
        .collect()
}

/// Coordinates unwrapped around the state's own centroid.
pub fn centred_coordinates(state: &HydroState) -> VectorField {
    coordinates_about(&state.grid, &centroid(state))
}

fn warn_if_unnormalized(state: &HydroState) {
    let n = fields::norm(state);
    if (n - 1.0).abs() > 1e-6 {
        log::warn!("expectation value of a state with norm {n} (t = {})", state.t);
    }
}

/// `⟨r⟩ = ∫ x R²` with the minimum-image convention.
pub fn expectation_position(state: &HydroState) -> Vec<f64> {
    position_about(state, &centroid(state))
}

/// `⟨r⟩` with the periodic cut fixed opposite `centre`; continuous in time
/// as long as the cut stays put.
pub fn position_about(state: &HydroState, centre: &[f64]) -> Vec<f64> {
    warn_if_unnormalized(state);
    let rho = state.density();
    coordinates_about(&state.grid, centre)
        .iter()
        .map(|x| calculus::inner(x, &rho, &state.grid))
        .collect()
}

/// `ħ∫(∂x − 1)ρ∇S`: the flux through the periodic cut opposite `centre`,
/// by which `m d⟨r⟩/dt` differs from `⟨p⟩ + I₁` on a torus.
pub fn seam_flux_about(model: &Model, state: &HydroState, centre: &[f64]) -> Vec<f64> {
    let g = &state.grid;
    let cfg = model.stencil;
    let rho = state.density();
    let grad_s = state.phase_gradient(cfg);
    let x = coordinates_about(g, centre);
    (0..g.dim())
        .map(|a| {
            let dx = calculus::derivative(&x[a], g, a, cfg);
            let integrand: Field = (0..g.len()).map(|i| (dx[i] - 1.0) * rho[i] * grad_s[a][i]).collect();
            model.hbar() * calculus::integrate(&integrand, g)
        })
        .collect()
}

/// `⟨p⟩ = ħ ∫ R² ∇S`.
pub fn expectation_momentum(state: &HydroState, params: &PhysicsParams, cfg: calculus::StencilConfig) -> Vec<f64> {
    warn_if_unnormalized(state);
    let rho = state.density();
    state
        .phase_gradient(cfg)
        .iter()
        .map(|gs| params.hbar * calculus::inner(gs, &rho, &state.grid))
        .collect()
}

/// `I₁ = (m/ħ) ∫ x h_I`.
pub fn i1(model: &Model, state: &HydroState) -> Vec<f64> {
    i1_about(model, state, &centroid(state))
}

/// `I₁` with the periodic cut fixed opposite `centre`.
pub fn i1_about(model: &Model, state: &HydroState, centre: &[f64]) -> Vec<f64> {
    if !model.couplings.needs_phase_terms() {
        return vec![0.0; state.grid.dim()];
    }
    let h_i = model.h_i(state);
    let k = model.mass() / model.hbar();
    coordinates_about(&state.grid, centre)
        .iter()
        .map(|x| k * calculus::inner(x, &h_i, &state.grid))
        .collect()
}

/// Real part and imaginary gradient term of
/// `I₂ = ∫[h_I ∇S − R² ∇(h_R/2R²)] − (i/2)∫∇h_I`.
pub fn i2_parts(model: &Model, state: &HydroState) -> (Vec<f64>, Vec<f64>) {
    let g = &state.grid;
    let dim = g.dim();
    if model.couplings.is_linear() {
        return (vec![0.0; dim], vec![0.0; dim]);
    }
    let cfg = model.stencil;
    let d = model.derived(state);
    let h_i = model.h_i_from(&d);
    let h_r = model.h_r_from(&state.amplitude, &d);
    let potential: Field = h_r.iter().zip(&d.clamped).map(|(h, r)| 0.5 * h / (r * r)).collect();
    let grad_potential = calculus::gradient(&potential, g, cfg);
    let grad_h_i = calculus::gradient(&h_i, g, cfg);
    let rho = state.density();
    let real = (0..dim)
        .map(|a| calculus::inner(&h_i, &d.grad_s[a], g) - calculus::inner(&rho, &grad_potential[a], g))
        .collect();
    let imag = grad_h_i.iter().map(|gh| -0.5 * calculus::integrate(gh, g)).collect();
    (real, imag)
}

/// Real part of `I₂`.
pub fn i2(model: &Model, state: &HydroState) -> Vec<f64> {
    i2_parts(model, state).0
}

/// `⟨∇V⟩`.
pub fn mean_force(model: &Model, state: &HydroState) -> Result<Vec<f64>> {
    let grad_v = model.params.potential.gradient(&state.grid, model.mass(), model.stencil)?;
    let rho = state.density();
    Ok(grad_v.iter().map(|gv| calculus::inner(gv, &rho, &state.grid)).collect())
}

/// Assemble a [`DiagnosticsRecord`] for one state.
pub fn diagnostics(model: &Model, state: &HydroState) -> Result<DiagnosticsRecord> {
    let g = &state.grid;
    let cfg = model.stencil;
    let hbar = model.hbar();
    let mass = model.mass();
    let rates = dynamics::rhs(model, state)?;
    let rho = state.density();
    let grad_s = state.phase_gradient(cfg);
    let x = centred_coordinates(state);

    let e = e_qm(model, state);
    let position_mean = expectation_position(state);
    let momentum_mean = expectation_momentum(state, &model.params, cfg);
    let i1v = i1(model, state);
    let (i2v, i2_gradient_term) = i2_parts(model, state);
    let force = mean_force(model, state)?;

    let seam_flux = seam_flux_about(model, state, &centroid(state));

    let j = model.current(state);
    let div_j = calculus::divergence(&j, g, cfg);
    let continuity_residual = rates
        .d_rho_dt
        .iter()
        .zip(&div_j)
        .fold(0.0, |m, (r, dj)| f64::max(m, (r + dj / hbar).abs()));

    let grad_s_t = calculus::gradient(&rates.d_phase_dt, g, cfg);
    let ehrenfest_residual_r = (0..g.dim())
        .map(|a| mass * calculus::inner(&x[a], &rates.d_rho_dt, g) - momentum_mean[a] - i1v[a])
        .collect();
    let ehrenfest_residual_p = (0..g.dim())
        .map(|a| {
            let dp = hbar * (calculus::inner(&rates.d_rho_dt, &grad_s[a], g) + calculus::inner(&rho, &grad_s_t[a], g));
            dp + force[a] - i2v[a]
        })
        .collect();

    Ok(DiagnosticsRecord {
        t: state.t,
        norm: fields::norm(state),
        e_qm_real: e.re,
        e_qm_imag: e.im,
        e_ft: e_ft(model, state),
        position_mean,
        momentum_mean,
        i1: i1v,
        i2: i2v,
        i2_gradient_term,
        seam_flux,
        continuity_residual,
        ehrenfest_residual_r,
        ehrenfest_residual_p,
    })
}

/// Wave-packet families for the finite-energy scan. All are centred at the
/// origin and normalized on the unbounded domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PacketFamily {
    /// Real isotropic Gaussian, `S = 0`.
    StationaryGaussian { dim: usize, sigma: f64 },
    /// Free Gaussian evolved analytically for time `t`; quadratic phase.
    SpreadingGaussian { dim: usize, sigma: f64, t: f64 },
}

impl PacketFamily {
    pub fn dim(&self) -> usize {
        match *self {
            PacketFamily::StationaryGaussian { dim, .. } | PacketFamily::SpreadingGaussian { dim, .. } => dim,
        }
    }

    /// Sample the packet on `grid`.
    pub fn state(&self, grid: &Grid, params: &PhysicsParams) -> Result<HydroState> {
        if grid.dim() != self.dim() {
            return Err(Error::ShapeMismatch {
                expected: self.dim(),
                actual: grid.dim(),
            });
        }
        let (sigma, tau) = match *self {
            PacketFamily::StationaryGaussian { sigma, .. } => (sigma, 0.0),
            PacketFamily::SpreadingGaussian { sigma, t, .. } => (sigma, params.hbar * t / params.mass),
        };
        if !(sigma > 0.0) {
            return Err(Error::InvalidParameter {
                name: "packet.sigma",
                reason: format!("must be positive (got {sigma})"),
            });
        }
        // |Ψ|² ∝ exp(−r²/2σ_t²) with σ_t² = σ² + (τ/2σ)², phase β r².
        let width2 = sigma * sigma + (tau / (2.0 * sigma)).powi(2);
        let beta = tau / (2.0 * (4.0 * sigma.powi(4) + tau * tau));
        let d = self.dim() as f64;
        let norm = (2.0 * PI * width2).powf(-d / 4.0);
        let amplitude = grid.sample(|x| norm * (-x.iter().map(|v| v * v).sum::<f64>() / (4.0 * width2)).exp());
        let phase = grid.sample(|x| beta * x.iter().map(|v| v * v).sum::<f64>());
        HydroState::new(grid.clone(), amplitude, phase)
    }
}

/// One row of a finite-energy scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub length: f64,
    pub e_ft: f64,
    pub linear: f64,
    /// Per-coupling contributions `c_k ∫ monomial_k`.
    pub terms: [f64; 6],
}

impl ScanRow {
    pub fn nonlinear(&self) -> f64 {
        self.terms.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteEnergyScan {
    pub rows: Vec<ScanRow>,
    /// Fitted `d log|Σ c_k terms| / d log L`.
    pub contribution_exponent: f64,
    /// Fitted `d log|e_ft| / d log L`.
    pub e_ft_exponent: f64,
}

impl FiniteEnergyScan {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("L,e_ft,linear,c1_term,c2_term,c3_term,c4_term,c5_term,c6_term\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{}", r.length, r.e_ft, r.linear));
            for t in r.terms {
                out.push_str(&format!(",{t}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Least-squares slope of `log|y|` against `log x`; zero when `y` is
/// negligible throughout.
pub fn power_law_exponent(x: &[f64], y: &[f64]) -> f64 {
    let scale = y.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
    if x.len() < 2 || scale < 1e-280 {
        return 0.0;
    }
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(_, y)| y.abs() > 1e-14 * scale)
        .map(|(x, y)| (x.ln(), y.abs().ln()))
        .collect();
    if pts.len() < 2 {
        return 0.0;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 { 0.0 } else { sxy / sxx }
}

/// Quadrature weights excluding cells within stencil reach of the periodic
/// seam, where a non-periodic phase is discontinuous.
fn seam_mask(grid: &Grid, reach: usize) -> Field {
    (0..grid.len())
        .map(|flat| {
            let idx = grid.unravel(flat);
            let interior = idx
                .iter()
                .zip(grid.shape())
                .all(|(&i, &n)| i >= reach && i + reach < n);
            if interior { 1.0 } else { 0.0 }
        })
        .collect()
}

/// Evaluate `e_ft` and its per-coupling breakdown for one packet family on
/// periodic boxes of growing size at fixed spacing `spacing`.
pub fn finite_energy_scan(
    family: &PacketFamily,
    domain_sizes: &[f64],
    spacing: f64,
    params: &PhysicsParams,
    couplings: Couplings,
) -> Result<FiniteEnergyScan> {
    params.validate()?;
    if !(spacing > 0.0) {
        return Err(Error::InvalidParameter {
            name: "scan.spacing",
            reason: format!("must be positive (got {spacing})"),
        });
    }
    let mut rows = Vec::with_capacity(domain_sizes.len());
    for &length in domain_sizes {
        let n = (length / spacing).round() as usize;
        let dim = family.dim();
        let grid = Grid::new(vec![n; dim], vec![n as f64 * spacing; dim])?;
        let model = Model::new(&grid, params.clone(), couplings)?;
        let state = family.state(&grid, params)?;
        let mask = seam_mask(&grid, model.stencil.reach());
        let d = model.derived(&state);
        let masked = |f: &[f64]| -> f64 {
            let weighted: Field = f.iter().zip(&mask).map(|(a, w)| a * w).collect();
            calculus::integrate(&weighted, &grid)
        };
        let linear = masked(&model.linear_energy_density(&state, &d));
        let terms_fields = model.coupling_terms(&d);
        let mut terms = [0.0; 6];
        for (t, f) in terms.iter_mut().zip(&terms_fields) {
            *t = masked(f);
        }
        rows.push(ScanRow {
            length: grid.lengths()[0],
            e_ft: linear + terms.iter().sum::<f64>(),
            linear,
            terms,
        });
    }
    let ls: Vec<f64> = rows.iter().map(|r| r.length).collect();
    let contrib: Vec<f64> = rows.iter().map(ScanRow::nonlinear).collect();
    let energies: Vec<f64> = rows.iter().map(|r| r.e_ft).collect();
    Ok(FiniteEnergyScan {
        contribution_exponent: power_law_exponent(&ls, &contrib),
        e_ft_exponent: power_law_exponent(&ls, &energies),
        rows,
    })
}
