//! Periodic grids, hydrodynamic field storage and the Madelung split
//! `Ψ = R exp(iS)`.
//!
//! The phase is stored as an affine background `k0·x − ω0·t` plus a periodic
//! residual so that plane waves and Galilean boosts stay exact on the torus.

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::calculus::{self, StencilConfig};
use crate::error::{Error, Result};

/// Scalar field sampled on a [`Grid`], row-major (axis 0 slowest).
pub type Field = Vec<f64>;

/// One scalar field per axis.
pub type VectorField = Vec<Field>;

/// Relative amplitude floor used whenever a quantity is divided by `R`.
pub const AMPLITUDE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    #[default]
    Periodic,
}

/// Rectangular periodic lattice in one to three dimensions.
///
/// Coordinates are cell-vertex centred on the origin: `x_i = −L/2 + i·h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    points: Vec<usize>,
    lengths: Vec<f64>,
    #[serde(default)]
    boundary: Boundary,
}

impl Grid {
    pub fn new(points: Vec<usize>, lengths: Vec<f64>) -> Result<Self> {
        if points.is_empty() || points.len() > 3 {
            return Err(Error::InvalidGrid(format!(
                "dimension must be 1, 2 or 3 (got {})",
                points.len()
            )));
        }
        if points.len() != lengths.len() {
            return Err(Error::InvalidGrid(format!(
                "{} point counts but {} lengths",
                points.len(),
                lengths.len()
            )));
        }
        if let Some(n) = points.iter().find(|&&n| n < 5) {
            return Err(Error::InvalidGrid(format!(
                "at least 5 points per axis are required (got {n})"
            )));
        }
        if let Some(l) = lengths.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(Error::InvalidGrid(format!("axis length must be positive (got {l})")));
        }
        Ok(Grid {
            points,
            lengths,
            boundary: Boundary::Periodic,
        })
    }

    /// One-dimensional grid of `n` points on a ring of length `length`.
    pub fn line(n: usize, length: f64) -> Result<Self> {
        Grid::new(vec![n], vec![length])
    }

    pub fn validate(&self) -> Result<()> {
        Grid::new(self.points.clone(), self.lengths.clone()).map(|_| ())
    }

    pub fn dim(&self) -> usize {
        self.points.len()
    }

    pub fn shape(&self) -> &[usize] {
        &self.points
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn len(&self) -> usize {
        self.points.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.lengths[axis] / self.points[axis] as f64
    }

    pub fn spacings(&self) -> Vec<f64> {
        (0..self.dim()).map(|a| self.spacing(a)).collect()
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacings().into_iter().fold(f64::INFINITY, f64::min)
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacings().iter().product()
    }

    /// Distance in memory between neighbours along `axis`.
    pub fn stride(&self, axis: usize) -> usize {
        self.points[axis + 1..].iter().product()
    }

    pub fn coordinate(&self, axis: usize, i: usize) -> f64 {
        -0.5 * self.lengths[axis] + i as f64 * self.spacing(axis)
    }

    pub fn coordinates(&self, axis: usize) -> Vec<f64> {
        (0..self.points[axis]).map(|i| self.coordinate(axis, i)).collect()
    }

    /// Multi-index of a flat index.
    pub fn unravel(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for axis in (0..self.dim()).rev() {
            idx[axis] = flat % self.points[axis];
            flat /= self.points[axis];
        }
        idx
    }

    pub fn ravel(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(&self.points)
            .fold(0, |acc, (&i, &n)| acc * n + i)
    }

    /// Field holding the coordinate `x_axis` at every point.
    pub fn coordinate_field(&self, axis: usize) -> Field {
        let stride = self.stride(axis);
        let n = self.points[axis];
        let h = self.spacing(axis);
        let x0 = -0.5 * self.lengths[axis];
        (0..self.len())
            .map(|flat| x0 + ((flat / stride) % n) as f64 * h)
            .collect()
    }

    /// Evaluate `f(x)` at every grid point.
    pub fn sample<F: Fn(&[f64]) -> f64>(&self, f: F) -> Field {
        let mut x = vec![0.0; self.dim()];
        (0..self.len())
            .map(|flat| {
                let idx = self.unravel(flat);
                for (axis, &i) in idx.iter().enumerate() {
                    x[axis] = self.coordinate(axis, i);
                }
                f(&x)
            })
            .collect()
    }

    /// One-dimensional grid matching a single axis of this one.
    pub fn axis_grid(&self, axis: usize) -> Grid {
        Grid {
            points: vec![self.points[axis]],
            lengths: vec![self.lengths[axis]],
            boundary: self.boundary,
        }
    }

    /// The fundamental wavevector `2π/L` of every axis.
    pub fn fundamental_wavevector(&self) -> Vec<f64> {
        self.lengths
            .iter()
            .map(|l| 2.0 * std::f64::consts::PI / l)
            .collect()
    }

    pub(crate) fn check_field(&self, field: &[f64]) -> Result<()> {
        if field.len() != self.len() {
            return Err(Error::ShapeMismatch {
                expected: self.len(),
                actual: field.len(),
            });
        }
        Ok(())
    }
}

/// Hydrodynamic state: amplitude `R ≥ 0` and phase
/// `S(x, t) = k0·x − ω0·t + residual(x)` at time `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HydroState {
    pub grid: Grid,
    pub amplitude: Field,
    pub phase_residual: Field,
    pub k0: Vec<f64>,
    pub omega0: f64,
    pub t: f64,
}

impl HydroState {
    pub fn new(grid: Grid, amplitude: Field, phase_residual: Field) -> Result<Self> {
        let k0 = vec![0.0; grid.dim()];
        HydroState::with_background(grid, amplitude, phase_residual, k0, 0.0, 0.0)
    }

    pub fn with_background(
        grid: Grid,
        amplitude: Field,
        phase_residual: Field,
        k0: Vec<f64>,
        omega0: f64,
        t: f64,
    ) -> Result<Self> {
        grid.check_field(&amplitude)?;
        grid.check_field(&phase_residual)?;
        if k0.len() != grid.dim() {
            return Err(Error::InvalidState(format!(
                "k0 has {} components on a {}-dimensional grid",
                k0.len(),
                grid.dim()
            )));
        }
        if let Some(r) = amplitude.iter().find(|r| !(r.is_finite() && **r >= 0.0)) {
            return Err(Error::InvalidState(format!(
                "amplitude must be finite and non-negative (found {r})"
            )));
        }
        if phase_residual.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidState("phase residual is not finite".into()));
        }
        if !(omega0.is_finite() && t.is_finite() && k0.iter().all(|k| k.is_finite())) {
            return Err(Error::InvalidState("background phase is not finite".into()));
        }
        Ok(HydroState {
            grid,
            amplitude,
            phase_residual,
            k0,
            omega0,
            t,
        })
    }

    /// Probability density `ρ = R²`.
    pub fn density(&self) -> Field {
        self.amplitude.iter().map(|r| r * r).collect()
    }

    pub fn max_amplitude(&self) -> f64 {
        self.amplitude.iter().copied().fold(0.0, f64::max)
    }

    /// Absolute amplitude floor `ε_R = 1e−8 · max R`.
    pub fn amplitude_floor(&self) -> f64 {
        let floor = AMPLITUDE_FLOOR * self.max_amplitude();
        if floor > 0.0 {
            floor
        } else {
            f64::MIN_POSITIVE
        }
    }

    /// `R` with every entry clamped from below at the amplitude floor.
    pub fn clamped_amplitude(&self) -> Field {
        let floor = self.amplitude_floor();
        self.amplitude.iter().map(|r| r.max(floor)).collect()
    }

    /// Flat indices of points where the phase is numerically undefined.
    pub fn nodal_points(&self) -> Vec<usize> {
        let floor = self.amplitude_floor();
        self.amplitude
            .iter()
            .enumerate()
            .filter(|(_, r)| **r < floor)
            .map(|(i, _)| i)
            .collect()
    }

    /// Total phase `S(x, t)` (not periodic when `k0 ≠ 0`).
    pub fn total_phase(&self) -> Field {
        let mut s = self.phase_residual.clone();
        for (axis, &k) in self.k0.iter().enumerate() {
            if k != 0.0 {
                for (si, x) in s.iter_mut().zip(self.grid.coordinate_field(axis)) {
                    *si += k * x;
                }
            }
        }
        let shift = self.omega0 * self.t;
        s.iter_mut().for_each(|si| *si -= shift);
        s
    }

    /// `∇S`: analytic on the background, finite differences on the residual.
    pub fn phase_gradient(&self, cfg: StencilConfig) -> VectorField {
        let mut grad = calculus::gradient(&self.phase_residual, &self.grid, cfg);
        for (component, &k) in grad.iter_mut().zip(&self.k0) {
            component.iter_mut().for_each(|g| *g += k);
        }
        grad
    }

    /// Same state with the density replaced, keeping the phase.
    pub(crate) fn with_density(&self, rho: &[f64]) -> HydroState {
        HydroState {
            amplitude: rho.iter().map(|r| r.max(0.0).sqrt()).collect(),
            ..self.clone()
        }
    }
}

/// Madelung split of a sampled wavefunction with `k0 = 0`.
///
/// The residual phase is the principal argument, which is single-valued on
/// the periodic grid. Points below the amplitude floor are reported by
/// [`HydroState::nodal_points`].
pub fn from_wavefunction(re: &[f64], im: &[f64], grid: &Grid) -> Result<HydroState> {
    let k0 = vec![0.0; grid.dim()];
    from_wavefunction_with_background(re, im, grid, &k0)
}

/// Madelung split after dividing out the plane wave `exp(i k0·x)`.
pub fn from_wavefunction_with_background(
    re: &[f64],
    im: &[f64],
    grid: &Grid,
    k0: &[f64],
) -> Result<HydroState> {
    grid.check_field(re)?;
    grid.check_field(im)?;
    let mut background = vec![0.0; grid.len()];
    for (axis, &k) in k0.iter().enumerate() {
        if k != 0.0 {
            for (b, x) in background.iter_mut().zip(grid.coordinate_field(axis)) {
                *b += k * x;
            }
        }
    }
    let mut amplitude = Vec::with_capacity(grid.len());
    let mut phase = Vec::with_capacity(grid.len());
    for ((&a, &b), &theta) in re.iter().zip(im).zip(&background) {
        let (s, c) = (-theta).sin_cos();
        let (ar, ai) = (a * c - b * s, a * s + b * c);
        amplitude.push(ar.hypot(ai));
        phase.push(ai.atan2(ar));
    }
    let state =
        HydroState::with_background(grid.clone(), amplitude, phase, k0.to_vec(), 0.0, 0.0)?;
    let nodes = state.nodal_points().len();
    if nodes > 0 {
        log::debug!("{nodes} points below the amplitude floor; their phase is arbitrary");
    }
    Ok(state)
}

/// Reassemble `Re Ψ`, `Im Ψ` from a hydrodynamic state.
pub fn to_wavefunction(state: &HydroState) -> (Field, Field) {
    state
        .amplitude
        .iter()
        .zip(state.total_phase())
        .map(|(r, s)| {
            let (sin, cos) = s.sin_cos();
            (r * cos, r * sin)
        })
        .unzip()
}

/// Discrete norm `Σ R² · ΔV`.
pub fn norm(state: &HydroState) -> f64 {
    state.amplitude.iter().map(|r| r * r).sum::<f64>() * state.grid.cell_volume()
}

/// Rescale `R` so that the discrete norm is one.
pub fn normalize(state: &mut HydroState) -> Result<()> {
    let n = norm(state);
    if !(n > 0.0 && n.is_finite()) {
        return Err(Error::InvalidState(format!("cannot normalize state with norm {n}")));
    }
    let scale = n.sqrt().recip();
    state.amplitude.iter_mut().for_each(|r| *r *= scale);
    Ok(())
}

/// Physical constants and the external potential.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct PhysicsParams {
    pub hbar: f64,
    pub mass: f64,
    #[serde(default)]
    pub potential: PotentialSpec,
}

impl Default for PhysicsParams {
    fn default() -> Self {
        PhysicsParams {
            hbar: 1.0,
            mass: 1.0,
            potential: PotentialSpec::Free,
        }
    }
}

impl PhysicsParams {
    pub fn new(hbar: f64, mass: f64, potential: PotentialSpec) -> Result<Self> {
        let params = PhysicsParams {
            hbar,
            mass,
            potential,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.hbar.is_finite() && self.hbar > 0.0) {
            return Err(Error::InvalidParameter {
                name: "hbar",
                reason: format!("must be positive (got {})", self.hbar),
            });
        }
        if !(self.mass.is_finite() && self.mass > 0.0) {
            return Err(Error::InvalidParameter {
                name: "mass",
                reason: format!("must be positive (got {})", self.mass),
            });
        }
        Ok(())
    }
}

/// External potential `V(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialSpec {
    #[default]
    Free,
    /// `½ m Σ ω_k² x_k²`, one frequency per axis.
    Harmonic { omega: Vec<f64> },
    /// Smooth square well of the given depth and full width on every axis.
    Box { depth: f64, width: f64 },
    /// Values sampled on the run grid.
    Tabulated { values: Vec<f64> },
    /// `V(x₁, x₂, …) = Σ V_k(x_k)`; one one-dimensional part per axis.
    Additive { parts: Vec<PotentialSpec> },
}

impl PotentialSpec {
    pub fn is_free(&self) -> bool {
        match self {
            PotentialSpec::Free => true,
            PotentialSpec::Additive { parts } => parts.iter().all(PotentialSpec::is_free),
            _ => false,
        }
    }

    /// Potential values on `grid`.
    pub fn sample(&self, grid: &Grid, mass: f64) -> Result<Field> {
        match self {
            PotentialSpec::Free => Ok(vec![0.0; grid.len()]),
            PotentialSpec::Harmonic { omega } => {
                let omega = self.per_axis(omega, grid)?;
                Ok(grid.sample(|x| {
                    x.iter()
                        .zip(&omega)
                        .map(|(xi, w)| 0.5 * mass * w * w * xi * xi)
                        .sum()
                }))
            }
            PotentialSpec::Box { depth, width } => {
                let edge = box_edge(*width)?;
                Ok(grid.sample(|x| -depth * x.iter().map(|&xi| box_profile(xi, *width, edge)).product::<f64>()))
            }
            PotentialSpec::Tabulated { values } => {
                grid.check_field(values)?;
                Ok(values.clone())
            }
            PotentialSpec::Additive { parts } => {
                if parts.len() != grid.dim() {
                    return Err(Error::InvalidParameter {
                        name: "potential.parts",
                        reason: format!(
                            "{} parts for a {}-dimensional grid",
                            parts.len(),
                            grid.dim()
                        ),
                    });
                }
                let mut total = vec![0.0; grid.len()];
                for (axis, part) in parts.iter().enumerate() {
                    let line = part.sample(&grid.axis_grid(axis), mass)?;
                    let stride = grid.stride(axis);
                    let n = grid.shape()[axis];
                    for (flat, v) in total.iter_mut().enumerate() {
                        *v += line[(flat / stride) % n];
                    }
                }
                Ok(total)
            }
        }
    }

    /// `∇V`, analytic where a closed form exists.
    pub fn gradient(&self, grid: &Grid, mass: f64, cfg: StencilConfig) -> Result<VectorField> {
        match self {
            PotentialSpec::Free => Ok(vec![vec![0.0; grid.len()]; grid.dim()]),
            PotentialSpec::Harmonic { omega } => {
                let omega = self.per_axis(omega, grid)?;
                Ok((0..grid.dim())
                    .map(|axis| {
                        let w2 = mass * omega[axis] * omega[axis];
                        grid.coordinate_field(axis).into_iter().map(|x| w2 * x).collect()
                    })
                    .collect())
            }
            PotentialSpec::Box { depth, width } => {
                let edge = box_edge(*width)?;
                Ok((0..grid.dim())
                    .map(|axis| {
                        grid.sample(|x| {
                            let mut g = -depth;
                            for (k, &xk) in x.iter().enumerate() {
                                g *= if k == axis {
                                    box_profile_derivative(xk, *width, edge)
                                } else {
                                    box_profile(xk, *width, edge)
                                };
                            }
                            g
                        })
                    })
                    .collect())
            }
            PotentialSpec::Tabulated { values } => {
                grid.check_field(values)?;
                Ok(calculus::gradient(values, grid, cfg))
            }
            PotentialSpec::Additive { parts } => {
                let total = self.sample(grid, mass)?;
                let mut grad = Vec::with_capacity(grid.dim());
                for (axis, part) in parts.iter().enumerate() {
                    let line_grid = grid.axis_grid(axis);
                    let line = part.gradient(&line_grid, mass, cfg)?.remove(0);
                    let stride = grid.stride(axis);
                    let n = grid.shape()[axis];
                    grad.push((0..total.len()).map(|flat| line[(flat / stride) % n]).collect());
                }
                Ok(grad)
            }
        }
    }

    fn per_axis(&self, omega: &[f64], grid: &Grid) -> Result<Vec<f64>> {
        match omega.len() {
            1 => Ok(vec![omega[0]; grid.dim()]),
            n if n == grid.dim() => Ok(omega.to_vec()),
            n => Err(Error::InvalidParameter {
                name: "potential.omega",
                reason: format!("{n} frequencies for a {}-dimensional grid", grid.dim()),
            }),
        }
    }
}

fn box_edge(width: f64) -> Result<f64> {
    if !(width.is_finite() && width > 0.0) {
        return Err(Error::InvalidParameter {
            name: "potential.width",
            reason: format!("must be positive (got {width})"),
        });
    }
    Ok(width / 20.0)
}

fn box_profile(x: f64, width: f64, edge: f64) -> f64 {
    0.5 * (((x + 0.5 * width) / edge).tanh() - ((x - 0.5 * width) / edge).tanh())
}

fn box_profile_derivative(x: f64, width: f64, edge: f64) -> f64 {
    let sech2 = |u: f64| 1.0 - u.tanh().powi(2);
    0.5 / edge * (sech2((x + 0.5 * width) / edge) - sech2((x - 0.5 * width) / edge))
}
