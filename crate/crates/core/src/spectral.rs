//! FFT plumbing for the split-step reference evolvers.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::fields::{self, Field, Grid, HydroState};

/// Forward/inverse n-dimensional FFT on a grid plus the `|k|²` table.
pub struct Spectral {
    grid: Grid,
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
    k_squared: Field,
}

impl Spectral {
    pub fn new(grid: &Grid) -> Self {
        let mut planner = FftPlanner::new();
        let forward = grid.shape().iter().map(|&n| planner.plan_fft_forward(n)).collect();
        let inverse = grid.shape().iter().map(|&n| planner.plan_fft_inverse(n)).collect();
        let mut k_squared = vec![0.0; grid.len()];
        for axis in 0..grid.dim() {
            let k = wavenumbers(grid.shape()[axis], grid.lengths()[axis]);
            let stride = grid.stride(axis);
            let n = grid.shape()[axis];
            for (flat, v) in k_squared.iter_mut().enumerate() {
                let kk = k[(flat / stride) % n];
                *v += kk * kk;
            }
        }
        Spectral {
            grid: grid.clone(),
            forward,
            inverse,
            k_squared,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn k_squared(&self) -> &[f64] {
        &self.k_squared
    }

    fn transform(&self, data: &mut [Complex64], plans: &[Arc<dyn Fft<f64>>]) {
        for (axis, plan) in plans.iter().enumerate() {
            let n = self.grid.shape()[axis];
            let stride = self.grid.stride(axis);
            let block = n * stride;
            let mut line = vec![Complex64::new(0.0, 0.0); n];
            for base in (0..data.len()).step_by(block) {
                for offset in 0..stride {
                    let start = base + offset;
                    for (i, v) in line.iter_mut().enumerate() {
                        *v = data[start + i * stride];
                    }
                    plan.process(&mut line);
                    for (i, v) in line.iter().enumerate() {
                        data[start + i * stride] = *v;
                    }
                }
            }
        }
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.transform(data, &self.forward);
    }

    /// Normalized inverse transform.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.transform(data, &self.inverse);
        let scale = 1.0 / self.grid.len() as f64;
        data.iter_mut().for_each(|v| *v *= scale);
    }

    /// Exact free propagation `exp(−iħk²dt/2m)` in Fourier space.
    pub fn kinetic_step(&self, psi: &mut [Complex64], hbar: f64, mass: f64, dt: f64) {
        self.forward(psi);
        let c = hbar * dt / (2.0 * mass);
        for (v, k2) in psi.iter_mut().zip(&self.k_squared) {
            *v *= Complex64::from_polar(1.0, -c * k2);
        }
        self.inverse(psi);
    }
}

/// FFT-ordered angular wavenumbers of an axis.
pub fn wavenumbers(n: usize, length: f64) -> Vec<f64> {
    let dk = 2.0 * PI / length;
    (0..n)
        .map(|j| {
            let j = j as i64;
            let signed = if j < (n as i64 + 1) / 2 { j } else { j - n as i64 };
            dk * signed as f64
        })
        .collect()
}

/// Whether `k0·L` is a multiple of 2π on every axis, i.e. `exp(i k0·x)` is
/// periodic on the grid.
pub fn is_grid_compatible(grid: &Grid, k0: &[f64]) -> bool {
    k0.iter().zip(grid.lengths()).all(|(k, l)| {
        let winding = k * l / (2.0 * PI);
        (winding - winding.round()).abs() < 1e-9
    })
}

/// Sampled wavefunction of a state whose background is periodic.
pub fn wavefunction(state: &HydroState) -> Result<Vec<Complex64>> {
    if !is_grid_compatible(&state.grid, &state.k0) {
        return Err(Error::Unsupported(format!(
            "background wavevector {:?} is not periodic on the grid",
            state.k0
        )));
    }
    let (re, im) = fields::to_wavefunction(state);
    Ok(re.into_iter().zip(im).map(|(a, b)| Complex64::new(a, b)).collect())
}

/// Madelung split of a sampled wavefunction relative to background `k0`.
pub fn state_from_wavefunction(psi: &[Complex64], grid: &Grid, k0: &[f64], t: f64) -> Result<HydroState> {
    let re: Vec<f64> = psi.iter().map(|c| c.re).collect();
    let im: Vec<f64> = psi.iter().map(|c| c.im).collect();
    let mut state = fields::from_wavefunction_with_background(&re, &im, grid, k0)?;
    // The background exp(i k0·x) was divided out; the sampled Ψ already
    // carries all time dependence, so ω0 stays zero.
    state.t = t;
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wavenumbers_are_fft_ordered() {
        let k = wavenumbers(4, 2.0 * PI);
        assert_eq!(k, vec![0.0, 1.0, -2.0, -1.0]);
        let k = wavenumbers(5, 2.0 * PI);
        assert_eq!(k, vec![0.0, 1.0, 2.0, -2.0, -1.0]);
    }

    #[test]
    fn round_trip_transform() {
        let g = Grid::new(vec![8, 6], vec![1.0, 2.0]).unwrap();
        let sp = Spectral::new(&g);
        let data: Vec<Complex64> = (0..g.len()).map(|i| Complex64::new(i as f64, -(i as f64).sqrt())).collect();
        let mut work = data.clone();
        sp.forward(&mut work);
        sp.inverse(&mut work);
        for (a, b) in work.iter().zip(&data) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn plane_wave_is_an_eigenfunction() {
        let g = Grid::line(32, 4.0).unwrap();
        let sp = Spectral::new(&g);
        let k = 3.0 * 2.0 * PI / 4.0;
        let mut psi: Vec<Complex64> = g.coordinates(0).iter().map(|x| Complex64::from_polar(1.0, k * x)).collect();
        let orig = psi.clone();
        sp.kinetic_step(&mut psi, 1.0, 1.0, 0.3);
        let phase = Complex64::from_polar(1.0, -k * k / 2.0 * 0.3);
        for (a, b) in psi.iter().zip(&orig) {
            assert!((a - b * phase).norm() < 1e-12);
        }
    }

    #[test]
    fn compatibility() {
        let g = Grid::line(16, 10.0).unwrap();
        assert!(is_grid_compatible(&g, &[2.0 * PI / 10.0 * 3.0]));
        assert!(!is_grid_compatible(&g, &[1.0]));
    }
}
