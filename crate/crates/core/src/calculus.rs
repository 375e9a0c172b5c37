//! Central finite-difference operators on periodic grids.
//!
//! All operators are circulant: first derivatives are antisymmetric and the
//! Laplacian is symmetric, so discrete summation by parts holds exactly and
//! the integral of any derivative vanishes up to rounding.

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::fields::{Field, Grid, VectorField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema, Default)]
#[serde(rename_all = "snake_case")]
pub enum StencilOrder {
    #[serde(rename = "2nd", alias = "second")]
    Second,
    #[default]
    #[serde(rename = "4th", alias = "fourth")]
    Fourth,
}

impl StencilOrder {
    pub fn as_int(self) -> u32 {
        match self {
            StencilOrder::Second => 2,
            StencilOrder::Fourth => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema, Default)]
pub struct StencilConfig {
    #[serde(default)]
    pub order: StencilOrder,
}

impl StencilConfig {
    pub const SECOND: StencilConfig = StencilConfig {
        order: StencilOrder::Second,
    };
    pub const FOURTH: StencilConfig = StencilConfig {
        order: StencilOrder::Fourth,
    };

    /// Offsets and weights of the first derivative (before division by h).
    fn first(self) -> &'static [(isize, f64)] {
        match self.order {
            StencilOrder::Second => &[(-1, -0.5), (1, 0.5)],
            StencilOrder::Fourth => &[
                (-2, 1.0 / 12.0),
                (-1, -8.0 / 12.0),
                (1, 8.0 / 12.0),
                (2, -1.0 / 12.0),
            ],
        }
    }

    /// Offsets and weights of the second derivative (before division by h²).
    fn second(self) -> &'static [(isize, f64)] {
        match self.order {
            StencilOrder::Second => &[(-1, 1.0), (0, -2.0), (1, 1.0)],
            StencilOrder::Fourth => &[
                (-2, -1.0 / 12.0),
                (-1, 16.0 / 12.0),
                (0, -30.0 / 12.0),
                (1, 16.0 / 12.0),
                (2, -1.0 / 12.0),
            ],
        }
    }

    /// Largest eigenvalue of `−∂²` per axis, times h².
    pub fn laplacian_spectral_radius(self) -> f64 {
        match self.order {
            StencilOrder::Second => 4.0,
            StencilOrder::Fourth => 16.0 / 3.0,
        }
    }

    /// Largest eigenvalue of `−∂∘∂` (squared first derivative) per axis, times h².
    pub fn first_derivative_spectral_radius(self) -> f64 {
        match self.order {
            StencilOrder::Second => 1.0,
            // max over θ of ((8 sin θ − sin 2θ) / 6)²
            StencilOrder::Fourth => 1.882_993_161_855,
        }
    }

    /// Half-width of the second-derivative stencil in cells.
    pub fn reach(self) -> usize {
        match self.order {
            StencilOrder::Second => 1,
            StencilOrder::Fourth => 2,
        }
    }
}

/// Apply a one-dimensional periodic stencil along `axis`.
fn apply_axis(field: &[f64], grid: &Grid, axis: usize, stencil: &[(isize, f64)], scale: f64) -> Field {
    let n = grid.shape()[axis];
    let stride = grid.stride(axis);
    let block = n * stride;
    let reach = stencil.iter().map(|(s, _)| s.unsigned_abs()).max().unwrap_or(0);
    let mut out = vec![0.0; field.len()];
    // Line with `reach` periodic ghost cells on each side.
    let mut line = vec![0.0; n + 2 * reach];
    for base in (0..field.len()).step_by(block) {
        for offset in 0..stride {
            let start = base + offset;
            for (i, v) in line.iter_mut().enumerate() {
                let j = (i + n - reach % n) % n;
                *v = field[start + j * stride];
            }
            for i in 0..n {
                let centre = i + reach;
                let mut acc = 0.0;
                for &(shift, w) in stencil {
                    acc += w * line[(centre as isize + shift) as usize];
                }
                out[start + i * stride] = acc * scale;
            }
        }
    }
    out
}

/// `∂f/∂x_axis`.
pub fn derivative(field: &[f64], grid: &Grid, axis: usize, cfg: StencilConfig) -> Field {
    debug_assert_eq!(field.len(), grid.len());
    apply_axis(field, grid, axis, cfg.first(), 1.0 / grid.spacing(axis))
}

/// `∂²f/∂x_axis²` with the compact stencil.
pub fn second_derivative(field: &[f64], grid: &Grid, axis: usize, cfg: StencilConfig) -> Field {
    let h = grid.spacing(axis);
    apply_axis(field, grid, axis, cfg.second(), 1.0 / (h * h))
}

pub fn gradient(field: &[f64], grid: &Grid, cfg: StencilConfig) -> VectorField {
    (0..grid.dim())
        .map(|axis| derivative(field, grid, axis, cfg))
        .collect()
}

pub fn divergence(vector: &[Field], grid: &Grid, cfg: StencilConfig) -> Field {
    debug_assert_eq!(vector.len(), grid.dim());
    let mut out = vec![0.0; grid.len()];
    for (axis, component) in vector.iter().enumerate() {
        for (o, d) in out.iter_mut().zip(derivative(component, grid, axis, cfg)) {
            *o += d;
        }
    }
    out
}

/// Compact-stencil Laplacian (symmetric).
pub fn laplacian(field: &[f64], grid: &Grid, cfg: StencilConfig) -> Field {
    let mut out = vec![0.0; grid.len()];
    for axis in 0..grid.dim() {
        for (o, d) in out.iter_mut().zip(second_derivative(field, grid, axis, cfg)) {
            *o += d;
        }
    }
    out
}

/// `ΔΔf` as the composition of two Laplacians.
pub fn bilaplacian(field: &[f64], grid: &Grid, cfg: StencilConfig) -> Field {
    laplacian(&laplacian(field, grid, cfg), grid, cfg)
}

/// `∇·∇f` built from the first-derivative stencil.
///
/// This is the operator that arises from varying `Σ |∇f|²`, so it is the one
/// used for the kinetic `(∇R)²` term.
pub fn div_grad(field: &[f64], grid: &Grid, cfg: StencilConfig) -> Field {
    divergence(&gradient(field, grid, cfg), grid, cfg)
}

/// Riemann sum `Σ f ΔV`.
pub fn integrate(field: &[f64], grid: &Grid) -> f64 {
    field.iter().sum::<f64>() * grid.cell_volume()
}

/// `Σ f g ΔV`.
pub fn inner(f: &[f64], g: &[f64], grid: &Grid) -> f64 {
    f.iter().zip(g).map(|(a, b)| a * b).sum::<f64>() * grid.cell_volume()
}

/// Pointwise `|v|²` of a vector field.
pub fn squared_magnitude(vector: &[Field]) -> Field {
    let mut out = vec![0.0; vector[0].len()];
    for component in vector {
        for (o, c) in out.iter_mut().zip(component) {
            *o += c * c;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn max_abs(v: &[f64]) -> f64 {
        v.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    fn max_err(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
    }

    #[test]
    fn constants_have_zero_derivatives() {
        let g = Grid::new(vec![16, 12], vec![3.0, 2.0]).unwrap();
        let f = vec![2.5; g.len()];
        for cfg in [StencilConfig::SECOND, StencilConfig::FOURTH] {
            assert!(gradient(&f, &g, cfg).iter().all(|c| max_abs(c) < 1e-12));
            assert!(max_abs(&laplacian(&f, &g, cfg)) < 1e-10);
            assert!(max_abs(&bilaplacian(&f, &g, cfg)) < 1e-8);
            assert!(max_abs(&divergence(&[f.clone(), f.clone()], &g, cfg)) < 1e-12);
        }
    }

    #[test]
    fn sine_derivatives_against_analytic() {
        let l = 10.0;
        let k = 2.0 * PI / l;
        let g = Grid::line(64, l).unwrap();
        let f = g.sample(|x| (k * x[0]).sin());
        let df = g.sample(|x| k * (k * x[0]).cos());
        let lf: Vec<f64> = f.iter().map(|v| -k * k * v).collect();
        let bf: Vec<f64> = f.iter().map(|v| k.powi(4) * v).collect();
        let cfg = StencilConfig::FOURTH;
        let h = g.spacing(0);
        assert!(max_err(&derivative(&f, &g, 0, cfg), &df) < k.powi(5) * h.powi(4));
        assert!(max_err(&laplacian(&f, &g, cfg), &lf) < k.powi(6) * h.powi(4));
        assert!(max_err(&bilaplacian(&f, &g, cfg), &bf) < 2.0 * k.powi(8) * h.powi(4));
    }

    #[test]
    fn polynomial_exactness_on_interior() {
        // Periodic wrap breaks polynomials at the seam; check away from it.
        let g = Grid::line(40, 8.0).unwrap();
        let cubic = g.sample(|x| x[0].powi(3) - 2.0 * x[0]);
        let quartic = g.sample(|x| x[0].powi(4));
        let d = derivative(&cubic, &g, 0, StencilConfig::FOURTH);
        let l = laplacian(&quartic, &g, StencilConfig::FOURTH);
        let l2 = laplacian(&g.sample(|x| x[0] * x[0]), &g, StencilConfig::SECOND);
        for i in 4..36 {
            let x = g.coordinate(0, i);
            assert!((d[i] - (3.0 * x * x - 2.0)).abs() < 1e-10);
            assert!((l[i] - 12.0 * x * x).abs() < 1e-9);
            assert!((l2[i] - 2.0).abs() < 1e-10);
        }
        let quadratic_phase = g.sample(|x| 0.3 * x[0] * x[0]);
        let b = bilaplacian(&quadratic_phase, &g, StencilConfig::FOURTH);
        for &v in &b[8..32] {
            assert!(v.abs() < 1e-9);
        }
    }

    #[test]
    fn laplacian_is_separable() {
        let g = Grid::new(vec![32, 24], vec![6.0, 4.0]).unwrap();
        let (k1, k2) = (2.0 * PI / 6.0, 4.0 * PI / 4.0);
        let f = g.sample(|x| (k1 * x[0]).sin() + (k2 * x[1]).sin());
        let lap = laplacian(&f, &g, StencilConfig::FOURTH);
        let g1 = g.axis_grid(0);
        let g2 = g.axis_grid(1);
        let l1 = laplacian(&g1.sample(|x| (k1 * x[0]).sin()), &g1, StencilConfig::FOURTH);
        let l2 = laplacian(&g2.sample(|x| (k2 * x[0]).sin()), &g2, StencilConfig::FOURTH);
        for (flat, v) in lap.iter().enumerate() {
            let idx = g.unravel(flat);
            assert!((v - (l1[idx[0]] + l2[idx[1]])).abs() < 1e-12);
        }
    }

    #[test]
    fn divergence_of_sine_field() {
        let l = 8.0;
        let k = 2.0 * PI / l;
        let g = Grid::new(vec![64, 16], vec![l, 3.0]).unwrap();
        let vx = g.sample(|x| (k * x[0]).sin());
        let div = divergence(&[vx, vec![0.0; g.len()]], &g, StencilConfig::FOURTH);
        let exact = g.sample(|x| k * (k * x[0]).cos());
        assert!(max_err(&div, &exact) < 1e-4);
        assert!(integrate(&div, &g).abs() < 1e-12);
    }

    #[test]
    fn bilaplacian_is_composition() {
        let g = Grid::line(50, 5.0).unwrap();
        let f = g.sample(|x| (x[0]).sin().exp());
        let cfg = StencilConfig::FOURTH;
        assert_eq!(bilaplacian(&f, &g, cfg), laplacian(&laplacian(&f, &g, cfg), &g, cfg));
    }

    #[test]
    fn convergence_order() {
        let l = 2.0 * PI;
        let err = |n: usize, cfg: StencilConfig| {
            let g = Grid::line(n, l).unwrap();
            let f = g.sample(|x| (x[0].sin()).exp());
            let exact = g.sample(|x| {
                let (s, c) = x[0].sin_cos();
                (c * c - s) * s.exp()
            });
            max_err(&laplacian(&f, &g, cfg), &exact)
        };
        for (cfg, order) in [(StencilConfig::SECOND, 2.0), (StencilConfig::FOURTH, 4.0)] {
            let measured = (err(32, cfg) / err(64, cfg)).log2();
            assert!((measured - order).abs() < 0.3, "order {order}: measured {measured}");
        }
    }

    #[test]
    fn spectral_radii() {
        // Brute-force the symbols on a fine θ grid.
        let cfg = StencilConfig::FOURTH;
        let mut lap: f64 = 0.0;
        let mut first: f64 = 0.0;
        for i in 0..=100_000 {
            let t = PI * i as f64 / 100_000.0;
            lap = lap.max((30.0 - 32.0 * t.cos() + 2.0 * (2.0 * t).cos()) / 12.0);
            first = first.max(((8.0 * t.sin() - (2.0 * t).sin()) / 6.0).powi(2));
        }
        assert!((lap - cfg.laplacian_spectral_radius()).abs() < 1e-9);
        assert!((first - cfg.first_derivative_spectral_radius()).abs() < 1e-8);
    }
}
