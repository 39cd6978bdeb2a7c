//! Cell-centred vector densities on a uniform 1D grid.

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::space::StateSpace;
use serde::{Deserialize, Serialize};

/// `N` cells on `[x_min, x_max]`, each holding a value in `ℝⁿ` (row-major `N×n`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridDensity {
    pub x_min: f64,
    pub x_max: f64,
    pub cells: usize,
    pub n: usize,
    pub values: Vec<f64>,
}

impl GridDensity {
    pub fn new(x_min: f64, x_max: f64, cells: usize, n: usize, values: Vec<f64>) -> Result<Self> {
        if !(x_max > x_min) || !x_min.is_finite() || !x_max.is_finite() {
            return Err(Error::Input(format!("bad domain [{x_min}, {x_max}]")));
        }
        if cells == 0 || n == 0 {
            return Err(Error::Input("grid needs at least one cell and one component".into()));
        }
        if values.len() != cells * n {
            return Err(Error::Input(format!(
                "expected {} values for {cells} cells × {n} components, got {}",
                cells * n,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("density values must be finite".into()));
        }
        Ok(GridDensity { x_min, x_max, cells, n, values })
    }

    /// Samples `f(x)` (returning all components) at cell centres.
    pub fn from_fn(x_min: f64, x_max: f64, cells: usize, n: usize, f: impl Fn(f64) -> Vec<f64>) -> Result<Self> {
        let dx = (x_max - x_min) / cells as f64;
        let mut values = Vec::with_capacity(cells * n);
        for i in 0..cells {
            let v = f(x_min + (i as f64 + 0.5) * dx);
            if v.len() != n {
                return Err(Error::Input("component count mismatch".into()));
            }
            values.extend(v);
        }
        GridDensity::new(x_min, x_max, cells, n, values)
    }

    /// Per-component background plus scalar fields sampled at cell centres.
    pub fn from_fields(x_min: f64, x_max: f64, cells: usize, background: &[f64], fields: &[ScalarField]) -> Result<Self> {
        if background.len() != fields.len() {
            return Err(Error::Input("background and field counts differ".into()));
        }
        GridDensity::from_fn(x_min, x_max, cells, fields.len(), |x| {
            fields.iter().zip(background).map(|(f, b)| b + f.at_x(x)).collect()
        })
    }

    pub fn constant(x_min: f64, x_max: f64, cells: usize, value: &[f64]) -> Result<Self> {
        GridDensity::from_fn(x_min, x_max, cells, value.len(), |_| value.to_vec())
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / self.cells as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x_min + (i as f64 + 0.5) * self.dx()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let n = self.n;
        &mut self.values[i * n..(i + 1) * n]
    }

    pub fn same_grid(&self, o: &GridDensity) -> bool {
        self.cells == o.cells && self.n == o.n && self.x_min == o.x_min && self.x_max == o.x_max
    }

    pub fn check_same_grid(&self, o: &GridDensity) -> Result<()> {
        if self.same_grid(o) {
            Ok(())
        } else {
            Err(Error::Input("densities live on different grids".into()))
        }
    }

    pub fn with_values(&self, values: Vec<f64>) -> GridDensity {
        assert_eq!(values.len(), self.values.len());
        GridDensity { values, ..self.clone() }
    }

    /// Every row lies in `S`.
    pub fn check_in(&self, space: &StateSpace) -> Result<()> {
        if space.dim() != self.n {
            return Err(Error::Input(format!(
                "density has {} components, state space has dimension {}",
                self.n,
                space.dim()
            )));
        }
        for i in 0..self.cells {
            if !space.contains(self.row(i))? {
                return Err(Error::Input(format!("cell {i} value {:?} is not in S", self.row(i))));
            }
        }
        Ok(())
    }

    /// `Δx Σ_i μ_i` per component.
    pub fn mass(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.n];
        for i in 0..self.cells {
            for (c, v) in self.row(i).iter().enumerate() {
                m[c] += v;
            }
        }
        m.iter().map(|v| v * self.dx()).collect()
    }

    /// `Δx Σ_i (μ_i − z̄)` per component.
    pub fn mass_relative(&self, zref: &[f64]) -> Vec<f64> {
        let l = self.x_max - self.x_min;
        self.mass().iter().zip(zref).map(|(m, z)| m - z * l).collect()
    }

    /// Discrete `L²` norm of `μ − ν`.
    pub fn l2_distance(&self, o: &GridDensity) -> f64 {
        (self.values.iter().zip(&o.values).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() * self.dx()).sqrt()
    }

    pub fn l2_norm(&self) -> f64 {
        (self.values.iter().map(|a| a * a).sum::<f64>() * self.dx()).sqrt()
    }

    /// `L²` norm of `μ − z̄`.
    pub fn l2_deviation(&self, zref: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..self.cells {
            for (v, z) in self.row(i).iter().zip(zref) {
                s += (v - z) * (v - z);
            }
        }
        (s * self.dx()).sqrt()
    }

    /// `‖∂ₓμ‖²` with forward differences over the `N−1` interior faces.
    pub fn grad_norm_sq(&self) -> f64 {
        let dx = self.dx();
        let mut s = 0.0;
        for i in 0..self.cells.saturating_sub(1) {
            for c in 0..self.n {
                let d = (self.values[(i + 1) * self.n + c] - self.values[i * self.n + c]) / dx;
                s += d * d;
            }
        }
        s * dx
    }

    /// Scalar density of component `c`.
    pub fn component(&self, c: usize) -> GridDensity {
        let values = (0..self.cells).map(|i| self.values[i * self.n + c]).collect();
        GridDensity { n: 1, values, ..self.clone() }
    }

    /// Linear blend `(1−θ)·self + θ·o`.
    pub fn blend(&self, o: &GridDensity, theta: f64) -> GridDensity {
        self.with_values(self.values.iter().zip(&o.values).map(|(a, b)| (1.0 - theta) * a + theta * b).collect())
    }
}

/// `Δx Σ_i x_i² 𝖾ᵀ(μ_i − z̄)`.
pub fn second_moment(mu: &GridDensity, zref: &[f64]) -> f64 {
    let dx = mu.dx();
    (0..mu.cells)
        .map(|i| {
            let x = mu.x(i);
            x * x * mu.row(i).iter().zip(zref).map(|(v, z)| v - z).sum::<f64>()
        })
        .sum::<f64>()
        * dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mass_and_moment() {
        let mu = GridDensity::from_fn(-1.0, 2.0, 300, 1, |x| vec![if (0.0..1.0).contains(&x) { 1.0 } else { 0.0 }]).unwrap();
        assert!((mu.mass()[0] - 1.0).abs() < 1e-12);
        // exact 1/3, midpoint error Δx²/12
        assert!((second_moment(&mu, &[0.0]) - 1.0 / 3.0).abs() < 1e-4);
        let c = GridDensity::constant(0.0, 1.0, 8, &[0.3, 0.2]).unwrap();
        assert_eq!(second_moment(&c, &[0.3, 0.2]), 0.0);
    }

    #[test]
    fn shifted_bump_has_larger_moment() {
        let b = |s: f64| GridDensity::from_fn(-3.0, 3.0, 120, 1, move |x| vec![(-(x - s) * (x - s) / 0.1).exp()]).unwrap();
        assert!(second_moment(&b(0.5), &[0.0]) > second_moment(&b(0.0), &[0.0]));
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(GridDensity::new(0.0, 1.0, 3, 1, vec![0.0; 2]).is_err());
        assert!(GridDensity::new(1.0, 1.0, 3, 1, vec![0.0; 3]).is_err());
    }
}
