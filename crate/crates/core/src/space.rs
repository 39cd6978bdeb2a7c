//! Compact convex state spaces `S ⊂ ℝⁿ`.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StateSpace {
    Cuboid { lower: Vec<f64>, upper: Vec<f64> },
    /// `{z ≥ 0, Σ z ≤ 1}`.
    Simplex { dim: usize },
    /// Closed unit ball.
    Ball { dim: usize },
}

impl StateSpace {
    pub fn cuboid(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let s = StateSpace::Cuboid { lower, upper };
        s.validate()?;
        Ok(s)
    }

    pub fn unit_cube(n: usize) -> Self {
        StateSpace::Cuboid { lower: vec![0.0; n], upper: vec![1.0; n] }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            StateSpace::Cuboid { lower, upper } => {
                if lower.is_empty() || lower.len() != upper.len() {
                    return Err(Error::Input("cuboid bounds must be nonempty and of equal length".into()));
                }
                if lower.len() > 8 {
                    return Err(Error::Input("dimensions above 8 are not supported".into()));
                }
                if lower.iter().zip(upper).any(|(l, u)| !(l < u) || !l.is_finite() || !u.is_finite()) {
                    return Err(Error::Input("cuboid requires finite lower < upper componentwise".into()));
                }
            }
            StateSpace::Simplex { dim } | StateSpace::Ball { dim } => {
                if *dim == 0 || *dim > 8 {
                    return Err(Error::Input("dimension must be in 1..=8".into()));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            StateSpace::Cuboid { lower, .. } => lower.len(),
            StateSpace::Simplex { dim } | StateSpace::Ball { dim } => *dim,
        }
    }

    pub fn check_dim(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.dim() {
            return Err(Error::Input(format!(
                "dimension mismatch: expected {}, got {}",
                self.dim(),
                z.len()
            )));
        }
        Ok(())
    }

    /// Closed-set membership with tolerance 0.
    pub fn contains(&self, z: &[f64]) -> Result<bool> {
        self.check_dim(z)?;
        Ok(self.contains_unchecked(z))
    }

    pub(crate) fn contains_unchecked(&self, z: &[f64]) -> bool {
        if z.iter().any(|v| !v.is_finite()) {
            return false;
        }
        match self {
            StateSpace::Cuboid { lower, upper } => {
                z.iter().zip(lower.iter().zip(upper)).all(|(v, (l, u))| *l <= *v && *v <= *u)
            }
            StateSpace::Simplex { .. } => z.iter().all(|v| *v >= 0.0) && z.iter().sum::<f64>() <= 1.0,
            StateSpace::Ball { .. } => z.iter().map(|v| v * v).sum::<f64>() <= 1.0,
        }
    }

    /// Euclidean-style distance to `∂S`, positive inside, zero on the boundary,
    /// negative outside.
    pub fn interior_distance(&self, z: &[f64]) -> f64 {
        match self {
            StateSpace::Cuboid { lower, upper } => z
                .iter()
                .zip(lower.iter().zip(upper))
                .map(|(v, (l, u))| (v - l).min(u - v))
                .fold(f64::INFINITY, f64::min),
            StateSpace::Simplex { dim } => {
                let m = z.iter().cloned().fold(f64::INFINITY, f64::min);
                let cap = (1.0 - z.iter().sum::<f64>()) / (*dim as f64).sqrt();
                m.min(cap)
            }
            StateSpace::Ball { .. } => 1.0 - z.iter().map(|v| v * v).sum::<f64>().sqrt(),
        }
    }

    /// Outward unit normals of the faces active at `z` (within `tol`).
    pub fn boundary_normals(&self, z: &[f64], tol: f64) -> Result<Vec<Vec<f64>>> {
        self.check_dim(z)?;
        let d = self.interior_distance(z);
        if d < -tol {
            return Err(Error::Input(format!("point lies outside S by {}", -d)));
        }
        let n = self.dim();
        let unit = |j: usize, s: f64| {
            let mut v = vec![0.0; n];
            v[j] = s;
            v
        };
        let mut out = Vec::new();
        match self {
            StateSpace::Cuboid { lower, upper } => {
                for j in 0..n {
                    if (z[j] - lower[j]).abs() <= tol {
                        out.push(unit(j, -1.0));
                    }
                    if (upper[j] - z[j]).abs() <= tol {
                        out.push(unit(j, 1.0));
                    }
                }
            }
            StateSpace::Simplex { .. } => {
                for (j, zj) in z.iter().enumerate() {
                    if zj.abs() <= tol {
                        out.push(unit(j, -1.0));
                    }
                }
                if (1.0 - z.iter().sum::<f64>()).abs() <= tol {
                    let s = 1.0 / (n as f64).sqrt();
                    out.push(vec![s; n]);
                }
            }
            StateSpace::Ball { .. } => {
                let r = z.iter().map(|v| v * v).sum::<f64>().sqrt();
                if (1.0 - r).abs() <= tol && r > 0.0 {
                    out.push(z.iter().map(|v| v / r).collect());
                }
            }
        }
        Ok(out)
    }

    /// Euclidean projection onto `S`.
    pub fn project(&self, z: &[f64]) -> Vec<f64> {
        match self {
            StateSpace::Cuboid { lower, upper } => z
                .iter()
                .zip(lower.iter().zip(upper))
                .map(|(v, (l, u))| v.clamp(*l, *u))
                .collect(),
            StateSpace::Simplex { .. } => {
                let clipped: Vec<f64> = z.iter().map(|v| v.max(0.0)).collect();
                if clipped.iter().sum::<f64>() <= 1.0 {
                    return clipped;
                }
                // projection onto {z ≥ 0, Σz = 1}
                let mut s = z.to_vec();
                s.sort_by(|a, b| b.partial_cmp(a).unwrap());
                let mut cum = 0.0;
                let mut theta = 0.0;
                for (k, v) in s.iter().enumerate() {
                    cum += v;
                    let t = (cum - 1.0) / (k as f64 + 1.0);
                    if v - t > 0.0 {
                        theta = t;
                    }
                }
                let mut p: Vec<f64> = z.iter().map(|v| (v - theta).max(0.0)).collect();
                while p.iter().sum::<f64>() > 1.0 {
                    p.iter_mut().for_each(|v| *v *= 1.0 - f64::EPSILON);
                }
                p
            }
            StateSpace::Ball { .. } => {
                let r2 = z.iter().map(|v| v * v).sum::<f64>();
                if r2 <= 1.0 {
                    return z.to_vec();
                }
                // the rounded quotient can still sit an ulp outside
                let r = r2.sqrt();
                let mut p: Vec<f64> = z.iter().map(|v| v / r).collect();
                while p.iter().map(|v| v * v).sum::<f64>() > 1.0 {
                    p.iter_mut().for_each(|v| *v *= 1.0 - f64::EPSILON);
                }
                p
            }
        }
    }

    /// A fixed interior reference point.
    pub fn center(&self) -> Vec<f64> {
        match self {
            StateSpace::Cuboid { lower, upper } => {
                lower.iter().zip(upper).map(|(l, u)| 0.5 * (l + u)).collect()
            }
            StateSpace::Simplex { dim } => vec![1.0 / (*dim as f64 + 1.0); *dim],
            StateSpace::Ball { dim } => vec![0.0; *dim],
        }
    }

    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            StateSpace::Cuboid { lower, upper } => (lower.clone(), upper.clone()),
            StateSpace::Simplex { dim } => (vec![0.0; *dim], vec![1.0; *dim]),
            StateSpace::Ball { dim } => (vec![-1.0; *dim], vec![1.0; *dim]),
        }
    }

    /// Moves `z` along the segment towards [`center`](Self::center) until its
    /// interior distance is at least `margin`.
    pub fn push_inside(&self, z: &[f64], margin: f64) -> Vec<f64> {
        if self.interior_distance(z) >= margin {
            return z.to_vec();
        }
        let c = self.center();
        let at = |t: f64| -> Vec<f64> { z.iter().zip(&c).map(|(a, b)| a + t * (b - a)).collect() };
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if self.interior_distance(&at(mid)) >= margin {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        at(hi)
    }

    /// Number of logarithmic barrier terms per point.
    pub fn barrier_terms(&self) -> usize {
        match self {
            StateSpace::Cuboid { lower, .. } => 2 * lower.len(),
            StateSpace::Simplex { dim } => dim + 1,
            StateSpace::Ball { .. } => 1,
        }
    }

    /// Logarithmic barrier value, gradient and row-major Hessian; `None` outside `int S`.
    pub fn barrier(&self, z: &[f64]) -> Option<(f64, Vec<f64>, Vec<f64>)> {
        let n = z.len();
        let mut g = vec![0.0; n];
        let mut h = vec![0.0; n * n];
        let mut v = 0.0;
        match self {
            StateSpace::Cuboid { lower, upper } => {
                for j in 0..n {
                    let a = z[j] - lower[j];
                    let b = upper[j] - z[j];
                    if !(a > 0.0 && b > 0.0) {
                        return None;
                    }
                    v -= a.ln() + b.ln();
                    g[j] = -1.0 / a + 1.0 / b;
                    h[j * n + j] = 1.0 / (a * a) + 1.0 / (b * b);
                }
            }
            StateSpace::Simplex { .. } => {
                let s = 1.0 - z.iter().sum::<f64>();
                if !(s > 0.0) {
                    return None;
                }
                v -= s.ln();
                for j in 0..n {
                    if !(z[j] > 0.0) {
                        return None;
                    }
                    v -= z[j].ln();
                    g[j] = -1.0 / z[j] + 1.0 / s;
                    for k in 0..n {
                        h[j * n + k] = 1.0 / (s * s);
                    }
                    h[j * n + j] += 1.0 / (z[j] * z[j]);
                }
            }
            StateSpace::Ball { .. } => {
                let s = 1.0 - z.iter().map(|x| x * x).sum::<f64>();
                if !(s > 0.0) {
                    return None;
                }
                v = -s.ln();
                for j in 0..n {
                    g[j] = 2.0 * z[j] / s;
                    for k in 0..n {
                        h[j * n + k] = 4.0 * z[j] * z[k] / (s * s);
                    }
                    h[j * n + j] += 2.0 / s;
                }
            }
        }
        Some((v, g, h))
    }

    /// Largest `α ≥ 0` (capped at `cap`) with `z + α d ∈ S`, for `z ∈ S`.
    pub fn max_step(&self, z: &[f64], d: &[f64], cap: f64) -> f64 {
        let mut a = cap;
        match self {
            StateSpace::Cuboid { lower, upper } => {
                for j in 0..z.len() {
                    if d[j] > 0.0 {
                        a = a.min((upper[j] - z[j]) / d[j]);
                    } else if d[j] < 0.0 {
                        a = a.min((lower[j] - z[j]) / d[j]);
                    }
                }
            }
            StateSpace::Simplex { .. } => {
                for j in 0..z.len() {
                    if d[j] < 0.0 {
                        a = a.min(-z[j] / d[j]);
                    }
                }
                let sd: f64 = d.iter().sum();
                if sd > 0.0 {
                    a = a.min((1.0 - z.iter().sum::<f64>()) / sd);
                }
            }
            StateSpace::Ball { .. } => {
                let dd: f64 = d.iter().map(|v| v * v).sum();
                if dd > 0.0 {
                    let zd: f64 = z.iter().zip(d).map(|(a, b)| a * b).sum();
                    let zz: f64 = z.iter().map(|v| v * v).sum();
                    let disc = (zd * zd + dd * (1.0 - zz)).max(0.0);
                    a = a.min((-zd + disc.sqrt()) / dd);
                }
            }
        }
        a.max(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn membership_examples() {
        assert!(StateSpace::unit_cube(2).contains(&[0.5, 0.5]).unwrap());
        assert!(!StateSpace::Simplex { dim: 2 }.contains(&[0.6, 0.6]).unwrap());
        assert!(StateSpace::Ball { dim: 2 }.contains(&[1.0, 0.0]).unwrap());
        assert!(StateSpace::Ball { dim: 2 }.contains(&[1.0]).is_err());
    }

    #[test]
    fn normal_examples() {
        let n = StateSpace::unit_cube(2).boundary_normals(&[0.0, 0.5], 1e-12).unwrap();
        assert_eq!(n, vec![vec![-1.0, 0.0]]);
        let n = StateSpace::Simplex { dim: 2 }.boundary_normals(&[0.5, 0.5], 1e-12).unwrap();
        let s = 1.0 / 2f64.sqrt();
        assert_eq!(n, vec![vec![s, s]]);
        let n = StateSpace::Ball { dim: 2 }.boundary_normals(&[0.6, 0.8], 1e-12).unwrap();
        assert!((n[0][0] - 0.6).abs() < 1e-15 && (n[0][1] - 0.8).abs() < 1e-15);
        assert!(StateSpace::unit_cube(2).boundary_normals(&[0.5, 0.5], 1e-12).unwrap().is_empty());
        assert!(StateSpace::unit_cube(2).boundary_normals(&[1.5, 0.5], 1e-12).is_err());
        assert_eq!(
            StateSpace::unit_cube(2).boundary_normals(&[0.0, 1.0], 1e-12).unwrap().len(),
            2
        );
    }

    #[test]
    fn simplex_projection() {
        let s = StateSpace::Simplex { dim: 2 };
        let p = s.project(&[1.0, 1.0]);
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
        let p = s.project(&[2.0, -1.0]);
        assert_eq!(p, vec![1.0, 0.0]);
        assert_eq!(s.project(&[0.2, 0.3]), vec![0.2, 0.3]);
    }

    #[test]
    fn push_inside_reaches_margin() {
        let s = StateSpace::Simplex { dim: 3 };
        let z = s.push_inside(&[0.0, 0.5, 0.5], 1e-6);
        assert!(s.interior_distance(&z) >= 1e-6);
        assert!(s.interior_distance(&z) < 2e-6);
    }

    #[test]
    fn max_step_hits_boundary() {
        let b = StateSpace::Ball { dim: 2 };
        let a = b.max_step(&[0.0, 0.0], &[2.0, 0.0], 10.0);
        assert!((a - 0.5).abs() < 1e-15);
        let s = StateSpace::Simplex { dim: 2 };
        assert!((s.max_step(&[0.25, 0.25], &[1.0, 1.0], 10.0) - 0.25).abs() < 1e-15);
    }
}
