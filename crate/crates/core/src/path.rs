//! Staggered space-time curves `(μ, w)` solving the discrete continuity equation.

use crate::action::{face_sum, ActionConfig};
use crate::error::{Error, Result};
use crate::grid::GridDensity;
use crate::mobility::MobilityModel;
use serde::{Deserialize, Serialize};

/// Slices `μ^0..μ^K` at `times[k]`; fluxes `w^{k+½}` on all `N+1` faces of each interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransportPath {
    pub times: Vec<f64>,
    pub densities: Vec<GridDensity>,
    pub fluxes: Vec<Vec<f64>>,
    pub dual_potential: Option<Vec<Vec<f64>>>,
}

const MASS_TOL: f64 = 1e-10;

fn check_times(times: &[f64]) -> Result<()> {
    if times.len() < 2 {
        return Err(Error::Input("a path needs at least two time levels".into()));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Input("time levels must increase strictly".into()));
    }
    Ok(())
}

impl TransportPath {
    /// Uniform levels on `[0, T]`.
    pub fn uniform_times(k: usize, t_end: f64) -> Vec<f64> {
        (0..=k).map(|j| t_end * j as f64 / k as f64).collect()
    }

    /// The unique no-flux flux field compatible with the given slices, by cumulative sums.
    pub fn from_densities(densities: Vec<GridDensity>, times: Vec<f64>) -> Result<Self> {
        check_times(&times)?;
        if densities.len() != times.len() {
            return Err(Error::Input("one density per time level required".into()));
        }
        let first = &densities[0];
        let m0 = first.mass();
        for d in &densities[1..] {
            first.check_same_grid(d)?;
            for (a, b) in d.mass().iter().zip(&m0) {
                if (a - b).abs() > MASS_TOL * (1.0 + b.abs()) {
                    return Err(Error::Model(format!(
                        "mass {a} differs from {b}; no-flux curves cannot connect these slices"
                    )));
                }
            }
        }
        let (n, cells, dx) = (first.n, first.cells, first.dx());
        let mut fluxes = Vec::with_capacity(densities.len() - 1);
        for k in 0..densities.len() - 1 {
            let dt = times[k + 1] - times[k];
            let mut w = vec![0.0; (cells + 1) * n];
            for c in 0..n {
                let mut acc = 0.0;
                for i in 0..cells - 1 {
                    acc += densities[k + 1].values[i * n + c] - densities[k].values[i * n + c];
                    w[(i + 1) * n + c] = -acc * dx / dt;
                }
            }
            fluxes.push(w);
        }
        Ok(TransportPath { times, densities, fluxes, dual_potential: None })
    }

    /// `μ_t = (1−t)μ₀ + tμ₁` on `K` uniform steps of `[0, 1]`.
    pub fn linear(mu0: &GridDensity, mu1: &GridDensity, k: usize) -> Result<Self> {
        mu0.check_same_grid(mu1)?;
        let times = Self::uniform_times(k, 1.0);
        let dens = times.iter().map(|t| mu0.blend(mu1, *t)).collect();
        Self::from_densities(dens, times)
    }

    pub fn steps(&self) -> usize {
        self.fluxes.len()
    }

    pub fn duration(&self) -> f64 {
        self.times[self.times.len() - 1] - self.times[0]
    }

    pub fn first(&self) -> &GridDensity {
        &self.densities[0]
    }

    pub fn last(&self) -> &GridDensity {
        &self.densities[self.densities.len() - 1]
    }

    /// `Φ` on each interval, with face states averaged over both bounding slices.
    pub fn slice_actions(&self, model: &MobilityModel, cfg: &ActionConfig) -> Result<Vec<f64>> {
        (0..self.steps())
            .map(|k| face_sum(model, &self.densities[k], &self.densities[k + 1], &self.fluxes[k], cfg))
            .collect()
    }

    /// Max-norm residual of `(μ^{k+1}−μ^k)/Δt + (w_{i+½}−w_{i−½})/Δx`, including the
    /// two boundary faces, which must carry zero flux.
    pub fn continuity_residual(&self) -> f64 {
        let first = self.first();
        let (n, cells, dx) = (first.n, first.cells, first.dx());
        let mut r: f64 = 0.0;
        for k in 0..self.steps() {
            let dt = self.times[k + 1] - self.times[k];
            let w = &self.fluxes[k];
            for c in 0..n {
                r = r.max(w[c].abs()).max(w[cells * n + c].abs());
                for i in 0..cells {
                    let dm = (self.densities[k + 1].values[i * n + c] - self.densities[k].values[i * n + c]) / dt;
                    let dw = (w[(i + 1) * n + c] - w[i * n + c]) / dx;
                    r = r.max((dm + dw).abs());
                }
            }
        }
        r
    }

    /// Time reversal: `μ̃_t = μ_{T−t}`, `w̃ = −w`.
    pub fn reverse(&self) -> TransportPath {
        let t_end = self.times[self.times.len() - 1];
        let t0 = self.times[0];
        let times = self.times.iter().rev().map(|t| t0 + t_end - t).collect();
        let densities = self.densities.iter().rev().cloned().collect();
        let fluxes = self.fluxes.iter().rev().map(|w| w.iter().map(|v| -v).collect()).collect();
        TransportPath { times, densities, fluxes, dual_potential: None }
    }

    /// Glues `b` after `self`; the terminal slice of `self` must equal the initial slice of `b`.
    pub fn concatenate(&self, b: &TransportPath) -> Result<TransportPath> {
        let (ea, sb) = (self.last(), b.first());
        ea.check_same_grid(sb)?;
        let dev = ea.values.iter().zip(&sb.values).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        if dev > 1e-12 {
            return Err(Error::Input(format!("endpoints differ by {dev:e}")));
        }
        let shift = self.times[self.times.len() - 1] - b.times[0];
        let mut times = self.times.clone();
        times.extend(b.times[1..].iter().map(|t| t + shift));
        let mut densities = self.densities.clone();
        densities.extend(b.densities[1..].iter().cloned());
        let mut fluxes = self.fluxes.clone();
        fluxes.extend(b.fluxes.iter().cloned());
        Ok(TransportPath { times, densities, fluxes, dual_potential: None })
    }

    /// Reparametrizes onto new levels `s_k` (same slices, `μ∘σ`), scaling fluxes by
    /// `σ' = Δt_k/Δs_k` on each interval so continuity is preserved.
    pub fn rescale(&self, new_times: &[f64]) -> Result<TransportPath> {
        check_times(new_times)?;
        if new_times.len() != self.times.len() {
            return Err(Error::Input("rescale needs one new level per existing level".into()));
        }
        let fluxes = self
            .fluxes
            .iter()
            .enumerate()
            .map(|(k, w)| {
                let s = (self.times[k + 1] - self.times[k]) / (new_times[k + 1] - new_times[k]);
                w.iter().map(|v| v * s).collect()
            })
            .collect();
        Ok(TransportPath {
            times: new_times.to_vec(),
            densities: self.densities.clone(),
            fluxes,
            dual_potential: None,
        })
    }

    /// Linear stretch onto `[t_0, t_0 + T]`.
    pub fn rescale_to(&self, t_end: f64) -> Result<TransportPath> {
        let t0 = self.times[0];
        let d = self.duration();
        let new: Vec<f64> = self.times.iter().map(|t| t0 + (t - t0) * t_end / d).collect();
        self.rescale(&new)
    }
}

/// `E_T = Σ_k Δt_k Φ(μ̄^{k+½}, w^{k+½})` (extended real).
pub fn path_energy(model: &MobilityModel, path: &TransportPath, cfg: &ActionConfig) -> Result<f64> {
    let acts = path.slice_actions(model, cfg)?;
    Ok(acts.iter().enumerate().map(|(k, a)| (path.times[k + 1] - path.times[k]) * a).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mobility::MobilityModel;

    fn bumps() -> (GridDensity, GridDensity) {
        let f = |c: f64| move |x: f64| vec![0.2 + 0.5 * (-(x - c) * (x - c) / 0.05).exp(), 0.4 + 0.3 * (-(x + c) * (x + c) / 0.08).exp()];
        (
            GridDensity::from_fn(-2.0, 2.0, 40, 2, f(0.3)).unwrap(),
            GridDensity::from_fn(-2.0, 2.0, 40, 2, f(-0.3)).unwrap(),
        )
    }

    #[test]
    fn linear_path_is_continuous() {
        let (a, b) = bumps();
        let p = TransportPath::linear(&a, &b, 8).unwrap();
        assert!(p.continuity_residual() <= 1e-12);
        let mut bad = p.clone();
        bad.fluxes.iter_mut().for_each(|w| w.iter_mut().for_each(|v| *v = 0.0));
        let r = bad.continuity_residual();
        let want = a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!((r - want).abs() < 1e-9);
    }

    #[test]
    fn rescale_and_concatenate() {
        let (a, b) = bumps();
        let m = MobilityModel::quadratic_decoupled(2);
        let cfg = ActionConfig::default();
        let p = TransportPath::linear(&a, &b, 6).unwrap();
        let e1 = path_energy(&m, &p, &cfg).unwrap();
        let q = p.rescale_to(2.0).unwrap();
        let e2 = path_energy(&m, &q, &cfg).unwrap();
        assert!((e2 - e1 / 2.0).abs() < 1e-10 * e1);
        assert!((2.0 * e2 - 1.0 * e1).abs() < 1e-10);
        let loop_ = p.concatenate(&p.reverse()).unwrap();
        assert_eq!(loop_.first(), loop_.last());
        assert!(loop_.continuity_residual() <= 1e-12);
        let el = path_energy(&m, &loop_, &cfg).unwrap();
        assert!((el - 2.0 * e1).abs() < 1e-10 * e1);
        assert!(p.concatenate(&p).is_err());
    }

    #[test]
    fn mass_mismatch_is_a_model_error() {
        let (a, _) = bumps();
        let b = a.with_values(a.values.iter().map(|v| v * 1.01).collect());
        assert!(matches!(TransportPath::linear(&a, &b, 4), Err(Error::Model(_))));
    }
}
