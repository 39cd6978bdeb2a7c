//! Finite-difference and kernel oracles, independent of the transport solvers.

use crate::conditions::{interior_points, PointScheme, SamplePlan};
use crate::error::{numerical, Error, Result};
use crate::field::ScalarField;
use crate::grid::GridDensity;
use crate::jko::EnergySpec;
use crate::linalg::mat_mul;
use crate::mobility::MobilityModel;
use crate::transport::{solve_distance, DistanceConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FluxLimiter {
    None,
    ClampMidpointsToS,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FdConfig {
    /// Fixed time step; `None` picks `cfl_safety·Δx²/Λ`.
    pub dt: Option<f64>,
    pub cfl_safety: f64,
    pub flux_limiter: FluxLimiter,
    pub record_stride: usize,
}

impl Default for FdConfig {
    fn default() -> Self {
        FdConfig { dt: None, cfl_safety: 0.25, flux_limiter: FluxLimiter::ClampMidpointsToS, record_stride: 1 }
    }
}

impl FdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.record_stride == 0 || !(self.cfl_safety > 0.0) || self.dt.is_some_and(|d| !(d > 0.0)) {
            return Err(Error::Input("FD config needs positive dt, cfl_safety and record_stride".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FdTrajectory {
    pub times: Vec<f64>,
    pub snapshots: Vec<GridDensity>,
    pub dt: f64,
    pub steps: usize,
    /// Largest projection onto `S` applied after each step.
    pub projection: Vec<f64>,
    /// Largest midpoint clamping per step.
    pub clamping: Vec<f64>,
}

impl FdTrajectory {
    pub fn max_projection(&self) -> f64 {
        self.projection.iter().cloned().fold(0.0, f64::max)
    }

    /// Linear interpolation in time between snapshots.
    pub fn at(&self, t: f64) -> GridDensity {
        let k = self.times.partition_point(|&s| s < t);
        if k == 0 {
            return self.snapshots[0].clone();
        }
        if k >= self.times.len() {
            return self.snapshots.last().unwrap().clone();
        }
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        self.snapshots[k - 1].blend(&self.snapshots[k], (t - t0) / (t1 - t0))
    }
}

/// Face flux `F_{i+½}` from the midpoint state and the differences of `μ` and a potential.
trait FaceFlux: Sync {
    fn flux(&self, z: &[f64], dmu: &[f64], dpot: &[f64]) -> Vec<f64>;
    /// Bound on the diffusion operator at `z` and on the drift coefficient.
    fn lambda(&self, z: &[f64]) -> (f64, f64);
}

fn inf_norm(n: usize, a: &[f64]) -> f64 {
    (0..n).map(|i| a[i * n..(i + 1) * n].iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

struct DriftDiffusion<'a> {
    model: &'a MobilityModel,
    f: &'a ScalarField,
}

impl FaceFlux for DriftDiffusion<'_> {
    fn flux(&self, z: &[f64], dmu: &[f64], dpot: &[f64]) -> Vec<f64> {
        let n = z.len();
        let m = self.model.m_vec(z);
        let (_, _, h) = self.f.grad_hess(z, 0.0);
        let mh = mat_mul(n, &m, &h);
        (0..n).map(|i| (0..n).map(|j| mh[i * n + j] * dmu[j] + m[i * n + j] * dpot[j]).sum()).collect()
    }
    fn lambda(&self, z: &[f64]) -> (f64, f64) {
        let n = z.len();
        let m = self.model.m_vec(z);
        let (_, _, h) = self.f.grad_hess(z, 0.0);
        (inf_norm(n, &mat_mul(n, &m, &h)), inf_norm(n, &m))
    }
}

struct Regularized<'a> {
    model: &'a MobilityModel,
    alpha: f64,
}

impl FaceFlux for Regularized<'_> {
    fn flux(&self, z: &[f64], dmu: &[f64], dpot: &[f64]) -> Vec<f64> {
        let n = z.len();
        let m = self.model.m_vec(z);
        (0..n).map(|i| self.alpha * dmu[i] + (0..n).map(|j| m[i * n + j] * dpot[j]).sum::<f64>()).collect()
    }
    fn lambda(&self, z: &[f64]) -> (f64, f64) {
        (self.alpha, inf_norm(z.len(), &self.model.m_vec(z)))
    }
}

fn potential_cells(fields: &[ScalarField], mu: &GridDensity) -> Result<Vec<f64>> {
    let n = mu.n;
    if !(fields.is_empty() || fields.len() == 1 || fields.len() == n) {
        return Err(Error::Input(format!("potential needs 0, 1 or {n} fields")));
    }
    let mut out = vec![0.0; mu.cells * n];
    for i in 0..mu.cells {
        for c in 0..n {
            out[i * n + c] = match fields.len() {
                0 => 0.0,
                1 => fields[0].at_x(mu.x(i)),
                _ => fields[c].at_x(mu.x(i)),
            };
        }
    }
    Ok(out)
}

fn evolve(model: &MobilityModel, flux: &dyn FaceFlux, pot: &[f64], mu0: &GridDensity, t_end: f64, cfg: &FdConfig) -> Result<FdTrajectory> {
    cfg.validate()?;
    mu0.check_in(&model.space)?;
    if mu0.n != model.dim() {
        return Err(Error::Input("density does not match the model".into()));
    }
    if !(t_end >= 0.0) {
        return Err(Error::Input("final time must be nonnegative".into()));
    }
    let (n, cells, dx) = (mu0.n, mu0.cells, mu0.dx());
    let space = &model.space;
    let margin = model.interior_margin;
    let dpot_max = (0..cells.saturating_sub(1))
        .flat_map(|i| (0..n).map(move |c| (i, c)))
        .map(|(i, c)| (pot[(i + 1) * n + c] - pot[i * n + c]).abs() / dx)
        .fold(0.0, f64::max);
    let total = |(d, m): (f64, f64)| d + dx * m * dpot_max;
    let midpoint = |mu: &[f64], i: usize| -> (Vec<f64>, f64) {
        let z: Vec<f64> = (0..n).map(|c| 0.5 * (mu[i * n + c] + mu[(i + 1) * n + c])).collect();
        match cfg.flux_limiter {
            FluxLimiter::None => (z, 0.0),
            FluxLimiter::ClampMidpointsToS => {
                let p = space.project(&z);
                let p = if space.interior_distance(&p) < margin { space.push_inside(&p, margin) } else { p };
                let d = p.iter().zip(&z).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                (p, d)
            }
        }
    };
    // Λ over sampled states and the initial midpoints
    let plan = SamplePlan { points: PointScheme::LowDiscrepancy { count: 256, seed: 11 }, directions: 1, margin: 1e-3 };
    let mut lam = interior_points(space, &plan).iter().map(|z| total(flux.lambda(z))).fold(0.0, f64::max);
    for i in 0..cells.saturating_sub(1) {
        lam = lam.max(total(flux.lambda(&midpoint(&mu0.values, i).0)));
    }
    let dt_cfl = cfg.cfl_safety * dx * dx / lam.max(1e-300);
    let dt = cfg.dt.unwrap_or(dt_cfl);
    let steps = if t_end == 0.0 { 0 } else { (t_end / dt - 1e-9).ceil() as usize };
    let mut traj = FdTrajectory { times: vec![0.0], snapshots: vec![mu0.clone()], dt, steps, projection: vec![], clamping: vec![] };
    let mut mu = mu0.values.clone();
    let mut t = 0.0;
    for k in 1..=steps {
        let h = if k == steps { t_end - t } else { dt };
        let faces: Vec<(Vec<f64>, f64, f64)> = (0..cells - 1)
            .into_par_iter()
            .map(|i| {
                let (z, clamp) = midpoint(&mu, i);
                let dmu: Vec<f64> = (0..n).map(|c| (mu[(i + 1) * n + c] - mu[i * n + c]) / dx).collect();
                let dp: Vec<f64> = (0..n).map(|c| (pot[(i + 1) * n + c] - pot[i * n + c]) / dx).collect();
                (flux.flux(&z, &dmu, &dp), clamp, total(flux.lambda(&z)))
            })
            .collect();
        let lam_k = faces.iter().map(|f| f.2).fold(0.0, f64::max);
        // explicit diffusion is stable up to Δt·Λ ≤ Δx²/2
        if h * lam_k > 0.5 * dx * dx * (1.0 + 1e-9) {
            return Err(numerical("fd cfl", format!("step {k}: Δt = {h:e} exceeds the stability bound for Λ = {lam_k:e}")));
        }
        for (i, (fl, _, _)) in faces.iter().enumerate() {
            for c in 0..n {
                mu[i * n + c] += h * fl[c] / dx;
                mu[(i + 1) * n + c] -= h * fl[c] / dx;
            }
        }
        if mu.iter().any(|v| !v.is_finite()) {
            return Err(numerical("fd step", format!("non-finite values at step {k}")));
        }
        let mut proj: f64 = 0.0;
        for i in 0..cells {
            let row = &mut mu[i * n..(i + 1) * n];
            if !space.contains_unchecked(row) {
                let p = space.project(row);
                proj = proj.max(p.iter().zip(row.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
                row.copy_from_slice(&p);
            }
        }
        traj.projection.push(proj);
        traj.clamping.push(faces.iter().map(|f| f.1).fold(0.0, f64::max));
        t += h;
        if k % cfg.record_stride == 0 || k == steps {
            traj.times.push(if k == steps { t_end } else { t });
            traj.snapshots.push(mu0.with_values(mu.clone()));
        }
    }
    Ok(traj)
}

/// `∂ₜμ = ∂ₓ(M(μ)∇²f(μ)∂ₓμ + M(μ)∂ₓη)` with no-flux boundaries.
pub fn fd_solve(model: &MobilityModel, spec: &EnergySpec, mu0: &GridDensity, t_end: f64, cfg: &FdConfig) -> Result<FdTrajectory> {
    if spec.f.z_arity() > model.dim() || spec.f.uses_x() {
        return Err(Error::Input("f may only use the state variables".into()));
    }
    let pot = potential_cells(&spec.eta, mu0)?;
    evolve(model, &DriftDiffusion { model, f: &spec.f }, &pot, mu0, t_end, cfg)
}

/// `∂ₜμ = α∂ₓₓμ + ∂ₓ(M(μ)∂ₓρ)` with no-flux boundaries.
pub fn transport_solve(model: &MobilityModel, alpha: f64, rho: &[ScalarField], mu0: &GridDensity, t_end: f64, cfg: &FdConfig) -> Result<FdTrajectory> {
    if !(alpha > 0.0) {
        return Err(Error::Input("α must be positive".into()));
    }
    let pot = potential_cells(rho, mu0)?;
    evolve(model, &Regularized { model, alpha }, &pot, mu0, t_end, cfg)
}

/// Componentwise convolution with the heat kernel `G_t(x) = (4πt)^{−½} e^{−x²/4t}` sampled
/// on the grid, weights normalized to unit mass, even reflection at the ends (no-flux, so mass
/// is conserved exactly).
pub fn heat_solve(mu0: &GridDensity, t: f64) -> Result<GridDensity> {
    if !(t >= 0.0) {
        return Err(Error::Input("time must be nonnegative".into()));
    }
    if t == 0.0 {
        return Ok(mu0.clone());
    }
    let dx = mu0.dx();
    let (n, cells) = (mu0.n, mu0.cells as isize);
    let half = (12.0 * (2.0 * t).sqrt() / dx).ceil() as isize + 1;
    let mut w: Vec<f64> = (-half..=half).map(|d| (-(d as f64 * dx).powi(2) / (4.0 * t)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    let mut out = vec![0.0; mu0.values.len()];
    for i in 0..cells {
        for (k, wk) in w.iter().enumerate() {
            let j = reflect(i - (k as isize - half), cells);
            for c in 0..n {
                out[i as usize * n + c] += wk * mu0.values[j * n + c];
            }
        }
    }
    Ok(mu0.with_values(out))
}

fn reflect(mut j: isize, cells: isize) -> usize {
    loop {
        if j < 0 {
            j = -1 - j;
        } else if j >= cells {
            j = 2 * cells - 1 - j;
        } else {
            return j as usize;
        }
    }
}

/// `(W_M(μ, ν), W_M(S^t μ, S^t ν))` with `S^t` the heat flow.
pub fn wm_contraction_probe(model: &MobilityModel, mu0: &GridDensity, nu0: &GridDensity, t: f64, cfg: &DistanceConfig) -> Result<(f64, f64)> {
    if model.h(&model.space.center()).is_err() {
        return Err(Error::Input("the probe needs a model induced by a potential h".into()));
    }
    let before = solve_distance(model, mu0, nu0, cfg)?.distance;
    let after = solve_distance(model, &heat_solve(mu0, t)?, &heat_solve(nu0, t)?, cfg)?.distance;
    Ok((before, after))
}
