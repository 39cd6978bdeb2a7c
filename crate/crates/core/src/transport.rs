//! The distance `W_M`, its geodesics, and the scalar quantile oracle for `W₂`.

use crate::action::ActionConfig;
use crate::error::{Error, Result};
use crate::grid::GridDensity;
use crate::ipm::{cumulative, Problem, SolverMethod, SolverParams};
use crate::mobility::MobilityModel;
use crate::path::{path_energy, TransportPath};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistanceConfig {
    /// Number of time steps `K` on `[0, 1]`.
    pub steps: usize,
    pub solver: SolverParams,
    pub action: ActionConfig,
    /// State the endpoints should equal near the domain edges; defaults to the lower corner.
    pub reference: Option<Vec<f64>>,
}

impl Default for DistanceConfig {
    fn default() -> Self {
        DistanceConfig { steps: 16, solver: SolverParams::default(), action: ActionConfig::default(), reference: None }
    }
}

impl DistanceConfig {
    pub fn with_steps(steps: usize) -> Self {
        DistanceConfig { steps, ..Default::default() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GeodesicResult {
    pub distance: f64,
    pub path: TransportPath,
    pub per_slice_action: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Upper bound on `energy − optimal energy` of the discrete problem.
    pub primal_dual_gap: f64,
    /// Bound on the distance error implied by the gap: `√gap`.
    pub solver_tol: f64,
    pub warnings: Vec<String>,
}

impl GeodesicResult {
    /// `stdev/mean` of the per-slice action.
    pub fn speed_variation(&self) -> f64 {
        let a = &self.per_slice_action;
        let mean = a.iter().sum::<f64>() / a.len() as f64;
        if mean == 0.0 {
            return 0.0;
        }
        let var = a.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / a.len() as f64;
        var.sqrt() / mean
    }
}

pub(crate) fn check_masses(mu0: &GridDensity, mu1: &GridDensity) -> Result<()> {
    for (a, b) in mu0.mass().iter().zip(mu1.mass()) {
        if (a - b).abs() > 1e-10 * (1.0 + a.abs()) {
            return Err(Error::Model(format!(
                "component masses {a} and {b} differ; no-flux transport cannot connect them (distance is +∞)"
            )));
        }
    }
    Ok(())
}

/// A strictly interior constant density with the same masses as `mu`.
pub(crate) fn interior_filler(model: &MobilityModel, mu: &GridDensity) -> Result<Vec<f64>> {
    let len = mu.x_max - mu.x_min;
    let v: Vec<f64> = mu.mass().iter().map(|m| m / len).collect();
    if model.space.interior_distance(&v) <= 0.0 {
        return Err(Error::Model(format!(
            "the mean state {v:?} is not interior to S; no strictly admissible curve exists"
        )));
    }
    Ok(v)
}

/// Mixes `slice` towards the constant filler until every cell is strictly interior.
pub(crate) fn make_interior(model: &MobilityModel, slice: &[f64], filler: &[f64], n: usize) -> Vec<f64> {
    let cells = slice.len() / n;
    let margin = |s: &[f64]| (0..cells).map(|i| model.space.interior_distance(&s[i * n..(i + 1) * n])).fold(f64::INFINITY, f64::min);
    let mut theta: f64 = 0.0;
    let mut out = slice.to_vec();
    let target = 1e-6 * model.space.interior_distance(filler);
    while margin(&out) <= target {
        theta = if theta == 0.0 { 1e-3 } else { (theta * 4.0).min(1.0) };
        out = slice.iter().enumerate().map(|(j, v)| (1.0 - theta) * v + theta * filler[j % n]).collect();
        if theta >= 1.0 {
            break;
        }
    }
    out
}

fn edge_warnings(model: &MobilityModel, mu: &GridDensity, reference: &Option<Vec<f64>>, name: &str) -> Vec<String> {
    let zref = reference.clone().unwrap_or_else(|| model.space.bounding_box().0);
    let mut w = vec![];
    for i in [0, mu.cells - 1] {
        let dev = mu.row(i).iter().zip(&zref).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if dev > 1e-6 {
            w.push(format!("{name}: edge cell {i} deviates from the reference state by {dev:.3e}; the truncated domain may be too small"));
        }
    }
    w
}

/// Minimal-energy curve between `mu0` and `mu1` on `K` uniform steps of `[0,1]`.
pub fn solve_distance(model: &MobilityModel, mu0: &GridDensity, mu1: &GridDensity, cfg: &DistanceConfig) -> Result<GeodesicResult> {
    mu0.check_same_grid(mu1)?;
    mu0.check_in(&model.space)?;
    mu1.check_in(&model.space)?;
    cfg.solver.validate()?;
    cfg.action.validate()?;
    if cfg.steps == 0 {
        return Err(Error::Input("at least one time step is required".into()));
    }
    if mu0.cells < 2 {
        return Err(Error::Input("at least two cells are required".into()));
    }
    check_masses(mu0, mu1)?;
    let mut warnings = edge_warnings(model, mu0, &cfg.reference, "start");
    warnings.extend(edge_warnings(model, mu1, &cfg.reference, "end"));
    let k = cfg.steps;
    let times = TransportPath::uniform_times(k, 1.0);
    if mu0.values == mu1.values {
        let path = TransportPath::from_densities(vec![mu0.clone(); k + 1], times)?;
        return Ok(GeodesicResult {
            distance: 0.0,
            path,
            per_slice_action: vec![0.0; k],
            iterations: 0,
            converged: true,
            primal_dual_gap: 0.0,
            solver_tol: 0.0,
            warnings,
        });
    }
    if k == 1 {
        let path = TransportPath::linear(mu0, mu1, 1)?;
        let e = path_energy(model, &path, &cfg.action)?;
        return Ok(GeodesicResult {
            distance: e.sqrt(),
            per_slice_action: path.slice_actions(model, &cfg.action)?,
            path,
            iterations: 0,
            converged: true,
            primal_dual_gap: 0.0,
            solver_tol: 0.0,
            warnings,
        });
    }
    let (n, cells, dx) = (mu0.n, mu0.cells, mu0.dx());
    let mass = mu0.mass();
    let filler = interior_filler(model, mu0)?;
    let problem = Problem {
        model,
        n,
        cells,
        dx,
        dt: vec![1.0 / k as f64; k],
        start: cumulative(&mu0.values, n, cells, dx),
        end: Some(cumulative(&mu1.values, n, cells, dx)),
        mass,
        path_weight: 1.0,
        terminal: None,
    };
    let slices: Vec<Vec<f64>> = (1..k)
        .map(|j| make_interior(model, &mu0.blend(mu1, j as f64 / k as f64).values, &filler, n))
        .collect();
    let x0 = problem.pack(&slices);
    let out = match cfg.solver.method {
        SolverMethod::Newton => problem.solve(x0, &cfg.solver),
        SolverMethod::Pdhg => crate::pdhg::solve(&problem, x0, &cfg.solver),
    };
    let mut dens = vec![mu0.clone()];
    for j in 1..k {
        dens.push(mu0.with_values(problem.slice(&out.x, j)));
    }
    dens.push(mu1.clone());
    let path = TransportPath::from_densities(dens, times)?;
    let per_slice_action = path.slice_actions(model, &cfg.action)?;
    let energy: f64 = per_slice_action.iter().map(|a| a / k as f64).sum();
    Ok(GeodesicResult {
        distance: energy.sqrt(),
        path,
        per_slice_action,
        iterations: out.iterations,
        converged: out.converged,
        primal_dual_gap: out.gap,
        solver_tol: out.gap.sqrt(),
        warnings,
    })
}

/// Inverse CDF of a nonnegative piecewise-constant density as breakpoints `(u, x)`,
/// `u ∈ [0, 1]` the normalized cumulative mass.
fn inverse_cdf(nu: &GridDensity) -> Vec<(f64, f64)> {
    let dx = nu.dx();
    let mass: f64 = nu.values.iter().sum::<f64>() * dx;
    let mut pts = vec![(0.0, nu.x_min)];
    let mut acc = 0.0;
    for i in 0..nu.cells {
        let v = nu.values[i];
        if v > 0.0 {
            let left = nu.x_min + i as f64 * dx;
            if pts.last().unwrap().1 != left {
                // jump across a gap with no mass
                pts.push(((acc / mass).min(1.0), left));
            }
            acc += v * dx;
            pts.push(((acc / mass).min(1.0), nu.x_min + (i + 1) as f64 * dx));
        }
    }
    if let Some(last) = pts.last_mut() {
        last.0 = 1.0;
    }
    pts
}

fn interp(pts: &[(f64, f64)], u: f64, hint: &mut usize) -> f64 {
    while *hint + 1 < pts.len() - 1 && pts[*hint + 1].0 < u {
        *hint += 1;
    }
    let (u0, x0) = pts[*hint];
    let (u1, x1) = pts[*hint + 1];
    if u1 <= u0 {
        return x1;
    }
    x0 + (x1 - x0) * (u - u0) / (u1 - u0)
}

/// `W₂(ν₀, ν₁)` in the unnormalized convention `mass · ∫₀¹ |G₀(u) − G₁(u)|² du`, with
/// `G` the piecewise-linear inverse CDFs. Integrated exactly over merged breakpoints.
pub fn quantile_w2(nu0: &GridDensity, nu1: &GridDensity) -> Result<f64> {
    if nu0.n != 1 || nu1.n != 1 {
        return Err(Error::Input("quantile_w2 needs scalar densities".into()));
    }
    for nu in [nu0, nu1] {
        if nu.values.iter().any(|v| *v < 0.0) {
            return Err(Error::Input("densities must be nonnegative".into()));
        }
    }
    let (m0, m1) = (nu0.mass()[0], nu1.mass()[0]);
    if !(m0 > 0.0) || !(m1 > 0.0) {
        return Err(Error::Input("densities must have positive mass".into()));
    }
    if (m0 - m1).abs() > 1e-10 * m0 {
        return Err(Error::Input(format!("masses differ: {m0} vs {m1}")));
    }
    let a = inverse_cdf(nu0);
    let b = inverse_cdf(nu1);
    let mut us: Vec<f64> = a.iter().chain(&b).map(|p| p.0).collect();
    us.sort_by(|x, y| x.partial_cmp(y).unwrap());
    us.dedup();
    let (mut ha, mut hb) = (0, 0);
    let mut total = 0.0;
    for w in us.windows(2) {
        let (u0, u1) = (w[0], w[1]);
        if u1 <= u0 {
            continue;
        }
        let um = 0.5 * (u0 + u1);
        // the difference is affine on the piece: Simpson is exact for its square
        let dm = interp(&a, um, &mut ha) - interp(&b, um, &mut hb);
        let d1 = interp(&a, u1, &mut ha) - interp(&b, u1, &mut hb);
        let lin0 = 2.0 * dm - d1;
        total += (u1 - u0) * (lin0 * lin0 + 4.0 * dm * dm + d1 * d1) / 6.0;
    }
    Ok((m0 * total).sqrt())
}
