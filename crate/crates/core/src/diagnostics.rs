//! Named inequality checks over recorded runs. Each verdict is `lhs ≤ rhs + slack`.

use crate::conditions::{interior_points, PointScheme, SamplePlan};
use crate::error::{Error, Result};
use crate::field::{BuiltinField, ScalarField};
use crate::grid::{second_moment, GridDensity};
use crate::jko::{energy_e, entropy_h, EnergySpec, JkoTrajectory};
use crate::linalg::sym_eig_range;
use crate::mobility::MobilityModel;
use crate::pde::{heat_solve, FdTrajectory};
use crate::transport::{solve_distance, DistanceConfig, GeodesicResult};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const CHECKS: [&str; 12] = [
    "energy_monotone",
    "telescoping_distance",
    "holder_bound",
    "addreg_dissipation",
    "introapriori_dissipation",
    "moment_bound",
    "smooth_approx_bound",
    "entropy_sandwich",
    "weak_form_residual",
    "contraction_probe",
    "constant_speed",
    "decoupled_sum_identity",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticVerdict {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub pass: bool,
    pub status: Status,
    pub refs: String,
    pub note: String,
}

impl DiagnosticVerdict {
    fn new(name: &str, lhs: f64, rhs: f64, slack: f64, refs: &str, note: impl Into<String>) -> Self {
        let pass = lhs <= rhs + slack;
        DiagnosticVerdict {
            name: name.into(),
            lhs,
            rhs,
            slack,
            pass,
            status: if pass { Status::Pass } else { Status::Fail },
            refs: refs.into(),
            note: note.into(),
        }
    }

    fn missing(name: &str, what: &str) -> Self {
        DiagnosticVerdict {
            name: name.into(),
            lhs: f64::NAN,
            rhs: f64::NAN,
            slack: f64::NAN,
            pass: false,
            status: Status::Inconclusive,
            refs: String::new(),
            note: format!("missing input: {what}"),
        }
    }
}

/// `W_M(μ, G_δ∗μ)` against `δ·∫[h(μ) − h(G_δ∗μ)]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothingSample {
    pub delta: f64,
    pub distance: f64,
    pub entropy_drop: f64,
    pub solver_tol: f64,
}

pub fn smoothing_sample(model: &MobilityModel, mu: &GridDensity, delta: f64, cfg: &DistanceConfig) -> Result<SmoothingSample> {
    let smooth = heat_solve(mu, delta)?;
    let g = solve_distance(model, mu, &smooth, cfg)?;
    let mut drop = 0.0;
    for i in 0..mu.cells {
        drop += model.h(mu.row(i))? - model.h(smooth.row(i))?;
    }
    Ok(SmoothingSample { delta, distance: g.distance, entropy_drop: drop * mu.dx(), solver_tol: g.solver_tol })
}

/// Full distance against the per-component scalar distances of a decoupled model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoupledSample {
    pub full: f64,
    pub components: Vec<f64>,
}

pub fn decoupled_sample(model: &MobilityModel, mu0: &GridDensity, mu1: &GridDensity, cfg: &DistanceConfig) -> Result<DecoupledSample> {
    if model.scalar_mobilities().is_none() {
        return Err(Error::Input("model is not fully decoupled".into()));
    }
    let full = solve_distance(model, mu0, mu1, cfg)?.distance;
    let mut components = vec![];
    for c in 0..model.dim() {
        let m = model.component(c).unwrap();
        components.push(solve_distance(&m, &mu0.component(c), &mu1.component(c), cfg)?.distance);
    }
    Ok(DecoupledSample { full, components })
}

/// Smooth test functions for weak-form residuals.
#[derive(Clone, Debug)]
pub struct TestFunctions {
    /// `ρ(x)`, shared by all components.
    pub rho: ScalarField,
    /// `ψ(t)`, written in the variable `x`.
    pub psi: ScalarField,
}

impl TestFunctions {
    /// Bumps covering the middle 80% of the spatial domain and of `(0, T)`.
    pub fn standard(x_min: f64, x_max: f64, t_end: f64) -> Self {
        let b = |a: f64, c: f64| {
            ScalarField::Builtin(BuiltinField::Bump { center: 0.5 * (a + c), radius: 0.4 * (c - a), amplitude: 1.0 })
        };
        TestFunctions { rho: b(x_min, x_max), psi: b(0.0, t_end) }
    }
}

/// `∫ ∂ₓρᵀ[M(μ)∇²f(μ)∂ₓμ + M(μ)∂ₓη] dx` with face differences and averaged face states.
fn flux_pairing(model: &MobilityModel, spec: &EnergySpec, mu: &GridDensity, rho: &ScalarField) -> f64 {
    let (n, dx) = (mu.n, mu.dx());
    let eta = spec.eta_cells(mu);
    let mut s = 0.0;
    for i in 0..mu.cells - 1 {
        let z: Vec<f64> = (0..n).map(|c| 0.5 * (mu.values[i * n + c] + mu.values[(i + 1) * n + c])).collect();
        let z = model.space.project(&z);
        let z = if model.space.interior_distance(&z) < model.interior_margin { model.space.push_inside(&z, model.interior_margin) } else { z };
        let m = model.m_vec(&z);
        let (_, _, hf) = spec.f.grad_hess(&z, 0.0);
        let drho = (rho.at_x(mu.x(i + 1)) - rho.at_x(mu.x(i))) / dx;
        for a in 0..n {
            let mut inner = 0.0;
            for b in 0..n {
                let mut mh = 0.0;
                for c in 0..n {
                    mh += m[a * n + c] * hf[c * n + b];
                }
                inner += mh * (mu.values[(i + 1) * n + b] - mu.values[i * n + b]) / dx
                    + m[a * n + b] * (eta[(i + 1) * n + b] - eta[i * n + b]) / dx;
            }
            s += drho * inner;
        }
    }
    s * dx
}

fn rho_pairing(mu: &GridDensity, rho: &ScalarField) -> f64 {
    (0..mu.cells).map(|i| rho.at_x(mu.x(i)) * mu.row(i).iter().sum::<f64>()).sum::<f64>() * mu.dx()
}

/// Left side of the discrete weak formulation for a minimizing-movement trajectory.
pub fn weak_residual_jko(model: &MobilityModel, spec: &EnergySpec, traj: &JkoTrajectory, tf: &TestFunctions) -> f64 {
    let tau = traj.tau;
    let mut s = 0.0;
    for k in 1..traj.iterates.len() {
        let mu = &traj.iterates[k];
        let (pa, pb) = (tf.psi.at_x((k - 1) as f64 * tau), tf.psi.at_x(k as f64 * tau));
        s += rho_pairing(mu, &tf.rho) * (pa - pb) + tau * pa * flux_pairing(model, spec, mu, &tf.rho);
    }
    s.abs()
}

/// Left side of the weak formulation for an FD trajectory (trapezoid rule in time).
pub fn weak_residual_fd(model: &MobilityModel, spec: &EnergySpec, traj: &FdTrajectory, tf: &TestFunctions) -> f64 {
    let vals: Vec<f64> = traj
        .snapshots
        .iter()
        .zip(&traj.times)
        .map(|(mu, &t)| -tf.psi.dx(t) * rho_pairing(mu, &tf.rho) + tf.psi.at_x(t) * flux_pairing(model, spec, mu, &tf.rho))
        .collect();
    let mut s = 0.0;
    for k in 1..vals.len() {
        s += 0.5 * (traj.times[k] - traj.times[k - 1]) * (vals[k] + vals[k - 1]);
    }
    s.abs()
}

/// Everything the checks may read. Checks whose inputs are absent report `Inconclusive`.
#[derive(Default)]
pub struct Bundle<'a> {
    pub model: Option<&'a MobilityModel>,
    pub spec: Option<&'a EnergySpec>,
    pub jko: Option<&'a JkoTrajectory>,
    pub fd: Option<&'a FdTrajectory>,
    pub geodesics: Vec<&'a GeodesicResult>,
    pub smoothing: Vec<SmoothingSample>,
    /// `(d_before, d_after, solver_tol)`.
    pub probe: Option<(f64, f64, f64)>,
    pub decoupled: Option<DecoupledSample>,
    /// Weak-form residuals at successive refinements.
    pub weak_residuals: Vec<f64>,
    pub seed: u64,
}

fn slack_jko(traj: &JkoTrajectory) -> f64 {
    3.0 * traj.max_solver_tol() * traj.records.len().max(1) as f64
}

/// `sup_S eᵀMe / eᵀ(z − Sℓ)`, sampled, and `max_j m_j'(Sℓ_j)` for decoupled models.
pub fn lipschitz_constant(model: &MobilityModel) -> f64 {
    let (lo, hi) = model.space.bounding_box();
    let plan = SamplePlan { points: PointScheme::LowDiscrepancy { count: 2000, seed: 5 }, directions: 1, margin: 1e-6 };
    let mut l: f64 = 0.0;
    for z in interior_points(&model.space, &plan) {
        let m = model.m_vec(&z);
        let num: f64 = m.iter().sum();
        let den: f64 = z.iter().zip(&lo).map(|(a, b)| a - b).sum();
        if den > 0.0 {
            l = l.max(num / den);
        }
    }
    if let Some(ms) = model.scalar_mobilities() {
        for (j, m) in ms.iter().enumerate() {
            l = l.max(m.derivs(lo[j], lo[j], hi[j]).1);
        }
    }
    l
}

fn upper_hessian_bound(model: &MobilityModel, f: &ScalarField) -> f64 {
    let n = model.dim();
    let plan = SamplePlan { points: PointScheme::LowDiscrepancy { count: 2000, seed: 9 }, directions: 1, margin: 1e-9 };
    let mut pts = interior_points(&model.space, &plan);
    pts.extend(crate::conditions::boundary_points(&model.space, 200));
    pts.iter().map(|z| sym_eig_range(n, &f.grad_hess(z, 0.0).2).1).filter(|v| v.is_finite()).fold(0.0, f64::max)
}

pub fn run_diagnostics(b: &Bundle, selection: &[&str]) -> Result<Vec<DiagnosticVerdict>> {
    for s in selection {
        if !CHECKS.contains(s) {
            return Err(Error::Input(format!("unknown check '{s}'")));
        }
    }
    Ok(selection.iter().map(|s| run_one(b, s)).collect())
}

fn run_one(b: &Bundle, name: &str) -> DiagnosticVerdict {
    match name {
        "energy_monotone" => match b.jko {
            Some(t) => {
                let worst = t.energies.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
                DiagnosticVerdict::new(name, worst.max(-f64::MAX), 0.0, t.max_solver_tol(), "E(μᵏ) ≤ E(μᵏ⁻¹)", "largest energy increase over a step")
            }
            None => DiagnosticVerdict::missing(name, "minimizing-movement trajectory"),
        },
        "telescoping_distance" => match b.jko {
            Some(t) => {
                let lhs: f64 = t.step_distances.iter().map(|d| d * d).sum();
                let rhs = 2.0 * t.tau * (t.energies[0] - t.inf_energy);
                DiagnosticVerdict::new(name, lhs, rhs, slack_jko(t), "Σ W²(μᵏ, μᵏ⁻¹) ≤ 2τ(E(μ⁰) − inf E)", format!("inf E estimate {:e}", t.inf_energy))
            }
            None => DiagnosticVerdict::missing(name, "minimizing-movement trajectory"),
        },
        "holder_bound" => match b.jko {
            Some(t) => {
                let t_end = *t.times.last().unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(b.seed);
                let mut worst = (f64::NEG_INFINITY, 0.0, 0.0);
                let e = t.energies[0] - t.inf_energy;
                for _ in 0..32 {
                    let (s, u) = (rng.gen::<f64>() * t_end, rng.gen::<f64>() * t_end);
                    let ks = (t.iterates.iter().position(|m| std::ptr::eq(m, t.at(s)))).unwrap();
                    let ku = (t.iterates.iter().position(|m| std::ptr::eq(m, t.at(u)))).unwrap();
                    let (a, c) = (ks.min(ku), ks.max(ku));
                    // the chained step distances bound W_M from above
                    let lhs: f64 = t.step_distances[a..c].iter().sum();
                    let rhs = (2.0 * e * t.tau.max((u - s).abs())).sqrt();
                    if lhs - rhs > worst.0 {
                        worst = (lhs - rhs, lhs, rhs);
                    }
                }
                DiagnosticVerdict::new(name, worst.1, worst.2, slack_jko(t), "W(μ_τ(s), μ_τ(t)) ≤ [2(E(μ⁰) − inf E)·max(τ, |t−s|)]^½", "worst of 32 sampled pairs; lhs is the chained step distance")
            }
            None => DiagnosticVerdict::missing(name, "minimizing-movement trajectory"),
        },
        "addreg_dissipation" => match (b.jko, b.model, b.spec) {
            (Some(t), Some(m), Some(spec)) => {
                let c = spec.eta_grad_norm_sq(&t.iterates[0]) / (spec.c_f * spec.c_f);
                let mut worst = (f64::NEG_INFINITY, 0.0, 0.0);
                for k in 1..t.iterates.len() {
                    let lhs = t.tau * t.iterates[k].grad_norm_sq();
                    let rhs = 2.0 / spec.c_f * (t.heat_entropies[k - 1] - t.heat_entropies[k]) + c * t.tau;
                    if lhs - rhs > worst.0 {
                        worst = (lhs - rhs, lhs, rhs);
                    }
                }
                let _ = m;
                DiagnosticVerdict::new(name, worst.1, worst.2, slack_jko(t), "τ‖∂ₓμᵏ‖² ≤ (2/C_f)[H(μᵏ⁻¹) − H(μᵏ)] + Cτ, C = ‖∂ₓη‖²/C_f²", format!("C = {c:e}; worst step shown"))
            }
            _ => DiagnosticVerdict::missing(name, "trajectory, model and energy"),
        },
        "introapriori_dissipation" => match (b.fd, b.model, b.spec) {
            (Some(t), Some(m), Some(spec)) => introapriori(m, spec, t),
            _ => DiagnosticVerdict::missing(name, "FD trajectory, model and energy"),
        },
        "moment_bound" => match (b.jko, b.model) {
            (Some(t), Some(m)) => {
                let (lo, _) = m.space.bounding_box();
                let l = lipschitz_constant(m);
                let mom: Vec<f64> = t.second_moments(&lo);
                let mut worst = (f64::NEG_INFINITY, 0.0, 0.0);
                let mut chain = 0.0;
                for k in 1..t.iterates.len() {
                    chain += t.step_distances[k - 1];
                    for (a, c) in [(0, k), (k, 0)] {
                        let lhs = mom[a];
                        let rhs = l.exp() * (mom[c] + chain * chain);
                        if lhs - rhs > worst.0 {
                            worst = (lhs - rhs, lhs, rhs);
                        }
                    }
                }
                DiagnosticVerdict::new(name, worst.1, worst.2, slack_jko(t), "ℓ₂(μ₀ − Sℓ) ≤ e^L(ℓ₂(μ₁ − Sℓ) + W²)", format!("L = {l:e}; W bounded by chained step distances"))
            }
            _ => DiagnosticVerdict::missing(name, "trajectory and model"),
        },
        "smooth_approx_bound" => {
            if b.smoothing.is_empty() {
                return DiagnosticVerdict::missing(name, "smoothing samples");
            }
            let mut worst = (f64::NEG_INFINITY, 0.0, 0.0, 0.0);
            for s in &b.smoothing {
                let (lhs, rhs) = (s.distance * s.distance, s.delta * s.entropy_drop);
                if lhs - rhs - 3.0 * s.solver_tol > worst.0 {
                    worst = (lhs - rhs - 3.0 * s.solver_tol, lhs, rhs, 3.0 * s.solver_tol);
                }
            }
            DiagnosticVerdict::new(name, worst.1, worst.2, worst.3, "W²(μ, G_δ∗μ) ≤ δ∫[h(μ) − h(G_δ∗μ)]", format!("{} values of δ", b.smoothing.len()))
        }
        "entropy_sandwich" => match (b.jko, b.model, b.spec) {
            (Some(t), Some(m), Some(spec)) => sandwich(m, spec, &t.iterates),
            _ => match (b.fd, b.model, b.spec) {
                (Some(t), Some(m), Some(spec)) => sandwich(m, spec, &t.snapshots),
                _ => DiagnosticVerdict::missing(name, "trajectory, model and energy"),
            },
        },
        "weak_form_residual" => {
            if b.weak_residuals.len() < 2 {
                return DiagnosticVerdict::missing(name, "residuals at two or more refinements");
            }
            let worst = b.weak_residuals.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
            DiagnosticVerdict::new(name, worst, 0.0, 0.0, "weak formulation residual → 0 under refinement", format!("residuals {:?}", b.weak_residuals))
        }
        "contraction_probe" => match b.probe {
            Some((before, after, tol)) => DiagnosticVerdict::new(name, after, before, 0.02 * before + 3.0 * tol, "W(S^t μ, S^t ν) ≤ W(μ, ν)", "2% discretization allowance"),
            None => DiagnosticVerdict::missing(name, "probe distances"),
        },
        "constant_speed" => {
            if b.geodesics.is_empty() {
                return DiagnosticVerdict::missing(name, "geodesic solves");
            }
            let worst = b.geodesics.iter().map(|g| g.speed_variation()).fold(0.0, f64::max);
            DiagnosticVerdict::new(name, worst, 0.05, 0.0, "per-slice action constant along geodesics", "stdev/mean of per-slice action")
        }
        "decoupled_sum_identity" => match &b.decoupled {
            Some(d) => {
                let sum: f64 = d.components.iter().map(|v| v * v).sum();
                let defect = (d.full * d.full - sum).abs() / sum.max(1e-300);
                DiagnosticVerdict::new(name, defect, 1e-3, 0.0, "W_M² = Σ_j W_{m_j}²", "relative defect")
            }
            None => DiagnosticVerdict::missing(name, "decoupled distance sample"),
        },
        _ => unreachable!(),
    }
}

/// `−ΔH/Δt ≥ C_f‖∂ₓμ‖² + ∫∂ₓηᵀ∂ₓμ` per FD step, right side averaged over the step.
/// The slack is the step variation of the right side (first-order quadrature error).
fn introapriori(model: &MobilityModel, spec: &EnergySpec, t: &FdTrajectory) -> DiagnosticVerdict {
    let name = "introapriori_dissipation";
    let rate = |mu: &GridDensity| -> f64 {
        let eta = mu.with_values(spec.eta_cells(mu));
        let dx = mu.dx();
        let mut cross = 0.0;
        for i in 0..mu.cells - 1 {
            for c in 0..mu.n {
                cross += (eta.values[(i + 1) * mu.n + c] - eta.values[i * mu.n + c]) * (mu.values[(i + 1) * mu.n + c] - mu.values[i * mu.n + c]) / (dx * dx);
            }
        }
        spec.c_f * mu.grad_norm_sq() + cross * dx
    };
    let hs: Vec<f64> = match t.snapshots.iter().map(|m| entropy_h(model, spec, m)).collect::<Result<Vec<_>>>() {
        Ok(v) => v,
        Err(e) => return DiagnosticVerdict::missing(name, &format!("entropy evaluation failed: {e}")),
    };
    let rates: Vec<f64> = t.snapshots.iter().map(rate).collect();
    let mut worst = (f64::NEG_INFINITY, 0.0, 0.0, 0.0);
    for k in 1..t.snapshots.len() {
        let dt = t.times[k] - t.times[k - 1];
        let lhs = 0.5 * (rates[k] + rates[k - 1]);
        let rhs = -(hs[k] - hs[k - 1]) / dt;
        let slack = (rates[k] - rates[k - 1]).abs();
        if lhs - rhs - slack > worst.0 {
            worst = (lhs - rhs - slack, lhs, rhs, slack);
        }
    }
    DiagnosticVerdict::new(name, worst.1, worst.2, worst.3, "−dH/dt ≥ C_f‖∂ₓμ‖² + ∫∂ₓηᵀ∂ₓμ", "worst recorded step")
}

/// `C_f/4·X − A ≤ E(μ) ≤ (F̄/2 + ½)X + B` with `X = ‖μ − z̄‖²`, `A = ‖η‖²/C_f − ∫z̄ᵀη`,
/// `B = ½‖η‖² + |∫z̄ᵀη|`, `F̄` the sampled maximum of `∇²f`.
fn sandwich(model: &MobilityModel, spec: &EnergySpec, states: &[GridDensity]) -> DiagnosticVerdict {
    let name = "entropy_sandwich";
    let fbar = upper_hessian_bound(model, &spec.f);
    let mut worst = (f64::NEG_INFINITY, 0.0, 0.0);
    for mu in states {
        let eta = spec.eta_cells(mu);
        let dx = mu.dx();
        let eta2: f64 = eta.iter().map(|v| v * v).sum::<f64>() * dx;
        let zeta: f64 = (0..mu.cells).map(|i| (0..mu.n).map(|c| spec.reference[c] * eta[i * mu.n + c]).sum::<f64>()).sum::<f64>() * dx;
        let x = mu.l2_deviation(&spec.reference).powi(2);
        let e = match energy_e(&EnergySpec { mass: None, ..spec.clone() }, mu) {
            Ok(v) => v,
            Err(err) => return DiagnosticVerdict::missing(name, &err.to_string()),
        };
        let lower = spec.c_f / 4.0 * x - (eta2 / spec.c_f - zeta);
        let upper = (0.5 * fbar + 0.5) * x + 0.5 * eta2 + zeta.abs();
        for (l, r) in [(lower, e), (e, upper)] {
            if l - r > worst.0 {
                worst = (l - r, l, r);
            }
        }
    }
    DiagnosticVerdict::new(name, worst.1, worst.2, 1e-12, "C̲(‖μ−z̄‖² − 1) ≤ E(μ) ≤ C̄(‖μ−z̄‖² + 1)", format!("F̄ = {fbar:e}; worst side shown"))
}

/// `W_M` between two iterates bounded by chained step distances.
pub fn chained_distance(traj: &JkoTrajectory, a: usize, b: usize) -> f64 {
    traj.step_distances[a.min(b)..a.max(b)].iter().sum()
}

#[allow(dead_code)]
fn moment(mu: &GridDensity, zref: &[f64]) -> f64 {
    second_moment(mu, zref)
}
