//! Minimizing-movement scheme: `μᵏ ∈ argmin (1/2τ)·d²(·, μᵏ⁻¹) + E`.

use crate::action::ActionConfig;
use crate::conditions::{interior_points, SamplePlan};
use crate::error::{numerical, Error, Result};
use crate::field::ScalarField;
use crate::grid::{second_moment, GridDensity};
use crate::ipm::{cumulative, Problem, SolverMethod, SolverParams, TerminalEnergy};
use crate::linalg::sym_eig_range;
use crate::mobility::{EntropyCase, MobilityModel};
use crate::path::{path_energy, TransportPath};
use crate::transport::{interior_filler, make_interior};
use serde::{Deserialize, Serialize};

/// `E(μ) = ∫ f(μ) − f(z̄) − (μ−z̄)ᵀ∇f(z̄) + μᵀη dx`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergySpec {
    pub f: ScalarField,
    /// Declared lower bound on `∇²f`.
    pub c_f: f64,
    /// Potential `η(x)`: empty (zero), one field for all components, or one per component.
    #[serde(default)]
    pub eta: Vec<ScalarField>,
    /// Declared support of `η`.
    #[serde(default)]
    pub eta_support: Option<(f64, f64)>,
    pub reference: Vec<f64>,
    pub case: EntropyCase,
    /// Case A: prescribed `‖μ − z̄‖_{L¹}`.
    #[serde(default)]
    pub mass: Option<f64>,
}

impl EnergySpec {
    pub fn quadratic(n: usize, reference: Vec<f64>, case: EntropyCase) -> Self {
        let terms: Vec<String> = (1..=n).map(|j| format!("0.5*z{j}^2")).collect();
        EnergySpec {
            f: ScalarField::parse(&terms.join(" + ")).unwrap(),
            c_f: 1.0,
            eta: vec![],
            eta_support: None,
            reference,
            case,
            mass: None,
        }
    }

    /// Checks the declared data against `S`: `∇²f ⪰ C_f` on sampled points, `η` vanishing
    /// off its support, the reference state admissible for the case.
    pub fn validate(&self, model: &MobilityModel) -> Result<()> {
        let n = model.dim();
        let space = &model.space;
        if self.reference.len() != n {
            return Err(Error::Input(format!("reference state needs {n} components")));
        }
        if !(self.c_f > 0.0) {
            return Err(Error::Input("C_f must be positive".into()));
        }
        if self.f.z_arity() > n || self.f.uses_x() {
            return Err(Error::Input(format!("f may only use z1..z{n}")));
        }
        if !(self.eta.is_empty() || self.eta.len() == 1 || self.eta.len() == n) {
            return Err(Error::Input(format!("η needs 0, 1 or {n} fields")));
        }
        if self.eta.iter().any(|e| e.z_arity() > 0) {
            return Err(Error::Input("η may only depend on x".into()));
        }
        match self.case {
            EntropyCase::A => {
                let (lo, _) = space.bounding_box();
                if !space.contains(&self.reference)? || self.reference.iter().zip(&lo).any(|(a, b)| (a - b).abs() > 1e-12) {
                    return Err(Error::Input("case A needs the lower corner of S as reference".into()));
                }
            }
            EntropyCase::B => {
                if space.interior_distance(&self.reference) <= 0.0 {
                    return Err(Error::Input("case B needs an interior reference state".into()));
                }
            }
        }
        let plan = SamplePlan { points: crate::conditions::PointScheme::LowDiscrepancy { count: 500, seed: 7 }, directions: 1, margin: 1e-6 };
        for z in interior_points(space, &plan) {
            let (_, _, h) = self.f.grad_hess(&z, 0.0);
            let (lo, _) = sym_eig_range(n, &h);
            if !(lo >= self.c_f * (1.0 - 1e-9)) {
                return Err(Error::Input(format!("∇²f has eigenvalue {lo} < C_f = {} at {z:?}", self.c_f)));
            }
        }
        if let Some((a, b)) = self.eta_support {
            for k in 0..=200 {
                for x in [a - 1.0 - k as f64, b + 1.0 + k as f64, a - 1e-9, b + 1e-9] {
                    if self.eta.iter().any(|e| e.at_x(x) != 0.0) {
                        return Err(Error::Input(format!("η does not vanish at x = {x} outside [{a}, {b}]")));
                    }
                }
            }
        }
        Ok(())
    }

    /// `η` at cell centres (`N×n`).
    pub fn eta_cells(&self, mu: &GridDensity) -> Vec<f64> {
        let n = mu.n;
        let mut out = vec![0.0; mu.cells * n];
        for i in 0..mu.cells {
            let x = mu.x(i);
            for c in 0..n {
                out[i * n + c] = match self.eta.len() {
                    0 => 0.0,
                    1 => self.eta[0].at_x(x),
                    _ => self.eta[c].at_x(x),
                };
            }
        }
        out
    }

    /// Forward-difference `‖∂ₓη‖²_{L²}` on the grid of `mu`.
    pub fn eta_grad_norm_sq(&self, mu: &GridDensity) -> f64 {
        mu.with_values(self.eta_cells(mu)).grad_norm_sq()
    }

    fn terminal(&self, mu: &GridDensity) -> TerminalEnergy {
        let (fref, gref, _) = self.f.grad_hess(&self.reference, 0.0);
        TerminalEnergy { f: self.f.clone(), zref: self.reference.clone(), fref, gref, eta: self.eta_cells(mu) }
    }

    fn check_case(&self, mu: &GridDensity) -> Result<()> {
        if let (EntropyCase::A, Some(m)) = (self.case, self.mass) {
            let got: f64 = mu.mass_relative(&self.reference).iter().sum();
            if (got - m).abs() > 1e-8 * (1.0 + m.abs()) {
                return Err(Error::Input(format!("case A density has ‖μ − z̄‖_L¹ = {got}, expected {m}")));
            }
        }
        Ok(())
    }
}

pub fn energy_e(spec: &EnergySpec, mu: &GridDensity) -> Result<f64> {
    spec.check_case(mu)?;
    let t = spec.terminal(mu);
    let n = mu.n;
    let mut e = 0.0;
    for i in 0..mu.cells {
        let z = mu.row(i);
        let mut v = spec.f.value(z, 0.0) - t.fref;
        for c in 0..n {
            v += -(z[c] - t.zref[c]) * t.gref[c] + z[c] * t.eta[i * n + c];
        }
        e += v;
    }
    Ok(e * mu.dx())
}

/// Heat entropy `∫ h_z̄(μ) dx`.
pub fn entropy_h(model: &MobilityModel, spec: &EnergySpec, mu: &GridDensity) -> Result<f64> {
    let mut s = 0.0;
    for i in 0..mu.cells {
        s += model.h_relative(mu.row(i), &spec.reference, spec.case)?;
    }
    Ok(s * mu.dx())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JkoConfig {
    /// Time steps of the inner transport path.
    pub inner_steps: usize,
    pub solver: SolverParams,
    pub action: ActionConfig,
}

impl Default for JkoConfig {
    fn default() -> Self {
        JkoConfig { inner_steps: 4, solver: SolverParams::default(), action: ActionConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub iterations: usize,
    pub converged: bool,
    /// Barrier gap bound on the step objective.
    pub gap: f64,
    pub solver_tol: f64,
    /// `(1/2τ)·d² + E` at the returned iterate.
    pub objective: f64,
}

#[derive(Clone, Debug)]
pub struct StepResult {
    pub density: GridDensity,
    pub distance: f64,
    pub path: TransportPath,
    pub record: StepRecord,
}

/// One minimizing-movement step with `K = inner_steps` and a free terminal slice.
pub fn jko_step(model: &MobilityModel, spec: &EnergySpec, prev: &GridDensity, tau: f64, cfg: &JkoConfig) -> Result<StepResult> {
    if !(tau > 0.0) {
        return Err(Error::Input("τ must be positive".into()));
    }
    if cfg.inner_steps == 0 {
        return Err(Error::Input("at least one inner step is required".into()));
    }
    if cfg.solver.method != SolverMethod::Newton {
        return Err(Error::Input("free-endpoint steps are solved by the Newton method only".into()));
    }
    cfg.solver.validate()?;
    cfg.action.validate()?;
    prev.check_in(&model.space)?;
    if prev.n != model.dim() || prev.cells < 2 {
        return Err(Error::Input("density does not match the model or has fewer than two cells".into()));
    }
    let (n, cells, dx) = (prev.n, prev.cells, prev.dx());
    let k = cfg.inner_steps;
    let filler = interior_filler(model, prev)?;
    let problem = Problem {
        model,
        n,
        cells,
        dx,
        dt: vec![1.0 / k as f64; k],
        start: cumulative(&prev.values, n, cells, dx),
        end: None,
        mass: prev.mass(),
        path_weight: 0.5 / tau,
        terminal: Some(spec.terminal(prev)),
    };
    let start = make_interior(model, &prev.values, &filler, n);
    let x0 = problem.pack(&vec![start; k]);
    let out = problem.solve(x0, &cfg.solver);
    if !out.converged {
        return Err(numerical("jko step", format!("no convergence after {} iterations (gap {:e})", out.iterations, out.gap)));
    }
    let mut dens = vec![prev.clone()];
    for j in 1..=k {
        dens.push(prev.with_values(problem.slice(&out.x, j)));
    }
    let path = TransportPath::from_densities(dens, TransportPath::uniform_times(k, 1.0))?;
    let d2 = path_energy(model, &path, &cfg.action)?;
    let density = path.last().clone();
    let objective = 0.5 / tau * d2 + energy_e(&EnergySpec { mass: None, ..spec.clone() }, &density)?;
    Ok(StepResult {
        density,
        distance: d2.sqrt(),
        path,
        record: StepRecord { iterations: out.iterations, converged: true, gap: out.gap, solver_tol: out.gap.sqrt(), objective },
    })
}

/// Lower bound on `inf E` over densities on the grid of `mu` with the masses of `mu`:
/// the barrier solution's energy minus its gap.
pub fn energy_infimum(model: &MobilityModel, spec: &EnergySpec, mu: &GridDensity, solver: &SolverParams) -> Result<f64> {
    let (n, cells, dx) = (mu.n, mu.cells, mu.dx());
    let filler = interior_filler(model, mu)?;
    let problem = Problem {
        model,
        n,
        cells,
        dx,
        dt: vec![1.0],
        start: cumulative(&mu.values, n, cells, dx),
        end: None,
        mass: mu.mass(),
        path_weight: 0.0,
        terminal: Some(spec.terminal(mu)),
    };
    let x0 = problem.pack(&[filler.iter().cycle().take(cells * n).cloned().collect()]);
    let out = problem.solve(x0, solver);
    if !out.converged {
        return Err(numerical("energy infimum", format!("no convergence (gap {:e})", out.gap)));
    }
    Ok(out.energy - out.gap)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JkoTrajectory {
    pub tau: f64,
    pub times: Vec<f64>,
    pub iterates: Vec<GridDensity>,
    /// `step_distances[k]` joins iterates `k` and `k+1`.
    pub step_distances: Vec<f64>,
    pub energies: Vec<f64>,
    pub heat_entropies: Vec<f64>,
    pub records: Vec<StepRecord>,
    pub paths: Vec<TransportPath>,
    pub inf_energy: f64,
    /// Iterates are piecewise constant in time: `μ_τ(t) = μᵏ` for `t ∈ ((k−1)τ, kτ]`.
    pub interpolation: String,
}

impl JkoTrajectory {
    /// `μ_τ(t)` of the piecewise-constant interpolation.
    pub fn at(&self, t: f64) -> &GridDensity {
        let k = if t <= 0.0 { 0 } else { ((t / self.tau) - 1e-12).ceil() as usize };
        &self.iterates[k.min(self.iterates.len() - 1)]
    }

    pub fn max_solver_tol(&self) -> f64 {
        self.records.iter().map(|r| r.solver_tol).fold(0.0, f64::max)
    }

    pub fn masses(&self) -> Vec<Vec<f64>> {
        self.iterates.iter().map(|m| m.mass()).collect()
    }

    pub fn second_moments(&self, zref: &[f64]) -> Vec<f64> {
        self.iterates.iter().map(|m| second_moment(m, zref)).collect()
    }
}

pub fn jko_run(model: &MobilityModel, spec: &EnergySpec, mu0: &GridDensity, tau: f64, t_final: f64, cfg: &JkoConfig) -> Result<JkoTrajectory> {
    spec.validate(model)?;
    if !(tau > 0.0) || !(t_final >= 0.0) {
        return Err(Error::Input("need τ > 0 and T ≥ 0".into()));
    }
    let steps = (t_final / tau - 1e-9).ceil().max(0.0) as usize;
    let mut traj = JkoTrajectory {
        tau,
        times: vec![0.0],
        iterates: vec![mu0.clone()],
        step_distances: vec![],
        energies: vec![energy_e(spec, mu0)?],
        heat_entropies: vec![entropy_h(model, spec, mu0)?],
        records: vec![],
        paths: vec![],
        inf_energy: energy_infimum(model, spec, mu0, &cfg.solver)?,
        interpolation: "piecewise-constant".into(),
    };
    for k in 1..=steps {
        let prev = traj.iterates.last().unwrap();
        let step = jko_step(model, spec, prev, tau, cfg)?;
        traj.energies.push(energy_e(&EnergySpec { mass: None, ..spec.clone() }, &step.density)?);
        traj.heat_entropies.push(entropy_h(model, spec, &step.density)?);
        traj.step_distances.push(step.distance);
        traj.records.push(step.record);
        traj.paths.push(step.path);
        traj.iterates.push(step.density);
        traj.times.push(k as f64 * tau);
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::StateSpace;

    #[test]
    fn quadratic_energy_closed_form() {
        let spec = EnergySpec { eta: vec![ScalarField::parse("x").unwrap()], ..EnergySpec::quadratic(2, vec![0.2, 0.3], EntropyCase::B) };
        let mu = GridDensity::from_fn(0.0, 1.0, 10, 2, |x| vec![0.5 + 0.1 * x, 0.4]).unwrap();
        let mut want = 0.0;
        for i in 0..10 {
            let z = mu.row(i);
            want += 0.5 * ((z[0] - 0.2).powi(2) + (z[1] - 0.3).powi(2)) + (z[0] + z[1]) * mu.x(i);
        }
        want *= mu.dx();
        assert!((energy_e(&spec, &mu).unwrap() - want).abs() < 1e-14);
    }

    #[test]
    fn stationary_state_is_fixed() {
        let model = MobilityModel::quadratic_decoupled(2);
        let spec = EnergySpec::quadratic(2, vec![0.4, 0.6], EntropyCase::B);
        let mu = GridDensity::constant(0.0, 1.0, 8, &[0.4, 0.6]).unwrap();
        let step = jko_step(&model, &spec, &mu, 0.1, &JkoConfig::default()).unwrap();
        assert!(step.density.l2_distance(&mu) < 1e-6);
        assert!(step.distance < 1e-5);
        assert!(energy_e(&spec, &mu).unwrap().abs() < 1e-15);
        assert!(entropy_h(&model, &spec, &mu).unwrap().abs() < 1e-15);
        let _ = StateSpace::unit_cube(2);
    }
}
