use crate::config::{ConditionCheck, GridSpec, RunConfig};
use crate::io::{density_table, header, num, read_json, write_json, Table};
use crate::Failure;
use matmob::conditions::*;
use matmob::diagnostics::{run_diagnostics, Bundle, DiagnosticVerdict, Status};
use matmob::grid::{second_moment, GridDensity};
use matmob::jko::{energy_e, entropy_h, jko_run, EnergySpec, JkoTrajectory};
use matmob::pde::{fd_solve, heat_solve, transport_solve, FdTrajectory};
use matmob::transport::{solve_distance, GeodesicResult};
use matmob::MobilityModel;
use std::fs;
use std::path::{Path, PathBuf};

pub struct Run {
    pub cfg: RunConfig,
    pub dir: PathBuf,
}

impl Run {
    pub fn new(mut cfg: RunConfig) -> Result<Self, Failure> {
        cfg.resolve_output();
        let dir = cfg.output.directory.clone().unwrap();
        fs::create_dir_all(&dir).map_err(|e| Failure::Io(format!("{}: {e}", dir.display())))?;
        write_json(&dir.join("resolved_config.json"), &cfg)?;
        Ok(Run { cfg, dir })
    }

    fn model(&self) -> &MobilityModel {
        &self.cfg.model
    }

    fn grid(&self) -> Result<&GridSpec, Failure> {
        self.cfg.grid.as_ref().ok_or_else(|| Failure::Config("grid: required for this subcommand".into()))
    }

    fn density(&self, which: &str) -> Result<GridDensity, Failure> {
        let src = match which {
            "initial" => self.cfg.initial.as_ref(),
            _ => self.cfg.target.as_ref(),
        };
        let src = src.ok_or_else(|| Failure::Config(format!("{which}: required for this subcommand")))?;
        crate::io::load_density(src, self.grid()?, self.model().dim())
    }

    fn energy(&self) -> Result<&EnergySpec, Failure> {
        self.cfg.energy.as_ref().ok_or_else(|| Failure::Config("energy: required for this subcommand".into()))
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }
}

fn need<'a, T>(v: &'a Option<T>, what: &str) -> Result<&'a T, Failure> {
    v.as_ref().ok_or_else(|| Failure::Config(format!("{what}: required for this subcommand")))
}

fn worst_code(codes: impl Iterator<Item = i32>) -> i32 {
    codes.fold(0, i32::max)
}

pub fn check_conditions(run: &Run) -> Result<i32, Failure> {
    let c = &run.cfg.conditions;
    let m = run.model();
    let mut reports: Vec<ConditionReport> = vec![];
    for check in &c.checks {
        let r = match check {
            ConditionCheck::C0 => check_c0(m, c.boundary_samples),
            ConditionCheck::C1 => check_c1(m, &c.plan)?,
            ConditionCheck::C2 => check_c2(m, &c.plan, false)?,
            ConditionCheck::C2Strict => check_c2(m, &c.plan, true)?,
            ConditionCheck::C3 => check_c3(m, c.boundary_samples)?,
            ConditionCheck::Mccann => check_mccann(m, need(&c.mccann_f, "conditions.mccann_f")?, &c.plan)?,
            ConditionCheck::PotentialConvexity | ConditionCheck::EstimateLambda => {
                let p = need(&c.potential, "conditions.potential")?;
                if *check == ConditionCheck::EstimateLambda {
                    let est = estimate_lambda(m, p.alpha, p.r, &c.plan)?;
                    write_json(&run.path("lambda.json"), &est)?;
                    println!("lambda estimate {} (closed form {:?})", est.sampled, est.closed_form);
                    continue;
                }
                let lambda = match p.lambda.or_else(|| lambda_closed_form(m, p.alpha, p.r)) {
                    Some(l) => l,
                    None => return Err(Failure::Config("conditions.potential.lambda: required for this model".into())),
                };
                check_potential_convexity(m, p.alpha, p.r, lambda, &c.plan)?
            }
            ConditionCheck::DiagDomination => check_diag_domination(m, need(&c.diag_reference, "conditions.diag_reference")?, &c.k_grid, &c.plan)?,
            ConditionCheck::Concavity => {
                let mobs = m.scalar_mobilities().ok_or_else(|| Failure::Config("concavity: model is not fully decoupled".into()))?;
                let (lo, hi) = m.space.bounding_box();
                let mut worst: Option<ConditionReport> = None;
                for (j, s) in mobs.iter().enumerate() {
                    let r = check_concavity_scalar(s, lo[j], hi[j], c.boundary_samples.max(2));
                    if worst.as_ref().map_or(true, |w| r.worst_value < w.worst_value) {
                        worst = Some(r);
                    }
                }
                worst.unwrap()
            }
        };
        let code = r.verdict.exit_code();
        println!("{:<28} {:?} worst {} samples {}", r.condition, r.verdict, num(r.worst_value), r.samples_checked);
        if code == 2 {
            if let Some(w) = &r.witness {
                println!("  witness {}", serde_json::to_string(w).unwrap_or_default());
            }
        }
        reports.push(r);
    }
    write_json(&run.path("conditions.json"), &reports)?;
    let mut t = Table::new(&["condition", "verdict", "worst_value", "samples", "parameter", "note"].map(String::from));
    for r in &reports {
        t.row(&[
            r.condition.clone(),
            format!("{:?}", r.verdict),
            num(r.worst_value),
            r.samples_checked.to_string(),
            r.parameter.map(num).unwrap_or_default(),
            r.note.clone(),
        ]);
    }
    t.save(&run.path("conditions.csv"))?;
    Ok(worst_code(reports.iter().map(|r| r.verdict.exit_code())))
}

fn matched_target(run: &Run, mu0: &GridDensity) -> Result<GridDensity, Failure> {
    let mu1 = run.density("target")?;
    if !run.cfg.match_target_mass {
        return Ok(mu1);
    }
    let (ma, mb) = (mu0.mass(), mu1.mass());
    let n = mu1.n;
    if mb.iter().any(|v| *v <= 0.0) {
        return Err(Failure::Config("target: cannot rescale a component with zero mass".into()));
    }
    Ok(mu1.with_values(mu1.values.iter().enumerate().map(|(i, v)| v * ma[i % n] / mb[i % n]).collect()))
}

pub fn distance(run: &Run, geodesic: bool) -> Result<i32, Failure> {
    let mu0 = run.density("initial")?;
    let mu1 = matched_target(run, &mu0)?;
    let g = solve_distance(run.model(), &mu0, &mu1, &run.cfg.distance)?;
    println!("{:?}", g.distance);
    for w in &g.warnings {
        eprintln!("warning: {w}");
    }
    let mut t = Table::new(&["distance", "iterations", "converged", "primal_dual_gap", "solver_tol", "speed_variation"].map(String::from));
    t.row(&[num(g.distance), g.iterations.to_string(), g.converged.to_string(), num(g.primal_dual_gap), num(g.solver_tol), num(g.speed_variation())]);
    t.save(&run.path("summary.csv"))?;
    write_json(&run.path("geodesic.json"), &g)?;
    if geodesic {
        write_geodesic(run, &g)?;
    }
    Ok(0)
}

/// Staggered export: densities on slices, fluxes on faces at half-integer times with the
/// face-averaged state they are paired with.
fn write_geodesic(run: &Run, g: &GeodesicResult) -> Result<(), Failure> {
    let p = &g.path;
    let n = p.densities[0].n;
    let snaps: Vec<(usize, f64, &GridDensity)> = p.densities.iter().enumerate().map(|(k, d)| (k, p.times[k], d)).collect();
    density_table(&snaps, n).save(&run.path("densities.csv"))?;
    let mut h = header(&["t", "x"], "mu", n);
    h.extend((1..=n).map(|j| format!("w_{j}")));
    let mut t = Table::new(&h);
    for k in 0..p.times.len() - 1 {
        let (a, b) = (&p.densities[k], &p.densities[k + 1]);
        let tm = 0.5 * (p.times[k] + p.times[k + 1]);
        for j in 0..=a.cells {
            let (l, r) = (j.saturating_sub(1), j.min(a.cells - 1));
            let mut row = vec![num(tm), num(a.x_min + j as f64 * a.dx())];
            for c in 0..n {
                let v = 0.25 * (a.values[l * n + c] + a.values[r * n + c] + b.values[l * n + c] + b.values[r * n + c]);
                row.push(num(v));
            }
            row.extend(p.fluxes[k][j * n..(j + 1) * n].iter().map(|v| num(*v)));
            t.row(&row);
        }
    }
    t.save(&run.path("geodesic.csv"))
}

/// `k, t, energy, H, step_distance, mass_*, second_moment`; the same schema for every solver.
fn trajectory_table(run: &Run, times: &[f64], states: &[GridDensity], steps: &[f64], energy: Option<&EnergySpec>) -> Result<Table, Failure> {
    let n = states[0].n;
    let mut h = vec!["k", "t", "energy", "H", "step_distance"].into_iter().map(String::from).collect::<Vec<_>>();
    h.extend((1..=n).map(|j| format!("mass_{j}")));
    h.push("second_moment".into());
    let mut t = Table::new(&h);
    let (lo, _) = run.model().space.bounding_box();
    for (k, mu) in states.iter().enumerate() {
        let (e, hh, zref) = match energy {
            Some(spec) => (
                energy_e(&EnergySpec { mass: None, ..spec.clone() }, mu)?,
                entropy_h(run.model(), spec, mu)?,
                spec.reference.clone(),
            ),
            None => (f64::NAN, f64::NAN, lo.clone()),
        };
        let step = if k == 0 { f64::NAN } else { steps.get(k - 1).copied().unwrap_or(f64::NAN) };
        let mut row = vec![k.to_string(), num(times[k]), num(e), num(hh), num(step)];
        row.extend(mu.mass().iter().map(|v| num(*v)));
        row.push(num(second_moment(mu, &zref)));
        t.row(&row);
    }
    Ok(t)
}

fn strided<'a>(stride: usize, times: &[f64], states: &'a [GridDensity]) -> Vec<(usize, f64, &'a GridDensity)> {
    let last = states.len() - 1;
    states.iter().enumerate().filter(|(k, _)| k % stride == 0 || *k == last).map(|(k, s)| (k, times[k], s)).collect()
}

fn save_jko(run: &Run, dir: &Path, traj: &JkoTrajectory, spec: &EnergySpec) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::Io(e.to_string()))?;
    trajectory_table(run, &traj.times, &traj.iterates, &traj.step_distances, Some(spec))?.save(&dir.join("trajectory.csv"))?;
    density_table(&strided(run.cfg.output.stride, &traj.times, &traj.iterates), traj.iterates[0].n).save(&dir.join("densities.csv"))?;
    write_json(&dir.join("trajectory.json"), traj)
}

fn save_fd(run: &Run, dir: &Path, traj: &FdTrajectory, spec: Option<&EnergySpec>) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::Io(e.to_string()))?;
    trajectory_table(run, &traj.times, &traj.snapshots, &[], spec)?.save(&dir.join("trajectory.csv"))?;
    density_table(&strided(run.cfg.output.stride, &traj.times, &traj.snapshots), traj.snapshots[0].n).save(&dir.join("densities.csv"))?;
    write_json(&dir.join("trajectory.json"), traj)
}

pub fn jko(run: &Run) -> Result<i32, Failure> {
    let b = need(&run.cfg.jko, "jko")?;
    let spec = run.energy()?;
    let traj = jko_run(run.model(), spec, &run.density("initial")?, b.tau, b.t_final, &b.config)?;
    save_jko(run, &run.dir, &traj, spec)?;
    println!("{} steps, energy {} -> {}", traj.step_distances.len(), num(traj.energies[0]), num(*traj.energies.last().unwrap()));
    Ok(0)
}

pub fn fd(run: &Run) -> Result<i32, Failure> {
    let b = need(&run.cfg.fd, "fd")?;
    let spec = run.energy()?;
    let traj = fd_solve(run.model(), spec, &run.density("initial")?, b.t_end, &b.config)?;
    save_fd(run, &run.dir, &traj, Some(spec))?;
    println!("{} steps of {}, largest projection {}", traj.steps, num(traj.dt), num(traj.max_projection()));
    Ok(0)
}

pub fn heat(run: &Run) -> Result<i32, Failure> {
    let b = need(&run.cfg.heat, "heat")?;
    let mu0 = run.density("initial")?;
    let out = heat_solve(&mu0, b.t)?;
    density_table(&[(0, 0.0, &mu0), (1, b.t, &out)], mu0.n).save(&run.path("densities.csv"))?;
    Ok(0)
}

pub fn transport(run: &Run) -> Result<i32, Failure> {
    let b = need(&run.cfg.transport, "transport")?;
    let traj = transport_solve(run.model(), b.alpha, &b.rho, &run.density("initial")?, b.t_end, &b.config)?;
    save_fd(run, &run.dir, &traj, run.cfg.energy.as_ref())?;
    println!("{} steps of {}, largest projection {}", traj.steps, num(traj.dt), num(traj.max_projection()));
    Ok(0)
}

pub fn compare(run: &Run) -> Result<i32, Failure> {
    let jb = need(&run.cfg.jko, "jko")?;
    let fb = need(&run.cfg.fd, "fd")?;
    let spec = run.energy()?;
    let mu0 = run.density("initial")?;
    let jt = jko_run(run.model(), spec, &mu0, jb.tau, jb.t_final, &jb.config)?;
    let ft = fd_solve(run.model(), spec, &mu0, jb.t_final, &fb.config)?;
    let samples = run.cfg.compare.samples.max(1);
    let (mut num2, mut den) = (0.0, 0.0);
    for j in 0..samples {
        let s = (j as f64 + 0.5) / samples as f64 * jb.t_final;
        let (a, b) = (jt.at(s), ft.at(s));
        num2 += a.l2_distance(&b).powi(2);
        den += b.l2_norm().powi(2);
    }
    let rel = (num2 / den).sqrt();
    let last = ft.snapshots.last().unwrap();
    let final_rel = jt.iterates.last().unwrap().l2_distance(last) / last.l2_norm();
    save_jko(run, &run.dir.join("jko"), &jt, spec)?;
    save_fd(run, &run.dir.join("fd"), &ft, Some(spec))?;
    let mut t = Table::new(&["space_time_l2_relative", "final_l2_relative", "tau", "fd_dt", "samples"].map(String::from));
    t.row(&[num(rel), num(final_rel), num(jb.tau), num(ft.dt), samples.to_string()]);
    t.save(&run.path("summary.csv"))?;
    println!("{rel:?}");
    Ok(0)
}

pub fn diagnose(run: &Run) -> Result<i32, Failure> {
    let d = &run.cfg.diagnose;
    let jko: Option<JkoTrajectory> = d.jko_run.as_ref().map(|p| read_json(&p.join("trajectory.json"))).transpose()?;
    let fd: Option<FdTrajectory> = d.fd_run.as_ref().map(|p| read_json(&p.join("trajectory.json"))).transpose()?;
    let geos: Vec<GeodesicResult> = d.geodesic_runs.iter().map(|p| read_json(&p.join("geodesic.json"))).collect::<Result<_, _>>()?;
    let r = &d.records;
    let bundle = Bundle {
        model: Some(run.model()),
        spec: run.cfg.energy.as_ref(),
        jko: jko.as_ref(),
        fd: fd.as_ref(),
        geodesics: geos.iter().collect(),
        smoothing: r.smoothing.clone(),
        probe: r.probe,
        decoupled: r.decoupled.clone(),
        weak_residuals: r.weak_residuals.clone(),
        seed: run.cfg.output.seed,
    };
    let names: Vec<&str> = d.checks.iter().map(|s| s.as_str()).collect();
    let verdicts: Vec<DiagnosticVerdict> = run_diagnostics(&bundle, &names)?;
    let mut t = Table::new(&["name", "status", "lhs", "rhs", "slack", "refs", "note"].map(String::from));
    for v in &verdicts {
        println!("{:<26} {:?} lhs {} rhs {} slack {}", v.name, v.status, num(v.lhs), num(v.rhs), num(v.slack));
        t.row(&[v.name.clone(), format!("{:?}", v.status), num(v.lhs), num(v.rhs), num(v.slack), v.refs.clone(), v.note.clone()]);
    }
    t.save(&run.path("verdicts.csv"))?;
    write_json(&run.path("verdicts.json"), &verdicts)?;
    Ok(worst_code(verdicts.iter().map(|v| match v.status {
        Status::Pass => 0,
        Status::Inconclusive => 1,
        Status::Fail => 2,
    })))
}
