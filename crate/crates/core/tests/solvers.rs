use matmob::grid::GridDensity;
use matmob::ipm::{SolverMethod, SolverParams};
use matmob::jko::*;
use matmob::pde::*;
use matmob::transport::*;
use matmob::{EntropyCase, MobilityModel};
use std::time::Instant;

fn pair() -> (GridDensity, GridDensity) {
    let a = GridDensity::from_fn(-1.0, 1.0, 12, 2, |x| vec![0.4 + 0.2 * (-x * x / 0.1).exp(), 0.5]).unwrap();
    let b = GridDensity::from_fn(-1.0, 1.0, 12, 2, |x| vec![0.4 + 0.2 * (-(x - 0.3).powi(2) / 0.1).exp(), 0.5]).unwrap();
    let (ma, mb) = (a.mass(), b.mass());
    let v = b.values.iter().enumerate().map(|(i, v)| v * ma[i % 2] / mb[i % 2]).collect();
    (a, b.with_values(v))
}

#[test]
fn pdhg_agrees_with_newton() {
    let m = MobilityModel::quadratic_decoupled(2);
    let (a, b) = pair();
    let newton = solve_distance(&m, &a, &b, &DistanceConfig::with_steps(4)).unwrap();
    let t = Instant::now();
    let cfg = DistanceConfig {
        steps: 4,
        solver: SolverParams { method: SolverMethod::Pdhg, max_iters: 50_000, ..SolverParams::default() },
        ..Default::default()
    };
    let pdhg = solve_distance(&m, &a, &b, &cfg).unwrap();
    eprintln!("newton {} pdhg {} ({} iterations, {:?})", newton.distance, pdhg.distance, pdhg.iterations, t.elapsed());
    assert!(newton.converged);
    assert!((pdhg.distance - newton.distance).abs() <= 1e-5 * newton.distance);
}

fn relax_setup() -> (MobilityModel, EnergySpec, GridDensity) {
    let m = MobilityModel::quadratic_decoupled(2);
    let spec = EnergySpec::quadratic(2, vec![0.5, 0.5], EntropyCase::B);
    let mu = GridDensity::from_fn(-1.0, 1.0, 16, 2, |x| vec![0.5 + 0.3 * (-x * x / 0.05).exp(), 0.5 - 0.3 * (-(x - 0.2).powi(2) / 0.05).exp()]).unwrap();
    (m, spec, mu)
}

#[test]
fn minimizing_movement_approaches_fd_as_tau_shrinks() {
    let (m, spec, mu) = relax_setup();
    let t_end = 0.02;
    let fd = fd_solve(&m, &spec, &mu, t_end, &FdConfig::default()).unwrap();
    let target = fd.snapshots.last().unwrap();
    let errs: Vec<f64> = [0.01, 0.005, 0.0025]
        .iter()
        .map(|&tau| {
            let tr = jko_run(&m, &spec, &mu, tau, t_end, &JkoConfig::default()).unwrap();
            tr.iterates.last().unwrap().l2_distance(target) / target.l2_norm()
        })
        .collect();
    eprintln!("relative errors {errs:?}");
    assert!(errs[1] < errs[0] && errs[2] < errs[1]);
    // the two spatial discretizations differ, so the error tends to a floor; first order
    // in τ shows in the successive differences halving
    let ratio = (errs[1] - errs[2]) / (errs[0] - errs[1]);
    assert!((0.35..0.65).contains(&ratio), "difference ratio {ratio}");
}

#[test]
fn inner_path_refinement_changes_little() {
    let (m, spec, mu) = relax_setup();
    let run = |k: usize| jko_run(&m, &spec, &mu, 0.01, 0.01, &JkoConfig { inner_steps: k, ..JkoConfig::default() }).unwrap();
    let (a, b) = (run(4), run(8));
    let rel = a.iterates[1].l2_distance(&b.iterates[1]) / a.iterates[1].l2_distance(&mu);
    eprintln!("N_t 4 vs 8 relative to the step size: {rel:e}");
    assert!(rel < 0.05);
}
