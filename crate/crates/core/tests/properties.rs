use matmob::action::{action_density, action_density_pinv, ActionConfig};
use matmob::conditions::boundary_points;
use matmob::diagnostics::*;
use matmob::field::BuiltinField;
use matmob::grid::GridDensity;
use matmob::jko::*;
use matmob::path::{path_energy, TransportPath};
use matmob::pde::*;
use matmob::transport::*;
use matmob::{EntropyCase, MobilityFamily, MobilityModel, ScalarField, StateSpace};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn families() -> Vec<MobilityModel> {
    vec![
        MobilityModel::quadratic_decoupled(2),
        MobilityModel::new(StateSpace::unit_cube(2), MobilityFamily::PerturbedDecoupled { epsilon: 0.1 }).unwrap(),
        MobilityModel::new(StateSpace::Simplex { dim: 2 }, MobilityFamily::VolumeFilling).unwrap(),
        MobilityModel::new(StateSpace::Ball { dim: 2 }, MobilityFamily::RadialBall).unwrap(),
    ]
}

/// Maps `u ∈ [0,1]²` into the bounding box; `None` when too close to `∂S`.
fn interior(model: &MobilityModel, u: &[f64], margin: f64) -> Option<Vec<f64>> {
    let (lo, hi) = model.space.bounding_box();
    let z: Vec<f64> = u.iter().enumerate().map(|(i, t)| lo[i] + t * (hi[i] - lo[i])).collect();
    (model.space.interior_distance(&z) >= margin).then_some(z)
}

fn unit2() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..1.0f64, 2)
}

fn vec2() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0..1.0f64, 2)
}

fn norm(m: &DMatrix<f64>) -> f64 {
    m.symmetric_eigenvalues().iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

fn smooth_pair(cells: usize, a: &[f64], b: &[f64]) -> (GridDensity, GridDensity) {
    let f = |p: &[f64]| {
        let p = p.to_vec();
        move |x: f64| vec![0.4 + 0.2 * (-(x - p[0]).powi(2) / 0.1).exp(), 0.5 - 0.2 * (-(x - p[1]).powi(2) / 0.1).exp()]
    };
    let mu = GridDensity::from_fn(-1.0, 1.0, cells, 2, f(a)).unwrap();
    let nu = GridDensity::from_fn(-1.0, 1.0, cells, 2, f(b)).unwrap();
    let (ma, mb) = (mu.mass(), nu.mass());
    let v = nu.values.iter().enumerate().map(|(i, v)| v * ma[i % 2] / mb[i % 2]).collect();
    (mu.clone(), nu.with_values(v))
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn mobility_is_symmetric(u in unit2()) {
        for m in families() {
            let Some(z) = interior(&m, &u, 1e-6) else { continue };
            let mm = m.eval_m(&z).unwrap();
            prop_assert!((&mm - mm.transpose()).abs().max() <= 1e-12 * (1.0 + norm(&mm)));
        }
    }

    #[test]
    fn mobility_inverts_hessian_of_h(u in unit2()) {
        for m in families() {
            let Some(z) = interior(&m, &u, 1e-3) else { continue };
            let prod = m.eval_m(&z).unwrap() * m.eval_m_inverse(&z).unwrap();
            let defect = (prod - DMatrix::identity(2, 2)).abs().max();
            prop_assert!(defect <= 1e-8, "defect {defect:e} at {z:?}");
        }
    }

    #[test]
    fn derivatives_match_central_differences(u in unit2(), zeta in vec2()) {
        for m in families() {
            let Some(z) = interior(&m, &u, 1e-2) else { continue };
            let at = |s: f64| m.eval_m(&z.iter().zip(&zeta).map(|(a, b)| a + s * b).collect::<Vec<_>>()).unwrap();
            let h = 1e-5;
            let fd1 = (at(h) - at(-h)) / (2.0 * h);
            let dm = m.eval_dm(&z, &zeta).unwrap();
            prop_assert!((&dm - &fd1).abs().max() <= 1e-4 * (1.0 + norm(&dm)));
            let h = 1e-4;
            let fd2 = (at(h) - at(0.0) * 2.0 + at(-h)) / (h * h);
            let d2m = m.eval_d2m(&z, &zeta, &zeta).unwrap();
            prop_assert!((&d2m - &fd2).abs().max() <= 1e-4 * (1.0 + norm(&d2m)), "{d2m} vs {fd2}");
        }
    }

    #[test]
    fn mobility_degenerates_normally_at_the_boundary(d in vec2()) {
        prop_assume!(d.iter().map(|v| v * v).sum::<f64>() > 1e-4);
        for m in families() {
            let c = m.space.center();
            let t = m.space.max_step(&c, &d, 1e6);
            let zb = m.space.project(&c.iter().zip(&d).map(|(a, b)| a + t * b).collect::<Vec<_>>());
            for nu in m.space.boundary_normals(&zb, 1e-9).unwrap() {
                let mv = m.eval_m(&zb).unwrap() * nalgebra::DVector::from_vec(nu);
                prop_assert!(mv.norm() <= 1e-10, "‖Mν‖ = {:e} at {zb:?}", mv.norm());
            }
        }
    }

    #[test]
    fn perturbation_zero_is_decoupled(u in unit2()) {
        let p = MobilityModel::new(StateSpace::unit_cube(2), MobilityFamily::PerturbedDecoupled { epsilon: 0.0 }).unwrap();
        let d = MobilityModel::quadratic_decoupled(2);
        prop_assert!((p.eval_m(&u).unwrap() - d.eval_m(&u).unwrap()).abs().max() <= 1e-12);
    }

    #[test]
    fn action_is_two_homogeneous(u in unit2(), p in vec2(), c in 0.1..10.0f64) {
        let cfg = ActionConfig::default();
        for m in families() {
            let Some(z) = interior(&m, &u, 1e-6) else { continue };
            let a = action_density(&m, &z, &p, &cfg).unwrap();
            let cp: Vec<f64> = p.iter().map(|v| c * v).collect();
            let b = action_density(&m, &z, &cp, &cfg).unwrap();
            prop_assert!((b - c * c * a).abs() <= 1e-12 * b.abs().max(1e-300));
        }
    }

    #[test]
    fn action_is_jointly_convex(u0 in unit2(), u1 in unit2(), p0 in vec2(), p1 in vec2()) {
        let cfg = ActionConfig::default();
        for m in families() {
            let (Some(z0), Some(z1)) = (interior(&m, &u0, 1e-4), interior(&m, &u1, 1e-4)) else { continue };
            let (f0, f1) = (action_density(&m, &z0, &p0, &cfg).unwrap(), action_density(&m, &z1, &p1, &cfg).unwrap());
            for t in [0.25, 0.5, 0.75] {
                let mix = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (1.0 - t) * x + t * y).collect::<Vec<_>>();
                let ft = action_density(&m, &mix(&z0, &z1), &mix(&p0, &p1), &cfg).unwrap();
                let rhs = (1.0 - t) * f0 + t * f1;
                prop_assert!(ft <= rhs * (1.0 + 1e-10) + 1e-12);
            }
        }
    }

    #[test]
    fn action_bounded_below_by_operator_norm(u in unit2(), p in vec2()) {
        let cfg = ActionConfig::default();
        for m in families() {
            let Some(z) = interior(&m, &u, 1e-6) else { continue };
            let cm = norm(&m.eval_m(&z).unwrap());
            let phi = action_density(&m, &z, &p, &cfg).unwrap();
            let p2: f64 = p.iter().map(|v| v * v).sum();
            prop_assert!(phi * cm >= p2 * (1.0 - 1e-10));
        }
    }

    #[test]
    fn projected_and_direct_action_agree(u in unit2(), p in vec2()) {
        let cfg = ActionConfig::default();
        for m in families() {
            let Some(z) = interior(&m, &u, 1e-8) else { continue };
            let a = action_density(&m, &z, &p, &cfg).unwrap();
            let b = action_density_pinv(&m, &z, &p, &cfg).unwrap();
            if m.space.interior_distance(&z) >= 1e-3 || b.is_finite() {
                prop_assert!((a - b).abs() <= 1e-8 * a.abs().max(1e-300), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn time_rescaling_keeps_duration_times_energy(a in vec2(), b in vec2(), stretch in 0.5..4.0f64) {
        let m = MobilityModel::quadratic_decoupled(2);
        let (mu, nu) = smooth_pair(16, &a, &b);
        let path = TransportPath::linear(&mu, &nu, 4).unwrap();
        let cfg = ActionConfig::default();
        let e1 = path_energy(&m, &path, &cfg).unwrap();
        let e2 = path_energy(&m, &path.rescale_to(stretch).unwrap(), &cfg).unwrap();
        prop_assert!((stretch * e2 - e1).abs() <= 1e-10 * e1.max(1e-300));
    }

    #[test]
    fn verdict_passes_iff_within_slack(before in 0.0..2.0f64, after in 0.0..2.0f64, tol in 0.0..1e-3f64) {
        let b = Bundle { probe: Some((before, after, tol)), ..Default::default() };
        let v = &run_diagnostics(&b, &["contraction_probe"]).unwrap()[0];
        prop_assert_eq!(v.pass, v.lhs <= v.rhs + v.slack);
        prop_assert_eq!(v.pass, v.status == Status::Pass);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 6, ..ProptestConfig::default() })]

    #[test]
    fn distance_axioms_and_energy(a in vec2(), b in vec2()) {
        let m = MobilityModel::quadratic_decoupled(2);
        let (mu, nu) = smooth_pair(12, &a, &b);
        let cfg = DistanceConfig::with_steps(4);
        let same = solve_distance(&m, &mu, &mu, &cfg).unwrap();
        prop_assert!(same.distance <= same.solver_tol);
        let g = solve_distance(&m, &mu, &nu, &cfg).unwrap();
        let e = path_energy(&m, &g.path, &cfg.action).unwrap();
        prop_assert!((g.distance.powi(2) - e).abs() <= 1e-10 * e.max(1e-300) + g.solver_tol);
        let r = solve_distance(&m, &nu, &mu, &cfg).unwrap();
        prop_assert!((g.distance - r.distance).abs() <= 2.0 * g.solver_tol.max(r.solver_tol));
    }

    #[test]
    fn squared_distance_is_convex_along_blends(a in vec2(), b in vec2(), c in vec2(), d in vec2(), t in 0.1..0.9f64) {
        let m = MobilityModel::quadratic_decoupled(2);
        let (mu0, mu1) = smooth_pair(12, &a, &b);
        let (nu0, nu1) = smooth_pair(12, &c, &d);
        // a common mass for all four endpoints keeps the blends connectable
        let fix = |x: GridDensity| {
            let (ma, mb) = (mu0.mass(), x.mass());
            let v = x.values.iter().enumerate().map(|(i, v)| v * ma[i % 2] / mb[i % 2]).collect();
            x.with_values(v)
        };
        let (nu0, nu1) = (fix(nu0), fix(nu1));
        let cfg = DistanceConfig::with_steps(4);
        let d_mu = solve_distance(&m, &mu0, &mu1, &cfg).unwrap();
        let d_nu = solve_distance(&m, &nu0, &nu1, &cfg).unwrap();
        let d_mix = solve_distance(&m, &mu0.blend(&nu0, t), &mu1.blend(&nu1, t), &cfg).unwrap();
        let tol = 3.0 * [&d_mu, &d_nu, &d_mix].iter().map(|g| g.solver_tol).fold(0.0, f64::max);
        prop_assert!(d_mix.distance.powi(2) <= (1.0 - t) * d_mu.distance.powi(2) + t * d_nu.distance.powi(2) + tol);
    }

    #[test]
    fn solvers_conserve_mass(a in vec2(), b in vec2()) {
        let m = MobilityModel::quadratic_decoupled(2);
        let (mu, _) = smooth_pair(32, &a, &b);
        let spec = EnergySpec::quadratic(2, vec![0.5, 0.5], EntropyCase::B);
        let drift = |t: &FdTrajectory| {
            let m0 = t.snapshots[0].mass();
            t.snapshots.iter().map(|s| s.mass().iter().zip(&m0).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)).fold(0.0, f64::max)
        };
        let fd = fd_solve(&m, &spec, &mu, 0.01, &FdConfig::default()).unwrap();
        prop_assert!(drift(&fd) <= 1e-12);
        let rho = [ScalarField::Builtin(BuiltinField::Bump { center: b[0], radius: 0.5, amplitude: 1.0 })];
        let tr = transport_solve(&m, 0.1, &rho, &mu, 0.01, &FdConfig::default()).unwrap();
        prop_assert!(drift(&tr) <= 1e-12);
        let heat = heat_solve(&mu, 0.01).unwrap();
        prop_assert!(heat.mass().iter().zip(&mu.mass()).all(|(x, y)| (x - y).abs() <= 1e-12));
    }

    #[test]
    fn minimizing_movement_dissipates_and_conserves(a in vec2(), b in vec2()) {
        let m = MobilityModel::quadratic_decoupled(2);
        let (mu, _) = smooth_pair(12, &a, &b);
        let spec = EnergySpec::quadratic(2, vec![0.5, 0.5], EntropyCase::B);
        let traj = jko_run(&m, &spec, &mu, 0.02, 0.04, &JkoConfig::default()).unwrap();
        let bundle = Bundle { model: Some(&m), spec: Some(&spec), jko: Some(&traj), ..Default::default() };
        for v in run_diagnostics(&bundle, &["energy_monotone", "telescoping_distance"]).unwrap() {
            prop_assert!(v.pass, "{v:?}");
        }
        let m0 = mu.mass();
        for s in &traj.iterates {
            prop_assert!(s.mass().iter().zip(&m0).all(|(x, y)| (x - y).abs() <= 1e-10));
        }
    }
}

#[test]
fn boundary_samples_lie_on_the_boundary() {
    for m in families() {
        for z in boundary_points(&m.space, 50) {
            assert!(m.space.interior_distance(&z).abs() <= 1e-12);
        }
    }
}

#[test]
fn missing_inputs_are_inconclusive() {
    let vs = run_diagnostics(&Bundle::default(), &CHECKS).unwrap();
    assert_eq!(vs.len(), CHECKS.len());
    assert!(vs.iter().all(|v| v.status == Status::Inconclusive && !v.pass));
    assert!(run_diagnostics(&Bundle::default(), &["no_such_check"]).is_err());
}
