use matmob::conditions::*;
use matmob::diagnostics::*;
use matmob::field::BuiltinField;
use matmob::grid::GridDensity;
use matmob::jko::*;
use matmob::pde::*;
use matmob::transport::*;
use matmob::mobility::EntropyCase;
use matmob::{MobilityFamily, MobilityModel, ScalarField, ScalarMobility, StateSpace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

type Outcome = Result<(bool, String), String>;

fn gauss(c: f64, s: f64) -> impl Fn(f64) -> Vec<f64> {
    move |x| vec![(-(x - c) * (x - c) / (2.0 * s * s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt())]
}

fn bump(c: f64, r: f64, a: f64) -> ScalarField {
    ScalarField::Builtin(BuiltinField::Bump { center: c, radius: r, amplitude: a })
}

fn sci(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>().join(", ")
}

fn e<E: std::fmt::Display>(x: E) -> String {
    x.to_string()
}

/// Two unit-mass Gaussians at ∓0.5, the second rescaled to the first's discrete mass.
fn gaussian_pair() -> (GridDensity, GridDensity) {
    let a = GridDensity::from_fn(-3.0, 3.0, 64, 1, gauss(-0.5, 0.15)).unwrap();
    let b = GridDensity::from_fn(-3.0, 3.0, 64, 1, gauss(0.5, 0.15)).unwrap();
    let b = b.with_values(b.values.iter().map(|v| v * a.mass()[0] / b.mass()[0]).collect());
    (a, b)
}

fn linear_model() -> MobilityModel {
    MobilityModel::new(
        StateSpace::cuboid(vec![0.0], vec![10.0]).unwrap(),
        MobilityFamily::FullyDecoupled { mobilities: vec![ScalarMobility::Linear] },
    )
    .unwrap()
    .exempt_c3()
}

fn equalize(a: &GridDensity, b: GridDensity) -> GridDensity {
    let (ma, mb) = (a.mass(), b.mass());
    let n = b.n;
    let v = b.values.iter().enumerate().map(|(i, v)| v * ma[i % n] / mb[i % n]).collect();
    b.with_values(v)
}

fn decoupled_pair() -> (GridDensity, GridDensity) {
    let a = GridDensity::from_fn(-1.0, 1.0, 32, 2, |x| vec![0.3 + 0.2 * (-x * x / 0.1).exp(), 0.5 - 0.2 * (-(x - 0.3).powi(2) / 0.1).exp()]).unwrap();
    let b = GridDensity::from_fn(-1.0, 1.0, 32, 2, |x| vec![0.3 + 0.2 * (-(x - 0.4).powi(2) / 0.1).exp(), 0.5 - 0.2 * (-(x + 0.2).powi(2) / 0.1).exp()]).unwrap();
    let b = equalize(&a, b);
    (a, b)
}

struct Run8 {
    model: MobilityModel,
    spec: EnergySpec,
}

fn run8() -> Run8 {
    let spec = EnergySpec {
        eta: vec![bump(0.0, 0.5, 0.5)],
        eta_support: Some((-0.5, 0.5)),
        ..EnergySpec::quadratic(2, vec![0.0, 0.0], EntropyCase::A)
    };
    Run8 { model: MobilityModel::quadratic_decoupled(2), spec }
}

fn run8_initial(cells: usize) -> GridDensity {
    let (b1, b2) = (bump(-0.3, 0.5, 0.6), bump(0.25, 0.55, 0.5));
    GridDensity::from_fn(-1.0, 1.0, cells, 2, |x| vec![b1.at_x(x), b2.at_x(x)]).unwrap()
}

fn c1(speeds: &mut Vec<f64>) -> Outcome {
    let (a, b) = gaussian_pair();
    let t = Instant::now();
    let r = solve_distance(&linear_model(), &a, &b, &DistanceConfig::with_steps(16)).map_err(e)?;
    let secs = t.elapsed().as_secs_f64();
    let q = quantile_w2(&a, &b).map_err(e)?;
    let rel = (r.distance - q).abs() / q;
    if r.converged {
        speeds.push(r.speed_variation());
    }
    Ok((rel <= 0.02 && secs <= 60.0, format!("rel err {rel:.3e} (≤ 2e-2), {secs:.1} s (≤ 60 s)")))
}

fn c2(speeds: &mut Vec<f64>) -> Outcome {
    let model = MobilityModel::quadratic_decoupled(2);
    let (a, b) = decoupled_pair();
    let cfg = DistanceConfig::with_steps(8);
    let g = solve_distance(&model, &a, &b, &cfg).map_err(e)?;
    if g.converged {
        speeds.push(g.speed_variation());
    }
    let s = decoupled_sample(&model, &a, &b, &cfg).map_err(e)?;
    let v = run_diagnostics(&Bundle { decoupled: Some(s), ..Default::default() }, &["decoupled_sum_identity"]).map_err(e)?;
    Ok((v[0].pass, format!("relative defect {:.3e} (≤ 1e-3)", v[0].lhs)))
}

fn c3(speeds: &[f64]) -> Outcome {
    if speeds.len() < 2 {
        return Ok((false, "criterion 1 or 2 solve did not converge".into()));
    }
    let worst = speeds.iter().cloned().fold(0.0, f64::max);
    Ok((worst <= 0.05, format!("speed variation {} (≤ 5e-2)", sci(speeds))))
}

fn c4() -> Outcome {
    let model = MobilityModel::quadratic_decoupled(2);
    let cfg = DistanceConfig::with_steps(8);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut random = |base: Option<&GridDensity>| {
        let p: Vec<(f64, f64, f64)> = (0..2).map(|_| (rng.gen_range(-0.5..0.5), rng.gen_range(0.05..0.3), rng.gen_range(0.05..0.25))).collect();
        let g = GridDensity::from_fn(-1.0, 1.0, 24, 2, |x| {
            p.iter().enumerate().map(|(c, (m, w, a))| 0.3 + 0.1 * c as f64 + a * (-(x - m).powi(2) / w).exp()).collect()
        })
        .unwrap();
        match base {
            Some(b) => equalize(b, g),
            None => g,
        }
    };
    let (mut sym, mut tri) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for _ in 0..10 {
        let a = random(None);
        let b = random(Some(&a));
        let c = random(Some(&a));
        let ab = solve_distance(&model, &a, &b, &cfg).map_err(e)?;
        let ba = solve_distance(&model, &b, &a, &cfg).map_err(e)?;
        let bc = solve_distance(&model, &b, &c, &cfg).map_err(e)?;
        let ac = solve_distance(&model, &a, &c, &cfg).map_err(e)?;
        let tol = [&ab, &ba, &bc, &ac].iter().map(|g| g.solver_tol).fold(0.0, f64::max);
        sym = sym.max((ab.distance - ba.distance).abs() - 2.0 * tol);
        tri = tri.max(ac.distance - ab.distance - bc.distance - 3.0 * tol);
    }
    Ok((sym <= 0.0 && tri <= 0.0, format!("worst symmetry excess {sym:.3e}, triangle excess {tri:.3e} (both ≤ 0 after tolerance)")))
}

fn c5() -> Outcome {
    let plan = SamplePlan::default();
    let dec = MobilityModel::quadratic_decoupled(2);
    let vf = MobilityModel::new(StateSpace::Simplex { dim: 2 }, MobilityFamily::VolumeFilling).map_err(e)?;
    let radial = MobilityModel::new(StateSpace::Ball { dim: 2 }, MobilityFamily::RadialBall).map_err(e)?;
    let mut failures = vec![];
    let mut slowest: f64 = 0.0;
    let (pass, fail) = (Verdict::Pass, Verdict::Fail);
    let verdict = |r: matmob::Result<ConditionReport>| r.map(|r| r.verdict).map_err(e);
    let checks: Vec<(&str, Box<dyn Fn() -> Result<Verdict, String>>, Verdict)> = vec![
        ("decoupled C0", Box::new(|| Ok(check_c0(&dec, 400).verdict)), pass),
        ("decoupled C1", Box::new(|| verdict(check_c1(&dec, &plan))), pass),
        ("decoupled C2", Box::new(|| verdict(check_c2(&dec, &plan, false))), pass),
        ("decoupled C3", Box::new(|| verdict(check_c3(&dec, 400))), pass),
        ("decoupled strict C2'", Box::new(|| verdict(check_c2(&dec, &plan, true))), fail),
        ("volume-filling C1", Box::new(|| verdict(check_c1(&vf, &plan))), pass),
        ("volume-filling C2", Box::new(|| verdict(check_c2(&vf, &plan, false))), pass),
        ("volume-filling C3", Box::new(|| verdict(check_c3(&vf, 400))), pass),
        ("radial C1", Box::new(|| verdict(check_c1(&radial, &plan))), pass),
        ("radial C2", Box::new(|| verdict(check_c2(&radial, &plan, false))), pass),
        ("radial C3", Box::new(|| verdict(check_c3(&radial, 400))), pass),
        ("radial strict C2'", Box::new(|| verdict(check_c2(&radial, &plan, true))), pass),
    ];
    for (label, f, want) in &checks {
        let t = Instant::now();
        let got = f();
        slowest = slowest.max(t.elapsed().as_secs_f64());
        if got.as_ref() != Ok(want) {
            failures.push(format!("{label}: {got:?}"));
        }
    }
    let mut found = None;
    for eps in [0.2, 0.1, 0.05, 0.02, 0.01] {
        let m = MobilityModel::new(StateSpace::unit_cube(2), MobilityFamily::PerturbedDecoupled { epsilon: eps }).map_err(e)?;
        let t = Instant::now();
        let v = check_c2(&m, &plan, true).map_err(e)?.verdict;
        slowest = slowest.max(t.elapsed().as_secs_f64());
        if v == Verdict::Pass {
            found = Some(eps);
            break;
        }
    }
    if found.is_none() {
        failures.push("perturbed strict C2' fails for every ε".into());
    }
    let coupled = ScalarField::parse("z1^2 + z2^2 + z1*z2").map_err(e)?;
    let sep = ScalarField::parse("z1^2 + z2^2").map_err(e)?;
    let h = ScalarField::parse("z1*log(z1) + (1-z1)*log(1-z1) + z2*log(z2) + (1-z2)*log(1-z2)").map_err(e)?;
    for (label, f, want) in [("McCann coupled", &coupled, fail), ("McCann f = h", &h, pass), ("McCann separable", &sep, pass)] {
        let t = Instant::now();
        let got = verdict(check_mccann(&dec, f, &plan));
        slowest = slowest.max(t.elapsed().as_secs_f64());
        if got != Ok(want) {
            failures.push(format!("{label}: {got:?}"));
        }
    }
    let ok = failures.is_empty() && slowest <= 30.0;
    Ok((ok, format!("strict pass at ε = {found:?}, slowest check {slowest:.1} s (≤ 30 s), mismatches {failures:?}")))
}

fn c6() -> Outcome {
    let dec = MobilityModel::quadratic_decoupled(2);
    let plan = SamplePlan { points: PointScheme::UniformGrid { per_axis: 6 }, directions: 8, margin: 1e-3 };
    let lcf = lambda_closed_form(&dec, 1.0, 1.0).ok_or("no closed form")?;
    let v = check_potential_convexity(&dec, 1.0, 1.0, lcf, &plan).map_err(e)?.verdict;
    let est = estimate_lambda(&dec, 1.0, 1.0, &plan).map_err(e)?;
    Ok((v == Verdict::Pass && est.sampled >= lcf, format!("closed form {lcf:.4} gives {v:?}, estimate {:.4} ≥ closed form", est.sampled)))
}

fn c7() -> Outcome {
    let model = MobilityModel::quadratic_decoupled(2);
    let h = ScalarField::parse("z1*log(z1) + (1-z1)*log(1-z1) + z2*log(z2) + (1-z2)*log(1-z2)").map_err(e)?;
    let spec = EnergySpec { f: h, c_f: 4.0, ..EnergySpec::quadratic(2, vec![0.5, 0.5], EntropyCase::B) };
    let mu0 = GridDensity::from_fn(-3.0, 3.0, 128, 2, |x| vec![0.4 + 0.3 * (-x * x / 0.5).exp(), 0.6 - 0.3 * (-(x - 0.3).powi(2) / 0.3).exp()]).map_err(e)?;
    let fd = fd_solve(&model, &spec, &mu0, 0.05, &FdConfig::default()).map_err(e)?;
    let heat = heat_solve(&mu0, 0.05).map_err(e)?;
    let rel = fd.snapshots.last().unwrap().l2_distance(&heat) / heat.l2_norm();
    Ok((rel <= 1e-3, format!("relative L2 error {rel:.3e} (≤ 1e-3)")))
}

fn c8_and_9() -> (Outcome, Outcome) {
    let r = run8();
    let mu0 = run8_initial(64);
    let t = Instant::now();
    let traj = match jko_run(&r.model, &r.spec, &mu0, 0.0125, 0.1, &JkoConfig::default()) {
        Ok(v) => v,
        Err(err) => return (Err(e(&err)), Err(e(err))),
    };
    let fd = match fd_solve(&r.model, &r.spec, &mu0, 0.1, &FdConfig::default()) {
        Ok(v) => v,
        Err(err) => return (Err(e(&err)), Err(e(err))),
    };
    let secs = t.elapsed().as_secs_f64();
    let (mut num, mut den) = (0.0, 0.0);
    for j in 0..400 {
        let s = (j as f64 + 0.5) / 400.0 * 0.1;
        let (a, b) = (traj.at(s), fd.at(s));
        num += a.l2_distance(&b).powi(2);
        den += b.l2_norm().powi(2);
    }
    let rel = (num / den).sqrt();
    let c8 = Ok((rel <= 0.05 && secs <= 600.0, format!("space-time relative discrepancy {rel:.3e} (≤ 5e-2), {secs:.1} s")));

    let names = ["energy_monotone", "telescoping_distance", "addreg_dissipation", "introapriori_dissipation", "moment_bound"];
    let b = Bundle { model: Some(&r.model), spec: Some(&r.spec), jko: Some(&traj), fd: Some(&fd), ..Default::default() };
    let c9 = run_diagnostics(&b, &names).map_err(e).map(|vs| {
        let m0 = mu0.mass();
        let drift = traj
            .iterates
            .iter()
            .chain(&fd.snapshots)
            .map(|m| m.mass().iter().zip(&m0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        let ok = vs.iter().all(|v| v.pass) && drift <= 1e-10;
        let detail: Vec<String> = vs.iter().map(|v| format!("{} {:?}", v.name, v.status)).collect();
        (ok, format!("{}; mass drift {drift:.1e} (≤ 1e-10)", detail.join(", ")))
    });
    (c8, c9)
}

fn c10() -> Outcome {
    let r = run8();
    let mu0 = run8_initial(64);
    let samples = [1e-3, 4e-3].iter().map(|&d| smoothing_sample(&r.model, &mu0, d, &DistanceConfig::default())).collect::<Result<Vec<_>, _>>().map_err(e)?;
    let v = &run_diagnostics(&Bundle { smoothing: samples, ..Default::default() }, &["smooth_approx_bound"]).map_err(e)?[0];
    Ok((v.pass, format!("worst δ: W² {:.4e} ≤ {:.4e} + {:.1e}", v.lhs, v.rhs, v.slack)))
}

fn c11() -> Outcome {
    let (a, b) = gaussian_pair();
    let h = ScalarField::parse("z1*log(z1)").map_err(e)?;
    let model = MobilityModel::new(StateSpace::cuboid(vec![0.0], vec![10.0]).unwrap(), MobilityFamily::InducedByH { h }).map_err(e)?.exempt_c3();
    let (before, after) = wm_contraction_probe(&model, &a, &b, 0.01, &DistanceConfig::with_steps(16)).map_err(e)?;
    Ok((after <= 1.02 * before, format!("d_after/d_before = {:.4} (≤ 1.02)", after / before)))
}

fn c12() -> Outcome {
    let r = run8();
    let tf = TestFunctions::standard(-1.0, 1.0, 0.1);
    let mut residuals = vec![];
    for f in [1usize, 2, 4] {
        let cfg = JkoConfig { inner_steps: 4 * f, ..JkoConfig::default() };
        let traj = jko_run(&r.model, &r.spec, &run8_initial(64 * f), 0.0125 / f as f64, 0.1, &cfg).map_err(e)?;
        residuals.push(weak_residual_jko(&r.model, &r.spec, &traj, &tf));
    }
    let v = &run_diagnostics(&Bundle { weak_residuals: residuals.clone(), ..Default::default() }, &["weak_form_residual"]).map_err(e)?[0];
    Ok((v.pass, format!("residuals {}", sci(&residuals))))
}

#[test]
fn acceptance_criteria() {
    let mut speeds = vec![];
    let mut results: Vec<(usize, Outcome)> = vec![(1, c1(&mut speeds)), (2, c2(&mut speeds))];
    results.push((3, c3(&speeds)));
    results.push((4, c4()));
    results.push((5, c5()));
    results.push((6, c6()));
    results.push((7, c7()));
    let (r8, r9) = c8_and_9();
    results.push((8, r8));
    results.push((9, r9));
    results.push((10, c10()));
    results.push((11, c11()));
    results.push((12, c12()));
    let mut failed = vec![];
    for (k, r) in &results {
        let (ok, msg) = match r {
            Ok((ok, msg)) => (*ok, msg.clone()),
            Err(err) => (false, format!("error: {err}")),
        };
        println!("criterion {k:>2}: {} {msg}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            failed.push(*k);
        }
    }
    assert!(failed.is_empty(), "failed criteria {failed:?}");
}
