//! Sampling certificates for the structural conditions on a mobility and an energy density.
//!
//! A `Pass` only means that no violation was found at the sampled resolution.

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::linalg::{mat_mul, mat_vec, sym_eig_range};
use crate::mobility::{MobilityJet, MobilityModel, ScalarMobility};
use crate::space::StateSpace;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PointScheme {
    UniformGrid { per_axis: usize },
    LowDiscrepancy { count: usize, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplePlan {
    pub points: PointScheme,
    pub directions: usize,
    /// Minimum interior distance of sampled points.
    pub margin: f64,
}

impl Default for SamplePlan {
    fn default() -> Self {
        SamplePlan { points: PointScheme::LowDiscrepancy { count: 2000, seed: 0 }, directions: 64, margin: 1e-3 }
    }
}

impl SamplePlan {
    pub fn validate(&self) -> Result<()> {
        let ok = match self.points {
            PointScheme::UniformGrid { per_axis } => per_axis >= 1,
            PointScheme::LowDiscrepancy { count, .. } => count >= 1,
        };
        if !ok || self.directions == 0 || !(self.margin > 0.0) {
            return Err(Error::Input("sample plan needs positive counts and margin".into()));
        }
        Ok(())
    }

    pub fn grid(per_axis: usize, directions: usize) -> Self {
        SamplePlan { points: PointScheme::UniformGrid { per_axis }, directions, margin: 1e-3 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Pass,
    Inconclusive,
    Fail,
}

impl Verdict {
    pub fn exit_code(self) -> i32 {
        match self {
            Verdict::Pass => 0,
            Verdict::Inconclusive => 1,
            Verdict::Fail => 2,
        }
    }

    fn worse(self, o: Verdict) -> Verdict {
        use Verdict::*;
        match (self, o) {
            (Fail, _) | (_, Fail) => Fail,
            (Inconclusive, _) | (_, Inconclusive) => Inconclusive,
            _ => Pass,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub z: Vec<f64>,
    pub zeta: Option<Vec<f64>>,
    pub v: Option<Vec<f64>>,
    pub beta: Option<Vec<f64>>,
    pub q1: Option<Vec<f64>>,
    pub q2: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub condition: String,
    pub verdict: Verdict,
    /// Smallest sampled value of the quantity required to be nonnegative.
    pub worst_value: f64,
    pub witness: Option<Witness>,
    pub samples_checked: usize,
    /// Parameter found by searches (`λ`, `K`, `ε`), if any.
    pub parameter: Option<f64>,
    pub note: String,
}

const PASS_TOL: f64 = 1e-9;
const FAIL_TOL: f64 = 1e-6;
/// Relative definiteness margin for (C2′): `λ_max(D²M[ζ,ζ]) ≤ −STRICT_MARGIN·ρ`.
pub const STRICT_MARGIN: f64 = 1e-8;

/// One sampled value `v` (required `≥ 0`) with its scale.
#[derive(Clone, Debug)]
struct Sample {
    value: f64,
    scale: f64,
    witness: Witness,
}

fn classify(value: f64, scale: f64) -> Verdict {
    if value < -FAIL_TOL * scale.max(1e-300) {
        Verdict::Fail
    } else if value < -PASS_TOL * (1.0 + scale) {
        Verdict::Inconclusive
    } else {
        Verdict::Pass
    }
}

fn reduce(condition: &str, samples: Vec<Sample>, resolution: &str) -> ConditionReport {
    let mut verdict = Verdict::Pass;
    let mut worst: Option<&Sample> = None;
    let mut worst_norm = f64::INFINITY;
    for s in &samples {
        verdict = verdict.worse(classify(s.value, s.scale));
        let norm = s.value / (1.0 + s.scale);
        if norm < worst_norm || worst.is_none() {
            worst_norm = norm;
            worst = Some(s);
        }
    }
    let (worst_value, witness) = match worst {
        Some(s) => (s.value, if verdict == Verdict::Pass { None } else { Some(s.witness.clone()) }),
        None => (f64::INFINITY, None),
    };
    let note = match verdict {
        Verdict::Pass => format!("no violation found at resolution {resolution}"),
        Verdict::Inconclusive => format!("violations within round-off tolerance at resolution {resolution}"),
        Verdict::Fail => format!("violation found at resolution {resolution}"),
    };
    ConditionReport {
        condition: condition.to_string(),
        verdict,
        worst_value,
        witness,
        samples_checked: samples.len(),
        parameter: None,
        note,
    }
}

const PRIMES: [u32; 8] = [2, 3, 5, 7, 11, 13, 17, 19];

fn radical_inverse(mut i: u64, base: u32) -> f64 {
    let b = base as f64;
    let mut inv = 1.0 / b;
    let mut r = 0.0;
    while i > 0 {
        r += (i % base as u64) as f64 * inv;
        i /= base as u64;
        inv /= b;
    }
    r
}

/// Interior sample points with interior distance at least the plan margin.
pub fn interior_points(space: &StateSpace, plan: &SamplePlan) -> Vec<Vec<f64>> {
    let n = space.dim();
    let (lo, hi) = space.bounding_box();
    let keep = |z: &Vec<f64>| space.interior_distance(z) >= plan.margin;
    match plan.points {
        PointScheme::UniformGrid { per_axis } => {
            let total = per_axis.pow(n as u32);
            (0..total)
                .map(|mut idx| {
                    (0..n)
                        .map(|j| {
                            let k = idx % per_axis;
                            idx /= per_axis;
                            lo[j] + (hi[j] - lo[j]) * (k as f64 + 0.5) / per_axis as f64
                        })
                        .collect()
                })
                .filter(keep)
                .collect()
        }
        PointScheme::LowDiscrepancy { count, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let shift: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
            let mut out = Vec::with_capacity(count);
            let mut i = 1u64;
            while out.len() < count && i < 1000 * count as u64 + 1000 {
                let z: Vec<f64> = (0..n)
                    .map(|j| {
                        let u = (radical_inverse(i, PRIMES[j % 8]) + shift[j]).fract();
                        lo[j] + (hi[j] - lo[j]) * u
                    })
                    .collect();
                if keep(&z) {
                    out.push(z);
                }
                i += 1;
            }
            out
        }
    }
}

/// Unit directions: `±1` for `n = 1`, an angle grid for `n = 2`, a Fibonacci sphere for
/// `n = 3`, seeded Gaussian directions otherwise.
pub fn directions(n: usize, count: usize) -> Vec<Vec<f64>> {
    match n {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..count)
            .map(|k| {
                let a = 2.0 * std::f64::consts::PI * k as f64 / count as f64;
                vec![a.cos(), a.sin()]
            })
            .collect(),
        3 => {
            let g = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            (0..count)
                .map(|k| {
                    let y = 1.0 - 2.0 * (k as f64 + 0.5) / count as f64;
                    let r = (1.0 - y * y).sqrt();
                    let th = g * k as f64;
                    vec![r * th.cos(), y, r * th.sin()]
                })
                .collect()
        }
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
            (0..count)
                .map(|_| {
                    let v: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
                    let s = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                    v.iter().map(|x| x / s).collect()
                })
                .collect()
        }
    }
}

fn resolution(points: usize, dirs: usize, margin: f64) -> String {
    format!("{points} points × {dirs} directions, margin {margin:e}")
}

fn sym(n: usize, a: &[f64]) -> Vec<f64> {
    let mut s = a.to_vec();
    for i in 0..n {
        for j in 0..n {
            s[i * n + j] = 0.5 * (a[i * n + j] + a[j * n + i]);
        }
    }
    s
}

/// Minimum eigenpair of a symmetric matrix.
fn min_eigvec(n: usize, a: &[f64]) -> (f64, Vec<f64>) {
    let m = DMatrix::from_row_slice(n, n, a);
    let e = m.symmetric_eigen();
    let mut k = 0;
    for j in 1..n {
        if e.eigenvalues[j] < e.eigenvalues[k] {
            k = j;
        }
    }
    (e.eigenvalues[k], e.eigenvectors.column(k).iter().cloned().collect())
}

fn spectral_radius(n: usize, a: &[f64]) -> f64 {
    let (lo, hi) = sym_eig_range(n, a);
    lo.abs().max(hi.abs())
}

/// (C0): `M` finite on `S` and continuous up to `∂S`, checked by comparing boundary values
/// with values at interior points at distance `10⁻⁶`.
pub fn check_c0(model: &MobilityModel, boundary_samples: usize) -> ConditionReport {
    let pts = boundary_points(&model.space, boundary_samples);
    let samples: Vec<Sample> = pts
        .par_iter()
        .map(|z| {
            let mb = model.m_vec(z);
            let zi = model.space.push_inside(z, 1e-6);
            let mi = model.m_vec(&zi);
            let scale = mb.iter().chain(&mi).fold(0.0f64, |a, v| a.max(v.abs()));
            let jump = mb.iter().zip(&mi).map(|(a, b)| (a - b).abs()).fold(0.0f64, f64::max);
            let finite = mb.iter().chain(&mi).all(|v| v.is_finite());
            // a jump of order the displacement is continuity; demand ≤ 1e-3 relative
            let value = if finite { 1e-3 * (1.0 + scale) - jump } else { -1.0 };
            Sample { value, scale: 1.0 + scale, witness: Witness { z: z.clone(), ..Default::default() } }
        })
        .collect();
    reduce("C0", samples, &format!("{} boundary points", pts.len()))
}

/// (C1): `M(z)` symmetric positive definite on sampled interior points.
pub fn check_c1(model: &MobilityModel, plan: &SamplePlan) -> Result<ConditionReport> {
    plan.validate()?;
    let pts = interior_points(&model.space, plan);
    let n = model.dim();
    let samples: Vec<Sample> = pts
        .par_iter()
        .map(|z| {
            let m = model.m_vec(z);
            let asym = (0..n * n).map(|k| (m[k] - m[(k % n) * n + k / n]).abs()).fold(0.0, f64::max);
            let (lo, v) = min_eigvec(n, &sym(n, &m));
            let scale = spectral_radius(n, &m);
            let value = if lo.is_finite() { lo - asym - 2.0 * PASS_TOL * (1.0 + scale) } else { -1.0 };
            Sample { value, scale, witness: Witness { z: z.clone(), v: Some(v), ..Default::default() } }
        })
        .collect();
    Ok(reduce("C1", samples, &resolution(pts.len(), 1, plan.margin)))
}

/// (C2) / (C2′): `D²M(z)[ζ,ζ]` negative semidefinite / definite. The strict form demands
/// `λ_max ≤ −10⁻⁴·ρ`, `ρ` the spectral radius; an identically vanishing form fails it.
pub fn check_c2(model: &MobilityModel, plan: &SamplePlan, strict: bool) -> Result<ConditionReport> {
    plan.validate()?;
    let pts = interior_points(&model.space, plan);
    let dirs = directions(model.dim(), plan.directions);
    Ok(check_c2_on(model, &pts, &dirs, strict, plan.margin))
}

/// (C2) / (C2′) on explicit points and (not necessarily unit) directions.
pub fn check_c2_on(model: &MobilityModel, pts: &[Vec<f64>], dirs: &[Vec<f64>], strict: bool, margin: f64) -> ConditionReport {
    let n = model.dim();
    let samples: Vec<Sample> = pts
        .par_iter()
        .flat_map_iter(|z| {
            let jet = model.jet(z);
            let mnorm = spectral_radius(n, &jet.m);
            dirs.iter().map(move |zeta| {
                let d2 = jet_d2m(&jet, zeta, zeta);
                let neg: Vec<f64> = d2.iter().map(|v| -v).collect();
                let (lo, v) = min_eigvec(n, &sym(n, &neg));
                let rho = spectral_radius(n, &d2);
                let value = if !strict {
                    lo
                } else if rho <= 1e-12 * (1.0 + mnorm) {
                    -(1.0 + mnorm)
                } else {
                    lo - STRICT_MARGIN * rho
                };
                Sample {
                    value,
                    scale: rho.max(1e-12 * (1.0 + mnorm)),
                    witness: Witness { z: z.clone(), zeta: Some(zeta.clone()), v: Some(v), ..Default::default() },
                }
            })
        })
        .collect();
    let mut rep = reduce(if strict { "C2'" } else { "C2" }, samples, &resolution(pts.len(), dirs.len(), margin));
    // definiteness has no round-off band: the margin is the tolerance
    if strict && rep.worst_value < 0.0 && rep.verdict != Verdict::Fail {
        rep.verdict = Verdict::Fail;
        rep.note = format!("largest eigenvalue not below −{STRICT_MARGIN:e}·ρ at resolution {}", resolution(pts.len(), dirs.len(), margin));
    }
    rep
}

/// Deterministic boundary points: faces of cuboids, facets of simplices, spheres.
pub fn boundary_points(space: &StateSpace, count: usize) -> Vec<Vec<f64>> {
    let n = space.dim();
    let plan = SamplePlan { points: PointScheme::LowDiscrepancy { count: count.max(1), seed: 17 }, directions: 1, margin: 1e-12 };
    let raw = interior_points(space, &plan);
    let mut out = vec![];
    for (k, z) in raw.iter().enumerate() {
        let p = match space {
            StateSpace::Cuboid { lower, upper } => {
                let j = k % n;
                let mut p = z.clone();
                p[j] = if (k / n) % 2 == 0 { lower[j] } else { upper[j] };
                p
            }
            StateSpace::Simplex { .. } => {
                let j = k % (n + 1);
                let mut p = z.clone();
                if j < n {
                    p[j] = 0.0;
                } else {
                    let s: f64 = p.iter().sum();
                    p.iter_mut().for_each(|v| *v /= s);
                }
                p
            }
            StateSpace::Ball { .. } => {
                let s = z.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
                z.iter().map(|v| v / s).collect()
            }
        };
        out.push(p);
    }
    // corners and axis points
    match space {
        StateSpace::Cuboid { lower, upper } if n <= 8 => {
            for mask in 0..(1usize << n) {
                out.push((0..n).map(|j| if mask >> j & 1 == 1 { upper[j] } else { lower[j] }).collect());
            }
        }
        StateSpace::Simplex { .. } => {
            out.push(vec![0.0; n]);
            for j in 0..n {
                let mut e = vec![0.0; n];
                e[j] = 1.0;
                out.push(e);
            }
        }
        StateSpace::Ball { .. } => {
            for j in 0..n {
                for s in [-1.0, 1.0] {
                    let mut e = vec![0.0; n];
                    e[j] = s;
                    out.push(e);
                }
            }
        }
        _ => {}
    }
    out.retain(|p| space.contains(p).unwrap_or(false));
    out
}

/// (C3): `M(z)ν = 0` for boundary points and their outward normals.
pub fn check_c3(model: &MobilityModel, boundary_samples: usize) -> Result<ConditionReport> {
    if model.c3_exempt {
        return Err(Error::Input("model is flagged c3_exempt".into()));
    }
    let pts = boundary_points(&model.space, boundary_samples);
    let n = model.dim();
    let samples: Vec<Sample> = pts
        .par_iter()
        .flat_map_iter(|z| {
            let m = model.m_vec(z);
            let normals = model.space.boundary_normals(z, 1e-12).unwrap_or_default();
            normals.into_iter().map(move |nu| {
                let r = mat_vec(n, &m, &nu);
                let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
                Sample {
                    value: 1e-8 - norm,
                    scale: 1.0,
                    witness: Witness { z: z.clone(), v: Some(nu), ..Default::default() },
                }
            })
        })
        .collect();
    let mut rep = reduce("C3", samples, &format!("{} boundary points", pts.len()));
    // exact threshold: any ‖Mν‖ > 1e-8 is a failure
    if rep.worst_value < 0.0 {
        rep.verdict = Verdict::Fail;
        rep.note = format!("‖M(z)ν‖ = {:e} exceeds 1e-8", 1e-8 - rep.worst_value);
    }
    Ok(rep)
}

/// `∂_k L` for `L = M ∇²f`, by central differences of the product.
fn dl_partials(model: &MobilityModel, f: &ScalarField, z: &[f64]) -> Vec<Vec<f64>> {
    let n = z.len();
    let lmat = |p: &[f64]| -> Vec<f64> {
        let (_, _, h) = f.grad_hess(p, 0.0);
        mat_mul(n, &model.m_vec(p), &h)
    };
    let zn = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    (0..n)
        .map(|k| {
            let mut s = 1e-5 * zn.max(1.0);
            let mut e = vec![0.0; n];
            e[k] = 1.0;
            let shift = |t: f64| -> Vec<f64> { z.iter().zip(&e).map(|(a, b)| a + t * b).collect() };
            while model.space.interior_distance(&shift(s)) <= 0.0 || model.space.interior_distance(&shift(-s)) <= 0.0 {
                s *= 0.5;
            }
            let (a, b) = (lmat(&shift(s)), lmat(&shift(-s)));
            a.iter().zip(&b).map(|(x, y)| (x - y) / (2.0 * s)).collect()
        })
        .collect()
}

/// The symmetrized `2n×2n` matrix of the multi-component McCann form in `(v, β)`.
pub fn mccann_matrix(model: &MobilityModel, f: &ScalarField, z: &[f64], zeta: &[f64]) -> Vec<f64> {
    McCannPoint::new(model, f, z).matrix(zeta)
}

/// Per-point data of the McCann form: jet of `M`, `L = M∇²f` and `∂_k L`.
struct McCannPoint {
    jet: MobilityJet,
    l: Vec<f64>,
    parts: Vec<Vec<f64>>,
}

impl McCannPoint {
    fn new(model: &MobilityModel, f: &ScalarField, z: &[f64]) -> Self {
        let n = z.len();
        let jet = model.jet(z);
        let (_, _, hf) = f.grad_hess(z, 0.0);
        let l = mat_mul(n, &jet.m, &hf);
        McCannPoint { jet, l, parts: dl_partials(model, f, z) }
    }

    fn matrix(&self, zeta: &[f64]) -> Vec<f64> {
        let n = self.jet.n;
        let m = &self.jet.m;
        let l = &self.l;
        let parts = &self.parts;
        let lz = mat_vec(n, l, zeta);
        let dm = jet_dm(&self.jet, zeta);
        let dm_lz = jet_dm(&self.jet, &lz);
        let d2 = jet_d2m(&self.jet, zeta, &lz);
        let mut dl = vec![0.0; n * n];
        for k in 0..n {
            for j in 0..n * n {
                dl[j] += zeta[k] * parts[k][j];
            }
        }
        // C has columns ∂_kL ζ
        let mut cmat = vec![0.0; n * n];
        for k in 0..n {
            let col = mat_vec(n, &parts[k], zeta);
            for i in 0..n {
                cmat[i * n + k] = col[i];
            }
        }
        let vv: Vec<f64> = {
            let a = mat_mul(n, &dl, &dm);
            let b = mat_mul(n, &cmat, &dm);
            (0..n * n).map(|j| -0.5 * d2[j] + a[j] - b[j]).collect()
        };
        let vb: Vec<f64> = {
            let a = mat_mul(n, &dl, m);
            let b = mat_mul(n, &cmat, m);
            (0..n * n).map(|j| a[j] - b[j]).collect()
        };
        let bv: Vec<f64> = {
            let a = mat_mul(n, l, &dm);
            (0..n * n).map(|j| a[j] - dm_lz[j]).collect()
        };
        let bb = mat_mul(n, l, m);
        let w = 2 * n;
        let mut q = vec![0.0; w * w];
        for i in 0..n {
            for j in 0..n {
                q[i * w + j] = vv[i * n + j];
                q[i * w + n + j] = vb[i * n + j];
                q[(n + i) * w + j] = bv[i * n + j];
                q[(n + i) * w + n + j] = bb[i * n + j];
            }
        }
        sym(w, &q)
    }
}

/// The multi-component McCann condition for the energy density `f`.
pub fn check_mccann(model: &MobilityModel, f: &ScalarField, plan: &SamplePlan) -> Result<ConditionReport> {
    plan.validate()?;
    let n = model.dim();
    if f.z_arity() > n || f.uses_x() {
        return Err(Error::Input(format!("f may only use z1..z{n}")));
    }
    let pts = interior_points(&model.space, plan);
    let dirs = directions(n, plan.directions);
    Ok(check_mccann_on(model, f, &pts, &dirs, plan.margin))
}

/// The McCann condition on explicit points and directions.
pub fn check_mccann_on(model: &MobilityModel, f: &ScalarField, pts: &[Vec<f64>], dirs: &[Vec<f64>], margin: f64) -> ConditionReport {
    let n = model.dim();
    let samples: Vec<Sample> = pts
        .par_iter()
        .flat_map_iter(|z| {
            let point = McCannPoint::new(model, f, z);
            dirs.iter().map(move |zeta| {
                let q = point.matrix(zeta);
                let (lo, vec) = min_eigvec(2 * n, &q);
                let scale = spectral_radius(2 * n, &q);
                Sample {
                    value: if lo.is_finite() { lo } else { -1.0 },
                    scale,
                    witness: Witness {
                        z: z.clone(),
                        zeta: Some(zeta.clone()),
                        v: Some(vec[..n].to_vec()),
                        beta: Some(vec[n..].to_vec()),
                        ..Default::default()
                    },
                }
            })
        })
        .collect();
    reduce("McCann", samples, &resolution(pts.len(), dirs.len(), margin))
}

/// The `n×n` matrix of the potential-convexity form in `v`, without the `−λM` term.
pub fn potential_form(model: &MobilityModel, alpha: f64, z: &[f64], zeta: &[f64], q1: &[f64], q2: &[f64]) -> Vec<f64> {
    let jet = model.jet(z);
    let t = zeta.iter().map(|v| v * v).sum::<f64>().sqrt();
    if t == 0.0 {
        return PotentialParts::new(&jet, alpha, zeta, q1, q2).at(0.0);
    }
    let dir: Vec<f64> = zeta.iter().map(|v| v / t).collect();
    PotentialParts::new(&jet, alpha, &dir, q1, q2).at(t)
}

fn jet_dm(jet: &MobilityJet, a: &[f64]) -> Vec<f64> {
    let nn = jet.n * jet.n;
    let mut out = vec![0.0; nn];
    for (k, ak) in a.iter().enumerate() {
        if *ak != 0.0 {
            for (o, v) in out.iter_mut().zip(jet.dm_block(k)) {
                *o += ak * v;
            }
        }
    }
    out
}

fn jet_d2m(jet: &MobilityJet, a: &[f64], b: &[f64]) -> Vec<f64> {
    let nn = jet.n * jet.n;
    let mut out = vec![0.0; nn];
    for (k, ak) in a.iter().enumerate() {
        for (l, bl) in b.iter().enumerate() {
            let w = ak * bl;
            if w != 0.0 {
                for (o, v) in out.iter_mut().zip(jet.d2m_block(k, l)) {
                    *o += w * v;
                }
            }
        }
    }
    out
}

/// The form as `t²A₂ + tA₁ + A₀` along `ζ = t·dir`.
struct PotentialParts {
    a2: Vec<f64>,
    a1: Vec<f64>,
    a0: Vec<f64>,
}

impl PotentialParts {
    fn new(jet: &MobilityJet, alpha: f64, dir: &[f64], q1: &[f64], q2: &[f64]) -> Self {
        let n = jet.n;
        let m = &jet.m;
        let mq1 = mat_vec(n, m, q1);
        let mq2 = mat_vec(n, m, q2);
        let d2zz = jet_d2m(jet, dir, dir);
        let d2zq = jet_d2m(jet, dir, &mq1);
        // vᵀD²M[ζ, Mv]q¹ = vᵀ B v with B = [T_1 q¹ … T_n q¹] M, T_k = D²M[ζ, e_k]
        let mut tq = vec![0.0; n * n];
        let mut e = vec![0.0; n];
        for k in 0..n {
            e[k] = 1.0;
            let col = mat_vec(n, &jet_d2m(jet, dir, &e), q1);
            e[k] = 0.0;
            for a in 0..n {
                tq[a * n + k] = col[a];
            }
        }
        let b = mat_mul(n, &tq, m);
        let a1: Vec<f64> = (0..n * n).map(|j| -0.5 * d2zq[j] + b[j]).collect();
        PotentialParts {
            a2: sym(n, &d2zz.iter().map(|v| -0.5 * alpha * v).collect::<Vec<_>>()),
            a1: sym(n, &a1),
            a0: sym(n, &jet_dm(jet, &mq2)),
        }
    }

    fn at(&self, t: f64) -> Vec<f64> {
        (0..self.a0.len()).map(|j| t * t * self.a2[j] + t * self.a1[j] + self.a0[j]).collect()
    }
}

fn q_samples(n: usize, r: f64) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; n]];
    if r > 0.0 {
        for d in directions(n, 16) {
            out.push(d.iter().map(|v| v * r).collect());
        }
        if n > 1 {
            for j in 0..n {
                for s in [-1.0, 1.0] {
                    let mut e = vec![0.0; n];
                    e[j] = s * r;
                    out.push(e);
                }
            }
        }
    }
    out
}

/// Smallest generalized eigenvalue `λ_min(M^{-1/2} A M^{-1/2})` (largest admissible `λ`).
fn generalized_min(n: usize, a: &[f64], m: &[f64]) -> f64 {
    if n == 1 {
        return a[0] / m[0];
    }
    if n == 2 {
        // det(A − λM) = 0
        let dm = m[0] * m[3] - m[1] * m[1];
        let b = a[0] * m[3] + a[3] * m[0] - 2.0 * a[1] * m[1];
        let c = a[0] * a[3] - a[1] * a[1];
        let disc = (b * b - 4.0 * dm * c).max(0.0).sqrt();
        // stable smaller root
        return if b >= 0.0 {
            if b + disc > 0.0 { 2.0 * c / (b + disc) } else { 0.0 }
        } else {
            (b - disc) / (2.0 * dm)
        };
    }
    let mm = DMatrix::from_row_slice(n, n, m);
    let e = mm.symmetric_eigen();
    let mut s = DMatrix::zeros(n, n);
    for k in 0..n {
        let lam = e.eigenvalues[k].max(1e-300);
        let v = e.eigenvectors.column(k);
        s += v * v.transpose() / lam.sqrt();
    }
    let am = DMatrix::from_row_slice(n, n, a);
    let g = &s * am * &s;
    let g = (&g + g.transpose()) * 0.5;
    g.symmetric_eigenvalues().min()
}

/// Worst sample over `|ζ|` for fixed direction, `q¹`, `q²`: `(value, t)` minimizing `eval(t)`.
fn minimize_over_magnitude(eval: impl Fn(f64) -> f64, t_max: f64) -> (f64, f64) {
    let grid = 24;
    let mut best = (eval(0.0), 0.0);
    let mut bi = 0;
    for k in 1..=grid {
        let t = t_max * k as f64 / grid as f64;
        let v = eval(t);
        if v < best.0 {
            best = (v, t);
            bi = k;
        }
    }
    let h = t_max / grid as f64;
    let (mut a, mut b) = (((bi as f64) - 1.0).max(0.0) * h, (bi as f64 + 1.0) * h);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..30 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if eval(c) < eval(d) {
            b = d;
        } else {
            a = c;
        }
    }
    let t = 0.5 * (a + b);
    let v = eval(t);
    if v < best.0 {
        (v, t)
    } else {
        best
    }
}

struct PotentialSample {
    lambda_max: f64,
    witness: Witness,
    scale: f64,
}

fn potential_samples(model: &MobilityModel, alpha: f64, r: f64, plan: &SamplePlan) -> Vec<PotentialSample> {
    let n = model.dim();
    let pts = interior_points(&model.space, plan);
    let dirs = directions(n, plan.directions);
    let qs = q_samples(n, r);
    pts.par_iter()
        .flat_map_iter(|z| {
            let jet = model.jet(z);
            let m = jet.m.clone();
            let mnorm = spectral_radius(n, &m);
            let t_max = 4.0 * (1.0 + r * mnorm / alpha);
            let mut out = Vec::with_capacity(dirs.len() * qs.len() * qs.len());
            for dir in &dirs {
                for q1 in &qs {
                    for q2 in &qs {
                        let parts = PotentialParts::new(&jet, alpha, dir, q1, q2);
                        let eval = |t: f64| generalized_min(n, &parts.at(t), &m);
                        let (val, t) = minimize_over_magnitude(eval, t_max);
                        out.push(PotentialSample {
                            lambda_max: val,
                            scale: mnorm,
                            witness: Witness {
                                z: z.clone(),
                                zeta: Some(dir.iter().map(|v| v * t).collect()),
                                q1: Some(q1.clone()),
                                q2: Some(q2.clone()),
                                ..Default::default()
                            },
                        });
                    }
                }
            }
            out
        })
        .collect()
}

/// The potential-convexity condition at a given `λ`, over `|q¹|, |q²| ≤ R`.
pub fn check_potential_convexity(model: &MobilityModel, alpha: f64, r: f64, lambda: f64, plan: &SamplePlan) -> Result<ConditionReport> {
    if !(alpha > 0.0) || !(r >= 0.0) {
        return Err(Error::Input("need α > 0 and R ≥ 0".into()));
    }
    plan.validate()?;
    let n = model.dim();
    let raw = potential_samples(model, alpha, r, plan);
    let count = raw.len();
    let samples = raw
        .into_iter()
        .map(|s| {
            // A − λM ⪰ 0 ⟺ λ ≤ λ_gen; value in units of M
            let m = model.m_vec(&s.witness.z);
            let (mlo, _) = sym_eig_range(n, &m);
            Sample { value: (s.lambda_max - lambda) * mlo.max(0.0), scale: 1.0 + s.scale * (1.0 + lambda.abs()), witness: s.witness }
        })
        .collect();
    let mut rep = reduce("potential-convexity", samples, &format!("{count} samples, margin {:e}", plan.margin));
    rep.parameter = Some(lambda);
    Ok(rep)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaEstimate {
    /// Largest `λ` passing at every sample (minimum of per-sample generalized eigenvalues).
    pub sampled: f64,
    /// `−max_j ‖m_j‖_{C²} R (‖m_j‖_{C²} R/(8α) + 1)` for fully decoupled models.
    pub closed_form: Option<f64>,
    pub witness: Option<Witness>,
}

/// `λ_cf` for a fully decoupled model, with `‖m‖_{C²} = max(sup|m|, sup|m'|, sup|m''|)`.
pub fn lambda_closed_form(model: &MobilityModel, alpha: f64, r: f64) -> Option<f64> {
    let mobs = model.scalar_mobilities()?;
    let (lo, hi) = model.space.bounding_box();
    let worst = mobs
        .iter()
        .enumerate()
        .map(|(j, m)| {
            let c = m.c2_norm(lo[j], hi[j]);
            c * r * (c * r / (8.0 * alpha) + 1.0)
        })
        .fold(0.0, f64::max);
    Some(-worst)
}

pub fn estimate_lambda(model: &MobilityModel, alpha: f64, r: f64, plan: &SamplePlan) -> Result<LambdaEstimate> {
    if !(alpha > 0.0) || !(r >= 0.0) {
        return Err(Error::Input("need α > 0 and R ≥ 0".into()));
    }
    plan.validate()?;
    let samples = potential_samples(model, alpha, r, plan);
    let best = samples
        .iter()
        .min_by(|a, b| a.lambda_max.total_cmp(&b.lambda_max))
        .ok_or_else(|| Error::Input("no samples".into()))?;
    Ok(LambdaEstimate { sampled: best.lambda_max, closed_form: lambda_closed_form(model, alpha, r), witness: Some(best.witness.clone()) })
}

/// Smallest `K` in `k_grid` with `K M₀⁻¹ − M⁻¹ ≻ 0` at every sampled point.
pub fn check_diag_domination(model: &MobilityModel, reference: &MobilityModel, k_grid: &[f64], plan: &SamplePlan) -> Result<ConditionReport> {
    plan.validate()?;
    if model.space != reference.space {
        return Err(Error::Input("model and reference must share the state space".into()));
    }
    if reference.scalar_mobilities().is_none() {
        return Err(Error::Input("reference must be fully decoupled".into()));
    }
    let n = model.dim();
    let pts = interior_points(&model.space, plan);
    let mut grid = k_grid.to_vec();
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut last = None;
    for &k in &grid {
        let samples: Vec<Sample> = pts
            .par_iter()
            .map(|z| {
                let a = model.eval_m_inverse(z).unwrap();
                let b = reference.eval_m_inverse(z).unwrap();
                let ak: Vec<f64> = (0..n * n).map(|j| k * b[(j / n, j % n)] - a[(j / n, j % n)]).collect();
                let (lo, v) = min_eigvec(n, &sym(n, &ak));
                let scale = spectral_radius(n, &ak);
                Sample { value: lo - 2.0 * PASS_TOL * (1.0 + scale), scale, witness: Witness { z: z.clone(), v: Some(v), ..Default::default() } }
            })
            .collect();
        let mut rep = reduce("diag-domination", samples, &resolution(pts.len(), 1, plan.margin));
        rep.parameter = Some(k);
        if rep.verdict == Verdict::Pass {
            return Ok(rep);
        }
        last = Some(rep);
    }
    let mut rep = last.ok_or_else(|| Error::Input("empty K grid".into()))?;
    rep.verdict = Verdict::Fail;
    rep.parameter = None;
    rep.note = format!("no K in {grid:?} makes K M₀⁻¹ − M⁻¹ positive definite");
    Ok(rep)
}

/// Concave scalar mobility on `[l, r]`: positive inside, vanishing at both ends,
/// nonpositive second differences.
pub fn check_concavity_scalar(m: &ScalarMobility, l: f64, r: f64, samples: usize) -> ConditionReport {
    let k = samples.max(4);
    let h = (r - l) / k as f64;
    let vals: Vec<f64> = (0..=k).map(|i| m.eval(l + i as f64 * h, l, r)).collect();
    let scale = vals.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
    let mut out = vec![];
    for i in 1..k {
        out.push(Sample {
            value: vals[i],
            scale,
            witness: Witness { z: vec![l + i as f64 * h], ..Default::default() },
        });
        let d2 = (vals[i + 1] - 2.0 * vals[i] + vals[i - 1]) / (h * h);
        out.push(Sample { value: -d2, scale: scale / (h * h) * h * h + 1.0, witness: Witness { z: vec![l + i as f64 * h], ..Default::default() } });
    }
    for (i, s) in [(0usize, l), (k, r)] {
        out.push(Sample { value: -(vals[i].abs()) + 1e-9 * scale, scale, witness: Witness { z: vec![s], ..Default::default() } });
    }
    let mut rep = reduce("concavity", out, &format!("{k} subintervals"));
    // interior positivity is strict
    if vals[1..k].iter().any(|v| !(*v > 0.0)) {
        rep.verdict = Verdict::Fail;
    }
    rep
}
