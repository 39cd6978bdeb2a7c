//! Mobility families `M(z)`, their inducing potentials `h`, and exact
//! directional derivatives.

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::quad::gauss_legendre;
use crate::scalar::{HyperDual, Scalar};
use crate::space::StateSpace;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// A concave scalar mobility on the interval `[l, r]` of one cuboid axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ScalarMobility {
    /// `(s − l)(r − s)/(r − l)`.
    Quadratic,
    /// `s − l`; violates boundary degeneracy at `r`, so models using it must be `c3_exempt`.
    Linear,
    /// User expression in the scalar argument, written `z1`.
    Expr { m: ScalarField },
}

impl ScalarMobility {
    pub fn eval<T: Scalar>(&self, s: T, l: f64, r: f64) -> T {
        match self {
            ScalarMobility::Quadratic => (s - T::cst(l)) * (T::cst(r) - s) / T::cst(r - l),
            ScalarMobility::Linear => s - T::cst(l),
            ScalarMobility::Expr { m } => m.eval(&[s], T::cst(0.0)),
        }
    }

    /// `m, m', m''` at `s`.
    pub fn derivs(&self, s: f64, l: f64, r: f64) -> (f64, f64, f64) {
        let v = self.eval(HyperDual::variable(s, &[1.0, 1.0]), l, r);
        (v.re(), v.part(1), v.part(3))
    }

    /// Inducing potential `h` with `h'' = 1/m`; closed form where available.
    fn potential<T: Scalar>(&self, s: T, l: f64, r: f64) -> Option<T> {
        match self {
            ScalarMobility::Quadratic => Some(
                (s - T::cst(l)).xlnx() + (T::cst(r) - s).xlnx() - T::cst((r - l) * (r - l).ln()),
            ),
            ScalarMobility::Linear => Some((s - T::cst(l)).xlnx()),
            ScalarMobility::Expr { .. } => None,
        }
    }

    /// `h(s) = ∫_c^s (s − u)/m(u) du` with `c` the interval midpoint.
    fn potential_quadrature(&self, s: f64, l: f64, r: f64) -> (f64, f64) {
        let c = 0.5 * (l + r);
        let mut hv = 0.0;
        let mut dh = 0.0;
        let pieces = 64;
        for p in 0..pieces {
            let a = c + (s - c) * p as f64 / pieces as f64;
            let b = c + (s - c) * (p + 1) as f64 / pieces as f64;
            for (x, w) in gauss_legendre(a, b) {
                let m = self.eval(x, l, r);
                hv += w * (s - x) / m;
                dh += w / m;
            }
        }
        (hv, dh)
    }

    /// `sup` over the interval of `max(|m|, |m'|, |m''|)` by dense sampling.
    pub fn c2_norm(&self, l: f64, r: f64) -> f64 {
        let mut best: f64 = 0.0;
        let k = 2000;
        for i in 0..=k {
            let s = l + (r - l) * i as f64 / k as f64;
            let (m, dm, d2m) = self.derivs(s, l, r);
            best = best.max(m.abs()).max(dm.abs()).max(d2m.abs());
        }
        best
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MobilityFamily {
    FullyDecoupled { mobilities: Vec<ScalarMobility> },
    PerturbedDecoupled { epsilon: f64 },
    VolumeFilling,
    RadialBall,
    InducedByH { h: ScalarField },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DerivativeMode {
    Analytic,
    FiniteDifference { step: f64 },
}

impl Default for DerivativeMode {
    fn default() -> Self {
        DerivativeMode::Analytic
    }
}

fn default_margin() -> f64 {
    1e-9
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MobilityModel {
    pub space: StateSpace,
    pub family: MobilityFamily,
    #[serde(default)]
    pub derivative_mode: DerivativeMode,
    #[serde(default)]
    pub c3_exempt: bool,
    /// Interior clamp margin `ε_int`.
    #[serde(default = "default_margin")]
    pub interior_margin: f64,
}

/// `M`, all first partials `∂_k M` and second partials `∂_k∂_l M` at one point,
/// row-major `n×n` blocks.
#[derive(Clone, Debug)]
pub struct MobilityJet {
    pub n: usize,
    pub m: Vec<f64>,
    /// Block `k` at offset `k·n²`.
    pub dm: Vec<f64>,
    /// Block `(k,l)` at offset `(k·n + l)·n²`.
    pub d2m: Vec<f64>,
}

impl MobilityJet {
    pub fn dm_block(&self, k: usize) -> &[f64] {
        let nn = self.n * self.n;
        &self.dm[k * nn..(k + 1) * nn]
    }
    pub fn d2m_block(&self, k: usize, l: usize) -> &[f64] {
        let nn = self.n * self.n;
        let o = (k * self.n + l) * nn;
        &self.d2m[o..o + nn]
    }
}

fn to_mat(n: usize, v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(n, n, v)
}

impl MobilityModel {
    pub fn new(space: StateSpace, family: MobilityFamily) -> Result<Self> {
        let m = MobilityModel {
            space,
            family,
            derivative_mode: DerivativeMode::Analytic,
            c3_exempt: false,
            interior_margin: default_margin(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn with_mode(mut self, mode: DerivativeMode) -> Self {
        self.derivative_mode = mode;
        self
    }

    pub fn exempt_c3(mut self) -> Self {
        self.c3_exempt = true;
        self
    }

    /// Fully decoupled model with the quadratic mobility on every axis of `[0,1]ⁿ`.
    pub fn quadratic_decoupled(n: usize) -> Self {
        MobilityModel::new(
            StateSpace::unit_cube(n),
            MobilityFamily::FullyDecoupled { mobilities: vec![ScalarMobility::Quadratic; n] },
        )
        .expect("valid model")
    }

    pub fn validate(&self) -> Result<()> {
        self.space.validate()?;
        let n = self.space.dim();
        if !(self.interior_margin > 0.0) {
            return Err(Error::Input("interior_margin must be positive".into()));
        }
        if let DerivativeMode::FiniteDifference { step } = self.derivative_mode {
            if !(step > 0.0) {
                return Err(Error::Input("finite-difference step must be positive".into()));
            }
        }
        match (&self.family, &self.space) {
            (MobilityFamily::FullyDecoupled { mobilities }, StateSpace::Cuboid { .. }) => {
                if mobilities.len() != n {
                    return Err(Error::Input(format!(
                        "fully decoupled model needs {n} scalar mobilities, got {}",
                        mobilities.len()
                    )));
                }
                for m in mobilities {
                    if let ScalarMobility::Expr { m } = m {
                        if m.z_arity() > 1 || m.uses_x() {
                            return Err(Error::Input(
                                "scalar mobility expressions may only use z1".into(),
                            ));
                        }
                    }
                    if matches!(m, ScalarMobility::Linear) && !self.c3_exempt {
                        // allowed, but boundary degeneracy fails; callers flag c3_exempt
                    }
                }
            }
            (MobilityFamily::FullyDecoupled { .. }, _) => {
                return Err(Error::Input("fully decoupled mobilities require a cuboid".into()))
            }
            (MobilityFamily::PerturbedDecoupled { epsilon }, StateSpace::Cuboid { lower, upper }) => {
                if n != 2 || lower.iter().any(|v| *v != 0.0) || upper.iter().any(|v| *v != 1.0) {
                    return Err(Error::Input("perturbed decoupled model lives on [0,1]²".into()));
                }
                if !(*epsilon >= 0.0) {
                    return Err(Error::Input("epsilon must be nonnegative".into()));
                }
                // det ∇²h_ε > 0 on int S needs 1 − ε d1 d2 (4 + ...) > 0; d1 d2 ≤ 1/16
                if *epsilon >= 2.0 {
                    return Err(Error::Input("epsilon too large for positive definiteness".into()));
                }
            }
            (MobilityFamily::PerturbedDecoupled { .. }, _) => {
                return Err(Error::Input("perturbed decoupled model lives on [0,1]²".into()))
            }
            (MobilityFamily::VolumeFilling, StateSpace::Simplex { .. }) => {}
            (MobilityFamily::VolumeFilling, _) => {
                return Err(Error::Input("volume-filling mobility requires a simplex".into()))
            }
            (MobilityFamily::RadialBall, StateSpace::Ball { .. }) => {}
            (MobilityFamily::RadialBall, _) => {
                return Err(Error::Input("radial mobility requires the unit ball".into()))
            }
            (MobilityFamily::InducedByH { h }, _) => {
                if h.z_arity() > n || h.uses_x() {
                    return Err(Error::Input(format!(
                        "h may only use z1..z{n} (found arity {})",
                        h.z_arity()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    fn check_in_s(&self, z: &[f64]) -> Result<()> {
        if !self.space.contains(z)? {
            return Err(Error::Input(format!("point {z:?} is not in S")));
        }
        Ok(())
    }

    fn check_interior(&self, z: &[f64]) -> Result<()> {
        self.space.check_dim(z)?;
        if !(self.space.interior_distance(z) > 0.0) {
            return Err(Error::Degenerate(format!("point {z:?} is not in int S")));
        }
        Ok(())
    }

    /// Closed-form `M(z)` for built-in families (row-major). `None` for `InducedByH`.
    fn closed_form<T: Scalar>(&self, z: &[T]) -> Option<Vec<T>> {
        let n = z.len();
        let zero = T::cst(0.0);
        let mut m = vec![zero; n * n];
        match &self.family {
            MobilityFamily::FullyDecoupled { mobilities } => {
                let (lo, hi) = self.space.bounding_box();
                for j in 0..n {
                    m[j * n + j] = mobilities[j].eval(z[j], lo[j], hi[j]);
                }
            }
            MobilityFamily::PerturbedDecoupled { epsilon } => {
                let e = T::cst(*epsilon);
                let one = T::cst(1.0);
                let two = T::cst(2.0);
                let d1 = z[0] * (one - z[0]);
                let d2 = z[1] * (one - z[1]);
                let p = (one - two * z[0]) * (one - two * z[1]);
                let dd = d1 * d2;
                let den = one - e * dd * (T::cst(4.0) - e * (T::cst(4.0) * dd - p * p));
                m[0] = (d1 - e * dd * two * d1) / den;
                m[3] = (d2 - e * dd * two * d2) / den;
                m[1] = -(e * dd * p) / den;
                m[2] = m[1];
            }
            MobilityFamily::VolumeFilling => {
                for i in 0..n {
                    for j in 0..n {
                        m[i * n + j] = -(z[i] * z[j]);
                    }
                    m[i * n + i] = m[i * n + i] + z[i];
                }
            }
            MobilityFamily::RadialBall => {
                let mut r2 = zero;
                for v in z {
                    r2 = r2 + *v * *v;
                }
                let w = T::cst(1.0) - r2;
                // snap round-off at the sphere so that M(z)z vanishes there
                let s = if w.re() <= 4.0 * f64::EPSILON { T::cst(0.0) } else { w.sqrt() };
                for i in 0..n {
                    for j in 0..n {
                        m[i * n + j] = -(z[i] * z[j]);
                    }
                    m[i * n + i] = m[i * n + i] + T::cst(1.0) + s;
                }
            }
            MobilityFamily::InducedByH { .. } => return None,
        }
        Some(m)
    }

    /// The inducing potential `h` in closed form (`None` for decoupled expression mobilities).
    fn potential<T: Scalar>(&self, z: &[T]) -> Option<T> {
        let zero = T::cst(0.0);
        match &self.family {
            MobilityFamily::FullyDecoupled { mobilities } => {
                let (lo, hi) = self.space.bounding_box();
                let mut acc = zero;
                for j in 0..z.len() {
                    acc = acc + mobilities[j].potential(z[j], lo[j], hi[j])?;
                }
                Some(acc)
            }
            MobilityFamily::PerturbedDecoupled { epsilon } => {
                let one = T::cst(1.0);
                let mut acc = zero;
                for zj in z {
                    acc = acc + zj.xlnx() + (one - *zj).xlnx();
                }
                let d1 = z[0] * (one - z[0]);
                let d2 = z[1] * (one - z[1]);
                Some(acc + T::cst(*epsilon) * d1 * d2)
            }
            MobilityFamily::VolumeFilling => {
                let mut acc = zero;
                let mut sum = zero;
                for zj in z {
                    acc = acc + zj.xlnx();
                    sum = sum + *zj;
                }
                Some(acc + (T::cst(1.0) - sum).xlnx())
            }
            MobilityFamily::RadialBall => {
                let mut r2 = zero;
                for v in z {
                    r2 = r2 + *v * *v;
                }
                let w = T::cst(1.0) - r2;
                // snap round-off at the sphere so that M(z)z vanishes there
                let s = if w.re() <= 4.0 * f64::EPSILON { T::cst(0.0) } else { w.sqrt() };
                Some((T::cst(1.0) + s).ln() - s)
            }
            MobilityFamily::InducedByH { h } => Some(h.eval(z, zero)),
        }
    }

    fn decoupled_expr(&self) -> Option<&[ScalarMobility]> {
        match &self.family {
            MobilityFamily::FullyDecoupled { mobilities }
                if mobilities.iter().any(|m| matches!(m, ScalarMobility::Expr { .. })) =>
            {
                Some(mobilities)
            }
            _ => None,
        }
    }

    /// Hessian of `h` at an interior point (row-major).
    fn hessian_h(&self, z: &[f64]) -> Vec<f64> {
        let n = z.len();
        if let Some(mobs) = self.decoupled_expr() {
            let (lo, hi) = self.space.bounding_box();
            let mut h = vec![0.0; n * n];
            for j in 0..n {
                h[j * n + j] = 1.0 / mobs[j].eval(z[j], lo[j], hi[j]);
            }
            return h;
        }
        let mut h = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let zz: Vec<HyperDual> = (0..n)
                    .map(|k| {
                        HyperDual::variable(
                            z[k],
                            &[if k == i { 1.0 } else { 0.0 }, if k == j { 1.0 } else { 0.0 }],
                        )
                    })
                    .collect();
                let v = self.potential(&zz).expect("potential available").part(3);
                h[i * n + j] = v;
                h[j * n + i] = v;
            }
        }
        h
    }

    /// `M(z)` without membership checks (interior or boundary).
    fn m_raw(&self, z: &[f64]) -> Vec<f64> {
        if let Some(m) = self.closed_form(z) {
            return m;
        }
        let zi = self.space.push_inside(z, self.interior_margin);
        let n = z.len();
        let h = to_mat(n, &self.hessian_h(&zi));
        match h.try_inverse() {
            Some(inv) => symmetrize(n, inv.transpose().as_slice()),
            None => vec![f64::NAN; n * n],
        }
    }

    pub fn eval_m(&self, z: &[f64]) -> Result<DMatrix<f64>> {
        self.check_in_s(z)?;
        Ok(to_mat(z.len(), &self.m_raw(z)))
    }

    /// `M(z)` as a row-major vector, for hot loops; `z` must lie in `S`.
    pub fn m_vec(&self, z: &[f64]) -> Vec<f64> {
        self.m_raw(z)
    }

    pub fn eval_m_inverse(&self, z: &[f64]) -> Result<DMatrix<f64>> {
        self.space.check_dim(z)?;
        let d = self.space.interior_distance(z);
        if d < self.interior_margin {
            return Err(Error::Degenerate(format!(
                "interior distance {d:e} below clamp margin {:e}",
                self.interior_margin
            )));
        }
        Ok(to_mat(z.len(), &self.hessian_h(z)))
    }

    pub fn eval_dm(&self, z: &[f64], zeta: &[f64]) -> Result<DMatrix<f64>> {
        self.check_interior(z)?;
        self.space.check_dim(zeta)?;
        let n = z.len();
        let (d1, _, _) = self.directional(z, zeta, zeta);
        Ok(to_mat(n, &d1))
    }

    pub fn eval_d2m(&self, z: &[f64], zeta: &[f64], zeta2: &[f64]) -> Result<DMatrix<f64>> {
        self.check_interior(z)?;
        self.space.check_dim(zeta)?;
        self.space.check_dim(zeta2)?;
        let n = z.len();
        let (_, _, d2) = self.directional(z, zeta, zeta2);
        Ok(to_mat(n, &d2))
    }

    /// `(DM[a], DM[b], D²M[a,b])` at an interior point.
    fn directional(&self, z: &[f64], a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        match self.derivative_mode {
            DerivativeMode::Analytic => self.directional_exact(z, a, b),
            DerivativeMode::FiniteDifference { step } => self.directional_fd(z, a, b, step),
        }
    }

    fn directional_exact(&self, z: &[f64], a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = z.len();
        let zz: Vec<HyperDual> =
            (0..n).map(|k| HyperDual::variable(z[k], &[a[k], b[k]])).collect();
        let m = match self.closed_form(&zz) {
            Some(m) => m,
            None => self.induced_inverse_dual(z, a, b),
        };
        let d1: Vec<f64> = m.iter().map(|v| v.part(1)).collect();
        let d1b: Vec<f64> = m.iter().map(|v| v.part(2)).collect();
        let d2: Vec<f64> = m.iter().map(|v| v.part(3)).collect();
        (symmetrize(n, &d1), symmetrize(n, &d1b), symmetrize(n, &d2))
    }

    /// `M = (∇²h)⁻¹` as 2-direction hyper-duals along `(a, b)`; entries of `∇²h` are
    /// obtained from 4-direction evaluations of `h`.
    fn induced_inverse_dual(&self, z: &[f64], a: &[f64], b: &[f64]) -> Vec<HyperDual> {
        let n = z.len();
        let h = match &self.family {
            MobilityFamily::InducedByH { h } => h,
            _ => unreachable!("closed forms cover the built-in families"),
        };
        let mut hm = vec![HyperDual::constant(0.0); n * n];
        for i in 0..n {
            for j in i..n {
                let zz: Vec<HyperDual> = (0..n)
                    .map(|k| {
                        HyperDual::variable(
                            z[k],
                            &[
                                if k == i { 1.0 } else { 0.0 },
                                if k == j { 1.0 } else { 0.0 },
                                a[k],
                                b[k],
                            ],
                        )
                    })
                    .collect();
                let r = h.eval(&zz, HyperDual::constant(0.0));
                let mut e = HyperDual::variable(r.part(3), &[r.part(7), r.part(11)]);
                // the ab-part sits at bit 3 of the 2-direction number
                e = set_mixed(e, r.part(15));
                hm[i * n + j] = e;
                hm[j * n + i] = e;
            }
        }
        invert_dual(n, &hm)
    }

    fn fd_step(&self, z: &[f64], dirs: &[&[f64]], step: f64) -> f64 {
        let zn = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut s = step * zn.max(1.0);
        for _ in 0..60 {
            let ok = dirs.iter().all(|d| {
                [-1.0, 1.0].iter().all(|sg| {
                    let p: Vec<f64> = z.iter().zip(d.iter()).map(|(x, y)| x + sg * s * y).collect();
                    self.space.interior_distance(&p) > 0.0
                })
            });
            if ok {
                break;
            }
            s *= 0.5;
        }
        s
    }

    fn directional_fd(&self, z: &[f64], a: &[f64], b: &[f64], step: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = z.len();
        let shift = |v: &[f64], t: f64, w: &[f64], u: f64| -> Vec<f64> {
            z.iter()
                .enumerate()
                .map(|(k, x)| x + t * v[k] + u * w[k])
                .collect()
        };
        let sa = self.fd_step(z, &[a], step);
        let sb = self.fd_step(z, &[b], step);
        let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x + y).collect();
        let amb: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        let s2 = self.fd_step(z, &[&ab, &amb], step);
        let d1: Vec<f64> = {
            let p = self.m_raw(&shift(a, sa, b, 0.0));
            let q = self.m_raw(&shift(a, -sa, b, 0.0));
            p.iter().zip(&q).map(|(x, y)| (x - y) / (2.0 * sa)).collect()
        };
        let d1b: Vec<f64> = {
            let p = self.m_raw(&shift(b, sb, a, 0.0));
            let q = self.m_raw(&shift(b, -sb, a, 0.0));
            p.iter().zip(&q).map(|(x, y)| (x - y) / (2.0 * sb)).collect()
        };
        let pp = self.m_raw(&shift(a, s2, b, s2));
        let pm = self.m_raw(&shift(a, s2, b, -s2));
        let mp = self.m_raw(&shift(a, -s2, b, s2));
        let mm = self.m_raw(&shift(a, -s2, b, -s2));
        let d2: Vec<f64> = (0..n * n)
            .map(|k| (pp[k] - pm[k] - mp[k] + mm[k]) / (4.0 * s2 * s2))
            .collect();
        (symmetrize(n, &d1), symmetrize(n, &d1b), symmetrize(n, &d2))
    }

    /// `M`, `∂_k M`, `∂_k∂_l M` at an interior point.
    pub fn jet(&self, z: &[f64]) -> MobilityJet {
        let n = z.len();
        let nn = n * n;
        let m = self.m_raw(z);
        let mut dm = vec![0.0; n * nn];
        let mut d2m = vec![0.0; nn * nn];
        let unit = |k: usize| -> Vec<f64> { (0..n).map(|i| if i == k { 1.0 } else { 0.0 }).collect() };
        for k in 0..n {
            for l in k..n {
                let (a, b, ab) = self.directional(z, &unit(k), &unit(l));
                if l == k {
                    dm[k * nn..(k + 1) * nn].copy_from_slice(&a);
                }
                if k == 0 && l > 0 {
                    dm[l * nn..(l + 1) * nn].copy_from_slice(&b);
                }
                let o1 = (k * n + l) * nn;
                d2m[o1..o1 + nn].copy_from_slice(&ab);
                let o2 = (l * n + k) * nn;
                d2m[o2..o2 + nn].copy_from_slice(&ab);
            }
        }
        MobilityJet { n, m, dm, d2m }
    }

    /// The inducing potential at `z ∈ S` (continuous extension at `∂S`).
    pub fn h(&self, z: &[f64]) -> Result<f64> {
        self.check_in_s(z)?;
        if let Some(mobs) = self.decoupled_expr() {
            let (lo, hi) = self.space.bounding_box();
            let mut acc = 0.0;
            for j in 0..z.len() {
                let v = match mobs[j].potential::<f64>(z[j], lo[j], hi[j]) {
                    Some(v) => v,
                    None => mobs[j].potential_quadrature(z[j], lo[j], hi[j]).0,
                };
                if !v.is_finite() {
                    return Err(Error::Degenerate(format!("h is not finite at {z:?}")));
                }
                acc += v;
            }
            return Ok(acc);
        }
        let v: f64 = self.potential(z).expect("potential available");
        if v.is_finite() {
            return Ok(v);
        }
        // continuous extension by approaching from the interior
        let a: f64 = self.potential(&self.space.push_inside(z, 1e-9)).unwrap();
        let b: f64 = self.potential(&self.space.push_inside(z, 1e-10)).unwrap();
        if a.is_finite() && b.is_finite() && (a - b).abs() <= 1e-6 * (1.0 + a.abs()) {
            Ok(b)
        } else {
            Err(Error::Degenerate(format!("h has no continuous extension at {z:?}")))
        }
    }

    /// `∇h` at an interior point.
    pub fn grad_h(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_interior(z)?;
        let n = z.len();
        if let Some(mobs) = self.decoupled_expr() {
            let (lo, hi) = self.space.bounding_box();
            return Ok((0..n)
                .map(|j| match mobs[j].potential(HyperDual::variable(z[j], &[1.0]), lo[j], hi[j]) {
                    Some(v) => v.part(1),
                    None => mobs[j].potential_quadrature(z[j], lo[j], hi[j]).1,
                })
                .collect());
        }
        Ok((0..n)
            .map(|k| {
                let zz: Vec<HyperDual> = (0..n)
                    .map(|i| HyperDual::variable(z[i], &[if i == k { 1.0 } else { 0.0 }]))
                    .collect();
                self.potential(&zz).unwrap().part(1)
            })
            .collect())
    }

    /// `h_z̄(z)`: case A subtracts `h(z̄)`, case B also the linearization at `z̄`.
    pub fn h_relative(&self, z: &[f64], zref: &[f64], case: EntropyCase) -> Result<f64> {
        let v = self.h(z)? - self.h(zref)?;
        match case {
            EntropyCase::A => Ok(v),
            EntropyCase::B => {
                let g = self.grad_h(zref)?;
                Ok(v - z.iter().zip(zref).zip(&g).map(|((a, b), c)| (a - b) * c).sum::<f64>())
            }
        }
    }

    /// Per-axis scalar mobilities when the model is fully decoupled.
    pub fn scalar_mobilities(&self) -> Option<&[ScalarMobility]> {
        match &self.family {
            MobilityFamily::FullyDecoupled { mobilities } => Some(mobilities),
            _ => None,
        }
    }

    /// The scalar model for axis `j` of a fully decoupled model.
    pub fn component(&self, j: usize) -> Option<MobilityModel> {
        let mobs = self.scalar_mobilities()?;
        let (lo, hi) = self.space.bounding_box();
        Some(MobilityModel {
            space: StateSpace::Cuboid { lower: vec![lo[j]], upper: vec![hi[j]] },
            family: MobilityFamily::FullyDecoupled { mobilities: vec![mobs[j].clone()] },
            derivative_mode: self.derivative_mode,
            c3_exempt: self.c3_exempt,
            interior_margin: self.interior_margin,
        })
    }
}

/// Reference regime for relative entropies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EntropyCase {
    A,
    B,
}

fn set_mixed(mut e: HyperDual, v: f64) -> HyperDual {
    // rebuild with the ε_a ε_b coefficient set to v
    let base = HyperDual::variable(e.re(), &[e.part(1), e.part(2)]);
    let corr = HyperDual::variable(0.0, &[1.0, 0.0]) * HyperDual::variable(0.0, &[0.0, 1.0]);
    e = base + corr * HyperDual::constant(v);
    e
}

fn symmetrize(n: usize, v: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    for i in 0..n {
        for j in i + 1..n {
            let a = 0.5 * (v[i * n + j] + v[j * n + i]);
            out[i * n + j] = a;
            out[j * n + i] = a;
        }
    }
    out
}

/// Gauss-Jordan inversion over hyper-duals with partial pivoting on real parts.
fn invert_dual(n: usize, a: &[HyperDual]) -> Vec<HyperDual> {
    let mut m = a.to_vec();
    let mut inv: Vec<HyperDual> = (0..n * n)
        .map(|k| HyperDual::constant(if k / n == k % n { 1.0 } else { 0.0 }))
        .collect();
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| m[i * n + c].re().abs().partial_cmp(&m[j * n + c].re().abs()).unwrap())
            .unwrap();
        if p != c {
            for k in 0..n {
                m.swap(c * n + k, p * n + k);
                inv.swap(c * n + k, p * n + k);
            }
        }
        let piv = m[c * n + c];
        for k in 0..n {
            m[c * n + k] = m[c * n + k] / piv;
            inv[c * n + k] = inv[c * n + k] / piv;
        }
        for r in 0..n {
            if r != c {
                let f = m[r * n + c];
                for k in 0..n {
                    m[r * n + k] = m[r * n + k] - f * m[c * n + k];
                    inv[r * n + k] = inv[r * n + k] - f * inv[c * n + k];
                }
            }
        }
    }
    inv
}
