//! Barrier Newton method for space-time transport problems.
//!
//! Unknowns are the cumulative masses `F^k_i = Δx Σ_{i'≤i} μ^k_{i'}` on free slices, for
//! `i = 0..N−2` (`F_{−1} = 0`, `F_{N−1}` = mass). Densities, fluxes and face states are
//! linear in `F`:
//!
//! * `μ^k_i = (F^k_i − F^k_{i−1})/Δx`
//! * `w^{k+½}_{i+½} = −(F^{k+1}_i − F^k_i)/Δt_k`
//! * `z^{k+½}_{i+½} = (F^k_{i+1} − F^k_{i−1} + F^{k+1}_{i+1} − F^{k+1}_{i−1})/(4Δx)`
//!
//! so the continuity equation, no-flux faces and mass conservation hold by construction
//! and only `μ ∈ S` remains, handled by logarithmic barriers.

use crate::action::phi_local;
use crate::field::ScalarField;
use crate::linalg::BandMatrix;
use crate::mobility::MobilityModel;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverMethod {
    /// Interior-point Newton on the cumulative-mass variables.
    Newton,
    /// Chambolle–Pock iterations with per-face proximal maps.
    Pdhg,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverParams {
    pub method: SolverMethod,
    /// Total Newton iterations (Newton) or sweeps (PDHG).
    pub max_iters: usize,
    /// Stop once the barrier gap is below `rel_gap·|objective| + abs_gap`.
    pub rel_gap: f64,
    pub abs_gap: f64,
    /// PDHG: relative energy change per iteration at convergence.
    pub pdhg_tol: f64,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            method: SolverMethod::Newton,
            max_iters: 1000,
            rel_gap: 1e-10,
            abs_gap: 1e-14,
            pdhg_tol: 1e-7,
        }
    }
}

impl SolverParams {
    pub fn validate(&self) -> crate::Result<()> {
        if self.max_iters == 0 || !(self.rel_gap > 0.0) || !(self.abs_gap >= 0.0) || !(self.pdhg_tol > 0.0) {
            return Err(crate::Error::Input("solver parameters must be positive".into()));
        }
        Ok(())
    }
}

/// Per-cell energy `Δx[f(μ) − f(z̄) − (μ−z̄)ᵀ∇f(z̄) + μᵀη_i]` on the terminal slice.
#[derive(Clone, Debug)]
pub(crate) struct TerminalEnergy {
    pub f: ScalarField,
    pub zref: Vec<f64>,
    pub fref: f64,
    pub gref: Vec<f64>,
    /// `η` at cell centres, row-major `N×n`.
    pub eta: Vec<f64>,
}

impl TerminalEnergy {
    fn cell(&self, mu: &[f64], i: usize, order: usize) -> (f64, Vec<f64>, Vec<f64>) {
        let n = mu.len();
        let (v, g, h) = if order == 0 {
            (self.f.value(mu, 0.0), vec![], vec![])
        } else {
            self.f.grad_hess(mu, 0.0)
        };
        let mut val = v - self.fref;
        for c in 0..n {
            val += -(mu[c] - self.zref[c]) * self.gref[c] + mu[c] * self.eta[i * n + c];
        }
        if order == 0 {
            return (val, vec![], vec![]);
        }
        let g = (0..n).map(|c| g[c] - self.gref[c] + self.eta[i * n + c]).collect();
        (val, g, h)
    }
}

pub(crate) struct Problem<'a> {
    pub model: &'a MobilityModel,
    pub n: usize,
    pub cells: usize,
    pub dx: f64,
    pub dt: Vec<f64>,
    /// `F^0` on `i = 0..N−2`, row-major by face.
    pub start: Vec<f64>,
    /// `F^K` when the terminal slice is fixed.
    pub end: Option<Vec<f64>>,
    pub mass: Vec<f64>,
    pub path_weight: f64,
    pub terminal: Option<TerminalEnergy>,
}

pub(crate) struct Eval {
    pub value: f64,
    /// `Σ_k Δt_k Σ_faces Δx φ` without the path weight.
    pub path: f64,
    pub energy: f64,
    pub grad: Vec<f64>,
    pub hess: Option<BandMatrix>,
}

#[derive(Clone, Debug)]
pub(crate) struct Outcome {
    pub x: Vec<f64>,
    pub energy: f64,
    pub gap: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Cumulative masses of a density on faces `0..N−2`.
pub(crate) fn cumulative(values: &[f64], n: usize, cells: usize, dx: f64) -> Vec<f64> {
    let mut f = vec![0.0; (cells - 1) * n];
    for c in 0..n {
        let mut acc = 0.0;
        for i in 0..cells - 1 {
            acc += values[i * n + c];
            f[i * n + c] = acc * dx;
        }
    }
    f
}

impl<'a> Problem<'a> {
    pub fn steps(&self) -> usize {
        self.dt.len()
    }

    /// Number of free slices.
    pub fn kf(&self) -> usize {
        if self.end.is_some() {
            self.steps() - 1
        } else {
            self.steps()
        }
    }

    pub fn size(&self) -> usize {
        self.kf() * (self.cells - 1) * self.n
    }

    pub fn bandwidth(&self) -> usize {
        (2 * self.kf() + 2) * self.n
    }

    pub fn barrier_count(&self) -> usize {
        self.kf() * self.cells * self.model.space.barrier_terms()
    }

    /// Base index of free node `(k, i)`.
    #[inline]
    pub(crate) fn node(&self, k: usize, i: isize) -> Option<usize> {
        if i < 0 || i as usize >= self.cells - 1 || k == 0 || k > self.kf() {
            return None;
        }
        Some(((i as usize) * self.kf() + (k - 1)) * self.n)
    }

    #[inline]
    pub(crate) fn f_at(&self, x: &[f64], k: usize, i: isize, c: usize) -> f64 {
        if i < 0 {
            return 0.0;
        }
        let iu = i as usize;
        if iu == self.cells - 1 {
            return self.mass[c];
        }
        if k == 0 {
            return self.start[iu * self.n + c];
        }
        if k == self.steps() {
            if let Some(e) = &self.end {
                return e[iu * self.n + c];
            }
        }
        x[self.node(k, i).unwrap() + c]
    }

    /// Density of slice `k` (any slice) from the variables.
    pub fn slice(&self, x: &[f64], k: usize) -> Vec<f64> {
        let n = self.n;
        let mut v = vec![0.0; self.cells * n];
        for i in 0..self.cells {
            for c in 0..n {
                v[i * n + c] =
                    (self.f_at(x, k, i as isize, c) - self.f_at(x, k, i as isize - 1, c)) / self.dx;
            }
        }
        v
    }

    /// Packs free-slice densities (slice `k` at position `k−1`) into variables.
    pub fn pack(&self, slices: &[Vec<f64>]) -> Vec<f64> {
        let mut x = vec![0.0; self.size()];
        for (kk, s) in slices.iter().enumerate() {
            let f = cumulative(s, self.n, self.cells, self.dx);
            for i in 0..self.cells - 1 {
                let b = self.node(kk + 1, i as isize).unwrap();
                x[b..b + self.n].copy_from_slice(&f[i * self.n..(i + 1) * self.n]);
            }
        }
        x
    }

    /// Objective `w_path·J + E + t·Σ barrier`; `None` outside the domain.
    pub fn eval(&self, x: &[f64], t: f64, order: usize) -> Option<Eval> {
        let n = self.n;
        let big_k = self.steps();
        let nvar = self.size();
        let mut grad = if order >= 1 { vec![0.0; nvar] } else { vec![] };
        let mut hess = if order >= 2 { Some(BandMatrix::zeros(nvar, self.bandwidth())) } else { None };

        // faces
        let mut path = 0.0;
        if self.path_weight > 0.0 {
            let faces: Vec<(usize, usize)> =
                (0..big_k).flat_map(|k| (0..self.cells - 1).map(move |i| (k, i))).collect();
            let locals: Vec<Option<_>> = faces
                .par_iter()
                .map(|&(k, i)| {
                    let ii = i as isize;
                    let mut z = vec![0.0; n];
                    let mut p = vec![0.0; n];
                    for c in 0..n {
                        z[c] = (self.f_at(x, k, ii + 1, c) - self.f_at(x, k, ii - 1, c)
                            + self.f_at(x, k + 1, ii + 1, c)
                            - self.f_at(x, k + 1, ii - 1, c))
                            / (4.0 * self.dx);
                        p[c] = -(self.f_at(x, k + 1, ii, c) - self.f_at(x, k, ii, c)) / self.dt[k];
                    }
                    if !(self.model.space.interior_distance(&z) > 0.0) {
                        return None;
                    }
                    let jet = self.model.jet(&z);
                    phi_local(&jet, &p, order)
                })
                .collect();
            for (&(k, i), loc) in faces.iter().zip(locals) {
                let loc = loc?;
                if !loc.val.is_finite() {
                    return None;
                }
                let wgt = self.path_weight * self.dt[k] * self.dx;
                path += self.dt[k] * self.dx * loc.val;
                if order == 0 {
                    continue;
                }
                let ii = i as isize;
                let qz = 1.0 / (4.0 * self.dx);
                let qp = 1.0 / self.dt[k];
                let cand = [
                    (k, ii + 1, qz, 0.0),
                    (k, ii - 1, -qz, 0.0),
                    (k + 1, ii + 1, qz, 0.0),
                    (k + 1, ii - 1, -qz, 0.0),
                    (k, ii, 0.0, qp),
                    (k + 1, ii, 0.0, -qp),
                ];
                let nodes: Vec<(usize, f64, f64)> =
                    cand.iter().filter_map(|&(kk, i2, az, ap)| self.node(kk, i2).map(|b| (b, az, ap))).collect();
                for &(b, az, ap) in &nodes {
                    for c in 0..n {
                        grad[b + c] += wgt * (az * loc.gz[c] + ap * loc.gp[c]);
                    }
                }
                if let Some(h) = hess.as_mut() {
                    for &(ba, aza, apa) in &nodes {
                        for &(bb, azb, apb) in &nodes {
                            for c in 0..n {
                                for d in 0..n {
                                    let (r, s) = (ba + c, bb + d);
                                    if r < s {
                                        continue;
                                    }
                                    let v = aza * azb * loc.hzz[c * n + d]
                                        + aza * apb * loc.hzp[c * n + d]
                                        + apa * azb * loc.hzp[d * n + c]
                                        + apa * apb * loc.hpp[c * n + d];
                                    if v != 0.0 {
                                        h.add(r, s, wgt * v);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }

        // cells: barrier on free slices, terminal energy on the last free slice
        let mut barrier = 0.0;
        let mut energy = 0.0;
        let mut mu = vec![0.0; n];
        for k in 1..=self.kf() {
            let with_energy = k == big_k && self.terminal.is_some();
            for i in 0..self.cells {
                let ii = i as isize;
                for c in 0..n {
                    mu[c] = (self.f_at(x, k, ii, c) - self.f_at(x, k, ii - 1, c)) / self.dx;
                }
                let (bv, bg, bh) = self.model.space.barrier(&mu)?;
                barrier += bv;
                let mut cg: Vec<f64> = bg.iter().map(|v| t * v).collect();
                let mut ch: Vec<f64> = bh.iter().map(|v| t * v).collect();
                if with_energy {
                    let (ev, eg, eh) = self.terminal.as_ref().unwrap().cell(&mu, i, order);
                    if !ev.is_finite() {
                        return None;
                    }
                    energy += self.dx * ev;
                    if order >= 1 {
                        for c in 0..n {
                            cg[c] += self.dx * eg[c];
                        }
                    }
                    if order >= 2 {
                        for c in 0..n * n {
                            ch[c] += self.dx * eh[c];
                        }
                    }
                }
                if order == 0 {
                    continue;
                }
                let a = 1.0 / self.dx;
                let nodes: Vec<(usize, f64)> =
                    [(ii, a), (ii - 1, -a)].iter().filter_map(|&(i2, s)| self.node(k, i2).map(|b| (b, s))).collect();
                for &(b, s) in &nodes {
                    for c in 0..n {
                        grad[b + c] += s * cg[c];
                    }
                }
                if let Some(h) = hess.as_mut() {
                    for &(ba, sa) in &nodes {
                        for &(bb, sb) in &nodes {
                            for c in 0..n {
                                for d in 0..n {
                                    let (r, s) = (ba + c, bb + d);
                                    if r >= s && ch[c * n + d] != 0.0 {
                                        h.add(r, s, sa * sb * ch[c * n + d]);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        let value = self.path_weight * path + energy + t * barrier;
        if !value.is_finite() {
            return None;
        }
        Some(Eval { value, path, energy, grad, hess })
    }

    /// Largest feasible step fraction along `d` (before the 0.99 safety factor).
    fn max_step(&self, x: &[f64], d: &[f64]) -> f64 {
        let n = self.n;
        let mut a: f64 = 2.0;
        let zero = vec![0.0; x.len()];
        let mut mu = vec![0.0; n];
        let mut dmu = vec![0.0; n];
        for k in 1..=self.kf() {
            for i in 0..self.cells {
                let ii = i as isize;
                for c in 0..n {
                    mu[c] = (self.f_at(x, k, ii, c) - self.f_at(x, k, ii - 1, c)) / self.dx;
                    let hi = if self.node(k, ii).is_some() { d[self.node(k, ii).unwrap() + c] } else { 0.0 };
                    let lo = if self.node(k, ii - 1).is_some() { d[self.node(k, ii - 1).unwrap() + c] } else { 0.0 };
                    dmu[c] = (hi - lo) / self.dx;
                }
                a = a.min(self.model.space.max_step(&mu, &dmu, 2.0));
            }
        }
        let _ = zero;
        a
    }

    /// Barrier continuation from a strictly feasible `x0`.
    pub fn solve(&self, x0: Vec<f64>, params: &SolverParams) -> Outcome {
        let mut x = x0;
        let mb = self.barrier_count() as f64;
        let first = self.eval(&x, 0.0, 0).expect("initial point must be strictly feasible");
        let scale0 = (self.path_weight * first.path).abs() + first.energy.abs();
        let mut t = scale0.max(1e-8) / mb;
        let mut iterations = 0;
        let mut last_dec = f64::INFINITY;
        loop {
            // centering
            let mut stalled = false;
            loop {
                if iterations >= params.max_iters {
                    let ev = self.eval(&x, t, 0).unwrap();
                    return Outcome {
                        x,
                        energy: ev.energy,
                        gap: t * mb + last_dec,
                        iterations,
                        converged: false,
                    };
                }
                let ev = self.eval(&x, t, 2).expect("iterates stay feasible");
                let mut h = ev.hess.unwrap();
                let base = h.clone();
                let md = base.max_diag().max(1e-300);
                let mut reg = 0.0;
                let mut ok = h.factor().is_ok();
                let mut tries = 0;
                while !ok && tries < 16 {
                    reg = if reg == 0.0 { 1e-14 * md } else { reg * 10.0 };
                    h = base.clone();
                    h.add_diag(reg);
                    ok = h.factor().is_ok();
                    tries += 1;
                }
                if !ok {
                    stalled = true;
                    break;
                }
                let mut d: Vec<f64> = ev.grad.iter().map(|g| -g).collect();
                h.solve(&mut d);
                let dec = -ev.grad.iter().zip(&d).map(|(g, v)| g * v).sum::<f64>();
                iterations += 1;
                last_dec = 0.5 * dec.max(0.0);
                let fscale = ev.value.abs() + (self.path_weight * ev.path).abs() + ev.energy.abs();
                if last_dec <= (1e-3 * t * mb).max(1e-15 * fscale) {
                    break;
                }
                let mut alpha = (0.99 * self.max_step(&x, &d)).min(1.0);
                let mut accepted = false;
                let mut noise = false;
                for _ in 0..80 {
                    let xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + alpha * b).collect();
                    if let Some(en) = self.eval(&xn, t, 0) {
                        if en.value <= ev.value - 1e-4 * alpha * dec {
                            // progress below roundoff of the objective: centered as far as representable
                            noise = ev.value - en.value <= 16.0 * f64::EPSILON * fscale;
                            x = xn;
                            accepted = true;
                            break;
                        }
                    }
                    alpha *= 0.5;
                }
                if !accepted {
                    // no representable decrease left at this barrier level
                    stalled = last_dec <= 1e-9 * fscale.max(1e-300) || last_dec <= t * mb;
                    if !stalled {
                        let ev = self.eval(&x, t, 0).unwrap();
                        return Outcome {
                            x,
                            energy: ev.energy,
                            gap: t * mb + last_dec,
                            iterations,
                            converged: false,
                        };
                    }
                    break;
                }
                if noise {
                    stalled = true;
                    break;
                }
            }
            let _ = stalled;
            let ev = self.eval(&x, t, 0).unwrap();
            let scale = (self.path_weight * ev.path).abs() + ev.energy.abs();
            if t * mb <= params.rel_gap * scale + params.abs_gap {
                return Outcome {
                    x,
                    energy: ev.energy,
                    gap: t * mb + last_dec,
                    iterations,
                    converged: true,
                };
            }
            t *= 0.1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::StateSpace;

    #[test]
    fn gradient_and_hessian_match_differences() {
        let m = MobilityModel::new(
            StateSpace::unit_cube(2),
            crate::mobility::MobilityFamily::PerturbedDecoupled { epsilon: 0.1 },
        )
        .unwrap();
        let cells = 6;
        let dx = 1.0 / cells as f64;
        let mu0: Vec<f64> = (0..cells).flat_map(|i| vec![0.3 + 0.05 * i as f64, 0.6 - 0.04 * i as f64]).collect();
        let mass: Vec<f64> = (0..2).map(|c| (0..cells).map(|i| mu0[i * 2 + c]).sum::<f64>() * dx).collect();
        let mu1: Vec<f64> = (0..cells).flat_map(|i| vec![0.55 - 0.05 * i as f64 + 0.0, 0.4 + 0.04 * i as f64 - 0.0]).collect();
        // fix mass of mu1
        let m1: Vec<f64> = (0..2).map(|c| (0..cells).map(|i| mu1[i * 2 + c]).sum::<f64>() * dx).collect();
        let mu1: Vec<f64> = mu1.iter().enumerate().map(|(j, v)| v + (mass[j % 2] - m1[j % 2])).collect();
        let eta = vec![0.1; 2 * cells];
        let f = ScalarField::parse("0.5*z1^2 + 0.5*z2^2 + 0.2*z1*z2").unwrap();
        let zref = vec![0.2, 0.3];
        let (fref, gref, _) = f.grad_hess(&zref, 0.0);
        let p = Problem {
            model: &m,
            n: 2,
            cells,
            dx,
            dt: vec![0.25, 0.25, 0.5],
            start: cumulative(&mu0, 2, cells, dx),
            end: None,
            mass,
            path_weight: 0.7,
            terminal: Some(TerminalEnergy { f, zref, fref, gref, eta }),
        };
        let slices: Vec<Vec<f64>> = (1..=3).map(|k| {
            let t = k as f64 / 4.0;
            mu0.iter().zip(&mu1).map(|(a, b)| (1.0 - t) * a + t * b).collect()
        }).collect();
        let x = p.pack(&slices);
        let t = 0.01;
        let ev = p.eval(&x, t, 2).unwrap();
        let h = ev.hess.unwrap();
        let eps = 1e-6;
        for j in 0..x.len() {
            let mut xp = x.clone();
            xp[j] += eps;
            let mut xm = x.clone();
            xm[j] -= eps;
            let gp = p.eval(&xp, t, 1).unwrap();
            let gm = p.eval(&xm, t, 1).unwrap();
            let fd = (gp.value - gm.value) / (2.0 * eps);
            assert!((fd - ev.grad[j]).abs() < 1e-5 * (1.0 + fd.abs()), "grad {j}: {fd} vs {}", ev.grad[j]);
            for i in 0..x.len() {
                let fd = (gp.grad[i] - gm.grad[i]) / (2.0 * eps);
                assert!((fd - h.get(i, j)).abs() < 1e-4 * (1.0 + fd.abs()), "hess {i},{j}: {fd} vs {}", h.get(i, j));
            }
        }
    }
}
