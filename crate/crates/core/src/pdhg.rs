//! Chambolle–Pock primal-dual iterations on the cumulative-mass parametrization.
//!
//! The objective is `Σ_faces ω φ(A_f F + b_f) + Σ_cells ι_S(D_c F + d_c)`. The dual step needs
//! the proximal map of `ω φ` in `(z, p)`; minimizing out `p` leaves
//! `ψ(z) = ω p₀ᵀ(M(z) + a𝟙)⁻¹p₀ + σ_z|z − z₀|²/2` over `z ∈ S`, `a = 2ω/σ_p`, and then
//! `p = M(M + a𝟙)⁻¹p₀`. `M + a𝟙` is positive definite on all of `S`.

use crate::action::phi_local;
use crate::ipm::{Outcome, Problem, SolverParams};
use crate::linalg::{cholesky, cholesky_solve, mat_vec};
use crate::mobility::MobilityJet;
use rayon::prelude::*;

struct Layout {
    faces: Vec<(usize, usize)>,
    cells: Vec<(usize, usize)>,
}

/// Linear part of the face map: `(z, p)` of face `(k, i)` from variables, plus offsets.
fn face_state(p: &Problem, x: &[f64], k: usize, i: usize, out: &mut [f64]) {
    let n = p.n;
    let ii = i as isize;
    for c in 0..n {
        out[c] = (p.f_at(x, k, ii + 1, c) - p.f_at(x, k, ii - 1, c) + p.f_at(x, k + 1, ii + 1, c)
            - p.f_at(x, k + 1, ii - 1, c))
            / (4.0 * p.dx);
        out[n + c] = -(p.f_at(x, k + 1, ii, c) - p.f_at(x, k, ii, c)) / p.dt[k];
    }
}

fn cell_state(p: &Problem, x: &[f64], k: usize, i: usize, out: &mut [f64]) {
    let ii = i as isize;
    for c in 0..p.n {
        out[c] = (p.f_at(x, k, ii, c) - p.f_at(x, k, ii - 1, c)) / p.dx;
    }
}

/// `Kᵀ y` with the affine offsets removed.
fn adjoint(p: &Problem, lay: &Layout, yf: &[f64], yc: &[f64], out: &mut [f64]) {
    let n = p.n;
    out.iter_mut().for_each(|v| *v = 0.0);
    for (f, &(k, i)) in lay.faces.iter().enumerate() {
        let ii = i as isize;
        let y = &yf[f * 2 * n..(f + 1) * 2 * n];
        let qz = 1.0 / (4.0 * p.dx);
        let qp = 1.0 / p.dt[k];
        for &(kk, i2, az, ap) in &[
            (k, ii + 1, qz, 0.0),
            (k, ii - 1, -qz, 0.0),
            (k + 1, ii + 1, qz, 0.0),
            (k + 1, ii - 1, -qz, 0.0),
            (k, ii, 0.0, qp),
            (k + 1, ii, 0.0, -qp),
        ] {
            if let Some(b) = p.node(kk, i2) {
                for c in 0..n {
                    out[b + c] += az * y[c] + ap * y[n + c];
                }
            }
        }
    }
    for (q, &(k, i)) in lay.cells.iter().enumerate() {
        let ii = i as isize;
        let y = &yc[q * n..(q + 1) * n];
        for &(i2, s) in &[(ii, 1.0 / p.dx), (ii - 1, -1.0 / p.dx)] {
            if let Some(b) = p.node(k, i2) {
                for c in 0..n {
                    out[b + c] += s * y[c];
                }
            }
        }
    }
}

fn forward(p: &Problem, lay: &Layout, x: &[f64], zero: &[f64], yf: &mut [f64], yc: &mut [f64]) {
    // linear part only: evaluate at x and subtract the value at x = 0
    let n = p.n;
    let mut a = vec![0.0; 2 * n];
    let mut b = vec![0.0; 2 * n];
    for (f, &(k, i)) in lay.faces.iter().enumerate() {
        face_state(p, x, k, i, &mut a);
        face_state(p, zero, k, i, &mut b);
        for j in 0..2 * n {
            yf[f * 2 * n + j] = a[j] - b[j];
        }
    }
    for (q, &(k, i)) in lay.cells.iter().enumerate() {
        cell_state(p, x, k, i, &mut a[..n]);
        cell_state(p, zero, k, i, &mut b[..n]);
        for j in 0..n {
            yc[q * n + j] = a[j] - b[j];
        }
    }
}

fn shifted_jet(jet: &MobilityJet, a: f64) -> MobilityJet {
    let mut j = jet.clone();
    for c in 0..j.n {
        j.m[c * j.n + c] += a;
    }
    j
}

/// Proximal map of `ω φ` with weights `σ_z` on `z` and `σ_p` on `p`.
pub(crate) fn face_prox(p: &Problem, omega: f64, sz: f64, sp: f64, z0: &[f64], p0: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = p.n;
    let space = &p.model.space;
    let a = 2.0 * omega / sp;
    let psi = |z: &[f64]| -> f64 {
        let mut m = p.model.m_vec(z);
        for c in 0..n {
            m[c * n + c] += a;
        }
        let l = cholesky(n, &m).unwrap();
        let mut q = p0.to_vec();
        cholesky_solve(n, &l, &mut q);
        omega * crate::linalg::dot(p0, &q) + 0.5 * sz * z.iter().zip(z0).map(|(u, v)| (u - v) * (u - v)).sum::<f64>()
    };
    let mut z = space.project(z0);
    let mut fz = psi(&z);
    for _ in 0..50 {
        let zi = space.push_inside(&z, p.model.interior_margin);
        let jet = shifted_jet(&p.model.jet(&zi), a);
        let loc = phi_local(&jet, p0, 2).unwrap();
        let n2 = n * n;
        let mut h = vec![0.0; n2];
        let mut g = vec![0.0; n];
        for c in 0..n {
            g[c] = omega * loc.gz[c] + sz * (z[c] - z0[c]);
            for d in 0..n {
                h[c * n + d] = omega * loc.hzz[c * n + d];
            }
            h[c * n + c] += sz;
        }
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        match cholesky(n, &h) {
            Some(l) => cholesky_solve(n, &l, &mut d),
            None => d.iter_mut().for_each(|v| *v /= sz),
        }
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..40 {
            let zn: Vec<f64> = space.project(&z.iter().zip(&d).map(|(u, v)| u + t * v).collect::<Vec<_>>());
            let fnew = psi(&zn);
            if fnew <= fz - 1e-12 * fz.abs() {
                let step: f64 = zn.iter().zip(&z).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
                z = zn;
                fz = fnew;
                moved = step > 1e-14;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    let mut m = p.model.m_vec(&z);
    let mm = m.clone();
    for c in 0..n {
        m[c * n + c] += a;
    }
    let l = cholesky(n, &m).unwrap();
    let mut q = p0.to_vec();
    cholesky_solve(n, &l, &mut q);
    (z, mat_vec(n, &mm, &q))
}

/// Power iteration for `‖K‖`.
fn operator_norm(p: &Problem, lay: &Layout) -> f64 {
    let nv = p.size();
    let zero = vec![0.0; nv];
    let mut x: Vec<f64> = (0..nv).map(|j| ((j * 7919) % 101) as f64 / 101.0 + 0.1).collect();
    let mut yf = vec![0.0; lay.faces.len() * 2 * p.n];
    let mut yc = vec![0.0; lay.cells.len() * p.n];
    let mut s = 0.0;
    for _ in 0..100 {
        let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        x.iter_mut().for_each(|v| *v /= nx);
        forward(p, lay, &x, &zero, &mut yf, &mut yc);
        let mut out = vec![0.0; nv];
        adjoint(p, lay, &yf, &yc, &mut out);
        s = out.iter().map(|v| v * v).sum::<f64>().sqrt();
        x = out;
    }
    s.sqrt()
}

pub(crate) fn solve(p: &Problem, x0: Vec<f64>, params: &SolverParams) -> Outcome {
    let n = p.n;
    let lay = Layout {
        faces: (0..p.steps()).flat_map(|k| (0..p.cells - 1).map(move |i| (k, i))).collect(),
        cells: (1..=p.kf()).flat_map(|k| (0..p.cells).map(move |i| (k, i))).collect(),
    };
    let nv = p.size();
    let zero = vec![0.0; nv];
    let norm = operator_norm(p, &lay) * 1.01;
    let tau = 0.99 / norm;
    let sigma = 0.99 / norm;
    let mut x = x0.clone();
    let mut xbar = x0;
    let mut yf = vec![0.0; lay.faces.len() * 2 * n];
    let mut yc = vec![0.0; lay.cells.len() * n];
    let mut kf = vec![0.0; yf.len()];
    let mut kc = vec![0.0; yc.len()];
    let mut ktx = vec![0.0; nv];
    let mut prev = f64::INFINITY;
    let mut change = f64::INFINITY;
    let mut it = 0;
    let mut calm = 0;
    while it < params.max_iters {
        it += 1;
        // dual ascent with the full affine map at x̄
        forward(p, &lay, &xbar, &zero, &mut kf, &mut kc);
        let mut off = vec![0.0; 2 * n];
        let mut b_faces = vec![0.0; yf.len()];
        for (f, &(k, i)) in lay.faces.iter().enumerate() {
            face_state(p, &zero, k, i, &mut off);
            b_faces[f * 2 * n..(f + 1) * 2 * n].copy_from_slice(&off);
        }
        let new_faces: Vec<Vec<f64>> = lay
            .faces
            .par_iter()
            .enumerate()
            .map(|(f, &(k, _))| {
                let omega = p.path_weight * p.dt[k] * p.dx;
                let v: Vec<f64> = (0..2 * n).map(|j| yf[f * 2 * n + j] + sigma * kf[f * 2 * n + j]).collect();
                // prox_{σF*}(v) = v − σ prox_{F/σ}(v/σ), with the offset b folded in
                let s: Vec<f64> = (0..2 * n).map(|j| v[j] / sigma + b_faces[f * 2 * n + j]).collect();
                let (z, pp) = face_prox(p, omega, 1.0 / sigma, 1.0 / sigma, &s[..n], &s[n..]);
                (0..2 * n)
                    .map(|j| {
                        let u = if j < n { z[j] } else { pp[j - n] };
                        v[j] - sigma * (u - b_faces[f * 2 * n + j])
                    })
                    .collect()
            })
            .collect();
        for (f, v) in new_faces.into_iter().enumerate() {
            yf[f * 2 * n..(f + 1) * 2 * n].copy_from_slice(&v);
        }
        let mut cb = vec![0.0; n];
        for (q, &(k, i)) in lay.cells.iter().enumerate() {
            cell_state(p, &zero, k, i, &mut cb);
            let v: Vec<f64> = (0..n).map(|j| yc[q * n + j] + sigma * kc[q * n + j]).collect();
            let s: Vec<f64> = (0..n).map(|j| v[j] / sigma + cb[j]).collect();
            let proj = p.model.space.project(&s);
            for j in 0..n {
                yc[q * n + j] = v[j] - sigma * (proj[j] - cb[j]);
            }
        }
        adjoint(p, &lay, &yf, &yc, &mut ktx);
        let xold = x.clone();
        for j in 0..nv {
            x[j] -= tau * ktx[j];
            xbar[j] = 2.0 * x[j] - xold[j];
        }
        if it % 20 == 0 {
            if let Some(ev) = p.eval(&x, 0.0, 0) {
                let e = p.path_weight * ev.path + ev.energy;
                change = (e - prev).abs() / e.abs().max(1e-300);
                prev = e;
                if change < params.pdhg_tol {
                    calm += 1;
                    if calm >= 3 {
                        break;
                    }
                } else {
                    calm = 0;
                }
            } else {
                calm = 0;
            }
        }
    }
    match p.eval(&x, 0.0, 0) {
        Some(ev) => {
            let e = p.path_weight * ev.path + ev.energy;
            Outcome { x, energy: ev.energy, gap: change * e.abs(), iterations: it, converged: calm >= 3 }
        }
        None => Outcome { x, energy: f64::INFINITY, gap: f64::INFINITY, iterations: it, converged: false },
    }
}
