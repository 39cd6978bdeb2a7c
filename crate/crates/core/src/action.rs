//! The action density `φ(z,p) = pᵀM(z)⁻¹p`, its lower semicontinuous extension to `∂S`,
//! the spatial action functional and path energies.

use crate::error::{Error, Result};
use crate::grid::GridDensity;
use crate::linalg::{cholesky, cholesky_solve, mat_vec};
use crate::mobility::{MobilityJet, MobilityModel};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ActionConfig {
    pub singular_eig_tol: f64,
    pub range_residual_tol: f64,
    /// Finite stand-in for `+∞`, used only inside optimizers.
    pub infinity_surrogate: f64,
}

impl Default for ActionConfig {
    fn default() -> Self {
        ActionConfig { singular_eig_tol: 1e-10, range_residual_tol: 1e-8, infinity_surrogate: 1e12 }
    }
}

impl ActionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.singular_eig_tol > 0.0 && self.range_residual_tol > 0.0 && self.infinity_surrogate > 0.0) {
            return Err(Error::Input("action tolerances must be positive".into()));
        }
        Ok(())
    }
}

/// `pᵀ M⁺ p` via spectral projection, `+∞` when `p` leaves the range of `M`.
fn pseudo_quadratic(n: usize, m: &[f64], p: &[f64], cfg: &ActionConfig) -> f64 {
    let pn = p.iter().map(|v| v * v).sum::<f64>().sqrt();
    if pn == 0.0 {
        return 0.0;
    }
    let mat = nalgebra::DMatrix::from_row_slice(n, n, m);
    let mat = (&mat + mat.transpose()) * 0.5;
    let eig = mat.symmetric_eigen();
    let mut val = 0.0;
    let mut outside = 0.0;
    for k in 0..n {
        let v = eig.eigenvectors.column(k);
        let c: f64 = (0..n).map(|i| v[i] * p[i]).sum();
        let lam = eig.eigenvalues[k];
        if lam < cfg.singular_eig_tol {
            outside += c * c;
        } else {
            val += c * c / lam;
        }
    }
    if outside.sqrt() > cfg.range_residual_tol * pn {
        f64::INFINITY
    } else {
        val
    }
}

/// Extended-real `φ(z, p)`; `z` must lie in `S`.
pub fn action_density(model: &MobilityModel, z: &[f64], p: &[f64], cfg: &ActionConfig) -> Result<f64> {
    model.space.check_dim(p)?;
    let m = model.eval_m(z)?;
    let n = z.len();
    let mv: Vec<f64> = (0..n * n).map(|k| m[(k / n, k % n)]).collect();
    Ok(phi_from_m(n, &mv, p, model.space.interior_distance(z) > 0.0, cfg))
}

/// `φ` given `M` (row-major). In `int S`, where `M` is positive definite, the exact inverse
/// is used whenever the factorization succeeds; on `∂S` (or if it fails) the spectral
/// projection decides between the pseudo-inverse form and `+∞`.
pub fn phi_from_m(n: usize, m: &[f64], p: &[f64], interior: bool, cfg: &ActionConfig) -> f64 {
    if p.iter().all(|v| *v == 0.0) {
        return 0.0;
    }
    let trusted = interior || crate::linalg::sym_eig_range(n, m).0 >= cfg.singular_eig_tol;
    if trusted {
        if let Some(l) = cholesky(n, m) {
            let mut q = p.to_vec();
            cholesky_solve(n, &l, &mut q);
            return crate::linalg::dot(p, &q).max(0.0);
        }
    }
    pseudo_quadratic(n, m, p, cfg)
}

/// Forces the spectral-projection path (for consistency checks).
pub fn action_density_pinv(model: &MobilityModel, z: &[f64], p: &[f64], cfg: &ActionConfig) -> Result<f64> {
    let m = model.eval_m(z)?;
    let n = z.len();
    let mv: Vec<f64> = (0..n * n).map(|k| m[(k / n, k % n)]).collect();
    Ok(pseudo_quadratic(n, &mv, p, cfg))
}

/// Face weights of the trapezoid rule over the `N+1` faces.
fn face_weight(j: usize, cells: usize, dx: f64) -> f64 {
    if j == 0 || j == cells {
        0.5 * dx
    } else {
        dx
    }
}

/// `Φ(μ, w) = Σ_faces ω_j φ(μ̄_j, w_j)` with `w` given on all `N+1` faces (row-major).
/// `μ̄` is the mean of adjacent cells, the adjacent cell itself at the two boundary faces.
pub fn action_functional(model: &MobilityModel, mu: &GridDensity, w: &[f64], cfg: &ActionConfig) -> Result<f64> {
    let n = mu.n;
    if w.len() != (mu.cells + 1) * n {
        return Err(Error::Input(format!(
            "flux has {} entries, expected {}",
            w.len(),
            (mu.cells + 1) * n
        )));
    }
    face_sum(model, mu, mu, w, cfg)
}

/// Face sum with states averaged over two time slices `a` and `b`.
pub(crate) fn face_sum(model: &MobilityModel, a: &GridDensity, b: &GridDensity, w: &[f64], cfg: &ActionConfig) -> Result<f64> {
    let n = a.n;
    let cells = a.cells;
    let dx = a.dx();
    let mut total = 0.0;
    let mut z = vec![0.0; n];
    for j in 0..=cells {
        let wj = &w[j * n..(j + 1) * n];
        if wj.iter().all(|v| *v == 0.0) {
            continue;
        }
        let (l, r) = (j.saturating_sub(1), j.min(cells - 1));
        for c in 0..n {
            z[c] = 0.25 * (a.row(l)[c] + a.row(r)[c] + b.row(l)[c] + b.row(r)[c]);
        }
        let zc = model.space.project(&z);
        let v = action_density(model, &zc, wj, cfg)?;
        if v == f64::INFINITY {
            return Ok(f64::INFINITY);
        }
        total += face_weight(j, cells, dx) * v;
    }
    Ok(total)
}

/// Value and derivatives of `φ` at an interior point, from a mobility jet.
#[derive(Clone, Debug)]
pub(crate) struct PhiLocal {
    pub val: f64,
    pub gz: Vec<f64>,
    pub gp: Vec<f64>,
    /// Row-major `n×n` blocks.
    pub hzz: Vec<f64>,
    /// `∂²φ/∂z_i∂p_j` at `(i, j)`.
    pub hzp: Vec<f64>,
    pub hpp: Vec<f64>,
}

/// `q = M⁻¹p`; `φ = pᵀq`, `∇_pφ = 2q`, `∂_{z_j}φ = −qᵀ∂_jM q`, `∇²_pφ = 2M⁻¹`,
/// `∂_{p}∂_{z_j}φ = −2M⁻¹∂_jM q`, `∂_{z_i}∂_{z_j}φ = 2qᵀ∂_iM M⁻¹∂_jM q − qᵀ∂_{ij}M q`.
/// `None` if `M` is not numerically positive definite.
pub(crate) fn phi_local(jet: &MobilityJet, p: &[f64], order: usize) -> Option<PhiLocal> {
    let n = jet.n;
    let l = cholesky(n, &jet.m)?;
    let mut q = p.to_vec();
    cholesky_solve(n, &l, &mut q);
    let val = crate::linalg::dot(p, &q);
    let mut out = PhiLocal { val, gz: vec![], gp: vec![], hzz: vec![], hzp: vec![], hpp: vec![] };
    if order == 0 {
        return Some(out);
    }
    // a_j = ∂_jM q
    let a: Vec<Vec<f64>> = (0..n).map(|j| mat_vec(n, jet.dm_block(j), &q)).collect();
    out.gp = q.iter().map(|v| 2.0 * v).collect();
    out.gz = (0..n).map(|j| -crate::linalg::dot(&q, &a[j])).collect();
    if order == 1 {
        return Some(out);
    }
    // b_j = M⁻¹ a_j
    let b: Vec<Vec<f64>> = a
        .iter()
        .map(|aj| {
            let mut v = aj.clone();
            cholesky_solve(n, &l, &mut v);
            v
        })
        .collect();
    let mut hpp = vec![0.0; n * n];
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        cholesky_solve(n, &l, &mut e);
        for i in 0..n {
            hpp[i * n + j] = 2.0 * e[i];
        }
    }
    let mut hzp = vec![0.0; n * n];
    let mut hzz = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            hzp[i * n + j] = -2.0 * b[i][j];
            let d2q = mat_vec(n, jet.d2m_block(i, j), &q);
            hzz[i * n + j] = 2.0 * crate::linalg::dot(&a[i], &b[j]) - crate::linalg::dot(&q, &d2q);
        }
    }
    for i in 0..n {
        for j in 0..i {
            let s = 0.5 * (hzz[i * n + j] + hzz[j * n + i]);
            hzz[i * n + j] = s;
            hzz[j * n + i] = s;
        }
    }
    out.hpp = hpp;
    out.hzp = hzp;
    out.hzz = hzz;
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mobility::MobilityFamily;
    use crate::space::StateSpace;

    fn perturbed() -> MobilityModel {
        MobilityModel::new(StateSpace::unit_cube(2), MobilityFamily::PerturbedDecoupled { epsilon: 0.1 }).unwrap()
    }

    #[test]
    fn boundary_semantics() {
        let cfg = ActionConfig::default();
        let m = perturbed();
        assert_eq!(action_density(&m, &[0.0, 0.0], &[0.0, 0.0], &cfg).unwrap(), 0.0);
        let v = action_density(&m, &[0.0, 0.5], &[0.0, 0.7], &cfg).unwrap();
        assert!((v - 4.0 * 0.49).abs() < 1e-12);
        assert_eq!(action_density(&m, &[0.0, 0.5], &[1.0, 0.0], &cfg).unwrap(), f64::INFINITY);
        assert!(action_density(&m, &[1.5, 0.5], &[1.0, 0.0], &cfg).is_err());
    }

    #[test]
    fn constant_flux_on_linear_mobility() {
        let m = MobilityModel::new(
            StateSpace::cuboid(vec![0.0], vec![4.0]).unwrap(),
            MobilityFamily::FullyDecoupled { mobilities: vec![crate::mobility::ScalarMobility::Linear] },
        )
        .unwrap()
        .exempt_c3();
        let mu = GridDensity::constant(0.0, 1.0, 16, &[1.0]).unwrap();
        let c = 0.7;
        let w = vec![c; 17];
        let v = action_functional(&m, &mu, &w, &ActionConfig::default()).unwrap();
        assert!((v - c * c).abs() < 1e-12);
        assert_eq!(action_functional(&m, &mu, &vec![0.0; 17], &ActionConfig::default()).unwrap(), 0.0);
    }

    #[test]
    fn local_derivatives_match_differences() {
        let m = perturbed();
        let z = [0.3, 0.55];
        let p = [0.4, -0.9];
        let loc = phi_local(&m.jet(&z), &p, 2).unwrap();
        let f = |z: &[f64], p: &[f64]| phi_local(&m.jet(z), p, 0).unwrap().val;
        let h = 1e-6;
        for j in 0..2 {
            let mut zp = z;
            zp[j] += h;
            let mut zm = z;
            zm[j] -= h;
            let d = (f(&zp, &p) - f(&zm, &p)) / (2.0 * h);
            assert!((d - loc.gz[j]).abs() < 1e-6);
            let gp = phi_local(&m.jet(&zp), &p, 1).unwrap();
            let gm = phi_local(&m.jet(&zm), &p, 1).unwrap();
            for i in 0..2 {
                let dd = (gp.gz[i] - gm.gz[i]) / (2.0 * h);
                assert!((dd - loc.hzz[i * 2 + j]).abs() < 1e-5, "{dd} {}", loc.hzz[i * 2 + j]);
                let dp = (gp.gp[i] - gm.gp[i]) / (2.0 * h);
                assert!((dp - loc.hzp[j * 2 + i]).abs() < 1e-5);
            }
        }
    }
}
