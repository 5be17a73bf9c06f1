//! Jacobiators, the 3-form formula for them, twisted Poisson checks, ranks and
//! verification reports.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauge::GaugeTwoForm;
use crate::geom::{axis_step, KForm, Sampler, ScalarField};
use crate::symmetry;
use crate::system::NonholonomicSystem;

/// Bivector matrix in phase coordinates as a function of the point.
pub type BivectorFn<'a> = &'a (dyn Fn(&[f64]) -> Result<DMatrix<f64>> + Sync);

/// Bracket matrix `{f_i, f_j}` at z.
pub fn bracket_matrix(pi: &DMatrix<f64>, grads: &[DVector<f64>]) -> DMatrix<f64> {
    let k = grads.len();
    DMatrix::from_fn(k, k, |i, j| (grads[i].transpose() * pi * &grads[j])[(0, 0)])
}

/// Jacobiators `cyclic{f_i, {f_j, f_k}}` for several triples at one point. The
/// inner brackets are differentiated by central differences, the outer
/// differentials come from the fields.
pub fn jacobiators(pi: BivectorFn, fields: &[ScalarField], triples: &[(usize, usize, usize)], z: &[f64]) -> Result<Vec<f64>> {
    let dim = z.len();
    let grads = |x: &[f64]| -> Vec<DVector<f64>> { fields.iter().map(|f| f.grad(x)).collect() };
    let g0 = grads(z);
    let pi0 = pi(z)?;
    let k = fields.len();
    // d{f_a, f_b} stored per pair
    let mut dbr = vec![DVector::zeros(dim); k * k];
    let mut x = z.to_vec();
    for mu in 0..dim {
        let h = axis_step(z[mu]);
        x[mu] = z[mu] + h;
        let bp = bracket_matrix(&pi(&x)?, &grads(&x));
        x[mu] = z[mu] - h;
        let bm = bracket_matrix(&pi(&x)?, &grads(&x));
        x[mu] = z[mu];
        for a in 0..k {
            for b in 0..k {
                dbr[a * k + b][mu] = (bp[(a, b)] - bm[(a, b)]) / (2.0 * h);
            }
        }
    }
    let outer = |a: usize, b: usize, c: usize| (g0[a].transpose() * &pi0 * &dbr[b * k + c])[(0, 0)];
    Ok(triples
        .iter()
        .map(|&(i, j, l)| outer(i, j, l) + outer(j, l, i) + outer(l, i, j))
        .collect())
}

pub fn jacobiator(pi: BivectorFn, f: &ScalarField, g: &ScalarField, h: &ScalarField, z: &[f64]) -> Result<f64> {
    Ok(jacobiators(pi, &[f.clone(), g.clone(), h.clone()], &[(0, 1, 2)], z)?[0])
}

/// `dω(u, v, w)` for a 2-form given by coordinate matrices, constant vectors.
pub fn d_two_form(w: &dyn Fn(&[f64]) -> Result<DMatrix<f64>>, z: &[f64], u: &DVector<f64>, v: &DVector<f64>, x: &DVector<f64>) -> Result<f64> {
    let step = z.iter().fold(1.0f64, |m, c| m.max(c.abs())) * crate::geom::fd_step();
    let deriv = |dir: &DVector<f64>| -> Result<DMatrix<f64>> {
        let scale = dir.amax().max(1e-300);
        let d = dir / scale;
        let zp: Vec<f64> = z.iter().zip(d.iter()).map(|(a, b)| a + step * b).collect();
        let zm: Vec<f64> = z.iter().zip(d.iter()).map(|(a, b)| a - step * b).collect();
        Ok((w(&zp)? - w(&zm)?) * (scale / (2.0 * step)))
    };
    let f = |m: &DMatrix<f64>, a: &DVector<f64>, b: &DVector<f64>| (a.transpose() * m * b)[(0, 0)];
    Ok(f(&deriv(u)?, v, x) + f(&deriv(v)?, x, u) + f(&deriv(x)?, u, v))
}

/// Right-hand side of the Jacobiator formula for a bracket gauged by B:
/// `(d⟨J,𝒦_W⟩ − dB)(π♯df, π♯dg, π♯dh) − ψ(df, dg, dh)` with
/// `ψ(α, β, γ) = cyclic γ((𝒦_W(π♯α, π♯β))_𝓜)`.
pub fn jacobiator_via_3form(
    sys: &NonholonomicSystem,
    b: Option<&GaugeTwoForm>,
    f: &ScalarField,
    g: &ScalarField,
    h: &ScalarField,
    z: &[f64],
) -> Result<f64> {
    let n = sys.n();
    let blk = match b {
        Some(b) => Some(b.block(sys, z)?),
        None => None,
    };
    let pi = sys.bivector(z, blk.as_ref())?;
    let df = [f.grad(z), g.grad(z), h.grad(z)];
    let u: Vec<DVector<f64>> = df.iter().map(|d| pi.transpose() * d).collect();
    let two_form = |x: &[f64]| -> Result<DMatrix<f64>> {
        let mut m = DMatrix::zeros(x.len(), x.len());
        let mut jk = symmetry::j_kw(sys, x)?;
        if let Some(b) = b {
            jk -= b.at(sys, x)?;
        }
        m.view_mut((0, 0), (n, n)).copy_from(&jk);
        Ok(m)
    };
    let first = d_two_form(&two_form, z, &u[0], &u[1], &u[2])?;
    let kw = symmetry::curvature_kw(sys, &z[..n])?;
    let kval = |a: &DVector<f64>, c: &DVector<f64>| -> DVector<f64> {
        let ta = a.rows(0, n);
        let tc = c.rows(0, n);
        DVector::from_iterator(kw.len(), kw.iter().map(|k| (ta.transpose() * k * tc)[(0, 0)]))
    };
    let mut psi = 0.0;
    for (a, c, e) in [(0, 1, 2), (1, 2, 0), (2, 0, 1)] {
        let chi = kval(&u[a], &u[c]);
        psi += df[e].dot(&symmetry::lifted_generator(sys, chi.as_slice(), z));
    }
    Ok(first - psi)
}

/// Largest `|cyclic{f,{g,h}} − φ(π♯df, π♯dg, π♯dh)|` over points and triples.
/// Fails if φ is not closed at the sampled points.
pub fn twisted_check(
    pi: BivectorFn,
    phi: &KForm,
    fields: &[ScalarField],
    triples: &[(usize, usize, usize)],
    points: &[Vec<f64>],
    sampler: &mut Sampler,
) -> Result<f64> {
    if phi.degree != 3 {
        return Err(Error::Degree {
            degree: phi.degree,
            dim: phi.dim,
        });
    }
    if phi.dim >= 4 {
        let dphi = crate::geom::exterior_derivative(phi)?;
        let mut closed: f64 = 0.0;
        for z in points.iter().take(5) {
            let vs: Vec<DVector<f64>> = (0..4)
                .map(|_| DVector::from_iterator(phi.dim, (0..phi.dim).map(|_| sampler.uniform(-1.0, 1.0))))
                .collect();
            closed = closed.max(dphi.eval(z, &vs).abs());
        }
        if closed > 1e-5 {
            return Err(Error::NotClosed(closed));
        }
    }
    let mut worst: f64 = 0.0;
    for z in points {
        let jac = jacobiators(pi, fields, triples, z)?;
        let p = pi(z)?;
        let grads: Vec<DVector<f64>> = fields.iter().map(|f| f.grad(z)).collect();
        for (t, &(i, j, k)) in triples.iter().enumerate() {
            let us = [&grads[i], &grads[j], &grads[k]].map(|d| p.transpose() * d);
            let val = phi.eval(z, &us);
            worst = worst.max((jac[t] - val).abs());
        }
    }
    Ok(worst)
}

/// Numerical rank with threshold `1e−9·σ_max`.
pub fn characteristic_rank(m: &DMatrix<f64>) -> usize {
    let sv = m.clone().singular_values();
    let top = sv.max();
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|s| **s > 1e-9 * top).count()
}

/// All unordered triples of `0..k`.
pub fn triples(k: usize) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    for i in 0..k {
        for j in (i + 1)..k {
            for l in (j + 1)..k {
                out.push((i, j, l));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub check: String,
    pub samples: usize,
    pub max_defect: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Report {
    pub fn new(check: &str, samples: usize, max_defect: f64, tolerance: f64) -> Self {
        Report {
            check: check.to_string(),
            samples,
            max_defect,
            tolerance,
            pass: max_defect.is_finite() && max_defect < tolerance,
        }
    }

    /// A check that must come out above a floor, such as a nonzero defect.
    pub fn at_least(check: &str, samples: usize, value: f64, floor: f64) -> Self {
        Report {
            check: check.to_string(),
            samples,
            max_defect: value,
            tolerance: floor,
            pass: value.is_finite() && value > floor,
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{}: {} (max defect {:.3e}, tolerance {:.1e}, {} samples)",
            self.check,
            if self.pass { "pass" } else { "FAIL" },
            self.max_defect,
            self.tolerance,
            self.samples
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::DualNum;

    #[test]
    fn canonical_bivector_is_poisson() {
        let pi = |_: &[f64]| -> Result<DMatrix<f64>> {
            let mut m = DMatrix::zeros(4, 4);
            m[(0, 2)] = 1.0;
            m[(1, 3)] = 1.0;
            m[(2, 0)] = -1.0;
            m[(3, 1)] = -1.0;
            Ok(m)
        };
        let f = ScalarField::new_ad(|z| z[0] * z[2] * z[2] + z[1].sin());
        let g = ScalarField::new_ad(|z| z[3] * z[0] - z[2] * z[1] * z[1]);
        let h = ScalarField::new_ad(|z| (z[0] + z[3]).cos() * z[2]);
        let j = jacobiator(&pi, &f, &g, &h, &[0.3, -0.2, 0.5, 0.9]).unwrap();
        assert!(j.abs() < 1e-8, "{j}");
    }

    #[test]
    fn rank_of_rank_two_matrix() {
        let m = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 2.0, -1.0, 0.0, 3.0, -2.0, -3.0, 0.0]);
        assert_eq!(characteristic_rank(&m), 2);
        assert_eq!(characteristic_rank(&DMatrix::zeros(2, 2)), 0);
    }

    #[test]
    fn twisted_by_minus_d_omega_on_a_toy_form() {
        // {f,g} = Ω(X_f, X_g) for a nondegenerate, non-closed Ω on ℝ⁴
        let omega = |z: &[f64]| {
            let a = 1.0 + 0.3 * z[2];
            let mut m = DMatrix::zeros(4, 4);
            m[(0, 1)] = a;
            m[(2, 3)] = 1.0;
            m[(0, 2)] = 0.2 * z[3];
            m[(1, 3)] = 0.1;
            &m - m.transpose()
        };
        // π♯ = −Ω♭⁻¹ in the convention π(α, β) = αᵀ Π β
        let pi = move |z: &[f64]| -> Result<DMatrix<f64>> { Ok(-omega(z).try_inverse().unwrap()) };
        let phi_two = KForm::from_matrix(4, omega);
        let phi = crate::geom::exterior_derivative(&phi_two).unwrap().scale(-1.0);
        let fields: Vec<ScalarField> = (0..4).map(|k| ScalarField::new_ad(move |z| z[k])).collect();
        let pts = vec![vec![0.2, -0.4, 0.7, 0.1], vec![-0.5, 0.3, -0.2, 0.8]];
        let d = twisted_check(&pi, &phi, &fields, &triples(4), &pts, &mut Sampler::default()).unwrap();
        assert!(d < 1e-6, "{d}");
    }

    #[test]
    fn report_flags_failures() {
        assert!(Report::new("x", 1, 1e-9, 1e-8).pass);
        assert!(!Report::new("x", 1, f64::NAN, 1e-8).pass);
        assert!(Report::at_least("y", 1, 0.5, 1e-3).pass);
    }
}
