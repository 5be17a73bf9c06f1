//! SO(3) in z-x-z Euler angles `(φ₁, θ, ψ)` with `g = R_z(φ₁) R_x(θ) R_z(ψ)`.
//! The chart is singular at θ ∈ {0, π}.
//!
//! Body angular velocity is `Ω = L(θ, ψ)·(φ̇₁, θ̇, ψ̇)`, so the rows of L are the
//! left invariant forms λ_i and the columns of L⁻¹ are the fields X^L_i.

use nalgebra::{DMatrix, Matrix3, Vector3};
use num_dual::DualNum;

use crate::geom::Ad;

pub type M3 = Matrix3<Ad>;
pub type V3 = Vector3<Ad>;

pub fn zero() -> Ad {
    Ad::from(0.0)
}

pub fn one() -> Ad {
    Ad::from(1.0)
}

fn rz(a: Ad) -> M3 {
    let (s, c) = (a.sin(), a.cos());
    M3::new(c, -s, zero(), s, c, zero(), zero(), zero(), one())
}

fn rx(a: Ad) -> M3 {
    let (s, c) = (a.sin(), a.cos());
    M3::new(one(), zero(), zero(), zero(), c, -s, zero(), s, c)
}

/// Rotation matrix from the angles `e = (φ₁, θ, ψ)`.
pub fn rotation(e: &[Ad]) -> M3 {
    rz(e[0]) * rx(e[1]) * rz(e[2])
}

/// Angles of a rotation matrix with `θ ∈ [0, π]`; ill-conditioned near the
/// chart singularity.
pub fn euler_angles(g: &Matrix3<f64>) -> [f64; 3] {
    let th = g[(2, 2)].clamp(-1.0, 1.0).acos();
    [g[(0, 2)].atan2(-g[(1, 2)]), th, g[(2, 0)].atan2(g[(2, 1)])]
}

/// Rows α, β, γ of the rotation matrix.
pub fn rows(e: &[Ad]) -> (V3, V3, V3) {
    let g = rotation(e);
    (
        g.row(0).transpose(),
        g.row(1).transpose(),
        g.row(2).transpose(),
    )
}

pub fn gamma(e: &[Ad]) -> V3 {
    let (st, ct) = (e[1].sin(), e[1].cos());
    let (sp, cp) = (e[2].sin(), e[2].cos());
    V3::new(st * sp, st * cp, ct)
}

/// `Ω = L·rates`; row i of L is λ_i.
pub fn lmat(e: &[Ad]) -> M3 {
    let (st, ct) = (e[1].sin(), e[1].cos());
    let (sp, cp) = (e[2].sin(), e[2].cos());
    M3::new(st * sp, cp, zero(), st * cp, -sp, zero(), ct, zero(), one())
}

/// Columns are `X^L_i` in `(∂φ₁, ∂θ, ∂ψ)`.
pub fn left_fields(e: &[Ad]) -> M3 {
    let (st, ct) = (e[1].sin(), e[1].cos());
    let (sp, cp) = (e[2].sin(), e[2].cos());
    M3::new(
        sp / st,
        cp / st,
        zero(),
        cp,
        -sp,
        zero(),
        -ct * sp / st,
        -ct * cp / st,
        one(),
    )
}

/// Columns are `X^R_i = Σ_j g_ij X^L_j`.
pub fn right_fields(e: &[Ad]) -> M3 {
    left_fields(e) * rotation(e).transpose()
}

pub fn cross(a: &V3, b: &V3) -> V3 {
    a.cross(b)
}

pub fn to_dvec(v: &V3) -> nalgebra::DVector<Ad> {
    nalgebra::DVector::from_column_slice(v.as_slice())
}

/// Copy a 3×3 block into a larger matrix.
pub fn put(m: &mut DMatrix<Ad>, r: usize, c: usize, b: &M3) {
    m.view_mut((r, c), (3, 3)).copy_from(b);
}

/// Rows λ_i placed at columns `at..at+3` of an n-column coframe.
pub fn lambda_rows(e: &[f64], n: usize, at: usize) -> DMatrix<f64> {
    let l = lmat(&crate::geom::lift(e)).map(|v| v.re);
    let mut m = DMatrix::zeros(3, n);
    m.view_mut((0, at), (3, 3)).copy_from(&l);
    m
}

/// Coordinate matrix of `⟨Ω, dλ⟩`, using `dλ(U, W) = −λ(U) × λ(W)`.
pub fn omega_dlambda(lam: &DMatrix<f64>, omega: &Vector3<f64>) -> DMatrix<f64> {
    let n = lam.ncols();
    let col = |k: usize| Vector3::new(lam[(0, k)], lam[(1, k)], lam[(2, k)]);
    DMatrix::from_fn(n, n, |a, b| -omega.dot(&col(a).cross(&col(b))))
}

pub fn eps(i: usize, j: usize, k: usize) -> f64 {
    match (i, j, k) {
        (0, 1, 2) | (1, 2, 0) | (2, 0, 1) => 1.0,
        (0, 2, 1) | (2, 1, 0) | (1, 0, 2) => -1.0,
        _ => 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{lie_bracket, lift, re_mat, Sampler, VectorField};
    use nalgebra::DVector;

    fn field(k: usize, right: bool) -> VectorField {
        VectorField::from_ad(3, move |q| {
            let m = if right { right_fields(q) } else { left_fields(q) };
            DVector::from_column_slice(m.column(k).as_slice())
        })
    }

    fn sample() -> Vec<Vec<f64>> {
        let mut s = Sampler::new(7);
        (0..20)
            .map(|_| s.in_box(&[(-3.0, 3.0), (0.3, 2.8), (-3.0, 3.0)]))
            .collect()
    }

    #[test]
    fn maurer_cartan_duality() {
        for q in sample() {
            let l = re_mat(&DMatrix::from_column_slice(3, 3, lmat(&lift(&q)).as_slice()));
            let x = re_mat(&DMatrix::from_column_slice(3, 3, left_fields(&lift(&q)).as_slice()));
            assert!((l * x - DMatrix::identity(3, 3)).amax() < 1e-12);
        }
    }

    #[test]
    fn left_fields_satisfy_so3_relations() {
        // [X^L_j, X^L_k] = ε_jki X^L_i
        for q in sample() {
            for j in 0..3 {
                for k in 0..3 {
                    let b = lie_bracket(&field(j, false), &field(k, false), &q);
                    let mut expect = DVector::zeros(3);
                    for i in 0..3 {
                        expect += field(i, false).eval(&q) * eps(j, k, i);
                    }
                    assert!((b - expect).amax() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn third_right_field_is_the_first_angle() {
        for q in sample() {
            let x = right_fields(&lift(&q));
            let c: Vec<f64> = x.column(2).iter().map(|v| v.re).collect();
            assert!((c[0] - 1.0).abs() < 1e-12 && c[1].abs() < 1e-12 && c[2].abs() < 1e-12);
        }
    }

    #[test]
    fn left_fields_rotate_gamma() {
        // X^L_i(γ) = γ × e_i
        for q in sample() {
            for i in 0..3 {
                let dir = field(i, false).eval(&q);
                let g = gamma(&crate::geom::seed_dir(&q, dir.as_slice()));
                let d = Vector3::new(g[0].eps, g[1].eps, g[2].eps);
                let gq = gamma(&lift(&q)).map(|v| v.re);
                let e = Vector3::ith(i, 1.0);
                assert!((d - gq.cross(&e)).amax() < 1e-12);
            }
        }
    }

    #[test]
    fn gamma_is_third_row() {
        for q in sample() {
            let (_, _, g3) = rows(&lift(&q));
            let g = gamma(&lift(&q));
            assert!((g3 - g).map(|v| v.re).amax() < 1e-14);
        }
    }

    #[test]
    fn euler_angles_invert_rotation() {
        for q in sample() {
            let g = rotation(&lift(&q)).map(|v| v.re);
            let e = euler_angles(&g);
            let back = rotation(&lift(&e)).map(|v| v.re);
            assert!((back - g).amax() < 1e-12);
        }
    }
}
