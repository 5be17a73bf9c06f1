//! Axisymmetric solid rolling on a horizontal plane, on
//! `q = (x, y, φ₁, θ, ψ)` with the height eliminated by `z = −⟨s, γ⟩`.
//! Symmetry group `SE(2) × S¹`, shape space coordinatized by γ₃.
//!
//! Only the Routh family is built in: a sphere of radius r whose centre of
//! mass sits at `−c e₃` from the geometric centre, so that
//! `s(γ) = −rγ + c e₃`, i.e. `ϱ = −r` and `ζ = −rγ₃ + c`.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauge::HgsBasis;
use crate::geom::{lift, Ad, AdaptedFrame, Blocks, Chart, DualNum};
use crate::momenta::{self, HGMOdeSpec, HGMSolution};
use crate::symmetry::{Invariant, SymmetryData};
use crate::system::NonholonomicSystem;
use crate::systems::so3::{self, V3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolidParams {
    pub m: f64,
    #[serde(rename = "I1")]
    pub i1: f64,
    #[serde(rename = "I3")]
    pub i3: f64,
    /// Radius of the spherical surface.
    pub r: f64,
    /// Offset of the centre of mass from the geometric centre along e₃.
    pub c: f64,
    #[serde(rename = "g_accel")]
    pub g: f64,
}

impl Default for SolidParams {
    fn default() -> Self {
        SolidParams {
            m: 1.0,
            i1: 0.4,
            i3: 0.6,
            r: 1.0,
            c: 0.3,
            g: 9.81,
        }
    }
}

impl SolidParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.m > 0.0 && self.i1 > 0.0 && self.i3 > 0.0 && self.r > 0.0 && self.g >= 0.0) {
            return Err(Error::Params("solid parameters must be positive".into()));
        }
        if self.c.abs() >= self.r {
            return Err(Error::Params("centre of mass must lie inside the sphere".into()));
        }
        Ok(())
    }

    pub fn varrho(&self, _g3: Ad) -> Ad {
        Ad::from(-self.r)
    }

    pub fn zeta(&self, g3: Ad) -> Ad {
        g3 * (-self.r) + self.c
    }

    /// Contact point `s(γ) = (ϱγ₁, ϱγ₂, ζ)` in the body frame.
    pub fn s(&self, g: &V3) -> V3 {
        let v = self.varrho(g[2]);
        V3::new(v * g[0], v * g[1], self.zeta(g[2]))
    }
}

/// Columns `X_i = X^L_i + (α×s)_i ∂x + (β×s)_i ∂y`.
fn rolling(p: &SolidParams, q: &[Ad]) -> DMatrix<Ad> {
    let e = &q[2..5];
    let (a, b, g) = so3::rows(e);
    let s = p.s(&g);
    let (axs, bxs) = (a.cross(&s), b.cross(&s));
    let xl = so3::left_fields(e);
    let mut x = DMatrix::from_element(5, 3, so3::zero());
    for i in 0..3 {
        x[(0, i)] = axs[i];
        x[(1, i)] = bxs[i];
        for k in 0..3 {
            x[(2 + k, i)] = xl[(k, i)];
        }
    }
    x
}

fn frame(p: SolidParams) -> impl Fn(&[Ad]) -> DMatrix<Ad> + Send + Sync {
    move |q| {
        let g = so3::gamma(&q[2..5]);
        let x = rolling(&p, q);
        let mut v = DMatrix::from_element(5, 5, so3::zero());
        v.set_column(0, &(x.column(0) * g[1] - x.column(1) * g[0]));
        v.set_column(1, &(-x.column(2)));
        v.set_column(2, &(&x * DVector::from_column_slice(g.as_slice())));
        v[(0, 3)] = so3::one();
        v[(1, 4)] = so3::one();
        v
    }
}

/// `Lᵀ𝕀L + m(dx² + dy² + dz²)` with `dz = ⟨γ × s, λ⟩`.
fn metric(p: SolidParams) -> impl Fn(&[Ad]) -> DMatrix<Ad> + Send + Sync {
    move |q| {
        let e = &q[2..5];
        let l = so3::lmat(e);
        let i = so3::M3::from_diagonal(&V3::new(Ad::from(p.i1), Ad::from(p.i1), Ad::from(p.i3)));
        let g = so3::gamma(e);
        let dz = l.transpose() * g.cross(&p.s(&g));
        let mut out = DMatrix::from_element(5, 5, so3::zero());
        out[(0, 0)] = Ad::from(p.m);
        out[(1, 1)] = Ad::from(p.m);
        so3::put(&mut out, 2, 2, &(l.transpose() * i * l + dz * dz.transpose() * Ad::from(p.m)));
        out
    }
}

pub fn chart() -> Chart {
    Chart::new(
        "solid",
        &["x", "y", "phi1", "theta", "psi"],
        vec![(-2.0, 2.0), (-2.0, 2.0), (-PI, PI), (0.3, PI - 0.3), (-PI, PI)],
        Arc::new(|q| q[3].sin().abs() > 1e-6),
    )
}

/// Generators of `((a, b), c; d) ↦ a∂x + b∂y + c(⟨γ, X^L⟩ − y∂x + x∂y) − dX^L_3`.
/// The body spin leaves the contact position fixed.
fn generator(q: &[Ad]) -> DMatrix<Ad> {
    let e = &q[2..5];
    let xr = so3::right_fields(e);
    let xl = so3::left_fields(e);
    let mut g = DMatrix::from_element(5, 4, so3::zero());
    g[(0, 0)] = so3::one();
    g[(1, 1)] = so3::one();
    g[(0, 2)] = -q[1];
    g[(1, 2)] = q[0];
    for k in 0..3 {
        g[(2 + k, 2)] = xr[(k, 2)];
        g[(2 + k, 3)] = -xl[(k, 2)];
    }
    g
}

/// `ζ₁ = ((−(α×s)₃, −(β×s)₃), 0; 1)`, `ζ₂ = ((y + ⟨s,β⟩, −x − ⟨s,α⟩), 1; 0)`.
fn s_sections(p: SolidParams) -> impl Fn(&[Ad]) -> DMatrix<Ad> + Send + Sync {
    move |q| {
        let (a, b, g) = so3::rows(&q[2..5]);
        let s = p.s(&g);
        let mut z = DMatrix::from_element(4, 2, so3::zero());
        z[(0, 0)] = -a.cross(&s)[2];
        z[(1, 0)] = -b.cross(&s)[2];
        z[(3, 0)] = so3::one();
        z[(0, 1)] = q[1] + s.dot(&b);
        z[(1, 1)] = -q[0] - s.dot(&a);
        z[(2, 1)] = so3::one();
        z
    }
}

fn moments(p: SolidParams, q: &[Ad], pc: &[Ad]) -> V3 {
    let x = rolling(&p, q);
    let pv = DVector::from_column_slice(pc);
    let m = x.transpose() * pv;
    V3::new(m[0], m[1], m[2])
}

pub fn symmetry(p: SolidParams) -> SymmetryData {
    let inv = vec![
        Invariant::new("tau1", |q, _| so3::gamma(&q[2..5])[2]),
        Invariant::new("tau2", move |q, pc| {
            let (g, m) = (so3::gamma(&q[2..5]), moments(p, q, pc));
            g[0] * m[1] - g[1] * m[0]
        }),
        Invariant::new("tau3", move |q, pc| {
            let (g, m) = (so3::gamma(&q[2..5]), moments(p, q, pc));
            g[0] * m[0] + g[1] * m[1]
        }),
        Invariant::new("tau4", move |q, pc| moments(p, q, pc)[2]),
        Invariant::new("tau5", move |q, pc| {
            let m = moments(p, q, pc);
            m[0] * m[0] + m[1] * m[1]
        }),
    ];
    SymmetryData::new(&["e_x", "e_y", "rot", "spin"], generator, s_sections(p), |_| {
        let mut w = DMatrix::from_element(4, 2, so3::zero());
        w[(0, 0)] = so3::one();
        w[(1, 1)] = so3::one();
        w
    })
    .with_regular(|q| 1.0 - q[3].cos().powi(2) > 1e-4)
    .with_invariants(inv)
}

pub fn make(p: SolidParams) -> Result<Arc<NonholonomicSystem>> {
    p.validate()?;
    let fr = AdaptedFrame::new(Blocks::new(1, 2, 2), frame(p));
    Ok(Arc::new(NonholonomicSystem::new(
        "solid",
        chart(),
        fr,
        metric(p),
        move |q| {
            let g = so3::gamma(&q[2..5]);
            -p.s(&g).dot(&g) * (p.m * p.g)
        },
        symmetry(p),
    )))
}

/// Default γ₃ interval for the HGM solve; it covers the sampling box.
pub const GAMMA3_DOMAIN: (f64, f64) = (-0.96, 0.96);

fn gamma3(q: &[Ad]) -> Ad {
    q[3].cos()
}

/// Φ fitted from `X_nh(𝒥_i) = γ̇₃ A_ij 𝒥_j` at `(0, 0, 0, arccos γ₃, 0)`.
pub fn ode_spec(sys: &Arc<NonholonomicSystem>) -> HGMOdeSpec {
    momenta::fitted_ode_spec(sys, "gamma3", GAMMA3_DOMAIN, |g3| vec![0.0, 0.0, 0.0, g3.acos(), 0.0], gamma3)
}

/// HGS basis `η_k = f_k ζ₁ + g_k ζ₂` from a solved ODE.
pub fn hgs_basis(sol: Arc<HGMSolution>) -> HgsBasis {
    HgsBasis::new(2, move |q| sol.eval_ad(gamma3(q)).expect("γ₃ outside the HGM grid"))
}

/// Body angular velocity at a phase point.
pub fn omega(sys: &NonholonomicSystem, z: &[f64]) -> Vector3<f64> {
    let qd = sys.base_velocity(z);
    let w = so3::lambda_rows(&z[2..5], 5, 2) * qd;
    Vector3::new(w[0], w[1], w[2])
}

fn real3(v: &V3) -> Vector3<f64> {
    v.map(|x| x.re)
}

pub fn gamma_s(p: &SolidParams, z: &[f64]) -> (Vector3<f64>, Vector3<f64>) {
    let g = so3::gamma(&lift(&z[2..5]));
    (real3(&g), real3(&p.s(&g)))
}

/// `M = 𝕀Ω + m s × (Ω × s)`.
pub fn m_oracle(p: &SolidParams, s: &Vector3<f64>, om: &Vector3<f64>) -> Vector3<f64> {
    Vector3::new(p.i1 * om[0], p.i1 * om[1], p.i3 * om[2]) + s.cross(&om.cross(s)) * p.m
}

/// `(p_x, p_y) = (m⟨α, s × Ω⟩, m⟨β, s × Ω⟩)`.
pub fn eliminated_oracle(p: &SolidParams, z: &[f64], om: &Vector3<f64>) -> [f64; 2] {
    let (a, b, g) = so3::rows(&lift(&z[2..5]));
    let s = real3(&p.s(&g));
    let sxo = s.cross(om);
    [p.m * real3(&a).dot(&sxo), p.m * real3(&b).dot(&sxo)]
}

/// `B = mϱ⟨γ, s⟩⟨Ω, dλ⟩` as a coordinate matrix.
pub fn b_oracle(p: &SolidParams, sys: &NonholonomicSystem, z: &[f64]) -> DMatrix<f64> {
    let (g, s) = gamma_s(p, z);
    let rho = p.varrho(Ad::from(g[2])).re;
    let lam = so3::lambda_rows(&z[2..5], 5, 2);
    so3::omega_dlambda(&lam, &omega(sys, z)) * (p.m * rho * g.dot(&s))
}

/// `(𝒬, 𝒫)` with `𝒬 = −m(ϱ²⟨Ω,γ⟩ + ϱ′c₃)`, `𝒫 = m(Lϱ⟨Ω,γ⟩ + L′c₃)`,
/// `L = ϱγ₃ − ζ` and c₃ the third component of `γ × (Ω × s)`.
pub fn qp_oracle(p: &SolidParams, sys: &NonholonomicSystem, z: &[f64]) -> [f64; 2] {
    let (g, s) = gamma_s(p, z);
    let om = omega(sys, z);
    let g3 = Ad::new(g[2], 1.0);
    let rho = p.varrho(g3);
    let l = rho * g3 - p.zeta(g3);
    let c3 = g.cross(&om.cross(&s))[2];
    let og = om.dot(&g);
    [
        -p.m * (rho.re * rho.re * og + rho.eps * c3),
        p.m * (l.re * rho.re * og + l.eps * c3),
    ]
}

/// Jellett's integral `⟨M, s⟩ = −c𝒥₁ − r𝒥₂`: constant coefficients.
pub fn jellett_coefficients(p: &SolidParams) -> [f64; 2] {
    [-p.c, -p.r]
}
