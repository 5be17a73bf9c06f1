//! Chaplygin ball on `q = (x, y, φ₁, θ, ψ)`: an inhomogeneous sphere with
//! centred mass rolling without sliding, symmetry group `SO(2) ⋉ ℝ²`.
//!
//! The frame is H = {X₁ − γ₁Y, X₂ − γ₂Y}, S = {Y = ⟨γ, X^L⟩}, W = {∂x, ∂y},
//! which needs γ₃ ≠ 0.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Ad, AdaptedFrame, Blocks, Chart};
use crate::symmetry::{Invariant, SymmetryData};
use crate::system::NonholonomicSystem;
use crate::systems::so3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChaplyginParams {
    pub m: f64,
    #[serde(rename = "R")]
    pub r: f64,
    #[serde(rename = "I")]
    pub inertia: [f64; 3],
}

impl Default for ChaplyginParams {
    fn default() -> Self {
        ChaplyginParams {
            m: 1.0,
            r: 1.0,
            inertia: [0.2, 0.3, 0.4],
        }
    }
}

impl ChaplyginParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.m > 0.0 && self.r > 0.0 && self.inertia.iter().all(|i| *i > 0.0)) {
            return Err(Error::Params("Chaplygin parameters must be positive".into()));
        }
        Ok(())
    }
}

/// Columns of the rolling fields `X_i = X^L_i + Rβ_i∂x − Rα_i∂y`.
fn rolling(r: f64, q: &[Ad]) -> DMatrix<Ad> {
    let e = &q[2..5];
    let (a, b, _) = so3::rows(e);
    let xl = so3::left_fields(e);
    let mut x = DMatrix::from_element(5, 3, so3::zero());
    for i in 0..3 {
        x[(0, i)] = b[i] * r;
        x[(1, i)] = -a[i] * r;
        for k in 0..3 {
            x[(2 + k, i)] = xl[(k, i)];
        }
    }
    x
}

fn frame(p: ChaplyginParams) -> impl Fn(&[Ad]) -> DMatrix<Ad> + Send + Sync {
    move |q| {
        let g = so3::gamma(&q[2..5]);
        let x = rolling(p.r, q);
        let y = &x * DVector::from_column_slice(g.as_slice());
        let mut v = DMatrix::from_element(5, 5, so3::zero());
        v.set_column(0, &(x.column(0) - &y * g[0]));
        v.set_column(1, &(x.column(1) - &y * g[1]));
        v.set_column(2, &y);
        v[(0, 3)] = so3::one();
        v[(1, 4)] = so3::one();
        v
    }
}

fn metric(p: ChaplyginParams) -> impl Fn(&[Ad]) -> DMatrix<Ad> + Send + Sync {
    move |q| {
        let l = so3::lmat(&q[2..5]);
        let i = so3::M3::from_diagonal(&so3::V3::new(
            Ad::from(p.inertia[0]),
            Ad::from(p.inertia[1]),
            Ad::from(p.inertia[2]),
        ));
        let mut g = DMatrix::from_element(5, 5, so3::zero());
        g[(0, 0)] = Ad::from(p.m);
        g[(1, 1)] = Ad::from(p.m);
        so3::put(&mut g, 2, 2, &(l.transpose() * i * l));
        g
    }
}

pub fn chart() -> Chart {
    Chart::new(
        "chaplygin",
        &["x", "y", "phi1", "theta", "psi"],
        vec![(-2.0, 2.0), (-2.0, 2.0), (-PI, PI), (0.3, 1.2), (-PI, PI)],
        Arc::new(|q| q[3].sin().abs() > 1e-6 && q[3].cos().abs() > 1e-6),
    )
}

/// Generators of `(c; a, b) ↦ c(⟨γ, X^L⟩ − y∂x + x∂y) + a∂x + b∂y`.
fn generator(q: &[Ad]) -> DMatrix<Ad> {
    let xr = so3::right_fields(&q[2..5]);
    let mut g = DMatrix::from_element(5, 3, so3::zero());
    g[(0, 0)] = -q[1];
    g[(1, 0)] = q[0];
    for k in 0..3 {
        g[(2 + k, 0)] = xr[(k, 2)];
    }
    g[(0, 1)] = so3::one();
    g[(1, 2)] = so3::one();
    g
}

/// Momenta `M_i = p(X_i)` as invariant functions.
fn moment(p: ChaplyginParams, i: usize) -> impl Fn(&[Ad], &[Ad]) -> Ad + Send + Sync {
    move |q, pc| {
        let x = rolling(p.r, q);
        (0..5).map(|mu| x[(mu, i)] * pc[mu]).sum()
    }
}

pub fn symmetry(p: ChaplyginParams) -> SymmetryData {
    let mut inv = Vec::new();
    for (i, name) in ["gamma1", "gamma2", "gamma3"].iter().enumerate() {
        inv.push(Invariant::new(name, move |q, _| so3::gamma(&q[2..5])[i]));
    }
    for (i, name) in ["M1", "M2", "M3"].iter().enumerate() {
        inv.push(Invariant::new(name, moment(p, i)));
    }
    SymmetryData::new(
        &["rot", "e_x", "e_y"],
        generator,
        |q| DMatrix::from_column_slice(3, 1, &[so3::one(), q[1], -q[0]]),
        |_| {
            let mut w = DMatrix::from_element(3, 2, so3::zero());
            w[(1, 0)] = so3::one();
            w[(2, 1)] = so3::one();
            w
        },
    )
    .with_invariants(inv)
}

pub fn make(p: ChaplyginParams) -> Result<Arc<NonholonomicSystem>> {
    p.validate()?;
    let fr = AdaptedFrame::new(Blocks::new(2, 1, 2), frame(p));
    Ok(Arc::new(NonholonomicSystem::new(
        "chaplygin",
        chart(),
        fr,
        metric(p),
        |_| Ad::from(0.0),
        symmetry(p),
    )))
}

/// Body angular velocity at a phase point.
pub fn omega(sys: &NonholonomicSystem, z: &[f64]) -> Vector3<f64> {
    let qd = sys.base_velocity(z);
    let lam = so3::lambda_rows(&z[2..5], 5, 2);
    let w = lam * qd;
    Vector3::new(w[0], w[1], w[2])
}

/// `M = (𝕀 + mR²)Ω − mR²⟨γ, Ω⟩γ`.
pub fn m_oracle(p: &ChaplyginParams, gamma: &Vector3<f64>, om: &Vector3<f64>) -> Vector3<f64> {
    let mr2 = p.m * p.r * p.r;
    let i = Vector3::from(p.inertia);
    i.component_mul(om) + om * mr2 - gamma * (mr2 * gamma.dot(om))
}

/// `(p_x, p_y) = (mR⟨β, Ω⟩, −mR⟨α, Ω⟩)`.
pub fn eliminated_oracle(p: &ChaplyginParams, e: &[f64], om: &Vector3<f64>) -> [f64; 2] {
    let (a, b, _) = so3::rows(&crate::geom::lift(e));
    let a = a.map(|v| v.re);
    let b = b.map(|v| v.re);
    [p.m * p.r * b.dot(om), -p.m * p.r * a.dot(om)]
}

/// `B = R²m⟨Ω, dλ⟩` as a coordinate matrix.
pub fn b_oracle(p: &ChaplyginParams, sys: &NonholonomicSystem, z: &[f64]) -> DMatrix<f64> {
    let lam = so3::lambda_rows(&z[2..5], 5, 2);
    so3::omega_dlambda(&lam, &omega(sys, z)) * (p.r * p.r * p.m)
}

pub fn gamma_at(z: &[f64]) -> Vector3<f64> {
    so3::gamma(&crate::geom::lift(&z[2..5])).map(|v| v.re)
}

/// `J_η = ⟨γ, M⟩`; on this frame it is the S momentum coordinate.
pub fn j_eta(z: &[f64]) -> f64 {
    z[7]
}
