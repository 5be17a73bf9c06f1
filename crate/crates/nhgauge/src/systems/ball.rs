//! Homogeneous ball rolling inside a convex surface of revolution
//! `z = φ(x² + y²)`, on `q = (x, y, φ₁, θ, ψ)`. Symmetry group `S¹ × SO(3)`,
//! shape space coordinatized by `p₁ = x² + y²`.
//!
//! Three frames share one Lagrangian:
//! - the constraint frame `{Y_x, Y_y, X_n | Z₁, Z₂}`, regular at the origin;
//! - the base frame `{xY_x + yY_y | 𝒴₁ = −yY_x + xY_y, 𝒴₂ = X_n | Z₁, Z₂}`;
//! - the HGS frame, which replaces `𝒴_j` by `f_k𝒴₁ + g_k𝒴₂`.
//!
//! Frame momenta on the constraint frame are `(p_x, p_y, M_n)`.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauge::{BracketOracle, GaugeTwoForm, HgsBasis};
use crate::geom::{lift, Ad, AdaptedFrame, Blocks, Chart, DualNum};
use crate::momenta::{HGMOdeSpec, HGMSolution};
use crate::symmetry::{Invariant, SymmetryData};
use crate::system::NonholonomicSystem;
use crate::systems::so3::{self, V3};

/// Profile `φ(s) = Σ c_k s^k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Profile {
    pub coeffs: Vec<f64>,
}

impl Profile {
    pub fn polynomial(coeffs: &[f64]) -> Self {
        Profile { coeffs: coeffs.to_vec() }
    }

    /// k-th derivative at s.
    pub fn deriv<T: DualNum<Primitive = f64> + Copy>(&self, s: T, k: usize) -> T {
        let mut acc = T::from(0.0);
        for (j, c) in self.coeffs.iter().enumerate().skip(k).rev() {
            let fall: f64 = ((j - k + 1)..=j).map(|i| i as f64).product();
            acc = acc * s + c * fall;
        }
        acc
    }

    pub fn value<T: DualNum<Primitive = f64> + Copy>(&self, s: T) -> T {
        self.deriv(s, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BallParams {
    pub m: f64,
    #[serde(rename = "R")]
    pub r: f64,
    #[serde(rename = "I")]
    pub inertia: f64,
    #[serde(rename = "g_accel")]
    pub g: f64,
    pub profile: Profile,
}

impl Default for BallParams {
    fn default() -> Self {
        BallParams {
            m: 1.0,
            r: 0.1,
            inertia: 0.004,
            g: 9.81,
            profile: Profile::polynomial(&[0.0, 0.5, 0.25]),
        }
    }
}

/// Half width of the (x, y) sampling box; p₁ stays below 4.
pub const XY_HALF_WIDTH: f64 = 1.4;
/// Shape interval for the HGM solve.
pub const P1_DOMAIN: (f64, f64) = (1e-3, 4.0);
/// Points with `p₁` below this are treated as singular.
pub const P1_REGULAR: f64 = 0.01;

impl BallParams {
    pub fn e(&self) -> f64 {
        self.inertia + self.m * self.r * self.r
    }

    /// Positivity, convexity of the profile and one contact point, sampled on
    /// the shape interval. A zero φ″ (paraboloid) is allowed.
    pub fn validate(&self) -> Result<()> {
        if !(self.m > 0.0 && self.r > 0.0 && self.inertia > 0.0 && self.g > 0.0) {
            return Err(Error::Params("ball parameters must be positive".into()));
        }
        for k in 1..=200 {
            let s = P1_DOMAIN.1 * k as f64 / 200.0;
            let (d1, d2) = (self.profile.deriv(s, 1), self.profile.deriv(s, 2));
            if !(d1 > 0.0 && d2 >= -1e-12) {
                return Err(Error::Params(format!("profile not convex at s = {s}")));
            }
            let (mu1, mu2) = curvatures(self, s);
            if mu1.abs().max(mu2.abs()) > 1.0 / self.r {
                return Err(Error::Params(format!("surface curvature exceeds 1/R at s = {s}")));
            }
        }
        Ok(())
    }
}

/// Exterior unit normal `n₃ = −(1 + 4p₁φ′²)^{−1/2}`, `n₁ = 2xφ′n₃`, `n₂ = 2yφ′n₃`.
pub fn normal<T: DualNum<Primitive = f64> + Copy>(p: &BallParams, x: T, y: T) -> [T; 3] {
    let s = x * x + y * y;
    let d = p.profile.deriv(s, 1);
    let n3 = -(s * d * d * 4.0 + 1.0).sqrt().recip();
    [x * d * n3 * 2.0, y * d * n3 * 2.0, n3]
}

/// `n` with its x and y partials.
pub fn normal_jet(p: &BallParams, x: f64, y: f64) -> ([f64; 3], [f64; 3], [f64; 3]) {
    let nx = normal(p, Ad::new(x, 1.0), Ad::from(y));
    let ny = normal(p, Ad::from(x), Ad::new(y, 1.0));
    (nx.map(|v| v.re), nx.map(|v| v.eps), ny.map(|v| v.eps))
}

/// Principal curvatures `(μ₁, μ₂)` at shape value p₁.
pub fn curvatures(p: &BallParams, p1: f64) -> (f64, f64) {
    let d1 = p.profile.deriv(p1, 1);
    let d2 = p.profile.deriv(p1, 2);
    let w = 1.0 + 4.0 * p1 * d1 * d1;
    (-2.0 * d1 / w.sqrt(), -(2.0 * d1 + 4.0 * p1 * d2) / w.powf(1.5))
}

pub fn n3_of(p: &BallParams, p1: f64) -> f64 {
    let d = p.profile.deriv(p1, 1);
    -1.0 / (1.0 + 4.0 * p1 * d * d).sqrt()
}

/// `F̄₁ = 2R²n₃²/E`.
pub fn f1_bar(p: &BallParams, p1: f64) -> f64 {
    2.0 * p.r * p.r * n3_of(p, p1).powi(2) / p.e()
}

/// `F̄₃ = 2(φ′ + 2p₁φ″)n₃²`.
pub fn f3_bar(p: &BallParams, p1: f64) -> f64 {
    let (d1, d2) = (p.profile.deriv(p1, 1), p.profile.deriv(p1, 2));
    2.0 * (d1 + 2.0 * p1 * d2) * n3_of(p, p1).powi(2)
}

/// `F̄₄ = 4(2φ′³ − φ″)n₃²`.
pub fn f4_bar(p: &BallParams, p1: f64) -> f64 {
    let (d1, d2) = (p.profile.deriv(p1, 1), p.profile.deriv(p1, 2));
    4.0 * (2.0 * d1.powi(3) - d2) * n3_of(p, p1).powi(2)
}

/// Coefficients of `Z_a` and `Y`: `(1/(Rn₃), n₁/(Rn₃), n₂/(Rn₃))`.
fn scaled(p: &BallParams, n: &[Ad; 3]) -> (Ad, Ad, Ad) {
    let k = (n[2] * p.r).recip();
    (k, n[0] * k, n[1] * k)
}

/// Constraint frame `{Y_x, Y_y, X_n, Z₁, Z₂}` as columns.
fn constraint_frame(p: &BallParams, q: &[Ad]) -> DMatrix<Ad> {
    let n = normal(p, q[0], q[1]);
    let xr = so3::right_fields(&q[2..5]);
    let xn = xr * V3::new(n[0], n[1], n[2]);
    let (k, a1, a2) = scaled(p, &n);
    let x1 = xr.column(0).into_owned();
    let x2 = xr.column(1).into_owned();
    let mut v = DMatrix::from_element(5, 5, so3::zero());
    let cols: [V3; 5] = [
        xn * a2 - x2 * k,
        -xn * a1 + x1 * k,
        xn,
        x2 * k - xn * a2,
        -x1 * k + xn * a1,
    ];
    for (c, col) in cols.iter().enumerate() {
        for i in 0..3 {
            v[(2 + i, c)] = col[i];
        }
    }
    v[(0, 0)] = so3::one();
    v[(1, 1)] = so3::one();
    v
}

fn base_frame(p: &BallParams, q: &[Ad]) -> DMatrix<Ad> {
    let c = constraint_frame(p, q);
    let (x, y) = (q[0], q[1]);
    let mut v = c.clone();
    v.set_column(0, &(c.column(0) * x + c.column(1) * y));
    v.set_column(1, &(c.column(1) * x - c.column(0) * y));
    v.set_column(2, &c.column(2));
    v
}

/// `m(δ + ∇z∇zᵀ) ⊕ I LᵀL` with `∇z = 2φ′(x, y)`.
fn metric(p: BallParams) -> impl Fn(&[Ad]) -> DMatrix<Ad> + Send + Sync {
    move |q| {
        let s = q[0] * q[0] + q[1] * q[1];
        let d = p.profile.deriv(s, 1) * 2.0;
        let grad = [q[0] * d, q[1] * d];
        let mut g = DMatrix::from_element(5, 5, so3::zero());
        for i in 0..2 {
            for j in 0..2 {
                let delta = if i == j { 1.0 } else { 0.0 };
                g[(i, j)] = (grad[i] * grad[j] + delta) * p.m;
            }
        }
        let l = so3::lmat(&q[2..5]);
        so3::put(&mut g, 2, 2, &(l.transpose() * l * Ad::from(p.inertia)));
        g
    }
}

pub fn chart() -> Chart {
    let w = XY_HALF_WIDTH;
    Chart::new(
        "ball",
        &["x", "y", "phi1", "theta", "psi"],
        vec![(-w, w), (-w, w), (-PI, PI), (0.3, PI - 0.3), (-PI, PI)],
        Arc::new(|q| q[3].sin().abs() > 1e-6),
    )
}

/// Generators of `(c; e) ↦ c(−y∂x + x∂y + X^R_3) + Σ e_i X^L_i`.
fn generator(q: &[Ad]) -> DMatrix<Ad> {
    let e = &q[2..5];
    let xr = so3::right_fields(e);
    let xl = so3::left_fields(e);
    let mut g = DMatrix::from_element(5, 4, so3::zero());
    g[(0, 0)] = -q[1];
    g[(1, 0)] = q[0];
    for k in 0..3 {
        g[(2 + k, 0)] = xr[(k, 2)];
        for i in 0..3 {
            g[(2 + k, 1 + i)] = xl[(k, i)];
        }
    }
    g
}

/// `C₁ = −(n₁n₂, n₂² − 1, n₂n₃)/(Rn₃)`, `C₂ = (n₁² − 1, n₁n₂, n₁n₃)/(Rn₃)`.
fn c_vectors(p: &BallParams, n: &[Ad; 3]) -> (V3, V3) {
    let k = (n[2] * p.r).recip();
    let c1 = V3::new(n[0] * n[1], n[1] * n[1] - 1.0, n[1] * n[2]) * (-k);
    let c2 = V3::new(n[0] * n[0] - 1.0, n[0] * n[1], n[0] * n[2]) * k;
    (c1, c2)
}

/// Algebra coefficients of `(c; C g)`: `(0; C g)_Q = ⟨C, X^R⟩`.
fn so3_part(q: &[Ad], c0: Ad, c: &V3) -> DVector<Ad> {
    let g = so3::rotation(&q[2..5]);
    let v = g.transpose() * c;
    DVector::from_column_slice(&[c0, v[0], v[1], v[2]])
}

fn w_sections(p: BallParams) -> impl Fn(&[Ad]) -> DMatrix<Ad> + Send + Sync {
    move |q| {
        let n = normal(&p, q[0], q[1]);
        let (c1, c2) = c_vectors(&p, &n);
        let mut w = DMatrix::from_element(4, 2, so3::zero());
        w.set_column(0, &so3_part(q, so3::zero(), &c1));
        w.set_column(1, &so3_part(q, so3::zero(), &c2));
        w
    }
}

/// `ζ₁ = (1; 0) + yξ₁ − xξ₂ − (0; γ)`, `ζ₂ = (0; n g)`.
fn s_sections(p: BallParams) -> impl Fn(&[Ad]) -> DMatrix<Ad> + Send + Sync {
    move |q| {
        let n = normal(&p, q[0], q[1]);
        let (c1, c2) = c_vectors(&p, &n);
        let e3 = V3::new(so3::zero(), so3::zero(), so3::one());
        let mut z = DMatrix::from_element(4, 2, so3::zero());
        z.set_column(0, &so3_part(q, so3::one(), &(c1 * q[1] - c2 * q[0] - e3)));
        z.set_column(1, &so3_part(q, so3::zero(), &V3::new(n[0], n[1], n[2])));
        z
    }
}

/// Constraint-frame momenta `(p_x, p_y, M_n)` from the covariant momentum.
pub fn frame_momenta(p: &BallParams, q: &[Ad], pc: &[Ad]) -> [Ad; 3] {
    let v = constraint_frame(p, q);
    let pv = DVector::from_column_slice(pc);
    let m = v.columns(0, 3).transpose() * pv;
    [m[0], m[1], m[2]]
}

fn pvals(p: &BallParams, q: &[Ad], pc: &[Ad]) -> [Ad; 5] {
    let [px, py, mn] = frame_momenta(p, q, pc);
    let (x, y) = (q[0], q[1]);
    [px * px + py * py, x * x + y * y, x * px + y * py, x * py - y * px, mn]
}

pub const INVARIANT_NAMES: [&str; 5] = ["p0", "p1", "p2", "p3", "p4"];

pub fn symmetry(p: &BallParams) -> SymmetryData {
    let inv = (0..5)
        .map(|k| {
            let p = p.clone();
            Invariant::new(INVARIANT_NAMES[k], move |q, pc| pvals(&p, q, pc)[k])
        })
        .collect();
    SymmetryData::new(&["rot", "e1", "e2", "e3"], generator, s_sections(p.clone()), w_sections(p.clone()))
        .with_regular(|q| q[0] * q[0] + q[1] * q[1] > P1_REGULAR)
        .with_invariants(inv)
}

pub const MOMENTUM_SCALE: f64 = 0.2;

fn potential(p: BallParams) -> impl Fn(&[Ad]) -> Ad + Send + Sync {
    move |q| p.profile.value(q[0] * q[0] + q[1] * q[1]) * (p.m * p.g)
}

/// The ball on its base frame, blocks (1, 2, 2).
pub fn make(p: BallParams) -> Result<Arc<NonholonomicSystem>> {
    p.validate()?;
    let pf = p.clone();
    let fr = AdaptedFrame::new(Blocks::new(1, 2, 2), move |q| base_frame(&pf, q));
    Ok(Arc::new(
        NonholonomicSystem::new("ball", chart(), fr, metric(p.clone()), potential(p.clone()), symmetry(&p))
            .with_momentum_scale(MOMENTUM_SCALE),
    ))
}

/// The ball on the constraint frame, blocks (3, 0, 2). It has no S block and
/// is regular at the origin, so it is the one used for trajectories.
pub fn constraint_system(p: &BallParams, base: &NonholonomicSystem) -> Arc<NonholonomicSystem> {
    let pf = p.clone();
    let fr = AdaptedFrame::new(Blocks::new(3, 0, 2), move |q| constraint_frame(&pf, q));
    let sym = base
        .symmetry
        .with_s_sections(|_| DMatrix::from_element(4, 0, so3::zero()))
        .with_regular(|_| true);
    Arc::new(base.with_frame("ball-constraint", chart(), fr, sym))
}

pub fn shape(q: &[Ad]) -> Ad {
    q[0] * q[0] + q[1] * q[1]
}

/// `(f, g)′ = Φ(f, g)` with `Φ = [[0, (RI/2E)F̄₄], [F̄₃/(2R), 0]]` in p₁.
pub fn ode_spec(p: &BallParams) -> HGMOdeSpec {
    let p = p.clone();
    HGMOdeSpec::new("p1", P1_DOMAIN, move |s| {
        // signs follow the pushforward of X_nh, see `reduced_field`
        let a = p.r * p.inertia / (2.0 * p.e()) * f4_bar(&p, s);
        let b = f3_bar(&p, s) / (2.0 * p.r);
        DMatrix::from_row_slice(2, 2, &[0.0, a, b, 0.0])
    })
}

pub fn hgs_basis(sol: Arc<HGMSolution>) -> HgsBasis {
    HgsBasis::new(2, move |q| sol.eval_ad(shape(q)).expect("p₁ outside the HGM grid"))
}

/// Values at a phase point of any ball frame.
#[derive(Debug, Clone, Copy)]
pub struct Local {
    pub x: f64,
    pub y: f64,
    pub px: f64,
    pub py: f64,
    pub mn: f64,
    pub n: [f64; 3],
    pub nx: [f64; 3],
    pub ny: [f64; 3],
}

impl Local {
    pub fn from_cov(p: &BallParams, q: &[f64], pc: &[f64]) -> Self {
        let [px, py, mn] = frame_momenta(p, &lift(q), &lift(pc)).map(|v| v.re);
        let (n, nx, ny) = normal_jet(p, q[0], q[1]);
        Local {
            x: q[0],
            y: q[1],
            px,
            py,
            mn,
            n,
            nx,
            ny,
        }
    }

    pub fn at(p: &BallParams, sys: &NonholonomicSystem, z: &[f64]) -> Self {
        Local::from_cov(p, &z[..5], sys.p_cov(z).as_slice())
    }

    pub fn p1(&self) -> f64 {
        self.x * self.x + self.y * self.y
    }
    pub fn p2(&self) -> f64 {
        self.x * self.px + self.y * self.py
    }
    pub fn p3(&self) -> f64 {
        self.x * self.py - self.y * self.px
    }
    pub fn p0(&self) -> f64 {
        self.px * self.px + self.py * self.py
    }
}

/// `(D^n_xy, D^x_xn, D^y_xn, D^x_yn, D^y_yn)`.
pub fn d_functions(p: &BallParams, l: &Local) -> [f64; 5] {
    let r = p.r;
    let [n1, n2, n3] = l.n;
    let dxy = (l.nx[0] + l.ny[1] + 1.0 / r) / (r * n3);
    // derivative terms enter with the sign fixed by dε^a(Y, X_n)
    let dxnx = r * (l.ny[0] * n3 - n1 * l.ny[2] + n1 * n2 / (r * n3));
    let dxny = r * (-l.nx[0] * n3 + n1 * l.nx[2] - (n1 * n1 + n3 * n3) / (r * n3));
    let dynx = r * (l.ny[1] * n3 - n2 * l.ny[2] + (n2 * n2 + n3 * n3) / (r * n3));
    [dxy, dxnx, dxny, dynx, -dxnx]
}

/// `K_xn = p_x D^x_xn + p_y D^y_xn`, `K_yn = p_x D^x_yn + p_y D^y_yn`.
pub fn k_terms(p: &BallParams, l: &Local) -> (f64, f64) {
    let d = d_functions(p, l);
    (l.px * d[1] + l.py * d[2], l.px * d[3] + l.py * d[4])
}

/// `(ẋ, ẏ, ω_n)` from the momenta.
pub fn velocities(p: &BallParams, l: &Local) -> [f64; 3] {
    let k = p.r * p.r / p.e();
    let [n1, n2, _] = l.n;
    [
        k * (l.px * (1.0 - n1 * n1) - l.py * n1 * n2),
        k * (l.py * (1.0 - n2 * n2) - l.px * n1 * n2),
        l.mn / p.inertia,
    ]
}

/// `𝓗 = (R²/2E)((1−n₁²)p_x² + (1−n₂²)p_y² − 2p_xp_yn₁n₂) + M_n²/2I + m𝐠φ`.
pub fn hamiltonian_oracle(p: &BallParams, l: &Local) -> f64 {
    let [n1, n2, _] = l.n;
    p.r * p.r / (2.0 * p.e())
        * ((1.0 - n1 * n1) * l.px * l.px + (1.0 - n2 * n2) * l.py * l.py - 2.0 * l.px * l.py * n1 * n2)
        + l.mn * l.mn / (2.0 * p.inertia)
        + p.m * p.g * p.profile.value(l.p1())
}

/// `Ω_𝒞` on `{Ỹ_x, Ỹ_y, X̃_n, ∂p_x, ∂p_y, ∂M_n}`.
pub fn omega_c_oracle(p: &BallParams, l: &Local) -> DMatrix<f64> {
    let d = d_functions(p, l);
    let (kx, ky) = k_terms(p, l);
    let ie = p.inertia / p.e();
    let mut a = DMatrix::zeros(3, 3);
    a[(0, 1)] = -l.mn * d[0];
    a[(0, 2)] = -ie * kx;
    a[(1, 2)] = -ie * ky;
    let a = &a - a.transpose();
    let mut om = DMatrix::zeros(6, 6);
    om.view_mut((0, 0), (3, 3)).copy_from(&a);
    for i in 0..3 {
        om[(i, 3 + i)] = 1.0;
        om[(3 + i, i)] = -1.0;
    }
    om
}

/// A bivector on the 𝒞 basis from its three momentum couplings
/// `c_xy ∂p_x∧∂p_y + c_yn ∂p_y∧∂M_n + c_nx ∂M_n∧∂p_x`.
fn bivector_c(c_xy: f64, c_yn: f64, c_nx: f64) -> DMatrix<f64> {
    let mut pi = DMatrix::zeros(6, 6);
    for i in 0..3 {
        pi[(i, 3 + i)] = 1.0;
        pi[(3 + i, i)] = -1.0;
    }
    for (i, j, c) in [(3, 4, c_xy), (4, 5, c_yn), (5, 3, c_nx)] {
        pi[(i, j)] += c;
        pi[(j, i)] -= c;
    }
    pi
}

/// π_nh on the 𝒞 basis.
pub fn pi_nh_oracle(p: &BallParams, l: &Local) -> DMatrix<f64> {
    let d = d_functions(p, l);
    let ie = p.inertia / p.e();
    bivector_c(
        l.mn * d[0],
        ie * (l.px * d[3] + l.py * d[4]),
        -ie * (l.px * d[1] + l.py * d[2]),
    )
}

/// π_B on the 𝒞 basis.
pub fn pi_b_oracle(p: &BallParams, l: &Local) -> DMatrix<f64> {
    let ie = p.inertia / p.e();
    let p1 = l.p1();
    let c = -l.p3() * p.r * f4_bar(p, p1) * ie;
    bivector_c(l.mn * f3_bar(p, p1) / p.r, -l.y * c, l.x * c)
}

/// Momentum components of X_nh, `(ṗ_x, ṗ_y, Ṁ_n)`.
pub fn x_nh_momenta_oracle(p: &BallParams, l: &Local) -> [f64; 3] {
    let d = d_functions(p, l);
    let (kx, ky) = k_terms(p, l);
    let [xd, yd, wn] = velocities(p, l);
    let ie = p.inertia / p.e();
    // the kinetic term carries R²/E
    let pn = (l.px * l.n[0] + l.py * l.n[1]) * p.r * p.r / p.e();
    let dphi = p.profile.deriv(l.p1(), 1);
    [
        yd * l.mn * d[0] + pn * (l.px * l.nx[0] + l.py * l.nx[1]) + wn * ie * kx - 2.0 * p.m * p.g * l.x * dphi,
        -xd * l.mn * d[0] + pn * (l.px * l.ny[0] + l.py * l.ny[1]) + wn * ie * ky - 2.0 * p.m * p.g * l.y * dphi,
        ie * (-xd * kx - yd * ky),
    ]
}

/// Coordinate covectors `dx`, `dy`, `β_n = ⟨n, ρ⟩` on Q.
pub fn coframe_rows(p: &BallParams, q: &[f64]) -> [DVector<f64>; 3] {
    let xr = so3::right_fields(&lift(&q[2..5])).map(|v| v.re);
    let rho = xr.try_inverse().expect("Euler chart singular");
    let (n, _, _) = normal_jet(p, q[0], q[1]);
    let mut beta = DVector::zeros(5);
    for i in 0..3 {
        for k in 0..3 {
            beta[2 + k] += n[i] * rho[(i, k)];
        }
    }
    let mut dx = DVector::zeros(5);
    dx[0] = 1.0;
    let mut dy = DVector::zeros(5);
    dy[1] = 1.0;
    [dx, dy, beta]
}

/// `a d̃x∧d̃y + b d̃x∧β̃_n + c d̃y∧β̃_n` as a coordinate matrix on Q.
pub fn form_xyn(p: &BallParams, q: &[f64], a: f64, b: f64, c: f64) -> DMatrix<f64> {
    let [dx, dy, bn] = coframe_rows(p, q);
    let w = |u: &DVector<f64>, v: &DVector<f64>| u * v.transpose() - v * u.transpose();
    w(&dx, &dy) * a + w(&dx, &bn) * b + w(&dy, &bn) * c
}

/// `⟨J, 𝒦_W⟩ = (I/E)K_xn d̃x∧β̃_n + (I/E)K_yn d̃y∧β̃_n`.
pub fn j_kw_oracle(p: &BallParams, q: &[f64], l: &Local) -> DMatrix<f64> {
    let (kx, ky) = k_terms(p, l);
    let ie = p.inertia / p.e();
    form_xyn(p, q, 0.0, ie * kx, ie * ky)
}

/// `⟨J, d^𝒞A^i_S ⊗ η_i⟩ = M_n(D^n_xy + F₃/R)d̃x∧d̃y + p₃(I/E)RF₄(x d̃x + y d̃y)∧β̃_n`.
pub fn j_das_oracle(p: &BallParams, q: &[f64], l: &Local) -> DMatrix<f64> {
    let d = d_functions(p, l);
    let p1 = l.p1();
    let c = -l.p3() * p.inertia / p.e() * p.r * f4_bar(p, p1);
    form_xyn(p, q, l.mn * (d[0] - f3_bar(p, p1) / p.r), l.x * c, l.y * c)
}

/// The gauge form in closed form, as the sum of the two displays above.
pub fn b_oracle(p: &BallParams, q: &[f64], l: &Local) -> DMatrix<f64> {
    j_kw_oracle(p, q, l) + j_das_oracle(p, q, l)
}

/// `Φ(x,y) = (1 + 2φ′Rn₃)I/(R²n₃)`.
pub fn phi_factor(p: &BallParams, l: &Local) -> f64 {
    let dphi = p.profile.deriv(l.p1(), 1);
    let n3 = l.n[2];
    (1.0 + 2.0 * dphi * p.r * n3) * p.inertia / (p.r * p.r * n3)
}

/// `B = Φ(ω_n d̃x∧d̃y + ẋ d̃y∧β̃_n + ẏ β̃_n∧d̃x)`.
pub fn b_velocity_oracle(p: &BallParams, q: &[f64], l: &Local) -> DMatrix<f64> {
    let f = phi_factor(p, l);
    let [xd, yd, wn] = velocities(p, l);
    form_xyn(p, q, f * wn, -f * yd, f * xd)
}

pub fn b_oracle_form(p: &BallParams) -> GaugeTwoForm {
    let p = p.clone();
    GaugeTwoForm::new("B_closed_form", move |q, pc| {
        let l = Local::from_cov(&p, q, pc);
        Ok(b_oracle(&p, q, &l))
    })
}

/// `(2I/E)x²D^x_yn` at `y = 0`, which is `(2I/E)x²n₃(1 + Rn₂^y)`.
pub fn defect_oracle(p: &BallParams, x: f64) -> f64 {
    let (n, _, ny) = normal_jet(p, x, 0.0);
    2.0 * p.inertia / p.e() * x * x * n[2] * (1.0 + p.r * ny[1])
}

/// The printed form `(2I/E)x²n₃(1 − Rn₂^y)`, kept for comparison.
pub fn defect_printed(p: &BallParams, x: f64) -> f64 {
    let (n, _, ny) = normal_jet(p, x, 0.0);
    2.0 * p.inertia / p.e() * x * x * n[2] * (1.0 - p.r * ny[1])
}

fn oracle(i: usize, j: usize, f: impl Fn(&Local) -> f64 + Send + Sync + 'static, p: &BallParams) -> BracketOracle {
    let p = p.clone();
    BracketOracle {
        i,
        j,
        f: Arc::new(move |q, pc| f(&Local::from_cov(&p, q, pc))),
    }
}

/// Brackets `{p_i, p_j}_red^B` for `i < j`, in the ordering `π(dp_i, dp_j)`.
///
/// With `F₃ = −F̄₃`, `F₄ = −F̄₄` (the signs carried by the pushforward of
/// X_nh), entries free of F change sign against the printed table and the
/// others keep it. `{p₀, p₃} = 2p₂p₄F̄₃/R` is fixed by `{p₀, J_k} = 0`.
pub fn gauged_table(p: &BallParams) -> Vec<BracketOracle> {
    let (r, ie) = (p.r, p.inertia / p.e());
    let pp = p.clone();
    let f3 = move |l: &Local| -f3_bar(&pp, l.p1());
    let pp = p.clone();
    let f4 = move |l: &Local| -f4_bar(&pp, l.p1());
    let (f3a, f3b, f3c) = (f3.clone(), f3.clone(), f3);
    let (f4a, f4b) = (f4.clone(), f4);
    vec![
        oracle(0, 1, |l| -4.0 * l.p2(), p),
        oracle(0, 2, move |l| -(2.0 * l.p0() - 2.0 * l.p3() * l.mn * f3a(l) / r), p),
        oracle(0, 3, move |l| -2.0 * l.p2() * l.mn * f3b(l) / r, p),
        oracle(0, 4, move |l| -(2.0 * ie * l.p2() * l.p3() * r * f4a(l)), p),
        oracle(1, 2, |l| 2.0 * l.p1(), p),
        oracle(2, 3, move |l| -(l.p1() * l.mn * f3c(l) / r), p),
        oracle(2, 4, move |l| -(ie * l.p1() * l.p3() * r * f4b(l)), p),
    ]
}

/// Brackets `{p_i, p_j}_red` of π_nh for `i < j`, in the ordering `π(dp_i, dp_j)`.
///
/// With `Φ₁ = 2φ′ + 1/(Rn₃)` and `Φ₂ = φ″ + φ′²/(Rn₃)`; every entry was
/// rederived from the D-functions on the slice `y = 0`.
pub fn nh_table(p: &BallParams) -> Vec<BracketOracle> {
    let (r, ie) = (p.r, p.inertia / p.e());
    let dxy = {
        let p = p.clone();
        move |l: &Local| d_functions(&p, l)[0]
    };
    let phis = {
        let p = p.clone();
        move |l: &Local| {
            let s = l.p1();
            let (d1, d2) = (p.profile.deriv(s, 1), p.profile.deriv(s, 2));
            let rn3 = p.r * l.n[2];
            (2.0 * d1 + 1.0 / rn3, d2 + d1 * d1 / rn3)
        }
    };
    let (da, db, dc) = (dxy.clone(), dxy.clone(), dxy);
    let (pa, pb, pc) = (phis.clone(), phis.clone(), phis);
    vec![
        oracle(0, 1, |l| -4.0 * l.p2(), p),
        oracle(0, 2, move |l| -(2.0 * l.p0() + 2.0 * l.p3() * l.mn * da(l)), p),
        oracle(0, 3, move |l| 2.0 * l.p2() * l.mn * db(l), p),
        oracle(0, 4, move |l| -8.0 * ie * r * l.n[2] * l.n[2] * pa(l).1 * l.p2() * l.p3(), p),
        oracle(1, 2, |l| 2.0 * l.p1(), p),
        oracle(2, 3, move |l| l.p1() * l.mn * dc(l), p),
        oracle(2, 4, move |l| {
            let (f1, f2) = pb(l);
            -ie * r * l.n[2] * l.n[2] * (f1 + 4.0 * l.p1() * f2) * l.p3()
        }, p),
        oracle(3, 4, move |l| ie * r * l.n[2] * l.n[2] * pc(l).0 * l.p2(), p),
    ]
}

/// `dp_k(X_nh)` at the representative lift of `(p₀, …, p₄)`.
pub fn reduced_pushforward(p: &BallParams, sys: &Arc<NonholonomicSystem>, pv: &[f64]) -> Result<DVector<f64>> {
    let z = representative(p, sys, pv)?;
    let x = sys.x_nh(&z)?;
    Ok(DVector::from_iterator(
        5,
        sys.symmetry.invariants.iter().map(|inv| sys.phase_field(inv.f.clone()).grad(&z).dot(&x)),
    ))
}

/// The reduced field `X_red` on `(p₀, …, p₄)`: closed forms along p₁, p₃, p₄
/// and the pushforward along p₀ and p₂.
pub fn reduced_field(p: &BallParams, sys: &Arc<NonholonomicSystem>, pv: &[f64]) -> Result<DVector<f64>> {
    let mut out = reduced_pushforward(p, sys, pv)?;
    let p1 = pv[1];
    let n3 = n3_of(p, p1);
    let (r, e, i) = (p.r, p.e(), p.inertia);
    out[1] = f1_bar(p, p1) * pv[2];
    // ṗ₃ and ṗ₄ carry a minus sign with M_n = ⟨n, M⟩ for the downward n
    out[3] = -r * n3 * n3 / e * f3_bar(p, p1) * pv[2] * pv[4];
    out[4] = -r.powi(3) * i * n3 * n3 / (e * e) * pv[2] * pv[3] * f4_bar(p, p1);
    Ok(out)
}

/// Lift of `(p₀, …, p₄)` with `p₁ > 0` to the slice `y = 0`:
/// `(x, y, p_x, p_y, M_n) = (√p₁, 0, p₂/√p₁, p₃/√p₁, p₄)` at a fixed orientation.
/// The value of p₀ is implied by the others on the orbit space.
pub fn representative(p: &BallParams, sys: &NonholonomicSystem, pv: &[f64]) -> Result<Vec<f64>> {
    if !(pv[1] > 0.0) {
        return Err(Error::Singular("representative lift needs p₁ > 0".into()));
    }
    let x = pv[1].sqrt();
    let q = vec![x, 0.0, 0.3, PI / 2.0, 0.2];
    phase_from_frame_momenta(p, sys, &q, &[pv[2] / x, pv[3] / x, pv[4]])
}

/// Phase point of `sys` with prescribed `(p_x, p_y, M_n)`.
pub fn phase_from_frame_momenta(p: &BallParams, sys: &NonholonomicSystem, q: &[f64], m: &[f64]) -> Result<Vec<f64>> {
    let v = constraint_frame(p, &lift(q)).map(|a| a.re);
    // covariant momentum with p(Y_x) = p_x, … on D and the constraint value on W
    let g = sys.metric(q);
    let vd = v.columns(0, 3).into_owned();
    let kdd = vd.transpose() * &g * &vd;
    let vel = kdd
        .lu()
        .solve(&DVector::from_column_slice(m))
        .ok_or_else(|| Error::Degenerate("metric on D".into()))?;
    let qdot = &vd * vel;
    let co = sys.frame.coframe(q)?;
    let v_sys = co.rows(0, sys.r()) * qdot;
    sys.phase_from_velocity(q, v_sys.as_slice())
}

/// Configuration and frame momenta `(p_x, p_y, M_n)` of the default run.
pub const DEFAULT_Q: [f64; 5] = [0.6, 0.3, 0.4, 1.2, 0.2];
pub const DEFAULT_MOMENTA: [f64; 3] = [0.3, -0.5, 0.002];

/// Below this `|sin θ|` a trajectory is moved to another Euler chart.
pub const RECHART_SIN: f64 = 0.25;

/// Replaces `g` by `g·R_x(π/2)` when θ nears the chart singularity. Right
/// translations are symmetries and the constraint frame is right invariant,
/// so the frame momenta carry over unchanged. Returns `None` when no change
/// is needed.
pub fn rechart(z: &[f64]) -> Option<Vec<f64>> {
    if z[3].sin().abs() >= RECHART_SIN {
        return None;
    }
    let g = so3::rotation(&lift(&z[2..5])).map(|v| v.re);
    let h = so3::rotation(&lift(&[0.0, PI / 2.0, 0.0])).map(|v| v.re);
    let e = so3::euler_angles(&(g * h));
    let mut out = z.to_vec();
    out[2..5].copy_from_slice(&e);
    Some(out)
}

/// `(J₁, J₂) = F(p₁)·(p₃, p₄)` at a phase point of any ball frame.
pub fn hgm_momenta(p: &BallParams, sys: &NonholonomicSystem, sol: &HGMSolution, z: &[f64]) -> Result<[f64; 2]> {
    let l = Local::at(p, sys, z);
    let (f, _) = sol.eval(l.p1())?;
    let j = f * DVector::from_column_slice(&[l.p3(), l.mn]);
    Ok([j[0], j[1]])
}

pub fn omega_body(sys: &NonholonomicSystem, z: &[f64]) -> Vector3<f64> {
    let w = so3::lambda_rows(&z[2..5], 5, 2) * sys.base_velocity(z);
    Vector3::new(w[0], w[1], w[2])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{bracket_matrix, characteristic_rank, jacobiator, jacobiator_via_3form, triples};
    use crate::gauge::{b_coordinate, b_intrinsic, bracket_table, casimir_defect, dynamical_defect, hgs_system};
    use crate::geom::{ScalarField, Sampler};
    use crate::momenta::{fit_shape_matrix, hgm_residual, solve_hgm};
    use crate::symmetry as sy;

    struct Setup {
        p: BallParams,
        s: Arc<NonholonomicSystem>,
        c: Arc<NonholonomicSystem>,
        pts: Vec<Vec<f64>>,
    }

    fn setup(count: usize) -> Setup {
        let p = BallParams::default();
        let s = make(p.clone()).unwrap();
        let c = constraint_system(&p, &s);
        let pts = s.sample(&mut Sampler::new(11), count);
        Setup { p, s, c, pts }
    }

    fn hgs(p: &BallParams) -> HgsBasis {
        let sol = solve_hgm(&ode_spec(p), &DMatrix::identity(2, 2)).unwrap();
        hgs_basis(Arc::new(sol))
    }

    fn invariants(s: &Arc<NonholonomicSystem>) -> Vec<ScalarField> {
        s.symmetry.invariants.iter().map(|i| s.phase_field(i.f.clone())).collect()
    }

    #[test]
    fn params_validate() {
        assert!(BallParams::default().validate().is_ok());
        let mut p = BallParams::default();
        p.r = 5.0;
        assert!(p.validate().is_err());
        p = BallParams::default();
        p.profile = Profile::polynomial(&[0.0, -1.0]);
        assert!(p.validate().is_err());
    }

    #[test]
    fn curvatures_give_f3_f4() {
        let p = BallParams::default();
        for s in [0.05, 0.5, 2.0] {
            let (m1, m2) = curvatures(&p, s);
            let n3 = n3_of(&p, s);
            assert!((f3_bar(&p, s) - m2 / n3).abs() < 1e-12);
            assert!((f4_bar(&p, s) - (m1 - m2) / (n3 * s)).abs() < 1e-12);
        }
    }

    #[test]
    fn frames_and_sections() {
        let t = setup(10);
        for z in &t.pts {
            let q = &z[..5];
            assert!(t.s.frame.duality_defect(q) < 1e-12);
            assert!(t.c.frame.duality_defect(q) < 1e-12);
            assert!(sy::section_defect(&t.s, q) < 1e-12);
            assert_eq!(sy::dimension_rank(&t.s, q), 5);
        }
    }

    #[test]
    fn legendre_and_hamiltonian() {
        let t = setup(10);
        for z in &t.pts {
            let q = &z[..5];
            let l = Local::at(&t.p, &t.s, z);
            let zc = t.c.from_cov(q, t.s.p_cov(z).as_slice());
            assert!((zc[5] - l.px).abs() < 1e-12 && (zc[6] - l.py).abs() < 1e-12 && (zc[7] - l.mn).abs() < 1e-12);
            assert!((t.c.hamiltonian(&zc) - hamiltonian_oracle(&t.p, &l)).abs() < 1e-12);
            let v = t.c.velocity_coefficients(&zc);
            let o = velocities(&t.p, &l);
            for k in 0..3 {
                assert!((v[k] - o[k]).abs() < 1e-12);
            }
            // eliminated momenta on W
            let pe = t.c.eliminated_momenta(&zc);
            let k = -t.p.inertia / t.p.e();
            assert!((pe[0] - k * l.px).abs() < 1e-12 && (pe[1] - k * l.py).abs() < 1e-12);
            // J₁ = p₃ and J₂ = M_n on the base frame
            assert!((z[6] - l.p3()).abs() < 1e-12 && (z[7] - l.mn).abs() < 1e-12);
        }
    }

    #[test]
    fn d_functions_are_frame_brackets() {
        let t = setup(6);
        for z in &t.pts {
            let q = &z[..5];
            let l = Local::at(&t.p, &t.s, z);
            let d = d_functions(&t.p, &l);
            let c = t.c.frame.structure_functions(q).unwrap();
            // D^a_{·n} = −dε^a(Y_·, X_n) = C^a_{·n}, D^n_xy = dβ_n(Y_x, Y_y)
            assert!((d[0] + c.get(2, 0, 1)).abs() < 1e-9, "{} {}", d[0], c.get(2, 0, 1));
            assert!((d[1] - c.get(3, 0, 2)).abs() < 1e-9);
            assert!((d[2] - c.get(4, 0, 2)).abs() < 1e-9);
            assert!((d[3] - c.get(3, 1, 2)).abs() < 1e-9);
            assert!((d[4] - c.get(4, 1, 2)).abs() < 1e-9);
        }
    }

    #[test]
    fn nonholonomic_structure_matches_closed_forms() {
        let t = setup(10);
        for z in &t.pts {
            let q = &z[..5];
            let l = Local::at(&t.p, &t.s, z);
            let zc = t.c.from_cov(q, t.s.p_cov(z).as_slice());
            assert!((t.c.omega_c(&zc).unwrap() - omega_c_oracle(&t.p, &l)).amax() < 1e-10);
            assert!((t.c.pi_c(&zc, None).unwrap() - pi_nh_oracle(&t.p, &l)).amax() < 1e-10);
            let x = t.c.x_nh(&zc).unwrap();
            let o = x_nh_momenta_oracle(&t.p, &l);
            for k in 0..3 {
                assert!((x[5 + k] - o[k]).abs() < 1e-9 * (1.0 + o[k].abs()));
            }
            let jk = sy::j_kw(&t.s, z).unwrap();
            assert!((jk - j_kw_oracle(&t.p, q, &l)).amax() < 1e-10);
        }
    }

    #[test]
    fn fitted_shape_matrix_matches_ode() {
        let t = setup(1);
        for q in [[0.8, 0.0, 0.3, 1.5, 0.2], [0.5, -0.7, 1.0, 2.0, -0.4]] {
            let (phi, resid) = fit_shape_matrix(&t.s, &q, &|q: &[Ad]| shape(q)).unwrap();
            assert!(resid < 1e-12, "{resid}");
            let s = q[0] * q[0] + q[1] * q[1];
            assert!((phi - ode_spec(&t.p).rhs(s)).amax() < 1e-9);
        }
    }

    #[test]
    fn horizontal_gauge_momenta_are_conserved() {
        let t = setup(10);
        let sol = Arc::new(solve_hgm(&ode_spec(&t.p), &DMatrix::identity(2, 2)).unwrap());
        let (s1, s2) = (sol.clone(), sol);
        let base = t.s.symmetry.clone();
        let b2 = t.s.symmetry.clone();
        let eta1 = hgm_residual(&t.s, move |q| {
            let f = s1.eval_ad(shape(q)).unwrap();
            base.s_sections_ad(q) * f.row(0).transpose()
        });
        let zeta2 = hgm_residual(&t.s, move |q| b2.s_sections_ad(q).column(1).into_owned());
        let _ = s2;
        let mut worst: f64 = 0.0;
        let mut off: f64 = 0.0;
        for z in &t.pts {
            worst = worst.max(eta1.eval(z).abs());
            off = off.max(zeta2.eval(z).abs());
        }
        assert!(worst < 1e-6, "{worst}");
        assert!(off > 1e-6, "{off}");
    }

    #[test]
    fn gauge_form_matches_closed_forms() {
        let t = setup(8);
        let h = hgs(&t.p);
        let hs = Arc::new(hgs_system(&t.s, &h, "ball-hgs", chart()));
        let bc = b_coordinate(&hs);
        let bi = b_intrinsic(&t.s, &h);
        for z in &t.pts {
            let q = &z[..5];
            let l = Local::at(&t.p, &t.s, z);
            let o = b_oracle(&t.p, q, &l);
            let scale = 1.0 + o.amax();
            let zh = hs.from_cov(q, t.s.p_cov(z).as_slice());
            assert!((bc.at(&hs, &zh).unwrap() - &o).amax() < 1e-7 * scale);
            assert!((bi.at(&t.s, z).unwrap() - &o).amax() < 1e-7 * scale);
            assert!((b_velocity_oracle(&t.p, q, &l) - &o).amax() < 1e-10 * scale);
            assert!(dynamical_defect(&t.s, &bi, z).unwrap() < 1e-7);
            assert!(casimir_defect(&hs, &bi, &zh).unwrap() < 1e-7);
            let zc = t.c.from_cov(q, t.s.p_cov(z).as_slice());
            let blk = bi.block(&t.c, &zc).unwrap();
            assert!((t.c.pi_c(&zc, Some(&blk)).unwrap() - pi_b_oracle(&t.p, &l)).amax() < 1e-7 * scale);
        }
    }

    #[test]
    fn bracket_tables() {
        let t = setup(12);
        let bi = b_intrinsic(&t.s, &hgs(&t.p));
        let tab = bracket_table(&t.s, Some(&bi), &gauged_table(&t.p), &t.pts).unwrap();
        for r in &tab.summary {
            assert!(r.max_residual.unwrap() < 1e-7 * (1.0 + r.max_abs_value), "{r:?}");
        }
        let tab = bracket_table(&t.s, None, &nh_table(&t.p), &t.pts).unwrap();
        for r in &tab.summary {
            assert!(r.max_residual.unwrap() < 1e-9 * (1.0 + r.max_abs_value), "{r:?}");
        }
    }

    #[test]
    fn non_poisson_defect_and_gauged_jacobiators() {
        let t = setup(5);
        let inv = invariants(&t.s);
        let pinh = |z: &[f64]| t.s.bivector(z, None);
        for x in [0.3, 1.0] {
            let z = phase_from_frame_momenta(&t.p, &t.s, &[x, 0.0, 0.3, 1.2, 0.2], &[0.4, -0.3, 0.7]).unwrap();
            let j = jacobiator(&pinh, &inv[1], &inv[3], &inv[4], &z).unwrap();
            let j3 = jacobiator_via_3form(&t.s, None, &inv[1], &inv[3], &inv[4], &z).unwrap();
            let o = defect_oracle(&t.p, x);
            assert!(((j - o) / o).abs() < 1e-4, "{j} {o}");
            assert!(((j3 - o) / o).abs() < 1e-4, "{j3} {o}");
        }
        let bi = b_intrinsic(&t.s, &hgs(&t.p));
        let pib = |z: &[f64]| {
            let b = bi.block(&t.s, z)?;
            t.s.bivector(z, Some(&b))
        };
        for z in &t.pts {
            let j = crate::analysis::jacobiators(&pib, &inv, &triples(5), z).unwrap();
            assert!(j.iter().all(|v| v.abs() < 1e-5), "{j:?}");
            let g: Vec<_> = inv.iter().map(|f| f.grad(z)).collect();
            let m = bracket_matrix(&pib(z).unwrap(), &g);
            assert_eq!(characteristic_rank(&m), 2);
        }
    }

    #[test]
    fn reduced_field_closed_forms() {
        let t = setup(1);
        for pv in [[0.0, 0.5, 0.3, 0.2, 1.0], [0.0, 1.2, -0.4, 0.7, -2.0]] {
            let a = reduced_pushforward(&t.p, &t.s, &pv).unwrap();
            let b = reduced_field(&t.p, &t.s, &pv).unwrap();
            assert!((a - b).amax() < 1e-10);
        }
    }
}
