//! Snakeboard on `q = (x, y, θ, φ, ψ)` with the translations and the rotor
//! angle as symmetry group `ℝ² × S¹`.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_dual::DualNum;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Ad, AdaptedFrame, Blocks, Chart};
use crate::symmetry::{Invariant, SymmetryData};
use crate::system::NonholonomicSystem;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SnakeboardParams {
    pub m: f64,
    #[serde(rename = "R")]
    pub r: f64,
    #[serde(rename = "J")]
    pub j: f64,
    #[serde(rename = "J1")]
    pub j1: f64,
}

impl Default for SnakeboardParams {
    fn default() -> Self {
        SnakeboardParams {
            m: 1.0,
            r: 1.0,
            j: 0.5,
            j1: 0.1,
        }
    }
}

impl SnakeboardParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.m > 0.0 && self.r > 0.0 && self.j > 0.0 && self.j1 > 0.0) {
            return Err(Error::Params("snakeboard parameters must be positive".into()));
        }
        if self.m * self.r * self.r <= self.j {
            return Err(Error::Params("kinetic metric needs mR² > J".into()));
        }
        Ok(())
    }

    /// `F(φ) = mR sinφ cosφ / (mR² − J sin²φ)`.
    pub fn f(&self, phi: f64) -> f64 {
        let s = phi.sin();
        self.m * self.r * s * phi.cos() / (self.m * self.r * self.r - self.j * s * s)
    }
}

fn frame(p: SnakeboardParams) -> impl Fn(&[Ad]) -> DMatrix<Ad> + Send + Sync {
    move |q| {
        let z = Ad::from(0.0);
        let o = Ad::from(1.0);
        let c = q[3].cos() / q[3].sin() * p.r;
        let mut v = DMatrix::from_element(5, 5, z);
        // X_θ, X_φ | Y_ψ | ∂x, ∂y
        v[(0, 0)] = -c * q[2].cos();
        v[(1, 0)] = -c * q[2].sin();
        v[(2, 0)] = o;
        v[(3, 1)] = o;
        v[(4, 2)] = o;
        v[(0, 3)] = o;
        v[(1, 4)] = o;
        v
    }
}

fn metric(p: SnakeboardParams) -> impl Fn(&[Ad]) -> DMatrix<Ad> + Send + Sync {
    move |_| {
        let mut g = DMatrix::from_element(5, 5, Ad::from(0.0));
        g[(0, 0)] = Ad::from(p.m);
        g[(1, 1)] = Ad::from(p.m);
        g[(2, 2)] = Ad::from(p.m * p.r * p.r);
        g[(3, 3)] = Ad::from(2.0 * p.j1);
        g[(4, 4)] = Ad::from(p.j);
        g[(2, 4)] = Ad::from(p.j);
        g[(4, 2)] = Ad::from(p.j);
        g
    }
}

pub fn chart() -> Chart {
    Chart::new(
        "snakeboard",
        &["x", "y", "theta", "phi", "psi"],
        vec![(-2.0, 2.0), (-2.0, 2.0), (-PI, PI), (0.3, PI - 0.3), (-PI, PI)],
        Arc::new(|q| q[3].sin().abs() > 1e-6),
    )
}

/// Momentum on a coordinate frame vector field, as an invariant function.
fn momentum_on(p: SnakeboardParams, k: usize) -> impl Fn(&[Ad], &[Ad]) -> Ad + Send + Sync {
    move |q, pc| {
        let v = frame(p)(q);
        (0..5).map(|mu| v[(mu, k)] * pc[mu]).sum()
    }
}

pub fn symmetry(p: SnakeboardParams) -> SymmetryData {
    let unit = |rows: &[(usize, usize)], m: usize, c: usize| {
        let mut s = DMatrix::from_element(m, c, Ad::from(0.0));
        for &(i, j) in rows {
            s[(i, j)] = Ad::from(1.0);
        }
        s
    };
    SymmetryData::new(
        &["e_x", "e_y", "e_psi"],
        move |_| unit(&[(0, 0), (1, 1), (4, 2)], 5, 3),
        move |_| unit(&[(2, 0)], 3, 1),
        move |_| unit(&[(0, 0), (1, 1)], 3, 2),
    )
    .with_invariants(vec![
        Invariant::new("theta", |q, _| q[2]),
        Invariant::new("phi", |q, _| q[3]),
        Invariant::new("p_theta", momentum_on(p, 0)),
        Invariant::new("p_phi", momentum_on(p, 1)),
        Invariant::new("p_psi", momentum_on(p, 2)),
    ])
}

pub fn make(p: SnakeboardParams) -> Result<Arc<NonholonomicSystem>> {
    p.validate()?;
    let fr = AdaptedFrame::new(Blocks::new(2, 1, 2), frame(p));
    Ok(Arc::new(NonholonomicSystem::new(
        "snakeboard",
        chart(),
        fr,
        metric(p),
        |_| Ad::from(0.0),
        symmetry(p),
    )))
}

/// `p_x = −F(φ) cosθ (p_θ − p_ψ)`, `p_y = −F(φ) sinθ (p_θ − p_ψ)`.
pub fn eliminated_oracle(p: &SnakeboardParams, z: &[f64]) -> [f64; 2] {
    let f = p.f(z[3]);
    let d = z[5] - z[7];
    [-f * z[2].cos() * d, -f * z[2].sin() * d]
}

/// `⟨J, 𝒦_W⟩ = −R F(φ)/sin²φ (p_θ − p_ψ) dθ∧dφ` as a coordinate matrix.
pub fn j_kw_oracle(p: &SnakeboardParams, z: &[f64]) -> DMatrix<f64> {
    let phi = z[3];
    let c = -p.r * p.f(phi) / phi.sin().powi(2) * (z[5] - z[7]);
    let mut m = DMatrix::zeros(5, 5);
    m[(2, 3)] = c;
    m[(3, 2)] = -c;
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{lie_bracket, Sampler};

    #[test]
    fn f_at_quarter_turn() {
        let p = SnakeboardParams::default();
        let expect = p.m * p.r * 0.5 / (p.m * p.r * p.r - p.j * 0.5);
        assert!((p.f(PI / 4.0) - expect).abs() < 1e-15);
    }

    #[test]
    fn bracket_of_phi_and_theta_fields() {
        let s = make(SnakeboardParams::default()).unwrap();
        let q = [0.1, -0.3, 0.0, PI / 4.0, 0.7];
        let b = lie_bracket(&s.frame.vector(1), &s.frame.vector(0), &q);
        // R csc²(π/4) (cos θ, sin θ) on (∂x, ∂y)
        assert!((b[0] - 2.0).abs() < 1e-12 && b.rows(1, 4).amax() < 1e-12);
        let c = s.frame.structure_functions(&q).unwrap();
        assert!((c.get(3, 1, 0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn eliminated_momenta_match() {
        let p = SnakeboardParams::default();
        let s = make(p).unwrap();
        let mut smp = Sampler::default();
        for z in s.sample(&mut smp, 20) {
            let pa = s.eliminated_momenta(&z);
            let o = eliminated_oracle(&p, &z);
            assert!((pa[0] - o[0]).abs() < 1e-12 && (pa[1] - o[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        let p = SnakeboardParams { j: 2.0, ..Default::default() };
        assert!(make(p).is_err());
    }
}
