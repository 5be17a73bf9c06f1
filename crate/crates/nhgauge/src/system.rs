//! Nonholonomic systems on a chart and the phase space 𝓜 with coordinates
//! `z = (q, p_C)`, where `p_C = (p_α, p_i)` pair with the H and S blocks of the
//! adapted frame and `p_a` is eliminated.
//!
//! The 𝒞 basis is ordered `{Ṽ_C, ∂_{p_C}}` with `Ṽ_C = (V_C, 0)`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geom::{
    eps_mat, lift, re_mat, re_vec, seed_axis, seed_dir, Ad, AdaptedFrame, Blocks, Chart, Sampler, ScalarField,
    Structure, VectorField,
};
use crate::symmetry::SymmetryData;

pub type AdScalarFn = Arc<dyn Fn(&[Ad]) -> Ad + Send + Sync>;
pub type AdMatrixFn = Arc<dyn Fn(&[Ad]) -> DMatrix<Ad> + Send + Sync>;

/// Function on 𝓜 written through the base point and the covariant momentum,
/// so it does not depend on the momentum chart.
pub type PhaseFn = Arc<dyn Fn(&[Ad], &[Ad]) -> Ad + Send + Sync>;

pub struct NonholonomicSystem {
    pub name: String,
    pub chart: Chart,
    pub frame: AdaptedFrame,
    metric: AdMatrixFn,
    potential: AdScalarFn,
    pub symmetry: SymmetryData,
    /// Momenta are sampled uniformly in `[-momentum_scale, momentum_scale]`.
    pub momentum_scale: f64,
}

impl std::fmt::Debug for NonholonomicSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NonholonomicSystem")
            .field("name", &self.name)
            .field("chart", &self.chart)
            .field("blocks", &self.frame.blocks)
            .finish()
    }
}

/// Point of 𝓜 split into base point and momenta.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePoint {
    pub q: Vec<f64>,
    pub p_alpha: Vec<f64>,
    pub p_i: Vec<f64>,
}

impl PhasePoint {
    pub fn z(&self) -> Vec<f64> {
        let mut z = self.q.clone();
        z.extend(&self.p_alpha);
        z.extend(&self.p_i);
        z
    }
}

/// Everything at one point of 𝓜 that needs first derivatives of the frame.
#[derive(Debug, Clone)]
pub struct PointGeom {
    pub q: Vec<f64>,
    pub p: DVector<f64>,
    /// Velocity coefficients `v^C` on the D blocks.
    pub v: DVector<f64>,
    /// Momenta on the full frame, `p_K = p(V_K)`.
    pub p_full: DVector<f64>,
    pub p_cov: DVector<f64>,
    pub frame: DMatrix<f64>,
    pub coframe: DMatrix<f64>,
    /// Metric in the adapted frame, `κ_IJ`.
    pub kappa: DMatrix<f64>,
    pub c: Structure,
}

impl NonholonomicSystem {
    pub fn new(
        name: &str,
        chart: Chart,
        frame: AdaptedFrame,
        metric: impl Fn(&[Ad]) -> DMatrix<Ad> + Send + Sync + 'static,
        potential: impl Fn(&[Ad]) -> Ad + Send + Sync + 'static,
        symmetry: SymmetryData,
    ) -> Self {
        assert_eq!(chart.dim(), frame.n());
        NonholonomicSystem {
            name: name.to_string(),
            chart,
            frame,
            metric: Arc::new(metric),
            potential: Arc::new(potential),
            symmetry,
            momentum_scale: 1.0,
        }
    }

    /// Same Lagrangian on another adapted frame and chart.
    pub fn with_frame(&self, name: &str, chart: Chart, frame: AdaptedFrame, symmetry: SymmetryData) -> Self {
        assert_eq!(chart.dim(), frame.n());
        NonholonomicSystem {
            name: name.to_string(),
            chart,
            frame,
            metric: self.metric.clone(),
            potential: self.potential.clone(),
            symmetry,
            momentum_scale: self.momentum_scale,
        }
    }

    pub fn with_momentum_scale(mut self, s: f64) -> Self {
        self.momentum_scale = s;
        self
    }

    pub fn blocks(&self) -> Blocks {
        self.frame.blocks
    }
    pub fn n(&self) -> usize {
        self.blocks().n()
    }
    pub fn r(&self) -> usize {
        self.blocks().r()
    }
    /// Dimension of 𝓜.
    pub fn phase_dim(&self) -> usize {
        self.n() + self.r()
    }

    pub fn split<'a, T>(&self, z: &'a [T]) -> (&'a [T], &'a [T]) {
        z.split_at(self.n())
    }

    pub fn phase_point(&self, z: &[f64]) -> PhasePoint {
        let b = self.blocks();
        let (q, p) = self.split(z);
        PhasePoint {
            q: q.to_vec(),
            p_alpha: p[..b.h].to_vec(),
            p_i: p[b.h..].to_vec(),
        }
    }

    pub fn check_phase(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.phase_dim() || z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain {
                chart: format!("{}/phase", self.chart.id),
                coords: z.to_vec(),
            });
        }
        self.chart.check(&z[..self.n()])
    }

    pub fn metric_ad(&self, q: &[Ad]) -> DMatrix<Ad> {
        (self.metric)(q)
    }

    pub fn metric(&self, q: &[f64]) -> DMatrix<f64> {
        re_mat(&self.metric_ad(&lift(q)))
    }

    pub fn potential_ad(&self, q: &[Ad]) -> Ad {
        (self.potential)(q)
    }

    /// `κ_IJ = V_Iᵀ g V_J`.
    pub fn kappa_ad(&self, q: &[Ad]) -> DMatrix<Ad> {
        let v = self.frame.matrix_ad(q);
        v.transpose() * self.metric_ad(q) * v
    }

    fn kappa_cc(&self, kappa: &DMatrix<Ad>) -> DMatrix<Ad> {
        let r = self.r();
        kappa.view((0, 0), (r, r)).into_owned()
    }

    /// `(v^C, p_K)` from `z`, in dual numbers.
    pub fn kinetics_ad(&self, z: &[Ad]) -> (DVector<Ad>, DVector<Ad>) {
        let (q, p) = self.split(z);
        let kappa = self.kappa_ad(q);
        let r = self.r();
        let pc = DVector::from_column_slice(p);
        let v = self
            .kappa_cc(&kappa)
            .lu()
            .solve(&pc)
            .expect("kinetic metric is singular on D");
        let full = kappa.view((0, 0), (self.n(), r)) * &v;
        (v, full)
    }

    /// Covariant momentum `p_μ` with `p(V_K) = p_K`.
    pub fn p_cov_ad(&self, z: &[Ad]) -> DVector<Ad> {
        let (q, _) = self.split(z);
        let (_, full) = self.kinetics_ad(z);
        let co = self.frame.coframe_ad(q).expect("frame degenerate");
        co.transpose() * full
    }

    pub fn p_cov(&self, z: &[f64]) -> DVector<f64> {
        re_vec(&self.p_cov_ad(&lift(z)))
    }

    /// Phase coordinates of the covector `p_cov` at `q`.
    pub fn from_cov(&self, q: &[f64], p_cov: &[f64]) -> Vec<f64> {
        let v = self.frame.matrix(q);
        let pf = v.transpose() * DVector::from_column_slice(p_cov);
        let mut z = q.to_vec();
        z.extend(pf.iter().take(self.r()));
        z
    }

    /// Eliminated momenta `p_a(q, p_C)`.
    pub fn eliminated_momenta(&self, z: &[f64]) -> DVector<f64> {
        let (_, full) = self.kinetics_ad(&lift(z));
        re_vec(&full).rows(self.r(), self.blocks().w).into_owned()
    }

    /// `p_I = κ_IJ v^J` on the full frame.
    pub fn legendre(&self, q: &[f64], v: &[f64]) -> Result<DVector<f64>> {
        let kappa = re_mat(&self.kappa_ad(&lift(q)));
        if kappa.clone().cholesky().is_none() {
            return Err(Error::Degenerate(format!("kinetic metric at {q:?}")));
        }
        Ok(kappa * DVector::from_column_slice(v))
    }

    /// Phase point for velocities `v^C` on D.
    pub fn phase_from_velocity(&self, q: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        let mut full = v.to_vec();
        full.resize(self.n(), 0.0);
        let p = self.legendre(q, &full)?;
        let mut z = q.to_vec();
        z.extend(p.iter().take(self.r()));
        Ok(z)
    }

    pub fn velocity_coefficients(&self, z: &[f64]) -> DVector<f64> {
        re_vec(&self.kinetics_ad(&lift(z)).0)
    }

    /// Base velocity `Tτ(X_nh) = v^C V_C` in coordinates.
    pub fn base_velocity(&self, z: &[f64]) -> DVector<f64> {
        let (q, _) = self.split(z);
        let v = self.velocity_coefficients(z);
        self.frame.matrix(q).columns(0, self.r()) * v
    }

    pub fn hamiltonian_ad(&self, z: &[Ad]) -> Ad {
        let (q, p) = self.split(z);
        let (v, _) = self.kinetics_ad(z);
        let kinetic: Ad = p.iter().zip(v.iter()).map(|(a, b)| *a * *b).sum::<Ad>() * 0.5;
        kinetic + self.potential_ad(q)
    }

    pub fn hamiltonian(&self, z: &[f64]) -> f64 {
        self.hamiltonian_ad(&lift(z)).re
    }

    pub fn potential(&self, q: &[f64]) -> f64 {
        self.potential_ad(&lift(q)).re
    }

    pub fn hamiltonian_field(self: &Arc<Self>) -> ScalarField {
        let s = self.clone();
        ScalarField::new_ad(move |z| s.hamiltonian_ad(z))
    }

    /// Turn a chart-free phase function into a field in this chart.
    pub fn phase_field(self: &Arc<Self>, f: PhaseFn) -> ScalarField {
        let s = self.clone();
        ScalarField::new_ad(move |z| {
            let p = s.p_cov_ad(z);
            f(&z[..s.n()], p.as_slice())
        })
    }

    /// The momentum coordinate `p_C` as a field.
    pub fn momentum_field(self: &Arc<Self>, c: usize) -> ScalarField {
        let n = self.n();
        ScalarField::new_ad(move |z| z[n + c])
    }

    pub fn geom(&self, z: &[f64]) -> Result<PointGeom> {
        let (q, p) = self.split(z);
        let frame = self.frame.matrix(q);
        let coframe = frame
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Degenerate(format!("frame at {q:?}")))?;
        let kappa = re_mat(&self.kappa_ad(&lift(q)));
        let r = self.r();
        let kcc = kappa.view((0, 0), (r, r)).into_owned();
        let pc = DVector::from_column_slice(p);
        let v = kcc
            .lu()
            .solve(&pc)
            .ok_or_else(|| Error::Degenerate("kinetic metric on D".into()))?;
        let p_full = kappa.columns(0, r) * &v;
        let p_cov = coframe.transpose() * &p_full;
        let c = self.frame.structure_functions(q)?;
        Ok(PointGeom {
            q: q.to_vec(),
            p: pc,
            v,
            p_full,
            p_cov,
            frame,
            coframe,
            kappa,
            c,
        })
    }

    /// Ω_𝒞 in the 𝒞 basis: `Ω(Ṽ_I, Ṽ_J) = p_K C^K_IJ`, `Ω(Ṽ_I, ∂_{p_J}) = δ_IJ`.
    pub fn omega_c(&self, z: &[f64]) -> Result<DMatrix<f64>> {
        let g = self.geom(z)?;
        let om = omega_from_geom(&g, self.r());
        check_nondegenerate(&om)?;
        Ok(om)
    }

    /// Bivector on the 𝒞 basis, `Π = −(Ω_𝒞 + B)⁻¹`, for a semibasic `B` given on
    /// the `Ṽ_C` block. `{f, g} = dfᵀ Π dg` and `π♯(α) = Πᵀ α`.
    pub fn pi_c(&self, z: &[f64], b: Option<&DMatrix<f64>>) -> Result<DMatrix<f64>> {
        let mut om = self.omega_c(z)?;
        if let Some(b) = b {
            let r = self.r();
            let mut blk = om.view_mut((0, 0), (r, r));
            blk += b;
        }
        pi_from_omega(&om)
    }

    /// Columns are the 𝒞 basis vectors in phase coordinates.
    pub fn c_basis(&self, z: &[f64]) -> DMatrix<f64> {
        let (q, _) = self.split(z);
        let (n, r) = (self.n(), self.r());
        let v = self.frame.matrix(q);
        let mut e = DMatrix::zeros(n + r, 2 * r);
        e.view_mut((0, 0), (n, r)).copy_from(&v.columns(0, r));
        for c in 0..r {
            e[(n + c, r + c)] = 1.0;
        }
        e
    }

    /// Dual basis to `{Ṽ_H, Ṽ_S, Z̃_a, ∂_p}`: rows are `{X̃^α, Ỹ^i, ε̃^a, dp}`.
    pub fn adapted_coframe(&self, z: &[f64]) -> Result<DMatrix<f64>> {
        let (q, _) = self.split(z);
        let (n, r) = (self.n(), self.r());
        let co = self.frame.coframe(q)?;
        let mut m = DMatrix::zeros(n + r, n + r);
        m.view_mut((0, 0), (n, n)).copy_from(&co);
        for c in 0..r {
            m[(n + c, n + c)] = 1.0;
        }
        Ok(m)
    }

    /// Bivector in phase coordinates.
    pub fn bivector(&self, z: &[f64], b: Option<&DMatrix<f64>>) -> Result<DMatrix<f64>> {
        let e = self.c_basis(z);
        Ok(&e * self.pi_c(z, b)? * e.transpose())
    }

    /// Bivector in the basis `{X̃_α, Ỹ_i, Z̃_a, ∂_{p_α}, ∂_{p_i}}`; the Z̃ rows and
    /// columns vanish.
    pub fn bivector_adapted(&self, z: &[f64], b: Option<&DMatrix<f64>>) -> Result<DMatrix<f64>> {
        let (n, r) = (self.n(), self.r());
        let pc = self.pi_c(z, b)?;
        let idx: Vec<usize> = (0..r).chain(n..n + r).collect();
        let mut m = DMatrix::zeros(n + r, n + r);
        for (a, &ia) in idx.iter().enumerate() {
            for (bb, &ib) in idx.iter().enumerate() {
                m[(ia, ib)] = pc[(a, bb)];
            }
        }
        Ok(m)
    }

    /// `π♯(α)` for a covector in phase coordinates.
    pub fn sharp(&self, z: &[f64], b: Option<&DMatrix<f64>>, alpha: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.bivector(z, b)?.transpose() * alpha)
    }

    pub fn bracket(&self, z: &[f64], f: &ScalarField, g: &ScalarField, b: Option<&DMatrix<f64>>) -> Result<f64> {
        let pi = self.bivector(z, b)?;
        Ok((f.grad(z).transpose() * pi * g.grad(z))[(0, 0)])
    }

    pub fn grad_h(&self, z: &[f64]) -> DVector<f64> {
        DVector::from_iterator(z.len(), (0..z.len()).map(|k| self.hamiltonian_ad(&seed_axis(z, k)).eps))
    }

    /// `X_nh = −π_nh♯(d𝓗_𝓜)` in phase coordinates.
    pub fn x_nh(&self, z: &[f64]) -> Result<DVector<f64>> {
        Ok(-self.sharp(z, None, &self.grad_h(z))?)
    }

    pub fn x_nh_field(self: &Arc<Self>) -> VectorField {
        let s = self.clone();
        VectorField::new(self.phase_dim(), move |z| s.x_nh(z).expect("X_nh undefined"))
    }

    /// Components of a phase vector on `{Ṽ_H, Ṽ_S, Z̃, ∂_p}`.
    pub fn adapted_components(&self, z: &[f64], u: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.adapted_coframe(z)? * u)
    }

    /// Components on the 𝒞 basis; the W part is dropped (it is the projection along 𝒲).
    pub fn c_components(&self, z: &[f64], u: &DVector<f64>) -> Result<DVector<f64>> {
        let a = self.adapted_components(z, u)?;
        let (n, r) = (self.n(), self.r());
        Ok(DVector::from_iterator(2 * r, (0..r).chain(n..n + r).map(|i| a[i])))
    }

    /// Projector onto 𝒞 along 𝒲 in phase coordinates.
    pub fn projector_c(&self, z: &[f64]) -> Result<DMatrix<f64>> {
        let e = self.c_basis(z);
        let (n, r) = (self.n(), self.r());
        let a = self.adapted_coframe(z)?;
        let mut sel = DMatrix::zeros(2 * r, n + r);
        for (row, i) in (0..r).chain(n..n + r).enumerate() {
            sel.set_row(row, &a.row(i));
        }
        Ok(e * sel)
    }

    /// Seeded sample of phase points.
    pub fn sample(&self, sampler: &mut Sampler, count: usize) -> Vec<Vec<f64>> {
        (0..count)
            .map(|_| {
                let mut z = loop {
                    let q = sampler.point(&self.chart);
                    if self.symmetry.is_regular(&q) {
                        break q;
                    }
                };
                for _ in 0..self.r() {
                    z.push(sampler.uniform(-self.momentum_scale, self.momentum_scale));
                }
                z
            })
            .collect()
    }

    /// Derivative of `z ↦ V(q)` along a phase direction, as a matrix.
    pub fn frame_derivative(&self, z: &[f64], dir: &[f64]) -> DMatrix<f64> {
        let (q, _) = self.split(z);
        eps_mat(&self.frame.matrix_ad(&seed_dir(q, &dir[..self.n()])))
    }

    /// Semibasic 2-form on the `Ṽ_C` block → coordinate matrix on TQ, zero on W.
    pub fn block_to_coords(&self, z: &[f64], b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let (q, _) = self.split(z);
        let co = self.frame.coframe(q)?;
        let cc = co.rows(0, self.r());
        Ok(cc.transpose() * b * cc)
    }

    /// Coordinate 2-form on TQ → its `Ṽ_C` block.
    pub fn coords_to_block(&self, z: &[f64], bq: &DMatrix<f64>) -> DMatrix<f64> {
        let (q, _) = self.split(z);
        let v = self.frame.matrix(q);
        let vc = v.columns(0, self.r());
        vc.transpose() * bq * vc
    }
}

pub fn omega_from_geom(g: &PointGeom, r: usize) -> DMatrix<f64> {
    let n = g.p_full.len();
    let mut om = DMatrix::zeros(2 * r, 2 * r);
    for i in 0..r {
        for j in 0..r {
            let mut s = 0.0;
            for k in 0..n {
                s += g.p_full[k] * g.c.get(k, i, j);
            }
            om[(i, j)] = s;
        }
        om[(i, r + i)] = 1.0;
        om[(r + i, i)] = -1.0;
    }
    om
}

/// Refuses matrices with `σ_min < 1e−12·σ_max`.
pub fn check_nondegenerate(m: &DMatrix<f64>) -> Result<()> {
    let sv = m.clone().singular_values();
    let (lo, hi) = (sv.min(), sv.max());
    if !(lo > 1e-12 * hi) {
        return Err(Error::Degenerate(format!("singular value ratio {:e}", lo / hi)));
    }
    Ok(())
}

pub fn pi_from_omega(om: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_nondegenerate(om)?;
    let inv = om
        .clone()
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::Degenerate("Ω_𝒞".into()))?;
    Ok(-inv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::ad;
    use crate::symmetry::SymmetryData;

    /// Free particle on ℝ² with the coordinate frame and no constraints.
    fn free_particle() -> Arc<NonholonomicSystem> {
        let chart = Chart::euclidean("r2", 2, 2.0);
        let frame = AdaptedFrame::new(Blocks::new(2, 0, 0), |_| DMatrix::identity(2, 2));
        let sym = SymmetryData::trivial(2);
        Arc::new(NonholonomicSystem::new(
            "free",
            chart,
            frame,
            |_| DMatrix::identity(2, 2) * ad(1.0),
            |q| q[0] * q[0] * 0.5,
            sym,
        ))
    }

    #[test]
    fn free_particle_is_canonical() {
        let s = free_particle();
        let z = [0.3, -0.2, 1.0, 0.5];
        let om = s.omega_c(&z).unwrap();
        let expect = DMatrix::from_row_slice(4, 4, &[
            0.0, 0.0, 1.0, 0.0, //
            0.0, 0.0, 0.0, 1.0, //
            -1.0, 0.0, 0.0, 0.0, //
            0.0, -1.0, 0.0, 0.0,
        ]);
        assert_eq!(om, expect);
        let xh = s.x_nh(&z).unwrap();
        // q̇ = p, ṗ = −∂U
        assert!((xh - DVector::from_vec(vec![1.0, 0.5, -0.3, 0.0])).amax() < 1e-14);
        let q0 = s.momentum_field(0);
        let x0 = ScalarField::new_ad(|z| z[0]);
        assert_eq!(s.bracket(&z, &x0, &q0, None).unwrap(), 1.0);
    }

    #[test]
    fn zero_momentum_gives_potential() {
        let s = free_particle();
        assert!((s.hamiltonian(&[0.4, 0.0, 0.0, 0.0]) - 0.08).abs() < 1e-15);
        let h1 = s.hamiltonian(&[0.4, 0.1, 0.3, -0.2]) - 0.08;
        let h2 = s.hamiltonian(&[0.4, 0.1, 0.6, -0.4]) - 0.08;
        assert!((h2 - 4.0 * h1).abs() < 1e-13, "{h1} {h2}");
    }
}
