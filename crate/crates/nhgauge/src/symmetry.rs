//! Group action data on a chart: infinitesimal generators, the sections of 𝔤_S
//! and 𝔤_W, connections, curvatures and the nonholonomic momentum map.
//!
//! Algebra elements are coefficient vectors in one fixed basis {χ_I}. Sections
//! are matrices over Q whose columns are such vectors.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geom::{
    d_covector, eps_mat, lift, re_mat, seed_dir, Ad, AlgebraValuedForm, KForm, Predicate, VectorField,
};
use crate::system::{NonholonomicSystem, PhaseFn};

type AdMat = Arc<dyn Fn(&[Ad]) -> DMatrix<Ad> + Send + Sync>;

#[derive(Clone)]
pub struct Invariant {
    pub name: String,
    pub f: PhaseFn,
}

impl Invariant {
    pub fn new(name: &str, f: impl Fn(&[Ad], &[Ad]) -> Ad + Send + Sync + 'static) -> Self {
        Invariant {
            name: name.to_string(),
            f: Arc::new(f),
        }
    }
}

#[derive(Clone)]
pub struct SymmetryData {
    pub algebra_dim: usize,
    pub basis_names: Vec<String>,
    generator: AdMat,
    s_sections: AdMat,
    w_sections: AdMat,
    regular: Predicate,
    pub invariants: Vec<Invariant>,
}

impl std::fmt::Debug for SymmetryData {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SymmetryData")
            .field("algebra_dim", &self.algebra_dim)
            .field("invariants", &self.invariants.iter().map(|i| &i.name).collect::<Vec<_>>())
            .finish()
    }
}

impl SymmetryData {
    /// `generator(q)` is the n×m matrix with columns `(χ_I)_Q`; the section
    /// maps return m×|S| and m×|W| coefficient matrices.
    pub fn new(
        basis_names: &[&str],
        generator: impl Fn(&[Ad]) -> DMatrix<Ad> + Send + Sync + 'static,
        s_sections: impl Fn(&[Ad]) -> DMatrix<Ad> + Send + Sync + 'static,
        w_sections: impl Fn(&[Ad]) -> DMatrix<Ad> + Send + Sync + 'static,
    ) -> Self {
        SymmetryData {
            algebra_dim: basis_names.len(),
            basis_names: basis_names.iter().map(|s| s.to_string()).collect(),
            generator: Arc::new(generator),
            s_sections: Arc::new(s_sections),
            w_sections: Arc::new(w_sections),
            regular: Arc::new(|_| true),
            invariants: Vec::new(),
        }
    }

    /// No symmetry on an n-dimensional chart.
    pub fn trivial(n: usize) -> Self {
        SymmetryData::new(&[], move |_| DMatrix::zeros(n, 0), |_| DMatrix::zeros(0, 0), |_| DMatrix::zeros(0, 0))
    }

    pub fn with_regular(mut self, p: impl Fn(&[f64]) -> bool + Send + Sync + 'static) -> Self {
        self.regular = Arc::new(p);
        self
    }

    pub fn with_invariants(mut self, inv: Vec<Invariant>) -> Self {
        self.invariants = inv;
        self
    }

    /// Replace the 𝔤_S sections, keeping everything else.
    pub fn with_s_sections(&self, s: impl Fn(&[Ad]) -> DMatrix<Ad> + Send + Sync + 'static) -> Self {
        let mut out = self.clone();
        out.s_sections = Arc::new(s);
        out
    }

    pub fn is_regular(&self, q: &[f64]) -> bool {
        (self.regular)(q)
    }

    pub fn check_regular(&self, q: &[f64]) -> Result<()> {
        if self.is_regular(q) {
            Ok(())
        } else {
            Err(Error::Singular(format!("orbit dimension drops at {q:?}")))
        }
    }

    pub fn generator_ad(&self, q: &[Ad]) -> DMatrix<Ad> {
        (self.generator)(q)
    }
    pub fn generator(&self, q: &[f64]) -> DMatrix<f64> {
        re_mat(&self.generator_ad(&lift(q)))
    }
    pub fn s_sections_ad(&self, q: &[Ad]) -> DMatrix<Ad> {
        (self.s_sections)(q)
    }
    pub fn s_sections(&self, q: &[f64]) -> DMatrix<f64> {
        re_mat(&self.s_sections_ad(&lift(q)))
    }
    pub fn w_sections_ad(&self, q: &[Ad]) -> DMatrix<Ad> {
        (self.w_sections)(q)
    }
    pub fn w_sections(&self, q: &[f64]) -> DMatrix<f64> {
        re_mat(&self.w_sections_ad(&lift(q)))
    }

    /// All sections `{ζ_i, ξ_a}` side by side, m×(|S|+|W|).
    pub fn vertical_sections_ad(&self, q: &[Ad]) -> DMatrix<Ad> {
        let s = self.s_sections_ad(q);
        let w = self.w_sections_ad(q);
        let mut out = DMatrix::from_element(s.nrows(), s.ncols() + w.ncols(), Ad::from(0.0));
        out.columns_mut(0, s.ncols()).copy_from(&s);
        out.columns_mut(s.ncols(), w.ncols()).copy_from(&w);
        out
    }
}

/// `χ_Q` for a constant algebra element.
pub fn generator_field(sys: &Arc<NonholonomicSystem>, chi: &[f64]) -> VectorField {
    let s = sys.clone();
    let chi: Vec<Ad> = chi.iter().map(|&c| Ad::from(c)).collect();
    VectorField::from_ad(sys.n(), move |q| s.symmetry.generator_ad(q) * DVector::from_column_slice(&chi))
}

/// Largest mismatch between `(ζ_i)_Q`, `(ξ_a)_Q` and the frame's S and W columns.
pub fn section_defect(sys: &NonholonomicSystem, q: &[f64]) -> f64 {
    let b = sys.blocks();
    let g = sys.symmetry.generator(q);
    let v = sys.frame.matrix(q);
    let ys = &g * sys.symmetry.s_sections(q);
    let zs = &g * sys.symmetry.w_sections(q);
    let ds = (ys - v.columns(b.h, b.s)).amax();
    let dw = (zs - v.columns(b.r(), b.w)).amax();
    ds.max(dw)
}

/// Rank of `D_q + V_q`, which the dimension assumption requires to be n.
pub fn dimension_rank(sys: &NonholonomicSystem, q: &[f64]) -> usize {
    let v = sys.frame.matrix(q);
    let r = sys.r();
    let g = sys.symmetry.generator(q);
    let mut m = DMatrix::zeros(sys.n(), r + g.ncols());
    m.columns_mut(0, r).copy_from(&v.columns(0, r));
    m.columns_mut(r, g.ncols()).copy_from(&g);
    let sv = m.singular_values();
    let tol = 1e-9 * sv.max();
    sv.iter().filter(|s| **s > tol).count()
}

/// Components of `[χ_Q, V_I]` for all frame vectors, χ frozen.
fn bracket_with_frame(sys: &NonholonomicSystem, q: &[f64], chi: &DVector<f64>) -> DMatrix<f64> {
    let n = sys.n();
    let chi_ad: DVector<Ad> = chi.map(Ad::from);
    let v = sys.frame.matrix(q);
    let xq = sys.symmetry.generator(q) * chi;
    // D V · χ_Q
    let dv = eps_mat(&sys.frame.matrix_ad(&seed_dir(q, xq.as_slice())));
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        let dchi = crate::geom::eps_vec(&(sys.symmetry.generator_ad(&seed_dir(q, v.column(i).as_slice())) * &chi_ad));
        out.set_column(i, &(dv.column(i) - dchi));
    }
    out
}

/// Cotangent lift of χ restricted to 𝓜, in phase coordinates. χ is held
/// constant, so for a section this is the lift of its value at the point.
pub fn lifted_generator(sys: &NonholonomicSystem, chi: &[f64], z: &[f64]) -> DVector<f64> {
    let (q, _) = sys.split(z);
    let (n, r) = (sys.n(), sys.r());
    let chi = DVector::from_column_slice(chi);
    let xq = sys.symmetry.generator(q) * &chi;
    let br = bracket_with_frame(sys, q, &chi);
    let p_cov = sys.p_cov(z);
    let mut out = DVector::zeros(n + r);
    out.rows_mut(0, n).copy_from(&xq);
    for c in 0..r {
        out[n + c] = p_cov.dot(&br.column(c));
    }
    out
}

/// Lift of a section evaluated at the base point of z.
pub fn section_lift(sys: &NonholonomicSystem, section: &DVector<f64>, z: &[f64]) -> DVector<f64> {
    lifted_generator(sys, section.as_slice(), z)
}

/// `⟨J(z), χ_I⟩ = p_cov((χ_I)_Q)` for every basis element.
pub fn momentum_map(sys: &NonholonomicSystem, z: &[f64]) -> DVector<f64> {
    let (q, _) = sys.split(z);
    sys.symmetry.generator(q).transpose() * sys.p_cov(z)
}

pub fn momentum_map_ad(sys: &NonholonomicSystem, z: &[Ad]) -> DVector<Ad> {
    let (q, _) = sys.split(z);
    sys.symmetry.generator_ad(q).transpose() * sys.p_cov_ad(z)
}

/// Pairing of J with a section depending on q, as a function on 𝓜.
pub fn j_section_ad(sys: &NonholonomicSystem, z: &[Ad], section: &DVector<Ad>) -> Ad {
    momentum_map_ad(sys, z).dot(section)
}

/// Rows are the global components `A^I` of a connection with the given
/// frame blocks as its vertical part.
fn connection_rows_ad(sys: &NonholonomicSystem, q: &[Ad], with_s: bool, with_w: bool) -> DMatrix<Ad> {
    let b = sys.blocks();
    let co = sys.frame.coframe_ad(q).expect("frame degenerate");
    let m = sys.symmetry.algebra_dim;
    let mut out = DMatrix::from_element(m, sys.n(), Ad::from(0.0));
    if with_s && b.s > 0 {
        out += sys.symmetry.s_sections_ad(q) * co.rows(b.h, b.s);
    }
    if with_w && b.w > 0 {
        out += sys.symmetry.w_sections_ad(q) * co.rows(b.r(), b.w);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connection {
    W,
    S,
    V,
}

impl Connection {
    fn parts(self) -> (bool, bool) {
        match self {
            Connection::W => (false, true),
            Connection::S => (true, false),
            Connection::V => (true, true),
        }
    }
}

/// Covector rows of a connection at q.
pub fn connection_matrix(sys: &NonholonomicSystem, which: Connection, q: &[f64]) -> DMatrix<f64> {
    let (s, w) = which.parts();
    re_mat(&connection_rows_ad(sys, &lift(q), s, w))
}

/// `dA^I` for each global component, exact through dual numbers.
pub fn connection_differentials(sys: &NonholonomicSystem, which: Connection, q: &[f64]) -> Vec<DMatrix<f64>> {
    let (s, w) = which.parts();
    (0..sys.symmetry.algebra_dim)
        .map(|k| {
            d_covector(
                &|x: &[Ad]| connection_rows_ad(sys, x, s, w).row(k).transpose(),
                q,
            )
        })
        .collect()
}

/// `𝒦_W^I = P_Dᵀ dA_W^I P_D` as coordinate matrices on Q.
pub fn curvature_kw(sys: &NonholonomicSystem, q: &[f64]) -> Result<Vec<DMatrix<f64>>> {
    sys.symmetry.check_regular(q)?;
    let pd = sys.frame.projector_d(q)?;
    Ok(connection_differentials(sys, Connection::W, q)
        .into_iter()
        .map(|d| pd.transpose() * d * &pd)
        .collect())
}

/// `𝒦_V^I = P_Hᵀ dA_V^I P_H`.
pub fn curvature_kv(sys: &NonholonomicSystem, q: &[f64]) -> Result<Vec<DMatrix<f64>>> {
    sys.symmetry.check_regular(q)?;
    let ph = sys.frame.projector_h(q)?;
    Ok(connection_differentials(sys, Connection::V, q)
        .into_iter()
        .map(|d| ph.transpose() * d * &ph)
        .collect())
}

pub fn pair_with(j: &DVector<f64>, forms: &[DMatrix<f64>], n: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(n, n);
    for (jk, f) in j.iter().zip(forms) {
        out += f * *jk;
    }
    out
}

/// `⟨J, 𝒦_W⟩` at z as a coordinate matrix on Q.
pub fn j_kw(sys: &NonholonomicSystem, z: &[f64]) -> Result<DMatrix<f64>> {
    let (q, _) = sys.split(z);
    Ok(pair_with(&momentum_map(sys, z), &curvature_kw(sys, q)?, sys.n()))
}

pub fn j_kv(sys: &NonholonomicSystem, z: &[f64]) -> Result<DMatrix<f64>> {
    let (q, _) = sys.split(z);
    Ok(pair_with(&momentum_map(sys, z), &curvature_kv(sys, q)?, sys.n()))
}

/// `⟨κ_𝔤(U), χ_I⟩ = κ(U, (χ_I)_Q)` for a tangent vector U on Q.
pub fn kappa_g(sys: &NonholonomicSystem, q: &[f64], u: &DVector<f64>) -> DVector<f64> {
    sys.symmetry.generator(q).transpose() * sys.metric(q) * u
}

/// The three connections and the curvatures as 𝔤-valued forms on Q.
pub fn connection_forms(sys: &Arc<NonholonomicSystem>) -> (AlgebraValuedForm, AlgebraValuedForm, AlgebraValuedForm) {
    let mk = |which: Connection| {
        let comps = (0..sys.symmetry.algebra_dim)
            .map(|k| {
                let s = sys.clone();
                KForm::from_covector(sys.n(), move |q| connection_matrix(&s, which, q).row(k).transpose())
            })
            .collect();
        AlgebraValuedForm::new(sys.symmetry.basis_names.clone(), comps).expect("uniform degree")
    };
    (mk(Connection::W), mk(Connection::S), mk(Connection::V))
}

pub fn curvature_form(sys: &Arc<NonholonomicSystem>, which: Connection) -> AlgebraValuedForm {
    let comps = (0..sys.symmetry.algebra_dim)
        .map(|k| {
            let s = sys.clone();
            KForm::from_matrix(sys.n(), move |q| {
                let all = match which {
                    Connection::W => curvature_kw(&s, q),
                    _ => curvature_kv(&s, q),
                };
                all.expect("curvature undefined")[k].clone()
            })
        })
        .collect();
    AlgebraValuedForm::new(sys.symmetry.basis_names.clone(), comps).expect("uniform degree")
}

/// `Λ_η` in phase coordinates: on 𝒞 it is `−i_{η_𝓜}Ω_𝒞 + dJ_η`, on 𝒲 zero.
/// The section is given as a function of q in dual numbers.
pub fn lambda_eta(
    sys: &NonholonomicSystem,
    section: &dyn Fn(&[Ad]) -> DVector<Ad>,
    z: &[f64],
) -> Result<DVector<f64>> {
    let (q, _) = sys.split(z);
    sys.symmetry.check_regular(q)?;
    let r = sys.r();
    let eta = crate::geom::re_vec(&section(&lift(q)));
    let lift_vec = section_lift(sys, &eta, z);
    let comps = sys.c_components(z, &lift_vec)?;
    let om = sys.omega_c(z)?;
    // (i_X Ω)(e_b) = Σ_a X^a Ω_ab
    let i_x = om.transpose() * &comps;
    let dj = dj_section(sys, section, z);
    let e = sys.c_basis(z);
    let dj_c = e.transpose() * dj;
    let lam_c = dj_c - i_x;
    // back to phase coordinates through the 𝒞 rows of the adapted coframe
    let a = sys.adapted_coframe(z)?;
    let (n, _) = (sys.n(), r);
    let mut out = DVector::zeros(n + r);
    for (row, i) in (0..r).chain(n..n + r).enumerate() {
        out += a.row(i).transpose() * lam_c[row];
    }
    Ok(out)
}

/// `dJ_η` for a q-dependent section, exact.
pub fn dj_section(sys: &NonholonomicSystem, section: &dyn Fn(&[Ad]) -> DVector<Ad>, z: &[f64]) -> DVector<f64> {
    let n = sys.n();
    DVector::from_iterator(
        z.len(),
        (0..z.len()).map(|k| {
            let zz = crate::geom::seed_axis(z, k);
            let s = section(&zz[..n]);
            j_section_ad(sys, &zz, &s).eps
        }),
    )
}

/// Largest `|dF(χ_𝓜)|` over the given points and algebra basis elements.
pub fn invariance_defect_function(sys: &Arc<NonholonomicSystem>, f: &PhaseFn, points: &[Vec<f64>]) -> Result<f64> {
    let field = sys.phase_field(f.clone());
    let m = sys.symmetry.algebra_dim;
    let mut worst: f64 = 0.0;
    for z in points {
        sys.symmetry.check_regular(&z[..sys.n()])?;
        let g = field.grad(z);
        for k in 0..m {
            let mut chi = vec![0.0; m];
            chi[k] = 1.0;
            worst = worst.max(g.dot(&lifted_generator(sys, &chi, z)).abs());
        }
    }
    Ok(worst)
}

/// Largest entry of `£_{χ_𝓜} ω` for a 2-form given as phase-coordinate
/// matrices, with the Jacobian of the lift from central differences.
pub fn invariance_defect_form(
    sys: &NonholonomicSystem,
    form: &dyn Fn(&[f64]) -> Result<DMatrix<f64>>,
    points: &[Vec<f64>],
) -> Result<f64> {
    let m = sys.symmetry.algebra_dim;
    let mut worst: f64 = 0.0;
    for z in points {
        sys.symmetry.check_regular(&z[..sys.n()])?;
        for k in 0..m {
            let mut chi = vec![0.0; m];
            chi[k] = 1.0;
            let x = lifted_generator(sys, &chi, z);
            let dim = z.len();
            let mut jac = DMatrix::zeros(dim, dim);
            let mut dw = DMatrix::zeros(dim, dim);
            for mu in 0..dim {
                let h = crate::geom::axis_step(z[mu]);
                let mut zp = z.clone();
                let mut zm = z.clone();
                zp[mu] += h;
                zm[mu] -= h;
                let dx = (lifted_generator(sys, &chi, &zp) - lifted_generator(sys, &chi, &zm)) / (2.0 * h);
                jac.set_column(mu, &dx);
                dw += (form(&zp)? - form(&zm)?) * (x[mu] / (2.0 * h));
            }
            let w = form(z)?;
            let lie = dw + jac.transpose() * &w + &w * jac;
            worst = worst.max(lie.amax());
        }
    }
    Ok(worst)
}

/// Flow of `χ_𝓜` for time t by fixed-step RK4.
pub fn flow_generator(sys: &NonholonomicSystem, chi: &[f64], z: &[f64], t: f64, steps: usize) -> Result<Vec<f64>> {
    let h = t / steps as f64;
    let f = |x: &[f64]| -> Result<DVector<f64>> {
        sys.check_phase(x)?;
        Ok(lifted_generator(sys, chi, x))
    };
    let mut x = DVector::from_column_slice(z);
    for _ in 0..steps {
        let k1 = f(x.as_slice())?;
        let k2 = f((&x + &k1 * (h / 2.0)).as_slice())?;
        let k3 = f((&x + &k2 * (h / 2.0)).as_slice())?;
        let k4 = f((&x + &k3 * h).as_slice())?;
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    Ok(x.as_slice().to_vec())
}
