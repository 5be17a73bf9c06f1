//! Semibasic 2-forms B = B₁ + 𝓑 that gauge the nonholonomic bracket, their
//! construction from a basis of horizontal gauge symmetries, and brackets of
//! invariant functions.
//!
//! A gauge 2-form is stored through its coordinate matrix on Q as a function
//! of `(q, p_cov)`, so one form can be read on every frame of the same chart.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geom::{d_covector, lift, re_mat, Ad, AdaptedFrame, Chart, ScalarField};
use crate::symmetry::{self, SymmetryData};
use crate::system::{NonholonomicSystem, PhaseFn};

type AdMat = Arc<dyn Fn(&[Ad]) -> DMatrix<Ad> + Send + Sync>;
type CoordFn = Arc<dyn Fn(&[f64], &[f64]) -> Result<DMatrix<f64>> + Send + Sync>;

/// Horizontal gauge symmetries `η_k = Σ_j F_kj ζ_j` over the 𝔤_S sections of
/// a base system.
#[derive(Clone)]
pub struct HgsBasis {
    pub l: usize,
    f: AdMat,
}

impl HgsBasis {
    pub fn new(l: usize, f: impl Fn(&[Ad]) -> DMatrix<Ad> + Send + Sync + 'static) -> Self {
        HgsBasis { l, f: Arc::new(f) }
    }

    pub fn identity(l: usize) -> Self {
        HgsBasis::new(l, move |_| DMatrix::identity(l, l))
    }

    pub fn matrix_ad(&self, q: &[Ad]) -> DMatrix<Ad> {
        (self.f)(q)
    }

    pub fn matrix(&self, q: &[f64]) -> DMatrix<f64> {
        re_mat(&self.matrix_ad(&lift(q)))
    }

    pub fn check(&self, q: &[f64]) -> Result<()> {
        let d = self.matrix(q).determinant();
        if d.abs() < 1e-12 || !d.is_finite() {
            return Err(Error::Degenerate(format!("HGS matrix at {q:?}")));
        }
        Ok(())
    }

    /// Global coefficients of the sections η_k, as the columns of an m×l matrix.
    pub fn sections_ad(&self, base: &SymmetryData, q: &[Ad]) -> DMatrix<Ad> {
        base.s_sections_ad(q) * self.matrix_ad(q).transpose()
    }
}

/// The base system rewritten on the frame whose S block is `(η_k)_Q`.
pub fn hgs_system(base: &NonholonomicSystem, hgs: &HgsBasis, name: &str, chart: Chart) -> NonholonomicSystem {
    let b = base.blocks();
    assert_eq!(b.s, hgs.l);
    let bf = base.frame.clone();
    let h1 = hgs.clone();
    let frame = AdaptedFrame::new(b, move |q| {
        let mut v = bf.matrix_ad(q);
        let ys = v.columns(b.h, b.s) * h1.matrix_ad(q).transpose();
        v.columns_mut(b.h, b.s).copy_from(&ys);
        v
    });
    let s0 = base.symmetry.clone();
    let h2 = hgs.clone();
    let sym = base.symmetry.with_s_sections(move |q| h2.sections_ad(&s0, q));
    base.with_frame(name, chart, frame, sym)
}

/// Semibasic 2-form on 𝓜, held as its coordinate matrix on Q.
#[derive(Clone)]
pub struct GaugeTwoForm {
    pub name: String,
    coords: CoordFn,
    pub parts: Option<Box<(GaugeTwoForm, GaugeTwoForm)>>,
}

impl std::fmt::Debug for GaugeTwoForm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GaugeTwoForm").field("name", &self.name).finish()
    }
}

impl GaugeTwoForm {
    pub fn new(
        name: &str,
        coords: impl Fn(&[f64], &[f64]) -> Result<DMatrix<f64>> + Send + Sync + 'static,
    ) -> Self {
        GaugeTwoForm {
            name: name.to_string(),
            coords: Arc::new(coords),
            parts: None,
        }
    }

    pub fn zero(n: usize) -> Self {
        GaugeTwoForm::new("0", move |_, _| Ok(DMatrix::zeros(n, n)))
    }

    /// Sum of two forms remembering the summands.
    pub fn sum(name: &str, a: GaugeTwoForm, b: GaugeTwoForm) -> Self {
        let (ca, cb) = (a.coords.clone(), b.coords.clone());
        GaugeTwoForm {
            name: name.to_string(),
            coords: Arc::new(move |q, p| Ok(ca(q, p)? + cb(q, p)?)),
            parts: Some(Box::new((a, b))),
        }
    }

    pub fn coords(&self, q: &[f64], p_cov: &[f64]) -> Result<DMatrix<f64>> {
        (self.coords)(q, p_cov)
    }

    /// Coordinate matrix on Q at the phase point z of `sys`.
    pub fn at(&self, sys: &NonholonomicSystem, z: &[f64]) -> Result<DMatrix<f64>> {
        let p = sys.p_cov(z);
        self.coords(&z[..sys.n()], p.as_slice())
    }

    /// Values on the `Ṽ_C` basis of `sys`.
    pub fn block(&self, sys: &NonholonomicSystem, z: &[f64]) -> Result<DMatrix<f64>> {
        Ok(sys.coords_to_block(z, &self.at(sys, z)?))
    }

    /// Matrix in the phase coordinates of `sys`; the momentum rows vanish.
    pub fn phase_matrix(&self, sys: &NonholonomicSystem, z: &[f64]) -> Result<DMatrix<f64>> {
        let n = sys.n();
        let mut m = DMatrix::zeros(n + sys.r(), n + sys.r());
        m.view_mut((0, 0), (n, n)).copy_from(&self.at(sys, z)?);
        Ok(m)
    }
}

/// `(B₁, 𝓑)` on the `Ṽ_C` block of a system whose S block consists of
/// horizontal gauge symmetries, from structure functions:
/// `B₁(Ṽ_I, Ṽ_J) = −p_A C^A_IJ` and on H×H
/// `𝓑(X̃_γ, X̃_δ) = p_A C^A_γδ + ½ v^i (κ_γA C^A_iδ − κ_δA C^A_iγ)`, A over S∪W.
pub fn coordinate_parts(sys: &NonholonomicSystem, z: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    sys.symmetry.check_regular(&z[..sys.n()])?;
    let g = sys.geom(z)?;
    let b = sys.blocks();
    let (n, r, h) = (b.n(), b.r(), b.h);
    let mut b1 = DMatrix::zeros(r, r);
    for i in 0..r {
        for j in 0..r {
            b1[(i, j)] = -(h..n).map(|a| g.p_full[a] * g.c.get(a, i, j)).sum::<f64>();
        }
    }
    let mut bs = DMatrix::zeros(r, r);
    for ga in 0..h {
        for de in 0..h {
            let mut s = -b1[(ga, de)];
            for i in h..r {
                let t: f64 = (h..n)
                    .map(|a| g.kappa[(ga, a)] * g.c.get(a, i, de) - g.kappa[(de, a)] * g.c.get(a, i, ga))
                    .sum();
                s += 0.5 * g.v[i] * t;
            }
            bs[(ga, de)] = s;
        }
    }
    Ok((b1, bs))
}

fn coordinate_form(sys: &Arc<NonholonomicSystem>, name: &str, pick: fn((DMatrix<f64>, DMatrix<f64>)) -> DMatrix<f64>) -> GaugeTwoForm {
    let s = sys.clone();
    GaugeTwoForm::new(name, move |q, p| {
        let z = s.from_cov(q, p);
        let blk = pick(coordinate_parts(&s, &z)?);
        s.block_to_coords(&z, &blk)
    })
}

/// `B = B₁ + 𝓑` from the coordinate formulas on an HGS frame.
pub fn b_coordinate(sys: &Arc<NonholonomicSystem>) -> GaugeTwoForm {
    GaugeTwoForm::sum(
        "B",
        coordinate_form(sys, "B1", |(a, _)| a),
        coordinate_form(sys, "Bscript", |(_, b)| b),
    )
}

/// Pieces of the intrinsic construction at a phase point of the base system.
struct Intrinsic {
    b1: DMatrix<f64>,
    bs: DMatrix<f64>,
}

fn intrinsic_parts(base: &NonholonomicSystem, hgs: &HgsBasis, z: &[f64]) -> Result<Intrinsic> {
    let b = base.blocks();
    let n = base.n();
    let (q, _) = base.split(z);
    base.symmetry.check_regular(q)?;
    hgs.check(q)?;
    let l = b.s;
    let sym = &base.symmetry;

    // A_S^i dual to η_i: A = F⁻ᵀ 𝒴 with 𝒴 the S rows of the base coframe
    let frame = base.frame.clone();
    let a_s = |x: &[Ad], i: usize| -> DVector<Ad> {
        let co = frame.coframe_ad(x).expect("frame degenerate");
        let finv = hgs.matrix_ad(x).try_inverse().expect("HGS matrix singular");
        let mut row = DVector::from_element(n, Ad::from(0.0));
        for j in 0..l {
            row += co.row(b.h + j).transpose() * finv[(j, i)];
        }
        row
    };
    let d_as: Vec<DMatrix<f64>> = (0..l).map(|i| d_covector(&|x: &[Ad]| a_s(x, i), q)).collect();
    let eta = re_mat(&hgs.sections_ad(sym, &lift(q)));
    let j = symmetry::momentum_map(base, z);
    let j_eta = eta.transpose() * &j;

    let pd = base.frame.projector_d(q)?;
    let ph = base.frame.projector_h(q)?;
    let kw = symmetry::curvature_kw(base, q)?;
    let kv = symmetry::curvature_kv(base, q)?;

    // σ^k = 𝒦_W^k + η_i^k d^𝒞A_S^i
    let m = sym.algebra_dim;
    let sigma: Vec<DMatrix<f64>> = (0..m)
        .map(|k| {
            let mut s = kw[k].clone();
            for i in 0..l {
                s += pd.transpose() * &d_as[i] * &pd * eta[(k, i)];
            }
            s
        })
        .collect();

    let mut b1 = symmetry::pair_with(&j, &kw, n);
    for i in 0..l {
        b1 += pd.transpose() * &d_as[i] * &pd * j_eta[i];
    }

    // −½ (κ_𝔤 ∧ i_{P_V X_nh} σ)(P_H ·, P_H ·)
    let ps = base.frame.block_projector(q, b.s_range())?;
    let vs = ps * base.base_velocity(z);
    let gen = sym.generator(q);
    let g = base.metric(q);
    let mut kap = DMatrix::zeros(m, n);
    let mut nu = DMatrix::zeros(m, n);
    for c in 0..n {
        let w = ph.column(c).into_owned();
        kap.set_column(c, &(gen.transpose() * &g * &w));
        for k in 0..m {
            nu[(k, c)] = (vs.transpose() * &sigma[k] * &w)[(0, 0)];
        }
    }
    let t = kap.transpose() * &nu;
    let wedge = &t - t.transpose();
    let bs = -symmetry::pair_with(&j, &kv, n) - wedge * 0.5;
    Ok(Intrinsic { b1, bs })
}

/// `B = ⟨J, 𝒦_W + d^𝒞A_S^i⊗η_i⟩ − ⟨J, 𝒦_V⟩ − ½(κ_𝔤 ∧ i_{P_V X_nh}σ)(P_H·, P_H·)`,
/// built on the base frame from the HGS matrix.
pub fn b_intrinsic(base: &Arc<NonholonomicSystem>, hgs: &HgsBasis) -> GaugeTwoForm {
    let part = |which: bool| {
        let (s, h) = (base.clone(), hgs.clone());
        GaugeTwoForm::new(if which { "B1" } else { "Bscript" }, move |q, p| {
            let z = s.from_cov(q, p);
            let ip = intrinsic_parts(&s, &h, &z)?;
            Ok(if which { ip.b1 } else { ip.bs })
        })
    };
    GaugeTwoForm::sum("B", part(true), part(false))
}

/// Bivector gauged by B in the phase coordinates of `sys`.
pub fn gauge_transform(sys: &NonholonomicSystem, b: &GaugeTwoForm, z: &[f64]) -> Result<DMatrix<f64>> {
    let blk = b.block(sys, z)?;
    sys.bivector(z, Some(&blk))
}

/// `|i_{X_nh} B|_𝒞|`, largest component.
pub fn dynamical_defect(sys: &NonholonomicSystem, b: &GaugeTwoForm, z: &[f64]) -> Result<f64> {
    let blk = b.block(sys, z)?;
    let v = sys.velocity_coefficients(z);
    Ok((blk.transpose() * v).amax())
}

/// Largest `|π_B♯(dJ_k) + (η_k)_𝓜|` on an HGS system, where `J_k = p_k`.
pub fn casimir_defect(sys: &NonholonomicSystem, b: &GaugeTwoForm, z: &[f64]) -> Result<f64> {
    let b_blk = b.block(sys, z)?;
    let bl = sys.blocks();
    let n = sys.n();
    let pi = sys.bivector(z, Some(&b_blk))?;
    let eta = sys.symmetry.s_sections(&z[..n]);
    let mut worst: f64 = 0.0;
    for k in 0..bl.s {
        let mut dj = DVector::zeros(z.len());
        dj[n + bl.h + k] = 1.0;
        let sharp = pi.transpose() * dj;
        let lift = symmetry::section_lift(sys, &eta.column(k).into_owned(), z);
        worst = worst.max((sharp + lift).amax());
    }
    Ok(worst)
}

/// `{f, g}` for invariant functions, refusing inputs that are not invariant
/// and checking that the value is constant along the orbit.
pub fn reduced_bracket(
    sys: &Arc<NonholonomicSystem>,
    b: Option<&GaugeTwoForm>,
    f: &PhaseFn,
    g: &PhaseFn,
    z: &[f64],
) -> Result<f64> {
    let tol = 1e-7;
    let pts = vec![z.to_vec()];
    for h in [f, g] {
        let d = symmetry::invariance_defect_function(sys, h, &pts)?;
        if d > 1e-6 {
            return Err(Error::NotInvariant(d));
        }
    }
    let (ff, gf) = (sys.phase_field(f.clone()), sys.phase_field(g.clone()));
    let eval = |z: &[f64]| -> Result<f64> {
        let blk = match b {
            Some(b) => Some(b.block(sys, z)?),
            None => None,
        };
        sys.bracket(z, &ff, &gf, blk.as_ref())
    };
    let v0 = eval(z)?;
    let m = sys.symmetry.algebra_dim;
    let chi: Vec<f64> = (0..m).map(|k| 0.3 + 0.2 * k as f64).collect();
    let z1 = symmetry::flow_generator(sys, &chi, z, 0.5, 100)?;
    let v1 = eval(&z1)?;
    if (v1 - v0).abs() > tol * (1.0 + v0.abs()) {
        return Err(Error::NotInvariant((v1 - v0).abs()));
    }
    Ok(v0)
}

pub type Oracle = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

/// Closed form `{f_i, f_j}` as a function of `(q, p_cov)`.
#[derive(Clone)]
pub struct BracketOracle {
    pub i: usize,
    pub j: usize,
    pub f: Oracle,
}

#[derive(Debug, Clone, Serialize)]
pub struct BracketRow {
    pub pair: String,
    pub point: usize,
    pub value: f64,
    pub oracle: Option<f64>,
    pub residual: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PairSummary {
    pub pair: String,
    pub max_abs_value: f64,
    pub max_residual: Option<f64>,
    pub max_relative_residual: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BracketTable {
    pub names: Vec<String>,
    pub rows: Vec<BracketRow>,
    pub summary: Vec<PairSummary>,
    /// Largest `|{f,g} + {g,f}|` seen.
    pub antisymmetry_defect: f64,
}

/// All pairwise brackets of the system's invariants over a point cloud.
/// A pair with no registered oracle is compared against zero, unless no
/// oracle is given at all.
pub fn bracket_table(
    sys: &Arc<NonholonomicSystem>,
    b: Option<&GaugeTwoForm>,
    oracles: &[BracketOracle],
    points: &[Vec<f64>],
) -> Result<BracketTable> {
    let inv = &sys.symmetry.invariants;
    let names: Vec<String> = inv.iter().map(|i| i.name.clone()).collect();
    let fields: Vec<ScalarField> = inv.iter().map(|i| sys.phase_field(i.f.clone())).collect();
    let k = inv.len();
    let per_point: Vec<Result<(DMatrix<f64>, Vec<f64>, f64)>> = points
        .par_iter()
        .map(|z| {
            let blk = match b {
                Some(b) => Some(b.block(sys, z)?),
                None => None,
            };
            let pi = sys.bivector(z, blk.as_ref())?;
            let grads: Vec<DVector<f64>> = fields.iter().map(|f| f.grad(z)).collect();
            let vals = DMatrix::from_fn(k, k, |i, j| (grads[i].transpose() * &pi * &grads[j])[(0, 0)]);
            let asym = (&vals + vals.transpose()).amax();
            let p = sys.p_cov(z);
            let q = &z[..sys.n()];
            let mut flat = vec![f64::NAN; k * k];
            for o in oracles {
                flat[o.i * k + o.j] = (o.f)(q, p.as_slice());
            }
            Ok((vals, flat, asym))
        })
        .collect();
    let mut rows = Vec::new();
    let mut summary: Vec<PairSummary> = Vec::new();
    let mut asym: f64 = 0.0;
    let mut results = Vec::new();
    for r in per_point {
        results.push(r?);
    }
    for i in 0..k {
        for j in (i + 1)..k {
            let pair = format!("{},{}", names[i], names[j]);
            let compare = !oracles.is_empty();
            let start = if compare { Some(0.0) } else { None };
            let mut s = PairSummary {
                pair: pair.clone(),
                max_abs_value: 0.0,
                max_residual: start,
                max_relative_residual: start,
            };
            for (pt, (vals, flat, a)) in results.iter().enumerate() {
                asym = asym.max(*a);
                let v = vals[(i, j)];
                s.max_abs_value = s.max_abs_value.max(v.abs());
                let (oracle, residual) = if compare {
                    let o = flat[i * k + j];
                    let o = if o.is_nan() { 0.0 } else { o };
                    let res = v - o;
                    s.max_residual = s.max_residual.map(|m| m.max(res.abs()));
                    s.max_relative_residual = s.max_relative_residual.map(|m| m.max(res.abs() / o.abs().max(1.0)));
                    (Some(o), Some(res))
                } else {
                    (None, None)
                };
                rows.push(BracketRow {
                    pair: pair.clone(),
                    point: pt,
                    value: v,
                    oracle,
                    residual,
                });
            }
            summary.push(s);
        }
    }
    Ok(BracketTable {
        names,
        rows,
        summary,
        antisymmetry_defect: asym,
    })
}

impl BracketTable {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["pair", "point", "value", "oracle", "residual"])?;
        for r in &self.rows {
            out.write_record([
                r.pair.clone(),
                r.point.to_string(),
                crate::fmt17(r.value),
                r.oracle.map(crate::fmt17).unwrap_or_default(),
                r.residual.map(crate::fmt17).unwrap_or_default(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn max_residual(&self) -> f64 {
        self.summary
            .iter()
            .filter_map(|s| s.max_relative_residual)
            .fold(0.0, f64::max)
    }
}
