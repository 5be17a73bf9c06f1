//! Exterior calculus on a single chart.
//!
//! Fields are coefficient functions in the coordinate frame. Derivatives come
//! from forward-mode dual numbers when a field is built from an `Ad` closure,
//! and from central differences otherwise.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub use num_dual::Dual64 as Ad;
pub use num_dual::DualNum;

/// Seed used by every sampled check.
pub const SEED: u64 = 0x5EED;

const DEFAULT_STEP: f64 = 1e-5;
static FD_STEP: AtomicU64 = AtomicU64::new(0);

/// Base finite-difference step. The step on axis μ is `base * max(1, |x_μ|)`.
pub fn fd_step() -> f64 {
    let bits = FD_STEP.load(Ordering::Relaxed);
    if bits == 0 {
        DEFAULT_STEP
    } else {
        f64::from_bits(bits)
    }
}

pub fn set_fd_step(h: f64) {
    FD_STEP.store(h.to_bits(), Ordering::Relaxed);
}

#[inline]
pub fn axis_step(x: f64) -> f64 {
    fd_step() * x.abs().max(1.0)
}

pub fn ad(x: f64) -> Ad {
    Ad::from(x)
}

/// Lift `x` to dual numbers with tangent `dir`.
pub fn seed_dir(x: &[f64], dir: &[f64]) -> Vec<Ad> {
    x.iter().zip(dir).map(|(&a, &b)| Ad::new(a, b)).collect()
}

/// Lift `x` to dual numbers with tangent along axis `k`.
pub fn seed_axis(x: &[f64], k: usize) -> Vec<Ad> {
    x.iter()
        .enumerate()
        .map(|(i, &a)| Ad::new(a, if i == k { 1.0 } else { 0.0 }))
        .collect()
}

pub fn lift(x: &[f64]) -> Vec<Ad> {
    x.iter().map(|&a| ad(a)).collect()
}

pub fn re_vec(v: &DVector<Ad>) -> DVector<f64> {
    v.map(|d| d.re)
}

pub fn eps_vec(v: &DVector<Ad>) -> DVector<f64> {
    v.map(|d| d.eps)
}

pub fn re_mat(m: &DMatrix<Ad>) -> DMatrix<f64> {
    m.map(|d| d.re)
}

pub fn eps_mat(m: &DMatrix<Ad>) -> DMatrix<f64> {
    m.map(|d| d.eps)
}

/// Central-difference gradient.
pub fn fd_gradient(f: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> DVector<f64> {
    let mut xp = x.to_vec();
    DVector::from_iterator(
        x.len(),
        (0..x.len()).map(|k| {
            let h = axis_step(x[k]);
            xp[k] = x[k] + h;
            let fp = f(&xp);
            xp[k] = x[k] - h;
            let fm = f(&xp);
            xp[k] = x[k];
            (fp - fm) / (2.0 * h)
        }),
    )
}

/// Central-difference partial derivatives of a matrix-valued function, one per axis.
pub fn fd_partials(f: &dyn Fn(&[f64]) -> DMatrix<f64>, x: &[f64]) -> Vec<DMatrix<f64>> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|k| {
            let h = axis_step(x[k]);
            xp[k] = x[k] + h;
            let fp = f(&xp);
            xp[k] = x[k] - h;
            let fm = f(&xp);
            xp[k] = x[k];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

pub type Predicate = Arc<dyn Fn(&[f64]) -> bool + Send + Sync>;

/// A coordinate chart with a box used for sampling and a validity predicate.
#[derive(Clone)]
pub struct Chart {
    pub id: String,
    pub names: Vec<String>,
    pub bounds: Vec<(f64, f64)>,
    domain: Predicate,
}

impl std::fmt::Debug for Chart {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Chart")
            .field("id", &self.id)
            .field("names", &self.names)
            .field("bounds", &self.bounds)
            .finish()
    }
}

impl Chart {
    pub fn new(id: &str, names: &[&str], bounds: Vec<(f64, f64)>, domain: Predicate) -> Self {
        assert_eq!(names.len(), bounds.len());
        Chart {
            id: id.to_string(),
            names: names.iter().map(|s| s.to_string()).collect(),
            bounds,
            domain,
        }
    }

    /// Euclidean chart with no singularities.
    pub fn euclidean(id: &str, dim: usize, half_width: f64) -> Self {
        let names: Vec<String> = (0..dim).map(|i| format!("x{i}")).collect();
        Chart {
            id: id.to_string(),
            names,
            bounds: vec![(-half_width, half_width); dim],
            domain: Arc::new(|_| true),
        }
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().all(|v| v.is_finite()) && (self.domain)(x)
    }

    pub fn check(&self, x: &[f64]) -> Result<()> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(Error::Domain {
                chart: self.id.clone(),
                coords: x.to_vec(),
            })
        }
    }

    pub fn point(&self, coords: Vec<f64>) -> Result<ChartPoint> {
        self.check(&coords)?;
        Ok(ChartPoint {
            chart_id: self.id.clone(),
            coords,
        })
    }

    /// Restrict the sampling box.
    pub fn with_bounds(mut self, bounds: Vec<(f64, f64)>) -> Self {
        assert_eq!(bounds.len(), self.dim());
        self.bounds = bounds;
        self
    }

    /// Checks that a central stencil around `x` stays in the domain.
    pub fn check_stencil(&self, x: &[f64]) -> Result<()> {
        self.check(x)?;
        let mut xp = x.to_vec();
        for k in 0..x.len() {
            let h = axis_step(x[k]);
            for s in [-1.0, 1.0] {
                xp[k] = x[k] + s * h;
                self.check(&xp)?;
            }
            xp[k] = x[k];
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChartPoint {
    pub chart_id: String,
    pub coords: Vec<f64>,
}

/// Seeded uniform sampler over chart boxes.
pub struct Sampler {
    rng: ChaCha8Rng,
}

impl Default for Sampler {
    fn default() -> Self {
        Sampler::new(SEED)
    }
}

impl Sampler {
    pub fn new(seed: u64) -> Self {
        Sampler {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.rng.gen::<f64>()
    }

    pub fn in_box(&mut self, bounds: &[(f64, f64)]) -> Vec<f64> {
        bounds.iter().map(|&(lo, hi)| self.uniform(lo, hi)).collect()
    }

    /// Rejection sample inside the chart domain.
    pub fn point(&mut self, chart: &Chart) -> Vec<f64> {
        for _ in 0..100_000 {
            let x = self.in_box(&chart.bounds);
            if chart.contains(&x) {
                return x;
            }
        }
        panic!("chart `{}`: sampling box misses the domain", chart.id);
    }

    pub fn points(&mut self, chart: &Chart, count: usize) -> Vec<Vec<f64>> {
        (0..count).map(|_| self.point(chart)).collect()
    }
}

type AdScalar = Arc<dyn Fn(&[Ad]) -> Ad + Send + Sync>;
type PlainScalar = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
enum ScalarKind {
    Ad(AdScalar),
    Plain(PlainScalar),
}

/// Real function on a chart.
#[derive(Clone)]
pub struct ScalarField {
    kind: ScalarKind,
}

impl ScalarField {
    /// Differentiable field; gradients are exact.
    pub fn new_ad(f: impl Fn(&[Ad]) -> Ad + Send + Sync + 'static) -> Self {
        ScalarField {
            kind: ScalarKind::Ad(Arc::new(f)),
        }
    }

    /// Plain field; gradients use central differences.
    pub fn new(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        ScalarField {
            kind: ScalarKind::Plain(Arc::new(f)),
        }
    }

    pub fn is_exact(&self) -> bool {
        matches!(self.kind, ScalarKind::Ad(_))
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match &self.kind {
            ScalarKind::Ad(f) => f(&lift(x)).re,
            ScalarKind::Plain(f) => f(x),
        }
    }

    pub fn eval_ad(&self, x: &[Ad]) -> Ad {
        match &self.kind {
            ScalarKind::Ad(f) => f(x),
            ScalarKind::Plain(f) => {
                let xr: Vec<f64> = x.iter().map(|d| d.re).collect();
                let dir: Vec<f64> = x.iter().map(|d| d.eps).collect();
                let g = fd_gradient(&|y| f(y), &xr);
                Ad::new(f(&xr), g.dot(&DVector::from_vec(dir)))
            }
        }
    }

    /// Directional derivative X(f) at x.
    pub fn derivative(&self, x: &[f64], v: &[f64]) -> f64 {
        match &self.kind {
            ScalarKind::Ad(f) => f(&seed_dir(x, v)).eps,
            ScalarKind::Plain(_) => self.grad(x).dot(&DVector::from_column_slice(v)),
        }
    }

    pub fn grad(&self, x: &[f64]) -> DVector<f64> {
        match &self.kind {
            ScalarKind::Ad(f) => {
                DVector::from_iterator(x.len(), (0..x.len()).map(|k| f(&seed_axis(x, k)).eps))
            }
            ScalarKind::Plain(f) => fd_gradient(&|y| f(y), x),
        }
    }

    pub fn scale(&self, c: f64) -> Self {
        let s = self.clone();
        ScalarField::new_ad(move |x| s.eval_ad(x) * c)
    }

    pub fn add(&self, other: &ScalarField) -> Self {
        let (a, b) = (self.clone(), other.clone());
        ScalarField::new_ad(move |x| a.eval_ad(x) + b.eval_ad(x))
    }

    pub fn mul(&self, other: &ScalarField) -> Self {
        let (a, b) = (self.clone(), other.clone());
        ScalarField::new_ad(move |x| a.eval_ad(x) * b.eval_ad(x))
    }
}

type VecFn = Arc<dyn Fn(&[f64]) -> DVector<f64> + Send + Sync>;
type MatFn = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;
type AdVecFn = Arc<dyn Fn(&[Ad]) -> DVector<Ad> + Send + Sync>;

/// Vector field given by its coordinate coefficients.
#[derive(Clone)]
pub struct VectorField {
    pub dim: usize,
    eval: VecFn,
    jac: Option<MatFn>,
}

impl VectorField {
    pub fn new(dim: usize, f: impl Fn(&[f64]) -> DVector<f64> + Send + Sync + 'static) -> Self {
        VectorField {
            dim,
            eval: Arc::new(f),
            jac: None,
        }
    }

    /// Attach an exact Jacobian; it replaces finite differences.
    pub fn with_jacobian(mut self, j: impl Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        self.jac = Some(Arc::new(j));
        self
    }

    /// Field from a dual-number closure; the Jacobian is exact.
    pub fn from_ad(dim: usize, f: impl Fn(&[Ad]) -> DVector<Ad> + Send + Sync + 'static) -> Self {
        let f: AdVecFn = Arc::new(f);
        let g = f.clone();
        VectorField::new(dim, move |x| re_vec(&g(&lift(x)))).with_jacobian(move |x| {
            let mut j = DMatrix::zeros(dim, x.len());
            for k in 0..x.len() {
                j.set_column(k, &eps_vec(&f(&seed_axis(x, k))));
            }
            j
        })
    }

    pub fn coordinate(dim: usize, k: usize) -> Self {
        VectorField::new(dim, move |_| {
            let mut e = DVector::zeros(dim);
            e[k] = 1.0;
            e
        })
        .with_jacobian(move |x| DMatrix::zeros(dim, x.len()))
    }

    pub fn eval(&self, x: &[f64]) -> DVector<f64> {
        let v = (self.eval)(x);
        debug_assert_eq!(v.len(), self.dim);
        v
    }

    pub fn has_exact_jacobian(&self) -> bool {
        self.jac.is_some()
    }

    /// `J[(ν, μ)] = ∂_μ X^ν`.
    pub fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        if let Some(j) = &self.jac {
            return j(x);
        }
        let cols = fd_partials(&|y| DMatrix::from_column_slice(self.dim, 1, (self.eval)(y).as_slice()), x);
        let mut j = DMatrix::zeros(self.dim, x.len());
        for (k, c) in cols.iter().enumerate() {
            j.set_column(k, &c.column(0));
        }
        j
    }

    /// X(f) at x.
    pub fn apply(&self, f: &ScalarField, x: &[f64]) -> f64 {
        f.derivative(x, self.eval(x).as_slice())
    }

    /// The field f·X.
    pub fn scaled_by(&self, f: &ScalarField) -> VectorField {
        let (s, g) = (self.clone(), f.clone());
        let (s2, g2) = (self.clone(), f.clone());
        VectorField::new(self.dim, move |x| s.eval(x) * g.eval(x)).with_jacobian(move |x| {
            let v = s2.eval(x);
            let grad = g2.grad(x);
            s2.jacobian(x) * g2.eval(x) + &v * grad.transpose()
        })
    }
}

/// `[X, Y] = (DY)X − (DX)Y`.
pub fn lie_bracket(x: &VectorField, y: &VectorField, p: &[f64]) -> DVector<f64> {
    let (xv, yv) = (x.eval(p), y.eval(p));
    y.jacobian(p) * xv - x.jacobian(p) * yv
}

/// Same, with stencil membership checked against a chart.
pub fn lie_bracket_checked(chart: &Chart, x: &VectorField, y: &VectorField, p: &[f64]) -> Result<DVector<f64>> {
    if !(x.has_exact_jacobian() && y.has_exact_jacobian()) {
        chart.check_stencil(p)?;
    } else {
        chart.check(p)?;
    }
    Ok(lie_bracket(x, y, p))
}

type FormFn = Arc<dyn Fn(&[f64], &[DVector<f64>]) -> f64 + Send + Sync>;

/// Alternating multilinear form of fixed degree.
#[derive(Clone)]
pub struct KForm {
    pub degree: usize,
    pub dim: usize,
    eval: FormFn,
}

impl KForm {
    pub fn new(
        degree: usize,
        dim: usize,
        f: impl Fn(&[f64], &[DVector<f64>]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        KForm {
            degree,
            dim,
            eval: Arc::new(f),
        }
    }

    pub fn from_scalar(dim: usize, f: ScalarField) -> Self {
        KForm::new(0, dim, move |x, _| f.eval(x))
    }

    /// 1-form from its covector coefficients.
    pub fn from_covector(dim: usize, f: impl Fn(&[f64]) -> DVector<f64> + Send + Sync + 'static) -> Self {
        KForm::new(1, dim, move |x, v| f(x).dot(&v[0]))
    }

    /// 2-form `(u, w) ↦ uᵀ M w` from an antisymmetric coefficient matrix.
    pub fn from_matrix(dim: usize, f: impl Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        KForm::new(2, dim, move |x, v| (v[0].transpose() * f(x) * &v[1])[(0, 0)])
    }

    /// Differential of a scalar field.
    pub fn differential(dim: usize, f: ScalarField) -> Self {
        KForm::new(1, dim, move |x, v| f.derivative(x, v[0].as_slice()))
    }

    pub fn zero(degree: usize, dim: usize) -> Self {
        KForm::new(degree, dim, |_, _| 0.0)
    }

    pub fn eval(&self, x: &[f64], vs: &[DVector<f64>]) -> f64 {
        assert_eq!(vs.len(), self.degree, "form of degree {} fed {} vectors", self.degree, vs.len());
        (self.eval)(x, vs)
    }

    /// Coefficient array on coordinate vectors, `c[(i, j)] = ω(∂_i, ∂_j)` for 2-forms.
    pub fn matrix(&self, x: &[f64]) -> DMatrix<f64> {
        assert_eq!(self.degree, 2);
        let e = |i: usize| {
            let mut v = DVector::zeros(self.dim);
            v[i] = 1.0;
            v
        };
        DMatrix::from_fn(self.dim, self.dim, |i, j| self.eval(x, &[e(i), e(j)]))
    }

    pub fn add(&self, other: &KForm) -> KForm {
        assert_eq!(self.degree, other.degree);
        let (a, b) = (self.clone(), other.clone());
        KForm::new(self.degree, self.dim, move |x, v| a.eval(x, v) + b.eval(x, v))
    }

    pub fn scale(&self, c: f64) -> KForm {
        let a = self.clone();
        KForm::new(self.degree, self.dim, move |x, v| c * a.eval(x, v))
    }

    /// Pointwise multiplication by a function.
    pub fn times(&self, f: &ScalarField) -> KForm {
        let (a, f) = (self.clone(), f.clone());
        KForm::new(self.degree, self.dim, move |x, v| f.eval(x) * a.eval(x, v))
    }

    /// Evaluate with every argument first mapped through `proj(x, v)`.
    pub fn precompose(
        &self,
        proj: impl Fn(&[f64], &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> KForm {
        let a = self.clone();
        KForm::new(self.degree, self.dim, move |x, v| {
            let w: Vec<DVector<f64>> = v.iter().map(|u| proj(x, u)).collect();
            a.eval(x, &w)
        })
    }
}

/// Exterior derivative through the invariant formula on constant coordinate
/// vectors, where all brackets vanish:
/// `dω(v₀,…,v_k) = Σ (−1)^i v_i(ω(…, v̂_i, …))`.
pub fn exterior_derivative(w: &KForm) -> Result<KForm> {
    if w.degree + 1 > w.dim {
        return Err(Error::Degree {
            degree: w.degree + 1,
            dim: w.dim,
        });
    }
    let w = w.clone();
    let k = w.degree;
    Ok(KForm::new(k + 1, w.dim, move |x, vs| {
        let mut total = 0.0;
        let mut xp = x.to_vec();
        for i in 0..=k {
            let rest: Vec<DVector<f64>> = vs
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, v)| v.clone())
                .collect();
            let mut deriv = 0.0;
            for mu in 0..x.len() {
                let c = vs[i][mu];
                if c == 0.0 {
                    continue;
                }
                let h = axis_step(x[mu]);
                xp[mu] = x[mu] + h;
                let fp = w.eval(&xp, &rest);
                xp[mu] = x[mu] - h;
                let fm = w.eval(&xp, &rest);
                xp[mu] = x[mu];
                deriv += c * (fp - fm) / (2.0 * h);
            }
            total += if i % 2 == 0 { deriv } else { -deriv };
        }
        total
    }))
}

fn permutation_sign(p: &[usize]) -> f64 {
    let mut sign = 1.0;
    for i in 0..p.len() {
        for j in i + 1..p.len() {
            if p[i] > p[j] {
                sign = -sign;
            }
        }
    }
    sign
}

/// Ordered k-subsets of 0..n.
fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// `(α∧β)(v₁,…) = Σ_shuffles sgn(σ) α(v_σ…) β(v_σ…)`.
pub fn wedge(a: &KForm, b: &KForm) -> Result<KForm> {
    assert_eq!(a.dim, b.dim);
    let deg = a.degree + b.degree;
    if deg > a.dim {
        return Err(Error::Degree { degree: deg, dim: a.dim });
    }
    let (a, b) = (a.clone(), b.clone());
    let shuffles: Vec<(Vec<usize>, Vec<usize>, f64)> = subsets(deg, a.degree)
        .into_iter()
        .map(|s| {
            let rest: Vec<usize> = (0..deg).filter(|i| !s.contains(i)).collect();
            let perm: Vec<usize> = s.iter().chain(rest.iter()).copied().collect();
            let sign = permutation_sign(&perm);
            (s, rest, sign)
        })
        .collect();
    Ok(KForm::new(deg, a.dim, move |x, vs| {
        shuffles
            .iter()
            .map(|(s, r, sign)| {
                let va: Vec<DVector<f64>> = s.iter().map(|&i| vs[i].clone()).collect();
                let vb: Vec<DVector<f64>> = r.iter().map(|&i| vs[i].clone()).collect();
                sign * a.eval(x, &va) * b.eval(x, &vb)
            })
            .sum()
    }))
}

/// Interior product `i_X ω`.
pub fn contract(xf: &VectorField, w: &KForm) -> Result<KForm> {
    if w.degree == 0 {
        return Err(Error::ZeroForm);
    }
    let (xf, w) = (xf.clone(), w.clone());
    Ok(KForm::new(w.degree - 1, w.dim, move |x, vs| {
        let mut args = Vec::with_capacity(vs.len() + 1);
        args.push(xf.eval(x));
        args.extend(vs.iter().cloned());
        w.eval(x, &args)
    }))
}

/// Maximum antisymmetry defect of ω at x under adjacent swaps of the given arguments.
pub fn antisymmetry_defect(w: &KForm, x: &[f64], vs: &[DVector<f64>]) -> f64 {
    let base = w.eval(x, vs);
    let mut worst: f64 = 0.0;
    for i in 0..vs.len().saturating_sub(1) {
        let mut sw = vs.to_vec();
        sw.swap(i, i + 1);
        worst = worst.max((w.eval(x, &sw) + base).abs());
    }
    worst
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Blocks {
    pub h: usize,
    pub s: usize,
    pub w: usize,
}

impl Blocks {
    pub fn new(h: usize, s: usize, w: usize) -> Self {
        Blocks { h, s, w }
    }
    /// Rank of D.
    pub fn r(&self) -> usize {
        self.h + self.s
    }
    pub fn n(&self) -> usize {
        self.h + self.s + self.w
    }
    pub fn h_range(&self) -> std::ops::Range<usize> {
        0..self.h
    }
    pub fn s_range(&self) -> std::ops::Range<usize> {
        self.h..self.h + self.s
    }
    pub fn w_range(&self) -> std::ops::Range<usize> {
        self.r()..self.n()
    }
}

/// 𝔤-valued form, one component per element of a fixed algebra basis.
#[derive(Clone)]
pub struct AlgebraValuedForm {
    pub basis: Vec<String>,
    pub components: Vec<KForm>,
}

impl AlgebraValuedForm {
    pub fn new(basis: Vec<String>, components: Vec<KForm>) -> Result<Self> {
        if let Some(first) = components.first() {
            if components.iter().any(|c| c.degree != first.degree) {
                return Err(Error::Params("components of mixed degree".into()));
            }
        }
        Ok(AlgebraValuedForm { basis, components })
    }

    pub fn degree(&self) -> usize {
        self.components.first().map_or(0, |c| c.degree)
    }

    pub fn eval(&self, x: &[f64], vs: &[DVector<f64>]) -> DVector<f64> {
        DVector::from_iterator(self.components.len(), self.components.iter().map(|c| c.eval(x, vs)))
    }

    /// Pairing with a 𝔤*-valued function, `⟨μ, ·⟩`.
    pub fn pair(&self, mu: impl Fn(&[f64]) -> DVector<f64> + Send + Sync + 'static) -> KForm {
        let comps = self.components.clone();
        let dim = comps.first().map_or(0, |c| c.dim);
        let degree = self.degree();
        KForm::new(degree, dim, move |x, vs| {
            let m = mu(x);
            comps.iter().zip(m.iter()).map(|(c, w)| w * c.eval(x, vs)).sum()
        })
    }
}

pub type AdMatFn = Arc<dyn Fn(&[Ad]) -> DMatrix<Ad> + Send + Sync>;

/// Ordered basis {X_α, Y_i, Z_a} of TQ, stored as the matrix whose columns are
/// the vectors in coordinates. The coframe is the inverse matrix, read by rows.
#[derive(Clone)]
pub struct AdaptedFrame {
    pub blocks: Blocks,
    field: AdMatFn,
}

/// Structure functions `C^K_IJ = ⟨coframe_K, [V_I, V_J]⟩`.
#[derive(Debug, Clone)]
pub struct Structure {
    pub n: usize,
    data: Vec<f64>,
}

impl Structure {
    pub fn zeros(n: usize) -> Self {
        Structure {
            n,
            data: vec![0.0; n * n * n],
        }
    }
    #[inline]
    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        self.data[(k * self.n + i) * self.n + j]
    }
    #[inline]
    pub fn set(&mut self, k: usize, i: usize, j: usize, v: f64) {
        self.data[(k * self.n + i) * self.n + j] = v;
    }
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl AdaptedFrame {
    pub fn new(blocks: Blocks, field: impl Fn(&[Ad]) -> DMatrix<Ad> + Send + Sync + 'static) -> Self {
        AdaptedFrame {
            blocks,
            field: Arc::new(field),
        }
    }

    pub fn from_shared(blocks: Blocks, field: AdMatFn) -> Self {
        AdaptedFrame { blocks, field }
    }

    pub fn n(&self) -> usize {
        self.blocks.n()
    }

    pub fn matrix_ad(&self, q: &[Ad]) -> DMatrix<Ad> {
        (self.field)(q)
    }

    pub fn matrix(&self, q: &[f64]) -> DMatrix<f64> {
        re_mat(&self.matrix_ad(&lift(q)))
    }

    pub fn coframe(&self, q: &[f64]) -> Result<DMatrix<f64>> {
        self.matrix(q)
            .try_inverse()
            .ok_or_else(|| Error::Degenerate(format!("frame at {q:?}")))
    }

    pub fn coframe_ad(&self, q: &[Ad]) -> Result<DMatrix<Ad>> {
        self.matrix_ad(q)
            .try_inverse()
            .ok_or_else(|| Error::Degenerate("frame".into()))
    }

    /// `∂_μ V` for every coordinate μ.
    pub fn partials(&self, q: &[f64]) -> Vec<DMatrix<f64>> {
        (0..q.len()).map(|k| eps_mat(&self.matrix_ad(&seed_axis(q, k)))).collect()
    }

    pub fn vector(&self, i: usize) -> VectorField {
        let f = self.field.clone();
        VectorField::from_ad(self.n(), move |q| f(q).column(i).into_owned())
    }

    pub fn coframe_form(&self, k: usize) -> KForm {
        let f = self.clone();
        KForm::from_covector(self.n(), move |q| {
            f.coframe(q).expect("frame degenerate").row(k).transpose()
        })
    }

    pub fn duality_defect(&self, q: &[f64]) -> f64 {
        let v = self.matrix(q);
        match v.clone().try_inverse() {
            Some(inv) => (inv * v - DMatrix::identity(self.n(), self.n())).amax(),
            None => f64::INFINITY,
        }
    }

    /// Lie brackets `[V_I, V_J]` as coordinate columns, indexed `I * n + J`.
    pub fn brackets(&self, q: &[f64]) -> Vec<DVector<f64>> {
        let n = self.n();
        let v = self.matrix(q);
        // directional derivative of the whole frame along each V_I
        let along: Vec<DMatrix<f64>> = (0..n)
            .map(|i| eps_mat(&self.matrix_ad(&seed_dir(q, v.column(i).as_slice()))))
            .collect();
        let mut out = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                out.push(along[i].column(j) - along[j].column(i));
            }
        }
        out
    }

    pub fn structure_functions(&self, q: &[f64]) -> Result<Structure> {
        let n = self.n();
        let co = self.coframe(q)?;
        let br = self.brackets(q);
        let mut c = Structure::zeros(n);
        for i in 0..n {
            for j in 0..n {
                let b = &co * &br[i * n + j];
                for k in 0..n {
                    c.set(k, i, j, b[k]);
                }
            }
        }
        Ok(c)
    }

    /// Projector onto the D = H⊕S blocks along W.
    pub fn projector_d(&self, q: &[f64]) -> Result<DMatrix<f64>> {
        self.block_projector(q, 0..self.blocks.r())
    }

    pub fn projector_h(&self, q: &[f64]) -> Result<DMatrix<f64>> {
        self.block_projector(q, self.blocks.h_range())
    }

    pub fn block_projector(&self, q: &[f64], range: std::ops::Range<usize>) -> Result<DMatrix<f64>> {
        let v = self.matrix(q);
        let co = self.coframe(q)?;
        let n = self.n();
        let mut d = DMatrix::zeros(n, n);
        for i in range {
            d[(i, i)] = 1.0;
        }
        Ok(v * d * co)
    }
}

/// `d^𝒞ω(V₁,…) = dω(P V₁,…)` with P the projector onto D along W.
pub fn restricted_differential_dc(w: &KForm, frame: &AdaptedFrame) -> Result<KForm> {
    let dw = exterior_derivative(w)?;
    let frame = frame.clone();
    Ok(dw.precompose(move |x, v| frame.projector_d(x).expect("frame degenerate") * v))
}

/// `dθ(u, w)` for a covector field θ given in dual numbers, exact to rounding.
pub fn d_covector(theta: &dyn Fn(&[Ad]) -> DVector<Ad>, x: &[f64]) -> DMatrix<f64> {
    let n = x.len();
    let mut jac = DMatrix::zeros(n, n);
    for k in 0..n {
        jac.set_column(k, &eps_vec(&theta(&seed_axis(x, k))));
    }
    // jac[(ν, μ)] = ∂_μ θ_ν ; (dθ)_{μν} = ∂_μ θ_ν − ∂_ν θ_μ
    jac.transpose() - jac
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    use proptest::prelude::*;

    fn e(n: usize, i: usize) -> DVector<f64> {
        let mut v = DVector::zeros(n);
        v[i] = 1.0;
        v
    }

    #[test]
    fn coordinate_fields_commute() {
        let dx = VectorField::coordinate(2, 0);
        let dy = VectorField::coordinate(2, 1);
        let b = lie_bracket(&dx, &dy, &[0.3, -1.2]);
        assert_eq!(b.amax(), 0.0);
    }

    #[test]
    fn leibniz_rule_for_brackets() {
        let x = VectorField::from_ad(3, |q| {
            DVector::from_vec(vec![q[1] * q[2], q[0].sin(), q[0] * q[0] + q[2]])
        });
        let y = VectorField::from_ad(3, |q| DVector::from_vec(vec![q[2].cos(), q[0] * q[1], ad(1.0) + q[1]]));
        let f = ScalarField::new_ad(|q| q[0] * q[1] + q[2].exp());
        let mut s = Sampler::default();
        for _ in 0..20 {
            let p = s.in_box(&[(-1.0, 1.0); 3]);
            let fx = x.scaled_by(&f);
            let lhs = lie_bracket(&fx, &y, &p);
            let rhs = lie_bracket(&x, &y, &p) * f.eval(&p) - x.eval(&p) * y.apply(&f, &p);
            assert!((lhs - rhs).amax() < 1e-6);
        }
    }

    #[test]
    fn jacobi_identity_with_finite_differences() {
        let mk = |a: f64| {
            VectorField::new(3, move |q: &[f64]| {
                DVector::from_vec(vec![(a * q[1]).sin(), q[0] * q[2] * a, q[0].cos() + a * q[1]])
            })
        };
        let (x, y, z) = (mk(0.7), mk(-1.3), mk(2.1));
        let br = |a: &VectorField, b: &VectorField| {
            let (a, b) = (a.clone(), b.clone());
            VectorField::new(3, move |q| lie_bracket(&a, &b, q))
        };
        let p = [0.2, -0.4, 0.9];
        let cyc = lie_bracket(&x, &br(&y, &z), &p) + lie_bracket(&y, &br(&z, &x), &p) + lie_bracket(&z, &br(&x, &y), &p);
        assert!(cyc.amax() < 1e-4, "{}", cyc.amax());
    }

    #[test]
    fn d_squared_vanishes() {
        let f = ScalarField::new(|q| q[0] * q[0] * q[1]);
        let df = KForm::differential(3, f);
        let ddf = exterior_derivative(&df).unwrap();
        let mut s = Sampler::default();
        for _ in 0..10 {
            let p = s.in_box(&[(-2.0, 2.0); 3]);
            for (i, j) in [(0, 1), (0, 2), (1, 2)] {
                assert!(ddf.eval(&p, &[e(3, i), e(3, j)]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn wedge_of_coordinate_differentials() {
        let dx = KForm::from_covector(2, |_| DVector::from_vec(vec![1.0, 0.0]));
        let dy = KForm::from_covector(2, |_| DVector::from_vec(vec![0.0, 1.0]));
        let w = wedge(&dx, &dy).unwrap();
        assert_eq!(w.eval(&[0.0, 0.0], &[e(2, 0), e(2, 1)]), 1.0);
        assert_eq!(w.eval(&[0.0, 0.0], &[e(2, 1), e(2, 0)]), -1.0);
        assert!(wedge(&w, &dx).is_err());
    }

    #[test]
    fn contraction_of_zero_form_is_an_error() {
        let f = KForm::from_scalar(2, ScalarField::new(|q| q[0]));
        let x = VectorField::coordinate(2, 0);
        assert!(matches!(contract(&x, &f), Err(Error::ZeroForm)));
    }

    #[test]
    fn degree_overflow_is_an_error() {
        let w = KForm::zero(2, 2);
        assert!(exterior_derivative(&w).is_err());
    }

    #[test]
    fn coordinate_frame_has_no_structure() {
        let fr = AdaptedFrame::new(Blocks::new(1, 1, 1), |_| DMatrix::identity(3, 3));
        let c = fr.structure_functions(&[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(c.max_abs(), 0.0);
        assert_eq!(fr.duality_defect(&[0.0, 0.0, 0.0]), 0.0);
    }

    #[test]
    fn analytic_and_numeric_d_of_covector_agree() {
        let theta = |q: &[Ad]| DVector::from_vec(vec![q[1] * q[2], q[0].sin() * q[2], q[0] * q[1] * q[1]]);
        let p = [0.3, -0.7, 1.1];
        let exact = d_covector(&theta, &p);
        let w = KForm::from_covector(3, move |q| re_vec(&theta(&lift(q))));
        let dw = exterior_derivative(&w).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(dw.eval(&p, &[e(3, i), e(3, j)]), exact[(i, j)], epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn sampler_is_reproducible() {
        let c = Chart::euclidean("r3", 3, 1.0);
        let a = Sampler::default().points(&c, 5);
        let b = Sampler::default().points(&c, 5);
        assert_eq!(a, b);
    }

    #[test]
    fn stencil_leaving_domain_is_reported() {
        let c = Chart::new("half", &["x"], vec![(0.0, 1.0)], Arc::new(|x| x[0] > 0.0));
        assert!(c.check_stencil(&[1e-7]).is_err());
        assert!(c.check_stencil(&[0.5]).is_ok());
    }

    proptest! {
        #[test]
        fn two_forms_are_antisymmetric(a in -2.0f64..2.0, b in -2.0f64..2.0, c in -2.0f64..2.0) {
            let w = KForm::from_matrix(3, |q| {
                let m = DMatrix::from_row_slice(3, 3, &[0.0, q[0], q[1] * q[2], -q[0], 0.0, q[2].sin(), -q[1] * q[2], -q[2].sin(), 0.0]);
                m
            });
            let u = DVector::from_vec(vec![a, b, c]);
            let v = DVector::from_vec(vec![c, -a, b * 0.5]);
            prop_assert!(antisymmetry_defect(&w, &[a, b, c], &[u, v]) < 1e-9);
        }

        #[test]
        fn d_of_d_vanishes_on_polynomials(a in -1.5f64..1.5, b in -1.5f64..1.5, c in -1.5f64..1.5) {
            let w = KForm::from_covector(3, |q| DVector::from_vec(vec![q[0] * q[1], q[2] * q[2] * q[0], q[1] - q[0] * q[2]]));
            let dw = exterior_derivative(&w).unwrap();
            let ddw = exterior_derivative(&dw).unwrap();
            let val = ddw.eval(&[a, b, c], &[e(3, 0), e(3, 1), e(3, 2)]);
            prop_assert!(val.abs() < 1e-5);
        }
    }
}
