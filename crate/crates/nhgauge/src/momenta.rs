//! Horizontal gauge momenta over a one-dimensional shape space.
//!
//! The rows `(f_k, g_k)` of `F(s)` solve `(f, g)′ = Φ(s)(f, g)`, so that
//! `F′ = F Φᵀ`, and `J_k = Σ_j F_kj 𝒥_j` with `𝒥_j` the momenta of the
//! 𝔤_S sections.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geom::{seed_dir, Ad, ScalarField};
use crate::symmetry;
use crate::system::NonholonomicSystem;

type ShapeMatrix = Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>;

#[derive(Clone)]
pub struct HGMOdeSpec {
    pub shape_var: String,
    pub domain: (f64, f64),
    rhs: ShapeMatrix,
}

impl std::fmt::Debug for HGMOdeSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HGMOdeSpec")
            .field("shape_var", &self.shape_var)
            .field("domain", &self.domain)
            .finish()
    }
}

impl HGMOdeSpec {
    pub fn new(shape_var: &str, domain: (f64, f64), rhs: impl Fn(f64) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        HGMOdeSpec {
            shape_var: shape_var.to_string(),
            domain,
            rhs: Arc::new(rhs),
        }
    }

    /// Φ at a shape value.
    pub fn rhs(&self, s: f64) -> DMatrix<f64> {
        (self.rhs)(s)
    }

    pub fn dim(&self) -> usize {
        self.rhs(self.domain.0).nrows()
    }

    pub fn with_domain(mut self, lo: f64, hi: f64) -> Self {
        self.domain = (lo, hi);
        self
    }

    /// Largest jump of Φ between neighbouring points of a fine grid,
    /// relative to its size; a cheap continuity probe.
    pub fn continuity_defect(&self, nodes: usize) -> f64 {
        let (a, b) = self.domain;
        let mut worst: f64 = 0.0;
        let mut prev = self.rhs(a);
        for k in 1..=nodes {
            let cur = self.rhs(a + (b - a) * k as f64 / nodes as f64);
            let d = (&cur - &prev).amax() / (1.0 + cur.amax());
            worst = worst.max(d);
            prev = cur;
        }
        worst
    }
}

#[derive(Debug, Clone)]
pub struct HGMSolution {
    pub shape_var: String,
    pub grid: Vec<f64>,
    pub values: Vec<DMatrix<f64>>,
    pub derivs: Vec<DMatrix<f64>>,
    /// Change of the solution when the step is halved.
    pub refinement: f64,
}

fn rk4_matrix(spec: &HGMOdeSpec, f0: &DMatrix<f64>, steps: usize) -> Vec<DMatrix<f64>> {
    let (a, b) = spec.domain;
    let h = (b - a) / steps as f64;
    let rhs = |s: f64, f: &DMatrix<f64>| f * spec.rhs(s).transpose();
    let mut out = Vec::with_capacity(steps + 1);
    let mut f = f0.clone();
    out.push(f.clone());
    for k in 0..steps {
        let s = a + h * k as f64;
        let k1 = rhs(s, &f);
        let k2 = rhs(s + h / 2.0, &(&f + &k1 * (h / 2.0)));
        let k3 = rhs(s + h / 2.0, &(&f + &k2 * (h / 2.0)));
        let k4 = rhs(s + h, &(&f + &k3 * h));
        f += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        out.push(f.clone());
    }
    out
}

pub const HGM_STEPS: usize = 2000;

/// Fundamental solution on `spec.domain` from `initial` at the left end.
pub fn solve_hgm(spec: &HGMOdeSpec, initial: &DMatrix<f64>) -> Result<HGMSolution> {
    solve_hgm_with(spec, initial, HGM_STEPS, 1e-8)
}

pub fn solve_hgm_with(spec: &HGMOdeSpec, initial: &DMatrix<f64>, steps: usize, tol: f64) -> Result<HGMSolution> {
    let d0 = initial.determinant();
    if d0.abs() < 1e-12 {
        return Err(Error::Degenerate("initial HGM matrix".into()));
    }
    let coarse = rk4_matrix(spec, initial, steps);
    let fine = rk4_matrix(spec, initial, 2 * steps);
    let refinement = coarse
        .iter()
        .enumerate()
        .map(|(k, c)| (c - &fine[2 * k]).amax() / (1.0 + c.amax()))
        .fold(0.0, f64::max);
    if !(refinement < tol) {
        return Err(Error::Refinement(format!("step halving changed F by {refinement:e}")));
    }
    let (a, b) = spec.domain;
    let grid: Vec<f64> = (0..=steps).map(|k| a + (b - a) * k as f64 / steps as f64).collect();
    let derivs = grid
        .iter()
        .zip(&coarse)
        .map(|(s, f)| f * spec.rhs(*s).transpose())
        .collect();
    Ok(HGMSolution {
        shape_var: spec.shape_var.clone(),
        grid,
        values: coarse,
        derivs,
        refinement,
    })
}

impl HGMSolution {
    fn locate(&self, s: f64) -> Result<(usize, f64)> {
        let (a, b) = (self.grid[0], *self.grid.last().unwrap());
        if !(s >= a && s <= b) {
            return Err(Error::Domain {
                chart: format!("hgm:{}", self.shape_var),
                coords: vec![s],
            });
        }
        let h = (b - a) / (self.grid.len() - 1) as f64;
        let k = (((s - a) / h) as usize).min(self.grid.len() - 2);
        Ok((k, h))
    }

    /// Cubic Hermite value and derivative of F at `s`.
    pub fn eval(&self, s: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let (k, h) = self.locate(s)?;
        let t = (s - self.grid[k]) / h;
        let (y0, y1) = (&self.values[k], &self.values[k + 1]);
        let (d0, d1) = (&self.derivs[k] * h, &self.derivs[k + 1] * h);
        let (t2, t3) = (t * t, t * t * t);
        let v = y0 * (2.0 * t3 - 3.0 * t2 + 1.0) + &d0 * (t3 - 2.0 * t2 + t) + y1 * (-2.0 * t3 + 3.0 * t2) + &d1 * (t3 - t2);
        let dv = (y0 * (6.0 * t2 - 6.0 * t) + &d0 * (3.0 * t2 - 4.0 * t + 1.0) + y1 * (-6.0 * t2 + 6.0 * t) + &d1 * (3.0 * t2 - 2.0 * t)) / h;
        Ok((v, dv))
    }

    /// F at a dual shape value, carrying the derivative.
    pub fn eval_ad(&self, s: Ad) -> Result<DMatrix<Ad>> {
        let (v, dv) = self.eval(s.re)?;
        Ok(DMatrix::from_fn(v.nrows(), v.ncols(), |i, j| Ad::new(v[(i, j)], dv[(i, j)] * s.eps)))
    }

    pub fn determinants(&self) -> Vec<f64> {
        self.values.iter().map(|f| f.determinant()).collect()
    }

    /// `(min |det F|, whether det F changes sign)` over the grid.
    pub fn det_summary(&self) -> (f64, bool) {
        let d = self.determinants();
        let min = d.iter().map(|x| x.abs()).fold(f64::INFINITY, f64::min);
        let flips = d.windows(2).any(|w| w[0] * w[1] <= 0.0);
        (min, flips)
    }

    /// CSV with `shape, f1, g1, f2, g2, detF` for a 2×2 solution, every
    /// `stride`-th node.
    pub fn write_csv<W: std::io::Write>(&self, w: W, stride: usize) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let l = self.values[0].nrows();
        let mut head = vec![self.shape_var.clone()];
        for k in 0..l {
            for name in ["f", "g", "h", "k"].iter().take(l) {
                head.push(format!("{name}{}", k + 1));
            }
        }
        head.push("detF".into());
        wr.write_record(&head)?;
        for (i, (s, f)) in self.grid.iter().zip(&self.values).enumerate() {
            if i % stride.max(1) != 0 && i + 1 != self.grid.len() {
                continue;
            }
            let mut row = vec![crate::fmt17(*s)];
            for k in 0..l {
                for j in 0..l {
                    row.push(crate::fmt17(f[(k, j)]));
                }
            }
            row.push(crate::fmt17(f.determinant()));
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// `z ↦ X_nh(J_η)(z)` for a section η given by its algebra coefficients.
pub fn hgm_residual(
    sys: &Arc<NonholonomicSystem>,
    section: impl Fn(&[Ad]) -> DVector<Ad> + Send + Sync + 'static,
) -> ScalarField {
    let s = sys.clone();
    let n = sys.n();
    ScalarField::new(move |z| {
        let x = match s.x_nh(z) {
            Ok(x) => x,
            Err(_) => return f64::NAN,
        };
        let za = seed_dir(z, x.as_slice());
        symmetry::j_section_ad(&s, &za, &section(&za[..n])).eps
    })
}

/// Fits `X_nh(𝒥_i) = ṡ Σ_j A_ij 𝒥_j` at the configuration `q`, where the
/// 𝒥_i are the S momenta of the frame and `s` the shape function, and
/// returns `(Φ = −Aᵀ, residual of the fit)`.
pub fn fit_shape_matrix(sys: &NonholonomicSystem, q: &[f64], shape: &dyn Fn(&[Ad]) -> Ad) -> Result<(DMatrix<f64>, f64)> {
    let b = sys.blocks();
    let (n, r, l) = (sys.n(), sys.r(), b.s);
    // the equations are quadratic in p, so unit vectors and pairwise sums fix them
    let mut moms = Vec::new();
    for i in 0..r {
        for j in i..r {
            let mut p = vec![0.0; r];
            p[i] += 1.0;
            p[j] += 1.0;
            moms.push(p);
        }
    }
    let mut a = DMatrix::zeros(moms.len() * l, l * l);
    let mut rhs = DVector::zeros(moms.len() * l);
    for (row, p) in moms.iter().enumerate() {
        let mut z = q.to_vec();
        z.extend(p);
        let x = sys.x_nh(&z)?;
        let sdot = shape(&seed_dir(q, &x.as_slice()[..n])).eps;
        for i in 0..l {
            for j in 0..l {
                a[(row * l + i, i * l + j)] = sdot * p[b.h + j];
            }
            rhs[row * l + i] = x[n + b.h + i];
        }
    }
    let svd = a.clone().svd(true, true);
    let sol = svd.solve(&rhs, 1e-12).map_err(|e| Error::Degenerate(e.to_string()))?;
    let resid = (&a * &sol - &rhs).amax() / (1.0 + rhs.amax());
    let amat = DMatrix::from_fn(l, l, |i, j| sol[i * l + j]);
    Ok((-amat.transpose(), resid))
}

/// ODE spec whose Φ is fitted at the representative configuration
/// `rep(s)` for each shape value.
pub fn fitted_ode_spec(
    sys: &Arc<NonholonomicSystem>,
    shape_var: &str,
    domain: (f64, f64),
    rep: impl Fn(f64) -> Vec<f64> + Send + Sync + 'static,
    shape: impl Fn(&[Ad]) -> Ad + Send + Sync + 'static,
) -> HGMOdeSpec {
    let s = sys.clone();
    HGMOdeSpec::new(shape_var, domain, move |x| {
        fit_shape_matrix(&s, &rep(x), &shape).map(|(phi, _)| phi).unwrap_or_else(|_| {
            let l = s.blocks().s;
            DMatrix::from_element(l, l, f64::NAN)
        })
    })
}

/// `J_η` as a phase function for a q-dependent section.
pub fn section_momentum(
    sys: &Arc<NonholonomicSystem>,
    section: impl Fn(&[Ad]) -> DVector<Ad> + Send + Sync + 'static,
) -> ScalarField {
    let s = sys.clone();
    let n = sys.n();
    ScalarField::new_ad(move |z| symmetry::j_section_ad(&s, z, &section(&z[..n])))
}

/// Values of `J_k = Σ_j F_kj 𝒥_j` at a phase point, given the S momenta.
pub fn hgm_values(sol: &HGMSolution, shape: f64, j_s: &[f64]) -> Result<DVector<f64>> {
    let (f, _) = sol.eval(shape)?;
    Ok(f * DVector::from_column_slice(j_s))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_rhs_keeps_initial_matrix() {
        let spec = HGMOdeSpec::new("s", (0.0, 1.0), |_| DMatrix::zeros(2, 2));
        let f0 = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.5, 3.0]);
        let sol = solve_hgm(&spec, &f0).unwrap();
        for v in &sol.values {
            assert!((v - &f0).amax() < 1e-15);
        }
    }

    #[test]
    fn rotation_system_matches_closed_form() {
        // f′ = g, g′ = −f
        let spec = HGMOdeSpec::new("s", (0.0, 2.0), |_| DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]));
        let sol = solve_hgm(&spec, &DMatrix::identity(2, 2)).unwrap();
        assert!(sol.refinement < 1e-8);
        for s in [0.0, 0.37, 1.234, 2.0] {
            let (f, df) = sol.eval(s).unwrap();
            let expect = DMatrix::from_row_slice(2, 2, &[s.cos(), -s.sin(), s.sin(), s.cos()]);
            assert!((&f - &expect).amax() < 1e-10);
            assert!((df - expect * DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0])).amax() < 1e-8);
        }
        let (min, flips) = sol.det_summary();
        assert!((min - 1.0).abs() < 1e-9 && !flips);
    }

    #[test]
    fn eval_outside_grid_is_domain_error() {
        let spec = HGMOdeSpec::new("s", (0.0, 1.0), |_| DMatrix::zeros(1, 1));
        let sol = solve_hgm(&spec, &DMatrix::identity(1, 1)).unwrap();
        assert!(matches!(sol.eval(1.5), Err(Error::Domain { .. })));
    }

    #[test]
    fn singular_initial_matrix_is_rejected() {
        let spec = HGMOdeSpec::new("s", (0.0, 1.0), |_| DMatrix::zeros(2, 2));
        assert!(solve_hgm(&spec, &DMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn csv_has_header_and_nodes() {
        let spec = HGMOdeSpec::new("p1", (0.0, 1.0), |_| DMatrix::zeros(2, 2));
        let sol = solve_hgm(&spec, &DMatrix::identity(2, 2)).unwrap();
        let mut buf = Vec::new();
        sol.write_csv(&mut buf, 1000).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "p1,f1,g1,f2,g2,detF");
        assert_eq!(lines.count(), 3);
    }
}
