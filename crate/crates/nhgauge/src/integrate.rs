//! Fixed-step RK4 for phase-space fields, trajectory CSV and the reduced flow
//! of the ball.

use std::io::Write;
use std::sync::Arc;

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geom::VectorField;
use crate::system::NonholonomicSystem;
use crate::systems::ball::{self, BallParams};

/// Fallible right-hand side.
pub type FieldFn<'a> = &'a (dyn Fn(&[f64]) -> Result<DVector<f64>> + Sync);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Status {
    Completed,
    /// A stage left the chart; the trajectory ends at the last valid step.
    DomainExit,
    NonFinite,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub status: Status,
    /// Number of chart changes made by the re-chart hook.
    pub recharts: usize,
}

impl Trajectory {
    pub fn last(&self) -> &[f64] {
        self.states.last().expect("trajectory has its initial point")
    }

    pub fn end_time(&self) -> f64 {
        *self.times.last().expect("trajectory has its initial point")
    }

    /// Turns an early stop into an error.
    pub fn completed(self) -> Result<Self> {
        match self.status {
            Status::Completed => Ok(self),
            Status::NonFinite => Err(Error::NonFinite(self.end_time())),
            Status::DomainExit => Err(Error::Domain {
                chart: format!("trajectory stopped at t = {}", self.end_time()),
                coords: self.last().to_vec(),
            }),
        }
    }
}

pub struct Options<'a> {
    pub valid: &'a (dyn Fn(&[f64]) -> bool + Sync),
    /// Applied after each accepted step; returns a replacement point.
    pub rechart: Option<&'a (dyn Fn(&[f64]) -> Option<Vec<f64>> + Sync)>,
    /// Keep every `stride`-th step (the endpoints are always kept).
    pub stride: usize,
}

impl Default for Options<'_> {
    fn default() -> Self {
        Options {
            valid: &|_| true,
            rechart: None,
            stride: 1,
        }
    }
}

fn axpy(x: &[f64], a: f64, k: &DVector<f64>) -> Vec<f64> {
    x.iter().zip(k.iter()).map(|(u, v)| u + a * v).collect()
}

fn stage_failed(e: &Error) -> bool {
    matches!(e, Error::Domain { .. } | Error::Singular(_) | Error::Degenerate(_))
}

/// One classic RK4 step.
pub fn rk4_step(f: FieldFn, x: &[f64], h: f64) -> Result<Vec<f64>> {
    let k1 = f(x)?;
    let k2 = f(&axpy(x, h / 2.0, &k1))?;
    let k3 = f(&axpy(x, h / 2.0, &k2))?;
    let k4 = f(&axpy(x, h, &k3))?;
    let k = (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    Ok(axpy(x, 1.0, &k))
}

/// Integrates from `t = 0` to `t_final` with step `h`; the last step is
/// shortened to land on `t_final`.
pub fn integrate_with(f: FieldFn, x0: &[f64], t_final: f64, h: f64, opts: &Options) -> Result<Trajectory> {
    if !(h > 0.0 && t_final >= 0.0) {
        return Err(Error::Params(format!("need h > 0 and T ≥ 0, got h = {h}, T = {t_final}")));
    }
    if !(opts.valid)(x0) {
        return Err(Error::Domain {
            chart: "initial point".into(),
            coords: x0.to_vec(),
        });
    }
    let steps = ((t_final / h) - 1e-9).ceil().max(0.0) as usize;
    let stride = opts.stride.max(1);
    let mut out = Trajectory {
        times: vec![0.0],
        states: vec![x0.to_vec()],
        status: Status::Completed,
        recharts: 0,
    };
    let mut x = x0.to_vec();
    let mut t = 0.0;
    for n in 0..steps {
        let dt = (t_final - t).min(h);
        let next = match rk4_step(f, &x, dt) {
            Ok(v) => v,
            Err(e) if stage_failed(&e) => {
                out.status = Status::DomainExit;
                break;
            }
            Err(e) => return Err(e),
        };
        if next.iter().any(|v| !v.is_finite()) {
            out.status = Status::NonFinite;
            break;
        }
        if !(opts.valid)(&next) {
            out.status = Status::DomainExit;
            break;
        }
        x = next;
        if let Some(rc) = opts.rechart {
            if let Some(y) = rc(&x) {
                x = y;
                out.recharts += 1;
            }
        }
        t = if n + 1 == steps { t_final } else { t + dt };
        if (n + 1) % stride == 0 || n + 1 == steps {
            out.times.push(t);
            out.states.push(x.clone());
        }
    }
    if out.status != Status::Completed && out.states.last() != Some(&x) {
        out.times.push(t);
        out.states.push(x);
    }
    Ok(out)
}

/// RK4 for a field that is defined everywhere the predicate holds.
pub fn integrate(x: &VectorField, x0: &[f64], t_final: f64, h: f64, valid: &(dyn Fn(&[f64]) -> bool + Sync)) -> Result<Trajectory> {
    let f = |z: &[f64]| Ok(x.eval(z));
    integrate_with(
        &f,
        x0,
        t_final,
        h,
        &Options {
            valid,
            ..Options::default()
        },
    )
}

/// X_nh of a system as a fallible right-hand side on its chart.
pub fn x_nh_rhs(sys: &NonholonomicSystem) -> impl Fn(&[f64]) -> Result<DVector<f64>> + Sync + '_ {
    move |z| {
        sys.chart.check(&z[..sys.n()])?;
        sys.x_nh(z)
    }
}

/// Named scalar diagnostics written next to the state.
pub type Diagnostic<'a> = (&'a str, Box<dyn Fn(&[f64]) -> Result<f64> + 'a>);

/// `max_t |v(t) − v(0)|` and the same relative to `|v(0)|` (absolute if
/// `v(0) = 0`).
pub fn drift(values: &[f64]) -> (f64, f64) {
    let v0 = values.first().copied().unwrap_or(0.0);
    let abs = values.iter().fold(0.0f64, |m, v| m.max((v - v0).abs()));
    (abs, if v0 == 0.0 { abs } else { abs / v0.abs() })
}

/// Columns of the diagnostics along the trajectory.
pub fn diagnostics(traj: &Trajectory, diags: &[Diagnostic]) -> Result<Vec<Vec<f64>>> {
    diags
        .iter()
        .map(|(_, f)| traj.states.iter().map(|z| f(z)).collect())
        .collect()
}

/// CSV with columns `t`, the state names, then the diagnostics.
pub fn write_trajectory_csv<W: Write>(w: W, names: &[String], traj: &Trajectory, diags: &[Diagnostic]) -> Result<()> {
    let cols = diagnostics(traj, diags)?;
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["t".to_string()];
    header.extend(names.iter().cloned());
    header.extend(diags.iter().map(|(n, _)| n.to_string()));
    wr.write_record(&header)?;
    for (k, (t, z)) in traj.times.iter().zip(&traj.states).enumerate() {
        let mut row = vec![crate::fmt17(*t)];
        row.extend(z.iter().map(|v| crate::fmt17(*v)));
        row.extend(cols.iter().map(|c| crate::fmt17(c[k])));
        wr.write_record(&row)?;
    }
    wr.flush()?;
    Ok(())
}

/// The ball's reduced field on `(p₀, …, p₄)`, defined on the regular stratum
/// with `p₁ > 0`.
pub fn reduced_field_ball(p: &BallParams, sys: &Arc<NonholonomicSystem>) -> impl Fn(&[f64]) -> Result<DVector<f64>> + Sync {
    let (p, s) = (p.clone(), sys.clone());
    move |pv| {
        if !(pv[1] > 0.0) {
            return Err(Error::Singular(format!("p₁ = {} is off the regular stratum", pv[1])));
        }
        ball::reduced_field(&p, &s, pv)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Sampler;
    use crate::momenta::solve_hgm;
    use nalgebra::DMatrix;

    #[test]
    fn exponential_decay() {
        let x = VectorField::new(1, |z| DVector::from_element(1, -z[0]));
        let tr = integrate(&x, &[1.0], 1.0, 1e-3, &|_| true).unwrap();
        assert_eq!(tr.status, Status::Completed);
        assert!((tr.last()[0] - (-1.0f64).exp()).abs() < 1e-8);
        assert!((tr.end_time() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn oscillator_energy() {
        let x = VectorField::new(2, |z| DVector::from_row_slice(&[z[1], -z[0]]));
        let tr = integrate(&x, &[1.0, 0.0], 100.0, 1e-3, &|_| true).unwrap();
        let e: Vec<f64> = tr.states.iter().map(|z| 0.5 * (z[0] * z[0] + z[1] * z[1])).collect();
        assert!(drift(&e).0 < 1e-8);
    }

    #[test]
    fn stops_at_domain_exit() {
        let x = VectorField::new(1, |_| DVector::from_element(1, 1.0));
        let tr = integrate(&x, &[0.0], 2.0, 0.01, &|z| z[0] < 1.0).unwrap();
        assert_eq!(tr.status, Status::DomainExit);
        assert!(tr.last()[0] < 1.0 && tr.end_time() > 0.98);
        assert!(tr.completed().is_err());
    }

    #[test]
    fn flags_non_finite_states() {
        let x = VectorField::new(1, |z| DVector::from_element(1, z[0] * z[0]));
        let tr = integrate(&x, &[1.0], 2.0, 0.01, &|_| true).unwrap();
        assert_eq!(tr.status, Status::NonFinite);
    }

    #[test]
    fn rejects_bad_step() {
        let x = VectorField::new(1, |_| DVector::zeros(1));
        assert!(integrate(&x, &[0.0], 1.0, 0.0, &|_| true).is_err());
    }

    #[test]
    fn csv_has_header_and_rows() {
        let x = VectorField::new(1, |z| DVector::from_element(1, -z[0]));
        let tr = integrate(&x, &[1.0], 0.1, 0.05, &|_| true).unwrap();
        let diags: Vec<Diagnostic> = vec![("sq", Box::new(|z: &[f64]| Ok(z[0] * z[0])))];
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, &["x".into()], &tr, &diags).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,x,sq");
        assert_eq!(lines.len(), 4);
    }

    #[test]
    fn ball_short_run_conserves_and_commutes() {
        let p = BallParams::default();
        let s = ball::make(p.clone()).unwrap();
        let c = ball::constraint_system(&p, &s);
        let sol = solve_hgm(&ball::ode_spec(&p), &DMatrix::identity(2, 2)).unwrap();
        let z0 = ball::phase_from_frame_momenta(&p, &c, &[0.6, 0.3, 0.4, 1.2, 0.2], &[0.3, -0.5, 0.002]).unwrap();
        let f = x_nh_rhs(&c);
        let rc = |z: &[f64]| ball::rechart(z);
        let opts = Options {
            valid: &|z: &[f64]| c.chart.contains(&z[..5]),
            rechart: Some(&rc),
            stride: 1,
        };
        let tr = integrate_with(&f, &z0, 0.5, 1e-3, &opts).unwrap().completed().unwrap();
        let h: Vec<f64> = tr.states.iter().map(|z| c.hamiltonian(z)).collect();
        assert!(drift(&h).0 < 1e-9);
        for k in 0..2 {
            let j: Vec<f64> = tr.states.iter().map(|z| ball::hgm_momenta(&p, &c, &sol, z).unwrap()[k]).collect();
            assert!(drift(&j).1 < 1e-7, "{:?}", drift(&j));
        }
        // flows commute with the orbit map
        let inv = |z: &[f64]| -> Vec<f64> {
            let l = ball::Local::at(&p, &c, z);
            vec![l.p0(), l.p1(), l.p2(), l.p3(), l.mn]
        };
        let red = reduced_field_ball(&p, &s);
        let tr_red = integrate_with(&red, &inv(&z0), 0.5, 1e-3, &Options::default()).unwrap();
        let a = inv(tr.last());
        for k in 0..5 {
            assert!((a[k] - tr_red.last()[k]).abs() < 1e-6, "{k}: {} {}", a[k], tr_red.last()[k]);
        }
    }

    #[test]
    fn recharting_keeps_invariants_and_dynamics() {
        let p = BallParams::default();
        let s = ball::make(p.clone()).unwrap();
        let c = ball::constraint_system(&p, &s);
        let mut smp = Sampler::new(3);
        for _ in 0..5 {
            let q = vec![smp.uniform(-1.0, 1.0), smp.uniform(-1.0, 1.0), smp.uniform(-3.0, 3.0), 0.1, smp.uniform(-3.0, 3.0)];
            let z = ball::phase_from_frame_momenta(&p, &c, &q, &[0.3, -0.2, 0.01]).unwrap();
            let y = ball::rechart(&z).expect("θ = 0.1 is below the threshold");
            assert!(y[3].sin() > 0.9);
            assert!((c.hamiltonian(&z) - c.hamiltonian(&y)).abs() < 1e-12);
            let (xz, xy) = (c.x_nh(&z).unwrap(), c.x_nh(&y).unwrap());
            for k in 5..8 {
                assert!((xz[k] - xy[k]).abs() < 1e-9);
            }
            assert!((xz[0] - xy[0]).abs() < 1e-12 && (xz[1] - xy[1]).abs() < 1e-12);
        }
    }
}
