//! Command line front end: `verify | simulate | hamiltonize | hgm | bracket-table`.
//!
//! Exit codes are 0 when everything passed, 1 when a check failed or a run
//! stopped early, and 2 for usage or configuration errors.
//!
//! `--params <file>` reads a config of the form
//!
//! ```json
//! {"system": "ball",
//!  "params": {"m": 1.0, "R": 0.1, "I": 0.004, "g_accel": 9.81,
//!             "profile": {"coeffs": [0.0, 0.5, 0.25]}},
//!  "domain": {"x": [-1.0, 1.0], "p1": [0.001, 4.0]}}
//! ```
//!
//! Every key is optional. Parameter names per system:
//!
//! - snakeboard: `m`, `R`, `J`, `J1`
//! - chaplygin: `m`, `R`, `I` (three principal moments)
//! - solid: `m`, `I1`, `I3`, `r`, `c`, `g_accel`
//! - ball: `m`, `R`, `I`, `g_accel`, `profile.coeffs` (surface `z = φ(x² + y²)`,
//!   polynomial coefficients in increasing degree)
//!
//! `domain` narrows the sampling box of chart coordinates by name; `p1` (ball)
//! and `gamma3` (solid) set the interval of the HGM solve.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::analysis::{bracket_matrix, characteristic_rank, jacobiators, jacobiator_via_3form, twisted_check, triples, Report};
use crate::error::{Error, Result};
use crate::gauge::{b_coordinate, bracket_table, casimir_defect, dynamical_defect, BracketOracle};
use crate::geom::{exterior_derivative, restricted_differential_dc, set_fd_step, KForm, Sampler, ScalarField};
use crate::integrate::{self, drift, Diagnostic, Options, Status, Trajectory};
use crate::momenta::HGM_STEPS;
use crate::symmetry;
use crate::system::NonholonomicSystem;
use crate::systems::{self, ball, chaplygin, snakeboard, solid, Model, Params};

#[derive(Debug, Parser)]
#[command(name = "nhgauge", version, about = "Gauge transformations of nonholonomic brackets")]
pub struct Cli {
    /// Seed for every sampled point set.
    #[arg(long, global = true, default_value_t = 7)]
    pub seed: u64,
    /// Relative step of the central differences.
    #[arg(long, global = true)]
    pub fd_step: Option<f64>,
    /// Multiplies every tolerance.
    #[arg(long, global = true, default_value_t = 1.0)]
    pub tol_scale: f64,
    /// JSON config with system, parameters and domain.
    #[arg(long, global = true)]
    pub params: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the oracle and invariant suite of a system, JSON report.
    Verify {
        system: Option<String>,
        #[arg(long, default_value_t = 50)]
        points: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Integrate X_nh with RK4, trajectory CSV with conserved quantities.
    Simulate {
        system: Option<String>,
        #[arg(long, default_value_t = 0.0)]
        t0: f64,
        #[arg(long = "T", default_value_t = 10.0)]
        t_final: f64,
        #[arg(long, default_value_t = 1e-3)]
        h: f64,
        /// Phase point in the system chart. For the ball: x, y, φ₁, θ, ψ and
        /// the frame momenta p_x, p_y, M_n.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        init: Option<Vec<f64>>,
        /// Keep every n-th step.
        #[arg(long, default_value_t = 10)]
        stride: usize,
        /// Ball only: integrate X_red on (p₀, …, p₄).
        #[arg(long)]
        reduced: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample B, B₁ and 𝓑 on the adapted coframe with closed-form residuals.
    Hamiltonize {
        system: Option<String>,
        #[arg(long, default_value_t = 20)]
        points: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve the HGM equation on a shape interval, CSV of F and det F.
    Hgm {
        system: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        p1min: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        p1max: Option<f64>,
        #[arg(long, default_value_t = 201)]
        nodes: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pairwise brackets of the invariants, CSV.
    BracketTable {
        system: Option<String>,
        #[arg(long, default_value_t = 20)]
        points: usize,
        /// Use π_nh instead of the gauged bivector.
        #[arg(long)]
        ungauged: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub system: Option<String>,
    #[serde(default)]
    pub params: Option<Value>,
    #[serde(default)]
    pub domain: BTreeMap<String, (f64, f64)>,
}

impl Config {
    pub fn read(path: &PathBuf) -> Result<Self> {
        Ok(serde_json::from_reader(File::open(path)?)?)
    }

    /// Builds the model, reconciling the command line name with the config.
    pub fn model(&self, name: Option<&str>) -> Result<Model> {
        let name = match (name, self.system.as_deref()) {
            (Some(a), Some(b)) if a != b => {
                return Err(Error::Params(format!("system `{a}` given but config names `{b}`")));
            }
            (Some(a), _) | (None, Some(a)) => a.to_string(),
            (None, None) => return Err(Error::Params("no system given".into())),
        };
        let params = match &self.params {
            Some(v) => Params::from_json(&name, v)?,
            None => Params::default_for(&name)?,
        };
        systems::build(&params, &self.domain)
    }
}

/// Parses `args` and runs; returns the exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::UnknownSystem(_) | Error::Params(_) | Error::Json(_) => 2,
                _ => 1,
            }
        }
    }
}

fn sink(out: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

pub fn run(cli: &Cli) -> Result<i32> {
    if let Some(h) = cli.fd_step {
        if !(h > 0.0 && h < 0.1) {
            return Err(Error::Params(format!("--fd-step {h} outside (0, 0.1)")));
        }
        set_fd_step(h);
    }
    if !(cli.tol_scale > 0.0) {
        return Err(Error::Params("--tol-scale must be positive".into()));
    }
    let cfg = match &cli.params {
        Some(p) => Config::read(p)?,
        None => Config::default(),
    };
    match &cli.command {
        Command::Verify { system, points, out } => {
            let model = cfg.model(system.as_deref())?;
            let report = verify(&model, *points, cli.seed, cli.tol_scale)?;
            for r in &report.checks {
                eprintln!("{}", r.line());
            }
            let mut w = sink(out)?;
            serde_json::to_writer_pretty(&mut w, &report)?;
            writeln!(w)?;
            Ok(if report.pass { 0 } else { 1 })
        }
        Command::Simulate {
            system,
            t0,
            t_final,
            h,
            init,
            stride,
            reduced,
            out,
        } => {
            let model = cfg.model(system.as_deref())?;
            let run = SimulateArgs {
                t0: *t0,
                t_final: *t_final,
                h: *h,
                init: init.clone(),
                stride: *stride,
                reduced: *reduced,
                seed: cli.seed,
            };
            let summary = simulate(&model, &run, sink(out)?)?;
            eprintln!("{}", summary.line());
            Ok(if summary.status == Status::Completed { 0 } else { 1 })
        }
        Command::Hamiltonize { system, points, out } => {
            let model = cfg.model(system.as_deref())?;
            let rep = hamiltonize(&model, *points, cli.seed)?;
            if let Some(r) = rep.max_closed_form_residual {
                eprintln!("max closed-form residual {r:.3e}");
            }
            let mut w = sink(out)?;
            serde_json::to_writer_pretty(&mut w, &rep)?;
            writeln!(w)?;
            Ok(0)
        }
        Command::Hgm {
            system,
            p1min,
            p1max,
            nodes,
            out,
        } => {
            let mut cfg = cfg;
            if system.is_none() && cfg.system.is_none() {
                cfg.system = Some("ball".into());
            }
            let name = system.clone().or(cfg.system.clone()).unwrap_or_default();
            let var = match name.as_str() {
                "ball" => "p1",
                "solid" => "gamma3",
                _ => return Err(Error::Params(format!("{name} has no HGM equation to solve"))),
            };
            if p1min.is_some() || p1max.is_some() {
                let d = match name.as_str() {
                    "ball" => ball::P1_DOMAIN,
                    _ => solid::GAMMA3_DOMAIN,
                };
                let cur = cfg.domain.get(var).copied().unwrap_or(d);
                cfg.domain.insert(var.into(), (p1min.unwrap_or(cur.0), p1max.unwrap_or(cur.1)));
            }
            let model = cfg.model(Some(&name))?;
            let sol = model.hgm.as_ref().expect("ball and solid carry an HGM solution");
            let (min_det, flips) = sol.det_summary();
            eprintln!("min |det F| {min_det:.6e}, step-halving change {:.3e}", sol.refinement);
            if flips {
                eprintln!("warning: det F changes sign on the interval");
            }
            let stride = HGM_STEPS / nodes.saturating_sub(1).max(1);
            sol.write_csv(sink(out)?, stride)?;
            Ok(0)
        }
        Command::BracketTable {
            system,
            points,
            ungauged,
            out,
        } => {
            let model = cfg.model(system.as_deref())?;
            let pts = model.system.sample(&mut Sampler::new(cli.seed), *points);
            let oracles = bracket_oracles(&model, !ungauged);
            let b = if *ungauged { None } else { Some(&model.b) };
            let tab = bracket_table(&model.system, b, &oracles, &pts)?;
            if !oracles.is_empty() {
                eprintln!("max relative residual {:.3e}", tab.max_residual());
            }
            tab.write_csv(sink(out)?)?;
            Ok(0)
        }
    }
}

fn bracket_oracles(model: &Model, gauged: bool) -> Vec<BracketOracle> {
    match &model.params {
        Params::Ball(p) if gauged => ball::gauged_table(p),
        Params::Ball(p) => ball::nh_table(p),
        _ => Vec::new(),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub system: String,
    pub seed: u64,
    pub tol_scale: f64,
    pub pass: bool,
    pub checks: Vec<Report>,
}

type Check<'a> = Box<dyn Fn() -> Result<Report> + Send + Sync + 'a>;

fn worst<T: Sync>(items: &[T], f: impl Fn(&T) -> Result<f64> + Sync) -> Result<f64> {
    items
        .par_iter()
        .map(&f)
        .collect::<Result<Vec<f64>>>()
        .map(|v| v.into_iter().fold(0.0, |a: f64, b| if b.is_nan() { f64::NAN } else { a.max(b) }))
}

fn invariant_fields(sys: &Arc<NonholonomicSystem>) -> Vec<ScalarField> {
    sys.symmetry.invariants.iter().map(|i| sys.phase_field(i.f.clone())).collect()
}

/// Coordinate functions used to compare the two Jacobiator formulas.
pub const JACOBIATOR_TRIPLES: [(usize, usize, usize); 6] = [(0, 2, 5), (1, 3, 6), (2, 5, 7), (3, 4, 6), (0, 5, 6), (2, 3, 7)];

/// `|a − b| / max(|a|, |b|, floor)`, with the floor keeping pairs of
/// stencil-noise values from counting as large relative errors.
pub fn relative_difference(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub const RELATIVE_FLOOR: f64 = 1e-3;

/// Largest relative difference between the direct Jacobiator of π_B and the
/// 3-form formula on coordinate functions.
pub fn jacobiator_agreement(model: &Model, pts: &[Vec<f64>]) -> Result<f64> {
    let sys = &model.system;
    let fields: Vec<ScalarField> = (0..sys.phase_dim()).map(|k| ScalarField::new_ad(move |z| z[k])).collect();
    let pib = |z: &[f64]| {
        let b = model.b.block(sys, z)?;
        sys.bivector(z, Some(&b))
    };
    worst(pts, |z| {
        let direct = jacobiators(&pib, &fields, &JACOBIATOR_TRIPLES, z)?;
        let mut w: f64 = 0.0;
        for (d, &(i, j, k)) in direct.iter().zip(&JACOBIATOR_TRIPLES) {
            let f = jacobiator_via_3form(sys, Some(&model.b), &fields[i], &fields[j], &fields[k], z)?;
            w = w.max(relative_difference(*d, f, RELATIVE_FLOOR));
        }
        Ok(w)
    })
}

/// Largest component of `d^𝒞𝒦_W` on triples of the D frame.
pub fn dc_kw_defect(sys: &Arc<NonholonomicSystem>, pts: &[Vec<f64>]) -> Result<f64> {
    let kw = symmetry::curvature_form(sys, symmetry::Connection::W);
    let dcs = kw
        .components
        .iter()
        .map(|c| restricted_differential_dc(c, &sys.frame))
        .collect::<Result<Vec<KForm>>>()?;
    let r = sys.r();
    worst(pts, |z| {
        let q = &z[..sys.n()];
        let v = sys.frame.matrix(q);
        let mut w: f64 = 0.0;
        for (i, j, k) in triples(r) {
            let vs = [i, j, k].map(|c| v.column(c).into_owned());
            for d in &dcs {
                w = w.max(d.eval(q, &vs).abs());
            }
        }
        Ok(w)
    })
}

/// Rank of the bracket matrix of the invariants, as an integer defect.
pub fn invariant_rank(sys: &Arc<NonholonomicSystem>, b: Option<&crate::gauge::GaugeTwoForm>, z: &[f64]) -> Result<usize> {
    let blk = match b {
        Some(b) => Some(b.block(sys, z)?),
        None => None,
    };
    let pi = sys.bivector(z, blk.as_ref())?;
    let g: Vec<DVector<f64>> = invariant_fields(sys).iter().map(|f| f.grad(z)).collect();
    Ok(characteristic_rank(&bracket_matrix(&pi, &g)))
}

/// `φ = −d𝓑̄` in phase coordinates, from the 𝓑 summand of B.
pub fn minus_d_bscript(model: &Model) -> Result<KForm> {
    let sys = model.system.clone();
    let bs = match &model.b.parts {
        Some(p) => p.1.clone(),
        None => return Err(Error::Params("gauge form has no 𝓑 summand".into())),
    };
    let (n, dim) = (sys.n(), sys.phase_dim());
    let two = KForm::from_matrix(dim, move |z| {
        let mut m = DMatrix::zeros(dim, dim);
        m.view_mut((0, 0), (n, n)).copy_from(&bs.at(&sys, z).expect("𝓑 undefined"));
        m
    });
    Ok(exterior_derivative(&two)?.scale(-1.0))
}

/// Abscissae of the non-Poisson defect, on the axis y = 0.
pub const DEFECT_X: [f64; 2] = [0.3, 1.0];

/// Ball phase point at `(x, 0)` used for the π_nh defect.
pub fn defect_point(p: &ball::BallParams, sys: &NonholonomicSystem, x: f64) -> Result<Vec<f64>> {
    ball::phase_from_frame_momenta(p, sys, &[x, 0.0, 0.3, 1.2, 0.2], &[0.4, -0.3, 0.7])
}

fn closed_form_b(model: &Model, z: &[f64]) -> Option<DMatrix<f64>> {
    let sys = &model.system;
    match &model.params {
        Params::Snakeboard(_) => Some(DMatrix::zeros(sys.n(), sys.n())),
        Params::Chaplygin(p) => Some(chaplygin::b_oracle(p, sys, z)),
        Params::Solid(p) => Some(solid::b_oracle(p, sys, z)),
        Params::Ball(p) => {
            let l = ball::Local::at(p, sys, z);
            Some(ball::b_oracle(p, &z[..sys.n()], &l))
        }
    }
}

/// The full suite for one system. Checks run concurrently, the report keeps
/// their order.
pub fn verify(model: &Model, points: usize, seed: u64, tol_scale: f64) -> Result<VerifyReport> {
    let sys = &model.system;
    let hs = &model.hgs_system;
    let sampled = sys.sample(&mut Sampler::new(seed), points.max(1));
    let pts: &[Vec<f64>] = &sampled;
    let few = &pts[..pts.len().min(30)];
    let n = sys.n();
    let t = |x: f64| x * tol_scale;
    let npts = pts.len();
    let to_hgs = |z: &[f64]| hs.from_cov(&z[..n], sys.p_cov(z).as_slice());

    let mut checks: Vec<Check> = vec![
        Box::new(|| {
            let d = worst(pts, |z| Ok(sys.x_nh(z)?.dot(&sys.grad_h(z)).abs()))?;
            Ok(Report::new("energy_conservation", npts, d, t(1e-8)))
        }),
        Box::new(|| {
            let d = worst(pts, |z| Ok(symmetry::section_defect(sys, &z[..n])))?;
            Ok(Report::new("sections_match_frame", npts, d, t(1e-9)))
        }),
        Box::new(|| {
            let d = worst(pts, |z| Ok((symmetry::dimension_rank(sys, &z[..n]) as f64 - n as f64).abs()))?;
            Ok(Report::new("dimension_assumption", npts, d, 0.5))
        }),
        Box::new(|| {
            let bc = b_coordinate(hs);
            let d = worst(pts, |z| Ok((model.b.at(sys, z)? - bc.at(hs, &to_hgs(z))?).amax()))?;
            Ok(Report::new("B_intrinsic_vs_coordinate", npts, d, t(1e-6)))
        }),
        Box::new(|| {
            let d = worst(pts, |z| dynamical_defect(sys, &model.b, z))?;
            Ok(Report::new("dynamical_gauge", npts, d, t(1e-6)))
        }),
        Box::new(|| {
            let d = dc_kw_defect(sys, pts)?;
            Ok(Report::new("dC_KW_zero", npts, d, t(1e-5)))
        }),
        Box::new(|| {
            let d = worst(pts, |z| casimir_defect(hs, &model.b, &to_hgs(z)))?;
            Ok(Report::new("casimir_identity", npts, d, t(1e-6)))
        }),
        Box::new(|| {
            // X_nh of the HGS momentum coordinates
            let bl = hs.blocks();
            let d = worst(pts, |z| {
                let x = hs.x_nh(&to_hgs(z))?;
                Ok(x.rows(n + bl.h, bl.s).amax())
            })?;
            Ok(Report::new("hgm_conserved", npts, d, t(1e-6)))
        }),
        Box::new(|| {
            let d = worst(pts, |z| match closed_form_b(model, z) {
                Some(o) => Ok((model.b.at(sys, z)? - o).amax()),
                None => Ok(0.0),
            })?;
            let name = match &model.params {
                Params::Snakeboard(_) => "B_identically_zero",
                Params::Chaplygin(_) => "B_matches_R2m_Omega_dlambda",
                Params::Solid(_) => "B_matches_m_rho_gamma_s_Omega_dlambda",
                Params::Ball(_) => "B_matches_closed_form",
            };
            let tol = if matches!(model.params, Params::Snakeboard(_)) { 1e-8 } else { 1e-6 };
            Ok(Report::new(name, npts, d, t(tol)))
        }),
        Box::new(|| {
            let d = jacobiator_agreement(model, few)?;
            Ok(Report::new("jacobiator_oracle_agreement", few.len(), d, t(1e-3)))
        }),
    ];

    match &model.params {
        Params::Snakeboard(p) => {
            checks.push(Box::new(move || {
                let d = worst(pts, |z| {
                    let o = snakeboard::eliminated_oracle(p, z);
                    let e = sys.eliminated_momenta(z);
                    Ok((e[0] - o[0]).abs().max((e[1] - o[1]).abs()))
                })?;
                Ok(Report::new("eliminated_momenta_closed_form", npts, d, t(1e-10)))
            }));
            checks.push(Box::new(move || {
                let d = worst(pts, |z| Ok((symmetry::j_kw(sys, z)? - snakeboard::j_kw_oracle(p, z)).amax()))?;
                Ok(Report::new("JKW_closed_form", npts, d, t(1e-10)))
            }));
            checks.push(Box::new(|| {
                let phi = minus_d_bscript(model)?;
                let pin = |z: &[f64]| sys.bivector(z, None);
                let inv = invariant_fields(sys);
                let d = twisted_check(&pin, &phi, &inv, &triples(inv.len()), few, &mut Sampler::new(seed))?;
                Ok(Report::new("twisted_reduced_minus_dBbar", few.len(), d, t(1e-4)))
            }));
            checks.push(Box::new(|| {
                let d = worst(pts, |z| Ok((invariant_rank(sys, None, z)? as f64 - 4.0).abs()))?;
                Ok(Report::new("reduced_rank_4", npts, d, 0.5))
            }));
        }
        Params::Chaplygin(_) => {
            checks.push(Box::new(|| {
                let d = worst(pts, |z| Ok(sys.x_nh(z)?[7].abs()))?;
                Ok(Report::new("J_eta_conserved", npts, d, t(1e-8)))
            }));
        }
        Params::Solid(p) => {
            checks.push(Box::new(move || {
                // Jellett's integral has constant coefficients in the HGM basis
                let c = solid::jellett_coefficients(p);
                let d = worst(pts, |z| {
                    let (_, s) = solid::gamma_s(p, z);
                    let m = solid::m_oracle(p, &s, &solid::omega(sys, z));
                    // 𝒥₁, 𝒥₂ are the S momentum coordinates
                    let lin = c[0] * z[6] + c[1] * z[7];
                    Ok((m.dot(&s) - lin).abs() / (1.0 + m.norm() * s.norm()))
                })?;
                Ok(Report::new("jellett_integral", npts, d, t(1e-9)))
            }));
        }
        Params::Ball(p) => {
            let inv = invariant_fields(sys);
            let inv2 = inv.clone();
            checks.push(Box::new(move || {
                let pinh = |z: &[f64]| sys.bivector(z, None);
                let mut smallest = f64::INFINITY;
                for x in DEFECT_X {
                    let z = defect_point(p, sys, x)?;
                    smallest = smallest.min(jacobiators(&pinh, &inv, &[(1, 3, 4)], &z)?[0].abs());
                }
                Ok(Report::at_least("jacobiator_pinh_p1p3p4_nonzero", 2, smallest, t(1e-6)))
            }));
            checks.push(Box::new(move || {
                let pinh = |z: &[f64]| sys.bivector(z, None);
                let mut rel: f64 = 0.0;
                for x in DEFECT_X {
                    let z = defect_point(p, sys, x)?;
                    let j = jacobiators(&pinh, &inv2, &[(1, 3, 4)], &z)?[0];
                    let o = ball::defect_oracle(p, x);
                    rel = rel.max(((j - o) / o).abs());
                }
                Ok(Report::new("jacobiator_pinh_p1p3p4_formula", 2, rel, t(1e-4)))
            }));
            checks.push(Box::new(|| {
                let inv = invariant_fields(sys);
                let pib = |z: &[f64]| {
                    let b = model.b.block(sys, z)?;
                    sys.bivector(z, Some(&b))
                };
                let tr = triples(inv.len());
                let d = worst(pts, |z| Ok(jacobiators(&pib, &inv, &tr, z)?.iter().fold(0.0, |a: f64, b| a.max(b.abs()))))?;
                Ok(Report::new("jacobiator_piB_invariants", npts, d, t(1e-5)))
            }));
            checks.push(Box::new(move || {
                let tab = bracket_table(sys, Some(&model.b), &ball::gauged_table(p), pts)?;
                Ok(Report::new("gauged_bracket_table", npts, tab.max_residual(), t(1e-6)))
            }));
            checks.push(Box::new(|| {
                let d = worst(pts, |z| Ok((invariant_rank(sys, Some(&model.b), z)? as f64 - 2.0).abs()))?;
                Ok(Report::new("piB_invariant_rank_2", npts, d, 0.5))
            }));
            checks.push(Box::new(|| {
                let sol = model.hgm.as_ref().expect("ball has an HGM solution");
                let (min, flips) = sol.det_summary();
                Ok(Report::at_least("hgm_detF_nonzero", sol.grid.len(), if flips { 0.0 } else { min }, 1e-12))
            }));
        }
    }

    let checks: Vec<Report> = checks
        .par_iter()
        .map(|c| match c() {
            Ok(r) => r,
            Err(e) => {
                eprintln!("check failed to run: {e}");
                Report::new("error", 0, f64::NAN, 0.0)
            }
        })
        .collect();
    Ok(VerifyReport {
        system: model.params.name().to_string(),
        seed,
        tol_scale,
        pass: checks.iter().all(|r| r.pass),
        checks,
    })
}

pub struct SimulateArgs {
    pub t0: f64,
    pub t_final: f64,
    pub h: f64,
    pub init: Option<Vec<f64>>,
    pub stride: usize,
    pub reduced: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulateSummary {
    pub status: Status,
    pub end_time: f64,
    pub recharts: usize,
    /// `(name, absolute drift, drift relative to the initial value)`.
    pub drifts: Vec<(String, f64, f64)>,
}

impl SimulateSummary {
    pub fn line(&self) -> String {
        let d: Vec<String> = self
            .drifts
            .iter()
            .map(|(n, a, r)| format!("{n} drift {a:.3e} (rel {r:.3e})"))
            .collect();
        let status = match self.status {
            Status::Completed => "completed".to_string(),
            Status::DomainExit => format!("left the chart, last valid t = {}", self.end_time),
            Status::NonFinite => format!("non-finite state, last valid t = {}", self.end_time),
        };
        format!("{status}; {} recharts; {}", self.recharts, d.join(", "))
    }
}

/// Runs a trajectory and writes its CSV. Times in the CSV start at `t0`.
pub fn simulate(model: &Model, a: &SimulateArgs, out: impl Write) -> Result<SimulateSummary> {
    if !(a.t_final > a.t0) {
        return Err(Error::Params("--T must exceed --t0".into()));
    }
    let duration = a.t_final - a.t0;
    let shift = |mut tr: Trajectory| {
        for t in tr.times.iter_mut() {
            *t += a.t0;
        }
        tr
    };
    let opts_stride = a.stride.max(1);
    match &model.params {
        Params::Ball(p) => {
            let c = ball::constraint_system(p, &model.system);
            let z0 = match &a.init {
                Some(v) if v.len() == 8 => ball::phase_from_frame_momenta(p, &c, &v[..5], &v[5..])?,
                Some(v) => return Err(Error::Params(format!("ball --init needs 8 values, got {}", v.len()))),
                None => ball::phase_from_frame_momenta(p, &c, &ball::DEFAULT_Q, &ball::DEFAULT_MOMENTA)?,
            };
            let sol = model.hgm.as_ref().expect("ball has an HGM solution");
            if a.reduced {
                let l = ball::Local::at(p, &c, &z0);
                let x0 = [l.p0(), l.p1(), l.p2(), l.p3(), l.mn];
                let f = integrate::reduced_field_ball(p, &model.system);
                let opts = Options {
                    stride: opts_stride,
                    ..Options::default()
                };
                let tr = shift(integrate::integrate_with(&f, &x0, duration, a.h, &opts)?);
                let names: Vec<String> = ball::INVARIANT_NAMES.iter().map(|s| s.to_string()).collect();
                integrate::write_trajectory_csv(out, &names, &tr, &[])?;
                return Ok(SimulateSummary {
                    status: tr.status,
                    end_time: tr.end_time(),
                    recharts: 0,
                    drifts: Vec::new(),
                });
            }
            let f = integrate::x_nh_rhs(&c);
            let rc = |z: &[f64]| ball::rechart(z);
            let valid = |z: &[f64]| c.chart.contains(&z[..5]);
            let opts = Options {
                valid: &valid,
                rechart: Some(&rc),
                stride: opts_stride,
            };
            let tr = shift(integrate::integrate_with(&f, &z0, duration, a.h, &opts)?);
            let diags: Vec<Diagnostic> = vec![
                ("H", Box::new(|z: &[f64]| Ok(c.hamiltonian(z)))),
                ("J1", Box::new(|z: &[f64]| Ok(ball::hgm_momenta(p, &c, sol, z)?[0]))),
                ("J2", Box::new(|z: &[f64]| Ok(ball::hgm_momenta(p, &c, sol, z)?[1]))),
            ];
            let mut names: Vec<String> = c.chart.names.clone();
            names.extend(["p_x", "p_y", "M_n"].map(String::from));
            finish(out, &names, tr, &diags)
        }
        _ => {
            let sys = &model.system;
            let hs = &model.hgs_system;
            let n = sys.n();
            let z0 = match &a.init {
                Some(v) if v.len() == sys.phase_dim() => v.clone(),
                Some(v) => {
                    return Err(Error::Params(format!("--init needs {} values, got {}", sys.phase_dim(), v.len())));
                }
                None => sys.sample(&mut Sampler::new(a.seed), 1).remove(0),
            };
            sys.check_phase(&z0)?;
            let f = integrate::x_nh_rhs(sys);
            let valid = |z: &[f64]| sys.chart.contains(&z[..n]) && sys.symmetry.is_regular(&z[..n]);
            let opts = Options {
                valid: &valid,
                rechart: None,
                stride: opts_stride,
            };
            let tr = shift(integrate::integrate_with(&f, &z0, duration, a.h, &opts)?);
            let bl = hs.blocks();
            let jnames: Vec<String> = (1..=bl.s).map(|k| format!("J{k}")).collect();
            let mut diags: Vec<Diagnostic> = vec![("H", Box::new(|z: &[f64]| Ok(sys.hamiltonian(z))))];
            for (k, name) in jnames.iter().enumerate() {
                diags.push((
                    name.as_str(),
                    Box::new(move |z: &[f64]| Ok(hs.from_cov(&z[..n], sys.p_cov(z).as_slice())[n + bl.h + k])),
                ));
            }
            let mut names: Vec<String> = sys.chart.names.clone();
            names.extend((0..sys.r()).map(|k| format!("p{k}")));
            finish(out, &names, tr, &diags)
        }
    }
}

fn finish(out: impl Write, names: &[String], tr: Trajectory, diags: &[Diagnostic]) -> Result<SimulateSummary> {
    integrate::write_trajectory_csv(out, names, &tr, diags)?;
    let cols = integrate::diagnostics(&tr, diags)?;
    let drifts = diags
        .iter()
        .zip(&cols)
        .map(|((n, _), v)| {
            let (a, r) = drift(v);
            (n.to_string(), a, r)
        })
        .collect();
    Ok(SimulateSummary {
        status: tr.status,
        end_time: tr.end_time(),
        recharts: tr.recharts,
        drifts,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BSample {
    pub z: Vec<f64>,
    /// Values on the `Ṽ_C` basis.
    pub b: Vec<Vec<f64>>,
    pub b1: Vec<Vec<f64>>,
    pub bscript: Vec<Vec<f64>>,
    pub closed_form_residual: Option<f64>,
    pub dynamical_defect: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct HamiltonizeReport {
    pub system: String,
    pub seed: u64,
    pub samples: Vec<BSample>,
    pub max_closed_form_residual: Option<f64>,
    pub bracket_table: Vec<crate::gauge::PairSummary>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn hamiltonize(model: &Model, points: usize, seed: u64) -> Result<HamiltonizeReport> {
    let sys = &model.system;
    let pts = sys.sample(&mut Sampler::new(seed), points);
    let (b1, bs) = match &model.b.parts {
        Some(p) => (p.0.clone(), p.1.clone()),
        None => return Err(Error::Params("gauge form has no B₁ + 𝓑 split".into())),
    };
    let samples = pts
        .par_iter()
        .map(|z| {
            let res = match closed_form_b(model, z) {
                Some(o) => Some((model.b.at(sys, z)? - o).amax()),
                None => None,
            };
            Ok(BSample {
                z: z.clone(),
                b: rows(&model.b.block(sys, z)?),
                b1: rows(&b1.block(sys, z)?),
                bscript: rows(&bs.block(sys, z)?),
                closed_form_residual: res,
                dynamical_defect: dynamical_defect(sys, &model.b, z)?,
            })
        })
        .collect::<Result<Vec<BSample>>>()?;
    let max_res = samples
        .iter()
        .filter_map(|s| s.closed_form_residual)
        .reduce(f64::max);
    let tab = bracket_table(sys, Some(&model.b), &bracket_oracles(model, true), &pts)?;
    Ok(HamiltonizeReport {
        system: model.params.name().to_string(),
        seed,
        samples,
        max_closed_form_residual: max_res,
        bracket_table: tab.summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("nhgauge").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn global_flags_parse_after_the_command() {
        let c = parse(&["verify", "ball", "--seed", "3", "--tol-scale", "2"]);
        assert_eq!(c.seed, 3);
        assert_eq!(c.tol_scale, 2.0);
        let c = parse(&["simulate", "ball", "--T", "2", "--init", "0.1,-0.2,0,1,0,0.3,-0.5,0.01"]);
        match c.command {
            Command::Simulate { t_final, init, .. } => {
                assert_eq!(t_final, 2.0);
                assert_eq!(init.unwrap().len(), 8);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn usage_errors_exit_with_two() {
        assert_eq!(main_with(["nhgauge", "verify", "unicycle"]), 2);
        assert_eq!(main_with(["nhgauge", "frobnicate"]), 2);
        assert_eq!(main_with(["nhgauge", "hgm", "chaplygin"]), 2);
    }

    #[test]
    fn config_and_argument_must_agree() {
        let cfg = Config {
            system: Some("ball".into()),
            ..Default::default()
        };
        assert!(matches!(cfg.model(Some("solid")), Err(Error::Params(_))));
        assert!(matches!(Config::default().model(None), Err(Error::Params(_))));
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let r: std::result::Result<Config, _> = serde_json::from_str(r#"{"system": "ball", "colour": 1}"#);
        assert!(r.is_err());
    }

    #[test]
    fn relative_difference_uses_floor() {
        assert!(relative_difference(1e-11, -4e-12, RELATIVE_FLOOR) < 1e-7);
        assert!((relative_difference(2.0, 1.0, RELATIVE_FLOOR) - 0.5).abs() < 1e-15);
    }
}
