//! Acceptance criteria 1–14, one line each. Runs without the test harness;
//! the process fails if any line is red.

use std::time::Instant;
use nhgauge::analysis::{jacobiators, triples, twisted_check};
use nhgauge::cli::{dc_kw_defect, defect_point, invariant_rank, jacobiator_agreement, minus_d_bscript, DEFECT_X};
use nhgauge::gauge::{b_coordinate, bracket_table, casimir_defect, dynamical_defect};
use nhgauge::geom::{Sampler, ScalarField};
use nhgauge::integrate::{drift, integrate_with, x_nh_rhs, Options};
use nhgauge::systems::{ball, by_name, chaplygin, solid, Model, Params, NAMES};
use nhgauge::Result;

const SEED: u64 = 20;

struct Line {
    id: usize,
    what: String,
    value: f64,
    tol: f64,
    pass: bool,
    note: String,
}

fn below(id: usize, what: &str, value: f64, tol: f64) -> Line {
    Line {
        id,
        what: what.into(),
        value,
        tol,
        pass: value.is_finite() && value < tol,
        note: String::new(),
    }
}

fn failed(id: usize, what: &str, e: nhgauge::Error) -> Line {
    Line {
        id,
        what: what.into(),
        value: f64::NAN,
        tol: f64::NAN,
        pass: false,
        note: format!("error: {e}"),
    }
}

fn points(m: &Model, count: usize) -> Vec<Vec<f64>> {
    m.system.sample(&mut Sampler::new(SEED), count)
}

fn max_over(pts: &[Vec<f64>], f: impl Fn(&[f64]) -> Result<f64>) -> Result<f64> {
    let mut w: f64 = 0.0;
    for z in pts {
        w = w.max(f(z)?);
    }
    Ok(w)
}

fn invariants(m: &Model) -> Vec<ScalarField> {
    let s = &m.system;
    s.symmetry.invariants.iter().map(|i| s.phase_field(i.f.clone())).collect()
}

fn ball_params(m: &Model) -> &ball::BallParams {
    match &m.params {
        Params::Ball(p) => p,
        _ => unreachable!(),
    }
}

fn c1(snake: &Model) -> Result<Line> {
    let pts = points(snake, 100);
    let d = max_over(&pts, |z| Ok(snake.b.at(&snake.system, z)?.amax()))?;
    Ok(below(1, "snakeboard B vanishes", d, 1e-8))
}

fn c2(chap: &Model) -> Result<Line> {
    let p = match &chap.params {
        Params::Chaplygin(p) => p,
        _ => unreachable!(),
    };
    let s = &chap.system;
    let d = max_over(&points(chap, 50), |z| Ok((chap.b.at(s, z)? - chaplygin::b_oracle(p, s, z)).amax()))?;
    Ok(below(2, "Chaplygin B = R²m⟨Ω, dλ⟩", d, 1e-6))
}

fn c3(sol: &Model) -> Result<Line> {
    let p = match &sol.params {
        Params::Solid(p) => p,
        _ => unreachable!(),
    };
    let s = &sol.system;
    let d = max_over(&points(sol, 50), |z| Ok((sol.b.at(s, z)? - solid::b_oracle(p, s, z)).amax()))?;
    Ok(below(3, "solid B = mϱ⟨γ,s⟩⟨Ω, dλ⟩", d, 1e-6))
}

fn c4(m: &Model) -> Result<Line> {
    let p = ball_params(m);
    let s = &m.system;
    let inv = invariants(m);
    let pinh = |z: &[f64]| s.bivector(z, None);
    let mut rel: f64 = 0.0;
    let mut notes = Vec::new();
    for x in DEFECT_X {
        let z = defect_point(p, s, x)?;
        let j = jacobiators(&pinh, &inv, &[(1, 3, 4)], &z)?[0];
        let o = ball::defect_oracle(p, x);
        rel = rel.max(((j - o) / o).abs());
        let printed = ball::defect_printed(p, x);
        notes.push(format!("x={x}: jac {j:.6e}, (1+Rn₂^y) form {o:.6e}, (1−Rn₂^y) form {printed:.6e}, ratio {:.4}", j / printed));
    }
    let mut l = below(4, "ball π_nh Jacobiator on (p₁,p₃,p₄) at y=0, relative error", rel, 1e-4);
    l.note = notes.join("; ");
    Ok(l)
}

fn c5(m: &Model) -> Result<Line> {
    let s = &m.system;
    let inv = invariants(m);
    let pib = |z: &[f64]| {
        let b = m.b.block(s, z)?;
        s.bivector(z, Some(&b))
    };
    let tr = triples(5);
    let d = max_over(&points(m, 50), |z| Ok(jacobiators(&pib, &inv, &tr, z)?.iter().fold(0.0, |a: f64, b| a.max(b.abs()))))?;
    Ok(below(5, "ball π_B Jacobiator, 10 invariant triples", d, 1e-5))
}

fn c6(m: &Model) -> Result<Line> {
    let p = ball_params(m);
    let pts = points(m, 50);
    let tab = bracket_table(&m.system, Some(&m.b), &ball::gauged_table(p), &pts)?;
    let mut rel: f64 = 0.0;
    for r in &tab.rows {
        let (o, res) = (r.oracle.unwrap_or(0.0), r.residual.unwrap_or(f64::NAN).abs());
        rel = rel.max(if o.abs() > 1e-8 { res / o.abs() } else { res });
    }
    let mut l = below(6, "ball reduced π_B bracket table, relative error", rel, 1e-6);
    l.note = "table read with F₃ = −F̄₃, F₄ = −F̄₄ and the (p₀,p₁), (p₁,p₂) signs of the pair ordering".into();
    Ok(l)
}

fn c7(m: &Model) -> Result<Line> {
    let p = ball_params(m);
    let c = ball::constraint_system(p, &m.system);
    let sol = m.hgm.as_ref().unwrap();
    let z0 = ball::phase_from_frame_momenta(p, &c, &ball::DEFAULT_Q, &ball::DEFAULT_MOMENTA)?;
    let f = x_nh_rhs(&c);
    let rc = |z: &[f64]| ball::rechart(z);
    let valid = |z: &[f64]| c.chart.contains(&z[..5]);
    let opts = Options {
        valid: &valid,
        rechart: Some(&rc),
        stride: 10,
    };
    let tr = integrate_with(&f, &z0, 10.0, 1e-3, &opts)?.completed()?;
    let h: Vec<f64> = tr.states.iter().map(|z| c.hamiltonian(z)).collect();
    let mut jrel: f64 = 0.0;
    for k in 0..2 {
        let j = tr
            .states
            .iter()
            .map(|z| Ok(ball::hgm_momenta(p, &c, sol, z)?[k]))
            .collect::<Result<Vec<f64>>>()?;
        jrel = jrel.max(drift(&j).1);
    }
    let hd = drift(&h).0;
    let mut l = below(7, "ball T=10, h=1e-3: J₁, J₂ relative drift", jrel, 1e-6);
    l.pass &= hd < 1e-7;
    l.note = format!("energy drift {hd:.3e} (tolerance 1e-7), {} recharts", tr.recharts);
    Ok(l)
}

fn casimir(m: &Model, pts: &[Vec<f64>]) -> Result<f64> {
    let (s, hs) = (&m.system, &m.hgs_system);
    let n = s.n();
    max_over(pts, |z| casimir_defect(hs, &m.b, &hs.from_cov(&z[..n], s.p_cov(z).as_slice())))
}

fn c8(ball: &Model, chap: &Model) -> Result<Line> {
    let a = casimir(ball, &points(ball, 50))?;
    let b = casimir(chap, &points(chap, 50))?;
    let mut l = below(8, "π_B♯(dJ_k) + (η_k)_𝓜, ball and Chaplygin", a.max(b), 1e-6);
    l.note = format!("ball {a:.3e}, Chaplygin {b:.3e}");
    Ok(l)
}

fn per_system(id: usize, what: &str, tol: f64, models: &[Model], f: impl Fn(&Model) -> Result<f64>) -> Result<Line> {
    let mut w: f64 = 0.0;
    let mut notes = Vec::new();
    for m in models {
        let d = f(m)?;
        notes.push(format!("{} {d:.3e}", m.params.name()));
        w = w.max(d);
    }
    let mut l = below(id, what, w, tol);
    l.note = notes.join(", ");
    Ok(l)
}

fn c9(models: &[Model]) -> Result<Line> {
    per_system(9, "intrinsic vs coordinate B, all built-ins", 1e-6, models, |m| {
        let (s, hs) = (&m.system, &m.hgs_system);
        let bc = b_coordinate(hs);
        max_over(&points(m, 50), |z| {
            let zh = hs.from_cov(&z[..s.n()], s.p_cov(z).as_slice());
            Ok((m.b.at(s, z)? - bc.at(hs, &zh)?).amax())
        })
    })
}

fn c10(models: &[Model]) -> Result<Line> {
    per_system(10, "i_{X_nh}B on 𝒞, all built-ins", 1e-6, models, |m| {
        max_over(&points(m, 50), |z| dynamical_defect(&m.system, &m.b, z))
    })
}

fn c11(models: &[Model]) -> Result<Line> {
    per_system(11, "d^𝒞𝒦_W componentwise, all built-ins", 1e-5, models, |m| dc_kw_defect(&m.system, &points(m, 50)))
}

fn c12(snake: &Model) -> Result<Line> {
    let s = &snake.system;
    let pts = points(snake, 30);
    let phi = minus_d_bscript(snake)?;
    let inv = invariants(snake);
    let pin = |z: &[f64]| s.bivector(z, None);
    let d = twisted_check(&pin, &phi, &inv, &triples(inv.len()), &pts, &mut Sampler::new(SEED))?;
    let mut l = below(12, "snakeboard π_red twisted by −d𝓑̄", d, 1e-4);
    l.note = "𝓑̄ is the 𝓑 summand of B, equal to −⟨J,𝒦_W⟩ here".into();
    Ok(l)
}

fn c13(ball: &Model, snake: &Model) -> Result<Line> {
    let mut bad = 0usize;
    let mut seen = (Vec::new(), Vec::new());
    for z in points(ball, 50) {
        let r = invariant_rank(&ball.system, Some(&ball.b), &z)?;
        bad += (r != 2) as usize;
        seen.0.push(r);
    }
    for z in points(snake, 50) {
        let r = invariant_rank(&snake.system, None, &z)?;
        bad += (r != 4) as usize;
        seen.1.push(r);
    }
    seen.0.dedup();
    seen.1.dedup();
    let mut l = below(13, "rank: ball π_B = 2, snakeboard π_red = 4 (points off)", bad as f64, 0.5);
    l.note = format!("ball ranks {:?}, snakeboard ranks {:?}", seen.0, seen.1);
    Ok(l)
}

fn c14(models: &[Model]) -> Result<Line> {
    per_system(14, "direct vs 3-form Jacobiator, relative difference", 1e-3, models, |m| {
        jacobiator_agreement(m, &points(m, 30))
    })
}

fn main() {
    let start = Instant::now();
    let models: Vec<Model> = NAMES.iter().map(|n| by_name(n).expect("built-in")).collect();
    let get = |n: &str| models.iter().find(|m| m.params.name() == n).unwrap();
    let (snake, chap, sol, bl) = (get("snakeboard"), get("chaplygin"), get("solid"), get("ball"));

    type Crit<'a> = (usize, &'a str, Box<dyn Fn() -> Result<Line> + 'a>);
    let crits: Vec<Crit> = vec![
        (1, "snakeboard B", Box::new(|| c1(snake))),
        (2, "Chaplygin B", Box::new(|| c2(chap))),
        (3, "solid B", Box::new(|| c3(sol))),
        (4, "ball defect", Box::new(|| c4(bl))),
        (5, "ball π_B Jacobiator", Box::new(|| c5(bl))),
        (6, "ball table", Box::new(|| c6(bl))),
        (7, "HGM conservation", Box::new(|| c7(bl))),
        (8, "Casimir", Box::new(|| c8(bl, chap))),
        (9, "B agreement", Box::new(|| c9(&models))),
        (10, "dynamical gauge", Box::new(|| c10(&models))),
        (11, "d^𝒞𝒦_W", Box::new(|| c11(&models))),
        (12, "twisted snakeboard", Box::new(|| c12(snake))),
        (13, "ranks", Box::new(|| c13(bl, snake))),
        (14, "Jacobiator oracles", Box::new(|| c14(&models))),
    ];
    let mut all = true;
    for (id, what, f) in &crits {
        let l = f().unwrap_or_else(|e| failed(*id, what, e));
        all &= l.pass;
        println!(
            "criterion {:>2}: {} {} (value {:.3e}, tolerance {:.0e}){}",
            l.id,
            if l.pass { "PASS" } else { "FAIL" },
            l.what,
            l.value,
            l.tol,
            if l.note.is_empty() { String::new() } else { format!(" [{}]", l.note) }
        );
    }
    println!("acceptance: {} in {:.1}s", if all { "all criteria pass" } else { "FAILURES" }, start.elapsed().as_secs_f64());
    if !all {
        std::process::exit(1);
    }
}
