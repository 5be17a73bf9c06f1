//! Ball on a surface of revolution: π_nh fails the Jacobi identity, the
//! gauged π_B satisfies it and has rank 2 on the invariants.

use nhgauge::analysis::{jacobiators, triples};
use nhgauge::cli::{defect_point, invariant_rank, DEFECT_X};
use nhgauge::geom::Sampler;
use nhgauge::systems::{ball, by_name, Params};

fn main() -> nhgauge::Result<()> {
    let m = by_name("ball")?;
    let Params::Ball(p) = &m.params else { unreachable!() };
    let s = &m.system;
    let inv: Vec<_> = s.symmetry.invariants.iter().map(|i| s.phase_field(i.f.clone())).collect();
    let pinh = |z: &[f64]| s.bivector(z, None);
    let pib = |z: &[f64]| {
        let b = m.b.block(s, z)?;
        s.bivector(z, Some(&b))
    };

    for x in DEFECT_X {
        let z = defect_point(p, s, x)?;
        let j = jacobiators(&pinh, &inv, &[(1, 3, 4)], &z)?[0];
        println!("x = {x}: π_nh Jacobiator (p1,p3,p4) = {j:.6}, closed form {:.6}", ball::defect_oracle(p, x));
    }

    let tr = triples(inv.len());
    for z in s.sample(&mut Sampler::new(6), 3) {
        let worst = jacobiators(&pib, &inv, &tr, &z)?.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        println!("π_B: max Jacobiator {worst:.1e}, rank {}", invariant_rank(s, Some(&m.b), &z)?);
    }
    Ok(())
}
