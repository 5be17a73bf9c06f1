//! The snakeboard needs no gauge: B vanishes and π_red is already Poisson
//! up to a twist by −d𝓑̄.

use nhgauge::analysis::{triples, twisted_check};
use nhgauge::cli::{invariant_rank, minus_d_bscript};
use nhgauge::geom::Sampler;
use nhgauge::systems::by_name;

fn main() -> nhgauge::Result<()> {
    let m = by_name("snakeboard")?;
    let s = &m.system;
    let pts = s.sample(&mut Sampler::new(1), 20);

    let mut worst: f64 = 0.0;
    for z in &pts {
        worst = worst.max(m.b.at(s, z)?.amax());
    }
    println!("max |B| over {} points: {worst:.2e}", pts.len());

    let inv: Vec<_> = s.symmetry.invariants.iter().map(|i| s.phase_field(i.f.clone())).collect();
    let phi = minus_d_bscript(&m)?;
    let pin = |z: &[f64]| s.bivector(z, None);
    let d = twisted_check(&pin, &phi, &inv, &triples(inv.len()), &pts, &mut Sampler::new(2))?;
    println!("twisted Jacobi defect: {d:.2e}");
    println!("rank of π_red: {}", invariant_rank(s, None, &pts[0])?);
    Ok(())
}
