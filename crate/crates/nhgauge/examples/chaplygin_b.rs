//! Gauge 2-form of the Chaplygin ball, compared with R²m⟨Ω, dλ⟩, and the
//! Casimir identity for J_η.

use nhgauge::gauge::casimir_defect;
use nhgauge::geom::Sampler;
use nhgauge::systems::{by_name, chaplygin, Params};

fn main() -> nhgauge::Result<()> {
    let m = by_name("chaplygin")?;
    let Params::Chaplygin(p) = &m.params else { unreachable!() };
    let (s, hs) = (&m.system, &m.hgs_system);

    for z in s.sample(&mut Sampler::new(4), 5) {
        let b = m.b.at(s, &z)?;
        let err = (&b - chaplygin::b_oracle(p, s, &z)).amax();
        let zh = hs.from_cov(&z[..s.n()], s.p_cov(&z).as_slice());
        let cas = casimir_defect(hs, &m.b, &zh)?;
        println!("|B| {:.4}  closed form err {err:.1e}  casimir {cas:.1e}", b.amax());
    }
    Ok(())
}
