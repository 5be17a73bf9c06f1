//! Solid of revolution: the HGM equation in γ₃, the Jellett integral and the
//! gauge 2-form mϱ⟨γ,s⟩⟨Ω, dλ⟩.

use nhgauge::geom::Sampler;
use nhgauge::systems::{by_name, solid, Params};

fn main() -> nhgauge::Result<()> {
    let m = by_name("solid")?;
    let Params::Solid(p) = &m.params else { unreachable!() };
    let s = &m.system;
    let sol = m.hgm.as_ref().expect("solid has a non-constant basis");
    let (min_det, _) = sol.det_summary();
    println!("HGM on {} ∈ [{:.3}, {:.3}], min |det F| {min_det:.3}, refinement {:.1e}",
        sol.shape_var, sol.grid[0], sol.grid[sol.grid.len() - 1], sol.refinement);

    for z in s.sample(&mut Sampler::new(5), 5) {
        let err = (m.b.at(s, &z)? - solid::b_oracle(p, s, &z)).amax();
        println!("closed form err {err:.1e}");
    }
    Ok(())
}
