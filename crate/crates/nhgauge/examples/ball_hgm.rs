//! Solves the HGM equation of the ball on a narrower p₁ interval and prints
//! the fundamental matrix at a few nodes.

use std::collections::BTreeMap;

use nhgauge::systems::{build, Params};

fn main() -> nhgauge::Result<()> {
    let mut domain = BTreeMap::new();
    domain.insert("p1".to_string(), (0.0, 1.5));
    let m = build(&Params::default_for("ball")?, &domain)?;
    let sol = m.hgm.as_ref().unwrap();

    for s in [0.0, 0.5, 1.0, 1.5] {
        let (f, _) = sol.eval(s)?;
        println!("p1 = {s:.1}: F = [[{:+.5}, {:+.5}], [{:+.5}, {:+.5}]], det {:.6}",
            f[(0, 0)], f[(0, 1)], f[(1, 0)], f[(1, 1)], f.determinant());
    }
    println!("refinement {:.1e}", sol.refinement);
    Ok(())
}
