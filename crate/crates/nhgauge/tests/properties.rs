use std::sync::OnceLock;

use nalgebra::DVector;
use nhgauge::gauge::casimir_defect;
use nhgauge::geom::Sampler;
use nhgauge::systems::{by_name, Model, NAMES};
use proptest::prelude::*;

fn models() -> &'static [Model] {
    static M: OnceLock<Vec<Model>> = OnceLock::new();
    M.get_or_init(|| NAMES.iter().map(|n| by_name(n).unwrap()).collect())
}

fn point(m: &Model, seed: u64) -> Vec<f64> {
    m.system.sample(&mut Sampler::new(seed), 1).remove(0)
}

fn to_hgs(m: &Model, z: &[f64]) -> Vec<f64> {
    let s = &m.system;
    m.hgs_system.from_cov(&z[..s.n()], s.p_cov(z).as_slice())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gauged_bivector_is_antisymmetric(k in 0usize..4, seed in any::<u64>()) {
        let m = &models()[k];
        let z = point(m, seed);
        let b = m.b.block(&m.system, &z).unwrap();
        let pi = m.system.bivector(&z, Some(&b)).unwrap();
        prop_assert!((&pi + pi.transpose()).amax() < 1e-12);
    }

    #[test]
    fn gauge_does_not_change_the_dynamics(k in 0usize..4, seed in any::<u64>()) {
        let m = &models()[k];
        let s = &m.system;
        let z = point(m, seed);
        let dh = DVector::from_vec(s.hamiltonian_field().grad(&z).iter().copied().collect());
        let b = m.b.block(s, &z).unwrap();
        let x0 = -s.sharp(&z, None, &dh).unwrap();
        let xb = -s.sharp(&z, Some(&b), &dh).unwrap();
        prop_assert!((&x0 - &xb).amax() < 1e-8 * (1.0 + x0.amax()));
        prop_assert!((&x0 - s.x_nh(&z).unwrap()).amax() < 1e-8 * (1.0 + x0.amax()));
    }

    #[test]
    fn energy_is_a_first_integral(k in 0usize..4, seed in any::<u64>()) {
        let m = &models()[k];
        let s = &m.system;
        let z = point(m, seed);
        let dh = s.hamiltonian_field().grad(&z);
        prop_assert!(dh.dot(&s.x_nh(&z).unwrap()).abs() < 1e-9 * (1.0 + dh.amax()));
    }

    #[test]
    fn hgs_momenta_are_conserved(k in 0usize..4, seed in any::<u64>()) {
        let m = &models()[k];
        let hs = &m.hgs_system;
        let zh = to_hgs(m, &point(m, seed));
        let bl = hs.blocks();
        let x = hs.x_nh(&zh).unwrap();
        prop_assert!(x.rows(hs.n() + bl.h, bl.s).amax() < 1e-6);
    }

    #[test]
    fn momenta_are_casimirs_up_to_the_orbit(k in 0usize..4, seed in any::<u64>()) {
        let m = &models()[k];
        let zh = to_hgs(m, &point(m, seed));
        prop_assert!(casimir_defect(&m.hgs_system, &m.b, &zh).unwrap() < 1e-6);
    }
}
