use cbi_core::cumulant::{v_stable_closed, v_value, DEFAULT_TOL};
use cbi_core::discrete::OffspringLaw;
use cbi_core::mechanism::BranchingMechanism;
use cbi_core::rngkit::RandomStream;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn split_streams_are_pure(seed in any::<u64>(), i in any::<u64>()) {
        let root = RandomStream::new(seed);
        let mut a = root.split(i);
        let mut moved = root.clone();
        moved.uniform();
        let mut b = moved.split(i);
        prop_assert_eq!(a.uniform().to_bits(), b.uniform().to_bits());
    }

    #[test]
    fn phi_vanishes_at_zero_and_is_convex(b in -2.0f64..2.0, c in 0.0f64..2.0, alpha in 1.05f64..1.95, z in 0.01f64..20.0) {
        let phi = BranchingMechanism::stable(b, 1.0, alpha).unwrap();
        let phi = BranchingMechanism::new(b, c, phi.m).unwrap();
        prop_assert_eq!(phi.phi(0.0).unwrap(), 0.0);
        let h = 1e-3 * z;
        let second = phi.phi(z + h).unwrap() - 2.0 * phi.phi(z).unwrap() + phi.phi(z - h).unwrap();
        prop_assert!(second >= -1e-9 * phi.phi(z).unwrap().abs().max(1.0));
    }

    #[test]
    fn cumulant_increasing_in_lambda(b in -1.0f64..1.0, t in 0.01f64..3.0, l in 0.01f64..10.0) {
        let phi = BranchingMechanism::feller(b, 1.0).unwrap();
        let lo = v_value(&phi, l, t, DEFAULT_TOL).unwrap();
        let hi = v_value(&phi, 1.1 * l, t, DEFAULT_TOL).unwrap();
        prop_assert!(lo < hi);
        let closed = v_stable_closed(1.0, 1.0, b, t, l).unwrap();
        prop_assert!(((lo - closed) / closed).abs() < 1e-6);
    }

    #[test]
    fn pgfs_map_unit_interval(p in 0.01f64..0.99, alpha in 1.05f64..1.95, z in 0.0f64..=1.0) {
        for law in [
            OffspringLaw::Binary { p },
            OffspringLaw::Geometric { p },
            OffspringLaw::Poisson { mu: 3.0 * p },
            OffspringLaw::StableOffspring { alpha },
        ] {
            let g = law.pgf(z).unwrap();
            prop_assert!((0.0..=1.0).contains(&g), "{:?} {}", law, g);
        }
    }
}
