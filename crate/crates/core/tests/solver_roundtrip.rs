use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use snapfix_core::sim::{
    generate_snapshot, perturb_apriori, random_truth, synthetic_constellation_for, ConstellationDesign, NoiseSpec,
};
use snapfix_core::solvers::{solve, Method, SolverConfig};

fn case(seed: u64, n: usize) -> (snapfix_core::nav::EphemerisSet, snapfix_core::sim::TruthState, snapfix_core::model::Snapshot, Vec<i64>) {
    let design = ConstellationDesign::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eph = synthetic_constellation_for(n, seed ^ 0xA5, &design).unwrap();
    let truth = random_truth(&design, &mut rng, 600.0).unwrap();
    let g = generate_snapshot(&truth, &eph, &NoiseSpec::noiseless()).unwrap();
    (eph, truth, g.snapshot, g.integers)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn mils_doppler_recovers_truth(seed in 0u64..1_000_000, n in 6usize..=13, dist in 0.0f64..500e3,
                                   az in 0.0f64..360.0, dt in -300.0f64..300.0) {
        let (eph, truth, snap, _) = case(seed, n);
        let ap = perturb_apriori(&truth, dist, az, dt).unwrap();
        let fix = solve(Method::MilsDoppler, &snap, &ap, &eph, &SolverConfig::default()).unwrap();
        prop_assert!(fix.converged);
        prop_assert!(fix.error_m(truth.position) < 1e-2, "error {}", fix.error_m(truth.position));
    }

    #[test]
    fn integers_match_up_to_a_constant(seed in 0u64..1_000_000, n in 5usize..=13, dist in 0.0f64..20e3) {
        let (eph, truth, snap, integers) = case(seed, n);
        let ap = perturb_apriori(&truth, dist, 45.0, 2.0).unwrap();
        for m in [Method::VanDiggelen, Method::MilsApriori, Method::MilsDoppler] {
            let fix = solve(m, &snap, &ap, &eph, &SolverConfig::default()).unwrap();
            let offset = fix.integers[0] - integers[0];
            for (a, b) in fix.integers.iter().zip(&integers) {
                prop_assert_eq!(a - b, offset, "{}", m);
            }
        }
    }

    #[test]
    fn solving_is_deterministic(seed in 0u64..1_000_000) {
        let (eph, truth, snap, _) = case(seed, 9);
        let ap = perturb_apriori(&truth, 80e3, 200.0, -40.0).unwrap();
        for m in Method::ALL {
            let a = solve(m, &snap, &ap, &eph, &SolverConfig::default());
            let b = solve(m, &snap, &ap, &eph, &SolverConfig::default());
            prop_assert_eq!(a, b);
        }
    }
}
