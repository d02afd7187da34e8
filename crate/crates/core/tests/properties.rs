use ldpgap::analytics::{
    allocate, allocated_spec, min_budget, mse_gap, AllocationKind, PopulationProfile,
};
use ldpgap::io::{read_records, write_records};
use ldpgap::mechanisms::{
    audit_l_grid, audit_r_exact, epsilon_of_l, epsilon_of_r, Budget, ClientRecord, MechanismSpec,
};
use ldpgap::rng::CounterRng;
use ldpgap::simulation::{generate, population_profile, GeneratorSpec, GroupGenerator};
use proptest::prelude::*;

fn kind() -> impl Strategy<Value = AllocationKind> {
    prop_oneof![
        Just(AllocationKind::R),
        Just(AllocationKind::LK2),
        Just(AllocationKind::LOpt)
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn r_outputs_stay_in_the_output_space(
        eps1 in 0.0..8.0f64, eps2 in 0.01..8.0f64, groups in 2u32..6,
        group in 0u32..6, value in -1.0..=1.0f64, key: u64,
    ) {
        let group = group % groups;
        let spec = MechanismSpec::r(eps1, eps2).unwrap().with_groups(groups);
        let out = spec.perturber().unwrap()
            .perturb(&ClientRecord::new(group, value).unwrap(), &mut CounterRng::new(key))
            .unwrap();
        prop_assert!(out.group < groups);
        prop_assert!(out.value == 1.0 || out.value == -1.0);
    }

    #[test]
    fn perturbation_is_a_function_of_the_stream(
        eps in 0.05..5.0f64, value in -1.0..=1.0f64, key: u64, k in kind(),
    ) {
        let p = allocated_spec(k, eps).unwrap().perturber().unwrap();
        let rec = ClientRecord::new(1, value).unwrap();
        let a = p.perturb(&rec, &mut CounterRng::new(key)).unwrap();
        let b = p.perturb(&rec, &mut CounterRng::new(key)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn r_audit_never_falls_below_the_claim(eps1 in 0.0..6.0f64, eps2 in 0.0..6.0f64) {
        let b = Budget::with_default_k(eps1, eps2).unwrap();
        let rep = audit_r_exact(&b).unwrap();
        prop_assert!(rep.tight_eps >= epsilon_of_r(&b) - 1e-12);
        prop_assert!(((rep.witness.p0 / rep.witness.p1).ln() - rep.tight_eps).abs() < 1e-9);
    }

    #[test]
    fn l_audit_with_k2_matches_the_bound(eps1 in 0.0..3.0f64, eps2 in 0.05..3.0f64) {
        let b = Budget::new(eps1, eps2, 2.0).unwrap();
        let rep = audit_l_grid(&b, 3.0, 1e-3).unwrap();
        prop_assert!((rep.tight_eps - epsilon_of_l(&b).unwrap()).abs() < 1e-3);
        prop_assert!(!rep.boundary_attained);
    }

    #[test]
    fn allocations_meet_their_total_budget(eps in 0.01..20.0f64) {
        for k in [AllocationKind::LK2, AllocationKind::LOpt] {
            let b = allocate(k, eps).unwrap();
            prop_assert!(epsilon_of_l(&b).unwrap() <= eps * (1.0 + 1e-12), "{k} at {eps}: {b:?}");
            prop_assert!(b.eps1 >= 0.0);
        }
    }

    #[test]
    fn point_mse_lies_between_the_bounds(
        n0 in 1u64..100_000, n1 in 1u64..100_000, nu0 in 0.0..=1.0f64, nu1 in 0.0..=1.0f64,
        eps in 0.05..10.0f64, k in kind(),
    ) {
        let pop = PopulationProfile::from_sizes([n0, n1], [nu0, nu1]).unwrap();
        let rep = mse_gap(&pop, &allocated_spec(k, eps).unwrap()).unwrap();
        let slack = 1e-12 * rep.upper;
        prop_assert!(rep.lower <= rep.point + slack && rep.point <= rep.upper + slack);
        prop_assert!(rep.lower > 0.0);
    }

    #[test]
    fn gap_mse_is_symmetric_in_the_groups(n0 in 1u64..10_000, n1 in 1u64..10_000, eps in 0.05..5.0f64, k in kind()) {
        let pop = PopulationProfile::from_sizes([n0, n1], [0.3, 0.7]).unwrap();
        let spec = allocated_spec(k, eps).unwrap();
        let a = mse_gap(&pop, &spec).unwrap();
        let b = mse_gap(&pop.swapped(), &spec).unwrap();
        prop_assert!((a.point - b.point).abs() <= 1e-12 * a.point);
    }

    #[test]
    fn two_point_populations_hit_their_moments(half in 1u64..500, mean in -0.9..0.9f64, frac in 0.0..=1.0f64) {
        // nu2 ranges over its feasible interval for this mean.
        let hi = 1.0 - 2.0 * mean.abs() + 2.0 * mean * mean;
        let nu2 = mean * mean + frac * (hi - mean * mean);
        let spec = GeneratorSpec::new(vec![
            GroupGenerator::two_point(2 * half, mean, nu2),
            GroupGenerator::constant(1, 0.0),
        ]);
        let p = population_profile(&generate(&spec, 0).unwrap()).unwrap();
        prop_assert!((p.groups[0].mean.unwrap() - mean).abs() < 1e-12);
        prop_assert!((p.groups[0].nu2 - nu2).abs() < 1e-12);
    }

    #[test]
    fn records_survive_csv(values in prop::collection::vec((0u32..5, -1.0..=1.0f64), 0..50)) {
        let recs: Vec<ClientRecord> = values.iter().map(|&(g, v)| ClientRecord { group: g, value: v }).collect();
        let mut buf = Vec::new();
        write_records(&mut buf, &recs).unwrap();
        prop_assert_eq!(read_records(&buf[..], false).unwrap(), recs);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn min_budget_grows_as_alpha_shrinks(p in 4u32..9, alpha in 0.001..0.5f64, k in kind()) {
        let total = 10u64.pow(p);
        let loose = min_budget(total, alpha * 2.0, 0.99, k).unwrap().eps.unwrap_or(f64::INFINITY);
        let tight = min_budget(total, alpha, 0.99, k).unwrap().eps.unwrap_or(f64::INFINITY);
        prop_assert!(loose <= tight);
    }
}
