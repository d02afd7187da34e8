//! End-to-end: generate, perturb, tally, estimate.

use ldpgap::analytics::{chebyshev_alpha, mse_gap_upper, AllocationKind};
use ldpgap::estimation::{estimate_gap, tally};
use ldpgap::mechanisms::{MechanismSpec, PerturbedRecord};
use ldpgap::rng::CounterRng;
use ldpgap::simulation::{
    generate, run_experiment, ExperimentConfig, GeneratorSpec, GroupGenerator, MechanismConfig,
};

fn balanced(total: u64) -> GeneratorSpec {
    GeneratorSpec::new(vec![
        GroupGenerator::two_point(total / 2, 0.35, 0.4),
        GroupGenerator::two_point(total / 2, 0.05, 0.3),
    ])
}

#[test]
fn errors_stay_within_the_chebyshev_half_width() {
    for alloc in [AllocationKind::R, AllocationKind::LOpt] {
        let mut cfg = ExperimentConfig::new(
            balanced(1_000_000),
            MechanismConfig::Allocated { alloc, eps: 1.0 },
            100,
            21,
        );
        cfg.outputs.per_run = true;
        let res = run_experiment(&cfg).unwrap();
        let alpha =
            chebyshev_alpha(mse_gap_upper(res.sizes, &res.mechanism).unwrap(), 0.99).unwrap();
        let within = res
            .per_run
            .as_ref()
            .unwrap()
            .iter()
            .filter(|r| (r.gap - res.true_gap).abs() <= alpha)
            .count();
        assert!(within >= 99, "{alloc}: {within}/100 within {alpha}");
    }
}

#[test]
fn high_budget_l_is_accurate_at_a_million_clients() {
    let cfg = ExperimentConfig::new(
        balanced(1_000_000),
        MechanismConfig::Allocated {
            alloc: AllocationKind::LOpt,
            eps: 10.0,
        },
        10,
        5,
    );
    let res = run_experiment(&cfg).unwrap();
    assert!(res.mean_abs_error < 1e-3, "{}", res.mean_abs_error);
}

#[test]
fn experiment_matches_a_hand_rolled_pipeline() {
    let spec = balanced(2_000);
    let mech = MechanismSpec::r(1.0, 2.0).unwrap();
    let mut cfg = ExperimentConfig::new(spec.clone(), mech, 3, 77);
    cfg.outputs.per_run = true;
    let res = run_experiment(&cfg).unwrap();

    let population = generate(&spec, 77).unwrap();
    let perturber = mech.perturber().unwrap();
    for (run, est) in res.per_run.unwrap().iter().enumerate() {
        let out: Vec<PerturbedRecord> = population
            .iter()
            .enumerate()
            .map(|(i, r)| {
                perturber
                    .perturb(r, &mut CounterRng::for_client(77, run as u64, i as u64))
                    .unwrap()
            })
            .collect();
        let gap = estimate_gap(&tally(&out), [0, 1], [1_000, 1_000], &mech).unwrap();
        assert!((gap.mean_a - est.mean_a).abs() < 1e-12);
        assert!((gap.mean_b - est.mean_b).abs() < 1e-12);
    }
}
