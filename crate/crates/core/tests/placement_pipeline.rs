use std::sync::OnceLock;

use gridobs::integrator::simulate_steps;
use gridobs::netmodel::builtin_case;
use gridobs::observability::{build_observation_jacobian, propagate_chain, GramianContribution, SensorSelection};
use gridobs::placement::{
    nesting_check, run_placement, solve_apriori, solve_branch_and_bound, solve_bruteforce, PlacementProblem, Study,
    StudyConfig,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Fixture {
    study: Study,
    contributions: Vec<GramianContribution>,
}

fn case9() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let study = Study::prepare(&builtin_case("case9").unwrap(), &StudyConfig::default()).unwrap();
        let contributions = study.contributions_at(&study.x0).unwrap();
        Fixture { study, contributions }
    })
}

#[test]
fn every_count_matches_enumeration() {
    let f = case9();
    let base = PlacementProblem::new(f.contributions.clone(), 0).unwrap();
    let mut results = Vec::new();
    for p in 0..=9 {
        let pr = base.with_p(p).unwrap();
        let fast = solve_apriori(&pr).unwrap();
        assert_eq!(fast.z_star, solve_bruteforce(&pr).unwrap().z_star, "p = {p}");
        assert_eq!(fast.z_star, solve_branch_and_bound(&pr).unwrap().z_star, "p = {p}");
        results.push(fast);
    }
    assert_eq!(results[9].z_star, (1..=9).collect::<Vec<_>>());
    assert!(nesting_check(&results).unwrap());
}

#[test]
fn objective_equals_trace_of_selected_gramian() {
    let f = case9();
    let s = &f.study;
    let sim = s.mhe.simulation_config(&s.config.sim);
    let window = simulate_steps(&s.x0, &s.u, &s.schedule, &s.scheme, &sim, s.mhe.n_o - 1).unwrap();
    let chain = propagate_chain(
        &window.states,
        &s.u,
        &s.schedule,
        &s.scheme,
        &sim,
        s.mhe.n_o,
        s.config.recursion,
    )
    .unwrap();
    let base = PlacementProblem::new(f.contributions.clone(), 0).unwrap();
    for p in [1, 3, 5, 8] {
        let r = solve_apriori(&base.with_p(p).unwrap()).unwrap();
        let j = build_observation_jacobian(
            &chain,
            &SensorSelection::new(r.z_star.iter().copied(), 9).unwrap(),
            &s.layout,
        );
        let trace = j.tr_mul(&j).trace();
        assert!(
            (r.objective - trace).abs() <= 1e-9 * trace,
            "p = {p}: {} vs {trace}",
            r.objective
        );
        assert!((r.conditioning.trace - trace).abs() <= 1e-9 * trace);
    }
}

#[test]
fn placement_run_is_reproducible() {
    let f = case9();
    let a = run_placement(&f.study, &[2, 4]).unwrap();
    let b = run_placement(&f.study, &[4, 2]).unwrap();
    assert!(a.nested);
    assert_eq!(a.results.len(), 2);
    for (x, y) in a.results.iter().zip(&b.results) {
        assert_eq!(x.z_star, y.z_star);
        assert_eq!(x.objective_exact, y.objective_exact);
    }
    assert_eq!(a.full_estimate.x0_hat, b.full_estimate.x0_hat);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn input_order_never_changes_the_optimum(seed in any::<u64>(), p in 0usize..=9) {
        let f = case9();
        let reference = solve_apriori(&PlacementProblem::new(f.contributions.clone(), p).unwrap()).unwrap();
        let mut shuffled = f.contributions.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let r = solve_apriori(&PlacementProblem::new(shuffled, p).unwrap()).unwrap();
        prop_assert_eq!(&r.z_star, &reference.z_star);
        prop_assert_eq!(r.objective_exact, reference.objective_exact);
    }
}
