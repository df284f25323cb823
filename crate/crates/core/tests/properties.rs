use dispatch_core::bus::DeliveryPolicy;
use dispatch_core::consensus::{run_dispatch, trace_laplacian_potential, SolverConfig};
use dispatch_core::graph::{CommGraph, Preset};
use dispatch_core::model::{Consumer, Generator, NodeKind, Scenario};
use dispatch_core::oracle::{solve_centralized, verify_kkt, DEFAULT_BALANCE_TOL};
use dispatch_core::scenario::{generate_scenario, GenerationRanges, LoadedScenario};
use proptest::prelude::*;

fn generated(seed: u64, n_gen: usize, n_load: usize) -> LoadedScenario {
    generate_scenario(seed, n_gen, n_load, &GenerationRanges::default())
        .unwrap()
        .validate()
        .unwrap()
}

fn preset() -> impl Strategy<Value = Preset> {
    prop_oneof![
        Just(Preset::Ring),
        Just(Preset::Complete),
        Just(Preset::Star),
        Just(Preset::Line)
    ]
}

fn lossy(drop: f64, seed: u64) -> SolverConfig {
    SolverConfig {
        delivery: DeliveryPolicy {
            drop_probability: drop,
            delay_rounds: 0,
            rng_seed: seed,
        },
        ..SolverConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn convergence_implies_optimality(seed in any::<u64>(), n_gen in 1usize..=4, n_load in 1usize..=6, p in preset()) {
        let l = generated(seed, n_gen, n_load).with_topology(p);
        let cfg = SolverConfig { max_iters: 20_000, ..SolverConfig::default() };
        let r = run_dispatch(&l.scenario, &l.graph, &cfg).unwrap();
        prop_assume!(r.converged);
        let oracle = solve_centralized(&l.scenario, DEFAULT_BALANCE_TOL).unwrap();
        prop_assert!((r.solution.lambda_star - oracle.lambda_star).abs() <= 1e-2);
        prop_assert!(r.solution.imbalance().abs() <= l.scenario.node_count() as f64 * cfg.tol_power + 1e-9);
    }

    #[test]
    fn powers_stay_within_bounds(seed in any::<u64>(), drop in 0.0f64..0.5, p in preset()) {
        let l = generated(seed, 3, 5).with_topology(p);
        let cfg = SolverConfig { max_iters: 300, ..lossy(drop, seed) };
        let r = run_dispatch(&l.scenario, &l.graph, &cfg).unwrap();
        for row in &r.trace {
            for (i, &pw) in row.power.iter().enumerate() {
                let params = l.scenario.node_params(i);
                prop_assert!((0.0..=params.p_max()).contains(&pw));
                if params.kind() == NodeKind::Generator {
                    prop_assert!(pw.is_finite());
                }
            }
        }
    }

    #[test]
    fn identical_seeds_give_identical_runs(seed in any::<u64>(), drop in 0.0f64..0.9) {
        let l = generated(seed, 2, 4);
        let cfg = SolverConfig { max_iters: 200, record_bus_events: true, ..lossy(drop, seed ^ 7) };
        let a = run_dispatch(&l.scenario, &l.graph, &cfg).unwrap();
        let b = run_dispatch(&l.scenario, &l.graph, &cfg).unwrap();
        prop_assert_eq!(&a.bus_events, &b.bus_events);
        prop_assert_eq!(a.bus_stats, b.bus_stats);
        prop_assert_eq!(a.trace.len(), b.trace.len());
        for (x, y) in a.trace.iter().zip(&b.trace) {
            let bits = |v: &[f64]| v.iter().map(|f| f.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&x.lambda), bits(&y.lambda));
            prop_assert_eq!(bits(&x.mismatch), bits(&y.mismatch));
        }
    }

    #[test]
    fn potential_shrinks_on_converged_runs(seed in any::<u64>(), p in preset()) {
        let l = generated(seed, 4, 6).with_topology(p);
        let r = run_dispatch(&l.scenario, &l.graph, &SolverConfig::default()).unwrap();
        prop_assume!(r.converged);
        let pots = r.potentials();
        prop_assert!(pots.last().unwrap() < &pots[0]);
    }

    #[test]
    fn trace_potential_matches_recomputation(seed in any::<u64>(), p in preset()) {
        let l = generated(seed, 3, 4).with_topology(p);
        let cfg = SolverConfig { max_iters: 100, ..SolverConfig::default() };
        let r = run_dispatch(&l.scenario, &l.graph, &cfg).unwrap();
        let again = trace_laplacian_potential(&r.trace, &l.graph).unwrap();
        for (row, pot) in r.trace.iter().zip(again) {
            prop_assert!((row.potential - pot).abs() <= 1e-9 * pot.abs().max(1.0));
        }
    }

    #[test]
    fn oracle_ignores_node_order(seed in any::<u64>(), n_gen in 1usize..=6, n_load in 1usize..=10, rot in 0usize..10) {
        let l = generated(seed, n_gen, n_load);
        let s = &l.scenario;
        let mut gens: Vec<Generator> = s.generators().to_vec();
        let mut loads: Vec<Consumer> = s.consumers().to_vec();
        let k = rot % gens.len();
        gens.rotate_left(k);
        loads.reverse();
        let shuffled = Scenario::new(gens, loads).unwrap();
        let a = solve_centralized(s, DEFAULT_BALANCE_TOL).unwrap();
        let b = solve_centralized(&shuffled, DEFAULT_BALANCE_TOL).unwrap();
        prop_assert!((a.lambda_star - b.lambda_star).abs() <= 1e-9);
        prop_assert!((a.objective - b.objective).abs() <= 1e-6 * a.objective.abs().max(1.0));
        prop_assert!(verify_kkt(&shuffled, &b, 1e-6).unwrap().is_clean());
    }

    #[test]
    fn lossy_runs_keep_price_near_oracle(seed in any::<u64>(), drop in prop_oneof![Just(0.0), Just(0.2), Just(0.5)]) {
        let l = generated(seed, 3, 5);
        let r = run_dispatch(&l.scenario, &l.graph, &SolverConfig { max_iters: 20_000, ..lossy(drop, seed) }).unwrap();
        prop_assume!(r.converged);
        let oracle = solve_centralized(&l.scenario, DEFAULT_BALANCE_TOL).unwrap();
        prop_assert!((r.solution.lambda_star - oracle.lambda_star).abs() <= 5e-2);
        let s = r.bus_stats;
        prop_assert_eq!(s.published, s.delivered + s.dropped + s.queued);
    }
}

#[test]
fn generated_runs_mostly_converge_on_every_preset() {
    for p in [Preset::Ring, Preset::Complete, Preset::Star, Preset::Line] {
        let converged = (0..5)
            .filter(|&seed| {
                let l = generated(seed, 3, 5).with_topology(p);
                let cfg = SolverConfig {
                    max_iters: 20_000,
                    ..SolverConfig::default()
                };
                run_dispatch(&l.scenario, &l.graph, &cfg).unwrap().converged
            })
            .count();
        assert!(converged >= 4, "{p}: {converged}/5 converged");
    }
}

#[test]
fn weighted_graph_runs() {
    let l = generated(42, 2, 2);
    let g = CommGraph::weighted(4, &[(0, 1, 0.3), (1, 2, 0.3), (2, 3, 0.3), (3, 0, 0.1)]).unwrap();
    let r = run_dispatch(&l.scenario, &g, &SolverConfig::default()).unwrap();
    assert!(r.converged);
    let oracle = solve_centralized(&l.scenario, DEFAULT_BALANCE_TOL).unwrap();
    assert!((r.solution.lambda_star - oracle.lambda_star).abs() <= 1e-2);
}
