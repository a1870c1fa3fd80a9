use approx::assert_abs_diff_eq;

use infomenu_core::audit::{analytic_corpus, brute_force_menu_search};
use infomenu_core::implicit::SignalGrid;
use infomenu_core::oracle::{build_sat_reduction, enumerated_environment, Cnf};
use infomenu_core::{
    build_action_sets, solve_explicit, solve_implicit, ActionId, BrOracle, BuyerType, Environment, ImplicitOptions,
    MatrixOracle, SatOracle, TrafficOracle,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn traffic_oracle_matches_path_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for seed in 0..5 {
        let g = TrafficOracle::random_layered(3, 2, 2, seed).unwrap();
        let paths = g.enumerate_paths(10_000).unwrap();
        for _ in 0..20 {
            let p: f64 = rng.gen();
            let belief = [p, 1.0 - p];
            let (_, got) = g.respond(&belief);
            let best = paths
                .iter()
                .map(|path| {
                    (g.horizon() - belief[0] * g.path_time(path, 0) - belief[1] * g.path_time(path, 1)) / g.horizon()
                })
                .fold(f64::NEG_INFINITY, f64::max);
            assert_abs_diff_eq!(got, best, epsilon = 1e-9);
        }
    }
}

#[test]
fn sat_oracle_matches_enumerated_environment() {
    let cnf = Cnf::random(4, 5, 3, 11).unwrap();
    let (inst, ty) = build_sat_reduction(&cnf).unwrap();
    let oracle = SatOracle::new(inst.clone()).unwrap();
    let env = enumerated_environment(&inst, vec![ty], vec![1.0]).unwrap();
    let m = env.num_actions();
    for k in 0..=10 {
        let p = k as f64 / 10.0;
        let belief = [p, 1.0 - p];
        let best = (0..m)
            .map(|a| belief[0] * env.utility(0)[0][a] + belief[1] * env.utility(0)[1][a])
            .fold(f64::NEG_INFINITY, f64::max);
        assert_abs_diff_eq!(oracle.respond(&belief).1, best, epsilon = 1e-12);
    }
}

#[test]
fn query_count_stays_under_grid_ceiling() {
    for (n, units) in [(2usize, 40u32), (3, 12)] {
        let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
        let utility: Vec<Vec<f64>> = (0..n).map(|_| (0..4).map(|_| rng.gen()).collect()).collect();
        let oracle = MatrixOracle::new(utility).unwrap();
        let types: Vec<BuyerType> = (0..3)
            .map(|k| {
                let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
                let s: f64 = raw.iter().sum();
                BuyerType { id: format!("t{k}"), prior: raw.iter().map(|x| x / s).collect() }
            })
            .collect();
        let opts = ImplicitOptions { delta: Some(1.0 / units as f64), ..ImplicitOptions::default() };
        let (sets, grid) = build_action_sets(&oracle, &types, 0.1, &opts).unwrap();
        let ceiling = types.len() as u128 * SignalGrid::with_delta(n, 1.0 / units as f64).unwrap().num_columns();
        assert_eq!(grid.units, units as u64);
        assert!((sets.queries as u128) <= ceiling, "{} queries > {ceiling}", sets.queries);
        assert!(sets.queries > 0);
        for acts in &sets.per_type {
            assert!(!acts.is_empty() && acts.len() <= 4);
            assert!(acts.iter().all(|a| matches!(a, ActionId::Index(_))));
        }
    }
}

#[test]
fn implicit_sat_matches_closed_form() {
    let cnf = Cnf::parse_dimacs("p cnf 1 2\n1 0\n-1 0\n").unwrap();
    let (inst, ty) = build_sat_reduction(&cnf).unwrap();
    let oracle = SatOracle::new(inst).unwrap();
    let opts = ImplicitOptions { delta: Some(0.01), ..ImplicitOptions::default() };
    let eps: f64 = 0.04;
    let sol = solve_implicit(&oracle, &[ty], &[1.0], eps, &opts).unwrap();
    // (m - k + 1) / (2m + 4) with m = 2, k = 1.
    let opt = 0.25;
    assert!(sol.revenue <= opt + 1e-7);
    assert!(sol.revenue >= opt - (2.0 * eps.sqrt() + 5.0 * eps));
    assert!(sol.audit.max_ic_violation <= 1e-9 && sol.audit.max_ir_violation <= 1e-9);
}

#[test]
fn analytic_corpus_is_reproduced() {
    for inst in analytic_corpus().unwrap() {
        let sol = solve_explicit(&inst.environment).unwrap();
        assert!(
            (sol.revenue - inst.optimum).abs() <= inst.tolerance,
            "{}: {} vs {}",
            inst.name,
            sol.revenue,
            inst.optimum
        );
    }
}

#[test]
fn grid_bracket_contains_explicit_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..6 {
        let k = rng.gen_range(1..=2);
        let m = rng.gen_range(2..=3);
        let u: Vec<Vec<f64>> = (0..2).map(|_| (0..m).map(|_| rng.gen()).collect()).collect();
        let priors = (0..k)
            .map(|_| {
                let p = rng.gen_range(0.1..0.9);
                vec![p, 1.0 - p]
            })
            .collect();
        let env = Environment::simple(u, priors, vec![1.0 / k as f64; k]).unwrap();
        let opt = solve_explicit(&env).unwrap().revenue;
        let b = brute_force_menu_search(&env, 0.1).unwrap();
        assert!(b.lower <= opt + 1e-9, "lower {} > optimum {opt}", b.lower);
        assert!(opt <= b.upper + 1e-9, "optimum {opt} > upper {}", b.upper);
    }
}
