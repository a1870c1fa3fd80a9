//! End-to-end acceptance run: one PASS/FAIL line per criterion.
//!
//! Expected values come from closed forms and brute force written here,
//! not from the library.

use std::time::{Duration, Instant};

use infomenu_core::lp::DenseSimplex;
use infomenu_core::multi::{solve_reduced_lp_with, Buyer, MultiOptions};
use infomenu_core::oracle::{build_sat_reduction, enumerated_environment};
use infomenu_core::{
    brute_force_multi, eps_ic_to_ic, merge_signals, round_experiment, run_mechanism, solve_explicit, solve_implicit,
    solve_reduced_lp, vpm_allocate, BuyerType, Environment, Experiment, ImplicitOptions, MatrixOracle, Menu,
    MultiEnvironment,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EXAMPLE1_TOL: f64 = 1e-12;
const CLOSED_FORM_TOL: f64 = 1e-6;
const SAT_TOL: f64 = 1e-6;
const SANDWICH_SLACK: f64 = 1e-7;
const CLEAN_TOL: f64 = 1e-9;
const MULTI_TOL: f64 = 1e-6;
const DECOMPOSITION_TOL: f64 = 1e-6;
const MC_DRAWS: u64 = 1_000_000;
const MC_SIGMAS: f64 = 3.0;
const PROPERTY_TOL: f64 = 1e-12;

/// Grid spacing used for the implicit solver in the sandwich check.
const SANDWICH_DELTA: f64 = 1.0 / 400.0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

/// `Σ_k max_a Σ_ω θ_ω π_{ω,k} u_{ω,a}`.
fn value(prior: &[f64], utility: &[Vec<f64>], e: &Experiment) -> f64 {
    let m = utility[0].len();
    (0..e.num_signals())
        .map(|k| {
            (0..m)
                .map(|a| (0..prior.len()).map(|w| prior[w] * e.get(w, k) * utility[w][a]).sum::<f64>())
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .sum()
}

fn base(prior: &[f64], utility: &[Vec<f64>]) -> f64 {
    let m = utility[0].len();
    (0..m).map(|a| (0..prior.len()).map(|w| prior[w] * utility[w][a]).sum::<f64>()).fold(f64::NEG_INFINITY, f64::max)
}

fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / s).collect()
}

fn random_utility(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..m).map(|_| rng.gen_range(0.0..1.0)).collect()).collect()
}

fn random_env(rng: &mut ChaCha8Rng, n: usize, types: usize, m: usize) -> Environment {
    let u = random_utility(rng, n, m);
    let priors = (0..types).map(|_| random_simplex(rng, n)).collect();
    let probs = random_simplex(rng, types);
    Environment::simple(u, priors, probs).expect("valid random environment")
}

fn example1() -> Outcome {
    let u = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
    let e = Experiment::new(vec![vec![0.7, 0.3], vec![0.3, 0.7]]).unwrap();
    let mut worst = 0.0f64;
    for step in 0..=100 {
        let theta = step as f64 / 100.0;
        let expected = if theta <= 0.3 {
            1.0 - theta
        } else if theta <= 0.7 {
            0.7
        } else {
            theta
        };
        let env = Environment::simple(u.clone(), vec![vec![theta, 1.0 - theta]], vec![1.0]).unwrap();
        let got = infomenu_core::experiment_value(&env, 0, &e);
        worst = worst.max((got - expected).abs());
    }
    check(worst <= EXAMPLE1_TOL, format!("max error {worst:.2e} over 101 priors"))
}

fn single_type_closed_form() -> Outcome {
    let mut worst = 0.0f64;
    for k in 1..=9 {
        let p = k as f64 / 10.0;
        let env = Environment::simple(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![vec![p, 1.0 - p]], vec![1.0]).unwrap();
        let rev = match solve_explicit(&env) {
            Ok(s) => s.revenue,
            Err(e) => return check(false, format!("p={p}: {e}")),
        };
        worst = worst.max((rev - (1.0 - p.max(1.0 - p))).abs());
    }
    check(worst <= CLOSED_FORM_TOL, format!("max error {worst:.2e} over p = 0.1..0.9"))
}

/// Most clauses any assignment satisfies, by exhaustion.
fn max_satisfied(n_vars: usize, clauses: &[Vec<i32>]) -> usize {
    (0u64..1 << n_vars)
        .map(|a| {
            clauses
                .iter()
                .filter(|c| {
                    c.iter().any(|&lit| {
                        let bit = (a >> (lit.unsigned_abs() as usize - 1)) & 1 == 1;
                        bit == (lit > 0)
                    })
                })
                .count()
        })
        .max()
        .unwrap_or(0)
}

fn sat_formula() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for trial in 0..20 {
        let n = rng.gen_range(1..=10);
        let m = rng.gen_range(1..=8);
        let cnf = infomenu_core::oracle::Cnf::random(n, m, n.min(3), 100 + trial).unwrap();
        let k = max_satisfied(cnf.n_vars, &cnf.clauses) as f64;
        let m = cnf.clauses.len() as f64;
        let expected = (m - k + 1.0) / (2.0 * m + 4.0);
        let rev = build_sat_reduction(&cnf)
            .and_then(|(inst, ty)| enumerated_environment(&inst, vec![ty], vec![1.0]))
            .and_then(|env| solve_explicit(&env));
        match rev {
            Ok(s) => worst = worst.max((s.revenue - expected).abs()),
            Err(e) => return check(false, format!("trial {trial}: {e}")),
        }
    }
    check(worst <= SAT_TOL, format!("max error {worst:.2e} over 20 formulas"))
}

fn fptas_sandwich() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let opts = ImplicitOptions { delta: Some(SANDWICH_DELTA), ..ImplicitOptions::default() };
    let mut worst_above = f64::NEG_INFINITY;
    let mut worst_gap = f64::NEG_INFINITY;
    let mut pass = true;
    for trial in 0..20 {
        let types = rng.gen_range(1..=4);
        let m = rng.gen_range(2..=6);
        let env = random_env(&mut rng, 2, types, m);
        let explicit = match solve_explicit(&env) {
            Ok(s) => s.revenue,
            Err(e) => return check(false, format!("trial {trial}: explicit: {e}")),
        };
        let oracle = MatrixOracle::new(env.utility(0).to_vec()).unwrap();
        for eps in [0.04, 0.01] {
            let implicit = match solve_implicit(&oracle, &env.types, &env.type_probs, eps, &opts) {
                Ok(s) => s.revenue,
                Err(e) => return check(false, format!("trial {trial}, eps {eps}: {e}")),
            };
            let allowance = 2.0 * eps.sqrt() + 5.0 * eps;
            worst_above = worst_above.max(implicit - explicit);
            worst_gap = worst_gap.max(explicit - implicit - allowance);
            pass &= implicit <= explicit + SANDWICH_SLACK && implicit >= explicit - allowance;
        }
    }
    check(pass, format!("max implicit-explicit {worst_above:.2e}, max shortfall beyond allowance {worst_gap:.2e}"))
}

/// Largest IC / IR breach of a menu under its assignment, and its revenue.
fn audit_with_assignment(env: &Environment, menu: &Menu, assignment: &[Option<usize>]) -> (f64, f64) {
    let u = env.utility(0);
    let mut worst = 0.0f64;
    let mut revenue = 0.0;
    for (ty, t) in env.types.iter().enumerate() {
        let b = base(&t.prior, u);
        let net = |k: Option<usize>| match k {
            Some(k) => value(&t.prior, u, &menu.entries[k].experiment) - menu.entries[k].price,
            None => b,
        };
        let own = net(assignment[ty]);
        worst = worst.max(b - own);
        for k in 0..menu.entries.len() {
            worst = worst.max(net(Some(k)) - own);
        }
        revenue += env.type_probs[ty] * assignment[ty].map_or(0.0, |k| menu.entries[k].price);
    }
    (worst, revenue)
}

fn eps_ic_repair() -> Outcome {
    let eps: f64 = 0.04;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_violation = 0.0f64;
    let mut worst_loss = f64::NEG_INFINITY;
    let mut pass = true;
    for trial in 0..50 {
        let n = rng.gen_range(2..=3);
        let types = rng.gen_range(2..=4);
        let m = rng.gen_range(2..=4);
        let env = random_env(&mut rng, n, types, m);
        let mut menu = match solve_explicit(&env) {
            Ok(s) => s.menu,
            Err(e) => return check(false, format!("trial {trial}: {e}")),
        };
        for e in &mut menu.entries {
            e.price = (e.price + rng.gen_range(-eps / 2.0..=eps / 2.0)).max(0.0);
        }
        let assignment = menu.assignment.clone().unwrap();
        let (input_violation, old) = audit_with_assignment(&env, &menu, &assignment);
        if input_violation > eps + PROPERTY_TOL {
            return check(false, format!("trial {trial}: perturbed menu is {input_violation:.3e}-IC, not {eps}-IC"));
        }
        let repaired = match eps_ic_to_ic(&env, &menu, eps) {
            Ok(r) => r,
            Err(e) => return check(false, format!("trial {trial}: {e}")),
        };
        let Some(new_assignment) = repaired.assignment.clone() else {
            return check(false, format!("trial {trial}: repaired menu has no assignment"));
        };
        let (violation, new) = audit_with_assignment(&env, &repaired, &new_assignment);
        let floor = (1.0 - eps.sqrt()) * old - eps.sqrt() - eps;
        worst_violation = worst_violation.max(violation);
        worst_loss = worst_loss.max(floor - new);
        pass &= violation <= CLEAN_TOL && new >= floor - PROPERTY_TOL;
    }
    check(pass, format!("max violation {worst_violation:.2e}, worst revenue below floor {worst_loss:.2e}"))
}

fn random_multi(rng: &mut ChaCha8Rng) -> MultiEnvironment {
    let buyers = (0..2)
        .map(|i| {
            let k = rng.gen_range(1..=2);
            let types = (0..k).map(|t| BuyerType { id: format!("b{i}t{t}"), prior: random_simplex(rng, 2) }).collect();
            Buyer { id: format!("b{i}"), types, type_probs: random_simplex(rng, k), utility: random_utility(rng, 2, 2) }
        })
        .collect();
    MultiEnvironment::new(vec!["s0".into(), "s1".into()], vec!["a0".into(), "a1".into()], buyers).unwrap()
}

fn multi_instances() -> Vec<MultiEnvironment> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    (0..10).map(|_| random_multi(&mut rng)).collect()
}

fn multi_exactness() -> Outcome {
    let mut worst = 0.0f64;
    for (trial, env) in multi_instances().iter().enumerate() {
        let lp = solve_reduced_lp(env);
        let bf = brute_force_multi(env);
        match (lp, bf) {
            (Ok(s), Ok(b)) => worst = worst.max((s.revenue - b).abs()),
            (Err(e), _) | (_, Err(e)) => return check(false, format!("trial {trial}: {e}")),
        }
    }
    check(worst <= MULTI_TOL, format!("max |lp - brute force| {worst:.2e} over 10 instances"))
}

/// Interim allocation of a VPM by enumerating the other buyers' types.
fn interim_by_enumeration(env: &MultiEnvironment, w: &infomenu_core::VpmWeights) -> Vec<Vec<Vec<Vec<f64>>>> {
    let (n, m) = (env.states.len(), env.actions.len());
    let mut out: Vec<Vec<Vec<Vec<f64>>>> =
        env.buyers.iter().map(|b| vec![vec![vec![0.0; m]; n]; b.types.len()]).collect();
    let k0 = env.buyers[0].types.len();
    let k1 = env.buyers[1].types.len();
    for t0 in 0..k0 {
        for t1 in 0..k1 {
            let out_p = vpm_allocate(env, w, &[t0, t1]).unwrap();
            let (Some(i), Some(e)) = (out_p.winner, out_p.experiment) else { continue };
            let (own, other_prob) =
                if i == 0 { (t0, env.buyers[1].type_probs[t1]) } else { (t1, env.buyers[0].type_probs[t0]) };
            for s in 0..n {
                for j in 0..m {
                    out[i][own][s][j] += other_prob * e.get(s, j);
                }
            }
        }
    }
    out
}

fn decomposition() -> Outcome {
    let mut worst = 0.0f64;
    let mut pass = true;
    let mut max_len = 0;
    for (trial, env) in multi_instances().iter().enumerate() {
        let sol = match solve_reduced_lp_with(env, &MultiOptions::default(), &DenseSimplex::default()) {
            Ok(s) => s,
            Err(e) => return check(false, format!("trial {trial}: {e}")),
        };
        let n = env.states.len();
        let m = env.actions.len();
        let total_types: usize = env.buyers.iter().map(|b| b.types.len()).sum();
        let bound = m * n * total_types + 1;
        let mix = &sol.blueprint.mixture;
        max_len = max_len.max(mix.len());
        pass &= mix.len() <= bound;
        let mut acc: Vec<Vec<Vec<Vec<f64>>>> =
            env.buyers.iter().map(|b| vec![vec![vec![0.0; m]; n]; b.types.len()]).collect();
        for (lambda, w) in mix {
            let part = interim_by_enumeration(env, w);
            for (a, p) in acc.iter_mut().flatten().flatten().flatten().zip(part.iter().flatten().flatten().flatten()) {
                *a += lambda * p;
            }
        }
        for (a, p) in
            acc.iter().flatten().flatten().flatten().zip(sol.reduced_form.pi_hat.iter().flatten().flatten().flatten())
        {
            worst = worst.max((a - p).abs());
        }
    }
    pass &= worst <= DECOMPOSITION_TOL;
    check(pass, format!("max |Σλ·rvpm - π̂| {worst:.2e}, largest mixture {max_len}"))
}

fn monte_carlo() -> Outcome {
    // The instance with the richest mixture makes the sampling check bite.
    let mut best: Option<(MultiEnvironment, infomenu_core::multi::MultiSolution)> = None;
    for env in multi_instances() {
        let Ok(sol) = solve_reduced_lp(&env) else { continue };
        if best.as_ref().map_or(true, |(_, b)| sol.blueprint.mixture.len() > b.blueprint.mixture.len()) {
            best = Some((env, sol));
        }
    }
    let Some((env, sol)) = best else { return check(false, "no instance solved") };
    let bp = &sol.blueprint;
    let (n, m) = (env.states.len(), env.actions.len());
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut seen: Vec<Vec<u64>> = env.buyers.iter().map(|b| vec![0; b.types.len()]).collect();
    let mut hits: Vec<Vec<Vec<Vec<u64>>>> =
        env.buyers.iter().map(|b| vec![vec![vec![0; m]; n]; b.types.len()]).collect();
    let mut payments_ok = true;
    let mut components = std::collections::BTreeSet::new();
    for draw in 0..MC_DRAWS {
        let profile: Vec<usize> = env
            .buyers
            .iter()
            .map(|b| {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for (t, p) in b.type_probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return t;
                    }
                }
                b.types.len() - 1
            })
            .collect();
        let out = match run_mechanism(bp, &env, &profile, draw) {
            Ok(o) => o,
            Err(e) => return check(false, format!("draw {draw}: {e}")),
        };
        components.insert(out.component);
        for (i, &t) in profile.iter().enumerate() {
            seen[i][t] += 1;
            payments_ok &= out.payments[i] == bp.interim_prices[i][t];
        }
        if let Some(i) = out.winner {
            for s in 0..n {
                if let Some(j) = out.signal(s) {
                    hits[i][profile[i]][s][j] += 1;
                }
            }
        }
    }
    let mut worst_z = 0.0f64;
    let mut within = true;
    for (i, b) in env.buyers.iter().enumerate() {
        for t in 0..b.types.len() {
            let total = seen[i][t] as f64;
            for s in 0..n {
                for j in 0..m {
                    let p = sol.reduced_form.pi_hat[i][t][s][j].clamp(0.0, 1.0);
                    let freq = hits[i][t][s][j] as f64 / total;
                    let sigma = (p * (1.0 - p) / total).sqrt();
                    let dev = (freq - p).abs();
                    within &= dev <= MC_SIGMAS * sigma + CLEAN_TOL;
                    if sigma > 0.0 {
                        worst_z = worst_z.max(dev / sigma);
                    }
                }
            }
        }
    }
    check(
        within && payments_ok,
        format!(
            "max deviation {worst_z:.2}σ, {} of {} components drawn, payments {}",
            components.len(),
            bp.mixture.len(),
            if payments_ok { "match interim prices" } else { "DIFFER" }
        ),
    )
}

fn merge_and_round_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut pass = true;
    let mut worst_owner = f64::NEG_INFINITY;
    let mut worst_other = f64::NEG_INFINITY;
    let mut worst_round = f64::NEG_INFINITY;
    for trial in 0..200 {
        let n = rng.gen_range(2..=3);
        let m = rng.gen_range(2..=4);
        let signals = rng.gen_range(2..=8);
        let eps = [0.05, 0.1, 0.2, 0.4][rng.gen_range(0..4)];
        let delta = [0.1, 0.05, 0.02][rng.gen_range(0..3)];
        let u = random_utility(&mut rng, n, m);
        let owner = random_simplex(&mut rng, n);
        let other = random_simplex(&mut rng, n);
        // Near-duplicate columns so that merging actually happens.
        let centers: Vec<Vec<f64>> = (0..rng.gen_range(1..=3)).map(|_| random_simplex(&mut rng, n)).collect();
        let mut columns: Vec<Vec<f64>> = (0..signals)
            .map(|_| {
                let c = &centers[rng.gen_range(0..centers.len())];
                let scale = rng.gen_range(0.1..1.0);
                c.iter().map(|x| scale * (x + rng.gen_range(0.0..0.03))).collect()
            })
            .collect();
        // Rows must sum to one.
        for w in 0..n {
            let s: f64 = columns.iter().map(|c| c[w]).sum();
            columns.iter_mut().for_each(|c| c[w] /= s);
        }
        let matrix = (0..n).map(|w| columns.iter().map(|c| c[w]).collect()).collect();
        let e = Experiment::new(matrix).unwrap();
        let (merged, rounded) = match (merge_signals(&e, eps), round_experiment(&e, delta)) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(err), _) | (_, Err(err)) => return check(false, format!("trial {trial}: {err}")),
        };
        let owner_drop = value(&owner, &u, &e) - value(&owner, &u, &merged);
        worst_owner = worst_owner.max(owner_drop - 2.0 * eps);
        pass &= owner_drop <= 2.0 * eps + PROPERTY_TOL;
        for prior in [&owner, &other] {
            let rise = value(prior, &u, &merged) - value(prior, &u, &e);
            worst_other = worst_other.max(rise);
            pass &= rise <= PROPERTY_TOL;
            let change = (value(prior, &u, &rounded) - value(prior, &u, &e)).abs();
            let bound = delta * signals as f64;
            worst_round = worst_round.max(change - bound);
            pass &= change <= bound + PROPERTY_TOL;
        }
    }
    check(
        pass,
        format!(
            "owner drop beyond 2ε {worst_owner:.2e}, max value rise {worst_other:.2e}, rounding beyond δ|S| {worst_round:.2e}"
        ),
    )
}

fn main() {
    let criteria: [(&str, Duration, fn() -> Outcome); 9] = [
        ("noisy experiment value function", Duration::from_secs(1), example1),
        ("single-type closed form", Duration::from_secs(5), single_type_closed_form),
        ("sat reduction optimum", Duration::from_secs(120), sat_formula),
        ("implicit solver sandwich", Duration::from_secs(300), fptas_sandwich),
        ("eps-IC to IC repair", Duration::from_secs(30), eps_ic_repair),
        ("multi-agent exactness", Duration::from_secs(120), multi_exactness),
        ("decomposition consistency", Duration::from_secs(120), decomposition),
        ("mechanism monte carlo", Duration::from_secs(60), monte_carlo),
        ("merge and rounding properties", Duration::from_secs(60), merge_and_round_properties),
    ];
    let mut failed = 0;
    for (k, (name, budget, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let out = run();
        let took = start.elapsed();
        let pass = out.pass && took <= *budget;
        if !pass {
            failed += 1;
        }
        println!(
            "[{}] criterion {} {name}: {} ({:.2}s of {}s)",
            if pass { "PASS" } else { "FAIL" },
            k + 1,
            out.detail,
            took.as_secs_f64(),
            budget.as_secs()
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
