//! Verification oracles: known closed forms and a grid brute force that
//! never touches an LP.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::market::{audit_menu, experiment_value, BuyerModel, Environment, Experiment, Menu, MenuEntry};
use crate::oracle::{build_sat_reduction, enumerated_environment, Cnf};
use crate::Error;

/// Largest number of menus [`brute_force_menu_search`] will price.
pub const BRUTE_FORCE_MAX_COMBINATIONS: u128 = 20_000_000;

/// Value of the noisy two-signal experiment `[[0.7, 0.3], [0.3, 0.7]]` on
/// the matching instance, to a type with prior `(θ, 1-θ)`.
pub fn example1_value(theta: f64) -> f64 {
    if theta <= 0.3 {
        1.0 - theta
    } else if theta <= 0.7 {
        0.7
    } else {
        theta
    }
}

/// Matching actions on two states, one type with prior `(θ, 1-θ)`.
pub fn example1_environment(theta: f64) -> Result<Environment> {
    Environment::simple(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![vec![theta, 1.0 - theta]], vec![1.0])
}

/// The noisy two-signal experiment `[[0.7, 0.3], [0.3, 0.7]]`.
pub fn example1_experiment() -> Experiment {
    Experiment::new(vec![vec![0.7, 0.3], vec![0.3, 0.7]]).expect("valid experiment")
}

/// Optimal revenue of the single-type instance built from `cnf`:
/// `(m - k + 1) / (2m + 4)` with `k` the most clauses any assignment
/// satisfies.
pub fn sat_reduction_optimum(cnf: &Cnf) -> Result<f64> {
    if cnf.n_vars > 20 {
        return Err(Error::TooLarge(format!("{} variables, at most 20 supported", cnf.n_vars)));
    }
    let m = cnf.clauses.len() as f64;
    let k = cnf.max_satisfied()? as f64;
    Ok((m - k + 1.0) / (2.0 * m + 4.0))
}

/// An instance with a known optimal revenue.
#[derive(Debug, Clone)]
pub struct AnalyticInstance {
    pub name: String,
    pub environment: Environment,
    pub optimum: f64,
    pub tolerance: f64,
    pub note: String,
}

/// A single type buys the fully informative experiment at `V(E*) - u`.
fn single_type(name: String, env: Environment, note: &str) -> AnalyticInstance {
    let full = experiment_value(&env, 0, &Experiment::fully_informative(env.num_states()));
    let optimum = full - env.base_utility(0);
    AnalyticInstance { name, environment: env, optimum, tolerance: 1e-6, note: note.into() }
}

/// Known-answer instances.
pub fn analytic_corpus() -> Result<Vec<AnalyticInstance>> {
    let mut out = Vec::new();
    for k in 1..10 {
        let p = k as f64 / 10.0;
        let env = Environment::simple(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![vec![p, 1.0 - p]], vec![1.0])?;
        let mut inst = single_type(format!("matching-{p:.1}"), env, "single type, 1 - max(p, 1-p)");
        inst.optimum = 1.0 - p.max(1.0 - p);
        out.push(inst);
    }
    for theta in [0.2, 0.5, 0.8] {
        out.push(single_type(
            format!("example1-{theta}"),
            example1_environment(theta)?,
            "single type, full information",
        ));
    }
    let formulas = [
        ("contradiction", "p cnf 1 2\n1 0\n-1 0\n"),
        ("satisfiable", "p cnf 3 3\n1 2 0\n-1 3 0\n-2 -3 0\n"),
        ("unsat-pairs", "p cnf 2 4\n1 2 0\n1 -2 0\n-1 2 0\n-1 -2 0\n"),
    ];
    for (name, text) in formulas {
        let cnf = Cnf::parse_dimacs(text)?;
        let (instance, ty) = build_sat_reduction(&cnf)?;
        let env = enumerated_environment(&instance, vec![ty], vec![1.0])?;
        out.push(AnalyticInstance {
            name: format!("sat-{name}"),
            environment: env,
            optimum: sat_reduction_optimum(&cnf)?,
            tolerance: 1e-6,
            note: "(m - k + 1) / (2m + 4)".into(),
        });
    }
    Ok(out)
}

/// Result of [`brute_force_menu_search`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bracket {
    /// Revenue of the best grid menu; it audits clean.
    pub lower: f64,
    /// `Σ F(θ) (V_θ(E*) - u(θ))`, what full surplus extraction would give.
    pub upper: f64,
    pub menu: Menu,
}

/// All ways to split `units` into `parts` nonnegative integers.
fn compositions(units: usize, parts: usize) -> Vec<Vec<usize>> {
    if parts == 1 {
        return vec![vec![units]];
    }
    let mut out = Vec::new();
    for first in 0..=units {
        for mut rest in compositions(units - first, parts - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

/// Best menu over experiments whose entries lie on a grid of `grid_step`,
/// priced optimally for every assignment of experiments to types.
///
/// Covers two states, at most three types and three actions.
pub fn brute_force_menu_search(env: &Environment, grid_step: f64) -> Result<Bracket> {
    let (n, m, k) = (env.num_states(), env.num_actions(), env.num_types());
    if n != 2 || m > 3 || k > 3 {
        return Err(Error::TooLarge("grid search covers 2 states, <= 3 actions, <= 3 types".into()));
    }
    if !(grid_step >= 0.05 - 1e-12) || grid_step > 1.0 {
        return Err(Error::TooLarge(format!("grid step {grid_step} is below 0.05")));
    }
    let units = (1.0 / grid_step).round();
    if (units * grid_step - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("1/grid step must be an integer, got {}", 1.0 / grid_step)));
    }
    let units = units as usize;
    let rows = compositions(units, m);

    // Candidates keyed by their value to every type; one experiment per key.
    let mut by_values: HashMap<Vec<i64>, (Vec<f64>, Experiment)> = HashMap::new();
    for r0 in &rows {
        for r1 in &rows {
            let matrix = [r0, r1].iter().map(|r| r.iter().map(|&u| u as f64 / units as f64).collect()).collect();
            let e = Experiment::new(matrix)?;
            let values: Vec<f64> = (0..k).map(|t| experiment_value(env, t, &e)).collect();
            let key = values.iter().map(|v| (v * 1e12).round() as i64).collect();
            by_values.entry(key).or_insert((values, e));
        }
    }
    let mut pool: Vec<(Vec<f64>, Experiment)> = by_values.into_values().collect();
    pool.sort_by(|a, b| {
        a.0.iter().zip(&b.0).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
    });
    let base: Vec<f64> = (0..k).map(|t| env.base_utility(t)).collect();

    // Per type, drop experiments another one beats: at least as valuable to
    // the type and no more valuable to anyone else. `None` is the null option.
    let mut candidates: Vec<Vec<Option<usize>>> = Vec::with_capacity(k);
    for t in 0..k {
        let mut keep: Vec<Option<usize>> = vec![None];
        'next: for (idx, (v, _)) in pool.iter().enumerate() {
            if v[t] <= base[t] + 1e-12 {
                continue;
            }
            for (jdx, (w, _)) in pool.iter().enumerate() {
                if jdx == idx {
                    continue;
                }
                let beats = w[t] >= v[t] && (0..k).all(|s| s == t || w[s] <= v[s]);
                let strictly = w[t] > v[t] || (0..k).any(|s| s != t && w[s] < v[s]);
                if beats && (strictly || jdx < idx) {
                    continue 'next;
                }
            }
            keep.push(Some(idx));
        }
        candidates.push(keep);
    }
    let combos: u128 = candidates.iter().map(|c| c.len() as u128).product();
    if combos > BRUTE_FORCE_MAX_COMBINATIONS {
        return Err(Error::TooLarge(format!("{combos} menus to price, cap is {BRUTE_FORCE_MAX_COMBINATIONS}")));
    }
    log::debug!("grid search: {} distinct experiments, {combos} menus", pool.len());

    let value = |t: usize, choice: Option<usize>| choice.map_or(base[t], |i| pool[i].0[t]);
    let mut best: (f64, Vec<Option<usize>>, Vec<f64>) = (0.0, vec![None; k], vec![0.0; k]);
    let mut pick = vec![0usize; k];
    loop {
        let choice: Vec<Option<usize>> = (0..k).map(|t| candidates[t][pick[t]]).collect();
        if let Some(prices) = max_prices(k, &choice, &value) {
            let rev: f64 = (0..k).map(|t| env.type_probs[t] * prices[t]).sum();
            if rev > best.0 + 1e-12 {
                best = (rev, choice, prices);
            }
        }
        // Odometer over the candidate lists.
        let mut d = 0;
        while d < k {
            pick[d] += 1;
            if pick[d] < candidates[d].len() {
                break;
            }
            pick[d] = 0;
            d += 1;
        }
        if d == k {
            break;
        }
    }

    let mut entries = Vec::new();
    let mut slot: HashMap<usize, usize> = HashMap::new();
    let mut assignment = Vec::with_capacity(k);
    for t in 0..k {
        assignment.push(best.1[t].map(|i| {
            *slot.entry(i).or_insert_with(|| {
                entries.push(MenuEntry { experiment: pool[i].1.clone(), price: best.2[t] });
                entries.len() - 1
            })
        }));
    }
    let menu = Menu { entries, assignment: Some(assignment) };
    let report = audit_menu(env, &menu)?;
    let full = Experiment::fully_informative(n);
    let upper = (0..k).map(|t| env.type_probs[t] * (experiment_value(env, t, &full) - base[t])).sum();
    Ok(Bracket { lower: report.revenue, upper, menu })
}

/// Largest prices making `choice` IC and IR, from shortest paths in the
/// difference-constraint graph `t_a - t_b <= V_a(E_a) - V_a(E_b)`. Node `k`
/// is the free null option. `None` if some price would be negative, or if
/// two types share an experiment at different prices.
fn max_prices(k: usize, choice: &[Option<usize>], value: &dyn Fn(usize, Option<usize>) -> f64) -> Option<Vec<f64>> {
    // dist[k] = 0 is the null option's price.
    let mut dist = vec![f64::INFINITY; k + 1];
    dist[k] = 0.0;
    let weight = |a: usize, b: usize| -> f64 {
        // Edge b -> a: t_a <= t_b + V_a(E_a) - V_a(E_b).
        let from = if b == k { None } else { choice[b] };
        value(a, choice[a]) - value(a, from)
    };
    for _ in 0..=k {
        let mut changed = false;
        for a in 0..k {
            for b in 0..=k {
                if a == b || dist[b] == f64::INFINITY {
                    continue;
                }
                let cand = dist[b] + weight(a, b);
                if cand < dist[a] - 1e-15 {
                    dist[a] = cand;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let prices: Vec<f64> = dist[..k].to_vec();
    if prices.iter().any(|&t| t < -1e-12) {
        return None;
    }
    let mut prices: Vec<f64> = prices.into_iter().map(|t| t.max(0.0)).collect();
    for a in 0..k {
        if choice[a].is_none() {
            prices[a] = 0.0;
        }
        for b in 0..a {
            if choice[a].is_some() && choice[a] == choice[b] && (prices[a] - prices[b]).abs() > 1e-12 {
                return None;
            }
        }
    }
    Some(prices)
}
