//! Revenue-optimal menu when the utility matrix is given explicitly.
//!
//! The LP searches over responsive menus: type `θ` gets an experiment with
//! one signal per action (signal `i` recommends action `i`) and a price.
//! `z_i(θ, θ')` upper-bounds what `θ` can earn from signal `i` of `θ'`'s
//! experiment, which keeps the IC constraints linear. The IC constraint with
//! `θ' = θ` forces recommendations to be followed.

use log::debug;

use crate::error::Result;
use crate::lp::{self, LinearProgram, LpBackend, LpStatus, Relation, Sense, VarId};
use crate::market::{audit_menu, AuditReport, BuyerModel, Environment, Experiment, Menu, MenuEntry};
use crate::Error;

/// Variable ids of the explicit LP.
#[derive(Debug, Clone)]
pub struct ExplicitLpIndex {
    /// `pi[θ][ω][i]`
    pub pi: Vec<Vec<Vec<VarId>>>,
    /// `t[θ]`
    pub t: Vec<VarId>,
    /// `z[θ][θ'][i]`
    pub z: Vec<Vec<Vec<VarId>>>,
}

#[derive(Debug, Clone)]
pub struct ExplicitSolution {
    /// One entry per type, entry `θ` assigned to type `θ`.
    pub menu: Menu,
    pub revenue: f64,
    pub lp_objective: f64,
    pub audit: AuditReport,
}

pub fn build_explicit_lp(env: &Environment) -> Result<(LinearProgram, ExplicitLpIndex)> {
    let n_types = env.num_types();
    let n_states = env.num_states();
    let m = env.num_actions();
    let mut lp = LinearProgram::new(Sense::Maximize);

    let mut pi = vec![vec![Vec::with_capacity(m); n_states]; n_types];
    let mut t = Vec::with_capacity(n_types);
    let mut z = vec![vec![Vec::with_capacity(m); n_types]; n_types];
    for th in 0..n_types {
        for w in 0..n_states {
            for i in 0..m {
                pi[th][w].push(lp.add_variable(format!("pi_{th}_{w}_{i}"), 0.0, 1.0)?);
            }
        }
        let price = lp.add_variable(format!("t_{th}"), 0.0, f64::INFINITY)?;
        lp.set_objective(price, env.type_prob(th));
        t.push(price);
    }
    for th in 0..n_types {
        for dev in 0..n_types {
            for i in 0..m {
                z[th][dev].push(lp.add_variable(format!("z_{i}_{th}_{dev}"), 0.0, f64::INFINITY)?);
            }
        }
    }

    // Value of following the recommendations of one's own experiment.
    let own_value = |th: usize| -> Vec<(VarId, f64)> {
        let prior = env.prior(th);
        let u = env.utility(th);
        let mut terms = Vec::with_capacity(n_states * m);
        for w in 0..n_states {
            for i in 0..m {
                terms.push((pi[th][w][i], prior[w] * u[w][i]));
            }
        }
        terms
    };

    for th in 0..n_types {
        for dev in 0..n_types {
            let mut terms = own_value(th);
            terms.push((t[th], -1.0));
            terms.extend(z[th][dev].iter().map(|&v| (v, -1.0)));
            terms.push((t[dev], 1.0));
            lp.add_constraint(format!("ic_{th}_{dev}"), terms, Relation::Ge, 0.0)?;
        }
    }
    for th in 0..n_types {
        let prior = env.prior(th);
        let u = env.utility(th);
        for dev in 0..n_types {
            for i in 0..m {
                for j in 0..m {
                    let mut terms: Vec<(VarId, f64)> =
                        (0..n_states).map(|w| (pi[dev][w][i], -prior[w] * u[w][j])).collect();
                    terms.push((z[th][dev][i], 1.0));
                    lp.add_constraint(format!("zb_{th}_{dev}_{i}_{j}"), terms, Relation::Ge, 0.0)?;
                }
            }
        }
    }
    for th in 0..n_types {
        let mut terms = own_value(th);
        terms.push((t[th], -1.0));
        lp.add_constraint(format!("ir_{th}"), terms, Relation::Ge, env.base_utility(th))?;
    }
    for th in 0..n_types {
        for w in 0..n_states {
            let terms = pi[th][w].iter().map(|&v| (v, 1.0)).collect();
            lp.add_constraint(format!("row_{th}_{w}"), terms, Relation::Eq, 1.0)?;
        }
    }
    Ok((lp, ExplicitLpIndex { pi, t, z }))
}

pub fn solve_explicit(env: &Environment) -> Result<ExplicitSolution> {
    solve_explicit_with(env, &lp::DenseSimplex::default())
}

pub fn solve_explicit_with(env: &Environment, backend: &dyn LpBackend) -> Result<ExplicitSolution> {
    let (lp, index) = build_explicit_lp(env)?;
    debug!("explicit LP: {} variables, {} constraints", lp.num_variables(), lp.num_constraints());
    let sol = backend.solve(&lp)?;
    if sol.status != LpStatus::Optimal {
        return Err(Error::numerical(format!("explicit LP returned {:?}", sol.status)));
    }
    let mut entries = Vec::with_capacity(env.num_types());
    for th in 0..env.num_types() {
        let rows = index.pi[th].iter().map(|row| row.iter().map(|&v| sol.value(v)).collect()).collect();
        let experiment = Experiment::from_lp_rows(rows)?;
        let price = sol.value(index.t[th]).max(0.0);
        entries.push(MenuEntry { experiment, price });
    }
    let menu = Menu { entries, assignment: Some((0..env.num_types()).map(Some).collect()) };
    let audit = audit_menu(env, &menu)?;
    Ok(ExplicitSolution { revenue: audit.revenue, lp_objective: sol.objective_value, menu, audit })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{base_utility, best_action, experiment_value, joint};

    fn matching(priors: Vec<Vec<f64>>, probs: Vec<f64>) -> Environment {
        Environment::simple(vec![vec![1.0, 0.0], vec![0.0, 1.0]], priors, probs).unwrap()
    }

    #[test]
    fn constraint_counts() {
        let (lp, _) = build_explicit_lp(&matching(vec![vec![0.5, 0.5]], vec![1.0])).unwrap();
        assert_eq!(lp.num_constraints(), 1 + 4 + 1 + 2);
        let env = matching(vec![vec![0.5, 0.5], vec![0.9, 0.1]], vec![0.5, 0.5]);
        let (lp, idx) = build_explicit_lp(&env).unwrap();
        assert_eq!(lp.num_constraints(), 4 + 16 + 2 + 4);
        let count = |p: &str| lp.constraints().iter().filter(|c| c.name.starts_with(p)).count();
        assert_eq!((count("ic_"), count("zb_"), count("ir_"), count("row_")), (4, 16, 2, 4));
        for v in idx.pi.iter().flatten().flatten() {
            assert_eq!((lp.variables()[v.0].lower, lp.variables()[v.0].upper), (0.0, 1.0));
        }
        for v in idx.t.iter().chain(idx.z.iter().flatten().flatten()) {
            assert_eq!(lp.variables()[v.0].upper, f64::INFINITY);
        }
    }

    #[test]
    fn single_uniform_type_sells_full_information() {
        let env = matching(vec![vec![0.5, 0.5]], vec![1.0]);
        let sol = solve_explicit(&env).unwrap();
        assert!((sol.revenue - 0.5).abs() < 1e-9);
        let e = &sol.menu.entries[0].experiment;
        assert!((experiment_value(&env, 0, e) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn point_mass_type_pays_nothing() {
        let sol = solve_explicit(&matching(vec![vec![1.0, 0.0]], vec![1.0])).unwrap();
        assert!(sol.revenue.abs() < 1e-9);
    }

    #[test]
    fn two_types_audit_clean_and_responsive() {
        let env = matching(vec![vec![0.5, 0.5], vec![0.9, 0.1]], vec![0.5, 0.5]);
        let sol = solve_explicit(&env).unwrap();
        assert!(sol.audit.max_ic_violation <= 1e-6 && sol.audit.max_ir_violation <= 1e-6);
        assert!((sol.revenue - sol.lp_objective).abs() <= 1e-7);
        // Each signal with positive mass recommends its own action.
        for th in 0..2 {
            let e = &sol.menu.entries[th].experiment;
            for i in 0..2 {
                let w = joint(env.prior(th), &e.column(i));
                let mass: f64 = w.iter().sum();
                if mass > 1e-7 {
                    let belief: Vec<f64> = w.iter().map(|x| x / mass).collect();
                    let (a, v) = best_action(&env, th, &belief);
                    assert!(a == i || (v - env.payoff(th, &belief, i)).abs() < 1e-6);
                }
            }
        }
        // Beats selling full information at one posted price.
        let mut best_single = 0.0f64;
        for th in 0..2 {
            let price = 1.0 - base_utility(&env, th);
            let buyers: f64 =
                (0..2).filter(|&s| 1.0 - base_utility(&env, s) >= price - 1e-12).map(|s| env.type_probs[s]).sum();
            best_single = best_single.max(price * buyers);
        }
        assert!(sol.revenue >= best_single - 1e-7);
    }
}
