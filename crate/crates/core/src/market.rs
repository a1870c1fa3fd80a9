//! Buyer-side semantics: posteriors, best responses, experiment values and
//! menu choice.
//!
//! Everything here is generic over [`BuyerModel`], which only needs to know
//! the priors and how much a type can earn from an (unnormalized) belief.
//! [`Environment`] implements it with explicit utility matrices; the oracle
//! markets in [`crate::oracle`] implement it through best-response queries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for probability vectors and row sums on input.
pub const PROB_TOL: f64 = 1e-9;

/// Two net utilities closer than this are treated as a tie.
pub const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuyerType {
    pub id: String,
    pub prior: Vec<f64>,
}

/// An explicit single-agent instance.
///
/// `utilities` holds either one states-by-actions matrix shared by all types
/// or one matrix per type.
#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    pub states: Vec<String>,
    pub actions: Vec<String>,
    utilities: Vec<Vec<Vec<f64>>>,
    pub types: Vec<BuyerType>,
    pub type_probs: Vec<f64>,
}

/// What a menu needs to know about the buyers.
pub trait BuyerModel {
    fn num_states(&self) -> usize;
    fn num_types(&self) -> usize;
    fn prior(&self, ty: usize) -> &[f64];
    fn type_prob(&self, ty: usize) -> f64;
    /// `max_a sum_w weights[w] * u(w, a)` for nonnegative weights; 0 for the
    /// zero vector.
    fn best_payoff(&self, ty: usize, weights: &[f64]) -> f64;

    fn base_utility(&self, ty: usize) -> f64 {
        self.best_payoff(ty, self.prior(ty))
    }
}

pub fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.is_empty() {
        return Err(Error::invalid(format!("{what} is empty")));
    }
    if p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::invalid(format!("{what} has a negative or non-finite entry")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > PROB_TOL {
        return Err(Error::invalid(format!("{what} sums to {s}, not 1")));
    }
    Ok(())
}

fn check_utility(u: &[Vec<f64>], n_states: usize, n_actions: usize) -> Result<()> {
    if u.len() != n_states || u.iter().any(|r| r.len() != n_actions) {
        return Err(Error::invalid(format!("utility matrix must be {n_states}x{n_actions}")));
    }
    if u.iter().flatten().any(|&x| !(0.0..=1.0).contains(&x)) {
        return Err(Error::invalid("utilities must lie in [0, 1]"));
    }
    Ok(())
}

impl Environment {
    pub fn new(
        states: Vec<String>,
        actions: Vec<String>,
        utilities: Vec<Vec<Vec<f64>>>,
        types: Vec<BuyerType>,
        type_probs: Vec<f64>,
    ) -> Result<Self> {
        if states.is_empty() || actions.is_empty() {
            return Err(Error::invalid("need at least one state and one action"));
        }
        if types.is_empty() || type_probs.len() != types.len() {
            return Err(Error::invalid("need one probability per type and at least one type"));
        }
        if utilities.len() != 1 && utilities.len() != types.len() {
            return Err(Error::invalid("give one shared utility matrix or one per type"));
        }
        for u in &utilities {
            check_utility(u, states.len(), actions.len())?;
        }
        for t in &types {
            if t.prior.len() != states.len() {
                return Err(Error::invalid(format!("prior of type `{}` has wrong length", t.id)));
            }
            check_distribution(&t.prior, &format!("prior of type `{}`", t.id))?;
        }
        check_distribution(&type_probs, "type distribution")?;
        Ok(Environment { states, actions, utilities, types, type_probs })
    }

    /// Shared-utility instance with generated state/action/type names.
    pub fn simple(utility: Vec<Vec<f64>>, priors: Vec<Vec<f64>>, probs: Vec<f64>) -> Result<Self> {
        let n_states = utility.len();
        let n_actions = utility.first().map_or(0, Vec::len);
        let types = priors.into_iter().enumerate().map(|(i, prior)| BuyerType { id: format!("t{i}"), prior }).collect();
        Environment::new(
            (0..n_states).map(|i| format!("w{i}")).collect(),
            (0..n_actions).map(|i| format!("a{i}")).collect(),
            vec![utility],
            types,
            probs,
        )
    }

    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn utility(&self, ty: usize) -> &[Vec<f64>] {
        if self.utilities.len() == 1 {
            &self.utilities[0]
        } else {
            &self.utilities[ty]
        }
    }

    pub fn utilities(&self) -> &[Vec<Vec<f64>>] {
        &self.utilities
    }

    pub fn has_shared_utility(&self) -> bool {
        self.utilities.len() == 1
    }

    /// Expected utility of `action` under unnormalized `weights`.
    pub fn payoff(&self, ty: usize, weights: &[f64], action: usize) -> f64 {
        self.utility(ty).iter().zip(weights).map(|(row, w)| w * row[action]).sum()
    }

    /// Best action for unnormalized weights; ties go to the lowest index.
    pub fn best_action_weighted(&self, ty: usize, weights: &[f64]) -> (usize, f64) {
        let mut best = (0, self.payoff(ty, weights, 0));
        for a in 1..self.num_actions() {
            let v = self.payoff(ty, weights, a);
            if v > best.1 {
                best = (a, v);
            }
        }
        best
    }

    /// Same environment with a different type space.
    pub fn with_types(&self, types: Vec<BuyerType>, type_probs: Vec<f64>) -> Result<Self> {
        let utilities = if self.has_shared_utility() {
            self.utilities.clone()
        } else if types.len() == self.types.len() {
            self.utilities.clone()
        } else {
            return Err(Error::invalid("per-type utilities cannot be re-used for a different type count"));
        };
        Environment::new(self.states.clone(), self.actions.clone(), utilities, types, type_probs)
    }
}

impl BuyerModel for Environment {
    fn num_states(&self) -> usize {
        self.states.len()
    }

    fn num_types(&self) -> usize {
        self.types.len()
    }

    fn prior(&self, ty: usize) -> &[f64] {
        &self.types[ty].prior
    }

    fn type_prob(&self, ty: usize) -> f64 {
        self.type_probs[ty]
    }

    fn best_payoff(&self, ty: usize, weights: &[f64]) -> f64 {
        self.best_action_weighted(ty, weights).1
    }
}

/// A states-by-signals matrix; every row sums to `row_mass`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    matrix: Vec<Vec<f64>>,
    #[serde(default = "one")]
    row_mass: f64,
}

fn one() -> f64 {
    1.0
}

impl Experiment {
    pub fn new(matrix: Vec<Vec<f64>>) -> Result<Self> {
        Experiment::with_row_mass(matrix, 1.0)
    }

    pub fn with_row_mass(matrix: Vec<Vec<f64>>, row_mass: f64) -> Result<Self> {
        let exp = Experiment { matrix, row_mass };
        exp.validate()?;
        Ok(exp)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.matrix.first().map_or(0, Vec::len);
        if self.matrix.is_empty() || k == 0 {
            return Err(Error::invalid("experiment needs at least one state and one signal"));
        }
        if self.matrix.iter().any(|r| r.len() != k) {
            return Err(Error::invalid("experiment rows have different lengths"));
        }
        if self.matrix.iter().flatten().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::invalid("experiment entries must be nonnegative"));
        }
        for (w, row) in self.matrix.iter().enumerate() {
            let s: f64 = row.iter().sum();
            if (s - self.row_mass).abs() > PROB_TOL {
                return Err(Error::invalid(format!("row {w} sums to {s}, expected {}", self.row_mass)));
            }
        }
        Ok(())
    }

    /// Clean up LP output: tiny negatives are clamped and rows renormalized.
    pub fn from_lp_rows(mut matrix: Vec<Vec<f64>>) -> Result<Self> {
        for row in &mut matrix {
            for x in row.iter_mut() {
                if *x < -1e-9 {
                    return Err(Error::numerical(format!("experiment entry {x} is negative")));
                }
                *x = x.max(0.0);
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-6 {
                return Err(Error::numerical(format!("experiment row sums to {s}")));
            }
            for x in row.iter_mut() {
                *x /= s;
            }
        }
        Experiment::new(matrix)
    }

    /// The single-signal uninformative experiment.
    pub fn null(n_states: usize) -> Self {
        Experiment { matrix: vec![vec![1.0]; n_states], row_mass: 1.0 }
    }

    /// Identity matrix: the signal reveals the state.
    pub fn fully_informative(n_states: usize) -> Self {
        let matrix = (0..n_states).map(|w| (0..n_states).map(|k| if k == w { 1.0 } else { 0.0 }).collect()).collect();
        Experiment { matrix, row_mass: 1.0 }
    }

    pub fn num_states(&self) -> usize {
        self.matrix.len()
    }

    pub fn num_signals(&self) -> usize {
        self.matrix[0].len()
    }

    pub fn row_mass(&self) -> f64 {
        self.row_mass
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.matrix
    }

    pub fn get(&self, state: usize, signal: usize) -> f64 {
        self.matrix[state][signal]
    }

    pub fn column(&self, signal: usize) -> Vec<f64> {
        self.matrix.iter().map(|r| r[signal]).collect()
    }

    pub fn columns(&self) -> Vec<Vec<f64>> {
        (0..self.num_signals()).map(|k| self.column(k)).collect()
    }

    /// Build from columns; rows must come out with mass `row_mass`.
    pub fn from_columns(columns: &[Vec<f64>], row_mass: f64) -> Result<Self> {
        let n = columns.first().map_or(0, Vec::len);
        let matrix = (0..n).map(|w| columns.iter().map(|c| c[w]).collect()).collect();
        Experiment::with_row_mass(matrix, row_mass)
    }

    /// Columns with no mass in any state removed (one is kept if all are zero).
    pub fn drop_zero_columns(&self) -> Experiment {
        let keep: Vec<usize> = (0..self.num_signals()).filter(|&k| self.matrix.iter().any(|r| r[k] > 0.0)).collect();
        if keep.is_empty() {
            return self.clone();
        }
        let matrix = self.matrix.iter().map(|r| keep.iter().map(|&k| r[k]).collect()).collect();
        Experiment { matrix, row_mass: self.row_mass }
    }

    pub fn permute_states(&self, perm: &[usize]) -> Experiment {
        let matrix = perm.iter().map(|&w| self.matrix[w].clone()).collect();
        Experiment { matrix, row_mass: self.row_mass }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MenuEntry {
    pub experiment: Experiment,
    pub price: f64,
}

/// Posted experiments with prices. The free null experiment is always
/// available and is not stored.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Menu {
    pub entries: Vec<MenuEntry>,
    /// Per type index: the entry it buys, `None` for the null experiment.
    #[serde(default)]
    pub assignment: Option<Vec<Option<usize>>>,
}

impl Menu {
    pub fn new(entries: Vec<MenuEntry>) -> Result<Self> {
        let menu = Menu { entries, assignment: None };
        menu.validate()?;
        Ok(menu)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, e) in self.entries.iter().enumerate() {
            if !(e.price >= 0.0) || !e.price.is_finite() {
                return Err(Error::invalid(format!("entry {i} has invalid price {}", e.price)));
            }
            e.experiment.validate()?;
        }
        if let Some(a) = &self.assignment {
            if let Some(bad) = a.iter().flatten().find(|&&k| k >= self.entries.len()) {
                return Err(Error::invalid(format!("assignment points at missing entry {bad}")));
            }
        }
        Ok(())
    }

    /// Price and experiment of a choice; `None` is the free null experiment.
    pub fn price_of(&self, choice: Option<usize>) -> f64 {
        choice.map_or(0.0, |k| self.entries[k].price)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub max_ic_violation: f64,
    pub max_ir_violation: f64,
    pub revenue: f64,
    /// Per type index: chosen entry (`None` = null) and net utility.
    pub choices: Vec<(Option<usize>, f64)>,
}

/// Bayes update of `prior` on a signal with per-state probabilities `column`.
pub fn posterior(prior: &[f64], column: &[f64]) -> Result<Vec<f64>> {
    let joint: Vec<f64> = prior.iter().zip(column).map(|(p, c)| p * c).collect();
    let mass: f64 = joint.iter().sum();
    if !(mass > 0.0) {
        return Err(Error::ZeroMassSignal);
    }
    Ok(joint.into_iter().map(|x| x / mass).collect())
}

/// Best action for a belief, lowest index on ties.
pub fn best_action(env: &Environment, ty: usize, belief: &[f64]) -> (usize, f64) {
    env.best_action_weighted(ty, belief)
}

pub fn base_utility<M: BuyerModel + ?Sized>(model: &M, ty: usize) -> f64 {
    model.base_utility(ty)
}

/// Joint weights `theta[w] * column[w]`.
pub fn joint(prior: &[f64], column: &[f64]) -> Vec<f64> {
    prior.iter().zip(column).map(|(p, c)| p * c).collect()
}

/// `V_theta(E)`: expected payoff from best-responding to every signal.
pub fn experiment_value<M: BuyerModel + ?Sized>(model: &M, ty: usize, exp: &Experiment) -> f64 {
    let prior = model.prior(ty);
    let mut w = vec![0.0; prior.len()];
    let mut total = 0.0;
    for k in 0..exp.num_signals() {
        for (s, row) in exp.rows().iter().enumerate() {
            w[s] = prior[s] * row[k];
        }
        if w.iter().any(|&x| x > 0.0) {
            total += model.best_payoff(ty, &w);
        }
    }
    total
}

/// The type's favourite option: entry index or `None` for null, and its net
/// utility. Ties go to the lower price, then the lower index; null counts as
/// price 0 ahead of every entry.
pub fn choose_from_menu<M: BuyerModel + ?Sized>(model: &M, ty: usize, menu: &Menu) -> (Option<usize>, f64) {
    let mut best: (Option<usize>, f64, f64) = (None, model.base_utility(ty), 0.0);
    for (k, e) in menu.entries.iter().enumerate() {
        let net = experiment_value(model, ty, &e.experiment) - e.price;
        let better = net > best.1 + TIE_TOL || (net >= best.1 - TIE_TOL && e.price < best.2 - TIE_TOL);
        if better {
            best = (Some(k), net, e.price);
        }
    }
    (best.0, best.1)
}

/// Merge signals that lead `ty` to the same action: column `j` of the result
/// is everything that recommends action `j`.
pub fn make_responsive(env: &Environment, ty: usize, exp: &Experiment) -> Experiment {
    let m = env.num_actions();
    let prior = &env.types[ty].prior;
    let mut matrix = vec![vec![0.0; m]; exp.num_states()];
    for k in 0..exp.num_signals() {
        let col = exp.column(k);
        let w = joint(prior, &col);
        // Signals never sent to this type can go anywhere without changing
        // its value; use the raw column so the result is deterministic.
        let a = if w.iter().any(|&x| x > 0.0) {
            env.best_action_weighted(ty, &w).0
        } else {
            env.best_action_weighted(ty, &col).0
        };
        for (row, c) in matrix.iter_mut().zip(&col) {
            row[a] += c;
        }
    }
    Experiment { matrix, row_mass: exp.row_mass }
}

/// Audit a menu. Without an assignment each type's choice is computed with
/// [`choose_from_menu`]. IC is checked against every posted entry, so an
/// unassigned entry that some type prefers also counts as a violation.
pub fn audit_menu<M: BuyerModel + ?Sized>(model: &M, menu: &Menu) -> Result<AuditReport> {
    menu.validate()?;
    let n = model.num_types();
    let assignment = match &menu.assignment {
        Some(a) if a.len() != n => return Err(Error::invalid("assignment does not cover every type")),
        Some(a) => a.clone(),
        None => (0..n).map(|ty| choose_from_menu(model, ty, menu).0).collect(),
    };
    let mut ic = 0.0f64;
    let mut ir = 0.0f64;
    let mut revenue = 0.0;
    let mut choices = Vec::with_capacity(n);
    for ty in 0..n {
        let values: Vec<f64> =
            menu.entries.iter().map(|e| experiment_value(model, ty, &e.experiment) - e.price).collect();
        let base = model.base_utility(ty);
        let own = match assignment[ty] {
            Some(k) => values[k],
            None => base,
        };
        for &v in &values {
            ic = ic.max(v - own);
        }
        // Deviating to the null experiment is the IR constraint.
        ir = ir.max(base - own);
        revenue += model.type_prob(ty) * menu.price_of(assignment[ty]);
        choices.push((assignment[ty], own));
    }
    Ok(AuditReport { max_ic_violation: ic.max(0.0), max_ir_violation: ir.max(0.0), revenue, choices })
}

/// Total variation distance, half the L1 distance.
pub fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matching(priors: Vec<Vec<f64>>) -> Environment {
        let n = priors.len();
        Environment::simple(vec![vec![1.0, 0.0], vec![0.0, 1.0]], priors, vec![1.0 / n as f64; n]).unwrap()
    }

    fn example1() -> Experiment {
        Experiment::new(vec![vec![0.7, 0.3], vec![0.3, 0.7]]).unwrap()
    }

    #[test]
    fn posterior_examples() {
        assert_eq!(posterior(&[0.5, 0.5], &[0.7, 0.3]).unwrap(), vec![0.7, 0.3]);
        assert_eq!(posterior(&[1.0, 0.0], &[0.7, 0.3]).unwrap(), vec![1.0, 0.0]);
        let p = posterior(&[0.2, 0.8], &[0.7, 0.3]).unwrap();
        assert!((p[0] - 0.14 / 0.38).abs() < 1e-15);
        assert!((p[1] - 0.24 / 0.38).abs() < 1e-15);
        assert_eq!(posterior(&[1.0, 0.0], &[0.0, 1.0]), Err(Error::ZeroMassSignal));
    }

    #[test]
    fn best_action_examples() {
        let env = matching(vec![vec![0.5, 0.5]]);
        assert_eq!(best_action(&env, 0, &[0.5, 0.5]), (0, 0.5));
        assert_eq!(best_action(&env, 0, &[0.2, 0.8]), (1, 0.8));
        assert_eq!(best_action(&env, 0, &[0.7, 0.3]), (0, 0.7));
    }

    #[test]
    fn base_utility_examples() {
        let env = matching(vec![vec![0.5, 0.5], vec![0.9, 0.1]]);
        assert_eq!(base_utility(&env, 0), 0.5);
        assert_eq!(base_utility(&env, 1), 0.9);
    }

    #[test]
    fn example_one_values() {
        let env = matching(vec![vec![0.2, 0.8], vec![0.5, 0.5]]);
        assert!((experiment_value(&env, 0, &example1()) - 0.8).abs() < 1e-12);
        assert!((experiment_value(&env, 1, &example1()) - 0.7).abs() < 1e-12);
        let full = Experiment::fully_informative(2);
        assert!((experiment_value(&env, 0, &full) - 1.0).abs() < 1e-15);
        assert_eq!(experiment_value(&env, 0, &Experiment::null(2)), base_utility(&env, 0));
    }

    #[test]
    fn menu_choice() {
        let env = matching(vec![vec![0.5, 0.5]]);
        let full = |price| Menu::new(vec![MenuEntry { experiment: Experiment::fully_informative(2), price }]).unwrap();
        let (c, net) = choose_from_menu(&env, 0, &full(0.4));
        assert_eq!(c, Some(0));
        assert!((net - 0.6).abs() < 1e-12);
        assert_eq!(choose_from_menu(&env, 0, &full(0.6)), (None, 0.5));
        assert_eq!(choose_from_menu(&env, 0, &Menu::default()), (None, 0.5));
        // Indifferent between buying at 0.5 and not buying: take the free option.
        assert_eq!(choose_from_menu(&env, 0, &full(0.5)).0, None);
    }

    #[test]
    fn responsive_merges_same_action() {
        let env = matching(vec![vec![0.5, 0.5]]);
        let e = Experiment::new(vec![vec![0.5, 0.5], vec![0.2, 0.8]]).unwrap();
        let r = make_responsive(&env, 0, &e);
        assert_eq!(r.num_signals(), 2);
        assert!((experiment_value(&env, 0, &r) - experiment_value(&env, 0, &e)).abs() < 1e-12);

        // Two signals that both keep the buyer on action 0 collapse into column 0.
        let env2 = matching(vec![vec![0.9, 0.1]]);
        let e = Experiment::new(vec![vec![0.2, 0.8], vec![0.2, 0.8]]).unwrap();
        let r = make_responsive(&env2, 0, &e);
        assert_eq!(r.rows(), &[vec![1.0, 0.0], vec![1.0, 0.0]]);
    }

    #[test]
    fn responsive_collapses_uninformative_type() {
        // Action 2 is best in every state for this type.
        let u = vec![vec![0.0, 0.1, 1.0], vec![0.2, 0.0, 0.9], vec![0.1, 0.3, 0.8]];
        let env = Environment::simple(u, vec![vec![0.2, 0.3, 0.5]], vec![1.0]).unwrap();
        let r = make_responsive(&env, 0, &Experiment::fully_informative(3));
        assert_eq!(r.rows(), &[vec![0.0, 0.0, 1.0], vec![0.0, 0.0, 1.0], vec![0.0, 0.0, 1.0]]);
    }

    #[test]
    fn audit_examples() {
        let env = matching(vec![vec![0.5, 0.5]]);
        let u = base_utility(&env, 0);
        let mut menu =
            Menu::new(vec![MenuEntry { experiment: Experiment::fully_informative(2), price: 1.0 - u }]).unwrap();
        menu.assignment = Some(vec![Some(0)]);
        let r = audit_menu(&env, &menu).unwrap();
        assert_eq!((r.max_ic_violation, r.max_ir_violation), (0.0, 0.0));
        assert!((r.revenue - 0.5).abs() < 1e-15);

        let null = Menu { entries: vec![], assignment: Some(vec![None]) };
        let r = audit_menu(&env, &null).unwrap();
        assert_eq!((r.max_ic_violation, r.max_ir_violation, r.revenue), (0.0, 0.0, 0.0));

        menu.entries[0].price = 1.0 - u + 0.1;
        let r = audit_menu(&env, &menu).unwrap();
        assert!((r.max_ir_violation - 0.1).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_environment() {
        assert!(Environment::simple(vec![vec![1.5]], vec![vec![1.0]], vec![1.0]).is_err());
        assert!(Environment::simple(vec![vec![1.0]], vec![vec![0.5]], vec![1.0]).is_err());
        assert!(Environment::simple(vec![vec![1.0]], vec![vec![1.0]], vec![0.7]).is_err());
        assert!(Experiment::new(vec![vec![0.5, 0.4]]).is_err());
    }
}
