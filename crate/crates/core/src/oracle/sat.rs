//! IP-SAT: actions are truth assignments, and the payoff in state `ω` is the
//! fraction of clauses of `Φ_ω` the assignment satisfies.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{prune_actions, ActionId, BrOracle, Counter};
use crate::error::{Error, Result};
use crate::market::{BuyerType, Environment};

/// Largest variable count the brute-force best response accepts.
pub const SAT_MAX_VARS: usize = 24;

/// A CNF formula over variables `1..=n_vars`; literals are signed ints.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cnf {
    pub n_vars: usize,
    pub clauses: Vec<Vec<i32>>,
}

impl Cnf {
    pub fn new(n_vars: usize, clauses: Vec<Vec<i32>>) -> Result<Self> {
        for c in &clauses {
            if let Some(&l) = c.iter().find(|&&l| l == 0 || l.unsigned_abs() as usize > n_vars) {
                return Err(Error::invalid(format!("literal {l} out of range for {n_vars} variables")));
            }
        }
        Ok(Cnf { n_vars, clauses })
    }

    /// DIMACS: `c` comment lines, a `p cnf <vars> <clauses>` header, clauses
    /// as 0-terminated literal lists that may span lines, optional `%` end.
    pub fn parse_dimacs(text: &str) -> Result<Self> {
        let mut header: Option<(usize, usize)> = None;
        let mut clauses = Vec::new();
        let mut current = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('c') {
                continue;
            }
            if line.starts_with('%') {
                break;
            }
            if line.starts_with('p') {
                let tok: Vec<&str> = line.split_whitespace().collect();
                if tok.len() != 4 || tok[1] != "cnf" || header.is_some() {
                    return Err(Error::invalid(format!("line {}: bad header `{line}`", ln + 1)));
                }
                let n = tok[2].parse().map_err(|_| Error::invalid("bad variable count"))?;
                let m = tok[3].parse().map_err(|_| Error::invalid("bad clause count"))?;
                header = Some((n, m));
                continue;
            }
            if header.is_none() {
                return Err(Error::invalid("clause before the `p cnf` header"));
            }
            for tok in line.split_whitespace() {
                let lit: i32 =
                    tok.parse().map_err(|_| Error::invalid(format!("line {}: bad literal `{tok}`", ln + 1)))?;
                if lit == 0 {
                    clauses.push(std::mem::take(&mut current));
                } else {
                    current.push(lit);
                }
            }
        }
        if !current.is_empty() {
            clauses.push(current);
        }
        let (n, m) = header.ok_or_else(|| Error::invalid("missing `p cnf` header"))?;
        if clauses.len() != m {
            return Err(Error::invalid(format!("header announces {m} clauses, found {}", clauses.len())));
        }
        Cnf::new(n, clauses)
    }

    pub fn to_dimacs(&self) -> String {
        let mut s = format!("p cnf {} {}\n", self.n_vars, self.clauses.len());
        for c in &self.clauses {
            for l in c {
                let _ = write!(s, "{l} ");
            }
            s.push_str("0\n");
        }
        s
    }

    /// Random k-CNF with distinct variables per clause.
    pub fn random(n_vars: usize, n_clauses: usize, width: usize, seed: u64) -> Result<Self> {
        if n_vars == 0 || width == 0 || width > n_vars {
            return Err(Error::invalid("need 1 <= width <= n_vars"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let clauses = (0..n_clauses)
            .map(|_| {
                let vars = rand::seq::index::sample(&mut rng, n_vars, width);
                vars.iter().map(|v| if rng.gen_bool(0.5) { v as i32 + 1 } else { -(v as i32 + 1) }).collect()
            })
            .collect();
        Cnf::new(n_vars, clauses)
    }

    /// Clause masks in the assignment encoding where `x1` is the most
    /// significant of `n_vars` bits.
    fn masks(&self) -> Vec<(u64, u64)> {
        self.clauses
            .iter()
            .map(|c| {
                let mut pos = 0u64;
                let mut neg = 0u64;
                for &l in c {
                    let bit = 1u64 << (self.n_vars - l.unsigned_abs() as usize);
                    if l > 0 {
                        pos |= bit;
                    } else {
                        neg |= bit;
                    }
                }
                (pos, neg)
            })
            .collect()
    }

    /// Number of clauses satisfied by `assignment` (x1 = MSB).
    pub fn satisfied(&self, assignment: u64) -> usize {
        count_satisfied(&self.masks(), assignment)
    }

    /// `max_a` satisfied clauses, by exhaustion.
    pub fn max_satisfied(&self) -> Result<usize> {
        if self.n_vars > SAT_MAX_VARS {
            return Err(Error::TooLarge(format!("{} variables, brute force allows {SAT_MAX_VARS}", self.n_vars)));
        }
        let masks = self.masks();
        Ok((0..1u64 << self.n_vars).map(|a| count_satisfied(&masks, a)).max().unwrap_or(0))
    }
}

fn count_satisfied(masks: &[(u64, u64)], a: u64) -> usize {
    masks.iter().filter(|&&(pos, neg)| a & pos != 0 || !a & neg != 0).count()
}

/// One CNF per state over a shared variable set.
#[derive(Debug, Clone, PartialEq)]
pub struct SatInstance {
    pub formulas: Vec<Cnf>,
}

impl SatInstance {
    pub fn new(formulas: Vec<Cnf>) -> Result<Self> {
        let n = formulas.first().map_or(0, |f| f.n_vars);
        if formulas.is_empty() || formulas.iter().any(|f| f.n_vars != n) {
            return Err(Error::invalid("need at least one formula, all over the same variables"));
        }
        if formulas.iter().any(|f| f.clauses.is_empty()) {
            return Err(Error::invalid("every state formula needs at least one clause"));
        }
        Ok(SatInstance { formulas })
    }

    pub fn n_vars(&self) -> usize {
        self.formulas[0].n_vars
    }
}

/// The two-state instance that encodes the satisfiability of `cnf`, with the
/// fresh variable `y = x_{n+1}`. The buyer's single type is uniform.
pub fn build_sat_reduction(cnf: &Cnf) -> Result<(SatInstance, BuyerType)> {
    if cnf.clauses.is_empty() || cnf.n_vars == 0 {
        return Err(Error::invalid("the reduction needs a CNF with at least one clause and one variable"));
    }
    let y = cnf.n_vars as i32 + 1;
    let with = |lit: i32| {
        let mut clauses: Vec<Vec<i32>> = cnf
            .clauses
            .iter()
            .map(|c| {
                let mut c = c.clone();
                c.push(lit);
                c
            })
            .collect();
        clauses.push(vec![1, lit]);
        clauses.push(vec![-1, lit]);
        Cnf::new(cnf.n_vars + 1, clauses)
    };
    let inst = SatInstance::new(vec![with(y)?, with(-y)?])?;
    Ok((inst, BuyerType { id: "uniform".into(), prior: vec![0.5, 0.5] }))
}

/// Brute-force best response over all assignments.
#[derive(Debug, Clone)]
pub struct SatOracle {
    instance: SatInstance,
    masks: Vec<Vec<(u64, u64)>>,
    queries: Counter,
}

impl SatOracle {
    pub fn new(instance: SatInstance) -> Result<Self> {
        if instance.n_vars() > SAT_MAX_VARS {
            return Err(Error::TooLarge(format!("{} variables, brute force allows {SAT_MAX_VARS}", instance.n_vars())));
        }
        let masks = instance.formulas.iter().map(Cnf::masks).collect();
        Ok(SatOracle { instance, masks, queries: Counter::default() })
    }

    pub fn instance(&self) -> &SatInstance {
        &self.instance
    }

    fn utility(&self, a: u64, state: usize) -> f64 {
        count_satisfied(&self.masks[state], a) as f64 / self.masks[state].len() as f64
    }
}

impl BrOracle for SatOracle {
    fn num_states(&self) -> usize {
        self.instance.formulas.len()
    }

    fn respond(&self, belief: &[f64]) -> (ActionId, f64) {
        self.queries.bump();
        let mut best = (0u64, f64::NEG_INFINITY);
        for a in 0..1u64 << self.instance.n_vars() {
            let v: f64 = belief.iter().enumerate().map(|(w, b)| b * self.utility(a, w)).sum();
            if v > best.1 {
                best = (a, v);
            }
        }
        (ActionId::Assignment(best.0), best.1)
    }

    fn utility_of(&self, action: &ActionId, state: usize) -> f64 {
        match action {
            ActionId::Assignment(a) => self.utility(*a, state),
            other => panic!("sat oracle was handed a foreign action {other:?}"),
        }
    }

    fn query_count(&self) -> u64 {
        self.queries.get()
    }
}

/// Explicit environment with every assignment as an action, after dropping
/// duplicate and dominated utility vectors. Action names are bit strings,
/// `x1` first.
pub fn enumerated_environment(instance: &SatInstance, types: Vec<BuyerType>, probs: Vec<f64>) -> Result<Environment> {
    let n = instance.n_vars();
    if n > 20 {
        return Err(Error::TooLarge(format!("{n} variables is too many to enumerate")));
    }
    let oracle = SatOracle::new(instance.clone())?;
    let n_states = instance.formulas.len();
    let vectors: Vec<Vec<f64>> =
        (0..1u64 << n).map(|a| (0..n_states).map(|w| oracle.utility(a, w)).collect()).collect();
    let keep = prune_actions(&vectors);
    let utility = (0..n_states).map(|w| keep.iter().map(|&a| vectors[a][w]).collect()).collect();
    let actions = keep.iter().map(|&a| format!("{:0width$b}", a, width = n)).collect();
    let states = (0..n_states).map(|w| format!("w{w}")).collect();
    Environment::new(states, actions, vec![utility], types, probs)
}
