//! Best-response oracles.
//!
//! In the implicit model the seller never sees the action set. All it can do
//! is ask an oracle for the best action under a belief and, for an action it
//! has already been handed, read off the per-state utilities.

mod sat;
mod traffic;

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

pub use sat::{build_sat_reduction, enumerated_environment, Cnf, SatInstance, SatOracle, SAT_MAX_VARS};
pub use traffic::{TrafficEdge, TrafficOracle};

use crate::error::{Error, Result};
use crate::market::{BuyerModel, BuyerType, Environment};

/// Opaque action handle returned by an oracle.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ActionId {
    /// Column of an explicit utility matrix.
    Index(usize),
    /// Edge indices of an s-t path, in travel order.
    Path(Vec<usize>),
    /// Truth assignment; variable `x1` is the most significant bit.
    Assignment(u64),
}

pub trait BrOracle: Send + Sync {
    fn num_states(&self) -> usize;

    /// Utility-maximizing action for a belief, with its expected utility.
    fn respond(&self, belief: &[f64]) -> (ActionId, f64);

    fn utility_of(&self, action: &ActionId, state: usize) -> f64;

    /// Number of `respond` calls so far.
    fn query_count(&self) -> u64;

    fn utilities_of(&self, action: &ActionId) -> Vec<f64> {
        (0..self.num_states()).map(|w| self.utility_of(action, w)).collect()
    }
}

/// Query counter shared by the oracles.
#[derive(Debug, Default)]
pub(crate) struct Counter(AtomicU64);

impl Counter {
    pub(crate) fn bump(&self) {
        self.0.fetch_add(1, Ordering::Relaxed);
    }

    pub(crate) fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }
}

impl Clone for Counter {
    fn clone(&self) -> Self {
        Counter(AtomicU64::new(self.get()))
    }
}

/// Oracle over an explicit states-by-actions matrix.
#[derive(Debug, Clone)]
pub struct MatrixOracle {
    utility: Vec<Vec<f64>>,
    queries: Counter,
}

impl MatrixOracle {
    pub fn new(utility: Vec<Vec<f64>>) -> Result<Self> {
        let m = utility.first().map_or(0, Vec::len);
        if utility.is_empty() || m == 0 || utility.iter().any(|r| r.len() != m) {
            return Err(Error::invalid("utility matrix must be non-empty and rectangular"));
        }
        if utility.iter().flatten().any(|&x| !(0.0..=1.0).contains(&x)) {
            return Err(Error::invalid("utilities must lie in [0, 1]"));
        }
        Ok(MatrixOracle { utility, queries: Counter::default() })
    }

    pub fn from_environment(env: &Environment) -> Result<Self> {
        if !env.has_shared_utility() {
            return Err(Error::invalid("an oracle needs one utility matrix shared by all types"));
        }
        MatrixOracle::new(env.utility(0).to_vec())
    }
}

impl BrOracle for MatrixOracle {
    fn num_states(&self) -> usize {
        self.utility.len()
    }

    fn respond(&self, belief: &[f64]) -> (ActionId, f64) {
        self.queries.bump();
        let m = self.utility[0].len();
        let mut best = (0, f64::NEG_INFINITY);
        for a in 0..m {
            let v: f64 = self.utility.iter().zip(belief).map(|(r, b)| b * r[a]).sum();
            if v > best.1 {
                best = (a, v);
            }
        }
        (ActionId::Index(best.0), best.1)
    }

    fn utility_of(&self, action: &ActionId, state: usize) -> f64 {
        match action {
            ActionId::Index(a) => self.utility[state][*a],
            other => panic!("matrix oracle was handed a foreign action {other:?}"),
        }
    }

    fn query_count(&self) -> u64 {
        self.queries.get()
    }
}

/// Buyer types that can only be probed through an oracle.
pub struct OracleMarket<'a> {
    pub oracle: &'a dyn BrOracle,
    pub types: Vec<BuyerType>,
    pub type_probs: Vec<f64>,
}

impl<'a> OracleMarket<'a> {
    pub fn new(oracle: &'a dyn BrOracle, types: Vec<BuyerType>, type_probs: Vec<f64>) -> Result<Self> {
        if types.is_empty() || types.len() != type_probs.len() {
            return Err(Error::invalid("need one probability per type and at least one type"));
        }
        for t in &types {
            if t.prior.len() != oracle.num_states() {
                return Err(Error::invalid(format!("prior of type `{}` has wrong length", t.id)));
            }
            crate::market::check_distribution(&t.prior, &format!("prior of type `{}`", t.id))?;
        }
        crate::market::check_distribution(&type_probs, "type distribution")?;
        Ok(OracleMarket { oracle, types, type_probs })
    }
}

impl BuyerModel for OracleMarket<'_> {
    fn num_states(&self) -> usize {
        self.oracle.num_states()
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

    fn best_payoff(&self, _ty: usize, weights: &[f64]) -> f64 {
        let mass: f64 = weights.iter().sum();
        if !(mass > 0.0) {
            return 0.0;
        }
        let belief: Vec<f64> = weights.iter().map(|w| w / mass).collect();
        mass * self.oracle.respond(&belief).1
    }
}

/// Indices of the actions to keep: duplicates and weakly dominated utility
/// vectors are dropped (first occurrence wins). Values and base utilities are
/// unchanged for every belief.
pub fn prune_actions(vectors: &[Vec<f64>]) -> Vec<usize> {
    let mut keep: Vec<usize> = Vec::new();
    'outer: for (i, v) in vectors.iter().enumerate() {
        for (j, w) in vectors.iter().enumerate() {
            if i == j {
                continue;
            }
            let weakly = v.iter().zip(w).all(|(a, b)| a <= b);
            if weakly && (v != w || j < i) {
                continue 'outer;
            }
        }
        keep.push(i);
    }
    keep
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_oracle_ties_lowest() {
        let o = MatrixOracle::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(o.respond(&[0.5, 0.5]), (ActionId::Index(0), 0.5));
        assert_eq!(o.respond(&[0.2, 0.8]).0, ActionId::Index(1));
        assert_eq!(o.query_count(), 2);
    }

    #[test]
    fn pruning_drops_dominated_and_duplicates() {
        let v = vec![vec![0.5, 0.5], vec![1.0, 0.0], vec![0.4, 0.5], vec![0.5, 0.5], vec![0.0, 1.0]];
        assert_eq!(prune_actions(&v), vec![0, 1, 4]);
    }
}
