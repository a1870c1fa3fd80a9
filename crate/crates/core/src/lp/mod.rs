//! Solver-neutral linear programs.
//!
//! Every solver in the crate builds a [`LinearProgram`] and hands it to an
//! [`LpBackend`]. The default backend is [`DenseSimplex`], a bounded-variable
//! two-phase primal simplex that also reports shadow prices, which column
//! generation needs.
//!
//! Programs serialize to a small line-oriented text format (see
//! [`LinearProgram::to_text`]) used for debugging and golden files.

mod simplex;
mod text;

use std::collections::HashMap;

pub use simplex::DenseSimplex;

use crate::error::{Error, Result};

/// Feasibility tolerance promised for every `Optimal` solution.
pub const FEASIBILITY_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VarId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Maximize,
    Minimize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

impl Relation {
    fn symbol(self) -> &'static str {
        match self {
            Relation::Le => "<=",
            Relation::Eq => "=",
            Relation::Ge => ">=",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub name: String,
    pub terms: Vec<(VarId, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub sense: Sense,
    variables: Vec<Variable>,
    objective: Vec<f64>,
    constraints: Vec<Constraint>,
    var_index: HashMap<String, VarId>,
    con_index: HashMap<String, ConId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Indexed by [`VarId`]; empty unless optimal.
    pub values: Vec<f64>,
    pub objective_value: f64,
    /// Shadow prices indexed by [`ConId`]: the rate of change of the optimal
    /// objective per unit increase of the constraint's right-hand side.
    pub duals: Option<Vec<f64>>,
}

impl LpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }

    pub fn value(&self, var: VarId) -> f64 {
        self.values[var.0]
    }

    pub fn dual(&self, con: ConId) -> Option<f64> {
        self.duals.as_ref().map(|d| d[con.0])
    }

    /// Value by variable name.
    pub fn value_of(&self, lp: &LinearProgram, name: &str) -> Option<f64> {
        lp.var_id(name).map(|v| self.values[v.0])
    }
}

/// A pluggable LP solver.
pub trait LpBackend: Send + Sync {
    fn name(&self) -> &str;
    fn solve(&self, lp: &LinearProgram) -> Result<LpSolution>;
}

/// Solve with the default backend.
pub fn solve(lp: &LinearProgram) -> Result<LpSolution> {
    DenseSimplex::default().solve(lp)
}

impl LinearProgram {
    pub fn new(sense: Sense) -> Self {
        LinearProgram {
            sense,
            variables: Vec::new(),
            objective: Vec::new(),
            constraints: Vec::new(),
            var_index: HashMap::new(),
            con_index: HashMap::new(),
        }
    }

    pub fn num_variables(&self) -> usize {
        self.variables.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn var_id(&self, name: &str) -> Option<VarId> {
        self.var_index.get(name).copied()
    }

    pub fn con_id(&self, name: &str) -> Option<ConId> {
        self.con_index.get(name).copied()
    }

    pub fn add_variable(&mut self, name: impl Into<String>, lower: f64, upper: f64) -> Result<VarId> {
        let name = name.into();
        check_name(&name)?;
        if lower > upper || lower.is_nan() || upper.is_nan() || lower == f64::INFINITY || upper == f64::NEG_INFINITY {
            return Err(Error::invalid(format!("bad bounds [{lower}, {upper}] for `{name}`")));
        }
        if self.var_index.contains_key(&name) {
            return Err(Error::DuplicateVariable(name));
        }
        let id = VarId(self.variables.len());
        self.var_index.insert(name.clone(), id);
        self.variables.push(Variable { name, lower, upper });
        self.objective.push(0.0);
        Ok(id)
    }

    pub fn set_objective(&mut self, var: VarId, coeff: f64) {
        self.objective[var.0] = coeff;
    }

    pub fn add_constraint(
        &mut self,
        name: impl Into<String>,
        terms: Vec<(VarId, f64)>,
        relation: Relation,
        rhs: f64,
    ) -> Result<ConId> {
        let name = name.into();
        check_name(&name)?;
        if self.con_index.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate constraint `{name}`")));
        }
        if let Some((v, _)) = terms.iter().find(|(v, _)| v.0 >= self.variables.len()) {
            return Err(Error::UnknownName { kind: "variable", name: format!("#{}", v.0) });
        }
        if !rhs.is_finite() || terms.iter().any(|(_, c)| !c.is_finite()) {
            return Err(Error::invalid(format!("non-finite data in constraint `{name}`")));
        }
        let id = ConId(self.constraints.len());
        self.con_index.insert(name.clone(), id);
        self.constraints.push(Constraint { name, terms: merge_terms(terms), relation, rhs });
        Ok(id)
    }

    /// Append a variable together with its coefficients in existing
    /// constraints. Any solution computed before the call is stale.
    pub fn add_column(
        &mut self,
        name: impl Into<String>,
        bounds: (f64, f64),
        objective_coeff: f64,
        entries: &[(&str, f64)],
    ) -> Result<VarId> {
        let name = name.into();
        if self.var_index.contains_key(&name) {
            return Err(Error::DuplicateVariable(name));
        }
        let mut rows = Vec::with_capacity(entries.len());
        for (con, coeff) in entries {
            let id =
                self.con_id(con).ok_or_else(|| Error::UnknownName { kind: "constraint", name: con.to_string() })?;
            rows.push((id, *coeff));
        }
        let var = self.add_variable(name, bounds.0, bounds.1)?;
        self.objective[var.0] = objective_coeff;
        for (con, coeff) in rows {
            self.constraints[con.0].terms.push((var, coeff));
        }
        Ok(var)
    }

    /// Same as [`add_column`](Self::add_column) but addressed by constraint id.
    pub fn add_column_by_id(
        &mut self,
        name: impl Into<String>,
        bounds: (f64, f64),
        objective_coeff: f64,
        entries: &[(ConId, f64)],
    ) -> Result<VarId> {
        if let Some((c, _)) = entries.iter().find(|(c, _)| c.0 >= self.constraints.len()) {
            return Err(Error::UnknownName { kind: "constraint", name: format!("#{}", c.0) });
        }
        let var = self.add_variable(name, bounds.0, bounds.1)?;
        self.objective[var.0] = objective_coeff;
        for &(con, coeff) in entries {
            self.constraints[con.0].terms.push((var, coeff));
        }
        Ok(var)
    }

    /// Largest violation of any constraint or bound at `values`.
    pub fn max_violation(&self, values: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for (var, &x) in self.variables.iter().zip(values) {
            worst = worst.max(var.lower - x).max(x - var.upper);
        }
        for con in &self.constraints {
            let lhs: f64 = con.terms.iter().map(|&(v, c)| c * values[v.0]).sum();
            let gap = match con.relation {
                Relation::Le => lhs - con.rhs,
                Relation::Ge => con.rhs - lhs,
                Relation::Eq => (lhs - con.rhs).abs(),
            };
            worst = worst.max(gap);
        }
        worst
    }

    pub fn evaluate_objective(&self, values: &[f64]) -> f64 {
        self.objective.iter().zip(values).map(|(c, x)| c * x).sum()
    }
}

fn check_name(name: &str) -> Result<()> {
    if name.is_empty() || name.chars().any(char::is_whitespace) {
        return Err(Error::invalid(format!("LP names must be non-empty without whitespace: {name:?}")));
    }
    Ok(())
}

fn merge_terms(mut terms: Vec<(VarId, f64)>) -> Vec<(VarId, f64)> {
    terms.sort_by_key(|(v, _)| v.0);
    let mut merged: Vec<(VarId, f64)> = Vec::with_capacity(terms.len());
    for (v, c) in terms {
        match merged.last_mut() {
            Some((last, acc)) if *last == v => *acc += c,
            _ => merged.push((v, c)),
        }
    }
    merged.retain(|(_, c)| *c != 0.0);
    merged
}
