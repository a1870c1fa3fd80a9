//! Dense bounded-variable primal simplex.
//!
//! The program is brought to the form `min c·x, A x = b, 0 <= x <= u` with
//! `b >= 0`: finite lower bounds are shifted away, upper-only variables are
//! mirrored, free variables are split, and every inequality gets a slack.
//! Rows whose slack can start basic skip the artificial variable. Phase one
//! minimizes the artificial sum; phase two the real objective. Dantzig
//! pricing with a Harris ratio test is used until a run of degenerate
//! pivots; then ties are broken at random, and after a much longer stall
//! Bland's rule takes over until progress resumes.

use super::{LinearProgram, LpBackend, LpSolution, LpStatus, Relation, Sense, FEASIBILITY_TOL};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct DenseSimplex {
    pub max_iterations: usize,
    pub pivot_tol: f64,
    pub optimality_tol: f64,
    /// Consecutive degenerate pivots before leaving Dantzig pricing.
    pub degenerate_limit: usize,
}

impl Default for DenseSimplex {
    fn default() -> Self {
        DenseSimplex { max_iterations: 1_000_000, pivot_tol: 1e-7, optimality_tol: 1e-10, degenerate_limit: 40 }
    }
}

impl LpBackend for DenseSimplex {
    fn name(&self) -> &str {
        "dense-simplex"
    }

    fn solve(&self, lp: &LinearProgram) -> Result<LpSolution> {
        let mut std = StandardForm::build(lp);
        let mut tab = Tableau::new(&std);

        if std.n_art > 0 {
            let phase_one: Vec<f64> = (0..std.n_cols).map(|j| if std.is_art(j) { 1.0 } else { 0.0 }).collect();
            tab.set_costs(&phase_one);
            match tab.run(self)? {
                Outcome::Optimal => {}
                Outcome::Unbounded => return Err(Error::numerical("phase one reported unbounded")),
            }
            tab.refresh_beta(&std);
            let infeasibility: f64 =
                (0..std.m).filter(|&r| std.is_art(tab.basis[r])).map(|r| tab.beta[r].max(0.0)).sum();
            let scale = 1.0 + std.b.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if infeasibility > FEASIBILITY_TOL * scale {
                return Ok(LpSolution {
                    status: LpStatus::Infeasible,
                    values: Vec::new(),
                    objective_value: f64::NAN,
                    duals: None,
                });
            }
            for j in 0..std.n_cols {
                if std.is_art(j) {
                    std.ub[j] = 0.0;
                }
            }
            tab.ub.clone_from(&std.ub);
            tab.drive_out_artificials(&std, self.pivot_tol);
        }

        tab.set_costs(&std.cost);
        match tab.run(self)? {
            Outcome::Optimal => {}
            Outcome::Unbounded => {
                return Ok(LpSolution {
                    status: LpStatus::Unbounded,
                    values: Vec::new(),
                    objective_value: match lp.sense {
                        Sense::Maximize => f64::INFINITY,
                        Sense::Minimize => f64::NEG_INFINITY,
                    },
                    duals: None,
                })
            }
        }
        tab.refresh_beta(&std);

        let values = std.recover(&tab);
        let violation = lp.max_violation(&values);
        let scale = 1.0 + std.b.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if violation > FEASIBILITY_TOL * scale {
            return Err(Error::numerical(format!("solution violates constraints by {violation:e}")));
        }
        let sign = match lp.sense {
            Sense::Maximize => -1.0,
            Sense::Minimize => 1.0,
        };
        let duals = (0..std.m)
            .map(|i| {
                let col = std.identity_col[i];
                let y = std.cost[col] - tab.d[col];
                sign * std.row_sign[i] * y
            })
            .collect();
        Ok(LpSolution {
            status: LpStatus::Optimal,
            objective_value: lp.evaluate_objective(&values),
            values,
            duals: Some(duals),
        })
    }
}

/// Pivoting rule. Degenerate stalls first switch to random tie-breaking in
/// the ratio test; a much longer stall falls back to Bland's rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Rule {
    Dantzig,
    Random,
    Bland,
}

/// Stall length, in units of `degenerate_limit`, before Bland's rule.
const BLAND_FACTOR: usize = 50;

#[derive(Debug, Clone, Copy)]
enum Mapping {
    /// x = lower + col
    Shift(f64, usize),
    /// x = upper - col
    Mirror(f64, usize),
    /// x = pos - neg
    Split(usize, usize),
}

struct StandardForm {
    m: usize,
    n_cols: usize,
    n_art: usize,
    art_start: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    ub: Vec<f64>,
    cost: Vec<f64>,
    row_sign: Vec<f64>,
    identity_col: Vec<usize>,
    mapping: Vec<Mapping>,
}

impl StandardForm {
    fn is_art(&self, j: usize) -> bool {
        j >= self.art_start
    }

    fn build(lp: &LinearProgram) -> Self {
        let obj_sign = match lp.sense {
            Sense::Maximize => -1.0,
            Sense::Minimize => 1.0,
        };
        let mut mapping = Vec::with_capacity(lp.num_variables());
        let mut ub = Vec::new();
        let mut cost = Vec::new();
        for (var, &c) in lp.variables().iter().zip(lp.objective()) {
            let c = obj_sign * c;
            if var.lower.is_finite() {
                mapping.push(Mapping::Shift(var.lower, ub.len()));
                ub.push(var.upper - var.lower);
                cost.push(c);
            } else if var.upper.is_finite() {
                mapping.push(Mapping::Mirror(var.upper, ub.len()));
                ub.push(f64::INFINITY);
                cost.push(-c);
            } else {
                mapping.push(Mapping::Split(ub.len(), ub.len() + 1));
                ub.extend([f64::INFINITY, f64::INFINITY]);
                cost.extend([c, -c]);
            }
        }
        let n_struct = ub.len();
        let m = lp.num_constraints();

        // Row data over structural columns, with the constant from shifts.
        let mut rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::with_capacity(m);
        for con in lp.constraints() {
            let mut rhs = con.rhs;
            let mut entries = Vec::with_capacity(con.terms.len() + 1);
            for &(v, c) in &con.terms {
                match mapping[v.0] {
                    Mapping::Shift(lo, col) => {
                        rhs -= c * lo;
                        entries.push((col, c));
                    }
                    Mapping::Mirror(hi, col) => {
                        rhs -= c * hi;
                        entries.push((col, -c));
                    }
                    Mapping::Split(p, q) => {
                        entries.push((p, c));
                        entries.push((q, -c));
                    }
                }
            }
            rows.push((entries, rhs));
        }

        let n_slack = lp.constraints().iter().filter(|c| c.relation != Relation::Eq).count();
        let mut row_sign = vec![1.0; m];
        let mut slack_of = vec![None; m];
        let mut slack_coeff = vec![0.0; m];
        let mut next_slack = n_struct;
        for (i, con) in lp.constraints().iter().enumerate() {
            let rhs = rows[i].1;
            let raw = match con.relation {
                Relation::Le => 1.0,
                Relation::Ge => -1.0,
                Relation::Eq => 0.0,
            };
            if raw != 0.0 {
                slack_of[i] = Some(next_slack);
                next_slack += 1;
            }
            // Prefer a sign that keeps b >= 0 and, at b == 0, a +1 slack.
            let sign = if rhs > 0.0 {
                1.0
            } else if rhs < 0.0 {
                -1.0
            } else if raw < 0.0 {
                -1.0
            } else {
                1.0
            };
            row_sign[i] = sign;
            slack_coeff[i] = raw * sign;
        }
        let art_start = n_struct + n_slack;
        let needs_art: Vec<bool> = (0..m).map(|i| slack_coeff[i] != 1.0).collect();
        let n_art = needs_art.iter().filter(|&&x| x).count();
        let n_cols = art_start + n_art;

        let mut a = vec![0.0; m * n_cols];
        let mut b = vec![0.0; m];
        let mut identity_col = vec![0; m];
        let mut next_art = art_start;
        for i in 0..m {
            let sign = row_sign[i];
            let row = &mut a[i * n_cols..(i + 1) * n_cols];
            for &(col, c) in &rows[i].0 {
                row[col] += sign * c;
            }
            b[i] = sign * rows[i].1;
            if let Some(s) = slack_of[i] {
                row[s] = slack_coeff[i];
            }
            if needs_art[i] {
                row[next_art] = 1.0;
                identity_col[i] = next_art;
                next_art += 1;
            } else {
                identity_col[i] = slack_of[i].unwrap();
            }
        }
        ub.resize(n_cols, f64::INFINITY);
        cost.resize(n_cols, 0.0);
        StandardForm { m, n_cols, n_art, art_start, a, b, ub, cost, row_sign, identity_col, mapping }
    }

    fn column_value(&self, tab: &Tableau, j: usize) -> f64 {
        match tab.position[j] {
            Some(r) => tab.beta[r],
            None if tab.at_upper[j] => self.ub[j],
            None => 0.0,
        }
    }

    fn recover(&self, tab: &Tableau) -> Vec<f64> {
        self.mapping
            .iter()
            .map(|map| match *map {
                Mapping::Shift(lo, col) => lo + self.column_value(tab, col),
                Mapping::Mirror(hi, col) => hi - self.column_value(tab, col),
                Mapping::Split(p, q) => self.column_value(tab, p) - self.column_value(tab, q),
            })
            .collect()
    }
}

enum Outcome {
    Optimal,
    Unbounded,
}

struct Tableau {
    m: usize,
    n: usize,
    t: Vec<f64>,
    beta: Vec<f64>,
    d: Vec<f64>,
    cost: Vec<f64>,
    ub: Vec<f64>,
    basis: Vec<usize>,
    position: Vec<Option<usize>>,
    at_upper: Vec<bool>,
    /// xorshift state for breaking ties while stalled.
    rng: u64,
}

impl Tableau {
    fn new(std: &StandardForm) -> Self {
        let mut position = vec![None; std.n_cols];
        for (r, &c) in std.identity_col.iter().enumerate() {
            position[c] = Some(r);
        }
        Tableau {
            m: std.m,
            n: std.n_cols,
            t: std.a.clone(),
            beta: std.b.clone(),
            d: vec![0.0; std.n_cols],
            cost: vec![0.0; std.n_cols],
            ub: std.ub.clone(),
            basis: std.identity_col.clone(),
            position,
            at_upper: vec![false; std.n_cols],
            rng: 0x9e37_79b9_7f4a_7c15,
        }
    }

    fn row(&self, r: usize) -> &[f64] {
        &self.t[r * self.n..(r + 1) * self.n]
    }

    fn set_costs(&mut self, cost: &[f64]) {
        self.cost.copy_from_slice(cost);
        self.d.copy_from_slice(cost);
        for r in 0..self.m {
            let cb = cost[self.basis[r]];
            if cb != 0.0 {
                let row = &self.t[r * self.n..(r + 1) * self.n];
                for (dj, &tij) in self.d.iter_mut().zip(row) {
                    *dj -= cb * tij;
                }
            }
        }
    }

    /// Recompute basic values from B^-1 (read off the identity columns).
    fn refresh_beta(&mut self, std: &StandardForm) {
        let mut rhs = std.b.clone();
        for j in 0..self.n {
            if self.position[j].is_none() && self.at_upper[j] {
                let u = std.ub[j];
                for (i, r) in rhs.iter_mut().enumerate() {
                    *r -= std.a[i * self.n + j] * u;
                }
            }
        }
        for r in 0..self.m {
            let row = self.row(r);
            self.beta[r] = std.identity_col.iter().zip(&rhs).map(|(&c, &v)| row[c] * v).sum();
        }
    }

    fn pivot(&mut self, r: usize, j: usize) {
        let n = self.n;
        let piv = self.t[r * n + j];
        let mut prow: Vec<f64> = self.t[r * n..(r + 1) * n].to_vec();
        for v in prow.iter_mut() {
            *v /= piv;
        }
        prow[j] = 1.0;
        let nz: Vec<usize> = (0..n).filter(|&c| prow[c] != 0.0).collect();
        for k in 0..self.m {
            if k == r {
                continue;
            }
            let f = self.t[k * n + j];
            if f == 0.0 {
                continue;
            }
            let row = &mut self.t[k * n..(k + 1) * n];
            for &c in &nz {
                row[c] -= f * prow[c];
            }
            row[j] = 0.0;
        }
        let f = self.d[j];
        if f != 0.0 {
            for &c in &nz {
                self.d[c] -= f * prow[c];
            }
            self.d[j] = 0.0;
        }
        self.t[r * n..(r + 1) * n].copy_from_slice(&prow);
        let leaving = self.basis[r];
        self.position[leaving] = None;
        self.basis[r] = j;
        self.position[j] = Some(r);
    }

    fn drive_out_artificials(&mut self, std: &StandardForm, tol: f64) {
        for r in 0..self.m {
            if !std.is_art(self.basis[r]) {
                continue;
            }
            let candidate = (0..std.art_start)
                .filter(|&j| self.position[j].is_none() && self.ub[j] > 0.0)
                .max_by(|&a, &b| self.t[r * self.n + a].abs().total_cmp(&self.t[r * self.n + b].abs()));
            if let Some(j) = candidate {
                if self.t[r * self.n + j].abs() > tol.max(1e-7) {
                    let value = if self.at_upper[j] { self.ub[j] } else { 0.0 };
                    let leaving = self.basis[r];
                    self.pivot(r, j);
                    self.at_upper[leaving] = false;
                    self.at_upper[j] = false;
                    self.beta[r] = value;
                }
            }
        }
    }

    fn run(&mut self, cfg: &DenseSimplex) -> Result<Outcome> {
        let mut degenerate_run = 0usize;
        for _ in 0..cfg.max_iterations {
            let rule = if degenerate_run >= BLAND_FACTOR * cfg.degenerate_limit {
                Rule::Bland
            } else if degenerate_run >= cfg.degenerate_limit {
                Rule::Random
            } else {
                Rule::Dantzig
            };
            let Some(j) = self.entering(cfg.optimality_tol, rule) else {
                return Ok(Outcome::Optimal);
            };
            let dir = if self.at_upper[j] { -1.0 } else { 1.0 };

            let best = self.ratio_test(j, dir, cfg, rule);
            let flip = self.ub[j];
            let step = match best {
                Some((s, _, _)) if s <= flip => s,
                _ if flip.is_finite() => flip,
                _ => return Ok(Outcome::Unbounded),
            };
            degenerate_run = if step <= 1e-12 { degenerate_run + 1 } else { 0 };

            for r in 0..self.m {
                let tij = self.t[r * self.n + j];
                if tij != 0.0 {
                    self.beta[r] -= tij * dir * step;
                }
            }
            match best {
                Some((s, r, to_upper)) if s <= flip => {
                    let start = if dir > 0.0 { 0.0 } else { self.ub[j] };
                    let leaving = self.basis[r];
                    self.pivot(r, j);
                    self.at_upper[leaving] = to_upper;
                    self.at_upper[j] = false;
                    self.beta[r] = start + dir * step;
                }
                _ => {
                    self.at_upper[j] = !self.at_upper[j];
                }
            }
        }
        Err(Error::numerical(format!("simplex exceeded {} iterations", cfg.max_iterations)))
    }

    /// Harris two-pass ratio test. The first pass finds the largest step that
    /// keeps every basic variable within a small slack of its bounds; the
    /// second picks, among rows that block before that step, the one with the
    /// largest pivot. While stalled the pick is random, or the lowest basic
    /// index, among pivots within a factor of ten of the largest. Returns
    /// (step, row, leaving goes to upper).
    fn ratio_test(&mut self, j: usize, dir: f64, cfg: &DenseSimplex, rule: Rule) -> Option<(f64, usize, bool)> {
        let slack = FEASIBILITY_TOL * 1e-2;
        let mut bound = f64::INFINITY;
        for r in 0..self.m {
            let alpha = self.t[r * self.n + j] * dir;
            if alpha > cfg.pivot_tol {
                bound = bound.min((self.beta[r].max(0.0) + slack) / alpha);
            } else if alpha < -cfg.pivot_tol {
                let u = self.ub[self.basis[r]];
                if u.is_finite() {
                    bound = bound.min(((u - self.beta[r]).max(0.0) + slack) / -alpha);
                }
            }
        }
        if !bound.is_finite() {
            return None;
        }
        let mut rows: Vec<(usize, f64, f64, bool)> = Vec::new();
        let mut max_alpha = 0.0f64;
        for r in 0..self.m {
            let alpha = self.t[r * self.n + j] * dir;
            let (step, to_upper) = if alpha > cfg.pivot_tol {
                (self.beta[r].max(0.0) / alpha, false)
            } else if alpha < -cfg.pivot_tol && self.ub[self.basis[r]].is_finite() {
                ((self.ub[self.basis[r]] - self.beta[r]).max(0.0) / -alpha, true)
            } else {
                continue;
            };
            if step <= bound {
                max_alpha = max_alpha.max(alpha.abs());
                rows.push((r, alpha.abs(), step, to_upper));
            }
        }
        let good = || rows.iter().filter(|c| c.1 >= 0.1 * max_alpha);
        let pick = match rule {
            Rule::Dantzig => rows.iter().max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0))),
            Rule::Random => {
                let k = good().count() as u64;
                let r = self.next_random();
                if k == 0 {
                    None
                } else {
                    good().nth((r % k) as usize)
                }
            }
            Rule::Bland => good().min_by_key(|c| self.basis[c.0]),
        };
        pick.map(|&(r, _, step, to_upper)| (step, r, to_upper))
    }

    fn next_random(&mut self) -> u64 {
        self.rng ^= self.rng << 13;
        self.rng ^= self.rng >> 7;
        self.rng ^= self.rng << 17;
        self.rng
    }

    /// Most improving column, or the first improving one under Bland's rule.
    fn entering(&self, tol: f64, rule: Rule) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for j in 0..self.n {
            if self.position[j].is_some() || self.ub[j] <= 0.0 {
                continue;
            }
            let dj = self.d[j];
            let gain = if self.at_upper[j] { dj } else { -dj };
            if gain <= tol {
                continue;
            }
            if rule == Rule::Bland {
                return Some(j);
            }
            if best.map_or(true, |(_, g)| gain > g) {
                best = Some((j, gain));
            }
        }
        best.map(|(j, _)| j)
    }
}
