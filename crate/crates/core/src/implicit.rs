//! Approximately optimal menus when the buyer's utility is only reachable
//! through a best-response oracle.
//!
//! The pipeline: probe the oracle on a grid of signal columns to collect the
//! actions each type could ever be recommended, solve a responsive-menu LP
//! over those actions (deviation payoffs are added lazily as cutting planes
//! from further oracle calls), then repair the result into an exactly IC/IR
//! menu with a uniform price discount.

use std::collections::{HashMap, HashSet};

use log::{debug, info};

use crate::error::Result;
use crate::lp::{DenseSimplex, LinearProgram, LpBackend, LpStatus, Relation, Sense, VarId};
use crate::market::{
    audit_menu, check_distribution, choose_from_menu, AuditReport, BuyerModel, BuyerType, Experiment, Menu, MenuEntry,
};
use crate::oracle::{ActionId, BrOracle, OracleMarket};
use crate::Error;

/// Audited violations at or below this count as exact.
pub const CLEAN_TOL: f64 = 1e-9;

/// Default ceiling on the number of grid columns probed.
pub const DEFAULT_GRID_CAP: u128 = 10_000_000;

/// Violation above which a deviation cut is added.
const CUT_TOL: f64 = 1e-9;

/// Merge signals whose normalized columns round to the same point of the
/// `ε/|Ω|` grid, summing their columns. Zero columns are dropped.
///
/// The result depends only on the experiment; for every type the value drops
/// by at most `2ε`, and at most `(⌈|Ω|/ε⌉+1)^|Ω|` signals remain.
pub fn merge_signals(exp: &Experiment, eps: f64) -> Result<Experiment> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::invalid(format!("epsilon must be positive, got {eps}")));
    }
    exp.validate()?;
    let n = exp.num_states();
    let step = eps / n as f64;
    let mut order: Vec<Vec<i64>> = Vec::new();
    let mut sums: HashMap<Vec<i64>, Vec<f64>> = HashMap::new();
    for col in exp.columns() {
        let mass: f64 = col.iter().sum();
        if !(mass > 0.0) {
            continue;
        }
        // Nearest grid point, exact halves to the lower one.
        let key: Vec<i64> = col.iter().map(|c| ((c / mass) / step - 0.5).ceil() as i64).collect();
        match sums.get_mut(&key) {
            Some(acc) => acc.iter_mut().zip(&col).for_each(|(a, c)| *a += c),
            None => {
                order.push(key.clone());
                sums.insert(key, col);
            }
        }
    }
    let columns: Vec<Vec<f64>> = order.iter().map(|k| sums[k].clone()).collect();
    Experiment::from_columns(&columns, exp.row_mass())
}

/// `1/δ` as an integer, if it is one.
fn grid_units(delta: f64) -> Result<u64> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::invalid(format!("delta must lie in (0, 1], got {delta}")));
    }
    let inv = 1.0 / delta;
    let n = inv.round();
    if (inv - n).abs() > 1e-9 * inv.max(1.0) || n > u64::MAX as f64 {
        return Err(Error::invalid(format!("1/delta must be an integer, got {inv}")));
    }
    Ok(n as u64)
}

/// Integer units of `δ` per entry: each row is floored and the leftover
/// units go to the largest remainders (lower signal first on ties).
pub fn round_experiment_units(exp: &Experiment, delta: f64) -> Result<Vec<Vec<u64>>> {
    exp.validate()?;
    let n = grid_units(delta)?;
    let scale = n as f64 / exp.row_mass();
    let mut out = Vec::with_capacity(exp.num_states());
    for row in exp.rows() {
        let mut units = Vec::with_capacity(row.len());
        let mut rem = Vec::with_capacity(row.len());
        for (k, &x) in row.iter().enumerate() {
            let y = x * scale;
            let r = y.round();
            // Values already on the grid stay put despite float noise.
            let (fl, frac) = if (y - r).abs() < 1e-9 { (r, 0.0) } else { (y.floor(), y - y.floor()) };
            units.push(fl as u64);
            rem.push((frac, k));
        }
        let assigned: u64 = units.iter().sum();
        let mut left = n.saturating_sub(assigned);
        rem.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for &(_, k) in rem.iter().cycle() {
            if left == 0 {
                break;
            }
            units[k] += 1;
            left -= 1;
        }
        out.push(units);
    }
    Ok(out)
}

/// Round every entry to a multiple of `δ` keeping rows stochastic. Requires
/// `1/δ` to be an integer. Values move by at most `δ` per signal.
pub fn round_experiment(exp: &Experiment, delta: f64) -> Result<Experiment> {
    let units = round_experiment_units(exp, delta)?;
    let n = grid_units(delta)? as f64;
    let matrix = units.into_iter().map(|r| r.into_iter().map(|u| u as f64 / n).collect()).collect();
    Experiment::new(matrix)
}

/// Uniform discount `t ↦ max(0, (1-√ε)t - ε)` followed by every type
/// re-choosing its favourite option (null included).
pub fn reprice<M: BuyerModel + ?Sized>(model: &M, menu: &Menu, eps: f64) -> Result<Menu> {
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(Error::invalid(format!("epsilon must be nonnegative, got {eps}")));
    }
    let eta = eps.sqrt();
    let entries = menu
        .entries
        .iter()
        .map(|e| MenuEntry { experiment: e.experiment.clone(), price: ((1.0 - eta) * e.price - eps).max(0.0) })
        .collect();
    let mut out = Menu { entries, assignment: None };
    out.validate()?;
    let assignment = (0..model.num_types()).map(|ty| choose_from_menu(model, ty, &out).0).collect();
    out.assignment = Some(assignment);
    Ok(out)
}

/// Turn an `ε`-IC/IR menu into an exactly IC/IR one losing at most
/// `√ε·R + ε + √ε` revenue. Menus that already audit clean pass through.
pub fn eps_ic_to_ic<M: BuyerModel + ?Sized>(model: &M, menu: &Menu, eps: f64) -> Result<Menu> {
    let report = audit_menu(model, menu)?;
    if report.max_ic_violation <= CLEAN_TOL && report.max_ir_violation <= CLEAN_TOL {
        let mut out = menu.clone();
        if out.assignment.is_none() {
            out.assignment = Some(report.choices.iter().map(|c| c.0).collect());
        }
        return Ok(out);
    }
    debug!("repairing menu: ic {:.3e}, ir {:.3e}, eps {eps}", report.max_ic_violation, report.max_ir_violation);
    reprice(model, menu, eps)
}

/// The discretized signal space `{0, δ, …, 1}^|Ω|`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SignalGrid {
    pub n_states: usize,
    /// `1/δ`.
    pub units: u64,
}

impl SignalGrid {
    /// Grid with the default `δ` for accuracy `ε`.
    pub fn for_epsilon(n_states: usize, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps <= 1.0) {
            return Err(Error::invalid(format!("epsilon must lie in (0, 1], got {eps}")));
        }
        let per_coord = (n_states as f64 / eps).ceil() + 1.0;
        let merged = per_coord.powi(n_states as i32);
        let units = (merged / eps).ceil();
        if !units.is_finite() || units > u64::MAX as f64 / 2.0 {
            return Err(Error::GridTooLarge { columns: u128::MAX, cap: 0 });
        }
        Ok(SignalGrid { n_states, units: units as u64 })
    }

    pub fn with_delta(n_states: usize, delta: f64) -> Result<Self> {
        Ok(SignalGrid { n_states, units: grid_units(delta)? })
    }

    pub fn delta(&self) -> f64 {
        1.0 / self.units as f64
    }

    /// `(1/δ + 1)^|Ω|`, saturating.
    pub fn num_columns(&self) -> u128 {
        let base = self.units as u128 + 1;
        (0..self.n_states).fold(1u128, |acc, _| acc.saturating_mul(base))
    }

    /// Integer coordinates of column number `idx`.
    fn column_units(&self, mut idx: u128, out: &mut [u64]) {
        let base = self.units as u128 + 1;
        for c in out.iter_mut() {
            *c = (idx % base) as u64;
            idx /= base;
        }
    }
}

/// Per type, the actions the oracle recommended somewhere on the grid.
#[derive(Debug, Clone, Default)]
pub struct ActionSets {
    pub per_type: Vec<Vec<ActionId>>,
    /// Utility vector of every action seen.
    pub utilities: HashMap<ActionId, Vec<f64>>,
    pub queries: u64,
}

impl ActionSets {
    fn record_utility(&mut self, oracle: &dyn BrOracle, a: &ActionId) {
        if !self.utilities.contains_key(a) {
            self.utilities.insert(a.clone(), oracle.utilities_of(a));
        }
    }
}

#[derive(Debug, Clone)]
pub struct ImplicitOptions {
    /// Overrides the default `δ`; `1/δ` must be an integer.
    pub delta: Option<f64>,
    pub grid_cap: u128,
    pub max_iterations: usize,
    pub threads: usize,
}

impl Default for ImplicitOptions {
    fn default() -> Self {
        ImplicitOptions { delta: None, grid_cap: DEFAULT_GRID_CAP, max_iterations: 1000, threads: 1 }
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Probe the oracle at every type's posterior on every nonzero grid column.
/// Columns that repeat a posterior already probed (a multiple of a smaller
/// column, or mass on a state the type rules out) are skipped.
pub fn build_action_sets(
    oracle: &dyn BrOracle,
    types: &[BuyerType],
    eps: f64,
    opts: &ImplicitOptions,
) -> Result<(ActionSets, SignalGrid)> {
    let n_states = oracle.num_states();
    let grid = match opts.delta {
        Some(d) => SignalGrid::with_delta(n_states, d)?,
        None => SignalGrid::for_epsilon(n_states, eps)?,
    };
    let columns = grid.num_columns();
    if columns > opts.grid_cap {
        return Err(Error::GridTooLarge { columns, cap: opts.grid_cap });
    }
    for t in types {
        if t.prior.len() != n_states {
            return Err(Error::invalid(format!("prior of type `{}` has wrong length", t.id)));
        }
        check_distribution(&t.prior, &format!("prior of type `{}`", t.id))?;
    }
    info!("probing {} grid columns (delta = 1/{}) for {} types", columns, grid.units, types.len());

    let threads = opts.threads.max(1) as u128;
    let before = oracle.query_count();
    let mut sets = ActionSets::default();
    for t in types {
        let prior = &t.prior;
        let chunk = columns.div_ceil(threads);
        // First grid index at which each action appeared, so the order does
        // not depend on the thread count.
        let found: Vec<HashMap<ActionId, u128>> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..threads)
                .map(|k| {
                    let lo = (k * chunk).min(columns);
                    let hi = ((k + 1) * chunk).min(columns);
                    s.spawn(move || probe_range(oracle, &grid, prior, lo, hi))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("probe thread panicked")).collect()
        });
        let mut first: HashMap<ActionId, u128> = HashMap::new();
        for map in found {
            for (a, idx) in map {
                let e = first.entry(a).or_insert(idx);
                *e = (*e).min(idx);
            }
        }
        let mut actions: Vec<(u128, ActionId)> = first.into_iter().map(|(a, i)| (i, a)).collect();
        actions.sort();
        let actions: Vec<ActionId> = actions.into_iter().map(|(_, a)| a).collect();
        for a in &actions {
            sets.record_utility(oracle, a);
        }
        sets.per_type.push(actions);
    }
    sets.queries = oracle.query_count() - before;
    Ok((sets, grid))
}

fn probe_range(oracle: &dyn BrOracle, grid: &SignalGrid, prior: &[f64], lo: u128, hi: u128) -> HashMap<ActionId, u128> {
    let mut seen = HashMap::new();
    let mut c = vec![0u64; grid.n_states];
    let mut w = vec![0.0; grid.n_states];
    for idx in lo..hi {
        grid.column_units(idx, &mut c);
        if c.iter().zip(prior).any(|(&u, &p)| u > 0 && p == 0.0) {
            continue;
        }
        let g = c.iter().fold(0, |acc, &u| gcd(acc, u));
        if g != 1 {
            continue;
        }
        let mut mass = 0.0;
        for ((wi, &u), &p) in w.iter_mut().zip(&c).zip(prior) {
            *wi = p * u as f64;
            mass += *wi;
        }
        if !(mass > 0.0) {
            continue;
        }
        w.iter_mut().for_each(|x| *x /= mass);
        let (a, _) = oracle.respond(&w);
        seen.entry(a).or_insert(idx);
    }
    seen
}

#[derive(Debug, Clone)]
pub struct ImplicitSolution {
    /// One entry per type; signal `i` of type `θ` recommends `actions.per_type[θ][i]`.
    pub menu: Menu,
    pub revenue: f64,
    pub lp_objective: f64,
    pub audit: AuditReport,
    pub actions: ActionSets,
    pub grid: SignalGrid,
    pub iterations: usize,
    pub cuts: usize,
    /// Oracle calls made, action-set construction included.
    pub queries: u64,
}

/// Near-optimal IC/IR menu using only oracle access.
pub fn solve_implicit(
    oracle: &dyn BrOracle,
    types: &[BuyerType],
    type_probs: &[f64],
    eps: f64,
    opts: &ImplicitOptions,
) -> Result<ImplicitSolution> {
    solve_implicit_with(oracle, types, type_probs, eps, opts, &DenseSimplex::default())
}

pub fn solve_implicit_with(
    oracle: &dyn BrOracle,
    types: &[BuyerType],
    type_probs: &[f64],
    eps: f64,
    opts: &ImplicitOptions,
    backend: &dyn LpBackend,
) -> Result<ImplicitSolution> {
    let start = oracle.query_count();
    let market = OracleMarket::new(oracle, types.to_vec(), type_probs.to_vec())?;
    let (mut actions, grid) = build_action_sets(oracle, types, eps, opts)?;
    let n_types = types.len();
    let n_states = oracle.num_states();

    let mut lp = LinearProgram::new(Sense::Maximize);
    let mut pi: Vec<Vec<Vec<VarId>>> = Vec::with_capacity(n_types);
    let mut t = Vec::with_capacity(n_types);
    for th in 0..n_types {
        let k = actions.per_type[th].len();
        let mut rows = Vec::with_capacity(n_states);
        for w in 0..n_states {
            let mut row = Vec::with_capacity(k);
            for i in 0..k {
                row.push(lp.add_variable(format!("pi_{th}_{w}_{i}"), 0.0, 1.0)?);
            }
            rows.push(row);
        }
        pi.push(rows);
        let price = lp.add_variable(format!("t_{th}"), 0.0, f64::INFINITY)?;
        lp.set_objective(price, type_probs[th]);
        t.push(price);
    }
    let mut z = vec![Vec::with_capacity(n_types); n_types];
    for (th, row) in z.iter_mut().enumerate() {
        for dev in 0..n_types {
            let vars: Vec<VarId> = (0..actions.per_type[dev].len())
                .map(|i| lp.add_variable(format!("z_{i}_{th}_{dev}"), 0.0, f64::INFINITY))
                .collect::<Result<_>>()?;
            row.push(vars);
        }
    }
    let own_value = |th: usize| -> Vec<(VarId, f64)> {
        let prior = &types[th].prior;
        let mut terms = Vec::new();
        for (i, a) in actions.per_type[th].iter().enumerate() {
            let u = &actions.utilities[a];
            for w in 0..n_states {
                terms.push((pi[th][w][i], prior[w] * u[w]));
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
        let mut terms = own_value(th);
        terms.push((t[th], -1.0));
        lp.add_constraint(format!("ir_{th}"), terms, Relation::Ge, market.base_utility(th))?;
        for w in 0..n_states {
            let terms = pi[th][w].iter().map(|&v| (v, 1.0)).collect();
            lp.add_constraint(format!("row_{th}_{w}"), terms, Relation::Eq, 1.0)?;
        }
    }

    let mut cuts: HashSet<(usize, usize, usize, ActionId)> = HashSet::new();
    let mut iterations = 0;
    let sol = loop {
        if iterations >= opts.max_iterations {
            return Err(Error::NonConvergence { iterations });
        }
        iterations += 1;
        let sol = backend.solve(&lp)?;
        if sol.status != LpStatus::Optimal {
            return Err(Error::numerical(format!("implicit LP returned {:?}", sol.status)));
        }
        let mut added = 0;
        for th in 0..n_types {
            let prior = &types[th].prior;
            for dev in 0..n_types {
                for i in 0..actions.per_type[dev].len() {
                    let w: Vec<f64> = (0..n_states).map(|s| prior[s] * sol.value(pi[dev][s][i]).max(0.0)).collect();
                    let mass: f64 = w.iter().sum();
                    if mass <= 1e-15 {
                        continue;
                    }
                    let belief: Vec<f64> = w.iter().map(|x| x / mass).collect();
                    let (a, best) = oracle.respond(&belief);
                    if mass * best - sol.value(z[th][dev][i]) <= CUT_TOL {
                        continue;
                    }
                    if !cuts.insert((th, dev, i, a.clone())) {
                        continue;
                    }
                    actions.record_utility(oracle, &a);
                    let u = &actions.utilities[&a];
                    let mut terms: Vec<(VarId, f64)> =
                        (0..n_states).map(|s| (pi[dev][s][i], -prior[s] * u[s])).collect();
                    terms.push((z[th][dev][i], 1.0));
                    let name = format!("zc_{th}_{dev}_{i}_{}", cuts.len());
                    lp.add_constraint(name, terms, Relation::Ge, 0.0)?;
                    added += 1;
                }
            }
        }
        debug!("cutting planes: round {iterations}, objective {:.9}, {added} new cuts", sol.objective_value);
        if added == 0 {
            break sol;
        }
    };

    let mut entries = Vec::with_capacity(n_types);
    for th in 0..n_types {
        let rows = pi[th].iter().map(|row| row.iter().map(|&v| sol.value(v)).collect()).collect();
        let experiment = Experiment::from_lp_rows(rows)?;
        entries.push(MenuEntry { experiment, price: sol.value(t[th]).max(0.0) });
    }
    let menu = Menu { entries, assignment: Some((0..n_types).map(Some).collect()) };
    let menu = eps_ic_to_ic(&market, &menu, 4.0 * eps)?;
    let audit = audit_menu(&market, &menu)?;
    Ok(ImplicitSolution {
        revenue: audit.revenue,
        lp_objective: sol.objective_value,
        menu,
        audit,
        actions,
        grid,
        iterations,
        cuts: cuts.len(),
        queries: oracle.query_count() - start,
    })
}

/// Shrink a menu for many types to one entry per cell of a prior grid of
/// width `ε/|Ω|²`: each cell offers the priciest experiment bought inside
/// it. The result is then repaired with [`eps_ic_to_ic`] at `2ε`.
pub fn compress_menu<M: BuyerModel + ?Sized>(model: &M, menu: &Menu, eps: f64) -> Result<Menu> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::invalid(format!("epsilon must be positive, got {eps}")));
    }
    let n_states = model.num_states();
    let eps2 = eps / n_states as f64;
    let step = eps2 / n_states as f64;
    let assignment = match &menu.assignment {
        Some(a) => a.clone(),
        None => (0..model.num_types()).map(|ty| choose_from_menu(model, ty, menu).0).collect(),
    };
    if assignment.len() != model.num_types() {
        return Err(Error::invalid("assignment does not cover every type"));
    }
    let mut cell_of = Vec::with_capacity(assignment.len());
    let mut cells: Vec<Vec<i64>> = Vec::new();
    let mut best: Vec<Option<usize>> = Vec::new();
    for (ty, &choice) in assignment.iter().enumerate() {
        let prior = model.prior(ty);
        let key: Vec<i64> = prior[..n_states - 1].iter().map(|p| (p / step + 1e-9).floor() as i64).collect();
        let c = match cells.iter().position(|k| *k == key) {
            Some(c) => c,
            None => {
                cells.push(key);
                best.push(None);
                cells.len() - 1
            }
        };
        if menu.price_of(choice) > menu.price_of(best[c]) {
            best[c] = choice;
        }
        cell_of.push(c);
    }
    let mut kept: Vec<usize> = Vec::new();
    let mut remap = HashMap::new();
    for k in best.iter().flatten() {
        remap.entry(*k).or_insert_with(|| {
            kept.push(*k);
            kept.len() - 1
        });
    }
    let entries = kept.iter().map(|&k| menu.entries[k].clone()).collect();
    let new_assignment = cell_of.iter().map(|&c| best[c].map(|k| remap[&k])).collect();
    let compressed = Menu { entries, assignment: Some(new_assignment) };
    eps_ic_to_ic(model, &compressed, 2.0 * n_states as f64 * eps2)
}

/// Adapt a menu designed for misspecified types to the true ones. Types are
/// paired by index; priors must be within `ε₂` and the type distributions
/// within `ε₁` in total variation. Prices get the `2|Ω|ε₂` discount and
/// every true type re-chooses.
pub fn repair_misspecified<A: BuyerModel + ?Sized, T: BuyerModel + ?Sized>(
    menu: &Menu,
    assumed: &A,
    truth: &T,
    eps1: f64,
    eps2: f64,
) -> Result<Menu> {
    use crate::market::tv_distance;
    if assumed.num_types() != truth.num_types() {
        return Err(Error::PairingMismatch(format!(
            "{} assumed types vs {} true types",
            assumed.num_types(),
            truth.num_types()
        )));
    }
    if assumed.num_states() != truth.num_states() {
        return Err(Error::PairingMismatch("state spaces differ".into()));
    }
    if !(eps1 >= 0.0 && eps2 >= 0.0) {
        return Err(Error::invalid("tolerances must be nonnegative"));
    }
    for ty in 0..truth.num_types() {
        let d = tv_distance(assumed.prior(ty), truth.prior(ty));
        if d > eps2 + 1e-12 {
            return Err(Error::PairingMismatch(format!("type {ty}: prior distance {d} exceeds {eps2}")));
        }
    }
    let fa: Vec<f64> = (0..assumed.num_types()).map(|t| assumed.type_prob(t)).collect();
    let ft: Vec<f64> = (0..truth.num_types()).map(|t| truth.type_prob(t)).collect();
    let d = tv_distance(&fa, &ft);
    if d > eps1 + 1e-12 {
        return Err(Error::PairingMismatch(format!("type distribution distance {d} exceeds {eps1}")));
    }
    if eps1 == 0.0 && eps2 == 0.0 {
        return Ok(menu.clone());
    }
    reprice(truth, menu, 2.0 * truth.num_states() as f64 * eps2)
}
