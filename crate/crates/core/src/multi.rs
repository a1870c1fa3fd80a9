//! Several competing buyers, one of whom may receive information.
//!
//! The seller searches over reduced forms (each buyer's interim view of the
//! experiment and price). Feasibility of a reduced form is handled by column
//! generation over VPM reduced forms, which are exactly the vertices of the
//! feasible set, so the result comes with a lottery over VPM schemes that
//! implements it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::lp::{ConId, DenseSimplex, LinearProgram, LpBackend, LpStatus, Relation, Sense, VarId};
use crate::market::{check_distribution, BuyerType, Experiment};
use crate::Error;

/// Mixture weights below this are dropped from a blueprint.
const WEIGHT_TOL: f64 = 1e-12;

/// Reduced cost a generated column must beat.
const PRICING_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Buyer {
    pub id: String,
    pub types: Vec<BuyerType>,
    pub type_probs: Vec<f64>,
    /// States by actions.
    pub utility: Vec<Vec<f64>>,
}

/// Buyers with independent types over a shared state and action space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiEnvironment {
    pub states: Vec<String>,
    pub actions: Vec<String>,
    pub buyers: Vec<Buyer>,
}

impl MultiEnvironment {
    pub fn new(states: Vec<String>, actions: Vec<String>, buyers: Vec<Buyer>) -> Result<Self> {
        let env = MultiEnvironment { states, actions, buyers };
        env.validate()?;
        Ok(env)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, m) = (self.states.len(), self.actions.len());
        if n == 0 || m == 0 || self.buyers.is_empty() {
            return Err(Error::invalid("need at least one state, action and buyer"));
        }
        for b in &self.buyers {
            if b.types.is_empty() || b.types.len() != b.type_probs.len() {
                return Err(Error::invalid(format!("buyer `{}` needs one probability per type", b.id)));
            }
            check_distribution(&b.type_probs, &format!("type distribution of buyer `{}`", b.id))?;
            // Weights are divided by type probabilities.
            if b.type_probs.iter().any(|&p| !(p > 0.0)) {
                return Err(Error::invalid(format!("buyer `{}` has a type with zero probability", b.id)));
            }
            for t in &b.types {
                if t.prior.len() != n {
                    return Err(Error::invalid(format!("prior of `{}`/`{}` has wrong length", b.id, t.id)));
                }
                check_distribution(&t.prior, &format!("prior of `{}`/`{}`", b.id, t.id))?;
            }
            if b.utility.len() != n || b.utility.iter().any(|r| r.len() != m) {
                return Err(Error::invalid(format!("utility of buyer `{}` must be states by actions", b.id)));
            }
            if b.utility.iter().flatten().any(|u| !(0.0..=1.0).contains(u)) {
                return Err(Error::invalid(format!("utilities of buyer `{}` must lie in [0, 1]", b.id)));
            }
        }
        Ok(())
    }

    pub fn num_buyers(&self) -> usize {
        self.buyers.len()
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn num_types(&self, i: usize) -> usize {
        self.buyers[i].types.len()
    }

    /// `m |Ω| Σ|Θⁱ|`, the dimension of a reduced form.
    pub fn dimension(&self) -> usize {
        self.num_actions() * self.num_states() * self.buyers.iter().map(|b| b.types.len()).sum::<usize>()
    }

    pub fn base_utility(&self, i: usize, ty: usize) -> f64 {
        let b = &self.buyers[i];
        let prior = &b.types[ty].prior;
        (0..self.num_actions())
            .map(|a| prior.iter().zip(&b.utility).map(|(p, row)| p * row[a]).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Every type profile, first buyer varying slowest.
    pub fn profiles(&self) -> Vec<Vec<usize>> {
        let mut out = vec![vec![]];
        for b in &self.buyers {
            out = out
                .into_iter()
                .flat_map(|p: Vec<usize>| {
                    (0..b.types.len()).map(move |t| {
                        let mut q = p.clone();
                        q.push(t);
                        q
                    })
                })
                .collect();
        }
        out
    }

    pub fn profile_prob(&self, profile: &[usize]) -> f64 {
        profile.iter().zip(&self.buyers).map(|(&t, b)| b.type_probs[t]).product()
    }
}

/// Interim allocation `pi_hat[i][θ][ω][j]`, win probabilities and prices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedForm {
    pub pi_hat: Vec<Vec<Vec<Vec<f64>>>>,
    pub p_hat: Vec<Vec<f64>>,
    pub t_hat: Vec<Vec<f64>>,
}

impl ReducedForm {
    pub fn zeros(env: &MultiEnvironment) -> Self {
        let (n, m) = (env.num_states(), env.num_actions());
        ReducedForm {
            pi_hat: env.buyers.iter().map(|b| vec![vec![vec![0.0; m]; n]; b.types.len()]).collect(),
            p_hat: env.buyers.iter().map(|b| vec![0.0; b.types.len()]).collect(),
            t_hat: env.buyers.iter().map(|b| vec![0.0; b.types.len()]).collect(),
        }
    }

    /// Largest breach of `π̂ ≥ 0`, `Σ_j π̂_{ω,j} = p̂` and `0 ≤ p̂ ≤ 1`.
    pub fn max_invariant_violation(&self) -> f64 {
        let mut worst = 0.0f64;
        for (pis, ps) in self.pi_hat.iter().zip(&self.p_hat) {
            for (pi, &p) in pis.iter().zip(ps) {
                worst = worst.max(-p).max(p - 1.0);
                for row in pi {
                    worst = worst.max((row.iter().sum::<f64>() - p).abs());
                    worst = row.iter().fold(worst, |w, &x| w.max(-x));
                }
            }
        }
        worst
    }

    /// Largest coordinate difference in `π̂`.
    pub fn max_pi_distance(&self, other: &ReducedForm) -> f64 {
        let a = self.pi_hat.iter().flatten().flatten().flatten();
        let b = other.pi_hat.iter().flatten().flatten().flatten();
        a.zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }
}

/// Weight vectors `X[i][θ][ω][a]` defining a VPM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VpmWeights {
    pub x: Vec<Vec<Vec<Vec<f64>>>>,
}

impl VpmWeights {
    pub fn zeros(env: &MultiEnvironment) -> Self {
        VpmWeights { x: ReducedForm::zeros(env).pi_hat }
    }

    fn check(&self, env: &MultiEnvironment) -> Result<()> {
        let ok = self.x.len() == env.num_buyers()
            && self.x.iter().zip(&env.buyers).all(|(xi, b)| {
                xi.len() == b.types.len()
                    && xi.iter().all(|t| {
                        t.len() == env.num_states()
                            && t.iter().all(|r| r.len() == env.num_actions() && r.iter().all(|v| v.is_finite()))
                    })
            });
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("VPM weights do not match the environment"))
        }
    }

    /// Virtual value `vⁱ(θ) = Σ_ω max_a X̃_{ω,a}` and the per-state argmax.
    fn virtual_value(&self, env: &MultiEnvironment, i: usize, ty: usize) -> (f64, Vec<usize>) {
        let f = env.buyers[i].type_probs[ty];
        let mut v = 0.0;
        let mut picks = Vec::with_capacity(env.num_states());
        for row in &self.x[i][ty] {
            let mut best = 0;
            for (a, &x) in row.iter().enumerate() {
                if x > row[best] {
                    best = a;
                }
            }
            v += row[best] / f;
            picks.push(best);
        }
        (v, picks)
    }
}

/// Ex-post outcome of a VPM for one type profile.
#[derive(Debug, Clone, PartialEq)]
pub struct VpmOutcome {
    pub winner: Option<usize>,
    /// States by recommended actions, one-hot rows; only for the winner.
    pub experiment: Option<Experiment>,
}

/// Allocate to the largest positive virtual value (lowest buyer on ties);
/// the winner's signal in state `ω` recommends `argmax_a X̃_{ω,a}`.
pub fn vpm_allocate(env: &MultiEnvironment, w: &VpmWeights, profile: &[usize]) -> Result<VpmOutcome> {
    w.check(env)?;
    if profile.len() != env.num_buyers() || profile.iter().zip(&env.buyers).any(|(&t, b)| t >= b.types.len()) {
        return Err(Error::invalid("type profile does not match the buyers"));
    }
    let mut best: Option<(usize, f64, Vec<usize>)> = None;
    for (i, &ty) in profile.iter().enumerate() {
        let (v, picks) = w.virtual_value(env, i, ty);
        if v > best.as_ref().map_or(0.0, |b| b.1) {
            best = Some((i, v, picks));
        }
    }
    Ok(match best {
        None => VpmOutcome { winner: None, experiment: None },
        Some((i, _, picks)) => {
            let m = env.num_actions();
            let matrix = picks.iter().map(|&j| (0..m).map(|a| if a == j { 1.0 } else { 0.0 }).collect()).collect();
            VpmOutcome { winner: Some(i), experiment: Some(Experiment::new(matrix)?) }
        }
    })
}

/// Reduced form of the VPM for `w`, prices zero.
pub fn rvpm(env: &MultiEnvironment, w: &VpmWeights) -> Result<ReducedForm> {
    w.check(env)?;
    let values: Vec<Vec<(f64, Vec<usize>)>> =
        (0..env.num_buyers()).map(|i| (0..env.num_types(i)).map(|t| w.virtual_value(env, i, t)).collect()).collect();
    let mut rf = ReducedForm::zeros(env);
    for i in 0..env.num_buyers() {
        for (ty, (v, picks)) in values[i].iter().enumerate() {
            if !(*v > 0.0) {
                continue;
            }
            let mut win = 1.0;
            for (l, vl) in values.iter().enumerate() {
                if l == i {
                    continue;
                }
                let probs = &env.buyers[l].type_probs;
                let beaten: f64 =
                    vl.iter().zip(probs).filter(|((x, _), _)| *x < *v || (*x == *v && l > i)).map(|(_, p)| p).sum();
                win *= beaten;
            }
            rf.p_hat[i][ty] = win;
            for (row, &j) in rf.pi_hat[i][ty].iter_mut().zip(picks) {
                row[j] = win;
            }
        }
    }
    Ok(rf)
}

/// Reduced form by averaging ex-post outcomes over every profile.
pub fn reduced_form_by_enumeration(env: &MultiEnvironment, w: &VpmWeights) -> Result<ReducedForm> {
    let mut rf = ReducedForm::zeros(env);
    for profile in env.profiles() {
        let out = vpm_allocate(env, w, &profile)?;
        let (Some(i), Some(e)) = (out.winner, out.experiment) else { continue };
        let ty = profile[i];
        let q = env.profile_prob(&profile) / env.buyers[i].type_probs[ty];
        rf.p_hat[i][ty] += q;
        for (s, row) in e.rows().iter().enumerate() {
            for (j, x) in row.iter().enumerate() {
                rf.pi_hat[i][ty][s][j] += q * x;
            }
        }
    }
    Ok(rf)
}

/// A lottery over VPMs plus interim prices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanismBlueprint {
    pub mixture: Vec<(f64, VpmWeights)>,
    /// `t_hat[i][θ]`.
    pub interim_prices: Vec<Vec<f64>>,
}

impl MechanismBlueprint {
    pub fn validate(&self, env: &MultiEnvironment) -> Result<()> {
        if self.mixture.is_empty() {
            return Err(Error::invalid("blueprint has an empty mixture"));
        }
        let weights: Vec<f64> = self.mixture.iter().map(|m| m.0).collect();
        check_distribution(&weights, "mixture weights")?;
        for (_, w) in &self.mixture {
            w.check(env)?;
        }
        let shape_ok = self.interim_prices.len() == env.num_buyers()
            && self.interim_prices.iter().zip(&env.buyers).all(|(t, b)| t.len() == b.types.len());
        if !shape_ok || self.interim_prices.iter().flatten().any(|t| !t.is_finite()) {
            return Err(Error::invalid("interim prices do not match the buyers"));
        }
        Ok(())
    }

    /// `Σ λ_k rvpm(w_k)` with the blueprint's prices.
    pub fn reduced_form(&self, env: &MultiEnvironment) -> Result<ReducedForm> {
        let mut rf = ReducedForm::zeros(env);
        for (lambda, w) in &self.mixture {
            let r = rvpm(env, w)?;
            add_scaled(&mut rf, &r, *lambda);
        }
        rf.t_hat = self.interim_prices.clone();
        Ok(rf)
    }
}

fn add_scaled(acc: &mut ReducedForm, r: &ReducedForm, s: f64) {
    for (a, b) in acc.pi_hat.iter_mut().flatten().flatten().flatten().zip(r.pi_hat.iter().flatten().flatten().flatten())
    {
        *a += s * b;
    }
    for (a, b) in acc.p_hat.iter_mut().flatten().zip(r.p_hat.iter().flatten()) {
        *a += s * b;
    }
}

/// Interim BIC / IIR audit of a reduced form. Both sides use the buyer's
/// best response to every signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiAudit {
    pub max_bic_violation: f64,
    pub max_iir_violation: f64,
    pub revenue: f64,
}

pub fn audit_reduced_form(env: &MultiEnvironment, rf: &ReducedForm) -> MultiAudit {
    let m = env.num_actions();
    let mut bic = 0.0f64;
    let mut iir = 0.0f64;
    let mut revenue = 0.0;
    for (i, b) in env.buyers.iter().enumerate() {
        // Interim value of type `ty` facing the allocation reported by `rep`.
        let value = |ty: usize, rep: usize| -> f64 {
            let prior = &b.types[ty].prior;
            let mut v = (1.0 - rf.p_hat[i][rep]) * env.base_utility(i, ty);
            for j in 0..m {
                v += (0..m)
                    .map(|k| {
                        (0..env.num_states()).map(|s| prior[s] * rf.pi_hat[i][rep][s][j] * b.utility[s][k]).sum::<f64>()
                    })
                    .fold(f64::NEG_INFINITY, f64::max);
            }
            v - rf.t_hat[i][rep]
        };
        for ty in 0..b.types.len() {
            let truth = value(ty, ty);
            for rep in 0..b.types.len() {
                bic = bic.max(value(ty, rep) - truth);
            }
            iir = iir.max(env.base_utility(i, ty) - truth);
            revenue += b.type_probs[ty] * rf.t_hat[i][ty];
        }
    }
    MultiAudit { max_bic_violation: bic.max(0.0), max_iir_violation: iir.max(0.0), revenue }
}

#[derive(Debug, Clone)]
pub struct MultiSolution {
    pub reduced_form: ReducedForm,
    pub blueprint: MechanismBlueprint,
    pub revenue: f64,
    pub audit: MultiAudit,
    /// Master LP solves.
    pub iterations: usize,
    pub columns_generated: usize,
}

/// Options for [`solve_reduced_lp`].
#[derive(Debug, Clone)]
pub struct MultiOptions {
    pub max_iterations: usize,
}

impl Default for MultiOptions {
    fn default() -> Self {
        MultiOptions { max_iterations: 500 }
    }
}

struct RfVars {
    pi: Vec<Vec<Vec<Vec<VarId>>>>,
    p: Vec<Vec<VarId>>,
    t: Vec<Vec<VarId>>,
}

/// Interim allocation, win probability and price variables plus the
/// BIC, deviation-bound, IIR and consistency rows shared by both LPs.
fn add_interim_block(env: &MultiEnvironment, lp: &mut LinearProgram) -> Result<RfVars> {
    let (n, m) = (env.num_states(), env.num_actions());
    let mut vars = RfVars { pi: vec![], p: vec![], t: vec![] };
    for (i, b) in env.buyers.iter().enumerate() {
        let mut pis = vec![];
        let mut ps = vec![];
        let mut ts = vec![];
        for ty in 0..b.types.len() {
            let mut rows = vec![];
            for s in 0..n {
                let row = (0..m)
                    .map(|j| lp.add_variable(format!("pi_{i}_{ty}_{s}_{j}"), 0.0, 1.0))
                    .collect::<Result<Vec<_>>>()?;
                rows.push(row);
            }
            pis.push(rows);
            ps.push(lp.add_variable(format!("p_{i}_{ty}"), 0.0, 1.0)?);
            let t = lp.add_variable(format!("t_{i}_{ty}"), 0.0, f64::INFINITY)?;
            lp.set_objective(t, b.type_probs[ty]);
            ts.push(t);
        }
        vars.pi.push(pis);
        vars.p.push(ps);
        vars.t.push(ts);
    }
    for (i, b) in env.buyers.iter().enumerate() {
        let k = b.types.len();
        // Obedient value minus what is lost by winning: Σ θπ̂u - p̂·u(θ).
        let own = |ty: usize| -> Vec<(VarId, f64)> {
            let prior = &b.types[ty].prior;
            let mut terms = vec![];
            for s in 0..n {
                for j in 0..m {
                    terms.push((vars.pi[i][ty][s][j], prior[s] * b.utility[s][j]));
                }
            }
            terms.push((vars.p[i][ty], -env.base_utility(i, ty)));
            terms
        };
        for ty in 0..k {
            for rep in 0..k {
                let z: Vec<VarId> = (0..m)
                    .map(|j| lp.add_variable(format!("z_{i}_{ty}_{rep}_{j}"), 0.0, f64::INFINITY))
                    .collect::<Result<_>>()?;
                let mut terms = own(ty);
                terms.push((vars.t[i][ty], -1.0));
                terms.extend(z.iter().map(|&v| (v, -1.0)));
                terms.push((vars.p[i][rep], env.base_utility(i, ty)));
                terms.push((vars.t[i][rep], 1.0));
                lp.add_constraint(format!("bic_{i}_{ty}_{rep}"), terms, Relation::Ge, 0.0)?;
                let prior = &b.types[ty].prior;
                for (j, &zj) in z.iter().enumerate() {
                    for a in 0..m {
                        let mut terms: Vec<(VarId, f64)> =
                            (0..n).map(|s| (vars.pi[i][rep][s][j], -prior[s] * b.utility[s][a])).collect();
                        terms.push((zj, 1.0));
                        lp.add_constraint(format!("zb_{i}_{ty}_{rep}_{j}_{a}"), terms, Relation::Ge, 0.0)?;
                    }
                }
            }
            let mut terms = own(ty);
            terms.push((vars.t[i][ty], -1.0));
            lp.add_constraint(format!("iir_{i}_{ty}"), terms, Relation::Ge, 0.0)?;
            for s in 0..n {
                let mut terms: Vec<(VarId, f64)> = vars.pi[i][ty][s].iter().map(|&v| (v, 1.0)).collect();
                terms.push((vars.p[i][ty], -1.0));
                lp.add_constraint(format!("pc_{i}_{ty}_{s}"), terms, Relation::Eq, 0.0)?;
            }
        }
    }
    Ok(vars)
}

/// Flattened `π̂` coordinates in the order of the coupling rows.
fn flat(rf: &ReducedForm) -> Vec<f64> {
    rf.pi_hat.iter().flatten().flatten().flatten().copied().collect()
}

fn add_vertex_column(
    lp: &mut LinearProgram,
    coupling: &[ConId],
    convex: ConId,
    k: usize,
    r: &ReducedForm,
) -> Result<VarId> {
    let mut entries: Vec<(ConId, f64)> =
        coupling.iter().zip(flat(r)).filter(|(_, x)| *x != 0.0).map(|(&c, x)| (c, -x)).collect();
    entries.push((convex, 1.0));
    lp.add_column_by_id(format!("lambda_{k}"), (0.0, f64::INFINITY), 0.0, &entries)
}

/// Always give buyer `i` the state-revealing experiment (in recommendation
/// form) and nobody else anything.
fn full_information_weights(env: &MultiEnvironment, i: usize) -> VpmWeights {
    let mut w = VpmWeights::zeros(env);
    let b = &env.buyers[i];
    for (ty, x) in w.x[i].iter_mut().enumerate() {
        for (s, row) in x.iter_mut().enumerate() {
            for (a, v) in row.iter_mut().enumerate() {
                *v = b.type_probs[ty] * (1.0 + b.utility[s][a]);
            }
        }
    }
    w
}

/// Revenue-optimal BIC/IIR reduced form and a VPM lottery implementing it.
pub fn solve_reduced_lp(env: &MultiEnvironment) -> Result<MultiSolution> {
    solve_reduced_lp_with(env, &MultiOptions::default(), &DenseSimplex::default())
}

pub fn solve_reduced_lp_with(
    env: &MultiEnvironment,
    opts: &MultiOptions,
    backend: &dyn LpBackend,
) -> Result<MultiSolution> {
    env.validate()?;
    let (n, m) = (env.num_states(), env.num_actions());
    let mut lp = LinearProgram::new(Sense::Maximize);
    let vars = add_interim_block(env, &mut lp)?;
    let mut coupling = Vec::with_capacity(env.dimension());
    for (i, b) in env.buyers.iter().enumerate() {
        for ty in 0..b.types.len() {
            for s in 0..n {
                for j in 0..m {
                    let row = vec![(vars.pi[i][ty][s][j], 1.0)];
                    coupling.push(lp.add_constraint(format!("cp_{i}_{ty}_{s}_{j}"), row, Relation::Eq, 0.0)?);
                }
            }
        }
    }
    let convex = lp.add_constraint("convex", vec![], Relation::Eq, 1.0)?;

    let mut weights = vec![VpmWeights::zeros(env)];
    weights.extend((0..env.num_buyers()).map(|i| full_information_weights(env, i)));
    let mut vertices = vec![];
    let mut lambdas = vec![];
    for w in &weights {
        let r = rvpm(env, w)?;
        lambdas.push(add_vertex_column(&mut lp, &coupling, convex, lambdas.len(), &r)?);
        vertices.push(r);
    }

    let mut iterations = 0;
    let sol = loop {
        if iterations >= opts.max_iterations {
            return Err(Error::NonConvergence { iterations });
        }
        iterations += 1;
        let sol = backend.solve(&lp)?;
        if sol.status != LpStatus::Optimal {
            return Err(Error::numerical(format!("reduced-form master returned {:?}", sol.status)));
        }
        let Some(duals) = &sol.duals else {
            return Err(Error::BackendUnavailable(format!("{} does not report duals", backend.name())));
        };
        let y: Vec<f64> = coupling.iter().map(|c| duals[c.0]).collect();
        let mu = duals[convex.0];
        // Price out the best vertex for the coupling duals.
        let mut w = VpmWeights::zeros(env);
        for (dst, &src) in w.x.iter_mut().flatten().flatten().flatten().zip(&y) {
            *dst = src;
        }
        let r = rvpm(env, &w)?;
        let gain: f64 = flat(&r).iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() - mu;
        log::debug!(
            "reduced-form master {iterations}: objective {:.9}, best reduced cost {gain:.3e}",
            sol.objective_value
        );
        if gain <= PRICING_TOL || vertices.iter().any(|v| *v == r) {
            break sol;
        }
        lambdas.push(add_vertex_column(&mut lp, &coupling, convex, lambdas.len(), &r)?);
        vertices.push(r);
        weights.push(w);
    };

    let mut rf = ReducedForm::zeros(env);
    for (i, b) in env.buyers.iter().enumerate() {
        for ty in 0..b.types.len() {
            for s in 0..n {
                for j in 0..m {
                    rf.pi_hat[i][ty][s][j] = sol.value(vars.pi[i][ty][s][j]).max(0.0);
                }
            }
            rf.p_hat[i][ty] = sol.value(vars.p[i][ty]).clamp(0.0, 1.0);
            rf.t_hat[i][ty] = sol.value(vars.t[i][ty]).max(0.0);
        }
    }
    let active: Vec<usize> = (0..lambdas.len()).filter(|&k| sol.value(lambdas[k]) > WEIGHT_TOL).collect();
    let mixture = caratheodory(
        env,
        &active.iter().map(|&k| &vertices[k]).collect::<Vec<_>>(),
        &active.iter().map(|&k| sol.value(lambdas[k])).collect::<Vec<_>>(),
        backend,
    )?;
    let blueprint = MechanismBlueprint {
        mixture: mixture.into_iter().map(|(l, idx)| (l, weights[active[idx]].clone())).collect(),
        interim_prices: rf.t_hat.clone(),
    };
    let audit = audit_reduced_form(env, &rf);
    Ok(MultiSolution {
        revenue: audit.revenue,
        reduced_form: rf,
        blueprint,
        audit,
        iterations,
        columns_generated: vertices.len(),
    })
}

/// Re-express `Σ λ_k r_k` as a basic solution over the same vertices, so at
/// most `dim + 1` weights are positive. Returns (weight, vertex index).
fn caratheodory(
    env: &MultiEnvironment,
    vertices: &[&ReducedForm],
    lambda: &[f64],
    backend: &dyn LpBackend,
) -> Result<Vec<(f64, usize)>> {
    let total: f64 = lambda.iter().sum();
    let flats: Vec<Vec<f64>> = vertices.iter().map(|v| flat(v)).collect();
    let dim = env.dimension();
    if vertices.len() <= dim + 1 {
        return Ok(lambda.iter().enumerate().map(|(k, &l)| (l / total, k)).collect());
    }
    let target: Vec<f64> =
        (0..dim).map(|c| flats.iter().zip(lambda).map(|(f, l)| f[c] * l).sum::<f64>() / total).collect();
    let mut lp = LinearProgram::new(Sense::Minimize);
    let vars: Vec<VarId> =
        (0..vertices.len()).map(|k| lp.add_variable(format!("l_{k}"), 0.0, f64::INFINITY)).collect::<Result<_>>()?;
    for c in 0..dim {
        let terms: Vec<(VarId, f64)> =
            vars.iter().zip(&flats).filter(|(_, f)| f[c] != 0.0).map(|(&v, f)| (v, f[c])).collect();
        if terms.is_empty() {
            continue;
        }
        lp.add_constraint(format!("c_{c}"), terms, Relation::Eq, target[c])?;
    }
    lp.add_constraint("sum", vars.iter().map(|&v| (v, 1.0)).collect(), Relation::Eq, 1.0)?;
    let sol = backend.solve(&lp)?;
    if sol.status != LpStatus::Optimal {
        return Err(Error::numerical(format!("decomposition LP returned {:?}", sol.status)));
    }
    let kept: Vec<(f64, usize)> =
        vars.iter().enumerate().map(|(k, &v)| (sol.value(v).max(0.0), k)).filter(|(l, _)| *l > WEIGHT_TOL).collect();
    let s: f64 = kept.iter().map(|k| k.0).sum();
    Ok(kept.into_iter().map(|(l, k)| (l / s, k)).collect())
}

/// Largest product of type-space sizes [`brute_force_multi`] accepts.
pub const BRUTE_FORCE_MAX_PROFILES: usize = 256;

/// Optimal revenue from the ex-post LP over every type profile, with
/// per-profile allocations and prices depending on own type only.
pub fn brute_force_multi(env: &MultiEnvironment) -> Result<f64> {
    env.validate()?;
    let count = env.buyers.iter().map(|b| b.types.len()).try_fold(1usize, |acc, k| acc.checked_mul(k));
    match count {
        Some(c) if c <= BRUTE_FORCE_MAX_PROFILES => {}
        _ => return Err(Error::TooLarge(format!("more than {BRUTE_FORCE_MAX_PROFILES} type profiles"))),
    }
    let (n, m, nb) = (env.num_states(), env.num_actions(), env.num_buyers());
    let profiles = env.profiles();
    let mut lp = LinearProgram::new(Sense::Maximize);
    // pi[q][i][s][j] and p[q][i] for profile q.
    let mut pi = vec![];
    let mut p = vec![];
    for (q, _) in profiles.iter().enumerate() {
        let mut pq = vec![];
        let mut piq = vec![];
        for i in 0..nb {
            let rows = (0..n)
                .map(|s| {
                    (0..m).map(|j| lp.add_variable(format!("x_{q}_{i}_{s}_{j}"), 0.0, 1.0)).collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            piq.push(rows);
            pq.push(lp.add_variable(format!("p_{q}_{i}"), 0.0, 1.0)?);
        }
        pi.push(piq);
        p.push(pq);
    }
    let t: Vec<Vec<VarId>> = env
        .buyers
        .iter()
        .enumerate()
        .map(|(i, b)| {
            (0..b.types.len())
                .map(|ty| {
                    let v = lp.add_variable(format!("t_{i}_{ty}"), 0.0, f64::INFINITY)?;
                    lp.set_objective(v, b.type_probs[ty]);
                    Ok(v)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let index_of = |profile: &[usize]| profiles.iter().position(|q| q == profile).expect("profile");

    for (q, _) in profiles.iter().enumerate() {
        for i in 0..nb {
            for s in 0..n {
                let mut terms: Vec<(VarId, f64)> = pi[q][i][s].iter().map(|&v| (v, 1.0)).collect();
                terms.push((p[q][i], -1.0));
                lp.add_constraint(format!("f_{q}_{i}_{s}"), terms, Relation::Eq, 0.0)?;
            }
        }
        lp.add_constraint(format!("one_{q}"), p[q].iter().map(|&v| (v, 1.0)).collect(), Relation::Le, 1.0)?;
    }

    for (i, b) in env.buyers.iter().enumerate() {
        // Profiles of the other buyers with their probability, and a way to
        // splice buyer i's type back in.
        let others: Vec<(Vec<usize>, f64)> =
            profiles.iter().filter(|q| q[i] == 0).map(|q| (q.clone(), env.profile_prob(q) / b.type_probs[0])).collect();
        let with = |rest: &[usize], ty: usize| {
            let mut q = rest.to_vec();
            q[i] = ty;
            index_of(&q)
        };
        let own = |ty: usize| -> Vec<(VarId, f64)> {
            let prior = &b.types[ty].prior;
            let u0 = env.base_utility(i, ty);
            let mut terms = vec![];
            for (rest, f) in &others {
                let q = with(rest, ty);
                for s in 0..n {
                    for j in 0..m {
                        terms.push((pi[q][i][s][j], f * prior[s] * b.utility[s][j]));
                    }
                }
                terms.push((p[q][i], -f * u0));
            }
            terms
        };
        for ty in 0..b.types.len() {
            let prior = &b.types[ty].prior;
            for rep in 0..b.types.len() {
                let mut terms = own(ty);
                terms.push((t[i][ty], -1.0));
                // Deviation side: the (1-p)u(θ) term and per-profile z.
                for (rest, f) in &others {
                    terms.push((p[with(rest, rep)][i], f * env.base_utility(i, ty)));
                }
                terms.push((t[i][rep], 1.0));
                for j in 0..m {
                    let mut zsum = vec![];
                    let mut bound_terms = vec![];
                    for (r, (rest, f)) in others.iter().enumerate() {
                        let z = lp.add_variable(format!("z_{i}_{ty}_{rep}_{j}_{r}"), 0.0, f64::INFINITY)?;
                        terms.push((z, -f));
                        zsum.push((z, *f));
                        bound_terms.push((with(rest, rep), *f));
                    }
                    for a in 0..m {
                        let mut row = zsum.clone();
                        for &(q, f) in &bound_terms {
                            for s in 0..n {
                                row.push((pi[q][i][s][j], -f * prior[s] * b.utility[s][a]));
                            }
                        }
                        lp.add_constraint(format!("zb_{i}_{ty}_{rep}_{j}_{a}"), row, Relation::Ge, 0.0)?;
                    }
                }
                lp.add_constraint(format!("bic_{i}_{ty}_{rep}"), terms, Relation::Ge, 0.0)?;
            }
            let mut terms = own(ty);
            terms.push((t[i][ty], -1.0));
            lp.add_constraint(format!("iir_{i}_{ty}"), terms, Relation::Ge, 0.0)?;
        }
    }
    let sol = DenseSimplex::default().solve(&lp)?;
    if sol.status != LpStatus::Optimal {
        return Err(Error::numerical(format!("ex-post LP returned {:?}", sol.status)));
    }
    Ok(sol.objective_value)
}

/// What happens in one run of a blueprint.
#[derive(Debug, Clone, PartialEq)]
pub struct MechanismOutcome {
    /// Mixture component drawn.
    pub component: usize,
    pub winner: Option<usize>,
    /// Winner's experiment: states by recommended actions, one-hot rows.
    pub experiment: Option<Experiment>,
    /// Per buyer, the interim price of the reported type.
    pub payments: Vec<f64>,
}

impl MechanismOutcome {
    /// Recommendation sent to the winner in `state`.
    pub fn signal(&self, state: usize) -> Option<usize> {
        let e = self.experiment.as_ref()?;
        (0..e.num_signals()).find(|&j| e.get(state, j) > 0.0)
    }
}

/// Draw a mixture component from `seed`, run its VPM on the reported
/// profile and charge interim prices.
pub fn run_mechanism(
    blueprint: &MechanismBlueprint,
    env: &MultiEnvironment,
    profile: &[usize],
    seed: u64,
) -> Result<MechanismOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut component = blueprint.mixture.len() - 1;
    for (k, (l, _)) in blueprint.mixture.iter().enumerate() {
        acc += l;
        if u < acc {
            component = k;
            break;
        }
    }
    let out = vpm_allocate(env, &blueprint.mixture[component].1, profile)?;
    let payments = profile.iter().enumerate().map(|(i, &ty)| blueprint.interim_prices[i][ty]).collect();
    Ok(MechanismOutcome { component, winner: out.winner, experiment: out.experiment, payments })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn buyer(id: &str, priors: Vec<Vec<f64>>, probs: Vec<f64>, utility: Vec<Vec<f64>>) -> Buyer {
        let types =
            priors.into_iter().enumerate().map(|(k, prior)| BuyerType { id: format!("{id}{k}"), prior }).collect();
        Buyer { id: id.into(), types, type_probs: probs, utility }
    }

    fn eye() -> Vec<Vec<f64>> {
        vec![vec![1.0, 0.0], vec![0.0, 1.0]]
    }

    fn env2(buyers: Vec<Buyer>) -> MultiEnvironment {
        MultiEnvironment::new(vec!["s0".into(), "s1".into()], vec!["a0".into(), "a1".into()], buyers).unwrap()
    }

    fn weights_with(env: &MultiEnvironment, mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> VpmWeights {
        let mut w = VpmWeights::zeros(env);
        for (i, xi) in w.x.iter_mut().enumerate() {
            for (t, x) in xi.iter_mut().enumerate() {
                for (s, row) in x.iter_mut().enumerate() {
                    for (a, v) in row.iter_mut().enumerate() {
                        *v = f(i, t, s, a);
                    }
                }
            }
        }
        w
    }

    #[test]
    fn allocation_examples() {
        let env = env2(vec![
            buyer("a", vec![vec![0.5, 0.5]], vec![1.0], eye()),
            buyer("b", vec![vec![0.5, 0.5]], vec![1.0], eye()),
        ]);
        let w = weights_with(&env, |i, _, s, a| if s == a { [1.0, 0.5][i] } else { 0.0 });
        let out = vpm_allocate(&env, &w, &[0, 0]).unwrap();
        assert_eq!(out.winner, Some(0));
        assert_eq!(out.experiment.unwrap(), Experiment::fully_informative(2));
        let tie = weights_with(&env, |_, _, s, a| if s == a { 1.0 } else { 0.0 });
        assert_eq!(vpm_allocate(&env, &tie, &[0, 0]).unwrap().winner, Some(0));
        let flat = weights_with(&env, |i, _, _, a| if i == 0 && a == 1 { 1.0 } else { 0.0 });
        let out = vpm_allocate(&env, &flat, &[0, 0]).unwrap();
        assert_eq!(out.experiment.unwrap().rows(), &[vec![0.0, 1.0], vec![0.0, 1.0]]);
        assert_eq!(vpm_allocate(&env, &VpmWeights::zeros(&env), &[0, 0]).unwrap().winner, None);
    }

    #[test]
    fn rvpm_win_probabilities() {
        let single = env2(vec![buyer("a", vec![vec![0.5, 0.5], vec![0.9, 0.1]], vec![0.3, 0.7], eye())]);
        let w = weights_with(&single, |_, _, _, _| 0.2);
        assert_eq!(rvpm(&single, &w).unwrap().p_hat, vec![vec![1.0, 1.0]]);

        // Buyer a's virtual values {3, 1}, buyer b's {2, 2}, uniform types.
        let env = env2(vec![
            buyer("a", vec![vec![0.5, 0.5], vec![0.6, 0.4]], vec![0.5, 0.5], eye()),
            buyer("b", vec![vec![0.5, 0.5], vec![0.3, 0.7]], vec![0.5, 0.5], eye()),
        ]);
        let v = [[3.0, 1.0], [2.0, 2.0]];
        let w = weights_with(&env, |i, t, s, a| if s == a { 0.5 * v[i][t] / 2.0 } else { 0.0 });
        let rf = rvpm(&env, &w).unwrap();
        assert_eq!(rf.p_hat, vec![vec![1.0, 0.0], vec![0.5, 0.5]]);
        assert_eq!(rf, reduced_form_by_enumeration(&env, &w).unwrap());
    }

    #[test]
    fn rvpm_matches_enumeration_on_random_weights() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let env = MultiEnvironment::new(
            vec!["s0".into(), "s1".into()],
            vec!["a0".into(), "a1".into(), "a2".into()],
            (0..3)
                .map(|b| {
                    let priors = (0..3).map(|_| {
                        let x: f64 = rng.gen();
                        vec![x, 1.0 - x]
                    });
                    buyer(
                        &format!("b{b}"),
                        priors.collect(),
                        vec![0.2, 0.3, 0.5],
                        vec![vec![1.0, 0.0, 0.6], vec![0.0, 1.0, 0.6]],
                    )
                })
                .collect(),
        )
        .unwrap();
        for _ in 0..50 {
            // Coarse values force ties between buyers.
            let w = weights_with(&env, |_, _, _, _| (rng.gen_range(-2..4) as f64) * 0.25);
            let a = rvpm(&env, &w).unwrap();
            let b = reduced_form_by_enumeration(&env, &w).unwrap();
            assert!(a.max_pi_distance(&b) <= 1e-12);
            assert!(a.max_invariant_violation() <= 1e-12);
        }
    }

    #[test]
    fn single_buyer_matches_explicit() {
        let priors = vec![vec![0.5, 0.5], vec![0.85, 0.15]];
        let env = env2(vec![buyer("a", priors.clone(), vec![0.4, 0.6], eye())]);
        let sol = solve_reduced_lp(&env).unwrap();
        let single = crate::market::Environment::simple(eye(), priors, vec![0.4, 0.6]).unwrap();
        let exact = crate::explicit::solve_explicit(&single).unwrap();
        assert!((sol.revenue - exact.revenue).abs() <= 1e-6, "{} vs {}", sol.revenue, exact.revenue);
        assert!((brute_force_multi(&env).unwrap() - exact.revenue).abs() <= 1e-6);
    }

    #[test]
    fn two_buyers_match_brute_force_and_decompose() {
        let env = env2(vec![
            buyer("a", vec![vec![0.5, 0.5], vec![0.8, 0.2]], vec![0.5, 0.5], eye()),
            buyer("b", vec![vec![0.3, 0.7], vec![0.6, 0.4]], vec![0.3, 0.7], vec![vec![0.9, 0.1], vec![0.2, 0.8]]),
        ]);
        let sol = solve_reduced_lp(&env).unwrap();
        let brute = brute_force_multi(&env).unwrap();
        assert!((sol.revenue - brute).abs() <= 1e-6, "{} vs {brute}", sol.revenue);
        assert!(sol.audit.max_bic_violation <= 1e-6 && sol.audit.max_iir_violation <= 1e-6);
        let mix = sol.blueprint.reduced_form(&env).unwrap();
        assert!(mix.max_pi_distance(&sol.reduced_form) <= 1e-6);
        assert!(sol.blueprint.mixture.len() <= env.dimension() + 1);
        sol.blueprint.validate(&env).unwrap();
    }

    #[test]
    fn brute_force_is_symmetric_and_capped() {
        let a = buyer("a", vec![vec![0.5, 0.5], vec![0.8, 0.2]], vec![0.5, 0.5], eye());
        let b = buyer("b", vec![vec![0.3, 0.7]], vec![1.0], eye());
        let x = brute_force_multi(&env2(vec![a.clone(), b.clone()])).unwrap();
        let y = brute_force_multi(&env2(vec![b, a.clone()])).unwrap();
        assert!((x - y).abs() <= 1e-7);
        let big: Vec<Vec<f64>> = (0..17).map(|k| vec![k as f64 / 16.0, 1.0 - k as f64 / 16.0]).collect();
        let many = buyer("m", big, vec![1.0 / 17.0; 17], eye());
        let env = env2(vec![many.clone(), many]);
        assert!(matches!(brute_force_multi(&env), Err(Error::TooLarge(_))));
    }

    #[test]
    fn payments_ignore_component() {
        let env = env2(vec![
            buyer("a", vec![vec![0.5, 0.5], vec![0.8, 0.2]], vec![0.5, 0.5], eye()),
            buyer("b", vec![vec![0.4, 0.6]], vec![1.0], eye()),
        ]);
        let sol = solve_reduced_lp(&env).unwrap();
        for seed in 0..100 {
            let out = run_mechanism(&sol.blueprint, &env, &[1, 0], seed).unwrap();
            assert_eq!(out.payments, vec![sol.reduced_form.t_hat[0][1], sol.reduced_form.t_hat[1][0]]);
            assert_eq!(out, run_mechanism(&sol.blueprint, &env, &[1, 0], seed).unwrap());
        }
        let one = MechanismBlueprint {
            mixture: vec![(1.0, full_information_weights(&env, 1))],
            interim_prices: sol.blueprint.interim_prices.clone(),
        };
        for seed in 0..10 {
            let out = run_mechanism(&one, &env, &[0, 0], seed).unwrap();
            assert_eq!((out.winner, out.signal(0), out.signal(1)), (Some(1), Some(0), Some(1)));
        }
    }
}
