//! Risk-averse market clearing with Arrow-Debreu securities.
//!
//! Clearing minimises the sum of agents' risk-adjusted disutilities subject
//! to the usual dispatch constraints plus a security-clearing row per
//! scenario whose dual, sign-normalised, is the risk-adjusted probability
//! measure pi. An explicit risk set enters as one epigraph row per extreme
//! point; a parametric spec enters through the exact tail-epigraph
//! encoding, which stays linear at any scenario count where extreme-point
//! enumeration would explode. After the solve every agent's disutility is
//! certified against the worst-case-measure oracle.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::dispatch::{add_scenario_block, DispatchError, DispatchSolution, ScenarioBlock, XRef};
use crate::lp::{self, LinearProgram, LpError, LpStatus, RowSense, VarId};
use crate::model::MarketInstance;
use crate::risk::{worst_case_measure, RiskError, RiskInput, RiskSpec};

pub const ISO_AGENT: &str = "iso";
/// Tolerance of the post-solve disutility certification.
pub const CUT_TOL: f64 = 1e-7;
/// Default cap for explicit extreme-point enumeration elsewhere in the
/// pipeline; the clearing itself uses the compact epigraph encoding.
pub const ENUMERATION_BOUND: usize = 5000;
pub const MEMBERSHIP_TOL: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum RiskMarketError {
    #[error(transparent)]
    Dispatch(#[from] DispatchError),
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error("lp failure: {0}")]
    Lp(#[from] LpError),
    #[error("lp returned status {0:?}")]
    BadStatus(LpStatus),
    #[error("intersection of the participants' risk sets is empty")]
    EmptyIntersection,
    #[error("risk epigraph certification failed after {0} solve(s) (violation {1:.3e})")]
    CertificationFailed(usize, f64),
    #[error("risk block missing or malformed: {0}")]
    BadRiskBlock(String),
    #[error("pi fails the membership check for agent `{agent}` (residual {residual:.3e})")]
    Membership { agent: String, residual: f64 },
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
}

/// One market participant and its risk set.
#[derive(Debug, Clone)]
pub struct AgentRisk {
    pub agent: String,
    pub input: RiskInput,
}

#[derive(Debug, Clone, Serialize)]
pub struct RiskMarketSolution {
    #[serde(flatten)]
    pub dispatch: DispatchSolution,
    /// Risk-adjusted payoff per agent, ISO keyed as "iso".
    pub theta: BTreeMap<String, f64>,
    /// Security book per agent, one entry per scenario.
    pub securities: BTreeMap<String, Vec<f64>>,
    /// Risk-adjusted probability measure (clearing-row duals, normalised).
    pub pi: Vec<f64>,
    pub objective: f64,
}

/// How each agent's risk set is represented while clearing: explicit sets
/// become one epigraph row per extreme point; parametric specs use the
/// exact tail-epigraph encoding (an auxiliary quantile variable and one
/// excess variable per scenario and level), which stays linear for any
/// spectrum and needs no lazy rows.
enum AgentSet {
    Explicit(Vec<Vec<f64>>),
    TailEpigraph(RiskSpec),
}

struct AgentState {
    name: String,
    set: AgentSet,
    theta: VarId,
    w: Vec<VarId>,
}

/// Reads the per-agent risk assignment out of the instance. A "system"
/// entry becomes the default for every agent; generators default to
/// risk-neutral otherwise; a missing ISO entry inherits the least
/// risk-averse generator's set (smallest tail loading kappa (1-beta_bar)).
pub fn agent_risks_from_instance(inst: &MarketInstance) -> Result<Vec<AgentRisk>, RiskMarketError> {
    let block = inst
        .risk
        .as_ref()
        .ok_or_else(|| RiskMarketError::BadRiskBlock("instance has no risk block".into()))?;
    let map: BTreeMap<String, RiskInput> = serde_json::from_value(block.clone())
        .map_err(|e| RiskMarketError::BadRiskBlock(e.to_string()))?;
    let system = map.get("system");

    let mut out = Vec::new();
    for g in &inst.generators {
        let input = map
            .get(&g.id)
            .or(system)
            .cloned()
            .unwrap_or(RiskInput::Spec(RiskSpec::risk_neutral()));
        out.push(AgentRisk {
            agent: g.id.clone(),
            input,
        });
    }
    let iso = match map.get(ISO_AGENT).or(system) {
        Some(input) => input.clone(),
        None => least_risk_averse(&out),
    };
    out.push(AgentRisk {
        agent: ISO_AGENT.into(),
        input: iso,
    });
    for a in &out {
        match &a.input {
            RiskInput::Spec(s) => s.validate()?,
            RiskInput::Explicit(p) => p.validate()?,
        }
    }
    Ok(out)
}

fn least_risk_averse(agents: &[AgentRisk]) -> RiskInput {
    let mut best: Option<(f64, &RiskInput)> = None;
    for a in agents {
        if let RiskInput::Spec(s) = &a.input {
            let loading = s.kappa * (1.0 - s.beta_bar());
            if best.as_ref().map_or(true, |(l, _)| loading < *l) {
                best = Some((loading, &a.input));
            }
        }
    }
    best.map(|(_, i)| i.clone()).unwrap_or_else(|| {
        agents
            .first()
            .map(|a| a.input.clone())
            .unwrap_or(RiskInput::Spec(RiskSpec::risk_neutral()))
    })
}

/// LP feasibility test for a common measure in every agent's risk set.
/// With `target` fixed it certifies membership instead, returning the L1
/// residual of the best representation; `None` means infeasible.
fn intersection_lp(
    risks: &[AgentRisk],
    probs: &[f64],
    target: Option<&[f64]>,
) -> Result<Option<f64>, RiskMarketError> {
    let n = probs.len();
    let mut lp = LinearProgram::new();
    let mu: Vec<Option<VarId>> = match target {
        None => (0..n)
            .map(|_| lp.add_var(0.0, 0.0, 1.0).map(Some))
            .collect::<Result<_, _>>()?,
        Some(_) => vec![None; n],
    };
    if target.is_none() {
        let ent: Vec<(VarId, f64)> = mu.iter().map(|v| (v.unwrap(), 1.0)).collect();
        lp.add_row(RowSense::Eq, 1.0, &ent)?;
    }
    for a in risks {
        match &a.input {
            RiskInput::Spec(spec) => {
                if spec.kappa == 0.0 {
                    // Risk set is the singleton {P}.
                    for w in 0..n {
                        add_match_row(&mut lp, &mu, target, w, probs[w], &[])?;
                    }
                    continue;
                }
                // mu(w) = (1-kappa) P(w) + kappa sum_j w_j nu_j(w).
                let mut levels = Vec::new();
                for sp in &spec.spectrum {
                    if sp.weight == 0.0 {
                        continue;
                    }
                    let nus: Vec<VarId> = (0..n)
                        .map(|w| lp.add_var(0.0, 0.0, probs[w] / sp.beta))
                        .collect::<Result<_, _>>()?;
                    let ent: Vec<(VarId, f64)> = nus.iter().map(|&v| (v, 1.0)).collect();
                    lp.add_row(RowSense::Eq, 1.0, &ent)?;
                    levels.push((sp.weight, nus));
                }
                for w in 0..n {
                    let terms: Vec<(VarId, f64)> = levels
                        .iter()
                        .map(|(wt, nus)| (nus[w], spec.kappa * wt))
                        .collect();
                    add_match_row(
                        &mut lp,
                        &mu,
                        target,
                        w,
                        (1.0 - spec.kappa) * probs[w],
                        &terms,
                    )?;
                }
            }
            RiskInput::Explicit(set) => {
                let lambdas: Vec<VarId> = set
                    .extreme_points
                    .iter()
                    .map(|_| lp.add_var(0.0, 0.0, 1.0))
                    .collect::<Result<_, _>>()?;
                let ent: Vec<(VarId, f64)> = lambdas.iter().map(|&v| (v, 1.0)).collect();
                lp.add_row(RowSense::Eq, 1.0, &ent)?;
                for w in 0..n {
                    let terms: Vec<(VarId, f64)> = lambdas
                        .iter()
                        .enumerate()
                        .map(|(m, &v)| (v, set.extreme_points[m][w]))
                        .collect();
                    add_match_row(&mut lp, &mu, target, w, 0.0, &terms)?;
                }
            }
        }
    }
    let sol = lp::solve(&lp);
    match sol.status {
        LpStatus::Optimal => Ok(Some(sol.objective)),
        LpStatus::Infeasible => Ok(None),
        s => Err(RiskMarketError::BadStatus(s)),
    }
}

/// Adds the row `constant + terms = mu(w)`; with a fixed target an L1
/// deviation pair keeps the system feasible and its mass, minimised through
/// the objective, is the membership residual.
fn add_match_row(
    lp: &mut LinearProgram,
    mu: &[Option<VarId>],
    target: Option<&[f64]>,
    w: usize,
    constant: f64,
    terms: &[(VarId, f64)],
) -> Result<(), LpError> {
    let mut ent: Vec<(VarId, f64)> = terms.to_vec();
    let rhs = match target {
        None => {
            ent.push((mu[w].unwrap(), -1.0));
            -constant
        }
        Some(t) => {
            let dp = lp.add_var(1.0, 0.0, f64::INFINITY)?;
            let dm = lp.add_var(1.0, 0.0, f64::INFINITY)?;
            ent.push((dp, 1.0));
            ent.push((dm, -1.0));
            t[w] - constant
        }
    };
    lp.add_row(RowSense::Eq, rhs, &ent)?;
    Ok(())
}

/// Certifies that `pi` lies in every agent's risk set; returns the L1
/// residual per agent.
pub fn membership_residuals(
    risks: &[AgentRisk],
    probs: &[f64],
    pi: &[f64],
) -> Result<Vec<(String, f64)>, RiskMarketError> {
    let mut out = Vec::new();
    for a in risks {
        let single = [a.clone()];
        let r = intersection_lp(&single, probs, Some(pi))?.ok_or_else(|| {
            RiskMarketError::Membership {
                agent: a.agent.clone(),
                residual: f64::NAN,
            }
        })?;
        out.push((a.agent.clone(), r));
    }
    Ok(out)
}

fn effective_r(r: f64) -> f64 {
    if r.is_infinite() {
        0.0
    } else {
        r
    }
}

/// One epigraph row `theta_a >= E_m[loss_a]` for a generator agent, where
/// `loss_i(w) = c_i X_i + r_u U_i + r_v V_i - W_i(w)`, or
/// `theta_k >= E_m[-W_k]` for the ISO.
fn add_risk_row(
    lp: &mut LinearProgram,
    inst: &MarketInstance,
    blocks: &[ScenarioBlock],
    agent: &AgentState,
    gen_index: Option<usize>,
    measure: &[f64],
) -> Result<(), LpError> {
    let mut ent: Vec<(VarId, f64)> = vec![(agent.theta, 1.0)];
    for (s, m) in measure.iter().enumerate() {
        if *m == 0.0 {
            continue;
        }
        if let Some(g) = gen_index {
            let gen = &inst.generators[g];
            if gen.c != 0.0 {
                ent.push((blocks[s].dispatch[g], -m * gen.c));
            }
            if effective_r(gen.r_u) != 0.0 {
                ent.push((blocks[s].up[g], -m * gen.r_u));
            }
            if effective_r(gen.r_v) != 0.0 {
                ent.push((blocks[s].down[g], -m * gen.r_v));
            }
        }
        ent.push((agent.w[s], *m));
    }
    lp.add_row(RowSense::Ge, 0.0, &ent)?;
    Ok(())
}

/// Entries of `scale * loss_a(w)` in LP coefficients, appended to `ent`.
fn push_loss_entries(
    ent: &mut Vec<(VarId, f64)>,
    inst: &MarketInstance,
    blocks: &[ScenarioBlock],
    agent: &AgentState,
    gen_index: Option<usize>,
    s: usize,
    scale: f64,
) {
    if scale == 0.0 {
        return;
    }
    if let Some(g) = gen_index {
        let gen = &inst.generators[g];
        if gen.c != 0.0 {
            ent.push((blocks[s].dispatch[g], scale * gen.c));
        }
        if effective_r(gen.r_u) != 0.0 {
            ent.push((blocks[s].up[g], scale * gen.r_u));
        }
        if effective_r(gen.r_v) != 0.0 {
            ent.push((blocks[s].down[g], scale * gen.r_v));
        }
    }
    ent.push((agent.w[s], -scale));
}

/// Exact epigraph of the mean/tail-deviation disutility:
///
/// ```text
/// theta >= (1-kappa) E_P[loss] + kappa sum_j w_j (eta_j + E_P[t_j]/beta_j)
/// t_jw >= loss(w) - eta_j,  t >= 0
/// ```
///
/// Minimising theta drives each eta_j to a beta_j-quantile of the loss, so
/// the bound equals the agent's risk value exactly.
fn add_tail_epigraph(
    lp: &mut LinearProgram,
    inst: &MarketInstance,
    blocks: &[ScenarioBlock],
    agent: &AgentState,
    gen_index: Option<usize>,
    spec: &RiskSpec,
    probs: &[f64],
) -> Result<(), LpError> {
    let n_scen = blocks.len();
    let mut main: Vec<(VarId, f64)> = vec![(agent.theta, 1.0)];
    for s in 0..n_scen {
        push_loss_entries(
            &mut main,
            inst,
            blocks,
            agent,
            gen_index,
            s,
            -(1.0 - spec.kappa) * probs[s],
        );
    }
    for sp in &spec.spectrum {
        if sp.weight == 0.0 || spec.kappa == 0.0 {
            continue;
        }
        let eta = lp.add_var(0.0, f64::NEG_INFINITY, f64::INFINITY)?;
        main.push((eta, -spec.kappa * sp.weight));
        for s in 0..n_scen {
            let t = lp.add_var(0.0, 0.0, f64::INFINITY)?;
            main.push((t, -spec.kappa * sp.weight * probs[s] / sp.beta));
            // t >= loss(w) - eta.
            let mut row = vec![(t, 1.0), (eta, 1.0)];
            push_loss_entries(&mut row, inst, blocks, agent, gen_index, s, -1.0);
            lp.add_row(RowSense::Ge, 0.0, &row)?;
        }
    }
    lp.add_row(RowSense::Ge, 0.0, &main)?;
    Ok(())
}

fn agent_loss(
    inst: &MarketInstance,
    sol: &lp::LpSolution,
    blocks: &[ScenarioBlock],
    agent: &AgentState,
    gen_index: Option<usize>,
) -> Vec<f64> {
    (0..blocks.len())
        .map(|s| {
            let w = sol.value(agent.w[s]);
            match gen_index {
                Some(g) => {
                    let gen = &inst.generators[g];
                    gen.c * sol.value(blocks[s].dispatch[g])
                        + effective_r(gen.r_u) * sol.value(blocks[s].up[g])
                        + effective_r(gen.r_v) * sol.value(blocks[s].down[g])
                        - w
                }
                None => -w,
            }
        })
        .collect()
}

/// Clears the risk market. Every generator plus the ISO holds a security
/// book W; epigraph rows tie each agent's theta to its risk set, added
/// lazily once the exact extreme-point list would exceed
/// [`ENUMERATION_BOUND`].
pub fn solve_raslp(
    inst: &MarketInstance,
    risks: &[AgentRisk],
) -> Result<RiskMarketSolution, RiskMarketError> {
    let violations = crate::model::validate_instance(inst);
    if !violations.is_empty() {
        return Err(DispatchError::Invalid(violations).into());
    }
    let probs = inst.probs();
    let n_scen = inst.scenarios.len();

    if intersection_lp(risks, &probs, None)?.is_none() {
        return Err(RiskMarketError::EmptyIntersection);
    }

    let mut lp = LinearProgram::new();
    let mut x_vars = Vec::with_capacity(inst.generators.len());
    for (g, _) in inst.generators.iter().enumerate() {
        let ub = (0..n_scen)
            .map(|t| inst.capacity(g, t))
            .fold(0.0f64, f64::max);
        x_vars.push(lp.add_var(0.0, 0.0, ub)?);
    }
    let mut blocks = Vec::with_capacity(n_scen);
    for s in 0..n_scen {
        let block = add_scenario_block(&mut lp, inst, s, 0.0, XRef::Vars(&x_vars))?;
        // Stage costs live in the epigraph rows; shedding keeps a direct
        // risk-neutral penalty as a guard so it can never be free.
        for &sv in &block.shed {
            lp.set_objective(sv, probs[s] * inst.network.voll);
        }
        blocks.push(block);
    }

    let mut agents = Vec::with_capacity(risks.len());
    for a in risks {
        let theta = lp.add_var(1.0, f64::NEG_INFINITY, f64::INFINITY)?;
        let w: Vec<VarId> = (0..n_scen)
            .map(|_| lp.add_var(0.0, f64::NEG_INFINITY, f64::INFINITY))
            .collect::<Result<_, _>>()?;
        let set = match &a.input {
            RiskInput::Explicit(p) => AgentSet::Explicit(p.extreme_points.clone()),
            RiskInput::Spec(spec) => AgentSet::TailEpigraph(spec.clone()),
        };
        agents.push(AgentState {
            name: a.agent.clone(),
            set,
            theta,
            w,
        });
    }

    // Security clearing, one row per scenario; dual is pi.
    let mut clearing_rows = Vec::with_capacity(n_scen);
    for s in 0..n_scen {
        let ent: Vec<(VarId, f64)> = agents.iter().map(|a| (a.w[s], 1.0)).collect();
        clearing_rows.push(lp.add_row(RowSense::Eq, 0.0, &ent)?);
    }

    for (idx, agent) in agents.iter().enumerate() {
        let gen_index = (idx < inst.generators.len()).then_some(idx);
        match &agent.set {
            AgentSet::Explicit(points) => {
                for m in points {
                    add_risk_row(&mut lp, inst, &blocks, agent, gen_index, m)?;
                }
            }
            AgentSet::TailEpigraph(spec) => {
                add_tail_epigraph(&mut lp, inst, &blocks, agent, gen_index, spec, &probs)?;
            }
        }
    }

    let sol = lp::solve(&lp);
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Unbounded => return Err(RiskMarketError::EmptyIntersection),
        s => return Err(RiskMarketError::BadStatus(s)),
    }

    // Certify every theta against the separation oracle: the epigraph
    // encoding must reproduce the exact risk value of the realised book.
    let mut worst_violation: f64 = 0.0;
    for (idx, agent) in agents.iter().enumerate() {
        let gen_index = (idx < inst.generators.len()).then_some(idx);
        let loss = agent_loss(inst, &sol, &blocks, agent, gen_index);
        let value = match &agent.set {
            AgentSet::TailEpigraph(spec) => {
                let profit: Vec<f64> = loss.iter().map(|v| -v).collect();
                let mu = worst_case_measure(&profit, &probs, spec)?;
                mu.iter().zip(&loss).map(|(m, l)| m * l).sum::<f64>()
            }
            AgentSet::Explicit(points) => points
                .iter()
                .map(|m| m.iter().zip(&loss).map(|(mw, l)| mw * l).sum::<f64>())
                .fold(f64::NEG_INFINITY, f64::max),
        };
        worst_violation = worst_violation.max(value - sol.value(agent.theta));
    }
    if worst_violation > CUT_TOL * (1.0 + sol.objective.abs()) {
        return Err(RiskMarketError::CertificationFailed(1, worst_violation));
    }

    // Extraction.
    let precommit: Vec<f64> = x_vars.iter().map(|&v| sol.value(v)).collect();
    let scenarios: Vec<crate::dispatch::ScenarioDispatch> = (0..n_scen)
        .map(|s| extract(inst, s, &blocks[s], &sol, probs[s]))
        .collect();
    for sd in &scenarios {
        let total: f64 = sd.shed.iter().sum();
        if total > crate::dispatch::SHED_TOL {
            return Err(DispatchError::InfeasibleScenario {
                scenario: sd.scenario.clone(),
                shed: total,
            }
            .into());
        }
    }

    let mut theta = BTreeMap::new();
    let mut securities = BTreeMap::new();
    for a in &agents {
        theta.insert(a.name.clone(), sol.value(a.theta));
        securities.insert(a.name.clone(), a.w.iter().map(|&v| sol.value(v)).collect());
    }

    // pi: clearing duals, sign-normalised to a probability vector.
    let raw: Vec<f64> = clearing_rows.iter().map(|&r| sol.dual(r)).collect();
    let total: f64 = raw.iter().sum();
    let pi: Vec<f64> = if total < 0.0 {
        raw.iter().map(|v| (-v).max(0.0) / (-total)).collect()
    } else if total > 0.0 {
        raw.iter().map(|v| v.max(0.0) / total).collect()
    } else {
        probs.clone()
    };
    for (agent, residual) in membership_residuals(risks, &probs, &pi)? {
        if residual > MEMBERSHIP_TOL {
            return Err(RiskMarketError::Membership { agent, residual });
        }
    }

    let expected_cost = {
        let mut e = 0.0;
        for (s, sd) in scenarios.iter().enumerate() {
            e += probs[s] * sd.cost;
        }
        e
    };
    let dispatch = DispatchSolution {
        precommit,
        scenarios,
        objective: expected_cost,
    };
    Ok(RiskMarketSolution {
        dispatch,
        theta,
        securities,
        pi,
        objective: sol.objective,
    })
}

fn extract(
    inst: &MarketInstance,
    s: usize,
    block: &ScenarioBlock,
    sol: &lp::LpSolution,
    prob: f64,
) -> crate::dispatch::ScenarioDispatch {
    let n_gen = inst.generators.len();
    let dispatch: Vec<f64> = block.dispatch.iter().map(|&v| sol.value(v)).collect();
    let up: Vec<f64> = block.up.iter().map(|&v| sol.value(v)).collect();
    let down: Vec<f64> = block.down.iter().map(|&v| sol.value(v)).collect();
    let mut cost = 0.0;
    for g in 0..n_gen {
        let gen = &inst.generators[g];
        cost += gen.c * dispatch[g] + effective_r(gen.r_u) * up[g] + effective_r(gen.r_v) * down[g];
    }
    let mut shed = vec![0.0; inst.network.nodes.len()];
    let mut k = 0;
    for (n, node) in inst.network.nodes.iter().enumerate() {
        if inst.demand(node, s) > 0.0 {
            shed[n] = sol.value(block.shed[k]);
            k += 1;
        }
    }
    crate::dispatch::ScenarioDispatch {
        scenario: inst.scenarios[s].id.clone(),
        dispatch,
        up,
        down,
        flows: block.flows.iter().map(|&v| sol.value(v)).collect(),
        angles: block.angles.iter().map(|&v| sol.value(v)).collect(),
        shed,
        prices: block
            .balance_rows
            .iter()
            .map(|&r| sol.dual(r) / prob)
            .collect(),
        nonant_duals: block
            .nonant_rows
            .iter()
            .map(|&r| sol.dual(r) / prob)
            .collect(),
        cost,
    }
}

/// `W_a(realised) - sum_w pi(w) W_a(w)` per agent; the book sums to zero
/// across agents in every scenario, so settlements sum to zero too.
pub fn security_settlement(
    solution: &RiskMarketSolution,
    scenario: &str,
) -> Result<BTreeMap<String, f64>, RiskMarketError> {
    let idx = solution
        .dispatch
        .scenarios
        .iter()
        .position(|s| s.scenario == scenario)
        .ok_or_else(|| RiskMarketError::UnknownScenario(scenario.into()))?;
    let mut out = BTreeMap::new();
    for (agent, w) in &solution.securities {
        let forward: f64 = w.iter().zip(&solution.pi).map(|(wv, p)| wv * p).sum();
        out.insert(agent.clone(), w[idx] - forward);
    }
    Ok(out)
}

/// System disutility of a per-scenario cost vector: the upper-tail mean
/// mixture `(1-kappa) E[cost] + kappa sum_j w_j UpperTail_{beta_j}[cost]`,
/// evaluated as the profit disutility of `-cost`.
pub fn risk_adjusted_system_objective(
    costs: &[f64],
    probs: &[f64],
    spec: &RiskSpec,
) -> Result<f64, RiskError> {
    let z: Vec<f64> = costs.iter().map(|c| -c).collect();
    crate::risk::rho_disutility(&z, probs, spec)
}
