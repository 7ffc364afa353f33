//! The stochastic dispatch mechanism: pre-commitment via a two-stage
//! stochastic LP, per-scenario recourse with nodal prices, settlement and
//! price-sensitivity probes.
//!
//! Sign conventions: the nonanticipativity row is written `X - U + V = x`
//! per generator and scenario, so its dual `rho` is the marginal
//! second-stage cost of pre-commitment, `-r_u <= rho <= r_v`, and the
//! interior-dispatch KKT condition reads `lambda + rho = c`. Nodal balance
//! rows are `>=`, so `0 <= lambda`, and load shedding priced at VOLL caps
//! `lambda <= VOLL`.

use serde::Serialize;
use thiserror::Error;

use crate::lp::{self, DualPreference, LinearProgram, LpError, LpStatus, RowId, RowSense, VarId};
use crate::model::{EmpiricalDistribution, MarketInstance, ModelError, Violation};

pub const SHED_TOL: f64 = 1e-7;
const BIND_TOL: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum DispatchError {
    #[error("instance invalid: {0:?}")]
    Invalid(Vec<Violation>),
    #[error("scenario `{scenario}` infeasible: {shed:.6} MW of demand unservable")]
    InfeasibleScenario { scenario: String, shed: f64 },
    #[error("lp failure: {0}")]
    Lp(#[from] LpError),
    #[error("lp returned status {0:?}")]
    BadStatus(LpStatus),
    #[error("unknown generator `{0}`")]
    UnknownGenerator(String),
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("negative pre-commitment {0}")]
    NegativePrecommit(f64),
    #[error("settlement leaves the ISO out of pocket by {0}")]
    IsoOutOfPocket(f64),
}

/// Zero for a pinned deviation variable even when its price is infinite.
fn dev_cost(r: f64, amount: f64) -> f64 {
    if r.is_infinite() {
        0.0
    } else {
        r * amount
    }
}

/// Per-scenario second-stage outcome with prices.
#[derive(Debug, Clone, Serialize)]
pub struct ScenarioDispatch {
    pub scenario: String,
    /// X_i per generator.
    pub dispatch: Vec<f64>,
    /// U_i per generator.
    pub up: Vec<f64>,
    /// V_i per generator.
    pub down: Vec<f64>,
    /// Flow per line, positive in the from->to direction.
    pub flows: Vec<f64>,
    /// Bus angles, reference node pinned at zero.
    pub angles: Vec<f64>,
    /// Load shed per node; nonzero values mean the scenario is infeasible
    /// without curtailment.
    pub shed: Vec<f64>,
    /// lambda_n per node, in [0, VOLL].
    pub prices: Vec<f64>,
    /// rho_i per generator, in [-r_u, r_v].
    pub nonant_duals: Vec<f64>,
    /// c X + r_u U + r_v V in this scenario.
    pub cost: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DispatchSolution {
    /// x_i per generator.
    pub precommit: Vec<f64>,
    pub scenarios: Vec<ScenarioDispatch>,
    /// Expected cost.
    pub objective: f64,
}

impl DispatchSolution {
    /// Distribution of one generator's dispatch across scenarios.
    pub fn dispatch_distribution(
        &self,
        inst: &MarketInstance,
        generator: &str,
    ) -> Result<EmpiricalDistribution, DispatchError> {
        let g = inst
            .generator_index(generator)
            .ok_or_else(|| DispatchError::UnknownGenerator(generator.into()))?;
        let values: Vec<f64> = self.scenarios.iter().map(|s| s.dispatch[g]).collect();
        let probs = inst.probs();
        Ok(EmpiricalDistribution::new(&values, &probs)?)
    }
}

/// Column/row layout of one scenario inside a larger LP.
pub(crate) struct ScenarioBlock {
    pub dispatch: Vec<VarId>,
    pub up: Vec<VarId>,
    pub down: Vec<VarId>,
    pub flows: Vec<VarId>,
    pub angles: Vec<VarId>,
    pub shed: Vec<VarId>,
    pub balance_rows: Vec<RowId>,
    pub nonant_rows: Vec<RowId>,
}

pub(crate) enum XRef<'a> {
    Vars(&'a [VarId]),
    Fixed(&'a [f64]),
}

/// Adds second-stage variables and constraints for scenario `s`.
/// `cost_scale` multiplies the stage cost into the LP objective (P(w) for
/// the stochastic program, 1 for a recourse solve, 0 when the cost lives in
/// epigraph rows instead).
pub(crate) fn add_scenario_block(
    lp: &mut LinearProgram,
    inst: &MarketInstance,
    s: usize,
    cost_scale: f64,
    x: XRef<'_>,
) -> Result<ScenarioBlock, LpError> {
    let net = &inst.network;
    let n_gen = inst.generators.len();
    let n_node = net.nodes.len();
    let n_line = net.lines.len();

    let mut dispatch = Vec::with_capacity(n_gen);
    let mut up = Vec::with_capacity(n_gen);
    let mut down = Vec::with_capacity(n_gen);
    for (g, gen) in inst.generators.iter().enumerate() {
        let cap = inst.capacity(g, s);
        dispatch.push(lp.add_var(cost_scale * gen.c, 0.0, cap)?);
        let (u_ub, u_cost) = if gen.r_u.is_infinite() {
            (0.0, 0.0)
        } else {
            (cap, cost_scale * gen.r_u)
        };
        up.push(lp.add_var(u_cost, 0.0, u_ub)?);
        let x_ub = match x {
            XRef::Vars(_) => (0..inst.scenarios.len())
                .map(|t| inst.capacity(g, t))
                .fold(0.0f64, f64::max),
            XRef::Fixed(vals) => vals[g].max(0.0),
        };
        let (v_ub, v_cost) = if gen.r_v.is_infinite() {
            (0.0, 0.0)
        } else {
            (x_ub, cost_scale * gen.r_v)
        };
        down.push(lp.add_var(v_cost, 0.0, v_ub)?);
    }

    let mut flows = Vec::with_capacity(n_line);
    let mut angles = Vec::with_capacity(n_node);
    if n_line > 0 {
        for l in &net.lines {
            let cap = l.capacity;
            let (lo, hi) = if cap.is_finite() {
                (-cap, cap)
            } else {
                (f64::NEG_INFINITY, f64::INFINITY)
            };
            flows.push(lp.add_var(0.0, lo, hi)?);
        }
        for n in 0..n_node {
            let (lo, hi) = if n == 0 {
                (0.0, 0.0)
            } else {
                (f64::NEG_INFINITY, f64::INFINITY)
            };
            angles.push(lp.add_var(0.0, lo, hi)?);
        }
        for (l, line) in net.lines.iter().enumerate() {
            let from = net.node_index(&line.from).expect("validated");
            let to = net.node_index(&line.to).expect("validated");
            lp.add_row(
                RowSense::Eq,
                0.0,
                &[
                    (flows[l], 1.0),
                    (angles[from], -line.susceptance),
                    (angles[to], line.susceptance),
                ],
            )?;
        }
    }

    let mut shed = Vec::with_capacity(n_node);
    for node in &net.nodes {
        let d = inst.demand(node, s);
        if d > 0.0 {
            shed.push(Some(lp.add_var(cost_scale * net.voll, 0.0, d)?));
        } else {
            shed.push(None);
        }
    }

    let mut balance_rows = Vec::with_capacity(n_node);
    for (n, node) in net.nodes.iter().enumerate() {
        let mut ent: Vec<(VarId, f64)> = Vec::new();
        for (g, gen) in inst.generators.iter().enumerate() {
            if gen.node == *node {
                ent.push((dispatch[g], 1.0));
            }
        }
        for (l, line) in net.lines.iter().enumerate() {
            if line.to == *node {
                ent.push((flows[l], 1.0));
            }
            if line.from == *node {
                ent.push((flows[l], -1.0));
            }
        }
        if let Some(sv) = shed[n] {
            ent.push((sv, 1.0));
        }
        balance_rows.push(lp.add_row(RowSense::Ge, inst.demand(node, s), &ent)?);
    }

    let mut nonant_rows = Vec::with_capacity(n_gen);
    for g in 0..n_gen {
        let mut ent = vec![(dispatch[g], 1.0), (up[g], -1.0), (down[g], 1.0)];
        let rhs = match x {
            XRef::Vars(xs) => {
                ent.push((xs[g], -1.0));
                0.0
            }
            XRef::Fixed(vals) => vals[g],
        };
        nonant_rows.push(lp.add_row(RowSense::Eq, rhs, &ent)?);
    }

    Ok(ScenarioBlock {
        dispatch,
        up,
        down,
        flows,
        angles,
        shed: shed.into_iter().flatten().collect(),
        balance_rows,
        nonant_rows,
    })
}

fn shed_by_node(
    inst: &MarketInstance,
    s: usize,
    block: &ScenarioBlock,
    sol: &lp::LpSolution,
) -> Vec<f64> {
    let mut out = vec![0.0; inst.network.nodes.len()];
    let mut k = 0;
    for (n, node) in inst.network.nodes.iter().enumerate() {
        if inst.demand(node, s) > 0.0 {
            out[n] = sol.value(block.shed[k]);
            k += 1;
        }
    }
    out
}

fn extract_scenario(
    inst: &MarketInstance,
    s: usize,
    block: &ScenarioBlock,
    sol: &lp::LpSolution,
    dual_scale: f64,
) -> ScenarioDispatch {
    let n_gen = inst.generators.len();
    let dispatch: Vec<f64> = block.dispatch.iter().map(|&v| sol.value(v)).collect();
    let up: Vec<f64> = block.up.iter().map(|&v| sol.value(v)).collect();
    let down: Vec<f64> = block.down.iter().map(|&v| sol.value(v)).collect();
    let mut cost = 0.0;
    for g in 0..n_gen {
        let gen = &inst.generators[g];
        cost += gen.c * dispatch[g] + dev_cost(gen.r_u, up[g]) + dev_cost(gen.r_v, down[g]);
    }
    ScenarioDispatch {
        scenario: inst.scenarios[s].id.clone(),
        dispatch,
        up,
        down,
        flows: block.flows.iter().map(|&v| sol.value(v)).collect(),
        angles: block.angles.iter().map(|&v| sol.value(v)).collect(),
        shed: shed_by_node(inst, s, block, sol),
        prices: block
            .balance_rows
            .iter()
            .map(|&r| sol.dual(r) / dual_scale)
            .collect(),
        nonant_duals: block
            .nonant_rows
            .iter()
            .map(|&r| sol.dual(r) / dual_scale)
            .collect(),
        cost,
    }
}

fn check_shed(scenarios: &[ScenarioDispatch]) -> Result<(), DispatchError> {
    for sd in scenarios {
        let total: f64 = sd.shed.iter().sum();
        if total > SHED_TOL {
            return Err(DispatchError::InfeasibleScenario {
                scenario: sd.scenario.clone(),
                shed: total,
            });
        }
    }
    Ok(())
}

/// Solves the two-stage stochastic dispatch program. Prices come back as
/// per-scenario $/MWh (scenario-row duals divided by P). Scenarios whose
/// demand cannot be met without shedding are reported as infeasible.
pub fn solve_slp(inst: &MarketInstance) -> Result<DispatchSolution, DispatchError> {
    let violations = crate::model::validate_instance(inst);
    if !violations.is_empty() {
        return Err(DispatchError::Invalid(violations));
    }
    let mut lp = LinearProgram::new();
    let n_gen = inst.generators.len();
    let mut x_vars = Vec::with_capacity(n_gen);
    for (g, _) in inst.generators.iter().enumerate() {
        let ub = (0..inst.scenarios.len())
            .map(|t| inst.capacity(g, t))
            .fold(0.0f64, f64::max);
        x_vars.push(lp.add_var(0.0, 0.0, ub)?);
    }
    let probs = inst.probs();
    let mut blocks = Vec::with_capacity(inst.scenarios.len());
    for s in 0..inst.scenarios.len() {
        blocks.push(add_scenario_block(
            &mut lp,
            inst,
            s,
            probs[s],
            XRef::Vars(&x_vars),
        )?);
    }
    let sol = lp::solve(&lp);
    if sol.status != LpStatus::Optimal {
        return Err(DispatchError::BadStatus(sol.status));
    }
    let precommit: Vec<f64> = x_vars.iter().map(|&v| sol.value(v)).collect();
    let scenarios: Vec<ScenarioDispatch> = blocks
        .iter()
        .enumerate()
        .map(|(s, b)| extract_scenario(inst, s, b, &sol, probs[s]))
        .collect();
    check_shed(&scenarios)?;
    let objective = scenarios
        .iter()
        .zip(&probs)
        .map(|(sd, p)| p * sd.cost)
        .sum();
    Ok(DispatchSolution {
        precommit,
        scenarios,
        objective,
    })
}

/// Solves the real-time recourse problem for one scenario at a fixed
/// pre-commitment, resolving degenerate duals by `pref` (lexicographic over
/// nodes, then generators).
pub fn solve_recourse(
    inst: &MarketInstance,
    x: &[f64],
    scenario: &str,
    pref: DualPreference,
) -> Result<ScenarioDispatch, DispatchError> {
    let s = inst
        .scenario_index(scenario)
        .ok_or_else(|| DispatchError::UnknownScenario(scenario.into()))?;
    if let Some(bad) = x.iter().find(|v| **v < 0.0) {
        return Err(DispatchError::NegativePrecommit(*bad));
    }
    let mut lp = LinearProgram::new();
    let block = add_scenario_block(&mut lp, inst, s, 1.0, XRef::Fixed(x))?;
    let sol = lp::solve(&lp);
    if sol.status != LpStatus::Optimal {
        return Err(DispatchError::BadStatus(sol.status));
    }
    let mut sd = extract_scenario(inst, s, &block, &sol, 1.0);
    check_shed(std::slice::from_ref(&sd))?;

    let mut selected: Vec<RowId> = block.balance_rows.clone();
    selected.extend(block.nonant_rows.iter().copied());
    let resolved = lp::resolve_degenerate_duals(&lp, &sol, &selected, pref)?;
    for (n, &r) in block.balance_rows.iter().enumerate() {
        sd.prices[n] = resolved[r.0];
    }
    for (g, &r) in block.nonant_rows.iter().enumerate() {
        sd.nonant_duals[g] = resolved[r.0];
    }
    Ok(sd)
}

/// Re-prices every scenario of an SLP solution through recourse solves with
/// resolved duals; dispatch quantities are re-extracted from the recourse
/// solves so prices and quantities stay consistent.
pub fn resolve_solution_prices(
    inst: &MarketInstance,
    solution: &DispatchSolution,
    pref: DualPreference,
) -> Result<DispatchSolution, DispatchError> {
    let mut scenarios = Vec::with_capacity(solution.scenarios.len());
    for s in &solution.scenarios {
        scenarios.push(solve_recourse(
            inst,
            &solution.precommit,
            &s.scenario,
            pref,
        )?);
    }
    let probs = inst.probs();
    let objective = scenarios
        .iter()
        .zip(&probs)
        .map(|(sd, p)| p * sd.cost)
        .sum();
    Ok(DispatchSolution {
        precommit: solution.precommit.clone(),
        scenarios,
        objective,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SettlementReport {
    pub scenario: String,
    /// lambda_{j(i)} X_i per generator.
    pub energy_payments: Vec<f64>,
    /// lambda_n D_n per node.
    pub consumer_charges: Vec<f64>,
    /// Charges minus payments; equals the congestion rent and stays
    /// nonnegative.
    pub iso_net: f64,
}

/// Settles one realised scenario at its nodal prices.
pub fn settle(
    inst: &MarketInstance,
    sd: &ScenarioDispatch,
) -> Result<SettlementReport, DispatchError> {
    let s = inst
        .scenario_index(&sd.scenario)
        .ok_or_else(|| DispatchError::UnknownScenario(sd.scenario.clone()))?;
    let payments: Vec<f64> = inst
        .generators
        .iter()
        .enumerate()
        .map(|(g, gen)| {
            let n = inst.network.node_index(&gen.node).expect("validated");
            sd.prices[n] * sd.dispatch[g]
        })
        .collect();
    let charges: Vec<f64> = inst
        .network
        .nodes
        .iter()
        .enumerate()
        .map(|(n, node)| sd.prices[n] * inst.demand(node, s))
        .collect();
    let iso_net = charges.iter().sum::<f64>() - payments.iter().sum::<f64>();
    if iso_net < -1e-6 {
        return Err(DispatchError::IsoOutOfPocket(-iso_net));
    }
    Ok(SettlementReport {
        scenario: sd.scenario.clone(),
        energy_payments: payments,
        consumer_charges: charges,
        iso_net,
    })
}

/// (lambda_{j(i)} - c_i) X_i - r_u U_i - r_v V_i for one settled scenario.
pub fn generator_profit(
    inst: &MarketInstance,
    sd: &ScenarioDispatch,
    generator: &str,
) -> Result<f64, DispatchError> {
    let g = inst
        .generator_index(generator)
        .ok_or_else(|| DispatchError::UnknownGenerator(generator.into()))?;
    let gen = &inst.generators[g];
    let n = inst.network.node_index(&gen.node).expect("validated");
    Ok((sd.prices[n] - gen.c) * sd.dispatch[g]
        - dev_cost(gen.r_u, sd.up[g])
        - dev_cost(gen.r_v, sd.down[g]))
}

/// Active-constraint fingerprint used to detect binding-set changes between
/// perturbed solves: dispatch bounds, line limits and shedding. The U/V
/// regime flip is deliberately not part of the signature; that flip is what
/// moves the price by +-(r_u + r_v).
fn binding_signature(inst: &MarketInstance, s: usize, sd: &ScenarioDispatch) -> Vec<bool> {
    let mut sig = Vec::new();
    for (g, _) in inst.generators.iter().enumerate() {
        let cap = inst.capacity(g, s);
        sig.push(sd.dispatch[g] <= BIND_TOL);
        sig.push((cap - sd.dispatch[g]).abs() <= BIND_TOL);
    }
    for (l, line) in inst.network.lines.iter().enumerate() {
        if line.capacity.is_finite() {
            sig.push((sd.flows[l] - line.capacity).abs() <= BIND_TOL);
            sig.push((sd.flows[l] + line.capacity).abs() <= BIND_TOL);
        }
    }
    for v in &sd.shed {
        sig.push(*v > BIND_TOL);
    }
    sig
}

#[derive(Debug, Clone, Serialize)]
pub struct SensitivityProbe {
    pub scenario: String,
    /// Dispatch strictly inside (0, G) in the base solve.
    pub interior: bool,
    pub lambda_base: f64,
    pub rho_base: f64,
    /// None when the perturbed solve changed the binding set.
    pub delta_lambda_up: Option<f64>,
    pub delta_lambda_down: Option<f64>,
    pub delta_rho_up: Option<f64>,
    pub delta_rho_down: Option<f64>,
}

/// Reports the nodal-price change at the generator's node when its
/// pre-commitment moves by +/- delta, scenario by scenario. Probes where
/// the binding set changes carry `None` deltas rather than a silent value.
pub fn price_sensitivity(
    inst: &MarketInstance,
    x: &[f64],
    delta: f64,
    generator: &str,
    pref: DualPreference,
) -> Result<Vec<SensitivityProbe>, DispatchError> {
    let g = inst
        .generator_index(generator)
        .ok_or_else(|| DispatchError::UnknownGenerator(generator.into()))?;
    let node = inst
        .network
        .node_index(&inst.generators[g].node)
        .expect("validated");

    let mut x_up = x.to_vec();
    x_up[g] += delta;
    let mut x_down = x.to_vec();
    x_down[g] = (x_down[g] - delta).max(0.0);

    let mut probes = Vec::with_capacity(inst.scenarios.len());
    for s in 0..inst.scenarios.len() {
        let id = inst.scenarios[s].id.clone();
        let base = solve_recourse(inst, x, &id, pref)?;
        let up = solve_recourse(inst, &x_up, &id, pref)?;
        let down = solve_recourse(inst, &x_down, &id, pref)?;
        let cap = inst.capacity(g, s);
        let interior = base.dispatch[g] > BIND_TOL && base.dispatch[g] < cap - BIND_TOL;
        let sig = binding_signature(inst, s, &base);
        let same_up = binding_signature(inst, s, &up) == sig;
        let same_down = binding_signature(inst, s, &down) == sig;
        probes.push(SensitivityProbe {
            scenario: id,
            interior,
            lambda_base: base.prices[node],
            rho_base: base.nonant_duals[g],
            delta_lambda_up: same_up.then(|| up.prices[node] - base.prices[node]),
            delta_lambda_down: same_down.then(|| down.prices[node] - base.prices[node]),
            delta_rho_up: same_up.then(|| up.nonant_duals[g] - base.nonant_duals[g]),
            delta_rho_down: same_down.then(|| down.nonant_duals[g] - base.nonant_duals[g]),
        });
    }
    Ok(probes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MarketInstance;

    pub(crate) fn m1() -> MarketInstance {
        MarketInstance::from_json(
            r#"{
            "network": {"nodes": ["n1"], "lines": [], "voll": 1000.0},
            "generators": [{"id": "g1", "node": "n1", "c": 10.0, "r_u": 3.0, "r_v": 1.0, "capacity": 100.0}],
            "scenarios": [
                {"id": "w1", "prob": 0.2, "demand": {"n1": 10.0}},
                {"id": "w2", "prob": 0.2, "demand": {"n1": 20.0}},
                {"id": "w3", "prob": 0.2, "demand": {"n1": 30.0}},
                {"id": "w4", "prob": 0.2, "demand": {"n1": 40.0}},
                {"id": "w5", "prob": 0.2, "demand": {"n1": 50.0}}
            ]
        }"#,
        )
        .unwrap()
    }

    #[test]
    fn m1_slp() {
        let inst = m1();
        let sol = solve_slp(&inst).unwrap();
        assert!(
            (sol.precommit[0] - 40.0).abs() < 1e-7,
            "x = {}",
            sol.precommit[0]
        );
        assert!(
            (sol.objective - 318.0).abs() < 1e-6,
            "obj = {}",
            sol.objective
        );
        // Dispatch follows demand exactly.
        for (s, sd) in sol.scenarios.iter().enumerate() {
            let d = inst.demand("n1", s);
            assert!((sd.dispatch[0] - d).abs() < 1e-7);
        }
    }

    #[test]
    fn m1_recourse_up() {
        let inst = m1();
        let sd = solve_recourse(&inst, &[40.0], "w5", DualPreference::Min).unwrap();
        assert!((sd.dispatch[0] - 50.0).abs() < 1e-8);
        assert!((sd.up[0] - 10.0).abs() < 1e-8);
        assert!((sd.cost - 530.0).abs() < 1e-8);
        assert!(
            (sd.prices[0] - 13.0).abs() < 1e-8,
            "lambda = {}",
            sd.prices[0]
        );
        assert!(
            (sd.nonant_duals[0] + 3.0).abs() < 1e-8,
            "rho = {}",
            sd.nonant_duals[0]
        );
    }

    #[test]
    fn m1_recourse_down() {
        let inst = m1();
        let sd = solve_recourse(&inst, &[40.0], "w3", DualPreference::Min).unwrap();
        assert!((sd.dispatch[0] - 30.0).abs() < 1e-8);
        assert!((sd.down[0] - 10.0).abs() < 1e-8);
        assert!((sd.prices[0] - 9.0).abs() < 1e-8);
        assert!((sd.nonant_duals[0] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn m1_degenerate_boundary_scenario() {
        let inst = m1();
        let lo = solve_recourse(&inst, &[40.0], "w4", DualPreference::Min).unwrap();
        assert!((lo.prices[0] - 9.0).abs() < 1e-8, "min pref gives c - r_v");
        let hi = solve_recourse(&inst, &[40.0], "w4", DualPreference::Max).unwrap();
        assert!((hi.prices[0] - 13.0).abs() < 1e-8, "max pref gives c + r_u");
    }

    #[test]
    fn m1_zero_recourse() {
        let mut inst = m1();
        inst.scenarios[0].demand.insert("n1".into(), 0.0);
        let sd = solve_recourse(&inst, &[0.0], "w1", DualPreference::Min).unwrap();
        assert!(sd.dispatch[0].abs() < 1e-9);
        assert!(sd.cost.abs() < 1e-9);
        assert!(sd.prices[0].abs() < 1e-9);
    }

    #[test]
    fn m1_settlement_and_profit() {
        let inst = m1();
        let sd = solve_recourse(&inst, &[40.0], "w5", DualPreference::Min).unwrap();
        let report = settle(&inst, &sd).unwrap();
        assert!((report.energy_payments[0] - 650.0).abs() < 1e-7);
        assert!((report.consumer_charges[0] - 650.0).abs() < 1e-7);
        assert!(report.iso_net.abs() < 1e-7);
        let profit = generator_profit(&inst, &sd, "g1").unwrap();
        assert!((profit - 120.0).abs() < 1e-7, "profit = {profit}");

        let sd = solve_recourse(&inst, &[40.0], "w3", DualPreference::Min).unwrap();
        let profit = generator_profit(&inst, &sd, "g1").unwrap();
        assert!((profit + 40.0).abs() < 1e-7, "profit = {profit}");
    }

    #[test]
    fn zero_demand_instance() {
        let mut inst = m1();
        for s in &mut inst.scenarios {
            s.demand.insert("n1".into(), 0.0);
        }
        let sol = solve_slp(&inst).unwrap();
        assert!(sol.precommit[0].abs() < 1e-9);
        assert!(sol.objective.abs() < 1e-9);
    }

    #[test]
    fn infeasible_scenario_reported() {
        let mut inst = m1();
        inst.scenarios[4].demand.insert("n1".into(), 500.0);
        match solve_slp(&inst) {
            Err(DispatchError::InfeasibleScenario { scenario, .. }) => assert_eq!(scenario, "w5"),
            other => panic!("expected infeasible scenario, got {other:?}"),
        }
    }

    #[test]
    fn newsvendor_consistency_on_m1() {
        let inst = m1();
        let sol = solve_slp(&inst).unwrap();
        let dist = sol.dispatch_distribution(&inst, "g1").unwrap();
        let g = &inst.generators[0];
        let q = g.r_u / (g.r_u + g.r_v);
        let x_news = dist.pseudoinverse_cdf(q).unwrap();
        assert!((sol.precommit[0] - x_news).abs() < 1e-7);
    }

    #[test]
    fn price_sensitivity_m1() {
        let inst = m1();
        // Scenario w3 (D = 30): moving x from 40 to 20 flips the regime.
        let probes = price_sensitivity(&inst, &[40.0], 20.0, "g1", DualPreference::Min).unwrap();
        let w3 = &probes[2];
        assert!(w3.interior);
        let down = w3.delta_lambda_down.expect("binding set unchanged");
        assert!((down - 4.0).abs() < 1e-8, "{w3:?}");
        // Small move keeps ramping down: no price change.
        let probes = price_sensitivity(&inst, &[40.0], 1.0, "g1", DualPreference::Min).unwrap();
        let w3 = &probes[2];
        assert!(w3.delta_lambda_up.unwrap().abs() < 1e-8);
        // Zero-size probe.
        let probes = price_sensitivity(&inst, &[40.0], 0.0, "g1", DualPreference::Min).unwrap();
        assert!(probes[2].delta_lambda_up.unwrap().abs() < 1e-8);
        assert!(probes[2].delta_lambda_down.unwrap().abs() < 1e-8);
    }

    #[test]
    fn dispatch_distribution_m1() {
        let inst = m1();
        let sol = solve_slp(&inst).unwrap();
        let dist = sol.dispatch_distribution(&inst, "g1").unwrap();
        assert_eq!(dist.support().len(), 5);
        let total: f64 = dist.probs().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(sol.dispatch_distribution(&inst, "nope").is_err());
    }
}
