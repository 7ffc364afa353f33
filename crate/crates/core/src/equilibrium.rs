//! The no-risk-trading competitive equilibrium: price-taking best
//! responses, a damped fixed-point iterator, and gap-based verification.
//!
//! Remuneration follows the cleared market: agents face a fixed price
//! field and a fixed dispatch policy and choose only their pre-commitment.
//! The price field is seeded from resolved duals; equilibrium work defaults
//! to the up-side resolution (a scenario sitting exactly at the setpoint is
//! priced at the ramp-up margin), under which the candidate's realised
//! profit matches its payoff decomposition and non-participation never
//! dominates the cleared setpoint.

use serde::Serialize;
use thiserror::Error;

use crate::dispatch::{self, DispatchError, DispatchSolution};
use crate::lp::{self, DualPreference, LinearProgram, LpError, LpStatus, RowSense, VarId};
use crate::model::MarketInstance;
use crate::risk::{rho_disutility, risk_value_lp, PolyhedralRiskSet, RiskError, RiskInput};

#[derive(Debug, Error)]
pub enum EquilibriumError {
    #[error(transparent)]
    Dispatch(#[from] DispatchError),
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error("lp failure: {0}")]
    Lp(#[from] LpError),
    #[error("lp returned status {0:?}")]
    BadStatus(LpStatus),
    #[error("unknown generator `{0}`")]
    UnknownGenerator(String),
    #[error("price field shape mismatch")]
    ShapeMismatch,
}

/// lambda_n(w) for every scenario and node, capped at VOLL.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriceField {
    /// Indexed [scenario][node].
    pub prices: Vec<Vec<f64>>,
}

impl PriceField {
    pub fn from_solution(sol: &DispatchSolution) -> Self {
        Self {
            prices: sol.scenarios.iter().map(|s| s.prices.clone()).collect(),
        }
    }

    pub fn validate(&self, inst: &MarketInstance) -> Result<(), EquilibriumError> {
        if self.prices.len() != inst.scenarios.len()
            || self
                .prices
                .iter()
                .any(|p| p.len() != inst.network.nodes.len())
        {
            return Err(EquilibriumError::ShapeMismatch);
        }
        Ok(())
    }
}

/// A joint strategy profile under scrutiny.
#[derive(Debug, Clone, Serialize)]
pub struct EquilibriumCandidate {
    pub prices: PriceField,
    pub precommit: Vec<f64>,
    /// Fixed dispatch policy, indexed [scenario][generator].
    pub dispatch: Vec<Vec<f64>>,
    /// Flows per scenario, carried along for the ISO's problem.
    pub flows: Vec<Vec<f64>>,
}

impl EquilibriumCandidate {
    pub fn from_dispatch(sol: &DispatchSolution) -> Self {
        Self {
            prices: PriceField::from_solution(sol),
            precommit: sol.precommit.clone(),
            dispatch: sol.scenarios.iter().map(|s| s.dispatch.clone()).collect(),
            flows: sol.scenarios.iter().map(|s| s.flows.clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BestResponse {
    pub x: f64,
    /// Risk-adjusted value -rho(profit) at the response.
    pub value: f64,
    /// Implied (X, U, V) per scenario at the response.
    pub dispatch: Vec<f64>,
    pub up: Vec<f64>,
    pub down: Vec<f64>,
}

fn rho_of(input: &RiskInput, profit: &[f64], probs: &[f64]) -> Result<f64, RiskError> {
    match input {
        RiskInput::Spec(spec) => rho_disutility(profit, probs, spec),
        RiskInput::Explicit(set) => {
            let neg: Vec<f64> = profit.iter().map(|v| -v).collect();
            risk_value_lp(&neg, set)
        }
    }
}

/// Profit vector of generator `g` at setpoint `x` against fixed prices and
/// a fixed dispatch policy. Inflexible units produce their setpoint.
fn profit_vector(
    inst: &MarketInstance,
    prices: &PriceField,
    policy: &[Vec<f64>],
    g: usize,
    x: f64,
) -> Vec<f64> {
    let gen = &inst.generators[g];
    let node = inst.network.node_index(&gen.node).expect("validated");
    let inflexible = gen.r_u.is_infinite() || gen.r_v.is_infinite();
    (0..inst.scenarios.len())
        .map(|s| {
            let lambda = prices.prices[s][node];
            if inflexible {
                (lambda - gen.c) * x
            } else {
                let xd = policy[s][g];
                (lambda - gen.c) * xd - gen.r_u * (xd - x).max(0.0) - gen.r_v * (x - xd).max(0.0)
            }
        })
        .collect()
}

/// Maximises the risk-adjusted profit of one generator over its
/// pre-commitment, holding prices and the dispatch policy fixed. The
/// objective is piecewise linear with kinks at the policy values, so the
/// candidate grid (policy support, midpoints, box corners) is exact; the
/// smallest maximiser is returned. For enumerable risk sets the epigraph
/// LP solves the same problem and is checked in the tests.
pub fn best_response_generator(
    inst: &MarketInstance,
    prices: &PriceField,
    policy: &[Vec<f64>],
    generator: &str,
    input: &RiskInput,
) -> Result<BestResponse, EquilibriumError> {
    prices.validate(inst)?;
    let g = inst
        .generator_index(generator)
        .ok_or_else(|| EquilibriumError::UnknownGenerator(generator.into()))?;
    let gen = &inst.generators[g];
    let probs = inst.probs();
    let x_max = (0..inst.scenarios.len())
        .map(|s| inst.capacity(g, s))
        .fold(0.0f64, f64::max);
    let x_min_cap = (0..inst.scenarios.len())
        .map(|s| inst.capacity(g, s))
        .fold(f64::INFINITY, f64::min);
    let inflexible = gen.r_u.is_infinite() || gen.r_v.is_infinite();

    let mut grid: Vec<f64> = vec![0.0];
    if inflexible {
        grid.push(x_min_cap);
    } else {
        let mut vals: Vec<f64> = (0..inst.scenarios.len()).map(|s| policy[s][g]).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for (k, &v) in vals.iter().enumerate() {
            if (0.0..=x_max).contains(&v) {
                grid.push(v);
            }
            if let Some(&next) = vals.get(k + 1) {
                let mid = 0.5 * (v + next);
                if (0.0..=x_max).contains(&mid) {
                    grid.push(mid);
                }
            }
        }
        grid.push(x_max);
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup();

    let mut best_x = grid[0];
    let mut best_val = f64::NEG_INFINITY;
    for &x in &grid {
        let profit = profit_vector(inst, prices, policy, g, x);
        let val = -rho_of(input, &profit, &probs)?;
        if val > best_val + 1e-12 {
            best_val = val;
            best_x = x;
        }
    }

    let n = inst.scenarios.len();
    let (dispatch, up, down) = if inflexible {
        (vec![best_x; n], vec![0.0; n], vec![0.0; n])
    } else {
        let d: Vec<f64> = (0..n).map(|s| policy[s][g]).collect();
        let u: Vec<f64> = d.iter().map(|xd| (xd - best_x).max(0.0)).collect();
        let v: Vec<f64> = d.iter().map(|xd| (best_x - xd).max(0.0)).collect();
        (d, u, v)
    };
    Ok(BestResponse {
        x: best_x,
        value: best_val,
        dispatch,
        up,
        down,
    })
}

/// Same best response through the epigraph LP over the risk set's extreme
/// points: min t subject to t >= E_m[-profit(x)] per measure, with the
/// deviation kinks modelled by U, V >= envelope rows. Used as the
/// cross-check route for enumerable sets.
pub fn best_response_generator_lp(
    inst: &MarketInstance,
    prices: &PriceField,
    policy: &[Vec<f64>],
    generator: &str,
    set: &PolyhedralRiskSet,
) -> Result<BestResponse, EquilibriumError> {
    prices.validate(inst)?;
    let g = inst
        .generator_index(generator)
        .ok_or_else(|| EquilibriumError::UnknownGenerator(generator.into()))?;
    let gen = &inst.generators[g];
    let node = inst.network.node_index(&gen.node).expect("validated");
    let n = inst.scenarios.len();
    let x_max = (0..n).map(|s| inst.capacity(g, s)).fold(0.0f64, f64::max);

    let mut lp = LinearProgram::new();
    let x = lp.add_var(0.0, 0.0, x_max)?;
    let t = lp.add_var(1.0, f64::NEG_INFINITY, f64::INFINITY)?;
    let mut u_vars = Vec::with_capacity(n);
    let mut v_vars = Vec::with_capacity(n);
    for s in 0..n {
        let xd = policy[s][g];
        let u = lp.add_var(0.0, 0.0, f64::INFINITY)?;
        let v = lp.add_var(0.0, 0.0, f64::INFINITY)?;
        // U >= policy - x, V >= x - policy.
        lp.add_row(RowSense::Ge, xd, &[(u, 1.0), (x, 1.0)])?;
        lp.add_row(RowSense::Ge, -xd, &[(v, 1.0), (x, -1.0)])?;
        u_vars.push(u);
        v_vars.push(v);
    }
    for m in &set.extreme_points {
        // t + sum_w m(w) [ (lambda - c) policy - r_u U - r_v V ] >= 0.
        let mut ent = vec![(t, 1.0)];
        let mut rhs = 0.0;
        for s in 0..n {
            let lambda = prices.prices[s][node];
            rhs += m[s] * (lambda - gen.c) * policy[s][g] * -1.0;
            if gen.r_u != 0.0 {
                ent.push((u_vars[s], -m[s] * gen.r_u));
            }
            if gen.r_v != 0.0 {
                ent.push((v_vars[s], -m[s] * gen.r_v));
            }
        }
        lp.add_row(RowSense::Ge, rhs, &ent)?;
    }
    let sol = lp::solve(&lp);
    if sol.status != LpStatus::Optimal {
        return Err(EquilibriumError::BadStatus(sol.status));
    }
    let xv = sol.value(x);
    let probs = inst.probs();
    let profit = profit_vector(inst, prices, policy, g, xv);
    let value = -rho_of(&RiskInput::Explicit(set.clone()), &profit, &probs)?;
    let d: Vec<f64> = (0..n).map(|s| policy[s][g]).collect();
    Ok(BestResponse {
        x: xv,
        value,
        up: d.iter().map(|xd| (xd - xv).max(0.0)).collect(),
        down: d.iter().map(|xd| (xv - xd).max(0.0)).collect(),
        dispatch: d,
    })
}

/// The ISO's wait-and-see problem for one scenario: maximise the value of
/// net injections over the flow polytope. Among the optima the flow of
/// least total magnitude is returned, so uniform prices give zero flow.
pub fn best_response_iso(
    inst: &MarketInstance,
    prices: &[f64],
) -> Result<Vec<f64>, EquilibriumError> {
    let net = &inst.network;
    if prices.len() != net.nodes.len() {
        return Err(EquilibriumError::ShapeMismatch);
    }
    if net.lines.is_empty() {
        return Ok(Vec::new());
    }
    let mut lp = LinearProgram::new();
    let mut flows = Vec::with_capacity(net.lines.len());
    for line in &net.lines {
        let cap = line.capacity;
        let (lo, hi) = if cap.is_finite() {
            (-cap, cap)
        } else {
            (f64::NEG_INFINITY, f64::INFINITY)
        };
        // tau_n(F) picks up +F on the to-node and -F on the from-node, so
        // the flow's objective weight is lambda_to - lambda_from (negated
        // for minimisation).
        let from = net.node_index(&line.from).expect("validated");
        let to = net.node_index(&line.to).expect("validated");
        flows.push(lp.add_var(-(prices[to] - prices[from]), lo, hi)?);
    }
    let mut angles = Vec::with_capacity(net.nodes.len());
    for n in 0..net.nodes.len() {
        let (lo, hi) = if n == 0 {
            (0.0, 0.0)
        } else {
            (f64::NEG_INFINITY, f64::INFINITY)
        };
        angles.push(lp.add_var(0.0, lo, hi)?);
    }
    for (l, line) in net.lines.iter().enumerate() {
        let from = net.node_index(&line.from).unwrap();
        let to = net.node_index(&line.to).unwrap();
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
    let first = lp::solve(&lp);
    if first.status != LpStatus::Optimal {
        return Err(EquilibriumError::BadStatus(first.status));
    }
    // Tie-break: among optimal flows minimise total |F|.
    let mut ent: Vec<(VarId, f64)> = Vec::new();
    for (l, &f) in flows.iter().enumerate() {
        let line = &net.lines[l];
        let from = net.node_index(&line.from).unwrap();
        let to = net.node_index(&line.to).unwrap();
        let w = prices[to] - prices[from];
        if w != 0.0 {
            ent.push((f, w));
        }
    }
    lp.add_row(RowSense::Ge, -first.objective, &ent)?;
    let mut abs_vars = Vec::new();
    for &f in &flows {
        let a = lp.add_var(1.0, 0.0, f64::INFINITY)?;
        lp.add_row(RowSense::Ge, 0.0, &[(a, 1.0), (f, -1.0)])?;
        lp.add_row(RowSense::Ge, 0.0, &[(a, 1.0), (f, 1.0)])?;
        abs_vars.push(a);
    }
    for &f in &flows {
        lp.set_objective(f, 0.0);
    }
    let second = lp::solve(&lp);
    if second.status != LpStatus::Optimal {
        return Err(EquilibriumError::BadStatus(second.status));
    }
    Ok(flows.iter().map(|&f| second.value(f)).collect())
}

/// Bang-bang price response to nodal excess supply: shortage prices at
/// VOLL, surplus at zero, balance keeps the current price.
pub fn best_response_market_clearing(
    excess_supply: &[Vec<f64>],
    current: &PriceField,
    voll: f64,
    tol: f64,
) -> PriceField {
    let prices = current
        .prices
        .iter()
        .zip(excess_supply)
        .map(|(row, ex)| {
            row.iter()
                .zip(ex)
                .map(|(&p, &e)| {
                    if e < -tol {
                        voll
                    } else if e > tol {
                        0.0
                    } else {
                        p
                    }
                })
                .collect()
        })
        .collect();
    PriceField { prices }
}

#[derive(Debug, Clone, Serialize)]
pub struct AgentGap {
    pub agent: String,
    pub best_value: f64,
    pub candidate_value: f64,
    pub gap: f64,
}

/// Re-solves every generator's best response at the candidate's prices and
/// reports `value(best response) - value(candidate strategy)` per agent.
/// The candidate is a tol-equilibrium when every gap is at most tol.
pub fn verify_equilibrium(
    inst: &MarketInstance,
    candidate: &EquilibriumCandidate,
    risks: &[(String, RiskInput)],
) -> Result<Vec<AgentGap>, EquilibriumError> {
    candidate.prices.validate(inst)?;
    let probs = inst.probs();
    let mut out = Vec::new();
    for (agent, input) in risks {
        let Some(g) = inst.generator_index(agent) else {
            continue;
        };
        let br =
            best_response_generator(inst, &candidate.prices, &candidate.dispatch, agent, input)?;
        let profit = profit_vector(
            inst,
            &candidate.prices,
            &candidate.dispatch,
            g,
            candidate.precommit[g],
        );
        let cand_val = -rho_of(input, &profit, &probs)?;
        out.push(AgentGap {
            agent: agent.clone(),
            best_value: br.value,
            candidate_value: cand_val,
            gap: br.value - cand_val,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepTrace {
    pub sweep: usize,
    pub precommit: Vec<f64>,
    /// Price field at the start of the sweep, indexed [scenario][node].
    pub prices: Vec<Vec<f64>>,
    pub gaps: Vec<AgentGap>,
    pub max_gap: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FixedPointResult {
    pub candidate: EquilibriumCandidate,
    pub gaps: Vec<AgentGap>,
    pub converged: bool,
    pub trace: Vec<SweepTrace>,
}

/// Gauss-Seidel sweep over generator best responses with damped
/// pre-commitment updates. Prices seed from the dispatch solve with the
/// given resolution preference and are refreshed by the literal bang-bang
/// clearing response on nodal excess (a no-op while the policy balances).
/// Non-convergence shows up in the returned gaps, never as an error.
pub fn iterate_fixed_point(
    inst: &MarketInstance,
    risks: &[(String, RiskInput)],
    damping: f64,
    max_iters: usize,
    tol: f64,
    pref: DualPreference,
) -> Result<FixedPointResult, EquilibriumError> {
    let slp = dispatch::solve_slp(inst)?;
    let resolved = dispatch::resolve_solution_prices(inst, &slp, pref)?;
    let mut candidate = EquilibriumCandidate::from_dispatch(&resolved);
    let probs = inst.probs();
    let mut trace = Vec::new();
    let mut best: Option<(f64, EquilibriumCandidate, Vec<AgentGap>)> = None;

    for sweep in 0..max_iters.max(1) {
        let mut gaps = Vec::new();
        let mut next_x = candidate.precommit.clone();
        for (agent, input) in risks {
            let Some(g) = inst.generator_index(agent) else {
                continue;
            };
            let br = best_response_generator(
                inst,
                &candidate.prices,
                &candidate.dispatch,
                agent,
                input,
            )?;
            let profit = profit_vector(
                inst,
                &candidate.prices,
                &candidate.dispatch,
                g,
                candidate.precommit[g],
            );
            let cand_val = -rho_of(input, &profit, &probs)?;
            next_x[g] = (1.0 - damping) * candidate.precommit[g] + damping * br.x;
            gaps.push(AgentGap {
                agent: agent.clone(),
                best_value: br.value,
                candidate_value: cand_val,
                gap: br.value - cand_val,
            });
        }
        let max_gap = gaps.iter().map(|g| g.gap).fold(0.0f64, f64::max);
        trace.push(SweepTrace {
            sweep,
            precommit: candidate.precommit.clone(),
            prices: candidate.prices.prices.clone(),
            gaps: gaps.clone(),
            max_gap,
        });
        if best.as_ref().map_or(true, |(g, _, _)| max_gap < *g) {
            best = Some((max_gap, candidate.clone(), gaps.clone()));
        }
        if max_gap <= tol {
            return Ok(FixedPointResult {
                candidate,
                gaps,
                converged: true,
                trace,
            });
        }

        // Move the setpoints and refresh the price field through the
        // bang-bang clearing response on nodal excess.
        candidate.precommit = next_x;
        let excess: Vec<Vec<f64>> = (0..inst.scenarios.len())
            .map(|s| {
                inst.network
                    .nodes
                    .iter()
                    .enumerate()
                    .map(|(_n, node)| {
                        let gen: f64 = inst
                            .generators
                            .iter()
                            .enumerate()
                            .filter(|(_, g)| g.node == *node)
                            .map(|(g, _)| candidate.dispatch[s][g])
                            .sum();
                        let tau: f64 = inst
                            .network
                            .lines
                            .iter()
                            .enumerate()
                            .map(|(l, line)| {
                                let f = candidate.flows[s][l];
                                if line.to == *node {
                                    f
                                } else if line.from == *node {
                                    -f
                                } else {
                                    0.0
                                }
                            })
                            .sum();
                        gen + tau - inst.demand(node, s)
                    })
                    .collect()
            })
            .collect();
        candidate.prices =
            best_response_market_clearing(&excess, &candidate.prices, inst.network.voll, 1e-6);
    }

    let (_, cand, gaps) = best.expect("at least one sweep ran");
    Ok(FixedPointResult {
        candidate: cand,
        gaps,
        converged: false,
        trace,
    })
}
