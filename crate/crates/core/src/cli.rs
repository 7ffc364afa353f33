//! Command implementations and the report format behind the `sdm` binary.
//!
//! Exit-code contract: 0 success, 1 usage or parse error, 2 model-level
//! infeasibility or an empty risk-set intersection. Reports embed the
//! instance content hash and the tolerance configuration, and identical
//! inputs produce byte-identical report files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::dispatch::{
    self, generator_profit, price_sensitivity, settle, solve_recourse, solve_slp, DispatchError,
    DispatchSolution,
};
use crate::equilibrium::{self, EquilibriumCandidate};
use crate::lp::DualPreference;
use crate::model::{validate_instance, EmpiricalDistribution, MarketInstance};
use crate::newsvendor::{
    brute_force_argmin_set, brute_force_precommit, precommit_quantile_no_trading,
    precommit_quantile_with_trading, profit_lower_bound, RiskCoefficients, TradingMode,
};
use crate::report::{sha256_hex, to_canonical_json};
use crate::risk::{self, RiskInput, RiskSpec};
use crate::riskmarket::{self, agent_risks_from_instance, solve_raslp, RiskMarketError};

pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(msg: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: msg.into(),
        }
    }

    fn model(msg: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: msg.into(),
        }
    }
}

impl From<DispatchError> for CliError {
    fn from(e: DispatchError) -> Self {
        match e {
            DispatchError::InfeasibleScenario { .. } => CliError::model(e.to_string()),
            DispatchError::Invalid(_) => CliError::usage(e.to_string()),
            other => CliError::usage(other.to_string()),
        }
    }
}

impl From<RiskMarketError> for CliError {
    fn from(e: RiskMarketError) -> Self {
        match e {
            RiskMarketError::EmptyIntersection => {
                CliError::model("risk-set intersection empty".to_string())
            }
            RiskMarketError::Dispatch(d) => d.into(),
            other => CliError::usage(other.to_string()),
        }
    }
}

impl From<equilibrium::EquilibriumError> for CliError {
    fn from(e: equilibrium::EquilibriumError) -> Self {
        match e {
            equilibrium::EquilibriumError::Dispatch(d) => d.into(),
            other => CliError::usage(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PrefArg {
    Min,
    Max,
}

impl From<PrefArg> for DualPreference {
    fn from(p: PrefArg) -> Self {
        match p {
            PrefArg::Min => DualPreference::Min,
            PrefArg::Max => DualPreference::Max,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "sdm",
    about = "Two-stage stochastic electricity auction clearing, with and without risk trading"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Instance JSON path.
    #[arg(short = 'i', long)]
    pub instance: PathBuf,
    /// Write the report here instead of stdout.
    #[arg(short = 'o', long)]
    pub output: Option<PathBuf>,
    /// Absolute tolerance used by the embedded property checks.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Clear the two-stage stochastic dispatch market.
    SolveSdm {
        #[command(flatten)]
        common: CommonArgs,
        /// Degenerate-dual resolution direction for reported prices.
        #[arg(long, value_enum, default_value_t = PrefArg::Min)]
        pref: PrefArg,
    },
    /// Solve one scenario's recourse problem at a fixed pre-commitment.
    Recourse {
        #[command(flatten)]
        common: CommonArgs,
        /// JSON file holding {"x": {generator: MW, ...}}.
        #[arg(long)]
        x: PathBuf,
        /// Scenario id to realise.
        #[arg(long)]
        scenario: String,
        #[arg(long, value_enum, default_value_t = PrefArg::Min)]
        pref: PrefArg,
    },
    /// Clear the risk-trading market (Arrow-Debreu securities).
    SolveRaslp {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Closed-form pre-commitment quantile against its brute-force oracle.
    Newsvendor {
        /// Distribution JSON: {"support": [...], "probs": [...]}.
        #[arg(long)]
        dist: PathBuf,
        #[arg(long = "r-u")]
        r_u: f64,
        #[arg(long = "r-v")]
        r_v: f64,
        #[arg(long)]
        kappa: f64,
        /// Tail level of the point-mass spectrum (beta_bar).
        #[arg(long)]
        beta: f64,
        #[arg(long, value_enum)]
        mode: ModeArg,
        #[arg(short = 'o', long)]
        output: Option<PathBuf>,
    },
    /// Iterate toward or verify a no-trading equilibrium.
    Equilibrium {
        #[command(flatten)]
        common: CommonArgs,
        /// Run the damped best-response iteration.
        #[arg(long, conflicts_with = "verify")]
        iterate: bool,
        /// Verify a candidate solution file produced by solve-sdm.
        #[arg(long)]
        verify: Option<PathBuf>,
        #[arg(long, default_value_t = 50)]
        max_iters: usize,
        #[arg(long, default_value_t = 1.0)]
        damping: f64,
        /// Iteration trace output path.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = PrefArg::Max)]
        pref: PrefArg,
    },
    /// Run one of the named invariant suites against the instance.
    CheckProperties {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        suite: String,
        /// Seed for the randomized probes inside a suite.
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    NoTrading,
    WithTrading,
}

impl From<ModeArg> for TradingMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::NoTrading => TradingMode::NoTrading,
            ModeArg::WithTrading => TradingMode::WithTrading,
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::SolveSdm { common, pref } => cmd_solve_sdm(&common, pref.into()),
        Command::Recourse {
            common,
            x,
            scenario,
            pref,
        } => cmd_recourse(&common, &x, &scenario, pref.into()),
        Command::SolveRaslp { common } => cmd_solve_raslp(&common),
        Command::Newsvendor {
            dist,
            r_u,
            r_v,
            kappa,
            beta,
            mode,
            output,
        } => cmd_newsvendor(&dist, r_u, r_v, kappa, beta, mode.into(), output.as_deref()),
        Command::Equilibrium {
            common,
            iterate,
            verify,
            max_iters,
            damping,
            trace,
            pref,
        } => cmd_equilibrium(
            &common,
            iterate,
            verify.as_deref(),
            max_iters,
            damping,
            trace.as_deref(),
            pref.into(),
        ),
        Command::CheckProperties {
            common,
            suite,
            seed,
        } => cmd_check_properties(&common, &suite, seed),
    }
}

struct LoadedInstance {
    instance: MarketInstance,
    sha256: String,
}

fn load_instance(path: &Path) -> Result<LoadedInstance, CliError> {
    let bytes = fs::read(path)
        .map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|e| CliError::usage(format!("{}: not utf-8: {e}", path.display())))?;
    let instance = MarketInstance::from_json(&text)
        .map_err(|e| CliError::usage(format!("{}: parse error: {e}", path.display())))?;
    let violations = validate_instance(&instance);
    if !violations.is_empty() {
        let listing: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        return Err(CliError::usage(format!(
            "{}: invalid instance:\n  {}",
            path.display(),
            listing.join("\n  ")
        )));
    }
    Ok(LoadedInstance {
        instance,
        sha256: sha256_hex(&bytes),
    })
}

fn emit(report: &Value, output: Option<&Path>) -> Result<(), CliError> {
    let text = to_canonical_json(report);
    match output {
        Some(path) => fs::write(path, text)
            .map_err(|e| CliError::usage(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn tolerance_block(tol: f64) -> Value {
    json!({
        "feasibility": crate::lp::FEAS_TOL,
        "optimality": crate::lp::OPT_TOL,
        "report": tol,
    })
}

fn solution_to_json(inst: &MarketInstance, sol: &DispatchSolution) -> Value {
    let x: BTreeMap<&str, f64> = inst
        .generators
        .iter()
        .enumerate()
        .map(|(g, gen)| (gen.id.as_str(), sol.precommit[g]))
        .collect();
    let scenarios: Vec<Value> = sol
        .scenarios
        .iter()
        .map(|sd| {
            let by_gen = |vals: &[f64]| -> BTreeMap<&str, f64> {
                inst.generators
                    .iter()
                    .enumerate()
                    .map(|(g, gen)| (gen.id.as_str(), vals[g]))
                    .collect()
            };
            let by_node = |vals: &[f64]| -> BTreeMap<&str, f64> {
                inst.network
                    .nodes
                    .iter()
                    .enumerate()
                    .map(|(n, node)| (node.as_str(), vals[n]))
                    .collect()
            };
            let flows: BTreeMap<String, f64> = inst
                .network
                .lines
                .iter()
                .enumerate()
                .map(|(l, line)| (format!("{}-{}", line.from, line.to), sd.flows[l]))
                .collect();
            json!({
                "omega": sd.scenario,
                "X": by_gen(&sd.dispatch),
                "U": by_gen(&sd.up),
                "V": by_gen(&sd.down),
                "flows": flows,
                "lambda": by_node(&sd.prices),
                "rho": by_gen(&sd.nonant_duals),
                "cost": sd.cost,
            })
        })
        .collect();
    json!({"x": x, "scenarios": scenarios, "objective": sol.objective})
}

fn cmd_solve_sdm(common: &CommonArgs, pref: DualPreference) -> Result<(), CliError> {
    let loaded = load_instance(&common.instance)?;
    let inst = &loaded.instance;
    let sol = solve_slp(inst)?;
    let resolved = dispatch::resolve_solution_prices(inst, &sol, pref)?;

    let mut properties = Vec::new();
    let mut lambda_box = 0.0f64;
    let mut rho_box = 0.0f64;
    let mut nonant = 0.0f64;
    for sd in &resolved.scenarios {
        for &l in &sd.prices {
            lambda_box = lambda_box.max(-l).max(l - inst.network.voll);
        }
        for (g, gen) in inst.generators.iter().enumerate() {
            let r = sd.nonant_duals[g];
            if gen.r_u.is_finite() {
                rho_box = rho_box.max(-r - gen.r_u);
            }
            if gen.r_v.is_finite() {
                rho_box = rho_box.max(r - gen.r_v);
            }
            nonant =
                nonant.max((resolved.precommit[g] + sd.up[g] - sd.down[g] - sd.dispatch[g]).abs());
        }
    }
    properties.push(json!({
        "name": "lambda-in-[0,VOLL]", "residual": lambda_box, "pass": lambda_box <= common.tol
    }));
    properties.push(json!({
        "name": "rho-in-[-r_u,r_v]", "residual": rho_box, "pass": rho_box <= common.tol
    }));
    properties.push(json!({
        "name": "nonanticipativity", "residual": nonant, "pass": nonant <= common.tol
    }));

    let report = json!({
        "command": "solve-sdm",
        "instance_sha256": loaded.sha256,
        "tolerances": tolerance_block(common.tol),
        "solution": solution_to_json(inst, &resolved),
        "properties": properties,
    });
    emit(&report, common.output.as_deref())
}

fn cmd_recourse(
    common: &CommonArgs,
    x_path: &Path,
    scenario: &str,
    pref: DualPreference,
) -> Result<(), CliError> {
    let loaded = load_instance(&common.instance)?;
    let inst = &loaded.instance;
    let x_text = fs::read_to_string(x_path)
        .map_err(|e| CliError::usage(format!("cannot read {}: {e}", x_path.display())))?;
    let x_doc: Value = serde_json::from_str(&x_text)
        .map_err(|e| CliError::usage(format!("{}: parse error: {e}", x_path.display())))?;
    let x_map = x_doc
        .get("x")
        .and_then(Value::as_object)
        .ok_or_else(|| CliError::usage("x file must contain an \"x\" object"))?;
    let mut x = vec![0.0; inst.generators.len()];
    for (g, gen) in inst.generators.iter().enumerate() {
        x[g] = x_map
            .get(&gen.id)
            .and_then(Value::as_f64)
            .ok_or_else(|| CliError::usage(format!("x file misses generator `{}`", gen.id)))?;
    }
    if inst.scenario_index(scenario).is_none() {
        return Err(CliError::usage(format!("unknown scenario `{scenario}`")));
    }
    let sd = solve_recourse(inst, &x, scenario, pref)?;
    let settlement = settle(inst, &sd)?;
    let profits: BTreeMap<&str, f64> = inst
        .generators
        .iter()
        .map(|g| {
            (
                g.id.as_str(),
                generator_profit(inst, &sd, &g.id).expect("known generator"),
            )
        })
        .collect();

    let by_gen = |vals: &[f64]| -> BTreeMap<&str, f64> {
        inst.generators
            .iter()
            .enumerate()
            .map(|(g, gen)| (gen.id.as_str(), vals[g]))
            .collect()
    };
    let by_node = |vals: &[f64]| -> BTreeMap<&str, f64> {
        inst.network
            .nodes
            .iter()
            .enumerate()
            .map(|(n, node)| (node.as_str(), vals[n]))
            .collect()
    };
    let report = json!({
        "command": "recourse",
        "instance_sha256": loaded.sha256,
        "tolerances": tolerance_block(common.tol),
        "scenario": scenario,
        "X": by_gen(&sd.dispatch),
        "U": by_gen(&sd.up),
        "V": by_gen(&sd.down),
        "lambda": by_node(&sd.prices),
        "rho": by_gen(&sd.nonant_duals),
        "cost": sd.cost,
        "settlement": {
            "energy_payments": by_gen(&settlement.energy_payments),
            "consumer_charges": by_node(&settlement.consumer_charges),
            "iso_net": settlement.iso_net,
        },
        "profits": profits,
        "properties": [
            {"name": "iso-never-out-of-pocket", "residual": (-settlement.iso_net).max(0.0),
             "pass": settlement.iso_net >= -common.tol}
        ],
    });
    emit(&report, common.output.as_deref())
}

fn cmd_solve_raslp(common: &CommonArgs) -> Result<(), CliError> {
    let loaded = load_instance(&common.instance)?;
    let inst = &loaded.instance;
    if inst.risk.is_none() {
        return Err(CliError::usage("instance has no risk block"));
    }
    let risks = agent_risks_from_instance(inst)?;
    let sol = solve_raslp(inst, &risks)?;

    let membership = riskmarket::membership_residuals(&risks, &inst.probs(), &sol.pi)?;
    let mut properties = Vec::new();
    let pi_sum: f64 = sol.pi.iter().sum();
    properties.push(json!({
        "name": "pi-sums-to-one", "residual": (pi_sum - 1.0).abs(),
        "pass": (pi_sum - 1.0).abs() <= 1e-8
    }));
    let mut clearing = 0.0f64;
    for s in 0..inst.scenarios.len() {
        let total: f64 = sol.securities.values().map(|w| w[s]).sum();
        clearing = clearing.max(total.abs());
    }
    properties.push(json!({
        "name": "security-clearing", "residual": clearing, "pass": clearing <= 1e-8
    }));
    for (agent, residual) in &membership {
        properties.push(json!({
            "name": format!("pi-in-risk-set-{agent}"), "residual": residual,
            "pass": *residual <= riskmarket::MEMBERSHIP_TOL
        }));
    }

    let theta: BTreeMap<&str, f64> = sol.theta.iter().map(|(k, v)| (k.as_str(), *v)).collect();
    let securities: BTreeMap<&str, &Vec<f64>> = sol
        .securities
        .iter()
        .map(|(k, v)| (k.as_str(), v))
        .collect();
    let report = json!({
        "command": "solve-raslp",
        "instance_sha256": loaded.sha256,
        "tolerances": tolerance_block(common.tol),
        "solution": solution_to_json(inst, &sol.dispatch),
        "theta": theta,
        "W": securities,
        "pi": sol.pi,
        "objective": sol.objective,
        "properties": properties,
    });
    emit(&report, common.output.as_deref())
}

fn cmd_newsvendor(
    dist_path: &Path,
    r_u: f64,
    r_v: f64,
    kappa: f64,
    beta: f64,
    mode: TradingMode,
    output: Option<&Path>,
) -> Result<(), CliError> {
    let bytes = fs::read(dist_path)
        .map_err(|e| CliError::usage(format!("cannot read {}: {e}", dist_path.display())))?;
    #[derive(serde::Deserialize)]
    struct DistFile {
        support: Vec<f64>,
        probs: Vec<f64>,
    }
    let parsed: DistFile = serde_json::from_slice(&bytes)
        .map_err(|e| CliError::usage(format!("{}: parse error: {e}", dist_path.display())))?;
    let dist = EmpiricalDistribution::new(&parsed.support, &parsed.probs)
        .map_err(|e| CliError::usage(e.to_string()))?;

    let quantile = match mode {
        TradingMode::NoTrading => precommit_quantile_no_trading(r_u, r_v, kappa, beta),
        TradingMode::WithTrading => precommit_quantile_with_trading(r_u, r_v, kappa, beta),
    }
    .map_err(|e| CliError::usage(e.to_string()))?;
    let x_star = dist
        .pseudoinverse_cdf(quantile)
        .map_err(|e| CliError::usage(e.to_string()))?;
    let spec = RiskSpec::tail(kappa, beta);
    let oracle = brute_force_precommit(&dist, r_u, r_v, &spec, mode)
        .map_err(|e| CliError::usage(e.to_string()))?;
    let argmin = brute_force_argmin_set(&dist, r_u, r_v, &spec, mode)
        .map_err(|e| CliError::usage(e.to_string()))?;
    let agree = argmin.iter().any(|v| (v - x_star).abs() <= 1e-9);
    let coeffs = RiskCoefficients::new(kappa, beta).map_err(|e| CliError::usage(e.to_string()))?;
    let bound = profit_lower_bound(r_u, r_v, x_star, &coeffs, mode);

    let report = json!({
        "command": "newsvendor",
        "instance_sha256": sha256_hex(&bytes),
        "tolerances": tolerance_block(1e-9),
        "mode": match mode { TradingMode::NoTrading => "no-trading", TradingMode::WithTrading => "with-trading" },
        "quantile": quantile,
        "x_star": x_star,
        "oracle_x_star": oracle,
        "oracle_argmin": argmin,
        "agree": agree,
        "alpha": coeffs.alpha,
        "profit_lower_bound": bound,
        "properties": [
            {"name": "closed-form-in-oracle-argmin", "residual": if agree {0.0} else {1.0}, "pass": agree}
        ],
    });
    emit(&report, output)
}

fn cmd_equilibrium(
    common: &CommonArgs,
    iterate: bool,
    verify: Option<&Path>,
    max_iters: usize,
    damping: f64,
    trace_path: Option<&Path>,
    pref: DualPreference,
) -> Result<(), CliError> {
    let loaded = load_instance(&common.instance)?;
    let inst = &loaded.instance;
    if inst.risk.is_none() {
        return Err(CliError::usage("instance has no risk block"));
    }
    let agent_risks = agent_risks_from_instance(inst)?;
    let risks: Vec<(String, RiskInput)> = agent_risks
        .iter()
        .filter(|a| a.agent != riskmarket::ISO_AGENT)
        .map(|a| (a.agent.clone(), a.input.clone()))
        .collect();

    let (candidate, gaps, converged, trace) = if let Some(cand_path) = verify {
        let text = fs::read_to_string(cand_path)
            .map_err(|e| CliError::usage(format!("cannot read {}: {e}", cand_path.display())))?;
        let candidate = candidate_from_report(inst, &text)?;
        let gaps = equilibrium::verify_equilibrium(inst, &candidate, &risks)?;
        let ok = gaps.iter().all(|g| g.gap <= common.tol);
        (candidate, gaps, ok, Vec::new())
    } else if iterate {
        let res =
            equilibrium::iterate_fixed_point(inst, &risks, damping, max_iters, common.tol, pref)?;
        (res.candidate, res.gaps, res.converged, res.trace)
    } else {
        return Err(CliError::usage("pass --iterate or --verify CANDIDATE"));
    };

    if let Some(path) = trace_path {
        let trace_json = json!({
            "sweeps": trace.iter().map(|t| json!({
                "sweep": t.sweep,
                "precommit": t.precommit,
                "prices": t.prices,
                "gaps": t.gaps.iter().map(|g| json!({
                    "agent": g.agent, "gap": g.gap
                })).collect::<Vec<_>>(),
                "max_gap": t.max_gap,
            })).collect::<Vec<_>>()
        });
        emit(&trace_json, Some(path))?;
    }

    let x: BTreeMap<&str, f64> = inst
        .generators
        .iter()
        .enumerate()
        .map(|(g, gen)| (gen.id.as_str(), candidate.precommit[g]))
        .collect();
    let max_gap = gaps.iter().map(|g| g.gap).fold(0.0f64, f64::max);
    let report = json!({
        "command": "equilibrium",
        "instance_sha256": loaded.sha256,
        "tolerances": tolerance_block(common.tol),
        "x": x,
        "converged": converged,
        "gaps": gaps.iter().map(|g| json!({
            "agent": g.agent, "best_value": g.best_value,
            "candidate_value": g.candidate_value, "gap": g.gap
        })).collect::<Vec<_>>(),
        "properties": [
            {"name": "max-agent-gap", "residual": max_gap, "pass": max_gap <= common.tol}
        ],
    });
    emit(&report, common.output.as_deref())
}

/// Rebuilds an equilibrium candidate from a solve-sdm report.
fn candidate_from_report(
    inst: &MarketInstance,
    text: &str,
) -> Result<EquilibriumCandidate, CliError> {
    let doc: Value =
        serde_json::from_str(text).map_err(|e| CliError::usage(format!("candidate: {e}")))?;
    let sol = doc.get("solution").unwrap_or(&doc);
    let x_map = sol
        .get("x")
        .and_then(Value::as_object)
        .ok_or_else(|| CliError::usage("candidate misses \"x\""))?;
    let mut precommit = vec![0.0; inst.generators.len()];
    for (g, gen) in inst.generators.iter().enumerate() {
        precommit[g] = x_map
            .get(&gen.id)
            .and_then(Value::as_f64)
            .ok_or_else(|| CliError::usage(format!("candidate misses x for `{}`", gen.id)))?;
    }
    let scen = sol
        .get("scenarios")
        .and_then(Value::as_array)
        .ok_or_else(|| CliError::usage("candidate misses \"scenarios\""))?;
    let mut prices = Vec::new();
    let mut dispatch = Vec::new();
    let mut flows = Vec::new();
    for s in scen {
        let lambda = s.get("lambda").and_then(Value::as_object);
        let xd = s.get("X").and_then(Value::as_object);
        let fl = s.get("flows").and_then(Value::as_object);
        let (Some(lambda), Some(xd)) = (lambda, xd) else {
            return Err(CliError::usage("candidate scenario misses lambda or X"));
        };
        prices.push(
            inst.network
                .nodes
                .iter()
                .map(|n| lambda.get(n).and_then(Value::as_f64).unwrap_or(0.0))
                .collect(),
        );
        dispatch.push(
            inst.generators
                .iter()
                .map(|g| xd.get(&g.id).and_then(Value::as_f64).unwrap_or(0.0))
                .collect(),
        );
        flows.push(
            inst.network
                .lines
                .iter()
                .map(|l| {
                    fl.and_then(|m| m.get(&format!("{}-{}", l.from, l.to)))
                        .and_then(Value::as_f64)
                        .unwrap_or(0.0)
                })
                .collect(),
        );
    }
    Ok(EquilibriumCandidate {
        prices: equilibrium::PriceField { prices },
        precommit,
        dispatch,
        flows,
    })
}

pub const SUITES: &[&str] = &[
    "monotonicity",
    "corollary2",
    "coherence",
    "kkt",
    "cost-recovery",
];

fn cmd_check_properties(common: &CommonArgs, suite: &str, seed: u64) -> Result<(), CliError> {
    let loaded = load_instance(&common.instance)?;
    let inst = &loaded.instance;
    let checks = match suite {
        "monotonicity" => suite_monotonicity(inst, seed)?,
        "corollary2" => suite_corollary2(inst, seed)?,
        "coherence" => suite_coherence(inst, seed)?,
        "kkt" => suite_kkt(inst)?,
        "cost-recovery" => suite_cost_recovery(inst)?,
        other => {
            return Err(CliError::usage(format!(
                "unknown suite `{other}`; available: {}",
                SUITES.join(", ")
            )))
        }
    };
    let all_pass = checks.iter().all(|c| c.pass);
    let report = json!({
        "command": "check-properties",
        "instance_sha256": loaded.sha256,
        "tolerances": tolerance_block(common.tol),
        "suite": suite,
        "seed": seed,
        "properties": checks.iter().map(|c| json!({
            "name": c.name, "residual": c.residual, "pass": c.pass
        })).collect::<Vec<_>>(),
        "pass": all_pass,
    });
    emit(&report, common.output.as_deref())?;
    if all_pass {
        Ok(())
    } else {
        Err(CliError::usage(format!("suite `{suite}` failed")))
    }
}

struct Check {
    name: String,
    residual: f64,
    pass: bool,
}

/// Deterministic xorshift generator for suite probes.
struct Probe(u64);

impl Probe {
    fn next_f64(&mut self) -> f64 {
        let mut x = self.0.wrapping_add(0x9e3779b97f4a7c15);
        self.0 = x;
        x ^= x >> 30;
        x = x.wrapping_mul(0xbf58476d1ce4e5b9);
        x ^= x >> 27;
        x = x.wrapping_mul(0x94d049bb133111eb);
        x ^= x >> 31;
        (x >> 11) as f64 / (1u64 << 53) as f64
    }

    fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }
}

fn suite_monotonicity(inst: &MarketInstance, seed: u64) -> Result<Vec<Check>, CliError> {
    let mut rng = Probe(seed);
    let n_gen = inst.generators.len();
    let caps: Vec<f64> = (0..n_gen)
        .map(|g| {
            (0..inst.scenarios.len())
                .map(|s| inst.capacity(g, s))
                .fold(0.0f64, f64::max)
        })
        .collect();
    let mut worst_rho = f64::INFINITY;
    for _ in 0..8 {
        let x: Vec<f64> = caps.iter().map(|c| rng.range(0.0, *c)).collect();
        let xh: Vec<f64> = caps.iter().map(|c| rng.range(0.0, *c)).collect();
        for s in &inst.scenarios {
            let a = solve_recourse(inst, &x, &s.id, DualPreference::Min)?;
            let b = solve_recourse(inst, &xh, &s.id, DualPreference::Min)?;
            let inner: f64 = (0..n_gen)
                .map(|g| (x[g] - xh[g]) * (a.nonant_duals[g] - b.nonant_duals[g]))
                .sum();
            worst_rho = worst_rho.min(inner);
        }
    }
    let mut worst_lambda = f64::INFINITY;
    for _ in 0..4 {
        let scale = rng.range(0.5, 0.95);
        let mut squeezed = inst.clone();
        for s in &mut squeezed.scenarios {
            for d in s.demand.values_mut() {
                *d *= scale;
            }
        }
        let base_x: Vec<f64> = caps.iter().map(|c| 0.5 * c).collect();
        for s in &inst.scenarios {
            let hi = solve_recourse(inst, &base_x, &s.id, DualPreference::Min)?;
            let lo = solve_recourse(&squeezed, &base_x, &s.id, DualPreference::Min)?;
            let inner: f64 = inst
                .network
                .nodes
                .iter()
                .enumerate()
                .map(|(n, node)| {
                    let dd = inst.demand(node, inst.scenario_index(&s.id).unwrap()) * (1.0 - scale);
                    dd * (hi.prices[n] - lo.prices[n])
                })
                .sum();
            worst_lambda = worst_lambda.min(inner);
        }
    }
    Ok(vec![
        Check {
            name: "nonanticipativity-dual-monotone".into(),
            residual: (-worst_rho).max(0.0),
            pass: worst_rho >= -1e-8,
        },
        Check {
            name: "price-monotone-in-demand".into(),
            residual: (-worst_lambda).max(0.0),
            pass: worst_lambda >= -1e-8,
        },
    ])
}

fn suite_corollary2(inst: &MarketInstance, seed: u64) -> Result<Vec<Check>, CliError> {
    let mut rng = Probe(seed);
    let slp = solve_slp(inst)?;
    let mut magnitude = 0.0f64;
    let mut direction = 0.0f64;
    let mut probes = 0;
    for (g, gen) in inst.generators.iter().enumerate() {
        if !gen.r_u.is_finite() || !gen.r_v.is_finite() || gen.r_u + gen.r_v == 0.0 {
            continue;
        }
        let span = gen.r_u + gen.r_v;
        for _ in 0..3 {
            let delta = rng.range(0.1, 2.0);
            let probes_g =
                price_sensitivity(inst, &slp.precommit, delta, &gen.id, DualPreference::Min)?;
            for p in &probes_g {
                if !p.interior {
                    continue;
                }
                for d in [p.delta_lambda_up, p.delta_lambda_down.map(|v| -v)] {
                    let Some(d) = d else { continue };
                    probes += 1;
                    // d is the per-unit-increase direction; magnitude in
                    // {0, span}, sign nonpositive for x up.
                    let m = d.abs().min((d.abs() - span).abs());
                    magnitude = magnitude.max(m);
                    direction = direction.max(d);
                }
            }
        }
        let _ = g;
    }
    Ok(vec![
        Check {
            name: "delta-lambda-in-magnitude-set".into(),
            residual: magnitude,
            pass: magnitude <= 1e-8,
        },
        Check {
            name: "price-falls-as-x-rises".into(),
            residual: direction.max(0.0),
            pass: direction <= 1e-8 && probes > 0,
        },
    ])
}

fn suite_coherence(inst: &MarketInstance, seed: u64) -> Result<Vec<Check>, CliError> {
    let mut rng = Probe(seed);
    let probs = inst.probs();
    let n = probs.len();
    let mut worst = 0.0f64;
    let mut cert = 0.0f64;
    for _ in 0..60 {
        let kappa = rng.range(0.0, 1.0);
        let beta = rng.range(0.05, 1.0);
        let spec = RiskSpec::tail(kappa, beta);
        let z1: Vec<f64> = (0..n).map(|_| rng.range(-50.0, 50.0)).collect();
        let z2: Vec<f64> = (0..n).map(|_| rng.range(-50.0, 50.0)).collect();
        let r1 =
            risk::rho_disutility(&z1, &probs, &spec).map_err(|e| CliError::usage(e.to_string()))?;
        let r2 =
            risk::rho_disutility(&z2, &probs, &spec).map_err(|e| CliError::usage(e.to_string()))?;
        let t = rng.range(0.0, 3.0);
        let scaled: Vec<f64> = z1.iter().map(|v| t * v).collect();
        let rs = risk::rho_disutility(&scaled, &probs, &spec)
            .map_err(|e| CliError::usage(e.to_string()))?;
        worst = worst.max((rs - t * r1).abs());
        let a = rng.range(-20.0, 20.0);
        let shifted: Vec<f64> = z1.iter().map(|v| v + a).collect();
        let rt = risk::rho_disutility(&shifted, &probs, &spec)
            .map_err(|e| CliError::usage(e.to_string()))?;
        worst = worst.max((rt - (r1 - a)).abs());
        let sum: Vec<f64> = z1.iter().zip(&z2).map(|(x, y)| x + y).collect();
        let rsum = risk::rho_disutility(&sum, &probs, &spec)
            .map_err(|e| CliError::usage(e.to_string()))?;
        worst = worst.max((rsum - r1 - r2).max(0.0));
        let dominated: Vec<f64> = z1.iter().map(|v| v - rng.range(0.0, 5.0)).collect();
        let rd = risk::rho_disutility(&dominated, &probs, &spec)
            .map_err(|e| CliError::usage(e.to_string()))?;
        worst = worst.max((r1 - rd).max(0.0));
        let mu = risk::worst_case_measure(&z1, &probs, &spec)
            .map_err(|e| CliError::usage(e.to_string()))?;
        let certified: f64 = mu.iter().zip(&z1).map(|(m, v)| -m * v).sum();
        cert = cert.max((certified - r1).abs());
    }
    Ok(vec![
        Check {
            name: "coherence-axioms".into(),
            residual: worst,
            pass: worst <= 1e-9,
        },
        Check {
            name: "dual-certificate".into(),
            residual: cert,
            pass: cert <= 1e-10,
        },
    ])
}

fn suite_kkt(inst: &MarketInstance) -> Result<Vec<Check>, CliError> {
    let slp = solve_slp(inst)?;
    let resolved = dispatch::resolve_solution_prices(inst, &slp, DualPreference::Min)?;
    let mut kkt = 0.0f64;
    for (si, sd) in resolved.scenarios.iter().enumerate() {
        for (g, gen) in inst.generators.iter().enumerate() {
            if !gen.r_u.is_finite() || !gen.r_v.is_finite() {
                continue;
            }
            let cap = inst.capacity(g, si);
            let x = sd.dispatch[g];
            if x > 1e-6 && x < cap - 1e-6 {
                let node = inst.network.node_index(&gen.node).unwrap();
                kkt = kkt.max((sd.prices[node] + sd.nonant_duals[g] - gen.c).abs());
            }
        }
    }
    Ok(vec![Check {
        name: "interior-kkt".into(),
        residual: kkt,
        pass: kkt <= 1e-8,
    }])
}

fn suite_cost_recovery(inst: &MarketInstance) -> Result<Vec<Check>, CliError> {
    // Expected profit per generator under the stochastic program's own
    // joint duals.
    let slp = solve_slp(inst)?;
    let probs = inst.probs();
    let mut worst = f64::INFINITY;
    for gen in &inst.generators {
        let mut expected = 0.0;
        for (s, sd) in slp.scenarios.iter().enumerate() {
            expected += probs[s] * generator_profit(inst, sd, &gen.id)?;
        }
        worst = worst.min(expected);
    }
    Ok(vec![Check {
        name: "cost-recovery-in-expectation".into(),
        residual: (-worst).max(0.0),
        pass: worst >= -1e-6,
    }])
}
