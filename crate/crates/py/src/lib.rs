//! Python bindings over the clearing engine. Instances travel as JSON
//! strings in the same schema the CLI reads; solutions come back as JSON
//! strings, and the scalar risk/quantile primitives map directly.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use sdm::dispatch;
use sdm::equilibrium;
use sdm::lp::DualPreference;
use sdm::model::{EmpiricalDistribution, MarketInstance};
use sdm::newsvendor::{self, TradingMode};
use sdm::risk::{RiskInput, RiskSpec, SpectrumPoint};
use sdm::riskmarket;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_instance(json: &str) -> PyResult<MarketInstance> {
    MarketInstance::from_json(json).map_err(value_err)
}

fn parse_pref(pref: &str) -> PyResult<DualPreference> {
    match pref {
        "min" => Ok(DualPreference::Min),
        "max" => Ok(DualPreference::Max),
        other => Err(value_err(format!(
            "pref must be \"min\" or \"max\", got `{other}`"
        ))),
    }
}

fn parse_mode(mode: &str) -> PyResult<TradingMode> {
    match mode {
        "no-trading" => Ok(TradingMode::NoTrading),
        "with-trading" => Ok(TradingMode::WithTrading),
        other => Err(value_err(format!(
            "mode must be \"no-trading\" or \"with-trading\", got `{other}`"
        ))),
    }
}

fn parse_spec(kappa: f64, spectrum: Vec<(f64, f64)>) -> PyResult<RiskSpec> {
    let spec = RiskSpec {
        kappa,
        spectrum: spectrum
            .into_iter()
            .map(|(beta, weight)| SpectrumPoint { beta, weight })
            .collect(),
    };
    spec.validate().map_err(value_err)?;
    Ok(spec)
}

fn dist(support: Vec<f64>, probs: Vec<f64>) -> PyResult<EmpiricalDistribution> {
    EmpiricalDistribution::new(&support, &probs).map_err(value_err)
}

/// Violated invariants as strings; an empty list means the instance is
/// valid.
#[pyfunction]
fn validate_instance(instance_json: &str) -> PyResult<Vec<String>> {
    let inst = parse_instance(instance_json)?;
    Ok(sdm::validate_instance(&inst)
        .iter()
        .map(|v| v.to_string())
        .collect())
}

/// Clears the stochastic dispatch market; returns the solution as JSON
/// with per-scenario prices resolved by `pref`.
#[pyfunction]
#[pyo3(signature = (instance_json, pref = "min"))]
fn solve_sdm(instance_json: &str, pref: &str) -> PyResult<String> {
    let inst = parse_instance(instance_json)?;
    let sol = dispatch::solve_slp(&inst).map_err(value_err)?;
    let resolved =
        dispatch::resolve_solution_prices(&inst, &sol, parse_pref(pref)?).map_err(value_err)?;
    serde_json::to_string(&resolved).map_err(value_err)
}

/// One scenario's recourse solve at a fixed pre-commitment vector (ordered
/// by sorted generator id).
#[pyfunction]
#[pyo3(signature = (instance_json, x, scenario, pref = "min"))]
fn solve_recourse(
    instance_json: &str,
    x: Vec<f64>,
    scenario: &str,
    pref: &str,
) -> PyResult<String> {
    let inst = parse_instance(instance_json)?;
    let sd = dispatch::solve_recourse(&inst, &x, scenario, parse_pref(pref)?).map_err(value_err)?;
    serde_json::to_string(&sd).map_err(value_err)
}

/// Clears the risk-trading market; the instance JSON must carry a risk
/// block. Returns the full solution (dispatch, theta, W, pi) as JSON.
#[pyfunction]
fn solve_raslp(instance_json: &str) -> PyResult<String> {
    let inst = parse_instance(instance_json)?;
    let risks = riskmarket::agent_risks_from_instance(&inst).map_err(value_err)?;
    let sol = riskmarket::solve_raslp(&inst, &risks).map_err(value_err)?;
    serde_json::to_string(&sol).map_err(value_err)
}

/// Damped best-response iteration toward a no-trading equilibrium.
#[pyfunction]
#[pyo3(signature = (instance_json, damping = 1.0, max_iters = 50, tol = 1e-6))]
fn iterate_equilibrium(
    instance_json: &str,
    damping: f64,
    max_iters: usize,
    tol: f64,
) -> PyResult<String> {
    let inst = parse_instance(instance_json)?;
    let agents = riskmarket::agent_risks_from_instance(&inst).map_err(value_err)?;
    let risks: Vec<(String, RiskInput)> = agents
        .into_iter()
        .filter(|a| a.agent != riskmarket::ISO_AGENT)
        .map(|a| (a.agent, a.input))
        .collect();
    let res = equilibrium::iterate_fixed_point(
        &inst,
        &risks,
        damping,
        max_iters,
        tol,
        DualPreference::Max,
    )
    .map_err(value_err)?;
    serde_json::to_string(&res).map_err(value_err)
}

/// inf{v in support : F(v) >= p}.
#[pyfunction]
fn pseudoinverse_cdf(support: Vec<f64>, probs: Vec<f64>, p: f64) -> PyResult<f64> {
    dist(support, probs)?
        .pseudoinverse_cdf(p)
        .map_err(value_err)
}

/// Weighted mean deviation from the beta-th quantile of Z.
#[pyfunction]
fn q_beta(values: Vec<f64>, probs: Vec<f64>, beta: f64) -> PyResult<f64> {
    sdm::risk::q_beta(&values, &probs, beta).map_err(value_err)
}

/// Mean of the lowest-beta tail of Z.
#[pyfunction]
fn lower_tail_mean(values: Vec<f64>, probs: Vec<f64>, beta: f64) -> PyResult<f64> {
    sdm::risk::lower_tail_mean(&values, &probs, beta).map_err(value_err)
}

/// Risk-adjusted disutility of a profit vector under (kappa, spectrum).
#[pyfunction]
#[pyo3(signature = (values, probs, kappa, spectrum))]
fn rho_disutility(
    values: Vec<f64>,
    probs: Vec<f64>,
    kappa: f64,
    spectrum: Vec<(f64, f64)>,
) -> PyResult<f64> {
    let spec = parse_spec(kappa, spectrum)?;
    sdm::risk::rho_disutility(&values, &probs, &spec).map_err(value_err)
}

/// The measure certifying rho(Z) = E_mu[-Z].
#[pyfunction]
fn worst_case_measure(
    values: Vec<f64>,
    probs: Vec<f64>,
    kappa: f64,
    spectrum: Vec<(f64, f64)>,
) -> PyResult<Vec<f64>> {
    let spec = parse_spec(kappa, spectrum)?;
    sdm::risk::worst_case_measure(&values, &probs, &spec).map_err(value_err)
}

/// Closed-form pre-commitment fractile; mode selects the market structure.
#[pyfunction]
fn precommit_quantile(r_u: f64, r_v: f64, kappa: f64, beta_bar: f64, mode: &str) -> PyResult<f64> {
    match parse_mode(mode)? {
        TradingMode::NoTrading => {
            newsvendor::precommit_quantile_no_trading(r_u, r_v, kappa, beta_bar).map_err(value_err)
        }
        TradingMode::WithTrading => {
            newsvendor::precommit_quantile_with_trading(r_u, r_v, kappa, beta_bar)
                .map_err(value_err)
        }
    }
}

/// Grid-search minimiser of the risk-adjusted deviation disutility over a
/// dispatch distribution (the oracle for the closed form).
#[pyfunction]
fn brute_force_precommit(
    support: Vec<f64>,
    probs: Vec<f64>,
    r_u: f64,
    r_v: f64,
    kappa: f64,
    beta: f64,
    mode: &str,
) -> PyResult<f64> {
    let d = dist(support, probs)?;
    let spec = RiskSpec::tail(kappa, beta);
    newsvendor::brute_force_precommit(&d, r_u, r_v, &spec, parse_mode(mode)?).map_err(value_err)
}

/// Expected-profit floor at a given setpoint.
#[pyfunction]
fn profit_lower_bound(
    r_u: f64,
    r_v: f64,
    x_star: f64,
    kappa: f64,
    beta_bar: f64,
    mode: &str,
) -> PyResult<f64> {
    let coeffs = newsvendor::RiskCoefficients::new(kappa, beta_bar).map_err(value_err)?;
    Ok(newsvendor::profit_lower_bound(
        r_u,
        r_v,
        x_star,
        &coeffs,
        parse_mode(mode)?,
    ))
}

#[pymodule]
fn sdm_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(validate_instance, m)?)?;
    m.add_function(wrap_pyfunction!(solve_sdm, m)?)?;
    m.add_function(wrap_pyfunction!(solve_recourse, m)?)?;
    m.add_function(wrap_pyfunction!(solve_raslp, m)?)?;
    m.add_function(wrap_pyfunction!(iterate_equilibrium, m)?)?;
    m.add_function(wrap_pyfunction!(pseudoinverse_cdf, m)?)?;
    m.add_function(wrap_pyfunction!(q_beta, m)?)?;
    m.add_function(wrap_pyfunction!(lower_tail_mean, m)?)?;
    m.add_function(wrap_pyfunction!(rho_disutility, m)?)?;
    m.add_function(wrap_pyfunction!(worst_case_measure, m)?)?;
    m.add_function(wrap_pyfunction!(precommit_quantile, m)?)?;
    m.add_function(wrap_pyfunction!(brute_force_precommit, m)?)?;
    m.add_function(wrap_pyfunction!(profit_lower_bound, m)?)?;
    Ok(())
}
