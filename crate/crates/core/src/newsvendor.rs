//! Closed-form risk-averse pre-commitment quantiles, their brute-force
//! oracle, and expected-profit lower bounds.
//!
//! For a fixed dispatch distribution the pre-commitment problem is a
//! newsvendor: deviations up cost `r_u`/MWh, deviations down cost
//! `r_v`/MWh. Risk aversion with coefficient `kappa` and spectrum mean
//! `beta_bar` loads an extra `kappa (1 - beta_bar) (r_u + r_v)` per MWh
//! onto the adverse regime - curtailment scenarios for a generator selling
//! without risk trading, shortage scenarios for the system view with a
//! complete security market. The optimal setpoint is the corresponding
//! critical fractile of the dispatch distribution.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::EmpiricalDistribution;
use crate::risk::RiskSpec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NewsvendorError {
    #[error("r_u + r_v must be positive and finite, got {0}")]
    BadDeviationCosts(f64),
    #[error("beta_bar {0} outside (0, 1]")]
    BadBetaBar(f64),
    #[error("kappa {kappa} outside [0, {limit}]")]
    BadKappa { kappa: f64, limit: f64 },
    #[error("newsvendor prices must satisfy e > c > s, got e={e}, c={c}, s={s}")]
    BadPrices { e: f64, c: f64, s: f64 },
    #[error("empty support")]
    EmptySupport,
    #[error(transparent)]
    Risk(#[from] crate::risk::RiskError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TradingMode {
    NoTrading,
    WithTrading,
}

/// Classic newsvendor prices; `to_deviation_costs` maps them onto the
/// market's deviation costs via r_u = c - s, r_v = e - c.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewsvendorParams {
    /// Marginal emergency order cost.
    pub e: f64,
    /// Marginal salvage value.
    pub s: f64,
    /// Marginal sale price.
    pub p: f64,
    /// Marginal ordering cost.
    pub c: f64,
}

impl NewsvendorParams {
    pub fn validate(&self) -> Result<(), NewsvendorError> {
        if !(self.e > self.c && self.c > self.s) {
            return Err(NewsvendorError::BadPrices {
                e: self.e,
                c: self.c,
                s: self.s,
            });
        }
        Ok(())
    }

    /// (r_u, r_v) = (c - s, e - c); note r_u + r_v = e - s exactly.
    pub fn to_deviation_costs(&self) -> (f64, f64) {
        (self.c - self.s, self.e - self.c)
    }
}

/// kappa, beta_bar and the contraction alpha = 1/(1 + kappa(1 - beta_bar)).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RiskCoefficients {
    pub kappa: f64,
    pub beta_bar: f64,
    pub alpha: f64,
}

impl RiskCoefficients {
    pub fn new(kappa: f64, beta_bar: f64) -> Result<Self, NewsvendorError> {
        check_domain(kappa, beta_bar)?;
        Ok(Self {
            kappa,
            beta_bar,
            alpha: 1.0 / (1.0 + kappa * (1.0 - beta_bar)),
        })
    }

    pub fn from_spec(spec: &RiskSpec) -> Result<Self, NewsvendorError> {
        spec.validate()?;
        Self::new(spec.kappa, spec.beta_bar())
    }
}

fn check_domain(kappa: f64, beta_bar: f64) -> Result<(), NewsvendorError> {
    if !(beta_bar > 0.0 && beta_bar <= 1.0) {
        return Err(NewsvendorError::BadBetaBar(beta_bar));
    }
    let limit = 1.0 / beta_bar;
    if !(kappa >= 0.0) || kappa > limit + 1e-9 {
        return Err(NewsvendorError::BadKappa { kappa, limit });
    }
    Ok(())
}

fn check_costs(r_u: f64, r_v: f64) -> Result<(), NewsvendorError> {
    let s = r_u + r_v;
    if !(s > 0.0) || !s.is_finite() || r_u < 0.0 || r_v < 0.0 {
        return Err(NewsvendorError::BadDeviationCosts(s));
    }
    Ok(())
}

/// Critical fractile of the pre-commitment without risk trading:
/// `r_u / ((r_u + r_v)(1 + kappa(1 - beta_bar)))`. Strictly decreasing in
/// kappa for beta_bar < 1.
pub fn precommit_quantile_no_trading(
    r_u: f64,
    r_v: f64,
    kappa: f64,
    beta_bar: f64,
) -> Result<f64, NewsvendorError> {
    check_costs(r_u, r_v)?;
    check_domain(kappa, beta_bar)?;
    Ok(r_u / ((r_u + r_v) * (1.0 + kappa * (1.0 - beta_bar))))
}

/// Critical fractile with a complete risk market:
/// `(r_u + (r_u + r_v) kappa (1 - beta_bar)) / ((r_u + r_v)(1 + kappa(1 - beta_bar)))`.
/// Strictly increasing in kappa for beta_bar < 1 and always at least the
/// no-trading fractile.
pub fn precommit_quantile_with_trading(
    r_u: f64,
    r_v: f64,
    kappa: f64,
    beta_bar: f64,
) -> Result<f64, NewsvendorError> {
    check_costs(r_u, r_v)?;
    check_domain(kappa, beta_bar)?;
    let s = r_u + r_v;
    let a = kappa * (1.0 - beta_bar);
    Ok((r_u + s * a) / (s * (1.0 + a)))
}

/// Risk-adjusted deviation disutility of setpoint `x` against the dispatch
/// distribution: expected deviation cost plus the tail loading on the
/// adverse regime. Piecewise linear in x with kinks only at the support.
pub fn risk_adjusted_deviation_cost(
    dist: &EmpiricalDistribution,
    x: f64,
    r_u: f64,
    r_v: f64,
    spec: &RiskSpec,
    mode: TradingMode,
) -> Result<f64, NewsvendorError> {
    check_costs(r_u, r_v)?;
    spec.validate()?;
    let loading = spec.kappa * (1.0 - spec.beta_bar()) * (r_u + r_v);
    let mut total = 0.0;
    for (&d, &p) in dist.support().iter().zip(dist.probs()) {
        let under = (d - x).max(0.0);
        let over = (x - d).max(0.0);
        let adverse = match mode {
            TradingMode::NoTrading => over,
            TradingMode::WithTrading => under,
        };
        total += p * (r_u * under + r_v * over + loading * adverse);
    }
    Ok(total)
}

/// Exhaustive minimisation of [`risk_adjusted_deviation_cost`] over the
/// support plus midpoints of adjacent support points. The objective is
/// piecewise linear with kinks only at support points, so the grid is
/// exact. Returns the smallest minimiser, matching the pseudoinverse-inf
/// convention.
pub fn brute_force_precommit(
    dist: &EmpiricalDistribution,
    r_u: f64,
    r_v: f64,
    spec: &RiskSpec,
    mode: TradingMode,
) -> Result<f64, NewsvendorError> {
    Ok(brute_force_argmin_set(dist, r_u, r_v, spec, mode)?[0])
}

/// The full argmin set over the evaluation grid, smallest first.
pub fn brute_force_argmin_set(
    dist: &EmpiricalDistribution,
    r_u: f64,
    r_v: f64,
    spec: &RiskSpec,
    mode: TradingMode,
) -> Result<Vec<f64>, NewsvendorError> {
    if dist.support().is_empty() {
        return Err(NewsvendorError::EmptySupport);
    }
    let mut grid: Vec<f64> = Vec::with_capacity(2 * dist.support().len());
    for (k, &v) in dist.support().iter().enumerate() {
        grid.push(v);
        if let Some(&next) = dist.support().get(k + 1) {
            grid.push(0.5 * (v + next));
        }
    }
    let mut values = Vec::with_capacity(grid.len());
    let mut best = f64::INFINITY;
    for &x in &grid {
        let v = risk_adjusted_deviation_cost(dist, x, r_u, r_v, spec, mode)?;
        if v < best {
            best = v;
        }
        values.push(v);
    }
    let tol = 1e-9 * (1.0 + best.abs());
    Ok(grid
        .iter()
        .zip(&values)
        .filter(|(_, v)| **v <= best + tol)
        .map(|(x, _)| *x)
        .collect())
}

/// Expected-profit floor: `(1 - alpha) r_u x*` without risk trading,
/// `-(1 - alpha) r_v x*` with it.
pub fn profit_lower_bound(
    r_u: f64,
    r_v: f64,
    x_star: f64,
    coeffs: &RiskCoefficients,
    mode: TradingMode,
) -> f64 {
    match mode {
        TradingMode::NoTrading => (1.0 - coeffs.alpha) * r_u * x_star,
        TradingMode::WithTrading => -(1.0 - coeffs.alpha) * r_v * x_star,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m1_dist() -> EmpiricalDistribution {
        EmpiricalDistribution::new(&[10.0, 20.0, 30.0, 40.0, 50.0], &[0.2; 5]).unwrap()
    }

    #[test]
    fn quantile_formulas() {
        let q = precommit_quantile_no_trading(3.0, 1.0, 0.0, 0.5).unwrap();
        assert!((q - 0.75).abs() < 1e-12);
        let q = precommit_quantile_no_trading(3.0, 1.0, 1.0, 0.5).unwrap();
        assert!((q - 0.5).abs() < 1e-12);
        let q = precommit_quantile_with_trading(3.0, 1.0, 0.0, 0.5).unwrap();
        assert!((q - 0.75).abs() < 1e-12);
        let q = precommit_quantile_with_trading(3.0, 1.0, 1.0, 0.5).unwrap();
        assert!((q - 5.0 / 6.0).abs() < 1e-12);
        // beta_bar = 1 collapses both to the risk-neutral fractile.
        for kappa in [0.0, 0.5, 1.0] {
            let a = precommit_quantile_no_trading(3.0, 1.0, kappa, 1.0).unwrap();
            let b = precommit_quantile_with_trading(3.0, 1.0, kappa, 1.0).unwrap();
            assert!((a - 0.75).abs() < 1e-12);
            assert!((b - 0.75).abs() < 1e-12);
        }
        assert!(precommit_quantile_no_trading(0.0, 0.0, 0.0, 0.5).is_err());
        assert!(precommit_quantile_no_trading(3.0, 1.0, 3.0, 0.5).is_err());
    }

    #[test]
    fn quantile_monotonicity_in_kappa() {
        let mut last_no = f64::INFINITY;
        let mut last_with = 0.0;
        for k in 0..=8 {
            let kappa = k as f64 / 4.0; // up to 1/beta_bar = 2
            let no = precommit_quantile_no_trading(3.0, 1.0, kappa, 0.5).unwrap();
            let with = precommit_quantile_with_trading(3.0, 1.0, kappa, 0.5).unwrap();
            assert!(no <= last_no + 1e-12);
            assert!(with >= last_with - 1e-12);
            assert!(no <= 0.75 + 1e-12 && with >= 0.75 - 1e-12);
            assert!(with >= no);
            last_no = no;
            last_with = with;
        }
    }

    #[test]
    fn brute_force_m1() {
        let dist = m1_dist();
        let rn = RiskSpec::risk_neutral();
        for mode in [TradingMode::NoTrading, TradingMode::WithTrading] {
            let x = brute_force_precommit(&dist, 3.0, 1.0, &rn, mode).unwrap();
            assert!((x - 40.0).abs() < 1e-12, "risk neutral {mode:?} gave {x}");
        }
        let averse = RiskSpec::tail(1.0, 0.5);
        let x = brute_force_precommit(&dist, 3.0, 1.0, &averse, TradingMode::NoTrading).unwrap();
        assert!((x - 30.0).abs() < 1e-12, "no trading gave {x}");
        let x = brute_force_precommit(&dist, 3.0, 1.0, &averse, TradingMode::WithTrading).unwrap();
        assert!((x - 50.0).abs() < 1e-12, "with trading gave {x}");
    }

    #[test]
    fn closed_form_lands_in_argmin() {
        let dist = m1_dist();
        for (kappa, beta) in [(0.0, 0.5), (0.5, 0.5), (1.0, 0.5), (1.5, 0.3), (2.0, 0.5)] {
            let spec = RiskSpec::tail(kappa, beta);
            for mode in [TradingMode::NoTrading, TradingMode::WithTrading] {
                let q = match mode {
                    TradingMode::NoTrading => {
                        precommit_quantile_no_trading(3.0, 1.0, kappa, beta).unwrap()
                    }
                    TradingMode::WithTrading => {
                        precommit_quantile_with_trading(3.0, 1.0, kappa, beta).unwrap()
                    }
                };
                let x_cf = dist.pseudoinverse_cdf(q).unwrap();
                let set = brute_force_argmin_set(&dist, 3.0, 1.0, &spec, mode).unwrap();
                assert!(
                    set.iter().any(|v| (v - x_cf).abs() < 1e-9),
                    "kappa {kappa} beta {beta} {mode:?}: {x_cf} not in {set:?}"
                );
            }
        }
    }

    #[test]
    fn conversion_roundtrip() {
        let params = NewsvendorParams {
            e: 11.0,
            s: 7.0,
            p: 11.0,
            c: 10.0,
        };
        params.validate().unwrap();
        let (r_u, r_v) = params.to_deviation_costs();
        assert_eq!(r_u, 3.0);
        assert_eq!(r_v, 1.0);
        assert_eq!(r_u + r_v, params.e - params.s);
        assert!(NewsvendorParams {
            e: 5.0,
            s: 7.0,
            p: 0.0,
            c: 6.0
        }
        .validate()
        .is_err());
    }

    #[test]
    fn profit_bounds() {
        let neutral = RiskCoefficients::new(0.0, 0.5).unwrap();
        assert_eq!(
            profit_lower_bound(3.0, 1.0, 40.0, &neutral, TradingMode::NoTrading),
            0.0
        );
        assert_eq!(
            profit_lower_bound(3.0, 1.0, 40.0, &neutral, TradingMode::WithTrading),
            0.0
        );
        // alpha = 2/3 comes from kappa = 1, beta_bar = 0.5.
        let averse = RiskCoefficients::new(1.0, 0.5).unwrap();
        assert!((averse.alpha - 2.0 / 3.0).abs() < 1e-12);
        let b = profit_lower_bound(3.0, 1.0, 30.0, &averse, TradingMode::NoTrading);
        assert!((b - 30.0).abs() < 1e-12);
        let b = profit_lower_bound(3.0, 1.0, 50.0, &averse, TradingMode::WithTrading);
        assert!((b + 50.0 / 3.0).abs() < 1e-12);
    }
}
