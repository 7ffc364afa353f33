//! Problem instances: networks, generators, scenario sets and empirical
//! distributions with pseudoinverse quantiles.
//!
//! Instances are immutable after construction and safe to share across
//! threads. All probability mass checks run at 1e-12; probabilities given
//! as fraction strings ("1/25") are kept exact until summed.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub const PROB_SUM_TOL: f64 = 1e-12;
/// Absolute tolerance when merging equal dispatch values into one atom.
pub const MERGE_TOL: f64 = 1e-9;

/// A scenario probability, exact when the input supplied a fraction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Prob {
    Exact { num: i64, den: i64 },
    Float(f64),
}

impl Prob {
    pub fn value(&self) -> f64 {
        match *self {
            Prob::Exact { num, den } => num as f64 / den as f64,
            Prob::Float(p) => p,
        }
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, Prob::Exact { .. })
    }
}

impl Serialize for Prob {
    fn serialize<S: Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        match *self {
            Prob::Exact { num, den } => ser.serialize_str(&format!("{num}/{den}")),
            Prob::Float(p) => ser.serialize_f64(p),
        }
    }
}

impl<'de> Deserialize<'de> for Prob {
    fn deserialize<D: Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Frac(String),
        }
        match Raw::deserialize(de)? {
            Raw::Num(p) => Ok(Prob::Float(p)),
            Raw::Frac(s) => {
                let (num, den) = s
                    .split_once('/')
                    .ok_or_else(|| D::Error::custom(format!("bad fraction `{s}`")))?;
                let num: i64 = num.trim().parse().map_err(D::Error::custom)?;
                let den: i64 = den.trim().parse().map_err(D::Error::custom)?;
                if den <= 0 {
                    return Err(D::Error::custom("fraction denominator must be positive"));
                }
                Ok(Prob::Exact { num, den })
            }
        }
    }
}

/// Sums a probability list, exactly when every entry is a fraction.
/// Returns (sum, exact).
pub fn prob_sum(probs: &[Prob]) -> (f64, bool) {
    let all_exact = probs.iter().all(|p| p.is_exact());
    if all_exact {
        // Accumulate as a rational in i128 to avoid overflow.
        let mut num: i128 = 0;
        let mut den: i128 = 1;
        for p in probs {
            if let Prob::Exact { num: n, den: d } = *p {
                num = num * d as i128 + n as i128 * den;
                den *= d as i128;
                let g = gcd(num.unsigned_abs(), den.unsigned_abs()) as i128;
                if g > 1 {
                    num /= g;
                    den /= g;
                }
            }
        }
        (num as f64 / den as f64, true)
    } else {
        (probs.iter().map(|p| p.value()).sum(), false)
    }
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a.max(1)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Line {
    pub from: String,
    pub to: String,
    /// Per-unit susceptance.
    pub susceptance: f64,
    /// Thermal limit in MW; `inf` accepted on input for an uncapped line.
    #[serde(deserialize_with = "de_maybe_inf", serialize_with = "ser_maybe_inf")]
    pub capacity: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Network {
    pub nodes: Vec<String>,
    pub lines: Vec<Line>,
    /// Value of Lost Load, the administrative price cap in $/MWh.
    pub voll: f64,
}

impl Network {
    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n == name)
    }

    pub fn is_connected(&self) -> bool {
        if self.nodes.is_empty() {
            return false;
        }
        let mut adj: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for l in &self.lines {
            adj.entry(&l.from).or_default().push(&l.to);
            adj.entry(&l.to).or_default().push(&l.from);
        }
        let mut seen = BTreeSet::new();
        let mut stack = vec![self.nodes[0].as_str()];
        while let Some(n) = stack.pop() {
            if seen.insert(n) {
                if let Some(next) = adj.get(n) {
                    stack.extend(next.iter().copied());
                }
            }
        }
        self.nodes.iter().all(|n| seen.contains(n.as_str()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Generator {
    pub id: String,
    pub node: String,
    /// Marginal generation cost in $/MWh.
    pub c: f64,
    /// Marginal cost of upward deviation; `inf` forbids ramping up.
    #[serde(deserialize_with = "de_maybe_inf", serialize_with = "ser_maybe_inf")]
    pub r_u: f64,
    /// Marginal cost of downward deviation; `inf` forbids ramping down.
    #[serde(deserialize_with = "de_maybe_inf", serialize_with = "ser_maybe_inf")]
    pub r_v: f64,
    /// Deterministic capacity in MW, overridable per scenario.
    pub capacity: f64,
}

fn de_maybe_inf<'de, D: Deserializer<'de>>(de: D) -> Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Word(String),
    }
    match Raw::deserialize(de)? {
        Raw::Num(x) => Ok(x),
        Raw::Word(w) if w == "inf" => Ok(f64::INFINITY),
        Raw::Word(w) => Err(D::Error::custom(format!(
            "expected number or \"inf\", got `{w}`"
        ))),
    }
}

fn ser_maybe_inf<S: Serializer>(x: &f64, ser: S) -> Result<S::Ok, S::Error> {
    if x.is_infinite() {
        ser.serialize_str("inf")
    } else {
        ser.serialize_f64(*x)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub prob: Prob,
    /// Demand per node in MW; nodes absent from the map carry zero demand.
    pub demand: BTreeMap<String, f64>,
    /// Per-scenario generator capacity overrides (wind realisations).
    #[serde(default)]
    pub capacity_overrides: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarketInstance {
    pub network: Network,
    pub generators: Vec<Generator>,
    pub scenarios: Vec<Scenario>,
    /// Risk block keyed by agent id (generator ids and "iso"); absent for
    /// risk-neutral instances. Kept as raw JSON here so the model layer does
    /// not depend on the risk layer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub risk: Option<serde_json::Value>,
}

impl MarketInstance {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        let mut inst: MarketInstance = serde_json::from_str(text)?;
        // Deterministic ordering regardless of input order.
        inst.scenarios.sort_by(|a, b| a.id.cmp(&b.id));
        inst.generators.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(inst)
    }

    pub fn generator(&self, id: &str) -> Option<&Generator> {
        self.generators.iter().find(|g| g.id == id)
    }

    pub fn generator_index(&self, id: &str) -> Option<usize> {
        self.generators.iter().position(|g| g.id == id)
    }

    pub fn scenario_index(&self, id: &str) -> Option<usize> {
        self.scenarios.iter().position(|s| s.id == id)
    }

    /// Capacity of generator `g` in scenario `s`, override applied.
    pub fn capacity(&self, g: usize, s: usize) -> f64 {
        let gen = &self.generators[g];
        *self.scenarios[s]
            .capacity_overrides
            .get(&gen.id)
            .unwrap_or(&gen.capacity)
    }

    pub fn demand(&self, node: &str, s: usize) -> f64 {
        *self.scenarios[s].demand.get(node).unwrap_or(&0.0)
    }

    pub fn probs(&self) -> Vec<f64> {
        self.scenarios.iter().map(|s| s.prob.value()).collect()
    }
}

/// One violated invariant found by [`validate_instance`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub code: &'static str,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

fn violation(code: &'static str, message: impl Into<String>) -> Violation {
    Violation {
        code,
        message: message.into(),
    }
}

/// Checks every structural instance invariant and returns the violations.
/// An empty report means the instance is valid. Per-scenario servability is
/// checked separately by the dispatch layer because it needs an LP solve.
pub fn validate_instance(inst: &MarketInstance) -> Vec<Violation> {
    let mut out = Vec::new();
    let net = &inst.network;

    if net.nodes.is_empty() {
        out.push(violation("empty-network", "network has no nodes"));
    } else if !net.is_connected() {
        out.push(violation("disconnected", "network graph is not connected"));
    }
    {
        let mut seen = BTreeSet::new();
        for n in &net.nodes {
            if !seen.insert(n) {
                out.push(violation(
                    "duplicate-node",
                    format!("node `{n}` appears twice"),
                ));
            }
        }
    }
    for l in &net.lines {
        if net.node_index(&l.from).is_none() || net.node_index(&l.to).is_none() {
            out.push(violation(
                "unknown-line-endpoint",
                format!("line {}-{} references an unknown node", l.from, l.to),
            ));
        }
        if !(l.capacity > 0.0) {
            out.push(violation(
                "nonpositive-capacity",
                format!("line {}-{} capacity must be > 0", l.from, l.to),
            ));
        }
        if !(l.susceptance > 0.0) || !l.susceptance.is_finite() {
            out.push(violation(
                "nonpositive-susceptance",
                format!(
                    "line {}-{} susceptance must be finite and > 0",
                    l.from, l.to
                ),
            ));
        }
    }
    if !(net.voll > 0.0) || !net.voll.is_finite() {
        out.push(violation("nonpositive-voll", "VOLL must be finite and > 0"));
    }

    if inst.generators.is_empty() {
        out.push(violation("no-generators", "instance has no generators"));
    }
    let mut has_inflexible = false;
    for g in &inst.generators {
        if g.r_u + g.r_v > 0.0 {
            has_inflexible = true;
        }
        if g.c < 0.0 || !g.c.is_finite() {
            out.push(violation(
                "negative-cost",
                format!("generator `{}` has c < 0", g.id),
            ));
        }
        if g.r_u < 0.0 || g.r_v < 0.0 {
            out.push(violation(
                "negative-deviation-cost",
                format!("generator `{}` has negative r_u or r_v", g.id),
            ));
        }
        if g.capacity < 0.0 {
            out.push(violation(
                "negative-capacity",
                format!("generator `{}` has negative capacity", g.id),
            ));
        }
        if net.node_index(&g.node).is_none() {
            out.push(violation(
                "unknown-generator-node",
                format!("generator `{}` sits at unknown node `{}`", g.id, g.node),
            ));
        }
    }
    if !inst.generators.is_empty() && !has_inflexible {
        out.push(violation(
            "no-inflexible-generator",
            "every generator has r_u = r_v = 0; at least one must have r_u + r_v > 0",
        ));
    }

    if inst.scenarios.is_empty() {
        out.push(violation("no-scenarios", "instance has no scenarios"));
    }
    for s in &inst.scenarios {
        if !(s.prob.value() > 0.0) {
            out.push(violation(
                "nonpositive-probability",
                format!("scenario `{}` has P <= 0", s.id),
            ));
        }
        for (node, d) in &s.demand {
            if net.node_index(node).is_none() {
                out.push(violation(
                    "unknown-demand-node",
                    format!("scenario `{}` has demand at unknown node `{}`", s.id, node),
                ));
            }
            if *d < 0.0 {
                out.push(violation(
                    "negative-demand",
                    format!("scenario `{}` has negative demand at `{node}`", s.id),
                ));
            }
        }
        for (gid, cap) in &s.capacity_overrides {
            if inst.generator(gid).is_none() {
                out.push(violation(
                    "unknown-override-generator",
                    format!("scenario `{}` overrides unknown generator `{gid}`", s.id),
                ));
            }
            if *cap < 0.0 {
                out.push(violation(
                    "negative-capacity",
                    format!("scenario `{}` gives `{gid}` negative capacity", s.id),
                ));
            }
        }
    }
    if !inst.scenarios.is_empty() {
        let probs: Vec<Prob> = inst.scenarios.iter().map(|s| s.prob).collect();
        let (sum, exact) = prob_sum(&probs);
        let ok = if exact {
            sum == 1.0
        } else {
            (sum - 1.0).abs() <= PROB_SUM_TOL
        };
        if !ok {
            out.push(violation(
                "probabilities-not-normalized",
                format!("scenario probabilities sum to {sum}, expected 1"),
            ));
        }
    }
    out
}

/// A finite distribution with sorted support, used for dispatch quantiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalDistribution {
    support: Vec<f64>,
    probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("probability {0} outside [0, 1]")]
    ProbabilityOutOfRange(f64),
    #[error("empty support")]
    EmptySupport,
    #[error("support and probability lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("probabilities sum to {0}, expected 1")]
    NotNormalized(f64),
    #[error("unknown generator id `{0}`")]
    UnknownGenerator(String),
}

impl EmpiricalDistribution {
    /// Builds a distribution from (value, mass) pairs, sorting the support
    /// and merging values closer than [`MERGE_TOL`].
    pub fn new(values: &[f64], probs: &[f64]) -> Result<Self, ModelError> {
        if values.is_empty() {
            return Err(ModelError::EmptySupport);
        }
        if values.len() != probs.len() {
            return Err(ModelError::LengthMismatch(values.len(), probs.len()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(ModelError::NotNormalized(total));
        }
        let mut pairs: Vec<(f64, f64)> =
            values.iter().copied().zip(probs.iter().copied()).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut support = Vec::with_capacity(pairs.len());
        let mut mass = Vec::with_capacity(pairs.len());
        for (v, p) in pairs {
            match support.last() {
                Some(&last) if (v - last) <= MERGE_TOL => {
                    *mass.last_mut().unwrap() += p;
                }
                _ => {
                    support.push(v);
                    mass.push(p);
                }
            }
        }
        Ok(Self {
            support,
            probs: mass,
        })
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn mean(&self) -> f64 {
        self.support
            .iter()
            .zip(&self.probs)
            .map(|(v, p)| v * p)
            .sum()
    }

    /// F(x) = P(X <= x).
    pub fn cdf(&self, x: f64) -> f64 {
        self.support
            .iter()
            .zip(&self.probs)
            .take_while(|(v, _)| **v <= x)
            .map(|(_, p)| p)
            .sum()
    }

    /// inf { x in support : F(x) >= p }, with p = 0 mapped to the minimum
    /// support value and p = 1 to the maximum.
    pub fn pseudoinverse_cdf(&self, p: f64) -> Result<f64, ModelError> {
        if !(0.0..=1.0).contains(&p) {
            return Err(ModelError::ProbabilityOutOfRange(p));
        }
        let mut acc = 0.0;
        for (v, mass) in self.support.iter().zip(&self.probs) {
            acc += mass;
            if acc >= p - PROB_SUM_TOL {
                return Ok(*v);
            }
        }
        Ok(*self.support.last().unwrap())
    }
}
