//! Coherent risk measures over finite scenario spaces.
//!
//! The canonical disutility of a profit variable Z is
//!
//! ```text
//! rho(Z) = -(1 - kappa) E[Z] - kappa * sum_j w_j TailMean_{beta_j}[Z]
//! ```
//!
//! where `TailMean_b[Z]` is the probability-weighted mean of the lowest-b
//! portion of Z's distribution, splitting a boundary atom proportionally.
//! Equivalently `rho(Z) = -E[Z] + kappa * sum_j w_j q_{beta_j}[Z]/beta_j`
//! with `q_b` the weighted mean deviation from the b-th quantile. The dual
//! set of the measure is polyhedral; [`extreme_points`] enumerates it and
//! [`worst_case_measure`] produces the maximising measure directly, which
//! doubles as the separation oracle for cutting-plane solves.
//!
//! The quantile formulas downstream accept the full coefficient range
//! `0 <= kappa <= 1/beta_bar`; monotonicity (and with it coherence) of rho
//! itself holds on `kappa <= 1`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CERT_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RiskError {
    #[error("beta {0} outside (0, 1]")]
    BadBeta(f64),
    #[error("kappa {kappa} outside [0, {limit}]")]
    BadKappa { kappa: f64, limit: f64 },
    #[error("spectrum weights sum to {0}, expected 1")]
    WeightsNotNormalized(f64),
    #[error("empty spectrum")]
    EmptySpectrum,
    #[error("negative spectrum weight {0}")]
    NegativeWeight(f64),
    #[error("values and probabilities have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("extreme-point enumeration needs {needed} points, bound is {bound}")]
    EnumerationBound { needed: usize, bound: usize },
    #[error("risk set has no extreme points")]
    EmptyRiskSet,
    #[error("measure entry {0} is negative or not finite")]
    BadMeasure(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumPoint {
    pub beta: f64,
    pub weight: f64,
}

/// Risk coefficient kappa plus a finite spectrum of tail levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskSpec {
    pub kappa: f64,
    pub spectrum: Vec<SpectrumPoint>,
}

impl RiskSpec {
    /// Risk-neutral: kappa = 0 with a trivial spectrum.
    pub fn risk_neutral() -> Self {
        Self {
            kappa: 0.0,
            spectrum: vec![SpectrumPoint {
                beta: 1.0,
                weight: 1.0,
            }],
        }
    }

    /// Point-mass spectrum at a single tail level.
    pub fn tail(kappa: f64, beta: f64) -> Self {
        Self {
            kappa,
            spectrum: vec![SpectrumPoint { beta, weight: 1.0 }],
        }
    }

    pub fn beta_bar(&self) -> f64 {
        self.spectrum.iter().map(|p| p.beta * p.weight).sum()
    }

    pub fn validate(&self) -> Result<(), RiskError> {
        if self.spectrum.is_empty() {
            return Err(RiskError::EmptySpectrum);
        }
        let mut wsum = 0.0;
        for p in &self.spectrum {
            if !(p.beta > 0.0 && p.beta <= 1.0) {
                return Err(RiskError::BadBeta(p.beta));
            }
            if p.weight < 0.0 {
                return Err(RiskError::NegativeWeight(p.weight));
            }
            wsum += p.weight;
        }
        if (wsum - 1.0).abs() > 1e-9 {
            return Err(RiskError::WeightsNotNormalized(wsum));
        }
        let limit = 1.0 / self.beta_bar();
        if self.kappa < -1e-12 || self.kappa > limit + 1e-9 {
            return Err(RiskError::BadKappa {
                kappa: self.kappa,
                limit,
            });
        }
        Ok(())
    }

    pub fn is_risk_neutral(&self) -> bool {
        self.kappa == 0.0
    }
}

/// Explicit list of probability measures: the extreme points of a dual set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyhedralRiskSet {
    pub extreme_points: Vec<Vec<f64>>,
}

impl PolyhedralRiskSet {
    pub fn validate(&self) -> Result<(), RiskError> {
        if self.extreme_points.is_empty() {
            return Err(RiskError::EmptyRiskSet);
        }
        for m in &self.extreme_points {
            let mut s = 0.0;
            for &p in m {
                if !(p >= -1e-10) || !p.is_finite() {
                    return Err(RiskError::BadMeasure(p));
                }
                s += p;
            }
            if (s - 1.0).abs() > 1e-8 {
                return Err(RiskError::BadMeasure(s));
            }
        }
        Ok(())
    }
}

/// Either a parametric spec or an explicit extreme-point list, as read from
/// the instance risk block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RiskInput {
    Spec(RiskSpec),
    Explicit(PolyhedralRiskSet),
}

fn check_lengths(z: &[f64], probs: &[f64]) -> Result<(), RiskError> {
    if z.len() != probs.len() {
        return Err(RiskError::LengthMismatch(z.len(), probs.len()));
    }
    Ok(())
}

pub fn expectation(z: &[f64], probs: &[f64]) -> f64 {
    z.iter().zip(probs).map(|(v, p)| v * p).sum()
}

/// Weighted mean deviation from the beta-th quantile:
/// `min_eta E[max((1-beta)(eta-Z), beta(Z-eta))]`. The objective is
/// piecewise linear convex in eta with kinks at the support, so scanning
/// support points is exact.
pub fn q_beta(z: &[f64], probs: &[f64], beta: f64) -> Result<f64, RiskError> {
    check_lengths(z, probs)?;
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(RiskError::BadBeta(beta));
    }
    let mut best = f64::INFINITY;
    for &eta in z {
        let val: f64 = z
            .iter()
            .zip(probs)
            .map(|(&v, &p)| p * ((1.0 - beta) * (eta - v)).max(beta * (v - eta)))
            .sum();
        if val < best {
            best = val;
        }
    }
    Ok(best)
}

/// Tail shares for the lowest-`beta` tail of Z, tied groups sharing the
/// boundary mass proportionally to probability. Returns nu with
/// `sum nu = 1`, `0 <= nu <= P/beta`, supported on the tail.
pub fn tail_measure(z: &[f64], probs: &[f64], beta: f64) -> Vec<f64> {
    let n = z.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| z[a].total_cmp(&z[b]).then(a.cmp(&b)));
    let mut nu = vec![0.0; n];
    let mut acc = 0.0;
    let mut k = 0;
    while k < n && acc < beta - 1e-15 {
        let mut g_end = k + 1;
        while g_end < n && z[order[g_end]] == z[order[k]] {
            g_end += 1;
        }
        let g_mass: f64 = order[k..g_end].iter().map(|&i| probs[i]).sum();
        if g_mass <= 0.0 {
            k = g_end;
            continue;
        }
        let take = g_mass.min(beta - acc);
        let share = take / g_mass;
        for &i in &order[k..g_end] {
            nu[i] = probs[i] * share / beta;
        }
        acc += take;
        k = g_end;
    }
    nu
}

/// Mean of the lowest-`beta` portion of Z's distribution; beta = 1 gives
/// the plain expectation.
pub fn lower_tail_mean(z: &[f64], probs: &[f64], beta: f64) -> Result<f64, RiskError> {
    check_lengths(z, probs)?;
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(RiskError::BadBeta(beta));
    }
    let nu = tail_measure(z, probs, beta);
    Ok(expectation(z, &nu))
}

/// Risk-adjusted disutility of the profit variable Z.
pub fn rho_disutility(z: &[f64], probs: &[f64], spec: &RiskSpec) -> Result<f64, RiskError> {
    check_lengths(z, probs)?;
    spec.validate()?;
    let e = expectation(z, probs);
    if spec.kappa == 0.0 {
        return Ok(-e);
    }
    let mut tail_mix = 0.0;
    for p in &spec.spectrum {
        if p.weight == 0.0 {
            continue;
        }
        tail_mix += p.weight * lower_tail_mean(z, probs, p.beta)?;
    }
    Ok(-(1.0 - spec.kappa) * e - spec.kappa * tail_mix)
}

/// The measure attaining `rho(Z) = E_mu[-Z]`:
/// `mu = (1-kappa) P + kappa sum_j w_j nu_j` with nu_j the beta_j tail
/// measure of Z. Within kappa <= 1 this is a probability measure; for
/// kappa in (1, 1/beta_bar] it is signed.
pub fn worst_case_measure(
    z: &[f64],
    probs: &[f64],
    spec: &RiskSpec,
) -> Result<Vec<f64>, RiskError> {
    check_lengths(z, probs)?;
    spec.validate()?;
    let n = z.len();
    let mut mu: Vec<f64> = probs.iter().map(|p| (1.0 - spec.kappa) * p).collect();
    if spec.kappa != 0.0 {
        for sp in &spec.spectrum {
            if sp.weight == 0.0 {
                continue;
            }
            let nu = tail_measure(z, probs, sp.beta);
            for i in 0..n {
                mu[i] += spec.kappa * sp.weight * nu[i];
            }
        }
    }
    Ok(mu)
}

/// Exact extreme-point list of the dual set of [`rho_disutility`].
/// Fails with [`RiskError::EnumerationBound`] when more than `bound` points
/// would be produced; callers fall back to cutting planes then.
pub fn extreme_points(
    spec: &RiskSpec,
    probs: &[f64],
    bound: usize,
) -> Result<PolyhedralRiskSet, RiskError> {
    spec.validate()?;
    let n = probs.len();
    if spec.kappa == 0.0 {
        return Ok(PolyhedralRiskSet {
            extreme_points: vec![probs.to_vec()],
        });
    }
    // Vertices of one tail polytope {0 <= nu <= P/beta, sum nu = 1}:
    // a saturated subset S plus at most one fractional boundary scenario.
    let mut per_level: Vec<Vec<Vec<f64>>> = Vec::new();
    for sp in &spec.spectrum {
        if sp.weight == 0.0 {
            continue;
        }
        let beta = sp.beta;
        let mut verts: Vec<Vec<f64>> = Vec::new();
        let mut stack: Vec<(usize, Vec<usize>, f64)> = vec![(0, Vec::new(), 0.0)];
        while let Some((start, chosen, mass)) = stack.pop() {
            if (mass - beta).abs() <= 1e-12 {
                let mut nu = vec![0.0; n];
                for &i in &chosen {
                    nu[i] = probs[i] / beta;
                }
                verts.push(nu);
                if verts.len() > bound {
                    return Err(RiskError::EnumerationBound {
                        needed: verts.len(),
                        bound,
                    });
                }
                continue;
            }
            // Fractional completion: any scenario outside the saturated
            // subset whose mass covers the remainder.
            for b in 0..n {
                if chosen.contains(&b) {
                    continue;
                }
                if mass + probs[b] >= beta - 1e-12 {
                    let mut nu = vec![0.0; n];
                    for &i in &chosen {
                        nu[i] = probs[i] / beta;
                    }
                    nu[b] = (beta - mass) / beta;
                    verts.push(nu);
                    if verts.len() > bound {
                        return Err(RiskError::EnumerationBound {
                            needed: verts.len(),
                            bound,
                        });
                    }
                }
            }
            // Extend the saturated subset in index order.
            for i in start..n {
                if mass + probs[i] < beta + 1e-12 {
                    let mut c = chosen.clone();
                    c.push(i);
                    stack.push((i + 1, c, (mass + probs[i]).min(beta)));
                }
            }
        }
        dedupe(&mut verts);
        per_level.push(verts);
    }

    // Minkowski combination across levels.
    let weights: Vec<f64> = spec
        .spectrum
        .iter()
        .filter(|p| p.weight != 0.0)
        .map(|p| p.weight)
        .collect();
    let mut combos: Vec<Vec<f64>> = vec![probs.iter().map(|p| (1.0 - spec.kappa) * p).collect()];
    for (level, verts) in per_level.iter().enumerate() {
        let w = weights[level];
        let mut next = Vec::with_capacity(combos.len() * verts.len());
        for base in &combos {
            for nu in verts {
                let mut mu = base.clone();
                for i in 0..n {
                    mu[i] += spec.kappa * w * nu[i];
                }
                next.push(mu);
            }
            if next.len() > bound {
                return Err(RiskError::EnumerationBound {
                    needed: next.len(),
                    bound,
                });
            }
        }
        combos = next;
    }
    dedupe(&mut combos);
    Ok(PolyhedralRiskSet {
        extreme_points: combos,
    })
}

fn dedupe(points: &mut Vec<Vec<f64>>) {
    points.sort_by(|a, b| {
        for (x, y) in a.iter().zip(b) {
            match x.total_cmp(y) {
                std::cmp::Ordering::Equal => continue,
                o => return o,
            }
        }
        std::cmp::Ordering::Equal
    });
    points.dedup_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .all(|(x, y)| (*x - *y).abs() <= 1e-12)
    });
}

/// `max_m sum_w P_m(w) Z(w)`: the value of the extreme-point risk LP.
pub fn risk_value_lp(z: &[f64], riskset: &PolyhedralRiskSet) -> Result<f64, RiskError> {
    if riskset.extreme_points.is_empty() {
        return Err(RiskError::EmptyRiskSet);
    }
    let mut best = f64::NEG_INFINITY;
    for m in &riskset.extreme_points {
        check_lengths(z, m)?;
        let v = expectation(z, m);
        if v > best {
            best = v;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    const EQ: &[f64] = &[0.5, 0.5];

    #[test]
    fn q_beta_examples() {
        assert!((q_beta(&[0.0, 10.0], EQ, 0.5).unwrap() - 2.5).abs() < 1e-12);
        assert!((q_beta(&[2.0, 10.0], EQ, 0.5).unwrap() - 2.0).abs() < 1e-12);
        assert!(q_beta(&[7.0, 7.0], EQ, 0.3).unwrap().abs() < 1e-12);
        assert!(q_beta(&[1.0], &[1.0], 0.0).is_err());
    }

    #[test]
    fn lower_tail_mean_examples() {
        assert!((lower_tail_mean(&[2.0, 10.0], EQ, 0.5).unwrap() - 2.0).abs() < 1e-12);
        assert!((lower_tail_mean(&[2.0, 10.0], EQ, 1.0).unwrap() - 6.0).abs() < 1e-12);
        assert!(lower_tail_mean(&[0.0, 10.0], EQ, 0.25).unwrap().abs() < 1e-12);
    }

    #[test]
    fn rho_examples() {
        let z = [2.0, 10.0];
        let rn = RiskSpec::risk_neutral();
        assert!((rho_disutility(&z, EQ, &rn).unwrap() + 6.0).abs() < 1e-12);
        let averse = RiskSpec::tail(1.0, 0.5);
        assert!((rho_disutility(&z, EQ, &averse).unwrap() + 2.0).abs() < 1e-12);
        // Translation by a constant.
        let shifted: Vec<f64> = z.iter().map(|v| v + 3.5).collect();
        let a = rho_disutility(&z, EQ, &averse).unwrap();
        let b = rho_disutility(&shifted, EQ, &averse).unwrap();
        assert!((a - b - 3.5).abs() < 1e-12);
    }

    #[test]
    fn q_beta_tail_identity() {
        let z = [3.0, -1.0, 7.0, 2.0];
        let p = [0.1, 0.4, 0.3, 0.2];
        for beta in [0.2, 0.35, 0.5, 0.8, 1.0] {
            let q = q_beta(&z, &p, beta).unwrap();
            let tm = lower_tail_mean(&z, &p, beta).unwrap();
            let e = expectation(&z, &p);
            assert!(
                (q - beta * (e - tm)).abs() < 1e-10,
                "beta {beta}: q {q} vs {}",
                beta * (e - tm)
            );
        }
    }

    #[test]
    fn worst_case_examples() {
        let z = [2.0, 10.0];
        let rn = RiskSpec::risk_neutral();
        assert_eq!(worst_case_measure(&z, EQ, &rn).unwrap(), vec![0.5, 0.5]);
        let averse = RiskSpec::tail(1.0, 0.5);
        let mu = worst_case_measure(&z, EQ, &averse).unwrap();
        assert!((mu[0] - 1.0).abs() < 1e-12 && mu[1].abs() < 1e-12);
        // Certification.
        let rho = rho_disutility(&z, EQ, &averse).unwrap();
        let cert: f64 = mu.iter().zip(&z).map(|(m, v)| -m * v).sum();
        assert!((rho - cert).abs() < CERT_TOL);
        // Constant Z falls back to the physical measure.
        let c = [4.0, 4.0];
        let mu = worst_case_measure(&c, EQ, &averse).unwrap();
        assert!((mu[0] - 0.5).abs() < 1e-12 && (mu[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn extreme_point_examples() {
        let rn = RiskSpec::risk_neutral();
        let set = extreme_points(&rn, EQ, 100).unwrap();
        assert_eq!(set.extreme_points, vec![vec![0.5, 0.5]]);

        let averse = RiskSpec::tail(1.0, 0.5);
        let set = extreme_points(&averse, EQ, 100).unwrap();
        assert_eq!(set.extreme_points.len(), 2);
        assert!(set.extreme_points.contains(&vec![1.0, 0.0]));
        assert!(set.extreme_points.contains(&vec![0.0, 1.0]));

        let p4 = [0.25; 4];
        let set = extreme_points(&averse, &p4, 100).unwrap();
        assert_eq!(set.extreme_points.len(), 6, "C(4,2) tail subsets");

        assert!(matches!(
            extreme_points(&averse, &p4, 3),
            Err(RiskError::EnumerationBound { .. })
        ));
    }

    #[test]
    fn risk_value_lp_examples() {
        let p = PolyhedralRiskSet {
            extreme_points: vec![vec![0.5, 0.5]],
        };
        assert!((risk_value_lp(&[2.0, 10.0], &p).unwrap() - 6.0).abs() < 1e-12);
        let two = PolyhedralRiskSet {
            extreme_points: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        };
        assert!((risk_value_lp(&[-2.0, -10.0], &two).unwrap() + 2.0).abs() < 1e-12);
    }

    #[test]
    fn duality_rho_equals_risk_lp() {
        let z = [4.0, -3.0, 8.0, 1.0, 1.0];
        let probs = [0.1, 0.2, 0.3, 0.25, 0.15];
        for (kappa, beta) in [(0.0, 0.5), (0.4, 0.3), (1.0, 0.5), (0.7, 0.9)] {
            let spec = RiskSpec::tail(kappa, beta);
            let set = extreme_points(&spec, &probs, 5000).unwrap();
            let via_lp = risk_value_lp(&z.iter().map(|v| -v).collect::<Vec<_>>(), &set).unwrap();
            let direct = rho_disutility(&z, &probs, &spec).unwrap();
            assert!(
                (via_lp - direct).abs() < 1e-9,
                "kappa {kappa} beta {beta}: lp {via_lp} direct {direct}"
            );
        }
    }

    #[test]
    fn rho_nondecreasing_in_kappa() {
        let z = [4.0, -3.0, 8.0, 1.0];
        let probs = [0.4, 0.2, 0.3, 0.1];
        let mut last = f64::NEG_INFINITY;
        for k in 0..=10 {
            let spec = RiskSpec::tail(k as f64 / 10.0, 0.4);
            let r = rho_disutility(&z, &probs, &spec).unwrap();
            assert!(r >= last - 1e-12);
            last = r;
        }
    }

    #[test]
    fn spec_validation() {
        assert!(RiskSpec::tail(1.5, 0.5).validate().is_ok()); // 1.5 <= 1/0.5
        assert!(RiskSpec::tail(2.5, 0.5).validate().is_err());
        assert!(RiskSpec::tail(0.5, 0.0).validate().is_err());
        assert!(RiskSpec::tail(-0.1, 0.5).validate().is_err());
        let bad = RiskSpec {
            kappa: 0.5,
            spectrum: vec![
                SpectrumPoint {
                    beta: 0.2,
                    weight: 0.3,
                },
                SpectrumPoint {
                    beta: 0.6,
                    weight: 0.3,
                },
            ],
        };
        assert!(matches!(
            bad.validate(),
            Err(RiskError::WeightsNotNormalized(_))
        ));
    }
}
