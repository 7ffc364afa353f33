//! Property tests for the distribution and risk primitives.

use proptest::prelude::*;
use sdm::model::EmpiricalDistribution;
use sdm::risk::{
    self, expectation, lower_tail_mean, q_beta, rho_disutility, worst_case_measure, RiskSpec,
};

fn distribution() -> impl Strategy<Value = EmpiricalDistribution> {
    (2usize..12)
        .prop_flat_map(|n| {
            (
                proptest::collection::vec(-100.0f64..100.0, n),
                proptest::collection::vec(0.05f64..1.0, n),
            )
        })
        .prop_map(|(vals, weights)| {
            let total: f64 = weights.iter().sum();
            let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
            EmpiricalDistribution::new(&vals, &probs).unwrap()
        })
}

proptest! {
    #[test]
    fn pseudoinverse_is_nondecreasing_and_on_support(dist in distribution(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let x_lo = dist.pseudoinverse_cdf(lo).unwrap();
        let x_hi = dist.pseudoinverse_cdf(hi).unwrap();
        prop_assert!(x_lo <= x_hi);
        prop_assert!(dist.support().contains(&x_lo));
        prop_assert!(dist.support().contains(&x_hi));
    }

    #[test]
    fn pseudoinverse_of_cdf_stays_left(dist in distribution(), k in 0usize..12) {
        let support = dist.support();
        let v = support[k % support.len()];
        let p = dist.cdf(v);
        let back = dist.pseudoinverse_cdf(p.min(1.0)).unwrap();
        prop_assert!(back <= v + 1e-12);
    }

    #[test]
    fn masses_sum_to_one(dist in distribution()) {
        let total: f64 = dist.probs().iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn q_beta_matches_tail_identity(dist in distribution(), beta in 0.05f64..1.0) {
        let z = dist.support();
        let p = dist.probs();
        let q = q_beta(z, p, beta).unwrap();
        let tm = lower_tail_mean(z, p, beta).unwrap();
        let e = expectation(z, p);
        prop_assert!((q - beta * (e - tm)).abs() <= 1e-10 * (1.0 + e.abs()));
    }

    #[test]
    fn coherence_axioms(dist in distribution(), kappa in 0.0f64..1.0, beta in 0.05f64..1.0,
                        t in 0.0f64..4.0, shift in -50.0f64..50.0) {
        let z = dist.support().to_vec();
        let p = dist.probs().to_vec();
        let spec = RiskSpec::tail(kappa, beta);
        let r = rho_disutility(&z, &p, &spec).unwrap();
        let scale = 1.0 + z.iter().fold(0.0f64, |m, v| m.max(v.abs()));

        let scaled: Vec<f64> = z.iter().map(|v| t * v).collect();
        let rs = rho_disutility(&scaled, &p, &spec).unwrap();
        prop_assert!((rs - t * r).abs() <= 1e-10 * scale * (1.0 + t));

        let shifted: Vec<f64> = z.iter().map(|v| v + shift).collect();
        let rt = rho_disutility(&shifted, &p, &spec).unwrap();
        prop_assert!((rt - (r - shift)).abs() <= 1e-10 * scale);

        // Monotonicity against a dominated variable.
        let worse: Vec<f64> = z.iter().enumerate().map(|(i, v)| v - (i % 3) as f64).collect();
        let rw = rho_disutility(&worse, &p, &spec).unwrap();
        prop_assert!(rw >= r - 1e-10 * scale);

        // Subadditivity against the reversed vector.
        let mut rev = z.clone();
        rev.reverse();
        let rr = rho_disutility(&rev, &p, &spec).unwrap();
        let sum: Vec<f64> = z.iter().zip(&rev).map(|(a, b)| a + b).collect();
        let rsum = rho_disutility(&sum, &p, &spec).unwrap();
        prop_assert!(rsum <= r + rr + 1e-10 * scale);
    }

    #[test]
    fn worst_case_certifies_rho(dist in distribution(), kappa in 0.0f64..1.0, beta in 0.05f64..1.0) {
        let z = dist.support();
        let p = dist.probs();
        let spec = RiskSpec::tail(kappa, beta);
        let mu = worst_case_measure(z, p, &spec).unwrap();
        let total: f64 = mu.iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-10);
        prop_assert!(mu.iter().all(|m| *m >= -1e-12));
        let cert: f64 = mu.iter().zip(z).map(|(m, v)| -m * v).sum();
        let rho = rho_disutility(z, p, &spec).unwrap();
        let scale = 1.0 + z.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        prop_assert!((cert - rho).abs() <= 1e-10 * scale);
    }

    #[test]
    fn duality_with_extreme_points(kappa in 0.0f64..1.0, n in 2usize..6) {
        let probs: Vec<f64> = vec![1.0 / n as f64; n];
        let z: Vec<f64> = (0..n).map(|i| (i * i) as f64 - 3.0).collect();
        let beta = 0.5;
        let spec = RiskSpec::tail(kappa, beta);
        let set = risk::extreme_points(&spec, &probs, 5000).unwrap();
        let neg: Vec<f64> = z.iter().map(|v| -v).collect();
        let lp = risk::risk_value_lp(&neg, &set).unwrap();
        let direct = rho_disutility(&z, &probs, &spec).unwrap();
        prop_assert!((lp - direct).abs() <= 1e-9 * (1.0 + direct.abs()));
    }
}
