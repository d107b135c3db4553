//! A two-point distribution on which optimally tuned ridge regression gets
//! worse going from one sample to two.
//!
//! Each sample is `(e₁, 1)` with probability `1 − ε`, or `(e₂, ±A)` with
//! probability `ε/2` each. The truth is `β* = (1, 0)` and the population
//! risk of `β̂` is `(1 − ε)(β̂₁ − 1)² + ε(β̂₂² + A²)`. Since the design
//! `XᵀX = diag(k_clean, k_noisy)` is diagonal, the ridge estimate is
//! `β̂₁ = k_c/(k_c + λ)`, `β̂₂ = Σ±A/(k_n + λ)`, and the expected risk is a
//! finite sum over the `3ⁿ` sample outcomes.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::stats::{accumulate_trials, MeanVar, RiskEstimate};
use crate::stream::{rng_for, trial_seed, Purpose};
use crate::tuner::{minimize_over_lambda, LambdaSearchResult, TunerOptions};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TwoPointDistribution {
    /// Magnitude of the response on the noisy coordinate.
    pub a: f64,
    /// Probability of a noisy sample.
    pub eps: f64,
}

/// What a single sample looks like.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleKind {
    Clean,
    NoisyPlus,
    NoisyMinus,
}

impl TwoPointDistribution {
    /// `ε = 0` is accepted as the degenerate clean-only case.
    pub fn new(a: f64, eps: f64) -> Result<Self> {
        if !(a > 0.0) || !a.is_finite() {
            return Err(Error::param(
                "a",
                format!("must be positive and finite, got {a}"),
            ));
        }
        if !(0.0..1.0).contains(&eps) {
            return Err(Error::param(
                "eps",
                format!("must lie in [0, 1), got {eps}"),
            ));
        }
        Ok(Self { a, eps })
    }

    /// `A = 20`, `ε = 0.02`.
    pub fn standard() -> Self {
        Self { a: 20.0, eps: 0.02 }
    }

    pub fn probability(&self, kind: SampleKind) -> f64 {
        match kind {
            SampleKind::Clean => 1.0 - self.eps,
            SampleKind::NoisyPlus | SampleKind::NoisyMinus => 0.5 * self.eps,
        }
    }

    /// `(1 − ε) + εA²`, the risk of `β̂ = 0`.
    pub fn null_risk(&self) -> f64 {
        (1.0 - self.eps) + self.eps * self.a * self.a
    }

    /// `(1 − ε)(β̂₁ − 1)² + εA²` plus `εβ̂₂²`.
    pub fn population_risk(&self, beta: [f64; 2]) -> f64 {
        (1.0 - self.eps) * (beta[0] - 1.0).powi(2)
            + self.eps * (beta[1] * beta[1] + self.a * self.a)
    }

    /// Ridge estimate from a sample; `λ = 0` with an unseen coordinate
    /// gives `0` on it (the pseudoinverse limit).
    pub fn fit(&self, samples: &[SampleKind], lambda: f64) -> [f64; 2] {
        let mut clean = 0.0;
        let mut noisy = 0.0;
        let mut noisy_sum = 0.0;
        for s in samples {
            match s {
                SampleKind::Clean => clean += 1.0,
                SampleKind::NoisyPlus => {
                    noisy += 1.0;
                    noisy_sum += self.a;
                }
                SampleKind::NoisyMinus => {
                    noisy += 1.0;
                    noisy_sum -= self.a;
                }
            }
        }
        let ratio = |num: f64, k: f64| {
            if k + lambda > 0.0 {
                num / (k + lambda)
            } else {
                0.0
            }
        };
        if lambda.is_infinite() {
            return [0.0, 0.0];
        }
        [ratio(clean, clean), ratio(noisy_sum, noisy)]
    }
}

const KINDS: [SampleKind; 3] = [
    SampleKind::Clean,
    SampleKind::NoisyPlus,
    SampleKind::NoisyMinus,
];

/// All `3ⁿ` ordered sample outcomes with their probabilities.
pub fn outcomes(n: usize, dist: &TwoPointDistribution) -> Vec<(Vec<SampleKind>, f64)> {
    let mut out = vec![(Vec::new(), 1.0)];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|(seq, p)| {
                KINDS.iter().map(move |&k| {
                    let mut s = seq.clone();
                    s.push(k);
                    (s, p * dist.probability(k))
                })
            })
            .collect();
    }
    out
}

fn check_n(n: usize) -> Result<()> {
    if n != 1 && n != 2 {
        return Err(Error::param(
            "n",
            format!("exact enumeration supports n = 1 or 2, got {n}"),
        ));
    }
    Ok(())
}

/// Exact expected population risk of ridge trained on `n` samples.
pub fn exact_expected_risk(n: usize, lambda: f64, dist: &TwoPointDistribution) -> Result<f64> {
    check_n(n)?;
    if lambda.is_nan() || lambda < 0.0 {
        return Err(Error::NegativeLambda(lambda));
    }
    Ok(outcomes(n, dist)
        .iter()
        .map(|(s, p)| p * dist.population_risk(dist.fit(s, lambda)))
        .sum())
}

/// `ε²A²/(1 − ε)²`, the exact minimizer for a single sample.
pub fn analytic_lambda_one(dist: &TwoPointDistribution) -> f64 {
    (dist.eps * dist.a / (1.0 - dist.eps)).powi(2)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct CounterexampleOptimum {
    pub n: usize,
    pub search: LambdaSearchResult,
    /// Closed-form minimizer, available for `n = 1`.
    pub analytic_lambda: Option<f64>,
}

pub fn optimal_counterexample(
    n: usize,
    dist: &TwoPointDistribution,
) -> Result<CounterexampleOptimum> {
    check_n(n)?;
    let hi = 1e6 * (1.0 + dist.a * dist.a);
    let options = TunerOptions::default()
        .with_rel_tol(1e-10)
        .with_null_risk(dist.null_risk());
    let mut search = minimize_over_lambda(
        |l| exact_expected_risk(n, l, dist).expect("n and λ validated"),
        0.0,
        hi,
        options,
    )?;
    let analytic_lambda = (n == 1).then(|| analytic_lambda_one(dist));
    // A value search cannot locate a flat minimum much better than
    // sqrt(machine epsilon), so prefer the closed form when it is no worse.
    if let Some(l) = analytic_lambda {
        let r = exact_expected_risk(n, l, dist)?;
        if r <= search.risk_at_opt + 1e-12 * search.risk_at_opt.abs() {
            search.lambda_opt = l;
            search.risk_at_opt = r;
        }
    }
    Ok(CounterexampleOptimum {
        n,
        search,
        analytic_lambda,
    })
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct NonMonotonicityReport {
    pub dist: TwoPointDistribution,
    pub lambda_one: f64,
    pub risk_one: f64,
    pub lambda_two: f64,
    pub risk_two: f64,
    /// `risk_two − risk_one`; positive means more data hurt.
    pub gap: f64,
}

impl NonMonotonicityReport {
    pub fn is_non_monotone(&self) -> bool {
        self.gap > 0.0
    }
}

pub fn verify_nonmonotonicity(dist: &TwoPointDistribution) -> Result<NonMonotonicityReport> {
    let one = optimal_counterexample(1, dist)?;
    let two = optimal_counterexample(2, dist)?;
    Ok(NonMonotonicityReport {
        dist: *dist,
        lambda_one: one.search.lambda_opt,
        risk_one: one.search.risk_at_opt,
        lambda_two: two.search.lambda_opt,
        risk_two: two.search.risk_at_opt,
        gap: two.search.risk_at_opt - one.search.risk_at_opt,
    })
}

/// Single-sample risk given that the sample was of kind `kind`.
pub fn conditional_risk_one(kind: SampleKind, lambda: f64, dist: &TwoPointDistribution) -> f64 {
    dist.population_risk(dist.fit(&[kind], lambda))
}

/// Monte Carlo estimate from simulated samples, for cross-checking the
/// enumeration.
pub fn simulate_risk(
    n: usize,
    lambda: f64,
    dist: &TwoPointDistribution,
    trials: usize,
    seed: u64,
) -> Result<RiskEstimate> {
    if trials == 0 {
        return Err(Error::param("trials", "must be at least 1"));
    }
    if lambda.is_nan() || lambda < 0.0 {
        return Err(Error::NegativeLambda(lambda));
    }
    let acc = accumulate_trials(trials, MeanVar::new, |acc, t| {
        let mut rng = rng_for(trial_seed(seed, t), Purpose::Simulation);
        let samples: Vec<SampleKind> = (0..n)
            .map(|_| {
                let u: f64 = rng.random();
                if u < dist.eps {
                    if rng.random::<bool>() {
                        SampleKind::NoisyPlus
                    } else {
                        SampleKind::NoisyMinus
                    }
                } else {
                    SampleKind::Clean
                }
            })
            .collect();
        acc.push(dist.population_risk(dist.fit(&samples, lambda)));
    });
    Ok(RiskEstimate::from_moments(&acc, lambda))
}
