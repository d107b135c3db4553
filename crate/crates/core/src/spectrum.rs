//! Expected test risk of isotropic ridge regression through the singular
//! values of the design matrix.
//!
//! For `x ~ N(0, I_d)` the risk of the ridge estimator with parameter `λ`
//! depends on the data only through the padded singular values `γ` of `X`:
//!
//! ```text
//! R̄(λ) = E_γ[ Σᵢ S(γᵢ) ] + σ²,   S(γ) = (‖β*‖²λ²/d + σ²γ²) / (γ² + λ)²
//! ```
//!
//! and is minimized at the constant `λ* = dσ²/‖β*‖²`, where
//! `S(γ) = σ² / (γ² + λ*)`. Since appending a row can only increase every
//! singular value, coupling the `n`- and `(n+1)`-row designs orders the
//! per-draw sums whenever `S` is non-increasing in `γ`.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::problem::{sample_design, standard_gaussian};
use crate::stats::{accumulate_trials, MeanVar, RiskEstimate};
use crate::stream::trial_seed;

/// Singular values below this fraction of `γ₁` count as zero in the
/// `λ → 0⁺` limit.
pub const RANK_TOL: f64 = 1e-12;

/// Padded singular values of an `n × d` design, sorted non-increasing.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpectrumSample {
    pub gammas: Vec<f64>,
    pub n: usize,
    pub d: usize,
}

impl SpectrumSample {
    pub fn sum_of_squares(&self) -> f64 {
        self.gammas.iter().map(|g| g * g).sum()
    }
}

pub fn singular_spectrum(design: &DMatrix<f64>) -> SpectrumSample {
    let (n, d) = design.shape();
    let mut gammas = linalg::singular_values(design);
    gammas.resize(d, 0.0);
    SpectrumSample { gammas, n, d }
}

/// Parameters of the isotropic problem that the risk depends on.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct IsoModel {
    pub d: usize,
    pub beta_norm: f64,
    pub sigma: f64,
}

impl IsoModel {
    pub fn new(d: usize, beta_norm: f64, sigma: f64) -> Result<Self> {
        if d == 0 {
            return Err(Error::param("d", "dimension must be at least 1"));
        }
        if !(beta_norm >= 0.0) || !beta_norm.is_finite() {
            return Err(Error::param(
                "beta_norm",
                format!("must be finite and >= 0, got {beta_norm}"),
            ));
        }
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::param(
                "sigma",
                format!("must be finite and >= 0, got {sigma}"),
            ));
        }
        Ok(Self {
            d,
            beta_norm,
            sigma,
        })
    }

    /// `‖β*‖² + σ²`, the risk of the null estimator.
    pub fn null_risk(&self) -> f64 {
        self.beta_norm * self.beta_norm + self.sigma * self.sigma
    }

    /// `dσ²/‖β*‖²`; infinite when `β* = 0`.
    pub fn optimal_lambda(&self) -> f64 {
        optimal_lambda_iso(self.d, self.sigma, self.beta_norm)
    }

    /// Per-term summand `S(γ)`. `λ = 0` is the `λ → 0⁺` limit and
    /// `λ = ∞` the null estimator.
    pub fn summand(&self, gamma: f64, lambda: f64) -> f64 {
        let b2_over_d = self.beta_norm * self.beta_norm / self.d as f64;
        let s2 = self.sigma * self.sigma;
        if lambda.is_infinite() {
            return b2_over_d;
        }
        if lambda == 0.0 {
            return if gamma > 0.0 {
                s2 / (gamma * gamma)
            } else {
                b2_over_d
            };
        }
        let g2 = gamma * gamma;
        (b2_over_d * lambda * lambda + s2 * g2) / (g2 + lambda).powi(2)
    }

    /// `Σᵢ S(γᵢ)` with the `λ = 0` rank cutoff applied.
    pub fn summand_sum(&self, gammas: &[f64], lambda: f64) -> f64 {
        let cutoff = if lambda == 0.0 {
            rank_cutoff(gammas)
        } else {
            0.0
        };
        gammas
            .iter()
            .map(|&g| self.summand(if g > cutoff { g } else { 0.0 }, lambda))
            .sum()
    }

    /// `Σᵢ σ²/(γᵢ² + λ*)`, the summand at the optimal ridge parameter.
    pub fn optimal_summand_sum(&self, gammas: &[f64]) -> f64 {
        let lambda = self.optimal_lambda();
        if lambda.is_infinite() {
            return self.summand_sum(gammas, lambda);
        }
        let s2 = self.sigma * self.sigma;
        if lambda == 0.0 {
            return self.summand_sum(gammas, 0.0);
        }
        gammas.iter().map(|&g| s2 / (g * g + lambda)).sum()
    }

    /// `d/dλ Σᵢ S(γᵢ) = 2(‖β*‖²λ/d − σ²) Σᵢ γᵢ²/(γᵢ² + λ)³` for `λ > 0`.
    pub fn summand_sum_derivative(&self, gammas: &[f64], lambda: f64) -> f64 {
        let scale = 2.0
            * (self.beta_norm * self.beta_norm * lambda / self.d as f64 - self.sigma * self.sigma);
        scale
            * gammas
                .iter()
                .map(|&g| {
                    let g2 = g * g;
                    g2 / (g2 + lambda).powi(3)
                })
                .sum::<f64>()
    }
}

fn rank_cutoff(gammas: &[f64]) -> f64 {
    let top = gammas.iter().copied().fold(0.0_f64, f64::max);
    RANK_TOL * top
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda.is_nan() || lambda < 0.0 {
        return Err(Error::NegativeLambda(lambda));
    }
    Ok(())
}

fn check_trials(trials: usize) -> Result<()> {
    if trials == 0 {
        return Err(Error::param("trials", "must be at least 1"));
    }
    Ok(())
}

/// Spectrum of the standard `n × d` Gaussian design of one trial.
fn trial_spectrum(n: usize, d: usize, seed: u64, trial: u64) -> Vec<f64> {
    singular_spectrum(&standard_gaussian(n, d, trial_seed(seed, trial))).gammas
}

/// Monte Carlo estimate of `E_γ[Σᵢ S(γᵢ)] + σ²`.
pub fn expected_risk_iso(
    n: usize,
    lambda: f64,
    d: usize,
    beta_norm: f64,
    sigma: f64,
    trials: usize,
    seed: u64,
) -> Result<RiskEstimate> {
    check_lambda(lambda)?;
    check_trials(trials)?;
    let model = IsoModel::new(d, beta_norm, sigma)?;
    let acc = accumulate_trials(trials, MeanVar::new, |acc, t| {
        acc.push(model.summand_sum(&trial_spectrum(n, d, seed, t), lambda));
    });
    Ok(RiskEstimate::from_moments(&acc, lambda).with_offset(sigma * sigma))
}

/// `λ* = dσ²/‖β*‖²`, independent of `n`. Returns `+∞` when `β* = 0`:
/// the null estimator is then optimal.
pub fn optimal_lambda_iso(d: usize, sigma: f64, beta_norm: f64) -> f64 {
    if beta_norm == 0.0 {
        return f64::INFINITY;
    }
    d as f64 * sigma * sigma / (beta_norm * beta_norm)
}

/// `E_γ[Σᵢ σ²/(γᵢ² + λ*)] + σ²`.
pub fn optimal_risk_iso(
    n: usize,
    d: usize,
    sigma: f64,
    beta_norm: f64,
    trials: usize,
    seed: u64,
) -> Result<RiskEstimate> {
    check_trials(trials)?;
    let model = IsoModel::new(d, beta_norm, sigma)?;
    let acc = accumulate_trials(trials, MeanVar::new, |acc, t| {
        acc.push(model.optimal_summand_sum(&trial_spectrum(n, d, seed, t)));
    });
    Ok(RiskEstimate::from_moments(&acc, model.optimal_lambda()).with_offset(sigma * sigma))
}

/// Spectra of `X_n` and of `X_{n+1}`, the same design with one more row.
pub fn coupled_spectrum_pair(
    n: usize,
    d: usize,
    covariance: &DMatrix<f64>,
    seed: u64,
) -> Result<(SpectrumSample, SpectrumSample)> {
    let x = sample_design(n + 1, d, covariance, seed)?;
    let head = x.rows(0, n).into_owned();
    Ok((singular_spectrum(&head), singular_spectrum(&x)))
}

/// Spectra drawn once and reused for every `λ` (common random numbers).
#[derive(Clone, Debug)]
pub struct SpectrumBank {
    pub n: usize,
    pub d: usize,
    pub seed: u64,
    spectra: Vec<Vec<f64>>,
}

impl SpectrumBank {
    pub fn draw(n: usize, d: usize, trials: usize, seed: u64) -> Result<Self> {
        check_trials(trials)?;
        if d == 0 {
            return Err(Error::param("d", "dimension must be at least 1"));
        }
        let spectra = crate::stats::map_trials(trials, |t| trial_spectrum(n, d, seed, t));
        Ok(Self {
            n,
            d,
            seed,
            spectra,
        })
    }

    pub fn trials(&self) -> usize {
        self.spectra.len()
    }

    pub fn spectra(&self) -> &[Vec<f64>] {
        &self.spectra
    }

    pub fn risk(&self, model: &IsoModel, lambda: f64) -> RiskEstimate {
        let mut acc = MeanVar::new();
        for g in &self.spectra {
            acc.push(model.summand_sum(g, lambda));
        }
        RiskEstimate::from_moments(&acc, lambda).with_offset(model.sigma * model.sigma)
    }

    pub fn derivative(&self, model: &IsoModel, lambda: f64) -> f64 {
        let total: f64 = self
            .spectra
            .iter()
            .map(|g| model.summand_sum_derivative(g, lambda))
            .sum();
        total / self.spectra.len() as f64
    }
}

/// Risk estimates over a grid of sample sizes and ridge parameters, all
/// sharing one design draw per trial (the `n`-row design is the prefix of
/// the largest one).
#[derive(Clone, Debug, Serialize)]
pub struct IsoSweep {
    pub model: IsoModel,
    pub ns: Vec<usize>,
    pub lambdas: Vec<f64>,
    /// `risks[i][j]` is the estimate at `ns[i]`, `lambdas[j]`.
    pub risks: Vec<Vec<RiskEstimate>>,
    /// Estimates at the optimal `λ*`.
    pub optimal: Vec<RiskEstimate>,
}

pub fn sweep_iso(
    model: IsoModel,
    ns: &[usize],
    lambdas: &[f64],
    trials: usize,
    seed: u64,
) -> Result<IsoSweep> {
    check_trials(trials)?;
    for &l in lambdas {
        check_lambda(l)?;
    }
    let n_max = ns.iter().copied().max().unwrap_or(0);
    let cols = lambdas.len() + 1;
    let acc = accumulate_trials(
        trials,
        || vec![vec![MeanVar::new(); cols]; ns.len()],
        |acc, t| {
            let x = standard_gaussian(n_max, model.d, trial_seed(seed, t));
            for (i, &n) in ns.iter().enumerate() {
                let gammas = singular_spectrum(&x.rows(0, n).into_owned()).gammas;
                for (j, &l) in lambdas.iter().enumerate() {
                    acc[i][j].push(model.summand_sum(&gammas, l));
                }
                acc[i][cols - 1].push(model.optimal_summand_sum(&gammas));
            }
        },
    );
    let s2 = model.sigma * model.sigma;
    let risks = acc
        .iter()
        .map(|row| {
            lambdas
                .iter()
                .zip(row)
                .map(|(&l, m)| RiskEstimate::from_moments(m, l).with_offset(s2))
                .collect()
        })
        .collect();
    let optimal = acc
        .iter()
        .map(|row| {
            RiskEstimate::from_moments(&row[cols - 1], model.optimal_lambda()).with_offset(s2)
        })
        .collect();
    Ok(IsoSweep {
        model,
        ns: ns.to_vec(),
        lambdas: lambdas.to_vec(),
        risks,
        optimal,
    })
}
