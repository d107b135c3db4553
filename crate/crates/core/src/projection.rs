//! Ridge regression on randomly projected covariates.
//!
//! Data come from `x ~ N(0, I_p)`, `y = ⟨x, θ⟩ + N(0, σ²)`, but the learner
//! only sees `Px` for a Haar-random `d × p` matrix `P` with orthonormal rows.
//! The part of `θ` outside the row space of `P` acts as extra noise, so the
//! problem is isotropic ridge in dimension `d` with
//!
//! ```text
//! σ̃² = σ² + (p − d)/p · ‖θ‖²,   E‖Pθ‖² = (d/p)‖θ‖²
//! R̄ = σ² + (1 − d/p)‖θ‖² + E_γ[Σᵢ (σ̃²γᵢ² + (‖θ‖²/p)λ²)/(γᵢ² + λ)²]
//! ```
//!
//! with the sum over the `d` padded singular values of an `n × d` Gaussian
//! matrix. The optimal ridge parameter is the constant `pσ̃²/‖θ‖²`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::general::fit_ridge;
use crate::problem::{
    responses_unchecked, sample_orthonormal, standard_gaussian, ProjectionProblem,
};
use crate::spectrum::{
    expected_risk_iso, optimal_risk_iso, singular_spectrum, IsoModel, SpectrumSample,
};
use crate::stats::{accumulate_trials, MeanVar, RiskEstimate};
use crate::stream::trial_seed;

#[derive(Clone, Copy, Debug, Serialize)]
pub struct ProjectedRiskPoint {
    pub d: usize,
    pub lambda: f64,
    pub risk: RiskEstimate,
    pub sigma_tilde_sq: f64,
}

fn check_sizes(p: usize, d: usize) -> Result<()> {
    if d == 0 || d > p {
        return Err(Error::param(
            "d",
            format!("need 1 <= d <= p, got d={d}, p={p}"),
        ));
    }
    Ok(())
}

/// `σ² + (p − d)/p · ‖θ‖²`.
pub fn sigma_tilde_sq(p: usize, d: usize, sigma: f64, theta_norm: f64) -> Result<f64> {
    check_sizes(p, d)?;
    Ok(sigma * sigma + (p - d) as f64 / p as f64 * theta_norm * theta_norm)
}

/// `pσ̃²/‖θ‖²`.
pub fn optimal_lambda_proj(p: usize, d: usize, sigma: f64, theta_norm: f64) -> Result<f64> {
    let st = sigma_tilde_sq(p, d, sigma, theta_norm)?;
    if theta_norm == 0.0 {
        return Err(Error::param(
            "theta_norm",
            "zero signal: infinite regularization is optimal",
        ));
    }
    Ok(p as f64 * st / (theta_norm * theta_norm))
}

/// The isotropic model in dimension `d` with truth norm `‖θ‖√(d/p)` and
/// noise `σ̃` whose risk equals the projected risk. The discarded signal
/// `(1 − d/p)‖θ‖²` is already part of `σ̃²`.
pub fn equivalent_model(p: usize, d: usize, sigma: f64, theta_norm: f64) -> Result<IsoModel> {
    let st = sigma_tilde_sq(p, d, sigma, theta_norm)?;
    let frac = d as f64 / p as f64;
    IsoModel::new(d, theta_norm * frac.sqrt(), st.sqrt())
}

pub fn expected_risk_proj(
    p: usize,
    d: usize,
    n: usize,
    lambda: f64,
    theta_norm: f64,
    sigma: f64,
    trials: usize,
    seed: u64,
) -> Result<RiskEstimate> {
    let model = equivalent_model(p, d, sigma, theta_norm)?;
    expected_risk_iso(n, lambda, d, model.beta_norm, model.sigma, trials, seed)
}

/// `σ̃² + E_γ[Σᵢ σ̃²/(γᵢ² + pσ̃²/‖θ‖²)]`.
pub fn optimal_risk_proj(
    p: usize,
    d: usize,
    n: usize,
    theta_norm: f64,
    sigma: f64,
    trials: usize,
    seed: u64,
) -> Result<RiskEstimate> {
    let model = equivalent_model(p, d, sigma, theta_norm)?;
    optimal_risk_iso(n, d, model.sigma, model.beta_norm, trials, seed)
}

/// Ridge parameter used at each model size in a sweep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ProjectionLambda {
    Optimal,
    Fixed(f64),
}

/// Risk over model sizes at fixed `n`. Each trial draws one `n × p`
/// Gaussian matrix and uses its first `d` columns as the projected design,
/// so neighbouring model sizes share randomness.
pub fn sweep_model_size(
    p: usize,
    n: usize,
    ds: &[usize],
    lambda: ProjectionLambda,
    theta_norm: f64,
    sigma: f64,
    trials: usize,
    seed: u64,
) -> Result<Vec<ProjectedRiskPoint>> {
    if trials == 0 {
        return Err(Error::param("trials", "must be at least 1"));
    }
    let mut setups = Vec::with_capacity(ds.len());
    for &d in ds {
        let model = equivalent_model(p, d, sigma, theta_norm)?;
        let l = match lambda {
            ProjectionLambda::Optimal => optimal_lambda_proj(p, d, sigma, theta_norm)?,
            ProjectionLambda::Fixed(l) if l >= 0.0 => l,
            ProjectionLambda::Fixed(l) => return Err(Error::NegativeLambda(l)),
        };
        setups.push((model, l));
    }
    let d_max = ds.iter().copied().max().unwrap_or(0);
    let acc = accumulate_trials(
        trials,
        || vec![MeanVar::new(); ds.len()],
        |acc, t| {
            let x = standard_gaussian(n, d_max, trial_seed(seed, t));
            for (k, (&d, (model, l))) in ds.iter().zip(&setups).enumerate() {
                let gammas = singular_spectrum(&x.columns(0, d).into_owned()).gammas;
                acc[k].push(model.summand_sum(&gammas, *l));
            }
        },
    );
    Ok(ds
        .iter()
        .zip(&setups)
        .zip(&acc)
        .map(|((&d, (model, l)), m)| ProjectedRiskPoint {
            d,
            lambda: *l,
            risk: RiskEstimate::from_moments(m, *l).with_offset(model.sigma * model.sigma),
            sigma_tilde_sq: model.sigma * model.sigma,
        })
        .collect())
}

/// Spectra of the first `d` and first `d + 1` columns of one `n × (d+1)`
/// Gaussian draw.
pub fn coupled_model_pair(n: usize, d: usize, seed: u64) -> (SpectrumSample, SpectrumSample) {
    let x = standard_gaussian(n, d + 1, seed);
    (
        singular_spectrum(&x.columns(0, d).into_owned()),
        singular_spectrum(&x),
    )
}

/// One ambient-space draw: the risk `σ² + ‖θ − Pᵀβ̂‖²` and its split into
/// discarded signal, estimation error and their cross term.
#[derive(Clone, Copy, Debug)]
pub struct ProjectedDraw {
    pub risk: f64,
    pub discarded: f64,
    pub estimation: f64,
    pub cross: f64,
}

/// Samples `P`, `X ~ N(0, I_p)` and `y`, fits ridge on `XPᵀ` and evaluates
/// the population risk exactly.
pub fn projected_draw(
    problem: &ProjectionProblem,
    d: usize,
    n: usize,
    lambda: f64,
    seed: u64,
) -> Result<ProjectedDraw> {
    problem.check_model_size(d)?;
    let p = problem.p();
    let proj = sample_orthonormal(d, p, seed)?;
    let x = standard_gaussian(n, p, seed);
    let y = responses_unchecked(&x, problem.theta(), problem.sigma(), seed);
    let features: DMatrix<f64> = &x * proj.transpose();
    let fit = fit_ridge(&features, &y, lambda, &DMatrix::identity(d, d))?;
    let target: DVector<f64> = &proj * problem.theta();
    let residual_signal = problem.theta() - proj.transpose() * &target;
    let error = proj.transpose() * (&target - &fit.beta);
    let discarded = residual_signal.norm_squared();
    let estimation = error.norm_squared();
    let cross = 2.0 * residual_signal.dot(&error);
    let full = problem.theta() - proj.transpose() * &fit.beta;
    Ok(ProjectedDraw {
        risk: problem.sigma().powi(2) + full.norm_squared(),
        discarded,
        estimation,
        cross,
    })
}

/// Monte Carlo risk from explicit ambient-space simulation.
pub fn brute_force_risk_proj(
    problem: &ProjectionProblem,
    d: usize,
    n: usize,
    lambda: f64,
    trials: usize,
    seed: u64,
) -> Result<RiskEstimate> {
    problem.check_model_size(d)?;
    if trials == 0 {
        return Err(Error::param("trials", "must be at least 1"));
    }
    if lambda.is_nan() || lambda < 0.0 {
        return Err(Error::NegativeLambda(lambda));
    }
    let acc = accumulate_trials(trials, MeanVar::new, |acc, t| {
        let draw =
            projected_draw(problem, d, n, lambda, trial_seed(seed, t)).expect("inputs validated");
        acc.push(draw.risk);
    });
    Ok(RiskEstimate::from_moments(&acc, lambda))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectrum::optimal_lambda_iso;

    #[test]
    fn sigma_tilde_examples() {
        assert_eq!(sigma_tilde_sq(10, 10, 0.5, 3.0).unwrap(), 0.25);
        assert!((sigma_tilde_sq(100, 50, 0.5, 1.0).unwrap() - 0.75).abs() < 1e-15);
        assert!((sigma_tilde_sq(1000, 1, 0.0, 1.0).unwrap() - 0.999).abs() < 1e-15);
        assert!(sigma_tilde_sq(5, 6, 1.0, 1.0).is_err());
        assert!(sigma_tilde_sq(5, 0, 1.0, 1.0).is_err());
    }

    #[test]
    fn optimal_lambda_examples() {
        assert!(
            (optimal_lambda_proj(40, 40, 0.5, 2.0).unwrap() - optimal_lambda_iso(40, 0.5, 2.0))
                .abs()
                < 1e-12
        );
        assert!((optimal_lambda_proj(100, 50, 0.5, 1.0).unwrap() - 75.0).abs() < 1e-12);
        assert_eq!(optimal_lambda_proj(7, 7, 0.0, 1.0).unwrap(), 0.0);
        assert!(optimal_lambda_proj(7, 3, 1.0, 0.0).is_err());
    }

    #[test]
    fn full_projection_is_isotropic_ridge() {
        let a = expected_risk_proj(8, 8, 5, 1.3, 1.0, 0.5, 300, 4).unwrap();
        let b = expected_risk_iso(5, 1.3, 8, 1.0, 0.5, 300, 4).unwrap();
        assert!((a.mean - b.mean).abs() < 1e-12);
    }

    #[test]
    fn huge_lambda_gives_null_risk() {
        let r = expected_risk_proj(20, 7, 15, 1e12, 1.5, 0.5, 30, 1).unwrap();
        assert!((r.mean - (0.25 + 2.25)).abs() < 1e-6);
    }

    #[test]
    fn no_samples_full_model() {
        let r = optimal_risk_proj(6, 6, 0, 1.2, 0.5, 10, 0).unwrap();
        assert!((r.mean - (1.44 + 0.25)).abs() < 1e-12);
    }

    #[test]
    fn optimal_equals_risk_at_optimal_lambda() {
        let l = optimal_lambda_proj(30, 12, 0.5, 1.0).unwrap();
        let a = optimal_risk_proj(30, 12, 20, 1.0, 0.5, 200, 9).unwrap();
        let b = expected_risk_proj(30, 12, 20, l, 1.0, 0.5, 200, 9).unwrap();
        assert!((a.mean - b.mean).abs() < 1e-10);
    }

    #[test]
    fn optimal_lambda_minimizes_crn_curve() {
        let (p, d, n) = (30, 10, 15);
        let best = optimal_lambda_proj(p, d, 0.5, 1.0).unwrap();
        let at = |l: f64| {
            expected_risk_proj(p, d, n, l, 1.0, 0.5, 400, 3)
                .unwrap()
                .mean
        };
        let r = at(best);
        for f in [0.5, 0.8, 1.25, 2.0] {
            assert!(at(best * f) > r);
        }
    }

    #[test]
    fn sweep_matches_pointwise() {
        let pts =
            sweep_model_size(12, 6, &[3, 12], ProjectionLambda::Optimal, 1.0, 0.5, 100, 2).unwrap();
        let full = optimal_risk_proj(12, 12, 6, 1.0, 0.5, 100, 2).unwrap();
        assert!((pts[1].risk.mean - full.mean).abs() < 1e-12);
        assert!(pts[0].sigma_tilde_sq > pts[1].sigma_tilde_sq);
    }

    #[test]
    fn cross_term_vanishes_per_draw() {
        let problem = ProjectionProblem::with_norm(15, 1.0, 0.5).unwrap();
        for seed in 0..20 {
            let draw = projected_draw(&problem, 6, 10, 0.7, seed).unwrap();
            assert!(draw.cross.abs() < 1e-10);
            let split = problem.sigma().powi(2) + draw.discarded + draw.estimation;
            assert!((draw.risk - split).abs() < 1e-10 * draw.risk);
        }
    }

    #[test]
    fn brute_force_agrees_with_spectrum_formula() {
        let (p, d, n) = (20, 5, 10);
        let problem = ProjectionProblem::with_norm(p, 1.0, 0.5).unwrap();
        let lambda = optimal_lambda_proj(p, d, 0.5, 1.0).unwrap();
        let brute = brute_force_risk_proj(&problem, d, n, lambda, 4000, 1).unwrap();
        let formula = expected_risk_proj(p, d, n, lambda, 1.0, 0.5, 4000, 2).unwrap();
        assert!(
            (brute.mean - formula.mean).abs() < 3.0 * brute.combined_se(&formula),
            "{} vs {}",
            brute.mean,
            formula.mean
        );
    }
}
