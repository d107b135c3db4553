//! One-dimensional minimization of risk curves over the ridge parameter.
//!
//! Curves are evaluated deterministically, so Monte Carlo curves must use
//! common random numbers across `λ`. The search scans a coarse log grid,
//! refines around the best grid point with golden-section search (in log λ,
//! or linearly next to `λ = 0`), then compares the refined point with both
//! endpoints and the optional `λ → ∞` limit.

use serde::Serialize;

use crate::error::{Error, Result};

const INV_PHI: f64 = 0.618_033_988_749_894_9;
const MAX_ITERATIONS: usize = 400;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LambdaSearchResult {
    pub lambda_opt: f64,
    pub risk_at_opt: f64,
    /// Final golden-section interval around the refined candidate.
    pub bracket: (f64, f64),
    pub evaluations: usize,
    pub converged: bool,
}

impl LambdaSearchResult {
    /// True when the null estimator (`λ = ∞`) won.
    pub fn is_infinite(&self) -> bool {
        self.lambda_opt.is_infinite()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TunerOptions {
    /// Relative width of the final interval, measured in λ.
    pub rel_tol: f64,
    /// Number of coarse grid points.
    pub grid_points: usize,
    /// Value of the curve in the `λ → ∞` limit, if known.
    pub null_risk: Option<f64>,
}

impl Default for TunerOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-4,
            grid_points: 40,
            null_risk: None,
        }
    }
}

impl TunerOptions {
    pub fn with_rel_tol(mut self, rel_tol: f64) -> Self {
        self.rel_tol = rel_tol;
        self
    }

    pub fn with_null_risk(mut self, null_risk: f64) -> Self {
        self.null_risk = Some(null_risk);
        self
    }
}

/// Upper end of the search domain for a problem with the given scale.
pub fn default_upper_bound(d: usize, sigma: f64, beta_norm: f64) -> f64 {
    1e6 * d.max(1) as f64 * (sigma * sigma + beta_norm * beta_norm).max(1e-12)
}

/// `k` log-spaced points from `lo` to `hi` inclusive (`lo > 0`).
pub fn log_grid(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    match k {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..k)
                .map(|i| {
                    if i + 1 == k {
                        hi
                    } else {
                        (a + (b - a) * i as f64 / (k - 1) as f64).exp()
                    }
                })
                .collect()
        }
    }
}

struct Counted<F> {
    curve: F,
    evaluations: usize,
}

impl<F: FnMut(f64) -> f64> Counted<F> {
    fn eval(&mut self, lambda: f64) -> Result<f64> {
        self.evaluations += 1;
        let value = (self.curve)(lambda);
        if !value.is_finite() {
            return Err(Error::NonFiniteCurve { lambda, value });
        }
        Ok(value)
    }
}

/// Golden-section search on `[a, b]`, in log coordinates when `a > 0`.
fn golden<F: FnMut(f64) -> f64>(
    f: &mut Counted<F>,
    a: f64,
    b: f64,
    rel_tol: f64,
) -> Result<(f64, f64, (f64, f64), bool)> {
    let log = a > 0.0;
    let (to, from): (fn(f64) -> f64, fn(f64) -> f64) = if log {
        (f64::ln, f64::exp)
    } else {
        (|x| x, |x| x)
    };
    let (mut lo, mut hi) = (to(a), to(b));
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f.eval(from(x1))?;
    let mut f2 = f.eval(from(x2))?;
    let mut converged = false;
    for _ in 0..MAX_ITERATIONS {
        let (l, h) = (from(lo), from(hi));
        if h - l <= rel_tol * h.abs().max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f.eval(from(x1))?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f.eval(from(x2))?;
        }
    }
    let (x, fx) = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
    Ok((from(x), fx, (from(lo), from(hi)), converged))
}

/// Minimizes `curve` over `[lo, hi]` (and over `λ = ∞` when
/// `options.null_risk` is set). Multi-modal curves are handled by refining
/// around every grid point that beats the current answer.
pub fn minimize_over_lambda<F: FnMut(f64) -> f64>(
    curve: F,
    lo: f64,
    hi: f64,
    options: TunerOptions,
) -> Result<LambdaSearchResult> {
    if !(lo >= 0.0) || !(hi >= lo) || !hi.is_finite() {
        return Err(Error::InvalidInterval { lo, hi });
    }
    if !(options.rel_tol > 0.0) {
        return Err(Error::param("rel_tol", "must be positive"));
    }
    let mut f = Counted {
        curve,
        evaluations: 0,
    };
    if hi == lo {
        let v = f.eval(lo)?;
        return Ok(finish(
            lo,
            v,
            (lo, hi),
            f.evaluations,
            true,
            options.null_risk,
        ));
    }

    // Coarse grid: log-spaced over the positive part, plus λ = 0 itself.
    let k = options.grid_points.max(3);
    let grid: Vec<f64> = if lo > 0.0 {
        log_grid(lo, hi, k)
    } else {
        let eps = (hi * 1e-12).max(f64::MIN_POSITIVE);
        std::iter::once(0.0)
            .chain(log_grid(eps, hi, k - 1))
            .collect()
    };
    let mut values = Vec::with_capacity(grid.len());
    for &g in &grid {
        values.push(f.eval(g)?);
    }
    let refine = |f: &mut Counted<F>, i: usize| {
        let a = grid[i.saturating_sub(1)];
        let b = grid[(i + 1).min(grid.len() - 1)];
        golden(f, a, b, options.rel_tol)
    };

    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let (mut best_l, mut best_v, mut bracket, mut converged) = refine(&mut f, order[0])?;
    if values[order[0]] <= best_v {
        best_l = grid[order[0]];
        best_v = values[order[0]];
    }
    // Re-search from any other grid point that still beats the answer.
    for &i in order.iter().skip(1).take(3) {
        if values[i] < best_v - options.rel_tol * best_v.abs() {
            let (l, v, br, c) = refine(&mut f, i)?;
            let (l, v) = if values[i] <= v {
                (grid[i], values[i])
            } else {
                (l, v)
            };
            if v < best_v {
                best_l = l;
                best_v = v;
                bracket = br;
                converged = c;
            }
        }
    }
    Ok(finish(
        best_l,
        best_v,
        bracket,
        f.evaluations,
        converged,
        options.null_risk,
    ))
}

fn finish(
    lambda: f64,
    value: f64,
    bracket: (f64, f64),
    evaluations: usize,
    converged: bool,
    null_risk: Option<f64>,
) -> LambdaSearchResult {
    match null_risk {
        Some(null) if null < value => LambdaSearchResult {
            lambda_opt: f64::INFINITY,
            risk_at_opt: null,
            bracket: (bracket.1, f64::INFINITY),
            evaluations,
            converged,
        },
        _ => LambdaSearchResult {
            lambda_opt: lambda,
            risk_at_opt: value,
            bracket: (bracket.0.min(lambda), bracket.1.max(lambda)),
            evaluations,
            converged,
        },
    }
}

/// Evaluates `curve` at each grid point.
pub fn sweep_lambda<F: FnMut(f64) -> f64>(mut curve: F, grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    if grid.is_empty() {
        return Err(Error::param("grid", "must not be empty"));
    }
    if grid.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::param("grid", "must be sorted ascending"));
    }
    Ok(grid.iter().map(|&l| (l, curve(l))).collect())
}

/// Grid point with the smallest value (first on ties).
pub fn grid_argmin(points: &[(f64, f64)]) -> Option<(f64, f64)> {
    points
        .iter()
        .copied()
        .fold(None, |best: Option<(f64, f64)>, p| match best {
            Some(b) if b.1 <= p.1 => Some(b),
            _ => Some(p),
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectrum::{IsoModel, SpectrumBank};
    use proptest::prelude::*;

    #[test]
    fn quadratic_minimum() {
        let r = minimize_over_lambda(|l| (l - 3.0).powi(2), 0.0, 10.0, TunerOptions::default())
            .unwrap();
        assert!((r.lambda_opt - 3.0).abs() <= 1e-4 * 3.0, "{}", r.lambda_opt);
        assert!(r.converged);
        assert!(r.bracket.0 <= r.lambda_opt && r.lambda_opt <= r.bracket.1);
    }

    #[test]
    fn boundary_minimum_at_zero() {
        let r = minimize_over_lambda(|l| 1.0 + l, 0.0, 5.0, TunerOptions::default()).unwrap();
        assert_eq!(r.lambda_opt, 0.0);
        assert_eq!(r.risk_at_opt, 1.0);
    }

    #[test]
    fn null_limit_wins_for_decreasing_curve() {
        let opts = TunerOptions::default().with_null_risk(1.0);
        let r = minimize_over_lambda(|l| 1.0 + 1.0 / (1.0 + l), 0.0, 1e6, opts).unwrap();
        assert!(r.is_infinite());
        assert_eq!(r.risk_at_opt, 1.0);
    }

    #[test]
    fn finds_deeper_of_two_minima() {
        // Shallow well at 0.01, deep well at 50.
        let curve = |l: f64| {
            let x = l.ln();
            let a = (x - 0.01f64.ln()).powi(2);
            let b = (x - 50f64.ln()).powi(2);
            a.min(b + 0.5) - if b < 1.0 { 1.0 - b } else { 0.0 }
        };
        let r = minimize_over_lambda(curve, 1e-4, 1e4, TunerOptions::default()).unwrap();
        assert!((r.lambda_opt - 50.0).abs() < 0.1, "{}", r.lambda_opt);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(
            minimize_over_lambda(|l| l, 2.0, 1.0, TunerOptions::default()),
            Err(Error::InvalidInterval { .. })
        ));
        assert!(matches!(
            minimize_over_lambda(
                |l| if l > 1.0 { f64::NAN } else { l },
                0.0,
                4.0,
                TunerOptions::default()
            ),
            Err(Error::NonFiniteCurve { .. })
        ));
    }

    #[test]
    fn isotropic_curve_minimized_at_constant() {
        let model = IsoModel::new(10, 1.0, 0.5).unwrap();
        let bank = SpectrumBank::draw(20, 10, 2000, 1).unwrap();
        let hi = default_upper_bound(10, 0.5, 1.0);
        let opts = TunerOptions::default().with_null_risk(model.null_risk());
        let r = minimize_over_lambda(|l| bank.risk(&model, l).mean, 0.0, hi, opts).unwrap();
        assert!((r.lambda_opt - 2.5).abs() < 1e-3 * 2.5, "{}", r.lambda_opt);
    }

    #[test]
    fn sweep_lengths_and_order() {
        let grid = log_grid(0.01, 100.0, 13);
        assert_eq!(grid.len(), 13);
        assert_eq!(*grid.last().unwrap(), 100.0);
        let pts = sweep_lambda(|l| (l - 1.0).abs(), &grid).unwrap();
        assert_eq!(pts.len(), grid.len());
        let (l, _) = grid_argmin(&pts).unwrap();
        assert!((l - 1.0).abs() < 1e-12);
        assert!(sweep_lambda(|l| l, &[]).is_err());
        assert!(sweep_lambda(|l| l, &[2.0, 1.0]).is_err());
    }

    #[test]
    fn sweep_tail_approaches_null_risk() {
        let model = IsoModel::new(5, 1.0, 0.5).unwrap();
        let bank = SpectrumBank::draw(8, 5, 200, 2).unwrap();
        let pts = sweep_lambda(|l| bank.risk(&model, l).mean, &log_grid(1e-3, 1e9, 25)).unwrap();
        let last = pts.last().unwrap().1;
        assert!((last - model.null_risk()).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn grid_minimum_never_beats_search(c in 0.01f64..100.0, w in 0.2f64..3.0) {
            let curve = |l: f64| ((l.ln() - c.ln()) / w).powi(2) + 0.3;
            let r = minimize_over_lambda(curve, 1e-3, 1e4, TunerOptions::default()).unwrap();
            let pts = sweep_lambda(curve, &log_grid(1e-3, 1e4, 60)).unwrap();
            let (_, gmin) = grid_argmin(&pts).unwrap();
            prop_assert!(r.risk_at_opt <= gmin + 1e-9);
            prop_assert!((r.lambda_opt / c).ln().abs() < 0.01);
        }
    }
}
