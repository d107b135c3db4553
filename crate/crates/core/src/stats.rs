//! Streaming moment accumulators and the deterministic trial reducer.

use rayon::prelude::*;
use serde::Serialize;

/// Trials per work unit. Work units are reduced in a fixed pairwise tree,
/// so results are bit-identical for any thread count.
pub const TRIAL_BLOCK: usize = 64;

pub trait Merge {
    fn merge(&mut self, other: &Self);
}

/// Runs `step(acc, trial)` for every trial index and returns the merged
/// accumulator.
pub fn accumulate_trials<A, I, F>(trials: usize, init: I, step: F) -> A
where
    A: Merge + Send,
    I: Fn() -> A + Sync,
    F: Fn(&mut A, u64) + Sync,
{
    let blocks = trials.div_ceil(TRIAL_BLOCK).max(1);
    let parts: Vec<A> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut acc = init();
            let start = b * TRIAL_BLOCK;
            let end = ((b + 1) * TRIAL_BLOCK).min(trials);
            for t in start..end {
                step(&mut acc, t as u64);
            }
            acc
        })
        .collect();
    pairwise_reduce(parts)
}

/// Ordered map over trials, parallel but returned in trial order.
pub fn map_trials<T, F>(trials: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync,
{
    (0..trials as u64).into_par_iter().map(&f).collect()
}

fn pairwise_reduce<A: Merge>(mut parts: Vec<A>) -> A {
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(mut left) = it.next() {
            if let Some(right) = it.next() {
                left.merge(&right);
            }
            next.push(left);
        }
        parts = next;
    }
    parts.pop().expect("at least one block")
}

/// Welford mean/variance.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MeanVar {
    count: u64,
    mean: f64,
    m2: f64,
}

impl MeanVar {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; zero with fewer than two samples.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.m2 / (self.count - 1) as f64).max(0.0)
        }
    }

    pub fn std_error(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }
}

impl Merge for MeanVar {
    fn merge(&mut self, other: &Self) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = self.count + other.count;
        let delta = other.mean - self.mean;
        let w = other.count as f64 / n as f64;
        self.mean += delta * w;
        self.m2 += other.m2 + delta * delta * self.count as f64 * w;
        self.count = n;
    }
}

impl Merge for Vec<MeanVar> {
    fn merge(&mut self, other: &Self) {
        debug_assert_eq!(self.len(), other.len());
        for (a, b) in self.iter_mut().zip(other) {
            a.merge(b);
        }
    }
}

impl Merge for Vec<Vec<MeanVar>> {
    fn merge(&mut self, other: &Self) {
        for (a, b) in self.iter_mut().zip(other) {
            a.merge(b);
        }
    }
}

/// Running mean and co-moment matrix of a `K`-vector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoMoments<const K: usize> {
    count: u64,
    mean: [f64; K],
    comoment: [[f64; K]; K],
}

impl<const K: usize> Default for CoMoments<K> {
    fn default() -> Self {
        Self {
            count: 0,
            mean: [0.0; K],
            comoment: [[0.0; K]; K],
        }
    }
}

impl<const K: usize> CoMoments<K> {
    pub fn push(&mut self, x: [f64; K]) {
        self.count += 1;
        let n = self.count as f64;
        let mut delta = [0.0; K];
        for k in 0..K {
            delta[k] = x[k] - self.mean[k];
            self.mean[k] += delta[k] / n;
        }
        for i in 0..K {
            let after = x[i] - self.mean[i];
            for j in 0..K {
                self.comoment[j][i] += delta[j] * after;
            }
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> [f64; K] {
        self.mean
    }

    /// Sample covariance between components `i` and `j`.
    pub fn covariance(&self, i: usize, j: usize) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.comoment[i][j] / (self.count - 1) as f64
        }
    }

    /// Standard error of `gᵀ x̄` for a fixed coefficient vector `g`.
    pub fn linear_std_error(&self, g: &[f64; K]) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        let mut var = 0.0;
        for i in 0..K {
            for j in 0..K {
                var += g[i] * g[j] * self.covariance(i, j);
            }
        }
        (var.max(0.0) / self.count as f64).sqrt()
    }
}

impl<const K: usize> Merge for CoMoments<K> {
    fn merge(&mut self, other: &Self) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let na = self.count as f64;
        let nb = other.count as f64;
        let n = na + nb;
        let mut delta = [0.0; K];
        for k in 0..K {
            delta[k] = other.mean[k] - self.mean[k];
        }
        for i in 0..K {
            for j in 0..K {
                self.comoment[i][j] += other.comoment[i][j] + delta[i] * delta[j] * na * nb / n;
            }
        }
        for k in 0..K {
            self.mean[k] += delta[k] * nb / n;
        }
        self.count += other.count;
    }
}

impl<const K: usize> Merge for Vec<CoMoments<K>> {
    fn merge(&mut self, other: &Self) {
        for (a, b) in self.iter_mut().zip(other) {
            a.merge(b);
        }
    }
}

/// Diagnostics attached to a Monte Carlo estimate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct EstimateFlags {
    /// At least one trial used the `λ → 0⁺` pseudoinverse limit on a
    /// rank-deficient system.
    pub pseudoinverse_limit: bool,
    /// At least one trial had a system condition number above 1e12.
    pub ill_conditioned: bool,
}

impl EstimateFlags {
    pub fn union(self, other: Self) -> Self {
        Self {
            pseudoinverse_limit: self.pseudoinverse_limit || other.pseudoinverse_limit,
            ill_conditioned: self.ill_conditioned || other.ill_conditioned,
        }
    }
}

/// A Monte Carlo estimate of expected test risk.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RiskEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub trials: usize,
    pub lambda: f64,
    pub flags: EstimateFlags,
}

impl RiskEstimate {
    pub fn from_moments(m: &MeanVar, lambda: f64) -> Self {
        Self {
            mean: m.mean(),
            std_error: m.std_error(),
            trials: m.count() as usize,
            lambda,
            flags: EstimateFlags::default(),
        }
    }

    /// Exact value with no sampling error.
    pub fn exact(value: f64, lambda: f64, trials: usize) -> Self {
        Self {
            mean: value,
            std_error: 0.0,
            trials,
            lambda,
            flags: EstimateFlags::default(),
        }
    }

    pub fn with_offset(mut self, offset: f64) -> Self {
        self.mean += offset;
        self
    }

    pub fn with_flags(mut self, flags: EstimateFlags) -> Self {
        self.flags = flags;
        self
    }

    /// `sqrt(se_a² + se_b²)`, the standard error of a difference of
    /// independent estimates (conservative under positive coupling).
    pub fn combined_se(&self, other: &Self) -> f64 {
        self.std_error.hypot(other.std_error)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn merge_matches_sequential(xs in proptest::collection::vec(-1e3f64..1e3, 1..200), split in 0usize..200) {
            let split = split.min(xs.len());
            let mut all = MeanVar::new();
            xs.iter().for_each(|&x| all.push(x));
            let mut a = MeanVar::new();
            let mut b = MeanVar::new();
            xs[..split].iter().for_each(|&x| a.push(x));
            xs[split..].iter().for_each(|&x| b.push(x));
            a.merge(&b);
            prop_assert_eq!(a.count(), all.count());
            prop_assert!((a.mean() - all.mean()).abs() <= 1e-9 * (1.0 + all.mean().abs()));
            prop_assert!((a.variance() - all.variance()).abs() <= 1e-7 * (1.0 + all.variance()));
        }

        #[test]
        fn comoments_merge_matches_sequential(xs in proptest::collection::vec((-10f64..10.0, -10f64..10.0), 2..100), split in 0usize..100) {
            let split = split.min(xs.len());
            let mut all = CoMoments::<2>::default();
            xs.iter().for_each(|&(a, b)| all.push([a, b]));
            let mut a = CoMoments::<2>::default();
            let mut b = CoMoments::<2>::default();
            xs[..split].iter().for_each(|&(x, y)| a.push([x, y]));
            xs[split..].iter().for_each(|&(x, y)| b.push([x, y]));
            a.merge(&b);
            for i in 0..2 {
                for j in 0..2 {
                    prop_assert!((a.covariance(i, j) - all.covariance(i, j)).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn accumulate_is_deterministic_and_complete() {
        let run = || accumulate_trials(1000, MeanVar::new, |acc, t| acc.push((t as f64).sin()));
        let a = run();
        let b = run();
        assert_eq!(a, b);
        assert_eq!(a.count(), 1000);
        let direct: f64 = (0..1000).map(|t| (t as f64).sin()).sum::<f64>() / 1000.0;
        assert!((a.mean() - direct).abs() < 1e-12);
    }

    #[test]
    fn single_sample_has_zero_error() {
        let mut m = MeanVar::new();
        m.push(3.0);
        assert_eq!(m.std_error(), 0.0);
        assert_eq!(m.mean(), 3.0);
    }

    #[test]
    fn covariance_of_known_pairs() {
        let mut c = CoMoments::<2>::default();
        for &(x, y) in &[(1.0, 2.0), (2.0, 4.0), (3.0, 6.0)] {
            c.push([x, y]);
        }
        assert!((c.covariance(0, 0) - 1.0).abs() < 1e-12);
        assert!((c.covariance(0, 1) - 2.0).abs() < 1e-12);
        assert!((c.covariance(1, 1) - 4.0).abs() < 1e-12);
    }
}
