//! Sample summaries and goodness-of-fit tests used by the Monte Carlo checks.

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Significance level used by every chi-square check.
pub const CHI_SQUARE_ALPHA: f64 = 0.01;

/// Minimum expected count per pooled chi-square cell.
pub const MIN_EXPECTED: f64 = 5.0;

/// Number of standard errors tolerated between analytic and empirical values.
pub const STDERR_MULTIPLIER: f64 = 4.0;

/// A point estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub estimate: f64,
    pub stderr: f64,
}

impl Estimate {
    /// `|estimate - target| <= k * stderr`. A zero stderr demands exact equality.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.estimate - target).abs() <= k * self.stderr
    }

    pub fn z_score(&self, target: f64) -> f64 {
        if self.stderr == 0.0 {
            if self.estimate == target {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.estimate - target) / self.stderr
        }
    }
}

/// Sample mean and the standard error of the mean.
pub fn mean(xs: &[f64]) -> Estimate {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return Estimate { estimate: f64::NAN, stderr: f64::NAN };
    }
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return Estimate { estimate: m, stderr: 0.0 };
    }
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    Estimate { estimate: m, stderr: (ss / (n - 1.0) / n).sqrt() }
}

/// Sample variance with a large-sample standard error `sqrt((m4 - s^4) / n)`.
pub fn variance(xs: &[f64]) -> Estimate {
    covariance(xs, xs)
}

/// Sample covariance with the standard error of the mean of centred products.
pub fn covariance(xs: &[f64], ys: &[f64]) -> Estimate {
    assert_eq!(xs.len(), ys.len(), "paired samples must have equal length");
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return Estimate { estimate: f64::NAN, stderr: f64::NAN };
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let products: Vec<f64> = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).collect();
    let m = mean(&products);
    Estimate { estimate: m.estimate * n / (n - 1.0), stderr: m.stderr }
}

/// Outcome of a pooled chi-square goodness-of-fit test.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChiSquareOutcome {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    pub cells: usize,
    pub passed: bool,
}

/// Chi-square goodness of fit of `observed[k]` (counts of category `k`)
/// against `probs[k]`. Any probability mass not covered by `probs` forms a
/// tail category together with observations at indices `>= probs.len()`.
/// Adjacent categories are pooled until each cell expects at least
/// [`MIN_EXPECTED`] observations.
pub fn chi_square_gof(observed: &[u64], probs: &[f64]) -> ChiSquareOutcome {
    let total: u64 = observed.iter().sum();
    let n = total as f64;
    let covered: f64 = probs.iter().sum();
    let tail_prob = (1.0 - covered).max(0.0);
    let tail_obs: u64 = observed.iter().skip(probs.len()).sum();

    let mut cats: Vec<(f64, f64)> = (0..probs.len())
        .map(|k| (observed.get(k).copied().unwrap_or(0) as f64, probs[k] * n))
        .collect();
    if tail_prob * n > 1e-9 || tail_obs > 0 {
        cats.push((tail_obs as f64, tail_prob * n));
    }

    let mut cells: Vec<(f64, f64)> = Vec::new();
    let mut acc = (0.0, 0.0);
    for (o, e) in cats {
        acc.0 += o;
        acc.1 += e;
        if acc.1 >= MIN_EXPECTED {
            cells.push(acc);
            acc = (0.0, 0.0);
        }
    }
    if acc.0 > 0.0 || acc.1 > 0.0 {
        match cells.last_mut() {
            Some(last) => {
                last.0 += acc.0;
                last.1 += acc.1;
            }
            None => cells.push(acc),
        }
    }

    let statistic: f64 = cells
        .iter()
        .map(|&(o, e)| if e > 0.0 { (o - e) * (o - e) / e } else if o > 0.0 { f64::INFINITY } else { 0.0 })
        .sum();
    let dof = cells.len().saturating_sub(1);
    let p_value = if dof == 0 {
        if statistic == 0.0 { 1.0 } else { 0.0 }
    } else if statistic.is_finite() {
        let dist = ChiSquared::new(dof as f64).expect("positive degrees of freedom");
        1.0 - dist.cdf(statistic)
    } else {
        0.0
    };
    ChiSquareOutcome { statistic, dof, p_value, cells: cells.len(), passed: p_value >= CHI_SQUARE_ALPHA }
}

/// Histogram of non-negative integer samples.
pub fn histogram(values: impl IntoIterator<Item = u64>) -> Vec<u64> {
    let mut h: Vec<u64> = Vec::new();
    for v in values {
        let v = v as usize;
        if v >= h.len() {
            h.resize(v + 1, 0);
        }
        h[v] += 1;
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn mean_and_variance_of_small_sample() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let m = mean(&xs);
        assert_relative_eq!(m.estimate, 2.5);
        // sample variance 5/3, stderr sqrt(5/3/4)
        assert_relative_eq!(m.stderr, (5.0f64 / 12.0).sqrt());
        assert_relative_eq!(variance(&xs).estimate, 5.0 / 3.0);
    }

    #[test]
    fn constant_sample_has_zero_stderr() {
        let m = mean(&[1.0; 10]);
        assert_eq!(m.estimate, 1.0);
        assert_eq!(m.stderr, 0.0);
        assert!(m.within(1.0, 4.0));
        assert!(!m.within(1.0 + 1e-12, 4.0));
    }

    #[test]
    fn perfect_fit_passes() {
        let probs = [0.25, 0.5, 0.25];
        let obs = [250, 500, 250];
        let out = chi_square_gof(&obs, &probs);
        assert_eq!(out.statistic, 0.0);
        assert!(out.passed);
        assert_eq!(out.dof, 2);
    }

    #[test]
    fn gross_misfit_fails() {
        let probs = [0.5, 0.5];
        let obs = [900, 100];
        assert!(!chi_square_gof(&obs, &probs).passed);
    }

    #[test]
    fn tail_and_pooling() {
        // geometric-ish probabilities leave a tail; rare cells get pooled.
        let probs: Vec<f64> = (0..5).map(|k| 0.5f64.powi(k + 1)).collect();
        let obs = [500, 250, 125, 62, 31, 32];
        let out = chi_square_gof(&obs, &probs);
        assert!(out.passed, "{out:?}");
        assert!(out.cells <= 6);
    }

    #[test]
    fn histogram_counts() {
        assert_eq!(histogram([0, 2, 2, 5]), vec![1, 0, 2, 0, 0, 1]);
    }
}
