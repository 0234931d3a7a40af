//! Small statistics toolkit: sample means, regression with t intervals,
//! rank correlation and goodness-of-fit tests.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

use crate::error::{invalid, Error, Result};

/// Sample mean and standard error of the mean.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, f64::INFINITY);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Standard error of the mean of a correlated series by non-overlapping batch means.
pub fn batch_means_se(xs: &[f64], batches: usize) -> f64 {
    let b = batches.max(2).min(xs.len());
    if b < 2 {
        return f64::INFINITY;
    }
    let len = xs.len() / b;
    let means: Vec<f64> = (0..b)
        .map(|k| xs[k * len..(k + 1) * len].iter().sum::<f64>() / len as f64)
        .collect();
    mean_se(&means).1
}

/// Two-sided Student-t quantile `t_{1 - (1-level)/2, dof}`.
pub fn t_quantile(level: f64, dof: f64) -> f64 {
    StudentsT::new(0.0, 1.0, dof)
        .map(|t| t.inverse_cdf(0.5 + 0.5 * level))
        .unwrap_or(f64::INFINITY)
}

/// Ordinary least squares `y = intercept + slope x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub se_slope: f64,
    pub se_intercept: f64,
    pub dof: usize,
    pub r_squared: f64,
}

impl LinearFit {
    pub fn slope_ci(&self, level: f64) -> (f64, f64) {
        let h = t_quantile(level, self.dof as f64) * self.se_slope;
        (self.slope - h, self.slope + h)
    }

    pub fn intercept_ci(&self, level: f64) -> (f64, f64) {
        let h = t_quantile(level, self.dof as f64) * self.se_intercept;
        (self.intercept - h, self.intercept + h)
    }
}

pub fn linear_regression(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() {
        return Err(invalid("regression inputs differ in length"));
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::Fit(format!("need at least 3 points, got {n}")));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if !(sxx > 0.0) {
        return Err(Error::Fit("regressor has zero spread".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let r = b - intercept - slope * a;
            r * r
        })
        .sum();
    let s2 = sse / (nf - 2.0);
    Ok(LinearFit {
        slope,
        intercept,
        se_slope: (s2 / sxx).sqrt(),
        se_intercept: (s2 * (1.0 / nf + mx * mx / sxx)).sqrt(),
        dof: n - 2,
        r_squared: if syy > 0.0 { 1.0 - sse / syy } else { 1.0 },
    })
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = 0.5 * (i + j) as f64 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// Two-sample Kolmogorov–Smirnov statistic.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic critical value of the two-sample KS statistic at significance `level`.
pub fn ks_critical(n: usize, m: usize, level: f64) -> f64 {
    let c = (-(0.5 * level).ln() / 2.0).sqrt();
    c * ((n + m) as f64 / (n as f64 * m as f64)).sqrt()
}

/// Pearson chi-square goodness of fit; returns `(statistic, dof, p-value)`.
pub fn chi_square_gof(observed: &[u64], expected_prob: &[f64]) -> Result<(f64, usize, f64)> {
    if observed.len() != expected_prob.len() || observed.len() < 2 {
        return Err(invalid("chi-square needs matching bins, at least two"));
    }
    let total: u64 = observed.iter().sum();
    let n = total as f64;
    let stat: f64 = observed
        .iter()
        .zip(expected_prob)
        .map(|(&o, &p)| {
            let e = n * p;
            (o as f64 - e) * (o as f64 - e) / e
        })
        .sum();
    let dof = observed.len() - 1;
    let p = ChiSquared::new(dof as f64)
        .map(|d| d.sf(stat))
        .map_err(|e| Error::Numerical(e.to_string()))?;
    Ok((stat, dof, p))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regression_recovers_line() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|a| 2.0 - 0.5 * a).collect();
        let fit = linear_regression(&x, &y).unwrap();
        assert!((fit.slope + 0.5).abs() < 1e-12);
        assert!((fit.intercept - 2.0).abs() < 1e-12);
        assert!(fit.se_slope < 1e-10);
    }

    #[test]
    fn regression_interval_matches_textbook() {
        // scipy.stats.linregress on this data: slope 0.97, stderr 0.05508
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let y = [1.1, 1.9, 3.2, 3.8, 5.0];
        let fit = linear_regression(&x, &y).unwrap();
        assert!((fit.slope - 0.97).abs() < 1e-12);
        assert!((fit.se_slope - 0.055075705472861246).abs() < 1e-12);
        assert!((t_quantile(0.95, 3.0) - 3.182446305284263).abs() < 1e-9);
    }

    #[test]
    fn spearman_extremes_and_ties() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert!((spearman(&x, &[10.0, 20.0, 30.0, 40.0]) - 1.0).abs() < 1e-15);
        assert!((spearman(&x, &[4.0, 3.0, 2.0, 1.0]) + 1.0).abs() < 1e-15);
        assert_eq!(ranks(&[1.0, 2.0, 2.0, 3.0]), vec![1.0, 2.5, 2.5, 4.0]);
    }

    #[test]
    fn ks_statistic() {
        let a = [0.1, 0.2, 0.3, 0.4];
        let b = [0.5, 0.6, 0.7, 0.8];
        assert_eq!(ks_two_sample(&a, &b), 1.0);
        assert_eq!(ks_two_sample(&a, &a), 0.0);
        let c = ks_critical(100_000, 100_000, 0.01);
        assert!((c - 1.6276 * (2e-5f64).sqrt()).abs() < 1e-5);
    }

    #[test]
    fn chi_square_uniform() {
        let (stat, dof, p) = chi_square_gof(&[25, 25, 25, 25], &[0.25; 4]).unwrap();
        assert_eq!((stat, dof), (0.0, 3));
        assert!((p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn batch_means_of_constant() {
        assert_eq!(batch_means_se(&[2.0; 100], 10), 0.0);
        let (m, se) = mean_se(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((se - 1.0).abs() < 1e-15);
    }
}
