use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::stats::{batch_means_se, linear_regression, mean_se, t_quantile, LinearFit};

/// Exponential fit `y(t) ~ A exp(-rate t)` by log-linear least squares.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub rate: f64,
    /// 95% confidence interval of the rate.
    pub rate_ci: (f64, f64),
    pub amplitude: f64,
    pub points: usize,
    pub regression: LinearFit,
}

pub fn decay_fit(times: &[f64], values: &[f64]) -> Result<DecayFit> {
    if times.len() != values.len() {
        return Err(invalid("decay fit inputs differ in length"));
    }
    if values.iter().any(|&y| !(y > 0.0)) {
        return Err(Error::Fit("decay fit needs positive values".into()));
    }
    let logs: Vec<f64> = values.iter().map(|y| y.ln()).collect();
    let reg = linear_regression(times, &logs)?;
    let (lo, hi) = reg.slope_ci(0.95);
    Ok(DecayFit {
        rate: -reg.slope,
        rate_ci: (-hi, -lo),
        amplitude: reg.intercept.exp(),
        points: times.len(),
        regression: reg,
    })
}

/// Fitted entropy envelope `H(t) <= exp(-lambda t) H0 + K (1 - alpha)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaFit {
    pub lambda: f64,
    pub lambda_ci: (f64, f64),
    /// Plateau `H_inf` from the last quarter of the series.
    pub plateau: f64,
    pub plateau_se: f64,
    /// `H_inf / (1 - alpha)`; absent at `alpha = 1`.
    pub k: Option<f64>,
    pub k_ci: Option<(f64, f64)>,
    /// Number of points in the transient window.
    pub window: usize,
    /// E-foldings of `H - H_inf` covered by the window.
    pub efoldings: f64,
    pub flags: Vec<String>,
}

/// Fits the decay constant on the early transient of `H - H_inf` and the
/// plateau constant from the tail of the series.
pub fn lambda_fit(times: &[f64], h: &[f64], alpha: f64) -> Result<LambdaFit> {
    let n = h.len();
    if times.len() != n {
        return Err(invalid("lambda fit inputs differ in length"));
    }
    if n < 20 {
        return Err(Error::Fit(format!("need at least 20 points, got {n}")));
    }
    let tail = &h[3 * n / 4..];
    let (plateau, se_iid) = mean_se(tail);
    let plateau_se = batch_means_se(tail, 5).max(se_iid);
    let noise = se_iid * (tail.len() as f64).sqrt();
    let excess0 = h[0] - plateau;
    if !(excess0 > 0.0) {
        return Err(Error::Fit("entropy does not decay".into()));
    }
    let threshold = (0.05 * excess0).max(5.0 * noise);
    let window = h.iter().take_while(|&&x| x - plateau > threshold).count();
    if window < 3 {
        return Err(Error::Fit("transient window shorter than 3 points".into()));
    }
    let ex: Vec<f64> = h[..window].iter().map(|x| x - plateau).collect();
    let efoldings = (ex[0] / ex[window - 1]).ln();
    let fit = decay_fit(&times[..window], &ex)?;
    let mut flags = Vec::new();
    if efoldings < 2.0 {
        flags.push(format!("transient spans only {efoldings:.2} e-foldings"));
    }
    if !(fit.rate_ci.0 > 0.0) {
        flags.push("decay constant interval includes 0".into());
        if alpha == 1.0 {
            return Err(Error::Fit("no decay at alpha = 1".into()));
        }
    }
    let (k, k_ci) = if alpha < 1.0 {
        let h95 = t_quantile(0.95, 4.0) * plateau_se;
        let s = 1.0 / (1.0 - alpha);
        (Some(plateau * s), Some(((plateau - h95) * s, (plateau + h95) * s)))
    } else {
        (None, None)
    };
    Ok(LambdaFit {
        lambda: fit.rate,
        lambda_ci: fit.rate_ci,
        plateau,
        plateau_se,
        k,
        k_ci,
        window,
        efoldings,
        flags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_envelope() {
        let t: Vec<f64> = (0..100).map(|k| 0.1 * k as f64).collect();
        let h: Vec<f64> = t.iter().map(|s| (-2.0 * s).exp() + 0.01).collect();
        let fit = lambda_fit(&t, &h, 0.9).unwrap();
        assert!((fit.lambda - 2.0).abs() < 1e-6);
        let (lo, hi) = fit.k_ci.unwrap();
        assert!((fit.k.unwrap() - 0.1).abs() < 1e-6);
        assert!(lo <= 0.1 + 1e-9 && hi >= 0.1 - 1e-9);
        assert!(fit.flags.is_empty());
    }

    #[test]
    fn flat_series_is_rejected() {
        let t: Vec<f64> = (0..30).map(|k| k as f64).collect();
        assert!(lambda_fit(&t, &[0.5; 30], 1.0).is_err());
        assert!(lambda_fit(&t[..10], &[0.5; 10], 1.0).is_err());
    }

    #[test]
    fn decay_fit_recovers_rate() {
        let t: Vec<f64> = (0..10).map(|k| k as f64).collect();
        let y: Vec<f64> = t.iter().map(|s| 3.0 * (-0.7 * s).exp()).collect();
        let fit = decay_fit(&t, &y).unwrap();
        assert!((fit.rate - 0.7).abs() < 1e-12);
        assert!((fit.amplitude - 3.0).abs() < 1e-10);
    }
}
