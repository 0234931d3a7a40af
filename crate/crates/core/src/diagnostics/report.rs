use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::fmt::Write as _;

use super::density::{DensityEstimate, GridSpec};
use super::entropy::{
    entropy_contributions, entropy_production_d, entropy_production_dh, pair_speed_moment,
    qlogm_term, relative_entropy,
};
use super::fit::{lambda_fit, LambdaFit};
use crate::error::{invalid, Error, Result};
use crate::kinetics::{BathMaxwellian, Velocity, WeightSpec};
use crate::rng::subseed;
use crate::stats::mean_se;

/// Controls for the per-snapshot entropy diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropySettings {
    /// Monte Carlo draws per functional per snapshot.
    pub n_mc: usize,
    /// Radial bins; `None` uses `N^{1/4}`.
    pub bins: Option<usize>,
    /// Outer radius of the grid; `None` sizes it from the first snapshot.
    pub r_max: Option<f64>,
    pub weights: WeightSpec,
    pub seed: u64,
}

impl Default for EntropySettings {
    fn default() -> Self {
        Self { n_mc: 50_000, bins: None, r_max: None, weights: WeightSpec::default(), seed: 0 }
    }
}

/// Diagnostics of one snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyRecord {
    pub t: f64,
    pub h: f64,
    pub h_se: f64,
    pub d: f64,
    pub d_se: f64,
    pub dh: f64,
    pub dh_se: f64,
    /// `E|v - w|` over pairs.
    pub mean_speed: f64,
    pub mean_speed_se: f64,
    pub qlogm: f64,
    pub qlogm_se: f64,
    /// Mean `|v|^2` per particle.
    pub energy: f64,
    pub norm_x_to_m: f64,
    pub norm_y_to_m: f64,
    pub norm_x_to_falpha: Option<f64>,
    /// Paired standard error of `H(t) - H(t - 2 dt)` over the same particles.
    pub h_lag2_se: Option<f64>,
}

/// Computes entropy records along a trajectory on a fixed radial grid.
pub struct EntropyTracker {
    alpha: f64,
    bath: BathMaxwellian,
    settings: EntropySettings,
    reference: Option<DensityEstimate>,
    spec: Option<GridSpec>,
    history: VecDeque<Vec<f64>>,
    records: Vec<EntropyRecord>,
}

impl EntropyTracker {
    pub fn new(alpha: f64, bath: BathMaxwellian, settings: EntropySettings) -> Self {
        Self { alpha, bath, settings, reference: None, spec: None, history: VecDeque::new(), records: Vec::new() }
    }

    /// Steady state used for the `normX_to_Falpha` column; its grid fixes the binning.
    pub fn with_reference(mut self, reference: DensityEstimate) -> Self {
        if let super::density::Grid::Radial { center, edges } = reference.grid() {
            self.spec = Some(GridSpec::Radial { center: *center, edges: edges.clone() });
        }
        self.reference = Some(reference);
        self
    }

    pub fn records(&self) -> &[EntropyRecord] {
        &self.records
    }

    fn grid_spec(&mut self, samples: &[Velocity]) -> GridSpec {
        if let Some(s) = &self.spec {
            return s.clone();
        }
        let bins = self
            .settings
            .bins
            .unwrap_or_else(|| ((samples.len() as f64).powf(0.25).round() as usize).max(8));
        let far = samples.iter().map(|&v| (v - self.bath.u0).norm()).fold(0.0, f64::max);
        let r_max = self
            .settings
            .r_max
            .unwrap_or_else(|| (7.0 * self.bath.theta0.sqrt()).max(1.05 * far));
        let spec = GridSpec::RadialUniform { center: self.bath.u0, bins, r_max };
        self.spec = Some(spec.clone());
        spec
    }

    pub fn record(&mut self, t: f64, samples: &[Velocity]) -> Result<&EntropyRecord> {
        let spec = self.grid_spec(samples);
        let f = DensityEstimate::from_samples(samples, &spec)?;
        let index = self.records.len() as u64;
        let seed = subseed(self.settings.seed, index);
        let n = self.settings.n_mc;
        let h = relative_entropy(&f, &self.bath)?;
        let d = entropy_production_d(samples, &f, &self.bath, n, seed)?;
        let dh = entropy_production_dh(samples, &f, self.alpha, n, seed)?;
        let ms = pair_speed_moment(samples, 1.0, n, seed)?;
        let ql = qlogm_term(samples, self.alpha, &self.bath, n, seed)?;
        let energy = samples.iter().map(|v| v.norm_sq()).sum::<f64>() / samples.len() as f64;
        let bath_binned = DensityEstimate::binned_maxwellian(&self.bath, f.edges().to_vec())?;
        let (nx, ny) = f.distance(&bath_binned, &self.settings.weights)?;
        let nxf = match &self.reference {
            Some(r) => Some(f.distance(r, &self.settings.weights)?.0),
            None => None,
        };
        let psi = entropy_contributions(samples, &f, &self.bath);
        let lag2 = if self.history.len() == 2 && self.history[0].len() == psi.len() {
            let diff: Vec<f64> = psi.iter().zip(&self.history[0]).map(|(a, b)| a - b).collect();
            Some(mean_se(&diff).1)
        } else {
            None
        };
        self.history.push_back(psi);
        if self.history.len() > 2 {
            self.history.pop_front();
        }
        self.records.push(EntropyRecord {
            t,
            h: h.value,
            h_se: h.se,
            d: d.mean,
            d_se: d.se,
            dh: dh.mean,
            dh_se: dh.se,
            mean_speed: ms.mean,
            mean_speed_se: ms.se,
            qlogm: ql.mean,
            qlogm_se: ql.se,
            energy,
            norm_x_to_m: nx,
            norm_y_to_m: ny,
            norm_x_to_falpha: nxf,
            h_lag2_se: lag2,
        });
        Ok(self.records.last().unwrap())
    }

    pub fn finish(self) -> EntropyReport {
        EntropyReport::new(self.alpha, self.records)
    }
}

/// One Simpson interval pair of the entropy balance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BalanceInterval {
    pub t0: f64,
    pub t1: f64,
    pub observed: f64,
    pub predicted: f64,
    pub se: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub intervals: Vec<BalanceInterval>,
    /// Fraction of intervals with `|residual| <= 3`.
    pub within_3sigma: f64,
}

impl BalanceReport {
    pub fn passed(&self) -> bool {
        self.within_3sigma >= 0.95
    }
}

fn rhs(r: &EntropyRecord, alpha: f64) -> (f64, f64) {
    let c = (1.0 - alpha * alpha) / (2.0 * alpha * alpha);
    let val = -r.d - r.dh + c * r.mean_speed - r.qlogm;
    let var = r.d_se.powi(2) + r.dh_se.powi(2) + (c * r.mean_speed_se).powi(2) + r.qlogm_se.powi(2);
    (val, var)
}

/// Compares `H(t+2dt) - H(t)` with the Simpson integral of
/// `-D - D_H + (1-a^2)/(2a^2) E|v-w| - qlogM` over non-overlapping interval pairs.
pub fn entropy_balance(records: &[EntropyRecord], alpha: f64) -> Result<BalanceReport> {
    if records.len() < 3 {
        return Err(invalid("entropy balance needs at least three snapshots"));
    }
    let dt = records[1].t - records[0].t;
    if !(dt > 0.0) || records.windows(2).any(|w| ((w[1].t - w[0].t) - dt).abs() > 1e-9 * dt.max(1.0)) {
        return Err(invalid("entropy balance needs equally spaced snapshots"));
    }
    let rate = records
        .iter()
        .filter(|r| r.h > 10.0 * r.h_se && r.h > 0.0)
        .map(|r| rhs(r, alpha).0.abs() / r.h)
        .fold(0.0, f64::max);
    if dt * rate > 0.5 {
        return Err(Error::Numerical(format!(
            "trajectory undersampled: dt = {dt} but H changes at relative rate {rate:.3}; sample at dt <= {:.3e}",
            0.5 / rate
        )));
    }
    let mut intervals = Vec::new();
    let mut k = 0;
    while k + 2 < records.len() {
        let (a, b, c) = (&records[k], &records[k + 1], &records[k + 2]);
        let (ra, va) = rhs(a, alpha);
        let (rb, vb) = rhs(b, alpha);
        let (rc, vc) = rhs(c, alpha);
        let predicted = dt / 3.0 * (ra + 4.0 * rb + rc);
        let pred_var = (dt / 3.0).powi(2) * (va + 16.0 * vb + vc);
        let obs_se = c.h_lag2_se.unwrap_or_else(|| (a.h_se.powi(2) + c.h_se.powi(2)).sqrt());
        let observed = c.h - a.h;
        let se = (obs_se * obs_se + pred_var).sqrt();
        intervals.push(BalanceInterval {
            t0: a.t,
            t1: c.t,
            observed,
            predicted,
            se,
            residual: (observed - predicted) / se,
        });
        k += 2;
    }
    let ok = intervals.iter().filter(|i| i.residual.abs() <= 3.0).count();
    Ok(BalanceReport { within_3sigma: ok as f64 / intervals.len() as f64, intervals })
}

/// Entropy time series with the balance check and fitted constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    pub alpha: f64,
    pub records: Vec<EntropyRecord>,
    pub balance: Option<BalanceReport>,
    pub fit: Option<LambdaFit>,
    pub flags: Vec<String>,
}

impl EntropyReport {
    pub fn new(alpha: f64, records: Vec<EntropyRecord>) -> Self {
        let mut flags = Vec::new();
        let balance = match entropy_balance(&records, alpha) {
            Ok(b) => Some(b),
            Err(e) => {
                flags.push(format!("balance: {e}"));
                None
            }
        };
        let t: Vec<f64> = records.iter().map(|r| r.t).collect();
        let h: Vec<f64> = records.iter().map(|r| r.h).collect();
        let fit = match lambda_fit(&t, &h, alpha) {
            Ok(f) => {
                flags.extend(f.flags.iter().map(|s| format!("fit: {s}")));
                Some(f)
            }
            Err(e) => {
                flags.push(format!("fit: {e}"));
                None
            }
        };
        Self { alpha, records, balance, fit, flags }
    }

    pub const CSV_HEADER: &'static str = "t,H,D,D_se,DH,DH_se,qlogM,E,normX_to_M,normX_to_Falpha";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let fa = r.norm_x_to_falpha.map(|x| x.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.t, r.h, r.d, r.d_se, r.dh, r.dh_se, r.qlogm, r.energy, r.norm_x_to_m, fa
            );
        }
        out
    }

    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "alpha": self.alpha,
            "snapshots": self.records.len(),
            "fitted": self.fit,
            "balance_within_3sigma": self.balance.as_ref().map(|b| b.within_3sigma),
            "flags": self.flags,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(t: f64, h: f64, d: f64) -> EntropyRecord {
        EntropyRecord {
            t,
            h,
            h_se: 1e-3,
            d,
            d_se: 1e-3,
            dh: 0.0,
            dh_se: 0.0,
            mean_speed: 2.0,
            mean_speed_se: 0.0,
            qlogm: 0.0,
            qlogm_se: 0.0,
            energy: 3.0,
            norm_x_to_m: 0.0,
            norm_y_to_m: 0.0,
            norm_x_to_falpha: None,
            h_lag2_se: None,
        }
    }

    #[test]
    fn balance_of_exact_exponential() {
        let recs: Vec<EntropyRecord> = (0..41)
            .map(|k| {
                let t = 0.05 * k as f64;
                record(t, 0.4 * (-t).exp(), 0.4 * (-t).exp())
            })
            .collect();
        let b = entropy_balance(&recs, 1.0).unwrap();
        assert_eq!(b.intervals.len(), 20);
        assert!(b.passed());
        assert!(b.intervals.iter().all(|i| i.residual.abs() < 0.1));
    }

    #[test]
    fn balance_refuses_coarse_sampling() {
        let recs: Vec<EntropyRecord> = (0..5)
            .map(|k| {
                let t = 2.0 * k as f64;
                record(t, 0.4 * (-t).exp() + 0.1, 0.4 * (-t).exp())
            })
            .collect();
        assert!(entropy_balance(&recs, 1.0).is_err());
    }

    #[test]
    fn csv_has_header_and_rows() {
        let report = EntropyReport::new(1.0, vec![record(0.0, 0.1, 0.1), record(0.1, 0.09, 0.09)]);
        let csv = report.to_csv();
        assert!(csv.starts_with(EntropyReport::CSV_HEADER));
        assert_eq!(csv.lines().count(), 3);
        assert!(!report.flags.is_empty());
    }
}
