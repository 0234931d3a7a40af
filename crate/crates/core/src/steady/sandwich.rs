//! Gaussian envelopes `m M_theta` below and above a radial density, found
//! as supporting lines of the convex hull of `(r^2, log F)`.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{invalid, Result};
use crate::stats::linear_regression;

/// A density value with its noise floor at speed `r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub r: f64,
    pub f: f64,
    pub floor: f64,
}

/// Tail temperatures may grow by at most this factor from the middle to the
/// outer third of the resolved range.
pub const TAIL_GROWTH_LIMIT: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub m: f64,
    pub theta: f64,
}

impl Envelope {
    /// `m (2 pi theta)^{-3/2} exp(-r^2 / (2 theta))`.
    pub fn value(&self, r: f64) -> f64 {
        self.m * (2.0 * PI * self.theta).powf(-1.5) * (-r * r / (2.0 * self.theta)).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichFit {
    pub lower: Option<Envelope>,
    pub upper: Option<Envelope>,
    /// Speeds spanned by the points above ten times their noise floor.
    pub range: (f64, f64),
    pub points_used: usize,
    /// Local temperatures from least squares on the middle and outer thirds.
    pub tail_theta_middle: f64,
    pub tail_theta_outer: f64,
    pub theta_eff: Option<f64>,
    /// `theta_lower <= theta_eff <= theta_upper`, when `theta_eff` is known.
    pub ordered: Option<bool>,
    pub passed: bool,
    pub reason: Option<String>,
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Monotone-chain hull of points sorted by `x`; `upper` flips the turn.
fn chain(pts: &[(f64, f64)], upper: bool) -> Vec<(f64, f64)> {
    let mut h: Vec<(f64, f64)> = Vec::new();
    for &p in pts {
        while h.len() >= 2 {
            let c = cross(h[h.len() - 2], h[h.len() - 1], p);
            if (upper && c >= 0.0) || (!upper && c <= 0.0) {
                h.pop();
            } else {
                break;
            }
        }
        h.push(p);
    }
    h
}

/// Line `y = a + s x` through the hull edge above `xbar`.
fn support(hull: &[(f64, f64)], xbar: f64) -> (f64, f64) {
    let k = hull.windows(2).position(|w| w[1].0 > xbar).unwrap_or(hull.len() - 2);
    let (p, q) = (hull[k], hull[k + 1]);
    let s = (q.1 - p.1) / (q.0 - p.0);
    (p.1 - s * p.0, s)
}

fn envelope(a: f64, s: f64) -> Option<Envelope> {
    if !(s < 0.0) || !a.is_finite() {
        return None;
    }
    let theta = -0.5 / s;
    let m = a.exp() * (2.0 * PI * theta).powf(1.5);
    (m.is_finite() && theta.is_finite()).then_some(Envelope { m, theta })
}

fn local_theta(pts: &[(f64, f64)]) -> f64 {
    let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
    match linear_regression(&x, &y) {
        Ok(fit) if fit.slope < 0.0 => -0.5 / fit.slope,
        _ => f64::INFINITY,
    }
}

/// Fits the two envelopes on the points with `f > 10 floor`. Passes when
/// both exist with finite parameters and the tail temperature is stable.
pub fn sandwich_check(points: &[ProfilePoint], theta_eff: Option<f64>) -> Result<SandwichFit> {
    let mut pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.f > 0.0 && p.f > 10.0 * p.floor && p.r.is_finite())
        .map(|p| (p.r * p.r, p.f.ln()))
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    pts.dedup_by(|a, b| a.0 == b.0);
    if pts.len() < 6 {
        return Err(invalid(format!("sandwich fit needs at least 6 resolved points, got {}", pts.len())));
    }
    // envelopes are the largest (smallest) Gaussians at the energy shell
    // r^2 = 3 theta_eff, or at the centroid of the range when it is unknown
    let xbar = match theta_eff {
        Some(t) if t > 0.0 => (3.0 * t).clamp(pts[0].0, pts[pts.len() - 1].0),
        _ => pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64,
    };
    let (al, sl) = support(&chain(&pts, false), xbar);
    let (au, su) = support(&chain(&pts, true), xbar);
    let lower = envelope(al, sl);
    let upper = envelope(au, su);
    let third = pts.len() / 3;
    let tail_theta_middle = local_theta(&pts[third..2 * third]);
    let tail_theta_outer = local_theta(&pts[2 * third..]);
    let ordered = match (&lower, &upper, theta_eff) {
        (Some(l), Some(u), Some(t)) => Some(l.theta <= t * (1.0 + 1e-9) && t <= u.theta * (1.0 + 1e-9)),
        _ => None,
    };
    let reason = if lower.is_none() {
        Some("no Gaussian lower envelope".to_string())
    } else if upper.is_none() {
        Some("no Gaussian upper envelope".to_string())
    } else if !(tail_theta_outer.is_finite() && tail_theta_middle.is_finite()) {
        Some("tail is not Gaussian-decaying".to_string())
    } else if tail_theta_outer > TAIL_GROWTH_LIMIT * tail_theta_middle {
        Some(format!(
            "tail temperature grows from {tail_theta_middle:.3} to {tail_theta_outer:.3}: tail heavier than Gaussian"
        ))
    } else {
        None
    };
    let r = |x: f64| x.sqrt();
    Ok(SandwichFit {
        lower,
        upper,
        range: (r(pts[0].0), r(pts[pts.len() - 1].0)),
        points_used: pts.len(),
        tail_theta_middle,
        tail_theta_outer,
        theta_eff,
        ordered,
        passed: reason.is_none(),
        reason,
    })
}
