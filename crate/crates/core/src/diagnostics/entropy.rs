use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::density::{DensityEstimate, Grid};
use crate::error::{invalid, Error, Result};
use crate::kinetics::{inelastic_transform, BathMaxwellian, DensityFn, Velocity, WeightSpec};
use crate::rng::{sample_bath_partner, stream, tag, unit_vector};

const CHUNK: usize = 4096;

/// Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub se: f64,
    pub samples: usize,
    /// Draws rejected because the density vanished at a required point.
    pub resampled: usize,
}

impl McEstimate {
    pub fn scaled(self, c: f64) -> Self {
        Self { mean: c * self.mean, se: c.abs() * self.se, ..self }
    }
}

#[derive(Default, Clone, Copy)]
struct Acc {
    n: usize,
    sum: f64,
    sumsq: f64,
    resampled: usize,
}

impl Acc {
    fn push(&mut self, x: f64) {
        self.n += 1;
        self.sum += x;
        self.sumsq += x * x;
    }

    fn merge(mut self, o: Acc) -> Acc {
        self.n += o.n;
        self.sum += o.sum;
        self.sumsq += o.sumsq;
        self.resampled += o.resampled;
        self
    }

    fn estimate(self) -> McEstimate {
        let n = self.n as f64;
        let mean = self.sum / n;
        let var = ((self.sumsq - n * mean * mean) / (n - 1.0)).max(0.0);
        McEstimate { mean, se: (var / n).sqrt(), samples: self.n, resampled: self.resampled }
    }
}

/// Runs `n` draws split into fixed chunks with independent streams; the
/// reduction order is fixed, so the result is independent of the thread pool.
fn chunked<F>(n: usize, seed: u64, stream_tag: u64, draw: F) -> Result<McEstimate>
where
    F: Fn(&mut ChaCha8Rng, &mut Acc) + Sync,
{
    if n < 2 {
        return Err(invalid("need at least two Monte Carlo draws"));
    }
    let chunks = n.div_ceil(CHUNK);
    let parts: Vec<Acc> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream(seed, stream_tag, 0, c as u64);
            let mut acc = Acc::default();
            let len = CHUNK.min(n - c * CHUNK);
            while acc.n < len {
                draw(&mut rng, &mut acc);
                if acc.resampled > 100 * CHUNK {
                    break;
                }
            }
            acc
        })
        .collect();
    let acc = parts.into_iter().fold(Acc::default(), Acc::merge);
    if acc.n < 2 {
        return Err(Error::Numerical("density vanished on almost every draw".into()));
    }
    Ok(acc.estimate())
}

fn pick_pair(rng: &mut ChaCha8Rng, n: usize) -> (usize, usize) {
    let i = rng.random_range(0..n);
    loop {
        let j = rng.random_range(0..n);
        if j != i {
            return (i, j);
        }
    }
}

fn log_maxwellian(m: &BathMaxwellian, v: Velocity) -> f64 {
    -(v - m.u0).norm_sq() / (2.0 * m.theta0)
        - 1.5 * (2.0 * std::f64::consts::PI * m.theta0).ln()
}

/// Relative entropy of a binned estimate with respect to the bath.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativeEntropy {
    pub value: f64,
    /// Delta-method standard error for histogram inputs; 0 for analytic ones.
    pub se: f64,
    /// Occupied bins whose bath mass underflowed to 0 and were skipped.
    pub excluded_bins: usize,
}

/// `H(f|M) = sum_b p_b log(p_b / M_b)` with analytic bath shell masses; the mass
/// outside the grid enters as one more bin against the bath tail.
pub fn relative_entropy(f: &DensityEstimate, m: &BathMaxwellian) -> Result<RelativeEntropy> {
    let Grid::Radial { center, edges } = f.grid() else {
        return Err(invalid("relative entropy needs a radial estimate"));
    };
    if (*center - m.u0).norm() > 1e-12 {
        return Err(invalid("radial estimate must be centered at the bath velocity"));
    }
    let mut terms: Vec<(f64, f64)> = edges
        .windows(2)
        .zip(f.masses())
        .map(|(w, &p)| (p, m.shell_mass(w[0], w[1])))
        .collect();
    terms.push((f.escaped_mass(), m.speed_sf(*edges.last().unwrap())));
    let mut h = 0.0;
    let mut second = 0.0;
    let mut excluded = 0;
    for (p, q) in terms {
        if p == 0.0 {
            continue;
        }
        if q == 0.0 {
            excluded += 1;
            continue;
        }
        let l = (p / q).ln();
        h += p * l;
        second += p * l * l;
    }
    let n = f.sample_count();
    let se = if n > 1 { ((second - h * h).max(0.0) / n as f64).sqrt() } else { 0.0 };
    Ok(RelativeEntropy { value: h, se, excluded_bins: excluded })
}

/// Per-sample `log(p_b / M_b)` of the bin holding each sample; their mean is the
/// plug-in relative entropy.
pub fn entropy_contributions(samples: &[Velocity], f: &DensityEstimate, m: &BathMaxwellian) -> Vec<f64> {
    let Grid::Radial { edges, .. } = f.grid() else { return vec![] };
    let r_max = *edges.last().unwrap();
    let tail = (f.escaped_mass(), m.speed_sf(r_max));
    samples
        .iter()
        .map(|&v| {
            let r = (v - m.u0).norm();
            let (p, q) = if r < r_max {
                let b = edges.partition_point(|&e| e <= r) - 1;
                (f.masses()[b], m.shell_mass(edges[b], edges[b + 1]))
            } else {
                tail
            };
            if q > 0.0 { (p / q).ln() } else { 0.0 }
        })
        .collect()
}

/// Entropy production of the bath operator,
/// `D(f) = -E_{v~f, w~M, sigma}[|v-w| (psi(v*) - psi(v))]`, `psi = log(f/M)`.
pub fn entropy_production_d(
    samples: &[Velocity],
    f: &dyn DensityFn,
    m: &BathMaxwellian,
    n: usize,
    seed: u64,
) -> Result<McEstimate> {
    if samples.is_empty() {
        return Err(Error::ZeroMass);
    }
    chunked(n, seed, tag::DIAG_D, |rng, acc| {
        let v = samples[rng.random_range(0..samples.len())];
        let w = sample_bath_partner(m, rng);
        let s = unit_vector(rng);
        let (vs, _) = inelastic_transform(v, w, s, 1.0).expect("unit sigma");
        let (fv, fs) = (f.eval(v), f.eval(vs));
        if !(fv > 0.0 && fs > 0.0) {
            acc.resampled += 1;
            return;
        }
        let dpsi = (fs.ln() - log_maxwellian(m, vs)) - (fv.ln() - log_maxwellian(m, v));
        acc.push(-(v - w).norm() * dpsi);
    })
}

fn pair_triple(
    rng: &mut ChaCha8Rng,
    samples: &[Velocity],
    g: &dyn DensityFn,
    alpha: f64,
) -> Option<(f64, f64)> {
    let (i, j) = pick_pair(rng, samples.len());
    let (v, w) = (samples[i], samples[j]);
    let s = unit_vector(rng);
    let (vp, wp) = inelastic_transform(v, w, s, alpha).expect("unit sigma");
    let (gv, gw, gvp, gwp) = (g.eval(v), g.eval(w), g.eval(vp), g.eval(wp));
    if !(gv > 0.0 && gw > 0.0 && gvp > 0.0 && gwp > 0.0) {
        return None;
    }
    let log_x = gvp.ln() + gwp.ln() - gv.ln() - gw.ln();
    Some(((v - w).norm(), log_x))
}

fn check_pairs(samples: &[Velocity], alpha: f64) -> Result<()> {
    if samples.len() < 2 {
        return Err(Error::ZeroMass);
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(invalid(format!("restitution coefficient {alpha} outside (0, 1]")));
    }
    Ok(())
}

/// `D_{H,alpha}(g) = 1/2 E_{v,w~g, sigma}[|v-w| (X - log X - 1)]`,
/// `X = g(v')g(w') / (g(v)g(w))`. Every draw is nonnegative.
pub fn entropy_production_dh(
    samples: &[Velocity],
    g: &dyn DensityFn,
    alpha: f64,
    n: usize,
    seed: u64,
) -> Result<McEstimate> {
    check_pairs(samples, alpha)?;
    chunked(n, seed, tag::DIAG_DH, |rng, acc| match pair_triple(rng, samples, g, alpha) {
        Some((q, lx)) => acc.push(0.5 * q * (lx.exp_m1() - lx).max(0.0)),
        None => acc.resampled += 1,
    })
}

/// Both sides of `int Q(g,g) log g = -D_H(g) + (1-a^2)/(2a^2) E|v-w|` from
/// independent draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub lhs: McEstimate,
    pub rhs: McEstimate,
    /// Studentized difference; the identity passes when `|residual| <= 3`.
    pub residual: f64,
}

impl IdentityCheck {
    pub fn passed(&self) -> bool {
        self.residual.abs() <= 3.0
    }
}

pub fn entropy_identity_check(
    samples: &[Velocity],
    g: &dyn DensityFn,
    alpha: f64,
    n: usize,
    seed: u64,
) -> Result<IdentityCheck> {
    check_pairs(samples, alpha)?;
    let lhs = chunked(n, seed, tag::DIAG_IDENTITY, |rng, acc| {
        match pair_triple(rng, samples, g, alpha) {
            Some((q, lx)) => acc.push(0.5 * q * lx),
            None => acc.resampled += 1,
        }
    })?;
    let c = (1.0 - alpha * alpha) / (2.0 * alpha * alpha);
    let rhs = chunked(n, seed, tag::DIAG_DH, |rng, acc| {
        match pair_triple(rng, samples, g, alpha) {
            Some((q, lx)) => acc.push(-0.5 * q * (lx.exp_m1() - lx).max(0.0) + c * q),
            None => acc.resampled += 1,
        }
    })?;
    let residual = (lhs.mean - rhs.mean) / (lhs.se * lhs.se + rhs.se * rhs.se).sqrt();
    Ok(IdentityCheck { lhs, rhs, residual })
}

/// `E|v - w|^p` over distinct sample pairs.
pub fn pair_speed_moment(samples: &[Velocity], p: f64, n: usize, seed: u64) -> Result<McEstimate> {
    if samples.len() < 2 {
        return Err(Error::ZeroMass);
    }
    chunked(n, seed, tag::DIAG_PAIR, |rng, acc| {
        let (i, j) = pick_pair(rng, samples.len());
        acc.push((samples[i] - samples[j]).norm().powf(p));
    })
}

/// `(1-a^2)/(16 theta0) E|v-w|^3`, the contribution of `-int Q(f,f) log M`.
pub fn qlogm_term(
    samples: &[Velocity],
    alpha: f64,
    m: &BathMaxwellian,
    n: usize,
    seed: u64,
) -> Result<McEstimate> {
    check_pairs(samples, alpha)?;
    let c = (1.0 - alpha * alpha) / (16.0 * m.theta0);
    Ok(pair_speed_moment(samples, 3.0, n, seed)?.scaled(c))
}

/// Outcome of the interpolation inequality `||f||_Y <= C ||f||_X^{1-eps}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterpolationCheck {
    pub holds: bool,
    /// `C ||f||_X^{1-eps} - ||f||_Y`.
    pub margin: f64,
    pub constant: f64,
    pub x_norm: f64,
    pub y_norm: f64,
    /// The weighted `1/eps` moment was not finite on the grid.
    pub inconclusive: bool,
}

/// Checks the interpolation inequality with the Hölder constant
/// `C = (int f <v>^q m^{-1})^{1/q}`, `q = 1/eps`, or with a supplied constant.
pub fn interpolation_check(
    f: &DensityEstimate,
    eps: f64,
    weights: &WeightSpec,
    constant: Option<f64>,
) -> Result<InterpolationCheck> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(invalid("interpolation exponent must lie in (0, 1)"));
    }
    let (x, y) = f.norms(weights);
    let q = 1.0 / eps;
    let moment: f64 = f
        .bin_speeds()
        .iter()
        .zip(f.masses())
        .map(|(&r, &p)| p * WeightSpec::bracket(r).powf(q) * weights.inv_weight(r))
        .sum();
    let c = constant.unwrap_or_else(|| moment.powf(eps));
    let inconclusive = !c.is_finite();
    let margin = c * x.powf(1.0 - eps) - y;
    Ok(InterpolationCheck {
        holds: !inconclusive && margin >= -1e-12 * y.max(1.0),
        margin,
        constant: c,
        x_norm: x,
        y_norm: y,
        inconclusive,
    })
}
