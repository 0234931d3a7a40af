use nalgebra::{Complex, DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::assemble::weighted_column_norm;
use super::{OperatorMatrix, OperatorTag, Pieces, RadialGrid};
use crate::error::{invalid, Error, Result};
use crate::kinetics::WeightSpec;
use crate::rng::stream;
use crate::stats::{linear_regression, spearman};

const ZERO_TOL: f64 = 1e-8;
const DECAY_VECTORS: usize = 20;
const DECAY_STEPS: usize = 100;
const CONTOUR_POINTS: usize = 64;
/// Stream tag for the random test vectors.
const TAG_SPECTRAL: u64 = 30;

/// Zero mode of a generator with vanishing column masses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroMode {
    /// Kernel vector with unit mass.
    pub vector: Vec<f64>,
    /// `|L G| / (|L| |G|)` in the max norm.
    pub residual: f64,
    /// `|W| |G| / |W . G|`: eigenvalue condition number of the zero mode.
    pub condition: f64,
    pub positive: bool,
}

/// Solves `L G = 0`, `sum W G = 1` with one equation replaced by the mass
/// constraint. Any equation can go: the rows are dependent through `W`.
pub fn zero_mode(op: &OperatorMatrix) -> Result<ZeroMode> {
    let n = op.n();
    let w = &op.grid.weights;
    let mut a = op.matrix.clone();
    let k = n - 1;
    for j in 0..n {
        a[(k, j)] = w[j];
    }
    let mut rhs = DVector::zeros(n);
    rhs[k] = 1.0;
    let g = a.lu().solve(&rhs).ok_or_else(|| Error::Numerical("zero-mode system is singular".into()))?;
    let lg = &op.matrix * &g;
    let max = |v: &DVector<f64>| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let norm_l = (0..n).map(|i| op.matrix.row(i).iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max);
    let residual = max(&lg) / (norm_l * max(&g));
    let wv = DVector::from_column_slice(w);
    let condition = wv.norm() * g.norm() / wv.dot(&g).abs();
    let vector: Vec<f64> = g.iter().copied().collect();
    let positive = vector.iter().all(|&x| x > 0.0);
    Ok(ZeroMode { vector, residual, condition, positive })
}

/// Eigenvalues of a real matrix, sorted by decreasing real part.
pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<Complex<f64>> {
    let mut ev: Vec<Complex<f64>> = m.clone().complex_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
    ev
}

/// Index of the eigenvalue of smallest modulus and the gap
/// `-max Re` over the others.
fn gap_of(ev: &[Complex<f64>]) -> (usize, f64) {
    let k0 = (0..ev.len()).min_by(|&a, &b| ev[a].norm().total_cmp(&ev[b].norm())).unwrap();
    let top = ev.iter().enumerate().filter(|&(i, _)| i != k0).map(|(_, z)| z.re).fold(f64::NEG_INFINITY, f64::max);
    (k0, -top)
}

/// Matrix exponential by scaling and squaring with the degree 13 Padé approximant.
pub fn expm(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    const B: [f64; 14] = [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ];
    const THETA13: f64 = 5.371920351148152;
    let n = a.nrows();
    let norm1 = (0..n).map(|j| a.column(j).iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max);
    if !norm1.is_finite() {
        return Err(Error::Numerical("matrix exponential of a non-finite matrix".into()));
    }
    let s = if norm1 > THETA13 { (norm1 / THETA13).log2().ceil() as i32 } else { 0 };
    let a = a / 2f64.powi(s);
    let id = DMatrix::<f64>::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_inner = &a6 * (&a6 * B[13] + &a4 * B[11] + &a2 * B[9]) + &a6 * B[7] + &a4 * B[5] + &a2 * B[3] + &id * B[1];
    let u = &a * u_inner;
    let v = &a6 * (&a6 * B[12] + &a4 * B[10] + &a2 * B[8]) + &a6 * B[6] + &a4 * B[4] + &a2 * B[2] + &id * B[0];
    let mut r = (&v - &u)
        .lu()
        .solve(&(&v + &u))
        .ok_or_else(|| Error::Numerical("Padé denominator is singular".into()))?;
    for _ in 0..s {
        r = &r * &r;
    }
    Ok(r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    /// Fitted rate of the worst normalized X-norm over the window.
    pub mu_hat: f64,
    /// `max_t sup_h |e^{tL} h|_X / |h|_X * e^{mu t}`, measured only.
    pub c_mu: f64,
    pub window: (f64, f64),
    /// Largest mass of an evolved vector.
    pub max_mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub tag: OperatorTag,
    pub alpha: f64,
    pub n: usize,
    /// Real and imaginary parts, by decreasing real part.
    pub eigenvalues: Vec<(f64, f64)>,
    pub lambda0: (f64, f64),
    pub zero_mode: ZeroMode,
    /// Gap on isotropic perturbations.
    pub isotropic_gap: f64,
    pub decay: DecayFit,
    /// Largest difference between the eigen-projection by a contour integral
    /// and `rho_f G` over the test vectors, relative to `|f|_X`.
    pub projection_agreement: f64,
    pub flags: Vec<String>,
}

fn mass_zero_vectors(grid: &RadialGrid, g: &[f64], count: usize, seed: u64) -> Vec<Vec<f64>> {
    let m = grid.maxwellian();
    (0..count)
        .map(|k| {
            let mut rng = stream(seed, TAG_SPECTRAL, 0, k as u64);
            // smooth random combination on the Maxwellian scale
            let c: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let h: Vec<f64> = grid
                .nodes
                .iter()
                .zip(&m)
                .map(|(&r, &mi)| {
                    let poly: f64 = c.iter().enumerate().map(|(p, ci)| ci * (r / 2.0).powi(p as i32)).sum();
                    mi * poly
                })
                .collect();
            let rho = grid.mass(&h);
            h.iter().zip(g).map(|(h, g)| h - rho * g).collect()
        })
        .collect()
}

/// `P f` from a trapezoid rule for `(2 pi i)^{-1} oint (z - L)^{-1} f dz` on
/// the circle of radius `radius` about zero.
pub fn contour_projection(m: &DMatrix<f64>, f: &[f64], radius: f64) -> Result<Vec<f64>> {
    let n = m.nrows();
    let mc: DMatrix<Complex<f64>> = m.map(|x| Complex::new(x, 0.0));
    let fc = DVector::from_iterator(n, f.iter().map(|&x| Complex::new(x, 0.0)));
    let mut acc = DVector::<Complex<f64>>::zeros(n);
    for k in 0..CONTOUR_POINTS {
        let th = 2.0 * PI * (k as f64 + 0.5) / CONTOUR_POINTS as f64;
        let z = Complex::from_polar(radius, th);
        let shifted = DMatrix::<Complex<f64>>::identity(n, n) * z - &mc;
        let x = shifted.lu().solve(&fc).ok_or_else(|| Error::Numerical("contour passes through an eigenvalue".into()))?;
        acc += x * z;
    }
    Ok(acc.iter().map(|c| c.re / CONTOUR_POINTS as f64).collect())
}

/// Full report for an assembled generator.
pub fn spectral_report(op: &OperatorMatrix, seed: u64) -> Result<SpectralReport> {
    let mut flags = op.flags.clone();
    let ev = eigenvalues(&op.matrix);
    let (k0, gap) = gap_of(&ev);
    let lambda0 = ev[k0];
    if lambda0.norm() > ZERO_TOL * op.matrix.abs().max() {
        flags.push(format!("no eigenvalue within tolerance of zero (|lambda0| = {:.3e})", lambda0.norm()));
    }
    if !(gap > 0.0) {
        flags.push(format!("no positive gap ({gap:.3e})"));
        return Err(Error::Numerical(format!("operator has no positive gap: {gap}")));
    }
    let zm = zero_mode(op)?;
    if zm.condition > 1e8 {
        flags.push(format!("zero mode is ill-conditioned ({:.3e})", zm.condition));
    }
    let xw = op.grid.x_weights(&op.weights);
    let xnorm = |h: &[f64]| h.iter().zip(&xw).map(|(h, w)| h.abs() * w).sum::<f64>();

    // semigroup decay on mass-zero vectors
    let t_end = 5.0 / gap;
    let dt = t_end / DECAY_STEPS as f64;
    let step = expm(&(&op.matrix * dt))?;
    let vectors = mass_zero_vectors(&op.grid, &zm.vector, DECAY_VECTORS, seed);
    let mut worst = vec![0.0f64; DECAY_STEPS + 1];
    let mut max_mass = 0.0f64;
    for h in &vectors {
        let h0 = xnorm(h);
        let mut x = DVector::from_column_slice(h);
        worst[0] = worst[0].max(1.0);
        for k in 1..=DECAY_STEPS {
            x = &step * x;
            let xs: Vec<f64> = x.iter().copied().collect();
            worst[k] = worst[k].max(xnorm(&xs) / h0);
            max_mass = max_mass.max(op.grid.mass(&xs).abs() / h0);
        }
    }
    let times: Vec<f64> = (0..=DECAY_STEPS).map(|k| k as f64 * dt).collect();
    let lo = DECAY_STEPS / 5;
    let logs: Vec<f64> = worst[lo..].iter().map(|x| x.ln()).collect();
    let fit = linear_regression(&times[lo..], &logs)?;
    let mu_hat = -fit.slope;
    let c_mu = times.iter().zip(&worst).map(|(t, w)| w * (mu_hat * t).exp()).fold(0.0, f64::max);
    if max_mass > 1e-10 {
        flags.push(format!("evolved mass {max_mass:.3e}"));
    }

    // projection two ways
    let mut agreement = 0.0f64;
    for (k, h) in mass_zero_vectors(&op.grid, &zm.vector, 4, seed ^ 1).iter().enumerate() {
        // add mass so that the projection is not trivially zero
        let f: Vec<f64> = h.iter().zip(&zm.vector).map(|(h, g)| h + (k as f64 + 1.0) * g).collect();
        let rho = op.grid.mass(&f);
        let riesz = contour_projection(&op.matrix, &f, 0.5 * gap)?;
        let diff: Vec<f64> = riesz.iter().zip(&zm.vector).map(|(p, g)| p - rho * g).collect();
        agreement = agreement.max(xnorm(&diff) / xnorm(&f));
    }

    Ok(SpectralReport {
        tag: op.tag,
        alpha: op.alpha,
        n: op.n(),
        eigenvalues: ev.iter().map(|z| (z.re, z.im)).collect(),
        lambda0: (lambda0.re, lambda0.im),
        zero_mode: zm,
        isotropic_gap: gap,
        decay: DecayFit { mu_hat, c_mu, window: (times[lo], t_end), max_mass },
        projection_agreement: agreement,
        flags,
    })
}

/// Gap only, without the decay fit.
pub fn isotropic_gap(m: &DMatrix<f64>) -> f64 {
    gap_of(&eigenvalues(m)).1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DissipativityReport {
    pub r_cut: f64,
    pub beta_star: f64,
    /// Worst normalized margin over the test battery.
    pub margin: f64,
    pub coordinate_margin: f64,
    pub random_sign_margin: f64,
    pub smooth_margin: f64,
    /// Worst column bound; non-negative means dissipative for every vector.
    pub certificate: f64,
    pub passed: bool,
}

/// `0.9 (inf Sigma/(1+r) + inf sigma/(1+r))` over the nodes.
pub fn beta_star(grid: &RadialGrid, pieces: &Pieces) -> f64 {
    let inf = |v: &[f64]| v.iter().zip(&grid.nodes).map(|(s, &r)| s / (1.0 + r)).fold(f64::INFINITY, f64::min);
    0.9 * (inf(&pieces.big_sigma) + inf(&pieces.small_sigma))
}

/// Checks `sum_i sign(f_i) (B f)_i m^{-1}_i W_i <= -beta_star |f|_Y` on
/// coordinate vectors, random signed vectors and smooth bumps.
pub fn dissipativity_check(b: &OperatorMatrix, r_cut: f64, beta_star: f64, seed: u64) -> Result<DissipativityReport> {
    if b.tag != OperatorTag::BAlpha {
        return Err(invalid("dissipativity is checked on the B part of a splitting"));
    }
    let n = b.n();
    let x = b.grid.x_weights(&b.weights);
    let y = b.grid.y_weights(&b.weights);
    let margin = |f: &[f64]| -> f64 {
        let bf = b.apply(f);
        let form: f64 = (0..n).map(|i| sign(f[i]) * bf[i] * x[i]).sum();
        let fy: f64 = (0..n).map(|i| f[i].abs() * y[i]).sum();
        let fx: f64 = (0..n).map(|i| f[i].abs() * x[i]).sum();
        (-form - beta_star * fy) / fx
    };
    let coordinate_margin = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            margin(&e)
        })
        .fold(f64::INFINITY, f64::min);
    let random_sign_margin = (0..64)
        .map(|k| {
            let mut rng = stream(seed, TAG_SPECTRAL, 1, k);
            let f: Vec<f64> = (0..n)
                .map(|i| {
                    let s = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    s * rng.random_range(0.0..1.0) / x[i]
                })
                .collect();
            margin(&f)
        })
        .fold(f64::INFINITY, f64::min);
    let r_top = *b.grid.nodes.last().unwrap();
    let smooth_margin = (0..64)
        .map(|k| {
            let mut rng = stream(seed, TAG_SPECTRAL, 2, k);
            let centre = rng.random_range(0.0..r_top);
            let width = rng.random_range(0.2..2.0);
            let freq = rng.random_range(0.0..3.0);
            let f: Vec<f64> = b
                .grid
                .nodes
                .iter()
                .zip(&x)
                .map(|(&r, xi)| (-(r - centre).powi(2) / (2.0 * width * width)).exp() * (freq * r).cos() / xi)
                .collect();
            margin(&f)
        })
        .fold(f64::INFINITY, f64::min);
    let certificate = (0..n)
        .map(|j| {
            let off: f64 = (0..n).filter(|&i| i != j).map(|i| b.matrix[(i, j)].abs() * x[i]).sum();
            (-b.matrix[(j, j)] * x[j] - off - beta_star * y[j]) / x[j]
        })
        .fold(f64::INFINITY, f64::min);
    let worst = coordinate_margin.min(random_sign_margin).min(smooth_margin);
    Ok(DissipativityReport {
        r_cut,
        beta_star,
        margin: worst,
        coordinate_margin,
        random_sign_margin,
        smooth_margin,
        certificate,
        passed: worst > 0.0,
    })
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Smallest cut radius on the ladder `start, start + step, ...` for which
/// the battery passes. Returns the splitting report at that radius.
pub fn calibrate_cut(
    pieces: &Pieces,
    grid: &RadialGrid,
    weights: WeightSpec,
    start: f64,
    step: f64,
    seed: u64,
) -> Result<DissipativityReport> {
    let bs = beta_star(grid, pieces);
    let top = *grid.nodes.last().unwrap();
    let mut r = start;
    let mut last = None;
    while r < top {
        let (_, b) = pieces.splitting(grid, weights, r)?;
        let rep = dissipativity_check(&b, r, bs, seed)?;
        if rep.passed {
            return Ok(rep);
        }
        last = Some(rep);
        r += step;
    }
    let margin = last.map_or(f64::NAN, |l| l.margin);
    Err(Error::Numerical(format!("no cut radius below {top} makes B dissipative (last margin {margin:.3e}); increase R")))
}

/// One row of the drift table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftRow {
    pub alpha: f64,
    /// `|L_alpha - L_1|` from Y into X.
    pub operator_drift: f64,
    pub gap: f64,
    /// Modulus of the eigenvalue closest to zero.
    pub lambda0: f64,
    /// `|G_alpha - G_1|_X`.
    pub zero_mode_drift: f64,
    /// `|R(z, L_alpha) Q_alpha - R(z, L_1) Q_1|` in X at `z = gap(1)/2`,
    /// `Q = I - P` the complementary projection.
    pub resolvent_drift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftTable {
    pub rows: Vec<DriftRow>,
    /// Spearman correlation of each drift with alpha over the rows.
    pub operator_trend: f64,
    pub zero_mode_trend: f64,
    pub resolvent_trend: f64,
    pub flags: Vec<String>,
}

fn reduced_resolvent(m: &DMatrix<f64>, g: &[f64], w: &[f64], z: f64) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    let p = DMatrix::from_fn(n, n, |i, j| g[i] * w[j]);
    let q = DMatrix::<f64>::identity(n, n) - p;
    let shifted = DMatrix::<f64>::identity(n, n) * z - m;
    shifted.lu().solve(&q).ok_or_else(|| Error::Numerical("resolvent is singular".into()))
}

/// Drift of `L_alpha` towards the elastic operator. `ops` must contain an
/// entry with `alpha = 1`.
pub fn alpha_drift(ops: &[OperatorMatrix]) -> Result<DriftTable> {
    let elastic = ops
        .iter()
        .find(|o| o.alpha == 1.0)
        .ok_or_else(|| invalid("drift table needs the elastic operator"))?;
    let grid = &elastic.grid;
    if ops.iter().any(|o| o.grid != *grid) {
        return Err(invalid("all operators must share one grid"));
    }
    let x = grid.x_weights(&elastic.weights);
    let y = grid.y_weights(&elastic.weights);
    let g1 = zero_mode(elastic)?.vector;
    let gap1 = isotropic_gap(&elastic.matrix);
    let z = 0.5 * gap1;
    let r1 = reduced_resolvent(&elastic.matrix, &g1, &grid.weights, z)?;
    let mut rows = Vec::with_capacity(ops.len());
    for op in ops {
        let ev = eigenvalues(&op.matrix);
        let (k0, gap) = gap_of(&ev);
        let g = zero_mode(op)?.vector;
        let r = reduced_resolvent(&op.matrix, &g, &grid.weights, z)?;
        rows.push(DriftRow {
            alpha: op.alpha,
            operator_drift: weighted_column_norm(&(&op.matrix - &elastic.matrix), &x, &y),
            gap,
            lambda0: ev[k0].norm(),
            zero_mode_drift: g.iter().zip(&g1).zip(&x).map(|((a, b), w)| (a - b).abs() * w).sum(),
            resolvent_drift: weighted_column_norm(&(&r - &r1), &x, &x),
        });
    }
    rows.sort_by(|a, b| a.alpha.total_cmp(&b.alpha));
    let alphas: Vec<f64> = rows.iter().map(|r| r.alpha).collect();
    let trend = |f: fn(&DriftRow) -> f64| spearman(&alphas, &rows.iter().map(f).collect::<Vec<_>>());
    let operator_trend = trend(|r| r.operator_drift);
    let zero_mode_trend = trend(|r| r.zero_mode_drift);
    let resolvent_trend = trend(|r| r.resolvent_drift);
    let mut flags = Vec::new();
    for (name, t) in [("operator", operator_trend), ("zero mode", zero_mode_trend), ("resolvent", resolvent_trend)] {
        if !(t < -0.9) {
            flags.push(format!("{name} drift is not monotone in alpha (Spearman {t:.3})"));
        }
    }
    Ok(DriftTable { rows, operator_trend, zero_mode_trend, resolvent_trend, flags })
}
