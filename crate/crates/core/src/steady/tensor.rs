//! Quadratic collision tensor on the radial grid.
//!
//! With `f = M g` and `g` piecewise linear in `r^2`, the gain of `Q_alpha(f, f)`
//! is bilinear in the nodal values: `Q(f,f)_i = sum_{j,k} G^k_ij f_j g_k -
//! f_i sum_k S_ki g_k`, where `G^k` is the plane-integral gain matrix for the
//! partner density `M e_k` and `S_ki` its discrete collision frequency.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use crate::error::{invalid, Error, Result};
use crate::kinetics::{gain_kernel_k1_constant, shell_mean_speed, RestitutionParams};
use crate::quadrature::gauss_legendre;
use crate::spectral::RadialGrid;

const MAGIC: &[u8; 8] = b"IHSTENS\0";
const VERSION: u32 = 1;

/// Tail integrals of the hat basis `M(r) e_k(r^2)`.
struct HatTails {
    u: Vec<f64>,
    lam: f64,
    c: f64,
    /// Full tail `J_k(0)`.
    full: Vec<f64>,
    /// Descending half of hat `k` on segment `[u_k, u_{k+1}]`.
    down: Vec<f64>,
}

impl HatTails {
    fn new(grid: &RadialGrid) -> Self {
        let u: Vec<f64> = grid.nodes.iter().map(|r| r * r).collect();
        let theta = grid.bath.theta0;
        let lam = 0.5 / theta;
        let c = 0.5 * (2.0 * PI * theta).powf(-1.5);
        let n = u.len();
        let mut t = Self { u, lam, c, full: vec![0.0; n], down: vec![0.0; n] };
        for k in 0..n - 1 {
            t.down[k] = t.seg_down(k, t.u[k]);
        }
        for k in 0..n {
            let mut s = if k + 1 < n { t.down[k] } else { t.tail_part(t.u[n - 1]) };
            s += if k == 0 { t.head_part(0.0) } else { t.seg_up(k - 1, t.u[k - 1]) };
            t.full[k] = s;
        }
        t
    }

    /// `c int_p^q e^{-lam u} (a + b u) du`.
    fn int(&self, a: f64, b: f64, p: f64, q: f64) -> f64 {
        let lam = self.lam;
        let prim = |u: f64| -> f64 {
            if u.is_infinite() {
                return 0.0;
            }
            let e = (-lam * u).exp();
            -e * (a + b * u) / lam - b * e / (lam * lam)
        };
        self.c * (prim(q) - prim(p))
    }

    /// Descending hat on segment `s` from `p` to `u_{s+1}`.
    fn seg_down(&self, s: usize, p: f64) -> f64 {
        let (ua, ub) = (self.u[s], self.u[s + 1]);
        let d = ub - ua;
        self.int(ub / d, -1.0 / d, p, ub)
    }

    /// Ascending hat on segment `s` from `p` to `u_{s+1}`.
    fn seg_up(&self, s: usize, p: f64) -> f64 {
        let (ua, ub) = (self.u[s], self.u[s + 1]);
        let d = ub - ua;
        self.int(-ua / d, 1.0 / d, p, ub)
    }

    fn head_part(&self, p: f64) -> f64 {
        self.int(1.0, 0.0, p, self.u[0])
    }

    fn tail_part(&self, p: f64) -> f64 {
        self.int(1.0, 0.0, p, f64::INFINITY)
    }

    /// Adds `w J_k(d)` for every basis `k`: the bulk as a bucket weight for
    /// `k >= from` (times `full`), the rest directly into `direct`.
    fn scatter(&self, d: f64, w: f64, bucket: &mut [f64], direct: &mut [f64]) {
        let n = self.u.len();
        let uu = d * d;
        if uu < self.u[0] {
            bucket[1] += w;
            direct[0] += w * (self.head_part(uu) + self.down[0]);
            return;
        }
        if uu >= self.u[n - 1] {
            direct[n - 1] += w * self.tail_part(uu);
            return;
        }
        let s = self.u.partition_point(|&x| x <= uu) - 1;
        direct[s] += w * self.seg_down(s, uu);
        let up = self.seg_up(s, uu);
        if s + 1 == n - 1 {
            direct[s + 1] += w * (up + self.tail_part(self.u[n - 1]));
        } else {
            direct[s + 1] += w * (up + self.down[s + 1]);
            if s + 2 < n {
                bucket[s + 2] += w;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorMeta {
    pub version: u32,
    pub n: usize,
    pub alpha: f64,
    /// Gauss-Legendre nodes on each piece between kinks of the hat tails.
    pub angular_nodes: usize,
    /// SHA-256 of the grid's JSON form.
    pub grid_hash: String,
    /// Largest entry change against a rule with twice the angular nodes,
    /// relative to the largest entry, over a sample of entries.
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollisionTensor {
    pub meta: TensorMeta,
    /// `G^k_ij` at `(i * n + j) * n + k`.
    gain: Vec<f64>,
    /// `S_ki` at `i * n + k`.
    freq: Vec<f64>,
    maxwellian: Vec<f64>,
}

pub fn grid_hash(grid: &RadialGrid) -> Result<String> {
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(grid)?)))
}

/// Points in `(lo, hi)` where `d(rho) = |A - B rho^2| / (2 rho)` crosses a
/// grid node or zero, for both signs of `A`. Each hat tail is smooth in `rho`
/// between them, and the pairs `(r, s)` and `(s, r)` share their nodes, which
/// keeps the discrete detailed balance of the elastic kernel exact.
fn breakpoints(tails: &HatTails, a: f64, b: f64, lo: f64, hi: f64) -> Vec<f64> {
    let mut pts = vec![lo, hi];
    for a in [a, -a] {
        if a > 0.0 {
            pts.push((a / b).sqrt());
        }
        for &uk in &tails.u {
            let t = uk.sqrt();
            let disc = t * t + a * b;
            if disc < 0.0 {
                continue;
            }
            let root = disc.sqrt();
            // B rho^2 + 2 t rho - A = 0 and B rho^2 - 2 t rho - A = 0
            pts.push((root - t) / b);
            pts.push((root + t) / b);
        }
    }
    pts.retain(|&p| p >= lo && p <= hi && p.is_finite());
    pts.sort_by(|x, y| x.total_cmp(y));
    pts.dedup_by(|x, y| (*x - *y).abs() <= 1e-14 * *y);
    pts
}

/// Gain entries `G^k_ij` for all `k` at one off-diagonal pair: `rule` is
/// applied in `log rho` on every smooth piece.
fn pair_entries(
    tails: &HatTails,
    rule: &crate::quadrature::Rule,
    alpha: f64,
    r: f64,
    s: f64,
    wj: f64,
    out: &mut [f64],
) {
    let n = out.len();
    let kappa = (alpha - 1.0) / (alpha + 1.0);
    let pref = gain_kernel_k1_constant(alpha) * 2.0 * PI;
    let (a, b) = (s * s - r * r, 1.0 - 2.0 * kappa);
    let scale = pref / (2.0 * r * s) * wj;
    let mut bucket = vec![0.0; n + 1];
    out.iter_mut().for_each(|x| *x = 0.0);
    let pts = breakpoints(tails, a, b, (r - s).abs(), r + s);
    for piece in pts.windows(2) {
        let (lo, hi) = (piece[0].ln(), piece[1].ln());
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
            let rho = (mid + half * x).exp();
            let d = (a - b * rho * rho).abs() / (2.0 * rho);
            tails.scatter(d, w * half * rho * scale, &mut bucket, out);
        }
    }
    let mut run = 0.0;
    for k in 0..n {
        run += bucket[k];
        out[k] += run * tails.full[k];
    }
}

impl CollisionTensor {
    pub const DEFAULT_ANGULAR_NODES: usize = 4;

    pub fn build(grid: &RadialGrid, params: RestitutionParams) -> Result<Self> {
        Self::build_with(grid, params, Self::DEFAULT_ANGULAR_NODES)
    }

    pub fn build_with(grid: &RadialGrid, params: RestitutionParams, angular_nodes: usize) -> Result<Self> {
        let n = grid.len();
        let alpha = params.alpha();
        let tails = HatTails::new(grid);
        let rule = gauss_legendre(angular_nodes);
        let maxwellian = grid.maxwellian();
        // S_ki = W_k M_k abar(r_k, r_i)
        let mut freq = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                freq[i * n + k] = grid.weights[k] * maxwellian[k] * shell_mean_speed(grid.nodes[k], grid.nodes[i]);
            }
        }
        // columns j in parallel; each holds G^k_ij for all i, k
        let cols: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|j| {
                let mut col = vec![0.0; n * n];
                let mut tmp = vec![0.0; n];
                for i in 0..n {
                    if i == j {
                        continue;
                    }
                    pair_entries(&tails, &rule, alpha, grid.nodes[i], grid.nodes[j], grid.weights[j], &mut tmp);
                    col[i * n..(i + 1) * n].copy_from_slice(&tmp);
                }
                // diagonal from the column mass: sum_i W_i G^k_ij = W_j S_kj
                for k in 0..n {
                    let off: f64 = (0..n).filter(|&i| i != j).map(|i| grid.weights[i] * col[i * n + k]).sum();
                    col[j * n + k] = freq[j * n + k] - off / grid.weights[j];
                }
                col
            })
            .collect();
        let mut gain = vec![0.0; n * n * n];
        for (j, col) in cols.iter().enumerate() {
            for i in 0..n {
                gain[(i * n + j) * n..(i * n + j + 1) * n].copy_from_slice(&col[i * n..(i + 1) * n]);
            }
        }
        let tolerance = Self::refinement_check(grid, &tails, alpha, angular_nodes, &gain);
        let meta = TensorMeta {
            version: VERSION,
            n,
            alpha,
            angular_nodes,
            grid_hash: grid_hash(grid)?,
            tolerance,
        };
        Ok(Self { meta, gain, freq, maxwellian })
    }

    /// Compares a deterministic sample of off-diagonal entries with a rule
    /// of twice the size.
    fn refinement_check(grid: &RadialGrid, tails: &HatTails, alpha: f64, nodes: usize, gain: &[f64]) -> f64 {
        let n = grid.len();
        let fine = gauss_legendre(2 * nodes);
        let scale = gain.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        let mut tmp = vec![0.0; n];
        let mut worst = 0.0f64;
        for t in 0..24 {
            let i = (t * 37 + 5) % n;
            let j = (t * 53 + 11) % n;
            if i == j {
                continue;
            }
            pair_entries(tails, &fine, alpha, grid.nodes[i], grid.nodes[j], grid.weights[j], &mut tmp);
            for k in 0..n {
                worst = worst.max((tmp[k] - gain[(i * n + j) * n + k]).abs());
            }
        }
        worst / scale
    }

    pub fn n(&self) -> usize {
        self.meta.n
    }

    pub fn alpha(&self) -> f64 {
        self.meta.alpha
    }

    /// `Q_alpha(f, f)` at the nodes.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        let n = self.n();
        let g: Vec<f64> = f.iter().zip(&self.maxwellian).map(|(f, m)| f / m).collect();
        (0..n)
            .into_par_iter()
            .map(|i| {
                let mut gain = 0.0;
                for j in 0..n {
                    let row = &self.gain[(i * n + j) * n..(i * n + j + 1) * n];
                    let gk: f64 = row.iter().zip(&g).map(|(a, b)| a * b).sum();
                    gain += gk * f[j];
                }
                let loss: f64 = self.freq[i * n..(i + 1) * n].iter().zip(&g).map(|(a, b)| a * b).sum();
                gain - loss * f[i]
            })
            .collect()
    }

    /// Gain matrix for a fixed partner density `f`: `sum_k G^k g_k`.
    pub fn gain_matrix(&self, f: &[f64]) -> nalgebra::DMatrix<f64> {
        let n = self.n();
        let g: Vec<f64> = f.iter().zip(&self.maxwellian).map(|(f, m)| f / m).collect();
        nalgebra::DMatrix::from_fn(n, n, |i, j| {
            self.gain[(i * n + j) * n..(i * n + j + 1) * n].iter().zip(&g).map(|(a, b)| a * b).sum()
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.meta)?;
        let mut out = Vec::with_capacity(16 + meta.len() + 8 * (self.gain.len() + self.freq.len() + self.maxwellian.len()) + 32);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        for x in self.gain.iter().chain(&self.freq).chain(&self.maxwellian) {
            out.extend_from_slice(&x.to_le_bytes());
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(format!("tensor cache: {m}"));
        if bytes.len() < 48 {
            return Err(bad("file too short"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(bad("checksum mismatch"));
        }
        if &body[..8] != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u32::from_le_bytes(body[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(bad("unsupported version"));
        }
        let len = u32::from_le_bytes(body[12..16].try_into().unwrap()) as usize;
        let meta: TensorMeta = serde_json::from_slice(&body[16..16 + len])?;
        let n = meta.n;
        let vals: Vec<f64> = body[16 + len..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        if vals.len() != n * n * n + n * n + n {
            return Err(bad("payload size does not match the header"));
        }
        let gain = vals[..n * n * n].to_vec();
        let freq = vals[n * n * n..n * n * n + n * n].to_vec();
        let maxwellian = vals[n * n * n + n * n..].to_vec();
        Ok(Self { meta, gain, freq, maxwellian })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()?)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    /// Loads a cached tensor, refusing one built for another grid or alpha.
    pub fn load(path: &Path, grid: &RadialGrid, params: RestitutionParams) -> Result<Self> {
        let t = Self::from_bytes(&fs::read(path)?)?;
        if t.meta.grid_hash != grid_hash(grid)? || t.meta.alpha != params.alpha() {
            return Err(invalid("cached tensor belongs to a different grid or restitution coefficient"));
        }
        Ok(t)
    }

    /// Loads from `path` when it matches, otherwise builds and writes it.
    pub fn cached(path: &Path, grid: &RadialGrid, params: RestitutionParams) -> Result<Self> {
        match Self::load(path, grid, params) {
            Ok(t) => Ok(t),
            Err(_) => {
                let t = Self::build(grid, params)?;
                t.save(path)?;
                Ok(t)
            }
        }
    }
}
