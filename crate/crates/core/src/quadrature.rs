//! Fixed quadrature rules: Gauss–Legendre, Gauss–Jacobi, Gauss–Hermite and a
//! product rule on the unit sphere.

use nalgebra::{DMatrix, SymmetricEigen};
use std::f64::consts::PI;

use crate::kinetics::Velocity;

/// Nodes and weights of a one-dimensional rule.
#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    /// Affine map of a rule on [-1, 1] onto [a, b].
    pub fn mapped(&self, a: f64, b: f64) -> Rule {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (b + a);
        Rule {
            nodes: self.nodes.iter().map(|x| mid + half * x).collect(),
            weights: self.weights.iter().map(|w| half * w).collect(),
        }
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Gauss–Legendre rule on [-1, 1] by Newton iteration on P_n.
pub fn gauss_legendre(n: usize) -> Rule {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    Rule { nodes, weights }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Golub–Welsch: nodes and weights from the symmetric Jacobi matrix of a
/// monic three-term recurrence with diagonal `a`, off-diagonal `sqrt(b)`.
fn golub_welsch(a: &[f64], b: &[f64], mu0: f64) -> Rule {
    let n = a.len();
    let mut j = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        j[(i, i)] = a[i];
        if i + 1 < n {
            let s = b[i + 1].sqrt();
            j[(i, i + 1)] = s;
            j[(i + 1, i)] = s;
        }
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let v0 = eig.eigenvectors[(0, k)];
            (eig.eigenvalues[k], mu0 * v0 * v0)
        })
        .collect();
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
    Rule {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
    }
}

/// Gauss–Jacobi rule for the weight (1+x)^2 on [-1, 1].
///
/// Used for radial integrals against r^2 dr. Nodes are refined by Newton
/// iteration on the orthogonal polynomial after the eigen-solve.
pub fn gauss_jacobi_r2(n: usize) -> Rule {
    let (al, be) = (0.0_f64, 2.0_f64);
    let mut a = vec![0.0; n];
    let mut b = vec![0.0; n];
    for k in 0..n {
        let kf = k as f64;
        let s = 2.0 * kf + al + be;
        a[k] = if k == 0 {
            (be - al) / (al + be + 2.0)
        } else {
            (be * be - al * al) / (s * (s + 2.0))
        };
        if k >= 1 {
            b[k] = 4.0 * kf * (kf + al) * (kf + be) * (kf + al + be)
                / (s * s * (s + 1.0) * (s - 1.0));
        }
    }
    let mu0 = 8.0 / 3.0;
    let mut rule = golub_welsch(&a, &b, mu0);
    // Newton polish on the monic recurrence; weights from the Christoffel
    // formula w_i = 1 / sum_k p_k(x_i)^2 / h_k with orthonormal scaling.
    for x in rule.nodes.iter_mut() {
        for _ in 0..3 {
            let (p, dp) = monic_eval(&a, &b, n, *x);
            if dp == 0.0 {
                break;
            }
            *x -= p / dp;
        }
    }
    for (i, &x) in rule.nodes.iter().enumerate() {
        // orthonormal polynomials q_k = p_k / sqrt(h_k), h_0 = mu0, h_k = h_{k-1} b_k
        let mut sum = 0.0;
        let mut pm1 = 0.0;
        let mut p = 1.0;
        let mut h = mu0;
        for k in 0..n {
            sum += p * p / h;
            let pn = (x - a[k]) * p - if k > 0 { b[k] * pm1 } else { 0.0 };
            pm1 = p;
            p = pn;
            if k + 1 < n {
                h *= b[k + 1];
            }
        }
        rule.weights[i] = 1.0 / sum;
    }
    rule
}

fn monic_eval(a: &[f64], b: &[f64], n: usize, x: f64) -> (f64, f64) {
    let (mut pm1, mut p) = (0.0, 1.0);
    let (mut dm1, mut d) = (0.0, 0.0);
    for k in 0..n {
        let bk = if k > 0 { b[k] } else { 0.0 };
        let pn = (x - a[k]) * p - bk * pm1;
        let dn = p + (x - a[k]) * d - bk * dm1;
        pm1 = p;
        p = pn;
        dm1 = d;
        d = dn;
    }
    (p, d)
}

/// Gauss–Hermite rule for the weight exp(-x^2) on the real line.
pub fn gauss_hermite(n: usize) -> Rule {
    let a = vec![0.0; n];
    let b: Vec<f64> = (0..n).map(|k| k as f64 / 2.0).collect();
    golub_welsch(&a, &b, PI.sqrt())
}

/// Product rule on S^2: Gauss–Legendre in cos(theta) times the trapezoid
/// rule in phi. Weights sum to one, so `average` returns the mean over the
/// sphere.
#[derive(Debug, Clone)]
pub struct SphereRule {
    pub points: Vec<Velocity>,
    pub weights: Vec<f64>,
}

impl SphereRule {
    pub const DEFAULT_ORDER: usize = 16;

    pub fn new(order: usize) -> Self {
        let gl = gauss_legendre(order);
        let n_phi = 2 * order;
        let mut points = Vec::with_capacity(order * n_phi);
        let mut weights = Vec::with_capacity(order * n_phi);
        for (&c, &wc) in gl.nodes.iter().zip(&gl.weights) {
            let s = (1.0 - c * c).max(0.0).sqrt();
            for k in 0..n_phi {
                let phi = 2.0 * PI * (k as f64 + 0.5) / n_phi as f64;
                points.push(Velocity::new(s * phi.cos(), s * phi.sin(), c));
                weights.push(0.5 * wc / n_phi as f64);
            }
        }
        Self { points, weights }
    }

    /// Rotates the rule so that its polar axis is `axis` (unit vector).
    pub fn aligned(&self, axis: Velocity) -> SphereRule {
        let (e1, e2) = axis.orthonormal_complement();
        let points = self
            .points
            .iter()
            .map(|p| e1 * p.x + e2 * p.y + axis * p.z)
            .collect();
        SphereRule {
            points,
            weights: self.weights.clone(),
        }
    }

    pub fn average(&self, f: impl Fn(Velocity) -> f64) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(&p, &w)| w * f(p))
            .sum()
    }
}

impl Default for SphereRule {
    fn default() -> Self {
        Self::new(Self::DEFAULT_ORDER)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_integrates_polynomials() {
        let r = gauss_legendre(10);
        for k in 0..20 {
            let exact = if k % 2 == 0 { 2.0 / (k as f64 + 1.0) } else { 0.0 };
            let got = r.integrate(|x| x.powi(k));
            assert!((got - exact).abs() < 1e-13, "k={k}: {got} vs {exact}");
        }
    }

    #[test]
    fn jacobi_r2_integrates_against_weight() {
        let r = gauss_jacobi_r2(12);
        // int_{-1}^{1} (1+x)^2 x^k dx via Legendre with enough nodes
        let gl = gauss_legendre(40);
        for k in 0..24 {
            let exact = gl.integrate(|x| (1.0 + x).powi(2) * x.powi(k));
            let got = r.integrate(|x| x.powi(k));
            assert!((got - exact).abs() < 1e-12, "k={k}");
        }
        assert!(r.weights.iter().all(|&w| w > 0.0));
    }

    #[test]
    fn jacobi_large_order_is_accurate() {
        let r = gauss_jacobi_r2(256).mapped(0.0, 8.0);
        // mapped weights carry (R/2)^3 only after the r^2 rescaling; check
        // int_0^8 r^2 exp(-r^2/2) dr = sqrt(pi/2) * erf-ish closed form
        let got: f64 = r
            .nodes
            .iter()
            .zip(&r.weights)
            .map(|(&x, &w)| w * 16.0 * (-x * x / 2.0).exp())
            .sum();
        let exact = (PI / 2.0).sqrt();
        assert!((got - exact).abs() < 1e-12, "{got} vs {exact}");
    }

    #[test]
    fn hermite_moments() {
        let r = gauss_hermite(20);
        assert!((r.integrate(|_| 1.0) - PI.sqrt()).abs() < 1e-13);
        assert!((r.integrate(|x| x * x) - PI.sqrt() / 2.0).abs() < 1e-13);
        assert!((r.integrate(|x| x.powi(4)) - 3.0 * PI.sqrt() / 4.0).abs() < 1e-12);
    }

    #[test]
    fn sphere_rule_averages() {
        let s = SphereRule::new(8);
        assert!((s.average(|_| 1.0) - 1.0).abs() < 1e-14);
        assert!((s.average(|p| p.z * p.z) - 1.0 / 3.0).abs() < 1e-14);
        assert!(s.average(|p| p.x).abs() < 1e-14);
    }
}
