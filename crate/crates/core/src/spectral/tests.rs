use nalgebra::DMatrix;
use rand::Rng;

use super::*;
use crate::kinetics::{calibrate_c0, inelastic_transform, BathMaxwellian, KernelConstants, RestitutionParams, Velocity, WeightSpec};
use crate::rng::{gaussian_velocity, stream, unit_vector};

pub(super) fn constants() -> KernelConstants {
    let m = BathMaxwellian::standard();
    let probes = [Velocity::new(0.3, 0.0, 0.0), Velocity::new(0.0, 1.5, 0.0), Velocity::new(2.0, 1.0, 0.5)];
    calibrate_c0(&m, &probes).unwrap().constants
}

pub(super) fn grid(n: usize) -> RadialGrid {
    build_grid(n, 8.0, Placement::GaussJacobi, BathMaxwellian::standard()).unwrap()
}

fn ws() -> WeightSpec {
    WeightSpec::new(0.5).unwrap()
}

fn gaussian_nodal(g: &RadialGrid, theta: f64) -> Vec<f64> {
    let m = BathMaxwellian::new(Velocity::ZERO, theta).unwrap();
    g.nodes.iter().map(|&r| m.radial_density(r)).collect()
}

/// Monte Carlo weak form `E[|w - x| phi(w, x, w', x')]` with `w ~ h`, `x ~ F`
/// both centred Gaussians, and uniform scattering directions.
fn weak_form(theta_h: f64, theta_f: f64, alpha: f64, n: usize, phi: impl Fn(Velocity, Velocity, Velocity, Velocity) -> f64) -> (f64, f64) {
    let mut rng = stream(42, 99, 0, 0);
    let mut s = 0.0;
    let mut s2 = 0.0;
    for _ in 0..n {
        let w = gaussian_velocity(&mut rng, Velocity::ZERO, theta_h);
        let x = gaussian_velocity(&mut rng, Velocity::ZERO, theta_f);
        let sigma = unit_vector(&mut rng);
        let (wp, xp) = inelastic_transform(w, x, sigma, alpha).unwrap();
        let val = (w - x).norm() * phi(w, x, wp, xp);
        s += val;
        s2 += val * val;
        let _ = rng.random::<u8>();
    }
    let mean = s / n as f64;
    (mean, ((s2 / n as f64 - mean * mean) / n as f64).sqrt())
}

fn pair(g: &RadialGrid, m: &DMatrix<f64>, psi: &[f64], h: &[f64]) -> f64 {
    let mh = m * nalgebra::DVector::from_column_slice(h);
    (0..g.len()).map(|i| g.weights[i] * psi[i] * mh[i]).sum()
}

#[test]
fn scattering_matches_weak_form() {
    let g = grid(96);
    let l = assemble_l(&g, &constants(), ws()).unwrap();
    let h = gaussian_nodal(&g, 1.6);
    for test in [(|r: f64| (-r * r / 4.0).exp()) as fn(f64) -> f64, |r: f64| r * r] {
        let psi: Vec<f64> = g.nodes.iter().map(|&r| test(r)).collect();
        let lhs = pair(&g, &l.matrix, &psi, &h);
        let (oracle, se) = weak_form(1.6, 1.0, 1.0, 1_000_000, |w, _, wp, _| test(wp.norm()) - test(w.norm()));
        assert!((lhs - oracle).abs() < 5.0 * se + 1e-6, "{lhs} {oracle} {se}");
    }
}

#[test]
fn gain_kernels_match_weak_form() {
    let g = grid(96);
    let alpha = 0.6;
    let theta_f = 0.8;
    let f = RadialProfile::from_nodal(&g, &gaussian_nodal(&g, theta_f)).unwrap();
    let p = assemble_pieces(&g, &constants(), &f, RestitutionParams::new(alpha).unwrap()).unwrap();
    let h = gaussian_nodal(&g, 1.4);
    let test = |r: f64| (-r * r / 5.0).exp() * (1.0 + r);
    let psi: Vec<f64> = g.nodes.iter().map(|&r| test(r)).collect();
    // K^1 follows the h-particle, K^2 the F-particle
    let (o1, se1) = weak_form(1.4, theta_f, alpha, 1_000_000, |_, _, wp, _| test(wp.norm()));
    let (o2, se2) = weak_form(1.4, theta_f, alpha, 1_000_000, |_, _, _, xp| test(xp.norm()));
    let (o3, se3) = weak_form(1.4, theta_f, alpha, 1_000_000, |_, x, _, _| test(x.norm()));
    let k1 = pair(&g, &p.k1, &psi, &h);
    let k2 = pair(&g, &p.k2, &psi, &h);
    let k3 = pair(&g, &p.k3, &psi, &h);
    assert!((k1 - o1).abs() < 5.0 * se1, "K1 {k1} {o1} {se1}");
    assert!((k2 - o2).abs() < 5.0 * se2, "K2 {k2} {o2} {se2}");
    assert!((k3 - o3).abs() < 5.0 * se3, "K3 {k3} {o3} {se3}");
}

#[test]
fn raw_columns_carry_collision_frequency() {
    // before the diagonal correction, the off-diagonal column mass already
    // approximates Sigma up to the missing diagonal cell
    let g = grid(128);
    let c = constants();
    let kbar = reduced_kernel(&g, |r, s, rho| scattering_rho_k(&c, r, s, rho));
    let m = BathMaxwellian::standard();
    for j in [20, 60, 100] {
        let col: f64 = (0..g.len()).map(|i| g.weights[i] * kbar[(i, j)]).sum();
        let exact = crate::kinetics::sigma_bath_closed_form(&m, Velocity::new(g.nodes[j], 0.0, 0.0));
        assert!((col - exact).abs() < 0.05 * exact, "{j} {col} {exact}");
    }
}

#[test]
fn scattering_operator_structure() {
    let g = grid(128);
    let l = assemble_l(&g, &constants(), ws()).unwrap();
    assert!(l.flags.is_empty(), "{:?}", l.flags);
    assert!(l.column_mass_defect() < 1e-12);
    assert!(scattering_zero_mode_residual(&l) < 1e-12);
    // detailed balance: D L D^{-1} symmetric with D = sqrt(W / M)
    let m = g.maxwellian();
    let d: Vec<f64> = (0..g.len()).map(|i| (g.weights[i] / m[i]).sqrt()).collect();
    let s = DMatrix::from_fn(g.len(), g.len(), |i, j| d[i] * l.matrix[(i, j)] / d[j]);
    let asym = (&s - s.transpose()).abs().max() / s.abs().max();
    assert!(asym < 1e-8, "{asym}");
    let ev = s.symmetric_eigen().eigenvalues;
    let mut ev: Vec<f64> = ev.iter().copied().collect();
    ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
    assert!(ev[0].abs() < 1e-10 && ev[1] < -1e-3, "{:?}", &ev[..3]);
}

#[test]
fn elastic_gain_pieces_reduce_to_scattering() {
    let g = grid(64);
    let f = RadialProfile::maxwellian(&g);
    let p = assemble_pieces(&g, &constants(), &f, RestitutionParams::elastic()).unwrap();
    let scale = p.scattering.abs().max();
    // C0 is calibrated, C_alpha analytic: they agree to the calibration accuracy
    assert!((&p.k1 - &p.scattering).abs().max() < 1e-9 * scale);
    assert!((&p.k2 - &p.k1).abs().max() < 1e-12 * scale);
    for (a, b) in p.small_sigma.iter().zip(&p.big_sigma) {
        assert!((a - b).abs() < 1e-12 * b);
    }
}

#[test]
fn generators_conserve_mass_and_elastic_zero_mode() {
    let g = grid(128);
    let c = constants();
    let f = RadialProfile::maxwellian(&g);
    let l1 = assemble_l_alpha(&g, &c, &f, RestitutionParams::elastic(), ws()).unwrap();
    assert!(l1.flags.is_empty(), "{:?}", l1.flags);
    let m = g.maxwellian();
    let lm = l1.apply(&m);
    let res = lm.iter().fold(0.0f64, |a, x| a.max(x.abs())) / l1.matrix.abs().max();
    assert!(res < 1e-12, "{res}");
    let f8 = RadialProfile::from_nodal(&g, &gaussian_nodal(&g, 0.8)).unwrap();
    for op in [
        assemble_t_alpha(&g, &c, &f8, RestitutionParams::new(0.7).unwrap(), ws()).unwrap(),
        assemble_l_alpha(&g, &c, &f8, RestitutionParams::new(0.7).unwrap(), ws()).unwrap(),
    ] {
        assert!(op.column_mass_defect() < 1e-12, "{:?}", op.tag);
    }
}

#[test]
fn rank_piece_is_frequency_times_density() {
    let g = grid(64);
    let f = RadialProfile::from_nodal(&g, &gaussian_nodal(&g, 0.9)).unwrap();
    let p = assemble_pieces(&g, &constants(), &f, RestitutionParams::new(0.9).unwrap()).unwrap();
    let m = g.maxwellian();
    let k3m = &p.k3 * nalgebra::DVector::from_column_slice(&m);
    let bath = BathMaxwellian::standard();
    let fv = f.nodal(&g);
    for i in [5, 30, 50] {
        let sigma = crate::kinetics::sigma_bath_closed_form(&bath, Velocity::new(g.nodes[i], 0.0, 0.0));
        assert!((k3m[i] - fv[i] * sigma).abs() < 1e-6 * fv[i] * sigma, "{i} {}", k3m[i] / (fv[i] * sigma) - 1.0);
    }
}

#[test]
fn splitting_adds_up() {
    let g = grid(64);
    let f = RadialProfile::from_nodal(&g, &gaussian_nodal(&g, 0.9)).unwrap();
    let p = assemble_pieces(&g, &constants(), &f, RestitutionParams::new(0.9).unwrap()).unwrap();
    let (a, b) = p.splitting(&g, ws(), 4.0).unwrap();
    let la = p.l_alpha(&g, ws());
    assert!((&a.matrix + &b.matrix - &la.matrix).abs().max() <= 1e-12 * la.matrix.abs().max());
    for i in 0..g.len() {
        assert_eq!(b.matrix[(i, i)], -(p.big_sigma[i] + p.small_sigma[i]));
    }
    let first = g.first_beyond(4.0);
    for j in 0..first {
        for i in 0..g.len() {
            if i != j {
                assert_eq!(b.matrix[(i, j)], 0.0);
            }
        }
    }
    assert!(p.splitting(&g, ws(), 20.0).is_err());
}

fn elastic(n: usize, r_max: f64, a: f64) -> (RadialGrid, Pieces, WeightSpec) {
    let g = build_grid(n, r_max, Placement::GaussJacobi, BathMaxwellian::standard()).unwrap();
    let f = RadialProfile::maxwellian(&g);
    let p = assemble_pieces(&g, &constants(), &f, RestitutionParams::elastic()).unwrap();
    (g, p, WeightSpec::new(a).unwrap())
}

#[test]
fn expm_matches_symmetric_eigendecomposition() {
    let (g, p, w) = elastic(64, 8.0, 0.5);
    let l = p.l_alpha(&g, w);
    let m = g.maxwellian();
    let d: Vec<f64> = (0..g.len()).map(|i| (g.weights[i] / m[i]).sqrt()).collect();
    let n = g.len();
    let s = DMatrix::from_fn(n, n, |i, j| d[i] * l.matrix[(i, j)] / d[j]);
    let s = (&s + s.transpose()) * 0.5;
    let eig = s.symmetric_eigen();
    let t = 0.7;
    let et = DMatrix::from_diagonal(&eig.eigenvalues.map(|x| (t * x).exp()));
    let recon = &eig.eigenvectors * et * eig.eigenvectors.transpose();
    let recon = DMatrix::from_fn(n, n, |i, j| recon[(i, j)] * d[j] / d[i]);
    let e = expm(&(&l.matrix * t)).unwrap();
    let err = (&e - &recon).abs().max() / recon.abs().max();
    assert!(err < 1e-8, "{err}");
    // scalar sanity
    let one = DMatrix::from_element(1, 1, -3.0);
    assert!((expm(&one).unwrap()[(0, 0)] - (-3.0f64).exp()).abs() < 1e-15);
}

#[test]
fn elastic_report() {
    let (g, p, w) = elastic(96, 8.0, 0.5);
    let l = p.l_alpha(&g, w);
    let rep = spectral_report(&l, 3).unwrap();
    let m = g.maxwellian();
    let zm = &rep.zero_mode;
    assert!(zm.positive && zm.residual < 1e-12);
    assert!((g.mass(&zm.vector) - 1.0).abs() < 1e-12);
    let scale = m.iter().fold(0.0f64, |a, x| a.max(*x));
    assert!(zm.vector.iter().zip(&m).all(|(a, b)| (a - b).abs() < 1e-10 * scale));
    assert!(rep.isotropic_gap > 0.0);
    let ratio = rep.decay.mu_hat / rep.isotropic_gap;
    assert!((0.8..=1.1).contains(&ratio), "{ratio}");
    assert!(rep.decay.max_mass < 1e-10);
    assert!(rep.projection_agreement < 1e-8, "{}", rep.projection_agreement);
    // complex eigenvalues come in conjugate pairs
    for &(re, im) in &rep.eigenvalues {
        if im != 0.0 {
            assert!(rep.eigenvalues.iter().any(|&(r2, i2)| (r2 - re).abs() < 1e-9 && (i2 + im).abs() < 1e-9));
        }
    }
    assert!(rep.flags.is_empty(), "{:?}", rep.flags);
}

#[test]
fn contour_projection_on_known_spectrum() {
    // V diag(0, -1, -2.5) V^{-1}: the projection onto the zero eigenvector
    let v = DMatrix::from_row_slice(3, 3, &[1.0, 0.3, -0.2, 0.5, 1.0, 0.4, 0.2, -0.6, 1.0]);
    let vinv = v.clone().try_inverse().unwrap();
    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&[0.0, -1.0, -2.5]));
    let a = &v * d * &vinv;
    let f = [0.3, -1.0, 2.0];
    let p = contour_projection(&a, &f, 0.5).unwrap();
    let coef = (vinv.row(0) * nalgebra::DVector::from_column_slice(&f))[0];
    for i in 0..3 {
        assert!((p[i] - coef * v[(i, 0)]).abs() < 1e-12);
    }
}

#[test]
fn coordinate_margin_is_loss_minus_beta() {
    let (g, p, w) = elastic(64, 10.0, 2.0);
    let bs = beta_star(&g, &p);
    let (_, b) = p.splitting(&g, w, 5.0).unwrap();
    let rep = dissipativity_check(&b, 5.0, bs, 0).unwrap();
    let direct = (0..g.len())
        .map(|j| p.big_sigma[j] + p.small_sigma[j] - bs * WeightSpec::bracket(g.nodes[j]))
        .fold(f64::INFINITY, f64::min);
    assert!((rep.coordinate_margin - direct).abs() < 1e-12);
    assert!(rep.certificate <= rep.margin);
}

#[test]
fn cut_calibration_passes_for_elastic() {
    let (g, p, w) = elastic(96, 10.0, 2.0);
    let rep = calibrate_cut(&p, &g, w, 2.0, 0.5, 0).unwrap();
    assert!(rep.passed && rep.margin > 0.0 && rep.r_cut < 9.0);
    // an undersized cut fails
    let (_, b) = p.splitting(&g, w, 2.0).unwrap();
    assert!(!dissipativity_check(&b, 2.0, rep.beta_star, 0).unwrap().passed);
}

#[test]
fn drift_of_elastic_row_is_zero() {
    let (g, p, w) = elastic(48, 8.0, 0.5);
    let l1 = p.l_alpha(&g, w);
    let f = RadialProfile::from_nodal(&g, &gaussian_nodal(&g, 0.95)).unwrap();
    let la = assemble_l_alpha(&g, &constants(), &f, RestitutionParams::new(0.9).unwrap(), w).unwrap();
    let t = alpha_drift(&[la, l1]).unwrap();
    let row = t.rows.iter().find(|r| r.alpha == 1.0).unwrap();
    assert_eq!(row.operator_drift, 0.0);
    assert_eq!(row.resolvent_drift, 0.0);
    assert_eq!(row.zero_mode_drift, 0.0);
    assert!(t.rows[0].operator_drift > 0.0);
    assert!(alpha_drift(&t.rows.iter().map(|_| p.l(&g, w)).collect::<Vec<_>>()).is_ok());
}

#[test]
fn export_round_trip() {
    let (g, p, w) = elastic(16 + 8, 8.0, 0.5);
    let l = p.l(&g, w);
    let dir = tempfile::tempdir().unwrap();
    let stem = dir.path().join("scattering");
    let (bin, _) = export_matrix(&l, &stem).unwrap();
    let back = import_matrix(&stem).unwrap();
    assert_eq!(back.matrix, l.matrix);
    assert_eq!(back.grid, l.grid);
    let mut bytes = std::fs::read(&bin).unwrap();
    bytes[3] ^= 1;
    std::fs::write(&bin, bytes).unwrap();
    assert!(import_matrix(&stem).is_err());
}
