use fama_core::channel::*;
use fama_core::linalg::psd_factor;
use fama_core::rng::substream;
use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

fn second_moment(draws: impl Iterator<Item = Vec<Complex64>>, k: usize) -> DMatrix<Complex64> {
    let mut c = DMatrix::<Complex64>::zeros(k, k);
    let mut n = 0.0;
    for h in draws {
        for i in 0..k {
            for j in 0..k {
                c[(i, j)] += h[i] * h[j].conj();
            }
        }
        n += 1.0;
    }
    c / Complex64::new(n, 0.0)
}

fn rel_frob(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
    (a - b).norm() / b.norm()
}

fn real_to_complex(m: &DMatrix<f64>) -> DMatrix<Complex64> {
    m.map(|v| Complex64::new(v, 0.0))
}

#[test]
fn rich_channel_covariance_matches_correlation() {
    let g = FasGeometry::linear(16, 2.0).unwrap();
    let r = correlation_rich(&g);
    let f = psd_factor(&r).unwrap();
    assert!((&f.factor * f.factor.transpose() - &r).norm() < 1e-8 * r.norm());
    let l: Vec<f64> = f.factor.transpose().iter().copied().collect();
    let omega = 1.7;
    let mut rng = substream(11, "rich", 0);
    let c = second_moment((0..100_000).map(|_| sample_rich_channel(&l, omega, &mut rng)), 16);
    let err = rel_frob(&c, &real_to_complex(&(r * omega)));
    assert!(err < 0.05, "relative error {err}");
}

#[test]
fn identity_factor_gives_unit_port_power() {
    let k = 4;
    let mut l = vec![0.0; k * k];
    for i in 0..k {
        l[i * k + i] = 1.0;
    }
    let mut rng = substream(2, "unit", 0);
    let mut power = vec![0.0; k];
    let n = 100_000;
    for _ in 0..n {
        for (p, h) in power.iter_mut().zip(sample_rich_channel(&l, 1.0, &mut rng)) {
            *p += h.norm_sqr() / n as f64;
        }
    }
    assert!(power.iter().all(|p| (p - 1.0).abs() < 0.03), "{power:?}");
}

#[test]
fn finite_channel_covariance_and_rank() {
    let g = FasGeometry::linear(16, 2.0).unwrap();
    let spec = FiniteScatterSpec {
        rician_factor: 1.0,
        paths: 3,
        gains: Some(vec![1.0, 0.5, 2.0]),
        los_phase: Some(0.3),
        los_angles: Some((0.4, 0.2)),
        path_angles: Some(vec![(1.0, 0.5), (2.0, 1.5), (4.0, 2.5)]),
    };
    let mut rng = substream(5, "finite", 0);
    let cfg = spec.realize(&mut rng);
    let closed = finite_covariance(&g, &cfg);
    let c = second_moment((0..100_000).map(|_| sample_finite_channel(&g, &cfg, &mut rng)), 16);
    let err = rel_frob(&c, &closed);
    assert!(err < 0.05, "relative error {err}");

    let eig = SymmetricEigen::new(closed).eigenvalues;
    let lmax = eig.max();
    let rank = eig.iter().filter(|l| **l > 1e-10 * lmax).count();
    assert!(rank <= 1 + cfg.paths.len(), "rank {rank}");
}

#[test]
fn planar_finite_rank_bound() {
    let g = FasGeometry::planar(4, 4, 2.0, 2.0).unwrap();
    let spec = FiniteScatterSpec {
        rician_factor: 3.0,
        paths: 2,
        gains: None,
        los_phase: None,
        los_angles: None,
        path_angles: None,
    };
    let cfg = spec.realize(&mut substream(1, "p", 0));
    let eig = SymmetricEigen::new(finite_covariance(&g, &cfg)).eigenvalues;
    let lmax = eig.max();
    assert!(eig.iter().filter(|l| **l > 1e-10 * lmax).count() <= 3);
}

#[test]
fn planar_correlation_depends_on_distance_only() {
    let g = FasGeometry::planar(3, 4, 1.0, 1.5).unwrap();
    let r = correlation_rich(&g);
    for a in 0..12 {
        for b in 0..12 {
            for c in 0..12 {
                for d in 0..12 {
                    if (g.distance(a, b) - g.distance(c, d)).abs() < 1e-14 {
                        assert!((r[(a, b)] - r[(c, d)]).abs() < 1e-12);
                    }
                }
            }
        }
    }
}

#[test]
fn steering_ignores_global_offset() {
    // The linear layout starts at 0; shifting by a constant changes nothing
    // since phases are taken relative to the first port.
    let g = FasGeometry::planar(3, 3, 1.0, 2.0).unwrap();
    let a = steering_vector(&g, 0.8, 0.3);
    let shifted: Vec<[f64; 2]> = g.positions().iter().map(|p| [p[0] + 3.7, p[1] - 1.1]).collect();
    let (ux, uy) = (0.8f64.sin() * 0.3f64.cos(), 0.8f64.cos());
    for (k, p) in shifted.iter().enumerate() {
        let s = (p[0] - shifted[0][0]) * ux + (p[1] - shifted[0][1]) * uy;
        let b = Complex64::from_polar(1.0, -std::f64::consts::TAU * s);
        assert!((a[k] - b).norm() < 1e-12);
    }
}

#[test]
fn interference_covariance() {
    let sc = Scenario::rich(Layout::Linear { ports: 8, aperture: 1.5 }, 4, 10.0);
    let sim = Simulator::new(sc.clone()).unwrap();
    let mut rng = substream(8, "interf", 0);
    let c = second_moment((0..100_000).map(|_| sim.sample(&mut rng).interference), 8);
    let expected = real_to_complex(&(sim.correlation() * ((sc.users - 1) as f64 * sc.symbol_power * sc.large_scale_gain)));
    let err = rel_frob(&c, &expected);
    assert!(err < 0.05, "relative error {err}");
}

#[test]
fn signal_identity_holds_for_every_snapshot() {
    let sim = Simulator::new(Scenario::rich(Layout::Linear { ports: 16, aperture: 2.0 }, 5, 10.0)).unwrap();
    let mut rng = substream(4, "identity", 0);
    for _ in 0..10_000 {
        let s = sim.sample(&mut rng);
        assert!(s.identity_residual() < 1e-12);
        assert_eq!(s.interferer_symbols.len(), 4);
    }
}

#[test]
fn qpsk_mean_is_near_zero() {
    let mut rng = substream(6, "qpsk", 0);
    let p = 2.0;
    let n = 100_000;
    let mut mean = Complex64::new(0.0, 0.0);
    for _ in 0..n {
        let s = qpsk_symbol(p, &mut rng);
        assert!((s.norm_sqr() - p).abs() < 1e-14);
        mean += s / n as f64;
    }
    assert!(mean.norm() < 0.02 * p.sqrt());
}

#[test]
fn negative_eigenvalue_injection_is_reported() {
    let g = FasGeometry::linear(16, 2.0).unwrap();
    let r = correlation_rich(&g);
    let eig = SymmetricEigen::new(r.clone());
    let mut vals = eig.eigenvalues.clone();
    let i = vals.imin();
    vals[i] = -1e-6;
    let bent = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
    let bent = (&bent + bent.transpose()) * 0.5;
    let f = psd_factor(&bent).unwrap();
    assert!(f.clip_warnings >= 1);
    assert!(f.clip_rel_error > 0.0);
}
