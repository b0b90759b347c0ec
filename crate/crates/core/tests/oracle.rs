use fama_core::channel::*;
use fama_core::encoding::{coord, Field, Mask, PortMajorSeries};
use fama_core::oracle::GaussianOracle;
use fama_core::rng::substream;
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;

fn qpsk<R: Rng>(rng: &mut R) -> Complex64 {
    qpsk_symbol(1.0, rng)
}

#[test]
fn joint_covariance_matches_simulation() {
    let sc = Scenario::rich(Layout::Linear { ports: 4, aperture: 1.0 }, 3, 10.0);
    let sim = Simulator::new(sc).unwrap();
    let oracle = GaussianOracle::for_simulator(&sim).unwrap();
    let q = 2;
    let s_fixed = qpsk_constellation(1.0)[q];
    let d = 24;
    let mut acc = DMatrix::<f64>::zeros(d, d);
    let mut rng = substream(1, "cov", 0);
    let n = 100_000;
    for _ in 0..n {
        let snap = sim.sample(&mut rng);
        let r: Vec<Complex64> = (0..4)
            .map(|k| snap.h[k] * s_fixed + snap.interference[k] + snap.noise[k])
            .collect();
        let x = nalgebra::DVector::from_vec(
            PortMajorSeries::from_fields(&r, &snap.h, &snap.interference).into_values(),
        );
        acc += &x * x.transpose();
    }
    acc /= n as f64;
    let sigma = oracle.covariance(q);
    let err = (&acc - sigma).norm() / sigma.norm();
    assert!(err < 0.05, "relative error {err}");
}

/// Importance-sampled posterior of the interference at both ports given
/// `(r, h)` at port 0, drawing symbols and interferer channels from their
/// priors and weighting by the noise likelihood of `r`.
#[test]
fn mixture_posterior_matches_brute_force() {
    let aperture = 0.3;
    let rho = fama_core::special::bessel_j0(std::f64::consts::TAU * aperture);
    let noise_var = 0.1;
    let h1 = Complex64::new(0.8, 0.3);
    let r1 = Complex64::new(1.5, -0.4);

    let mut rng = substream(42, "brute", 0);
    let (mut sw, mut i1, mut i2) = (0.0, Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
    for _ in 0..1_000_000 {
        let s = qpsk(&mut rng);
        let z1 = complex_normal(1.0, &mut rng);
        let z2 = complex_normal(1.0, &mut rng);
        let s_int = qpsk(&mut rng);
        let g1 = z1;
        let g2 = z1 * rho + z2 * (1.0 - rho * rho).sqrt();
        let (a1, a2) = (g1 * s_int, g2 * s_int);
        let w = (-(r1 - h1 * s - a1).norm_sqr() / noise_var).exp();
        sw += w;
        i1 += a1 * w;
        i2 += a2 * w;
    }
    let (i1, i2) = (i1 / sw, i2 / sw);

    let sc = Scenario::rich(Layout::Linear { ports: 2, aperture }, 2, 10.0);
    let sim = Simulator::new(sc).unwrap();
    assert!((sim.scenario().noise_var() - noise_var).abs() < 1e-15);
    let oracle = GaussianOracle::for_simulator(&sim).unwrap();
    let mut values = vec![0.0; 12];
    for (f, v) in [(Field::R, r1), (Field::H, h1)] {
        values[coord(2, 0, 0, f)] = v.re;
        values[coord(2, 1, 0, f)] = v.im;
    }
    let mask = Mask::from_ports(2, vec![0]).unwrap();
    let post = oracle.posterior(&mask, &values).unwrap();
    let mean = PortMajorSeries::from_flat(post.mean()).unwrap();
    let o1 = mean.get(0, Field::I);
    let o2 = mean.get(1, Field::I);

    assert!((o1.re - i1.re).abs() < 0.02 * i1.re.abs(), "Re I1 {} vs {}", o1.re, i1.re);
    let scale = i1.norm();
    assert!((o1 - i1).norm() < 0.02 * scale, "I1 {o1} vs {i1}");
    assert!((o2 - i2).norm() < 0.02 * scale, "I2 {o2} vs {i2}");
    let h2 = mean.get(1, Field::H);
    assert!((h2 - h1 * rho).norm() < 1e-9);
}

fn nmse(est: &[f64], truth: &[f64], ports: usize, field: Field) -> (f64, f64) {
    let mut num = 0.0;
    let mut den = 0.0;
    for p in 0..ports {
        for row in 0..2 {
            let i = coord(ports, row, p, field);
            num += (est[i] - truth[i]).powi(2);
            den += truth[i].powi(2);
        }
    }
    (num, den)
}

#[test]
fn oracle_beats_zero_predictor_for_h() {
    let k = 8;
    let sim = Simulator::new(Scenario::rich(Layout::Linear { ports: k, aperture: 2.0 }, 3, 10.0)).unwrap();
    let oracle = GaussianOracle::for_simulator(&sim).unwrap();
    for m in [1, 3] {
        let mask = Mask::from_ports(k, fama_core::encoding::equally_spaced_ports(k, m)).unwrap();
        let (mut num, mut den) = (0.0, 0.0);
        let mut rng = substream(3, "h", m as u64);
        for _ in 0..1000 {
            let x = PortMajorSeries::encode(&sim.sample(&mut rng)).into_values();
            let (a, b) = nmse(&oracle.posterior(&mask, &x).unwrap().mean(), &x, k, Field::H);
            num += a;
            den += b;
        }
        assert!(num / den < 1.0, "M={m}: {}", num / den);
    }
}

#[test]
fn full_observation_concentrates_interference() {
    let k = 4;
    let sim = Simulator::new(Scenario::rich(Layout::Linear { ports: k, aperture: 1.0 }, 2, 30.0)).unwrap();
    let oracle = GaussianOracle::for_simulator(&sim).unwrap();
    let mask = Mask::from_ports(k, (0..k).collect()).unwrap();
    let (mut num, mut den) = (0.0, 0.0);
    let mut rng = substream(9, "full", 0);
    for _ in 0..500 {
        let x = PortMajorSeries::encode(&sim.sample(&mut rng)).into_values();
        let (a, b) = nmse(&oracle.posterior(&mask, &x).unwrap().mean(), &x, k, Field::I);
        num += a;
        den += b;
    }
    assert!(num / den < 0.5, "NMSE(I) {}", num / den);
}

#[test]
fn finite_scattering_is_rejected() {
    let mut sc = Scenario::rich(Layout::Linear { ports: 4, aperture: 1.0 }, 2, 10.0);
    sc.channel = ChannelModel::Finite(FiniteScatterSpec {
        rician_factor: 1.0,
        paths: 2,
        gains: None,
        los_phase: None,
        los_angles: None,
        path_angles: None,
    });
    let sim = Simulator::new(sc).unwrap();
    assert!(GaussianOracle::for_simulator(&sim).is_err());
}

#[test]
fn samples_keep_observed_values() {
    let k = 6;
    let sim = Simulator::new(Scenario::rich(Layout::Linear { ports: k, aperture: 1.5 }, 3, 10.0)).unwrap();
    let oracle = GaussianOracle::for_simulator(&sim).unwrap();
    let mask = Mask::from_ports(k, vec![0, 3]).unwrap();
    let mut rng = substream(5, "samp", 0);
    let x = PortMajorSeries::encode(&sim.sample(&mut rng)).into_values();
    let post = oracle.posterior(&mask, &x).unwrap();
    let mean = post.mean();
    let n = 4000;
    let mut avg = vec![0.0; 6 * k];
    for _ in 0..n {
        let s = post.sample(&mut rng);
        for i in mask.observed_indices() {
            assert_eq!(s[i], x[i]);
        }
        for (a, v) in avg.iter_mut().zip(&s) {
            *a += v / n as f64;
        }
    }
    let scale = mean.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
    let err = avg.iter().zip(&mean).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    assert!(err < 0.1 * scale, "sample mean drift {err}");
}
