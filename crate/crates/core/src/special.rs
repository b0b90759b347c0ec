//! Scalar special functions used across the simulator and the flows.

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_4, PI};

/// Arguments at or below this magnitude use the power series for `J₀`.
const J0_SERIES_LIMIT: f64 = 12.0;

/// Zeroth-order Bessel function of the first kind.
///
/// Power series for `|x| ≤ 12`, Hankel's asymptotic expansion beyond.
pub fn bessel_j0(x: f64) -> f64 {
    let x = x.abs();
    if x <= J0_SERIES_LIMIT {
        let q = 0.25 * x * x;
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..200 {
            term *= -q / (k as f64 * k as f64);
            sum += term;
            if term.abs() < 1e-17 * sum.abs().max(1e-300) && k > 2 {
                break;
            }
        }
        sum
    } else {
        // a_k = a_{k-1} · (−(2k−1)²) / (8k), a_0 = 1
        let mut p = 0.0;
        let mut q = 0.0;
        let mut a = 1.0;
        let mut zpow = 1.0;
        let mut last = f64::INFINITY;
        for k in 0..40 {
            if k > 0 {
                let m = (2 * k - 1) as f64;
                a *= -(m * m) / (8.0 * k as f64);
                zpow *= x;
            }
            let t = a / zpow;
            if t.abs() > last {
                break;
            }
            last = t.abs();
            // even k feed the cosine series, odd k the sine series, with
            // alternating signs (−1)^{⌊k/2⌋}
            let sign = if (k / 2) % 2 == 0 { 1.0 } else { -1.0 };
            if k % 2 == 0 {
                p += sign * t;
            } else {
                q += sign * t;
            }
        }
        let chi = x - FRAC_PI_4;
        (2.0 / (PI * x)).sqrt() * (p * chi.cos() - q * chi.sin())
    }
}

/// Spherical Bessel function of order zero, `sin(x)/x`.
pub fn spherical_j0(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        let x2 = x * x;
        1.0 - x2 / 6.0 + x2 * x2 / 120.0
    } else {
        x.sin() / x
    }
}

/// Standard normal CDF.
pub fn norm_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * FRAC_1_SQRT_2)
}

/// `log φ(z)` for the standard normal density.
pub fn norm_logpdf(z: f64) -> f64 {
    -0.5 * z * z - 0.5 * (2.0 * PI).ln()
}

/// Gaussian tail probability `Q(x) = ½ erfc(x/√2)`.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x * FRAC_1_SQRT_2)
}

/// Binary entropy in bits with `H(0) = H(1) = 0`.
pub fn binary_entropy(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        return 0.0;
    }
    -(p * p.log2() + (1.0 - p) * (1.0 - p).log2())
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

pub fn logit(u: f64) -> f64 {
    u.ln() - (-u).ln_1p()
}

/// Inverse of `softplus`, used to place initial parameters.
pub fn softplus_inv(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

/// `log Σ exp(v)` over a slice; `-∞` for an empty slice.
pub fn logsumexp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Nodes and weights of `n`-point Gauss–Hermite quadrature for the standard
/// normal weight, so `Σ wᵢ f(xᵢ) ≈ E[f(Z)]`. Built from the Jacobi matrix.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    if n == 0 {
        return (Vec::new(), Vec::new());
    }
    let jacobi = nalgebra::DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64).sqrt()
        } else {
            0.0
        }
    });
    let eig = jacobi.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| (eig.eigenvalues[k], eig.eigenvectors[(0, k)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent route: the integral form `J₀(x) = (1/π)∫₀^π cos(x sin τ) dτ`
    /// evaluated with a composite Simpson rule.
    fn j0_integral(x: f64) -> f64 {
        let n = 20_000;
        let h = PI / n as f64;
        let f = |t: f64| (x * t.sin()).cos();
        let mut s = f(0.0) + f(PI);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(i as f64 * h);
        }
        s * h / 3.0 / PI
    }

    #[test]
    fn j0_matches_integral_representation() {
        for &x in &[0.0, 0.3, 1.0, 2.404825557695773, PI, 7.5, 11.9, 12.1, 20.0, 47.3, 125.0] {
            let a = bessel_j0(x);
            let b = j0_integral(x);
            assert!((a - b).abs() < 1e-10, "x={x}: {a} vs {b}");
        }
    }

    #[test]
    fn j0_is_continuous_at_the_switch() {
        let below = bessel_j0(J0_SERIES_LIMIT);
        let above = bessel_j0(J0_SERIES_LIMIT + 1e-12);
        assert!((below - above).abs() < 1e-11);
    }

    #[test]
    fn j0_reference_values() {
        assert_eq!(bessel_j0(0.0), 1.0);
        assert!(bessel_j0(2.404825557695773).abs() < 1e-14);
        assert!(bessel_j0(-1.5) == bessel_j0(1.5));
    }

    #[test]
    fn spherical_j0_branches_agree() {
        assert_eq!(spherical_j0(0.0), 1.0);
        assert!(spherical_j0(PI).abs() < 1e-16);
        let x = 0.99e-4;
        assert!((spherical_j0(x) - x.sin() / x).abs() < 1e-15);
    }

    #[test]
    fn entropy_and_q() {
        assert_eq!(binary_entropy(0.0), 0.0);
        assert!((binary_entropy(0.5) - 1.0).abs() < 1e-15);
        assert!((q_function(0.0) - 0.5).abs() < 1e-16);
        assert!((norm_cdf(1.96) - 0.9750021048517795).abs() < 1e-12);
    }

    #[test]
    fn softplus_round_trip() {
        for y in [1e-3, 0.5, 1.0, 4.0, 30.0] {
            assert!((softplus(softplus_inv(y)) - y).abs() < 1e-12 * y.max(1.0));
        }
        assert!((logit(sigmoid(2.5)) - 2.5).abs() < 1e-12);
    }

    #[test]
    fn gauss_hermite_integrates_normal_moments() {
        let (x, w) = gauss_hermite(12);
        let m = |p: i32| x.iter().zip(&w).map(|(x, w)| w * x.powi(p)).sum::<f64>();
        assert!((m(0) - 1.0).abs() < 1e-13);
        assert!(m(1).abs() < 1e-13);
        assert!((m(2) - 1.0).abs() < 1e-12);
        assert!((m(4) - 3.0).abs() < 1e-11);
        assert!((m(8) - 105.0).abs() < 1e-9);
        let c: f64 = x.iter().zip(&w).map(|(x, w)| w * x.cos()).sum();
        assert!((c - (-0.5f64).exp()).abs() < 1e-10);
    }
}
