//! Spatial correlation, steering vectors and channel draws.

use std::f64::consts::{PI, TAU};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::geometry::FasGeometry;
use crate::special::{bessel_j0, spherical_j0};

/// Correlation matrix for rich scattering.
///
/// Linear apertures use `J₀(2π d)`, planar apertures `sin(2π d)/(2π d)`,
/// with `d` the port separation in wavelengths.
pub fn correlation_rich(geometry: &FasGeometry) -> DMatrix<f64> {
    let k = geometry.ports();
    let planar = geometry.is_planar();
    let mut r = DMatrix::zeros(k, k);
    for a in 0..k {
        r[(a, a)] = 1.0;
        for b in 0..a {
            let x = TAU * geometry.distance(a, b);
            let v = if planar { spherical_j0(x) } else { bessel_j0(x) };
            r[(a, b)] = v;
            r[(b, a)] = v;
        }
    }
    r
}

/// Unit-modulus array response for azimuth `theta` and elevation `phi`.
///
/// The phase of port `k` is `−2π S_k` with `S_k` the excess path length
/// relative to the first port, so a global shift of the aperture leaves
/// the vector unchanged.
pub fn steering_vector(geometry: &FasGeometry, theta: f64, phi: f64) -> Vec<Complex64> {
    let p = geometry.positions();
    let (ux, uy) = (theta.sin() * phi.cos(), theta.cos());
    let reference = p[0];
    p.iter()
        .map(|q| {
            let s = (q[0] - reference[0]) * ux + (q[1] - reference[1]) * uy;
            Complex64::from_polar(1.0, -TAU * s)
        })
        .collect()
}

/// Scattering path with arrival angles and mean power.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub azimuth: f64,
    pub elevation: f64,
    pub gain: f64,
}

/// Fully realized Rician finite-scattering channel law.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiniteScatterConfig {
    pub rician_factor: f64,
    pub los_phase: f64,
    pub los_azimuth: f64,
    pub los_elevation: f64,
    pub paths: Vec<Path>,
}

/// Finite-scattering parameters where unspecified angles and phases are
/// drawn afresh for every channel realization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiniteScatterSpec {
    #[serde(default = "one")]
    pub rician_factor: f64,
    pub paths: usize,
    /// Per-path mean powers; all ones when absent.
    #[serde(default)]
    pub gains: Option<Vec<f64>>,
    #[serde(default)]
    pub los_phase: Option<f64>,
    /// `(azimuth, elevation)` of the line-of-sight component.
    #[serde(default)]
    pub los_angles: Option<(f64, f64)>,
    /// `(azimuth, elevation)` per scattered path.
    #[serde(default)]
    pub path_angles: Option<Vec<(f64, f64)>>,
}

fn one() -> f64 {
    1.0
}

impl FiniteScatterSpec {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.rician_factor >= 0.0) {
            return Err(format!("rician_factor must be >= 0, got {}", self.rician_factor));
        }
        if self.paths == 0 {
            return Err("paths must be >= 1".into());
        }
        if let Some(g) = &self.gains {
            if g.len() != self.paths {
                return Err(format!("gains has {} entries for {} paths", g.len(), self.paths));
            }
            if g.iter().any(|b| !(*b > 0.0)) {
                return Err("gains must be > 0".into());
            }
        }
        if let Some(a) = &self.path_angles {
            if a.len() != self.paths {
                return Err(format!("path_angles has {} entries for {} paths", a.len(), self.paths));
            }
        }
        Ok(())
    }

    fn angles<R: Rng + ?Sized>(rng: &mut R) -> (f64, f64) {
        (rng.random::<f64>() * TAU, rng.random::<f64>() * PI)
    }

    pub fn realize<R: Rng + ?Sized>(&self, rng: &mut R) -> FiniteScatterConfig {
        let los_phase = self.los_phase.unwrap_or_else(|| rng.random::<f64>() * TAU);
        let (los_azimuth, los_elevation) = self.los_angles.unwrap_or_else(|| Self::angles(rng));
        let paths = (0..self.paths)
            .map(|l| {
                let (azimuth, elevation) = match &self.path_angles {
                    Some(a) => a[l],
                    None => Self::angles(rng),
                };
                let gain = self.gains.as_ref().map_or(1.0, |g| g[l]);
                Path {
                    azimuth,
                    elevation,
                    gain,
                }
            })
            .collect();
        FiniteScatterConfig {
            rician_factor: self.rician_factor,
            los_phase,
            los_azimuth,
            los_elevation,
            paths,
        }
    }
}

/// `CN(0, var)` draw.
pub fn complex_normal<R: Rng + ?Sized>(var: f64, rng: &mut R) -> Complex64 {
    let s = (0.5 * var).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}

/// `h = √Ω · L z` with `z ~ CN(0, I)`; `factor` is row-major `K × K`.
pub fn sample_rich_channel<R: Rng + ?Sized>(factor: &[f64], omega: f64, rng: &mut R) -> Vec<Complex64> {
    let k = (factor.len() as f64).sqrt() as usize;
    debug_assert_eq!(k * k, factor.len());
    let z: Vec<Complex64> = (0..k).map(|_| complex_normal(1.0, rng)).collect();
    let scale = omega.sqrt();
    (0..k)
        .map(|a| {
            let row = &factor[a * k..(a + 1) * k];
            let mut acc = Complex64::new(0.0, 0.0);
            for (l, zb) in row.iter().zip(&z) {
                acc += zb * *l;
            }
            acc * scale
        })
        .collect()
}

pub fn sample_finite_channel<R: Rng + ?Sized>(
    geometry: &FasGeometry,
    cfg: &FiniteScatterConfig,
    rng: &mut R,
) -> Vec<Complex64> {
    let kr = cfg.rician_factor;
    let los = (kr / (kr + 1.0)).sqrt();
    let nlos = (1.0 / (kr + 1.0)).sqrt() / (cfg.paths.len() as f64).sqrt();
    let mut h: Vec<Complex64> = steering_vector(geometry, cfg.los_azimuth, cfg.los_elevation)
        .into_iter()
        .map(|a| a * Complex64::from_polar(los, cfg.los_phase))
        .collect();
    for path in &cfg.paths {
        let kappa = complex_normal(path.gain, rng) * nlos;
        for (hk, a) in h.iter_mut().zip(steering_vector(geometry, path.azimuth, path.elevation)) {
            *hk += kappa * a;
        }
    }
    h
}

/// Second-moment matrix `E[h hᴴ]` of the finite-scattering law.
pub fn finite_covariance(geometry: &FasGeometry, cfg: &FiniteScatterConfig) -> DMatrix<Complex64> {
    let k = geometry.ports();
    let kr = cfg.rician_factor;
    let mut out = DMatrix::zeros(k, k);
    let mut add = |a: &[Complex64], w: f64| {
        for i in 0..k {
            for j in 0..k {
                out[(i, j)] += a[i] * a[j].conj() * w;
            }
        }
    };
    add(
        &steering_vector(geometry, cfg.los_azimuth, cfg.los_elevation),
        kr / (kr + 1.0),
    );
    let np = cfg.paths.len() as f64;
    for p in &cfg.paths {
        add(
            &steering_vector(geometry, p.azimuth, p.elevation),
            p.gain / ((kr + 1.0) * np),
        );
    }
    out
}
