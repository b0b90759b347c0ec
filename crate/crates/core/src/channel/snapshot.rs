//! QPSK symbols and full multiuser snapshots.

use std::f64::consts::FRAC_1_SQRT_2;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::fading::{complex_normal, correlation_rich, sample_finite_channel, sample_rich_channel, FiniteScatterSpec};
use super::geometry::{FasGeometry, GeometryError, Layout};
use crate::linalg::{psd_factor, LinalgError};

/// Gray-mapped QPSK point for bits `(b0, b1)` at power `p_s`.
pub fn qpsk_from_bits(b0: bool, b1: bool, p_s: f64) -> Complex64 {
    let re = if b0 { -1.0 } else { 1.0 };
    let im = if b1 { -1.0 } else { 1.0 };
    Complex64::new(re, im) * (FRAC_1_SQRT_2 * p_s.sqrt())
}

/// Hard decision back to Gray bits.
pub fn qpsk_bits(s: Complex64) -> (bool, bool) {
    (s.re < 0.0, s.im < 0.0)
}

pub fn qpsk_symbol<R: Rng + ?Sized>(p_s: f64, rng: &mut R) -> Complex64 {
    qpsk_from_bits(rng.random(), rng.random(), p_s)
}

/// The four QPSK hypotheses at power `p_s`.
pub fn qpsk_constellation(p_s: f64) -> [Complex64; 4] {
    [
        qpsk_from_bits(false, false, p_s),
        qpsk_from_bits(false, true, p_s),
        qpsk_from_bits(true, false, p_s),
        qpsk_from_bits(true, true, p_s),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ChannelModel {
    Rich,
    Finite(FiniteScatterSpec),
}

/// Everything that defines the law of a snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub geometry: Layout,
    pub channel: ChannelModel,
    pub users: usize,
    pub symbol_power: f64,
    pub snr_db: f64,
    pub large_scale_gain: f64,
}

impl Scenario {
    pub fn rich(geometry: Layout, users: usize, snr_db: f64) -> Self {
        Scenario {
            geometry,
            channel: ChannelModel::Rich,
            users,
            symbol_power: 1.0,
            snr_db,
            large_scale_gain: 1.0,
        }
    }

    /// Noise variance from the per-port desired-signal SNR.
    pub fn noise_var(&self) -> f64 {
        self.large_scale_gain * self.symbol_power / 10f64.powf(self.snr_db / 10.0)
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

/// One symbol interval at the desired user's receiver.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub r: Vec<Complex64>,
    pub h: Vec<Complex64>,
    pub interference: Vec<Complex64>,
    pub noise: Vec<Complex64>,
    pub desired_symbol: Complex64,
    pub interferer_symbols: Vec<Complex64>,
    pub noise_var: f64,
}

impl Snapshot {
    pub fn ports(&self) -> usize {
        self.h.len()
    }

    /// Largest `|r − h s − I − η|` over ports.
    pub fn identity_residual(&self) -> f64 {
        self.r
            .iter()
            .zip(&self.h)
            .zip(&self.interference)
            .zip(&self.noise)
            .map(|(((r, h), i), n)| (r - h * self.desired_symbol - i - n).norm())
            .fold(0.0, f64::max)
    }
}

/// Snapshot sampler with the correlation factor precomputed.
#[derive(Clone, Debug)]
pub struct Simulator {
    scenario: Scenario,
    geometry: FasGeometry,
    correlation: DMatrix<f64>,
    factor: Vec<f64>,
    clip_rel_error: f64,
    clip_warnings: usize,
}

impl Simulator {
    pub fn new(scenario: Scenario) -> Result<Self, SimError> {
        let geometry = FasGeometry::new(scenario.geometry)?;
        if scenario.users == 0 {
            return Err(SimError::Invalid("users must be >= 1".into()));
        }
        if !(scenario.symbol_power > 0.0) {
            return Err(SimError::Invalid("symbol_power must be > 0".into()));
        }
        if !(scenario.large_scale_gain >= 0.0) || scenario.snr_db.is_nan() || scenario.snr_db == f64::NEG_INFINITY {
            return Err(SimError::Invalid("large_scale_gain must be >= 0 and snr_db > -inf".into()));
        }
        if let ChannelModel::Finite(spec) = &scenario.channel {
            spec.validate().map_err(SimError::Invalid)?;
        }
        let raw = correlation_rich(&geometry);
        let f = psd_factor(&raw)?;
        let k = geometry.ports();
        let mut factor = Vec::with_capacity(k * k);
        for a in 0..k {
            for b in 0..k {
                factor.push(f.factor[(a, b)]);
            }
        }
        Ok(Simulator {
            scenario,
            geometry,
            correlation: f.clipped,
            factor,
            clip_rel_error: f.clip_rel_error,
            clip_warnings: f.clip_warnings,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn geometry(&self) -> &FasGeometry {
        &self.geometry
    }

    /// Rich-scattering correlation after eigenvalue clipping.
    pub fn correlation(&self) -> &DMatrix<f64> {
        &self.correlation
    }

    /// Row-major square-root factor of [`Self::correlation`].
    pub fn factor(&self) -> &[f64] {
        &self.factor
    }

    pub fn clip_rel_error(&self) -> f64 {
        self.clip_rel_error
    }

    pub fn clip_warnings(&self) -> usize {
        self.clip_warnings
    }

    pub fn ports(&self) -> usize {
        self.geometry.ports()
    }

    pub fn channel<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Complex64> {
        match &self.scenario.channel {
            ChannelModel::Rich => sample_rich_channel(&self.factor, self.scenario.large_scale_gain, rng),
            ChannelModel::Finite(spec) => {
                let cfg = spec.realize(rng);
                let g = self.scenario.large_scale_gain.sqrt();
                sample_finite_channel(&self.geometry, &cfg, rng)
                    .into_iter()
                    .map(|h| h * g)
                    .collect()
            }
        }
    }

    /// Draw a snapshot. Interferers use the same channel family as the
    /// desired link.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Snapshot {
        let sc = &self.scenario;
        let k = self.ports();
        let h = self.channel(rng);
        let desired_symbol = qpsk_symbol(sc.symbol_power, rng);
        let mut interference = vec![Complex64::new(0.0, 0.0); k];
        let mut interferer_symbols = Vec::with_capacity(sc.users - 1);
        for _ in 1..sc.users {
            let g = self.channel(rng);
            let s = qpsk_symbol(sc.symbol_power, rng);
            for (i, gk) in interference.iter_mut().zip(&g) {
                *i += gk * s;
            }
            interferer_symbols.push(s);
        }
        let noise_var = sc.noise_var();
        let noise: Vec<Complex64> = (0..k).map(|_| complex_normal(noise_var, rng)).collect();
        let r = (0..k)
            .map(|p| h[p] * desired_symbol + interference[p] + noise[p])
            .collect();
        Snapshot {
            r,
            h,
            interference,
            noise,
            desired_symbol,
            interferer_symbols,
            noise_var,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn qpsk_power_and_gray() {
        let c = qpsk_constellation(2.0);
        for s in c {
            assert!((s.norm_sqr() - 2.0).abs() < 1e-15);
            let (b0, b1) = qpsk_bits(s);
            assert_eq!(qpsk_from_bits(b0, b1, 2.0), s);
        }
        // nearest neighbours share one coordinate and differ in one bit
        for a in c {
            for b in c {
                let d = (a - b).norm_sqr();
                if (d - 4.0).abs() < 1e-12 {
                    let (x, y) = (qpsk_bits(a), qpsk_bits(b));
                    assert_eq!((x.0 != y.0) as u8 + (x.1 != y.1) as u8, 1);
                }
            }
        }
    }

    #[test]
    fn single_user_has_no_interference() {
        let sc = Scenario::rich(Layout::Linear { ports: 6, aperture: 1.0 }, 1, 10.0);
        let sim = Simulator::new(sc).unwrap();
        let s = sim.sample(&mut substream(3, "s", 0));
        assert!(s.interference.iter().all(|i| i.norm() == 0.0));
        assert!(s.interferer_symbols.is_empty());
    }

    #[test]
    fn noiseless_single_user_is_exact() {
        let sc = Scenario::rich(Layout::Linear { ports: 6, aperture: 1.0 }, 1, f64::INFINITY);
        let sim = Simulator::new(sc).unwrap();
        let s = sim.sample(&mut substream(3, "s", 0));
        assert_eq!(s.noise_var, 0.0);
        for (r, h) in s.r.iter().zip(&s.h) {
            assert_eq!(*r, h * s.desired_symbol);
        }
        let mut bad = Scenario::rich(Layout::Linear { ports: 6, aperture: 1.0 }, 1, f64::NAN);
        assert!(Simulator::new(bad.clone()).is_err());
        bad.snr_db = 10.0;
        bad.users = 0;
        assert!(Simulator::new(bad).is_err());
    }

    #[test]
    fn seeded_snapshots_repeat() {
        let sc = Scenario::rich(Layout::Linear { ports: 8, aperture: 2.0 }, 3, 10.0);
        let sim = Simulator::new(sc).unwrap();
        let a = sim.sample(&mut substream(9, "s", 4));
        let b = sim.sample(&mut substream(9, "s", 4));
        assert_eq!(a, b);
        assert!(a.identity_residual() < 1e-12);
    }
}
