//! Exact posterior for rich scattering.
//!
//! Given the desired symbol `s`, the flattened vector of `(r, h, I)` is a
//! zero-mean real Gaussian. Interferer symbols need no marginalization:
//! for `g ~ CN(0, C)` and `|s'|² = P`, `g s'` is again `CN(0, P·C)` since
//! a circular law is invariant to a fixed phase rotation. Only the four
//! QPSK values of `s` remain, so the posterior is a four-component Gaussian
//! mixture.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::channel::{qpsk_constellation, ChannelModel, Simulator};
use crate::encoding::{coord_parts, Field, Mask};
use crate::linalg::{pinv_sym, psd_factor, sym_eigenvalues, LinalgError};

/// Relative eigenvalue cut for the observed-block pseudo-inverse.
pub const PINV_THRESHOLD: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("correlation matrix is not PSD (min eigenvalue {0:e})")]
    NotPsd(f64),
    #[error("the exact posterior exists only for the rich-scattering model")]
    NotGaussian,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("value vector has length {got}, expected {expected}")]
    Length { got: usize, expected: usize },
}

/// Scalar complex coefficient `c` with `E[a bᴴ] = c·ΩR` (+ noise on `r, r`).
fn cross_coef(a: Field, b: Field, s: Complex64, users: usize, p_s: f64) -> Complex64 {
    let interf = (users - 1) as f64 * p_s;
    let c = |v: f64| Complex64::new(v, 0.0);
    match (a, b) {
        (Field::H, Field::H) => c(1.0),
        (Field::I, Field::I) | (Field::R, Field::I) | (Field::I, Field::R) => c(interf),
        (Field::R, Field::R) => c(s.norm_sqr() + interf),
        (Field::R, Field::H) => s,
        (Field::H, Field::R) => s.conj(),
        (Field::H, Field::I) | (Field::I, Field::H) => c(0.0),
    }
}

/// Real covariance of the flattened series under symbol hypothesis `s`.
///
/// For proper complex `a, b` with `E[a bᴴ] = A + jB` the real blocks are
/// `½[[A, −B], [B, A]]` over (real, imaginary) parts.
pub fn joint_covariance(
    correlation: &DMatrix<f64>,
    omega: f64,
    users: usize,
    p_s: f64,
    noise_var: f64,
    s: Complex64,
) -> DMatrix<f64> {
    let k = correlation.nrows();
    let d = 6 * k;
    let mut sigma = DMatrix::zeros(d, d);
    for i in 0..d {
        let (ri, pi, fi) = coord_parts(k, i);
        for j in 0..d {
            let (rj, pj, fj) = coord_parts(k, j);
            let mut c = cross_coef(fi, fj, s, users, p_s) * (omega * correlation[(pi, pj)]);
            if fi == Field::R && fj == Field::R && pi == pj {
                c += noise_var;
            }
            sigma[(i, j)] = 0.5
                * match (ri, rj) {
                    (0, 0) | (1, 1) => c.re,
                    (0, 1) => -c.im,
                    _ => c.im,
                };
        }
    }
    sigma
}

struct Component {
    log_norm: f64,
    pinv: DMatrix<f64>,
    gain: DMatrix<f64>,
    cond_cov: DMatrix<f64>,
    factor: OnceLock<DMatrix<f64>>,
}

/// Conditioning pieces for one observed index set.
pub struct Plan {
    observed: Vec<usize>,
    missing: Vec<usize>,
    components: Vec<Component>,
    truncated: bool,
}

impl Plan {
    pub fn observed(&self) -> &[usize] {
        &self.observed
    }

    pub fn missing(&self) -> &[usize] {
        &self.missing
    }

    fn factor(&self, q: usize) -> &DMatrix<f64> {
        let c = &self.components[q];
        c.factor.get_or_init(|| {
            psd_factor(&c.cond_cov)
                .map(|f| f.factor)
                .unwrap_or_else(|_| DMatrix::zeros(c.cond_cov.nrows(), c.cond_cov.ncols()))
        })
    }
}

/// Four-hypothesis Gaussian model with a per-mask plan cache.
pub struct GaussianOracle {
    ports: usize,
    covariances: Vec<DMatrix<f64>>,
    plans: Mutex<HashMap<Vec<usize>, Arc<Plan>>>,
}

impl GaussianOracle {
    pub fn new(
        correlation: &DMatrix<f64>,
        omega: f64,
        users: usize,
        p_s: f64,
        noise_var: f64,
    ) -> Result<Self, OracleError> {
        let ev = sym_eigenvalues(correlation)?;
        let (max, min) = (ev[0], *ev.last().unwrap_or(&0.0));
        if min < -1e-8 * max.max(1.0) {
            return Err(OracleError::NotPsd(min));
        }
        let covariances = qpsk_constellation(p_s)
            .iter()
            .map(|&s| joint_covariance(correlation, omega, users, p_s, noise_var, s))
            .collect();
        Ok(GaussianOracle {
            ports: correlation.nrows(),
            covariances,
            plans: Mutex::new(HashMap::new()),
        })
    }

    /// Oracle for the simulator's law; uses its clipped correlation.
    pub fn for_simulator(sim: &Simulator) -> Result<Self, OracleError> {
        let sc = sim.scenario();
        if !matches!(sc.channel, ChannelModel::Rich) {
            return Err(OracleError::NotGaussian);
        }
        Self::new(
            sim.correlation(),
            sc.large_scale_gain,
            sc.users,
            sc.symbol_power,
            sc.noise_var(),
        )
    }

    pub fn ports(&self) -> usize {
        self.ports
    }

    pub fn dim(&self) -> usize {
        6 * self.ports
    }

    pub fn covariance(&self, hypothesis: usize) -> &DMatrix<f64> {
        &self.covariances[hypothesis]
    }

    pub fn plan(&self, observed: &[usize]) -> Result<Arc<Plan>, OracleError> {
        if let Some(p) = self.plans.lock().expect("plan cache poisoned").get(observed) {
            return Ok(p.clone());
        }
        let plan = Arc::new(self.build_plan(observed)?);
        self.plans
            .lock()
            .expect("plan cache poisoned")
            .insert(observed.to_vec(), plan.clone());
        Ok(plan)
    }

    fn build_plan(&self, observed: &[usize]) -> Result<Plan, OracleError> {
        let d = self.dim();
        let mut is_obs = vec![false; d];
        for &i in observed {
            is_obs[i] = true;
        }
        let missing: Vec<usize> = (0..d).filter(|&i| !is_obs[i]).collect();
        let mut truncated = false;
        let mut components = Vec::with_capacity(4);
        for sigma in &self.covariances {
            let soo = sigma.select_rows(observed).select_columns(observed);
            let spo = sigma.select_rows(&missing).select_columns(observed);
            let spp = sigma.select_rows(&missing).select_columns(&missing);
            let pinv = pinv_sym(&soo, PINV_THRESHOLD)?;
            truncated |= pinv.truncated;
            let gain = &spo * &pinv.inverse;
            let mut cond_cov = &spp - &gain * spo.transpose();
            cond_cov = (&cond_cov + cond_cov.transpose()) * 0.5;
            let log_norm = -0.5 * pinv.log_pdet - 0.5 * pinv.rank as f64 * (2.0 * std::f64::consts::PI).ln();
            components.push(Component {
                log_norm,
                pinv: pinv.inverse,
                gain,
                cond_cov,
                factor: OnceLock::new(),
            });
        }
        Ok(Plan {
            observed: observed.to_vec(),
            missing,
            components,
            truncated,
        })
    }

    /// Posterior given the observed coordinates of `values` (other entries
    /// are ignored).
    pub fn posterior(&self, mask: &Mask, values: &[f64]) -> Result<MixturePosterior, OracleError> {
        self.posterior_at(&mask.observed_indices(), values)
    }

    pub fn posterior_at(&self, observed: &[usize], values: &[f64]) -> Result<MixturePosterior, OracleError> {
        if values.len() != self.dim() {
            return Err(OracleError::Length {
                got: values.len(),
                expected: self.dim(),
            });
        }
        let plan = self.plan(observed)?;
        let x_o = DVector::from_iterator(observed.len(), observed.iter().map(|&i| values[i]));
        let mut logw = [0.0; 4];
        let mut means = Vec::with_capacity(4);
        for (q, c) in plan.components.iter().enumerate() {
            let quad = x_o.dot(&(&c.pinv * &x_o));
            logw[q] = c.log_norm - 0.5 * quad;
            let mu = &c.gain * &x_o;
            let mut full = values.to_vec();
            for (&i, m) in plan.missing.iter().zip(mu.iter()) {
                full[i] = *m;
            }
            means.push(full);
        }
        let lse = crate::special::logsumexp(&logw);
        let weights = logw.map(|l| (l - lse).exp());
        Ok(MixturePosterior {
            plan,
            weights,
            means,
        })
    }
}

/// Gaussian-mixture posterior over the full series.
pub struct MixturePosterior {
    plan: Arc<Plan>,
    weights: [f64; 4],
    means: Vec<Vec<f64>>,
}

impl MixturePosterior {
    pub fn weights(&self) -> &[f64; 4] {
        &self.weights
    }

    /// Per-hypothesis conditional means, observed coordinates included.
    pub fn component_mean(&self, q: usize) -> &[f64] {
        &self.means[q]
    }

    /// Conditional covariance of the missing coordinates under hypothesis `q`.
    pub fn component_cov(&self, q: usize) -> &DMatrix<f64> {
        &self.plan.components[q].cond_cov
    }

    pub fn missing(&self) -> &[usize] {
        &self.plan.missing
    }

    /// True when the observed block needed a pseudo-inverse.
    pub fn truncated(&self) -> bool {
        self.plan.truncated
    }

    pub fn mean(&self) -> Vec<f64> {
        let d = self.means[0].len();
        let mut out = vec![0.0; d];
        for (w, m) in self.weights.iter().zip(&self.means) {
            for (o, v) in out.iter_mut().zip(m) {
                *o += w * v;
            }
        }
        // observed entries are identical in every component; copy them exactly
        for &i in &self.plan.observed {
            out[i] = self.means[0][i];
        }
        out
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let u: f64 = rng.random();
        let mut q = 3;
        let mut acc = 0.0;
        for (j, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                q = j;
                break;
            }
        }
        let l = self.plan.factor(q);
        let n = l.ncols();
        let z = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let dz = l * z;
        let mut out = self.means[q].clone();
        for (&i, v) in self.plan.missing.iter().zip(dz.iter()) {
            out[i] += v;
        }
        out
    }
}
