//! Port selection, reconstruction error and link-rate metrics, plus the
//! Monte-Carlo sweep that compares imputers against oracle selection.

use std::fmt::Write as _;
use std::sync::{Arc, Mutex};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{Scenario, SimError, Simulator};
use crate::copula::{AttentionalCopula, CopulaError, Prepared, SamplingMode};
use crate::encoding::{coord, equally_spaced_ports, sample_mask, Field, Mask, Placement, PortMajorSeries};
use crate::marginal::{FlowError, FrozenBank};
use crate::oracle::{GaussianOracle, OracleError};
use crate::rng::{substream, StreamRng};
use crate::special::{binary_entropy, gauss_hermite, q_function};

/// Value assigned to `|h|²/|I|²` when the interference vanishes.
pub const SINR_CAP: f64 = 1e12;

/// Two-sided normal quantile for the reported 95% intervals.
const Z_95: f64 = 1.959963984540054;

/// Quadrature order for per-coordinate posterior means of the copula.
pub const MEAN_QUADRATURE: usize = 16;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid experiment: {0}")]
    Config(String),
    #[error("model expects {expected} coordinates but the scenario has {got}")]
    Geometry { expected: usize, got: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("true {0} field has zero power")]
    ZeroPower(&'static str),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Copula(#[from] CopulaError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Encoding(#[from] crate::encoding::EncodingError),
}

/// Per-port `|h_k|²/|I_k|²`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinrProfile(pub Vec<f64>);

impl SinrProfile {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn select(&self) -> usize {
        select_port(&self.0)
    }
}

/// `|h|²/|I|²`, capped when `|I|² < 10⁻¹²|h|²` or `I = 0`.
pub fn sinr_ratio(h: Complex64, i: Complex64) -> f64 {
    let (hp, ip) = (h.norm_sqr(), i.norm_sqr());
    if ip == 0.0 || ip < 1e-12 * hp {
        SINR_CAP
    } else {
        (hp / ip).min(SINR_CAP)
    }
}

pub fn normalized_sinr(h: &[Complex64], interference: &[Complex64]) -> SinrProfile {
    SinrProfile(h.iter().zip(interference).map(|(&h, &i)| sinr_ratio(h, i)).collect())
}

/// Index of the largest entry; the lowest index wins ties.
pub fn select_port(gamma: &[f64]) -> usize {
    let mut best = 0;
    for (k, &g) in gamma.iter().enumerate() {
        if g > gamma[best] {
            best = k;
        }
    }
    best
}

/// Sample average of per-draw ratios; each draw is a flat port-major series.
pub fn predicted_sinr(samples: &[Vec<f64>], ports: usize) -> SinrProfile {
    let mut acc = vec![0.0; ports];
    for s in samples {
        for (k, a) in acc.iter_mut().enumerate() {
            let at = |f| Complex64::new(s[coord(ports, 0, k, f)], s[coord(ports, 1, k, f)]);
            let (h, i) = (at(Field::H), at(Field::I));
            *a += sinr_ratio(h, i);
        }
    }
    let n = samples.len().max(1) as f64;
    SinrProfile(acc.into_iter().map(|a| a / n).collect())
}

/// Information rate of the two parallel BSCs induced by Gray-mapped QPSK
/// hard decisions at normalized SINR `gamma`, in bits per symbol.
pub fn bsc_rate(gamma: f64) -> f64 {
    if gamma.is_infinite() {
        return 2.0;
    }
    let p = q_function(gamma.max(0.0).sqrt());
    (2.0 * (1.0 - binary_entropy(p))).clamp(0.0, 2.0)
}

/// Squared error and true power per field, summed over snapshots.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FieldErrors {
    pub error: [f64; 3],
    pub power: [f64; 3],
}

impl FieldErrors {
    pub fn add(&mut self, estimate: &[f64], truth: &[f64]) {
        for (i, (e, t)) in estimate.iter().zip(truth).enumerate() {
            let f = i % 3;
            self.error[f] += (e - t) * (e - t);
            self.power[f] += t * t;
        }
    }

    pub fn merge(&mut self, other: &FieldErrors) {
        for f in 0..3 {
            self.error[f] += other.error[f];
            self.power[f] += other.power[f];
        }
    }

    pub fn nmse(&self, field: Field) -> Result<f64, EvalError> {
        let f = field.index();
        if self.power[f] == 0.0 {
            return Err(EvalError::ZeroPower(field.name()));
        }
        Ok(self.error[f] / self.power[f])
    }
}

/// `Σ‖x̂ − x‖² / Σ‖x‖²` over the snapshots for one field.
pub fn nmse(
    estimate: &[PortMajorSeries],
    truth: &[PortMajorSeries],
    field: Field,
) -> Result<f64, EvalError> {
    if estimate.len() != truth.len() {
        return Err(EvalError::Shape(format!(
            "{} estimates for {} snapshots",
            estimate.len(),
            truth.len()
        )));
    }
    let mut acc = FieldErrors::default();
    for (e, t) in estimate.iter().zip(truth) {
        if e.ports() != t.ports() {
            return Err(EvalError::Shape(format!("{} vs {} ports", e.ports(), t.ports())));
        }
        acc.add(e.values(), t.values());
    }
    acc.nmse(field)
}

/// Posterior mean and draws for one masked snapshot.
#[derive(Clone, Debug, PartialEq)]
pub struct Imputation {
    pub mean: Vec<f64>,
    pub samples: Vec<Vec<f64>>,
}

pub trait Imputer: Sync {
    fn name(&self) -> &str;

    fn impute(
        &self,
        sim: &Simulator,
        values: &[f64],
        mask: &Mask,
        samples: usize,
        rng: &mut StreamRng,
    ) -> Result<Imputation, EvalError>;
}

/// Exact mixture posterior; oracles are built once per scenario.
#[derive(Default)]
pub struct OracleImputer {
    cache: Mutex<Vec<(Scenario, Arc<GaussianOracle>)>>,
}

impl OracleImputer {
    pub fn oracle(&self, sim: &Simulator) -> Result<Arc<GaussianOracle>, EvalError> {
        let mut cache = self.cache.lock().unwrap_or_else(|e| e.into_inner());
        if let Some((_, o)) = cache.iter().find(|(s, _)| s == sim.scenario()) {
            return Ok(o.clone());
        }
        let o = Arc::new(GaussianOracle::for_simulator(sim)?);
        cache.push((sim.scenario().clone(), o.clone()));
        Ok(o)
    }
}

impl Imputer for OracleImputer {
    fn name(&self) -> &str {
        "oracle"
    }

    fn impute(
        &self,
        sim: &Simulator,
        values: &[f64],
        mask: &Mask,
        samples: usize,
        rng: &mut StreamRng,
    ) -> Result<Imputation, EvalError> {
        let post = self.oracle(sim)?.posterior(mask, values)?;
        Ok(Imputation {
            mean: post.mean(),
            samples: (0..samples).map(|_| post.sample(rng)).collect(),
        })
    }
}

/// Fills every missing coordinate with zero.
pub struct ZeroImputer;

impl Imputer for ZeroImputer {
    fn name(&self) -> &str {
        "zero"
    }

    fn impute(
        &self,
        _sim: &Simulator,
        values: &[f64],
        mask: &Mask,
        _samples: usize,
        _rng: &mut StreamRng,
    ) -> Result<Imputation, EvalError> {
        let mean: Vec<f64> = values
            .iter()
            .enumerate()
            .map(|(i, &v)| if mask.is_observed(i) { v } else { 0.0 })
            .collect();
        Ok(Imputation {
            samples: vec![mean.clone()],
            mean,
        })
    }
}

/// Learned two-stage model. In joint mode the posterior mean of each
/// coordinate is computed by Gauss–Hermite quadrature through its head.
pub struct CopulaImputer {
    pub bank: FrozenBank,
    pub copula: AttentionalCopula,
    pub mode: SamplingMode,
    nodes: (Vec<f64>, Vec<f64>),
}

impl CopulaImputer {
    pub fn new(bank: FrozenBank, copula: AttentionalCopula, mode: SamplingMode) -> Self {
        CopulaImputer {
            bank,
            copula,
            mode,
            nodes: gauss_hermite(MEAN_QUADRATURE),
        }
    }
}

impl Imputer for CopulaImputer {
    fn name(&self) -> &str {
        "copula"
    }

    fn impute(
        &self,
        sim: &Simulator,
        values: &[f64],
        mask: &Mask,
        samples: usize,
        rng: &mut StreamRng,
    ) -> Result<Imputation, EvalError> {
        let d = 6 * sim.ports();
        if self.copula.dim() != d || self.bank.dim() != d {
            return Err(EvalError::Geometry {
                expected: self.copula.dim(),
                got: d,
            });
        }
        let observed = mask.flags();
        match self.mode {
            SamplingMode::Joint => {
                let prep = Prepared::new(&self.bank, values, observed)?;
                let cond = self.copula.conditionals(&prep, observed, rng)?;
                let mut mean = values.to_vec();
                for (j, &i) in cond.targets.iter().enumerate() {
                    let mut m = 0.0;
                    let (mut z, mut x) = (0.0, 0.0);
                    for (n, (e, w)) in self.nodes.0.iter().zip(&self.nodes.1).enumerate() {
                        if n == 0 {
                            z = cond.quantile_z(j, *e);
                            x = self.bank.inverse_transform(i, z)?;
                        } else {
                            z = cond.quantile_z_near(j, *e, z);
                            x = self.bank.inverse_transform_near(i, z, x)?;
                        }
                        m += w * x;
                    }
                    mean[i] = m;
                }
                let noise: Vec<Vec<f64>> = (0..samples)
                    .map(|_| (0..cond.len()).map(|_| rng.sample(StandardNormal)).collect())
                    .collect();
                let mut draws = vec![values.to_vec(); samples];
                let mut order: Vec<usize> = (0..samples).collect();
                for (j, &i) in cond.targets.iter().enumerate() {
                    order.sort_by(|&a, &b| noise[a][j].total_cmp(&noise[b][j]));
                    let mut prev: Option<(f64, f64)> = None;
                    for &s in &order {
                        let (z, x) = match prev {
                            None => {
                                let z = cond.quantile_z(j, noise[s][j]);
                                (z, self.bank.inverse_transform(i, z)?)
                            }
                            Some((z0, x0)) => {
                                let z = cond.quantile_z_near(j, noise[s][j], z0);
                                (z, self.bank.inverse_transform_near(i, z, x0)?)
                            }
                        };
                        draws[s][i] = x;
                        prev = Some((z, x));
                    }
                }
                Ok(Imputation { mean, samples: draws })
            }
            SamplingMode::Sequential => {
                let mut draws = self.copula.sample_posterior(
                    &self.bank,
                    values,
                    observed,
                    samples.max(1),
                    SamplingMode::Sequential,
                    rng,
                )?;
                let mut mean = vec![0.0; d];
                for s in &draws {
                    mean.iter_mut().zip(s).for_each(|(m, v)| *m += v);
                }
                let n = draws.len() as f64;
                mean.iter_mut().for_each(|m| *m /= n);
                draws.truncate(samples);
                Ok(Imputation { mean, samples: draws })
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    /// Number of observed ports.
    M,
    /// Number of users.
    U,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::M => "M",
            Axis::U => "U",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub axis: Axis,
    pub values: Vec<usize>,
    /// Observed ports when sweeping over users.
    pub observed_ports: usize,
    pub trials: usize,
    /// Posterior draws per snapshot for predicted selection.
    pub samples: usize,
    pub placement: Placement,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: String| Err(EvalError::Config(m));
        let k = self.scenario.geometry.ports();
        if self.values.is_empty() {
            return bad("sweep has no axis values".into());
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.samples == 0 {
            return bad("samples must be at least 1".into());
        }
        let ms: Vec<usize> = match self.axis {
            Axis::M => self.values.clone(),
            Axis::U => {
                if self.values.contains(&0) {
                    return bad("users must be at least 1".into());
                }
                vec![self.observed_ports]
            }
        };
        if let Some(m) = ms.iter().find(|&&m| m > k) {
            return bad(format!("{m} observed ports exceed {k} ports"));
        }
        Ok(())
    }
}

/// Sample mean with a normal-approximation 95% interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl Estimate {
    pub fn from_samples(x: &[f64]) -> Self {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let half = if x.len() > 1 {
            let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            Z_95 * (var / n).sqrt()
        } else {
            0.0
        };
        Estimate {
            mean,
            ci_low: mean - half,
            ci_high: mean + half,
        }
    }

    /// Ratio of means `Σe/Σp` with a delta-method interval.
    pub fn ratio(e: &[f64], p: &[f64]) -> Self {
        let n = e.len() as f64;
        let (me, mp) = (e.iter().sum::<f64>() / n, p.iter().sum::<f64>() / n);
        let r = me / mp;
        let half = if e.len() > 1 {
            let v = e
                .iter()
                .zip(p)
                .map(|(a, b)| (a - r * b).powi(2))
                .sum::<f64>()
                / (n - 1.0);
            Z_95 * (v / n).sqrt() / mp
        } else {
            0.0
        };
        Estimate {
            mean: r,
            ci_low: r - half,
            ci_high: r + half,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImputerResult {
    pub name: String,
    pub nmse_r: Estimate,
    pub nmse_h: Estimate,
    pub nmse_i: Estimate,
    /// Sum-rate when each user picks the port with the largest predicted ratio.
    pub rate_predicted: Estimate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointResult {
    pub axis_value: usize,
    /// Sum-rate under selection with the true per-port ratios.
    pub rate_oracle: Estimate,
    pub rate_random: Estimate,
    pub imputers: Vec<ImputerResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub config: ExperimentConfig,
    /// How the rate nonlinearity and the trial average are ordered.
    pub rate_averaging: String,
    pub points: Vec<PointResult>,
}

pub const RATE_AVERAGING: &str =
    "per user and trial: rate at the true noise-free ratio of the selected port; sum over users; mean over trials";

struct TrialOutcome {
    oracle: f64,
    random: f64,
    predicted: Vec<f64>,
    errors: Vec<FieldErrors>,
}

fn run_trial(
    config: &ExperimentConfig,
    sim: &Simulator,
    m: usize,
    label: &str,
    trial: usize,
    imputers: &[&dyn Imputer],
) -> Result<TrialOutcome, EvalError> {
    let k = sim.ports();
    let users = sim.scenario().users;
    let mut rng = substream(config.seed, label, trial as u64);
    let mut irngs: Vec<StreamRng> = imputers
        .iter()
        .map(|imp| substream(config.seed, &format!("{label}/{}", imp.name()), trial as u64))
        .collect();
    let mut out = TrialOutcome {
        oracle: 0.0,
        random: 0.0,
        predicted: vec![0.0; imputers.len()],
        errors: vec![FieldErrors::default(); imputers.len()],
    };
    for _ in 0..users {
        let snap = sim.sample(&mut rng);
        let series = PortMajorSeries::encode(&snap);
        let gamma = normalized_sinr(&snap.h, &snap.interference);
        let mask = match config.placement {
            Placement::EquallySpaced => Mask::from_ports(k, equally_spaced_ports(k, m))?,
            Placement::Random if m == 0 => Mask::from_ports(k, Vec::new())?,
            Placement::Random => sample_mask(k, m, m, Placement::Random, &mut rng)?,
        };
        let values: Vec<f64> = series
            .values()
            .iter()
            .enumerate()
            .map(|(i, &v)| if mask.is_observed(i) { v } else { f64::NAN })
            .collect();
        out.oracle += bsc_rate(gamma.0[gamma.select()]);
        out.random += bsc_rate(gamma.0[rng.random_range(0..k)]);
        for (j, imp) in imputers.iter().enumerate() {
            let est = imp.impute(sim, &values, &mask, config.samples, &mut irngs[j])?;
            out.errors[j].add(&est.mean, series.values());
            let pick = predicted_sinr(&est.samples, k).select();
            out.predicted[j] += bsc_rate(gamma.0[pick]);
        }
    }
    Ok(out)
}

/// Monte-Carlo sweep. Trials run in parallel on independent substreams and
/// are reduced in trial order, so results do not depend on thread count.
pub fn run_sweep(
    config: &ExperimentConfig,
    imputers: &[&dyn Imputer],
) -> Result<SweepResult, EvalError> {
    config.validate()?;
    let mut points = Vec::with_capacity(config.values.len());
    for &v in &config.values {
        let (scenario, m) = match config.axis {
            Axis::M => (config.scenario.clone(), v),
            Axis::U => {
                let mut s = config.scenario.clone();
                s.users = v;
                (s, config.observed_ports)
            }
        };
        let sim = Simulator::new(scenario)?;
        let label = format!("eval/{}={v}", config.axis.name());
        let trials: Vec<TrialOutcome> = (0..config.trials)
            .into_par_iter()
            .map(|t| run_trial(config, &sim, m, &label, t, imputers))
            .collect::<Result<_, _>>()?;
        let column = |f: &dyn Fn(&TrialOutcome) -> f64| trials.iter().map(f).collect::<Vec<f64>>();
        let mut results = Vec::with_capacity(imputers.len());
        for (j, imp) in imputers.iter().enumerate() {
            let field = |f: usize| {
                let e = column(&|t| t.errors[j].error[f]);
                let p = column(&|t| t.errors[j].power[f]);
                if p.iter().sum::<f64>() == 0.0 {
                    return Err(EvalError::ZeroPower(Field::ALL[f].name()));
                }
                Ok(Estimate::ratio(&e, &p))
            };
            results.push(ImputerResult {
                name: imp.name().to_string(),
                nmse_r: field(0)?,
                nmse_h: field(1)?,
                nmse_i: field(2)?,
                rate_predicted: Estimate::from_samples(&column(&|t| t.predicted[j])),
            });
        }
        points.push(PointResult {
            axis_value: v,
            rate_oracle: Estimate::from_samples(&column(&|t| t.oracle)),
            rate_random: Estimate::from_samples(&column(&|t| t.random)),
            imputers: results,
        });
    }
    Ok(SweepResult {
        config: config.clone(),
        rate_averaging: RATE_AVERAGING.to_string(),
        points,
    })
}

impl SweepResult {
    /// Long-format table: `axis,axis_value,estimator,metric,mean,ci_low,ci_high`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("axis,axis_value,estimator,metric,mean,ci_low,ci_high\n");
        let axis = self.config.axis.name();
        let mut row = |v: usize, who: &str, metric: &str, e: &Estimate| {
            let _ = writeln!(s, "{axis},{v},{who},{metric},{},{},{}", e.mean, e.ci_low, e.ci_high);
        };
        for p in &self.points {
            row(p.axis_value, "true", "sum_rate", &p.rate_oracle);
            row(p.axis_value, "random", "sum_rate", &p.rate_random);
            for r in &p.imputers {
                row(p.axis_value, &r.name, "nmse_r", &r.nmse_r);
                row(p.axis_value, &r.name, "nmse_h", &r.nmse_h);
                row(p.axis_value, &r.name, "nmse_i", &r.nmse_i);
                row(p.axis_value, &r.name, "sum_rate", &r.rate_predicted);
            }
        }
        s
    }

    pub fn imputer(&self, point: usize, name: &str) -> Option<&ImputerResult> {
        self.points.get(point)?.imputers.iter().find(|r| r.name == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn sinr_examples() {
        let g = normalized_sinr(&[c(1.0, 0.0), c(0.0, 2.0)], &[c(2.0, 0.0), c(1.0, 0.0)]);
        assert_eq!(g.0, vec![0.25, 4.0]);
        assert_eq!(sinr_ratio(c(0.6, 0.8), c(0.0, 1.0)), 1.0);
        assert_eq!(sinr_ratio(c(1.0, 0.0), c(0.0, 0.0)), SINR_CAP);
        assert_eq!(sinr_ratio(c(1.0, 0.0), c(1e-7, 0.0)), SINR_CAP);
    }

    #[test]
    fn selection_ties_and_scaling() {
        assert_eq!(select_port(&[1.0, 3.0, 2.0]), 1);
        assert_eq!(select_port(&[5.0; 4]), 0);
        let g = [0.3, 7.0, 7.0, 1.0];
        assert_eq!(select_port(&g), 1);
        let scaled: Vec<f64> = g.iter().map(|v| v * 1e-3).collect();
        assert_eq!(select_port(&scaled), 1);
    }

    #[test]
    fn predicted_ratio_from_truth_is_exact() {
        let s = PortMajorSeries::from_fields(
            &[c(0.1, 0.2), c(0.3, 0.4)],
            &[c(1.0, 0.0), c(0.0, 2.0)],
            &[c(2.0, 0.0), c(1.0, 0.0)],
        );
        let p = predicted_sinr(&[s.values().to_vec()], 2);
        assert_eq!(p.0, vec![0.25, 4.0]);
        let zero_i = PortMajorSeries::from_fields(
            &[c(0.0, 0.0); 2],
            &[c(1.0, 0.0), c(0.0, 2.0)],
            &[c(0.0, 0.0); 2],
        );
        let p = predicted_sinr(&[zero_i.values().to_vec()], 2);
        assert_eq!(p.0, vec![SINR_CAP; 2]);
        assert_eq!(p.select(), 0);
    }

    #[test]
    fn bsc_rate_limits() {
        assert_eq!(bsc_rate(0.0), 0.0);
        assert!((bsc_rate(1e6) - 2.0).abs() < 1e-12);
        assert_eq!(bsc_rate(f64::INFINITY), 2.0);
    }

    #[test]
    fn nmse_constructions() {
        let t = PortMajorSeries::from_fields(
            &[c(1.0, -1.0), c(0.5, 2.0)],
            &[c(0.3, 0.1), c(-1.0, 0.2)],
            &[c(2.0, 0.0), c(0.0, -1.0)],
        );
        let zero = PortMajorSeries::zeros(2);
        for f in Field::ALL {
            assert_eq!(nmse(&[t.clone()], &[t.clone()], f).unwrap(), 0.0);
            assert!((nmse(&[zero.clone()], &[t.clone()], f).unwrap() - 1.0).abs() < 1e-15);
        }
        let mut est = t.clone();
        let h = t.field(Field::H);
        let power: f64 = h.iter().map(|v| v.norm_sqr()).sum();
        let delta = (0.01 * power).sqrt();
        est.set(0, Field::H, h[0] + c(delta, 0.0));
        assert!((nmse(&[est], &[t.clone()], Field::H).unwrap() - 0.01).abs() < 1e-12);
        assert!(matches!(
            nmse(&[zero.clone()], &[zero], Field::R),
            Err(EvalError::ZeroPower("r"))
        ));
    }

    #[test]
    fn ratio_estimate_matches_pooled_value() {
        let e = [1.0, 2.0, 3.0];
        let p = [2.0, 2.0, 4.0];
        let r = Estimate::ratio(&e, &p);
        assert!((r.mean - 0.75).abs() < 1e-15);
        assert!(r.ci_low < r.mean && r.mean < r.ci_high);
        let one = Estimate::from_samples(&[3.0]);
        assert_eq!((one.ci_low, one.ci_high), (3.0, 3.0));
    }
}
