//! Per-coordinate monotone flows `T_i` with CDF `F_i(x) = Φ(T_i(x))`.
//!
//! A single hyper-network maps each coordinate's tags (series, field kind,
//! port position) to the parameters of its flow, so parameters are shared
//! across coordinates but each coordinate gets its own transform.
//! Each flow is an input affine map, a stack of sigmoidal layers, and an
//! output affine map.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsf::{flow_graph, Flow};
use crate::encoding::CoordLayout;
use crate::nn::{Activation, Mlp};
use crate::rng::StreamRng;
use crate::special::{norm_cdf, norm_logpdf};
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, TensorError, Var};
use crate::train::{Objective, TrainError};

/// Interior clamp applied to every uniform.
pub const UNIFORM_EPS: f64 = 1e-7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("non-finite input {0}")]
    NonFinite(f64),
    #[error("uniform {0} outside (0, 1)")]
    OutOfUnitInterval(f64),
    #[error("coordinate {index} out of range for {len} coordinates")]
    Index { index: usize, len: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    /// Sigmoidal layers per flow.
    pub layers: usize,
    /// Sigmoid units per layer.
    pub units: usize,
    pub embed_dim: usize,
    pub hyper_width: usize,
    /// Linear layers in the hyper-network.
    pub hyper_layers: usize,
    /// Sine/cosine pairs encoding port position.
    pub fourier: usize,
}

impl FlowConfig {
    pub fn table1() -> Self {
        FlowConfig {
            layers: 4,
            units: 64,
            embed_dim: 16,
            hyper_width: 64,
            hyper_layers: 4,
            fourier: 4,
        }
    }

    pub fn desk() -> Self {
        FlowConfig {
            layers: 2,
            units: 8,
            embed_dim: 16,
            hyper_width: 32,
            hyper_layers: 3,
            fourier: 4,
        }
    }

    /// Flow parameters per coordinate.
    pub fn params_per_coord(&self) -> usize {
        crate::dsf::flow_len(self.layers, self.units)
    }
}

fn fourier_features(position: &[f64], pairs: usize) -> Tensor {
    let mut data = Vec::with_capacity(position.len() * 2 * pairs);
    for &p in position {
        for f in 1..=pairs {
            let a = PI * f as f64 * p;
            data.push(a.sin());
            data.push(a.cos());
        }
    }
    Tensor::new(vec![position.len(), 2 * pairs], data).expect("shape by construction")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginalFlowBank {
    config: FlowConfig,
    layout: CoordLayout,
    params: ParamStore,
    series: ParamId,
    kind: ParamId,
    position: ParamId,
    hyper: Mlp,
}

impl MarginalFlowBank {
    /// Near-identity initialization: the hyper-network's last layer is tiny.
    pub fn new<R: Rng + ?Sized>(config: FlowConfig, layout: CoordLayout, rng: &mut R) -> Self {
        let mut params = ParamStore::new();
        let e = config.embed_dim;
        let series = params.add("flow.series", Tensor::randn(&[layout.n_series, e], 0.5, rng));
        let kind = params.add("flow.kind", Tensor::randn(&[layout.n_kinds, e], 0.5, rng));
        let position = params.add(
            "flow.position",
            Tensor::randn(&[2 * config.fourier, e], 0.5 / (config.fourier as f64).sqrt(), rng),
        );
        let mut widths = vec![e];
        widths.extend(std::iter::repeat_n(config.hyper_width, config.hyper_layers.saturating_sub(1)));
        widths.push(config.params_per_coord());
        let hyper = Mlp::new(&mut params, "flow.hyper", &widths, Activation::Tanh, 1e-2, rng);
        MarginalFlowBank {
            config,
            layout,
            params,
            series,
            kind,
            position,
            hyper,
        }
    }

    /// Exactly the identity transform for every coordinate.
    pub fn identity<R: Rng + ?Sized>(config: FlowConfig, layout: CoordLayout, rng: &mut R) -> Self {
        let mut bank = Self::new(config, layout, rng);
        bank.hyper.zero_last(&mut bank.params);
        bank
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn config(&self) -> &FlowConfig {
        &self.config
    }

    pub fn layout(&self) -> &CoordLayout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.len()
    }

    /// Per-coordinate flow parameters, `[D, P]`.
    fn flow_params(&self, g: &mut Graph) -> Result<Var, TensorError> {
        let s_tab = g.param(&self.params, self.series);
        let k_tab = g.param(&self.params, self.kind);
        let p_w = g.param(&self.params, self.position);
        let es = g.gather_rows(s_tab, &self.layout.series)?;
        let ek = g.gather_rows(k_tab, &self.layout.kind)?;
        let ff = g.leaf(fourier_features(&self.layout.position, self.config.fourier));
        let ep = g.matmul(ff, p_w)?;
        let e1 = g.add(es, ek)?;
        let emb = g.add(e1, ep)?;
        self.hyper.forward(g, &self.params, emb)
    }

    /// Mean negative log-likelihood per coordinate of a `[B, D]` batch.
    pub fn nll(&self, g: &mut Graph, batch: &Tensor) -> Result<Var, TensorError> {
        let d = self.dim();
        if batch.cols() != d {
            return Err(TensorError::ShapeMismatch {
                op: "marginal_nll",
                lhs: vec![batch.rows(), d],
                rhs: batch.shape().to_vec(),
            });
        }
        let b = batch.rows();
        let theta = self.flow_params(g)?;
        let theta = g.tile_rows(theta, b);
        let x = g.leaf(batch.clone().reshaped(&[b * d, 1])?);
        let (t, logdet) = self.transform_graph(g, theta, x)?;
        let sq = g.square(t);
        let half = g.scale(sq, 0.5);
        let nlp = g.sub(half, logdet)?;
        let m = g.mean(nlp);
        Ok(g.add_scalar(m, 0.5 * (2.0 * PI).ln()))
    }

    fn transform_graph(&self, g: &mut Graph, theta: Var, x: Var) -> Result<(Var, Var), TensorError> {
        flow_graph(g, theta, x, self.config.layers, self.config.units)
    }

    /// Snapshot of every coordinate's flow for fast scalar evaluation.
    pub fn freeze(&self) -> Result<FrozenBank, TensorError> {
        let mut g = Graph::new();
        let theta = self.flow_params(&mut g)?;
        let t = g.value(theta);
        let flows = (0..t.rows())
            .map(|i| Flow::new(t.row(i), self.config.layers, self.config.units))
            .collect();
        Ok(FrozenBank { flows })
    }
}

/// A bank paired with its training-data stream.
pub struct MarginalTraining<'a, F> {
    pub bank: &'a mut MarginalFlowBank,
    pub sampler: F,
}

impl<F: Fn(&mut StreamRng) -> Vec<f64>> Objective for MarginalTraining<'_, F> {
    fn params(&self) -> &ParamStore {
        &self.bank.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.bank.params
    }

    fn batch(&self, batch_size: usize, rng: &mut StreamRng) -> Result<(f64, Vec<Tensor>), TrainError> {
        let d = self.bank.dim();
        let mut data = Vec::with_capacity(batch_size * d);
        for _ in 0..batch_size {
            data.extend((self.sampler)(rng));
        }
        let batch = Tensor::new(vec![batch_size, d], data)?;
        let mut g = Graph::new();
        let loss = self.bank.nll(&mut g, &batch)?;
        let value = g.value(loss).item();
        let grads = g.backward(loss)?.params(&g, &self.bank.params);
        Ok((value, grads))
    }
}

/// Read-only per-coordinate flows.
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenBank {
    flows: Vec<Flow>,
}

impl FrozenBank {
    /// Every coordinate uses `T(x) = e^{log_scale}·x + shift`.
    pub fn affine(dim: usize, shift: f64, log_scale: f64) -> Self {
        FrozenBank {
            flows: vec![Flow::new(&[shift, log_scale, 0.0, 0.0], 0, 0); dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.flows.len()
    }

    fn flow(&self, i: usize) -> Result<&Flow, FlowError> {
        self.flows.get(i).ok_or(FlowError::Index {
            index: i,
            len: self.flows.len(),
        })
    }

    /// `(T_i(x), log T_i'(x))`.
    pub fn transform(&self, i: usize, x: f64) -> Result<(f64, f64), FlowError> {
        if !x.is_finite() {
            return Err(FlowError::NonFinite(x));
        }
        let p = self.flow(i)?;
        Ok(p.eval(x))
    }

    /// Solve `T_i(x) = z`.
    pub fn inverse_transform(&self, i: usize, z: f64) -> Result<f64, FlowError> {
        if !z.is_finite() {
            return Err(FlowError::NonFinite(z));
        }
        let p = self.flow(i)?;
        Ok(p.inverse(z))
    }

    /// [`Self::inverse_transform`] started from a nearby solution.
    pub fn inverse_transform_near(&self, i: usize, z: f64, guess: f64) -> Result<f64, FlowError> {
        if !z.is_finite() {
            return Err(FlowError::NonFinite(z));
        }
        Ok(self.flow(i)?.inverse_near(z, guess))
    }

    fn raw_cdf(&self, i: usize, x: f64) -> Result<f64, FlowError> {
        Ok(norm_cdf(self.transform(i, x)?.0))
    }

    /// `Φ(T_i(x))` clamped to `[ε, 1 − ε]`.
    pub fn cdf(&self, i: usize, x: f64) -> Result<f64, FlowError> {
        Ok(self.raw_cdf(i, x)?.clamp(UNIFORM_EPS, 1.0 - UNIFORM_EPS))
    }

    pub fn logpdf(&self, i: usize, x: f64) -> Result<f64, FlowError> {
        let (t, lj) = self.transform(i, x)?;
        Ok(norm_logpdf(t) + lj)
    }

    /// Solve `Φ(T_i(x)) = u` by safeguarded Newton steps inside a bracket
    /// grown by doubling from `[−1, 1]`.
    pub fn inverse_cdf(&self, i: usize, u: f64) -> Result<f64, FlowError> {
        if !(u > 0.0 && u < 1.0) {
            return Err(FlowError::OutOfUnitInterval(u));
        }
        let f = |x: f64| self.raw_cdf(i, x).map(|c| c - u);
        let (mut lo, mut hi) = (-1.0, 1.0);
        while f(lo)? > 0.0 {
            lo *= 2.0;
            if lo < -1e300 {
                break;
            }
        }
        while f(hi)? < 0.0 {
            hi *= 2.0;
            if hi > 1e300 {
                break;
            }
        }
        let mut x = 0.5 * (lo + hi);
        for _ in 0..400 {
            let fx = f(x)?;
            if fx > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            let dens = self.logpdf(i, x)?.exp();
            let newton = x - fx / dens;
            let next = if dens > 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            let step = (next - x).abs();
            x = next;
            if fx.abs() < 1e-10 && step <= 1e-13 * (1.0 + x.abs()) {
                break;
            }
            if hi - lo <= 1e-15 * (1.0 + x.abs()) {
                break;
            }
        }
        Ok(x)
    }

    /// Clamped uniforms for a full coordinate vector.
    pub fn to_uniform(&self, values: &[f64]) -> Result<Vec<f64>, FlowError> {
        values.iter().enumerate().map(|(i, &x)| self.cdf(i, x)).collect()
    }
}
