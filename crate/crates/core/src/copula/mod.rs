//! Masked attentional copula.
//!
//! Observed coordinates become context tokens carrying their uniform,
//! raw value and Gaussianized value; every missing coordinate becomes a
//! target token built from its tags plus a little noise. A self-attention
//! encoder summarizes the context and a cross-attention decoder maps each
//! target token to the parameters of a monotone flow, which defines that
//! target's conditional copula density on `(0, 1)`. Targets are
//! conditionally independent given the context.
//!
//! The density head works in probit coordinates `z = Φ⁻¹(u)`: with a flow
//! `S` on `z`, `log c(u) = log φ(S(z)) + log S'(z) − log φ(z)`, so a zero
//! head is the uniform copula and an affine head is a Gaussian conditional.

mod attention;

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsf::{flow_graph, flow_len, Flow};
use crate::encoding::CoordLayout;
use crate::marginal::{FlowError, FrozenBank};
use crate::nn::{Activation, Linear, Mlp, Norm};
use crate::rng::StreamRng;
use crate::special::norm_cdf;
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, TensorError, Var};
use crate::train::{Objective, TrainError};

pub use attention::{Attention, Block};

/// `Φ⁻¹(1 − 1e-7)`: Gaussianized values are clamped to `±Z_MAX`, which is
/// the same as clamping uniforms to `[ε, 1 − ε]`.
pub const Z_MAX: f64 = 5.199_337_582_192_817;

#[derive(Debug, Error)]
pub enum CopulaError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error("expected {expected} coordinates, got {got}")]
    Length { expected: usize, got: usize },
    #[error("observed coordinate {0} has no finite value")]
    MissingValue(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CopulaConfig {
    pub embed_dim: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    /// Linear layers in the density-head network.
    pub head_layers: usize,
    pub head_width: usize,
    /// Sigmoidal layers in each target's density flow.
    pub flow_layers: usize,
    pub flow_units: usize,
    /// Standard deviation of the noise added to target tokens.
    pub target_noise: f64,
}

impl CopulaConfig {
    pub fn table1() -> Self {
        CopulaConfig {
            embed_dim: 16,
            model_dim: 128,
            heads: 8,
            ff_dim: 256,
            encoder_layers: 6,
            decoder_layers: 3,
            head_layers: 4,
            head_width: 64,
            flow_layers: 2,
            flow_units: 8,
            target_noise: 0.01,
        }
    }

    pub fn desk() -> Self {
        CopulaConfig {
            embed_dim: 16,
            model_dim: 32,
            heads: 4,
            ff_dim: 64,
            encoder_layers: 2,
            decoder_layers: 2,
            head_layers: 2,
            head_width: 32,
            flow_layers: 2,
            flow_units: 8,
            target_noise: 0.01,
        }
    }

    pub fn head_params(&self) -> usize {
        flow_len(self.flow_layers, self.flow_units)
    }
}

/// Per-coordinate values the model may read: raw, uniform, Gaussianized.
/// Entries for unobserved coordinates are ignored when building tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct Prepared {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub z: Vec<f64>,
}

impl Prepared {
    /// Transform the coordinates flagged in `which` through the marginals.
    pub fn new(bank: &FrozenBank, values: &[f64], which: &[bool]) -> Result<Self, CopulaError> {
        let d = values.len();
        let mut z = vec![0.0; d];
        let mut u = vec![0.5; d];
        for i in 0..d {
            if which[i] {
                if !values[i].is_finite() {
                    return Err(CopulaError::MissingValue(i));
                }
                let zi = bank.transform(i, values[i])?.0.clamp(-Z_MAX, Z_MAX);
                z[i] = zi;
                u[i] = norm_cdf(zi);
            }
        }
        Ok(Prepared {
            x: values.to_vec(),
            u,
            z,
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// Every target drawn independently given the observed context.
    #[default]
    Joint,
    /// Port by port, feeding each drawn `(r, h)` group back as context.
    Sequential,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionalCopula {
    config: CopulaConfig,
    layout: CoordLayout,
    params: ParamStore,
    e_series: ParamId,
    e_step: ParamId,
    e_kind: ParamId,
    e_mask: ParamId,
    value: Linear,
    input: Linear,
    encoder: Vec<Block>,
    encoder_norm: Norm,
    decoder: Vec<Block>,
    decoder_norm: Norm,
    head: Mlp,
}

/// Sinusoidal step table from coordinate positions, plus a little noise.
fn step_table<R: Rng + ?Sized>(layout: &CoordLayout, dim: usize, rng: &mut R) -> Tensor {
    let mut pos = vec![0.0; layout.n_steps];
    for (s, p) in layout.step.iter().zip(&layout.position) {
        pos[*s] = *p;
    }
    let span = (layout.n_steps as f64).max(2.0);
    let pairs = dim / 2;
    let mut data = Vec::with_capacity(layout.n_steps * dim);
    for &p in &pos {
        for j in 0..dim {
            let f = PI * span.powf((j / 2) as f64 / (pairs.max(2) - 1) as f64);
            let a = f * p;
            let v = if j % 2 == 0 { a.sin() } else { a.cos() };
            data.push(0.5 * v + 0.02 * rng.sample::<f64, _>(StandardNormal));
        }
    }
    Tensor::new(vec![layout.n_steps, dim], data).expect("shape by construction")
}

impl AttentionalCopula {
    /// Random initialization with a zero density head, so the initial model
    /// is exactly the uniform copula.
    pub fn new<R: Rng + ?Sized>(config: CopulaConfig, layout: CoordLayout, rng: &mut R) -> Self {
        let mut params = ParamStore::new();
        let e = config.embed_dim;
        let dm = config.model_dim;
        let e_series = params.add("cop.series", Tensor::randn(&[layout.n_series, e], 0.5, rng));
        let e_step = params.add("cop.step", step_table(&layout, e, rng));
        let e_kind = params.add("cop.kind", Tensor::randn(&[layout.n_kinds, e], 0.5, rng));
        let e_mask = params.add("cop.mask", Tensor::randn(&[2, e], 0.5, rng));
        let value = Linear::new(&mut params, "cop.value", 3, e, 1.0, rng);
        let input = Linear::new(&mut params, "cop.input", e, dm, 1.0, rng);
        let encoder = (0..config.encoder_layers)
            .map(|l| Block::new(&mut params, &format!("cop.enc{l}"), dm, config.heads, config.ff_dim, rng))
            .collect();
        let encoder_norm = Norm::new(&mut params, "cop.enc_norm", dm);
        let decoder = (0..config.decoder_layers)
            .map(|l| Block::new(&mut params, &format!("cop.dec{l}"), dm, config.heads, config.ff_dim, rng))
            .collect();
        let decoder_norm = Norm::new(&mut params, "cop.dec_norm", dm);
        let mut widths = vec![dm];
        widths.extend(std::iter::repeat_n(config.head_width, config.head_layers.saturating_sub(1)));
        widths.push(config.head_params());
        let head = Mlp::new(&mut params, "cop.head", &widths, Activation::Tanh, 1.0, rng);
        head.zero_last(&mut params);
        AttentionalCopula {
            config,
            layout,
            params,
            e_series,
            e_step,
            e_kind,
            e_mask,
            value,
            input,
            encoder,
            encoder_norm,
            decoder,
            decoder_norm,
            head,
        }
    }

    pub fn config(&self) -> &CopulaConfig {
        &self.config
    }

    pub fn layout(&self) -> &CoordLayout {
        &self.layout
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn dim(&self) -> usize {
        self.layout.len()
    }

    fn tag_embedding(&self, g: &mut Graph, idx: &[usize], mask_flag: usize) -> Result<Var, TensorError> {
        let l = &self.layout;
        let pick = |v: &[usize]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let ts = g.param(&self.params, self.e_series);
        let tt = g.param(&self.params, self.e_step);
        let tk = g.param(&self.params, self.e_kind);
        let tm = g.param(&self.params, self.e_mask);
        let a = g.gather_rows(ts, &pick(&l.series))?;
        let b = g.gather_rows(tt, &pick(&l.step))?;
        let c = g.gather_rows(tk, &pick(&l.kind))?;
        let m = g.gather_rows(tm, &vec![mask_flag; idx.len()])?;
        let ab = g.add(a, b)?;
        let cm = g.add(c, m)?;
        g.add(ab, cm)
    }

    /// Encoded context, `[N_H, model_dim]`, or `None` for an empty context.
    pub fn encode_context(&self, g: &mut Graph, prep: &Prepared, hist: &[usize]) -> Result<Option<Var>, TensorError> {
        if hist.is_empty() {
            return Ok(None);
        }
        let tags = self.tag_embedding(g, hist, 1)?;
        let mut feats = Vec::with_capacity(hist.len() * 3);
        for &i in hist {
            feats.extend([prep.u[i] - 0.5, prep.x[i], prep.z[i]]);
        }
        let f = g.leaf(Tensor::new(vec![hist.len(), 3], feats)?);
        let v = self.value.forward(g, &self.params, f)?;
        let tok = g.add(tags, v)?;
        let mut h = self.input.forward(g, &self.params, tok)?;
        for block in &self.encoder {
            h = block.forward(g, &self.params, h, None)?;
        }
        Ok(Some(self.encoder_norm.forward(g, &self.params, h)?))
    }

    /// Density-head parameters for `targets`, `[N_P, head_params]`.
    pub fn target_heads(
        &self,
        g: &mut Graph,
        ctx: Option<Var>,
        targets: &[usize],
        noise: &Tensor,
    ) -> Result<Var, TensorError> {
        let tags = self.tag_embedding(g, targets, 0)?;
        let n = g.leaf(noise.clone());
        let tok = g.add(tags, n)?;
        let mut y = self.input.forward(g, &self.params, tok)?;
        for block in &self.decoder {
            y = block.forward(g, &self.params, y, Some(ctx))?;
        }
        let y = self.decoder_norm.forward(g, &self.params, y)?;
        self.head.forward(g, &self.params, y)
    }

    fn noise(&self, n: usize, rng: &mut StreamRng) -> Tensor {
        Tensor::randn(&[n, self.config.embed_dim], self.config.target_noise, rng)
    }

    /// `Σ_{targets} −log c` for one sample, on the graph.
    pub fn sample_nll(
        &self,
        g: &mut Graph,
        prep: &Prepared,
        observed: &[bool],
        noise: &Tensor,
    ) -> Result<Var, TensorError> {
        let hist: Vec<usize> = (0..observed.len()).filter(|&i| observed[i]).collect();
        let targets: Vec<usize> = (0..observed.len()).filter(|&i| !observed[i]).collect();
        let ctx = self.encode_context(g, prep, &hist)?;
        let theta = self.target_heads(g, ctx, &targets, noise)?;
        let zt: Vec<f64> = targets.iter().map(|&i| prep.z[i]).collect();
        let z_sq: f64 = zt.iter().map(|z| 0.5 * z * z).sum();
        let z = g.leaf(Tensor::new(vec![targets.len(), 1], zt)?);
        let (t, logdet) = flow_graph(g, theta, z, self.config.flow_layers, self.config.flow_units)?;
        let sq = g.square(t);
        let half = g.scale(sq, 0.5);
        let per = g.sub(half, logdet)?;
        let total = g.sum(per);
        Ok(g.add_scalar(total, -z_sq))
    }

    /// Conditional densities of every unobserved coordinate.
    pub fn conditionals(
        &self,
        prep: &Prepared,
        observed: &[bool],
        rng: &mut StreamRng,
    ) -> Result<Conditionals, CopulaError> {
        let targets: Vec<usize> = (0..observed.len()).filter(|&i| !observed[i]).collect();
        self.conditionals_for(prep, observed, &targets, rng)
    }

    /// Conditional densities of `targets` given the coordinates flagged in
    /// `observed`.
    pub fn conditionals_for(
        &self,
        prep: &Prepared,
        observed: &[bool],
        targets: &[usize],
        rng: &mut StreamRng,
    ) -> Result<Conditionals, CopulaError> {
        if observed.len() != self.dim() {
            return Err(CopulaError::Length {
                expected: self.dim(),
                got: observed.len(),
            });
        }
        let hist: Vec<usize> = (0..observed.len()).filter(|&i| observed[i]).collect();
        let noise = self.noise(targets.len(), rng);
        let mut g = Graph::new();
        let ctx = self.encode_context(&mut g, prep, &hist)?;
        let theta = self.target_heads(&mut g, ctx, targets, &noise)?;
        let t = g.value(theta);
        Ok(Conditionals {
            targets: targets.to_vec(),
            heads: (0..t.rows())
                .map(|r| Flow::new(t.row(r), self.config.flow_layers, self.config.flow_units))
                .collect(),
        })
    }

    /// `S` posterior draws of the full coordinate vector. Observed entries
    /// are copied through unchanged.
    pub fn sample_posterior(
        &self,
        bank: &FrozenBank,
        values: &[f64],
        observed: &[bool],
        samples: usize,
        mode: SamplingMode,
        rng: &mut StreamRng,
    ) -> Result<Vec<Vec<f64>>, CopulaError> {
        if values.len() != self.dim() {
            return Err(CopulaError::Length {
                expected: self.dim(),
                got: values.len(),
            });
        }
        let prep = Prepared::new(bank, values, observed)?;
        match mode {
            SamplingMode::Joint => {
                let cond = self.conditionals(&prep, observed, rng)?;
                (0..samples)
                    .map(|_| {
                        let mut out = values.to_vec();
                        for (j, &i) in cond.targets.iter().enumerate() {
                            out[i] = bank.inverse_transform(i, cond.sample_z(j, rng))?;
                        }
                        Ok(out)
                    })
                    .collect()
            }
            SamplingMode::Sequential => (0..samples)
                .map(|_| self.sample_sequential(bank, &prep, observed, rng))
                .collect(),
        }
    }

    fn sample_sequential(
        &self,
        bank: &FrozenBank,
        prep: &Prepared,
        observed: &[bool],
        rng: &mut StreamRng,
    ) -> Result<Vec<f64>, CopulaError> {
        let l = &self.layout;
        let mut prep = prep.clone();
        let mut seen = observed.to_vec();
        let mut groups: Vec<(f64, Vec<usize>)> = Vec::new();
        for i in (0..seen.len()).filter(|&i| !seen[i]) {
            match groups.iter_mut().find(|(p, _)| *p == l.position[i]) {
                Some((_, v)) => v.push(i),
                None => groups.push((l.position[i], vec![i])),
            }
        }
        groups.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (_, group) in groups {
            let cond = self.conditionals_for(&prep, &seen, &group, rng)?;
            for (j, &i) in group.iter().enumerate() {
                let z = cond.sample_z(j, rng);
                prep.z[i] = z;
                prep.u[i] = norm_cdf(z);
                prep.x[i] = bank.inverse_transform(i, z)?;
                if !l.hidden_kinds.contains(&l.kind[i]) {
                    seen[i] = true;
                }
            }
        }
        Ok(prep.x)
    }
}

/// Frozen per-target density heads from one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Conditionals {
    pub targets: Vec<usize>,
    heads: Vec<Flow>,
}

impl Conditionals {
    /// `log c_j(u)` for the `j`-th target; `u` is clamped to `[ε, 1 − ε]`.
    pub fn log_density(&self, j: usize, u: f64) -> f64 {
        let u = u.clamp(crate::marginal::UNIFORM_EPS, 1.0 - crate::marginal::UNIFORM_EPS);
        let z = probit(u);
        self.log_density_z(j, z)
    }

    /// `log c_j` at Gaussianized value `z = Φ⁻¹(u)`.
    pub fn log_density_z(&self, j: usize, z: f64) -> f64 {
        let (t, logdet) = self.heads[j].eval(z);
        -0.5 * t * t + logdet + 0.5 * z * z
    }

    /// Conditional CDF of the `j`-th target at Gaussianized value `z`.
    pub fn cdf_z(&self, j: usize, z: f64) -> f64 {
        norm_cdf(self.heads[j].eval(z).0)
    }

    /// Draw `z = Φ⁻¹(u)` from the `j`-th conditional, clamped to `±Z_MAX`.
    pub fn sample_z(&self, j: usize, rng: &mut StreamRng) -> f64 {
        self.quantile_z(j, rng.sample(StandardNormal))
    }

    /// Gaussianized target value whose head output is the standard normal
    /// value `e`, clamped to `±Z_MAX`.
    pub fn quantile_z(&self, j: usize, e: f64) -> f64 {
        self.heads[j].inverse(e).clamp(-Z_MAX, Z_MAX)
    }

    /// [`Self::quantile_z`] started from a nearby solution.
    pub fn quantile_z_near(&self, j: usize, e: f64, guess: f64) -> f64 {
        self.heads[j].inverse_near(e, guess).clamp(-Z_MAX, Z_MAX)
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// `Φ⁻¹(u)` by Newton iterations on `Φ`, started from a logistic guess.
pub fn probit(u: f64) -> f64 {
    let mut z = (u / (1.0 - u)).ln() / 1.702;
    for _ in 0..100 {
        let f = norm_cdf(z) - u;
        let d = (-0.5 * z * z).exp() / (2.0 * PI).sqrt();
        if d <= 0.0 {
            break;
        }
        let step = f / d;
        z -= step.clamp(-1.0, 1.0);
        if step.abs() < 1e-15 * (1.0 + z.abs()) {
            break;
        }
    }
    z
}

/// A copula paired with frozen marginals and a `(values, observed)` stream.
pub struct CopulaTraining<'a, F> {
    pub model: &'a mut AttentionalCopula,
    pub bank: &'a FrozenBank,
    pub sampler: F,
}

impl<F: Fn(&mut StreamRng) -> (Vec<f64>, Vec<bool>)> Objective for CopulaTraining<'_, F> {
    fn params(&self) -> &ParamStore {
        &self.model.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.model.params
    }

    fn batch(&self, batch_size: usize, rng: &mut StreamRng) -> Result<(f64, Vec<Tensor>), TrainError> {
        let mut grads: Vec<Tensor> = self.model.params.iter().map(|t| Tensor::zeros(t.shape())).collect();
        let mut total = 0.0;
        let inv = 1.0 / batch_size.max(1) as f64;
        for _ in 0..batch_size {
            let (values, observed) = (self.sampler)(rng);
            let all = vec![true; values.len()];
            let prep = Prepared::new(self.bank, &values, &all).map_err(|e| TrainError::Sample(e.to_string()))?;
            let n_targets = observed.iter().filter(|o| !**o).count();
            let noise = self.model.noise(n_targets, rng);
            let mut g = Graph::new();
            let nll = self.model.sample_nll(&mut g, &prep, &observed, &noise)?;
            let loss = g.scale(nll, inv);
            total += g.value(loss).item();
            for (acc, gr) in grads.iter_mut().zip(g.backward(loss)?.params(&g, &self.model.params)) {
                acc.data_mut().iter_mut().zip(gr.data()).for_each(|(a, b)| *a += b);
            }
        }
        Ok((total, grads))
    }
}
