//! Reusable layers on top of the autodiff graph.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::{Graph, ParamId, ParamStore, Tensor, TensorError, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    pub fn apply(self, g: &mut Graph, x: Var) -> Var {
        match self {
            Activation::Tanh => g.tanh(x),
            Activation::Relu => g.relu(x),
        }
    }

    pub fn eval(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }
}

/// Affine map `x·W + b` on row vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    /// Weights `N(0, (gain²/fan_in))`, zero bias.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let std = gain / (fan_in.max(1) as f64).sqrt();
        let weight = store.add(format!("{name}.w"), Tensor::randn(&[fan_in, fan_out], std, rng));
        let bias = store.add(format!("{name}.b"), Tensor::zeros(&[1, fan_out]));
        Linear {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, TensorError> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }

    /// Plain evaluation of one row vector.
    pub fn eval(&self, store: &ParamStore, x: &[f64]) -> Vec<f64> {
        let w = store.get(self.weight);
        let mut out = store.get(self.bias).data().to_vec();
        for (i, xi) in x.iter().enumerate() {
            for (o, wij) in out.iter_mut().zip(w.row(i)) {
                *o += xi * wij;
            }
        }
        out
    }
}

/// Stack of linear layers with an activation between them (none after the
/// last one).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

impl Mlp {
    /// `widths = [in, hidden…, out]`; the last layer's weights are scaled by
    /// `last_gain`.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        widths: &[usize],
        activation: Activation,
        last_gain: f64,
        rng: &mut R,
    ) -> Self {
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|l| {
                let gain = if l + 1 == n { last_gain } else { 1.0 };
                Linear::new(store, &format!("{name}.{l}"), widths[l], widths[l + 1], gain, rng)
            })
            .collect();
        Mlp { layers, activation }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, mut x: Var) -> Result<Var, TensorError> {
        let n = self.layers.len();
        for (l, layer) in self.layers.iter().enumerate() {
            x = layer.forward(g, store, x)?;
            if l + 1 < n {
                x = self.activation.apply(g, x);
            }
        }
        Ok(x)
    }

    pub fn eval(&self, store: &ParamStore, x: &[f64]) -> Vec<f64> {
        let n = self.layers.len();
        let mut h = x.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            h = layer.eval(store, &h);
            if l + 1 < n {
                h.iter_mut().for_each(|v| *v = self.activation.eval(*v));
            }
        }
        h
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.fan_out)
    }

    /// Zero the last layer so the output is exactly the bias (zero).
    pub fn zero_last(&self, store: &mut ParamStore) {
        if let Some(l) = self.layers.last() {
            store.get_mut(l.weight).data_mut().iter_mut().for_each(|v| *v = 0.0);
            store.get_mut(l.bias).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

/// Layer-norm gain and bias.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Norm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl Norm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Norm {
            gain: store.add(format!("{name}.g"), Tensor::full(&[1, dim], 1.0)),
            bias: store.add(format!("{name}.b"), Tensor::zeros(&[1, dim])),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, TensorError> {
        let gain = g.param(store, self.gain);
        let bias = g.param(store, self.bias);
        g.layer_norm(x, gain, bias, 1e-5)
    }
}
