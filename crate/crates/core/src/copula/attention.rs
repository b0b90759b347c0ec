use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{Activation, Linear, Mlp, Norm};
use crate::tensor::{Graph, ParamStore, TensorError, Var};

/// Multi-head scaled dot-product attention.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
}

impl Attention {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut R) -> Self {
        Attention {
            q: Linear::new(store, &format!("{name}.q"), dim, dim, 1.0, rng),
            k: Linear::new(store, &format!("{name}.k"), dim, dim, 1.0, rng),
            v: Linear::new(store, &format!("{name}.v"), dim, dim, 1.0, rng),
            o: Linear::new(store, &format!("{name}.o"), dim, dim, 1.0, rng),
            heads,
        }
    }

    /// Queries `x` (`[Nq, dim]`) attend over `ctx` (`[Nk, dim]`, `Nk ≥ 1`).
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, ctx: Var) -> Result<Var, TensorError> {
        let q = self.q.forward(g, store, x)?;
        let k = self.k.forward(g, store, ctx)?;
        let v = self.v.forward(g, store, ctx)?;
        let dh = self.q.fan_out / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.slice_cols(q, h * dh, dh)?;
            let kh = g.slice_cols(k, h * dh, dh)?;
            let vh = g.slice_cols(v, h * dh, dh)?;
            let s = g.matmul_t(qh, kh)?;
            let s = g.scale(s, scale);
            let a = g.softmax_rows(s);
            outs.push(g.matmul(a, vh)?);
        }
        let cat = if outs.len() == 1 { outs[0] } else { g.concat_cols(&outs)? };
        self.o.forward(g, store, cat)
    }
}

/// Pre-norm residual block: attention (self or cross), then feed-forward.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    norm_attn: Norm,
    attn: Attention,
    norm_ff: Norm,
    ff: Mlp,
}

impl Block {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        ff_dim: usize,
        rng: &mut R,
    ) -> Self {
        Block {
            norm_attn: Norm::new(store, &format!("{name}.ln1"), dim),
            attn: Attention::new(store, &format!("{name}.attn"), dim, heads, rng),
            norm_ff: Norm::new(store, &format!("{name}.ln2"), dim),
            ff: Mlp::new(store, &format!("{name}.ff"), &[dim, ff_dim, dim], Activation::Relu, 1.0, rng),
        }
    }

    /// Self-attention when `ctx` is `None`; cross-attention over `ctx`
    /// otherwise. An empty context contributes nothing.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        ctx: Option<Option<Var>>,
    ) -> Result<Var, TensorError> {
        let mut x = match ctx {
            None => {
                let n = self.norm_attn.forward(g, store, x)?;
                let a = self.attn.forward(g, store, n, n)?;
                g.add(x, a)?
            }
            Some(Some(c)) => {
                let n = self.norm_attn.forward(g, store, x)?;
                let a = self.attn.forward(g, store, n, c)?;
                g.add(x, a)?
            }
            Some(None) => x,
        };
        let n = self.norm_ff.forward(g, store, x)?;
        let f = self.ff.forward(g, store, n)?;
        x = g.add(x, f)?;
        Ok(x)
    }
}
