//! Deep sigmoidal flow layer: `y = logit(Σ_j w_j σ(a_j z + b_j))` with
//! `a_j > 0` and `w` on the simplex, so `y` is strictly increasing in `z`.
//!
//! Everything is evaluated in log space: `log S` and `log(1 − S)` are both
//! log-sum-exps of log-sigmoids, which stays finite deep in the tails.

use crate::special::{log_sigmoid, softplus};
use crate::tensor::{Graph, TensorError, Var};

/// Raw slope parameters are shifted so that a raw value of zero gives a
/// slope of one.
pub const SLOPE_OFFSET: f64 = 0.541_324_854_612_918_1;

#[derive(Clone, Copy)]
struct Lse {
    max: f64,
    sum: f64,
}

impl Lse {
    fn new() -> Self {
        Lse {
            max: f64::NEG_INFINITY,
            sum: 0.0,
        }
    }

    fn push(&mut self, v: f64) {
        if v == f64::NEG_INFINITY {
            return;
        }
        if v > self.max {
            self.sum = self.sum * (self.max - v).exp() + 1.0;
            self.max = v;
        } else {
            self.sum += (v - self.max).exp();
        }
    }

    fn value(self) -> f64 {
        self.max + self.sum.ln()
    }
}

/// One layer on a scalar: returns `(y, log dy/dz)`.
pub fn layer_eval(z: f64, a_raw: &[f64], b: &[f64], w_raw: &[f64]) -> (f64, f64) {
    let mut wn = Lse::new();
    for &w in w_raw {
        wn.push(w);
    }
    let wn = wn.value();
    let (mut pos, mut neg, mut der) = (Lse::new(), Lse::new(), Lse::new());
    for j in 0..a_raw.len() {
        let a = softplus(a_raw[j] + SLOPE_OFFSET);
        let t = a * z + b[j];
        let lw = w_raw[j] - wn;
        let (lp, ln) = (log_sigmoid(t), log_sigmoid(-t));
        pos.push(lw + lp);
        neg.push(lw + ln);
        der.push(lw + a.ln() + lp + ln);
    }
    let (ls, l1s) = (pos.value(), neg.value());
    (ls - l1s, der.value() - ls - l1s)
}

/// Batched layer on the graph: `z` is `[N, 1]`, parameters `[N, H]`.
/// Returns `(y, log dy/dz)`, both `[N, 1]`.
pub fn layer_graph(g: &mut Graph, z: Var, a_raw: Var, b: Var, w_raw: Var) -> Result<(Var, Var), TensorError> {
    let lw = g.log_softmax_rows(w_raw)?;
    let shifted = g.add_scalar(a_raw, SLOPE_OFFSET);
    let a = g.softplus(shifted);
    let az = g.mul_col(a, z)?;
    let t = g.add(az, b)?;
    let lp = g.log_sigmoid(t);
    let nt = g.neg(t);
    let ln = g.log_sigmoid(nt);
    let pos = g.add(lw, lp)?;
    let neg = g.add(lw, ln)?;
    let ls = g.logsumexp_rows(pos);
    let l1s = g.logsumexp_rows(neg);
    let y = g.sub(ls, l1s)?;
    let la = g.log(a);
    let d1 = g.add(lw, la)?;
    let d2 = g.add(d1, lp)?;
    let d3 = g.add(d2, ln)?;
    let der = g.logsumexp_rows(d3);
    let both = g.add(ls, l1s)?;
    let logdet = g.sub(der, both)?;
    Ok((y, logdet))
}

/// Parameters per flow: input affine, `layers` sigmoidal layers of `units`
/// units, output affine.
///
/// Layout: `[in_shift, in_log_scale, out_shift, out_log_scale,
/// (slope_raw[units], bias[units], weight_raw[units]) × layers]`. All zeros
/// is the identity.
pub fn flow_len(layers: usize, units: usize) -> usize {
    4 + 3 * layers * units
}

/// `(T(x), log T'(x))` for one flow.
pub fn flow_eval(p: &[f64], layers: usize, units: usize, x: f64) -> (f64, f64) {
    let h = units;
    let mut z = p[1].exp() * x + p[0];
    let mut logdet = p[1] + p[3];
    for l in 0..layers {
        let base = 4 + 3 * h * l;
        let (y, lj) = layer_eval(
            z,
            &p[base..base + h],
            &p[base + h..base + 2 * h],
            &p[base + 2 * h..base + 3 * h],
        );
        z = y;
        logdet += lj;
    }
    (p[3].exp() * z + p[2], logdet)
}

/// Solve `T(x) = y` by safeguarded Newton steps inside a bracket grown by
/// doubling from `[−1, 1]`.
pub fn flow_inverse(p: &[f64], layers: usize, units: usize, y: f64) -> f64 {
    solve(|x| flow_eval(p, layers, units, x), y)
}

fn solve(f: impl Fn(f64) -> (f64, f64), y: f64) -> f64 {
    let (mut lo, mut hi) = (-1.0f64, 1.0f64);
    let (mut flo, mut fhi) = (f(lo).0, f(hi).0);
    while flo > y && lo > -1e300 {
        hi = lo;
        fhi = flo;
        lo *= 2.0;
        flo = f(lo).0;
    }
    while fhi < y && hi < 1e300 {
        lo = hi;
        flo = fhi;
        hi *= 2.0;
        fhi = f(hi).0;
    }
    let frac = (y - flo) / (fhi - flo);
    let mut x = if frac.is_finite() { lo + frac.clamp(0.0, 1.0) * (hi - lo) } else { 0.5 * (lo + hi) };
    for _ in 0..400 {
        let (t, lj) = f(x);
        let r = t - y;
        if r > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let newton = x - r / lj.exp();
        let next = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        let step = (next - x).abs();
        x = next;
        if step <= 1e-14 * (1.0 + x.abs()) || hi - lo <= 1e-15 * (1.0 + x.abs()) {
            break;
        }
    }
    x
}

/// A flow with its per-unit constants precomputed for repeated scalar use.
#[derive(Clone, Debug, PartialEq)]
pub struct Flow {
    affine: [f64; 4],
    units: usize,
    a: Vec<f64>,
    ln_a: Vec<f64>,
    b: Vec<f64>,
    lw: Vec<f64>,
}

impl Flow {
    /// Unpack a parameter vector laid out as in [`flow_len`].
    pub fn new(p: &[f64], layers: usize, units: usize) -> Self {
        let h = units;
        let mut f = Flow {
            affine: [p[0], p[1], p[2], p[3]],
            units,
            a: Vec::with_capacity(layers * h),
            ln_a: Vec::with_capacity(layers * h),
            b: Vec::with_capacity(layers * h),
            lw: Vec::with_capacity(layers * h),
        };
        for l in 0..layers {
            let base = 4 + 3 * h * l;
            let w = &p[base + 2 * h..base + 3 * h];
            let mut wn = Lse::new();
            w.iter().for_each(|&v| wn.push(v));
            let wn = wn.value();
            for j in 0..h {
                let a = softplus(p[base + j] + SLOPE_OFFSET);
                f.a.push(a);
                f.ln_a.push(a.ln());
                f.b.push(p[base + h + j]);
                f.lw.push(w[j] - wn);
            }
        }
        f
    }

    /// `(T(x), log T'(x))`.
    pub fn eval(&self, x: f64) -> (f64, f64) {
        let [in_shift, in_log, out_shift, out_log] = self.affine;
        let mut z = in_log.exp() * x + in_shift;
        let mut logdet = in_log + out_log;
        if self.units > 0 {
            for l in 0..self.a.len() / self.units {
                let r = l * self.units..(l + 1) * self.units;
                let (mut pos, mut neg, mut der) = (Lse::new(), Lse::new(), Lse::new());
                for j in r {
                    let t = self.a[j] * z + self.b[j];
                    let (lp, ln) = if t >= 0.0 {
                        let lp = -(-t).exp().ln_1p();
                        (lp, lp - t)
                    } else {
                        let ln = -t.exp().ln_1p();
                        (ln + t, ln)
                    };
                    pos.push(self.lw[j] + lp);
                    neg.push(self.lw[j] + ln);
                    der.push(self.lw[j] + self.ln_a[j] + lp + ln);
                }
                let (ls, l1s) = (pos.value(), neg.value());
                z = ls - l1s;
                logdet += der.value() - ls - l1s;
            }
        }
        (out_log.exp() * z + out_shift, logdet)
    }

    /// Solve `T(x) = y`; see [`flow_inverse`].
    pub fn inverse(&self, y: f64) -> f64 {
        solve(|x| self.eval(x), y)
    }

    /// Solve `T(x) = y` by plain Newton steps from `guess`, falling back to
    /// the bracketed solver if they stop contracting.
    pub fn inverse_near(&self, y: f64, guess: f64) -> f64 {
        let mut x = guess;
        let mut last = f64::INFINITY;
        for _ in 0..30 {
            let (t, lj) = self.eval(x);
            let r = t - y;
            let step = r / lj.exp();
            if !(r.abs() < last) || !step.is_finite() {
                break;
            }
            x -= step;
            if step.abs() <= 1e-14 * (1.0 + x.abs()) {
                return x;
            }
            last = r.abs();
        }
        self.inverse(y)
    }
}

/// Batched flows on the graph: `theta` is `[N, flow_len]`, `x` is `[N, 1]`.
pub fn flow_graph(
    g: &mut Graph,
    theta: Var,
    x: Var,
    layers: usize,
    units: usize,
) -> Result<(Var, Var), TensorError> {
    let h = units;
    let in_shift = g.slice_cols(theta, 0, 1)?;
    let in_log = g.slice_cols(theta, 1, 1)?;
    let out_shift = g.slice_cols(theta, 2, 1)?;
    let out_log = g.slice_cols(theta, 3, 1)?;
    let sc = g.exp(in_log);
    let zx = g.mul(sc, x)?;
    let mut z = g.add(zx, in_shift)?;
    let mut logdet = g.add(in_log, out_log)?;
    for l in 0..layers {
        let base = 4 + 3 * h * l;
        let a = g.slice_cols(theta, base, h)?;
        let b = g.slice_cols(theta, base + h, h)?;
        let w = g.slice_cols(theta, base + 2 * h, h)?;
        let (y, lj) = layer_graph(g, z, a, b, w)?;
        z = y;
        logdet = g.add(logdet, lj)?;
    }
    let so = g.exp(out_log);
    let zo = g.mul(so, z)?;
    let t = g.add(zo, out_shift)?;
    Ok((t, logdet))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn prepared_flow_matches_raw_evaluation() {
        let mut rng = crate::rng::substream(3, "flow", 0);
        for _ in 0..50 {
            let p: Vec<f64> = (0..flow_len(2, 5)).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let f = Flow::new(&p, 2, 5);
            for x in [-30.0, -2.0, 0.0, 0.7, 4.0, 50.0] {
                let (a, b) = (flow_eval(&p, 2, 5, x), f.eval(x));
                assert!((a.0 - b.0).abs() < 1e-10 * (1.0 + a.0.abs()) && (a.1 - b.1).abs() < 1e-10 * (1.0 + a.1.abs()));
            }
            let y = f.eval(1.3).0;
            assert!((f.inverse(y) - 1.3).abs() < 1e-9);
            for guess in [-40.0, 0.0, 1.2, 9.0] {
                assert!((f.inverse_near(y, guess) - 1.3).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn flow_inverse_round_trip() {
        let p: Vec<f64> = (0..flow_len(2, 3)).map(|i| ((i * 7) as f64 * 0.37).sin()).collect();
        for x in [-40.0, -3.0, 0.1, 2.0, 17.0] {
            let (y, _) = flow_eval(&p, 2, 3, x);
            assert!((flow_inverse(&p, 2, 3, y) - x).abs() < 1e-9 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn zero_parameters_give_identity() {
        for z in [-30.0, -2.0, 0.0, 0.7, 25.0] {
            let (y, lj) = layer_eval(z, &[0.0; 3], &[0.0; 3], &[0.3, -1.0, 2.0]);
            assert!((y - z).abs() < 1e-9 * (1.0 + z.abs()), "{z} -> {y}");
            assert!(lj.abs() < 1e-9);
        }
    }

    #[test]
    fn scalar_and_graph_agree_and_derivative_is_right() {
        let a = [0.3, -0.8];
        let b = [0.5, -1.2];
        let w = [0.1, 0.4];
        let zs = [-3.0, -0.2, 1.1, 6.0];
        let mut g = Graph::new();
        let row = |v: &[f64; 2]| -> Tensor {
            let mut d = Vec::new();
            for _ in 0..4 {
                d.extend_from_slice(v);
            }
            Tensor::new(vec![4, 2], d).unwrap()
        };
        let z = g.leaf(Tensor::new(vec![4, 1], zs.to_vec()).unwrap());
        let (av, bv, wv) = (g.leaf(row(&a)), g.leaf(row(&b)), g.leaf(row(&w)));
        let (y, lj) = layer_graph(&mut g, z, av, bv, wv).unwrap();
        for (n, &zz) in zs.iter().enumerate() {
            let (ys, ls) = layer_eval(zz, &a, &b, &w);
            assert!((g.value(y).data()[n] - ys).abs() < 1e-12);
            assert!((g.value(lj).data()[n] - ls).abs() < 1e-12);
            let h = 1e-6;
            let fd = (layer_eval(zz + h, &a, &b, &w).0 - layer_eval(zz - h, &a, &b, &w).0) / (2.0 * h);
            assert!((fd.ln() - ls).abs() < 1e-6);
        }
    }
}
