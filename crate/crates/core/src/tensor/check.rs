//! Central-difference gradient checks for the tape.

use rand::Rng;

use super::{Graph, Tensor, Var};
use crate::rng::{substream, StreamRng};

const STEP: f64 = 1e-5;

/// Max-abs relative discrepancy between analytic and central-difference
/// gradients of `build` with respect to each input tensor.
pub fn gradcheck(inputs: &[Tensor], build: &dyn Fn(&mut Graph, &[Var]) -> Var) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let loss = build(&mut g, &vars);
    let back = g.backward(loss).unwrap();
    let eval = |ins: &[Tensor]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.leaf(t.clone())).collect();
        let l = build(&mut g, &vars);
        g.value(l).item()
    };
    let mut worst: f64 = 0.0;
    for (k, t) in inputs.iter().enumerate() {
        let analytic = back.wrt(&g, vars[k]);
        let mut numeric = vec![0.0; t.len()];
        for i in 0..t.len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= STEP;
            numeric[i] = (eval(&plus) - eval(&minus)) / (2.0 * STEP);
        }
        let scale = analytic
            .data()
            .iter()
            .chain(&numeric)
            .fold(1e-3_f64, |m, v| m.max(v.abs()));
        for (a, n) in analytic.data().iter().zip(&numeric) {
            worst = worst.max((a - n).abs() / scale);
        }
    }
    worst
}

/// Contract an arbitrary-shaped output with fixed random weights.
pub fn weighted_sum(g: &mut Graph, out: Var, seed: u64) -> Var {
    let mut rng = substream(seed, "gradcheck/weights", 0);
    let shape = g.value(out).shape().to_vec();
    let w = g.leaf(Tensor::randn(&shape, 1.0, &mut rng));
    let p = g.mul(out, w).unwrap();
    g.sum(p)
}

fn randn(shape: &[usize], rng: &mut StreamRng) -> Tensor {
    Tensor::randn(shape, 1.0, rng)
}

fn positive(shape: &[usize], rng: &mut StreamRng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(0.2..3.0)).collect()).unwrap()
}

/// Name, input generator and op under test.
pub type OpCase = (
    &'static str,
    fn(&mut StreamRng) -> Vec<Tensor>,
    fn(&mut Graph, &[Var]) -> Var,
);

pub fn op_cases() -> Vec<OpCase> {
    vec![
        ("matmul", |r| vec![randn(&[3, 4], r), randn(&[4, 2], r)], |g, v| g.matmul(v[0], v[1]).unwrap()),
        ("matmul_t", |r| vec![randn(&[3, 4], r), randn(&[5, 4], r)], |g, v| g.matmul_t(v[0], v[1]).unwrap()),
        ("add", |r| vec![randn(&[2, 3], r), randn(&[2, 3], r)], |g, v| g.add(v[0], v[1]).unwrap()),
        ("sub", |r| vec![randn(&[2, 3], r), randn(&[2, 3], r)], |g, v| g.sub(v[0], v[1]).unwrap()),
        ("mul", |r| vec![randn(&[2, 3], r), randn(&[2, 3], r)], |g, v| g.mul(v[0], v[1]).unwrap()),
        ("add_row", |r| vec![randn(&[4, 3], r), randn(&[3], r)], |g, v| g.add_row(v[0], v[1]).unwrap()),
        ("mul_row", |r| vec![randn(&[4, 3], r), randn(&[3], r)], |g, v| g.mul_row(v[0], v[1]).unwrap()),
        ("add_col", |r| vec![randn(&[4, 3], r), randn(&[4, 1], r)], |g, v| g.add_col(v[0], v[1]).unwrap()),
        ("mul_col", |r| vec![randn(&[4, 3], r), randn(&[4, 1], r)], |g, v| g.mul_col(v[0], v[1]).unwrap()),
        ("scale", |r| vec![randn(&[3, 3], r)], |g, v| g.scale(v[0], -1.7)),
        ("add_scalar", |r| vec![randn(&[3, 3], r)], |g, v| g.add_scalar(v[0], 0.3)),
        ("sigmoid", |r| vec![randn(&[3, 3], r)], |g, v| g.sigmoid(v[0])),
        ("softplus", |r| vec![randn(&[3, 3], r)], |g, v| g.softplus(v[0])),
        ("log_sigmoid", |r| vec![randn(&[3, 3], r)], |g, v| g.log_sigmoid(v[0])),
        ("tanh", |r| vec![randn(&[3, 3], r)], |g, v| g.tanh(v[0])),
        ("relu", |r| vec![randn(&[3, 3], r)], |g, v| g.relu(v[0])),
        ("exp", |r| vec![randn(&[3, 3], r)], |g, v| g.exp(v[0])),
        ("log", |r| vec![positive(&[3, 3], r)], |g, v| g.log(v[0])),
        ("square", |r| vec![randn(&[3, 3], r)], |g, v| g.square(v[0])),
        ("softmax_rows", |r| vec![randn(&[3, 5], r)], |g, v| g.softmax_rows(v[0])),
        ("logsumexp_rows", |r| vec![randn(&[3, 5], r)], |g, v| g.logsumexp_rows(v[0])),
        ("log_softmax_rows", |r| vec![randn(&[3, 5], r)], |g, v| g.log_softmax_rows(v[0]).unwrap()),
        (
            "layer_norm",
            |r| vec![randn(&[3, 6], r), randn(&[6], r), randn(&[6], r)],
            |g, v| g.layer_norm(v[0], v[1], v[2], 1e-5).unwrap(),
        ),
        (
            "concat_cols",
            |r| vec![randn(&[3, 2], r), randn(&[3, 4], r)],
            |g, v| g.concat_cols(&[v[0], v[1]]).unwrap(),
        ),
        (
            "concat_rows",
            |r| vec![randn(&[2, 3], r), randn(&[4, 3], r)],
            |g, v| g.concat_rows(&[v[0], v[1]]).unwrap(),
        ),
        ("slice_cols", |r| vec![randn(&[3, 6], r)], |g, v| g.slice_cols(v[0], 2, 3).unwrap()),
        ("slice_rows", |r| vec![randn(&[5, 2], r)], |g, v| g.slice_rows(v[0], 1, 3).unwrap()),
        ("row_sum", |r| vec![randn(&[4, 3], r)], |g, v| g.row_sum(v[0])),
        ("mean", |r| vec![randn(&[4, 3], r)], |g, v| g.mean(v[0])),
        ("gather_rows", |r| vec![randn(&[4, 3], r)], |g, v| g.gather_rows(v[0], &[2, 0, 2, 3]).unwrap()),
        ("tile_rows", |r| vec![randn(&[2, 3], r)], |g, v| g.tile_rows(v[0], 3)),
        ("reshape", |r| vec![randn(&[2, 6], r)], |g, v| g.reshape(v[0], &[4, 3]).unwrap()),
    ]
}
