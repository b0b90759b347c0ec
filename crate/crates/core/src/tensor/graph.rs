use super::{gemm, ParamId, ParamStore, Tensor, TensorError};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul { a: Var, b: Var, tb: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    AddCol(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Softplus(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    SoftmaxRows(Var),
    LogSumExpRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols { x: Var, start: usize },
    SliceRows { x: Var, start: usize },
    SumAll(Var),
    RowSum(Var),
    Gather { table: Var, index: Vec<usize> },
    TileRows { x: Var, reps: usize },
    Reshape(Var),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// A single-use computation tape.
///
/// Nodes are appended in evaluation order, which is a topological order of
/// the expression DAG; [`Graph::backward`] walks it once in reverse.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// A constant input; gradients flowing into it are still recorded and
    /// can be read back from [`Backward::wrt`].
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).clone(), Op::Param(id))
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = &self.nodes[x.0].value;
        let data = t.data().iter().map(|&v| f(v)).collect();
        let out = Tensor {
            shape: t.shape().to_vec(),
            data,
        };
        self.push(out, op)
    }

    fn zip(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, TensorError> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape() != tb.shape() {
            return Err(mismatch(name, ta, tb));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Tensor {
            shape: ta.shape().to_vec(),
            data,
        };
        Ok(self.push(out, op))
    }

    /// `a · b` for `[m, k] × [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = gemm(self.value(a), false, self.value(b), false)?;
        Ok(self.push(out, Op::MatMul { a, b, tb: false }))
    }

    /// `a · bᵀ` for `[m, k] × [n, k]`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = gemm(self.value(a), false, self.value(b), true)?;
        Ok(self.push(out, Op::MatMul { a, b, tb: true }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    fn check_row(&self, name: &'static str, x: Var, row: Var) -> Result<(), TensorError> {
        let (tx, tr) = (self.value(x), self.value(row));
        if tr.len() != tx.cols() {
            return Err(mismatch(name, tx, tr));
        }
        Ok(())
    }

    fn check_col(&self, name: &'static str, x: Var, col: Var) -> Result<(), TensorError> {
        let (tx, tc) = (self.value(x), self.value(col));
        if tc.len() != tx.rows() || tc.cols() != 1 {
            return Err(mismatch(name, tx, tc));
        }
        Ok(())
    }

    fn row_broadcast(
        &mut self,
        x: Var,
        row: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, TensorError> {
        self.check_row(name, x, row)?;
        let (tx, tr) = (self.value(x), self.value(row));
        let c = tx.cols();
        let data = tx
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| f(v, tr.data()[i % c]))
            .collect();
        let out = Tensor {
            shape: tx.shape().to_vec(),
            data,
        };
        Ok(self.push(out, op))
    }

    fn col_broadcast(
        &mut self,
        x: Var,
        col: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, TensorError> {
        self.check_col(name, x, col)?;
        let (tx, tc) = (self.value(x), self.value(col));
        let c = tx.cols().max(1);
        let data = tx
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| f(v, tc.data()[i / c]))
            .collect();
        let out = Tensor {
            shape: tx.shape().to_vec(),
            data,
        };
        Ok(self.push(out, op))
    }

    /// Adds a length-`cols` vector to every row.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var, TensorError> {
        self.row_broadcast(x, row, "add_row", |a, b| a + b, Op::AddRow(x, row))
    }

    /// Multiplies every row elementwise by a length-`cols` vector.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var, TensorError> {
        self.row_broadcast(x, row, "mul_row", |a, b| a * b, Op::MulRow(x, row))
    }

    /// Adds a `[rows, 1]` column to every column.
    pub fn add_col(&mut self, x: Var, col: Var) -> Result<Var, TensorError> {
        self.col_broadcast(x, col, "add_col", |a, b| a + b, Op::AddCol(x, col))
    }

    /// Multiplies every column elementwise by a `[rows, 1]` column.
    pub fn mul_col(&mut self, x: Var, col: Var) -> Result<Var, TensorError> {
        self.col_broadcast(x, col, "mul_col", |a, b| a * b, Op::MulCol(x, col))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.map(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.map(x, |v| v + c, Op::AddScalar(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.map(x, softplus, Op::Softplus(x))
    }

    /// `log σ(x) = −softplus(−x)`.
    pub fn log_sigmoid(&mut self, x: Var) -> Var {
        let n = self.neg(x);
        let s = self.softplus(n);
        self.neg(s)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(x, f64::tanh, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.map(x, f64::exp, Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.map(x, f64::ln, Op::Log(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.map(x, |v| v * v, Op::Square(x))
    }

    /// Row-wise softmax over the last extent.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let c = t.cols();
        let mut data = t.data().to_vec();
        if c > 0 {
            for row in data.chunks_mut(c) {
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut s = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - m).exp();
                    s += *v;
                }
                for v in row.iter_mut() {
                    *v /= s;
                }
            }
        }
        let out = Tensor {
            shape: t.shape().to_vec(),
            data,
        };
        self.push(out, Op::SoftmaxRows(x))
    }

    /// Row-wise `log Σ exp`, producing a `[rows, 1]` column.
    pub fn logsumexp_rows(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let (r, c) = (t.rows(), t.cols());
        let data = (0..r)
            .map(|i| {
                let row = &t.data()[i * c..(i + 1) * c];
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                if m == f64::NEG_INFINITY {
                    return m;
                }
                m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
            })
            .collect();
        let out = Tensor {
            shape: vec![r, 1],
            data,
        };
        self.push(out, Op::LogSumExpRows(x))
    }

    /// Row-wise `log_softmax`, composed from `logsumexp_rows`.
    pub fn log_softmax_rows(&mut self, x: Var) -> Result<Var, TensorError> {
        let lse = self.logsumexp_rows(x);
        let neg = self.neg(lse);
        self.add_col(x, neg)
    }

    /// Normalizes each row to zero mean and unit variance, then applies a
    /// per-column gain and bias.
    pub fn layer_norm(
        &mut self,
        x: Var,
        gain: Var,
        bias: Var,
        eps: f64,
    ) -> Result<Var, TensorError> {
        self.check_row("layer_norm", x, gain)?;
        self.check_row("layer_norm", x, bias)?;
        let (tx, tg, tb) = (self.value(x), self.value(gain), self.value(bias));
        let (r, c) = (tx.rows(), tx.cols());
        let mut xhat = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            let row = &tx.data()[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..c {
                let xh = (row[j] - mean) * is;
                xhat[i * c + j] = xh;
                data[i * c + j] = xh * tg.data()[j] + tb.data()[j];
            }
        }
        let out = Tensor {
            shape: tx.shape().to_vec(),
            data,
        };
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = self.value(parts[0]);
        let r = first.rows();
        for p in parts {
            if self.value(*p).rows() != r {
                return Err(mismatch("concat_cols", first, self.value(*p)));
            }
        }
        let widths: Vec<usize> = parts.iter().map(|p| self.value(*p).cols()).collect();
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; r * total];
        let mut offset = 0;
        for (p, &w) in parts.iter().zip(&widths) {
            let t = self.value(*p);
            for i in 0..r {
                data[i * total + offset..i * total + offset + w]
                    .copy_from_slice(&t.data()[i * w..(i + 1) * w]);
            }
            offset += w;
        }
        let out = Tensor {
            shape: vec![r, total],
            data,
        };
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let c = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let t = self.value(*p);
            if t.cols() != c {
                return Err(mismatch("concat_rows", self.value(parts[0]), t));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let out = Tensor {
            shape: vec![rows, c],
            data,
        };
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let t = self.value(x);
        let (r, c) = (t.rows(), t.cols());
        if start + len > c {
            return Err(TensorError::OutOfRange {
                op: "slice_cols",
                start,
                end: start + len,
                extent: c,
            });
        }
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&t.data()[i * c + start..i * c + start + len]);
        }
        let out = Tensor {
            shape: vec![r, len],
            data,
        };
        Ok(self.push(out, Op::SliceCols { x, start }))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let t = self.value(x);
        let (r, c) = (t.rows(), t.cols());
        if start + len > r {
            return Err(TensorError::OutOfRange {
                op: "slice_rows",
                start,
                end: start + len,
                extent: r,
            });
        }
        let data = t.data()[start * c..(start + len) * c].to_vec();
        let out = Tensor {
            shape: vec![len, c],
            data,
        };
        Ok(self.push(out, Op::SliceRows { x, start }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1) as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Sum over the last extent, producing a `[rows, 1]` column.
    pub fn row_sum(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let c = t.cols();
        let data: Vec<f64> = if c == 0 {
            vec![0.0; t.rows()]
        } else {
            t.data().chunks(c).map(|r| r.iter().sum()).collect()
        };
        let out = Tensor {
            shape: vec![data.len(), 1],
            data,
        };
        self.push(out, Op::RowSum(x))
    }

    /// Selects rows of `table` (an embedding lookup).
    pub fn gather_rows(&mut self, table: Var, index: &[usize]) -> Result<Var, TensorError> {
        let t = self.value(table);
        let (r, c) = (t.rows(), t.cols());
        let mut data = Vec::with_capacity(index.len() * c);
        for &i in index {
            if i >= r {
                return Err(TensorError::OutOfRange {
                    op: "gather_rows",
                    start: i,
                    end: i + 1,
                    extent: r,
                });
            }
            data.extend_from_slice(&t.data()[i * c..(i + 1) * c]);
        }
        let out = Tensor {
            shape: vec![index.len(), c],
            data,
        };
        Ok(self.push(
            out,
            Op::Gather {
                table,
                index: index.to_vec(),
            },
        ))
    }

    /// Stacks `reps` copies of `x` along the leading (batch) dimension.
    pub fn tile_rows(&mut self, x: Var, reps: usize) -> Var {
        let t = self.value(x);
        let (r, c) = (t.rows(), t.cols());
        let mut data = Vec::with_capacity(reps * t.len());
        for _ in 0..reps {
            data.extend_from_slice(t.data());
        }
        let out = Tensor {
            shape: vec![reps * r, c],
            data,
        };
        self.push(out, Op::TileRows { x, reps })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let t = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(t, Op::Reshape(x)))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Backward, TensorError> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(TensorError::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor {
            shape: lt.shape().to_vec(),
            data: vec![1.0],
        });
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Backward { grads })
    }

    fn propagate(
        &self,
        idx: usize,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
    ) -> Result<(), TensorError> {
        let node = &self.nodes[idx];
        let out = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, t: Tensor| {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => {
                    let shape = self.nodes[v.0].value.shape().to_vec();
                    *slot = Some(Tensor { shape, data: t.data });
                }
            }
        };
        let elementwise = |x: &Tensor, f: &dyn Fn(usize) -> f64| Tensor {
            shape: x.shape().to_vec(),
            data: (0..x.len()).map(f).collect(),
        };
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul { a, b, tb } => {
                if *tb {
                    acc(*a, gemm(g, false, val(*b), false)?);
                    acc(*b, gemm(g, true, val(*a), false)?);
                } else {
                    acc(*a, gemm(g, false, val(*b), true)?);
                    acc(*b, gemm(val(*a), true, g, false)?);
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, elementwise(g, &|i| -g.data[i]));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                acc(*a, elementwise(g, &|i| g.data[i] * tb.data[i]));
                acc(*b, elementwise(g, &|i| g.data[i] * ta.data[i]));
            }
            Op::AddRow(x, row) => {
                acc(*x, g.clone());
                let c = g.cols();
                let mut gr = vec![0.0; c];
                for (i, v) in g.data.iter().enumerate() {
                    gr[i % c] += v;
                }
                acc(*row, Tensor { shape: vec![], data: gr });
            }
            Op::MulRow(x, row) => {
                let (tx, tr) = (val(*x), val(*row));
                let c = g.cols();
                acc(*x, elementwise(g, &|i| g.data[i] * tr.data[i % c]));
                let mut gr = vec![0.0; c];
                for (i, v) in g.data.iter().enumerate() {
                    gr[i % c] += v * tx.data[i];
                }
                acc(*row, Tensor { shape: vec![], data: gr });
            }
            Op::AddCol(x, col) => {
                acc(*x, g.clone());
                let c = g.cols().max(1);
                let mut gc = vec![0.0; g.rows()];
                for (i, v) in g.data.iter().enumerate() {
                    gc[i / c] += v;
                }
                acc(*col, Tensor { shape: vec![], data: gc });
            }
            Op::MulCol(x, col) => {
                let (tx, tc) = (val(*x), val(*col));
                let c = g.cols().max(1);
                acc(*x, elementwise(g, &|i| g.data[i] * tc.data[i / c]));
                let mut gc = vec![0.0; g.rows()];
                for (i, v) in g.data.iter().enumerate() {
                    gc[i / c] += v * tx.data[i];
                }
                acc(*col, Tensor { shape: vec![], data: gc });
            }
            Op::Scale(x, c) => acc(*x, elementwise(g, &|i| g.data[i] * c)),
            Op::AddScalar(x) => acc(*x, g.clone()),
            Op::Sigmoid(x) => {
                acc(*x, elementwise(g, &|i| g.data[i] * out.data[i] * (1.0 - out.data[i])))
            }
            Op::Softplus(x) => {
                let tx = val(*x);
                acc(*x, elementwise(g, &|i| g.data[i] * sigmoid(tx.data[i])))
            }
            Op::Tanh(x) => {
                acc(*x, elementwise(g, &|i| g.data[i] * (1.0 - out.data[i] * out.data[i])))
            }
            Op::Relu(x) => {
                let tx = val(*x);
                acc(*x, elementwise(g, &|i| if tx.data[i] > 0.0 { g.data[i] } else { 0.0 }))
            }
            Op::Exp(x) => acc(*x, elementwise(g, &|i| g.data[i] * out.data[i])),
            Op::Log(x) => {
                let tx = val(*x);
                acc(*x, elementwise(g, &|i| g.data[i] / tx.data[i]))
            }
            Op::Square(x) => {
                let tx = val(*x);
                acc(*x, elementwise(g, &|i| 2.0 * g.data[i] * tx.data[i]))
            }
            Op::SoftmaxRows(x) => {
                let c = out.cols();
                let mut gx = vec![0.0; out.len()];
                if c > 0 {
                    for (r, (gy, y)) in g.data.chunks(c).zip(out.data.chunks(c)).enumerate() {
                        let dot: f64 = gy.iter().zip(y).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            gx[r * c + j] = y[j] * (gy[j] - dot);
                        }
                    }
                }
                acc(*x, Tensor { shape: vec![], data: gx });
            }
            Op::LogSumExpRows(x) => {
                let tx = val(*x);
                let c = tx.cols();
                let mut gx = vec![0.0; tx.len()];
                for r in 0..tx.rows() {
                    let lse = out.data[r];
                    if lse == f64::NEG_INFINITY {
                        continue;
                    }
                    for j in 0..c {
                        gx[r * c + j] = g.data[r] * (tx.data[r * c + j] - lse).exp();
                    }
                }
                acc(*x, Tensor { shape: vec![], data: gx });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let tg = val(*gain);
                let (r, c) = (out.rows(), out.cols());
                let mut gx = vec![0.0; r * c];
                let mut gg = vec![0.0; c];
                let mut gb = vec![0.0; c];
                let mut dxh = vec![0.0; c];
                for i in 0..r {
                    let mut mean_d = 0.0;
                    let mut mean_dx = 0.0;
                    for j in 0..c {
                        let gy = g.data[i * c + j];
                        let xh = xhat[i * c + j];
                        gg[j] += gy * xh;
                        gb[j] += gy;
                        dxh[j] = gy * tg.data[j];
                        mean_d += dxh[j];
                        mean_dx += dxh[j] * xh;
                    }
                    mean_d /= c as f64;
                    mean_dx /= c as f64;
                    for j in 0..c {
                        gx[i * c + j] =
                            inv_std[i] * (dxh[j] - mean_d - xhat[i * c + j] * mean_dx);
                    }
                }
                acc(*x, Tensor { shape: vec![], data: gx });
                acc(*gain, Tensor { shape: vec![], data: gg });
                acc(*bias, Tensor { shape: vec![], data: gb });
            }
            Op::ConcatCols(parts) => {
                let (r, total) = (out.rows(), out.cols());
                let mut offset = 0;
                for p in parts {
                    let w = val(*p).cols();
                    let mut gp = Vec::with_capacity(r * w);
                    for i in 0..r {
                        gp.extend_from_slice(&g.data[i * total + offset..i * total + offset + w]);
                    }
                    acc(*p, Tensor { shape: vec![], data: gp });
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = val(*p).len();
                    acc(
                        *p,
                        Tensor {
                            shape: vec![],
                            data: g.data[offset..offset + n].to_vec(),
                        },
                    );
                    offset += n;
                }
            }
            Op::SliceCols { x, start } => {
                let tx = val(*x);
                let (r, c) = (tx.rows(), tx.cols());
                let w = out.cols();
                let mut gx = vec![0.0; tx.len()];
                for i in 0..r {
                    gx[i * c + start..i * c + start + w]
                        .copy_from_slice(&g.data[i * w..(i + 1) * w]);
                }
                acc(*x, Tensor { shape: vec![], data: gx });
            }
            Op::SliceRows { x, start } => {
                let tx = val(*x);
                let c = tx.cols();
                let mut gx = vec![0.0; tx.len()];
                gx[start * c..start * c + g.len()].copy_from_slice(&g.data);
                acc(*x, Tensor { shape: vec![], data: gx });
            }
            Op::SumAll(x) => {
                let n = val(*x).len();
                acc(*x, Tensor { shape: vec![], data: vec![g.data[0]; n] });
            }
            Op::RowSum(x) => {
                let tx = val(*x);
                let c = tx.cols().max(1);
                let gx = (0..tx.len()).map(|i| g.data[i / c]).collect();
                acc(*x, Tensor { shape: vec![], data: gx });
            }
            Op::Gather { table, index } => {
                let tt = val(*table);
                let c = tt.cols();
                let mut gt = vec![0.0; tt.len()];
                for (k, &i) in index.iter().enumerate() {
                    for j in 0..c {
                        gt[i * c + j] += g.data[k * c + j];
                    }
                }
                acc(*table, Tensor { shape: vec![], data: gt });
            }
            Op::TileRows { x, reps } => {
                let n = val(*x).len();
                let mut gx = vec![0.0; n];
                for r in 0..*reps {
                    for (a, b) in gx.iter_mut().zip(&g.data[r * n..(r + 1) * n]) {
                        *a += b;
                    }
                }
                acc(*x, Tensor { shape: vec![], data: gx });
            }
            Op::Reshape(x) => acc(*x, Tensor { shape: vec![], data: g.data.clone() }),
        }
        Ok(())
    }
}

/// Gradients produced by one reverse sweep.
pub struct Backward {
    grads: Vec<Option<Tensor>>,
}

impl Backward {
    /// Gradient with respect to any recorded value; zero if unreachable.
    pub fn wrt(&self, graph: &Graph, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(t) => t.clone(),
            None => Tensor::zeros(graph.value(v).shape()),
        }
    }

    /// Dense per-parameter gradients aligned with `store`. A parameter used
    /// several times accumulates additively; unreachable ones are zero.
    pub fn params(&self, graph: &Graph, store: &ParamStore) -> Vec<Tensor> {
        let mut out: Vec<Tensor> = store.iter().map(|t| Tensor::zeros(t.shape())).collect();
        for (i, node) in graph.nodes.iter().enumerate() {
            if let (Op::Param(id), Some(g)) = (&node.op, &self.grads[i]) {
                out[id.index()].add_assign(g);
            }
        }
        out
    }
}
