use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};
use crate::linalg::Cholesky;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    MatMul(Var, Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    Sum(Var),
    Mean(Var),
    SumCols(Var),
    SumRows(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Sqrt(Var),
    Softmax(Var),
    LogSumExp(Var),
    Transpose(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Clamp(Var, f64, f64),
    GaussLogPdf {
        y: Var,
        mu: Var,
        sigma: Var,
        /// Rows are `Σ⁻¹ (y_i − μ)`.
        whitened: Tensor,
        precision: Tensor,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records primitive operations in execution order for reverse-mode
/// differentiation. Insertion order is a topological order.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every leaf that requires grad.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `v`; `None` only if `v` is not a grad-requiring leaf.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

fn broadcast_dim(a: usize, b: usize) -> Option<usize> {
    match (a, b) {
        _ if a == b => Some(a),
        (1, n) | (n, 1) => Some(n),
        _ => None,
    }
}

fn broadcast_shape(op: &'static str, a: [usize; 2], b: [usize; 2]) -> Result<[usize; 2]> {
    match (broadcast_dim(a[0], b[0]), broadcast_dim(a[1], b[1])) {
        (Some(r), Some(c)) => Ok([r, c]),
        _ => Err(Error::Shape { op, lhs: a, rhs: b }),
    }
}

/// Applies `f` elementwise with numpy-style broadcasting over size-1 dims.
fn zip_broadcast(a: &Tensor, b: &Tensor, shape: [usize; 2], f: impl Fn(f64, f64) -> f64) -> Tensor {
    if a.shape() == shape && b.shape() == shape {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Tensor::new(shape[0], shape[1], data).expect("shape");
    }
    let [r, c] = shape;
    let (ar, ac) = (a.rows() > 1, a.cols() > 1);
    let (br, bc) = (b.rows() > 1, b.cols() > 1);
    let mut data = Vec::with_capacity(r * c);
    for i in 0..r {
        for j in 0..c {
            let x = a.get(if ar { i } else { 0 }, if ac { j } else { 0 });
            let y = b.get(if br { i } else { 0 }, if bc { j } else { 0 });
            data.push(f(x, y));
        }
    }
    Tensor::new(r, c, data).expect("shape")
}

/// Sums a broadcast gradient back down to `shape`.
fn reduce_to(g: Tensor, shape: [usize; 2]) -> Tensor {
    if g.shape() == shape {
        return g;
    }
    let mut out = Tensor::zeros(shape[0], shape[1]);
    let (keep_r, keep_c) = (shape[0] > 1, shape[1] > 1);
    for i in 0..g.rows() {
        for j in 0..g.cols() {
            let (oi, oj) = (if keep_r { i } else { 0 }, if keep_c { j } else { 0 });
            let v = out.get(oi, oj) + g.get(i, j);
            out.set(oi, oj, v);
        }
    }
    out
}

fn zip_same(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.rows(), a.cols(), data).expect("shape")
}

fn row_softmax(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    let c = x.cols();
    for row in out.data_mut().chunks_mut(c.max(1)) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn grad_of(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let shape = broadcast_shape(name, ta.shape(), tb.shape())?;
        let out = zip_broadcast(ta, tb, shape, f);
        let g = self.grad_of(&[a, b]);
        Ok(self.push(out, op, g))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let g = self.grad_of(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), g))
    }

    /// Concatenates along the last axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        let rows = self.value(*first).rows();
        for p in parts {
            if self.value(*p).rows() != rows {
                return Err(Error::Shape {
                    op: "concat",
                    lhs: self.shape(*first),
                    rhs: self.shape(*p),
                });
            }
        }
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(r));
            }
        }
        let g = self.grad_of(parts);
        Ok(self.push(Tensor::new(rows, cols, data)?, Op::ConcatCols(parts.to_vec()), g))
    }

    /// Columns `start..start + len`.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        if start + len > t.cols() || len == 0 {
            return Err(Error::Shape {
                op: "slice",
                lhs: t.shape(),
                rhs: [start, len],
            });
        }
        let mut data = Vec::with_capacity(t.rows() * len);
        for r in 0..t.rows() {
            data.extend_from_slice(&t.row(r)[start..start + len]);
        }
        let out = Tensor::new(t.rows(), len, data)?;
        let g = self.grad_of(&[a]);
        Ok(self.push(out, Op::SliceCols(a, start), g))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(a).map(f);
        let g = self.grad_of(&[a]);
        self.push(out, op, g)
    }

    /// Sum of all entries, `1 x 1`.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let g = self.grad_of(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), g)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let m = t.sum() / t.len() as f64;
        let g = self.grad_of(&[a]);
        self.push(Tensor::scalar(m), Op::Mean(a), g)
    }

    /// Sum over the last axis, `r x 1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let data = (0..t.rows()).map(|r| t.row(r).iter().sum()).collect();
        let out = Tensor::new(t.rows(), 1, data).expect("shape");
        let g = self.grad_of(&[a]);
        self.push(out, Op::SumCols(a), g)
    }

    /// Sum over the first axis, `1 x c`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let mut data = vec![0.0; t.cols()];
        for r in 0..t.rows() {
            for (acc, v) in data.iter_mut().zip(t.row(r)) {
                *acc += v;
            }
        }
        let out = Tensor::new(1, t.cols(), data).expect("shape");
        let g = self.grad_of(&[a]);
        self.push(out, Op::SumRows(a), g)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, f64::sqrt, Op::Sqrt(a))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let out = row_softmax(self.value(a));
        let g = self.grad_of(&[a]);
        self.push(out, Op::Softmax(a), g)
    }

    /// `log Σ_j exp(a_ij)` over the last axis, `r x 1`.
    pub fn logsumexp(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let data = (0..t.rows())
            .map(|r| {
                let row = t.row(r);
                let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if m == f64::NEG_INFINITY {
                    return m;
                }
                m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
            })
            .collect();
        let out = Tensor::new(t.rows(), 1, data).expect("shape");
        let g = self.grad_of(&[a]);
        self.push(out, Op::LogSumExp(a), g)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        let g = self.grad_of(&[a]);
        self.push(out, Op::Transpose(a), g)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x * c, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, Op::AddScalar(a))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    /// Gaussian log-density of every row of `y` (`n x d`) under mean `mu`
    /// (`1 x d`) and covariance `sigma` (`d x d`), as an `n x 1` column.
    pub fn gauss_log_pdf(&mut self, y: Var, mu: Var, sigma: Var) -> Result<Var> {
        let (ty, tm, ts) = (self.value(y), self.value(mu), self.value(sigma));
        let d = ty.cols();
        if tm.shape() != [1, d] {
            return Err(Error::Shape {
                op: "gauss_log_pdf",
                lhs: ty.shape(),
                rhs: tm.shape(),
            });
        }
        if ts.shape() != [d, d] {
            return Err(Error::Shape {
                op: "gauss_log_pdf",
                lhs: ty.shape(),
                rhs: ts.shape(),
            });
        }
        let chol = Cholesky::new(ts)?;
        let norm = 0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + chol.log_det());
        let mut whitened = Tensor::zeros(ty.rows(), d);
        let mut out = Vec::with_capacity(ty.rows());
        for i in 0..ty.rows() {
            let diff: Vec<f64> = ty.row(i).iter().zip(tm.data()).map(|(a, b)| a - b).collect();
            let a = chol.solve(&diff);
            let q: f64 = diff.iter().zip(&a).map(|(x, y)| x * y).sum();
            out.push(-0.5 * q - norm);
            for (j, v) in a.into_iter().enumerate() {
                whitened.set(i, j, v);
            }
        }
        let precision = chol.inverse();
        let g = self.grad_of(&[y, mu, sigma]);
        let value = Tensor::new(ty.rows(), 1, out)?;
        Ok(self.push(
            value,
            Op::GaussLogPdf {
                y,
                mu,
                sigma,
                whitened,
                precision,
            },
            g,
        ))
    }

    /// Reverse pass from a `1 x 1` loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.shape(loss);
        if shape != [1, 1] {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {shape:?}"
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                grads[i] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, g, &mut grads);
        }

        for (i, node) in self.nodes.iter().enumerate().take(loss.0 + 1) {
            if matches!(node.op, Op::Leaf) && node.needs_grad && grads[i].is_none() {
                grads[i] = Some(Tensor::zeros(node.value.rows(), node.value.cols()));
            }
        }
        grads.resize(self.nodes.len(), None);
        for (i, node) in self.nodes.iter().enumerate().skip(loss.0 + 1) {
            if matches!(node.op, Op::Leaf) && node.needs_grad {
                grads[i] = Some(Tensor::zeros(node.value.rows(), node.value.cols()));
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn backprop_node(&self, node: &Node, g: Tensor, grads: &mut [Option<Tensor>]) {
        let y = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *b, reduce_to(g.clone(), val(*b).shape()));
                self.accumulate(grads, *a, reduce_to(g, val(*a).shape()));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *b, reduce_to(g.map(|x| -x), val(*b).shape()));
                self.accumulate(grads, *a, reduce_to(g, val(*a).shape()));
            }
            Op::Mul(a, b) => {
                let shape = g.shape();
                let ga = zip_broadcast(&g, val(*b), shape, |g, b| g * b);
                let gb = zip_broadcast(&g, val(*a), shape, |g, a| g * a);
                self.accumulate(grads, *a, reduce_to(ga, val(*a).shape()));
                self.accumulate(grads, *b, reduce_to(gb, val(*b).shape()));
            }
            Op::Div(a, b) => {
                let shape = g.shape();
                let ga = zip_broadcast(&g, val(*b), shape, |g, b| g / b);
                // d(a/b)/db = -(a/b)/b = -y/b
                let gy = zip_same(&g, y, |g, y| -g * y);
                let gb = zip_broadcast(&gy, val(*b), shape, |gy, b| gy / b);
                self.accumulate(grads, *a, reduce_to(ga, val(*a).shape()));
                self.accumulate(grads, *b, reduce_to(gb, val(*b).shape()));
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                if self.nodes[a.0].needs_grad {
                    let mut ga = Tensor::zeros(ta.rows(), ta.cols());
                    gemm(&g, false, tb, true, &mut ga, 0.0);
                    self.accumulate(grads, *a, ga);
                }
                if self.nodes[b.0].needs_grad {
                    let mut gb = Tensor::zeros(tb.rows(), tb.cols());
                    gemm(ta, true, &g, false, &mut gb, 0.0);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for p in parts {
                    let c = val(*p).cols();
                    if self.nodes[p.0].needs_grad {
                        let mut data = Vec::with_capacity(g.rows() * c);
                        for r in 0..g.rows() {
                            data.extend_from_slice(&g.row(r)[start..start + c]);
                        }
                        self.accumulate(grads, *p, Tensor::new(g.rows(), c, data).expect("shape"));
                    }
                    start += c;
                }
            }
            Op::SliceCols(a, start) => {
                let src = val(*a);
                let mut ga = Tensor::zeros(src.rows(), src.cols());
                for r in 0..g.rows() {
                    for (j, v) in g.row(r).iter().enumerate() {
                        ga.set(r, start + j, *v);
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::Sum(a) => {
                let s = val(*a).shape();
                self.accumulate(grads, *a, Tensor::full(s[0], s[1], g.item()));
            }
            Op::Mean(a) => {
                let t = val(*a);
                let v = g.item() / t.len() as f64;
                self.accumulate(grads, *a, Tensor::full(t.rows(), t.cols(), v));
            }
            Op::SumCols(a) => {
                let s = val(*a).shape();
                let mut ga = Tensor::zeros(s[0], s[1]);
                for r in 0..s[0] {
                    for c in 0..s[1] {
                        ga.set(r, c, g.get(r, 0));
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::SumRows(a) => {
                let s = val(*a).shape();
                let mut ga = Tensor::zeros(s[0], s[1]);
                for r in 0..s[0] {
                    for c in 0..s[1] {
                        ga.set(r, c, g.get(0, c));
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::Tanh(a) => self.accumulate(grads, *a, zip_same(&g, y, |g, y| g * (1.0 - y * y))),
            Op::Sigmoid(a) => self.accumulate(grads, *a, zip_same(&g, y, |g, y| g * y * (1.0 - y))),
            Op::Exp(a) => self.accumulate(grads, *a, zip_same(&g, y, |g, y| g * y)),
            Op::Log(a) => self.accumulate(grads, *a, zip_same(&g, val(*a), |g, x| g / x)),
            Op::Square(a) => self.accumulate(grads, *a, zip_same(&g, val(*a), |g, x| 2.0 * g * x)),
            Op::Sqrt(a) => self.accumulate(
                grads,
                *a,
                zip_same(&g, y, |g, y| if y > 0.0 { g / (2.0 * y) } else { 0.0 }),
            ),
            Op::Softmax(a) => {
                let c = y.cols();
                let mut ga = zip_same(&g, y, |g, y| g * y);
                for (row, yrow) in ga.data_mut().chunks_mut(c).zip(y.data().chunks(c)) {
                    let s: f64 = row.iter().sum();
                    for (v, &yv) in row.iter_mut().zip(yrow) {
                        *v -= yv * s;
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::LogSumExp(a) => {
                let mut ga = row_softmax(val(*a));
                let c = ga.cols();
                for (r, row) in ga.data_mut().chunks_mut(c).enumerate() {
                    let gr = g.get(r, 0);
                    row.iter_mut().for_each(|v| *v *= gr);
                }
                self.accumulate(grads, *a, ga);
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.transpose()),
            Op::Scale(a, c) => self.accumulate(grads, *a, g.map(|x| x * c)),
            Op::AddScalar(a) => self.accumulate(grads, *a, g),
            Op::Clamp(a, lo, hi) => self.accumulate(
                grads,
                *a,
                zip_same(&g, val(*a), |g, x| if x >= *lo && x <= *hi { g } else { 0.0 }),
            ),
            Op::GaussLogPdf {
                y: yv,
                mu,
                sigma,
                whitened,
                precision,
            } => {
                let n = whitened.rows();
                let d = whitened.cols();
                // scaled rows g_i * a_i
                let mut ga = whitened.clone();
                for (r, row) in ga.data_mut().chunks_mut(d).enumerate() {
                    let gi = g.get(r, 0);
                    row.iter_mut().for_each(|v| *v *= gi);
                }
                if self.nodes[sigma.0].needs_grad {
                    // ½ Aᵀ diag(g) A − ½ (Σ g) P
                    let mut gs = Tensor::zeros(d, d);
                    gemm(&ga, true, whitened, false, &mut gs, 0.0);
                    let gsum = g.sum();
                    for (s, p) in gs.data_mut().iter_mut().zip(precision.data()) {
                        *s = 0.5 * *s - 0.5 * gsum * p;
                    }
                    self.accumulate(grads, *sigma, gs);
                }
                if self.nodes[mu.0].needs_grad {
                    let mut gm = vec![0.0; d];
                    for r in 0..n {
                        for (acc, v) in gm.iter_mut().zip(ga.row(r)) {
                            *acc += v;
                        }
                    }
                    self.accumulate(grads, *mu, Tensor::row_vector(&gm));
                }
                self.accumulate(grads, *yv, ga.map(|x| -x));
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
