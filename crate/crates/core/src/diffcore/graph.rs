//! Eager reverse-mode tape over 2-D tensors.
//!
//! Every operation computes its value immediately and appends a node. Node
//! indices are topologically ordered, so `backward` is a single reverse sweep.

use super::tensor::{matmul, matmul_nt, matmul_tn, Tensor};
use crate::error::{dim_err, Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Softplus(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Square(Var),
    SumCols(Var),
    SumAll(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    Reshape(Var),
    LogSoftmax(Var),
    LogSumExp(Var),
    GaussLogPdf(Var, Var, Var),
    ArgmaxRows,
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Tanh(_) => "tanh",
            Op::Softplus(_) => "softplus",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Sqrt(_) => "sqrt",
            Op::Square(_) => "square",
            Op::SumCols(_) => "sum_cols",
            Op::SumAll(_) => "sum_all",
            Op::ConcatCols(_) => "concat_cols",
            Op::ConcatRows(_) => "concat_rows",
            Op::SliceCols(..) => "slice_cols",
            Op::GatherRows(..) => "gather_rows",
            Op::Reshape(_) => "reshape",
            Op::LogSoftmax(_) => "log_softmax",
            Op::LogSumExp(_) => "log_sum_exp",
            Op::GaussLogPdf(..) => "gauss_log_pdf",
            Op::ArgmaxRows => "argmax_rows",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
    scope: usize,
}

/// Recorded forward computation.
#[derive(Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    scopes: Vec<String>,
    current_scope: usize,
    first_nonfinite: Option<usize>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            scopes: vec![String::from("<root>")],
            current_scope: 0,
            first_nonfinite: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Label attached to subsequently created nodes; used in numeric errors.
    pub fn set_scope(&mut self, name: &str) {
        if let Some(i) = self.scopes.iter().position(|s| s == name) {
            self.current_scope = i;
        } else {
            self.scopes.push(name.to_string());
            self.current_scope = self.scopes.len() - 1;
        }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.values()[0]
    }

    fn shape2(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        if self.first_nonfinite.is_none() && !value.is_finite() {
            self.first_nonfinite = Some(self.nodes.len());
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            scope: self.current_scope,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Error naming the scope and operation of the first non-finite node.
    pub fn check_finite(&self) -> Result<()> {
        match self.first_nonfinite {
            None => Ok(()),
            Some(i) => {
                let n = &self.nodes[i];
                Err(Error::Numeric(format!("{} ({})", self.scopes[n.scope], n.op.name())))
            }
        }
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        let value = as_matrix(value);
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        let value = as_matrix(value);
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.shape2(a);
        let (k2, n) = self.shape2(b);
        if k != k2 {
            return Err(dim_err("matmul", format!("inner dim {k}"), k2));
        }
        let out = matmul(self.value(a).values(), self.value(b).values(), m, k, n);
        let needs = self.needs(&[a, b]);
        Ok(self.push(mat(m, n, out), Op::MatMul(a, b), needs))
    }

    fn broadcast(&self, a: Var, b: Var, ctx: &str) -> Result<(usize, usize)> {
        let (ar, ac) = self.shape2(a);
        let (br, bc) = self.shape2(b);
        let r = bdim(ar, br).ok_or_else(|| dim_err(ctx, format!("{ar}x{ac}"), format!("{br}x{bc}")))?;
        let c = bdim(ac, bc).ok_or_else(|| dim_err(ctx, format!("{ar}x{ac}"), format!("{br}x{bc}")))?;
        Ok((r, c))
    }

    fn binary(&mut self, a: Var, b: Var, ctx: &str, f: impl Fn(f64, f64) -> f64) -> Result<(Tensor, bool)> {
        let (r, c) = self.broadcast(a, b, ctx)?;
        let ta = self.value(a);
        let tb = self.value(b);
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                out.push(f(bget(ta, i, j), bget(tb, i, j)));
            }
        }
        Ok((mat(r, c, out), self.needs(&[a, b])))
    }

    /// Elementwise sum with row/column broadcasting of size-1 dimensions.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, n) = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b), n))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, n) = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b), n))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, n) = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b), n))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let t = self.value(a).map(|x| x * s);
        let n = self.needs(&[a]);
        self.push(t, Op::Scale(a, s), n)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let t = self.value(a).map(f);
        let n = self.needs(&[a]);
        self.push(t, op, n)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Op::Softplus(a), softplus)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a), f64::ln)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sqrt(a), f64::sqrt)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    /// Row sums, `[m,n] -> [m,1]`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let (m, _) = self.shape2(a);
        let t = self.value(a);
        let out: Vec<f64> = (0..m).map(|i| t.row_slice(i).iter().sum()).collect();
        let n = self.needs(&[a]);
        self.push(mat(m, 1, out), Op::SumCols(a), n)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let n = self.needs(&[a]);
        self.push(Tensor::scalar(s), Op::SumAll(a), n)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let m = self.shape2(parts[0]).0;
        let mut total = 0;
        for &p in parts {
            let (pm, pc) = self.shape2(p);
            if pm != m {
                return Err(dim_err("concat_cols", m, pm));
            }
            total += pc;
        }
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                out.extend_from_slice(self.value(p).row_slice(i));
            }
        }
        let n = self.needs(parts);
        Ok(self.push(mat(m, total, out), Op::ConcatCols(parts.to_vec()), n))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let c = self.shape2(parts[0]).1;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (pm, pc) = self.shape2(p);
            if pc != c {
                return Err(dim_err("concat_rows", c, pc));
            }
            rows += pm;
            out.extend_from_slice(self.value(p).values());
        }
        let n = self.needs(parts);
        Ok(self.push(mat(rows, c, out), Op::ConcatRows(parts.to_vec()), n))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, c) = self.shape2(a);
        if start + len > c {
            return Err(dim_err("slice_cols", format!("<= {c} columns"), start + len));
        }
        let t = self.value(a);
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&t.row_slice(i)[start..start + len]);
        }
        let n = self.needs(&[a]);
        Ok(self.push(mat(m, len, out), Op::SliceCols(a, start), n))
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (m, _) = self.shape2(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= m) {
            return Err(dim_err("gather_rows", format!("row < {m}"), bad));
        }
        let t = self.value(a).select_rows(idx);
        let n = self.needs(&[a]);
        Ok(self.push(t, Op::GatherRows(a, idx.to_vec()), n))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let t = self.value(a).reshaped(&[rows, cols])?;
        let n = self.needs(&[a]);
        Ok(self.push(t, Op::Reshape(a), n))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let (m, c) = self.shape2(a);
        let t = self.value(a);
        let mut out = Vec::with_capacity(m * c);
        for i in 0..m {
            let row = t.row_slice(i);
            let lse = log_sum_exp(row);
            out.extend(row.iter().map(|x| x - lse));
        }
        let n = self.needs(&[a]);
        self.push(mat(m, c, out), Op::LogSoftmax(a), n)
    }

    /// Row-wise log-sum-exp, `[m,n] -> [m,1]`.
    pub fn log_sum_exp(&mut self, a: Var) -> Var {
        let (m, _) = self.shape2(a);
        let t = self.value(a);
        let out: Vec<f64> = (0..m).map(|i| log_sum_exp(t.row_slice(i))).collect();
        let n = self.needs(&[a]);
        self.push(mat(m, 1, out), Op::LogSumExp(a), n)
    }

    /// Row-wise diagonal Gaussian log-density, `[m,d] x3 -> [m,1]`.
    pub fn gauss_log_pdf(&mut self, x: Var, mean: Var, var: Var) -> Result<Var> {
        let sx = self.shape2(x);
        if self.shape2(mean) != sx || self.shape2(var) != sx {
            return Err(dim_err(
                "gauss_log_pdf",
                format!("{}x{}", sx.0, sx.1),
                format!("{:?} / {:?}", self.shape2(mean), self.shape2(var)),
            ));
        }
        let (m, d) = sx;
        let (tx, tm, tv) = (self.value(x), self.value(mean), self.value(var));
        let mut out = Vec::with_capacity(m);
        for i in 0..m {
            let mut acc = 0.0;
            for j in 0..d {
                let k = i * d + j;
                let r = tx.values()[k] - tm.values()[k];
                let s2 = tv.values()[k];
                acc += -0.5 * (LN_2PI + s2.ln()) - r * r / (2.0 * s2);
            }
            out.push(acc);
        }
        let n = self.needs(&[x, mean, var]);
        Ok(self.push(mat(m, 1, out), Op::GaussLogPdf(x, mean, var), n))
    }

    /// Index of the row maximum (lowest index on ties). Not differentiable.
    pub fn argmax_rows(&mut self, a: Var) -> Var {
        let (m, _) = self.shape2(a);
        let t = self.value(a);
        let out: Vec<f64> = (0..m).map(|i| argmax(t.row_slice(i)) as f64).collect();
        let n = self.needs(&[a]);
        self.push(mat(m, 1, out), Op::ArgmaxRows, n)
    }

    /// Gradients of the scalar `root` with respect to every node.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                self.value(root).shape()
            )));
        }
        self.check_finite()?;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }

        Ok(Gradients {
            grads: grads
                .into_iter()
                .zip(&self.nodes)
                .map(|(g, n)| g.map(|g| Tensor::new(n.value.shape().to_vec(), g).expect("gradient shape")))
                .collect(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let node = &self.nodes[idx];
        let (r, c) = (node.value.rows(), node.value.cols());
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.shape2(*a);
                let n = c;
                if self.nodes[a.0].needs_grad {
                    let ga = matmul_nt(g, self.value(*b).values(), m, n, k);
                    self.accumulate(grads, *a, ga);
                }
                if self.nodes[b.0].needs_grad {
                    let gb = matmul_tn(self.value(*a).values(), g, m, k, n);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Add(a, b) => {
                let ga = reduce_to(g, r, c, self.shape2(*a));
                let gb = reduce_to(g, r, c, self.shape2(*b));
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::Sub(a, b) => {
                let ga = reduce_to(g, r, c, self.shape2(*a));
                let gb: Vec<f64> = reduce_to(g, r, c, self.shape2(*b)).into_iter().map(|x| -x).collect();
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.nodes[a.0].needs_grad {
                    let full: Vec<f64> = (0..r * c).map(|k| g[k] * bget(tb, k / c, k % c)).collect();
                    self.accumulate(grads, *a, reduce_to(&full, r, c, self.shape2(*a)));
                }
                if self.nodes[b.0].needs_grad {
                    let full: Vec<f64> = (0..r * c).map(|k| g[k] * bget(ta, k / c, k % c)).collect();
                    self.accumulate(grads, *b, reduce_to(&full, r, c, self.shape2(*b)));
                }
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.iter().map(|x| x * s).collect()),
            Op::Tanh(a) => {
                let y = node.value.values();
                self.accumulate(grads, *a, g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect());
            }
            Op::Softplus(a) => {
                let x = self.value(*a).values();
                self.accumulate(grads, *a, g.iter().zip(x).map(|(g, &x)| g * sigmoid(x)).collect());
            }
            Op::Exp(a) => {
                let y = node.value.values();
                self.accumulate(grads, *a, g.iter().zip(y).map(|(g, y)| g * y).collect());
            }
            Op::Log(a) => {
                let x = self.value(*a).values();
                self.accumulate(grads, *a, g.iter().zip(x).map(|(g, x)| g / x).collect());
            }
            Op::Sqrt(a) => {
                let y = node.value.values();
                self.accumulate(grads, *a, g.iter().zip(y).map(|(g, y)| 0.5 * g / y).collect());
            }
            Op::Square(a) => {
                let x = self.value(*a).values();
                self.accumulate(grads, *a, g.iter().zip(x).map(|(g, x)| 2.0 * g * x).collect());
            }
            Op::SumCols(a) => {
                let (m, n) = self.shape2(*a);
                let ga: Vec<f64> = (0..m * n).map(|k| g[k / n]).collect();
                self.accumulate(grads, *a, ga);
            }
            Op::SumAll(a) => {
                let n = self.value(*a).len();
                self.accumulate(grads, *a, vec![g[0]; n]);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pc = self.shape2(p).1;
                    if self.nodes[p.0].needs_grad {
                        let mut gp = Vec::with_capacity(r * pc);
                        for i in 0..r {
                            gp.extend_from_slice(&g[i * c + offset..i * c + offset + pc]);
                        }
                        self.accumulate(grads, p, gp);
                    }
                    offset += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    self.accumulate(grads, p, g[offset..offset + n].to_vec());
                    offset += n;
                }
            }
            Op::SliceCols(a, start) => {
                let (m, ac) = self.shape2(*a);
                let mut ga = vec![0.0; m * ac];
                for i in 0..m {
                    ga[i * ac + start..i * ac + start + c].copy_from_slice(&g[i * c..(i + 1) * c]);
                }
                self.accumulate(grads, *a, ga);
            }
            Op::GatherRows(a, idx) => {
                let (m, ac) = self.shape2(*a);
                let mut ga = vec![0.0; m * ac];
                for (k, &i) in idx.iter().enumerate() {
                    for j in 0..ac {
                        ga[i * ac + j] += g[k * ac + j];
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::Reshape(a) => self.accumulate(grads, *a, g.to_vec()),
            Op::LogSoftmax(a) => {
                let y = node.value.values();
                let mut ga = vec![0.0; r * c];
                for i in 0..r {
                    let gs: f64 = g[i * c..(i + 1) * c].iter().sum();
                    for j in 0..c {
                        let k = i * c + j;
                        ga[k] = g[k] - y[k].exp() * gs;
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::LogSumExp(a) => {
                let x = self.value(*a);
                let (m, n) = (x.rows(), x.cols());
                let y = node.value.values();
                let mut ga = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        ga[i * n + j] = g[i] * (x.values()[i * n + j] - y[i]).exp();
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::GaussLogPdf(x, mean, var) => {
                let (tx, tm, tv) = (self.value(*x), self.value(*mean), self.value(*var));
                let (m, d) = (tx.rows(), tx.cols());
                let mut gx = vec![0.0; m * d];
                let mut gv = vec![0.0; m * d];
                for i in 0..m {
                    for j in 0..d {
                        let k = i * d + j;
                        let s2 = tv.values()[k];
                        let resid = tx.values()[k] - tm.values()[k];
                        gx[k] = -g[i] * resid / s2;
                        gv[k] = g[i] * (-0.5 / s2 + 0.5 * resid * resid / (s2 * s2));
                    }
                }
                if self.nodes[mean.0].needs_grad {
                    let gm: Vec<f64> = gx.iter().map(|v| -v).collect();
                    self.accumulate(grads, *mean, gm);
                }
                self.accumulate(grads, *x, gx);
                self.accumulate(grads, *var, gv);
            }
            Op::ArgmaxRows => {
                if g.iter().any(|&v| v != 0.0) {
                    return Err(Error::Contract(format!(
                        "gradient reached non-differentiable primitive argmax_rows in {}",
                        self.scopes[node.scope]
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Per-node gradients from [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

fn as_matrix(t: Tensor) -> Tensor {
    if t.shape().len() == 2 {
        t
    } else {
        let (r, c) = (t.rows(), t.cols());
        Tensor::new(vec![r, c], t.into_values()).expect("same length")
    }
}

fn mat(r: usize, c: usize, v: Vec<f64>) -> Tensor {
    Tensor::new(vec![r, c], v).expect("internal shape")
}

fn bdim(a: usize, b: usize) -> Option<usize> {
    if a == b {
        Some(a)
    } else if a == 1 {
        Some(b)
    } else if b == 1 {
        Some(a)
    } else {
        None
    }
}

#[inline]
fn bget(t: &Tensor, i: usize, j: usize) -> f64 {
    let (r, c) = (t.rows(), t.cols());
    let i = if r == 1 { 0 } else { i };
    let j = if c == 1 { 0 } else { j };
    t.values()[i * c + j]
}

/// Sum a broadcast gradient `[r,c]` back onto an operand of shape `target`.
fn reduce_to(g: &[f64], r: usize, c: usize, target: (usize, usize)) -> Vec<f64> {
    if target == (r, c) {
        return g.to_vec();
    }
    let (tr, tc) = target;
    let mut out = vec![0.0; tr * tc];
    for i in 0..r {
        for j in 0..c {
            let ti = if tr == 1 { 0 } else { i };
            let tj = if tc == 1 { 0 } else { j };
            out[ti * tc + tj] += g[i * c + j];
        }
    }
    out
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
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

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(build: impl Fn(&mut Graph, Var) -> Var, x0: Tensor) {
        let mut g = Graph::new();
        let x = g.param(x0.clone());
        let y = build(&mut g, x);
        let grads = g.backward(y).unwrap();
        let analytic = grads.get(x).unwrap().clone();
        let h = 1e-6;
        for k in 0..x0.len() {
            let mut plus = x0.clone();
            plus.values_mut()[k] += h;
            let mut minus = x0.clone();
            minus.values_mut()[k] -= h;
            let eval = |t: Tensor| {
                let mut g = Graph::new();
                let x = g.param(t);
                let y = build(&mut g, x);
                g.scalar(y)
            };
            let fd = (eval(plus) - eval(minus)) / (2.0 * h);
            let a = analytic.values()[k];
            assert!((fd - a).abs() <= 1e-6 * (1.0 + a.abs()), "coord {k}: fd {fd} vs {a}");
        }
    }

    fn sample() -> Tensor {
        Tensor::matrix(2, 3, vec![0.3, -0.7, 1.1, 0.5, 0.2, -0.4]).unwrap()
    }

    #[test]
    fn linear_gradient_is_input() {
        let mut g = Graph::new();
        let w = g.param(Tensor::row(&[0.5, -1.0, 2.0]));
        let x = g.constant(Tensor::row(&[1.0, 2.0, 3.0]));
        let p = g.mul(w, x).unwrap();
        let s = g.sum_all(p);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(w).unwrap().values(), &[1.0, 2.0, 3.0]);
        assert!(grads.get(x).is_none());
    }

    #[test]
    fn gauss_mean_gradient_vanishes_at_mode() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::row(&[0.4, -1.2]));
        let mu = g.param(Tensor::row(&[0.4, -1.2]));
        let var = g.constant(Tensor::row(&[2.0, 0.5]));
        let lp = g.gauss_log_pdf(x, mu, var).unwrap();
        let s = g.sum_all(lp);
        let grads = g.backward(s).unwrap();
        assert!(grads.get(mu).unwrap().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn elementwise_ops_match_finite_differences() {
        fd_check(|g, x| { let t = g.tanh(x); g.sum_all(t) }, sample());
        fd_check(|g, x| { let t = g.softplus(x); g.sum_all(t) }, sample());
        fd_check(|g, x| { let t = g.exp(x); g.sum_all(t) }, sample());
        fd_check(|g, x| { let s = g.square(x); let e = g.exp(s); let l = g.log(e); let r = g.sqrt(l); g.sum_all(r) }, sample());
        fd_check(|g, x| { let t = g.log_softmax(x); let w = g.constant(sample()); let p = g.mul(t, w).unwrap(); g.sum_all(p) }, sample());
        fd_check(|g, x| { let t = g.log_sum_exp(x); let q = g.square(t); g.sum_all(q) }, sample());
    }

    #[test]
    fn structural_ops_match_finite_differences() {
        fd_check(
            |g, x| {
                let w = g.constant(Tensor::matrix(3, 2, vec![1.0, -2.0, 0.5, 0.3, -0.1, 0.9]).unwrap());
                let m = g.matmul(x, w).unwrap();
                let t = g.tanh(m);
                let c = g.concat_cols(&[t, x]).unwrap();
                let s = g.slice_cols(c, 1, 3).unwrap();
                let r = g.gather_rows(s, &[1, 0, 1]).unwrap();
                let q = g.square(r);
                let rr = g.concat_rows(&[q, s]).unwrap();
                let rs = g.reshape(rr, 3, 5).unwrap();
                let sc = g.sum_cols(rs);
                let z = g.scale(sc, 0.7);
                let zz = g.square(z);
                g.sum_all(zz)
            },
            sample(),
        );
    }

    #[test]
    fn broadcasting_ops_match_finite_differences() {
        // operand is the broadcast side
        fd_check(
            |g, b| {
                let a = g.constant(sample());
                let s = g.add(a, b).unwrap();
                let m = g.mul(s, b).unwrap();
                let d = g.sub(m, b).unwrap();
                let q = g.square(d);
                g.sum_all(q)
            },
            Tensor::row(&[0.2, -0.3, 0.8]),
        );
        fd_check(
            |g, b| {
                let a = g.constant(sample());
                let m = g.mul(a, b).unwrap();
                let d = g.sub(b, m).unwrap();
                let q = g.square(d);
                g.sum_all(q)
            },
            Tensor::column(&[0.6, -1.3]),
        );
    }

    #[test]
    fn gauss_log_pdf_matches_finite_differences() {
        for which in 0..3 {
            fd_check(
                |g, p| {
                    let mut parts = vec![
                        g.constant(Tensor::matrix(2, 3, vec![0.1, 0.2, -0.3, 1.0, -0.5, 0.0]).unwrap()),
                        g.constant(Tensor::matrix(2, 3, vec![-0.2, 0.4, 0.1, 0.7, 0.5, -0.1]).unwrap()),
                        g.constant(Tensor::matrix(2, 3, vec![0.5, 1.2, 0.8, 2.0, 0.3, 1.1]).unwrap()),
                    ];
                    parts[which] = if which == 2 { g.exp(p) } else { p };
                    let l = g.gauss_log_pdf(parts[0], parts[1], parts[2]).unwrap();
                    let w = g.constant(Tensor::column(&[1.0, -0.5]));
                    let lw = g.mul(l, w).unwrap();
                    g.sum_all(lw)
                },
                sample(),
            );
        }
    }

    #[test]
    fn argmax_is_not_differentiable() {
        let mut g = Graph::new();
        let x = g.param(sample());
        let a = g.argmax_rows(x);
        assert_eq!(g.value(a).values(), &[2.0, 0.0]);
        let s = g.sum_all(a);
        assert!(matches!(g.backward(s), Err(Error::Contract(_))));
    }

    #[test]
    fn non_finite_values_name_their_scope() {
        let mut g = Graph::new();
        g.set_scope("encoder.l0");
        let x = g.param(Tensor::row(&[-1.0]));
        let l = g.log(x);
        let s = g.sum_all(l);
        let err = g.backward(s).unwrap_err();
        assert!(err.to_string().contains("encoder.l0"), "{err}");
    }
}
