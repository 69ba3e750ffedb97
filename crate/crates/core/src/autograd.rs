//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation as a node in creation order, so the
//! reverse of that order is a valid topological order for `backward`. A graph
//! is built fresh for each forward pass and thrown away afterwards.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{self, expect_matrix, gemm_nn, gemm_nt, gemm_tn, Tensor, LAYER_NORM_EPS};

/// Handle to a node of a [`Graph`].
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
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Softmax(Var),
    Log(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        mean: Vec<f64>,
        rstd: Vec<f64>,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    Sum(Var),
    Bce {
        logits: Var,
        targets: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * core::f64::consts::FRAC_1_SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * core::f64::consts::FRAC_1_SQRT_2));
    let pdf = libm::exp(-0.5 * x * x) / libm::sqrt(2.0 * core::f64::consts::PI);
    cdf + x * pdf
}

fn softplus(x: f64) -> f64 {
    // log(1 + e^x), stable for large |x|
    x.max(0.0) + libm::log1p(libm::exp(-x.abs()))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Sigmoid binary cross-entropy of one logit against a target in `[0, 1]`.
pub fn bce_with_logits(logit: f64, target: f64) -> f64 {
    softplus(logit) - logit * target
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Gradient of the last `backward` loss with respect to `v`, if one
    /// reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    pub fn grad_tensor(&self, v: Var) -> Option<Tensor> {
        let g = self.grads[v.0].as_ref()?;
        Tensor::new(self.nodes[v.0].value.shape(), g.clone()).ok()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::matmul(self.value(a), self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = expect_matrix("matmul_nt", self.value(a))?;
        let (n, k2) = expect_matrix("matmul_nt", self.value(b))?;
        if k != k2 {
            return Err(self.shape_err("matmul_nt", a, b));
        }
        let mut out = vec![0.0; m * n];
        gemm_nt(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::MatMulNt(a, b), rg))
    }

    fn shape_err(&self, op: &'static str, a: Var, b: Var) -> Error {
        Error::Shape {
            op,
            lhs: self.value(a).shape().to_vec(),
            rhs: self.value(b).shape().to_vec(),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(self.shape_err("add", a, b));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let out = Tensor::new(self.value(a).shape(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// Adds a vector to every trailing-dimension slice of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let c = self.value(a).cols();
        if self.value(bias).len() != c {
            return Err(self.shape_err("add_row", a, bias));
        }
        let b = self.value(bias).data();
        let data = self
            .value(a)
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x + b[i % c])
            .collect();
        let out = Tensor::new(self.value(a).shape(), data)?;
        let rg = self.rg(a) || self.rg(bias);
        Ok(self.push(out, Op::AddRow(a, bias), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(self.shape_err("mul", a, b));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let out = Tensor::new(self.value(a).shape(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let data = self.value(a).data().iter().map(|x| x * s).collect();
        let out = Tensor::new(self.value(a).shape(), data).expect("same shape");
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, s), rg)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let data = self.value(a).data().iter().map(|&x| gelu(x)).collect();
        let out = Tensor::new(self.value(a).shape(), data).expect("same shape");
        let rg = self.rg(a);
        self.push(out, Op::Gelu(a), rg)
    }

    /// Softmax over the trailing dimension. Fully `-inf` slices map to zeros.
    pub fn softmax(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        let c = out.cols();
        if c > 0 {
            for row in out.data_mut().chunks_mut(c) {
                tensor::softmax_slice(row);
            }
        }
        let rg = self.rg(a);
        self.push(out, Op::Softmax(a), rg)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let data = self.value(a).data().iter().map(|&x| libm::log(x)).collect();
        let out = Tensor::new(self.value(a).shape(), data).expect("same shape");
        let rg = self.rg(a);
        self.push(out, Op::Log(a), rg)
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let d = xv.cols();
        if d < 2 || self.value(gain).len() != d || self.value(bias).len() != d {
            return Err(self.shape_err("layer_norm", x, gain));
        }
        let rows = xv.rows();
        let mut mean = Vec::with_capacity(rows);
        let mut rstd = Vec::with_capacity(rows);
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut out = vec![0.0; xv.len()];
        for r in 0..rows {
            let row = xv.row(r);
            let (m, s) = tensor::row_stats(row, LAYER_NORM_EPS);
            for j in 0..d {
                out[r * d + j] = (row[j] - m) * s * g[j] + b[j];
            }
            mean.push(m);
            rstd.push(s);
        }
        let out = Tensor::new(xv.shape(), out)?;
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                mean,
                rstd,
            },
            rg,
        ))
    }

    /// Stacks matrices with equal column counts vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = match parts.first() {
            Some(&p) => expect_matrix("concat_rows", self.value(p))?.1,
            None => return Err(Error::Contract("concat_rows of nothing".into())),
        };
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, c) = expect_matrix("concat_rows", self.value(p))?;
            if c != cols {
                return Err(self.shape_err("concat_rows", parts[0], p));
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::new(&[rows, cols], data)?, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Joins matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = match parts.first() {
            Some(&p) => expect_matrix("concat_cols", self.value(p))?.0,
            None => return Err(Error::Contract("concat_cols of nothing".into())),
        };
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = expect_matrix("concat_cols", self.value(p))?;
            if r != rows {
                return Err(self.shape_err("concat_cols", parts[0], p));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; rows * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for r in 0..rows {
                data[r * total + off..r * total + off + w].copy_from_slice(&src[r * w..(r + 1) * w]);
            }
            off += w;
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::new(&[rows, total], data)?, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = expect_matrix("slice_rows", self.value(a))?;
        if start + len > r {
            return Err(Error::IndexOutOfRange {
                what: "row slice end",
                index: start + len,
                len: r,
            });
        }
        let data = self.value(a).data()[start * c..(start + len) * c].to_vec();
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(&[len, c], data)?, Op::SliceRows(a, start), rg))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = expect_matrix("slice_cols", self.value(a))?;
        if start + len > c {
            return Err(Error::IndexOutOfRange {
                what: "column slice end",
                index: start + len,
                len: c,
            });
        }
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&src[i * c + start..i * c + start + len]);
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(&[r, len], data)?, Op::SliceCols(a, start), rg))
    }

    /// Selects rows of a table (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (r, c) = expect_matrix("gather_rows", self.value(table))?;
        let mut data = Vec::with_capacity(ids.len() * c);
        for &id in ids {
            if id >= r {
                return Err(Error::IndexOutOfRange {
                    what: "gather row",
                    index: id,
                    len: r,
                });
            }
            data.extend_from_slice(self.value(table).row(id));
        }
        let rg = self.rg(table);
        Ok(self.push(
            Tensor::new(&[ids.len(), c], data)?,
            Op::GatherRows(table, ids.to_vec()),
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Summed sigmoid binary cross-entropy over all finite logits. Logits equal
    /// to `-inf` are masked slots and contribute neither loss nor gradient.
    pub fn bce_with_logits_sum(&mut self, logits: Var, targets: &Tensor) -> Result<Var> {
        if self.value(logits).shape() != targets.shape() {
            return Err(Error::Shape {
                op: "bce",
                lhs: self.value(logits).shape().to_vec(),
                rhs: targets.shape().to_vec(),
            });
        }
        let mut total = 0.0;
        for (&x, &y) in self.value(logits).data().iter().zip(targets.data()) {
            if x.is_finite() {
                total += bce_with_logits(x, y);
            } else if y > 0.0 {
                return Err(Error::Contract(format!("positive target on masked logit {x}")));
            }
        }
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(total),
            Op::Bce {
                logits,
                targets: targets.data().to_vec(),
            },
            rg,
        ))
    }

    fn acc(&mut self, v: Var, g: &[f64]) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(existing) => {
                for (e, x) in existing.iter_mut().zip(g) {
                    *e += x;
                }
            }
            slot @ None => *slot = Some(g.to_vec()),
        }
    }

    /// Reverse-mode sweep from a scalar loss. Previous gradients are cleared.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.grads.iter_mut().for_each(|g| *g = None);
        if !self.rg(loss) {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            let op = core::mem::replace(&mut self.nodes[i].op, Op::Leaf);
            self.backward_node(i, &op, &g)?;
            self.nodes[i].op = op;
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn backward_node(&mut self, i: usize, op: &Op, g: &[f64]) -> Result<()> {
        match op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (m, k) = expect_matrix("matmul", self.value(a))?;
                let n = self.value(b).cols();
                let (nodes, grads) = (&self.nodes, &mut self.grads);
                if let Some(ga) = grad_slot(nodes, grads, a) {
                    gemm_nt(g, nodes[b.0].value.data(), ga, m, n, k);
                }
                if let Some(gb) = grad_slot(nodes, grads, b) {
                    gemm_tn(nodes[a.0].value.data(), g, gb, m, k, n);
                }
            }
            &Op::MatMulNt(a, b) => {
                // out[m×n] = a[m×k] bᵀ, b is [n×k]
                let (m, k) = expect_matrix("matmul_nt", self.value(a))?;
                let n = self.value(b).rows();
                let (nodes, grads) = (&self.nodes, &mut self.grads);
                if let Some(ga) = grad_slot(nodes, grads, a) {
                    gemm_nn(g, nodes[b.0].value.data(), ga, m, n, k);
                }
                if let Some(gb) = grad_slot(nodes, grads, b) {
                    gemm_tn(g, nodes[a.0].value.data(), gb, m, n, k);
                }
            }
            &Op::Add(a, b) => {
                self.acc(a, g);
                self.acc(b, g);
            }
            &Op::AddRow(a, bias) => {
                self.acc(a, g);
                if let Some(gb) = grad_slot(&self.nodes, &mut self.grads, bias) {
                    let c = gb.len();
                    for (j, x) in g.iter().enumerate() {
                        gb[j % c] += x;
                    }
                }
            }
            &Op::Mul(a, b) => {
                if self.rg(a) {
                    let ga: Vec<f64> = g.iter().zip(self.value(b).data()).map(|(x, y)| x * y).collect();
                    self.acc(a, &ga);
                }
                if self.rg(b) {
                    let gb: Vec<f64> = g.iter().zip(self.value(a).data()).map(|(x, y)| x * y).collect();
                    self.acc(b, &gb);
                }
            }
            &Op::Scale(a, s) => {
                let ga: Vec<f64> = g.iter().map(|x| x * s).collect();
                self.acc(a, &ga);
            }
            &Op::Gelu(a) => {
                let ga: Vec<f64> = g
                    .iter()
                    .zip(self.value(a).data())
                    .map(|(x, &v)| x * gelu_grad(v))
                    .collect();
                self.acc(a, &ga);
            }
            &Op::Softmax(a) => {
                let y = &self.nodes[i].value;
                let c = y.cols();
                let mut ga = vec![0.0; y.len()];
                for (r, (yr, gr)) in y.data().chunks(c).zip(g.chunks(c)).enumerate() {
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for j in 0..c {
                        ga[r * c + j] = yr[j] * (gr[j] - dot);
                    }
                }
                self.acc(a, &ga);
            }
            &Op::Log(a) => {
                let ga: Vec<f64> = g.iter().zip(self.value(a).data()).map(|(x, v)| x / v).collect();
                self.acc(a, &ga);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                mean,
                rstd,
            } => {
                let (x, gain, bias) = (*x, *gain, *bias);
                let xv = self.value(x);
                let d = xv.cols();
                let gv = self.value(gain).data();
                let mut gx = vec![0.0; xv.len()];
                let mut gg = vec![0.0; d];
                let mut gbias = vec![0.0; d];
                let mut xhat = vec![0.0; d];
                let mut dxhat = vec![0.0; d];
                for r in 0..xv.rows() {
                    let row = xv.row(r);
                    let gr = &g[r * d..(r + 1) * d];
                    for j in 0..d {
                        xhat[j] = (row[j] - mean[r]) * rstd[r];
                        dxhat[j] = gr[j] * gv[j];
                        gg[j] += gr[j] * xhat[j];
                        gbias[j] += gr[j];
                    }
                    let m1 = dxhat.iter().sum::<f64>() / d as f64;
                    let m2 = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                    for j in 0..d {
                        gx[r * d + j] = rstd[r] * (dxhat[j] - m1 - xhat[j] * m2);
                    }
                }
                self.acc(x, &gx);
                self.acc(gain, &gg);
                self.acc(bias, &gbias);
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    self.acc(p, &g[off..off + n]);
                    off += n;
                }
            }
            Op::ConcatCols(parts) => {
                let total = self.nodes[i].value.cols();
                let rows = self.nodes[i].value.rows();
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.rg(p) {
                        let mut gp = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            gp.extend_from_slice(&g[r * total + off..r * total + off + w]);
                        }
                        self.acc(p, &gp);
                    }
                    off += w;
                }
            }
            &Op::SliceRows(a, start) => {
                let c = self.value(a).cols();
                if let Some(ga) = grad_slot(&self.nodes, &mut self.grads, a) {
                    for (o, x) in ga[start * c..start * c + g.len()].iter_mut().zip(g) {
                        *o += x;
                    }
                }
            }
            &Op::SliceCols(a, start) => {
                let c = self.value(a).cols();
                let w = self.nodes[i].value.cols();
                if let Some(ga) = grad_slot(&self.nodes, &mut self.grads, a) {
                    for (r, gr) in g.chunks(w).enumerate() {
                        for (o, x) in ga[r * c + start..r * c + start + w].iter_mut().zip(gr) {
                            *o += x;
                        }
                    }
                }
            }
            Op::GatherRows(table, ids) => {
                let c = self.value(*table).cols();
                if let Some(gt) = grad_slot(&self.nodes, &mut self.grads, *table) {
                    for (k, &id) in ids.iter().enumerate() {
                        for (o, x) in gt[id * c..(id + 1) * c].iter_mut().zip(&g[k * c..(k + 1) * c]) {
                            *o += x;
                        }
                    }
                }
            }
            &Op::Sum(a) => {
                let ga = vec![g[0]; self.value(a).len()];
                self.acc(a, &ga);
            }
            Op::Bce { logits, targets } => {
                let logits = *logits;
                let ga: Vec<f64> = self
                    .value(logits)
                    .data()
                    .iter()
                    .zip(targets)
                    .map(|(&x, &y)| if x.is_finite() { g[0] * (sigmoid(x) - y) } else { 0.0 })
                    .collect();
                self.acc(logits, &ga);
            }
        }
        Ok(())
    }
}

/// Gradient buffer of `v`, created as zeros on first use; `None` when `v`
/// does not require a gradient.
fn grad_slot<'a>(nodes: &[Node], grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]))
}
