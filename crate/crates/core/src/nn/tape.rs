//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every primitive as a node holding its forward value.
//! [`Tape::backward`] walks the nodes once in reverse order and returns the
//! gradient of a scalar node with respect to every node that requires one.
//! Parameters enter the tape through [`Tape::param`], which remembers the
//! parameter name so gradients can be pushed back into a [`ParamStore`].

use std::collections::HashMap;

use super::matrix::{gemm, Matrix};
use super::params::ParamStore;
use crate::error::{Error, Result};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    RepeatRows(Var, usize),
    GatherRows(Var, Vec<usize>),
    SumCols(Var),
    GroupMeanRows(Var, usize),
    SumAll(Var),
    MixtureLogProb {
        x: Var,
        means: Var,
        stds: Var,
        log_weights: Var,
        resp: Matrix,
    },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Records primitive operations for one forward/backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
    param_order: Vec<(String, Var)>,
    frozen: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient for `v`; `None` when `v` does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for `v`, or zeros shaped like its value.
    pub fn get_or_zeros(&self, tape: &Tape, v: Var) -> Matrix {
        self.get(v).cloned().unwrap_or_else(|| {
            let (r, c) = tape.value(v).shape();
            Matrix::zeros(r, c)
        })
    }

    /// Adds the gradient of every parameter leaf on `tape` into `store`.
    pub fn accumulate_into(&self, tape: &Tape, store: &mut ParamStore) -> Result<()> {
        for (name, var) in &tape.param_order {
            if let Some(g) = self.get(*var) {
                store.accumulate_grad(name, g)?;
            }
        }
        Ok(())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape on which [`Tape::param`] yields untracked leaves, so parameters
    /// act as constants (inference, or optimizing inputs under a fixed network).
    pub fn frozen() -> Self {
        Self {
            frozen: true,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        debug_assert!(value.all_finite(), "non-finite value produced by {op:?}");
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A constant input; no gradient is tracked.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A free input whose gradient is tracked (e.g. a pseudo-input being optimized).
    pub fn variable(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf for a named parameter. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let value = store
            .value(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter `{name}`")))?
            .clone();
        let v = self.push(value, Op::Leaf, !self.frozen);
        self.params.insert(name.to_owned(), v);
        self.param_order.push((name.to_owned(), v));
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let mut out = Matrix::zeros(self.value(a).rows(), self.value(b).cols());
        gemm(1.0, self.value(a), false, self.value(b), false, 0.0, &mut out);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::MatMul(a, b), rg)
    }

    /// `x + b` with `b` a 1 x m row broadcast over the rows of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Var {
        let bias = self.value(b);
        assert_eq!(bias.rows(), 1, "bias must be a row vector");
        assert_eq!(bias.cols(), self.value(x).cols(), "bias width mismatch");
        let mut out = self.value(x).clone();
        let cols = out.cols();
        for (i, v) in out.as_mut_slice().iter_mut().enumerate() {
            *v += bias.as_slice()[i % cols];
        }
        let rg = self.rg(x) || self.rg(b);
        self.push(out, Op::AddBias(x, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Mul(a, b), rg)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x / y);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Div(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x * c);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, c), rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x + c);
        let rg = self.rg(a);
        self.push(out, Op::AddScalar(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        let rg = self.rg(a);
        self.push(out, Op::Tanh(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let rg = self.rg(a);
        self.push(out, Op::Sigmoid(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        let rg = self.rg(a);
        self.push(out, Op::Exp(a), rg)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::ln);
        let rg = self.rg(a);
        self.push(out, Op::Log(a), rg)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::sqrt);
        let rg = self.rg(a);
        self.push(out, Op::Sqrt(a), rg)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * x);
        let rg = self.rg(a);
        self.push(out, Op::Square(a), rg)
    }

    /// Elementwise clamp; the gradient is zero where the input lies outside `[lo, hi]`.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(a).map(|x| x.clamp(lo, hi));
        let rg = self.rg(a);
        self.push(out, Op::Clamp(a, lo, hi), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Matrix::zeros(rows, cols);
        for i in 0..rows {
            let mut off = 0;
            for &p in parts {
                let v = self.value(p);
                assert_eq!(v.rows(), rows, "concat_cols row mismatch");
                out.row_mut(i)[off..off + v.cols()].copy_from_slice(v.row(i));
                off += v.cols();
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(out, Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a);
        assert!(start + len <= v.cols(), "slice_cols out of range");
        let mut out = Matrix::zeros(v.rows(), len);
        for i in 0..v.rows() {
            out.row_mut(i).copy_from_slice(&v.row(i)[start..start + len]);
        }
        let rg = self.rg(a);
        self.push(out, Op::SliceCols(a, start), rg)
    }

    /// Repeats each row `times` times consecutively: row `i` becomes rows `i*times..(i+1)*times`.
    pub fn repeat_rows(&mut self, a: Var, times: usize) -> Var {
        let v = self.value(a);
        let mut out = Matrix::zeros(v.rows() * times, v.cols());
        for i in 0..v.rows() {
            for t in 0..times {
                out.row_mut(i * times + t).copy_from_slice(v.row(i));
            }
        }
        let rg = self.rg(a);
        self.push(out, Op::RepeatRows(a, times), rg)
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let v = self.value(a);
        let mut out = Matrix::zeros(idx.len(), v.cols());
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).copy_from_slice(v.row(i));
        }
        let rg = self.rg(a);
        self.push(out, Op::GatherRows(a, idx.to_vec()), rg)
    }

    /// Row sums: n x m -> n x 1.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let out = Matrix::column_vector((0..v.rows()).map(|i| v.row(i).iter().sum()).collect());
        let rg = self.rg(a);
        self.push(out, Op::SumCols(a), rg)
    }

    /// Averages consecutive groups of `group` rows: (n*group) x m -> n x m.
    pub fn group_mean_rows(&mut self, a: Var, group: usize) -> Var {
        let v = self.value(a);
        assert!(group > 0 && v.rows() % group == 0, "group_mean_rows: bad group size");
        let n = v.rows() / group;
        let mut out = Matrix::zeros(n, v.cols());
        let inv = 1.0 / group as f64;
        for i in 0..n {
            for t in 0..group {
                let src = v.row(i * group + t);
                for (o, s) in out.row_mut(i).iter_mut().zip(src) {
                    *o += s * inv;
                }
            }
        }
        let rg = self.rg(a);
        self.push(out, Op::GroupMeanRows(a, group), rg)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let out = Matrix::from_vec(1, 1, vec![self.value(a).sum()]);
        let rg = self.rg(a);
        self.push(out, Op::SumAll(a), rg)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// Per-row log density of a diagonal Gaussian mixture.
    ///
    /// `x` is n x d, `means` and `stds` are k x d, `log_weights` is 1 x k.
    /// Returns n x 1 with `log sum_k exp(log_w_k + log N(x_i; mean_k, std_k))`.
    pub fn mixture_log_prob(&mut self, x: Var, means: Var, stds: Var, log_weights: Var) -> Var {
        let xv = self.value(x);
        let mv = self.value(means);
        let sv = self.value(stds);
        let wv = self.value(log_weights);
        let (n, d) = xv.shape();
        let k = mv.rows();
        assert_eq!(mv.cols(), d, "mixture means width");
        assert_eq!(sv.shape(), (k, d), "mixture stds shape");
        assert_eq!(wv.shape(), (1, k), "mixture weights shape");

        let prec = sv.map(|s| 1.0 / (s * s));
        let mean_prec = mv.zip_map(&prec, |m, p| m * p);
        let mut consts = vec![0.0; k];
        for (j, c) in consts.iter_mut().enumerate() {
            let mut acc = wv.as_slice()[j] - d as f64 * HALF_LN_2PI;
            for t in 0..d {
                let s = sv[(j, t)];
                acc -= s.ln() + 0.5 * mv[(j, t)] * mean_prec[(j, t)];
            }
            *c = acc;
        }
        let x_sq = xv.map(|v| v * v);
        let mut logits = Matrix::zeros(n, k);
        gemm(-0.5, &x_sq, false, &prec, true, 0.0, &mut logits);
        gemm(1.0, xv, false, &mean_prec, true, 1.0, &mut logits);

        let mut out = Matrix::zeros(n, 1);
        let mut resp = logits;
        for i in 0..n {
            let row = resp.row_mut(i);
            for (v, c) in row.iter_mut().zip(&consts) {
                *v += c;
            }
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
            out[(i, 0)] = m + s.ln();
        }
        let rg = self.rg(x) || self.rg(means) || self.rg(stds) || self.rg(log_weights);
        self.push(
            out,
            Op::MixtureLogProb {
                x,
                means,
                stds,
                log_weights,
                resp,
            },
            rg,
        )
    }

    /// Gradients of the scalar node `loss` with respect to every tracked node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::Contract(format!(
                "loss node {} is not on this tape ({} nodes)",
                loss.0,
                self.nodes.len()
            )));
        }
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::Contract("loss must be a 1x1 scalar".into()));
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Backward pass that adds parameter gradients into `store`.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore) -> Result<Gradients> {
        let grads = self.backward(loss)?;
        grads.accumulate_into(self, store)?;
        Ok(grads)
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, m: Matrix| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&m),
                slot @ None => *slot = Some(m),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    let mut ga = Matrix::zeros(val(*a).rows(), val(*a).cols());
                    gemm(1.0, g, false, val(*b), true, 0.0, &mut ga);
                    acc(*a, ga);
                }
                if self.rg(*b) {
                    let mut gb = Matrix::zeros(val(*b).rows(), val(*b).cols());
                    gemm(1.0, val(*a), true, g, false, 0.0, &mut gb);
                    acc(*b, gb);
                }
            }
            Op::AddBias(x, b) => {
                acc(*x, g.clone());
                if self.rg(*b) {
                    let mut gb = Matrix::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (o, v) in gb.as_mut_slice().iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                    acc(*b, gb);
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                acc(*a, g.zip_map(val(*b), |gv, bv| gv * bv));
                acc(*b, g.zip_map(val(*a), |gv, av| gv * av));
            }
            Op::Div(a, b) => {
                let bv = val(*b);
                acc(*a, g.zip_map(bv, |gv, b| gv / b));
                if self.rg(*b) {
                    let q = node.value.zip_map(bv, |o, b| o / b);
                    acc(*b, g.zip_map(&q, |gv, q| -gv * q));
                }
            }
            Op::Scale(a, c) => acc(*a, g.map(|v| v * c)),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::Tanh(a) => acc(*a, g.zip_map(&node.value, |gv, y| gv * (1.0 - y * y))),
            Op::Sigmoid(a) => acc(*a, g.zip_map(&node.value, |gv, y| gv * y * (1.0 - y))),
            Op::Exp(a) => acc(*a, g.zip_map(&node.value, |gv, y| gv * y)),
            Op::Log(a) => acc(*a, g.zip_map(val(*a), |gv, x| gv / x)),
            Op::Sqrt(a) => acc(
                *a,
                g.zip_map(&node.value, |gv, y| if y > 0.0 { gv / (2.0 * y) } else { 0.0 }),
            ),
            Op::Square(a) => acc(*a, g.zip_map(val(*a), |gv, x| 2.0 * gv * x)),
            Op::Clamp(a, lo, hi) => acc(
                *a,
                g.zip_map(val(*a), |gv, x| if x >= *lo && x <= *hi { gv } else { 0.0 }),
            ),
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = val(p).cols();
                    if self.rg(p) {
                        let mut gp = Matrix::zeros(g.rows(), w);
                        for i in 0..g.rows() {
                            gp.row_mut(i).copy_from_slice(&g.row(i)[off..off + w]);
                        }
                        acc(p, gp);
                    }
                    off += w;
                }
            }
            Op::SliceCols(a, start) => {
                let (r, c) = val(*a).shape();
                let mut ga = Matrix::zeros(r, c);
                let w = g.cols();
                for i in 0..r {
                    ga.row_mut(i)[*start..start + w].copy_from_slice(g.row(i));
                }
                acc(*a, ga);
            }
            Op::RepeatRows(a, times) => {
                let (r, c) = val(*a).shape();
                let mut ga = Matrix::zeros(r, c);
                for i in 0..r {
                    for t in 0..*times {
                        let src = g.row(i * times + t);
                        for (o, s) in ga.row_mut(i).iter_mut().zip(src) {
                            *o += s;
                        }
                    }
                }
                acc(*a, ga);
            }
            Op::GatherRows(a, idx) => {
                let (r, c) = val(*a).shape();
                let mut ga = Matrix::zeros(r, c);
                for (row, &i) in idx.iter().enumerate() {
                    let src = g.row(row);
                    for (o, s) in ga.row_mut(i).iter_mut().zip(src) {
                        *o += s;
                    }
                }
                acc(*a, ga);
            }
            Op::SumCols(a) => {
                let (r, c) = val(*a).shape();
                let mut ga = Matrix::zeros(r, c);
                for i in 0..r {
                    let gi = g[(i, 0)];
                    ga.row_mut(i).iter_mut().for_each(|v| *v = gi);
                }
                acc(*a, ga);
            }
            Op::GroupMeanRows(a, group) => {
                let (r, c) = val(*a).shape();
                let mut ga = Matrix::zeros(r, c);
                let inv = 1.0 / *group as f64;
                for i in 0..r {
                    let src = g.row(i / group);
                    for (o, s) in ga.row_mut(i).iter_mut().zip(src) {
                        *o = s * inv;
                    }
                }
                acc(*a, ga);
            }
            Op::SumAll(a) => {
                let (r, c) = val(*a).shape();
                acc(*a, Matrix::filled(r, c, g.scalar()));
            }
            Op::MixtureLogProb {
                x,
                means,
                stds,
                log_weights,
                resp,
            } => {
                let xv = val(*x);
                let mv = val(*means);
                let sv = val(*stds);
                let (n, k) = resp.shape();
                // Upstream-weighted responsibilities.
                let mut gr = resp.clone();
                for i in 0..n {
                    let gi = g[(i, 0)];
                    gr.row_mut(i).iter_mut().for_each(|v| *v *= gi);
                }
                let prec = sv.map(|s| 1.0 / (s * s));
                let mean_prec = mv.zip_map(&prec, |m, p| m * p);
                if self.rg(*x) {
                    let mut t1 = Matrix::zeros(n, xv.cols());
                    gemm(1.0, &gr, false, &prec, false, 0.0, &mut t1);
                    let mut gx = Matrix::zeros(n, xv.cols());
                    gemm(1.0, &gr, false, &mean_prec, false, 0.0, &mut gx);
                    for (o, (a, b)) in gx
                        .as_mut_slice()
                        .iter_mut()
                        .zip(xv.as_slice().iter().zip(t1.as_slice()))
                    {
                        *o -= a * b;
                    }
                    acc(*x, gx);
                }
                let need_m = self.rg(*means);
                let need_s = self.rg(*stds);
                let need_w = self.rg(*log_weights);
                if need_m || need_s || need_w {
                    let mut s_k = vec![0.0; k];
                    for i in 0..n {
                        for (s, v) in s_k.iter_mut().zip(gr.row(i)) {
                            *s += v;
                        }
                    }
                    if need_m || need_s {
                        let d = xv.cols();
                        let mut gt_x = Matrix::zeros(k, d);
                        gemm(1.0, &gr, true, xv, false, 0.0, &mut gt_x);
                        if need_m {
                            let mut gm = Matrix::zeros(k, d);
                            for j in 0..k {
                                for t in 0..d {
                                    gm[(j, t)] = gt_x[(j, t)] * prec[(j, t)]
                                        - mean_prec[(j, t)] * s_k[j];
                                }
                            }
                            acc(*means, gm);
                        }
                        if need_s {
                            let x_sq = xv.map(|v| v * v);
                            let mut gt_x2 = Matrix::zeros(k, d);
                            gemm(1.0, &gr, true, &x_sq, false, 0.0, &mut gt_x2);
                            let mut gs = Matrix::zeros(k, d);
                            for j in 0..k {
                                for t in 0..d {
                                    let s = sv[(j, t)];
                                    let m = mv[(j, t)];
                                    let quad = gt_x2[(j, t)] - 2.0 * m * gt_x[(j, t)] + m * m * s_k[j];
                                    gs[(j, t)] = -s_k[j] / s + quad / (s * s * s);
                                }
                            }
                            acc(*stds, gs);
                        }
                    }
                    if need_w {
                        acc(*log_weights, Matrix::row_vector(s_k));
                    }
                }
            }
        }
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central finite-difference gradient of `f` at `x`.
    fn numeric_grad(x: &Matrix, f: impl Fn(&Matrix) -> f64) -> Matrix {
        let h = 1e-6;
        let mut g = Matrix::zeros(x.rows(), x.cols());
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.as_mut_slice()[i] += h;
            let mut xm = x.clone();
            xm.as_mut_slice()[i] -= h;
            g.as_mut_slice()[i] = (f(&xp) - f(&xm)) / (2.0 * h);
        }
        g
    }

    fn assert_close(a: &Matrix, b: &Matrix, tol: f64) {
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            let scale = 1.0f64.max(x.abs()).max(y.abs());
            assert!((x - y).abs() / scale < tol, "{x} vs {y}");
        }
    }

    #[test]
    fn sum_of_leaf_has_unit_gradient() {
        let mut t = Tape::new();
        let x = t.variable(Matrix::from_vec(2, 2, vec![1.0, -2.0, 3.0, 0.5]));
        let s = t.sum_all(x);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().as_slice(), &[1.0; 4]);
    }

    #[test]
    fn loss_not_on_tape_is_rejected() {
        let t = Tape::new();
        assert!(t.backward(Var(3)).is_err());
        let mut t = Tape::new();
        let x = t.variable(Matrix::zeros(2, 1));
        assert!(t.backward(x).is_err(), "non-scalar loss");
    }

    #[test]
    fn unused_inputs_get_no_gradient() {
        let mut t = Tape::new();
        let x = t.variable(Matrix::filled(1, 1, 2.0));
        let y = t.variable(Matrix::filled(1, 1, 3.0));
        let _unused = t.square(y);
        let l = t.square(x);
        let g = t.backward(l).unwrap();
        assert!(g.get(y).is_none());
        assert_eq!(g.get_or_zeros(&t, y).as_slice(), &[0.0]);
        assert_eq!(g.get(x).unwrap().as_slice(), &[4.0]);
    }

    #[test]
    fn composite_elementwise_ops_match_finite_differences() {
        let x0 = Matrix::from_vec(2, 3, vec![0.3, -0.7, 1.1, 0.2, 0.9, -0.4]);
        let build = |t: &mut Tape, x: Var| {
            let a = t.tanh(x);
            let b = t.sigmoid(x);
            let c = t.mul(a, b);
            let e = t.exp(c);
            let sq = t.square(x);
            let p = t.add_scalar(sq, 1.0);
            let l = t.log(p);
            let r = t.sqrt(p);
            let q = t.div(e, r);
            let s = t.sub(q, l);
            let rep = t.repeat_rows(s, 3);
            let gm = t.group_mean_rows(rep, 3);
            let sl = t.slice_cols(gm, 1, 2);
            let cat = t.concat_cols(&[sl, s, sl]);
            let ga = t.gather_rows(cat, &[1, 0, 1]);
            let rs = t.sum_cols(ga);
            let sc = t.scale(rs, 0.7);
            t.sum_all(sc)
        };
        let mut t = Tape::new();
        let x = t.variable(x0.clone());
        let l = build(&mut t, x);
        let g = t.backward(l).unwrap();
        let num = numeric_grad(&x0, |xv| {
            let mut t = Tape::new();
            let x = t.constant(xv.clone());
            let l = build(&mut t, x);
            t.value(l).scalar()
        });
        assert_close(g.get(x).unwrap(), &num, 1e-6);
    }

    #[test]
    fn matmul_and_bias_gradients() {
        let a0 = Matrix::from_vec(3, 2, vec![0.1, 0.2, -0.3, 0.4, 0.5, -0.6]);
        let w0 = Matrix::from_vec(2, 4, vec![1.0, -1.0, 0.5, 0.2, 0.3, 0.7, -0.2, 0.9]);
        let b0 = Matrix::row_vector(vec![0.1, 0.0, -0.1, 0.2]);
        let f = |a: &Matrix, w: &Matrix, b: &Matrix| {
            let mut t = Tape::new();
            let a = t.variable(a.clone());
            let w = t.variable(w.clone());
            let b = t.variable(b.clone());
            let y = t.matmul(a, w);
            let y = t.add_bias(y, b);
            let y = t.square(y);
            let l = t.sum_all(y);
            (t, a, w, b, l)
        };
        let (t, a, w, b, l) = f(&a0, &w0, &b0);
        let g = t.backward(l).unwrap();
        let na = numeric_grad(&a0, |x| {
            let (t, .., l) = f(x, &w0, &b0);
            t.value(l).scalar()
        });
        let nw = numeric_grad(&w0, |x| {
            let (t, .., l) = f(&a0, x, &b0);
            t.value(l).scalar()
        });
        let nb = numeric_grad(&b0, |x| {
            let (t, .., l) = f(&a0, &w0, x);
            t.value(l).scalar()
        });
        assert_close(g.get(a).unwrap(), &na, 1e-6);
        assert_close(g.get(w).unwrap(), &nw, 1e-6);
        assert_close(g.get(b).unwrap(), &nb, 1e-6);
    }

    #[test]
    fn mixture_log_prob_matches_direct_evaluation_and_gradients() {
        let x0 = Matrix::from_vec(3, 2, vec![0.1, -0.4, 1.2, 0.3, -0.8, 0.9]);
        let m0 = Matrix::from_vec(2, 2, vec![0.0, 0.5, 1.0, -0.5]);
        let s0 = Matrix::from_vec(2, 2, vec![0.8, 1.3, 0.6, 1.1]);
        let w0 = Matrix::row_vector(vec![0.3f64.ln(), 0.7f64.ln()]);
        let run = |x: &Matrix, m: &Matrix, s: &Matrix, w: &Matrix| {
            let mut t = Tape::new();
            let vars = [
                t.variable(x.clone()),
                t.variable(m.clone()),
                t.variable(s.clone()),
                t.variable(w.clone()),
            ];
            let lp = t.mixture_log_prob(vars[0], vars[1], vars[2], vars[3]);
            let sq = t.square(lp);
            let l = t.sum_all(sq);
            (t, vars, lp, l)
        };
        let (t, vars, lp, l) = run(&x0, &m0, &s0, &w0);

        // direct evaluation of the densities
        for i in 0..3 {
            let mut dens = 0.0;
            for k in 0..2 {
                let mut logp = w0.as_slice()[k];
                for j in 0..2 {
                    let z = (x0[(i, j)] - m0[(k, j)]) / s0[(k, j)];
                    logp += -0.5 * z * z - s0[(k, j)].ln() - HALF_LN_2PI;
                }
                dens += logp.exp();
            }
            assert!((t.value(lp)[(i, 0)] - dens.ln()).abs() < 1e-12);
        }

        let g = t.backward(l).unwrap();
        let inputs = [&x0, &m0, &s0, &w0];
        for which in 0..4 {
            let num = numeric_grad(inputs[which], |v| {
                let mut args = inputs.map(Clone::clone);
                args[which] = v.clone();
                let (t, _, _, l) = run(&args[0], &args[1], &args[2], &args[3]);
                t.value(l).scalar()
            });
            assert_close(g.get(vars[which]).unwrap(), &num, 1e-6);
        }
    }
}
