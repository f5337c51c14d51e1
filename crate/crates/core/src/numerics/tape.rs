//! Reverse-mode differentiation over a recorded list of tensor operations.
//!
//! A [`Tape`] borrows a [`ParamStore`]; parameters enter the tape by
//! reference and their gradients come back keyed by [`ParamId`]. Every
//! operation is appended in evaluation order, so the backward sweep is a
//! single reverse pass over the node list.

use std::borrow::Cow;
use std::collections::HashMap;

use super::tensor::{matmul_at_acc, matmul_bt_acc, sigmoid};
use super::{Activation, ParamId, ParamStore, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    Constant,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softmax(Var),
    LogSumExp(Var),
    Sum(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize, usize),
    Rows(Var, Vec<usize>),
    PairSum(Var, Var),
    Aggregate {
        messages: Var,
        edges: Vec<(usize, usize)>,
        weights: Option<Var>,
    },
    Gather(Var, Vec<usize>),
    LstmCell {
        pre: Var,
        c_prev: Var,
        gates: Vec<f64>,
        tanh_c: Vec<f64>,
    },
    /// Scalar whose local gradients with respect to its inputs were
    /// computed during the forward pass.
    ScalarWithGrads(Vec<(Var, Tensor)>),
}

struct Node<'p> {
    value: Cow<'p, Tensor>,
    op: Op,
    requires_grad: bool,
}

pub struct Tape<'p> {
    params: Option<&'p ParamStore>,
    param_vars: HashMap<ParamId, Var>,
    nodes: Vec<Node<'p>>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Tape<'p> {
    /// A tape with no parameter store; use [`Tape::leaf`] for inputs.
    pub fn new() -> Self {
        Self {
            params: None,
            param_vars: HashMap::new(),
            nodes: Vec::new(),
        }
    }

    pub fn with_params(params: &'p ParamStore) -> Self {
        Self {
            params: Some(params),
            param_vars: HashMap::new(),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Whether each input entry of every ReLU node is positive, in tape
    /// order. Two evaluations with equal patterns sit on the same smooth
    /// piece of the function.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(a) => Some(a),
                _ => None,
            })
            .flat_map(|a| self.nodes[a.0].value.data().iter().map(|&v| v > 0.0))
            .collect()
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.push_node(Cow::Owned(value), op, requires_grad)
    }

    fn push_node(&mut self, value: Cow<'p, Tensor>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable input owned by the tape.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_node(Cow::Owned(value), Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_node(Cow::Owned(value), Op::Constant, false)
    }

    /// Borrowed parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let store = self.params.expect("tape has no parameter store");
        let v = self.push_node(Cow::Borrowed(store.get(id)), Op::Param, true);
        self.param_vars.insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self
            .value(a)
            .matmul(self.value(b))
            .unwrap_or_else(|e| panic!("{e}"));
        self.push(out, Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).add(self.value(b)).unwrap_or_else(|e| panic!("{e}"));
        self.push(out, Op::Add(a, b), &[a, b])
    }

    /// Adds a row vector (`[n]` or `[1, n]`) to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let av = self.value(a);
        let rv = self.value(row);
        let (rows, cols) = av.matrix_dims();
        assert_eq!(
            rv.numel(),
            cols,
            "add_row: {:?} vs {:?}",
            av.shape(),
            rv.shape()
        );
        let mut out = av.clone();
        for r in 0..rows {
            for (o, b) in out.data_mut()[r * cols..(r + 1) * cols].iter_mut().zip(rv.data()) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(a, row), &[a, row])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).mul(self.value(b)).unwrap_or_else(|e| panic!("{e}"));
        self.push(out, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a).scale(factor);
        self.push(out, Op::Scale(a, factor), &[a])
    }

    pub fn activate(&mut self, a: Var, kind: Activation) -> Var {
        let out = self.value(a).activate(kind);
        let op = match kind {
            Activation::Relu => Op::Relu(a),
            Activation::Tanh => Op::Tanh(a),
            Activation::Sigmoid => Op::Sigmoid(a),
            Activation::Softmax => Op::Softmax(a),
            Activation::LogSumExp => Op::LogSumExp(a),
        };
        self.push(out, op, &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.activate(a, Activation::Relu)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.activate(a, Activation::Tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.activate(a, Activation::Sigmoid)
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        self.activate(a, Activation::Softmax)
    }

    pub fn logsumexp(&mut self, a: Var) -> Var {
        self.activate(a, Activation::LogSumExp)
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let vals: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Tensor::concat_cols(&vals).unwrap_or_else(|e| panic!("{e}"));
        self.push(out, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let vals: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Tensor::concat_rows(&vals).unwrap_or_else(|e| panic!("{e}"));
        self.push(out, Op::ConcatRows(parts.to_vec()), parts)
    }

    /// Columns `start..end` of a 2-D tensor.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let av = self.value(a);
        let (rows, cols) = av.matrix_dims();
        assert!(start < end && end <= cols, "slice_cols {start}..{end} of {cols}");
        let mut data = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            data.extend_from_slice(&av.row(r)[start..end]);
        }
        let out = Tensor::new(vec![rows, end - start], data).expect("slice shape");
        self.push(out, Op::SliceCols(a, start, end), &[a])
    }

    /// Gathers rows by index (embedding lookup, time-step selection).
    pub fn rows(&mut self, a: Var, indices: &[usize]) -> Var {
        let av = self.value(a);
        let cols = av.cols();
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            data.extend_from_slice(av.row(i));
        }
        let out = Tensor::new(vec![indices.len(), cols], data).expect("nonempty row gather");
        self.push(out, Op::Rows(a, indices.to_vec()), &[a])
    }

    /// For `a, b` of shape `[N, L]`, returns `[N*N, L]` whose row `i*N + j`
    /// is `a[i] + b[j]`.
    pub fn pair_sum(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "pair_sum operands");
        let (n, l) = av.matrix_dims();
        let mut data = Vec::with_capacity(n * n * l);
        for i in 0..n {
            for j in 0..n {
                data.extend(av.row(i).iter().zip(bv.row(j)).map(|(x, y)| x + y));
            }
        }
        let out = Tensor::new(vec![n * n, l], data).expect("pair shape");
        self.push(out, Op::PairSum(a, b), &[a, b])
    }

    /// Message passing: `out[target] += w_e * messages[source]` for every
    /// `(target, source)` in `edges`, with `w_e = 1` when `weights` is absent.
    pub fn aggregate(
        &mut self,
        messages: Var,
        num_nodes: usize,
        edges: &[(usize, usize)],
        weights: Option<Var>,
    ) -> Var {
        let mv = self.value(messages);
        let cols = mv.cols();
        let mut out = Tensor::zeros(&[num_nodes, cols]);
        if let Some(w) = weights {
            assert_eq!(self.value(w).numel(), edges.len(), "one weight per edge");
        }
        for (e, &(t, s)) in edges.iter().enumerate() {
            let w = weights.map_or(1.0, |w| self.value(w).data()[e]);
            let src = mv.row(s);
            for (o, m) in out.data_mut()[t * cols..(t + 1) * cols].iter_mut().zip(src) {
                *o += w * m;
            }
        }
        let parents: Vec<Var> = std::iter::once(messages).chain(weights).collect();
        self.push(
            out,
            Op::Aggregate {
                messages,
                edges: edges.to_vec(),
                weights,
            },
            &parents,
        )
    }

    /// Picks individual entries by flat index into a 1-D tensor.
    pub fn gather(&mut self, a: Var, flat_indices: &[usize]) -> Var {
        let av = self.value(a);
        let data: Vec<f64> = flat_indices.iter().map(|&i| av.data()[i]).collect();
        let out = Tensor::vector(data);
        self.push(out, Op::Gather(a, flat_indices.to_vec()), &[a])
    }

    /// Fused LSTM cell. `pre` holds pre-activation gates `[B, 4h]` in
    /// `input | forget | cell | output` order and `c_prev` is `[B, h]`.
    /// Returns `[B, 2h]` laid out as `h | c`.
    pub fn lstm_cell(&mut self, pre: Var, c_prev: Var) -> Var {
        let (pv, cv) = (self.value(pre), self.value(c_prev));
        let (b, h) = cv.matrix_dims();
        assert_eq!(pv.matrix_dims(), (b, 4 * h), "lstm_cell gate width");
        let mut gates = vec![0.0; b * 4 * h];
        let mut tanh_c = vec![0.0; b * h];
        let mut out = vec![0.0; b * 2 * h];
        for r in 0..b {
            let p = pv.row(r);
            let g = &mut gates[r * 4 * h..(r + 1) * 4 * h];
            for k in 0..h {
                g[k] = sigmoid(p[k]);
                g[h + k] = sigmoid(p[h + k]);
                g[2 * h + k] = p[2 * h + k].tanh();
                g[3 * h + k] = sigmoid(p[3 * h + k]);
                let c = g[h + k] * cv.row(r)[k] + g[k] * g[2 * h + k];
                let tc = c.tanh();
                tanh_c[r * h + k] = tc;
                out[r * 2 * h + k] = g[3 * h + k] * tc;
                out[r * 2 * h + h + k] = c;
            }
        }
        let out = Tensor::new(vec![b, 2 * h], out).expect("cell shape");
        self.push(
            out,
            Op::LstmCell {
                pre,
                c_prev,
                gates,
                tanh_c,
            },
            &[pre, c_prev],
        )
    }

    /// Records a scalar computed outside the tape together with its
    /// gradients with respect to `inputs`.
    pub fn scalar_with_grads(&mut self, value: f64, inputs: Vec<(Var, Tensor)>) -> Var {
        for (v, g) in &inputs {
            assert_eq!(self.value(*v).shape(), g.shape(), "local gradient shape");
        }
        let parents: Vec<Var> = inputs.iter().map(|(v, _)| *v).collect();
        self.push(Tensor::scalar(value), Op::ScalarWithGrads(inputs), &parents)
    }

    /// Back-propagates from a scalar node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).numel(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let params = self
            .param_vars
            .iter()
            .filter_map(|(&id, v)| grads[v.0].clone().map(|g| (id, g)))
            .collect();
        Gradients {
            nodes: grads,
            params,
        }
    }

    fn propagate(&self, node: &Node<'_>, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let y = node.value.as_ref();
        match &node.op {
            Op::Leaf | Op::Param | Op::Constant => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = av.matrix_dims();
                let n = bv.cols();
                if self.requires_grad(*a) {
                    let ga = self.grad_slot(grads, *a);
                    matmul_bt_acc(g.data(), bv.data(), ga.data_mut(), m, n, k);
                }
                if self.requires_grad(*b) {
                    let gb = self.grad_slot(grads, *b);
                    matmul_at_acc(av.data(), g.data(), gb.data_mut(), m, k, n);
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    self.accumulate(grads, *v, |dst| add_into(dst, g.data()));
                }
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, |dst| add_into(dst, g.data()));
                let cols = g.cols();
                self.accumulate(grads, *row, |dst| {
                    for r in 0..g.rows() {
                        add_into(dst, &g.data()[r * cols..(r + 1) * cols]);
                    }
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                self.accumulate(grads, *a, |dst| {
                    for ((d, gv), bx) in dst.iter_mut().zip(g.data()).zip(bv.data()) {
                        *d += gv * bx;
                    }
                });
                self.accumulate(grads, *b, |dst| {
                    for ((d, gv), ax) in dst.iter_mut().zip(g.data()).zip(av.data()) {
                        *d += gv * ax;
                    }
                });
            }
            Op::Scale(a, f) => {
                self.accumulate(grads, *a, |dst| {
                    for (d, gv) in dst.iter_mut().zip(g.data()) {
                        *d += f * gv;
                    }
                });
            }
            Op::Relu(a) => self.accumulate(grads, *a, |dst| {
                for ((d, gv), yv) in dst.iter_mut().zip(g.data()).zip(y.data()) {
                    if *yv > 0.0 {
                        *d += gv;
                    }
                }
            }),
            Op::Tanh(a) => self.accumulate(grads, *a, |dst| {
                for ((d, gv), yv) in dst.iter_mut().zip(g.data()).zip(y.data()) {
                    *d += gv * (1.0 - yv * yv);
                }
            }),
            Op::Sigmoid(a) => self.accumulate(grads, *a, |dst| {
                for ((d, gv), yv) in dst.iter_mut().zip(g.data()).zip(y.data()) {
                    *d += gv * yv * (1.0 - yv);
                }
            }),
            Op::Softmax(a) => {
                let cols = y.cols();
                self.accumulate(grads, *a, |dst| {
                    for r in 0..y.rows() {
                        let ys = &y.data()[r * cols..(r + 1) * cols];
                        let gs = &g.data()[r * cols..(r + 1) * cols];
                        let dot: f64 = ys.iter().zip(gs).map(|(p, q)| p * q).sum();
                        for ((d, yv), gv) in dst[r * cols..(r + 1) * cols].iter_mut().zip(ys).zip(gs) {
                            *d += yv * (gv - dot);
                        }
                    }
                });
            }
            Op::LogSumExp(a) => {
                let av = self.value(*a);
                let cols = av.cols();
                self.accumulate(grads, *a, |dst| {
                    for r in 0..av.rows() {
                        for c in 0..cols {
                            let i = r * cols + c;
                            dst[i] += g.data()[r] * (av.data()[i] - y.data()[r]).exp();
                        }
                    }
                });
            }
            Op::Sum(a) => {
                let gv = g.item();
                self.accumulate(grads, *a, |dst| dst.iter_mut().for_each(|d| *d += gv));
            }
            Op::ConcatCols(parts) => {
                let total = g.cols();
                let mut offset = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    self.accumulate(grads, *p, |dst| {
                        for r in 0..g.rows() {
                            let src = &g.data()[r * total + offset..r * total + offset + w];
                            add_into(&mut dst[r * w..(r + 1) * w], src);
                        }
                    });
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = self.value(*p).numel();
                    self.accumulate(grads, *p, |dst| add_into(dst, &g.data()[offset..offset + n]));
                    offset += n;
                }
            }
            Op::SliceCols(a, start, end) => {
                let cols = self.value(*a).cols();
                let w = end - start;
                self.accumulate(grads, *a, |dst| {
                    for r in 0..g.rows() {
                        add_into(&mut dst[r * cols + start..r * cols + end], &g.data()[r * w..(r + 1) * w]);
                    }
                });
            }
            Op::Rows(a, indices) => {
                let cols = g.cols();
                self.accumulate(grads, *a, |dst| {
                    for (r, &i) in indices.iter().enumerate() {
                        add_into(&mut dst[i * cols..(i + 1) * cols], &g.data()[r * cols..(r + 1) * cols]);
                    }
                });
            }
            Op::PairSum(a, b) => {
                let (n, l) = self.value(*a).matrix_dims();
                self.accumulate(grads, *a, |dst| {
                    for i in 0..n {
                        for j in 0..n {
                            add_into(&mut dst[i * l..(i + 1) * l], &g.data()[(i * n + j) * l..(i * n + j + 1) * l]);
                        }
                    }
                });
                self.accumulate(grads, *b, |dst| {
                    for i in 0..n {
                        for j in 0..n {
                            add_into(&mut dst[j * l..(j + 1) * l], &g.data()[(i * n + j) * l..(i * n + j + 1) * l]);
                        }
                    }
                });
            }
            Op::Aggregate {
                messages,
                edges,
                weights,
            } => {
                let mv = self.value(*messages);
                let cols = mv.cols();
                let wv = weights.map(|w| self.value(w).data().to_vec());
                self.accumulate(grads, *messages, |dst| {
                    for (e, &(t, s)) in edges.iter().enumerate() {
                        let w = wv.as_ref().map_or(1.0, |w| w[e]);
                        for (d, gv) in dst[s * cols..(s + 1) * cols].iter_mut().zip(g.row(t)) {
                            *d += w * gv;
                        }
                    }
                });
                if let Some(w) = weights {
                    self.accumulate(grads, *w, |dst| {
                        for (e, &(t, s)) in edges.iter().enumerate() {
                            dst[e] += g.row(t).iter().zip(mv.row(s)).map(|(p, q)| p * q).sum::<f64>();
                        }
                    });
                }
            }
            Op::Gather(a, indices) => {
                self.accumulate(grads, *a, |dst| {
                    for (gv, &i) in g.data().iter().zip(indices) {
                        dst[i] += gv;
                    }
                });
            }
            Op::LstmCell {
                pre,
                c_prev,
                gates,
                tanh_c,
            } => {
                let cp = self.value(*c_prev);
                let (b, h) = cp.matrix_dims();
                let mut d_pre = vec![0.0; b * 4 * h];
                let mut d_cprev = vec![0.0; b * h];
                for r in 0..b {
                    let gt = &gates[r * 4 * h..(r + 1) * 4 * h];
                    for k in 0..h {
                        let (i, f, c_hat, o) = (gt[k], gt[h + k], gt[2 * h + k], gt[3 * h + k]);
                        let tc = tanh_c[r * h + k];
                        let gh = g.data()[r * 2 * h + k];
                        let gc = g.data()[r * 2 * h + h + k] + gh * o * (1.0 - tc * tc);
                        let dp = &mut d_pre[r * 4 * h..(r + 1) * 4 * h];
                        dp[k] = gc * c_hat * i * (1.0 - i);
                        dp[h + k] = gc * cp.row(r)[k] * f * (1.0 - f);
                        dp[2 * h + k] = gc * i * (1.0 - c_hat * c_hat);
                        dp[3 * h + k] = gh * tc * o * (1.0 - o);
                        d_cprev[r * h + k] = gc * f;
                    }
                }
                self.accumulate(grads, *pre, |dst| add_into(dst, &d_pre));
                self.accumulate(grads, *c_prev, |dst| add_into(dst, &d_cprev));
            }
            Op::ScalarWithGrads(inputs) => {
                let gv = g.item();
                for (v, local) in inputs {
                    self.accumulate(grads, *v, |dst| {
                        for (d, l) in dst.iter_mut().zip(local.data()) {
                            *d += gv * l;
                        }
                    });
                }
            }
        }
    }

    fn grad_slot<'g>(&self, grads: &'g mut [Option<Tensor>], v: Var) -> &'g mut Tensor {
        grads[v.0].get_or_insert_with(|| Tensor::zeros(self.value(v).shape()))
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, f: impl FnOnce(&mut [f64])) {
        if self.requires_grad(v) {
            f(self.grad_slot(grads, v).data_mut());
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients {
    nodes: Vec<Option<Tensor>>,
    params: HashMap<ParamId, Tensor>,
}

impl Gradients {
    /// Gradient of the loss with respect to a node; `None` if the node does
    /// not influence the loss.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.nodes.get(v.0).and_then(Option::as_ref)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(&id)
    }

    pub fn into_params(self) -> HashMap<ParamId, Tensor> {
        self.params
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::numerics::{gradient_check, uniform_range};

    const STEP: f64 = 1e-5;
    const TOL: f64 = 1e-4;

    /// Inputs bounded away from zero so ReLU probes never cross the kink.
    fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let mut t = uniform_range(shape, 1.0, rng);
        for v in t.data_mut() {
            *v = v.signum() * (0.05 + v.abs());
        }
        t
    }

    /// `sum(out * r)` for a fixed random `r`, so every output entry gets a
    /// distinct upstream gradient.
    fn project(tape: &mut Tape<'_>, out: Var, seed: u64) -> Var {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = uniform_range(tape.value(out).shape(), 1.0, &mut rng);
        let r = tape.constant(r);
        let p = tape.mul(out, r);
        tape.sum(p)
    }

    fn check<F>(inputs: Vec<Tensor>, f: F)
    where
        F: Fn(&mut Tape<'_>, &[Var]) -> Var,
    {
        let err = gradient_check(
            |t, v| {
                let out = f(t, v);
                project(t, out, 99)
            },
            &inputs,
            STEP,
        )
        .unwrap();
        assert!(err < TOL, "relative error {err}");
    }

    #[test]
    fn elementwise_and_linear_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = away_from_zero(&[3, 4], &mut rng);
        let b = away_from_zero(&[4, 2], &mut rng);
        let c = away_from_zero(&[3, 4], &mut rng);
        let row = away_from_zero(&[4], &mut rng);
        check(vec![a.clone(), b], |t, v| t.matmul(v[0], v[1]));
        check(vec![a.clone(), c.clone()], |t, v| t.add(v[0], v[1]));
        check(vec![a.clone(), c.clone()], |t, v| t.mul(v[0], v[1]));
        check(vec![a.clone(), row], |t, v| t.add_row(v[0], v[1]));
        check(vec![a.clone()], |t, v| t.scale(v[0], -2.5));
        check(vec![a.clone()], |t, v| t.sum(v[0]));
    }

    #[test]
    fn activations() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = away_from_zero(&[3, 5], &mut rng).scale(2.0);
        for kind in [
            Activation::Relu,
            Activation::Tanh,
            Activation::Sigmoid,
            Activation::Softmax,
            Activation::LogSumExp,
        ] {
            check(vec![a.clone()], move |t, v| t.activate(v[0], kind));
        }
    }

    #[test]
    fn structural_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = away_from_zero(&[3, 4], &mut rng);
        let b = away_from_zero(&[3, 2], &mut rng);
        let c = away_from_zero(&[2, 4], &mut rng);
        check(vec![a.clone(), b.clone()], |t, v| t.concat_cols(&[v[0], v[1]]));
        check(vec![a.clone(), c.clone()], |t, v| t.concat_rows(&[v[0], v[1]]));
        check(vec![a.clone()], |t, v| t.slice_cols(v[0], 1, 3));
        check(vec![a.clone()], |t, v| t.rows(v[0], &[2, 0, 2, 1]));
        check(vec![a.clone()], |t, v| t.gather(v[0], &[11, 0, 5, 5]));
        let d = away_from_zero(&[3, 4], &mut rng);
        check(vec![a, d], |t, v| t.pair_sum(v[0], v[1]));
    }

    #[test]
    fn aggregate_with_and_without_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let msgs = away_from_zero(&[4, 3], &mut rng);
        let edges = [(0, 1), (0, 2), (3, 0), (1, 1), (0, 1)];
        let w = away_from_zero(&[5], &mut rng);
        check(vec![msgs.clone()], move |t, v| t.aggregate(v[0], 4, &edges, None));
        check(vec![msgs, w], move |t, v| t.aggregate(v[0], 4, &edges, Some(v[1])));
    }

    #[test]
    fn lstm_cell_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pre = away_from_zero(&[2, 12], &mut rng);
        let c = away_from_zero(&[2, 3], &mut rng);
        check(vec![pre, c], |t, v| t.lstm_cell(v[0], v[1]));
    }

    #[test]
    fn shared_nodes_accumulate() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = away_from_zero(&[2, 2], &mut rng);
        check(vec![a], |t, v| {
            let sq = t.mul(v[0], v[0]);
            let th = t.tanh(v[0]);
            t.matmul(sq, th)
        });
    }

    #[test]
    fn params_come_back_by_id() {
        let mut store = ParamStore::new();
        let w = store.add("w", crate::numerics::ParamGroup::Flat, Tensor::vector(vec![1.0, -2.0]));
        let mut tape = Tape::with_params(&store);
        let p = tape.param(w);
        assert_eq!(tape.param(w), p);
        let sq = tape.mul(p, p);
        let loss = tape.sum(sq);
        let grads = tape.backward(loss);
        assert_eq!(grads.param(w).unwrap().data(), &[2.0, -4.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::vector(vec![1.0, 2.0]));
        let x = tape.leaf(Tensor::vector(vec![3.0, 4.0]));
        let y = tape.mul(c, x);
        let loss = tape.sum(y);
        let g = tape.backward(loss);
        assert!(g.wrt(c).is_none());
        assert_eq!(g.wrt(x).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn relu_pattern_reports_input_signs() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![-1.0, 0.0, 2.0]));
        let y = tape.relu(x);
        let z = tape.scale(y, -1.0);
        tape.relu(z);
        assert_eq!(tape.relu_pattern(), vec![false, false, true, false, false, false]);
    }
}
