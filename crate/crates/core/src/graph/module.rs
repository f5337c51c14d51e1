use rand::Rng;

use super::{DirectedGraph, WeightedGraph};
use crate::data::GoldScoreTensor;
use crate::nn::Linear;
use crate::numerics::{ParamGroup, ParamId, ParamStore, Tape, Tensor, Var};

/// Lower bound applied to probabilities before taking logs in the inner loss.
pub const PROB_FLOOR: f64 = 1e-12;

/// One bidirectional graph convolution followed by a projection of the
/// concatenated directions back to `d_f`.
#[derive(Debug, Clone)]
pub struct BiGcn {
    pub outgoing: Linear,
    pub incoming: Linear,
    pub projection: Linear,
}

impl BiGcn {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let g = ParamGroup::Graph;
        Self {
            outgoing: Linear::new(store, &format!("{name}.out"), g, in_dim, hidden, true, rng),
            incoming: Linear::new(store, &format!("{name}.in"), g, in_dim, hidden, true, rng),
            projection: Linear::new(store, &format!("{name}.proj"), g, 2 * hidden, hidden, false, rng),
        }
    }

    /// `[N, 2 d_f]` features: node `i` sums `x_j W + b` over its outgoing
    /// edges `(i, j)` in the first half and over incoming edges `(j, i)` in
    /// the second, each sum passed through ReLU. `weights`, one per edge,
    /// scale the summands.
    pub fn features(&self, tape: &mut Tape<'_>, x: Var, n: usize, edges: &[(usize, usize)], weights: Option<Var>) -> Var {
        let out_msgs = self.outgoing.forward(tape, x);
        let in_msgs = self.incoming.forward(tape, x);
        let out_edges: Vec<(usize, usize)> = edges.to_vec();
        let in_edges: Vec<(usize, usize)> = edges.iter().map(|&(i, j)| (j, i)).collect();
        let f_out = tape.aggregate(out_msgs, n, &out_edges, weights);
        let f_in = tape.aggregate(in_msgs, n, &in_edges, weights);
        let f_out = tape.relu(f_out);
        let f_in = tape.relu(f_in);
        tape.concat_cols(&[f_out, f_in])
    }

    /// Edge-free replacement: every node sees only itself through a plain
    /// linear map.
    pub fn local_features(&self, tape: &mut Tape<'_>, x: Var) -> Var {
        let a = self.outgoing.forward(tape, x);
        let b = self.incoming.forward(tape, x);
        let a = tape.relu(a);
        let b = tape.relu(b);
        tape.concat_cols(&[a, b])
    }

    pub fn project(&self, tape: &mut Tape<'_>, f: Var) -> Var {
        self.projection.forward(tape, f)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.outgoing.params();
        p.extend(self.incoming.params());
        p.extend(self.projection.params());
        p
    }
}

/// Graph-module parameters: three Bi-GCNs (entity graph, adjacency graph,
/// score graph), the aggregation map, the span scorer and the feedback map.
#[derive(Debug, Clone)]
pub struct GraphModule {
    pub hidden: usize,
    pub num_labels: usize,
    /// Replace every Bi-GCN with its edge-free linear counterpart.
    pub use_edges: bool,
    pub entity_gcn: BiGcn,
    pub adjacent_gcn: BiGcn,
    pub score_gcn: BiGcn,
    pub combine: Linear,
    pub start_proj: Linear,
    pub end_proj: Linear,
    pub start_out: Linear,
    pub end_out: Linear,
    pub feedback: Linear,
}

impl GraphModule {
    pub fn new(
        store: &mut ParamStore,
        in_dim: usize,
        hidden: usize,
        num_labels: usize,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(hidden % 2 == 0, "graph width must be even, got {hidden}");
        let g = ParamGroup::Graph;
        let half = hidden / 2;
        Self {
            hidden,
            num_labels,
            use_edges: true,
            entity_gcn: BiGcn::new(store, "graph.g1", in_dim, hidden, rng),
            adjacent_gcn: BiGcn::new(store, "graph.g2", in_dim, hidden, rng),
            score_gcn: BiGcn::new(store, "graph.g3", in_dim, hidden, rng),
            combine: Linear::new(store, "graph.combine", g, 2 * hidden, hidden, true, rng),
            start_proj: Linear::new(store, "graph.w1", g, hidden, half, false, rng),
            end_proj: Linear::new(store, "graph.w2", g, hidden, half, false, rng),
            start_out: Linear::new(store, "graph.w3.start", g, half, num_labels, false, rng),
            end_out: Linear::new(store, "graph.w3.end", g, half, num_labels, false, rng),
            feedback: Linear::new(store, "graph.feedback", g, in_dim, hidden, true, rng),
        }
    }

    fn gcn(&self, tape: &mut Tape<'_>, gcn: &BiGcn, x: Var, n: usize, edges: &[(usize, usize)], weights: Option<Var>) -> Var {
        let f = if self.use_edges {
            gcn.features(tape, x, n, edges, weights)
        } else {
            gcn.local_features(tape, x)
        };
        gcn.project(tape, f)
    }

    /// `F = [N, d_f]` from the entity and adjacency graphs.
    pub fn span_features(&self, tape: &mut Tape<'_>, x: Var, g1: &DirectedGraph, g2: &DirectedGraph) -> Var {
        let n = g1.num_nodes();
        let f1 = self.gcn(tape, &self.entity_gcn, x, n, g1.edges(), None);
        let f2 = self.gcn(tape, &self.adjacent_gcn, x, n, g2.edges(), None);
        self.aggregate(tape, f1, f2)
    }

    /// `W_c [f1 ; f2] + b_c`.
    pub fn aggregate(&self, tape: &mut Tape<'_>, f1: Var, f2: Var) -> Var {
        let cat = tape.concat_cols(&[f1, f2]);
        self.combine.forward(tape, cat)
    }

    /// Span-type distributions `M = [N * N, L]`; row `i * N + j` is
    /// `softmax(W_3 ReLU([W_1 f_i ; W_2 f_j]))`.
    pub fn entity_scores(&self, tape: &mut Tape<'_>, f: Var) -> Var {
        let a = self.start_proj.forward(tape, f);
        let a = tape.relu(a);
        let a = self.start_out.forward(tape, a);
        let b = self.end_proj.forward(tape, f);
        let b = tape.relu(b);
        let b = self.end_out.forward(tape, b);
        let logits = tape.pair_sum(a, b);
        tape.softmax(logits)
    }

    /// `X_new = X W_r + b_r + proj(BiGCN(X, G3))`, with edge weights
    /// gathered from `m` so they carry gradient.
    pub fn new_representation(&self, tape: &mut Tape<'_>, x: Var, g3: &WeightedGraph, m: Var) -> Var {
        let base = self.feedback.forward(tape, x);
        if self.use_edges && g3.num_edges() == 0 {
            return base;
        }
        let weights = self.use_edges.then(|| tape.gather(m, g3.sources()));
        let extra = self.gcn(tape, &self.score_gcn, x, g3.num_nodes(), g3.edges(), weights);
        tape.add(base, extra)
    }
}

/// Weighted cross-entropy over cells `i <= j`: weight 1 where the gold
/// type is 'O' and `lambda1` elsewhere. Returns the loss and its gradient
/// with respect to `M`.
pub fn inner_loss_with_grad(m: &Tensor, gold: &GoldScoreTensor, lambda1: f64) -> (f64, Tensor) {
    let n = gold.n();
    let l = gold.num_labels();
    assert_eq!(m.shape(), &[n * n, l], "score grid shape");
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(m.shape());
    for i in 0..n {
        for j in i..n {
            let cell = i * n + j;
            let k = gold.target(i, j);
            let w = if gold.is_outside(i, j) { 1.0 } else { lambda1 };
            let p = m.get2(cell, k);
            loss -= w * p.max(PROB_FLOOR).ln();
            if p > PROB_FLOOR {
                grad.set2(cell, k, -w / p);
            }
        }
    }
    (loss, grad)
}

pub fn inner_loss(m: &Tensor, gold: &GoldScoreTensor, lambda1: f64) -> f64 {
    inner_loss_with_grad(m, gold, lambda1).0
}

pub fn inner_loss_var(tape: &mut Tape<'_>, m: Var, gold: &GoldScoreTensor, lambda1: f64) -> Var {
    let (value, grad) = inner_loss_with_grad(tape.value(m), gold, lambda1);
    tape.scalar_with_grads(value, vec![(m, grad)])
}
