//! Graphs over token positions and the span-score grid they are read from.
//!
//! The score tensor `M` is stored as `[N * N, L]`: row `i * N + j` holds
//! the type distribution of span `[i, j]`. Only cells with `i <= j` are
//! meaningful.

use crate::data::EntitySpan;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Unweighted directed graph without self-loops or duplicate edges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectedGraph {
    n: usize,
    edges: Vec<(usize, usize)>,
}

impl DirectedGraph {
    pub fn new(n: usize, mut edges: Vec<(usize, usize)>) -> Result<Self> {
        edges.sort_unstable();
        for w in edges.windows(2) {
            if w[0] == w[1] {
                return Err(Error::Graph(format!("duplicate edge {:?}", w[0])));
            }
        }
        for &(i, j) in &edges {
            if i >= n || j >= n {
                return Err(Error::Graph(format!("edge ({i}, {j}) outside {n} nodes")));
            }
            if i == j {
                return Err(Error::Graph(format!("self-loop at {i}")));
            }
        }
        Ok(Self { n, edges })
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }
}

/// Graph read off the score tensor. Each edge `(i, j)` remembers the
/// entry of `M` its weight came from so the weight can stay differentiable.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraph {
    n: usize,
    edges: Vec<(usize, usize)>,
    weights: Vec<f64>,
    sources: Vec<usize>,
}

impl WeightedGraph {
    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Flat index into `M`'s data for each edge weight.
    pub fn sources(&self) -> &[usize] {
        &self.sources
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }
}

/// Edges `(i, j)`, `i < j`, between every pair of tokens inside a span.
pub fn build_entity_graph(spans: &[EntitySpan], n: usize) -> DirectedGraph {
    let mut edges = Vec::new();
    for s in spans {
        assert!(s.end < n, "span {s} outside {n} tokens");
        for i in s.start..=s.end {
            for j in i + 1..=s.end {
                edges.push((i, j));
            }
        }
    }
    edges.sort_unstable();
    edges.dedup();
    DirectedGraph { n, edges }
}

/// Left-to-right chain `(i, i + 1)`.
pub fn build_adjacent_graph(n: usize) -> DirectedGraph {
    DirectedGraph {
        n,
        edges: (1..n).map(|j| (j - 1, j)).collect(),
    }
}

/// Argmax over one cell's distribution. Any tie involving 'O' (the last
/// entry) resolves to 'O'; ties among entity types go to the lowest id.
pub fn cell_argmax(probs: &[f64]) -> usize {
    let outside = probs.len() - 1;
    let mut best = outside;
    let mut best_p = probs[outside];
    for (k, &p) in probs[..outside].iter().enumerate() {
        if p > best_p {
            best = k;
            best_p = p;
        }
    }
    best
}

fn check_grid(m: &Tensor, n: usize) -> usize {
    let (rows, l) = m.matrix_dims();
    assert_eq!(rows, n * n, "score grid for {n} tokens");
    l
}

/// Weighted graph with an edge `(i, j)` for every cell `i <= j` whose
/// argmax is an entity type, weighted by that type's probability.
pub fn score_to_graph(m: &Tensor, n: usize) -> WeightedGraph {
    let l = check_grid(m, n);
    let mut g = WeightedGraph {
        n,
        edges: Vec::new(),
        weights: Vec::new(),
        sources: Vec::new(),
    };
    for i in 0..n {
        for j in i..n {
            let cell = i * n + j;
            let k = cell_argmax(m.row(cell));
            if k + 1 != l {
                g.edges.push((i, j));
                g.weights.push(m.get2(cell, k));
                g.sources.push(cell * l + k);
            }
        }
    }
    g
}

/// Spans `[i, j]` whose cell argmax is an entity type.
pub fn decode_inner(m: &Tensor, n: usize) -> Vec<EntitySpan> {
    let l = check_grid(m, n);
    let mut spans = Vec::new();
    for i in 0..n {
        for j in i..n {
            let k = cell_argmax(m.row(i * n + j));
            if k + 1 != l {
                spans.push(EntitySpan::new(i, j, k));
            }
        }
    }
    spans
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::data::GoldScoreTensor;

    fn grid(n: usize, cells: &[(usize, usize, Vec<f64>)], l: usize) -> Tensor {
        let mut m = Tensor::zeros(&[n * n, l]);
        for r in 0..n * n {
            m.set2(r, l - 1, 1.0);
        }
        for (i, j, p) in cells {
            m.data_mut()[(i * n + j) * l..(i * n + j + 1) * l].copy_from_slice(p);
        }
        m
    }

    #[test]
    fn entity_graph_examples() {
        let g = build_entity_graph(&[EntitySpan::new(0, 2, 0)], 3);
        assert_eq!(g.edges(), &[(0, 1), (0, 2), (1, 2)]);
        assert_eq!(build_entity_graph(&[EntitySpan::new(3, 3, 0)], 4).num_edges(), 0);
        let g = build_entity_graph(&[EntitySpan::new(0, 1, 0), EntitySpan::new(3, 4, 1)], 5);
        assert_eq!(g.edges(), &[(0, 1), (3, 4)]);
    }

    #[test]
    fn adjacent_graph_examples() {
        assert_eq!(build_adjacent_graph(4).edges(), &[(0, 1), (1, 2), (2, 3)]);
        assert_eq!(build_adjacent_graph(1).num_edges(), 0);
    }

    #[test]
    fn constructor_rejects_malformed_edges() {
        assert!(DirectedGraph::new(3, vec![(0, 1), (1, 2)]).is_ok());
        assert!(matches!(DirectedGraph::new(3, vec![(1, 1)]), Err(Error::Graph(_))));
        assert!(matches!(DirectedGraph::new(3, vec![(0, 3)]), Err(Error::Graph(_))));
        assert!(matches!(DirectedGraph::new(3, vec![(0, 1), (0, 1)]), Err(Error::Graph(_))));
    }

    #[test]
    fn score_graph_follows_the_cell_argmax() {
        // Types: PER = 0, O = 1.
        let m = grid(2, &[(0, 0, vec![0.4, 0.6]), (0, 1, vec![0.7, 0.3])], 2);
        let g = score_to_graph(&m, 2);
        assert_eq!(g.edges(), &[(0, 1)]);
        assert_eq!(g.weights(), &[0.7]);
        assert_eq!(g.sources(), &[2]);
    }

    #[test]
    fn ties_with_outside_emit_no_edge() {
        let m = grid(1, &[(0, 0, vec![0.25; 4])], 4);
        assert_eq!(score_to_graph(&m, 1).num_edges(), 0);
        assert_eq!(cell_argmax(&[0.4, 0.4, 0.2]), 0);
        assert_eq!(cell_argmax(&[0.2, 0.4, 0.4]), 2);
    }

    #[test]
    fn lower_triangle_is_ignored() {
        let m = grid(2, &[(1, 0, vec![0.9, 0.1])], 2);
        assert_eq!(score_to_graph(&m, 2).num_edges(), 0);
        assert!(decode_inner(&m, 2).is_empty());
    }

    #[test]
    fn gold_one_hot_decodes_to_gold_spans() {
        let inner = [EntitySpan::new(0, 1, 2), EntitySpan::new(1, 3, 0), EntitySpan::new(2, 2, 1)];
        let gold = GoldScoreTensor::from_inner(&inner, 4, 4);
        let m = gold.to_one_hot().reshape(&[16, 4]).unwrap();
        assert_eq!(decode_inner(&m, 4), inner.to_vec());
    }

    #[test]
    fn decoding_matches_a_cell_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let n = rng.gen_range(1..6);
            let l = rng.gen_range(2..5);
            let mut m = Tensor::zeros(&[n * n, l]);
            for v in m.data_mut() {
                *v = rng.gen_range(0..4) as f64 / 4.0;
            }
            let mut expected = Vec::new();
            for i in 0..n {
                for j in i..n {
                    let row = m.row(i * n + j);
                    let top = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    if row[l - 1] == top {
                        continue;
                    }
                    let k = row.iter().position(|&p| p == top).unwrap();
                    expected.push(EntitySpan::new(i, j, k));
                }
            }
            assert_eq!(decode_inner(&m, n), expected);
            let g = score_to_graph(&m, n);
            let from_graph: Vec<(usize, usize)> = expected.iter().map(|s| (s.start, s.end)).collect();
            assert_eq!(g.edges(), from_graph.as_slice());
            assert!(g.weights().iter().all(|&w| w > 0.0 && w <= 1.0));
        }
    }
}
