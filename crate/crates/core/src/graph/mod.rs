//! Graph module: entity and adjacency graphs, bidirectional graph
//! convolution, span scoring, the inner-mention loss and the score graph
//! that feeds back into the flat tagger.

mod module;
mod structure;

pub use module::{inner_loss, inner_loss_var, inner_loss_with_grad, BiGcn, GraphModule, PROB_FLOOR};
pub use structure::{
    build_adjacent_graph, build_entity_graph, cell_argmax, decode_inner, score_to_graph,
    DirectedGraph, WeightedGraph,
};
