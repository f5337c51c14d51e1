use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{
    bioes_encode, split_layers, AnnotatedSentence, EmbeddingTable, EntitySpan, GoldScoreTensor,
    LabelInventory, TagSet, Vocabulary,
};
use crate::error::{Error, Result};
use crate::flat::FlatModule;
use crate::graph::{
    build_adjacent_graph, build_entity_graph, decode_inner, inner_loss_var, score_to_graph,
    GraphModule,
};
use crate::numerics::{ParamGroup, ParamStore, Tape, Tensor, Var};
use crate::representation::{ReprConfig, Representation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    /// Plain gradient descent rate for representation and flat parameters.
    pub lr_flat: f64,
    /// Adam rate for graph parameters.
    pub lr_graph: f64,
    pub dropout: f64,
    /// BiLSTM width (both directions together); also the width of `X`.
    pub hidden: usize,
    /// Graph feature width `d_f`; must equal `hidden` because the flat
    /// tagger reads both `X` and `X_new`.
    pub gcn_hidden: usize,
    pub word_dim: usize,
    pub char_emb_dim: usize,
    pub char_dim: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Epochs without dev improvement before stopping.
    pub patience: usize,
    /// Gradient norm bound per sentence; a batch's summed gradient is
    /// clipped at `clip_norm * batch size`.
    pub clip_norm: f64,
    /// Replace graph convolutions with edge-free linear maps.
    pub no_graph: bool,
    /// Skip the second flat pass over `X_new`.
    pub no_feedback: bool,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            lr_flat: 0.015,
            lr_graph: 0.001,
            dropout: 0.5,
            hidden: 256,
            gcn_hidden: 256,
            word_dim: 100,
            char_emb_dim: 25,
            char_dim: 50,
            lambda1: 1.5,
            lambda2: 1.5,
            batch_size: 10,
            epochs: 100,
            seed: 1,
            patience: 10,
            clip_norm: 5.0,
            no_graph: false,
            no_feedback: false,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, message: String| {
            Err(Error::Config {
                field: field.into(),
                message,
            })
        };
        for (field, v) in [
            ("lr_flat", self.lr_flat),
            ("lr_graph", self.lr_graph),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("clip_norm", self.clip_norm),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(field, format!("must be positive, got {v}"));
            }
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive".into());
        }
        if self.gcn_hidden != self.hidden {
            return bad(
                "gcn_hidden",
                format!("must equal hidden ({}), got {}", self.hidden, self.gcn_hidden),
            );
        }
        self.repr_config().validate()
    }

    pub fn repr_config(&self) -> ReprConfig {
        ReprConfig {
            word_dim: self.word_dim,
            char_emb_dim: self.char_emb_dim,
            char_dim: self.char_dim,
            context_dim: self.hidden,
            dropout: self.dropout,
        }
    }
}

/// Gold targets derived once per sentence.
#[derive(Debug, Clone)]
pub struct Targets {
    pub tags: Vec<usize>,
    pub inner: GoldScoreTensor,
}

impl Targets {
    pub fn new(sentence: &AnnotatedSentence, labels: &LabelInventory) -> Result<Self> {
        let layers = split_layers(&sentence.entities)?;
        let n = sentence.len();
        Ok(Self {
            tags: bioes_encode(&layers.outermost, n, TagSet::new(labels.num_types()))?,
            inner: GoldScoreTensor::from_inner(&layers.inner, n, labels.num_labels()),
        })
    }
}

/// Nodes of one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub x: Var,
    pub p1: Var,
    /// Spans decoded from the first flat pass; they define the entity graph.
    pub flat_spans: Vec<EntitySpan>,
    pub m: Var,
    pub x_new: Option<Var>,
    pub p2: Option<Var>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decisions {
    pub flat_spans: Vec<EntitySpan>,
    pub score_edges: Vec<(usize, usize)>,
    pub relu_pattern: Vec<bool>,
}

/// Per-sentence loss nodes.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub outer: Var,
    pub inner: Var,
}

/// Every trainable tensor plus the module layout that reads them.
#[derive(Debug, Clone)]
pub struct Model {
    pub hp: Hyperparams,
    pub labels: LabelInventory,
    pub vocab: Vocabulary,
    pub store: ParamStore,
    pub repr: Representation,
    pub flat: FlatModule,
    pub graph: GraphModule,
}

impl Model {
    pub fn new(
        labels: LabelInventory,
        vocab: Vocabulary,
        embeddings: Option<&EmbeddingTable>,
        hp: Hyperparams,
    ) -> Result<Self> {
        hp.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
        let word_init = vocab.embedding_matrix(embeddings, hp.word_dim, &mut rng)?;
        let mut store = ParamStore::new();
        let repr = Representation::new(&mut store, hp.repr_config(), word_init, vocab.num_chars(), &mut rng)?;
        let tags = TagSet::new(labels.num_types());
        let flat = FlatModule::new(&mut store, tags, hp.hidden, hp.hidden, hp.dropout, &mut rng);
        let mut graph = GraphModule::new(&mut store, hp.hidden, hp.gcn_hidden, labels.num_labels(), &mut rng);
        graph.use_edges = !hp.no_graph;
        Ok(Self {
            hp,
            labels,
            vocab,
            store,
            repr,
            flat,
            graph,
        })
    }

    pub fn tags(&self) -> TagSet {
        self.flat.tags
    }

    /// One flat, graph, flat cycle. Dropout is active when `rng` is given.
    pub fn forward(&self, tape: &mut Tape<'_>, tokens: &[String], mut rng: Option<&mut ChaCha8Rng>) -> Forward {
        let n = tokens.len();
        let x = self.repr.forward(tape, &self.vocab, tokens, rng.as_deref_mut());
        let p1 = self.flat.emissions(tape, x, rng.as_deref_mut());
        let (_, flat_spans) = self.flat.decode(&self.store, tape.value(p1));
        let g1 = build_entity_graph(&flat_spans, n);
        let g2 = build_adjacent_graph(n);
        let f = self.graph.span_features(tape, x, &g1, &g2);
        let m = self.graph.entity_scores(tape, f);
        let (x_new, p2) = if self.hp.no_feedback {
            (None, None)
        } else {
            let g3 = score_to_graph(tape.value(m), n);
            let x_new = self.graph.new_representation(tape, x, &g3, m);
            let p2 = self.flat.emissions(tape, x_new, rng);
            (Some(x_new), Some(p2))
        };
        Forward {
            x,
            p1,
            flat_spans,
            m,
            x_new,
            p2,
        }
    }

    /// Outermost loss (both flat passes) and inner loss for one sentence.
    pub fn losses(&self, tape: &mut Tape<'_>, fwd: &Forward, targets: &Targets) -> Result<LossVars> {
        let mut outer = self.flat.nll(tape, fwd.p1, &targets.tags)?;
        if let Some(p2) = fwd.p2 {
            let second = self.flat.nll(tape, p2, &targets.tags)?;
            outer = tape.add(outer, second);
        }
        let inner = inner_loss_var(tape, fwd.m, &targets.inner, self.hp.lambda1);
        Ok(LossVars { outer, inner })
    }

    /// Outermost spans from the final flat pass together with inner spans
    /// read from the score grid, deduplicated and sorted.
    pub fn predict(&self, tokens: &[String]) -> Vec<EntitySpan> {
        let mut tape = Tape::with_params(&self.store);
        let fwd = self.forward(&mut tape, tokens, None);
        let last = fwd.p2.unwrap_or(fwd.p1);
        let (_, outer) = self.flat.decode(&self.store, tape.value(last));
        let inner = decode_inner(tape.value(fwd.m), tokens.len());
        outer.into_iter().chain(inner).collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn predict_all(&self, sentences: &[AnnotatedSentence]) -> Vec<Vec<EntitySpan>> {
        sentences.iter().map(|s| self.predict(&s.tokens)).collect()
    }

    /// Score grid `[N * N, L]` of one sentence in evaluation mode.
    pub fn entity_scores(&self, tokens: &[String]) -> Tensor {
        let mut tape = Tape::with_params(&self.store);
        let fwd = self.forward(&mut tape, tokens, None);
        tape.value(fwd.m).clone()
    }

    /// Discrete choices made by an evaluation-mode forward pass. The loss is
    /// smooth in the parameters wherever these stay fixed.
    pub fn decisions(&self, tokens: &[String]) -> Decisions {
        let mut tape = Tape::with_params(&self.store);
        let fwd = self.forward(&mut tape, tokens, None);
        let score_edges = if self.hp.no_feedback {
            Vec::new()
        } else {
            score_to_graph(tape.value(fwd.m), tokens.len()).edges().to_vec()
        };
        Decisions {
            flat_spans: fwd.flat_spans,
            score_edges,
            relu_pattern: tape.relu_pattern(),
        }
    }

    pub fn group_of(&self, name: &str) -> Option<ParamGroup> {
        self.store.id(name).map(|id| self.store.param(id).group)
    }

    /// Fresh rng for a training run, independent of the initialization stream.
    pub fn training_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.hp.seed);
        rng.set_stream(1);
        rng
    }
}

/// Shuffles `0..n` with the given rng (Fisher-Yates).
pub(crate) fn shuffled(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}

impl Model {
    /// Evaluation-mode total loss `L_outer + lambda2 * L_inner` of one
    /// sentence with its parameter gradients.
    pub fn loss_and_gradients(
        &self,
        sentence: &AnnotatedSentence,
    ) -> Result<(f64, std::collections::HashMap<crate::numerics::ParamId, Tensor>)> {
        let targets = Targets::new(sentence, &self.labels)?;
        let mut tape = Tape::with_params(&self.store);
        let fwd = self.forward(&mut tape, &sentence.tokens, None);
        let lv = self.losses(&mut tape, &fwd, &targets)?;
        let inner = tape.scale(lv.inner, self.hp.lambda2);
        let total = tape.add(lv.outer, inner);
        let value = tape.value(total).item();
        Ok((value, tape.backward(total).into_params()))
    }
}
