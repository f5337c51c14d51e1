//! BiLSTM-CRF tagger for outermost mentions.

mod crf;

pub use crf::{
    bioes_transition_mask, crf_log_partition, crf_nll, crf_nll_var, crf_nll_with_grads, crf_score,
    viterbi, FORBIDDEN,
};

use rand::Rng;

use crate::data::{bioes_decode, EntitySpan, TagSet};
use crate::error::Result;
use crate::nn::{dropout, BiLstm, Linear};
use crate::numerics::{ParamGroup, ParamId, ParamStore, Tape, Tensor, Var};

/// Encoder, emission projection and learned transitions. The same module
/// tags both the original and the graph-refined representation.
#[derive(Debug, Clone)]
pub struct FlatModule {
    pub tags: TagSet,
    pub encoder: BiLstm,
    pub emission: Linear,
    pub transitions: ParamId,
    /// Dropout on encoder outputs in training mode.
    pub dropout: f64,
    mask: Tensor,
}

impl FlatModule {
    pub fn new(
        store: &mut ParamStore,
        tags: TagSet,
        in_dim: usize,
        hidden: usize,
        dropout: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let group = ParamGroup::Flat;
        let encoder = BiLstm::new(store, "flat.encoder", group, in_dim, hidden, rng);
        let emission = Linear::new(store, "flat.emission", group, hidden, tags.num_tags(), true, rng);
        let k = tags.num_tags() + 2;
        let transitions = store.add("flat.transitions", group, Tensor::zeros(&[k, k]));
        Self {
            tags,
            encoder,
            emission,
            transitions,
            dropout,
            mask: bioes_transition_mask(tags),
        }
    }

    /// Emission scores `P = [N, K]` for input rows `[N, d]`.
    pub fn emissions<R: Rng>(&self, tape: &mut Tape<'_>, x: Var, rng: Option<&mut R>) -> Var {
        let h = self.encoder.forward(tape, x);
        let h = dropout(tape, h, self.dropout, rng);
        self.emission.forward(tape, h)
    }

    /// Learned transitions plus the fixed BIOES mask.
    pub fn transitions(&self, tape: &mut Tape<'_>) -> Var {
        let t = tape.param(self.transitions);
        let m = tape.constant(self.mask.clone());
        tape.add(t, m)
    }

    pub fn effective_transitions(&self, store: &ParamStore) -> Tensor {
        store.get(self.transitions).add(&self.mask).expect("transition shape")
    }

    pub fn nll(&self, tape: &mut Tape<'_>, p: Var, gold: &[usize]) -> Result<Var> {
        let t = self.transitions(tape);
        crf_nll_var(tape, p, t, gold)
    }

    /// Best tag sequence and the outermost spans it encodes.
    pub fn decode(&self, store: &ParamStore, p: &Tensor) -> (Vec<usize>, Vec<EntitySpan>) {
        let (path, _) = viterbi(p, &self.effective_transitions(store));
        let spans = bioes_decode(&path, self.tags);
        (path, spans)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::numerics::uniform_range;

    #[test]
    fn emission_shape_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let tags = TagSet::new(2);
        let flat = FlatModule::new(&mut store, tags, 6, 8, 0.5, &mut rng);
        let x = uniform_range(&[4, 6], 1.0, &mut rng);
        let run = || {
            let mut tape = Tape::with_params(&store);
            let xv = tape.constant(x.clone());
            let p = flat.emissions::<ChaCha8Rng>(&mut tape, xv, None);
            tape.value(p).clone()
        };
        let p = run();
        assert_eq!(p.shape(), &[4, 9]);
        assert_eq!(p, run());
    }

    #[test]
    fn single_token_sentence_decodes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let flat = FlatModule::new(&mut store, TagSet::new(3), 4, 4, 0.0, &mut rng);
        let mut tape = Tape::with_params(&store);
        let x = tape.constant(uniform_range(&[1, 4], 1.0, &mut rng));
        let p = flat.emissions::<ChaCha8Rng>(&mut tape, x, None);
        let (path, spans) = flat.decode(&store, tape.value(p));
        assert_eq!(path.len(), 1);
        assert!(spans.len() <= 1);
    }

    #[test]
    fn viterbi_ignores_a_constant_shift_of_emissions() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let flat = FlatModule::new(&mut store, TagSet::new(2), 4, 4, 0.0, &mut rng);
        *store.get_mut(flat.transitions) = uniform_range(&[11, 11], 1.0, &mut rng);
        let p = uniform_range(&[6, 9], 3.0, &mut rng);
        let shifted = p.map(|v| v + 2.5);
        assert_eq!(flat.decode(&store, &p).0, flat.decode(&store, &shifted).0);
    }
}
