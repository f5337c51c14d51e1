//! Token representation: word embeddings, a character-level BiLSTM summary
//! per token, and a context BiLSTM over the concatenation.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::nn::{dropout, BiLstm, Lstm};
use crate::numerics::{uniform_range, ParamGroup, ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReprConfig {
    /// Word-embedding width `d_w`.
    pub word_dim: usize,
    /// Character-embedding width fed to the character BiLSTM.
    pub char_emb_dim: usize,
    /// Character feature width `d_c` (both directions together).
    pub char_dim: usize,
    /// Context width `d_x` (both directions together).
    pub context_dim: usize,
    pub dropout: f64,
}

impl Default for ReprConfig {
    fn default() -> Self {
        Self {
            word_dim: 100,
            char_emb_dim: 25,
            char_dim: 50,
            context_dim: 512,
            dropout: 0.5,
        }
    }
}

impl ReprConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("word_dim", self.word_dim),
            ("char_emb_dim", self.char_emb_dim),
            ("char_dim", self.char_dim),
            ("context_dim", self.context_dim),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::Config {
                    field: field.into(),
                    message: "must be positive".into(),
                });
            }
        }
        for (field, v) in [("char_dim", self.char_dim), ("context_dim", self.context_dim)] {
            if v % 2 != 0 {
                return Err(Error::Config {
                    field: field.into(),
                    message: format!("must be even, got {v}"),
                });
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config {
                field: "dropout".into(),
                message: format!("must lie in [0, 1), got {}", self.dropout),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Representation {
    pub config: ReprConfig,
    pub word_embeddings: ParamId,
    pub char_embeddings: ParamId,
    pub char_encoder: BiLstm,
    pub context: BiLstm,
}

impl Representation {
    /// `word_init` is the `[num_words, d_w]` embedding matrix aligned with
    /// the vocabulary's word ids.
    pub fn new(
        store: &mut ParamStore,
        config: ReprConfig,
        word_init: Tensor,
        num_chars: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate()?;
        if word_init.cols() != config.word_dim {
            return Err(Error::Dimension {
                what: "word embedding matrix".into(),
                expected: config.word_dim,
                found: word_init.cols(),
            });
        }
        let group = ParamGroup::Flat;
        let word_embeddings = store.add("repr.word_emb", group, word_init);
        let bound = (3.0 / config.char_emb_dim as f64).sqrt();
        let char_embeddings = store.add(
            "repr.char_emb",
            group,
            uniform_range(&[num_chars, config.char_emb_dim], bound, rng),
        );
        let char_encoder = BiLstm::new(
            store,
            "repr.char",
            group,
            config.char_emb_dim,
            config.char_dim,
            rng,
        );
        let context = BiLstm::new(
            store,
            "repr.context",
            group,
            config.word_dim + config.char_dim,
            config.context_dim,
            rng,
        );
        Ok(Self {
            config,
            word_embeddings,
            char_embeddings,
            char_encoder,
            context,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.config.context_dim
    }

    /// Character features `[N, d_c]` for tokens given as character-id
    /// sequences. Tokens of equal length run through the LSTMs as one batch.
    ///
    /// # Panics
    /// If any token is empty.
    pub fn char_encode(&self, tape: &mut Tape<'_>, tokens: &[Vec<usize>]) -> Var {
        assert!(tokens.iter().all(|t| !t.is_empty()), "char_encode needs nonempty tokens");
        let mut by_len: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, t) in tokens.iter().enumerate() {
            by_len.entry(t.len()).or_default().push(i);
        }
        let table = tape.param(self.char_embeddings);
        let mut blocks = Vec::with_capacity(by_len.len());
        let mut order = Vec::with_capacity(tokens.len());
        for (len, members) in &by_len {
            let steps: Vec<Var> = (0..*len)
                .map(|t| {
                    let ids: Vec<usize> = members.iter().map(|&m| tokens[m][t]).collect();
                    tape.rows(table, &ids)
                })
                .collect();
            let fwd = last_state(tape, &self.char_encoder.forward, &steps, false);
            let bwd = last_state(tape, &self.char_encoder.backward, &steps, true);
            blocks.push(tape.concat_cols(&[fwd, bwd]));
            order.extend_from_slice(members);
        }
        let stacked = tape.concat_rows(&blocks);
        // Row r of `stacked` belongs to token order[r]; invert.
        let mut position = vec![0; tokens.len()];
        for (r, &tok) in order.iter().enumerate() {
            position[tok] = r;
        }
        tape.rows(stacked, &position)
    }

    /// `[N, d_w + d_c]` rows `[w_i ; c_i]`.
    pub fn token_represent(&self, tape: &mut Tape<'_>, vocab: &Vocabulary, tokens: &[String]) -> Var {
        let word_ids: Vec<usize> = tokens.iter().map(|t| vocab.word_id(t)).collect();
        let char_ids: Vec<Vec<usize>> = tokens.iter().map(|t| vocab.char_ids(t)).collect();
        let table = tape.param(self.word_embeddings);
        let words = tape.rows(table, &word_ids);
        let chars = self.char_encode(tape, &char_ids);
        tape.concat_cols(&[words, chars])
    }

    /// Context BiLSTM over token rows; dropout on its input and output
    /// when an rng is supplied (training mode).
    pub fn context_encode<R: Rng>(&self, tape: &mut Tape<'_>, t: Var, mut rng: Option<&mut R>) -> Var {
        let t = dropout(tape, t, self.config.dropout, rng.as_deref_mut());
        let x = self.context.forward(tape, t);
        dropout(tape, x, self.config.dropout, rng)
    }

    /// `X = [N, d_x]` for a sentence.
    pub fn forward<R: Rng>(
        &self,
        tape: &mut Tape<'_>,
        vocab: &Vocabulary,
        tokens: &[String],
        rng: Option<&mut R>,
    ) -> Var {
        let t = self.token_represent(tape, vocab, tokens);
        self.context_encode(tape, t, rng)
    }
}

fn last_state(tape: &mut Tape<'_>, lstm: &Lstm, steps: &[Var], reverse: bool) -> Var {
    let w_ih = tape.param(lstm.w_ih);
    let bias = tape.param(lstm.bias);
    let batch = tape.value(steps[0]).rows();
    let mut gates: Vec<Var> = steps
        .iter()
        .map(|&s| {
            let g = tape.matmul(s, w_ih);
            tape.add_row(g, bias)
        })
        .collect();
    if reverse {
        gates.reverse();
    }
    *lstm.run(tape, &gates, batch).last().expect("at least one step")
}
