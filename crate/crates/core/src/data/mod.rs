//! Corpus ingestion, nested-annotation modelling and the BIOES codec.

mod bioes;
mod corpus;
mod span;
pub mod synth;
mod vocab;

pub use bioes::{bioes_decode, bioes_encode, Position, TagSet};
pub use corpus::{
    inventory_of, load_corpus, load_corpus_with, read_records, resolve, to_record, write_corpus,
    write_records, Corpus, EntityRecord, SentenceRecord,
};
pub use span::{
    outermost_flags, split_layers, AnnotatedSentence, EntitySpan, GoldScoreTensor, LabelInventory,
    Layers, SpanSet,
};
pub use synth::{synthesize, CorpusStats};
pub use vocab::{load_embeddings, EmbeddingTable, Vocabulary, UNKNOWN_WORD};
