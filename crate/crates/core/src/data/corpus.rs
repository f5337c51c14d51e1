//! Line-delimited JSON corpus records.
//!
//! One sentence per line:
//! `{"tokens": ["a", "b"], "entities": [{"start": 0, "end": 1, "type": "PER"}]}`
//! with inclusive token indices.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AnnotatedSentence, EntitySpan, LabelInventory};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub start: usize,
    pub end: usize,
    #[serde(rename = "type")]
    pub kind: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub tokens: Vec<String>,
    #[serde(default)]
    pub entities: Vec<EntityRecord>,
}

/// Sentences plus the label inventory they were resolved against.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub labels: LabelInventory,
    pub sentences: Vec<AnnotatedSentence>,
}

impl Corpus {
    pub fn num_tokens(&self) -> usize {
        self.sentences.iter().map(AnnotatedSentence::len).sum()
    }
}

/// Parses records, reporting the 1-based line of the first malformed one.
pub fn read_records(path: &Path) -> Result<Vec<SentenceRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SentenceRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push(rec);
    }
    Ok(records)
}

pub fn inventory_of(records: &[SentenceRecord]) -> LabelInventory {
    LabelInventory::new(records.iter().flat_map(|r| r.entities.iter().map(|e| e.kind.clone())))
}

/// Resolves records against an inventory and validates every sentence.
pub fn resolve(records: Vec<SentenceRecord>, labels: &LabelInventory) -> Result<Vec<AnnotatedSentence>> {
    records
        .into_iter()
        .enumerate()
        .map(|(i, rec)| {
            let mut entities = Vec::with_capacity(rec.entities.len());
            for e in &rec.entities {
                let Some(label) = labels.id(&e.kind).filter(|&l| l < labels.num_types()) else {
                    let found = LabelInventory::new(rec.entities.iter().map(|e| e.kind.clone()));
                    return Err(Error::LabelMismatch {
                        expected: labels.names(),
                        found: found.names(),
                    });
                };
                entities.push(EntitySpan::new(e.start, e.end, label));
            }
            AnnotatedSentence::new(rec.tokens, entities, labels.num_types(), i)
        })
        .collect()
}

/// Loads a corpus, deriving the label inventory from its own mentions.
pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let records = read_records(path)?;
    let labels = inventory_of(&records);
    let sentences = resolve(records, &labels)?;
    Ok(Corpus { labels, sentences })
}

/// Loads a corpus against a fixed inventory (dev/test data, checkpoints).
pub fn load_corpus_with(path: &Path, labels: &LabelInventory) -> Result<Corpus> {
    let sentences = resolve(read_records(path)?, labels)?;
    Ok(Corpus {
        labels: labels.clone(),
        sentences,
    })
}

pub fn to_record(tokens: &[String], spans: &[EntitySpan], labels: &LabelInventory) -> SentenceRecord {
    SentenceRecord {
        tokens: tokens.to_vec(),
        entities: spans
            .iter()
            .map(|s| EntityRecord {
                start: s.start,
                end: s.end,
                kind: labels.name(s.label).to_string(),
            })
            .collect(),
    }
}

pub fn write_records<'a, W: Write>(
    mut out: W,
    records: impl IntoIterator<Item = &'a SentenceRecord>,
) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_corpus<W: Write>(out: W, corpus: &Corpus) -> Result<()> {
    let records: Vec<SentenceRecord> = corpus
        .sentences
        .iter()
        .map(|s| to_record(&s.tokens, &s.entities, &corpus.labels))
        .collect();
    write_records(out, &records)
}
