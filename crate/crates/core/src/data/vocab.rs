use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::AnnotatedSentence;
use crate::error::{Error, Result};
use crate::numerics::{uniform_range, Tensor};

pub const UNKNOWN_WORD: &str = "<unk>";

/// Pre-trained vectors keyed by token, as read from a text file.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    dim: usize,
    index: HashMap<String, usize>,
    vectors: Vec<f64>,
}

impl EmbeddingTable {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.index
            .get(token)
            .map(|&i| &self.vectors[i * self.dim..(i + 1) * self.dim])
    }
}

impl EmbeddingTable {
    /// Uniform(-sqrt(3/d), sqrt(3/d)) vectors for the given words, in order.
    pub fn random<'a>(words: impl IntoIterator<Item = &'a str>, dim: usize, rng: &mut impl Rng) -> Self {
        let mut table = Self {
            dim,
            index: HashMap::new(),
            vectors: Vec::new(),
        };
        let bound = (3.0 / dim as f64).sqrt();
        for w in words {
            if table.index.contains_key(w) {
                continue;
            }
            table.index.insert(w.to_string(), table.index.len());
            table.vectors.extend((0..dim).map(|_| rng.gen_range(-bound..bound)));
        }
        table
    }

    /// Writes the table in the format read by [`load_embeddings`], rows in
    /// insertion order.
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        let mut words: Vec<(&String, &usize)> = self.index.iter().collect();
        words.sort_by_key(|(_, &i)| i);
        for (w, &i) in words {
            write!(out, "{w}")?;
            for v in &self.vectors[i * self.dim..(i + 1) * self.dim] {
                write!(out, " {v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Reads `token v_1 ... v_dim` rows. Values are stored as given.
pub fn load_embeddings(path: &Path, dim: usize) -> Result<EmbeddingTable> {
    let reader = BufReader::new(File::open(path)?);
    let mut table = EmbeddingTable {
        dim,
        index: HashMap::new(),
        vectors: Vec::new(),
    };
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else { continue };
        let values = fields
            .map(str::parse::<f64>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
        if values.len() != dim {
            return Err(Error::Dimension {
                what: format!("{}:{} embedding for {token:?}", path.display(), i + 1),
                expected: dim,
                found: values.len(),
            });
        }
        if table.index.contains_key(token) {
            continue;
        }
        table.index.insert(token.to_string(), table.index.len());
        table.vectors.extend(values);
    }
    Ok(table)
}

/// Word and character inventories. Index 0 of each is the unknown entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    words: Vec<String>,
    chars: Vec<char>,
    #[serde(skip)]
    word_index: HashMap<String, usize>,
    #[serde(skip)]
    char_index: HashMap<char, usize>,
}

impl Vocabulary {
    /// Builds from sentences: lowercased words, case-preserved characters,
    /// both sorted for deterministic ids.
    pub fn build<'a>(sentences: impl IntoIterator<Item = &'a AnnotatedSentence>) -> Self {
        let mut words = BTreeSet::new();
        let mut chars = BTreeSet::new();
        for s in sentences {
            for t in &s.tokens {
                words.insert(t.to_lowercase());
                chars.extend(t.chars());
            }
        }
        Self::from_parts(words.into_iter().collect(), chars.into_iter().collect())
    }

    /// `words` and `chars` exclude the unknown entries.
    pub fn from_parts(words: Vec<String>, chars: Vec<char>) -> Self {
        let mut v = Self {
            words: std::iter::once(UNKNOWN_WORD.to_string()).chain(words).collect(),
            chars: std::iter::once('\u{0}').chain(chars).collect(),
            word_index: HashMap::new(),
            char_index: HashMap::new(),
        };
        v.reindex();
        v
    }

    /// Rebuilds lookup maps after deserialization.
    pub fn reindex(&mut self) {
        self.word_index = self.words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        self.char_index = self.chars.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    }

    pub fn num_words(&self) -> usize {
        self.words.len()
    }

    pub fn num_chars(&self) -> usize {
        self.chars.len()
    }

    pub fn unknown_word(&self) -> usize {
        0
    }

    pub fn words(&self) -> &[String] {
        &self.words[1..]
    }

    pub fn chars(&self) -> &[char] {
        &self.chars[1..]
    }

    /// Word id of a token (lowercased), or the unknown id.
    pub fn word_id(&self, token: &str) -> usize {
        self.word_index.get(&token.to_lowercase()).copied().unwrap_or(0)
    }

    pub fn char_ids(&self, token: &str) -> Vec<usize> {
        token
            .chars()
            .map(|c| self.char_index.get(&c).copied().unwrap_or(0))
            .collect()
    }

    /// Embedding matrix aligned to word ids: pre-trained rows where the
    /// table has the word, uniform(-sqrt(3/d), sqrt(3/d)) elsewhere.
    pub fn embedding_matrix(
        &self,
        table: Option<&EmbeddingTable>,
        dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Tensor> {
        if let Some(t) = table {
            if t.dim() != dim {
                return Err(Error::Dimension {
                    what: "word embedding table".into(),
                    expected: dim,
                    found: t.dim(),
                });
            }
        }
        let mut m = uniform_range(&[self.num_words(), dim], (3.0 / dim as f64).sqrt(), rng);
        if let Some(t) = table {
            let mut hits = 0;
            for (i, w) in self.words.iter().enumerate().skip(1) {
                if let Some(v) = t.get(w) {
                    m.data_mut()[i * dim..(i + 1) * dim].copy_from_slice(v);
                    hits += 1;
                }
            }
            log::info!("pre-trained vectors found for {hits} of {} words", self.num_words() - 1);
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use std::io::Write;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn short_row_is_a_dimension_error() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        let row: Vec<String> = (0..99).map(|i| format!("{}", i as f64 / 100.0)).collect();
        writeln!(f, "word {}", row.join(" ")).unwrap();
        match load_embeddings(f.path(), 100).unwrap_err() {
            Error::Dimension { expected, found, .. } => assert_eq!((expected, found), (100, 99)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn written_tables_load_back_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = EmbeddingTable::random(["b", "a", "b"], 4, &mut rng);
        assert_eq!(t.len(), 2);
        let mut f = tempfile::NamedTempFile::new().unwrap();
        t.write(&mut f).unwrap();
        f.flush().unwrap();
        let back = load_embeddings(f.path(), 4).unwrap();
        assert_eq!(back.get("a"), t.get("a"));
        assert_eq!(back.get("b"), t.get("b"));
        let text = std::fs::read_to_string(f.path()).unwrap();
        assert!(text.starts_with("b "));
    }

    #[test]
    fn known_and_unknown_words() {
        let s = AnnotatedSentence::new(vec!["The".into(), "cat".into()], vec![], 0, 0).unwrap();
        let v = Vocabulary::build([&s]);
        assert_eq!(v.words(), &["cat", "the"]);
        assert_eq!(v.word_id("THE"), v.word_id("the"));
        assert_eq!(v.word_id("dog"), v.unknown_word());
        assert_eq!(v.char_ids("Tz")[1], 0);
        assert_ne!(v.char_ids("T")[0], v.char_ids("t")[0]);
    }

    #[test]
    fn pre_trained_rows_are_copied_verbatim() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "cat 0.5 -2.0 3.25").unwrap();
        let table = load_embeddings(f.path(), 3).unwrap();
        let s = AnnotatedSentence::new(vec!["Cat".into(), "dog".into()], vec![], 0, 0).unwrap();
        let v = Vocabulary::build([&s]);
        let m = v
            .embedding_matrix(Some(&table), 3, &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap();
        assert_eq!(m.shape(), &[3, 3]);
        assert_eq!(m.row(v.word_id("cat")), &[0.5, -2.0, 3.25]);
    }
}
