//! Seeded template generator for small nested-mention corpora.
//!
//! Sentences are built from mention trees over four types (FAC, GPE, ORG,
//! PER) with up to three levels of nesting. Names recur both as inner
//! mentions and as standalone outermost mentions, and some heads take
//! their type from the mention nested inside them ("the office of ...").

use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{split_layers, AnnotatedSentence, Corpus, EntitySpan, LabelInventory};

pub const SYNTH_TYPES: [&str; 4] = ["FAC", "GPE", "ORG", "PER"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Fac,
    Gpe,
    Org,
    Per,
}

impl Kind {
    fn label(self) -> usize {
        // Matches the sorted inventory FAC, GPE, ORG, PER.
        match self {
            Kind::Fac => 0,
            Kind::Gpe => 1,
            Kind::Org => 2,
            Kind::Per => 3,
        }
    }
}

enum Piece {
    Word(&'static str),
    Mention(Kind, Vec<Piece>),
}

const GPE_NAMES: &[&[&str]] = &[
    &["Paris"],
    &["Berlin"],
    &["Ohio"],
    &["Texas"],
    &["Cairo"],
    &["Lagos"],
    &["Quebec"],
    &["Madrid"],
    &["New", "York"],
    &["Hong", "Kong"],
    &["South", "Africa"],
    &["El", "Paso"],
];
const FIRST_NAMES: &[&str] = &["John", "Maria", "Ahmed", "Li", "Olga", "Pedro", "Grace", "Kenji"];
const LAST_NAMES: &[&str] = &["Smith", "Garcia", "Haddad", "Chen", "Ivanova", "Silva", "Okafor", "Tanaka"];
const ORG_NAMES: &[&str] = &["Acme", "Globex", "Initech", "Hooli", "Vandelay", "Umbrella", "Stark", "Wayne"];
const ORG_SUFFIX: &[&str] = &["Corp", "Group", "Labs", "Bank"];
const PER_TITLES: &[&str] = &["mayor", "governor", "director", "chief", "president", "spokesman"];
const ORG_HEADS: &[&str] = &["ministry", "university", "council", "parliament"];
const GPE_ORG_HEADS: &[&str] = &["police", "council", "army"];
const FAC_HEADS: &[&str] = &["airport", "embassy", "station", "stadium"];
const OWNED_FAC_HEADS: &[&str] = &["house", "headquarters", "factory", "villa"];
const VERBS: &[&[&str]] = &[
    &["visited"],
    &["met", "with"],
    &["criticized"],
    &["praised"],
    &["left"],
    &["called"],
    &["spoke", "about"],
    &["moved", "to"],
    &["wrote", "to"],
];
const OPENERS: &[&[&str]] = &[
    &["Yesterday", ","],
    &["On", "Monday", ","],
    &["Meanwhile", ","],
    &["According", "to", "reports", ","],
];
const FILLERS: &[&[&str]] = &[
    &["after", "the", "talks"],
    &["last", "week"],
    &["for", "the", "first", "time"],
    &["without", "comment"],
];

fn words(items: &[&'static str]) -> Vec<Piece> {
    items.iter().map(|w| Piece::Word(w)).collect()
}

struct Generator {
    rng: ChaCha8Rng,
}

impl Generator {
    fn pick<T: Copy>(&mut self, items: &[T]) -> T {
        *items.choose(&mut self.rng).expect("nonempty list")
    }

    fn gpe_name(&mut self) -> Piece {
        let name = self.pick(GPE_NAMES);
        Piece::Mention(Kind::Gpe, words(name))
    }

    fn per_name(&mut self) -> Piece {
        let mut w = Vec::new();
        if self.rng.gen_bool(0.5) {
            w.push(Piece::Word(self.pick(FIRST_NAMES)));
        }
        w.push(Piece::Word(self.pick(LAST_NAMES)));
        Piece::Mention(Kind::Per, w)
    }

    fn org_name(&mut self) -> Piece {
        let mut w = vec![Piece::Word(self.pick(ORG_NAMES))];
        if self.rng.gen_bool(0.5) {
            w.push(Piece::Word(self.pick(ORG_SUFFIX)));
        }
        Piece::Mention(Kind::Org, w)
    }

    fn name(&mut self, kind: Kind) -> Piece {
        match kind {
            Kind::Gpe => self.gpe_name(),
            Kind::Per => self.per_name(),
            Kind::Org => self.org_name(),
            Kind::Fac => {
                let head = self.pick(FAC_HEADS);
                let mut w = words(&["the"]);
                w.push(Piece::Word(self.pick(LAST_NAMES)));
                w.push(Piece::Word(head));
                Piece::Mention(Kind::Fac, w)
            }
        }
    }

    /// A mention of `kind` with up to `depth` further levels nested inside.
    fn mention(&mut self, kind: Kind, depth: usize) -> Piece {
        if depth == 0 || self.rng.gen_bool(0.3) {
            return self.name(kind);
        }
        let sub = depth - 1;
        match kind {
            Kind::Per => match self.rng.gen_range(0..3) {
                0 => {
                    let mut w = words(&["the", self.pick(PER_TITLES), "of"]);
                    w.push(self.mention(Kind::Gpe, sub));
                    Piece::Mention(Kind::Per, w)
                }
                1 => {
                    let mut w = words(&["the", self.pick(PER_TITLES), "of"]);
                    w.push(self.mention(Kind::Org, sub));
                    Piece::Mention(Kind::Per, w)
                }
                _ => {
                    let mut w = vec![self.mention(Kind::Org, sub)];
                    w.push(Piece::Word(self.pick(PER_TITLES)));
                    w.push(self.per_name());
                    Piece::Mention(Kind::Per, w)
                }
            },
            Kind::Org => match self.rng.gen_range(0..2) {
                0 => {
                    let mut w = words(&["the", self.pick(ORG_HEADS), "of"]);
                    w.push(self.mention(Kind::Gpe, sub));
                    Piece::Mention(Kind::Org, w)
                }
                _ => {
                    let mut w = vec![self.mention(Kind::Gpe, sub)];
                    w.push(Piece::Word(self.pick(GPE_ORG_HEADS)));
                    Piece::Mention(Kind::Org, w)
                }
            },
            Kind::Fac => match self.rng.gen_range(0..3) {
                0 => {
                    let mut w = words(&["the"]);
                    w.push(self.mention(Kind::Gpe, sub));
                    w.push(Piece::Word(self.pick(FAC_HEADS)));
                    Piece::Mention(Kind::Fac, w)
                }
                1 => {
                    let owner = if self.rng.gen_bool(0.5) { Kind::Per } else { Kind::Org };
                    let mut w = words(&["the", self.pick(OWNED_FAC_HEADS), "of"]);
                    w.push(self.mention(owner, sub));
                    Piece::Mention(Kind::Fac, w)
                }
                _ => {
                    let mut w = vec![self.per_name()];
                    w.extend(words(&["'s", self.pick(OWNED_FAC_HEADS)]));
                    Piece::Mention(Kind::Fac, w)
                }
            },
            Kind::Gpe => {
                let mut w = words(&["the", "city", "of"]);
                w.push(self.gpe_name());
                Piece::Mention(Kind::Gpe, w)
            }
        }
    }

    /// "the office of X": a facility when X is a person or organization,
    /// an organization when X is a place.
    fn office(&mut self, depth: usize) -> Piece {
        let inner_kind = self.pick(&[Kind::Per, Kind::Org, Kind::Gpe]);
        let inner = self.mention(inner_kind, depth.saturating_sub(1));
        let outer = if inner_kind == Kind::Gpe { Kind::Org } else { Kind::Fac };
        let mut w = words(&["the", "office", "of"]);
        w.push(inner);
        Piece::Mention(outer, w)
    }

    fn argument(&mut self, kinds: &[Kind]) -> Piece {
        if self.rng.gen_bool(0.15) {
            return self.office(2);
        }
        let kind = self.pick(kinds);
        self.mention(kind, 2)
    }

    fn sentence(&mut self) -> Vec<Piece> {
        let mut s = Vec::new();
        if self.rng.gen_bool(0.3) {
            let o = self.pick(OPENERS);
            s.extend(words(o));
        }
        s.push(self.argument(&[Kind::Per, Kind::Org]));
        let v = self.pick(VERBS);
        s.extend(words(v));
        s.push(self.argument(&[Kind::Per, Kind::Org, Kind::Fac, Kind::Gpe]));
        if self.rng.gen_bool(0.35) {
            s.push(Piece::Word("in"));
            s.push(self.gpe_name());
        }
        if self.rng.gen_bool(0.25) {
            let f = self.pick(FILLERS);
            s.extend(words(f));
        }
        s.push(Piece::Word("."));
        s
    }
}

fn flatten(pieces: &[Piece], tokens: &mut Vec<String>, spans: &mut Vec<EntitySpan>) {
    for p in pieces {
        match p {
            Piece::Word(w) => tokens.push((*w).to_string()),
            Piece::Mention(kind, children) => {
                let start = tokens.len();
                flatten(children, tokens, spans);
                spans.push(EntitySpan::new(start, tokens.len() - 1, kind.label()));
            }
        }
    }
}

/// Generates `n` sentences deterministically from `seed`.
pub fn synthesize(n: usize, seed: u64) -> Corpus {
    let labels = LabelInventory::new(SYNTH_TYPES);
    let mut gen = Generator {
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    let sentences = (0..n)
        .map(|i| {
            let pieces = gen.sentence();
            let mut tokens = Vec::new();
            let mut spans = Vec::new();
            flatten(&pieces, &mut tokens, &mut spans);
            spans.sort_by_key(|s| (s.start, std::cmp::Reverse(s.end), s.label));
            spans.dedup();
            AnnotatedSentence::new(tokens, spans, labels.num_types(), i)
                .expect("generated sentences are valid")
        })
        .collect();
    Corpus { labels, sentences }
}

/// Layer statistics: sentence count, sentences with overlapping
/// mentions, mention counts split into outermost and inner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CorpusStats {
    pub sentences: usize,
    pub with_overlap: usize,
    pub mentions: usize,
    pub outermost: usize,
    pub inner: usize,
}

impl CorpusStats {
    /// Sentences whose annotations cannot be layered (crossing mentions)
    /// count as overlapping with all mentions treated as outermost.
    pub fn compute(corpus: &Corpus) -> Self {
        let mut st = Self {
            sentences: corpus.sentences.len(),
            ..Self::default()
        };
        for s in &corpus.sentences {
            st.mentions += s.entities.len();
            match split_layers(&s.entities) {
                Ok(layers) => {
                    st.outermost += layers.outermost.len();
                    st.inner += layers.inner.len();
                    if !layers.inner.is_empty() {
                        st.with_overlap += 1;
                    }
                }
                Err(_) => {
                    st.outermost += s.entities.len();
                    st.with_overlap += 1;
                }
            }
        }
        st
    }
}

fn pct(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        0.0
    } else {
        100.0 * part as f64 / whole as f64
    }
}

impl fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<18}{:>8}", "# sentences", self.sentences)?;
        writeln!(
            f,
            "{:<18}{:>8} ({:.0})",
            "with o.l.",
            self.with_overlap,
            pct(self.with_overlap, self.sentences)
        )?;
        writeln!(f, "{:<18}{:>8}", "# mentions", self.mentions)?;
        writeln!(
            f,
            "{:<18}{:>8} ({:.0})",
            "outermost entity",
            self.outermost,
            pct(self.outermost, self.mentions)
        )?;
        write!(
            f,
            "{:<18}{:>8} ({:.0})",
            "inner entity",
            self.inner,
            pct(self.inner, self.mentions)
        )
    }
}
