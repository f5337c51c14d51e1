use std::collections::{BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inclusive token span `[start, end]` carrying an entity type id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub label: usize,
}

pub type SpanSet = BTreeSet<EntitySpan>;

impl EntitySpan {
    pub fn new(start: usize, end: usize, label: usize) -> Self {
        Self { start, end, label }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn same_extent(&self, other: &EntitySpan) -> bool {
        self.start == other.start && self.end == other.end
    }

    /// `other` lies inside `self` and the extents differ.
    pub fn strictly_contains(&self, other: &EntitySpan) -> bool {
        self.start <= other.start && other.end <= self.end && !self.same_extent(other)
    }

    pub fn overlaps(&self, other: &EntitySpan) -> bool {
        self.start <= other.end && other.start <= self.end
    }

    /// Overlapping without either containing the other.
    pub fn crosses(&self, other: &EntitySpan) -> bool {
        self.overlaps(other)
            && !self.same_extent(other)
            && !self.strictly_contains(other)
            && !other.strictly_contains(self)
    }
}

impl fmt::Display for EntitySpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{}]#{}", self.start, self.end, self.label)
    }
}

/// Entity type names with a reserved trailing 'O'.
///
/// Types are sorted lexicographically so ids are deterministic; the id of
/// 'O' equals the number of entity types.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelInventory {
    types: Vec<String>,
}

impl LabelInventory {
    pub const OUTSIDE: &'static str = "O";

    pub fn new<I, S>(types: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = types
            .into_iter()
            .map(Into::into)
            .filter(|t| t != Self::OUTSIDE)
            .collect();
        Self {
            types: set.into_iter().collect(),
        }
    }

    pub fn num_types(&self) -> usize {
        self.types.len()
    }

    /// Number of classes including 'O'.
    pub fn num_labels(&self) -> usize {
        self.types.len() + 1
    }

    pub fn outside(&self) -> usize {
        self.types.len()
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        if name == Self::OUTSIDE {
            return Some(self.outside());
        }
        self.types.binary_search_by(|t| t.as_str().cmp(name)).ok()
    }

    pub fn name(&self, id: usize) -> &str {
        self.types.get(id).map_or(Self::OUTSIDE, String::as_str)
    }

    pub fn types(&self) -> &[String] {
        &self.types
    }

    /// All names including the trailing 'O'.
    pub fn names(&self) -> Vec<String> {
        let mut v = self.types.clone();
        v.push(Self::OUTSIDE.to_string());
        v
    }
}

/// A tokenized sentence with its (possibly nested) gold mentions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotatedSentence {
    pub tokens: Vec<String>,
    pub entities: Vec<EntitySpan>,
}

impl AnnotatedSentence {
    /// Validates the sentence against the given number of entity types.
    /// `index` identifies the sentence in error messages.
    pub fn new(
        tokens: Vec<String>,
        entities: Vec<EntitySpan>,
        num_types: usize,
        index: usize,
    ) -> Result<Self> {
        let s = Self { tokens, entities };
        s.validate(num_types, index)?;
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn validate(&self, num_types: usize, index: usize) -> Result<()> {
        let fail = |message: String| Err(Error::Validation {
            sentence: index,
            message,
        });
        if self.tokens.is_empty() {
            return fail("sentence has no tokens".into());
        }
        if let Some(t) = self.tokens.iter().find(|t| t.is_empty()) {
            return fail(format!("empty token {t:?}"));
        }
        let n = self.tokens.len();
        let mut seen = HashSet::new();
        for e in &self.entities {
            if e.start > e.end || e.end >= n {
                return fail(format!("span [{}, {}] out of range for {n} tokens", e.start, e.end));
            }
            if e.label >= num_types {
                return fail(format!("entity type id {} out of range", e.label));
            }
            if !seen.insert(*e) {
                return fail(format!("duplicate entity {e}"));
            }
        }
        Ok(())
    }

    pub fn span_set(&self) -> SpanSet {
        self.entities.iter().copied().collect()
    }
}

/// Entities partitioned into outermost mentions and everything nested
/// inside them.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Layers {
    pub outermost: Vec<EntitySpan>,
    pub inner: Vec<EntitySpan>,
}

/// Splits a mention set into outermost and inner layers.
///
/// A span is outermost iff no other span strictly contains it. Outermost
/// spans must be pairwise disjoint: crossing spans or one extent labelled
/// with two types cannot be encoded by a single tag sequence.
pub fn split_layers(entities: &[EntitySpan]) -> Result<Layers> {
    let mut unique: Vec<EntitySpan> = Vec::with_capacity(entities.len());
    for e in entities {
        if !unique.contains(e) {
            unique.push(*e);
        }
    }
    let mut layers = Layers::default();
    for e in &unique {
        if unique.iter().any(|o| o.strictly_contains(e)) {
            layers.inner.push(*e);
        } else {
            layers.outermost.push(*e);
        }
    }
    for (i, a) in layers.outermost.iter().enumerate() {
        for b in &layers.outermost[i + 1..] {
            if a.overlaps(b) {
                return Err(Error::Annotation {
                    first: *a,
                    second: *b,
                });
            }
        }
    }
    Ok(layers)
}

/// Outermost/inner split that never fails: used for model predictions,
/// which may cross.
pub fn outermost_flags(spans: &[EntitySpan]) -> Vec<bool> {
    spans
        .iter()
        .map(|e| !spans.iter().any(|o| o.strictly_contains(e)))
        .collect()
}

/// Per-cell gold type for inner mentions over an `N x N` grid.
///
/// Cells without an inner mention, including every cell below the
/// diagonal, hold 'O'.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldScoreTensor {
    n: usize,
    num_labels: usize,
    targets: Vec<usize>,
}

impl GoldScoreTensor {
    pub fn from_inner(inner: &[EntitySpan], n: usize, num_labels: usize) -> Self {
        let outside = num_labels - 1;
        let mut targets = vec![outside; n * n];
        for e in inner {
            let cell = &mut targets[e.start * n + e.end];
            if *cell == outside {
                *cell = e.label;
            } else if *cell != e.label {
                log::warn!(
                    "span [{}, {}] carries types {} and {}; keeping the first",
                    e.start,
                    e.end,
                    *cell,
                    e.label
                );
            }
        }
        Self {
            n,
            num_labels,
            targets,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn target(&self, i: usize, j: usize) -> usize {
        self.targets[i * self.n + j]
    }

    pub fn is_outside(&self, i: usize, j: usize) -> bool {
        self.target(i, j) == self.num_labels - 1
    }

    /// Dense one-hot `[N, N, L]` view.
    pub fn to_one_hot(&self) -> crate::numerics::Tensor {
        let mut t = crate::numerics::Tensor::zeros(&[self.n, self.n, self.num_labels]);
        for (cell, &k) in self.targets.iter().enumerate() {
            t.data_mut()[cell * self.num_labels + k] = 1.0;
        }
        t
    }
}
