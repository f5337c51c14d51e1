//! BIOES tag codec for outermost mentions.
//!
//! Tag ids for `T` entity types: type `k` owns `4k + {0: B, 1: I, 2: E,
//! 3: S}` and 'O' is `4T`.

use super::{EntitySpan, LabelInventory};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Position {
    Begin,
    Inside,
    End,
    Single,
    Outside,
}

/// Tag inventory derived from the number of entity types.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TagSet {
    num_types: usize,
}

impl TagSet {
    pub fn new(num_types: usize) -> Self {
        Self { num_types }
    }

    pub fn num_types(&self) -> usize {
        self.num_types
    }

    pub fn num_tags(&self) -> usize {
        4 * self.num_types + 1
    }

    pub fn outside(&self) -> usize {
        4 * self.num_types
    }

    pub fn tag(&self, pos: Position, label: usize) -> usize {
        match pos {
            Position::Begin => 4 * label,
            Position::Inside => 4 * label + 1,
            Position::End => 4 * label + 2,
            Position::Single => 4 * label + 3,
            Position::Outside => self.outside(),
        }
    }

    /// Position and type of a tag id; out-of-range ids read as 'O'.
    pub fn split(&self, tag: usize) -> (Position, Option<usize>) {
        if tag >= self.outside() {
            return (Position::Outside, None);
        }
        let pos = match tag % 4 {
            0 => Position::Begin,
            1 => Position::Inside,
            2 => Position::End,
            _ => Position::Single,
        };
        (pos, Some(tag / 4))
    }

    pub fn name(&self, tag: usize, labels: &LabelInventory) -> String {
        match self.split(tag) {
            (Position::Outside, _) => "O".into(),
            (pos, Some(k)) => {
                let p = match pos {
                    Position::Begin => "B",
                    Position::Inside => "I",
                    Position::End => "E",
                    _ => "S",
                };
                format!("{p}-{}", labels.name(k))
            }
            _ => unreachable!(),
        }
    }

    /// Whether `to` may follow `from` in a well-formed sequence. `None`
    /// stands for the sentence boundary (start on the left, stop on the
    /// right).
    pub fn allowed(&self, from: Option<usize>, to: Option<usize>) -> bool {
        let from = from.map(|t| self.split(t));
        let to = to.map(|t| self.split(t));
        let opens = |p: Position| matches!(p, Position::Begin | Position::Single | Position::Outside);
        let closes = |p: Position| matches!(p, Position::End | Position::Single | Position::Outside);
        match (from, to) {
            (None, None) => false,
            (None, Some((p, _))) => opens(p),
            (Some((p, _)), None) => closes(p),
            (Some((fp, fk)), Some((tp, tk))) => match fp {
                Position::Begin | Position::Inside => {
                    matches!(tp, Position::Inside | Position::End) && fk == tk
                }
                _ => opens(tp),
            },
        }
    }
}

/// Encodes disjoint spans as a tag sequence of length `n`.
pub fn bioes_encode(spans: &[EntitySpan], n: usize, tags: TagSet) -> Result<Vec<usize>> {
    let mut out = vec![tags.outside(); n];
    let mut owner: Vec<Option<EntitySpan>> = vec![None; n];
    for span in spans {
        if span.end >= n || span.start > span.end {
            return Err(Error::Index {
                index: span.end,
                size: n,
            });
        }
        if let Some(prev) = (span.start..=span.end).find_map(|i| owner[i]) {
            return Err(Error::Encoding {
                first: prev,
                second: *span,
            });
        }
        for (i, slot) in owner.iter_mut().enumerate().take(span.end + 1).skip(span.start) {
            *slot = Some(*span);
            out[i] = if span.start == span.end {
                tags.tag(Position::Single, span.label)
            } else if i == span.start {
                tags.tag(Position::Begin, span.label)
            } else if i == span.end {
                tags.tag(Position::End, span.label)
            } else {
                tags.tag(Position::Inside, span.label)
            };
        }
    }
    Ok(out)
}

/// Extracts well-formed `B I* E` and `S` segments; fragments are dropped.
pub fn bioes_decode(labels: &[usize], tags: TagSet) -> Vec<EntitySpan> {
    let mut spans = Vec::new();
    let mut open: Option<(usize, usize)> = None;
    for (i, &tag) in labels.iter().enumerate() {
        let (pos, label) = tags.split(tag);
        match (pos, label) {
            (Position::Single, Some(k)) => {
                spans.push(EntitySpan::new(i, i, k));
                open = None;
            }
            (Position::Begin, Some(k)) => open = Some((i, k)),
            (Position::Inside, Some(k)) => {
                if !matches!(open, Some((_, ok)) if ok == k) {
                    open = None;
                }
            }
            (Position::End, Some(k)) => {
                if let Some((start, ok)) = open {
                    if ok == k {
                        spans.push(EntitySpan::new(start, i, k));
                    }
                }
                open = None;
            }
            _ => open = None,
        }
    }
    spans
}

#[cfg(test)]
mod tests {
    use super::*;

    const K: usize = 0;
    const M: usize = 1;

    fn tags() -> TagSet {
        TagSet::new(2)
    }

    #[test]
    fn encodes_multi_token_span() {
        let t = tags();
        let out = bioes_encode(&[EntitySpan::new(1, 3, K)], 5, t).unwrap();
        let o = t.outside();
        assert_eq!(
            out,
            vec![
                o,
                t.tag(Position::Begin, K),
                t.tag(Position::Inside, K),
                t.tag(Position::End, K),
                o
            ]
        );
    }

    #[test]
    fn encodes_singleton_and_empty() {
        let t = tags();
        let out = bioes_encode(&[EntitySpan::new(2, 2, K)], 3, t).unwrap();
        assert_eq!(out, vec![t.outside(), t.outside(), t.tag(Position::Single, K)]);
        assert_eq!(bioes_encode(&[], 2, t).unwrap(), vec![t.outside(); 2]);
    }

    #[test]
    fn overlapping_spans_fail_to_encode() {
        let err = bioes_encode(&[EntitySpan::new(0, 2, K), EntitySpan::new(2, 3, M)], 4, tags());
        assert!(matches!(err, Err(Error::Encoding { .. })));
    }

    #[test]
    fn decodes_examples() {
        let t = tags();
        let seq = [
            t.outside(),
            t.tag(Position::Begin, K),
            t.tag(Position::Inside, K),
            t.tag(Position::End, K),
            t.outside(),
        ];
        assert_eq!(bioes_decode(&seq, t), vec![EntitySpan::new(1, 3, K)]);
        let seq = [t.tag(Position::Inside, K), t.tag(Position::End, K)];
        assert!(bioes_decode(&seq, t).is_empty());
        let seq = [t.tag(Position::Single, K), t.tag(Position::Single, M)];
        assert_eq!(
            bioes_decode(&seq, t),
            vec![EntitySpan::new(0, 0, K), EntitySpan::new(1, 1, M)]
        );
    }

    #[test]
    fn restarts_on_a_second_begin() {
        let t = tags();
        let seq = [
            t.tag(Position::Begin, K),
            t.tag(Position::Begin, K),
            t.tag(Position::End, K),
        ];
        assert_eq!(bioes_decode(&seq, t), vec![EntitySpan::new(1, 2, K)]);
    }

    /// Every length-2 sequence decodes to spans whose re-encoding equals
    /// the input exactly when the input is well-formed under `allowed`.
    #[test]
    fn length_two_sequences_round_trip_iff_well_formed() {
        let t = tags();
        for a in 0..t.num_tags() {
            for b in 0..t.num_tags() {
                let seq = [a, b];
                let well_formed = t.allowed(None, Some(a))
                    && t.allowed(Some(a), Some(b))
                    && t.allowed(Some(b), None);
                let spans = bioes_decode(&seq, t);
                let back = bioes_encode(&spans, 2, t).unwrap();
                assert_eq!(back == seq, well_formed, "sequence {seq:?} -> {spans:?}");
            }
        }
    }
}

#[cfg(test)]
mod props {
    use proptest::prelude::*;

    use super::*;

    /// Disjoint spans built from `(gap, extra length, type)` segments.
    fn disjoint(segments: &[(usize, usize, usize)], types: usize) -> (Vec<EntitySpan>, usize) {
        let mut spans = Vec::new();
        let mut at = 0;
        for &(gap, extra, label) in segments {
            let start = at + gap;
            spans.push(EntitySpan::new(start, start + extra, label % types));
            at = start + extra + 1;
        }
        (spans, at)
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(
            types in 1usize..6,
            segments in prop::collection::vec((0usize..3, 0usize..5, 0usize..6), 0..8),
            tail in 0usize..3,
        ) {
            let tags = TagSet::new(types);
            let (spans, used) = disjoint(&segments, types);
            let n = (used + tail).max(1);
            let seq = bioes_encode(&spans, n, tags).unwrap();
            prop_assert_eq!(bioes_decode(&seq, tags), spans);
        }

        #[test]
        fn decode_yields_disjoint_in_range_spans(
            types in 1usize..6,
            raw in prop::collection::vec(0usize..1000, 0..25),
        ) {
            let tags = TagSet::new(types);
            let seq: Vec<usize> = raw.iter().map(|r| r % tags.num_tags()).collect();
            let spans = bioes_decode(&seq, tags);
            for (i, s) in spans.iter().enumerate() {
                prop_assert!(s.start <= s.end && s.end < seq.len());
                prop_assert!(s.label < types);
                for o in &spans[i + 1..] {
                    prop_assert!(!s.overlaps(o));
                }
            }
            // Decoded spans always re-encode.
            prop_assert!(bioes_encode(&spans, seq.len(), tags).is_ok());
        }
    }
}

