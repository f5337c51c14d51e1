//! Exact-match scoring of nested mentions and the stratified reports built
//! on it.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{outermost_flags, split_layers, EntitySpan, LabelInventory};
use crate::error::{Error, Result};

/// Largest length bucket; longer spans fall into it.
pub const MAX_LENGTH_BUCKET: usize = 10;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    pub fn add(&mut self, other: Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

/// Precision, recall and F1 with the counts they came from.
///
/// Precision is 1 when nothing was predicted and recall is 1 when there
/// was nothing to find.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Prf {
    pub fn from_counts(c: Counts) -> Self {
        let precision = if c.tp + c.fp == 0 {
            1.0
        } else {
            c.tp as f64 / (c.tp + c.fp) as f64
        };
        let recall = if c.tp + c.fn_ == 0 {
            1.0
        } else {
            c.tp as f64 / (c.tp + c.fn_) as f64
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
            tp: c.tp,
            fp: c.fp,
            fn_: c.fn_,
        }
    }

    pub fn counts(&self) -> Counts {
        Counts {
            tp: self.tp,
            fp: self.fp,
            fn_: self.fn_,
        }
    }
}

impl fmt::Display for Prf {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:.1}/{:.1}/{:.1}",
            100.0 * self.precision,
            100.0 * self.recall,
            100.0 * self.f1
        )
    }
}

fn check_aligned(gold: &[Vec<EntitySpan>], pred: &[Vec<EntitySpan>]) -> Result<()> {
    if gold.len() != pred.len() {
        return Err(Error::Alignment {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    Ok(())
}

fn unique(spans: &[EntitySpan]) -> Vec<EntitySpan> {
    spans.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()
}

/// Counts for one sentence restricted to spans for which `keep` holds.
fn count_where(
    gold: &[EntitySpan],
    pred: &[EntitySpan],
    keep_gold: impl Fn(&EntitySpan) -> bool,
    keep_pred: impl Fn(&EntitySpan) -> bool,
) -> Counts {
    let g: BTreeSet<EntitySpan> = gold.iter().copied().filter(|s| keep_gold(s)).collect();
    let p: BTreeSet<EntitySpan> = pred.iter().copied().filter(|s| keep_pred(s)).collect();
    let tp = g.intersection(&p).count();
    Counts {
        tp,
        fp: p.len() - tp,
        fn_: g.len() - tp,
    }
}

/// Pooled exact match on `(start, end, type)`; duplicates collapse.
pub fn score(gold: &[Vec<EntitySpan>], pred: &[Vec<EntitySpan>]) -> Result<Prf> {
    check_aligned(gold, pred)?;
    let mut c = Counts::default();
    for (g, p) in gold.iter().zip(pred) {
        c.add(count_where(g, p, |_| true, |_| true));
    }
    Ok(Prf::from_counts(c))
}

/// One row per entity type, in inventory order.
pub fn score_by_category(
    gold: &[Vec<EntitySpan>],
    pred: &[Vec<EntitySpan>],
    labels: &LabelInventory,
) -> Result<Vec<(String, Prf)>> {
    check_aligned(gold, pred)?;
    let mut out = Vec::with_capacity(labels.num_types());
    for (k, name) in labels.types().iter().enumerate() {
        let mut c = Counts::default();
        for (g, p) in gold.iter().zip(pred) {
            c.add(count_where(g, p, |s| s.label == k, |s| s.label == k));
        }
        out.push((name.clone(), Prf::from_counts(c)));
    }
    Ok(out)
}

/// Layer of every gold and predicted span of one sentence.
///
/// Gold spans are layered by containment among gold. A prediction that
/// matches a gold span takes that span's layer; any other prediction is
/// layered by containment among the predictions.
struct Stratified {
    gold: Vec<(EntitySpan, bool)>,
    pred: Vec<(EntitySpan, bool)>,
}

fn stratify(gold: &[EntitySpan], pred: &[EntitySpan]) -> Result<Stratified> {
    let gold = unique(gold);
    let pred = unique(pred);
    let layers = split_layers(&gold)?;
    let outer_gold: BTreeSet<EntitySpan> = layers.outermost.iter().copied().collect();
    let own = outermost_flags(&pred);
    let gold_set: BTreeSet<EntitySpan> = gold.iter().copied().collect();
    Ok(Stratified {
        gold: gold.iter().map(|s| (*s, outer_gold.contains(s))).collect(),
        pred: pred
            .iter()
            .zip(own)
            .map(|(s, flag)| {
                let outer = if gold_set.contains(s) { outer_gold.contains(s) } else { flag };
                (*s, outer)
            })
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerScores {
    pub outermost: Prf,
    pub inner: Prf,
}

pub fn score_by_layer(gold: &[Vec<EntitySpan>], pred: &[Vec<EntitySpan>]) -> Result<LayerScores> {
    check_aligned(gold, pred)?;
    let mut outer = Counts::default();
    let mut inner = Counts::default();
    for (g, p) in gold.iter().zip(pred) {
        let st = stratify(g, p)?;
        for (want, acc) in [(true, &mut outer), (false, &mut inner)] {
            let gs: Vec<EntitySpan> = st.gold.iter().filter(|(_, o)| *o == want).map(|(s, _)| *s).collect();
            let ps: Vec<EntitySpan> = st.pred.iter().filter(|(_, o)| *o == want).map(|(s, _)| *s).collect();
            acc.add(count_where(&gs, &ps, |_| true, |_| true));
        }
    }
    Ok(LayerScores {
        outermost: Prf::from_counts(outer),
        inner: Prf::from_counts(inner),
    })
}

pub fn length_bucket(len: usize) -> usize {
    len.clamp(1, MAX_LENGTH_BUCKET)
}

pub fn bucket_name(bucket: usize) -> String {
    if bucket == MAX_LENGTH_BUCKET {
        format!("{MAX_LENGTH_BUCKET}+")
    } else {
        bucket.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthRow {
    pub bucket: usize,
    pub outermost: Prf,
    pub inner: Prf,
}

/// Scores by outermost-mention length (buckets `1..=10`, the last open).
///
/// Outermost spans are bucketed by their own length. Inner spans are
/// bucketed by the length of the outermost span enclosing them: the gold
/// one if any, else an enclosing predicted outermost span, else their own.
pub fn score_by_length(gold: &[Vec<EntitySpan>], pred: &[Vec<EntitySpan>]) -> Result<Vec<LengthRow>> {
    check_aligned(gold, pred)?;
    let mut outer = [Counts::default(); MAX_LENGTH_BUCKET];
    let mut inner = [Counts::default(); MAX_LENGTH_BUCKET];
    for (g, p) in gold.iter().zip(pred) {
        let st = stratify(g, p)?;
        let gold_outer: Vec<EntitySpan> = st.gold.iter().filter(|(_, o)| *o).map(|(s, _)| *s).collect();
        let pred_outer: Vec<EntitySpan> = st.pred.iter().filter(|(_, o)| *o).map(|(s, _)| *s).collect();
        let enclosing = |s: &EntitySpan| -> usize {
            gold_outer
                .iter()
                .chain(&pred_outer)
                .find(|o| o.strictly_contains(s))
                .map_or(s.len(), EntitySpan::len)
        };
        for b in 1..=MAX_LENGTH_BUCKET {
            let in_bucket = |s: &EntitySpan| length_bucket(s.len()) == b;
            let gs: Vec<EntitySpan> = gold_outer.iter().copied().filter(in_bucket).collect();
            let ps: Vec<EntitySpan> = pred_outer.iter().copied().filter(in_bucket).collect();
            outer[b - 1].add(count_where(&gs, &ps, |_| true, |_| true));

            let in_bucket = |s: &EntitySpan| length_bucket(enclosing(s)) == b;
            let gs: Vec<EntitySpan> = st.gold.iter().filter(|(_, o)| !o).map(|(s, _)| *s).filter(in_bucket).collect();
            let ps: Vec<EntitySpan> = st.pred.iter().filter(|(_, o)| !o).map(|(s, _)| *s).filter(in_bucket).collect();
            inner[b - 1].add(count_where(&gs, &ps, |_| true, |_| true));
        }
    }
    Ok((0..MAX_LENGTH_BUCKET)
        .map(|i| LengthRow {
            bucket: i + 1,
            outermost: Prf::from_counts(outer[i]),
            inner: Prf::from_counts(inner[i]),
        })
        .collect())
}

/// A named stratum, the unit of the machine-readable report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub stratum: String,
    pub p: f64,
    pub r: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ReportRow {
    fn new(stratum: impl Into<String>, prf: &Prf) -> Self {
        Self {
            stratum: stratum.into(),
            p: prf.precision,
            r: prf.recall,
            f1: prf.f1,
            tp: prf.tp,
            fp: prf.fp,
            fn_: prf.fn_,
        }
    }
}

/// Overall, per-category, per-layer and length-wise scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub overall: Prf,
    pub categories: Vec<(String, Prf)>,
    pub layers: LayerScores,
    pub lengths: Vec<LengthRow>,
}

impl Report {
    pub fn compute(gold: &[Vec<EntitySpan>], pred: &[Vec<EntitySpan>], labels: &LabelInventory) -> Result<Self> {
        Ok(Self {
            overall: score(gold, pred)?,
            categories: score_by_category(gold, pred, labels)?,
            layers: score_by_layer(gold, pred)?,
            lengths: score_by_length(gold, pred)?,
        })
    }

    pub fn rows(&self) -> Vec<ReportRow> {
        let mut rows = vec![ReportRow::new("overall", &self.overall)];
        for (name, prf) in &self.categories {
            rows.push(ReportRow::new(format!("type:{name}"), prf));
        }
        rows.push(ReportRow::new("layer:outermost", &self.layers.outermost));
        rows.push(ReportRow::new("layer:inner", &self.layers.inner));
        for row in &self.lengths {
            let b = bucket_name(row.bucket);
            rows.push(ReportRow::new(format!("length:{b}:outermost"), &row.outermost));
            rows.push(ReportRow::new(format!("length:{b}:inner"), &row.inner));
        }
        rows
    }

    /// One JSON object per line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for row in self.rows() {
            serde_json::to_writer(&mut out, &row).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let line = |f: &mut fmt::Formatter<'_>, name: &str, p: &Prf| {
            writeln!(
                f,
                "{name:<16} {:>6.1} {:>6.1} {:>6.1} {:>6} {:>6} {:>6}",
                100.0 * p.precision,
                100.0 * p.recall,
                100.0 * p.f1,
                p.tp,
                p.fp,
                p.fn_
            )
        };
        writeln!(f, "{:<16} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6}", "", "P", "R", "F", "tp", "fp", "fn")?;
        line(f, "Overall", &self.overall)?;
        for (name, prf) in &self.categories {
            line(f, name, prf)?;
        }
        line(f, "Outermost", &self.layers.outermost)?;
        line(f, "Inner", &self.layers.inner)?;
        writeln!(f)?;
        writeln!(f, "{:<6} {:>21} {:>6}   {:>21} {:>6}", "length", "outermost P/R/F", "num", "inner P/R/F", "num")?;
        for row in &self.lengths {
            let cell = |p: &Prf| format!("{:.1}/{:.1}/{:.1}", 100.0 * p.precision, 100.0 * p.recall, 100.0 * p.f1);
            writeln!(
                f,
                "{:<6} {:>21} {:>6}   {:>21} {:>6}",
                bucket_name(row.bucket),
                cell(&row.outermost),
                row.outermost.tp + row.outermost.fn_,
                cell(&row.inner),
                row.inner.tp + row.inner.fn_
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Throughput {
    pub tokens: usize,
    pub batch_size: usize,
    pub passes: usize,
    /// Median wall time of one pass.
    pub seconds: f64,
    pub tokens_per_second: f64,
}

impl fmt::Display for Throughput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:.1} tokens/s ({} tokens, median {:.3} s over {} passes, batch size {})",
            self.tokens_per_second, self.tokens, self.seconds, self.passes, self.batch_size
        )
    }
}

/// Times `decode` over the corpus in batches. One untimed warm-up pass
/// precedes `passes` timed ones (at least 3); the median is reported.
pub fn throughput<S, F>(sentences: &[S], len: impl Fn(&S) -> usize, batch_size: usize, passes: usize, mut decode: F) -> Result<Throughput>
where
    F: FnMut(&[S]),
{
    let tokens: usize = sentences.iter().map(&len).sum();
    if sentences.is_empty() || tokens == 0 {
        return Err(Error::Empty("throughput needs a nonempty corpus".into()));
    }
    let batch_size = batch_size.max(1);
    let passes = passes.max(3);
    let mut run = || {
        let t0 = Instant::now();
        for batch in sentences.chunks(batch_size) {
            decode(batch);
        }
        t0.elapsed().as_secs_f64()
    };
    run();
    let mut times: Vec<f64> = (0..passes).map(|_| run()).collect();
    times.sort_by(f64::total_cmp);
    let seconds = times[times.len() / 2];
    Ok(Throughput {
        tokens,
        batch_size,
        passes,
        seconds,
        tokens_per_second: tokens as f64 / seconds.max(f64::MIN_POSITIVE),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(a: usize, b: usize, k: usize) -> EntitySpan {
        EntitySpan::new(a, b, k)
    }

    #[test]
    fn perfect_prediction_scores_one() {
        let gold = vec![vec![s(0, 2, 0), s(1, 1, 1)], vec![]];
        let prf = score(&gold, &gold).unwrap();
        assert_eq!((prf.precision, prf.recall, prf.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn one_spurious_span_halves_precision() {
        let gold = vec![vec![s(0, 0, 0)]];
        let pred = vec![vec![s(0, 0, 0), s(1, 1, 0)]];
        let prf = score(&gold, &pred).unwrap();
        assert_eq!((prf.precision, prf.recall), (0.5, 1.0));
        assert!((prf.f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn duplicates_collapse_and_lengths_must_align() {
        let gold = vec![vec![s(0, 0, 0)]];
        let pred = vec![vec![s(0, 0, 0), s(0, 0, 0)]];
        assert_eq!(score(&gold, &pred).unwrap().fp, 0);
        assert!(matches!(score(&gold, &[]), Err(Error::Alignment { gold: 1, pred: 0 })));
    }

    #[test]
    fn empty_strata_are_vacuously_perfect() {
        let gold = vec![vec![s(0, 1, 0)]];
        let layers = score_by_layer(&gold, &gold).unwrap();
        assert_eq!((layers.inner.tp, layers.inner.fn_), (0, 0));
        assert_eq!(layers.inner.recall, 1.0);
        assert_eq!(layers.inner.precision, 1.0);
    }

    #[test]
    fn no_predictions_and_some_gold_give_zero_f1() {
        let prf = score(&[vec![s(0, 0, 0)]], &[vec![]]).unwrap();
        assert_eq!((prf.precision, prf.recall, prf.f1), (1.0, 0.0, 0.0));
    }

    #[test]
    fn unmatched_predictions_use_their_own_containment() {
        let gold = vec![vec![s(0, 4, 0), s(1, 2, 1)]];
        // (0, 4, 1) has the wrong type: outermost among predictions.
        // (3, 4, 0) is spurious and nested inside it: inner.
        let pred = vec![vec![s(0, 4, 1), s(1, 2, 1), s(3, 4, 0)]];
        let layers = score_by_layer(&gold, &pred).unwrap();
        assert_eq!(layers.outermost.counts(), Counts { tp: 0, fp: 1, fn_: 1 });
        assert_eq!(layers.inner.counts(), Counts { tp: 1, fp: 1, fn_: 0 });
    }

    #[test]
    fn length_buckets_partition_the_outermost_layer() {
        let gold = vec![
            vec![s(0, 0, 0), s(2, 13, 1), s(3, 4, 0)],
            vec![s(0, 2, 1), s(1, 2, 0), s(4, 5, 0)],
        ];
        let pred = vec![vec![s(0, 0, 0), s(3, 4, 0)], vec![s(0, 2, 1), s(1, 1, 0)]];
        let rows = score_by_length(&gold, &pred).unwrap();
        let layers = score_by_layer(&gold, &pred).unwrap();
        let mut outer = Counts::default();
        let mut inner = Counts::default();
        for r in &rows {
            outer.add(r.outermost.counts());
            inner.add(r.inner.counts());
        }
        assert_eq!(outer, layers.outermost.counts());
        assert_eq!(inner, layers.inner.counts());
        assert_eq!(rows[9].outermost.fn_, 1, "length-12 span lands in the open bucket");
        // Inner (3,4) sits in the length-12 gold span: bucket 10.
        assert_eq!(rows[9].inner.counts(), Counts { tp: 1, fp: 0, fn_: 0 });
        assert_eq!(rows[2].inner.counts(), Counts { tp: 0, fp: 1, fn_: 1 });
    }

    #[test]
    fn report_rows_and_table() {
        let labels = LabelInventory::new(["A", "B"]);
        let gold = vec![vec![s(0, 2, 0), s(1, 1, 1)]];
        let report = Report::compute(&gold, &gold, &labels).unwrap();
        let mut buf = Vec::new();
        report.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first["stratum"], "overall");
        assert_eq!(first["f1"], 1.0);
        for key in ["p", "r", "tp", "fp", "fn"] {
            assert!(first.get(key).is_some(), "{key}");
        }
        assert_eq!(text.lines().count(), report.rows().len());
        let table = report.to_string();
        assert!(table.contains("Overall") && table.contains("10+"));
    }

    #[test]
    fn throughput_rejects_an_empty_corpus() {
        let empty: Vec<usize> = vec![];
        assert!(matches!(throughput(&empty, |&n| n, 10, 3, |_| {}), Err(Error::Empty(_))));
        let t = throughput(&[5usize, 7], |&n| n, 10, 3, |_| {}).unwrap();
        assert_eq!((t.tokens, t.passes, t.batch_size), (12, 3, 10));
    }
}
