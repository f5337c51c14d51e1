//! Linear-chain CRF over `K` tags with synthetic start and stop states.
//!
//! Emissions `P` are `[N, K]`. Transitions `T` are `[K + 2, K + 2]`; row
//! and column `K` are the start state and `K + 1` the stop state. The score
//! of a path `y` is
//! `T[start, y_0] + P[0, y_0] + T[y_0, y_1] + P[1, y_1] + ... + T[y_{N-1}, stop]`.

use crate::data::TagSet;
use crate::error::{Error, Result};
use crate::numerics::{logsumexp, Tape, Tensor, Var};

/// Penalty placed on transitions that would produce a malformed BIOES
/// sequence.
pub const FORBIDDEN: f64 = -1e4;

fn dims(p: &Tensor, t: &Tensor) -> (usize, usize) {
    let (n, k) = p.matrix_dims();
    assert!(n >= 1, "CRF needs at least one position");
    assert_eq!(t.shape(), &[k + 2, k + 2], "transition matrix for {k} tags");
    (n, k)
}

/// Score of one path, summed in path order.
pub fn crf_score(p: &Tensor, t: &Tensor, y: &[usize]) -> Result<f64> {
    let (n, k) = dims(p, t);
    if y.len() != n {
        return Err(Error::Dimension {
            what: "label sequence".into(),
            expected: n,
            found: y.len(),
        });
    }
    if let Some(&bad) = y.iter().find(|&&l| l >= k) {
        return Err(Error::Index { index: bad, size: k });
    }
    let (start, stop) = (k, k + 1);
    let mut s = t.get2(start, y[0]) + p.get2(0, y[0]);
    for i in 1..n {
        s += t.get2(y[i - 1], y[i]) + p.get2(i, y[i]);
    }
    Ok(s + t.get2(y[n - 1], stop))
}

/// Forward log-messages: `alpha[i][k]` is the log-sum over prefixes ending
/// in tag `k` at position `i`.
fn forward(p: &Tensor, t: &Tensor) -> Vec<Vec<f64>> {
    let (n, k) = dims(p, t);
    let start = k;
    let mut alpha = vec![vec![0.0; k]; n];
    for j in 0..k {
        alpha[0][j] = t.get2(start, j) + p.get2(0, j);
    }
    let mut buf = vec![0.0; k];
    for i in 1..n {
        for j in 0..k {
            for (a, b) in buf.iter_mut().enumerate() {
                *b = alpha[i - 1][a] + t.get2(a, j);
            }
            alpha[i][j] = logsumexp(&buf) + p.get2(i, j);
        }
    }
    alpha
}

/// Backward log-messages: `beta[i][k]` is the log-sum over suffixes after
/// position `i` given tag `k` there (excluding `P[i, k]`).
fn backward(p: &Tensor, t: &Tensor) -> Vec<Vec<f64>> {
    let (n, k) = dims(p, t);
    let stop = k + 1;
    let mut beta = vec![vec![0.0; k]; n];
    for a in 0..k {
        beta[n - 1][a] = t.get2(a, stop);
    }
    let mut buf = vec![0.0; k];
    for i in (0..n - 1).rev() {
        for a in 0..k {
            for (b, v) in buf.iter_mut().enumerate() {
                *v = t.get2(a, b) + p.get2(i + 1, b) + beta[i + 1][b];
            }
            beta[i][a] = logsumexp(&buf);
        }
    }
    beta
}

fn log_partition_from(alpha: &[Vec<f64>], t: &Tensor) -> f64 {
    let k = alpha[0].len();
    let last = alpha.last().expect("nonempty");
    let terms: Vec<f64> = (0..k).map(|a| last[a] + t.get2(a, k + 1)).collect();
    logsumexp(&terms)
}

/// Log of the sum of `exp(score)` over all `K^N` paths.
pub fn crf_log_partition(p: &Tensor, t: &Tensor) -> f64 {
    log_partition_from(&forward(p, t), t)
}

/// Negative log-likelihood of `gold` with its gradients with respect to
/// `P` and `T` (posterior expectations minus gold counts).
pub fn crf_nll_with_grads(p: &Tensor, t: &Tensor, gold: &[usize]) -> Result<(f64, Tensor, Tensor)> {
    let gold_score = crf_score(p, t, gold)?;
    let (n, k) = dims(p, t);
    let (start, stop) = (k, k + 1);
    let alpha = forward(p, t);
    let beta = backward(p, t);
    let log_z = log_partition_from(&alpha, t);

    let mut dp = Tensor::zeros(&[n, k]);
    let mut dt = Tensor::zeros(&[k + 2, k + 2]);
    for i in 0..n {
        for a in 0..k {
            let marginal = (alpha[i][a] + beta[i][a] - log_z).exp();
            dp.set2(i, a, marginal);
        }
    }
    for a in 0..k {
        dt.set2(start, a, dp.get2(0, a));
        dt.set2(a, stop, dp.get2(n - 1, a));
    }
    for i in 0..n - 1 {
        for a in 0..k {
            for b in 0..k {
                let pair = (alpha[i][a] + t.get2(a, b) + p.get2(i + 1, b) + beta[i + 1][b] - log_z).exp();
                dt.set2(a, b, dt.get2(a, b) + pair);
            }
        }
    }
    let mut prev = start;
    for (i, &y) in gold.iter().enumerate() {
        dp.set2(i, y, dp.get2(i, y) - 1.0);
        dt.set2(prev, y, dt.get2(prev, y) - 1.0);
        prev = y;
    }
    dt.set2(prev, stop, dt.get2(prev, stop) - 1.0);
    Ok(((log_z - gold_score).max(0.0), dp, dt))
}

pub fn crf_nll(p: &Tensor, t: &Tensor, gold: &[usize]) -> Result<f64> {
    Ok((crf_log_partition(p, t) - crf_score(p, t, gold)?).max(0.0))
}

/// Records the NLL of `gold` on a tape with emissions `p` (`[N, K]`) and
/// transitions `t` (`[K + 2, K + 2]`).
pub fn crf_nll_var(tape: &mut Tape<'_>, p: Var, t: Var, gold: &[usize]) -> Result<Var> {
    let (value, dp, dt) = crf_nll_with_grads(tape.value(p), tape.value(t), gold)?;
    Ok(tape.scalar_with_grads(value, vec![(p, dp), (t, dt)]))
}

/// Highest-scoring path and its score.
///
/// Among equal-scoring paths the lexicographically smallest label sequence
/// is returned: best suffix scores are computed right to left, then the
/// path is read left to right taking the lowest tag id among the maxima.
/// The returned score is `crf_score` of the returned path.
pub fn viterbi(p: &Tensor, t: &Tensor) -> (Vec<usize>, f64) {
    let (n, k) = dims(p, t);
    let (start, stop) = (k, k + 1);
    // suffix[i][a]: best score of positions i.. given tag a at i,
    // including P[i, a] and the stop transition.
    let mut suffix = vec![vec![0.0; k]; n];
    for a in 0..k {
        suffix[n - 1][a] = p.get2(n - 1, a) + t.get2(a, stop);
    }
    for i in (0..n - 1).rev() {
        for a in 0..k {
            let best = (0..k)
                .map(|b| t.get2(a, b) + suffix[i + 1][b])
                .fold(f64::NEG_INFINITY, f64::max);
            suffix[i][a] = p.get2(i, a) + best;
        }
    }
    let pick = |from: usize, next: &[f64]| -> usize {
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for (b, &s) in next.iter().enumerate() {
            let v = t.get2(from, b) + s;
            if v > best_score {
                best = b;
                best_score = v;
            }
        }
        best
    };
    let mut path = Vec::with_capacity(n);
    let mut prev = start;
    for row in &suffix {
        let y = pick(prev, row);
        path.push(y);
        prev = y;
    }
    let score = crf_score(p, t, &path).expect("viterbi path is in range");
    (path, score)
}

/// Fixed additive mask: 0 on allowed BIOES transitions, [`FORBIDDEN`] on
/// the rest, including every transition into start and out of stop.
pub fn bioes_transition_mask(tags: TagSet) -> Tensor {
    let k = tags.num_tags();
    let (start, stop) = (k, k + 1);
    let mut m = Tensor::full(&[k + 2, k + 2], FORBIDDEN);
    for a in 0..k {
        for b in 0..k {
            if tags.allowed(Some(a), Some(b)) {
                m.set2(a, b, 0.0);
            }
        }
        if tags.allowed(None, Some(a)) {
            m.set2(start, a, 0.0);
        }
        if tags.allowed(Some(a), None) {
            m.set2(a, stop, 0.0);
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::data::{bioes_decode, bioes_encode};
    use crate::numerics::{gradient_check, uniform_range};

    /// Every label sequence of length `n` over `k` tags in lexicographic order.
    fn all_paths(n: usize, k: usize) -> Vec<Vec<usize>> {
        let mut out = vec![vec![]];
        for _ in 0..n {
            out = out
                .into_iter()
                .flat_map(|p| {
                    (0..k).map(move |y| {
                        let mut q = p.clone();
                        q.push(y);
                        q
                    })
                })
                .collect();
        }
        out
    }

    /// Independent re-evaluation of the path score.
    fn oracle_score(p: &Tensor, t: &Tensor, y: &[usize]) -> f64 {
        let k = p.cols();
        let mut s = t.get2(k, y[0]) + p.get2(0, y[0]);
        for i in 1..y.len() {
            s += t.get2(y[i - 1], y[i]) + p.get2(i, y[i]);
        }
        s + t.get2(y[y.len() - 1], k + 1)
    }

    fn random_instance(rng: &mut impl Rng, n: usize, k: usize) -> (Tensor, Tensor) {
        (uniform_range(&[n, k], 2.0, rng), uniform_range(&[k + 2, k + 2], 2.0, rng))
    }

    fn integer_instance(rng: &mut impl Rng, n: usize, k: usize) -> (Tensor, Tensor) {
        let mut p = Tensor::zeros(&[n, k]);
        let mut t = Tensor::zeros(&[k + 2, k + 2]);
        for v in p.data_mut().iter_mut().chain(t.data_mut()) {
            *v = rng.gen_range(-1..=1) as f64;
        }
        (p, t)
    }

    #[test]
    fn zero_scores_give_zero_path_score() {
        let p = Tensor::zeros(&[3, 2]);
        let t = Tensor::zeros(&[4, 4]);
        assert_eq!(crf_score(&p, &t, &[0, 1, 1]).unwrap(), 0.0);
    }

    #[test]
    fn hand_summed_score() {
        let p = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let t = Tensor::zeros(&[4, 4]);
        assert_eq!(crf_score(&p, &t, &[0, 1]).unwrap(), 2.0);
    }

    #[test]
    fn label_out_of_range_is_an_index_error() {
        let p = Tensor::zeros(&[2, 2]);
        let t = Tensor::zeros(&[4, 4]);
        assert!(matches!(crf_score(&p, &t, &[0, 2]), Err(Error::Index { index: 2, size: 2 })));
        assert!(matches!(crf_nll(&p, &t, &[0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn two_equal_paths_give_log_two() {
        let p = Tensor::zeros(&[1, 2]);
        let t = Tensor::zeros(&[4, 4]);
        assert!((crf_log_partition(&p, &t) - 2f64.ln()).abs() < 1e-15);
        assert!((crf_nll(&p, &t, &[1]).unwrap() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn dominant_gold_path_has_near_zero_nll() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (mut p, t) = random_instance(&mut rng, 4, 3);
        let gold = [2, 0, 1, 1];
        for (i, &y) in gold.iter().enumerate() {
            p.set2(i, y, p.get2(i, y) + 1e4);
        }
        assert!(crf_nll(&p, &t, &gold).unwrap() < 1e-6);
    }

    #[test]
    fn shifting_one_emission_row_shifts_the_partition() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (mut p, t) = random_instance(&mut rng, 4, 3);
        let before = crf_log_partition(&p, &t);
        for j in 0..3 {
            p.set2(2, j, p.get2(2, j) + 0.75);
        }
        assert!((crf_log_partition(&p, &t) - before - 0.75).abs() < 1e-12);
    }

    #[test]
    fn partition_and_nll_match_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let n = rng.gen_range(1..=5);
            let k = rng.gen_range(1..=4);
            let (p, t) = random_instance(&mut rng, n, k);
            let paths = all_paths(n, k);
            let scores: Vec<f64> = paths.iter().map(|y| oracle_score(&p, &t, y)).collect();
            let log_z = logsumexp(&scores);
            assert!((crf_log_partition(&p, &t) - log_z).abs() < 1e-8);
            let total: f64 = scores.iter().map(|s| (s - log_z).exp()).sum();
            assert!((total - 1.0).abs() < 1e-8);
            let g = rng.gen_range(0..paths.len());
            let nll = crf_nll(&p, &t, &paths[g]).unwrap();
            assert!((nll - (log_z - scores[g])).abs() < 1e-8);
        }
    }

    #[test]
    fn viterbi_matches_enumeration_with_lexicographic_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for case in 0..200 {
            let n = rng.gen_range(1..=5);
            let k = rng.gen_range(1..=4);
            let (p, t) = if case % 2 == 0 {
                random_instance(&mut rng, n, k)
            } else {
                integer_instance(&mut rng, n, k)
            };
            let mut best: Option<(Vec<usize>, f64)> = None;
            for y in all_paths(n, k) {
                let s = oracle_score(&p, &t, &y);
                if best.as_ref().map_or(true, |(_, b)| s > *b) {
                    best = Some((y, s));
                }
            }
            let (path, score) = viterbi(&p, &t);
            assert_eq!((path, score), best.unwrap(), "case {case}");
        }
    }

    #[test]
    fn decoupled_chain_picks_rowwise_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (p, _) = random_instance(&mut rng, 5, 4);
        let (path, _) = viterbi(&p, &Tensor::zeros(&[6, 6]));
        for (i, &y) in path.iter().enumerate() {
            let row = p.row(i);
            assert!(row.iter().all(|&v| v <= row[y]));
        }
    }

    #[test]
    fn exact_tie_prefers_smaller_sequence() {
        let p = Tensor::zeros(&[3, 3]);
        let t = Tensor::zeros(&[5, 5]);
        assert_eq!(viterbi(&p, &t).0, vec![0, 0, 0]);
        let p = Tensor::from_rows(&[vec![0.0, 1.0, 1.0], vec![2.0, 0.0, 2.0]]).unwrap();
        assert_eq!(viterbi(&p, &t).0, vec![1, 0]);
    }

    #[test]
    fn nll_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let n = rng.gen_range(1..=4);
            let k = rng.gen_range(1..=4);
            let (p, t) = random_instance(&mut rng, n, k);
            let gold: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
            let err = gradient_check(
                |tape, v| crf_nll_var(tape, v[0], v[1], &gold).unwrap(),
                &[p, t],
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-6, "relative error {err}");
        }
    }

    #[test]
    fn masked_decoding_is_well_formed() {
        let tags = TagSet::new(2);
        let mask = bioes_transition_mask(tags);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let n = rng.gen_range(1..8);
            let p = uniform_range(&[n, tags.num_tags()], 5.0, &mut rng);
            let (path, _) = viterbi(&p, &mask);
            let spans = bioes_decode(&path, tags);
            assert_eq!(bioes_encode(&spans, n, tags).unwrap(), path);
        }
    }
}
