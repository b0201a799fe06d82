//! Automatic evaluation: corpus BLEU-4, ROUGE-1/2/L, sentence-level
//! Distinct-1..4. All metrics operate on token surfaces.

use std::collections::HashMap;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("candidate/reference counts differ: {0} vs {1}")]
    Misaligned(usize, usize),
    #[error("cannot evaluate an empty corpus")]
    Empty,
}

/// Aggregated scores. BLEU and ROUGE are reported x100, Distinct in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub bleu: f64,
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge_l: f64,
    pub distinct: [f64; 4],
    pub count: usize,
}

impl EvalReport {
    /// Flat key=value lines. ROUGE values are F1.
    pub fn to_lines(&self) -> String {
        let mut out = String::from("# rouge values are F1 x 100\n");
        out.push_str(&format!("bleu={}\n", self.bleu));
        out.push_str(&format!("rouge1={}\n", self.rouge1));
        out.push_str(&format!("rouge2={}\n", self.rouge2));
        out.push_str(&format!("rougeL={}\n", self.rouge_l));
        for (i, d) in self.distinct.iter().enumerate() {
            out.push_str(&format!("distinct{}={}\n", i + 1, d));
        }
        out.push_str(&format!("count={}\n", self.count));
        out
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], u64> {
    let mut counts: HashMap<&[String], u64> = HashMap::new();
    if tokens.len() >= n {
        for win in tokens.windows(n) {
            *counts.entry(win).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus BLEU-4 with uniform weights, clipped modified precision and the
/// exp(1 - r/c) brevity penalty. No smoothing; a zero n-gram precision
/// zeroes the score. Returned x100.
pub fn bleu(candidates: &[Vec<String>], references: &[Vec<String>]) -> Result<f64, MetricsError> {
    if candidates.len() != references.len() {
        return Err(MetricsError::Misaligned(candidates.len(), references.len()));
    }
    if candidates.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut matched = [0u64; 4];
    let mut total = [0u64; 4];
    let mut cand_len = 0u64;
    let mut ref_len = 0u64;
    for (cand, reference) in candidates.iter().zip(references) {
        cand_len += cand.len() as u64;
        ref_len += reference.len() as u64;
        for n in 1..=4 {
            let c_counts = ngram_counts(cand, n);
            let r_counts = ngram_counts(reference, n);
            for (gram, &c) in &c_counts {
                total[n - 1] += c;
                let r = r_counts.get(gram).copied().unwrap_or(0);
                matched[n - 1] += c.min(r);
            }
        }
    }
    let mut log_precision = 0.0;
    for n in 0..4 {
        if total[n] == 0 || matched[n] == 0 {
            return Ok(0.0);
        }
        log_precision += 0.25 * ((matched[n] as f64) / (total[n] as f64)).ln();
    }
    let bp = if cand_len <= ref_len && cand_len > 0 {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    } else {
        1.0
    };
    Ok(100.0 * bp * log_precision.exp())
}

fn prf(overlap: f64, ref_total: f64, cand_total: f64) -> (f64, f64, f64) {
    let recall = if ref_total > 0.0 { overlap / ref_total } else { 0.0 };
    let precision = if cand_total > 0.0 { overlap / cand_total } else { 0.0 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    (recall, precision, f1)
}

/// ROUGE-N (clipped n-gram overlap) as (recall, precision, f1) in [0,1].
pub fn rouge_n(candidate: &[String], reference: &[String], n: usize) -> (f64, f64, f64) {
    assert!((1..=2).contains(&n), "rouge_n supports n in {{1,2}}");
    let c_counts = ngram_counts(candidate, n);
    let r_counts = ngram_counts(reference, n);
    let overlap: u64 = c_counts
        .iter()
        .map(|(gram, &c)| c.min(r_counts.get(gram).copied().unwrap_or(0)))
        .sum();
    let cand_total: u64 = c_counts.values().sum();
    let ref_total: u64 = r_counts.values().sum();
    prf(overlap as f64, ref_total as f64, cand_total as f64)
}

pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L (longest common subsequence) as (recall, precision, f1) in [0,1].
pub fn rouge_l(candidate: &[String], reference: &[String]) -> (f64, f64, f64) {
    let lcs = lcs_len(candidate, reference) as f64;
    prf(lcs, reference.len() as f64, candidate.len() as f64)
}

/// Unique-n-gram ratio of one sentence; sentences shorter than n score 0.
pub fn distinct_n(sentence: &[String], n: usize) -> f64 {
    assert!((1..=4).contains(&n), "distinct_n supports n in 1..=4");
    if sentence.len() < n {
        return 0.0;
    }
    let total = sentence.len() - n + 1;
    let unique = sentence
        .windows(n)
        .collect::<std::collections::HashSet<_>>()
        .len();
    unique as f64 / total as f64
}

/// Full report: BLEU x100, ROUGE F1 x100 averaged over pairs, Distinct
/// averaged over candidate sentences.
pub fn evaluate(
    candidates: &[Vec<String>],
    references: &[Vec<String>],
) -> Result<EvalReport, MetricsError> {
    if candidates.len() != references.len() {
        return Err(MetricsError::Misaligned(candidates.len(), references.len()));
    }
    if candidates.is_empty() {
        return Err(MetricsError::Empty);
    }
    let count = candidates.len();
    let bleu_score = bleu(candidates, references)?;
    let mut r1 = 0.0;
    let mut r2 = 0.0;
    let mut rl = 0.0;
    let mut distinct = [0.0; 4];
    for (cand, reference) in candidates.iter().zip(references) {
        r1 += rouge_n(cand, reference, 1).2;
        r2 += rouge_n(cand, reference, 2).2;
        rl += rouge_l(cand, reference).2;
        for n in 1..=4 {
            distinct[n - 1] += distinct_n(cand, n);
        }
    }
    let k = count as f64;
    Ok(EvalReport {
        bleu: bleu_score,
        rouge1: 100.0 * r1 / k,
        rouge2: 100.0 * r2 / k,
        rouge_l: 100.0 * rl / k,
        distinct: distinct.map(|d| d / k),
        count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(|t| t.to_string()).collect()
    }

    #[test]
    fn bleu_perfect_match() {
        let c = vec![toks("the cat sat on the mat")];
        assert!((bleu(&c, &c).unwrap() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn bleu_disjoint_is_zero() {
        let c = vec![toks("x y z w")];
        let r = vec![toks("a b c d")];
        assert_eq!(bleu(&c, &r).unwrap(), 0.0);
    }

    #[test]
    fn bleu_clipped_unigram_precision() {
        // "the the the" vs "the cat": clipped unigram overlap = 1 of 3.
        let c = toks("the the the");
        let r = toks("the cat");
        let c_counts = ngram_counts(&c, 1);
        let r_counts = ngram_counts(&r, 1);
        let matched: u64 = c_counts
            .iter()
            .map(|(g, &n)| n.min(r_counts.get(g).copied().unwrap_or(0)))
            .sum();
        assert_eq!(matched, 1);
        let total: u64 = c_counts.values().sum();
        assert!(((matched as f64 / total as f64) - 1.0 / 3.0).abs() < 1e-12);
        // Full BLEU is zero here (no bigram matches), by the no-smoothing rule.
        assert_eq!(bleu(&[c], &[r]).unwrap(), 0.0);
    }

    #[test]
    fn bleu_hand_computed_corpus() {
        // cand "a b c d e", ref "a b c d f":
        // p1=4/5, p2=3/4, p3=2/3, p4=1/2, BP=1 (equal lengths).
        let c = vec![toks("a b c d e")];
        let r = vec![toks("a b c d f")];
        let expect = 100.0
            * ((0.25 * (4f64 / 5.0).ln()
                + 0.25 * (3f64 / 4.0).ln()
                + 0.25 * (2f64 / 3.0).ln()
                + 0.25 * 0.5f64.ln())
            .exp());
        assert!((bleu(&c, &r).unwrap() - expect).abs() < 1e-9);
    }

    #[test]
    fn bleu_brevity_penalty() {
        // cand shorter than ref: BP = exp(1 - r/c).
        let c = vec![toks("a b c d")];
        let r = vec![toks("a b c d e")];
        let p = (0.25 * 1f64.ln() + 0.25 * 1f64.ln() + 0.25 * 1f64.ln() + 0.25 * 1f64.ln()).exp();
        let bp = (1.0 - 5.0 / 4.0f64).exp();
        assert!((bleu(&c, &r).unwrap() - 100.0 * bp * p).abs() < 1e-9);
    }

    #[test]
    fn bleu_misaligned_errors() {
        assert!(matches!(
            bleu(&[toks("a")], &[]),
            Err(MetricsError::Misaligned(1, 0))
        ));
    }

    #[test]
    fn rouge_n_examples() {
        let (r, p, f) = rouge_n(&toks("a b c"), &toks("a b c"), 1);
        assert_eq!((r, p, f), (1.0, 1.0, 1.0));

        let (r, p, f) = rouge_n(&toks("x y"), &toks("a b"), 1);
        assert_eq!((r, p, f), (0.0, 0.0, 0.0));

        let (r, p, f) = rouge_n(&toks("a b c"), &toks("a c"), 1);
        assert!((r - 1.0).abs() < 1e-12);
        assert!((p - 2.0 / 3.0).abs() < 1e-12);
        assert!((f - 0.8).abs() < 1e-12);
    }

    #[test]
    fn rouge_l_examples() {
        let (r, p, f) = rouge_l(&toks("the cat"), &toks("the cat sat"));
        assert!((r - 2.0 / 3.0).abs() < 1e-12);
        assert!((p - 1.0).abs() < 1e-12);
        assert!((f - 0.8).abs() < 1e-12);

        assert_eq!(rouge_l(&toks("a b"), &toks("a b")), (1.0, 1.0, 1.0));
        assert_eq!(rouge_l(&[], &toks("a b")), (0.0, 0.0, 0.0));
    }

    /// Exponential-time LCS used as an independent oracle.
    fn brute_lcs(a: &[String], b: &[String]) -> usize {
        if a.is_empty() || b.is_empty() {
            0
        } else if a[0] == b[0] {
            1 + brute_lcs(&a[1..], &b[1..])
        } else {
            brute_lcs(&a[1..], b).max(brute_lcs(a, &b[1..]))
        }
    }

    proptest! {
        #[test]
        fn lcs_matches_brute_force(
            a in proptest::collection::vec("[abc]", 0..9),
            b in proptest::collection::vec("[abc]", 0..9),
        ) {
            prop_assert_eq!(lcs_len(&a, &b), brute_lcs(&a, &b));
        }

        #[test]
        fn rouge_l_bounded_by_unigram_overlap(
            a in proptest::collection::vec("[ab]", 1..8),
            b in proptest::collection::vec("[ab]", 1..8),
        ) {
            // The LCS is itself a common token multiset, so ROUGE-L can
            // never exceed ROUGE-1 componentwise. (No such relation holds
            // against ROUGE-2: "a b a" vs "b a b" has ROUGE-2 F1 = 1 but
            // ROUGE-L F1 = 2/3.)
            let (rl_r, rl_p, _) = rouge_l(&a, &b);
            let (r1_r, r1_p, _) = rouge_n(&a, &b, 1);
            prop_assert!(rl_r <= r1_r + 1e-12);
            prop_assert!(rl_p <= r1_p + 1e-12);
        }

        #[test]
        fn metrics_invariant_under_relabeling(
            a in proptest::collection::vec(0usize..4, 1..8),
            b in proptest::collection::vec(0usize..4, 1..8),
        ) {
            let name = |i: usize, table: &[&str; 4]| table[i].to_string();
            let t1 = ["a", "b", "c", "d"];
            let t2 = ["w", "x", "y", "z"];
            let (a1, b1): (Vec<_>, Vec<_>) = (
                a.iter().map(|&i| name(i, &t1)).collect(),
                b.iter().map(|&i| name(i, &t1)).collect(),
            );
            let (a2, b2): (Vec<_>, Vec<_>) = (
                a.iter().map(|&i| name(i, &t2)).collect(),
                b.iter().map(|&i| name(i, &t2)).collect(),
            );
            prop_assert_eq!(rouge_l(&a1, &b1), rouge_l(&a2, &b2));
            prop_assert_eq!(rouge_n(&a1, &b1, 1), rouge_n(&a2, &b2, 1));
            prop_assert_eq!(distinct_n(&a1, 2), distinct_n(&a2, 2));
            let bleu1 = bleu(&[a1], &[b1]).unwrap();
            let bleu2 = bleu(&[a2], &[b2]).unwrap();
            prop_assert!((bleu1 - bleu2).abs() < 1e-12);
        }
    }

    #[test]
    fn distinct_examples() {
        assert!((distinct_n(&toks("a a b"), 1) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(distinct_n(&toks("a b c"), 1), 1.0);
        assert_eq!(distinct_n(&toks("a b"), 3), 0.0);
    }

    #[test]
    fn distinct_non_increasing_with_duplicates() {
        let mut s = toks("a b c d");
        let before = distinct_n(&s, 2);
        s.extend(toks("a b c d"));
        assert!(distinct_n(&s, 2) <= before);
    }

    #[test]
    fn evaluate_perfect_and_schema() {
        let c = vec![toks("good product will buy again"), toks("thanks a lot friend")];
        let report = evaluate(&c, &c).unwrap();
        assert!((report.bleu - 100.0).abs() < 1e-9);
        assert!((report.rouge1 - 100.0).abs() < 1e-9);
        assert!((report.rouge_l - 100.0).abs() < 1e-9);
        assert_eq!(report.count, 2);

        let lines = report.to_lines();
        let keys: Vec<&str> = lines
            .lines()
            .filter(|l| !l.starts_with('#'))
            .map(|l| l.split('=').next().unwrap())
            .collect();
        assert_eq!(
            keys,
            vec![
                "bleu", "rouge1", "rouge2", "rougeL", "distinct1", "distinct2", "distinct3",
                "distinct4", "count"
            ]
        );
    }

    #[test]
    fn evaluate_empty_errors() {
        assert!(matches!(evaluate(&[], &[]), Err(MetricsError::Empty)));
    }
}
