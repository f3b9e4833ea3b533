//! Scoring of predictions against targets.
//!
//! All metrics work on the workflow tokenizer's output, so two texts that
//! differ only in spacing are the same sequence.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::records::PredictionRecord;
use crate::tokens::token_texts;

/// Numerator substituted for zero n-gram matches in sentence-level BLEU.
pub const SENTENCE_BLEU_EPSILON: f64 = 0.1;
pub const BUCKET_COUNT: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no prediction/target pairs to score")]
    EmptyInput,
    #[error("{predictions} predictions but {targets} targets")]
    LengthMismatch { predictions: usize, targets: usize },
    #[error("confidence {confidence} of `{id}` is outside [0, 1]")]
    InvalidConfidence { id: String, confidence: f64 },
}

/// Whitespace- and structure-normalized token sequence of `text`.
pub fn normalized_tokens(text: &str) -> Vec<String> {
    token_texts(text)
}

pub fn exact_match(prediction: &str, target: &str) -> bool {
    normalized_tokens(prediction) == normalized_tokens(target)
}

/// Byte-for-byte comparison, for when spacing differences must count.
pub fn exact_match_strict(prediction: &str, target: &str) -> bool {
    prediction == target
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped matches and candidate n-gram total for one order.
fn modified_precision_parts(
    candidate: &[String],
    reference: &[String],
    n: usize,
) -> (usize, usize) {
    let cand = ngram_counts(candidate, n);
    let refs = ngram_counts(reference, n);
    let matched = cand
        .iter()
        .map(|(g, c)| (*c).min(refs.get(g).copied().unwrap_or(0)))
        .sum();
    (matched, candidate.len().saturating_sub(n - 1))
}

fn brevity_penalty(candidate_len: usize, reference_len: usize) -> f64 {
    if candidate_len == 0 {
        0.0
    } else if candidate_len > reference_len {
        1.0
    } else {
        (1.0 - reference_len as f64 / candidate_len as f64).exp()
    }
}

/// Corpus BLEU-4 over token sequences: clipped counts pooled over the corpus,
/// uniform weights, no smoothing.
pub fn corpus_bleu4(pairs: &[(Vec<String>, Vec<String>)]) -> f64 {
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    let mut cand_len = 0;
    let mut ref_len = 0;
    for (cand, reference) in pairs {
        cand_len += cand.len();
        ref_len += reference.len();
        for n in 1..=4 {
            let (m, t) = modified_precision_parts(cand, reference, n);
            matched[n - 1] += m;
            total[n - 1] += t;
        }
    }
    if matched.contains(&0) {
        return 0.0;
    }
    let log_p: f64 = (0..4)
        .map(|i| (matched[i] as f64 / total[i] as f64).ln())
        .sum::<f64>()
        / 4.0;
    brevity_penalty(cand_len, ref_len) * log_p.exp()
}

/// Sentence BLEU-4 with epsilon smoothing. Orders longer than the candidate
/// are left out of the geometric mean, so an exact match of any length scores 1.
pub fn sentence_bleu4(candidate: &[String], reference: &[String]) -> f64 {
    if candidate.is_empty() {
        return if reference.is_empty() { 1.0 } else { 0.0 };
    }
    let max_order = candidate.len().min(4);
    let log_p: f64 = (1..=max_order)
        .map(|n| {
            let (m, t) = modified_precision_parts(candidate, reference, n);
            let numerator = if m == 0 {
                SENTENCE_BLEU_EPSILON
            } else {
                m as f64
            };
            (numerator / t as f64).ln()
        })
        .sum::<f64>()
        / max_order as f64;
    brevity_penalty(candidate.len(), reference.len()) * log_p.exp()
}

/// Corpus score and per-pair sentence scores for (prediction, target) texts.
pub fn bleu4<P: AsRef<str>, T: AsRef<str>>(
    pairs: &[(P, T)],
) -> Result<(f64, Vec<f64>), MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let tokenized: Vec<(Vec<String>, Vec<String>)> = pairs
        .iter()
        .map(|(p, t)| (normalized_tokens(p.as_ref()), normalized_tokens(t.as_ref())))
        .collect();
    let sentence = tokenized
        .iter()
        .map(|(c, r)| sentence_bleu4(c, r))
        .collect();
    Ok((corpus_bleu4(&tokenized), sentence))
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RougeL {
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
}

pub fn rouge_l_tokens<T: PartialEq>(prediction: &[T], target: &[T]) -> RougeL {
    let lcs = lcs_len(prediction, target);
    if lcs == 0 {
        return RougeL::default();
    }
    let precision = lcs as f64 / prediction.len() as f64;
    let recall = lcs as f64 / target.len() as f64;
    RougeL {
        precision,
        recall,
        f_measure: 2.0 * precision * recall / (precision + recall),
    }
}

pub fn rouge_l(prediction: &str, target: &str) -> RougeL {
    rouge_l_tokens(&normalized_tokens(prediction), &normalized_tokens(target))
}

/// Scores of a single prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceScore {
    pub id: String,
    pub correct: bool,
    pub bleu4: f64,
    pub rouge_l_precision: f64,
    pub rouge_l_recall: f64,
    pub rouge_l_f: f64,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub count: usize,
    pub correct: usize,
    pub correct_fraction: f64,
    pub bleu4_corpus: f64,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub bleu4_sentence: Vec<f64>,
    pub rouge_l_precision: f64,
    pub rouge_l_recall: f64,
    pub rouge_l_f: f64,
}

/// Scores `predictions[i]` against `targets[i]`.
pub fn score(
    predictions: &[PredictionRecord],
    targets: &[&str],
    strict: bool,
) -> Result<(MetricReport, Vec<InstanceScore>), MetricsError> {
    if predictions.len() != targets.len() {
        return Err(MetricsError::LengthMismatch {
            predictions: predictions.len(),
            targets: targets.len(),
        });
    }
    if predictions.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let pairs: Vec<(&str, &str)> = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p.prediction.as_str(), *t))
        .collect();
    let (corpus, sentence) = bleu4(&pairs)?;

    let per_instance: Vec<InstanceScore> = predictions
        .iter()
        .zip(targets)
        .zip(&sentence)
        .map(|((p, t), b)| {
            let r = rouge_l(&p.prediction, t);
            let correct = if strict {
                exact_match_strict(&p.prediction, t)
            } else {
                exact_match(&p.prediction, t)
            };
            InstanceScore {
                id: p.id.clone(),
                correct,
                bleu4: *b,
                rouge_l_precision: r.precision,
                rouge_l_recall: r.recall,
                rouge_l_f: r.f_measure,
                confidence: p.confidence,
            }
        })
        .collect();

    let n = per_instance.len() as f64;
    let mean = |f: fn(&InstanceScore) -> f64| per_instance.iter().map(f).sum::<f64>() / n;
    let correct = per_instance.iter().filter(|s| s.correct).count();
    let report = MetricReport {
        count: per_instance.len(),
        correct,
        correct_fraction: correct as f64 / n,
        bleu4_corpus: corpus,
        bleu4_sentence: sentence,
        rouge_l_precision: mean(|s| s.rouge_l_precision),
        rouge_l_recall: mean(|s| s.rouge_l_recall),
        rouge_l_f: mean(|s| s.rouge_l_f),
    };
    Ok((report, per_instance))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceBucket {
    pub lower: f64,
    pub upper: f64,
    pub total: usize,
    pub correct: usize,
    pub wrong: usize,
}

impl ConfidenceBucket {
    pub fn correct_rate(&self) -> Option<f64> {
        (self.total > 0).then(|| self.correct as f64 / self.total as f64)
    }
}

/// Ten buckets of width 0.1; the last one also holds confidence 1.0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceBucketReport {
    pub buckets: Vec<ConfidenceBucket>,
}

impl ConfidenceBucketReport {
    pub fn total(&self) -> usize {
        self.buckets.iter().map(|b| b.total).sum()
    }
}

pub fn bucket_index(confidence: f64) -> usize {
    ((confidence * BUCKET_COUNT as f64).floor() as usize).min(BUCKET_COUNT - 1)
}

/// Buckets `(id, confidence, correct)` triples.
pub fn bucket_outcomes<'a, I>(outcomes: I) -> Result<ConfidenceBucketReport, MetricsError>
where
    I: IntoIterator<Item = (&'a str, f64, bool)>,
{
    let mut buckets: Vec<ConfidenceBucket> = (0..BUCKET_COUNT)
        .map(|i| ConfidenceBucket {
            lower: i as f64 / BUCKET_COUNT as f64,
            upper: (i + 1) as f64 / BUCKET_COUNT as f64,
            total: 0,
            correct: 0,
            wrong: 0,
        })
        .collect();
    for (id, confidence, correct) in outcomes {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(MetricsError::InvalidConfidence {
                id: id.to_string(),
                confidence,
            });
        }
        let b = &mut buckets[bucket_index(confidence)];
        b.total += 1;
        if correct {
            b.correct += 1;
        } else {
            b.wrong += 1;
        }
    }
    Ok(ConfidenceBucketReport { buckets })
}

/// Buckets `records[i]` by confidence, judging it against `targets[i]`.
pub fn bucket_by_confidence(
    records: &[PredictionRecord],
    targets: &[&str],
) -> Result<ConfidenceBucketReport, MetricsError> {
    if records.len() != targets.len() {
        return Err(MetricsError::LengthMismatch {
            predictions: records.len(),
            targets: targets.len(),
        });
    }
    bucket_outcomes(
        records
            .iter()
            .zip(targets)
            .map(|(r, t)| (r.id.as_str(), r.confidence, exact_match(&r.prediction, t))),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn rec(id: &str, pred: &str, conf: f64) -> PredictionRecord {
        PredictionRecord {
            id: id.into(),
            prediction: pred.into(),
            confidence: conf,
            stop_reason: None,
        }
    }

    #[test]
    fn exact_match_cases() {
        let t = r#"{"uses": "actions/checkout@v2"}"#;
        assert!(exact_match(t, t));
        assert!(!exact_match(
            "uses: actions/checkout@v2",
            "uses: actions/checkout@v3"
        ));
        assert!(exact_match(r#"{ "uses":   "actions/checkout@v2" }"#, t));
        assert!(exact_match("  a   b\t c ", "a b c"));
        assert!(!exact_match_strict("a  b", "a b"));
    }

    #[test]
    fn bleu_identity_and_disjoint() {
        let (c, s) = bleu4(&[("a b c d e", "a b c d e")]).unwrap();
        assert!((c - 1.0).abs() < 1e-12);
        assert!((s[0] - 1.0).abs() < 1e-12);
        let (c, _) = bleu4(&[("a b c d", "w x y z")]).unwrap();
        assert_eq!(c, 0.0);
        assert_eq!(bleu4::<&str, &str>(&[]), Err(MetricsError::EmptyInput));
    }

    #[test]
    fn bleu_cat_on_mat() {
        // p1 = 5/6, p2 = 3/5, p3 = 1/4, p4 = 0/3, lengths equal
        let c = toks("the cat sat on the mat");
        let r = toks("the cat is on the mat");
        assert_eq!(corpus_bleu4(&[(c.clone(), r.clone())]), 0.0);
        let expected =
            ((5.0f64 / 6.0).ln() + (3.0f64 / 5.0).ln() + (1.0f64 / 4.0).ln() + (0.1f64 / 3.0).ln())
                / 4.0;
        assert!((sentence_bleu4(&c, &r) - expected.exp()).abs() < 1e-12);
    }

    #[test]
    fn short_exact_match_sentence_bleu_is_one() {
        assert!((sentence_bleu4(&toks("a b"), &toks("a b")) - 1.0).abs() < 1e-12);
        assert_eq!(sentence_bleu4(&[], &toks("a")), 0.0);
    }

    #[test]
    fn rouge_cases() {
        let r = rouge_l_tokens(&toks("a c"), &toks("a b c"));
        assert!((r.precision - 1.0).abs() < 1e-12);
        assert!((r.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.f_measure - 0.8).abs() < 1e-12);
        let same = rouge_l("x y z", "x y z");
        assert_eq!(
            (same.precision, same.recall, same.f_measure),
            (1.0, 1.0, 1.0)
        );
        assert_eq!(rouge_l("a b", "c d"), RougeL::default());
        assert_eq!(rouge_l("", ""), RougeL::default());
    }

    #[test]
    fn buckets() {
        let recs = [rec("a", "x", 0.85), rec("b", "y", 1.0), rec("c", "z", 0.0)];
        let rep = bucket_by_confidence(&recs, &["x", "no", "z"]).unwrap();
        assert_eq!(rep.buckets[8].correct, 1);
        assert_eq!(rep.buckets[9].wrong, 1);
        assert_eq!(rep.buckets[0].correct, 1);
        assert_eq!(rep.total(), 3);
        for b in &rep.buckets {
            assert_eq!(b.correct + b.wrong, b.total);
        }
        let bad = bucket_by_confidence(&[rec("q", "x", 1.5)], &["x"]);
        assert!(matches!(bad, Err(MetricsError::InvalidConfidence { .. })));
    }

    #[test]
    fn all_zero_confidence_lands_in_first_bucket() {
        let recs: Vec<_> = (0..7).map(|i| rec(&i.to_string(), "p", 0.0)).collect();
        let targets = vec!["p"; 7];
        let rep = bucket_by_confidence(&recs, &targets).unwrap();
        assert_eq!(rep.buckets[0].total, 7);
    }

    #[test]
    fn score_report() {
        let recs = [rec("1", "a b c d", 0.9), rec("2", "a b", 0.2)];
        let (rep, per) = score(&recs, &["a b c d", "x y"], false).unwrap();
        assert_eq!(rep.correct, 1);
        assert!((rep.correct_fraction - 0.5).abs() < 1e-12);
        assert!(per[0].correct && !per[1].correct);
        assert!((rep.rouge_l_f - 0.5).abs() < 1e-12);
        assert!(score(&recs, &["a"], false).is_err());
    }

    fn brute_lcs(a: &[u8], b: &[u8]) -> usize {
        // longest subsequence of `a` (by enumeration) that is a subsequence of `b`
        let is_sub = |s: &[u8], t: &[u8]| {
            let mut it = t.iter();
            s.iter().all(|c| it.any(|d| d == c))
        };
        let mut best = 0;
        for mask in 0u32..(1 << a.len()) {
            let sub: Vec<u8> = (0..a.len())
                .filter(|i| mask >> i & 1 == 1)
                .map(|i| a[i])
                .collect();
            if sub.len() > best && is_sub(&sub, b) {
                best = sub.len();
            }
        }
        best
    }

    proptest! {
        #[test]
        fn lcs_matches_enumeration(a in proptest::collection::vec(0u8..4, 0..10), b in proptest::collection::vec(0u8..4, 0..10)) {
            prop_assert_eq!(lcs_len(&a, &b), brute_lcs(&a, &b));
        }

        #[test]
        fn exact_matches_score_perfectly(words in proptest::collection::vec("[a-z]{1,5}", 1..12)) {
            let s = words.join(" ");
            prop_assert!(exact_match(&s, &s));
            let (c, sent) = bleu4(&[(&s, &s)]).unwrap();
            prop_assert!((sent[0] - 1.0).abs() < 1e-12);
            if words.len() >= 4 {
                prop_assert!((c - 1.0).abs() < 1e-12);
            }
            prop_assert!((rouge_l(&s, &s).f_measure - 1.0).abs() < 1e-12);
        }

        #[test]
        fn scores_stay_in_unit_interval(a in "[a-c ]{0,20}", b in "[a-c ]{0,20}") {
            let (c, s) = bleu4(&[(&a, &b)]).unwrap();
            prop_assert!((0.0..=1.0).contains(&c));
            prop_assert!((0.0..=1.0 + 1e-12).contains(&s[0]));
            let r = rouge_l(&a, &b);
            prop_assert!((0.0..=1.0).contains(&r.f_measure));
        }
    }
}
