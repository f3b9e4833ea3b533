//! Count-based n-gram completion baseline.
//!
//! There is no smoothing or backoff: an unseen context ends generation.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Instance;
use crate::metrics::exact_match;
use crate::records::{PredictionRecord, StopReason};
use crate::tokens::{detokenize, token_texts};

/// Padding token placed before every training sequence.
pub const BOS: &str = "<s>";
/// Default cap on emitted tokens per completion.
pub const DEFAULT_MAX_EMIT: usize = 750;
pub const MODEL_FORMAT: &str = "wfc-ngram";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum NgramError {
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("n-gram order must be at least 2, got {0}")]
    InvalidOrder(usize),
    #[error("no candidate orders given")]
    NoCandidates,
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

type Counts = BTreeMap<String, u64>;

#[derive(Debug, Clone, PartialEq)]
pub struct NgramModel {
    n: usize,
    table: HashMap<Vec<String>, Counts>,
    vocab: BTreeSet<String>,
}

/// Outcome of a greedy completion.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub tokens: Vec<String>,
    pub confidence: f64,
    pub stop: StopReason,
}

impl Completion {
    pub fn text(&self) -> String {
        detokenize(&self.tokens)
    }
}

fn merge(
    mut a: HashMap<Vec<String>, Counts>,
    b: HashMap<Vec<String>, Counts>,
) -> HashMap<Vec<String>, Counts> {
    if a.len() < b.len() {
        return merge(b, a);
    }
    for (ctx, counts) in b {
        let slot = a.entry(ctx).or_default();
        for (tok, c) in counts {
            *slot.entry(tok).or_default() += c;
        }
    }
    a
}

impl NgramModel {
    /// Counts every n-gram of every sequence, with `n - 1` [`BOS`] tokens in front.
    pub fn train<S: AsRef<str> + Sync>(texts: &[Vec<S>], n: usize) -> Result<Self, NgramError> {
        if n < 2 {
            return Err(NgramError::InvalidOrder(n));
        }
        if texts.is_empty() {
            return Err(NgramError::EmptyCorpus);
        }
        let table = texts
            .par_iter()
            .fold(
                HashMap::new,
                |mut table: HashMap<Vec<String>, Counts>, text| {
                    let mut padded: Vec<&str> = vec![BOS; n - 1];
                    padded.extend(text.iter().map(|t| t.as_ref()));
                    for window in padded.windows(n) {
                        let ctx: Vec<String> =
                            window[..n - 1].iter().map(|s| s.to_string()).collect();
                        *table
                            .entry(ctx)
                            .or_default()
                            .entry(window[n - 1].to_string())
                            .or_default() += 1;
                    }
                    table
                },
            )
            .reduce(HashMap::new, merge);
        let vocab = texts
            .iter()
            .flat_map(|t| t.iter().map(|s| s.as_ref().to_string()))
            .collect();
        Ok(NgramModel { n, table, vocab })
    }

    pub fn order(&self) -> usize {
        self.n
    }

    pub fn vocab(&self) -> &BTreeSet<String> {
        &self.vocab
    }

    pub fn context_count(&self) -> usize {
        self.table.len()
    }

    pub fn counts(&self, context: &[&str]) -> Option<&BTreeMap<String, u64>> {
        let key: Vec<String> = context.iter().map(|s| s.to_string()).collect();
        self.table.get(&key)
    }

    fn context_key<S: AsRef<str>>(&self, context: &[S]) -> Vec<String> {
        let width = self.n - 1;
        let mut key: Vec<String> = Vec::with_capacity(width);
        let have = context.len().min(width);
        key.extend(std::iter::repeat_n(BOS.to_string(), width - have));
        key.extend(
            context[context.len() - have..]
                .iter()
                .map(|s| s.as_ref().to_string()),
        );
        key
    }

    /// Most frequent continuation of the last `n - 1` tokens of `context` and
    /// its relative frequency. Ties go to the lexicographically smallest token.
    pub fn next_token<S: AsRef<str>>(&self, context: &[S]) -> Option<(String, f64)> {
        let counts = self.table.get(&self.context_key(context))?;
        let total: u64 = counts.values().sum();
        let mut best: Option<(&String, u64)> = None;
        for (tok, &c) in counts {
            if best.is_none_or(|(_, b)| c > b) {
                best = Some((tok, c));
            }
        }
        best.map(|(tok, c)| (tok.clone(), c as f64 / total as f64))
    }

    /// Greedy completion with the default emission cap.
    pub fn complete<S: AsRef<str>>(&self, prefix: &[S]) -> Completion {
        self.complete_with_cap(prefix, DEFAULT_MAX_EMIT)
    }

    /// Appends greedy continuations until the context is unseen ([`StopReason::H1`]),
    /// a `}` outside string literals closes the step object ([`StopReason::H2`]),
    /// or `max_emit` tokens were produced.
    pub fn complete_with_cap<S: AsRef<str>>(&self, prefix: &[S], max_emit: usize) -> Completion {
        let width = self.n - 1;
        let mut window: Vec<String> = self.context_key(prefix);
        let mut tokens = Vec::new();
        let mut confidence = 1.0;
        let mut braces = BraceTracker::default();

        loop {
            if tokens.len() >= max_emit {
                return Completion {
                    tokens,
                    confidence,
                    stop: StopReason::Cap,
                };
            }
            let Some((tok, p)) = self.next_token(&window) else {
                return Completion {
                    tokens,
                    confidence,
                    stop: StopReason::H1,
                };
            };
            confidence *= p;
            let closed = braces.push(&tok);
            window.push(tok.clone());
            if window.len() > width {
                window.remove(0);
            }
            tokens.push(tok);
            if closed {
                return Completion {
                    tokens,
                    confidence,
                    stop: StopReason::H2,
                };
            }
        }
    }

    pub fn to_file(&self) -> ModelFile {
        let mut contexts: Vec<ContextEntry> = self
            .table
            .iter()
            .map(|(ctx, counts)| ContextEntry {
                context: ctx.clone(),
                counts: counts.clone(),
            })
            .collect();
        contexts.sort_by(|a, b| a.context.cmp(&b.context));
        ModelFile {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            n: self.n,
            contexts,
        }
    }

    pub fn from_file(file: ModelFile) -> Result<Self, NgramError> {
        if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
            return Err(NgramError::Format(format!(
                "unsupported model {} v{}",
                file.format, file.version
            )));
        }
        if file.n < 2 {
            return Err(NgramError::InvalidOrder(file.n));
        }
        let mut table = HashMap::with_capacity(file.contexts.len());
        let mut vocab = BTreeSet::new();
        for entry in file.contexts {
            if entry.context.len() != file.n - 1 {
                return Err(NgramError::Format(format!(
                    "context of length {} in an order-{} model",
                    entry.context.len(),
                    file.n
                )));
            }
            if entry.counts.values().any(|&c| c == 0) {
                return Err(NgramError::Format("zero count".to_string()));
            }
            vocab.extend(entry.context.iter().filter(|t| *t != BOS).cloned());
            vocab.extend(entry.counts.keys().cloned());
            table.insert(entry.context, entry.counts);
        }
        Ok(NgramModel {
            n: file.n,
            table,
            vocab,
        })
    }

    pub fn save<W: Write>(&self, writer: W) -> Result<(), NgramError> {
        serde_json::to_writer(writer, &self.to_file())?;
        Ok(())
    }

    pub fn load<R: Read>(reader: R) -> Result<Self, NgramError> {
        Self::from_file(serde_json::from_reader(reader)?)
    }

    /// Completes the input of every instance.
    pub fn predict(&self, instances: &[Instance]) -> Vec<PredictionRecord> {
        instances
            .par_iter()
            .map(|inst| {
                let c = self.complete(&token_texts(&inst.input));
                PredictionRecord {
                    id: inst.id.clone(),
                    prediction: c.text(),
                    confidence: c.confidence,
                    stop_reason: Some(c.stop),
                }
            })
            .collect()
    }
}

/// Tracks `{`/`}` depth of emitted tokens, ignoring those inside string literals.
#[derive(Debug, Default, Clone)]
pub struct BraceTracker {
    depth: i64,
    in_string: bool,
}

impl BraceTracker {
    /// Feeds one token; true once a `}` brings the depth back to zero or below.
    pub fn push(&mut self, tok: &str) -> bool {
        match tok {
            "\"" => self.in_string = !self.in_string,
            "{" if !self.in_string => self.depth += 1,
            "}" if !self.in_string => {
                self.depth -= 1;
                return self.depth <= 0;
            }
            _ => {}
        }
        false
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextEntry {
    pub context: Vec<String>,
    pub counts: BTreeMap<String, u64>,
}

/// On-disk model: order plus every context with its continuation counts,
/// sorted by context so that saving is deterministic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub n: usize,
    pub contexts: Vec<ContextEntry>,
}

pub fn train<S: AsRef<str> + Sync>(texts: &[Vec<S>], n: usize) -> Result<NgramModel, NgramError> {
    NgramModel::train(texts, n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderSelection {
    pub best: usize,
    /// Exact-match rate on the evaluation instances for each candidate.
    pub scores: Vec<(usize, f64)>,
}

/// Trains one model per candidate order and keeps the one with the highest
/// exact-match rate on `eval`; the smallest order wins ties.
pub fn select_best_n<S: AsRef<str> + Sync>(
    candidates: &[usize],
    train_texts: &[Vec<S>],
    eval: &[Instance],
) -> Result<OrderSelection, NgramError> {
    if candidates.is_empty() {
        return Err(NgramError::NoCandidates);
    }
    let mut orders = candidates.to_vec();
    orders.sort_unstable();
    orders.dedup();

    let mut scores = Vec::with_capacity(orders.len());
    for &n in &orders {
        let model = NgramModel::train(train_texts, n)?;
        let rate = if eval.is_empty() {
            0.0
        } else {
            let hits = model
                .predict(eval)
                .iter()
                .zip(eval)
                .filter(|(p, inst)| exact_match(&p.prediction, &inst.target))
                .count();
            hits as f64 / eval.len() as f64
        };
        scores.push((n, rate));
    }
    let best = scores
        .iter()
        .fold(None::<(usize, f64)>, |acc, &(n, r)| match acc {
            Some((_, br)) if br >= r => acc,
            _ => Some((n, r)),
        })
        .map(|(n, _)| n)
        .expect("non-empty candidates");
    Ok(OrderSelection { best, scores })
}
