//! Pre-training and fine-tuning instance generation, filtering and
//! project-level splitting.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::abstraction::Abstractor;
use crate::tokens::{count_tokens, token_texts};
use crate::workflow::{render_layout, Step, WorkflowDoc};

/// Replaces the step to predict in job-completion inputs.
pub const TO_BE_PREDICTED: &str = "<TO_BE_PREDICTED>";
/// Stands for the body of a step that comes after the one to predict.
pub const FOR_LATER_USE: &str = "<FOR-LATER-USE>";
/// Default cap on input tokens; instances at or above it are dropped.
pub const DEFAULT_TOKEN_CAP: usize = 1024;
pub const DEFAULT_MASK_RATE: f64 = 0.15;

/// Numbered sentinel used for the `index`-th masked position.
pub fn sentinel(index: usize) -> String {
    format!("<extra_id_{index}>")
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("mask rate must lie strictly between 0 and 1, got {0}")]
    InvalidMaskRate(f64),
    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    InvalidRatios(SplitRatios),
    #[error("no split keeps every partition within tolerance (max deviation {max_deviation:.4})")]
    ImpossibleSplit {
        assignment: Box<SplitAssignment>,
        max_deviation: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "NS")]
    NextStep,
    #[serde(rename = "JC")]
    JobCompletion,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::NextStep => "NS",
            Mode::JobCompletion => "JC",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    Raw,
    Abstracted,
}

impl fmt::Display for Representation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Representation::Raw => "raw",
            Representation::Abstracted => "abstracted",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Provenance {
    #[serde(rename = "repo")]
    pub repo_id: String,
    pub path: String,
    #[serde(rename = "job")]
    pub job_id: String,
    /// 1-based position of the target step within its job.
    #[serde(rename = "step")]
    pub step_index: usize,
}

/// One fine-tuning example. Serializes to the flat instance JSONL schema.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub mode: Mode,
    #[serde(rename = "repr")]
    pub representation: Representation,
    pub input: String,
    pub target: String,
    #[serde(flatten)]
    pub provenance: Provenance,
}

impl Instance {
    fn new(
        mode: Mode,
        representation: Representation,
        input: String,
        target: String,
        provenance: Provenance,
    ) -> Self {
        let id = instance_id(mode, representation, &provenance);
        Instance {
            id,
            mode,
            representation,
            input,
            target,
            provenance,
        }
    }
}

/// Stable id derived from mode, representation and provenance.
pub fn instance_id(mode: Mode, repr: Representation, p: &Provenance) -> String {
    let mut hasher = Sha256::new();
    for part in [
        mode.to_string().as_str(),
        &repr.to_string(),
        &p.repo_id,
        &p.path,
        &p.job_id,
        &p.step_index.to_string(),
    ] {
        hasher.update(part.as_bytes());
        hasher.update([0u8]);
    }
    hasher.finalize()[..8]
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Builds NS and JC instances, abstracting text with the given rule set.
pub struct InstanceBuilder<'a> {
    abstractor: &'a Abstractor,
}

impl<'a> InstanceBuilder<'a> {
    pub fn new(abstractor: &'a Abstractor) -> Self {
        InstanceBuilder { abstractor }
    }

    fn finish(&self, repr: Representation, text: &str) -> String {
        match repr {
            Representation::Raw => text.to_string(),
            Representation::Abstracted => self.abstractor.abstract_text(text),
        }
    }

    fn provenance(doc: &WorkflowDoc, job: usize, step: usize) -> Provenance {
        Provenance {
            repo_id: doc.repo_id.clone(),
            path: doc.path.clone(),
            job_id: doc.jobs[job].job_id.clone(),
            step_index: step + 1,
        }
    }

    /// One instance per step: everything written before the step as input,
    /// the step itself as target.
    pub fn next_step(&self, doc: &WorkflowDoc, repr: Representation) -> Vec<Instance> {
        let layout = render_layout(doc, |_, _, step, out| step.render(out));
        let mut out = Vec::with_capacity(doc.step_count());
        for (j, job) in doc.jobs.iter().enumerate() {
            for s in 0..job.steps.len() {
                let input = layout.prefix_before(j, s).unwrap_or_default();
                let target = layout.step_text(j, s).unwrap_or_default();
                out.push(Instance::new(
                    Mode::NextStep,
                    repr,
                    self.finish(repr, &input),
                    self.finish(repr, target),
                    Self::provenance(doc, j, s),
                ));
            }
        }
        out
    }

    /// One instance per step: the job skeleton with earlier steps implemented,
    /// the target step masked and later steps reduced to their names.
    pub fn job_completion(&self, doc: &WorkflowDoc, repr: Representation) -> Vec<Instance> {
        let mut out = Vec::with_capacity(doc.step_count());
        for (j, job) in doc.jobs.iter().enumerate() {
            for s in 0..job.steps.len() {
                let layout = render_layout(doc, |jj, ss, step, buf| {
                    if jj != j || ss < s {
                        step.render(buf);
                    } else if ss == s {
                        render_marker(step, TO_BE_PREDICTED, buf);
                    } else {
                        render_marker(step, FOR_LATER_USE, buf);
                    }
                });
                let input = &layout.text[..layout.jobs[j].span.end];
                let target = job.steps[s].canonical();
                out.push(Instance::new(
                    Mode::JobCompletion,
                    repr,
                    self.finish(repr, input),
                    self.finish(repr, &target),
                    Self::provenance(doc, j, s),
                ));
            }
        }
        out
    }
}

fn render_marker(step: &Step, marker: &str, out: &mut String) {
    match &step.name {
        Some(name) => {
            out.push_str("{\"name\": ");
            out.push_str(&serde_json::to_string(name).expect("string serialization"));
            out.push_str(", ");
            out.push_str(marker);
            out.push('}');
        }
        None => out.push_str(marker),
    }
}

pub fn build_ns_instances(doc: &WorkflowDoc, repr: Representation) -> Vec<Instance> {
    InstanceBuilder::new(crate::abstraction::shared_abstractor()).next_step(doc, repr)
}

pub fn build_jc_instances(doc: &WorkflowDoc, repr: Representation) -> Vec<Instance> {
    InstanceBuilder::new(crate::abstraction::shared_abstractor()).job_completion(doc, repr)
}

/// A text paired with where it came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceText {
    pub source: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedInstance {
    pub input: String,
    pub target: String,
    #[serde(rename = "source")]
    pub source_path: String,
}

/// Chooses `k` distinct positions out of `0..n`, uniformly, in ascending order.
pub fn mask_positions<R: Rng>(n: usize, k: usize, rng: &mut R) -> Vec<usize> {
    let k = k.min(n);
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.gen_range(i..n);
        pool.swap(i, j);
    }
    let mut chosen = pool[..k].to_vec();
    chosen.sort_unstable();
    chosen
}

/// Random generator for the `index`-th text of a corpus masked with `seed`.
pub fn masking_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Masks `round(mask_rate * tokens)` positions of each text. Texts where that
/// rounds to zero are skipped.
pub fn build_pretrain_instances(
    corpus: &[SourceText],
    mask_rate: f64,
    seed: u64,
) -> Result<Vec<MaskedInstance>, DatasetError> {
    if !(mask_rate > 0.0 && mask_rate < 1.0) {
        return Err(DatasetError::InvalidMaskRate(mask_rate));
    }
    Ok(corpus
        .par_iter()
        .enumerate()
        .filter_map(|(i, src)| {
            let tokens = token_texts(&src.text);
            let k = (mask_rate * tokens.len() as f64).round() as usize;
            if k == 0 {
                return None;
            }
            let positions = mask_positions(tokens.len(), k, &mut masking_rng(seed, i));
            Some(mask_tokens(&tokens, &positions, &src.source))
        })
        .collect())
}

fn mask_tokens(tokens: &[String], positions: &[usize], source: &str) -> MaskedInstance {
    let mut input = Vec::with_capacity(tokens.len());
    let mut target = Vec::with_capacity(positions.len() * 2);
    let mut next = positions.iter().peekable();
    for (i, tok) in tokens.iter().enumerate() {
        if next.peek() == Some(&&i) {
            next.next();
            let s = sentinel(target.len() / 2);
            input.push(s.clone());
            target.push(s);
            target.push(tok.clone());
        } else {
            input.push(tok.clone());
        }
    }
    MaskedInstance {
        input: input.join(" "),
        target: target.join(" "),
        source_path: source.to_string(),
    }
}

/// Anything with an input and target text that the corpus filter can judge.
pub trait TextPair {
    fn input(&self) -> &str;
    fn target(&self) -> &str;
}

impl TextPair for Instance {
    fn input(&self) -> &str {
        &self.input
    }
    fn target(&self) -> &str {
        &self.target
    }
}

impl TextPair for SourceText {
    fn input(&self) -> &str {
        &self.text
    }
    fn target(&self) -> &str {
        ""
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DropReason {
    NonAscii,
    TooLong,
    Duplicate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dropped {
    /// Position in the filter's input.
    pub index: usize,
    pub reason: DropReason,
}

#[derive(Debug, Clone)]
pub struct FilterOutcome<T> {
    pub kept: Vec<T>,
    pub dropped: Vec<Dropped>,
}

/// Why `item` would be rejected regardless of the rest of the corpus.
pub fn intrinsic_drop_reason<T: TextPair>(item: &T, token_cap: usize) -> Option<DropReason> {
    if !item.input().is_ascii() || !item.target().is_ascii() {
        Some(DropReason::NonAscii)
    } else if count_tokens(item.input()) >= token_cap {
        Some(DropReason::TooLong)
    } else {
        None
    }
}

/// Drops non-ASCII items, items with `token_cap` or more input tokens, and
/// exact (input, target) duplicates of an earlier kept item.
pub fn filter_corpus<T: TextPair + Sync>(items: Vec<T>, token_cap: usize) -> FilterOutcome<T> {
    let reasons: Vec<Option<DropReason>> = items
        .par_iter()
        .map(|it| intrinsic_drop_reason(it, token_cap))
        .collect();

    let mut seen: HashSet<(String, String)> = HashSet::new();
    let mut kept = Vec::with_capacity(items.len());
    let mut dropped = Vec::new();
    for (index, (item, reason)) in items.into_iter().zip(reasons).enumerate() {
        let reason = reason.or_else(|| {
            let key = (item.input().to_string(), item.target().to_string());
            (!seen.insert(key)).then_some(DropReason::Duplicate)
        });
        match reason {
            Some(reason) => dropped.push(Dropped { index, reason }),
            None => kept.push(item),
        }
    }
    FilterOutcome { kept, dropped }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Eval,
    Test,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Partition::Train, Partition::Eval, Partition::Test];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Partition::Train => "train",
            Partition::Eval => "eval",
            Partition::Test => "test",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub eval: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.8,
            eval: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    pub fn as_array(&self) -> [f64; 3] {
        [self.train, self.eval, self.test]
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let arr = self.as_array();
        let sum: f64 = arr.iter().sum();
        if arr.iter().any(|r| !(0.0..=1.0).contains(r)) || (sum - 1.0).abs() > 1e-9 {
            return Err(DatasetError::InvalidRatios(*self));
        }
        Ok(())
    }
}

/// Allowed gap between realized and requested partition shares.
pub const SPLIT_TOLERANCE: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub projects: BTreeMap<String, Partition>,
    pub ratios: SplitRatios,
    /// Workflows per partition, indexed by [`Partition::index`].
    pub workflow_counts: [usize; 3],
}

impl SplitAssignment {
    pub fn partition_of(&self, project: &str) -> Option<Partition> {
        self.projects.get(project).copied()
    }

    pub fn realized_ratios(&self) -> [f64; 3] {
        let total: usize = self.workflow_counts.iter().sum();
        if total == 0 {
            return [0.0; 3];
        }
        self.workflow_counts.map(|c| c as f64 / total as f64)
    }

    pub fn max_deviation(&self) -> f64 {
        let target = self.ratios.as_array();
        self.realized_ratios()
            .iter()
            .zip(target)
            .map(|(r, t)| (r - t).abs())
            .fold(0.0, f64::max)
    }
}

/// Assigns whole projects to partitions. Projects are visited largest first
/// (ties in seeded random order) and each goes to the partition furthest
/// below its target workflow count.
///
/// Returns [`DatasetError::ImpossibleSplit`], still carrying the assignment,
/// when some partition misses its share by more than [`SPLIT_TOLERANCE`].
pub fn split_by_project(
    workflows_per_project: &BTreeMap<String, usize>,
    ratios: SplitRatios,
    seed: u64,
) -> Result<SplitAssignment, DatasetError> {
    ratios.validate()?;
    let mut order: Vec<(&String, usize)> =
        workflows_per_project.iter().map(|(p, n)| (p, *n)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    order.sort_by_key(|&(_, n)| std::cmp::Reverse(n));

    let total: usize = order.iter().map(|(_, n)| n).sum();
    let targets = ratios.as_array().map(|r| r * total as f64);
    let mut counts = [0usize; 3];
    let mut projects = BTreeMap::new();
    for (project, n) in order {
        let best = (0..3)
            .max_by(|&a, &b| {
                let da = targets[a] - counts[a] as f64;
                let db = targets[b] - counts[b] as f64;
                // prefer the earlier partition on equal deficits
                da.total_cmp(&db).then(b.cmp(&a))
            })
            .expect("three partitions");
        counts[best] += n;
        projects.insert(project.clone(), Partition::ALL[best]);
    }

    let assignment = SplitAssignment {
        projects,
        ratios,
        workflow_counts: counts,
    };
    let max_deviation = assignment.max_deviation();
    if max_deviation > SPLIT_TOLERANCE + 1e-12 {
        return Err(DatasetError::ImpossibleSplit {
            assignment: Box::new(assignment),
            max_deviation,
        });
    }
    Ok(assignment)
}
