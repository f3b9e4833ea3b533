//! File-based pipeline stages behind the command-line driver.
//!
//! Every stage reads and writes inside a work directory:
//!
//! ```text
//! manifest.json               ingest: counts and per-file status
//! canonical.jsonl             ingest: canonical text of every parsed file
//! abstracted.jsonl            abstract: the same records, abstracted
//! coverage.json, rules.json   abstract: singleton census and rule snapshot
//! dataset/                    build-dataset: instances, pre-training corpus, summary
//! split.json, splits/         split: project assignment and per-partition instances
//! models/                     train-ngram: models and order selection
//! predictions/, eval/         run: test predictions and their reports
//! ```

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use walkdir::WalkDir;

use crate::abstraction::{shared_abstractor, AbstractionError, CoverageReport};
use crate::config::{ConfigError, PipelineConfig};
use crate::dataset::{
    build_pretrain_instances, filter_corpus, split_by_project, DatasetError, DropReason, Instance,
    InstanceBuilder, MaskedInstance, Mode, Partition, Representation, SourceText, SplitAssignment,
    TextPair,
};
use crate::metrics::{
    bucket_by_confidence, score, ConfidenceBucketReport, InstanceScore, MetricReport, MetricsError,
};
use crate::ngram::{select_best_n, Completion, NgramError, NgramModel, OrderSelection};
use crate::records::{read_jsonl, write_jsonl, JsonlError, PredictionRecord};
use crate::stats::{
    holm_adjust, mcnemar, wilcoxon_signed_rank_with, CliffsVariant, Effect, StatsError,
};
use crate::tokens::{token_texts, tokenize};
use crate::workflow::{
    canonicalize, canonicalize_yaml, is_yaml_path, parse_workflow, render_layout, WorkflowError,
};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CANONICAL_FILE: &str = "canonical.jsonl";
pub const ABSTRACTED_FILE: &str = "abstracted.jsonl";
pub const COVERAGE_FILE: &str = "coverage.json";
pub const RULES_FILE: &str = "rules.json";
pub const SPLIT_FILE: &str = "split.json";
pub const WORKFLOW_DIR: &str = ".github/workflows/";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("corpus root {0} does not exist or is not a directory")]
    MissingRoot(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Jsonl {
        path: PathBuf,
        #[source]
        source: JsonlError,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("model file {0} not found")]
    ModelMissing(PathBuf),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Workflow(#[from] WorkflowError),
    #[error(transparent)]
    Abstraction(#[from] AbstractionError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Ngram(#[from] NgramError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("ids do not match: {} missing [{}], {} extra [{}]", missing.len(), preview(missing), extra.len(), preview(extra))]
    IdMismatch {
        missing: Vec<String>,
        extra: Vec<String>,
    },
    #[error("id {0} occurs more than once")]
    DuplicateId(String),
    #[error("cursor: {0}")]
    Cursor(String),
}

fn preview(ids: &[String]) -> String {
    let mut s = ids.iter().take(5).cloned().collect::<Vec<_>>().join(", ");
    if ids.len() > 5 {
        s.push_str(", ...");
    }
    s
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create_parent(path: &Path) -> Result<(), PipelineError> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(io_err(dir)),
        _ => Ok(()),
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let file = File::open(path).map_err(io_err(path))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|source| PipelineError::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), PipelineError> {
    create_parent(path)?;
    let mut text = serde_json::to_string_pretty(value).map_err(|source| PipelineError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_jsonl_file<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    let file = File::open(path).map_err(io_err(path))?;
    read_jsonl(BufReader::new(file)).map_err(|source| PipelineError::Jsonl {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_jsonl_file<T: Serialize>(path: &Path, items: &[T]) -> Result<(), PipelineError> {
    create_parent(path)?;
    let file = File::create(path).map_err(io_err(path))?;
    write_jsonl(BufWriter::new(file), items).map_err(|source| PipelineError::Jsonl {
        path: path.to_path_buf(),
        source,
    })
}

fn mode_tag(mode: Mode) -> &'static str {
    match mode {
        Mode::NextStep => "ns",
        Mode::JobCompletion => "jc",
    }
}

/// Paths of every artifact inside a work directory.
#[derive(Debug, Clone)]
pub struct Workdir {
    root: PathBuf,
}

impl Workdir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Workdir { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn instances(&self, mode: Mode, repr: Representation) -> PathBuf {
        self.root
            .join("dataset")
            .join(format!("{}.{repr}.jsonl", mode_tag(mode)))
    }

    pub fn pretrain(&self, repr: Representation) -> PathBuf {
        self.root
            .join("dataset")
            .join(format!("pretrain.{repr}.jsonl"))
    }

    pub fn partition_instances(
        &self,
        part: Partition,
        mode: Mode,
        repr: Representation,
    ) -> PathBuf {
        self.root
            .join("splits")
            .join(part.to_string())
            .join(format!("{}.{repr}.jsonl", mode_tag(mode)))
    }

    pub fn model(&self, repr: Representation) -> PathBuf {
        self.root.join("models").join(format!("ngram.{repr}.json"))
    }

    pub fn selection(&self, repr: Representation) -> PathBuf {
        self.root
            .join("models")
            .join(format!("selection.{repr}.json"))
    }

    pub fn predictions(&self, mode: Mode, repr: Representation) -> PathBuf {
        self.root
            .join("predictions")
            .join(format!("{}.{repr}.jsonl", mode_tag(mode)))
    }

    pub fn eval_dir(&self, mode: Mode, repr: Representation) -> PathBuf {
        self.root
            .join("eval")
            .join(format!("{}.{repr}", mode_tag(mode)))
    }
}

// ---------------------------------------------------------------- ingest

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FileKind {
    Workflow,
    General,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub repo: String,
    pub path: String,
    pub kind: FileKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub repos: usize,
    pub workflows: usize,
    pub general: usize,
    pub unparseable: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub files: Vec<ManifestEntry>,
}

/// One parsed file in canonical (or abstracted) form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub repo: String,
    pub path: String,
    pub kind: FileKind,
    pub canonical: String,
}

/// Kind of a repository-relative path, or `None` for non-YAML files.
pub fn classify_path(rel: &str) -> Option<FileKind> {
    if !is_yaml_path(rel) {
        return None;
    }
    Some(if rel.starts_with(WORKFLOW_DIR) {
        FileKind::Workflow
    } else {
        FileKind::General
    })
}

fn relative_string(path: &Path, base: &Path) -> String {
    let rel = path.strip_prefix(base).unwrap_or(path);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

/// Repository-relative YAML files under `corpus_root`, each top-level
/// directory being one repository. `.git` directories are skipped.
pub fn discover(
    corpus_root: &Path,
) -> Result<Vec<(String, String, FileKind, PathBuf)>, PipelineError> {
    if !corpus_root.is_dir() {
        return Err(PipelineError::MissingRoot(corpus_root.to_path_buf()));
    }
    let mut repos: Vec<PathBuf> = fs::read_dir(corpus_root)
        .map_err(io_err(corpus_root))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    repos.sort();

    let mut found = Vec::new();
    for repo_dir in repos {
        let repo = relative_string(&repo_dir, corpus_root);
        let walker = WalkDir::new(&repo_dir)
            .sort_by_file_name()
            .into_iter()
            .filter_entry(|e| e.file_name() != ".git");
        for entry in walker {
            let entry = entry.map_err(|e| PipelineError::Io {
                path: repo_dir.clone(),
                source: e.into(),
            })?;
            if !entry.file_type().is_file() {
                continue;
            }
            let rel = relative_string(entry.path(), &repo_dir);
            if let Some(kind) = classify_path(&rel) {
                found.push((repo.clone(), rel, kind, entry.path().to_path_buf()));
            }
        }
    }
    Ok(found)
}

fn canonical_of(repo: &str, rel: &str, kind: FileKind, path: &Path) -> Result<String, String> {
    let bytes = fs::read(path).map_err(|e| e.to_string())?;
    let text = String::from_utf8(bytes).map_err(|_| "file is not valid UTF-8".to_string())?;
    let canonical = match kind {
        FileKind::Workflow => parse_workflow(&text, repo, rel).map(|doc| canonicalize(&doc)),
        FileKind::General => canonicalize_yaml(&text),
    };
    canonical.map_err(|e| e.to_string())
}

/// Walks the corpus, canonicalizes every YAML file and writes the manifest
/// and `canonical.jsonl`. Files that fail to parse are listed, not fatal.
pub fn ingest(corpus_root: &Path, workdir: &Workdir) -> Result<Manifest, PipelineError> {
    let files = discover(corpus_root)?;
    let results: Vec<(ManifestEntry, Option<CorpusRecord>)> = files
        .par_iter()
        .map(
            |(repo, rel, kind, path)| match canonical_of(repo, rel, *kind, path) {
                Ok(canonical) => (
                    ManifestEntry {
                        repo: repo.clone(),
                        path: rel.clone(),
                        kind: *kind,
                        error: None,
                    },
                    Some(CorpusRecord {
                        repo: repo.clone(),
                        path: rel.clone(),
                        kind: *kind,
                        canonical,
                    }),
                ),
                Err(e) => (
                    ManifestEntry {
                        repo: repo.clone(),
                        path: rel.clone(),
                        kind: *kind,
                        error: Some(e),
                    },
                    None,
                ),
            },
        )
        .collect();

    let repos: BTreeSet<&str> = files.iter().map(|f| f.0.as_str()).collect();
    let mut manifest = Manifest {
        repos: repos.len(),
        ..Manifest::default()
    };
    let mut records = Vec::new();
    for (entry, record) in results {
        match entry.kind {
            FileKind::Workflow => manifest.workflows += 1,
            FileKind::General => manifest.general += 1,
        }
        if entry.error.is_some() {
            manifest.unparseable += 1;
        }
        manifest.files.push(entry);
        records.extend(record);
    }
    write_json(&workdir.file(MANIFEST_FILE), &manifest)?;
    write_jsonl_file(&workdir.file(CANONICAL_FILE), &records)?;
    Ok(manifest)
}

// ---------------------------------------------------------------- abstract

/// Writes `abstracted.jsonl`, the singleton census of the workflow corpus
/// and the active rule set.
pub fn abstract_corpus(workdir: &Workdir) -> Result<CoverageReport, PipelineError> {
    let records: Vec<CorpusRecord> = read_jsonl_file(&workdir.file(CANONICAL_FILE))?;
    let abstractor = shared_abstractor();
    let abstracted: Vec<CorpusRecord> = records
        .par_iter()
        .map(|r| CorpusRecord {
            canonical: abstractor.abstract_text(&r.canonical),
            ..r.clone()
        })
        .collect();
    let streams: Vec<_> = records
        .iter()
        .filter(|r| r.kind == FileKind::Workflow)
        .map(|r| tokenize(&r.canonical).with_source(&r.repo, &r.path))
        .collect();
    let coverage = abstractor.abstraction_stats(&streams)?;

    write_jsonl_file(&workdir.file(ABSTRACTED_FILE), &abstracted)?;
    write_json(&workdir.file(COVERAGE_FILE), &coverage)?;
    write_json(&workdir.file(RULES_FILE), &abstractor.rule_report())?;
    Ok(coverage)
}

// ---------------------------------------------------------------- build-dataset

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub workflows: usize,
    /// Instances kept per `mode.repr` file.
    pub instances: BTreeMap<String, usize>,
    /// Dropped instance indices per mode and reason.
    pub dropped: BTreeMap<String, BTreeMap<DropReason, usize>>,
    pub pretrain: BTreeMap<String, usize>,
}

/// Filters every representation and keeps an index only if no representation
/// drops it, so the kept lists stay aligned.
fn aligned_filter<T>(
    sets: Vec<Vec<T>>,
    token_cap: usize,
) -> (Vec<Vec<T>>, BTreeMap<DropReason, usize>)
where
    T: TextPair + Sync + Clone,
{
    let mut drop: BTreeMap<usize, DropReason> = BTreeMap::new();
    for set in &sets {
        for d in filter_corpus(set.clone(), token_cap).dropped {
            drop.entry(d.index).or_insert(d.reason);
        }
    }
    let mut reasons = BTreeMap::new();
    for r in drop.values() {
        *reasons.entry(*r).or_default() += 1;
    }
    let kept = sets
        .into_iter()
        .map(|set| {
            set.into_iter()
                .enumerate()
                .filter(|(i, _)| !drop.contains_key(i))
                .map(|(_, x)| x)
                .collect()
        })
        .collect();
    (kept, reasons)
}

fn load_workflows(
    records: &[CorpusRecord],
) -> Result<Vec<crate::workflow::WorkflowDoc>, PipelineError> {
    records
        .iter()
        .filter(|r| r.kind == FileKind::Workflow)
        .map(|r| parse_workflow(&r.canonical, &r.repo, &r.path).map_err(PipelineError::from))
        .collect()
}

/// Builds NS and JC instances and the masked pre-training corpus for every
/// configured representation.
pub fn build_dataset(
    workdir: &Workdir,
    config: &PipelineConfig,
) -> Result<DatasetSummary, PipelineError> {
    config.validate()?;
    let records: Vec<CorpusRecord> = read_jsonl_file(&workdir.file(CANONICAL_FILE))?;
    let docs = load_workflows(&records)?;
    let reprs = config.representations();
    let builder = InstanceBuilder::new(shared_abstractor());
    let mut summary = DatasetSummary {
        workflows: docs.len(),
        ..DatasetSummary::default()
    };

    for mode in [Mode::NextStep, Mode::JobCompletion] {
        let sets: Vec<Vec<Instance>> = reprs
            .iter()
            .map(|&repr| {
                docs.par_iter()
                    .flat_map_iter(|doc| match mode {
                        Mode::NextStep => builder.next_step(doc, repr),
                        Mode::JobCompletion => builder.job_completion(doc, repr),
                    })
                    .collect()
            })
            .collect();
        let (kept, reasons) = aligned_filter(sets, config.token_cap);
        for (&repr, set) in reprs.iter().zip(&kept) {
            write_jsonl_file(&workdir.instances(mode, repr), set)?;
            summary
                .instances
                .insert(format!("{}.{repr}", mode_tag(mode)), set.len());
        }
        summary.dropped.insert(mode_tag(mode).to_string(), reasons);
    }

    let abstractor = shared_abstractor();
    let sources: Vec<Vec<SourceText>> = reprs
        .iter()
        .map(|&repr| {
            records
                .par_iter()
                .map(|r| SourceText {
                    source: format!("{}/{}", r.repo, r.path),
                    text: match repr {
                        Representation::Raw => r.canonical.clone(),
                        Representation::Abstracted => abstractor.abstract_text(&r.canonical),
                    },
                })
                .collect()
        })
        .collect();
    let (kept, reasons) = aligned_filter(sources, config.token_cap);
    summary.dropped.insert("pretrain".to_string(), reasons);
    for (&repr, set) in reprs.iter().zip(&kept) {
        let masked: Vec<MaskedInstance> =
            build_pretrain_instances(set, config.mask_rate, config.seed)?;
        write_jsonl_file(&workdir.pretrain(repr), &masked)?;
        summary.pretrain.insert(repr.to_string(), masked.len());
    }

    write_json(
        &workdir.root().join("dataset").join("summary.json"),
        &summary,
    )?;
    Ok(summary)
}

// ---------------------------------------------------------------- split

/// Assigns repositories to partitions and writes per-partition instance files.
pub fn split(workdir: &Workdir, config: &PipelineConfig) -> Result<SplitAssignment, PipelineError> {
    config.validate()?;
    let records: Vec<CorpusRecord> = read_jsonl_file(&workdir.file(CANONICAL_FILE))?;
    let mut per_project: BTreeMap<String, usize> = BTreeMap::new();
    for r in records.iter().filter(|r| r.kind == FileKind::Workflow) {
        *per_project.entry(r.repo.clone()).or_default() += 1;
    }
    let assignment = match split_by_project(&per_project, config.ratios, config.seed) {
        Ok(a) => a,
        Err(DatasetError::ImpossibleSplit { assignment, .. }) if config.allow_imbalanced_split => {
            *assignment
        }
        Err(e) => return Err(e.into()),
    };
    write_json(&workdir.file(SPLIT_FILE), &assignment)?;

    for repr in config.representations() {
        for mode in [Mode::NextStep, Mode::JobCompletion] {
            let instances: Vec<Instance> = read_jsonl_file(&workdir.instances(mode, repr))?;
            let mut parts: [Vec<&Instance>; 3] = Default::default();
            for inst in &instances {
                if let Some(p) = assignment.partition_of(&inst.provenance.repo_id) {
                    parts[p.index()].push(inst);
                }
            }
            for p in Partition::ALL {
                write_jsonl_file(
                    &workdir.partition_instances(p, mode, repr),
                    &parts[p.index()],
                )?;
            }
        }
    }
    Ok(assignment)
}

// ---------------------------------------------------------------- train-ngram

/// Trains one model per representation on the canonical texts of training
/// workflows, choosing the order by exact match on evaluation NS instances.
pub fn train_ngram(
    workdir: &Workdir,
    config: &PipelineConfig,
) -> Result<BTreeMap<Representation, OrderSelection>, PipelineError> {
    config.validate()?;
    let assignment: SplitAssignment = read_json(&workdir.file(SPLIT_FILE))?;
    let mut out = BTreeMap::new();
    for repr in config.representations() {
        let corpus_file = match repr {
            Representation::Raw => CANONICAL_FILE,
            Representation::Abstracted => ABSTRACTED_FILE,
        };
        let records: Vec<CorpusRecord> = read_jsonl_file(&workdir.file(corpus_file))?;
        let texts: Vec<Vec<String>> = records
            .par_iter()
            .filter(|r| {
                r.kind == FileKind::Workflow
                    && assignment.partition_of(&r.repo) == Some(Partition::Train)
            })
            .map(|r| token_texts(&r.canonical))
            .collect();
        let eval: Vec<Instance> =
            read_jsonl_file(&workdir.partition_instances(Partition::Eval, Mode::NextStep, repr))?;
        let selection = select_best_n(&config.ngram_orders, &texts, &eval)?;
        let model = NgramModel::train(&texts, selection.best)?;
        save_model(&model, &workdir.model(repr))?;
        write_json(&workdir.selection(repr), &selection)?;
        out.insert(repr, selection);
    }
    Ok(out)
}

pub fn save_model(model: &NgramModel, path: &Path) -> Result<(), PipelineError> {
    create_parent(path)?;
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    model.save(&mut w)?;
    w.flush().map_err(io_err(path))
}

pub fn load_model(path: &Path) -> Result<NgramModel, PipelineError> {
    if !path.is_file() {
        return Err(PipelineError::ModelMissing(path.to_path_buf()));
    }
    let file = File::open(path).map_err(io_err(path))?;
    Ok(NgramModel::load(BufReader::new(file))?)
}

// ---------------------------------------------------------------- predict / suggest

pub fn predict(
    model_path: &Path,
    instances_path: &Path,
    out_path: &Path,
) -> Result<usize, PipelineError> {
    let model = load_model(model_path)?;
    let instances: Vec<Instance> = read_jsonl_file(instances_path)?;
    let records = model.predict(&instances);
    write_jsonl_file(out_path, &records)?;
    Ok(records.len())
}

/// Where a suggestion is requested: a job id (default: the last job) and the
/// 1-based position the new step would take (default: after the last step).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Cursor {
    pub job: Option<String>,
    pub step: Option<usize>,
}

/// NS model input for the cursor position in `workflow_text`.
pub fn suggestion_input(
    workflow_text: &str,
    path: &str,
    cursor: &Cursor,
    repr: Representation,
) -> Result<String, PipelineError> {
    let doc = parse_workflow(workflow_text, "local", path)?;
    let job = match &cursor.job {
        Some(id) => doc
            .job_index(id)
            .ok_or_else(|| PipelineError::Cursor(format!("no job `{id}`")))?,
        None => doc.jobs.len() - 1,
    };
    let len = doc.jobs[job].steps.len();
    let step = cursor.step.unwrap_or(len + 1);
    if step == 0 || step > len + 1 {
        return Err(PipelineError::Cursor(format!(
            "step {step} outside 1..={} for job `{}`",
            len + 1,
            doc.jobs[job].job_id
        )));
    }
    let layout = render_layout(&doc, |_, _, s, out| s.render(out));
    let input = layout.prefix_before(job, step - 1).ok_or_else(|| {
        PipelineError::Cursor(format!("job `{}` has no steps list", doc.jobs[job].job_id))
    })?;
    Ok(match repr {
        Representation::Raw => input,
        Representation::Abstracted => shared_abstractor().abstract_text(&input),
    })
}

pub fn suggest(
    model: &NgramModel,
    workflow_text: &str,
    path: &str,
    cursor: &Cursor,
    repr: Representation,
) -> Result<Completion, PipelineError> {
    let input = suggestion_input(workflow_text, path, cursor, repr)?;
    Ok(model.complete(&token_texts(&input)))
}

// ---------------------------------------------------------------- evaluate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub metrics: MetricReport,
    pub buckets: ConfidenceBucketReport,
}

/// Orders `predictions` like `instances`, failing unless both carry exactly
/// the same ids.
pub fn align_predictions<'a>(
    predictions: &'a [PredictionRecord],
    instances: &[Instance],
) -> Result<Vec<&'a PredictionRecord>, PipelineError> {
    let mut by_id: BTreeMap<&str, &PredictionRecord> = BTreeMap::new();
    for p in predictions {
        if by_id.insert(p.id.as_str(), p).is_some() {
            return Err(PipelineError::DuplicateId(p.id.clone()));
        }
    }
    let mut seen = HashSet::new();
    for inst in instances {
        if !seen.insert(inst.id.as_str()) {
            return Err(PipelineError::DuplicateId(inst.id.clone()));
        }
    }
    let missing: Vec<String> = instances
        .iter()
        .filter(|i| !by_id.contains_key(i.id.as_str()))
        .map(|i| i.id.clone())
        .collect();
    let extra: Vec<String> = by_id
        .keys()
        .filter(|id| !seen.contains(*id))
        .map(|id| id.to_string())
        .collect();
    if !missing.is_empty() || !extra.is_empty() || instances.is_empty() {
        return Err(PipelineError::IdMismatch { missing, extra });
    }
    Ok(instances.iter().map(|i| by_id[i.id.as_str()]).collect())
}

/// Scores predictions against instance targets in memory.
pub fn evaluate_records(
    predictions: &[PredictionRecord],
    instances: &[Instance],
    strict: bool,
) -> Result<(EvaluationReport, Vec<InstanceScore>), PipelineError> {
    let aligned: Vec<PredictionRecord> = align_predictions(predictions, instances)?
        .into_iter()
        .cloned()
        .collect();
    let targets: Vec<&str> = instances.iter().map(|i| i.target.as_str()).collect();
    let (mut metrics, per_instance) = score(&aligned, &targets, strict)?;
    metrics.bleu4_sentence.clear();
    let buckets = bucket_by_confidence(&aligned, &targets)?;
    Ok((EvaluationReport { metrics, buckets }, per_instance))
}

pub fn write_per_instance_csv(path: &Path, scores: &[InstanceScore]) -> Result<(), PipelineError> {
    create_parent(path)?;
    let csv_err = |source| PipelineError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for s in scores {
        w.serialize(s).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_per_instance_csv(path: &Path) -> Result<Vec<InstanceScore>, PipelineError> {
    let csv_err = |source| PipelineError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().collect::<Result<_, _>>().map_err(csv_err)
}

/// Writes `report.json`, `per_instance.csv` and `buckets.json` into `out_dir`.
pub fn evaluate(
    predictions_path: &Path,
    instances_path: &Path,
    out_dir: &Path,
    strict: bool,
) -> Result<EvaluationReport, PipelineError> {
    let predictions: Vec<PredictionRecord> = read_jsonl_file(predictions_path)?;
    let instances: Vec<Instance> = read_jsonl_file(instances_path)?;
    let (report, per_instance) = evaluate_records(&predictions, &instances, strict)?;
    write_json(&out_dir.join("report.json"), &report)?;
    write_json(&out_dir.join("buckets.json"), &report.buckets)?;
    write_per_instance_csv(&out_dir.join("per_instance.csv"), &per_instance)?;
    Ok(report)
}

pub fn buckets(
    predictions_path: &Path,
    instances_path: &Path,
) -> Result<ConfidenceBucketReport, PipelineError> {
    let predictions: Vec<PredictionRecord> = read_jsonl_file(predictions_path)?;
    let instances: Vec<Instance> = read_jsonl_file(instances_path)?;
    let aligned: Vec<PredictionRecord> = align_predictions(&predictions, &instances)?
        .into_iter()
        .cloned()
        .collect();
    let targets: Vec<&str> = instances.iter().map(|i| i.target.as_str()).collect();
    Ok(bucket_by_confidence(&aligned, &targets)?)
}

// ---------------------------------------------------------------- compare-stats

/// Two per-instance score files to compare, the first playing system A.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComparisonInput {
    pub label: String,
    pub a: PathBuf,
    pub b: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub comparison: String,
    pub metric: String,
    pub test: String,
    pub n: usize,
    pub statistic: Option<f64>,
    pub p_value_raw: f64,
    pub p_value_adjusted: f64,
    pub effect: Option<Effect>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

fn paired_scores(
    a: &[InstanceScore],
    b: &[InstanceScore],
) -> Result<Vec<(InstanceScore, InstanceScore)>, PipelineError> {
    let mut by_id: BTreeMap<&str, &InstanceScore> = BTreeMap::new();
    for s in b {
        if by_id.insert(s.id.as_str(), s).is_some() {
            return Err(PipelineError::DuplicateId(s.id.clone()));
        }
    }
    let ids_a: HashSet<&str> = a.iter().map(|s| s.id.as_str()).collect();
    if ids_a.len() != a.len() {
        let mut seen = HashSet::new();
        let dup = a
            .iter()
            .find(|s| !seen.insert(s.id.as_str()))
            .expect("duplicate exists");
        return Err(PipelineError::DuplicateId(dup.id.clone()));
    }
    let missing: Vec<String> = a
        .iter()
        .filter(|s| !by_id.contains_key(s.id.as_str()))
        .map(|s| s.id.clone())
        .collect();
    let extra: Vec<String> = b
        .iter()
        .filter(|s| !ids_a.contains(s.id.as_str()))
        .map(|s| s.id.clone())
        .collect();
    if !missing.is_empty() || !extra.is_empty() || a.is_empty() {
        return Err(PipelineError::IdMismatch { missing, extra });
    }
    Ok(a.iter()
        .map(|s| (s.clone(), by_id[s.id.as_str()].clone()))
        .collect())
}

fn row(
    comparison: &str,
    metric: &str,
    test: &str,
    n: usize,
    result: Result<crate::stats::StatResult, StatsError>,
) -> ComparisonRow {
    match result {
        Ok(r) => ComparisonRow {
            comparison: comparison.to_string(),
            metric: metric.to_string(),
            test: test.to_string(),
            n,
            statistic: Some(r.statistic),
            p_value_raw: r.p_value_raw,
            p_value_adjusted: r.p_value_raw,
            effect: Some(r.effect),
            note: None,
        },
        Err(e) => ComparisonRow {
            comparison: comparison.to_string(),
            metric: metric.to_string(),
            test: test.to_string(),
            n,
            statistic: None,
            p_value_raw: 1.0,
            p_value_adjusted: 1.0,
            effect: None,
            note: Some(e.to_string()),
        },
    }
}

/// McNemar on correctness and Wilcoxon on sentence BLEU-4 and ROUGE-L F for
/// each pair of files. Holm's adjustment runs within each (test, metric)
/// family across all comparisons.
pub fn compare_stats(
    inputs: &[ComparisonInput],
    variant: CliffsVariant,
) -> Result<Vec<ComparisonRow>, PipelineError> {
    let mut rows = Vec::with_capacity(inputs.len() * 3);
    for input in inputs {
        let a = read_per_instance_csv(&input.a)?;
        let b = read_per_instance_csv(&input.b)?;
        let pairs = paired_scores(&a, &b)?;
        let n = pairs.len();
        let correct: Vec<(bool, bool)> =
            pairs.iter().map(|(x, y)| (x.correct, y.correct)).collect();
        let bleu: Vec<(f64, f64)> = pairs.iter().map(|(x, y)| (x.bleu4, y.bleu4)).collect();
        let rouge: Vec<(f64, f64)> = pairs
            .iter()
            .map(|(x, y)| (x.rouge_l_f, y.rouge_l_f))
            .collect();
        rows.push(row(
            &input.label,
            "correct",
            "mcnemar",
            n,
            mcnemar(&correct),
        ));
        rows.push(row(
            &input.label,
            "bleu4",
            "wilcoxon",
            n,
            wilcoxon_signed_rank_with(&bleu, variant),
        ));
        rows.push(row(
            &input.label,
            "rouge_l_f",
            "wilcoxon",
            n,
            wilcoxon_signed_rank_with(&rouge, variant),
        ));
    }

    let mut families: BTreeMap<(String, String), Vec<usize>> = BTreeMap::new();
    for (i, r) in rows.iter().enumerate() {
        families
            .entry((r.test.clone(), r.metric.clone()))
            .or_default()
            .push(i);
    }
    for members in families.values() {
        let raw: Vec<f64> = members.iter().map(|&i| rows[i].p_value_raw).collect();
        let adjusted = holm_adjust(&raw).expect("p-values lie in [0, 1]");
        for (&i, p) in members.iter().zip(adjusted) {
            rows[i].p_value_adjusted = p;
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------- run

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    /// Counts only; the per-file list stays in `manifest.json`.
    pub manifest: Manifest,
    pub coverage: CoverageReport,
    pub dataset: DatasetSummary,
    pub split_workflows: [usize; 3],
    pub selected_orders: BTreeMap<Representation, usize>,
    /// Test-partition NS metrics of the n-gram model per representation.
    pub test_metrics: BTreeMap<Representation, Option<MetricReport>>,
}

/// Runs every stage from ingestion to evaluation of the n-gram model on the
/// test partition's NS instances.
pub fn run_all(config: &PipelineConfig) -> Result<RunSummary, PipelineError> {
    config.validate()?;
    let root = config
        .corpus_root
        .as_deref()
        .ok_or_else(|| PipelineError::MissingRoot(PathBuf::new()))?;
    let wd = Workdir::new(&config.workdir);
    let manifest = ingest(root, &wd)?;
    let coverage = abstract_corpus(&wd)?;
    let dataset = build_dataset(&wd, config)?;
    let assignment = split(&wd, config)?;
    let selections = train_ngram(&wd, config)?;

    let mut test_metrics = BTreeMap::new();
    for repr in config.representations() {
        let instances = wd.partition_instances(Partition::Test, Mode::NextStep, repr);
        let predictions = wd.predictions(Mode::NextStep, repr);
        let n = predict(&wd.model(repr), &instances, &predictions)?;
        let report = if n == 0 {
            None
        } else {
            Some(
                evaluate(
                    &predictions,
                    &instances,
                    &wd.eval_dir(Mode::NextStep, repr),
                    false,
                )?
                .metrics,
            )
        };
        test_metrics.insert(repr, report);
    }

    let summary = RunSummary {
        manifest: Manifest {
            files: Vec::new(),
            ..manifest
        },
        coverage,
        dataset,
        split_workflows: assignment.workflow_counts,
        selected_orders: selections.iter().map(|(r, s)| (*r, s.best)).collect(),
        test_metrics,
    };
    write_json(&wd.file("run_summary.json"), &summary)?;
    Ok(summary)
}
