//! Workflow completion toolkit: parsing and canonicalizing GitHub Actions
//! workflows, abstraction, dataset construction, an n-gram baseline,
//! evaluation metrics and paired statistics.

pub mod abstraction;
pub mod config;
pub mod dataset;
pub mod fixtures;
pub mod metrics;
pub mod ngram;
pub mod pipeline;
pub mod records;
pub mod stats;
pub mod tokens;
pub mod workflow;

pub use abstraction::{
    abstract_stream, abstract_text, abstraction_stats, classify_token, Abstractor, CoverageReport,
    ExtensionList, PlaceholderCategory,
};
pub use config::{PipelineConfig, RepresentationChoice};
pub use dataset::{
    build_jc_instances, build_ns_instances, build_pretrain_instances, filter_corpus,
    split_by_project, Instance, MaskedInstance, Mode, Partition, Provenance, Representation,
    SplitAssignment, SplitRatios,
};
pub use metrics::{bucket_by_confidence, exact_match, score, ConfidenceBucketReport, MetricReport};
pub use ngram::{select_best_n, train, Completion, NgramModel};
pub use records::{read_jsonl, write_jsonl, PredictionRecord, StopReason};
pub use stats::{cliffs_delta, holm_adjust, mcnemar, wilcoxon_signed_rank, Effect, StatResult};
pub use tokens::{detokenize, tokenize, Token, TokenStream};
pub use workflow::{canonicalize, parse_workflow, Job, Step, WorkflowDoc, WorkflowError};
