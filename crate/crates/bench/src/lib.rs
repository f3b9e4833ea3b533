//! Synthetic inputs shared by the benchmarks.

use wfc_core::fixtures::{
    FIVE_STEP_WORKFLOW, HELLO_C_WORKFLOW, PHPUNIT_WORKFLOW, TWO_JOBS_WORKFLOW,
};
use wfc_core::{canonicalize, parse_workflow, WorkflowDoc};

/// `copies` parsed copies of the fixture workflows, each under its own repo id.
pub fn fixture_docs(copies: usize) -> Vec<WorkflowDoc> {
    let sources = [
        HELLO_C_WORKFLOW,
        PHPUNIT_WORKFLOW,
        FIVE_STEP_WORKFLOW,
        TWO_JOBS_WORKFLOW,
    ];
    (0..copies)
        .flat_map(|i| {
            sources.iter().enumerate().map(move |(j, src)| {
                parse_workflow(
                    src,
                    &format!("repo{i}"),
                    &format!(".github/workflows/w{j}.yml"),
                )
                .expect("fixture parses")
            })
        })
        .collect()
}

pub fn canonical_texts(docs: &[WorkflowDoc]) -> Vec<String> {
    docs.iter().map(canonicalize).collect()
}
