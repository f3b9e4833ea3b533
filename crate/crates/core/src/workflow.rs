//! Typed view of a GitHub workflow file and its canonical JSON-like rendering.
//!
//! Parsing keeps every key in source order. Keys the model does not know about
//! (`env`, `strategy`, `permissions`, ...) are carried as opaque [`Node`] values
//! so that canonicalization loses nothing but comments and YAML formatting.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use serde_yaml::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WorkflowError {
    #[error("invalid YAML: {0}")]
    Parse(#[from] serde_yaml::Error),
    #[error("not a workflow: {0}")]
    NotAWorkflow(String),
    #[error("job `{job}`: {reason}")]
    InvalidJob { job: String, reason: String },
    #[error("job `{job}`, step {index}: {reason}")]
    InvalidStep {
        job: String,
        index: usize,
        reason: String,
    },
    #[error("workflow path must end in .yml or .yaml: {0}")]
    InvalidPath(String),
}

/// A YAML value reduced to the shapes the canonical form can express.
///
/// Every scalar (string, number, boolean) is kept as its textual form, so the
/// canonical rendering quotes all of them and re-parsing is lossless.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Node {
    Null,
    Scalar(String),
    Seq(Vec<Node>),
    Map(Vec<(String, Node)>),
}

impl Node {
    pub fn from_yaml(value: &Value) -> Node {
        match value {
            Value::Null => Node::Null,
            Value::Bool(b) => Node::Scalar(b.to_string()),
            Value::Number(n) => Node::Scalar(n.to_string()),
            Value::String(s) => Node::Scalar(s.clone()),
            Value::Sequence(items) => Node::Seq(items.iter().map(Node::from_yaml).collect()),
            Value::Mapping(map) => Node::Map(
                map.iter()
                    .map(|(k, v)| (key_text(k), Node::from_yaml(v)))
                    .collect(),
            ),
            Value::Tagged(tagged) => Node::from_yaml(&tagged.value),
        }
    }

    pub fn as_scalar(&self) -> Option<&str> {
        match self {
            Node::Scalar(s) => Some(s),
            _ => None,
        }
    }

    /// Text of a scalar, or the canonical rendering of anything else.
    pub fn to_text(&self) -> String {
        match self {
            Node::Scalar(s) => s.clone(),
            other => {
                let mut out = String::new();
                other.render(&mut out);
                out
            }
        }
    }

    pub fn render(&self, out: &mut String) {
        match self {
            Node::Null => out.push_str("null"),
            Node::Scalar(s) => push_quoted(out, s),
            Node::Seq(items) => {
                out.push('[');
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    item.render(out);
                }
                out.push(']');
            }
            Node::Map(entries) => {
                out.push('{');
                for (i, (k, v)) in entries.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    push_key(out, k);
                    v.render(out);
                }
                out.push('}');
            }
        }
    }
}

fn key_text(key: &Value) -> String {
    match Node::from_yaml(key) {
        Node::Null => "null".to_string(),
        node => node.to_text(),
    }
}

fn push_quoted(out: &mut String, s: &str) {
    // serde_json escaping of a plain &str cannot fail
    out.push_str(&serde_json::to_string(s).expect("string serialization"));
}

fn push_key(out: &mut String, key: &str) {
    push_quoted(out, key);
    out.push_str(": ");
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepKind {
    Uses(String),
    Run(String),
}

/// One item of a job's `steps` list.
///
/// Equality ignores `raw_block`, which only records where the step came from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Step {
    pub name: Option<String>,
    pub kind: StepKind,
    pub with_args: Vec<(String, String)>,
    pub raw_block: String,
    fields: Vec<(String, Node)>,
}

impl PartialEq for Step {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.kind == other.kind
            && self.with_args == other.with_args
            && self.fields == other.fields
    }
}

impl Step {
    fn from_yaml(job: &str, index: usize, value: &Value) -> Result<Step, WorkflowError> {
        let invalid = |reason: &str| WorkflowError::InvalidStep {
            job: job.to_string(),
            index,
            reason: reason.to_string(),
        };
        let Node::Map(fields) = Node::from_yaml(value) else {
            return Err(invalid("step is not a mapping"));
        };

        let mut name = None;
        let mut uses = None;
        let mut run = None;
        let mut with_args = Vec::new();
        for (key, node) in &fields {
            match key.as_str() {
                "name" => {
                    name = match node {
                        Node::Null => None,
                        other => Some(other.to_text()),
                    }
                }
                "uses" => uses = Some(node.to_text()),
                "run" => run = Some(node.to_text()),
                "with" => match node {
                    Node::Map(args) => {
                        with_args = args.iter().map(|(k, v)| (k.clone(), v.to_text())).collect()
                    }
                    Node::Null => {}
                    _ => return Err(invalid("`with` is not a mapping")),
                },
                _ => {}
            }
        }

        let kind = match (uses, run) {
            (Some(_), Some(_)) => return Err(invalid("step has both `uses` and `run`")),
            (None, None) => return Err(invalid("step has neither `uses` nor `run`")),
            (Some(action), None) if action.trim().is_empty() => {
                return Err(invalid("empty action reference"))
            }
            (Some(action), None) => StepKind::Uses(action),
            (None, Some(command)) => StepKind::Run(command),
        };

        Ok(Step {
            name,
            kind,
            with_args,
            raw_block: serde_yaml::to_string(value).unwrap_or_default(),
            fields,
        })
    }

    pub fn action_ref(&self) -> Option<&str> {
        match &self.kind {
            StepKind::Uses(a) => Some(a),
            StepKind::Run(_) => None,
        }
    }

    pub fn command(&self) -> Option<&str> {
        match &self.kind {
            StepKind::Run(c) => Some(c),
            StepKind::Uses(_) => None,
        }
    }

    /// All keys of the step in source order.
    pub fn fields(&self) -> &[(String, Node)] {
        &self.fields
    }

    pub fn canonical(&self) -> String {
        let mut out = String::new();
        self.render(&mut out);
        out
    }

    pub fn render(&self, out: &mut String) {
        Node::Map(self.fields.clone()).render(out);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
enum JobField {
    Steps,
    Other(String, Node),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub job_id: String,
    pub runs_on: Option<String>,
    pub container_image: Option<String>,
    pub steps: Vec<Step>,
    fields: Vec<JobField>,
}

impl Job {
    fn from_yaml(job_id: String, value: &Value) -> Result<Job, WorkflowError> {
        let invalid = |reason: &str| WorkflowError::InvalidJob {
            job: job_id.clone(),
            reason: reason.to_string(),
        };
        let Value::Mapping(map) = value else {
            return Err(invalid("job is not a mapping"));
        };

        let mut fields = Vec::with_capacity(map.len());
        let mut steps = Vec::new();
        let mut runs_on = None;
        let mut container_image = None;
        for (key, v) in map {
            let key = key_text(key);
            match key.as_str() {
                "steps" => {
                    match v {
                        Value::Sequence(items) => {
                            for (i, item) in items.iter().enumerate() {
                                steps.push(Step::from_yaml(&job_id, i + 1, item)?);
                            }
                        }
                        Value::Null => {}
                        _ => return Err(invalid("`steps` is not a list")),
                    }
                    fields.push(JobField::Steps);
                    continue;
                }
                "runs-on" => runs_on = Some(Node::from_yaml(v).to_text()),
                "container" => {
                    container_image = match Node::from_yaml(v) {
                        Node::Scalar(image) => Some(image),
                        Node::Map(entries) => entries
                            .iter()
                            .find(|(k, _)| k == "image")
                            .map(|(_, img)| img.to_text()),
                        _ => None,
                    }
                }
                _ => {}
            }
            fields.push(JobField::Other(key, Node::from_yaml(v)));
        }

        Ok(Job {
            job_id,
            runs_on,
            container_image,
            steps,
            fields,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
enum TopField {
    Jobs,
    Other(String, Node),
}

/// A parsed workflow plus its provenance.
///
/// Equality is structural: `raw_text` is not compared.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorkflowDoc {
    pub repo_id: String,
    pub path: String,
    pub triggers: Vec<String>,
    pub jobs: Vec<Job>,
    pub raw_text: String,
    fields: Vec<TopField>,
}

impl PartialEq for TopField {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (TopField::Jobs, TopField::Jobs) => true,
            (TopField::Other(a, x), TopField::Other(b, y)) => a == b && x == y,
            _ => false,
        }
    }
}

impl PartialEq for WorkflowDoc {
    fn eq(&self, other: &Self) -> bool {
        self.repo_id == other.repo_id
            && self.path == other.path
            && self.triggers == other.triggers
            && self.jobs == other.jobs
            && self.fields == other.fields
    }
}

impl WorkflowDoc {
    /// Value of the top-level `name` key, if any.
    pub fn name(&self) -> Option<String> {
        self.fields.iter().find_map(|f| match f {
            TopField::Other(k, v) if k == "name" => Some(v.to_text()),
            _ => None,
        })
    }

    pub fn step_count(&self) -> usize {
        self.jobs.iter().map(|j| j.steps.len()).sum()
    }

    pub fn job_index(&self, job_id: &str) -> Option<usize> {
        self.jobs.iter().position(|j| j.job_id == job_id)
    }
}

pub fn is_yaml_path(path: &str) -> bool {
    let lower = path.to_ascii_lowercase();
    lower.ends_with(".yml") || lower.ends_with(".yaml")
}

pub fn parse_workflow(text: &str, repo_id: &str, path: &str) -> Result<WorkflowDoc, WorkflowError> {
    if !is_yaml_path(path) {
        return Err(WorkflowError::InvalidPath(path.to_string()));
    }
    let root: Value = serde_yaml::from_str(text)?;
    let Value::Mapping(map) = &root else {
        return Err(WorkflowError::NotAWorkflow(
            "top level is not a mapping".to_string(),
        ));
    };

    let mut fields = Vec::with_capacity(map.len());
    let mut jobs = None;
    let mut triggers = Vec::new();
    for (key, value) in map {
        let key = key_text(key);
        match key.as_str() {
            "jobs" => {
                let Value::Mapping(job_map) = value else {
                    return Err(WorkflowError::NotAWorkflow(
                        "`jobs` is not a mapping".to_string(),
                    ));
                };
                let parsed = job_map
                    .iter()
                    .map(|(id, body)| Job::from_yaml(key_text(id), body))
                    .collect::<Result<Vec<_>, _>>()?;
                jobs = Some(parsed);
                fields.push(TopField::Jobs);
            }
            "on" => {
                let node = Node::from_yaml(value);
                triggers = match &node {
                    Node::Scalar(s) => vec![s.clone()],
                    Node::Seq(items) => items.iter().map(Node::to_text).collect(),
                    Node::Map(entries) => entries.iter().map(|(k, _)| k.clone()).collect(),
                    Node::Null => Vec::new(),
                };
                fields.push(TopField::Other(key, node));
            }
            _ => fields.push(TopField::Other(key, Node::from_yaml(value))),
        }
    }

    let jobs = match jobs {
        None => {
            return Err(WorkflowError::NotAWorkflow(
                "no top-level `jobs` mapping".to_string(),
            ))
        }
        Some(jobs) if jobs.is_empty() => {
            return Err(WorkflowError::NotAWorkflow("`jobs` is empty".to_string()))
        }
        Some(jobs) => jobs,
    };

    Ok(WorkflowDoc {
        repo_id: repo_id.to_string(),
        path: path.to_string(),
        triggers,
        jobs,
        raw_text: text.to_string(),
        fields,
    })
}

/// Canonical rendering of any YAML document (not only workflows), used for the
/// general-purpose YAML pre-training corpus.
pub fn canonicalize_yaml(text: &str) -> Result<String, WorkflowError> {
    let root: Value = serde_yaml::from_str(text)?;
    let mut out = String::new();
    Node::from_yaml(&root).render(&mut out);
    Ok(out)
}

pub fn canonicalize(doc: &WorkflowDoc) -> String {
    render_layout(doc, |_, _, step, out| step.render(out)).text
}

/// Byte offsets of one job inside a canonical rendering.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JobLayout {
    pub span: Range<usize>,
    /// Offset just past the `[` opening the steps list, if the job has a `steps` key.
    pub steps_open: Option<usize>,
    /// Offset of the `]` closing the steps list.
    pub steps_close: Option<usize>,
    pub steps: Vec<Range<usize>>,
}

/// A canonical rendering together with the positions of every job and step.
#[derive(Debug, Clone)]
pub struct CanonicalLayout {
    pub text: String,
    pub jobs: Vec<JobLayout>,
}

impl CanonicalLayout {
    /// Everything written before step `step` (0-based) of job `job`.
    ///
    /// `step == steps.len()` addresses the slot after the last step, so the
    /// returned text ends with the separator a new step would follow.
    pub fn prefix_before(&self, job: usize, step: usize) -> Option<String> {
        let layout = self.jobs.get(job)?;
        if let Some(range) = layout.steps.get(step) {
            return Some(self.text[..range.start].trim_end().to_string());
        }
        if step != layout.steps.len() {
            return None;
        }
        match layout.steps.last() {
            Some(last) => Some(format!("{},", &self.text[..last.end])),
            None => layout.steps_open.map(|open| self.text[..open].to_string()),
        }
    }

    pub fn step_text(&self, job: usize, step: usize) -> Option<&str> {
        let range = self.jobs.get(job)?.steps.get(step)?;
        Some(&self.text[range.clone()])
    }
}

/// Renders `doc` canonically, delegating each step's text to `render_step`
/// (called with job index, step index, the step and the output buffer).
pub fn render_layout<F>(doc: &WorkflowDoc, mut render_step: F) -> CanonicalLayout
where
    F: FnMut(usize, usize, &Step, &mut String),
{
    let mut out = String::new();
    let mut job_layouts = Vec::with_capacity(doc.jobs.len());

    out.push('{');
    for (i, field) in doc.fields.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        match field {
            TopField::Other(k, v) => {
                push_key(&mut out, k);
                v.render(&mut out);
            }
            TopField::Jobs => {
                push_key(&mut out, "jobs");
                out.push('{');
                for (j, job) in doc.jobs.iter().enumerate() {
                    if j > 0 {
                        out.push_str(", ");
                    }
                    push_key(&mut out, &job.job_id);
                    let layout = render_job(&mut out, j, job, &mut render_step);
                    job_layouts.push(layout);
                }
                out.push('}');
            }
        }
    }
    out.push('}');

    CanonicalLayout {
        text: out,
        jobs: job_layouts,
    }
}

fn render_job<F>(out: &mut String, j: usize, job: &Job, render_step: &mut F) -> JobLayout
where
    F: FnMut(usize, usize, &Step, &mut String),
{
    let start = out.len();
    let mut steps_open = None;
    let mut steps_close = None;
    let mut steps = Vec::with_capacity(job.steps.len());

    out.push('{');
    for (i, field) in job.fields.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        match field {
            JobField::Other(k, v) => {
                push_key(out, k);
                v.render(out);
            }
            JobField::Steps => {
                push_key(out, "steps");
                out.push('[');
                steps_open = Some(out.len());
                for (s, step) in job.steps.iter().enumerate() {
                    if s > 0 {
                        out.push_str(", ");
                    }
                    let step_start = out.len();
                    render_step(j, s, step, out);
                    steps.push(step_start..out.len());
                }
                steps_close = Some(out.len());
                out.push(']');
            }
        }
    }
    out.push('}');

    JobLayout {
        span: start..out.len(),
        steps_open,
        steps_close,
        steps,
    }
}
