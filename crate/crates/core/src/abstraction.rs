//! Detection and replacement of context-specific tokens.
//!
//! Five categories are recognized. Rules are tried in ascending priority and
//! the first match wins:
//!
//! | priority | category        | placeholder  |
//! |----------|-----------------|--------------|
//! | 0        | action version  | `<PLH>`      |
//! | 1        | url             | `<URL>`      |
//! | 2        | file            | `<FILE>`     |
//! | 3        | version number  | `<VERSION>`  |
//! | 4        | path            | `<PATH>`     |
//!
//! For action versions only the suffix after `@` is replaced, so
//! `actions/checkout@v2` becomes `actions/checkout@<PLH>`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tokens::{token_spans, Token, TokenStream, NEWLINE_TOKEN};

/// Extension list shipped with the crate.
pub const DEFAULT_EXTENSIONS: &str = include_str!("../data/extensions.txt");

#[derive(Debug, Error)]
pub enum AbstractionError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("extension list line {line}: {reason}")]
    BadExtension { line: usize, reason: String },
    #[error("reading extension list: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PlaceholderCategory {
    Url,
    File,
    Path,
    VersionNumber,
    ActionVersion,
}

impl PlaceholderCategory {
    pub const ALL: [PlaceholderCategory; 5] = [
        PlaceholderCategory::Url,
        PlaceholderCategory::File,
        PlaceholderCategory::Path,
        PlaceholderCategory::VersionNumber,
        PlaceholderCategory::ActionVersion,
    ];

    pub fn placeholder(self) -> &'static str {
        match self {
            PlaceholderCategory::Url => "<URL>",
            PlaceholderCategory::File => "<FILE>",
            PlaceholderCategory::Path => "<PATH>",
            PlaceholderCategory::VersionNumber => "<VERSION>",
            PlaceholderCategory::ActionVersion => "<PLH>",
        }
    }

    pub fn from_placeholder(text: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.placeholder() == text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbstractionRule {
    pub category: PlaceholderCategory,
    pub matcher: String,
    pub priority: u8,
}

/// Known file extensions, lowercase and without the leading dot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtensionList {
    pub version: Option<String>,
    extensions: HashSet<String>,
}

impl ExtensionList {
    /// Parses one extension per line. Blank lines and `#` comments are
    /// skipped; a `# version: X` comment sets the list version.
    pub fn parse(text: &str) -> Result<Self, AbstractionError> {
        let mut version = None;
        let mut extensions = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                if let Some(v) = comment.trim().strip_prefix("version:") {
                    version = Some(v.trim().to_string());
                }
                continue;
            }
            let bad = |reason: &str| AbstractionError::BadExtension {
                line: i + 1,
                reason: reason.to_string(),
            };
            if line.starts_with('.') {
                return Err(bad("leading dot"));
            }
            if line.chars().any(|c| c.is_ascii_uppercase()) {
                return Err(bad("extension must be lowercase"));
            }
            if line.chars().any(|c| c.is_whitespace() || c == '/') {
                return Err(bad("extension contains whitespace or '/'"));
            }
            extensions.insert(line.to_string());
        }
        Ok(ExtensionList {
            version,
            extensions,
        })
    }

    pub fn load(path: &Path) -> Result<Self, AbstractionError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn contains(&self, ext: &str) -> bool {
        self.extensions.contains(&ext.to_ascii_lowercase())
    }

    pub fn len(&self) -> usize {
        self.extensions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.extensions.is_empty()
    }
}

impl Default for ExtensionList {
    fn default() -> Self {
        Self::parse(DEFAULT_EXTENSIONS).expect("bundled extension list is valid")
    }
}

/// Snapshot of the active rule set, written next to abstracted corpora.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RuleSetReport {
    pub rules: Vec<AbstractionRule>,
    pub placeholders: BTreeMap<PlaceholderCategory, String>,
    pub extension_list_version: Option<String>,
    pub extension_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub total_single_occurrence: usize,
    pub per_category_counts: BTreeMap<PlaceholderCategory, usize>,
    pub abstracted_fraction: f64,
}

const ACTION_PATTERN: &str = r"^([A-Za-z0-9_.\-]+/[A-Za-z0-9_.\-/]+)@([A-Za-z0-9_.\-/]+)$";
const URL_SCHEME_PATTERN: &str = r"^(?:[^\s=]*=)?[A-Za-z][A-Za-z0-9+.\-]*://\S+";
const URL_WWW_PATTERN: &str = r"^(?i:www)\.[A-Za-z0-9\-]+\.\S+";
const URL_IP_PATTERN: &str = r"^\d{1,3}(?:\.\d{1,3}){3}(?::\d+)?(?:/\S*)?$";
const VERSION_PATTERN: &str = r"^[vV]?\d+(?:\.(?:\d+|x|\*))+(?:[-+][0-9A-Za-z.\-]+)?$|^[vV]\d+$";

pub struct Abstractor {
    extensions: ExtensionList,
    action: Regex,
    url_scheme: Regex,
    url_www: Regex,
    url_ip: Regex,
    version: Regex,
}

impl Default for Abstractor {
    fn default() -> Self {
        Self::new(ExtensionList::default())
    }
}

impl Abstractor {
    pub fn new(extensions: ExtensionList) -> Self {
        let re = |p: &str| Regex::new(p).expect("static pattern");
        Abstractor {
            extensions,
            action: re(ACTION_PATTERN),
            url_scheme: re(URL_SCHEME_PATTERN),
            url_www: re(URL_WWW_PATTERN),
            url_ip: re(URL_IP_PATTERN),
            version: re(VERSION_PATTERN),
        }
    }

    pub fn extensions(&self) -> &ExtensionList {
        &self.extensions
    }

    pub fn rules(&self) -> Vec<AbstractionRule> {
        let rule = |category, priority, matcher: &str| AbstractionRule {
            category,
            matcher: matcher.to_string(),
            priority,
        };
        vec![
            rule(
                PlaceholderCategory::ActionVersion,
                0,
                &format!("owner/name@ref action reference, ref replaced: {ACTION_PATTERN}"),
            ),
            rule(
                PlaceholderCategory::Url,
                1,
                &format!("{URL_SCHEME_PATTERN} | {URL_WWW_PATTERN} | {URL_IP_PATTERN}"),
            ),
            rule(
                PlaceholderCategory::File,
                2,
                "last '/'-separated segment ends in .<ext> with <ext> in the extension list",
            ),
            rule(PlaceholderCategory::VersionNumber, 3, VERSION_PATTERN),
            rule(
                PlaceholderCategory::Path,
                4,
                "contains '/' (incl. ./, ~/, / prefixes) and at least one alphanumeric character",
            ),
        ]
    }

    pub fn rule_report(&self) -> RuleSetReport {
        RuleSetReport {
            rules: self.rules(),
            placeholders: PlaceholderCategory::ALL
                .into_iter()
                .map(|c| (c, c.placeholder().to_string()))
                .collect(),
            extension_list_version: self.extensions.version.clone(),
            extension_count: self.extensions.len(),
        }
    }

    pub fn classify_token(&self, token: &str) -> Option<PlaceholderCategory> {
        self.abstract_token(token).map(|(_, c)| c)
    }

    /// Category of `token` and its abstracted form, or `None` for ordinary tokens.
    pub fn abstract_token(&self, token: &str) -> Option<(String, PlaceholderCategory)> {
        if token.is_empty() || token == NEWLINE_TOKEN || token.chars().count() == 1 {
            return None;
        }
        if contains_placeholder(token) {
            return None;
        }
        if let Some(caps) = self.action.captures(token) {
            let action = caps.get(1).map_or("", |m| m.as_str());
            let abstracted = format!(
                "{action}@{}",
                PlaceholderCategory::ActionVersion.placeholder()
            );
            return Some((abstracted, PlaceholderCategory::ActionVersion));
        }
        let whole = |c: PlaceholderCategory| Some((c.placeholder().to_string(), c));
        if self.url_scheme.is_match(token)
            || self.url_www.is_match(token)
            || self.url_ip.is_match(token)
        {
            return whole(PlaceholderCategory::Url);
        }
        if self.has_known_extension(token) {
            return whole(PlaceholderCategory::File);
        }
        if self.version.is_match(token) {
            return whole(PlaceholderCategory::VersionNumber);
        }
        if token.contains('/') && token.chars().any(|c| c.is_ascii_alphanumeric()) {
            return whole(PlaceholderCategory::Path);
        }
        None
    }

    fn has_known_extension(&self, token: &str) -> bool {
        let segment = token.rsplit('/').next().unwrap_or(token);
        let segment = segment.trim_end_matches([';', ',', ')', '\'', '`']);
        let Some(dot) = segment.rfind('.') else {
            return false;
        };
        let ext = &segment[dot + 1..];
        !ext.is_empty() && self.extensions.contains(ext)
    }

    /// Replaces every classifiable token by its placeholder. Output has the
    /// same length as the input; already-tagged tokens keep their category.
    pub fn abstract_stream(&self, stream: &TokenStream) -> TokenStream {
        let tokens = stream
            .tokens
            .iter()
            .map(|tok| match self.abstract_token(&tok.text) {
                Some((text, category)) => Token {
                    text,
                    category: Some(category),
                },
                None => tok.clone(),
            })
            .collect();
        TokenStream {
            tokens,
            source: stream.source.clone(),
        }
    }

    /// Abstracts tokens in place inside `text`, keeping its layout.
    pub fn abstract_text(&self, text: &str) -> String {
        let mut out = String::with_capacity(text.len());
        let mut last = 0;
        for span in token_spans(text) {
            if let Some((replacement, _)) = self.abstract_token(&text[span.clone()]) {
                out.push_str(&text[last..span.start]);
                out.push_str(&replacement);
                last = span.end;
            }
        }
        out.push_str(&text[last..]);
        out
    }

    /// Census of tokens that occur exactly once across `corpus`.
    pub fn abstraction_stats(
        &self,
        corpus: &[TokenStream],
    ) -> Result<CoverageReport, AbstractionError> {
        if corpus.is_empty() {
            return Err(AbstractionError::EmptyCorpus);
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for stream in corpus {
            for tok in &stream.tokens {
                *counts.entry(tok.text.as_str()).or_default() += 1;
            }
        }

        let mut per_category: BTreeMap<PlaceholderCategory, usize> = PlaceholderCategory::ALL
            .into_iter()
            .map(|c| (c, 0))
            .collect();
        let mut total = 0;
        for (text, n) in counts {
            if n != 1 {
                continue;
            }
            total += 1;
            if let Some(c) = self.classify_token(text) {
                *per_category.entry(c).or_default() += 1;
            }
        }
        let abstracted: usize = per_category.values().sum();
        let abstracted_fraction = if total == 0 {
            1.0
        } else {
            abstracted as f64 / total as f64
        };
        Ok(CoverageReport {
            total_single_occurrence: total,
            per_category_counts: per_category,
            abstracted_fraction,
        })
    }
}

fn contains_placeholder(token: &str) -> bool {
    PlaceholderCategory::ALL
        .iter()
        .any(|c| token.contains(c.placeholder()))
}

/// Abstractor over the bundled extension list, built on first use.
pub fn shared_abstractor() -> &'static Abstractor {
    static DEFAULT: OnceLock<Abstractor> = OnceLock::new();
    DEFAULT.get_or_init(Abstractor::default)
}

/// [`Abstractor::classify_token`] with the bundled extension list.
pub fn classify_token(token: &str) -> Option<PlaceholderCategory> {
    shared_abstractor().classify_token(token)
}

/// [`Abstractor::abstract_stream`] with the bundled extension list.
pub fn abstract_stream(stream: &TokenStream) -> TokenStream {
    shared_abstractor().abstract_stream(stream)
}

/// [`Abstractor::abstract_text`] with the bundled extension list.
pub fn abstract_text(text: &str) -> String {
    shared_abstractor().abstract_text(text)
}

/// [`Abstractor::abstraction_stats`] with the bundled extension list.
pub fn abstraction_stats(corpus: &[TokenStream]) -> Result<CoverageReport, AbstractionError> {
    shared_abstractor().abstraction_stats(corpus)
}
