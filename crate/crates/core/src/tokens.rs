//! Whitespace and structural tokenization of canonical workflow text.
//!
//! Outside string literals every `{ } [ ] : ,` and `"` is its own token.
//! Inside a string literal only whitespace separates tokens, so URLs and
//! `${{ ... }}` fragments survive intact, and the escaped newline `\n` is
//! emitted as a token of its own to keep script line boundaries visible.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::abstraction::PlaceholderCategory;

/// Token marking a line break inside a multi-line `run` script.
pub const NEWLINE_TOKEN: &str = "\\n";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub category: Option<PlaceholderCategory>,
}

impl Token {
    pub fn plain(text: impl Into<String>) -> Self {
        Token {
            text: text.into(),
            category: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SourceRef {
    pub repo_id: String,
    pub path: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenStream {
    pub tokens: Vec<Token>,
    pub source: Option<SourceRef>,
}

impl TokenStream {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn with_source(mut self, repo_id: &str, path: &str) -> Self {
        self.source = Some(SourceRef {
            repo_id: repo_id.to_string(),
            path: path.to_string(),
        });
        self
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.text.as_str())
    }

    /// Token texts joined by single spaces.
    pub fn joined(&self) -> String {
        let mut out = String::new();
        for (i, t) in self.tokens.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(&t.text);
        }
        out
    }
}

fn is_structural(c: char) -> bool {
    matches!(c, '{' | '}' | '[' | ']' | ':' | ',' | '"')
}

/// Byte ranges of every token in `text`.
pub fn token_spans(text: &str) -> Vec<Range<usize>> {
    let mut spans = Vec::new();
    let mut chars = text.char_indices().peekable();
    let mut in_string = false;

    while let Some(&(i, c)) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
            continue;
        }
        if in_string {
            if c == '"' {
                chars.next();
                spans.push(i..i + 1);
                in_string = false;
                continue;
            }
            if text[i..].starts_with(NEWLINE_TOKEN) {
                chars.next();
                chars.next();
                spans.push(i..i + 2);
                continue;
            }
            let start = i;
            let mut end = i;
            while let Some(&(j, d)) = chars.peek() {
                if d.is_whitespace() || d == '"' {
                    break;
                }
                if d == '\\' {
                    if text[j..].starts_with(NEWLINE_TOKEN) {
                        break;
                    }
                    chars.next();
                    end = j + 1;
                    // an escape consumes the following character as well
                    if let Some((k, e)) = chars.next() {
                        end = k + e.len_utf8();
                    }
                    continue;
                }
                chars.next();
                end = j + d.len_utf8();
            }
            spans.push(start..end);
        } else if is_structural(c) {
            chars.next();
            spans.push(i..i + 1);
            if c == '"' {
                in_string = true;
            }
        } else {
            let start = i;
            let mut end = i;
            while let Some(&(j, d)) = chars.peek() {
                if d.is_whitespace() || is_structural(d) {
                    break;
                }
                chars.next();
                end = j + d.len_utf8();
            }
            spans.push(start..end);
        }
    }
    spans
}

pub fn token_texts(text: &str) -> Vec<String> {
    token_spans(text)
        .into_iter()
        .map(|r| text[r].to_string())
        .collect()
}

pub fn count_tokens(text: &str) -> usize {
    token_spans(text).len()
}

pub fn tokenize(canonical: &str) -> TokenStream {
    TokenStream {
        tokens: token_spans(canonical)
            .into_iter()
            .map(|r| Token::plain(&canonical[r]))
            .collect(),
        source: None,
    }
}

/// Rebuilds canonical-looking text from tokens: `": "` and `", "` separators,
/// no padding inside brackets, single spaces between words of a string and
/// none around [`NEWLINE_TOKEN`].
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    let mut in_string = false;
    let mut prev: Option<&str> = None;

    for tok in tokens {
        let tok = tok.as_ref();
        if in_string {
            if tok == "\"" {
                in_string = false;
            } else if let Some(p) = prev {
                if p != "\"" && p != NEWLINE_TOKEN && tok != NEWLINE_TOKEN {
                    out.push(' ');
                }
            }
        } else {
            if matches!(prev, Some(":") | Some(",")) {
                out.push(' ');
            }
            if tok == "\"" {
                in_string = true;
            }
        }
        out.push_str(tok);
        prev = Some(tok);
    }
    out
}
