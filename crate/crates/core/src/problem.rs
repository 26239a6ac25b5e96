//! Benchmark items and their JSONL ingestion format.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: duplicate problem_id {id:?}")]
    Duplicate { line: usize, id: String },
    #[error("line {line}: empty problem_id")]
    EmptyId { line: usize },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextDoc {
    pub name: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Table {
    #[serde(default)]
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    /// Pipe-separated rendering used in prompts.
    pub fn render(&self) -> String {
        let mut out = String::new();
        if !self.header.is_empty() {
            out.push_str(&self.header.join(" | "));
            out.push('\n');
        }
        for row in &self.rows {
            out.push_str(&row.join(" | "));
            out.push('\n');
        }
        out
    }
}

/// Reference answer; the kind decides which scorer applies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GoldAnswer {
    ExactString { value: String },
    Integer { value: i64 },
    Numeric {
        value: f64,
        #[serde(default)]
        rel_tol: Option<f64>,
    },
    TokenSet { values: Vec<String> },
    ActionSequence { actions: Vec<String> },
    NoneStructural,
}

impl GoldAnswer {
    pub fn kind_name(&self) -> &'static str {
        match self {
            GoldAnswer::ExactString { .. } => "exact_string",
            GoldAnswer::Integer { .. } => "integer",
            GoldAnswer::Numeric { .. } => "numeric",
            GoldAnswer::TokenSet { .. } => "token_set",
            GoldAnswer::ActionSequence { .. } => "action_sequence",
            GoldAnswer::NoneStructural => "none_structural",
        }
    }

    /// Structural golds carry no correctness signal.
    pub fn has_correctness(&self) -> bool {
        !matches!(self, GoldAnswer::NoneStructural)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemInstance {
    pub problem_id: String,
    /// Dataset label. Metadata only: routing never reads it.
    #[serde(rename = "domain", default)]
    pub domain_label: String,
    #[serde(default)]
    pub instruction: String,
    #[serde(default)]
    pub context: Vec<ContextDoc>,
    pub gold: GoldAnswer,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table_blocks: Option<Vec<Table>>,
}

impl ProblemInstance {
    pub fn new(id: impl Into<String>, instruction: impl Into<String>) -> Self {
        Self {
            problem_id: id.into(),
            domain_label: String::new(),
            instruction: instruction.into(),
            context: Vec::new(),
            gold: GoldAnswer::NoneStructural,
            table_blocks: None,
        }
    }

    pub fn with_doc(mut self, name: impl Into<String>, text: impl Into<String>) -> Self {
        self.context.push(ContextDoc {
            name: name.into(),
            text: text.into(),
        });
        self
    }

    pub fn with_gold(mut self, gold: GoldAnswer) -> Self {
        self.gold = gold;
        self
    }

    pub fn with_domain(mut self, domain: impl Into<String>) -> Self {
        self.domain_label = domain.into();
        self
    }

    /// All context documents joined, each under a `[name]` header.
    pub fn context_text(&self) -> String {
        let mut out = String::new();
        for doc in &self.context {
            if !out.is_empty() {
                out.push_str("\n\n");
            }
            out.push_str(&format!("[{}]\n{}", doc.name, doc.text));
        }
        out
    }

    /// Pre-parsed tables rendered as text, or empty.
    pub fn tables_text(&self) -> String {
        self.table_blocks
            .iter()
            .flatten()
            .map(Table::render)
            .collect::<Vec<_>>()
            .join("\n")
    }
}

pub fn parse_problems(text: &str) -> Result<Vec<ProblemInstance>, IngestError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let p: ProblemInstance = serde_json::from_str(line).map_err(|e| IngestError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        if p.problem_id.trim().is_empty() {
            return Err(IngestError::EmptyId { line: line_no });
        }
        if !seen.insert(p.problem_id.clone()) {
            return Err(IngestError::Duplicate {
                line: line_no,
                id: p.problem_id,
            });
        }
        out.push(p);
    }
    Ok(out)
}

pub fn load_problems(path: &Path) -> Result<Vec<ProblemInstance>, IngestError> {
    parse_problems(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_jsonl_line() {
        let line = r#"{"problem_id":"aime-1","domain":"aime","instruction":"Find N mod 1000.","context":[{"name":"q","text":"..."}],"gold":{"kind":"integer","value":392}}"#;
        let ps = parse_problems(line).unwrap();
        assert_eq!(ps[0].domain_label, "aime");
        assert_eq!(ps[0].gold, GoldAnswer::Integer { value: 392 });
    }

    #[test]
    fn rejects_duplicates_and_empty_ids() {
        let dup = "{\"problem_id\":\"a\",\"gold\":{\"kind\":\"none_structural\"}}\n{\"problem_id\":\"a\",\"gold\":{\"kind\":\"none_structural\"}}";
        assert!(matches!(parse_problems(dup), Err(IngestError::Duplicate { line: 2, .. })));
        let empty = "{\"problem_id\":\" \",\"gold\":{\"kind\":\"none_structural\"}}";
        assert!(matches!(parse_problems(empty), Err(IngestError::EmptyId { .. })));
    }
}
