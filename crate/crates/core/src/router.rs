//! Problem-intrinsic shape classification and shape -> tool dispatch.
//!
//! The classifier reads only the instruction and context text. It never looks
//! at the dataset label or the gold answer.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::gateway::{Backend, GatewayError, Session};
use crate::problem::ProblemInstance;
use crate::tools::{FinishReason, SolveOutcome, ToolError, Toolbox};
use crate::trace::EventKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Shape {
    Symbolic,
    Tabular,
    Logical,
    Evidence,
    Procedural,
    Artifact,
    Fallback,
}

impl Shape {
    pub const ALL: [Shape; 7] = [
        Shape::Symbolic,
        Shape::Tabular,
        Shape::Logical,
        Shape::Evidence,
        Shape::Procedural,
        Shape::Artifact,
        Shape::Fallback,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Shape::Symbolic => "SYMBOLIC",
            Shape::Tabular => "TABULAR",
            Shape::Logical => "LOGICAL",
            Shape::Evidence => "EVIDENCE",
            Shape::Procedural => "PROCEDURAL",
            Shape::Artifact => "ARTIFACT",
            Shape::Fallback => "FALLBACK",
        }
    }

    /// Tool registered for this shape in the full layer.
    pub fn default_tool(self) -> &'static str {
        match self {
            Shape::Symbolic => "python_symbolic",
            Shape::Tabular => "python_tabular",
            Shape::Logical => "forward_chain",
            Shape::Evidence => "retrieval_grounded",
            Shape::Procedural => "alfred_state_tracker",
            Shape::Artifact => "diff_verifier",
            Shape::Fallback => "direct_cot_sc",
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Shape {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Shape::ALL
            .into_iter()
            .find(|sh| sh.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown shape {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub has_diff_scaffold: bool,
    pub requests_patch: bool,
    pub has_code_context: bool,
    pub action_verb_count: u32,
    pub has_rule_sentences: bool,
    pub has_tfu_query: bool,
    pub table_score: u32,
    pub doc_token_count: u32,
    pub math_density: f64,
    pub requests_integer_answer: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    pub evidence_doc_tokens: u32,
    pub procedural_verbs: u32,
    pub tabular_score: u32,
    pub symbolic_math_density: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            evidence_doc_tokens: 1500,
            procedural_verbs: 3,
            tabular_score: 2,
            symbolic_math_density: 0.05,
        }
    }
}

pub const DEFAULT_VERB_LEXICON: &str = include_str!("../data/action_verbs.txt");

pub fn parse_lexicon(text: &str) -> HashSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect()
}

fn regex(cell: &'static OnceLock<Regex>, pat: &str) -> &'static Regex {
    cell.get_or_init(|| Regex::new(pat).expect("static regex"))
}

const CODE_EXTENSIONS: [&str; 14] = [
    ".py", ".js", ".ts", ".java", ".c", ".cpp", ".h", ".go", ".rs", ".rb", ".php", ".cs", ".jsx", ".tsx",
];

fn is_number(cell: &str) -> bool {
    let c = cell
        .trim()
        .trim_start_matches(['$', '(', '-', '+'])
        .trim_end_matches(['%', ')'])
        .replace(',', "");
    !c.is_empty() && c.parse::<f64>().is_ok()
}

fn numeric_columns(rows: &[Vec<&str>]) -> u32 {
    let width = rows.iter().map(Vec::len).max().unwrap_or(0);
    let mut n = 0;
    for col in 0..width {
        let cells: Vec<&str> = rows.iter().filter_map(|r| r.get(col).copied()).collect();
        let numeric = cells.iter().filter(|c| is_number(c)).count();
        // A header cell may be non-numeric; everything else must be a number.
        if numeric >= 2 && cells.len() - numeric <= 1 {
            n += 1;
        }
    }
    n
}

/// Largest number of numeric columns in any aligned block of `|` or tab
/// separated rows.
fn text_table_score(text: &str) -> u32 {
    let mut best = 0;
    let mut block: Vec<Vec<&str>> = Vec::new();
    let mut flush = |block: &mut Vec<Vec<&str>>| {
        if block.len() >= 2 {
            best = best.max(numeric_columns(block));
        }
        block.clear();
    };
    for line in text.lines() {
        let sep = if line.contains('|') {
            '|'
        } else if line.contains('\t') {
            '\t'
        } else {
            flush(&mut block);
            continue;
        };
        let cells: Vec<&str> = line
            .trim()
            .trim_matches('|')
            .split(sep)
            .map(str::trim)
            .collect();
        if cells.iter().all(|c| c.chars().all(|ch| ch == '-' || ch == ':' || ch == ' ')) {
            continue;
        }
        if cells.len() < 2 || block.last().is_some_and(|prev| prev.len() != cells.len()) {
            flush(&mut block);
        }
        if cells.len() >= 2 {
            block.push(cells);
        }
    }
    flush(&mut block);
    best
}

fn is_math_token(tok: &str) -> bool {
    tok == "-"
        || tok.chars().any(|c| {
            c.is_ascii_digit()
                || matches!(
                    c,
                    '+' | '*' | '/' | '^' | '=' | '<' | '>' | '\\' | '$' | '_' | '{' | '}' | '√' | 'π'
                        | '∑' | '∏' | '≤' | '≥' | '≠' | '·' | '×' | '÷'
                )
        })
}

/// Deterministic shape classifier.
#[derive(Debug, Clone)]
pub struct Classifier {
    pub thresholds: Thresholds,
    lexicon: HashSet<String>,
}

impl Default for Classifier {
    fn default() -> Self {
        Self::new(Thresholds::default(), parse_lexicon(DEFAULT_VERB_LEXICON))
    }
}

impl Classifier {
    pub fn new(thresholds: Thresholds, lexicon: HashSet<String>) -> Self {
        Self { thresholds, lexicon }
    }

    pub fn lexicon(&self) -> &HashSet<String> {
        &self.lexicon
    }

    pub fn features(&self, p: &ProblemInstance) -> FeatureVector {
        static DIFF: OnceLock<Regex> = OnceLock::new();
        static PATCH: OnceLock<Regex> = OnceLock::new();
        static CODE: OnceLock<Regex> = OnceLock::new();
        static IF_THEN: OnceLock<Regex> = OnceLock::new();
        static TFU: OnceLock<Regex> = OnceLock::new();
        static INTEGER: OnceLock<Regex> = OnceLock::new();

        let diff = regex(&DIFF, r"(?m)^(diff --git |--- a/|\+\+\+ b/|@@ -\d+(,\d+)? \+\d+(,\d+)? @@)");
        let patch = regex(
            &PATCH,
            r"(?i)\b(patch|unified diff|diff|fix (the|this) (bug|issue)|resolve (the|this) issue)\b",
        );
        let code = regex(
            &CODE,
            r"(?m)^\s*(def |class \w+|import \w|from [\w.]+ import|function \w|#include|public (static )?\w)",
        );
        let if_then = regex(&IF_THEN, r"(?i)\bif\b[^.?!\n]*\bthen\b|\ball\s+\w+\s+(things|people)\s+are\b");
        let tfu = regex(&TFU, r"(?i)\btrue\s*(,|/|or)\s*false\b");
        let integer = regex(
            &INTEGER,
            r"(?i)(\binteger\b|\bwhole number\b|\bremainder\b|\bmod(ulo)?\s+\d+|\\pmod|\bhow many\b|\b0\s*(to|through|-|–)\s*999\b|\bbetween 0 and 999\b|\bfind the (least|greatest|smallest|largest) (positive )?(integer|number|value)\b)",
        );

        let ctx = p.context_text();
        let tables = p.tables_text();
        let all_text = format!("{}\n{}", p.instruction, ctx);

        let has_diff_scaffold = diff.is_match(&all_text);
        let requests_patch = patch.is_match(&p.instruction);
        let has_code_context = code.is_match(&ctx)
            || p.context
                .iter()
                .any(|d| CODE_EXTENSIONS.iter().any(|e| d.name.to_lowercase().ends_with(e)));

        let action_verb_count = p
            .instruction
            .split(|c: char| !c.is_alphabetic())
            .filter(|w| !w.is_empty() && self.lexicon.contains(&w.to_lowercase()))
            .count() as u32;

        let table_score = {
            let block_score = p
                .table_blocks
                .iter()
                .flatten()
                .map(|t| {
                    let rows: Vec<Vec<&str>> = std::iter::once(&t.header)
                        .filter(|h| !h.is_empty())
                        .chain(&t.rows)
                        .map(|r| r.iter().map(String::as_str).collect())
                        .collect();
                    numeric_columns(&rows)
                })
                .max()
                .unwrap_or(0);
            block_score.max(text_table_score(&ctx)).max(text_table_score(&tables))
        };

        let doc_token_count = p.context.iter().map(|d| d.text.split_whitespace().count()).sum::<usize>() as u32;
        let tokens: Vec<&str> = all_text.split_whitespace().collect();
        let math_density = if tokens.is_empty() {
            0.0
        } else {
            tokens.iter().filter(|t| is_math_token(t)).count() as f64 / tokens.len() as f64
        };

        FeatureVector {
            has_diff_scaffold,
            requests_patch,
            has_code_context,
            action_verb_count,
            has_rule_sentences: if_then.is_match(&ctx),
            has_tfu_query: tfu.is_match(&all_text),
            table_score,
            doc_token_count,
            math_density,
            requests_integer_answer: integer.is_match(&p.instruction),
        }
    }

    /// First matching rule in the fixed precedence order.
    pub fn shape_of(&self, f: &FeatureVector) -> Shape {
        let t = &self.thresholds;
        if f.has_diff_scaffold || (f.requests_patch && f.has_code_context) {
            Shape::Artifact
        } else if f.action_verb_count >= t.procedural_verbs {
            Shape::Procedural
        } else if f.has_rule_sentences && f.has_tfu_query {
            Shape::Logical
        } else if f.table_score >= t.tabular_score {
            Shape::Tabular
        } else if f.doc_token_count > t.evidence_doc_tokens {
            Shape::Evidence
        } else if f.math_density >= t.symbolic_math_density && f.requests_integer_answer {
            Shape::Symbolic
        } else {
            Shape::Fallback
        }
    }

    pub fn classify(&self, p: &ProblemInstance) -> Shape {
        self.shape_of(&self.features(p))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    /// Five general tools; procedural and artifact problems go to the fallback.
    #[serde(alias = "core", alias = "no_domain_tools")]
    NoDomainTools,
    #[default]
    Full,
}

impl FromStr for Layer {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "full" => Ok(Layer::Full),
            "core" | "no_domain_tools" | "no-domain-tools" => Ok(Layer::NoDomainTools),
            other => Err(format!("unknown layer {other:?} (expected full or core)")),
        }
    }
}

/// Configuration-time map from shape to tool name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolRegistry {
    layer: Layer,
    rows: BTreeMap<Shape, String>,
}

impl ToolRegistry {
    pub fn new(layer: Layer) -> Self {
        Self::with_overrides(layer, &BTreeMap::new())
    }

    /// Default rows with `overrides` applied. The layer rule is applied last,
    /// so the no-domain-tools layer always routes PROCEDURAL and ARTIFACT to
    /// the fallback tool.
    pub fn with_overrides(layer: Layer, overrides: &BTreeMap<Shape, String>) -> Self {
        let mut rows: BTreeMap<Shape, String> = Shape::ALL
            .into_iter()
            .map(|s| (s, overrides.get(&s).cloned().unwrap_or_else(|| s.default_tool().to_string())))
            .collect();
        if layer == Layer::NoDomainTools {
            let fb = rows[&Shape::Fallback].clone();
            rows.insert(Shape::Procedural, fb.clone());
            rows.insert(Shape::Artifact, fb);
        }
        Self { layer, rows }
    }

    pub fn layer(&self) -> Layer {
        self.layer
    }

    pub fn tool_for(&self, shape: Shape) -> &str {
        &self.rows[&shape]
    }

    pub fn fallback_tool(&self) -> &str {
        self.tool_for(Shape::Fallback)
    }

    pub fn rows(&self) -> &BTreeMap<Shape, String> {
        &self.rows
    }
}

/// Classifier plus registry: everything dispatch needs besides the tools.
#[derive(Debug, Clone)]
pub struct Router {
    pub classifier: Classifier,
    pub registry: ToolRegistry,
}

impl Router {
    pub fn new(classifier: Classifier, registry: ToolRegistry) -> Self {
        Self { classifier, registry }
    }

    pub fn with_layer(layer: Layer) -> Self {
        Self::new(Classifier::default(), ToolRegistry::new(layer))
    }
}

fn internal(err: ToolError) -> Result<String, GatewayError> {
    match err {
        ToolError::Backend(e) => match e {
            GatewayError::InvalidParams(m) => Ok(m),
            other => Err(other),
        },
        ToolError::Internal(m) => Ok(m),
    }
}

/// Classifies `p`, runs its tool, and falls back once on a null answer.
///
/// Tool-internal failures become null answers. Backend failures propagate.
pub fn dispatch(
    p: &ProblemInstance,
    router: &Router,
    tools: &Toolbox,
    backend: &dyn Backend,
) -> Result<SolveOutcome, GatewayError> {
    let mut session = Session::new(backend);
    let features = router.classifier.features(p);
    let shape = router.classifier.shape_of(&features);
    session.event_with(
        EventKind::Shape,
        shape.as_str(),
        serde_json::to_value(&features).unwrap_or_default(),
    );
    let primary = router.registry.tool_for(shape).to_string();
    let fallback = router.registry.fallback_tool().to_string();
    session.event(EventKind::Tool, primary.clone());

    let mut out = match tools.get(&primary) {
        Some(tool) => match tool.solve(p, &mut session) {
            Ok(o) => o,
            Err(e) => {
                let msg = internal(e)?;
                session.event(EventKind::Note, format!("{primary} failed: {msg}"));
                crate::tools::ToolOutput::null(1, 0)
            }
        },
        None => {
            session.event(EventKind::Note, format!("no tool registered under {primary:?}"));
            crate::tools::ToolOutput::null(0, 0)
        }
    };
    let mut tool_name = primary.clone();

    if out.answer.is_none() && primary != fallback {
        session.event_with(EventKind::Fallback, fallback.clone(), json!({"from": primary}));
        let tool = tools
            .get(&fallback)
            .ok_or_else(|| GatewayError::NotConfigured(format!("fallback tool {fallback:?} missing")))?;
        let fb = match tool.solve(p, &mut session) {
            Ok(o) => o,
            Err(e) => {
                let msg = internal(e)?;
                session.event(EventKind::Note, format!("{fallback} failed: {msg}"));
                crate::tools::ToolOutput::null(1, 0)
            }
        };
        out = crate::tools::ToolOutput {
            finish_reason: if fb.answer.is_some() {
                FinishReason::Fallback
            } else {
                FinishReason::NullAnswer
            },
            answer: fb.answer,
            n_steps: out.n_steps + fb.n_steps,
            n_retries: out.n_retries + fb.n_retries,
        };
        tool_name = fallback;
    }
    if let Some(a) = &out.answer {
        session.event(EventKind::FinalAnswer, a.clone());
    }
    Ok(SolveOutcome::from_session(out, session, Some(shape), tool_name))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn classify(p: &ProblemInstance) -> Shape {
        Classifier::default().classify(p)
    }

    #[test]
    fn diff_request_features() {
        let p = ProblemInstance::new("s", "Fix the bug; emit a unified diff")
            .with_doc("repo", "diff --git a/x.py b/x.py\n");
        let f = Classifier::default().features(&p);
        assert!(f.has_diff_scaffold && f.requests_patch);
        assert_eq!(classify(&p), Shape::Artifact);
    }

    #[test]
    fn rule_query_features() {
        let p = ProblemInstance::new("l", "Is the statement true? True, False, or Unknown?")
            .with_doc("theory", "If the cat is red then the cat is big.");
        let f = Classifier::default().features(&p);
        assert!(f.has_rule_sentences && f.has_tfu_query);
        assert_eq!(classify(&p), Shape::Logical);
    }

    #[test]
    fn empty_problem_is_all_zero() {
        let p = ProblemInstance::new("e", "");
        let f = Classifier::default().features(&p);
        assert_eq!(
            f,
            FeatureVector {
                has_diff_scaffold: false,
                requests_patch: false,
                has_code_context: false,
                action_verb_count: 0,
                has_rule_sentences: false,
                has_tfu_query: false,
                table_score: 0,
                doc_token_count: 0,
                math_density: 0.0,
                requests_integer_answer: false,
            }
        );
        assert_eq!(classify(&p), Shape::Fallback);
    }

    #[test]
    fn aime_style_is_symbolic() {
        let p = ProblemInstance::new(
            "a",
            "Let S be the set of all rational numbers r with 0 < r < 1 that have a repeating decimal expansion 0.abcdabcd... Let N be the number of distinct numerators. Find the remainder when N is divided by 1000.",
        );
        assert_eq!(classify(&p), Shape::Symbolic);
    }

    #[test]
    fn table_is_tabular() {
        let p = ProblemInstance::new("t", "What is the total revenue?")
            .with_doc("table", "year | revenue | cost\n2019 | 100 | 40\n2020 | 120 | 50\n");
        assert_eq!(classify(&p), Shape::Tabular);
    }

    #[test]
    fn household_task_is_procedural() {
        let p = ProblemInstance::new("p", "Pick up the apple, clean it in the sink, then put it in the fridge.");
        assert_eq!(classify(&p), Shape::Procedural);
    }

    #[test]
    fn long_document_is_evidence() {
        let paper = "word ".repeat(1600);
        let p = ProblemInstance::new("q", "Which dataset do the authors use?").with_doc("paper", paper);
        assert_eq!(classify(&p), Shape::Evidence);
    }

    #[test]
    fn short_question_is_fallback() {
        assert_eq!(classify(&ProblemInstance::new("f", "Who wrote Hamlet?")), Shape::Fallback);
    }

    #[test]
    fn layers_differ_in_two_rows() {
        let full = ToolRegistry::new(Layer::Full);
        let core = ToolRegistry::new(Layer::NoDomainTools);
        let differing: Vec<Shape> = Shape::ALL
            .into_iter()
            .filter(|s| full.tool_for(*s) != core.tool_for(*s))
            .collect();
        assert_eq!(differing, [Shape::Procedural, Shape::Artifact]);
        assert_eq!(core.tool_for(Shape::Artifact), "direct_cot_sc");
    }

    #[test]
    fn shape_names_roundtrip() {
        for s in Shape::ALL {
            assert_eq!(s.as_str().parse::<Shape>().unwrap(), s);
        }
    }
}
