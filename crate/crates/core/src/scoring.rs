//! Per-domain scorers, the tiered structural patch scorer and Wilson intervals.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::engines::diff::validate_diff;
use crate::engines::fence::strip_fence;
use crate::engines::vote::normalize_answer;
use crate::engines::world::{parse_plan, Action};
use crate::problem::GoldAnswer;

#[derive(Debug, Error, PartialEq)]
pub enum ScoreError {
    #[error("scorer {scorer} cannot score gold of kind {kind}")]
    KindMismatch { scorer: &'static str, kind: &'static str },
    #[error("domain error: {0}")]
    Domain(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub value: f64,
    pub detail: serde_json::Value,
}

impl Score {
    fn new(value: f64, detail: serde_json::Value) -> Self {
        Self { value, detail }
    }

    fn binary(ok: bool, detail: serde_json::Value) -> Self {
        Self::new(if ok { 1.0 } else { 0.0 }, detail)
    }
}

/// Default FinQA band.
pub const DEFAULT_REL_TOL: f64 = 0.01;
pub const CLOSE_REL_TOL: f64 = 0.05;

/// Parses a number, tolerating currency symbols, thousands separators, a
/// percent suffix and surrounding whitespace.
pub fn parse_number(text: &str) -> Option<f64> {
    let mut s = text.trim().trim_end_matches('.').replace([',', ' '], "");
    for sym in ["$", "€", "£", "¥"] {
        s = s.replace(sym, "");
    }
    let s = s.strip_suffix('%').unwrap_or(&s);
    let v: f64 = s.parse().ok()?;
    v.is_finite().then_some(v)
}

pub fn score_exact(answer: &str, gold: &GoldAnswer) -> Result<Score, ScoreError> {
    match gold {
        GoldAnswer::ExactString { value } => {
            let ok = normalize_answer(answer) == normalize_answer(value);
            Ok(Score::binary(ok, json!({"normalized": normalize_answer(answer)})))
        }
        GoldAnswer::Integer { value } => {
            let parsed = parse_number(answer).filter(|v| v.fract() == 0.0);
            let ok = parsed.is_some_and(|v| v == *value as f64);
            Ok(Score::binary(ok, json!({"parsed": parsed})))
        }
        other => Err(ScoreError::KindMismatch {
            scorer: "exact",
            kind: other.kind_name(),
        }),
    }
}

fn within(a: f64, g: f64, tol: f64) -> bool {
    let band = if g == 0.0 { tol } else { tol * g.abs() };
    (a - g).abs() <= band + f64::EPSILON * g.abs().max(1.0)
}

pub fn score_numeric(answer: &str, gold: f64, rel_tol: f64) -> Score {
    match parse_number(answer) {
        None => Score::new(0.0, json!({"reason": "unparseable"})),
        Some(a) => Score::binary(
            within(a, gold, rel_tol),
            json!({
                "parsed": a,
                "within_1pct": within(a, gold, DEFAULT_REL_TOL),
                "within_5pct": within(a, gold, CLOSE_REL_TOL),
            }),
        ),
    }
}

const ARTICLES: [&str; 3] = ["a", "an", "the"];

/// Case-folds, strips punctuation and the articles a/an/the.
pub fn f1_tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty() && !ARTICLES.contains(t))
        .map(str::to_string)
        .collect()
}

fn token_f1(answer: &[String], gold: &[String]) -> f64 {
    if answer.is_empty() && gold.is_empty() {
        return 1.0;
    }
    if answer.is_empty() || gold.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in gold {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in answer {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let p = common as f64 / answer.len() as f64;
    let r = common as f64 / gold.len() as f64;
    2.0 * p * r / (p + r)
}

/// Best token F1 over the acceptable gold strings.
pub fn score_token_f1<S: AsRef<str>>(answer: &str, golds: &[S]) -> Score {
    let a = f1_tokens(answer);
    let mut best: Option<(f64, usize)> = None;
    for (i, g) in golds.iter().enumerate() {
        let f = token_f1(&a, &f1_tokens(g.as_ref()));
        if best.map_or(true, |(b, _)| f > b) {
            best = Some((f, i));
        }
    }
    Score::new(
        best.map_or(0.0, |(f, _)| f),
        json!({"best_gold": best.map(|(_, i)| i)}),
    )
}

fn is_subsequence(needle: &[Action], hay: &[Action]) -> bool {
    let mut it = hay.iter();
    needle.iter().all(|n| it.any(|h| h == n))
}

/// All-or-nothing plan accuracy; recall and ordering are kept in the detail.
pub fn score_action_sequence(answer_plan: &str, gold: &[String]) -> Score {
    let gold_actions: Result<Vec<Action>, _> = gold.iter().map(|g| Action::parse(g)).collect();
    let (Ok(plan), Ok(gold_actions)) = (parse_plan(answer_plan), gold_actions) else {
        return Score::new(0.0, json!({"reason": "unparseable"}));
    };
    let mut pool: Vec<Option<&Action>> = plan.iter().map(Some).collect();
    let mut hit = 0usize;
    for g in &gold_actions {
        if let Some(slot) = pool.iter_mut().find(|s| s.is_some_and(|a| a == g)) {
            *slot = None;
            hit += 1;
        }
    }
    let recall = if gold_actions.is_empty() {
        1.0
    } else {
        hit as f64 / gold_actions.len() as f64
    };
    let order_correct = is_subsequence(&gold_actions, &plan);
    Score::binary(
        recall == 1.0 && order_correct,
        json!({"recall": recall, "order_correct": order_correct}),
    )
}

pub type SyntaxCheck = fn(&str) -> bool;

/// Extension lists and grammar checkers for the structural patch scorer.
#[derive(Debug, Clone)]
pub struct SweScorerConfig {
    pub code_extensions: Vec<String>,
    pub checkers: HashMap<String, SyntaxCheck>,
}

impl Default for SweScorerConfig {
    fn default() -> Self {
        let code_extensions = [
            "py", "pyi", "js", "jsx", "ts", "tsx", "java", "c", "h", "cc", "cpp", "hpp", "cs", "go",
            "rs", "rb", "php", "swift", "kt", "scala", "sh",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let mut checkers: HashMap<String, SyntaxCheck> = HashMap::new();
        checkers.insert("py".into(), python_fragment_parses);
        checkers.insert("pyi".into(), python_fragment_parses);
        Self {
            code_extensions,
            checkers,
        }
    }
}

fn extension(path: &str) -> Option<String> {
    let name = path.rsplit('/').next()?;
    let (_, ext) = name.rsplit_once('.')?;
    Some(ext.to_ascii_lowercase())
}

fn dedent(lines: &[&str]) -> String {
    let indent = lines
        .iter()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.len() - l.trim_start().len())
        .min()
        .unwrap_or(0);
    lines
        .iter()
        .map(|l| if l.len() >= indent { &l[indent..] } else { l.trim_start() })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Whether added lines, taken as a dedented fragment, parse as Python.
/// A fragment ending in a block opener gets a `pass` body before giving up.
pub fn python_fragment_parses(fragment: &str) -> bool {
    use rustpython_parser::{parse, Mode};
    let lines: Vec<&str> = fragment.lines().collect();
    let src = dedent(&lines);
    if parse(&src, Mode::Module, "<added>").is_ok() {
        return true;
    }
    let last = lines.iter().rev().find(|l| !l.trim().is_empty());
    match last {
        Some(l) if l.trim_end().ends_with(':') => {
            let indent = l.len() - l.trim_start().len();
            let mut padded: Vec<String> = lines.iter().map(|s| s.to_string()).collect();
            padded.push(format!("{}    pass", " ".repeat(indent)));
            let refs: Vec<&str> = padded.iter().map(String::as_str).collect();
            parse(&dedent(&refs), Mode::Module, "<added>").is_ok()
        }
        _ => false,
    }
}

pub const SWE_TIERS: [f64; 4] = [0.0, 0.3, 0.6, 1.0];

/// Structural patch-quality tier: 0.0 not a diff, 0.3 no code file targeted,
/// 0.6 code targeted but added lines fail (or no grammar registered), 1.0
/// added lines of every checked code file parse.
pub fn score_swe_tiered(answer: &str, cfg: &SweScorerConfig) -> Score {
    let doc = validate_diff(&strip_fence(answer));
    if !doc.is_valid_unified {
        return Score::new(0.0, json!({"tier": "not_diff", "error": doc.first_error}));
    }
    let by_file = doc.added_lines_by_file();
    let code: Vec<_> = by_file
        .iter()
        .filter_map(|(path, added)| {
            let ext = extension(path)?;
            cfg.code_extensions.contains(&ext).then_some((*path, ext, added))
        })
        .collect();
    if code.is_empty() {
        return Score::new(0.3, json!({"tier": "non_code", "files": doc.target_paths()}));
    }
    let mut checked = 0;
    for (path, ext, added) in &code {
        let Some(check) = cfg.checkers.get(ext) else { continue };
        checked += 1;
        if !check(&added.join("\n")) {
            return Score::new(0.6, json!({"tier": "syntax_error", "file": path}));
        }
    }
    if checked == 0 {
        return Score::new(0.6, json!({"tier": "no_grammar"}));
    }
    Score::new(1.0, json!({"tier": "parses"}))
}

/// Scores an answer against its gold. A missing answer scores 0.
pub fn score_answer(answer: Option<&str>, gold: &GoldAnswer, swe: &SweScorerConfig) -> Score {
    let Some(answer) = answer else {
        return Score::new(0.0, json!({"reason": "no_answer"}));
    };
    match gold {
        GoldAnswer::ExactString { .. } | GoldAnswer::Integer { .. } => {
            score_exact(answer, gold).expect("kind checked")
        }
        GoldAnswer::Numeric { value, rel_tol } => {
            score_numeric(answer, *value, rel_tol.unwrap_or(DEFAULT_REL_TOL))
        }
        GoldAnswer::TokenSet { values } => score_token_f1(answer, values),
        GoldAnswer::ActionSequence { actions } => score_action_sequence(answer, actions),
        GoldAnswer::NoneStructural => score_swe_tiered(answer, swe),
    }
}

/// Wilson score interval for `successes` out of `n` at normal quantile `z`.
pub fn wilson_ci(successes: u64, n: u64, z: f64) -> Result<(f64, f64), ScoreError> {
    if n == 0 || successes > n || !(z > 0.0) {
        return Err(ScoreError::Domain(format!(
            "need 0 <= successes <= n, n >= 1, z > 0 (got {successes}/{n}, z={z})"
        )));
    }
    let n = n as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    Ok(((centre - half).max(0.0), (centre + half).min(1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pct1(x: f64) -> String {
        format!("{:.1}", x * 100.0)
    }

    #[test]
    fn exact_integer_and_string() {
        let g = GoldAnswer::Integer { value: 392 };
        assert_eq!(score_exact("392", &g).unwrap().value, 1.0);
        assert_eq!(score_exact("391", &g).unwrap().value, 0.0);
        let t = GoldAnswer::ExactString { value: "True".into() };
        assert_eq!(score_exact("TRUE", &t).unwrap().value, 1.0);
        assert!(score_exact("1", &GoldAnswer::NoneStructural).is_err());
    }

    #[test]
    fn numeric_bands() {
        assert_eq!(score_numeric("100.4", 100.0, 0.01).value, 1.0);
        let s = score_numeric("104", 100.0, 0.01);
        assert_eq!(s.value, 0.0);
        assert_eq!(s.detail["within_5pct"], true);
        assert_eq!(score_numeric("$1,234.00", 1234.0, 0.01).value, 1.0);
        assert_eq!(score_numeric("12%", 12.0, 0.01).value, 1.0);
        assert_eq!(score_numeric("n/a", 1.0, 0.01).value, 0.0);
        assert_eq!(score_numeric("0.005", 0.0, 0.01).value, 1.0);
    }

    #[test]
    fn f1_cases() {
        assert_eq!(score_token_f1("red cat", &["red cat"]).value, 1.0);
        assert_eq!(score_token_f1("dog", &["red cat"]).value, 0.0);
        assert_eq!(score_token_f1("the red cat", &["red cat"]).value, 1.0);
        assert_eq!(score_token_f1("", &[""]).value, 1.0);
        let s = score_token_f1("red dog", &["blue", "red cat"]);
        assert!((s.value - 0.5).abs() < 1e-12);
        assert_eq!(s.detail["best_gold"], 1);
    }

    #[test]
    fn action_sequence_cases() {
        let gold: Vec<String> = ["goto(fridge)", "open(fridge)"].iter().map(|s| s.to_string()).collect();
        assert_eq!(score_action_sequence("goto(fridge); open(fridge)", &gold).value, 1.0);
        let rev = score_action_sequence("open(fridge); goto(fridge)", &gold);
        assert_eq!(rev.value, 0.0);
        assert_eq!(rev.detail["recall"], 1.0);
        assert_eq!(rev.detail["order_correct"], false);
        let miss = score_action_sequence("goto(fridge)", &gold);
        assert_eq!(miss.detail["recall"], 0.5);
        assert_eq!(score_action_sequence("dance wildly", &gold).value, 0.0);
    }

    #[test]
    fn swe_tiers() {
        let cfg = SweScorerConfig::default();
        assert_eq!(score_swe_tiered("The bug is in foo()", &cfg).value, 0.0);
        let md = "--- a/README.md\n+++ b/README.md\n@@ -1 +1 @@\n-old\n+new\n";
        assert_eq!(score_swe_tiered(md, &cfg).value, 0.3);
        let bad = "--- a/m.py\n+++ b/m.py\n@@ -1 +1 @@\n-x = 1\n+def f(:\n";
        assert_eq!(score_swe_tiered(bad, &cfg).value, 0.6);
        let good = "--- a/m.py\n+++ b/m.py\n@@ -1 +1 @@\n-x = 1\n+def f(): return 1\n";
        assert_eq!(score_swe_tiered(good, &cfg).value, 1.0);
        let fenced = format!("```diff\n{good}```\n");
        assert_eq!(score_swe_tiered(&fenced, &cfg).value, 1.0);
        let js = "--- a/m.js\n+++ b/m.js\n@@ -1 +1 @@\n-a\n+b\n";
        assert_eq!(score_swe_tiered(js, &cfg).value, 0.6);
    }

    #[test]
    fn python_fragments() {
        assert!(python_fragment_parses("        x = compute()\n        return x"));
        assert!(python_fragment_parses("    if x is None:"));
        assert!(!python_fragment_parses("def f(:"));
    }

    #[test]
    fn wilson_anchors() {
        let (lo, hi) = wilson_ci(1, 60, 1.96).unwrap();
        assert_eq!((pct1(lo), pct1(hi)), ("0.3".into(), "8.9".into()));
        let (lo, hi) = wilson_ci(0, 60, 1.96).unwrap();
        assert_eq!((pct1(lo), pct1(hi)), ("0.0".into(), "6.0".into()));
        let (lo, hi) = wilson_ci(90, 100, 1.96).unwrap();
        assert_eq!((pct1(lo), pct1(hi)), ("82.6".into(), "94.5".into()));
        assert!(wilson_ci(3, 2, 1.96).is_err());
        assert!(wilson_ci(0, 0, 1.96).is_err());
    }
}
