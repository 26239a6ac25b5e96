use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::engines::diff::validate_diff;
use crate::engines::fence::{extract_fenced_code, parse_final_answer, strip_fence};
use crate::gateway::{Backend, GatewayError, Purpose, SamplingParams, Session};
use crate::heavyweight::{run_heavyweight, HeavyConfig};
use crate::problem::{GoldAnswer, ProblemInstance};
use crate::prompts::Prompts;
use crate::router::{dispatch, Classifier, Layer, Router, ToolRegistry};
use crate::scoring::{score_answer, SweScorerConfig};
use crate::tools::{FinishReason, SolveOutcome, ToolConfig, ToolOutput, Toolbox};
use crate::trace::EventKind;

use super::config::{FeedbackMode, Knobs};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Direct,
    React,
    SelfRefine,
    Reflexion,
    MinimalReflect,
    /// Shape routing over the general tools only.
    Lightweight,
    /// Shape routing with the domain tools registered.
    Full,
    Heavyweight,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Direct,
        Method::React,
        Method::SelfRefine,
        Method::Reflexion,
        Method::MinimalReflect,
        Method::Lightweight,
        Method::Full,
        Method::Heavyweight,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Direct => "direct",
            Method::React => "react",
            Method::SelfRefine => "self_refine",
            Method::Reflexion => "reflexion",
            Method::MinimalReflect => "minimal_reflect",
            Method::Lightweight => "lightweight",
            Method::Full => "full",
            Method::Heavyweight => "heavyweight",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == norm)
            .ok_or_else(|| format!("unknown method {s:?}"))
    }
}

/// Everything the drivers share across problems.
pub struct Runtime {
    pub prompts: Arc<Prompts>,
    pub toolbox: Toolbox,
    pub classifier: Classifier,
    pub knobs: Knobs,
    pub heavy: HeavyConfig,
    pub layer: Option<Layer>,
    pub swe: SweScorerConfig,
}

impl Runtime {
    pub fn new(prompts: Prompts, tools: &ToolConfig, knobs: Knobs, heavy: HeavyConfig, layer: Option<Layer>) -> Self {
        let prompts = Arc::new(prompts);
        Self {
            toolbox: Toolbox::standard(tools, prompts.clone()),
            prompts,
            classifier: Classifier::default(),
            knobs,
            heavy,
            layer,
            swe: SweScorerConfig::default(),
        }
    }

    fn params(&self) -> SamplingParams {
        SamplingParams {
            temperature: self.knobs.temperature,
            top_p: self.knobs.top_p,
            max_tokens: self.knobs.max_tokens,
            stop_sequences: Vec::new(),
        }
    }

    fn router(&self, default: Layer) -> Router {
        Router::new(self.classifier.clone(), ToolRegistry::new(self.layer.unwrap_or(default)))
    }
}

impl Default for Runtime {
    fn default() -> Self {
        Self::new(
            Prompts::default(),
            &ToolConfig::default(),
            Knobs::default(),
            HeavyConfig::default(),
            None,
        )
    }
}

pub fn run_method(method: Method, p: &ProblemInstance, backend: &dyn Backend, rt: &Runtime) -> Result<SolveOutcome, GatewayError> {
    match method {
        Method::Direct => run_direct(p, backend, rt),
        Method::React => run_react(p, backend, rt, rt.knobs.react_max_steps),
        Method::SelfRefine => run_self_refine(p, backend, rt, rt.knobs.self_refine_rounds),
        Method::Reflexion => run_reflexion(p, backend, rt, rt.knobs.reflexion_episodes),
        Method::MinimalReflect => run_minimal_reflect(p, backend, rt),
        Method::Lightweight => dispatch(p, &rt.router(Layer::NoDomainTools), &rt.toolbox, backend),
        Method::Full => dispatch(p, &rt.router(Layer::Full), &rt.toolbox, backend),
        Method::Heavyweight => run_heavyweight(p, backend, &rt.heavy, &rt.prompts),
    }
}

fn context_block(p: &ProblemInstance) -> String {
    let tables = p.tables_text();
    if tables.is_empty() {
        p.context_text()
    } else {
        format!("{}\n{tables}", p.context_text())
    }
}

/// A fenced unified diff when the reply carries one, else the marker answer.
pub fn extract_answer(reply: &str) -> Option<String> {
    if let Some(code) = extract_fenced_code(reply) {
        let head = code.trim_start();
        if head.starts_with("diff --git") || head.starts_with("--- ") {
            return Some(code);
        }
    }
    parse_final_answer(reply)
}

fn finish(answer: Option<String>, n_steps: u32, n_retries: u32, mut s: Session<'_>, tool: &str) -> SolveOutcome {
    if let Some(a) = &answer {
        s.event(EventKind::FinalAnswer, a.clone());
    }
    let out = ToolOutput {
        finish_reason: if answer.is_some() {
            FinishReason::Answered
        } else {
            FinishReason::NullAnswer
        },
        answer,
        n_steps,
        n_retries,
    };
    SolveOutcome::from_session(out, s, None, tool)
}

/// One chain-of-thought call with a marker-parsed answer.
pub fn run_direct(p: &ProblemInstance, backend: &dyn Backend, rt: &Runtime) -> Result<SolveOutcome, GatewayError> {
    let mut s = Session::new(backend);
    s.set_step(1);
    let prompt = rt
        .prompts
        .render("direct", &[("instruction", &p.instruction), ("context", &context_block(p))]);
    let reply = s.generate(&prompt, &rt.params(), Purpose::Generate)?;
    s.event(EventKind::Thought, reply.text.clone());
    Ok(finish(extract_answer(&reply.text), 1, 0, s, "direct"))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReactAction {
    Lookup(String),
    Finish(String),
    Invalid(String),
}

/// Splits a turn into its thought and first action. Anything after the
/// action line is ignored.
pub fn parse_react_turn(reply: &str) -> (String, ReactAction) {
    let mut thought = Vec::new();
    for line in reply.lines() {
        let t = line.trim();
        let lower = t.to_ascii_lowercase();
        if let Some(rest) = lower.strip_prefix("action:") {
            let raw = t[t.len() - rest.len()..].trim();
            return (thought.join("\n"), parse_action(raw));
        }
        if lower.starts_with("observation:") {
            break;
        }
        let body = if lower.starts_with("thought:") { t[8..].trim() } else { t };
        if !body.is_empty() {
            thought.push(body.to_string());
        }
    }
    (thought.join("\n"), ReactAction::Invalid("no Action line".into()))
}

fn parse_action(raw: &str) -> ReactAction {
    let lower = raw.to_ascii_lowercase();
    let arg = |name: &str| -> Option<String> {
        let rest = lower.strip_prefix(name)?.trim_start();
        rest.strip_prefix('[')?;
        let start = raw.len() - rest.len() + 1;
        let end = raw.rfind(']').filter(|&e| e >= start)?;
        Some(raw[start..end].trim().to_string())
    };
    if let Some(a) = arg("finish") {
        ReactAction::Finish(a)
    } else if let Some(a) = arg("lookup") {
        ReactAction::Lookup(a)
    } else {
        ReactAction::Invalid(raw.to_string())
    }
}

/// Context sentences mentioning `term`, case-insensitively.
pub fn lookup(p: &ProblemInstance, term: &str) -> String {
    let needle = term.trim().to_lowercase();
    if needle.is_empty() {
        return "Empty lookup term.".into();
    }
    let text = context_block(p);
    let mut hits = Vec::new();
    for line in text.lines() {
        let mut start = 0;
        let bytes = line.as_bytes();
        for i in 0..=bytes.len() {
            let end_of_sentence = i == bytes.len()
                || (matches!(bytes[i], b'.' | b'!' | b'?') && bytes.get(i + 1).map_or(true, |b| b.is_ascii_whitespace()));
            if end_of_sentence {
                let end = (i + 1).min(bytes.len());
                let sentence = line[start..end].trim();
                if !sentence.is_empty() && sentence.to_lowercase().contains(&needle) {
                    hits.push(sentence.to_string());
                }
                start = end;
            }
        }
    }
    if hits.is_empty() {
        format!("No sentence mentions {term:?}.")
    } else {
        hits.join(" ")
    }
}

fn react_loop(
    p: &ProblemInstance,
    backend: &dyn Backend,
    rt: &Runtime,
    max_steps: u32,
    checklist_every: Option<u32>,
    tool: &str,
) -> Result<SolveOutcome, GatewayError> {
    let mut s = Session::new(backend);
    let doc_names = p.context.iter().map(|d| d.name.as_str()).collect::<Vec<_>>().join(", ");
    let mut history = String::new();
    let mut n_checklists = 0;
    for t in 1..=max_steps.max(1) {
        s.set_step(t);
        let checklist = checklist_every.is_some_and(|k| k > 0 && t % k == 0);
        let mut hist = history.clone();
        if checklist {
            hist.push_str(rt.prompts.get("minimal_checklist"));
            hist.push('\n');
        }
        let prompt = rt.prompts.render(
            "react",
            &[("doc_names", &doc_names), ("instruction", &p.instruction), ("history", &hist)],
        );
        let reply = s.generate(&prompt, &rt.params(), Purpose::Generate)?;
        if checklist {
            n_checklists += 1;
            let text = reflection_block(&reply.text).unwrap_or_default();
            s.event(EventKind::Reflection, text);
        }
        let (thought, action) = parse_react_turn(&reply.text);
        s.event(EventKind::Thought, thought.clone());
        let observation = match &action {
            ReactAction::Finish(a) => {
                s.event(EventKind::Action, format!("finish[{a}]"));
                let answer = (!a.is_empty()).then(|| a.clone());
                let mut out = finish(answer, t, 0, s, tool);
                out.n_retries = 0;
                return Ok(out);
            }
            ReactAction::Lookup(term) => {
                s.event(EventKind::Action, format!("lookup[{term}]"));
                lookup(p, term)
            }
            ReactAction::Invalid(raw) => {
                s.event(EventKind::Action, raw.clone());
                "Invalid action. Use lookup[<term>] or finish[<answer>].".to_string()
            }
        };
        s.event(EventKind::Observation, observation.clone());
        if checklist {
            if let Some(r) = reflection_block(&reply.text) {
                history.push_str(&format!("Reflection: {r}\n"));
            }
        }
        let action_text = match &action {
            ReactAction::Lookup(x) => format!("lookup[{x}]"),
            ReactAction::Invalid(x) => x.clone(),
            ReactAction::Finish(_) => unreachable!(),
        };
        history.push_str(&format!("Thought: {thought}\nAction: {action_text}\nObservation: {observation}\n"));
    }
    tracing::debug!(checklists = n_checklists, "react loop exhausted");
    let out = ToolOutput {
        answer: None,
        finish_reason: FinishReason::BudgetExhausted,
        n_steps: max_steps.max(1),
        n_retries: 0,
    };
    Ok(SolveOutcome::from_session(out, s, None, tool))
}

fn reflection_block(reply: &str) -> Option<String> {
    let lower = reply.to_ascii_lowercase();
    let start = lower.find("reflection:")? + "reflection:".len();
    let rest = &reply[start..];
    let end = rest
        .to_ascii_lowercase()
        .find("thought:")
        .or_else(|| rest.to_ascii_lowercase().find("action:"))
        .unwrap_or(rest.len());
    Some(rest[..end].trim().to_string())
}

/// Thought/Action/Observation loop with lookup and finish actions.
pub fn run_react(p: &ProblemInstance, backend: &dyn Backend, rt: &Runtime, max_steps: u32) -> Result<SolveOutcome, GatewayError> {
    react_loop(p, backend, rt, max_steps, None, "react")
}

/// The ReAct loop with the five-point checklist injected every
/// `checklist_interval` steps in the same generation.
pub fn run_minimal_reflect(p: &ProblemInstance, backend: &dyn Backend, rt: &Runtime) -> Result<SolveOutcome, GatewayError> {
    react_loop(
        p,
        backend,
        rt,
        rt.knobs.react_max_steps,
        Some(rt.knobs.checklist_interval),
        "minimal_reflect",
    )
}

fn says_no_issues(critique: &str) -> bool {
    let t = critique.trim().trim_matches(|c: char| c == '"' || c == '.' || c == '*').to_ascii_uppercase();
    t == "NO ISSUES" || t.starts_with("NO ISSUES")
}

/// Generate, then up to `rounds` critique/revise pairs; stops when the
/// critique reports no issues.
pub fn run_self_refine(p: &ProblemInstance, backend: &dyn Backend, rt: &Runtime, rounds: u32) -> Result<SolveOutcome, GatewayError> {
    let mut s = Session::new(backend);
    s.set_step(1);
    let context = context_block(p);
    let prompt = rt
        .prompts
        .render("direct", &[("instruction", &p.instruction), ("context", &context)]);
    let mut current = s.generate(&prompt, &rt.params(), Purpose::Generate)?.text;
    s.event(EventKind::Thought, current.clone());
    let mut revisions = 0;
    let mut steps = 1;
    for r in 1..=rounds {
        s.set_step(r + 1);
        steps = r + 1;
        let critique_prompt = rt.prompts.render(
            "self_refine_critique",
            &[("instruction", &p.instruction), ("context", &context), ("answer", &current)],
        );
        let critique = s.generate(&critique_prompt, &rt.params(), Purpose::Critique)?.text;
        let ok = says_no_issues(&critique);
        s.event_with(
            EventKind::Reflection,
            critique.clone(),
            json!({"verdict": if ok { "CORRECT" } else { "INCORRECT" }}),
        );
        if ok {
            break;
        }
        let revise_prompt = rt.prompts.render(
            "self_refine_revise",
            &[
                ("instruction", &p.instruction),
                ("context", &context),
                ("answer", &current),
                ("feedback", &critique),
            ],
        );
        current = s.generate(&revise_prompt, &rt.params(), Purpose::Generate)?.text;
        s.event(EventKind::Thought, current.clone());
        revisions += 1;
    }
    Ok(finish(extract_answer(&current), steps, revisions, s, "self_refine"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Feedback {
    pub success: bool,
    pub message: String,
}

/// Binary episode feedback. Gold mode scores against the reference when it
/// carries correctness; otherwise (and in format mode) only the answer's
/// form is checked.
pub fn feedback_oracle(p: &ProblemInstance, answer: Option<&str>, mode: FeedbackMode, swe: &SweScorerConfig) -> Feedback {
    let Some(answer) = answer else {
        return Feedback {
            success: false,
            message: "No answer was given in the required \"FINAL ANSWER:\" format.".into(),
        };
    };
    let structural = matches!(p.gold, GoldAnswer::NoneStructural);
    if mode == FeedbackMode::Gold && !structural {
        let score = score_answer(Some(answer), &p.gold, swe);
        return if score.value >= 1.0 {
            Feedback {
                success: true,
                message: "Correct.".into(),
            }
        } else {
            Feedback {
                success: false,
                message: "The answer is incorrect.".into(),
            }
        };
    }
    if structural {
        let doc = validate_diff(&strip_fence(answer));
        return Feedback {
            success: doc.is_valid_unified,
            message: if doc.is_valid_unified {
                "The patch is well formed.".into()
            } else {
                format!("The patch is not a valid unified diff: {}", doc.first_error.unwrap_or_default())
            },
        };
    }
    Feedback {
        success: true,
        message: "An answer was given.".into(),
    }
}

/// Episodes with a self-reflection memory carried forward after each failure.
pub fn run_reflexion(p: &ProblemInstance, backend: &dyn Backend, rt: &Runtime, episodes: u32) -> Result<SolveOutcome, GatewayError> {
    let mut s = Session::new(backend);
    let context = context_block(p);
    let mut memory: Vec<String> = Vec::new();
    let mut answer = None;
    let mut ran = 0;
    for ep in 1..=episodes.max(1) {
        s.set_step(ep);
        ran = ep;
        let memory_text = if memory.is_empty() {
            String::new()
        } else {
            format!("Lessons from earlier attempts:\n{}\n", memory.iter().map(|m| format!("- {m}")).collect::<Vec<_>>().join("\n"))
        };
        let prompt = rt.prompts.render(
            "reflexion",
            &[("memory", &memory_text), ("context", &context), ("instruction", &p.instruction)],
        );
        let reply = s.generate(&prompt, &rt.params(), Purpose::Generate)?;
        s.event(EventKind::Thought, reply.text.clone());
        answer = extract_answer(&reply.text);
        let fb = feedback_oracle(p, answer.as_deref(), rt.knobs.reflexion_feedback, &rt.swe);
        s.event_with(EventKind::Observation, fb.message.clone(), json!({"success": fb.success}));
        if fb.success || ep == episodes.max(1) {
            break;
        }
        let reflect_prompt = rt.prompts.render(
            "reflexion_reflect",
            &[("instruction", &p.instruction), ("attempt", &reply.text), ("feedback", &fb.message)],
        );
        let lesson = s.generate(&reflect_prompt, &rt.params(), Purpose::Critique)?.text;
        s.event(EventKind::Reflection, lesson.clone());
        memory.push(lesson.trim().to_string());
    }
    Ok(finish(answer, ran, ran - 1, s, "reflexion"))
}
