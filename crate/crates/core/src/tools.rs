//! The seven shape tools and the generic validate-with-retry loop.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::engines::diff::validate_diff;
use crate::engines::fence::{extract_fenced_code, parse_final_answer, strip_fence};
use crate::engines::horn::{extract_rules, forward_chain, parse_query_statement, NegationPolicy};
use crate::engines::sandbox::{run_sandbox_with, SandboxConfig};
use crate::engines::tfidf::tfidf_retrieve;
use crate::engines::vote::{modal_vote, modal_vote_original};
use crate::engines::world::{parse_plan, render_plan, Action, WorldState};
use crate::gateway::{GatewayError, Purpose, SamplingParams, Session, TokenLedger, DEFAULT_MAX_TOKENS};
use crate::problem::ProblemInstance;
use crate::prompts::Prompts;
use crate::router::Shape;
use crate::trace::{EventKind, TraceEvent};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    CodeSolved,
    ChainCommitted,
    Vote,
    Validated,
    Fallback,
    NullAnswer,
    BudgetExhausted,
    /// A baseline method produced a marker-parsed answer.
    Answered,
    /// The run failed outside the method (backend or script failure).
    Error,
}

impl FinishReason {
    pub const ALL: [FinishReason; 9] = [
        FinishReason::CodeSolved,
        FinishReason::ChainCommitted,
        FinishReason::Vote,
        FinishReason::Validated,
        FinishReason::Fallback,
        FinishReason::NullAnswer,
        FinishReason::BudgetExhausted,
        FinishReason::Answered,
        FinishReason::Error,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FinishReason::CodeSolved => "code_solved",
            FinishReason::ChainCommitted => "chain_committed",
            FinishReason::Vote => "vote",
            FinishReason::Validated => "validated",
            FinishReason::Fallback => "fallback",
            FinishReason::NullAnswer => "null_answer",
            FinishReason::BudgetExhausted => "budget_exhausted",
            FinishReason::Answered => "answered",
            FinishReason::Error => "error",
        }
    }

    /// Terminated with an answer attempt rather than running out of budget.
    pub fn converged(self) -> bool {
        !matches!(self, FinishReason::BudgetExhausted | FinishReason::Error)
    }
}

impl fmt::Display for FinishReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FinishReason {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FinishReason::ALL
            .into_iter()
            .find(|r| r.as_str() == s.trim())
            .ok_or_else(|| format!("unknown finish reason {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub shape: Shape,
    pub k_samples: usize,
    pub primary_temperature: f64,
    pub retry_temperature: Option<f64>,
    pub max_retries: u32,
    pub validator: Option<String>,
}

impl ToolSpec {
    fn new(shape: Shape, k: usize, t: f64, retry: Option<(f64, u32)>, validator: Option<&str>) -> Self {
        Self {
            name: shape.default_tool().to_string(),
            shape,
            k_samples: k,
            primary_temperature: t,
            retry_temperature: retry.map(|r| r.0),
            max_retries: retry.map_or(0, |r| r.1),
            validator: validator.map(str::to_string),
        }
    }

    pub fn symbolic() -> Self {
        Self::new(Shape::Symbolic, 3, 0.7, Some((0.5, 1)), Some("sandbox"))
    }

    pub fn tabular() -> Self {
        Self::new(Shape::Tabular, 3, 0.7, Some((0.5, 1)), Some("sandbox"))
    }

    pub fn logical() -> Self {
        Self::new(Shape::Logical, 5, 0.7, None, Some("forward_chain"))
    }

    pub fn evidence() -> Self {
        Self::new(Shape::Evidence, 1, 0.2, None, None)
    }

    pub fn procedural(max_retries: u32) -> Self {
        let retry = (max_retries > 0).then_some((0.5, max_retries));
        Self::new(Shape::Procedural, 5, 0.7, retry, Some("preconditions"))
    }

    pub fn artifact(max_retries: u32) -> Self {
        let retry = (max_retries > 0).then_some((0.4, max_retries));
        Self::new(Shape::Artifact, 1, 0.4, retry, Some("unified_diff"))
    }

    pub fn fallback() -> Self {
        Self::new(Shape::Fallback, 5, 0.7, None, None)
    }
}

/// Knobs shared by the tool suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToolConfig {
    pub sandbox: SandboxConfig,
    pub max_tokens: u32,
    pub top_p: f64,
    pub evidence_top_n: usize,
    pub artifact_max_retries: u32,
    pub procedural_max_retries: u32,
    /// Forces a negation policy; by default the extracted theory decides.
    pub negation_policy: Option<NegationPolicy>,
}

impl Default for ToolConfig {
    fn default() -> Self {
        Self {
            sandbox: SandboxConfig::default(),
            max_tokens: DEFAULT_MAX_TOKENS,
            top_p: 1.0,
            evidence_top_n: 5,
            artifact_max_retries: 3,
            procedural_max_retries: 2,
            negation_policy: None,
        }
    }
}

impl ToolConfig {
    fn params(&self, temperature: f64) -> SamplingParams {
        SamplingParams {
            temperature,
            top_p: self.top_p,
            max_tokens: self.max_tokens,
            stop_sequences: Vec::new(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ToolError {
    #[error(transparent)]
    Backend(#[from] GatewayError),
    #[error("{0}")]
    Internal(String),
}

/// What a tool reports; the session supplies ledger and trace.
#[derive(Debug, Clone, PartialEq)]
pub struct ToolOutput {
    pub answer: Option<String>,
    pub finish_reason: FinishReason,
    pub n_steps: u32,
    pub n_retries: u32,
}

impl ToolOutput {
    pub fn null(n_steps: u32, n_retries: u32) -> Self {
        Self {
            answer: None,
            finish_reason: FinishReason::NullAnswer,
            n_steps,
            n_retries,
        }
    }

    fn answered(answer: Option<String>, ok: FinishReason, n_steps: u32, n_retries: u32) -> Self {
        match answer {
            Some(a) => Self {
                answer: Some(a),
                finish_reason: ok,
                n_steps,
                n_retries,
            },
            None => Self::null(n_steps, n_retries),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub answer: Option<String>,
    pub finish_reason: FinishReason,
    pub n_steps: u32,
    pub n_llm_calls: u32,
    pub n_retries: u32,
    pub ledger: TokenLedger,
    pub trace: Vec<TraceEvent>,
    pub shape: Option<Shape>,
    pub tool: String,
}

impl SolveOutcome {
    pub fn from_session(out: ToolOutput, session: Session<'_>, shape: Option<Shape>, tool: impl Into<String>) -> Self {
        let (ledger, trace) = session.finish();
        Self {
            answer: out.answer,
            finish_reason: out.finish_reason,
            n_steps: out.n_steps,
            n_llm_calls: ledger.len() as u32,
            n_retries: out.n_retries,
            ledger,
            trace,
            shape,
            tool: tool.into(),
        }
    }

    pub fn tokens_total(&self) -> u64 {
        self.ledger.total_tokens()
    }

    pub fn converged(&self) -> bool {
        self.finish_reason.converged()
    }
}

pub trait Tool: Send + Sync {
    fn spec(&self) -> &ToolSpec;

    fn name(&self) -> &str {
        &self.spec().name
    }

    fn solve(&self, p: &ProblemInstance, s: &mut Session<'_>) -> Result<ToolOutput, ToolError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopOutcome {
    pub output: Option<String>,
    pub n_retries: u32,
    pub attempts: u32,
}

/// Generate, validate, and regenerate with the rejection reason appended.
///
/// The first attempt runs at the primary temperature, retries at the retry
/// temperature. At most `spec.max_retries` retries are made.
pub fn validate_loop<V, R>(
    s: &mut Session<'_>,
    prompt: &str,
    retry_suffix: R,
    validator: V,
    spec: &ToolSpec,
    base: &SamplingParams,
) -> Result<LoopOutcome, GatewayError>
where
    V: Fn(&str) -> Result<String, String>,
    R: Fn(&str) -> String,
{
    let mut n_retries = 0;
    let mut current = prompt.to_string();
    let mut temperature = spec.primary_temperature;
    loop {
        s.set_step(n_retries + 1);
        let params = SamplingParams {
            temperature,
            ..base.clone()
        };
        let reply = s.generate(&current, &params, Purpose::Generate)?;
        match validator(&reply.text) {
            Ok(out) => {
                s.event(EventKind::Validation, "accepted");
                return Ok(LoopOutcome {
                    output: Some(out),
                    n_retries,
                    attempts: n_retries + 1,
                });
            }
            Err(reason) => {
                s.event(EventKind::Validation, format!("rejected: {reason}"));
                if n_retries >= spec.max_retries {
                    return Ok(LoopOutcome {
                        output: None,
                        n_retries,
                        attempts: n_retries + 1,
                    });
                }
                n_retries += 1;
                temperature = spec.retry_temperature.unwrap_or(spec.primary_temperature);
                current = format!("{prompt}{}", retry_suffix(&reason));
            }
        }
    }
}

fn base_vars(p: &ProblemInstance) -> (String, String) {
    (p.context_text(), p.tables_text())
}

/// Python code tools: K scripts, sandboxed, modal vote; one retry round only
/// when no script yields an answer.
pub struct CodeVoteTool {
    spec: ToolSpec,
    cfg: ToolConfig,
    prompts: Arc<Prompts>,
}

impl CodeVoteTool {
    pub fn new(spec: ToolSpec, cfg: ToolConfig, prompts: Arc<Prompts>) -> Self {
        Self { spec, cfg, prompts }
    }

    fn round(&self, s: &mut Session<'_>, prompt: &str, temperature: f64) -> Result<Vec<Option<String>>, GatewayError> {
        let replies = s.draw_k_samples(prompt, &self.cfg.params(temperature), self.spec.k_samples)?;
        let scripts: Vec<Option<String>> = replies.iter().map(|r| extract_fenced_code(&r.text)).collect();
        let results: Vec<_> = std::thread::scope(|scope| {
            let handles: Vec<_> = scripts
                .iter()
                .map(|code| {
                    let cfg = &self.cfg.sandbox;
                    scope.spawn(move || code.as_ref().map(|c| run_sandbox_with(c, cfg)))
                })
                .collect();
            handles.into_iter().map(|h| h.join().ok().flatten()).collect()
        });
        let mut answers = Vec::with_capacity(results.len());
        for r in results {
            match r {
                None => {
                    s.event(EventKind::Sandbox, "no fenced code");
                    answers.push(None);
                }
                Some(r) => {
                    s.event_with(
                        EventKind::Sandbox,
                        r.extracted_answer.clone().unwrap_or_default(),
                        json!({"exit_status": r.exit_status, "elapsed_ms": r.elapsed_ms}),
                    );
                    answers.push(r.extracted_answer);
                }
            }
        }
        Ok(answers)
    }
}

impl Tool for CodeVoteTool {
    fn spec(&self) -> &ToolSpec {
        &self.spec
    }

    fn solve(&self, p: &ProblemInstance, s: &mut Session<'_>) -> Result<ToolOutput, ToolError> {
        let (context, tables) = base_vars(p);
        let prompt = self.prompts.render(
            &self.spec.name,
            &[("instruction", &p.instruction), ("context", &context), ("tables", &tables)],
        );
        s.set_step(1);
        let answers = self.round(s, &prompt, self.spec.primary_temperature)?;
        s.event_with(EventKind::Note, "code_results", json!(answers));
        if let Some(a) = modal_vote_original(&answers) {
            return Ok(ToolOutput::answered(Some(a), FinishReason::CodeSolved, 1, 0));
        }
        let Some(t) = self.spec.retry_temperature.filter(|_| self.spec.max_retries > 0) else {
            return Ok(ToolOutput::null(1, 0));
        };
        s.set_step(2);
        let retry = format!("{prompt}{}", self.prompts.get("code_retry"));
        let answers = self.round(s, &retry, t)?;
        s.event_with(EventKind::Note, "code_results", json!(answers));
        Ok(ToolOutput::answered(modal_vote_original(&answers), FinishReason::CodeSolved, 2, 1))
    }
}

fn tfu_label(answer: &str) -> Option<&'static str> {
    let first = answer
        .trim()
        .trim_matches(|c: char| !c.is_alphanumeric())
        .split(|c: char| !c.is_alphanumeric())
        .next()?
        .to_ascii_lowercase();
    match first.as_str() {
        "true" | "yes" => Some("True"),
        "false" | "no" => Some("False"),
        "unknown" | "uncertain" => Some("Unknown"),
        _ => None,
    }
}

/// Forward chaining first; Unknown delegates to K sampled chain-of-thought votes.
pub struct ForwardChainTool {
    spec: ToolSpec,
    cfg: ToolConfig,
    prompts: Arc<Prompts>,
}

impl ForwardChainTool {
    pub fn new(cfg: ToolConfig, prompts: Arc<Prompts>) -> Self {
        Self {
            spec: ToolSpec::logical(),
            cfg,
            prompts,
        }
    }
}

impl Tool for ForwardChainTool {
    fn spec(&self) -> &ToolSpec {
        &self.spec
    }

    fn solve(&self, p: &ProblemInstance, s: &mut Session<'_>) -> Result<ToolOutput, ToolError> {
        s.set_step(1);
        let context = p.context_text();
        let mut base = extract_rules(&context);
        if let Some(policy) = self.cfg.negation_policy {
            base.negation = policy;
        }
        let query = parse_query_statement(&p.instruction);
        s.event_with(
            EventKind::Note,
            "rules extracted",
            json!({
                "facts": base.facts().len(),
                "rules": base.rules().len(),
                "skipped": base.skipped_sentences,
                "query": query.as_ref().map(|q| q.to_string()),
            }),
        );
        if let (Some(q), false) = (&query, base.rules().is_empty() && base.facts().is_empty()) {
            let verdict = forward_chain(&base, q);
            if verdict.label.is_committed() {
                s.event_with(
                    EventKind::Validation,
                    format!("chain committed {}", verdict.label.label()),
                    json!({"derivation": verdict.derivation.iter().map(|d| format!("{d:?}")).collect::<Vec<_>>()}),
                );
                return Ok(ToolOutput::answered(
                    Some(verdict.label.label().to_string()),
                    FinishReason::ChainCommitted,
                    1,
                    0,
                ));
            }
        }
        s.event(EventKind::Note, "chain undecided; delegating");
        let prompt = self
            .prompts
            .render(&self.spec.name, &[("instruction", &p.instruction), ("context", &context)]);
        let replies = s.draw_k_samples(&prompt, &self.cfg.params(self.spec.primary_temperature), self.spec.k_samples)?;
        let labels: Vec<Option<&str>> = replies
            .iter()
            .map(|r| parse_final_answer(&r.text).and_then(|a| tfu_label(&a)))
            .collect();
        let answer = modal_vote(&labels).and_then(|w| tfu_label(&w)).map(str::to_string);
        Ok(ToolOutput::answered(answer, FinishReason::Vote, 1, 0))
    }
}

/// TF-IDF section retrieval feeding a single grounded extraction call.
pub struct EvidenceTool {
    spec: ToolSpec,
    cfg: ToolConfig,
    prompts: Arc<Prompts>,
}

impl EvidenceTool {
    pub fn new(cfg: ToolConfig, prompts: Arc<Prompts>) -> Self {
        Self {
            spec: ToolSpec::evidence(),
            cfg,
            prompts,
        }
    }
}

impl Tool for EvidenceTool {
    fn spec(&self) -> &ToolSpec {
        &self.spec
    }

    fn solve(&self, p: &ProblemInstance, s: &mut Session<'_>) -> Result<ToolOutput, ToolError> {
        s.set_step(1);
        let ranked = tfidf_retrieve(&p.instruction, &p.context, self.cfg.evidence_top_n);
        s.event_with(
            EventKind::Observation,
            "retrieved sections",
            json!(ranked.iter().map(|r| json!({"index": r.section.index, "score": r.score})).collect::<Vec<_>>()),
        );
        let sections = ranked
            .iter()
            .map(|r| format!("[{}] {}", r.section.index, r.section.text))
            .collect::<Vec<_>>()
            .join("\n\n");
        let prompt = self
            .prompts
            .render(&self.spec.name, &[("instruction", &p.instruction), ("sections", &sections)]);
        let reply = s.generate(&prompt, &self.cfg.params(self.spec.primary_temperature), Purpose::Extract)?;
        let answer = parse_final_answer(&reply.text).or_else(|| {
            let t = reply.text.trim();
            (!t.is_empty()).then(|| t.to_string())
        });
        Ok(ToolOutput::answered(answer, FinishReason::Vote, 1, 0))
    }
}

/// Ranking key for a candidate plan: longer valid prefix first, then parsed
/// plans over unparseable ones, then earlier samples.
#[derive(Debug, Clone)]
struct PlanCandidate {
    order: usize,
    plan: Option<Vec<Action>>,
    valid: usize,
    total: usize,
}

impl PlanCandidate {
    fn fully_valid(&self) -> bool {
        self.plan.is_some() && self.total > 0 && self.valid == self.total
    }

    fn beats(&self, other: &PlanCandidate) -> bool {
        (self.valid, self.plan.is_some(), std::cmp::Reverse(self.order))
            > (other.valid, other.plan.is_some(), std::cmp::Reverse(other.order))
    }
}

/// K sampled plans prefix-scored against the precondition model.
pub struct ProceduralTool {
    spec: ToolSpec,
    cfg: ToolConfig,
    prompts: Arc<Prompts>,
}

impl ProceduralTool {
    pub fn new(cfg: ToolConfig, prompts: Arc<Prompts>) -> Self {
        Self {
            spec: ToolSpec::procedural(cfg.procedural_max_retries),
            cfg,
            prompts,
        }
    }
}

impl Tool for ProceduralTool {
    fn spec(&self) -> &ToolSpec {
        &self.spec
    }

    fn solve(&self, p: &ProblemInstance, s: &mut Session<'_>) -> Result<ToolOutput, ToolError> {
        let context = p.context_text();
        let state0 = WorldState::from_context(&context)
            .ok_or_else(|| ToolError::Internal("context has no 'agent at:' / 'objects:' world description".into()))?;
        let prompt = self
            .prompts
            .render(&self.spec.name, &[("instruction", &p.instruction), ("context", &context)]);
        let mut best: Option<PlanCandidate> = None;
        let mut order = 0;
        let mut current = prompt.clone();
        let mut temperature = self.spec.primary_temperature;
        let mut n_retries = 0;
        loop {
            s.set_step(n_retries + 1);
            let replies = s.draw_k_samples(&current, &self.cfg.params(temperature), self.spec.k_samples)?;
            for r in replies {
                let cand = match parse_plan(&r.text) {
                    Ok(plan) if !plan.is_empty() => {
                        let (valid, total) = state0.prefix_score(&plan);
                        PlanCandidate { order, plan: Some(plan), valid, total }
                    }
                    _ => PlanCandidate { order, plan: None, valid: 0, total: 0 },
                };
                s.event_with(
                    EventKind::Validation,
                    format!("plan {order}: {}/{}", cand.valid, cand.total),
                    json!({"parsed": cand.plan.is_some()}),
                );
                order += 1;
                if best.as_ref().map_or(true, |b| cand.beats(b)) {
                    best = Some(cand);
                }
            }
            let b = best.as_ref().expect("k >= 1");
            if b.fully_valid() || n_retries >= self.spec.max_retries {
                break;
            }
            let feedback = match b.plan.as_ref().and_then(|plan| state0.first_violation(plan)) {
                Some((i, action, reason)) => self.prompts.render(
                    "plan_retry",
                    &[("step", &(i + 1).to_string()), ("action", &action.to_string()), ("reason", &reason)],
                ),
                None => self.prompts.render(
                    "plan_retry",
                    &[("step", "1"), ("action", "(none)"), ("reason", "no plan could be parsed")],
                ),
            };
            n_retries += 1;
            temperature = self.spec.retry_temperature.unwrap_or(temperature);
            current = format!("{prompt}{feedback}");
        }
        let b = best.expect("k >= 1");
        let finish = if b.fully_valid() {
            FinishReason::Validated
        } else {
            FinishReason::Vote
        };
        let answer = b.plan.as_ref().map(|plan| render_plan(plan));
        Ok(ToolOutput::answered(answer, finish, n_retries + 1, n_retries))
    }
}

/// Unified-diff generation behind the validate loop.
pub struct ArtifactTool {
    spec: ToolSpec,
    cfg: ToolConfig,
    prompts: Arc<Prompts>,
}

impl ArtifactTool {
    pub fn new(cfg: ToolConfig, prompts: Arc<Prompts>) -> Self {
        Self {
            spec: ToolSpec::artifact(cfg.artifact_max_retries),
            cfg,
            prompts,
        }
    }
}

pub fn diff_validator(reply: &str) -> Result<String, String> {
    let body = strip_fence(reply);
    let doc = validate_diff(&body);
    if doc.is_valid_unified {
        Ok(body)
    } else {
        Err(doc.first_error.unwrap_or_else(|| "not a unified diff".into()))
    }
}

impl Tool for ArtifactTool {
    fn spec(&self) -> &ToolSpec {
        &self.spec
    }

    fn solve(&self, p: &ProblemInstance, s: &mut Session<'_>) -> Result<ToolOutput, ToolError> {
        let prompt = self
            .prompts
            .render(&self.spec.name, &[("instruction", &p.instruction), ("context", &p.context_text())]);
        let prompts = self.prompts.clone();
        let out = validate_loop(
            s,
            &prompt,
            |reason| prompts.render("diff_retry", &[("reason", reason)]),
            diff_validator,
            &self.spec,
            &self.cfg.params(self.spec.primary_temperature),
        )?;
        Ok(ToolOutput::answered(out.output, FinishReason::Validated, out.attempts, out.n_retries))
    }
}

/// K direct chain-of-thought samples with a modal vote.
pub struct FallbackTool {
    spec: ToolSpec,
    cfg: ToolConfig,
    prompts: Arc<Prompts>,
}

impl FallbackTool {
    pub fn new(cfg: ToolConfig, prompts: Arc<Prompts>) -> Self {
        Self {
            spec: ToolSpec::fallback(),
            cfg,
            prompts,
        }
    }
}

impl Tool for FallbackTool {
    fn spec(&self) -> &ToolSpec {
        &self.spec
    }

    fn solve(&self, p: &ProblemInstance, s: &mut Session<'_>) -> Result<ToolOutput, ToolError> {
        s.set_step(1);
        let (context, tables) = base_vars(p);
        let context = if tables.is_empty() { context } else { format!("{context}\n{tables}") };
        let prompt = self
            .prompts
            .render(&self.spec.name, &[("instruction", &p.instruction), ("context", &context)]);
        let replies = s.draw_k_samples(&prompt, &self.cfg.params(self.spec.primary_temperature), self.spec.k_samples)?;
        let answers: Vec<Option<String>> = replies.iter().map(|r| parse_final_answer(&r.text)).collect();
        Ok(ToolOutput::answered(modal_vote_original(&answers), FinishReason::Vote, 1, 0))
    }
}

/// Tools by name.
#[derive(Default)]
pub struct Toolbox {
    tools: BTreeMap<String, Box<dyn Tool>>,
}

impl Toolbox {
    pub fn standard(cfg: &ToolConfig, prompts: Arc<Prompts>) -> Self {
        let mut tb = Self::default();
        tb.insert(Box::new(CodeVoteTool::new(ToolSpec::symbolic(), cfg.clone(), prompts.clone())));
        tb.insert(Box::new(CodeVoteTool::new(ToolSpec::tabular(), cfg.clone(), prompts.clone())));
        tb.insert(Box::new(ForwardChainTool::new(cfg.clone(), prompts.clone())));
        tb.insert(Box::new(EvidenceTool::new(cfg.clone(), prompts.clone())));
        tb.insert(Box::new(ProceduralTool::new(cfg.clone(), prompts.clone())));
        tb.insert(Box::new(ArtifactTool::new(cfg.clone(), prompts.clone())));
        tb.insert(Box::new(FallbackTool::new(cfg.clone(), prompts)));
        tb
    }

    /// Registers `tool` under its name, replacing any previous entry.
    pub fn insert(&mut self, tool: Box<dyn Tool>) {
        self.tools.insert(tool.name().to_string(), tool);
    }

    pub fn get(&self, name: &str) -> Option<&dyn Tool> {
        self.tools.get(name).map(|t| t.as_ref())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tools.keys().map(String::as_str)
    }
}
