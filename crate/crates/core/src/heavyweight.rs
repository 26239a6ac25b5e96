//! Structured-state reasoning loop: goal tree, assumptions with dependency
//! cascade, evidence, decisions, conflicts, compressed trajectory,
//! checkpoints, regime and uncertainty, driven by a rule-based controller.

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::engines::fence::parse_final_answer;
use crate::gateway::{Backend, GatewayError, Purpose, SamplingParams, Session, DEFAULT_MAX_TOKENS};
use crate::problem::ProblemInstance;
use crate::prompts::Prompts;
use crate::tools::{FinishReason, SolveOutcome, ToolOutput};
use crate::trace::EventKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Regime {
    Explore,
    Execute,
    Verify,
    Recover,
    Consolidate,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Explore => "EXPLORE",
            Regime::Execute => "EXECUTE",
            Regime::Verify => "VERIFY",
            Regime::Recover => "RECOVER",
            Regime::Consolidate => "CONSOLIDATE",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The only regime changes the controller may make.
pub const TRANSITIONS: [(Regime, Regime); 6] = [
    (Regime::Explore, Regime::Execute),
    (Regime::Execute, Regime::Verify),
    (Regime::Execute, Regime::Recover),
    (Regime::Verify, Regime::Consolidate),
    (Regime::Verify, Regime::Recover),
    (Regime::Recover, Regime::Execute),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GoalStatus {
    #[default]
    Open,
    Active,
    Done,
    Blocked,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssumptionStatus {
    Active,
    Validated,
    Retracted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Confidence {
    Low,
    #[default]
    #[serde(alias = "medium")]
    Med,
    High,
}

impl Confidence {
    fn downgraded(self) -> Self {
        match self {
            Confidence::High => Confidence::Med,
            _ => Confidence::Low,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Minor,
    #[default]
    Major,
    Critical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Goal {
    pub id: String,
    pub text: String,
    pub status: GoalStatus,
    pub parent: Option<String>,
    pub children: Vec<String>,
    pub archived: bool,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assumption {
    pub id: String,
    pub text: String,
    pub justification: String,
    pub status: AssumptionStatus,
    pub dependents: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub id: String,
    pub text: String,
    pub provenance: String,
    pub confidence: Confidence,
    /// Assumptions this evidence supports.
    pub supports: Vec<String>,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub id: String,
    pub text: String,
    pub rationale: String,
    pub reversible: bool,
    pub pending: bool,
    pub tags: Vec<String>,
    pub flagged: bool,
}

impl Decision {
    pub fn has_tag(&self, tag: &str) -> bool {
        self.tags.iter().any(|t| t.eq_ignore_ascii_case(tag))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conflict {
    pub id: String,
    pub between: (String, String),
    pub resolved: bool,
    pub severity: Severity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Trajectory {
    /// Recent steps, verbatim, as (step number, text).
    pub recent: Vec<(u32, String)>,
    /// Summaries of older steps, oldest first.
    pub summaries: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FailureType {
    Logic,
    Arithmetic,
    Unsupported,
    Incomplete,
    Contradiction,
    Stalled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Health {
    Good,
    Caution,
    Critical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub failure_type: FailureType,
    pub affected: Vec<String>,
    pub severity: String,
    pub health: Health,
}

impl Diagnostic {
    /// Conservative default for unparseable inspector output.
    pub fn caution() -> Self {
        Self {
            failure_type: FailureType::Incomplete,
            affected: Vec::new(),
            severity: "low".into(),
            health: Health::Caution,
        }
    }

    /// Critical health needs named elements; otherwise it is only a caution.
    fn normalized(mut self) -> Self {
        if self.health == Health::Critical && self.affected.is_empty() {
            self.health = Health::Caution;
        }
        self
    }
}

/// Everything a checkpoint captures: the full state minus the checkpoint list
/// and controller counters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    goals: Vec<Goal>,
    assumptions: Vec<Assumption>,
    evidence: Vec<Evidence>,
    decisions: Vec<Decision>,
    conflicts: Vec<Conflict>,
    trajectory: Trajectory,
    regime: Regime,
    u: f64,
    /// Creation order of every element id.
    order: Vec<String>,
    seq: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementKind {
    Goal,
    Assumption,
    Evidence,
    Decision,
    Conflict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Counters {
    pub step: u32,
    pub steps_since_reflection: u32,
    pub steps_since_progress: u32,
    /// Conflicts added by the latest delta.
    pub new_conflicts: u32,
    pub diversify_used: bool,
    pub regime_entered: u32,
    pub last_inspection: Option<(u32, Diagnostic)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningState {
    core: Snapshot,
    checkpoints: Vec<Snapshot>,
    counters: Counters,
}

// ---- wire formats --------------------------------------------------------

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NewEvidence {
    pub id: Option<String>,
    pub text: String,
    pub provenance: String,
    pub confidence: Confidence,
    pub supports: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NewAssumption {
    pub id: Option<String>,
    pub text: String,
    pub justification: String,
    pub dependents: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NewDecision {
    pub id: Option<String>,
    pub text: String,
    pub rationale: String,
    pub reversible: bool,
    pub pending: bool,
    pub tags: Vec<String>,
}

impl Default for NewDecision {
    fn default() -> Self {
        Self {
            id: None,
            text: String::new(),
            rationale: String::new(),
            reversible: true,
            pending: false,
            tags: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NewGoal {
    pub id: Option<String>,
    pub text: String,
    pub parent: Option<String>,
    pub status: GoalStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalUpdate {
    pub id: String,
    pub status: GoalStatus,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NewConflict {
    pub id: Option<String>,
    pub between: Vec<String>,
    pub severity: Severity,
}

/// Elements extracted from one reasoning step.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StateDelta {
    pub evidence: Vec<NewEvidence>,
    pub assumptions: Vec<NewAssumption>,
    pub decisions: Vec<NewDecision>,
    pub goals: Vec<NewGoal>,
    pub goal_updates: Vec<GoalUpdate>,
    pub conflicts: Vec<NewConflict>,
    pub final_answer: Option<String>,
}

impl StateDelta {
    pub fn is_empty(&self) -> bool {
        *self == StateDelta::default()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum DeltaError {
    #[error("unknown element id {0:?}")]
    UnknownReference(String),
    #[error("duplicate element id {0:?}")]
    DuplicateId(String),
    #[error("conflict must name two distinct elements")]
    BadConflict,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ApplyReport {
    pub added: Vec<String>,
    pub progress: bool,
    pub new_conflicts: u32,
}

/// First JSON object embedded anywhere in `text`.
pub fn first_json_object(text: &str) -> Option<serde_json::Value> {
    for (i, _) in text.match_indices('{') {
        let mut it = serde_json::Deserializer::from_str(&text[i..]).into_iter::<serde_json::Value>();
        if let Some(Ok(v @ serde_json::Value::Object(_))) = it.next() {
            return Some(v);
        }
    }
    None
}

/// Lenient delta parse: anything unusable yields the empty delta.
pub fn parse_delta(reply: &str) -> StateDelta {
    first_json_object(reply)
        .and_then(|v| serde_json::from_value(v).ok())
        .unwrap_or_default()
}

/// Lenient diagnostic parse with the conservative caution default.
pub fn parse_diagnostic(reply: &str) -> Diagnostic {
    #[derive(Deserialize)]
    struct Wire {
        failure_type: String,
        #[serde(default)]
        affected: Vec<String>,
        #[serde(default)]
        severity: Option<String>,
        health: String,
    }
    let Some(wire) = first_json_object(reply).and_then(|v| serde_json::from_value::<Wire>(v).ok()) else {
        return Diagnostic::caution();
    };
    let ft = serde_json::from_value::<FailureType>(json!(wire.failure_type.trim().to_lowercase()));
    let health = serde_json::from_value::<Health>(json!(wire.health.trim().to_lowercase()));
    match (ft, health) {
        (Ok(failure_type), Ok(health)) => Diagnostic {
            failure_type,
            affected: wire.affected,
            severity: wire.severity.unwrap_or_else(|| "medium".into()),
            health,
        }
        .normalized(),
        _ => Diagnostic::caution(),
    }
}

// ---- state ---------------------------------------------------------------

pub const ROOT_GOAL: &str = "g0";

impl ReasoningState {
    /// One open root goal from the instruction, EXPLORE, and checkpoint 0.
    pub fn init(p: &ProblemInstance) -> Self {
        let text = if p.instruction.trim().is_empty() {
            "(no instruction given)".to_string()
        } else {
            p.instruction.trim().to_string()
        };
        let mut core = Snapshot {
            goals: vec![Goal {
                id: ROOT_GOAL.into(),
                text,
                status: GoalStatus::Open,
                parent: None,
                children: Vec::new(),
                archived: false,
                flagged: false,
            }],
            assumptions: Vec::new(),
            evidence: Vec::new(),
            decisions: Vec::new(),
            conflicts: Vec::new(),
            trajectory: Trajectory::default(),
            regime: Regime::Explore,
            u: 0.0,
            order: vec![ROOT_GOAL.into()],
            seq: 1,
        };
        core.u = uncertainty(&core);
        Self {
            checkpoints: vec![core.clone()],
            core,
            counters: Counters::default(),
        }
    }

    pub fn goals(&self) -> &[Goal] {
        &self.core.goals
    }

    pub fn assumptions(&self) -> &[Assumption] {
        &self.core.assumptions
    }

    pub fn evidence(&self) -> &[Evidence] {
        &self.core.evidence
    }

    pub fn decisions(&self) -> &[Decision] {
        &self.core.decisions
    }

    pub fn conflicts(&self) -> &[Conflict] {
        &self.core.conflicts
    }

    pub fn trajectory(&self) -> &Trajectory {
        &self.core.trajectory
    }

    pub fn checkpoints(&self) -> &[Snapshot] {
        &self.checkpoints
    }

    pub fn snapshot(&self) -> &Snapshot {
        &self.core
    }

    pub fn regime(&self) -> Regime {
        self.core.regime
    }

    pub fn u(&self) -> f64 {
        self.core.u
    }

    pub fn counters(&self) -> &Counters {
        &self.counters
    }

    pub fn is_complete(&self) -> bool {
        self.core.regime == Regime::Consolidate
    }

    pub fn kind_of(&self, id: &str) -> Option<ElementKind> {
        kind_of(&self.core, id)
    }

    fn touch(&mut self) {
        self.core.u = uncertainty(&self.core);
    }

    /// Sets the regime. Callers are expected to pass the result of
    /// [`update_regime`]; the transition table is not re-checked here.
    pub fn set_regime(&mut self, r: Regime) {
        if r != self.core.regime {
            self.core.regime = r;
            self.counters.regime_entered = self.counters.step;
            self.touch();
        }
    }

    pub fn begin_step(&mut self, step: u32) {
        self.counters.step = step;
        self.counters.new_conflicts = 0;
    }

    pub fn record_step_text(&mut self, step: u32, text: &str) {
        self.core.trajectory.recent.push((step, text.to_string()));
        self.touch();
    }

    /// Applies a delta atomically: either every element lands with all
    /// references resolved, or the state is left untouched.
    pub fn apply_delta(&mut self, delta: &StateDelta) -> Result<ApplyReport, DeltaError> {
        let mut next = self.core.clone();
        let mut report = ApplyReport::default();
        let fresh = |next: &mut Snapshot, given: &Option<String>, prefix: &str| -> Result<String, DeltaError> {
            let id = match given.as_deref().map(str::trim).filter(|s| !s.is_empty()) {
                Some(id) => {
                    if kind_of(next, id).is_some() {
                        return Err(DeltaError::DuplicateId(id.to_string()));
                    }
                    id.to_string()
                }
                None => loop {
                    let candidate = format!("{prefix}{}", next.seq);
                    next.seq += 1;
                    if kind_of(next, &candidate).is_none() {
                        break candidate;
                    }
                },
            };
            next.order.push(id.clone());
            Ok(id)
        };

        // Ids first, so that references inside the delta resolve.
        let mut goal_ids = Vec::new();
        for g in &delta.goals {
            let id = fresh(&mut next, &g.id, "g")?;
            next.goals.push(Goal {
                id: id.clone(),
                text: g.text.clone(),
                status: g.status,
                parent: None,
                children: Vec::new(),
                archived: false,
                flagged: false,
            });
            goal_ids.push(id);
        }
        for a in &delta.assumptions {
            let id = fresh(&mut next, &a.id, "a")?;
            next.assumptions.push(Assumption {
                id,
                text: a.text.clone(),
                justification: a.justification.clone(),
                status: AssumptionStatus::Active,
                dependents: a.dependents.clone(),
            });
        }
        for e in &delta.evidence {
            let id = fresh(&mut next, &e.id, "e")?;
            next.evidence.push(Evidence {
                id,
                text: e.text.clone(),
                provenance: e.provenance.clone(),
                confidence: e.confidence,
                supports: e.supports.clone(),
                flagged: false,
            });
            report.progress = true;
        }
        let mut decisions: Vec<NewDecision> = delta.decisions.clone();
        if let Some(ans) = delta.final_answer.as_deref().map(str::trim).filter(|a| !a.is_empty()) {
            // Committing an answer is irreversible and waits for inspection.
            decisions.push(NewDecision {
                text: ans.to_string(),
                rationale: "final answer".into(),
                reversible: false,
                pending: true,
                tags: vec!["final_answer".into()],
                ..NewDecision::default()
            });
        }
        for d in &decisions {
            let id = fresh(&mut next, &d.id, "d")?;
            next.decisions.push(Decision {
                id,
                text: d.text.clone(),
                rationale: d.rationale.clone(),
                reversible: d.reversible,
                pending: d.pending,
                tags: d.tags.clone(),
                flagged: false,
            });
        }
        for c in &delta.conflicts {
            let id = fresh(&mut next, &c.id, "c")?;
            let [a, b] = c.between.as_slice() else {
                return Err(DeltaError::BadConflict);
            };
            if a == b {
                return Err(DeltaError::BadConflict);
            }
            next.conflicts.push(Conflict {
                id,
                between: (a.clone(), b.clone()),
                resolved: false,
                severity: c.severity,
            });
            report.new_conflicts += 1;
        }

        // Resolve and check references.
        for (g, id) in delta.goals.iter().zip(&goal_ids) {
            let parent = g.parent.clone().unwrap_or_else(|| ROOT_GOAL.to_string());
            let Some(pi) = next.goals.iter().position(|x| x.id == parent) else {
                return Err(DeltaError::UnknownReference(parent));
            };
            next.goals[pi].children.push(id.clone());
            let gi = next.goals.iter().position(|x| &x.id == id).expect("just added");
            next.goals[gi].parent = Some(parent);
        }
        for u in &delta.goal_updates {
            let Some(g) = next.goals.iter_mut().find(|g| g.id == u.id) else {
                return Err(DeltaError::UnknownReference(u.id.clone()));
            };
            if g.status != u.status {
                g.status = u.status;
                report.progress = true;
            }
        }
        let check = |next: &Snapshot, id: &str| {
            if kind_of(next, id).is_some() {
                Ok(())
            } else {
                Err(DeltaError::UnknownReference(id.to_string()))
            }
        };
        for a in &next.assumptions {
            for d in &a.dependents {
                check(&next, d)?;
            }
        }
        for e in &next.evidence {
            for s in &e.supports {
                if kind_of(&next, s) != Some(ElementKind::Assumption) {
                    return Err(DeltaError::UnknownReference(s.clone()));
                }
            }
        }
        for c in &next.conflicts {
            check(&next, &c.between.0)?;
            check(&next, &c.between.1)?;
        }

        report.added = next.order[self.core.order.len()..].to_vec();
        next.u = uncertainty(&next);
        self.core = next;
        self.counters.new_conflicts += report.new_conflicts;
        Ok(report)
    }

    /// Retracts assumption `id` and cascades through dependents: dependent
    /// assumptions are retracted in turn, everything else is flagged.
    /// Returns the ids touched, or `None` if `id` is not an assumption.
    pub fn retract(&mut self, id: &str) -> Option<Vec<String>> {
        if kind_of(&self.core, id) != Some(ElementKind::Assumption) {
            return None;
        }
        let mut touched = Vec::new();
        let mut seen = HashSet::new();
        let mut stack = vec![id.to_string()];
        while let Some(cur) = stack.pop() {
            if !seen.insert(cur.clone()) {
                continue;
            }
            touched.push(cur.clone());
            match kind_of(&self.core, &cur) {
                Some(ElementKind::Assumption) => {
                    let a = self.core.assumptions.iter_mut().find(|a| a.id == cur).expect("kind");
                    a.status = AssumptionStatus::Retracted;
                    stack.extend(a.dependents.iter().rev().cloned());
                }
                Some(ElementKind::Evidence) => {
                    self.core.evidence.iter_mut().find(|e| e.id == cur).expect("kind").flagged = true;
                }
                Some(ElementKind::Decision) => {
                    self.core.decisions.iter_mut().find(|d| d.id == cur).expect("kind").flagged = true;
                }
                Some(ElementKind::Goal) => {
                    self.core.goals.iter_mut().find(|g| g.id == cur).expect("kind").flagged = true;
                }
                Some(ElementKind::Conflict) | None => {}
            }
        }
        self.touch();
        Some(touched)
    }

    /// Flags a non-assumption element, or retracts an assumption.
    fn discard(&mut self, id: &str) -> bool {
        match kind_of(&self.core, id) {
            Some(ElementKind::Assumption) => self.retract(id).is_some(),
            Some(ElementKind::Evidence) => {
                self.core.evidence.iter_mut().find(|e| e.id == id).expect("kind").flagged = true;
                true
            }
            Some(ElementKind::Decision) => {
                self.core.decisions.iter_mut().find(|d| d.id == id).expect("kind").flagged = true;
                true
            }
            Some(ElementKind::Goal) => {
                self.core.goals.iter_mut().find(|g| g.id == id).expect("kind").flagged = true;
                true
            }
            _ => false,
        }
    }

    /// One confidence level down for evidence; validated assumptions revert
    /// to active.
    pub fn downgrade(&mut self, ids: &[String]) -> usize {
        let mut n = 0;
        for id in ids {
            if let Some(e) = self.core.evidence.iter_mut().find(|e| &e.id == id) {
                e.confidence = e.confidence.downgraded();
                n += 1;
            } else if let Some(a) = self.core.assumptions.iter_mut().find(|a| &a.id == id) {
                if a.status == AssumptionStatus::Validated {
                    a.status = AssumptionStatus::Active;
                    n += 1;
                }
            }
        }
        self.touch();
        n
    }

    pub fn resolve_conflict(&mut self, conflict_id: &str, loser: Option<&str>) -> bool {
        let Some(c) = self.core.conflicts.iter_mut().find(|c| c.id == conflict_id) else {
            return false;
        };
        c.resolved = true;
        if let Some(l) = loser {
            self.discard(l);
        }
        self.touch();
        true
    }

    pub fn checkpoint(&mut self) -> usize {
        self.checkpoints.push(self.core.clone());
        self.checkpoints.len() - 1
    }

    /// Restores checkpoint `idx` exactly. The checkpoint list is kept.
    pub fn rollback(&mut self, idx: usize) -> bool {
        match self.checkpoints.get(idx) {
            Some(snap) => {
                self.core = snap.clone();
                true
            }
            None => false,
        }
    }

    pub fn add_decision(&mut self, text: &str, tags: &[&str]) -> String {
        let id = loop {
            let c = format!("d{}", self.core.seq);
            self.core.seq += 1;
            if kind_of(&self.core, &c).is_none() {
                break c;
            }
        };
        self.core.order.push(id.clone());
        self.core.decisions.push(Decision {
            id: id.clone(),
            text: text.to_string(),
            rationale: String::new(),
            reversible: true,
            pending: false,
            tags: tags.iter().map(|t| t.to_string()).collect(),
            flagged: false,
        });
        self.touch();
        id
    }

    /// Active assumptions backed by unflagged high-confidence evidence become
    /// validated. Returns how many were promoted.
    pub fn promote_supported(&mut self) -> usize {
        let backed: HashSet<String> = self
            .core
            .evidence
            .iter()
            .filter(|e| !e.flagged && e.confidence == Confidence::High)
            .flat_map(|e| e.supports.iter().cloned())
            .collect();
        let mut n = 0;
        for a in &mut self.core.assumptions {
            if a.status == AssumptionStatus::Active && backed.contains(&a.id) {
                a.status = AssumptionStatus::Validated;
                n += 1;
            }
        }
        self.touch();
        n
    }

    /// Archives finished sub-goals (the root is never archived).
    pub fn archive_done(&mut self) -> usize {
        let mut n = 0;
        for g in &mut self.core.goals {
            if g.parent.is_some() && g.status == GoalStatus::Done && !g.archived {
                g.archived = true;
                n += 1;
            }
        }
        self.touch();
        n
    }

    /// Keeps the last `keep` steps verbatim and folds older ones into a
    /// summary block produced by `summarize`.
    pub fn compress_trajectory<F>(&mut self, keep: usize, summarize: F) -> bool
    where
        F: FnOnce(&[(u32, String)]) -> String,
    {
        let recent = &mut self.core.trajectory.recent;
        if recent.len() <= keep {
            return false;
        }
        let older: Vec<(u32, String)> = recent.drain(..recent.len() - keep).collect();
        let summary = summarize(&older);
        self.core.trajectory.summaries.push(summary);
        self.touch();
        true
    }

    pub fn reset_counters(&mut self) {
        self.counters.steps_since_reflection = 0;
        self.counters.steps_since_progress = 0;
    }

    pub fn note_inspection(&mut self, dx: &Diagnostic) {
        self.counters.last_inspection = Some((self.counters.step, dx.clone()));
        if dx.health == Health::Good {
            for d in &mut self.core.decisions {
                d.pending = false;
            }
            self.touch();
        }
    }

    pub fn note_step_outcome(&mut self, progress: bool) {
        self.counters.steps_since_reflection += 1;
        if progress {
            self.counters.steps_since_progress = 0;
        } else {
            self.counters.steps_since_progress += 1;
        }
    }

    pub fn done_goal_count(&self) -> usize {
        self.core.goals.iter().filter(|g| g.status == GoalStatus::Done).count()
    }

    /// Latest unflagged final-answer decision, else the marker answer of the
    /// most recent step.
    pub fn compile_answer(&self) -> Option<String> {
        self.core
            .decisions
            .iter()
            .rev()
            .find(|d| d.has_tag("final_answer") && !d.flagged)
            .map(|d| d.text.clone())
            .or_else(|| {
                self.core
                    .trajectory
                    .recent
                    .last()
                    .and_then(|(_, t)| parse_final_answer(t))
            })
    }

    /// Every id reference resolves.
    pub fn check_integrity(&self) -> Result<(), String> {
        let c = &self.core;
        let exists = |id: &str| kind_of(c, id).is_some();
        let mut ids = HashSet::new();
        for id in all_ids(c) {
            if !ids.insert(id.clone()) {
                return Err(format!("duplicate id {id}"));
            }
        }
        for a in &c.assumptions {
            if let Some(d) = a.dependents.iter().find(|d| !exists(d)) {
                return Err(format!("{} depends on missing {d}", a.id));
            }
        }
        for e in &c.evidence {
            if let Some(s) = e.supports.iter().find(|s| kind_of(c, s) != Some(ElementKind::Assumption)) {
                return Err(format!("{} supports missing {s}", e.id));
            }
        }
        for g in &c.goals {
            if let Some(p) = &g.parent {
                if kind_of(c, p) != Some(ElementKind::Goal) {
                    return Err(format!("{} has missing parent {p}", g.id));
                }
            }
            if let Some(ch) = g.children.iter().find(|ch| kind_of(c, ch) != Some(ElementKind::Goal)) {
                return Err(format!("{} has missing child {ch}", g.id));
            }
        }
        for k in &c.conflicts {
            if !exists(&k.between.0) || !exists(&k.between.1) {
                return Err(format!("{} names a missing element", k.id));
            }
        }
        Ok(())
    }

    /// No live element is reachable through dependents from a retracted
    /// assumption.
    pub fn check_cascade(&self) -> Result<(), String> {
        let c = &self.core;
        for root in c.assumptions.iter().filter(|a| a.status == AssumptionStatus::Retracted) {
            let mut seen = HashSet::new();
            let mut stack: Vec<&str> = root.dependents.iter().map(String::as_str).collect();
            while let Some(id) = stack.pop() {
                if !seen.insert(id) {
                    continue;
                }
                let live = match kind_of(c, id) {
                    Some(ElementKind::Assumption) => {
                        let a = c.assumptions.iter().find(|a| a.id == id).expect("kind");
                        stack.extend(a.dependents.iter().map(String::as_str));
                        a.status != AssumptionStatus::Retracted
                    }
                    Some(ElementKind::Evidence) => !c.evidence.iter().find(|e| e.id == id).expect("kind").flagged,
                    Some(ElementKind::Decision) => !c.decisions.iter().find(|d| d.id == id).expect("kind").flagged,
                    Some(ElementKind::Goal) => !c.goals.iter().find(|g| g.id == id).expect("kind").flagged,
                    _ => false,
                };
                if live {
                    return Err(format!("{id} is live but depends on retracted {}", root.id));
                }
            }
        }
        Ok(())
    }

    /// Deterministic plain-text rendering of the whole state, used by Inspect.
    pub fn render(&self) -> String {
        let c = &self.core;
        let mut out = format!("regime: {}\nuncertainty: {:.2}\n", c.regime, c.u);
        out.push_str("goals:\n");
        for g in &c.goals {
            out.push_str(&format!(
                "- {} [{:?}{}{}] {}\n",
                g.id,
                g.status,
                if g.archived { ", archived" } else { "" },
                if g.flagged { ", flagged" } else { "" },
                g.text
            ));
        }
        out.push_str("assumptions:\n");
        for a in &c.assumptions {
            out.push_str(&format!("- {} [{:?}] {} (because: {})\n", a.id, a.status, a.text, a.justification));
        }
        out.push_str("evidence:\n");
        for e in &c.evidence {
            out.push_str(&format!(
                "- {} [{:?}{}] {} (source: {})\n",
                e.id,
                e.confidence,
                if e.flagged { ", flagged" } else { "" },
                e.text,
                e.provenance
            ));
        }
        out.push_str("decisions:\n");
        for d in &c.decisions {
            out.push_str(&format!(
                "- {} [{}{}] {}\n",
                d.id,
                d.tags.join(","),
                if d.flagged { ", flagged" } else { "" },
                d.text
            ));
        }
        out.push_str("conflicts:\n");
        for k in &c.conflicts {
            out.push_str(&format!(
                "- {} {} vs {} [{:?}{}]\n",
                k.id,
                k.between.0,
                k.between.1,
                k.severity,
                if k.resolved { ", resolved" } else { "" }
            ));
        }
        out
    }
}

fn all_ids(c: &Snapshot) -> impl Iterator<Item = &String> {
    c.goals
        .iter()
        .map(|x| &x.id)
        .chain(c.assumptions.iter().map(|x| &x.id))
        .chain(c.evidence.iter().map(|x| &x.id))
        .chain(c.decisions.iter().map(|x| &x.id))
        .chain(c.conflicts.iter().map(|x| &x.id))
}

fn kind_of(c: &Snapshot, id: &str) -> Option<ElementKind> {
    if c.goals.iter().any(|x| x.id == id) {
        Some(ElementKind::Goal)
    } else if c.assumptions.iter().any(|x| x.id == id) {
        Some(ElementKind::Assumption)
    } else if c.evidence.iter().any(|x| x.id == id) {
        Some(ElementKind::Evidence)
    } else if c.decisions.iter().any(|x| x.id == id) {
        Some(ElementKind::Decision)
    } else if c.conflicts.iter().any(|x| x.id == id) {
        Some(ElementKind::Conflict)
    } else {
        None
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Unweighted mean of the four uncertainty signals.
pub fn uncertainty_signals(c: &Snapshot) -> [f64; 4] {
    let live_a: Vec<_> = c.assumptions.iter().filter(|a| a.status != AssumptionStatus::Retracted).collect();
    let unvalidated = ratio(
        live_a.iter().filter(|a| a.status == AssumptionStatus::Active).count(),
        live_a.len(),
    );
    let open_conflicts = c.conflicts.iter().filter(|k| !k.resolved).count().min(3);
    let conflict = open_conflicts as f64 / 3.0;
    let live_e: Vec<_> = c.evidence.iter().filter(|e| !e.flagged).collect();
    let low = ratio(
        live_e.iter().filter(|e| e.confidence == Confidence::Low).count(),
        live_e.len(),
    );
    let live_g: Vec<_> = c.goals.iter().filter(|g| !g.archived).collect();
    let blocked = ratio(
        live_g.iter().filter(|g| g.status == GoalStatus::Blocked).count(),
        live_g.len(),
    );
    [unvalidated, conflict, low, blocked]
}

pub fn uncertainty(c: &Snapshot) -> f64 {
    uncertainty_signals(c).iter().sum::<f64>() / 4.0
}

pub fn recompute_uncertainty(s: &ReasoningState) -> f64 {
    uncertainty(&s.core)
}

// ---- controller and regimes ---------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Operator {
    Inspect,
    Stabilize,
    Transform,
    Diversify,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    NewConflict,
    HighUncertainty,
    ReflectionDue,
    Stalled,
    PendingDecision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeavyConfig {
    pub theta_u: f64,
    pub k_max: u32,
    pub k_stall: u32,
    pub t_max: u32,
    pub n_branches: usize,
    pub k_branch_steps: u32,
    pub keep_recent: usize,
    /// Total token budget for a run; `None` means steps are the only limit.
    pub token_budget: Option<u64>,
    /// Tokens that must remain in the budget before Diversify may run.
    pub diversify_reserve_tokens: u64,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for HeavyConfig {
    fn default() -> Self {
        Self {
            theta_u: 0.6,
            k_max: 5,
            k_stall: 4,
            t_max: 20,
            n_branches: 3,
            k_branch_steps: 5,
            keep_recent: 5,
            token_budget: None,
            diversify_reserve_tokens: 20_000,
            temperature: 0.6,
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }
}

/// Highest-priority trigger that fires, if any. Pure.
pub fn controller_step(s: &ReasoningState, cfg: &HeavyConfig) -> Option<(Operator, Trigger)> {
    let k = &s.counters;
    if k.new_conflicts > 0 {
        Some((Operator::Inspect, Trigger::NewConflict))
    } else if s.core.u > cfg.theta_u {
        Some((Operator::Inspect, Trigger::HighUncertainty))
    } else if k.steps_since_reflection > cfg.k_max {
        Some((Operator::Stabilize, Trigger::ReflectionDue))
    } else if k.steps_since_progress > cfg.k_stall {
        Some((Operator::Diversify, Trigger::Stalled))
    } else if s
        .core
        .decisions
        .iter()
        .any(|d| d.pending && !d.reversible && !d.flagged)
    {
        Some((Operator::Inspect, Trigger::PendingDecision))
    } else {
        None
    }
}

fn has_committed_plan(c: &Snapshot) -> bool {
    c.decisions.iter().any(|d| !d.flagged && d.has_tag("strategy"))
        && c.goals
            .iter()
            .any(|g| g.parent.is_some() && g.status == GoalStatus::Active && !g.flagged)
}

fn leaf_progress(c: &Snapshot) -> (usize, usize, bool) {
    let leaves: Vec<&Goal> = c.goals.iter().filter(|g| g.children.is_empty()).collect();
    let done = leaves.iter().filter(|g| g.status == GoalStatus::Done).count();
    let blocked = leaves.iter().any(|g| g.status == GoalStatus::Blocked);
    (done, leaves.len(), blocked)
}

fn inspection_since_entry(s: &ReasoningState) -> Option<&Diagnostic> {
    match &s.counters.last_inspection {
        Some((step, dx)) if *step >= s.counters.regime_entered => Some(dx),
        _ => None,
    }
}

fn critical_conflict(c: &Snapshot) -> bool {
    c.conflicts.iter().any(|k| !k.resolved && k.severity == Severity::Critical)
}

/// Next regime under the six transition rules; unchanged if none applies.
pub fn update_regime(s: &ReasoningState) -> Regime {
    let c = &s.core;
    match c.regime {
        Regime::Explore if has_committed_plan(c) => Regime::Execute,
        Regime::Execute => {
            let critical_now = matches!(
                &s.counters.last_inspection,
                Some((step, dx)) if *step == s.counters.step && dx.health == Health::Critical
            );
            let (done, total, blocked) = leaf_progress(c);
            if critical_now || critical_conflict(c) {
                Regime::Recover
            } else if total > 0 && done * 4 >= total * 3 && !blocked {
                Regime::Verify
            } else {
                Regime::Execute
            }
        }
        Regime::Verify => match inspection_since_entry(s) {
            Some(dx) if dx.health == Health::Good => Regime::Consolidate,
            Some(_) => Regime::Recover,
            None => Regime::Verify,
        },
        Regime::Recover if c.u < 0.4 && !critical_conflict(c) => Regime::Execute,
        r => r,
    }
}

// ---- view ---------------------------------------------------------------

/// Regime-shaped prompt view of the state. Deterministic.
pub fn compile_view(s: &ReasoningState, regime: Regime) -> String {
    let c = &s.core;
    let mut out = String::new();
    let root = &c.goals[0];
    out.push_str(&format!("# Problem\n{}\n\n", root.text));

    if regime == Regime::Recover {
        out.push_str("# Diagnosis\n");
        match &s.counters.last_inspection {
            Some((step, dx)) => out.push_str(&format!(
                "step {step}: {:?} ({}), health {:?}, affected: {}\n",
                dx.failure_type,
                dx.severity,
                dx.health,
                dx.affected.join(", ")
            )),
            None => out.push_str("no inspection recorded\n"),
        }
        out.push_str("# Failed goals\n");
        for g in c.goals.iter().filter(|g| g.status == GoalStatus::Blocked || g.flagged) {
            out.push_str(&format!("- {} {}\n", g.id, g.text));
        }
        out.push('\n');
    }

    out.push_str("# Goals\n");
    for g in c.goals.iter().skip(1).filter(|g| !g.archived) {
        if regime == Regime::Execute && g.status == GoalStatus::Done {
            continue;
        }
        out.push_str(&format!("- {} [{:?}] {}\n", g.id, g.status, g.text));
    }

    let live_a: Vec<_> = c.assumptions.iter().filter(|a| a.status != AssumptionStatus::Retracted).collect();
    if !live_a.is_empty() {
        if regime == Regime::Verify {
            out.push_str("\n# Claims to challenge\n");
        } else {
            out.push_str("\n# Assumptions\n");
        }
        for a in live_a {
            out.push_str(&format!("- {} [{:?}] {}\n", a.id, a.status, a.text));
        }
    }
    let live_e: Vec<_> = c.evidence.iter().filter(|e| !e.flagged).collect();
    if !live_e.is_empty() {
        out.push_str("\n# Evidence\n");
        for e in live_e {
            out.push_str(&format!("- {} [{:?}] {}\n", e.id, e.confidence, e.text));
        }
    }
    let live_d: Vec<_> = c.decisions.iter().filter(|d| !d.flagged).collect();
    if !live_d.is_empty() {
        out.push_str("\n# Decisions\n");
        for d in live_d {
            out.push_str(&format!("- {} {}\n", d.id, d.text));
        }
    }
    let conflicts: Vec<_> = c
        .conflicts
        .iter()
        .filter(|k| !(regime == Regime::Execute && k.resolved))
        .collect();
    if !conflicts.is_empty() {
        out.push_str("\n# Conflicts\n");
        for k in conflicts {
            out.push_str(&format!(
                "- {}: {} vs {}{}\n",
                k.id,
                k.between.0,
                k.between.1,
                if k.resolved { " (resolved)" } else { "" }
            ));
        }
    }
    if !c.trajectory.summaries.is_empty() {
        out.push_str("\n# Earlier steps (summary)\n");
        for sm in &c.trajectory.summaries {
            out.push_str(sm);
            out.push('\n');
        }
    }
    if !c.trajectory.recent.is_empty() {
        out.push_str("\n# Recent steps\n");
        for (n, t) in &c.trajectory.recent {
            out.push_str(&format!("[{n}] {t}\n"));
        }
    }
    out
}

// ---- operators -----------------------------------------------------------

/// Model access for the operators: session plus prompts and sampling.
pub struct Engine<'s, 'b> {
    pub session: &'s mut Session<'b>,
    pub prompts: &'s Prompts,
    pub cfg: &'s HeavyConfig,
}

impl Engine<'_, '_> {
    fn params(&self, temperature: f64) -> SamplingParams {
        SamplingParams {
            temperature,
            top_p: 1.0,
            max_tokens: self.cfg.max_tokens,
            stop_sequences: Vec::new(),
        }
    }

    fn ids(s: &ReasoningState) -> String {
        all_ids(&s.core).cloned().collect::<Vec<_>>().join(", ")
    }

    /// One extraction call; any parse failure gives the empty delta.
    pub fn extract_delta(&mut self, s: &ReasoningState, step_text: &str) -> Result<StateDelta, GatewayError> {
        let prompt = self
            .prompts
            .render("hw_extract", &[("ids", &Self::ids(s)), ("step", step_text)]);
        let reply = self.session.generate(&prompt, &self.params(0.0), Purpose::Extract)?;
        Ok(parse_delta(&reply.text))
    }

    /// Generate a step, extract its delta and apply it. Returns whether the
    /// step made progress.
    pub fn reasoning_step(&mut self, s: &mut ReasoningState, step: u32) -> Result<bool, GatewayError> {
        s.begin_step(step);
        let view = compile_view(s, s.regime());
        let prompt = self
            .prompts
            .render("hw_step", &[("regime", s.regime().as_str()), ("view", &view)]);
        let reply = self.session.generate(&prompt, &self.params(self.cfg.temperature), Purpose::Generate)?;
        self.session.event(EventKind::Thought, reply.text.clone());
        s.record_step_text(step, &reply.text);
        let delta = self.extract_delta(s, &reply.text)?;
        let progress = match s.apply_delta(&delta) {
            Ok(report) => {
                self.session.event_with(
                    EventKind::Observation,
                    "delta applied",
                    json!({"added": report.added, "new_conflicts": report.new_conflicts}),
                );
                report.progress
            }
            Err(e) => {
                self.session.event(EventKind::Note, format!("delta rejected: {e}"));
                false
            }
        };
        s.note_step_outcome(progress);
        Ok(progress)
    }

    pub fn op_inspect(&mut self, s: &mut ReasoningState) -> Result<Diagnostic, GatewayError> {
        let prompt = self.prompts.render("hw_inspect", &[("state", &s.render())]);
        let reply = self.session.generate(&prompt, &self.params(0.0), Purpose::Inspect)?;
        let dx = parse_diagnostic(&reply.text);
        s.note_inspection(&dx);
        self.session.event_with(
            EventKind::Reflection,
            format!("inspect: {:?}", dx.health),
            json!({
                "diagnostic": dx,
                "verdict": if dx.health == Health::Good { "CORRECT" } else { "INCORRECT" },
            }),
        );
        Ok(dx)
    }

    pub fn op_transform(&mut self, s: &mut ReasoningState, dx: &Diagnostic) -> Result<(), GatewayError> {
        let known: Vec<String> = dx.affected.iter().filter(|id| s.kind_of(id).is_some()).cloned().collect();
        if known.is_empty() && dx.failure_type != FailureType::Stalled {
            tracing::warn!(affected = ?dx.affected, "transform: no affected element exists");
            self.session.event(EventKind::Note, "transform: affected ids not found; no-op");
            return Ok(());
        }
        match dx.failure_type {
            FailureType::Unsupported => {
                for id in &known {
                    if s.kind_of(id) == Some(ElementKind::Assumption) {
                        if let Some(touched) = s.retract(id) {
                            self.session.event_with(EventKind::Backtrack, format!("retract {id}"), json!(touched));
                        }
                    }
                }
            }
            FailureType::Contradiction => self.resolve(s, &known)?,
            FailureType::Stalled => self.rollback_and_replan(s),
            FailureType::Logic | FailureType::Arithmetic | FailureType::Incomplete => {
                let n = s.downgrade(&known);
                self.session.event(EventKind::Note, format!("downgraded {n} elements"));
            }
        }
        Ok(())
    }

    fn rollback_and_replan(&mut self, s: &mut ReasoningState) {
        let last = s.checkpoints().len() - 1;
        s.rollback(last);
        let id = s.add_decision("replan: try a different strategy", &["replan"]);
        self.session.event_with(EventKind::Backtrack, format!("rollback to checkpoint {last}"), json!({"decision": id}));
    }

    fn resolve(&mut self, s: &mut ReasoningState, affected: &[String]) -> Result<(), GatewayError> {
        let conflict = s
            .conflicts()
            .iter()
            .find(|c| !c.resolved && (affected.contains(&c.id) || affected.contains(&c.between.0) || affected.contains(&c.between.1)))
            .cloned();
        let (cid, a, b) = match conflict {
            Some(c) => (Some(c.id.clone()), c.between.0.clone(), c.between.1.clone()),
            None => {
                let pair: Vec<&String> = affected.iter().filter(|id| s.kind_of(id) != Some(ElementKind::Conflict)).collect();
                match pair.as_slice() {
                    [a, b, ..] => (None, (*a).clone(), (*b).clone()),
                    _ => {
                        self.session.event(EventKind::Note, "contradiction without two elements; no-op");
                        return Ok(());
                    }
                }
            }
        };
        let text_of = |id: &str| -> String {
            let c = s.snapshot();
            c.assumptions.iter().find(|x| x.id == id).map(|x| x.text.clone())
                .or_else(|| c.evidence.iter().find(|x| x.id == id).map(|x| x.text.clone()))
                .or_else(|| c.decisions.iter().find(|x| x.id == id).map(|x| x.text.clone()))
                .or_else(|| c.goals.iter().find(|x| x.id == id).map(|x| x.text.clone()))
                .unwrap_or_default()
        };
        let prompt = self.prompts.render(
            "hw_resolve",
            &[("a", &a), ("a_text", &text_of(&a)), ("b", &b), ("b_text", &text_of(&b))],
        );
        let reply = self.session.generate(&prompt, &self.params(0.0), Purpose::Verify)?;
        let keep = first_json_object(&reply.text)
            .and_then(|v| v.get("keep").and_then(|k| k.as_str()).map(str::to_string));
        let newer = {
            let order = &s.snapshot().order;
            let pa = order.iter().position(|x| *x == a);
            let pb = order.iter().position(|x| *x == b);
            if pa > pb { a.clone() } else { b.clone() }
        };
        let loser = match keep.as_deref() {
            Some(k) if k == a => b.clone(),
            Some(k) if k == b => a.clone(),
            _ => newer,
        };
        self.session
            .event_with(EventKind::Contradiction, format!("{a} vs {b}: discard {loser}"), json!({"keep": keep}));
        match cid {
            Some(cid) => {
                s.resolve_conflict(&cid, Some(&loser));
            }
            None => {
                s.discard(&loser);
            }
        }
        Ok(())
    }

    pub fn op_stabilize(&mut self, s: &mut ReasoningState) {
        let keep = self.cfg.keep_recent;
        if s.trajectory().recent.len() > keep {
            let older: Vec<(u32, String)> = s.trajectory().recent[..s.trajectory().recent.len() - keep].to_vec();
            let steps = older.iter().map(|(n, t)| format!("[{n}] {t}")).collect::<Vec<_>>().join("\n");
            let prompt = self.prompts.render("hw_summarize", &[("steps", &steps)]);
            let summary = match self.session.generate(&prompt, &self.params(0.0), Purpose::Extract) {
                Ok(r) if !r.text.trim().is_empty() => r.text.trim().to_string(),
                Ok(_) => truncate_steps(&older),
                Err(e) => {
                    self.session.event(EventKind::Note, format!("summary failed, truncating: {e}"));
                    truncate_steps(&older)
                }
            };
            s.compress_trajectory(keep, |_| summary);
        }
        let promoted = s.promote_supported();
        let archived = s.archive_done();
        let cp = s.checkpoint();
        s.reset_counters();
        self.session.event_with(
            EventKind::Reflection,
            "stabilize",
            json!({"promoted": promoted, "archived": archived, "checkpoint": cp}),
        );
    }

    fn budget_allows_diversify(&self) -> bool {
        match self.cfg.token_budget {
            None => true,
            Some(b) => b.saturating_sub(self.session.ledger().total_tokens()) >= self.cfg.diversify_reserve_tokens,
        }
    }

    /// Forks into branches, advances each, keeps the best. At most once per
    /// run and only within budget; otherwise rolls back and replans.
    pub fn op_diversify(&mut self, s: &mut ReasoningState) -> Result<bool, GatewayError> {
        if s.counters.diversify_used || !self.budget_allows_diversify() {
            self.session.event(EventKind::Note, "diversify unavailable; transform with rollback");
            self.rollback_and_replan(s);
            s.counters.steps_since_progress = 0;
            return Ok(false);
        }
        s.counters.diversify_used = true;
        let start = s.counters.step;
        let mut best: Option<(usize, ReasoningState)> = None;
        for i in 0..self.cfg.n_branches.max(1) {
            let mut branch = s.clone();
            for _ in 0..self.cfg.k_branch_steps {
                self.reasoning_step(&mut branch, start)?;
                branch.set_regime(update_regime(&branch));
                if branch.is_complete() {
                    break;
                }
            }
            self.session.event_with(
                EventKind::Note,
                format!("branch {i}"),
                json!({"done": branch.done_goal_count(), "u": branch.u()}),
            );
            let better = match &best {
                None => true,
                Some((_, b)) => {
                    branch.done_goal_count() > b.done_goal_count()
                        || (branch.done_goal_count() == b.done_goal_count() && branch.u() < b.u())
                }
            };
            if better {
                best = Some((i, branch));
            }
        }
        let (idx, mut winner) = best.expect("at least one branch");
        winner.counters.step = start;
        winner.counters.steps_since_progress = 0;
        *s = winner;
        self.session.event(EventKind::Note, format!("branch {idx} selected"));
        Ok(true)
    }
}

fn truncate_steps(steps: &[(u32, String)]) -> String {
    steps
        .iter()
        .map(|(n, t)| {
            let head: String = t.chars().take(160).collect();
            format!("[{n}] {head}")
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Runs the structured-state loop for up to `t_max` steps.
pub fn run_heavyweight(
    p: &ProblemInstance,
    backend: &dyn Backend,
    cfg: &HeavyConfig,
    prompts: &Prompts,
) -> Result<SolveOutcome, GatewayError> {
    let mut session = Session::new(backend);
    let mut s = ReasoningState::init(p);
    let mut steps = 0;
    let mut transforms = 0;
    {
        let mut eng = Engine {
            session: &mut session,
            prompts,
            cfg,
        };
        for t in 1..=cfg.t_max {
            if cfg
                .token_budget
                .is_some_and(|b| eng.session.ledger().total_tokens() >= b)
            {
                break;
            }
            eng.session.set_step(t);
            steps = t;
            eng.reasoning_step(&mut s, t)?;
            if let Some((op, trigger)) = controller_step(&s, cfg) {
                eng.session.event_with(
                    EventKind::Operator,
                    format!("{op:?}").to_lowercase(),
                    json!({"trigger": trigger, "selected": true}),
                );
                s.counters.steps_since_reflection = 0;
                match op {
                    Operator::Inspect => {
                        let dx = eng.op_inspect(&mut s)?;
                        if dx.health == Health::Critical {
                            eng.session.event_with(
                                EventKind::Operator,
                                "transform",
                                json!({"follow_up": true}),
                            );
                            eng.op_transform(&mut s, &dx)?;
                            transforms += 1;
                        }
                    }
                    Operator::Stabilize => eng.op_stabilize(&mut s),
                    Operator::Diversify => {
                        if !eng.op_diversify(&mut s)? {
                            transforms += 1;
                        }
                    }
                    Operator::Transform => {}
                }
            }
            let before = s.regime();
            let after = update_regime(&s);
            if after != before {
                eng.session.event_with(
                    EventKind::Regime,
                    after.as_str(),
                    json!({"from": before, "to": after}),
                );
                s.set_regime(after);
            }
            eng.session.event_with(
                EventKind::Note,
                "state",
                json!({"u": s.u(), "regime": s.regime()}),
            );
            if s.is_complete() {
                break;
            }
        }
    }
    let answer = s.compile_answer();
    let finish = if s.is_complete() {
        if answer.is_some() {
            FinishReason::Answered
        } else {
            FinishReason::NullAnswer
        }
    } else {
        FinishReason::BudgetExhausted
    };
    if let Some(a) = &answer {
        session.event(EventKind::FinalAnswer, a.clone());
    }
    let out = ToolOutput {
        answer,
        finish_reason: finish,
        n_steps: steps,
        n_retries: transforms,
    };
    Ok(SolveOutcome::from_session(out, session, None, "heavyweight"))
}

/// Ids reachable from `root` through assumption dependents (exclusive).
pub fn dependency_closure(s: &ReasoningState, root: &str) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut stack: Vec<String> = s
        .assumptions()
        .iter()
        .find(|a| a.id == root)
        .map(|a| a.dependents.clone())
        .unwrap_or_default();
    while let Some(id) = stack.pop() {
        if out.insert(id.clone()) {
            if let Some(a) = s.assumptions().iter().find(|a| a.id == id) {
                stack.extend(a.dependents.iter().cloned());
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::ScriptedBackend;

    fn state() -> ReasoningState {
        ReasoningState::init(&ProblemInstance::new("h", "Find x."))
    }

    fn delta(json: &str) -> StateDelta {
        serde_json::from_str(json).unwrap()
    }

    #[test]
    fn init_and_rollback_identity() {
        let mut s = state();
        assert_eq!(s.goals().len(), 1);
        assert_eq!(s.goals()[0].status, GoalStatus::Open);
        assert_eq!(s.u(), 0.0);
        assert_eq!(s.regime(), Regime::Explore);
        let before = s.snapshot().clone();
        assert!(s.rollback(0));
        assert_eq!(s.snapshot(), &before);
        let empty = ReasoningState::init(&ProblemInstance::new("e", "  "));
        assert!(!empty.goals()[0].text.is_empty());
    }

    #[test]
    fn conflict_signal_saturates() {
        let mut s = state();
        s.apply_delta(&delta(r#"{"evidence":[{"id":"e1","text":"x"},{"id":"e2","text":"y"}]}"#)).unwrap();
        s.apply_delta(&delta(r#"{"conflicts":[{"between":["e1","e2"]},{"between":["e1","e2"]},{"between":["e1","e2"]}]}"#)).unwrap();
        assert!((s.u() - 0.25).abs() < 1e-12);
        s.apply_delta(&delta(r#"{"conflicts":[{"between":["e1","e2"]},{"between":["e1","e2"]},{"between":["e1","e2"]}]}"#)).unwrap();
        assert!((s.u() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn bad_reference_rejected_atomically() {
        let mut s = state();
        let before = s.clone();
        let err = s
            .apply_delta(&delta(r#"{"evidence":[{"text":"ok"}],"assumptions":[{"id":"a1","text":"t","dependents":["zz"]}]}"#))
            .unwrap_err();
        assert_eq!(err, DeltaError::UnknownReference("zz".into()));
        assert_eq!(s, before);
    }

    #[test]
    fn cascade_through_chain() {
        let mut s = state();
        s.apply_delta(&delta(
            r#"{"evidence":[{"id":"e2","text":"derived"}],
                "decisions":[{"id":"d1","text":"use it"}],
                "assumptions":[
                  {"id":"a1","text":"base","dependents":["a2","e2"]},
                  {"id":"a2","text":"l2","dependents":["a3","d1"]},
                  {"id":"a3","text":"l3","dependents":["a4"]},
                  {"id":"a4","text":"l4","dependents":[]}]}"#,
        ))
        .unwrap();
        let expect = dependency_closure(&s, "a1");
        let touched: BTreeSet<String> = s.retract("a1").unwrap().into_iter().filter(|x| x != "a1").collect();
        assert_eq!(touched, expect);
        assert!(s.assumptions().iter().all(|a| a.status == AssumptionStatus::Retracted));
        assert!(s.evidence()[0].flagged && s.decisions()[0].flagged);
        s.check_cascade().unwrap();
        s.check_integrity().unwrap();
    }

    #[test]
    fn diagnostic_parsing() {
        let dx = parse_diagnostic(r#"Here: {"failure_type":"contradiction","affected":["a1"],"severity":"high","health":"critical"}"#);
        assert_eq!(dx.health, Health::Critical);
        assert_eq!(dx.failure_type, FailureType::Contradiction);
        assert_eq!(parse_diagnostic("looks fine to me"), Diagnostic::caution());
        let norm = parse_diagnostic(r#"{"failure_type":"logic","affected":[],"health":"critical"}"#);
        assert_eq!(norm.health, Health::Caution);
    }

    #[test]
    fn garbage_extraction_is_empty_delta() {
        assert!(parse_delta("no json here").is_empty());
        assert_eq!(parse_delta(r#"x {"evidence":[{"text":"t"}]} y"#).evidence.len(), 1);
    }

    #[test]
    fn views_follow_regime() {
        let mut s = state();
        s.apply_delta(&delta(r#"{"goals":[{"id":"g1","text":"finished sub-goal","status":"done"},{"id":"g2","text":"open sub-goal"}],"assumptions":[{"id":"a1","text":"x is even"}]}"#)).unwrap();
        let exec = compile_view(&s, Regime::Execute);
        assert!(!exec.contains("finished sub-goal"));
        assert!(exec.contains("open sub-goal"));
        let verify = compile_view(&s, Regime::Verify);
        assert!(verify.contains("# Claims to challenge"));
        assert!(verify.contains("finished sub-goal"));
        assert_eq!(compile_view(&s, Regime::Verify), verify);
        assert!(compile_view(&s, Regime::Recover).contains("# Diagnosis"));
    }

    #[test]
    fn controller_priorities() {
        let cfg = HeavyConfig::default();
        let mut s = state();
        assert_eq!(controller_step(&s, &cfg), None);
        s.apply_delta(&delta(r#"{"evidence":[{"id":"e1","text":"x","confidence":"low"},{"id":"e2","text":"y","confidence":"low"}],"assumptions":[{"id":"a1","text":"t"}],"goals":[{"id":"g1","text":"b","status":"blocked"}]}"#)).unwrap();
        s.apply_delta(&delta(r#"{"conflicts":[{"between":["e1","e2"]},{"between":["e1","a1"]},{"between":["e2","a1"]}]}"#)).unwrap();
        assert!(s.u() > cfg.theta_u);
        assert_eq!(controller_step(&s, &cfg), Some((Operator::Inspect, Trigger::NewConflict)));
        s.begin_step(2);
        assert_eq!(controller_step(&s, &cfg), Some((Operator::Inspect, Trigger::HighUncertainty)));
    }

    #[test]
    fn regime_rules() {
        let mut s = state();
        s.apply_delta(&delta(r#"{"goals":[{"id":"g1","text":"a","status":"active"},{"id":"g2","text":"b","status":"done"},{"id":"g3","text":"c","status":"done"},{"id":"g4","text":"d","status":"done"}],"decisions":[{"text":"brute force","tags":["strategy"]}]}"#)).unwrap();
        assert_eq!(update_regime(&s), Regime::Execute);
        s.set_regime(Regime::Execute);
        assert_eq!(update_regime(&s), Regime::Verify);
        s.set_regime(Regime::Verify);
        assert_eq!(update_regime(&s), Regime::Verify);
        s.note_inspection(&Diagnostic { failure_type: FailureType::Logic, affected: vec![], severity: "low".into(), health: Health::Good });
        assert_eq!(update_regime(&s), Regime::Consolidate);
        s.set_regime(Regime::Recover);
        assert!(s.u() < 0.4);
        assert_eq!(update_regime(&s), Regime::Execute);
    }

    #[test]
    fn stabilize_compresses_and_checkpoints() {
        let b = ScriptedBackend::from_replies(["summary of 1-3"]);
        let mut session = Session::new(&b);
        let prompts = Prompts::default();
        let cfg = HeavyConfig::default();
        let mut s = state();
        for i in 1..=8 {
            s.record_step_text(i, &format!("step {i}"));
        }
        s.apply_delta(&delta(r#"{"assumptions":[{"id":"a1","text":"t"}],"evidence":[{"id":"e1","text":"proof","confidence":"high","supports":["a1"]}]}"#)).unwrap();
        let cps = s.checkpoints().len();
        Engine { session: &mut session, prompts: &prompts, cfg: &cfg }.op_stabilize(&mut s);
        assert_eq!(s.trajectory().recent.len(), 5);
        assert_eq!(s.trajectory().summaries, ["summary of 1-3"]);
        assert_eq!(s.assumptions()[0].status, AssumptionStatus::Validated);
        assert_eq!(s.checkpoints().len(), cps + 1);
    }

    #[test]
    fn stalled_transform_rolls_back_and_replans() {
        let b = ScriptedBackend::from_replies(Vec::<String>::new());
        let mut session = Session::new(&b);
        let prompts = Prompts::default();
        let cfg = HeavyConfig::default();
        let mut s = state();
        let cp = s.snapshot().clone();
        s.apply_delta(&delta(r#"{"evidence":[{"text":"noise"}]}"#)).unwrap();
        let dx = Diagnostic { failure_type: FailureType::Stalled, affected: vec![], severity: "high".into(), health: Health::Critical };
        Engine { session: &mut session, prompts: &prompts, cfg: &cfg }.op_transform(&mut s, &dx).unwrap();
        assert_eq!(s.evidence().len(), 0);
        assert_eq!(s.decisions().len(), 1);
        assert!(s.decisions()[0].has_tag("replan"));
        assert_eq!(s.goals(), &cp.goals[..]);
    }

    #[test]
    fn contradiction_resolution_discards_loser() {
        let b = ScriptedBackend::from_replies([r#"{"keep": "a2"}"#]);
        let mut session = Session::new(&b);
        let prompts = Prompts::default();
        let cfg = HeavyConfig::default();
        let mut s = state();
        s.apply_delta(&delta(r#"{"assumptions":[{"id":"a1","text":"x=1"},{"id":"a2","text":"x=2"}],"conflicts":[{"id":"c1","between":["a1","a2"],"severity":"critical"}]}"#)).unwrap();
        let dx = parse_diagnostic(r#"{"failure_type":"contradiction","affected":["a1","a2"],"health":"critical"}"#);
        Engine { session: &mut session, prompts: &prompts, cfg: &cfg }.op_transform(&mut s, &dx).unwrap();
        assert!(s.conflicts()[0].resolved);
        assert_eq!(s.assumptions()[0].status, AssumptionStatus::Retracted);
        assert_eq!(s.assumptions()[1].status, AssumptionStatus::Active);
        assert_eq!(session.ledger().count(Purpose::Verify), 1);
    }

    #[test]
    fn answer_compilation() {
        let mut s = state();
        s.record_step_text(1, "so FINAL ANSWER: 12");
        assert_eq!(s.compile_answer().as_deref(), Some("12"));
        s.apply_delta(&delta(r#"{"final_answer":"13"}"#)).unwrap();
        assert_eq!(s.compile_answer().as_deref(), Some("13"));
    }

    fn clean_script() -> Vec<crate::gateway::ScriptEntry> {
        use crate::gateway::ScriptEntry as E;
        vec![
            E::reply(Purpose::Generate, "Plan: factor the polynomial."),
            E::reply(Purpose::Extract, r#"{"decisions":[{"text":"factor","tags":["strategy"]}],"goals":[{"id":"g1","text":"factor","status":"active"}]}"#),
            E::reply(Purpose::Generate, "Factored: (x-2)(x-3), roots 2 and 3."),
            E::reply(Purpose::Extract, r#"{"goal_updates":[{"id":"g1","status":"done"}],"evidence":[{"text":"roots 2, 3","confidence":"high"}]}"#),
            E::reply(Purpose::Generate, "Sum of roots is 5. FINAL ANSWER: 5"),
            E::reply(Purpose::Extract, r#"{"final_answer":"5"}"#),
            E::reply(Purpose::Inspect, r#"{"failure_type":"logic","affected":[],"severity":"low","health":"good"}"#),
        ]
    }

    #[test]
    fn clean_run_visits_every_forward_regime() {
        let b = ScriptedBackend::new(clean_script());
        let out = run_heavyweight(&ProblemInstance::new("q", "Sum the roots of x^2-5x+6."), &b, &HeavyConfig::default(), &Prompts::default()).unwrap();
        assert_eq!(out.answer.as_deref(), Some("5"));
        assert_eq!(out.finish_reason, FinishReason::Answered);
        assert!(out.converged());
        assert_eq!(out.n_steps, 3);
        assert_eq!(out.n_llm_calls, 7);
        let regimes: Vec<String> = out.trace.iter().filter(|e| e.kind == EventKind::Regime).map(|e| e.text.clone()).collect();
        assert_eq!(regimes, ["EXECUTE", "VERIFY", "CONSOLIDATE"]);
    }

    #[test]
    fn step_budget_exhaustion() {
        let b = ScriptedBackend::from_replies(std::iter::repeat("thinking").take(40));
        let cfg = HeavyConfig { t_max: 4, ..HeavyConfig::default() };
        let out = run_heavyweight(&ProblemInstance::new("q", "?"), &b, &cfg, &Prompts::default()).unwrap();
        assert_eq!(out.finish_reason, FinishReason::BudgetExhausted);
        assert_eq!(out.n_steps, 4);
    }
}
