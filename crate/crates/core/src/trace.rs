//! Run trace events and their JSONL form.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::gateway::Purpose;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    LlmCall,
    Thought,
    Action,
    Observation,
    Reflection,
    Backtrack,
    Contradiction,
    FinalAnswer,
    Shape,
    Tool,
    Validation,
    Sandbox,
    Fallback,
    Operator,
    Regime,
    Note,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub step: u32,
    pub kind: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub purpose: Option<Purpose>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub call_index: Option<u64>,
    #[serde(default)]
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<serde_json::Value>,
}

impl TraceEvent {
    pub fn new(step: u32, kind: EventKind, text: impl Into<String>) -> Self {
        Self {
            step,
            kind,
            purpose: None,
            call_index: None,
            text: text.into(),
            data: None,
        }
    }

    pub fn with_data(mut self, data: serde_json::Value) -> Self {
        self.data = Some(data);
        self
    }
}

pub fn write_jsonl<W: Write>(mut out: W, events: &[TraceEvent]) -> io::Result<()> {
    for ev in events {
        serde_json::to_writer(&mut out, ev)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Parsed events plus the number of lines that failed to parse.
pub fn read_jsonl<R: BufRead>(input: R) -> io::Result<(Vec<TraceEvent>, usize)> {
    let mut events = Vec::new();
    let mut skipped = 0;
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<TraceEvent>(&line) {
            Ok(ev) => events.push(ev),
            Err(_) => skipped += 1,
        }
    }
    Ok((events, skipped))
}
