//! Fenced code block and answer-marker extraction from model replies.

/// Body of the first ```` ``` ```` fenced block. The language tag is optional.
/// An unterminated fence yields everything after the opening line.
pub fn extract_fenced_code(reply: &str) -> Option<String> {
    let mut lines = reply.lines();
    loop {
        let line = lines.next()?;
        if line.trim_start().starts_with("```") {
            break;
        }
    }
    let mut body = Vec::new();
    for line in lines {
        if line.trim_start().starts_with("```") {
            return Some(body.join("\n"));
        }
        body.push(line);
    }
    Some(body.join("\n"))
}

/// Text with a surrounding fence removed, if the reply is wrapped in one.
/// Returns the input unchanged when no fence is present.
pub fn strip_fence(reply: &str) -> String {
    match extract_fenced_code(reply) {
        Some(body) => body,
        None => reply.to_string(),
    }
}

pub const ANSWER_MARKER: &str = "FINAL ANSWER:";

/// Value after the last `FINAL ANSWER:` marker (case-insensitive), trimmed.
/// Markdown emphasis around the marker is tolerated.
pub fn parse_final_answer(reply: &str) -> Option<String> {
    let mut found = None;
    for line in reply.lines() {
        let upper = line.to_ascii_uppercase();
        if let Some(pos) = upper.rfind(ANSWER_MARKER) {
            let value = line[pos + ANSWER_MARKER.len()..]
                .trim()
                .trim_matches(|c| c == '*' || c == '`')
                .trim();
            if !value.is_empty() {
                found = Some(value.to_string());
            }
        }
    }
    found
}
