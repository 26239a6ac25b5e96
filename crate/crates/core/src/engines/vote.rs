//! Modal voting over sampled answers.

use std::collections::HashMap;

/// Canonical form used for voting: trimmed, case-folded, and for numerals
/// without sign noise or insignificant zeros ("1.50" -> "1.5", "+07" -> "7",
/// "-0.0" -> "0", "3." -> "3").
pub fn normalize_answer(raw: &str) -> String {
    let s = raw.trim().to_lowercase();
    canonical_number(&s).unwrap_or(s)
}

fn canonical_number(s: &str) -> Option<String> {
    let (neg, body) = match s.as_bytes().first()? {
        b'-' => (true, &s[1..]),
        b'+' => (false, &s[1..]),
        _ => (false, s),
    };
    let (int, frac) = match body.split_once('.') {
        Some((i, f)) => (i, f),
        None => (body, ""),
    };
    if int.is_empty() && frac.is_empty() {
        return None;
    }
    if !int.bytes().all(|b| b.is_ascii_digit()) || !frac.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let int = int.trim_start_matches('0');
    let frac = frac.trim_end_matches('0');
    let mut out = String::new();
    if int.is_empty() {
        out.push('0');
    } else {
        out.push_str(int);
    }
    if !frac.is_empty() {
        out.push('.');
        out.push_str(frac);
    }
    if neg && out != "0" {
        out.insert(0, '-');
    }
    Some(out)
}

/// Most frequent normalized answer; absent candidates are ignored and ties go
/// to the value seen first.
pub fn modal_vote<S: AsRef<str>>(candidates: &[Option<S>]) -> Option<String> {
    let mut counts: HashMap<String, (usize, usize)> = HashMap::new();
    for (i, c) in candidates.iter().enumerate() {
        let Some(c) = c else { continue };
        let key = normalize_answer(c.as_ref());
        if key.is_empty() {
            continue;
        }
        counts.entry(key).or_insert((0, i)).0 += 1;
    }
    counts
        .into_iter()
        .max_by(|(_, (ca, fa)), (_, (cb, fb))| ca.cmp(cb).then(fb.cmp(fa)))
        .map(|(k, _)| k)
}

/// Like [`modal_vote`] but returns the winning value as first written
/// (trimmed), not in normalized form.
pub fn modal_vote_original<S: AsRef<str>>(candidates: &[Option<S>]) -> Option<String> {
    let winner = modal_vote(candidates)?;
    candidates
        .iter()
        .flatten()
        .map(|c| c.as_ref().trim())
        .find(|c| normalize_answer(c) == winner)
        .map(str::to_string)
}

/// Number of candidates agreeing with `winner` after normalization.
pub fn agreement<S: AsRef<str>>(candidates: &[Option<S>], winner: &str) -> usize {
    candidates
        .iter()
        .flatten()
        .filter(|c| normalize_answer(c.as_ref()) == winner)
        .count()
}
