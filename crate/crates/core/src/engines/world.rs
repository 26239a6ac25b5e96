//! Household world state and action preconditions, without a simulator.
//!
//! Supported actions and their preconditions:
//!
//! | action            | requires                                                  |
//! |-------------------|-----------------------------------------------------------|
//! | `goto(l)`         | nonempty target                                           |
//! | `pickup(o)`       | agent at `o`, hand empty, `o` not inside a closed receptacle |
//! | `put(o, r)`       | holding `o`, agent at `r`, `r` open if openable           |
//! | `open(r)`/`close(r)` | agent at `r`, `r` openable and currently closed/open   |
//! | `toggle(o)`       | agent at `o`, `o` toggleable                              |
//! | `slice(o)`        | agent at `o`, holding a knife, `o` not yet sliced         |
//! | `clean(o)`        | holding `o`, agent at a sink                              |
//! | `heat(o)`         | holding `o`, agent at a microwave, stove or oven          |
//! | `cool(o)`         | holding `o`, agent at a fridge                            |
//!
//! "At `o`" means the agent's location equals `o`'s location or `o` itself.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Location value of an object that is in the agent's hand.
pub const HELD: &str = "agent";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectState {
    pub location: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub open: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub on: Option<bool>,
    #[serde(default)]
    pub sliced: bool,
    #[serde(default)]
    pub clean: bool,
    #[serde(default)]
    pub heated: bool,
    #[serde(default)]
    pub cooled: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldState {
    pub agent_location: String,
    pub holding: Option<String>,
    pub objects: BTreeMap<String, ObjectState>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Goto(String),
    Pickup(String),
    Put(String, String),
    Open(String),
    Close(String),
    Toggle(String),
    Slice(String),
    Clean(String),
    Heat(String),
    Cool(String),
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Goto(x) => write!(f, "goto({x})"),
            Action::Pickup(x) => write!(f, "pickup({x})"),
            Action::Put(o, r) => write!(f, "put({o}, {r})"),
            Action::Open(x) => write!(f, "open({x})"),
            Action::Close(x) => write!(f, "close({x})"),
            Action::Toggle(x) => write!(f, "toggle({x})"),
            Action::Slice(x) => write!(f, "slice({x})"),
            Action::Clean(x) => write!(f, "clean({x})"),
            Action::Heat(x) => write!(f, "heat({x})"),
            Action::Cool(x) => write!(f, "cool({x})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ActionParseError {
    #[error("unknown action verb {0:?}")]
    UnknownVerb(String),
    #[error("{verb} expects {expected} argument(s), got {got}")]
    Arity {
        verb: String,
        expected: usize,
        got: usize,
    },
    #[error("empty action")]
    Empty,
}

fn canonical_verb(word: &str) -> Option<&'static str> {
    Some(match word {
        "goto" | "go" | "go_to" | "gotolocation" | "walk" | "move" => "goto",
        "pickup" | "pick" | "pick_up" | "pickupobject" | "take" | "grab" => "pickup",
        "put" | "place" | "putobject" => "put",
        "open" | "openobject" => "open",
        "close" | "closeobject" => "close",
        "toggle" | "toggleobject" | "turn" | "switch" => "toggle",
        "slice" | "sliceobject" | "cut" => "slice",
        "clean" | "cleanobject" | "wash" | "rinse" => "clean",
        "heat" | "heatobject" | "warm" => "heat",
        "cool" | "coolobject" | "chill" => "cool",
        _ => return None,
    })
}

const FILLER: [&str; 12] = ["to", "the", "a", "an", "up", "in", "on", "into", "onto", "with", "at", "object"];

impl Action {
    /// Parses `verb(arg, arg)` or `verb arg [in|on|into] arg` forms,
    /// optionally prefixed by a list number.
    pub fn parse(text: &str) -> Result<Action, ActionParseError> {
        let lowered = text.trim().to_lowercase();
        let stripped = lowered
            .trim_start_matches(|c: char| c.is_ascii_digit() || c == '.' || c == ')' || c == '-' || c == '*')
            .trim()
            .trim_end_matches(['.', ';', ','])
            .to_string();
        if stripped.is_empty() {
            return Err(ActionParseError::Empty);
        }
        // Call form separates arguments with commas; prose form with prepositions.
        let (verb_raw, rest) = match stripped.find('(') {
            Some(i) if stripped.ends_with(')') => (
                stripped[..i].trim().to_string(),
                stripped[i + 1..stripped.len() - 1].replace(',', " in "),
            ),
            _ => {
                let mut it = stripped.splitn(2, char::is_whitespace);
                (it.next().unwrap_or("").to_string(), it.next().unwrap_or("").replace(',', " "))
            }
        };
        let mut words: Vec<&str> = rest.split_whitespace().collect();
        let verb_key = verb_raw.replace([' ', '-'], "_");
        let mut verb = canonical_verb(&verb_key);
        if verb.is_none() && verb_key == "turn" {
            verb = Some("toggle");
        }
        let verb = verb.ok_or_else(|| ActionParseError::UnknownVerb(verb_raw.clone()))?;
        // "pick up x", "turn on x", "go to x"
        if matches!(words.first(), Some(&"up") | Some(&"on") | Some(&"off") | Some(&"to")) {
            words.remove(0);
        }
        let args: Vec<String> = words
            .split(|w| matches!(*w, "in" | "on" | "into" | "onto" | "at"))
            .map(|chunk| {
                chunk
                    .iter()
                    .filter(|w| !FILLER.contains(w))
                    .copied()
                    .collect::<Vec<_>>()
                    .join("_")
            })
            .filter(|s| !s.is_empty())
            .collect();
        let expect = |n: usize| -> Result<(), ActionParseError> {
            if args.len() == n {
                Ok(())
            } else {
                Err(ActionParseError::Arity {
                    verb: verb.to_string(),
                    expected: n,
                    got: args.len(),
                })
            }
        };
        let one = |args: &[String]| args[0].clone();
        Ok(match verb {
            "put" => {
                expect(2)?;
                Action::Put(args[0].clone(), args[1].clone())
            }
            "goto" => {
                expect(1)?;
                Action::Goto(one(&args))
            }
            "pickup" => {
                expect(1)?;
                Action::Pickup(one(&args))
            }
            "open" => {
                expect(1)?;
                Action::Open(one(&args))
            }
            "close" => {
                expect(1)?;
                Action::Close(one(&args))
            }
            "toggle" => {
                expect(1)?;
                Action::Toggle(one(&args))
            }
            "slice" => {
                expect(1)?;
                Action::Slice(one(&args))
            }
            "clean" => {
                expect(1)?;
                Action::Clean(one(&args))
            }
            "heat" => {
                expect(1)?;
                Action::Heat(one(&args))
            }
            "cool" => {
                expect(1)?;
                Action::Cool(one(&args))
            }
            _ => unreachable!("canonical verbs are exhaustive"),
        })
    }
}

/// Parses a plan: one action per line, or separated by `;`.
/// Lines that are not actions (prose, headers) are ignored; a plan with no
/// parseable action is an error.
pub fn parse_plan(text: &str) -> Result<Vec<Action>, ActionParseError> {
    let body = match text.to_lowercase().rfind("plan:") {
        Some(i) => &text[i + 5..],
        None => text,
    };
    let actions: Vec<Action> = body
        .split(['\n', ';'])
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with("```"))
        .filter_map(|l| Action::parse(l).ok())
        .collect();
    if actions.is_empty() {
        Err(ActionParseError::Empty)
    } else {
        Ok(actions)
    }
}

pub fn render_plan(actions: &[Action]) -> String {
    actions
        .iter()
        .map(|a| a.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreconditionCheck {
    pub ok: bool,
    pub reason: String,
    pub next_state: WorldState,
}

impl WorldState {
    /// Reads the fixture block:
    ///
    /// ```text
    /// agent at: kitchen
    /// objects:
    /// - apple: countertop
    /// - fridge: kitchen [open=false]
    /// - lamp: desk [on=false]
    /// ```
    pub fn from_context(text: &str) -> Option<WorldState> {
        let mut state = WorldState::default();
        let mut in_objects = false;
        let mut saw_agent = false;
        for raw in text.lines() {
            let line = raw.trim();
            let lower = line.to_lowercase();
            if let Some(rest) = lower.strip_prefix("agent at:") {
                state.agent_location = slug(rest);
                saw_agent = true;
                in_objects = false;
                continue;
            }
            if lower.starts_with("objects:") {
                in_objects = true;
                continue;
            }
            if !in_objects || line.is_empty() {
                continue;
            }
            let entry = lower.trim_start_matches(['-', '*']).trim();
            let Some((name, rest)) = entry.split_once(':') else {
                in_objects = false;
                continue;
            };
            let (loc, attrs) = match rest.split_once('[') {
                Some((l, a)) => (l, a.trim_end_matches(']')),
                None => (rest, ""),
            };
            let mut obj = ObjectState {
                location: slug(loc),
                ..ObjectState::default()
            };
            for kv in attrs.split([',', ' ']).filter(|s| !s.is_empty()) {
                let (k, v) = kv.split_once('=').unwrap_or((kv, "true"));
                let b = v.trim() == "true";
                match k.trim() {
                    "open" => obj.open = Some(b),
                    "on" => obj.on = Some(b),
                    "sliced" => obj.sliced = b,
                    "clean" => obj.clean = b,
                    "heated" => obj.heated = b,
                    "cooled" => obj.cooled = b,
                    _ => {}
                }
            }
            let id = slug(name);
            if obj.location == HELD {
                state.holding = Some(id.clone());
            }
            state.objects.insert(id, obj);
        }
        (saw_agent && !state.objects.is_empty()).then_some(state)
    }

    fn at(&self, id: &str) -> bool {
        self.agent_location == id
            || self
                .objects
                .get(id)
                .is_some_and(|o| o.location == self.agent_location)
    }

    fn agent_at_kind(&self, kinds: &[&str]) -> bool {
        kinds.iter().any(|k| self.agent_location.contains(k))
    }

    fn holds(&self, id: &str) -> bool {
        self.holding.as_deref() == Some(id)
    }

    /// Checks `action` against the state. Pure: `self` is never modified.
    pub fn check_preconditions(&self, action: &Action) -> PreconditionCheck {
        match self.apply(action) {
            Ok(next) => PreconditionCheck {
                ok: true,
                reason: String::new(),
                next_state: next,
            },
            Err(reason) => PreconditionCheck {
                ok: false,
                reason,
                next_state: self.clone(),
            },
        }
    }

    fn apply(&self, action: &Action) -> Result<WorldState, String> {
        let mut next = self.clone();
        let obj = |id: &str| -> Result<&ObjectState, String> {
            self.objects.get(id).ok_or_else(|| format!("unknown object {id}"))
        };
        match action {
            Action::Goto(loc) => {
                if loc.is_empty() {
                    return Err("goto needs a target".into());
                }
                next.agent_location = loc.clone();
            }
            Action::Pickup(id) => {
                let o = obj(id)?;
                if let Some(h) = &self.holding {
                    return Err(format!("hand occupied: already holding {h}"));
                }
                if o.location == HELD {
                    return Err(format!("{id} is already held"));
                }
                if !self.at(id) {
                    return Err(format!("agent not at {id} (agent at {})", self.agent_location));
                }
                if self.objects.get(&o.location).is_some_and(|r| r.open == Some(false)) {
                    return Err(format!("{} is closed", o.location));
                }
                next.objects.get_mut(id).expect("checked").location = HELD.into();
                next.holding = Some(id.clone());
            }
            Action::Put(id, recep) => {
                if !self.holds(id) {
                    return Err(format!("not holding {id}"));
                }
                if !self.at(recep) {
                    return Err(format!("agent not at {recep}"));
                }
                if self.objects.get(recep).is_some_and(|r| r.open == Some(false)) {
                    return Err(format!("{recep} is closed"));
                }
                next.objects.get_mut(id).expect("held object exists").location = recep.clone();
                next.holding = None;
            }
            Action::Open(id) | Action::Close(id) => {
                let opening = matches!(action, Action::Open(_));
                let o = obj(id)?;
                if !self.at(id) {
                    return Err(format!("agent not at {id}"));
                }
                match o.open {
                    None => return Err(format!("{id} cannot be opened or closed")),
                    Some(open) if open == opening => {
                        return Err(format!("{id} is already {}", if open { "open" } else { "closed" }))
                    }
                    Some(_) => next.objects.get_mut(id).expect("checked").open = Some(opening),
                }
            }
            Action::Toggle(id) => {
                let o = obj(id)?;
                if !self.at(id) {
                    return Err(format!("agent not at {id}"));
                }
                let Some(on) = o.on else {
                    return Err(format!("{id} cannot be toggled"));
                };
                next.objects.get_mut(id).expect("checked").on = Some(!on);
            }
            Action::Slice(id) => {
                let o = obj(id)?;
                if !self.holding.as_deref().is_some_and(|h| h.contains("knife")) {
                    return Err("slicing requires holding a knife".into());
                }
                if !self.at(id) {
                    return Err(format!("agent not at {id}"));
                }
                if o.sliced {
                    return Err(format!("{id} is already sliced"));
                }
                next.objects.get_mut(id).expect("checked").sliced = true;
            }
            Action::Clean(id) | Action::Heat(id) | Action::Cool(id) => {
                obj(id)?;
                if !self.holds(id) {
                    return Err(format!("not holding {id}"));
                }
                let (kinds, what): (&[&str], &str) = match action {
                    Action::Clean(_) => (&["sink"], "a sink"),
                    Action::Heat(_) => (&["microwave", "stove", "oven"], "a microwave, stove or oven"),
                    _ => (&["fridge"], "a fridge"),
                };
                if !self.agent_at_kind(kinds) {
                    return Err(format!("agent must be at {what}"));
                }
                let o = next.objects.get_mut(id).expect("checked");
                match action {
                    Action::Clean(_) => o.clean = true,
                    Action::Heat(_) => o.heated = true,
                    _ => o.cooled = true,
                }
            }
        }
        Ok(next)
    }

    /// Runs the plan, returning `(valid_prefix_len, total)`.
    pub fn prefix_score(&self, actions: &[Action]) -> (usize, usize) {
        let mut state = self.clone();
        for (i, a) in actions.iter().enumerate() {
            match state.apply(a) {
                Ok(next) => state = next,
                Err(_) => return (i, actions.len()),
            }
        }
        (actions.len(), actions.len())
    }

    /// First violation in the plan: (index, action, reason).
    pub fn first_violation(&self, actions: &[Action]) -> Option<(usize, Action, String)> {
        let mut state = self.clone();
        for (i, a) in actions.iter().enumerate() {
            match state.apply(a) {
                Ok(next) => state = next,
                Err(reason) => return Some((i, a.clone(), reason)),
            }
        }
        None
    }
}

/// Checks an action given as text; unknown verbs are rejected with
/// reason `unknown_action`.
pub fn check_action_text(state: &WorldState, text: &str) -> PreconditionCheck {
    match Action::parse(text) {
        Ok(a) => state.check_preconditions(&a),
        Err(ActionParseError::UnknownVerb(_)) | Err(ActionParseError::Empty) => PreconditionCheck {
            ok: false,
            reason: "unknown_action".into(),
            next_state: state.clone(),
        },
        Err(e) => PreconditionCheck {
            ok: false,
            reason: e.to_string(),
            next_state: state.clone(),
        },
    }
}

fn slug(s: &str) -> String {
    s.split_whitespace()
        .filter(|w| !matches!(*w, "the" | "a" | "an"))
        .collect::<Vec<_>>()
        .join("_")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kitchen() -> WorldState {
        WorldState::from_context(
            "agent at: countertop\nobjects:\n- apple: countertop\n- knife: countertop\n- fridge: fridge [open=false]\n- lamp: desk [on=false]\n- microwave: microwave [open=false]\n",
        )
        .unwrap()
    }

    #[test]
    fn pickup_success() {
        let s = kitchen();
        let c = s.check_preconditions(&Action::Pickup("apple".into()));
        assert!(c.ok);
        assert_eq!(c.next_state.holding.as_deref(), Some("apple"));
        assert_eq!(c.next_state.objects["apple"].location, HELD);
    }

    #[test]
    fn pickup_with_occupied_hand_fails() {
        let s = kitchen()
            .check_preconditions(&Action::Pickup("knife".into()))
            .next_state;
        let c = s.check_preconditions(&Action::Pickup("apple".into()));
        assert!(!c.ok);
        assert!(c.reason.contains("hand occupied"), "{}", c.reason);
        assert_eq!(c.next_state, s);
    }

    #[test]
    fn unknown_verb_is_reported() {
        let c = check_action_text(&kitchen(), "juggle apple");
        assert!(!c.ok);
        assert_eq!(c.reason, "unknown_action");
    }

    #[test]
    fn action_text_forms() {
        assert_eq!(Action::parse("pickup(apple)").unwrap(), Action::Pickup("apple".into()));
        assert_eq!(Action::parse("2. Pick up the apple").unwrap(), Action::Pickup("apple".into()));
        assert_eq!(Action::parse("put apple in fridge").unwrap(), Action::Put("apple".into(), "fridge".into()));
        assert_eq!(Action::parse("put(apple, fridge)").unwrap(), Action::Put("apple".into(), "fridge".into()));
        assert_eq!(Action::parse("go to the countertop").unwrap(), Action::Goto("countertop".into()));
        assert_eq!(Action::parse("turn on lamp").unwrap(), Action::Toggle("lamp".into()));
        assert!(matches!(Action::parse("put apple"), Err(ActionParseError::Arity { .. })));
    }

    #[test]
    fn prefix_scores() {
        let s = kitchen();
        let plan = parse_plan("pickup(apple)\ngoto(fridge)\nopen(fridge)\nput(apple, fridge)").unwrap();
        assert_eq!(s.prefix_score(&plan), (4, 4));
        let bad = parse_plan("pickup(apple); goto(fridge); put(apple, fridge); close(fridge)").unwrap();
        assert_eq!(s.prefix_score(&bad), (2, 4));
        let (i, _, reason) = s.first_violation(&bad).unwrap();
        assert_eq!(i, 2);
        assert!(reason.contains("closed"));
    }

    #[test]
    fn heat_requires_microwave_location() {
        let s = kitchen();
        let plan = parse_plan("pickup(apple); heat(apple)").unwrap();
        assert_eq!(s.prefix_score(&plan), (1, 2));
        let plan = parse_plan("pickup(apple); goto(microwave); heat(apple)").unwrap();
        assert_eq!(s.prefix_score(&plan), (3, 3));
    }

    #[test]
    fn slicing_needs_knife() {
        let s = kitchen();
        assert_eq!(s.prefix_score(&parse_plan("slice(apple)").unwrap()), (0, 1));
        assert_eq!(s.prefix_score(&parse_plan("pickup(knife); slice(apple)").unwrap()), (2, 2));
    }

    #[test]
    fn plan_header_and_prose_are_ignored() {
        let plan = parse_plan("I will do this.\nPLAN:\n1. goto(countertop)\n2. pickup(apple)").unwrap();
        assert_eq!(plan.len(), 2);
        assert!(parse_plan("no actions here").is_err());
    }
}
