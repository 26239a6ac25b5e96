//! Propositional Horn-clause forward chaining over rules extracted from text.
//!
//! Atoms are ground sentences ("the cat is red"), normalized by case-folding,
//! whitespace collapsing and trailing-punctuation removal. A literal is an
//! atom with a polarity; "the cat is not red" is the negative literal of
//! "the cat is red". Rules whose subject is a variable word ("something",
//! "someone", "it") are schemas, grounded over every entity mentioned in the
//! base and the query before chaining.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Literal {
    pub atom: String,
    pub positive: bool,
}

impl Literal {
    pub fn pos(atom: &str) -> Self {
        Self {
            atom: normalize_atom(atom),
            positive: true,
        }
    }

    pub fn neg(atom: &str) -> Self {
        Self {
            atom: normalize_atom(atom),
            positive: false,
        }
    }

    pub fn negated(&self) -> Self {
        Self {
            atom: self.atom.clone(),
            positive: !self.positive,
        }
    }

    /// Parses a sentence, folding "not" / "n't" into the polarity.
    pub fn parse(sentence: &str) -> Option<Self> {
        let norm = normalize_atom(sentence);
        if norm.is_empty() {
            return None;
        }
        let expanded = expand_contractions(&norm);
        let words: Vec<&str> = expanded.split(' ').collect();
        let Some(not_at) = words.iter().position(|w| *w == "not") else {
            return Some(Self {
                atom: expanded,
                positive: true,
            });
        };
        let mut out: Vec<String> = Vec::with_capacity(words.len());
        let mut i = 0;
        while i < words.len() {
            if i + 1 == not_at && matches!(words[i], "does" | "do") && i + 2 < words.len() {
                let verb = words[i + 2];
                out.push(if words[i] == "does" {
                    third_person(verb)
                } else {
                    verb.to_string()
                });
                i += 3;
                continue;
            }
            if i != not_at {
                out.push(words[i].to_string());
            }
            i += 1;
        }
        if out.is_empty() {
            return None;
        }
        Some(Self {
            atom: out.join(" "),
            positive: false,
        })
    }

    /// Replaces every variable word with `entity`; "they are" becomes "is".
    fn substitute(&self, entity: &str) -> Self {
        let words: Vec<&str> = self.atom.split(' ').collect();
        let mut out = Vec::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if is_variable(w) {
                out.push(entity);
            } else if *w == "are" && i > 0 && words[i - 1] == "they" {
                out.push("is");
            } else {
                out.push(w);
            }
        }
        Self {
            atom: out.join(" "),
            positive: self.positive,
        }
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.positive {
            f.write_str(&self.atom)
        } else {
            write!(f, "¬{}", self.atom)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rule {
    pub antecedents: Vec<Literal>,
    pub consequent: Literal,
}

impl Rule {
    pub fn new(antecedents: Vec<Literal>, consequent: Literal) -> Self {
        Self {
            antecedents,
            consequent,
        }
    }

    fn is_schema(&self) -> bool {
        self.antecedents
            .iter()
            .chain(std::iter::once(&self.consequent))
            .flat_map(|l| l.atom.split(' '))
            .any(is_variable)
    }

    fn ground(&self, entity: &str) -> Rule {
        Rule {
            antecedents: self.antecedents.iter().map(|l| l.substitute(entity)).collect(),
            consequent: self.consequent.substitute(entity),
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ants: Vec<String> = self.antecedents.iter().map(|l| l.to_string()).collect();
        write!(f, "{} → {}", ants.join(" ∧ "), self.consequent)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegationPolicy {
    /// FALSE only when the negated literal is derivable.
    #[default]
    ExplicitOnly,
    /// Underivable atoms are false, unless a rule carries a negative antecedent.
    ClosedWorld,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HornRuleBase {
    facts: BTreeSet<Literal>,
    rules: Vec<Rule>,
    pub negation: NegationPolicy,
    /// Sentences the extractor could not use.
    pub skipped_sentences: usize,
}

impl HornRuleBase {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_fact(&mut self, fact: Literal) {
        if !fact.atom.is_empty() {
            self.facts.insert(fact);
        }
    }

    /// Adds a rule unless an identical one exists or it is malformed.
    pub fn add_rule(&mut self, rule: Rule) -> bool {
        if rule.antecedents.is_empty()
            || rule.consequent.atom.is_empty()
            || rule.antecedents.iter().any(|a| a.atom.is_empty())
            || self.rules.contains(&rule)
        {
            return false;
        }
        self.rules.push(rule);
        true
    }

    pub fn facts(&self) -> &BTreeSet<Literal> {
        &self.facts
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty() && self.rules.is_empty()
    }

    /// Entities are the subjects of every ground literal, plus the query's.
    fn entities(&self, query: Option<&Literal>) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        let lits = self
            .facts
            .iter()
            .chain(self.rules.iter().flat_map(|r| r.antecedents.iter().chain([&r.consequent])))
            .chain(query);
        for lit in lits {
            let words: Vec<&str> = lit.atom.split(' ').collect();
            if words.iter().any(|w| is_variable(w)) {
                continue;
            }
            let n = subject_len(&words);
            if n > 0 && n < words.len() {
                out.insert(words[..n].join(" "));
            }
        }
        out
    }

    /// Ground rules: schemas instantiated per entity, ground rules as-is.
    pub fn grounded_rules(&self, query: Option<&Literal>) -> Vec<Rule> {
        let entities = self.entities(query);
        let mut out: Vec<Rule> = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for rule in &self.rules {
            if rule.is_schema() {
                for e in &entities {
                    let g = rule.ground(e);
                    if seen.insert(g.clone()) {
                        out.push(g);
                    }
                }
            } else if seen.insert(rule.clone()) {
                out.push(rule.clone());
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    True,
    False,
    Unknown,
}

impl Verdict {
    pub fn label(self) -> &'static str {
        match self {
            Verdict::True => "True",
            Verdict::False => "False",
            Verdict::Unknown => "Unknown",
        }
    }

    pub fn is_committed(self) -> bool {
        self != Verdict::Unknown
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivationStep {
    /// The literal was stated directly.
    Given(Literal),
    Fired(Rule),
    /// Committed by the closed-world policy.
    ClosedWorld(Literal),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainVerdict {
    pub label: Verdict,
    /// Empty iff the label is UNKNOWN.
    pub derivation: Vec<DerivationStep>,
}

impl ChainVerdict {
    fn unknown() -> Self {
        Self {
            label: Verdict::Unknown,
            derivation: Vec::new(),
        }
    }
}

/// Least fixed point of the ground rules, with the rule that first derived
/// each literal.
pub struct Closure {
    derived: HashMap<Literal, Option<usize>>,
    rules: Vec<Rule>,
}

impl Closure {
    pub fn contains(&self, lit: &Literal) -> bool {
        self.derived.contains_key(lit)
    }

    pub fn literals(&self) -> BTreeSet<Literal> {
        self.derived.keys().cloned().collect()
    }

    /// Rules needed to derive `lit`, in firing order.
    fn proof(&self, lit: &Literal) -> Vec<DerivationStep> {
        let mut order = Vec::new();
        let mut visited = std::collections::HashSet::new();
        self.collect(lit, &mut visited, &mut order);
        if order.is_empty() {
            vec![DerivationStep::Given(lit.clone())]
        } else {
            order
                .into_iter()
                .map(|i| DerivationStep::Fired(self.rules[i].clone()))
                .collect()
        }
    }

    fn collect(&self, lit: &Literal, visited: &mut std::collections::HashSet<Literal>, order: &mut Vec<usize>) {
        if !visited.insert(lit.clone()) {
            return;
        }
        if let Some(Some(rule_idx)) = self.derived.get(lit) {
            for ant in &self.rules[*rule_idx].antecedents {
                self.collect(ant, visited, order);
            }
            order.push(*rule_idx);
        }
    }
}

/// Agenda-driven closure: each rule keeps a count of unsatisfied antecedents.
pub fn closure(base: &HornRuleBase, query: Option<&Literal>) -> Closure {
    let rules = base.grounded_rules(query);
    let mut remaining: Vec<usize> = Vec::with_capacity(rules.len());
    let mut watchers: HashMap<&Literal, Vec<usize>> = HashMap::new();
    for (i, rule) in rules.iter().enumerate() {
        let distinct: BTreeSet<&Literal> = rule.antecedents.iter().collect();
        remaining.push(distinct.len());
        for ant in distinct {
            watchers.entry(ant).or_default().push(i);
        }
    }
    let mut derived: HashMap<Literal, Option<usize>> = HashMap::new();
    let mut agenda: VecDeque<Literal> = VecDeque::new();
    for fact in &base.facts {
        derived.insert(fact.clone(), None);
        agenda.push_back(fact.clone());
    }
    while let Some(lit) = agenda.pop_front() {
        let Some(ws) = watchers.get(&lit) else { continue };
        for &ri in ws {
            remaining[ri] -= 1;
            if remaining[ri] == 0 {
                let head = &rules[ri].consequent;
                if !derived.contains_key(head) {
                    derived.insert(head.clone(), Some(ri));
                    agenda.push_back(head.clone());
                }
            }
        }
    }
    Closure { derived, rules }
}

pub fn closed_world_applies(base: &HornRuleBase) -> bool {
    base.negation == NegationPolicy::ClosedWorld
        && base
            .rules
            .iter()
            .all(|r| r.antecedents.iter().all(|a| a.positive))
}

/// Decides `query` against the base.
///
/// TRUE iff the query literal is in the closure. FALSE iff its negation is,
/// or the closed-world policy applies and neither polarity is derivable.
pub fn forward_chain(base: &HornRuleBase, query: &Literal) -> ChainVerdict {
    if query.atom.is_empty() || query.atom.split(' ').any(is_variable) {
        return ChainVerdict::unknown();
    }
    let cl = closure(base, Some(query));
    if cl.contains(query) {
        return ChainVerdict {
            label: Verdict::True,
            derivation: cl.proof(query),
        };
    }
    let negated = query.negated();
    if cl.contains(&negated) {
        return ChainVerdict {
            label: Verdict::False,
            derivation: cl.proof(&negated),
        };
    }
    if closed_world_applies(base) {
        // Neither polarity derivable: the positive atom is false.
        let label = if query.positive {
            Verdict::False
        } else {
            Verdict::True
        };
        let pos = Literal {
            atom: query.atom.clone(),
            positive: true,
        };
        return ChainVerdict {
            label,
            derivation: vec![DerivationStep::ClosedWorld(pos)],
        };
    }
    ChainVerdict::unknown()
}

fn re(cell: &'static OnceLock<Regex>, pat: &str) -> &'static Regex {
    cell.get_or_init(|| Regex::new(pat).expect("static regex"))
}

/// Parses "If X [and Y] then Z." rules, "All X things are Y." class rules and
/// bare fact sentences. Unusable sentences are counted, never fatal.
pub fn extract_rules(text: &str) -> HornRuleBase {
    static IF_THEN: OnceLock<Regex> = OnceLock::new();
    static CLASS: OnceLock<Regex> = OnceLock::new();
    static CLOSED: OnceLock<Regex> = OnceLock::new();
    let if_then = re(&IF_THEN, r"(?i)^if\s+(.+?),?\s+then\s+(.+)$");
    let class = re(
        &CLASS,
        r"(?i)^(?:all\s+)?([a-z]+(?:\s*,\s*[a-z]+|\s+and\s+[a-z]+)*)\s+(things|people)\s+are\s+(not\s+)?(.+)$",
    );
    let closed = re(
        &CLOSED,
        r"(?i)(closed[- ]world|anything not stated is false|everything not stated is false)",
    );

    let mut base = HornRuleBase::new();
    for sentence in split_sentences(text) {
        let s = sentence.trim();
        if s.is_empty() {
            continue;
        }
        if closed.is_match(s) {
            base.negation = NegationPolicy::ClosedWorld;
            continue;
        }
        if s.ends_with('?') {
            base.skipped_sentences += 1;
            continue;
        }
        let body = s.trim_end_matches(['.', '!', ';']);
        if let Some(c) = if_then.captures(body) {
            let ants = parse_conjunction(&c[1]);
            let heads = parse_conjunction(&c[2]);
            if ants.is_empty() || heads.is_empty() {
                base.skipped_sentences += 1;
                continue;
            }
            for head in heads {
                base.add_rule(Rule::new(ants.clone(), head));
            }
            continue;
        }
        if let Some(c) = class.captures(body) {
            let var = if c[2].eq_ignore_ascii_case("people") {
                "someone"
            } else {
                "something"
            };
            let ants: Vec<Literal> = c[1]
                .split([',', ' '])
                .map(str::trim)
                .filter(|w| !w.is_empty() && !w.eq_ignore_ascii_case("and"))
                .map(|adj| Literal::pos(&format!("{var} is {adj}")))
                .collect();
            let negative = c.get(3).is_some();
            for adj in c[4].split(" and ").map(str::trim).filter(|w| !w.is_empty()) {
                let head = Literal {
                    atom: normalize_atom(&format!("{var} is {adj}")),
                    positive: !negative,
                };
                base.add_rule(Rule::new(ants.clone(), head));
            }
            continue;
        }
        match Literal::parse(body) {
            Some(lit) if lit.atom.split(' ').count() >= 2 => base.add_fact(lit),
            _ => base.skipped_sentences += 1,
        }
    }
    base
}

/// Pulls the statement to decide out of a question such as
/// "Statement: The cat is big. True, False, or Unknown?".
pub fn parse_query_statement(instruction: &str) -> Option<Literal> {
    static LABELLED: OnceLock<Regex> = OnceLock::new();
    static IS_IT: OnceLock<Regex> = OnceLock::new();
    let labelled = re(&LABELLED, r"(?i)(?:statement|query|claim|hypothesis)\s*:\s*([^\n?]+?)(?:[.?]\s|[.?]?$|\n)");
    let is_it = re(&IS_IT, r"(?i)is it (?:true|the case) that\s+([^?]+)\?");
    if let Some(c) = labelled.captures(instruction) {
        return Literal::parse(&c[1]);
    }
    if let Some(c) = is_it.captures(instruction) {
        return Literal::parse(&c[1]);
    }
    split_sentences(instruction)
        .into_iter()
        .filter(|s| !s.trim_end().ends_with('?'))
        .filter(|s| !s.to_lowercase().contains("true") || !s.to_lowercase().contains("false"))
        .last()
        .and_then(|s| Literal::parse(s.trim_end_matches(['.', '!'])))
}

fn parse_conjunction(text: &str) -> Vec<Literal> {
    let mut out: Vec<Literal> = Vec::new();
    let mut prefix: Option<String> = None;
    for part in text.split(" and ").map(str::trim).filter(|p| !p.is_empty()) {
        let norm = normalize_atom(part);
        let words: Vec<&str> = norm.split(' ').collect();
        let has_verb = words.len() >= 3 || words.iter().any(|w| is_aux(w));
        let full = match (&prefix, has_verb) {
            (Some(p), false) => format!("{p} {norm}"),
            _ => norm.clone(),
        };
        let full_words: Vec<&str> = full.split(' ').collect();
        let subj = subject_len(&full_words);
        if subj < full_words.len() {
            prefix = Some(full_words[..=subj].join(" "));
        }
        if let Some(lit) = Literal::parse(&full) {
            out.push(lit);
        }
    }
    out
}

/// Normalizes an atom: lowercase, collapsed whitespace, no edge punctuation.
pub fn normalize_atom(text: &str) -> String {
    let lowered = text.to_lowercase();
    let collapsed = lowered.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed
        .trim_matches(|c: char| c.is_ascii_punctuation() && c != '\'')
        .trim()
        .to_string()
}

fn expand_contractions(s: &str) -> String {
    s.split(' ')
        .flat_map(|w| match w {
            "isn't" => vec!["is", "not"],
            "aren't" => vec!["are", "not"],
            "doesn't" => vec!["does", "not"],
            "don't" => vec!["do", "not"],
            "cannot" | "can't" => vec!["can", "not"],
            other => vec![other],
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn third_person(verb: &str) -> String {
    let bytes = verb.as_bytes();
    if verb.ends_with('y')
        && bytes.len() >= 2
        && !b"aeiou".contains(&bytes[bytes.len() - 2])
    {
        format!("{}ies", &verb[..verb.len() - 1])
    } else if ["s", "sh", "ch", "x", "z", "o"].iter().any(|s| verb.ends_with(s)) {
        format!("{verb}es")
    } else {
        format!("{verb}s")
    }
}

const VARIABLES: [&str; 6] = ["something", "someone", "somebody", "it", "they", "everything"];

fn is_variable(word: &str) -> bool {
    VARIABLES.contains(&word)
}

fn is_aux(word: &str) -> bool {
    matches!(word, "is" | "are" | "does" | "do" | "was" | "were" | "can" | "has" | "have")
}

/// Length of the grammatical subject: up to the first auxiliary, otherwise up
/// to the first third-person verb.
fn subject_len(words: &[&str]) -> usize {
    if words.is_empty() {
        return 0;
    }
    if is_variable(words[0]) {
        return 1;
    }
    if let Some(i) = words.iter().position(|w| is_aux(w)) {
        return i.max(1);
    }
    words
        .iter()
        .enumerate()
        .skip(1)
        .find(|(_, w)| w.len() > 2 && w.ends_with('s') && !w.ends_with("ss"))
        .map(|(i, _)| i)
        .unwrap_or(1)
}

pub(crate) fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    for (k, &(i, c)) in chars.iter().enumerate() {
        let boundary = match c {
            '.' | '!' | '?' => chars.get(k + 1).map_or(true, |&(_, n)| n.is_whitespace()),
            '\n' => true,
            _ => false,
        };
        if boundary {
            let end = i + c.len_utf8();
            let s = text[start..end].trim();
            if !s.is_empty() {
                out.push(s);
            }
            start = end;
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        out.push(tail);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base(facts: &[&str], rules: &[(&[&str], &str)]) -> HornRuleBase {
        let mut b = HornRuleBase::new();
        for f in facts {
            b.add_fact(Literal::pos(f));
        }
        for (ants, head) in rules {
            b.add_rule(Rule::new(ants.iter().map(|a| Literal::pos(a)).collect(), Literal::pos(head)));
        }
        b
    }

    #[test]
    fn one_step_modus_ponens() {
        let b = base(&["a"], &[(&["a"], "b")]);
        let v = forward_chain(&b, &Literal::pos("b"));
        assert_eq!(v.label, Verdict::True);
        assert_eq!(v.derivation, vec![DerivationStep::Fired(Rule::new(vec![Literal::pos("a")], Literal::pos("b")))]);
    }

    #[test]
    fn underivable_is_unknown_without_closed_world() {
        let b = base(&["a"], &[]);
        let v = forward_chain(&b, &Literal::pos("c"));
        assert_eq!(v.label, Verdict::Unknown);
        assert!(v.derivation.is_empty());
    }

    #[test]
    fn closed_world_commits_false() {
        let mut b = base(&["a"], &[]);
        b.negation = NegationPolicy::ClosedWorld;
        assert_eq!(forward_chain(&b, &Literal::pos("c")).label, Verdict::False);
        assert_eq!(forward_chain(&b, &Literal::neg("c")).label, Verdict::True);
    }

    #[test]
    fn closed_world_is_disabled_by_negative_antecedents() {
        let mut b = base(&["a"], &[]);
        b.add_rule(Rule::new(vec![Literal::neg("x")], Literal::pos("y")));
        b.negation = NegationPolicy::ClosedWorld;
        assert_eq!(forward_chain(&b, &Literal::pos("c")).label, Verdict::Unknown);
    }

    #[test]
    fn malformed_query_is_unknown() {
        let b = base(&["a"], &[]);
        assert_eq!(forward_chain(&b, &Literal::pos("  ... ")).label, Verdict::Unknown);
    }

    #[test]
    fn negation_parsing() {
        assert_eq!(Literal::parse("The cat is not red."), Some(Literal::neg("the cat is red")));
        assert_eq!(Literal::parse("Bob does not like the dog"), Some(Literal::neg("bob likes the dog")));
        assert_eq!(Literal::parse("The mice don't chase Bob"), Some(Literal::neg("the mice chase bob")));
        assert_eq!(Literal::parse("The cat isn't big"), Some(Literal::neg("the cat is big")));
    }

    #[test]
    fn extracts_rule_and_fact() {
        let b = extract_rules("If the cat is red then the cat is big. The cat is red.");
        assert_eq!(b.rules().len(), 1);
        assert_eq!(b.facts().len(), 1);
        assert_eq!(forward_chain(&b, &Literal::pos("the cat is big")).label, Verdict::True);
    }

    #[test]
    fn bare_fact_sentence() {
        let b = extract_rules("Cats are animals.");
        assert_eq!((b.facts().len(), b.rules().len()), (1, 0));
    }

    #[test]
    fn duplicate_rules_are_dropped() {
        let b = extract_rules("If a cat is red then a cat is big. If a cat is red then a cat is big.");
        assert_eq!(b.rules().len(), 1);
    }

    #[test]
    fn schema_rules_ground_over_entities() {
        let text = "Bob is red. The bald eagle is red. If something is red and big then it is rough. \
                    If someone is red then they are big. All rough things are round.";
        let b = extract_rules(text);
        for who in ["bob", "the bald eagle"] {
            let q = Literal::pos(&format!("{who} is round"));
            assert_eq!(forward_chain(&b, &q).label, Verdict::True, "{who}");
        }
    }

    #[test]
    fn conjunct_carry_over_and_negative_antecedent() {
        let b = extract_rules("The cat is red. The cat is not big. If the cat is red and not big then the cat is kind.");
        assert_eq!(
            b.rules()[0].antecedents,
            vec![Literal::pos("the cat is red"), Literal::neg("the cat is big")]
        );
        assert_eq!(forward_chain(&b, &Literal::pos("the cat is kind")).label, Verdict::True);
    }

    #[test]
    fn explicit_negation_commits_false() {
        let b = extract_rules("Bob is cold. If Bob is cold then Bob is not happy.");
        let v = forward_chain(&b, &Literal::pos("bob is happy"));
        assert_eq!(v.label, Verdict::False);
        assert_eq!(v.derivation.len(), 1);
    }

    #[test]
    fn query_statement_forms() {
        assert_eq!(
            parse_query_statement("Statement: The cat is big. Is the statement True, False, or Unknown?"),
            Some(Literal::pos("the cat is big"))
        );
        assert_eq!(
            parse_query_statement("Is it true that Bob is not kind?"),
            Some(Literal::neg("bob is kind"))
        );
        assert_eq!(
            parse_query_statement("The cat is big. True, False, or Unknown?"),
            Some(Literal::pos("the cat is big"))
        );
    }

    #[test]
    fn closed_world_marker_sentence() {
        let b = extract_rules("Anything not stated is false. Bob is red.");
        assert_eq!(b.negation, NegationPolicy::ClosedWorld);
        assert_eq!(forward_chain(&b, &Literal::pos("bob is big")).label, Verdict::False);
    }
}
