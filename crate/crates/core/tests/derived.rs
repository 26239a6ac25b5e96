//! Concrete values checked against hand computation or brute force.

mod common;

use std::collections::{BTreeMap, BTreeSet};

use reflect_core::analytics::{stable_error_rate, universal_failure_histogram, ResultRecord, StableErrorBase};
use reflect_core::engines::fence::extract_fenced_code;
use reflect_core::engines::horn::{closure, HornRuleBase, Literal, Rule};
use reflect_core::engines::tfidf::tfidf_retrieve;
use reflect_core::engines::world::{Action, WorldState};
use reflect_core::gateway::ScriptedBackend;
use reflect_core::heavyweight::{ReasoningState, StateDelta};
use reflect_core::problem::{ContextDoc, ProblemInstance};
use reflect_core::runner::{run_minimal_reflect, Knobs, Runtime};
use reflect_core::tools::FinishReason;
use reflect_core::trace::EventKind;

#[test]
fn tfidf_ranking_by_hand() {
    // N=4. df: solar=2, panel=1, wind=2, turbine=1, grid=1.
    let docs = vec![ContextDoc {
        name: "d".into(),
        text: "solar panel solar\n\nwind turbine\n\nsolar wind\n\ngrid".into(),
    }];
    let got = tfidf_retrieve("solar panel", &docs, 4);
    let ln = f64::ln;
    let (idf2, idf1) = (ln(4.0 / 2.0), ln(4.0));
    let q = [ln(2.0) * idf2, ln(2.0) * idf1];
    let s0 = [ln(3.0) * idf2, ln(2.0) * idf1];
    let s2 = [ln(2.0) * idf2, ln(2.0) * idf2];
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let c0 = (q[0] * s0[0] + q[1] * s0[1]) / (norm(&q) * norm(&s0));
    let c2 = (q[0] * s2[0]) / (norm(&q) * norm(&s2));
    let order: Vec<usize> = got.iter().map(|r| r.section.index).collect();
    assert_eq!(order, [0, 2, 1, 3]);
    assert!((got[0].score - c0).abs() < 1e-12);
    assert!((got[1].score - c2).abs() < 1e-12);
    assert_eq!(got[2].score, 0.0);
}

#[test]
fn first_of_two_fences() {
    let reply = "Try this:\n```python\nprint(1)\n```\nor else\n```\nprint(2)\n```\n";
    assert_eq!(extract_fenced_code(reply).as_deref(), Some("print(1)"));
}

#[test]
fn five_atom_six_rule_closure() {
    // a; a->b; b->c; c&d->e; b&c->~d; e->a; a&~d->f.
    let mut base = HornRuleBase::new();
    base.add_fact(Literal::pos("a"));
    let r = |ants: &[Literal], head: Literal| Rule::new(ants.to_vec(), head);
    let (a, b, c, d, e) = (Literal::pos("a"), Literal::pos("b"), Literal::pos("c"), Literal::pos("d"), Literal::pos("e"));
    base.add_rule(r(&[a.clone()], b.clone()));
    base.add_rule(r(&[b.clone()], c.clone()));
    base.add_rule(r(&[c.clone(), d.clone()], e.clone()));
    base.add_rule(r(&[b.clone(), c.clone()], Literal::neg("d")));
    base.add_rule(r(&[e], a.clone()));
    base.add_rule(r(&[a.clone(), Literal::neg("d")], Literal::pos("f")));
    let want: BTreeSet<Literal> = [a, b, c, Literal::neg("d"), Literal::pos("f")].into_iter().collect();
    assert_eq!(closure(&base, None).literals(), want);
    assert_eq!(common::oracle_closure(&base), want);
}

/// Independent simulator for goto/pickup/put/open over the three-object world.
#[derive(Clone, PartialEq, Debug)]
struct Mini {
    agent: String,
    holding: Option<String>,
    loc: BTreeMap<String, String>,
    cabinet_open: bool,
}

impl Mini {
    fn start() -> Self {
        let loc = [("apple", "countertop"), ("mug", "cabinet"), ("cabinet", "kitchen")]
            .into_iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect();
        Mini { agent: "hallway".into(), holding: None, loc, cabinet_open: false }
    }

    fn at(&self, x: &str) -> bool {
        self.agent == x || self.loc.get(x).is_some_and(|l| *l == self.agent)
    }

    fn step(&self, a: &Action) -> Option<Mini> {
        let mut n = self.clone();
        match a {
            Action::Goto(l) => n.agent = l.clone(),
            Action::Pickup(o) => {
                let l = self.loc.get(o)?;
                if self.holding.is_some() || !self.at(o) || (l == "cabinet" && !self.cabinet_open) {
                    return None;
                }
                n.loc.insert(o.clone(), "agent".into());
                n.holding = Some(o.clone());
            }
            Action::Put(o, r) => {
                if self.holding.as_deref() != Some(o) || !self.at(r) || (r == "cabinet" && !self.cabinet_open) {
                    return None;
                }
                n.loc.insert(o.clone(), r.clone());
                n.holding = None;
            }
            Action::Open(r) => {
                if r != "cabinet" || !self.at(r) || self.cabinet_open {
                    return None;
                }
                n.cabinet_open = true;
            }
            _ => return None,
        }
        Some(n)
    }
}

#[test]
fn two_action_plans_by_brute_force() {
    let world = WorldState::from_context(
        "agent at: hallway\nobjects:\n- apple: countertop\n- mug: cabinet\n- cabinet: kitchen [open=false]\n",
    )
    .unwrap();
    let places = ["countertop", "cabinet", "kitchen", "hallway"];
    let objs = ["apple", "mug"];
    let mut alphabet: Vec<Action> = places.iter().map(|p| Action::Goto(p.to_string())).collect();
    alphabet.extend(objs.iter().map(|o| Action::Pickup(o.to_string())));
    for o in objs {
        alphabet.extend(places.iter().map(|p| Action::Put(o.to_string(), p.to_string())));
    }
    alphabet.push(Action::Open("cabinet".into()));
    let mut fully_valid = 0;
    for x in &alphabet {
        for y in &alphabet {
            let plan = [x.clone(), y.clone()];
            let start = Mini::start();
            let want = match start.step(x) {
                None => 0,
                Some(s1) => match s1.step(y) {
                    None => 1,
                    Some(_) => 2,
                },
            };
            assert_eq!(world.prefix_score(&plan), (want, 2), "{plan:?}");
            fully_valid += usize::from(want == 2);
        }
    }
    // goto X then goto Y (16), goto countertop then pickup apple, goto
    // cabinet then open cabinet, goto kitchen then open cabinet.
    assert_eq!(fully_valid, 19);
}

#[test]
fn four_level_cascade() {
    let mut s = ReasoningState::init(&ProblemInstance::new("c", "?"));
    let d: StateDelta = serde_json::from_str(
        r#"{"evidence":[{"id":"e9","text":"leaf"}],
            "assumptions":[
              {"id":"a1","text":"l1","dependents":["a2"]},
              {"id":"a2","text":"l2","dependents":["a3"]},
              {"id":"a3","text":"l3","dependents":["a4"]},
              {"id":"a4","text":"l4","dependents":["e9"]},
              {"id":"a5","text":"free","dependents":[]}]}"#,
    )
    .unwrap();
    s.apply_delta(&d).unwrap();
    let touched: BTreeSet<String> = s.retract("a2").unwrap().into_iter().collect();
    let want: BTreeSet<String> = ["a2", "a3", "a4", "e9"].iter().map(|x| x.to_string()).collect();
    assert_eq!(touched, want);
    let live: Vec<&str> = s
        .assumptions()
        .iter()
        .filter(|a| a.status != reflect_core::heavyweight::AssumptionStatus::Retracted)
        .map(|a| a.id.as_str())
        .collect();
    assert_eq!(live, ["a1", "a5"]);
    assert!(s.evidence()[0].flagged);
    s.check_cascade().unwrap();
}

fn rec(model: &str, pid: &str, seed: u64, correct: bool, answer: &str) -> ResultRecord {
    ResultRecord {
        run_id: format!("direct:{model}:{seed}"),
        seed,
        model: model.into(),
        method: "direct".into(),
        domain: "aime".into(),
        problem_id: pid.into(),
        converged: true,
        correct: Some(correct),
        final_answer: Some(answer.into()),
        finish_reason: FinishReason::Answered,
        n_llm_calls: 1,
        n_retries: 0,
        n_steps: 1,
        score: Some(if correct { 1.0 } else { 0.0 }),
        shape: None,
        tokens_total: 1,
        tool: None,
        wall_time_ms: 0,
    }
}

#[test]
fn stable_error_share_by_brute_force() {
    // 50 problems x 3 seeds: 36 wrong on every seed, 11 of them with the same
    // wrong answer each time.
    let mut records = Vec::new();
    for i in 0..50 {
        let pid = format!("p{i}");
        for seed in 0..3 {
            let r = if i < 11 {
                rec("m", &pid, seed, false, "7")
            } else if i < 36 {
                rec("m", &pid, seed, false, &format!("{}", seed + 10))
            } else {
                rec("m", &pid, seed, seed != 1, "1")
            };
            records.push(r);
        }
    }
    let mut per: BTreeMap<&str, Vec<&ResultRecord>> = BTreeMap::new();
    for r in &records {
        per.entry(r.problem_id.as_str()).or_default().push(r);
    }
    let (mut stable, mut denom) = (0, 0);
    for runs in per.values() {
        if runs.iter().all(|r| r.correct == Some(false)) {
            denom += 1;
            let answers: BTreeSet<_> = runs.iter().map(|r| r.final_answer.clone()).collect();
            stable += usize::from(answers.len() == 1);
        }
    }
    let got = &stable_error_rate(&records, 3, StableErrorBase::WrongOnAllSeeds).unwrap()[&("m".to_string(), "direct".to_string())];
    assert_eq!((got.stable, got.denominator), (stable, denom));
    assert_eq!((stable, denom), (11, 36));
    assert_eq!(((got.rate.unwrap() * 1000.0).round()) / 10.0, 30.6);
}

#[test]
fn checklist_every_three_steps() {
    let p = ProblemInstance::new("r", "Who wrote it?").with_doc("d", "Some text.");
    let replies = std::iter::repeat("Reflection: still unsure.\nThought: look\nAction: lookup[text]").take(9);
    let b = ScriptedBackend::from_replies(replies);
    let rt = Runtime { knobs: Knobs { react_max_steps: 9, checklist_interval: 3, ..Knobs::default() }, ..Runtime::default() };
    let out = run_minimal_reflect(&p, &b, &rt).unwrap();
    assert_eq!(out.finish_reason, FinishReason::BudgetExhausted);
    assert_eq!(out.n_llm_calls, 9);
    let steps: Vec<u32> = out.trace.iter().filter(|e| e.kind == EventKind::Reflection).map(|e| e.step).collect();
    assert_eq!(steps, [3, 6, 9]);
}

#[test]
fn universal_failure_histogram_sums_to_problems() {
    // Three models, four problems; problem k is failed by exactly k models.
    let models = ["m0", "m1", "m2"];
    let mut records = Vec::new();
    for k in 0..4 {
        for (j, m) in models.iter().enumerate() {
            let failed = j < k;
            records.push(rec(m, &format!("q{k}"), 0, !failed, "x"));
            records.push(rec(m, &format!("q{k}"), 1, false, "y"));
        }
    }
    let h = universal_failure_histogram(&records).unwrap();
    assert_eq!(h["direct"], [1, 1, 1, 1]);
    assert_eq!(h["direct"].iter().sum::<usize>(), 4);
}
