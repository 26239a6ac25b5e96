#![allow(dead_code)]

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use reflect_core::engines::horn::{HornRuleBase, Literal, NegationPolicy, Rule, Verdict};
use reflect_core::heavyweight::{Diagnostic, FailureType, Health, ReasoningState, StateDelta};

pub fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn fixtures() -> PathBuf {
    repo_root().join("fixtures")
}

/// Recursive copy that skips any `out` directory.
pub fn copy_tree(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for entry in fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let name = entry.file_name();
        let src = entry.path();
        if src.is_dir() {
            if name == "out" {
                continue;
            }
            copy_tree(&src, &to.join(&name));
        } else {
            fs::copy(&src, to.join(&name)).unwrap();
        }
    }
}

// ---- Horn bases ---------------------------------------------------------

pub fn random_literal<R: Rng>(rng: &mut R, atoms: usize) -> Literal {
    let atom = format!("p{}", rng.gen_range(0..atoms));
    if rng.gen_bool(0.7) {
        Literal::pos(&atom)
    } else {
        Literal::neg(&atom)
    }
}

pub fn random_base<R: Rng>(rng: &mut R) -> (HornRuleBase, usize) {
    let atoms = rng.gen_range(1..=8);
    let mut base = HornRuleBase::new();
    if rng.gen_bool(0.3) {
        base.negation = NegationPolicy::ClosedWorld;
    }
    for _ in 0..rng.gen_range(0..=4) {
        base.add_fact(random_literal(rng, atoms));
    }
    for _ in 0..rng.gen_range(0..=10) {
        let ants = (0..rng.gen_range(1..=3)).map(|_| random_literal(rng, atoms)).collect();
        base.add_rule(Rule::new(ants, random_literal(rng, atoms)));
    }
    (base, atoms)
}

/// Naive fixpoint: sweep every rule until nothing changes.
pub fn oracle_closure(base: &HornRuleBase) -> BTreeSet<Literal> {
    let mut known: BTreeSet<Literal> = base.facts().clone();
    loop {
        let mut changed = false;
        for r in base.rules() {
            if r.antecedents.iter().all(|a| known.contains(a)) && known.insert(r.consequent.clone()) {
                changed = true;
            }
        }
        if !changed {
            return known;
        }
    }
}

pub fn oracle_verdict(base: &HornRuleBase, q: &Literal) -> Verdict {
    let cl = oracle_closure(base);
    let flip = Literal {
        atom: q.atom.clone(),
        positive: !q.positive,
    };
    if cl.contains(q) {
        Verdict::True
    } else if cl.contains(&flip) {
        Verdict::False
    } else if base.negation == NegationPolicy::ClosedWorld
        && base.rules().iter().all(|r| r.antecedents.iter().all(|a| a.positive))
    {
        if q.positive {
            Verdict::False
        } else {
            Verdict::True
        }
    } else {
        Verdict::Unknown
    }
}

// ---- heavyweight state fuzzing ------------------------------------------

pub fn all_ids(s: &ReasoningState) -> Vec<String> {
    let mut ids: Vec<String> = Vec::new();
    ids.extend(s.goals().iter().map(|g| g.id.clone()));
    ids.extend(s.assumptions().iter().map(|a| a.id.clone()));
    ids.extend(s.evidence().iter().map(|e| e.id.clone()));
    ids.extend(s.decisions().iter().map(|d| d.id.clone()));
    ids.extend(s.conflicts().iter().map(|c| c.id.clone()));
    ids
}

fn pick<'a, R: Rng>(rng: &mut R, v: &'a [String]) -> Option<&'a String> {
    v.choose(rng)
}

/// A delta whose references usually resolve; one in ten names a missing id.
pub fn random_delta<R: Rng>(rng: &mut R, s: &ReasoningState) -> StateDelta {
    let ids = all_ids(s);
    let goals: Vec<String> = s.goals().iter().map(|g| g.id.clone()).collect();
    let assumptions: Vec<String> = s.assumptions().iter().map(|a| a.id.clone()).collect();
    let id_ref = |rng: &mut R, pool: &[String]| -> Option<String> {
        if rng.gen_bool(0.1) {
            Some("zz-missing".to_string())
        } else {
            pick(rng, pool).cloned()
        }
    };
    let conf = ["low", "med", "high"];
    let mut ev = Vec::new();
    for _ in 0..rng.gen_range(0..=2) {
        let supports: Vec<String> = id_ref(rng, &assumptions).into_iter().collect();
        ev.push(serde_json::json!({"text": "obs", "confidence": conf[rng.gen_range(0..3)], "supports": supports}));
    }
    let mut asm = Vec::new();
    for _ in 0..rng.gen_range(0..=2) {
        let deps: Vec<String> = (0..rng.gen_range(0..=2)).filter_map(|_| id_ref(rng, &ids)).collect();
        asm.push(serde_json::json!({"text": "guess", "dependents": deps}));
    }
    let mut dec = Vec::new();
    if rng.gen_bool(0.3) {
        dec.push(serde_json::json!({"text": "commit", "reversible": rng.gen_bool(0.7), "pending": rng.gen_bool(0.3)}));
    }
    let status = ["open", "active", "done", "blocked"];
    let mut gl = Vec::new();
    if rng.gen_bool(0.4) {
        gl.push(serde_json::json!({"text": "sub", "parent": id_ref(rng, &goals), "status": status[rng.gen_range(0..4)]}));
    }
    let mut upd = Vec::new();
    if rng.gen_bool(0.3) {
        if let Some(g) = id_ref(rng, &goals) {
            upd.push(serde_json::json!({"id": g, "status": status[rng.gen_range(0..4)]}));
        }
    }
    let sev = ["minor", "major", "critical"];
    let mut cf = Vec::new();
    if rng.gen_bool(0.25) && ids.len() >= 2 {
        let a = id_ref(rng, &ids).unwrap();
        let b = id_ref(rng, &ids).unwrap();
        cf.push(serde_json::json!({"between": [a, b], "severity": sev[rng.gen_range(0..3)]}));
    }
    serde_json::from_value(serde_json::json!({
        "evidence": ev, "assumptions": asm, "decisions": dec,
        "goals": gl, "goal_updates": upd, "conflicts": cf,
    }))
    .expect("delta shape")
}

pub fn random_diagnostic<R: Rng>(rng: &mut R, s: &ReasoningState) -> Diagnostic {
    let ids = all_ids(s);
    let health = [Health::Good, Health::Caution, Health::Critical][rng.gen_range(0..3)];
    let affected = if health == Health::Critical {
        ids.choose(rng).into_iter().cloned().collect()
    } else {
        Vec::new()
    };
    Diagnostic {
        failure_type: FailureType::Logic,
        affected,
        severity: "high".into(),
        health,
    }
}

/// One random mutation. Returns a description for failure messages.
pub fn random_op<R: Rng>(rng: &mut R, s: &mut ReasoningState, step: &mut u32) -> Result<String, String> {
    match rng.gen_range(0..10) {
        0..=2 => {
            let d = random_delta(rng, s);
            let before = s.clone();
            match s.apply_delta(&d) {
                Ok(_) => Ok("apply_delta".into()),
                Err(e) => {
                    if *s != before {
                        return Err(format!("rejected delta ({e}) changed the state"));
                    }
                    Ok("apply_delta (rejected)".into())
                }
            }
        }
        3 => {
            let a: Vec<String> = s.assumptions().iter().map(|a| a.id.clone()).collect();
            if let Some(id) = a.choose(rng) {
                s.retract(id);
            }
            Ok("retract".into())
        }
        4 => {
            let ids = all_ids(s);
            let some: Vec<String> = ids.choose_multiple(rng, 2).cloned().collect();
            s.downgrade(&some);
            Ok("downgrade".into())
        }
        5 => {
            let cs: Vec<(String, String)> = s.conflicts().iter().map(|c| (c.id.clone(), c.between.0.clone())).collect();
            if let Some((cid, loser)) = cs.choose(rng) {
                s.resolve_conflict(cid, rng.gen_bool(0.5).then_some(loser.as_str()));
            }
            Ok("resolve_conflict".into())
        }
        6 => {
            let idx = s.checkpoint();
            if s.snapshot() != &s.checkpoints()[idx] {
                return Err("checkpoint differs from the state it captured".into());
            }
            Ok("checkpoint".into())
        }
        7 => {
            let n = s.checkpoints().len();
            if n > 0 {
                let idx = rng.gen_range(0..n);
                let want = s.checkpoints()[idx].clone();
                if !s.rollback(idx) || s.snapshot() != &want {
                    return Err(format!("rollback to {idx} was not exact"));
                }
            }
            Ok("rollback".into())
        }
        8 => {
            match rng.gen_range(0..3) {
                0 => {
                    s.add_decision("extra", &["note"]);
                }
                1 => {
                    s.promote_supported();
                }
                _ => {
                    s.archive_done();
                }
            }
            Ok("bookkeeping".into())
        }
        _ => {
            *step += 1;
            s.begin_step(*step);
            s.note_step_outcome(rng.gen_bool(0.5));
            if rng.gen_bool(0.3) {
                let dx = random_diagnostic(rng, s);
                s.note_inspection(&dx);
            }
            Ok("step".into())
        }
    }
}
