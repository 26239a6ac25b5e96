mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use reflect_core::analytics::{cost_metrics, fit_lift_slope};
use reflect_core::engines::diff::validate_diff;
use reflect_core::engines::horn::{forward_chain, Literal, NegationPolicy, Verdict};
use reflect_core::engines::vote::{modal_vote, normalize_answer};
use reflect_core::engines::world::{Action, WorldState};
use reflect_core::gateway::{ScriptEntry, ScriptedBackend};
use reflect_core::heavyweight::{run_heavyweight, uncertainty, HeavyConfig, ReasoningState};
use reflect_core::problem::ProblemInstance;
use reflect_core::prompts::Prompts;
use reflect_core::router::Classifier;
use reflect_core::scoring::wilson_ci;
use reflect_core::trace::EventKind;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn chain_agrees_with_naive_closure(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (base, atoms) = common::random_base(&mut r);
        for _ in 0..4 {
            let q = common::random_literal(&mut r, atoms);
            let got = forward_chain(&base, &q);
            prop_assert_eq!(got.label, common::oracle_verdict(&base, &q));
            prop_assert_eq!(got.derivation.is_empty(), got.label == Verdict::Unknown);
        }
    }

    #[test]
    fn true_survives_more_facts(seed in any::<u64>(), extra in 0usize..8) {
        let mut r = rng(seed);
        let (mut base, atoms) = common::random_base(&mut r);
        base.negation = NegationPolicy::ExplicitOnly;
        let queries: Vec<Literal> = (0..4).map(|_| common::random_literal(&mut r, atoms)).collect();
        let before: Vec<Verdict> = queries.iter().map(|q| forward_chain(&base, q).label).collect();
        for _ in 0..extra {
            base.add_fact(common::random_literal(&mut r, atoms));
        }
        for (q, b) in queries.iter().zip(before) {
            if b == Verdict::True {
                prop_assert_eq!(forward_chain(&base, q).label, Verdict::True);
            }
        }
    }

    #[test]
    fn vote_ignores_order(
        pool in prop::collection::vec(prop::option::weighted(0.9, "[1-4]"), 1..12),
        perm_seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        let mut counts = std::collections::HashMap::new();
        for v in pool.iter().flatten() {
            *counts.entry(v.clone()).or_insert(0usize) += 1;
        }
        let top = counts.values().copied().max().unwrap_or(0);
        prop_assume!(top > 0 && counts.values().filter(|c| **c == top).count() == 1);
        let mut shuffled = pool.clone();
        shuffled.shuffle(&mut rng(perm_seed));
        prop_assert_eq!(modal_vote(&pool), modal_vote(&shuffled));
    }

    #[test]
    fn normalizer_is_idempotent(s in "[ +-]?[0-9]{0,4}(\\.[0-9]{0,3})?[a-zA-Z ]{0,3}") {
        let once = normalize_answer(&s);
        prop_assert_eq!(normalize_answer(&once), once);
    }

    #[test]
    fn wilson_contains_point_estimate(n in 1u64..2000, frac in 0.0f64..=1.0, z in 0.5f64..3.5) {
        let k = ((n as f64) * frac).floor() as u64;
        let (lo, hi) = wilson_ci(k, n, z).unwrap();
        let p = k as f64 / n as f64;
        prop_assert!((0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi));
        prop_assert!(lo <= p + 1e-12 && p <= hi + 1e-12);
    }

    #[test]
    fn fit_matches_normal_equations(pts in prop::collection::vec((0.0f64..100.0, -100.0f64..100.0), 3..12)) {
        let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let spread = xs.iter().cloned().fold(f64::MIN, f64::max) - xs.iter().cloned().fold(f64::MAX, f64::min);
        prop_assume!(spread > 1e-3);
        let fit = fit_lift_slope(&pts).unwrap();
        // Solve [n Σx; Σx Σx²][b a]ᵀ = [Σy; Σxy] by Cramer's rule.
        let n = pts.len() as f64;
        let (sx, sy) = (xs.iter().sum::<f64>(), pts.iter().map(|p| p.1).sum::<f64>());
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        let det = n * sxx - sx * sx;
        let slope = (n * sxy - sx * sy) / det;
        let intercept = (sxx * sy - sx * sxy) / det;
        let scale = 1.0 + slope.abs().max(intercept.abs());
        prop_assert!((fit.slope - slope).abs() <= 1e-9 * scale);
        prop_assert!((fit.intercept - intercept).abs() <= 1e-9 * scale);
        prop_assert!(fit.pearson_r.abs() <= 1.0);
        prop_assert!((0.0..=1.0).contains(&fit.p_value));
    }

    #[test]
    fn cost_identity(tokens in 1.0f64..1e6, acc in 0.1f64..100.0, rate in 1e-8f64..1e-4) {
        let c = cost_metrics(tokens, acc, rate);
        let spent = c.dollars_per_100_correct * acc / 100.0;
        prop_assert!((spent - 100.0 * tokens * rate).abs() <= 1e-9 * spent.max(1e-12));
        prop_assert!((c.acc_per_1k_tokens * tokens / 1000.0 - acc).abs() <= 1e-9 * acc);
    }

    #[test]
    fn diff_round_trip(files in prop::collection::vec(file_patch(), 1..4)) {
        let text: String = files.concat();
        let doc = validate_diff(&text);
        prop_assert!(doc.is_valid_unified, "{:?}\n{}", doc.first_error, text);
        prop_assert_eq!(doc.to_unified_string(), text);
        prop_assert_eq!(validate_diff(&doc.to_unified_string()).files, doc.files);
    }

    #[test]
    fn world_prefixes_are_monotone(plan in prop::collection::vec(action(), 0..8)) {
        let w = world();
        let (valid, total) = w.prefix_score(&plan);
        prop_assert_eq!(total, plan.len());
        prop_assert_eq!(w.prefix_score(&plan), (valid, total));
        for i in 0..=plan.len() {
            prop_assert_eq!(w.prefix_score(&plan[..i]).0, valid.min(i));
        }
        for a in &plan {
            let before = w.clone();
            let _ = w.check_preconditions(a);
            prop_assert_eq!(&w, &before);
        }
    }

    #[test]
    fn heavyweight_u_and_rollback(seed in any::<u64>(), ops in 1usize..120) {
        let mut r = rng(seed);
        let mut s = ReasoningState::init(&ProblemInstance::new("p", "Solve."));
        let mut step = 0;
        let cp = s.checkpoint();
        let saved = s.snapshot().clone();
        for _ in 0..ops {
            common::random_op(&mut r, &mut s, &mut step).map_err(TestCaseError::fail)?;
            let u = s.u();
            prop_assert!((0.0..=1.0).contains(&u));
            prop_assert!((u - uncertainty(s.snapshot())).abs() < 1e-12);
        }
        prop_assert!(s.rollback(cp));
        prop_assert_eq!(s.snapshot(), &saved);
    }

    #[test]
    fn classifier_is_deterministic(
        instr in "[A-Za-z ,.?]{0,120}",
        doc in prop::option::of("[a-z .\\n]{0,400}"),
        label in "[a-z]{0,8}",
    ) {
        let mut p = ProblemInstance::new("x", instr).with_domain(label);
        if let Some(d) = doc {
            p = p.with_doc("ctx", d);
        }
        let c = Classifier::default();
        let first = c.classify(&p);
        prop_assert_eq!(c.classify(&p), first);
        let mut blind = p.clone();
        blind.domain_label.clear();
        prop_assert_eq!(c.classify(&blind), first);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn one_operator_per_step(replies in prop::collection::vec(reply(), 4..30)) {
        let b = ScriptedBackend::new(replies.into_iter().map(ScriptEntry::any).collect());
        let cfg = HeavyConfig { t_max: 6, ..HeavyConfig::default() };
        let Ok(out) = run_heavyweight(&ProblemInstance::new("q", "Find x."), &b, &cfg, &Prompts::default()) else {
            return Ok(());
        };
        let mut per_step = std::collections::BTreeMap::new();
        for e in out.trace.iter().filter(|e| e.kind == EventKind::Operator) {
            let selected = e.data.as_ref().and_then(|d| d.get("selected")).is_some();
            if selected {
                *per_step.entry(e.step).or_insert(0) += 1;
            }
        }
        prop_assert!(per_step.values().all(|n| *n == 1), "{per_step:?}");
    }
}

fn reply() -> impl Strategy<Value = String> {
    prop_oneof![
        Just("Working on it.".to_string()),
        Just(r#"{"evidence":[{"id":"e1","text":"x","confidence":"low"},{"id":"e2","text":"y"}],"conflicts":[{"between":["e1","e2"],"severity":"critical"}]}"#.to_string()),
        Just(r#"{"assumptions":[{"text":"guess"}],"goals":[{"text":"sub","status":"blocked"}]}"#.to_string()),
        Just(r#"{"failure_type":"contradiction","affected":["e1"],"severity":"high","health":"critical"}"#.to_string()),
        Just(r#"{"failure_type":"logic","affected":[],"severity":"low","health":"good"}"#.to_string()),
        Just(r#"{"keep":"e2"}"#.to_string()),
        Just("FINAL ANSWER: 7".to_string()),
    ]
}

fn hunk_line() -> impl Strategy<Value = (char, String)> {
    (prop_oneof![Just(' '), Just('+'), Just('-')], "[a-z][a-z =()]{0,10}")
}

/// One file's patch text with counts consistent with its lines.
fn file_patch() -> impl Strategy<Value = String> {
    (
        "[a-z]{1,6}",
        prop_oneof![Just("py"), Just("md"), Just("rs")],
        prop::collection::vec(prop::collection::vec(hunk_line(), 1..6), 1..3),
    )
        .prop_map(|(name, ext, hunks)| {
            let path = format!("src/{name}.{ext}");
            let mut out = format!("--- a/{path}\n+++ b/{path}\n");
            let (mut old_next, mut new_next) = (1u32, 1u32);
            for lines in hunks {
                let old = lines.iter().filter(|l| l.0 != '+').count() as u32;
                let new = lines.iter().filter(|l| l.0 != '-').count() as u32;
                out.push_str(&format!("@@ -{old_next},{old} +{new_next},{new} @@\n"));
                for (k, t) in &lines {
                    out.push(*k);
                    out.push_str(t);
                    out.push('\n');
                }
                old_next += old + 3;
                new_next += new + 3;
            }
            out
        })
}

fn world() -> WorldState {
    WorldState::from_context(
        "agent at: hallway\nobjects:\n- apple: countertop\n- mug: cabinet\n- countertop: kitchen\n- cabinet: kitchen [open=false]\n- fridge: kitchen [open=false]\n",
    )
    .unwrap()
}

fn action() -> impl Strategy<Value = Action> {
    let obj = prop_oneof![Just("apple"), Just("mug")].prop_map(String::from);
    let place = prop_oneof![Just("countertop"), Just("cabinet"), Just("fridge"), Just("kitchen"), Just("hallway")].prop_map(String::from);
    prop_oneof![
        place.clone().prop_map(Action::Goto),
        obj.clone().prop_map(Action::Pickup),
        (obj, place.clone()).prop_map(|(o, r)| Action::Put(o, r)),
        place.clone().prop_map(Action::Open),
        place.prop_map(Action::Close),
    ]
}
