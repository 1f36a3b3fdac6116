use std::path::PathBuf;

use tomsim::backend::{ModelClient, ScoreKind, ScriptedBackend};
use tomsim::dialogue::{AgentId, BdiTriple, Decision, DialogueHistory, Facet, Scenario};
use tomsim::ledger::{CapacityPolicy, ConfidenceLedger};
use tomsim::prompts::{parse_reflection, PromptError};
use tomsim::self_agent::{
    generate_self_utterance, init_bdi, judge_second_order, reverse_bdi, AgentError, SelfAgentState,
};
use tomsim::tracker::{RoundUpdate, TrackerConfig, TrackerState, TriggerPolicy, UpdatePath, Variant};

fn fixture(name: &str) -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name);
    std::fs::read_to_string(path).unwrap()
}

const DOG: &str = "I wish I spent more time with my dog while she was still with me";
const REAL: &str = "You know, I've been thinking a lot about getting professional help for my grief. It seems like it might be a more effective way for me to process everything. What do you think?";

fn history(turns: &[&str]) -> DialogueHistory {
    let mut h = DialogueHistory::new();
    for (i, t) in turns.iter().enumerate() {
        let speaker = if i % 2 == 0 { AgentId::A } else { AgentId::B };
        h = h.append_turn(speaker, t).unwrap();
    }
    h
}

fn ledger(facet: Facet, cap: usize, entries: &[(&str, f64)]) -> ConfidenceLedger {
    ConfidenceLedger::new(facet, cap, entries.iter().map(|(s, c)| (s.to_string(), *c))).unwrap()
}

fn previous_beliefs() -> ConfidenceLedger {
    ledger(
        Facet::Belief,
        3,
        &[
            ("Sympathy-needing Agent believes that quality time with loved ones is important", 50.0),
            ("Sympathy-needing agents may feel that they took their time with their dog for granted", 30.0),
            (
                "Sympathy-needing Agent possibly thinks that expressing regret can lead to receiving sympathy and understanding from others",
                20.0,
            ),
        ],
    )
}

fn tracker(variant: Variant, policy: CapacityPolicy) -> TrackerState {
    let mut config = TrackerConfig::new(variant, 3);
    config.capacity = policy;
    let mut t = TrackerState::new(config, Scenario::Empathetic);
    t.ledgers.insert(Facet::Belief, previous_beliefs());
    t.ledgers.insert(Facet::Desire, ledger(Facet::Desire, 3, &[("wants comfort", 70.0), ("wants advice", 30.0)]));
    t.ledgers.insert(Facet::Intention, ledger(Facet::Intention, 3, &[("intends to share grief", 100.0)]));
    t
}

fn confs(l: &ConfidenceLedger) -> Vec<f64> {
    l.entries().iter().map(|e| e.confidence).collect()
}

// Independent SplitMix64 and bounded draw.
fn oracle_index(seed: u64, n: u64) -> u64 {
    let mut state = seed;
    let threshold = n.wrapping_neg() % n;
    loop {
        state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        if z >= threshold {
            return z % n;
        }
    }
}

const THREE_SETS: &str = "Set 1:\nBelief: b1.\nDesire: d1.\nIntention: i1.\nSet 2:\nBelief: b2.\nDesire: d2.\nIntention: i2.\nSet 3:\nBelief: b3.\nDesire: d3.\nIntention: i3.";

#[test]
fn init_bdi_picks_seeded_index() {
    for seed in [0u64, 1, 7, 42, 1234567, u64::MAX] {
        let client = ModelClient::scripted(ScriptedBackend::from_entries([("bdi_init", THREE_SETS)]));
        let out = init_bdi(&client, Scenario::Empathetic, DOG, 3, seed).unwrap();
        let expected = oracle_index(seed, 3) as usize;
        assert_eq!(out.index, expected, "seed {seed}");
        assert_eq!(out.bdi.belief(), format!("b{}.", expected + 1));
        assert_eq!(out.candidates.len(), 3);
    }
}

#[test]
fn init_bdi_edge_cases() {
    let one = "Belief: only b.\nDesire: only d.\nIntention: only i.";
    for seed in [0u64, 99, 12345] {
        let client = ModelClient::scripted(ScriptedBackend::from_entries([("bdi_init", one)]));
        assert_eq!(init_bdi(&client, Scenario::Empathetic, DOG, 1, seed).unwrap().bdi.belief(), "only b.");
    }
    let client = ModelClient::scripted(ScriptedBackend::from_entries([
        ("bdi_init", "I cannot help."),
        ("bdi_init", "Still nothing."),
    ]));
    let err = init_bdi(&client, Scenario::Empathetic, DOG, 3, 0).unwrap_err();
    assert_eq!(err, AgentError::Prompt(PromptError::NoTriplesFound));
    let temps: Vec<f64> = client.log().snapshot().iter().map(|c| c.temperature).collect();
    assert_eq!(temps, vec![0.7, 0.0]);
    assert!(matches!(init_bdi(&client, Scenario::Empathetic, "  ", 3, 0), Err(AgentError::Precondition(_))));
}

#[test]
fn reverse_twice_restores_original() {
    let original = BdiTriple::new("donating helps children", "I want to help", "I will donate").unwrap();
    let mut s = ScriptedBackend::new();
    s.push(
        "reverse_bdi",
        "Belief: donating rarely reaches children\nDesire: I do not want to help\nIntention: I will not donate",
    );
    s.push("reverse_bdi", "Belief: donating helps children\nDesire: I want to help\nIntention: I will donate");
    let client = ModelClient::scripted(s);
    let once = reverse_bdi(&client, Scenario::Persuasion, &original).unwrap();
    assert_eq!(once.belief(), "donating rarely reaches children");
    let twice = reverse_bdi(&client, Scenario::Persuasion, &once).unwrap();
    assert_eq!(twice, original);
    assert!(client.log().snapshot()[1].prompt.contains("donating rarely reaches children"));
    assert!(BdiTriple::new("", "d", "i").is_err());
}

#[test]
fn self_utterance_and_judgments() {
    let bdi = BdiTriple::new("Time with pets is precious.", "I want comfort.", "I will share my regret.").unwrap();
    let mut state = SelfAgentState::new(bdi, Scenario::Empathetic);
    let client = ModelClient::scripted(ScriptedBackend::from_entries([
        ("self_utterance", format!("Sympathy-needing Agent: \"{DOG}\"")),
        ("second_order_judgment", "decision: SAY | my real struggle lies in an underlying fear".to_string()),
        ("second_order_judgment", "GOODBYE | Thank you for your advice and understanding".to_string()),
        ("second_order_judgment", "hmm".to_string()),
        ("self_utterance", "   ".to_string()),
    ]));
    let h0 = DialogueHistory::new();
    assert_eq!(generate_self_utterance(&client, &state, &h0).unwrap(), DOG);
    let prompt = &client.log().snapshot()[0].prompt;
    assert!(prompt.contains("conversation just started"));
    assert!(prompt.contains("Time with pets is precious."));

    let h1 = history(&[DOG]);
    assert!(matches!(judge_second_order(&client, &mut state, &h1), Err(AgentError::Precondition(_))));
    let h2 = history(&[DOG, "I totally understand how you're feeling."]);
    let (j, fallback) = judge_second_order(&client, &mut state, &h2).unwrap();
    assert_eq!((j.decision, fallback), (Decision::Say, false));
    let (j, _) = judge_second_order(&client, &mut state, &h2).unwrap();
    assert_eq!(j.decision, Decision::Goodbye);
    assert_eq!(state.last_judgment.as_ref().unwrap().decision, Decision::Goodbye);
    let (j, fallback) = judge_second_order(&client, &mut state, &h2).unwrap();
    assert_eq!((j.decision, fallback), (Decision::Say, true));
    assert!(matches!(generate_self_utterance(&client, &state, &h2), Err(AgentError::Backend(_))));
}

#[test]
fn reference_reflection_parses_into_ops_and_updated_section() {
    let out = parse_reflection(&fixture("reference_reflection.txt"), 3).unwrap();
    use tomsim::ledger::PlanKind;
    let kinds: Vec<PlanKind> = out.plan.iter().map(|op| op.kind).collect();
    assert!(kinds.contains(&PlanKind::Add));
    assert!(kinds.contains(&PlanKind::Increase));
    assert!(out.updated_ledger_raw.contains("55% confidence (increased)"));
    assert!(!out.updated_ledger_raw.contains("50% confidence"));
    assert!(out.reflection.starts_with("The latest response"));
}

#[test]
fn reference_update_through_tracker() {
    let h = history(&[DOG, "I totally understand how you're feeling.", REAL]);
    for (policy, expected) in [
        (CapacityPolicy::Tolerate, vec![55.0, 30.0, 10.0, 5.0]),
        (CapacityPolicy::Evict, evicted_oracle(&[55.0, 30.0, 10.0])),
    ] {
        let client = ModelClient::scripted(ScriptedBackend::from_entries([(
            "reflect/belief",
            fixture("reference_reflection.txt"),
        )]));
        let mut t = tracker(Variant::Reflection, policy);
        let mut flags = Vec::new();
        let plan = t.reflect_and_update(&client, &h, Facet::Belief, &mut flags).unwrap();
        assert!(plan.contains("1. Add a new belief"));
        let l = &t.ledgers[&Facet::Belief];
        assert_eq!(confs(l), expected, "{policy:?}");
        assert_eq!(l.entries()[0].statement, previous_beliefs().entries()[0].statement);
        assert_eq!(
            l.entries()[1].statement,
            "Sympathy-needing Agent believes in seeking professional help to process grief"
        );
        assert_eq!(t.reflection_history.len(), 1);
        assert!(flags.is_empty(), "{flags:?}");
    }
}

// Rescale to 100 and round to hundredths by largest remainder.
fn evicted_oracle(raw: &[f64]) -> Vec<f64> {
    let total: f64 = raw.iter().sum();
    let exact: Vec<f64> = raw.iter().map(|c| c * 10000.0 / total).collect();
    let mut floors: Vec<i64> = exact.iter().map(|x| x.floor() as i64).collect();
    let mut left = 10000 - floors.iter().sum::<i64>();
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).partial_cmp(&(exact[a] - exact[a].floor())).unwrap());
    for i in order {
        if left == 0 {
            break;
        }
        floors[i] += 1;
        left -= 1;
    }
    floors.iter().map(|f| *f as f64 / 100.0).collect()
}

#[test]
fn unreadable_reflection_leaves_ledger_unchanged() {
    let h = history(&[DOG, "ok", REAL]);
    let client =
        ModelClient::scripted(ScriptedBackend::from_entries([("reflect/belief", "Reflection: nothing new\nPlan:\n")]));
    let mut t = tracker(Variant::Reflection, CapacityPolicy::Evict);
    let mut flags = Vec::new();
    t.reflect_and_update(&client, &h, Facet::Belief, &mut flags).unwrap();
    assert_eq!(t.ledgers[&Facet::Belief], previous_beliefs());
    assert_eq!(flags, vec!["update_skipped:belief"]);

    let client = ModelClient::scripted(ScriptedBackend::from_entries([(
        "reflect/intention",
        "Reflection: wrong guess\nPlan:\n1. Delete intends to share grief",
    )]));
    let mut flags = Vec::new();
    t.reflect_and_update(&client, &h, Facet::Intention, &mut flags).unwrap();
    assert_eq!(confs(&t.ledgers[&Facet::Intention]), vec![100.0]);
    assert!(flags.contains(&"empty_result:intention".to_string()), "{flags:?}");
}

#[test]
fn observe_and_score_cases() {
    let mut t = tracker(Variant::Cr, CapacityPolicy::Evict);
    let client = ModelClient::scripted(ScriptedBackend::new());
    t.predicted_next = Some("same words".into());
    assert_eq!(t.observe_and_score(&client, "same words", 2).unwrap(), 1.0);
    t.predicted_next = Some("a b c".into());
    assert_eq!(t.observe_and_score(&client, "a b d", 3).unwrap(), 0.5);
    assert_eq!(t.similarity_history, vec![1.0, 0.5]);
    assert!(t.predicted_next.is_none());
    let err = t.observe_and_score(&client, "x", 4).unwrap_err();
    assert!(err.to_string().contains("MissingPrediction"));
}

#[test]
fn prediction_and_utterance_preconditions() {
    let client = ModelClient::scripted(ScriptedBackend::from_entries([
        ("predict_response", "Yeah, you're right."),
        ("predict_response", "Again."),
        ("baseline_empathetic", "That sounds hard."),
    ]));
    let h = history(&[DOG]);
    let mut empty = TrackerState::new(TrackerConfig::new(Variant::Vanilla, 3), Scenario::Empathetic);
    assert!(matches!(empty.predict_response(&client, &h, &mut Vec::new()), Err(AgentError::Precondition(_))));
    assert!(matches!(empty.generate_utterance(&client, &h), Err(AgentError::Precondition(_))));

    let mut t = tracker(Variant::Cr, CapacityPolicy::Evict);
    let mut flags = Vec::new();
    t.predict_response(&client, &h, &mut flags).unwrap();
    assert!(flags.is_empty());
    t.predict_response(&client, &h, &mut flags).unwrap();
    assert_eq!(flags, vec!["prediction_overwritten"]);
    assert_eq!(t.predicted_next.as_deref(), Some("Again."));

    let no_tom = TrackerState::new(TrackerConfig::new(Variant::NoTom, 3), Scenario::Empathetic);
    assert_eq!(no_tom.generate_utterance(&client, &h).unwrap(), "That sounds hard.");
    let prompt = client.log().snapshot().last().unwrap().prompt.clone();
    assert!(!prompt.to_lowercase().contains("belief"));
}

const CF_REPLY: &str = "Reflection: missed the help-seeking\nPlan:\n1. Add seeking professional help by 30%";

fn cr_case(
    policy: TriggerPolicy,
    s_prev: f64,
    s_curr: f64,
    s_v: f64,
) -> (tomsim::tracker::BranchRecord, RoundUpdate, TrackerState) {
    let mut s = ScriptedBackend::new();
    for f in ["belief", "desire", "intention"] {
        s.push(format!("counterfactual_reflect/{f}"), CF_REPLY);
        s.push(format!("reflect/{f}"), "Reflection: fine\nPlan:\n1. Increase the top item by 5");
    }
    s.push("predict_response/virtual", "I might get professional help.");
    s.pin_similarity(2, ScoreKind::Virtual, s_v);
    let client = ModelClient::scripted(s);
    let mut config = TrackerConfig::new(Variant::Cr, 3);
    config.cf_trigger_policy = policy;
    let mut t = tracker(Variant::Cr, CapacityPolicy::Evict);
    t.config = config;
    t.similarity_history = vec![s_prev, s_curr];
    t.last_scored_prediction = Some("Yeah, you're right.".into());
    let h = history(&[DOG, "I totally understand how you're feeling.", REAL]);
    let mut update = RoundUpdate::default();
    let record = t.counterfactual_step(&client, &h, 2, &mut update).unwrap();
    (record, update, t)
}

#[test]
fn counterfactual_truth_table() {
    for policy in [TriggerPolicy::OnIncrease, TriggerPolicy::OnNonIncrease] {
        for (s_prev, s_curr) in [(0.2, 0.4), (0.4, 0.2)] {
            for s_v in [s_curr + 0.1, s_curr - 0.1] {
                let (record, update, t) = cr_case(policy, s_prev, s_curr, s_v);
                let triggered = match policy {
                    TriggerPolicy::OnIncrease => s_curr > s_prev,
                    TriggerPolicy::OnNonIncrease => s_curr <= s_prev,
                };
                let expected =
                    if triggered && s_v > s_curr { UpdatePath::Counterfactual } else { UpdatePath::Standard };
                let case = format!("{policy:?} {s_prev}->{s_curr} s_v={s_v}");
                assert_eq!(record.triggered, triggered, "{case}");
                assert_eq!(record.path, expected, "{case}");
                assert_eq!(record.s_v.is_some(), triggered, "{case}");
                assert_eq!(update.plans.len(), 3, "{case}");
                let adopted =
                    t.ledgers[&Facet::Belief].entries().iter().any(|e| e.statement.contains("professional help"));
                assert_eq!(adopted, expected == UpdatePath::Counterfactual, "{case}");
            }
        }
    }
}
