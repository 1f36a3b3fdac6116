use std::path::PathBuf;

use tomsim::backend::{ModelClient, ScriptedBackend};
use tomsim::dialogue::{Decision, Facet, Scenario};
use tomsim::engine::{
    read_traces, run_batch, run_episode, truth_similarity_curve, validate_trace_file, validate_trace_text,
    write_traces, EpisodeConfig,
};
use tomsim::tracker::{UpdatePath, Variant};

type Mutation = Box<dyn Fn(&mut serde_json::Value)>;

const SEED: &str = "Speaker 1: My daughter got into the school band.\nSpeaker 2: That is great news!";

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn cr_demo_client() -> ModelClient {
    ModelClient::scripted(ScriptedBackend::load_script(&fixture("cr_demo.jsonl")).unwrap())
}

const BDI: &str = "Belief: b.\nDesire: d.\nIntention: i.";

/// Script for an episode that always says SAY, for `rounds` rounds.
fn endless_script(variant: Variant, rounds: usize) -> ScriptedBackend {
    let mut s = ScriptedBackend::new();
    s.push("bdi_init", BDI);
    for r in 1..=rounds {
        s.push("self_utterance", format!("a says something in round {r}"));
        match variant {
            Variant::NoTom => s.push("baseline_empathetic", format!("b replies {r}")),
            _ => s.push("utter_from_inferred", format!("b replies {r}")),
        }
        if variant == Variant::Vanilla || r == 1 {
            for f in ["belief", "desire", "intention"] {
                s.push(format!("infer_top_k/{f}"), format!("{f} x | 60%\n{f} y | 40%"));
            }
        }
        if variant.uses_foresight() {
            s.push("predict_response", format!("a says something in round {}", r + 1));
            if r > 1 {
                for f in ["belief", "desire", "intention"] {
                    s.push(format!("reflect/{f}"), "Reflection: fine\nPlan:\n1. Keep everything as it is.");
                }
            }
        }
        s.push("second_order_judgment", "SAY | not yet");
    }
    s
}

#[test]
fn golden_cr_dialogue_ends_in_two_rounds() {
    let client = cr_demo_client();
    let config = EpisodeConfig::new(Scenario::Empathetic, Variant::Cr);
    let result = run_episode(&client, &config, SEED, "golden").unwrap();
    assert!(result.aborted.is_none(), "{:?}", result.aborted);
    assert!(result.success);
    assert_eq!(result.rounds_used, 2);
    assert_eq!(result.final_judgment.as_ref().unwrap().decision, Decision::Goodbye);
    let t1 = &result.traces[0];
    assert_eq!(t1.a_utt, "She always make me proud.");
    assert!(t1.s.is_none());
    let t2 = &result.traces[1];
    assert_eq!(t2.s, Some(0.35));
    let branch = t2.branch.as_ref().unwrap();
    assert!(branch.triggered);
    assert_eq!(branch.s_v, Some(0.6));
    assert_eq!(branch.path, UpdatePath::Counterfactual);
    assert!(t2.closing_utt.as_deref().unwrap().ends_with("Wish me luck!"));
    assert!(t2.closing_s.is_some());
    let beliefs = &t2.ledgers.belief;
    assert_eq!(beliefs[0].text, "Sympathy-needing Agent believes their family does not notice her efforts");
    assert_eq!(beliefs[0].conf, 50.0);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("golden.jsonl");
    write_traces(std::slice::from_ref(&result), &path).unwrap();
    let report = validate_trace_file(&path).unwrap();
    assert!(report.is_valid(), "{:?}", report.errors);
    assert_eq!(read_traces(&path).unwrap(), vec![result]);
}

#[test]
fn golden_prompts_carry_true_bdi_and_history() {
    let client = cr_demo_client();
    let config = EpisodeConfig::new(Scenario::Empathetic, Variant::Cr);
    let result = run_episode(&client, &config, SEED, "golden").unwrap();
    let bdi = result.true_bdi.unwrap();
    let calls = client.log().snapshot();
    let self_calls: Vec<_> = calls.iter().filter(|c| c.tag == "self_utterance").collect();
    assert_eq!(self_calls.len(), 3);
    for c in &self_calls {
        assert!(c.prompt.contains(bdi.belief()));
        assert!(c.prompt.contains(bdi.desire()));
        assert!(c.prompt.contains(bdi.intention()));
    }
    assert!(self_calls[1].prompt.contains("Sympathy-needing Agent: She always make me proud."));
    assert!(self_calls[2].prompt.contains("GOODBYE"));
    assert_eq!(calls.iter().filter(|c| c.tag == "second_order_judgment").count(), 2);
}

#[test]
fn timeout_uses_all_rounds() {
    let client = ModelClient::scripted(endless_script(Variant::Reflection, 10));
    let config = EpisodeConfig::new(Scenario::Empathetic, Variant::Reflection);
    let result = run_episode(&client, &config, SEED, "t").unwrap();
    assert!(result.aborted.is_none(), "{:?}", result.aborted);
    assert!(!result.success);
    assert_eq!(result.rounds_used, 10);
    let s_count = result.traces.iter().filter(|t| t.s.is_some()).count();
    assert_eq!(s_count, result.rounds_used - 1);
    assert!(result.traces.iter().skip(1).all(|t| t.flags.iter().any(|f| f.starts_with("update_skipped"))));
}

#[test]
fn minimal_episode_with_immediate_goodbye() {
    let mut s = ScriptedBackend::new();
    s.push("bdi_init", BDI);
    s.push("self_utterance", "hello");
    s.push("baseline_empathetic", "hi");
    s.push("second_order_judgment", "GOODBYE | understood");
    s.push("self_utterance", "bye");
    let client = ModelClient::scripted(s);
    let mut config = EpisodeConfig::new(Scenario::Empathetic, Variant::NoTom);
    config.max_rounds = 1;
    let result = run_episode(&client, &config, SEED, "m").unwrap();
    assert!(result.success);
    assert_eq!(result.rounds_used, 1);
    let prompt = &client.log().snapshot()[2].prompt;
    assert!(!prompt.contains("Belief of"));
    assert!(!prompt.contains("b."));
}

#[test]
fn vanilla_reelicits_single_guess_each_round() {
    let client = ModelClient::scripted(endless_script(Variant::Vanilla, 3));
    let mut config = EpisodeConfig::new(Scenario::Empathetic, Variant::Vanilla);
    config.max_rounds = 3;
    let result = run_episode(&client, &config, SEED, "v").unwrap();
    assert!(result.aborted.is_none(), "{:?}", result.aborted);
    let calls = client.log().snapshot();
    assert_eq!(calls.iter().filter(|c| c.tag.starts_with("infer_top_k")).count(), 9);
    assert!(calls.iter().all(|c| !c.tag.starts_with("reflect")));
    assert!(result.traces.iter().all(|t| t.ledgers.belief.len() == 1 && t.ledgers.belief[0].conf == 100.0));
}

#[test]
fn batch_isolates_failures_and_keeps_order() {
    let seeds: Vec<String> = (0..5).map(|i| format!("{SEED} {i}")).collect();
    let mut config = EpisodeConfig::new(Scenario::Empathetic, Variant::Reflection);
    config.max_rounds = 3;
    let results = run_batch(&config, 5, &seeds, 11, 3, |i| {
        let rounds = if i == 3 { 1 } else { 3 };
        Ok(ModelClient::scripted(endless_script(Variant::Reflection, rounds)))
    })
    .unwrap();
    assert_eq!(results.len(), 5);
    for (i, r) in results.iter().enumerate() {
        assert_eq!(r.episode_id, tomsim::engine::episode_id(11, i));
        assert_eq!(r.is_aborted(), i == 3);
    }
    assert_eq!(results[3].traces.len(), 2);
    assert!(results[3].traces[1].flags.contains(&"aborted".to_string()));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("batch.jsonl");
    write_traces(&results, &path).unwrap();
    let report = validate_trace_file(&path).unwrap();
    assert!(report.is_valid(), "{:?}", report.errors);
}

#[test]
fn batch_output_is_byte_identical() {
    let seeds: Vec<String> = (0..20).map(|i| format!("{SEED} {i}")).collect();
    let mut config = EpisodeConfig::new(Scenario::Empathetic, Variant::Reflection);
    config.max_rounds = 2;
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for run in 0..2 {
        let results =
            run_batch(&config, 20, &seeds, 5, 4, |_| Ok(ModelClient::scripted(endless_script(Variant::Reflection, 2))))
                .unwrap();
        let path = dir.path().join(format!("run{run}.jsonl"));
        write_traces(&results, &path).unwrap();
        files.push(std::fs::read(&path).unwrap());
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn mutated_trace_is_rejected() {
    let client = cr_demo_client();
    let config = EpisodeConfig::new(Scenario::Empathetic, Variant::Cr);
    let result = run_episode(&client, &config, SEED, "golden").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.jsonl");
    write_traces(&[result], &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let mutations: Vec<Mutation> = vec![
        Box::new(|v| {
            v.as_object_mut().unwrap().remove("s");
        }),
        Box::new(|v| v["round"] = 5.into()),
        Box::new(|v| v["ledgers"]["belief"][0]["conf"] = 99.0.into()),
        Box::new(|v| v["s"] = 1.5.into()),
        Box::new(|v| v["branch"]["triggered"] = false.into()),
        Box::new(|v| v["judgment"]["decision"] = "SAY".into()),
    ];
    for (i, mutate) in mutations.iter().enumerate() {
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let mut v: serde_json::Value = serde_json::from_str(&lines[1]).unwrap();
        mutate(&mut v);
        lines[1] = v.to_string();
        let report = validate_trace_text(&lines.join("\n"));
        assert!(!report.is_valid(), "mutation {i} accepted");
    }
}

#[test]
fn truth_curve_matches_hand_jaccard() {
    let client = cr_demo_client();
    let config = EpisodeConfig::new(Scenario::Empathetic, Variant::Cr);
    let result = run_episode(&client, &config, SEED, "golden").unwrap();
    let curve = truth_similarity_curve(&client, &result, Facet::Belief).unwrap();
    assert_eq!(curve.len(), 2);
    let truth = result.true_bdi.as_ref().unwrap().belief().to_string();
    for (trace, (round, sim)) in result.traces.iter().zip(&curve) {
        assert_eq!(trace.round, *round);
        let expected = oracle_jaccard(&trace.ledgers.belief[0].text, &truth);
        assert!((sim - expected).abs() < 1e-12, "round {round}: {sim} vs {expected}");
    }

    let aborted = run_episode(&ModelClient::scripted(ScriptedBackend::new()), &config, SEED, "x").unwrap();
    assert!(aborted.is_aborted());
    assert!(truth_similarity_curve(&client, &aborted, Facet::Belief).unwrap().is_empty());
}

fn oracle_jaccard(a: &str, b: &str) -> f64 {
    use std::collections::HashSet;
    let ta: HashSet<String> = a.split_whitespace().map(str::to_lowercase).collect();
    let tb: HashSet<String> = b.split_whitespace().map(str::to_lowercase).collect();
    let inter = ta.iter().filter(|t| tb.contains(*t)).count() as f64;
    inter / ((ta.len() + tb.len()) as f64 - inter)
}
