use std::collections::BTreeMap;

use proptest::prelude::*;
use tomsim::dialogue::{Decision, Facet, Judgment, Scenario};
use tomsim::engine::{EpisodeConfig, EpisodeResult};
use tomsim::eval::{
    average_turn, build_report, curve_stats, label_from_annotations, outcomes, parse_annotations, prf1, success_rate,
    AbortPolicy, AnnotationOrder, AnnotationRecord, BinaryOutcome, EvalError, EvalOptions,
};
use tomsim::ledger::ConfidenceLedger;
use tomsim::tracker::Variant;

fn result(id: &str, rounds: usize, success: bool) -> EpisodeResult {
    let decision = if success { Decision::Goodbye } else { Decision::Say };
    let mut final_ledgers = BTreeMap::new();
    final_ledgers.insert(
        Facet::Belief,
        ConfidenceLedger::new(Facet::Belief, 3, [("x".to_string(), 60.0), ("y".to_string(), 40.0)]).unwrap(),
    );
    EpisodeResult {
        episode_id: id.into(),
        config: EpisodeConfig::new(Scenario::Empathetic, Variant::Cr),
        success,
        aborted: None,
        rounds_used: rounds,
        final_judgment: Some(Judgment { decision, reason: String::new() }),
        true_bdi: None,
        original_bdi: None,
        init_index: None,
        final_ledgers,
        traces: Vec::new(),
    }
}

fn aborted(id: &str) -> EpisodeResult {
    EpisodeResult { aborted: Some("script exhausted".into()), ..result(id, 2, false) }
}

fn annotation(id: &str, scores: &[f64]) -> AnnotationRecord {
    AnnotationRecord {
        episode_id: id.into(),
        facet: Facet::Belief,
        order: AnnotationOrder::First,
        scores: scores.to_vec(),
        predicted: None,
    }
}

fn outcome(p: bool, g: bool) -> BinaryOutcome {
    BinaryOutcome { episode_id: "e".into(), facet: Facet::Desire, predicted: p, gold: g }
}

#[test]
fn average_turn_and_success_rate() {
    assert_eq!(average_turn(&[result("a", 4, true), result("b", 6, false)]).unwrap(), 5.0);
    assert_eq!(average_turn(&[result("a", 1, true), result("b", 1, true)]).unwrap(), 1.0);
    let five: Vec<EpisodeResult> = (0..5).map(|i| result(&i.to_string(), 3, i < 2)).collect();
    assert_eq!(success_rate(&five, AbortPolicy::Exclude).unwrap(), 0.4);
    let fails: Vec<EpisodeResult> = (0..3).map(|i| result(&i.to_string(), 10, false)).collect();
    assert_eq!(success_rate(&fails, AbortPolicy::Exclude).unwrap(), 0.0);
    assert_eq!(average_turn(&[aborted("x")]).unwrap_err(), EvalError::NoResults);
    assert_eq!(average_turn(&[]).unwrap_err(), EvalError::NoResults);

    let mixed = vec![result("a", 2, true), aborted("b")];
    assert_eq!(success_rate(&mixed, AbortPolicy::Exclude).unwrap(), 1.0);
    assert_eq!(success_rate(&mixed, AbortPolicy::CountAsFailure).unwrap(), 0.5);
    assert_eq!(average_turn(&mixed).unwrap(), 2.0);
}

#[test]
fn prf1_hand_confusion_matrix() {
    let set = [outcome(true, true), outcome(true, true), outcome(true, false), outcome(false, true)];
    let m = prf1(&set);
    let (tp, fp, fn_) = (2.0, 1.0, 1.0);
    let p = tp / (tp + fp);
    let r = tp / (tp + fn_);
    assert!((m.precision.unwrap() - p).abs() < 1e-12);
    assert!((m.recall.unwrap() - r).abs() < 1e-12);
    assert!((m.f1.unwrap() - 2.0 * p * r / (p + r)).abs() < 1e-12);
    let all = prf1(&[outcome(true, true), outcome(true, true)]);
    assert_eq!((all.precision, all.f1, all.recall), (Some(1.0), Some(1.0), Some(1.0)));
    let no_pred = prf1(&[outcome(false, true)]);
    assert_eq!(no_pred.precision, None);
    assert_eq!(no_pred.recall, Some(0.0));
    assert_eq!(no_pred.f1, None);
}

#[test]
fn annotation_labels() {
    assert!(label_from_annotations(&annotation("e", &[2.0, 2.0, 2.0]), 0.25));
    assert!(!label_from_annotations(&annotation("e", &[0.0, 0.0, 0.0]), 0.25));
    assert!(!label_from_annotations(&annotation("e", &[1.25, 1.25, 1.25]), 0.25));
    assert!(label_from_annotations(&annotation("e", &[1.25, 1.25, 1.26]), 0.25));
}

#[test]
fn curve_summaries() {
    let s = curve_stats(&[(1, 0.2), (2, 0.5), (3, 0.9)]).unwrap();
    assert_eq!((s.final_value, s.max, s.monotone_fraction), (0.9, 0.9, 1.0));
    assert_eq!(curve_stats(&[(1, 0.3)]).unwrap().monotone_fraction, 1.0);
    assert_eq!(curve_stats(&[(1, 0.9), (2, 0.1)]).unwrap().monotone_fraction, 0.0);
    assert_eq!(curve_stats(&[]).unwrap_err(), EvalError::EmptyCurve);
}

#[test]
fn annotation_csv_and_report() {
    let csv = "episode_id,facet,order,score_1,score_2,score_3\n\
               a,belief,first,3,2,4\n\
               b,belief,first,0,1,0\n\
               a,desire,second,5,5,4\n\
               b,desire,second,1,0,0\n";
    let ann = parse_annotations(csv).unwrap();
    assert_eq!(ann.len(), 4);
    assert_eq!(ann[2].order, AnnotationOrder::Second);
    let results = vec![result("a", 2, true), result("b", 10, false)];
    let first = outcomes(&results, &ann, AnnotationOrder::First, Facet::Belief, 0.25, 50.0);
    assert_eq!(first.iter().map(|o| (o.predicted, o.gold)).collect::<Vec<_>>(), vec![(true, true), (true, false)]);
    let second = outcomes(&results, &ann, AnnotationOrder::Second, Facet::Desire, 0.25, 50.0);
    assert_eq!(second.iter().map(|o| (o.predicted, o.gold)).collect::<Vec<_>>(), vec![(true, true), (false, false)]);

    let report = build_report(&results, &ann, EvalOptions::default());
    assert_eq!(report.rows.len(), 1);
    let row = &report.rows[0];
    assert_eq!((row.average_turn, row.success_rate), (Some(6.0), Some(0.5)));
    assert_eq!(row.first_order[&Facet::Belief].precision, Some(0.5));
    let table = report.to_csv();
    assert!(table.starts_with("scenario,variant,episodes,aborted,at,sr,first_belief_p"));
    assert!(table.lines().nth(1).unwrap().starts_with("empathetic,cr,2,0,6.0000,0.5000,0.5000"));

    assert_eq!(
        parse_annotations("episode_id,facet,score_1\na,belief,1\n").unwrap_err(),
        EvalError::MissingColumn("order".into())
    );
    assert!(matches!(
        parse_annotations("episode_id,facet,order,score_1\na,belief,first,7\n"),
        Err(EvalError::InvalidAnnotation { line: 2, .. })
    ));
}

proptest! {
    #[test]
    fn prf1_permutation_invariant(pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 1..40), seed in any::<u64>()) {
        let set: Vec<BinaryOutcome> = pairs.iter().map(|&(p, g)| outcome(p, g)).collect();
        let mut shuffled = set.clone();
        let picks = tomsim::rng::SeededRng::new(seed).sample_indices(set.len(), set.len());
        for (i, j) in picks.into_iter().enumerate() {
            shuffled[i] = set[j].clone();
        }
        prop_assert_eq!(prf1(&set), prf1(&shuffled));
    }

    #[test]
    fn label_monotone_in_each_score(scores in prop::collection::vec(0.0f64..=5.0, 1..6), idx in any::<prop::sample::Index>(), bump in 0.0f64..=5.0) {
        let base = annotation("e", &scores);
        let mut raised = scores.clone();
        let i = idx.index(raised.len());
        raised[i] = (raised[i] + bump).min(5.0);
        prop_assert!(label_from_annotations(&base, 0.25) <= label_from_annotations(&annotation("e", &raised), 0.25));
    }
}
