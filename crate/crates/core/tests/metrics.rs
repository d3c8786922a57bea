mod support;

use quadnet_core::eval::{self, quote_to_paragraph, word_overlap, QuoteMatch};
use quadnet_core::{Interaction, ParagraphRef, RelationType, TopicId};

#[test]
fn metrics_match_brute_force_formulas() {
    println!("{}", support::criteria::metric_oracles(2000, 9).unwrap());
}

#[test]
fn quotes_align_with_strict_threshold() {
    println!("{}", support::criteria::quote_matching().unwrap());
}

#[test]
fn quote_matching_reports_ambiguity_and_rejects_empty_quotes() {
    let paragraphs = [
        "Kuwait supported the proposal.",
        "Kuwait supported the proposal again.",
    ];
    assert_eq!(
        quote_to_paragraph("Kuwait supported the proposal", &paragraphs, 0.9).unwrap(),
        QuoteMatch::Ambiguous(vec![0, 1])
    );
    assert!(quote_to_paragraph("  ...  ", &paragraphs, 0.9).is_err());
}

#[test]
fn overlap_counts_repeated_words_once_per_occurrence() {
    assert_eq!(word_overlap("no no no", "no"), 1.0 / 3.0);
    assert_eq!(word_overlap("No, no.", "no NO"), 1.0);
}

#[test]
fn missing_gold_triplets_count_as_topic_misses() {
    let p = ParagraphRef::new("r", 0);
    let gold = vec![
        Interaction::stated("A", "B", RelationType::Support, p.clone())
            .with_topic(Some(TopicId(1))),
        Interaction::stated("C", "B", RelationType::Support, p.clone())
            .with_topic(Some(TopicId(2))),
    ];
    let pred = vec![
        Interaction::stated("A", "B", RelationType::Support, p.clone())
            .with_topic(Some(TopicId(1))),
        Interaction::stated("D", "B", RelationType::Support, p).with_topic(Some(TopicId(2))),
    ];
    let report = eval::evaluate(&pred, &gold);
    assert_eq!((report.precision, report.recall), (0.5, 0.5));
    assert_eq!(report.topic_items, 2);
    assert_eq!(report.accuracy, 0.5);
    assert_eq!(report.topic_support.get("(none)"), None);
}
