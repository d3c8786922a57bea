//! Annotation quality metrics: triplet precision/recall, topic accuracy and
//! macro F1, Cohen's kappa, and fuzzy quote-to-paragraph alignment.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Interaction, ParagraphRef, RelationType, TopicId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub matched: usize,
    pub predicted: usize,
    pub gold: usize,
}

/// Set-based precision and recall. Duplicates count once. An empty
/// prediction has precision 1; an empty gold set has recall 1.
pub fn triplet_prf<T: Ord>(pred: &[T], gold: &[T]) -> Prf {
    let pred: BTreeSet<&T> = pred.iter().collect();
    let gold: BTreeSet<&T> = gold.iter().collect();
    let matched = pred.intersection(&gold).count();
    Prf {
        precision: if pred.is_empty() {
            1.0
        } else {
            matched as f64 / pred.len() as f64
        },
        recall: if gold.is_empty() {
            1.0
        } else {
            matched as f64 / gold.len() as f64
        },
        matched,
        predicted: pred.len(),
        gold: gold.len(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeScores<L: Ord> {
    pub accuracy: f64,
    /// Unweighted mean of per-label F1 over labels that occur in gold.
    pub macro_f1: f64,
    pub per_label: BTreeMap<L, LabelScore>,
}

/// Accuracy and macro F1 of aligned label lists. Empty lists score 1.0.
pub fn attribute_metrics<L: Ord + Clone>(pred: &[L], gold: &[L]) -> Result<AttributeScores<L>> {
    if pred.len() != gold.len() {
        return Err(Error::invalid(format!(
            "{} predicted labels for {} gold labels",
            pred.len(),
            gold.len()
        )));
    }
    if gold.is_empty() {
        return Ok(AttributeScores {
            accuracy: 1.0,
            macro_f1: 1.0,
            per_label: BTreeMap::new(),
        });
    }
    let correct = pred.iter().zip(gold).filter(|(p, g)| p == g).count();
    let labels: BTreeSet<&L> = gold.iter().collect();
    let mut per_label = BTreeMap::new();
    for label in labels {
        let tp = pred
            .iter()
            .zip(gold)
            .filter(|(p, g)| *p == label && *g == label)
            .count();
        let predicted = pred.iter().filter(|p| *p == label).count();
        let support = gold.iter().filter(|g| *g == label).count();
        let precision = if predicted == 0 {
            0.0
        } else {
            tp as f64 / predicted as f64
        };
        let recall = tp as f64 / support as f64;
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        per_label.insert(
            label.clone(),
            LabelScore {
                precision,
                recall,
                f1,
                support,
            },
        );
    }
    let macro_f1 = per_label.values().map(|s| s.f1).sum::<f64>() / per_label.len() as f64;
    Ok(AttributeScores {
        accuracy: correct as f64 / gold.len() as f64,
        macro_f1,
        per_label,
    })
}

/// Cohen's kappa between two annotators' label lists.
pub fn cohen_kappa<L: Ord>(first: &[L], second: &[L]) -> Result<f64> {
    if first.len() != second.len() {
        return Err(Error::invalid(format!(
            "annotators labelled {} and {} items",
            first.len(),
            second.len()
        )));
    }
    if first.is_empty() {
        return Err(Error::invalid("kappa needs at least one item"));
    }
    let n = first.len() as f64;
    let observed = first.iter().zip(second).filter(|(a, b)| a == b).count() as f64 / n;
    let mut marginals: BTreeMap<&L, (usize, usize)> = BTreeMap::new();
    for (a, b) in first.iter().zip(second) {
        marginals.entry(a).or_default().0 += 1;
        marginals.entry(b).or_default().1 += 1;
    }
    let expected: f64 = marginals
        .values()
        .map(|&(x, y)| (x as f64 / n) * (y as f64 / n))
        .sum();
    if expected == 1.0 {
        return Ok(1.0);
    }
    Ok((observed - expected) / (1.0 - expected))
}

/// Case-folded alphanumeric word tokens.
pub fn word_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Share of the quote's tokens found in the paragraph, counting repeated
/// tokens at most as often as the paragraph has them.
pub fn word_overlap(quote: &str, paragraph: &str) -> f64 {
    let quote = word_tokens(quote);
    if quote.is_empty() {
        return 0.0;
    }
    let mut available: BTreeMap<String, usize> = BTreeMap::new();
    for w in word_tokens(paragraph) {
        *available.entry(w).or_default() += 1;
    }
    let mut shared = 0;
    for w in &quote {
        if let Some(n) = available.get_mut(w) {
            if *n > 0 {
                *n -= 1;
                shared += 1;
            }
        }
    }
    shared as f64 / quote.len() as f64
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "result", content = "paragraphs", rename_all = "snake_case")]
pub enum QuoteMatch {
    Unique(usize),
    Ambiguous(Vec<usize>),
    NoMatch,
}

/// Finds the paragraph a quote came from: the single paragraph whose word
/// overlap with the quote is strictly above `threshold`.
pub fn quote_to_paragraph<S: AsRef<str>>(
    quote: &str,
    paragraphs: &[S],
    threshold: f64,
) -> Result<QuoteMatch> {
    if word_tokens(quote).is_empty() {
        return Err(Error::invalid("empty quote"));
    }
    let hits: Vec<usize> = paragraphs
        .iter()
        .enumerate()
        .filter(|(_, p)| word_overlap(quote, p.as_ref()) > threshold)
        .map(|(i, _)| i)
        .collect();
    Ok(match hits.len() {
        0 => QuoteMatch::NoMatch,
        1 => QuoteMatch::Unique(hits[0]),
        _ => QuoteMatch::Ambiguous(hits),
    })
}

/// Triplet identity used for relation-extraction scoring.
pub type TripletKey = (ParagraphRef, String, String, RelationType);

pub fn triplet_key(i: &Interaction) -> TripletKey {
    (
        i.paragraph.clone(),
        i.head.name.clone(),
        i.tail.name.clone(),
        i.relation,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParagraphScore {
    pub report_id: String,
    pub paragraph_index: usize,
    pub precision: f64,
    pub recall: f64,
    pub predicted: usize,
    pub gold: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub relation_support: BTreeMap<String, usize>,
    pub topic_support: BTreeMap<String, usize>,
    pub topic_items: usize,
    pub per_paragraph: Vec<ParagraphScore>,
    pub notes: Vec<String>,
}

fn topic_label(t: Option<TopicId>) -> String {
    t.map_or_else(|| "(none)".to_string(), |t| t.to_string())
}

/// Scores predictions against gold. Relation extraction is scored on
/// (paragraph, head, tail, relation) sets. Topics are scored on gold
/// interactions that carry a topic; a gold triplet the prediction lacks
/// counts as predicting no topic.
pub fn evaluate(pred: &[Interaction], gold: &[Interaction]) -> MetricsReport {
    let pred_keys: Vec<TripletKey> = pred.iter().map(triplet_key).collect();
    let gold_keys: Vec<TripletKey> = gold.iter().map(triplet_key).collect();
    let overall = triplet_prf(&pred_keys, &gold_keys);

    let paragraphs: BTreeSet<&ParagraphRef> =
        pred.iter().chain(gold).map(|i| &i.paragraph).collect();
    let per_paragraph = paragraphs
        .into_iter()
        .map(|p| {
            let pk: Vec<&TripletKey> = pred_keys.iter().filter(|k| &k.0 == p).collect();
            let gk: Vec<&TripletKey> = gold_keys.iter().filter(|k| &k.0 == p).collect();
            let s = triplet_prf(&pk, &gk);
            ParagraphScore {
                report_id: p.report_id.clone(),
                paragraph_index: p.paragraph_index,
                precision: s.precision,
                recall: s.recall,
                predicted: s.predicted,
                gold: s.gold,
            }
        })
        .collect();

    let mut relation_support = BTreeMap::new();
    for k in gold_keys.iter().collect::<BTreeSet<_>>() {
        *relation_support.entry(k.3.label().to_string()).or_insert(0) += 1;
    }

    let mut pred_topics: BTreeMap<TripletKey, BTreeSet<Option<TopicId>>> = BTreeMap::new();
    for i in pred {
        pred_topics
            .entry(triplet_key(i))
            .or_default()
            .insert(i.topic);
    }
    let mut gold_labels = Vec::new();
    let mut pred_labels = Vec::new();
    let mut seen = BTreeSet::new();
    for g in gold.iter().filter(|g| g.topic.is_some()) {
        if !seen.insert((triplet_key(g), g.topic)) {
            continue;
        }
        let predicted = pred_topics.get(&triplet_key(g));
        let label = match predicted {
            Some(topics) if topics.contains(&g.topic) => g.topic,
            Some(topics) => topics.iter().flatten().next().copied(),
            None => None,
        };
        gold_labels.push(topic_label(g.topic));
        pred_labels.push(topic_label(label));
    }
    let attr = attribute_metrics(&pred_labels, &gold_labels).expect("aligned by construction");
    let topic_support = attr
        .per_label
        .iter()
        .map(|(l, s)| (l.clone(), s.support))
        .collect();

    MetricsReport {
        precision: overall.precision,
        recall: overall.recall,
        accuracy: attr.accuracy,
        macro_f1: attr.macro_f1,
        relation_support,
        topic_support,
        topic_items: gold_labels.len(),
        per_paragraph,
        notes: vec![
            "precision/recall: exact (paragraph, party1, party2, relation) matches, duplicates counted once".into(),
            "macro F1: mean over topics present in gold".into(),
        ],
    }
}

impl MetricsReport {
    /// Plain-text table with percentages to one decimal place.
    pub fn to_table(&self) -> String {
        let pct = |x: f64| format!("{:.1}", x * 100.0);
        let mut out = String::new();
        out.push_str("metric      value\n");
        out.push_str(&format!("precision   {}\n", pct(self.precision)));
        out.push_str(&format!("recall      {}\n", pct(self.recall)));
        out.push_str(&format!("accuracy    {}\n", pct(self.accuracy)));
        out.push_str(&format!("macro_f1    {}\n", pct(self.macro_f1)));
        out.push_str(&format!("topic items {}\n", self.topic_items));
        out
    }
}
