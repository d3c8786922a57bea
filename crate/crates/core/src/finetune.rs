//! Instruction/output pairs for supervised tuning of the data-rich model.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codebook::{assemble_prompt, Codebook, Subtask};
use crate::corpus::Report;
use crate::error::{Error, Result};
use crate::manifest::write_atomic;
use crate::model::Interaction;
use crate::records::{render_records, OutputRecord};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionPair {
    pub instruction: String,
    pub output: String,
    pub subtask: Subtask,
    pub report_id: String,
    pub paragraph_index: usize,
}

fn sorted_unique(records: impl IntoIterator<Item = OutputRecord>) -> Vec<OutputRecord> {
    records
        .into_iter()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Builds pairs from gold interactions. Every paragraph of a report with at
/// least one gold interaction yields a presence pair; paragraphs with gold
/// interactions also yield a relation pair and, when their topics are known
/// to the codebook, an attribute pair. Prompts carry no examples, matching
/// data-rich inference.
pub fn prepare_pairs(
    gold: &[Interaction],
    reports: &[Report],
    codebook: &Codebook,
) -> Result<Vec<InstructionPair>> {
    let mut by_paragraph: BTreeMap<(&str, usize), Vec<&Interaction>> = BTreeMap::new();
    for g in gold {
        by_paragraph
            .entry((g.paragraph.report_id.as_str(), g.paragraph.paragraph_index))
            .or_default()
            .push(g);
    }
    let annotated: BTreeSet<&str> = by_paragraph.keys().map(|k| k.0).collect();
    for (report_id, idx) in by_paragraph.keys() {
        let found = reports
            .iter()
            .find(|r| r.report_id == *report_id)
            .and_then(|r| r.paragraph(*idx));
        if found.is_none() {
            return Err(Error::Validation(format!(
                "gold paragraph {report_id}#{idx} is not in the corpus"
            )));
        }
    }

    let mut pairs = Vec::new();
    for report in reports
        .iter()
        .filter(|r| annotated.contains(r.report_id.as_str()))
    {
        for p in &report.paragraphs {
            let gold_here = by_paragraph
                .get(&(report.report_id.as_str(), p.index))
                .map(Vec::as_slice)
                .unwrap_or(&[]);
            let mut push = |subtask: Subtask,
                            context: Option<&[OutputRecord]>,
                            output: String|
             -> Result<()> {
                let instruction =
                    assemble_prompt(subtask, codebook, &[], &p.text, context)?.rendered;
                pairs.push(InstructionPair {
                    instruction,
                    output,
                    subtask,
                    report_id: report.report_id.clone(),
                    paragraph_index: p.index,
                });
                Ok(())
            };
            let verdict = if gold_here.is_empty() { "no" } else { "yes" };
            push(Subtask::Presence, None, verdict.to_string())?;
            if gold_here.is_empty() {
                continue;
            }
            let triplets =
                sorted_unique(gold_here.iter().map(|g| {
                    OutputRecord::triplet(&g.head.name, &g.tail.name, g.relation.label())
                }));
            push(Subtask::Relation, None, render_records(&triplets))?;

            let labelled: Option<Vec<OutputRecord>> = gold_here
                .iter()
                .map(|g| {
                    let name = g.topic.and_then(|t| codebook.topic_name(t))?;
                    Some(OutputRecord {
                        topic: Some(name.to_string()),
                        ..OutputRecord::triplet(&g.head.name, &g.tail.name, g.relation.label())
                    })
                })
                .collect();
            if let Some(labelled) = labelled {
                push(
                    Subtask::Attribute,
                    Some(&triplets),
                    render_records(&sorted_unique(labelled)),
                )?;
            }
        }
    }
    Ok(pairs)
}

pub fn render_pairs(pairs: &[InstructionPair]) -> String {
    let mut out = String::new();
    for p in pairs {
        out.push_str(&serde_json::to_string(p).expect("pair serializes"));
        out.push('\n');
    }
    out
}

pub fn write_pairs(path: &Path, pairs: &[InstructionPair]) -> Result<()> {
    write_atomic(path, render_pairs(pairs).as_bytes())
}
