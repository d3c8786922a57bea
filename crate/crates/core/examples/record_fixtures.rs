//! Regenerates `fixtures/replay.jsonl` and `fixtures/topics.json`.
//!
//! A scripted backend plays the model: it answers each prompt from the
//! tables below. The real topic-space and annotation code drives it through
//! a `Recorder`, so the replay file holds exactly the prompts the CLI sends
//! with its default settings.
//!
//! Run from the workspace root:
//! `cargo run -p quadnet-core --example record_fixtures`

use std::collections::BTreeSet;
use std::path::Path;

use quadnet_core::codebook::{Codebook, Subtask};
use quadnet_core::corpus::{self, ParseOptions, Report, ReportKind};
use quadnet_core::gateway::{Backend, Gateway, GenerationConfig, Recorder, DEFAULT_MAX_IN_FLIGHT};
use quadnet_core::manifest;
use quadnet_core::pipeline::{self, ModeConfig};
use quadnet_core::rules::RuleConfig;
use quadnet_core::topics::{self, TopicHistory, TopicPrompts};
use quadnet_core::{Error, Result};

pub const K: usize = 3;
pub const SEED: u64 = 7;

const EXTRACTIONS: &[(&str, &str)] = &[
    ("adopted its agenda", "agenda, rules of procedure, election of officers, financial mechanism, funding, global environment facility"),
    ("national communications, the review", "national communications, review of reports, desk review"),
    ("non-market approaches, loss", "non-market approaches, loss and damage, transparency framework, climate finance"),
    ("net zero pledges", "net zero, global stocktake, just transition, procedural matters, funding"),
];

const EMBEDDINGS: &[(&str, [f64; 8])] = &[
    ("agenda", [1.0, 0.1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
    (
        "rules of procedure",
        [1.0, 0.0, 0.1, 0.0, 0.0, 0.0, 0.0, 0.0],
    ),
    (
        "election of officers",
        [0.9, 0.1, 0.1, 0.0, 0.0, 0.0, 0.0, 0.0],
    ),
    (
        "procedural matters",
        [1.0, 0.1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    ),
    (
        "financial mechanism",
        [0.1, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    ),
    ("funding", [0.0, 1.0, 0.1, 0.0, 0.0, 0.0, 0.0, 0.0]),
    (
        "global environment facility",
        [0.1, 0.9, 0.1, 0.0, 0.0, 0.0, 0.0, 0.0],
    ),
    ("climate finance", [0.0, 1.0, 0.1, 0.0, 0.0, 0.0, 0.0, 0.0]),
    (
        "national communications",
        [0.0, 0.1, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    ),
    (
        "review of reports",
        [0.1, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    ),
    ("desk review", [0.1, 0.1, 0.9, 0.0, 0.0, 0.0, 0.0, 0.0]),
    (
        "non-market approaches",
        [0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0],
    ),
    ("loss and damage", [0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]),
    (
        "transparency framework",
        [0.0, 0.0, 0.2, 0.0, 0.0, 1.0, 0.0, 0.0],
    ),
    ("net zero", [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]),
    ("global stocktake", [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]),
    ("just transition", [0.0, 0.0, 0.0, 0.6, 0.0, 0.0, 0.8, 0.0]),
];

const NAMES: &[(&str, &str, &str)] = &[
    (
        "agenda",
        "Organizational Matters",
        "Agenda, rules of procedure and the organization of work.",
    ),
    (
        "financial mechanism",
        "Finance",
        "The financial mechanism, funding and financial support.",
    ),
    (
        "national communications",
        "Reporting and Review",
        "National communications and their review.",
    ),
    (
        "loss and damage",
        "Loss and Damage",
        "Loss and damage from climate change impacts.",
    ),
    (
        "non-market approaches",
        "Non-Market Approaches",
        "Cooperation through non-market approaches.",
    ),
    (
        "transparency framework",
        "Transparency Framework",
        "The enhanced transparency framework for action and support.",
    ),
    (
        "global stocktake",
        "Global Stocktake",
        "Periodic assessment of collective progress.",
    ),
    (
        "just transition",
        "Just Transition",
        "A fair transition of workforces and economies.",
    ),
    ("net zero", "Net Zero", "Targets for net zero emissions."),
];

struct Answers {
    paragraph: &'static str,
    presence: &'static str,
    relation: &'static [&'static str],
    attribute: &'static str,
}

const ANNOTATIONS: &[Answers] = &[
    Answers {
        paragraph: "The Philippines, supported by Saudi Arabia",
        presence: "Yes.",
        relation: &["```json\n[{\"Party1\": \"Saudi Arabia\", \"Party2\": \"the Philippines\", \"Relation\": \"Support\"},\n {\"Party1\": \"KUWAIT\", \"Party2\": \"Philippines\", \"Relation\": \"support\"},\n {\"Party1\": \"The Chair\", \"Party2\": \"Philippines\", \"Relation\": \"Opposition\"}]\n```"],
        attribute: "[{\"Party1\": \"Saudi Arabia\", \"Party2\": \"Philippines\", \"Relation\": \"Support\", \"Topic\": \"organizational matters\"}, {\"Party1\": \"Kuwait\", \"Party2\": \"Philippines\", \"Relation\": \"Support\", \"Topic\": \"Organizational Matters\"}, {\"Party1\": \"The Chair\", \"Party2\": \"Philippines\", \"Relation\": \"Opposition\", \"Topic\": \"Organizational Matters\"}]",
    },
    Answers {
        paragraph: "The meeting adjourned at 6pm.",
        presence: "no",
        relation: &[],
        attribute: "",
    },
    Answers {
        paragraph: "SWITZERLAND, with the EU",
        presence: "yes",
        relation: &[
            "Switzerland and the EU agree, and AOSIS supports Switzerland.",
            "[{\"Party1\": \"Switzerland\", \"Party2\": \"EU\", \"Relation\": \"Agreement\"}, {\"Party1\": \"AOSIS\", \"Party2\": \"Switzerland\", \"Relation\": \"Support\"}]",
        ],
        attribute: "[{\"Party1\": \"Switzerland\", \"Party2\": \"European Union\", \"Relation\": \"Agreement\", \"Topic\": \"Reporting and Review\"}, {\"Party1\": \"AOSIS\", \"Party2\": \"Switzerland\", \"Relation\": \"Support\", \"Topic\": \"Reporting and Review\"}]",
    },
    Answers {
        paragraph: "Delegates continued informal consultations",
        presence: "It is hard to tell from this paragraph alone.",
        relation: &["[]"],
        attribute: "",
    },
    Answers {
        paragraph: "Earth Negotiations Bulletin is a publication",
        presence: "no",
        relation: &[],
        attribute: "",
    },
    Answers {
        paragraph: "AUSTRALIA, NEW ZEALAND and ICELAND",
        presence: "yes",
        relation: &["[{\"Party1\": \"Australia\", \"Party2\": \"New Zealand\", \"Relation\": \"Agreement\"}, {\"Party1\": \"New Zealand\", \"Party2\": \"Australia\", \"Relation\": \"Agreement\"}, {\"Party1\": \"New Zealand\", \"Party2\": \"Iceland\", \"Relation\": \"Agreement\"}, {\"Party1\": \"Iceland\", \"Party2\": \"New Zealand\", \"Relation\": \"Agreement\"}]"],
        attribute: "[{\"Party1\": \"Australia\", \"Party2\": \"New Zealand\", \"Relation\": \"Agreement\", \"Topic\": \"Reporting and Review\"}, {\"Party1\": \"New Zealand\", \"Party2\": \"Australia\", \"Relation\": \"Agreement\", \"Topic\": \"Reporting and Review\"}, {\"Party1\": \"New Zealand\", \"Party2\": \"Iceland\", \"Relation\": \"Agreement\", \"Topic\": \"Reporting and Review\"}, {\"Party1\": \"Iceland\", \"Party2\": \"New Zealand\", \"Relation\": \"Agreement\", \"Topic\": \"Reporting and Review\"}]",
    },
    Answers {
        paragraph: "TÜRKIYE, supported by the EU",
        presence: "yes",
        relation: &["[{\"Party1\": \"EU\", \"Party2\": \"T\\\\x9frkiye\", \"Relation\": \"Support\"}]"],
        attribute: "[{\"Party1\": \"EU\", \"Party2\": \"Türkiye\", \"Relation\": \"Support\", \"Topic\": \"Annex I Amendments\"}]",
    },
    Answers {
        paragraph: "SAUDI ARABIA, KUWAIT and EGYPT",
        presence: "yes",
        relation: &["[{\"Party1\": \"Saudi Arabia\", \"Party2\": \"EU\", \"Relation\": \"Opposition\"}, {\"Party1\": \"Kuwait\", \"Party2\": \"EU\", \"Relation\": \"Opposition\"}, {\"Party1\": \"Egypt\", \"Party2\": \"EU\", \"Relation\": \"Opposition\"}]"],
        attribute: "[{\"Party1\": \"Saudi Arabia\", \"Party2\": \"EU\", \"Relation\": \"Opposition\", \"Topic\": \"Non-Market Approaches\"}, {\"Party1\": \"Kuwait\", \"Party2\": \"EU\", \"Relation\": \"Opposition\", \"Topic\": \"Non-Market Approaches\"}, {\"Party1\": \"Egypt\", \"Party2\": \"EU\", \"Relation\": \"Opposition\", \"Topic\": \"Non-Market Approaches\"}]",
    },
    Answers {
        paragraph: "BHUTAN, speaking for the LDCs",
        presence: "yes",
        relation: &["[{\"Party1\": \"Bhutan\", \"Party2\": \"Least Developed Countries\", \"Relation\": \"On behalf of\"}]"],
        attribute: "[{\"Party1\": \"Bhutan\", \"Party2\": \"LDCs\", \"Relation\": \"On behalf of\", \"Topic\": \"Net Zero\"}]",
    },
];

struct Script {
    tasks: Vec<(Subtask, String)>,
}

impl Script {
    fn annotation(&self, prompt: &str) -> Result<String> {
        let subtask = self
            .tasks
            .iter()
            .find(|(_, t)| prompt.starts_with(&format!("## Task Instruction\n{t}")))
            .map(|(s, _)| *s)
            .ok_or_else(|| Error::Internal("unrecognized prompt".into()))?;
        let instance = prompt
            .rsplit_once("## Inference Instance\nParagraph:\n")
            .map(|(_, rest)| rest)
            .ok_or_else(|| Error::Internal("prompt without instance".into()))?;
        let answers = ANNOTATIONS
            .iter()
            .find(|a| instance.starts_with(a.paragraph))
            .ok_or_else(|| {
                Error::Internal(format!(
                    "no script for paragraph `{}`",
                    &instance[..40.min(instance.len())]
                ))
            })?;
        let retry = prompt.ends_with(pipeline::LIST_REMINDER);
        Ok(match subtask {
            Subtask::Presence => answers.presence.to_string(),
            Subtask::Relation => {
                let i = usize::from(retry).min(answers.relation.len() - 1);
                answers.relation[i].to_string()
            }
            Subtask::Attribute => answers.attribute.to_string(),
        })
    }
}

impl Backend for Script {
    fn complete(&self, prompt: &str, _: &GenerationConfig) -> Result<String> {
        if let Some((_, words)) = prompt.split_once("Topic words: ") {
            let first = words.split([';', '\n']).next().unwrap_or("").trim();
            let (_, name, description) = NAMES
                .iter()
                .find(|(w, ..)| *w == first)
                .ok_or_else(|| Error::Internal(format!("no name for topic led by `{first}`")))?;
            return Ok(serde_json::json!({"name": name, "description": description}).to_string());
        }
        if prompt.starts_with("## Task Instruction\nList the negotiation topics") {
            return EXTRACTIONS
                .iter()
                .find(|(needle, _)| prompt.contains(needle))
                .map(|(_, answer)| answer.to_string())
                .ok_or_else(|| Error::Internal("no topic words scripted for this report".into()));
        }
        self.annotation(prompt)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        texts
            .iter()
            .map(|t| {
                EMBEDDINGS
                    .iter()
                    .find(|(w, _)| w == t)
                    .map(|(_, v)| v.to_vec())
                    .ok_or_else(|| Error::Internal(format!("no embedding for `{t}`")))
            })
            .collect()
    }
}

fn summaries(reports: &[Report], from: i32, to: i32) -> Vec<Report> {
    reports
        .iter()
        .filter(|r| r.kind == ReportKind::Summary && (from..=to).contains(&r.year()))
        .cloned()
        .collect()
}

fn main() -> Result<()> {
    let root = Path::new("fixtures");
    let replay = root.join("replay.jsonl");
    let topics_path = root.join("topics.json");
    let codebook_path = root.join("codebook.txt");
    if replay.exists() {
        std::fs::remove_file(&replay).map_err(|e| Error::Internal(e.to_string()))?;
    }
    let codebook = Codebook::load(&codebook_path)?;
    let script = Script {
        tasks: Subtask::ALL
            .iter()
            .map(|s| (*s, codebook.task_instruction(*s).to_string()))
            .collect(),
    };
    let gateway = Gateway::new(Recorder::new(script, &replay)?, DEFAULT_MAX_IN_FLIGHT);

    let (all, _) = corpus::load_dir(&root.join("corpus"), &ParseOptions::default())?;
    let reports = corpus::filter_corpus(all, &BTreeSet::from(["UNFCCC".to_string()]));

    let prompts = TopicPrompts::default();
    let (words, errors) =
        topics::extract_topic_words(&summaries(&reports, 1995, 2013), &gateway, &prompts)?;
    assert!(errors.is_empty(), "{errors:?}");
    let base = topics::build_base_space(&words, K, SEED, &gateway, &prompts)?;
    let mut history = TopicHistory::new(base.value);
    for (from, to) in [(2014, 2018), (2019, 2024)] {
        let stage = topics::advance_stage(
            history.latest(),
            &summaries(&reports, from, to),
            &gateway,
            &prompts,
        )?;
        assert!(stage.errors.is_empty(), "{:?}", stage.errors);
        println!(
            "stage {from}-{to}: created {:?}, absorbed {:?}",
            stage.created, stage.absorbed
        );
        history.push(stage.space)?;
    }
    manifest::write_atomic(&topics_path, history.to_json().as_bytes())?;

    let mut codebook = Codebook::load(&codebook_path)?;
    codebook.set_topics(TopicHistory::load(&topics_path)?.latest().definitions())?;
    let ids = codebook.examples.iter().map(|e| e.id.clone()).collect();
    let config = ModeConfig::data_scarce(GenerationConfig::default(), ids);
    let run = pipeline::annotate_corpus(
        &reports,
        &codebook,
        &gateway,
        &config,
        &RuleConfig::all(),
        "fixture",
        1,
    )?;
    for p in &run.paragraphs {
        println!(
            "{}#{}: presence {:?}, {} interactions, {} errors",
            p.paragraph.report_id,
            p.paragraph.paragraph_index,
            p.presence,
            p.interactions.len(),
            p.errors.len()
        );
    }
    println!("{} completions recorded", gateway.fingerprints().len());
    Ok(())
}
