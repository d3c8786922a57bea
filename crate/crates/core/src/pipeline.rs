//! The three-step annotation pipeline: presence filtering, relation
//! extraction and topic labelling, followed by per-paragraph rule closure.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::codebook::{assemble_prompt, AnnotatedExample, Codebook, Subtask};
use crate::corpus::{Report, ReportKind};
use crate::error::{Error, Result};
use crate::gateway::{Gateway, GenerationConfig};
use crate::manifest::write_atomic;
use crate::model::{
    dedupe, Interaction, ParagraphRef, Party, Provenance, RelationType, TopicId,
    DEFAULT_FUZZY_THRESHOLD,
};
use crate::records::{parse_output, parse_verdict, OutputRecord, ParsedItem};
use crate::rules::{close_to_fixpoint, RuleConfig};

pub const PRESENCE_REMINDER: &str = "\n\nReminder: reply with exactly one word, \"yes\" or \"no\".";
pub const LIST_REMINDER: &str =
    "\n\nReminder: reply only with a JSON list of objects using the keys given in the Format Instruction.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    DataRich,
    DataScarce,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::DataRich => "data-rich",
            Mode::DataScarce => "data-scarce",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "data-rich" => Ok(Mode::DataRich),
            "data-scarce" => Ok(Mode::DataScarce),
            other => Err(Error::invalid(format!("unknown mode `{other}`"))),
        }
    }
}

/// How the pipeline talks to the model. Data-rich runs send prompts without
/// examples to a tuned model; data-scarce runs add the listed examples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeConfig {
    pub mode: Mode,
    pub generation: GenerationConfig,
    pub example_ids: Vec<String>,
    pub fuzzy_threshold: f64,
}

impl ModeConfig {
    pub fn data_rich(generation: GenerationConfig) -> Self {
        ModeConfig {
            mode: Mode::DataRich,
            generation,
            example_ids: Vec::new(),
            fuzzy_threshold: DEFAULT_FUZZY_THRESHOLD,
        }
    }

    pub fn data_scarce(generation: GenerationConfig, example_ids: Vec<String>) -> Self {
        ModeConfig {
            mode: Mode::DataScarce,
            generation,
            example_ids,
            fuzzy_threshold: DEFAULT_FUZZY_THRESHOLD,
        }
    }

    pub fn validate(&self, codebook: &Codebook) -> Result<()> {
        self.generation.validate()?;
        if !(0.0..=1.0).contains(&self.fuzzy_threshold) {
            return Err(Error::invalid("fuzzy threshold must lie in [0, 1]"));
        }
        match self.mode {
            Mode::DataRich if !self.example_ids.is_empty() => Err(Error::invalid(
                "data-rich mode sends no examples; drop the example ids",
            )),
            Mode::DataScarce if self.example_ids.is_empty() => Err(Error::invalid(
                "data-scarce mode needs at least one example id",
            )),
            _ => {
                for id in &self.example_ids {
                    if codebook.example(id).is_none() {
                        return Err(Error::invalid(format!("codebook has no example `{id}`")));
                    }
                }
                Ok(())
            }
        }
    }

    /// The configured examples written for `subtask`, in configuration order.
    pub fn examples_for<'a>(
        &self,
        codebook: &'a Codebook,
        subtask: Subtask,
    ) -> Vec<&'a AnnotatedExample> {
        if self.mode == Mode::DataRich {
            return Vec::new();
        }
        self.example_ids
            .iter()
            .filter_map(|id| codebook.example(id))
            .filter(|ex| ex.subtask == subtask)
            .collect()
    }
}

/// Verbatim model exchange for one call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawCall {
    pub step: Subtask,
    pub attempt: u32,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput<T> {
    pub value: T,
    pub calls: Vec<RawCall>,
    pub warnings: Vec<String>,
}

fn call(
    gateway: &Gateway,
    config: &ModeConfig,
    step: Subtask,
    prompt: &str,
    attempt: u32,
    calls: &mut Vec<RawCall>,
) -> Result<String> {
    let response = gateway.complete(prompt, &config.generation)?;
    calls.push(RawCall {
        step,
        attempt,
        response: response.clone(),
    });
    Ok(response)
}

/// Step one. An answer that is neither yes nor no twice in a row counts as
/// yes, with a warning.
pub fn detect_interactions(
    paragraph: &str,
    codebook: &Codebook,
    gateway: &Gateway,
    config: &ModeConfig,
) -> Result<StepOutput<bool>> {
    let examples = config.examples_for(codebook, Subtask::Presence);
    let prompt = assemble_prompt(Subtask::Presence, codebook, &examples, paragraph, None)?.rendered;
    let mut calls = Vec::new();
    let first = call(gateway, config, Subtask::Presence, &prompt, 1, &mut calls)?;
    if let Some(v) = parse_verdict(&first) {
        return Ok(StepOutput {
            value: v,
            calls,
            warnings: Vec::new(),
        });
    }
    let retry = format!("{prompt}{PRESENCE_REMINDER}");
    let second = call(gateway, config, Subtask::Presence, &retry, 2, &mut calls)?;
    Ok(match parse_verdict(&second) {
        Some(v) => StepOutput {
            value: v,
            calls,
            warnings: Vec::new(),
        },
        None => StepOutput {
            value: true,
            calls,
            warnings: vec!["presence verdict unreadable after retry; treating paragraph as containing interactions".into()],
        },
    })
}

fn parse_with_retry(
    prompt: &str,
    step: Subtask,
    gateway: &Gateway,
    config: &ModeConfig,
    calls: &mut Vec<RawCall>,
) -> Result<Vec<ParsedItem>> {
    let first = call(gateway, config, step, prompt, 1, calls)?;
    match parse_output(&first) {
        Ok(items) => Ok(items),
        Err(_) => {
            let retry = format!("{prompt}{LIST_REMINDER}");
            let second = call(gateway, config, step, &retry, 2, calls)?;
            parse_output(&second)
        }
    }
}

fn resolve_party(codebook: &Codebook, raw: &str, threshold: f64) -> Result<Party> {
    Ok(codebook
        .entity_space
        .normalize(raw, threshold)?
        .into_party())
}

/// Step two. Returns stated interactions without topics. Records with an
/// unknown relation, an empty party or identical endpoints are dropped with
/// a warning; parties outside the entity space are kept and flagged.
pub fn extract_relations(
    paragraph: &str,
    at: &ParagraphRef,
    codebook: &Codebook,
    gateway: &Gateway,
    config: &ModeConfig,
) -> Result<StepOutput<Vec<Interaction>>> {
    let examples = config.examples_for(codebook, Subtask::Relation);
    let prompt = assemble_prompt(Subtask::Relation, codebook, &examples, paragraph, None)?.rendered;
    let mut calls = Vec::new();
    let mut warnings = Vec::new();
    let items = parse_with_retry(&prompt, Subtask::Relation, gateway, config, &mut calls)?;
    let mut out = Vec::new();
    for item in items {
        let record = match item {
            ParsedItem::Record(r) => r,
            ParsedItem::Skipped(why) => {
                warnings.push(format!("skipped output element: {why}"));
                continue;
            }
        };
        let Some(relation) = RelationType::parse_label(&record.relation) else {
            warnings.push(format!("unknown relation `{}` dropped", record.relation));
            continue;
        };
        let parties =
            resolve_party(codebook, &record.party1, config.fuzzy_threshold).and_then(|h| {
                Ok((
                    h,
                    resolve_party(codebook, &record.party2, config.fuzzy_threshold)?,
                ))
            });
        let (head, tail) = match parties {
            Ok(p) => p,
            Err(e) => {
                warnings.push(format!("record dropped: {e}"));
                continue;
            }
        };
        for p in [&head, &tail] {
            if !p.in_space {
                warnings.push(format!("party `{}` is outside the entity space", p.name));
            }
        }
        match Interaction::new(head, tail, relation, None, at.clone(), Provenance::Stated) {
            Ok(i) => out.push(i),
            Err(e) => warnings.push(format!("record dropped: {e}")),
        }
    }
    Ok(StepOutput {
        value: dedupe(out),
        calls,
        warnings,
    })
}

/// Result of topic labelling. `error` is set when the answer could not be
/// parsed even after the retry; the interactions then carry no topic.
#[derive(Debug, Clone, PartialEq)]
pub struct Attribution {
    pub interactions: Vec<Interaction>,
    pub error: Option<String>,
}

/// Step three. One call labels every triplet of the paragraph. Topic names
/// are matched case-insensitively against the codebook's topics. Records
/// that match none of the given triplets are ignored, so the step never
/// invents interactions. A triplet labelled with several known topics
/// yields one interaction per topic.
pub fn predict_attributes(
    paragraph: &str,
    triplets: &[Interaction],
    codebook: &Codebook,
    gateway: &Gateway,
    config: &ModeConfig,
) -> Result<StepOutput<Attribution>> {
    if triplets.is_empty() {
        return Ok(StepOutput {
            value: Attribution {
                interactions: Vec::new(),
                error: None,
            },
            calls: Vec::new(),
            warnings: Vec::new(),
        });
    }
    let context: Vec<OutputRecord> = triplets
        .iter()
        .map(|t| OutputRecord::triplet(&t.head.name, &t.tail.name, t.relation.label()))
        .collect();
    let examples = config.examples_for(codebook, Subtask::Attribute);
    let prompt = assemble_prompt(
        Subtask::Attribute,
        codebook,
        &examples,
        paragraph,
        Some(&context),
    )?
    .rendered;
    let mut calls = Vec::new();
    let mut warnings = Vec::new();
    let untopiced = || {
        triplets
            .iter()
            .map(|t| t.clone().with_topic(None))
            .collect::<Vec<_>>()
    };
    let items = match parse_with_retry(&prompt, Subtask::Attribute, gateway, config, &mut calls) {
        Ok(items) => items,
        Err(Error::Parse(msg)) => {
            return Ok(StepOutput {
                value: Attribution {
                    interactions: untopiced(),
                    error: Some(format!("topic labelling output unparseable: {msg}")),
                },
                calls,
                warnings,
            })
        }
        Err(e) => return Err(e),
    };

    let mut topics: Vec<BTreeSet<TopicId>> = vec![BTreeSet::new(); triplets.len()];
    for item in items {
        let record = match item {
            ParsedItem::Record(r) => r,
            ParsedItem::Skipped(why) => {
                warnings.push(format!("skipped output element: {why}"));
                continue;
            }
        };
        let relation = RelationType::parse_label(&record.relation);
        let head = resolve_party(codebook, &record.party1, config.fuzzy_threshold).ok();
        let tail = resolve_party(codebook, &record.party2, config.fuzzy_threshold).ok();
        let matched = triplets.iter().position(|t| {
            Some(t.relation) == relation
                && head.as_ref().is_some_and(|h| h.name == t.head.name)
                && tail.as_ref().is_some_and(|p| p.name == t.tail.name)
        });
        let Some(idx) = matched else {
            warnings.push(format!(
                "labelled interaction ({}, {}, {}) was not among the extracted ones; ignored",
                record.party1, record.party2, record.relation
            ));
            continue;
        };
        match record.topic.as_deref() {
            None => warnings.push(format!(
                "no topic given for ({}, {})",
                record.party1, record.party2
            )),
            Some(name) => match codebook.topic_by_name(name) {
                Some(id) => {
                    topics[idx].insert(id);
                }
                None => warnings.push(format!("unknown topic `{name}`; topic left empty")),
            },
        }
    }
    let mut out = Vec::new();
    for (t, ids) in triplets.iter().zip(topics) {
        if ids.is_empty() {
            out.push(t.clone().with_topic(None));
        } else {
            out.extend(ids.into_iter().map(|id| t.clone().with_topic(Some(id))));
        }
    }
    Ok(StepOutput {
        value: Attribution {
            interactions: out,
            error: None,
        },
        calls,
        warnings,
    })
}

/// Everything recorded for one paragraph of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParagraphRecord {
    pub paragraph: ParagraphRef,
    /// `None` when the presence call itself failed.
    pub presence: Option<bool>,
    pub calls: Vec<RawCall>,
    pub triplets: Vec<OutputRecord>,
    pub interactions: Vec<Interaction>,
    pub warnings: Vec<String>,
    pub errors: Vec<String>,
}

impl ParagraphRecord {
    fn new(paragraph: ParagraphRef) -> Self {
        ParagraphRecord {
            paragraph,
            presence: None,
            calls: Vec::new(),
            triplets: Vec::new(),
            interactions: Vec::new(),
            warnings: Vec::new(),
            errors: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRun {
    pub run_id: String,
    pub mode: Mode,
    pub model_id: String,
    pub paragraphs: Vec<ParagraphRecord>,
}

impl AnnotationRun {
    pub fn interactions(&self) -> impl Iterator<Item = &Interaction> {
        self.paragraphs.iter().flat_map(|p| p.interactions.iter())
    }

    pub fn records(&self) -> Vec<AnnotationRecord> {
        self.interactions()
            .map(|i| AnnotationRecord::from_interaction(i, &self.run_id, &self.model_id))
            .collect()
    }

    pub fn error_count(&self) -> usize {
        self.paragraphs.iter().map(|p| p.errors.len()).sum()
    }
}

/// Stable identifier derived from everything that determines a run's output.
pub fn run_id(
    reports: &[Report],
    codebook_digest: &str,
    config: &ModeConfig,
    rules: &RuleConfig,
) -> String {
    let mut h = Sha256::new();
    h.update(codebook_digest.as_bytes());
    h.update(serde_json::to_vec(config).expect("config serializes"));
    for rule in &rules.enabled {
        h.update(rule.as_str().as_bytes());
    }
    for r in reports {
        h.update(r.report_id.as_bytes());
        h.update([0]);
        for p in &r.paragraphs {
            h.update(p.text.as_bytes());
            h.update([0]);
        }
    }
    let digest = hex::encode(h.finalize());
    format!("run-{}", &digest[..16])
}

fn annotate_paragraph(
    text: &str,
    at: ParagraphRef,
    codebook: &Codebook,
    gateway: &Gateway,
    config: &ModeConfig,
    rules: &RuleConfig,
) -> ParagraphRecord {
    let mut rec = ParagraphRecord::new(at.clone());
    let presence = match detect_interactions(text, codebook, gateway, config) {
        Ok(step) => step,
        Err(e) => {
            rec.errors.push(format!("presence: {e}"));
            return rec;
        }
    };
    rec.calls.extend(presence.calls);
    rec.warnings.extend(presence.warnings);
    rec.presence = Some(presence.value);
    if !presence.value {
        return rec;
    }

    let triplets = match extract_relations(text, &at, codebook, gateway, config) {
        Ok(step) => {
            rec.calls.extend(step.calls);
            rec.warnings.extend(step.warnings);
            step.value
        }
        Err(e) => {
            rec.errors.push(format!("relation: {e}"));
            return rec;
        }
    };
    rec.triplets = triplets
        .iter()
        .map(|t| OutputRecord::triplet(&t.head.name, &t.tail.name, t.relation.label()))
        .collect();

    let labelled = match predict_attributes(text, &triplets, codebook, gateway, config) {
        Ok(step) => {
            rec.calls.extend(step.calls);
            rec.warnings.extend(step.warnings);
            if let Some(err) = step.value.error {
                rec.errors.push(format!("attribute: {err}"));
            }
            step.value.interactions
        }
        Err(e) => {
            rec.errors.push(format!("attribute: {e}"));
            triplets
        }
    };

    rec.interactions = match close_to_fixpoint(&labelled, rules) {
        Ok(closed) => dedupe(closed),
        Err(e) => {
            rec.errors.push(format!("closure: {e}"));
            dedupe(labelled)
        }
    };
    rec
}

/// Annotates every paragraph of the daily reports in `reports`. Paragraphs
/// run concurrently on up to `concurrency` threads; the result is assembled
/// in report and paragraph order, so it does not depend on scheduling.
/// Failures are recorded on the paragraph and never abort the run.
pub fn annotate_corpus(
    reports: &[Report],
    codebook: &Codebook,
    gateway: &Gateway,
    config: &ModeConfig,
    rules: &RuleConfig,
    run_id: &str,
    concurrency: usize,
) -> Result<AnnotationRun> {
    config.validate(codebook)?;
    let units: Vec<(&str, ParagraphRef)> = reports
        .iter()
        .filter(|r| r.kind == ReportKind::Daily)
        .flat_map(|r| {
            r.paragraphs.iter().map(|p| {
                (
                    p.text.as_str(),
                    ParagraphRef::new(r.report_id.clone(), p.index),
                )
            })
        })
        .collect();

    let slots: Mutex<Vec<Option<ParagraphRecord>>> = Mutex::new(vec![None; units.len()]);
    let next = AtomicUsize::new(0);
    let workers = concurrency.max(1).min(units.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some((text, at)) = units.get(i) else {
                    break;
                };
                let rec = annotate_paragraph(text, at.clone(), codebook, gateway, config, rules);
                slots.lock().expect("poisoned")[i] = Some(rec);
            });
        }
    });
    let paragraphs = slots
        .into_inner()
        .expect("poisoned")
        .into_iter()
        .map(|r| r.ok_or_else(|| Error::Internal("paragraph left unprocessed".into())))
        .collect::<Result<Vec<_>>>()?;
    Ok(AnnotationRun {
        run_id: run_id.to_string(),
        mode: config.mode,
        model_id: config.generation.model_id.clone(),
        paragraphs,
    })
}

/// Labels gold triplets with topics, paragraph by paragraph, the way topic
/// prediction is evaluated. Gold triplets whose paragraph is missing from
/// `reports` are returned untouched with a warning.
pub fn label_gold_triplets(
    reports: &[Report],
    gold: &[Interaction],
    codebook: &Codebook,
    gateway: &Gateway,
    config: &ModeConfig,
) -> Result<StepOutput<Vec<Interaction>>> {
    let mut groups: std::collections::BTreeMap<ParagraphRef, Vec<Interaction>> = Default::default();
    for g in gold {
        let triplet = g.clone().with_topic(None);
        let list = groups.entry(g.paragraph.clone()).or_default();
        if !list.contains(&triplet) {
            list.push(triplet);
        }
    }
    let mut out = StepOutput {
        value: Vec::new(),
        calls: Vec::new(),
        warnings: Vec::new(),
    };
    for (at, triplets) in groups {
        let text = reports
            .iter()
            .find(|r| r.report_id == at.report_id)
            .and_then(|r| r.paragraph(at.paragraph_index));
        let Some(p) = text else {
            out.warnings.push(format!(
                "paragraph {}#{} not in corpus",
                at.report_id, at.paragraph_index
            ));
            out.value.extend(triplets);
            continue;
        };
        let step = predict_attributes(&p.text, &triplets, codebook, gateway, config)?;
        out.calls.extend(step.calls);
        out.warnings.extend(step.warnings);
        if let Some(e) = step.value.error {
            out.warnings
                .push(format!("{}#{}: {e}", at.report_id, at.paragraph_index));
        }
        out.value.extend(step.value.interactions);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutOfSpaceFlags {
    pub party1: bool,
    pub party2: bool,
}

/// One line of an annotation file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub run_id: String,
    pub report_id: String,
    pub paragraph_index: usize,
    pub party1: String,
    pub party2: String,
    pub relation: RelationType,
    pub topic: Option<TopicId>,
    pub derived: Provenance,
    pub out_of_space_flags: OutOfSpaceFlags,
    pub model_id: String,
}

impl AnnotationRecord {
    pub fn from_interaction(i: &Interaction, run_id: &str, model_id: &str) -> Self {
        AnnotationRecord {
            run_id: run_id.to_string(),
            report_id: i.paragraph.report_id.clone(),
            paragraph_index: i.paragraph.paragraph_index,
            party1: i.head.name.clone(),
            party2: i.tail.name.clone(),
            relation: i.relation,
            topic: i.topic,
            derived: i.derived,
            out_of_space_flags: OutOfSpaceFlags {
                party1: !i.head.in_space,
                party2: !i.tail.in_space,
            },
            model_id: model_id.to_string(),
        }
    }

    pub fn to_interaction(&self) -> Result<Interaction> {
        let party = |name: &str, out: bool| Party {
            name: name.to_string(),
            in_space: !out,
        };
        Interaction::new(
            party(&self.party1, self.out_of_space_flags.party1),
            party(&self.party2, self.out_of_space_flags.party2),
            self.relation,
            self.topic,
            ParagraphRef::new(self.report_id.clone(), self.paragraph_index),
            self.derived,
        )
    }
}

pub fn render_annotation_file(records: &[AnnotationRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn write_annotation_file(path: &Path, records: &[AnnotationRecord]) -> Result<()> {
    write_atomic(path, render_annotation_file(records).as_bytes())
}

pub fn read_annotation_file(path: &Path) -> Result<Vec<AnnotationRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l)
                .map_err(|e| Error::Validation(format!("{} line {}: {e}", path.display(), n + 1)))
        })
        .collect()
}

/// Reads an annotation file as interactions.
pub fn read_interactions(path: &Path) -> Result<Vec<Interaction>> {
    read_annotation_file(path)?
        .iter()
        .map(AnnotationRecord::to_interaction)
        .collect()
}
