//! The expert codebook and prompt assembly.
//!
//! # File format
//!
//! A codebook is a plain-text file split into bracketed sections. Lines
//! starting with `#` are comments outside the `[task:*]` and `[format:*]`
//! sections.
//!
//! ```text
//! [entities]
//! # kind | canonical name | aliases separated by `;`
//! coalition | AOSIS | Alliance of Small Island States
//! nation_state | European Union | EU
//!
//! [relations]
//! On behalf of: when country1 speaks on behalf of or for country2. ...
//! Support: ...
//!
//! [rules]
//! - If several countries (more than 2) agree with each other, ...
//!
//! [topics]
//! 1 | Finance | Financial mechanism, funding and support.
//!
//! [task:relation]
//! Please extract all the interactions between parties from this paragraph.
//!
//! [format:relation]
//! The output should be a list of JSON objects. ...
//!
//! [examples]
//! {"id": "rel-1", "subtask": "relation", "paragraph": "...", "gold": [{"Party1": "...", "Party2": "...", "Relation": "Support"}]}
//! ```
//!
//! A relation definition starts on a line whose text before the first `:` is
//! a relation label; other lines continue the previous definition. Rules
//! start with `- `.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Entity, EntityKind, EntitySpace, RelationType, Resolution, TopicId};
use crate::records::{render_records, OutputRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subtask {
    Presence,
    Relation,
    Attribute,
}

impl Subtask {
    pub const ALL: [Subtask; 3] = [Subtask::Presence, Subtask::Relation, Subtask::Attribute];

    pub fn as_str(self) -> &'static str {
        match self {
            Subtask::Presence => "presence",
            Subtask::Relation => "relation",
            Subtask::Attribute => "attribute",
        }
    }

    fn default_task(self) -> &'static str {
        match self {
            Subtask::Presence => {
                "Please determine whether this paragraph contains any interaction between parties."
            }
            Subtask::Relation => "Please extract all the interactions between parties from this paragraph.",
            Subtask::Attribute => {
                "Please identify the topic of each given interaction between parties in this paragraph."
            }
        }
    }

    fn default_format(self) -> &'static str {
        match self {
            Subtask::Presence => {
                "Answer with a single word: \"yes\" if the paragraph contains at least one interaction between parties, otherwise \"no\"."
            }
            Subtask::Relation => {
                "The output should be a list of JSON objects. Each JSON object codes one interaction, with keys \"Party1\", \"Party2\", and \"Relation\"."
            }
            Subtask::Attribute => {
                "The output should be a list of JSON objects. Each JSON object labels one of the given interactions, with keys \"Party1\", \"Party2\", \"Relation\", and \"Topic\"."
            }
        }
    }
}

impl fmt::Display for Subtask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Subtask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Subtask::ALL
            .into_iter()
            .find(|t| t.as_str() == s.trim())
            .ok_or_else(|| Error::invalid(format!("unknown subtask `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicDefinition {
    pub id: TopicId,
    pub name: String,
    pub description: String,
}

/// A human-annotated paragraph used as an in-context example. Parties are
/// canonical names; topics are referenced by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedExample {
    pub id: String,
    pub subtask: Subtask,
    pub paragraph: String,
    #[serde(default)]
    pub gold: Vec<OutputRecord>,
}

#[derive(Debug, Clone)]
pub struct Codebook {
    pub entity_space: EntitySpace,
    pub relation_definitions: BTreeMap<RelationType, String>,
    pub coding_rules: Vec<String>,
    topics: Vec<TopicDefinition>,
    pub examples: Vec<AnnotatedExample>,
    pub task_instructions: BTreeMap<Subtask, String>,
    pub format_instructions: BTreeMap<Subtask, String>,
}

fn validate_topics(topics: &[TopicDefinition]) -> Result<()> {
    let mut ids = BTreeSet::new();
    let mut names = BTreeSet::new();
    for t in topics {
        if !ids.insert(t.id) {
            return Err(Error::Validation(format!("duplicate topic id {}", t.id)));
        }
        if !names.insert(t.name.to_lowercase()) {
            return Err(Error::Validation(format!(
                "duplicate topic name `{}`",
                t.name
            )));
        }
    }
    Ok(())
}

impl Codebook {
    pub fn load(path: &Path) -> Result<Codebook> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Codebook::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Codebook> {
        let mut sections: Vec<(String, Vec<&str>)> = Vec::new();
        for line in text.lines() {
            let trimmed = line.trim();
            if trimmed.starts_with('[') && trimmed.ends_with(']') && trimmed.len() > 2 {
                sections.push((trimmed[1..trimmed.len() - 1].trim().to_string(), Vec::new()));
            } else if let Some((_, lines)) = sections.last_mut() {
                lines.push(line);
            } else if !trimmed.is_empty() && !trimmed.starts_with('#') {
                return Err(Error::Validation(format!(
                    "text before the first section: `{trimmed}`"
                )));
            }
        }

        let mut entities = Vec::new();
        let mut relation_definitions = BTreeMap::new();
        let mut coding_rules: Vec<String> = Vec::new();
        let mut topics = Vec::new();
        let mut raw_examples = Vec::new();
        let mut task_instructions = BTreeMap::new();
        let mut format_instructions = BTreeMap::new();

        for (name, lines) in &sections {
            let content = || {
                lines
                    .iter()
                    .map(|l| l.trim())
                    .filter(|l| !l.is_empty() && !l.starts_with('#'))
            };
            match name.as_str() {
                "entities" => {
                    for line in content() {
                        let cols: Vec<&str> = line.split('|').map(str::trim).collect();
                        if cols.len() < 2 {
                            return Err(Error::Validation(format!("bad entity line `{line}`")));
                        }
                        entities.push(Entity {
                            kind: EntityKind::from_str(cols[0])?,
                            canonical_name: cols[1].to_string(),
                            aliases: cols
                                .get(2)
                                .map(|a| {
                                    a.split(';')
                                        .map(str::trim)
                                        .filter(|s| !s.is_empty())
                                        .map(String::from)
                                        .collect()
                                })
                                .unwrap_or_default(),
                            in_space: true,
                        });
                    }
                }
                "relations" => {
                    let mut current: Option<RelationType> = None;
                    for line in content() {
                        let starts = line.split_once(':').and_then(|(label, rest)| {
                            RelationType::parse_label(label).map(|r| (r, rest))
                        });
                        if let Some((relation, rest)) = starts {
                            if relation_definitions.contains_key(&relation) {
                                return Err(Error::Validation(format!(
                                    "relation `{relation}` defined twice"
                                )));
                            }
                            relation_definitions.insert(relation, rest.trim().to_string());
                            current = Some(relation);
                        } else if let Some(r) = current {
                            let def: &mut String =
                                relation_definitions.get_mut(&r).expect("inserted");
                            def.push(' ');
                            def.push_str(line);
                        } else {
                            return Err(Error::Validation(format!(
                                "relation definition line without a label: `{line}`"
                            )));
                        }
                    }
                }
                "rules" => {
                    for line in content() {
                        if let Some(rule) = line.strip_prefix("- ") {
                            coding_rules.push(rule.trim().to_string());
                        } else if let Some(last) = coding_rules.last_mut() {
                            last.push(' ');
                            last.push_str(line);
                        } else {
                            return Err(Error::Validation(format!(
                                "rule line without `- `: `{line}`"
                            )));
                        }
                    }
                }
                "topics" => {
                    for line in content() {
                        let cols: Vec<&str> = line.splitn(3, '|').map(str::trim).collect();
                        if cols.len() != 3 {
                            return Err(Error::Validation(format!("bad topic line `{line}`")));
                        }
                        let id: u32 = cols[0].parse().map_err(|_| {
                            Error::Validation(format!("bad topic id `{}`", cols[0]))
                        })?;
                        topics.push(TopicDefinition {
                            id: TopicId(id),
                            name: cols[1].to_string(),
                            description: cols[2].to_string(),
                        });
                    }
                }
                "examples" => {
                    for line in content() {
                        let ex: AnnotatedExample = serde_json::from_str(line)
                            .map_err(|e| Error::Validation(format!("bad example line: {e}")))?;
                        raw_examples.push(ex);
                    }
                }
                other => {
                    let block = lines.join("\n").trim().to_string();
                    if let Some(task) = other.strip_prefix("task:") {
                        task_instructions.insert(Subtask::from_str(task)?, block);
                    } else if let Some(task) = other.strip_prefix("format:") {
                        format_instructions.insert(Subtask::from_str(task)?, block);
                    } else {
                        return Err(Error::Validation(format!(
                            "unknown codebook section `[{other}]`"
                        )));
                    }
                }
            }
        }

        for relation in RelationType::ALL {
            if !relation_definitions.contains_key(&relation) {
                return Err(Error::Validation(format!(
                    "missing definition for relation `{relation}`"
                )));
            }
        }
        validate_topics(&topics)?;
        let entity_space = EntitySpace::new(entities)?;

        let mut examples = Vec::with_capacity(raw_examples.len());
        let mut ids = BTreeSet::new();
        for mut ex in raw_examples {
            if !ids.insert(ex.id.clone()) {
                return Err(Error::Validation(format!(
                    "duplicate example id `{}`",
                    ex.id
                )));
            }
            for rec in &mut ex.gold {
                for party in [&mut rec.party1, &mut rec.party2] {
                    match entity_space.normalize(party, 1.0)? {
                        Resolution::InSpace(e) => *party = e.canonical_name.clone(),
                        Resolution::OutOfSpace(raw) => {
                            return Err(Error::Validation(format!(
                                "example `{}` references `{raw}` outside the entity space",
                                ex.id
                            )))
                        }
                    }
                }
                let relation = RelationType::from_str(&rec.relation)
                    .map_err(|e| Error::Validation(format!("example `{}`: {e}", ex.id)))?;
                rec.relation = relation.label().to_string();
            }
            examples.push(ex);
        }

        Ok(Codebook {
            entity_space,
            relation_definitions,
            coding_rules,
            topics,
            examples,
            task_instructions,
            format_instructions,
        })
    }

    pub fn topics(&self) -> &[TopicDefinition] {
        &self.topics
    }

    /// Replaces topic definitions, typically with the active topic space.
    pub fn set_topics(&mut self, topics: Vec<TopicDefinition>) -> Result<()> {
        validate_topics(&topics)?;
        self.topics = topics;
        Ok(())
    }

    pub fn topic_by_name(&self, name: &str) -> Option<TopicId> {
        let wanted = name.trim().to_lowercase();
        self.topics
            .iter()
            .find(|t| t.name.to_lowercase() == wanted)
            .map(|t| t.id)
    }

    pub fn topic_name(&self, id: TopicId) -> Option<&str> {
        self.topics
            .iter()
            .find(|t| t.id == id)
            .map(|t| t.name.as_str())
    }

    pub fn example(&self, id: &str) -> Option<&AnnotatedExample> {
        self.examples.iter().find(|e| e.id == id)
    }

    pub fn task_instruction(&self, subtask: Subtask) -> &str {
        self.task_instructions
            .get(&subtask)
            .map_or(subtask.default_task(), String::as_str)
    }

    pub fn format_instruction(&self, subtask: Subtask) -> &str {
        self.format_instructions
            .get(&subtask)
            .map_or(subtask.default_format(), String::as_str)
    }
}

/// Stable section headers, in prompt order.
pub const TASK_INSTRUCTION: &str = "Task Instruction";
pub const LABEL_DEFINITIONS: &str = "Label Definitions";
pub const CODING_RULES: &str = "Coding Rules";
pub const EXAMPLES: &str = "Examples";
pub const FORMAT_INSTRUCTION: &str = "Format Instruction";
pub const INFERENCE_INSTANCE: &str = "Inference Instance";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PromptBundle {
    pub subtask: Subtask,
    pub sections: Vec<(String, String)>,
    pub rendered: String,
}

impl PromptBundle {
    pub fn section(&self, name: &str) -> Option<&str> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t.as_str())
    }
}

fn quoted_list<'a>(items: impl IntoIterator<Item = &'a str>) -> String {
    let quoted: Vec<String> = items
        .into_iter()
        .map(|s| serde_json::to_string(s).expect("string serializes"))
        .collect();
    format!("[{}]", quoted.join(", "))
}

fn label_definitions(subtask: Subtask, codebook: &Codebook) -> String {
    match subtask {
        Subtask::Presence | Subtask::Relation => {
            let mut out = format!(
                "Each party should be a country or a coalition, in the list {}\nThe variable 'interaction' can take the following values.",
                quoted_list(codebook.entity_space.sorted_names())
            );
            for (relation, def) in &codebook.relation_definitions {
                out.push_str(&format!("\n{}: {def}", relation.label()));
            }
            out
        }
        Subtask::Attribute => {
            let mut out = String::from("The variable 'topic' can take the following values.");
            let mut topics: Vec<&TopicDefinition> = codebook.topics.iter().collect();
            topics.sort_by_key(|t| t.id);
            for t in topics {
                out.push_str(&format!("\n{}: {}", t.name, t.description));
            }
            out
        }
    }
}

fn instance_text(
    subtask: Subtask,
    paragraph: &str,
    context: Option<&[OutputRecord]>,
    output: Option<&str>,
) -> String {
    let mut out = format!("Paragraph:\n{paragraph}\n");
    if subtask == Subtask::Attribute {
        let ctx = context.unwrap_or(&[]);
        out.push_str(&format!("Interactions:\n{}\n", render_records(ctx)));
    }
    out.push_str("Output:");
    if let Some(answer) = output {
        out.push('\n');
        out.push_str(answer);
    }
    out
}

fn example_text(subtask: Subtask, ex: &AnnotatedExample) -> String {
    match subtask {
        Subtask::Presence => {
            let answer = if ex.gold.is_empty() { "no" } else { "yes" };
            instance_text(subtask, &ex.paragraph, None, Some(answer))
        }
        Subtask::Relation => {
            let triplets: Vec<OutputRecord> = ex
                .gold
                .iter()
                .map(|r| OutputRecord {
                    topic: None,
                    ..r.clone()
                })
                .collect();
            instance_text(
                subtask,
                &ex.paragraph,
                None,
                Some(&render_records(&triplets)),
            )
        }
        Subtask::Attribute => {
            let triplets: Vec<OutputRecord> = ex
                .gold
                .iter()
                .map(|r| OutputRecord {
                    topic: None,
                    ..r.clone()
                })
                .collect();
            instance_text(
                subtask,
                &ex.paragraph,
                Some(&triplets),
                Some(&render_records(&ex.gold)),
            )
        }
    }
}

/// Renders the prompt for one subtask. Sections always follow the order
/// task, label definitions, coding rules, examples, format, instance; the
/// examples section is left out when `examples` is empty.
pub fn assemble_prompt(
    subtask: Subtask,
    codebook: &Codebook,
    examples: &[&AnnotatedExample],
    paragraph: &str,
    context: Option<&[OutputRecord]>,
) -> Result<PromptBundle> {
    if subtask == Subtask::Attribute && context.is_none() {
        return Err(Error::invalid(
            "attribute prompts need the interactions to label",
        ));
    }
    let mut sections = vec![
        (
            TASK_INSTRUCTION.to_string(),
            codebook.task_instruction(subtask).to_string(),
        ),
        (
            LABEL_DEFINITIONS.to_string(),
            label_definitions(subtask, codebook),
        ),
    ];
    let mut rules = String::from("Further coding rules:");
    for rule in &codebook.coding_rules {
        rules.push_str("\n- ");
        rules.push_str(rule);
    }
    sections.push((CODING_RULES.to_string(), rules));
    if !examples.is_empty() {
        let blocks: Vec<String> = examples
            .iter()
            .enumerate()
            .map(|(i, ex)| format!("Example {}:\n{}", i + 1, example_text(subtask, ex)))
            .collect();
        sections.push((EXAMPLES.to_string(), blocks.join("\n\n")));
    }
    sections.push((
        FORMAT_INSTRUCTION.to_string(),
        codebook.format_instruction(subtask).to_string(),
    ));
    sections.push((
        INFERENCE_INSTANCE.to_string(),
        instance_text(subtask, paragraph, context, None),
    ));

    let rendered = sections
        .iter()
        .map(|(name, text)| format!("## {name}\n{text}\n"))
        .collect::<Vec<_>>()
        .join("\n");
    Ok(PromptBundle {
        subtask,
        sections,
        rendered,
    })
}
