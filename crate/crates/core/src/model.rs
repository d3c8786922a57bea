//! Shared domain types: entities, relation types, interactions, and the
//! entity space that raw model output is normalized against.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default similarity a fuzzy entity match must reach.
pub const DEFAULT_FUZZY_THRESHOLD: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    NationState,
    Coalition,
}

impl FromStr for EntityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s
            .trim()
            .to_ascii_lowercase()
            .replace(['-', ' '], "_")
            .as_str()
        {
            "nation_state" | "country" | "party" => Ok(EntityKind::NationState),
            "coalition" | "group" => Ok(EntityKind::Coalition),
            other => Err(Error::invalid(format!("unknown entity kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub canonical_name: String,
    pub kind: EntityKind,
    pub aliases: Vec<String>,
    pub in_space: bool,
}

/// The five interaction types of the relation label space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RelationType {
    #[serde(rename = "On behalf of")]
    OnBehalfOf,
    #[serde(rename = "Support")]
    Support,
    #[serde(rename = "Agreement")]
    Agreement,
    #[serde(rename = "Delaying proposal")]
    DelayingProposal,
    #[serde(rename = "Opposition")]
    Opposition,
}

impl RelationType {
    pub const ALL: [RelationType; 5] = [
        RelationType::OnBehalfOf,
        RelationType::Support,
        RelationType::Agreement,
        RelationType::DelayingProposal,
        RelationType::Opposition,
    ];

    /// Agreement and On behalf of are coded in both directions.
    pub fn is_bidirectional(self) -> bool {
        matches!(self, RelationType::Agreement | RelationType::OnBehalfOf)
    }

    pub fn label(self) -> &'static str {
        match self {
            RelationType::OnBehalfOf => "On behalf of",
            RelationType::Support => "Support",
            RelationType::Agreement => "Agreement",
            RelationType::DelayingProposal => "Delaying proposal",
            RelationType::Opposition => "Opposition",
        }
    }

    /// Case-insensitive lookup that ignores spacing, hyphens and underscores.
    pub fn parse_label(raw: &str) -> Option<RelationType> {
        let squashed: String = raw
            .chars()
            .filter(|c| c.is_alphanumeric())
            .flat_map(char::to_lowercase)
            .collect();
        RelationType::ALL.into_iter().find(|r| {
            let want: String = r
                .label()
                .chars()
                .filter(|c| c.is_alphanumeric())
                .flat_map(char::to_lowercase)
                .collect();
            want == squashed
        })
    }
}

impl fmt::Display for RelationType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for RelationType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RelationType::parse_label(s)
            .ok_or_else(|| Error::invalid(format!("unknown relation `{s}`")))
    }
}

/// Stable identifier of a topic in the topic space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TopicId(pub u32);

impl fmt::Display for TopicId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Location of the paragraph an interaction was annotated in.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParagraphRef {
    pub report_id: String,
    pub paragraph_index: usize,
}

impl ParagraphRef {
    pub fn new(report_id: impl Into<String>, paragraph_index: usize) -> Self {
        ParagraphRef {
            report_id: report_id.into(),
            paragraph_index,
        }
    }
}

/// How an interaction came to be in a set. `Stated` sorts first, so it wins
/// when duplicates are collapsed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Stated,
    ClosureBidirectional,
    ClosureTransitive,
    ClosureDerivation,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Stated => "stated",
            Provenance::ClosureBidirectional => "closure_bidirectional",
            Provenance::ClosureTransitive => "closure_transitive",
            Provenance::ClosureDerivation => "closure_derivation",
        }
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stated" => Ok(Provenance::Stated),
            "closure_bidirectional" => Ok(Provenance::ClosureBidirectional),
            "closure_transitive" => Ok(Provenance::ClosureTransitive),
            "closure_derivation" => Ok(Provenance::ClosureDerivation),
            other => Err(Error::invalid(format!("unknown provenance `{other}`"))),
        }
    }
}

/// An interaction endpoint. Names outside the entity space are kept verbatim
/// and flagged.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Party {
    pub name: String,
    pub in_space: bool,
}

impl Party {
    pub fn in_space(name: impl Into<String>) -> Self {
        Party {
            name: name.into(),
            in_space: true,
        }
    }

    pub fn out_of_space(name: impl Into<String>) -> Self {
        Party {
            name: name.into(),
            in_space: false,
        }
    }
}

/// Identity of an interaction for set semantics; provenance is not part of it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct InteractionKey {
    pub paragraph: ParagraphRef,
    pub head: String,
    pub tail: String,
    pub relation: RelationType,
    pub topic: Option<TopicId>,
}

/// One annotated quadruplet: sender, recipient, relation and topic.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Interaction {
    pub head: Party,
    pub tail: Party,
    pub relation: RelationType,
    pub topic: Option<TopicId>,
    pub paragraph: ParagraphRef,
    pub derived: Provenance,
}

impl Interaction {
    pub fn new(
        head: Party,
        tail: Party,
        relation: RelationType,
        topic: Option<TopicId>,
        paragraph: ParagraphRef,
        derived: Provenance,
    ) -> Result<Self> {
        if head.name == tail.name {
            return Err(Error::invalid(format!(
                "interaction endpoints must differ (`{}`)",
                head.name
            )));
        }
        Ok(Interaction {
            head,
            tail,
            relation,
            topic,
            paragraph,
            derived,
        })
    }

    /// Shorthand for a stated in-space interaction; panics on a self-loop.
    pub fn stated(head: &str, tail: &str, relation: RelationType, paragraph: ParagraphRef) -> Self {
        Interaction::new(
            Party::in_space(head),
            Party::in_space(tail),
            relation,
            None,
            paragraph,
            Provenance::Stated,
        )
        .expect("head and tail differ")
    }

    pub fn with_topic(mut self, topic: Option<TopicId>) -> Self {
        self.topic = topic;
        self
    }

    pub fn key(&self) -> InteractionKey {
        InteractionKey {
            paragraph: self.paragraph.clone(),
            head: self.head.name.clone(),
            tail: self.tail.name.clone(),
            relation: self.relation,
            topic: self.topic,
        }
    }

    pub fn reversed(&self, derived: Provenance) -> Interaction {
        Interaction {
            head: self.tail.clone(),
            tail: self.head.clone(),
            relation: self.relation,
            topic: self.topic,
            paragraph: self.paragraph.clone(),
            derived,
        }
    }

    pub fn is_fully_in_space(&self) -> bool {
        self.head.in_space && self.tail.in_space
    }
}

impl PartialEq for Interaction {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Interaction {}

impl Hash for Interaction {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.paragraph.hash(state);
        self.head.name.hash(state);
        self.tail.name.hash(state);
        self.relation.hash(state);
        self.topic.hash(state);
    }
}

impl PartialOrd for Interaction {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Interaction {
    fn cmp(&self, other: &Self) -> Ordering {
        self.paragraph
            .cmp(&other.paragraph)
            .then_with(|| self.head.name.cmp(&other.head.name))
            .then_with(|| self.tail.name.cmp(&other.tail.name))
            .then_with(|| self.relation.cmp(&other.relation))
            .then_with(|| self.topic.cmp(&other.topic))
    }
}

/// Collapses duplicates under interaction equality. When copies differ only
/// in provenance, the lowest-ranked one (`Stated` first) is kept.
pub fn dedupe(items: impl IntoIterator<Item = Interaction>) -> Vec<Interaction> {
    let mut best: BTreeMap<InteractionKey, Interaction> = BTreeMap::new();
    for item in items {
        match best.get_mut(&item.key()) {
            Some(existing) if item.derived < existing.derived => *existing = item,
            Some(_) => {}
            None => {
                best.insert(item.key(), item);
            }
        }
    }
    best.into_values().collect()
}

/// Fixed repair table for byte escapes and double-encoded UTF-8 seen in model
/// output. Escapes follow the Mac Roman code page that produced them.
const MOJIBAKE_REPAIRS: &[(&str, &str)] = &[
    ("\\x9f", "ü"),
    ("\u{9f}", "ü"),
    ("\\x8a", "ä"),
    ("\u{8a}", "ä"),
    ("\\x9a", "ö"),
    ("\u{9a}", "ö"),
    ("\\x8e", "é"),
    ("\u{8e}", "é"),
    ("\\x8f", "è"),
    ("\\x99", "ô"),
    ("\\x8d", "ç"),
    ("\\x96", "ñ"),
    ("Ã¼", "ü"),
    ("Ã¤", "ä"),
    ("Ã¶", "ö"),
    ("Ã©", "é"),
    ("Ã¨", "è"),
    ("Ã´", "ô"),
    ("Ã§", "ç"),
    ("Ã±", "ñ"),
    ("Ã£", "ã"),
    ("Ã\u{ad}", "í"),
    ("Ã³", "ó"),
    ("Ã¡", "á"),
    ("â€™", "'"),
];

const DIACRITIC_FOLDS: &[(char, char)] = &[
    ('ü', 'u'),
    ('ú', 'u'),
    ('ä', 'a'),
    ('á', 'a'),
    ('à', 'a'),
    ('ã', 'a'),
    ('â', 'a'),
    ('ö', 'o'),
    ('ó', 'o'),
    ('ô', 'o'),
    ('é', 'e'),
    ('è', 'e'),
    ('ë', 'e'),
    ('ê', 'e'),
    ('í', 'i'),
    ('ï', 'i'),
    ('ç', 'c'),
    ('ñ', 'n'),
];

pub fn repair_mojibake(raw: &str) -> String {
    let mut out = raw.to_string();
    for (broken, fixed) in MOJIBAKE_REPAIRS {
        if out.contains(broken) {
            out = out.replace(broken, fixed);
        }
    }
    out
}

/// Lookup key: repaired, case-folded, diacritics folded, whitespace collapsed,
/// leading article and trailing punctuation removed.
pub fn entity_key(raw: &str) -> String {
    let repaired = repair_mojibake(raw);
    let folded: String = repaired
        .to_lowercase()
        .chars()
        .map(|c| {
            DIACRITIC_FOLDS
                .iter()
                .find(|(from, _)| *from == c)
                .map_or(c, |(_, to)| *to)
        })
        .map(|c| if c == '’' { '\'' } else { c })
        .collect();
    let collapsed = folded.split_whitespace().collect::<Vec<_>>().join(" ");
    let stripped = collapsed.strip_prefix("the ").unwrap_or(&collapsed);
    stripped
        .trim_matches(|c: char| matches!(c, ',' | '.' | ';' | ':' | '"' | '“' | '”'))
        .trim()
        .to_string()
}

/// Normalized edit similarity used for fuzzy entity matching.
pub fn name_similarity(a: &str, b: &str) -> f64 {
    strsim::normalized_levenshtein(a, b)
}

/// Outcome of normalizing a raw party name.
#[derive(Debug, Clone, PartialEq)]
pub enum Resolution<'a> {
    InSpace(&'a Entity),
    OutOfSpace(String),
}

impl Resolution<'_> {
    pub fn into_party(self) -> Party {
        match self {
            Resolution::InSpace(e) => Party::in_space(e.canonical_name.clone()),
            Resolution::OutOfSpace(raw) => Party::out_of_space(raw),
        }
    }
}

/// The predefined label space of negotiating parties.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EntitySpace {
    entities: Vec<Entity>,
    alias_index: BTreeMap<String, usize>,
}

impl EntitySpace {
    /// Builds the space and its alias index. Canonical names must be unique
    /// case-insensitively and no alias may point at two entities.
    pub fn new(entities: Vec<Entity>) -> Result<Self> {
        let mut space = EntitySpace {
            entities: Vec::with_capacity(entities.len()),
            alias_index: BTreeMap::new(),
        };
        let mut seen = BTreeSet::new();
        for mut entity in entities {
            if entity.canonical_name.trim().is_empty() {
                return Err(Error::Validation("entity with empty canonical name".into()));
            }
            if !seen.insert(entity.canonical_name.to_lowercase()) {
                return Err(Error::Validation(format!(
                    "duplicate entity `{}`",
                    entity.canonical_name
                )));
            }
            entity.in_space = true;
            let idx = space.entities.len();
            let names =
                std::iter::once(entity.canonical_name.clone()).chain(entity.aliases.clone());
            for name in names {
                let key = entity_key(&name);
                if key.is_empty() {
                    continue;
                }
                if let Some(&other) = space.alias_index.get(&key) {
                    if other != idx {
                        return Err(Error::Validation(format!(
                            "alias `{name}` maps to both `{}` and `{}`",
                            space.entities[other].canonical_name, entity.canonical_name
                        )));
                    }
                }
                space.alias_index.insert(key, idx);
            }
            space.entities.push(entity);
        }
        Ok(space)
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn get(&self, canonical_name: &str) -> Option<&Entity> {
        self.alias_index
            .get(&entity_key(canonical_name))
            .map(|&i| &self.entities[i])
            .filter(|e| e.canonical_name == canonical_name)
    }

    /// Canonical names in byte order, as listed to the model.
    pub fn sorted_names(&self) -> Vec<&str> {
        let mut names: Vec<&str> = self
            .entities
            .iter()
            .map(|e| e.canonical_name.as_str())
            .collect();
        names.sort_unstable();
        names
    }

    /// Resolves a raw party name against the space: exact alias match first,
    /// then the best fuzzy match at or above `fuzzy_threshold`. Similarity ties
    /// go to the lexicographically smallest canonical name.
    pub fn normalize(&self, raw_name: &str, fuzzy_threshold: f64) -> Result<Resolution<'_>> {
        let trimmed = raw_name.trim();
        if trimmed.is_empty() {
            return Err(Error::invalid("empty entity name"));
        }
        let key = entity_key(trimmed);
        if let Some(&idx) = self.alias_index.get(&key) {
            return Ok(Resolution::InSpace(&self.entities[idx]));
        }
        let mut best: Option<(f64, &Entity)> = None;
        for (alias, &idx) in &self.alias_index {
            let sim = name_similarity(&key, alias);
            if sim < fuzzy_threshold {
                continue;
            }
            let candidate = &self.entities[idx];
            best = match best {
                None => Some((sim, candidate)),
                Some((s, e))
                    if sim > s || (sim == s && candidate.canonical_name < e.canonical_name) =>
                {
                    Some((sim, candidate))
                }
                keep => keep,
            };
        }
        Ok(match best {
            Some((_, entity)) => Resolution::InSpace(entity),
            None => Resolution::OutOfSpace(trimmed.to_string()),
        })
    }
}
