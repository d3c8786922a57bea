//! Dynamic topic space: k-means over embedded topic words for the base stage,
//! then threshold-based incremental assignment of words from later stages.

use std::collections::BTreeSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codebook::TopicDefinition;
use crate::corpus::{Report, ReportKind};
use crate::error::{Error, Result};
use crate::gateway::{l2_normalize, Gateway, GenerationConfig};
use crate::model::TopicId;

pub const KMEANS_MAX_ITERATIONS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberWord {
    pub word: String,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topic {
    pub topic_id: TopicId,
    pub name: String,
    pub description: String,
    pub members: Vec<MemberWord>,
    pub centroid: Vec<f64>,
    pub stage_added: u32,
    pub human_revised: bool,
    pub revision: u32,
}

impl Topic {
    fn from_members(
        topic_id: TopicId,
        members: Vec<MemberWord>,
        stage_added: u32,
    ) -> Result<Topic> {
        let centroid = centroid_of(&members)?;
        Ok(Topic {
            topic_id,
            name: String::new(),
            description: String::new(),
            members,
            centroid,
            stage_added,
            human_revised: false,
            revision: 0,
        })
    }

    /// Smallest cosine similarity between a member and the centroid.
    pub fn min_member_similarity(&self) -> f64 {
        self.members
            .iter()
            .map(|m| cosine(&m.embedding, &self.centroid))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.members.iter().map(|m| m.word.as_str())
    }
}

fn centroid_of(members: &[MemberWord]) -> Result<Vec<f64>> {
    let first = members
        .first()
        .ok_or_else(|| Error::Internal("topic without members".into()))?;
    let mut sum = vec![0.0; first.embedding.len()];
    for m in members {
        for (s, x) in sum.iter_mut().zip(&m.embedding) {
            *s += x;
        }
    }
    let n = members.len() as f64;
    sum.iter_mut().for_each(|s| *s /= n);
    l2_normalize(sum)
        .ok_or_else(|| Error::invalid("member embeddings cancel out; centroid undefined"))
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// One version of the topic space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicSpace {
    pub version: u32,
    pub topics: Vec<Topic>,
    pub embedding_dim: usize,
    pub k: usize,
    pub seed: u64,
}

impl TopicSpace {
    pub fn topic(&self, id: TopicId) -> Option<&Topic> {
        self.topics.iter().find(|t| t.topic_id == id)
    }

    pub fn definitions(&self) -> Vec<TopicDefinition> {
        self.topics
            .iter()
            .map(|t| TopicDefinition {
                id: t.topic_id,
                name: t.name.clone(),
                description: t.description.clone(),
            })
            .collect()
    }

    pub fn member_count(&self) -> usize {
        self.topics.iter().map(|t| t.members.len()).sum()
    }

    pub fn contains_word(&self, word: &str) -> bool {
        self.topics.iter().any(|t| t.words().any(|w| w == word))
    }

    fn next_id(&self) -> TopicId {
        TopicId(self.topics.iter().map(|t| t.topic_id.0).max().unwrap_or(0) + 1)
    }

    fn name_taken(&self, name: &str, except: Option<TopicId>) -> bool {
        let lower = name.to_lowercase();
        self.topics
            .iter()
            .any(|t| Some(t.topic_id) != except && t.name.to_lowercase() == lower)
    }

    /// Checks dimensions, non-empty membership, unique names and that each
    /// centroid equals the normalized mean of its members.
    pub fn check_invariants(&self) -> Result<()> {
        let mut names = BTreeSet::new();
        for t in &self.topics {
            if t.members.is_empty() {
                return Err(Error::Validation(format!(
                    "topic {} has no members",
                    t.topic_id
                )));
            }
            if !names.insert(t.name.to_lowercase()) {
                return Err(Error::Validation(format!(
                    "duplicate topic name `{}`",
                    t.name
                )));
            }
            for m in &t.members {
                if m.embedding.len() != self.embedding_dim {
                    return Err(Error::Validation(format!(
                        "word `{}` has dimension {}, space has {}",
                        m.word,
                        m.embedding.len(),
                        self.embedding_dim
                    )));
                }
            }
            let expected = centroid_of(&t.members)?;
            let drift = expected
                .iter()
                .zip(&t.centroid)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if drift > 1e-9 || t.centroid.len() != self.embedding_dim {
                return Err(Error::Validation(format!(
                    "stale centroid for topic {}",
                    t.topic_id
                )));
            }
        }
        Ok(())
    }

    /// Renames a topic by hand. Membership is untouched.
    pub fn revise_topic(&mut self, id: TopicId, name: &str, description: &str) -> Result<()> {
        let name = name.trim();
        if name.is_empty() {
            return Err(Error::Validation("topic name must not be empty".into()));
        }
        if self.topic(id).is_none() {
            return Err(Error::invalid(format!("unknown topic id {id}")));
        }
        if self.name_taken(name, Some(id)) {
            return Err(Error::Validation(format!(
                "topic name `{name}` already in use"
            )));
        }
        let topic = self
            .topics
            .iter_mut()
            .find(|t| t.topic_id == id)
            .expect("checked above");
        topic.name = name.to_string();
        topic.description = description.trim().to_string();
        topic.human_revised = true;
        topic.revision += 1;
        Ok(())
    }
}

/// Every published version, oldest first. This is the on-disk topic space
/// document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicHistory {
    pub versions: Vec<TopicSpace>,
}

impl TopicHistory {
    pub fn new(base: TopicSpace) -> Self {
        TopicHistory {
            versions: vec![base],
        }
    }

    pub fn latest(&self) -> &TopicSpace {
        self.versions.last().expect("history is never empty")
    }

    pub fn latest_mut(&mut self) -> &mut TopicSpace {
        self.versions.last_mut().expect("history is never empty")
    }

    pub fn version(&self, v: u32) -> Option<&TopicSpace> {
        self.versions.iter().find(|s| s.version == v)
    }

    pub fn push(&mut self, next: TopicSpace) -> Result<()> {
        if next.version <= self.latest().version {
            return Err(Error::invalid(format!(
                "version {} does not follow {}",
                next.version,
                self.latest().version
            )));
        }
        self.versions.push(next);
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("history serializes") + "\n"
    }

    pub fn load(path: &Path) -> Result<TopicHistory> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let history: TopicHistory = serde_json::from_str(&text)?;
        if history.versions.is_empty() {
            return Err(Error::Validation(format!(
                "{}: no topic space versions",
                path.display()
            )));
        }
        Ok(history)
    }
}

/// Lloyd's k-means with k-means++ seeding from a fixed seed. Returns the
/// cluster index of every point. Ties go to the lowest cluster index; a
/// cluster that empties is reseeded with the point farthest from its own
/// centroid.
pub fn kmeans(
    points: &[Vec<f64>],
    k: usize,
    seed: u64,
    max_iterations: usize,
) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::invalid("k must be positive"));
    }
    if points.len() < k {
        return Err(Error::invalid(format!(
            "{} points cannot form {k} clusters",
            points.len()
        )));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::invalid("points have mixed dimensions"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<Vec<f64>> = vec![points[rng.gen_range(0..points.len())].clone()];
    while centers.len() < k {
        let d2: Vec<f64> = points
            .iter()
            .map(|p| {
                centers
                    .iter()
                    .map(|c| squared_distance(p, c))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = d2.iter().rposition(|d| *d > 0.0).expect("total > 0");
            for (i, d) in d2.iter().enumerate() {
                if *d > 0.0 && target < *d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            centers.len() % points.len()
        };
        centers.push(points[pick].clone());
    }

    let nearest = |p: &[f64], centers: &[Vec<f64>]| -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (j, c) in centers.iter().enumerate() {
            let d = squared_distance(p, c);
            if d < best_d {
                best_d = d;
                best = j;
            }
        }
        best
    };

    let mut assignment: Vec<usize> = points.iter().map(|p| nearest(p, &centers)).collect();
    for _ in 0..max_iterations {
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignment) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p) {
                *s += x;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                centers[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        for j in 0..k {
            if counts[j] == 0 {
                let far = (0..points.len())
                    .filter(|&i| counts[assignment[i]] > 1)
                    .max_by(|&a, &b| {
                        let da = squared_distance(&points[a], &centers[assignment[a]]);
                        let db = squared_distance(&points[b], &centers[assignment[b]]);
                        da.total_cmp(&db).then(b.cmp(&a))
                    });
                if let Some(i) = far {
                    counts[assignment[i]] -= 1;
                    assignment[i] = j;
                    counts[j] = 1;
                    centers[j] = points[i].clone();
                }
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centers)).collect();
        if next == assignment {
            break;
        }
        assignment = next;
    }
    Ok(assignment)
}

/// Prompts and model settings for the LLM-backed steps of topic space
/// construction.
#[derive(Debug, Clone, Default)]
pub struct TopicPrompts {
    pub generation: GenerationConfig,
}

pub fn extraction_prompt(report: &Report) -> String {
    let body: Vec<&str> = report.paragraphs.iter().map(|p| p.text.as_str()).collect();
    format!(
        "## Task Instruction\nList the negotiation topics discussed in this summary report as short topic words or phrases.\n\n\
         ## Format Instruction\nAnswer with a comma-separated list of topic words and nothing else.\n\n\
         ## Report\n{}\n",
        body.join("\n\n")
    )
}

pub fn naming_prompt(words: &[&str]) -> String {
    format!(
        "## Task Instruction\nThe following topic words from climate negotiation reports form one topic. Give the topic a short name and a one-sentence description.\n\n\
         ## Format Instruction\nAnswer with a JSON object with keys \"name\" and \"description\".\n\n\
         ## Topic Words\nTopic words: {}\n",
        words.join("; ")
    )
}

fn parse_word_list(text: &str) -> Vec<String> {
    text.split([',', '\n', ';'])
        .map(|w| {
            w.trim()
                .trim_start_matches(|c: char| {
                    c == '-' || c == '*' || c == '•' || c.is_ascii_digit() || c == '.' || c == ')'
                })
                .trim()
                .trim_matches(|c: char| c == '"' || c == '\'' || c == '.' || c == '`')
                .trim()
                .to_lowercase()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

/// Asks the model for topic words in each summary report. Words are
/// lower-cased and deduplicated across reports, keeping first-seen order.
/// Failed reports are reported in the second list and skipped; when every
/// report fails, the first failure is returned as the error.
pub fn extract_topic_words(
    reports: &[Report],
    gateway: &Gateway,
    prompts: &TopicPrompts,
) -> Result<(Vec<String>, Vec<String>)> {
    if let Some(r) = reports.iter().find(|r| r.kind != ReportKind::Summary) {
        return Err(Error::invalid(format!(
            "topic words come from summary reports; `{}` is a daily report",
            r.report_id
        )));
    }
    let mut seen = BTreeSet::new();
    let mut words = Vec::new();
    let mut errors = Vec::new();
    let mut first_error = None;
    let mut answered = 0;
    for report in reports {
        if report.paragraphs.is_empty() {
            continue;
        }
        match gateway.complete(&extraction_prompt(report), &prompts.generation) {
            Ok(text) => {
                answered += 1;
                for w in parse_word_list(&text) {
                    if seen.insert(w.clone()) {
                        words.push(w);
                    }
                }
            }
            Err(e) => {
                errors.push(format!("{}: {e}", report.report_id));
                first_error.get_or_insert(e);
            }
        }
    }
    match first_error {
        Some(e) if answered == 0 => Err(e),
        _ => Ok((words, errors)),
    }
}

#[derive(Deserialize)]
struct NamedTopic {
    name: String,
    #[serde(default)]
    description: String,
}

fn parse_named_topic(text: &str) -> Option<NamedTopic> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    if end < start {
        return None;
    }
    let parsed: NamedTopic = serde_json::from_str(&text[start..=end]).ok()?;
    (!parsed.name.trim().is_empty()).then_some(parsed)
}

fn title_case(word: &str) -> String {
    word.split_whitespace()
        .map(|w| {
            let mut cs = w.chars();
            match cs.next() {
                Some(f) => f.to_uppercase().chain(cs).collect(),
                None => String::new(),
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Names one topic through the model, falling back to its first word when
/// the answer cannot be used. Clashing names get a numeric suffix.
fn name_topic(
    space: &mut TopicSpace,
    id: TopicId,
    gateway: &Gateway,
    prompts: &TopicPrompts,
    warnings: &mut Vec<String>,
) {
    let topic = space.topic(id).expect("topic exists");
    let words: Vec<&str> = topic.words().collect();
    let prompt = naming_prompt(&words);
    let fallback_name = title_case(words[0]);
    let fallback_desc = format!("Topic words: {}.", words.join(", "));
    let (name, description) = match gateway.complete(&prompt, &prompts.generation) {
        Ok(text) => match parse_named_topic(&text) {
            Some(t) => (t.name.trim().to_string(), t.description.trim().to_string()),
            None => {
                warnings.push(format!(
                    "topic {id}: unusable name answer, using `{fallback_name}`"
                ));
                (fallback_name, fallback_desc)
            }
        },
        Err(e) => {
            warnings.push(format!(
                "topic {id}: naming failed ({e}), using `{fallback_name}`"
            ));
            (fallback_name, fallback_desc)
        }
    };
    let mut unique = name.clone();
    let mut n = 2;
    while space.name_taken(&unique, Some(id)) {
        unique = format!("{name} ({n})");
        n += 1;
    }
    let topic = space
        .topics
        .iter_mut()
        .find(|t| t.topic_id == id)
        .expect("topic exists");
    topic.name = unique;
    topic.description = description;
}

/// Result of a topic-space operation that may warn without failing.
#[derive(Debug, Clone)]
pub struct Built<T> {
    pub value: T,
    pub warnings: Vec<String>,
}

/// Clusters the base stage's topic words into `k` topics (version 1) and
/// names each one. Topic ids follow the order in which clusters first occur
/// in `words`.
pub fn build_base_space(
    words: &[String],
    k: usize,
    seed: u64,
    gateway: &Gateway,
    prompts: &TopicPrompts,
) -> Result<Built<TopicSpace>> {
    if k == 0 {
        return Err(Error::invalid("k must be positive"));
    }
    if words.len() < k {
        return Err(Error::invalid(format!(
            "{} topic words cannot form {k} topics",
            words.len()
        )));
    }
    let embeddings = gateway.embed(words)?;
    let dim = embeddings[0].len();
    if embeddings.iter().any(|e| e.len() != dim) {
        return Err(Error::invalid(
            "embedding backend returned mixed dimensions",
        ));
    }
    let assignment = kmeans(&embeddings, k, seed, KMEANS_MAX_ITERATIONS)?;

    let mut order: Vec<usize> = Vec::new();
    for &a in &assignment {
        if !order.contains(&a) {
            order.push(a);
        }
    }
    let mut space = TopicSpace {
        version: 1,
        topics: Vec::with_capacity(order.len()),
        embedding_dim: dim,
        k,
        seed,
    };
    for (n, cluster) in order.iter().enumerate() {
        let members: Vec<MemberWord> = words
            .iter()
            .zip(&embeddings)
            .zip(&assignment)
            .filter(|(_, &a)| a == *cluster)
            .map(|((w, e), _)| MemberWord {
                word: w.clone(),
                embedding: e.clone(),
            })
            .collect();
        space
            .topics
            .push(Topic::from_members(TopicId(n as u32 + 1), members, 1)?);
    }
    let mut warnings = Vec::new();
    let ids: Vec<TopicId> = space.topics.iter().map(|t| t.topic_id).collect();
    for id in ids {
        name_topic(&mut space, id, gateway, prompts, &mut warnings);
    }
    Ok(Built {
        value: space,
        warnings,
    })
}

/// Places one embedded word. The candidate topic is the one whose centroid
/// is most similar (lowest id on ties); the word joins it when its similarity
/// reaches the least similar existing member's, otherwise it seeds a new
/// topic stamped with the space's current version.
pub fn assign_embedded(
    word: &str,
    embedding: Vec<f64>,
    space: &mut TopicSpace,
    gateway: &Gateway,
    prompts: &TopicPrompts,
    warnings: &mut Vec<String>,
) -> Result<(TopicId, bool)> {
    if word.trim().is_empty() {
        return Err(Error::invalid("empty topic word"));
    }
    if space.topics.is_empty() {
        return Err(Error::invalid("cannot assign into an empty topic space"));
    }
    if embedding.len() != space.embedding_dim {
        return Err(Error::invalid(format!(
            "`{word}` has embedding dimension {}, topic space uses {}",
            embedding.len(),
            space.embedding_dim
        )));
    }
    let mut best: Option<(f64, usize)> = None;
    for (i, t) in space.topics.iter().enumerate() {
        let sim = cosine(&embedding, &t.centroid);
        let better = match best {
            None => true,
            Some((s, j)) => sim > s || (sim == s && t.topic_id < space.topics[j].topic_id),
        };
        if better {
            best = Some((sim, i));
        }
    }
    let (sim, idx) = best.expect("space is non-empty");
    let member = MemberWord {
        word: word.to_string(),
        embedding,
    };
    if sim >= space.topics[idx].min_member_similarity() {
        let topic = &mut space.topics[idx];
        topic.members.push(member);
        topic.centroid = centroid_of(&topic.members)?;
        return Ok((topic.topic_id, false));
    }
    let id = space.next_id();
    let stage = space.version;
    space
        .topics
        .push(Topic::from_members(id, vec![member], stage)?);
    name_topic(space, id, gateway, prompts, warnings);
    Ok((id, true))
}

/// Embeds `word` and places it with [`assign_embedded`].
pub fn assign_or_create(
    word: &str,
    space: &mut TopicSpace,
    gateway: &Gateway,
    prompts: &TopicPrompts,
) -> Result<Built<(TopicId, bool)>> {
    if word.trim().is_empty() {
        return Err(Error::invalid("empty topic word"));
    }
    let embedding = gateway
        .embed(&[word.to_string()])?
        .pop()
        .expect("one vector per text");
    let mut warnings = Vec::new();
    let value = assign_embedded(word, embedding, space, gateway, prompts, &mut warnings)?;
    Ok(Built { value, warnings })
}

#[derive(Debug, Clone)]
pub struct StageOutcome {
    pub space: TopicSpace,
    pub created: Vec<TopicId>,
    pub absorbed: Vec<(String, TopicId)>,
    pub errors: Vec<String>,
    pub warnings: Vec<String>,
}

/// Produces the next version from a later stage's summary reports. Words
/// already in the space are skipped; the rest are placed in sorted order,
/// since incremental assignment depends on order.
pub fn advance_stage(
    space: &TopicSpace,
    summary_reports: &[Report],
    gateway: &Gateway,
    prompts: &TopicPrompts,
) -> Result<StageOutcome> {
    let (words, mut errors) = extract_topic_words(summary_reports, gateway, prompts)?;
    let mut fresh: Vec<String> = words
        .into_iter()
        .filter(|w| !space.contains_word(w))
        .collect();
    fresh.sort();

    let mut next = space.clone();
    next.version += 1;
    let mut created = Vec::new();
    let mut absorbed = Vec::new();
    let mut warnings = Vec::new();
    for word in fresh {
        let embedding = match gateway.embed(std::slice::from_ref(&word)) {
            Ok(mut v) => v.pop().expect("one vector per text"),
            Err(e) => {
                errors.push(format!("`{word}`: {e}"));
                continue;
            }
        };
        match assign_embedded(&word, embedding, &mut next, gateway, prompts, &mut warnings) {
            Ok((id, true)) => created.push(id),
            Ok((id, false)) => absorbed.push((word, id)),
            Err(e) => errors.push(format!("`{word}`: {e}")),
        }
    }
    Ok(StageOutcome {
        space: next,
        created,
        absorbed,
        errors,
        warnings,
    })
}
