//! The JSON list format models answer in, with keys `Party1`, `Party2`,
//! `Relation` and, for topic labelling, `Topic`.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct OutputRecord {
    #[serde(rename = "Party1")]
    pub party1: String,
    #[serde(rename = "Party2")]
    pub party2: String,
    #[serde(rename = "Relation")]
    pub relation: String,
    #[serde(rename = "Topic", default, skip_serializing_if = "Option::is_none")]
    pub topic: Option<String>,
}

impl OutputRecord {
    pub fn triplet(party1: &str, party2: &str, relation: &str) -> Self {
        OutputRecord {
            party1: party1.to_string(),
            party2: party2.to_string(),
            relation: relation.to_string(),
            topic: None,
        }
    }
}

/// Compact one-line JSON rendering used in prompts and training targets.
pub fn render_records(records: &[OutputRecord]) -> String {
    serde_json::to_string(records).expect("records serialize")
}

fn strip_fences(text: &str) -> &str {
    let t = text.trim();
    let Some(rest) = t.strip_prefix("```") else {
        return t;
    };
    let rest = rest.split_once('\n').map_or("", |(_, body)| body);
    rest.trim_end().strip_suffix("```").unwrap_or(rest).trim()
}

fn field<'a>(obj: &'a serde_json::Map<String, Value>, name: &str) -> Option<&'a Value> {
    obj.get(name).or_else(|| {
        obj.iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v)
    })
}

fn as_text(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Null => None,
        other => Some(other.to_string()),
    }
}

/// One element of a parsed answer: either a usable record or a reason the
/// element was skipped.
#[derive(Debug, Clone, PartialEq)]
pub enum ParsedItem {
    Record(OutputRecord),
    Skipped(String),
}

/// Parses a model answer into records. Tolerates code fences and prose around
/// the list. A top-level failure (no JSON list at all) is an error; malformed
/// elements are reported as [`ParsedItem::Skipped`].
pub fn parse_output(text: &str) -> Result<Vec<ParsedItem>> {
    let body = strip_fences(text);
    let value: Value = match serde_json::from_str(body) {
        Ok(v) => v,
        Err(_) => {
            let (Some(start), Some(end)) = (body.find('['), body.rfind(']')) else {
                return Err(Error::Parse(format!("no JSON list in `{}`", preview(text))));
            };
            if end < start {
                return Err(Error::Parse(format!("no JSON list in `{}`", preview(text))));
            }
            serde_json::from_str(&body[start..=end])
                .map_err(|e| Error::Parse(format!("{e} in `{}`", preview(text))))?
        }
    };
    let items = match value {
        Value::Array(items) => items,
        obj @ Value::Object(_) => vec![obj],
        other => return Err(Error::Parse(format!("expected a JSON list, got `{other}`"))),
    };
    Ok(items
        .into_iter()
        .map(|item| {
            let Value::Object(obj) = item else {
                return ParsedItem::Skipped(format!("not an object: {item}"));
            };
            let get = |k: &str| field(&obj, k).and_then(as_text);
            match (get("Party1"), get("Party2"), get("Relation")) {
                (Some(party1), Some(party2), Some(relation)) => ParsedItem::Record(OutputRecord {
                    party1,
                    party2,
                    relation,
                    topic: get("Topic"),
                }),
                _ => ParsedItem::Skipped(format!(
                    "missing Party1/Party2/Relation in {}",
                    Value::Object(obj)
                )),
            }
        })
        .collect())
}

/// Parses a yes/no verdict; `None` when the answer is neither.
pub fn parse_verdict(text: &str) -> Option<bool> {
    let first = strip_fences(text)
        .split(|c: char| !c.is_alphanumeric())
        .find(|w| !w.is_empty())?
        .to_ascii_lowercase();
    match first.as_str() {
        "yes" | "true" => Some(true),
        "no" | "false" => Some(false),
        _ => None,
    }
}

fn preview(text: &str) -> String {
    let mut s: String = text.chars().take(80).collect();
    if text.chars().count() > 80 {
        s.push('…');
    }
    s
}
