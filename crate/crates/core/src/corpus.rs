//! Report ingestion: metadata header parsing, paragraph segmentation,
//! framework filtering and descriptive corpus statistics.
//!
//! A report file is UTF-8 text. It starts with `key: value` header lines
//! (`report_id`, `date` as ISO-8601, `meeting`, `kind`, `framework`), then a
//! blank line, then the body. Paragraphs are blank-line separated blocks.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportKind {
    Daily,
    Summary,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Paragraph {
    pub index: usize,
    pub text: String,
    pub word_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub report_id: String,
    pub date: NaiveDate,
    pub meeting: String,
    pub kind: ReportKind,
    pub framework: String,
    pub paragraphs: Vec<Paragraph>,
}

impl Report {
    pub fn year(&self) -> i32 {
        self.date.year()
    }

    pub fn paragraph(&self, index: usize) -> Option<&Paragraph> {
        self.paragraphs.get(index)
    }
}

/// A parsed report plus anything worth telling the operator about.
#[derive(Debug, Clone)]
pub struct ParsedReport {
    pub report: Report,
    pub warnings: Vec<String>,
}

/// Segmentation options. Blocks that fully match any boilerplate pattern are
/// dropped before indexing.
#[derive(Debug, Clone, Default)]
pub struct ParseOptions {
    pub boilerplate: Vec<Regex>,
}

impl ParseOptions {
    pub fn with_patterns<S: AsRef<str>>(patterns: &[S]) -> Result<Self> {
        let boilerplate = patterns
            .iter()
            .map(|p| {
                Regex::new(&format!("^(?:{})$", p.as_ref()))
                    .map_err(|e| Error::invalid(format!("bad boilerplate pattern: {e}")))
            })
            .collect::<Result<_>>()?;
        Ok(ParseOptions { boilerplate })
    }

    fn is_boilerplate(&self, block: &str) -> bool {
        self.boilerplate.iter().any(|re| re.is_match(block))
    }
}

const REQUIRED_FIELDS: [&str; 5] = ["report_id", "date", "meeting", "kind", "framework"];

fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn body_blocks(body: &str, opts: &ParseOptions) -> Vec<String> {
    let body = body.replace("\r\n", "\n").replace('\r', "\n");
    let mut blocks = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for line in body.split('\n') {
        if line.trim().is_empty() {
            if !current.is_empty() {
                blocks.push(collapse_whitespace(&current.join(" ")));
                current.clear();
            }
        } else {
            current.push(line);
        }
    }
    if !current.is_empty() {
        blocks.push(collapse_whitespace(&current.join(" ")));
    }
    blocks.retain(|b| !b.is_empty() && !opts.is_boilerplate(b));
    blocks
}

/// The body after newline and whitespace normalization and boilerplate
/// removal, blocks joined by a blank line. Paragraph texts joined the same
/// way reproduce it exactly.
pub fn normalized_body(body: &str, opts: &ParseOptions) -> String {
    body_blocks(body, opts).join("\n\n")
}

fn split_header(raw: &str) -> (&str, &str) {
    let raw = raw.strip_prefix('\u{feff}').unwrap_or(raw);
    let mut offset = 0;
    for line in raw.split_inclusive('\n') {
        if line.trim().is_empty() {
            return (&raw[..offset], &raw[offset + line.len()..]);
        }
        offset += line.len();
    }
    (raw, "")
}

/// Parses one report document. `source_name` only labels errors.
pub fn parse_report(raw: &str, source_name: &str, opts: &ParseOptions) -> Result<ParsedReport> {
    let ingest = |message: String| Error::Ingest {
        source_name: source_name.to_string(),
        message,
    };
    let (header, body) = split_header(raw);
    let mut fields: BTreeMap<String, String> = BTreeMap::new();
    for line in header.lines() {
        let Some((key, value)) = line.split_once(':') else {
            return Err(ingest(format!("malformed header line `{}`", line.trim())));
        };
        fields.insert(key.trim().to_ascii_lowercase(), value.trim().to_string());
    }
    for field in REQUIRED_FIELDS {
        if fields.get(field).is_none_or(|v| v.is_empty()) {
            return Err(ingest(format!("missing metadata field `{field}`")));
        }
    }
    let date = NaiveDate::parse_from_str(&fields["date"], "%Y-%m-%d").map_err(|e| {
        ingest(format!(
            "invalid metadata field `date` ({}): {e}",
            fields["date"]
        ))
    })?;
    let kind = match fields["kind"].to_ascii_lowercase().as_str() {
        "daily" => ReportKind::Daily,
        "summary" => ReportKind::Summary,
        other => return Err(ingest(format!("invalid metadata field `kind`: `{other}`"))),
    };

    let paragraphs: Vec<Paragraph> = body_blocks(body, opts)
        .into_iter()
        .enumerate()
        .map(|(index, text)| Paragraph {
            index,
            word_count: text.split_whitespace().count(),
            text,
        })
        .collect();
    let mut warnings = Vec::new();
    if paragraphs.is_empty() {
        warnings.push(format!("{source_name}: report body is empty"));
    }
    Ok(ParsedReport {
        report: Report {
            report_id: fields["report_id"].clone(),
            date,
            meeting: fields["meeting"].clone(),
            kind,
            framework: fields["framework"].clone(),
            paragraphs,
        },
        warnings,
    })
}

/// Reads every regular file in `dir` (sorted by file name) as a report.
pub fn load_dir(dir: &Path, opts: &ParseOptions) -> Result<(Vec<Report>, Vec<String>)> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        let hidden = path
            .file_name()
            .and_then(|n| n.to_str())
            .is_none_or(|n| n.starts_with('.'));
        if path.is_file() && !hidden {
            paths.push(path);
        }
    }
    paths.sort();

    let mut reports = Vec::with_capacity(paths.len());
    let mut warnings = Vec::new();
    let mut ids = BTreeSet::new();
    for path in paths {
        let raw = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let parsed = parse_report(&raw, &path.display().to_string(), opts)?;
        if !ids.insert(parsed.report.report_id.clone()) {
            return Err(Error::Ingest {
                source_name: path.display().to_string(),
                message: format!("duplicate report_id `{}`", parsed.report.report_id),
            });
        }
        warnings.extend(parsed.warnings);
        reports.push(parsed.report);
    }
    Ok((reports, warnings))
}

/// Keeps reports whose framework is on the allow-list (case-insensitive),
/// preserving order.
pub fn filter_corpus(reports: Vec<Report>, allow: &BTreeSet<String>) -> Vec<Report> {
    let allow: BTreeSet<String> = allow.iter().map(|f| f.to_lowercase()).collect();
    reports
        .into_iter()
        .filter(|r| allow.contains(&r.framework.to_lowercase()))
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub report_count: usize,
    pub reports_per_year: BTreeMap<i32, usize>,
    pub mean_paragraphs_per_report: f64,
    /// Pooled over all paragraphs of all reports.
    pub mean_words_per_paragraph: f64,
}

pub fn corpus_stats(reports: &[Report]) -> CorpusStats {
    if reports.is_empty() {
        return CorpusStats::default();
    }
    let mut per_year = BTreeMap::new();
    let mut paragraphs = 0usize;
    let mut words = 0usize;
    for report in reports {
        *per_year.entry(report.year()).or_insert(0) += 1;
        paragraphs += report.paragraphs.len();
        words += report
            .paragraphs
            .iter()
            .map(|p| p.word_count)
            .sum::<usize>();
    }
    CorpusStats {
        report_count: reports.len(),
        reports_per_year: per_year,
        mean_paragraphs_per_report: paragraphs as f64 / reports.len() as f64,
        mean_words_per_paragraph: if paragraphs == 0 {
            0.0
        } else {
            words as f64 / paragraphs as f64
        },
    }
}
