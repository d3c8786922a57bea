//! The compiled longitudinal dataset, its CSV and JSONL exports, and
//! descriptive statistics over it.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::corpus::Report;
use crate::error::{Error, Result};
use crate::manifest::write_atomic;
use crate::model::{Provenance, RelationType, TopicId};
use crate::pipeline::AnnotationRecord;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRow {
    pub date: NaiveDate,
    pub meeting: String,
    pub report_id: String,
    pub paragraph_index: usize,
    pub party1: String,
    pub party2: String,
    pub relation: RelationType,
    pub topic: Option<TopicId>,
    pub derived: Provenance,
}

impl DatasetRow {
    fn sort_key(&self) -> impl Ord + '_ {
        (
            self.date,
            &self.report_id,
            self.paragraph_index,
            &self.party1,
            &self.party2,
            self.relation,
            self.topic,
            self.derived,
        )
    }

    fn identity(&self) -> impl Ord + '_ {
        (
            &self.report_id,
            self.paragraph_index,
            &self.party1,
            &self.party2,
            self.relation,
            self.topic,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LongitudinalDataset {
    pub topic_space_version: Option<u32>,
    pub run_ids: Vec<String>,
    pub rows: Vec<DatasetRow>,
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonlHeader {
    format: String,
    topic_space_version: Option<u32>,
    run_ids: Vec<String>,
    rows: usize,
}

const JSONL_FORMAT: &str = "quadnet-dataset/1";

impl LongitudinalDataset {
    /// Joins annotation records with report dates and meetings, removes
    /// duplicates (keeping the most direct provenance) and sorts rows by
    /// date, report, paragraph, parties and relation. Records naming a party
    /// outside the entity space are left out unless `include_out_of_space`.
    pub fn compile(
        records: &[AnnotationRecord],
        reports: &[Report],
        topic_space_version: Option<u32>,
        include_out_of_space: bool,
    ) -> Result<Self> {
        let by_id: BTreeMap<&str, &Report> =
            reports.iter().map(|r| (r.report_id.as_str(), r)).collect();
        let mut rows = Vec::new();
        let mut run_ids = BTreeSet::new();
        for rec in records {
            if !include_out_of_space
                && (rec.out_of_space_flags.party1 || rec.out_of_space_flags.party2)
            {
                continue;
            }
            let report = by_id.get(rec.report_id.as_str()).ok_or_else(|| {
                Error::Validation(format!(
                    "annotation refers to unknown report `{}`",
                    rec.report_id
                ))
            })?;
            run_ids.insert(rec.run_id.clone());
            rows.push(DatasetRow {
                date: report.date,
                meeting: report.meeting.clone(),
                report_id: rec.report_id.clone(),
                paragraph_index: rec.paragraph_index,
                party1: rec.party1.clone(),
                party2: rec.party2.clone(),
                relation: rec.relation,
                topic: rec.topic,
                derived: rec.derived,
            });
        }
        rows.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
        rows.dedup_by(|later, kept| later.identity() == kept.identity());
        Ok(LongitudinalDataset {
            topic_space_version,
            run_ids: run_ids.into_iter().collect(),
            rows,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn stated_only(&self) -> Self {
        LongitudinalDataset {
            rows: self
                .rows
                .iter()
                .filter(|r| r.derived == Provenance::Stated)
                .cloned()
                .collect(),
            ..self.clone()
        }
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "date", "meeting", "party1", "party2", "relation", "topic", "derived",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.date.to_string(),
                r.meeting.clone(),
                r.party1.clone(),
                r.party2.clone(),
                r.relation.label().to_string(),
                r.topic.map(|t| t.to_string()).unwrap_or_default(),
                r.derived.as_str().to_string(),
            ])?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Internal(format!("csv flush: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::Internal(e.to_string()))
    }

    pub fn to_jsonl(&self) -> String {
        let header = JsonlHeader {
            format: JSONL_FORMAT.to_string(),
            topic_space_version: self.topic_space_version,
            run_ids: self.run_ids.clone(),
            rows: self.rows.len(),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&serde_json::to_string(r).expect("row serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines
            .next()
            .ok_or_else(|| Error::Validation("empty dataset file".into()))?;
        let header: JsonlHeader = serde_json::from_str(first)
            .map_err(|e| Error::Validation(format!("dataset header: {e}")))?;
        if header.format != JSONL_FORMAT {
            return Err(Error::Validation(format!(
                "unsupported dataset format `{}`",
                header.format
            )));
        }
        let rows = lines
            .map(|(n, l)| {
                serde_json::from_str(l)
                    .map_err(|e| Error::Validation(format!("dataset line {}: {e}", n + 1)))
            })
            .collect::<Result<Vec<DatasetRow>>>()?;
        if rows.len() != header.rows {
            return Err(Error::Validation(format!(
                "header announces {} rows, file has {}",
                header.rows,
                rows.len()
            )));
        }
        Ok(LongitudinalDataset {
            topic_space_version: header.topic_space_version,
            run_ids: header.run_ids,
            rows,
        })
    }

    pub fn load_jsonl(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(&text)
    }

    pub fn export(&self, path: &Path, format: ExportFormat) -> Result<()> {
        let body = match format {
            ExportFormat::Csv => self.to_csv()?,
            ExportFormat::Jsonl => self.to_jsonl(),
        };
        write_atomic(path, body.as_bytes())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportFormat {
    Csv,
    Jsonl,
}

impl std::str::FromStr for ExportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ExportFormat::Csv),
            "jsonl" => Ok(ExportFormat::Jsonl),
            other => Err(Error::invalid(format!("unknown export format `{other}`"))),
        }
    }
}

/// Pearson correlation, or `None` with fewer than two points or a constant
/// series.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YearCount {
    pub year: i32,
    pub reports: usize,
    pub interactions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YearlyDistribution {
    pub years: Vec<YearCount>,
    /// Correlation between yearly report and interaction counts; `None`
    /// when it is undefined.
    pub correlation: Option<f64>,
}

/// Yearly report and interaction counts over the union of years seen in
/// either input, with their correlation.
pub fn yearly_distribution(
    dataset: &LongitudinalDataset,
    reports: &[Report],
) -> YearlyDistribution {
    let mut counts: BTreeMap<i32, (usize, usize)> = BTreeMap::new();
    for r in reports {
        counts.entry(r.year()).or_default().0 += 1;
    }
    for row in &dataset.rows {
        counts.entry(row.date.year()).or_default().1 += 1;
    }
    let years: Vec<YearCount> = counts
        .into_iter()
        .map(|(year, (reports, interactions))| YearCount {
            year,
            reports,
            interactions,
        })
        .collect();
    let xs: Vec<f64> = years.iter().map(|y| y.reports as f64).collect();
    let ys: Vec<f64> = years.iter().map(|y| y.interactions as f64).collect();
    YearlyDistribution {
        correlation: pearson(&xs, &ys),
        years,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Degree {
    pub entity: String,
    pub out_degree: usize,
    pub in_degree: usize,
}

/// Sender and recipient counts per entity, most active senders first.
pub fn activity_degrees(dataset: &LongitudinalDataset) -> Vec<Degree> {
    let mut tally: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for row in &dataset.rows {
        tally.entry(&row.party1).or_default().0 += 1;
        tally.entry(&row.party2).or_default().1 += 1;
    }
    let mut out: Vec<Degree> = tally
        .into_iter()
        .map(|(entity, (o, i))| Degree {
            entity: entity.to_string(),
            out_degree: o,
            in_degree: i,
        })
        .collect();
    out.sort_by(|a, b| {
        b.out_degree
            .cmp(&a.out_degree)
            .then(b.in_degree.cmp(&a.in_degree))
            .then(a.entity.cmp(&b.entity))
    });
    out
}

/// Per-year counts of every relation type, zero-filled.
pub fn relation_frequencies(
    dataset: &LongitudinalDataset,
) -> BTreeMap<i32, BTreeMap<RelationType, usize>> {
    let mut out: BTreeMap<i32, BTreeMap<RelationType, usize>> = BTreeMap::new();
    for row in &dataset.rows {
        let year = out
            .entry(row.date.year())
            .or_insert_with(|| RelationType::ALL.iter().map(|r| (*r, 0)).collect());
        *year.get_mut(&row.relation).expect("zero-filled") += 1;
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicCounts {
    pub by_topic: BTreeMap<TopicId, usize>,
    pub no_topic: usize,
}

impl TopicCounts {
    pub fn total(&self) -> usize {
        self.by_topic.values().sum::<usize>() + self.no_topic
    }

    fn add(&mut self, topic: Option<TopicId>) {
        match topic {
            Some(t) => *self.by_topic.entry(t).or_default() += 1,
            None => self.no_topic += 1,
        }
    }
}

pub fn topic_distribution(dataset: &LongitudinalDataset) -> TopicCounts {
    let mut counts = TopicCounts::default();
    dataset.rows.iter().for_each(|r| counts.add(r.topic));
    counts
}

pub fn topic_distribution_by_year(dataset: &LongitudinalDataset) -> BTreeMap<i32, TopicCounts> {
    let mut out: BTreeMap<i32, TopicCounts> = BTreeMap::new();
    for r in &dataset.rows {
        out.entry(r.date.year()).or_default().add(r.topic);
    }
    out
}
