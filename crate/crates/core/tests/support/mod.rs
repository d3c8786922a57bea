//! Brute-force oracles and fixture helpers shared by the integration tests
//! and the acceptance target.
#![allow(dead_code)]

pub mod criteria;

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use quadnet_core::{Interaction, ParagraphRef, Party, Provenance, RelationType, TopicId};
use rand::Rng;

pub fn workspace_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn fixtures() -> PathBuf {
    workspace_root().join("fixtures")
}

/// `(report, paragraph, head, tail, relation, topic)`.
pub type Key = (String, usize, String, String, RelationType, Option<u32>);

pub fn key_of(i: &Interaction) -> Key {
    (
        i.paragraph.report_id.clone(),
        i.paragraph.paragraph_index,
        i.head.name.clone(),
        i.tail.name.clone(),
        i.relation,
        i.topic.map(|t| t.0),
    )
}

pub fn keys(items: &[Interaction]) -> BTreeSet<Key> {
    items.iter().map(key_of).collect()
}

/// Least set containing `items` and closed under the three coding rules,
/// found by applying each rule as a pointwise inference until nothing new
/// appears:
///
/// * `r(a,b)` with `r` in {Agreement, On behalf of} gives `r(b,a)`;
/// * mutual `Agreement(a,b)` and mutual `Agreement(b,c)` with `a != c`
///   give `Agreement(a,c)`, all in one paragraph and topic;
/// * `r(a,z)` and `r(b,z)` with `r` in {Support, Opposition} and `a != b`
///   give `Agreement(a,b)`, keeping the topic only when both share it.
pub fn brute_closure(items: &[Interaction]) -> BTreeSet<Key> {
    let mut set = keys(items);
    loop {
        let mut next = set.clone();
        for x in &set {
            let (p, i, a, b, r, t) = x;
            if matches!(r, RelationType::Agreement | RelationType::OnBehalfOf) {
                next.insert((p.clone(), *i, b.clone(), a.clone(), *r, *t));
            }
            for y in &set {
                let (q, j, c, d, s, u) = y;
                if (p, i) != (q, j) {
                    continue;
                }
                let agree = |h: &str, k: &str, topic: Option<u32>| {
                    set.contains(&(
                        p.clone(),
                        *i,
                        h.to_string(),
                        k.to_string(),
                        RelationType::Agreement,
                        topic,
                    ))
                };
                if *r == RelationType::Agreement
                    && *s == RelationType::Agreement
                    && t == u
                    && b == c
                    && a != d
                    && agree(b, a, *t)
                    && agree(d, c, *t)
                {
                    next.insert((
                        p.clone(),
                        *i,
                        a.clone(),
                        d.clone(),
                        RelationType::Agreement,
                        *t,
                    ));
                }
                if r == s
                    && matches!(r, RelationType::Support | RelationType::Opposition)
                    && b == d
                    && a != c
                {
                    let topic = if t == u { *t } else { None };
                    next.insert((
                        p.clone(),
                        *i,
                        a.clone(),
                        c.clone(),
                        RelationType::Agreement,
                        topic,
                    ));
                }
            }
        }
        if next.len() == set.len() {
            return set;
        }
        set = next;
    }
}

const NAMES: [&str; 6] = ["Alpha", "Bravo", "Charlie", "Delta", "Echo", "Foxtrot"];

/// A random instance with at most six entities and eight interactions over
/// two paragraphs and topics {none, 1, 2}.
pub fn random_instance(rng: &mut impl Rng) -> Vec<Interaction> {
    let entities = rng.gen_range(2..=6);
    let n = rng.gen_range(1..=8);
    (0..n)
        .map(|_| {
            let h = rng.gen_range(0..entities);
            let mut t = rng.gen_range(0..entities - 1);
            if t >= h {
                t += 1;
            }
            let relation = RelationType::ALL[rng.gen_range(0..5)];
            let topic = match rng.gen_range(0..3) {
                0 => None,
                k => Some(TopicId(k)),
            };
            Interaction::new(
                Party::in_space(NAMES[h]),
                Party::in_space(NAMES[t]),
                relation,
                topic,
                ParagraphRef::new("r", rng.gen_range(0..2)),
                Provenance::Stated,
            )
            .expect("endpoints differ")
        })
        .collect()
}

/// Precision and recall over de-duplicated lists, by linear scans.
pub fn brute_prf<T: PartialEq>(pred: &[T], gold: &[T]) -> (f64, f64) {
    let mut p: Vec<&T> = Vec::new();
    for x in pred {
        if !p.contains(&x) {
            p.push(x);
        }
    }
    let mut g: Vec<&T> = Vec::new();
    for x in gold {
        if !g.contains(&x) {
            g.push(x);
        }
    }
    let hit = p.iter().filter(|x| g.contains(x)).count() as f64;
    let precision = if p.is_empty() {
        1.0
    } else {
        hit / p.len() as f64
    };
    let recall = if g.is_empty() {
        1.0
    } else {
        hit / g.len() as f64
    };
    (precision, recall)
}

/// Accuracy and macro-F1 over gold labels from a confusion matrix, with
/// F1 written as 2TP / (2TP + FP + FN).
pub fn brute_attribute(pred: &[u8], gold: &[u8]) -> (f64, f64) {
    if gold.is_empty() {
        return (1.0, 1.0);
    }
    let mut confusion = [[0u32; 8]; 8];
    for (p, g) in pred.iter().zip(gold) {
        confusion[*g as usize][*p as usize] += 1;
    }
    let diagonal: u32 = (0..8).map(|l| confusion[l][l]).sum();
    let mut f1s = Vec::new();
    for (l, counts) in confusion.iter().enumerate() {
        let row: u32 = counts.iter().sum();
        if row == 0 {
            continue;
        }
        let col: u32 = (0..8).map(|g| confusion[g][l]).sum();
        let tp = counts[l];
        let (fp, fneg) = (col - tp, row - tp);
        f1s.push(if tp == 0 {
            0.0
        } else {
            2.0 * tp as f64 / (2 * tp + fp + fneg) as f64
        });
    }
    (
        diagonal as f64 / gold.len() as f64,
        f1s.iter().sum::<f64>() / f1s.len() as f64,
    )
}

/// Kappa from integer marginals: `(n*diag - sum(row*col)) / (n^2 - sum(row*col))`.
pub fn brute_kappa(a: &[u8], b: &[u8]) -> f64 {
    let n = a.len() as i64;
    let mut rows: BTreeMap<u8, i64> = BTreeMap::new();
    let mut cols: BTreeMap<u8, i64> = BTreeMap::new();
    let mut diagonal = 0i64;
    for (x, y) in a.iter().zip(b) {
        *rows.entry(*x).or_default() += 1;
        *cols.entry(*y).or_default() += 1;
        diagonal += i64::from(x == y);
    }
    let chance: i64 = rows
        .iter()
        .map(|(l, r)| r * cols.get(l).copied().unwrap_or(0))
        .sum();
    if chance == n * n {
        return 1.0;
    }
    (n * diagonal - chance) as f64 / (n * n - chance) as f64
}

pub type Row = (String, usize, String, String, String, Option<u32>, String);
type RowRef<'a> = (
    &'a str,
    usize,
    &'a str,
    &'a str,
    &'a str,
    Option<u32>,
    &'a str,
);

/// The annotation set expected from `annotate` on the fixture corpus and
/// replay file: `(report, paragraph, party1, party2, relation, topic, derived)`.
pub fn expected_fixture_annotations() -> BTreeSet<Row> {
    let rows: &[RowRef] = &[
        (
            "enb-1995-04-03",
            0,
            "Saudi Arabia",
            "Philippines",
            "Support",
            Some(1),
            "stated",
        ),
        (
            "enb-1995-04-03",
            0,
            "Kuwait",
            "Philippines",
            "Support",
            Some(1),
            "stated",
        ),
        (
            "enb-1995-04-03",
            0,
            "Saudi Arabia",
            "Kuwait",
            "Agreement",
            Some(1),
            "closure_derivation",
        ),
        (
            "enb-1995-04-03",
            0,
            "Kuwait",
            "Saudi Arabia",
            "Agreement",
            Some(1),
            "closure_derivation",
        ),
        (
            "enb-1995-04-03",
            0,
            "The Chair",
            "Philippines",
            "Opposition",
            Some(1),
            "stated",
        ),
        (
            "enb-1996-07-10",
            0,
            "Switzerland",
            "European Union",
            "Agreement",
            Some(3),
            "stated",
        ),
        (
            "enb-1996-07-10",
            0,
            "European Union",
            "Switzerland",
            "Agreement",
            Some(3),
            "closure_bidirectional",
        ),
        (
            "enb-1996-07-10",
            0,
            "AOSIS",
            "Switzerland",
            "Support",
            Some(3),
            "stated",
        ),
        (
            "enb-2001-11-05",
            0,
            "Australia",
            "New Zealand",
            "Agreement",
            Some(3),
            "stated",
        ),
        (
            "enb-2001-11-05",
            0,
            "New Zealand",
            "Australia",
            "Agreement",
            Some(3),
            "stated",
        ),
        (
            "enb-2001-11-05",
            0,
            "New Zealand",
            "Iceland",
            "Agreement",
            Some(3),
            "stated",
        ),
        (
            "enb-2001-11-05",
            0,
            "Iceland",
            "New Zealand",
            "Agreement",
            Some(3),
            "stated",
        ),
        (
            "enb-2001-11-05",
            0,
            "Australia",
            "Iceland",
            "Agreement",
            Some(3),
            "closure_transitive",
        ),
        (
            "enb-2001-11-05",
            0,
            "Iceland",
            "Australia",
            "Agreement",
            Some(3),
            "closure_transitive",
        ),
        (
            "enb-2001-11-05",
            1,
            "European Union",
            "Türkiye",
            "Support",
            None,
            "stated",
        ),
        (
            "enb-2016-11-10",
            0,
            "Saudi Arabia",
            "European Union",
            "Opposition",
            Some(5),
            "stated",
        ),
        (
            "enb-2016-11-10",
            0,
            "Kuwait",
            "European Union",
            "Opposition",
            Some(5),
            "stated",
        ),
        (
            "enb-2016-11-10",
            0,
            "Egypt",
            "European Union",
            "Opposition",
            Some(5),
            "stated",
        ),
        (
            "enb-2016-11-10",
            0,
            "Saudi Arabia",
            "Kuwait",
            "Agreement",
            Some(5),
            "closure_derivation",
        ),
        (
            "enb-2016-11-10",
            0,
            "Kuwait",
            "Saudi Arabia",
            "Agreement",
            Some(5),
            "closure_derivation",
        ),
        (
            "enb-2016-11-10",
            0,
            "Saudi Arabia",
            "Egypt",
            "Agreement",
            Some(5),
            "closure_derivation",
        ),
        (
            "enb-2016-11-10",
            0,
            "Egypt",
            "Saudi Arabia",
            "Agreement",
            Some(5),
            "closure_derivation",
        ),
        (
            "enb-2016-11-10",
            0,
            "Kuwait",
            "Egypt",
            "Agreement",
            Some(5),
            "closure_derivation",
        ),
        (
            "enb-2016-11-10",
            0,
            "Egypt",
            "Kuwait",
            "Agreement",
            Some(5),
            "closure_derivation",
        ),
        (
            "enb-2021-11-03",
            0,
            "Bhutan",
            "LDCs",
            "On behalf of",
            Some(9),
            "stated",
        ),
        (
            "enb-2021-11-03",
            0,
            "LDCs",
            "Bhutan",
            "On behalf of",
            Some(9),
            "closure_bidirectional",
        ),
    ];
    rows.iter()
        .map(|(r, i, a, b, rel, t, d)| {
            (
                r.to_string(),
                *i,
                a.to_string(),
                b.to_string(),
                rel.to_string(),
                *t,
                d.to_string(),
            )
        })
        .collect()
}
