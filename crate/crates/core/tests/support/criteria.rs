//! One check per acceptance criterion. Each returns a short summary on
//! success and a description of the first discrepancy on failure.

use std::collections::BTreeSet;
use std::time::Instant;

use quadnet_core::corpus::{self, ParseOptions, Report, ReportKind};
use quadnet_core::dataset::{self, DatasetRow, LongitudinalDataset};
use quadnet_core::eval::{
    attribute_metrics, cohen_kappa, quote_to_paragraph, triplet_prf, QuoteMatch,
};
use quadnet_core::gateway::{Backend, Gateway, GenerationConfig, Recorder, ReplayStore};
use quadnet_core::rules::{
    audit_compliance, close_in_order, close_to_fixpoint, Rule, RuleConfig, DEFAULT_MAX_ROUNDS,
};
use quadnet_core::topics::{self, TopicHistory, TopicPrompts, TopicSpace};
use quadnet_core::{Interaction, ParagraphRef, Provenance, RelationType, TopicId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    brute_attribute, brute_closure, brute_kappa, brute_prf, fixtures, keys, random_instance,
};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

const ORDERS: [[Rule; 3]; 6] = [
    [Rule::Bidirectionality, Rule::Transitivity, Rule::Derivation],
    [Rule::Bidirectionality, Rule::Derivation, Rule::Transitivity],
    [Rule::Transitivity, Rule::Bidirectionality, Rule::Derivation],
    [Rule::Transitivity, Rule::Derivation, Rule::Bidirectionality],
    [Rule::Derivation, Rule::Bidirectionality, Rule::Transitivity],
    [Rule::Derivation, Rule::Transitivity, Rule::Bidirectionality],
];

pub fn closure_oracle(instances: usize, seed: u64) -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut relations_seen = BTreeSet::new();
    let mut grown = 0;
    for n in 0..instances {
        let input = random_instance(&mut rng);
        relations_seen.extend(input.iter().map(|i| i.relation));
        let closed = close_to_fixpoint(&input, &RuleConfig::all()).map_err(|e| e.to_string())?;
        let expected = brute_closure(&input);
        ensure(keys(&closed) == expected, || {
            format!(
                "instance {n}: closure {:?} differs from oracle {:?} for input {:?}",
                keys(&closed),
                expected,
                keys(&input)
            )
        })?;
        grown += usize::from(closed.len() > keys(&input).len());
        let again = close_to_fixpoint(&closed, &RuleConfig::all()).map_err(|e| e.to_string())?;
        ensure(again == closed, || {
            format!("instance {n}: closing twice changed the set")
        })?;
        for order in &ORDERS {
            let permuted =
                close_in_order(&input, order, DEFAULT_MAX_ROUNDS).map_err(|e| e.to_string())?;
            ensure(keys(&permuted) == expected, || {
                format!("instance {n}: order {order:?} gives a different set")
            })?;
        }
        let audit = audit_compliance(&closed);
        for rule in Rule::ALL {
            let c = audit.get(rule);
            ensure(c.satisfied == c.obligated, || {
                format!("instance {n}: closed set violates {}", rule.as_str())
            })?;
        }
    }
    ensure(relations_seen.len() == RelationType::ALL.len(), || {
        "not every relation type was generated".into()
    })?;
    let elapsed = start.elapsed();
    ensure(elapsed.as_secs_f64() < 10.0, || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{instances} instances ({grown} grew under closure), 6 rule orders, {elapsed:.2?}"
    ))
}

fn stated(h: &str, t: &str, r: RelationType) -> Interaction {
    Interaction::stated(h, t, r, ParagraphRef::new("enb", 0))
}

fn triples(items: &[Interaction]) -> BTreeSet<(String, String, RelationType, Provenance)> {
    items
        .iter()
        .map(|i| {
            (
                i.head.name.clone(),
                i.tail.name.clone(),
                i.relation,
                i.derived,
            )
        })
        .collect()
}

fn closed_fixture(
    input: &[Interaction],
    expected: &[(&str, &str, RelationType, Provenance)],
) -> Result<(), String> {
    let closed = close_to_fixpoint(input, &RuleConfig::all()).map_err(|e| e.to_string())?;
    let want: BTreeSet<_> = expected
        .iter()
        .map(|(h, t, r, p)| (h.to_string(), t.to_string(), *r, *p))
        .collect();
    ensure(triples(&closed) == want, || {
        format!("got {:?}", triples(&closed))
    })?;
    let audit = audit_compliance(&closed);
    for rule in Rule::ALL {
        ensure(audit.get(rule).fraction() == 1.0, || {
            format!("{} below 100%", rule.as_str())
        })?;
    }
    Ok(())
}

pub fn coding_rule_examples() -> Check {
    use Provenance::*;
    use RelationType::*;
    closed_fixture(
        &[stated("Samoa", "European Union", Agreement)],
        &[
            ("Samoa", "European Union", Agreement, Stated),
            ("European Union", "Samoa", Agreement, ClosureBidirectional),
        ],
    )
    .map_err(|e| format!("Samoa/EU: {e}"))?;
    closed_fixture(
        &[
            stated("Australia", "New Zealand", Agreement),
            stated("New Zealand", "Iceland", Agreement),
        ],
        &[
            ("Australia", "New Zealand", Agreement, Stated),
            ("Australia", "Iceland", Agreement, ClosureTransitive),
            ("New Zealand", "Australia", Agreement, ClosureBidirectional),
            ("New Zealand", "Iceland", Agreement, Stated),
            ("Iceland", "Australia", Agreement, ClosureTransitive),
            ("Iceland", "New Zealand", Agreement, ClosureBidirectional),
        ],
    )
    .map_err(|e| format!("Australia/New Zealand/Iceland: {e}"))?;
    closed_fixture(
        &[
            stated("Saudi Arabia", "Philippines", Support),
            stated("Kuwait", "Philippines", Support),
        ],
        &[
            ("Saudi Arabia", "Philippines", Support, Stated),
            ("Kuwait", "Philippines", Support, Stated),
            ("Saudi Arabia", "Kuwait", Agreement, ClosureDerivation),
            ("Kuwait", "Saudi Arabia", Agreement, ClosureDerivation),
        ],
    )
    .map_err(|e| format!("Saudi Arabia/Kuwait: {e}"))?;
    Ok("Samoa/EU 2, Australia/New Zealand/Iceland 6, Saudi Arabia/Kuwait 4; audits at 100%".into())
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12
}

pub fn metric_oracles(instances: usize, seed: u64) -> Check {
    let t = |h: u8, r: u8| (h, r);
    let prf = triplet_prf(
        &[t(1, 0), t(2, 0), t(3, 0), t(4, 0)],
        &[t(1, 0), t(2, 0), t(5, 0)],
    );
    ensure(prf.precision == 0.5 && prf.recall == 2.0 / 3.0, || {
        format!("hand PRF {prf:?}")
    })?;
    let (a, b) = ('A', 'B');
    let attr = attribute_metrics(&[a, b, b, b], &[a, a, b, b]).map_err(|e| e.to_string())?;
    ensure(attr.accuracy == 0.75, || {
        format!("hand accuracy {}", attr.accuracy)
    })?;
    ensure(
        attr.per_label[&a].f1 == 2.0 / 3.0 && attr.per_label[&b].f1 == 0.8,
        || "hand per-label F1".into(),
    )?;
    ensure(format!("{:.4}", attr.macro_f1) == "0.7333", || {
        format!("hand macro-F1 {}", attr.macro_f1)
    })?;
    let kappa =
        cohen_kappa(&['y', 'y', 'n', 'n'], &['y', 'n', 'n', 'n']).map_err(|e| e.to_string())?;
    ensure(kappa == 0.5, || format!("hand kappa {kappa}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for n in 0..instances {
        let len = |rng: &mut ChaCha8Rng| rng.gen_range(0..7);
        let item = |rng: &mut ChaCha8Rng| (rng.gen_range(0..3u8), rng.gen_range(0..3u8));
        let pred: Vec<(u8, u8)> = (0..len(&mut rng)).map(|_| item(&mut rng)).collect();
        let gold: Vec<(u8, u8)> = (0..len(&mut rng)).map(|_| item(&mut rng)).collect();
        let got = triplet_prf(&pred, &gold);
        let (p, r) = brute_prf(&pred, &gold);
        ensure(close(got.precision, p) && close(got.recall, r), || {
            format!("PRF instance {n}: {got:?} vs ({p}, {r})")
        })?;

        let size = rng.gen_range(0..9);
        let labels = rng.gen_range(1..5u8);
        let gold: Vec<u8> = (0..size).map(|_| rng.gen_range(0..labels)).collect();
        let pred: Vec<u8> = (0..size).map(|_| rng.gen_range(0..labels)).collect();
        let got = attribute_metrics(&pred, &gold).map_err(|e| e.to_string())?;
        let (acc, macro_f1) = brute_attribute(&pred, &gold);
        worst = worst.max((got.macro_f1 - macro_f1).abs());
        ensure(
            close(got.accuracy, acc) && close(got.macro_f1, macro_f1),
            || {
                format!(
                    "attribute instance {n}: ({}, {}) vs ({acc}, {macro_f1})",
                    got.accuracy, got.macro_f1
                )
            },
        )?;

        if size > 0 {
            let k = cohen_kappa(&gold, &pred).map_err(|e| e.to_string())?;
            let want = brute_kappa(&gold, &pred);
            worst = worst.max((k - want).abs());
            ensure(close(k, want), || {
                format!("kappa instance {n}: {k} vs {want}")
            })?;
        }
    }
    Ok(format!(
        "hand examples exact; {instances} random instances, max deviation {worst:e}"
    ))
}

pub fn quote_matching() -> Check {
    let paragraphs = [
        "The Philippines, supported by Saudi Arabia and Kuwait, asked for more time.",
        "one two three four five six seven eight nine ten",
        "The meeting adjourned at 6pm.",
    ];
    let verbatim =
        quote_to_paragraph(paragraphs[0], &paragraphs, 0.9).map_err(|e| e.to_string())?;
    ensure(verbatim == QuoteMatch::Unique(0), || {
        format!("verbatim quote gave {verbatim:?}")
    })?;
    let nine_of_ten = "one two three four five six seven eight nine eleven";
    let m = quote_to_paragraph(nine_of_ten, &paragraphs, 0.9).map_err(|e| e.to_string())?;
    ensure(m == QuoteMatch::NoMatch, || {
        format!("9/10 overlap gave {m:?}")
    })?;
    let m = quote_to_paragraph(nine_of_ten, &paragraphs, 0.89).map_err(|e| e.to_string())?;
    ensure(m == QuoteMatch::Unique(1), || {
        format!("9/10 overlap below 0.9 gave {m:?}")
    })?;
    Ok("verbatim quote maps to its paragraph; 9/10 overlap is no match at 0.9".into())
}

struct ToyEmbeddings;

impl Backend for ToyEmbeddings {
    fn complete(&self, prompt: &str, _: &GenerationConfig) -> quadnet_core::Result<String> {
        let words = prompt
            .split_once("Topic words: ")
            .map(|(_, w)| w)
            .unwrap_or("");
        let first = words.split([';', '\n']).next().unwrap_or("").trim();
        Ok(serde_json::json!({"name": format!("About {first}"), "description": format!("Topics near {first}.")}).to_string())
    }

    fn embed(&self, texts: &[String]) -> quadnet_core::Result<Vec<Vec<f64>>> {
        texts
            .iter()
            .map(|t| {
                let angle: f64 = t.trim_start_matches('w').parse().map_err(|_| {
                    quadnet_core::Error::Internal(format!("no toy vector for `{t}`"))
                })?;
                let r = angle.to_radians();
                Ok(vec![r.cos(), r.sin()])
            })
            .collect()
    }
}

/// Words named by their angle in degrees on the unit circle.
const TOY_WORDS: [&str; 7] = ["w0", "w95", "w12", "w80", "w25", "w100", "w7"];

fn sse(points: &[Vec<f64>], members: &[usize]) -> f64 {
    if members.is_empty() {
        return 0.0;
    }
    let dim = points[0].len();
    let mean: Vec<f64> = (0..dim)
        .map(|d| members.iter().map(|&i| points[i][d]).sum::<f64>() / members.len() as f64)
        .collect();
    members
        .iter()
        .map(|&i| {
            points[i]
                .iter()
                .zip(&mean)
                .map(|(x, m)| (x - m).powi(2))
                .sum::<f64>()
        })
        .sum()
}

/// Partition of `points` into two non-empty groups with least within-group
/// sum of squares, by enumerating every bipartition.
pub fn optimal_two_clustering(points: &[Vec<f64>]) -> BTreeSet<BTreeSet<usize>> {
    let n = points.len();
    let mut best: Option<(f64, BTreeSet<BTreeSet<usize>>)> = None;
    for mask in 1..(1u32 << (n - 1)) {
        let a: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
        let b: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 0).collect();
        let cost = sse(points, &a) + sse(points, &b);
        if best.as_ref().is_none_or(|(c, _)| cost < *c) {
            let parts = [a, b]
                .into_iter()
                .map(|v| v.into_iter().collect())
                .collect();
            best = Some((cost, parts));
        }
    }
    best.expect("at least two points").1
}

fn stage_reports(from: i32, to: i32) -> Result<Vec<Report>, String> {
    let (reports, _) = corpus::load_dir(&fixtures().join("corpus"), &ParseOptions::default())
        .map_err(|e| e.to_string())?;
    Ok(
        corpus::filter_corpus(reports, &BTreeSet::from(["UNFCCC".to_string()]))
            .into_iter()
            .filter(|r| r.kind == ReportKind::Summary && (from..=to).contains(&r.year()))
            .collect(),
    )
}

fn staged_history(gateway: &Gateway) -> Result<(TopicHistory, Vec<usize>), String> {
    let prompts = TopicPrompts::default();
    let err = |e: quadnet_core::Error| e.to_string();
    let (words, _) =
        topics::extract_topic_words(&stage_reports(1995, 2013)?, gateway, &prompts).map_err(err)?;
    let base = topics::build_base_space(&words, 3, 7, gateway, &prompts).map_err(err)?;
    let mut history = TopicHistory::new(base.value);
    let mut created = Vec::new();
    for (from, to) in [(2014, 2018), (2019, 2024)] {
        let stage = topics::advance_stage(
            history.latest(),
            &stage_reports(from, to)?,
            gateway,
            &prompts,
        )
        .map_err(err)?;
        ensure(stage.errors.is_empty(), || {
            format!("stage errors {:?}", stage.errors)
        })?;
        created.push(stage.space.topics.len() - history.latest().topics.len());
        history.push(stage.space).map_err(err)?;
    }
    Ok((history, created))
}

pub fn topic_space() -> Check {
    let err = |e: quadnet_core::Error| e.to_string();
    let prompts = TopicPrompts::default();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let replay = dir.path().join("toy.jsonl");
    let words: Vec<String> = TOY_WORDS.iter().map(|w| w.to_string()).collect();
    let recording = Gateway::new(Recorder::new(ToyEmbeddings, &replay).map_err(err)?, 1);
    let first = topics::build_base_space(&words, 2, 11, &recording, &prompts)
        .map_err(err)?
        .value;
    drop(recording);

    let points = ToyEmbeddings.embed(&words).map_err(err)?;
    let optimum = optimal_two_clustering(&points);
    let found: BTreeSet<BTreeSet<usize>> = first
        .topics
        .iter()
        .map(|t| {
            t.words()
                .map(|w| words.iter().position(|x| x == w).expect("known word"))
                .collect()
        })
        .collect();
    ensure(found == optimum, || {
        format!("k-means found {found:?}, optimum is {optimum:?}")
    })?;

    let rebuild = || -> Result<TopicSpace, String> {
        let gw = Gateway::replay(ReplayStore::load(&replay).map_err(err)?);
        Ok(topics::build_base_space(&words, 2, 11, &gw, &prompts)
            .map_err(err)?
            .value)
    };
    let (a, b) = (rebuild()?, rebuild()?);
    let json = |s: &TopicSpace| TopicHistory::new(s.clone()).to_json();
    ensure(json(&a) == json(&b), || {
        "toy rebuilds from replay differ".into()
    })?;
    ensure(json(&a) == json(&first), || {
        format!(
            "replayed toy space differs from the recorded one:\n{}\n{}",
            json(&a),
            json(&first)
        )
    })?;

    let toy = Gateway::new(ToyEmbeddings, 1);
    let mut space = first.clone();
    let duplicate = topics::assign_or_create("w12", &mut space, &toy, &prompts)
        .map_err(err)?
        .value;
    let home = first
        .topics
        .iter()
        .find(|t| t.words().any(|w| w == "w12"))
        .expect("w12 placed")
        .topic_id;
    ensure(duplicate == (home, false), || {
        format!("duplicate word gave {duplicate:?}")
    })?;
    let orthogonal = topics::assign_or_create("w225", &mut space, &toy, &prompts)
        .map_err(err)?
        .value;
    ensure(orthogonal == (TopicId(3), true), || {
        format!("orthogonal word gave {orthogonal:?}")
    })?;

    let staged = || -> Result<(TopicHistory, Vec<usize>), String> {
        let store = ReplayStore::load(&fixtures().join("replay.jsonl")).map_err(err)?;
        staged_history(&Gateway::replay(store))
    };
    let (h1, created) = staged()?;
    ensure(created == vec![3, 3], || {
        format!("stages created {created:?} topics")
    })?;
    let (h2, _) = staged()?;
    ensure(h1.to_json() == h2.to_json(), || {
        "staged histories differ between runs".into()
    })?;
    let stored =
        std::fs::read_to_string(fixtures().join("topics.json")).map_err(|e| e.to_string())?;
    ensure(h1.to_json() == stored, || {
        "staged history differs from fixtures/topics.json".into()
    })?;
    Ok("optimal 2-clustering recovered; absorb and create behave; stages add +3, +3; runs byte-identical".into())
}

fn row(
    date: &str,
    p1: &str,
    p2: &str,
    relation: RelationType,
    topic: Option<u32>,
    derived: Provenance,
) -> DatasetRow {
    DatasetRow {
        date: date.parse().expect("valid date"),
        meeting: "COP".into(),
        report_id: format!("enb-{date}"),
        paragraph_index: 0,
        party1: p1.into(),
        party2: p2.into(),
        relation,
        topic: topic.map(TopicId),
        derived,
    }
}

/// Ten interactions over two years with known tallies.
pub fn ten_interaction_dataset() -> LongitudinalDataset {
    use Provenance::*;
    use RelationType::*;
    LongitudinalDataset {
        topic_space_version: Some(1),
        run_ids: vec!["run-test".into()],
        rows: vec![
            row("2001-01-01", "A", "B", Agreement, Some(1), Stated),
            row(
                "2001-01-01",
                "B",
                "A",
                Agreement,
                Some(1),
                ClosureBidirectional,
            ),
            row("2001-01-01", "C", "A", Support, Some(2), Stated),
            row("2001-01-01", "D", "A", Support, Some(2), Stated),
            row(
                "2001-01-01",
                "C",
                "D",
                Agreement,
                Some(2),
                ClosureDerivation,
            ),
            row(
                "2001-01-01",
                "D",
                "C",
                Agreement,
                Some(2),
                ClosureDerivation,
            ),
            row("2002-01-01", "A", "C", Opposition, None, Stated),
            row("2002-01-01", "B", "C", DelayingProposal, Some(1), Stated),
            row("2002-01-01", "E", "A", OnBehalfOf, Some(3), Stated),
            row(
                "2002-01-01",
                "A",
                "E",
                OnBehalfOf,
                Some(3),
                ClosureBidirectional,
            ),
        ],
    }
}

fn report(year: i32, n: usize) -> Report {
    Report {
        report_id: format!("enb-{year}-{n}"),
        date: format!("{year}-06-0{}", n + 1).parse().expect("valid date"),
        meeting: "COP".into(),
        kind: ReportKind::Daily,
        framework: "UNFCCC".into(),
        paragraphs: Vec::new(),
    }
}

pub fn statistics() -> Check {
    ensure(
        dataset::pearson(&[1.0, 2.0, 3.0, 4.0], &[2.0, 4.0, 6.0, 8.0]) == Some(1.0),
        || "r = 1 fixture".into(),
    )?;
    ensure(
        dataset::pearson(&[1.0, 2.0, 3.0, 4.0], &[8.0, 6.0, 4.0, 2.0]) == Some(-1.0),
        || "r = -1 fixture".into(),
    )?;
    ensure(dataset::pearson(&[1.0, 2.0], &[3.0, 3.0]).is_none(), || {
        "constant series".into()
    })?;

    let ds = ten_interaction_dataset();
    let reports: Vec<Report> = vec![report(2001, 0), report(2002, 0), report(2002, 1)];
    let yearly = dataset::yearly_distribution(&ds, &reports);
    let counts: Vec<(i32, usize, usize)> = yearly
        .years
        .iter()
        .map(|y| (y.year, y.reports, y.interactions))
        .collect();
    ensure(counts == vec![(2001, 1, 6), (2002, 2, 4)], || {
        format!("yearly counts {counts:?}")
    })?;
    ensure(yearly.correlation == Some(-1.0), || {
        format!("two-year correlation {:?}", yearly.correlation)
    })?;

    let degrees = dataset::activity_degrees(&ds);
    let tally: Vec<(&str, usize, usize)> = degrees
        .iter()
        .map(|d| (d.entity.as_str(), d.out_degree, d.in_degree))
        .collect();
    let want = vec![
        ("A", 3, 4),
        ("C", 2, 3),
        ("B", 2, 1),
        ("D", 2, 1),
        ("E", 1, 1),
    ];
    ensure(tally == want, || format!("degrees {tally:?}"))?;
    let outs: usize = degrees.iter().map(|d| d.out_degree).sum();
    let ins: usize = degrees.iter().map(|d| d.in_degree).sum();
    ensure(outs == 10 && ins == 10, || {
        format!("degree sums {outs}/{ins}")
    })?;

    let freq = dataset::relation_frequencies(&ds);
    use RelationType::*;
    let y1: Vec<usize> = RelationType::ALL.iter().map(|r| freq[&2001][r]).collect();
    let y2: Vec<usize> = RelationType::ALL.iter().map(|r| freq[&2002][r]).collect();
    let order = RelationType::ALL;
    let expect = |pairs: &[(RelationType, usize)]| -> Vec<usize> {
        order
            .iter()
            .map(|r| pairs.iter().find(|(x, _)| x == r).map_or(0, |(_, n)| *n))
            .collect()
    };
    ensure(y1 == expect(&[(Agreement, 4), (Support, 2)]), || {
        format!("2001 relations {y1:?}")
    })?;
    ensure(
        y2 == expect(&[(Opposition, 1), (DelayingProposal, 1), (OnBehalfOf, 2)]),
        || format!("2002 relations {y2:?}"),
    )?;

    let topics = dataset::topic_distribution(&ds);
    let by: Vec<(u32, usize)> = topics.by_topic.iter().map(|(t, n)| (t.0, *n)).collect();
    ensure(
        by == vec![(1, 3), (2, 4), (3, 2)] && topics.no_topic == 1,
        || format!("topics {by:?} / {}", topics.no_topic),
    )?;

    let stated = ds.stated_only();
    ensure(stated.len() == 6, || {
        format!("stated rows {}", stated.len())
    })?;
    Ok("r = 1.0 and -1.0; degree, relation and topic tallies match; degree sums equal 10".into())
}
