//! Multi-interaction coding rules: bidirectionality, transitivity of
//! agreement, and derivation of agreement among co-supporters/co-opposers.
//!
//! Every rule only ever adds interactions, never looks across paragraphs,
//! and is monotone, so applying the enabled rules until nothing changes
//! reaches the same set whatever the order.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    Interaction, InteractionKey, ParagraphRef, Party, Provenance, RelationType, TopicId,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    Bidirectionality,
    Transitivity,
    Derivation,
}

impl Rule {
    pub const ALL: [Rule; 3] = [Rule::Bidirectionality, Rule::Transitivity, Rule::Derivation];

    pub fn as_str(self) -> &'static str {
        match self {
            Rule::Bidirectionality => "bidirectionality",
            Rule::Transitivity => "transitivity",
            Rule::Derivation => "derivation",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Rule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Rule::ALL
            .into_iter()
            .find(|r| r.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::invalid(format!("unknown rule `{s}`")))
    }
}

pub const DEFAULT_MAX_ROUNDS: usize = 10;

/// Which rules run, and the round cap for fixpoint iteration. Scope is
/// always a single paragraph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleConfig {
    pub enabled: BTreeSet<Rule>,
    pub max_rounds: usize,
}

impl Default for RuleConfig {
    fn default() -> Self {
        RuleConfig::all()
    }
}

impl RuleConfig {
    pub fn all() -> Self {
        RuleConfig::with(Rule::ALL)
    }

    pub fn none() -> Self {
        RuleConfig::with([])
    }

    pub fn with(rules: impl IntoIterator<Item = Rule>) -> Self {
        RuleConfig {
            enabled: rules.into_iter().collect(),
            max_rounds: DEFAULT_MAX_ROUNDS,
        }
    }

    pub fn is_enabled(&self, rule: Rule) -> bool {
        self.enabled.contains(&rule)
    }
}

type Set = BTreeMap<InteractionKey, Interaction>;

fn to_set(items: &[Interaction]) -> Set {
    crate::model::dedupe(items.iter().cloned())
        .into_iter()
        .map(|i| (i.key(), i))
        .collect()
}

fn parties(set: &Set) -> BTreeMap<&str, &Party> {
    let mut out = BTreeMap::new();
    for i in set.values() {
        out.insert(i.head.name.as_str(), &i.head);
        out.insert(i.tail.name.as_str(), &i.tail);
    }
    out
}

fn agreement(
    head: &Party,
    tail: &Party,
    topic: Option<TopicId>,
    paragraph: &ParagraphRef,
    derived: Provenance,
) -> Interaction {
    Interaction {
        head: head.clone(),
        tail: tail.clone(),
        relation: RelationType::Agreement,
        topic,
        paragraph: paragraph.clone(),
        derived,
    }
}

fn bidirectional_additions(set: &Set) -> Vec<Interaction> {
    set.values()
        .filter(|i| i.relation.is_bidirectional())
        .map(|i| i.reversed(Provenance::ClosureBidirectional))
        .filter(|rev| !set.contains_key(&rev.key()))
        .collect()
}

fn has_agreement(
    set: &Set,
    paragraph: &ParagraphRef,
    a: &str,
    b: &str,
    topic: Option<TopicId>,
) -> bool {
    set.contains_key(&InteractionKey {
        paragraph: paragraph.clone(),
        head: a.to_string(),
        tail: b.to_string(),
        relation: RelationType::Agreement,
        topic,
    })
}

type Component = (ParagraphRef, Option<TopicId>, Vec<String>);
type GroupKey = (ParagraphRef, Option<TopicId>);

/// Components of the mutual-agreement graph, per (paragraph, topic). Two
/// parties are linked when each has an Agreement towards the other.
fn agreement_components(set: &Set) -> Vec<Component> {
    let mut groups: BTreeMap<GroupKey, Vec<(&str, &str)>> = BTreeMap::new();
    for i in set.values() {
        if i.relation == RelationType::Agreement
            && i.head.name < i.tail.name
            && has_agreement(set, &i.paragraph, &i.tail.name, &i.head.name, i.topic)
        {
            groups
                .entry((i.paragraph.clone(), i.topic))
                .or_default()
                .push((i.head.name.as_str(), i.tail.name.as_str()));
        }
    }
    let mut out = Vec::new();
    for ((paragraph, topic), edges) in groups {
        let nodes: Vec<&str> = edges
            .iter()
            .flat_map(|(a, b)| [*a, *b])
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let index: BTreeMap<&str, usize> = nodes.iter().enumerate().map(|(i, n)| (*n, i)).collect();
        let mut parent: Vec<usize> = (0..nodes.len()).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for (a, b) in &edges {
            let (ra, rb) = (find(&mut parent, index[a]), find(&mut parent, index[b]));
            if ra != rb {
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
        let mut members: BTreeMap<usize, Vec<String>> = BTreeMap::new();
        for (i, n) in nodes.iter().enumerate() {
            let root = find(&mut parent, i);
            members.entry(root).or_default().push(n.to_string());
        }
        for component in members.into_values() {
            out.push((paragraph.clone(), topic, component));
        }
    }
    out
}

fn transitive_additions(set: &Set) -> Vec<Interaction> {
    let parties = parties(set);
    let mut out = Vec::new();
    for (paragraph, topic, component) in agreement_components(set) {
        if component.len() < 3 {
            continue;
        }
        for a in &component {
            for b in &component {
                if a != b && !has_agreement(set, &paragraph, a, b, topic) {
                    out.push(agreement(
                        parties[a.as_str()],
                        parties[b.as_str()],
                        topic,
                        &paragraph,
                        Provenance::ClosureTransitive,
                    ));
                }
            }
        }
    }
    out
}

/// Agreement keys obligated by derivation: for any two Support (or two
/// Opposition) interactions aimed at the same target in one paragraph from
/// different senders, the senders agree. The topic carries over when both
/// source interactions share it, otherwise it is left unset.
fn derivation_obligations(
    set: &Set,
) -> BTreeMap<InteractionKey, (Party, Party, ParagraphRef, Option<TopicId>)> {
    let mut groups: BTreeMap<(&ParagraphRef, &str, RelationType), Vec<&Interaction>> =
        BTreeMap::new();
    for i in set.values() {
        if matches!(i.relation, RelationType::Support | RelationType::Opposition) {
            groups
                .entry((&i.paragraph, i.tail.name.as_str(), i.relation))
                .or_default()
                .push(i);
        }
    }
    let mut out = BTreeMap::new();
    for ((paragraph, _, _), members) in groups {
        for x in &members {
            for y in &members {
                if x.head.name == y.head.name {
                    continue;
                }
                let topic = if x.topic == y.topic { x.topic } else { None };
                let key = InteractionKey {
                    paragraph: paragraph.clone(),
                    head: x.head.name.clone(),
                    tail: y.head.name.clone(),
                    relation: RelationType::Agreement,
                    topic,
                };
                out.entry(key)
                    .or_insert_with(|| (x.head.clone(), y.head.clone(), paragraph.clone(), topic));
            }
        }
    }
    out
}

fn derivation_additions(set: &Set) -> Vec<Interaction> {
    derivation_obligations(set)
        .into_iter()
        .filter(|(key, _)| !set.contains_key(key))
        .map(|(_, (head, tail, paragraph, topic))| {
            agreement(
                &head,
                &tail,
                topic,
                &paragraph,
                Provenance::ClosureDerivation,
            )
        })
        .collect()
}

fn additions(rule: Rule, set: &Set) -> Vec<Interaction> {
    match rule {
        Rule::Bidirectionality => bidirectional_additions(set),
        Rule::Transitivity => transitive_additions(set),
        Rule::Derivation => derivation_additions(set),
    }
}

fn apply_once(items: &[Interaction], rule: Rule) -> Vec<Interaction> {
    let mut set = to_set(items);
    for i in additions(rule, &set) {
        set.entry(i.key()).or_insert(i);
    }
    set.into_values().collect()
}

/// Adds the reverse of every Agreement and On behalf of interaction.
pub fn close_bidirectional(items: &[Interaction]) -> Vec<Interaction> {
    apply_once(items, Rule::Bidirectionality)
}

/// Completes every mutually agreeing group (per paragraph and topic) to all
/// ordered pairs.
pub fn close_transitive_agreement(items: &[Interaction]) -> Vec<Interaction> {
    apply_once(items, Rule::Transitivity)
}

/// Adds Agreement between every two senders supporting, or opposing, the
/// same target in a paragraph.
pub fn derive_agreements(items: &[Interaction]) -> Vec<Interaction> {
    apply_once(items, Rule::Derivation)
}

/// Applies rules in the given order, round after round, until a full round
/// adds nothing.
pub fn close_in_order(
    items: &[Interaction],
    order: &[Rule],
    max_rounds: usize,
) -> Result<Vec<Interaction>> {
    let mut set = to_set(items);
    for _ in 0..max_rounds {
        let mut changed = false;
        for &rule in order {
            for i in additions(rule, &set) {
                if set.insert(i.key(), i).is_none() {
                    changed = true;
                }
            }
        }
        if !changed {
            return Ok(set.into_values().collect());
        }
    }
    Err(Error::Internal(format!(
        "rule closure did not converge within {max_rounds} rounds"
    )))
}

/// Closure under every enabled rule. Output is sorted and duplicate-free.
pub fn close_to_fixpoint(items: &[Interaction], config: &RuleConfig) -> Result<Vec<Interaction>> {
    let order: Vec<Rule> = [Rule::Derivation, Rule::Bidirectionality, Rule::Transitivity]
        .into_iter()
        .filter(|r| config.is_enabled(*r))
        .collect();
    close_in_order(items, &order, config.max_rounds)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuleCompliance {
    pub obligated: usize,
    pub satisfied: usize,
}

impl RuleCompliance {
    /// 1.0 when nothing is obligated.
    pub fn fraction(&self) -> f64 {
        if self.obligated == 0 {
            1.0
        } else {
            self.satisfied as f64 / self.obligated as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplianceReport {
    pub bidirectionality: RuleCompliance,
    pub transitivity: RuleCompliance,
    pub derivation: RuleCompliance,
}

impl ComplianceReport {
    pub fn get(&self, rule: Rule) -> RuleCompliance {
        match rule {
            Rule::Bidirectionality => self.bidirectionality,
            Rule::Transitivity => self.transitivity,
            Rule::Derivation => self.derivation,
        }
    }
}

/// Measures how far a set already satisfies each rule. Obligations come from
/// the set itself:
///
/// * bidirectionality: each unordered pair linked by Agreement or On behalf
///   of obligates both directions;
/// * transitivity: each mutually agreeing group of three or more parties
///   obligates every ordered pair;
/// * derivation: each two co-supporters (or co-opposers) of a target
///   obligate an Agreement in each direction.
pub fn audit_compliance(items: &[Interaction]) -> ComplianceReport {
    let set = to_set(items);

    let mut pairs: BTreeSet<(ParagraphRef, String, String, RelationType, Option<TopicId>)> =
        BTreeSet::new();
    for i in set.values().filter(|i| i.relation.is_bidirectional()) {
        let (a, b) = if i.head.name < i.tail.name {
            (&i.head.name, &i.tail.name)
        } else {
            (&i.tail.name, &i.head.name)
        };
        pairs.insert((
            i.paragraph.clone(),
            a.clone(),
            b.clone(),
            i.relation,
            i.topic,
        ));
    }
    let mut bidirectionality = RuleCompliance {
        obligated: 0,
        satisfied: 0,
    };
    for (paragraph, a, b, relation, topic) in pairs {
        for (h, t) in [(&a, &b), (&b, &a)] {
            bidirectionality.obligated += 1;
            let key = InteractionKey {
                paragraph: paragraph.clone(),
                head: h.clone(),
                tail: t.clone(),
                relation,
                topic,
            };
            if set.contains_key(&key) {
                bidirectionality.satisfied += 1;
            }
        }
    }

    let mut transitivity = RuleCompliance {
        obligated: 0,
        satisfied: 0,
    };
    for (paragraph, topic, component) in agreement_components(&set) {
        if component.len() < 3 {
            continue;
        }
        for a in &component {
            for b in &component {
                if a != b {
                    transitivity.obligated += 1;
                    if has_agreement(&set, &paragraph, a, b, topic) {
                        transitivity.satisfied += 1;
                    }
                }
            }
        }
    }

    let obligations = derivation_obligations(&set);
    let derivation = RuleCompliance {
        obligated: obligations.len(),
        satisfied: obligations.keys().filter(|k| set.contains_key(k)).count(),
    };

    ComplianceReport {
        bidirectionality,
        transitivity,
        derivation,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> ParagraphRef {
        ParagraphRef::new("enb-1", 0)
    }

    fn i(h: &str, t: &str, r: RelationType) -> Interaction {
        Interaction::stated(h, t, r, p())
    }

    fn triples(items: &[Interaction]) -> BTreeSet<(String, String, RelationType)> {
        items
            .iter()
            .map(|i| (i.head.name.clone(), i.tail.name.clone(), i.relation))
            .collect()
    }

    #[test]
    fn samoa_agrees_eu() {
        let out = close_bidirectional(&[i("Samoa", "EU", RelationType::Agreement)]);
        assert_eq!(out.len(), 2);
        let rev = out.iter().find(|x| x.head.name == "EU").unwrap();
        assert_eq!(rev.tail.name, "Samoa");
        assert_eq!(rev.derived, Provenance::ClosureBidirectional);
    }

    #[test]
    fn directed_relations_are_not_reversed() {
        let s = vec![i("A", "B", RelationType::Support)];
        assert_eq!(close_bidirectional(&s), s);
        assert!(close_bidirectional(&[]).is_empty());
        let s = vec![i("A", "B", RelationType::DelayingProposal)];
        assert_eq!(close_to_fixpoint(&s, &RuleConfig::all()).unwrap(), s);
    }

    #[test]
    fn on_behalf_of_is_reversed() {
        let out = close_bidirectional(&[i("Grenada", "Samoa", RelationType::OnBehalfOf)]);
        assert!(triples(&out).contains(&(
            "Samoa".into(),
            "Grenada".into(),
            RelationType::OnBehalfOf
        )));
    }

    #[test]
    fn australia_new_zealand_iceland() {
        use RelationType::Agreement as Ag;
        let s = vec![
            i("Australia", "New Zealand", Ag),
            i("New Zealand", "Australia", Ag),
            i("Australia", "Iceland", Ag),
            i("Iceland", "Australia", Ag),
            i("New Zealand", "Iceland", Ag),
            i("Iceland", "New Zealand", Ag),
        ];
        assert_eq!(close_transitive_agreement(&s).len(), 6);

        // a chain A<->B, B<->C gains A<->C
        let chain = vec![
            i("A", "B", Ag),
            i("B", "A", Ag),
            i("B", "C", Ag),
            i("C", "B", Ag),
        ];
        let out = close_transitive_agreement(&chain);
        assert_eq!(out.len(), 6);
        let want: BTreeSet<_> = [("A", "C"), ("C", "A")]
            .iter()
            .map(|(a, b)| (a.to_string(), b.to_string(), Ag))
            .collect();
        let added: BTreeSet<_> = triples(
            &out.into_iter()
                .filter(|x| x.derived == Provenance::ClosureTransitive)
                .collect::<Vec<_>>(),
        );
        assert_eq!(added, want);

        // a mutual pair is already complete
        let pair = vec![i("A", "B", Ag), i("B", "A", Ag)];
        assert_eq!(close_transitive_agreement(&pair), pair);
    }

    #[test]
    fn transitivity_respects_topic_and_paragraph() {
        use RelationType::Agreement as Ag;
        let t1 = Some(TopicId(1));
        let s = vec![
            i("A", "B", Ag).with_topic(t1),
            i("B", "A", Ag).with_topic(t1),
            i("B", "C", Ag),
            i("C", "B", Ag),
        ];
        assert_eq!(close_transitive_agreement(&s).len(), 4);
        let mut other = i("B", "C", Ag);
        other.paragraph = ParagraphRef::new("enb-1", 1);
        let mut other_rev = i("C", "B", Ag);
        other_rev.paragraph = ParagraphRef::new("enb-1", 1);
        let s = vec![i("A", "B", Ag), i("B", "A", Ag), other, other_rev];
        assert_eq!(close_transitive_agreement(&s).len(), 4);
    }

    #[test]
    fn saudi_arabia_kuwait_derivation() {
        let s = vec![
            i("Saudi Arabia", "Philippines", RelationType::Support),
            i("Kuwait", "Philippines", RelationType::Support),
        ];
        let out = derive_agreements(&s);
        assert_eq!(out.len(), 4);
        let t = triples(&out);
        assert!(t.contains(&(
            "Saudi Arabia".into(),
            "Kuwait".into(),
            RelationType::Agreement
        )));
        assert!(t.contains(&(
            "Kuwait".into(),
            "Saudi Arabia".into(),
            RelationType::Agreement
        )));
        assert!(out
            .iter()
            .filter(|x| x.relation == RelationType::Agreement)
            .all(|x| x.derived == Provenance::ClosureDerivation));

        let closed = close_to_fixpoint(&s, &RuleConfig::all()).unwrap();
        assert_eq!(triples(&closed), t);

        assert_eq!(derive_agreements(&s[..1]), s[..1].to_vec());
    }

    #[test]
    fn three_opposers_six_agreements() {
        let s = vec![
            i("A", "X", RelationType::Opposition),
            i("B", "X", RelationType::Opposition),
            i("C", "X", RelationType::Opposition),
        ];
        let out = derive_agreements(&s);
        let added = out
            .iter()
            .filter(|x| x.relation == RelationType::Agreement)
            .count();
        // brute force: ordered pairs of distinct senders
        let senders = ["A", "B", "C"];
        let expected = senders
            .iter()
            .flat_map(|a| senders.iter().map(move |b| (a, b)))
            .filter(|(a, b)| a != b)
            .count();
        assert_eq!(added, expected);
        assert_eq!(added, 6);
    }

    #[test]
    fn mixed_relations_do_not_derive() {
        let s = vec![
            i("A", "X", RelationType::Support),
            i("B", "X", RelationType::Opposition),
        ];
        assert_eq!(derive_agreements(&s).len(), 2);
    }

    #[test]
    fn derived_topic_is_inherited_only_when_shared() {
        let t1 = Some(TopicId(1));
        let t2 = Some(TopicId(2));
        let same = vec![
            i("A", "X", RelationType::Support).with_topic(t1),
            i("B", "X", RelationType::Support).with_topic(t1),
        ];
        assert!(derive_agreements(&same)
            .iter()
            .filter(|x| x.relation == RelationType::Agreement)
            .all(|x| x.topic == t1));
        let mixed = vec![
            i("A", "X", RelationType::Support).with_topic(t1),
            i("B", "X", RelationType::Support).with_topic(t2),
        ];
        assert!(derive_agreements(&mixed)
            .iter()
            .filter(|x| x.relation == RelationType::Agreement)
            .all(|x| x.topic.is_none()));
    }

    #[test]
    fn stated_copy_is_kept_over_derived() {
        let s = vec![
            i("A", "X", RelationType::Support),
            i("B", "X", RelationType::Support),
            i("A", "B", RelationType::Agreement),
        ];
        let out = close_to_fixpoint(&s, &RuleConfig::all()).unwrap();
        let ab = out
            .iter()
            .find(|x| {
                x.head.name == "A" && x.tail.name == "B" && x.relation == RelationType::Agreement
            })
            .unwrap();
        assert_eq!(ab.derived, Provenance::Stated);
    }

    #[test]
    fn audit_counts() {
        let only = vec![i("A", "B", RelationType::Agreement)];
        let r = audit_compliance(&only);
        assert_eq!(
            r.bidirectionality,
            RuleCompliance {
                obligated: 2,
                satisfied: 1
            }
        );
        assert_eq!(r.bidirectionality.fraction(), 0.5);
        assert_eq!(r.transitivity.fraction(), 1.0);
        assert_eq!(r.derivation.fraction(), 1.0);

        let empty = audit_compliance(&[]);
        for rule in Rule::ALL {
            assert_eq!(empty.get(rule).fraction(), 1.0);
        }

        let s = vec![
            i("A", "X", RelationType::Support),
            i("B", "X", RelationType::Support),
        ];
        let r = audit_compliance(&s);
        assert_eq!(
            r.derivation,
            RuleCompliance {
                obligated: 2,
                satisfied: 0
            }
        );
        let closed = close_to_fixpoint(&s, &RuleConfig::all()).unwrap();
        let r = audit_compliance(&closed);
        for rule in Rule::ALL {
            assert_eq!(r.get(rule).fraction(), 1.0);
        }
    }

    #[test]
    fn round_cap_is_enforced() {
        let s = vec![i("A", "B", RelationType::Agreement)];
        assert!(matches!(
            close_in_order(&s, &[Rule::Bidirectionality], 1),
            Err(Error::Internal(_))
        ));
        assert_eq!(
            close_in_order(&s, &[Rule::Bidirectionality], 2)
                .unwrap()
                .len(),
            2
        );
    }

    #[test]
    fn rule_names_parse() {
        for r in Rule::ALL {
            assert_eq!(r.as_str().parse::<Rule>().unwrap(), r);
        }
        assert!("closure".parse::<Rule>().is_err());
    }
}
