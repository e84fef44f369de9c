//! The simulated adversary.
//!
//! A user's attributes are estimated as the arithmetic mean, over the topics
//! the user posted about, of each topic's normalized attribute distribution.
//! An attack on a sensitive attribute succeeds when the top-1 estimated value
//! beats the top-`k` value by at least the user's threshold.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::RepoSnapshot;
use crate::error::{Error, Result};
use crate::model::{AttributeSchema, Distribution, Persona, TopicStats, UserProfile};

/// Default gap a topic's top value must clear to be linked to it.
pub const DEFAULT_LINK_DELTA: f64 = 0.10;
/// Default minimum labeled observations before a topic may be linked.
pub const DEFAULT_MIN_SUPPORT: u64 = 30;

/// The adversary's per-attribute estimate (`None` = no inference possible).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Estimate {
    pub attributes: BTreeMap<String, Option<Distribution>>,
    pub topics_used: Vec<String>,
}

impl Estimate {
    pub fn get(&self, attribute: &str) -> Option<&Distribution> {
        self.attributes.get(attribute).and_then(Option::as_ref)
    }
}

/// Aggregates topic distributions into a user estimate.
///
/// Topics without observations for an attribute are left out of that
/// attribute's mean. Repeated topic ids are counted as often as they appear;
/// callers pass topic sets. Summation runs in sorted topic order so the result
/// does not depend on the order of `topics`.
pub fn aggregate(topics: &[String], snapshot: &RepoSnapshot) -> Result<Estimate> {
    if topics.is_empty() {
        return Err(Error::EmptyTopicList);
    }
    let mut sorted: Vec<&String> = topics.iter().collect();
    sorted.sort();
    let stats = sorted
        .iter()
        .map(|t| snapshot.stats(t))
        .collect::<Result<Vec<_>>>()?;
    let schema = snapshot.schema();
    let mut attributes = BTreeMap::new();
    for attr in schema.attributes() {
        let mut sums = vec![0.0f64; attr.domain.len()];
        let mut contributing = 0usize;
        for s in &stats {
            let Some(counts) = s.counts.get(&attr.id) else { continue };
            let total: u64 = attr.domain.iter().filter_map(|v| counts.get(v)).sum();
            if total == 0 {
                continue;
            }
            for (slot, v) in sums.iter_mut().zip(&attr.domain) {
                *slot += counts.get(v).copied().unwrap_or(0) as f64 / total as f64;
            }
            contributing += 1;
        }
        let estimate = (contributing > 0).then(|| Distribution {
            attribute: attr.id.clone(),
            probs: attr
                .domain
                .iter()
                .zip(&sums)
                .map(|(v, s)| (v.clone(), s / contributing as f64))
                .collect(),
        });
        attributes.insert(attr.id.clone(), estimate);
    }
    Ok(Estimate {
        attributes,
        topics_used: topics.to_vec(),
    })
}

/// Outcome of the attack on one sensitive attribute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    AttackSucceeds,
    Indistinguishable,
    NoInference,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitiveVerdict {
    pub attr: String,
    pub k: usize,
    /// The user's threshold Δ.
    pub threshold: f64,
    /// Top-1 minus top-k estimated probability.
    pub delta: f64,
    pub verdict: Verdict,
    /// The adversary's best guess, when it has one.
    pub inferred_value: Option<String>,
}

impl SensitiveVerdict {
    pub fn violated(&self) -> bool {
        self.verdict == Verdict::AttackSucceeds
    }
}

/// Applies the success criterion to each sensitive attribute of `profile`.
pub fn check(profile: &UserProfile, estimate: &Estimate) -> Vec<SensitiveVerdict> {
    profile
        .sensitive
        .iter()
        .map(|s| match estimate.get(&s.attr) {
            None => SensitiveVerdict {
                attr: s.attr.clone(),
                k: s.k,
                threshold: s.delta,
                delta: 0.0,
                verdict: Verdict::NoInference,
                inferred_value: None,
            },
            Some(dist) => {
                let delta = dist.top_gap(s.k);
                SensitiveVerdict {
                    attr: s.attr.clone(),
                    k: s.k,
                    threshold: s.delta,
                    delta,
                    verdict: if delta >= s.delta {
                        Verdict::AttackSucceeds
                    } else {
                        Verdict::Indistinguishable
                    },
                    inferred_value: dist.top().map(|(v, _)| v),
                }
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedValue {
    pub value: String,
    pub prob: f64,
}

/// Per-attribute view of an estimate, ready for display.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum AttributeReport {
    Inferred { ranked: Vec<RankedValue> },
    NoInference,
}

/// Everything the adversary concludes from a topic set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InferenceReport {
    pub generation: u64,
    pub topics_used: Vec<String>,
    pub attributes: BTreeMap<String, AttributeReport>,
    pub sensitive: Vec<SensitiveVerdict>,
    #[serde(skip)]
    pub estimate: Estimate,
}

impl InferenceReport {
    pub fn new(profile: &UserProfile, estimate: Estimate, generation: u64) -> Self {
        let attributes = estimate
            .attributes
            .iter()
            .map(|(a, d)| {
                let report = match d {
                    Some(d) => AttributeReport::Inferred {
                        ranked: d
                            .ranked()
                            .into_iter()
                            .map(|(value, prob)| RankedValue { value, prob })
                            .collect(),
                    },
                    None => AttributeReport::NoInference,
                };
                (a.clone(), report)
            })
            .collect();
        InferenceReport {
            generation,
            topics_used: estimate.topics_used.clone(),
            attributes,
            sensitive: check(profile, &estimate),
            estimate,
        }
    }

    /// Report for a topic set; an empty set yields no inference anywhere.
    pub fn for_topics(profile: &UserProfile, topics: &[String], snapshot: &RepoSnapshot) -> Result<Self> {
        let estimate = if topics.is_empty() {
            Estimate {
                attributes: snapshot
                    .schema()
                    .attribute_ids()
                    .map(|a| (a.to_string(), None))
                    .collect(),
                topics_used: Vec::new(),
            }
        } else {
            aggregate(topics, snapshot)?
        };
        Ok(Self::new(profile, estimate, snapshot.generation()))
    }

    pub fn verdict(&self, attr: &str) -> Option<&SensitiveVerdict> {
        self.sensitive.iter().find(|v| v.attr == attr)
    }

    /// True when no sensitive attribute is violated.
    pub fn satisfied(&self) -> bool {
        self.sensitive.iter().all(|v| !v.violated())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Links a count vector to its top value when the gap to the runner-up exceeds
/// `delta_link` and at least `min_support` observations back it.
pub fn link_counts(
    domain: &[String],
    counts: &BTreeMap<String, u64>,
    delta_link: f64,
    min_support: u64,
) -> Option<String> {
    let total: u64 = domain.iter().filter_map(|v| counts.get(v)).sum();
    if total < min_support || total == 0 {
        return None;
    }
    let dist = Distribution::from_counts("", domain, counts)?;
    let ranked = dist.ranked();
    let second = ranked.get(1).map(|(_, p)| *p).unwrap_or(0.0);
    (ranked[0].1 - second > delta_link).then(|| ranked[0].0.clone())
}

/// Marginal linkage of a topic to a value of `attribute`.
pub fn link_topic(
    topic: &str,
    attribute: &str,
    snapshot: &RepoSnapshot,
    delta_link: f64,
    min_support: u64,
) -> Result<Option<String>> {
    let stats = snapshot.stats(topic)?;
    let attr = snapshot.schema().require(attribute)?;
    Ok(stats
        .counts
        .get(attribute)
        .and_then(|c| link_counts(&attr.domain, c, delta_link, min_support)))
}

/// Counts of `attribute` among the topic's fully labeled posts that match
/// every `(attribute, value)` pair of `prefix`. `None` when the topic has no
/// joint observations.
pub fn conditional_counts(
    schema: &AttributeSchema,
    stats: &TopicStats,
    attribute: &str,
    prefix: &[(String, String)],
) -> Result<Option<BTreeMap<String, u64>>> {
    if stats.joint.is_empty() {
        return Ok(None);
    }
    let target = schema
        .position(attribute)
        .ok_or_else(|| Error::UnknownAttribute(attribute.to_string()))?;
    let conditions = prefix
        .iter()
        .map(|(a, v)| {
            schema
                .position(a)
                .map(|i| (i, v.as_str()))
                .ok_or_else(|| Error::UnknownAttribute(a.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut counts = BTreeMap::new();
    for (persona, n) in &stats.joint {
        if conditions.iter().all(|(i, v)| persona[*i] == *v) {
            *counts.entry(persona[target].clone()).or_insert(0) += n;
        }
    }
    Ok(Some(counts))
}

/// Topic-to-persona connection strength bands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConnectionCategory {
    Negligible,
    Weak,
    Mild,
    Strong,
}

impl ConnectionCategory {
    pub const ALL: [ConnectionCategory; 4] = [
        ConnectionCategory::Negligible,
        ConnectionCategory::Weak,
        ConnectionCategory::Mild,
        ConnectionCategory::Strong,
    ];

    /// Band membership: [0,.1) [.1,.2) [.2,.3) [.3,1].
    pub fn from_delta(delta: f64) -> Self {
        if delta < 0.10 {
            ConnectionCategory::Negligible
        } else if delta < 0.20 {
            ConnectionCategory::Weak
        } else if delta < 0.30 {
            ConnectionCategory::Mild
        } else {
            ConnectionCategory::Strong
        }
    }

    /// Lower (inclusive) and upper bound of the band.
    pub fn band(self) -> (f64, f64) {
        match self {
            ConnectionCategory::Negligible => (0.0, 0.10),
            ConnectionCategory::Weak => (0.10, 0.20),
            ConnectionCategory::Mild => (0.20, 0.30),
            ConnectionCategory::Strong => (0.30, 1.0),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ConnectionCategory::Negligible => "negligible",
            ConnectionCategory::Weak => "weak",
            ConnectionCategory::Mild => "mild",
            ConnectionCategory::Strong => "strong",
        }
    }
}

impl fmt::Display for ConnectionCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConnectionCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_lowercase().as_str() {
            "negligible" => Ok(ConnectionCategory::Negligible),
            "weak" => Ok(ConnectionCategory::Weak),
            "mild" => Ok(ConnectionCategory::Mild),
            "strong" => Ok(ConnectionCategory::Strong),
            other => Err(Error::MalformedDocument(format!("unknown category `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConnectionStrength {
    pub topic: String,
    pub delta: f64,
    pub category: ConnectionCategory,
}

/// Joint persona posting shares of a topic, ranked descending with ties broken
/// by the lexicographically smaller persona tuple.
pub fn persona_shares(stats: &TopicStats) -> Vec<(Persona, f64)> {
    let total = stats.joint_total();
    if total == 0 {
        return Vec::new();
    }
    let mut shares: Vec<(Persona, f64)> = stats
        .joint
        .iter()
        .filter(|(_, n)| **n > 0)
        .map(|(p, n)| (p.clone(), *n as f64 / total as f64))
        .collect();
    shares.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    shares
}

/// Share of the top-1 posting persona minus the share of the top-`k` one.
pub fn persona_delta(stats: &TopicStats, k: usize) -> Result<f64> {
    let shares = persona_shares(stats);
    if k == 0 || shares.len() < k {
        return Err(Error::InsufficientPersonas {
            topic: stats.topic.clone(),
            k,
            observed: shares.len(),
        });
    }
    Ok(shares[0].1 - shares[k - 1].1)
}

pub fn connection_strength(topic: &str, k: usize, snapshot: &RepoSnapshot) -> Result<ConnectionStrength> {
    let stats = snapshot.stats(topic)?;
    let delta = persona_delta(stats, k)?;
    Ok(ConnectionStrength {
        topic: topic.to_string(),
        delta,
        category: ConnectionCategory::from_delta(delta),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PersonaRank {
    pub persona: Persona,
    pub rank: usize,
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PersonaRankRow {
    pub topic: String,
    pub frequency: u64,
    pub ranks: Vec<PersonaRank>,
}

/// Rank (1-based, among every persona of the schema) of each requested
/// persona for each topic.
pub fn persona_rank_table(
    topics: &[String],
    personas: &[Persona],
    snapshot: &RepoSnapshot,
) -> Result<Vec<PersonaRankRow>> {
    let schema = snapshot.schema();
    for p in personas {
        if p.len() != schema.attributes().len() {
            return Err(Error::MalformedDocument(format!(
                "persona {p:?} does not assign every attribute"
            )));
        }
        for (attr, v) in schema.attributes().iter().zip(p) {
            schema.check_value(&attr.id, v)?;
        }
    }
    topics
        .iter()
        .map(|topic| {
            let stats = snapshot.stats(topic)?;
            let shares = persona_shares(stats);
            let ranks = personas
                .iter()
                .map(|p| {
                    let share = shares
                        .iter()
                        .find(|(q, _)| q == p)
                        .map(|(_, s)| *s)
                        .unwrap_or(0.0);
                    let rank = if share > 0.0 {
                        1 + shares.iter().position(|(q, _)| q == p).unwrap_or(0)
                    } else {
                        let unobserved_smaller = lexicographic_rank(schema, p)
                            .saturating_sub(shares.iter().filter(|(q, _)| q < p).count());
                        shares.len() + 1 + unobserved_smaller
                    };
                    PersonaRank {
                        persona: p.clone(),
                        rank,
                        share,
                    }
                })
                .collect();
            Ok(PersonaRankRow {
                topic: topic.clone(),
                frequency: stats.post_count,
                ranks,
            })
        })
        .collect()
}

/// Number of schema personas whose tuple sorts strictly before `persona`.
fn lexicographic_rank(schema: &AttributeSchema, persona: &Persona) -> usize {
    let sizes: Vec<usize> = schema.attributes().iter().map(|a| a.domain.len()).collect();
    let mut rank = 0usize;
    for (i, attr) in schema.attributes().iter().enumerate() {
        let smaller = attr.domain.iter().filter(|v| **v < persona[i]).count();
        let stride = sizes[i + 1..].iter().fold(1usize, |n, s| n.saturating_mul(*s));
        rank = rank.saturating_add(smaller.saturating_mul(stride));
    }
    rank
}
