//! Attribute schema, user profiles and the distribution types shared by every
//! other module.
//!
//! Identifiers are normalized on the way in: value ids are trimmed and
//! case-folded, topic ids additionally lose any leading `#`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};

/// Default privacy threshold applied when a sensitive setting omits `delta`.
pub const DEFAULT_DELTA: f64 = 0.10;
/// Default number of obfuscation topics a single post group may accept.
pub const DEFAULT_SUGGESTION_BUDGET: usize = 10;
/// Tolerance used when checking that probabilities sum to one.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// Case-folds an attribute or value identifier.
pub fn normalize_value(raw: &str) -> Result<String> {
    let id = raw.trim().to_lowercase();
    if id.is_empty() {
        return Err(Error::InvalidIdentifier(raw.to_string()));
    }
    Ok(id)
}

/// Case-folds a topic identifier and strips leading `#` characters.
pub fn normalize_topic(raw: &str) -> Result<String> {
    let id = raw.trim().trim_start_matches('#').trim().to_lowercase();
    if id.is_empty() {
        return Err(Error::InvalidIdentifier(raw.to_string()));
    }
    Ok(id)
}

/// A fraction in `(0, 1]`.
///
/// Documents may spell it as a number (`0.1`), a numeric string (`"0.1"`) or a
/// percentage (`"10%"`); all three parse to the same value.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
#[serde(transparent)]
pub struct Fraction(f64);

impl Fraction {
    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() && value > 0.0 && value <= 1.0 {
            Ok(Fraction(value))
        } else {
            Err(Error::FractionOutOfRange(value.to_string()))
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        let value = if let Some(pct) = text.strip_suffix('%') {
            pct.trim()
                .parse::<f64>()
                .map(|v| v / 100.0)
                .map_err(|_| Error::FractionOutOfRange(text.to_string()))?
        } else {
            text.parse::<f64>()
                .map_err(|_| Error::FractionOutOfRange(text.to_string()))?
        };
        Self::new(value)
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl<'de> Deserialize<'de> for Fraction {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Text(String),
        }
        let parsed = match Raw::deserialize(deserializer)? {
            Raw::Number(v) => Fraction::new(v),
            Raw::Text(s) => Fraction::parse(&s),
        };
        parsed.map_err(serde::de::Error::custom)
    }
}

/// One generalization level of an attribute hierarchy.
///
/// `groups` maps each coarse value to the members of the previous level it
/// absorbs (the first level groups raw domain values).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HierarchyLevel {
    pub name: String,
    pub groups: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Attribute {
    pub id: String,
    pub domain: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hierarchy_levels: Option<Vec<HierarchyLevel>>,
}

impl Attribute {
    pub fn contains(&self, value: &str) -> bool {
        self.domain.iter().any(|v| v == value)
    }

    pub fn index_of(&self, value: &str) -> Option<usize> {
        self.domain.iter().position(|v| v == value)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AttributeDoc {
    id: String,
    domain: Vec<String>,
    #[serde(default)]
    hierarchy_levels: Option<Vec<HierarchyLevel>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SchemaDoc {
    attributes: Vec<AttributeDoc>,
}

/// The ordered set of attributes and their value domains.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AttributeSchema {
    attributes: Vec<Attribute>,
}

impl AttributeSchema {
    /// Parses and validates a schema document.
    pub fn from_json(document: &str) -> Result<Self> {
        let doc: SchemaDoc = serde_json::from_str(document)?;
        Self::from_doc(doc)
    }

    fn from_doc(doc: SchemaDoc) -> Result<Self> {
        let mut attributes = Vec::with_capacity(doc.attributes.len());
        let mut seen = BTreeSet::new();
        for raw in doc.attributes {
            let id = normalize_value(&raw.id)?;
            if !seen.insert(id.clone()) {
                return Err(Error::DuplicateAttribute(id));
            }
            let domain = raw
                .domain
                .iter()
                .map(|v| normalize_value(v))
                .collect::<Result<Vec<_>>>()?;
            attributes.push(Attribute {
                id,
                domain,
                hierarchy_levels: raw.hierarchy_levels,
            });
        }
        Self::new(attributes)
    }

    /// Validates an already-normalized attribute list.
    pub fn new(attributes: Vec<Attribute>) -> Result<Self> {
        let mut ids = BTreeSet::new();
        for attr in &attributes {
            if !ids.insert(attr.id.as_str()) {
                return Err(Error::DuplicateAttribute(attr.id.clone()));
            }
            let mut values = BTreeSet::new();
            for v in &attr.domain {
                if !values.insert(v.as_str()) {
                    return Err(Error::DuplicateValue {
                        attribute: attr.id.clone(),
                        value: v.clone(),
                    });
                }
            }
            if attr.domain.len() < 2 {
                return Err(Error::DomainTooSmall(attr.id.clone()));
            }
            if let Some(levels) = &attr.hierarchy_levels {
                validate_hierarchy(attr, levels)?;
            }
        }
        Ok(AttributeSchema { attributes })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }

    pub fn attributes(&self) -> &[Attribute] {
        &self.attributes
    }

    pub fn attribute(&self, id: &str) -> Option<&Attribute> {
        self.attributes.iter().find(|a| a.id == id)
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.id == id)
    }

    pub fn require(&self, id: &str) -> Result<&Attribute> {
        self.attribute(id)
            .ok_or_else(|| Error::UnknownAttribute(id.to_string()))
    }

    pub fn attribute_ids(&self) -> impl Iterator<Item = &str> {
        self.attributes.iter().map(|a| a.id.as_str())
    }

    /// Checks that `value` lies in the domain of `attribute`.
    pub fn check_value(&self, attribute: &str, value: &str) -> Result<()> {
        let attr = self.require(attribute)?;
        if attr.contains(value) {
            Ok(())
        } else {
            Err(Error::UnknownValue {
                attribute: attribute.to_string(),
                value: value.to_string(),
            })
        }
    }

    /// Number of full personas (product of domain sizes).
    /// Size of the joint domain, saturating at `usize::MAX`.
    pub fn persona_count(&self) -> usize {
        self.attributes.iter().fold(1usize, |n, a| n.saturating_mul(a.domain.len()))
    }
}

fn validate_hierarchy(attr: &Attribute, levels: &[HierarchyLevel]) -> Result<()> {
    let invalid = |reason: String| Error::InvalidHierarchy {
        attribute: attr.id.clone(),
        reason,
    };
    let mut previous: Vec<String> = attr.domain.clone();
    for level in levels {
        if level.groups.is_empty() {
            return Err(invalid(format!("level `{}` has no groups", level.name)));
        }
        if level.groups.len() >= previous.len() {
            return Err(invalid(format!(
                "level `{}` does not coarsen the previous level",
                level.name
            )));
        }
        let mut covered = BTreeSet::new();
        for (group, members) in &level.groups {
            if members.is_empty() {
                return Err(invalid(format!("group `{group}` is empty")));
            }
            for m in members {
                let m = m.trim().to_lowercase();
                if !previous.contains(&m) {
                    return Err(invalid(format!("`{m}` is not a member of the previous level")));
                }
                if !covered.insert(m.clone()) {
                    return Err(invalid(format!("`{m}` appears in two groups")));
                }
            }
        }
        if covered.len() != previous.len() {
            return Err(invalid(format!(
                "level `{}` does not partition the previous level",
                level.name
            )));
        }
        previous = level.groups.keys().cloned().collect();
    }
    Ok(())
}

/// Privacy settings of one sensitive attribute.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitiveSetting {
    pub attr: String,
    pub k: usize,
    pub delta: f64,
    /// The true value plus `k - 1` fixed alternates. Empty until chosen.
    pub cover_set: Vec<String>,
}

impl SensitiveSetting {
    /// Cover values other than the user's true value, in cover order.
    pub fn alternates<'a>(&'a self, true_value: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.cover_set
            .iter()
            .map(String::as_str)
            .filter(move |v| *v != true_value)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SensitiveDoc {
    attr: String,
    k: usize,
    #[serde(default)]
    delta: Option<Fraction>,
    #[serde(default)]
    cover_set: Option<Vec<String>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileDoc {
    true_values: BTreeMap<String, String>,
    #[serde(default)]
    public: Vec<String>,
    #[serde(default)]
    sensitive: Vec<SensitiveDoc>,
    #[serde(default)]
    suggestion_budget: Option<usize>,
}

/// A user's declared persona and privacy preferences.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UserProfile {
    pub true_values: BTreeMap<String, String>,
    #[serde(rename = "public")]
    pub public_attrs: Vec<String>,
    #[serde(rename = "sensitive")]
    pub sensitive: Vec<SensitiveSetting>,
    pub suggestion_budget: usize,
}

impl UserProfile {
    /// Parses and validates a profile document against `schema`.
    pub fn from_json(document: &str, schema: &AttributeSchema) -> Result<Self> {
        let doc: ProfileDoc = serde_json::from_str(document)?;
        let mut true_values = BTreeMap::new();
        for (attr, value) in doc.true_values {
            let attr = normalize_value(&attr)?;
            let value = normalize_value(&value)?;
            schema.check_value(&attr, &value)?;
            true_values.insert(attr, value);
        }
        let public_attrs = doc
            .public
            .iter()
            .map(|a| normalize_value(a))
            .collect::<Result<Vec<_>>>()?;
        let sensitive = doc
            .sensitive
            .into_iter()
            .map(|s| {
                Ok(SensitiveSetting {
                    attr: normalize_value(&s.attr)?,
                    k: s.k,
                    delta: s.delta.map(Fraction::get).unwrap_or(DEFAULT_DELTA),
                    cover_set: s
                        .cover_set
                        .unwrap_or_default()
                        .iter()
                        .map(|v| normalize_value(v))
                        .collect::<Result<Vec<_>>>()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let profile = UserProfile {
            true_values,
            public_attrs,
            sensitive,
            suggestion_budget: doc.suggestion_budget.unwrap_or(DEFAULT_SUGGESTION_BUDGET),
        };
        profile.validate(schema)?;
        Ok(profile)
    }

    /// Checks every profile invariant. An empty cover set is accepted (it is
    /// filled in later); a non-empty one must be complete.
    pub fn validate(&self, schema: &AttributeSchema) -> Result<()> {
        for (attr, value) in &self.true_values {
            schema.check_value(attr, value)?;
        }
        for attr in &self.public_attrs {
            schema.require(attr)?;
        }
        let mut seen = BTreeSet::new();
        for s in &self.sensitive {
            let attribute = schema.require(&s.attr)?;
            if self.public_attrs.contains(&s.attr) || !seen.insert(s.attr.as_str()) {
                return Err(Error::OverlappingPartition(s.attr.clone()));
            }
            if s.k < 2 {
                return Err(Error::KTooSmall {
                    attribute: s.attr.clone(),
                    k: s.k,
                });
            }
            if s.k > attribute.domain.len() {
                return Err(Error::KExceedsDomain {
                    attribute: s.attr.clone(),
                    k: s.k,
                    domain: attribute.domain.len(),
                });
            }
            Fraction::new(s.delta)?;
            if !s.cover_set.is_empty() {
                let unique: BTreeSet<&str> = s.cover_set.iter().map(String::as_str).collect();
                if s.cover_set.len() != s.k || unique.len() != s.k {
                    return Err(Error::CoverSizeMismatch {
                        attribute: s.attr.clone(),
                        k: s.k,
                        got: unique.len(),
                    });
                }
                for v in &s.cover_set {
                    schema.check_value(&s.attr, v)?;
                }
                let truth = self.true_values.get(&s.attr);
                if truth.is_none_or(|t| !s.cover_set.contains(t)) {
                    return Err(Error::TrueValueNotInCover(s.attr.clone()));
                }
            }
        }
        let mut public_seen = BTreeSet::new();
        for attr in &self.public_attrs {
            if !public_seen.insert(attr.as_str()) {
                return Err(Error::OverlappingPartition(attr.clone()));
            }
        }
        for attr in schema.attribute_ids() {
            if !self.public_attrs.iter().any(|a| a == attr)
                && !self.sensitive.iter().any(|s| s.attr == attr)
            {
                return Err(Error::IncompletePartition(attr.to_string()));
            }
            if !self.true_values.contains_key(attr) {
                return Err(Error::MissingTrueValue(attr.to_string()));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("profile serializes")
    }

    pub fn true_value(&self, attr: &str) -> Option<&str> {
        self.true_values.get(attr).map(String::as_str)
    }

    pub fn sensitive_setting(&self, attr: &str) -> Option<&SensitiveSetting> {
        self.sensitive.iter().find(|s| s.attr == attr)
    }

    pub fn sensitive_attrs(&self) -> impl Iterator<Item = &str> {
        self.sensitive.iter().map(|s| s.attr.as_str())
    }

    /// Attribute order of the dependent topic tree: public first, then sensitive.
    pub fn tree_order(&self) -> Vec<String> {
        self.public_attrs
            .iter()
            .cloned()
            .chain(self.sensitive.iter().map(|s| s.attr.clone()))
            .collect()
    }

    /// The user's own path through the tree (true values in tree order).
    pub fn persona_path(&self) -> Vec<String> {
        self.tree_order()
            .iter()
            .map(|a| self.true_values.get(a).cloned().unwrap_or_default())
            .collect()
    }
}

/// A probability distribution over one attribute's domain.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Distribution {
    pub attribute: String,
    pub probs: BTreeMap<String, f64>,
}

impl Distribution {
    /// Builds a validated distribution; probabilities must be non-negative and
    /// sum to one.
    pub fn new(attribute: impl Into<String>, probs: BTreeMap<String, f64>) -> Result<Self> {
        let attribute = attribute.into();
        let mut sum = 0.0;
        for (v, p) in &probs {
            if !p.is_finite() || *p < 0.0 {
                return Err(Error::MalformedDocument(format!(
                    "probability of `{v}` is {p}"
                )));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(Error::MalformedDocument(format!(
                "distribution over `{attribute}` sums to {sum}"
            )));
        }
        Ok(Distribution { attribute, probs })
    }

    /// Normalizes raw counts over `domain`. Returns `None` when every count is
    /// zero. Every domain value is present in the result.
    pub fn from_counts(
        attribute: impl Into<String>,
        domain: &[String],
        counts: &BTreeMap<String, u64>,
    ) -> Option<Self> {
        let total: u64 = domain.iter().filter_map(|v| counts.get(v)).sum();
        if total == 0 {
            return None;
        }
        let probs = domain
            .iter()
            .map(|v| {
                let c = counts.get(v).copied().unwrap_or(0);
                (v.clone(), c as f64 / total as f64)
            })
            .collect();
        Some(Distribution {
            attribute: attribute.into(),
            probs,
        })
    }

    pub fn prob(&self, value: &str) -> f64 {
        self.probs.get(value).copied().unwrap_or(0.0)
    }

    /// Values in descending probability, ties broken by ascending value id.
    pub fn ranked(&self) -> Vec<(String, f64)> {
        let mut ranked: Vec<(String, f64)> =
            self.probs.iter().map(|(v, p)| (v.clone(), *p)).collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked
    }

    pub fn top(&self) -> Option<(String, f64)> {
        self.ranked().into_iter().next()
    }

    /// Probability at 1-based rank `k`; zero past the end of the support.
    pub fn prob_at_rank(&self, k: usize) -> f64 {
        debug_assert!(k >= 1);
        self.ranked().get(k - 1).map(|(_, p)| *p).unwrap_or(0.0)
    }

    /// Gap between the top-1 and the top-`k` probability.
    pub fn top_gap(&self, k: usize) -> f64 {
        (self.prob_at_rank(1) - self.prob_at_rank(k)).max(0.0)
    }

    /// Gap between the two most probable values.
    pub fn margin(&self) -> f64 {
        self.top_gap(2)
    }

    pub fn total(&self) -> f64 {
        self.probs.values().sum()
    }
}

impl fmt::Display for Distribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{{", self.attribute)?;
        for (i, (v, p)) in self.ranked().iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v}:{p:.4}")?;
        }
        write!(f, "}}")
    }
}

/// A full persona: one value per schema attribute, in schema order.
pub type Persona = Vec<String>;

/// Observation counts for one topic.
///
/// `counts` holds per-attribute marginals; `joint` holds full label tuples
/// (in schema order) for posts that carried a label for every attribute.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TopicStats {
    pub topic: String,
    pub counts: BTreeMap<String, BTreeMap<String, u64>>,
    pub post_count: u64,
    pub joint: BTreeMap<Persona, u64>,
}

impl TopicStats {
    pub fn new(topic: impl Into<String>) -> Self {
        TopicStats {
            topic: topic.into(),
            ..Default::default()
        }
    }

    /// Number of posts carrying a label for `attribute`.
    pub fn observations(&self, attribute: &str) -> u64 {
        self.counts
            .get(attribute)
            .map(|m| m.values().sum())
            .unwrap_or(0)
    }

    pub fn joint_total(&self) -> u64 {
        self.joint.values().sum()
    }

    /// Checks the count invariants against `schema`.
    pub fn validate(&self, schema: &AttributeSchema) -> Result<()> {
        for (attr, values) in &self.counts {
            for v in values.keys() {
                schema.check_value(attr, v)?;
            }
            if self.observations(attr) > self.post_count {
                return Err(Error::CorruptFile(format!(
                    "topic `{}` has more `{attr}` labels than posts",
                    self.topic
                )));
            }
        }
        if self.joint_total() > self.post_count {
            return Err(Error::CorruptFile(format!(
                "topic `{}` has more joint tuples than posts",
                self.topic
            )));
        }
        let n = schema.attributes().len();
        for persona in self.joint.keys() {
            if persona.len() != n {
                return Err(Error::CorruptFile(format!(
                    "topic `{}` has a persona of arity {}",
                    self.topic,
                    persona.len()
                )));
            }
            for (attr, v) in schema.attributes().iter().zip(persona) {
                schema.check_value(&attr.id, v)?;
            }
        }
        Ok(())
    }
}

/// Maps attribute id to its position; handy for persona tuple lookups.
pub fn attribute_positions(schema: &AttributeSchema) -> HashMap<String, usize> {
    schema
        .attributes()
        .iter()
        .enumerate()
        .map(|(i, a)| (a.id.clone(), i))
        .collect()
}
