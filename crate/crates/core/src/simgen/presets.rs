//! Desk-scale generator specs: gender x ethnicity x 10 locations, 50 topics
//! per category, 100 to 400 posts per topic.

use std::collections::BTreeMap;

use crate::inference::ConnectionCategory;
use crate::model::AttributeSchema;

use super::{CategorySpec, GeneratorSpec, SupplyPlan, TargetKind};

pub const SCHEMA_JSON: &str = r#"{
  "attributes": [
    {"id": "gender", "domain": ["male", "female"]},
    {"id": "ethnicity", "domain": ["white", "black", "hispanic", "asian", "other"]},
    {"id": "location", "domain": ["ca", "tx", "ny", "fl", "il", "pa", "oh", "ga", "nc", "mi"]}
  ]
}"#;

const WEIGHTS: &[(&str, &[(&str, f64)])] = &[
    ("gender", &[("male", 0.66), ("female", 0.34)]),
    ("ethnicity", &[("white", 0.6), ("black", 0.15), ("hispanic", 0.12), ("asian", 0.08), ("other", 0.05)]),
    (
        "location",
        &[
            ("ca", 0.16), ("tx", 0.13), ("ny", 0.12), ("fl", 0.11), ("il", 0.10),
            ("pa", 0.10), ("oh", 0.09), ("ga", 0.07), ("nc", 0.06), ("mi", 0.06),
        ],
    ),
];

pub const TOPICS_PER_CATEGORY: usize = 50;

/// The persona every preset experiment runs as.
pub fn persona() -> BTreeMap<String, String> {
    [("gender", "male"), ("ethnicity", "white"), ("location", "ca")]
        .iter()
        .map(|(a, v)| (a.to_string(), v.to_string()))
        .collect()
}

fn weights() -> BTreeMap<String, BTreeMap<String, f64>> {
    WEIGHTS
        .iter()
        .map(|(a, ws)| (a.to_string(), ws.iter().map(|(v, w)| (v.to_string(), *w)).collect()))
        .collect()
}

fn category(category: ConnectionCategory, delta: [f64; 2]) -> CategorySpec {
    CategorySpec {
        category,
        count: TOPICS_PER_CATEGORY,
        delta,
        target: TargetKind::Plan,
        prefix: None,
    }
}

fn base(seed: u64, sensitive: &str, supply_delta: [f64; 2], topics_per_value: usize) -> GeneratorSpec {
    GeneratorSpec {
        schema: AttributeSchema::from_json(SCHEMA_JSON).expect("preset schema"),
        persona_weights: weights(),
        categories: vec![
            category(ConnectionCategory::Negligible, [0.02, 0.09]),
            category(ConnectionCategory::Weak, [0.10, 0.19]),
            category(ConnectionCategory::Mild, [0.20, 0.29]),
            category(ConnectionCategory::Strong, [0.30, 0.60]),
            CategorySpec {
                category: ConnectionCategory::Strong,
                count: TOPICS_PER_CATEGORY,
                delta: [0.40, 0.80],
                target: TargetKind::OffPersona,
                prefix: Some("decoy".into()),
            },
        ],
        posts_per_topic: [100, 400],
        connection_k: 3,
        plan: Some(SupplyPlan {
            persona: persona(),
            sensitive: sensitive.to_string(),
            alternates: Vec::new(),
            topics_per_value,
            delta: supply_delta,
            affinity: 0.8,
        }),
        seed,
    }
}

/// Corpus for location experiments (k from 3 to 7).
pub fn location_spec(seed: u64) -> GeneratorSpec {
    base(seed, "location", [0.20, 0.30], 4)
}

/// Corpus for gender experiments (k = 2).
pub fn gender_spec(seed: u64) -> GeneratorSpec {
    base(seed, "gender", [0.48, 0.56], 8)
}
