//! A small labeled corpus for demos and tests.
//!
//! The user is a white male from California hiding gender (k=2). `gowarriors`
//! is male-skewed (male share 0.715). Three female-linked topics that white
//! Californians discuss carry male share 0.475 each. `coffee` is nearly
//! gender-neutral. `dallasmoms` is female-linked but belongs to a different
//! public persona.

use crate::corpus::{LabeledPost, TopicRepository};
use crate::model::{AttributeSchema, UserProfile};

pub const SCHEMA_JSON: &str = r#"{
  "attributes": [
    {"id": "gender", "domain": ["male", "female"]},
    {"id": "ethnicity", "domain": ["white", "black", "asian", "hispanic", "other"]},
    {"id": "location", "domain": ["ca", "tx", "ny", "fl", "il"]}
  ]
}"#;

pub const PROFILE_JSON: &str = r#"{
  "true_values": {"gender": "male", "ethnicity": "white", "location": "ca"},
  "public": ["ethnicity", "location"],
  "sensitive": [{"attr": "gender", "k": 2, "delta": 0.1, "cover_set": ["male", "female"]}],
  "suggestion_budget": 10
}"#;

pub const STRONG_TOPIC: &str = "gowarriors";
pub const NEGLIGIBLE_TOPIC: &str = "coffee";
/// Accept order of the walk-through (equal scores, larger topics first).
pub const SUPPLY_TOPICS: [&str; 3] = ["womenintech", "organicfood", "bodybuilding"];
pub const OFF_PERSONA_TOPIC: &str = "dallasmoms";

/// (gender, ethnicity, location, posts)
type Cell = (&'static str, &'static str, &'static str, usize);

const COMPOSITION: &[(&str, &[Cell])] = &[
    ("gowarriors", &[("male", "white", "ca", 640), ("female", "white", "ca", 285), ("male", "black", "tx", 75)]),
    ("womenintech", &[("male", "white", "ca", 480), ("female", "white", "ca", 630), ("male", "black", "tx", 90)]),
    ("organicfood", &[("male", "white", "ca", 400), ("female", "white", "ca", 525), ("male", "black", "tx", 75)]),
    ("bodybuilding", &[("male", "white", "ca", 320), ("female", "white", "ca", 420), ("male", "black", "tx", 60)]),
    ("coffee", &[("male", "white", "ca", 445), ("female", "white", "ca", 480), ("male", "black", "tx", 75)]),
    ("dallasmoms", &[("female", "black", "tx", 300), ("male", "black", "tx", 50)]),
];

pub fn schema() -> AttributeSchema {
    AttributeSchema::from_json(SCHEMA_JSON).expect("fixture schema is valid")
}

pub fn profile() -> UserProfile {
    UserProfile::from_json(PROFILE_JSON, &schema()).expect("fixture profile is valid")
}

/// Every post of the fixture, one topic each, timestamps increasing.
pub fn posts() -> Vec<LabeledPost> {
    let mut out = Vec::new();
    for (topic, parts) in COMPOSITION {
        for (gender, ethnicity, location, n) in parts.iter() {
            for _ in 0..*n {
                let i = out.len();
                out.push(LabeledPost {
                    post_id: format!("p{i:05}"),
                    topics: vec![topic.to_string()],
                    labels: [("gender", gender), ("ethnicity", ethnicity), ("location", location)]
                        .iter()
                        .map(|(a, v)| (a.to_string(), v.to_string()))
                        .collect(),
                    timestamp: i as i64,
                });
            }
        }
    }
    out
}

/// The fixture as JSONL text.
pub fn jsonl() -> String {
    posts().iter().map(|p| p.to_json_line() + "\n").collect()
}

pub fn repository() -> TopicRepository {
    let mut repo = TopicRepository::new(schema());
    repo.ingest_batch(&posts()).expect("fixture ingests");
    repo
}
