//! Recovering a schema and a default persona from a labeled corpus.

use std::collections::BTreeMap;

use aegis_core::corpus::LabeledPost;
use aegis_core::model::{Attribute, AttributeSchema};
use aegis_core::{Error, Result};

/// Attributes ordered by domain size (ties by name), values by frequency
/// (ties by name).
pub fn schema_from_posts(posts: &[LabeledPost]) -> Result<AttributeSchema> {
    let mut counts: BTreeMap<&str, BTreeMap<&str, u64>> = BTreeMap::new();
    for p in posts {
        for (a, v) in &p.labels {
            *counts.entry(a).or_default().entry(v).or_default() += 1;
        }
    }
    if counts.is_empty() {
        return Err(Error::MalformedDocument("corpus carries no labels to infer a schema from".into()));
    }
    let mut attrs: Vec<(String, Vec<String>)> = counts
        .into_iter()
        .map(|(a, values)| {
            let mut values: Vec<(&str, u64)> = values.into_iter().collect();
            values.sort_by(|x, y| y.1.cmp(&x.1).then(x.0.cmp(y.0)));
            (a.to_string(), values.into_iter().map(|(v, _)| v.to_string()).collect())
        })
        .collect();
    attrs.sort_by(|x, y| x.1.len().cmp(&y.1.len()).then_with(|| x.0.cmp(&y.0)));
    AttributeSchema::new(
        attrs
            .into_iter()
            .map(|(id, domain)| Attribute {
                id,
                domain,
                hierarchy_levels: None,
            })
            .collect(),
    )
}

/// The most frequent fully labeled attribute tuple (ties lexicographic).
pub fn dominant_persona(posts: &[LabeledPost], schema: &AttributeSchema) -> Result<BTreeMap<String, String>> {
    let ids: Vec<&str> = schema.attribute_ids().collect();
    let mut tally: BTreeMap<Vec<&str>, u64> = BTreeMap::new();
    for p in posts {
        let tuple: Option<Vec<&str>> = ids.iter().map(|a| p.labels.get(*a).map(String::as_str)).collect();
        if let Some(t) = tuple {
            *tally.entry(t).or_default() += 1;
        }
    }
    let best = tally
        .into_iter()
        .max_by(|x, y| x.1.cmp(&y.1).then_with(|| y.0.cmp(&x.0)))
        .ok_or_else(|| Error::MalformedDocument("corpus has no fully labeled post".into()))?;
    Ok(ids.iter().map(|a| a.to_string()).zip(best.0.into_iter().map(str::to_string)).collect())
}

/// Parses `attr=value` pairs.
pub fn parse_persona(pairs: &[String]) -> std::result::Result<BTreeMap<String, String>, String> {
    pairs
        .iter()
        .map(|p| {
            p.split_once('=')
                .map(|(a, v)| (a.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| format!("persona entry `{p}` is not attr=value"))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn post(id: &str, labels: &[(&str, &str)]) -> LabeledPost {
        LabeledPost {
            post_id: id.into(),
            topics: vec!["t".into()],
            labels: labels.iter().map(|(a, v)| (a.to_string(), v.to_string())).collect(),
            timestamp: 0,
        }
    }

    #[test]
    fn orders_attributes_by_domain_size() {
        let posts = vec![
            post("1", &[("loc", "ny"), ("g", "m")]),
            post("2", &[("loc", "ca"), ("g", "f")]),
            post("3", &[("loc", "ca"), ("g", "m")]),
            post("4", &[("loc", "tx")]),
        ];
        let schema = schema_from_posts(&posts).unwrap();
        let ids: Vec<&str> = schema.attribute_ids().collect();
        assert_eq!(ids, ["g", "loc"]);
        assert_eq!(schema.attribute("loc").unwrap().domain, ["ca", "ny", "tx"]);
        assert_eq!(schema.attribute("g").unwrap().domain, ["m", "f"]);
        let persona = dominant_persona(&posts, &schema).unwrap();
        assert_eq!(persona["g"], "f", "three tuples tie once each; lexicographically first wins");
        assert_eq!(persona["loc"], "ca");
    }

    #[test]
    fn unlabeled_corpus_is_rejected() {
        assert!(schema_from_posts(&[post("1", &[])]).is_err());
    }

    #[test]
    fn persona_pairs() {
        let p = parse_persona(&["gender=male".into(), " location = ca".into()]).unwrap();
        assert_eq!(p["location"], "ca");
        assert!(parse_persona(&["gender".into()]).is_err());
    }
}
