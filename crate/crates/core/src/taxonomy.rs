//! Dependent topic classification tree.
//!
//! Levels follow the user's attribute order: public attributes first, then
//! sensitive ones. A topic descends one level at a time as long as it stays
//! linked to some value of that level's attribute, where linkage is computed
//! on the topic's posts that match the path chosen so far. Topics that carry
//! no joint label tuples fall back to marginal linkage and are flagged.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::{Arc, RwLock};

use serde::Serialize;

use crate::corpus::RepoSnapshot;
use crate::error::{Error, Result};
use crate::inference::{conditional_counts, link_counts, link_topic, DEFAULT_LINK_DELTA, DEFAULT_MIN_SUPPORT};
use crate::model::UserProfile;

/// Linkage thresholds used while classifying.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinkParams {
    pub delta_link: f64,
    pub min_support: u64,
}

impl Default for LinkParams {
    fn default() -> Self {
        LinkParams {
            delta_link: DEFAULT_LINK_DELTA,
            min_support: DEFAULT_MIN_SUPPORT,
        }
    }
}

/// Where a topic ended up.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Placement {
    pub path: Vec<String>,
    pub marginal_fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PlacedTopic {
    pub topic: String,
    pub post_count: u64,
    pub marginal_fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
struct Node {
    /// Descending post count, then ascending topic id.
    topics: Vec<PlacedTopic>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopicTree {
    order: Vec<String>,
    domains: Vec<Vec<String>>,
    params: LinkParams,
    nodes: BTreeMap<Vec<String>, Node>,
    placements: BTreeMap<String, Placement>,
    built_at_generation: u64,
}

/// One node of the JSON export.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeView {
    pub path: Vec<String>,
    pub topics: Vec<String>,
    pub counts: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TreeView {
    pub order: Vec<String>,
    pub built_at_generation: u64,
    pub nodes: Vec<NodeView>,
}

/// Classifies every topic of `snapshot` under the attribute order of `profile`.
pub fn build_tree(profile: &UserProfile, snapshot: &RepoSnapshot, params: LinkParams) -> Result<TopicTree> {
    build_tree_with_order(profile.tree_order(), snapshot, params)
}

pub fn build_tree_with_order(
    order: Vec<String>,
    snapshot: &RepoSnapshot,
    params: LinkParams,
) -> Result<TopicTree> {
    let domains = order
        .iter()
        .map(|a| snapshot.schema().require(a).map(|attr| attr.domain.clone()))
        .collect::<Result<Vec<_>>>()?;
    let mut tree = TopicTree {
        order,
        domains,
        params,
        nodes: BTreeMap::new(),
        placements: BTreeMap::new(),
        built_at_generation: snapshot.generation(),
    };
    tree.nodes.insert(Vec::new(), Node::default());
    for topic in snapshot.topic_ids() {
        let placement = place_topic(topic, &tree, snapshot)?;
        let post_count = snapshot.stats(topic)?.post_count;
        for depth in 0..placement.path.len() {
            tree.nodes.entry(placement.path[..depth].to_vec()).or_default();
        }
        tree.nodes
            .entry(placement.path.clone())
            .or_default()
            .topics
            .push(PlacedTopic {
                topic: topic.to_string(),
                post_count,
                marginal_fallback: placement.marginal_fallback,
            });
        tree.placements.insert(topic.to_string(), placement);
    }
    for node in tree.nodes.values_mut() {
        node.topics
            .sort_by(|a, b| b.post_count.cmp(&a.post_count).then_with(|| a.topic.cmp(&b.topic)));
    }
    Ok(tree)
}

/// Descends `topic` through the levels of `tree`, stopping at the first level
/// where it is not linked.
pub fn place_topic(topic: &str, tree: &TopicTree, snapshot: &RepoSnapshot) -> Result<Placement> {
    let stats = snapshot.stats(topic)?;
    let schema = snapshot.schema();
    let mut prefix: Vec<(String, String)> = Vec::new();
    let mut marginal_fallback = false;
    for attr_id in &tree.order {
        let attr = schema.require(attr_id)?;
        let counts = if prefix.is_empty() {
            stats.counts.get(attr_id).cloned()
        } else {
            match conditional_counts(schema, stats, attr_id, &prefix)? {
                Some(c) => Some(c),
                None => {
                    marginal_fallback = true;
                    stats.counts.get(attr_id).cloned()
                }
            }
        };
        let linked = counts.and_then(|c| link_counts(&attr.domain, &c, tree.params.delta_link, tree.params.min_support));
        match linked {
            Some(v) => prefix.push((attr_id.clone(), v)),
            None => break,
        }
    }
    Ok(Placement {
        path: prefix.into_iter().map(|(_, v)| v).collect(),
        marginal_fallback,
    })
}

/// Classifies a topic against a single attribute with no conditioning. This is
/// the independent per-attribute hierarchy, kept as a comparison baseline.
pub fn independent_baseline(
    topic: &str,
    attribute: &str,
    snapshot: &RepoSnapshot,
    params: LinkParams,
) -> Result<Option<String>> {
    link_topic(topic, attribute, snapshot, params.delta_link, params.min_support)
}

impl TopicTree {
    pub fn order(&self) -> &[String] {
        &self.order
    }

    /// Domain of the attribute at some level.
    pub fn domain_of(&self, attribute: &str) -> Option<&[String]> {
        let level = self.order.iter().position(|a| a == attribute)?;
        Some(&self.domains[level])
    }

    pub fn params(&self) -> LinkParams {
        self.params
    }

    pub fn built_at_generation(&self) -> u64 {
        self.built_at_generation
    }

    pub fn placement(&self, topic: &str) -> Option<&Placement> {
        self.placements.get(topic)
    }

    pub fn topic_count(&self) -> usize {
        self.nodes.values().map(|n| n.topics.len()).sum()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Topics resting exactly at `path`.
    pub fn topics_at(&self, path: &[String]) -> &[PlacedTopic] {
        self.nodes.get(path).map(|n| n.topics.as_slice()).unwrap_or(&[])
    }

    /// Topics at `path` or anywhere below it, descending post count.
    pub fn topics_under(&self, path: &[String]) -> Vec<&PlacedTopic> {
        let mut out: Vec<&PlacedTopic> = self
            .nodes
            .range(path.to_vec()..)
            .take_while(|(p, _)| p.starts_with(path))
            .flat_map(|(_, n)| n.topics.iter())
            .collect();
        out.sort_by(|a, b| b.post_count.cmp(&a.post_count).then_with(|| a.topic.cmp(&b.topic)));
        out
    }

    fn level_of(&self, attribute: &str) -> Result<usize> {
        self.order
            .iter()
            .position(|a| a == attribute)
            .ok_or_else(|| Error::LevelMismatch(format!("`{attribute}` is not a level of this tree")))
    }

    /// For each cover value other than the user's own, the topics under the
    /// node that swaps the user's value at `attribute`'s level for it.
    pub fn sibling_topics(
        &self,
        user_path: &[String],
        attribute: &str,
        cover_set: &[String],
    ) -> Result<BTreeMap<String, Vec<String>>> {
        let level = self.level_of(attribute)?;
        if user_path.len() != self.order.len() {
            return Err(Error::LevelMismatch(format!(
                "user path has {} levels, tree has {}",
                user_path.len(),
                self.order.len()
            )));
        }
        if cover_set.len() < 2 {
            return Err(Error::CoverSizeMismatch {
                attribute: attribute.to_string(),
                k: 2,
                got: cover_set.len(),
            });
        }
        let own = &user_path[level];
        let mut out = BTreeMap::new();
        for v in cover_set.iter().filter(|v| *v != own) {
            let mut sibling = user_path[..level].to_vec();
            sibling.push(v.clone());
            let topics = self
                .topics_under(&sibling)
                .into_iter()
                .map(|t| t.topic.clone())
                .collect();
            out.insert(v.clone(), topics);
        }
        Ok(out)
    }

    /// Full export.
    pub fn view(&self) -> TreeView {
        self.view_filtered(|_| true)
    }

    /// Only the user's path and the subtrees of cover-set siblings at each
    /// sensitive level.
    pub fn pruned_view(&self, profile: &UserProfile) -> TreeView {
        let user_path = profile.persona_path();
        let mut keep_roots: Vec<Vec<String>> = Vec::new();
        for s in &profile.sensitive {
            let Ok(level) = self.level_of(&s.attr) else { continue };
            if user_path.len() <= level {
                continue;
            }
            for v in &s.cover_set {
                let mut p = user_path[..level].to_vec();
                p.push(v.clone());
                keep_roots.push(p);
            }
        }
        self.view_filtered(|path| {
            user_path.starts_with(path) || keep_roots.iter().any(|r| path.starts_with(r))
        })
    }

    fn view_filtered(&self, keep: impl Fn(&[String]) -> bool) -> TreeView {
        TreeView {
            order: self.order.clone(),
            built_at_generation: self.built_at_generation,
            nodes: self
                .nodes
                .iter()
                .filter(|(p, _)| keep(p))
                .map(|(path, node)| NodeView {
                    path: path.clone(),
                    topics: node.topics.iter().map(|t| t.topic.clone()).collect(),
                    counts: node.topics.iter().map(|t| t.post_count).collect(),
                })
                .collect(),
        }
    }

    /// Indented text rendering, one node per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (path, node) in &self.nodes {
            let indent = "  ".repeat(path.len());
            let label = if path.is_empty() {
                "(root)".to_string()
            } else {
                format!("{}={}", self.order[path.len() - 1], path[path.len() - 1])
            };
            let topics: Vec<String> = node
                .topics
                .iter()
                .map(|t| format!("#{}({})", t.topic, t.post_count))
                .collect();
            let _ = writeln!(out, "{indent}{label} [{}]", topics.join(" "));
        }
        out
    }
}

/// The tree currently in use, swapped atomically when a new one is built.
/// Readers keep whichever `Arc` they obtained.
pub struct ActiveTree {
    slot: RwLock<Arc<TopicTree>>,
}

impl ActiveTree {
    pub fn new(tree: TopicTree) -> Self {
        ActiveTree {
            slot: RwLock::new(Arc::new(tree)),
        }
    }

    pub fn current(&self) -> Arc<TopicTree> {
        Arc::clone(&self.slot.read().expect("tree lock"))
    }

    pub fn swap(&self, tree: TopicTree) -> Arc<TopicTree> {
        std::mem::replace(&mut *self.slot.write().expect("tree lock"), Arc::new(tree))
    }
}
