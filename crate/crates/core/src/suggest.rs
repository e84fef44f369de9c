//! Suggestion side: evaluate a pending post group against the simulated
//! adversary and greedily propose obfuscation topics until every sensitive
//! attribute is indistinguishable within its cover set.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::RepoSnapshot;
use crate::error::{Error, Result};
use crate::inference::{aggregate, check, Estimate, InferenceReport, SensitiveVerdict};
use crate::model::{normalize_topic, UserProfile};
use crate::taxonomy::{independent_baseline, TopicTree};

/// Largest tolerated drop of a public attribute's top-1 margin per accepted topic.
pub const DEFAULT_EPSILON_P: f64 = 0.02;
pub const DEFAULT_MAX_CANDIDATES: usize = 10;

/// A post waiting to be published.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingPost {
    pub topics: Vec<String>,
    #[serde(default)]
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GroupState {
    Draft,
    Satisfied,
    BudgetExhausted,
}

/// `Remediation` groups repair a timeline whose posts are already public, so
/// only their obfuscation posts get queued.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKind {
    Post,
    Remediation,
}

/// An original post plus the obfuscation topics accepted for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostGroup {
    pub id: String,
    pub kind: GroupKind,
    pub original: PendingPost,
    pub accepted_obfuscations: Vec<String>,
    pub state: GroupState,
}

impl PostGroup {
    /// A draft group around `post`; topics are normalized and deduplicated.
    pub fn new(id: impl Into<String>, post: PendingPost) -> Result<Self> {
        let mut topics: Vec<String> = Vec::with_capacity(post.topics.len());
        for raw in &post.topics {
            let t = normalize_topic(raw)?;
            if !topics.contains(&t) {
                topics.push(t);
            }
        }
        let id = id.into();
        if topics.is_empty() {
            return Err(Error::EmptyTopics(id));
        }
        Ok(PostGroup {
            id,
            kind: GroupKind::Post,
            original: PendingPost { topics, text: post.text },
            accepted_obfuscations: Vec::new(),
            state: GroupState::Draft,
        })
    }

    /// Convenience constructor for a post that is just a list of topics.
    pub fn from_topics<S: AsRef<str>>(id: impl Into<String>, topics: &[S]) -> Result<Self> {
        Self::new(
            id,
            PendingPost {
                topics: topics.iter().map(|t| t.as_ref().to_string()).collect(),
                text: String::new(),
            },
        )
    }

    /// Original topics followed by accepted obfuscation topics.
    pub fn topics(&self) -> Vec<String> {
        self.original
            .topics
            .iter()
            .chain(&self.accepted_obfuscations)
            .cloned()
            .collect()
    }

    pub fn contains(&self, topic: &str) -> bool {
        self.original.topics.iter().any(|t| t == topic) || self.accepted_obfuscations.iter().any(|t| t == topic)
    }
}

/// Deduplicated, sorted union of the topics of `groups`.
pub fn timeline_topics<'a>(groups: impl IntoIterator<Item = &'a PostGroup>) -> Vec<String> {
    let set: BTreeSet<String> = groups.into_iter().flat_map(PostGroup::topics).collect();
    set.into_iter().collect()
}

/// Adversary view of a group alone and of the whole timeline including it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub group: InferenceReport,
    pub timeline: InferenceReport,
}

impl Evaluation {
    pub fn satisfied(&self) -> bool {
        self.group.satisfied() && self.timeline.satisfied()
    }
}

/// Runs the attack on the group's topics and on the union of `timeline` and
/// the group.
pub fn evaluate(
    group: &PostGroup,
    timeline: &[PostGroup],
    profile: &UserProfile,
    snapshot: &RepoSnapshot,
) -> Result<Evaluation> {
    let group_report = InferenceReport::for_topics(profile, &group.topics(), snapshot)?;
    let scope = timeline_topics(timeline.iter().chain(std::iter::once(group)));
    let timeline_report = InferenceReport::for_topics(profile, &scope, snapshot)?;
    Ok(Evaluation {
        group: group_report,
        timeline: timeline_report,
    })
}

/// Where candidates come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Siblings in the dependent tree, with the persona filter applied.
    #[default]
    Dependent,
    /// Any topic independently linked to an alternate value; no persona filter.
    IndependentBaseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SuggestConfig {
    pub max_candidates: usize,
    pub epsilon_p: f64,
    pub strategy: Strategy,
}

impl Default for SuggestConfig {
    fn default() -> Self {
        SuggestConfig {
            max_candidates: DEFAULT_MAX_CANDIDATES,
            epsilon_p: DEFAULT_EPSILON_P,
            strategy: Strategy::Dependent,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Suggestion {
    pub topic: String,
    pub post_count: u64,
    /// The cover value this topic is linked to, per violated attribute.
    pub alternates: BTreeMap<String, String>,
    /// Delta of every sensitive attribute if this topic were accepted.
    pub projected: BTreeMap<String, f64>,
    /// Reduction of the worst violated delta.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuggestionSet {
    pub generation: u64,
    /// Topics of the group the set was computed for.
    pub group_topics: Vec<String>,
    pub worst_attr: String,
    pub worst_delta: f64,
    pub entries: Vec<Suggestion>,
}

impl SuggestionSet {
    pub fn get(&self, topic: &str) -> Option<&Suggestion> {
        self.entries.iter().find(|e| e.topic == topic)
    }
}

fn worst_violation(verdicts: &[SensitiveVerdict]) -> Option<&SensitiveVerdict> {
    verdicts
        .iter()
        .filter(|v| v.violated())
        .max_by(|a, b| a.delta.total_cmp(&b.delta).then_with(|| b.attr.cmp(&a.attr)))
}

/// Ranked obfuscation candidates for `group`.
///
/// The working scope is the group itself while it is violated, and the whole
/// timeline once only the timeline is. A candidate must strictly lower the
/// worst violated delta, must not push any other violated delta up, must not
/// violate a currently clean attribute, and (for the dependent strategy) must
/// keep every public attribute's argmax and erode its margin by at most
/// `epsilon_p`.
pub fn suggest(
    group: &PostGroup,
    timeline: &[PostGroup],
    profile: &UserProfile,
    tree: &TopicTree,
    snapshot: &RepoSnapshot,
    config: &SuggestConfig,
) -> Result<SuggestionSet> {
    let eval = evaluate(group, timeline, profile, snapshot)?;
    let report = if !eval.group.satisfied() {
        &eval.group
    } else if !eval.timeline.satisfied() {
        &eval.timeline
    } else {
        return Err(Error::AlreadySatisfied);
    };
    let scope = report.topics_used.clone();
    let worst = worst_violation(&report.sensitive).expect("scope is violated").clone();

    let candidates = gather_candidates(group, &report.sensitive, profile, tree, snapshot, config.strategy)?;

    let mut entries = Vec::new();
    let mut topics = scope.clone();
    topics.push(String::new());
    for (topic, alternates) in candidates {
        if scope.contains(&topic) {
            continue;
        }
        *topics.last_mut().expect("slot") = topic.clone();
        let estimate = aggregate(&topics, snapshot)?;
        let projected = check(profile, &estimate);
        let mut new_worst = 0.0f64;
        let mut admissible = true;
        for (before, after) in report.sensitive.iter().zip(&projected) {
            if before.violated() {
                if after.violated() {
                    new_worst = new_worst.max(after.delta);
                }
                if after.delta > before.delta {
                    admissible = false;
                }
            } else if after.violated() {
                admissible = false;
            }
        }
        let score = worst.delta - new_worst;
        if !admissible || score <= 0.0 {
            continue;
        }
        if config.strategy == Strategy::Dependent
            && !persona_preserved(profile, &report.estimate, &estimate, config.epsilon_p)
        {
            continue;
        }
        entries.push(Suggestion {
            post_count: snapshot.stats(&topic)?.post_count,
            topic,
            alternates,
            projected: projected.iter().map(|v| (v.attr.clone(), v.delta)).collect(),
            score,
        });
    }
    if entries.is_empty() {
        return Err(Error::NoCandidates);
    }
    entries.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| b.post_count.cmp(&a.post_count))
            .then_with(|| a.topic.cmp(&b.topic))
    });
    entries.truncate(config.max_candidates.max(1));
    Ok(SuggestionSet {
        generation: snapshot.generation(),
        group_topics: group.topics(),
        worst_attr: worst.attr,
        worst_delta: worst.delta,
        entries,
    })
}

fn gather_candidates(
    group: &PostGroup,
    verdicts: &[SensitiveVerdict],
    profile: &UserProfile,
    tree: &TopicTree,
    snapshot: &RepoSnapshot,
    strategy: Strategy,
) -> Result<BTreeMap<String, BTreeMap<String, String>>> {
    let user_path = profile.persona_path();
    let mut out: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
    for verdict in verdicts.iter().filter(|v| v.violated()) {
        let setting = profile
            .sensitive_setting(&verdict.attr)
            .ok_or_else(|| Error::UnknownAttribute(verdict.attr.clone()))?;
        if setting.cover_set.is_empty() {
            return Err(Error::MissingCoverSet(setting.attr.clone()));
        }
        match strategy {
            Strategy::Dependent => {
                let siblings = tree.sibling_topics(&user_path, &setting.attr, &setting.cover_set)?;
                for (value, topics) in siblings {
                    for t in topics {
                        if !group.contains(&t) {
                            out.entry(t).or_default().insert(setting.attr.clone(), value.clone());
                        }
                    }
                }
            }
            Strategy::IndependentBaseline => {
                let truth = profile.true_value(&setting.attr).unwrap_or_default();
                let alternates: BTreeSet<&str> = setting.alternates(truth).collect();
                for t in snapshot.topic_ids() {
                    if group.contains(t) {
                        continue;
                    }
                    if let Some(v) = independent_baseline(t, &setting.attr, snapshot, tree.params())? {
                        if alternates.contains(v.as_str()) {
                            out.entry(t.to_string()).or_default().insert(setting.attr.clone(), v);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

fn persona_preserved(
    profile: &UserProfile,
    before: &Estimate,
    after: &Estimate,
    epsilon_p: f64,
) -> bool {
    profile.public_attrs.iter().all(|attr| {
        let Some(b) = before.get(attr) else { return true };
        let Some(a) = after.get(attr) else { return false };
        b.top().map(|(v, _)| v) == a.top().map(|(v, _)| v) && b.margin() - a.margin() <= epsilon_p
    })
}

/// Appends `topic` from `set` to the group and re-evaluates it.
pub fn accept(
    group: &PostGroup,
    set: &SuggestionSet,
    topic: &str,
    timeline: &[PostGroup],
    profile: &UserProfile,
    snapshot: &RepoSnapshot,
) -> Result<(PostGroup, Evaluation)> {
    let topic = normalize_topic(topic)?;
    if group.contains(&topic) {
        return Err(Error::DuplicateTopic(topic));
    }
    match group.state {
        GroupState::Satisfied => return Err(Error::AlreadySatisfied),
        GroupState::BudgetExhausted => return Err(Error::BudgetExhausted(profile.suggestion_budget)),
        GroupState::Draft => {}
    }
    if set.generation != snapshot.generation() {
        return Err(Error::StaleSuggestion(format!(
            "set was computed at generation {}, snapshot is at {}",
            set.generation,
            snapshot.generation()
        )));
    }
    if set.group_topics != group.topics() {
        return Err(Error::StaleSuggestion("set was computed for a different group state".into()));
    }
    if set.get(&topic).is_none() {
        return Err(Error::StaleSuggestion(format!("`{topic}` is not in the latest suggestion set")));
    }
    if group.accepted_obfuscations.len() >= profile.suggestion_budget {
        return Err(Error::BudgetExhausted(profile.suggestion_budget));
    }
    let mut next = group.clone();
    next.accepted_obfuscations.push(topic);
    let eval = evaluate(&next, timeline, profile, snapshot)?;
    next.state = settle(&next, &eval, profile);
    Ok((next, eval))
}

fn settle(group: &PostGroup, eval: &Evaluation, profile: &UserProfile) -> GroupState {
    if eval.satisfied() {
        GroupState::Satisfied
    } else if group.accepted_obfuscations.len() >= profile.suggestion_budget {
        GroupState::BudgetExhausted
    } else {
        GroupState::Draft
    }
}

/// Evaluates a fresh group and sets its initial state.
pub fn open_group(
    mut group: PostGroup,
    timeline: &[PostGroup],
    profile: &UserProfile,
    snapshot: &RepoSnapshot,
) -> Result<(PostGroup, Evaluation)> {
    let eval = evaluate(&group, timeline, profile, snapshot)?;
    group.state = settle(&group, &eval, profile);
    Ok((group, eval))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimelineVerdict {
    pub satisfied: bool,
    pub report: InferenceReport,
    pub violated: Vec<String>,
}

impl TimelineVerdict {
    /// A group that repairs the timeline: its "original" is the timeline's
    /// topic set, so its group scope equals the timeline scope.
    pub fn remediation_group(&self, id: impl Into<String>) -> Option<PostGroup> {
        if self.satisfied {
            return None;
        }
        Some(PostGroup {
            id: id.into(),
            kind: GroupKind::Remediation,
            original: PendingPost {
                topics: self.report.topics_used.clone(),
                text: String::new(),
            },
            accepted_obfuscations: Vec::new(),
            state: GroupState::Draft,
        })
    }
}

/// Re-runs the attack over the deduplicated topics of the whole timeline.
pub fn timeline_guard(timeline: &[PostGroup], profile: &UserProfile, snapshot: &RepoSnapshot) -> Result<TimelineVerdict> {
    let topics = timeline_topics(timeline);
    let report = InferenceReport::for_topics(profile, &topics, snapshot)?;
    let violated: Vec<String> = report.sensitive.iter().filter(|v| v.violated()).map(|v| v.attr.clone()).collect();
    Ok(TimelineVerdict {
        satisfied: violated.is_empty(),
        report,
        violated,
    })
}

/// Fills every empty cover set with the true value plus the `k - 1`
/// alternates whose sibling subtrees hold the most topics (ties by value).
pub fn choose_cover_set(profile: &UserProfile, tree: &TopicTree) -> Result<UserProfile> {
    let mut out = profile.clone();
    let user_path = profile.persona_path();
    for setting in out.sensitive.iter_mut().filter(|s| s.cover_set.is_empty()) {
        let level = tree
            .order()
            .iter()
            .position(|a| *a == setting.attr)
            .ok_or_else(|| Error::LevelMismatch(format!("`{}` is not a level of this tree", setting.attr)))?;
        let truth = profile
            .true_value(&setting.attr)
            .ok_or_else(|| Error::MissingTrueValue(setting.attr.clone()))?
            .to_string();
        let domain = tree.domain_of(&setting.attr).unwrap_or_default().to_vec();
        let mut scored: Vec<(usize, String)> = domain
            .into_iter()
            .filter(|v| *v != truth)
            .map(|v| {
                let mut path = user_path[..level].to_vec();
                path.push(v.clone());
                (tree.topics_under(&path).len(), v)
            })
            .collect();
        scored.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
        setting.cover_set = std::iter::once(truth)
            .chain(scored.into_iter().take(setting.k - 1).map(|(_, v)| v))
            .collect();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{LabeledPost, TopicRepository};
    use crate::fixtures;
    use crate::inference::Verdict;
    use crate::model::AttributeSchema;
    use crate::taxonomy::{build_tree, LinkParams};

    fn setup() -> (UserProfile, RepoSnapshot, TopicTree) {
        let profile = fixtures::profile();
        let snap = fixtures::repository().snapshot();
        let tree = build_tree(&profile, &snap, LinkParams::default()).unwrap();
        (profile, snap, tree)
    }

    /// Running mean of male shares; for a two-value domain the gap is |2m - 1|.
    fn running_delta(shares: &[f64]) -> f64 {
        let m = shares.iter().sum::<f64>() / shares.len() as f64;
        (2.0 * m - 1.0).abs()
    }

    fn repo_from(schema: &AttributeSchema, attrs: &[&str], parts: &[(&str, &[&str], usize)]) -> TopicRepository {
        let mut posts = Vec::new();
        for (topic, values, n) in parts {
            for _ in 0..*n {
                posts.push(LabeledPost {
                    post_id: format!("q{}", posts.len()),
                    topics: vec![topic.to_string()],
                    labels: attrs.iter().zip(values.iter()).map(|(a, v)| (a.to_string(), v.to_string())).collect(),
                    timestamp: 0,
                });
            }
        }
        let mut repo = TopicRepository::new(schema.clone());
        repo.ingest_batch(&posts).unwrap();
        repo
    }

    #[test]
    fn walkthrough_sequence() {
        let (profile, snap, tree) = setup();
        let (mut group, eval) = open_group(
            PostGroup::from_topics("g1", &["#GoWarriors"]).unwrap(),
            &[],
            &profile,
            &snap,
        )
        .unwrap();
        let v = eval.group.verdict("gender").unwrap();
        assert_eq!(v.verdict, Verdict::AttackSucceeds);
        assert!((v.delta - 0.43).abs() < 1e-9);
        assert_eq!(group.state, GroupState::Draft);

        let mut shares = vec![0.715];
        let mut seen = Vec::new();
        for step in 0..3 {
            let set = suggest(&group, &[], &profile, &tree, &snap, &SuggestConfig::default()).unwrap();
            assert!(set.get(fixtures::OFF_PERSONA_TOPIC).is_none());
            assert!(set.get(fixtures::NEGLIGIBLE_TOPIC).is_none());
            let top = set.entries[0].clone();
            assert_eq!(top.topic, fixtures::SUPPLY_TOPICS[step]);
            assert_eq!(top.alternates["gender"], "female");
            shares.push(0.475);
            let (next, eval) = accept(&group, &set, &top.topic, &[], &profile, &snap).unwrap();
            let delta = eval.group.verdict("gender").unwrap().delta;
            assert!((delta - running_delta(&shares)).abs() < 1e-9);
            assert!((top.projected["gender"] - delta).abs() < 1e-12);
            seen.push((delta * 100.0).round() as i64);
            group = next;
        }
        assert_eq!(seen, vec![19, 11, 7]);
        assert_eq!(group.state, GroupState::Satisfied);
        assert!(matches!(
            suggest(&group, &[], &profile, &tree, &snap, &SuggestConfig::default()),
            Err(Error::AlreadySatisfied)
        ));
    }

    #[test]
    fn negligible_topic_needs_nothing() {
        let (profile, snap, tree) = setup();
        let (group, eval) = open_group(
            PostGroup::from_topics("g", &[fixtures::NEGLIGIBLE_TOPIC]).unwrap(),
            &[],
            &profile,
            &snap,
        )
        .unwrap();
        assert_eq!(eval.group.verdict("gender").unwrap().verdict, Verdict::Indistinguishable);
        assert_eq!(group.state, GroupState::Satisfied);
        assert!(matches!(
            suggest(&group, &[], &profile, &tree, &snap, &SuggestConfig::default()),
            Err(Error::AlreadySatisfied)
        ));
    }

    #[test]
    fn no_inference_without_observations() {
        let schema = fixtures::schema();
        let repo = repo_from(&schema, &["ethnicity", "location"], &[("quiet", &["white", "ca"], 40)]);
        let group = PostGroup::from_topics("g", &["quiet"]).unwrap();
        let eval = evaluate(&group, &[], &fixtures::profile(), &repo.snapshot()).unwrap();
        assert_eq!(eval.group.verdict("gender").unwrap().verdict, Verdict::NoInference);
        assert!(eval.satisfied());
    }

    #[test]
    fn unknown_topic_is_reported() {
        let (profile, snap, _) = setup();
        let group = PostGroup::from_topics("g", &["nosuchtopic"]).unwrap();
        assert!(matches!(evaluate(&group, &[], &profile, &snap), Err(Error::UnknownTopic(_))));
    }

    #[test]
    fn accept_guards() {
        let (profile, snap, tree) = setup();
        let (group, _) = open_group(PostGroup::from_topics("g", &["gowarriors"]).unwrap(), &[], &profile, &snap).unwrap();
        let set = suggest(&group, &[], &profile, &tree, &snap, &SuggestConfig::default()).unwrap();
        assert!(matches!(
            accept(&group, &set, "gowarriors", &[], &profile, &snap),
            Err(Error::DuplicateTopic(_))
        ));
        assert!(matches!(
            accept(&group, &set, "coffee", &[], &profile, &snap),
            Err(Error::StaleSuggestion(_))
        ));
        let (next, _) = accept(&group, &set, "womenintech", &[], &profile, &snap).unwrap();
        assert!(matches!(
            accept(&next, &set, "womenintech", &[], &profile, &snap),
            Err(Error::DuplicateTopic(_))
        ));
        assert!(matches!(
            accept(&next, &set, "organicfood", &[], &profile, &snap),
            Err(Error::StaleSuggestion(_))
        ));

        let mut repo = fixtures::repository();
        repo.ingest_batch(&[LabeledPost::parse_line(
            r#"{"post_id":"late","topics":["coffee"],"labels":{"gender":"male"},"ts":9}"#,
        )
        .unwrap()])
        .unwrap();
        assert!(matches!(
            accept(&group, &set, "womenintech", &[], &profile, &repo.snapshot()),
            Err(Error::StaleSuggestion(_))
        ));
    }

    #[test]
    fn budget_exhaustion() {
        let (mut profile, snap, tree) = setup();
        profile.suggestion_budget = 1;
        let (group, _) = open_group(PostGroup::from_topics("g", &["gowarriors"]).unwrap(), &[], &profile, &snap).unwrap();
        let set = suggest(&group, &[], &profile, &tree, &snap, &SuggestConfig::default()).unwrap();
        let (next, eval) = accept(&group, &set, &set.entries[0].topic, &[], &profile, &snap).unwrap();
        assert!(!eval.satisfied());
        assert_eq!(next.state, GroupState::BudgetExhausted);
        let set2 = SuggestionSet {
            group_topics: next.topics(),
            ..set.clone()
        };
        assert!(matches!(
            accept(&next, &set2, "organicfood", &[], &profile, &snap),
            Err(Error::BudgetExhausted(1))
        ));
    }

    #[test]
    fn independent_baseline_damages_persona() {
        let (profile, snap, tree) = setup();
        let group = PostGroup::from_topics("g", &["gowarriors"]).unwrap();
        let config = SuggestConfig {
            strategy: Strategy::IndependentBaseline,
            ..SuggestConfig::default()
        };
        let set = suggest(&group, &[], &profile, &tree, &snap, &config).unwrap();
        assert_eq!(set.entries[0].topic, fixtures::OFF_PERSONA_TOPIC);
        let (_, eval) = accept(&group, &set, fixtures::OFF_PERSONA_TOPIC, &[], &profile, &snap).unwrap();
        let top = eval.group.estimate.get("ethnicity").unwrap().top().unwrap().0;
        assert_eq!(top, "black");
    }

    #[test]
    fn no_candidates_when_siblings_are_empty() {
        let schema = fixtures::schema();
        let attrs = ["gender", "ethnicity", "location"];
        let repo = repo_from(&schema, &attrs, &[("gowarriors", &["male", "white", "ca"], 80)]);
        let snap = repo.snapshot();
        let profile = fixtures::profile();
        let tree = build_tree(&profile, &snap, LinkParams::default()).unwrap();
        let group = PostGroup::from_topics("g", &["gowarriors"]).unwrap();
        assert!(matches!(
            suggest(&group, &[], &profile, &tree, &snap, &SuggestConfig::default()),
            Err(Error::NoCandidates)
        ));
    }

    #[test]
    fn missing_cover_set_is_rejected() {
        let (mut profile, snap, tree) = setup();
        profile.sensitive[0].cover_set.clear();
        let group = PostGroup::from_topics("g", &["gowarriors"]).unwrap();
        assert!(matches!(
            suggest(&group, &[], &profile, &tree, &snap, &SuggestConfig::default()),
            Err(Error::MissingCoverSet(_))
        ));
        let chosen = choose_cover_set(&profile, &tree).unwrap();
        assert_eq!(chosen.sensitive[0].cover_set, vec!["male", "female"]);
    }

    #[test]
    fn timeline_guard_recomputes_union() {
        let schema = fixtures::schema();
        let attrs = ["gender", "ethnicity", "location"];
        let mut parts: Vec<(&str, &[&str], usize)> = Vec::new();
        parts.push(("x", &["male", "white", "ca"], 90));
        parts.push(("x", &["female", "white", "ca"], 10));
        for t in ["y", "z"] {
            parts.push((t, &["male", "white", "ca"], 15));
            parts.push((t, &["female", "white", "ca"], 85));
        }
        let snap = repo_from(&schema, &attrs, &parts).snapshot();
        let profile = fixtures::profile();
        let a = PostGroup::from_topics("a", &["x", "y"]).unwrap();
        let b = PostGroup::from_topics("b", &["x", "z"]).unwrap();
        for g in [&a, &b] {
            let verdict = timeline_guard(std::slice::from_ref(g), &profile, &snap).unwrap();
            assert!(verdict.satisfied);
        }
        let timeline = [a, b];
        let verdict = timeline_guard(&timeline, &profile, &snap).unwrap();
        // Union {x, y, z}: male share (0.9 + 0.15 + 0.15) / 3 = 0.4.
        assert!(!verdict.satisfied);
        assert_eq!(verdict.violated, vec!["gender"]);
        assert!((verdict.report.verdict("gender").unwrap().delta - 0.2).abs() < 1e-12);
        let remediation = verdict.remediation_group("r").unwrap();
        assert_eq!(remediation.kind, GroupKind::Remediation);
        assert_eq!(remediation.original.topics, vec!["x", "y", "z"]);

        assert!(timeline_guard(&[], &profile, &snap).unwrap().satisfied);
    }

    #[test]
    fn timeline_scope_includes_current_group() {
        let (profile, snap, tree) = setup();
        let mut earlier = PostGroup::from_topics("a", &["gowarriors", "coffee"]).unwrap();
        earlier.state = GroupState::Satisfied;
        let group = PostGroup::from_topics("b", &["gowarriors", "womenintech", "organicfood", "bodybuilding"]).unwrap();
        let eval = evaluate(&group, std::slice::from_ref(&earlier), &profile, &snap).unwrap();
        assert!(eval.group.satisfied());
        assert_eq!(eval.timeline.topics_used.len(), 5);
        let set = suggest(&group, std::slice::from_ref(&earlier), &profile, &tree, &snap, &SuggestConfig::default());
        // Timeline is (0.715 + 0.52 + 3 * 0.475) / 5 = 0.532, already clean.
        assert!(matches!(set, Err(Error::AlreadySatisfied)));
    }

    #[test]
    fn cover_set_prefers_populated_siblings() {
        let schema = AttributeSchema::from_json(
            r#"{"attributes":[{"id":"party","domain":["democrat","republican"]},
                {"id":"location","domain":["ca","ny","il","tx"]}]}"#,
        )
        .unwrap();
        let attrs = ["party", "location"];
        let repo = repo_from(
            &schema,
            &attrs,
            &[
                ("nyc", &["democrat", "ny"], 60),
                ("subway", &["democrat", "ny"], 40),
                ("chicago", &["democrat", "il"], 50),
                ("houston", &["democrat", "tx"], 45),
                ("oilfield", &["republican", "tx"], 45),
            ],
        );
        let profile = UserProfile::from_json(
            r#"{"true_values":{"party":"democrat","location":"ca"},"public":["party"],
                "sensitive":[{"attr":"location","k":3}]}"#,
            &schema,
        )
        .unwrap();
        let tree = build_tree(&profile, &repo.snapshot(), LinkParams::default()).unwrap();
        let chosen = choose_cover_set(&profile, &tree).unwrap();
        assert_eq!(chosen.sensitive[0].cover_set, vec!["ca", "ny", "il"]);
        chosen.validate(&schema).unwrap();
    }
}
