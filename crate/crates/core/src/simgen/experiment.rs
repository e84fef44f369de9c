use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::RepoSnapshot;
use crate::error::{Error, Result};
use crate::inference::{persona_shares, ConnectionCategory, Estimate};
use crate::model::{Persona, SensitiveSetting, UserProfile};
use crate::suggest::{accept, choose_cover_set, open_group, suggest, GroupState, PostGroup, Strategy, SuggestConfig};
use crate::taxonomy::{build_tree, LinkParams, TopicTree};

pub const CSV_HEADER: &str = "topic,category,k,suggestions,delta_before,delta_after,persona_argmax_changed,margin_shift";

/// Knobs of one obfuscation-cost run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub attribute: String,
    pub k: usize,
    pub delta: f64,
    pub category: ConnectionCategory,
    /// k used to bucket topics into connection-strength categories.
    pub connection_k: usize,
    pub budget: usize,
    pub strategy: Strategy,
    pub epsilon_p: f64,
    pub link: LinkParams,
}

impl ExperimentConfig {
    pub fn new(attribute: impl Into<String>, k: usize, delta: f64, category: ConnectionCategory) -> Self {
        ExperimentConfig {
            attribute: attribute.into(),
            k,
            delta,
            category,
            connection_k: 3,
            budget: 20,
            strategy: Strategy::Dependent,
            epsilon_p: crate::suggest::DEFAULT_EPSILON_P,
            link: LinkParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RowOutcome {
    Satisfied,
    BudgetExhausted,
    NoCandidates,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentRow {
    pub topic: String,
    pub category: ConnectionCategory,
    pub k: usize,
    pub suggestions: usize,
    pub delta_before: f64,
    pub delta_after: f64,
    pub persona_argmax_changed: bool,
    /// Largest drop of a public attribute's top-1 margin (negative when
    /// every public margin grew).
    pub margin_shift: f64,
    pub outcome: RowOutcome,
    /// Sensitive delta after each accepted topic, starting with the original.
    pub trajectory: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSummary {
    pub rows: usize,
    pub satisfied: usize,
    pub failures: usize,
    pub mean_suggestions: f64,
    pub mean_margin_shift: f64,
    pub argmax_changed_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentResult {
    pub attribute: String,
    pub k: usize,
    pub delta: f64,
    pub category: ConnectionCategory,
    pub strategy: Strategy,
    pub cover_set: Vec<String>,
    pub summary: ExperimentSummary,
    pub rows: Vec<ExperimentRow>,
}

impl ExperimentResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{:.6},{:.6},{},{:.6}",
                r.topic, r.category, r.k, r.suggestions, r.delta_before, r.delta_after, r.persona_argmax_changed, r.margin_shift
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result serializes")
    }
}

/// Profile for an experiment: `persona` as true values, `attribute` sensitive
/// with an automatically chosen cover set, everything else public.
pub fn experiment_profile(
    snapshot: &RepoSnapshot,
    persona: &BTreeMap<String, String>,
    config: &ExperimentConfig,
) -> Result<(UserProfile, TopicTree)> {
    let schema = snapshot.schema();
    schema.require(&config.attribute)?;
    let profile = UserProfile {
        true_values: persona.clone(),
        public_attrs: schema
            .attribute_ids()
            .filter(|a| *a != config.attribute)
            .map(str::to_string)
            .collect(),
        sensitive: vec![SensitiveSetting {
            attr: config.attribute.clone(),
            k: config.k,
            delta: config.delta,
            cover_set: Vec::new(),
        }],
        suggestion_budget: config.budget,
    };
    profile.validate(schema)?;
    let tree = build_tree(&profile, snapshot, config.link)?;
    let profile = choose_cover_set(&profile, &tree)?;
    Ok((profile, tree))
}

/// Topics of `category` whose top posting persona is `persona`.
pub fn select_originals(
    snapshot: &RepoSnapshot,
    persona: &BTreeMap<String, String>,
    category: ConnectionCategory,
    connection_k: usize,
) -> Vec<String> {
    let target: Persona = snapshot
        .schema()
        .attributes()
        .iter()
        .map(|a| persona.get(&a.id).cloned().unwrap_or_default())
        .collect();
    snapshot
        .topics()
        .filter(|stats| {
            let shares = persona_shares(stats);
            shares.first().map(|(p, _)| p) == Some(&target)
                && shares.len() >= connection_k
                && ConnectionCategory::from_delta(shares[0].1 - shares[connection_k - 1].1) == category
        })
        .map(|s| s.topic.clone())
        .collect()
}

fn public_tops(profile: &UserProfile, estimate: &Estimate) -> BTreeMap<String, (Option<String>, f64)> {
    profile
        .public_attrs
        .iter()
        .map(|a| {
            let d = estimate.get(a);
            (a.clone(), (d.and_then(|d| d.top()).map(|(v, _)| v), d.map(|d| d.margin()).unwrap_or(0.0)))
        })
        .collect()
}

fn run_row(
    topic: &str,
    profile: &UserProfile,
    tree: &TopicTree,
    snapshot: &RepoSnapshot,
    config: &ExperimentConfig,
) -> Result<ExperimentRow> {
    let attr = &config.attribute;
    let suggest_config = SuggestConfig {
        max_candidates: 1,
        epsilon_p: config.epsilon_p,
        strategy: config.strategy,
    };
    let (mut group, eval) = open_group(PostGroup::from_topics(topic, &[topic])?, &[], profile, snapshot)?;
    let before = public_tops(profile, &eval.group.estimate);
    let mut trajectory = vec![eval.group.verdict(attr).map(|v| v.delta).unwrap_or(0.0)];
    let mut estimate = eval.group.estimate;
    let mut outcome = match group.state {
        GroupState::Satisfied => RowOutcome::Satisfied,
        _ => RowOutcome::BudgetExhausted,
    };
    while group.state == GroupState::Draft {
        let set = match suggest(&group, &[], profile, tree, snapshot, &suggest_config) {
            Ok(set) => set,
            Err(Error::NoCandidates) => {
                outcome = RowOutcome::NoCandidates;
                break;
            }
            Err(e) => return Err(e),
        };
        let pick = set.entries[0].topic.clone();
        let (next, eval) = accept(&group, &set, &pick, &[], profile, snapshot)?;
        trajectory.push(eval.group.verdict(attr).map(|v| v.delta).unwrap_or(0.0));
        estimate = eval.group.estimate;
        group = next;
        outcome = match group.state {
            GroupState::Satisfied => RowOutcome::Satisfied,
            _ => RowOutcome::BudgetExhausted,
        };
    }
    let after = public_tops(profile, &estimate);
    let persona_argmax_changed = before.iter().any(|(a, (top, _))| after[a].0 != *top);
    let margin_shift = before
        .iter()
        .map(|(a, (_, m))| m - after[a].1)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(ExperimentRow {
        topic: topic.to_string(),
        category: config.category,
        k: config.k,
        suggestions: group.accepted_obfuscations.len(),
        delta_before: trajectory[0],
        delta_after: *trajectory.last().expect("non-empty"),
        persona_argmax_changed,
        margin_shift: if margin_shift.is_finite() { margin_shift } else { 0.0 },
        outcome,
        trajectory,
    })
}

fn summarize(rows: &[ExperimentRow]) -> ExperimentSummary {
    let n = rows.len();
    let mean = |f: &dyn Fn(&ExperimentRow) -> f64| {
        if n == 0 { 0.0 } else { rows.iter().map(f).sum::<f64>() / n as f64 }
    };
    ExperimentSummary {
        rows: n,
        satisfied: rows.iter().filter(|r| r.outcome == RowOutcome::Satisfied).count(),
        failures: rows.iter().filter(|r| r.outcome != RowOutcome::Satisfied).count(),
        mean_suggestions: mean(&|r| r.suggestions as f64),
        mean_margin_shift: mean(&|r| r.margin_shift),
        argmax_changed_rate: mean(&|r| if r.persona_argmax_changed { 1.0 } else { 0.0 }),
    }
}

/// Opens a group for every original topic of the chosen category and runs
/// the suggest/accept loop on it. Rows come back in topic order.
pub fn run_obfuscation_experiment(
    snapshot: &RepoSnapshot,
    persona: &BTreeMap<String, String>,
    config: &ExperimentConfig,
) -> Result<ExperimentResult> {
    let (profile, tree) = experiment_profile(snapshot, persona, config)?;
    let originals = select_originals(snapshot, persona, config.category, config.connection_k);
    let rows = originals
        .par_iter()
        .map(|t| run_row(t, &profile, &tree, snapshot, config))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentResult {
        attribute: config.attribute.clone(),
        k: config.k,
        delta: config.delta,
        category: config.category,
        strategy: config.strategy,
        cover_set: profile.sensitive[0].cover_set.clone(),
        summary: summarize(&rows),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KSweep {
    pub results: Vec<ExperimentResult>,
    pub means: Vec<(usize, f64)>,
    /// Mean suggestions never decrease as k grows.
    pub monotone: bool,
}

/// The same experiment for several cover sizes.
pub fn run_k_sweep(
    snapshot: &RepoSnapshot,
    persona: &BTreeMap<String, String>,
    ks: &[usize],
    config: &ExperimentConfig,
) -> Result<KSweep> {
    let results = ks
        .iter()
        .map(|&k| {
            let cfg = ExperimentConfig { k, ..config.clone() };
            run_obfuscation_experiment(snapshot, persona, &cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let means: Vec<(usize, f64)> = results.iter().map(|r| (r.k, r.summary.mean_suggestions)).collect();
    let mut sorted = means.clone();
    sorted.sort_by_key(|(k, _)| *k);
    let monotone = sorted.windows(2).all(|w| w[1].1 >= w[0].1);
    Ok(KSweep { results, means, monotone })
}
