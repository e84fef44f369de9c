use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::LabeledPost;
use crate::error::{Error, Result};
use crate::inference::{persona_delta, persona_shares, ConnectionCategory};
use crate::model::{normalize_value, AttributeSchema, Persona, TopicStats};

/// Largest accepted gap between requested and realized connection strength.
pub const CALIBRATION_TOLERANCE: f64 = 0.02;
const MAX_PERSONAS: usize = 100_000;
const GRID_STEPS: usize = 400;

/// How a category's topics pick their target persona.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    /// The plan persona.
    Plan,
    /// Any persona other than the plan persona.
    Random,
    /// A persona holding one of the plan's alternates for the sensitive
    /// attribute but differing from the plan persona elsewhere.
    OffPersona,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategorySpec {
    pub category: ConnectionCategory,
    pub count: usize,
    pub delta: [f64; 2],
    #[serde(default = "default_target")]
    pub target: TargetKind,
    /// Topic id prefix; defaults to the category name.
    #[serde(default)]
    pub prefix: Option<String>,
}

fn default_target() -> TargetKind {
    TargetKind::Plan
}

/// Topics that give an experiment something to suggest: for every alternate
/// value, `topics_per_value` topics posted by the plan persona's public
/// prefix and linked to that alternate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupplyPlan {
    pub persona: BTreeMap<String, String>,
    pub sensitive: String,
    /// Empty means every other value of the sensitive attribute.
    #[serde(default)]
    pub alternates: Vec<String>,
    pub topics_per_value: usize,
    pub delta: [f64; 2],
    /// Share of a supply topic's background drawn from the plan's public
    /// prefix; the rest follows the global background.
    #[serde(default = "default_affinity")]
    pub affinity: f64,
}

fn default_affinity() -> f64 {
    0.8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecDoc {
    schema: serde_json::Value,
    #[serde(default)]
    persona_weights: BTreeMap<String, BTreeMap<String, f64>>,
    #[serde(default)]
    categories: Vec<CategorySpec>,
    posts_per_topic: [usize; 2],
    #[serde(default = "default_connection_k")]
    connection_k: usize,
    #[serde(default)]
    plan: Option<SupplyPlan>,
    #[serde(default)]
    seed: u64,
}

fn default_connection_k() -> usize {
    3
}

/// Everything the synthetic generator needs.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    pub schema: AttributeSchema,
    /// Per-attribute value weights; the background persona distribution is
    /// their product. Missing attributes are uniform.
    pub persona_weights: BTreeMap<String, BTreeMap<String, f64>>,
    pub categories: Vec<CategorySpec>,
    pub posts_per_topic: [usize; 2],
    pub connection_k: usize,
    pub plan: Option<SupplyPlan>,
    pub seed: u64,
}

impl GeneratorSpec {
    pub fn from_json(document: &str) -> Result<Self> {
        let doc: SpecDoc = serde_json::from_str(document)?;
        let schema = AttributeSchema::from_json(&doc.schema.to_string())?;
        let spec = GeneratorSpec {
            schema,
            persona_weights: doc.persona_weights,
            categories: doc.categories,
            posts_per_topic: doc.posts_per_topic,
            connection_k: doc.connection_k,
            plan: doc.plan,
            seed: doc.seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        let doc = SpecDoc {
            schema: serde_json::from_str(&self.schema.to_json()).expect("schema json"),
            persona_weights: self.persona_weights.clone(),
            categories: self.categories.clone(),
            posts_per_topic: self.posts_per_topic,
            connection_k: self.connection_k,
            plan: self.plan.clone(),
            seed: self.seed,
        };
        serde_json::to_string_pretty(&doc).expect("spec serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InfeasibleSpec(m));
        if self.schema.persona_count() > MAX_PERSONAS {
            return bad(format!("more than {MAX_PERSONAS} personas"));
        }
        for (attr, weights) in &self.persona_weights {
            let a = self.schema.require(attr)?;
            for (v, w) in weights {
                if !a.contains(v) {
                    return Err(Error::UnknownValue {
                        attribute: attr.clone(),
                        value: v.clone(),
                    });
                }
                if !w.is_finite() || *w < 0.0 {
                    return bad(format!("weight of {attr}={v} must be a non-negative number"));
                }
            }
            if weights.values().sum::<f64>() <= 0.0 {
                return bad(format!("weights of `{attr}` sum to zero"));
            }
        }
        let [lo, hi] = self.posts_per_topic;
        if lo == 0 || lo > hi {
            return bad(format!("posts_per_topic [{lo}, {hi}] is not a valid range"));
        }
        if self.connection_k < 2 || self.connection_k > self.schema.persona_count() {
            return bad(format!("connection_k={} is out of range", self.connection_k));
        }
        let mut prefixes = BTreeSet::new();
        for c in &self.categories {
            check_range(c.delta, Some(c.category))?;
            let prefix = c.prefix.clone().unwrap_or_else(|| c.category.as_str().to_string());
            normalize_value(&prefix)?;
            if !prefixes.insert(prefix.clone()) || prefix == "supply" {
                return bad(format!("topic prefix `{prefix}` is used twice"));
            }
            if c.target != TargetKind::Random && self.plan.is_none() && c.count > 0 {
                return bad("plan and off-persona targets need a plan".into());
            }
        }
        if let Some(plan) = &self.plan {
            self.schema.require(&plan.sensitive)?;
            for attr in plan.persona.keys() {
                self.schema.require(attr)?;
            }
            for a in self.schema.attributes() {
                let v = plan
                    .persona
                    .get(&a.id)
                    .ok_or_else(|| Error::MissingTrueValue(a.id.clone()))?;
                self.schema.check_value(&a.id, v)?;
            }
            let truth = &plan.persona[&plan.sensitive];
            for alt in &plan.alternates {
                self.schema.check_value(&plan.sensitive, alt)?;
                if alt == truth {
                    return bad("the plan's own value cannot be an alternate".into());
                }
            }
            check_range(plan.delta, None)?;
            if !(0.0..=1.0).contains(&plan.affinity) {
                return bad(format!("affinity {} is not within [0, 1]", plan.affinity));
            }
        }
        Ok(())
    }

    fn plan_alternates(&self) -> Vec<String> {
        let Some(plan) = &self.plan else { return Vec::new() };
        if !plan.alternates.is_empty() {
            return plan.alternates.clone();
        }
        let truth = &plan.persona[&plan.sensitive];
        self.schema
            .attribute(&plan.sensitive)
            .map(|a| a.domain.iter().filter(|v| *v != truth).cloned().collect())
            .unwrap_or_default()
    }

    fn plan_persona(&self) -> Option<Persona> {
        let plan = self.plan.as_ref()?;
        Some(self.schema.attributes().iter().map(|a| plan.persona[&a.id].clone()).collect())
    }
}

fn check_range(range: [f64; 2], category: Option<ConnectionCategory>) -> Result<()> {
    let [lo, hi] = range;
    if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
        return Err(Error::InfeasibleSpec(format!("delta range [{lo}, {hi}] is not within [0, 1]")));
    }
    if let Some(c) = category {
        let (blo, bhi) = c.band();
        if lo < blo || hi > bhi || (hi == bhi && bhi < 1.0) {
            return Err(Error::InfeasibleSpec(format!(
                "delta range [{lo}, {hi}] leaves the {c} band [{blo}, {bhi})"
            )));
        }
    }
    Ok(())
}

/// One generated topic and how well it hit its target.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneratedTopic {
    pub topic: String,
    pub category: String,
    pub target_persona: Persona,
    pub target_delta: f64,
    pub realized_delta: f64,
    pub posts: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedCorpus {
    pub posts: Vec<LabeledPost>,
    pub topics: Vec<GeneratedTopic>,
}

impl GeneratedCorpus {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for p in &self.posts {
            out.push_str(&p.to_json_line());
            out.push('\n');
        }
        out
    }
}

/// Every persona of the schema with its background weight.
struct PersonaSpace {
    personas: Vec<Persona>,
    background: Vec<f64>,
}

impl PersonaSpace {
    fn new(spec: &GeneratorSpec) -> Self {
        let mut personas: Vec<Persona> = vec![Vec::new()];
        let mut background = vec![1.0];
        for attr in spec.schema.attributes() {
            let weights: Vec<f64> = match spec.persona_weights.get(&attr.id) {
                Some(w) => {
                    let total: f64 = w.values().sum();
                    attr.domain.iter().map(|v| w.get(v).copied().unwrap_or(0.0) / total).collect()
                }
                None => vec![1.0 / attr.domain.len() as f64; attr.domain.len()],
            };
            let mut next_p = Vec::with_capacity(personas.len() * attr.domain.len());
            let mut next_b = Vec::with_capacity(next_p.capacity());
            for (p, b) in personas.iter().zip(&background) {
                for (v, w) in attr.domain.iter().zip(&weights) {
                    let mut q = p.clone();
                    q.push(v.clone());
                    next_p.push(q);
                    next_b.push(b * w);
                }
            }
            personas = next_p;
            background = next_b;
        }
        PersonaSpace { personas, background }
    }

    fn index(&self, persona: &Persona) -> usize {
        self.personas.iter().position(|p| p == persona).expect("persona in space")
    }

    /// The background restricted to personas agreeing with `persona`
    /// everywhere except at attribute position `free`.
    fn conditioned(&self, persona: &Persona, free: usize) -> Vec<f64> {
        let mut out: Vec<f64> = self
            .personas
            .iter()
            .zip(&self.background)
            .map(|(p, b)| {
                let keep = p.iter().zip(persona).enumerate().all(|(i, (a, b))| i == free || a == b);
                if keep { *b } else { 0.0 }
            })
            .collect();
        let total: f64 = out.iter().sum();
        if total > 0.0 {
            out.iter_mut().for_each(|x| *x /= total);
        }
        out
    }
}

/// Mixture along a single knob: negative values blend the background toward
/// uniform, positive values toward a point mass on `target`.
fn mixture(background: &[f64], target: usize, theta: f64, support: &[bool]) -> Vec<f64> {
    let n_support = support.iter().filter(|s| **s).count().max(1) as f64;
    background
        .iter()
        .enumerate()
        .map(|(i, b)| {
            if theta < 0.0 {
                let u = if support[i] { 1.0 / n_support } else { 0.0 };
                (1.0 + theta) * b + (-theta) * u
            } else {
                let point = if i == target { 1.0 } else { 0.0 };
                (1.0 - theta) * b + theta * point
            }
        })
        .collect()
}

/// Top-1 share minus top-`k` share, and whether `target` ranks first.
fn mixture_delta(shares: &[f64], k: usize, target: usize) -> (f64, bool) {
    let mut idx: Vec<usize> = (0..shares.len()).collect();
    idx.sort_by(|&a, &b| shares[b].total_cmp(&shares[a]).then_with(|| a.cmp(&b)));
    let kth = idx.get(k - 1).map(|&i| shares[i]).unwrap_or(0.0);
    (shares[idx[0]] - kth, idx[0] == target)
}

/// Finds a knob value whose mixture has connection strength `goal`,
/// preferring solutions where the target persona ranks first.
fn solve_theta(background: &[f64], target: usize, k: usize, goal: f64, support: &[bool]) -> Option<f64> {
    let eval = |t: f64| mixture_delta(&mixture(background, target, t, support), k, target);
    let grid: Vec<f64> = (0..=GRID_STEPS).map(|i| -1.0 + 2.0 * i as f64 / GRID_STEPS as f64).collect();
    let bracket = |need_top: bool| {
        grid.windows(2).find_map(|w| {
            let (d0, top0) = eval(w[0]);
            let (d1, top1) = eval(w[1]);
            let ok = !need_top || (top0 && top1);
            (ok && (d0 - goal) * (d1 - goal) <= 0.0).then_some((w[0], w[1], d0))
        })
    };
    let (mut lo, mut hi, d_lo) = bracket(true).or_else(|| bracket(false))?;
    let rising = d_lo <= goal;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let (d, _) = eval(mid);
        if (d < goal) == rising {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Integer counts summing to `n` that track `shares` (largest remainder,
/// ties by index).
fn apportion(shares: &[f64], n: usize) -> Vec<usize> {
    let exact: Vec<f64> = shares.iter().map(|s| s * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then_with(|| a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

fn stats_for(topic: &str, space: &PersonaSpace, counts: &[usize]) -> TopicStats {
    let mut stats = TopicStats::new(topic);
    for (p, c) in space.personas.iter().zip(counts) {
        if *c > 0 {
            stats.joint.insert(p.clone(), *c as u64);
        }
    }
    stats.post_count = counts.iter().sum::<usize>() as u64;
    stats
}

struct TopicJob {
    topic: String,
    category: String,
    target: usize,
    goal: f64,
    posts: usize,
    background: Vec<f64>,
    need_top: bool,
}

/// Realizes one topic: solve the knob, apportion, then measure with the
/// inference oracle and nudge the knob if rounding pushed it off target.
fn realize(job: &TopicJob, space: &PersonaSpace, k: usize) -> Result<(Vec<usize>, f64)> {
    let support: Vec<bool> = job.background.iter().map(|b| *b > 0.0).collect();
    let theta = solve_theta(&job.background, job.target, k, job.goal, &support).ok_or_else(|| {
        Error::InfeasibleSpec(format!("`{}` cannot reach connection strength {:.3}", job.topic, job.goal))
    })?;
    let step = 0.25 / job.posts as f64;
    for attempt in 0..41 {
        let offset = if attempt % 2 == 0 { 1.0 } else { -1.0 } * ((attempt + 1) / 2) as f64 * step;
        let t = (theta + offset).clamp(-1.0, 1.0);
        let counts = apportion(&mixture(&job.background, job.target, t, &support), job.posts);
        let stats = stats_for(&job.topic, space, &counts);
        let Ok(realized) = persona_delta(&stats, k) else { continue };
        let on_top = persona_shares(&stats).first().map(|(p, _)| p) == Some(&space.personas[job.target]);
        if (realized - job.goal).abs() <= CALIBRATION_TOLERANCE && (!job.need_top || on_top) {
            return Ok((counts, realized));
        }
    }
    Err(Error::InfeasibleSpec(format!(
        "`{}` misses connection strength {:.3} with {} posts",
        job.topic, job.goal, job.posts
    )))
}

/// Generates a labeled corpus whose topics hit the requested connection
/// strengths. Deterministic for a given spec.
pub fn generate(spec: &GeneratorSpec) -> Result<GeneratedCorpus> {
    spec.validate()?;
    let space = PersonaSpace::new(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let plan_persona = spec.plan_persona();
    let plan_index = plan_persona.as_ref().map(|p| space.index(p));
    let alternates = spec.plan_alternates();
    let sensitive_pos = spec.plan.as_ref().and_then(|p| spec.schema.position(&p.sensitive));

    let mut jobs = Vec::new();
    for c in &spec.categories {
        let prefix = c.prefix.clone().unwrap_or_else(|| c.category.as_str().to_string());
        let candidates: Vec<usize> = match c.target {
            TargetKind::Plan => plan_index.into_iter().collect(),
            TargetKind::Random => (0..space.personas.len()).filter(|i| Some(*i) != plan_index).collect(),
            TargetKind::OffPersona => {
                let plan = plan_persona.as_ref().expect("validated");
                let pos = sensitive_pos.expect("validated");
                (0..space.personas.len())
                    .filter(|&i| {
                        let p = &space.personas[i];
                        alternates.contains(&p[pos])
                            && p.iter().enumerate().any(|(j, v)| j != pos && *v != plan[j])
                    })
                    .collect()
            }
        };
        if candidates.is_empty() && c.count > 0 {
            return Err(Error::InfeasibleSpec(format!("no persona fits the `{prefix}` target")));
        }
        for i in 0..c.count {
            let target = *candidates.choose(&mut rng).expect("non-empty");
            let goal = rng.random_range(c.delta[0]..=c.delta[1]);
            let posts = rng.random_range(spec.posts_per_topic[0]..=spec.posts_per_topic[1]);
            jobs.push(TopicJob {
                topic: format!("{prefix}-{i:03}"),
                category: c.category.as_str().to_string(),
                target,
                goal,
                posts,
                background: space.background.clone(),
                need_top: c.target == TargetKind::Plan,
            });
        }
    }
    if let (Some(plan), Some(persona), Some(pos)) = (&spec.plan, &plan_persona, sensitive_pos) {
        let background: Vec<f64> = space
            .conditioned(persona, pos)
            .iter()
            .zip(&space.background)
            .map(|(c, g)| plan.affinity * c + (1.0 - plan.affinity) * g)
            .collect();
        for alt in &alternates {
            let mut target = persona.clone();
            target[pos] = alt.clone();
            let target = space.index(&target);
            for j in 0..plan.topics_per_value {
                let goal = rng.random_range(plan.delta[0]..=plan.delta[1]);
                let posts = rng.random_range(spec.posts_per_topic[0]..=spec.posts_per_topic[1]);
                jobs.push(TopicJob {
                    topic: format!("supply-{alt}-{j:02}"),
                    category: ConnectionCategory::from_delta(goal).as_str().to_string(),
                    target,
                    goal,
                    posts,
                    background: background.clone(),
                    need_top: true,
                });
            }
        }
    }

    let mut posts = Vec::new();
    let mut topics = Vec::with_capacity(jobs.len());
    for job in &jobs {
        let (counts, realized) = realize(job, &space, spec.connection_k)?;
        let mut i = 0;
        for (persona, c) in space.personas.iter().zip(&counts) {
            for _ in 0..*c {
                posts.push(LabeledPost {
                    post_id: format!("{}-{i:04}", job.topic),
                    topics: vec![job.topic.clone()],
                    labels: spec
                        .schema
                        .attributes()
                        .iter()
                        .zip(persona)
                        .map(|(a, v)| (a.id.clone(), v.clone()))
                        .collect(),
                    timestamp: 0,
                });
                i += 1;
            }
        }
        topics.push(GeneratedTopic {
            topic: job.topic.clone(),
            category: job.category.clone(),
            target_persona: space.personas[job.target].clone(),
            target_delta: job.goal,
            realized_delta: realized,
            posts: job.posts,
        });
    }
    posts.shuffle(&mut rng);
    for (i, p) in posts.iter_mut().enumerate() {
        p.timestamp = i as i64;
    }
    Ok(GeneratedCorpus { posts, topics })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn apportion_sums_and_tracks() {
        let counts = apportion(&[0.5, 0.3, 0.2], 7);
        assert_eq!(counts.iter().sum::<usize>(), 7);
        assert_eq!(counts, vec![4, 2, 1]);
        assert_eq!(apportion(&[1.0 / 3.0; 3], 2), vec![1, 1, 0]);
    }

    #[test]
    fn mixture_endpoints() {
        let bg = [0.5, 0.3, 0.2];
        let support = [true; 3];
        assert_eq!(mixture(&bg, 2, 0.0, &support), bg.to_vec());
        assert_eq!(mixture(&bg, 2, 1.0, &support), vec![0.0, 0.0, 1.0]);
        let u = mixture(&bg, 2, -1.0, &support);
        assert!(u.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-12));
    }

    #[test]
    fn solver_hits_goal() {
        let bg = [0.4, 0.3, 0.2, 0.1];
        let support = [true; 4];
        for goal in [0.05, 0.15, 0.35, 0.8] {
            let t = solve_theta(&bg, 0, 3, goal, &support).unwrap();
            let (d, top) = mixture_delta(&mixture(&bg, 0, t, &support), 3, 0);
            assert!((d - goal).abs() < 1e-9, "goal {goal} got {d}");
            assert!(top);
        }
    }
}
