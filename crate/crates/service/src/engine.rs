use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use aegis_core::corpus::{RepoSnapshot, SharedRepository};
use aegis_core::inference::InferenceReport;
use aegis_core::model::UserProfile;
use aegis_core::queue::{enqueue_group, release_due, Clock, IntervalBounds, MaskedEntry, PublishQueue, PublishSink};
use aegis_core::suggest::{
    accept, choose_cover_set, open_group, suggest, timeline_guard, Evaluation, GroupState, PendingPost, PostGroup,
    SuggestConfig, SuggestionSet, TimelineVerdict,
};
use aegis_core::taxonomy::{build_tree, ActiveTree, LinkParams, TopicTree, TreeView};
use aegis_core::{Error, Result};
use serde::Serialize;

use crate::error::ApiError;

#[derive(Debug, Clone, Copy, Default)]
pub struct ServiceConfig {
    /// Base seed for queue shuffles; each finalized group offsets it.
    pub seed: u64,
    pub bounds: IntervalBounds,
    pub suggest: SuggestConfig,
    pub link: LinkParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SessionState {
    Draft,
    Satisfied,
    BudgetExhausted,
    Queued,
}

impl From<GroupState> for SessionState {
    fn from(s: GroupState) -> Self {
        match s {
            GroupState::Draft => SessionState::Draft,
            GroupState::Satisfied => SessionState::Satisfied,
            GroupState::BudgetExhausted => SessionState::BudgetExhausted,
        }
    }
}

struct Session {
    id: String,
    group: PostGroup,
    snapshot: RepoSnapshot,
    tree: Arc<TopicTree>,
    timeline: Vec<PostGroup>,
    evaluation: Evaluation,
    suggestions: Option<SuggestionSet>,
    queued: bool,
}

impl Session {
    fn state(&self) -> SessionState {
        if self.queued {
            SessionState::Queued
        } else {
            self.group.state.into()
        }
    }

    fn view(&self, budget: usize) -> SessionView {
        SessionView {
            session_id: self.id.clone(),
            state: self.state(),
            generation: self.snapshot.generation(),
            group: self.group.clone(),
            remaining_budget: budget.saturating_sub(self.group.accepted_obfuscations.len()),
            evaluation: self.evaluation.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionView {
    pub session_id: String,
    pub state: SessionState,
    /// Snapshot generation pinned for the session's lifetime.
    pub generation: u64,
    pub group: PostGroup,
    pub remaining_budget: usize,
    pub evaluation: Evaluation,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FinalizeView {
    pub session_id: String,
    pub state: SessionState,
    pub queued: usize,
    pub next_due: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueueView {
    pub now: i64,
    pub next_due: Option<i64>,
    pub entries: Vec<MaskedEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HealthView {
    pub status: &'static str,
    pub generation: u64,
    pub topics: usize,
    pub active_session: Option<String>,
    pub queued: usize,
}

/// The suggestion process behind the HTTP layer. It only reads repository
/// snapshots; ingestion happens elsewhere through the shared repository.
pub struct Service {
    profile: UserProfile,
    repo: Arc<SharedRepository>,
    tree: ActiveTree,
    clock: Arc<dyn Clock>,
    config: ServiceConfig,
    sessions: Mutex<BTreeMap<String, Arc<Mutex<Session>>>>,
    timeline: Mutex<Vec<PostGroup>>,
    queue: Mutex<PublishQueue>,
    counter: AtomicU64,
}

type ApiResult<T> = std::result::Result<T, ApiError>;

impl Service {
    /// Validates `profile`, builds the tree and fills in empty cover sets.
    pub fn new(
        profile: UserProfile,
        repo: Arc<SharedRepository>,
        clock: Arc<dyn Clock>,
        config: ServiceConfig,
    ) -> Result<Self> {
        let snapshot = repo.snapshot();
        profile.validate(snapshot.schema())?;
        let tree = build_tree(&profile, &snapshot, config.link)?;
        let profile = choose_cover_set(&profile, &tree)?;
        Ok(Service {
            profile,
            repo,
            tree: ActiveTree::new(tree),
            clock,
            config,
            sessions: Mutex::new(BTreeMap::new()),
            timeline: Mutex::new(Vec::new()),
            queue: Mutex::new(PublishQueue::new()),
            counter: AtomicU64::new(0),
        })
    }

    pub fn profile(&self) -> &UserProfile {
        &self.profile
    }

    pub fn repository(&self) -> &Arc<SharedRepository> {
        &self.repo
    }

    /// The current snapshot and a tree built on it, rebuilding if ingestion
    /// moved the repository on.
    fn current(&self) -> Result<(RepoSnapshot, Arc<TopicTree>)> {
        let snapshot = self.repo.snapshot();
        let tree = self.tree.current();
        if tree.built_at_generation() == snapshot.generation() {
            return Ok((snapshot, tree));
        }
        let fresh = build_tree(&self.profile, &snapshot, self.config.link)?;
        self.tree.swap(fresh);
        Ok((snapshot, self.tree.current()))
    }

    fn session(&self, id: &str) -> ApiResult<Arc<Mutex<Session>>> {
        self.sessions
            .lock()
            .expect("session map")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::unknown_session(id))
    }

    fn active_id(sessions: &BTreeMap<String, Arc<Mutex<Session>>>) -> Option<String> {
        sessions
            .values()
            .filter_map(|s| {
                let s = s.lock().expect("session");
                (!s.queued).then(|| s.id.clone())
            })
            .next()
    }

    pub fn open_session(&self, post: PendingPost) -> ApiResult<SessionView> {
        let mut sessions = self.sessions.lock().expect("session map");
        if let Some(active) = Self::active_id(&sessions) {
            return Err(ApiError::session_conflict(&active));
        }
        let id = format!("s{}", self.counter.fetch_add(1, Ordering::SeqCst) + 1);
        let (snapshot, tree) = self.current()?;
        for t in &post.topics {
            let t = aegis_core::model::normalize_topic(t)?;
            if !snapshot.contains(&t) {
                return Err(Error::UnknownTopic(t).into());
            }
        }
        let timeline = self.timeline.lock().expect("timeline").clone();
        let (group, evaluation) = open_group(PostGroup::new(id.clone(), post)?, &timeline, &self.profile, &snapshot)?;
        let session = Session {
            id: id.clone(),
            group,
            snapshot,
            tree,
            timeline,
            evaluation,
            suggestions: None,
            queued: false,
        };
        let view = session.view(self.profile.suggestion_budget);
        sessions.insert(id, Arc::new(Mutex::new(session)));
        Ok(view)
    }

    pub fn get_session(&self, id: &str) -> ApiResult<SessionView> {
        let session = self.session(id)?;
        let s = session.lock().expect("session");
        Ok(s.view(self.profile.suggestion_budget))
    }

    /// Ranked candidates for the session's group. A satisfied group gets an
    /// empty list rather than an error.
    pub fn suggestions(&self, id: &str) -> ApiResult<SuggestionSet> {
        let session = self.session(id)?;
        let mut s = session.lock().expect("session");
        match s.state() {
            SessionState::Queued => return Err(Error::AlreadySatisfied.into()),
            SessionState::BudgetExhausted => return Err(Error::BudgetExhausted(self.profile.suggestion_budget).into()),
            SessionState::Satisfied => {
                let worst = s
                    .evaluation
                    .group
                    .sensitive
                    .iter()
                    .max_by(|a, b| a.delta.total_cmp(&b.delta))
                    .map(|v| (v.attr.clone(), v.delta))
                    .unwrap_or_default();
                return Ok(SuggestionSet {
                    generation: s.snapshot.generation(),
                    group_topics: s.group.topics(),
                    worst_attr: worst.0,
                    worst_delta: worst.1,
                    entries: Vec::new(),
                });
            }
            SessionState::Draft => {}
        }
        let set = suggest(&s.group, &s.timeline, &self.profile, &s.tree, &s.snapshot, &self.config.suggest)?;
        s.suggestions = Some(set.clone());
        Ok(set)
    }

    /// Accepts `topic` from the latest suggestion set. Replays are rejected.
    pub fn accept(&self, id: &str, topic: &str) -> ApiResult<SessionView> {
        let session = self.session(id)?;
        let mut s = session.lock().expect("session");
        if s.queued {
            return Err(Error::AlreadySatisfied.into());
        }
        let topic = aegis_core::model::normalize_topic(topic)?;
        if !s.snapshot.contains(&topic) {
            return Err(Error::UnknownTopic(topic).into());
        }
        if s.group.contains(&topic) {
            return Err(Error::DuplicateTopic(topic).into());
        }
        let Some(set) = s.suggestions.as_ref() else {
            return Err(Error::StaleSuggestion("no suggestion set has been fetched for this group".into()).into());
        };
        let (group, evaluation) = accept(&s.group, set, &topic, &s.timeline, &self.profile, &s.snapshot)?;
        s.group = group;
        s.evaluation = evaluation;
        s.suggestions = None;
        Ok(s.view(self.profile.suggestion_budget))
    }

    /// Schedules a satisfied group and adds it to the timeline.
    pub fn finalize(&self, id: &str) -> ApiResult<FinalizeView> {
        let session = self.session(id)?;
        let mut s = session.lock().expect("session");
        if s.queued {
            return Err(Error::NotSatisfied.into());
        }
        let n = self.timeline.lock().expect("timeline").len() as u64;
        let entries = enqueue_group(&s.group, self.clock.now(), self.config.seed.wrapping_add(n), self.config.bounds)?;
        let queued = entries.len();
        let next_due = {
            let mut queue = self.queue.lock().expect("queue");
            queue.push(entries);
            queue.next_due()
        };
        self.timeline.lock().expect("timeline").push(s.group.clone());
        s.queued = true;
        Ok(FinalizeView {
            session_id: s.id.clone(),
            state: SessionState::Queued,
            queued,
            next_due,
        })
    }

    pub fn close_session(&self, id: &str) -> ApiResult<()> {
        self.sessions
            .lock()
            .expect("session map")
            .remove(id)
            .map(|_| ())
            .ok_or_else(|| ApiError::unknown_session(id))
    }

    /// The attack over every finalized group.
    pub fn adversary(&self) -> ApiResult<TimelineVerdict> {
        let snapshot = self.repo.snapshot();
        let timeline = self.timeline.lock().expect("timeline").clone();
        Ok(timeline_guard(&timeline, &self.profile, &snapshot)?)
    }

    /// Timeline-scope report only.
    pub fn adversary_report(&self) -> ApiResult<InferenceReport> {
        Ok(self.adversary()?.report)
    }

    pub fn tree(&self, full: bool) -> ApiResult<TreeView> {
        let (_, tree) = self.current()?;
        Ok(if full { tree.view() } else { tree.pruned_view(&self.profile) })
    }

    pub fn queue(&self) -> QueueView {
        let queue = self.queue.lock().expect("queue");
        QueueView {
            now: self.clock.now(),
            next_due: queue.next_due(),
            entries: queue.masked(),
        }
    }

    /// Hands every due entry to `sink`.
    pub fn release(&self, sink: &mut dyn PublishSink) -> Result<usize> {
        let mut queue = self.queue.lock().expect("queue");
        release_due(&mut queue, self.clock.now(), sink)
    }

    /// Seeds the service with groups published earlier and their queue.
    pub fn restore(&self, timeline: Vec<PostGroup>, queue: PublishQueue) {
        self.counter.store(timeline.len() as u64, Ordering::SeqCst);
        *self.timeline.lock().expect("timeline") = timeline;
        *self.queue.lock().expect("queue") = queue;
    }

    pub fn timeline(&self) -> Vec<PostGroup> {
        self.timeline.lock().expect("timeline").clone()
    }

    pub fn export_queue(&self) -> PublishQueue {
        self.queue.lock().expect("queue").clone()
    }

    pub fn health(&self) -> HealthView {
        let snapshot = self.repo.snapshot();
        let sessions = self.sessions.lock().expect("session map");
        HealthView {
            status: "ok",
            generation: snapshot.generation(),
            topics: snapshot.len(),
            active_session: Self::active_id(&sessions),
            queued: self.queue.lock().expect("queue").len(),
        }
    }
}
