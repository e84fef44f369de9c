//! Topic repository: ingests labeled posts and keeps per-topic observation
//! counts.
//!
//! One writer mutates a [`TopicRepository`]; readers work from
//! [`RepoSnapshot`]s, which are frozen at the generation of the last commit and
//! cheap to clone across threads.

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};
use std::fs;
use std::io::BufRead;
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{normalize_topic, normalize_value, AttributeSchema, Distribution, TopicStats};

/// Current on-disk format version of a saved repository.
pub const FORMAT_VERSION: u8 = 1;
/// Default number of `(post_id, topic)` pairs remembered for deduplication.
pub const DEFAULT_DEDUP_WINDOW: usize = 1 << 16;

const CHECKSUM_LEN: usize = 32;

/// A post whose author attributes have already been labeled.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledPost {
    pub post_id: String,
    pub topics: Vec<String>,
    #[serde(default)]
    pub labels: BTreeMap<String, String>,
    #[serde(rename = "ts", default)]
    pub timestamp: i64,
}

impl LabeledPost {
    /// Parses one JSON Lines record and normalizes its identifiers.
    pub fn parse_line(line: &str) -> Result<Self> {
        let raw: LabeledPost = serde_json::from_str(line)?;
        raw.normalized()
    }

    /// Case-folds labels, strips `#` from topics and drops repeated topics.
    pub fn normalized(self) -> Result<Self> {
        let mut seen = BTreeSet::new();
        let mut topics = Vec::with_capacity(self.topics.len());
        for t in &self.topics {
            let t = normalize_topic(t)?;
            if seen.insert(t.clone()) {
                topics.push(t);
            }
        }
        if topics.is_empty() {
            return Err(Error::EmptyTopics(self.post_id));
        }
        let labels = self
            .labels
            .iter()
            .map(|(a, v)| Ok((normalize_value(a)?, normalize_value(v)?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        Ok(LabeledPost {
            post_id: self.post_id,
            topics,
            labels,
            timestamp: self.timestamp,
        })
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("post serializes")
    }

    /// Checks topics and labels against `schema`.
    pub fn validate(&self, schema: &AttributeSchema) -> Result<()> {
        if self.topics.is_empty() {
            return Err(Error::EmptyTopics(self.post_id.clone()));
        }
        for (attr, value) in &self.labels {
            schema.check_value(attr, value)?;
        }
        Ok(())
    }
}

/// Whether ingestion also tallies full label tuples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum IngestMode {
    /// Per-attribute marginals only.
    Marginal,
    /// Marginals plus joint persona tuples for fully labeled posts.
    #[default]
    PersonaJoint,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct DedupWindow {
    capacity: usize,
    order: VecDeque<(String, String)>,
    seen: HashSet<(String, String)>,
}

impl DedupWindow {
    fn new(capacity: usize) -> Self {
        DedupWindow {
            capacity: capacity.max(1),
            order: VecDeque::new(),
            seen: HashSet::new(),
        }
    }

    fn contains(&self, key: &(String, String)) -> bool {
        self.seen.contains(key)
    }

    fn insert(&mut self, key: (String, String)) {
        if self.seen.insert(key.clone()) {
            self.order.push_back(key);
            while self.order.len() > self.capacity {
                if let Some(old) = self.order.pop_front() {
                    self.seen.remove(&old);
                }
            }
        }
    }
}

/// Outcome of ingesting a batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct IngestSummary {
    pub posts: usize,
    /// `(post, topic)` increments applied.
    pub increments: usize,
    /// `(post, topic)` pairs skipped as redeliveries.
    pub duplicates: usize,
    pub generation: u64,
}

/// An immutable view of the repository at one committed generation.
#[derive(Debug, Clone)]
pub struct RepoSnapshot {
    inner: Arc<SnapshotInner>,
}

#[derive(Debug)]
struct SnapshotInner {
    schema: Arc<AttributeSchema>,
    topics: BTreeMap<String, Arc<TopicStats>>,
    generation: u64,
}

impl RepoSnapshot {
    pub fn generation(&self) -> u64 {
        self.inner.generation
    }

    pub fn schema(&self) -> &AttributeSchema {
        &self.inner.schema
    }

    pub fn schema_arc(&self) -> Arc<AttributeSchema> {
        Arc::clone(&self.inner.schema)
    }

    pub fn stats(&self, topic: &str) -> Result<&TopicStats> {
        self.inner
            .topics
            .get(topic)
            .map(Arc::as_ref)
            .ok_or_else(|| Error::UnknownTopic(topic.to_string()))
    }

    pub fn contains(&self, topic: &str) -> bool {
        self.inner.topics.contains_key(topic)
    }

    pub fn topic_ids(&self) -> impl Iterator<Item = &str> {
        self.inner.topics.keys().map(String::as_str)
    }

    pub fn topics(&self) -> impl Iterator<Item = &TopicStats> {
        self.inner.topics.values().map(Arc::as_ref)
    }

    pub fn len(&self) -> usize {
        self.inner.topics.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inner.topics.is_empty()
    }

    /// Normalized distribution of `attribute` among the topic's labeled posts.
    /// `Ok(None)` when the attribute has no observations for this topic.
    pub fn topic_distribution(&self, topic: &str, attribute: &str) -> Result<Option<Distribution>> {
        let stats = self.stats(topic)?;
        distribution_of(self.schema(), stats, attribute)
    }

    /// Same contents (ignores generation).
    pub fn same_contents(&self, other: &RepoSnapshot) -> bool {
        self.inner.schema == other.inner.schema
            && self.inner.topics.len() == other.inner.topics.len()
            && self
                .inner
                .topics
                .iter()
                .zip(other.inner.topics.iter())
                .all(|((a, sa), (b, sb))| a == b && sa == sb)
    }
}

fn distribution_of(
    schema: &AttributeSchema,
    stats: &TopicStats,
    attribute: &str,
) -> Result<Option<Distribution>> {
    let attr = schema.require(attribute)?;
    Ok(stats
        .counts
        .get(attribute)
        .and_then(|counts| Distribution::from_counts(attribute, &attr.domain, counts)))
}

/// The single-writer topic repository.
#[derive(Debug, Clone)]
pub struct TopicRepository {
    schema: Arc<AttributeSchema>,
    mode: IngestMode,
    topics: BTreeMap<String, Arc<TopicStats>>,
    generation: u64,
    dedup: DedupWindow,
    committed: RepoSnapshot,
}

impl PartialEq for TopicRepository {
    fn eq(&self, other: &Self) -> bool {
        self.schema == other.schema
            && self.mode == other.mode
            && self.generation == other.generation
            && self.topics == other.topics
            && self.dedup == other.dedup
    }
}

impl TopicRepository {
    pub fn new(schema: AttributeSchema) -> Self {
        Self::with_options(schema, IngestMode::default(), DEFAULT_DEDUP_WINDOW)
    }

    pub fn with_options(schema: AttributeSchema, mode: IngestMode, dedup_window: usize) -> Self {
        let schema = Arc::new(schema);
        let committed = RepoSnapshot {
            inner: Arc::new(SnapshotInner {
                schema: Arc::clone(&schema),
                topics: BTreeMap::new(),
                generation: 0,
            }),
        };
        TopicRepository {
            schema,
            mode,
            topics: BTreeMap::new(),
            generation: 0,
            dedup: DedupWindow::new(dedup_window),
            committed,
        }
    }

    pub fn schema(&self) -> &AttributeSchema {
        &self.schema
    }

    pub fn mode(&self) -> IngestMode {
        self.mode
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn len(&self) -> usize {
        self.topics.len()
    }

    pub fn is_empty(&self) -> bool {
        self.topics.is_empty()
    }

    /// Working (possibly uncommitted) stats of a topic.
    pub fn stats(&self, topic: &str) -> Result<&TopicStats> {
        self.topics
            .get(topic)
            .map(Arc::as_ref)
            .ok_or_else(|| Error::UnknownTopic(topic.to_string()))
    }

    /// Distribution over the working state; see [`RepoSnapshot::topic_distribution`].
    pub fn topic_distribution(&self, topic: &str, attribute: &str) -> Result<Option<Distribution>> {
        distribution_of(&self.schema, self.stats(topic)?, attribute)
    }

    /// Applies one post. Returns the number of topic increments performed;
    /// zero when every `(post_id, topic)` pair was already seen.
    pub fn ingest(&mut self, post: &LabeledPost) -> Result<usize> {
        post.validate(&self.schema)?;
        Ok(self.apply(post))
    }

    fn apply(&mut self, post: &LabeledPost) -> usize {
        let persona = match self.mode {
            IngestMode::PersonaJoint => self
                .schema
                .attribute_ids()
                .map(|a| post.labels.get(a).cloned())
                .collect::<Option<Vec<String>>>(),
            IngestMode::Marginal => None,
        };
        let mut applied = 0;
        for topic in &post.topics {
            let key = (post.post_id.clone(), topic.clone());
            if self.dedup.contains(&key) {
                continue;
            }
            self.dedup.insert(key);
            let stats = Arc::make_mut(
                self.topics
                    .entry(topic.clone())
                    .or_insert_with(|| Arc::new(TopicStats::new(topic.clone()))),
            );
            stats.post_count += 1;
            for (attr, value) in &post.labels {
                *stats
                    .counts
                    .entry(attr.clone())
                    .or_default()
                    .entry(value.clone())
                    .or_insert(0) += 1;
            }
            if let Some(p) = &persona {
                *stats.joint.entry(p.clone()).or_insert(0) += 1;
            }
            applied += 1;
        }
        applied
    }

    /// Publishes the working state as a new generation.
    pub fn commit(&mut self) -> u64 {
        self.generation += 1;
        self.committed = RepoSnapshot {
            inner: Arc::new(SnapshotInner {
                schema: Arc::clone(&self.schema),
                topics: self.topics.clone(),
                generation: self.generation,
            }),
        };
        self.generation
    }

    /// Validates the whole batch, applies it and commits. Nothing is applied
    /// if any post is invalid.
    pub fn ingest_batch(&mut self, posts: &[LabeledPost]) -> Result<IngestSummary> {
        for post in posts {
            post.validate(&self.schema)?;
        }
        let mut summary = IngestSummary {
            posts: posts.len(),
            ..Default::default()
        };
        for post in posts {
            let applied = self.apply(post);
            summary.increments += applied;
            summary.duplicates += post.topics.len() - applied;
        }
        summary.generation = self.commit();
        Ok(summary)
    }

    /// Pulls batches from `source` until it is exhausted, committing each.
    pub fn ingest_source(&mut self, source: &mut dyn StreamSource) -> Result<IngestSummary> {
        let mut total = IngestSummary::default();
        while let Some(batch) = source.next_batch()? {
            let s = self.ingest_batch(&batch)?;
            total.posts += s.posts;
            total.increments += s.increments;
            total.duplicates += s.duplicates;
            total.generation = s.generation;
        }
        total.generation = self.generation;
        Ok(total)
    }

    /// Frozen view of the last committed generation.
    pub fn snapshot(&self) -> RepoSnapshot {
        self.committed.clone()
    }

    /// Serializes the working state: version byte, JSON payload, SHA-256 trailer.
    pub fn encode(&self) -> Vec<u8> {
        let payload = RepoFile {
            schema: serde_json::to_value(&*self.schema).expect("schema serializes"),
            mode: self.mode,
            generation: self.generation,
            dedup_window: self.dedup.capacity,
            dedup: self.dedup.order.iter().cloned().collect(),
            topics: self.topics.values().map(|s| StatsRecord::from(&**s)).collect(),
        };
        let mut bytes = vec![FORMAT_VERSION];
        bytes.extend(serde_json::to_vec(&payload).expect("repository serializes"));
        let digest = Sha256::digest(&bytes);
        bytes.extend_from_slice(&digest);
        bytes
    }

    /// Parses bytes produced by [`encode`](Self::encode).
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 1 + CHECKSUM_LEN {
            return Err(Error::CorruptFile("file too short".into()));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
        if Sha256::digest(body).as_slice() != trailer {
            return Err(Error::CorruptFile("checksum mismatch".into()));
        }
        if body[0] != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(body[0]));
        }
        let file: RepoFile = serde_json::from_slice(&body[1..])
            .map_err(|e| Error::CorruptFile(e.to_string()))?;
        let schema = AttributeSchema::from_json(&file.schema.to_string())
            .map_err(|e| Error::CorruptFile(format!("schema: {e}")))?;
        let mut repo = TopicRepository::with_options(schema, file.mode, file.dedup_window);
        for record in file.topics {
            let stats = record.into_stats();
            stats.validate(&repo.schema)?;
            if repo.topics.contains_key(&stats.topic) {
                return Err(Error::CorruptFile(format!("topic `{}` repeated", stats.topic)));
            }
            repo.topics.insert(stats.topic.clone(), Arc::new(stats));
        }
        for key in file.dedup {
            repo.dedup.insert(key);
        }
        repo.generation = file.generation;
        repo.committed = RepoSnapshot {
            inner: Arc::new(SnapshotInner {
                schema: Arc::clone(&repo.schema),
                topics: repo.topics.clone(),
                generation: repo.generation,
            }),
        };
        Ok(repo)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct RepoFile {
    schema: serde_json::Value,
    mode: IngestMode,
    generation: u64,
    dedup_window: usize,
    dedup: Vec<(String, String)>,
    topics: Vec<StatsRecord>,
}

#[derive(Serialize, Deserialize)]
struct StatsRecord {
    topic: String,
    post_count: u64,
    counts: BTreeMap<String, BTreeMap<String, u64>>,
    #[serde(default)]
    joint: Vec<(Vec<String>, u64)>,
}

impl From<&TopicStats> for StatsRecord {
    fn from(s: &TopicStats) -> Self {
        StatsRecord {
            topic: s.topic.clone(),
            post_count: s.post_count,
            counts: s.counts.clone(),
            joint: s.joint.iter().map(|(p, c)| (p.clone(), *c)).collect(),
        }
    }
}

impl StatsRecord {
    fn into_stats(self) -> TopicStats {
        TopicStats {
            topic: self.topic,
            counts: self.counts,
            post_count: self.post_count,
            joint: self.joint.into_iter().collect(),
        }
    }
}

/// A source of labeled posts, pulled one batch at a time.
pub trait StreamSource {
    /// Next batch, or `None` once the source is exhausted.
    fn next_batch(&mut self) -> Result<Option<Vec<LabeledPost>>>;
}

/// Reads JSON Lines (one [`LabeledPost`] per line). Blank lines are skipped.
pub struct JsonlSource<R> {
    reader: R,
    batch_size: usize,
    line_no: usize,
}

impl<R: BufRead> JsonlSource<R> {
    pub fn new(reader: R, batch_size: usize) -> Self {
        JsonlSource {
            reader,
            batch_size: batch_size.max(1),
            line_no: 0,
        }
    }
}

impl<R: BufRead> StreamSource for JsonlSource<R> {
    fn next_batch(&mut self) -> Result<Option<Vec<LabeledPost>>> {
        let mut batch = Vec::new();
        let mut line = String::new();
        while batch.len() < self.batch_size {
            line.clear();
            if self.reader.read_line(&mut line)? == 0 {
                break;
            }
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            let post = LabeledPost::parse_line(&line).map_err(|e| match e {
                Error::MalformedDocument(m) => {
                    Error::MalformedDocument(format!("line {}: {m}", self.line_no))
                }
                other => other,
            })?;
            batch.push(post);
        }
        Ok(if batch.is_empty() { None } else { Some(batch) })
    }
}

/// Serves an in-memory post list in fixed-size batches.
pub struct VecSource {
    posts: std::vec::IntoIter<LabeledPost>,
    batch_size: usize,
}

impl VecSource {
    pub fn new(posts: Vec<LabeledPost>, batch_size: usize) -> Self {
        VecSource {
            posts: posts.into_iter(),
            batch_size: batch_size.max(1),
        }
    }
}

impl StreamSource for VecSource {
    fn next_batch(&mut self) -> Result<Option<Vec<LabeledPost>>> {
        let batch: Vec<_> = self.posts.by_ref().take(self.batch_size).collect();
        Ok(if batch.is_empty() { None } else { Some(batch) })
    }
}

/// A repository shared between one ingesting writer and many readers.
///
/// Writers serialize on an internal mutex; readers only touch the published
/// snapshot slot, which is swapped after each commit.
pub struct SharedRepository {
    writer: Mutex<TopicRepository>,
    published: RwLock<RepoSnapshot>,
}

impl SharedRepository {
    pub fn new(repo: TopicRepository) -> Self {
        let snap = repo.snapshot();
        SharedRepository {
            writer: Mutex::new(repo),
            published: RwLock::new(snap),
        }
    }

    pub fn snapshot(&self) -> RepoSnapshot {
        self.published.read().expect("snapshot lock").clone()
    }

    pub fn ingest_batch(&self, posts: &[LabeledPost]) -> Result<IngestSummary> {
        let mut repo = self.writer.lock().expect("writer lock");
        let summary = repo.ingest_batch(posts)?;
        *self.published.write().expect("snapshot lock") = repo.snapshot();
        Ok(summary)
    }
}
