//! Randomized publication queue.
//!
//! A satisfied group's posts are shuffled with a seeded generator and spaced
//! by random gaps, so publication order and timing do not reveal which post
//! was the original.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicI64, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::suggest::{GroupKind, GroupState, PostGroup};

pub const DEFAULT_MIN_GAP: u64 = 300;
pub const DEFAULT_MAX_GAP: u64 = 14_400;

/// Source of "now" in whole seconds.
pub trait Clock: Send + Sync {
    fn now(&self) -> i64;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> i64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs() as i64)
            .unwrap_or(0)
    }
}

/// A clock that only moves when told to.
#[derive(Debug, Default)]
pub struct ManualClock(AtomicI64);

impl ManualClock {
    pub fn new(start: i64) -> Self {
        ManualClock(AtomicI64::new(start))
    }

    pub fn set(&self, now: i64) {
        self.0.store(now, Ordering::SeqCst);
    }

    pub fn advance(&self, secs: i64) -> i64 {
        self.0.fetch_add(secs, Ordering::SeqCst) + secs
    }
}

impl Clock for ManualClock {
    fn now(&self) -> i64 {
        self.0.load(Ordering::SeqCst)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntervalBounds {
    pub min: u64,
    pub max: u64,
}

impl IntervalBounds {
    pub fn new(min: u64, max: u64) -> Result<Self> {
        if min > max {
            return Err(Error::InvalidInterval { min, max });
        }
        Ok(IntervalBounds { min, max })
    }
}

impl Default for IntervalBounds {
    fn default() -> Self {
        IntervalBounds {
            min: DEFAULT_MIN_GAP,
            max: DEFAULT_MAX_GAP,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PostKind {
    Original,
    Obfuscation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueEntry {
    /// Queue-wide sequence number, assigned on push; breaks scheduling ties.
    pub seq: u64,
    pub group_id: String,
    pub kind: PostKind,
    pub topics: Vec<String>,
    #[serde(default)]
    pub text: String,
    pub scheduled_at: i64,
}

/// What the UI sees: the kind is always "pending".
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MaskedEntry {
    pub seq: u64,
    pub group_id: String,
    pub kind: &'static str,
    pub topics: Vec<String>,
    pub text: String,
    pub scheduled_at: i64,
}

/// Schedules every post of a satisfied group: a seeded uniform shuffle,
/// then gaps drawn uniformly from `bounds` starting at `now`.
pub fn enqueue_group(group: &PostGroup, now: i64, seed: u64, bounds: IntervalBounds) -> Result<Vec<QueueEntry>> {
    if group.state != GroupState::Satisfied {
        return Err(Error::NotSatisfied);
    }
    IntervalBounds::new(bounds.min, bounds.max)?;
    let mut posts: Vec<(PostKind, Vec<String>, String)> = Vec::new();
    if group.kind == GroupKind::Post {
        posts.push((PostKind::Original, group.original.topics.clone(), group.original.text.clone()));
    }
    for t in &group.accepted_obfuscations {
        posts.push((PostKind::Obfuscation, vec![t.clone()], String::new()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    posts.shuffle(&mut rng);
    let mut at = now;
    Ok(posts
        .into_iter()
        .enumerate()
        .map(|(i, (kind, topics, text))| {
            at = at.saturating_add(rng.random_range(bounds.min..=bounds.max) as i64);
            QueueEntry {
                seq: i as u64,
                group_id: group.id.clone(),
                kind,
                topics,
                text,
                scheduled_at: at,
            }
        })
        .collect())
}

/// Pending entries of all groups. Groups may interleave.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PublishQueue {
    next_seq: u64,
    entries: Vec<QueueEntry>,
}

impl PublishQueue {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds entries, renumbering them with queue-wide sequence numbers.
    pub fn push(&mut self, entries: Vec<QueueEntry>) {
        for mut e in entries {
            e.seq = self.next_seq;
            self.next_seq += 1;
            self.entries.push(e);
        }
    }

    /// Removes and returns every entry due at or before `now`, ordered by
    /// scheduled time then sequence number.
    pub fn drain(&mut self, now: i64) -> Vec<QueueEntry> {
        let (mut due, rest): (Vec<_>, Vec<_>) = self.entries.drain(..).partition(|e| e.scheduled_at <= now);
        self.entries = rest;
        due.sort_by_key(|e| (e.scheduled_at, e.seq));
        due
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn next_due(&self) -> Option<i64> {
        self.entries.iter().map(|e| e.scheduled_at).min()
    }

    /// Pending entries in publication order with kinds hidden.
    pub fn masked(&self) -> Vec<MaskedEntry> {
        let mut out: Vec<MaskedEntry> = self
            .entries
            .iter()
            .map(|e| MaskedEntry {
                seq: e.seq,
                group_id: e.group_id.clone(),
                kind: "pending",
                topics: e.topics.clone(),
                text: e.text.clone(),
                scheduled_at: e.scheduled_at,
            })
            .collect();
        out.sort_by_key(|e| (e.scheduled_at, e.seq));
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("queue serializes")
    }

    /// Restores a saved queue, rejecting duplicate or out-of-range sequence numbers.
    pub fn from_json(document: &str) -> Result<Self> {
        let queue: PublishQueue = serde_json::from_str(document)?;
        let mut seen = std::collections::HashSet::new();
        for e in &queue.entries {
            if e.seq >= queue.next_seq || !seen.insert(e.seq) {
                return Err(Error::MalformedDocument(format!("bad sequence number {}", e.seq)));
            }
        }
        Ok(queue)
    }
}

/// Where released posts go.
pub trait PublishSink {
    fn publish(&mut self, entry: &QueueEntry) -> Result<()>;
}

#[derive(Debug, Default)]
pub struct MemorySink {
    pub published: Vec<QueueEntry>,
}

impl PublishSink for MemorySink {
    fn publish(&mut self, entry: &QueueEntry) -> Result<()> {
        self.published.push(entry.clone());
        Ok(())
    }
}

#[derive(Serialize)]
struct PublishedLine<'a> {
    seq: u64,
    scheduled_at: i64,
    topics: &'a [String],
    text: &'a str,
}

/// Appends one JSON line per post; the kind is not written.
#[derive(Debug, Clone)]
pub struct FileSink {
    path: PathBuf,
}

impl FileSink {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        FileSink { path: path.into() }
    }
}

impl PublishSink for FileSink {
    fn publish(&mut self, entry: &QueueEntry) -> Result<()> {
        let mut file = OpenOptions::new().create(true).append(true).open(&self.path)?;
        let line = serde_json::to_string(&PublishedLine {
            seq: entry.seq,
            scheduled_at: entry.scheduled_at,
            topics: &entry.topics,
            text: &entry.text,
        })?;
        writeln!(file, "{line}")?;
        Ok(())
    }
}

/// Drains everything due and hands it to `sink` in order.
pub fn release_due(queue: &mut PublishQueue, now: i64, sink: &mut dyn PublishSink) -> Result<usize> {
    let due = queue.drain(now);
    for e in &due {
        sink.publish(e)?;
    }
    Ok(due.len())
}
