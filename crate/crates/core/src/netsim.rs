//! Deterministic discrete-event message fabric.
//!
//! Nodes talk through named topics (publish/subscribe). Point-to-point
//! traffic uses the single-subscriber topic every registered node gets. Each
//! delivery is an event in a queue ordered by delivery time, ties broken by
//! insertion order, so a run is fully determined by the
//! [`NetworkConfig`] (including its seed) and the order of calls made on the
//! [`Network`].
//!
//! One-way delay is `rtt_ms / 2`, optionally scaled by a uniform jitter
//! factor in `[0.8, 1.2]`, and never exceeds `delta_ms`. Each delivery may
//! independently be dropped or duplicated.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::crypto::{hash, Digest, Hasher, PublicKey};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum NetError {
    #[error("invalid network configuration: {0}")]
    Config(String),
    #[error("unknown topic `{0}`")]
    UnknownTopic(String),
    #[error("node {0:?} is not registered")]
    Unregistered(PublicKey),
}

/// Message kinds on the simulated wire. The discriminant is the wire code.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MessageKind {
    Transaction = 1,
    LeaderAnnounce = 2,
    Commit = 3,
    Verify = 4,
    BlockFinal = 5,
}

impl MessageKind {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            MessageKind::Transaction => "TRANSACTION",
            MessageKind::LeaderAnnounce => "LEADER_ANNOUNCE",
            MessageKind::Commit => "COMMIT",
            MessageKind::Verify => "VERIFY",
            MessageKind::BlockFinal => "BLOCK_FINAL",
        }
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Topic(String);

impl Topic {
    pub fn new(name: impl Into<String>) -> Self {
        Self(name.into())
    }

    /// The private topic of one node.
    pub fn direct(node: &PublicKey) -> Self {
        Self(format!("node/{}", node.to_hex()))
    }

    pub fn name(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Topic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One scheduled delivery.
#[derive(Clone, Debug)]
pub struct Envelope {
    pub from: PublicKey,
    pub to: PublicKey,
    pub kind: MessageKind,
    pub payload: Arc<[u8]>,
    pub payload_digest: Digest,
    pub send_time: u64,
    pub deliver_time: u64,
}

/// Per-link settings that replace the global ones.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LinkOverride {
    /// Fixed one-way delay in ms.
    pub delay_ms: Option<u64>,
    pub drop_probability: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Upper bound on one-way delay.
    pub delta_ms: u64,
    pub rtt_ms: u64,
    pub drop_probability: f64,
    pub duplicate_probability: f64,
    pub jitter: bool,
    /// Enforce the bounded-delay assumption at validation time.
    pub synchrony: bool,
    /// Keyed by (from, to).
    pub per_link_overrides: BTreeMap<(PublicKey, PublicKey), LinkOverride>,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            delta_ms: 150,
            rtt_ms: 200,
            drop_probability: 0.0,
            duplicate_probability: 0.0,
            jitter: true,
            synchrony: true,
            per_link_overrides: BTreeMap::new(),
            seed: 0,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |m: String| Err(NetError::Config(m));
        if self.rtt_ms > 2 * self.delta_ms {
            return bad(format!("base one-way delay {}ms exceeds delta {}ms", self.rtt_ms / 2, self.delta_ms));
        }
        if !(0.0..1.0).contains(&self.drop_probability) {
            return bad(format!("drop probability {} not in [0, 1)", self.drop_probability));
        }
        if !(0.0..1.0).contains(&self.duplicate_probability) {
            return bad(format!("duplicate probability {} not in [0, 1)", self.duplicate_probability));
        }
        for ((from, to), o) in &self.per_link_overrides {
            if let Some(p) = o.drop_probability {
                if !(0.0..=1.0).contains(&p) {
                    return bad(format!("link {}->{} drop probability {p} not in [0, 1]", from.short(), to.short()));
                }
                if self.synchrony && p >= 1.0 {
                    return bad(format!("link {}->{} drops everything under synchrony", from.short(), to.short()));
                }
            }
            if let Some(d) = o.delay_ms {
                if self.synchrony && d > self.delta_ms {
                    return bad(format!("link {}->{} delay {d}ms exceeds delta", from.short(), to.short()));
                }
            }
        }
        Ok(())
    }
}

/// Simulated time in milliseconds. Never decreases.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SimClock {
    now: u64,
}

impl SimClock {
    pub fn now(&self) -> u64 {
        self.now
    }

    fn advance(&mut self, to: u64) {
        debug_assert!(to >= self.now, "clock moved backwards");
        self.now = self.now.max(to);
    }
}

#[derive(Debug)]
enum EventBody {
    Deliver(Envelope),
    Timer { node: PublicKey, tag: u64 },
}

/// Events bucketed by time; each bucket is FIFO, so ties pop in insertion
/// order.
#[derive(Debug, Default)]
struct EventQueue {
    buckets: BTreeMap<u64, VecDeque<EventBody>>,
    len: usize,
}

impl EventQueue {
    fn push(&mut self, time: u64, body: EventBody) {
        self.buckets.entry(time).or_default().push_back(body);
        self.len += 1;
    }

    fn pop(&mut self) -> Option<(u64, EventBody)> {
        let mut first = self.buckets.first_entry()?;
        let body = first.get_mut().pop_front().expect("buckets are never empty");
        let time = *first.key();
        if first.get().is_empty() {
            first.remove();
        }
        self.len -= 1;
        Some((time, body))
    }

    fn next_time(&self) -> Option<u64> {
        self.buckets.keys().next().copied()
    }
}

/// Result of popping the event queue.
#[derive(Debug)]
pub enum Step {
    Deliver(Envelope),
    Timer { node: PublicKey, tag: u64, at: u64 },
    Quiescent,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetStats {
    pub published: u64,
    pub scheduled: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub duplicated: u64,
}

/// Per-delivery trace: a running digest over every delivery and, when
/// enabled, the tab-separated text lines.
#[derive(Clone, Default)]
struct Trace {
    hasher: Hasher,
    lines: Option<Vec<String>>,
}

impl Trace {
    fn record(&mut self, env: &Envelope) {
        self.hasher.update(&env.deliver_time.to_be_bytes());
        self.hasher.update(&[env.kind.code()]);
        self.hasher.update(env.from.as_bytes());
        self.hasher.update(env.to.as_bytes());
        self.hasher.update(env.payload_digest.as_bytes());
        if let Some(lines) = &mut self.lines {
            lines.push(format!(
                "{}\t{}\t{}\t{}\t{}",
                env.deliver_time,
                env.kind,
                env.from.to_hex(),
                env.to.to_hex(),
                env.payload_digest.to_hex()
            ));
        }
    }
}

pub struct Network {
    config: NetworkConfig,
    rng: ChaCha8Rng,
    clock: SimClock,
    queue: EventQueue,
    registered: BTreeSet<PublicKey>,
    topics: BTreeMap<Topic, BTreeSet<PublicKey>>,
    trace: Trace,
    stats: NetStats,
}

impl Network {
    pub fn new(config: NetworkConfig) -> Result<Self, NetError> {
        config.validate()?;
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            clock: SimClock::default(),
            queue: EventQueue::default(),
            registered: BTreeSet::new(),
            topics: BTreeMap::new(),
            trace: Trace::default(),
            stats: NetStats::default(),
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    /// Keep the text form of the trace in memory.
    pub fn enable_trace_lines(&mut self) {
        self.trace.lines.get_or_insert_with(Vec::new);
    }

    pub fn trace_lines(&self) -> Option<&[String]> {
        self.trace.lines.as_deref()
    }

    /// Digest over every delivery so far.
    pub fn trace_digest(&self) -> Digest {
        self.trace.hasher.clone().finish()
    }

    pub fn stats(&self) -> NetStats {
        self.stats
    }

    pub fn now(&self) -> u64 {
        self.clock.now()
    }

    /// Registers a node and its direct topic.
    pub fn register(&mut self, node: PublicKey) {
        self.registered.insert(node);
        self.topics.entry(Topic::direct(&node)).or_default().insert(node);
    }

    pub fn create_topic(&mut self, topic: Topic) {
        self.topics.entry(topic).or_default();
    }

    /// Idempotent. Creates the topic if needed.
    pub fn subscribe(&mut self, node: PublicKey, topic: &Topic) -> Result<(), NetError> {
        if !self.registered.contains(&node) {
            return Err(NetError::Unregistered(node));
        }
        self.topics.entry(topic.clone()).or_default().insert(node);
        Ok(())
    }

    pub fn unsubscribe(&mut self, node: &PublicKey, topic: &Topic) {
        if let Some(subs) = self.topics.get_mut(topic) {
            subs.remove(node);
        }
    }

    /// Replaces the whole subscriber set of `topic`.
    pub fn set_subscribers(
        &mut self,
        topic: &Topic,
        nodes: impl IntoIterator<Item = PublicKey>,
    ) -> Result<(), NetError> {
        let mut subs = BTreeSet::new();
        for n in nodes {
            if !self.registered.contains(&n) {
                return Err(NetError::Unregistered(n));
            }
            subs.insert(n);
        }
        self.topics.insert(topic.clone(), subs);
        Ok(())
    }

    pub fn subscribers(&self, topic: &Topic) -> Option<&BTreeSet<PublicKey>> {
        self.topics.get(topic)
    }

    /// Publishes now. See [`Network::publish_at`].
    pub fn publish(
        &mut self,
        from: PublicKey,
        topic: &Topic,
        kind: MessageKind,
        payload: Arc<[u8]>,
    ) -> Result<usize, NetError> {
        self.publish_at(self.now(), from, topic, kind, payload)
    }

    /// Schedules one delivery per subscriber other than the sender, as if
    /// sent at `send_time` (clamped to now). Returns the number of deliveries
    /// scheduled, duplicates included.
    pub fn publish_at(
        &mut self,
        send_time: u64,
        from: PublicKey,
        topic: &Topic,
        kind: MessageKind,
        payload: Arc<[u8]>,
    ) -> Result<usize, NetError> {
        if !self.registered.contains(&from) {
            return Err(NetError::Unregistered(from));
        }
        let subscribers: Vec<PublicKey> = self
            .topics
            .get(topic)
            .ok_or_else(|| NetError::UnknownTopic(topic.name().to_string()))?
            .iter()
            .filter(|s| **s != from)
            .copied()
            .collect();
        let send_time = send_time.max(self.now());
        let payload_digest = hash(&payload);
        self.stats.published += 1;
        let mut scheduled = 0;
        for to in subscribers {
            let link = self.config.per_link_overrides.get(&(from, to)).copied().unwrap_or_default();
            let drop_p = link.drop_probability.unwrap_or(self.config.drop_probability);
            // Always draw the same number of variates so that changing one
            // probability does not shift the rest of the random stream.
            let drop_draw: f64 = self.rng.gen();
            let delay = self.sample_delay(link);
            let dup_draw: f64 = self.rng.gen();
            let dup_delay = self.sample_delay(link);
            if drop_draw < drop_p {
                self.stats.dropped += 1;
                continue;
            }
            let env = Envelope {
                from,
                to,
                kind,
                payload: payload.clone(),
                payload_digest,
                send_time,
                deliver_time: send_time + delay,
            };
            if dup_draw < self.config.duplicate_probability {
                let copy = Envelope { deliver_time: send_time + dup_delay, ..env.clone() };
                self.push(copy.deliver_time, EventBody::Deliver(copy));
                self.stats.duplicated += 1;
                scheduled += 1;
            }
            self.push(env.deliver_time, EventBody::Deliver(env));
            scheduled += 1;
        }
        self.stats.scheduled += scheduled as u64;
        Ok(scheduled)
    }

    /// Point-to-point send over the recipient's direct topic.
    pub fn send_at(
        &mut self,
        send_time: u64,
        from: PublicKey,
        to: &PublicKey,
        kind: MessageKind,
        payload: Arc<[u8]>,
    ) -> Result<usize, NetError> {
        self.publish_at(send_time, from, &Topic::direct(to), kind, payload)
    }

    /// A local wake-up for `node` at `at` (clamped to now).
    pub fn schedule_timer(&mut self, node: PublicKey, at: u64, tag: u64) {
        let at = at.max(self.now());
        self.push(at, EventBody::Timer { node, tag });
    }

    fn push(&mut self, time: u64, body: EventBody) {
        self.queue.push(time, body);
    }

    fn sample_delay(&mut self, link: LinkOverride) -> u64 {
        let factor: f64 = self.rng.gen_range(0.8..=1.2);
        if let Some(d) = link.delay_ms {
            return d;
        }
        let base = self.config.rtt_ms as f64 / 2.0;
        let d = if self.config.jitter { (base * factor).round() } else { base.round() };
        (d as u64).min(self.config.delta_ms)
    }

    /// Pops the earliest event and advances the clock to it.
    pub fn step(&mut self) -> Step {
        let Some((time, body)) = self.queue.pop() else {
            return Step::Quiescent;
        };
        self.clock.advance(time);
        match body {
            EventBody::Deliver(env) => {
                self.trace.record(&env);
                self.stats.delivered += 1;
                Step::Deliver(env)
            }
            EventBody::Timer { node, tag } => Step::Timer { node, tag, at: time },
        }
    }

    pub fn is_quiescent(&self) -> bool {
        self.queue.len == 0
    }

    pub fn pending(&self) -> usize {
        self.queue.len
    }

    /// Moves the clock forward to `t` when nothing is pending before it.
    pub fn advance_to(&mut self, t: u64) {
        if self.queue.next_time().is_none_or(|next| next >= t) {
            self.clock.advance(t.max(self.now()));
        }
    }
}
