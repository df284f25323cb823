//! In-process publish/subscribe bus with hierarchical topics.
//!
//! Topics are `/`-separated paths. A subscription pattern matches every topic
//! it is a segment-wise prefix of, so subscribing to `Data/consumer` receives
//! `Data/consumer/consumer1`, `Data/consumer/consumer2`, and so on.
//!
//! Delivery happens in heartbeat rounds. A message published during round `r`
//! is due at round `r + delay`, where `delay` is drawn uniformly from
//! `0..=delay_rounds`; [`Bus::deliver_round`] hands every due message to its
//! subscribers and then advances the round counter. With zero delay a message
//! is therefore readable right after the heartbeat that closes its publish
//! round. Drop and delay draws come from a seeded ChaCha stream in publish
//! order, so a run's full event log is reproducible.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SEPARATOR: char = '/';

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BusError {
    #[error("malformed topic `{0}`: segments must be non-empty")]
    MalformedTopic(String),
    #[error("drop probability must lie in [0, 1], got {0}")]
    BadDropProbability(f64),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Topic {
    segments: Vec<String>,
}

impl Topic {
    pub fn segments(&self) -> &[String] {
        &self.segments
    }

    /// Appends one segment.
    pub fn child(&self, segment: &str) -> Result<Topic, BusError> {
        if segment.is_empty() || segment.contains(SEPARATOR) {
            return Err(BusError::MalformedTopic(format!("{self}/{segment}")));
        }
        let mut segments = self.segments.clone();
        segments.push(segment.to_string());
        Ok(Topic { segments })
    }

    /// True when `self`, used as a subscription pattern, covers `topic`.
    pub fn matches(&self, topic: &Topic) -> bool {
        topic_matches(self, topic)
    }
}

impl FromStr for Topic {
    type Err = BusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let segments: Vec<String> = s.split(SEPARATOR).map(str::to_string).collect();
        if segments.iter().any(String::is_empty) {
            return Err(BusError::MalformedTopic(s.to_string()));
        }
        Ok(Topic { segments })
    }
}

impl fmt::Display for Topic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.segments.join("/"))
    }
}

/// Segment-wise prefix test; equal length means exact match.
pub fn topic_matches(pattern: &Topic, topic: &Topic) -> bool {
    pattern.segments.len() <= topic.segments.len()
        && pattern
            .segments
            .iter()
            .zip(&topic.segments)
            .all(|(p, t)| p == t)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub topic: Topic,
    pub payload: BTreeMap<String, f64>,
    pub publisher: String,
    pub publish_round: u64,
}

impl Message {
    pub fn get(&self, key: &str) -> Option<f64> {
        self.payload.get(key).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeliveryPolicy {
    pub drop_probability: f64,
    /// Upper bound of the per-message uniform delay, in rounds.
    pub delay_rounds: u32,
    pub rng_seed: u64,
}

impl Default for DeliveryPolicy {
    fn default() -> Self {
        Self::lossless()
    }
}

impl DeliveryPolicy {
    pub fn lossless() -> Self {
        Self {
            drop_probability: 0.0,
            delay_rounds: 0,
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), BusError> {
        if (0.0..=1.0).contains(&self.drop_probability) {
            Ok(())
        } else {
            Err(BusError::BadDropProbability(self.drop_probability))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SubscriptionId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Publish,
    Deliver,
    Drop,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Publish => "publish",
            EventKind::Deliver => "deliver",
            EventKind::Drop => "drop",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BusEvent {
    pub round: u64,
    pub kind: EventKind,
    pub topic: String,
    pub publisher: String,
    /// Set for deliveries only.
    pub subscriber: Option<String>,
}

pub const EVENT_CSV_HEADER: &str = "round,event,topic,publisher,subscriber";

fn csv_field(s: &str) -> std::borrow::Cow<'_, str> {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\"")).into()
    } else {
        s.into()
    }
}

impl BusEvent {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.round,
            self.kind.as_str(),
            csv_field(&self.topic),
            csv_field(&self.publisher),
            csv_field(self.subscriber.as_deref().unwrap_or("")),
        )
    }
}

pub fn write_event_csv<W: Write>(mut out: W, events: &[BusEvent]) -> io::Result<()> {
    writeln!(out, "{EVENT_CSV_HEADER}")?;
    for e in events {
        writeln!(out, "{}", e.csv_line())?;
    }
    Ok(())
}

/// Message counts. `published == delivered + dropped + queued` after every call.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BusStats {
    pub published: u64,
    /// Messages that left the queue and were fanned out (possibly to nobody).
    pub delivered: u64,
    pub dropped: u64,
    pub queued: u64,
    /// Individual inbox insertions.
    pub deliveries: u64,
}

#[derive(Debug)]
struct Pending {
    msg: Message,
    due: u64,
    dropped: bool,
    seq: u64,
}

#[derive(Debug)]
pub struct Bus {
    round: u64,
    policy: DeliveryPolicy,
    rng: ChaCha8Rng,
    next_sub: u64,
    next_seq: u64,
    subscriptions: BTreeMap<String, Vec<(SubscriptionId, Topic)>>,
    inboxes: BTreeMap<String, Vec<Message>>,
    queue: Vec<Pending>,
    stats: BusStats,
    events: Option<Vec<BusEvent>>,
}

impl Bus {
    pub fn new(policy: DeliveryPolicy) -> Result<Self, BusError> {
        policy.validate()?;
        Ok(Self {
            round: 0,
            policy,
            rng: ChaCha8Rng::seed_from_u64(policy.rng_seed),
            next_sub: 0,
            next_seq: 0,
            subscriptions: BTreeMap::new(),
            inboxes: BTreeMap::new(),
            queue: Vec::new(),
            stats: BusStats::default(),
            events: None,
        })
    }

    /// Keep a publish/deliver/drop log, readable through [`Bus::events`].
    pub fn with_event_log(mut self) -> Self {
        self.events = Some(Vec::new());
        self
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn policy(&self) -> &DeliveryPolicy {
        &self.policy
    }

    pub fn stats(&self) -> BusStats {
        self.stats
    }

    pub fn events(&self) -> &[BusEvent] {
        self.events.as_deref().unwrap_or(&[])
    }

    pub fn take_events(&mut self) -> Vec<BusEvent> {
        self.events.as_mut().map(std::mem::take).unwrap_or_default()
    }

    fn log(&mut self, kind: EventKind, msg: &Message, subscriber: Option<&str>) {
        if let Some(events) = &mut self.events {
            events.push(BusEvent {
                round: self.round,
                kind,
                topic: msg.topic.to_string(),
                publisher: msg.publisher.clone(),
                subscriber: subscriber.map(str::to_string),
            });
        }
    }

    /// Subscribing twice with the same pattern returns the original id.
    pub fn subscribe(&mut self, subscriber: &str, pattern: Topic) -> SubscriptionId {
        self.inboxes.entry(subscriber.to_string()).or_default();
        let subs = self.subscriptions.entry(subscriber.to_string()).or_default();
        if let Some((id, _)) = subs.iter().find(|(_, p)| *p == pattern) {
            return *id;
        }
        let id = SubscriptionId(self.next_sub);
        self.next_sub += 1;
        subs.push((id, pattern));
        id
    }

    pub fn publish(
        &mut self,
        topic: &str,
        publisher: &str,
        payload: BTreeMap<String, f64>,
    ) -> Result<(), BusError> {
        let topic: Topic = topic.parse()?;
        self.publish_to(topic, publisher, payload);
        Ok(())
    }

    /// Publishes on an already validated topic, stamped with the current round.
    pub fn publish_to(&mut self, topic: Topic, publisher: &str, payload: BTreeMap<String, f64>) {
        let msg = Message {
            topic,
            payload,
            publisher: publisher.to_string(),
            publish_round: self.round,
        };
        let dropped = self.rng.gen::<f64>() < self.policy.drop_probability;
        let delay = if self.policy.delay_rounds > 0 {
            self.rng.gen_range(0..=self.policy.delay_rounds) as u64
        } else {
            0
        };
        self.log(EventKind::Publish, &msg, None);
        self.stats.published += 1;
        self.stats.queued += 1;
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Pending {
            due: if dropped { self.round } else { self.round + delay },
            msg,
            dropped,
            seq,
        });
    }

    /// One heartbeat: hand every due message to matching subscribers, record
    /// drops, then advance the round. Returns the number of inbox insertions.
    pub fn deliver_round(&mut self) -> usize {
        let round = self.round;
        let (mut due, rest): (Vec<_>, Vec<_>) =
            std::mem::take(&mut self.queue).into_iter().partition(|p| p.due <= round);
        self.queue = rest;
        due.sort_by(|a, b| {
            (a.msg.publish_round, &a.msg.publisher, &a.msg.topic, a.seq).cmp(&(
                b.msg.publish_round,
                &b.msg.publisher,
                &b.msg.topic,
                b.seq,
            ))
        });

        let mut count = 0;
        for p in due {
            self.stats.queued -= 1;
            if p.dropped {
                self.stats.dropped += 1;
                self.log(EventKind::Drop, &p.msg, None);
                continue;
            }
            self.stats.delivered += 1;
            let targets: BTreeSet<String> = self
                .subscriptions
                .iter()
                .filter(|(_, pats)| pats.iter().any(|(_, pat)| pat.matches(&p.msg.topic)))
                .map(|(sub, _)| sub.clone())
                .collect();
            for sub in targets {
                self.log(EventKind::Deliver, &p.msg, Some(&sub));
                self.inboxes
                    .get_mut(&sub)
                    .expect("subscriber has an inbox")
                    .push(p.msg.clone());
                count += 1;
            }
        }
        self.stats.deliveries += count as u64;
        self.round += 1;
        count
    }

    /// Returns and clears the subscriber's inbox, in delivery order.
    pub fn drain_inbox(&mut self, subscriber: &str) -> Vec<Message> {
        self.inboxes
            .get_mut(subscriber)
            .map(std::mem::take)
            .unwrap_or_default()
    }
}
