//! In-process publish/subscribe broker with token-authenticated sessions.
//!
//! Delivery is at-least-once: published messages are enqueued per client,
//! stay buffered while the client is away, and unacked deliveries are
//! replayed on reconnect (duplicates carry the same `msg_id`, so receivers
//! dedup on it). Per (publisher, topic, subscriber) first-delivery order
//! equals publish order. Client records persist across reconnects; a second
//! connect for the same client id supersedes the first session.

use std::collections::{BTreeMap, VecDeque};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use thiserror::Error;

use crate::clock::TimeSource;

use super::topic::{Topic, TopicError, TopicPattern};

/// Default per-subscriber buffer; overflow disconnects the subscriber.
pub const DEFAULT_QUEUE_CAPACITY: usize = 4096;

/// One published message as seen by subscribers.
#[derive(Debug, Clone, PartialEq)]
pub struct BusMessage {
    pub topic: Topic,
    pub payload: Vec<u8>,
    pub publisher_id: String,
    /// Unique per broker lifetime; redeliveries reuse it.
    pub msg_id: u64,
    pub ts: u64,
}

/// Returned once a publish has been durably enqueued to every subscriber.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ack {
    pub msg_id: u64,
    /// How many subscriber queues took the message.
    pub deliveries: usize,
}

/// A delivery handed to a subscriber; `redelivery` marks replays.
#[derive(Debug, Clone, PartialEq)]
pub struct Delivery {
    pub message: BusMessage,
    pub redelivery: bool,
}

/// Why a session stopped being live.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloseReason {
    /// Another connect for the same client id took over.
    Superseded,
    /// The subscriber queue overflowed; buffered state was dropped and the
    /// client must resync through shadows.
    Overflow,
    /// Orderly close requested by the client.
    Requested,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BusError {
    #[error("authentication failed for client {0}")]
    AuthFailure(String),
    #[error("session is not connected")]
    NotConnected,
    #[error("session superseded by a newer connection")]
    Superseded,
    #[error("invalid topic: {0}")]
    InvalidTopic(TopicError),
    #[error("invalid pattern: {0}")]
    InvalidPattern(TopicError),
}

/// Security-relevant broker events.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditRecord {
    pub ts: u64,
    pub client_id: String,
    pub event: AuditEvent,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AuditEvent {
    AuthFailure,
    QueueOverflow { dropped: usize },
}

#[derive(Debug, Default)]
struct ClientState {
    /// Bumped on every successful connect; stale session handles see it.
    epoch: u64,
    connected: bool,
    close_reason: Option<CloseReason>,
    subscriptions: Vec<TopicPattern>,
    /// Waiting for first delivery (message, redelivery flag).
    pending: VecDeque<(BusMessage, bool)>,
    /// Delivered but not yet acked.
    inflight: VecDeque<BusMessage>,
}

struct BrokerCore {
    registry: BTreeMap<String, String>,
    clients: BTreeMap<String, ClientState>,
    next_msg_id: u64,
    audit: Vec<AuditRecord>,
    queue_capacity: usize,
}

struct Shared {
    core: Mutex<BrokerCore>,
    wakeup: Condvar,
    time: Arc<dyn TimeSource>,
}

/// Handle to the broker; cheap to clone and share across threads.
#[derive(Clone)]
pub struct Broker {
    shared: Arc<Shared>,
}

impl Broker {
    pub fn new(time: Arc<dyn TimeSource>) -> Self {
        Self::with_capacity(time, DEFAULT_QUEUE_CAPACITY)
    }

    pub fn with_capacity(time: Arc<dyn TimeSource>, queue_capacity: usize) -> Self {
        Broker {
            shared: Arc::new(Shared {
                core: Mutex::new(BrokerCore {
                    registry: BTreeMap::new(),
                    clients: BTreeMap::new(),
                    next_msg_id: 0,
                    audit: Vec::new(),
                    queue_capacity,
                }),
                wakeup: Condvar::new(),
                time,
            }),
        }
    }

    /// Provision a client credential. Connects are rejected until the
    /// client id is registered.
    pub fn register(&self, client_id: &str, token: &str) {
        let mut core = self.lock();
        core.registry.insert(client_id.to_string(), token.to_string());
    }

    /// Authenticate and open a session. An existing live session for the
    /// same client id is superseded first; its unacked deliveries are
    /// queued again for the new session.
    pub fn connect(&self, client_id: &str, token: &str) -> Result<Session, BusError> {
        let mut core = self.lock();
        let ok = core.registry.get(client_id).map(String::as_str) == Some(token);
        if !ok {
            let ts = self.shared.time.now_ms();
            core.audit.push(AuditRecord {
                ts,
                client_id: client_id.to_string(),
                event: AuditEvent::AuthFailure,
            });
            return Err(BusError::AuthFailure(client_id.to_string()));
        }

        let client = core.clients.entry(client_id.to_string()).or_default();
        if client.connected {
            client.close_reason = Some(CloseReason::Superseded);
        }
        // Unacked deliveries go back to the head so replay precedes newer
        // messages and first-delivery order is preserved.
        while let Some(msg) = client.inflight.pop_back() {
            client.pending.push_front((msg, true));
        }
        client.epoch += 1;
        client.connected = true;
        let epoch = client.epoch;
        drop(core);
        self.shared.wakeup.notify_all();

        Ok(Session {
            broker: self.clone(),
            client_id: client_id.to_string(),
            epoch,
        })
    }

    /// Pure pattern match, exposed for callers that route by hand.
    pub fn topic_matches(pattern: &TopicPattern, topic: &Topic) -> bool {
        pattern.matches(topic)
    }

    pub fn audit_log(&self) -> Vec<AuditRecord> {
        self.lock().audit.clone()
    }

    /// Number of live sessions, mostly for tests and the broker CLI.
    pub fn connected_count(&self) -> usize {
        self.lock().clients.values().filter(|c| c.connected).count()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, BrokerCore> {
        self.shared.core.lock().expect("broker lock poisoned")
    }

    fn publish_inner(
        &self,
        client_id: &str,
        epoch: u64,
        topic: &str,
        payload: &[u8],
    ) -> Result<Ack, BusError> {
        let topic = Topic::parse(topic).map_err(BusError::InvalidTopic)?;
        let ts = self.shared.time.now_ms();
        let mut core = self.lock();
        check_live(&core, client_id, epoch)?;

        let msg_id = core.next_msg_id;
        core.next_msg_id += 1;
        let message = BusMessage {
            topic,
            payload: payload.to_vec(),
            publisher_id: client_id.to_string(),
            msg_id,
            ts,
        };

        let capacity = core.queue_capacity;
        let mut deliveries = 0;
        let mut overflowed: Vec<String> = Vec::new();
        for (id, client) in core.clients.iter_mut() {
            let matched = client.subscriptions.iter().any(|p| p.matches(&message.topic));
            if !matched {
                continue;
            }
            if client.pending.len() >= capacity {
                overflowed.push(id.clone());
                continue;
            }
            client.pending.push_back((message.clone(), false));
            deliveries += 1;
        }
        for id in overflowed {
            let dropped = {
                let client = core.clients.get_mut(&id).expect("client exists");
                let dropped = client.pending.len() + client.inflight.len();
                client.connected = false;
                client.close_reason = Some(CloseReason::Overflow);
                client.pending.clear();
                client.inflight.clear();
                client.subscriptions.clear();
                dropped
            };
            core.audit.push(AuditRecord {
                ts,
                client_id: id,
                event: AuditEvent::QueueOverflow { dropped },
            });
        }
        drop(core);
        self.shared.wakeup.notify_all();
        Ok(Ack { msg_id, deliveries })
    }

    fn subscribe_inner(&self, client_id: &str, epoch: u64, pattern: &str) -> Result<(), BusError> {
        let pattern = TopicPattern::parse(pattern).map_err(BusError::InvalidPattern)?;
        let mut core = self.lock();
        check_live(&core, client_id, epoch)?;
        let client = core.clients.get_mut(client_id).expect("live client");
        if !client.subscriptions.contains(&pattern) {
            client.subscriptions.push(pattern);
        }
        Ok(())
    }

    fn try_recv_inner(&self, client_id: &str, epoch: u64) -> Result<Option<Delivery>, BusError> {
        let mut core = self.lock();
        check_live(&core, client_id, epoch)?;
        let client = core.clients.get_mut(client_id).expect("live client");
        Ok(client.pending.pop_front().map(|(message, redelivery)| {
            client.inflight.push_back(message.clone());
            Delivery { message, redelivery }
        }))
    }

    fn ack_inner(&self, client_id: &str, epoch: u64, msg_id: u64) -> Result<(), BusError> {
        let mut core = self.lock();
        check_live(&core, client_id, epoch)?;
        let client = core.clients.get_mut(client_id).expect("live client");
        client.inflight.retain(|m| m.msg_id != msg_id);
        Ok(())
    }

    fn close_inner(&self, client_id: &str, epoch: u64) {
        let mut core = self.lock();
        if let Some(client) = core.clients.get_mut(client_id) {
            if client.epoch == epoch && client.connected {
                client.connected = false;
                client.close_reason = Some(CloseReason::Requested);
                while let Some(msg) = client.inflight.pop_back() {
                    client.pending.push_front((msg, true));
                }
            }
        }
        drop(core);
        self.shared.wakeup.notify_all();
    }

    fn close_reason_for(&self, client_id: &str, epoch: u64) -> Option<CloseReason> {
        let core = self.lock();
        let client = core.clients.get(client_id)?;
        if client.epoch != epoch || !client.connected {
            client.close_reason.or(Some(CloseReason::Superseded))
        } else {
            None
        }
    }
}

fn check_live(core: &BrokerCore, client_id: &str, epoch: u64) -> Result<(), BusError> {
    match core.clients.get(client_id) {
        Some(client) if client.epoch == epoch && client.connected => Ok(()),
        Some(client) if client.epoch != epoch => Err(BusError::Superseded),
        _ => Err(BusError::NotConnected),
    }
}

/// A live (or formerly live) authenticated session.
///
/// All operations fail with [`BusError::Superseded`] once another connect
/// for the same client id has taken over.
#[derive(Clone)]
pub struct Session {
    broker: Broker,
    client_id: String,
    epoch: u64,
}

impl Session {
    pub fn client_id(&self) -> &str {
        &self.client_id
    }

    /// Publish to a concrete topic. Returns after the message is enqueued
    /// to every matching subscriber.
    pub fn publish(&self, topic: &str, payload: &[u8]) -> Result<Ack, BusError> {
        self.broker
            .publish_inner(&self.client_id, self.epoch, topic, payload)
    }

    /// Register a pattern; future matching publishes are delivered. No
    /// retroactive delivery.
    pub fn subscribe(&self, pattern: &str) -> Result<(), BusError> {
        self.broker
            .subscribe_inner(&self.client_id, self.epoch, pattern)
    }

    /// Pop the next delivery if one is queued. The message stays inflight
    /// until [`Session::ack`] is called with its id.
    pub fn try_recv(&self) -> Result<Option<Delivery>, BusError> {
        self.broker.try_recv_inner(&self.client_id, self.epoch)
    }

    /// Block up to `timeout` for a delivery. Used by transport writers.
    pub fn recv_timeout(&self, timeout: Duration) -> Result<Option<Delivery>, BusError> {
        let deadline = std::time::Instant::now() + timeout;
        loop {
            match self.try_recv() {
                Ok(Some(d)) => return Ok(Some(d)),
                Ok(None) => {}
                Err(e) => return Err(e),
            }
            let now = std::time::Instant::now();
            if now >= deadline {
                return Ok(None);
            }
            let core = self.broker.lock();
            let _unused = self
                .broker
                .shared
                .wakeup
                .wait_timeout(core, deadline - now)
                .expect("broker lock poisoned");
        }
    }

    /// Acknowledge a delivery; the broker stops replaying that message.
    pub fn ack(&self, msg_id: u64) -> Result<(), BusError> {
        self.broker.ack_inner(&self.client_id, self.epoch, msg_id)
    }

    /// Drain everything currently queued, acking as it goes.
    pub fn drain_acked(&self) -> Result<Vec<Delivery>, BusError> {
        let mut out = Vec::new();
        while let Some(d) = self.try_recv()? {
            self.ack(d.message.msg_id)?;
            out.push(d);
        }
        Ok(out)
    }

    /// Orderly close; buffered and unacked messages are kept for the next
    /// connection of this client id.
    pub fn close(&self) {
        self.broker.close_inner(&self.client_id, self.epoch);
    }

    /// If this session is no longer live, why.
    pub fn close_reason(&self) -> Option<CloseReason> {
        self.broker.close_reason_for(&self.client_id, self.epoch)
    }

    pub fn is_live(&self) -> bool {
        self.close_reason().is_none()
    }
}
