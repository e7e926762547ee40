//! Edge gateway: local rule engine, role-based read policy, and a
//! store-and-forward queue that rides out cloud-link outages.
//!
//! A gateway owns a fixed set of registered devices. Every accepted
//! reading is appended to the forward queue (and drained immediately when
//! the link is up), then evaluated against the rule set; each rule whose
//! comparator holds and whose debounce window is open yields exactly one
//! alert. When the link comes back after an outage the queue drains to the
//! cloud in FIFO order and a shadow reconcile is requested for every local
//! device. All decisions are pure functions of the inputs — the gateway
//! keeps no wall-clock state, so identical ingest sequences produce
//! identical alert sequences.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    validate_reading, DeviceDescriptor, InvariantViolation, Metric, MetricClass, MetricValue,
    Principal, ReadingCursor, Role, TelemetryReading,
};

/// Default forward-queue capacity when the config omits it.
pub const DEFAULT_FORWARD_CAPACITY: usize = 100_000;

/// Debounce for the synthetic queue-overflow alert.
const OVERFLOW_DEBOUNCE_MS: u64 = 300_000;

/// Default rule debounce when the config omits it: one alert per rule and
/// device per five simulated minutes.
pub const DEFAULT_DEBOUNCE_MS: u64 = 300_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparator {
    Lt,
    Le,
    Gt,
    Ge,
    OutsideRange,
}

/// Scalar bound for point comparators, `{lo, hi}` for `outside_range`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Threshold {
    Single(f64),
    Range { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Info,
    Warning,
    Critical,
}

impl Severity {
    /// Lowercase wire name, used as the severity level in alert topics.
    pub fn name(&self) -> &'static str {
        match self {
            Severity::Info => "info",
            Severity::Warning => "warning",
            Severity::Critical => "critical",
        }
    }
}

/// One threshold rule. `debounce_ms` lower-bounds the simulated time
/// between alerts for the same (rule, device) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub rule_id: String,
    pub metric: Metric,
    pub comparator: Comparator,
    pub threshold: Threshold,
    pub severity: Severity,
    #[serde(default = "default_debounce")]
    pub debounce_ms: u64,
    pub recipients: BTreeSet<Role>,
}

fn default_debounce() -> u64 {
    DEFAULT_DEBOUNCE_MS
}

impl Rule {
    /// Shape check: comparator and threshold must agree, ranges must be
    /// ordered, and the metric must be scalar-valued.
    pub fn validate(&self) -> Result<(), GatewayError> {
        match (self.comparator, self.threshold) {
            (Comparator::OutsideRange, Threshold::Range { lo, hi }) if lo < hi => {}
            (Comparator::OutsideRange, Threshold::Range { lo, hi }) => {
                return Err(GatewayError::InvalidConfig(format!(
                    "rule {}: outside_range needs lo < hi, got lo={lo} hi={hi}",
                    self.rule_id
                )));
            }
            (Comparator::OutsideRange, Threshold::Single(_)) => {
                return Err(GatewayError::InvalidConfig(format!(
                    "rule {}: outside_range needs a {{lo, hi}} threshold",
                    self.rule_id
                )));
            }
            (_, Threshold::Range { .. }) => {
                return Err(GatewayError::InvalidConfig(format!(
                    "rule {}: point comparator takes a single threshold",
                    self.rule_id
                )));
            }
            (_, Threshold::Single(_)) => {}
        }
        if self.metric == Metric::PositionFt {
            return Err(GatewayError::InvalidConfig(format!(
                "rule {}: comparators are scalar; position_ft is not",
                self.rule_id
            )));
        }
        Ok(())
    }
}

/// An alert produced by the rule engine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertEvent {
    pub alert_id: String,
    pub rule_id: String,
    pub device_id: String,
    pub observed_value: f64,
    pub ts: u64,
    pub severity: Severity,
    pub recipients: BTreeSet<Role>,
    /// True when the alert was generated during a link outage and reached
    /// the cloud only after resync (original `ts` is preserved).
    pub delivered_late: bool,
}

/// What the forward queue carries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "entry", rename_all = "snake_case")]
pub enum QueueEntry {
    Reading(TelemetryReading),
    Alert(AlertEvent),
}

/// Bounded FIFO buffer between the gateway and the cloud.
#[derive(Debug)]
pub struct ForwardQueue {
    entries: VecDeque<QueueEntry>,
    capacity: usize,
    high_water: usize,
}

impl ForwardQueue {
    pub fn new(capacity: usize) -> Self {
        ForwardQueue {
            entries: VecDeque::new(),
            capacity,
            high_water: 0,
        }
    }

    /// Append an entry, evicting the oldest first if the queue is full.
    /// Returns the evicted entry so the caller can audit the loss.
    pub fn push(&mut self, entry: QueueEntry) -> Option<QueueEntry> {
        let dropped = if self.entries.len() >= self.capacity {
            self.entries.pop_front()
        } else {
            None
        };
        self.entries.push_back(entry);
        self.high_water = self.high_water.max(self.entries.len());
        dropped
    }

    pub fn front(&self) -> Option<&QueueEntry> {
        self.entries.front()
    }

    pub fn pop(&mut self) -> Option<QueueEntry> {
        self.entries.pop_front()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Deepest the queue has ever been.
    pub fn high_water(&self) -> usize {
        self.high_water
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Permission {
    Full,
    View,
    None,
}

/// Role → metric-class → permission map. Unlisted combinations deny.
/// The owning patient always has full access to their own vitals,
/// regardless of what the map says.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AccessPolicy {
    pub grants: BTreeMap<Role, BTreeMap<MetricClass, Permission>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    AllowFull,
    AllowView,
    Deny,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkState {
    Up,
    Down,
}

/// The link dropped mid-transfer; the entry may or may not have arrived.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("cloud link dropped mid-transfer")]
pub struct LinkFault;

/// Where drained entries go. Implementations publish to the message bus;
/// tests substitute recorders and fault injectors. `deliver` returning
/// `Err` means the link died mid-send — the entry stays queued and may be
/// re-sent later, so downstream consumers dedup readings by
/// `(device_id, seq)` and alerts by `alert_id`.
pub trait CloudLink: Send {
    fn deliver(&mut self, entry: &QueueEntry) -> Result<(), LinkFault>;
    /// Ask the cloud to reconcile a device shadow after an outage.
    fn request_reconcile(&mut self, device_id: &str);
}

/// Why an entry was evicted; kept by the gateway for post-run forensics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverflowAudit {
    pub ts: u64,
    pub dropped: QueueEntry,
    pub queue_depth: usize,
}

/// On-disk gateway configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GatewayConfig {
    pub gateway_id: String,
    pub token: String,
    pub devices: Vec<DeviceDescriptor>,
    pub rules: Vec<Rule>,
    #[serde(default)]
    pub policy: AccessPolicy,
    #[serde(default = "default_capacity")]
    pub queue_capacity: usize,
}

fn default_capacity() -> usize {
    DEFAULT_FORWARD_CAPACITY
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("device {0} is not registered with this gateway")]
    UnknownDevice(String),
    #[error("reading rejected: {0:?}")]
    InvalidReading(Vec<InvariantViolation>),
    #[error("rule {rule_id} is for {rule_metric}, reading is {reading_metric}")]
    MetricMismatch {
        rule_id: String,
        rule_metric: Metric,
        reading_metric: Metric,
    },
    #[error("metric {0} has no scalar value to compare")]
    NonScalarReading(Metric),
    #[error("bad gateway config: {0}")]
    InvalidConfig(String),
}

/// Decide whether a rule fires for a reading. Pure: the outcome depends
/// only on the arguments. A rule fires iff its comparator holds for the
/// reading's value and at least `debounce_ms` of simulated time has
/// passed since the last fire for this (rule, device) pair.
pub fn evaluate_rule(
    rule: &Rule,
    r: &TelemetryReading,
    last_fire_ts: Option<u64>,
) -> Result<Option<AlertEvent>, GatewayError> {
    if rule.metric != r.metric {
        return Err(GatewayError::MetricMismatch {
            rule_id: rule.rule_id.clone(),
            rule_metric: rule.metric,
            reading_metric: r.metric,
        });
    }
    let value = r
        .value
        .as_scalar()
        .ok_or(GatewayError::NonScalarReading(r.metric))?;
    let holds = comparator_holds(rule.comparator, rule.threshold, value);
    let window_open = match last_fire_ts {
        None => true,
        // A reading time-stamped before the last fire is inside the window.
        Some(last) => r.ts.checked_sub(last).is_some_and(|gap| gap >= rule.debounce_ms),
    };
    if !(holds && window_open) {
        return Ok(None);
    }
    Ok(Some(AlertEvent {
        alert_id: format!("{}@{}:{}", rule.rule_id, r.device_id, r.ts),
        rule_id: rule.rule_id.clone(),
        device_id: r.device_id.clone(),
        observed_value: value,
        ts: r.ts,
        severity: rule.severity,
        recipients: rule.recipients.clone(),
        delivered_late: false,
    }))
}

fn comparator_holds(comparator: Comparator, threshold: Threshold, value: f64) -> bool {
    match (comparator, threshold) {
        (Comparator::Lt, Threshold::Single(t)) => value < t,
        (Comparator::Le, Threshold::Single(t)) => value <= t,
        (Comparator::Gt, Threshold::Single(t)) => value > t,
        (Comparator::Ge, Threshold::Single(t)) => value >= t,
        (Comparator::OutsideRange, Threshold::Range { lo, hi }) => value < lo || value > hi,
        // Rule::validate rejects these shapes; unreachable through Gateway.
        _ => false,
    }
}

/// Pure policy lookup used by [`Gateway::authorize_read`].
pub fn decide(
    policy: &AccessPolicy,
    principal: &Principal,
    device_owner: &str,
    metric: Metric,
) -> Decision {
    let class = metric.class();
    if principal.role == Role::Patient
        && principal.principal_id == device_owner
        && class == MetricClass::Vitals
    {
        return Decision::AllowFull;
    }
    match policy
        .grants
        .get(&principal.role)
        .and_then(|by_class| by_class.get(&class))
    {
        Some(Permission::Full) => Decision::AllowFull,
        Some(Permission::View) => Decision::AllowView,
        Some(Permission::None) | None => Decision::Deny,
    }
}

/// Redact a value according to a decision: full access passes raw values
/// through, view access rounds scalars to integer precision and floors
/// positions to a 10-ft grid (zone level), deny yields nothing.
pub fn apply_decision(decision: Decision, value: MetricValue) -> Option<MetricValue> {
    match decision {
        Decision::AllowFull => Some(value),
        Decision::Deny => None,
        Decision::AllowView => Some(match value {
            MetricValue::Scalar(v) => MetricValue::Scalar(v.round()),
            MetricValue::Point { x, y } => MetricValue::Point {
                x: (x / 10.0).floor() * 10.0,
                y: (y / 10.0).floor() * 10.0,
            },
        }),
    }
}

/// One gateway instance. Single logical event loop: callers serialize
/// `ingest`/`set_link` per instance; separate instances share nothing.
pub struct Gateway {
    gateway_id: String,
    devices: BTreeMap<String, DeviceDescriptor>,
    rules: Vec<Rule>,
    policy: AccessPolicy,
    queue: ForwardQueue,
    link: Box<dyn CloudLink>,
    link_up: bool,
    last_fire: BTreeMap<(String, String), u64>,
    cursors: BTreeMap<String, ReadingCursor>,
    audit: Vec<OverflowAudit>,
    dropped_total: u64,
}

impl Gateway {
    pub fn new(config: GatewayConfig, link: Box<dyn CloudLink>) -> Result<Self, GatewayError> {
        if config.queue_capacity == 0 {
            return Err(GatewayError::InvalidConfig(
                "queue_capacity must be at least 1".into(),
            ));
        }
        let mut devices = BTreeMap::new();
        for descriptor in &config.devices {
            if descriptor.home_gateway != config.gateway_id {
                return Err(GatewayError::InvalidConfig(format!(
                    "device {} is homed to {}, not {}",
                    descriptor.device_id, descriptor.home_gateway, config.gateway_id
                )));
            }
            if devices
                .insert(descriptor.device_id.clone(), descriptor.clone())
                .is_some()
            {
                return Err(GatewayError::InvalidConfig(format!(
                    "duplicate device id {}",
                    descriptor.device_id
                )));
            }
        }
        let mut rule_ids = BTreeSet::new();
        for rule in &config.rules {
            rule.validate()?;
            if !rule_ids.insert(rule.rule_id.clone()) {
                return Err(GatewayError::InvalidConfig(format!(
                    "duplicate rule id {}",
                    rule.rule_id
                )));
            }
        }
        Ok(Gateway {
            gateway_id: config.gateway_id,
            devices,
            rules: config.rules,
            policy: config.policy,
            queue: ForwardQueue::new(config.queue_capacity),
            link,
            link_up: true,
            last_fire: BTreeMap::new(),
            cursors: BTreeMap::new(),
            audit: Vec::new(),
            dropped_total: 0,
        })
    }

    pub fn gateway_id(&self) -> &str {
        &self.gateway_id
    }

    pub fn link_state(&self) -> LinkState {
        if self.link_up {
            LinkState::Up
        } else {
            LinkState::Down
        }
    }

    pub fn queue_depth(&self) -> usize {
        self.queue.len()
    }

    pub fn queue_high_water(&self) -> usize {
        self.queue.high_water()
    }

    pub fn dropped_total(&self) -> u64 {
        self.dropped_total
    }

    pub fn overflow_audit(&self) -> &[OverflowAudit] {
        &self.audit
    }

    pub fn device(&self, device_id: &str) -> Option<&DeviceDescriptor> {
        self.devices.get(device_id)
    }

    pub fn device_ids(&self) -> impl Iterator<Item = &str> {
        self.devices.keys().map(String::as_str)
    }

    /// Accept one reading: validate, queue for the cloud (forwarding
    /// immediately while the link is up), and run the rule engine.
    /// Returns the alerts fired, in rule-configuration order — these are
    /// the local deliveries; copies ride the queue to the cloud.
    pub fn ingest(&mut self, r: TelemetryReading) -> Result<Vec<AlertEvent>, GatewayError> {
        if !self.devices.contains_key(&r.device_id) {
            return Err(GatewayError::UnknownDevice(r.device_id));
        }
        validate_reading(&r, self.cursors.get(&r.device_id))
            .map_err(GatewayError::InvalidReading)?;
        self.cursors
            .insert(r.device_id.clone(), ReadingCursor { seq: r.seq, ts: r.ts });

        self.enqueue(QueueEntry::Reading(r.clone()));

        let mut fired = Vec::new();
        for i in 0..self.rules.len() {
            if self.rules[i].metric != r.metric {
                continue;
            }
            let key = (self.rules[i].rule_id.clone(), r.device_id.clone());
            let last = self.last_fire.get(&key).copied();
            if let Some(mut alert) = evaluate_rule(&self.rules[i], &r, last)? {
                alert.delivered_late = !self.link_up;
                self.last_fire.insert(key, r.ts);
                self.enqueue(QueueEntry::Alert(alert.clone()));
                fired.push(alert);
            }
        }
        if self.link_up {
            self.drain();
        }
        Ok(fired)
    }

    /// Flip the cloud link. On a down→up transition the queue drains in
    /// FIFO order and then a shadow reconcile is requested for every local
    /// device (skipped if the link faults again mid-drain).
    pub fn set_link(&mut self, up: bool) -> LinkState {
        let was_up = self.link_up;
        self.link_up = up;
        if up && !was_up {
            self.drain();
            if self.link_up {
                for device_id in self.devices.keys() {
                    self.link.request_reconcile(device_id);
                }
            }
        }
        self.link_state()
    }

    /// Role-based read decision for one metric of one device. Unknown
    /// devices deny. The owning patient always gets full access to their
    /// own vitals.
    pub fn authorize_read(&self, principal: &Principal, device_id: &str, metric: Metric) -> Decision {
        match self.devices.get(device_id) {
            Some(descriptor) => decide(&self.policy, principal, &descriptor.owner, metric),
            None => Decision::Deny,
        }
    }

    /// Convenience read path: decision plus redaction in one step.
    pub fn read_value(
        &self,
        principal: &Principal,
        device_id: &str,
        metric: Metric,
        raw: MetricValue,
    ) -> Option<MetricValue> {
        apply_decision(self.authorize_read(principal, device_id, metric), raw)
    }

    fn enqueue(&mut self, entry: QueueEntry) {
        let ts = entry_ts(&entry);
        if let Some(dropped) = self.queue.push(entry) {
            self.dropped_total += 1;
            self.audit.push(OverflowAudit {
                ts,
                dropped,
                queue_depth: self.queue.len(),
            });
            self.emit_overflow_alert(ts);
        }
    }

    /// Local-only warning about data loss. Deliberately not queued for the
    /// cloud: pushing it would evict yet another entry while the queue is
    /// already thrashing. The cloud sees the loss in post-run statistics.
    fn emit_overflow_alert(&mut self, ts: u64) {
        let key = ("queue_overflow".to_string(), self.gateway_id.clone());
        let recent = self
            .last_fire
            .get(&key)
            .is_some_and(|last| ts.saturating_sub(*last) < OVERFLOW_DEBOUNCE_MS);
        if recent {
            return;
        }
        self.last_fire.insert(key, ts);
        self.audit.push(OverflowAudit {
            ts,
            dropped: QueueEntry::Alert(AlertEvent {
                alert_id: format!("queue_overflow@{}:{}", self.gateway_id, ts),
                rule_id: "queue_overflow".into(),
                device_id: self.gateway_id.clone(),
                observed_value: self.dropped_total as f64,
                ts,
                severity: Severity::Warning,
                recipients: BTreeSet::from([Role::Operator]),
                delivered_late: false,
            }),
            queue_depth: self.queue.len(),
        });
    }

    fn drain(&mut self) {
        while let Some(front) = self.queue.front() {
            match self.link.deliver(front) {
                Ok(()) => {
                    self.queue.pop();
                }
                Err(LinkFault) => {
                    self.link_up = false;
                    break;
                }
            }
        }
    }
}

fn entry_ts(entry: &QueueEntry) -> u64 {
    match entry {
        QueueEntry::Reading(r) => r.ts,
        QueueEntry::Alert(a) => a.ts,
    }
}
