//! Shared domain vocabulary: devices, metrics, readings, principals.
//!
//! Every other module consumes these types. Readings are immutable value
//! records; validation is a pure function of the reading plus an explicit
//! per-device cursor, so callers own the monotonicity state.

use std::fmt;

use serde::{Deserialize, Serialize};

/// What a physical device is. Fixed for the device's lifetime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceKind {
    Oximeter,
    BpMonitor,
    Thermometer,
    DoorSensor,
    MotionSensor,
    PositionTag,
    Wearable,
    Camera,
    SanitizerRobot,
}

/// Registration record for one physical device.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceDescriptor {
    pub device_id: String,
    pub kind: DeviceKind,
    /// Principal that owns the device (the patient, for health devices).
    pub owner: String,
    /// Gateway the device is homed to.
    pub home_gateway: String,
}

/// Telemetry metric identifiers, in the units the name states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "body_temp_F")]
    BodyTempF,
    #[serde(rename = "spo2_pct")]
    Spo2Pct,
    #[serde(rename = "bp_systolic_mmHg")]
    BpSystolicMmHg,
    #[serde(rename = "bp_diastolic_mmHg")]
    BpDiastolicMmHg,
    #[serde(rename = "pulse_bpm")]
    PulseBpm,
    #[serde(rename = "door_angle_deg")]
    DoorAngleDeg,
    #[serde(rename = "presence_flag")]
    PresenceFlag,
    #[serde(rename = "position_ft")]
    PositionFt,
}

impl Metric {
    pub const ALL: [Metric; 8] = [
        Metric::BodyTempF,
        Metric::Spo2Pct,
        Metric::BpSystolicMmHg,
        Metric::BpDiastolicMmHg,
        Metric::PulseBpm,
        Metric::DoorAngleDeg,
        Metric::PresenceFlag,
        Metric::PositionFt,
    ];

    /// Wire/JSON name of the metric.
    pub fn name(&self) -> &'static str {
        match self {
            Metric::BodyTempF => "body_temp_F",
            Metric::Spo2Pct => "spo2_pct",
            Metric::BpSystolicMmHg => "bp_systolic_mmHg",
            Metric::BpDiastolicMmHg => "bp_diastolic_mmHg",
            Metric::PulseBpm => "pulse_bpm",
            Metric::DoorAngleDeg => "door_angle_deg",
            Metric::PresenceFlag => "presence_flag",
            Metric::PositionFt => "position_ft",
        }
    }

    pub fn parse(name: &str) -> Option<Metric> {
        Metric::ALL.iter().copied().find(|m| m.name() == name)
    }

    /// Access-policy class the metric belongs to.
    pub fn class(&self) -> MetricClass {
        match self {
            Metric::BodyTempF
            | Metric::Spo2Pct
            | Metric::BpSystolicMmHg
            | Metric::BpDiastolicMmHg
            | Metric::PulseBpm => MetricClass::Vitals,
            Metric::DoorAngleDeg | Metric::PresenceFlag => MetricClass::Environment,
            Metric::PositionFt => MetricClass::Location,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Coarse metric grouping used by access policies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricClass {
    Vitals,
    Environment,
    Location,
}

impl MetricClass {
    pub const ALL: [MetricClass; 3] = [
        MetricClass::Vitals,
        MetricClass::Environment,
        MetricClass::Location,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            MetricClass::Vitals => "vitals",
            MetricClass::Environment => "environment",
            MetricClass::Location => "location",
        }
    }
}

/// A metric sample value: most metrics are scalar, positions are 2-D feet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MetricValue {
    Scalar(f64),
    Point { x: f64, y: f64 },
}

impl MetricValue {
    pub fn as_scalar(&self) -> Option<f64> {
        match self {
            MetricValue::Scalar(v) => Some(*v),
            MetricValue::Point { .. } => None,
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            MetricValue::Scalar(v) => v.is_finite(),
            MetricValue::Point { x, y } => x.is_finite() && y.is_finite(),
        }
    }
}

impl From<f64> for MetricValue {
    fn from(v: f64) -> Self {
        MetricValue::Scalar(v)
    }
}

impl fmt::Display for MetricValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricValue::Scalar(v) => write!(f, "{v}"),
            MetricValue::Point { x, y } => write!(f, "({x},{y})"),
        }
    }
}

/// One timestamped metric sample from a device.
///
/// `seq` is assigned by the device simulator itself, so duplicate
/// suppression works end-to-end across store-and-forward replays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryReading {
    pub device_id: String,
    pub metric: Metric,
    pub value: MetricValue,
    /// Simulated milliseconds since scenario start.
    pub ts: u64,
    /// Per-device counter, strictly increasing.
    pub seq: u64,
}

impl TelemetryReading {
    pub fn scalar(device_id: &str, metric: Metric, value: f64, ts: u64, seq: u64) -> Self {
        TelemetryReading {
            device_id: device_id.to_string(),
            metric,
            value: MetricValue::Scalar(value),
            ts,
            seq,
        }
    }
}

/// Access-control roles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Patient,
    Family,
    Practitioner,
    LocalAuthority,
    Operator,
}

impl Role {
    pub const ALL: [Role; 5] = [
        Role::Patient,
        Role::Family,
        Role::Practitioner,
        Role::LocalAuthority,
        Role::Operator,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Role::Patient => "patient",
            Role::Family => "family",
            Role::Practitioner => "practitioner",
            Role::LocalAuthority => "local_authority",
            Role::Operator => "operator",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// An authenticated actor. The role is fixed for the session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Principal {
    pub principal_id: String,
    pub role: Role,
}

impl Principal {
    pub fn new(principal_id: &str, role: Role) -> Self {
        Principal {
            principal_id: principal_id.to_string(),
            role,
        }
    }
}

/// Last accepted (seq, ts) for a device; input to monotonicity checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReadingCursor {
    pub seq: u64,
    pub ts: u64,
}

/// A reading invariant that did not hold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvariantViolation {
    pub field: String,
    pub message: String,
}

impl InvariantViolation {
    fn new(field: &str, message: String) -> Self {
        InvariantViolation {
            field: field.to_string(),
            message,
        }
    }
}

impl fmt::Display for InvariantViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

pub type ValidationResult = Result<(), Vec<InvariantViolation>>;

/// Check every per-reading invariant, plus seq/ts monotonicity against the
/// caller's cursor for the device (pass `None` for the first reading).
///
/// Pure: the same `(reading, cursor)` pair always yields the same result.
pub fn validate_reading(r: &TelemetryReading, cursor: Option<&ReadingCursor>) -> ValidationResult {
    let mut violations = Vec::new();

    if r.device_id.is_empty() {
        violations.push(InvariantViolation::new("device_id", "empty".into()));
    }

    match (r.metric, &r.value) {
        (Metric::PositionFt, MetricValue::Point { .. }) => {}
        (Metric::PositionFt, MetricValue::Scalar(_)) => violations.push(InvariantViolation::new(
            "value",
            "position_ft requires an (x, y) pair".into(),
        )),
        (_, MetricValue::Point { .. }) => violations.push(InvariantViolation::new(
            "value",
            format!("{} requires a scalar value", r.metric),
        )),
        (_, MetricValue::Scalar(_)) => {}
    }

    if !r.value.is_finite() {
        violations.push(InvariantViolation::new("value", "non-finite value".into()));
    } else if let MetricValue::Scalar(v) = r.value {
        let range = match r.metric {
            Metric::Spo2Pct => Some((0.0, 100.0, "spo2 out of [0,100]")),
            Metric::DoorAngleDeg => Some((0.0, 180.0, "door angle out of [0,180]")),
            Metric::BodyTempF => Some((80.0, 115.0, "body temp out of [80,115]")),
            _ => None,
        };
        if let Some((lo, hi, msg)) = range {
            if !(lo..=hi).contains(&v) {
                violations.push(InvariantViolation::new("value", msg.into()));
            }
        }
        if r.metric == Metric::PresenceFlag && v != 0.0 && v != 1.0 {
            violations.push(InvariantViolation::new(
                "value",
                "presence flag must be 0 or 1".into(),
            ));
        }
    }

    if let Some(c) = cursor {
        if r.seq <= c.seq {
            violations.push(InvariantViolation::new(
                "seq",
                format!("non-increasing seq {} after {}", r.seq, c.seq),
            ));
        }
        if r.ts < c.ts {
            violations.push(InvariantViolation::new(
                "ts",
                format!("ts {} earlier than {}", r.ts, c.ts),
            ));
        }
    }

    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}
