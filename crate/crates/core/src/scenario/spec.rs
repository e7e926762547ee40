//! Scenario file format and validation.
//!
//! A scenario is one JSON document describing everything a run needs:
//! gateways with their rules, devices with reading schedules, link
//! faults, an optional federated-training job, and optional facility
//! feeds (presence events and position snapshots). Validation reports
//! every problem it can find as a path-qualified diagnostic rather than
//! stopping at the first.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{AccessPolicy, Rule, DEFAULT_FORWARD_CAPACITY};
use crate::model::{DeviceDescriptor, DeviceKind, Metric};
use crate::spatial::{PresenceEvent, ZoneThresholds, DEFAULT_PAIR_COOLDOWN_MS, DEFAULT_THRESHOLD_FT};

/// Top-level scenario document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comment: Option<String>,
    pub seed: u64,
    pub duration_ms: u64,
    #[serde(default)]
    pub gateways: Vec<GatewaySpec>,
    #[serde(default)]
    pub devices: Vec<DeviceSpec>,
    #[serde(default)]
    pub link_faults: Vec<LinkFaultSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fl_job: Option<FlJobSpec>,
    #[serde(default)]
    pub facilities: Vec<FacilitySpec>,
}

/// A gateway and its local ruleset; its device fleet is derived from the
/// devices that name it as home.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewaySpec {
    pub gateway_id: String,
    pub token: String,
    #[serde(default)]
    pub rules: Vec<Rule>,
    #[serde(default)]
    pub policy: AccessPolicy,
    #[serde(default = "default_capacity")]
    pub queue_capacity: usize,
}

fn default_capacity() -> usize {
    DEFAULT_FORWARD_CAPACITY
}

/// A device plus the schedules that generate its readings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSpec {
    pub device_id: String,
    pub kind: DeviceKind,
    pub owner: String,
    pub home_gateway: String,
    #[serde(default)]
    pub schedules: Vec<ScheduleSpec>,
}

impl DeviceSpec {
    pub fn descriptor(&self) -> DeviceDescriptor {
        DeviceDescriptor {
            device_id: self.device_id.clone(),
            kind: self.kind,
            owner: self.owner.clone(),
            home_gateway: self.home_gateway.clone(),
        }
    }
}

/// One reading stream: a metric sampled every `cadence_ms` starting at
/// `start_ms`, with values drawn from `source`. `count` bounds the
/// number of readings; when omitted, a series stops when its values run
/// out and every other source runs until the scenario ends. `round_dp`
/// rounds each value to that many decimal places.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub metric: Metric,
    #[serde(default)]
    pub start_ms: u64,
    pub cadence_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round_dp: Option<u8>,
    pub source: SourceSpec,
}

/// Where a schedule's values come from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceSpec {
    /// Fixed values consumed once, in order.
    Series { values: Vec<f64> },
    /// Fixed values repeated forever.
    Cycle { values: Vec<f64> },
    /// Linear interpolation between (ts, value) knots, clamped at the
    /// ends.
    Piecewise { points: Vec<(u64, f64)> },
    /// Independent uniform draws from [lo, hi].
    Uniform { lo: f64, hi: f64 },
}

/// One cloud-link outage for one gateway.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkFaultSpec {
    pub gateway_id: String,
    pub down_ts: u64,
    pub up_ts: u64,
}

/// Federated training job: hyper-parameters plus the worker fleet, run
/// one round per `round_interval_ms` starting at `start_ms`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlJobSpec {
    pub learning_rate: f64,
    pub local_epochs: u32,
    pub minibatch_size: usize,
    pub rounds: u32,
    #[serde(default = "default_staleness")]
    pub staleness_limit: u64,
    #[serde(default)]
    pub start_ms: u64,
    #[serde(default = "default_round_interval")]
    pub round_interval_ms: u64,
    pub workers: Vec<FlWorkerSpec>,
}

fn default_staleness() -> u64 {
    8
}

fn default_round_interval() -> u64 {
    60_000
}

/// One training worker and the size of its synthetic private dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlWorkerSpec {
    pub worker_id: String,
    pub samples: usize,
}

/// Facility feeds for the spatial monitor.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FacilitySpec {
    pub facility_id: String,
    #[serde(default)]
    pub thresholds: ZoneThresholds,
    #[serde(default = "default_plan_cadence")]
    pub plan_cadence_ms: u64,
    #[serde(default = "default_distance_threshold")]
    pub distance_threshold_ft: f64,
    #[serde(default = "default_pair_cooldown")]
    pub pair_cooldown_ms: u64,
    #[serde(default)]
    pub presence_events: Vec<PresenceEvent>,
    #[serde(default)]
    pub position_snapshots: Vec<PositionSnapshot>,
}

fn default_plan_cadence() -> u64 {
    600_000
}

fn default_distance_threshold() -> f64 {
    DEFAULT_THRESHOLD_FT
}

fn default_pair_cooldown() -> u64 {
    DEFAULT_PAIR_COOLDOWN_MS
}

/// All entity positions observed at one instant.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PositionSnapshot {
    pub ts: u64,
    pub positions: Vec<SnapshotEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotEntry {
    pub entity_id: String,
    pub x: f64,
    pub y: f64,
}

/// One validation finding, anchored to the JSON path that caused it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub path: String,
    pub message: String,
}

impl Diagnostic {
    fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Diagnostic {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
}

/// Read and parse a scenario file; syntax and shape errors carry their
/// location.
pub fn load(path: impl AsRef<Path>) -> Result<ScenarioSpec, LoadError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| LoadError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse(&text)
}

pub fn parse(text: &str) -> Result<ScenarioSpec, LoadError> {
    serde_json::from_str(text).map_err(|e| LoadError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

impl ScenarioSpec {
    /// Every referential and range check, reported together.
    pub fn validate(&self) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        let duration = self.duration_ms;

        let mut gateway_ids = BTreeSet::new();
        for (i, gw) in self.gateways.iter().enumerate() {
            let path = format!("gateways[{i}]");
            if gw.gateway_id.is_empty() {
                out.push(Diagnostic::new(&path, "gateway_id must not be empty"));
            }
            if !gateway_ids.insert(gw.gateway_id.as_str()) {
                out.push(Diagnostic::new(
                    &path,
                    format!("duplicate gateway_id {}", gw.gateway_id),
                ));
            }
            if gw.token.is_empty() {
                out.push(Diagnostic::new(format!("{path}.token"), "must not be empty"));
            }
            if gw.queue_capacity == 0 {
                out.push(Diagnostic::new(
                    format!("{path}.queue_capacity"),
                    "must be ≥ 1",
                ));
            }
            let mut rule_ids = BTreeSet::new();
            for (j, rule) in gw.rules.iter().enumerate() {
                let rule_path = format!("{path}.rules[{j}]");
                if !rule_ids.insert(rule.rule_id.as_str()) {
                    out.push(Diagnostic::new(
                        &rule_path,
                        format!("duplicate rule_id {}", rule.rule_id),
                    ));
                }
                if let Err(e) = rule.validate() {
                    out.push(Diagnostic::new(&rule_path, e.to_string()));
                }
            }
        }

        let mut device_ids = BTreeSet::new();
        for (i, dev) in self.devices.iter().enumerate() {
            let path = format!("devices[{i}]");
            if dev.device_id.is_empty() {
                out.push(Diagnostic::new(&path, "device_id must not be empty"));
            }
            if !device_ids.insert(dev.device_id.as_str()) {
                out.push(Diagnostic::new(
                    &path,
                    format!("duplicate device_id {}", dev.device_id),
                ));
            }
            if !gateway_ids.contains(dev.home_gateway.as_str()) {
                out.push(Diagnostic::new(
                    format!("{path}.home_gateway"),
                    format!(
                        "device {} references missing gateway {}",
                        dev.device_id, dev.home_gateway
                    ),
                ));
            }
            for (j, sched) in dev.schedules.iter().enumerate() {
                validate_schedule(sched, duration, &format!("{path}.schedules[{j}]"), &mut out);
            }
        }

        for (i, fault) in self.link_faults.iter().enumerate() {
            let path = format!("link_faults[{i}]");
            if !gateway_ids.contains(fault.gateway_id.as_str()) {
                out.push(Diagnostic::new(
                    format!("{path}.gateway_id"),
                    format!("unknown gateway {}", fault.gateway_id),
                ));
            }
            if fault.down_ts >= fault.up_ts {
                out.push(Diagnostic::new(
                    &path,
                    format!(
                        "down_ts {} must precede up_ts {}",
                        fault.down_ts, fault.up_ts
                    ),
                ));
            }
            if fault.up_ts > duration {
                out.push(Diagnostic::new(
                    format!("{path}.up_ts"),
                    format!("{} is beyond duration_ms {duration}", fault.up_ts),
                ));
            }
            for (j, other) in self.link_faults.iter().enumerate().take(i) {
                if other.gateway_id == fault.gateway_id
                    && fault.down_ts < other.up_ts
                    && other.down_ts < fault.up_ts
                {
                    out.push(Diagnostic::new(
                        &path,
                        format!("overlaps link_faults[{j}] on gateway {}", fault.gateway_id),
                    ));
                }
            }
        }

        if let Some(fl) = &self.fl_job {
            let path = "fl_job";
            if !(fl.learning_rate > 0.0) || !fl.learning_rate.is_finite() {
                out.push(Diagnostic::new(
                    format!("{path}.learning_rate"),
                    "must be a positive finite number",
                ));
            }
            if fl.local_epochs == 0 {
                out.push(Diagnostic::new(format!("{path}.local_epochs"), "must be ≥ 1"));
            }
            if fl.round_interval_ms == 0 {
                out.push(Diagnostic::new(
                    format!("{path}.round_interval_ms"),
                    "must be ≥ 1",
                ));
            }
            if fl.workers.is_empty() {
                out.push(Diagnostic::new(
                    format!("{path}.workers"),
                    "need at least one worker",
                ));
            }
            let mut worker_ids = BTreeSet::new();
            for (i, w) in fl.workers.iter().enumerate() {
                let wpath = format!("{path}.workers[{i}]");
                if !worker_ids.insert(w.worker_id.as_str()) {
                    out.push(Diagnostic::new(
                        &wpath,
                        format!("duplicate worker_id {}", w.worker_id),
                    ));
                }
                if w.samples == 0 {
                    out.push(Diagnostic::new(format!("{wpath}.samples"), "must be ≥ 1"));
                } else if fl.minibatch_size == 0 || fl.minibatch_size > w.samples {
                    out.push(Diagnostic::new(
                        format!("{path}.minibatch_size"),
                        format!(
                            "must be in 1..={} (worker {} has {} samples)",
                            w.samples, w.worker_id, w.samples
                        ),
                    ));
                }
            }
            if fl.rounds > 0 {
                let last = fl.start_ms as u128
                    + (u128::from(fl.rounds) - 1) * fl.round_interval_ms as u128;
                if last >= u128::from(duration) {
                    out.push(Diagnostic::new(
                        format!("{path}.rounds"),
                        format!("last round at {last} is beyond duration_ms {duration}"),
                    ));
                }
            }
        }

        let mut facility_ids = BTreeSet::new();
        for (i, fac) in self.facilities.iter().enumerate() {
            let path = format!("facilities[{i}]");
            if !facility_ids.insert(fac.facility_id.as_str()) {
                out.push(Diagnostic::new(
                    &path,
                    format!("duplicate facility_id {}", fac.facility_id),
                ));
            }
            if let Err(e) = fac.thresholds.validate() {
                out.push(Diagnostic::new(format!("{path}.thresholds"), e.to_string()));
            }
            if fac.plan_cadence_ms == 0 {
                out.push(Diagnostic::new(
                    format!("{path}.plan_cadence_ms"),
                    "must be ≥ 1",
                ));
            }
            if !(fac.distance_threshold_ft > 0.0) || !fac.distance_threshold_ft.is_finite() {
                out.push(Diagnostic::new(
                    format!("{path}.distance_threshold_ft"),
                    "must be a positive finite number",
                ));
            }
            for (j, event) in fac.presence_events.iter().enumerate() {
                if event.ts >= duration {
                    out.push(Diagnostic::new(
                        format!("{path}.presence_events[{j}].ts"),
                        format!("{} is beyond duration_ms {duration}", event.ts),
                    ));
                }
            }
            for (j, snap) in fac.position_snapshots.iter().enumerate() {
                let spath = format!("{path}.position_snapshots[{j}]");
                if snap.ts >= duration {
                    out.push(Diagnostic::new(
                        format!("{spath}.ts"),
                        format!("{} is beyond duration_ms {duration}", snap.ts),
                    ));
                }
                let mut entities = BTreeSet::new();
                for (k, entry) in snap.positions.iter().enumerate() {
                    if !entities.insert(entry.entity_id.as_str()) {
                        out.push(Diagnostic::new(
                            format!("{spath}.positions[{k}]"),
                            format!("duplicate entity_id {}", entry.entity_id),
                        ));
                    }
                    if !entry.x.is_finite() || !entry.y.is_finite() {
                        out.push(Diagnostic::new(
                            format!("{spath}.positions[{k}]"),
                            "coordinates must be finite",
                        ));
                    }
                }
            }
        }

        out
    }
}

fn validate_schedule(sched: &ScheduleSpec, duration: u64, path: &str, out: &mut Vec<Diagnostic>) {
    if sched.cadence_ms == 0 {
        out.push(Diagnostic::new(format!("{path}.cadence_ms"), "must be ≥ 1"));
        return;
    }
    if sched.metric == Metric::PositionFt {
        out.push(Diagnostic::new(
            format!("{path}.metric"),
            "position readings come from facility position feeds, not schedules",
        ));
    }
    if let Some(dp) = sched.round_dp {
        if dp > 9 {
            out.push(Diagnostic::new(format!("{path}.round_dp"), "must be ≤ 9"));
        }
    }

    match &sched.source {
        SourceSpec::Series { values } | SourceSpec::Cycle { values } => {
            if values.is_empty() {
                out.push(Diagnostic::new(
                    format!("{path}.source.values"),
                    "must not be empty",
                ));
            }
            if values.iter().any(|v| !v.is_finite()) {
                out.push(Diagnostic::new(
                    format!("{path}.source.values"),
                    "values must be finite",
                ));
            }
            if let (SourceSpec::Series { values }, Some(count)) = (&sched.source, sched.count) {
                if count > values.len() as u64 {
                    out.push(Diagnostic::new(
                        format!("{path}.count"),
                        format!("asks for {count} readings but the series has {}", values.len()),
                    ));
                }
            }
        }
        SourceSpec::Piecewise { points } => {
            if points.is_empty() {
                out.push(Diagnostic::new(
                    format!("{path}.source.points"),
                    "must not be empty",
                ));
            }
            for pair in points.windows(2) {
                if pair[1].0 <= pair[0].0 {
                    out.push(Diagnostic::new(
                        format!("{path}.source.points"),
                        format!("knot timestamps must increase ({} then {})", pair[0].0, pair[1].0),
                    ));
                    break;
                }
            }
            if points.iter().any(|(_, v)| !v.is_finite()) {
                out.push(Diagnostic::new(
                    format!("{path}.source.points"),
                    "values must be finite",
                ));
            }
        }
        SourceSpec::Uniform { lo, hi } => {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                out.push(Diagnostic::new(
                    format!("{path}.source"),
                    format!("uniform needs finite lo < hi, got [{lo}, {hi}]"),
                ));
            }
        }
    }

    if let Some(n) = resolved_count(sched, duration) {
        if n > 0 {
            let last = sched.start_ms as u128 + (n as u128 - 1) * sched.cadence_ms as u128;
            if last >= u128::from(duration) {
                out.push(Diagnostic::new(
                    path,
                    format!("last reading at {last} is beyond duration_ms {duration}"),
                ));
            }
        }
    }
}

/// How many readings this schedule produces. Explicit `count` wins;
/// otherwise a series stops when its values run out and every other
/// source fills the remaining scenario time (readings occur strictly
/// before `duration_ms`).
pub fn resolved_count(sched: &ScheduleSpec, duration_ms: u64) -> Option<u64> {
    if let Some(count) = sched.count {
        return Some(count);
    }
    match &sched.source {
        SourceSpec::Series { values } => Some(values.len() as u64),
        _ => {
            if sched.cadence_ms == 0 || sched.start_ms >= duration_ms {
                Some(0)
            } else {
                Some(1 + (duration_ms - 1 - sched.start_ms) / sched.cadence_ms)
            }
        }
    }
}

/// Round half away from zero to `dp` decimal places.
fn round_dp(value: f64, dp: u8) -> f64 {
    let scale = 10f64.powi(i32::from(dp));
    (value * scale).round() / scale
}

/// Materialize a schedule into (ts, value) pairs. The generator is only
/// consumed by `uniform` sources, one draw per reading.
pub fn expand_schedule(
    sched: &ScheduleSpec,
    duration_ms: u64,
    rng: &mut impl Rng,
) -> Vec<(u64, f64)> {
    let count = resolved_count(sched, duration_ms).unwrap_or(0);
    let mut out = Vec::with_capacity(count as usize);
    for i in 0..count {
        let ts = sched.start_ms + i * sched.cadence_ms;
        let raw = match &sched.source {
            SourceSpec::Series { values } => values[i as usize],
            SourceSpec::Cycle { values } => values[(i as usize) % values.len()],
            SourceSpec::Piecewise { points } => interpolate(points, ts),
            SourceSpec::Uniform { lo, hi } => rng.gen_range(*lo..=*hi),
        };
        let value = match sched.round_dp {
            Some(dp) => round_dp(raw, dp),
            None => raw,
        };
        out.push((ts, value));
    }
    out
}

fn interpolate(points: &[(u64, f64)], ts: u64) -> f64 {
    let first = points[0];
    let last = points[points.len() - 1];
    if ts <= first.0 {
        return first.1;
    }
    if ts >= last.0 {
        return last.1;
    }
    let after = points.iter().position(|(t, _)| *t > ts).expect("ts < last knot");
    let (t0, v0) = points[after - 1];
    let (t1, v1) = points[after];
    let fraction = (ts - t0) as f64 / (t1 - t0) as f64;
    v0 + (v1 - v0) * fraction
}
