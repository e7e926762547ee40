//! Log post-processing: the summary report and the replay timeline.
//! Both are pure functions of the event log — they never mutate it.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::scenario::engine::{summarize, LogRecord, LOG_KINDS};

#[derive(Debug, Error)]
pub enum LogError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed log at line {line}: {message}")]
    Malformed { line: usize, message: String },
}

/// Parse an `events.jsonl` file. Any line that is not a log record fails
/// with its line number.
pub fn load_log(path: impl AsRef<Path>) -> Result<Vec<LogRecord>, LogError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| LogError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_log(&text)
}

pub fn parse_log(text: &str) -> Result<Vec<LogRecord>, LogError> {
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: LogRecord = serde_json::from_str(line).map_err(|e| LogError::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

/// Hex SHA-256 of the log bytes, prefixed with the algorithm name.
pub fn log_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    format!("sha256:{:x}", hasher.finalize())
}

/// Aggregate a log into the summary report. Rule ids come from the
/// scenario-start record so rules that never fired still appear with a
/// zero count.
pub fn build_report(records: &[LogRecord], digest: &str) -> Value {
    let mut alerts: BTreeMap<String, u64> = BTreeMap::new();
    let mut notices: BTreeMap<String, u64> = BTreeMap::new();
    let mut readings: BTreeMap<String, u64> = BTreeMap::new();
    let mut links: BTreeMap<String, BTreeMap<&'static str, u64>> = BTreeMap::new();
    let mut shadow_updates = 0u64;
    let mut shadow_deltas = 0u64;
    let mut distancing = 0u64;
    let mut plans = 0u64;
    let mut recovered_readings = 0u64;
    let mut fl_trace: Vec<Value> = Vec::new();
    let mut scenario: Value = Value::Null;
    let mut conservation: Value = Value::Null;
    let mut queues: Value = Value::Null;

    for record in records {
        match record.kind.as_str() {
            "scenario_start" => {
                scenario = json!({
                    "seed": record.payload["seed"],
                    "duration_ms": record.payload["duration_ms"],
                });
                if let Some(gateways) = record.payload["gateways"].as_array() {
                    for gw in gateways {
                        if let Some(rules) = gw["rules"].as_array() {
                            for rule in rules {
                                if let Some(id) = rule["rule_id"].as_str() {
                                    let bucket = if rule["severity"] == json!("info") {
                                        &mut notices
                                    } else {
                                        &mut alerts
                                    };
                                    bucket.entry(id.to_string()).or_insert(0);
                                }
                            }
                        }
                    }
                }
                if let Some(devices) = record.payload["devices"].as_array() {
                    for dev in devices {
                        if let Some(id) = dev["device_id"].as_str() {
                            readings.entry(id.to_string()).or_insert(0);
                        }
                    }
                }
            }
            "scenario_stop" => {
                conservation = record.payload["conservation"].clone();
                queues = record.payload["queues"].clone();
            }
            "reading" => {
                if let Some(id) = record.payload["device_id"].as_str() {
                    *readings.entry(id.to_string()).or_insert(0) += 1;
                }
            }
            "alert" => {
                if let Some(id) = record.payload["rule_id"].as_str() {
                    *alerts.entry(id.to_string()).or_insert(0) += 1;
                }
            }
            "notice" => {
                if let Some(id) = record.payload["rule_id"].as_str() {
                    *notices.entry(id.to_string()).or_insert(0) += 1;
                }
            }
            "distancing" => distancing += 1,
            "plan" => plans += 1,
            "link" => {
                let state = record.payload["state"].as_str().unwrap_or("?");
                let per = links.entry(record.source.clone()).or_default();
                *per.entry(if state == "down" { "down" } else { "up" }).or_insert(0) += 1;
            }
            "cloud_ingest" => {
                if record.payload["entry"] == json!("reading") {
                    let produced = record.payload["ts"].as_u64().unwrap_or(record.ts);
                    if record.ts > produced {
                        recovered_readings += 1;
                    }
                }
            }
            "shadow" => shadow_updates += 1,
            "shadow_delta" => shadow_deltas += 1,
            "fl_round" => fl_trace.push(record.payload.clone()),
            _ => {}
        }
    }

    let readings_total: u64 = readings.values().sum();
    let alerts_total: u64 = alerts.values().sum();
    let scheduled = conservation["scheduled_readings"].as_u64().unwrap_or(0);
    let journaled = conservation["cloud_journal_readings"].as_u64().unwrap_or(0);

    json!({
        "scenario": scenario,
        "alerts": alerts,
        "alerts_total": alerts_total,
        "notices": notices,
        "readings": readings,
        "readings_total": readings_total,
        "distancing_alerts": distancing,
        "plans": plans,
        "links": links,
        "recovery": {
            "recovered_readings": recovered_readings,
            "lost_readings": scheduled.saturating_sub(journaled),
            "duplicates_dropped": conservation["duplicates_dropped"],
        },
        "shadow": {
            "updates": shadow_updates,
            "deltas": shadow_deltas,
        },
        "conservation": conservation,
        "queues": queues,
        "fl": if fl_trace.is_empty() {
            Value::Null
        } else {
            json!({
                "rounds": fl_trace.len(),
                "final": fl_trace.last(),
                "trace": fl_trace,
            })
        },
        "log_digest": digest,
    })
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("unknown kind {0:?}; valid kinds: scenario_start, scenario_stop, reading, position, alert, notice, distancing, link, cloud_ingest, shadow, shadow_delta, presence, plan, fl_round")]
    UnknownKind(String),
}

/// Render the log as a chronological timeline, optionally filtered by
/// kind and/or source.
pub fn render_replay(
    records: &[LogRecord],
    kind: Option<&str>,
    source: Option<&str>,
) -> Result<String, ReplayError> {
    if let Some(k) = kind {
        if !LOG_KINDS.contains(&k) {
            return Err(ReplayError::UnknownKind(k.to_string()));
        }
    }
    let mut out = String::new();
    for record in records {
        if kind.is_some_and(|k| record.kind != k) {
            continue;
        }
        if source.is_some_and(|s| record.source != s) {
            continue;
        }
        let _ = writeln!(
            out,
            "{:>13}  {:<14} {:<14} {}",
            record.ts,
            record.kind,
            record.source,
            summarize(record)
        );
    }
    Ok(out)
}
