//! Versioned device shadows: per-device reported/desired state documents
//! that tolerate offline divergence and reconcile on reconnect.
//!
//! Every accepted mutation (reported merge or desired merge) bumps the
//! shadow version by exactly one, so the mutation history per device is
//! totally ordered and gap-free. Reconciliation computes the
//! desired-minus-reported delta, flips the device online, and emits the
//! delta on `shadow/<device_id>/delta`; it does not bump the version.
//! Mutations are appended to a JSON-lines journal and the registry can be
//! rebuilt by replaying it.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::clock::TimeSource;
use crate::model::{DeviceDescriptor, Principal, Role};

/// A mutation request: keys to merge into a state document.
pub type Patch = BTreeMap<String, Value>;

/// Keys whose desired value differs from reported, with the desired values.
pub type Delta = BTreeMap<String, Value>;

/// Callback used to emit shadow events onto the message bus:
/// `(topic, payload)`.
pub type TopicSink = Arc<dyn Fn(&str, &[u8]) + Send + Sync>;

/// One entry in a state document: the last value and when it was set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateEntry {
    pub value: Value,
    pub ts: u64,
}

/// String-keyed state document. Reported documents typically hold metric
/// names; desired documents hold device configuration keys.
pub type StateDoc = BTreeMap<String, StateEntry>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Connectivity {
    Online,
    Offline,
}

/// Snapshot of one device's shadow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceShadow {
    pub device_id: String,
    pub reported: StateDoc,
    pub desired: StateDoc,
    /// Starts at 0; +1 per accepted mutation.
    pub version: u64,
    pub connectivity: Connectivity,
    pub last_sync_ts: u64,
}

/// Version precondition for reported updates. Devices that cannot track
/// versions use [`ExpectedVersion::Any`]; desired updates always require
/// the exact current version (see [`ShadowRegistry::set_desired`]).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpectedVersion {
    Any,
    Exact(u64),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ShadowError {
    #[error("unknown device {0}")]
    UnknownDevice(String),
    #[error("version conflict: expected {expected}, shadow is at {actual}")]
    VersionConflict { expected: u64, actual: u64 },
    #[error("principal {principal} may not write desired state of {device_id}")]
    PermissionDenied {
        principal: String,
        device_id: String,
    },
    #[error("invalid state key {0:?}")]
    InvalidKey(String),
    #[error("journal i/o: {0}")]
    Journal(String),
    #[error("journal corrupt at line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
}

/// One journal line. `version` is the shadow version after the mutation
/// (for `reconcile`, the unchanged current version).
#[derive(Debug, Clone, Serialize, Deserialize)]
struct JournalRecord {
    ts: u64,
    device_id: String,
    op: JournalOp,
    patch: Patch,
    version: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum JournalOp {
    Reported,
    Desired,
    Reconcile,
}

struct ShadowRecord {
    shadow: DeviceShadow,
    owner: String,
}

struct Inner {
    shadows: BTreeMap<String, ShadowRecord>,
    journal: Option<File>,
}

/// Thread-safe registry of device shadows. Per-device mutations are
/// serialized; concurrent callers on different devices do not block each
/// other's correctness (they do share one lock — contention, not order,
/// is the cost at simulation scale).
pub struct ShadowRegistry {
    inner: Mutex<Inner>,
    time: Arc<dyn TimeSource>,
    sink: Mutex<Option<TopicSink>>,
}

impl ShadowRegistry {
    pub fn new(time: Arc<dyn TimeSource>) -> Self {
        ShadowRegistry {
            inner: Mutex::new(Inner {
                shadows: BTreeMap::new(),
                journal: None,
            }),
            time,
            sink: Mutex::new(None),
        }
    }

    /// Rebuild a registry by replaying a journal file, then keep appending
    /// to it. A missing file yields an empty registry. Connectivity is not
    /// persisted: every replayed device starts offline and must reconcile.
    pub fn recover(path: &Path, time: Arc<dyn TimeSource>) -> Result<Self, ShadowError> {
        let registry = ShadowRegistry::new(time);
        if path.exists() {
            let file = File::open(path).map_err(|e| ShadowError::Journal(e.to_string()))?;
            let mut inner = registry.lock();
            for (idx, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| ShadowError::Journal(e.to_string()))?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: JournalRecord =
                    serde_json::from_str(&line).map_err(|e| ShadowError::Corrupt {
                        line: idx + 1,
                        reason: e.to_string(),
                    })?;
                replay_record(&mut inner, &record).map_err(|e| ShadowError::Corrupt {
                    line: idx + 1,
                    reason: e.to_string(),
                })?;
            }
            for record in inner.shadows.values_mut() {
                record.shadow.connectivity = Connectivity::Offline;
            }
        }
        registry.attach_journal(path)?;
        Ok(registry)
    }

    /// Append future mutations to `path` (created if absent).
    pub fn attach_journal(&self, path: &Path) -> Result<(), ShadowError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| ShadowError::Journal(e.to_string()))?;
        self.lock().journal = Some(file);
        Ok(())
    }

    /// Route shadow events (`shadow/<id>/updated`, `shadow/<id>/delta`)
    /// through `sink`, typically a broker session.
    pub fn set_sink(&self, sink: TopicSink) {
        *self.sink.lock().expect("sink lock") = Some(sink);
    }

    /// Create the shadow for a device. Idempotent: re-registering updates
    /// the owner (used to restore ownership after journal recovery, which
    /// does not persist it) but leaves documents and version untouched.
    pub fn register(&self, descriptor: &DeviceDescriptor) {
        let now = self.time.now_ms();
        let mut inner = self.lock();
        match inner.shadows.get_mut(&descriptor.device_id) {
            Some(record) => record.owner = descriptor.owner.clone(),
            None => {
                inner.shadows.insert(
                    descriptor.device_id.clone(),
                    ShadowRecord {
                        shadow: DeviceShadow {
                            device_id: descriptor.device_id.clone(),
                            reported: StateDoc::new(),
                            desired: StateDoc::new(),
                            version: 0,
                            connectivity: Connectivity::Online,
                            last_sync_ts: now,
                        },
                        owner: descriptor.owner.clone(),
                    },
                );
            }
        }
    }

    pub fn device_ids(&self) -> Vec<String> {
        self.lock().shadows.keys().cloned().collect()
    }

    pub fn get(&self, device_id: &str) -> Result<DeviceShadow, ShadowError> {
        self.lock()
            .shadows
            .get(device_id)
            .map(|r| r.shadow.clone())
            .ok_or_else(|| ShadowError::UnknownDevice(device_id.to_string()))
    }

    /// Merge a device-originated patch into the reported document.
    /// An empty patch is a valid mutation: documents stay unchanged but the
    /// version still advances.
    pub fn update_reported(
        &self,
        device_id: &str,
        patch: &Patch,
        expected: ExpectedVersion,
    ) -> Result<DeviceShadow, ShadowError> {
        validate_patch(patch)?;
        let now = self.time.now_ms();
        let mut inner = self.lock();
        let snapshot = {
            let record = get_record(&mut inner, device_id)?;
            if let ExpectedVersion::Exact(expected) = expected {
                if expected != record.shadow.version {
                    return Err(ShadowError::VersionConflict {
                        expected,
                        actual: record.shadow.version,
                    });
                }
            }
            merge(&mut record.shadow.reported, patch, now);
            record.shadow.version += 1;
            record.shadow.clone()
        };
        append_journal(
            &mut inner,
            &JournalRecord {
                ts: now,
                device_id: device_id.to_string(),
                op: JournalOp::Reported,
                patch: patch.clone(),
                version: snapshot.version,
            },
        )?;
        drop(inner);
        self.emit_updated(device_id, "reported", snapshot.version);
        Ok(snapshot)
    }

    /// Merge an operator-originated patch into the desired document.
    /// Requires write access (practitioner, operator, or the owning
    /// patient) and the exact current version, so concurrent operators
    /// cannot silently overwrite each other's intent. The patch is kept
    /// even while the device is offline and flows to it via
    /// [`ShadowRegistry::reconcile`] on reconnect.
    pub fn set_desired(
        &self,
        device_id: &str,
        patch: &Patch,
        principal: &Principal,
        expected_version: u64,
    ) -> Result<DeviceShadow, ShadowError> {
        validate_patch(patch)?;
        let now = self.time.now_ms();
        let mut inner = self.lock();
        let snapshot = {
            let record = get_record(&mut inner, device_id)?;
            let allowed = match principal.role {
                Role::Practitioner | Role::Operator => true,
                Role::Patient => principal.principal_id == record.owner,
                Role::Family | Role::LocalAuthority => false,
            };
            if !allowed {
                return Err(ShadowError::PermissionDenied {
                    principal: principal.principal_id.clone(),
                    device_id: device_id.to_string(),
                });
            }
            if expected_version != record.shadow.version {
                return Err(ShadowError::VersionConflict {
                    expected: expected_version,
                    actual: record.shadow.version,
                });
            }
            merge(&mut record.shadow.desired, patch, now);
            record.shadow.version += 1;
            record.shadow.clone()
        };
        append_journal(
            &mut inner,
            &JournalRecord {
                ts: now,
                device_id: device_id.to_string(),
                op: JournalOp::Desired,
                patch: patch.clone(),
                version: snapshot.version,
            },
        )?;
        drop(inner);
        self.emit_updated(device_id, "desired", snapshot.version);
        Ok(snapshot)
    }

    /// Mark a device unreachable. Desired patches accepted while offline
    /// wait in the shadow for the next reconcile.
    pub fn mark_offline(&self, device_id: &str) -> Result<(), ShadowError> {
        let mut inner = self.lock();
        let record = get_record(&mut inner, device_id)?;
        record.shadow.connectivity = Connectivity::Offline;
        Ok(())
    }

    /// Bring a device back online: returns the keys whose desired value
    /// differs from reported (with desired values), marks the shadow
    /// online, and emits a non-empty delta on `shadow/<device_id>/delta`.
    /// The version does not change — reconciliation reads state, it does
    /// not mutate documents.
    pub fn reconcile(&self, device_id: &str) -> Result<Delta, ShadowError> {
        let now = self.time.now_ms();
        let mut inner = self.lock();
        let (delta, version) = {
            let record = get_record(&mut inner, device_id)?;
            let delta = compute_delta(&record.shadow);
            record.shadow.connectivity = Connectivity::Online;
            record.shadow.last_sync_ts = now;
            (delta, record.shadow.version)
        };
        if !delta.is_empty() {
            append_journal(
                &mut inner,
                &JournalRecord {
                    ts: now,
                    device_id: device_id.to_string(),
                    op: JournalOp::Reconcile,
                    patch: delta.clone(),
                    version,
                },
            )?;
            drop(inner);
            if let Some(sink) = self.sink.lock().expect("sink lock").clone() {
                let topic = format!("shadow/{device_id}/delta");
                let payload = serde_json::to_vec(&delta).expect("delta serializes");
                sink(&topic, &payload);
            }
        }
        Ok(delta)
    }

    fn emit_updated(&self, device_id: &str, op: &str, version: u64) {
        if let Some(sink) = self.sink.lock().expect("sink lock").clone() {
            let topic = format!("shadow/{device_id}/updated");
            let payload = serde_json::json!({
                "device_id": device_id,
                "op": op,
                "version": version,
            });
            sink(&topic, &serde_json::to_vec(&payload).expect("payload serializes"));
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().expect("shadow registry lock poisoned")
    }
}

fn get_record<'a>(
    inner: &'a mut Inner,
    device_id: &str,
) -> Result<&'a mut ShadowRecord, ShadowError> {
    inner
        .shadows
        .get_mut(device_id)
        .ok_or_else(|| ShadowError::UnknownDevice(device_id.to_string()))
}

/// Shallow key-wise last-writer-wins merge.
fn merge(doc: &mut StateDoc, patch: &Patch, ts: u64) {
    for (key, value) in patch {
        doc.insert(
            key.clone(),
            StateEntry {
                value: value.clone(),
                ts,
            },
        );
    }
}

fn compute_delta(shadow: &DeviceShadow) -> Delta {
    let mut delta = Delta::new();
    for (key, want) in &shadow.desired {
        match shadow.reported.get(key) {
            Some(have) if have.value == want.value => {}
            _ => {
                delta.insert(key.clone(), want.value.clone());
            }
        }
    }
    delta
}

/// State-document keys: metric names (`spo2_pct`, `body_temp_F`) or
/// configuration identifiers (`sampling_period_s`). First char lowercase
/// ascii letter, rest ascii alphanumerics or underscore, at most 64 bytes.
pub fn valid_key(key: &str) -> bool {
    let mut chars = key.chars();
    let Some(first) = chars.next() else {
        return false;
    };
    key.len() <= 64
        && first.is_ascii_lowercase()
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn validate_patch(patch: &Patch) -> Result<(), ShadowError> {
    for key in patch.keys() {
        if !valid_key(key) {
            return Err(ShadowError::InvalidKey(key.clone()));
        }
    }
    Ok(())
}

fn append_journal(inner: &mut Inner, record: &JournalRecord) -> Result<(), ShadowError> {
    if let Some(file) = inner.journal.as_mut() {
        let mut line = serde_json::to_vec(record).expect("journal record serializes");
        line.push(b'\n');
        file.write_all(&line)
            .map_err(|e| ShadowError::Journal(e.to_string()))?;
    }
    Ok(())
}

/// Apply one journal record during recovery. Registration is not
/// journaled, so devices materialize on first mention (owner is restored
/// by re-registering from configuration afterwards). The recorded version
/// must match the replayed mutation exactly; a mismatch means the file
/// was truncated or reordered.
fn replay_record(inner: &mut Inner, record: &JournalRecord) -> Result<(), ShadowError> {
    let shadows = &mut inner.shadows;
    let entry = shadows
        .entry(record.device_id.clone())
        .or_insert_with(|| ShadowRecord {
            shadow: DeviceShadow {
                device_id: record.device_id.clone(),
                reported: StateDoc::new(),
                desired: StateDoc::new(),
                version: 0,
                connectivity: Connectivity::Offline,
                last_sync_ts: record.ts,
            },
            owner: String::new(),
        });
    match record.op {
        JournalOp::Reported => {
            merge(&mut entry.shadow.reported, &record.patch, record.ts);
            entry.shadow.version += 1;
        }
        JournalOp::Desired => {
            merge(&mut entry.shadow.desired, &record.patch, record.ts);
            entry.shadow.version += 1;
        }
        JournalOp::Reconcile => {
            entry.shadow.last_sync_ts = record.ts;
        }
    }
    if entry.shadow.version != record.version {
        return Err(ShadowError::VersionConflict {
            expected: record.version,
            actual: entry.shadow.version,
        });
    }
    Ok(())
}
