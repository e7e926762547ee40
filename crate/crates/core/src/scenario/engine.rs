//! Scenario execution: wires devices, gateways, broker, shadow registry,
//! trainer, and facility monitors together and drives them on the
//! simulated clock.
//!
//! Every planned occurrence (reading, link transition, presence event,
//! position snapshot, plan tick, training round) is expanded up front
//! into an intention list ordered by (ts, registration order); the run
//! then replays that list through the live components. All inter-component
//! traffic flows over the in-process broker, and the event log is exactly
//! what a wildcard subscriber observes, so a run is a pure function of
//! (spec, seed). Concurrent mode parallelizes only the schedule
//! precomputation — the replay itself is serial, which is what makes the
//! log byte-identical across modes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::sync::{Arc, Mutex};

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::bus::{Broker, BusError, Session};
use crate::clock::SimClock;
use crate::fedlearn::{
    accuracy, local_train, mean_loss, two_gaussian_dataset, LocalDataset, ParameterServer,
    TrainerConfig,
};
use crate::gateway::{
    AlertEvent, CloudLink, Gateway, GatewayConfig, LinkFault, QueueEntry,
};
use crate::model::{Metric, MetricValue, TelemetryReading};
use crate::scenario::spec::{expand_schedule, Diagnostic, ScenarioSpec};
use crate::shadow::{ExpectedVersion, Patch, ShadowRegistry};
use crate::spatial::{
    distancing_alerts, plan_sanitize, DistancePolicy, EntityPosition, OccupancyTracker,
    PairHistory, PresenceEvent, ZoneOccupancy,
};

/// Generator stream layout, all derived from the scenario seed: training
/// workers use streams 0.. (mirroring the round-robin trainer), worker
/// dataset synthesis uses 1000.., and reading schedules use 2000.. by
/// global schedule index. Keeping the bands disjoint means no two
/// consumers ever share a stream.
const STREAM_DATAGEN_BASE: u64 = 1000;
const STREAM_SCHEDULE_BASE: u64 = 2000;

/// One line of `events.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub ts: u64,
    pub kind: String,
    pub source: String,
    pub payload: Value,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Precompute reading schedules on worker threads. Output is required
    /// to be byte-identical to the serial mode.
    pub concurrent: bool,
    /// Demo pacing: sleep simulated_delta / speed milliseconds of wall
    /// time between events. `None` runs as fast as possible.
    pub speed: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub events: Vec<LogRecord>,
    /// Final model document when the scenario has a training job.
    pub model: Option<Value>,
    /// Update journal lines when the scenario has a training job.
    pub model_journal: Option<String>,
}

impl RunOutput {
    /// The log as newline-terminated JSON lines — the exact bytes of
    /// `events.jsonl`.
    pub fn events_jsonl(&self) -> String {
        let mut out = String::new();
        for record in &self.events {
            let line = serde_json::to_string(record).expect("log record serializes");
            out.push_str(&line);
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("scenario is invalid")]
    Validation(Vec<Diagnostic>),
    #[error("engine fault: {0}")]
    Internal(String),
}

impl From<BusError> for EngineError {
    fn from(e: BusError) -> Self {
        EngineError::Internal(format!("bus: {e}"))
    }
}

/// What happens at one instant of the plan.
enum Action {
    Start,
    Reading { gateway_idx: usize, reading: TelemetryReading },
    LinkDown { gateway_idx: usize },
    LinkUp { gateway_idx: usize },
    Presence { facility_idx: usize, event: PresenceEvent },
    Positions { facility_idx: usize, snapshot_idx: usize },
    PlanTick { facility_idx: usize },
    FlRound { round: u32 },
    Stop,
}

struct Intention {
    ts: u64,
    order: u64,
    action: Action,
}

/// Cloud uplink for one gateway: forwards queue entries onto the bus and
/// records which devices need a shadow reconcile after reconnect.
struct BusLink {
    session: Session,
    topic: String,
    reconcile: Arc<Mutex<Vec<String>>>,
}

impl CloudLink for BusLink {
    fn deliver(&mut self, entry: &QueueEntry) -> Result<(), LinkFault> {
        let payload = serde_json::to_vec(entry).map_err(|_| LinkFault)?;
        self.session
            .publish(&self.topic, &payload)
            .map(|_| ())
            .map_err(|_| LinkFault)
    }

    fn request_reconcile(&mut self, device_id: &str) {
        self.reconcile
            .lock()
            .expect("reconcile queue lock")
            .push(device_id.to_string());
    }
}

struct FacilityState {
    tracker: OccupancyTracker,
    history: PairHistory,
    policy: DistancePolicy,
    session: Session,
}

struct FlState {
    server: ParameterServer,
    workers: Vec<(String, LocalDataset)>,
    rngs: Vec<ChaCha8Rng>,
    union: LocalDataset,
    cfg: TrainerConfig,
}

/// Execute a scenario. Fails fast with the full diagnostic list if the
/// spec does not validate.
pub fn run(spec: &ScenarioSpec, opts: &RunOptions) -> Result<RunOutput, EngineError> {
    let diagnostics = spec.validate();
    if !diagnostics.is_empty() {
        return Err(EngineError::Validation(diagnostics));
    }

    let readings = precompute_readings(spec, opts.concurrent);
    let total_scheduled: u64 = readings.iter().map(|r| r.len() as u64).sum();
    let intentions = build_intentions(spec, readings);

    // --- clock and bus -------------------------------------------------
    let mut clock = SimClock::new();
    let time: Arc<dyn crate::clock::TimeSource> = Arc::new(clock.handle());
    let broker = Arc::new(Broker::new(time.clone()));

    let internal_token = "sim-internal";
    for name in ["scenario", "collector", "cloud", "shadowd", "fl-server"] {
        broker.register(name, internal_token);
    }
    for gw in &spec.gateways {
        broker.register(&gw.gateway_id, &gw.token);
    }
    for dev in &spec.devices {
        broker.register(&dev.device_id, internal_token);
    }
    for fac in &spec.facilities {
        broker.register(&fac.facility_id, internal_token);
    }

    let orchestrator = broker.connect("scenario", internal_token)?;
    let collector = broker.connect("collector", internal_token)?;
    collector.subscribe("#")?;
    let cloud_session = broker.connect("cloud", internal_token)?;
    cloud_session.subscribe("cloud/ingest/+")?;

    let mut device_sessions: BTreeMap<String, Session> = BTreeMap::new();
    for dev in &spec.devices {
        device_sessions.insert(dev.device_id.clone(), broker.connect(&dev.device_id, internal_token)?);
    }

    // --- shadows --------------------------------------------------------
    let registry = ShadowRegistry::new(time.clone());
    for dev in &spec.devices {
        registry.register(&dev.descriptor());
    }
    let shadow_session = broker.connect("shadowd", internal_token)?;
    {
        let session = shadow_session.clone();
        registry.set_sink(Arc::new(move |topic, payload| {
            let _ = session.publish(topic, payload);
        }));
    }

    // --- gateways --------------------------------------------------------
    let mut gateways: Vec<Gateway> = Vec::new();
    let mut reconcile_queues: Vec<Arc<Mutex<Vec<String>>>> = Vec::new();
    let mut gateway_sessions: Vec<Session> = Vec::new();
    for gw in &spec.gateways {
        let session = broker.connect(&gw.gateway_id, &gw.token)?;
        let reconcile = Arc::new(Mutex::new(Vec::new()));
        let link = BusLink {
            session: session.clone(),
            topic: format!("cloud/ingest/{}", gw.gateway_id),
            reconcile: Arc::clone(&reconcile),
        };
        let config = GatewayConfig {
            gateway_id: gw.gateway_id.clone(),
            token: gw.token.clone(),
            devices: spec
                .devices
                .iter()
                .filter(|d| d.home_gateway == gw.gateway_id)
                .map(|d| d.descriptor())
                .collect(),
            rules: gw.rules.clone(),
            policy: gw.policy.clone(),
            queue_capacity: gw.queue_capacity,
        };
        let gateway = Gateway::new(config, Box::new(link))
            .map_err(|e| EngineError::Internal(format!("gateway {}: {e}", gw.gateway_id)))?;
        gateways.push(gateway);
        reconcile_queues.push(reconcile);
        gateway_sessions.push(session);
    }

    // --- facilities -------------------------------------------------------
    let mut facilities: Vec<FacilityState> = Vec::new();
    for fac in &spec.facilities {
        facilities.push(FacilityState {
            tracker: OccupancyTracker::new(),
            history: PairHistory::new(),
            policy: DistancePolicy {
                threshold_ft: fac.distance_threshold_ft,
                cooldown_ms: fac.pair_cooldown_ms,
            },
            session: broker.connect(&fac.facility_id, internal_token)?,
        });
    }

    // --- training job ------------------------------------------------------
    let mut fl: Option<FlState> = match &spec.fl_job {
        Some(job) => {
            let workers: Vec<(String, LocalDataset)> = job
                .workers
                .iter()
                .enumerate()
                .map(|(i, w)| {
                    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
                    rng.set_stream(STREAM_DATAGEN_BASE + i as u64);
                    (w.worker_id.clone(), two_gaussian_dataset(w.samples, 1.0, 0.5, &mut rng))
                })
                .collect();
            let union = LocalDataset::new(
                workers
                    .iter()
                    .flat_map(|(_, d)| d.samples().iter().cloned())
                    .collect(),
            )
            .map_err(|e| EngineError::Internal(format!("fl union dataset: {e}")))?;
            let rngs = (0..workers.len())
                .map(|i| {
                    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
                    rng.set_stream(i as u64);
                    rng
                })
                .collect();
            Some(FlState {
                server: ParameterServer::new(2, job.staleness_limit),
                workers,
                rngs,
                union,
                cfg: TrainerConfig {
                    learning_rate: job.learning_rate,
                    local_epochs: job.local_epochs,
                    minibatch_size: job.minibatch_size,
                },
            })
        }
        None => None,
    };

    let fl_session = broker.connect("fl-server", internal_token)?;

    // --- cloud-side state ---------------------------------------------------
    let mut journal_seen: BTreeSet<(String, u64)> = BTreeSet::new();
    let mut alert_seen: BTreeSet<String> = BTreeSet::new();
    let mut journal_readings: u64 = 0;
    let mut duplicates_dropped: u64 = 0;

    let mut events: Vec<LogRecord> = Vec::new();

    // --- replay -----------------------------------------------------------
    for intention in intentions {
        let now = clock.now_ms();
        let delta = intention.ts - now;
        if delta > 0 {
            clock
                .advance(delta)
                .map_err(|e| EngineError::Internal(format!("clock: {e}")))?;
            if let Some(speed) = opts.speed {
                if speed > 0.0 {
                    let wall = (delta as f64 / speed).round() as u64;
                    std::thread::sleep(std::time::Duration::from_millis(wall));
                }
            }
        }

        match intention.action {
            Action::Start => {
                let payload = start_payload(spec);
                orchestrator.publish("scenario/start", &to_bytes(&payload))?;
            }
            Action::Reading { gateway_idx, reading } => {
                let topic = format!(
                    "telemetry/{}/{}",
                    reading.device_id,
                    reading.metric.name()
                );
                let session = device_sessions
                    .get(&reading.device_id)
                    .ok_or_else(|| EngineError::Internal(format!("no session for {}", reading.device_id)))?;
                session.publish(&topic, &to_bytes(&json!(reading)))?;

                let alerts = gateways[gateway_idx]
                    .ingest(reading)
                    .map_err(|e| EngineError::Internal(format!("ingest: {e}")))?;
                publish_alerts(
                    &gateway_sessions[gateway_idx],
                    &spec.gateways[gateway_idx].gateway_id,
                    &alerts,
                )?;
            }
            Action::LinkDown { gateway_idx } => {
                gateways[gateway_idx].set_link(false);
                gateway_sessions[gateway_idx].publish(
                    &format!("links/{}", spec.gateways[gateway_idx].gateway_id),
                    &to_bytes(&json!({"state": "down"})),
                )?;
            }
            Action::LinkUp { gateway_idx } => {
                gateways[gateway_idx].set_link(true);
                gateway_sessions[gateway_idx].publish(
                    &format!("links/{}", spec.gateways[gateway_idx].gateway_id),
                    &to_bytes(&json!({"state": "up"})),
                )?;
                // Fold the replayed backlog into the shadows first, then
                // reconcile the devices the gateway asked about.
                drain_cloud(
                    &cloud_session,
                    &registry,
                    &mut journal_seen,
                    &mut alert_seen,
                    &mut journal_readings,
                    &mut duplicates_dropped,
                )?;
                let requested: Vec<String> =
                    std::mem::take(&mut *reconcile_queues[gateway_idx].lock().expect("reconcile queue"));
                for device_id in requested {
                    registry
                        .reconcile(&device_id)
                        .map_err(|e| EngineError::Internal(format!("reconcile {device_id}: {e}")))?;
                }
            }
            Action::Presence { facility_idx, event } => {
                facilities[facility_idx].tracker.apply(&event);
                facilities[facility_idx].session.publish(
                    &format!("facility/{}/presence", spec.facilities[facility_idx].facility_id),
                    &to_bytes(&json!(event)),
                )?;
            }
            Action::Positions { facility_idx, snapshot_idx } => {
                let fac_spec = &spec.facilities[facility_idx];
                let snapshot = &fac_spec.position_snapshots[snapshot_idx];
                let positions: Vec<EntityPosition> = snapshot
                    .positions
                    .iter()
                    .map(|p| EntityPosition {
                        entity_id: p.entity_id.clone(),
                        x: p.x,
                        y: p.y,
                        ts: snapshot.ts,
                    })
                    .collect();
                let state = &mut facilities[facility_idx];
                for p in &positions {
                    state.session.publish(
                        &format!("telemetry/{}/position_ft", p.entity_id),
                        &to_bytes(&json!({"entity_id": p.entity_id, "x": p.x, "y": p.y, "ts": p.ts})),
                    )?;
                }
                let alerts = distancing_alerts(&positions, &state.policy, &mut state.history)
                    .map_err(|e| EngineError::Internal(format!("distancing: {e}")))?;
                for alert in alerts {
                    state.session.publish(
                        "alerts/distancing",
                        &to_bytes(&json!({
                            "facility_id": fac_spec.facility_id,
                            "entity_a": alert.entity_a,
                            "entity_b": alert.entity_b,
                            "distance_ft": alert.distance_ft,
                            "ts": alert.ts,
                        })),
                    )?;
                }
            }
            Action::PlanTick { facility_idx } => {
                let fac_spec = &spec.facilities[facility_idx];
                let state = &mut facilities[facility_idx];
                let counts = state.tracker.counts();
                let plan = plan_sanitize(&ZoneOccupancy {
                    counts,
                    thresholds: fac_spec.thresholds,
                });
                if !plan.is_empty() {
                    state.session.publish(
                        &format!("plans/sanitize/{}", fac_spec.facility_id),
                        &to_bytes(&json!({
                            "facility_id": fac_spec.facility_id,
                            "zones": plan.zones,
                            "counts": counts,
                        })),
                    )?;
                }
            }
            Action::FlRound { round } => {
                let state = fl
                    .as_mut()
                    .ok_or_else(|| EngineError::Internal("fl round without fl state".into()))?;
                for ((worker_id, data), rng) in state.workers.iter().zip(state.rngs.iter_mut()) {
                    let snapshot = state.server.download();
                    let update = local_train(&snapshot, data, &state.cfg, worker_id, rng)
                        .map_err(|e| EngineError::Internal(format!("local_train {worker_id}: {e}")))?;
                    state
                        .server
                        .submit(&update)
                        .map_err(|e| EngineError::Internal(format!("submit {worker_id}: {e}")))?;
                }
                let model = state.server.download();
                fl_session.publish(
                    "fl/round",
                    &to_bytes(&json!({
                        "round": round,
                        "version": model.version,
                        "loss": mean_loss(&model.weights, &state.union),
                        "accuracy": accuracy(&model.weights, &state.union),
                        "stale_dropped": state.server.stale_dropped(),
                    })),
                )?;
            }
            Action::Stop => {
                let queues: Vec<Value> = gateways
                    .iter()
                    .map(|gw| {
                        json!({
                            "gateway_id": gw.gateway_id(),
                            "depth": gw.queue_depth(),
                            "high_water": gw.queue_high_water(),
                            "dropped": gw.dropped_total(),
                        })
                    })
                    .collect();
                let overflow_drops: u64 = gateways.iter().map(|g| g.dropped_total()).sum();
                orchestrator.publish(
                    "scenario/stop",
                    &to_bytes(&json!({
                        "conservation": {
                            "scheduled_readings": total_scheduled,
                            "cloud_journal_readings": journal_readings,
                            "duplicates_dropped": duplicates_dropped,
                            "overflow_drops": overflow_drops,
                        },
                        "queues": queues,
                    })),
                )?;
            }
        }

        drain_cloud(
            &cloud_session,
            &registry,
            &mut journal_seen,
            &mut alert_seen,
            &mut journal_readings,
            &mut duplicates_dropped,
        )?;
        for delivery in collector.drain_acked()? {
            let message = delivery.message;
            let payload: Value = serde_json::from_slice(&message.payload)
                .map_err(|e| EngineError::Internal(format!("unparseable payload on {}: {e}", message.topic.path())))?;
            events.push(LogRecord {
                ts: message.ts,
                kind: kind_for_topic(&message.topic.path()).to_string(),
                source: message.publisher_id.clone(),
                payload,
            });
        }
    }

    let (model, model_journal) = match (&spec.fl_job, &fl) {
        (Some(_), Some(state)) => {
            let mut journal = Vec::new();
            state
                .server
                .write_journal(&mut journal)
                .map_err(|e| EngineError::Internal(format!("journal: {e}")))?;
            (
                Some(state.server.export_model()),
                Some(String::from_utf8(journal).expect("journal is utf-8")),
            )
        }
        _ => (None, None),
    };

    Ok(RunOutput {
        events,
        model,
        model_journal,
    })
}

fn to_bytes(value: &Value) -> Vec<u8> {
    serde_json::to_vec(value).expect("json value serializes")
}

fn publish_alerts(
    session: &Session,
    gateway_id: &str,
    alerts: &[AlertEvent],
) -> Result<(), EngineError> {
    for alert in alerts {
        session.publish(
            &format!("alerts/{}/{}", gateway_id, alert.severity.name()),
            &to_bytes(&json!(alert)),
        )?;
    }
    Ok(())
}

/// Apply everything the cloud has received: dedup, count, and fold
/// readings into the shadow registry.
fn drain_cloud(
    cloud: &Session,
    registry: &ShadowRegistry,
    journal_seen: &mut BTreeSet<(String, u64)>,
    alert_seen: &mut BTreeSet<String>,
    journal_readings: &mut u64,
    duplicates_dropped: &mut u64,
) -> Result<(), EngineError> {
    for delivery in cloud.drain_acked()? {
        let entry: QueueEntry = serde_json::from_slice(&delivery.message.payload)
            .map_err(|e| EngineError::Internal(format!("bad cloud entry: {e}")))?;
        match entry {
            QueueEntry::Reading(reading) => {
                if !journal_seen.insert((reading.device_id.clone(), reading.seq)) {
                    *duplicates_dropped += 1;
                    continue;
                }
                *journal_readings += 1;
                let mut patch = Patch::new();
                patch.insert(reading.metric.name().to_string(), metric_value_json(&reading.value));
                registry
                    .update_reported(&reading.device_id, &patch, ExpectedVersion::Any)
                    .map_err(|e| {
                        EngineError::Internal(format!("shadow update {}: {e}", reading.device_id))
                    })?;
            }
            QueueEntry::Alert(alert) => {
                if !alert_seen.insert(alert.alert_id.clone()) {
                    *duplicates_dropped += 1;
                }
            }
        }
    }
    Ok(())
}

fn metric_value_json(value: &MetricValue) -> Value {
    match value {
        MetricValue::Scalar(v) => json!(v),
        MetricValue::Point { x, y } => json!({"x": x, "y": y}),
    }
}

fn start_payload(spec: &ScenarioSpec) -> Value {
    let gateways: Vec<Value> = spec
        .gateways
        .iter()
        .map(|gw| {
            json!({
                "gateway_id": gw.gateway_id,
                "queue_capacity": gw.queue_capacity,
                "rules": gw.rules,
            })
        })
        .collect();
    let devices: Vec<Value> = spec.devices.iter().map(|d| json!(d.descriptor())).collect();
    let facilities: Vec<Value> = spec
        .facilities
        .iter()
        .map(|f| {
            json!({
                "facility_id": f.facility_id,
                "thresholds": f.thresholds,
                "distance_threshold_ft": f.distance_threshold_ft,
            })
        })
        .collect();
    json!({
        "seed": spec.seed,
        "duration_ms": spec.duration_ms,
        "gateways": gateways,
        "devices": devices,
        "facilities": facilities,
        "fl_job": spec.fl_job.as_ref().map(|job| json!({
            "workers": job.workers.iter().map(|w| w.worker_id.clone()).collect::<Vec<_>>(),
            "rounds": job.rounds,
        })),
    })
}

/// Map a bus topic to its log record kind.
fn kind_for_topic(topic: &str) -> &'static str {
    let levels: Vec<&str> = topic.split('/').collect();
    match levels.as_slice() {
        ["scenario", "start"] => "scenario_start",
        ["scenario", "stop"] => "scenario_stop",
        ["telemetry", _, "position_ft"] => "position",
        ["telemetry", ..] => "reading",
        ["alerts", "distancing"] => "distancing",
        ["alerts", _, "info"] => "notice",
        ["alerts", ..] => "alert",
        ["links", _] => "link",
        ["cloud", "ingest", _] => "cloud_ingest",
        ["shadow", _, "updated"] => "shadow",
        ["shadow", _, "delta"] => "shadow_delta",
        ["facility", _, "presence"] => "presence",
        ["plans", "sanitize", _] => "plan",
        ["fl", "round"] => "fl_round",
        _ => "message",
    }
}

/// The set of kinds a run can emit, in no particular order. Shared with
/// replay filtering so an unknown `--kind` is a usage error.
pub const LOG_KINDS: [&str; 14] = [
    "scenario_start",
    "scenario_stop",
    "reading",
    "position",
    "alert",
    "notice",
    "distancing",
    "link",
    "cloud_ingest",
    "shadow",
    "shadow_delta",
    "presence",
    "plan",
    "fl_round",
];

/// Expand every schedule into per-device readings with per-device seq
/// numbers. Each schedule draws from its own generator stream, so the
/// expansion order cannot change the values; concurrent mode fans the
/// per-schedule work out to threads and joins in index order.
fn precompute_readings(spec: &ScenarioSpec, concurrent: bool) -> Vec<Vec<TelemetryReading>> {
    // (device index, schedule, global stream index)
    let mut jobs: Vec<(usize, usize, u64)> = Vec::new();
    let mut stream = STREAM_SCHEDULE_BASE;
    for (device_idx, dev) in spec.devices.iter().enumerate() {
        for sched_idx in 0..dev.schedules.len() {
            jobs.push((device_idx, sched_idx, stream));
            stream += 1;
        }
    }

    let expand = |&(device_idx, sched_idx, stream): &(usize, usize, u64)| {
        let sched = &spec.devices[device_idx].schedules[sched_idx];
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(stream);
        expand_schedule(sched, spec.duration_ms, &mut rng)
    };

    let expanded: Vec<Vec<(u64, f64)>> = if concurrent {
        std::thread::scope(|scope| {
            let handles: Vec<_> = jobs.iter().map(|job| scope.spawn(move || expand(job))).collect();
            handles.into_iter().map(|h| h.join().expect("schedule worker")).collect()
        })
    } else {
        jobs.iter().map(expand).collect()
    };

    // Interleave each device's schedules by (ts, schedule index), then
    // number the merged stream: seq is per device, not per schedule.
    let mut per_device: Vec<Vec<TelemetryReading>> = vec![Vec::new(); spec.devices.len()];
    for (device_idx, dev) in spec.devices.iter().enumerate() {
        let mut merged: Vec<(u64, usize, Metric, f64)> = Vec::new();
        for (job, values) in jobs.iter().zip(&expanded) {
            if job.0 != device_idx {
                continue;
            }
            let metric = dev.schedules[job.1].metric;
            for &(ts, value) in values {
                merged.push((ts, job.1, metric, value));
            }
        }
        merged.sort_by_key(|&(ts, sched_idx, _, _)| (ts, sched_idx));
        per_device[device_idx] = merged
            .into_iter()
            .enumerate()
            .map(|(seq, (ts, _, metric, value))| {
                TelemetryReading::scalar(&dev.device_id, metric, value, ts, seq as u64)
            })
            .collect();
    }
    per_device
}

fn build_intentions(spec: &ScenarioSpec, readings: Vec<Vec<TelemetryReading>>) -> Vec<Intention> {
    let gateway_index: BTreeMap<&str, usize> = spec
        .gateways
        .iter()
        .enumerate()
        .map(|(i, gw)| (gw.gateway_id.as_str(), i))
        .collect();

    let mut order = 0u64;
    let mut next = |ts: u64, action: Action| {
        let intention = Intention { ts, order, action };
        order += 1;
        intention
    };

    let mut intentions = Vec::new();
    intentions.push(next(0, Action::Start));

    for (device_idx, device_readings) in readings.into_iter().enumerate() {
        let gateway_idx = gateway_index[spec.devices[device_idx].home_gateway.as_str()];
        for reading in device_readings {
            intentions.push(next(reading.ts, Action::Reading { gateway_idx, reading }));
        }
    }

    for fault in &spec.link_faults {
        let gateway_idx = gateway_index[fault.gateway_id.as_str()];
        intentions.push(next(fault.down_ts, Action::LinkDown { gateway_idx }));
        intentions.push(next(fault.up_ts, Action::LinkUp { gateway_idx }));
    }

    for (facility_idx, fac) in spec.facilities.iter().enumerate() {
        for event in &fac.presence_events {
            intentions.push(next(event.ts, Action::Presence { facility_idx, event: event.clone() }));
        }
        for (snapshot_idx, snap) in fac.position_snapshots.iter().enumerate() {
            intentions.push(next(snap.ts, Action::Positions { facility_idx, snapshot_idx }));
        }
        let mut tick = 0u64;
        let mut k = 0u64;
        while tick < spec.duration_ms {
            intentions.push(next(tick, Action::PlanTick { facility_idx }));
            k += 1;
            tick = k * fac.plan_cadence_ms;
        }
    }

    if let Some(job) = &spec.fl_job {
        for round in 0..job.rounds {
            let ts = job.start_ms + u64::from(round) * job.round_interval_ms;
            intentions.push(next(ts, Action::FlRound { round }));
        }
    }

    intentions.push(next(spec.duration_ms, Action::Stop));
    intentions.sort_by_key(|i| (i.ts, i.order));
    intentions
}

/// Render a short human-readable summary for one log record — shared by
/// the replay command.
pub fn summarize(record: &LogRecord) -> String {
    let p = &record.payload;
    let mut out = String::new();
    match record.kind.as_str() {
        "scenario_start" => {
            let _ = write!(
                out,
                "seed {} duration {} ms",
                p["seed"], p["duration_ms"]
            );
        }
        "scenario_stop" => {
            let _ = write!(
                out,
                "scheduled {} journaled {} dropped {}",
                p["conservation"]["scheduled_readings"],
                p["conservation"]["cloud_journal_readings"],
                p["conservation"]["overflow_drops"]
            );
        }
        "reading" => {
            let _ = write!(
                out,
                "{} = {} (seq {})",
                p["metric"].as_str().unwrap_or("?"),
                p["value"],
                p["seq"]
            );
        }
        "position" => {
            let _ = write!(out, "{} at ({}, {})", p["entity_id"].as_str().unwrap_or("?"), p["x"], p["y"]);
        }
        "alert" | "notice" => {
            let _ = write!(
                out,
                "{} on {}: {} ({}){}",
                p["rule_id"].as_str().unwrap_or("?"),
                p["device_id"].as_str().unwrap_or("?"),
                p["observed_value"],
                p["severity"].as_str().unwrap_or("?"),
                if p["delivered_late"] == json!(true) { " [late]" } else { "" }
            );
        }
        "distancing" => {
            let _ = write!(
                out,
                "{} <-> {} at {} ft",
                p["entity_a"].as_str().unwrap_or("?"),
                p["entity_b"].as_str().unwrap_or("?"),
                p["distance_ft"]
            );
        }
        "link" => {
            let _ = write!(out, "{}", p["state"].as_str().unwrap_or("?"));
        }
        "cloud_ingest" => match p["entry"].as_str() {
            Some("reading") => {
                let _ = write!(out, "reading {} seq {}", p["device_id"].as_str().unwrap_or("?"), p["seq"]);
            }
            Some("alert") => {
                let _ = write!(out, "alert {}", p["alert_id"].as_str().unwrap_or("?"));
            }
            _ => {
                let _ = write!(out, "{p}");
            }
        },
        "shadow" => {
            let _ = write!(
                out,
                "v{} {}",
                p["version"],
                p["op"].as_str().unwrap_or("?")
            );
        }
        "shadow_delta" => {
            let keys: Vec<&str> = p.as_object().map(|m| m.keys().map(String::as_str).collect()).unwrap_or_default();
            let _ = write!(out, "pending: {}", keys.join(", "));
        }
        "presence" => {
            let _ = write!(
                out,
                "{} {} {}",
                p["entity_id"].as_str().unwrap_or("?"),
                p["kind"].as_str().unwrap_or("?"),
                p["zone"].as_str().unwrap_or("?")
            );
        }
        "plan" => {
            let zones: Vec<&str> = p["zones"]
                .as_array()
                .map(|a| a.iter().filter_map(Value::as_str).collect())
                .unwrap_or_default();
            let _ = write!(out, "sanitize {}", zones.join(", "));
        }
        "fl_round" => {
            let _ = write!(
                out,
                "round {} v{} loss {} acc {}",
                p["round"], p["version"], p["loss"], p["accuracy"]
            );
        }
        _ => {
            let _ = write!(out, "{p}");
        }
    }
    out
}
