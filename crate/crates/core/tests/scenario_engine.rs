//! End-to-end runs of the packaged scenarios plus small inline ones,
//! checking determinism, conservation, and the log post-processors.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde_json::json;

use edgesim::scenario::report::{build_report, log_digest, parse_log, render_replay, LogError, ReplayError};
use edgesim::scenario::spec::{self, ScenarioSpec};
use edgesim::scenario::{run, LogRecord, RunOptions, RunOutput};

fn packaged(name: &str) -> ScenarioSpec {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name);
    spec::load(path).expect("packaged scenario loads")
}

fn run_serial(spec: &ScenarioSpec) -> RunOutput {
    run(spec, &RunOptions::default()).expect("run succeeds")
}

fn records_of_kind<'a>(output: &'a RunOutput, kind: &str) -> Vec<&'a LogRecord> {
    output.events.iter().filter(|r| r.kind == kind).collect()
}

#[test]
fn identical_runs_produce_identical_logs() {
    let spec = packaged("rpm_bob.json");
    let first = run_serial(&spec).events_jsonl();
    let second = run_serial(&spec).events_jsonl();
    let concurrent = run(
        &spec,
        &RunOptions {
            concurrent: true,
            speed: None,
        },
    )
    .expect("concurrent run succeeds")
    .events_jsonl();

    assert_eq!(first, second);
    assert_eq!(first, concurrent);

    let mut reseeded = spec.clone();
    reseeded.seed ^= 1;
    let other = run_serial(&reseeded).events_jsonl();
    assert_ne!(
        log_digest(first.as_bytes()),
        log_digest(other.as_bytes()),
        "a different seed must change the log"
    );
}

#[test]
fn packaged_rpm_monitoring_counts() {
    let spec = packaged("rpm_bob.json");
    let output = run_serial(&spec);
    let report = build_report(&output.events, "sha256:unused");

    assert_eq!(report["alerts"]["temp_high"], json!(1));
    assert_eq!(report["alerts"]["spo2_low"], json!(0));
    assert_eq!(report["notices"]["open_door"], json!(1));

    // The one temperature alert fires at the first reading at or above
    // the rule threshold, located here by scanning the readings directly.
    let first_hot = output
        .events
        .iter()
        .find(|r| {
            r.kind == "reading"
                && r.payload["device_id"] == json!("therm-2")
                && r.payload["value"].as_f64().unwrap() >= 103.0
        })
        .expect("a reading crosses the threshold")
        .ts;
    let alerts = records_of_kind(&output, "alert");
    assert_eq!(alerts.len(), 1);
    assert_eq!(alerts[0].ts, first_hot);
    assert_eq!(alerts[0].payload["rule_id"], json!("temp_high"));
    assert_eq!(alerts[0].payload["delivered_late"], json!(false));

    // Conservation: nothing scheduled may go missing in a fault-free run.
    let stop = records_of_kind(&output, "scenario_stop");
    let conservation = &stop[0].payload["conservation"];
    assert_eq!(conservation["scheduled_readings"], conservation["cloud_journal_readings"]);
    assert_eq!(conservation["overflow_drops"], json!(0));
}

#[test]
fn offline_window_recovers_every_reading_in_order() {
    let spec = packaged("offline_drill.json");
    let output = run_serial(&spec);

    let mut per_device: BTreeMap<String, Vec<u64>> = BTreeMap::new();
    for record in &output.events {
        if record.kind == "cloud_ingest" && record.payload["entry"] == json!("reading") {
            per_device
                .entry(record.payload["device_id"].as_str().unwrap().to_string())
                .or_default()
                .push(record.payload["seq"].as_u64().unwrap());
        }
    }
    assert_eq!(per_device.len(), 2);
    for (device, seqs) in &per_device {
        assert_eq!(seqs.len(), 500, "{device} journal is complete");
        let expected: Vec<u64> = (0..500).collect();
        assert_eq!(seqs, &expected, "{device} journal is in seq order, gap-free");
    }

    let report = build_report(&output.events, "sha256:unused");
    assert_eq!(report["recovery"]["recovered_readings"], json!(1000));
    assert_eq!(report["recovery"]["lost_readings"], json!(0));
    assert_eq!(report["recovery"]["duplicates_dropped"], json!(0));

    // Every reading reaches the cloud only after the link is restored,
    // and each shadow mutation bumped its device's version exactly once.
    let up_ts = spec.link_faults[0].up_ts;
    for record in &output.events {
        if record.kind == "cloud_ingest" {
            assert!(record.ts >= up_ts);
        }
    }
    assert_eq!(records_of_kind(&output, "shadow").len(), 1000);
}

#[test]
fn alerts_created_offline_are_flagged_late() {
    let spec = spec::parse(
        r#"{
            "seed": 3,
            "duration_ms": 100000,
            "gateways": [{
                "gateway_id": "gw",
                "token": "t",
                "rules": [{
                    "rule_id": "spo2_low",
                    "metric": "spo2_pct",
                    "comparator": "lt",
                    "threshold": 85.0,
                    "severity": "critical",
                    "recipients": ["practitioner"]
                }]
            }],
            "devices": [{
                "device_id": "oxi",
                "kind": "oximeter",
                "owner": "pat",
                "home_gateway": "gw",
                "schedules": [{
                    "metric": "spo2_pct",
                    "start_ms": 10000,
                    "cadence_ms": 10000,
                    "count": 3,
                    "source": {"kind": "series", "values": [97.0, 84.0, 97.0]}
                }]
            }],
            "link_faults": [{"gateway_id": "gw", "down_ts": 15000, "up_ts": 50000}]
        }"#,
    )
    .unwrap();
    let output = run_serial(&spec);

    let alerts = records_of_kind(&output, "alert");
    assert_eq!(alerts.len(), 1);
    assert_eq!(alerts[0].ts, 20000, "alert is created at the reading's ts");
    assert_eq!(alerts[0].payload["delivered_late"], json!(true));

    // The cloud copy of that alert arrives with the queue flush at resync.
    let cloud_alert = output
        .events
        .iter()
        .find(|r| r.kind == "cloud_ingest" && r.payload["entry"] == json!("alert"))
        .expect("alert reaches the cloud");
    assert_eq!(cloud_alert.ts, 50000);
    assert_eq!(cloud_alert.payload["delivered_late"], json!(true));
}

#[test]
fn zero_duration_run_logs_lifecycle_only() {
    let spec = spec::parse(
        r#"{
            "seed": 1,
            "duration_ms": 0,
            "gateways": [{"gateway_id": "gw", "token": "t"}],
            "devices": [{
                "device_id": "oxi",
                "kind": "oximeter",
                "owner": "pat",
                "home_gateway": "gw",
                "schedules": [{
                    "metric": "spo2_pct",
                    "cadence_ms": 1000,
                    "source": {"kind": "uniform", "lo": 90.0, "hi": 99.0}
                }]
            }]
        }"#,
    )
    .unwrap();
    let output = run_serial(&spec);

    let kinds: Vec<&str> = output.events.iter().map(|r| r.kind.as_str()).collect();
    assert_eq!(kinds, ["scenario_start", "scenario_stop"]);

    let report = build_report(&output.events, "sha256:unused");
    assert_eq!(report["readings"]["oxi"], json!(0));
    assert_eq!(report["readings_total"], json!(0));
    assert_eq!(report["alerts_total"], json!(0));
    assert_eq!(report["distancing_alerts"], json!(0));
    assert_eq!(report["plans"], json!(0));
}

#[test]
fn empty_device_list_yields_only_lifecycle_records() {
    let spec = spec::parse(r#"{"seed": 5, "duration_ms": 3600000}"#).unwrap();
    let output = run_serial(&spec);

    assert_eq!(output.events.len(), 2);
    assert_eq!(output.events[0].kind, "scenario_start");
    assert_eq!(output.events[0].ts, 0);
    assert_eq!(output.events[1].kind, "scenario_stop");
    assert_eq!(output.events[1].ts, 3600000);
    assert!(output.model.is_none());
}

#[test]
fn facility_run_emits_plans_and_cooldown_limited_distancing() {
    let spec = packaged("facility.json");
    let output = run_serial(&spec);

    let distancing = records_of_kind(&output, "distancing");
    assert_eq!(distancing.len(), 2, "middle snapshot is inside the pair cooldown");
    assert_eq!(distancing[0].ts, 150000);
    assert_eq!(distancing[1].ts, 240000);

    let plans = records_of_kind(&output, "plan");
    assert_eq!(plans.len(), 2, "empty plans are not logged");
    assert_eq!(plans[0].payload["zones"], json!(["IZ", "LZ"]));
    assert_eq!(plans[1].payload["zones"], json!(["LZ"]));
}

#[test]
fn report_and_replay_are_pure_functions_of_the_log() {
    let spec = packaged("facility.json");
    let output = run_serial(&spec);
    let text = output.events_jsonl();

    let records = parse_log(&text).unwrap();
    assert_eq!(records.len(), output.events.len());

    let digest = log_digest(text.as_bytes());
    assert_eq!(build_report(&records, &digest), build_report(&records, &digest));
    assert_eq!(
        render_replay(&records, None, None).unwrap(),
        render_replay(&records, None, None).unwrap()
    );
}

#[test]
fn replay_filters_by_kind_and_source() {
    let spec = packaged("facility.json");
    let output = run_serial(&spec);
    let records = parse_log(&output.events_jsonl()).unwrap();

    let all = render_replay(&records, None, None).unwrap();
    assert_eq!(all.lines().count(), records.len());

    let distancing = render_replay(&records, Some("distancing"), None).unwrap();
    assert_eq!(distancing.lines().count(), 2);

    let by_source = render_replay(&records, None, Some("fac-east")).unwrap();
    assert!(by_source.lines().count() >= 2);
    for line in by_source.lines() {
        assert!(line.contains("fac-east"));
    }

    let both = render_replay(&records, Some("plan"), Some("fac-east")).unwrap();
    assert_eq!(both.lines().count(), 2);

    let empty = render_replay(&[], None, None).unwrap();
    assert_eq!(empty, "");

    match render_replay(&records, Some("bogus"), None) {
        Err(ReplayError::UnknownKind(k)) => assert_eq!(k, "bogus"),
        other => panic!("expected unknown-kind error, got {other:?}"),
    }
}

#[test]
fn malformed_log_lines_are_located() {
    let spec = spec::parse(r#"{"seed": 5, "duration_ms": 10}"#).unwrap();
    let good = run_serial(&spec).events_jsonl();
    let text = format!("{good}this is not a record\n");
    match parse_log(&text) {
        Err(LogError::Malformed { line, .. }) => assert_eq!(line, 3),
        other => panic!("expected malformed-log error, got {other:?}"),
    }
}

#[test]
fn fl_scenario_writes_model_and_trains() {
    let mut spec = packaged("fl_demo.json");
    let job = spec.fl_job.as_mut().unwrap();
    job.rounds = 20;
    for worker in &mut job.workers {
        worker.samples = 60;
    }

    let output = run_serial(&spec);
    let rounds = records_of_kind(&output, "fl_round");
    assert_eq!(rounds.len(), 20);

    let model = output.model.as_ref().expect("model document present");
    assert_eq!(model["d"], json!(2));
    assert_eq!(model["version"], json!(80), "4 workers x 20 rounds all accepted");
    assert_eq!(model["weights"].as_array().unwrap().len(), 3);

    let journal = output.model_journal.as_ref().expect("journal present");
    assert_eq!(journal.lines().count(), 80);

    let last = &rounds[19].payload;
    let first = &rounds[0].payload;
    assert!(
        last["loss"].as_f64().unwrap() < first["loss"].as_f64().unwrap(),
        "loss decreases over training"
    );
    assert_eq!(last["stale_dropped"], json!(0));
}
