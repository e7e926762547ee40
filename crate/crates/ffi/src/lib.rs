//! C ABI over the simulation core: status codes in, JSON documents out.
//!
//! Conventions shared by every function here:
//! - Strings cross the boundary as NUL-terminated UTF-8. Inputs are
//!   `const char *`; outputs are written through `char **` out-params,
//!   are allocated by this library, and must be released with
//!   [`es_string_free`]. Passing NULL for an optional out-param skips it.
//! - Every fallible call returns an [`EsStatus`]. On any non-`Ok` status
//!   the out-params are left untouched and a human-readable description
//!   is available from [`es_last_error_message`] (thread-local).
//! - Handles ([`EsShadowRegistry`]) are opaque; create and destroy them
//!   only through their `_new`/`_free` pair, and never share one handle
//!   across a `_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use serde_json::Value;

use edgesim::bus::match_strs;
use edgesim::clock::WallClock;
use edgesim::model::{DeviceDescriptor, DeviceKind, Principal, Role};
use edgesim::scenario::report::{build_report, log_digest, parse_log};
use edgesim::scenario::spec as scenario_spec;
use edgesim::scenario::{run, EngineError, RunOptions};
use edgesim::shadow::{ExpectedVersion, Patch, ShadowError, ShadowRegistry};
use edgesim::spatial::{
    distancing_alerts, plan_sanitize, DistancePolicy, EntityPosition, PairHistory, ZoneCounts,
    ZoneOccupancy, ZoneThresholds,
};

/// Result of every fallible call in this library.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EsStatus {
    Ok = 0,
    /// A required pointer argument was NULL.
    NullArgument = 1,
    /// An input string was not valid UTF-8.
    InvalidUtf8 = 2,
    /// An input document did not parse as JSON of the expected shape.
    ParseError = 3,
    /// A scenario failed referential or range validation.
    ValidationFailed = 4,
    /// A topic or pattern violated the topic grammar.
    InvalidTopic = 5,
    /// The named device has no shadow in the registry.
    UnknownDevice = 6,
    /// The expected shadow version did not match the current one.
    VersionConflict = 7,
    /// The principal may not perform the requested shadow write.
    PermissionDenied = 8,
    /// An argument was structurally valid but semantically out of range.
    InvalidArgument = 9,
    /// An internal failure; details via `es_last_error_message`.
    RuntimeError = 10,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn fail(status: EsStatus, message: impl Into<String>) -> EsStatus {
    let text = message.into();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(text.replace('\0', " ")).ok();
    });
    status
}

fn ok() -> EsStatus {
    LAST_ERROR.with(|slot| slot.borrow_mut().take());
    EsStatus::Ok
}

/// Description of the most recent failure on this thread, or NULL if the
/// last call succeeded. The caller owns the returned string.
#[no_mangle]
pub extern "C" fn es_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|slot| match &*slot.borrow() {
        Some(text) => text.clone().into_raw(),
        None => std::ptr::null_mut(),
    })
}

/// Library version as a static string; do not free it.
#[no_mangle]
pub extern "C" fn es_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Release a string returned by any function in this library.
///
/// # Safety
/// `s` must be a pointer previously returned by this library (or NULL),
/// and must not be used after this call.
#[no_mangle]
pub unsafe extern "C" fn es_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

unsafe fn read_str<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, EsStatus> {
    if ptr.is_null() {
        return Err(fail(EsStatus::NullArgument, format!("{name} is NULL")));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| fail(EsStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

unsafe fn write_string(out: *mut *mut c_char, text: String) {
    if !out.is_null() {
        let c = CString::new(text.replace('\0', " ")).expect("NULs stripped");
        *out = c.into_raw();
    }
}

fn guarded(f: impl FnOnce() -> EsStatus) -> EsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => fail(EsStatus::RuntimeError, "internal panic"),
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("library types serialize")
}

/// Match a subscription pattern (`+` = one level, trailing `#` = the
/// rest, including nothing) against a concrete topic.
///
/// # Safety
/// `pattern` and `topic` must be NUL-terminated strings; `out_match`
/// must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn es_topic_match(
    pattern: *const c_char,
    topic: *const c_char,
    out_match: *mut bool,
) -> EsStatus {
    guarded(|| {
        let pattern = match read_str(pattern, "pattern") {
            Ok(s) => s,
            Err(status) => return status,
        };
        let topic = match read_str(topic, "topic") {
            Ok(s) => s,
            Err(status) => return status,
        };
        if out_match.is_null() {
            return fail(EsStatus::NullArgument, "out_match is NULL");
        }
        match match_strs(pattern, topic) {
            Ok(matched) => {
                *out_match = matched;
                ok()
            }
            Err(e) => fail(EsStatus::InvalidTopic, e.to_string()),
        }
    })
}

/// Validate a scenario document. On `Ok` *and* on `ValidationFailed`,
/// `out_diagnostics_json` (if non-NULL) receives a JSON array of
/// `{path, message}` objects — empty exactly when the scenario is clean.
///
/// # Safety
/// `scenario_json` must be a NUL-terminated string; `out_diagnostics_json`
/// may be NULL.
#[no_mangle]
pub unsafe extern "C" fn es_scenario_validate(
    scenario_json: *const c_char,
    out_diagnostics_json: *mut *mut c_char,
) -> EsStatus {
    guarded(|| {
        let text = match read_str(scenario_json, "scenario_json") {
            Ok(s) => s,
            Err(status) => return status,
        };
        let spec = match scenario_spec::parse(text) {
            Ok(spec) => spec,
            Err(e) => return fail(EsStatus::ParseError, e.to_string()),
        };
        let diagnostics = spec.validate();
        let clean = diagnostics.is_empty();
        write_string(out_diagnostics_json, to_json(&diagnostics));
        if clean {
            ok()
        } else {
            fail(
                EsStatus::ValidationFailed,
                format!("{} diagnostic(s)", diagnostics.len()),
            )
        }
    })
}

/// Run a scenario to completion. `out_events_jsonl` receives the full
/// event log (one JSON record per line); `out_report_json` (optional)
/// receives the summary report over that log.
///
/// # Safety
/// `scenario_json` must be a NUL-terminated string; `out_events_jsonl`
/// must be valid; `out_report_json` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn es_scenario_run(
    scenario_json: *const c_char,
    concurrent: bool,
    out_events_jsonl: *mut *mut c_char,
    out_report_json: *mut *mut c_char,
) -> EsStatus {
    guarded(|| {
        let text = match read_str(scenario_json, "scenario_json") {
            Ok(s) => s,
            Err(status) => return status,
        };
        if out_events_jsonl.is_null() {
            return fail(EsStatus::NullArgument, "out_events_jsonl is NULL");
        }
        let spec = match scenario_spec::parse(text) {
            Ok(spec) => spec,
            Err(e) => return fail(EsStatus::ParseError, e.to_string()),
        };
        let output = match run(
            &spec,
            &RunOptions {
                concurrent,
                speed: None,
            },
        ) {
            Ok(output) => output,
            Err(EngineError::Validation(diags)) => {
                let lines: Vec<String> = diags.iter().map(|d| d.to_string()).collect();
                return fail(EsStatus::ValidationFailed, lines.join("; "));
            }
            Err(e) => return fail(EsStatus::RuntimeError, e.to_string()),
        };

        let events = output.events_jsonl();
        if !out_report_json.is_null() {
            let report = build_report(&output.events, &log_digest(events.as_bytes()));
            write_string(out_report_json, report.to_string());
        }
        write_string(out_events_jsonl, events);
        ok()
    })
}

/// Summarize an event log (the `events.jsonl` text) into the report
/// document, independent of any run.
///
/// # Safety
/// `events_jsonl` must be a NUL-terminated string; `out_report_json`
/// must be valid.
#[no_mangle]
pub unsafe extern "C" fn es_log_report(
    events_jsonl: *const c_char,
    out_report_json: *mut *mut c_char,
) -> EsStatus {
    guarded(|| {
        let text = match read_str(events_jsonl, "events_jsonl") {
            Ok(s) => s,
            Err(status) => return status,
        };
        if out_report_json.is_null() {
            return fail(EsStatus::NullArgument, "out_report_json is NULL");
        }
        let records = match parse_log(text) {
            Ok(records) => records,
            Err(e) => return fail(EsStatus::ParseError, e.to_string()),
        };
        let report = build_report(&records, &log_digest(text.as_bytes()));
        write_string(out_report_json, report.to_string());
        ok()
    })
}

/// Decide which zones to sanitize for the given occupant counts:
/// isolation at `max_threshold_1`, living and staff at `max_threshold_2`.
/// Writes `{"zones": [...]}` with zones in traversal order.
///
/// # Safety
/// `out_plan_json` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn es_sanitize_plan(
    number_iz: u32,
    number_lz: u32,
    number_sz: u32,
    max_threshold_1: u32,
    max_threshold_2: u32,
    out_plan_json: *mut *mut c_char,
) -> EsStatus {
    guarded(|| {
        if out_plan_json.is_null() {
            return fail(EsStatus::NullArgument, "out_plan_json is NULL");
        }
        let occ = ZoneOccupancy {
            counts: ZoneCounts {
                number_iz,
                number_lz,
                number_sz,
            },
            thresholds: ZoneThresholds {
                max_threshold_1,
                max_threshold_2,
            },
        };
        if let Err(e) = occ.thresholds.validate() {
            return fail(EsStatus::InvalidArgument, e.to_string());
        }
        write_string(out_plan_json, to_json(&plan_sanitize(&occ)));
        ok()
    })
}

/// Evaluate one position snapshot for too-close pairs. `positions_json`
/// is a JSON array of `{entity_id, x, y, ts}` (feet, shared timestamp);
/// pairs strictly closer than `threshold_ft` are written as a JSON array
/// of `{entity_a, entity_b, distance_ft, ts}`. Each call is independent
/// (no cooldown state is carried between calls).
///
/// # Safety
/// `positions_json` must be a NUL-terminated string; `out_alerts_json`
/// must be valid.
#[no_mangle]
pub unsafe extern "C" fn es_distancing_alerts(
    positions_json: *const c_char,
    threshold_ft: f64,
    out_alerts_json: *mut *mut c_char,
) -> EsStatus {
    guarded(|| {
        let text = match read_str(positions_json, "positions_json") {
            Ok(s) => s,
            Err(status) => return status,
        };
        if out_alerts_json.is_null() {
            return fail(EsStatus::NullArgument, "out_alerts_json is NULL");
        }
        let positions: Vec<EntityPosition> = match serde_json::from_str(text) {
            Ok(positions) => positions,
            Err(e) => return fail(EsStatus::ParseError, e.to_string()),
        };
        let policy = DistancePolicy {
            threshold_ft,
            ..DistancePolicy::default()
        };
        let mut history = PairHistory::new();
        match distancing_alerts(&positions, &policy, &mut history) {
            Ok(alerts) => {
                write_string(out_alerts_json, to_json(&alerts));
                ok()
            }
            Err(e) => fail(EsStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// An in-memory device-shadow registry on the system clock.
pub struct EsShadowRegistry {
    inner: ShadowRegistry,
}

/// Create an empty shadow registry. Free with [`es_shadow_registry_free`].
#[no_mangle]
pub extern "C" fn es_shadow_registry_new() -> *mut EsShadowRegistry {
    Box::into_raw(Box::new(EsShadowRegistry {
        inner: ShadowRegistry::new(Arc::new(WallClock)),
    }))
}

/// Destroy a registry created by [`es_shadow_registry_new`].
///
/// # Safety
/// `registry` must come from `es_shadow_registry_new` (or be NULL) and
/// must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn es_shadow_registry_free(registry: *mut EsShadowRegistry) {
    if !registry.is_null() {
        drop(Box::from_raw(registry));
    }
}

unsafe fn registry_ref<'a>(
    registry: *mut EsShadowRegistry,
) -> Result<&'a ShadowRegistry, EsStatus> {
    if registry.is_null() {
        return Err(fail(EsStatus::NullArgument, "registry is NULL"));
    }
    Ok(&(*registry).inner)
}

fn shadow_status(e: &ShadowError) -> EsStatus {
    match e {
        ShadowError::UnknownDevice(_) => EsStatus::UnknownDevice,
        ShadowError::VersionConflict { .. } => EsStatus::VersionConflict,
        ShadowError::PermissionDenied { .. } => EsStatus::PermissionDenied,
        ShadowError::InvalidKey(_) => EsStatus::InvalidArgument,
        _ => EsStatus::RuntimeError,
    }
}

/// Register a device shadow at version 0. `kind` is one of the device
/// kind names (`oximeter`, `thermometer`, `bp_monitor`, `door_sensor`,
/// `motion_sensor`, `position_tag`, `wearable`, `camera`,
/// `sanitizer_robot`). Re-registering an existing id only updates the
/// owner.
///
/// # Safety
/// `registry` must be a live handle; the strings must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn es_shadow_register(
    registry: *mut EsShadowRegistry,
    device_id: *const c_char,
    kind: *const c_char,
    owner: *const c_char,
    home_gateway: *const c_char,
) -> EsStatus {
    guarded(|| {
        let registry = match registry_ref(registry) {
            Ok(r) => r,
            Err(status) => return status,
        };
        let (device_id, kind, owner, home_gateway) = match (
            read_str(device_id, "device_id"),
            read_str(kind, "kind"),
            read_str(owner, "owner"),
            read_str(home_gateway, "home_gateway"),
        ) {
            (Ok(a), Ok(b), Ok(c), Ok(d)) => (a, b, c, d),
            (Err(s), ..) | (_, Err(s), ..) | (_, _, Err(s), _) | (.., Err(s)) => return s,
        };
        let kind: DeviceKind = match serde_json::from_value(Value::String(kind.to_string())) {
            Ok(kind) => kind,
            Err(_) => return fail(EsStatus::InvalidArgument, format!("unknown kind {kind:?}")),
        };
        registry.register(&DeviceDescriptor {
            device_id: device_id.to_string(),
            kind,
            owner: owner.to_string(),
            home_gateway: home_gateway.to_string(),
        });
        ok()
    })
}

/// Merge a reported-state patch (JSON object) into a shadow and bump its
/// version. `expected_version < 0` means no precondition; otherwise the
/// write is rejected with `VersionConflict` unless it equals the current
/// version. On success writes the updated shadow document if
/// `out_shadow_json` is non-NULL.
///
/// # Safety
/// `registry` must be a live handle; the strings must be NUL-terminated;
/// `out_shadow_json` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn es_shadow_update_reported(
    registry: *mut EsShadowRegistry,
    device_id: *const c_char,
    patch_json: *const c_char,
    expected_version: i64,
    out_shadow_json: *mut *mut c_char,
) -> EsStatus {
    guarded(|| {
        let registry = match registry_ref(registry) {
            Ok(r) => r,
            Err(status) => return status,
        };
        let device_id = match read_str(device_id, "device_id") {
            Ok(s) => s,
            Err(status) => return status,
        };
        let patch_text = match read_str(patch_json, "patch_json") {
            Ok(s) => s,
            Err(status) => return status,
        };
        let patch: Patch = match serde_json::from_str(patch_text) {
            Ok(patch) => patch,
            Err(e) => return fail(EsStatus::ParseError, e.to_string()),
        };
        let expected = if expected_version < 0 {
            ExpectedVersion::Any
        } else {
            ExpectedVersion::Exact(expected_version as u64)
        };
        match registry.update_reported(device_id, &patch, expected) {
            Ok(shadow) => {
                write_string(out_shadow_json, to_json(&shadow));
                ok()
            }
            Err(e) => fail(shadow_status(&e), e.to_string()),
        }
    })
}

/// Merge a desired-state patch on behalf of a principal. `role` is one
/// of `patient`, `family`, `practitioner`, `local_authority`,
/// `operator`; desired writes always require the exact current version.
///
/// # Safety
/// `registry` must be a live handle; the strings must be NUL-terminated;
/// `out_shadow_json` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn es_shadow_set_desired(
    registry: *mut EsShadowRegistry,
    device_id: *const c_char,
    patch_json: *const c_char,
    principal_id: *const c_char,
    role: *const c_char,
    expected_version: u64,
    out_shadow_json: *mut *mut c_char,
) -> EsStatus {
    guarded(|| {
        let registry = match registry_ref(registry) {
            Ok(r) => r,
            Err(status) => return status,
        };
        let (device_id, patch_text, principal_id, role) = match (
            read_str(device_id, "device_id"),
            read_str(patch_json, "patch_json"),
            read_str(principal_id, "principal_id"),
            read_str(role, "role"),
        ) {
            (Ok(a), Ok(b), Ok(c), Ok(d)) => (a, b, c, d),
            (Err(s), ..) | (_, Err(s), ..) | (_, _, Err(s), _) | (.., Err(s)) => return s,
        };
        let patch: Patch = match serde_json::from_str(patch_text) {
            Ok(patch) => patch,
            Err(e) => return fail(EsStatus::ParseError, e.to_string()),
        };
        let role: Role = match serde_json::from_value(Value::String(role.to_string())) {
            Ok(role) => role,
            Err(_) => return fail(EsStatus::InvalidArgument, format!("unknown role {role:?}")),
        };
        let principal = Principal::new(principal_id, role);
        match registry.set_desired(device_id, &patch, &principal, expected_version) {
            Ok(shadow) => {
                write_string(out_shadow_json, to_json(&shadow));
                ok()
            }
            Err(e) => fail(shadow_status(&e), e.to_string()),
        }
    })
}

/// Read a shadow document as JSON.
///
/// # Safety
/// `registry` must be a live handle; `device_id` must be NUL-terminated;
/// `out_shadow_json` must be valid.
#[no_mangle]
pub unsafe extern "C" fn es_shadow_get(
    registry: *mut EsShadowRegistry,
    device_id: *const c_char,
    out_shadow_json: *mut *mut c_char,
) -> EsStatus {
    guarded(|| {
        let registry = match registry_ref(registry) {
            Ok(r) => r,
            Err(status) => return status,
        };
        let device_id = match read_str(device_id, "device_id") {
            Ok(s) => s,
            Err(status) => return status,
        };
        if out_shadow_json.is_null() {
            return fail(EsStatus::NullArgument, "out_shadow_json is NULL");
        }
        match registry.get(device_id) {
            Ok(shadow) => {
                write_string(out_shadow_json, to_json(&shadow));
                ok()
            }
            Err(e) => fail(shadow_status(&e), e.to_string()),
        }
    })
}

/// Mark a device offline; its shadow stays readable and writable.
///
/// # Safety
/// `registry` must be a live handle; `device_id` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn es_shadow_mark_offline(
    registry: *mut EsShadowRegistry,
    device_id: *const c_char,
) -> EsStatus {
    guarded(|| {
        let registry = match registry_ref(registry) {
            Ok(r) => r,
            Err(status) => return status,
        };
        let device_id = match read_str(device_id, "device_id") {
            Ok(s) => s,
            Err(status) => return status,
        };
        match registry.mark_offline(device_id) {
            Ok(()) => ok(),
            Err(e) => fail(shadow_status(&e), e.to_string()),
        }
    })
}

/// Bring a device back online and write the keys whose desired value
/// differs from reported, as a JSON object (empty when in sync). The
/// shadow version is not changed.
///
/// # Safety
/// `registry` must be a live handle; `device_id` must be NUL-terminated;
/// `out_delta_json` must be valid.
#[no_mangle]
pub unsafe extern "C" fn es_shadow_reconcile(
    registry: *mut EsShadowRegistry,
    device_id: *const c_char,
    out_delta_json: *mut *mut c_char,
) -> EsStatus {
    guarded(|| {
        let registry = match registry_ref(registry) {
            Ok(r) => r,
            Err(status) => return status,
        };
        let device_id = match read_str(device_id, "device_id") {
            Ok(s) => s,
            Err(status) => return status,
        };
        if out_delta_json.is_null() {
            return fail(EsStatus::NullArgument, "out_delta_json is NULL");
        }
        match registry.reconcile(device_id) {
            Ok(delta) => {
                write_string(out_delta_json, to_json(&delta));
                ok()
            }
            Err(e) => fail(shadow_status(&e), e.to_string()),
        }
    })
}
