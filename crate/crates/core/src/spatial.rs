//! Facility spatial monitoring: social-distancing alerts from pairwise
//! position snapshots, zone occupancy tracked from presence events, and
//! sanitize-pass planning driven by occupancy thresholds.
//!
//! All entry points are pure functions over snapshots (plus an explicit
//! cooldown map the caller owns), so callers may invoke them concurrently;
//! the occupancy state machine is owned by one logical updater per
//! facility.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Facility zones, in sanitize-pass order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Zone {
    #[serde(rename = "IZ")]
    Isolation,
    #[serde(rename = "LZ")]
    Living,
    #[serde(rename = "SZ")]
    Staff,
}

impl Zone {
    pub const ALL: [Zone; 3] = [Zone::Isolation, Zone::Living, Zone::Staff];

    pub fn name(&self) -> &'static str {
        match self {
            Zone::Isolation => "IZ",
            Zone::Living => "LZ",
            Zone::Staff => "SZ",
        }
    }
}

/// One entity's position in a snapshot, in feet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityPosition {
    pub entity_id: String,
    pub x: f64,
    pub y: f64,
    pub ts: u64,
}

/// Distancing rule: alert when two entities are strictly closer than
/// `threshold_ft`, at most once per pair per `cooldown_ms` of simulated
/// time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistancePolicy {
    #[serde(default = "default_threshold_ft")]
    pub threshold_ft: f64,
    #[serde(default = "default_cooldown_ms")]
    pub cooldown_ms: u64,
}

pub const DEFAULT_THRESHOLD_FT: f64 = 6.0;
pub const DEFAULT_PAIR_COOLDOWN_MS: u64 = 60_000;

fn default_threshold_ft() -> f64 {
    DEFAULT_THRESHOLD_FT
}

fn default_cooldown_ms() -> u64 {
    DEFAULT_PAIR_COOLDOWN_MS
}

impl Default for DistancePolicy {
    fn default() -> Self {
        DistancePolicy {
            threshold_ft: DEFAULT_THRESHOLD_FT,
            cooldown_ms: DEFAULT_PAIR_COOLDOWN_MS,
        }
    }
}

impl DistancePolicy {
    pub fn validate(&self) -> Result<(), SpatialError> {
        if !(self.threshold_ft > 0.0) || !self.threshold_ft.is_finite() {
            return Err(SpatialError::InvalidPolicy(format!(
                "threshold_ft must be a positive finite number, got {}",
                self.threshold_ft
            )));
        }
        Ok(())
    }
}

/// A too-close pair. `entity_a` < `entity_b` lexicographically so the
/// pair key is canonical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairAlert {
    pub entity_a: String,
    pub entity_b: String,
    pub distance_ft: f64,
    pub ts: u64,
}

/// Last-alert timestamps per canonical pair; the caller threads this
/// between snapshots to enforce the cooldown.
pub type PairHistory = BTreeMap<(String, String), u64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpatialError {
    #[error("duplicate entity {0} in snapshot")]
    DuplicateEntity(String),
    #[error("snapshot mixes timestamps: {first} and {other}")]
    MixedTimestamps { first: u64, other: u64 },
    #[error("non-finite coordinate for entity {0}")]
    NonFinite(String),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
}

/// Evaluate one position snapshot: one alert per unordered pair whose
/// Euclidean distance is strictly below the threshold and whose cooldown
/// has elapsed. Fired pairs are recorded in `history`.
pub fn distancing_alerts(
    positions: &[EntityPosition],
    policy: &DistancePolicy,
    history: &mut PairHistory,
) -> Result<Vec<PairAlert>, SpatialError> {
    policy.validate()?;
    let mut seen = BTreeSet::new();
    for p in positions {
        if !p.x.is_finite() || !p.y.is_finite() {
            return Err(SpatialError::NonFinite(p.entity_id.clone()));
        }
        if !seen.insert(p.entity_id.as_str()) {
            return Err(SpatialError::DuplicateEntity(p.entity_id.clone()));
        }
        if p.ts != positions[0].ts {
            return Err(SpatialError::MixedTimestamps {
                first: positions[0].ts,
                other: p.ts,
            });
        }
    }

    // Canonical order makes the output independent of input order.
    let mut sorted: Vec<&EntityPosition> = positions.iter().collect();
    sorted.sort_by(|a, b| a.entity_id.cmp(&b.entity_id));

    let mut alerts = Vec::new();
    for (i, a) in sorted.iter().enumerate() {
        for b in &sorted[i + 1..] {
            let delta = ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt();
            if delta >= policy.threshold_ft {
                continue;
            }
            let key = (a.entity_id.clone(), b.entity_id.clone());
            let elapsed = history
                .get(&key)
                .is_none_or(|last| a.ts.checked_sub(*last).is_some_and(|gap| gap >= policy.cooldown_ms));
            if elapsed {
                history.insert(key, a.ts);
                alerts.push(PairAlert {
                    entity_a: a.entity_id.clone(),
                    entity_b: b.entity_id.clone(),
                    distance_ft: delta,
                    ts: a.ts,
                });
            }
        }
    }
    Ok(alerts)
}

/// Per-zone headcounts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZoneCounts {
    #[serde(rename = "number_IZ")]
    pub number_iz: u32,
    #[serde(rename = "number_LZ")]
    pub number_lz: u32,
    #[serde(rename = "number_SZ")]
    pub number_sz: u32,
}

impl ZoneCounts {
    pub fn get(&self, zone: Zone) -> u32 {
        match zone {
            Zone::Isolation => self.number_iz,
            Zone::Living => self.number_lz,
            Zone::Staff => self.number_sz,
        }
    }
}

/// Occupancy thresholds: `max_threshold_1` gates the isolation zone,
/// `max_threshold_2` gates the living and staff zones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZoneThresholds {
    #[serde(default = "default_threshold_1")]
    pub max_threshold_1: u32,
    #[serde(default = "default_threshold_2")]
    pub max_threshold_2: u32,
}

pub const DEFAULT_MAX_THRESHOLD_1: u32 = 1;
pub const DEFAULT_MAX_THRESHOLD_2: u32 = 3;

fn default_threshold_1() -> u32 {
    DEFAULT_MAX_THRESHOLD_1
}

fn default_threshold_2() -> u32 {
    DEFAULT_MAX_THRESHOLD_2
}

impl Default for ZoneThresholds {
    fn default() -> Self {
        ZoneThresholds {
            max_threshold_1: DEFAULT_MAX_THRESHOLD_1,
            max_threshold_2: DEFAULT_MAX_THRESHOLD_2,
        }
    }
}

impl ZoneThresholds {
    pub fn validate(&self) -> Result<(), SpatialError> {
        if self.max_threshold_1 == 0 || self.max_threshold_2 == 0 {
            return Err(SpatialError::InvalidPolicy(
                "zone thresholds must be ≥ 1".into(),
            ));
        }
        Ok(())
    }
}

/// Counts plus the thresholds they are judged against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZoneOccupancy {
    pub counts: ZoneCounts,
    pub thresholds: ZoneThresholds,
}

/// Enter/exit of one entity for one zone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresenceEvent {
    pub entity_id: String,
    pub zone: Zone,
    pub kind: PresenceKind,
    pub ts: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PresenceKind {
    Enter,
    Exit,
}

/// Tracks which distinct entities are currently inside each zone.
/// Exit-without-enter is a sensor fault: counted, and the zone count
/// stays clamped at zero rather than going negative.
#[derive(Debug, Clone, Default)]
pub struct OccupancyTracker {
    present: BTreeMap<Zone, BTreeSet<String>>,
    faults: u64,
}

impl OccupancyTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn apply(&mut self, event: &PresenceEvent) {
        let zone = self.present.entry(event.zone).or_default();
        match event.kind {
            PresenceKind::Enter => {
                zone.insert(event.entity_id.clone());
            }
            PresenceKind::Exit => {
                if !zone.remove(&event.entity_id) {
                    self.faults += 1;
                }
            }
        }
    }

    pub fn counts(&self) -> ZoneCounts {
        let count = |zone| {
            self.present
                .get(&zone)
                .map_or(0, |set| set.len() as u32)
        };
        ZoneCounts {
            number_iz: count(Zone::Isolation),
            number_lz: count(Zone::Living),
            number_sz: count(Zone::Staff),
        }
    }

    /// Sensor faults seen so far (exits for entities not present).
    pub fn faults(&self) -> u64 {
        self.faults
    }
}

/// Replay a whole event stream from empty; returns final counts and the
/// fault count.
pub fn count_person(events: &[PresenceEvent]) -> (ZoneCounts, u64) {
    let mut tracker = OccupancyTracker::new();
    for event in events {
        tracker.apply(event);
    }
    (tracker.counts(), tracker.faults())
}

/// Zones to sanitize in one device pass, in traversal order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SanitizePlan {
    pub zones: Vec<Zone>,
}

impl SanitizePlan {
    pub fn is_empty(&self) -> bool {
        self.zones.is_empty()
    }
}

/// Decide which zones need sanitizing: the isolation zone whenever its
/// count reaches `max_threshold_1`, and each of the living and staff
/// zones whenever its own count reaches `max_threshold_2`. Qualifying
/// zones are visited in the fixed order IZ, LZ, SZ.
pub fn plan_sanitize(occ: &ZoneOccupancy) -> SanitizePlan {
    let mut zones = Vec::new();
    if occ.counts.number_iz >= occ.thresholds.max_threshold_1 {
        zones.push(Zone::Isolation);
    }
    if occ.counts.number_lz >= occ.thresholds.max_threshold_2 {
        zones.push(Zone::Living);
    }
    if occ.counts.number_sz >= occ.thresholds.max_threshold_2 {
        zones.push(Zone::Staff);
    }
    SanitizePlan { zones }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn at(id: &str, x: f64, y: f64) -> EntityPosition {
        EntityPosition {
            entity_id: id.to_string(),
            x,
            y,
            ts: 1_000,
        }
    }

    fn pairs(alerts: &[PairAlert]) -> BTreeSet<(String, String)> {
        alerts
            .iter()
            .map(|a| (a.entity_a.clone(), a.entity_b.clone()))
            .collect()
    }

    /// Brute-force O(n²) pair scan, written without the canonical-sort
    /// shortcut the implementation uses.
    fn oracle_pairs(
        positions: &[EntityPosition],
        threshold: f64,
    ) -> BTreeSet<(String, String)> {
        let mut out = BTreeSet::new();
        for a in positions {
            for b in positions {
                if a.entity_id >= b.entity_id {
                    continue;
                }
                let dx = a.x - b.x;
                let dy = a.y - b.y;
                if (dx * dx + dy * dy).sqrt() < threshold {
                    out.insert((a.entity_id.clone(), b.entity_id.clone()));
                }
            }
        }
        out
    }

    #[test]
    fn five_feet_alerts_seven_feet_does_not() {
        let policy = DistancePolicy::default();
        let mut history = PairHistory::new();
        let close = distancing_alerts(&[at("a", 0.0, 0.0), at("b", 0.0, 5.0)], &policy, &mut history)
            .unwrap();
        assert_eq!(close.len(), 1);
        assert_eq!(close[0].entity_a, "a");
        assert_eq!(close[0].entity_b, "b");
        assert!((close[0].distance_ft - 5.0).abs() < 1e-12);
        assert_eq!(close[0].ts, 1_000);

        let mut history = PairHistory::new();
        let far = distancing_alerts(&[at("a", 0.0, 0.0), at("b", 0.0, 7.0)], &policy, &mut history)
            .unwrap();
        assert!(far.is_empty());
    }

    #[test]
    fn exact_threshold_distance_is_not_an_alert() {
        let policy = DistancePolicy::default();
        let mut history = PairHistory::new();
        let alerts =
            distancing_alerts(&[at("a", 0.0, 0.0), at("b", 6.0, 0.0)], &policy, &mut history)
                .unwrap();
        assert!(alerts.is_empty(), "comparator must be strict");
        let alerts = distancing_alerts(
            &[at("a", 0.0, 0.0), at("b", 6.0 - 1e-9, 0.0)],
            &policy,
            &mut history,
        )
        .unwrap();
        assert_eq!(alerts.len(), 1);
    }

    #[test]
    fn single_entity_and_empty_snapshots_yield_nothing() {
        let policy = DistancePolicy::default();
        let mut history = PairHistory::new();
        assert!(distancing_alerts(&[at("a", 1.0, 1.0)], &policy, &mut history)
            .unwrap()
            .is_empty());
        assert!(distancing_alerts(&[], &policy, &mut history).unwrap().is_empty());
    }

    #[test]
    fn duplicate_entity_is_an_error() {
        let policy = DistancePolicy::default();
        let mut history = PairHistory::new();
        let result =
            distancing_alerts(&[at("a", 0.0, 0.0), at("a", 1.0, 1.0)], &policy, &mut history);
        assert_eq!(result, Err(SpatialError::DuplicateEntity("a".into())));
    }

    #[test]
    fn mixed_timestamps_are_an_error() {
        let policy = DistancePolicy::default();
        let mut history = PairHistory::new();
        let mut second = at("b", 0.0, 1.0);
        second.ts = 2_000;
        let result = distancing_alerts(&[at("a", 0.0, 0.0), second], &policy, &mut history);
        assert_eq!(
            result,
            Err(SpatialError::MixedTimestamps {
                first: 1_000,
                other: 2_000
            })
        );
    }

    #[test]
    fn cooldown_suppresses_then_reopens_at_exact_edge() {
        let policy = DistancePolicy::default();
        let mut history = PairHistory::new();
        let snapshot = |ts: u64| {
            vec![
                EntityPosition { entity_id: "a".into(), x: 0.0, y: 0.0, ts },
                EntityPosition { entity_id: "b".into(), x: 3.0, y: 0.0, ts },
            ]
        };
        assert_eq!(
            distancing_alerts(&snapshot(0), &policy, &mut history).unwrap().len(),
            1
        );
        assert!(
            distancing_alerts(&snapshot(59_999), &policy, &mut history)
                .unwrap()
                .is_empty(),
            "one tick short of the cooldown must stay quiet"
        );
        assert_eq!(
            distancing_alerts(&snapshot(60_000), &policy, &mut history)
                .unwrap()
                .len(),
            1,
            "cooldown reopens at exactly cooldown_ms"
        );
    }

    #[test]
    fn cooldown_is_tracked_per_pair() {
        let policy = DistancePolicy::default();
        let mut history = PairHistory::new();
        let first = distancing_alerts(
            &[at("a", 0.0, 0.0), at("b", 1.0, 0.0)],
            &policy,
            &mut history,
        )
        .unwrap();
        assert_eq!(first.len(), 1);
        // A different pair at the same ts is not silenced by a/b's entry.
        let mut other = vec![at("c", 50.0, 0.0), at("d", 51.0, 0.0)];
        for p in &mut other {
            p.ts = 1_000;
        }
        let second = distancing_alerts(&other, &policy, &mut history).unwrap();
        assert_eq!(second.len(), 1);
    }

    #[test]
    fn random_snapshots_match_brute_force_oracle() {
        let policy = DistancePolicy::default();
        let mut rng = ChaCha8Rng::seed_from_u64(6_2020);
        for _ in 0..100 {
            let n = rng.gen_range(0..=64);
            let positions: Vec<EntityPosition> = (0..n)
                .map(|i| EntityPosition {
                    entity_id: format!("e{i:02}"),
                    x: rng.gen_range(-30.0..30.0),
                    y: rng.gen_range(-30.0..30.0),
                    ts: 5_000,
                })
                .collect();
            let mut history = PairHistory::new();
            let alerts = distancing_alerts(&positions, &policy, &mut history).unwrap();
            assert_eq!(pairs(&alerts), oracle_pairs(&positions, policy.threshold_ft));
        }
    }

    #[test]
    fn no_events_means_empty_zones() {
        let (counts, faults) = count_person(&[]);
        assert_eq!(counts, ZoneCounts::default());
        assert_eq!(faults, 0);
    }

    #[test]
    fn enters_minus_exits_per_zone() {
        let events = vec![
            PresenceEvent { entity_id: "p1".into(), zone: Zone::Isolation, kind: PresenceKind::Enter, ts: 0 },
            PresenceEvent { entity_id: "p2".into(), zone: Zone::Isolation, kind: PresenceKind::Enter, ts: 1 },
            PresenceEvent { entity_id: "p1".into(), zone: Zone::Isolation, kind: PresenceKind::Exit, ts: 2 },
        ];
        let (counts, faults) = count_person(&events);
        assert_eq!(counts.number_iz, 1);
        assert_eq!(counts.number_lz, 0);
        assert_eq!(counts.number_sz, 0);
        assert_eq!(faults, 0);
    }

    #[test]
    fn exit_without_enter_is_clamped_and_fault_counted() {
        let events = vec![
            PresenceEvent { entity_id: "p1".into(), zone: Zone::Living, kind: PresenceKind::Exit, ts: 0 },
            PresenceEvent { entity_id: "p2".into(), zone: Zone::Living, kind: PresenceKind::Enter, ts: 1 },
        ];
        let (counts, faults) = count_person(&events);
        assert_eq!(counts.number_lz, 1, "count never goes negative");
        assert_eq!(faults, 1);
    }

    #[test]
    fn repeated_enter_is_idempotent_per_entity() {
        let events = vec![
            PresenceEvent { entity_id: "p1".into(), zone: Zone::Staff, kind: PresenceKind::Enter, ts: 0 },
            PresenceEvent { entity_id: "p1".into(), zone: Zone::Staff, kind: PresenceKind::Enter, ts: 1 },
        ];
        let (counts, _) = count_person(&events);
        assert_eq!(counts.number_sz, 1, "counts are distinct entities, not events");
    }

    #[test]
    fn occupancy_pins() {
        let occ = |iz, lz, sz, t1, t2| ZoneOccupancy {
            counts: ZoneCounts { number_iz: iz, number_lz: lz, number_sz: sz },
            thresholds: ZoneThresholds { max_threshold_1: t1, max_threshold_2: t2 },
        };
        assert_eq!(plan_sanitize(&occ(1, 0, 0, 1, 2)).zones, vec![Zone::Isolation]);
        assert_eq!(plan_sanitize(&occ(0, 2, 1, 1, 2)).zones, vec![Zone::Living]);
        assert_eq!(plan_sanitize(&occ(0, 0, 0, 1, 2)).zones, Vec::<Zone>::new());
        assert_eq!(
            plan_sanitize(&occ(3, 3, 3, 1, 3)).zones,
            vec![Zone::Isolation, Zone::Living, Zone::Staff]
        );
    }

    /// Literal transcription of the zone-threshold comparison chain,
    /// with each zone judged independently.
    fn plan_oracle(iz: u32, lz: u32, sz: u32, t1: u32, t2: u32) -> Vec<Zone> {
        let mut plan = Vec::new();
        if iz >= t1 {
            plan.push(Zone::Isolation);
        }
        if lz >= t2 {
            plan.push(Zone::Living);
        }
        if sz >= t2 {
            plan.push(Zone::Staff);
        }
        plan
    }

    #[test]
    fn exhaustive_plans_match_transcription_oracle() {
        for iz in 0..=5 {
            for lz in 0..=5 {
                for sz in 0..=5 {
                    for t1 in 1..=3 {
                        for t2 in 1..=3 {
                            let occ = ZoneOccupancy {
                                counts: ZoneCounts { number_iz: iz, number_lz: lz, number_sz: sz },
                                thresholds: ZoneThresholds { max_threshold_1: t1, max_threshold_2: t2 },
                            };
                            let plan = plan_sanitize(&occ);
                            assert_eq!(plan.zones, plan_oracle(iz, lz, sz, t1, t2));
                            // Structural invariants: no repeats, IZ first when present.
                            let unique: BTreeSet<_> = plan.zones.iter().collect();
                            assert_eq!(unique.len(), plan.zones.len());
                            if plan.zones.contains(&Zone::Isolation) {
                                assert_eq!(plan.zones[0], Zone::Isolation);
                            }
                        }
                    }
                }
            }
        }
    }

    proptest! {
        #[test]
        fn alert_pairs_are_input_order_invariant(
            coords in proptest::collection::vec((0i32..40, 0i32..40), 0..20),
            seed in 0u64..1000,
        ) {
            let positions: Vec<EntityPosition> = coords
                .iter()
                .enumerate()
                .map(|(i, (x, y))| EntityPosition {
                    entity_id: format!("e{i:02}"),
                    x: f64::from(*x),
                    y: f64::from(*y),
                    ts: 9,
                })
                .collect();
            let policy = DistancePolicy::default();
            let mut h1 = PairHistory::new();
            let forward = distancing_alerts(&positions, &policy, &mut h1).unwrap();

            let mut shuffled = positions.clone();
            use rand::seq::SliceRandom;
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let mut h2 = PairHistory::new();
            let reordered = distancing_alerts(&shuffled, &policy, &mut h2).unwrap();

            prop_assert_eq!(pairs(&forward), pairs(&reordered));
        }

        #[test]
        fn alert_pairs_survive_rigid_motion(
            coords in proptest::collection::vec((0i32..40, 0i32..40), 0..16),
            angle_deg in 0u32..360,
            dx in -100i32..100,
            dy in -100i32..100,
        ) {
            let positions: Vec<EntityPosition> = coords
                .iter()
                .enumerate()
                .map(|(i, (x, y))| EntityPosition {
                    entity_id: format!("e{i:02}"),
                    x: f64::from(*x),
                    y: f64::from(*y),
                    ts: 9,
                })
                .collect();
            // Integer coordinates keep every pair distance at least ~0.08 ft
            // away from the 6 ft threshold unless the squared distance is
            // exactly 36 — skip those, since rotation round-off could flip
            // the strict comparison for them.
            let boundary = positions.iter().enumerate().any(|(i, a)| {
                positions[i + 1..].iter().any(|b| {
                    let d2 = (a.x - b.x).powi(2) + (a.y - b.y).powi(2);
                    (d2 - 36.0).abs() < 0.5
                })
            });
            prop_assume!(!boundary);

            let policy = DistancePolicy::default();
            let mut h1 = PairHistory::new();
            let original = distancing_alerts(&positions, &policy, &mut h1).unwrap();

            let theta = f64::from(angle_deg).to_radians();
            let (sin, cos) = theta.sin_cos();
            let moved: Vec<EntityPosition> = positions
                .iter()
                .map(|p| EntityPosition {
                    entity_id: p.entity_id.clone(),
                    x: p.x * cos - p.y * sin + f64::from(dx),
                    y: p.x * sin + p.y * cos + f64::from(dy),
                    ts: p.ts,
                })
                .collect();
            let mut h2 = PairHistory::new();
            let transformed = distancing_alerts(&moved, &policy, &mut h2).unwrap();

            prop_assert_eq!(pairs(&original), pairs(&transformed));
        }

        #[test]
        fn raising_distance_threshold_never_removes_alerts(
            coords in proptest::collection::vec((0i32..40, 0i32..40), 0..16),
            threshold in 1.0f64..10.0,
            extra in 0.1f64..5.0,
        ) {
            let positions: Vec<EntityPosition> = coords
                .iter()
                .enumerate()
                .map(|(i, (x, y))| EntityPosition {
                    entity_id: format!("e{i:02}"),
                    x: f64::from(*x),
                    y: f64::from(*y),
                    ts: 9,
                })
                .collect();
            let narrow = DistancePolicy { threshold_ft: threshold, cooldown_ms: 0 };
            let wide = DistancePolicy { threshold_ft: threshold + extra, cooldown_ms: 0 };
            let mut h1 = PairHistory::new();
            let mut h2 = PairHistory::new();
            let small = pairs(&distancing_alerts(&positions, &narrow, &mut h1).unwrap());
            let large = pairs(&distancing_alerts(&positions, &wide, &mut h2).unwrap());
            prop_assert!(small.is_subset(&large));
        }

        #[test]
        fn raising_iz_threshold_never_adds_iz(
            iz in 0u32..10, lz in 0u32..10, sz in 0u32..10,
            t1 in 1u32..6, bump in 1u32..4, t2 in 1u32..6,
        ) {
            let base = plan_sanitize(&ZoneOccupancy {
                counts: ZoneCounts { number_iz: iz, number_lz: lz, number_sz: sz },
                thresholds: ZoneThresholds { max_threshold_1: t1, max_threshold_2: t2 },
            });
            let raised = plan_sanitize(&ZoneOccupancy {
                counts: ZoneCounts { number_iz: iz, number_lz: lz, number_sz: sz },
                thresholds: ZoneThresholds { max_threshold_1: t1 + bump, max_threshold_2: t2 },
            });
            if raised.zones.contains(&Zone::Isolation) {
                prop_assert!(base.zones.contains(&Zone::Isolation));
            }
        }

        #[test]
        fn occupancy_matches_per_entity_state_machine(
            script in proptest::collection::vec(
                (0usize..6, 0usize..3, proptest::bool::ANY), 0..60
            ),
        ) {
            let events: Vec<PresenceEvent> = script
                .iter()
                .enumerate()
                .map(|(i, (who, zone, enter))| PresenceEvent {
                    entity_id: format!("p{who}"),
                    zone: Zone::ALL[*zone],
                    kind: if *enter { PresenceKind::Enter } else { PresenceKind::Exit },
                    ts: i as u64,
                })
                .collect();

            // Oracle: replay a boolean presence flag per (entity, zone).
            let mut inside: BTreeMap<(String, Zone), bool> = BTreeMap::new();
            let mut faults = 0u64;
            for e in &events {
                let slot = inside.entry((e.entity_id.clone(), e.zone)).or_insert(false);
                match e.kind {
                    PresenceKind::Enter => *slot = true,
                    PresenceKind::Exit => {
                        if *slot {
                            *slot = false;
                        } else {
                            faults += 1;
                        }
                    }
                }
            }
            let expect = |z: Zone| {
                inside.iter().filter(|((_, zone), in_z)| *zone == z && **in_z).count() as u32
            };

            let (counts, got_faults) = count_person(&events);
            prop_assert_eq!(counts.number_iz, expect(Zone::Isolation));
            prop_assert_eq!(counts.number_lz, expect(Zone::Living));
            prop_assert_eq!(counts.number_sz, expect(Zone::Staff));
            prop_assert_eq!(got_faults, faults);
        }
    }
}
