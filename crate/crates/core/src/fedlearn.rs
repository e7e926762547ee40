//! Federated training of a logistic-regression model across edge workers.
//!
//! Each worker runs minibatch SGD on its private local dataset and uploads
//! only the accumulated weight delta; a parameter server folds deltas into
//! the global model additively and redistributes snapshots. Updates whose
//! base version lags the server by more than the staleness limit are
//! dropped and counted. Everything is deterministic given the seed: each
//! worker draws its minibatch shuffles from its own stream of a seeded
//! generator.
//!
//! The model is a single logistic layer: `weights` has length `d + 1`
//! with the bias last. Loss is mean cross-entropy, computed in the
//! numerically-stable logit form; gradients are minibatch means.

use std::collections::BTreeSet;
use std::io::{self, Write};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Weights plus a version counter. `weights[d]` is the bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub weights: Vec<f64>,
    pub version: u64,
}

impl ModelState {
    /// Fresh model of feature dimension `d`: zero weights, version 0.
    /// Zero init makes single-worker runs reproduce centralized SGD
    /// exactly.
    pub fn zeros(d: usize) -> Self {
        ModelState {
            weights: vec![0.0; d + 1],
            version: 0,
        }
    }

    /// Feature dimension (weight length minus the bias slot).
    pub fn dim(&self) -> usize {
        self.weights.len() - 1
    }
}

/// Hyper-parameters for one worker's local pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub learning_rate: f64,
    pub local_epochs: u32,
    pub minibatch_size: usize,
}

impl TrainerConfig {
    pub fn validate(&self, dataset_len: usize) -> Result<(), FedError> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(FedError::InvalidConfig(format!(
                "learning_rate must be a positive finite number, got {}",
                self.learning_rate
            )));
        }
        if self.local_epochs == 0 {
            return Err(FedError::InvalidConfig("local_epochs must be ≥ 1".into()));
        }
        if self.minibatch_size == 0 || self.minibatch_size > dataset_len {
            return Err(FedError::InvalidConfig(format!(
                "minibatch_size must be in 1..={dataset_len}, got {}",
                self.minibatch_size
            )));
        }
        Ok(())
    }
}

/// One labeled sample: feature vector and a binary label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: u8,
}

/// A worker's private dataset. Never leaves the worker: the only thing
/// crossing the boundary is a [`GradientUpdate`].
#[derive(Debug, Clone, PartialEq)]
pub struct LocalDataset {
    samples: Vec<Sample>,
    d: usize,
}

impl LocalDataset {
    pub fn new(samples: Vec<Sample>) -> Result<Self, FedError> {
        let Some(first) = samples.first() else {
            return Err(FedError::EmptyDataset);
        };
        let d = first.x.len();
        if d == 0 {
            return Err(FedError::InvalidConfig("samples need ≥ 1 feature".into()));
        }
        for (i, s) in samples.iter().enumerate() {
            if s.x.len() != d {
                return Err(FedError::DimensionMismatch {
                    expected: d,
                    got: s.x.len(),
                });
            }
            if s.y > 1 {
                return Err(FedError::InvalidConfig(format!(
                    "sample {i}: label must be 0 or 1, got {}",
                    s.y
                )));
            }
            if s.x.iter().any(|v| !v.is_finite()) {
                return Err(FedError::NonFinite(format!("sample {i} features")));
            }
        }
        Ok(LocalDataset { samples, d })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }
}

/// What a worker uploads: the accumulated delta and routing metadata.
/// Deliberately nothing else — no sample, label, or loss value crosses
/// the worker boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientUpdate {
    pub delta: Vec<f64>,
    pub worker_id: String,
    pub base_version: u64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FedError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value in {0} (learning rate blowup?)")]
    NonFinite(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("journal i/o: {0}")]
    Journal(String),
}

/// σ(z) without overflow for large |z|.
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn logit(weights: &[f64], x: &[f64]) -> f64 {
    let mut z = weights[x.len()];
    for (w, v) in weights[..x.len()].iter().zip(x) {
        z += w * v;
    }
    z
}

/// Cross-entropy of one sample in the stable logit form:
/// `max(z,0) − z·y + ln(1 + e^(−|z|))`.
pub fn sample_loss(weights: &[f64], sample: &Sample) -> f64 {
    let z = logit(weights, &sample.x);
    z.max(0.0) - z * f64::from(sample.y) + (-z.abs()).exp().ln_1p()
}

/// ∂E/∂w for one sample: `(σ(z) − y) · [x, 1]`.
pub fn sample_grad(weights: &[f64], sample: &Sample) -> Vec<f64> {
    let z = logit(weights, &sample.x);
    let residual = sigmoid(z) - f64::from(sample.y);
    let mut grad = Vec::with_capacity(sample.x.len() + 1);
    grad.extend(sample.x.iter().map(|v| residual * v));
    grad.push(residual);
    grad
}

/// Mean cross-entropy over a dataset.
pub fn mean_loss(weights: &[f64], data: &LocalDataset) -> f64 {
    let total: f64 = data.samples().iter().map(|s| sample_loss(weights, s)).sum();
    total / data.len() as f64
}

/// Fraction of samples classified correctly at threshold 0.5.
pub fn accuracy(weights: &[f64], data: &LocalDataset) -> f64 {
    let correct = data
        .samples()
        .iter()
        .filter(|s| (logit(weights, &s.x) >= 0.0) == (s.y == 1))
        .count();
    correct as f64 / data.len() as f64
}

/// One local pass: `H` epochs of minibatch SGD accumulated into a delta,
/// leaving `w_start` untouched. Each epoch shuffles the dataset with the
/// caller's generator and partitions it into batches of `minibatch_size`
/// (the last batch may be smaller, so every sample is visited exactly
/// once per epoch). Each batch's mean gradient is taken at the current
/// effective weights `w_start + Δw`, and `Δw ← Δw − α·grad`.
pub fn local_train(
    w_start: &ModelState,
    data: &LocalDataset,
    cfg: &TrainerConfig,
    worker_id: &str,
    rng: &mut impl Rng,
) -> Result<GradientUpdate, FedError> {
    if w_start.dim() != data.dim() {
        return Err(FedError::DimensionMismatch {
            expected: w_start.dim(),
            got: data.dim(),
        });
    }
    cfg.validate(data.len())?;

    let n = w_start.weights.len();
    let mut delta = vec![0.0; n];
    let mut effective = w_start.weights.clone();
    let mut order: Vec<usize> = (0..data.len()).collect();

    for _ in 0..cfg.local_epochs {
        order.shuffle(rng);
        for batch in order.chunks(cfg.minibatch_size) {
            let mut grad = vec![0.0; n];
            for &idx in batch {
                let g = sample_grad(&effective, &data.samples()[idx]);
                for (acc, gi) in grad.iter_mut().zip(&g) {
                    *acc += gi;
                }
            }
            let scale = cfg.learning_rate / batch.len() as f64;
            for i in 0..n {
                delta[i] -= scale * grad[i];
                effective[i] = w_start.weights[i] + delta[i];
            }
            if delta.iter().any(|v| !v.is_finite()) {
                return Err(FedError::NonFinite("accumulated delta".into()));
            }
        }
    }

    Ok(GradientUpdate {
        delta,
        worker_id: worker_id.to_string(),
        base_version: w_start.version,
    })
}

/// Fold one update into a model: if the update's base version is within
/// `staleness_limit` of the server version, add the delta and bump the
/// version; otherwise return the model unchanged with `accepted = false`.
pub fn aggregate(
    server: &ModelState,
    u: &GradientUpdate,
    staleness_limit: u64,
) -> Result<(ModelState, bool), FedError> {
    if u.delta.len() != server.weights.len() {
        return Err(FedError::DimensionMismatch {
            expected: server.weights.len(),
            got: u.delta.len(),
        });
    }
    if u.delta.iter().any(|v| !v.is_finite()) {
        return Err(FedError::NonFinite(format!("delta from {}", u.worker_id)));
    }
    let gap = server.version.saturating_sub(u.base_version);
    if gap > staleness_limit {
        return Ok((server.clone(), false));
    }
    let mut next = server.clone();
    for (w, d) in next.weights.iter_mut().zip(&u.delta) {
        *w += d;
    }
    next.version += 1;
    Ok((next, true))
}

/// One line of the model journal: the audit trail of every submitted
/// update. `version` is the server version after handling the update
/// (unchanged when rejected); `delta_norm` is the delta's L2 norm — the
/// delta itself is not journaled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub version: u64,
    pub worker_id: String,
    pub base_version: u64,
    pub accepted: bool,
    pub delta_norm: f64,
}

struct ServerInner {
    model: ModelState,
    stale_dropped: u64,
    records: Vec<UpdateRecord>,
}

/// The parameter server: serializes aggregation, hands out snapshot
/// copies, and keeps the update journal. Snapshots are taken under the
/// same lock as aggregation, so a download is always some version's
/// complete weight vector, never a torn mix.
pub struct ParameterServer {
    staleness_limit: u64,
    inner: Mutex<ServerInner>,
}

impl ParameterServer {
    pub fn new(d: usize, staleness_limit: u64) -> Self {
        ParameterServer {
            staleness_limit,
            inner: Mutex::new(ServerInner {
                model: ModelState::zeros(d),
                stale_dropped: 0,
                records: Vec::new(),
            }),
        }
    }

    pub fn staleness_limit(&self) -> u64 {
        self.staleness_limit
    }

    /// Snapshot copy of the current model.
    pub fn download(&self) -> ModelState {
        self.lock().model.clone()
    }

    /// Apply one update; returns whether it was accepted or dropped as
    /// stale.
    pub fn submit(&self, u: &GradientUpdate) -> Result<bool, FedError> {
        let mut inner = self.lock();
        let (next, accepted) = aggregate(&inner.model, u, self.staleness_limit)?;
        inner.model = next;
        if !accepted {
            inner.stale_dropped += 1;
        }
        let delta_norm = u.delta.iter().map(|v| v * v).sum::<f64>().sqrt();
        let version = inner.model.version;
        inner.records.push(UpdateRecord {
            version,
            worker_id: u.worker_id.clone(),
            base_version: u.base_version,
            accepted,
            delta_norm,
        });
        Ok(accepted)
    }

    pub fn stale_dropped(&self) -> u64 {
        self.lock().stale_dropped
    }

    pub fn records(&self) -> Vec<UpdateRecord> {
        self.lock().records.clone()
    }

    /// Write the journal as JSON lines.
    pub fn write_journal(&self, mut w: impl Write) -> io::Result<()> {
        for record in self.lock().records.iter() {
            let mut line = serde_json::to_vec(record).expect("record serializes");
            line.push(b'\n');
            w.write_all(&line)?;
        }
        Ok(())
    }

    /// Final model document: `{d, weights, version}`.
    pub fn export_model(&self) -> serde_json::Value {
        let model = self.download();
        serde_json::json!({
            "d": model.dim(),
            "weights": model.weights,
            "version": model.version,
        })
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, ServerInner> {
        self.inner.lock().expect("parameter server lock poisoned")
    }
}

/// One participant in a training run.
#[derive(Debug, Clone)]
pub struct Worker {
    pub worker_id: String,
    pub data: LocalDataset,
}

/// Loss and accuracy over the union of worker datasets after each round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: u32,
    pub version: u64,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub model: ModelState,
    pub trace: Vec<RoundMetrics>,
}

/// Drive `rounds` rounds of download → local_train → submit, workers in
/// schedule order within each round. Worker `i` draws shuffles from
/// stream `i` of a generator seeded with `seed`, so the whole run is a
/// pure function of (workers, cfg, rounds, seed).
pub fn run_round_robin(
    server: &ParameterServer,
    workers: &[Worker],
    cfg: &TrainerConfig,
    rounds: u32,
    seed: u64,
) -> Result<TrainingRun, FedError> {
    if workers.is_empty() {
        return Err(FedError::InvalidConfig("need at least one worker".into()));
    }
    let ids: BTreeSet<&str> = workers.iter().map(|w| w.worker_id.as_str()).collect();
    if ids.len() != workers.len() {
        return Err(FedError::InvalidConfig("duplicate worker ids".into()));
    }
    let d = workers[0].data.dim();
    for worker in workers {
        if worker.data.dim() != d {
            return Err(FedError::DimensionMismatch {
                expected: d,
                got: worker.data.dim(),
            });
        }
        cfg.validate(worker.data.len())?;
    }

    let union = LocalDataset::new(
        workers
            .iter()
            .flat_map(|w| w.data.samples().iter().cloned())
            .collect(),
    )?;

    let mut rngs: Vec<ChaCha8Rng> = (0..workers.len())
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            rng
        })
        .collect();

    let mut trace = Vec::with_capacity(rounds as usize);
    for round in 0..rounds {
        for (worker, rng) in workers.iter().zip(rngs.iter_mut()) {
            let snapshot = server.download();
            let update = local_train(&snapshot, &worker.data, cfg, &worker.worker_id, rng)?;
            server.submit(&update)?;
        }
        let model = server.download();
        trace.push(RoundMetrics {
            round,
            version: model.version,
            loss: mean_loss(&model.weights, &union),
            accuracy: accuracy(&model.weights, &union),
        });
    }

    Ok(TrainingRun {
        model: server.download(),
        trace,
    })
}

/// Synthetic health-like dataset: two Gaussian blobs in the plane with
/// means −(offset, offset) for label 0 and +(offset, offset) for label 1,
/// both with standard deviation `sigma`. Labels alternate so any prefix
/// is nearly balanced.
pub fn two_gaussian_dataset(
    n: usize,
    offset: f64,
    sigma: f64,
    rng: &mut impl Rng,
) -> LocalDataset {
    let noise = Normal::new(0.0, sigma).expect("sigma > 0");
    let samples = (0..n)
        .map(|i| {
            let y = (i % 2) as u8;
            let center = if y == 1 { offset } else { -offset };
            Sample {
                x: vec![center + noise.sample(rng), center + noise.sample(rng)],
                y,
            }
        })
        .collect();
    LocalDataset::new(samples).expect("generator output is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn tiny_dataset() -> LocalDataset {
        LocalDataset::new(vec![
            Sample { x: vec![1.0, 2.0], y: 1 },
            Sample { x: vec![-1.0, 0.5], y: 0 },
            Sample { x: vec![0.3, -2.0], y: 0 },
            Sample { x: vec![2.0, 1.0], y: 1 },
        ])
        .unwrap()
    }

    fn cfg(alpha: f64, epochs: u32, batch: usize) -> TrainerConfig {
        TrainerConfig {
            learning_rate: alpha,
            local_epochs: epochs,
            minibatch_size: batch,
        }
    }

    #[test]
    fn zero_learning_rate_is_rejected_and_tiny_rate_moves_nothing_much() {
        let data = tiny_dataset();
        // α must be strictly positive…
        assert!(matches!(
            local_train(&ModelState::zeros(2), &data, &cfg(0.0, 1, 2), "w0", &mut rng(1)),
            Err(FedError::InvalidConfig(_))
        ));
        // …so the α→0 limit is checked algebraically: the delta is exactly
        // proportional to α (same shuffles), hence α=0 would give Δw = 0.
        let a = local_train(&ModelState::zeros(2), &data, &cfg(1e-9, 1, 2), "w0", &mut rng(7))
            .unwrap();
        let b = local_train(&ModelState::zeros(2), &data, &cfg(2e-9, 1, 2), "w0", &mut rng(7))
            .unwrap();
        for (da, db) in a.delta.iter().zip(&b.delta) {
            // With α this small the trajectory is linear in α: halving α
            // halves the delta to double precision.
            assert!((2.0 * da - db).abs() <= 1e-18, "{da} vs {db}");
        }
    }

    #[test]
    fn stationary_point_yields_exactly_zero_delta() {
        // Label-balanced duplicates: at w = 0, σ(0) = ½ makes the residuals
        // cancel pairwise inside a full batch, so every gradient is exactly
        // zero and Δw stays exactly zero.
        let mut samples = Vec::new();
        for _ in 0..4 {
            samples.push(Sample { x: vec![1.0, 2.0], y: 0 });
            samples.push(Sample { x: vec![1.0, 2.0], y: 1 });
        }
        let data = LocalDataset::new(samples).unwrap();
        let update = local_train(
            &ModelState::zeros(2),
            &data,
            &cfg(0.1, 3, data.len()),
            "w0",
            &mut rng(42),
        )
        .unwrap();
        assert_eq!(update.delta, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn w_start_is_not_mutated() {
        let data = tiny_dataset();
        let w = ModelState {
            weights: vec![0.25, -0.5, 0.1],
            version: 7,
        };
        let before = w.clone();
        let update = local_train(&w, &data, &cfg(0.1, 2, 2), "w0", &mut rng(3)).unwrap();
        assert_eq!(w, before);
        assert_eq!(update.base_version, 7);
        assert!(update.delta.iter().any(|v| *v != 0.0));
    }

    #[test]
    fn analytic_gradient_matches_central_differences() {
        let mut r = rng(2024);
        let h = 1e-6;
        for _ in 0..100 {
            let d = r.gen_range(1..6);
            let w: Vec<f64> = (0..=d).map(|_| r.gen_range(-2.0..2.0)).collect();
            let sample = Sample {
                x: (0..d).map(|_| r.gen_range(-3.0..3.0)).collect(),
                y: u8::from(r.gen_bool(0.5)),
            };
            let grad = sample_grad(&w, &sample);
            for i in 0..=d {
                let mut plus = w.clone();
                plus[i] += h;
                let mut minus = w.clone();
                minus[i] -= h;
                let fd = (sample_loss(&plus, &sample) - sample_loss(&minus, &sample)) / (2.0 * h);
                let scale = grad[i].abs().max(fd.abs()).max(1e-8);
                assert!(
                    (grad[i] - fd).abs() / scale < 1e-5,
                    "component {i}: analytic {} vs fd {}",
                    grad[i],
                    fd
                );
            }
        }
    }

    #[test]
    fn dimension_mismatches_are_rejected() {
        let data = tiny_dataset();
        assert!(matches!(
            local_train(&ModelState::zeros(3), &data, &cfg(0.1, 1, 2), "w", &mut rng(0)),
            Err(FedError::DimensionMismatch { expected: 3, got: 2 })
        ));
        let server = ModelState::zeros(2);
        let bad = GradientUpdate {
            delta: vec![0.0; 5],
            worker_id: "w".into(),
            base_version: 0,
        };
        assert!(matches!(
            aggregate(&server, &bad, u64::MAX),
            Err(FedError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn learning_rate_blowup_is_detected() {
        // α·grad overflows f64 on the very first batch.
        let data = LocalDataset::new(vec![Sample { x: vec![1e200], y: 0 }]).unwrap();
        let result = local_train(
            &ModelState::zeros(1),
            &data,
            &cfg(1e200, 1, 1),
            "w0",
            &mut rng(0),
        );
        assert!(matches!(result, Err(FedError::NonFinite(_))));
    }

    #[test]
    fn zero_delta_aggregate_bumps_version_only() {
        let server = ModelState::zeros(3);
        let update = GradientUpdate {
            delta: vec![0.0; 4],
            worker_id: "w0".into(),
            base_version: 0,
        };
        let (next, accepted) = aggregate(&server, &update, 8).unwrap();
        assert!(accepted);
        assert_eq!(next.weights, server.weights);
        assert_eq!(next.version, 1);
    }

    #[test]
    fn stale_update_is_dropped_and_counted() {
        let server = ParameterServer::new(2, 8);
        let zero = |base: u64| GradientUpdate {
            delta: vec![0.0; 3],
            worker_id: "w0".into(),
            base_version: base,
        };
        for _ in 0..10 {
            assert!(server.submit(&zero(server.download().version)).unwrap());
        }
        assert_eq!(server.download().version, 10);

        // Gap of 9 exceeds the limit of 8.
        let stale = GradientUpdate {
            delta: vec![5.0, 5.0, 5.0],
            worker_id: "w1".into(),
            base_version: 1,
        };
        assert!(!server.submit(&stale).unwrap());
        let model = server.download();
        assert_eq!(model.version, 10, "rejected update must not bump version");
        assert_eq!(model.weights, vec![0.0; 3]);
        assert_eq!(server.stale_dropped(), 1);

        // Gap of exactly 8 is still within the limit.
        let edge = zero(2);
        assert!(server.submit(&edge).unwrap());
        assert_eq!(server.download().version, 11);
    }

    #[test]
    fn aggregation_order_does_not_change_final_weights() {
        let mut r = rng(99);
        let updates: Vec<GradientUpdate> = (0..10)
            .map(|i| GradientUpdate {
                delta: (0..4).map(|_| r.gen_range(-1.0..1.0)).collect(),
                worker_id: format!("w{i}"),
                base_version: 0,
            })
            .collect();

        let apply_in = |order: &[usize]| {
            let mut model = ModelState::zeros(3);
            for &i in order {
                let (next, accepted) = aggregate(&model, &updates[i], u64::MAX).unwrap();
                assert!(accepted);
                model = next;
            }
            model.weights
        };

        let forward = apply_in(&(0..10).collect::<Vec<_>>());
        let mut order: Vec<usize> = (0..10).collect();
        for _ in 0..20 {
            order.shuffle(&mut r);
            let shuffled = apply_in(&order);
            for (a, b) in forward.iter().zip(&shuffled) {
                assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn fresh_server_snapshot_is_version_zero_zeros() {
        let server = ParameterServer::new(4, 8);
        let model = server.download();
        assert_eq!(model.version, 0);
        assert_eq!(model.weights, vec![0.0; 5]);
    }

    #[test]
    fn snapshots_equal_independent_replay_of_accepted_deltas() {
        let server = ParameterServer::new(2, 3);
        let mut r = rng(7);
        let mut expected = vec![0.0f64; 3];
        for step in 0..50 {
            // Occasionally go stale on purpose.
            let base = if step % 7 == 3 {
                server.download().version.saturating_sub(10)
            } else {
                server.download().version
            };
            let update = GradientUpdate {
                delta: (0..3).map(|_| r.gen_range(-0.5..0.5)).collect(),
                worker_id: "w0".into(),
                base_version: base,
            };
            let accepted = server.submit(&update).unwrap();
            if accepted {
                for (e, d) in expected.iter_mut().zip(&update.delta) {
                    *e += d;
                }
            }
            // The snapshot must equal the running sum of accepted deltas.
            assert_eq!(server.download().weights, expected);
        }
        assert!(server.stale_dropped() > 0, "test must exercise the stale path");
    }

    #[test]
    fn concurrent_submits_never_tear_snapshots() {
        use std::sync::Arc;
        let server = Arc::new(ParameterServer::new(3, u64::MAX));
        let ones = GradientUpdate {
            delta: vec![1.0; 4],
            worker_id: "w".into(),
            base_version: 0,
        };
        let mut handles = Vec::new();
        for _ in 0..4 {
            let server = Arc::clone(&server);
            let update = ones.clone();
            handles.push(std::thread::spawn(move || {
                for _ in 0..50 {
                    server.submit(&update).unwrap();
                    let snap = server.download();
                    // Every component accumulated the same +1.0 per accepted
                    // update, so a torn read would show unequal components.
                    assert!(snap.weights.iter().all(|w| *w == snap.version as f64));
                }
            }));
        }
        for h in handles {
            h.join().unwrap();
        }
        assert_eq!(server.download().version, 200);
    }

    #[test]
    fn journal_lines_carry_only_metadata_and_match_submissions() {
        let server = ParameterServer::new(2, 8);
        let update = GradientUpdate {
            delta: vec![3.0, 0.0, 4.0],
            worker_id: "gw-1".into(),
            base_version: 0,
        };
        server.submit(&update).unwrap();
        let mut buf = Vec::new();
        server.write_journal(&mut buf).unwrap();
        let line: serde_json::Value = serde_json::from_slice(buf.trim_ascii_end()).unwrap();
        let mut keys: Vec<&str> =
            line.as_object().unwrap().keys().map(String::as_str).collect();
        keys.sort_unstable();
        assert_eq!(
            keys,
            vec!["accepted", "base_version", "delta_norm", "version", "worker_id"]
        );
        assert_eq!(line["version"], 1);
        assert_eq!(line["accepted"], true);
        assert!((line["delta_norm"].as_f64().unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn gradient_update_serialization_is_the_privacy_boundary() {
        let update = GradientUpdate {
            delta: vec![0.5, -0.5],
            worker_id: "w0".into(),
            base_version: 3,
        };
        let value = serde_json::to_value(&update).unwrap();
        let mut keys: Vec<&str> =
            value.as_object().unwrap().keys().map(String::as_str).collect();
        keys.sort_unstable();
        // Exactly the delta and routing metadata — never samples or labels.
        assert_eq!(keys, vec!["base_version", "delta", "worker_id"]);
    }

    /// Centralized minibatch SGD with the same shuffle stream, written
    /// independently of `local_train` as the single-worker oracle.
    fn centralized_sgd(
        data: &LocalDataset,
        cfg: &TrainerConfig,
        rounds: u32,
        seed: u64,
    ) -> Vec<f64> {
        let mut weights = vec![0.0; data.dim() + 1];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0);
        for _ in 0..rounds {
            let mut order: Vec<usize> = (0..data.len()).collect();
            for _ in 0..cfg.local_epochs {
                order.shuffle(&mut rng);
                for batch in order.chunks(cfg.minibatch_size) {
                    let mut grad = vec![0.0; weights.len()];
                    for &idx in batch {
                        let g = sample_grad(&weights, &data.samples()[idx]);
                        for (acc, gi) in grad.iter_mut().zip(&g) {
                            *acc += gi;
                        }
                    }
                    let scale = cfg.learning_rate / batch.len() as f64;
                    for (w, g) in weights.iter_mut().zip(&grad) {
                        *w -= scale * g;
                    }
                }
            }
        }
        weights
    }

    #[test]
    fn single_worker_matches_centralized_sgd() {
        let mut r = rng(11);
        let data = two_gaussian_dataset(100, 1.0, 0.5, &mut r);
        let config = cfg(0.1, 2, 16);
        let seed = 4242;

        let server = ParameterServer::new(2, u64::MAX);
        let run = run_round_robin(
            &server,
            &[Worker {
                worker_id: "w0".into(),
                data: data.clone(),
            }],
            &config,
            30,
            seed,
        )
        .unwrap();

        let oracle = centralized_sgd(&data, &config, 30, seed);
        for (a, b) in run.model.weights.iter().zip(&oracle) {
            assert!((a - b).abs() <= 1e-9, "federated {a} vs centralized {b}");
        }
    }

    #[test]
    fn four_workers_converge_on_two_gaussians() {
        let workers: Vec<Worker> = (0..4)
            .map(|i| {
                let mut r = rng(1000 + i);
                Worker {
                    worker_id: format!("gw-{i}"),
                    data: two_gaussian_dataset(250, 1.0, 0.5, &mut r),
                }
            })
            .collect();
        let server = ParameterServer::new(2, 8);
        let run = run_round_robin(&server, &workers, &cfg(0.1, 1, 32), 200, 7).unwrap();

        let hit = run
            .trace
            .iter()
            .find(|m| m.accuracy >= 0.95)
            .unwrap_or_else(|| panic!("never reached 95%: final {:?}", run.trace.last()));
        assert!(hit.round < 200);

        // Loss settles: the 10-round moving average is non-increasing
        // once past the initial transient.
        let ma: Vec<f64> = run
            .trace
            .windows(10)
            .map(|w| w.iter().map(|m| m.loss).sum::<f64>() / 10.0)
            .collect();
        for i in 20..ma.len() - 1 {
            assert!(
                ma[i + 1] <= ma[i] + 1e-9,
                "moving average rose at {}: {} -> {}",
                i,
                ma[i],
                ma[i + 1]
            );
        }
    }

    #[test]
    fn zero_rounds_returns_server_unchanged() {
        let mut r = rng(5);
        let server = ParameterServer::new(2, 8);
        let run = run_round_robin(
            &server,
            &[Worker {
                worker_id: "w0".into(),
                data: two_gaussian_dataset(10, 1.0, 0.5, &mut r),
            }],
            &cfg(0.1, 1, 4),
            0,
            1,
        )
        .unwrap();
        assert_eq!(run.model, ModelState::zeros(2));
        assert!(run.trace.is_empty());
    }

    #[test]
    fn identical_seeds_reproduce_identical_runs() {
        let workers: Vec<Worker> = (0..2)
            .map(|i| {
                let mut r = rng(50 + i);
                Worker {
                    worker_id: format!("w{i}"),
                    data: two_gaussian_dataset(40, 1.0, 0.5, &mut r),
                }
            })
            .collect();
        let run = |seed: u64| {
            let server = ParameterServer::new(2, 8);
            let result = run_round_robin(&server, &workers, &cfg(0.1, 1, 8), 10, seed).unwrap();
            (result.model, result.trace)
        };
        assert_eq!(run(9), run(9));
        assert_ne!(run(9).0.weights, run(10).0.weights);
    }

    #[test]
    fn dataset_validation_catches_bad_shapes() {
        assert!(matches!(
            LocalDataset::new(vec![]),
            Err(FedError::EmptyDataset)
        ));
        assert!(matches!(
            LocalDataset::new(vec![
                Sample { x: vec![1.0], y: 0 },
                Sample { x: vec![1.0, 2.0], y: 1 },
            ]),
            Err(FedError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            LocalDataset::new(vec![Sample { x: vec![1.0], y: 2 }]),
            Err(FedError::InvalidConfig(_))
        ));
        assert!(matches!(
            LocalDataset::new(vec![Sample { x: vec![f64::NAN], y: 0 }]),
            Err(FedError::NonFinite(_))
        ));
    }
}
