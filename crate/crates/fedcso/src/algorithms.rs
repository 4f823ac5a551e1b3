//! Per-worker update rules for FCSG, FCSG-M and Acc-FCSG-M.
//!
//! All three share the same skeleton per step `t`: update the model with the
//! current estimator (`x ← x − α·u`), then draw `b` outer samples with their
//! conditional inner batches and refresh the estimator **at the new point**:
//!
//! * FCSG:        `u ← (1/b) Σ ∇F̂(x_t; ξ_i, B_i)`
//! * FCSG-M:      `u ← (1−β)·u + β·(1/b) Σ ∇F̂(x_t; ξ_i, B_i)`
//! * Acc-FCSG-M:  `u ← (1/b) Σ ∇F̂(x_t; ξ_i, B_i)
//!                    + (1−β)·(u − (1/b) Σ ∇F̂(x_{t−1}; ξ_i, B_i))`
//!
//! The accelerated variant evaluates both points with the *same* samples —
//! one Acc step consumes exactly as many draws as one FCSG step. At β = 1
//! FCSG-M and Acc-FCSG-M both degenerate to FCSG.
//!
//! Steps mutate only their own [`WorkerState`]; all randomness comes from
//! streams keyed by `(seed, worker, step, purpose)`, so workers can run their
//! local phases concurrently without affecting results.

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::minibatch_grad_estimate;
use crate::objectives::{ConditionalObjective, InnerBatch, OuterSample};
use crate::rng::{rng_stream, StreamPurpose};

/// Which algorithm drives the worker updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlgorithmTag {
    Fcsg,
    FcsgM,
    AccFcsgM,
}

impl AlgorithmTag {
    pub fn name(self) -> &'static str {
        match self {
            AlgorithmTag::Fcsg => "fcsg",
            AlgorithmTag::FcsgM => "fcsg-m",
            AlgorithmTag::AccFcsgM => "acc-fcsg-m",
        }
    }

    /// FCSG keeps estimators local; the momentum variants also average `u`
    /// at every server synchronization.
    pub fn averages_estimator(self) -> bool {
        !matches!(self, AlgorithmTag::Fcsg)
    }

    pub fn uses_momentum(self) -> bool {
        !matches!(self, AlgorithmTag::Fcsg)
    }
}

impl std::str::FromStr for AlgorithmTag {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fcsg" => Ok(AlgorithmTag::Fcsg),
            "fcsg-m" => Ok(AlgorithmTag::FcsgM),
            "acc-fcsg-m" => Ok(AlgorithmTag::AccFcsgM),
            other => Err(Error::InvalidArgument(format!("unknown algorithm `{other}`"))),
        }
    }
}

/// Instrumented draw counters, used by the sample-complexity accounting and
/// the sample-sharing checks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DrawCounters {
    pub outer_draws: u64,
    pub inner_draws: u64,
    pub clamp_events: u64,
}

/// One worker's mutable state: the local model `x`, the gradient estimator
/// `u`, and (Acc-FCSG-M only) the previous iterate.
#[derive(Debug, Clone)]
pub struct WorkerState {
    pub worker_id: usize,
    pub x: Array1<f64>,
    pub u: Array1<f64>,
    pub x_prev: Option<Array1<f64>>,
    pub counters: DrawCounters,
}

impl WorkerState {
    pub fn new(worker_id: usize, x0: Array1<f64>) -> Self {
        let dim = x0.len();
        WorkerState {
            worker_id,
            x: x0,
            u: Array1::zeros(dim),
            x_prev: None,
            counters: DrawCounters::default(),
        }
    }
}

/// Draw `b` outer samples and one conditional inner batch of size `m` per
/// outer sample, from the worker's (step, purpose)-keyed streams.
pub(crate) fn draw_pairs(
    worker: &mut WorkerState,
    task: &dyn ConditionalObjective,
    seed: u64,
    step: u64,
    b: usize,
    m: usize,
) -> Result<Vec<(OuterSample, InnerBatch)>> {
    let wid = worker.worker_id as u64;
    let mut outer_rng = rng_stream(seed, wid, step, StreamPurpose::Outer);
    let mut inner_rng = rng_stream(seed, wid, step, StreamPurpose::Inner);
    let mut pairs = Vec::with_capacity(b);
    for _ in 0..b {
        let xi = task.sample_outer(worker.worker_id, &mut outer_rng);
        let batch = task.sample_inner(&xi, m, &mut inner_rng)?;
        worker.counters.outer_draws += 1;
        worker.counters.inner_draws += m as u64;
        pairs.push((xi, batch));
    }
    Ok(pairs)
}

/// The model update `x ← x − α·u` shared by every step (and by the server
/// phase, which averages the post-update models).
pub(crate) fn model_update(worker: &mut WorkerState, alpha: f64) {
    let u = worker.u.clone();
    worker.x.scaled_add(-alpha, &u);
}

/// `u = fresh + (1−β)(u − fresh_prev)`, the variance-reduced combination.
pub(crate) fn acc_estimator_combine(
    fresh_new: &Array1<f64>,
    u: &Array1<f64>,
    fresh_old: &Array1<f64>,
    beta: f64,
) -> Array1<f64> {
    let mut out = fresh_new.clone();
    out.scaled_add(1.0 - beta, u);
    out.scaled_add(-(1.0 - beta), fresh_old);
    out
}

/// Refresh the estimator at the worker's current `x` (which the caller has
/// already updated, locally or via server averaging). `prev` is the iterate
/// before this step's update; only Acc-FCSG-M evaluates it.
#[allow(clippy::too_many_arguments)]
pub(crate) fn refresh_estimator(
    worker: &mut WorkerState,
    task: &dyn ConditionalObjective,
    seed: u64,
    step: u64,
    algorithm: AlgorithmTag,
    beta: f64,
    b: usize,
    m: usize,
    prev: Option<Array1<f64>>,
) -> Result<()> {
    let pairs = draw_pairs(worker, task, seed, step, b, m)?;
    match algorithm {
        AlgorithmTag::Fcsg => {
            let est = minibatch_grad_estimate(task, worker.x.view(), &pairs)?;
            worker.counters.clamp_events += est.clamp_events;
            worker.u = est.vector;
        }
        AlgorithmTag::FcsgM => {
            let est = minibatch_grad_estimate(task, worker.x.view(), &pairs)?;
            worker.counters.clamp_events += est.clamp_events;
            worker.u.mapv_inplace(|v| (1.0 - beta) * v);
            worker.u.scaled_add(beta, &est.vector);
        }
        AlgorithmTag::AccFcsgM => {
            let prev = prev.ok_or_else(|| {
                Error::InternalState("acc-fcsg-m step without a previous iterate".into())
            })?;
            // Both evaluations reuse the same (ξ, η) draws.
            let est_new = minibatch_grad_estimate(task, worker.x.view(), &pairs)?;
            let est_old = minibatch_grad_estimate(task, prev.view(), &pairs)?;
            worker.counters.clamp_events += est_new.clamp_events + est_old.clamp_events;
            worker.u =
                acc_estimator_combine(&est_new.vector, &worker.u, &est_old.vector, beta);
            worker.x_prev = Some(prev);
        }
    }
    Ok(())
}

/// Estimator initialization: `u ← (1/B) Σ_{i=1..B} ∇F̂(x₀; ξ_i, B_i)` from
/// the step-0 streams. For Acc-FCSG-M also records `x_prev = x₀`.
pub fn init_estimator(
    worker: &mut WorkerState,
    task: &dyn ConditionalObjective,
    seed: u64,
    init_batch: usize,
    m: usize,
    algorithm: AlgorithmTag,
) -> Result<()> {
    if init_batch == 0 {
        return Err(Error::InvalidArgument("init batch B must be >= 1".into()));
    }
    let pairs = draw_pairs(worker, task, seed, 0, init_batch, m)?;
    let est = minibatch_grad_estimate(task, worker.x.view(), &pairs)?;
    worker.counters.clamp_events += est.clamp_events;
    worker.u = est.vector;
    if algorithm == AlgorithmTag::AccFcsgM {
        worker.x_prev = Some(worker.x.clone());
    }
    Ok(())
}

/// One FCSG local step: `x ← x − α·u`, then re-estimate at the new point.
pub fn fcsg_local_step(
    worker: &mut WorkerState,
    task: &dyn ConditionalObjective,
    seed: u64,
    step: u64,
    alpha: f64,
    b: usize,
    m: usize,
) -> Result<()> {
    model_update(worker, alpha);
    refresh_estimator(worker, task, seed, step, AlgorithmTag::Fcsg, 1.0, b, m, None)
}

/// One FCSG-M local step: model update, then the exponential-moving-average
/// estimator refresh.
#[allow(clippy::too_many_arguments)]
pub fn fcsg_m_local_step(
    worker: &mut WorkerState,
    task: &dyn ConditionalObjective,
    seed: u64,
    step: u64,
    alpha: f64,
    beta: f64,
    b: usize,
    m: usize,
) -> Result<()> {
    model_update(worker, alpha);
    refresh_estimator(worker, task, seed, step, AlgorithmTag::FcsgM, beta, b, m, None)
}

/// One Acc-FCSG-M local step: model update, then the variance-reduced refresh
/// evaluating old and new iterates on shared samples.
#[allow(clippy::too_many_arguments)]
pub fn acc_fcsg_m_local_step(
    worker: &mut WorkerState,
    task: &dyn ConditionalObjective,
    seed: u64,
    step: u64,
    alpha: f64,
    beta: f64,
    b: usize,
    m: usize,
) -> Result<()> {
    if worker.x_prev.is_none() {
        return Err(Error::InternalState(
            "acc-fcsg-m worker has no previous iterate; run init_estimator first".into(),
        ));
    }
    let prev = worker.x.clone();
    model_update(worker, alpha);
    refresh_estimator(
        worker,
        task,
        seed,
        step,
        AlgorithmTag::AccFcsgM,
        beta,
        b,
        m,
        Some(prev),
    )
}
