//! The simulated federation: N workers, T steps, server averaging every q
//! steps.
//!
//! Determinism contract: a run is a pure function of its configuration.
//! Every random draw comes from a stream keyed by
//! `(seed, worker, step, purpose)` (see [`crate::rng`]), aggregation sums in
//! worker-index order with sequential accumulation, and evaluation draws use
//! purpose-keyed streams disjoint from training. Consequently worker local
//! phases may execute in parallel threads or serially and produce
//! bit-identical traces.
//!
//! Step layout (t = 1..T): every worker applies `x ← x − α·u`; when
//! `t mod q == 0` the server replaces the post-update models with their mean
//! (and, for the momentum variants, replaces the estimators with their mean);
//! then every worker draws fresh samples and refreshes its estimator at the
//! new point. Metric rows are recorded at sync boundaries (every step with
//! the `record_every_step` flag) after the refresh, so the sample counter
//! includes the step's draws.

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::algorithms::{
    self, AlgorithmTag, WorkerState,
};
use crate::error::{Error, Result};
use crate::metrics::{
    consensus_about, grad_norm_metric, MetricsRow, Trace, TraceMetadata,
};
use crate::objectives::{ConditionalObjective, TaskSpec};
use crate::rng::{rng_stream, standard_normal_vec, StreamPurpose, GLOBAL_SLOT};
use crate::schedules::ScheduleResult;

/// Full run configuration. Serializable; the trace metadata echoes it so any
/// trace can be re-run bit-identically from its sidecar.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederationConfig {
    pub algorithm: AlgorithmTag,
    pub task: TaskSpec,
    /// Number of workers N.
    pub workers: usize,
    /// Total steps T.
    pub steps: u64,
    /// Local steps per synchronization round q.
    pub local_steps: u64,
    /// Learning rate α.
    pub lr: f64,
    /// Momentum weight β; required for fcsg-m / acc-fcsg-m, forbidden for fcsg.
    #[serde(default)]
    pub momentum: Option<f64>,
    /// Outer batch size b per step.
    pub outer_batch: usize,
    /// Inner (conditional) batch size m per outer sample.
    pub inner_batch: usize,
    /// Initialization outer batch size B.
    pub init_batch: usize,
    pub seed: u64,
    /// Per-worker distribution shifts (x*/θ) instead of identical shards.
    #[serde(default)]
    pub hetero: bool,
    /// Record a metric row at every step instead of sync rows only.
    #[serde(default)]
    pub record_every_step: bool,
    /// Held-out evaluation set size override (tasks that use one).
    #[serde(default)]
    pub eval_size: Option<usize>,
}

impl FederationConfig {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        algorithm: AlgorithmTag,
        task: TaskSpec,
        workers: usize,
        steps: u64,
        local_steps: u64,
        lr: f64,
        momentum: Option<f64>,
        outer_batch: usize,
        inner_batch: usize,
        init_batch: usize,
        seed: u64,
    ) -> Self {
        FederationConfig {
            algorithm,
            task,
            workers,
            steps,
            local_steps,
            lr,
            momentum,
            outer_batch,
            inner_batch,
            init_batch,
            seed,
            hetero: false,
            record_every_step: false,
            eval_size: None,
        }
    }

    /// Validate invariants; returns non-fatal warnings (e.g. β = 0, which is
    /// accepted for ablations but freezes the estimator).
    pub fn validate(&self) -> Result<Vec<String>> {
        let mut warnings = Vec::new();
        if self.workers == 0 {
            return Err(Error::Config("worker count N must be >= 1".into()));
        }
        if self.steps == 0 {
            return Err(Error::Config("step count T must be >= 1".into()));
        }
        if self.local_steps == 0 || self.local_steps > self.steps {
            return Err(Error::Config(format!(
                "local steps q must satisfy 1 <= q <= T (got q={}, T={})",
                self.local_steps, self.steps
            )));
        }
        if self.outer_batch == 0 || self.inner_batch == 0 || self.init_batch == 0 {
            return Err(Error::Config("batch sizes b, m, B must all be >= 1".into()));
        }
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return Err(Error::Config("learning rate must be > 0".into()));
        }
        match (self.algorithm, self.momentum) {
            (AlgorithmTag::Fcsg, Some(_)) => {
                return Err(Error::Config(
                    "fcsg does not take a momentum weight".into(),
                ))
            }
            (AlgorithmTag::Fcsg, None) => {}
            (_, None) => {
                return Err(Error::Config(format!(
                    "{} requires a momentum weight in (0, 1]",
                    self.algorithm.name()
                )))
            }
            (_, Some(beta)) => {
                if !(0.0..=1.0).contains(&beta) {
                    return Err(Error::Config(format!(
                        "momentum weight must lie in (0, 1], got {beta}"
                    )));
                }
                if beta == 0.0 {
                    warnings.push(
                        "momentum weight 0 freezes the estimator forever (ablation only)"
                            .to_string(),
                    );
                }
            }
        }
        self.task.validate()?;
        Ok(warnings)
    }
}

/// Execution options that do not affect results.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Run worker local phases on scoped threads. Traces are bit-identical
    /// either way.
    pub parallel: bool,
}

/// Server-side view after a synchronization.
#[derive(Debug, Clone)]
pub struct ServerState {
    pub x_bar: Array1<f64>,
    /// Present iff the algorithm averages estimators (FCSG-M, Acc-FCSG-M).
    pub u_bar: Option<Array1<f64>>,
}

/// Mean in worker-index order with sequential accumulation.
fn worker_mean(workers: &[WorkerState], field: impl Fn(&WorkerState) -> &Array1<f64>) -> Array1<f64> {
    let mut sum = field(&workers[0]).clone();
    for w in &workers[1..] {
        sum += field(w);
    }
    sum / workers.len() as f64
}

/// One server synchronization: every worker applies its pending model update
/// `x ← x − α·u`, the post-update models are averaged in worker-index order
/// and broadcast, and for the estimator-averaging algorithms the same is done
/// for `u`. Afterwards all workers hold identical `x` (and `u` where
/// averaged).
pub fn server_sync(
    workers: &mut [WorkerState],
    algorithm: AlgorithmTag,
    alpha: f64,
) -> Result<ServerState> {
    if workers.is_empty() {
        return Err(Error::InvalidArgument("server_sync needs at least one worker".into()));
    }
    for w in workers.iter_mut() {
        algorithms::model_update(w, alpha);
    }
    let x_bar = worker_mean(workers, |w| &w.x);
    for w in workers.iter_mut() {
        w.x.assign(&x_bar);
    }
    let u_bar = if algorithm.averages_estimator() {
        let u_bar = worker_mean(workers, |w| &w.u);
        for w in workers.iter_mut() {
            w.u.assign(&u_bar);
        }
        Some(u_bar)
    } else {
        None
    };
    Ok(ServerState { x_bar, u_bar })
}

/// Run worker-local closures, optionally on scoped threads. Results are
/// independent of scheduling because each closure touches only its own
/// worker and derives randomness from (worker, step)-keyed streams.
fn for_each_worker<F>(workers: &mut [WorkerState], parallel: bool, f: F) -> Result<()>
where
    F: Fn(&mut WorkerState) -> Result<()> + Sync,
{
    if parallel && workers.len() > 1 {
        std::thread::scope(|scope| {
            let handles: Vec<_> = workers
                .iter_mut()
                .map(|w| scope.spawn(|| f(w)))
                .collect();
            let mut first_err = None;
            for h in handles {
                let joined = h
                    .join()
                    .map_err(|_| Error::InternalState("worker thread panicked".into()));
                match joined {
                    Ok(Ok(())) => {}
                    Ok(Err(e)) | Err(e) => {
                        if first_err.is_none() {
                            first_err = Some(e);
                        }
                    }
                }
            }
            match first_err {
                Some(e) => Err(e),
                None => Ok(()),
            }
        })
    } else {
        for w in workers.iter_mut() {
            f(w)?;
        }
        Ok(())
    }
}

/// Result of a federation run: the metric trace, the final averaged model,
/// and the reported iterate — one x̄_t drawn uniformly from the trajectory
/// via the output-pick stream, the convention nonconvex convergence
/// guarantees are stated for.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: Trace,
    pub final_mean: Array1<f64>,
    pub picked_step: u64,
    pub picked_mean: Array1<f64>,
}

pub fn run(config: &FederationConfig) -> Result<RunOutput> {
    run_with_options(config, RunOptions::default())
}

pub fn run_with_options(config: &FederationConfig, options: RunOptions) -> Result<RunOutput> {
    run_with_schedule(config, options, None)
}

/// Like [`run_with_options`], recording the provenance of auto-derived
/// hyperparameters in the trace metadata.
pub fn run_with_schedule(
    config: &FederationConfig,
    options: RunOptions,
    schedule: Option<ScheduleResult>,
) -> Result<RunOutput> {
    config.validate()?;
    let task = config.task.build(
        config.workers,
        config.seed,
        config.hetero,
        config.eval_size,
    )?;
    run_on_task(config, options, schedule, task.as_ref())
}

fn run_on_task(
    config: &FederationConfig,
    options: RunOptions,
    schedule: Option<ScheduleResult>,
    task: &dyn ConditionalObjective,
) -> Result<RunOutput> {
    let seed = config.seed;
    let alpha = config.lr;
    let beta = config.momentum.unwrap_or(1.0);
    let (b, m) = (config.outer_batch, config.inner_batch);
    let algo = config.algorithm;

    // Identical x₀ on every worker, drawn once from the init stream.
    let x0 = {
        let mut rng = rng_stream(seed, GLOBAL_SLOT, 0, StreamPurpose::Init);
        standard_normal_vec(task.dim(), &mut rng)
    };
    let mut workers: Vec<WorkerState> = (0..config.workers)
        .map(|n| WorkerState::new(n, x0.clone()))
        .collect();

    for_each_worker(&mut workers, options.parallel, |w| {
        algorithms::init_estimator(w, task, seed, config.init_batch, m, algo)
    })?;

    // Output convention: one x̄_t drawn uniformly from t = 1..T.
    let picked_step = {
        let mut rng = rng_stream(seed, GLOBAL_SLOT, 0, StreamPurpose::OutputPick);
        rand::Rng::random_range(&mut rng, 1..=config.steps)
    };
    let mut picked_mean = x0.clone();

    let mut rows: Vec<MetricsRow> = Vec::new();
    let mut sync_rounds = 0u64;

    for t in 1..=config.steps {
        let is_sync = t % config.local_steps == 0;
        let center = if is_sync {
            // Acc evaluates the pre-update iterate; stash it before the
            // server phase replaces the models.
            let prevs: Vec<Array1<f64>> = if algo == AlgorithmTag::AccFcsgM {
                workers.iter().map(|w| w.x.clone()).collect()
            } else {
                Vec::new()
            };
            let server = server_sync(&mut workers, algo, alpha)?;
            sync_rounds += 1;
            let prevs = &prevs;
            for_each_worker(&mut workers, options.parallel, |w| {
                let prev = if algo == AlgorithmTag::AccFcsgM {
                    Some(prevs[w.worker_id].clone())
                } else {
                    None
                };
                algorithms::refresh_estimator(w, task, seed, t, algo, beta, b, m, prev)
            })?;
            server.x_bar
        } else {
            for_each_worker(&mut workers, options.parallel, |w| match algo {
                AlgorithmTag::Fcsg => {
                    algorithms::fcsg_local_step(w, task, seed, t, alpha, b, m)
                }
                AlgorithmTag::FcsgM => {
                    algorithms::fcsg_m_local_step(w, task, seed, t, alpha, beta, b, m)
                }
                AlgorithmTag::AccFcsgM => {
                    algorithms::acc_fcsg_m_local_step(w, task, seed, t, alpha, beta, b, m)
                }
            })?;
            worker_mean(&workers, |w| &w.x)
        };

        if is_sync || config.record_every_step {
            rows.push(record_row(
                config, task, &workers, &center, t, sync_rounds, is_sync,
            ));
        }
        if t == picked_step {
            picked_mean = center.clone();
        }
    }

    let final_mean = if config.steps.is_multiple_of(config.local_steps) {
        workers[0].x.clone()
    } else {
        worker_mean(&workers, |w| &w.x)
    };

    let clamp_events = workers.iter().map(|w| w.counters.clamp_events).sum();
    let trace = Trace {
        rows,
        metadata: TraceMetadata {
            config: config.clone(),
            schedule,
            clamp_events,
            sync_rounds,
            picked_step,
        },
    };
    Ok(RunOutput {
        trace,
        final_mean,
        picked_step,
        picked_mean,
    })
}

fn record_row(
    config: &FederationConfig,
    task: &dyn ConditionalObjective,
    workers: &[WorkerState],
    center: &Array1<f64>,
    t: u64,
    sync_rounds: u64,
    is_sync: bool,
) -> MetricsRow {
    let consensus_x = consensus_about(center.view(), workers.iter().map(|w| w.x.view()));
    let consensus_u = if config.algorithm.averages_estimator() {
        let u_mean = worker_mean(workers, |w| &w.u);
        consensus_about(u_mean.view(), workers.iter().map(|w| w.u.view()))
    } else {
        f64::NAN
    };
    debug_assert!(!is_sync || consensus_x == 0.0);

    let mut eval_rng = rng_stream(config.seed, GLOBAL_SLOT, t, StreamPurpose::Eval);
    let grad_norm_sq = grad_norm_metric(task, center.view(), &mut eval_rng);
    let loss = task.eval_loss(center.view());
    let test_metric = task.test_metric(center.view());
    let samples_used = workers.iter().map(|w| w.counters.inner_draws).sum();

    MetricsRow {
        t,
        round: sync_rounds,
        grad_norm_sq,
        loss,
        consensus_x,
        consensus_u,
        test_metric,
        samples_used,
        seed: config.seed,
    }
}
