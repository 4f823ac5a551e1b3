//! Command-line front end: `run`, `bias-check` and `sweep`.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 usage/config error, 3 check
//! failed (bias-check tolerance violated).
//!
//! `run` accepts an optional `--config FILE` (flat JSON, lowercase
//! snake-case keys, unknown keys rejected); CLI flags override file values.
//! A trace's `.meta.json` sidecar is also accepted as a config file, so any
//! emitted trace can be reproduced from its sidecar alone.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::algorithms::AlgorithmTag;
use crate::error::{Error, Result};
use crate::estimator::biased_grad_estimate;
use crate::federation::{run_with_schedule, FederationConfig, RunOptions};
use crate::metrics::{read_trace_rows, sidecar_path, write_trace};
use crate::objectives::{TaskKind, TaskSpec};
use crate::rng::{rng_stream, standard_normal_vec, StreamPurpose, GLOBAL_SLOT};
use crate::schedules::{acc_schedule, fcsg_schedule, ScheduleResult};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CHECK_FAILED: i32 = 3;

#[derive(Parser)]
#[command(
    name = "fedcso",
    version,
    about = "Federated conditional stochastic optimization harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute one federated run and write its trace CSV (+ .meta.json).
    Run(RunArgs),
    /// Monte-Carlo study of the estimator bias as the inner batch grows.
    BiasCheck(BiasCheckArgs),
    /// Cross-product sweep over algorithms, inner batch sizes, noise ratios
    /// and seeds; one trace per cell plus a summary CSV.
    Sweep(SweepArgs),
}

#[derive(Args, Debug, Default, Clone)]
struct TaskArgs {
    /// Model dimension d.
    #[arg(long)]
    dim: Option<usize>,
    /// Inner dimension d' (quadratic only).
    #[arg(long)]
    inner_dim: Option<usize>,
    /// Outer noise scale σ1.
    #[arg(long)]
    sigma1: Option<f64>,
    /// Inner conditional noise scale σ2.
    #[arg(long)]
    sigma2: Option<f64>,
    /// Set σ2 as a multiple of σ1.
    #[arg(long, conflicts_with = "sigma2")]
    noise_ratio: Option<f64>,
    /// Regularizer weight λ (invlogreg).
    #[arg(long)]
    lambda_reg: Option<f64>,
    /// Regularizer curvature γ (invlogreg).
    #[arg(long)]
    gamma_reg: Option<f64>,
    /// Inner adaptation step λ (maml-toy).
    #[arg(long)]
    lambda_meta: Option<f64>,
    /// Support noise scale (maml-toy).
    #[arg(long)]
    support_noise: Option<f64>,
    /// Query noise scale (maml-toy).
    #[arg(long)]
    query_noise: Option<f64>,
    /// Tasks per worker shard (maml-toy).
    #[arg(long)]
    num_tasks: Option<usize>,
    /// Squared-hinge margin s (auprc).
    #[arg(long)]
    margin: Option<f64>,
    /// Total dataset size (auprc).
    #[arg(long)]
    dataset_size: Option<usize>,
    /// Positive-class fraction (auprc).
    #[arg(long)]
    positive_fraction: Option<f64>,
    /// Held-out evaluation set size.
    #[arg(long)]
    eval_size: Option<usize>,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Flat JSON config file; flags given on the command line win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Algorithm: fcsg | fcsg-m | acc-fcsg-m.
    #[arg(long)]
    algo: Option<String>,
    /// Task: quadratic | invlogreg | maml-toy | auprc.
    #[arg(long)]
    task: Option<String>,
    /// Worker count N.
    #[arg(long)]
    workers: Option<usize>,
    /// Total steps T.
    #[arg(long)]
    steps: Option<u64>,
    /// Local steps per round q (default 1: sync every step).
    #[arg(long)]
    local_steps: Option<u64>,
    /// Learning rate α.
    #[arg(long)]
    lr: Option<f64>,
    /// Momentum weight β (fcsg-m, acc-fcsg-m).
    #[arg(long)]
    momentum: Option<f64>,
    /// Outer batch size b.
    #[arg(long)]
    outer_batch: Option<usize>,
    /// Inner batch size m.
    #[arg(long)]
    inner_batch: Option<usize>,
    /// Initialization batch size B (default: b).
    #[arg(long)]
    init_batch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Trace output path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace α/q/β/B with the theory-prescribed schedule.
    #[arg(long)]
    auto_hyper: bool,
    /// Smoothness estimate S_F for --auto-hyper (default: task reference).
    #[arg(long)]
    s_f: Option<f64>,
    /// Per-worker distribution shifts.
    #[arg(long)]
    hetero: bool,
    /// Record a metric row at every step, not just at sync rounds.
    #[arg(long)]
    record_every_step: bool,
    /// Run worker phases on threads (bit-identical to serial).
    #[arg(long)]
    parallel: bool,
    #[command(flatten)]
    task_args: TaskArgs,
}

#[derive(Args, Debug)]
struct BiasCheckArgs {
    /// Task; the bias study is defined for the quadratic oracle task.
    #[arg(long, default_value = "quadratic")]
    task: String,
    /// Comma-separated inner batch sizes.
    #[arg(long, default_value = "5,10,20,40")]
    m_list: String,
    /// Monte-Carlo trials per batch size.
    #[arg(long, default_value_t = 100_000)]
    trials: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV path (`m,bias_sq`).
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    task_args: TaskArgs,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Comma-separated algorithms.
    #[arg(long, default_value = "fcsg,fcsg-m")]
    algo_list: String,
    /// Comma-separated inner batch sizes.
    #[arg(long, default_value = "1,10,100")]
    m_list: String,
    /// Comma-separated σ2/σ1 ratios.
    #[arg(long, default_value = "1,1.5,2")]
    noise_ratio_list: String,
    /// Comma-separated seeds.
    #[arg(long, default_value = "1,2,3,4,5")]
    seed_list: String,
    /// Task swept over (quadratic | invlogreg).
    #[arg(long, default_value = "invlogreg")]
    task: String,
    #[arg(long, default_value_t = 4)]
    workers: usize,
    #[arg(long, default_value_t = 1000)]
    steps: u64,
    #[arg(long, default_value_t = 50)]
    local_steps: u64,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    /// Momentum weight for the momentum algorithms.
    #[arg(long, default_value_t = 0.1)]
    momentum: f64,
    #[arg(long, default_value_t = 1)]
    outer_batch: usize,
    #[arg(long)]
    init_batch: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    parallel: bool,
    #[command(flatten)]
    task_args: TaskArgs,
}

/// Flat run-config document. All keys are optional so a file can be partial;
/// unknown keys are rejected.
#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub algo: Option<String>,
    pub task: Option<String>,
    pub workers: Option<usize>,
    pub steps: Option<u64>,
    pub local_steps: Option<u64>,
    pub lr: Option<f64>,
    pub momentum: Option<f64>,
    pub outer_batch: Option<usize>,
    pub inner_batch: Option<usize>,
    pub init_batch: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub auto_hyper: Option<bool>,
    pub hetero: Option<bool>,
    pub record_every_step: Option<bool>,
    pub s_f: Option<f64>,
    pub dim: Option<usize>,
    pub inner_dim: Option<usize>,
    pub sigma1: Option<f64>,
    pub sigma2: Option<f64>,
    pub noise_ratio: Option<f64>,
    pub lambda_reg: Option<f64>,
    pub gamma_reg: Option<f64>,
    pub lambda_meta: Option<f64>,
    pub support_noise: Option<f64>,
    pub query_noise: Option<f64>,
    pub num_tasks: Option<usize>,
    pub margin: Option<f64>,
    pub dataset_size: Option<usize>,
    pub positive_fraction: Option<f64>,
    pub eval_size: Option<usize>,
}

impl RunConfigFile {
    /// Parse a flat config file, or a trace `.meta.json` sidecar (detected by
    /// its nested `config` object), into a flat document.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
        if value.get("config").is_some() {
            let meta: crate::metrics::TraceMetadata =
                serde_json::from_value(value).map_err(|e| Error::parse(path, e.to_string()))?;
            return Ok(Self::from_federation_config(&meta.config));
        }
        serde_json::from_value(value).map_err(|e| Error::parse(path, e.to_string()))
    }

    pub fn from_federation_config(cfg: &FederationConfig) -> Self {
        let t = &cfg.task;
        RunConfigFile {
            algo: Some(cfg.algorithm.name().to_string()),
            task: Some(t.kind.name().to_string()),
            workers: Some(cfg.workers),
            steps: Some(cfg.steps),
            local_steps: Some(cfg.local_steps),
            lr: Some(cfg.lr),
            momentum: cfg.momentum,
            outer_batch: Some(cfg.outer_batch),
            inner_batch: Some(cfg.inner_batch),
            init_batch: Some(cfg.init_batch),
            seed: Some(cfg.seed),
            out: None,
            auto_hyper: None,
            hetero: Some(cfg.hetero),
            record_every_step: Some(cfg.record_every_step),
            s_f: None,
            dim: Some(t.dim),
            inner_dim: t.inner_dim,
            sigma1: Some(t.sigma1),
            sigma2: Some(t.sigma2),
            noise_ratio: None,
            lambda_reg: Some(t.lambda_reg),
            gamma_reg: Some(t.gamma_reg),
            lambda_meta: Some(t.lambda_meta),
            support_noise: Some(t.support_noise),
            query_noise: Some(t.query_noise),
            num_tasks: Some(t.num_tasks),
            margin: Some(t.margin),
            dataset_size: Some(t.dataset_size),
            positive_fraction: Some(t.positive_fraction),
            eval_size: cfg.eval_size,
        }
    }
}

fn apply_task_args(spec: &mut TaskSpec, args: &TaskArgs) {
    if let Some(v) = args.inner_dim {
        spec.inner_dim = Some(v);
    }
    if let Some(v) = args.sigma1 {
        spec.sigma1 = v;
    }
    if let Some(v) = args.sigma2 {
        spec.sigma2 = v;
    }
    if let Some(r) = args.noise_ratio {
        spec.sigma2 = r * spec.sigma1;
    }
    if let Some(v) = args.lambda_reg {
        spec.lambda_reg = v;
    }
    if let Some(v) = args.gamma_reg {
        spec.gamma_reg = v;
    }
    if let Some(v) = args.lambda_meta {
        spec.lambda_meta = v;
    }
    if let Some(v) = args.support_noise {
        spec.support_noise = v;
    }
    if let Some(v) = args.query_noise {
        spec.query_noise = v;
    }
    if let Some(v) = args.num_tasks {
        spec.num_tasks = v;
    }
    if let Some(v) = args.margin {
        spec.margin = v;
    }
    if let Some(v) = args.dataset_size {
        spec.dataset_size = v;
    }
    if let Some(v) = args.positive_fraction {
        spec.positive_fraction = v;
    }
}

/// Resolved run settings after merging defaults < config file < CLI flags.
struct RunSettings {
    config: FederationConfig,
    out: PathBuf,
    auto_hyper: bool,
    s_f: Option<f64>,
    parallel: bool,
}

fn usage(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn resolve_run_settings(args: &RunArgs) -> Result<RunSettings> {
    let file = match &args.config {
        Some(path) => RunConfigFile::load(path)?,
        None => RunConfigFile::default(),
    };

    let algo_str = args
        .algo
        .clone()
        .or(file.algo.clone())
        .ok_or_else(|| usage("--algo is required"))?;
    let algorithm: AlgorithmTag = algo_str.parse().map_err(|e| usage(format!("{e}")))?;

    let task_str = args
        .task
        .clone()
        .or(file.task.clone())
        .ok_or_else(|| usage("--task is required"))?;
    let kind: TaskKind = task_str.parse().map_err(|e| usage(format!("{e}")))?;

    let default_dim = match kind {
        TaskKind::Quadratic => 4,
        TaskKind::Invlogreg => 10,
        TaskKind::MamlToy => 5,
        TaskKind::Auprc => 20,
    };
    let dim = args.task_args.dim.or(file.dim).unwrap_or(default_dim);
    let mut spec = TaskSpec::new(kind, dim);

    // File-level task parameters first, CLI flags second.
    let file_task_args = TaskArgs {
        dim: None,
        inner_dim: file.inner_dim,
        sigma1: file.sigma1,
        sigma2: file.sigma2,
        noise_ratio: file.noise_ratio,
        lambda_reg: file.lambda_reg,
        gamma_reg: file.gamma_reg,
        lambda_meta: file.lambda_meta,
        support_noise: file.support_noise,
        query_noise: file.query_noise,
        num_tasks: file.num_tasks,
        margin: file.margin,
        dataset_size: file.dataset_size,
        positive_fraction: file.positive_fraction,
        eval_size: file.eval_size,
    };
    apply_task_args(&mut spec, &file_task_args);
    apply_task_args(&mut spec, &args.task_args);

    let steps = args
        .steps
        .or(file.steps)
        .ok_or_else(|| usage("--steps is required"))?;
    let auto_hyper = args.auto_hyper || file.auto_hyper.unwrap_or(false);
    let lr = match args.lr.or(file.lr) {
        Some(lr) => lr,
        // Replaced by the schedule below.
        None if auto_hyper => 1.0,
        None => return Err(usage("--lr is required unless --auto-hyper is given")),
    };
    let outer_batch = args.outer_batch.or(file.outer_batch).unwrap_or(1);
    let inner_batch = args.inner_batch.or(file.inner_batch).unwrap_or(1);
    let init_batch = args
        .init_batch
        .or(file.init_batch)
        .unwrap_or(outer_batch);

    let config = FederationConfig {
        algorithm,
        task: spec,
        workers: args.workers.or(file.workers).unwrap_or(1),
        steps,
        local_steps: args.local_steps.or(file.local_steps).unwrap_or(1),
        lr,
        momentum: args.momentum.or(file.momentum),
        outer_batch,
        inner_batch,
        init_batch,
        seed: args.seed.or(file.seed).unwrap_or(0),
        hetero: args.hetero || file.hetero.unwrap_or(false),
        record_every_step: args.record_every_step || file.record_every_step.unwrap_or(false),
        eval_size: args.task_args.eval_size.or(file.eval_size),
    };

    let out = args
        .out
        .clone()
        .or(file.out.clone())
        .ok_or_else(|| usage("--out is required"))?;

    Ok(RunSettings {
        config,
        out,
        auto_hyper,
        s_f: args.s_f.or(file.s_f),
        parallel: args.parallel,
    })
}

/// Apply the theory schedule to a config, returning the provenance record.
pub fn apply_auto_hyper(
    config: &mut FederationConfig,
    s_f_override: Option<f64>,
) -> Result<ScheduleResult> {
    let s_f = s_f_override.unwrap_or_else(|| config.task.reference_constants().s_f_composed);
    let n = config.workers as u64;
    let t = config.steps;
    let schedule = match config.algorithm {
        AlgorithmTag::Fcsg | AlgorithmTag::FcsgM => fcsg_schedule(n, t, s_f)?,
        AlgorithmTag::AccFcsgM => acc_schedule(n, t, config.outer_batch as u64, s_f)?,
    };
    config.lr = schedule.alpha;
    config.local_steps = schedule.q.min(config.steps);
    if config.algorithm.uses_momentum() {
        config.momentum = schedule.beta;
    }
    if let Some(b0) = schedule.init_batch {
        config.init_batch = b0 as usize;
    }
    Ok(schedule)
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let mut settings = resolve_run_settings(args)?;
    let schedule = if settings.auto_hyper {
        let schedule = apply_auto_hyper(&mut settings.config, settings.s_f)?;
        let mut echo = format!(
            "auto-hyper: alpha={:.6e} q={} (raw {:.4})",
            settings.config.lr, settings.config.local_steps, schedule.q_raw
        );
        if let Some(beta) = schedule.beta {
            if settings.config.algorithm.uses_momentum() {
                write!(echo, " beta={beta:.6e}").unwrap();
            }
        }
        if let Some(b0) = schedule.init_batch {
            write!(echo, " B={b0}").unwrap();
        }
        println!("{echo}");
        for w in &schedule.warnings {
            eprintln!("warning: {w}");
        }
        Some(schedule)
    } else {
        None
    };

    for w in settings.config.validate()? {
        eprintln!("warning: {w}");
    }
    let output = run_with_schedule(
        &settings.config,
        RunOptions {
            parallel: settings.parallel,
        },
        schedule,
    )?;
    write_trace(&output.trace, &settings.out)?;
    let last = output.trace.rows.last();
    println!(
        "wrote {} ({} rows, {} rounds)",
        settings.out.display(),
        output.trace.rows.len(),
        output.trace.metadata.sync_rounds
    );
    if let Some(row) = last {
        println!(
            "final: grad_norm_sq={:.6e} loss={:.6e} test_metric={:.6}",
            row.grad_norm_sq, row.loss, row.test_metric
        );
    }
    Ok(())
}

fn parse_list<T: std::str::FromStr>(name: &str, text: &str) -> Result<Vec<T>> {
    let items: Vec<&str> = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect();
    if items.is_empty() {
        return Err(usage(format!("{name} must contain at least one entry")));
    }
    items
        .iter()
        .map(|s| {
            s.parse::<T>()
                .map_err(|_| usage(format!("{name}: cannot parse `{s}`")))
        })
        .collect()
}

/// Monte-Carlo estimate of ‖E ∇F̂(x; ξ, B_m) − ∇F(x)‖² at a fixed random x,
/// for each inner batch size. Each trial draws an independent (ξ, batch)
/// pair from a trial-keyed stream.
pub fn bias_study(
    spec: &TaskSpec,
    m_list: &[usize],
    trials: u64,
    seed: u64,
) -> Result<Vec<(usize, f64)>> {
    if spec.kind != TaskKind::Quadratic {
        return Err(usage(
            "the bias study is defined for the quadratic oracle task",
        ));
    }
    if trials == 0 {
        return Err(usage("--trials must be >= 1"));
    }
    if m_list.contains(&0) {
        return Err(usage("--m-list entries must be >= 1"));
    }
    let task = spec.build(1, seed, false, None)?;
    let x = {
        let mut rng = rng_stream(seed, GLOBAL_SLOT, 0, StreamPurpose::Init);
        standard_normal_vec(task.dim(), &mut rng)
    };
    let exact = task.exact_gradient_oracle(x.view())?;

    let mut out = Vec::with_capacity(m_list.len());
    for &m in m_list {
        // Accumulate per-trial deviations from ∇F rather than raw estimates:
        // mathematically the same mean, but free of cancellation (degenerate
        // zero-noise draws yield an exact 0).
        let mut deviation = Array1::<f64>::zeros(task.dim());
        for k in 0..trials {
            let mut outer_rng = rng_stream(seed, k, m as u64, StreamPurpose::Eval);
            let mut inner_rng = rng_stream(seed, k, m as u64, StreamPurpose::TaskData);
            let xi = task.sample_outer(0, &mut outer_rng);
            let batch = task.sample_inner(&xi, m, &mut inner_rng)?;
            let est = biased_grad_estimate(task.as_ref(), x.view(), &xi, &batch)?;
            deviation += &(&est.vector - &exact);
        }
        deviation /= trials as f64;
        out.push((m, deviation.dot(&deviation)));
    }
    Ok(out)
}

/// Consecutive-pair decay tolerance: each bias_sq must drop to at most 75%
/// of its predecessor (0 stays 0 under the degenerate conditional).
pub fn bias_decay_holds(rows: &[(usize, f64)]) -> bool {
    rows.windows(2).all(|w| w[1].1 <= 0.75 * w[0].1)
}

fn cmd_bias_check(args: &BiasCheckArgs) -> Result<bool> {
    let kind: TaskKind = args.task.parse().map_err(|e| usage(format!("{e}")))?;
    if kind != TaskKind::Quadratic {
        return Err(usage(
            "bias-check requires the quadratic oracle task (--task quadratic)",
        ));
    }
    let m_list: Vec<usize> = parse_list("--m-list", &args.m_list)?;
    let mut spec = TaskSpec::new(kind, args.task_args.dim.unwrap_or(4));
    apply_task_args(&mut spec, &args.task_args);
    spec.validate()?;

    let rows = bias_study(&spec, &m_list, args.trials, args.seed)?;

    let mut csv = String::from("m,bias_sq\n");
    for (m, bias_sq) in &rows {
        let formatted = if bias_sq.is_nan() {
            "nan".to_string()
        } else {
            format!("{bias_sq:.16e}")
        };
        csv.push_str(&format!("{m},{formatted}\n"));
    }
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    std::fs::write(&args.out, csv).map_err(|e| Error::io(&args.out, e))?;

    for (m, bias_sq) in &rows {
        println!("m={m:<6} bias_sq={bias_sq:.6e}");
    }
    let ok = bias_decay_holds(&rows);
    if !ok {
        eprintln!("bias decay tolerance violated (expected bias_sq(next) <= 0.75*bias_sq(prev))");
    }
    Ok(ok)
}

fn format_ratio(r: f64) -> String {
    // 1.5 -> "1.5", 2.0 -> "2"
    format!("{r}")
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let algos: Vec<AlgorithmTag> = parse_list("--algo-list", &args.algo_list)?;
    let m_list: Vec<usize> = parse_list("--m-list", &args.m_list)?;
    let ratios: Vec<f64> = parse_list("--noise-ratio-list", &args.noise_ratio_list)?;
    let seeds: Vec<u64> = parse_list("--seed-list", &args.seed_list)?;
    let kind: TaskKind = args.task.parse().map_err(|e| usage(format!("{e}")))?;
    if !matches!(kind, TaskKind::Invlogreg | TaskKind::Quadratic) {
        return Err(usage(
            "sweep varies the noise ratio; use --task invlogreg or quadratic",
        ));
    }
    if m_list.contains(&0) {
        return Err(usage("--m-list entries must be >= 1"));
    }

    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let mut summary = String::from("algo,m,noise_ratio,seed,final_test_metric,final_grad_norm_sq\n");

    for &algo in &algos {
        for &m in &m_list {
            for &ratio in &ratios {
                for &seed in &seeds {
                    let name = format!(
                        "{}_m{}_r{}_s{}.csv",
                        algo.name(),
                        m,
                        format_ratio(ratio),
                        seed
                    );
                    let path = args.out.join(&name);

                    let complete = path.exists() && sidecar_path(&path).exists();
                    if complete {
                        println!("skip {name} (complete)");
                    } else {
                        let mut spec =
                            TaskSpec::new(kind, args.task_args.dim.unwrap_or(10));
                        apply_task_args(&mut spec, &args.task_args);
                        spec.sigma2 = ratio * spec.sigma1;

                        let momentum = algo.uses_momentum().then_some(args.momentum);
                        let config = FederationConfig {
                            algorithm: algo,
                            task: spec,
                            workers: args.workers,
                            steps: args.steps,
                            local_steps: args.local_steps.min(args.steps).max(1),
                            lr: args.lr,
                            momentum,
                            outer_batch: args.outer_batch,
                            inner_batch: m,
                            init_batch: args.init_batch.unwrap_or(args.outer_batch),
                            seed,
                            hetero: false,
                            record_every_step: false,
                            eval_size: args.task_args.eval_size,
                        };
                        config.validate()?;
                        let output = run_with_schedule(
                            &config,
                            RunOptions {
                                parallel: args.parallel,
                            },
                            None,
                        )?;
                        write_trace(&output.trace, &path)?;
                        println!("run  {name}");
                    }

                    let rows = read_trace_rows(&path)?;
                    let last = rows.last().ok_or_else(|| {
                        Error::parse(&path, "trace has no rows".to_string())
                    })?;
                    summary.push_str(&format!(
                        "{},{},{},{},{},{}\n",
                        algo.name(),
                        m,
                        format_ratio(ratio),
                        seed,
                        last.test_metric,
                        last.grad_norm_sq
                    ));
                }
            }
        }
    }

    let summary_path = args.out.join("summary.csv");
    std::fs::write(&summary_path, summary).map_err(|e| Error::io(&summary_path, e))?;
    println!("wrote {}", summary_path.display());
    Ok(())
}

fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Io { .. } | Error::Parse { .. } => EXIT_IO,
        Error::Config(_) | Error::InvalidArgument(_) | Error::UnsupportedTask { .. } => EXIT_USAGE,
        Error::DimensionMismatch { .. } | Error::InternalState(_) => EXIT_IO,
    }
}

/// Entry point used by the `fedcso` binary; returns the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.exit_code() == 0 { EXIT_OK } else { EXIT_USAGE };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args).map(|()| EXIT_OK),
        Command::BiasCheck(args) => {
            cmd_bias_check(args).map(|ok| if ok { EXIT_OK } else { EXIT_CHECK_FAILED })
        }
        Command::Sweep(args) => cmd_sweep(args).map(|()| EXIT_OK),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}
