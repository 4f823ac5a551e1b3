//! Conditional stochastic objectives.
//!
//! A task exposes outer sampling (ξ), conditional inner sampling (η | ξ), an
//! inner map `g_η(x, ξ) ∈ R^{d'}` with its Jacobian, an outer map
//! `f_ξ(y) ∈ R` with its gradient, and — when the task admits one — an exact
//! gradient oracle for the composed objective
//!
//! ```text
//! F(x) = (1/N) Σ_n E_ξ f_ξ( E_{η|ξ} g_η(x, ξ) ).
//! ```
//!
//! Tasks are immutable after construction; all sampling draws from an
//! externally supplied stream, so a task can be shared freely across worker
//! threads.

mod auprc;
mod invlogreg;
mod maml_toy;
mod quadratic;

pub use auprc::AuprcTask;
pub use invlogreg::InvLogRegTask;
pub use maml_toy::MamlToyTask;
pub use quadratic::QuadraticTask;

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::StreamRng;

/// Task family selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Quadratic,
    Invlogreg,
    MamlToy,
    Auprc,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Quadratic => "quadratic",
            TaskKind::Invlogreg => "invlogreg",
            TaskKind::MamlToy => "maml-toy",
            TaskKind::Auprc => "auprc",
        }
    }
}

impl std::str::FromStr for TaskKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quadratic" => Ok(TaskKind::Quadratic),
            "invlogreg" => Ok(TaskKind::Invlogreg),
            "maml-toy" => Ok(TaskKind::MamlToy),
            "auprc" => Ok(TaskKind::Auprc),
            other => Err(Error::InvalidArgument(format!("unknown task `{other}`"))),
        }
    }
}

/// Smoothness and boundedness constants of a task: `S_f`, `S_g` (gradient
/// Lipschitz constants of the outer and inner maps), `L_f`, `L_g` (gradient
/// norm bounds) and `sigma_g` (inner conditional standard deviation). The
/// composed constant is derived once at construction and stored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessConstants {
    pub s_f: f64,
    pub s_g: f64,
    pub l_f: f64,
    pub l_g: f64,
    pub sigma_g: f64,
    /// `S_F = S_g·L_f + S_f·L_g²`, the smoothness constant of the composed
    /// objective.
    pub s_f_composed: f64,
}

impl SmoothnessConstants {
    pub fn new(s_f: f64, s_g: f64, l_f: f64, l_g: f64, sigma_g: f64) -> Self {
        assert!(
            s_f >= 0.0 && s_g >= 0.0 && l_f >= 0.0 && l_g >= 0.0 && sigma_g >= 0.0,
            "smoothness constants must be nonnegative"
        );
        SmoothnessConstants {
            s_f,
            s_g,
            l_f,
            l_g,
            sigma_g,
            s_f_composed: s_g * l_f + s_f * l_g * l_g,
        }
    }
}

/// One outer sample ξ. The payload is immutable once drawn.
#[derive(Debug, Clone, PartialEq)]
pub enum OuterSample {
    /// Scalar multiplier with mean 1.
    Quadratic { multiplier: f64 },
    /// Feature vector `a` and label `b ∈ {−1, +1}`.
    Invlogreg { features: Array1<f64>, label: f64 },
    /// Task index into the owning worker's shard plus a query point.
    MamlToy {
        worker: usize,
        task_index: usize,
        query: Array1<f64>,
    },
    /// One positive example drawn from the owning worker's positive shard.
    Auprc {
        worker: usize,
        positive: Array1<f64>,
    },
}

/// One inner sample η drawn from the conditional law P(η | ξ).
#[derive(Debug, Clone, PartialEq)]
pub enum InnerSample {
    Quadratic(Array1<f64>),
    Invlogreg(Array1<f64>),
    MamlToy(Array1<f64>),
    /// A dataset point (features, label) with label ∈ {−1, +1}.
    Auprc { features: Array1<f64>, label: f64 },
}

/// A batch of `m ≥ 1` conditional inner samples for one outer sample.
#[derive(Debug, Clone)]
pub struct InnerBatch {
    samples: Vec<InnerSample>,
}

impl InnerBatch {
    pub fn new(samples: Vec<InnerSample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument(
                "inner batch must contain at least one sample".into(),
            ));
        }
        Ok(InnerBatch { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[InnerSample] {
        &self.samples
    }
}

/// Value and gradient of the outer map at a point `y ∈ R^{d'}`, plus a flag
/// recording whether a denominator guard had to clamp (AP surrogate only).
#[derive(Debug, Clone)]
pub struct OuterEval {
    pub value: f64,
    pub grad: Array1<f64>,
    pub clamped: bool,
}

/// A conditional stochastic optimization task.
///
/// `N` (the worker count) is fixed at construction; `worker` arguments select
/// the per-worker data shard or distribution.
pub trait ConditionalObjective: Send + Sync {
    /// Model dimension `d`.
    fn dim(&self) -> usize;

    /// Inner map output dimension `d'`.
    fn inner_dim(&self) -> usize;

    fn kind(&self) -> TaskKind;

    /// Documented reference estimates of the task's smoothness constants.
    fn constants(&self) -> &SmoothnessConstants;

    /// Draw one outer sample ξ from the worker-local distribution.
    fn sample_outer(&self, worker: usize, rng: &mut StreamRng) -> OuterSample;

    /// Draw `m ≥ 1` i.i.d. inner samples from P(η | ξ).
    fn sample_inner(&self, xi: &OuterSample, m: usize, rng: &mut StreamRng)
        -> Result<InnerBatch>;

    /// Evaluate `g_η(x, ξ)` and its Jacobian with respect to `x` (`d'×d`).
    fn inner_value_jacobian(
        &self,
        x: ArrayView1<f64>,
        xi: &OuterSample,
        eta: &InnerSample,
    ) -> Result<(Array1<f64>, Array2<f64>)>;

    /// Evaluate `f_ξ(y)` and its gradient with respect to `y`.
    fn outer_value_grad(&self, y: ArrayView1<f64>, xi: &OuterSample) -> Result<OuterEval>;

    /// Deterministic regularizer added on top of the stochastic objective.
    /// Identity-zero for tasks that do not define one.
    fn regularizer_value_grad(&self, x: ArrayView1<f64>) -> (f64, Array1<f64>) {
        (0.0, Array1::zeros(x.len()))
    }

    /// Exact gradient ∇F(x) of the composed objective, including the
    /// regularizer. Errs for tasks without a closed form or finite-sum oracle.
    fn exact_gradient_oracle(&self, x: ArrayView1<f64>) -> Result<Array1<f64>>;

    /// Exact value F(x), when the task admits one.
    fn exact_objective(&self, x: ArrayView1<f64>) -> Option<f64>;

    /// Monte-Carlo estimate of ∇F(x) for tasks without an exact oracle.
    fn mc_gradient(&self, _x: ArrayView1<f64>, _rng: &mut StreamRng) -> Option<Array1<f64>> {
        None
    }

    /// Loss reported in traces: the exact objective when available, otherwise
    /// the empirical objective on the task's held-out evaluation set.
    fn eval_loss(&self, x: ArrayView1<f64>) -> f64 {
        self.exact_objective(x).unwrap_or(f64::NAN)
    }

    /// Task test metric (accuracy, average precision, ...); NaN when the task
    /// does not define one.
    fn test_metric(&self, _x: ArrayView1<f64>) -> f64 {
        f64::NAN
    }
}

fn default_sigma1() -> f64 {
    1.0
}
fn default_sigma2() -> f64 {
    1.0
}
fn default_lambda_reg() -> f64 {
    0.001
}
fn default_gamma_reg() -> f64 {
    10.0
}
fn default_lambda_meta() -> f64 {
    0.5
}
fn default_meta_noise() -> f64 {
    0.5
}
fn default_num_tasks() -> usize {
    10
}
fn default_margin() -> f64 {
    1.0
}
fn default_dataset_size() -> usize {
    2000
}
fn default_positive_fraction() -> f64 {
    0.1
}

/// Serializable task configuration. Materialize it with [`TaskSpec::build`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub kind: TaskKind,
    /// Model dimension `d`.
    pub dim: usize,
    /// Inner dimension `d'`; only the quadratic task allows overriding it.
    #[serde(default)]
    pub inner_dim: Option<usize>,
    /// Outer noise scale (quadratic multiplier std, invlogreg feature std).
    #[serde(default = "default_sigma1")]
    pub sigma1: f64,
    /// Conditional inner noise scale.
    #[serde(default = "default_sigma2")]
    pub sigma2: f64,
    /// Ground-truth direction for invlogreg labels; drawn from the seed when
    /// absent.
    #[serde(default)]
    pub x_star: Option<Vec<f64>>,
    /// Regularizer weight λ (invlogreg).
    #[serde(default = "default_lambda_reg")]
    pub lambda_reg: f64,
    /// Regularizer curvature γ (invlogreg).
    #[serde(default = "default_gamma_reg")]
    pub gamma_reg: f64,
    /// Meta step size λ of the inner adaptation step (maml-toy).
    #[serde(default = "default_lambda_meta")]
    pub lambda_meta: f64,
    /// Support-point noise scale (maml-toy).
    #[serde(default = "default_meta_noise")]
    pub support_noise: f64,
    /// Query-point noise scale (maml-toy).
    #[serde(default = "default_meta_noise")]
    pub query_noise: f64,
    /// Number of tasks per worker shard (maml-toy).
    #[serde(default = "default_num_tasks")]
    pub num_tasks: usize,
    /// Squared-hinge margin `s` (auprc).
    #[serde(default = "default_margin")]
    pub margin: f64,
    /// Total dataset size across all workers (auprc).
    #[serde(default = "default_dataset_size")]
    pub dataset_size: usize,
    /// Fraction of positive examples (auprc).
    #[serde(default = "default_positive_fraction")]
    pub positive_fraction: f64,
}

impl TaskSpec {
    /// A spec with per-kind defaults.
    pub fn new(kind: TaskKind, dim: usize) -> Self {
        TaskSpec {
            kind,
            dim,
            inner_dim: None,
            sigma1: default_sigma1(),
            sigma2: default_sigma2(),
            x_star: None,
            lambda_reg: default_lambda_reg(),
            gamma_reg: default_gamma_reg(),
            lambda_meta: default_lambda_meta(),
            support_noise: default_meta_noise(),
            query_noise: default_meta_noise(),
            num_tasks: default_num_tasks(),
            margin: default_margin(),
            dataset_size: default_dataset_size(),
            positive_fraction: default_positive_fraction(),
        }
    }

    /// The documented reference smoothness constants for this configuration,
    /// usable before the task's datasets are materialized (e.g. to derive
    /// hyperparameter schedules).
    pub fn reference_constants(&self) -> SmoothnessConstants {
        match self.kind {
            TaskKind::Quadratic => quadratic::reference_constants(self.sigma1, self.sigma2),
            TaskKind::Invlogreg => {
                invlogreg::reference_constants(self.dim, self.sigma1, self.sigma2)
            }
            TaskKind::MamlToy => maml_toy::reference_constants(
                self.dim,
                self.lambda_meta,
                self.support_noise,
                self.query_noise,
            ),
            TaskKind::Auprc => auprc::reference_constants(self.dim),
        }
    }

    /// The inner dimension `d'` implied by the spec.
    pub fn effective_inner_dim(&self) -> usize {
        match self.kind {
            TaskKind::Quadratic => self.inner_dim.unwrap_or(self.dim),
            TaskKind::Invlogreg => 1,
            TaskKind::MamlToy => self.dim,
            TaskKind::Auprc => 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("task dimension must be >= 1".into()));
        }
        let d_inner = self.effective_inner_dim();
        if d_inner == 0 {
            return Err(Error::Config("inner dimension must be >= 1".into()));
        }
        match self.kind {
            TaskKind::Quadratic => {
                if d_inner > self.dim {
                    return Err(Error::Config(format!(
                        "quadratic inner dimension {d_inner} exceeds model dimension {}",
                        self.dim
                    )));
                }
            }
            TaskKind::Invlogreg => {
                if let Some(d) = self.inner_dim {
                    if d != 1 {
                        return Err(Error::Config("invlogreg requires inner dimension 1".into()));
                    }
                }
                if let Some(xs) = &self.x_star {
                    if xs.len() != self.dim {
                        return Err(Error::Config(format!(
                            "x_star has length {}, expected {}",
                            xs.len(),
                            self.dim
                        )));
                    }
                }
                if self.sigma1 <= 0.0 {
                    return Err(Error::Config("invlogreg requires sigma1 > 0".into()));
                }
            }
            TaskKind::MamlToy => {
                if let Some(d) = self.inner_dim {
                    if d != self.dim {
                        return Err(Error::Config(
                            "maml-toy requires inner dimension equal to the model dimension"
                                .into(),
                        ));
                    }
                }
                if self.num_tasks == 0 {
                    return Err(Error::Config("maml-toy requires num_tasks >= 1".into()));
                }
            }
            TaskKind::Auprc => {
                if let Some(d) = self.inner_dim {
                    if d != 2 {
                        return Err(Error::Config("auprc requires inner dimension 2".into()));
                    }
                }
                if !(0.0 < self.positive_fraction && self.positive_fraction < 1.0) {
                    return Err(Error::Config(
                        "auprc positive_fraction must lie in (0, 1)".into(),
                    ));
                }
                if self.dataset_size < 2 {
                    return Err(Error::Config("auprc dataset_size must be >= 2".into()));
                }
            }
        }
        Ok(())
    }

    /// Materialize the task for a federation of `n_workers` workers.
    ///
    /// Datasets, ground-truth parameters and evaluation sets are generated
    /// here from the seed's task-data and evaluation streams; training never
    /// touches those streams again.
    pub fn build(
        &self,
        n_workers: usize,
        seed: u64,
        hetero: bool,
        eval_size: Option<usize>,
    ) -> Result<Box<dyn ConditionalObjective>> {
        self.validate()?;
        if n_workers == 0 {
            return Err(Error::Config("worker count must be >= 1".into()));
        }
        Ok(match self.kind {
            TaskKind::Quadratic => Box::new(QuadraticTask::from_spec(self)),
            TaskKind::Invlogreg => {
                Box::new(InvLogRegTask::from_spec(self, n_workers, seed, hetero, eval_size))
            }
            TaskKind::MamlToy => Box::new(MamlToyTask::from_spec(self, n_workers, seed, hetero)),
            TaskKind::Auprc => Box::new(AuprcTask::from_spec(self, n_workers, seed)),
        })
    }
}

pub(crate) use crate::rng::standard_normal_vec;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        Err(Error::DimensionMismatch { expected, got })
    } else {
        Ok(())
    }
}
