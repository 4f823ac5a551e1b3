//! Invariant logistic regression.
//!
//! Outer sample: features `a ~ N(0, σ1² I_d)` with label `b = sign(aᵀx*)`.
//! Inner sample: perturbed replicas `η | a ~ N(a, σ2² I_d)`.
//! Inner map: `g_η(x) = ηᵀx` (scalar). Outer map: the logistic loss
//! `f(y) = log(1 + exp(−b·y))`.
//!
//! A nonconvex regularizer `λ Σ_i γ x_i² / (1 + γ x_i²)` is exposed
//! separately via [`ConditionalObjective::regularizer_value_grad`]; it is
//! deterministic in `x`, so estimator consumers append its exact gradient to
//! every estimate rather than folding it into `f`.
//!
//! There is no closed-form ∇F; evaluation uses a Monte-Carlo estimate over
//! fresh outer draws with the exact conditional inner mean `E[η | a] = a`.

use ndarray::{Array1, Array2, ArrayView1};

use super::{
    check_dim, standard_normal_vec, ConditionalObjective, InnerBatch, InnerSample, OuterEval,
    OuterSample, SmoothnessConstants, TaskKind, TaskSpec,
};
use crate::error::{Error, Result};
use crate::rng::{rng_stream, StreamPurpose, StreamRng, GLOBAL_SLOT};

/// Outer draws used by the Monte-Carlo gradient estimate.
const MC_GRAD_OUTER: usize = 10_000;

/// Default held-out evaluation set size (outer samples).
pub const DEFAULT_EVAL_SIZE: usize = 50_000;

/// Scale of the per-worker shift applied to x* under heterogeneity.
const HETERO_SHIFT: f64 = 0.1;

/// Reference constants: the logistic loss is 1/4-smooth with gradient bound
/// 1; g is linear in x with E‖η‖² ≈ d(σ1² + σ2²); the inner conditional std
/// of ηᵀx is σ2 per unit ‖x‖.
pub(super) fn reference_constants(dim: usize, sigma1: f64, sigma2: f64) -> SmoothnessConstants {
    let l_g = (dim as f64 * (sigma1 * sigma1 + sigma2 * sigma2)).sqrt();
    SmoothnessConstants::new(0.25, 0.0, 1.0, l_g, sigma2)
}

#[derive(Debug, Clone)]
pub struct InvLogRegTask {
    dim: usize,
    sigma1: f64,
    sigma2: f64,
    lambda_reg: f64,
    gamma_reg: f64,
    /// Per-worker ground-truth directions (all identical unless hetero).
    x_star: Vec<Array1<f64>>,
    /// Held-out evaluation set of (features, label), drawn once.
    eval_set: Vec<(Array1<f64>, f64)>,
    constants: SmoothnessConstants,
}

fn normalize(v: Array1<f64>) -> Array1<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        v
    } else {
        v / norm
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// log(1 + exp(z)) without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl InvLogRegTask {
    pub fn from_spec(
        spec: &TaskSpec,
        n_workers: usize,
        seed: u64,
        hetero: bool,
        eval_size: Option<usize>,
    ) -> Self {
        let dim = spec.dim;
        let base = match &spec.x_star {
            Some(v) => Array1::from_vec(v.clone()),
            None => {
                let mut rng = rng_stream(seed, GLOBAL_SLOT, 0, StreamPurpose::TaskData);
                standard_normal_vec(dim, &mut rng)
            }
        };
        let base = normalize(base);
        let x_star: Vec<Array1<f64>> = (0..n_workers)
            .map(|w| {
                if hetero {
                    let mut rng = rng_stream(seed, w as u64, 0, StreamPurpose::TaskData);
                    let shift = standard_normal_vec(dim, &mut rng);
                    normalize(&base + &(shift * HETERO_SHIFT))
                } else {
                    base.clone()
                }
            })
            .collect();

        // Held-out evaluation set over the worker mixture (round-robin).
        let eval_n = eval_size.unwrap_or(DEFAULT_EVAL_SIZE);
        let mut eval_rng = rng_stream(seed, GLOBAL_SLOT, 0, StreamPurpose::Eval);
        let eval_set = (0..eval_n)
            .map(|i| {
                let a = standard_normal_vec(dim, &mut eval_rng).mapv(|z| spec.sigma1 * z);
                let b = label_for(&x_star[i % n_workers], a.view());
                (a, b)
            })
            .collect();

        let constants = reference_constants(dim, spec.sigma1, spec.sigma2);

        InvLogRegTask {
            dim,
            sigma1: spec.sigma1,
            sigma2: spec.sigma2,
            lambda_reg: spec.lambda_reg,
            gamma_reg: spec.gamma_reg,
            x_star,
            eval_set,
            constants,
        }
    }

    pub fn x_star(&self, worker: usize) -> ArrayView1<'_, f64> {
        self.x_star[worker].view()
    }

    pub fn eval_set_len(&self) -> usize {
        self.eval_set.len()
    }
}

/// Label assigned to a feature vector: the sign of `aᵀx*`, with ties mapped
/// to +1 so labels stay in {−1, +1}.
pub(crate) fn label_for(x_star: &Array1<f64>, a: ArrayView1<f64>) -> f64 {
    if x_star.dot(&a) >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

impl ConditionalObjective for InvLogRegTask {
    fn dim(&self) -> usize {
        self.dim
    }

    fn inner_dim(&self) -> usize {
        1
    }

    fn kind(&self) -> TaskKind {
        TaskKind::Invlogreg
    }

    fn constants(&self) -> &SmoothnessConstants {
        &self.constants
    }

    fn sample_outer(&self, worker: usize, rng: &mut StreamRng) -> OuterSample {
        let a = standard_normal_vec(self.dim, rng).mapv(|z| self.sigma1 * z);
        let label = label_for(&self.x_star[worker % self.x_star.len()], a.view());
        OuterSample::Invlogreg { features: a, label }
    }

    fn sample_inner(
        &self,
        xi: &OuterSample,
        m: usize,
        rng: &mut StreamRng,
    ) -> Result<InnerBatch> {
        let OuterSample::Invlogreg { features, .. } = xi else {
            return Err(Error::InvalidArgument(
                "invlogreg task received a foreign outer sample".into(),
            ));
        };
        if m == 0 {
            return Err(Error::InvalidArgument("inner batch size m must be >= 1".into()));
        }
        let samples = (0..m)
            .map(|_| {
                let noise = standard_normal_vec(self.dim, rng);
                InnerSample::Invlogreg(features + &(noise * self.sigma2))
            })
            .collect();
        InnerBatch::new(samples)
    }

    fn inner_value_jacobian(
        &self,
        x: ArrayView1<f64>,
        _xi: &OuterSample,
        eta: &InnerSample,
    ) -> Result<(Array1<f64>, Array2<f64>)> {
        let InnerSample::Invlogreg(eta) = eta else {
            return Err(Error::InvalidArgument(
                "invlogreg task received a foreign inner sample".into(),
            ));
        };
        check_dim(self.dim, x.len())?;
        check_dim(self.dim, eta.len())?;
        let value = Array1::from_elem(1, eta.dot(&x));
        let mut jac = Array2::zeros((1, self.dim));
        jac.row_mut(0).assign(eta);
        Ok((value, jac))
    }

    fn outer_value_grad(&self, y: ArrayView1<f64>, xi: &OuterSample) -> Result<OuterEval> {
        let OuterSample::Invlogreg { label, .. } = xi else {
            return Err(Error::InvalidArgument(
                "invlogreg task received a foreign outer sample".into(),
            ));
        };
        check_dim(1, y.len())?;
        let margin = label * y[0];
        let value = softplus(-margin);
        let grad = Array1::from_elem(1, -label * sigmoid(-margin));
        Ok(OuterEval {
            value,
            grad,
            clamped: false,
        })
    }

    fn regularizer_value_grad(&self, x: ArrayView1<f64>) -> (f64, Array1<f64>) {
        let lambda = self.lambda_reg;
        let gamma = self.gamma_reg;
        let mut value = 0.0;
        let grad = Array1::from_shape_fn(x.len(), |i| {
            let xi = x[i];
            let denom = 1.0 + gamma * xi * xi;
            value += lambda * gamma * xi * xi / denom;
            lambda * 2.0 * gamma * xi / (denom * denom)
        });
        (value, grad)
    }

    fn exact_gradient_oracle(&self, _x: ArrayView1<f64>) -> Result<Array1<f64>> {
        Err(Error::UnsupportedTask {
            task: "invlogreg",
            what: "an exact gradient oracle (use the Monte-Carlo estimate)",
        })
    }

    fn exact_objective(&self, _x: ArrayView1<f64>) -> Option<f64> {
        None
    }

    /// Monte-Carlo ∇F(x): fresh outer draws with the exact conditional inner
    /// mean `E[η | a] = a`, plus the exact regularizer gradient.
    fn mc_gradient(&self, x: ArrayView1<f64>, rng: &mut StreamRng) -> Option<Array1<f64>> {
        let n_workers = self.x_star.len();
        let mut grad = Array1::<f64>::zeros(self.dim);
        for i in 0..MC_GRAD_OUTER {
            let a = standard_normal_vec(self.dim, rng).mapv(|z| self.sigma1 * z);
            let b = label_for(&self.x_star[i % n_workers], a.view());
            let coeff = -b * sigmoid(-b * a.dot(&x));
            grad.scaled_add(coeff, &a);
        }
        grad.mapv_inplace(|v| v / MC_GRAD_OUTER as f64);
        grad += &self.regularizer_value_grad(x).1;
        Some(grad)
    }

    fn eval_loss(&self, x: ArrayView1<f64>) -> f64 {
        let mut sum = 0.0;
        for (a, b) in &self.eval_set {
            sum += softplus(-b * a.dot(&x));
        }
        sum / self.eval_set.len() as f64 + self.regularizer_value_grad(x).0
    }

    /// Test accuracy: fraction of held-out samples with `sign(aᵀx) == b`.
    fn test_metric(&self, x: ArrayView1<f64>) -> f64 {
        let mut correct = 0usize;
        for (a, b) in &self.eval_set {
            let pred = if a.dot(&x) >= 0.0 { 1.0 } else { -1.0 };
            if pred == *b {
                correct += 1;
            }
        }
        correct as f64 / self.eval_set.len() as f64
    }
}
