//! Toy meta-learning objective with a closed-form gradient.
//!
//! Each worker holds a shard of task means `θ_i ~ N(0, I_d)` fixed at
//! construction. Outer sample: a task index `i` plus a query point
//! `a ~ N(θ_i, σ_q² I)`. Inner sample: support points `η ~ N(θ_i, σ_s² I)`
//! conditioned on the sampled task. The inner map is one adaptation step on
//! the squared loss, `g_η(x) = x − λ(x − η)`, and the outer map is the query
//! loss `f(y) = ½‖y − a‖²`.
//!
//! The composition stays analytic:
//!
//! ```text
//! F(x) = ½(1−λ)²·mean_{n,i} ‖x − θ_i^n‖² + ½σ_q²·d,
//! ∇F(x) = (1−λ)²·(x − θ̄),   θ̄ = mean of all task means,
//! ```
//!
//! which makes the task the oracle for speedup and convergence checks while
//! keeping the two-level conditional sampling structure intact.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;

use super::{
    check_dim, standard_normal_vec, ConditionalObjective, InnerBatch, InnerSample, OuterEval,
    OuterSample, SmoothnessConstants, TaskKind, TaskSpec,
};
use crate::error::{Error, Result};
use crate::rng::{rng_stream, StreamPurpose, StreamRng, GLOBAL_SLOT};

const HETERO_SHIFT: f64 = 0.1;

/// f is exactly 1-smooth, g is affine in x with slope 1−λ. Gradient norms
/// estimated over the ‖x − θ‖ = O(1) operating region.
pub(super) fn reference_constants(
    dim: usize,
    lambda_meta: f64,
    support_noise: f64,
    query_noise: f64,
) -> SmoothnessConstants {
    SmoothnessConstants::new(
        1.0,
        0.0,
        2.0 + query_noise,
        (1.0 - lambda_meta).abs(),
        lambda_meta.abs() * support_noise * (dim as f64).sqrt(),
    )
}

#[derive(Debug, Clone)]
pub struct MamlToyTask {
    dim: usize,
    lambda_meta: f64,
    support_noise: f64,
    query_noise: f64,
    /// `shards[worker][task]` — task means per worker.
    shards: Vec<Vec<Array1<f64>>>,
    /// Mean of all task means across workers.
    theta_bar: Array1<f64>,
    constants: SmoothnessConstants,
}

impl MamlToyTask {
    pub fn from_spec(spec: &TaskSpec, n_workers: usize, seed: u64, hetero: bool) -> Self {
        let dim = spec.dim;
        let mut rng = rng_stream(seed, GLOBAL_SLOT, 1, StreamPurpose::TaskData);
        let base: Vec<Array1<f64>> = (0..spec.num_tasks)
            .map(|_| standard_normal_vec(dim, &mut rng))
            .collect();
        let shards: Vec<Vec<Array1<f64>>> = (0..n_workers)
            .map(|w| {
                if hetero {
                    let mut wrng = rng_stream(seed, w as u64, 0, StreamPurpose::TaskData);
                    let shift = standard_normal_vec(dim, &mut wrng) * HETERO_SHIFT;
                    base.iter().map(|t| t + &shift).collect()
                } else {
                    base.clone()
                }
            })
            .collect();

        let mut theta_bar = Array1::<f64>::zeros(dim);
        for shard in &shards {
            for theta in shard {
                theta_bar += theta;
            }
        }
        theta_bar /= (n_workers * spec.num_tasks) as f64;

        let constants =
            reference_constants(dim, spec.lambda_meta, spec.support_noise, spec.query_noise);

        MamlToyTask {
            dim,
            lambda_meta: spec.lambda_meta,
            support_noise: spec.support_noise,
            query_noise: spec.query_noise,
            shards,
            theta_bar,
            constants,
        }
    }

    fn task_mean(&self, worker: usize, task_index: usize) -> &Array1<f64> {
        &self.shards[worker % self.shards.len()][task_index]
    }
}

impl ConditionalObjective for MamlToyTask {
    fn dim(&self) -> usize {
        self.dim
    }

    fn inner_dim(&self) -> usize {
        self.dim
    }

    fn kind(&self) -> TaskKind {
        TaskKind::MamlToy
    }

    fn constants(&self) -> &SmoothnessConstants {
        &self.constants
    }

    fn sample_outer(&self, worker: usize, rng: &mut StreamRng) -> OuterSample {
        let worker = worker % self.shards.len();
        let shard = &self.shards[worker];
        let task_index = rng.random_range(0..shard.len());
        let noise = standard_normal_vec(self.dim, rng);
        let query = &shard[task_index] + &(noise * self.query_noise);
        OuterSample::MamlToy {
            worker,
            task_index,
            query,
        }
    }

    fn sample_inner(
        &self,
        xi: &OuterSample,
        m: usize,
        rng: &mut StreamRng,
    ) -> Result<InnerBatch> {
        let OuterSample::MamlToy {
            worker, task_index, ..
        } = xi
        else {
            return Err(Error::InvalidArgument(
                "maml-toy task received a foreign outer sample".into(),
            ));
        };
        if m == 0 {
            return Err(Error::InvalidArgument("inner batch size m must be >= 1".into()));
        }
        // The conditional law depends on ξ through the sampled task only.
        let theta = self.task_mean(*worker, *task_index);
        let samples = (0..m)
            .map(|_| {
                let noise = standard_normal_vec(self.dim, rng);
                InnerSample::MamlToy(theta + &(noise * self.support_noise))
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
        let InnerSample::MamlToy(eta) = eta else {
            return Err(Error::InvalidArgument(
                "maml-toy task received a foreign inner sample".into(),
            ));
        };
        check_dim(self.dim, x.len())?;
        check_dim(self.dim, eta.len())?;
        let one_minus = 1.0 - self.lambda_meta;
        let value = Array1::from_shape_fn(self.dim, |i| one_minus * x[i] + self.lambda_meta * eta[i]);
        let mut jac = Array2::zeros((self.dim, self.dim));
        for i in 0..self.dim {
            jac[[i, i]] = one_minus;
        }
        Ok((value, jac))
    }

    fn outer_value_grad(&self, y: ArrayView1<f64>, xi: &OuterSample) -> Result<OuterEval> {
        let OuterSample::MamlToy { query, .. } = xi else {
            return Err(Error::InvalidArgument(
                "maml-toy task received a foreign outer sample".into(),
            ));
        };
        check_dim(self.dim, y.len())?;
        let diff = &y.to_owned() - query;
        let value = 0.5 * diff.dot(&diff);
        Ok(OuterEval {
            value,
            grad: diff,
            clamped: false,
        })
    }

    fn exact_gradient_oracle(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        check_dim(self.dim, x.len())?;
        let one_minus_sq = (1.0 - self.lambda_meta).powi(2);
        Ok((&x.to_owned() - &self.theta_bar) * one_minus_sq)
    }

    fn exact_objective(&self, x: ArrayView1<f64>) -> Option<f64> {
        let one_minus_sq = (1.0 - self.lambda_meta).powi(2);
        let mut sum = 0.0;
        let mut count = 0usize;
        for shard in &self.shards {
            for theta in shard {
                let diff = &x.to_owned() - theta;
                sum += diff.dot(&diff);
                count += 1;
            }
        }
        Some(
            0.5 * one_minus_sq * sum / count as f64
                + 0.5 * self.query_noise * self.query_noise * self.dim as f64,
        )
    }
}
