//! Analytic quadratic verification task.
//!
//! Outer sample: a scalar multiplier `s ~ N(1, σ1²)` (mean exactly 1).
//! Inner sample: `η | s ~ N(s·1, σ2² I_{d'})`.
//! Inner map: `g_η(x)_i = η_i · x_i` for `i < d'` (Jacobian `diag(η)` padded
//! to `d'×d`). Outer map: `f(y) = ½‖y‖²`.
//!
//! The composed objective is `F(x) = ½(1 + σ1²) Σ_{i<d'} x_i²` with exact
//! gradient `∇F(x)_i = (1 + σ1²)·x_i` on the first `d'` coordinates, while
//! the conditional inner noise makes the batch estimator genuinely biased:
//! `E[∇F̂] − ∇F = (σ2²/m)·x` on those coordinates. That makes this task the
//! oracle for bias-decay and stationarity checks.

use ndarray::{Array1, Array2, ArrayView1};
use rand_distr::StandardNormal;

use super::{
    check_dim, standard_normal_vec, ConditionalObjective, InnerBatch, InnerSample, OuterEval,
    OuterSample, SmoothnessConstants, TaskKind, TaskSpec,
};
use crate::error::{Error, Result};
use crate::rng::StreamRng;

#[derive(Debug, Clone)]
pub struct QuadraticTask {
    dim: usize,
    inner_dim: usize,
    sigma1: f64,
    sigma2: f64,
    constants: SmoothnessConstants,
}

/// Reference estimates over the |x| = O(1) operating region: f is exactly
/// 1-smooth, g is linear in x, gradients scale with the multiplier noise.
pub(super) fn reference_constants(sigma1: f64, sigma2: f64) -> SmoothnessConstants {
    let l_g = 1.0 + sigma1 + sigma2;
    SmoothnessConstants::new(1.0, 0.0, 2.0, l_g, sigma2)
}

impl QuadraticTask {
    pub fn new(dim: usize, inner_dim: usize, sigma1: f64, sigma2: f64) -> Self {
        assert!(inner_dim >= 1 && inner_dim <= dim);
        let constants = reference_constants(sigma1, sigma2);
        QuadraticTask {
            dim,
            inner_dim,
            sigma1,
            sigma2,
            constants,
        }
    }

    pub fn from_spec(spec: &TaskSpec) -> Self {
        QuadraticTask::new(
            spec.dim,
            spec.effective_inner_dim(),
            spec.sigma1,
            spec.sigma2,
        )
    }

    /// Second moment of the outer multiplier, `E[s²] = 1 + σ1²`.
    fn multiplier_second_moment(&self) -> f64 {
        1.0 + self.sigma1 * self.sigma1
    }
}

impl ConditionalObjective for QuadraticTask {
    fn dim(&self) -> usize {
        self.dim
    }

    fn inner_dim(&self) -> usize {
        self.inner_dim
    }

    fn kind(&self) -> TaskKind {
        TaskKind::Quadratic
    }

    fn constants(&self) -> &SmoothnessConstants {
        &self.constants
    }

    fn sample_outer(&self, _worker: usize, rng: &mut StreamRng) -> OuterSample {
        let z: f64 = rand::Rng::sample(rng, StandardNormal);
        OuterSample::Quadratic {
            multiplier: 1.0 + self.sigma1 * z,
        }
    }

    fn sample_inner(
        &self,
        xi: &OuterSample,
        m: usize,
        rng: &mut StreamRng,
    ) -> Result<InnerBatch> {
        let OuterSample::Quadratic { multiplier } = xi else {
            return Err(Error::InvalidArgument(
                "quadratic task received a foreign outer sample".into(),
            ));
        };
        if m == 0 {
            return Err(Error::InvalidArgument("inner batch size m must be >= 1".into()));
        }
        let samples = (0..m)
            .map(|_| {
                let noise = standard_normal_vec(self.inner_dim, rng);
                InnerSample::Quadratic(noise.mapv(|z| multiplier + self.sigma2 * z))
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
        let InnerSample::Quadratic(eta) = eta else {
            return Err(Error::InvalidArgument(
                "quadratic task received a foreign inner sample".into(),
            ));
        };
        check_dim(self.dim, x.len())?;
        check_dim(self.inner_dim, eta.len())?;
        let value = Array1::from_shape_fn(self.inner_dim, |i| eta[i] * x[i]);
        let mut jac = Array2::zeros((self.inner_dim, self.dim));
        for i in 0..self.inner_dim {
            jac[[i, i]] = eta[i];
        }
        Ok((value, jac))
    }

    fn outer_value_grad(&self, y: ArrayView1<f64>, _xi: &OuterSample) -> Result<OuterEval> {
        check_dim(self.inner_dim, y.len())?;
        let value = 0.5 * y.iter().map(|v| v * v).sum::<f64>();
        Ok(OuterEval {
            value,
            grad: y.to_owned(),
            clamped: false,
        })
    }

    fn exact_gradient_oracle(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        check_dim(self.dim, x.len())?;
        let m2 = self.multiplier_second_moment();
        let mut g = Array1::zeros(self.dim);
        for i in 0..self.inner_dim {
            g[i] = m2 * x[i];
        }
        Ok(g)
    }

    fn exact_objective(&self, x: ArrayView1<f64>) -> Option<f64> {
        let m2 = self.multiplier_second_moment();
        Some(0.5 * m2 * x.iter().take(self.inner_dim).map(|v| v * v).sum::<f64>())
    }
}
