//! Average-precision surrogate on synthetic imbalanced data.
//!
//! Each worker owns a fixed dataset shard generated at construction. The
//! outer sample ξ⁺ is one positive example drawn uniformly from the worker's
//! positive subset; inner samples ξ' are drawn uniformly from the full shard
//! (the conditional law does not depend on ξ⁺, but the pairwise loss below
//! depends on both).
//!
//! With the squared hinge `ℓ(x; z⁺, z') = max{s − h(x;z⁺) + h(x;z'), 0}²`
//! and linear scores `h(x; z) = xᵀz`, the inner map is
//!
//! ```text
//! g(x; ξ⁺, ξ') = ( 1(y'=1)·ℓ(x; z⁺, z'),  ℓ(x; z⁺, z') ) ∈ R²
//! ```
//!
//! and the outer map `f(y) = −y₁/y₂` is the negated per-positive precision
//! fraction, so minimizing F maximizes the surrogate average precision. The
//! exact oracle is the full finite double sum over (positive, dataset) pairs.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;

use super::{
    check_dim, standard_normal_vec, ConditionalObjective, InnerBatch, InnerSample, OuterEval,
    OuterSample, SmoothnessConstants, TaskKind, TaskSpec,
};
use crate::error::{Error, Result};
use crate::metrics::average_precision;
use crate::rng::{rng_stream, StreamPurpose, StreamRng, GLOBAL_SLOT};

/// Denominator guard for the precision fraction.
pub const DENOMINATOR_EPS: f64 = 1e-8;

/// Separation of the synthetic class means along the all-ones direction.
const CLASS_SEPARATION: f64 = 1.5;

/// A slice of the negative class sits close to the positive mean along the
/// class axis but displaced along an orthogonal direction ("hard
/// negatives"): they crowd the top of the ranking, where average precision
/// is decided, and a scorer only demotes them by learning the orthogonal
/// component.
const HARD_NEGATIVE_FRACTION: f64 = 0.15;
const HARD_NEGATIVE_SCALE: f64 = 0.8;
const HARD_NEGATIVE_ORTHO: f64 = 2.0;

/// Class spreads. The positive cluster is tight, so the per-positive
/// precision fraction can only grow by demoting negatives (ranking), not by
/// spreading positive scores.
const POSITIVE_SPREAD: f64 = 0.35;
const NEGATIVE_SPREAD: f64 = 1.0;
const HARD_NEGATIVE_SPREAD: f64 = 0.5;

/// Crude reference estimates: the hinge-square curvature scales with
/// pairwise feature distances, the fraction f is smooth away from the
/// denominator guard.
pub(super) fn reference_constants(dim: usize) -> SmoothnessConstants {
    SmoothnessConstants::new(4.0, 4.0 * dim as f64, 2.0, 4.0, 1.0)
}

#[derive(Debug, Clone)]
struct Shard {
    features: Vec<Array1<f64>>,
    labels: Vec<f64>,
    positives: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct AuprcTask {
    dim: usize,
    margin: f64,
    shards: Vec<Shard>,
    test_features: Vec<Array1<f64>>,
    test_labels: Vec<f64>,
    constants: SmoothnessConstants,
}

fn class_mean(dim: usize, sign: f64) -> Array1<f64> {
    Array1::from_elem(dim, sign * CLASS_SEPARATION / (dim as f64).sqrt())
}

/// Alternating ±1/√d pattern, orthogonal to the all-ones class axis when
/// the dimension is even (the trailing coordinate is dropped when odd).
fn ortho_direction(dim: usize) -> Array1<f64> {
    let scale = 1.0 / (dim as f64).sqrt();
    Array1::from_shape_fn(dim, |i| {
        if dim % 2 == 1 && i == dim - 1 {
            0.0
        } else if i % 2 == 0 {
            scale
        } else {
            -scale
        }
    })
}

fn generate_points(
    dim: usize,
    n_total: usize,
    n_pos: usize,
    rng: &mut StreamRng,
) -> (Vec<Array1<f64>>, Vec<f64>) {
    let mu_pos = class_mean(dim, 1.0);
    let mu_neg = class_mean(dim, -1.0);
    let hard_mean = &(&mu_pos * HARD_NEGATIVE_SCALE) + &(ortho_direction(dim) * HARD_NEGATIVE_ORTHO);
    let mut features = Vec::with_capacity(n_total);
    let mut labels = Vec::with_capacity(n_total);
    for i in 0..n_total {
        let noise = standard_normal_vec(dim, rng);
        if i < n_pos {
            features.push(&mu_pos + &(noise * POSITIVE_SPREAD));
            labels.push(1.0);
        } else {
            let hard: f64 = rng.random();
            if hard < HARD_NEGATIVE_FRACTION {
                features.push(&hard_mean + &(noise * HARD_NEGATIVE_SPREAD));
            } else {
                features.push(&mu_neg + &(noise * NEGATIVE_SPREAD));
            }
            labels.push(-1.0);
        }
    }
    (features, labels)
}

impl AuprcTask {
    pub fn from_spec(spec: &TaskSpec, n_workers: usize, seed: u64) -> Self {
        let dim = spec.dim;
        let shard_size = (spec.dataset_size / n_workers).max(2);
        let n_pos = ((shard_size as f64 * spec.positive_fraction).round() as usize)
            .clamp(1, shard_size - 1);

        let shards = (0..n_workers)
            .map(|w| {
                let mut rng = rng_stream(seed, w as u64, 0, StreamPurpose::TaskData);
                let (features, labels) = generate_points(dim, shard_size, n_pos, &mut rng);
                let positives = (0..n_pos).collect();
                Shard {
                    features,
                    labels,
                    positives,
                }
            })
            .collect();

        let mut test_rng = rng_stream(seed, GLOBAL_SLOT, 2, StreamPurpose::TaskData);
        let test_total = spec.dataset_size.max(2);
        let test_pos = ((test_total as f64 * spec.positive_fraction).round() as usize)
            .clamp(1, test_total - 1);
        let (test_features, test_labels) = generate_points(dim, test_total, test_pos, &mut test_rng);

        let constants = reference_constants(dim);

        AuprcTask {
            dim,
            margin: spec.margin,
            shards,
            test_features,
            test_labels,
            constants,
        }
    }

    /// Squared hinge with subgradient 0 exactly at the kink.
    fn pair_loss(&self, x: ArrayView1<f64>, z_pos: &Array1<f64>, z: &Array1<f64>) -> (f64, f64) {
        let arg = self.margin - z_pos.dot(&x) + z.dot(&x);
        if arg > 0.0 {
            (arg * arg, 2.0 * arg)
        } else {
            (0.0, 0.0)
        }
    }

    /// Exact per-worker mean of `g` over the full shard for one positive,
    /// with the mean Jacobian. Sums run in dataset index order.
    fn exact_inner_mean(
        &self,
        x: ArrayView1<f64>,
        shard: &Shard,
        z_pos: &Array1<f64>,
    ) -> (f64, f64, Array1<f64>, Array1<f64>) {
        let n = shard.features.len() as f64;
        let mut num = 0.0;
        let mut den = 0.0;
        let mut num_grad = Array1::<f64>::zeros(self.dim);
        let mut den_grad = Array1::<f64>::zeros(self.dim);
        for (z, y) in shard.features.iter().zip(&shard.labels) {
            let (loss, dloss) = self.pair_loss(x, z_pos, z);
            den += loss;
            if dloss != 0.0 {
                // dℓ/dx = 2·arg·(z − z⁺)
                den_grad.scaled_add(dloss, z);
                den_grad.scaled_add(-dloss, z_pos);
            }
            if *y == 1.0 {
                num += loss;
                if dloss != 0.0 {
                    num_grad.scaled_add(dloss, z);
                    num_grad.scaled_add(-dloss, z_pos);
                }
            }
        }
        (num / n, den / n, num_grad / n, den_grad / n)
    }

    pub fn shard_sizes(&self) -> Vec<(usize, usize)> {
        self.shards
            .iter()
            .map(|s| (s.positives.len(), s.features.len()))
            .collect()
    }

    /// A worker's raw dataset shard, for reference baselines that train
    /// directly on the points.
    pub fn shard(&self, worker: usize) -> (&[Array1<f64>], &[f64]) {
        let s = &self.shards[worker % self.shards.len()];
        (&s.features, &s.labels)
    }

    pub fn test_set(&self) -> (&[Array1<f64>], &[f64]) {
        (&self.test_features, &self.test_labels)
    }
}

impl ConditionalObjective for AuprcTask {
    fn dim(&self) -> usize {
        self.dim
    }

    fn inner_dim(&self) -> usize {
        2
    }

    fn kind(&self) -> TaskKind {
        TaskKind::Auprc
    }

    fn constants(&self) -> &SmoothnessConstants {
        &self.constants
    }

    fn sample_outer(&self, worker: usize, rng: &mut StreamRng) -> OuterSample {
        let worker = worker % self.shards.len();
        let shard = &self.shards[worker];
        let idx = shard.positives[rng.random_range(0..shard.positives.len())];
        OuterSample::Auprc {
            worker,
            positive: shard.features[idx].clone(),
        }
    }

    fn sample_inner(
        &self,
        xi: &OuterSample,
        m: usize,
        rng: &mut StreamRng,
    ) -> Result<InnerBatch> {
        let OuterSample::Auprc { worker, .. } = xi else {
            return Err(Error::InvalidArgument(
                "auprc task received a foreign outer sample".into(),
            ));
        };
        if m == 0 {
            return Err(Error::InvalidArgument("inner batch size m must be >= 1".into()));
        }
        // Uniform over the owning worker's full shard; the conditional law is
        // degenerate in ξ⁺ but the pairwise loss depends on both samples.
        let shard = &self.shards[worker % self.shards.len()];
        let samples = (0..m)
            .map(|_| {
                let idx = rng.random_range(0..shard.features.len());
                InnerSample::Auprc {
                    features: shard.features[idx].clone(),
                    label: shard.labels[idx],
                }
            })
            .collect();
        InnerBatch::new(samples)
    }

    fn inner_value_jacobian(
        &self,
        x: ArrayView1<f64>,
        xi: &OuterSample,
        eta: &InnerSample,
    ) -> Result<(Array1<f64>, Array2<f64>)> {
        let OuterSample::Auprc { positive, .. } = xi else {
            return Err(Error::InvalidArgument(
                "auprc task received a foreign outer sample".into(),
            ));
        };
        let InnerSample::Auprc { features, label } = eta else {
            return Err(Error::InvalidArgument(
                "auprc task received a foreign inner sample".into(),
            ));
        };
        check_dim(self.dim, x.len())?;
        check_dim(self.dim, features.len())?;
        let (loss, dloss) = self.pair_loss(x, positive, features);
        let indicator = if *label == 1.0 { 1.0 } else { 0.0 };
        let value = Array1::from_vec(vec![indicator * loss, loss]);
        let mut jac = Array2::zeros((2, self.dim));
        if dloss != 0.0 {
            for i in 0..self.dim {
                let di = dloss * (features[i] - positive[i]);
                jac[[0, i]] = indicator * di;
                jac[[1, i]] = di;
            }
        }
        Ok((value, jac))
    }

    fn outer_value_grad(&self, y: ArrayView1<f64>, _xi: &OuterSample) -> Result<OuterEval> {
        check_dim(2, y.len())?;
        let clamped = y[1] < DENOMINATOR_EPS;
        let den = if clamped { DENOMINATOR_EPS } else { y[1] };
        let value = -y[0] / den;
        let grad = Array1::from_vec(vec![-1.0 / den, y[0] / (den * den)]);
        Ok(OuterEval {
            value,
            grad,
            clamped,
        })
    }

    /// Full finite-sum gradient over the stored datasets, by brute force.
    fn exact_gradient_oracle(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        check_dim(self.dim, x.len())?;
        let mut grad = Array1::<f64>::zeros(self.dim);
        for shard in &self.shards {
            let mut shard_grad = Array1::<f64>::zeros(self.dim);
            for &p in &shard.positives {
                let z_pos = &shard.features[p];
                let (num, den, num_grad, den_grad) = self.exact_inner_mean(x, shard, z_pos);
                let den = den.max(DENOMINATOR_EPS);
                // ∇(−num/den) = −∇num/den + num·∇den/den²
                shard_grad.scaled_add(-1.0 / den, &num_grad);
                shard_grad.scaled_add(num / (den * den), &den_grad);
            }
            grad += &(shard_grad / shard.positives.len() as f64);
        }
        Ok(grad / self.shards.len() as f64)
    }

    fn exact_objective(&self, x: ArrayView1<f64>) -> Option<f64> {
        let mut total = 0.0;
        for shard in &self.shards {
            let mut shard_sum = 0.0;
            for &p in &shard.positives {
                let z_pos = &shard.features[p];
                let (num, den, _, _) = self.exact_inner_mean(x, shard, z_pos);
                shard_sum += -num / den.max(DENOMINATOR_EPS);
            }
            total += shard_sum / shard.positives.len() as f64;
        }
        Some(total / self.shards.len() as f64)
    }

    /// Average precision of the linear scores on the held-out test set.
    fn test_metric(&self, x: ArrayView1<f64>) -> f64 {
        let scores: Vec<f64> = self.test_features.iter().map(|z| z.dot(&x)).collect();
        average_precision(&scores, &self.test_labels).unwrap_or(f64::NAN)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    fn small_task(seed: u64) -> AuprcTask {
        let mut spec = TaskSpec::new(TaskKind::Auprc, 4);
        spec.dataset_size = 40;
        spec.positive_fraction = 0.2;
        AuprcTask::from_spec(&spec, 2, seed)
    }

    #[test]
    fn outer_samples_are_positives() {
        let task = small_task(5);
        let mut rng = rng_stream(5, 0, 1, StreamPurpose::Outer);
        for _ in 0..50 {
            let OuterSample::Auprc { worker, positive } = task.sample_outer(0, &mut rng)
            else {
                unreachable!()
            };
            assert_eq!(worker, 0);
            let shard = &task.shards[0];
            assert!(shard
                .positives
                .iter()
                .any(|&i| shard.features[i] == positive));
        }
    }

    #[test]
    fn clamped_hinge_is_flat() {
        // h(x;z⁺)=2, h(x;z)=0.5, margin 1 → max{1−2+0.5, 0} = 0.
        let mut spec = TaskSpec::new(TaskKind::Auprc, 2);
        spec.dataset_size = 10;
        spec.margin = 1.0;
        let task = AuprcTask::from_spec(&spec, 1, 3);
        let x = array![1.0, 0.0];
        let xi = OuterSample::Auprc {
            worker: 0,
            positive: array![2.0, 0.0],
        };
        let eta = InnerSample::Auprc {
            features: array![0.5, 0.0],
            label: -1.0,
        };
        let (v, j) = task.inner_value_jacobian(x.view(), &xi, &eta).unwrap();
        assert_eq!(v, array![0.0, 0.0]);
        assert!(j.iter().all(|&e| e == 0.0));
    }

    #[test]
    fn active_hinge_value_and_jacobian() {
        let mut spec = TaskSpec::new(TaskKind::Auprc, 2);
        spec.dataset_size = 10;
        spec.margin = 1.0;
        let task = AuprcTask::from_spec(&spec, 1, 3);
        let x = array![1.0, 0.0];
        let xi = OuterSample::Auprc {
            worker: 0,
            positive: array![0.5, 0.0],
        };
        let eta = InnerSample::Auprc {
            features: array![1.0, 1.0],
            label: 1.0,
        };
        // arg = 1 − 0.5 + 1 = 1.5, ℓ = 2.25, dℓ = 3·(z − z⁺)
        let (v, j) = task.inner_value_jacobian(x.view(), &xi, &eta).unwrap();
        assert_relative_eq!(v[0], 2.25, epsilon = 1e-15);
        assert_relative_eq!(v[1], 2.25, epsilon = 1e-15);
        assert_relative_eq!(j[[1, 0]], 3.0 * 0.5, epsilon = 1e-15);
        assert_relative_eq!(j[[1, 1]], 3.0 * 1.0, epsilon = 1e-15);
    }

    #[test]
    fn negated_fraction_gradient() {
        let task = small_task(5);
        let xi = OuterSample::Auprc {
            worker: 0,
            positive: Array1::zeros(4),
        };
        let eval = task
            .outer_value_grad(array![0.5, 1.0].view(), &xi)
            .unwrap();
        assert_relative_eq!(eval.value, -0.5, epsilon = 1e-15);
        assert_relative_eq!(eval.grad[0], -1.0, epsilon = 1e-15);
        assert_relative_eq!(eval.grad[1], 0.5, epsilon = 1e-15);
        assert!(!eval.clamped);
    }

    #[test]
    fn denominator_guard_clamps_and_flags() {
        let task = small_task(5);
        let xi = OuterSample::Auprc {
            worker: 0,
            positive: Array1::zeros(4),
        };
        let eval = task
            .outer_value_grad(array![0.0, 0.0].view(), &xi)
            .unwrap();
        assert!(eval.clamped);
        assert!(eval.value.is_finite());
    }

    #[test]
    fn oracle_matches_independent_loop_ordering() {
        // Recompute the double sum with the loops inverted (dataset point
        // outer, positives inner) and compare.
        let task = small_task(7);
        let x = array![0.3, -0.2, 0.5, 0.1];

        let oracle = task.exact_gradient_oracle(x.view()).unwrap();

        let mut grad = Array1::<f64>::zeros(task.dim);
        for shard in &task.shards {
            let n = shard.features.len() as f64;
            let mut shard_grad = Array1::<f64>::zeros(task.dim);
            for &p in &shard.positives {
                let z_pos = &shard.features[p];
                // Accumulate num/den means by walking pairs in reverse order.
                let mut num = 0.0;
                let mut den = 0.0;
                let mut num_grad = Array1::<f64>::zeros(task.dim);
                let mut den_grad = Array1::<f64>::zeros(task.dim);
                for k in (0..shard.features.len()).rev() {
                    let z = &shard.features[k];
                    let (loss, dloss) = task.pair_loss(x.view(), z_pos, z);
                    den += loss / n;
                    den_grad.scaled_add(dloss / n, &(z - z_pos));
                    if shard.labels[k] == 1.0 {
                        num += loss / n;
                        num_grad.scaled_add(dloss / n, &(z - z_pos));
                    }
                }
                let den = den.max(DENOMINATOR_EPS);
                shard_grad.scaled_add(-1.0 / den, &num_grad);
                shard_grad.scaled_add(num / (den * den), &den_grad);
            }
            grad += &(shard_grad / shard.positives.len() as f64);
        }
        grad /= task.shards.len() as f64;

        for i in 0..task.dim {
            assert_relative_eq!(oracle[i], grad[i], max_relative = 1e-10, epsilon = 1e-12);
        }
    }

    #[test]
    fn objective_invariant_under_dataset_duplication() {
        let task = small_task(11);
        let x = array![0.4, 0.1, -0.3, 0.2];
        let base = task.exact_objective(x.view()).unwrap();

        let mut doubled = task.clone();
        for shard in &mut doubled.shards {
            let f = shard.features.clone();
            let l = shard.labels.clone();
            let offset = shard.features.len();
            shard.features.extend(f);
            shard.labels.extend(l);
            let extra: Vec<usize> = shard.positives.iter().map(|&i| i + offset).collect();
            shard.positives.extend(extra);
        }
        let dup = doubled.exact_objective(x.view()).unwrap();
        assert_relative_eq!(base, dup, max_relative = 1e-12);
    }
}
