//! Finite-difference checks of every task's analytic derivatives: Jacobian
//! columns of the inner map, gradients of the outer map, and the
//! regularizer. Step size h = 1e-6·max(1, |coordinate|), relative tolerance
//! 1e-5 throughout.

use fedcso::estimator::empirical_inner_mean;
use fedcso::objectives::{ConditionalObjective, TaskKind, TaskSpec};
use fedcso::rng::{rng_stream, standard_normal_vec, StreamPurpose};
use ndarray::Array1;

fn tasks_under_test() -> Vec<(TaskSpec, Box<dyn ConditionalObjective>)> {
    let mut out = Vec::new();
    let mut quad = TaskSpec::new(TaskKind::Quadratic, 4);
    quad.inner_dim = Some(3);
    quad.sigma1 = 0.5;
    out.push((quad.clone(), quad.build(2, 5, false, None).unwrap()));

    let invlog = TaskSpec::new(TaskKind::Invlogreg, 6);
    out.push((invlog.clone(), invlog.build(2, 5, false, Some(100)).unwrap()));

    let mut maml = TaskSpec::new(TaskKind::MamlToy, 5);
    maml.num_tasks = 3;
    out.push((maml.clone(), maml.build(2, 5, true, None).unwrap()));

    let mut auprc = TaskSpec::new(TaskKind::Auprc, 6);
    auprc.dataset_size = 60;
    auprc.positive_fraction = 0.25;
    out.push((auprc.clone(), auprc.build(2, 5, false, None).unwrap()));
    out
}

fn rel_close(analytic: f64, fd: f64) -> bool {
    (analytic - fd).abs() <= 1e-5 * analytic.abs().max(fd.abs()).max(1e-3)
}

#[test]
fn inner_jacobian_matches_finite_differences() {
    for (spec, task) in tasks_under_test() {
        for trial in 0..10u64 {
            let mut outer_rng = rng_stream(11, trial, 1, StreamPurpose::Outer);
            let mut inner_rng = rng_stream(11, trial, 1, StreamPurpose::Inner);
            let xi = task.sample_outer(0, &mut outer_rng);
            let batch = task.sample_inner(&xi, 1, &mut inner_rng).unwrap();
            let eta = &batch.samples()[0];
            let x = standard_normal_vec(
                task.dim(),
                &mut rng_stream(11, trial, 2, StreamPurpose::Eval),
            );
            let (_, jac) = task.inner_value_jacobian(x.view(), &xi, eta).unwrap();
            for i in 0..task.dim() {
                let h = 1e-6 * x[i].abs().max(1.0);
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                let (vp, _) = task.inner_value_jacobian(xp.view(), &xi, eta).unwrap();
                let (vm, _) = task.inner_value_jacobian(xm.view(), &xi, eta).unwrap();
                for k in 0..task.inner_dim() {
                    let fd = (vp[k] - vm[k]) / (2.0 * h);
                    assert!(
                        rel_close(jac[[k, i]], fd),
                        "{} trial {trial}: J[{k},{i}] = {} vs fd {}",
                        spec.kind.name(),
                        jac[[k, i]],
                        fd
                    );
                }
            }
        }
    }
}

#[test]
fn outer_gradient_matches_finite_differences() {
    for (spec, task) in tasks_under_test() {
        for trial in 0..10u64 {
            let mut outer_rng = rng_stream(13, trial, 1, StreamPurpose::Outer);
            let xi = task.sample_outer(0, &mut outer_rng);
            let mut y = standard_normal_vec(
                task.inner_dim(),
                &mut rng_stream(13, trial, 2, StreamPurpose::Eval),
            );
            if spec.kind == TaskKind::Auprc {
                // Keep the denominator comfortably away from the guard.
                y[1] = y[1].abs() + 0.5;
            }
            let eval = task.outer_value_grad(y.view(), &xi).unwrap();
            for k in 0..task.inner_dim() {
                let h = 1e-6 * y[k].abs().max(1.0);
                let mut yp = y.clone();
                let mut ym = y.clone();
                yp[k] += h;
                ym[k] -= h;
                let fp = task.outer_value_grad(yp.view(), &xi).unwrap().value;
                let fm = task.outer_value_grad(ym.view(), &xi).unwrap().value;
                let fd = (fp - fm) / (2.0 * h);
                assert!(
                    rel_close(eval.grad[k], fd),
                    "{} trial {trial}: grad[{k}] = {} vs fd {}",
                    spec.kind.name(),
                    eval.grad[k],
                    fd
                );
            }
        }
    }
}

#[test]
fn regularizer_gradient_matches_finite_differences() {
    let spec = TaskSpec::new(TaskKind::Invlogreg, 6);
    let task = spec.build(1, 5, false, Some(10)).unwrap();
    for trial in 0..10u64 {
        let x = standard_normal_vec(6, &mut rng_stream(17, trial, 0, StreamPurpose::Eval));
        let (_, grad) = task.regularizer_value_grad(x.view());
        for i in 0..6 {
            let h = 1e-6 * x[i].abs().max(1.0);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (task.regularizer_value_grad(xp.view()).0
                - task.regularizer_value_grad(xm.view()).0)
                / (2.0 * h);
            assert!(
                rel_close(grad[i], fd),
                "trial {trial}: reg grad[{i}] = {} vs fd {}",
                grad[i],
                fd
            );
        }
    }
}

#[test]
fn degenerate_inner_noise_mean_is_exact() {
    // σ2 = 0 inner batches replicate a bitwise, so the empirical inner mean
    // equals aᵀx for any m.
    let mut spec = TaskSpec::new(TaskKind::Invlogreg, 5);
    spec.sigma2 = 0.0;
    let task = spec.build(1, 19, false, Some(10)).unwrap();
    let mut outer_rng = rng_stream(19, 0, 1, StreamPurpose::Outer);
    let mut inner_rng = rng_stream(19, 0, 1, StreamPurpose::Inner);
    let x = standard_normal_vec(5, &mut rng_stream(19, 0, 2, StreamPurpose::Eval));
    for m in [1usize, 2, 3, 5, 8, 100] {
        let xi = task.sample_outer(0, &mut outer_rng);
        let a_dot_x = match &xi {
            fedcso::objectives::OuterSample::Invlogreg { features, .. } => features.dot(&x),
            _ => unreachable!(),
        };
        let batch = task.sample_inner(&xi, m, &mut inner_rng).unwrap();
        let (gbar, jbar) = empirical_inner_mean(task.as_ref(), x.view(), &xi, &batch).unwrap();
        assert_eq!(
            gbar[0].to_bits(),
            a_dot_x.to_bits(),
            "m={m}: mean {} vs aᵀx {}",
            gbar[0],
            a_dot_x
        );
        let jrow: Array1<f64> = jbar.row(0).to_owned();
        match &xi {
            fedcso::objectives::OuterSample::Invlogreg { features, .. } => {
                for (jv, av) in jrow.iter().zip(features.iter()) {
                    assert_eq!(jv.to_bits(), av.to_bits(), "m={m}");
                }
            }
            _ => unreachable!(),
        }
    }
}
