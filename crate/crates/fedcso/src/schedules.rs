//! Theory-prescribed hyperparameter schedules.
//!
//! Given the worker count `N`, the horizon `T` and an estimate of the
//! composed smoothness constant `S_F`, these functions produce the learning
//! rate, local-step count, momentum weight and initialization batch that the
//! convergence analysis prescribes:
//!
//! * FCSG / FCSG-M: `α = (1/(6 S_F))·√(N/T)`, `q = (T/N³)^{1/4}`, and for the
//!   momentum variant `β = 5·S_F·α`. The pair satisfies `α ≤ 1/(6 q S_F)`.
//! * Acc-FCSG-M: `q = (T/N²)^{1/3}`, `α = 1/(12 q S_F)` recomputed from the
//!   rounded `q` so `α ≤ 1/(12 q S_F)` holds exactly, `c = 30 S_F²/(b N)`,
//!   `β = c·α²`, `B = T^{1/3}/N^{2/3}`.
//!
//! `q` and `B` round to the nearest integer with floor 1; raw values are
//! retained for reporting. `S_F` is a user-supplied estimate — tasks ship
//! documented reference values, with 1.0 as the fallback.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Schedule output. `beta`/`init_batch` are present only when the schedule
/// defines them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScheduleResult {
    pub alpha: f64,
    pub q: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_batch: Option<u64>,
    /// Unrounded q, for reporting.
    pub q_raw: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_batch_raw: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

fn check_inputs(n: u64, t: u64, s_f: f64) -> Result<()> {
    if n == 0 || t == 0 {
        return Err(Error::InvalidArgument(
            "schedule requires N >= 1 and T >= 1".into(),
        ));
    }
    if !s_f.is_finite() || s_f <= 0.0 {
        return Err(Error::InvalidArgument("schedule requires S_F > 0".into()));
    }
    Ok(())
}

fn round_at_least_one(raw: f64) -> u64 {
    (raw.round() as i64).max(1) as u64
}

/// Schedule for FCSG, reused verbatim for FCSG-M with `β = 5·S_F·α`.
pub fn fcsg_schedule(n: u64, t: u64, s_f: f64) -> Result<ScheduleResult> {
    check_inputs(n, t, s_f)?;
    let nf = n as f64;
    let tf = t as f64;
    let mut alpha = (nf / tf).sqrt() / (6.0 * s_f);
    let q_raw = (tf / nf.powi(3)).powf(0.25);
    let mut warnings = Vec::new();
    if q_raw < 1.0 {
        warnings.push(format!("raw q = {q_raw:.4} < 1 (T < N^3); clamped to 1"));
    }
    let q = round_at_least_one(q_raw);
    // With T < N the prescribed α exceeds the step-size bound the analysis
    // assumes; cap it there.
    let cap = 1.0 / (6.0 * q as f64 * s_f);
    if alpha > cap {
        warnings.push(format!(
            "prescribed alpha = {alpha:.4e} exceeds the 1/(6qS_F) bound; capped at {cap:.4e}"
        ));
        alpha = cap;
    }
    let mut beta = 5.0 * s_f * alpha;
    if beta > 1.0 {
        warnings.push(format!("momentum formula gave beta = {beta:.4} > 1; clamped to 1"));
        beta = 1.0;
    }
    Ok(ScheduleResult {
        alpha,
        q,
        beta: Some(beta),
        init_batch: None,
        q_raw,
        init_batch_raw: None,
        warnings,
    })
}

/// Schedule for Acc-FCSG-M.
pub fn acc_schedule(n: u64, t: u64, b: u64, s_f: f64) -> Result<ScheduleResult> {
    check_inputs(n, t, s_f)?;
    if b == 0 {
        return Err(Error::InvalidArgument("schedule requires b >= 1".into()));
    }
    let nf = n as f64;
    let tf = t as f64;
    let q_raw = (tf / (nf * nf)).powf(1.0 / 3.0);
    let mut warnings = Vec::new();
    if q_raw < 1.0 {
        warnings.push(format!("raw q = {q_raw:.4} < 1 (T < N^2); clamped to 1"));
    }
    let q = round_at_least_one(q_raw);
    // Recomputed from the rounded q so the step-size bound holds exactly.
    let alpha = 1.0 / (12.0 * q as f64 * s_f);
    let c = 30.0 * s_f * s_f / (b as f64 * nf);
    let mut beta = c * alpha * alpha;
    if beta > 1.0 {
        warnings.push(format!("momentum formula gave beta = {beta:.4} > 1; clamped to 1"));
        beta = 1.0;
    }
    let init_batch_raw = tf.powf(1.0 / 3.0) / nf.powf(2.0 / 3.0);
    let init_batch = round_at_least_one(init_batch_raw);
    Ok(ScheduleResult {
        alpha,
        q,
        beta: Some(beta),
        init_batch: Some(init_batch),
        q_raw,
        init_batch_raw: Some(init_batch_raw),
        warnings,
    })
}
