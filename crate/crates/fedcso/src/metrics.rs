//! Run metrics: gradient norms, losses, consensus errors, average precision,
//! and the trace files the CLI emits.
//!
//! The CSV format is the stable contract for external plotting:
//!
//! ```text
//! t,round,grad_norm_sq,loss,consensus_x,consensus_u,test_metric,samples_used,seed
//! ```
//!
//! Floats are printed with 17 significant digits so a read-back reproduces
//! every row bit-for-bit; missing values (e.g. `consensus_u` for FCSG, which
//! never averages estimators) serialize as the literal `nan`. Each trace file
//! has a `<path>.meta.json` sidecar carrying the full run configuration, so
//! any emitted file can be reproduced from its sidecar alone.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::federation::FederationConfig;
use crate::objectives::ConditionalObjective;
use crate::rng::StreamRng;
use crate::schedules::ScheduleResult;

/// One recorded metric row.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub t: u64,
    /// Completed synchronization rounds at record time.
    pub round: u64,
    /// ‖∇F(x̄_t)‖², exact when the task has an oracle.
    pub grad_norm_sq: f64,
    /// Task loss at x̄_t (exact objective or held-out empirical loss).
    pub loss: f64,
    /// (1/N) Σ_n ‖x_tⁿ − x̄_t‖²; exactly 0 at sync rows.
    pub consensus_x: f64,
    /// Same dispersion for the estimators; NaN when the algorithm does not
    /// average them.
    pub consensus_u: f64,
    /// Task test metric (accuracy, average precision); NaN if undefined.
    pub test_metric: f64,
    /// Cumulative inner-sample draws across all workers.
    pub samples_used: u64,
    pub seed: u64,
}

pub const TRACE_HEADER: &str =
    "t,round,grad_norm_sq,loss,consensus_x,consensus_u,test_metric,samples_used,seed";

/// Sidecar metadata: everything needed to re-run the trace bit-identically.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceMetadata {
    pub config: FederationConfig,
    /// Schedule output when the run used auto-derived hyperparameters.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleResult>,
    /// Denominator-guard clamp events observed during the run.
    pub clamp_events: u64,
    /// Number of server synchronizations performed (= floor(T/q)).
    pub sync_rounds: u64,
    /// Step index of the uniformly drawn output iterate.
    pub picked_step: u64,
}

/// An ordered run trace plus its reproducibility metadata.
#[derive(Debug, Clone)]
pub struct Trace {
    pub rows: Vec<MetricsRow>,
    pub metadata: TraceMetadata,
}

/// ‖∇F(x̄)‖², via the exact oracle when the task provides one and a
/// Monte-Carlo estimate from the supplied evaluation stream otherwise.
pub fn grad_norm_metric(
    task: &dyn ConditionalObjective,
    x_bar: ArrayView1<f64>,
    eval_rng: &mut StreamRng,
) -> f64 {
    let grad = match task.exact_gradient_oracle(x_bar) {
        Ok(g) => g,
        Err(_) => task
            .mc_gradient(x_bar, eval_rng)
            .expect("task provides neither an oracle nor a Monte-Carlo gradient"),
    };
    grad.dot(&grad)
}

/// Standard average precision: positives ranked by descending score, mean of
/// precision at each positive's rank. Ties keep input order (stable sort).
pub fn average_precision(scores: &[f64], labels: &[f64]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "scores and labels differ in length: {} vs {}",
            scores.len(),
            labels.len()
        )));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1.0).count();
    if n_pos == 0 {
        return Err(Error::InvalidArgument(
            "average precision needs at least one positive label".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank0, &idx) in order.iter().enumerate() {
        if labels[idx] == 1.0 {
            hits += 1;
            sum += hits as f64 / (rank0 + 1) as f64;
        }
    }
    Ok(sum / n_pos as f64)
}

/// Dispersion of worker vectors around a center: (1/N) Σ ‖v_n − c‖².
///
/// The center is supplied by the caller: right after a server broadcast it
/// is the broadcast value itself, which makes the sync-row consensus error
/// exactly zero rather than zero-up-to-rounding.
pub fn consensus_about<'a>(
    center: ArrayView1<f64>,
    vectors: impl Iterator<Item = ArrayView1<'a, f64>>,
) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for v in vectors {
        let diff = &v.to_owned() - &center;
        total += diff.dot(&diff);
        count += 1;
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

/// 17 significant digits; round-trips through `str::parse::<f64>`.
fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{v:.16e}")
    }
}

fn row_line(row: &MetricsRow) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{}",
        row.t,
        row.round,
        fmt_f64(row.grad_norm_sq),
        fmt_f64(row.loss),
        fmt_f64(row.consensus_x),
        fmt_f64(row.consensus_u),
        fmt_f64(row.test_metric),
        row.samples_used,
        row.seed
    )
}

/// Write the trace CSV and its `<path>.meta.json` sidecar.
pub fn write_trace(trace: &Trace, path: &Path) -> Result<()> {
    let mut out = String::with_capacity(64 * (trace.rows.len() + 1));
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for row in &trace.rows {
        out.push_str(&row_line(row));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())?;

    let meta_path = sidecar_path(path);
    let json = serde_json::to_vec_pretty(&trace.metadata)
        .map_err(|e| Error::parse(&meta_path, e.to_string()))?;
    write_atomic(&meta_path, &json)?;
    Ok(())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// `<path>.meta.json` next to a trace file.
pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".meta.json");
    std::path::PathBuf::from(os)
}

/// Read rows back from a trace CSV.
pub fn read_trace_rows(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == TRACE_HEADER => {}
        other => {
            return Err(Error::parse(
                path,
                format!("unexpected trace header: {other:?}"),
            ))
        }
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(Error::parse(
                path,
                format!("line {}: expected 9 fields, got {}", lineno + 2, fields.len()),
            ));
        }
        let parse_f = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|e| Error::parse(path, format!("line {}: {e}", lineno + 2)))
        };
        let parse_u = |s: &str| -> Result<u64> {
            s.parse::<u64>()
                .map_err(|e| Error::parse(path, format!("line {}: {e}", lineno + 2)))
        };
        rows.push(MetricsRow {
            t: parse_u(fields[0])?,
            round: parse_u(fields[1])?,
            grad_norm_sq: parse_f(fields[2])?,
            loss: parse_f(fields[3])?,
            consensus_x: parse_f(fields[4])?,
            consensus_u: parse_f(fields[5])?,
            test_metric: parse_f(fields[6])?,
            samples_used: parse_u(fields[7])?,
            seed: parse_u(fields[8])?,
        });
    }
    Ok(rows)
}

/// Read the sidecar metadata of a trace file.
pub fn read_trace_metadata(path: &Path) -> Result<TraceMetadata> {
    let meta_path = sidecar_path(path);
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(&meta_path, e.to_string()))
}
