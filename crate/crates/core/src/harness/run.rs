//! One registration of a synthetic pair, reduced to summary statistics.

use crate::driver::{endpoint_error, register, RegConfig, RegResult, TraceRow};
use crate::error::Result;

use super::synth::SynthPair;
use super::table::{fmt_f64, fmt_opt, CsvTable};

/// Iterations at the end of a run inspected for stalled updates.
pub const LATE_WINDOW: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    /// Residual of the final warp.
    pub final_loss: f64,
    pub mean_epe: f64,
    pub max_epe: f64,
    pub final_lambda: Option<f64>,
    pub max_lambda: Option<f64>,
    /// Candidate steps that failed the rejection test, including force-accepted ones.
    pub steps_rejected: usize,
    /// Largest update component over the last [`LATE_WINDOW`] iterations.
    pub late_update_max: f64,
    /// Smallest incremental-warp Jacobian determinant over the whole trace.
    pub min_step_jac_det: f64,
    pub result: RegResult<f64>,
}

pub fn run_pair(pair: &SynthPair, cfg: &RegConfig<f64>) -> Result<RunSummary> {
    let result = register(&pair.fixed, &pair.moving, cfg).map_err(|e| e.source)?;
    Ok(summarize(pair, result))
}

pub fn summarize(pair: &SynthPair, result: RegResult<f64>) -> RunSummary {
    let (mean_epe, max_epe) = endpoint_error(&result.final_warp, &pair.u_true).expect("same dims as the pair");
    let trace = &result.loss_trace;
    let lambdas = trace.iter().filter_map(|row| row.lambda);
    RunSummary {
        final_loss: result.final_r,
        mean_epe,
        max_epe,
        final_lambda: result.final_lambda(),
        max_lambda: lambdas.reduce(f64::max),
        steps_rejected: trace.iter().map(|row| row.retries + usize::from(!row.accepted)).sum(),
        late_update_max: trace.iter().rev().take(LATE_WINDOW).map(|row| row.update_max).fold(0.0, f64::max),
        min_step_jac_det: trace.iter().map(|row| row.jac_det_min).fold(f64::INFINITY, f64::min),
        result,
    }
}

pub const TRACE_COLUMNS: [&str; 9] =
    ["level", "iter", "loss_raw", "r", "lambda", "eps", "accepted", "retries", "jac_det_min"];

/// Per-iteration registration trace.
pub fn trace_table(trace: &[TraceRow<f64>]) -> CsvTable {
    let mut table = CsvTable::new(&TRACE_COLUMNS);
    for row in trace {
        table.push(vec![
            row.level.to_string(),
            row.iter.to_string(),
            fmt_f64(row.loss_raw),
            fmt_f64(row.r),
            fmt_opt(row.lambda),
            fmt_f64(row.eps),
            row.accepted.to_string(),
            row.retries.to_string(),
            fmt_f64(row.jac_det_min),
        ]);
    }
    table
}
