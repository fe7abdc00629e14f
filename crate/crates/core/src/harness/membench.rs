//! Optimizer-state accounting and per-step timing.

use std::time::Instant;

use crate::driver::RegConfig;
use crate::error::Result;
use crate::field::{Dims, DispField};
use crate::lmopt::{field_bytes, AdamConfig, LmConfig, Optimizer, OptimizerConfig, WarpState};
use crate::similarity::residual;

use super::synth::{synth_pair, SynthSpec};
use super::table::{fmt_f64, CsvTable};

pub const WARMUP_STEPS: usize = 2;
pub const TIMED_STEPS: usize = 5;

/// Fields of `N³` doubles a timing run keeps alive at once, used to probe
/// whether the allocation can succeed before starting.
const WORKING_FIELDS: usize = 24;

#[derive(Clone, Debug, PartialEq)]
pub struct MembenchRow {
    pub n: usize,
    /// Persistent state at 32-bit elements.
    pub adam_state_bytes: usize,
    pub lm_state_bytes: usize,
    pub field_bytes: usize,
    pub adam_step_secs: Option<f64>,
    pub lm_step_secs: Option<f64>,
    pub note: String,
}

/// Persistent optimizer state in bytes for an `n³` grid at 32-bit precision.
pub fn state_bytes_f32(optimizer: &OptimizerConfig<f32>, n: usize) -> usize {
    Optimizer::new(optimizer, Dims::cube(n)).state_bytes()
}

/// Seconds per full-resolution iteration for each configuration: the median
/// of `TIMED_STEPS` iterations after `WARMUP_STEPS` warm-up iterations.
/// Iterations of the different configurations are interleaved so that drift
/// in machine load affects all of them alike.
pub fn time_steps(cfgs: &[RegConfig<f64>], spec: &SynthSpec) -> Result<Vec<f64>> {
    let pair = synth_pair(spec)?;
    let mut runs = Vec::with_capacity(cfgs.len());
    for cfg in cfgs {
        let optimizer = Optimizer::new(&cfg.optimizer, spec.dims);
        let ws = WarpState::new(DispField::zeros(spec.dims), &mut |u: &DispField<f64>| {
            residual(&pair.fixed, &pair.moving, u, &cfg.metric)
        })?;
        runs.push((cfg, optimizer, ws, Vec::with_capacity(TIMED_STEPS)));
    }
    for step in 0..WARMUP_STEPS + TIMED_STEPS {
        for (cfg, optimizer, ws, times) in runs.iter_mut() {
            let mut objective = |u: &DispField<f64>| residual(&pair.fixed, &pair.moving, u, &cfg.metric);
            let start = Instant::now();
            optimizer.iterate(ws, &mut objective, &cfg.rule)?;
            if step >= WARMUP_STEPS {
                times.push(start.elapsed().as_secs_f64());
            }
        }
    }
    Ok(runs
        .into_iter()
        .map(|(_, _, _, mut times)| {
            times.sort_by(f64::total_cmp);
            times[TIMED_STEPS / 2]
        })
        .collect())
}

/// Synthetic pair used for timing at size `n`, with the warp scaled down
/// where the grid is too small for `base.warp_max`.
pub fn bench_spec(base: &SynthSpec, n: usize) -> SynthSpec {
    let limit = n as f64 / 4.0 - 0.5;
    SynthSpec { dims: Dims::cube(n), warp_max: base.warp_max.min(limit).max(0.0), ..*base }
}

/// Runs LM and Adam with the defaults of `base` (metric, smoothing) on each size.
pub fn run_membench(base: &RegConfig<f64>, synth: &SynthSpec, sizes: &[usize]) -> Vec<MembenchRow> {
    let lm_cfg = RegConfig { optimizer: lm_of(base), ..base.clone() };
    let adam_cfg = RegConfig { optimizer: OptimizerConfig::Adam(adam_of(base)), ..base.clone() };
    sizes
        .iter()
        .map(|&n| {
            let mut row = MembenchRow {
                n,
                adam_state_bytes: state_bytes_f32(&OptimizerConfig::Adam(AdamConfig::default()), n),
                lm_state_bytes: state_bytes_f32(&OptimizerConfig::Lm(LmConfig::default()), n),
                field_bytes: field_bytes::<f32>(Dims::cube(n).len()),
                adam_step_secs: None,
                lm_step_secs: None,
                note: String::new(),
            };
            let probe = field_bytes::<f64>(Dims::cube(n).len()).checked_mul(WORKING_FIELDS);
            if probe.is_none_or(|bytes| Vec::<u8>::new().try_reserve_exact(bytes).is_err()) {
                row.note = "skipped: allocation failed".into();
                return row;
            }
            let spec = bench_spec(synth, n);
            match time_steps(&[adam_cfg.clone(), lm_cfg.clone()], &spec) {
                Ok(t) => {
                    row.adam_step_secs = Some(t[0]);
                    row.lm_step_secs = Some(t[1]);
                }
                Err(e) => row.note = format!("skipped: {e}"),
            }
            row
        })
        .collect()
}

fn lm_of(base: &RegConfig<f64>) -> OptimizerConfig<f64> {
    match base.optimizer {
        OptimizerConfig::Lm(lm) => OptimizerConfig::Lm(lm),
        _ => OptimizerConfig::Lm(LmConfig::default()),
    }
}

fn adam_of(base: &RegConfig<f64>) -> AdamConfig<f64> {
    match base.optimizer {
        OptimizerConfig::Adam(adam) => adam,
        _ => AdamConfig::default(),
    }
}

pub fn membench_table(rows: &[MembenchRow]) -> CsvTable {
    let mut table = CsvTable::new(&[
        "n",
        "adam_state_bytes",
        "lm_state_bytes",
        "field_bytes",
        "adam_step_ms",
        "lm_step_ms",
        "note",
    ]);
    let ms = |s: Option<f64>| s.map(|v| fmt_f64(v * 1e3)).unwrap_or_default();
    for r in rows {
        table.push(vec![
            r.n.to_string(),
            r.adam_state_bytes.to_string(),
            r.lm_state_bytes.to_string(),
            r.field_bytes.to_string(),
            ms(r.adam_step_secs),
            ms(r.lm_step_secs),
            r.note.clone(),
        ]);
    }
    table
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn state_accounting() {
        assert_eq!(state_bytes_f32(&OptimizerConfig::Adam(AdamConfig::default()), 64), 6_291_456);
        for n in [8, 64, 128] {
            let lm = state_bytes_f32(&OptimizerConfig::Lm(LmConfig::default()), n);
            assert!(lm < 1024);
            let adam = state_bytes_f32(&OptimizerConfig::Adam(AdamConfig::default()), n);
            assert_eq!(adam, 2 * field_bytes::<f32>(n * n * n));
        }
    }

    #[test]
    fn bench_spec_respects_small_grids() {
        let s = bench_spec(&SynthSpec::default(), 8);
        assert!(s.validate().is_ok());
        assert_eq!(bench_spec(&SynthSpec::default(), 64).warp_max, 3.0);
    }
}
