//! Hyperparameter sweeps over the LM damping schedule and tile size.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::driver::RegConfig;
use crate::error::{Error, Result};
use crate::lmopt::{LmConfig, OptimizerConfig};

use super::run::{run_pair, RunSummary};
use super::synth::SynthPair;
use super::table::{fmt_f64, fmt_opt, CsvTable};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParam {
    Lambda0,
    MuPlus,
    MuMinus,
    TileSize,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Lambda0 => "lambda0",
            SweepParam::MuPlus => "mu_plus",
            SweepParam::MuMinus => "mu_minus",
            SweepParam::TileSize => "tile_size",
        }
    }

    /// `base` with this parameter set to `value`.
    pub fn apply(self, base: &LmConfig<f64>, value: f64) -> Result<LmConfig<f64>> {
        let mut cfg = *base;
        match self {
            SweepParam::Lambda0 => cfg.lambda0 = value,
            SweepParam::MuPlus => cfg.mu_plus = value,
            SweepParam::MuMinus => cfg.mu_minus = value,
            SweepParam::TileSize => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(Error::InvalidParameter(format!("tile_size must be a positive integer, got {value}")));
                }
                cfg.tile_size = value as usize;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "lambda0" => Ok(SweepParam::Lambda0),
            "mu_plus" => Ok(SweepParam::MuPlus),
            "mu_minus" => Ok(SweepParam::MuMinus),
            "tile_size" => Ok(SweepParam::TileSize),
            other => Err(Error::InvalidParameter(format!("unknown sweep parameter '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub parameter: SweepParam,
    pub values: Vec<f64>,
    /// Runs per value; repeat `i` registers suite pair `i`.
    pub repeats: usize,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self { parameter: SweepParam::Lambda0, values: vec![1e-4, 0.006, 0.5], repeats: 5 }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::InvalidParameter("sweep needs at least one value".into()));
        }
        if self.repeats == 0 {
            return Err(Error::InvalidParameter("sweep repeats must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct SweepRow {
    pub param: SweepParam,
    pub value: f64,
    pub repeat: usize,
    pub outcome: Result<RunSummary>,
}

/// Registers every pair once per value. Rows come back in (value, repeat)
/// order regardless of how the runs are scheduled; a failed run yields an
/// error row and the sweep continues.
pub fn run_sweep(base: &RegConfig<f64>, spec: &SweepSpec, pairs: &[SynthPair]) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    let base_lm = match base.optimizer {
        OptimizerConfig::Lm(lm) => lm,
        _ => return Err(Error::InvalidParameter("sweeps require the lm optimizer".into())),
    };
    if pairs.len() < spec.repeats {
        return Err(Error::InvalidParameter(format!(
            "{} repeats need as many pairs, got {}",
            spec.repeats,
            pairs.len()
        )));
    }
    let jobs: Vec<(f64, usize)> = spec.values.iter().flat_map(|&v| (0..spec.repeats).map(move |r| (v, r))).collect();
    Ok(jobs
        .into_par_iter()
        .map(|(value, repeat)| {
            let outcome = spec.parameter.apply(&base_lm, value).and_then(|lm| {
                let cfg = RegConfig { optimizer: OptimizerConfig::Lm(lm), ..base.clone() };
                run_pair(&pairs[repeat], &cfg)
            });
            SweepRow { param: spec.parameter, value, repeat, outcome }
        })
        .collect())
}

pub const SWEEP_COLUMNS: [&str; 8] =
    ["param", "value", "repeat", "final_loss", "mean_epe", "max_epe", "final_lambda", "steps_rejected"];

/// Failed runs keep their row with `NaN` metrics.
pub fn sweep_table(rows: &[SweepRow]) -> CsvTable {
    let mut table = CsvTable::new(&SWEEP_COLUMNS);
    for row in rows {
        let head = vec![row.param.to_string(), fmt_f64(row.value), row.repeat.to_string()];
        let tail = match &row.outcome {
            Ok(s) => vec![
                fmt_f64(s.final_loss),
                fmt_f64(s.mean_epe),
                fmt_f64(s.max_epe),
                fmt_opt(s.final_lambda),
                s.steps_rejected.to_string(),
            ],
            Err(_) => vec!["NaN".into(), "NaN".into(), "NaN".into(), String::new(), String::new()],
        };
        table.push(head.into_iter().chain(tail).collect());
    }
    table
}
