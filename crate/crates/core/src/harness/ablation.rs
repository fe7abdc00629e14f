//! Rejection ablation: no rejection, rejection with a finite cap on `λ`,
//! and rejection without a cap.

use std::fmt;

use rayon::prelude::*;

use crate::driver::RegConfig;
use crate::error::Result;
use crate::lmopt::{LmConfig, OptimizerConfig};

use super::run::{run_pair, RunSummary};
use super::synth::SynthPair;
use super::table::{fmt_f64, fmt_opt, CsvTable};

/// Cap used by the capped variant.
pub const ABLATION_CAP: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RejectVariant {
    NoRejection,
    Capped,
    Uncapped,
}

impl RejectVariant {
    pub const ALL: [RejectVariant; 3] = [RejectVariant::NoRejection, RejectVariant::Capped, RejectVariant::Uncapped];

    pub fn name(self) -> &'static str {
        match self {
            RejectVariant::NoRejection => "no-rejection",
            RejectVariant::Capped => "rejection-cap",
            RejectVariant::Uncapped => "rejection-nocap",
        }
    }

    pub fn apply(self, base: &LmConfig<f64>) -> LmConfig<f64> {
        match self {
            RejectVariant::NoRejection => LmConfig { rejection_enabled: false, ..*base },
            RejectVariant::Capped => LmConfig { rejection_enabled: true, lambda_max: ABLATION_CAP, ..*base },
            RejectVariant::Uncapped => LmConfig { rejection_enabled: true, lambda_max: f64::INFINITY, ..*base },
        }
    }
}

impl fmt::Display for RejectVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A labelled pair of the ablation suite.
pub struct AblationPair {
    pub label: String,
    pub hard: bool,
    pub pair: SynthPair,
}

#[derive(Debug)]
pub struct AblationRow {
    pub label: String,
    pub hard: bool,
    pub variant: RejectVariant,
    pub lambda0: f64,
    pub outcome: Result<RunSummary>,
}

/// Runs every variant on every pair, rows ordered by pair then variant.
pub fn run_ablation(base: &RegConfig<f64>, pairs: &[AblationPair]) -> Vec<AblationRow> {
    let base_lm = match base.optimizer {
        OptimizerConfig::Lm(lm) => lm,
        _ => LmConfig::default(),
    };
    let jobs: Vec<(usize, RejectVariant)> =
        (0..pairs.len()).flat_map(|i| RejectVariant::ALL.into_iter().map(move |v| (i, v))).collect();
    jobs.into_par_iter()
        .map(|(i, variant)| {
            let lm = variant.apply(&base_lm);
            let cfg = RegConfig { optimizer: OptimizerConfig::Lm(lm), ..base.clone() };
            AblationRow {
                label: pairs[i].label.clone(),
                hard: pairs[i].hard,
                variant,
                lambda0: lm.lambda0,
                outcome: run_pair(&pairs[i].pair, &cfg),
            }
        })
        .collect()
}

pub fn ablation_table(rows: &[AblationRow]) -> CsvTable {
    let mut table = CsvTable::new(&[
        "pair",
        "hard",
        "variant",
        "final_loss",
        "mean_epe",
        "lambda0",
        "final_lambda",
        "max_lambda",
        "steps_rejected",
        "late_update_max",
    ]);
    for row in rows {
        let head = vec![row.label.clone(), row.hard.to_string(), row.variant.to_string()];
        let tail = match &row.outcome {
            Ok(s) => vec![
                fmt_f64(s.final_loss),
                fmt_f64(s.mean_epe),
                fmt_f64(row.lambda0),
                fmt_opt(s.final_lambda),
                fmt_opt(s.max_lambda),
                s.steps_rejected.to_string(),
                fmt_f64(s.late_update_max),
            ],
            Err(_) => {
                let mut t = vec!["NaN".to_string(), "NaN".into(), fmt_f64(row.lambda0)];
                t.extend(std::iter::repeat_n(String::new(), 4));
                t
            }
        };
        table.push(head.into_iter().chain(tail).collect());
    }
    table
}

/// Per-iteration `λ`, retries and update size for every successful run.
pub fn trajectory_table(rows: &[AblationRow]) -> CsvTable {
    let mut table = CsvTable::new(&["pair", "variant", "step", "level", "lambda", "retries", "update_max"]);
    for row in rows {
        let Ok(summary) = &row.outcome else { continue };
        for (step, t) in summary.result.loss_trace.iter().enumerate() {
            table.push(vec![
                row.label.clone(),
                row.variant.to_string(),
                step.to_string(),
                t.level.to_string(),
                fmt_opt(t.lambda),
                t.retries.to_string(),
                fmt_f64(t.update_max),
            ]);
        }
    }
    table
}
