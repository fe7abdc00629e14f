//! Synthetic experiments behind the command-line harness.

pub mod ablation;
pub mod config;
pub mod membench;
pub mod run;
pub mod sweep;
pub mod synth;
pub mod table;

pub use ablation::{ablation_table, run_ablation, trajectory_table, AblationPair, AblationRow, RejectVariant};
pub use config::{HarnessConfig, OptimizerKind};
pub use membench::{membench_table, run_membench, MembenchRow};
pub use run::{run_pair, summarize, trace_table, RunSummary};
pub use sweep::{run_sweep, sweep_table, SweepParam, SweepRow, SweepSpec};
pub use synth::{synth_pair, SynthPair, SynthSpec};
pub use table::{CsvTable, CSV_VERSION_LINE};
