use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use warplm::harness::{
    ablation_table, membench_table, run_ablation, run_membench, run_sweep, sweep_table, synth_pair, trace_table,
    trajectory_table, AblationPair, CsvTable, HarnessConfig, SweepParam, SynthPair, SynthSpec,
};
use warplm::io::{load_field, load_volume, save_field, save_volume};
use warplm::{endpoint_error, register, DispField3, Volume3};

#[derive(Parser)]
#[command(name = "warplm", version, about = "Diffeomorphic registration with factored Levenberg-Marquardt")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// key = value configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for synthetic data and registration (overrides the config)
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for output files
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// CSV output path; `-` writes to standard output
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic fixed/moving pair and its ground-truth warp
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Register a moving volume onto a fixed volume
    Register {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        fixed: PathBuf,
        #[arg(long)]
        moving: PathBuf,
        /// Ground-truth warp for endpoint-error reporting
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Sweep one LM hyperparameter over the synthetic suite
    Sweep {
        #[command(flatten)]
        common: Common,
        /// lambda0 | mu_plus | mu_minus | tile_size
        #[arg(long)]
        param: Option<String>,
        /// Comma-separated values
        #[arg(long)]
        values: Option<String>,
    },
    /// Optimizer state size and time per step for N³ grids
    Membench {
        #[command(flatten)]
        common: Common,
        /// Comma-separated grid sizes
        #[arg(long)]
        sizes: Option<String>,
    },
    /// Rejection with and without a cap on the damping
    RejectAblation {
        #[command(flatten)]
        common: Common,
    },
}

struct Failure {
    code: u8,
    msg: String,
}

impl Failure {
    fn input(e: impl std::fmt::Display) -> Self {
        Self { code: 2, msg: e.to_string() }
    }

    fn runtime(e: impl std::fmt::Display) -> Self {
        Self { code: 1, msg: e.to_string() }
    }
}

impl From<warplm::Error> for Failure {
    fn from(e: warplm::Error) -> Self {
        if e.is_input_error() {
            Failure::input(e)
        } else {
            Failure::runtime(e)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("warplm: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Synth { common } => synth(&common),
        Command::Register { common, fixed, moving, truth } => cmd_register(&common, &fixed, &moving, truth.as_deref()),
        Command::Sweep { common, param, values } => sweep(&common, param, values),
        Command::Membench { common, sizes } => membench(&common, sizes),
        Command::RejectAblation { common } => reject_ablation(&common),
    }
}

fn load_config(common: &Common) -> Result<HarnessConfig, Failure> {
    let mut cfg = match &common.config {
        Some(path) => HarnessConfig::load(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?,
        None => HarnessConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    Ok(cfg)
}

fn out_dir(common: &Common) -> Result<&Path, Failure> {
    std::fs::create_dir_all(&common.out_dir)
        .map_err(|e| Failure::runtime(format!("{}: {e}", common.out_dir.display())))?;
    Ok(&common.out_dir)
}

/// Writes `table` to `--csv` (or `default` inside the output directory).
fn emit(common: &Common, table: &CsvTable, default: &str) -> Result<(), Failure> {
    match &common.csv {
        Some(p) if p.as_os_str() == "-" => {
            print!("{}", table.to_string_lossy());
            Ok(())
        }
        Some(p) => table.save(p).map_err(|e| Failure::runtime(format!("{}: {e}", p.display()))),
        None => {
            let p = out_dir(common)?.join(default);
            table.save(&p).map_err(|e| Failure::runtime(format!("{}: {e}", p.display())))
        }
    }
}

fn synth(common: &Common) -> Result<(), Failure> {
    let cfg = load_config(common)?;
    let pair = synth_pair(&cfg.synth)?;
    let dir = out_dir(common)?;
    let write = |name: &str, f: &dyn Fn(&Path) -> warplm::Result<()>| {
        let p = dir.join(name);
        f(&p).map_err(|e| Failure::runtime(format!("{}: {e}", p.display())))
    };
    write("fixed.vol3", &|p| save_volume(p, &pair.fixed))?;
    write("moving.vol3", &|p| save_volume(p, &pair.moving))?;
    write("u_true.dsp3", &|p| save_field(p, &pair.u_true))?;
    println!(
        "synth dims={} seed={} warp_max={} jac_det_min={:.4} -> {}",
        cfg.synth.dims,
        cfg.synth.seed,
        cfg.synth.warp_max,
        warplm::jacobian_det_min(&pair.u_true),
        dir.display()
    );
    Ok(())
}

fn cmd_register(common: &Common, fixed: &Path, moving: &Path, truth: Option<&Path>) -> Result<(), Failure> {
    let cfg = load_config(common)?;
    let read = |p: &Path| load_volume::<f64>(p).map_err(|e| Failure::input(format!("{}: {e}", p.display())));
    let fixed: Volume3 = read(fixed)?;
    let moving: Volume3 = read(moving)?;
    let truth: Option<DispField3> =
        truth.map(|p| load_field(p).map_err(|e| Failure::input(format!("{}: {e}", p.display())))).transpose()?;
    if let Some(t) = &truth {
        t.dims().ensure_same(fixed.dims())?;
    }
    let reg = cfg.reg_config();
    let result = match register(&fixed, &moving, &reg) {
        Ok(r) => r,
        Err(e) => {
            if !e.partial_trace.is_empty() {
                emit(common, &trace_table(&e.partial_trace), "trace.csv")?;
            }
            return Err(e.source.into());
        }
    };
    let dir = out_dir(common)?;
    let warp_path = dir.join("warp.dsp3");
    save_field(&warp_path, &result.final_warp)
        .map_err(|e| Failure::runtime(format!("{}: {e}", warp_path.display())))?;
    emit(common, &trace_table(&result.loss_trace), "trace.csv")?;
    let mut line = format!(
        "register optimizer={} metric={} iterations={} final_r={:.6e} loss_raw={:.6e} jac_det_min={:.4}",
        reg.optimizer.name(),
        reg.metric.kind,
        result.loss_trace.len(),
        result.final_r,
        result.final_loss_raw,
        result.jac_det_min_final
    );
    if let Some(t) = &truth {
        let (mean, max) = endpoint_error(&result.final_warp, t)?;
        line.push_str(&format!(" mean_epe={mean:.4} max_epe={max:.4}"));
    }
    if let Some(lambda) = result.final_lambda() {
        line.push_str(&format!(" final_lambda={lambda:.4e}"));
    }
    println!("{line}");
    Ok(())
}

fn suite_pairs(cfg: &HarnessConfig, count: usize) -> Result<Vec<SynthPair>, Failure> {
    (0..count as u64)
        .map(|i| synth_pair(&SynthSpec { seed: cfg.synth.seed + i, ..cfg.synth }).map_err(Failure::from))
        .collect()
}

fn sweep(common: &Common, param: Option<String>, values: Option<String>) -> Result<(), Failure> {
    let mut cfg = load_config(common)?;
    if let Some(p) = param {
        cfg.sweep.parameter = p.parse::<SweepParam>()?;
    }
    if let Some(v) = values {
        cfg.set("sweep.values", &v)?;
    }
    cfg.validate()?;
    let pairs = suite_pairs(&cfg, cfg.sweep.repeats)?;
    let rows = run_sweep(&cfg.reg_config(), &cfg.sweep, &pairs)?;
    for row in &rows {
        if let Err(e) = &row.outcome {
            eprintln!("warplm: {}={} repeat {}: {e}", row.param, row.value, row.repeat);
        }
    }
    emit(common, &sweep_table(&rows), "sweep.csv")
}

fn membench(common: &Common, sizes: Option<String>) -> Result<(), Failure> {
    let mut cfg = load_config(common)?;
    if let Some(s) = sizes {
        cfg.set("membench.sizes", &s)?;
        cfg.validate()?;
    }
    let rows = run_membench(&cfg.reg_config(), &cfg.synth, &cfg.membench_sizes);
    emit(common, &membench_table(&rows), "membench.csv")
}

fn reject_ablation(common: &Common) -> Result<(), Failure> {
    let cfg = load_config(common)?;
    let hard = cfg.hard_pair();
    hard.validate()?;
    let mut pairs: Vec<AblationPair> = cfg
        .suite()
        .iter()
        .map(|s| Ok(AblationPair { label: format!("seed{}", s.seed), hard: false, pair: synth_pair(s)? }))
        .collect::<Result<_, Failure>>()?;
    pairs.push(AblationPair { label: "hard".into(), hard: true, pair: synth_pair(&hard)? });
    let rows = run_ablation(&cfg.reg_config(), &pairs);
    for row in &rows {
        if let Err(e) = &row.outcome {
            eprintln!("warplm: {} {}: {e}", row.label, row.variant);
        }
    }
    emit(common, &ablation_table(&rows), "ablation.csv")?;
    let traj = out_dir(common)?.join("lambda_trajectories.csv");
    trajectory_table(&rows).save(&traj).map_err(|e| Failure::runtime(format!("{}: {e}", traj.display())))?;
    Ok(())
}
