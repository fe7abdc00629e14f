//! Plain `key = value` configuration for the harness commands.
//!
//! Lines are `key = value`; `#` starts a comment. Unknown keys are errors.
//! Every registration, optimizer and synthetic-data parameter has a key:
//!
//! ```text
//! optimizer = lm            # lm | adam | gd
//! metric = mse              # mse | lncc | mi
//! schedule = 4:100,2:75,1:50
//! lm.lambda_max = inf
//! synth.warp_max = 3
//! ```

use std::path::Path;
use std::str::FromStr;

use crate::driver::RegConfig;
use crate::error::{Error, Result};
use crate::field::Dims;
use crate::lmopt::{AdamConfig, LmConfig, OptimizerConfig, UpdateRule};
use crate::pyramid::PyramidSchedule;
use crate::similarity::{MetricConfig, MetricKind};

use super::sweep::{SweepParam, SweepSpec};
use super::synth::SynthSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Lm,
    Adam,
    Gd,
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "lm" => Ok(OptimizerKind::Lm),
            "adam" => Ok(OptimizerKind::Adam),
            "gd" => Ok(OptimizerKind::Gd),
            other => Err(Error::InvalidParameter(format!("unknown optimizer '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HarnessConfig {
    pub optimizer: OptimizerKind,
    pub metric: MetricConfig<f64>,
    pub lm: LmConfig<f64>,
    pub adam: AdamConfig<f64>,
    pub gd_lr: f64,
    pub schedule: PyramidSchedule,
    pub rule: UpdateRule<f64>,
    pub seed: u64,
    pub synth: SynthSpec,
    /// Number of pairs in the synthetic suite; pair `i` uses seed `synth.seed + i`.
    pub suite_size: usize,
    pub sweep: SweepSpec,
    pub membench_sizes: Vec<usize>,
    /// `warp_max` of the hard pair in the rejection ablation.
    pub hard_warp_max: f64,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::Lm,
            metric: MetricConfig::default(),
            lm: LmConfig::default(),
            adam: AdamConfig::default(),
            gd_lr: 0.5,
            schedule: PyramidSchedule::default(),
            rule: UpdateRule::default(),
            seed: 0,
            synth: SynthSpec::default(),
            suite_size: 5,
            sweep: SweepSpec::default(),
            membench_sizes: vec![16, 32, 64],
            hard_warp_max: 7.0,
        }
    }
}

impl HarnessConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config { line: i + 1, msg: format!("expected key = value, got '{line}'") })?;
            cfg.set(key.trim(), value.trim()).map_err(|e| match e {
                Error::Config { .. } => e,
                other => Error::Config { line: i + 1, msg: other.to_string() },
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Sets one key. Values are validated as a whole by [`Self::validate`].
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "optimizer" => self.optimizer = value.parse()?,
            "metric" | "metric.kind" => self.metric.kind = value.parse::<MetricKind>()?,
            "metric.lncc_radius" => self.metric.lncc_radius = num(key, value)?,
            "metric.mi_bins" => self.metric.mi_bins = num(key, value)?,
            "metric.mi_parzen_sigma" => self.metric.mi_parzen_sigma = num(key, value)?,
            "schedule" => self.schedule = PyramidSchedule::parse(value)?,
            "step.target_max_disp" => self.rule.step.target_max_disp = num(key, value)?,
            "step.floor" => self.rule.step.floor = num(key, value)?,
            "sigma_update" => self.rule.sigma_update = num(key, value)?,
            "sigma_warp" => self.rule.sigma_warp = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "lm.lambda0" => self.lm.lambda0 = num(key, value)?,
            "lm.mu_plus" => self.lm.mu_plus = num(key, value)?,
            "lm.mu_minus" => self.lm.mu_minus = num(key, value)?,
            "lm.tile_size" => self.lm.tile_size = num(key, value)?,
            "lm.rejection_enabled" => self.lm.rejection_enabled = boolean(key, value)?,
            "lm.tau" => self.lm.tau = num(key, value)?,
            "lm.lambda_max" => self.lm.lambda_max = num(key, value)?,
            "lm.max_retries" => self.lm.max_retries = num(key, value)?,
            "adam.beta1" => self.adam.beta1 = num(key, value)?,
            "adam.beta2" => self.adam.beta2 = num(key, value)?,
            "adam.eps_hat" => self.adam.eps_hat = num(key, value)?,
            "adam.lr" => self.adam.lr = num(key, value)?,
            "gd.lr" => self.gd_lr = num(key, value)?,
            "synth.dims" => self.synth.dims = parse_dims(value)?,
            "synth.num_blobs" => self.synth.num_blobs = num(key, value)?,
            "synth.warp_sigma" => self.synth.warp_sigma = num(key, value)?,
            "synth.warp_max" => self.synth.warp_max = num(key, value)?,
            "synth.noise_sigma" => self.synth.noise_sigma = num(key, value)?,
            "synth.seed" => self.synth.seed = num(key, value)?,
            "suite.size" => self.suite_size = num(key, value)?,
            "sweep.parameter" => self.sweep.parameter = value.parse::<SweepParam>()?,
            "sweep.values" => self.sweep.values = list(key, value)?,
            "sweep.repeats" => self.sweep.repeats = num(key, value)?,
            "membench.sizes" => self.membench_sizes = list(key, value)?,
            "ablation.hard_warp_max" => self.hard_warp_max = num(key, value)?,
            _ => return Err(Error::InvalidParameter(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Sets both the registration seed and the synthetic-data seed.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.synth.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.reg_config().validate()?;
        self.synth.validate()?;
        self.sweep.validate()?;
        if self.suite_size == 0 {
            return Err(Error::InvalidParameter("suite.size must be at least 1".into()));
        }
        if self.membench_sizes.iter().any(|&n| n < 8) {
            return Err(Error::InvalidParameter("membench sizes must be at least 8".into()));
        }
        Ok(())
    }

    pub fn optimizer_config(&self) -> OptimizerConfig<f64> {
        match self.optimizer {
            OptimizerKind::Lm => OptimizerConfig::Lm(self.lm),
            OptimizerKind::Adam => OptimizerConfig::Adam(self.adam),
            OptimizerKind::Gd => OptimizerConfig::Gd { lr: self.gd_lr },
        }
    }

    pub fn reg_config(&self) -> RegConfig<f64> {
        RegConfig {
            metric: self.metric,
            optimizer: self.optimizer_config(),
            schedule: self.schedule.clone(),
            rule: self.rule,
            seed: self.seed,
        }
    }

    /// Synthetic suite: `suite_size` pairs with consecutive seeds.
    pub fn suite(&self) -> Vec<SynthSpec> {
        (0..self.suite_size as u64).map(|i| SynthSpec { seed: self.synth.seed + i, ..self.synth }).collect()
    }

    pub fn hard_pair(&self) -> SynthSpec {
        SynthSpec { warp_max: self.hard_warp_max, ..self.synth }
    }
}

fn num<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value.parse().map_err(|_| Error::InvalidParameter(format!("bad value '{value}' for {key}")))
}

fn boolean(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::InvalidParameter(format!("bad boolean '{value}' for {key}"))),
    }
}

fn list<V: FromStr>(key: &str, value: &str) -> Result<Vec<V>> {
    value.split(',').map(|v| num(key, v.trim())).collect()
}

/// `N` for a cube or `NXxNYxNZ`.
pub fn parse_dims(value: &str) -> Result<Dims> {
    let parts: Vec<usize> = value
        .split('x')
        .map(|p| p.trim().parse().map_err(|_| Error::InvalidParameter(format!("bad dims '{value}'"))))
        .collect::<Result<_>>()?;
    match parts.as_slice() {
        [n] => Ok(Dims::cube(*n)),
        [x, y, z] => Ok(Dims::new(*x, *y, *z)),
        _ => Err(Error::InvalidParameter(format!("bad dims '{value}'"))),
    }
}
