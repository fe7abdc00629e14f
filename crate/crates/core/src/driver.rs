//! Greedy coarse-to-fine registration loop.

use thiserror::Error;

use crate::error::{Error, Result};
use crate::field::{jacobian_det_min, norm, DispField, Volume};
use crate::lmopt::{Optimizer, OptimizerConfig, UpdateRule, WarpState};
use crate::pyramid::{downsample, level_dims, upsample_warp, PyramidSchedule};
use crate::scalar::Real;
use crate::similarity::{residual, MetricConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct RegConfig<T> {
    pub metric: MetricConfig<T>,
    pub optimizer: OptimizerConfig<T>,
    pub schedule: PyramidSchedule,
    /// Update smoothing, normalization and warp smoothing.
    pub rule: UpdateRule<T>,
    pub seed: u64,
}

impl<T: Real> Default for RegConfig<T> {
    fn default() -> Self {
        Self {
            metric: MetricConfig::default(),
            optimizer: OptimizerConfig::default(),
            schedule: PyramidSchedule::default(),
            rule: UpdateRule::default(),
            seed: 0,
        }
    }
}

impl<T: Real> RegConfig<T> {
    pub fn validate(&self) -> Result<()> {
        self.metric.validate()?;
        self.optimizer.validate()?;
        self.rule.step.validate()?;
        if !(self.rule.sigma_update >= T::zero()) || !(self.rule.sigma_warp >= T::zero()) {
            return Err(Error::InvalidParameter("smoothing sigmas must be non-negative".into()));
        }
        Ok(())
    }
}

/// One optimizer iteration as logged by [`register`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow<T> {
    pub level: usize,
    pub iter: usize,
    pub loss_raw: T,
    pub r: T,
    pub lambda: Option<T>,
    pub eps: T,
    pub accepted: bool,
    pub retries: usize,
    /// Jacobian determinant minimum of the incremental warp of this step.
    pub jac_det_min: T,
    /// Largest displacement component of the applied increment.
    pub update_max: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegResult<T> {
    pub final_warp: DispField<T>,
    pub loss_trace: Vec<TraceRow<T>>,
    pub jac_det_min_final: T,
    /// Residual of the final warp at full resolution.
    pub final_r: T,
    pub final_loss_raw: T,
}

impl<T: Real> RegResult<T> {
    pub fn final_lambda(&self) -> Option<T> {
        self.loss_trace.last().and_then(|row| row.lambda)
    }

    pub fn total_retries(&self) -> usize {
        self.loss_trace.iter().map(|row| row.retries).sum()
    }
}

/// Registration failure, carrying the trace recorded before it.
#[derive(Debug, Error)]
#[error("{source}")]
pub struct RegistrationError<T: std::fmt::Debug> {
    #[source]
    pub source: Error,
    pub partial_trace: Vec<TraceRow<T>>,
}

impl<T: std::fmt::Debug> From<Error> for RegistrationError<T> {
    fn from(source: Error) -> Self {
        Self { source, partial_trace: Vec::new() }
    }
}

/// Registers `moving` onto `fixed`: the returned warp `u` satisfies
/// `moving(x + u(x)) ≈ fixed(x)`.
pub fn register<T: Real>(
    fixed: &Volume<T>,
    moving: &Volume<T>,
    cfg: &RegConfig<T>,
) -> Result<RegResult<T>, RegistrationError<T>> {
    cfg.validate()?;
    fixed.dims().ensure_same(moving.dims())?;
    let full = fixed.dims();
    let levels = cfg.schedule.levels();
    let mut optimizer = Optimizer::new(&cfg.optimizer, level_dims(full, levels[0].factor));
    let mut trace = Vec::with_capacity(cfg.schedule.total_iterations());
    let mut carried: Option<(DispField<T>, usize)> = None;
    let mut last: Option<WarpState<T>> = None;

    for (li, level) in levels.iter().enumerate() {
        let f = downsample(fixed, level.factor)?;
        let m = downsample(moving, level.factor)?;
        let dims = f.dims();
        let warp = match carried.take() {
            None => DispField::zeros(dims),
            Some((u, prev_factor)) => {
                upsample_warp(&u, dims, T::from_usize_lossy(prev_factor) / T::from_usize_lossy(level.factor))?
            }
        };
        optimizer.start_level(dims);
        let mut objective = |u: &DispField<T>| residual(&f, &m, u, &cfg.metric);
        let mut ws = WarpState::new(warp, &mut objective).map_err(|e| fail(e, li, 0, &trace))?;
        for iter in 0..level.iterations {
            let log = optimizer.iterate(&mut ws, &mut objective, &cfg.rule).map_err(|e| fail(e, li, iter, &trace))?;
            trace.push(TraceRow {
                level: li,
                iter,
                loss_raw: log.loss_raw,
                r: log.r,
                lambda: log.lambda,
                eps: log.eps,
                accepted: log.accepted,
                retries: log.retries,
                jac_det_min: log.jac_det_min,
                update_max: log.update_max,
            });
        }
        carried = Some((ws.warp.clone(), level.factor));
        last = Some(ws);
    }

    let ws = last.expect("schedule has at least one level");
    Ok(RegResult {
        jac_det_min_final: jacobian_det_min(&ws.warp),
        final_r: ws.report.r,
        final_loss_raw: ws.report.loss_raw,
        final_warp: ws.warp,
        loss_trace: trace,
    })
}

fn fail<T: Real>(e: Error, level: usize, iter: usize, trace: &[TraceRow<T>]) -> RegistrationError<T> {
    let source = match e {
        Error::NonFinite("loss") => Error::NonFiniteLoss { level, iter },
        other => other,
    };
    RegistrationError { source, partial_trace: trace.to_vec() }
}

/// Border excluded from endpoint-error statistics, in voxels.
pub const EPE_BORDER: usize = 2;

/// Mean and max Euclidean distance between two displacement fields over the
/// grid interior (a two-voxel border is excluded where the grid allows it).
pub fn endpoint_error<T: Real>(u_est: &DispField<T>, u_true: &DispField<T>) -> Result<(T, T)> {
    u_est.dims().ensure_same(u_true.dims())?;
    let dims = u_est.dims();
    let range = |n: usize| if n > 2 * EPE_BORDER { EPE_BORDER..n - EPE_BORDER } else { 0..n };
    let (mut sum, mut max, mut count) = (T::zero(), T::zero(), 0usize);
    for z in range(dims.nz) {
        for y in range(dims.ny) {
            for x in range(dims.nx) {
                let a = u_est.get(x, y, z);
                let b = u_true.get(x, y, z);
                let d = norm([a[0] - b[0], a[1] - b[1], a[2] - b[2]]);
                sum += d;
                max = max.max(d);
                count += 1;
            }
        }
    }
    Ok((sum / T::from_usize_lossy(count), max))
}
