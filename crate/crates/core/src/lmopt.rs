//! Factored Levenberg-Marquardt optimizer for displacement fields, plus the
//! Demons special case and first-order baselines (Adam, gradient descent).
//!
//! The Gauss-Newton Hessian is approximated independently per voxel by the
//! rank-1 outer product `g gᵀ` of the residual gradient. Its damped inverse
//! has a closed form, so a step costs one norm per voxel:
//!
//! ```text
//! Δu(x) = -r g(x) / (|g(x)|² + λ)
//! ```
//!
//! The only persistent optimizer state is the damping scalar `λ` and the last
//! two accepted losses.

use std::mem::size_of;

use crate::error::{Error, Result};
use crate::field::{compose_warp, jacobian_det_min, norm_sq, normalize_step, DispField, StepScale, Volume};
use crate::filter::gaussian_smooth_field;
use crate::scalar::Real;
use crate::similarity::ResidualReport;

/// Lower bound on `λ` so long runs of good steps cannot underflow it.
pub const LAMBDA_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LmConfig<T> {
    pub lambda0: T,
    /// Growth factor on a bad step (`> 1`).
    pub mu_plus: T,
    /// Shrink factor on a good step (`0 < mu_minus < 1`).
    pub mu_minus: T,
    /// Edge length of the cubic tiles that pool curvature; 1 is pointwise.
    pub tile_size: usize,
    pub rejection_enabled: bool,
    pub tau: T,
    /// Cap on `λ`; `+inf` disables the cap.
    pub lambda_max: T,
    /// Maximum number of candidate steps evaluated per iteration when
    /// rejection is enabled. The last candidate is accepted unconditionally.
    pub max_retries: usize,
}

impl<T: Real> Default for LmConfig<T> {
    fn default() -> Self {
        Self {
            lambda0: T::lit(0.006),
            mu_plus: T::lit(1.5),
            mu_minus: T::lit(0.975),
            tile_size: 1,
            rejection_enabled: false,
            tau: T::one(),
            lambda_max: T::one(),
            max_retries: 10,
        }
    }
}

impl<T: Real> LmConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.lambda0 > T::zero()) || !self.lambda0.is_finite() {
            return bad(format!("lambda0 must be positive, got {}", self.lambda0));
        }
        if !(self.mu_plus > T::one()) {
            return bad(format!("mu_plus must exceed 1, got {}", self.mu_plus));
        }
        if !(self.mu_minus > T::zero() && self.mu_minus < T::one()) {
            return bad(format!("mu_minus must lie in (0, 1), got {}", self.mu_minus));
        }
        if self.tile_size < 1 {
            return bad("tile_size must be >= 1".into());
        }
        if !(self.tau >= T::zero()) {
            return bad(format!("tau must be non-negative, got {}", self.tau));
        }
        if !(self.lambda_max > T::zero()) {
            return bad(format!("lambda_max must be positive, got {}", self.lambda_max));
        }
        Ok(())
    }
}

/// The last two accepted losses, most recent first.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossHistory<T> {
    pub last: Option<T>,
    pub before_last: Option<T>,
}

impl<T: Copy> LossHistory<T> {
    pub fn push(&mut self, loss: T) {
        self.before_last = self.last;
        self.last = Some(loss);
    }

    pub fn clear(&mut self) {
        *self = Self { last: None, before_last: None };
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LmState<T> {
    pub lambda: T,
    pub loss_hist: LossHistory<T>,
}

impl<T: Real> LmState<T> {
    pub fn new(cfg: &LmConfig<T>) -> Self {
        Self { lambda: cfg.lambda0, loss_hist: LossHistory::default() }
    }

    /// Trust-region damping update. A step is bad when the new loss exceeds
    /// the previous accepted loss (or there is none); ties count as good.
    /// Returns whether the step was bad.
    pub fn update_damping(&mut self, loss_new: T, cfg: &LmConfig<T>) -> bool {
        let bad = match self.loss_hist.last {
            Some(prev) => loss_new > prev,
            None => true,
        };
        let factor = if bad { cfg.mu_plus } else { cfg.mu_minus };
        self.lambda = (self.lambda * factor).min(cfg.lambda_max).max(T::lit(LAMBDA_FLOOR));
        self.loss_hist.push(loss_new);
        bad
    }

    fn bump(&mut self, cfg: &LmConfig<T>) {
        self.lambda = (self.lambda * cfg.mu_plus).min(cfg.lambda_max);
    }
}

/// Closed-form damped rank-1 solve for one voxel.
#[inline]
pub fn lm_step_voxel<T: Real>(r: T, g: [T; 3], lambda: T) -> [T; 3] {
    let denom = norm_sq(g) + lambda;
    let s = -r / denom;
    [s * g[0], s * g[1], s * g[2]]
}

/// Pointwise LM update over the whole field. Zero-gradient voxels give zero.
pub fn lm_step_pointwise<T: Real>(r: T, g: &DispField<T>, lambda: T) -> DispField<T> {
    let mut data = Vec::with_capacity(g.data().len());
    for v in g.vectors() {
        if v == [T::zero(); 3] {
            data.extend([T::zero(); 3]);
        } else {
            data.extend(lm_step_voxel(r, v, lambda));
        }
    }
    DispField::from_raw(g.dims(), data)
}

type Mat3<T> = [[T; 3]; 3];

/// Inverse of a symmetric 3x3 matrix via its adjugate.
fn inverse_sym3<T: Real>(m: &Mat3<T>) -> Mat3<T> {
    let c00 = m[1][1] * m[2][2] - m[1][2] * m[2][1];
    let c01 = m[1][2] * m[2][0] - m[1][0] * m[2][2];
    let c02 = m[1][0] * m[2][1] - m[1][1] * m[2][0];
    let det = m[0][0] * c00 + m[0][1] * c01 + m[0][2] * c02;
    let inv_det = T::one() / det;
    let c11 = m[0][0] * m[2][2] - m[0][2] * m[2][0];
    let c12 = m[0][1] * m[2][0] - m[0][0] * m[2][1];
    let c22 = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    [
        [c00 * inv_det, c01 * inv_det, c02 * inv_det],
        [c01 * inv_det, c11 * inv_det, c12 * inv_det],
        [c02 * inv_det, c12 * inv_det, c22 * inv_det],
    ]
}

/// Tiled LM update: curvature pooled as `Σ g gᵀ` over non-overlapping `k³`
/// tiles (partial at the boundary), shared by every voxel of the tile.
pub fn lm_step_tiled<T: Real>(r: T, g: &DispField<T>, lambda: T, k: usize) -> Result<DispField<T>> {
    if k < 1 {
        return Err(Error::InvalidParameter("tile size must be >= 1".into()));
    }
    let dims = g.dims();
    let mut out = DispField::zeros(dims);
    for tz in (0..dims.nz).step_by(k) {
        for ty in (0..dims.ny).step_by(k) {
            for tx in (0..dims.nx).step_by(k) {
                let zs = tz..(tz + k).min(dims.nz);
                let ys = ty..(ty + k).min(dims.ny);
                let xs = tx..(tx + k).min(dims.nx);
                let tile = || {
                    zs.clone().flat_map({
                        let ys = ys.clone();
                        let xs = xs.clone();
                        move |z| {
                            let xs = xs.clone();
                            ys.clone().flat_map(move |y| xs.clone().map(move |x| dims.index(x, y, z)))
                        }
                    })
                };
                let mut h = [[T::zero(); 3]; 3];
                for i in tile() {
                    let v = g.at(i);
                    for a in 0..3 {
                        for b in 0..3 {
                            h[a][b] += v[a] * v[b];
                        }
                    }
                }
                for (a, row) in h.iter_mut().enumerate() {
                    row[a] += lambda;
                }
                let inv = inverse_sym3(&h);
                for i in tile() {
                    let v = g.at(i);
                    let mut d = [T::zero(); 3];
                    for a in 0..3 {
                        d[a] = -r * (inv[a][0] * v[0] + inv[a][1] * v[1] + inv[a][2] * v[2]);
                    }
                    out.set_at(i, d);
                }
            }
        }
    }
    Ok(out)
}

/// Step rejection: reject when the loss rises by more than `tau` times the
/// magnitude of the previous change. A decrease is never rejected.
pub fn rejection_test<T: Real>(loss_new: T, loss_prev: T, loss_prev2: Option<T>, tau: T) -> bool {
    match loss_prev2 {
        None => false,
        Some(prev2) => loss_new - loss_prev > tau * (loss_prev - prev2).abs(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DemonsConfig<T> {
    pub alpha: T,
}

impl<T: Real> Default for DemonsConfig<T> {
    fn default() -> Self {
        Self { alpha: T::one() }
    }
}

/// Demons "active forces": `r_x n_x / (|n_x|² + α² r_x²)` per voxel.
pub fn demons_step_mse<T: Real>(per_voxel_r: &Volume<T>, moving_grad: &DispField<T>, alpha: T) -> Result<DispField<T>> {
    per_voxel_r.dims().ensure_same(moving_grad.dims())?;
    if !(alpha > T::zero()) {
        return Err(Error::InvalidParameter(format!("demons alpha must be positive, got {alpha}")));
    }
    let a2 = alpha * alpha;
    let mut data = Vec::with_capacity(moving_grad.data().len());
    for (&r, n) in per_voxel_r.data().iter().zip(moving_grad.vectors()) {
        let denom = norm_sq(n) + a2 * r * r;
        if denom == T::zero() {
            data.extend([T::zero(); 3]);
        } else {
            let s = r / denom;
            data.extend([s * n[0], s * n[1], s * n[2]]);
        }
    }
    Ok(DispField::from_raw(moving_grad.dims(), data))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig<T> {
    pub beta1: T,
    pub beta2: T,
    pub eps_hat: T,
    pub lr: T,
}

impl<T: Real> Default for AdamConfig<T> {
    fn default() -> Self {
        Self { beta1: T::lit(0.9), beta2: T::lit(0.999), eps_hat: T::lit(1e-8), lr: T::lit(0.5) }
    }
}

impl<T: Real> AdamConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let unit = |b: T| b >= T::zero() && b < T::one();
        if !unit(self.beta1) || !unit(self.beta2) {
            return Err(Error::InvalidParameter("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.eps_hat > T::zero()) || !(self.lr > T::zero()) {
            return Err(Error::InvalidParameter("Adam eps_hat and lr must be positive".into()));
        }
        Ok(())
    }
}

/// First- and second-moment buffers, one field each.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: DispField<T>,
    pub v: DispField<T>,
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(dims: crate::field::Dims) -> Self {
        Self { m: DispField::zeros(dims), v: DispField::zeros(dims), t: 0 }
    }
}

/// Bias-corrected Adam update `-lr m̂ / (sqrt(v̂) + eps_hat)`.
pub fn adam_step<T: Real>(g: &DispField<T>, state: &mut AdamState<T>, cfg: &AdamConfig<T>) -> Result<DispField<T>> {
    g.dims().ensure_same(state.m.dims())?;
    g.dims().ensure_same(state.v.dims())?;
    state.t += 1;
    let t = state.t as i32;
    let bc1 = T::one() - cfg.beta1.powi(t);
    let bc2 = T::one() - cfg.beta2.powi(t);
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let mut out = Vec::with_capacity(g.data().len());
    let m = state.m.data_mut();
    for (i, &gi) in g.data().iter().enumerate() {
        m[i] = b1 * m[i] + (T::one() - b1) * gi;
    }
    let v = state.v.data_mut();
    for (i, &gi) in g.data().iter().enumerate() {
        v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
    }
    let (m, v) = (state.m.data(), state.v.data());
    for i in 0..m.len() {
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        out.push(-cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps_hat));
    }
    Ok(DispField::from_raw(g.dims(), out))
}

/// Plain gradient descent direction `-lr g`.
pub fn gd_step<T: Real>(g: &DispField<T>, lr: T) -> DispField<T> {
    g.scaled(-lr)
}

/// How a raw update direction becomes a warp change: smooth, normalize to
/// the step scale, compose, then optionally smooth the total warp.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateRule<T> {
    pub step: StepScale<T>,
    pub sigma_update: T,
    pub sigma_warp: T,
}

impl<T: Real> Default for UpdateRule<T> {
    fn default() -> Self {
        Self { step: StepScale::default(), sigma_update: T::one(), sigma_warp: T::lit(0.5) }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AppliedUpdate<T> {
    pub warp: DispField<T>,
    pub eps: T,
    /// `jacobian_det_min` of the incremental warp `Id + eps v`.
    pub jac_det_min: T,
    /// Largest component of `eps v`.
    pub update_max: T,
}

pub fn apply_update<T: Real>(
    warp: &DispField<T>,
    direction: &DispField<T>,
    rule: &UpdateRule<T>,
) -> Result<AppliedUpdate<T>> {
    let v = gaussian_smooth_field(direction, rule.sigma_update);
    let eps = normalize_step(&v, &rule.step);
    let increment = v.scaled(eps);
    let jac_det_min = jacobian_det_min(&increment);
    let update_max = increment.max_abs_component();
    let composed = compose_warp(warp, &v, eps)?;
    let warp = gaussian_smooth_field(&composed, rule.sigma_warp);
    Ok(AppliedUpdate { warp, eps, jac_det_min, update_max })
}

/// Residual evaluation at a candidate warp.
pub trait Objective<T> {
    fn evaluate(&mut self, u: &DispField<T>) -> Result<ResidualReport<T>>;
}

impl<T, F> Objective<T> for F
where
    F: FnMut(&DispField<T>) -> Result<ResidualReport<T>>,
{
    fn evaluate(&mut self, u: &DispField<T>) -> Result<ResidualReport<T>> {
        self(u)
    }
}

/// Current warp together with the residual evaluated at it.
#[derive(Clone, Debug, PartialEq)]
pub struct WarpState<T> {
    pub warp: DispField<T>,
    pub report: ResidualReport<T>,
}

impl<T: Real> WarpState<T> {
    pub fn new(warp: DispField<T>, objective: &mut impl Objective<T>) -> Result<Self> {
        let report = objective.evaluate(&warp)?;
        if !report.r.is_finite() {
            return Err(Error::NonFinite("loss"));
        }
        Ok(Self { warp, report })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLog<T> {
    pub loss_raw: T,
    pub r: T,
    /// Damping after the iteration; `None` for first-order optimizers.
    pub lambda: Option<T>,
    pub eps: T,
    /// False when the step was taken only because retries ran out.
    pub accepted: bool,
    pub retries: usize,
    pub jac_det_min: T,
    pub update_max: T,
}

fn check_finite<T: Real>(rep: ResidualReport<T>) -> Result<ResidualReport<T>> {
    if rep.r.is_finite() && rep.loss_raw.is_finite() {
        Ok(rep)
    } else {
        Err(Error::NonFinite("loss"))
    }
}

/// One LM iteration with optional capped step rejection.
///
/// On rejection the warp is restored, `λ ← min(μ⁺ λ, λ_max)` and the step is
/// recomputed; after `max_retries` candidates the last one is taken. The
/// damping rule then runs once on the accepted loss.
pub fn lm_iterate<T: Real>(
    ws: &mut WarpState<T>,
    objective: &mut impl Objective<T>,
    rule: &UpdateRule<T>,
    cfg: &LmConfig<T>,
    state: &mut LmState<T>,
) -> Result<StepLog<T>> {
    if state.loss_hist.last.is_none() {
        state.loss_hist.push(ws.report.r);
    }
    let prev = state.loss_hist.last.expect("seeded above");
    let prev2 = state.loss_hist.before_last;
    let attempts = if cfg.rejection_enabled { cfg.max_retries.max(1) } else { 1 };
    let mut retries = 0;
    let (applied, report, accepted) = loop {
        let direction = if cfg.tile_size == 1 {
            lm_step_pointwise(ws.report.r, &ws.report.g, state.lambda)
        } else {
            lm_step_tiled(ws.report.r, &ws.report.g, state.lambda, cfg.tile_size)?
        };
        let applied = apply_update(&ws.warp, &direction, rule)?;
        let report = check_finite(objective.evaluate(&applied.warp)?)?;
        let reject = cfg.rejection_enabled && rejection_test(report.r, prev, prev2, cfg.tau);
        if reject && retries + 1 < attempts {
            retries += 1;
            state.bump(cfg);
            continue;
        }
        break (applied, report, !reject);
    };
    state.update_damping(report.r, cfg);
    let log = StepLog {
        loss_raw: report.loss_raw,
        r: report.r,
        lambda: Some(state.lambda),
        eps: applied.eps,
        accepted,
        retries,
        jac_det_min: applied.jac_det_min,
        update_max: applied.update_max,
    };
    ws.warp = applied.warp;
    ws.report = report;
    Ok(log)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerConfig<T> {
    Lm(LmConfig<T>),
    Adam(AdamConfig<T>),
    Gd { lr: T },
}

impl<T: Real> Default for OptimizerConfig<T> {
    fn default() -> Self {
        OptimizerConfig::Lm(LmConfig::default())
    }
}

impl<T: Real> OptimizerConfig<T> {
    pub fn validate(&self) -> Result<()> {
        match self {
            OptimizerConfig::Lm(c) => c.validate(),
            OptimizerConfig::Adam(c) => c.validate(),
            OptimizerConfig::Gd { lr } if *lr > T::zero() => Ok(()),
            OptimizerConfig::Gd { .. } => Err(Error::InvalidParameter("gd lr must be positive".into())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerConfig::Lm(_) => "lm",
            OptimizerConfig::Adam(_) => "adam",
            OptimizerConfig::Gd { .. } => "gd",
        }
    }
}

/// An optimizer together with its persistent state.
#[derive(Clone, Debug, PartialEq)]
pub enum Optimizer<T> {
    Lm { cfg: LmConfig<T>, state: LmState<T> },
    Adam { cfg: AdamConfig<T>, state: AdamState<T> },
    Gd { lr: T },
}

impl<T: Real> Optimizer<T> {
    pub fn new(cfg: &OptimizerConfig<T>, dims: crate::field::Dims) -> Self {
        match *cfg {
            OptimizerConfig::Lm(c) => Optimizer::Lm { cfg: c, state: LmState::new(&c) },
            OptimizerConfig::Adam(c) => Optimizer::Adam { cfg: c, state: AdamState::new(dims) },
            OptimizerConfig::Gd { lr } => Optimizer::Gd { lr },
        }
    }

    /// Prepares for a new pyramid level: LM forgets its loss history but
    /// keeps `λ`; Adam restarts its moments on the new grid.
    pub fn start_level(&mut self, dims: crate::field::Dims) {
        match self {
            Optimizer::Lm { state, .. } => state.loss_hist.clear(),
            Optimizer::Adam { state, .. } => *state = AdamState::new(dims),
            Optimizer::Gd { .. } => {}
        }
    }

    pub fn lambda(&self) -> Option<T> {
        match self {
            Optimizer::Lm { state, .. } => Some(state.lambda),
            _ => None,
        }
    }

    pub fn iterate(
        &mut self,
        ws: &mut WarpState<T>,
        objective: &mut impl Objective<T>,
        rule: &UpdateRule<T>,
    ) -> Result<StepLog<T>> {
        let direction = match self {
            Optimizer::Lm { cfg, state } => return lm_iterate(ws, objective, rule, cfg, state),
            Optimizer::Adam { cfg, state } => adam_step(&ws.report.g, state, cfg)?,
            Optimizer::Gd { lr } => gd_step(&ws.report.g, *lr),
        };
        let applied = apply_update(&ws.warp, &direction, rule)?;
        let report = check_finite(objective.evaluate(&applied.warp)?)?;
        let log = StepLog {
            loss_raw: report.loss_raw,
            r: report.r,
            lambda: None,
            eps: applied.eps,
            accepted: true,
            retries: 0,
            jac_det_min: applied.jac_det_min,
            update_max: applied.update_max,
        };
        ws.warp = applied.warp;
        ws.report = report;
        Ok(log)
    }

    /// Bytes of optimizer state carried between iterations. Adam counts its
    /// two moment buffers; LM counts its scalar state and configuration.
    /// The Adam step counter is bookkeeping and is not counted.
    pub fn state_bytes(&self) -> usize {
        match self {
            Optimizer::Lm { .. } => size_of::<LmState<T>>() + size_of::<LmConfig<T>>(),
            Optimizer::Adam { state, .. } => (state.m.data().len() + state.v.data().len()) * size_of::<T>(),
            Optimizer::Gd { .. } => size_of::<T>(),
        }
    }
}

/// Bytes of a displacement field with `voxels` voxels at precision `T`.
pub fn field_bytes<T>(voxels: usize) -> usize {
    3 * voxels * size_of::<T>()
}
