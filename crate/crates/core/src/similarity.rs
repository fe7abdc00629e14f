//! Similarity metrics in residual form.
//!
//! Every metric reports a scalar residual `r >= 0` together with its
//! gradient field `g = dr/du`:
//!
//! | metric | residual            |
//! |--------|---------------------|
//! | MSE    | mean `(f - m∘φ)^2`  |
//! | LNCC   | `1 - LNCC`          |
//! | MI     | `log2(B) - MI`      |
//!
//! Gradients use the exact derivative of the trilinear interpolant of the
//! moving image at the warped sample positions, so they agree with finite
//! differences of `r` itself.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::field::{voxel_point, DispField, Volume};
use crate::filter::{box_count, box_sum};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MetricKind {
    Mse,
    Lncc,
    Mi,
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetricKind::Mse => "mse",
            MetricKind::Lncc => "lncc",
            MetricKind::Mi => "mi",
        })
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mse" => Ok(MetricKind::Mse),
            "lncc" | "cc" => Ok(MetricKind::Lncc),
            "mi" => Ok(MetricKind::Mi),
            other => Err(Error::InvalidParameter(format!("unknown metric '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricConfig<T> {
    pub kind: MetricKind,
    /// Half-width of the cubic LNCC window.
    pub lncc_radius: usize,
    /// Number of Parzen bins per intensity axis.
    pub mi_bins: usize,
    /// Parzen kernel standard deviation, in bin widths.
    pub mi_parzen_sigma: T,
}

impl<T: Real> Default for MetricConfig<T> {
    fn default() -> Self {
        Self { kind: MetricKind::Mse, lncc_radius: 2, mi_bins: 32, mi_parzen_sigma: T::one() }
    }
}

impl<T: Real> MetricConfig<T> {
    pub fn with_kind(kind: MetricKind) -> Self {
        Self { kind, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lncc_radius < 1 {
            return Err(Error::InvalidParameter("lncc_radius must be >= 1".into()));
        }
        if self.mi_bins < 2 {
            return Err(Error::InvalidParameter(format!("mi_bins must be >= 2, got {}", self.mi_bins)));
        }
        if !(self.mi_parzen_sigma > T::zero()) {
            return Err(Error::InvalidParameter("mi_parzen_sigma must be positive".into()));
        }
        Ok(())
    }
}

/// Per-voxel intensity residual `f(x) - m(x + u(x))` and moving-image
/// gradient at the warped position, kept for the Demons update.
#[derive(Clone, Debug, PartialEq)]
pub struct PerVoxelResidual<T> {
    pub residual: Volume<T>,
    pub moving_grad: DispField<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResidualReport<T> {
    pub r: T,
    pub g: DispField<T>,
    /// Underlying metric value: MSE, LNCC or MI in bits.
    pub loss_raw: T,
    /// Only populated by MSE.
    pub per_voxel: Option<PerVoxelResidual<T>>,
}

/// Warped moving intensities and the interpolant gradient at each warped
/// position.
fn warp_with_gradient<T: Real>(moving: &Volume<T>, u: &DispField<T>) -> (Vec<T>, Vec<[T; 3]>) {
    let dims = u.dims();
    let mut w = Vec::with_capacity(dims.len());
    let mut n = Vec::with_capacity(dims.len());
    for (i, c) in dims.coords().enumerate() {
        let x: [T; 3] = voxel_point(c);
        let d = u.at(i);
        let (v, grad) = moving.sample_with_gradient([x[0] + d[0], x[1] + d[1], x[2] + d[2]]);
        w.push(v);
        n.push(grad);
    }
    (w, n)
}

/// Warped moving image `m(x + u(x))`.
pub fn warp_volume<T: Real>(moving: &Volume<T>, u: &DispField<T>) -> Result<Volume<T>> {
    moving.dims().ensure_same(u.dims())?;
    let dims = u.dims();
    let data = dims
        .coords()
        .enumerate()
        .map(|(i, c)| {
            let x: [T; 3] = voxel_point(c);
            let d = u.at(i);
            moving.sample_unchecked([x[0] + d[0], x[1] + d[1], x[2] + d[2]])
        })
        .collect();
    Ok(Volume::from_raw(dims, data))
}

fn check_dims<T: Real>(fixed: &Volume<T>, moving: &Volume<T>, u: &DispField<T>) -> Result<()> {
    fixed.dims().ensure_same(moving.dims())?;
    fixed.dims().ensure_same(u.dims())
}

fn scale_gradient<T: Real>(dims: crate::field::Dims, coef: &[T], n: &[[T; 3]]) -> DispField<T> {
    let mut data = Vec::with_capacity(3 * coef.len());
    for (c, v) in coef.iter().zip(n) {
        data.extend([*c * v[0], *c * v[1], *c * v[2]]);
    }
    DispField::from_raw(dims, data)
}

pub fn residual_mse<T: Real>(fixed: &Volume<T>, moving: &Volume<T>, u: &DispField<T>) -> Result<ResidualReport<T>> {
    check_dims(fixed, moving, u)?;
    let dims = u.dims();
    let inv_n = T::one() / T::from_usize_lossy(dims.len());
    let (w, n) = warp_with_gradient(moving, u);
    let e: Vec<T> = fixed.data().iter().zip(&w).map(|(&f, &m)| f - m).collect();
    let r = e.iter().map(|&d| d * d).sum::<T>() * inv_n;
    let two_n = T::lit(2.0) * inv_n;
    let coef: Vec<T> = e.iter().map(|&d| -two_n * d).collect();
    let g = scale_gradient(dims, &coef, &n);
    let per_voxel = PerVoxelResidual {
        residual: Volume::from_raw(dims, e),
        moving_grad: DispField::from_raw(dims, n.into_iter().flatten().collect()),
    };
    Ok(ResidualReport { r, g, loss_raw: r, per_voxel: Some(per_voxel) })
}

/// Windows whose variance falls below this fraction of their second moment
/// count as constant.
const LNCC_DEGENERATE_REL: f64 = 1e-10;

pub fn residual_lncc<T: Real>(
    fixed: &Volume<T>,
    moving: &Volume<T>,
    u: &DispField<T>,
    cfg: &MetricConfig<T>,
) -> Result<ResidualReport<T>> {
    check_dims(fixed, moving, u)?;
    cfg.validate()?;
    let dims = u.dims();
    let radius = cfg.lncc_radius;
    if dims.as_array().iter().any(|&d| d <= 2 * radius) {
        return Err(Error::InvalidParameter(format!("LNCC window of radius {radius} does not fit in {dims}")));
    }
    let (w, n) = warp_with_gradient(moving, u);
    let f = fixed.data();
    let ff: Vec<T> = f.iter().map(|&a| a * a).collect();
    let ww: Vec<T> = w.iter().map(|&a| a * a).collect();
    let fw: Vec<T> = f.iter().zip(&w).map(|(&a, &b)| a * b).collect();
    let sf = box_sum(f, dims, radius);
    let sw = box_sum(&w, dims, radius);
    let sff = box_sum(&ff, dims, radius);
    let sww = box_sum(&ww, dims, radius);
    let sfw = box_sum(&fw, dims, radius);
    let cnt: Vec<T> = box_count(dims, radius);

    let tol = T::lit(LNCC_DEGENERATE_REL);
    let len = dims.len();
    let mut cc_sum = T::zero();
    let (mut a, mut b, mut c) = (vec![T::zero(); len], vec![T::zero(); len], vec![T::zero(); len]);
    for i in 0..len {
        let mf = sf[i] / cnt[i];
        let mw = sw[i] / cnt[i];
        let cov = sfw[i] - sf[i] * mw;
        let vf = sff[i] - sf[i] * mf;
        let vw = sww[i] - sw[i] * mw;
        if vf <= tol * sff[i] || vw <= tol * sww[i] || vf <= T::zero() || vw <= T::zero() {
            continue;
        }
        let denom = vf * vw;
        cc_sum += cov * cov / denom;
        a[i] = T::lit(2.0) * cov / denom;
        b[i] = a[i] * cov / vw;
        c[i] = b[i] * mw - a[i] * mf;
    }
    let inv_n = T::one() / T::from_usize_lossy(len);
    let lncc = cc_sum * inv_n;
    let ba = box_sum(&a, dims, radius);
    let bb = box_sum(&b, dims, radius);
    let bc = box_sum(&c, dims, radius);
    // dr/dw = -dLNCC/dw
    let coef: Vec<T> = (0..len).map(|i| -(f[i] * ba[i] - w[i] * bb[i] + bc[i]) * inv_n).collect();
    Ok(ResidualReport { r: T::one() - lncc, g: scale_gradient(dims, &coef, &n), loss_raw: lncc, per_voxel: None })
}

/// Continuous Gaussian Parzen kernel truncated at four standard deviations,
/// shifted so it reaches zero at the cutoff.
struct ParzenKernel<T> {
    sigma: T,
    cutoff: T,
    offset: T,
    bins: usize,
}

impl<T: Real> ParzenKernel<T> {
    fn new(sigma: T, bins: usize) -> Self {
        Self { sigma, cutoff: T::lit(4.0) * sigma, offset: T::lit(-8.0).exp(), bins }
    }

    /// Normalized weights over bins for bin coordinate `s`, with their
    /// derivatives in `s`. Returns the first bin index.
    fn weights(&self, s: T, w: &mut Vec<T>, dw: &mut Vec<T>) -> usize {
        w.clear();
        dw.clear();
        let top = self.bins - 1;
        let lo = (s - self.cutoff).ceil().max(T::zero()).to_usize().unwrap_or(0).min(top);
        let hi = (s + self.cutoff).floor().max(T::zero()).to_usize().unwrap_or(0).min(top);
        let s2 = self.sigma * self.sigma;
        let (mut z, mut dz) = (T::zero(), T::zero());
        for j in lo..=hi {
            let d = s - T::from_usize_lossy(j);
            let e = (-(d * d) / (T::lit(2.0) * s2)).exp();
            let (k, dk) = if d.abs() < self.cutoff { (e - self.offset, -d / s2 * e) } else { (T::zero(), T::zero()) };
            w.push(k.max(T::zero()));
            dw.push(dk);
            z += k.max(T::zero());
            dz += dk;
        }
        if z <= T::zero() {
            // Kernel narrower than a bin: hard assignment to the nearest bin.
            let j = s.round().max(T::zero()).to_usize().unwrap_or(0).min(top);
            w.clear();
            dw.clear();
            w.push(T::one());
            dw.push(T::zero());
            return j;
        }
        for j in 0..w.len() {
            let a = w[j] / z;
            dw[j] = (dw[j] - a * dz) / z;
            w[j] = a;
        }
        lo
    }
}

fn normalized_intensities<T: Real>(data: &[T]) -> (Vec<T>, T) {
    let (lo, hi) = data.iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    if range > T::zero() {
        (data.iter().map(|&v| (v - lo) / range).collect(), range)
    } else {
        (vec![T::zero(); data.len()], T::one())
    }
}

const MI_DENSITY_FLOOR: f64 = 1e-12;

pub fn residual_mi<T: Real>(
    fixed: &Volume<T>,
    moving: &Volume<T>,
    u: &DispField<T>,
    cfg: &MetricConfig<T>,
) -> Result<ResidualReport<T>> {
    check_dims(fixed, moving, u)?;
    cfg.validate()?;
    let dims = u.dims();
    let bins = cfg.mi_bins;
    let scale = T::from_usize_lossy(bins - 1);
    let kernel = ParzenKernel::new(cfg.mi_parzen_sigma, bins);

    let (fnorm, _) = normalized_intensities(fixed.data());
    let (mnorm, _) = normalized_intensities(moving.data());
    let mnorm = Volume::from_raw(dims, mnorm);
    let (w, n) = warp_with_gradient(&mnorm, u);

    let len = dims.len();
    let inv_n = T::one() / T::from_usize_lossy(len);
    let mut joint = vec![T::zero(); bins * bins];
    let (mut fa, mut fda, mut ma, mut mda) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    // Per-voxel moving weights are needed again for the gradient.
    let mut f_lo = Vec::with_capacity(len);
    let mut f_w: Vec<Vec<T>> = Vec::with_capacity(len);
    let mut m_lo = Vec::with_capacity(len);
    let mut m_dw: Vec<Vec<T>> = Vec::with_capacity(len);
    for i in 0..len {
        let lf = kernel.weights(fnorm[i] * scale, &mut fa, &mut fda);
        let lm = kernel.weights(w[i] * scale, &mut ma, &mut mda);
        for (p, &a) in fa.iter().enumerate() {
            let row = (lf + p) * bins + lm;
            for (q, &b) in ma.iter().enumerate() {
                joint[row + q] += a * b;
            }
        }
        f_lo.push(lf);
        f_w.push(fa.clone());
        m_lo.push(lm);
        m_dw.push(mda.clone());
    }
    for p in joint.iter_mut() {
        *p *= inv_n;
    }
    let mut pf = vec![T::zero(); bins];
    let mut pm = vec![T::zero(); bins];
    for i in 0..bins {
        for j in 0..bins {
            pf[i] += joint[i * bins + j];
            pm[j] += joint[i * bins + j];
        }
    }
    let floor = T::lit(MI_DENSITY_FLOOR);
    let log2 = |p: T| p.max(floor).log2();
    let lj: Vec<T> = joint.iter().map(|&p| log2(p)).collect();
    let lf: Vec<T> = pf.iter().map(|&p| log2(p)).collect();
    let lm: Vec<T> = pm.iter().map(|&p| log2(p)).collect();
    let mut mi = T::zero();
    for i in 0..bins {
        for j in 0..bins {
            let p = joint[i * bins + j];
            if p > T::zero() {
                mi += p * (lj[i * bins + j] - lf[i] - lm[j]);
            }
        }
    }

    let mut coef = Vec::with_capacity(len);
    for v in 0..len {
        // dMI/ds for the moving bin coordinate s of voxel v
        let mut d = T::zero();
        for (q, &db) in m_dw[v].iter().enumerate() {
            let j = m_lo[v] + q;
            let mut acc = -lm[j];
            for (p, &a) in f_w[v].iter().enumerate() {
                acc += a * lj[(f_lo[v] + p) * bins + j];
            }
            d += db * acc;
        }
        coef.push(-d * inv_n * scale);
    }
    let log2_bins = T::from_usize_lossy(bins).log2();
    Ok(ResidualReport { r: log2_bins - mi, g: scale_gradient(dims, &coef, &n), loss_raw: mi, per_voxel: None })
}

/// Residual and gradient of the configured metric.
pub fn residual<T: Real>(
    fixed: &Volume<T>,
    moving: &Volume<T>,
    u: &DispField<T>,
    cfg: &MetricConfig<T>,
) -> Result<ResidualReport<T>> {
    match cfg.kind {
        MetricKind::Mse => residual_mse(fixed, moving, u),
        MetricKind::Lncc => residual_lncc(fixed, moving, u, cfg),
        MetricKind::Mi => residual_mi(fixed, moving, u, cfg),
    }
}
