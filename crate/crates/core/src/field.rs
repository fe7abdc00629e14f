//! Dense scalar volumes and displacement fields on a regular voxel grid.
//!
//! Voxel centers sit at integer coordinates with the origin at `(0, 0, 0)`;
//! spacing is unit and isotropic. Storage is x-fastest, and displacement
//! fields store their three components innermost.

use std::fmt;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Grid extent along x, y and z.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Dims {
    pub const fn new(nx: usize, ny: usize, nz: usize) -> Self {
        Self { nx, ny, nz }
    }

    pub const fn cube(n: usize) -> Self {
        Self::new(n, n, n)
    }

    /// Number of voxels.
    #[inline]
    pub const fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    #[inline]
    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub const fn as_array(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    #[inline]
    pub const fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.nx * (y + self.ny * z)
    }

    /// Iterates voxel coordinates in storage order.
    pub fn coords(&self) -> impl Iterator<Item = [usize; 3]> {
        let Dims { nx, ny, nz } = *self;
        (0..nz).flat_map(move |z| (0..ny).flat_map(move |y| (0..nx).map(move |x| [x, y, z])))
    }

    pub fn ensure_same(&self, other: Dims) -> Result<()> {
        if *self == other {
            Ok(())
        } else {
            Err(Error::DimMismatch { expected: *self, found: other })
        }
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.nx, self.ny, self.nz)
    }
}

/// Dense scalar 3-D image.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume<T> {
    dims: Dims,
    data: Vec<T>,
}

impl<T: Real> Volume<T> {
    /// Wraps `data`, checking its length and that every value is finite.
    pub fn new(dims: Dims, data: Vec<T>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidParameter(format!("empty volume dims {dims}")));
        }
        if data.len() != dims.len() {
            return Err(Error::Length { expected: dims.len(), found: data.len() });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("volume data"));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Dims) -> Self {
        Self::filled(dims, T::zero())
    }

    pub fn filled(dims: Dims, value: T) -> Self {
        Self { dims, data: vec![value; dims.len()] }
    }

    /// Builds a volume by evaluating `f` at every voxel coordinate.
    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let data = dims.coords().map(|[x, y, z]| f(x, y, z)).collect();
        Self { dims, data }
    }

    /// Internal constructor for kernels that guarantee the invariants.
    pub(crate) fn from_raw(dims: Dims, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), dims.len());
        Self { dims, data }
    }

    #[inline]
    pub fn dims(&self) -> Dims {
        self.dims
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> T {
        self.data[self.dims.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: T) {
        let i = self.dims.index(x, y, z);
        self.data[i] = v;
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn min_max(&self) -> (T, T) {
        self.data.iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { dims: self.dims, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn map_with(mut self, mut f: impl FnMut(T) -> T) -> Self {
        for v in &mut self.data {
            *v = f(*v);
        }
        self
    }

    /// Converts to another scalar precision.
    pub fn cast<U: Real>(&self) -> Volume<U> {
        Volume { dims: self.dims, data: self.data.iter().map(|v| U::lit(v.as_f64())).collect() }
    }

    /// Trilinear sample with clamp-to-edge boundary.
    pub fn sample(&self, p: [T; 3]) -> Result<T> {
        if p.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("sample point"));
        }
        Ok(self.sample_unchecked(p))
    }

    #[inline]
    pub(crate) fn sample_unchecked(&self, p: [T; 3]) -> T {
        Stencil::new(self.dims, p).value(&self.data, 1, 0)
    }

    /// Trilinear sample together with the exact derivative of the
    /// interpolant with respect to the sample position. The derivative is
    /// zero along axes where the point lies outside the grid.
    #[inline]
    pub(crate) fn sample_with_gradient(&self, p: [T; 3]) -> (T, [T; 3]) {
        let s = Stencil::new(self.dims, p);
        (s.value(&self.data, 1, 0), s.gradient(&self.data, 1, 0))
    }
}

/// Dense 3-vector displacement field in voxel units. The zero field is the
/// identity warp.
#[derive(Clone, Debug, PartialEq)]
pub struct DispField<T> {
    dims: Dims,
    data: Vec<T>,
}

impl<T: Real> DispField<T> {
    pub fn new(dims: Dims, data: Vec<T>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidParameter(format!("empty field dims {dims}")));
        }
        if data.len() != 3 * dims.len() {
            return Err(Error::Length { expected: 3 * dims.len(), found: data.len() });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("displacement data"));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Dims) -> Self {
        Self { dims, data: vec![T::zero(); 3 * dims.len()] }
    }

    /// Same vector at every voxel.
    pub fn uniform(dims: Dims, v: [T; 3]) -> Self {
        Self::from_fn(dims, |_, _, _| v)
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> [T; 3]) -> Self {
        let mut data = Vec::with_capacity(3 * dims.len());
        for [x, y, z] in dims.coords() {
            data.extend_from_slice(&f(x, y, z));
        }
        Self { dims, data }
    }

    pub(crate) fn from_raw(dims: Dims, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), 3 * dims.len());
        Self { dims, data }
    }

    /// Assembles a field from its three component volumes.
    pub fn from_components(c: [&Volume<T>; 3]) -> Result<Self> {
        let dims = c[0].dims();
        dims.ensure_same(c[1].dims())?;
        dims.ensure_same(c[2].dims())?;
        let mut data = Vec::with_capacity(3 * dims.len());
        for i in 0..dims.len() {
            data.extend([c[0].data[i], c[1].data[i], c[2].data[i]]);
        }
        Ok(Self { dims, data })
    }

    pub fn component(&self, axis: usize) -> Volume<T> {
        assert!(axis < 3);
        Volume::from_raw(self.dims, self.data.iter().skip(axis).step_by(3).copied().collect())
    }

    #[inline]
    pub fn dims(&self) -> Dims {
        self.dims
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub(crate) fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn at(&self, i: usize) -> [T; 3] {
        [self.data[3 * i], self.data[3 * i + 1], self.data[3 * i + 2]]
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> [T; 3] {
        self.at(self.dims.index(x, y, z))
    }

    #[inline]
    pub fn set_at(&mut self, i: usize, v: [T; 3]) {
        self.data[3 * i..3 * i + 3].copy_from_slice(&v);
    }

    pub fn vectors(&self) -> impl Iterator<Item = [T; 3]> + '_ {
        self.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]])
    }

    pub fn scaled(&self, s: T) -> Self {
        Self { dims: self.dims, data: self.data.iter().map(|&v| v * s).collect() }
    }

    /// Largest absolute value over all components.
    pub fn max_abs_component(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// Largest per-voxel Euclidean norm.
    pub fn max_norm(&self) -> T {
        self.vectors().fold(T::zero(), |m, v| m.max(norm(v)))
    }

    pub fn cast<U: Real>(&self) -> DispField<U> {
        DispField { dims: self.dims, data: self.data.iter().map(|v| U::lit(v.as_f64())).collect() }
    }

    /// Trilinear sample of all three components at `p`, clamp-to-edge.
    #[inline]
    pub fn sample(&self, p: [T; 3]) -> [T; 3] {
        let s = Stencil::new(self.dims, p);
        [s.value(&self.data, 3, 0), s.value(&self.data, 3, 1), s.value(&self.data, 3, 2)]
    }
}

#[inline]
pub(crate) fn norm_sq<T: Real>(v: [T; 3]) -> T {
    v[0] * v[0] + v[1] * v[1] + v[2] * v[2]
}

#[inline]
pub(crate) fn norm<T: Real>(v: [T; 3]) -> T {
    norm_sq(v).sqrt()
}

#[inline]
pub(crate) fn voxel_point<T: Real>(c: [usize; 3]) -> [T; 3] {
    [T::from_usize_lossy(c[0]), T::from_usize_lossy(c[1]), T::from_usize_lossy(c[2])]
}

/// Corner indices and fractional offsets of the trilinear cell containing a
/// (clamped) point.
struct Stencil<T> {
    lo: [usize; 3],
    hi: [usize; 3],
    frac: [T; 3],
    inside: [bool; 3],
    dims: Dims,
}

impl<T: Real> Stencil<T> {
    #[inline]
    fn new(dims: Dims, p: [T; 3]) -> Self {
        let n = dims.as_array();
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        let mut frac = [T::zero(); 3];
        let mut inside = [true; 3];
        for a in 0..3 {
            let top = T::from_usize_lossy(n[a] - 1);
            let c = p[a].max(T::zero()).min(top);
            inside[a] = p[a] >= T::zero() && p[a] <= top;
            if n[a] == 1 {
                inside[a] = false;
                continue;
            }
            let i0 = c.floor().to_usize().unwrap_or(0).min(n[a] - 2);
            lo[a] = i0;
            hi[a] = i0 + 1;
            frac[a] = c - T::from_usize_lossy(i0);
        }
        Self { lo, hi, frac, inside, dims }
    }

    #[inline]
    fn corners(&self, data: &[T], stride: usize, comp: usize) -> [T; 8] {
        let d = self.dims;
        let at = |x, y, z| data[stride * d.index(x, y, z) + comp];
        let [x0, y0, z0] = self.lo;
        let [x1, y1, z1] = self.hi;
        [
            at(x0, y0, z0),
            at(x1, y0, z0),
            at(x0, y1, z0),
            at(x1, y1, z0),
            at(x0, y0, z1),
            at(x1, y0, z1),
            at(x0, y1, z1),
            at(x1, y1, z1),
        ]
    }

    #[inline]
    fn value(&self, data: &[T], stride: usize, comp: usize) -> T {
        let c = self.corners(data, stride, comp);
        let [fx, fy, fz] = self.frac;
        let lerp = |a: T, b: T, t: T| a * (T::one() - t) + b * t;
        let c00 = lerp(c[0], c[1], fx);
        let c10 = lerp(c[2], c[3], fx);
        let c01 = lerp(c[4], c[5], fx);
        let c11 = lerp(c[6], c[7], fx);
        lerp(lerp(c00, c10, fy), lerp(c01, c11, fy), fz)
    }

    #[inline]
    fn gradient(&self, data: &[T], stride: usize, comp: usize) -> [T; 3] {
        let c = self.corners(data, stride, comp);
        let [fx, fy, fz] = self.frac;
        let one = T::one();
        let (gx, gy, gz) = (one - fx, one - fy, one - fz);
        let dx = gy * gz * (c[1] - c[0]) + fy * gz * (c[3] - c[2]) + gy * fz * (c[5] - c[4]) + fy * fz * (c[7] - c[6]);
        let dy = gx * gz * (c[2] - c[0]) + fx * gz * (c[3] - c[1]) + gx * fz * (c[6] - c[4]) + fx * fz * (c[7] - c[5]);
        let dz = gx * gy * (c[4] - c[0]) + fx * gy * (c[5] - c[1]) + gx * fy * (c[6] - c[2]) + fx * fy * (c[7] - c[3]);
        let mask = |inside: bool, d: T| if inside { d } else { T::zero() };
        [mask(self.inside[0], dx), mask(self.inside[1], dy), mask(self.inside[2], dz)]
    }
}

/// Trilinear interpolation of `vol` at continuous voxel coordinate `p`.
pub fn sample_trilinear<T: Real>(vol: &Volume<T>, p: [T; 3]) -> Result<T> {
    vol.sample(p)
}

/// Compositive update `u'(x) = eps*v(x) + u(x + eps*v(x))`, sampling `u`
/// trilinearly.
pub fn compose_warp<T: Real>(u: &DispField<T>, v: &DispField<T>, eps: T) -> Result<DispField<T>> {
    u.dims().ensure_same(v.dims())?;
    if !(eps > T::zero()) || !eps.is_finite() {
        return Err(Error::InvalidParameter(format!("compose_warp eps must be positive, got {eps}")));
    }
    let dims = u.dims();
    let mut data = Vec::with_capacity(3 * dims.len());
    for (i, c) in dims.coords().enumerate() {
        let vx = v.at(i);
        let d = [eps * vx[0], eps * vx[1], eps * vx[2]];
        let x: [T; 3] = voxel_point(c);
        let s = u.sample([x[0] + d[0], x[1] + d[1], x[2] + d[2]]);
        data.extend([d[0] + s[0], d[1] + s[1], d[2] + s[2]]);
    }
    Ok(DispField::from_raw(dims, data))
}

/// Scales velocity fields to a fixed maximum per-axis displacement.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepScale<T> {
    pub target_max_disp: T,
    pub floor: T,
}

impl<T: Real> Default for StepScale<T> {
    fn default() -> Self {
        Self { target_max_disp: T::lit(0.4), floor: T::lit(1e-12) }
    }
}

impl<T: Real> StepScale<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.target_max_disp > T::zero() && self.target_max_disp < T::lit(0.5)) {
            return Err(Error::InvalidParameter(format!(
                "target_max_disp must lie in (0, 0.5), got {}",
                self.target_max_disp
            )));
        }
        if !(self.floor > T::zero()) {
            return Err(Error::InvalidParameter("step floor must be positive".into()));
        }
        Ok(())
    }
}

/// Step size `eps` such that the largest component of `eps * v` equals
/// `target_max_disp`. `v` itself is left untouched.
pub fn normalize_step<T: Real>(v: &DispField<T>, s: &StepScale<T>) -> T {
    s.target_max_disp / v.max_abs_component().max(s.floor)
}

/// Minimum of `det(I + grad u)` over interior voxels, using central
/// differences. Axes shorter than three voxels fall back to one-sided
/// differences and contribute all their voxels.
pub fn jacobian_det_min<T: Real>(u: &DispField<T>) -> T {
    let dims = u.dims();
    let n = dims.as_array();
    let range = |a: usize| if n[a] >= 3 { 1..n[a] - 1 } else { 0..n[a] };
    let half = T::lit(0.5);
    let mut min = T::infinity();
    for z in range(2) {
        for y in range(1) {
            for x in range(0) {
                let c = [x, y, z];
                // cols[a] = d u / d x_a
                let mut cols = [[T::zero(); 3]; 3];
                for (a, col) in cols.iter_mut().enumerate() {
                    if n[a] < 2 {
                        continue;
                    }
                    let (mut lo, mut hi) = (c, c);
                    let mut w = half;
                    if c[a] == 0 {
                        hi[a] += 1;
                        w = T::one();
                    } else if c[a] == n[a] - 1 {
                        lo[a] -= 1;
                        w = T::one();
                    } else {
                        lo[a] -= 1;
                        hi[a] += 1;
                    }
                    let ul = u.get(lo[0], lo[1], lo[2]);
                    let uh = u.get(hi[0], hi[1], hi[2]);
                    for k in 0..3 {
                        col[k] = (uh[k] - ul[k]) * w;
                    }
                }
                let j = |r: usize, a: usize| cols[a][r] + if r == a { T::one() } else { T::zero() };
                let det = j(0, 0) * (j(1, 1) * j(2, 2) - j(1, 2) * j(2, 1))
                    - j(0, 1) * (j(1, 0) * j(2, 2) - j(1, 2) * j(2, 0))
                    + j(0, 2) * (j(1, 0) * j(2, 1) - j(1, 1) * j(2, 0));
                min = min.min(det);
            }
        }
    }
    min
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_x(n: usize) -> Volume<f64> {
        Volume::from_fn(Dims::cube(n), |x, _, _| x as f64)
    }

    #[test]
    fn constant_volume_samples_constant() {
        let v = Volume::filled(Dims::cube(9), 5.0);
        assert_eq!(sample_trilinear(&v, [0.3, 7.9, 2.1]).unwrap(), 5.0);
    }

    #[test]
    fn edge_interpolation() {
        let mut v = Volume::<f64>::zeros(Dims::cube(2));
        v.set(1, 0, 0, 1.0);
        assert!((sample_trilinear(&v, [0.25, 0.0, 0.0]).unwrap() - 0.25).abs() < 1e-15);
    }

    /// Hand-written clamp-then-interpolate reference along x only.
    fn reference_1d(samples: &[f64], p: f64) -> f64 {
        let top = (samples.len() - 1) as f64;
        let c = p.clamp(0.0, top);
        let i0 = (c.floor() as usize).min(samples.len() - 2);
        let t = c - i0 as f64;
        samples[i0] * (1.0 - t) + samples[i0 + 1] * t
    }

    #[test]
    fn ramp_clamps_beyond_edge() {
        let v = ramp_x(4);
        let expected = reference_1d(&[0.0, 1.0, 2.0, 3.0], 5.0);
        assert_eq!(expected, 3.0);
        assert_eq!(sample_trilinear(&v, [5.0, 0.0, 0.0]).unwrap(), expected);
        assert_eq!(sample_trilinear(&v, [-2.0, 1.5, 3.0]).unwrap(), 0.0);
    }

    #[test]
    fn non_finite_point_is_rejected() {
        let v = ramp_x(4);
        assert!(matches!(sample_trilinear(&v, [f64::NAN, 0.0, 0.0]), Err(Error::NonFinite(_))));
        assert!(sample_trilinear(&v, [0.0, f64::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn constructors_validate() {
        assert!(Volume::new(Dims::cube(2), vec![0.0; 7]).is_err());
        assert!(Volume::new(Dims::cube(2), vec![f64::NAN; 8]).is_err());
        assert!(DispField::new(Dims::cube(2), vec![0.0; 8]).is_err());
        assert!(DispField::new(Dims::cube(2), vec![0.0f64; 24]).is_ok());
    }

    #[test]
    fn trilinear_gradient_matches_cell_slope() {
        let v = Volume::from_fn(Dims::cube(5), |x, y, z| 2.0 * x as f64 - 3.0 * y as f64 + 0.5 * z as f64);
        let (val, g) = v.sample_with_gradient([1.3, 2.7, 0.4]);
        assert!((val - (2.6 - 8.1 + 0.2)).abs() < 1e-12);
        assert!((g[0] - 2.0).abs() < 1e-12 && (g[1] + 3.0).abs() < 1e-12 && (g[2] - 0.5).abs() < 1e-12);
        let (_, g) = v.sample_with_gradient([-1.0, 2.0, 9.0]);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[2], 0.0);
    }

    #[test]
    fn compose_identity_prior_is_scaled_velocity() {
        let dims = Dims::cube(4);
        let v = DispField::from_fn(dims, |x, y, z| [x as f64 * 0.1, -(y as f64), z as f64 + 1.0]);
        let out = compose_warp(&DispField::zeros(dims), &v, 0.1).unwrap();
        assert_eq!(out, v.scaled(0.1));
    }

    #[test]
    fn compose_zero_velocity_keeps_warp() {
        let dims = Dims::cube(4);
        let u = DispField::<f64>::uniform(dims, [0.3, -1.2, 2.0]);
        let out = compose_warp(&u, &DispField::zeros(dims), 0.1).unwrap();
        for v in out.vectors() {
            for (a, b) in v.iter().zip([0.3, -1.2, 2.0]) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    /// Scalar-loop oracle: explicit per-voxel, per-component evaluation with
    /// its own clamp-and-lerp, independent of `Stencil`.
    #[allow(clippy::needless_range_loop)]
    fn compose_oracle(u: &DispField<f64>, v: &DispField<f64>, eps: f64) -> Vec<f64> {
        let d = u.dims();
        let n = [d.nx, d.ny, d.nz];
        let mut out = Vec::new();
        for z in 0..d.nz {
            for y in 0..d.ny {
                for x in 0..d.nx {
                    let vv = v.get(x, y, z);
                    let p = [x as f64 + eps * vv[0], y as f64 + eps * vv[1], z as f64 + eps * vv[2]];
                    for comp in 0..3 {
                        let mut acc = 0.0;
                        let mut idx = [[0usize; 2]; 3];
                        let mut w = [[0.0; 2]; 3];
                        for a in 0..3 {
                            let c = p[a].clamp(0.0, (n[a] - 1) as f64);
                            let i0 = (c.floor() as usize).min(n[a] - 2);
                            let t = c - i0 as f64;
                            idx[a] = [i0, i0 + 1];
                            w[a] = [1.0 - t, t];
                        }
                        for (ix, wx) in idx[0].iter().zip(w[0]) {
                            for (iy, wy) in idx[1].iter().zip(w[1]) {
                                for (iz, wz) in idx[2].iter().zip(w[2]) {
                                    acc += wx * wy * wz * u.get(*ix, *iy, *iz)[comp];
                                }
                            }
                        }
                        out.push(eps * vv[comp] + acc);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn compose_ramp_matches_scalar_oracle() {
        let dims = Dims::cube(8);
        let u = DispField::from_fn(dims, |x, _, _| [0.2 * x as f64, 0.1 * x as f64, 0.0]);
        let v = DispField::uniform(dims, [1.0, 0.0, 0.0]);
        let got = compose_warp(&u, &v, 0.25).unwrap();
        let want = compose_oracle(&u, &v, 0.25);
        for (a, b) in got.data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
        // interior voxel: u'(x) = 0.25 + 0.2 * (x + 0.25)
        let w = got.get(3, 2, 2);
        assert!((w[0] - (0.25 + 0.2 * 3.25)).abs() < 1e-12);
    }

    #[test]
    fn compose_random_matches_scalar_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let dims = Dims::cube(6);
            let u = DispField::from_fn(dims, |_, _, _| [0; 3].map(|_: i32| rng.gen_range(-2.0..2.0)));
            let v = DispField::from_fn(dims, |_, _, _| [0; 3].map(|_: i32| rng.gen_range(-3.0..3.0)));
            let eps = rng.gen_range(0.05..1.0);
            let got = compose_warp(&u, &v, eps).unwrap();
            for (a, b) in got.data().iter().zip(compose_oracle(&u, &v, eps)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn compose_rejects_mismatch_and_bad_eps() {
        let a = DispField::<f64>::zeros(Dims::cube(3));
        let b = DispField::<f64>::zeros(Dims::cube(4));
        assert!(matches!(compose_warp(&a, &b, 0.1), Err(Error::DimMismatch { .. })));
        assert!(compose_warp(&a, &a, 0.0).is_err());
    }

    #[test]
    fn normalize_step_rules() {
        let s = StepScale::<f64>::default();
        let zero = DispField::zeros(Dims::cube(3));
        assert_eq!(normalize_step(&zero, &s), 0.4 / 1e-12);
        let mut v = DispField::zeros(Dims::cube(3));
        v.set_at(4, [0.5, -2.0, 1.0]);
        let eps = normalize_step(&v, &s);
        assert!((eps - 0.2).abs() < 1e-15);
        assert!((v.scaled(eps).max_abs_component() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn step_scale_validation() {
        assert!(StepScale { target_max_disp: 0.5, floor: 1e-12 }.validate().is_err());
        assert!(StepScale { target_max_disp: 0.0, floor: 1e-12 }.validate().is_err());
        assert!(StepScale::<f64>::default().validate().is_ok());
    }

    #[test]
    fn jacobian_examples() {
        let dims = Dims::cube(5);
        assert_eq!(jacobian_det_min(&DispField::<f64>::zeros(dims)), 1.0);
        assert_eq!(jacobian_det_min(&DispField::uniform(dims, [1.5, -0.2, 3.0])), 1.0);
        let ramp = DispField::from_fn(dims, |x, _, _| [0.1 * x as f64, 0.0, 0.0]);
        assert!((jacobian_det_min(&ramp) - 1.1).abs() < 1e-12);
        // folding warp
        let fold = DispField::from_fn(dims, |x, _, _| [-1.5 * x as f64, 0.0, 0.0]);
        assert!(jacobian_det_min(&fold) < 0.0);
    }

    #[test]
    fn works_in_single_precision() {
        let v = Volume::<f32>::from_fn(Dims::cube(4), |x, _, _| x as f32);
        assert!((v.sample([1.5, 0.0, 0.0]).unwrap() - 1.5).abs() < 1e-6);
        let u = DispField::<f32>::from_fn(Dims::cube(4), |x, _, _| [0.1 * x as f32, 0.0, 0.0]);
        assert!((jacobian_det_min(&u) - 1.1).abs() < 1e-5);
    }
}
