//! Coarse-to-fine resolution schedule.

use crate::error::{Error, Result};
use crate::field::{Dims, DispField, Volume};
use crate::filter::gaussian_smooth;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Level {
    pub factor: usize,
    pub iterations: usize,
}

/// Levels ordered coarse to fine; factors strictly decrease and end at 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PyramidSchedule {
    levels: Vec<Level>,
}

impl Default for PyramidSchedule {
    fn default() -> Self {
        Self::new(vec![
            Level { factor: 4, iterations: 100 },
            Level { factor: 2, iterations: 75 },
            Level { factor: 1, iterations: 50 },
        ])
        .expect("default schedule is valid")
    }
}

impl PyramidSchedule {
    pub fn new(levels: Vec<Level>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::InvalidParameter("schedule has no levels".into()));
        }
        if levels.iter().any(|l| l.factor < 1) {
            return Err(Error::InvalidParameter("downsample factors must be >= 1".into()));
        }
        if levels.windows(2).any(|w| w[0].factor <= w[1].factor) {
            return Err(Error::InvalidParameter("downsample factors must strictly decrease".into()));
        }
        if levels.last().map(|l| l.factor) != Some(1) {
            return Err(Error::InvalidParameter("final level must have factor 1".into()));
        }
        Ok(Self { levels })
    }

    /// Single full-resolution level.
    pub fn single(iterations: usize) -> Self {
        Self { levels: vec![Level { factor: 1, iterations }] }
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    pub fn total_iterations(&self) -> usize {
        self.levels.iter().map(|l| l.iterations).sum()
    }

    /// Parses `"4:100,2:75,1:50"`.
    pub fn parse(s: &str) -> Result<Self> {
        let levels = s
            .split(',')
            .map(|item| {
                let (f, it) = item
                    .trim()
                    .split_once(':')
                    .ok_or_else(|| Error::InvalidParameter(format!("level '{item}' is not factor:iterations")))?;
                let parse = |v: &str| {
                    v.trim()
                        .parse::<usize>()
                        .map_err(|_| Error::InvalidParameter(format!("bad integer '{v}' in schedule")))
                };
                Ok(Level { factor: parse(f)?, iterations: parse(it)? })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(levels)
    }
}

impl std::fmt::Display for PyramidSchedule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.levels.iter().map(|l| format!("{}:{}", l.factor, l.iterations)).collect();
        f.write_str(&parts.join(","))
    }
}

pub fn level_dims(dims: Dims, factor: usize) -> Dims {
    Dims::new(dims.nx.div_ceil(factor), dims.ny.div_ceil(factor), dims.nz.div_ceil(factor))
}

/// Gaussian pre-smoothing (`sigma = factor / 2`) followed by strided
/// sampling; output voxel `i` sits at input voxel `i * factor`.
pub fn downsample<T: Real>(vol: &Volume<T>, factor: usize) -> Result<Volume<T>> {
    if factor < 1 {
        return Err(Error::InvalidParameter("downsample factor must be >= 1".into()));
    }
    if factor == 1 {
        return Ok(vol.clone());
    }
    let smooth = gaussian_smooth(vol, T::lit(0.5 * factor as f64));
    let out = level_dims(vol.dims(), factor);
    Ok(Volume::from_fn(out, |x, y, z| smooth.get(x * factor, y * factor, z * factor)))
}

/// Resamples `u` onto a grid `scale` times finer and multiplies the
/// displacements by `scale` to keep them in voxel units of the new grid.
pub fn upsample_warp<T: Real>(u: &DispField<T>, new_dims: Dims, scale: T) -> Result<DispField<T>> {
    if new_dims.is_empty() {
        return Err(Error::InvalidParameter(format!("invalid target dims {new_dims}")));
    }
    if !(scale > T::zero()) || !scale.is_finite() {
        return Err(Error::InvalidParameter(format!("upsample scale must be positive, got {scale}")));
    }
    Ok(DispField::from_fn(new_dims, |x, y, z| {
        let p = [x, y, z].map(|c| T::from_usize_lossy(c) / scale);
        u.sample(p).map(|v| v * scale)
    }))
}
