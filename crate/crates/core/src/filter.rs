//! Separable filters over volumes: truncated Gaussian smoothing with
//! clamp-to-edge boundaries and truncated-window box sums.

use crate::field::{Dims, DispField, Volume};
use crate::scalar::Real;

/// Normalized Gaussian taps for `sigma`, truncated at `3 * sigma`.
pub fn gaussian_kernel<T: Real>(sigma: T) -> Vec<T> {
    if !(sigma > T::zero()) {
        return vec![T::one()];
    }
    let radius = (T::lit(3.0) * sigma).ceil().to_usize().unwrap_or(0);
    let two_s2 = T::lit(2.0) * sigma * sigma;
    let taps: Vec<T> = (0..=2 * radius)
        .map(|i| {
            let d = T::from_usize_lossy(i) - T::from_usize_lossy(radius);
            (-(d * d) / two_s2).exp()
        })
        .collect();
    let total: T = taps.iter().copied().sum();
    taps.into_iter().map(|t| t / total).collect()
}

fn convolve_axis<T: Real>(data: &[T], dims: Dims, axis: usize, taps: &[T]) -> Vec<T> {
    let n = dims.as_array();
    let len = n[axis];
    let stride = match axis {
        0 => 1,
        1 => dims.nx,
        _ => dims.nx * dims.ny,
    };
    let radius = (taps.len() / 2) as isize;
    let mut out = vec![T::zero(); data.len()];
    let mut line = vec![T::zero(); len];
    for start in line_starts(dims, axis) {
        for (i, l) in line.iter_mut().enumerate() {
            *l = data[start + i * stride];
        }
        for i in 0..len {
            let mut acc = T::zero();
            for (k, &w) in taps.iter().enumerate() {
                let j = (i as isize + k as isize - radius).clamp(0, len as isize - 1) as usize;
                acc += w * line[j];
            }
            out[start + i * stride] = acc;
        }
    }
    out
}

/// Linear offsets of the first voxel of every grid line along `axis`.
fn line_starts(dims: Dims, axis: usize) -> Vec<usize> {
    let Dims { nx, ny, nz } = dims;
    let mut starts = Vec::new();
    match axis {
        0 => {
            for z in 0..nz {
                for y in 0..ny {
                    starts.push(dims.index(0, y, z));
                }
            }
        }
        1 => {
            for z in 0..nz {
                for x in 0..nx {
                    starts.push(dims.index(x, 0, z));
                }
            }
        }
        _ => {
            for y in 0..ny {
                for x in 0..nx {
                    starts.push(dims.index(x, y, 0));
                }
            }
        }
    }
    starts
}

/// Gaussian smoothing with clamp-to-edge boundaries. `sigma <= 0` is a no-op.
pub fn gaussian_smooth<T: Real>(vol: &Volume<T>, sigma: T) -> Volume<T> {
    if !(sigma > T::zero()) {
        return vol.clone();
    }
    let taps = gaussian_kernel(sigma);
    let dims = vol.dims();
    let mut data = vol.data().to_vec();
    for axis in 0..3 {
        if dims.as_array()[axis] > 1 {
            data = convolve_axis(&data, dims, axis, &taps);
        }
    }
    Volume::from_raw(dims, data)
}

/// Component-wise Gaussian smoothing of a displacement field.
pub fn gaussian_smooth_field<T: Real>(u: &DispField<T>, sigma: T) -> DispField<T> {
    if !(sigma > T::zero()) {
        return u.clone();
    }
    let c = [0, 1, 2].map(|a| gaussian_smooth(&u.component(a), sigma));
    DispField::from_components([&c[0], &c[1], &c[2]]).expect("components share dims")
}

/// Sum over the cubic window of half-width `radius` around each voxel,
/// truncated at the grid boundary.
pub fn box_sum<T: Real>(data: &[T], dims: Dims, radius: usize) -> Vec<T> {
    let mut cur = data.to_vec();
    for axis in 0..3 {
        let n = dims.as_array()[axis];
        let stride = match axis {
            0 => 1,
            1 => dims.nx,
            _ => dims.nx * dims.ny,
        };
        let mut out = vec![T::zero(); cur.len()];
        let mut prefix = vec![T::zero(); n + 1];
        for start in line_starts(dims, axis) {
            for i in 0..n {
                prefix[i + 1] = prefix[i] + cur[start + i * stride];
            }
            for i in 0..n {
                let lo = i.saturating_sub(radius);
                let hi = (i + radius + 1).min(n);
                out[start + i * stride] = prefix[hi] - prefix[lo];
            }
        }
        cur = out;
    }
    cur
}

/// Number of in-bounds voxels in each truncated window.
pub fn box_count<T: Real>(dims: Dims, radius: usize) -> Vec<T> {
    let n = dims.as_array();
    let count = |i: usize, len: usize| (i + radius + 1).min(len) - i.saturating_sub(radius);
    dims.coords().map(|[x, y, z]| T::from_usize_lossy(count(x, n[0]) * count(y, n[1]) * count(z, n[2]))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_is_normalized_and_symmetric() {
        let k = gaussian_kernel(1.3f64);
        assert_eq!(k.len(), 2 * 4 + 1);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..k.len() {
            assert!((k[i] - k[k.len() - 1 - i]).abs() < 1e-16);
        }
    }

    #[test]
    fn smoothing_preserves_constants() {
        let v = Volume::filled(Dims::new(7, 5, 4), 2.5f64);
        let s = gaussian_smooth(&v, 1.7);
        assert!(s.data().iter().all(|x| (x - 2.5).abs() < 1e-13));
    }

    #[test]
    fn smoothing_keeps_interior_linear_ramp() {
        let v = Volume::from_fn(Dims::new(20, 3, 3), |x, _, _| x as f64);
        let s = gaussian_smooth(&v, 1.0);
        for x in 3..17 {
            assert!((s.get(x, 1, 1) - x as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn box_sum_matches_brute_force() {
        let dims = Dims::new(5, 4, 6);
        let data: Vec<f64> = (0..dims.len()).map(|i| (i as f64 * 0.37).sin()).collect();
        let got = box_sum(&data, dims, 1);
        let counts: Vec<f64> = box_count(dims, 1);
        for [x, y, z] in dims.coords() {
            let mut acc = 0.0;
            let mut cnt = 0.0;
            for zz in z.saturating_sub(1)..(z + 2).min(dims.nz) {
                for yy in y.saturating_sub(1)..(y + 2).min(dims.ny) {
                    for xx in x.saturating_sub(1)..(x + 2).min(dims.nx) {
                        acc += data[dims.index(xx, yy, zz)];
                        cnt += 1.0;
                    }
                }
            }
            let i = dims.index(x, y, z);
            assert!((got[i] - acc).abs() < 1e-12);
            assert_eq!(counts[i], cnt);
        }
    }
}
