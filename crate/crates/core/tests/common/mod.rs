#![allow(dead_code, clippy::needless_range_loop)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use warplm::field::{DispField, Volume};
use warplm::filter::gaussian_smooth;
use warplm::lmopt::lm_step_voxel;
use warplm::{demons_step_mse, residual, residual_mse, Dims, MetricConfig, MetricKind};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_field(rng: &mut ChaCha8Rng, dims: Dims, scale: f64) -> DispField<f64> {
    DispField::from_fn(dims, |_, _, _| [0, 1, 2].map(|_| rng.gen_range(-scale..scale)))
}

pub fn random_volume(rng: &mut ChaCha8Rng, dims: Dims) -> Volume<f64> {
    Volume::from_fn(dims, |_, _, _| rng.gen_range(0.0..1.0))
}

/// Smoothed uniform noise rescaled to [0, 1].
pub fn smooth_volume(rng: &mut ChaCha8Rng, dims: Dims, sigma: f64) -> Volume<f64> {
    let v = gaussian_smooth(&random_volume(rng, dims), sigma);
    let (lo, hi) = v.min_max();
    v.map(|x| (x - lo) / (hi - lo))
}

pub fn smooth_field(rng: &mut ChaCha8Rng, dims: Dims, scale: f64, sigma: f64) -> DispField<f64> {
    let comps = [0, 1, 2].map(|_| gaussian_smooth(&Volume::from_fn(dims, |_, _, _| rng.gen_range(-1.0..1.0)), sigma));
    let u = DispField::from_components([&comps[0], &comps[1], &comps[2]]).unwrap();
    let m = u.max_abs_component();
    u.scaled(scale / m)
}

/// Gaussian elimination with partial pivoting.
pub fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> [f64; 3] {
    for col in 0..3 {
        let p = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, p);
        b.swap(col, p);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let s: f64 = (row + 1..3).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

pub fn damped_outer(g: [f64; 3], lambda: f64) -> [[f64; 3]; 3] {
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = g[i] * g[j] + if i == j { lambda } else { 0.0 };
        }
    }
    m
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Assemble each tile's damped curvature densely and solve per voxel.
pub fn tiled_oracle(r: f64, g: &DispField<f64>, lambda: f64, k: usize) -> Vec<f64> {
    let d = g.dims();
    let mut out = vec![0.0; g.data().len()];
    for [x, y, z] in d.coords() {
        let (tx, ty, tz) = (x / k * k, y / k * k, z / k * k);
        let mut h = [[0.0; 3]; 3];
        for zz in tz..(tz + k).min(d.nz) {
            for yy in ty..(ty + k).min(d.ny) {
                for xx in tx..(tx + k).min(d.nx) {
                    let v = g.get(xx, yy, zz);
                    for i in 0..3 {
                        for j in 0..3 {
                            h[i][j] += v[i] * v[j];
                        }
                    }
                }
            }
        }
        for (i, row) in h.iter_mut().enumerate() {
            row[i] += lambda;
        }
        let v = g.get(x, y, z);
        let s = solve3(h, [-r * v[0], -r * v[1], -r * v[2]]);
        let idx = 3 * d.index(x, y, z);
        out[idx..idx + 3].copy_from_slice(&s);
    }
    out
}

/// Largest difference between the Demons update and per-voxel LM with
/// `r = r_x`, `λ = α² r_x²` over random MSE instances.
pub fn demons_equivalence_gap(seed: u64, trials: usize) -> f64 {
    let mut rng = rng(seed);
    let mut worst = 0.0f64;
    for trial in 0..trials {
        let dims = Dims::cube(6 + trial % 3);
        let fixed = smooth_volume(&mut rng, dims, 1.0);
        let moving = smooth_volume(&mut rng, dims, 1.0);
        let u = random_field(&mut rng, dims, 1.5);
        let report = residual_mse(&fixed, &moving, &u).unwrap();
        let pv = report.per_voxel.expect("mse keeps per-voxel terms");
        let alpha = rng.gen_range(0.2..2.0);
        let demons = demons_step_mse(&pv.residual, &pv.moving_grad, alpha).unwrap();
        for (i, n) in pv.moving_grad.vectors().enumerate() {
            let rx = pv.residual.data()[i];
            let lambda = alpha * alpha * rx * rx;
            let lm = if lambda == 0.0 && n == [0.0; 3] { [0.0; 3] } else { lm_step_voxel(rx, n.map(|c| -c), lambda) };
            worst = worst.max(max_abs_diff(&lm, &demons.data()[3 * i..3 * i + 3]));
        }
    }
    worst
}

pub const FD_STEP: f64 = 1e-4;
pub const COMPONENTS: usize = 30;

/// Worst relative error of the analytic gradient against central
/// differences at randomly chosen displacement components.
pub fn fd_check(kind: MetricKind, seed: u64) -> f64 {
    let mut rng = rng(seed);
    let n = rng.gen_range(8..=12);
    let dims = Dims::cube(n);
    let fixed = smooth_volume(&mut rng, dims, 1.5);
    let moving = smooth_volume(&mut rng, dims, 1.5);
    let u = smooth_field(&mut rng, dims, 1.5, 1.5);
    let cfg = MetricConfig::with_kind(kind);
    let report = residual(&fixed, &moving, &u, &cfg).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..COMPONENTS {
        let idx = rng.gen_range(0..u.data().len());
        let eval = |delta: f64| {
            let mut data = u.data().to_vec();
            data[idx] += delta;
            let v = DispField::new(dims, data).unwrap();
            residual(&fixed, &moving, &v, &cfg).unwrap().r
        };
        let fd = (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP);
        let an = report.g.data()[idx];
        let scale = an.abs().max(fd.abs());
        if scale > 0.0 {
            worst = worst.max((an - fd).abs() / scale);
        }
    }
    worst
}

/// Random `(r, g, λ)` spanning several orders of magnitude.
pub fn random_triple(rng: &mut ChaCha8Rng) -> (f64, [f64; 3], f64) {
    let scale = 10f64.powf(rng.gen_range(-2.0..1.0));
    let g = [0, 1, 2].map(|_| rng.gen_range(-1.0..1.0) * scale);
    let r = rng.gen_range(-2.0..2.0);
    let lambda = 10f64.powf(rng.gen_range(-3.0..1.0));
    (r, g, lambda)
}
