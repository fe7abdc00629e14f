#![allow(clippy::needless_range_loop)]

mod common;

use std::time::Instant;

use common::*;
use rand::Rng;
use warplm::field::{DispField, Volume};
use warplm::lmopt::lm_step_voxel;
use warplm::{demons_step_mse, lm_step_pointwise, lm_step_tiled, Dims};

#[test]
fn closed_form_matches_dense_solve_on_1e5_triples() {
    let mut rng = rng(1);
    let start = Instant::now();
    let mut worst = 0.0f64;
    for _ in 0..100_000 {
        let (r, g, lambda) = random_triple(&mut rng);
        let closed = lm_step_voxel(r, g, lambda);
        let dense = solve3(damped_outer(g, lambda), [-r * g[0], -r * g[1], -r * g[2]]);
        worst = worst.max(max_abs_diff(&closed, &dense));
    }
    assert!(worst < 1e-10, "worst {worst}");
    assert!(start.elapsed().as_secs_f64() < 5.0);
}

/// `(g gᵀ + λI)⁻¹ = (I − g gᵀ/(|g|² + λ))/λ`, applied to the basis vectors.
#[test]
fn sherman_morrison_inverse_reconstructs_identity() {
    let mut rng = rng(2);
    for _ in 0..100_000 {
        let (_, g, lambda) = random_triple(&mut rng);
        let a = damped_outer(g, lambda);
        let denom = g.iter().map(|x| x * x).sum::<f64>() + lambda;
        for e in 0..3 {
            let col: Vec<f64> = (0..3).map(|i| ((i == e) as u8 as f64 - g[i] * g[e] / denom) / lambda).collect();
            for i in 0..3 {
                let prod: f64 = (0..3).map(|k| a[i][k] * col[k]).sum();
                let want = if i == e { 1.0 } else { 0.0 };
                assert!((prod - want).abs() < 1e-8);
            }
        }
    }
}

#[test]
fn pointwise_field_matches_per_voxel_dense_solve() {
    let mut rng = rng(3);
    let dims = Dims::new(5, 4, 6);
    let g = random_field(&mut rng, dims, 1.0);
    let (r, lambda) = (0.7, 0.3);
    let step = lm_step_pointwise(r, &g, lambda);
    for (a, b) in step.vectors().zip(g.vectors()) {
        let dense = solve3(damped_outer(b, lambda), [-r * b[0], -r * b[1], -r * b[2]]);
        assert!(max_abs_diff(&a, &dense) < 1e-10);
    }
}

#[test]
fn step_is_antiparallel_to_gradient() {
    let mut rng = rng(4);
    let g = random_field(&mut rng, Dims::cube(6), 2.0);
    let r = 1.3;
    for (s, v) in lm_step_pointwise(r, &g, 0.05).vectors().zip(g.vectors()) {
        let dot: f64 = (0..3).map(|i| s[i] * r * v[i]).sum();
        let ns = s.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt() * r;
        assert!((dot / (ns * nv) + 1.0).abs() < 1e-12);
    }
}

#[test]
fn large_damping_recovers_gradient_descent() {
    let mut rng = rng(5);
    let g = random_field(&mut rng, Dims::cube(5), 1.0);
    let r = 0.4;
    let gmax = g.vectors().map(|v| v.iter().map(|x| x * x).sum::<f64>()).fold(0.0, f64::max);
    let lambda = 1e8 * gmax;
    for (s, v) in lm_step_pointwise(r, &g, lambda).vectors().zip(g.vectors()) {
        for i in 0..3 {
            let gd = -r * v[i] / lambda;
            if gd != 0.0 {
                assert!(((s[i] - gd) / gd).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn tiled_with_unit_tiles_is_pointwise() {
    let mut rng = rng(6);
    for dims in [Dims::cube(4), Dims::new(7, 3, 5)] {
        let g = random_field(&mut rng, dims, 3.0);
        let lambda = rng.gen_range(0.01..1.0);
        let a = lm_step_tiled(-0.8, &g, lambda, 1).unwrap();
        let b = lm_step_pointwise(-0.8, &g, lambda);
        assert!(max_abs_diff(a.data(), b.data()) < 1e-12);
    }
}

#[test]
fn tiled_matches_dense_tile_oracle() {
    let mut rng = rng(7);
    let g = random_field(&mut rng, Dims::cube(6), 1.0);
    let got = lm_step_tiled(0.9, &g, 0.2, 3).unwrap();
    assert!(max_abs_diff(got.data(), &tiled_oracle(0.9, &g, 0.2, 3)) < 1e-10);
    // partial boundary tiles and even sizes
    let g = random_field(&mut rng, Dims::new(7, 5, 9), 1.0);
    for k in [2, 4, 10] {
        let got = lm_step_tiled(0.5, &g, 0.1, k).unwrap();
        assert!(max_abs_diff(got.data(), &tiled_oracle(0.5, &g, 0.1, k)) < 1e-10, "k={k}");
    }
}

#[test]
fn zero_gradient_gives_zero_step_for_any_tile() {
    let g = DispField::<f64>::zeros(Dims::cube(5));
    for k in [1, 2, 3, 5] {
        assert!(lm_step_tiled(2.0, &g, 0.01, k).unwrap().data().iter().all(|&v| v == 0.0));
    }
    assert!(lm_step_tiled(2.0, &g, 0.01, 0).is_err());
}

#[test]
fn demons_is_per_voxel_lm_with_residual_damping() {
    let worst = demons_equivalence_gap(8, 10);
    assert!(worst < 1e-12, "{worst}");
}

#[test]
fn demons_zero_residual_and_worked_example() {
    let d = Dims::cube(2);
    let zero = Volume::<f64>::zeros(d);
    let n = DispField::uniform(d, [2.0, 0.0, 0.0]);
    assert!(demons_step_mse(&zero, &n, 1.0).unwrap().data().iter().all(|&v| v == 0.0));
    let ones = Volume::filled(d, 1.0);
    assert!(demons_step_mse(&ones, &n, 1.0).unwrap().vectors().all(|v| v == [0.4, 0.0, 0.0]));
}
