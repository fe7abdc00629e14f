mod common;

use std::time::Instant;

use common::*;
use rand::Rng;
use warplm::field::{DispField, Volume};
use warplm::{residual_lncc, residual_mi, residual_mse, Dims, MetricConfig, MetricKind};

#[test]
fn gradients_match_finite_differences() {
    let start = Instant::now();
    for seed in 0..3 {
        let mse = fd_check(MetricKind::Mse, 100 + seed);
        assert!(mse < 1e-4, "mse seed {seed}: {mse}");
        let lncc = fd_check(MetricKind::Lncc, 200 + seed);
        assert!(lncc < 1e-3, "lncc seed {seed}: {lncc}");
        let mi = fd_check(MetricKind::Mi, 300 + seed);
        assert!(mi < 1e-3, "mi seed {seed}: {mi}");
    }
    assert!(start.elapsed().as_secs_f64() < 60.0);
}

#[test]
fn mse_examples() {
    let d = Dims::cube(6);
    let mut rng = rng(9);
    let f = random_volume(&mut rng, d);
    let rep = residual_mse(&f, &f, &DispField::zeros(d)).unwrap();
    assert_eq!(rep.r, 0.0);
    assert!(rep.g.data().iter().all(|&v| v == 0.0));
    let rep = residual_mse(&Volume::zeros(d), &Volume::filled(d, 1.0), &DispField::zeros(d)).unwrap();
    assert_eq!(rep.r, 1.0);
    let m = random_volume(&mut rng, d);
    let oracle = f.data().iter().zip(m.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / d.len() as f64;
    assert!((residual_mse(&f, &m, &DispField::zeros(d)).unwrap().r - oracle).abs() < 1e-12);
}

#[test]
fn residual_direction_equals_squared_loss_direction() {
    // grad(r²) = 2 r grad(r): same direction field, positive rescaling
    let mut rng = rng(10);
    let d = Dims::cube(8);
    let (f, m) = (smooth_volume(&mut rng, d, 1.0), smooth_volume(&mut rng, d, 1.0));
    let u = smooth_field(&mut rng, d, 1.0, 1.0);
    let rep = residual_lncc(&f, &m, &u, &MetricConfig::default()).unwrap();
    let idx = 17;
    let eval = |delta: f64| {
        let mut data = u.data().to_vec();
        data[idx] += delta;
        let r = residual_lncc(&f, &m, &DispField::new(d, data).unwrap(), &MetricConfig::default()).unwrap().r;
        r * r
    };
    let fd_sq = (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP);
    let want = 2.0 * rep.r * rep.g.data()[idx];
    assert!((fd_sq - want).abs() <= 1e-3 * want.abs().max(1e-12));
}

#[test]
fn lncc_examples() {
    let mut rng = rng(11);
    let d = Dims::cube(10);
    let f = smooth_volume(&mut rng, d, 1.0);
    let m = f.map(|v| 2.0 * v + 3.0);
    let cfg = MetricConfig::with_kind(MetricKind::Lncc);
    let rep = residual_lncc(&f, &m, &DispField::zeros(d), &cfg).unwrap();
    assert!(rep.r.abs() < 1e-9 && (rep.loss_raw - 1.0).abs() < 1e-9);
    let rep = residual_lncc(&Volume::filled(d, 0.3), &m, &DispField::zeros(d), &cfg).unwrap();
    assert_eq!((rep.loss_raw, rep.r), (0.0, 1.0));
    // the local correlation is symmetric in its two inputs
    let other = smooth_volume(&mut rng, d, 1.0);
    let a = residual_lncc(&f, &other, &DispField::zeros(d), &cfg).unwrap().r;
    let b = residual_lncc(&other, &f, &DispField::zeros(d), &cfg).unwrap().r;
    assert!((a - b).abs() < 1e-12);
}

#[test]
fn mi_identical_levels_reach_the_bin_bound() {
    // one equally populated level per bin centre, with a narrow Parzen kernel
    let d = Dims::cube(16);
    let f = Volume::from_fn(d, |x, y, z| ((x + 16 * y + 256 * z) % 32) as f64 / 31.0);
    let cfg = MetricConfig { kind: MetricKind::Mi, mi_parzen_sigma: 0.2, ..MetricConfig::default() };
    let rep = residual_mi(&f, &f, &DispField::zeros(d), &cfg).unwrap();
    assert!(rep.r < 0.2, "r = {}", rep.r);
}

#[test]
fn mi_independent_noise_is_near_zero() {
    let mut rng = rng(12);
    let d = Dims::cube(32);
    let (f, m) = (random_volume(&mut rng, d), random_volume(&mut rng, d));
    let cfg = MetricConfig::with_kind(MetricKind::Mi);
    let rep = residual_mi(&f, &m, &DispField::zeros(d), &cfg).unwrap();
    assert!(rep.loss_raw < 0.1, "mi = {}", rep.loss_raw);
    assert!((rep.r - (5.0 - rep.loss_raw)).abs() < 1e-12);
}

#[test]
fn mi_residual_is_nonnegative_on_1000_instances() {
    let mut rng = rng(13);
    for i in 0..1000 {
        let d = Dims::new(rng.gen_range(3..7), rng.gen_range(3..7), rng.gen_range(3..7));
        let f = random_volume(&mut rng, d);
        let m = if i % 4 == 0 { f.clone() } else { random_volume(&mut rng, d) };
        let bins = rng.gen_range(2..40);
        let cfg = MetricConfig { kind: MetricKind::Mi, mi_bins: bins, ..MetricConfig::default() };
        let rep = residual_mi(&f, &m, &random_field(&mut rng, d, 1.0), &cfg).unwrap();
        assert!(rep.r >= 0.0 && rep.r <= (bins as f64).log2() + 1e-12, "instance {i}: r = {}", rep.r);
        assert!(rep.g.data().iter().all(|v| v.is_finite()));
    }
}

#[test]
fn mse_and_mi_are_symmetric_for_identical_roles() {
    let mut rng = rng(14);
    let d = Dims::cube(8);
    let (f, m) = (random_volume(&mut rng, d), random_volume(&mut rng, d));
    let zero = DispField::zeros(d);
    let a = residual_mse(&f, &m, &zero).unwrap().r;
    let b = residual_mse(&m, &f, &zero).unwrap().r;
    assert!((a - b).abs() < 1e-15);
    let cfg = MetricConfig::with_kind(MetricKind::Mi);
    let a = residual_mi(&f, &m, &zero, &cfg).unwrap().r;
    let b = residual_mi(&m, &f, &zero, &cfg).unwrap().r;
    assert!((a - b).abs() < 1e-12);
}
