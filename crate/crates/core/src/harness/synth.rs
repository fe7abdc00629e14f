//! Synthetic fixed/moving pairs with a known ground-truth warp.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::field::{jacobian_det_min, Dims, DispField, Volume};
use crate::filter::gaussian_smooth;

/// Resample budget for drawing a warp with positive Jacobian everywhere.
pub const MAX_WARP_DRAWS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthSpec {
    pub dims: Dims,
    pub num_blobs: usize,
    /// Gaussian smoothing applied to the random displacement, in voxels.
    pub warp_sigma: f64,
    /// Largest displacement magnitude of the ground-truth warp, in voxels.
    pub warp_max: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self { dims: Dims::cube(32), num_blobs: 100, warp_sigma: 5.0, warp_max: 3.0, noise_sigma: 0.0, seed: 0 }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let min_dim = self.dims.as_array().into_iter().min().unwrap_or(0);
        if min_dim < 4 {
            return Err(Error::InvalidParameter(format!("synthetic dims {} too small", self.dims)));
        }
        if self.warp_sigma < 0.0 || self.warp_max < 0.0 || self.noise_sigma < 0.0 {
            return Err(Error::InvalidParameter("synthetic parameters must be non-negative".into()));
        }
        if self.warp_max >= min_dim as f64 / 4.0 {
            return Err(Error::InvalidParameter(format!(
                "warp_max {} must be below a quarter of the smallest dim ({min_dim})",
                self.warp_max
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthPair {
    pub fixed: Volume<f64>,
    pub moving: Volume<f64>,
    /// Satisfies `moving(x + u_true(x)) ≈ fixed(x)`.
    pub u_true: DispField<f64>,
}

#[derive(Clone, Copy, Debug)]
struct Blob {
    center: [f64; 3],
    inv_two_s2: f64,
    amp: f64,
}

struct BlobImage {
    blobs: Vec<Blob>,
    scale: f64,
}

impl BlobImage {
    fn draw(rng: &mut ChaCha8Rng, dims: Dims, count: usize) -> Self {
        let n = dims.as_array().map(|d| d as f64);
        let min_dim = n.iter().cloned().fold(f64::INFINITY, f64::min);
        let blobs = (0..count)
            .map(|_| {
                let center = [0, 1, 2].map(|a| rng.gen_range(0.0..n[a] - 1.0));
                let sigma = rng.gen_range(0.05..0.11) * min_dim;
                Blob { center, inv_two_s2: 1.0 / (2.0 * sigma * sigma), amp: rng.gen_range(0.3..1.0) }
            })
            .collect();
        let mut img = Self { blobs, scale: 1.0 };
        let peak = dims.coords().map(|c| img.eval(c.map(|v| v as f64))).fold(0.0, f64::max);
        img.scale = if peak > 0.0 { 1.0 / peak } else { 1.0 };
        img
    }

    fn eval(&self, p: [f64; 3]) -> f64 {
        self.blobs
            .iter()
            .map(|b| {
                let d2: f64 = (0..3).map(|a| (p[a] - b.center[a]).powi(2)).sum();
                b.amp * (-d2 * b.inv_two_s2).exp()
            })
            .sum::<f64>()
            * self.scale
    }
}

fn draw_warp(rng: &mut ChaCha8Rng, spec: &SynthSpec) -> DispField<f64> {
    let dims = spec.dims;
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    // Smooth on a padded grid and crop, so the field is stationary up to the
    // border instead of inflated by clamp-to-edge replication.
    let pad = (3.0 * spec.warp_sigma).ceil() as usize;
    let padded = Dims::new(dims.nx + 2 * pad, dims.ny + 2 * pad, dims.nz + 2 * pad);
    let comps = [0, 1, 2].map(|_| {
        let noise = Volume::from_raw(padded, (0..padded.len()).map(|_| normal.sample(rng)).collect());
        let smooth = gaussian_smooth(&noise, spec.warp_sigma);
        Volume::from_fn(dims, |x, y, z| smooth.get(x + pad, y + pad, z + pad))
    });
    let u = DispField::from_components([&comps[0], &comps[1], &comps[2]]).expect("same dims");
    let peak = u.max_norm();
    if peak > 0.0 {
        u.scaled(spec.warp_max / peak)
    } else {
        u
    }
}

/// Fixed-point inverse of `x ↦ x + u(x)` at grid point `y`.
fn invert_at(u: &DispField<f64>, y: [f64; 3]) -> [f64; 3] {
    let mut z = y;
    for _ in 0..60 {
        let d = u.sample(z);
        z = [y[0] - d[0], y[1] - d[1], y[2] - d[2]];
    }
    z
}

/// Draws a blob image, a smooth random diffeomorphic warp and the moving
/// image `moving = fixed ∘ (Id + u_true)⁻¹`, evaluated analytically from the
/// blob model. Noise is added to both images last.
pub fn synth_pair(spec: &SynthSpec) -> Result<SynthPair> {
    spec.validate()?;
    let dims = spec.dims;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let image = BlobImage::draw(&mut rng, dims, spec.num_blobs);

    let mut u_true = None;
    for _ in 0..MAX_WARP_DRAWS {
        let u = draw_warp(&mut rng, spec);
        if jacobian_det_min(&u) > 0.0 {
            u_true = Some(u);
            break;
        }
    }
    let u_true = u_true.ok_or(Error::NotDiffeomorphic(MAX_WARP_DRAWS))?;

    let mut fixed = Volume::from_fn(dims, |x, y, z| image.eval([x as f64, y as f64, z as f64]));
    let mut moving = Volume::from_fn(dims, |x, y, z| image.eval(invert_at(&u_true, [x as f64, y as f64, z as f64])));
    if spec.noise_sigma > 0.0 {
        let noise = Normal::new(0.0, spec.noise_sigma).expect("valid sigma");
        fixed = fixed.map_with(|v| v + noise.sample(&mut rng));
        moving = moving.map_with(|v| v + noise.sample(&mut rng));
    }
    Ok(SynthPair { fixed, moving, u_true })
}
