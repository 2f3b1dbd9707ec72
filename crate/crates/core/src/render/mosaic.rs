//! Division-of-focal-plane polarizer mosaic.
//!
//! Every Stokes pixel becomes one 2x2 super-pixel with filter angles
//! `[0, 45]` on the top row and `[90, 135]` on the bottom row, so a raw frame
//! is twice the Stokes resolution in each direction.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::grid::Grid;
use crate::polcore::{malus_observe, StokesVector};

pub type MosaicImage = Grid<f64>;

/// Filter angle of raw pixel `(x, y)`.
pub fn filter_angle(x: usize, y: usize) -> f64 {
    match (x % 2, y % 2) {
        (0, 0) => 0.0,
        (1, 0) => PI / 4.0,
        (0, 1) => PI / 2.0,
        _ => 3.0 * PI / 4.0,
    }
}

/// Samples the mosaic and adds Gaussian noise with standard deviation
/// `sigma` times the brightest noiseless raw value; results are clamped at 0.
pub fn mosaic_sample(img: &Grid<StokesVector>, sigma: f64, seed: u64) -> MosaicImage {
    let mut raw = Grid::from_fn(img.width() * 2, img.height() * 2, |x, y| {
        malus_observe(img.get(x / 2, y / 2), filter_angle(x, y))
    });
    if sigma > 0.0 {
        let peak = raw.iter().fold(0.0f64, |m, v| m.max(*v));
        let normal = Normal::new(0.0, sigma * peak).expect("finite sigma");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in raw.as_mut_slice() {
            *v = (*v + normal.sample(&mut rng)).max(0.0);
        }
    }
    raw
}

/// Least-squares Stokes estimate per 2x2 super-pixel; `s3` is unobserved and
/// set to 0.
pub fn demosaic(raw: &MosaicImage) -> Grid<StokesVector> {
    Grid::from_fn(raw.width() / 2, raw.height() / 2, |x, y| {
        let i0 = *raw.get(2 * x, 2 * y);
        let i45 = *raw.get(2 * x + 1, 2 * y);
        let i90 = *raw.get(2 * x, 2 * y + 1);
        let i135 = *raw.get(2 * x + 1, 2 * y + 1);
        StokesVector::new(0.5 * (i0 + i45 + i90 + i135), i0 - i90, i45 - i135, 0.0)
    })
}
