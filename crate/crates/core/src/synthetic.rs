//! Seeded synthetic images with known ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::grid::{LabelField, LabelSet};
use crate::observation::ColorImage;

/// Draw pixel `i` from `N(means[truth[i]], sd² I)`, clamped to `[0, 1]`.
pub fn render(
    width: usize,
    height: usize,
    truth: &LabelField,
    means: &[[f64; 3]],
    sd: f64,
    seed: u64,
) -> Result<ColorImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sd).expect("finite standard deviation");
    let pixels = truth
        .as_slice()
        .iter()
        .map(|&a| {
            let m = means[a];
            [0, 1, 2].map(|c| (m[c] + noise.sample(&mut rng)).clamp(0.0, 1.0))
        })
        .collect();
    ColorImage::new(width, height, pixels)
}

/// A disk of label 1 on a background of label 0.
pub fn disk_labels(width: usize, height: usize, radius: f64) -> LabelField {
    let (cx, cy) = ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0);
    let labels = (0..width * height)
        .map(|i| {
            let (x, y) = ((i % width) as f64, (i / width) as f64);
            usize::from((x - cx).powi(2) + (y - cy).powi(2) <= radius * radius)
        })
        .collect();
    LabelField::new(labels, LabelSet::new(2).expect("q = 2 is valid")).expect("labels are 0 or 1")
}

/// Two-region test image: a disk of color 0.8 on a 0.2 background with
/// isotropic Gaussian noise.
pub fn two_region(
    width: usize,
    height: usize,
    sd: f64,
    seed: u64,
) -> Result<(ColorImage, LabelField)> {
    let truth = disk_labels(width, height, 0.3 * width.min(height) as f64);
    let image = render(width, height, &truth, &[[0.2; 3], [0.8; 3]], sd, seed)?;
    Ok((image, truth))
}

/// Spatially i.i.d. labels, uniform over `q`, rendered with means spaced on
/// a circle of radius `sep` around gray in the red-green plane. With `sd`
/// well above `sep` the label Gaussians overlap heavily.
pub fn iid_mixture(
    width: usize,
    height: usize,
    q: usize,
    sep: f64,
    sd: f64,
    seed: u64,
) -> Result<(ColorImage, LabelField)> {
    let set = LabelSet::new(q)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = (0..width * height)
        .map(|_| rng.random_range(0..q))
        .collect();
    let truth = LabelField::new(labels, set)?;
    let means: Vec<[f64; 3]> = (0..q)
        .map(|k| {
            let a = k as f64 * std::f64::consts::TAU / q as f64;
            [0.5 + sep * a.cos(), 0.5 + sep * a.sin(), 0.5]
        })
        .collect();
    let image = render(width, height, &truth, &means, sd, seed.wrapping_add(1))?;
    Ok((image, truth))
}
