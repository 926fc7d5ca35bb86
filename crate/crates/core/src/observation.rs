//! Per-label trivariate Gaussian color model.

use nalgebra::{Cholesky, Matrix3, SymmetricEigen, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{LabelField, LabelSet};

/// RGB image with channels scaled to `[0, 1]`, pixels in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorImage {
    width: usize,
    height: usize,
    pixels: Vec<[f64; 3]>,
}

impl ColorImage {
    pub fn new(width: usize, height: usize, pixels: Vec<[f64; 3]>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::SizeMismatch(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        if pixels.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig(
                "image contains non-finite values".into(),
            ));
        }
        Ok(ColorImage {
            width,
            height,
            pixels,
        })
    }

    /// Interleaved 8-bit RGB, normalized by 255.
    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != 3 * width * height {
            return Err(Error::SizeMismatch(format!(
                "{} bytes for a {width}x{height} RGB image",
                bytes.len()
            )));
        }
        let pixels = bytes
            .chunks_exact(3)
            .map(|c| {
                [
                    c[0] as f64 / 255.0,
                    c[1] as f64 / 255.0,
                    c[2] as f64 / 255.0,
                ]
            })
            .collect();
        Self::new(width, height, pixels)
    }

    /// Clamped, rounded 8-bit RGB.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.pixels.iter().flat_map(|p| p.map(quantize)).collect()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self) -> &[[f64; 3]] {
        &self.pixels
    }

    pub fn pixel(&self, i: usize) -> [f64; 3] {
        self.pixels[i]
    }
}

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Mean and covariance of one label's color distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub mean: [f64; 3],
    pub cov: [[f64; 3]; 3],
}

impl Gaussian {
    pub fn new(mean: [f64; 3], cov: [[f64; 3]; 3]) -> Self {
        Gaussian { mean, cov }
    }

    pub fn isotropic(mean: [f64; 3], variance: f64) -> Self {
        let mut cov = [[0.0; 3]; 3];
        for (k, row) in cov.iter_mut().enumerate() {
            row[k] = variance;
        }
        Gaussian { mean, cov }
    }

    fn mean_vec(&self) -> Vector3<f64> {
        Vector3::from(self.mean)
    }

    fn cov_mat(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| self.cov[r][c])
    }

    fn from_parts(mean: Vector3<f64>, cov: Matrix3<f64>) -> Self {
        Gaussian {
            mean: [mean[0], mean[1], mean[2]],
            cov: [0, 1, 2].map(|r| [0, 1, 2].map(|c| cov[(r, c)])),
        }
    }
}

/// `Θ`: one Gaussian per label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GaussianParams {
    components: Vec<Gaussian>,
}

impl GaussianParams {
    pub fn new(components: Vec<Gaussian>) -> Result<Self> {
        LabelSet::new(components.len())?;
        Ok(GaussianParams { components })
    }

    pub fn q(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[Gaussian] {
        &self.components
    }

    pub fn component(&self, label: usize) -> &Gaussian {
        &self.components[label]
    }

    /// Largest absolute difference over all means and covariance entries.
    pub fn max_diff(&self, other: &GaussianParams) -> f64 {
        let mut m: f64 = 0.0;
        for (a, b) in self.components.iter().zip(&other.components) {
            for k in 0..3 {
                m = m.max((a.mean[k] - b.mean[k]).abs());
                for l in 0..3 {
                    m = m.max((a.cov[k][l] - b.cov[k][l]).abs());
                }
            }
        }
        m
    }

    /// Relabel: component `perm[a]` of the result is component `a` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut components = self.components.clone();
        for (a, &p) in perm.iter().enumerate() {
            components[p] = self.components[a];
        }
        GaussianParams { components }
    }
}

/// Cached factorization for fast repeated evaluation.
struct Factor {
    mean: Vector3<f64>,
    chol: Cholesky<f64, nalgebra::U3>,
    log_norm: f64,
}

impl Factor {
    fn new(label: usize, g: &Gaussian) -> Result<Self> {
        let cov = g.cov_mat();
        if (cov - cov.transpose()).abs().max() > 1e-12 * cov.abs().max().max(1.0) {
            return Err(Error::NotPositiveDefinite { label });
        }
        let chol = Cholesky::new(cov).ok_or(Error::NotPositiveDefinite { label })?;
        let l = chol.l_dirty();
        let diag = [l[(0, 0)], l[(1, 1)], l[(2, 2)]];
        if diag.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(Error::NotPositiveDefinite { label });
        }
        let log_det: f64 = 2.0 * diag.iter().map(|x| x.ln()).sum::<f64>();
        let log_norm = -0.5 * (3.0 * (2.0 * std::f64::consts::PI).ln() + log_det);
        Ok(Factor {
            mean: g.mean_vec(),
            chol,
            log_norm,
        })
    }

    fn eval(&self, d: &[f64; 3]) -> f64 {
        let r = Vector3::from(*d) - self.mean;
        let l = self.chol.l_dirty();
        // Forward substitution for L y = r.
        let y0 = r[0] / l[(0, 0)];
        let y1 = (r[1] - l[(1, 0)] * y0) / l[(1, 1)];
        let y2 = (r[2] - l[(2, 0)] * y0 - l[(2, 1)] * y1) / l[(2, 2)];
        self.log_norm - 0.5 * (y0 * y0 + y1 * y1 + y2 * y2)
    }
}

/// `ln g(d | ξ, Θ)`.
pub fn log_likelihood(d: &[f64; 3], label: usize, params: &GaussianParams) -> Result<f64> {
    Ok(Factor::new(label, params.component(label))?.eval(d))
}

/// Log-likelihood of every pixel under every label, `|V| x q`.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodTable {
    q: usize,
    values: Vec<f64>,
}

impl LikelihoodTable {
    pub fn from_values(q: usize, values: Vec<f64>) -> Result<Self> {
        LabelSet::new(q)?;
        if !values.len().is_multiple_of(q) {
            return Err(Error::SizeMismatch(format!(
                "{} entries is not a multiple of q = {q}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig(
                "likelihood table contains non-finite entries".into(),
            ));
        }
        Ok(LikelihoodTable { q, values })
    }

    /// All entries equal: the data carry no information about labels.
    pub fn constant(num_pixels: usize, q: usize, value: f64) -> Self {
        LikelihoodTable {
            q,
            values: vec![value; num_pixels * q],
        }
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn num_pixels(&self) -> usize {
        self.values.len() / self.q
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.q..(i + 1) * self.q]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// Add `shift[i]` to every entry of row `i`.
    pub fn shifted_rows(&self, shift: &[f64]) -> Self {
        let mut values = self.values.clone();
        for (row, &c) in values.chunks_mut(self.q).zip(shift) {
            row.iter_mut().for_each(|x| *x += c);
        }
        LikelihoodTable { q: self.q, values }
    }

    /// Sum over pixels of `ln((1/q) Σ_ξ g(d_i | ξ))`: the exact log marginal
    /// likelihood when labels are independent and uniform.
    pub fn factorized_log_likelihood(&self) -> f64 {
        let lq = (self.q as f64).ln();
        self.values
            .chunks(self.q)
            .map(|row| {
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln() - lq
            })
            .sum()
    }
}

pub fn likelihood_table(image: &ColorImage, params: &GaussianParams) -> Result<LikelihoodTable> {
    let factors = params
        .components
        .iter()
        .enumerate()
        .map(|(k, g)| Factor::new(k, g))
        .collect::<Result<Vec<_>>>()?;
    let q = factors.len();
    let mut values = Vec::with_capacity(image.len() * q);
    for d in image.pixels() {
        values.extend(factors.iter().map(|f| f.eval(d)));
    }
    Ok(LikelihoodTable { q, values })
}

/// Add `ε I` with `ε = 1e-6 max(tr C / 3, 1e-6)` when the smallest eigenvalue
/// of `C` falls below `ε`. Also symmetrizes.
pub fn regularize(cov: Matrix3<f64>) -> Matrix3<f64> {
    let cov = 0.5 * (cov + cov.transpose());
    let eps = 1e-6 * (cov.trace() / 3.0).max(1e-6);
    let min_eig = SymmetricEigen::new(cov).eigenvalues.min();
    if min_eig < eps {
        cov + Matrix3::identity() * eps
    } else {
        cov
    }
}

/// Labels whose total responsibility is below this keep their old parameters.
pub const EMPTY_LABEL_FLOOR: f64 = 1e-8;

/// Outcome of a responsibility-weighted parameter update.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamUpdate {
    pub params: GaussianParams,
    /// Labels that were (nearly) empty and kept their previous parameters.
    pub empty_labels: Vec<usize>,
}

/// Responsibility-weighted means and covariances. `responsibilities` is
/// `|V| x q` with rows summing to one.
pub fn weighted_mean_cov(
    image: &ColorImage,
    responsibilities: &[f64],
    previous: &GaussianParams,
) -> Result<ParamUpdate> {
    let q = previous.q();
    if responsibilities.len() != image.len() * q {
        return Err(Error::SizeMismatch(format!(
            "{} responsibilities for {} pixels and q = {q}",
            responsibilities.len(),
            image.len()
        )));
    }
    let mut weight = vec![0.0; q];
    let mut sum = vec![Vector3::zeros(); q];
    for (d, r) in image.pixels().iter().zip(responsibilities.chunks(q)) {
        let d = Vector3::from(*d);
        for k in 0..q {
            weight[k] += r[k];
            sum[k] += d * r[k];
        }
    }
    let means: Vec<Vector3<f64>> = (0..q)
        .map(|k| {
            if weight[k] > 0.0 {
                sum[k] / weight[k]
            } else {
                Vector3::zeros()
            }
        })
        .collect();
    let mut scatter = vec![Matrix3::zeros(); q];
    for (d, r) in image.pixels().iter().zip(responsibilities.chunks(q)) {
        let d = Vector3::from(*d);
        for k in 0..q {
            let c = d - means[k];
            scatter[k] += c * c.transpose() * r[k];
        }
    }
    let mut empty_labels = Vec::new();
    let components = (0..q)
        .map(|k| {
            if weight[k] < EMPTY_LABEL_FLOOR {
                empty_labels.push(k);
                *previous.component(k)
            } else {
                Gaussian::from_parts(means[k], regularize(scatter[k] / weight[k]))
            }
        })
        .collect();
    Ok(ParamUpdate {
        params: GaussianParams { components },
        empty_labels,
    })
}

fn global_covariance(image: &ColorImage) -> Matrix3<f64> {
    let n = image.len() as f64;
    let mean = image
        .pixels()
        .iter()
        .fold(Vector3::zeros(), |a, d| a + Vector3::from(*d))
        / n;
    let scatter = image.pixels().iter().fold(Matrix3::zeros(), |a, d| {
        let c = Vector3::from(*d) - mean;
        a + c * c.transpose()
    });
    scatter / n
}

const REFINEMENT_PASSES: usize = 10;
const JITTER_SD: f64 = 1e-3;

/// Deterministic initial parameters and hard labels: farthest-point seeding
/// from a seeded random first center, then a few k-means passes.
pub fn init_params(
    image: &ColorImage,
    q: LabelSet,
    seed: u64,
) -> Result<(GaussianParams, LabelField)> {
    let q = q.q();
    if image.is_empty() {
        return Err(Error::InvalidConfig("empty image".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = Normal::new(0.0, JITTER_SD).expect("valid normal");
    let px: Vec<Vector3<f64>> = image.pixels().iter().map(|d| Vector3::from(*d)).collect();

    let mut centers = vec![px[rng.random_range(0..px.len())]];
    let mut nearest: Vec<f64> = px.iter().map(|p| (p - centers[0]).norm_squared()).collect();
    let mut distinct = 1;
    while centers.len() < q {
        let (far, dist) =
            nearest.iter().enumerate().fold(
                (0, -1.0),
                |(bi, bd), (i, &d)| if d > bd { (i, d) } else { (bi, bd) },
            );
        let c = if dist > 0.0 {
            distinct += 1;
            px[far]
        } else {
            // Fewer distinct colors than labels: duplicate an existing center.
            centers[centers.len() % distinct] + Vector3::from_fn(|_, _| jitter.sample(&mut rng))
        };
        for (n, p) in nearest.iter_mut().zip(&px) {
            *n = n.min((p - c).norm_squared());
        }
        centers.push(c);
    }

    let assign = |centers: &[Vector3<f64>]| -> Vec<usize> {
        px.iter()
            .map(|p| {
                let mut best = 0;
                let mut bd = f64::INFINITY;
                for (k, c) in centers.iter().enumerate() {
                    let d = (p - c).norm_squared();
                    if d < bd {
                        bd = d;
                        best = k;
                    }
                }
                best
            })
            .collect()
    };
    let mut labels = assign(&centers);
    for _ in 0..REFINEMENT_PASSES {
        let mut sum = vec![Vector3::zeros(); q];
        let mut count = vec![0usize; q];
        for (p, &k) in px.iter().zip(&labels) {
            sum[k] += p;
            count[k] += 1;
        }
        for k in 0..q {
            if count[k] > 0 {
                centers[k] = sum[k] / count[k] as f64;
            }
        }
        let next = assign(&centers);
        if next == labels {
            break;
        }
        labels = next;
    }

    let global = regularize(global_covariance(image));
    let mut scatter = vec![Matrix3::zeros(); q];
    let mut count = vec![0usize; q];
    for (p, &k) in px.iter().zip(&labels) {
        let c = p - centers[k];
        scatter[k] += c * c.transpose();
        count[k] += 1;
    }
    let components = (0..q)
        .map(|k| {
            let cov = if count[k] >= 2 {
                regularize(scatter[k] / count[k] as f64)
            } else {
                global
            };
            Gaussian::from_parts(centers[k], cov)
        })
        .collect();
    let q_set = LabelSet::new(q)?;
    Ok((
        GaussianParams { components },
        LabelField::new(labels, q_set)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;

    const LN_2PI: f64 = 1.8378770664093453;

    fn params(gs: Vec<Gaussian>) -> GaussianParams {
        GaussianParams::new(gs).unwrap()
    }

    #[test]
    fn standard_normal_at_mean() {
        let p = params(vec![Gaussian::isotropic([0.3, 0.4, 0.5], 1.0); 2]);
        let v = log_likelihood(&[0.3, 0.4, 0.5], 0, &p).unwrap();
        assert!((v - (-1.5 * LN_2PI)).abs() < 1e-14);
        assert!((v + 2.75682).abs() < 1e-5);
    }

    #[test]
    fn scaled_isotropic_closed_form() {
        let p = params(vec![Gaussian::isotropic([0.0; 3], 0.01); 2]);
        let v = log_likelihood(&[0.1, 0.0, 0.0], 1, &p).unwrap();
        let expected = -1.5 * LN_2PI - 3.0 * 0.1f64.ln() - 0.5;
        assert!((v - expected).abs() < 1e-12, "{v} vs {expected}");
    }

    #[test]
    fn singular_covariance_rejected() {
        let mut g = Gaussian::isotropic([0.0; 3], 1.0);
        g.cov[2][2] = 0.0;
        let p = params(vec![Gaussian::isotropic([0.0; 3], 1.0), g]);
        assert_eq!(
            log_likelihood(&[0.0; 3], 1, &p),
            Err(Error::NotPositiveDefinite { label: 1 })
        );
        assert!(likelihood_table(&ColorImage::new(1, 1, vec![[0.0; 3]]).unwrap(), &p).is_err());
    }

    #[test]
    fn rotation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let a = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let cov = a * a.transpose() + Matrix3::identity() * 0.05;
            let mean = Vector3::from_fn(|_, _| rng.random_range(0.0..1.0));
            let d = Vector3::from_fn(|_, _| rng.random_range(0.0..1.0));
            let rot = Rotation3::new(Vector3::from_fn(|_, _| rng.random_range(-3.0..3.0)));
            let r = rot.matrix();
            let p = params(vec![Gaussian::from_parts(mean, cov); 2]);
            let pr = params(vec![
                Gaussian::from_parts(r * mean, r * cov * r.transpose());
                2
            ]);
            let rd = r * d;
            let v0 = log_likelihood(&[d[0], d[1], d[2]], 0, &p).unwrap();
            let v1 = log_likelihood(&[rd[0], rd[1], rd[2]], 0, &pr).unwrap();
            assert!((v0 - v1).abs() < 1e-10);
        }
    }

    #[test]
    fn table_matches_pointwise_calls() {
        let img = ColorImage::new(
            2,
            2,
            vec![
                [0.1, 0.2, 0.3],
                [0.9, 0.8, 0.7],
                [0.5, 0.5, 0.5],
                [0.0, 1.0, 0.2],
            ],
        )
        .unwrap();
        let p = params(vec![
            Gaussian::isotropic([0.2, 0.2, 0.2], 0.04),
            Gaussian::new(
                [0.7, 0.6, 0.5],
                [[0.05, 0.01, 0.0], [0.01, 0.03, 0.005], [0.0, 0.005, 0.02]],
            ),
        ]);
        let t = likelihood_table(&img, &p).unwrap();
        for i in 0..4 {
            for k in 0..2 {
                let direct = log_likelihood(&img.pixel(i), k, &p).unwrap();
                assert!((t.row(i)[k] - direct).abs() <= 1e-15 * direct.abs().max(1.0));
            }
        }
    }

    #[test]
    fn symmetric_params_give_equal_entries() {
        let img = ColorImage::new(1, 1, vec![[0.4, 0.4, 0.4]]).unwrap();
        let p = params(vec![Gaussian::isotropic([0.4; 3], 0.1); 2]);
        let t = likelihood_table(&img, &p).unwrap();
        assert_eq!(t.row(0)[0], t.row(0)[1]);
    }

    #[test]
    fn one_hot_responsibilities_give_sample_moments() {
        let img = ColorImage::new(
            4,
            1,
            vec![
                [0.0, 0.0, 0.0],
                [0.2, 0.0, 0.0],
                [1.0, 1.0, 1.0],
                [0.8, 1.0, 0.6],
            ],
        )
        .unwrap();
        let resp = vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0];
        let prev = params(vec![Gaussian::isotropic([0.5; 3], 1.0); 2]);
        let up = weighted_mean_cov(&img, &resp, &prev).unwrap();
        let g0 = up.params.component(0);
        let g1 = up.params.component(1);
        assert!((g0.mean[0] - 0.1).abs() < 1e-15);
        // Both are rank deficient, so the ridge adds a few 1e-9 to the diagonal.
        assert!((g0.cov[0][0] - 0.01).abs() < 1e-8);
        assert!((g1.mean[2] - 0.8).abs() < 1e-15);
        assert!((g1.cov[2][2] - 0.04).abs() < 1e-7);
        assert!((g1.cov[0][2] - 0.02).abs() < 1e-12);
        assert!(up.empty_labels.is_empty());
    }

    #[test]
    fn uniform_responsibilities_give_global_mean() {
        let img = ColorImage::new(
            3,
            1,
            vec![[0.0, 0.3, 0.9], [0.6, 0.3, 0.0], [0.3, 0.9, 0.3]],
        )
        .unwrap();
        let resp = vec![1.0 / 3.0; 9];
        let prev = params(vec![Gaussian::isotropic([0.5; 3], 1.0); 3]);
        let up = weighted_mean_cov(&img, &resp, &prev).unwrap();
        for g in up.params.components() {
            assert!((g.mean[0] - 0.3).abs() < 1e-12);
            assert!((g.mean[1] - 0.5).abs() < 1e-12);
            assert!((g.mean[2] - 0.4).abs() < 1e-12);
        }
    }

    #[test]
    fn random_responsibilities_match_direct_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let px: Vec<[f64; 3]> = (0..6)
            .map(|_| [rng.random(), rng.random(), rng.random()])
            .collect();
        let img = ColorImage::new(6, 1, px.clone()).unwrap();
        let q = 3;
        let mut resp = Vec::new();
        for _ in 0..6 {
            let w: Vec<f64> = (0..q).map(|_| rng.random_range(0.1..1.0)).collect();
            let s: f64 = w.iter().sum();
            resp.extend(w.iter().map(|x| x / s));
        }
        let prev = params(vec![Gaussian::isotropic([0.5; 3], 1.0); q]);
        let up = weighted_mean_cov(&img, &resp, &prev).unwrap();
        for k in 0..q {
            let w: f64 = (0..6).map(|i| resp[i * q + k]).sum();
            let mut m = [0.0; 3];
            for i in 0..6 {
                for c in 0..3 {
                    m[c] += resp[i * q + k] * px[i][c] / w;
                }
            }
            let g = up.params.component(k);
            for c in 0..3 {
                assert!((g.mean[c] - m[c]).abs() < 1e-12);
                for c2 in 0..3 {
                    let mut s = 0.0;
                    for i in 0..6 {
                        s += resp[i * q + k] * (px[i][c] - m[c]) * (px[i][c2] - m[c2]);
                    }
                    assert!((g.cov[c][c2] - s / w).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn empty_label_keeps_previous_parameters() {
        let img = ColorImage::new(2, 1, vec![[0.1; 3], [0.2; 3]]).unwrap();
        let resp = vec![1.0, 0.0, 1.0, 0.0];
        let prev = params(vec![
            Gaussian::isotropic([0.5; 3], 1.0),
            Gaussian::isotropic([0.9; 3], 0.3),
        ]);
        let up = weighted_mean_cov(&img, &resp, &prev).unwrap();
        assert_eq!(up.empty_labels, vec![1]);
        assert_eq!(up.params.component(1), prev.component(1));
    }

    #[test]
    fn weighted_covariances_are_symmetric_with_ridge() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        // Collinear colors make the raw scatter singular.
        let px: Vec<[f64; 3]> = (0..20)
            .map(|_| {
                let t: f64 = rng.random();
                [t, 2.0 * t, 0.5]
            })
            .collect();
        let img = ColorImage::new(20, 1, px).unwrap();
        let resp: Vec<f64> = (0..40)
            .map(|i| if i % 2 == 0 { 0.3 } else { 0.7 })
            .collect();
        let prev = params(vec![Gaussian::isotropic([0.5; 3], 1.0); 2]);
        let up = weighted_mean_cov(&img, &resp, &prev).unwrap();
        for g in up.params.components() {
            let c = g.cov_mat();
            assert_eq!(c, c.transpose());
            let eps = 1e-6 * (c.trace() / 3.0).max(1e-6);
            assert!(SymmetricEigen::new(c).eigenvalues.min() >= 0.5 * eps);
        }
    }

    #[test]
    fn two_color_init_recovers_colors() {
        let mut px = vec![[0.2, 0.3, 0.4]; 10];
        px.extend(vec![[0.9, 0.1, 0.5]; 6]);
        let img = ColorImage::new(4, 4, px).unwrap();
        let (p, labels) = init_params(&img, LabelSet::new(2).unwrap(), 3).unwrap();
        let mut means: Vec<[f64; 3]> = p.components().iter().map(|g| g.mean).collect();
        means.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
        let want = [[0.2, 0.3, 0.4], [0.9, 0.1, 0.5]];
        for (m, w) in means.iter().zip(&want) {
            assert!(
                m.iter().zip(w).all(|(a, b)| (a - b).abs() < 1e-14),
                "{means:?}"
            );
        }
        let l = labels.as_slice();
        assert!(l[..10].iter().all(|&a| a == l[0]));
        assert!(l[10..].iter().all(|&a| a != l[0]));
    }

    #[test]
    fn constant_image_init_is_degenerate_but_valid() {
        let img = ColorImage::new(3, 3, vec![[0.5, 0.5, 0.5]; 9]).unwrap();
        let (p, _) = init_params(&img, LabelSet::new(3).unwrap(), 1).unwrap();
        for g in p.components() {
            for c in 0..3 {
                assert!((g.mean[c] - 0.5).abs() < 0.01);
            }
        }
        assert_ne!(p.component(0).mean, p.component(1).mean);
        assert_ne!(p.component(1).mean, p.component(2).mean);
        likelihood_table(&img, &p).unwrap();
    }

    #[test]
    fn init_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let px: Vec<[f64; 3]> = (0..64)
            .map(|_| [rng.random(), rng.random(), rng.random()])
            .collect();
        let img = ColorImage::new(8, 8, px).unwrap();
        let a = init_params(&img, LabelSet::new(4).unwrap(), 7).unwrap();
        let b = init_params(&img, LabelSet::new(4).unwrap(), 7).unwrap();
        assert_eq!(a, b);
        for (x, y) in a.0.components().iter().zip(b.0.components()) {
            assert_eq!(x.mean.map(f64::to_bits), y.mean.map(f64::to_bits));
        }
    }

    #[test]
    fn rgb8_round_trip() {
        let bytes: Vec<u8> = (0..=255).cycle().take(48).collect();
        let img = ColorImage::from_rgb8(4, 4, &bytes).unwrap();
        assert_eq!(img.to_rgb8(), bytes);
    }
}
