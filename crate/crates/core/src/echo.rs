//! Pseudo-ultrasound synthesis and the translation objective terms.
//!
//! A binary slice mask becomes an echo-like grayscale image by cropping to
//! the sector footprint, Gaussian-blurring, and adding seeded Gaussian
//! noise. The adversarial/cycle objective terms operate on supplied batches
//! of discriminator outputs and reconstruction residuals, so the formulas
//! are testable without any trained networks; the trained translator plugs
//! in upstream by producing those batches.

use std::io::{Read, Write};
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{read_pgm_bytes, write_pgm_bytes, BinaryMask};
use crate::view::ViewDefinition;

/// A grayscale image with intensities in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub intensities: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, intensities: Vec<f64>) -> Result<Self> {
        if intensities.len() != width * height {
            return Err(Error::invalid(format!(
                "{} intensities for {width}x{height} image",
                intensities.len()
            )));
        }
        if !intensities.iter().all(|v| (0.0..=1.0).contains(v)) {
            return Err(Error::invalid("intensities must lie in [0, 1]"));
        }
        Ok(Self {
            width,
            height,
            intensities,
        })
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.intensities[row * self.width + col]
    }

    /// Writes binary PGM, quantizing by `round(v * 255)`.
    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path.as_ref())?);
        self.write_pgm_to(&mut out)
    }

    pub fn write_pgm_to(&self, out: &mut impl Write) -> Result<()> {
        let bytes: Vec<u8> = self
            .intensities
            .iter()
            .map(|v| (v * 255.0).round() as u8)
            .collect();
        write_pgm_bytes(out, self.width, self.height, &bytes)
    }

    pub fn read_pgm(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path.as_ref())?;
        Self::read_pgm_from(&mut bytes.as_slice())
    }

    pub fn read_pgm_from(reader: &mut impl Read) -> Result<Self> {
        let (width, height, bytes) = read_pgm_bytes(reader)?;
        let intensities = bytes.iter().map(|&b| b as f64 / 255.0).collect();
        Self::new(width, height, intensities)
    }
}

/// Blur and noise settings for pseudo-image generation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    /// Gaussian blur standard deviation in pixels.
    pub blur_sigma: f64,
    /// Additive noise standard deviation in intensity units.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl NoiseParams {
    pub fn new(blur_sigma: f64, noise_sigma: f64, seed: u64) -> Result<Self> {
        let p = Self {
            blur_sigma,
            noise_sigma,
            seed,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.blur_sigma.is_finite() && self.blur_sigma >= 0.0) {
            return Err(Error::invalid("blur_sigma must be >= 0"));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::invalid("noise_sigma must be >= 0"));
        }
        Ok(())
    }
}

/// Turns a slice mask into a pseudo-ultrasound image.
///
/// Inside the sector footprint (pixel centers within the view's wedge angle
/// and depth) the result is `clamp(blur(mask/255) + noise, 0, 1)`; outside
/// it is exactly zero. Noise is drawn per in-sector pixel in row-major order
/// from a generator seeded by `params.seed`, so identical seeds give
/// bit-identical images.
pub fn pseudo_image(
    mask: &BinaryMask,
    view: &ViewDefinition,
    params: &NoiseParams,
) -> Result<GrayImage> {
    params.validate()?;
    let width = mask.width;
    let height = mask.height;
    let gray: Vec<f64> = mask.pixels.iter().map(|&p| p as f64 / 255.0).collect();
    let blurred = gaussian_blur(&gray, width, height, params.blur_sigma);

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let cos_half = view.half_angle_deg.to_radians().cos();
    let half_width = (width / 2) as f64;
    let mut out = vec![0.0f64; width * height];
    for row in 0..height {
        for col in 0..width {
            let u = (row as f64 + 0.5) * mask.pixel_size;
            let v = (col as f64 + 0.5 - half_width) * mask.pixel_size;
            let radius = (u * u + v * v).sqrt();
            let in_sector = radius <= view.depth_mm && u >= radius * cos_half;
            if !in_sector {
                continue;
            }
            let mut val = blurred[row * width + col];
            if params.noise_sigma > 0.0 {
                let n: f64 = rng.sample(StandardNormal);
                val += params.noise_sigma * n;
            }
            out[row * width + col] = val.clamp(0.0, 1.0);
        }
    }
    GrayImage::new(width, height, out)
}

/// Separable Gaussian blur with kernel radius `ceil(3 sigma)` and replicated
/// borders. `sigma = 0` is the identity.
fn gaussian_blur(data: &[f64], width: usize, height: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return data.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    let mut sum = 0.0;
    for i in -radius..=radius {
        let w = (-0.5 * (i as f64 / sigma).powi(2)).exp();
        kernel.push(w);
        sum += w;
    }
    for w in &mut kernel {
        *w /= sum;
    }

    let clamp = |i: i64, n: usize| -> usize { i.clamp(0, n as i64 - 1) as usize };
    // Horizontal pass.
    let mut tmp = vec![0.0; data.len()];
    for row in 0..height {
        for col in 0..width {
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                let c = clamp(col as i64 + k as i64 - radius, width);
                acc += w * data[row * width + c];
            }
            tmp[row * width + col] = acc;
        }
    }
    // Vertical pass.
    let mut out = vec![0.0; data.len()];
    for row in 0..height {
        for col in 0..width {
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                let r = clamp(row as i64 + k as i64 - radius, height);
                acc += w * tmp[r * width + col];
            }
            out[row * width + col] = acc;
        }
    }
    out
}

/// Discriminator outputs for one batch: probabilities that real respectively
/// translated samples are real. All entries must lie strictly inside (0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct GanBatch {
    d_real: Vec<f64>,
    d_fake: Vec<f64>,
}

impl GanBatch {
    pub fn new(d_real: Vec<f64>, d_fake: Vec<f64>) -> Result<Self> {
        if d_real.is_empty() || d_fake.is_empty() {
            return Err(Error::invalid("gan batch must be nonempty"));
        }
        for v in d_real.iter().chain(d_fake.iter()) {
            if !(v.is_finite() && *v > 0.0 && *v < 1.0) {
                return Err(Error::invalid(format!(
                    "discriminator output {v} outside open interval (0, 1)"
                )));
            }
        }
        Ok(Self { d_real, d_fake })
    }

    pub fn d_real(&self) -> &[f64] {
        &self.d_real
    }

    pub fn d_fake(&self) -> &[f64] {
        &self.d_fake
    }
}

/// Adversarial objective: `mean(ln d_real) + mean(ln(1 - d_fake))`.
///
/// Finite by the batch's open-interval invariant. The discriminator drives
/// this up; the generator drives it down.
pub fn gan_loss(batch: &GanBatch) -> f64 {
    let mean_ln = |xs: &[f64], f: fn(f64) -> f64| -> f64 {
        xs.iter().map(|&x| f(x)).sum::<f64>() / xs.len() as f64
    };
    mean_ln(&batch.d_real, |x| x.ln()) + mean_ln(&batch.d_fake, |x| (1.0 - x).ln())
}

/// Per-item mean L1 reconstruction residuals for both cycle directions.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleBatch {
    residuals_x: Vec<f64>,
    residuals_y: Vec<f64>,
}

impl CycleBatch {
    pub fn new(residuals_x: Vec<f64>, residuals_y: Vec<f64>) -> Result<Self> {
        if residuals_x.is_empty() || residuals_y.is_empty() {
            return Err(Error::invalid("cycle batch must be nonempty"));
        }
        for v in residuals_x.iter().chain(residuals_y.iter()) {
            if !(v.is_finite() && *v >= 0.0) {
                return Err(Error::invalid(format!("residual mean {v} must be >= 0")));
            }
        }
        Ok(Self {
            residuals_x,
            residuals_y,
        })
    }

    /// Builds the batch from paired images: `residual = mean |recon - original|`.
    pub fn from_images(x_pairs: &[(GrayImage, GrayImage)], y_pairs: &[(GrayImage, GrayImage)]) -> Result<Self> {
        let residual = |(orig, recon): &(GrayImage, GrayImage)| -> Result<f64> {
            if orig.width != recon.width || orig.height != recon.height {
                return Err(Error::invalid("cycle pair dimensions differ"));
            }
            let n = orig.intensities.len() as f64;
            Ok(orig
                .intensities
                .iter()
                .zip(&recon.intensities)
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
                / n)
        };
        Self::new(
            x_pairs.iter().map(residual).collect::<Result<_>>()?,
            y_pairs.iter().map(residual).collect::<Result<_>>()?,
        )
    }

    pub fn residuals_x(&self) -> &[f64] {
        &self.residuals_x
    }

    pub fn residuals_y(&self) -> &[f64] {
        &self.residuals_y
    }
}

/// Cycle-consistency objective: mean x-residual plus mean y-residual.
pub fn cycle_loss(batch: &CycleBatch) -> f64 {
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    mean(&batch.residuals_x) + mean(&batch.residuals_y)
}

/// Full translation objective: `gan_xy + gan_yx + lambda * cycle`.
///
/// `lambda` must be nonnegative; it weighs cycle consistency against the two
/// adversarial terms.
pub fn full_objective(gan_xy: f64, gan_yx: f64, cycle: f64, lambda: f64) -> f64 {
    debug_assert!(lambda >= 0.0, "lambda must be >= 0");
    gan_xy + gan_yx + lambda * cycle
}

/// Loss report written by batch runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub gan_xy: f64,
    pub gan_yx: f64,
    pub cycle: f64,
    pub lambda: f64,
    pub total: f64,
}

impl LossReport {
    pub fn new(gan_xy: f64, gan_yx: f64, cycle: f64, lambda: f64) -> Self {
        Self {
            gan_xy,
            gan_yx,
            cycle,
            lambda,
            total: full_objective(gan_xy, gan_yx, cycle, lambda),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::view::{ViewDefinition, ViewName};
    use proptest::prelude::*;

    fn test_view() -> ViewDefinition {
        ViewDefinition::new(
            ViewName::A4C,
            [0.0; 3],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            45.0,
            150.0,
            1.0,
        )
        .unwrap()
    }

    /// Mask with every pixel on, for footprint-only behavior.
    fn full_mask(width: usize, height: usize) -> BinaryMask {
        BinaryMask::new(width, height, vec![255; width * height], 0.7).unwrap()
    }

    fn in_sector(view: &ViewDefinition, mask: &BinaryMask, row: usize, col: usize) -> bool {
        let u = (row as f64 + 0.5) * mask.pixel_size;
        let v = (col as f64 + 0.5 - (mask.width / 2) as f64) * mask.pixel_size;
        let r = (u * u + v * v).sqrt();
        r <= view.depth_mm && u >= r * view.half_angle_deg.to_radians().cos()
    }

    #[test]
    fn no_blur_no_noise_reproduces_mask_inside_sector() {
        let view = test_view();
        let mask = full_mask(64, 64);
        let params = NoiseParams::new(0.0, 0.0, 1).unwrap();
        let img = pseudo_image(&mask, &view, &params).unwrap();
        for row in 0..64 {
            for col in 0..64 {
                let expect = if in_sector(&view, &mask, row, col) { 1.0 } else { 0.0 };
                assert_eq!(img.get(row, col), expect, "pixel ({row}, {col})");
            }
        }
    }

    #[test]
    fn out_of_sector_pixels_are_exactly_zero() {
        let view = test_view();
        let mask = full_mask(64, 64);
        let params = NoiseParams::new(2.0, 0.3, 99).unwrap();
        let img = pseudo_image(&mask, &view, &params).unwrap();
        for row in 0..64 {
            for col in 0..64 {
                if !in_sector(&view, &mask, row, col) {
                    assert_eq!(img.get(row, col), 0.0);
                }
            }
        }
    }

    #[test]
    fn noise_mean_matches_statistical_oracle() {
        // Constant 0.5 region, noise sigma 0.1: the sample mean over >= 1e4
        // in-sector pixels stays within three standard errors of 0.5.
        // (At sigma 0.1 the clamp at [0,1] is 5 sigma away, so its bias is
        // far below the tolerance.)
        let view = test_view();
        let size = 200usize;
        let gray = BinaryMask::new(size, size, vec![255; size * size], 0.7).unwrap();
        // Blur of the all-on mask is still 1.0 everywhere; rescale to 0.5 by
        // averaging two images with complementary noise signs is overkill --
        // instead check around 1.0 from below is impossible, so build the
        // 0.5 plateau directly through the blur of a checkerboard.
        let checker: Vec<u8> = (0..size * size)
            .map(|i| if (i / size + i % size) % 2 == 0 { 255 } else { 0 })
            .collect();
        let mask = BinaryMask::new(size, size, checker, 0.7).unwrap();
        let params = NoiseParams::new(3.0, 0.1, 7).unwrap();
        let img = pseudo_image(&mask, &view, &params).unwrap();

        // Away from borders the blurred checkerboard is 0.5 to high accuracy.
        let mut sum = 0.0;
        let mut n = 0usize;
        for row in 20..size - 20 {
            for col in 20..size - 20 {
                if in_sector(&view, &mask, row, col) {
                    sum += img.get(row, col);
                    n += 1;
                }
            }
        }
        assert!(n >= 10_000, "need >= 1e4 pixels, got {n}");
        let mean = sum / n as f64;
        let standard_error = 0.1 / (n as f64).sqrt();
        assert!(
            (mean - 0.5).abs() <= 3.0 * standard_error,
            "mean {mean}, n {n}"
        );
    }

    #[test]
    fn same_seed_bit_identical_different_seed_differs() {
        let view = test_view();
        let mask = full_mask(64, 64);
        let a = pseudo_image(&mask, &view, &NoiseParams::new(1.5, 0.1, 42).unwrap()).unwrap();
        let b = pseudo_image(&mask, &view, &NoiseParams::new(1.5, 0.1, 42).unwrap()).unwrap();
        assert_eq!(a, b);
        let c = pseudo_image(&mask, &view, &NoiseParams::new(1.5, 0.1, 43).unwrap()).unwrap();
        let differing = a
            .intensities
            .iter()
            .zip(&c.intensities)
            .filter(|(x, y)| x != y)
            .count();
        assert!(differing >= 1);
    }

    #[test]
    fn gan_loss_analytic_values() {
        // Near-perfect discriminator: loss tends to zero.
        let batch = GanBatch::new(vec![1.0 - 1e-12; 4], vec![1e-12; 4]).unwrap();
        assert!(gan_loss(&batch).abs() < 1e-9);
        // Coin-flip discriminator: 2 ln(1/2).
        let batch = GanBatch::new(vec![0.5], vec![0.5]).unwrap();
        assert!((gan_loss(&batch) - 2.0 * 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gan_batch_rejects_boundary_values() {
        assert!(GanBatch::new(vec![1.0], vec![0.5]).is_err());
        assert!(GanBatch::new(vec![0.5], vec![0.0]).is_err());
        assert!(GanBatch::new(vec![], vec![]).is_err());
    }

    #[test]
    fn gan_loss_matches_direct_sum_oracle() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let d_real: Vec<f64> = (0..100).map(|_| rng.random_range(0.01..0.99)).collect();
        let d_fake: Vec<f64> = (0..37).map(|_| rng.random_range(0.01..0.99)).collect();
        let mut oracle = 0.0;
        for &x in &d_real {
            oracle += x.ln() / d_real.len() as f64;
        }
        for &x in &d_fake {
            oracle += (1.0 - x).ln() / d_fake.len() as f64;
        }
        let batch = GanBatch::new(d_real, d_fake).unwrap();
        assert!((gan_loss(&batch) - oracle).abs() < 1e-12);
    }

    #[test]
    fn gan_loss_monotonicity() {
        let base = GanBatch::new(vec![0.4, 0.6], vec![0.3, 0.7]).unwrap();
        let l0 = gan_loss(&base);
        let up_real = GanBatch::new(vec![0.5, 0.6], vec![0.3, 0.7]).unwrap();
        assert!(gan_loss(&up_real) > l0);
        let up_fake = GanBatch::new(vec![0.4, 0.6], vec![0.3, 0.8]).unwrap();
        assert!(gan_loss(&up_fake) < l0);
    }

    #[test]
    fn cycle_loss_values() {
        let perfect = CycleBatch::new(vec![0.0, 0.0], vec![0.0]).unwrap();
        assert_eq!(cycle_loss(&perfect), 0.0);
        let off = CycleBatch::new(vec![0.25, 0.25], vec![0.25, 0.25, 0.25]).unwrap();
        assert!((cycle_loss(&off) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn cycle_loss_matches_brute_force_oracle() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let rx: Vec<f64> = (0..23).map(|_| rng.random_range(0.0..2.0)).collect();
        let ry: Vec<f64> = (0..17).map(|_| rng.random_range(0.0..2.0)).collect();
        let oracle =
            rx.iter().sum::<f64>() / rx.len() as f64 + ry.iter().sum::<f64>() / ry.len() as f64;
        let batch = CycleBatch::new(rx, ry).unwrap();
        assert!((cycle_loss(&batch) - oracle).abs() < 1e-12);
    }

    #[test]
    fn full_objective_cases() {
        assert_eq!(full_objective(0.0, 0.0, 0.0, 10.0), 0.0);
        assert_eq!(full_objective(-1.5, 2.5, 99.0, 0.0), 1.0);
        assert_eq!(full_objective(-1.0, -2.0, 0.3, 10.0), 0.0);
    }

    proptest! {
        #[test]
        fn full_objective_is_linear(
            a in -10.0f64..10.0, b in -10.0f64..10.0, c in 0.0f64..10.0,
            lam in 0.0f64..20.0, k in -4.0f64..4.0,
        ) {
            let f = full_objective(a, b, c, lam);
            // Additivity in the first argument and homogeneity of the cycle term.
            prop_assert!((full_objective(a + k, b, c, lam) - (f + k)).abs() < 1e-12);
            prop_assert!((full_objective(a, b + k, c, lam) - (f + k)).abs() < 1e-12);
            let scaled = full_objective(a, b, 2.0 * c, lam);
            prop_assert!((scaled - (f + lam * c)).abs() < 1e-12);
        }
    }
}
