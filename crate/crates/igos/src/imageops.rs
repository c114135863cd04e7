//! Shared numeric primitives: the mask perturbation operator, a Gaussian
//! blur for building low-confidence baseline images, corner-aligned bilinear
//! resampling, and seeded Gaussian noise.
//!
//! Everything here is a pure function of its inputs; noise takes an explicit
//! seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Dense H×W×C image, row-major, channel-last. Pixel values are nominally in
/// [0,1] before any scorer-specific normalization; the hard invariants are
/// only that the buffer length matches the shape and every value is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::Parameter("image dimensions must be positive".into()));
        }
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "image buffer has {} values, shape {}x{}x{} needs {}",
                data.len(),
                height,
                width,
                channels,
                height * width * channels
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("image contains non-finite values".into()));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn constant(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, value: f64) {
        self.data[(y * self.width + x) * self.channels + c] = value;
    }

    /// Elementwise sum, used to add a noise field to an image.
    pub fn add(&self, other: &ImageTensor) -> Result<ImageTensor> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "cannot add {:?} to {:?}",
                other.shape(),
                self.shape()
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(ImageTensor {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data,
        })
    }
}

/// Optimization mask M with every entry in [0,1], possibly at a lower
/// resolution than the image it perturbs.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Parameter("mask dimensions must be positive".into()));
        }
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "mask buffer has {} values, shape {}x{} needs {}",
                data.len(),
                height,
                width,
                height * width
            )));
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(Error::Parameter(
                "mask entries must be finite and within [0,1]".into(),
            ));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![1.0; height * width],
        }
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    /// Clamp arbitrary values into [0,1]; this is the projection step
    /// P_[0,1] applied after every descent update.
    pub fn project(height: usize, width: usize, values: &[f64]) -> Mask {
        debug_assert_eq!(values.len(), height * width);
        Mask {
            height,
            width,
            data: values.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn cells(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

/// Blend image and baseline pixelwise: out = image·mask + baseline·(1−mask).
/// The mask must already be at image resolution; its value broadcasts across
/// channels.
pub fn perturb(image: &ImageTensor, baseline: &ImageTensor, mask: &Mask) -> Result<ImageTensor> {
    if image.shape() != baseline.shape() {
        return Err(Error::Shape(format!(
            "image {:?} and baseline {:?} differ",
            image.shape(),
            baseline.shape()
        )));
    }
    if mask.height() != image.height() || mask.width() != image.width() {
        return Err(Error::Shape(format!(
            "mask {}x{} is not at image resolution {}x{}",
            mask.height(),
            mask.width(),
            image.height(),
            image.width()
        )));
    }
    let ch = image.channels();
    let mut data = Vec::with_capacity(image.data.len());
    for (p, &m) in mask.data().iter().enumerate() {
        for c in 0..ch {
            let i = p * ch + c;
            data.push(image.data[i] * m + baseline.data[i] * (1.0 - m));
        }
    }
    Ok(ImageTensor {
        height: image.height,
        width: image.width,
        channels: image.channels,
        data,
    })
}

/// Normalized 1-D Gaussian kernel truncated at radius ceil(3σ).
fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let z: f64 = kernel.iter().sum();
    for v in &mut kernel {
        *v /= z;
    }
    kernel
}

/// Separable Gaussian blur per channel with clamp-to-border edge handling.
pub fn gaussian_blur(image: &ImageTensor, sigma: f64) -> Result<ImageTensor> {
    if !(sigma > 0.0) {
        return Err(Error::Parameter(format!(
            "blur sigma must be positive, got {sigma}"
        )));
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as i64;
    let (h, w, ch) = image.shape();
    let clamp = |v: i64, hi: usize| v.clamp(0, hi as i64 - 1) as usize;

    // Horizontal pass, then vertical.
    let mut tmp = vec![0.0; image.data.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0.0;
                for (ki, kv) in kernel.iter().enumerate() {
                    let sx = clamp(x as i64 + ki as i64 - radius, w);
                    acc += kv * image.get(y, sx, c);
                }
                tmp[(y * w + x) * ch + c] = acc;
            }
        }
    }
    let mut out = vec![0.0; image.data.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0.0;
                for (ki, kv) in kernel.iter().enumerate() {
                    let sy = clamp(y as i64 + ki as i64 - radius, h);
                    acc += kv * tmp[(sy * w + x) * ch + c];
                }
                out[(y * w + x) * ch + c] = acc;
            }
        }
    }
    Ok(ImageTensor {
        height: h,
        width: w,
        channels: ch,
        data: out,
    })
}

/// Source coordinate for corner-aligned interpolation: target index `t` maps
/// to `t·(src−1)/(dst−1)`, degenerating to 0 when either side has one sample.
#[inline]
fn sample_coords(src_len: usize, dst_len: usize, t: usize) -> (usize, usize, f64) {
    if src_len == 1 || dst_len == 1 {
        return (0, 0, 0.0);
    }
    let pos = t as f64 * (src_len - 1) as f64 / (dst_len - 1) as f64;
    let i0 = pos.floor() as usize;
    let i0 = i0.min(src_len - 2);
    (i0, i0 + 1, pos - i0 as f64)
}

/// Corner-aligned bilinear resampling of a row-major grid.
pub(crate) fn bilinear_resize(
    src_h: usize,
    src_w: usize,
    data: &[f64],
    dst_h: usize,
    dst_w: usize,
) -> Vec<f64> {
    debug_assert_eq!(data.len(), src_h * src_w);
    let mut out = Vec::with_capacity(dst_h * dst_w);
    for y in 0..dst_h {
        let (y0, y1, fy) = sample_coords(src_h, dst_h, y);
        for x in 0..dst_w {
            let (x0, x1, fx) = sample_coords(src_w, dst_w, x);
            let top = data[y0 * src_w + x0] * (1.0 - fx) + data[y0 * src_w + x1] * fx;
            let bot = data[y1 * src_w + x0] * (1.0 - fx) + data[y1 * src_w + x1] * fx;
            out.push(top * (1.0 - fy) + bot * fy);
        }
    }
    out
}

/// Adjoint of `bilinear_resize`: scatter a gradient defined on the target
/// grid back onto the source grid with the same interpolation weights.
pub(crate) fn bilinear_resize_adjoint(
    grad: &[f64],
    dst_h: usize,
    dst_w: usize,
    src_h: usize,
    src_w: usize,
) -> Vec<f64> {
    debug_assert_eq!(grad.len(), dst_h * dst_w);
    let mut out = vec![0.0; src_h * src_w];
    for y in 0..dst_h {
        let (y0, y1, fy) = sample_coords(src_h, dst_h, y);
        for x in 0..dst_w {
            let (x0, x1, fx) = sample_coords(src_w, dst_w, x);
            let g = grad[y * dst_w + x];
            out[y0 * src_w + x0] += g * (1.0 - fx) * (1.0 - fy);
            out[y0 * src_w + x1] += g * fx * (1.0 - fy);
            out[y1 * src_w + x0] += g * (1.0 - fx) * fy;
            out[y1 * src_w + x1] += g * fx * fy;
        }
    }
    out
}

/// Upsample a mask to the target resolution with corner-aligned bilinear
/// interpolation. Outputs stay in [0,1] because every sample is a convex
/// combination of inputs.
pub fn bilinear_upsample(mask: &Mask, target_h: usize, target_w: usize) -> Result<Mask> {
    if target_h < mask.height() || target_w < mask.width() {
        return Err(Error::Parameter(format!(
            "upsample target {}x{} is smaller than mask {}x{}",
            target_h,
            target_w,
            mask.height(),
            mask.width()
        )));
    }
    let data = bilinear_resize(mask.height(), mask.width(), mask.data(), target_h, target_w);
    Ok(Mask {
        height: target_h,
        width: target_w,
        data,
    })
}

/// Zero-mean Gaussian noise field from a deterministic, seedable generator.
/// `std = 0` returns zeros without consuming the generator.
pub fn gaussian_noise(
    height: usize,
    width: usize,
    channels: usize,
    std: f64,
    seed: u64,
) -> Result<ImageTensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    gaussian_noise_with_rng(height, width, channels, std, &mut rng)
}

/// Same as [`gaussian_noise`] but drawing from a caller-owned stream, so one
/// seed can drive a whole optimization run.
pub fn gaussian_noise_with_rng(
    height: usize,
    width: usize,
    channels: usize,
    std: f64,
    rng: &mut ChaCha8Rng,
) -> Result<ImageTensor> {
    if std < 0.0 || !std.is_finite() {
        return Err(Error::Parameter(format!(
            "noise std must be finite and >= 0, got {std}"
        )));
    }
    let n = height * width * channels;
    if std == 0.0 {
        return Ok(ImageTensor {
            height,
            width,
            channels,
            data: vec![0.0; n],
        });
    }
    let normal = Normal::new(0.0, std).expect("validated std");
    let data = (0..n).map(|_| normal.sample(rng)).collect();
    Ok(ImageTensor {
        height,
        width,
        channels,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn img(h: usize, w: usize, values: &[f64]) -> ImageTensor {
        ImageTensor::new(h, w, 1, values.to_vec()).unwrap()
    }

    #[test]
    fn perturb_all_ones_mask_returns_image() {
        let image = img(2, 2, &[0.1, 0.2, 0.3, 0.4]);
        let baseline = ImageTensor::constant(2, 2, 1, 0.9);
        let out = perturb(&image, &baseline, &Mask::ones(2, 2)).unwrap();
        assert_eq!(out.data(), image.data());
    }

    #[test]
    fn perturb_all_zeros_mask_returns_baseline() {
        let image = img(2, 2, &[0.1, 0.2, 0.3, 0.4]);
        let baseline = ImageTensor::constant(2, 2, 1, 0.9);
        let mask = Mask::filled(2, 2, 0.0).unwrap();
        let out = perturb(&image, &baseline, &mask).unwrap();
        assert_eq!(out.data(), baseline.data());
    }

    #[test]
    fn perturb_midpoint() {
        let image = img(1, 1, &[0.8]);
        let baseline = img(1, 1, &[0.2]);
        let mask = Mask::filled(1, 1, 0.5).unwrap();
        let out = perturb(&image, &baseline, &mask).unwrap();
        assert!((out.data()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn perturb_rejects_shape_mismatch() {
        let image = img(2, 2, &[0.0; 4]);
        let baseline = ImageTensor::zeros(2, 3, 1);
        assert!(matches!(
            perturb(&image, &baseline, &Mask::ones(2, 2)),
            Err(Error::Shape(_))
        ));
        let baseline = ImageTensor::zeros(2, 2, 1);
        assert!(matches!(
            perturb(&image, &baseline, &Mask::ones(3, 2)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn blur_preserves_constant_image() {
        let image = ImageTensor::constant(7, 5, 2, 0.37);
        let out = gaussian_blur(&image, 2.0).unwrap();
        for v in out.data() {
            assert!((v - 0.37).abs() < 1e-12);
        }
    }

    #[test]
    fn blur_rejects_nonpositive_sigma() {
        let image = ImageTensor::zeros(4, 4, 1);
        assert!(matches!(
            gaussian_blur(&image, 0.0),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            gaussian_blur(&image, -1.0),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn blur_impulse_matches_kernel_outer_product() {
        // Normalized 1-D kernel exp(-k^2/2)/Z for k in [-3,3]: its outer
        // product is the 2-D response to a unit impulse.
        let mut image = ImageTensor::zeros(9, 9, 1);
        image.set(4, 4, 0, 1.0);
        let out = gaussian_blur(&image, 1.0).unwrap();

        let kernel: Vec<f64> = (-3i32..=3).map(|k| (-(k * k) as f64 / 2.0).exp()).collect();
        let z: f64 = kernel.iter().sum();
        let kernel: Vec<f64> = kernel.iter().map(|v| v / z).collect();
        assert!((out.get(4, 4, 0) - 0.15924112569070245).abs() < 1e-12);
        assert!((out.get(4, 4, 0) - kernel[3] * kernel[3]).abs() < 1e-12);
        for dy in -3i64..=3 {
            for dx in -3i64..=3 {
                let expect = kernel[(dy + 3) as usize] * kernel[(dx + 3) as usize];
                let got = out.get((4 + dy) as usize, (4 + dx) as usize, 0);
                assert!((got - expect).abs() < 1e-12);
            }
        }
        let total: f64 = out.data().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn upsample_same_size_is_identity() {
        let mask = Mask::new(3, 2, vec![0.0, 0.25, 0.5, 0.75, 1.0, 0.125]).unwrap();
        let out = bilinear_upsample(&mask, 3, 2).unwrap();
        assert_eq!(out.data(), mask.data());
    }

    #[test]
    fn upsample_single_cell_fills_target() {
        let mask = Mask::filled(1, 1, 0.7).unwrap();
        let out = bilinear_upsample(&mask, 4, 5).unwrap();
        assert!(out.data().iter().all(|v| (v - 0.7).abs() < 1e-15));
    }

    #[test]
    fn upsample_two_columns_interpolates_thirds() {
        let mask = Mask::new(2, 2, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let out = bilinear_upsample(&mask, 2, 4).unwrap();
        let expect = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
        for row in 0..2 {
            for col in 0..4 {
                assert!((out.get(row, col) - expect[col]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn upsample_rejects_downsampling() {
        let mask = Mask::ones(4, 4);
        assert!(matches!(
            bilinear_upsample(&mask, 3, 4),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn adjoint_is_transpose_of_resize() {
        // <up(m), g> must equal <m, up^T(g)> for the chain rule to be exact.
        let src = [0.2, 0.9, 0.4, 0.1, 0.6, 0.3];
        let up = bilinear_resize(2, 3, &src, 5, 7);
        let grad: Vec<f64> = (0..35).map(|i| (i as f64 * 0.37).sin()).collect();
        let down = bilinear_resize_adjoint(&grad, 5, 7, 2, 3);
        let lhs: f64 = up.iter().zip(&grad).map(|(a, b)| a * b).sum();
        let rhs: f64 = src.iter().zip(&down).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn noise_zero_std_is_zero() {
        let out = gaussian_noise(3, 3, 1, 0.0, 42).unwrap();
        assert!(out.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn noise_is_deterministic_per_seed() {
        let a = gaussian_noise(4, 4, 2, 0.2, 7).unwrap();
        let b = gaussian_noise(4, 4, 2, 0.2, 7).unwrap();
        assert_eq!(a.data(), b.data());
        let c = gaussian_noise(4, 4, 2, 0.2, 8).unwrap();
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn noise_moments_match_parameters() {
        let n = 1_000_000;
        let out = gaussian_noise(1000, 1000, 1, 0.2, 31).unwrap();
        let mean: f64 = out.data().iter().sum::<f64>() / n as f64;
        let var: f64 = out.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.001, "mean {mean}");
        assert!((var.sqrt() - 0.2).abs() < 0.005, "std {}", var.sqrt());
    }

    #[test]
    fn noise_rejects_negative_std() {
        assert!(matches!(
            gaussian_noise(2, 2, 1, -0.1, 0),
            Err(Error::Parameter(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn perturb_is_affine_in_the_mask(
            vals1 in proptest::collection::vec(0.0f64..=1.0, 6),
            vals2 in proptest::collection::vec(0.0f64..=1.0, 6),
            alpha in 0.0f64..=1.0,
        ) {
            let image = img(2, 3, &[0.9, 0.1, 0.5, 0.7, 0.3, 0.2]);
            let baseline = img(2, 3, &[0.0, 1.0, 0.25, 0.5, 0.75, 0.6]);
            let m1 = Mask::new(2, 3, vals1).unwrap();
            let m2 = Mask::new(2, 3, vals2).unwrap();
            let blend: Vec<f64> = m1.data().iter().zip(m2.data())
                .map(|(a, b)| alpha * a + (1.0 - alpha) * b)
                .collect();
            let mblend = Mask::new(2, 3, blend).unwrap();
            let lhs = perturb(&image, &baseline, &mblend).unwrap();
            let p1 = perturb(&image, &baseline, &m1).unwrap();
            let p2 = perturb(&image, &baseline, &m2).unwrap();
            for i in 0..lhs.data().len() {
                let rhs = alpha * p1.data()[i] + (1.0 - alpha) * p2.data()[i];
                prop_assert!((lhs.data()[i] - rhs).abs() < 1e-12);
            }
        }

        #[test]
        fn upsample_respects_input_bounds(
            vals in proptest::collection::vec(0.0f64..=1.0, 12),
            th in 4usize..12,
            tw in 3usize..11,
        ) {
            let mask = Mask::new(4, 3, vals).unwrap();
            let lo = mask.data().iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = mask.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let out = bilinear_upsample(&mask, th, tw).unwrap();
            for v in out.data() {
                prop_assert!(*v >= lo - 1e-12 && *v <= hi + 1e-12);
            }
        }

        #[test]
        fn blur_preserves_mean_of_constant_images(v in 0.0f64..=1.0, sigma in 0.5f64..4.0) {
            let image = ImageTensor::constant(6, 6, 1, v);
            let out = gaussian_blur(&image, sigma).unwrap();
            let mean = out.data().iter().sum::<f64>() / 36.0;
            prop_assert!((mean - v).abs() < 1e-6);
        }
    }
}
