//! Seeded synthetic shapes dataset.
//!
//! Ten classes on a smooth random background: class 0 is background only,
//! classes 1–9 add a bright 9×9 glyph at a random position. The glyph's
//! bounding box is recorded at generation time, which gives the pointing
//! game exact ground truth, and a heavily blurred copy of any glyph image
//! collapses back to a plain background, which gives the mask optimizer a
//! genuinely low-confidence baseline.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imageops::ImageTensor;
use crate::metrics::BBox;
use crate::scorer::Dataset;

pub const NUM_CLASSES: usize = 10;
pub const GLYPH: usize = 9;

/// Class subdirectory names; the numeric prefix keeps lexicographic order
/// aligned with the label indices.
pub const CLASS_NAMES: [&str; NUM_CLASSES] = [
    "0_background",
    "1_hbar",
    "2_vbar",
    "3_cross",
    "4_box",
    "5_disc",
    "6_diag",
    "7_tee",
    "8_ell",
    "9_dots",
];

/// One generated example: quantized pixels plus the glyph box (absent for
/// the background class).
#[derive(Debug, Clone)]
pub struct SynthSample {
    pub pixels: Vec<u8>,
    pub label: usize,
    pub bbox: Option<BBox>,
}

impl SynthSample {
    pub fn to_image(&self, size: usize) -> Result<ImageTensor> {
        let data = self.pixels.iter().map(|b| *b as f64 / 255.0).collect();
        ImageTensor::new(size, size, 1, data)
    }
}

fn glyph_pixel(label: usize, r: usize, c: usize) -> bool {
    let mid = (3..6).contains(&r);
    let cmid = (3..6).contains(&c);
    match label {
        1 => mid,
        2 => cmid,
        3 => mid || cmid,
        4 => r < 2 || r >= 7 || c < 2 || c >= 7,
        5 => {
            let dr = r as i64 - 4;
            let dc = c as i64 - 4;
            dr * dr + dc * dc <= 12
        }
        6 => (r as i64 - c as i64).abs() <= 1,
        7 => r < 2 || cmid,
        8 => c < 2 || r >= 7,
        9 => (r < 3 && c < 3) || (r >= 6 && c >= 6),
        _ => false,
    }
}

/// Generate `count` samples with labels cycling 0..10, deterministically
/// from the seed. `size` must fit the glyph with a margin and satisfy the
/// classifier's 16×16 minimum.
///
/// Besides the glyph, every image carries a few class-irrelevant distractor
/// marks. They give the background the kind of high-contrast structure that
/// one-step gradient attributions fire on, while carrying no label signal.
pub fn generate(size: usize, count: usize, seed: u64) -> Result<Vec<SynthSample>> {
    if size < 16 {
        return Err(Error::Parameter(format!(
            "synthetic image size must be at least 16, got {size}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(count);
    let center = (size as f64 - 1.0) / 2.0;
    for i in 0..count {
        let label = i % NUM_CLASSES;
        let base: f64 = rng.random_range(0.25..0.5);
        let slope_x: f64 = rng.random_range(-0.006..0.006);
        let slope_y: f64 = rng.random_range(-0.006..0.006);
        let mut values = vec![0.0f64; size * size];
        for y in 0..size {
            for x in 0..size {
                let speckle: f64 = rng.random_range(-0.06..0.06);
                values[y * size + x] =
                    base + slope_x * (x as f64 - center) + slope_y * (y as f64 - center) + speckle;
            }
        }
        let bbox = if label == 0 {
            None
        } else {
            let max_origin = size - GLYPH - 1;
            let y0 = rng.random_range(1..=max_origin);
            let x0 = rng.random_range(1..=max_origin);
            Some(BBox::new(x0, y0, x0 + GLYPH, y0 + GLYPH).expect("glyph box is non-degenerate"))
        };
        let marks = rng.random_range(2..=4);
        for _ in 0..marks {
            let my = rng.random_range(1..size - 4);
            let mx = rng.random_range(1..size - 4);
            let kind = rng.random_range(0..3u8);
            // Dark marks: strong contrast for gradient attributions, but
            // polarity keeps them apart from the bright class glyphs.
            let shade: f64 = rng.random_range(0.0..0.12);
            if let Some(b) = &bbox {
                // Keep the annotated box the only class evidence.
                if mx + 4 >= b.x_min && mx < b.x_max && my + 4 >= b.y_min && my < b.y_max {
                    continue;
                }
            }
            for d in 0..3usize {
                for e in 0..3usize {
                    let (dy, dx) = match kind {
                        0 => (d, e),     // dot
                        1 => (0, d + e), // horizontal dashes
                        _ => (d + e, 0), // vertical dashes
                    };
                    values[(my + dy) * size + (mx + dx)] = shade;
                }
            }
        }
        if let Some(b) = &bbox {
            // Moderate glyph contrast: the dark marks dominate |image −
            // baseline|, so evidence has to be found by what moves the
            // score, not by what sticks out.
            let intensity: f64 = rng.random_range(0.68..0.78);
            for r in 0..GLYPH {
                for c in 0..GLYPH {
                    if glyph_pixel(label, r, c) {
                        values[(b.y_min + r) * size + (b.x_min + c)] = intensity;
                    }
                }
            }
        }
        let pixels = values
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        samples.push(SynthSample {
            pixels,
            label,
            bbox,
        });
    }
    Ok(samples)
}

/// Bundle samples into a training dataset.
pub fn to_dataset(samples: &[SynthSample], size: usize) -> Result<Dataset> {
    let images = samples
        .iter()
        .map(|s| s.to_image(size))
        .collect::<Result<Vec<_>>>()?;
    let labels = samples.iter().map(|s| s.label).collect();
    Dataset::new(images, labels, NUM_CLASSES)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic_and_balanced() {
        let a = generate(28, 40, 5).unwrap();
        let b = generate(28, 40, 5).unwrap();
        assert_eq!(a.len(), 40);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.pixels, y.pixels);
            assert_eq!(x.label, y.label);
        }
        let mut counts = [0usize; NUM_CLASSES];
        for s in &a {
            counts[s.label] += 1;
        }
        assert!(counts.iter().all(|c| *c == 4));
    }

    #[test]
    fn bbox_present_exactly_for_glyph_classes() {
        let samples = generate(28, 20, 9).unwrap();
        for s in &samples {
            assert_eq!(s.bbox.is_none(), s.label == 0);
            if let Some(b) = &s.bbox {
                assert_eq!(b.x_max - b.x_min, GLYPH);
                assert!(b.x_max < 28 && b.y_max < 28);
            }
        }
    }

    #[test]
    fn glyph_region_is_brighter_than_background() {
        let samples = generate(28, 20, 3).unwrap();
        for s in samples.iter().filter(|s| s.label != 0) {
            let b = s.bbox.unwrap();
            let inside_max = (b.y_min..b.y_max)
                .flat_map(|y| (b.x_min..b.x_max).map(move |x| s.pixels[y * 28 + x]))
                .max()
                .unwrap();
            assert!(inside_max as f64 / 255.0 >= 0.85);
        }
    }

    #[test]
    fn rejects_undersized_images() {
        assert!(generate(12, 10, 0).is_err());
    }

    #[test]
    fn dataset_conversion_round_trips_pixels() {
        let samples = generate(28, 10, 1).unwrap();
        let dataset = to_dataset(&samples, 28).unwrap();
        assert_eq!(dataset.len(), 10);
        assert_eq!(dataset.num_classes(), NUM_CLASSES);
        assert_eq!(
            dataset.image(3).data()[50],
            samples[3].pixels[50] as f64 / 255.0
        );
    }
}
