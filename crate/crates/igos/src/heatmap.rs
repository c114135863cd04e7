//! Per-cell importance maps. A heatmap is what every explanation method
//! ultimately produces and what the evaluation metrics consume.

use crate::error::{Error, Result};
use crate::imageops::bilinear_resize;

/// Nonnegative importance values on an h×w grid. Metric consumers rank the
/// raw cells; rendering max-normalizes to [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Heatmap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Parameter(
                "heatmap dimensions must be positive".into(),
            ));
        }
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "heatmap buffer has {} values, shape {}x{} needs {}",
                data.len(),
                height,
                width,
                height * width
            )));
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Numeric(
                "heatmap values must be finite and nonnegative".into(),
            ));
        }
        Ok(Self {
            height,
            width,
            data,
        })
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

    /// Scale so the maximum becomes 1; an all-zero map stays zero.
    pub fn max_normalized(&self) -> Heatmap {
        let max = self.data.iter().cloned().fold(0.0f64, f64::max);
        if max == 0.0 {
            return self.clone();
        }
        Heatmap {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| v / max).collect(),
        }
    }

    /// Bilinear resampling for display or pixel-level consumers such as the
    /// pointing game. Metric curves should keep the cell-resolution map.
    pub fn resampled(&self, target_h: usize, target_w: usize) -> Result<Heatmap> {
        if target_h == 0 || target_w == 0 {
            return Err(Error::Parameter("target dimensions must be positive".into()));
        }
        let data = bilinear_resize(self.height, self.width, &self.data, target_h, target_w);
        Ok(Heatmap {
            height: target_h,
            width: target_w,
            data,
        })
    }

    /// Index of the most salient cell, raster-order tie-break.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0usize;
        for (i, v) in self.data.iter().enumerate() {
            if *v > self.data[best] {
                best = i;
            }
        }
        (best / self.width, best % self.width)
    }
}
