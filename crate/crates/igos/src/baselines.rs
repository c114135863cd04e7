//! Reference heatmap methods used for comparison: plain gradient saliency,
//! gradient×input, one-step integrated gradients, and mask optimization by
//! plain gradient descent with a fixed step size.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::heatmap::Heatmap;
use crate::imageops::{bilinear_resize, ImageTensor, Mask};
use crate::optimizer::{
    data_gradient_at, objective_terms, reg_gradient, total_gradient, ObjectiveTerms,
    OptimizationTrace, TraceRecord, CONVERGENCE_TOL,
};
use crate::scorer::{probability, Scorer};

/// How per-channel attributions collapse into one value per pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ChannelReduction {
    /// Maximum of absolute values across channels.
    MaxAbs,
    /// Sum of absolute values across channels.
    SumAbs,
}

impl Default for ChannelReduction {
    fn default() -> Self {
        ChannelReduction::MaxAbs
    }
}

fn reduce_channels(values: &ImageTensor, reduction: ChannelReduction) -> Vec<f64> {
    let (h, w, ch) = values.shape();
    let mut out = vec![0.0; h * w];
    for p in 0..h * w {
        let mut acc = 0.0f64;
        for c in 0..ch {
            let v = values.data()[p * ch + c].abs();
            acc = match reduction {
                ChannelReduction::MaxAbs => acc.max(v),
                ChannelReduction::SumAbs => acc + v,
            };
        }
        out[p] = acc;
    }
    out
}

/// Saliency from the raw input-gradient: |∂f_c/∂I| reduced over channels.
pub fn vanilla_gradient(
    scorer: &dyn Scorer,
    image: &ImageTensor,
    class_index: usize,
    reduction: ChannelReduction,
) -> Result<Heatmap> {
    let out = scorer.score_with_gradient(image, class_index)?;
    Heatmap::new(
        image.height(),
        image.width(),
        reduce_channels(&out.gradient, reduction),
    )
}

/// |∂f_c/∂I ⊙ I| reduced over channels.
pub fn gradient_times_input(
    scorer: &dyn Scorer,
    image: &ImageTensor,
    class_index: usize,
    reduction: ChannelReduction,
) -> Result<Heatmap> {
    let out = scorer.score_with_gradient(image, class_index)?;
    let (h, w, c) = image.shape();
    let product: Vec<f64> = out
        .gradient
        .data()
        .iter()
        .zip(image.data())
        .map(|(g, x)| g * x)
        .collect();
    let product = ImageTensor::new(h, w, c, product)?;
    Heatmap::new(h, w, reduce_channels(&product, reduction))
}

/// Signed per-channel one-step integrated-gradient attributions:
/// (I − Ĩ) ⊙ (1/S) Σ_s ∇f_c(Ĩ + (s/S)(I − Ĩ)).
pub fn one_step_ig_attributions(
    scorer: &dyn Scorer,
    image: &ImageTensor,
    baseline: &ImageTensor,
    class_index: usize,
    steps: usize,
) -> Result<ImageTensor> {
    if steps < 1 {
        return Err(Error::Parameter("steps must be at least 1".into()));
    }
    if image.shape() != baseline.shape() {
        return Err(Error::Shape(format!(
            "image {:?} and baseline {:?} differ",
            image.shape(),
            baseline.shape()
        )));
    }
    let (h, w, c) = image.shape();
    let n = image.data().len();
    let mut mean_grad = vec![0.0; n];
    let mut point = vec![0.0; n];
    for s in 1..=steps {
        let t = s as f64 / steps as f64;
        for i in 0..n {
            point[i] = baseline.data()[i] + t * (image.data()[i] - baseline.data()[i]);
        }
        let probe = ImageTensor::new(h, w, c, point.clone())?;
        let out = scorer.score_with_gradient(&probe, class_index)?;
        for (acc, g) in mean_grad.iter_mut().zip(out.gradient.data()) {
            *acc += g;
        }
    }
    let attributions: Vec<f64> = (0..n)
        .map(|i| (image.data()[i] - baseline.data()[i]) * mean_grad[i] / steps as f64)
        .collect();
    ImageTensor::new(h, w, c, attributions)
}

/// One-step integrated gradients as an importance map.
pub fn one_step_integrated_gradients(
    scorer: &dyn Scorer,
    image: &ImageTensor,
    baseline: &ImageTensor,
    class_index: usize,
    steps: usize,
    reduction: ChannelReduction,
) -> Result<Heatmap> {
    let attributions = one_step_ig_attributions(scorer, image, baseline, class_index, steps)?;
    Heatmap::new(
        image.height(),
        image.width(),
        reduce_channels(&attributions, reduction),
    )
}

/// Plain-gradient mask optimization: same objective and projection as the
/// integrated-gradient optimizer, but the data direction is the single-point
/// gradient and the step size is fixed.
#[derive(Debug, Clone, Serialize)]
pub struct MaskGdConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub step_size: f64,
    pub max_iters: usize,
    pub mask_height: usize,
    pub mask_width: usize,
    pub use_probability: bool,
    pub baseline_confidence_threshold: f64,
}

impl Default for MaskGdConfig {
    fn default() -> Self {
        Self {
            lambda1: 0.01,
            lambda2: 0.2,
            step_size: 0.1,
            max_iters: 500,
            mask_height: 28,
            mask_width: 28,
            use_probability: false,
            baseline_confidence_threshold: 0.01,
        }
    }
}

impl MaskGdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::Parameter(format!(
                "step_size must be positive, got {}",
                self.step_size
            )));
        }
        if self.mask_height == 0 || self.mask_width == 0 {
            return Err(Error::Parameter("mask dimensions must be positive".into()));
        }
        if !(self.lambda1.is_finite() && self.lambda2.is_finite()) {
            return Err(Error::Parameter("lambda weights must be finite".into()));
        }
        Ok(())
    }
}

pub fn mask_gd(
    scorer: &dyn Scorer,
    image: &ImageTensor,
    baseline: &ImageTensor,
    class_index: usize,
    config: &MaskGdConfig,
) -> Result<(Mask, OptimizationTrace)> {
    config.validate()?;
    if image.shape() != baseline.shape() || scorer.input_shape() != image.shape() {
        return Err(Error::Shape(format!(
            "scorer {:?}, image {:?} and baseline {:?} must agree",
            scorer.input_shape(),
            image.shape(),
            baseline.shape()
        )));
    }
    if config.mask_height > image.height() || config.mask_width > image.width() {
        return Err(Error::Shape(format!(
            "mask {}x{} exceeds image resolution {}x{}",
            config.mask_height,
            config.mask_width,
            image.height(),
            image.width()
        )));
    }
    if class_index >= scorer.num_classes() {
        return Err(Error::Parameter(format!(
            "class index {class_index} out of range for {} classes",
            scorer.num_classes()
        )));
    }
    let baseline_probability = probability(scorer, baseline, class_index)?;
    let baseline_confidence_warning = baseline_probability > config.baseline_confidence_threshold;

    let (h, w, _) = image.shape();
    let mut mask = Mask::ones(config.mask_height, config.mask_width);
    let mut records = Vec::new();
    let mut converged = false;

    for iteration in 0..config.max_iters {
        let up = bilinear_resize(mask.height(), mask.width(), mask.data(), h, w);
        let data_grad = data_gradient_at(
            scorer,
            image,
            baseline,
            &up,
            mask.height(),
            mask.width(),
            class_index,
            config.use_probability,
        )?;
        let reg = reg_gradient(&mask, config.lambda1, config.lambda2);
        let tg = total_gradient(&data_grad, &reg);
        let updated: Vec<f64> = mask
            .data()
            .iter()
            .zip(&tg)
            .map(|(m, g)| m - config.step_size * g)
            .collect();
        let next = Mask::project(mask.height(), mask.width(), &updated);
        let terms = mask_gd_objective(scorer, image, baseline, &next, class_index, config)?;
        records.push(TraceRecord {
            iteration,
            objective: terms,
            alpha: config.step_size,
            line_search_trials: 0,
        });
        let delta = mask
            .data()
            .iter()
            .zip(next.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        mask = next;
        if delta < CONVERGENCE_TOL {
            converged = true;
            break;
        }
    }

    Ok((
        mask,
        OptimizationTrace {
            records,
            baseline_probability,
            baseline_confidence_warning,
            converged,
        },
    ))
}

/// The shared objective evaluated with this baseline's weights.
pub fn mask_gd_objective(
    scorer: &dyn Scorer,
    image: &ImageTensor,
    baseline: &ImageTensor,
    mask: &Mask,
    class_index: usize,
    config: &MaskGdConfig,
) -> Result<ObjectiveTerms> {
    objective_terms(
        scorer,
        image,
        baseline,
        mask,
        class_index,
        config.lambda1,
        config.lambda2,
        config.use_probability,
    )
}
