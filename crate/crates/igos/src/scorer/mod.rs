//! The differentiable black box being explained.
//!
//! A [`Scorer`] exposes class logits and exact input-gradients of a single
//! class logit. Three implementations live here: a small trainable CNN with
//! a hand-written backward pass ([`TinyCnn`]), an analytic quadratic scorer
//! for oracle tests ([`QuadraticScorer`]), and a finite-difference wrapper
//! ([`FiniteDifference`]) that swaps the analytic gradient for a numerical
//! one so the two can be compared.

mod quadratic;
mod tinycnn;
mod train;

pub use quadratic::{QuadraticScorer, QuadraticSpec};
pub use tinycnn::{kink_aware_gradient_check, GradientCheck, TinyCnn, TinyCnnWeights};
pub use train::{accuracy, cross_entropy_loss, train_tiny_cnn, Dataset};

pub(crate) use tinycnn::{CONV1_OUT, CONV2_OUT, HIDDEN, KERNEL};

use crate::error::{Error, Result};
use crate::imageops::ImageTensor;

/// Class score plus the gradient of that score with respect to the input.
#[derive(Debug, Clone)]
pub struct ScorerOutput {
    /// Pre-softmax logit of the requested class.
    pub score: f64,
    /// ∂score/∂input, shaped exactly like the input image.
    pub gradient: ImageTensor,
}

/// A differentiable classifier: full logits plus per-class input-gradients.
pub trait Scorer {
    /// Expected input shape (height, width, channels).
    fn input_shape(&self) -> (usize, usize, usize);

    fn num_classes(&self) -> usize;

    /// All class logits for one image.
    fn logits(&self, image: &ImageTensor) -> Result<Vec<f64>>;

    /// The logit of `class_index` together with its exact analytic gradient
    /// with respect to the input.
    fn score_with_gradient(&self, image: &ImageTensor, class_index: usize)
        -> Result<ScorerOutput>;

    /// Forward-only score of one class.
    fn score(&self, image: &ImageTensor, class_index: usize) -> Result<f64> {
        let logits = self.logits(image)?;
        logits
            .get(class_index)
            .copied()
            .ok_or_else(|| class_out_of_range(class_index, logits.len()))
    }
}

pub(crate) fn class_out_of_range(class_index: usize, classes: usize) -> Error {
    Error::Parameter(format!(
        "class index {class_index} out of range for {classes} classes"
    ))
}

pub(crate) fn check_input_shape(scorer: &dyn Scorer, image: &ImageTensor) -> Result<()> {
    if scorer.input_shape() != image.shape() {
        return Err(Error::Shape(format!(
            "scorer expects input {:?}, got {:?}",
            scorer.input_shape(),
            image.shape()
        )));
    }
    Ok(())
}

/// Numerically stable softmax: subtract the max before exponentiating.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    assert!(!logits.is_empty(), "softmax needs at least one logit");
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// Post-softmax probability of one class.
pub fn probability(scorer: &dyn Scorer, image: &ImageTensor, class_index: usize) -> Result<f64> {
    let logits = scorer.logits(image)?;
    if class_index >= logits.len() {
        return Err(class_out_of_range(class_index, logits.len()));
    }
    Ok(softmax(&logits)[class_index])
}

/// Post-softmax probability of one class plus its input-gradient, assembled
/// from per-class logit gradients: ∇p_c = p_c (∇z_c − Σ_j p_j ∇z_j).
pub fn probability_with_gradient(
    scorer: &dyn Scorer,
    image: &ImageTensor,
    class_index: usize,
) -> Result<ScorerOutput> {
    let logits = scorer.logits(image)?;
    if class_index >= logits.len() {
        return Err(class_out_of_range(class_index, logits.len()));
    }
    let probs = softmax(&logits);
    let n = image.data().len();
    let mut weighted = vec![0.0; n];
    let mut grad_c = vec![0.0; n];
    for (j, &pj) in probs.iter().enumerate() {
        let out = scorer.score_with_gradient(image, j)?;
        for (acc, g) in weighted.iter_mut().zip(out.gradient.data()) {
            *acc += pj * g;
        }
        if j == class_index {
            grad_c = out.gradient.data().to_vec();
        }
    }
    let pc = probs[class_index];
    let data: Vec<f64> = grad_c
        .iter()
        .zip(&weighted)
        .map(|(g, w)| pc * (g - w))
        .collect();
    let (h, w, c) = image.shape();
    Ok(ScorerOutput {
        score: pc,
        gradient: ImageTensor::new(h, w, c, data)?,
    })
}

/// Central-difference gradient estimate: (f(x+εe_i) − f(x−εe_i)) / 2ε.
pub fn finite_diff_gradient(
    scorer: &dyn Scorer,
    image: &ImageTensor,
    class_index: usize,
    epsilon: f64,
) -> Result<ImageTensor> {
    if !(epsilon > 0.0) {
        return Err(Error::Parameter(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let (h, w, c) = image.shape();
    let mut probe = image.clone();
    let mut grad = vec![0.0; image.data().len()];
    for i in 0..grad.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + epsilon;
        let plus = scorer.score(&probe, class_index)?;
        probe.data_mut()[i] = orig - epsilon;
        let minus = scorer.score(&probe, class_index)?;
        probe.data_mut()[i] = orig;
        grad[i] = (plus - minus) / (2.0 * epsilon);
    }
    ImageTensor::new(h, w, c, grad).map_err(|_| Error::Numeric("non-finite gradient".into()))
}

/// Wraps any scorer, replacing its analytic gradient with the central
/// finite-difference estimate. Used to cross-check backward passes.
pub struct FiniteDifference<S> {
    inner: S,
    epsilon: f64,
}

impl<S: Scorer> FiniteDifference<S> {
    pub fn new(inner: S, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::Parameter(format!(
                "epsilon must be positive, got {epsilon}"
            )));
        }
        Ok(Self { inner, epsilon })
    }

    pub fn inner(&self) -> &S {
        &self.inner
    }
}

impl<S: Scorer> Scorer for FiniteDifference<S> {
    fn input_shape(&self) -> (usize, usize, usize) {
        self.inner.input_shape()
    }

    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    fn logits(&self, image: &ImageTensor) -> Result<Vec<f64>> {
        self.inner.logits(image)
    }

    fn score_with_gradient(
        &self,
        image: &ImageTensor,
        class_index: usize,
    ) -> Result<ScorerOutput> {
        let score = self.inner.score(image, class_index)?;
        let gradient = finite_diff_gradient(&self.inner, image, class_index, self.epsilon)?;
        Ok(ScorerOutput { score, gradient })
    }
}
