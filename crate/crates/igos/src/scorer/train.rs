//! Deterministic mini-batch SGD with cross-entropy loss on the hand-written
//! backward pass.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imageops::ImageTensor;

use super::tinycnn::{TinyCnn, TinyCnnWeights};
use super::{softmax, Scorer};

const BATCH_SIZE: usize = 32;
/// Per-epoch multiplicative learning-rate decay.
const LR_DECAY: f64 = 0.9;

/// Labeled images with a declared class count.
#[derive(Debug, Clone)]
pub struct Dataset {
    images: Vec<ImageTensor>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(images: Vec<ImageTensor>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::Parameter(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|l| **l >= num_classes) {
            return Err(Error::Parameter(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        if let Some(first) = images.first() {
            let shape = first.shape();
            if images.iter().any(|img| img.shape() != shape) {
                return Err(Error::Shape("dataset images have mixed shapes".into()));
            }
        }
        Ok(Self {
            images,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn image(&self, i: usize) -> &ImageTensor {
        &self.images[i]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn image_shape(&self) -> Option<(usize, usize, usize)> {
        self.images.first().map(|img| img.shape())
    }
}

/// Train the CNN: seeded initialization, per-epoch reshuffles, mean-gradient
/// SGD updates with step-decayed learning rate. Identical inputs and seed
/// give bitwise-identical weights.
pub fn train_tiny_cnn(
    dataset: &Dataset,
    epochs: usize,
    learning_rate: f64,
    seed: u64,
) -> Result<TinyCnnWeights> {
    if dataset.is_empty() {
        return Err(Error::Parameter("cannot train on an empty dataset".into()));
    }
    let (h, w, c) = dataset.image_shape().expect("nonempty dataset");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = TinyCnnWeights::init_with_rng(h, w, c, dataset.num_classes(), &mut rng)?;
    let mut cnn = TinyCnn::new(weights)?;

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for epoch in 0..epochs {
        let lr = learning_rate * LR_DECAY.powi(epoch as i32);
        order.shuffle(&mut rng);
        for batch in order.chunks(BATCH_SIZE) {
            let mut grads = cnn.new_weight_gradients();
            for &i in batch {
                let pass = cnn.forward(dataset.image(i));
                let mut dlogits = softmax(&pass.logits);
                dlogits[dataset.label(i)] -= 1.0;
                cnn.backward(&pass, &dlogits, Some(&mut grads));
            }
            let scale = lr / batch.len() as f64;
            let weights = cnn.weights_mut();
            for (buf, grad) in weights.buffers_mut().into_iter().zip(grads.buffers()) {
                for (wv, g) in buf.iter_mut().zip(grad) {
                    *wv = (*wv as f64 - scale * g) as f32;
                }
            }
        }
    }
    let weights = cnn.into_weights();
    weights.validate()?;
    Ok(weights)
}

/// Fraction of examples whose arg-max logit equals the label.
pub fn accuracy(scorer: &dyn Scorer, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Parameter("cannot score an empty dataset".into()));
    }
    let mut hits = 0usize;
    for i in 0..dataset.len() {
        let logits = scorer.logits(dataset.image(i))?;
        let mut best = 0usize;
        for (k, v) in logits.iter().enumerate() {
            if *v > logits[best] {
                best = k;
            }
        }
        if best == dataset.label(i) {
            hits += 1;
        }
    }
    Ok(hits as f64 / dataset.len() as f64)
}

/// Mean cross-entropy −ln p(label) over the dataset.
pub fn cross_entropy_loss(scorer: &dyn Scorer, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Parameter("cannot score an empty dataset".into()));
    }
    let mut total = 0.0;
    for i in 0..dataset.len() {
        let logits = scorer.logits(dataset.image(i))?;
        let probs = softmax(&logits);
        total += -(probs[dataset.label(i)].max(f64::MIN_POSITIVE)).ln();
    }
    Ok(total / dataset.len() as f64)
}
