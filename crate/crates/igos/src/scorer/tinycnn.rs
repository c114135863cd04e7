//! A small fixed-architecture CNN with a hand-written backward pass:
//! two 5×5 valid convolutions (8 then 16 channels), each followed by ReLU
//! and 2×2 max-pooling, a 64-unit ReLU hidden layer, and a linear output
//! layer with one logit per class.
//!
//! Weights are stored as f32 (matching the on-disk format) while all
//! arithmetic runs in f64, so save/load round-trips are exact and gradient
//! checks are not limited by single precision.
//!
//! The network is piecewise affine in its input. ReLU uses subgradient 0 at
//! zero; max-pool ties resolve to the first maximal element in raster order.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imageops::ImageTensor;

use super::{check_input_shape, class_out_of_range, Scorer, ScorerOutput};

pub(crate) const CONV1_OUT: usize = 8;
pub(crate) const CONV2_OUT: usize = 16;
pub(crate) const KERNEL: usize = 5;
pub(crate) const HIDDEN: usize = 64;

/// All trainable parameters plus the input/output geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyCnnWeights {
    pub(crate) input_height: usize,
    pub(crate) input_width: usize,
    pub(crate) input_channels: usize,
    pub(crate) num_classes: usize,
    pub(crate) conv1_w: Vec<f32>,
    pub(crate) conv1_b: Vec<f32>,
    pub(crate) conv2_w: Vec<f32>,
    pub(crate) conv2_b: Vec<f32>,
    pub(crate) fc1_w: Vec<f32>,
    pub(crate) fc1_b: Vec<f32>,
    pub(crate) fc2_w: Vec<f32>,
    pub(crate) fc2_b: Vec<f32>,
}

/// Spatial sizes of every intermediate activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Dims {
    pub c1h: usize,
    pub c1w: usize,
    pub p1h: usize,
    pub p1w: usize,
    pub c2h: usize,
    pub c2w: usize,
    pub p2h: usize,
    pub p2w: usize,
    pub flat: usize,
}

impl Dims {
    fn for_input(h: usize, w: usize) -> Result<Dims> {
        // Two valid 5x5 convolutions with 2x2 floor pooling need at least
        // a 16x16 input.
        let conv = |n: usize| n.checked_sub(KERNEL - 1);
        let (c1h, c1w) = match (conv(h), conv(w)) {
            (Some(a), Some(b)) if a >= 2 && b >= 2 => (a, b),
            _ => {
                return Err(Error::Parameter(format!(
                    "input {h}x{w} too small for the fixed architecture (min 16x16)"
                )))
            }
        };
        let (p1h, p1w) = (c1h / 2, c1w / 2);
        let (c2h, c2w) = match (conv(p1h), conv(p1w)) {
            (Some(a), Some(b)) if a >= 2 && b >= 2 => (a, b),
            _ => {
                return Err(Error::Parameter(format!(
                    "input {h}x{w} too small for the fixed architecture (min 16x16)"
                )))
            }
        };
        let (p2h, p2w) = (c2h / 2, c2w / 2);
        Ok(Dims {
            c1h,
            c1w,
            p1h,
            p1w,
            c2h,
            c2w,
            p2h,
            p2w,
            flat: p2h * p2w * CONV2_OUT,
        })
    }
}

impl TinyCnnWeights {
    /// Deterministic fan-in-scaled uniform initialization.
    pub fn init(
        input_height: usize,
        input_width: usize,
        input_channels: usize,
        num_classes: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init_with_rng(
            input_height,
            input_width,
            input_channels,
            num_classes,
            &mut rng,
        )
    }

    pub(crate) fn init_with_rng(
        input_height: usize,
        input_width: usize,
        input_channels: usize,
        num_classes: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if input_channels == 0 || num_classes == 0 {
            return Err(Error::Parameter(
                "channels and class count must be positive".into(),
            ));
        }
        let dims = Dims::for_input(input_height, input_width)?;
        let mut uniform = |n: usize, fan_in: usize| -> Vec<f32> {
            let limit = (6.0 / fan_in as f64).sqrt();
            (0..n)
                .map(|_| (rng.random_range(-limit..limit)) as f32)
                .collect()
        };
        let k2 = KERNEL * KERNEL;
        Ok(Self {
            input_height,
            input_width,
            input_channels,
            num_classes,
            conv1_w: uniform(CONV1_OUT * input_channels * k2, input_channels * k2),
            conv1_b: vec![0.0; CONV1_OUT],
            conv2_w: uniform(CONV2_OUT * CONV1_OUT * k2, CONV1_OUT * k2),
            conv2_b: vec![0.0; CONV2_OUT],
            fc1_w: uniform(HIDDEN * dims.flat, dims.flat),
            fc1_b: vec![0.0; HIDDEN],
            fc2_w: uniform(num_classes * HIDDEN, HIDDEN),
            fc2_b: vec![0.0; num_classes],
        })
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        (self.input_height, self.input_width, self.input_channels)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Validate that every buffer matches the declared geometry.
    pub(crate) fn validate(&self) -> Result<Dims> {
        if self.input_channels == 0 || self.num_classes == 0 {
            return Err(Error::Parameter(
                "channels and class count must be positive".into(),
            ));
        }
        let dims = Dims::for_input(self.input_height, self.input_width)?;
        let k2 = KERNEL * KERNEL;
        let checks = [
            ("conv1 weights", self.conv1_w.len(), CONV1_OUT * self.input_channels * k2),
            ("conv1 bias", self.conv1_b.len(), CONV1_OUT),
            ("conv2 weights", self.conv2_w.len(), CONV2_OUT * CONV1_OUT * k2),
            ("conv2 bias", self.conv2_b.len(), CONV2_OUT),
            ("fc1 weights", self.fc1_w.len(), HIDDEN * dims.flat),
            ("fc1 bias", self.fc1_b.len(), HIDDEN),
            ("fc2 weights", self.fc2_w.len(), self.num_classes * HIDDEN),
            ("fc2 bias", self.fc2_b.len(), self.num_classes),
        ];
        for (what, got, want) in checks {
            if got != want {
                return Err(Error::Shape(format!("{what}: {got} values, expected {want}")));
            }
        }
        let finite = self
            .conv1_w
            .iter()
            .chain(&self.conv1_b)
            .chain(&self.conv2_w)
            .chain(&self.conv2_b)
            .chain(&self.fc1_w)
            .chain(&self.fc1_b)
            .chain(&self.fc2_w)
            .chain(&self.fc2_b)
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Numeric("weights contain non-finite values".into()));
        }
        Ok(dims)
    }

    pub(crate) fn buffers(&self) -> [&[f32]; 8] {
        [
            &self.conv1_w,
            &self.conv1_b,
            &self.conv2_w,
            &self.conv2_b,
            &self.fc1_w,
            &self.fc1_b,
            &self.fc2_w,
            &self.fc2_b,
        ]
    }

    pub(crate) fn buffers_mut(&mut self) -> [&mut Vec<f32>; 8] {
        [
            &mut self.conv1_w,
            &mut self.conv1_b,
            &mut self.conv2_w,
            &mut self.conv2_b,
            &mut self.fc1_w,
            &mut self.fc1_b,
            &mut self.fc2_w,
            &mut self.fc2_b,
        ]
    }
}

/// Every intermediate value of one forward pass, kept for backprop.
pub(crate) struct ForwardPass {
    pub input: Vec<f64>,
    pub z1: Vec<f64>,
    pub p1: Vec<f64>,
    pub idx1: Vec<usize>,
    pub z2: Vec<f64>,
    pub p2: Vec<f64>,
    pub idx2: Vec<usize>,
    pub z3: Vec<f64>,
    pub a3: Vec<f64>,
    pub logits: Vec<f64>,
}

/// Per-parameter gradients in the same layout as the weight buffers.
pub(crate) struct WeightGradients {
    pub conv1_w: Vec<f64>,
    pub conv1_b: Vec<f64>,
    pub conv2_w: Vec<f64>,
    pub conv2_b: Vec<f64>,
    pub fc1_w: Vec<f64>,
    pub fc1_b: Vec<f64>,
    pub fc2_w: Vec<f64>,
    pub fc2_b: Vec<f64>,
}

impl WeightGradients {
    fn zeros(w: &TinyCnnWeights) -> Self {
        Self {
            conv1_w: vec![0.0; w.conv1_w.len()],
            conv1_b: vec![0.0; w.conv1_b.len()],
            conv2_w: vec![0.0; w.conv2_w.len()],
            conv2_b: vec![0.0; w.conv2_b.len()],
            fc1_w: vec![0.0; w.fc1_w.len()],
            fc1_b: vec![0.0; w.fc1_b.len()],
            fc2_w: vec![0.0; w.fc2_w.len()],
            fc2_b: vec![0.0; w.fc2_b.len()],
        }
    }

    pub(crate) fn buffers(&self) -> [&[f64]; 8] {
        [
            &self.conv1_w,
            &self.conv1_b,
            &self.conv2_w,
            &self.conv2_b,
            &self.fc1_w,
            &self.fc1_b,
            &self.fc2_w,
            &self.fc2_b,
        ]
    }
}

/// Valid 5×5 convolution, channel-last activations.
fn conv_forward(
    input: &[f64],
    ih: usize,
    iw: usize,
    ic: usize,
    weights: &[f32],
    bias: &[f32],
    oc: usize,
) -> Vec<f64> {
    let oh = ih - (KERNEL - 1);
    let ow = iw - (KERNEL - 1);
    let mut out = vec![0.0; oh * ow * oc];
    for y in 0..oh {
        for x in 0..ow {
            for o in 0..oc {
                let mut acc = bias[o] as f64;
                for i in 0..ic {
                    let wbase = ((o * ic + i) * KERNEL) * KERNEL;
                    for ky in 0..KERNEL {
                        let row = ((y + ky) * iw + x) * ic + i;
                        for kx in 0..KERNEL {
                            acc += weights[wbase + ky * KERNEL + kx] as f64
                                * input[row + kx * ic];
                        }
                    }
                }
                out[(y * ow + x) * oc + o] = acc;
            }
        }
    }
    out
}

fn conv_backward_input(
    dout: &[f64],
    oh: usize,
    ow: usize,
    oc: usize,
    weights: &[f32],
    ih: usize,
    iw: usize,
    ic: usize,
) -> Vec<f64> {
    let mut din = vec![0.0; ih * iw * ic];
    for y in 0..oh {
        for x in 0..ow {
            for o in 0..oc {
                let g = dout[(y * ow + x) * oc + o];
                if g == 0.0 {
                    continue;
                }
                for i in 0..ic {
                    let wbase = ((o * ic + i) * KERNEL) * KERNEL;
                    for ky in 0..KERNEL {
                        let row = ((y + ky) * iw + x) * ic + i;
                        for kx in 0..KERNEL {
                            din[row + kx * ic] += g * weights[wbase + ky * KERNEL + kx] as f64;
                        }
                    }
                }
            }
        }
    }
    din
}

fn conv_backward_weights(
    dout: &[f64],
    oh: usize,
    ow: usize,
    oc: usize,
    input: &[f64],
    iw: usize,
    ic: usize,
    dw: &mut [f64],
    db: &mut [f64],
) {
    for y in 0..oh {
        for x in 0..ow {
            for o in 0..oc {
                let g = dout[(y * ow + x) * oc + o];
                if g == 0.0 {
                    continue;
                }
                db[o] += g;
                for i in 0..ic {
                    let wbase = ((o * ic + i) * KERNEL) * KERNEL;
                    for ky in 0..KERNEL {
                        let row = ((y + ky) * iw + x) * ic + i;
                        for kx in 0..KERNEL {
                            dw[wbase + ky * KERNEL + kx] += g * input[row + kx * ic];
                        }
                    }
                }
            }
        }
    }
}

/// 2×2 max-pool with ReLU fused in front (max(0, z)): records, per output
/// cell, the flat index of the winning pre-activation, or usize::MAX when
/// the whole window is non-positive and the output is the ReLU zero.
fn relu_pool_forward(
    z: &[f64],
    ih: usize,
    iw: usize,
    c: usize,
) -> (Vec<f64>, Vec<usize>, usize, usize) {
    let oh = ih / 2;
    let ow = iw / 2;
    let mut out = vec![0.0; oh * ow * c];
    let mut idx = vec![usize::MAX; oh * ow * c];
    for y in 0..oh {
        for x in 0..ow {
            for ch in 0..c {
                let mut best = f64::NEG_INFINITY;
                let mut best_i = usize::MAX;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let i = ((2 * y + dy) * iw + (2 * x + dx)) * c + ch;
                        if z[i] > best {
                            best = z[i];
                            best_i = i;
                        }
                    }
                }
                let o = (y * ow + x) * c + ch;
                if best > 0.0 {
                    out[o] = best;
                    idx[o] = best_i;
                }
            }
        }
    }
    (out, idx, oh, ow)
}

fn relu_pool_backward(dout: &[f64], idx: &[usize], input_len: usize) -> Vec<f64> {
    let mut din = vec![0.0; input_len];
    for (g, &i) in dout.iter().zip(idx) {
        if i != usize::MAX {
            din[i] += g;
        }
    }
    din
}

/// The CNN with its validated geometry.
pub struct TinyCnn {
    weights: TinyCnnWeights,
    dims: Dims,
}

impl TinyCnn {
    pub fn new(weights: TinyCnnWeights) -> Result<Self> {
        let dims = weights.validate()?;
        Ok(Self { weights, dims })
    }

    pub fn weights(&self) -> &TinyCnnWeights {
        &self.weights
    }

    pub fn into_weights(self) -> TinyCnnWeights {
        self.weights
    }

    pub(crate) fn weights_mut(&mut self) -> &mut TinyCnnWeights {
        &mut self.weights
    }

    pub(crate) fn forward(&self, image: &ImageTensor) -> ForwardPass {
        let w = &self.weights;
        let d = self.dims;
        let input = image.data().to_vec();
        let z1 = conv_forward(
            &input,
            w.input_height,
            w.input_width,
            w.input_channels,
            &w.conv1_w,
            &w.conv1_b,
            CONV1_OUT,
        );
        let (p1, idx1, _, _) = relu_pool_forward(&z1, d.c1h, d.c1w, CONV1_OUT);
        let z2 = conv_forward(&p1, d.p1h, d.p1w, CONV1_OUT, &w.conv2_w, &w.conv2_b, CONV2_OUT);
        let (p2, idx2, _, _) = relu_pool_forward(&z2, d.c2h, d.c2w, CONV2_OUT);
        let mut z3 = vec![0.0; HIDDEN];
        for h in 0..HIDDEN {
            let mut acc = w.fc1_b[h] as f64;
            let row = h * d.flat;
            for i in 0..d.flat {
                acc += w.fc1_w[row + i] as f64 * p2[i];
            }
            z3[h] = acc;
        }
        let a3: Vec<f64> = z3.iter().map(|v| v.max(0.0)).collect();
        let mut logits = vec![0.0; w.num_classes];
        for k in 0..w.num_classes {
            let mut acc = w.fc2_b[k] as f64;
            let row = k * HIDDEN;
            for h in 0..HIDDEN {
                acc += w.fc2_w[row + h] as f64 * a3[h];
            }
            logits[k] = acc;
        }
        ForwardPass {
            input,
            z1,
            p1,
            idx1,
            z2,
            p2,
            idx2,
            z3,
            a3,
            logits,
        }
    }

    /// Backpropagate an arbitrary logit cotangent down to the input, and
    /// optionally into parameter gradients.
    pub(crate) fn backward(
        &self,
        pass: &ForwardPass,
        dlogits: &[f64],
        mut weight_grads: Option<&mut WeightGradients>,
    ) -> Vec<f64> {
        let w = &self.weights;
        let d = self.dims;

        let mut da3 = vec![0.0; HIDDEN];
        for (k, &g) in dlogits.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let row = k * HIDDEN;
            for h in 0..HIDDEN {
                da3[h] += g * w.fc2_w[row + h] as f64;
            }
        }
        if let Some(grads) = weight_grads.as_deref_mut() {
            for (k, &g) in dlogits.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                grads.fc2_b[k] += g;
                let row = k * HIDDEN;
                for h in 0..HIDDEN {
                    grads.fc2_w[row + h] += g * pass.a3[h];
                }
            }
        }

        let dz3: Vec<f64> = da3
            .iter()
            .zip(&pass.z3)
            .map(|(g, z)| if *z > 0.0 { *g } else { 0.0 })
            .collect();

        let mut dp2 = vec![0.0; d.flat];
        for (h, &g) in dz3.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let row = h * d.flat;
            for i in 0..d.flat {
                dp2[i] += g * w.fc1_w[row + i] as f64;
            }
        }
        if let Some(grads) = weight_grads.as_deref_mut() {
            for (h, &g) in dz3.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                grads.fc1_b[h] += g;
                let row = h * d.flat;
                for i in 0..d.flat {
                    grads.fc1_w[row + i] += g * pass.p2[i];
                }
            }
        }

        let dz2 = relu_pool_backward(&dp2, &pass.idx2, pass.z2.len());
        if let Some(grads) = weight_grads.as_deref_mut() {
            conv_backward_weights(
                &dz2,
                d.c2h,
                d.c2w,
                CONV2_OUT,
                &pass.p1,
                d.p1w,
                CONV1_OUT,
                &mut grads.conv2_w,
                &mut grads.conv2_b,
            );
        }
        let dp1 = conv_backward_input(
            &dz2,
            d.c2h,
            d.c2w,
            CONV2_OUT,
            &w.conv2_w,
            d.p1h,
            d.p1w,
            CONV1_OUT,
        );

        let dz1 = relu_pool_backward(&dp1, &pass.idx1, pass.z1.len());
        if let Some(grads) = weight_grads.as_deref_mut() {
            conv_backward_weights(
                &dz1,
                d.c1h,
                d.c1w,
                CONV1_OUT,
                &pass.input,
                w.input_width,
                w.input_channels,
                &mut grads.conv1_w,
                &mut grads.conv1_b,
            );
        }
        conv_backward_input(
            &dz1,
            d.c1h,
            d.c1w,
            CONV1_OUT,
            &w.conv1_w,
            w.input_height,
            w.input_width,
            w.input_channels,
        )
    }

    pub(crate) fn new_weight_gradients(&self) -> WeightGradients {
        WeightGradients::zeros(&self.weights)
    }

    /// Hash of the active linear piece: ReLU on/off bits plus pooling argmax
    /// choices. Two inputs on the same piece hash identically, so comparing
    /// signatures at x±ε detects kink crossings for finite-difference tests.
    pub fn activation_signature(&self, image: &ImageTensor) -> Result<u64> {
        check_input_shape(self, image)?;
        let pass = self.forward(image);
        let mut hash: u64 = 0xcbf29ce484222325;
        let mut feed = |byte: u64| {
            hash ^= byte;
            hash = hash.wrapping_mul(0x100000001b3);
        };
        for &i in pass.idx1.iter().chain(&pass.idx2) {
            feed(i as u64);
        }
        for z in &pass.z3 {
            feed((*z > 0.0) as u64);
        }
        Ok(hash)
    }
}

impl Scorer for TinyCnn {
    fn input_shape(&self) -> (usize, usize, usize) {
        self.weights.input_shape()
    }

    fn num_classes(&self) -> usize {
        self.weights.num_classes
    }

    fn logits(&self, image: &ImageTensor) -> Result<Vec<f64>> {
        check_input_shape(self, image)?;
        Ok(self.forward(image).logits)
    }

    fn score_with_gradient(
        &self,
        image: &ImageTensor,
        class_index: usize,
    ) -> Result<ScorerOutput> {
        check_input_shape(self, image)?;
        if class_index >= self.weights.num_classes {
            return Err(class_out_of_range(class_index, self.weights.num_classes));
        }
        let pass = self.forward(image);
        let mut dlogits = vec![0.0; self.weights.num_classes];
        dlogits[class_index] = 1.0;
        let grad = self.backward(&pass, &dlogits, None);
        let (h, w, c) = self.input_shape();
        let score = pass.logits[class_index];
        if !score.is_finite() {
            return Err(Error::Numeric("non-finite logit".into()));
        }
        Ok(ScorerOutput {
            score,
            gradient: ImageTensor::new(h, w, c, grad)?,
        })
    }
}

/// Outcome of a kink-aware finite-difference check of the backward pass.
#[derive(Debug, Clone, Copy)]
pub struct GradientCheck {
    pub max_relative_error: f64,
    pub checked: usize,
    pub excluded: usize,
}

/// Compare the analytic input-gradient against central differences,
/// excluding coordinates whose ±ε probes land on different linear pieces.
pub fn kink_aware_gradient_check(
    cnn: &TinyCnn,
    image: &ImageTensor,
    class_index: usize,
    epsilon: f64,
) -> Result<GradientCheck> {
    if !(epsilon > 0.0) {
        return Err(Error::Parameter(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let analytic = cnn.score_with_gradient(image, class_index)?.gradient;
    let scale_floor = 1e-6;
    let mut probe = image.clone();
    let mut max_rel = 0.0f64;
    let mut checked = 0usize;
    let mut excluded = 0usize;
    for i in 0..image.data().len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + epsilon;
        let sig_plus = cnn.activation_signature(&probe)?;
        let plus = cnn.score(&probe, class_index)?;
        probe.data_mut()[i] = orig - epsilon;
        let sig_minus = cnn.activation_signature(&probe)?;
        let minus = cnn.score(&probe, class_index)?;
        probe.data_mut()[i] = orig;
        if sig_plus != sig_minus {
            excluded += 1;
            continue;
        }
        let fd = (plus - minus) / (2.0 * epsilon);
        let a = analytic.data()[i];
        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(scale_floor);
        max_rel = max_rel.max(rel);
        checked += 1;
    }
    Ok(GradientCheck {
        max_relative_error: max_rel,
        checked,
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imageops::gaussian_noise;

    fn random_image(h: usize, w: usize, c: usize, seed: u64) -> ImageTensor {
        let noise = gaussian_noise(h, w, c, 0.5, seed).unwrap();
        let data = noise.data().iter().map(|v| 0.5 + v).collect();
        ImageTensor::new(h, w, c, data).unwrap()
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = TinyCnnWeights::init(16, 16, 1, 3, 11).unwrap();
        let b = TinyCnnWeights::init(16, 16, 1, 3, 11).unwrap();
        assert_eq!(a, b);
        let c = TinyCnnWeights::init(16, 16, 1, 3, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_inputs_below_minimum_size() {
        assert!(TinyCnnWeights::init(8, 8, 1, 2, 0).is_err());
        assert!(TinyCnnWeights::init(15, 16, 1, 2, 0).is_err());
        assert!(TinyCnnWeights::init(16, 16, 1, 2, 0).is_ok());
    }

    #[test]
    fn forward_is_deterministic() {
        let cnn = TinyCnn::new(TinyCnnWeights::init(16, 16, 1, 4, 5).unwrap()).unwrap();
        let image = random_image(16, 16, 1, 99);
        let a = cnn.logits(&image).unwrap();
        let b = cnn.logits(&image).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
    }

    #[test]
    fn rejects_wrong_shape_and_class() {
        let cnn = TinyCnn::new(TinyCnnWeights::init(16, 16, 1, 4, 5).unwrap()).unwrap();
        let wrong = ImageTensor::zeros(18, 16, 1);
        assert!(cnn.logits(&wrong).is_err());
        let image = ImageTensor::zeros(16, 16, 1);
        assert!(cnn.score_with_gradient(&image, 4).is_err());
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let cnn = TinyCnn::new(TinyCnnWeights::init(16, 16, 1, 3, 2).unwrap()).unwrap();
        for seed in 0..10u64 {
            let image = random_image(16, 16, 1, 1000 + seed);
            let class = (seed % 3) as usize;
            let check = kink_aware_gradient_check(&cnn, &image, class, 1e-4).unwrap();
            assert!(
                check.max_relative_error < 1e-4,
                "seed {seed}: rel err {} (checked {}, excluded {})",
                check.max_relative_error,
                check.checked,
                check.excluded
            );
            // A single near-zero hidden unit can disqualify many pixels at
            // once, but exclusion must never swallow most of the image.
            assert!(check.checked >= check.excluded);
        }
    }

    #[test]
    fn weight_gradients_match_finite_differences_on_a_probe() {
        // Spot-check d logit / d w for a few parameters in each buffer.
        let cnn = TinyCnn::new(TinyCnnWeights::init(16, 16, 1, 2, 7).unwrap()).unwrap();
        let image = random_image(16, 16, 1, 3);
        let pass = cnn.forward(&image);
        let dlogits = [1.0, 0.0];
        let mut grads = cnn.new_weight_gradients();
        cnn.backward(&pass, &dlogits, Some(&mut grads));

        let eps = 1e-3;
        for buf_idx in 0..8 {
            let param_count = cnn.weights().buffers()[buf_idx].len();
            for &p in &[0usize, param_count / 2, param_count - 1] {
                let mut plus = cnn.weights().clone();
                plus.buffers_mut()[buf_idx][p] += eps as f32;
                let mut minus = cnn.weights().clone();
                minus.buffers_mut()[buf_idx][p] -= eps as f32;
                let fp = TinyCnn::new(plus).unwrap().logits(&image).unwrap()[0];
                let fm = TinyCnn::new(minus).unwrap().logits(&image).unwrap()[0];
                let fd = (fp - fm) / (2.0 * eps);
                let analytic = grads.buffers()[buf_idx][p];
                assert!(
                    (fd - analytic).abs() < 1e-3 * analytic.abs().max(1.0),
                    "buffer {buf_idx} param {p}: fd {fd} vs analytic {analytic}"
                );
            }
        }
    }
}
