//! Mask optimization with integrated-gradient descent directions.
//!
//! The objective over a mask M in [0,1]^{h×w} is
//!
//!   F_c(M) = f_c(Φ(I, up(M))) + λ₁‖1−M‖₁ + λ₂·TV(M)
//!
//! where Φ blends the image toward a low-confidence baseline and up(·) is
//! bilinear upsampling to image resolution. The descent direction replaces
//! the data-term gradient with integrated gradients accumulated along the
//! straight mask path from 0 to M, with fresh noise added to the image at
//! each path point. Step sizes come from a backtracking line search under a
//! revised Armijo condition that uses the total gradient in place of the
//! true gradient, always evaluated on the projected candidate.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::heatmap::Heatmap;
use crate::imageops::{
    bilinear_resize, bilinear_resize_adjoint, gaussian_noise_with_rng, ImageTensor, Mask,
};
use crate::scorer::{probability, probability_with_gradient, Scorer};

/// Iterates stop early once the mask moves less than this in max-norm.
pub const CONVERGENCE_TOL: f64 = 1e-4;

/// All knobs of the optimizer.
#[derive(Debug, Clone, Serialize)]
pub struct IGosConfig {
    /// Weight of the ‖1−M‖₁ deletion penalty.
    pub lambda1: f64,
    /// Weight of the total-variation smoothness penalty.
    pub lambda2: f64,
    /// Number of points S on the integration path.
    pub steps_s: usize,
    /// Sufficient-decrease parameter β of the line search.
    pub beta: f64,
    /// Multiplicative step decay η in (0,1).
    pub decay_eta: f64,
    /// First (largest) trial step size.
    pub alpha_upper: f64,
    /// Smallest admissible step size; the fallback when no trial passes.
    pub alpha_lower: f64,
    pub max_iters: usize,
    /// Std of the Gaussian noise added to the image at each path point.
    pub noise_std: f64,
    pub mask_height: usize,
    pub mask_width: usize,
    pub seed: u64,
    /// Optimize the post-softmax probability instead of the logit.
    pub use_probability: bool,
    /// Warn when the baseline keeps more confidence than this.
    pub baseline_confidence_threshold: f64,
}

impl Default for IGosConfig {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 20.0,
            steps_s: 20,
            beta: 1e-4,
            decay_eta: 0.5,
            alpha_upper: 10.0,
            alpha_lower: 1e-3,
            max_iters: 15,
            noise_std: 0.2,
            mask_height: 28,
            mask_width: 28,
            seed: 0,
            use_probability: false,
            baseline_confidence_threshold: 0.01,
        }
    }
}

impl IGosConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_lower > 0.0 && self.alpha_lower < self.alpha_upper) {
            return Err(Error::Parameter(format!(
                "need 0 < alpha_lower < alpha_upper, got {} and {}",
                self.alpha_lower, self.alpha_upper
            )));
        }
        if !(self.decay_eta > 0.0 && self.decay_eta < 1.0) {
            return Err(Error::Parameter(format!(
                "decay_eta must lie in (0,1), got {}",
                self.decay_eta
            )));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::Parameter(format!(
                "beta must lie in (0,1), got {}",
                self.beta
            )));
        }
        if self.steps_s < 1 {
            return Err(Error::Parameter("steps_s must be at least 1".into()));
        }
        if self.mask_height == 0 || self.mask_width == 0 {
            return Err(Error::Parameter("mask dimensions must be positive".into()));
        }
        if self.noise_std < 0.0 || !self.noise_std.is_finite() {
            return Err(Error::Parameter(format!(
                "noise_std must be finite and >= 0, got {}",
                self.noise_std
            )));
        }
        if !(self.lambda1.is_finite() && self.lambda2.is_finite()) {
            return Err(Error::Parameter("lambda weights must be finite".into()));
        }
        Ok(())
    }
}

/// Value of the objective split into its terms (the penalty terms carry
/// their λ weights, so `data + l1 + tv = total`).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ObjectiveTerms {
    pub total: f64,
    pub data: f64,
    pub l1: f64,
    pub tv: f64,
}

/// One completed optimizer iteration.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub objective: ObjectiveTerms,
    pub alpha: f64,
    pub line_search_trials: usize,
}

/// Per-iteration diagnostics of one optimization run.
#[derive(Debug, Clone, Serialize)]
pub struct OptimizationTrace {
    pub records: Vec<TraceRecord>,
    /// Post-softmax confidence of the target class on the baseline image.
    pub baseline_probability: f64,
    /// Set when the baseline keeps more confidence than the configured
    /// threshold; the run proceeds anyway.
    pub baseline_confidence_warning: bool,
    pub converged: bool,
}

impl OptimizationTrace {
    /// CSV with columns `iter,F,f_data,l1,tv,alpha,trials`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,F,f_data,l1,tv,alpha,trials\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.iteration,
                r.objective.total,
                r.objective.data,
                r.objective.l1,
                r.objective.tv,
                r.alpha,
                r.line_search_trials
            ));
        }
        out
    }

    pub fn final_objective(&self) -> Option<ObjectiveTerms> {
        self.records.last().map(|r| r.objective)
    }
}

/// Sum over interior neighbor pairs of squared forward differences, along
/// rows and columns.
pub fn tv_norm(mask: &Mask) -> f64 {
    let (h, w) = (mask.height(), mask.width());
    let mut total = 0.0;
    for y in 0..h {
        for x in 0..w {
            let v = mask.get(y, x);
            if y + 1 < h {
                total += (mask.get(y + 1, x) - v).powi(2);
            }
            if x + 1 < w {
                total += (mask.get(y, x + 1) - v).powi(2);
            }
        }
    }
    total
}

fn l1_deficit(mask: &Mask) -> f64 {
    mask.data().iter().map(|m| 1.0 - m).sum()
}

/// Gradient of g(M) = λ₁‖1−M‖₁ + λ₂TV(M). The L1 subgradient is the
/// constant −1 elementwise (valid while M ≤ 1); the TV part is analytic.
pub fn reg_gradient(mask: &Mask, lambda1: f64, lambda2: f64) -> Vec<f64> {
    let (h, w) = (mask.height(), mask.width());
    let mut grad = vec![-lambda1; h * w];
    for y in 0..h {
        for x in 0..w {
            let v = mask.get(y, x);
            if y + 1 < h {
                let d = 2.0 * lambda2 * (mask.get(y + 1, x) - v);
                grad[(y + 1) * w + x] += d;
                grad[y * w + x] -= d;
            }
            if x + 1 < w {
                let d = 2.0 * lambda2 * (mask.get(y, x + 1) - v);
                grad[y * w + x + 1] += d;
                grad[y * w + x] -= d;
            }
        }
    }
    grad
}

/// Elementwise sum of the integrated-gradient data direction and the
/// regularizer gradient.
pub fn total_gradient(ig: &[f64], reg: &[f64]) -> Vec<f64> {
    assert_eq!(ig.len(), reg.len(), "gradient shapes differ");
    ig.iter().zip(reg).map(|(a, b)| a + b).collect()
}

fn check_problem_shapes(
    scorer: &dyn Scorer,
    image: &ImageTensor,
    baseline: &ImageTensor,
    mask_h: usize,
    mask_w: usize,
) -> Result<()> {
    if image.shape() != baseline.shape() {
        return Err(Error::Shape(format!(
            "image {:?} and baseline {:?} differ",
            image.shape(),
            baseline.shape()
        )));
    }
    if scorer.input_shape() != image.shape() {
        return Err(Error::Shape(format!(
            "scorer expects {:?}, image is {:?}",
            scorer.input_shape(),
            image.shape()
        )));
    }
    if mask_h > image.height() || mask_w > image.width() {
        return Err(Error::Shape(format!(
            "mask {}x{} exceeds image resolution {}x{}",
            mask_h,
            mask_w,
            image.height(),
            image.width()
        )));
    }
    Ok(())
}

/// Blend with a raw upsampled-mask buffer (values already in [0,1]).
fn perturb_raw(image: &ImageTensor, baseline: &ImageTensor, up: &[f64]) -> ImageTensor {
    let (h, w, ch) = image.shape();
    let mut data = Vec::with_capacity(image.data().len());
    for (p, &m) in up.iter().enumerate() {
        for c in 0..ch {
            let i = p * ch + c;
            data.push(image.data()[i] * m + baseline.data()[i] * (1.0 - m));
        }
    }
    ImageTensor::new(h, w, ch, data).expect("blend of finite inputs is finite")
}

/// Data-term score at one perturbed input (logit or probability mode).
fn data_score(
    scorer: &dyn Scorer,
    input: &ImageTensor,
    class_index: usize,
    use_probability: bool,
) -> Result<f64> {
    let score = if use_probability {
        probability(scorer, input, class_index)?
    } else {
        scorer.score(input, class_index)?
    };
    if !score.is_finite() {
        return Err(Error::Numeric("scorer returned a non-finite score".into()));
    }
    Ok(score)
}

/// Gradient of the data term with respect to the mask, evaluated with the
/// mask fixed at `up` (image resolution): chain ∂f/∂input through the blend
/// (difference image factor) and through bilinear upsampling (adjoint).
#[allow(clippy::too_many_arguments)]
pub(crate) fn data_gradient_at(
    scorer: &dyn Scorer,
    image: &ImageTensor,
    baseline: &ImageTensor,
    up: &[f64],
    mask_h: usize,
    mask_w: usize,
    class_index: usize,
    use_probability: bool,
) -> Result<Vec<f64>> {
    let input = perturb_raw(image, baseline, up);
    let out = if use_probability {
        probability_with_gradient(scorer, &input, class_index)?
    } else {
        scorer.score_with_gradient(&input, class_index)?
    };
    if !out.score.is_finite() {
        return Err(Error::Numeric("scorer returned a non-finite score".into()));
    }
    let (h, w, ch) = image.shape();
    let mut pixel_grad = vec![0.0; h * w];
    for p in 0..h * w {
        let mut acc = 0.0;
        for c in 0..ch {
            let i = p * ch + c;
            acc += out.gradient.data()[i] * (image.data()[i] - baseline.data()[i]);
        }
        pixel_grad[p] = acc;
    }
    Ok(bilinear_resize_adjoint(&pixel_grad, h, w, mask_h, mask_w))
}

/// Integrated gradient of the data term with respect to the mask: the mean
/// of data-term gradients evaluated at the path points (s/S)·M, s = 1..S,
/// with fresh noise added to the image at every path point.
pub fn integrated_gradient(
    scorer: &dyn Scorer,
    image: &ImageTensor,
    baseline: &ImageTensor,
    mask: &Mask,
    class_index: usize,
    config: &IGosConfig,
) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    integrated_gradient_with_rng(scorer, image, baseline, mask, class_index, config, &mut rng)
}

/// [`integrated_gradient`] drawing noise from a caller-owned stream;
/// reduction over path points runs in fixed order s = 1..S.
pub fn integrated_gradient_with_rng(
    scorer: &dyn Scorer,
    image: &ImageTensor,
    baseline: &ImageTensor,
    mask: &Mask,
    class_index: usize,
    config: &IGosConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    config.validate()?;
    check_problem_shapes(scorer, image, baseline, mask.height(), mask.width())?;
    let (h, w, ch) = image.shape();
    let up_full = bilinear_resize(mask.height(), mask.width(), mask.data(), h, w);
    let steps = config.steps_s;
    let mut acc = vec![0.0; mask.cells()];
    let mut scaled = vec![0.0; up_full.len()];
    for s in 1..=steps {
        let noisy = if config.noise_std > 0.0 {
            let noise = gaussian_noise_with_rng(h, w, ch, config.noise_std, rng)?;
            image.add(&noise)?
        } else {
            image.clone()
        };
        let scale = s as f64 / steps as f64;
        for (dst, src) in scaled.iter_mut().zip(&up_full) {
            *dst = src * scale;
        }
        let grad = data_gradient_at(
            scorer,
            &noisy,
            baseline,
            &scaled,
            mask.height(),
            mask.width(),
            class_index,
            config.use_probability,
        )?;
        for (a, g) in acc.iter_mut().zip(&grad) {
            *a += g;
        }
    }
    for a in &mut acc {
        *a /= steps as f64;
    }
    Ok(acc)
}

/// Full objective at a mask, evaluated on the clean image so line-search
/// comparisons are deterministic.
pub fn objective(
    scorer: &dyn Scorer,
    image: &ImageTensor,
    baseline: &ImageTensor,
    mask: &Mask,
    class_index: usize,
    config: &IGosConfig,
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

#[allow(clippy::too_many_arguments)]
pub(crate) fn objective_terms(
    scorer: &dyn Scorer,
    image: &ImageTensor,
    baseline: &ImageTensor,
    mask: &Mask,
    class_index: usize,
    lambda1: f64,
    lambda2: f64,
    use_probability: bool,
) -> Result<ObjectiveTerms> {
    check_problem_shapes(scorer, image, baseline, mask.height(), mask.width())?;
    let (h, w, _) = image.shape();
    let up = bilinear_resize(mask.height(), mask.width(), mask.data(), h, w);
    let input = perturb_raw(image, baseline, &up);
    let data = data_score(scorer, &input, class_index, use_probability)?;
    let l1 = lambda1 * l1_deficit(mask);
    let tv = lambda2 * tv_norm(mask);
    Ok(ObjectiveTerms {
        total: data + l1 + tv,
        data,
        l1,
        tv,
    })
}

/// Accepted step of one backtracking line search.
#[derive(Debug, Clone)]
pub struct LineSearchOutcome {
    pub alpha: f64,
    pub candidate: Mask,
    /// Number of objective evaluations spent on trial candidates.
    pub trials: usize,
}

/// Backtracking line search under the revised Armijo condition
///
///   F(P(M − α·TG)) − F(M) ≤ −α·β·TGᵀTG
///
/// trying α_u, α_u·η, α_u·η², … and always testing the projected candidate.
/// When every trial above α_l fails, the step degenerates to α_l with its
/// projected candidate.
pub fn line_search(
    objective_fn: &mut dyn FnMut(&Mask) -> Result<f64>,
    mask: &Mask,
    tg: &[f64],
    config: &IGosConfig,
) -> Result<LineSearchOutcome> {
    config.validate()?;
    assert_eq!(tg.len(), mask.cells(), "gradient shape differs from mask");
    let f0 = objective_fn(mask)?;
    let tg_sq: f64 = tg.iter().map(|g| g * g).sum();
    let step = |alpha: f64| -> Mask {
        let values: Vec<f64> = mask
            .data()
            .iter()
            .zip(tg)
            .map(|(m, g)| m - alpha * g)
            .collect();
        Mask::project(mask.height(), mask.width(), &values)
    };
    let mut alpha = config.alpha_upper;
    let mut trials = 0;
    loop {
        if alpha <= config.alpha_lower {
            return Ok(LineSearchOutcome {
                alpha: config.alpha_lower,
                candidate: step(config.alpha_lower),
                trials,
            });
        }
        let candidate = step(alpha);
        let f = objective_fn(&candidate)?;
        trials += 1;
        if f - f0 <= -alpha * config.beta * tg_sq {
            return Ok(LineSearchOutcome {
                alpha,
                candidate,
                trials,
            });
        }
        alpha *= config.decay_eta;
    }
}

/// Run the full optimization from M₀ = 1. Deterministic given the seed; the
/// returned trace holds one record per completed iteration.
pub fn optimize(
    scorer: &dyn Scorer,
    image: &ImageTensor,
    baseline: &ImageTensor,
    class_index: usize,
    config: &IGosConfig,
) -> Result<(Mask, OptimizationTrace)> {
    config.validate()?;
    check_problem_shapes(scorer, image, baseline, config.mask_height, config.mask_width)?;
    if class_index >= scorer.num_classes() {
        return Err(Error::Parameter(format!(
            "class index {class_index} out of range for {} classes",
            scorer.num_classes()
        )));
    }
    let baseline_probability = probability(scorer, baseline, class_index)?;
    let baseline_confidence_warning = baseline_probability > config.baseline_confidence_threshold;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut mask = Mask::ones(config.mask_height, config.mask_width);
    let mut records = Vec::new();
    let mut converged = false;

    for iteration in 0..config.max_iters {
        let ig = integrated_gradient_with_rng(
            scorer, image, baseline, &mask, class_index, config, &mut rng,
        )?;
        let reg = reg_gradient(&mask, config.lambda1, config.lambda2);
        let tg = total_gradient(&ig, &reg);
        let mut eval =
            |m: &Mask| objective(scorer, image, baseline, m, class_index, config).map(|t| t.total);
        let outcome = line_search(&mut eval, &mask, &tg, config)?;
        let terms = objective(scorer, image, baseline, &outcome.candidate, class_index, config)?;
        records.push(TraceRecord {
            iteration,
            objective: terms,
            alpha: outcome.alpha,
            line_search_trials: outcome.trials,
        });
        let delta = mask
            .data()
            .iter()
            .zip(outcome.candidate.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        mask = outcome.candidate;
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

/// Importance map 1−M, optionally upsampled for rendering. Metric consumers
/// should pass the mask's own resolution.
pub fn mask_to_heatmap(mask: &Mask, target_h: usize, target_w: usize) -> Result<Heatmap> {
    if target_h < mask.height() || target_w < mask.width() {
        return Err(Error::Parameter(format!(
            "heatmap target {}x{} is smaller than the mask {}x{}",
            target_h,
            target_w,
            mask.height(),
            mask.width()
        )));
    }
    let importance: Vec<f64> = mask.data().iter().map(|m| 1.0 - m).collect();
    let data = bilinear_resize(mask.height(), mask.width(), &importance, target_h, target_w);
    Heatmap::new(target_h, target_w, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorer::{QuadraticScorer, QuadraticSpec};

    fn unit_quadratic(n: usize, shape: (usize, usize, usize)) -> QuadraticScorer {
        QuadraticScorer::single(QuadraticSpec::identity(n), shape).unwrap()
    }

    fn toy_config() -> IGosConfig {
        IGosConfig {
            lambda1: 0.0,
            lambda2: 0.0,
            noise_std: 0.0,
            mask_height: 1,
            mask_width: 2,
            ..IGosConfig::default()
        }
    }

    #[test]
    fn tv_norm_examples() {
        assert_eq!(tv_norm(&Mask::filled(3, 3, 0.4).unwrap()), 0.0);
        assert_eq!(tv_norm(&Mask::new(1, 2, vec![0.0, 1.0]).unwrap()), 1.0);
        let checker = Mask::new(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(tv_norm(&checker), 4.0);
    }

    #[test]
    fn reg_gradient_constant_mask_is_uniform_l1_subgradient() {
        let mask = Mask::filled(3, 4, 0.6).unwrap();
        let grad = reg_gradient(&mask, 0.7, 5.0);
        assert!(grad.iter().all(|g| (*g - (-0.7)).abs() < 1e-15));
    }

    #[test]
    fn reg_gradient_tv_pair() {
        let mask = Mask::new(1, 2, vec![0.0, 1.0]).unwrap();
        let grad = reg_gradient(&mask, 0.0, 3.0);
        assert!((grad[0] - (-6.0)).abs() < 1e-12);
        assert!((grad[1] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn reg_gradient_matches_finite_differences_on_interior_masks() {
        let values = vec![
            0.31, 0.72, 0.55, 0.12, 0.98, 0.44, 0.67, 0.21, 0.83, 0.39, 0.58, 0.76,
        ];
        let mask = Mask::new(3, 4, values.clone()).unwrap();
        let (l1w, l2w) = (0.9, 2.5);
        let grad = reg_gradient(&mask, l1w, l2w);
        let g = |vals: &[f64]| -> f64 {
            let m = Mask::new(3, 4, vals.to_vec()).unwrap();
            l1w * m.data().iter().map(|v| 1.0 - v).sum::<f64>() + l2w * tv_norm(&m)
        };
        let eps = 1e-5;
        for i in 0..values.len() {
            let mut plus = values.clone();
            plus[i] += eps;
            let mut minus = values.clone();
            minus[i] -= eps;
            let fd = (g(&plus) - g(&minus)) / (2.0 * eps);
            assert!(
                (fd - grad[i]).abs() < 1e-6,
                "cell {i}: fd {fd} vs analytic {}",
                grad[i]
            );
        }
    }

    #[test]
    fn total_gradient_is_elementwise_sum() {
        let ig = [1.0, -2.0, 0.5];
        let reg = [0.25, 0.25, -1.0];
        let tg = total_gradient(&ig, &reg);
        for i in 0..3 {
            assert_eq!(tg[i], ig[i] + reg[i]);
        }
        assert_eq!(total_gradient(&ig, &[0.0; 3]), ig.to_vec());
    }

    #[test]
    fn integrated_gradient_scalar_mask_toy() {
        // f(x) = x^T x over two pixels, baseline 0, image (1,1), scalar mask
        // broadcast by upsampling. Each path-point gradient is 4(s/S); the
        // mean over s = 1..20 is 4·(S+1)/(2S) = 2.1.
        let scorer = unit_quadratic(2, (1, 2, 1));
        let image = ImageTensor::new(1, 2, 1, vec![1.0, 1.0]).unwrap();
        let baseline = ImageTensor::zeros(1, 2, 1);
        let mask = Mask::ones(1, 1);
        let config = IGosConfig {
            mask_height: 1,
            mask_width: 1,
            noise_std: 0.0,
            steps_s: 20,
            ..IGosConfig::default()
        };
        let ig = integrated_gradient(&scorer, &image, &baseline, &mask, 0, &config).unwrap();
        assert_eq!(ig.len(), 1);
        // Brute-force oracle over the same path points.
        let mut expect = 0.0;
        for s in 1..=20 {
            let m = s as f64 / 20.0;
            expect += 2.0 * m + 2.0 * m; // d f(m·I)/dm = Σ_p 2 m I_p · I_p
        }
        expect /= 20.0;
        assert!((ig[0] - expect).abs() < 1e-12);
        assert!((ig[0] - 2.1).abs() < 1e-9);
    }

    #[test]
    fn integrated_gradient_single_step_is_pointwise_gradient() {
        let scorer = unit_quadratic(2, (1, 2, 1));
        let image = ImageTensor::new(1, 2, 1, vec![0.8, 0.4]).unwrap();
        let baseline = ImageTensor::zeros(1, 2, 1);
        let mask = Mask::new(1, 2, vec![0.9, 0.3]).unwrap();
        let config = IGosConfig {
            steps_s: 1,
            ..toy_config()
        };
        let ig = integrated_gradient(&scorer, &image, &baseline, &mask, 0, &config).unwrap();
        // d f(m ⊙ I)/dm_p = 2 (m_p I_p) I_p at the full mask.
        for (p, &m) in mask.data().iter().enumerate() {
            let x = image.data()[p];
            assert!((ig[p] - 2.0 * m * x * x).abs() < 1e-12);
        }
    }

    #[test]
    fn integrated_gradient_at_zero_mask_is_finite_and_deterministic() {
        let scorer = unit_quadratic(2, (1, 2, 1));
        let image = ImageTensor::new(1, 2, 1, vec![0.8, 0.4]).unwrap();
        let baseline = ImageTensor::constant(1, 2, 1, 0.1);
        let mask = Mask::filled(1, 2, 0.0).unwrap();
        let config = toy_config();
        let a = integrated_gradient(&scorer, &image, &baseline, &mask, 0, &config).unwrap();
        let b = integrated_gradient(&scorer, &image, &baseline, &mask, 0, &config).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|v| v.is_finite()));
        // Every path point sits at the baseline, so each term is ∇f(baseline)
        // chained through the blend.
        for (p, _) in a.iter().enumerate() {
            let expect = 2.0 * baseline.data()[p] * (image.data()[p] - baseline.data()[p]);
            assert!((a[p] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn integrated_gradient_with_noise_is_seed_deterministic() {
        let scorer = unit_quadratic(4, (2, 2, 1));
        let image = ImageTensor::new(2, 2, 1, vec![0.8, 0.4, 0.2, 0.9]).unwrap();
        let baseline = ImageTensor::zeros(2, 2, 1);
        let mask = Mask::ones(2, 2);
        let config = IGosConfig {
            mask_height: 2,
            mask_width: 2,
            noise_std: 0.2,
            seed: 123,
            ..IGosConfig::default()
        };
        let a = integrated_gradient(&scorer, &image, &baseline, &mask, 0, &config).unwrap();
        let b = integrated_gradient(&scorer, &image, &baseline, &mask, 0, &config).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn objective_terms_at_extreme_masks() {
        let scorer = unit_quadratic(2, (1, 2, 1));
        let image = ImageTensor::new(1, 2, 1, vec![0.6, 0.8]).unwrap();
        let baseline = ImageTensor::constant(1, 2, 1, 0.2);
        let config = IGosConfig {
            lambda1: 0.5,
            lambda2: 7.0,
            mask_height: 1,
            mask_width: 2,
            noise_std: 0.0,
            ..IGosConfig::default()
        };
        let f_image = 0.6f64 * 0.6 + 0.8 * 0.8;
        let f_base = 0.2f64 * 0.2 + 0.2 * 0.2;

        let full = objective(&scorer, &image, &baseline, &Mask::ones(1, 2), 0, &config).unwrap();
        assert!((full.total - f_image).abs() < 1e-12);
        assert_eq!((full.l1, full.tv), (0.0, 0.0));

        let empty = Mask::filled(1, 2, 0.0).unwrap();
        let zero = objective(&scorer, &image, &baseline, &empty, 0, &config).unwrap();
        assert!((zero.data - f_base).abs() < 1e-12);
        assert!((zero.l1 - 0.5 * 2.0).abs() < 1e-12);
        assert_eq!(zero.tv, 0.0);

        let half = Mask::filled(1, 2, 0.5).unwrap();
        let mid = objective(&scorer, &image, &baseline, &half, 0, &config).unwrap();
        let mid_img = 0.5f64 * 0.6 + 0.5 * 0.2;
        let mid_img2 = 0.5f64 * 0.8 + 0.5 * 0.2;
        assert!((mid.data - (mid_img * mid_img + mid_img2 * mid_img2)).abs() < 1e-12);
        assert!((mid.l1 - 0.5 * 0.5 * 2.0).abs() < 1e-12);
        assert_eq!(mid.tv, 0.0);
    }

    #[test]
    fn line_search_zero_gradient_accepts_upper_bound() {
        let mask = Mask::new(1, 2, vec![0.3, 0.9]).unwrap();
        let config = toy_config();
        let mut f = |m: &Mask| Ok(m.data().iter().map(|v| v * v).sum());
        let out = line_search(&mut f, &mask, &[0.0, 0.0], &config).unwrap();
        assert_eq!(out.alpha, config.alpha_upper);
        assert_eq!(out.candidate.data(), mask.data());
        assert_eq!(out.trials, 1);
    }

    #[test]
    fn line_search_accepts_large_projected_step() {
        // F(M) = ‖M‖², M = (1,0), TG = (2,0): the projected candidate at
        // α = 10 is (0,0); decrease −1 beats −10·β·4 = −0.004.
        let mask = Mask::new(1, 2, vec![1.0, 0.0]).unwrap();
        let config = IGosConfig {
            beta: 1e-4,
            alpha_upper: 10.0,
            decay_eta: 0.5,
            ..toy_config()
        };
        let mut f = |m: &Mask| Ok(m.data().iter().map(|v| v * v).sum());
        let out = line_search(&mut f, &mask, &[2.0, 0.0], &config).unwrap();
        assert_eq!(out.alpha, 10.0);
        assert_eq!(out.trials, 1);
        assert_eq!(out.candidate.data(), &[0.0, 0.0]);
    }

    #[test]
    fn line_search_falls_back_to_lower_bound_when_objective_increases() {
        // Objective decreases in the mask sum, and the direction pushes the
        // mask down, so every candidate increases F.
        let mask = Mask::filled(1, 2, 0.5).unwrap();
        let config = IGosConfig {
            alpha_lower: 1e-4,
            ..toy_config()
        };
        let mut f = |m: &Mask| Ok(-m.data().iter().sum::<f64>());
        let out = line_search(&mut f, &mask, &[1.0, 1.0], &config).unwrap();
        assert_eq!(out.alpha, config.alpha_lower);
        assert!(out.trials > 0);
        let expect = 0.5 - config.alpha_lower;
        for v in out.candidate.data() {
            assert!((v - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn optimize_deletes_everything_without_regularization() {
        let scorer = unit_quadratic(2, (1, 2, 1));
        let image = ImageTensor::new(1, 2, 1, vec![1.0, 0.8]).unwrap();
        let baseline = ImageTensor::zeros(1, 2, 1);
        let (mask, trace) = optimize(&scorer, &image, &baseline, 0, &toy_config()).unwrap();
        let terms = trace.final_objective().unwrap();
        assert!(terms.data.abs() < 1e-3, "data term {}", terms.data);
        assert!(mask.data().iter().all(|v| *v < 0.05));
    }

    #[test]
    fn optimize_zero_iterations_returns_all_ones() {
        let scorer = unit_quadratic(2, (1, 2, 1));
        let image = ImageTensor::new(1, 2, 1, vec![1.0, 0.8]).unwrap();
        let baseline = ImageTensor::zeros(1, 2, 1);
        let config = IGosConfig {
            max_iters: 0,
            ..toy_config()
        };
        let (mask, trace) = optimize(&scorer, &image, &baseline, 0, &config).unwrap();
        assert_eq!(mask.data(), Mask::ones(1, 2).data());
        assert!(trace.records.is_empty());
    }

    #[test]
    fn optimize_is_bitwise_deterministic_with_noise() {
        let scorer = unit_quadratic(4, (2, 2, 1));
        let image = ImageTensor::new(2, 2, 1, vec![1.0, 0.8, 0.3, 0.6]).unwrap();
        let baseline = ImageTensor::zeros(2, 2, 1);
        let config = IGosConfig {
            lambda1: 0.05,
            lambda2: 0.1,
            noise_std: 0.15,
            mask_height: 2,
            mask_width: 2,
            seed: 42,
            ..IGosConfig::default()
        };
        let (a, _) = optimize(&scorer, &image, &baseline, 0, &config).unwrap();
        let (b, _) = optimize(&scorer, &image, &baseline, 0, &config).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn optimize_keeps_mask_in_bounds_every_iteration() {
        let scorer = unit_quadratic(4, (2, 2, 1));
        let image = ImageTensor::new(2, 2, 1, vec![1.0, 0.8, 0.3, 0.6]).unwrap();
        let baseline = ImageTensor::zeros(2, 2, 1);
        let config = IGosConfig {
            lambda1: 0.2,
            lambda2: 1.0,
            noise_std: 0.1,
            mask_height: 2,
            mask_width: 2,
            ..IGosConfig::default()
        };
        let (mask, trace) = optimize(&scorer, &image, &baseline, 0, &config).unwrap();
        assert!(mask.data().iter().all(|v| (0.0..=1.0).contains(v)));
        for r in &trace.records {
            assert!(r.alpha >= config.alpha_lower && r.alpha <= config.alpha_upper);
        }
    }

    #[test]
    fn mask_to_heatmap_inverts_mask() {
        let mask = Mask::new(1, 3, vec![1.0, 0.0, 0.3]).unwrap();
        let map = mask_to_heatmap(&mask, 1, 3).unwrap();
        let expect = [0.0, 1.0, 0.7];
        for (got, want) in map.data().iter().zip(expect) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!(mask_to_heatmap(&mask, 1, 2).is_err());
    }

    #[test]
    fn trace_serializes_with_fixed_header() {
        let trace = OptimizationTrace {
            records: vec![TraceRecord {
                iteration: 0,
                objective: ObjectiveTerms {
                    total: 1.5,
                    data: 1.0,
                    l1: 0.25,
                    tv: 0.25,
                },
                alpha: 10.0,
                line_search_trials: 2,
            }],
            baseline_probability: 0.001,
            baseline_confidence_warning: false,
            converged: false,
        };
        let csv = trace.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("iter,F,f_data,l1,tv,alpha,trials"));
        assert_eq!(lines.next(), Some("0,1.5,1,0.25,0.25,10,2"));
    }

    #[test]
    fn config_validation_rejects_bad_bounds() {
        let mut config = IGosConfig::default();
        config.alpha_lower = 20.0;
        assert!(config.validate().is_err());
        let mut config = IGosConfig::default();
        config.decay_eta = 1.0;
        assert!(config.validate().is_err());
        let mut config = IGosConfig::default();
        config.beta = 0.0;
        assert!(config.validate().is_err());
        let mut config = IGosConfig::default();
        config.steps_s = 0;
        assert!(config.validate().is_err());
    }
}
