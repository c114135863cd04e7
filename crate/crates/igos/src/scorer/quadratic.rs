//! Analytic quadratic scorer: f(x) = xᵀAx + bᵀx + c with exact gradient
//! (A + Aᵀ)x + b. Because the gradient is linear along any straight path,
//! closed-form values for integrated gradients are available, which makes
//! this the oracle model for the optimizer tests.

use crate::error::{Error, Result};
use crate::imageops::ImageTensor;

use super::{check_input_shape, class_out_of_range, Scorer, ScorerOutput};

/// One quadratic form over the flattened input.
#[derive(Debug, Clone)]
pub struct QuadraticSpec {
    dim: usize,
    matrix: Vec<f64>,
    linear: Vec<f64>,
    offset: f64,
}

impl QuadraticSpec {
    pub fn new(matrix: Vec<f64>, linear: Vec<f64>, offset: f64) -> Result<Self> {
        let dim = linear.len();
        if matrix.len() != dim * dim {
            return Err(Error::Shape(format!(
                "quadratic matrix has {} entries, expected {}x{}",
                matrix.len(),
                dim,
                dim
            )));
        }
        if matrix.iter().chain(linear.iter()).any(|v| !v.is_finite()) || !offset.is_finite() {
            return Err(Error::Numeric("quadratic coefficients must be finite".into()));
        }
        Ok(Self {
            dim,
            matrix,
            linear,
            offset,
        })
    }

    /// f(x) = xᵀx.
    pub fn identity(dim: usize) -> Self {
        let mut matrix = vec![0.0; dim * dim];
        for i in 0..dim {
            matrix[i * dim + i] = 1.0;
        }
        Self {
            dim,
            matrix,
            linear: vec![0.0; dim],
            offset: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let n = self.dim;
        let mut quad = 0.0;
        for i in 0..n {
            let mut row = 0.0;
            for j in 0..n {
                row += self.matrix[i * n + j] * x[j];
            }
            quad += x[i] * row;
        }
        let lin: f64 = self.linear.iter().zip(x).map(|(b, v)| b * v).sum();
        quad + lin + self.offset
    }

    /// ∇f(x) = (A + Aᵀ)x + b.
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim;
        let mut grad = self.linear.clone();
        for i in 0..n {
            for j in 0..n {
                grad[i] += (self.matrix[i * n + j] + self.matrix[j * n + i]) * x[j];
            }
        }
        grad
    }
}

/// A scorer whose classes are independent quadratic forms over the
/// flattened image.
pub struct QuadraticScorer {
    specs: Vec<QuadraticSpec>,
    shape: (usize, usize, usize),
}

impl QuadraticScorer {
    pub fn new(specs: Vec<QuadraticSpec>, shape: (usize, usize, usize)) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::Parameter("need at least one quadratic class".into()));
        }
        let n = shape.0 * shape.1 * shape.2;
        if let Some(bad) = specs.iter().find(|s| s.dim() != n) {
            return Err(Error::Shape(format!(
                "quadratic dimension {} does not match input shape {:?} ({} values)",
                bad.dim(),
                shape,
                n
            )));
        }
        Ok(Self { specs, shape })
    }

    /// Single-class scorer.
    pub fn single(spec: QuadraticSpec, shape: (usize, usize, usize)) -> Result<Self> {
        Self::new(vec![spec], shape)
    }

    pub fn spec(&self, class_index: usize) -> &QuadraticSpec {
        &self.specs[class_index]
    }
}

impl Scorer for QuadraticScorer {
    fn input_shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    fn num_classes(&self) -> usize {
        self.specs.len()
    }

    fn logits(&self, image: &ImageTensor) -> Result<Vec<f64>> {
        check_input_shape(self, image)?;
        Ok(self.specs.iter().map(|s| s.eval(image.data())).collect())
    }

    fn score_with_gradient(
        &self,
        image: &ImageTensor,
        class_index: usize,
    ) -> Result<ScorerOutput> {
        check_input_shape(self, image)?;
        let spec = self
            .specs
            .get(class_index)
            .ok_or_else(|| class_out_of_range(class_index, self.specs.len()))?;
        let score = spec.eval(image.data());
        let grad = spec.gradient(image.data());
        let (h, w, c) = self.shape;
        Ok(ScorerOutput {
            score,
            gradient: ImageTensor::new(h, w, c, grad)?,
        })
    }
}
