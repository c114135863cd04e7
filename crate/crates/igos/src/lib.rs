//! Model-agnostic saliency heatmaps by perturbation-mask optimization.
//!
//! The optimizer perturbs an image toward a low-confidence baseline through
//! a mask in [0,1], descending along integrated-gradient directions with a
//! projected backtracking line search. Reference one-step methods (plain
//! gradient saliency, gradient×input, one-step integrated gradients) and a
//! fixed-step mask optimizer serve as comparison baselines, and causal
//! faithfulness is measured with deletion/insertion curves and the pointing
//! game.
//!
//! The classifier under explanation is anything implementing
//! [`scorer::Scorer`]; the crate ships a small trainable CNN with a
//! hand-written backward pass, an analytic quadratic scorer for oracle
//! tests, and a finite-difference wrapper for gradient verification.

pub mod baselines;
pub mod error;
pub mod heatmap;
pub mod imageops;
pub mod io;
pub mod metrics;
pub mod optimizer;
pub mod scorer;
pub mod synth;

pub use error::{Error, FormatError, Result};
pub use heatmap::Heatmap;
pub use imageops::{ImageTensor, Mask};
