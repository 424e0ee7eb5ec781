//! Transformation-invariant self-training (TI-ST) for semi-supervised domain
//! adaptation in semantic segmentation.
//!
//! A network is trained on labelled source images while it pseudo-labels
//! unlabelled target images. A target pixel only becomes a training target
//! when the network is confident about it both on the original image and on
//! a photometrically transformed copy; transformation-variant predictions are
//! ignored. Plain self-training and a supervised-only baseline are included
//! for comparison, along with a synthetic domain-shift generator, fold
//! handling, Dice reporting and ablation sweeps.

pub mod augment;
pub mod cli;
pub mod data;
pub mod error;
pub mod image;
pub mod losses;
pub mod model;
pub mod pseudolabel;
pub mod real;
pub mod report;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use image::{ImageTensor, LabelMap, IGNORE_INDEX};
pub use pseudolabel::{ConfidenceMask, ProbabilityMap, PseudoLabelMap};
pub use real::Real;
pub use tensor::Tensor3;
