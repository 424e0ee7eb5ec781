//! Segmentation network interface and the small U-Net behind it.

mod checkpoint;
mod layers;
mod optim;
mod unet;

pub use checkpoint::{Checkpoint, CheckpointMeta, NamedTensor, CHECKPOINT_VERSION};
pub use layers::Conv2d;
pub use optim::{Optimizer, OptimizerConfig};
pub use unet::{UNet, UNetCache, SIZE_MULTIPLE};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::image::ImageTensor;
use crate::pseudolabel::ProbabilityMap;
use crate::real::Real;
use crate::tensor::Tensor3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub num_classes: usize,
    pub base_width: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            num_classes: 2,
            base_width: 16,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.in_channels >= 1, InvalidConfig, "in_channels must be >= 1");
        ensure!(
            (2..=254).contains(&self.num_classes),
            InvalidConfig,
            "num_classes must lie in [2, 254], got {}",
            self.num_classes
        );
        ensure!(self.base_width >= 1, InvalidConfig, "base_width must be >= 1");
        Ok(())
    }
}

/// Per-parameter-tensor gradient buffers, in `params()` order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub tensors: Vec<Vec<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros_like(params: &[&[T]]) -> Self {
        Self {
            tensors: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
        }
    }

    /// Weight and bias buffers of layer `layer` (tensors `2*layer`, `2*layer+1`).
    pub fn pair_mut(&mut self, layer: usize) -> (&mut [T], &mut [T]) {
        let (lo, hi) = self.tensors.split_at_mut(2 * layer + 1);
        (&mut lo[2 * layer], &mut hi[0])
    }

    pub fn flatten(&self) -> Vec<T> {
        self.tensors.iter().flatten().copied().collect()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().flatten().all(|v| v.is_finite())
    }

    pub fn scale(&mut self, s: T) {
        for v in self.tensors.iter_mut().flatten() {
            *v = *v * s;
        }
    }
}

/// Architecture-agnostic segmentation network `N(.)` producing logits.
pub trait SegmentationNetwork<T: Real> {
    /// Activations a training-mode forward keeps for the backward pass.
    type Cache;

    fn config(&self) -> &ModelConfig;

    /// Inference-mode forward for one image.
    fn forward(&self, x: &Tensor3<T>) -> Result<Tensor3<T>>;

    fn forward_train(&self, x: &Tensor3<T>) -> Result<(Tensor3<T>, Self::Cache)>;

    /// Accumulates parameter gradients for one image into `grads`.
    fn backward(&self, cache: &Self::Cache, grad_logits: &Tensor3<T>, grads: &mut Gradients<T>);

    fn param_names(&self) -> Vec<String>;
    fn param_shapes(&self) -> Vec<Vec<usize>>;
    fn params(&self) -> Vec<&[T]>;
    fn params_mut(&mut self) -> Vec<&mut [T]>;

    fn zero_grads(&self) -> Gradients<T> {
        Gradients::zeros_like(&self.params())
    }

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    fn flat_params(&self) -> Vec<T> {
        self.params().into_iter().flatten().copied().collect()
    }

    fn set_flat_params(&mut self, flat: &[T]) -> Result<()> {
        let total = self.param_count();
        ensure!(flat.len() == total, InvalidInput, "expected {total} parameters, got {}", flat.len());
        let mut off = 0;
        for p in self.params_mut() {
            let n = p.len();
            p.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Logits for a batch of images.
    fn forward_batch(&self, images: &[ImageTensor]) -> Result<Vec<Tensor3<T>>> {
        images.iter().map(|img| self.forward(&to_tensor(img))).collect()
    }

    /// Softmax of the logits for a batch of images.
    fn predict_probs(&self, images: &[ImageTensor]) -> Result<Vec<ProbabilityMap<T>>> {
        Ok(self
            .forward_batch(images)?
            .iter()
            .map(ProbabilityMap::from_logits)
            .collect())
    }
}

pub fn to_tensor<T: Real>(img: &ImageTensor) -> Tensor3<T> {
    let (c, h, w) = img.shape();
    Tensor3 {
        channels: c,
        height: h,
        width: w,
        data: img.data().iter().map(|&v| T::from_f64(v as f64)).collect(),
    }
}
