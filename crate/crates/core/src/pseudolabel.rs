//! Confidence masks, their two-view ensemble and pseudo-ground-truth maps.
//!
//! A pixel of a target image keeps its pseudo label only when the network is
//! confident (max class probability strictly above `tau`) on both the original
//! and the photometrically transformed view. The label itself is the argmax of
//! the transformed view. Everything here is a pure function of its inputs and
//! produces constants from the optimiser's point of view.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{ensure, Error, Result};
use crate::image::{ImageTensor, LabelMap, IGNORE_INDEX};
use crate::real::Real;
use crate::tensor::Tensor3;

/// Tolerance on the per-pixel sum of a probability map.
pub const PROB_SUM_TOLERANCE: f64 = 1e-5;

/// Per-pixel class distribution, class-planar.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap<T = f32> {
    probs: Tensor3<T>,
}

impl<T: Real> ProbabilityMap<T> {
    /// Wraps existing probabilities after checking they are distributions.
    pub fn from_probs(probs: Tensor3<T>) -> Result<Self> {
        ensure!(probs.channels >= 1, InvalidInput, "probability map needs at least one class");
        let n = probs.pixels();
        for p in 0..n {
            let mut sum = 0.0;
            for c in 0..probs.channels {
                let v = probs.data[c * n + p].to_f64();
                ensure!(v >= 0.0 && v.is_finite(), InvalidInput, "pixel {p}: probability {v} is not in [0, 1]");
                sum += v;
            }
            ensure!(
                (sum - 1.0).abs() <= PROB_SUM_TOLERANCE,
                InvalidInput,
                "pixel {p}: probabilities sum to {sum}"
            );
        }
        Ok(Self { probs })
    }

    /// Builds a map from per-pixel class vectors given row-major over pixels.
    pub fn from_pixels(height: usize, width: usize, pixels: &[Vec<T>]) -> Result<Self> {
        ensure!(
            pixels.len() == height * width && !pixels.is_empty(),
            InvalidInput,
            "expected {} pixel vectors, got {}",
            height * width,
            pixels.len()
        );
        let classes = pixels[0].len();
        let mut t = Tensor3::zeros(classes, height, width);
        for (p, v) in pixels.iter().enumerate() {
            ensure!(v.len() == classes, InvalidInput, "pixel {p} has {} classes, expected {classes}", v.len());
            for (c, &x) in v.iter().enumerate() {
                t.data[c * height * width + p] = x;
            }
        }
        Self::from_probs(t)
    }

    /// Channel-wise softmax of logits, max-shifted for stability.
    pub fn from_logits(logits: &Tensor3<T>) -> Self {
        Self {
            probs: softmax(logits),
        }
    }

    pub fn classes(&self) -> usize {
        self.probs.channels
    }

    pub fn height(&self) -> usize {
        self.probs.height
    }

    pub fn width(&self) -> usize {
        self.probs.width
    }

    pub fn pixels(&self) -> usize {
        self.probs.pixels()
    }

    pub fn tensor(&self) -> &Tensor3<T> {
        &self.probs
    }

    #[inline]
    pub fn prob(&self, class: usize, pixel: usize) -> T {
        self.probs.at(class, pixel)
    }

    /// Largest class probability at a pixel.
    pub fn max_prob(&self, pixel: usize) -> T {
        (0..self.classes())
            .map(|c| self.prob(c, pixel))
            .fold(T::neg_infinity(), T::max)
    }

    /// Most probable class at a pixel; ties go to the lowest index.
    pub fn argmax(&self, pixel: usize) -> usize {
        let mut best = 0;
        let mut best_p = self.prob(0, pixel);
        for c in 1..self.classes() {
            let p = self.prob(c, pixel);
            if p > best_p {
                best = c;
                best_p = p;
            }
        }
        best
    }

    /// Hard prediction for every pixel.
    pub fn argmax_map(&self) -> LabelMap {
        let data = (0..self.pixels()).map(|p| self.argmax(p) as u8).collect();
        LabelMap::new(self.height(), self.width(), data).expect("shape preserved")
    }
}

pub fn softmax<T: Real>(logits: &Tensor3<T>) -> Tensor3<T> {
    let n = logits.pixels();
    let c = logits.channels;
    let mut out = Tensor3::zeros(c, logits.height, logits.width);
    for p in 0..n {
        let mut m = T::neg_infinity();
        for k in 0..c {
            m = m.max(logits.data[k * n + p]);
        }
        let mut sum = T::zero();
        for k in 0..c {
            let e = (logits.data[k * n + p] - m).exp();
            out.data[k * n + p] = e;
            sum = sum + e;
        }
        for k in 0..c {
            out.data[k * n + p] = out.data[k * n + p] / sum;
        }
    }
    out
}

/// Binary per-pixel mask (values 0 or 1).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfidenceMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl ConfidenceMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        ensure!(
            data.len() == height * width,
            InvalidInput,
            "mask buffer has {} values, expected {}",
            data.len(),
            height * width
        );
        ensure!(data.iter().all(|&v| v <= 1), InvalidInput, "mask values must be 0 or 1");
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![1; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    /// Share of pixels set to 1.
    pub fn fraction(&self) -> f64 {
        self.count() as f64 / self.data.len() as f64
    }

    /// Pixelwise `self <= other`.
    pub fn is_subset_of(&self, other: &ConfidenceMask) -> bool {
        self.data.len() == other.data.len() && self.data.iter().zip(&other.data).all(|(a, b)| a <= b)
    }

    /// Writes the mask as an 8-bit PNG (0 or 255).
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let data = self.data.iter().map(|&v| v * 255).collect();
        LabelMap::new(self.height, self.width, data)?.save_png(path)
    }
}

fn check_tau(tau: f64) -> Result<()> {
    ensure!(
        tau > 0.5 && tau < 1.0,
        InvalidConfig,
        "confidence threshold must lie in (0.5, 1), got {tau}"
    );
    Ok(())
}

/// Marks pixels whose largest class probability is strictly above `tau`.
pub fn confidence_mask<T: Real>(probs: &ProbabilityMap<T>, tau: f64) -> Result<ConfidenceMask> {
    check_tau(tau)?;
    let data = (0..probs.pixels())
        .map(|p| (probs.max_prob(p).to_f64() > tau) as u8)
        .collect();
    ConfidenceMask::new(probs.height(), probs.width(), data)
}

/// Element-wise (Hadamard) product of two masks.
pub fn ensemble_mask(a: &ConfidenceMask, b: &ConfidenceMask) -> Result<ConfidenceMask> {
    ensure!(
        a.height == b.height && a.width == b.width,
        InvalidInput,
        "cannot combine a {}x{} mask with a {}x{} mask",
        a.height,
        a.width,
        b.height,
        b.width
    );
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect();
    ConfidenceMask::new(a.height, a.width, data)
}

/// Pseudo-ground-truth: argmax class where the mask is set, ignore elsewhere.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PseudoLabelMap {
    labels: LabelMap,
    ignore_index: u8,
}

impl PseudoLabelMap {
    pub fn labels(&self) -> &LabelMap {
        &self.labels
    }

    pub fn into_labels(self) -> LabelMap {
        self.labels
    }

    pub fn ignore_index(&self) -> u8 {
        self.ignore_index
    }

    pub fn retained(&self) -> usize {
        self.labels.data().iter().filter(|&&v| v != self.ignore_index).count()
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.labels.save_png(path)
    }
}

pub fn make_pseudo_labels<T: Real>(
    probs: &ProbabilityMap<T>,
    mask: &ConfidenceMask,
    ignore_index: u8,
) -> Result<PseudoLabelMap> {
    ensure!(
        probs.height() == mask.height && probs.width() == mask.width,
        InvalidInput,
        "probability map is {}x{} but mask is {}x{}",
        probs.height(),
        probs.width(),
        mask.height,
        mask.width
    );
    ensure!(
        (ignore_index as usize) >= probs.classes(),
        InvalidInput,
        "ignore index {ignore_index} collides with a class id (C = {})",
        probs.classes()
    );
    let data = mask
        .data
        .iter()
        .enumerate()
        .map(|(p, &m)| if m == 1 { probs.argmax(p) as u8 } else { ignore_index })
        .collect();
    Ok(PseudoLabelMap {
        labels: LabelMap::new(mask.height, mask.width, data)?,
        ignore_index,
    })
}

/// Masks and labels produced for one target image.
#[derive(Debug, Clone)]
pub struct PseudoLabeling {
    pub mask: ConfidenceMask,
    pub labels: PseudoLabelMap,
}

/// Two-view filtering: confident in both the original and transformed view.
pub fn tist_pseudo_labels<T: Real>(
    original: &ProbabilityMap<T>,
    transformed: &ProbabilityMap<T>,
    tau: f64,
) -> Result<PseudoLabeling> {
    ensure!(
        original.classes() == transformed.classes(),
        InvalidInput,
        "views disagree on class count ({} vs {})",
        original.classes(),
        transformed.classes()
    );
    let mask = ensemble_mask(&confidence_mask(original, tau)?, &confidence_mask(transformed, tau)?)?;
    let labels = make_pseudo_labels(transformed, &mask, IGNORE_INDEX)?;
    Ok(PseudoLabeling { mask, labels })
}

/// Plain self-training: confidence of the transformed view alone.
pub fn st_pseudo_labels<T: Real>(transformed: &ProbabilityMap<T>, tau: f64) -> Result<PseudoLabeling> {
    let mask = confidence_mask(transformed, tau)?;
    let labels = make_pseudo_labels(transformed, &mask, IGNORE_INDEX)?;
    Ok(PseudoLabeling { mask, labels })
}

/// Colour used for ignored pixels in previews.
pub const IGNORE_COLOR: [u8; 3] = [64, 224, 208];

const CLASS_COLORS: [[u8; 3]; 6] = [
    [0, 0, 0],
    [230, 60, 60],
    [70, 110, 240],
    [250, 200, 40],
    [170, 80, 200],
    [90, 200, 90],
];

/// Side-by-side preview: the image on the left, pseudo labels on the right
/// with ignored pixels in turquoise.
pub fn composite_preview(image: &ImageTensor, labels: &LabelMap) -> Result<RgbImage> {
    let (c, h, w) = image.shape();
    ensure!(
        labels.height() == h && labels.width() == w,
        InvalidInput,
        "preview needs matching image and label sizes"
    );
    let q = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    Ok(RgbImage::from_fn(2 * w as u32, h as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        if x < w {
            let px = |ch: usize| q(image.get(ch.min(c - 1), y, x));
            Rgb([px(0), px(1), px(2)])
        } else {
            match labels.get(y, x - w) {
                IGNORE_INDEX => Rgb(IGNORE_COLOR),
                k => Rgb(CLASS_COLORS[k as usize % CLASS_COLORS.len()]),
            }
        }
    }))
}

pub fn save_preview(image: &ImageTensor, labels: &LabelMap, path: &Path) -> Result<()> {
    composite_preview(image, labels)?
        .save(path)
        .map_err(|e| Error::Serde(format!("{}: {e}", path.display())))
}
