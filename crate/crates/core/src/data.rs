//! Datasets: samples, the synthetic domain-shift generator, the folder
//! layout shared by generator and loader, fold splits and batch order.
//!
//! Folder layout, one directory per domain:
//!
//! ```text
//! <root>/images/<id>.png   RGB (or gray) image
//! <root>/masks/<id>.png    optional 8-bit mask, one class id per pixel
//! ```
//!
//! A missing mask makes the sample unlabelled.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::augment::gaussian_blur;
use crate::error::{ensure, Error, Result};
use crate::image::{stem, ImageTensor, LabelMap};
use crate::rng::{derive_rng, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    fn tag(self) -> u64 {
        match self {
            Domain::Source => 0,
            Domain::Target => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub domain: Domain,
    pub image: ImageTensor,
    label: Option<LabelMap>,
    withheld: bool,
}

impl Sample {
    pub fn labeled(id: impl Into<String>, domain: Domain, image: ImageTensor, label: LabelMap) -> Result<Self> {
        let id = id.into();
        ensure!(
            (image.height(), image.width()) == (label.height(), label.width()),
            InvalidInput,
            "sample `{id}`: image is {}x{} but mask is {}x{}",
            image.height(),
            image.width(),
            label.height(),
            label.width()
        );
        Ok(Self {
            id,
            domain,
            image,
            label: Some(label),
            withheld: false,
        })
    }

    pub fn unlabeled(id: impl Into<String>, domain: Domain, image: ImageTensor) -> Self {
        Self {
            id: id.into(),
            domain,
            image,
            label: None,
            withheld: false,
        }
    }

    pub fn has_label(&self) -> bool {
        self.label.is_some()
    }

    pub fn is_withheld(&self) -> bool {
        self.withheld
    }

    /// The ground truth. Fails for unlabelled and for withheld samples.
    pub fn label(&self) -> Result<&LabelMap> {
        if self.withheld {
            return Err(Error::LabelWithheld(self.id.clone()));
        }
        self.label
            .as_ref()
            .ok_or_else(|| Error::InvalidInput(format!("sample `{}` has no label", self.id)))
    }

    /// Drops the label; later access reports it as withheld.
    pub fn withhold_label(&mut self) {
        self.label = None;
        self.withheld = true;
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Self {
        Self { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.samples.iter().map(|s| s.id.clone()).collect()
    }

    pub fn get(&self, id: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.id == id)
    }

    pub fn labeled_count(&self) -> usize {
        self.samples.iter().filter(|s| s.has_label()).count()
    }

    /// Samples with the given ids, in the given order.
    pub fn subset(&self, ids: &[String]) -> Result<Dataset> {
        ids.iter()
            .map(|id| {
                self.get(id)
                    .cloned()
                    .ok_or_else(|| Error::InvalidInput(format!("unknown sample id `{id}`")))
            })
            .collect::<Result<Vec<_>>>()
            .map(Dataset::new)
    }

    /// Copy with every label withheld.
    pub fn without_labels(&self) -> Dataset {
        let mut out = self.clone();
        for s in &mut out.samples {
            s.withhold_label();
        }
        out
    }

    /// Keeps the first `ceil(fraction * len)` samples of a seeded shuffle
    /// (at least one), preserving the original order.
    pub fn fraction(&self, fraction: f64, seed: u64) -> Result<Dataset> {
        ensure!(
            fraction > 0.0 && fraction <= 1.0,
            InvalidConfig,
            "labelled fraction must lie in (0, 1], got {fraction}"
        );
        let keep = ((fraction * self.len() as f64).ceil() as usize).max(1).min(self.len());
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut derive_rng(seed, &[stream::FOLDS, 1]));
        let mut chosen = idx[..keep].to_vec();
        chosen.sort_unstable();
        Ok(Dataset::new(chosen.into_iter().map(|i| self.samples[i].clone()).collect()))
    }

    /// Mean of every image channel over the whole dataset.
    pub fn channel_means(&self) -> Vec<f64> {
        let Some(first) = self.samples.first() else {
            return Vec::new();
        };
        let mut acc = vec![0.0; first.image.channels()];
        for s in &self.samples {
            for (a, m) in acc.iter_mut().zip(s.image.channel_means()) {
                *a += m;
            }
        }
        acc.iter().map(|a| a / self.len() as f64).collect()
    }
}

/// Photometric shift applied to every target rendering: blur, then a
/// brightness offset, then additive Gaussian noise, then clamping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DomainShift {
    pub brightness: f64,
    pub noise_sigma: f64,
    pub blur_sigma: f64,
}

impl Default for DomainShift {
    fn default() -> Self {
        Self {
            brightness: 0.25,
            noise_sigma: 0.08,
            blur_sigma: 1.0,
        }
    }
}

impl DomainShift {
    pub const NONE: DomainShift = DomainShift {
        brightness: 0.0,
        noise_sigma: 0.0,
        blur_sigma: 0.0,
    };

    pub fn is_none(&self) -> bool {
        *self == Self::NONE
    }

    pub fn apply<R: rand::Rng + ?Sized>(&self, image: &ImageTensor, rng: &mut R) -> ImageTensor {
        let mut out = if self.blur_sigma > 0.0 {
            gaussian_blur(image, self.blur_sigma)
        } else {
            image.clone()
        };
        if self.is_none() {
            return out;
        }
        let brightness = self.brightness as f32;
        let noise = Normal::new(0.0, self.noise_sigma.max(0.0)).expect("finite sigma");
        for v in out.data_mut() {
            let n = if self.noise_sigma > 0.0 { noise.sample(rng) as f32 } else { 0.0 };
            *v = (*v + brightness + n).clamp(0.0, 1.0);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub source_count: usize,
    pub target_count: usize,
    pub height: usize,
    pub width: usize,
    /// Background plus `num_classes - 1` shape classes.
    pub num_classes: usize,
    pub min_shapes: usize,
    pub max_shapes: usize,
    /// Mean intensity gap between shapes and background.
    pub contrast: f64,
    /// Relative spread of the per-shape gap around `contrast`.
    pub contrast_spread: f64,
    /// Amplitude of the fine background texture.
    pub texture: f64,
    /// Range the per-image background level is stratified over.
    pub background: [f64; 2],
    pub shift: DomainShift,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            source_count: 64,
            target_count: 48,
            height: 128,
            width: 128,
            num_classes: 2,
            min_shapes: 1,
            max_shapes: 3,
            contrast: 0.1,
            contrast_spread: 0.2,
            texture: 0.0,
            background: [0.2, 0.5],
            shift: DomainShift::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.source_count > 0 && self.target_count > 0,
            InvalidConfig,
            "sample counts must be positive, got {} and {}",
            self.source_count,
            self.target_count
        );
        ensure!(
            self.height >= 8 && self.width >= 8,
            InvalidConfig,
            "images must be at least 8x8, got {}x{}",
            self.height,
            self.width
        );
        ensure!(
            (2..=254).contains(&self.num_classes),
            InvalidConfig,
            "num_classes must lie in [2, 254], got {}",
            self.num_classes
        );
        ensure!(
            self.min_shapes >= 1 && self.min_shapes <= self.max_shapes,
            InvalidConfig,
            "shape count range [{}, {}] is invalid",
            self.min_shapes,
            self.max_shapes
        );
        let [lo, hi] = self.background;
        ensure!(
            (0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi) && lo <= hi,
            InvalidConfig,
            "background range [{lo}, {hi}] must be ordered within [0, 1]"
        );
        let s = &self.shift;
        for (name, v) in [
            ("contrast", self.contrast),
            ("contrast_spread", self.contrast_spread),
            ("texture", self.texture),
            ("shift.noise_sigma", s.noise_sigma),
            ("shift.blur_sigma", s.blur_sigma),
        ] {
            ensure!(v.is_finite() && v >= 0.0, InvalidConfig, "{name} must be finite and >= 0, got {v}");
        }
        ensure!(s.brightness.is_finite(), InvalidConfig, "shift.brightness must be finite");
        Ok(())
    }
}

/// A filled planar shape in pixel coordinates (pixel centres at `i + 0.5`).
#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Ellipse {
        cy: f64,
        cx: f64,
        ry: f64,
        rx: f64,
        angle: f64,
    },
    /// Star-shaped polygon, vertices in angular order around the centre.
    Polygon { vertices: Vec<(f64, f64)> },
}

impl Shape {
    pub fn contains(&self, y: f64, x: f64) -> bool {
        match self {
            Shape::Ellipse { cy, cx, ry, rx, angle } => {
                let (s, c) = angle.sin_cos();
                let (dy, dx) = (y - cy, x - cx);
                let u = c * dx + s * dy;
                let v = -s * dx + c * dy;
                (u / rx).powi(2) + (v / ry).powi(2) <= 1.0
            }
            Shape::Polygon { vertices } => {
                // Even-odd ray casting.
                let mut inside = false;
                let n = vertices.len();
                for i in 0..n {
                    let (yi, xi) = vertices[i];
                    let (yj, xj) = vertices[(i + n - 1) % n];
                    if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
                        inside = !inside;
                    }
                }
                inside
            }
        }
    }

    pub fn area(&self) -> f64 {
        match self {
            Shape::Ellipse { ry, rx, .. } => std::f64::consts::PI * rx * ry,
            Shape::Polygon { vertices } => {
                let n = vertices.len();
                let twice: f64 = (0..n)
                    .map(|i| {
                        let (y0, x0) = vertices[i];
                        let (y1, x1) = vertices[(i + 1) % n];
                        x0 * y1 - x1 * y0
                    })
                    .sum();
                twice.abs() / 2.0
            }
        }
    }

    /// Pixels whose centres fall inside the shape.
    pub fn rasterize(&self, height: usize, width: usize) -> Vec<bool> {
        let mut out = vec![false; height * width];
        for y in 0..height {
            for x in 0..width {
                out[y * width + x] = self.contains(y as f64 + 0.5, x as f64 + 0.5);
            }
        }
        out
    }

    fn random<R: rand::Rng + ?Sized>(rng: &mut R, height: usize, width: usize) -> Shape {
        let side = height.min(width) as f64;
        let cy = rng.random_range(0.2..0.8) * height as f64;
        let cx = rng.random_range(0.2..0.8) * width as f64;
        if rng.random_bool(0.5) {
            Shape::Ellipse {
                cy,
                cx,
                ry: rng.random_range(0.08..0.22) * side,
                rx: rng.random_range(0.08..0.22) * side,
                angle: rng.random_range(0.0..std::f64::consts::PI),
            }
        } else {
            let n = rng.random_range(3..=7);
            let r = rng.random_range(0.1..0.24) * side;
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let vertices = (0..n)
                .map(|i| {
                    let a = phase + std::f64::consts::TAU * i as f64 / n as f64;
                    let ri = r * rng.random_range(0.7..1.0);
                    (cy + ri * a.sin(), cx + ri * a.cos())
                })
                .collect();
            Shape::Polygon { vertices }
        }
    }
}

/// One clean rendering: a tinted background with a smooth gradient and fine
/// texture, and a few shapes whose class sets their tint.
fn render<R: rand::Rng + ?Sized>(
    rng: &mut R,
    cfg: &SynthConfig,
    level: f64,
) -> (ImageTensor, LabelMap, Vec<(Shape, u8)>) {
    let (h, w) = (cfg.height, cfg.width);
    let mut label = LabelMap::filled(h, w, 0);
    let tint: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.04..0.04));
    let (gy, gx) = (rng.random_range(-0.08..0.08), rng.random_range(-0.08..0.08));
    let freq = rng.random_range(0.6..1.2);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let mut img = ImageTensor::filled(3, h, w, 0.0);
    for y in 0..h {
        for x in 0..w {
            let (fy, fx) = (y as f64 / h as f64 - 0.5, x as f64 / w as f64 - 0.5);
            let grain = cfg.texture * ((x as f64 + y as f64 * 0.5) * freq + phase).sin();
            let base = level + gy * fy + gx * fx + grain;
            for (c, t) in tint.iter().enumerate() {
                img.set(c, y, x, (base + t) as f32);
            }
        }
    }
    let n = rng.random_range(cfg.min_shapes..=cfg.max_shapes);
    let mut shapes = Vec::with_capacity(n);
    for _ in 0..n {
        let shape = Shape::random(rng, h, w);
        let class = rng.random_range(1..cfg.num_classes) as u8;
        // Shape classes differ by hue; all sit `contrast` above the background.
        let hue = (class as usize - 1) % 3;
        let spread = cfg.contrast_spread.min(1.0);
        let jitter = 1.0 + spread * rng.random_range(-1.0..1.0);
        let fill: [f64; 3] = std::array::from_fn(|c| {
            let boost = if c == hue { 1.5 } else { 0.75 };
            level + cfg.contrast * jitter * boost + tint[c]
        });
        let mask = shape.rasterize(h, w);
        for y in 0..h {
            for x in 0..w {
                if mask[y * w + x] {
                    label.set(y, x, class);
                    for (c, v) in fill.iter().enumerate() {
                        img.set(c, y, x, *v as f32);
                    }
                }
            }
        }
        shapes.push((shape, class));
    }
    img.clamp01();
    (img, label, shapes)
}

/// Background levels stratified over `range`, so that two domains rendered
/// with the same count have nearly the same mean brightness.
fn stratified_levels(seed: u64, domain: Domain, n: usize, range: [f64; 2]) -> Vec<f64> {
    let mut rng = derive_rng(seed, &[stream::SYNTH, domain.tag(), u64::MAX]);
    let mut strata: Vec<usize> = (0..n).collect();
    strata.shuffle(&mut rng);
    strata
        .into_iter()
        .map(|k| range[0] + (range[1] - range[0]) * (k as f64 + rng.random_range(0.0..1.0)) / n as f64)
        .collect()
}

fn synth_domain(cfg: &SynthConfig, seed: u64, domain: Domain) -> Result<Dataset> {
    let count = match domain {
        Domain::Source => cfg.source_count,
        Domain::Target => cfg.target_count,
    };
    let levels = stratified_levels(seed, domain, count, cfg.background);
    let mut samples = Vec::with_capacity(count);
    for (i, level) in levels.into_iter().enumerate() {
        let mut rng = derive_rng(seed, &[stream::SYNTH, domain.tag(), i as u64]);
        let (mut img, label, _) = render(&mut rng, cfg, level);
        if domain == Domain::Target {
            img = cfg.shift.apply(&img, &mut rng);
        }
        let id = format!("{}_{i:04}", domain.as_str());
        samples.push(Sample::labeled(id, domain, img, label)?);
    }
    Ok(Dataset::new(samples))
}

/// Renders the source and target domains. Both carry masks; target masks
/// are for evaluation and must be withheld from training.
pub fn generate_synthetic(cfg: &SynthConfig, seed: u64) -> Result<(Dataset, Dataset)> {
    cfg.validate()?;
    Ok((
        synth_domain(cfg, seed, Domain::Source)?,
        synth_domain(cfg, seed, Domain::Target)?,
    ))
}

/// Where images and masks live under a dataset root.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FolderLayout {
    pub images_dir: String,
    pub masks_dir: String,
    pub grayscale: bool,
}

impl Default for FolderLayout {
    fn default() -> Self {
        Self {
            images_dir: "images".into(),
            masks_dir: "masks".into(),
            grayscale: false,
        }
    }
}

/// Writes `images/` and (for labelled samples) `masks/` under `root`.
/// Withheld labels are not written.
pub fn export_folder(dataset: &Dataset, root: &Path, layout: &FolderLayout) -> Result<()> {
    let images = root.join(&layout.images_dir);
    let masks = root.join(&layout.masks_dir);
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    fs::create_dir_all(&masks).map_err(|e| Error::io(&masks, e))?;
    for s in &dataset.samples {
        s.image.save_png(&images.join(format!("{}.png", s.id)))?;
        if let Ok(label) = s.label() {
            label.save_png(&masks.join(format!("{}.png", s.id)))?;
        }
    }
    Ok(())
}

fn png_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_png = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if path.is_file() && is_png {
            out.push(path);
        }
    }
    Ok(out)
}

/// Loads every image under `root/<images_dir>`, pairing masks by file stem.
/// Samples come back sorted by id.
pub fn load_folder_dataset(root: &Path, layout: &FolderLayout, domain: Domain) -> Result<Dataset> {
    let images_dir = root.join(&layout.images_dir);
    let masks_dir = root.join(&layout.masks_dir);
    let mut images = png_files(&images_dir)?;
    images.sort_by_key(|p| stem(p));
    let mut samples = Vec::with_capacity(images.len());
    for path in images {
        let id = stem(&path);
        let image = ImageTensor::load_png(&path, layout.grayscale)?;
        let mask_path = masks_dir.join(format!("{id}.png"));
        if mask_path.is_file() {
            let label = LabelMap::load_png(&mask_path)?;
            ensure!(
                (image.height(), image.width()) == (label.height(), label.width()),
                InvalidInput,
                "size mismatch for `{id}`: {} is {}x{}, {} is {}x{}",
                path.display(),
                image.height(),
                image.width(),
                mask_path.display(),
                label.height(),
                label.width()
            );
            samples.push(Sample::labeled(id, domain, image, label)?);
        } else {
            samples.push(Sample::unlabeled(id, domain, image));
        }
    }
    Ok(Dataset::new(samples))
}

/// Splits `ids` into `k` test partitions whose sizes differ by at most one.
pub fn partition_ids(ids: &[String], k: usize, seed: u64) -> Result<Vec<Vec<String>>> {
    ensure!(k >= 1, InvalidConfig, "fold count must be >= 1");
    ensure!(
        ids.len() >= k,
        InvalidInput,
        "cannot split {} samples into {k} folds",
        ids.len()
    );
    let mut order = ids.to_vec();
    order.sort();
    order.shuffle(&mut derive_rng(seed, &[stream::FOLDS]));
    let mut folds = vec![Vec::new(); k];
    for (i, id) in order.into_iter().enumerate() {
        folds[i % k].push(id);
    }
    for f in &mut folds {
        f.sort();
    }
    Ok(folds)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub fold_index: usize,
    pub train_source_ids: Vec<String>,
    pub train_target_ids: Vec<String>,
    /// Held-out target samples; the evaluation set.
    pub test_ids: Vec<String>,
    /// Held-out source samples, used to measure in-domain accuracy.
    pub source_test_ids: Vec<String>,
}

/// `k`-fold splits over both domains. Target samples form the evaluation
/// pool; source samples are partitioned alongside so that fold `i` also
/// holds out a source test set.
pub fn make_folds(source: &Dataset, target: &Dataset, k: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    let tgt = partition_ids(&target.ids(), k, seed)?;
    let src = partition_ids(&source.ids(), k, seed)?;
    let rest = |parts: &[Vec<String>], i: usize| -> Vec<String> {
        let mut v: Vec<String> = parts
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .flat_map(|(_, p)| p.iter().cloned())
            .collect();
        v.sort();
        v
    };
    Ok((0..k)
        .map(|i| FoldSplit {
            fold_index: i,
            train_source_ids: rest(&src, i),
            train_target_ids: rest(&tgt, i),
            test_ids: tgt[i].clone(),
            source_test_ids: src[i].clone(),
        })
        .collect())
}

impl FoldSplit {
    /// True when no held-out id appears in a training list.
    pub fn is_disjoint(&self) -> bool {
        let test: HashSet<&String> = self.test_ids.iter().chain(&self.source_test_ids).collect();
        self.train_source_ids
            .iter()
            .chain(&self.train_target_ids)
            .all(|id| !test.contains(id))
    }
}

/// One training step's worth of sample indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepBatch {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
}

/// Batches for one epoch. The longer stream is visited once in a shuffled
/// order; the shorter one is cycled, reshuffled on every restart. The
/// result depends only on the sizes, `seed` and `epoch`.
pub fn epoch_batches(
    n_source: usize,
    n_target: usize,
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Result<Vec<StepBatch>> {
    ensure!(batch_size >= 1, InvalidConfig, "batch size must be >= 1");
    ensure!(n_source >= 1, InvalidInput, "source stream is empty");
    let longest = n_source.max(n_target);
    let steps = longest.div_ceil(batch_size);
    let draw = |n: usize, tag: u64| -> Vec<usize> {
        if n == 0 {
            return Vec::new();
        }
        let mut out = Vec::with_capacity(longest);
        let mut cycle = 0u64;
        while out.len() < longest {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut derive_rng(seed, &[tag, epoch as u64, cycle]));
            out.extend(perm);
            cycle += 1;
        }
        out.truncate(longest);
        out
    };
    let src = draw(n_source, stream::SOURCE_ORDER);
    let tgt = draw(n_target, stream::TARGET_ORDER);
    Ok((0..steps)
        .map(|s| {
            let lo = s * batch_size;
            let hi = (lo + batch_size).min(longest);
            StepBatch {
                source: src[lo..hi].to_vec(),
                target: if tgt.is_empty() { Vec::new() } else { tgt[lo..hi].to_vec() },
            }
        })
        .collect())
}
