//! Spatial (`g`) and photometric (`f`) augmentations.
//!
//! Spatial transforms crop and rotate an image/label pair with one shared
//! coordinate mapping: bilinear sampling for the image, nearest neighbour for
//! the label. Photometric transforms touch the image only. Sampling and
//! application are split so that every drawn spec can be logged and replayed.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::image::{ImageTensor, LabelMap, IGNORE_INDEX};

/// Luma weights used for contrast and saturation.
const LUMA: [f32; 3] = [0.299, 0.587, 0.114];

/// Ranges the samplers draw from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub max_rotation_degrees: f64,
    /// Smallest crop side as a fraction of the image side.
    pub min_crop_fraction: f64,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    /// Lower bound for sampled jitter factors.
    pub jitter_floor: f64,
    pub blur_probability: f64,
    pub max_blur_sigma: f64,
    pub max_sharpen: f64,
    /// Sigma of the blur subtracted by unsharp masking.
    pub sharpen_sigma: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            max_rotation_degrees: 30.0,
            min_crop_fraction: 0.5,
            brightness: 0.7,
            contrast: 0.7,
            saturation: 0.7,
            jitter_floor: 0.05,
            blur_probability: 0.5,
            max_blur_sigma: 2.0,
            max_sharpen: 1.0,
            sharpen_sigma: 1.0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            (0.0..=30.0).contains(&self.max_rotation_degrees),
            InvalidConfig,
            "max_rotation_degrees must lie in [0, 30], got {}",
            self.max_rotation_degrees
        );
        ensure!(
            self.min_crop_fraction > 0.0 && self.min_crop_fraction <= 1.0,
            InvalidConfig,
            "min_crop_fraction must lie in (0, 1], got {}",
            self.min_crop_fraction
        );
        for (name, v) in [
            ("brightness", self.brightness),
            ("contrast", self.contrast),
            ("saturation", self.saturation),
            ("max_blur_sigma", self.max_blur_sigma),
            ("max_sharpen", self.max_sharpen),
            ("sharpen_sigma", self.sharpen_sigma),
        ] {
            ensure!(v.is_finite() && v >= 0.0, InvalidConfig, "{name} must be finite and >= 0, got {v}");
        }
        ensure!(
            self.jitter_floor > 0.0 && self.jitter_floor <= 1.0,
            InvalidConfig,
            "jitter_floor must lie in (0, 1], got {}",
            self.jitter_floor
        );
        ensure!(
            (0.0..=1.0).contains(&self.blur_probability),
            InvalidConfig,
            "blur_probability must lie in [0, 1], got {}",
            self.blur_probability
        );
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropBox {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialSpec {
    pub rotation_degrees: f64,
    pub crop_box: CropBox,
}

impl SpatialSpec {
    pub fn identity(height: usize, width: usize) -> Self {
        Self {
            rotation_degrees: 0.0,
            crop_box: CropBox {
                top: 0,
                left: 0,
                height,
                width,
            },
        }
    }

    pub fn is_identity_for(&self, height: usize, width: usize) -> bool {
        *self == Self::identity(height, width)
    }

    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        ensure!(
            self.rotation_degrees.is_finite() && self.rotation_degrees.abs() <= 30.0,
            InvalidInput,
            "rotation must lie in [-30, 30] degrees, got {}",
            self.rotation_degrees
        );
        let b = self.crop_box;
        ensure!(
            b.height > 0 && b.width > 0 && b.top + b.height <= height && b.left + b.width <= width,
            InvalidInput,
            "crop box {b:?} is not inside a {height}x{width} image"
        );
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonSpatialSpec {
    pub brightness_factor: f64,
    pub contrast_factor: f64,
    pub saturation_factor: f64,
    pub blur_sigma: f64,
    pub sharpen_amount: f64,
}

impl NonSpatialSpec {
    pub const IDENTITY: NonSpatialSpec = NonSpatialSpec {
        brightness_factor: 1.0,
        contrast_factor: 1.0,
        saturation_factor: 1.0,
        blur_sigma: 0.0,
        sharpen_amount: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.brightness_factor,
            self.contrast_factor,
            self.saturation_factor,
            self.blur_sigma,
            self.sharpen_amount,
        ];
        ensure!(
            all.iter().all(|v| v.is_finite()),
            InvalidInput,
            "non-spatial spec has non-finite entries: {self:?}"
        );
        ensure!(
            self.brightness_factor > 0.0 && self.contrast_factor > 0.0,
            InvalidInput,
            "brightness and contrast factors must be positive: {self:?}"
        );
        ensure!(
            self.saturation_factor >= 0.0 && self.blur_sigma >= 0.0 && self.sharpen_amount >= 0.0,
            InvalidInput,
            "saturation, blur sigma and sharpen amount must be non-negative: {self:?}"
        );
        Ok(())
    }
}

/// Draws a crop (each side uniform in `[min_crop_fraction, 1]` of the image)
/// and a rotation uniform in `[-max, max]` degrees.
pub fn sample_spatial<R: Rng + ?Sized>(
    rng: &mut R,
    cfg: &AugmentConfig,
    height: usize,
    width: usize,
) -> Result<SpatialSpec> {
    ensure!(
        height >= 2 && width >= 2,
        InvalidInput,
        "spatial augmentation needs an image of at least 2x2, got {height}x{width}"
    );
    let max_rot = cfg.max_rotation_degrees.min(30.0);
    let rotation_degrees = if max_rot > 0.0 {
        rng.random_range(-max_rot..=max_rot)
    } else {
        0.0
    };
    let side = |rng: &mut R, full: usize| -> usize {
        let frac = rng.random_range(cfg.min_crop_fraction..=1.0);
        ((frac * full as f64).round() as usize).clamp(1, full)
    };
    let crop_h = side(rng, height);
    let crop_w = side(rng, width);
    let top = rng.random_range(0..=height - crop_h);
    let left = rng.random_range(0..=width - crop_w);
    Ok(SpatialSpec {
        rotation_degrees,
        crop_box: CropBox {
            top,
            left,
            height: crop_h,
            width: crop_w,
        },
    })
}

/// Draws jitter factors uniformly in `[max(floor, 1 - s), 1 + s]`, a blur
/// sigma in `[0, max]` applied with probability `blur_probability`, and an
/// unsharp-mask amount in `[0, max_sharpen]`.
pub fn sample_nonspatial<R: Rng + ?Sized>(rng: &mut R, cfg: &AugmentConfig) -> NonSpatialSpec {
    let mut factor = |s: f64| {
        let lo = (1.0 - s).max(cfg.jitter_floor);
        let hi = 1.0 + s;
        if hi > lo {
            rng.random_range(lo..=hi)
        } else {
            1.0
        }
    };
    let brightness_factor = factor(cfg.brightness);
    let contrast_factor = factor(cfg.contrast);
    let saturation_factor = factor(cfg.saturation);
    let blur_roll: f64 = rng.random();
    let blur_sigma = if blur_roll < cfg.blur_probability && cfg.max_blur_sigma > 0.0 {
        rng.random_range(0.0..=cfg.max_blur_sigma)
    } else {
        0.0
    };
    let sharpen_amount = if cfg.max_sharpen > 0.0 {
        rng.random_range(0.0..=cfg.max_sharpen)
    } else {
        0.0
    };
    NonSpatialSpec {
        brightness_factor,
        contrast_factor,
        saturation_factor,
        blur_sigma,
        sharpen_amount,
    }
}

/// Maps an output pixel centre into source coordinates: scale into the crop,
/// then rotate about the crop centre.
struct SpatialMap {
    sy: f64,
    sx: f64,
    cos: f64,
    sin: f64,
    cy: f64,
    cx: f64,
    top: f64,
    left: f64,
}

impl SpatialMap {
    fn new(spec: &SpatialSpec, out_h: usize, out_w: usize) -> Self {
        let b = spec.crop_box;
        let theta = spec.rotation_degrees.to_radians();
        Self {
            sy: b.height as f64 / out_h as f64,
            sx: b.width as f64 / out_w as f64,
            cos: theta.cos(),
            sin: theta.sin(),
            cy: (b.height as f64 - 1.0) / 2.0,
            cx: (b.width as f64 - 1.0) / 2.0,
            top: b.top as f64,
            left: b.left as f64,
        }
    }

    /// Source `(y, x)` for output pixel `(y, x)`.
    #[inline]
    fn source(&self, y: usize, x: usize) -> (f64, f64) {
        let v = (y as f64 + 0.5) * self.sy - 0.5 - self.cy;
        let u = (x as f64 + 0.5) * self.sx - 0.5 - self.cx;
        let src_x = self.cos * u - self.sin * v + self.cx + self.left;
        let src_y = self.sin * u + self.cos * v + self.cy + self.top;
        (src_y, src_x)
    }
}

const EDGE_SLACK: f64 = 1e-9;

/// Crops and rotates `image` and `label` with the same mapping; the output
/// keeps the input size. Samples falling outside the source image become 0 in
/// the image and [`IGNORE_INDEX`] in the label.
pub fn apply_spatial(
    image: &ImageTensor,
    label: &LabelMap,
    spec: &SpatialSpec,
) -> Result<(ImageTensor, LabelMap)> {
    let (c, h, w) = image.shape();
    ensure!(
        label.height() == h && label.width() == w,
        InvalidInput,
        "image is {h}x{w} but label is {}x{}",
        label.height(),
        label.width()
    );
    spec.validate(h, w)?;
    if spec.is_identity_for(h, w) {
        return Ok((image.clone(), label.clone()));
    }
    let map = SpatialMap::new(spec, h, w);
    let mut out_img = ImageTensor::filled(c, h, w, 0.0);
    let mut out_lab = LabelMap::filled(h, w, IGNORE_INDEX);
    let (hmax, wmax) = ((h - 1) as f64, (w - 1) as f64);
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = map.source(y, x);
            if sy < -EDGE_SLACK || sx < -EDGE_SLACK || sy > hmax + EDGE_SLACK || sx > wmax + EDGE_SLACK {
                continue;
            }
            let sy = sy.clamp(0.0, hmax);
            let sx = sx.clamp(0.0, wmax);
            let ny = (sy + 0.5).floor().min(hmax) as usize;
            let nx = (sx + 0.5).floor().min(wmax) as usize;
            out_lab.set(y, x, label.get(ny, nx));

            let y0 = sy.floor() as usize;
            let x0 = sx.floor() as usize;
            let y1 = (y0 + 1).min(h - 1);
            let x1 = (x0 + 1).min(w - 1);
            let fy = (sy - y0 as f64) as f32;
            let fx = (sx - x0 as f64) as f32;
            for ch in 0..c {
                let top = image.get(ch, y0, x0) * (1.0 - fx) + image.get(ch, y0, x1) * fx;
                let bot = image.get(ch, y1, x0) * (1.0 - fx) + image.get(ch, y1, x1) * fx;
                out_img.set(ch, y, x, top * (1.0 - fy) + bot * fy);
            }
        }
    }
    Ok((out_img, out_lab))
}

/// Applies brightness, contrast, saturation, blur and sharpening in that
/// order, clamping to `[0, 1]` after each step. Factors equal to 1 and zero
/// sigma/amount are skipped, so the identity spec returns the input unchanged.
pub fn apply_nonspatial(image: &ImageTensor, spec: &NonSpatialSpec) -> Result<ImageTensor> {
    spec.validate()?;
    let mut out = image.clone();
    if spec.brightness_factor != 1.0 {
        let b = spec.brightness_factor as f32;
        for v in out.data_mut() {
            *v = (*v * b).clamp(0.0, 1.0);
        }
    }
    if spec.contrast_factor != 1.0 {
        let gray = grayscale(&out);
        let mean = (gray.iter().map(|&v| v as f64).sum::<f64>() / gray.len() as f64) as f32;
        let k = spec.contrast_factor as f32;
        for v in out.data_mut() {
            *v = ((*v - mean) * k + mean).clamp(0.0, 1.0);
        }
    }
    if spec.saturation_factor != 1.0 && out.channels() == 3 {
        let gray = grayscale(&out);
        let s = spec.saturation_factor as f32;
        for ch in 0..3 {
            for (v, &g) in out.plane_mut(ch).iter_mut().zip(&gray) {
                *v = ((*v - g) * s + g).clamp(0.0, 1.0);
            }
        }
    }
    if spec.blur_sigma > 0.0 {
        out = gaussian_blur(&out, spec.blur_sigma);
        out.clamp01();
    }
    if spec.sharpen_amount > 0.0 {
        let blurred = gaussian_blur(&out, 1.0);
        let a = spec.sharpen_amount as f32;
        for (v, &b) in out.data_mut().iter_mut().zip(blurred.data()) {
            *v = (*v + a * (*v - b)).clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

/// Luma plane for RGB images, the single channel otherwise.
fn grayscale(image: &ImageTensor) -> Vec<f32> {
    if image.channels() == 3 {
        let (r, g, b) = (image.plane(0), image.plane(1), image.plane(2));
        r.iter()
            .zip(g)
            .zip(b)
            .map(|((&r, &g), &b)| LUMA[0] * r + LUMA[1] * g + LUMA[2] * b)
            .collect()
    } else {
        image.plane(0).to_vec()
    }
}

/// Normalised Gaussian taps with radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let two_s2 = 2.0 * sigma * sigma;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|d| (-((d * d) as f64) / two_s2).exp())
        .collect();
    let norm: f64 = taps.iter().sum();
    taps.iter().map(|t| (t / norm) as f32).collect()
}

/// Separable Gaussian blur per channel with clamp-to-edge borders. Does not
/// clamp values.
pub fn gaussian_blur(image: &ImageTensor, sigma: f64) -> ImageTensor {
    let kernel = gaussian_kernel(sigma);
    if kernel.len() == 1 {
        return image.clone();
    }
    let (c, h, w) = image.shape();
    let r = (kernel.len() / 2) as isize;
    let mut out = ImageTensor::filled(c, h, w, 0.0);
    let mut tmp = vec![0.0f32; h * w];
    for ch in 0..c {
        let src = image.plane(ch);
        for y in 0..h {
            let row = &src[y * w..(y + 1) * w];
            for x in 0..w {
                let mut acc = 0.0f32;
                for (k, &t) in kernel.iter().enumerate() {
                    let xx = (x as isize + k as isize - r).clamp(0, w as isize - 1) as usize;
                    acc += t * row[xx];
                }
                tmp[y * w + x] = acc;
            }
        }
        let dst = out.plane_mut(ch);
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0f32;
                for (k, &t) in kernel.iter().enumerate() {
                    let yy = (y as isize + k as isize - r).clamp(0, h as isize - 1) as usize;
                    acc += t * tmp[yy * w + x];
                }
                dst[y * w + x] = acc;
            }
        }
    }
    out
}

/// Spatial transform followed by a photometric one, both freshly sampled;
/// used for the labelled source branch.
pub fn augment_labeled<R: Rng + ?Sized>(
    rng: &mut R,
    cfg: &AugmentConfig,
    image: &ImageTensor,
    label: &LabelMap,
) -> Result<(ImageTensor, LabelMap)> {
    let g = sample_spatial(rng, cfg, image.height(), image.width())?;
    let f = sample_nonspatial(rng, cfg);
    let (img, lab) = apply_spatial(image, label, &g)?;
    Ok((apply_nonspatial(&img, &f)?, lab))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;
    use proptest::prelude::*;

    fn ramp_image(c: usize, h: usize, w: usize) -> ImageTensor {
        let data = (0..c * h * w).map(|i| (i % 97) as f32 / 96.0).collect();
        ImageTensor::new(c, h, w, data).unwrap()
    }

    fn stripes(h: usize, w: usize) -> LabelMap {
        let data = (0..h * w).map(|i| ((i / w) % 3) as u8).collect();
        LabelMap::new(h, w, data).unwrap()
    }

    #[test]
    fn sampled_spatial_specs_respect_bounds() {
        let cfg = AugmentConfig::default();
        let mut rng = derive_rng(3, &[0]);
        for _ in 0..200 {
            let s = sample_spatial(&mut rng, &cfg, 512, 512).unwrap();
            s.validate(512, 512).unwrap();
            assert!(s.rotation_degrees.abs() <= 30.0);
            assert!(s.crop_box.height >= 256 && s.crop_box.width >= 256);
        }
    }

    #[test]
    fn spatial_sampling_is_deterministic() {
        let cfg = AugmentConfig::default();
        let a = sample_spatial(&mut derive_rng(11, &[]), &cfg, 64, 48).unwrap();
        let b = sample_spatial(&mut derive_rng(11, &[]), &cfg, 64, 48).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn minimal_image_gets_valid_spec() {
        let cfg = AugmentConfig::default();
        let mut rng = derive_rng(5, &[]);
        for _ in 0..50 {
            let s = sample_spatial(&mut rng, &cfg, 2, 2).unwrap();
            s.validate(2, 2).unwrap();
        }
        let full = SpatialSpec::identity(2, 2);
        full.validate(2, 2).unwrap();
    }

    #[test]
    fn degenerate_shape_is_rejected() {
        let cfg = AugmentConfig::default();
        let mut rng = derive_rng(5, &[]);
        assert!(sample_spatial(&mut rng, &cfg, 1, 8).is_err());
        assert!(sample_spatial(&mut rng, &cfg, 8, 0).is_err());
    }

    #[test]
    fn identity_spatial_is_exact() {
        let img = ramp_image(3, 9, 7);
        let lab = stripes(9, 7);
        let (i2, l2) = apply_spatial(&img, &lab, &SpatialSpec::identity(9, 7)).unwrap();
        assert_eq!(i2, img);
        assert_eq!(l2, lab);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let img = ramp_image(1, 8, 8);
        let lab = stripes(8, 9);
        assert!(apply_spatial(&img, &lab, &SpatialSpec::identity(8, 8)).is_err());
    }

    #[test]
    fn rotation_beyond_limit_is_rejected() {
        let img = ramp_image(1, 8, 8);
        let lab = stripes(8, 8);
        let mut spec = SpatialSpec::identity(8, 8);
        spec.rotation_degrees = 31.0;
        assert!(apply_spatial(&img, &lab, &spec).is_err());
    }

    #[test]
    fn marked_pixel_lands_where_rotation_matrix_says() {
        // Oracle: rotate the marked cell's offset from the centre by -theta
        // (the inverse of the sampling map) and round.
        let n = 33;
        let centre = 16.0;
        for &(deg, dy, dx) in &[(30.0f64, 0i32, 8i32), (-30.0, 6, 0), (20.0, -5, 7), (-12.5, 9, -4)] {
            let mut lab = LabelMap::filled(n, n, 0);
            let (my, mx) = ((16 + dy) as usize, (16 + dx) as usize);
            lab.set(my, mx, 1);
            let img = ImageTensor::filled(1, n, n, 0.5);
            let mut spec = SpatialSpec::identity(n, n);
            spec.rotation_degrees = deg;
            let (_, out) = apply_spatial(&img, &lab, &spec).unwrap();

            let t = deg.to_radians();
            let (ox, oy) = (dx as f64, dy as f64);
            let ex = t.cos() * ox + t.sin() * oy + centre;
            let ey = -t.sin() * ox + t.cos() * oy + centre;
            let (ey, ex) = (ey.round() as usize, ex.round() as usize);
            assert_eq!(out.get(ey, ex), 1, "rotation {deg}: expected mark at ({ey}, {ex})");
            assert!(out.count(1) >= 1 && out.count(1) <= 2);
        }
    }

    #[test]
    fn nonspatial_identity_is_exact() {
        let img = ramp_image(3, 10, 10);
        assert_eq!(apply_nonspatial(&img, &NonSpatialSpec::IDENTITY).unwrap(), img);
    }

    #[test]
    fn brightness_saturates_at_one() {
        let img = ImageTensor::filled(3, 4, 4, 0.6);
        let spec = NonSpatialSpec {
            brightness_factor: 2.0,
            ..NonSpatialSpec::IDENTITY
        };
        let out = apply_nonspatial(&img, &spec).unwrap();
        assert!(out.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn blur_spreads_an_impulse_and_keeps_its_mass() {
        let mut img = ImageTensor::filled(1, 41, 41, 0.0);
        img.set(0, 20, 20, 1.0);
        let out = gaussian_blur(&img, 3.0);
        let mass: f64 = out.data().iter().map(|&v| v as f64).sum();
        assert!((mass - 1.0).abs() < 1e-4, "mass {mass}");
        assert!(out.get(0, 20, 20) < 0.05);
        // Centre tap of the separable blur is the square of the 1-D centre tap.
        let k = tist_oracles::gaussian_kernel(3.0);
        let centre = k[k.len() / 2] * k[k.len() / 2];
        assert!((out.get(0, 20, 20) as f64 - centre).abs() < 1e-6);
        assert!((out.get(0, 20, 23) as f64 - k[k.len() / 2] * k[k.len() / 2 + 3]).abs() < 1e-6);
    }

    #[test]
    fn invalid_nonspatial_spec_is_rejected() {
        let img = ImageTensor::filled(1, 4, 4, 0.5);
        for spec in [
            NonSpatialSpec { brightness_factor: 0.0, ..NonSpatialSpec::IDENTITY },
            NonSpatialSpec { blur_sigma: -1.0, ..NonSpatialSpec::IDENTITY },
            NonSpatialSpec { contrast_factor: f64::NAN, ..NonSpatialSpec::IDENTITY },
        ] {
            assert!(apply_nonspatial(&img, &spec).is_err());
        }
    }

    #[test]
    fn sampled_jitter_respects_ranges() {
        let cfg = AugmentConfig::default();
        let mut rng = derive_rng(9, &[]);
        let mut blurred = 0;
        for _ in 0..500 {
            let s = sample_nonspatial(&mut rng, &cfg);
            for f in [s.brightness_factor, s.contrast_factor, s.saturation_factor] {
                assert!((0.3 - 1e-12..=1.7 + 1e-12).contains(&f));
            }
            assert!((0.0..=2.0).contains(&s.blur_sigma));
            assert!((0.0..=1.0).contains(&s.sharpen_amount));
            blurred += (s.blur_sigma > 0.0) as usize;
        }
        assert!((180..320).contains(&blurred), "blur applied {blurred}/500 times");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn spatial_labels_stay_in_the_input_alphabet(seed in any::<u64>()) {
            let cfg = AugmentConfig::default();
            let mut rng = derive_rng(seed, &[]);
            let img = ramp_image(3, 24, 20);
            let lab = stripes(24, 20);
            let spec = sample_spatial(&mut rng, &cfg, 24, 20).unwrap();
            let (out_img, out_lab) = apply_spatial(&img, &lab, &spec).unwrap();
            prop_assert_eq!(out_img.shape(), img.shape());
            for v in out_lab.distinct_values() {
                prop_assert!(v <= 2 || v == IGNORE_INDEX);
            }
        }

        #[test]
        fn nonspatial_keeps_shape_and_range(seed in any::<u64>(), c in prop::sample::select(vec![1usize, 3])) {
            let cfg = AugmentConfig::default();
            let mut rng = derive_rng(seed, &[]);
            let img = ramp_image(c, 12, 9);
            let spec = sample_nonspatial(&mut rng, &cfg);
            let out = apply_nonspatial(&img, &spec).unwrap();
            prop_assert_eq!(out.shape(), img.shape());
            prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
