//! Image decoding and augmentation.
//!
//! A policy is an ordered list of stochastic operations, each applied with its
//! own probability. The textual form used in config files is a comma-separated
//! list, parameters separated by colons:
//!
//! ```text
//! flip:P, crop:P:MIN_SCALE, color:P:BRIGHTNESS:CONTRAST, blur:P:MAX_SIGMA
//! ```
//!
//! `none` (or an empty string) is the identity policy.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::imageops::FilterType;
use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::manifest::{DatasetManifest, Record};
use crate::tensor::ImageTensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Augmentation {
    /// Horizontal mirror.
    Flip { p: f64 },
    /// Random square-ish crop covering `[min_scale, 1]` of each side, resized
    /// back to the input size.
    CropJitter { p: f64, min_scale: f64 },
    /// Multiplicative brightness in `1 ± brightness`, contrast around the
    /// image mean in `1 ± contrast`. Output clamped to `[0, 1]`.
    ColorJitter { p: f64, brightness: f64, contrast: f64 },
    /// Gaussian blur with sigma drawn from `[0.1, max_sigma]`.
    Blur { p: f64, max_sigma: f64 },
}

impl Augmentation {
    fn probability(&self) -> f64 {
        match *self {
            Augmentation::Flip { p }
            | Augmentation::CropJitter { p, .. }
            | Augmentation::ColorJitter { p, .. }
            | Augmentation::Blur { p, .. } => p,
        }
    }

    fn validate(&self) -> Result<()> {
        let p = self.probability();
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Config(format!("augmentation probability {p} outside [0, 1]")));
        }
        let ok = match *self {
            Augmentation::Flip { .. } => true,
            Augmentation::CropJitter { min_scale, .. } => min_scale > 0.0 && min_scale <= 1.0,
            Augmentation::ColorJitter { brightness, contrast, .. } => {
                (0.0..1.0).contains(&brightness) && (0.0..1.0).contains(&contrast)
            }
            Augmentation::Blur { max_sigma, .. } => max_sigma >= 0.1 && max_sigma.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("augmentation parameters out of range: {self}")))
        }
    }

    /// Applies the operation unconditionally.
    pub fn apply(&self, image: &ImageTensor, rng: &mut dyn RngCore) -> ImageTensor {
        match *self {
            Augmentation::Flip { .. } => flip_horizontal(image),
            Augmentation::CropJitter { min_scale, .. } => {
                let sy = rng.random_range(min_scale..=1.0);
                let sx = rng.random_range(min_scale..=1.0);
                let h = image.height() as f64 * sy;
                let w = image.width() as f64 * sx;
                let y0 = rng.random_range(0.0..=(image.height() as f64 - h));
                let x0 = rng.random_range(0.0..=(image.width() as f64 - w));
                crop_resize(image, y0, x0, h, w)
            }
            Augmentation::ColorJitter { brightness, contrast, .. } => {
                let b = 1.0 + rng.random_range(-brightness..=brightness);
                let c = 1.0 + rng.random_range(-contrast..=contrast);
                color_jitter(image, b as f32, c as f32)
            }
            Augmentation::Blur { max_sigma, .. } => {
                let sigma = rng.random_range(0.1..=max_sigma);
                gaussian_blur(image, sigma)
            }
        }
    }
}

impl fmt::Display for Augmentation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Augmentation::Flip { p } => write!(f, "flip:{p}"),
            Augmentation::CropJitter { p, min_scale } => write!(f, "crop:{p}:{min_scale}"),
            Augmentation::ColorJitter { p, brightness, contrast } => write!(f, "color:{p}:{brightness}:{contrast}"),
            Augmentation::Blur { p, max_sigma } => write!(f, "blur:{p}:{max_sigma}"),
        }
    }
}

impl FromStr for Augmentation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').map(str::trim).collect();
        let num = |i: usize| -> Result<f64> {
            parts
                .get(i)
                .ok_or_else(|| Error::Config(format!("augmentation {s:?} is missing parameter {i}")))?
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("augmentation {s:?}: {e}")))
        };
        let (aug, arity) = match parts[0] {
            "flip" => (Augmentation::Flip { p: num(1)? }, 2),
            "crop" => (Augmentation::CropJitter { p: num(1)?, min_scale: num(2)? }, 3),
            "color" => (Augmentation::ColorJitter { p: num(1)?, brightness: num(2)?, contrast: num(3)? }, 4),
            "blur" => (Augmentation::Blur { p: num(1)?, max_sigma: num(2)? }, 3),
            other => return Err(Error::Config(format!("unknown augmentation {other:?}"))),
        };
        if parts.len() != arity {
            return Err(Error::Config(format!("augmentation {s:?} takes {} parameters", arity - 1)));
        }
        aug.validate()?;
        Ok(aug)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AugmentationPolicy {
    pub ops: Vec<Augmentation>,
}

impl AugmentationPolicy {
    pub fn identity() -> Self {
        Self { ops: Vec::new() }
    }

    /// Training default: flip, crop jitter, color jitter, light blur.
    pub fn training_default() -> Self {
        Self {
            ops: vec![
                Augmentation::Flip { p: 0.5 },
                Augmentation::CropJitter { p: 0.8, min_scale: 0.8 },
                Augmentation::ColorJitter { p: 0.8, brightness: 0.2, contrast: 0.2 },
                Augmentation::Blur { p: 0.2, max_sigma: 1.0 },
            ],
        }
    }

    /// Gallery enrollment default: flip, two crop jitters, brightness jitter.
    pub fn enrollment_default() -> Self {
        Self {
            ops: vec![
                Augmentation::Flip { p: 1.0 },
                Augmentation::CropJitter { p: 1.0, min_scale: 0.8 },
                Augmentation::CropJitter { p: 1.0, min_scale: 0.8 },
                Augmentation::ColorJitter { p: 1.0, brightness: 0.2, contrast: 0.0 },
            ],
        }
    }

    pub fn is_identity(&self) -> bool {
        self.ops.is_empty()
    }

    /// Applies each operation with its probability, in order.
    pub fn apply(&self, image: &ImageTensor, rng: &mut dyn RngCore) -> ImageTensor {
        let mut out = image.clone();
        for op in &self.ops {
            if rng.random_bool(op.probability()) {
                out = op.apply(&out, rng);
            }
        }
        out
    }

    /// The `k`-th enrollment view (k ≥ 1): operation `(k - 1) mod len`,
    /// applied unconditionally. The identity policy returns the input.
    pub fn view(&self, k: usize, image: &ImageTensor, rng: &mut dyn RngCore) -> ImageTensor {
        if self.ops.is_empty() || k == 0 {
            return image.clone();
        }
        self.ops[(k - 1) % self.ops.len()].apply(image, rng)
    }
}

impl fmt::Display for AugmentationPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.ops.is_empty() {
            return f.write_str("none");
        }
        let parts: Vec<String> = self.ops.iter().map(ToString::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

impl FromStr for AugmentationPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() || s == "none" {
            return Ok(Self::identity());
        }
        Ok(Self { ops: s.split(',').map(str::parse).collect::<Result<_>>()? })
    }
}

pub fn flip_horizontal(image: &ImageTensor) -> ImageTensor {
    let mut out = image.clone();
    let w = image.width();
    for y in 0..image.height() {
        for x in 0..w {
            for c in 0..image.channels() {
                out.set(y, x, c, image.get(y, w - 1 - x, c));
            }
        }
    }
    out
}

/// Bilinear resample of the window `[y0, y0 + h) × [x0, x0 + w)` (pixel units,
/// fractional allowed) back to the full image size.
pub fn crop_resize(image: &ImageTensor, y0: f64, x0: f64, h: f64, w: f64) -> ImageTensor {
    let (oh, ow, ch) = (image.height(), image.width(), image.channels());
    let mut out = image.clone();
    let sample = |pos: f64, max: usize| -> (usize, usize, f32) {
        let p = pos.clamp(0.0, (max - 1) as f64);
        let i0 = p.floor() as usize;
        let i1 = (i0 + 1).min(max - 1);
        (i0, i1, (p - i0 as f64) as f32)
    };
    for y in 0..oh {
        let sy = y0 + (y as f64 + 0.5) * h / oh as f64 - 0.5;
        let (y_lo, y_hi, fy) = sample(sy, oh);
        for x in 0..ow {
            let sx = x0 + (x as f64 + 0.5) * w / ow as f64 - 0.5;
            let (x_lo, x_hi, fx) = sample(sx, ow);
            for c in 0..ch {
                let top = image.get(y_lo, x_lo, c) * (1.0 - fx) + image.get(y_lo, x_hi, c) * fx;
                let bottom = image.get(y_hi, x_lo, c) * (1.0 - fx) + image.get(y_hi, x_hi, c) * fx;
                out.set(y, x, c, top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    out
}

pub fn color_jitter(image: &ImageTensor, brightness: f32, contrast: f32) -> ImageTensor {
    let mut out = image.clone();
    let mean = image.data().iter().sum::<f32>() / image.data().len() as f32;
    for v in out.data_mut() {
        *v = (((*v - mean) * contrast + mean) * brightness).clamp(0.0, 1.0);
    }
    out
}

/// Separable Gaussian blur with edge clamping.
pub fn gaussian_blur(image: &ImageTensor, sigma: f64) -> ImageTensor {
    let radius = (2.0 * sigma).ceil().max(1.0) as isize;
    let weights: Vec<f32> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp() as f32).collect();
    let total: f32 = weights.iter().sum();
    let weights: Vec<f32> = weights.iter().map(|w| w / total).collect();
    let (h, w, ch) = (image.height() as isize, image.width() as isize, image.channels());
    let pass = |src: &ImageTensor, horizontal: bool| {
        let mut dst = src.clone();
        for y in 0..h {
            for x in 0..w {
                for c in 0..ch {
                    let mut acc = 0.0;
                    for (k, wt) in weights.iter().enumerate() {
                        let off = k as isize - radius;
                        let (yy, xx) = if horizontal {
                            (y, (x + off).clamp(0, w - 1))
                        } else {
                            ((y + off).clamp(0, h - 1), x)
                        };
                        acc += wt * src.get(yy as usize, xx as usize, c);
                    }
                    dst.set(y as usize, x as usize, c, acc);
                }
            }
        }
        dst
    };
    pass(&pass(image, true), false)
}

/// Decodes an image file into a tensor of the given size, values in `[0, 1]`.
/// Three channels load as RGB, one as luma.
pub fn load_image(path: &Path, height: usize, width: usize, channels: usize) -> Result<ImageTensor> {
    let img = image::open(path).map_err(|e| Error::Data(format!("cannot read image {}: {e}", path.display())))?;
    let (h, w) = (height as u32, width as u32);
    let data: Vec<f32> = match channels {
        3 => {
            let rgb = img.to_rgb8();
            let rgb = if rgb.dimensions() == (w, h) { rgb } else { image::imageops::resize(&rgb, w, h, FilterType::Triangle) };
            rgb.into_raw().into_iter().map(|v| v as f32 / 255.0).collect()
        }
        1 => {
            let luma = img.to_luma8();
            let luma = if luma.dimensions() == (w, h) { luma } else { image::imageops::resize(&luma, w, h, FilterType::Triangle) };
            luma.into_raw().into_iter().map(|v| v as f32 / 255.0).collect()
        }
        other => return Err(Error::Config(format!("cannot decode images into {other} channels"))),
    };
    ImageTensor::new(height, width, channels, data)
}

/// Writes a tensor with values in `[0, 1]` as an 8-bit PNG.
pub fn save_png(image: &ImageTensor, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = image.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let (w, h) = (image.width() as u32, image.height() as u32);
    let color = match image.channels() {
        1 => image::ExtendedColorType::L8,
        3 => image::ExtendedColorType::Rgb8,
        n => return Err(Error::Shape(format!("cannot write a {n}-channel PNG"))),
    };
    image::save_buffer(path, &bytes, w, h, color).map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))
}

/// Decoded images keyed by resolved path.
#[derive(Debug, Clone)]
pub struct ImageCache {
    height: usize,
    width: usize,
    channels: usize,
    images: HashMap<PathBuf, ImageTensor>,
}

impl ImageCache {
    pub fn new((height, width, channels): (usize, usize, usize)) -> Self {
        Self { height, width, channels, images: HashMap::new() }
    }

    pub fn load(&mut self, path: &Path) -> Result<&ImageTensor> {
        if !self.images.contains_key(path) {
            let img = load_image(path, self.height, self.width, self.channels)?;
            self.images.insert(path.to_path_buf(), img);
        }
        Ok(&self.images[path])
    }

    pub fn get(&self, path: &Path) -> Option<&ImageTensor> {
        self.images.get(path)
    }

    /// Decodes every record of `manifest`.
    pub fn preload(&mut self, manifest: &DatasetManifest) -> Result<()> {
        for r in manifest.records() {
            self.load(&manifest.resolve(r))?;
        }
        Ok(())
    }
}

/// Loads `record` and applies `policy` when the record is flagged for
/// augmentation, or otherwise with probability `augment_all_prob`.
pub fn load_and_augment(
    cache: &mut ImageCache,
    manifest: &DatasetManifest,
    record: &Record,
    policy: &AugmentationPolicy,
    augment_all_prob: f64,
    rng: &mut dyn RngCore,
) -> Result<ImageTensor> {
    let path = manifest.resolve(record);
    let base = cache
        .load(&path)
        .map_err(|e| Error::Data(format!("record {:?} ({}): {e}", record.image_ref, record.class_label)))?;
    Ok(maybe_augment(base, record, policy, augment_all_prob, rng))
}

/// Applies `policy` to an already decoded image under the same rule as
/// [`load_and_augment`].
pub fn maybe_augment(
    base: &ImageTensor,
    record: &Record,
    policy: &AugmentationPolicy,
    augment_all_prob: f64,
    rng: &mut dyn RngCore,
) -> ImageTensor {
    let flagged = record.augment || (augment_all_prob > 0.0 && rng.random_bool(augment_all_prob.min(1.0)));
    if flagged && !policy.is_identity() {
        policy.apply(base, rng)
    } else {
        base.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::Split;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gradient_image() -> ImageTensor {
        let mut data = Vec::new();
        for y in 0..8 {
            for x in 0..8 {
                data.extend([x as f32 / 7.0, y as f32 / 7.0, 0.5]);
            }
        }
        ImageTensor::new(8, 8, 3, data).unwrap()
    }

    #[test]
    fn policy_text_round_trip() {
        let p = AugmentationPolicy::training_default();
        assert_eq!(p.to_string().parse::<AugmentationPolicy>().unwrap(), p);
        assert_eq!("none".parse::<AugmentationPolicy>().unwrap(), AugmentationPolicy::identity());
        assert!("flip".parse::<AugmentationPolicy>().is_err());
        assert!("spin:0.5".parse::<AugmentationPolicy>().is_err());
        assert!("flip:1.5".parse::<AugmentationPolicy>().is_err());
        assert!("crop:0.5:0.8:1".parse::<AugmentationPolicy>().is_err());
    }

    #[test]
    fn flip_changes_asymmetric_image() {
        let img = gradient_image();
        let flipped = flip_horizontal(&img);
        assert_ne!(flipped, img);
        assert_eq!(flipped.get(2, 0, 0), img.get(2, 7, 0));
        assert_eq!(flip_horizontal(&flipped), img);
    }

    #[test]
    fn full_window_crop_is_identity() {
        let img = gradient_image();
        let out = crop_resize(&img, 0.0, 0.0, 8.0, 8.0);
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn blur_preserves_constant_images() {
        let img = ImageTensor::filled(6, 6, 3, 0.25).unwrap();
        let out = gaussian_blur(&img, 1.3);
        assert!(out.data().iter().all(|v| (v - 0.25).abs() < 1e-6));
    }

    #[test]
    fn identity_policy_and_views() {
        let img = gradient_image();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(AugmentationPolicy::identity().apply(&img, &mut rng), img);
        assert_eq!(AugmentationPolicy::identity().view(3, &img, &mut rng), img);
        let enroll = AugmentationPolicy::enrollment_default();
        assert_eq!(enroll.view(1, &img, &mut rng), flip_horizontal(&img));
    }

    #[test]
    fn load_and_augment_respects_flags() {
        let dir = tempfile::tempdir().unwrap();
        save_png(&gradient_image(), &dir.path().join("a.png")).unwrap();
        let plain = Record::new("a.png", "c", Split::Train);
        let flagged = Record { augment: true, ..plain.clone() };
        let m = DatasetManifest::new(vec![plain.clone(), flagged.clone()]).unwrap().with_base_dir(dir.path());
        let mut cache = ImageCache::new((8, 8, 3));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let flip = AugmentationPolicy { ops: vec![Augmentation::Flip { p: 1.0 }] };

        let a = load_and_augment(&mut cache, &m, &plain, &flip, 0.0, &mut rng).unwrap();
        let b = load_and_augment(&mut cache, &m, &plain, &flip, 0.0, &mut rng).unwrap();
        assert_eq!(a, b);
        let ident = load_and_augment(&mut cache, &m, &flagged, &AugmentationPolicy::identity(), 0.0, &mut rng).unwrap();
        assert_eq!(ident, a);
        let f = load_and_augment(&mut cache, &m, &flagged, &flip, 0.0, &mut rng).unwrap();
        assert_ne!(f, a);
    }

    #[test]
    fn unreadable_image_names_the_record() {
        let m = DatasetManifest::new(vec![Record::new("missing.png", "soda", Split::Train)]).unwrap();
        let mut cache = ImageCache::new((8, 8, 3));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let err = load_and_augment(&mut cache, &m, &m.records()[0], &AugmentationPolicy::identity(), 0.0, &mut rng).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
        assert!(err.to_string().contains("missing.png"));
    }

    #[test]
    fn png_round_trip_is_exact_on_8bit_values() {
        let dir = tempfile::tempdir().unwrap();
        let data: Vec<f32> = (0..4 * 4 * 3).map(|i| (i * 5) as f32 / 255.0).collect();
        let img = ImageTensor::new(4, 4, 3, data).unwrap();
        let path = dir.path().join("x.png");
        save_png(&img, &path).unwrap();
        assert_eq!(load_image(&path, 4, 4, 3).unwrap(), img);
    }
}
