//! Procedurally generated "product" images for desk-scale experiments.
//!
//! Each class is a fixed texture (pattern, frequency, orientation, color
//! pair). Instances vary by pattern phase, global tint, brightness and pixel
//! noise, so raw pixel statistics are a poor guide to the class while the
//! texture is a reliable one.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::augment::save_png;
use crate::error::{Error, Result};
use crate::manifest::{DatasetManifest, Record, Split};
use crate::tensor::ImageTensor;

const PATTERNS: usize = 5;

const PALETTE: [[f64; 3]; 6] = [
    [0.85, 0.20, 0.20],
    [0.20, 0.65, 0.25],
    [0.20, 0.30, 0.85],
    [0.90, 0.80, 0.20],
    [0.15, 0.15, 0.15],
    [0.90, 0.90, 0.90],
];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub min_class_size: usize,
    pub max_class_size: usize,
    pub height: usize,
    pub width: usize,
    /// Per-pixel Gaussian noise standard deviation.
    pub noise: f64,
    /// Standard deviation of the per-image additive tint per channel.
    pub tint: f64,
    /// Test images per class, capped at a third of the class.
    pub test_per_class: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_classes: 20,
            min_class_size: 3,
            max_class_size: 200,
            height: 16,
            width: 16,
            noise: 0.06,
            tint: 0.12,
            test_per_class: 10,
            seed: 0,
        }
    }
}

/// Geometric long-tailed class sizes from `max` (class 0) down to `min`.
pub fn class_sizes(num_classes: usize, min: usize, max: usize) -> Vec<usize> {
    if num_classes == 1 {
        return vec![max];
    }
    let ratio = min as f64 / max as f64;
    (0..num_classes)
        .map(|c| {
            let t = c as f64 / (num_classes - 1) as f64;
            ((max as f64 * ratio.powf(t)).round() as usize).clamp(min, max)
        })
        .collect()
}

pub fn class_label(class: usize) -> String {
    format!("product_{class:02}")
}

/// Texture intensity in `[0, 1]` of `class` at pixel (y, x) for `phase`.
fn texture(class: usize, y: f64, x: f64, h: f64, w: f64, phase: f64) -> f64 {
    let pattern = class % PATTERNS;
    let freq = if (class / PATTERNS).is_multiple_of(2) { 2.0 } else { 3.5 };
    let (u, v) = (y / h, x / w);
    let wave = |t: f64| 0.5 + 0.5 * (2.0 * PI * freq * t + phase).sin();
    match pattern {
        0 => wave(u),
        1 => wave(v),
        2 => wave((u + v) / 2.0),
        3 => {
            let a = (2.0 * PI * freq * u + phase).sin();
            let b = (2.0 * PI * freq * v + phase).sin();
            if a * b >= 0.0 { 1.0 } else { 0.0 }
        }
        _ => {
            let r = ((u - 0.5).powi(2) + (v - 0.5).powi(2)).sqrt();
            wave(2.0 * r)
        }
    }
}

fn colors(class: usize) -> ([f64; 3], [f64; 3]) {
    let k = class / (2 * PATTERNS);
    let a = PALETTE[k % PALETTE.len()];
    let b = PALETTE[(k + 3) % PALETTE.len()];
    (a, b)
}

/// One instance of `class`, values in `[0, 1]`.
pub fn render(class: usize, spec: &SyntheticSpec, rng: &mut impl Rng) -> Result<ImageTensor> {
    let (h, w) = (spec.height, spec.width);
    let (ca, cb) = colors(class);
    let phase = rng.random_range(0.0..2.0 * PI);
    let brightness = rng.random_range(0.75..1.25);
    let tint_dist = Normal::new(0.0, spec.tint.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let noise_dist = Normal::new(0.0, spec.noise.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let tint: [f64; 3] = std::array::from_fn(|_| tint_dist.sample(rng));
    let mut data = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            let t = texture(class, y as f64, x as f64, h as f64, w as f64, phase);
            for c in 0..3 {
                let v = (ca[c] * t + cb[c] * (1.0 - t)) * brightness + tint[c] + noise_dist.sample(rng);
                data.push(v.clamp(0.0, 1.0) as f32);
            }
        }
    }
    ImageTensor::new(h, w, 3, data)
}

/// Renders the dataset as PNG files under `dir` and returns the manifest
/// (train and test records, paths relative to `dir`). Also writes
/// `dir/manifest.csv`.
pub fn generate(dir: &Path, spec: &SyntheticSpec) -> Result<DatasetManifest> {
    if spec.num_classes == 0 || spec.min_class_size == 0 || spec.min_class_size > spec.max_class_size {
        return Err(Error::Config(format!(
            "synthetic dataset needs classes > 0 and 0 < min <= max class size, got {spec:?}"
        )));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let sizes = class_sizes(spec.num_classes, spec.min_class_size, spec.max_class_size);
    let mut records = Vec::new();
    for (class, &n) in sizes.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(class as u64);
        let n_test = spec.test_per_class.min(n / 3);
        for i in 0..n {
            let image = render(class, spec, &mut rng)?;
            let name = format!("{}_{i:03}.png", class_label(class));
            save_png(&image, &dir.join(&name))?;
            let split = if i < n_test { Split::Test } else { Split::Train };
            records.push(Record::new(name, class_label(class), split));
        }
    }
    let manifest = DatasetManifest::new(records)?.with_base_dir(dir);
    manifest.write(&dir.join("manifest.csv"))?;
    Ok(manifest)
}
