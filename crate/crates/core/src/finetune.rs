//! Metric-learning finetuning: mini-batch AdamW over a balanced manifest with
//! an ArcFace head and blockwise learning rates.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::arcface::{ArcFaceHead, DEFAULT_MARGIN, DEFAULT_SCALE};
use crate::augment::{maybe_augment, AugmentationPolicy, ImageCache};
use crate::balancing::{depth_sweep, resample_to_depth, SweepResult};
use crate::checkpoint::Checkpoint;
use crate::encoder::{EncoderConfig, Gradients, ImageEncoder, VitEncoder};
use crate::error::{Error, Result};
use crate::evalharness::EvalReport;
use crate::gallery::Gallery;
use crate::kvconfig::KvConfig;
use crate::lr_schedule::{build_param_groups, BlockLrSchedule, DEFAULT_DECAY, DEFAULT_TOP_LR};
use crate::manifest::DatasetManifest;
use crate::optim::{AdamW, AdamWConfig};

/// Per-class record count used for training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Depth {
    Fixed(usize),
    Unbalanced,
}

impl std::fmt::Display for Depth {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Depth::Fixed(d) => write!(f, "{d}"),
            Depth::Unbalanced => f.write_str("unbalanced"),
        }
    }
}

impl FromStr for Depth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "unbalanced" {
            return Ok(Depth::Unbalanced);
        }
        match s.parse::<usize>() {
            Ok(d) if d > 0 => Ok(Depth::Fixed(d)),
            _ => Err(Error::Config(format!("depth must be a positive integer or \"unbalanced\", got {s:?}"))),
        }
    }
}

/// How every group's rate evolves over training steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrTimeSchedule {
    Constant,
    /// Linear decay from the scheduled rate to zero at the last step.
    Linear,
}

impl LrTimeSchedule {
    fn scale(self, step: usize, total: usize) -> f64 {
        match self {
            LrTimeSchedule::Constant => 1.0,
            LrTimeSchedule::Linear => 1.0 - step as f64 / total as f64,
        }
    }
}

impl std::fmt::Display for LrTimeSchedule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LrTimeSchedule::Constant => "constant",
            LrTimeSchedule::Linear => "linear",
        })
    }
}

impl FromStr for LrTimeSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(Self::Constant),
            "linear" => Ok(Self::Linear),
            other => Err(Error::Config(format!("unknown lr_time {other:?} (constant, linear)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub top_lr: f64,
    pub lr_decay: f64,
    pub lr_time: LrTimeSchedule,
    pub adamw: AdamWConfig,
    pub seed: u64,
    pub augment: AugmentationPolicy,
    /// Probability of augmenting a record that is not flagged.
    pub augment_all_prob: f64,
    pub margin: f64,
    pub scale: f64,
    pub depth: Depth,
    /// Validation images held out per class.
    pub val_per_class: usize,
    /// Augmented views enrolled per validation gallery entry.
    pub val_aug: usize,
    /// Written after every completed epoch when set.
    pub checkpoint_path: Option<PathBuf>,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            top_lr: DEFAULT_TOP_LR,
            lr_decay: DEFAULT_DECAY,
            lr_time: LrTimeSchedule::Constant,
            adamw: AdamWConfig::default(),
            seed: 0,
            augment: AugmentationPolicy::training_default(),
            augment_all_prob: 0.5,
            margin: DEFAULT_MARGIN,
            scale: DEFAULT_SCALE,
            depth: Depth::Unbalanced,
            val_per_class: 5,
            val_aug: 0,
            checkpoint_path: None,
        }
    }
}

pub const FINETUNE_KEYS: &[&str] = &[
    "epochs",
    "batch_size",
    "top_lr",
    "lr_decay",
    "lr_time",
    "weight_decay",
    "beta1",
    "beta2",
    "eps",
    "seed",
    "augment",
    "augment_all_prob",
    "margin",
    "scale",
    "depth",
    "val_per_class",
    "val_aug",
];

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.augment_all_prob) {
            return Err(Error::Config(format!("augment_all_prob must lie in [0, 1], got {}", self.augment_all_prob)));
        }
        if self.val_per_class == 0 {
            return Err(Error::Config("val_per_class must be at least 1".into()));
        }
        self.adamw.validate()?;
        BlockLrSchedule::new(1, self.top_lr, self.lr_decay)?;
        crate::arcface::check_margin_scale(self.margin, self.scale)?;
        Ok(())
    }

    pub fn write_kv(&self, kv: &mut KvConfig) {
        kv.set("epochs", self.epochs);
        kv.set("batch_size", self.batch_size);
        kv.set("top_lr", self.top_lr);
        kv.set("lr_decay", self.lr_decay);
        kv.set("lr_time", self.lr_time);
        kv.set("weight_decay", self.adamw.weight_decay);
        kv.set("beta1", self.adamw.beta1);
        kv.set("beta2", self.adamw.beta2);
        kv.set("eps", self.adamw.eps);
        kv.set("seed", self.seed);
        kv.set("augment", &self.augment);
        kv.set("augment_all_prob", self.augment_all_prob);
        kv.set("margin", self.margin);
        kv.set("scale", self.scale);
        kv.set("depth", self.depth);
        kv.set("val_per_class", self.val_per_class);
        kv.set("val_aug", self.val_aug);
    }

    /// Overrides defaults with whichever finetune keys `kv` contains; other
    /// keys are ignored. The result is validated.
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let mut c = Self::default();
        macro_rules! take {
            ($key:literal => $($field:ident).+) => {
                if let Some(v) = kv.parse_value($key)? {
                    c.$($field).+ = v;
                }
            };
        }
        take!("epochs" => epochs);
        take!("batch_size" => batch_size);
        take!("top_lr" => top_lr);
        take!("lr_decay" => lr_decay);
        take!("lr_time" => lr_time);
        take!("weight_decay" => adamw.weight_decay);
        take!("beta1" => adamw.beta1);
        take!("beta2" => adamw.beta2);
        take!("eps" => adamw.eps);
        take!("seed" => seed);
        take!("augment" => augment);
        take!("augment_all_prob" => augment_all_prob);
        take!("margin" => margin);
        take!("scale" => scale);
        take!("depth" => depth);
        take!("val_per_class" => val_per_class);
        take!("val_aug" => val_aug);
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingHistory {
    /// Mean training loss per epoch.
    pub loss: Vec<f64>,
    /// Gallery-based macro validation accuracy per epoch, when a validation
    /// split with queries was supplied.
    pub val_macro_acc: Vec<Option<f64>>,
    pub wall_time: Vec<Duration>,
}

impl TrainingHistory {
    pub fn epochs(&self) -> usize {
        self.loss.len()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,val_macro_acc\n");
        for (i, (loss, acc)) in self.loss.iter().zip(&self.val_macro_acc).enumerate() {
            let acc = acc.map(|a| a.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{loss},{acc}", i + 1);
        }
        out
    }
}

/// Class labels in sorted order; position = head column.
pub fn class_index(train: &DatasetManifest) -> Vec<String> {
    train.class_labels()
}

/// Balances `train` as configured.
pub fn balanced_train(train: &DatasetManifest, config: &FinetuneConfig) -> Result<DatasetManifest> {
    match config.depth {
        Depth::Fixed(d) => resample_to_depth(train, d, config.seed),
        Depth::Unbalanced => Ok(train.clone()),
    }
}

/// Macro accuracy of 1-NN over `val`: the first image of each class is
/// enrolled and the remaining images are classified. `None` when no class
/// has a second image.
pub fn validation_accuracy(
    encoder: &dyn ImageEncoder,
    val: &DatasetManifest,
    cache: &ImageCache,
    n_aug: usize,
    seed: u64,
) -> Result<Option<f64>> {
    let classes = val.by_class();
    let mut gallery = Gallery::new(encoder.embed_dim());
    let mut queries = Vec::new();
    for (i, (label, idx)) in classes.iter().enumerate() {
        let first = &val.records()[idx[0]];
        let image = image_of(cache, val, first)?;
        let policy = AugmentationPolicy::enrollment_default();
        gallery.enroll(label, image, encoder, &policy, n_aug, seed.wrapping_add(i as u64))?;
        queries.extend(idx[1..].iter().map(|&j| &val.records()[j]));
    }
    if queries.is_empty() {
        return Ok(None);
    }
    let predictions: Vec<(String, Option<String>)> = queries
        .par_iter()
        .map(|r| {
            let m = gallery.classify(image_of(cache, val, r)?, encoder)?;
            Ok((r.class_label.clone(), Some(m.product_id)))
        })
        .collect::<Result<_>>()?;
    Ok(Some(EvalReport::from_predictions(&predictions, seed, 0)?.macro_accuracy))
}

fn image_of<'a>(
    cache: &'a ImageCache,
    manifest: &DatasetManifest,
    record: &crate::manifest::Record,
) -> Result<&'a crate::tensor::ImageTensor> {
    cache
        .get(&manifest.resolve(record))
        .ok_or_else(|| Error::Data(format!("record {:?} was not loaded", record.image_ref)))
}

/// Sub-seed stream for the augmentation randomness of one sample; a pure
/// function of (seed, epoch, position) so parallel loading stays
/// deterministic.
fn sample_rng(seed: u64, epoch: usize, position: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_a11f_0000_0001);
    rng.set_stream(((epoch as u64) << 32) | position as u64);
    rng
}

fn parameters_finite(encoder: &VitEncoder, head: &ArcFaceHead) -> bool {
    encoder.store().iter().all(|(_, p)| p.data.iter().all(|v| v.is_finite()))
        && head.weights().iter().all(|v| v.is_finite())
}

/// Trains `encoder` and `head` in place. `head` must have one column per
/// class of `train`, in [`class_index`] order. On a non-finite loss both are
/// restored to the last completed epoch and the error names it.
pub fn finetune(
    encoder: &mut VitEncoder,
    head: &mut ArcFaceHead,
    train: &DatasetManifest,
    val: Option<&DatasetManifest>,
    config: &FinetuneConfig,
) -> Result<TrainingHistory> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Data("train manifest is empty".into()));
    }
    let labels = class_index(train);
    if head.num_classes() != labels.len() {
        return Err(Error::Config(format!(
            "head has {} classes, train manifest has {}",
            head.num_classes(),
            labels.len()
        )));
    }
    if head.dim() != encoder.embed_dim() {
        return Err(Error::Shape(format!("head dim {} != encoder dim {}", head.dim(), encoder.embed_dim())));
    }
    head.set_margin_scale(config.margin, config.scale)?;
    let balanced = balanced_train(train, config)?;
    if config.batch_size > balanced.len() {
        return Err(Error::Config(format!(
            "batch_size {} exceeds the {} balanced training records",
            config.batch_size,
            balanced.len()
        )));
    }
    let schedule = BlockLrSchedule::new(encoder.num_blocks(), config.top_lr, config.lr_decay)?;
    let groups = build_param_groups(encoder, head, &schedule)?;
    let mut optimizer = AdamW::new(config.adamw)?;

    let mut cache = ImageCache::new(encoder.input_shape());
    cache.preload(&balanced)?;
    if let Some(v) = val {
        cache.preload(v)?;
    }
    let targets: Vec<usize> = balanced
        .records()
        .iter()
        .map(|r| labels.binary_search(&r.class_label).expect("label from the same manifest"))
        .collect();

    let steps_per_epoch = balanced.len().div_ceil(config.batch_size);
    let total_steps = steps_per_epoch * config.epochs;
    let mut order: Vec<usize> = (0..balanced.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut history = TrainingHistory { loss: Vec::new(), val_macro_acc: Vec::new(), wall_time: Vec::new() };
    let mut last_good = (encoder.clone(), head.clone());
    let mut last_good_checkpoint = None;

    for epoch in 0..config.epochs {
        let started = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let step = epoch * steps_per_epoch + b;
            let enc = &*encoder;
            let forward: Vec<_> = batch
                .par_iter()
                .enumerate()
                .map(|(k, &i)| {
                    let record = &balanced.records()[i];
                    let mut rng = sample_rng(config.seed, epoch, b * config.batch_size + k);
                    let image = maybe_augment(
                        image_of(&cache, &balanced, record)?,
                        record,
                        &config.augment,
                        config.augment_all_prob,
                        &mut rng,
                    );
                    enc.forward(&image)
                })
                .collect::<Result<_>>()?;
            let embeddings: Vec<Vec<f64>> = forward.iter().map(|(e, _)| e.values().to_vec()).collect();
            let batch_targets: Vec<usize> = batch.iter().map(|&i| targets[i]).collect();
            let lg = head.loss_and_grad(&embeddings, &batch_targets)?;
            let abort = |encoder: &mut VitEncoder, head: &mut ArcFaceHead, last_good: (VitEncoder, ArcFaceHead)| {
                *encoder = last_good.0;
                *head = last_good.1;
                Error::NonFiniteLoss {
                    epoch: epoch + 1,
                    step: b + 1,
                    last_good_epoch: (epoch > 0).then_some(epoch),
                    last_good_checkpoint: last_good_checkpoint.clone(),
                }
            };
            if !lg.loss.is_finite() {
                return Err(abort(encoder, head, last_good));
            }
            loss_sum += lg.loss * batch.len() as f64;
            let per_sample: Vec<Gradients> = forward
                .par_iter()
                .zip(&lg.d_embeddings)
                .map(|((_, trace), d)| {
                    let mut g = enc.zero_grads();
                    enc.backward(trace, d, &mut g)?;
                    Ok(g)
                })
                .collect::<Result<_>>()?;
            let mut grads = encoder.zero_grads();
            for g in &per_sample {
                grads.add_assign(g);
            }
            optimizer.step(
                &groups,
                config.lr_time.scale(step, total_steps),
                encoder,
                &grads,
                head,
                &lg.d_weights,
            );
            if !parameters_finite(encoder, head) {
                return Err(abort(encoder, head, last_good));
            }
        }
        let val_acc = match val {
            Some(v) if !v.is_empty() => validation_accuracy(&*encoder, v, &cache, config.val_aug, config.seed)?,
            _ => None,
        };
        history.loss.push(loss_sum / balanced.len() as f64);
        history.val_macro_acc.push(val_acc);
        history.wall_time.push(started.elapsed());
        last_good = (encoder.clone(), head.clone());
        if let Some(path) = &config.checkpoint_path {
            Checkpoint::with_head(encoder.clone(), head.clone(), labels.clone())?.save(path)?;
            last_good_checkpoint = Some(path.clone());
        }
    }
    Ok(history)
}

/// Trains a fresh encoder and head per depth and keeps the depth with the
/// best final validation macro accuracy.
pub fn sweep_depth(
    encoder_config: &EncoderConfig,
    train: &DatasetManifest,
    val: &DatasetManifest,
    config: &FinetuneConfig,
    depths: &[usize],
) -> Result<SweepResult> {
    if val.is_empty() {
        return Err(Error::Data("depth sweep needs a non-empty validation split".into()));
    }
    let num_classes = class_index(train).len();
    depth_sweep(
        depths,
        |depth| {
            let mut encoder = VitEncoder::new(encoder_config.clone())?;
            let mut head =
                ArcFaceHead::new(encoder.embed_dim(), num_classes, config.margin, config.scale, config.seed)?;
            let run = FinetuneConfig { depth: Depth::Fixed(depth), checkpoint_path: None, ..config.clone() };
            finetune(&mut encoder, &mut head, train, None, &run)?;
            Ok(encoder)
        },
        |encoder| {
            let mut cache = ImageCache::new(encoder.input_shape());
            cache.preload(val)?;
            validation_accuracy(encoder, val, &cache, config.val_aug, config.seed)?
                .ok_or_else(|| Error::Data("validation split has no class with two or more images".into()))
        },
    )
}
