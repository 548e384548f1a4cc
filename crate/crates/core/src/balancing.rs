//! Long-tail handling: an equal-per-class validation split, resampling every
//! class to a common depth while keeping every class (maximum breadth), and a
//! sweep that picks the depth with the best macro validation accuracy.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::manifest::{DatasetManifest, Record, Split};

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationSplit {
    pub train: DatasetManifest,
    pub val: DatasetManifest,
    /// Classes too small to contribute validation images.
    pub warnings: Vec<String>,
}

/// Moves `per_class_count` seeded-random images of every class into a
/// validation split. Classes with no more than `per_class_count` images stay
/// entirely in train and are reported in `warnings`.
pub fn make_validation_split(manifest: &DatasetManifest, per_class_count: usize, seed: u64) -> Result<ValidationSplit> {
    if per_class_count == 0 {
        return Err(Error::Config("validation images per class must be positive".into()));
    }
    if let Some(r) = manifest.records().iter().find(|r| r.split != Split::Train) {
        return Err(Error::Data(format!(
            "validation split expects only train records, found {:?} in {}",
            r.image_ref, r.split
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut to_val = BTreeSet::new();
    let mut warnings = Vec::new();
    for (label, mut idx) in manifest.by_class() {
        if idx.len() <= per_class_count {
            warnings.push(format!(
                "class {label:?} has {} images (<= {per_class_count}); kept entirely in train",
                idx.len()
            ));
            continue;
        }
        idx.shuffle(&mut rng);
        to_val.extend(idx.into_iter().take(per_class_count));
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (i, r) in manifest.records().iter().enumerate() {
        if to_val.contains(&i) {
            val.push(Record { split: Split::Val, ..r.clone() });
        } else {
            train.push(r.clone());
        }
    }
    Ok(ValidationSplit { train: manifest.derive(train), val: manifest.derive(val), warnings })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClassAction {
    Keep,
    /// Cycle through the class's images until `depth` records exist; `copies`
    /// extra records are added, each flagged for augmentation.
    Oversample { copies: usize },
    /// Keep these positions (ascending) within the class's record list.
    Undersample { indices: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingPlan {
    pub depth: usize,
    pub breadth: usize,
    pub actions: BTreeMap<String, ClassAction>,
}

impl SamplingPlan {
    /// Plans resampling of every class in `train` to exactly `depth` records.
    pub fn new(train: &DatasetManifest, depth: usize, seed: u64) -> Result<Self> {
        if depth == 0 {
            return Err(Error::Config("resampling depth must be positive".into()));
        }
        let classes = train.by_class();
        if classes.is_empty() {
            return Err(Error::Data("cannot resample an empty manifest".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut actions = BTreeMap::new();
        for (label, idx) in &classes {
            let n = idx.len();
            let action = if n == depth {
                ClassAction::Keep
            } else if n < depth {
                ClassAction::Oversample { copies: depth - n }
            } else {
                let mut keep = index::sample(&mut rng, n, depth).into_vec();
                keep.sort_unstable();
                ClassAction::Undersample { indices: keep }
            };
            actions.insert(label.to_string(), action);
        }
        Ok(Self { depth, breadth: classes.len(), actions })
    }

    pub fn apply(&self, train: &DatasetManifest) -> Result<DatasetManifest> {
        let classes = train.by_class();
        if classes.len() != self.breadth || classes.keys().any(|k| !self.actions.contains_key(*k)) {
            return Err(Error::Data("sampling plan does not match the manifest's classes".into()));
        }
        let records = train.records();
        let mut out = Vec::with_capacity(self.depth * self.breadth);
        for (label, idx) in classes {
            match &self.actions[label] {
                ClassAction::Keep => out.extend(idx.iter().map(|&i| records[i].clone())),
                ClassAction::Oversample { copies } => {
                    if idx.is_empty() {
                        return Err(Error::Data(format!("class {label:?} has no records")));
                    }
                    out.extend(idx.iter().map(|&i| records[i].clone()));
                    out.extend(idx.iter().cycle().take(*copies).map(|&i| Record { augment: true, ..records[i].clone() }));
                }
                ClassAction::Undersample { indices } => {
                    out.extend(indices.iter().map(|&k| records[idx[k]].clone()));
                }
            }
        }
        Ok(train.derive(out))
    }
}

/// Every class resampled to exactly `depth` records; no class is dropped.
pub fn resample_to_depth(train: &DatasetManifest, depth: usize, seed: u64) -> Result<DatasetManifest> {
    SamplingPlan::new(train, depth, seed)?.apply(train)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub best_depth: usize,
    /// `(depth, macro accuracy)` in ascending depth order.
    pub table: Vec<(usize, f64)>,
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("depth,macro_accuracy\n");
        for (d, a) in &self.table {
            let _ = writeln!(out, "{d},{a}");
        }
        out
    }
}

/// Trains one model per depth and keeps the depth with the highest macro
/// validation accuracy. Ties go to the smaller depth.
pub fn depth_sweep<M>(
    depths: &[usize],
    mut train_fn: impl FnMut(usize) -> Result<M>,
    mut eval_fn: impl FnMut(&M) -> Result<f64>,
) -> Result<SweepResult> {
    if depths.is_empty() {
        return Err(Error::Config("depth sweep needs at least one depth".into()));
    }
    let mut sorted = depths.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Config(format!("depths must be distinct: {depths:?}")));
    }
    if sorted[0] == 0 {
        return Err(Error::Config("depths must be positive".into()));
    }
    let wrap = |depth: usize| move |e: Error| Error::Sweep { depth, source: Box::new(e) };
    let mut table = Vec::with_capacity(sorted.len());
    for &depth in &sorted {
        let model = train_fn(depth).map_err(wrap(depth))?;
        let acc = eval_fn(&model).map_err(wrap(depth))?;
        table.push((depth, acc));
    }
    let mut best = table[0];
    for &(d, a) in &table[1..] {
        if a > best.1 {
            best = (d, a);
        }
    }
    Ok(SweepResult { best_depth: best.0, table })
}

/// Powers of two from 4 to 512, each clipped to the largest class size,
/// deduplicated.
pub fn default_depth_grid(max_class_size: usize) -> Vec<usize> {
    let mut grid: Vec<usize> = (2..=9).map(|p| (1usize << p).min(max_class_size.max(1))).collect();
    grid.dedup();
    grid
}
