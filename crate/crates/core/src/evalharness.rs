//! Zero-shot evaluation: enroll one train image per class into a gallery,
//! classify every test image, and report micro and macro accuracy.
//!
//! Micro accuracy is correct over total test images, counting images of
//! classes that have no train image (unevaluable) as errors. Macro accuracy
//! is the unweighted mean of per-class accuracy over evaluable classes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::augment::{AugmentationPolicy, ImageCache};
use crate::encoder::ImageEncoder;
use crate::error::{Error, Result};
use crate::gallery::Gallery;
use crate::manifest::DatasetManifest;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    /// Seeded-random train image per class.
    Random,
    /// First train image per class in manifest order.
    First,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub n_augmentations: usize,
    pub seed: u64,
    pub selection: Selection,
    pub policy: AugmentationPolicy,
    pub top_confusions: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            n_augmentations: 4,
            seed: 0,
            selection: Selection::Random,
            policy: AugmentationPolicy::enrollment_default(),
            top_confusions: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClassResult {
    pub class: String,
    pub n_test: usize,
    pub n_correct: usize,
}

impl ClassResult {
    pub fn accuracy(&self) -> f64 {
        self.n_correct as f64 / self.n_test as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Confusion {
    pub truth: String,
    pub predicted: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub seed: u64,
    pub micro_accuracy: f64,
    pub macro_accuracy: f64,
    /// Evaluable classes, sorted by label.
    pub per_class: Vec<ClassResult>,
    /// Test classes with no train image; every image counts as an error.
    pub unevaluable: Vec<ClassResult>,
    /// Most frequent (truth, predicted) mistakes.
    pub confusions: Vec<Confusion>,
}

impl EvalReport {
    /// Aggregates `(truth, predicted)` pairs. `predicted` is `None` when the
    /// truth class was never enrolled.
    pub fn from_predictions(
        predictions: &[(String, Option<String>)],
        seed: u64,
        top_confusions: usize,
    ) -> Result<Self> {
        if predictions.is_empty() {
            return Err(Error::Data("no test records to evaluate".into()));
        }
        let mut counts: BTreeMap<&str, (usize, usize, bool)> = BTreeMap::new();
        let mut confusions: BTreeMap<(&str, &str), usize> = BTreeMap::new();
        for (truth, pred) in predictions {
            let entry = counts.entry(truth).or_insert((0, 0, pred.is_some()));
            entry.0 += 1;
            match pred {
                Some(p) if p == truth => entry.1 += 1,
                Some(p) => *confusions.entry((truth, p)).or_default() += 1,
                None => {}
            }
        }
        let mut per_class = Vec::new();
        let mut unevaluable = Vec::new();
        for (class, (n_test, n_correct, evaluable)) in counts {
            let r = ClassResult { class: class.to_string(), n_test, n_correct };
            if evaluable {
                per_class.push(r);
            } else {
                unevaluable.push(r);
            }
        }
        let total: usize = predictions.len();
        let correct: usize = per_class.iter().map(|r| r.n_correct).sum();
        let macro_accuracy = if per_class.is_empty() {
            0.0
        } else {
            per_class.iter().map(ClassResult::accuracy).sum::<f64>() / per_class.len() as f64
        };
        let mut confusions: Vec<Confusion> = confusions
            .into_iter()
            .map(|((t, p), count)| Confusion { truth: t.to_string(), predicted: p.to_string(), count })
            .collect();
        confusions.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| (&a.truth, &a.predicted).cmp(&(&b.truth, &b.predicted))));
        confusions.truncate(top_confusions);
        Ok(Self {
            seed,
            micro_accuracy: correct as f64 / total as f64,
            macro_accuracy,
            per_class,
            unevaluable,
            confusions,
        })
    }

    pub fn total_test(&self) -> usize {
        self.per_class.iter().chain(&self.unevaluable).map(|r| r.n_test).sum()
    }

    pub fn total_correct(&self) -> usize {
        self.per_class.iter().map(|r| r.n_correct).sum()
    }

    /// Accuracy over the given classes only (macro), ignoring classes absent
    /// from the report.
    pub fn macro_accuracy_over(&self, classes: &[&str]) -> f64 {
        let rows: Vec<&ClassResult> = self.per_class.iter().filter(|r| classes.contains(&r.class.as_str())).collect();
        if rows.is_empty() {
            return 0.0;
        }
        rows.iter().map(|r| r.accuracy()).sum::<f64>() / rows.len() as f64
    }
}

/// Builds a gallery from one train image per class.
pub fn build_gallery(
    encoder: &dyn ImageEncoder,
    train: &DatasetManifest,
    cache: &mut ImageCache,
    options: &EvalOptions,
) -> Result<Gallery> {
    let classes = train.by_class();
    if classes.is_empty() {
        return Err(Error::Data("train manifest has no records to enroll".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut gallery = Gallery::new(encoder.embed_dim());
    for (i, (label, idx)) in classes.iter().enumerate() {
        let pick = match options.selection {
            Selection::First => idx[0],
            Selection::Random => *idx.choose(&mut rng).expect("non-empty class"),
        };
        let record = &train.records()[pick];
        let image = cache.load(&train.resolve(record))?.clone();
        let enroll_seed = options.seed.wrapping_add(i as u64 + 1);
        gallery.enroll(label, &image, encoder, &options.policy, options.n_augmentations, enroll_seed)?;
    }
    Ok(gallery)
}

/// Classifies every test record against `gallery`.
pub fn evaluate_gallery(
    gallery: &Gallery,
    encoder: &dyn ImageEncoder,
    test: &DatasetManifest,
    cache: &mut ImageCache,
    seed: u64,
    top_confusions: usize,
) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::Data("test manifest is empty".into()));
    }
    cache.preload(test)?;
    let cache = &*cache;
    let predictions: Vec<(String, Option<String>)> = test
        .records()
        .par_iter()
        .map(|r| {
            if !gallery.contains(&r.class_label) {
                return Ok((r.class_label.clone(), None));
            }
            let image = cache.get(&test.resolve(r)).expect("preloaded");
            let m = gallery.classify(image, encoder)?;
            Ok((r.class_label.clone(), Some(m.product_id)))
        })
        .collect::<Result<_>>()?;
    EvalReport::from_predictions(&predictions, seed, top_confusions)
}

/// Enrolls one train image per class and evaluates the whole test split.
pub fn zero_shot_eval(
    encoder: &dyn ImageEncoder,
    train: &DatasetManifest,
    test: &DatasetManifest,
    options: &EvalOptions,
) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::Data("test manifest is empty".into()));
    }
    let mut cache = ImageCache::new(encoder.input_shape());
    let gallery = build_gallery(encoder, train, &mut cache, options)?;
    evaluate_gallery(&gallery, encoder, test, &mut cache, options.seed, options.top_confusions)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Csv,
    JsonLines,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(Self::Text),
            "csv" => Ok(Self::Csv),
            "json-lines" | "jsonl" => Ok(Self::JsonLines),
            other => Err(Error::Config(format!("unknown report format {other:?} (text, csv, json-lines)"))),
        }
    }
}

pub const MICRO_ROW: &str = "__micro__";
pub const MACRO_ROW: &str = "__macro__";
pub const UNEVALUABLE: &str = "unevaluable";

pub fn render_report(report: &EvalReport, format: ReportFormat) -> String {
    let mut out = String::new();
    match format {
        ReportFormat::Text => {
            let _ = writeln!(out, "zero-shot evaluation (seed {})", report.seed);
            let _ = writeln!(
                out,
                "micro accuracy: {:.4} ({}/{})",
                report.micro_accuracy,
                report.total_correct(),
                report.total_test()
            );
            let _ = writeln!(out, "macro accuracy: {:.4} over {} classes", report.macro_accuracy, report.per_class.len());
            let _ = writeln!(out, "{:<24} {:>8} {:>10} {:>9}", "class", "n_test", "n_correct", "accuracy");
            for r in &report.per_class {
                let _ = writeln!(out, "{:<24} {:>8} {:>10} {:>9.4}", r.class, r.n_test, r.n_correct, r.accuracy());
            }
            for r in &report.unevaluable {
                let _ = writeln!(out, "{:<24} {:>8} {:>10} {:>9}", r.class, r.n_test, r.n_correct, UNEVALUABLE);
            }
            if !report.confusions.is_empty() {
                let _ = writeln!(out, "most confused:");
                for c in &report.confusions {
                    let _ = writeln!(out, "  {} -> {}: {}", c.truth, c.predicted, c.count);
                }
            }
        }
        ReportFormat::Csv => {
            let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
            let mut row = |cells: [String; 4]| w.write_record(&cells).expect("in-memory write");
            row(["class".into(), "n_test".into(), "n_correct".into(), "accuracy".into()]);
            for r in &report.per_class {
                row([r.class.clone(), r.n_test.to_string(), r.n_correct.to_string(), r.accuracy().to_string()]);
            }
            for r in &report.unevaluable {
                row([r.class.clone(), r.n_test.to_string(), r.n_correct.to_string(), UNEVALUABLE.into()]);
            }
            row([
                MICRO_ROW.into(),
                report.total_test().to_string(),
                report.total_correct().to_string(),
                report.micro_accuracy.to_string(),
            ]);
            row([MACRO_ROW.into(), report.per_class.len().to_string(), String::new(), report.macro_accuracy.to_string()]);
            out = String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8");
        }
        ReportFormat::JsonLines => {
            let summary = serde_json::json!({
                "type": "summary",
                "seed": report.seed,
                "micro_accuracy": report.micro_accuracy,
                "macro_accuracy": report.macro_accuracy,
                "n_test": report.total_test(),
                "n_correct": report.total_correct(),
            });
            let _ = writeln!(out, "{summary}");
            for (kind, rows) in [("class", &report.per_class), ("unevaluable", &report.unevaluable)] {
                for r in rows {
                    let mut v = serde_json::to_value(r).expect("serializable");
                    v["type"] = kind.into();
                    let _ = writeln!(out, "{v}");
                }
            }
            for c in &report.confusions {
                let mut v = serde_json::to_value(c).expect("serializable");
                v["type"] = "confusion".into();
                let _ = writeln!(out, "{v}");
            }
        }
    }
    out
}

/// Reads the per-class rows (evaluable and unevaluable) back out of a CSV
/// report, skipping the summary rows.
pub fn parse_csv_report(text: &str) -> Result<Vec<ClassResult>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Data(format!("report csv: {e}")))?;
        if rec[0] == *MICRO_ROW || rec[0] == *MACRO_ROW {
            continue;
        }
        let num = |i: usize| rec[i].parse::<usize>().map_err(|e| Error::Data(format!("report csv: {e}")));
        rows.push(ClassResult { class: rec[0].to_string(), n_test: num(1)?, n_correct: num(2)? });
    }
    Ok(rows)
}

/// Labels present in test but absent from train.
pub fn missing_classes(train: &DatasetManifest, test: &DatasetManifest) -> BTreeSet<String> {
    let train: BTreeSet<String> = train.class_labels().into_iter().collect();
    test.class_labels().into_iter().filter(|c| !train.contains(c)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn preds(items: &[(&str, Option<&str>)]) -> Vec<(String, Option<String>)> {
        items.iter().map(|(t, p)| (t.to_string(), p.map(str::to_string))).collect()
    }

    #[test]
    fn micro_and_macro_by_hand() {
        let p = preds(&[("A", Some("A")), ("A", Some("A")), ("A", Some("A")), ("B", Some("A"))]);
        let r = EvalReport::from_predictions(&p, 0, 5).unwrap();
        assert_eq!(r.micro_accuracy, 0.75);
        assert_eq!(r.macro_accuracy, 0.5);
        assert_eq!(r.confusions, vec![Confusion { truth: "B".into(), predicted: "A".into(), count: 1 }]);
    }

    #[test]
    fn unevaluable_classes_count_against_micro_only() {
        let p = preds(&[("A", Some("A")), ("Z", None), ("Z", None), ("B", Some("B"))]);
        let r = EvalReport::from_predictions(&p, 0, 5).unwrap();
        assert_eq!(r.micro_accuracy, 0.5);
        assert_eq!(r.macro_accuracy, 1.0);
        assert_eq!(r.unevaluable, vec![ClassResult { class: "Z".into(), n_test: 2, n_correct: 0 }]);
    }

    #[test]
    fn permutation_invariant() {
        let p = preds(&[("A", Some("B")), ("B", Some("B")), ("A", Some("A")), ("C", Some("A"))]);
        let mut q = p.clone();
        q.reverse();
        assert_eq!(EvalReport::from_predictions(&p, 1, 5).unwrap(), EvalReport::from_predictions(&q, 1, 5).unwrap());
    }

    #[test]
    fn empty_predictions_rejected() {
        assert!(matches!(EvalReport::from_predictions(&[], 0, 5), Err(Error::Data(_))));
    }

    #[test]
    fn renderings() {
        let p = preds(&[("A", Some("A")), ("A", Some("B")), ("B", Some("B")), ("Z", None)]);
        let r = EvalReport::from_predictions(&p, 3, 5).unwrap();
        let text = render_report(&r, ReportFormat::Text);
        assert!(text.contains("micro accuracy") && text.contains("macro accuracy"));
        let csv = render_report(&r, ReportFormat::Csv);
        let rows = parse_csv_report(&csv).unwrap();
        let mut expected = r.per_class.clone();
        expected.extend(r.unevaluable.clone());
        assert_eq!(rows, expected);
        let jl = render_report(&r, ReportFormat::JsonLines);
        for line in jl.lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            assert!(v.get("type").is_some());
        }
        assert!("xml".parse::<ReportFormat>().is_err());
    }
}
