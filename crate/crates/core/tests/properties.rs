use proptest::collection::vec;
use proptest::prelude::*;

use shelfid::arcface::{arcface_logits, ArcFaceHead};
use shelfid::balancing::resample_to_depth;
use shelfid::encoder::{EncoderConfig, VitEncoder};
use shelfid::evalharness::EvalReport;
use shelfid::finetune::FinetuneConfig;
use shelfid::gallery::Gallery;
use shelfid::kvconfig::KvConfig;
use shelfid::lr_schedule::{blockwise_lrs, build_param_groups};
use shelfid::manifest::{DatasetManifest, Record, Split};
use shelfid::EmbeddingVector;

fn embedding(d: usize) -> impl Strategy<Value = Vec<f64>> {
    vec(-1.0f64..1.0, d).prop_filter("non-zero", |v| v.iter().any(|x| x.abs() > 1e-3))
}

fn label() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9_]{0,6}"
}

fn manifest() -> impl Strategy<Value = DatasetManifest> {
    vec((label(), 1usize..12), 1..8).prop_map(|classes| {
        let mut records = Vec::new();
        for (c, (name, n)) in classes.iter().enumerate() {
            for i in 0..*n {
                records.push(Record::new(format!("{c}/{name}_{i}.png"), format!("{name}{c}"), Split::Train));
            }
        }
        DatasetManifest::new(records).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn classify_matches_exhaustive_argmax(
        products in vec(vec(embedding(6), 1..4), 1..12),
        query in embedding(6),
    ) {
        let mut gallery = Gallery::new(6);
        for (p, embs) in products.iter().enumerate() {
            let embs: Vec<EmbeddingVector> = embs.iter().map(|e| EmbeddingVector::new(e.clone()).unwrap()).collect();
            gallery.enroll_embeddings(&format!("p{p}"), &embs).unwrap();
        }
        let q = EmbeddingVector::new(query).unwrap();
        let scores = gallery.scores(&q).unwrap();
        let mut best = &scores[0];
        for s in &scores[1..] {
            if s.2 > best.2 {
                best = s;
            }
        }
        let got = gallery.classify_embedding(&q).unwrap();
        prop_assert_eq!(&got.product_id, &best.0);
        prop_assert_eq!(got.score, best.2);
    }

    #[test]
    fn enrollment_never_changes_existing_scores(
        first in vec(embedding(5), 1..6),
        second in vec(embedding(5), 1..6),
        query in embedding(5),
    ) {
        let to_vecs = |v: &[Vec<f64>]| v.iter().map(|e| EmbeddingVector::new(e.clone()).unwrap()).collect::<Vec<_>>();
        let mut gallery = Gallery::new(5);
        gallery.enroll_embeddings("old", &to_vecs(&first)).unwrap();
        let q = EmbeddingVector::new(query).unwrap();
        let before = gallery.scores(&q).unwrap();
        gallery.enroll_embeddings("new", &to_vecs(&second)).unwrap();
        let after = gallery.scores(&q).unwrap();
        prop_assert_eq!(&after[..before.len()], &before[..]);
    }

    #[test]
    fn gallery_bytes_round_trip(products in vec(vec(embedding(4), 1..3), 0..6)) {
        let mut gallery = Gallery::new(4);
        for (p, embs) in products.iter().enumerate() {
            let embs: Vec<EmbeddingVector> = embs.iter().map(|e| EmbeddingVector::new(e.clone()).unwrap()).collect();
            gallery.enroll_embeddings(&format!("id-{p}"), &embs).unwrap();
        }
        let bytes = gallery.to_bytes();
        let back = Gallery::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
        prop_assert_eq!(back, gallery);
    }

    #[test]
    fn manifest_csv_round_trip(m in manifest()) {
        let back = DatasetManifest::parse_csv(&m.to_csv()).unwrap();
        prop_assert_eq!(back.records(), m.records());
    }

    #[test]
    fn resampling_hits_depth_exactly(m in manifest(), depth in 1usize..16, seed in any::<u64>()) {
        let out = resample_to_depth(&m, depth, seed).unwrap();
        let counts = out.class_counts();
        prop_assert_eq!(counts.len(), m.class_counts().len());
        prop_assert!(counts.values().all(|&n| n == depth));
        prop_assert_eq!(out.to_csv(), resample_to_depth(&m, depth, seed).unwrap().to_csv());
    }

    #[test]
    fn zero_margin_logits_are_scaled_cosines(
        cosines in vec(-1.0f64..=1.0, 2..10),
        scale in 0.5f64..64.0,
        pick in any::<prop::sample::Index>(),
    ) {
        let label = pick.index(cosines.len());
        let logits = arcface_logits(&cosines, label, 0.0, scale).unwrap();
        for (z, c) in logits.iter().zip(&cosines) {
            prop_assert!((z - scale * c).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn margin_only_lowers_the_target_logit(
        cosines in vec(-1.0f64..=1.0, 2..10),
        margin in 0.0f64..1.0,
        pick in any::<prop::sample::Index>(),
    ) {
        let label = pick.index(cosines.len());
        let logits = arcface_logits(&cosines, label, margin, 10.0).unwrap();
        for (j, (z, c)) in logits.iter().zip(&cosines).enumerate() {
            if j == label {
                prop_assert!(*z <= 10.0 * c + 1e-12);
            } else {
                prop_assert_eq!(*z, 10.0 * c);
            }
        }
    }

    #[test]
    fn schedule_is_monotone(blocks in 1usize..30, top in 1e-6f64..1e-2, decay in 0.05f64..1.0) {
        let s = blockwise_lrs(blocks, top, decay).unwrap();
        prop_assert!(s.rates.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(*s.rates.last().unwrap(), top);
        prop_assert!(s.pre_block_lr() <= s.rates[0]);
    }

    #[test]
    fn report_ignores_record_order(
        rows in vec((0usize..4, prop::option::of(0usize..4)), 1..40),
        seed in any::<u64>(),
    ) {
        let preds: Vec<(String, Option<String>)> = rows
            .iter()
            .map(|(t, p)| (format!("c{t}"), p.map(|p| format!("c{p}"))))
            .collect();
        // c3 stands in for a class with no train image.
        let preds: Vec<_> = preds
            .into_iter()
            .map(|(t, p)| if t == "c3" { (t, None) } else { (t, p.or(Some("c0".into()))) })
            .collect();
        let mut reversed = preds.clone();
        reversed.reverse();
        let a = EvalReport::from_predictions(&preds, seed, 5).unwrap();
        let b = EvalReport::from_predictions(&reversed, seed, 5).unwrap();
        prop_assert!((0.0..=1.0).contains(&a.micro_accuracy) && (0.0..=1.0).contains(&a.macro_accuracy));
        prop_assert_eq!(a, b);
    }

    #[test]
    fn finetune_config_kv_round_trip(epochs in 1usize..100, batch in 1usize..64, lr in 1e-6f64..1e-2, seed in any::<u64>()) {
        let c = FinetuneConfig { epochs, batch_size: batch, top_lr: lr, seed, ..Default::default() };
        let mut kv = KvConfig::new();
        c.write_kv(&mut kv);
        let back = FinetuneConfig::from_kv(&KvConfig::parse(&kv.render()).unwrap()).unwrap();
        prop_assert_eq!(back, c);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn param_groups_partition_trainable_tensors(blocks in 1usize..5, finetune_projection in any::<bool>()) {
        let encoder = VitEncoder::new(EncoderConfig {
            num_blocks: blocks,
            embed_dim: 16,
            heads: 2,
            finetune_projection,
            ..Default::default()
        })
        .unwrap();
        let head = ArcFaceHead::new(16, 3, 0.5, 64.0, 0).unwrap();
        let schedule = blockwise_lrs(blocks, 2e-4, 0.7).unwrap();
        let groups = build_param_groups(&encoder, &head, &schedule).unwrap();
        let mut seen = std::collections::HashSet::new();
        for g in &groups {
            for p in &g.params {
                prop_assert!(seen.insert(*p), "{:?} in two groups", p);
            }
        }
        prop_assert_eq!(seen.len(), encoder.trainable_params().len() + 1);
    }
}
