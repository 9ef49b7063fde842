mod common;

use std::collections::BTreeSet;

use darc::synth::{generate, ClassSpec, MixtureSpec};
use darc::{
    balanced_accuracy, cross_modality_eval, evaluate, forward, predict, train, EmbeddingDataset,
    FrequencyPartition, HeadParams, TrainConfig,
};
use proptest::prelude::*;

use common::{random_dataset, random_params};

#[test]
fn predictions_match_forward_scan() {
    let p = random_params(1, 10, 5, 4, 1.0);
    let ds = random_dataset(2, 100, 10, 4, 3.0);
    let preds = predict(&p, &ds).unwrap();
    assert_eq!(preds.len(), 100);
    for (i, &got) in preds.iter().enumerate() {
        let (logits, _) = forward(&p, ds.row(i)).unwrap();
        let mut best = 0;
        for c in 1..logits.len() {
            if logits[c] > logits[best] {
                best = c;
            }
        }
        assert_eq!(got, best);
    }
}

#[test]
fn zero_params_predict_class_zero() {
    let p = HeadParams::zeros(5, 2, 3);
    let ds = random_dataset(3, 20, 5, 3, 1.0);
    assert!(predict(&p, &ds).unwrap().iter().all(|&c| c == 0));
    assert!(predict(&HeadParams::zeros(4, 2, 3), &ds).is_err());
}

/// Head whose logits equal the input, so predictions are the arg-max channel.
fn identity_head(c: usize) -> HeadParams {
    let mut p = HeadParams::zeros(c, 1, c);
    p.attn_b2.fill(30.0);
    for k in 0..c {
        p.cls_w[k * c + k] = 1.0;
    }
    p
}

fn one_hot_rows(preds: &[usize], labels: &[u32], c: usize) -> EmbeddingDataset {
    let mut values = vec![0.0f32; preds.len() * c];
    for (i, &p) in preds.iter().enumerate() {
        values[i * c + p] = 1.0;
    }
    EmbeddingDataset::new(
        c,
        values,
        labels.to_vec(),
        common::names(c),
        darc::View::Plain,
    )
    .unwrap()
}

#[test]
fn report_matches_hand_built_confusion() {
    let labels = [0u32, 0, 0, 1, 1, 1, 1, 2, 2, 2];
    let preds = [0usize, 1, 0, 1, 1, 2, 1, 0, 2, 2];
    let ds = one_hot_rows(&preds, &labels, 3);
    let r = evaluate(&identity_head(3), &ds, None).unwrap();
    let expected = vec![vec![2, 1, 0], vec![0, 3, 1], vec![1, 0, 2]];
    assert_eq!(r.confusion, expected);
    let recalls = [2.0 / 3.0, 3.0 / 4.0, 2.0 / 3.0];
    for (got, want) in r.per_class_recall.iter().zip(recalls) {
        assert!((got.unwrap() - want).abs() < 1e-15);
    }
    assert!((r.balanced_accuracy - (2.0 / 3.0 + 0.75 + 2.0 / 3.0) / 3.0).abs() < 1e-15);
    assert_eq!(r.raw_accuracy, 0.7);
    for (i, row) in r.confusion.iter().enumerate() {
        assert_eq!(
            row.iter().sum::<u64>(),
            labels.iter().filter(|&&l| l as usize == i).count() as u64
        );
    }
}

#[test]
fn all_common_partition_repeats_balanced_accuracy() {
    let labels = [0u32, 1, 1, 2];
    let preds = [0usize, 1, 0, 2];
    let ds = one_hot_rows(&preds, &labels, 3);
    let part = FrequencyPartition {
        eta: 0,
        common_ids: BTreeSet::from([0, 1, 2]),
        rare_ids: BTreeSet::new(),
    };
    let r = evaluate(&identity_head(3), &ds, Some(&part)).unwrap();
    assert_eq!(r.common, Some(r.balanced_accuracy));
    assert_eq!(r.rare, None);
    let json: serde_json::Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
    assert!(json["rare"].is_null());
}

#[test]
fn cross_modality_single_set_equals_evaluate() {
    let p = random_params(4, 6, 3, 3, 1.0);
    let ds = random_dataset(5, 50, 6, 3, 1.0);
    let reports =
        cross_modality_eval(&p, ds.class_names(), std::slice::from_ref(&ds), None).unwrap();
    assert_eq!(reports, vec![evaluate(&p, &ds, None).unwrap()]);
}

#[test]
fn cross_modality_rejects_permuted_names() {
    let p = random_params(6, 4, 2, 3, 1.0);
    let ds = random_dataset(7, 20, 4, 3, 1.0);
    let mut names = ds.class_names().to_vec();
    names.swap(0, 2);
    let permuted = EmbeddingDataset::new(
        4,
        ds.embeddings().to_vec(),
        ds.labels().to_vec(),
        names,
        ds.view(),
    )
    .unwrap();
    let err = cross_modality_eval(&p, ds.class_names(), &[ds.clone(), permuted], None).unwrap_err();
    assert!(matches!(err, darc::Error::Validation(_)));
}

#[test]
fn added_noise_does_not_help() {
    let mut not_worse = 0;
    for seed in 0..5 {
        let spec = MixtureSpec {
            dim: 16,
            classes: vec![
                ClassSpec {
                    count: 200,
                    radius: 1.5,
                    stddev: 0.5
                };
                4
            ],
            seed,
            noise_sigma: Some(0.5),
            fractions: [0.5, 0.25, 0.25],
        };
        let splits = generate(&spec).unwrap();
        let cfg = TrainConfig {
            n_max: 60,
            lr_max: 1e-2,
            lr_min: 1e-4,
            batch_size: 64,
            seed,
            ..Default::default()
        };
        let params = train(&splits.train, &cfg).unwrap().params;
        let clean = evaluate(&params, &splits.test, None)
            .unwrap()
            .balanced_accuracy;
        let noisy = evaluate(&params, &splits.shifted.unwrap().test, None)
            .unwrap()
            .balanced_accuracy;
        if noisy <= clean {
            not_worse += 1;
        }
    }
    assert!(not_worse >= 4, "{not_worse} of 5");
}

proptest! {
    #[test]
    fn balanced_accuracy_ignores_row_order(
        pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..100),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        let (preds, labels): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
        let mut shuffled = pairs.clone();
        shuffled.shuffle(&mut common::rng(seed));
        let (sp, sl): (Vec<usize>, Vec<usize>) = shuffled.into_iter().unzip();
        let a = balanced_accuracy(&preds, &labels, 4).unwrap();
        let b = balanced_accuracy(&sp, &sl, 4).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
    }
}
