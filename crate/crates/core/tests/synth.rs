use darc::format::encode_dataset;
use darc::synth::{class_means, generate, oracle, ClassSpec, MixtureSpec};
use darc::{compute_class_stats, partition_by_frequency, CovMode, EmbeddingDataset};
use proptest::prelude::*;

fn spec(counts: &[usize], stddev: f64, seed: u64) -> MixtureSpec {
    MixtureSpec {
        dim: 8,
        classes: counts
            .iter()
            .map(|&count| ClassSpec {
                count,
                radius: 2.0,
                stddev,
            })
            .collect(),
        seed,
        noise_sigma: Some(0.5),
        fractions: [0.5, 0.25, 0.25],
    }
}

#[test]
fn tiny_stddev_recovers_means() {
    let s = spec(&[40, 30, 5], 1e-9, 3);
    let means = class_means(&s);
    let splits = generate(&s).unwrap();
    for st in compute_class_stats(&splits.train, CovMode::Diagonal) {
        for (a, b) in st.mean.iter().zip(&means[st.class_id]) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}

#[test]
fn imbalanced_counts_partition() {
    let splits = generate(&spec(&[500, 500, 20], 0.5, 0)).unwrap();
    let p = partition_by_frequency(&splits.train, 400);
    assert_eq!(p.common_ids.len(), 2);
    assert_eq!(p.rare_ids.iter().copied().collect::<Vec<_>>(), vec![2]);
}

#[test]
fn same_spec_same_bytes() {
    let s = spec(&[50, 20], 0.3, 11);
    let (a, b) = (generate(&s).unwrap(), generate(&s).unwrap());
    for (x, y) in [
        (&a.train, &b.train),
        (&a.train_aug, &b.train_aug),
        (&a.val, &b.val),
        (&a.test, &b.test),
    ] {
        assert_eq!(encode_dataset(x), encode_dataset(y));
    }
    let (sa, sb) = (a.shifted.unwrap(), b.shifted.unwrap());
    assert_eq!(encode_dataset(&sa.test), encode_dataset(&sb.test));
}

#[test]
fn shifted_split_is_noisier() {
    let splits = generate(&spec(&[400, 400], 0.5, 5)).unwrap();
    let shifted = splits.shifted.unwrap();
    let var = |ds: &EmbeddingDataset| -> f64 {
        let st = oracle::stats(ds);
        st.iter().flat_map(|(_, _, _, v)| v.iter()).sum::<f64>() / (st.len() * ds.dim()) as f64
    };
    // 0.25 + 0.25 expected against 0.25
    assert!(var(&shifted.train) > 1.5 * var(&splits.train));
    assert_eq!(shifted.train.labels(), splits.train.labels());
    assert_eq!(shifted.train.modality(), Some("synthetic_shifted"));
}

#[test]
fn degenerate_specs_are_rejected() {
    let mut s = spec(&[10, 10], 0.5, 0);
    s.classes[1].count = 0;
    assert!(generate(&s).is_err());
    let mut s = spec(&[10, 10], 0.5, 0);
    s.fractions = [0.5, 0.5, 0.5];
    assert!(generate(&s).is_err());
    let mut s = spec(&[10, 10], 0.0, 0);
    s.dim = 4;
    assert!(generate(&s).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn splits_satisfy_dataset_invariants(
        counts in proptest::collection::vec(1usize..60, 2..5),
        seed in any::<u64>(),
        dim in 1usize..10,
    ) {
        let mut s = spec(&counts, 0.7, seed);
        s.dim = dim;
        let splits = generate(&s).unwrap();
        for ds in [&splits.train, &splits.train_aug, &splits.val, &splits.test] {
            let rebuilt = EmbeddingDataset::new(
                ds.dim(), ds.embeddings().to_vec(), ds.labels().to_vec(), ds.class_names().to_vec(), ds.view(),
            );
            prop_assert!(rebuilt.is_ok());
            prop_assert_eq!(ds.n_classes(), counts.len());
        }
        prop_assert_eq!(splits.train.class_counts(), counts.clone());
        prop_assert_eq!(splits.train_aug.class_counts(), counts);
    }
}
