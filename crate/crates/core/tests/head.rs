#![allow(clippy::needless_range_loop)]

mod common;

use darc::head::{
    cosine_lr, decode_params, encode_params, hard_indices, sample_losses, TrainConfig,
};
use darc::synth::oracle;
use darc::{evaluate, forward, mine_hard_samples, train, EmbeddingDataset, HeadParams, View};
use proptest::prelude::*;
use rand::Rng;

use common::{max_grad_rel_err, random_params, rng};

fn oracle_forward(p: &HeadParams, x: &[f32]) -> Vec<f64> {
    let (d, h, c) = (p.dim, p.hidden, p.n_classes);
    let x: Vec<f64> = x.iter().map(|&v| v as f64).collect();
    let mut hidden = vec![0.0; h];
    for j in 0..h {
        let mut z = p.attn_b1[j];
        for i in 0..d {
            z += p.attn_w1[i * h + j] * x[i];
        }
        hidden[j] = if z > 0.0 { z } else { 0.0 };
    }
    let mut logits = p.cls_b.clone();
    for k in 0..d {
        let mut z = p.attn_b2[k];
        for j in 0..h {
            z += p.attn_w2[j * d + k] * hidden[j];
        }
        let gate = 1.0 / (1.0 + (-z).exp());
        for (l, logit) in logits.iter_mut().enumerate() {
            *logit += p.cls_w[k * c + l] * gate * x[k];
        }
    }
    logits
}

#[test]
fn forward_matches_straight_line_oracle() {
    for seed in 0..10 {
        let p = random_params(seed, 16, 8, 5, 0.5);
        let mut r = rng(seed + 50);
        let x: Vec<f32> = (0..16).map(|_| r.gen_range(-1.0f32..1.0)).collect();
        let (got, gate) = forward(&p, &x).unwrap();
        for (a, b) in got.iter().zip(oracle_forward(&p, &x)) {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0));
        }
        assert!(gate.iter().all(|&g| (0.0..=1.0).contains(&g)));
    }
}

#[test]
fn zero_input_gives_bias_logits() {
    let p = random_params(3, 4, 2, 3, 1.0);
    let (logits, _) = forward(&p, &[0.0; 4]).unwrap();
    assert_eq!(logits, p.cls_b);
}

#[test]
fn gradients_match_finite_differences() {
    for seed in 0..5 {
        let err = max_grad_rel_err(seed, 8, 4, 3, 1e-6);
        assert!(err < 1e-4, "seed {seed}: {err:e}");
    }
}

#[test]
fn mining_matches_scan_oracle() {
    let mut r = rng(77);
    let losses: Vec<f64> = (0..1000).map(|_| r.gen_range(0.0..5.0)).collect();
    assert_eq!(hard_indices(&losses, 1.2), oracle::mine(&losses, 1.2));
    assert_eq!(hard_indices(&[1.0, 2.0, 3.0], 1.2), vec![2]);
    assert!(hard_indices(&[0.7; 10], 1.2).is_empty());
}

#[test]
fn mining_a_dataset_uses_frozen_losses() {
    let ds = common::random_dataset(8, 300, 6, 3, 2.0);
    let p = random_params(9, 6, 3, 3, 1.0);
    let losses = sample_losses(&p, &ds).unwrap();
    assert_eq!(
        mine_hard_samples(&p, &ds, 1.2).unwrap(),
        oracle::mine(&losses, 1.2)
    );
}

fn separable(seed: u64, n: usize, dim: usize) -> EmbeddingDataset {
    let mut r = rng(seed);
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let class = (i % 2) as u32;
        let sign = if class == 0 { -1.0 } else { 1.0 };
        values.push(sign * r.gen_range(0.5f32..1.5));
        values.extend((1..dim).map(|_| r.gen_range(-1.0f32..1.0)));
        labels.push(class);
    }
    EmbeddingDataset::new(dim, values, labels, common::names(2), View::Plain).unwrap()
}

fn quick_config() -> TrainConfig {
    TrainConfig {
        n_max: 200,
        lr_max: 1e-2,
        lr_min: 1e-4,
        batch_size: 64,
        ..TrainConfig::default()
    }
}

#[test]
fn separable_set_is_learned() {
    let ds = separable(1, 200, 8);
    let out = train(&ds, &quick_config()).unwrap();
    assert_eq!(out.log.len(), 200);
    let report = evaluate(&out.params, &ds, None).unwrap();
    assert!(
        report.balanced_accuracy >= 0.99,
        "{}",
        report.balanced_accuracy
    );
    assert!(out.log.last().unwrap().mean_loss < out.log[0].mean_loss);
    assert!(out.log.iter().all(|m| m.mean_loss.is_finite()));
    // mining fires at epochs 30, 60, ...
    assert!(out
        .log
        .iter()
        .all(|m| m.epoch % 30 == 0 || m.n_hard_mined == 0));
}

#[test]
fn same_seed_same_log_and_params() {
    let ds = separable(2, 120, 8);
    let cfg = TrainConfig {
        n_max: 40,
        n_mine: 7,
        ..quick_config()
    };
    let a = train(&ds, &cfg).unwrap();
    let b = train(&ds, &cfg).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.params, b.params);
    let c = train(&ds, &TrainConfig { seed: 1, ..cfg }).unwrap();
    assert_ne!(a.params, c.params);
}

#[test]
fn schedule_is_logged_per_epoch() {
    let ds = separable(3, 50, 4);
    let cfg = TrainConfig {
        n_max: 10,
        ..quick_config()
    };
    let out = train(&ds, &cfg).unwrap();
    for m in &out.log {
        assert_eq!(m.lr, cosine_lr(m.epoch - 1, &cfg));
    }
}

#[test]
fn params_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = random_params(4, 6, 3, 4, 1.0);
    let path = dir.path().join("p.darch1");
    darc::head::save_params(&p, &path).unwrap();
    assert_eq!(darc::head::load_params(&path).unwrap(), p.rounded_to_f32());
    let bytes = encode_params(&p);
    assert!(decode_params(&bytes[..bytes.len() - 1]).is_err());
}

proptest! {
    #[test]
    fn gate_stays_in_unit_interval(seed in any::<u64>(), scale in 0.01f64..50.0) {
        let p = random_params(seed, 6, 3, 3, scale);
        let mut r = rng(seed);
        let x: Vec<f32> = (0..6).map(|_| r.gen_range(-100.0f32..100.0)).collect();
        let (logits, gate) = forward(&p, &x).unwrap();
        prop_assert!(logits.iter().all(|l| l.is_finite()));
        prop_assert!(gate.iter().all(|&g| g > 0.0 && g < 1.0));
    }

    #[test]
    fn mining_agrees_with_scan(losses in proptest::collection::vec(0.0f64..100.0, 0..200), delta in 0.5f64..3.0) {
        prop_assert_eq!(hard_indices(&losses, delta), oracle::mine(&losses, delta));
    }
}
