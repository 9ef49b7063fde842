#![allow(dead_code)]

use darc::{EmbeddingDataset, View};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("c{i}")).collect()
}

/// Uniform random rows in [-scale, scale) with uniformly drawn labels.
pub fn random_dataset(
    seed: u64,
    n: usize,
    dim: usize,
    n_classes: usize,
    scale: f32,
) -> EmbeddingDataset {
    let mut r = rng(seed);
    let values = (0..n * dim).map(|_| r.gen_range(-scale..scale)).collect();
    let labels = (0..n).map(|_| r.gen_range(0..n_classes as u32)).collect();
    EmbeddingDataset::new(dim, values, labels, names(n_classes), View::Plain).unwrap()
}

/// `counts[c]` rows per class, class-major, around well separated offsets.
pub fn clustered(seed: u64, counts: &[usize], dim: usize, view: View) -> EmbeddingDataset {
    let mut r = rng(seed);
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (c, &n) in counts.iter().enumerate() {
        for _ in 0..n {
            for j in 0..dim {
                let center = if j % counts.len() == c { 3.0 } else { 0.0 };
                values.push(center + r.gen_range(-1.0f32..1.0));
            }
            labels.push(c as u32);
        }
    }
    EmbeddingDataset::new(dim, values, labels, names(counts.len()), view).unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Parameters with every entry uniform in [-scale, scale).
pub fn random_params(
    seed: u64,
    dim: usize,
    hidden: usize,
    n_classes: usize,
    scale: f64,
) -> darc::HeadParams {
    let mut r = rng(seed);
    let mut p = darc::HeadParams::zeros(dim, hidden, n_classes);
    for (t, _) in p.tensors_mut() {
        for v in t.iter_mut() {
            *v = r.gen_range(-scale..scale);
        }
    }
    p
}

/// Largest relative error between the analytic gradient and central finite
/// differences (step 1e-4) on one random instance. Entries where both values
/// are below `floor` in magnitude are compared against `floor` instead.
pub fn max_grad_rel_err(seed: u64, dim: usize, hidden: usize, n_classes: usize, floor: f64) -> f64 {
    let p = random_params(seed, dim, hidden, n_classes, 1.0);
    let mut r = rng(seed ^ 0xfeed);
    let n = 6;
    let rows: Vec<f32> = (0..n * dim).map(|_| r.gen_range(-2.0f32..2.0)).collect();
    let labels: Vec<usize> = (0..n).map(|_| r.gen_range(0..n_classes)).collect();
    let (_, grads) = darc::loss_and_grad(&p, &rows, &labels).unwrap();
    let h = 1e-4;
    let mut worst = 0.0f64;
    let n_tensors = p.tensors().len();
    for t in 0..n_tensors {
        for k in 0..p.tensors()[t].0.len() {
            let mut plus = p.clone();
            plus.tensors_mut()[t].0[k] += h;
            let mut minus = p.clone();
            minus.tensors_mut()[t].0[k] -= h;
            let lp = darc::loss_and_grad(&plus, &rows, &labels).unwrap().0;
            let lm = darc::loss_and_grad(&minus, &rows, &labels).unwrap().0;
            let numeric = (lp - lm) / (2.0 * h);
            let analytic = grads.tensors()[t].0[k];
            let denom = analytic.abs().max(numeric.abs()).max(floor);
            worst = worst.max((analytic - numeric).abs() / denom);
        }
    }
    worst
}
