//! Seeded Gaussian-mixture embedding datasets with class imbalance.
//!
//! Class means sit on a sphere of the class's radius; rows are isotropic
//! Gaussian draws around them. The augmented-view training set is an
//! independent redraw of the same rows (same classes, same order), standing in
//! for embeddings of augmented clips.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{derive_rng, stream};
use crate::dataset::{EmbeddingDataset, View};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    /// Training rows for this class; val/test sizes follow from the fractions.
    pub count: usize,
    /// Distance of the class mean from the origin.
    pub radius: f64,
    pub stddev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSpec {
    pub dim: usize,
    pub classes: Vec<ClassSpec>,
    pub seed: u64,
    /// When set, a shifted copy of every split is produced with this much
    /// extra isotropic noise.
    #[serde(default)]
    pub noise_sigma: Option<f64>,
    /// Train, validation and test fractions.
    pub fractions: [f64; 3],
}

impl Default for MixtureSpec {
    /// Six classes in 32 dims: four common (500 rows) and two rare (30, 20).
    fn default() -> Self {
        let common = ClassSpec {
            count: 500,
            radius: 2.0,
            stddev: 0.5,
        };
        let mut classes = vec![common.clone(); 4];
        classes.push(ClassSpec {
            count: 30,
            ..common.clone()
        });
        classes.push(ClassSpec {
            count: 20,
            ..common
        });
        MixtureSpec {
            dim: 32,
            classes,
            seed: 0,
            noise_sigma: Some(0.5),
            fractions: [0.5, 0.25, 0.25],
        }
    }
}

impl MixtureSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::validation(m));
        if self.dim == 0 {
            return bad("dim: must be positive".into());
        }
        if self.classes.len() < 2 {
            return bad("classes: need at least two".into());
        }
        for (i, c) in self.classes.iter().enumerate() {
            if c.count == 0 {
                return bad(format!("classes[{i}].count: must be at least 1"));
            }
            if !(c.stddev > 0.0 && c.stddev.is_finite()) {
                return bad(format!("classes[{i}].stddev: must be positive"));
            }
            if !(c.radius >= 0.0 && c.radius.is_finite()) {
                return bad(format!("classes[{i}].radius: must be non-negative"));
            }
        }
        if let Some(s) = self.noise_sigma {
            if !(s >= 0.0 && s.is_finite()) {
                return bad("noise_sigma: must be non-negative".into());
            }
        }
        let f = self.fractions;
        if f.iter().any(|&v| !(v >= 0.0))
            || f[0] <= 0.0
            || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return bad(
                "fractions: must be non-negative, sum to 1, with a positive train share".into(),
            );
        }
        Ok(())
    }

    fn split_size(&self, class: usize, split: Split) -> usize {
        let count = self.classes[class].count;
        let f = self.fractions;
        match split {
            Split::Train | Split::TrainAug => count,
            Split::Val | Split::Test => {
                let share = if split == Split::Val { f[1] } else { f[2] };
                if share == 0.0 {
                    0
                } else {
                    ((count as f64 * share / f[0]).round() as usize).max(1)
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Split {
    Train,
    TrainAug,
    Val,
    Test,
}

impl Split {
    fn tag(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::TrainAug => 2,
            Split::Val => 3,
            Split::Test => 4,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::TrainAug => "train_aug",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

const MEAN_TAG: u64 = 0;
const SHIFT_OFFSET: u64 = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftedSplits {
    pub train: EmbeddingDataset,
    pub val: EmbeddingDataset,
    pub test: EmbeddingDataset,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSplits {
    pub train: EmbeddingDataset,
    pub train_aug: EmbeddingDataset,
    pub val: EmbeddingDataset,
    pub test: EmbeddingDataset,
    pub shifted: Option<ShiftedSplits>,
}

pub fn class_names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("class_{i:02}")).collect()
}

/// Class centers: seeded directions scaled to each class's radius.
pub fn class_means(spec: &MixtureSpec) -> Vec<Vec<f64>> {
    spec.classes
        .iter()
        .enumerate()
        .map(|(c, cs)| {
            let mut rng = derive_rng(spec.seed, stream::SYNTH, (c as u64) << 8, MEAN_TAG);
            let dir: Vec<f64> = (0..spec.dim).map(|_| rng.sample(StandardNormal)).collect();
            let norm = dir
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt()
                .max(f64::MIN_POSITIVE);
            dir.iter().map(|v| v / norm * cs.radius).collect()
        })
        .collect()
}

fn draw_split(spec: &MixtureSpec, means: &[Vec<f64>], split: Split) -> Result<EmbeddingDataset> {
    let per_class: Vec<(Vec<f32>, Vec<u32>)> = (0..spec.classes.len())
        .into_par_iter()
        .map(|c| {
            let n = spec.split_size(c, split);
            let sd = spec.classes[c].stddev;
            let mut rng = derive_rng(spec.seed, stream::SYNTH, ((c as u64) << 8) | split.tag(), 0);
            let mut values = Vec::with_capacity(n * spec.dim);
            for _ in 0..n {
                for &m in &means[c] {
                    let z: f64 = rng.sample(StandardNormal);
                    values.push((m + sd * z) as f32);
                }
            }
            (values, vec![c as u32; n])
        })
        .collect();
    let (mut values, mut labels) = (Vec::new(), Vec::new());
    for (v, l) in per_class {
        values.extend(v);
        labels.extend(l);
    }
    let view = if split == Split::TrainAug {
        View::AugmentedView
    } else {
        View::Plain
    };
    Ok(EmbeddingDataset::new(
        spec.dim,
        values,
        labels,
        class_names(spec.classes.len()),
        view,
    )?
    .with_meta("modality", "synthetic")
    .with_meta("split", split.name())
    .with_meta("source", "synth"))
}

fn shift(
    spec: &MixtureSpec,
    ds: &EmbeddingDataset,
    split: Split,
    sigma: f64,
) -> Result<EmbeddingDataset> {
    let groups = ds.indices_by_class();
    let mut values = ds.embeddings().to_vec();
    // rows of one class are contiguous and in draw order
    for (c, rows) in groups.iter().enumerate() {
        let mut rng = derive_rng(
            spec.seed,
            stream::SYNTH,
            ((c as u64) << 8) | (split.tag() + SHIFT_OFFSET),
            0,
        );
        for &i in rows {
            for v in &mut values[i * ds.dim()..(i + 1) * ds.dim()] {
                let z: f64 = rng.sample(StandardNormal);
                *v = (*v as f64 + sigma * z) as f32;
            }
        }
    }
    Ok(EmbeddingDataset::new(
        ds.dim(),
        values,
        ds.labels().to_vec(),
        ds.class_names().to_vec(),
        ds.view(),
    )?
    .with_meta("modality", "synthetic_shifted")
    .with_meta("split", split.name())
    .with_meta("source", "synth"))
}

pub fn generate(spec: &MixtureSpec) -> Result<SynthSplits> {
    spec.validate()?;
    let means = class_means(spec);
    let train = draw_split(spec, &means, Split::Train)?;
    let train_aug = draw_split(spec, &means, Split::TrainAug)?;
    let val = draw_split(spec, &means, Split::Val)?;
    let test = draw_split(spec, &means, Split::Test)?;
    let shifted = match spec.noise_sigma {
        Some(sigma) => Some(ShiftedSplits {
            train: shift(spec, &train, Split::Train, sigma)?,
            val: shift(spec, &val, Split::Val, sigma)?,
            test: shift(spec, &test, Split::Test, sigma)?,
        }),
        None => None,
    };
    Ok(SynthSplits {
        train,
        train_aug,
        val,
        test,
        shifted,
    })
}

/// Straightforward reference implementations used to cross-check the
/// optimised code paths in tests.
pub mod oracle {
    use crate::dataset::EmbeddingDataset;

    /// Per-class (id, count, mean, unbiased per-channel variance), two passes
    /// over the whole dataset per class.
    pub fn stats(ds: &EmbeddingDataset) -> Vec<(usize, usize, Vec<f64>, Vec<f64>)> {
        let mut out = Vec::new();
        for class in 0..ds.n_classes() {
            let mut sum = vec![0.0f64; ds.dim()];
            let mut n = 0usize;
            for i in 0..ds.len() {
                if ds.label(i) == class {
                    n += 1;
                    for j in 0..ds.dim() {
                        sum[j] += ds.row(i)[j] as f64;
                    }
                }
            }
            if n == 0 {
                continue;
            }
            let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
            let mut sq = vec![0.0f64; ds.dim()];
            for i in 0..ds.len() {
                if ds.label(i) == class {
                    for j in 0..ds.dim() {
                        let d = ds.row(i)[j] as f64 - mean[j];
                        sq[j] += d * d;
                    }
                }
            }
            let var = if n >= 2 {
                sq.iter().map(|s| s / (n - 1) as f64).collect()
            } else {
                vec![0.0; ds.dim()]
            };
            out.push((class, n, mean, var));
        }
        out
    }

    /// Full `dim x dim` unbiased covariance of one class.
    pub fn full_covariance(ds: &EmbeddingDataset, class: usize) -> Vec<f64> {
        let dim = ds.dim();
        let rows: Vec<&[f32]> = (0..ds.len())
            .filter(|&i| ds.label(i) == class)
            .map(|i| ds.row(i))
            .collect();
        let n = rows.len();
        let mut mean = vec![0.0; dim];
        for r in &rows {
            for j in 0..dim {
                mean[j] += r[j] as f64 / n as f64;
            }
        }
        let mut cov = vec![0.0; dim * dim];
        if n < 2 {
            return cov;
        }
        for r in &rows {
            for a in 0..dim {
                for b in 0..dim {
                    cov[a * dim + b] += (r[a] as f64 - mean[a]) * (r[b] as f64 - mean[b]);
                }
            }
        }
        cov.iter().map(|c| c / (n - 1) as f64).collect()
    }

    /// Sorts every center by (distance, id) and keeps the first `k` ids.
    pub fn topk(x: &[f32], centers: &[(usize, Vec<f64>)], k: usize) -> Vec<usize> {
        let mut all: Vec<(f64, usize)> = centers
            .iter()
            .map(|(id, mu)| {
                let d2: f64 = x
                    .iter()
                    .zip(mu)
                    .map(|(&a, &b)| (a as f64 - b).powi(2))
                    .sum();
                (d2.sqrt(), *id)
            })
            .collect();
        all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        all.into_iter().take(k).map(|(_, id)| id).collect()
    }

    /// Linear scan for losses strictly above `delta` times their mean.
    pub fn mine(losses: &[f64], delta: f64) -> Vec<usize> {
        let mut total = 0.0;
        for l in losses {
            total += l;
        }
        let threshold = delta * (total / losses.len() as f64);
        let mut out = Vec::new();
        for i in 0..losses.len() {
            if losses[i] > threshold {
                out.push(i);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_spec_is_valid_and_deterministic() {
        let spec = MixtureSpec::default();
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.train.len(), 4 * 500 + 50);
        assert_eq!(a.train.labels(), a.train_aug.labels());
        assert_eq!(a.test.class_counts(), vec![250, 250, 250, 250, 15, 10]);
        let shifted = a.shifted.unwrap();
        assert_eq!(shifted.test.labels(), a.test.labels());
        assert_ne!(shifted.test.embeddings(), a.test.embeddings());
    }

    #[test]
    fn means_lie_on_the_sphere() {
        let spec = MixtureSpec::default();
        for (m, c) in class_means(&spec).iter().zip(&spec.classes) {
            let r = m.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((r - c.radius).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_specs_are_rejected() {
        let mut spec = MixtureSpec::default();
        spec.classes[0].count = 0;
        assert!(generate(&spec).is_err());
        let mut spec = MixtureSpec::default();
        spec.classes[1].stddev = 0.0;
        assert!(generate(&spec).is_err());
        let spec = MixtureSpec {
            fractions: [0.5, 0.5, 0.5],
            ..MixtureSpec::default()
        };
        assert!(generate(&spec).is_err());
    }

    #[test]
    fn oracle_examples() {
        let ds = EmbeddingDataset::new(
            2,
            vec![1.0, 3.0, 3.0, 5.0],
            vec![0, 0],
            class_names(2),
            View::Plain,
        )
        .unwrap();
        let s = oracle::stats(&ds);
        assert_eq!(s, vec![(0, 2, vec![2.0, 4.0], vec![2.0, 2.0])]);
        assert_eq!(oracle::mine(&[1.0, 2.0, 3.0], 1.2), vec![2]);
    }
}
