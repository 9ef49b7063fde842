//! Per-class Gaussian statistics and the common/rare frequency partition.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::EmbeddingDataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovMode {
    #[default]
    Diagonal,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "values")]
pub enum Covariance {
    /// Per-channel variances.
    Diagonal(Vec<f64>),
    /// Row-major `dim x dim` matrix.
    Full(Vec<f64>),
}

impl Covariance {
    /// Variance of channel `j`, whichever store is used.
    pub fn variance(&self, j: usize, dim: usize) -> f64 {
        match self {
            Covariance::Diagonal(v) => v[j],
            Covariance::Full(m) => m[j * dim + j],
        }
    }

    pub fn values(&self) -> &[f64] {
        match self {
            Covariance::Diagonal(v) | Covariance::Full(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub class_id: usize,
    pub count: usize,
    pub mean: Vec<f64>,
    pub cov: Covariance,
    /// False for single-sample classes, whose covariance is left at zero.
    pub cov_defined: bool,
}

impl ClassStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// The class center rounded to storage precision.
    pub fn mean_f32(&self) -> Vec<f32> {
        self.mean.iter().map(|&m| m as f32).collect()
    }
}

/// Welford accumulator with an optional full co-moment matrix.
struct Accumulator {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
    full: bool,
    delta: Vec<f64>,
}

impl Accumulator {
    fn new(dim: usize, mode: CovMode) -> Self {
        let full = mode == CovMode::Full;
        Accumulator {
            n: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; if full { dim * dim } else { dim }],
            full,
            delta: vec![0.0; dim],
        }
    }

    fn push(&mut self, x: &[f32]) {
        self.n += 1;
        let n = self.n as f64;
        for ((m, d), &xv) in self.mean.iter_mut().zip(&mut self.delta).zip(x) {
            *d = xv as f64 - *m;
            *m += *d / n;
        }
        let dim = self.mean.len();
        if self.full {
            for a in 0..dim {
                let da = self.delta[a];
                let row = &mut self.m2[a * dim..(a + 1) * dim];
                for ((c, &xb), &mb) in row.iter_mut().zip(x).zip(&self.mean) {
                    *c += da * (xb as f64 - mb);
                }
            }
        } else {
            for (((c, &d), &xv), &m) in self.m2.iter_mut().zip(&self.delta).zip(x).zip(&self.mean) {
                *c += d * (xv as f64 - m);
            }
        }
    }

    fn finish(self, class_id: usize) -> ClassStats {
        let cov_defined = self.n >= 2;
        let mut m2 = self.m2;
        if cov_defined {
            let denom = (self.n - 1) as f64;
            m2.iter_mut().for_each(|c| *c /= denom);
        } else {
            m2.iter_mut().for_each(|c| *c = 0.0);
        }
        if self.full {
            // the co-moment update is symmetric only up to rounding
            let dim = self.mean.len();
            for a in 0..dim {
                for b in a + 1..dim {
                    let s = 0.5 * (m2[a * dim + b] + m2[b * dim + a]);
                    m2[a * dim + b] = s;
                    m2[b * dim + a] = s;
                }
            }
        }
        ClassStats {
            class_id,
            count: self.n,
            mean: self.mean,
            cov: if self.full {
                Covariance::Full(m2)
            } else {
                Covariance::Diagonal(m2)
            },
            cov_defined,
        }
    }
}

/// Mean and unbiased covariance of every class that has at least one row,
/// sorted by class id. Classes without rows are left out.
pub fn compute_class_stats(ds: &EmbeddingDataset, mode: CovMode) -> Vec<ClassStats> {
    ds.indices_by_class()
        .into_par_iter()
        .enumerate()
        .filter(|(_, rows)| !rows.is_empty())
        .map(|(class_id, rows)| {
            let mut acc = Accumulator::new(ds.dim(), mode);
            for i in rows {
                acc.push(ds.row(i));
            }
            acc.finish(class_id)
        })
        .collect()
}

/// Split of the classes present in a training set into common (`count > eta`)
/// and rare ones.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyPartition {
    pub eta: usize,
    pub common_ids: BTreeSet<usize>,
    pub rare_ids: BTreeSet<usize>,
}

impl FrequencyPartition {
    /// Partition from per-class counts; zero-count classes belong to neither set.
    pub fn from_counts(counts: &[usize], eta: usize) -> Self {
        let mut common_ids = BTreeSet::new();
        let mut rare_ids = BTreeSet::new();
        for (id, &c) in counts.iter().enumerate() {
            if c == 0 {
                continue;
            }
            if c > eta {
                common_ids.insert(id);
            } else {
                rare_ids.insert(id);
            }
        }
        FrequencyPartition {
            eta,
            common_ids,
            rare_ids,
        }
    }

    pub fn is_common(&self, id: usize) -> bool {
        self.common_ids.contains(&id)
    }

    pub fn is_rare(&self, id: usize) -> bool {
        self.rare_ids.contains(&id)
    }
}

pub fn partition_by_frequency(ds: &EmbeddingDataset, eta: usize) -> FrequencyPartition {
    FrequencyPartition::from_counts(&ds.class_counts(), eta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::View;

    fn ds(dim: usize, values: Vec<f32>, labels: Vec<u32>, n_classes: usize) -> EmbeddingDataset {
        let names = (0..n_classes).map(|i| format!("c{i}")).collect();
        EmbeddingDataset::new(dim, values, labels, names, View::Plain).unwrap()
    }

    #[test]
    fn two_point_class() {
        let d = ds(2, vec![1.0, 3.0, 3.0, 5.0], vec![0, 0], 2);
        let stats = compute_class_stats(&d, CovMode::Diagonal);
        assert_eq!(stats.len(), 1);
        assert_eq!(stats[0].mean, vec![2.0, 4.0]);
        assert_eq!(stats[0].cov, Covariance::Diagonal(vec![2.0, 2.0]));
        assert!(stats[0].cov_defined);

        let full = compute_class_stats(&d, CovMode::Full);
        assert_eq!(full[0].cov, Covariance::Full(vec![2.0, 2.0, 2.0, 2.0]));
    }

    #[test]
    fn single_sample_class_has_undefined_covariance() {
        let d = ds(2, vec![7.0, 7.0, 0.0, 0.0, 1.0, 1.0], vec![1, 0, 0], 2);
        let stats = compute_class_stats(&d, CovMode::Diagonal);
        let one = stats.iter().find(|s| s.class_id == 1).unwrap();
        assert_eq!(one.mean, vec![7.0, 7.0]);
        assert_eq!(one.count, 1);
        assert!(!one.cov_defined);
        assert_eq!(one.cov.values(), &[0.0, 0.0]);
    }

    #[test]
    fn empty_classes_are_skipped() {
        let d = ds(1, vec![1.0, 2.0], vec![0, 2], 3);
        let ids: Vec<_> = compute_class_stats(&d, CovMode::Diagonal)
            .iter()
            .map(|s| s.class_id)
            .collect();
        assert_eq!(ids, vec![0, 2]);
    }

    #[test]
    fn partition_boundary_is_strict() {
        let p = FrequencyPartition::from_counts(&[500, 20], 400);
        assert_eq!(p.common_ids, BTreeSet::from([0]));
        assert_eq!(p.rare_ids, BTreeSet::from([1]));

        let p = FrequencyPartition::from_counts(&[400], 400);
        assert!(p.is_rare(0));

        let p = FrequencyPartition::from_counts(&[1, 3, 0, 9], 0);
        assert_eq!(p.common_ids, BTreeSet::from([0, 1, 3]));
        assert!(p.rare_ids.is_empty());
    }
}
