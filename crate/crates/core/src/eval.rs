//! Prediction and balanced-accuracy reporting.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::EmbeddingDataset;
use crate::error::{Error, Result};
use crate::head::{self, HeadParams};
use crate::stats::FrequencyPartition;

/// Arg-max class per row; ties go to the lowest class index.
pub fn predict(p: &HeadParams, ds: &EmbeddingDataset) -> Result<Vec<usize>> {
    if ds.dim() != p.dim {
        return Err(Error::validation(format!(
            "dataset dim {} does not match head dim {}",
            ds.dim(),
            p.dim
        )));
    }
    Ok((0..ds.len())
        .into_par_iter()
        .map_init(
            || head::Scratch::new(p),
            |s, i| {
                head::forward_into(p, ds.row(i), s);
                head::argmax(s.logits())
            },
        )
        .collect())
}

fn confusion_matrix(preds: &[usize], labels: &[usize], n_classes: usize) -> Result<Vec<Vec<u64>>> {
    if preds.len() != labels.len() {
        return Err(Error::validation(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::validation("nothing to evaluate"));
    }
    let mut m = vec![vec![0u64; n_classes]; n_classes];
    for (&p, &l) in preds.iter().zip(labels) {
        if p >= n_classes || l >= n_classes {
            return Err(Error::validation(format!(
                "class index out of range ({p} or {l} >= {n_classes})"
            )));
        }
        m[l][p] += 1;
    }
    Ok(m)
}

fn recalls(confusion: &[Vec<u64>]) -> Vec<Option<f64>> {
    confusion
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let total: u64 = row.iter().sum();
            (total > 0).then(|| row[i] as f64 / total as f64)
        })
        .collect()
}

fn mean_defined<'a>(values: impl Iterator<Item = &'a Option<f64>>) -> Option<f64> {
    let (sum, n) = values
        .flatten()
        .fold((0.0, 0usize), |(s, n), &v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Mean per-class recall over the classes that occur in `labels`.
pub fn balanced_accuracy(preds: &[usize], labels: &[usize], n_classes: usize) -> Result<f64> {
    let m = confusion_matrix(preds, labels, n_classes)?;
    Ok(mean_defined(recalls(&m).iter()).expect("non-empty input has a present class"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub modality: Option<String>,
    pub balanced_accuracy: f64,
    /// Plain top-1 accuracy, reported alongside.
    pub raw_accuracy: f64,
    /// `None` for classes with no ground-truth rows.
    pub per_class_recall: Vec<Option<f64>>,
    /// Rows are ground truth, columns predictions.
    pub confusion: Vec<Vec<u64>>,
    pub common: Option<f64>,
    pub rare: Option<f64>,
    /// Classes left out of the average because the set has none of them.
    pub excluded_classes: Vec<usize>,
    #[serde(rename = "n")]
    pub n_evaluated: usize,
}

impl EvalReport {
    pub fn from_predictions(
        preds: &[usize],
        labels: &[usize],
        n_classes: usize,
        partition: Option<&FrequencyPartition>,
    ) -> Result<EvalReport> {
        let confusion = confusion_matrix(preds, labels, n_classes)?;
        let per_class_recall = recalls(&confusion);
        let balanced_accuracy = mean_defined(per_class_recall.iter()).unwrap();
        let correct: u64 = (0..n_classes).map(|i| confusion[i][i]).sum();
        let (common, rare) = match partition {
            Some(part) => (
                mean_defined(
                    part.common_ids
                        .iter()
                        .filter_map(|&i| per_class_recall.get(i)),
                ),
                mean_defined(
                    part.rare_ids
                        .iter()
                        .filter_map(|&i| per_class_recall.get(i)),
                ),
            ),
            None => (None, None),
        };
        Ok(EvalReport {
            modality: None,
            balanced_accuracy,
            raw_accuracy: correct as f64 / preds.len() as f64,
            excluded_classes: per_class_recall
                .iter()
                .enumerate()
                .filter(|(_, r)| r.is_none())
                .map(|(i, _)| i)
                .collect(),
            per_class_recall,
            confusion,
            common,
            rare,
            n_evaluated: preds.len(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Human-readable summary table.
    pub fn render(&self, class_names: &[String]) -> String {
        let mut out = String::new();
        let title = self.modality.as_deref().unwrap_or("evaluation");
        writeln!(out, "{title}: {} rows", self.n_evaluated).unwrap();
        writeln!(out, "  balanced accuracy  {:.4}", self.balanced_accuracy).unwrap();
        writeln!(out, "  raw accuracy       {:.4}", self.raw_accuracy).unwrap();
        if let Some(c) = self.common {
            writeln!(out, "  common classes     {c:.4}").unwrap();
        }
        if let Some(r) = self.rare {
            writeln!(out, "  rare classes       {r:.4}").unwrap();
        }
        let width = class_names
            .iter()
            .map(String::len)
            .max()
            .unwrap_or(5)
            .max(5);
        writeln!(out, "  {:<width$}  {:>6}  {:>6}", "class", "n", "recall").unwrap();
        for (i, recall) in self.per_class_recall.iter().enumerate() {
            let name = class_names.get(i).map(String::as_str).unwrap_or("?");
            let n: u64 = self.confusion[i].iter().sum();
            match recall {
                Some(r) => writeln!(out, "  {name:<width$}  {n:>6}  {r:>6.4}").unwrap(),
                None => writeln!(out, "  {name:<width$}  {n:>6}  {:>6}", "-").unwrap(),
            }
        }
        out
    }
}

/// Full report for one dataset; with a partition, recalls are also averaged
/// within the common and the rare classes.
pub fn evaluate(
    p: &HeadParams,
    ds: &EmbeddingDataset,
    partition: Option<&FrequencyPartition>,
) -> Result<EvalReport> {
    if ds.n_classes() > p.n_classes {
        return Err(Error::validation(format!(
            "dataset has {} classes, head predicts {}",
            ds.n_classes(),
            p.n_classes
        )));
    }
    let preds = predict(p, ds)?;
    let labels: Vec<usize> = ds.labels().iter().map(|&l| l as usize).collect();
    let mut report = EvalReport::from_predictions(&preds, &labels, p.n_classes, partition)?;
    report.modality = ds.modality().map(str::to_string);
    Ok(report)
}

/// One report per dataset. Every dataset must carry exactly the training
/// class table; nothing is remapped.
pub fn cross_modality_eval(
    p: &HeadParams,
    train_classes: &[String],
    datasets: &[EmbeddingDataset],
    partition: Option<&FrequencyPartition>,
) -> Result<Vec<EvalReport>> {
    datasets
        .iter()
        .enumerate()
        .map(|(i, ds)| {
            if ds.class_names() != train_classes {
                return Err(Error::validation(format!(
                    "dataset {i} ({}) has a class table that differs from the training set",
                    ds.modality().unwrap_or("unnamed modality")
                )));
            }
            evaluate(p, ds, partition)
        })
        .collect()
}
