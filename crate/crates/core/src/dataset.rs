//! In-memory embedding dataset model.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Whether the embeddings were extracted from the raw input or from a randomly
/// augmented copy of it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum View {
    Plain,
    AugmentedView,
}

impl View {
    pub fn as_byte(self) -> u8 {
        match self {
            View::Plain => 0,
            View::AugmentedView => 1,
        }
    }

    pub fn from_byte(b: u8) -> Option<View> {
        match b {
            0 => Some(View::Plain),
            1 => Some(View::AugmentedView),
            _ => None,
        }
    }
}

/// A labelled matrix of feature vectors.
///
/// Rows are stored contiguously (row-major, `len() * dim()` floats). The
/// constructor rejects anything that would violate the dataset invariants, so
/// every value of this type has finite features and in-range labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDataset {
    dim: usize,
    embeddings: Vec<f32>,
    labels: Vec<u32>,
    class_names: Vec<String>,
    view: View,
    meta: BTreeMap<String, String>,
}

impl EmbeddingDataset {
    pub fn new(
        dim: usize,
        embeddings: Vec<f32>,
        labels: Vec<u32>,
        class_names: Vec<String>,
        view: View,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::validation("dim must be positive"));
        }
        if embeddings.len() != labels.len() * dim {
            return Err(Error::validation(format!(
                "embedding matrix has {} values, expected {} rows x {} dims",
                embeddings.len(),
                labels.len(),
                dim
            )));
        }
        let n_classes = class_names.len();
        if let Some((i, &l)) = labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l as usize >= n_classes)
        {
            return Err(Error::validation(format!(
                "row {i} has label {l} but the class table has {n_classes} entries"
            )));
        }
        if let Some(pos) = embeddings.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(format!(
                "non-finite value at row {}, channel {}",
                pos / dim,
                pos % dim
            )));
        }
        Ok(EmbeddingDataset {
            dim,
            embeddings,
            labels,
            class_names,
            view,
            meta: BTreeMap::new(),
        })
    }

    pub fn with_meta(mut self, key: &str, value: &str) -> Self {
        self.meta.insert(key.to_string(), value.to_string());
        self
    }

    pub fn set_meta(&mut self, meta: BTreeMap<String, String>) {
        self.meta = meta;
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.embeddings[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.embeddings.chunks_exact(self.dim)
    }

    pub fn embeddings(&self) -> &[f32] {
        &self.embeddings
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn view(&self) -> View {
        self.view
    }

    pub fn meta(&self) -> &BTreeMap<String, String> {
        &self.meta
    }

    pub fn modality(&self) -> Option<&str> {
        self.meta.get("modality").map(String::as_str)
    }

    /// Number of rows per class, indexed by class id.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }

    /// Row indices grouped by class id, each list in ascending row order.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.n_classes()];
        for (i, &l) in self.labels.iter().enumerate() {
            groups[l as usize].push(i);
        }
        groups
    }

    /// Checks that `other` carries the same class table, name for name.
    pub fn check_same_classes(&self, other: &EmbeddingDataset) -> Result<()> {
        if self.class_names != other.class_names {
            return Err(Error::validation(format!(
                "class tables differ: {:?} vs {:?}",
                self.class_names, other.class_names
            )));
        }
        Ok(())
    }

    /// Stacks datasets sharing dim and class table; the view and metadata of
    /// the first part are kept.
    pub fn concat(parts: &[&EmbeddingDataset]) -> Result<EmbeddingDataset> {
        let first = parts
            .first()
            .ok_or_else(|| Error::validation("nothing to concatenate"))?;
        let mut embeddings = Vec::new();
        let mut labels = Vec::new();
        for p in parts {
            if p.dim != first.dim {
                return Err(Error::validation(format!(
                    "dimension mismatch: {} vs {}",
                    first.dim, p.dim
                )));
            }
            first.check_same_classes(p)?;
            embeddings.extend_from_slice(&p.embeddings);
            labels.extend_from_slice(&p.labels);
        }
        let mut out = EmbeddingDataset::new(
            first.dim,
            embeddings,
            labels,
            first.class_names.clone(),
            first.view,
        )?;
        out.meta = first.meta.clone();
        Ok(out)
    }
}
